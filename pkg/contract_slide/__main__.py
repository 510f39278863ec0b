import sys

from contract_slide.main import main

sys.exit(main())
