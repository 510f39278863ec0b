from __future__ import annotations


class ContractSlideError(RuntimeError):
    """Root of every error raised by the engine and its collaborators."""


class EncodingError(ContractSlideError):
    """Raised when canonical bytes cannot be decoded."""
