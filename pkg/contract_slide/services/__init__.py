from .contraction_tree import (
    ContractionTree,
    DirtySet,
    TreeMode,
    append_fold,
    build_append,
    build_fixed,
    build_variable,
    propagate,
)
from .engine import (
    AppendChunk,
    DeleteChunk,
    Job,
    ReplaceChunk,
    RunResult,
    SlideBucket,
    SlideEngine,
    UpdateDelta,
)
from .oracle import OracleResult, scratch_run
from .udf import CombineFn, MapFn, ReduceFn, Workload
from .workloads import builtin_workload

__all__ = [
    "AppendChunk",
    "CombineFn",
    "ContractionTree",
    "DeleteChunk",
    "DirtySet",
    "Job",
    "MapFn",
    "OracleResult",
    "ReduceFn",
    "ReplaceChunk",
    "RunResult",
    "SlideBucket",
    "SlideEngine",
    "TreeMode",
    "UpdateDelta",
    "Workload",
    "append_fold",
    "build_append",
    "build_fixed",
    "build_variable",
    "builtin_workload",
    "propagate",
]
