from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

from contract_slide.core.model import RunStats
from contract_slide.services.engine import RunResult
from contract_slide.services.oracle import OracleResult

STAT_COLUMNS = (
    "n_i", "n_m", "n_mk", "n_o",
    "N_M", "N_C", "N_R",
    "fresh_map", "fresh_combine", "fresh_reduce",
    "hit_map", "hit_combine", "hit_reduce",
    "max_depth", "monotonic_violations",
)
CSV_COLUMNS = ("run", "mode", *STAT_COLUMNS, "memo_entries", "wall_seconds", "fresh_seconds")
TIMING_COLUMNS = frozenset({"wall_seconds", "fresh_seconds"})
TABLE_COLUMNS = (
    "run", "mode", "n_i", "n_m", "n_mk", "N_M", "N_C", "N_R",
    "fresh_map", "fresh_combine", "fresh_reduce", "wall_seconds",
)


@dataclass(frozen=True, slots=True)
class StatsRow:
    run: int
    mode: str
    stats: RunStats
    memo_entries: int
    wall_seconds: float
    fresh_seconds: float

    @classmethod
    def from_result(cls, run: int, mode: str, result: RunResult) -> StatsRow:
        return cls(
            run=run,
            mode=mode,
            stats=result.stats,
            memo_entries=result.store.entries if result.store else 0,
            wall_seconds=result.wall_seconds,
            fresh_seconds=result.fresh_report.total_seconds,
        )

    @classmethod
    def from_oracle(cls, run: int, mode: str, result: OracleResult) -> StatsRow:
        """Direct pipeline: every task is fresh and there is no combine tree."""
        stats = RunStats(
            n_i=result.n_i,
            n_m=result.n_m,
            n_mk=result.reduce_tasks,
            n_o=len(result.output),
            map_run=result.map_tasks,
            reduce_run=result.reduce_tasks,
        )
        return cls(run, mode, stats, 0, result.wall_seconds, result.wall_seconds)

    def as_dict(self) -> dict[str, object]:
        return {
            "run": self.run,
            "mode": self.mode,
            **self.stats.as_row(),
            "memo_entries": self.memo_entries,
            "wall_seconds": f"{self.wall_seconds:.6f}",
            "fresh_seconds": f"{self.fresh_seconds:.6f}",
        }


@dataclass(slots=True)
class StatsReport:
    """One row per run; the CSV form is the stable machine-readable contract."""

    rows: list[StatsRow] = field(default_factory=list)

    def add(self, row: StatsRow) -> StatsRow:
        self.rows.append(row)
        return row

    def write_csv(self, target: Path | str | TextIO) -> None:
        if isinstance(target, (str, Path)):
            path = Path(target)
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("w", encoding="utf-8", newline="") as stream:
                self._write(stream)
        else:
            self._write(target)

    def _write(self, stream: TextIO) -> None:
        writer = csv.DictWriter(stream, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row.as_dict())

    def to_csv(self) -> str:
        buffer = io.StringIO()
        self._write(buffer)
        return buffer.getvalue()

    def render_table(self) -> str:
        cells = [[str(row.as_dict()[column]) for column in TABLE_COLUMNS] for row in self.rows]
        widths = [
            max([len(column)] + [len(line[index]) for line in cells])
            for index, column in enumerate(TABLE_COLUMNS)
        ]
        lines = ["  ".join(column.rjust(width) for column, width in zip(TABLE_COLUMNS, widths))]
        lines.append("  ".join("-" * width for width in widths))
        for line in cells:
            lines.append("  ".join(cell.rjust(width) for cell, width in zip(line, widths)))
        return "\n".join(lines)
