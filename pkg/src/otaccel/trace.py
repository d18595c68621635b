"""Per-iteration convergence records and their CSV form."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

TRACE_COLUMNS = ("iter", "seconds", "dual", "feas_l1", "gap", "L", "A")


@dataclass
class TraceRow:
    iteration: int
    seconds: float
    value: float
    feasibility: float = math.nan
    gap: float = math.nan
    L: float = math.nan
    A: float = 0.0
    grad_sqnorm: float = math.nan
    consistency: float = math.nan  # barycenter column agreement, not exported

    def as_tuple(self):
        return (self.iteration, self.seconds, self.value, self.feasibility,
                self.gap, self.L, self.A)


@dataclass
class ConvergenceTrace:
    """Rows of (iteration, elapsed, objective/dual value, certificates, L, A).

    ``value`` is the objective for generic runs and the dual value for
    primal-dual runs; ``status`` says why the run stopped.
    """

    rows: list[TraceRow] = field(default_factory=list)
    status: str = "running"
    final_state: object = None

    def append(self, row: TraceRow) -> None:
        if self.rows:
            last = self.rows[-1]
            if row.iteration <= last.iteration:
                raise ValueError("trace iterations must strictly increase")
            if row.seconds < last.seconds:
                row.seconds = last.seconds
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    @property
    def last(self) -> TraceRow:
        return self.rows[-1]

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.rows]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.rows:
            w.writerow([r.iteration] + [repr(float(x)) for x in r.as_tuple()[1:]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text
