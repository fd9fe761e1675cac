"""Training trace shared by the linear and ReLU trainers."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

TRACE_COLUMNS = ("step", "base_loss", "st_loss", "test_error", "grad_norm")


@dataclass
class TrainTrace:
    """Per-evaluation records of (step, base_loss, st_loss, test_error, grad_norm)."""

    records: list[tuple] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def add(self, step: int, base_loss: float, st_loss: float, test_error: float, grad_norm: float):
        if self.records and step <= self.records[-1][0]:
            raise ValueError(f"steps must be strictly increasing, got {step} after {self.records[-1][0]}")
        self.records.append((step, float(base_loss), float(st_loss), float(test_error), float(grad_norm)))

    @property
    def steps(self) -> list[int]:
        return [r[0] for r in self.records]

    def column(self, name: str) -> list[float]:
        return [r[TRACE_COLUMNS.index(name)] for r in self.records]

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for rec in self.records:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in rec])
