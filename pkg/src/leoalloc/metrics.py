"""Per-slot and episode performance measures."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .allocator import AllocationMatrix
from .config import TimingConfig


@dataclass(frozen=True)
class SlotMetrics:
    slot_index: int
    avg_user_throughput: float
    jain_index: float
    handovers: int
    conflicting_cells_pre_adjust: int
    uncovered_populated_cells: int
    solver_runtime: float
    service_gaps: int = 0
    first_acquisitions: int = 0
    kkt_residual: float = 0.0  # worst over reweighting rounds (global only)
    solver_converged: bool = True
    relaxed_multi_served: tuple = ()  # per reweighting round, entries > 0.5 frames


def cell_user_rates(alloc: AllocationMatrix, users, timing: TimingConfig) -> np.ndarray:
    """Per-user rate of every cell (0 for cells without service)."""
    users = np.asarray(users, dtype=float)
    r = np.zeros(len(users))
    if len(alloc.cell):
        r[alloc.cell] = alloc.per_user_rates(users, timing)
    return r


def jain_from_rates(rates, users) -> tuple[float, bool]:
    """User-weighted Jain index over cells with users; returns (index, degenerate)."""
    u = np.asarray(users, dtype=float)
    r = np.asarray(rates, dtype=float)
    m = u > 0
    u, r = u[m], r[m]
    if u.sum() <= 0:
        raise ValueError("Jain index needs at least one user")
    num = np.dot(u, r) ** 2
    den = u.sum() * np.dot(u, r * r)
    if den == 0:
        return 0.0, True
    return float(num / den), False


def jain_index(alloc: AllocationMatrix, users, timing: TimingConfig) -> float:
    return jain_from_rates(cell_user_rates(alloc, users, timing), users)[0]


def average_from_rates(rates, users) -> float:
    u = np.asarray(users, dtype=float)
    if u.sum() <= 0:
        raise ValueError("average throughput needs at least one user")
    return float(np.dot(u, rates) / u.sum())


def average_user_throughput(alloc: AllocationMatrix, users, timing: TimingConfig) -> float:
    return average_from_rates(cell_user_rates(alloc, users, timing), users)


@dataclass(frozen=True)
class HandoverTally:
    handovers: int
    service_gaps: int
    first_acquisitions: int


def tally_handovers(prev: AllocationMatrix | None, cur: AllocationMatrix) -> HandoverTally:
    """Serving-satellite changes between consecutive slots.

    A handover needs a serving satellite in both slots and a change between
    them; losing service is a gap, gaining it from nothing an acquisition.
    """
    if prev is None:
        return HandoverTally(0, 0, len(cur.cell))
    if prev.slot_index >= 0 and cur.slot_index != prev.slot_index + 1:
        raise ValueError(f"slots {prev.slot_index} and {cur.slot_index} are not consecutive")
    a, b = prev.serving, cur.serving
    ho = sum(1 for c, s in b.items() if c in a and a[c] != s)
    gaps = sum(1 for c in a if c not in b)
    first = sum(1 for c in b if c not in a)
    return HandoverTally(ho, gaps, first)


def count_handovers(prev: AllocationMatrix | None, cur: AllocationMatrix) -> int:
    return tally_handovers(prev, cur).handovers


def count_conflicts(cell, values) -> int:
    """Cells receiving a positive allocation from two or more satellites."""
    cell = np.asarray(cell)
    pos = cell[np.asarray(values) > 0]
    if len(pos) == 0:
        return 0
    _, counts = np.unique(pos, return_counts=True)
    return int(np.sum(counts > 1))


REPORT_COLUMNS = ["slot", "avg_bps", "jain", "handovers", "conflicts", "uncovered", "solver_s"]


@dataclass
class EpisodeReport:
    slots: list[SlotMetrics] = field(default_factory=list)
    fingerprint: str = ""
    algorithm: str = ""
    cell_rate_sum: np.ndarray | None = None  # per-cell sum of per-user rate over slots
    allocations: list | None = None  # kept only on request
    results: list | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(m, name) for m in self.slots])

    def aggregates(self) -> dict:
        out = {}
        for name in ("avg_user_throughput", "jain_index", "handovers",
                     "conflicting_cells_pre_adjust", "uncovered_populated_cells",
                     "solver_runtime", "kkt_residual"):
            v = self.column(name).astype(float)
            if len(v) == 0:
                continue
            q1, med, q3 = np.percentile(v, [25, 50, 75])
            out[name] = {
                "mean": float(v.mean()), "median": float(med),
                "q1": float(q1), "q3": float(q3),
                "min": float(v.min()), "max": float(v.max()),
            }
        out["total_handovers"] = int(self.column("handovers").sum()) if self.slots else 0
        return out

    def mean_cell_rates(self) -> np.ndarray | None:
        if self.cell_rate_sum is None or not self.slots:
            return None
        return self.cell_rate_sum / len(self.slots)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for m in self.slots:
                w.writerow([
                    m.slot_index, f"{m.avg_user_throughput:.6g}", f"{m.jain_index:.8f}",
                    m.handovers, m.conflicting_cells_pre_adjust,
                    m.uncovered_populated_cells, f"{m.solver_runtime:.4f}",
                ])

    def summary(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "algorithm": self.algorithm,
            "num_slots": len(self.slots),
            "aggregates": self.aggregates(),
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")

    def to_records(self) -> list[dict]:
        return [asdict(m) for m in self.slots]
