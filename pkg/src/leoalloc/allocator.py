"""Global (reweighted l1) and distributed satellite-to-cell allocation."""

from __future__ import annotations

import csv
import heapq
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import MatchingConfig, SolverConfig, TimingConfig
from .linkbudget import HandoverModel, RateTable, handover_penalty, per_user_throughput
from .solver import (
    RelaxedAllocation,
    make_problem,
    solve_local,
    solve_relaxed_global,
)


@dataclass(frozen=True)
class AllocationMatrix:
    """Integer frame allocation for one slot, stored sparsely (non-zero entries only)."""

    slot_index: int
    sat: np.ndarray
    cell: np.ndarray
    frames: np.ndarray
    rho_min: np.ndarray

    @classmethod
    def empty(cls, slot_index: int = -1) -> AllocationMatrix:
        z = np.zeros(0, dtype=np.int64)
        return cls(slot_index, z, z, z, np.zeros(0))

    @property
    def serving(self) -> dict[int, int]:
        return {int(c): int(s) for s, c in zip(self.sat, self.cell)}

    def serving_array(self, n_cells: int) -> np.ndarray:
        out = np.full(n_cells, -1, dtype=np.int64)
        out[self.cell] = self.sat
        return out

    def frames_per_satellite(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for s, x in zip(self.sat, self.frames):
            out[int(s)] = out.get(int(s), 0) + int(x)
        return out

    def per_user_rates(self, users, timing: TimingConfig) -> np.ndarray:
        """Per-user throughput of each entry (bit/s)."""
        u = np.asarray(users, dtype=float)[self.cell]
        return per_user_throughput(self.frames, self.rho_min, u, timing)

    def check_feasible(self, cap: int, budget: int) -> None:
        """Raise AssertionError unless the box, budget and single-server rules hold."""
        assert np.all(self.frames >= 1) and np.all(self.frames <= cap), "box constraint violated"
        for s, tot in self.frames_per_satellite().items():
            assert tot <= budget, f"satellite {s} uses {tot} > {budget} frames"
        assert len(np.unique(self.cell)) == len(self.cell), "cell served by several satellites"

    def write_csv(self, path: str | Path, users, timing: TimingConfig) -> None:
        rates = self.per_user_rates(users, timing)
        order = np.argsort(self.cell, kind="stable")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "cell_id", "sat_id", "frames", "rho_min_bps", "per_user_bps"])
            for i in order:
                w.writerow([
                    self.slot_index, int(self.cell[i]), int(self.sat[i]), int(self.frames[i]),
                    f"{self.rho_min[i]:.6g}", f"{rates[i]:.6g}",
                ])


def pair_keys(sat, cell, n_cells: int) -> np.ndarray:
    return np.asarray(sat, dtype=np.int64) * n_cells + np.asarray(cell, dtype=np.int64)


def previous_frames(rates: RateTable, prev: AllocationMatrix | None, n_cells: int) -> np.ndarray:
    """Frames the previous slot gave to each pair of ``rates`` (0 when absent)."""
    out = np.zeros(len(rates), dtype=np.int64)
    if prev is None or len(prev.sat) == 0:
        return out
    pk = pair_keys(prev.sat, prev.cell, n_cells)
    rk = pair_keys(rates.sat, rates.cell, n_cells)
    order = np.argsort(pk)
    pos = np.searchsorted(pk, rk, sorter=order)
    pos = np.minimum(pos, len(pk) - 1)
    hit = pk[order[pos]] == rk
    out[hit] = prev.frames[order[pos[hit]]]
    return out


def slot_penalties(rates: RateTable, prev: AllocationMatrix | None, model: HandoverModel,
                   n_cells: int) -> np.ndarray:
    """Handover penalty per pair; all zero on the first slot (no history)."""
    if prev is None:
        return np.zeros(len(rates))
    return handover_penalty(previous_frames(rates, prev, n_cells), model)


def round_allocation(x) -> np.ndarray:
    """Round half up, element-wise."""
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)


def count_multi_served(cell, values, threshold: float = 0.0) -> int:
    """Cells holding more than one entry above ``threshold``."""
    cell = np.asarray(cell)
    pos = cell[np.asarray(values) > threshold]
    if len(pos) == 0:
        return 0
    _, counts = np.unique(pos, return_counts=True)
    return int(np.sum(counts > 1))


def adjust_allocation(
    sat, cell, X, x_hat, rho_min, penalties, budget: int, conflict_score: str = "penalized",
) -> np.ndarray:
    """Repair a rounded allocation so every constraint of the integer problem holds.

    Phase 1 keeps, for each cell served by several satellites, the one with
    the best score ``X * rho_min * (1 - h)`` (``X * rho_min * h`` with
    ``conflict_score="literal"``); ties go to the lowest satellite id.
    Phase 2 trims each over-budget satellite one frame at a time, always from
    the entry that most exceeds its relaxed value.
    """
    sat = np.asarray(sat)
    cell = np.asarray(cell)
    X = np.array(X, dtype=np.int64, copy=True)
    x_hat = np.asarray(x_hat, dtype=float)
    h = np.asarray(penalties, dtype=float)
    factor = h if conflict_score == "literal" else 1.0 - h
    score = X * np.asarray(rho_min, dtype=float) * factor

    pos = np.flatnonzero(X > 0)
    if len(pos):
        order = pos[np.lexsort((sat[pos], -score[pos], cell[pos]))]
        c_sorted = cell[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = c_sorted[1:] != c_sorted[:-1]
        X[order[~first]] = 0

    sats, sidx = np.unique(sat, return_inverse=True)
    totals = np.bincount(sidx, weights=X, minlength=len(sats))
    for k in range(len(sats)):
        excess = int(round(totals[k])) - budget
        if excess <= 0:
            continue
        idx = np.flatnonzero((sidx == k) & (X > 0))
        heap = [(-(X[i] - x_hat[i]), int(cell[i]), int(i)) for i in idx]
        heapq.heapify(heap)
        while excess > 0:
            _, c, i = heapq.heappop(heap)
            X[i] -= 1
            excess -= 1
            if X[i] > 0:
                heapq.heappush(heap, (-(X[i] - x_hat[i]), c, i))
    return X


@dataclass
class SlotResult:
    allocation: AllocationMatrix
    conflicts_pre_adjust: int
    uncovered_cells: np.ndarray
    runtime: float
    objectives: list = field(default_factory=list)
    kkt_residuals: list = field(default_factory=list)
    converged: bool = True
    solver_steps: int = 0
    relaxed: np.ndarray | None = None
    relaxed_multi_served: list = field(default_factory=list)
    solver_history: list = field(default_factory=list)  # (reweight, iter, objective, kkt, step)


def _uncovered(users, usable: RateTable) -> np.ndarray:
    populated = np.flatnonzero(np.asarray(users) > 0)
    return np.setdiff1d(populated, np.unique(usable.cell))


def _finish(slot, usable, X, rho):
    keep = X > 0
    return AllocationMatrix(slot, usable.sat[keep], usable.cell[keep], X[keep], rho[keep])


def resolve_beta(cfg: SolverConfig, prob) -> float:
    """Reweighting numerator for one slot's problem."""
    if cfg.beta is not None:
        return float(cfg.beta)
    if cfg.beta_rule == "median_users":
        return float(np.median(prob.users))
    return cfg.beta_price_fraction * float(prob.users.sum() / prob.budget.sum())


def global_allocate(
    rates: RateTable,
    users,
    prev: AllocationMatrix | None,
    timing: TimingConfig,
    cfg: SolverConfig | None = None,
    model: HandoverModel | None = None,
    conflict_score: str = "penalized",
    trace: bool = False,
) -> SlotResult:
    """Reweighted-l1 global allocation followed by rounding and repair."""
    cfg = cfg or SolverConfig()
    model = model or HandoverModel()
    t0 = time.perf_counter()
    users = np.asarray(users, dtype=float)
    n_cells = len(users)
    usable = rates.usable()
    usable = _restrict_to_populated(usable, users)
    uncovered = _uncovered(users, usable)
    if len(usable) == 0:
        return SlotResult(AllocationMatrix.empty(rates.slot_index), 0, uncovered,
                          time.perf_counter() - t0)

    h = slot_penalties(usable, prev, model, n_cells)
    rho = usable.rho_min
    u_pair = users[usable.cell]
    coef = timing.frame_duration / (timing.slot_duration * u_pair) * rho * (1.0 - h)
    cell_labels = np.unique(usable.cell)
    prob, order, _, _ = make_problem(
        usable.sat, usable.cell, coef, users[cell_labels],
        timing.frames_per_slot, timing.satellite_budget,
    )
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))

    beta = resolve_beta(cfg, prob)
    w = np.zeros(prob.n_pairs)
    x = None
    objectives, residuals, multi, history = [], [], [], []
    converged, steps = True, 0
    for _ in range(cfg.n_iter):
        res: RelaxedAllocation = solve_relaxed_global(prob, w, cfg, x0=x, trace=trace)
        x = res.values
        objectives.append(res.objective)
        residuals.append(res.kkt_residual)
        converged &= res.converged
        steps += res.steps
        multi.append(count_multi_served(prob.cell, x, 0.5))
        history.extend((len(objectives) - 1, *h) for h in res.history)
        w = beta / (cfg.tau + x)

    x_pairs = x[inv]
    X = round_allocation(x_pairs)
    conflicts = count_multi_served(usable.cell, X, 0)
    X = adjust_allocation(usable.sat, usable.cell, X, x_pairs, rho, h,
                          timing.satellite_budget, conflict_score)
    alloc = _finish(rates.slot_index, usable, X, rho)
    return SlotResult(
        allocation=alloc,
        conflicts_pre_adjust=conflicts,
        uncovered_cells=uncovered,
        runtime=time.perf_counter() - t0,
        objectives=objectives,
        kkt_residuals=residuals,
        converged=converged,
        solver_steps=steps,
        relaxed=x_pairs,
        relaxed_multi_served=multi,
        solver_history=history,
    )


def _restrict_to_populated(rates: RateTable, users) -> RateTable:
    keep = np.asarray(users)[rates.cell] > 0
    if keep.all():
        return rates
    return RateTable(rates.slot_index, rates.sat[keep], rates.cell[keep], rates.distance[keep],
                     rates.rho[keep], rates.rho_next[keep], rates.visible_sats)


def matching_weights(rates: RateTable, users, penalties, cfg: MatchingConfig) -> np.ndarray:
    rho = rates.rho_min
    if cfg.weight_rule == "raw_rate":
        return rho
    w = rho * (1.0 - penalties)
    if cfg.weight_rule == "rate_per_user":
        # crude load proxy: users a satellite could reach
        _, sidx = np.unique(rates.sat, return_inverse=True)
        load = np.bincount(sidx, weights=np.asarray(users)[rates.cell])
        w = w / load[sidx]
    return w


def match_cells(
    rates: RateTable,
    users,
    prev: AllocationMatrix | None,
    model: HandoverModel | None = None,
    cfg: MatchingConfig | None = None,
) -> dict[int, np.ndarray]:
    """Assign each covered populated cell to its best-weight satellite.

    Returns ``{sat_id: cell ids}``; ties go to the lowest satellite id.
    """
    cfg = cfg or MatchingConfig()
    model = model or HandoverModel()
    users = np.asarray(users, dtype=float)
    usable = _restrict_to_populated(rates.usable(), users)
    if len(usable) == 0:
        return {}
    h = slot_penalties(usable, prev, model, len(users))
    wts = matching_weights(usable, users, h, cfg)
    order = np.lexsort((usable.sat, -wts, usable.cell))
    c_sorted = usable.cell[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = c_sorted[1:] != c_sorted[:-1]
    best = order[first]
    groups: dict[int, list] = {}
    for s, c in zip(usable.sat[best], usable.cell[best]):
        groups.setdefault(int(s), []).append(int(c))
    return {s: np.array(sorted(cs), dtype=np.int64) for s, cs in sorted(groups.items())}


def distributed_allocate(
    rates: RateTable,
    users,
    prev: AllocationMatrix | None,
    timing: TimingConfig,
    model: HandoverModel | None = None,
    cfg: MatchingConfig | None = None,
    conflict_score: str = "penalized",
) -> SlotResult:
    """Matching, then per-satellite capped water-filling, rounding and repair."""
    model = model or HandoverModel()
    t0 = time.perf_counter()
    users = np.asarray(users, dtype=float)
    n_cells = len(users)
    usable = _restrict_to_populated(rates.usable(), users)
    uncovered = _uncovered(users, usable)
    groups = match_cells(rates, users, prev, model, cfg)
    if not groups:
        return SlotResult(AllocationMatrix.empty(rates.slot_index), 0, uncovered,
                          time.perf_counter() - t0)

    sats, cells = [], []
    x_hat = []
    for s, cs in groups.items():
        sats.append(np.full(len(cs), s))
        cells.append(cs)
        x_hat.append(solve_local(users[cs], timing.frames_per_slot, timing.satellite_budget))
    sat = np.concatenate(sats)
    cell = np.concatenate(cells)
    x_hat = np.concatenate(x_hat)

    # look up rho_min / penalties of the matched pairs
    keys = pair_keys(usable.sat, usable.cell, n_cells)
    order = np.argsort(keys)
    idx = order[np.searchsorted(keys, pair_keys(sat, cell, n_cells), sorter=order)]
    rho = usable.rho_min[idx]
    h = slot_penalties(usable, prev, model, n_cells)[idx]

    X = round_allocation(x_hat)
    conflicts = count_multi_served(cell, X, 0)
    X = adjust_allocation(sat, cell, X, x_hat, rho, h, timing.satellite_budget, conflict_score)
    keep = X > 0
    alloc = AllocationMatrix(rates.slot_index, sat[keep], cell[keep], X[keep], rho[keep])
    return SlotResult(
        allocation=alloc,
        conflicts_pre_adjust=conflicts,
        uncovered_cells=uncovered,
        runtime=time.perf_counter() - t0,
        relaxed=x_hat,
    )


def allocation_objective(alloc: AllocationMatrix, rates: RateTable, users, prev,
                         model: HandoverModel, timing: TimingConfig) -> float:
    """Proportional-fair objective of an integer allocation (natural log).

    Sums over populated cells that have at least one usable link; a covered
    cell left without frames contributes ``-inf``.
    """
    users = np.asarray(users, dtype=float)
    usable = _restrict_to_populated(rates.usable(), users)
    covered = np.unique(usable.cell)
    h = slot_penalties(usable, prev, model, len(users))
    keys = pair_keys(usable.sat, usable.cell, len(users))
    lookup = dict(zip(keys.tolist(), h.tolist()))
    y = np.zeros(len(users))
    rates_user = alloc.per_user_rates(users, timing)
    for s, c, r in zip(alloc.sat, alloc.cell, rates_user):
        y[c] += r * (1.0 - lookup[int(s) * len(users) + int(c)])
    with np.errstate(divide="ignore"):
        return float(np.sum(users[covered] * np.log(y[covered])))
