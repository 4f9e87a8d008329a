"""Episode orchestration: geometry -> rates -> allocation -> metrics -> artifacts."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import orbital
from .allocator import AllocationMatrix, distributed_allocate, global_allocate
from .config import ScenarioConfig
from .geodata import CellGrid, build_grid, load_population, synthesize_population, write_esri_ascii
from .linkbudget import HandoverModel, RateTable, nominal_rate
from .metrics import (
    EpisodeReport,
    SlotMetrics,
    average_from_rates,
    cell_user_rates,
    jain_from_rates,
    tally_handovers,
)

log = logging.getLogger(__name__)


class SlotError(RuntimeError):
    def __init__(self, slot: int, cause: BaseException):
        super().__init__(f"slot {slot}: {type(cause).__name__}: {cause}")
        self.slot = slot
        self.cause = cause


@dataclass
class Scenario:
    """The static world of an episode: grid with users plus the constellation."""

    cfg: ScenarioConfig
    grid: CellGrid
    elements: orbital.OrbitalElements
    populated: np.ndarray
    points: np.ndarray  # (n_populated, 5, 3) centre + corners

    @property
    def users(self) -> np.ndarray:
        return self.grid.active_users

    @property
    def service_area(self):
        if self.cfg.visibility_rule != "service_area":
            return None
        g = self.cfg.grid
        return (g.lat_min, g.lat_max, g.lon_min, g.lon_max)


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    grid = build_grid(cfg.grid, alpha=cfg.alpha)
    if cfg.population.raster is not None:
        grid = load_population(grid, cfg.population.raster, alpha=cfg.alpha)
    else:
        grid = synthesize_population(grid, cfg.seed, cfg.population.model, **cfg.population.params)
        grid = grid.with_alpha(cfg.alpha)
    populated = grid.populated_ids
    R = cfg.constellation.earth_radius
    points = orbital.cell_points(grid.center_lat[populated], grid.center_lon[populated],
                                 cfg.grid.resolution / 2.0, R)
    return Scenario(cfg, grid, orbital.build_constellation(cfg.constellation), populated, points)


@dataclass
class _Edge:
    positions: np.ndarray
    visible: np.ndarray
    rows: dict = field(default_factory=dict)  # flat id -> (elevation, max distance) over populated cells


class GeometryCache:
    """Slot-edge geometry and per-slot rate tables.

    Edge ``k`` (time ``kT``) is the end of slot ``k-1`` and the start of slot
    ``k``; its satellite rows are computed once and reused by both.
    """

    def __init__(self, scn: Scenario, keep_tables: bool = True):
        self.scn = scn
        self.keep_tables = keep_tables
        self._edges: dict[int, _Edge] = {}
        self._tables: dict[int, RateTable] = {}

    def edge(self, k: int) -> _Edge:
        e = self._edges.get(k)
        if e is None:
            scn = self.scn
            cfg = scn.cfg
            pos = orbital.propagate(scn.elements, k * cfg.timing.slot_duration)
            vis = orbital.visible_satellites(pos, scn.grid, cfg.elevation_mask,
                                             cfg.constellation.earth_radius, scn.service_area)
            e = _Edge(pos, vis)
            self._edges[k] = e
            for old in [j for j in self._edges if j < k - 1]:
                del self._edges[old]
        return e

    def _rows(self, k: int, sats: np.ndarray):
        e = self.edge(k)
        missing = [int(s) for s in sats if int(s) not in e.rows]
        if missing:
            scn = self.scn
            R = scn.cfg.constellation.earth_radius
            pos = e.positions[missing]
            el = orbital.elevation_matrix(pos, scn.grid.center_lat[scn.populated],
                                          scn.grid.center_lon[scn.populated], R)
            for j, s in enumerate(missing):
                d = orbital.max_distance_to_cell(pos[j], scn.points)
                e.rows[s] = (el[j], d)
        el = np.array([e.rows[int(s)][0] for s in sats]).reshape(len(sats), -1)
        d = np.array([e.rows[int(s)][1] for s in sats]).reshape(len(sats), -1)
        return el, d

    def rate_table(self, k: int) -> RateTable:
        t = self._tables.get(k)
        if t is not None:
            return t
        scn = self.scn
        cfg = scn.cfg
        sats = self.edge(k).visible
        mask = cfg.elevation_mask
        el0, d0 = self._rows(k, sats)
        el1, d1 = self._rows(k + 1, sats)
        si, ci = np.nonzero(el0 >= mask)
        dist = d0[si, ci]
        rho = nominal_rate(dist, cfg.link)
        rho_next = np.where(el1[si, ci] >= mask, nominal_rate(d1[si, ci], cfg.link), 0.0)
        t = RateTable(
            slot_index=k,
            sat=sats[si].astype(np.int64),
            cell=scn.populated[ci].astype(np.int64),
            distance=dist,
            rho=rho,
            rho_next=rho_next,
            visible_sats=sats,
        )
        if self.keep_tables:
            self._tables[k] = t
        return t


def _allocate(cfg: ScenarioConfig, rates, users, prev, timing, trace=False):
    model = HandoverModel(cfg.handover_cost)
    if cfg.algorithm == "global":
        return global_allocate(rates, users, prev, timing, cfg.solver, model,
                               cfg.conflict_score, trace=trace)
    return distributed_allocate(rates, users, prev, timing, model, cfg.matching, cfg.conflict_score)


def run_episode(
    cfg: ScenarioConfig,
    out_dir: str | Path | None = None,
    scenario: Scenario | None = None,
    cache: GeometryCache | None = None,
    num_slots: int | None = None,
    keep_allocations: bool = False,
    solver_log: bool = False,
) -> EpisodeReport:
    """Simulate ``K`` consecutive slots and optionally write every artifact.

    Output layout under ``out_dir``: ``report.csv``, ``summary.json``,
    ``alloc/slot_####.csv`` and ``heatmap_{algorithm}.asc`` / ``.csv``; with
    ``solver_log`` also ``solver/slot_####.csv`` (per-iteration diagnostics).
    """
    scn = scenario or build_scenario(cfg)
    cache = cache or GeometryCache(scn)
    timing = cfg.timing
    users = scn.users
    K = timing.num_slots if num_slots is None else num_slots
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "alloc").mkdir(parents=True, exist_ok=True)

    report = EpisodeReport(fingerprint=cfg.fingerprint(), algorithm=cfg.algorithm,
                           cell_rate_sum=np.zeros(scn.grid.n_cells),
                           allocations=[] if keep_allocations else None,
                           results=[] if keep_allocations else None)
    prev: AllocationMatrix | None = None
    for k in range(K):
        try:
            rates = cache.rate_table(k)
            res = _allocate(cfg, rates, users, prev, timing, trace=solver_log)
            alloc = res.allocation
            alloc.check_feasible(timing.frames_per_slot, timing.satellite_budget)
        except Exception as exc:
            raise SlotError(k, exc) from exc
        r = cell_user_rates(alloc, users, timing)
        jain, _ = jain_from_rates(r, users)
        tally = tally_handovers(prev, alloc)
        m = SlotMetrics(
            slot_index=k,
            avg_user_throughput=average_from_rates(r, users),
            jain_index=jain,
            handovers=tally.handovers,
            conflicting_cells_pre_adjust=res.conflicts_pre_adjust,
            uncovered_populated_cells=len(res.uncovered_cells),
            solver_runtime=res.runtime,
            service_gaps=tally.service_gaps,
            first_acquisitions=tally.first_acquisitions,
            kkt_residual=max(res.kkt_residuals, default=0.0),
            solver_converged=res.converged,
            relaxed_multi_served=tuple(res.relaxed_multi_served),
        )
        report.slots.append(m)
        report.cell_rate_sum += r
        if keep_allocations:
            report.allocations.append(alloc)
            report.results.append(res)
        if out is not None:
            alloc.write_csv(out / "alloc" / f"slot_{k:04d}.csv", users, timing)
            if solver_log:
                write_solver_log(out / "solver" / f"slot_{k:04d}.csv", res.solver_history)
        log.info("slot %d %s: avg %.3g bit/s, jain %.3f, handovers %d, conflicts %d, %.2fs",
                 k, cfg.algorithm, m.avg_user_throughput, m.jain_index, m.handovers,
                 m.conflicting_cells_pre_adjust, m.solver_runtime)
        prev = alloc

    if out is not None:
        report.write_csv(out / "report.csv")
        report.write_json(out / "summary.json")
        export_throughput_heatmap(report, scn.grid, out / f"heatmap_{cfg.algorithm}.asc")
    return report


def write_solver_log(path: Path, history) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["reweight", "iter", "objective", "kkt_residual", "step_size"])
        for r, it, f, res, alpha in history:
            w.writerow([r, it, f"{f:.12g}", f"{res:.6g}", f"{alpha:.6g}"])


def export_throughput_heatmap(report: EpisodeReport, grid: CellGrid, path: str | Path) -> np.ndarray:
    """Mean per-user throughput per cell as an ESRI ASCII grid plus a CSV twin.

    Unpopulated cells are written as NODATA. Returns the per-cell values.
    """
    path = Path(path)
    values = report.mean_cell_rates()
    if values is None:
        values = np.zeros(grid.n_cells)
    values = np.where(grid.active_users > 0, values, np.nan)
    write_esri_ascii(path, grid, values)
    with open(path.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "lat", "lon", "active_users", "mean_user_bps"])
        for i in range(grid.n_cells):
            v = values[i]
            w.writerow([i, f"{grid.center_lat[i]:.4f}", f"{grid.center_lon[i]:.4f}",
                        f"{grid.active_users[i]:.6g}", "" if np.isnan(v) else f"{v:.6g}"])
    return values


SWEEPABLE = {"h_cost": "handover_cost", "n_iter": "solver.n_iter"}


def sweep(
    cfg: ScenarioConfig,
    parameter: str,
    values,
    out_dir: str | Path | None = None,
    scenario: Scenario | None = None,
    cache: GeometryCache | None = None,
    num_slots: int | None = None,
) -> list[tuple[object, EpisodeReport]]:
    """One episode per value, sharing the geometry cache; writes ``sweep.csv``."""
    if parameter not in SWEEPABLE:
        raise ValueError(f"cannot sweep {parameter!r}; choose from {sorted(SWEEPABLE)}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    scn = scenario or build_scenario(cfg)
    cache = cache or GeometryCache(scn)
    key = SWEEPABLE[parameter]
    out = Path(out_dir) if out_dir is not None else None
    results = []
    for v in values:
        v = int(v) if parameter == "n_iter" else float(v)
        run_cfg = cfg.with_overrides(**{key: v})
        sub = out / f"{parameter}_{v}" if out is not None else None
        results.append((v, run_episode(run_cfg, sub, scn, cache, num_slots)))
    if out is not None:
        write_sweep_table(out / "sweep.csv", parameter, results)
    return results


def write_sweep_table(path, parameter, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([parameter, "algorithm", "mean_avg_bps", "mean_jain", "min_jain",
                    "total_handovers", "mean_conflicts", "mean_solver_s"])
        for v, rep in results:
            agg = rep.aggregates()
            w.writerow([v, rep.algorithm, f"{agg['avg_user_throughput']['mean']:.6g}",
                        f"{agg['jain_index']['mean']:.6f}", f"{agg['jain_index']['min']:.6f}",
                        agg["total_handovers"],
                        f"{agg['conflicting_cells_pre_adjust']['mean']:.3f}",
                        f"{agg['solver_runtime']['mean']:.4f}"])


def inspect_slot(cfg: ScenarioConfig, k: int, scenario: Scenario | None = None) -> dict:
    """Visible-set size and rate-table statistics of slot ``k``."""
    scn = scenario or build_scenario(cfg)
    cache = GeometryCache(scn, keep_tables=False)
    t = cache.rate_table(k)
    usable = t.usable()
    rm = usable.rho_min
    covered = np.unique(usable.cell)
    per_cell = np.bincount(np.searchsorted(covered, usable.cell)) if len(covered) else np.zeros(1)
    return {
        "slot": k,
        "visible_satellites": int(len(t.visible_sats)),
        "populated_cells": int(len(scn.populated)),
        "total_active_users": float(scn.users.sum()),
        "pairs": int(len(t)),
        "usable_pairs": int(len(usable)),
        "uncovered_populated_cells": int(len(scn.populated) - len(covered)),
        "sats_per_cell_mean": float(per_cell.mean()),
        "rho_min_bps": {
            "min": float(rm.min()) if len(rm) else 0.0,
            "median": float(np.median(rm)) if len(rm) else 0.0,
            "max": float(rm.max()) if len(rm) else 0.0,
        },
    }


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
