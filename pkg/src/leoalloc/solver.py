"""Relaxed proportional-fair allocation solvers.

The global relaxed problem, over pairs ``i = (s, c)``::

    maximize   sum_c U_c log(sum_{i in c} a_i x_i) - sum_i w_i x_i
    subject to 0 <= x_i <= N_T,   sum_{i in s} x_i <= budget_s

where ``a_i`` is the (penalized) per-user rate delivered by one frame. The
feasible set is a product over satellites of capped scaled simplices, so it
admits a cheap exact projection. We run projected gradient ascent in a
diagonal metric that matches the local curvature of the log terms (the plain
Euclidean metric is hopeless here: curvature scales like ``1/U_c`` and the
user counts span several decades), with Armijo backtracking along the
projection arc, and certify the result with a KKT residual.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, SolverConfig

log = logging.getLogger(__name__)

EPS_RATE = 1e-12  # rate floor in the gradient of a starved cell
_ARMIJO = 1e-4
_METRIC_MIX = 0.1
_SCREEN_RELATIVE = 3e-3  # coarse tolerance of the all-pairs phase
_SCREEN_MARGIN = 10.0  # keep pairs within this many coarse tolerances of their price
_SCREEN_ROUNDS = 5
_POLISH_ROUNDS = 4
_SUPPORT_RELATIVE = 3e-5  # first-order target before the first Newton polish


@dataclass(frozen=True)
class Problem:
    """Pairs sorted by satellite then cell; ``sat``/``cell`` are local indices."""

    sat: np.ndarray
    cell: np.ndarray
    coef: np.ndarray
    users: np.ndarray
    cap: float
    budget: np.ndarray

    @property
    def n_pairs(self) -> int:
        return len(self.sat)

    @property
    def n_sats(self) -> int:
        return len(self.budget)

    @property
    def n_cells(self) -> int:
        return len(self.users)

    @property
    def sat_starts(self) -> np.ndarray:
        return self._starts

    def __post_init__(self):
        counts = np.bincount(self.sat, minlength=self.n_sats)
        object.__setattr__(self, "_starts", np.concatenate([[0], np.cumsum(counts)[:-1]]))
        object.__setattr__(self, "_sat_counts", counts)


def make_problem(sat, cell, coef, users, cap, budget) -> Problem:
    """Build a :class:`Problem`, relabelling satellites/cells to dense indices.

    Returns the problem plus the permutation applied to the pair arrays and the
    original satellite / cell labels, so callers can map results back.
    """
    sat = np.asarray(sat)
    cell = np.asarray(cell)
    coef = np.asarray(coef, dtype=float)
    if cap <= 0 or np.any(np.asarray(budget) <= 0):
        raise ConfigError("frame budget N_T * N_B and cap N_T must be positive")
    sat_labels, sat_idx = np.unique(sat, return_inverse=True)
    cell_labels, cell_idx = np.unique(cell, return_inverse=True)
    order = np.lexsort((cell_idx, sat_idx))
    users = np.asarray(users, dtype=float)
    if users.shape != (len(cell_labels),):
        raise ValueError("users must have one entry per distinct cell label (sorted)")
    if np.any(users <= 0):
        raise ValueError("every cell in the problem needs a positive user count")
    if np.any(coef <= 0):
        raise ValueError("every pair needs a positive rate coefficient")
    budget = np.broadcast_to(np.asarray(budget, dtype=float), (len(sat_labels),)).copy()
    prob = Problem(
        sat=sat_idx[order], cell=cell_idx[order], coef=coef[order],
        users=users, cap=float(cap), budget=budget,
    )
    return prob, order, sat_labels, cell_labels


def cell_rates(prob: Problem, x: np.ndarray) -> np.ndarray:
    return np.bincount(prob.cell, weights=prob.coef * x, minlength=prob.n_cells)


def objective(prob: Problem, x: np.ndarray, w=None, eps: float = 0.0) -> float:
    y = cell_rates(prob, x)
    if eps > 0:
        y = np.maximum(y, eps)
    with np.errstate(divide="ignore"):
        val = float(np.dot(prob.users, np.log(y)))
    if w is not None:
        val -= float(np.dot(w, x))
    return val


def objective_change(prob: Problem, x_from: np.ndarray, x_to: np.ndarray, w=None) -> float:
    """``objective(x_to) - objective(x_from)`` without cancellation in the large totals."""
    y0 = cell_rates(prob, x_from)
    y1 = cell_rates(prob, x_to)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(y0 > 0, (y1 - y0) / y0, np.where(y1 > 0, np.inf, 0.0))
        val = float(np.dot(prob.users, np.log1p(rel)))
    if w is not None:
        val -= float(np.dot(w, x_to - x_from))
    return val


def gradient(prob: Problem, x: np.ndarray, w=None, y=None) -> np.ndarray:
    if y is None:
        y = cell_rates(prob, x)
    g = prob.users[prob.cell] * prob.coef / np.maximum(y[prob.cell], EPS_RATE)
    if w is not None:
        g = g - w
    return g


# -- projection ---------------------------------------------------------------

def project(prob: Problem, z: np.ndarray, metric=None, nu0=None, max_iter: int = 100):
    """Project ``z`` onto the box+budget set in the metric ``diag(metric)^-1``.

    ``metric=None`` gives the Euclidean projection. Per satellite the solution
    is ``clip(z - metric * nu, 0, cap)`` with ``nu >= 0`` the budget multiplier,
    found by safeguarded Newton on the piecewise-linear budget equation
    (``nu0`` warm-starts it). Returns ``(x, nu)``.
    """
    n_s, cap, s = prob.n_sats, prob.cap, prob.sat
    d = np.ones_like(z) if metric is None else metric
    t0 = np.clip(z, 0.0, cap)
    total = np.bincount(s, weights=t0, minlength=n_s)
    active = total > prob.budget
    if not active.any():
        return t0, np.zeros(n_s)

    lo = np.zeros(n_s)
    hi = np.full(n_s, np.inf)
    nu = np.zeros(n_s) if nu0 is None else np.where(active, np.maximum(nu0, 0.0), 0.0)
    tol = 1e-13 * prob.budget
    for _ in range(max_iter):
        r = z - d * nu[s]
        xi = np.clip(r, 0.0, cap)
        phi = np.bincount(s, weights=xi, minlength=n_s)
        err = phi - prob.budget
        done = ~active | (np.abs(err) <= tol)
        if done.all():
            break
        free = (r > 0) & (r < cap)
        slope = np.bincount(s, weights=d * free, minlength=n_s)
        lo = np.where(active & (err > 0), nu, lo)
        hi = np.where(active & (err < 0), nu, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = nu + err / slope
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        if np.any(bad & ~done & np.isinf(hi)):
            # phi(nu) = 0 beyond max z/d, which bounds the root
            top = np.zeros(n_s)
            nonempty = prob._sat_counts > 0
            ratio = np.where(z > 0, z / d, 0.0)
            top[nonempty] = np.maximum.reduceat(ratio, prob.sat_starts[nonempty])
            hi = np.minimum(hi, top)
        step = np.where(bad, 0.5 * (lo + hi), step)
        nu = np.where(done, nu, step)
    else:
        log.debug("projection hit max_iter; max budget error %.3g", np.abs(err[active]).max())
    x = np.clip(z - d * nu[s], 0.0, cap)
    return x, nu


# -- optimality certificate ---------------------------------------------------

def kkt_residual(prob: Problem, x: np.ndarray, grad: np.ndarray, bound_tol: float = 1e-12) -> float:
    """Largest first-order optimality violation, in gradient units.

    For each satellite the budget multiplier ``nu >= 0`` is chosen to minimize
    the worst violation among: ``|g - nu|`` on interior coordinates,
    ``max(0, g - nu)`` at the lower bound and ``max(0, nu - g)`` at the cap.
    When the budget is slack, complementarity forces ``nu = 0``.
    """
    return float(_kkt_per_sat(prob, x, grad, bound_tol).max(initial=0.0))


def _kkt_per_sat(prob, x, grad, bound_tol=1e-12):
    cap = prob.cap
    at_lo = x <= bound_tol * cap
    at_hi = x >= cap * (1 - bound_tol)
    interior = ~at_lo & ~at_hi
    starts = prob.sat_starts
    nonempty = prob._sat_counts > 0
    g_up = np.where(interior | at_lo, grad, -np.inf)  # nu must be >= these
    g_dn = np.where(interior | at_hi, grad, np.inf)  # nu must be <= these
    A = np.full(prob.n_sats, -np.inf)
    Bv = np.full(prob.n_sats, np.inf)
    A[nonempty] = np.maximum.reduceat(g_up, starts[nonempty])
    Bv[nonempty] = np.minimum.reduceat(g_dn, starts[nonempty])
    used = np.bincount(prob.sat, weights=x, minlength=prob.n_sats)
    tight = used >= prob.budget * (1 - 1e-9)
    with np.errstate(invalid="ignore"):
        mid = np.where(np.isfinite(A) & np.isfinite(Bv), 0.5 * (A + Bv),
                       np.where(np.isfinite(A), A, 0.0))
    nu = np.where(tight, np.maximum(mid, 0.0), 0.0)
    viol = np.maximum(np.maximum(A - nu, nu - Bv), 0.0)
    return viol


def default_tolerance(prob: Problem, relative: float = 1e-7) -> float:
    """Tolerance relative to the mean budget price ``sum U / sum budget``."""
    return relative * float(prob.users.sum() / prob.budget.sum())


# -- solvers ------------------------------------------------------------------

@dataclass
class RelaxedAllocation:
    values: np.ndarray
    objective: float
    kkt_residual: float
    converged: bool
    steps: int
    clamp_active: bool = False
    history: list = field(default_factory=list)


def initial_point(prob: Problem) -> np.ndarray:
    """Each satellite spreads its budget over its cells by user share, capped."""
    n_sat_per_cell = np.bincount(prob.cell, minlength=prob.n_cells)
    v = prob.users[prob.cell] / n_sat_per_cell[prob.cell]
    vs = np.bincount(prob.sat, weights=v, minlength=prob.n_sats)
    x = prob.budget[prob.sat] * v / vs[prob.sat]
    return np.minimum(x, prob.cap)


def _metric(prob, x, y):
    a_sum = np.bincount(prob.cell, weights=prob.coef, minlength=prob.n_cells)
    delta = _METRIC_MIX * y / a_sum
    yc = y[prob.cell]
    return yc * (x + delta[prob.cell]) / (prob.users[prob.cell] * prob.coef * (1 + _METRIC_MIX))


def _restrict(prob: Problem, keep: np.ndarray) -> Problem:
    """Sub-problem on a subset of pairs; satellite and cell indices are kept."""
    return Problem(sat=prob.sat[keep], cell=prob.cell[keep], coef=prob.coef[keep],
                   users=prob.users, cap=prob.cap, budget=prob.budget)


def _budget_prices(prob: Problem, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Per-satellite multiplier estimate: the mean gradient over positive pairs."""
    pos = x > 0
    num = np.bincount(prob.sat, weights=np.where(pos, grad, 0.0), minlength=prob.n_sats)
    cnt = np.bincount(prob.sat, weights=pos, minlength=prob.n_sats)
    used = np.bincount(prob.sat, weights=x, minlength=prob.n_sats)
    tight = used >= prob.budget * (1 - 1e-9)
    return np.where(tight & (cnt > 0), num / np.maximum(cnt, 1), 0.0)


def solve_relaxed_global(
    prob: Problem,
    w=None,
    cfg: SolverConfig | None = None,
    x0=None,
    tol: float | None = None,
    trace: bool = False,
    accelerate: bool = True,
    check_every: int = 5,
    screen: bool = True,
    polish: bool = True,
) -> RelaxedAllocation:
    """Maximize the weighted-l1 penalized proportional-fair objective.

    Nesterov momentum with function-value restart on top of the scaled
    projected gradient step; accepted iterates never decrease the objective.

    With ``screen`` the solve runs to a coarse tolerance on all pairs first,
    then continues on the pairs that are positive or nearly competitive at
    their satellite's price. The KKT residual is always checked on the full
    problem and violating pairs are added back until it passes.

    With ``polish`` the first-order phase only needs to identify the support;
    Newton's method on the support then drives the residual to round-off.

    Returns the last iterate; ``converged`` is False when ``pg_max_steps`` ran
    out before the KKT residual dropped below the tolerance.
    """
    cfg = cfg or SolverConfig()
    if tol is None:
        tol = cfg.pg_tolerance if cfg.pg_tolerance is not None else default_tolerance(prob)
    if prob.n_pairs == 0:
        return RelaxedAllocation(np.zeros(0), 0.0, 0.0, True, 0)
    w = None if w is None else np.asarray(w, dtype=float)

    x = initial_point(prob)
    if x0 is not None:
        x0, _ = project(prob, np.asarray(x0, dtype=float))
        # keep every cell strictly served so log() stays finite
        if np.any(cell_rates(prob, x0) <= 0):
            x0 = 0.9 * x0 + 0.1 * x
        x = x0

    coarse = max(tol, default_tolerance(prob, _SCREEN_RELATIVE))
    x, res, steps, history = _pg_loop(prob, w, x, coarse, cfg.pg_max_steps, cfg, trace,
                                      accelerate, check_every)
    keep = np.zeros(prob.n_pairs, dtype=bool) if screen else np.ones(prob.n_pairs, dtype=bool)

    def refine(x, res, target):
        # first-order phase on the working set, widened until the full residual passes
        nonlocal steps
        for _ in range(_SCREEN_ROUNDS):
            left = cfg.pg_max_steps - steps
            if res <= target or left <= 0:
                break
            if not keep.all():
                g = gradient(prob, x, w)
                nu = _budget_prices(prob, x, g)
                keep[:] |= (x > 0) | (g - nu[prob.sat] > -_SCREEN_MARGIN * coarse)
            sub = prob if keep.all() else _restrict(prob, keep)
            ws = None if w is None or keep.all() else w[keep]
            if keep.all():
                ws = w
            xs, _, n, hist = _pg_loop(sub, ws, x[keep], target, left, cfg, trace,
                                      accelerate, check_every)
            history.extend((it + steps, *rest) for it, *rest in hist)
            steps += n
            x = np.zeros(prob.n_pairs)
            x[keep] = xs
            res = kkt_residual(prob, x, gradient(prob, x, w))
        return x, res

    target = max(tol, default_tolerance(prob, _SUPPORT_RELATIVE)) if polish else tol
    while res > tol and steps < cfg.pg_max_steps:
        x, res = refine(x, res, target)
        if polish and res > tol:
            support = x > 0
            for _ in range(_POLISH_ROUNDS):
                out = _polish(prob, w, x, support)
                if out is None:
                    break
                xp, nu = out
                g = gradient(prob, xp, w)
                rp = kkt_residual(prob, xp, g)
                if trace:
                    history.append((steps, objective(prob, xp, w), rp, 0.0))
                if rp < res:
                    x, res = xp, rp
                # pairs priced out of the support that should carry frames re-enter
                enter = (xp == 0) & (g - nu[prob.sat] > tol)
                if rp <= tol or not enter.any():
                    break
                support = (xp > 0) | enter
            if res > tol:
                log.debug("polish at target %.3g failed (residual %.3g)", target, res)
        if target <= tol:
            break
        target = max(tol, 0.1 * target)

    y = cell_rates(prob, x)
    converged = bool(res <= tol)
    if not converged:
        log.info("relaxed solve stopped after %d steps, KKT residual %.3g > tol %.3g", steps, res, tol)
    return RelaxedAllocation(
        values=x,
        objective=objective(prob, x, w),
        kkt_residual=float(res),
        converged=converged,
        steps=steps,
        clamp_active=bool(np.any(y <= EPS_RATE)),
        history=history,
    )


def _pg_loop(prob, w, x, tol, max_steps, cfg, trace, accelerate, check_every):
    """Accelerated scaled projected gradient from ``x``; returns (x, residual, steps, history)."""
    backtrack = cfg.pg_step_rule == "backtracking"
    f = objective(prob, x, w)
    x_prev = x
    t = 1.0
    nu_v = nu_x = None
    history = []
    res = np.inf
    alpha = 1.0
    it = 0
    for it in range(max_steps):
        if it % check_every == 0:
            res = kkt_residual(prob, x, gradient(prob, x, w))
            if trace:
                history.append((it, f, res, alpha))
            if res <= tol:
                break
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        mom = (t - 1.0) / t_next if accelerate else 0.0
        if mom > 0:
            v, nu_v = project(prob, x + mom * (x - x_prev), nu0=nu_v)
            yv = cell_rates(prob, v)
            if np.any(yv <= 0):
                v, yv, mom = x, cell_rates(prob, x), 0.0
        else:
            v, yv = x, cell_rates(prob, x)
        g = gradient(prob, v, w, yv)
        d = _metric(prob, v, yv)
        alpha = 1.0
        while True:
            x_new, nu_x = project(prob, v + alpha * d * g, metric=d, nu0=nu_x)
            if not backtrack or objective_change(prob, v, x_new, w) >= _ARMIJO * np.dot(g, x_new - v):
                break
            alpha *= 0.5
            if alpha < 1e-12:
                x_new = v
                break
        gain = objective_change(prob, x, x_new, w)
        if alpha < 1e-12:
            # no ascent along the projection arc: round-off floor reached
            log.debug("line search failed at step %d (residual %.3g)", it, res)
            if gain > 0:
                x = x_new
            res = kkt_residual(prob, x, gradient(prob, x, w))
            break
        if gain < 0:
            # momentum overshot: restart from the current iterate
            t, x_prev = 1.0, x
            if mom == 0:
                log.debug("line search stalled at step %d (residual %.3g)", it, res)
                break
            continue
        x_prev, x, f, t = x, x_new, f + gain, t_next
    else:
        it = max_steps
        res = kkt_residual(prob, x, gradient(prob, x, w))
        if trace:
            history.append((it, f, res, alpha))
    return x, res, it, history


def _break_cycles(prob: Problem, x: np.ndarray, support: np.ndarray):
    """Reduce the free part of the satellite-cell support graph to a forest.

    Generic optima have a forest support; a cycle leaves a free circulation
    direction that makes the Newton system singular. Edges are added by
    decreasing value; when one closes a cycle, frames are moved around it
    along the circulation that keeps every satellite load and every cell rate
    except one fixed. The product of rate ratios around the cycle picks the
    orientation that raises the remaining cell's rate. The shift stops when a
    losing edge empties (it leaves the support) or a gaining edge reaches the
    cap (it becomes fixed). Returns ``(support, x)``.
    """
    support = support.copy()
    x = np.where(support, x, 0.0)
    cap = prob.cap
    # pairs at the cap are fixed, so only free pairs can close a cycle
    free = support & (x < cap * (1 - 1e-12))
    n_serv = np.bincount(prob.cell[free], minlength=prob.n_cells)
    cand = np.flatnonzero(free & (n_serv[prob.cell] > 1))
    if len(cand) == 0:
        return support, x
    n_s = prob.n_sats
    adj: dict[int, dict[int, int]] = {}  # node -> {neighbour: pair}

    def path(u, v):
        prev = {u: None}
        queue = [u]
        for node in queue:
            if node == v:
                break
            for nb, e in adj.get(node, {}).items():
                if nb not in prev:
                    prev[nb] = (node, e)
                    queue.append(nb)
        if v not in prev:
            return None
        edges = []
        while prev[v] is not None:
            v, e = prev[v]
            edges.append(e)
        return edges[::-1]

    def link(e):
        u, v = int(prob.sat[e]), n_s + int(prob.cell[e])
        adj.setdefault(u, {})[v] = e
        adj.setdefault(v, {})[u] = e

    def unlink(e):
        u, v = int(prob.sat[e]), n_s + int(prob.cell[e])
        del adj[u][v], adj[v][u]

    for e in cand[np.argsort(-x[cand], kind="stable")]:
        e = int(e)
        p = path(n_s + int(prob.cell[e]), int(prob.sat[e]))
        if p is None:
            link(e)
            continue
        # walk: cell_0 -p0-> sat_1 -p1-> cell_1 -p2-> ... -> sat(e) -e-> cell_0
        outs = np.array(p[0::2])  # edge leaving cell_j towards sat_{j+1}
        ins = np.array([e] + p[1::2])  # edge entering cell_j from sat_j
        r = prob.coef[outs] / prob.coef[ins]
        k = len(outs)
        step = np.ones(k)
        if np.prod(r) <= 1.0:
            # "out" edges lose frames; cell_j keeps its rate when d_j = d_{j-1} / r_j,
            # and sat_{j+1} moves d_j from outs[j] to ins[j+1]
            for j in range(1, k):
                step[j] = step[j - 1] / r[j]
            losing, gaining, gain = outs, ins, np.roll(step, 1)
        else:
            # "in" edges lose frames; cell_j keeps its rate when g_{j+1} = g_j / r_j,
            # and sat_{j+1} moves g_{j+1} from ins[j+1] to outs[j]
            for j in range(1, k):
                step[j] = step[j - 1] / r[j - 1]
            losing, gaining, gain = ins, outs, np.roll(step, -1)
        t_lose = x[losing] / step
        t_gain = (cap - x[gaining]) / gain
        theta = min(t_lose.min(), t_gain.min())
        x[losing] = np.maximum(x[losing] - theta * step, 0.0)
        x[gaining] = np.minimum(x[gaining] + theta * gain, cap)
        if t_lose.min() <= t_gain.min():
            leave = int(losing[np.argmin(t_lose)])
            x[leave] = 0.0
            support[leave] = False
        else:
            leave = int(gaining[np.argmin(t_gain)])
            x[leave] = cap
        if leave != e:
            unlink(leave)
            link(e)
    return support, x


def _polish(prob: Problem, w, x: np.ndarray, support=None, max_iter: int = 30,
            max_drops: int = 20):
    """Newton's method on the optimality system restricted to the current support.

    Unknowns are the interior pair values and the multipliers of budget-tight
    satellites; equations are stationarity on interior pairs and the tight
    budgets. A step that would leave the box is cut at the first bound it
    hits; pairs reaching zero leave the support and pairs reaching the cap are
    fixed there, then Newton restarts. Returns ``(x, nu)``, or None if the
    system is singular or the support keeps shrinking.
    """
    support = x > 0 if support is None else support
    for _ in range(max_drops + 1):
        out = _newton_on_support(prob, w, x, support, max_iter)
        if out is None or out[0] == "ok":
            return None if out is None else out[1:]
        _, x, support = out
    return None


def _newton_on_support(prob, w, x, support, max_iter):
    from scipy.sparse import csc_matrix
    from scipy.sparse.linalg import spsolve

    cap = prob.cap
    used = np.bincount(prob.sat, weights=x, minlength=prob.n_sats)
    tight = used >= prob.budget * (1 - 1e-6)
    support, x = _break_cycles(prob, x, support)
    interior = support & (x < cap * (1 - 1e-12))
    idx = np.flatnonzero(interior)
    if len(idx) == 0:
        return None
    # group the interior pairs by cell for the per-cell rank-one blocks
    idx = idx[np.argsort(prob.cell[idx], kind="stable")]
    n_p = len(idx)
    c = prob.cell[idx]
    s = prob.sat[idx]
    a = prob.coef[idx]
    u = prob.users[c]
    wi = 0.0 if w is None else w[idx]
    # a tight satellite without free pairs has a fixed load and no equation
    t_ids = np.flatnonzero(tight & (np.bincount(s, minlength=prob.n_sats) > 0))
    t_pos = np.full(prob.n_sats, -1)
    t_pos[t_ids] = np.arange(len(t_ids))
    n = n_p + len(t_ids)
    _, first, counts = np.unique(c, return_index=True, return_counts=True)
    k = np.repeat(counts, counts)
    block_start = np.repeat(first, counts)
    rows_cc = np.repeat(np.arange(n_p), k)
    offs = np.arange(len(rows_cc)) - np.repeat(np.cumsum(k) - k, k)
    cols_cc = np.repeat(block_start, k) + offs
    in_t = t_pos[s] >= 0
    r_nu = np.flatnonzero(in_t)
    c_nu = n_p + t_pos[s[in_t]]
    rows = np.concatenate([rows_cc, r_nu, c_nu])
    cols = np.concatenate([cols_cc, c_nu, r_nu])

    nu = np.zeros(prob.n_sats)
    g = gradient(prob, x, w)
    nu[t_ids] = np.bincount(s[in_t], weights=g[idx][in_t], minlength=prob.n_sats)[t_ids] \
        / np.maximum(np.bincount(s[in_t], minlength=prob.n_sats)[t_ids], 1)
    scale = float(np.abs(g[idx]).max())
    for _ in range(max_iter):
        y = cell_rates(prob, x)
        yc = y[c]
        if np.any(yc <= 0):
            return None  # an entering pair is the only link of its cell
        F = u * a / yc - wi - nu[s]
        G = np.bincount(prob.sat, weights=x, minlength=prob.n_sats)[t_ids] - prob.budget[t_ids]
        if np.abs(F).max() <= 1e-13 * scale and np.abs(G).max(initial=0.0) <= 1e-9 * prob.cap:
            break
        vals = np.concatenate([
            -(u * a / (yc * yc))[rows_cc] * a[cols_cc],
            -np.ones(len(r_nu)),
            np.ones(len(r_nu)),
        ])
        J = csc_matrix((vals, (rows, cols)), shape=(n, n))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            try:
                step = spsolve(J, -np.concatenate([F, G]))
            except Exception:
                return None
        if not np.all(np.isfinite(step)):
            return None
        dx = step[:n_p]
        xi = x[idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dx < 0, -xi / dx, np.where(dx > 0, (cap - xi) / dx, np.inf))
        t = float(ratio.min())
        if t <= 1.0:
            # wrong support: stop at the first bound and drop or fix the blocking pairs
            x = x.copy()
            x[idx] = np.clip(xi + t * dx, 0.0, cap)
            hit = ratio <= t * (1 + 1e-12)
            x[idx[hit & (dx < 0)]] = 0.0
            x[idx[hit & (dx > 0)]] = cap
            if np.any(cell_rates(prob, x)[c] <= 0):
                return None
            return "blocked", x, x > 0
        x = x.copy()
        x[idx] = xi + dx
        nu[t_ids] += step[n_p:]
    else:
        return None
    return "ok", x, nu


def solve_local(users, cap: float, budget: float) -> np.ndarray:
    """Capped water-filling: maximize sum U_c log x_c, 0 <= x <= cap, sum x <= budget.

    The optimum is ``x_c = min(cap, U_c / lam)``; saturated cells are capped
    one at a time (largest first) until the remainder fits.
    """
    u = np.asarray(users, dtype=float)
    n = len(u)
    if n == 0:
        return np.zeros(0)
    if np.any(u <= 0):
        raise ValueError("solve_local needs positive user counts")
    if budget <= 0 or cap <= 0:
        raise ConfigError("frame budget and cap must be positive")
    if n * cap <= budget:
        return np.full(n, float(cap))
    order = np.argsort(-u, kind="stable")
    us = u[order]
    tail = np.cumsum(us[::-1])[::-1]  # sum of us[k:]
    x = np.empty(n)
    for k in range(n):
        remaining = budget - k * cap
        lam = tail[k] / remaining
        if us[k] / lam <= cap:
            x[order[:k]] = cap
            x[order[k:]] = us[k:] / lam
            return x
    raise AssertionError("water-filling failed to terminate")  # unreachable: n*cap > budget
