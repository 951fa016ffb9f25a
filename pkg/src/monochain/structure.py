"""Order-theoretic structure tests on computed chain components.

Orbit classification, generic period estimation, Perron spectral data,
continuation of arcs of fixed points, the unordered-or-arc verdict for a
component, and the search for a periodic point bracketing a component from
above.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .conley import ChainComponent
from .enclosure import ChainGraph, dilate
from .errors import (DegenerateArc, EscapeError, InconclusiveError, MonochainError, NotFound, NumericalError,
                     UsageError)
from .order import DEFAULT_ORDER, ConeOrder, cone_ll, ordered_pair
from .systems import MAP, SEMIFLOW, TimeTMap, evaluate_map, jacobian, map_points, power

__all__ = [
    "EVENTUALLY_DECREASING",
    "EVENTUALLY_INCREASING",
    "NON_MONOTONE_CONVERGENT",
    "NOT_CONVERGENT",
    "STATIONARY",
    "UNORDERED",
    "STATIONARY_PARC",
    "PARC_UNION",
    "VIOLATION",
    "ConvergenceResult",
    "PeriodEstimate",
    "SpectralData",
    "ParcCandidate",
    "StructureVerdict",
    "BracketCertificate",
    "as_map",
    "classify_convergence",
    "classify_convergence_batch",
    "estimate_generic_period",
    "perron",
    "principal_eigen",
    "find_fixed_point",
    "trace_stationary_parc",
    "component_representatives",
    "verify_dichotomy",
    "find_bracketing_periodic_point",
]

EVENTUALLY_DECREASING = "EventuallyDecreasing"
EVENTUALLY_INCREASING = "EventuallyIncreasing"
NON_MONOTONE_CONVERGENT = "NonMonotoneConvergent"
NOT_CONVERGENT = "NotConvergent"
STATIONARY = "Stationary"

UNORDERED = "Unordered"
STATIONARY_PARC = "StationaryParc"
PARC_UNION = "ParcUnion"
VIOLATION = "Violation"

FIXED_POINT_TOL = 1e-8


def as_map(sys, horizon: float = 1.0):
    """Map-kind view of ``sys``: semiflows become their time-``horizon`` map."""
    if sys.kind == SEMIFLOW:
        return TimeTMap(sys, horizon)
    return sys


# ------------------------------------------------------------------ orbits

@dataclass
class ConvergenceResult:
    kind: str
    limit: np.ndarray | None
    steps: int
    monotone_from: int | None = None

    @property
    def convergent(self) -> bool:
        return self.kind != NOT_CONVERGENT


def classify_convergence(sys, x, n_max: int = 1000, tol: float = 1e-9) -> ConvergenceResult:
    """Iterate ``x`` and report how (and whether) the orbit settles.

    Consecutive iterates are compared in the cone order only while the step
    exceeds ``tol``; once a comparable step appears the orbit is monotone
    from then on, which fixes the direction.
    """
    if n_max < 2:
        raise UsageError("n_max must be >= 2")
    S = as_map(sys)
    cur = np.asarray(x, dtype=float)
    direction, start = None, None
    for k in range(n_max):
        nxt = evaluate_map(S, cur)
        diff = nxt - cur
        step = float(np.abs(diff).max())
        if step < tol:
            if k == 0:
                return ConvergenceResult(STATIONARY, nxt, 1, 0)
            kind = {None: NON_MONOTONE_CONVERGENT, -1: EVENTUALLY_DECREASING,
                    1: EVENTUALLY_INCREASING}[direction]
            return ConvergenceResult(kind, nxt, k + 1, start)
        if direction is None:
            if np.all(diff <= 0):
                direction, start = -1, k
            elif np.all(diff >= 0):
                direction, start = 1, k
        cur = nxt
    return ConvergenceResult(NOT_CONVERGENT, None, n_max, start)


def classify_convergence_batch(sys, X, n_max: int = 1000, tol: float = 1e-9) -> list[ConvergenceResult]:
    """Row-wise :func:`classify_convergence`; rows that escape come back ``NotConvergent``."""
    if n_max < 2:
        raise UsageError("n_max must be >= 2")
    S = as_map(sys)
    cur = np.atleast_2d(np.asarray(X, dtype=float)).copy()
    N = len(cur)
    direction = np.zeros(N, dtype=int)
    start = np.full(N, -1)
    done = np.full(N, -1)
    limit = np.full_like(cur, np.nan)
    dead = np.zeros(N, dtype=bool)
    for k in range(n_max):
        live = np.flatnonzero((done < 0) & ~dead)
        if live.size == 0:
            break
        nxt, esc = map_points(S, cur[live])
        dead[live[esc]] = True
        diff = nxt - cur[live]
        conv = ~esc & (np.abs(diff).max(axis=1) < tol)
        done[live[conv]] = k
        limit[live[conv]] = nxt[conv]
        undecided = ~esc & ~conv & (direction[live] == 0)
        dec = undecided & np.all(diff <= 0, axis=1)
        inc = undecided & ~dec & np.all(diff >= 0, axis=1)
        direction[live[dec]], start[live[dec]] = -1, k
        direction[live[inc]], start[live[inc]] = 1, k
        cur[live] = nxt
    kinds = {0: NON_MONOTONE_CONVERGENT, -1: EVENTUALLY_DECREASING, 1: EVENTUALLY_INCREASING}
    out = []
    for i in range(N):
        mono = None if start[i] < 0 else int(start[i])
        if done[i] < 0:
            out.append(ConvergenceResult(NOT_CONVERGENT, None, n_max, mono))
        elif done[i] == 0:
            out.append(ConvergenceResult(STATIONARY, limit[i].copy(), 1, 0))
        else:
            out.append(ConvergenceResult(kinds[int(direction[i])], limit[i].copy(), int(done[i]) + 1, mono))
    return out


def _iterate_batch(S, X, n_steps: int):
    """Apply ``S`` ``n_steps`` times to a batch, returning the full history and escape mask."""
    hist = [X]
    escaped = np.zeros(len(X), dtype=bool)
    cur = X
    for _ in range(n_steps):
        cur, esc = map_points(S, cur)
        escaped |= esc
        cur = np.where(escaped[:, None], hist[-1], cur)
        hist.append(cur)
    return np.stack(hist), escaped


@dataclass
class PeriodEstimate:
    m: int
    fraction_convergent: float
    period_counts: dict[int, int]
    rule: str

    def to_dict(self) -> dict:
        return {"m": self.m, "fraction_convergent": self.fraction_convergent,
                "period_counts": {str(k): v for k, v in sorted(self.period_counts.items())}, "rule": self.rule}


def estimate_generic_period(sys, n_samples: int = 50, rng_seed=0, n_max: int = 500, tol: float = 1e-8,
                            max_period: int = 12) -> PeriodEstimate:
    """Sample seeds and read the minimal period of each orbit tail.

    ``m`` is the period shared by at least 90% of convergent seeds; when no
    period is that dominant, the least common multiple of observed periods
    is reported instead.
    """
    if n_samples < 10:
        raise UsageError("n_samples must be >= 10")
    S = as_map(sys)
    rng = np.random.default_rng(rng_seed)
    X = S.lower + rng.random((n_samples, S.dimension)) * (S.upper - S.lower)
    H, escaped = _iterate_batch(S, X, n_max)
    periods = []
    for i in range(n_samples):
        if escaped[i]:
            continue
        tail = H[-(2 * max_period + 1):, i]
        for p in range(1, min(max_period, (len(tail) - 1) // 2) + 1):
            gaps = np.abs(tail[p:] - tail[:-p]).max(axis=1)
            if np.all(gaps[-p:] < tol):
                periods.append(p)
                break
    frac = len(periods) / n_samples
    if frac < 0.5:
        raise InconclusiveError(f"only {frac:.0%} of samples converged within {n_max} steps")
    counts = Counter(periods)
    p, c = counts.most_common(1)[0]
    if c >= 0.9 * len(periods):
        return PeriodEstimate(p, frac, dict(counts), "majority")
    return PeriodEstimate(math.lcm(*counts), frac, dict(counts), "lcm")


# ------------------------------------------------------------------ spectra

@dataclass
class SpectralData:
    rho: float
    principal_direction: np.ndarray
    gap: float
    iterations: int


def _power(A: np.ndarray, v: np.ndarray, max_iter: int, tol: float):
    for k in range(1, max_iter + 1):
        w = A @ v
        nrm = np.abs(w).max()
        if nrm == 0:
            return 0.0, v, k
        w = w / nrm
        if np.abs(w - v).max() < tol:
            return float(nrm), w, k
        v = w
    raise NumericalError("power iteration did not converge; the leading eigenvalue may not be simple")


def perron(matrix, tol: float = 1e-10, max_iter: int = 10_000) -> SpectralData:
    """Perron root and eigenvector of an entrywise-positive matrix by power iteration.

    The subdominant ratio comes from iterating the matrix with the Perron
    pair deflated out (using the left eigenvector).
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise UsageError("expected a square matrix")
    if not np.all(np.isfinite(A)):
        raise NumericalError("non-finite matrix entries")
    if not np.all(A > 0):
        raise UsageError("matrix is not entrywise positive")
    n = len(A)
    rho, v, iters = _power(A, np.ones(n), max_iter, tol)
    _, w, _ = _power(A.T, np.ones(n), max_iter, tol)
    B = A - rho * np.outer(v, w) / float(w @ v)
    u = np.linspace(1.0, 2.0, n) * np.where(np.arange(n) % 2, -1.0, 1.0)
    u -= v * float(w @ u) / float(w @ v)
    growth = []
    for _ in range(200):
        z = B @ u
        nz, nu = np.linalg.norm(z), np.linalg.norm(u)
        if nu == 0 or nz <= 1e-300 * max(1.0, rho):
            break
        growth.append(nz / nu)
        u = z / nz
    rho2 = float(np.exp(np.mean(np.log(growth[-50:])))) if growth else 0.0
    return SpectralData(rho, v, rho2 / rho, iters)


def principal_eigen(sys, x, tol: float = 1e-10, max_iter: int = 10_000) -> SpectralData:
    """Spectral data of ``DS(x)`` (semiflows use their time-1 map)."""
    return perron(jacobian(as_map(sys), x), tol, max_iter)


# ------------------------------------------------------------------ fixed points and arcs

def find_fixed_point(sys, x0, tol: float = FIXED_POINT_TOL, max_iter: int = 50) -> np.ndarray:
    """Gauss-Newton on ``S(x) - x``; least squares copes with a singular ``DS - I``."""
    S = as_map(sys)
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    for _ in range(max_iter):
        F = evaluate_map(S, x) - x
        if np.abs(F).max() < 0.01 * tol:
            return x
        J = jacobian(S, x) - np.eye(n)
        dx = np.linalg.lstsq(J, -F, rcond=None)[0]
        x = x + dx
        if np.abs(dx).max() < 1e-15:
            break
    F = evaluate_map(S, x) - x
    if np.abs(F).max() < tol:
        return x
    raise NumericalError(f"Newton did not reach a fixed point (residual {np.abs(F).max():.2e})")


@dataclass
class ParcCandidate:
    points: np.ndarray
    rho_values: np.ndarray
    residuals: np.ndarray
    step: float
    margin: float

    @property
    def endpoint_lo(self) -> np.ndarray:
        return self.points[0]

    @property
    def endpoint_hi(self) -> np.ndarray:
        return self.points[-1]

    def __len__(self) -> int:
        return len(self.points)

    def is_totally_ordered(self, order: ConeOrder = DEFAULT_ORDER) -> bool:
        o = order.with_margin(self.margin)
        return all(cone_ll(a, b, o) for a, b in zip(self.points[:-1], self.points[1:]))

    def to_dict(self) -> dict:
        return {"n_points": len(self), "points": self.points.tolist(), "rho": self.rho_values.tolist(),
                "residuals": self.residuals.tolist(), "step": self.step, "margin": self.margin}


def _max_step_inside(x, d, lower, upper) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(d > 0, (upper - x) / d, np.inf)
        down = np.where(d < 0, (lower - x) / d, np.inf)
    return float(max(0.0, min(up.min(), down.min())))


def _correct(S, x_pred, tangent, tol, max_iter=25):
    """Newton on ``[S(x) - x; t.(x - x_pred)] = 0`` via least squares."""
    x = x_pred.copy()
    n = x.size
    for _ in range(max_iter):
        F = evaluate_map(S, x) - x
        g = float(tangent @ (x - x_pred))
        if np.abs(F).max() < 0.01 * tol and abs(g) < 1e-12:
            return x
        J = np.vstack([jacobian(S, x) - np.eye(n), tangent[None, :]])
        dx = np.linalg.lstsq(J, -np.concatenate([F, [g]]), rcond=None)[0]
        x = x + dx
        if not np.all(np.isfinite(x)):
            return None
    F = evaluate_map(S, x) - x
    if np.abs(F).max() < tol and abs(float(tangent @ (x - x_pred))) < 1e-8:
        return x
    return None


def _branch(S, seed, sign, step, tol, max_points, lower, upper):
    pts, hs, mins, x = [], [], [], seed
    e = principal_eigen(S, x).principal_direction
    while len(pts) < max_points:
        d = sign * e
        h = min(step, _max_step_inside(x, d, lower, upper))
        nxt = None
        while h >= step / 64:
            pred = x + h * d
            t = d / np.linalg.norm(d)
            try:
                cand = _correct(S, pred, t, tol)
            except (EscapeError, NumericalError):
                cand = None
            if (cand is not None and np.all(cand >= lower) and np.all(cand <= upper)
                    and float(t @ (cand - x)) > h * np.linalg.norm(d) / 4):
                nxt = cand
                break
            h /= 2
        if nxt is None:
            break
        pts.append(nxt)
        hs.append(h)
        mins.append(float(e.min()))
        x = nxt
        try:
            e = principal_eigen(S, x).principal_direction
        except MonochainError:
            break
    return pts, hs, mins


def trace_stationary_parc(sys, seed_equilibrium, step: float = 0.05, fixed_point_tol: float = FIXED_POINT_TOL,
                          max_points: int = 2000) -> ParcCandidate:
    """Continue an arc of fixed points through ``seed_equilibrium`` along ``+-E1``.

    Each predictor moves ``step`` along the principal eigendirection (max-norm
    1); the corrector pulls back to the fixed-point set on the hyperplane
    through the prediction.  Steps are halved on failure down to ``step/64``
    and the arc stops there or at the domain boundary.
    """
    if step <= 0:
        raise UsageError("step must be positive")
    S = as_map(sys)
    seed = np.asarray(seed_equilibrium, dtype=float)
    res0 = float(np.abs(evaluate_map(S, seed) - seed).max())
    if res0 >= fixed_point_tol:
        raise UsageError(f"seed is not a fixed point (residual {res0:.2e})")
    lo, hi = S.lower, S.upper
    upper, h_up, e_up = _branch(S, seed, 1.0, step, fixed_point_tol, max_points, lo, hi)
    lower, h_lo, e_lo = _branch(S, seed, -1.0, step, fixed_point_tol, max_points, lo, hi)
    if not upper and not lower:
        raise DegenerateArc("fixed point is isolated: no corrected point along either direction")
    pts = np.array(lower[::-1] + [seed] + upper)
    rho = np.array([principal_eigen(S, p).rho for p in pts])
    res = np.array([float(np.abs(evaluate_map(S, p) - p).max()) for p in pts])
    # each accepted step moved at least h * min(E1) in every coordinate
    margin = 0.5 * min(h * e for h, e in zip(h_up + h_lo, e_up + e_lo))
    return ParcCandidate(pts, rho, res, step, margin)


# ------------------------------------------------------------------ dichotomy

@dataclass
class StructureVerdict:
    classification: str
    component_id: int
    m: int = 1
    parc: ParcCandidate | None = None
    witness: tuple[np.ndarray, np.ndarray] | None = None
    d: int | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"classification": self.classification, "component_id": self.component_id, "m": self.m,
               "d": self.d, "diagnostics": self.diagnostics}
        out["witness"] = None if self.witness is None else [list(map(float, w)) for w in self.witness]
        out["parc"] = None if self.parc is None else self.parc.to_dict()
        return out


def _subcentres(grid, boxes: np.ndarray) -> np.ndarray:
    lo, _ = grid.bounds(boxes)
    n = grid.dimension
    fr = [np.full(n, 0.5)] + [np.array(c) for c in np.ndindex(*([2] * n))]
    fr = [f if i == 0 else 0.25 + 0.5 * f for i, f in enumerate(fr)]
    return np.concatenate([lo + f * grid.widths for f in fr])


def _fixed_points_in(S, grid, boxes: np.ndarray, near: np.ndarray, n_starts: int, tol: float) -> np.ndarray:
    """Distinct fixed points of ``S`` reached by Newton from box centres and lying near the boxes."""
    starts = grid.centers(boxes[np.unique(np.linspace(0, boxes.size - 1, min(n_starts, boxes.size)).astype(int))])
    found: list[np.ndarray] = []
    for x0 in starts:
        try:
            p = find_fixed_point(S, x0, tol)
        except MonochainError:
            continue
        if not np.all((p >= grid.lower) & (p <= grid.upper)) or not near[grid.box_of(p)[0]]:
            continue
        if not any(np.abs(p - q).max() < 0.1 * grid.box_diameter for q in found):
            found.append(p)
    return np.array(found).reshape(-1, grid.dimension)


def component_representatives(S, graph: ChainGraph, boxes, n_iter: int = 60, fixed_point_tol: float = FIXED_POINT_TOL,
                              n_starts: int = 50):
    """Points standing for the invariant part of a component.

    Box centres and sub-box centres are iterated ``n_iter`` times.  A sample
    lives ``L`` steps if its orbit stays in the component's one-ring
    dilation that long.  Samples that live the whole horizon are
    represented by their final iterates.  When none does, the component is
    thin (a saddle seen through boxes, say) and its fixed points, found by
    Newton from box centres, represent it instead.  Failing both, the
    longest-lived samples (``L`` at least half the maximum) are used at
    their iterate ``ceil(L/2)``.
    """
    grid = graph.grid
    boxes = np.asarray(boxes, dtype=np.int64)
    X = _subcentres(grid, boxes)
    H, escaped = _iterate_batch(S, X, n_iter)
    near = np.zeros(grid.n_boxes, dtype=bool)
    near[dilate(grid, boxes, 1)] = True
    inside = np.zeros(H.shape[:2], dtype=bool)
    for k in range(H.shape[0]):
        P = H[k]
        ok = np.all((P >= grid.lower) & (P <= grid.upper), axis=1) & ~(escaped & (k > 0))
        b = np.zeros(len(P), dtype=np.int64)
        if ok.any():
            b[ok] = grid.box_of(P[ok])
        inside[k] = ok & near[b]
    alive = np.cumprod(inside, axis=0).astype(bool)
    L = alive.sum(axis=0) - 1
    L_max = int(L.max()) if L.size else 0
    diag = {"n_samples": int(len(X)), "L_max": L_max}
    if L_max >= n_iter:
        keep = L >= n_iter
        diag.update(n_kept=int(keep.sum()), rule="persistent")
        return H[n_iter, keep], diag
    fixed = _fixed_points_in(S, grid, boxes, near, n_starts, fixed_point_tol)
    if len(fixed):
        diag.update(n_kept=int(len(fixed)), rule="fixed points")
        return fixed, diag
    keep = L >= max(1, L_max // 2) if L_max > 0 else np.ones(len(L), dtype=bool)
    idx = np.ceil(np.maximum(L[keep], 0) / 2).astype(int)
    diag.update(n_kept=int(keep.sum()), rule="half-life")
    return H[idx, np.flatnonzero(keep)], diag


def verify_dichotomy(sys, graph: ChainGraph, component, m: int = 1, order: ConeOrder = DEFAULT_ORDER,
                     horizon: float | None = None, n_iter: int = 60, arc_step: float | None = None,
                     fixed_point_tol: float = FIXED_POINT_TOL) -> StructureVerdict:
    """Decide whether a chain component is unordered or an arc of fixed points of ``S^m``.

    Representatives come from :func:`component_representatives`.  They are
    first tested for unorderedness at a margin of one box diameter.  When
    an ordered pair exists, a fixed point of ``S^m`` is sought near the
    pair's midpoint, the arc through it is traced, and every
    representative must lie within one box diameter of the union of the
    arc's first ``m`` images.  Anything else is a violation with the
    ordered pair as witness.
    """
    if int(m) < 1:
        raise UsageError("m must be >= 1")
    m = int(m)
    boxes = component.boxes if isinstance(component, ChainComponent) else np.asarray(component, dtype=np.int64)
    cid = component.id if isinstance(component, ChainComponent) else -1
    if isinstance(component, ChainComponent) and component.trivial:
        raise UsageError("component is trivial")
    if horizon is None:
        horizon = graph.R if graph.R else 1.0
    S = as_map(sys, horizon)
    Sm = power(S, m)
    diam = graph.grid.box_diameter
    reps, diag = component_representatives(Sm, graph, boxes, n_iter, fixed_point_tol)
    diag = dict(diag)
    pair = ordered_pair(reps, order.with_margin(diam))
    if pair is None:
        return StructureVerdict(UNORDERED, cid, m, diagnostics=diag)
    witness = (pair[0], pair[1])
    mid = 0.5 * (pair[0] + pair[1])
    start = reps[int(np.argmin(np.abs(reps - mid).max(axis=1)))]
    step = float(np.max(S.upper - S.lower)) / 80 if arc_step is None else arc_step
    try:
        p = find_fixed_point(Sm, start, fixed_point_tol)
        arc = trace_stationary_parc(Sm, p, step, fixed_point_tol)
    except MonochainError as exc:
        diag["error"] = f"{type(exc).__name__}: {exc}"
        return StructureVerdict(VIOLATION, cid, m, witness=witness, diagnostics=diag)
    images = [arc.points]
    for _ in range(1, m):
        images.append(map_points(S, images[-1])[0])
    cloud = np.concatenate(images)
    dist = np.array([np.abs(cloud - r).max(axis=1).min() for r in reps])
    diag["max_distance_to_arc"] = float(dist.max())
    if dist.max() <= diam:
        kind = STATIONARY_PARC if m == 1 else PARC_UNION
        return StructureVerdict(kind, cid, m, parc=arc, d=m if m > 1 else None, diagnostics=diag)
    diag["error"] = "representatives stray from the traced arc"
    return StructureVerdict(VIOLATION, cid, m, parc=arc, witness=witness, diagnostics=diag)


# ------------------------------------------------------------------ bracketing point

@dataclass
class BracketCertificate:
    q: np.ndarray
    residual: float
    margin: float
    m: int
    seeds: list
    test_orbits: list
    reversed: bool

    def to_dict(self) -> dict:
        return {"q": self.q.tolist(), "residual": self.residual, "margin": self.margin, "m": self.m,
                "reversed": self.reversed, "seeds": self.seeds, "test_orbits": self.test_orbits}


def _limit(Sm, x, n_max, tol):
    cur = np.asarray(x, dtype=float)
    for k in range(n_max):
        nxt = evaluate_map(Sm, cur)
        if np.abs(nxt - cur).max() < tol:
            return nxt, k + 1
        cur = nxt
    return None, n_max


def find_bracketing_periodic_point(sys, graph: ChainGraph, K, m: int = 1, n_max: int = 2000, tol: float = 1e-12,
                                   order: ConeOrder = DEFAULT_ORDER, n_seeds: int = 10, n_tests: int = 10,
                                   rng_seed=0, horizon: float | None = None) -> BracketCertificate:
    """Look for a lower attracting ``m``-periodic point ``q`` lying strictly above ``K``.

    Seeds sit two box diameters above distinct boxes of ``K``.  If every seed
    falls back into ``K`` then ``K`` attracts from above and no bracketing
    point exists.  Otherwise the lowest limit above ``K`` is polished by
    Newton and tested: random points strictly between a representative of
    ``K`` and ``q`` must converge to ``q``.  Pass a reversed order for the
    dual search below ``K``.
    """
    m = int(m)
    if m < 1:
        raise UsageError("m must be >= 1")
    boxes = K.boxes if isinstance(K, ChainComponent) else np.asarray(K, dtype=np.int64)
    if horizon is None:
        horizon = graph.R if graph.R else 1.0
    S = as_map(sys, horizon)
    Sm = power(S, m)
    grid = graph.grid
    s = order.sign
    diam = grid.box_diameter
    reps, _ = component_representatives(Sm, graph, boxes)
    pick = boxes[np.unique(np.linspace(0, boxes.size - 1, min(n_seeds, boxes.size)).astype(int))]
    near = np.zeros(grid.n_boxes, dtype=bool)
    near[dilate(grid, boxes, 1)] = True
    seeds, limits, diag = [], [], []
    for b in pick:
        x = grid.centers([b])[0] + s * 2.0 * diam
        try:
            lim, steps = _limit(Sm, x, n_max, tol)
        except EscapeError:
            diag.append({"seed": x.tolist(), "outcome": "escaped"})
            continue
        if lim is None:
            diag.append({"seed": x.tolist(), "outcome": "no convergence"})
            continue
        inside = bool(np.all((lim >= grid.lower) & (lim <= grid.upper)) and near[grid.box_of(lim)[0]])
        seeds.append({"seed": x.tolist(), "limit": lim.tolist(), "steps": steps, "back_in_K": inside})
        if not inside:
            limits.append(lim)
    if not seeds:
        raise NotFound("every seed escaped or failed to converge", diagnostics={"failures": diag})
    if not limits:
        raise NotFound("K attracts from above: every exterior seed converged back into K",
                       diagnostics={"seeds": seeds, "failures": diag})
    above = [q for q in limits if np.all(s * (q[None, :] - reps) > 0)]
    if not above:
        raise NotFound("no limit lies strictly above K", diagnostics={"seeds": seeds, "failures": diag})
    above.sort(key=lambda q: s * float(q.sum()))
    q = above[0]
    for other in above[1:]:
        if np.all(s * (q - other) > 0):
            q = other
    q = find_fixed_point(Sm, q, 1e-10)
    residual = float(np.abs(evaluate_map(Sm, q) - q).max())
    margin = float((s * (q[None, :] - reps)).min())
    if margin <= 0:
        raise NotFound("polished point is not strictly above K", diagnostics={"seeds": seeds})
    rng = np.random.default_rng(rng_seed)
    tests = []
    for _ in range(n_tests):
        k = reps[rng.integers(len(reps))]
        y = k + rng.uniform(0.05, 0.95, size=k.size) * (q - k)
        try:
            lim, steps = _limit(Sm, y, n_max, tol)
        except EscapeError:
            lim, steps = None, n_max
        err = None if lim is None else float(np.abs(lim - q).max())
        tests.append({"start": y.tolist(), "limit": None if lim is None else lim.tolist(), "steps": steps,
                      "error": err, "converged": err is not None and err < 1e-6})
    if not all(t["converged"] for t in tests):
        raise NotFound("q is not lower attracting: a test orbit between K and q missed it",
                       diagnostics={"test_orbits": tests})
    return BracketCertificate(q, residual, margin, m, seeds, tests, order.reversed)
