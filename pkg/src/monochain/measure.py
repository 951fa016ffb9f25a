"""Ulam transfer operators, their stationary measures, and entropy estimates."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .conley import chain_recurrent_boxes, is_attractor_free, morse_graph
from .enclosure import BoxGrid, ChainGraph, _atomic_write, dilate
from .errors import EscapeError, NumericalError, UsageError
from .systems import MAP, SEMIFLOW, TimeTMap, map_points

__all__ = [
    "UlamOperator",
    "DiscreteMeasure",
    "SupportReport",
    "EntropyReport",
    "build_ulam",
    "stationary_distribution",
    "check_support_chain_recurrent",
    "separation_steps",
    "separated_counts",
    "entropy_estimate",
    "trapped_seeds",
]


@dataclass(eq=False)
class UlamOperator:
    grid: BoxGrid
    matrix: sparse.csr_matrix
    samples_per_box: int
    seed: int | None
    escape_fraction: np.ndarray
    retained: np.ndarray

    @property
    def n_boxes(self) -> int:
        return self.grid.n_boxes


def _ulam_rows(sys, grid: BoxGrid, samples_per_box: int, seed):
    n = grid.dimension
    N = grid.n_boxes
    rng = np.random.default_rng(seed)
    lo, _ = grid.bounds(np.arange(N))
    X = (lo[:, None, :] + rng.random((N, samples_per_box, n)) * grid.widths).reshape(-1, n)
    Y, escaped = map_points(sys, X)
    inside = ~escaped & np.all((Y >= grid.lower) & (Y <= grid.upper), axis=1)
    src = np.repeat(np.arange(N), samples_per_box)
    tgt = np.full(len(Y), -1, dtype=np.int64)
    tgt[inside] = grid.box_of(Y[inside])
    return src, tgt


def build_ulam(sys, grid: BoxGrid, samples_per_box: int = 16, seed=0) -> UlamOperator:
    """Row ``b`` is the empirical distribution of ``box(S(y))`` for seeded uniform ``y`` in ``b``.

    Mass leaving the grid is dropped and the row renormalised; the dropped
    share is kept in ``escape_fraction``.  A box that loses all its mass is
    removed (zero row, ``retained`` false), and so is mass landing in it,
    until nothing changes.
    """
    if sys.kind != MAP:
        raise UsageError("build_ulam needs a map-kind system; wrap semiflows in TimeTMap")
    if samples_per_box < 10:
        raise UsageError("samples_per_box must be >= 10")
    if grid.dimension != sys.dimension:
        raise UsageError("grid and system dimensions differ")
    N = grid.n_boxes
    src, tgt = _ulam_rows(sys, grid, samples_per_box, seed)
    retained = np.ones(N, dtype=bool)
    while True:
        ok = tgt >= 0
        ok[ok] = retained[tgt[ok]]
        counts = np.bincount(src[ok], minlength=N)
        now = retained & (counts > 0)
        if np.array_equal(now, retained):
            break
        retained = now
    ok &= retained[src]
    escape = 1.0 - counts / samples_per_box
    M = sparse.csr_matrix((np.ones(int(ok.sum())), (src[ok], tgt[ok])), shape=(N, N))
    M.sum_duplicates()
    rows = np.asarray(M.sum(axis=1)).ravel()
    scale = np.divide(1.0, rows, out=np.zeros(N), where=rows > 0)
    M = sparse.diags(scale) @ M
    return UlamOperator(grid, M.tocsr(), int(samples_per_box), seed, escape, retained)


@dataclass
class DiscreteMeasure:
    grid: BoxGrid
    weights: np.ndarray
    support_threshold: float
    iterations: int = 0
    n_closed_classes: int | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.grid.n_boxes,) or np.any(w < 0):
            raise UsageError("weights must be one nonnegative number per box")
        if abs(w.sum() - 1.0) > 1e-10:
            raise UsageError("weights must sum to 1")
        self.weights = w

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > self.support_threshold)

    def with_threshold(self, threshold: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.grid, self.weights, threshold, self.iterations, self.n_closed_classes)

    @property
    def ergodic_decomposition_unique(self) -> bool | None:
        return None if self.n_closed_classes is None else self.n_closed_classes == 1

    def to_csv(self) -> str:
        ids = np.flatnonzero(self.weights > 0)
        C = self.grid.centers(ids)
        head = ["box_id"] + [f"c{i}" for i in range(self.grid.dimension)] + ["weight"]
        lines = [",".join(head)]
        for b, c, w in zip(ids, C, self.weights[ids]):
            lines.append(",".join([str(int(b))] + [repr(float(v)) for v in c] + [repr(float(w))]))
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str | os.PathLike) -> None:
        _atomic_write(path, self.to_csv())


def _closed_classes(P: sparse.csr_matrix, retained: np.ndarray) -> int:
    """Number of communicating classes with no exit, among retained boxes."""
    G = P.copy()
    G.data[:] = 1
    nc, lab = connected_components(G, directed=True, connection="strong")
    src = np.repeat(np.arange(G.shape[0]), np.diff(G.indptr))
    cross = lab[src] != lab[G.indices]
    leaky = np.zeros(nc, dtype=bool)
    leaky[lab[src[cross]]] = True
    live = np.zeros(nc, dtype=bool)
    live[lab[retained]] = True
    return int(np.sum(live & ~leaky))


def stationary_distribution(op: UlamOperator, tol: float = 1e-12, max_iter: int = 100_000,
                            support_threshold: float | None = None) -> DiscreteMeasure:
    """Fixed vector of the Ulam operator by power iteration from the uniform vector.

    Mass lost to removed rows is renormalised away at each step.  The number
    of closed communicating classes is recorded so that a non-unique ergodic
    decomposition can be flagged.
    """
    P = op.matrix
    N = op.n_boxes
    if op.retained.sum() == 0:
        raise NumericalError("every box escapes; no invariant mass")
    nu = op.retained / op.retained.sum()
    PT = P.T.tocsr()
    history = []
    for k in range(1, max_iter + 1):
        nxt = PT @ nu
        total = nxt.sum()
        if total <= 0:
            raise NumericalError("all mass escaped during iteration")
        nxt /= total
        change = float(np.abs(nxt - nu).sum())
        nu = nxt
        if change < tol:
            break
        history.append(change)
    else:
        tail = history[-6:]
        raise NumericalError(f"power iteration did not converge in {max_iter} steps; "
                             f"last L1 changes {['%.2e' % c for c in tail]} (oscillation suggests periodicity)")
    thr = 1.0 / (10.0 * N) if support_threshold is None else float(support_threshold)
    nu = np.clip(nu, 0.0, None)
    nu /= nu.sum()
    return DiscreteMeasure(op.grid, nu, thr, k, _closed_classes(P, op.retained))


@dataclass
class SupportReport:
    passed: bool
    violations: list[int]
    support_size: int
    morse_nodes_hit: list[int]
    attractor_free: bool | None
    ergodic_decomposition_unique: bool | None

    def to_dict(self) -> dict:
        return {"passed": self.passed, "verdict": "PASS" if self.passed else "FAIL",
                "violations": self.violations, "support_size": self.support_size,
                "morse_nodes_hit": self.morse_nodes_hit, "attractor_free": self.attractor_free,
                "ergodic_decomposition_unique": self.ergodic_decomposition_unique}


def check_support_chain_recurrent(measure: DiscreteMeasure, graph: ChainGraph) -> SupportReport:
    """PASS iff every support box lies in the one-box dilation of the chain recurrent boxes.

    When the support meets exactly one Morse node, that node must also be
    attractor-free.
    """
    if not measure.grid.same_as(graph.grid):
        raise UsageError("measure and graph live on different grids")
    support = measure.support
    cr = chain_recurrent_boxes(graph)
    near = np.zeros(graph.grid.n_boxes, dtype=bool)
    near[dilate(graph.grid, cr, 1)] = True
    violations = support[~near[support]].tolist()
    mg = morse_graph(graph)
    in_support = np.zeros(graph.grid.n_boxes, dtype=bool)
    in_support[support] = True
    hit = [i for i, c in enumerate(mg.nodes) if in_support[c.boxes].any()]
    af = None
    if len(hit) == 1:
        af = is_attractor_free(graph, mg.nodes[hit[0]].boxes)
    passed = not violations and af is not False
    return SupportReport(passed, violations, int(support.size), hit, af, measure.ergodic_decomposition_unique)


# ------------------------------------------------------------------ entropy

def separation_steps(traj: np.ndarray, eps: float, chunk: int = 512) -> np.ndarray:
    """First step at which each pair of segments is more than ``eps`` apart.

    ``traj`` has shape ``(n, M, dim)``; the result is ``(M, M)`` with values
    in ``1..n``, or ``n + 1`` for pairs that never separate.
    """
    n, M, _ = traj.shape
    dtype = np.int16 if n < 32000 else np.int32
    sep = np.full((M, M), n + 1, dtype=dtype)
    for j in range(n):
        P = traj[j]
        for a in range(0, M, chunk):
            D = np.abs(P[a:a + chunk, None, :] - P[None, :, :]).max(axis=2)
            block = sep[a:a + chunk]
            block[(D > eps) & (block > n)] = j + 1
    return sep


def separated_counts(traj: np.ndarray, eps: float) -> np.ndarray:
    """Greedy ``(k, eps)``-separated set sizes for ``k = 1..n``."""
    n, M, _ = traj.shape
    sep = separation_steps(traj, eps)
    counts = np.empty(n, dtype=np.int64)
    for k in range(1, n + 1):
        chosen = np.zeros(M, dtype=bool)
        close = np.zeros(M, dtype=bool)  # within eps of a chosen segment up to step k
        for i in range(M):
            if close[i]:
                continue
            chosen[i] = True
            close |= sep[i] > k
        counts[k - 1] = int(chosen.sum())
    return counts


@dataclass
class EntropyReport:
    value: float
    counts: list[int]
    rates: list[float]
    n: int
    eps: float
    n_segments: int
    n_escaped: int
    k_min: int

    def to_dict(self) -> dict:
        return {"value": self.value, "counts": self.counts, "rates": self.rates, "n": self.n, "eps": self.eps,
                "n_segments": self.n_segments, "n_escaped": self.n_escaped, "k_min": self.k_min}


def entropy_estimate(sys, start_set, n: int = 20, eps: float = 0.05, T_step: float = 0.5) -> EntropyReport:
    """Growth rate of greedy ``(k, eps)``-separated orbit segments.

    Segments are ``S y, ..., S^k y`` for ``y`` in ``start_set``; flows use the
    time-``T_step`` map.  The estimate averages ``log(count_k) / k`` over the
    top third of ``k`` values.
    """
    if n < 2 or not eps > 0:
        raise UsageError("need n >= 2 and eps > 0")
    S = TimeTMap(sys, T_step) if sys.kind == SEMIFLOW else sys
    X = np.atleast_2d(np.asarray(start_set, dtype=float))
    traj = []
    escaped = np.zeros(len(X), dtype=bool)
    cur = X
    for _ in range(n):
        cur, esc = map_points(S, cur)
        escaped |= esc
        cur = np.where(escaped[:, None], 0.0, cur)
        traj.append(cur)
    if escaped.all():
        raise EscapeError("every orbit left the inflated domain")
    traj = np.stack(traj)[:, ~escaped]
    counts = separated_counts(traj, eps)
    rates = [math.log(c) / k for k, c in enumerate(counts, start=1)]
    k_min = math.ceil(2 * n / 3)
    value = float(np.mean(rates[k_min - 1:]))
    return EntropyReport(value, counts.tolist(), rates, n, float(eps), int(traj.shape[1]), int(escaped.sum()), k_min)


def trapped_seeds(sys, n_seeds: int = 2000, rng_seed=0, burn_in: int = 100, region=None, T_step: float = 0.5,
                  max_rounds: int = 50) -> np.ndarray:
    """Seeds that have already survived ``burn_in`` steps inside the domain.

    ``region`` (``(lower, upper)``) narrows where candidates are drawn; it
    defaults to the system's domain.
    """
    S = TimeTMap(sys, T_step) if sys.kind == SEMIFLOW else sys
    lo, hi = (S.lower, S.upper) if region is None else (np.asarray(region[0], float), np.asarray(region[1], float))
    rng = np.random.default_rng(rng_seed)
    kept = []
    have = 0
    for _ in range(max_rounds):
        Y = lo + rng.random((2 * n_seeds, lo.size)) * (hi - lo)
        alive = np.ones(len(Y), dtype=bool)
        for _ in range(burn_in):
            Y, esc = map_points(S, Y)
            alive &= ~esc & np.all((Y >= S.lower) & (Y <= S.upper), axis=1)
            Y = np.where(alive[:, None], Y, 0.5 * (S.lower + S.upper))
        kept.append(Y[alive])
        have += int(alive.sum())
        if have >= n_seeds:
            break
    if have == 0:
        raise EscapeError("no candidate survived the burn-in")
    return np.concatenate(kept)[:n_seeds]
