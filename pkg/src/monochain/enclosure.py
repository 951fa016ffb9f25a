"""Box grids and the chain digraphs built on them.

A graph node is a box id (flat C-order index into the grid) plus one extra
node, ``EXIT``, which absorbs every image that leaves the inflated domain or
lands farther than ``epsilon`` from the grid.  An edge ``b -> c`` records
that some sample ``y`` in ``b`` has an image within ``epsilon`` of ``c``.
"""
from __future__ import annotations

import io
import os
import tempfile
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import ndimage, sparse

from .errors import UsageError
from .systems import MAP, SEMIFLOW, flow_points, map_points

__all__ = [
    "BoxGrid",
    "ChainGraph",
    "build_grid",
    "build_chain_graph",
    "build_semiflow_chain_graph",
    "refine",
    "dilate",
    "default_samples",
    "read_edges",
]

CHUNK_POINTS = 200_000


@dataclass(frozen=True, eq=False)
class BoxGrid:
    lower: np.ndarray
    upper: np.ndarray
    subdivisions: tuple[int, ...]

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        subs = tuple(int(s) for s in np.atleast_1d(self.subdivisions))
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size == 0:
            raise UsageError("domain corners must be 1-d vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(hi > lo)):
            raise UsageError("degenerate domain: need finite lower << upper")
        if len(subs) != lo.size or min(subs) < 1:
            raise UsageError("need one positive subdivision count per axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "subdivisions", subs)

    @property
    def dimension(self) -> int:
        return int(self.lower.size)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.subdivisions

    @property
    def n_boxes(self) -> int:
        return int(np.prod(self.subdivisions))

    @property
    def widths(self) -> np.ndarray:
        return (self.upper - self.lower) / np.asarray(self.subdivisions)

    @property
    def box_diameter(self) -> float:
        return float(self.widths.max())

    def same_as(self, other: "BoxGrid") -> bool:
        return (self.subdivisions == other.subdivisions
                and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))

    def multi_index(self, ids) -> np.ndarray:
        ids = self.check_ids(ids)
        return np.stack(np.unravel_index(ids, self.shape), axis=-1)

    def box_id(self, multi) -> np.ndarray:
        M = np.atleast_2d(np.asarray(multi, dtype=np.int64))
        return np.ravel_multi_index(tuple(M.T), self.shape).astype(np.int64)

    def check_ids(self, ids) -> np.ndarray:
        a = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        if a.size and (a.min() < 0 or a.max() >= self.n_boxes):
            raise UsageError("box id outside the grid")
        return a

    def box_of(self, points) -> np.ndarray:
        """Box ids of points; points on the upper boundary go to the last box."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        if P.shape[1] != self.dimension:
            raise UsageError("point dimension does not match the grid")
        if np.any(P < self.lower) or np.any(P > self.upper):
            raise UsageError("point outside the grid domain")
        J = np.floor((P - self.lower) / self.widths).astype(np.int64)
        J = np.minimum(J, np.asarray(self.subdivisions) - 1)
        return self.box_id(J)

    def bounds(self, ids) -> tuple[np.ndarray, np.ndarray]:
        J = self.multi_index(ids)
        lo = self.lower + J * self.widths
        return lo, lo + self.widths

    def centers(self, ids=None) -> np.ndarray:
        if ids is None:
            ids = np.arange(self.n_boxes)
        lo, hi = self.bounds(ids)
        return 0.5 * (lo + hi)

    def spec(self) -> str:
        lo = ",".join(repr(float(v)) for v in self.lower)
        hi = ",".join(repr(float(v)) for v in self.upper)
        return f"lower={lo} upper={hi} subdivisions={'x'.join(map(str, self.subdivisions))}"


def build_grid(domain, subdivisions) -> BoxGrid:
    """``domain`` is ``(lower, upper)``; ``subdivisions`` an int or one int per axis."""
    lower, upper = domain
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    subs = np.atleast_1d(np.asarray(subdivisions))
    if subs.size == 1:
        subs = np.repeat(subs, lower.size)
    if np.any(subs < 1):
        raise UsageError("subdivisions must be >= 1 per axis")
    return BoxGrid(lower, np.atleast_1d(np.asarray(upper, dtype=float)), tuple(int(s) for s in subs))


def dilate(grid: BoxGrid, ids, rings: int = 1) -> np.ndarray:
    """Boxes within ``rings`` steps (Chebyshev, in index space) of ``ids``."""
    ids = grid.check_ids(ids)
    if rings <= 0 or ids.size == 0:
        return np.unique(ids)
    mask = np.zeros(grid.n_boxes, dtype=bool)
    mask[ids] = True
    mask = mask.reshape(grid.shape)
    structure = ndimage.generate_binary_structure(grid.dimension, grid.dimension)
    mask = ndimage.binary_dilation(mask, structure=structure, iterations=int(rings))
    return np.flatnonzero(mask.ravel())


def default_samples(dimension: int) -> int:
    return 2 ** dimension + 1 + 8


@dataclass(eq=False)
class ChainGraph:
    """Chain digraph on a box grid, stored as sorted CSR adjacency.

    Node ids ``0..grid.n_boxes-1`` are boxes; ``grid.n_boxes`` is ``EXIT``.
    ``active`` marks the boxes whose images were computed (all of them
    unless the graph came from :func:`refine`); inactive boxes have no edges.
    """

    grid: BoxGrid
    epsilon: float
    indptr: np.ndarray
    indices: np.ndarray
    samples_per_box: int = 0
    seed: int | None = None
    times: tuple[float, ...] | None = None
    R: float | None = None
    active: np.ndarray | None = None
    system: object = None
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.grid.n_boxes + 1

    @property
    def EXIT(self) -> int:
        return self.grid.n_boxes

    @property
    def n_edges(self) -> int:
        return int(self.indices.size)

    @property
    def active_ids(self) -> np.ndarray:
        if self.active is None:
            return np.arange(self.grid.n_boxes)
        return np.flatnonzero(self.active)

    def check_node(self, u) -> int:
        u = int(u)
        if not 0 <= u < self.n_nodes:
            raise UsageError(f"unknown box id {u}")
        return u

    def successors(self, u) -> np.ndarray:
        u = self.check_node(u)
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def has_edge(self, u, v) -> bool:
        s = self.successors(u)
        k = np.searchsorted(s, v)
        return bool(k < s.size and s[k] == v)

    def has_self_loop(self, u) -> bool:
        return self.has_edge(u, u)

    def self_loops(self) -> np.ndarray:
        if "self_loops" not in self.cache:
            src, tgt = self.edge_arrays()
            loops = np.zeros(self.n_nodes, dtype=bool)
            loops[src[src == tgt]] = True
            self.cache["self_loops"] = loops
        return self.cache["self_loops"]

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        src = np.repeat(np.arange(self.n_nodes, dtype=np.int64), np.diff(self.indptr))
        return src, self.indices.astype(np.int64)

    def to_csr(self) -> sparse.csr_matrix:
        data = np.ones(self.indices.size, dtype=np.int8)
        return sparse.csr_matrix((data, self.indices, self.indptr), shape=(self.n_nodes, self.n_nodes))

    @classmethod
    def from_edges(cls, grid: BoxGrid, edges, epsilon: float | None = None, **kw) -> "ChainGraph":
        """Graph from explicit ``(source, target)`` pairs; handy for synthetic tests."""
        E = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        n = grid.n_boxes + 1
        if E.size and (E.min() < 0 or E.max() >= n):
            raise UsageError("edge endpoint outside the node range")
        if E.size and np.any(E[:, 0] == grid.n_boxes):
            raise UsageError("EXIT cannot have outgoing edges")
        indptr, indices = _csr(E[:, 0], E[:, 1], n)
        eps = grid.box_diameter if epsilon is None else float(epsilon)
        return cls(grid, eps, indptr, indices, **kw)

    # ------------------------------------------------------------ export

    def header_lines(self) -> list[str]:
        times = "none" if self.times is None else ",".join(repr(float(t)) for t in self.times)
        return [
            "# monochain chain-graph edge list v1",
            f"# grid {self.grid.spec()}",
            f"# epsilon={float(self.epsilon)!r}",
            f"# seed={self.seed} samples_per_box={self.samples_per_box}",
            f"# times={times} R={self.R}",
            f"# nodes={self.n_nodes} exit={self.EXIT} edges={self.n_edges}",
        ]

    def edges_text(self) -> str:
        src, tgt = self.edge_arrays()
        buf = io.StringIO()
        buf.write("\n".join(self.header_lines()) + "\n")
        np.savetxt(buf, np.stack([src, tgt], axis=1), fmt="%d")
        return buf.getvalue()

    def write_edges(self, path) -> None:
        _atomic_write(path, self.edges_text())

    def centers_csv(self, ids=None) -> str:
        ids = self.active_ids if ids is None else self.grid.check_ids(ids)
        C = self.grid.centers(ids)
        cols = ["box_id"] + [f"c{i}" for i in range(self.grid.dimension)]
        lines = [",".join(cols)]
        for b, row in zip(ids, C):
            lines.append(",".join([str(int(b))] + [repr(float(v)) for v in row]))
        return "\n".join(lines) + "\n"

    def write_centers_csv(self, path, ids=None) -> None:
        _atomic_write(path, self.centers_csv(ids))


def _atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_edges(path) -> ChainGraph:
    """Inverse of :meth:`ChainGraph.write_edges` (the system is not restored)."""
    meta = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    for ln in lines:
        if not ln.startswith("# "):
            continue
        for tok in ln[2:].split():
            if "=" in tok:
                k, v = tok.split("=", 1)
                meta[k] = v
    try:
        grid = BoxGrid(np.array(meta["lower"].split(","), dtype=float),
                       np.array(meta["upper"].split(","), dtype=float),
                       tuple(int(s) for s in meta["subdivisions"].split("x")))
        eps = float(meta["epsilon"])
    except KeyError as exc:
        raise UsageError(f"edge file {path} lacks header field {exc}") from None
    E = np.array([ln.split() for ln in body], dtype=np.int64).reshape(-1, 2)
    times = None if meta.get("times", "none") == "none" else tuple(float(t) for t in meta["times"].split(","))
    seed = None if meta.get("seed", "None") == "None" else int(meta["seed"])
    R = None if meta.get("R", "None") == "None" else float(meta["R"])
    g = ChainGraph.from_edges(grid, E, eps, samples_per_box=int(meta.get("samples_per_box", 0)),
                              seed=seed, times=times, R=R)
    return g


# ------------------------------------------------------------------ building

def _csr(src: np.ndarray, tgt: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    key = np.unique(src.astype(np.int64) * n + tgt.astype(np.int64))
    s, t = np.divmod(key, n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(s, minlength=n), out=indptr[1:])
    return indptr, t.astype(np.int64)


def _sample_points(grid: BoxGrid, ids: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Corners, centre, then seeded interior points of each box; shape ``(B, S, n)``."""
    lo, _ = grid.bounds(ids)
    w = grid.widths
    n = grid.dimension
    fixed = np.array(list(product((0.0, 1.0), repeat=n)) + [[0.5] * n])
    frac = np.concatenate([np.broadcast_to(fixed, (len(ids),) + fixed.shape), offsets], axis=1)
    return lo[:, None, :] + frac * w


def _targets(grid: BoxGrid, Y: np.ndarray, src: np.ndarray, epsilon: float, escaped: np.ndarray,
             active: np.ndarray | None):
    """All ``(source, target)`` pairs with ``dist(y, target box) < epsilon``."""
    n = grid.dimension
    N = grid.n_boxes
    subs = np.asarray(grid.subdivisions)
    e = epsilon / grid.widths
    ok = ~escaped
    U = (Y[ok] - grid.lower) / grid.widths
    s_ok = src[ok]
    jmin = np.floor(U - e - 1.0).astype(np.int64) + 1
    jmax = np.ceil(U + e).astype(np.int64) - 1
    jmin = np.maximum(jmin, 0)
    jmax = np.minimum(jmax, subs - 1)
    span = int(np.max(np.ceil(2 * e + 1))) + 1
    hit = np.zeros(len(U), dtype=bool)
    out_s, out_t = [], []
    for off in product(range(span), repeat=n):
        J = jmin + np.asarray(off)
        good = np.all(J <= jmax, axis=1)
        if not good.any():
            continue
        t = np.ravel_multi_index(tuple(J[good].T), grid.shape).astype(np.int64)
        s = s_ok[good]
        if active is not None:
            inside = active[t]
            t = np.where(inside, t, N)
        keep = t != s
        out_s.append(s[keep])
        out_t.append(t[keep])
        hit[good] = True
    miss = np.concatenate([src[~ok], s_ok[~hit]])
    out_s.append(miss)
    out_t.append(np.full(miss.size, N, dtype=np.int64))
    return np.concatenate(out_s), np.concatenate(out_t)


def _assemble(sys, grid: BoxGrid, epsilon: float, samples_per_box: int, seed, active, image_fn):
    n = grid.dimension
    n_fixed = 2 ** n + 1
    if samples_per_box < n_fixed:
        raise UsageError(f"samples_per_box must be >= {n_fixed} (corners + centre)")
    if not epsilon >= grid.box_diameter * (1 - 1e-12):
        raise UsageError("epsilon must be at least the box diameter")
    ids = np.arange(grid.n_boxes) if active is None else np.flatnonzero(active)
    rng = np.random.default_rng(seed)
    offsets = rng.random((ids.size, samples_per_box - n_fixed, n))
    per_chunk = max(1, CHUNK_POINTS // samples_per_box)
    all_s, all_t = [], []
    for start in range(0, ids.size, per_chunk):
        chunk = ids[start:start + per_chunk]
        X = _sample_points(grid, chunk, offsets[start:start + per_chunk]).reshape(-1, n)
        src = np.repeat(chunk, samples_per_box)
        for Y, escaped in image_fn(X):
            s, t = _targets(grid, Y, src, epsilon, escaped, active)
            all_s.append(s)
            all_t.append(t)
            # a box loops to itself only when a sample returns within epsilon of itself
            near = ~escaped & (np.abs(Y - X).max(axis=1) < epsilon)
            loops = np.unique(src[near])
            all_s.append(loops)
            all_t.append(loops)
    src = np.concatenate(all_s) if all_s else np.zeros(0, np.int64)
    tgt = np.concatenate(all_t) if all_t else np.zeros(0, np.int64)
    return _csr(src, tgt, grid.n_boxes + 1)


def build_chain_graph(sys, grid: BoxGrid, epsilon: float | None = None, samples_per_box: int | None = None,
                      seed=0, active=None) -> ChainGraph:
    """Epsilon-chain digraph of a map-kind system (a map or a :class:`TimeTMap`)."""
    if sys.kind != MAP:
        raise UsageError("build_chain_graph needs a map-kind system; use build_semiflow_chain_graph")
    _check_grid(sys, grid)
    eps = grid.box_diameter if epsilon is None else float(epsilon)
    spb = default_samples(grid.dimension) if samples_per_box is None else int(samples_per_box)

    def images(X):
        yield map_points(sys, X)

    indptr, indices = _assemble(sys, grid, eps, spb, seed, active, images)
    return ChainGraph(grid, eps, indptr, indices, spb, seed, None, None, active, sys)


def build_semiflow_chain_graph(sys, grid: BoxGrid, epsilon: float | None = None, R: float = 1.0, times=None,
                               samples_per_box: int | None = None, seed=0, active=None) -> ChainGraph:
    """(R, epsilon)-chain digraph: edges from the time-``t`` maps for every ``t`` in ``times``."""
    if sys.kind != SEMIFLOW:
        raise UsageError("build_semiflow_chain_graph needs a semiflow")
    if not R > 0:
        raise UsageError("R must be positive")
    _check_grid(sys, grid)
    ts = (R, 1.5 * R, 2.0 * R) if times is None else tuple(sorted(float(t) for t in times))
    if not ts or ts[0] < R:
        raise UsageError("all sampled times must be >= R")
    eps = grid.box_diameter if epsilon is None else float(epsilon)
    spb = default_samples(grid.dimension) if samples_per_box is None else int(samples_per_box)

    def images(X):
        states, masks = flow_points(sys, X, ts)
        yield from zip(states, masks)

    indptr, indices = _assemble(sys, grid, eps, spb, seed, active, images)
    return ChainGraph(grid, eps, indptr, indices, spb, seed, ts, float(R), active, sys)


def _check_grid(sys, grid: BoxGrid) -> None:
    if grid.dimension != sys.dimension:
        raise UsageError("grid and system dimensions differ")


def refine(graph: ChainGraph, component_boxes, factor: int = 2) -> tuple[BoxGrid, ChainGraph]:
    """Subdivide a component plus a one-box halo and rebuild its chain graph.

    Only the fine boxes inside the halo are active; edges that leave them go
    to ``EXIT``.  Epsilon shrinks with the box diameter.
    """
    if int(factor) < 2:
        raise UsageError("factor must be >= 2")
    if graph.system is None:
        raise UsageError("graph carries no system to re-evaluate")
    ids = np.unique(np.asarray(list(component_boxes), dtype=np.int64))
    if ids.size == 0:
        raise UsageError("cannot refine an empty component")
    grid = graph.grid
    halo = dilate(grid, ids, 1)
    fine = BoxGrid(grid.lower, grid.upper, tuple(s * int(factor) for s in grid.subdivisions))
    parent = np.zeros(grid.n_boxes, dtype=bool)
    parent[halo] = True
    fine_multi = np.stack(np.unravel_index(np.arange(fine.n_boxes), fine.shape), axis=1) // int(factor)
    active = parent[grid.box_id(fine_multi)]
    eps = graph.epsilon * fine.box_diameter / grid.box_diameter
    if graph.times is None:
        g = build_chain_graph(graph.system, fine, eps, graph.samples_per_box, graph.seed, active)
    else:
        g = build_semiflow_chain_graph(graph.system, fine, eps, graph.R, graph.times,
                                       graph.samples_per_box, graph.seed, active)
    return fine, g
