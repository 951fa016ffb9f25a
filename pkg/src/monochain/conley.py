"""Conley-type analysis of chain digraphs.

Strongly connected components play the role of chain transitive sets, the
condensation restricted to nontrivial components is the Morse graph, and
attractors are its sinks together with a trapping neighbourhood of boxes.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.csgraph import connected_components

from .enclosure import ChainGraph, dilate
from .errors import StructureViolation, UsageError
from .order import DEFAULT_ORDER, ConeOrder, boxes_comparable

__all__ = [
    "ChainComponent",
    "MorseGraph",
    "Attractor",
    "CyclicDecomposition",
    "component_labels",
    "scc_decomposition",
    "nontrivial_components",
    "chain_recurrent_boxes",
    "forward_chain_set",
    "chain_equivalent",
    "restrict",
    "morse_graph",
    "find_attractors",
    "is_attractor_free",
    "cyclic_decomposition",
    "brute_force_sccs",
]

MAX_TRAP_RINGS = 6


@dataclass(frozen=True, eq=False)
class ChainComponent:
    id: int
    boxes: np.ndarray
    trivial: bool

    @property
    def size(self) -> int:
        return int(self.boxes.size)

    def box_set(self) -> set[int]:
        return set(int(b) for b in self.boxes)

    def __repr__(self):
        kind = "trivial" if self.trivial else "nontrivial"
        return f"ChainComponent(id={self.id}, size={self.size}, {kind})"


@dataclass(frozen=True)
class _Labels:
    labels: np.ndarray
    n_components: int
    nontrivial: np.ndarray


def _topological_fix(csr, labels, nc):
    """Renumber components so every cross edge goes from a higher to a lower label."""
    src = np.repeat(np.arange(csr.shape[0]), np.diff(csr.indptr))
    a, b = labels[src], labels[csr.indices]
    cross = a != b
    if not np.any(a[cross] < b[cross]):
        return labels
    cond = sparse.csr_matrix((np.ones(cross.sum()), (a[cross], b[cross])), shape=(nc, nc))
    indeg = np.diff(cond.tocsc().indptr)
    queue = deque(np.flatnonzero(indeg == 0).tolist())
    order = []
    while queue:
        c = queue.popleft()
        order.append(c)
        for d in cond.indices[cond.indptr[c]:cond.indptr[c + 1]]:
            indeg[d] -= 1
            if indeg[d] == 0:
                queue.append(d)
    rank = np.empty(nc, dtype=np.int64)
    rank[np.asarray(order)] = np.arange(nc - 1, -1, -1)
    return rank[labels]


def component_labels(graph: ChainGraph) -> _Labels:
    """Component label per node; labels are in reverse topological order (sinks first)."""
    if "labels" in graph.cache:
        return graph.cache["labels"]
    csr = graph.to_csr()
    nc, labels = connected_components(csr, directed=True, connection="strong")
    labels = _topological_fix(csr, labels.astype(np.int64), nc)
    sizes = np.bincount(labels, minlength=nc)
    nontrivial = sizes > 1
    loops = graph.self_loops()
    nontrivial[labels[loops]] = True
    out = _Labels(labels, int(nc), nontrivial)
    graph.cache["labels"] = out
    return out


def scc_decomposition(graph: ChainGraph) -> list[ChainComponent]:
    """All strongly connected components, sinks first (reverse topological order).

    EXIT and inactive boxes show up as trivial singletons.
    """
    lab = component_labels(graph)
    order = np.argsort(lab.labels, kind="stable")
    cuts = np.searchsorted(lab.labels[order], np.arange(lab.n_components + 1))
    return [ChainComponent(c, order[cuts[c]:cuts[c + 1]].astype(np.int64), not bool(lab.nontrivial[c]))
            for c in range(lab.n_components)]


def nontrivial_components(graph: ChainGraph) -> list[ChainComponent]:
    return [c for c in scc_decomposition(graph) if not c.trivial]


def chain_recurrent_boxes(graph: ChainGraph) -> np.ndarray:
    lab = component_labels(graph)
    mask = lab.nontrivial[lab.labels]
    mask[graph.EXIT] = False
    return np.flatnonzero(mask)


def _csr(graph: ChainGraph):
    if "csr" not in graph.cache:
        graph.cache["csr"] = graph.to_csr()
    return graph.cache["csr"]


def _successors(graph: ChainGraph, ids: np.ndarray) -> np.ndarray:
    return _csr(graph)[ids].indices.astype(np.int64)


def _bfs(graph: ChainGraph, starts, allowed: np.ndarray | None = None) -> np.ndarray:
    seen = np.zeros(graph.n_nodes, dtype=bool)
    frontier = np.unique(np.asarray(starts, dtype=np.int64))
    while frontier.size:
        nxt = _successors(graph, frontier)
        if allowed is not None:
            nxt = nxt[allowed[nxt]]
        nxt = np.unique(nxt)
        nxt = nxt[~seen[nxt]]
        seen[nxt] = True
        frontier = nxt
    return seen


def forward_chain_set(graph: ChainGraph, u) -> np.ndarray:
    """Boxes reachable from ``u`` by a path of length >= 1 (EXIT excluded)."""
    u = graph.check_node(u)
    seen = _bfs(graph, [u])
    seen[graph.EXIT] = False
    return np.flatnonzero(seen)


def chain_equivalent(graph: ChainGraph, u, v) -> bool:
    u, v = graph.check_node(u), graph.check_node(v)
    lab = component_labels(graph)
    if u == v:
        return bool(graph.has_self_loop(u)) or bool(lab.nontrivial[lab.labels[u]])
    return bool(lab.labels[u] == lab.labels[v] and lab.nontrivial[lab.labels[u]])


def restrict(graph: ChainGraph, boxes) -> ChainGraph:
    """Subgraph keeping only edges whose endpoints both lie in ``boxes``."""
    ids = graph.grid.check_ids(np.asarray(list(boxes) if not isinstance(boxes, np.ndarray) else boxes))
    keep = np.zeros(graph.n_nodes, dtype=bool)
    keep[ids] = True
    src, tgt = graph.edge_arrays()
    m = keep[src] & keep[tgt]
    g = ChainGraph.from_edges(graph.grid, np.stack([src[m], tgt[m]], axis=1), graph.epsilon,
                              samples_per_box=graph.samples_per_box, seed=graph.seed, times=graph.times,
                              R=graph.R, active=keep[:-1].copy(), system=graph.system)
    return g


# ------------------------------------------------------------------ Morse graph

@dataclass
class MorseGraph:
    """Nontrivial components with reachability edges ``(i, j)`` between node indices."""

    nodes: list[ChainComponent]
    edges: list[tuple[int, int]]
    closure: bool = True

    def __post_init__(self):
        k = len(self.nodes)
        adj = [[] for _ in range(k)]
        for i, j in self.edges:
            if not (0 <= i < k and 0 <= j < k) or i == j:
                raise UsageError(f"bad Morse edge {(i, j)}")
            adj[i].append(j)
        state = [0] * k
        for root in range(k):
            if state[root]:
                continue
            stack = [(root, iter(adj[root]))]
            state[root] = 1
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    state[node] = 2
                    stack.pop()
                elif state[nxt] == 1:
                    raise UsageError("Morse graph must be acyclic; found a cycle of components")
                elif state[nxt] == 0:
                    state[nxt] = 1
                    stack.append((nxt, iter(adj[nxt])))

    def successors(self, i: int) -> list[int]:
        return sorted(j for a, j in self.edges if a == i)

    def sinks(self) -> list[int]:
        out = {i for i, _ in self.edges}
        return [i for i in range(len(self.nodes)) if i not in out]

    def sources(self) -> list[int]:
        inn = {j for _, j in self.edges}
        return [i for i in range(len(self.nodes)) if i not in inn]

    def node_of_box(self, box: int) -> int | None:
        for i, c in enumerate(self.nodes):
            k = np.searchsorted(c.boxes, box)
            if k < c.size and c.boxes[k] == box:
                return i
        return None

    def hasse_edges(self) -> list[tuple[int, int]]:
        """Transitive reduction of the reachability edges."""
        succ = {i: set(self.successors(i)) for i in range(len(self.nodes))}
        red = []
        for i, j in sorted(self.edges):
            if not any(j in succ[k] for k in succ[i] if k != j):
                red.append((i, j))
        return red

    def to_dot(self, labels: dict[int, str] | None = None) -> str:
        lines = ["digraph morse {", "  rankdir=TB;"]
        for i, c in enumerate(self.nodes):
            extra = f"\\n{labels[i]}" if labels and i in labels else ""
            lines.append(f'  n{i} [label="C{c.id} ({c.size} boxes){extra}"];')
        for i, j in self.hasse_edges():
            lines.append(f"  n{i} -> n{j};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def morse_graph(graph: ChainGraph) -> MorseGraph:
    if "morse" in graph.cache:
        return graph.cache["morse"]
    lab = component_labels(graph)
    L = lab.labels
    src, tgt = graph.edge_arrays()
    a, b = L[src], L[tgt]
    cross = a != b
    nc = lab.n_components
    cond = sparse.csr_matrix((np.ones(int(cross.sum()), dtype=np.int8), (a[cross], b[cross])), shape=(nc, nc))
    cond.sum_duplicates()
    nodes_c = np.flatnonzero(lab.nontrivial)
    node_index = {int(c): i for i, c in enumerate(nodes_c)}
    bit = [0] * nc
    for c, i in node_index.items():
        bit[c] = 1 << i
    reach = [0] * nc
    # labels ascend from sinks, so successors are already finished
    ip, ix = cond.indptr, cond.indices
    for c in range(nc):
        r = 0
        for d in ix[ip[c]:ip[c + 1]]:
            r |= reach[d] | bit[d]
        reach[c] = r
    comps = scc_decomposition(graph)
    nodes = [comps[int(c)] for c in nodes_c]
    edges = []
    for c, i in node_index.items():
        r = reach[c]
        j = 0
        while r:
            if r & 1:
                edges.append((i, j))
            r >>= 1
            j += 1
    mg = MorseGraph(nodes, sorted(edges))
    graph.cache["morse"] = mg
    return mg


# ------------------------------------------------------------------ attractors

@dataclass
class Attractor:
    component: ChainComponent
    neighborhood: np.ndarray | None
    rings: int | None

    @property
    def trapped(self) -> bool:
        return self.neighborhood is not None


def _interior(graph: ChainGraph, member: np.ndarray) -> np.ndarray:
    """Boxes of ``member`` whose in-grid neighbours all belong to ``member``."""
    grid = graph.grid
    mask = member[:grid.n_boxes].reshape(grid.shape)
    structure = ndimage.generate_binary_structure(grid.dimension, grid.dimension)
    inner = ndimage.binary_erosion(mask, structure=structure, border_value=1)
    return inner.ravel()


def _trapping_neighborhood(graph: ChainGraph, comp: ChainComponent, allowed: np.ndarray, max_rings: int):
    """Grow ``N`` greedily: forward closure, then one ring of dilation, up to ``max_rings`` rings."""
    member = np.zeros(graph.n_nodes, dtype=bool)
    member[comp.boxes] = True
    for k in range(max_rings + 1):
        if k:
            ring = dilate(graph.grid, np.flatnonzero(member[:-1]), 1)
            member[ring[allowed[ring]]] = True
        member |= _bfs(graph, np.flatnonzero(member), allowed)
        if member[graph.EXIT]:
            return None, None
        ids = np.flatnonzero(member)
        succ = _successors(graph, ids)
        succ = succ[allowed[succ]]
        if np.all(_interior(graph, member)[succ]):
            return ids, k
    return None, None


def find_attractors(graph: ChainGraph, within=None, max_rings: int = MAX_TRAP_RINGS) -> list[Attractor]:
    """Proper attractors: Morse sinks (of the restriction, if given) with trapping neighbourhoods.

    A sink that already covers every box under consideration is the whole
    space, not a proper attractor, and is left out.
    """
    g = graph if within is None else restrict(graph, within)
    allowed = np.ones(g.n_nodes, dtype=bool)
    if within is not None:
        allowed[:] = False
        allowed[g.active_ids] = True
    mg = morse_graph(g)
    universe = g.active_ids.size
    out = []
    for i in mg.sinks():
        comp = mg.nodes[i]
        if comp.size == universe:
            continue
        nbhd, rings = _trapping_neighborhood(g, comp, allowed, max_rings)
        out.append(Attractor(comp, nbhd, rings))
    return out


def is_attractor_free(graph: ChainGraph, component_boxes) -> bool:
    """True iff the restriction to ``component_boxes`` is one strongly connected recurrent piece."""
    ids = np.unique(np.asarray(list(component_boxes), dtype=np.int64))
    if ids.size == 0:
        raise UsageError("empty box set")
    g = restrict(graph, ids)
    dead = ids[np.diff(g.indptr)[ids] == 0]
    if dead.size:
        raise UsageError(f"box set is not forward-closed: box {int(dead[0])} has no successor inside it")
    lab = component_labels(g)
    labs = np.unique(lab.labels[ids])
    return bool(labs.size == 1 and lab.nontrivial[labs[0]])


# ------------------------------------------------------------------ cyclic decomposition

@dataclass
class CyclicDecomposition:
    pieces: list[np.ndarray]
    d: int
    m: int
    diagnostics: dict = field(default_factory=dict)


def _successors_in(graph: ChainGraph, ids: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    if ids.size == 0:
        return ids
    nxt = _successors(graph, ids)
    return np.unique(nxt[allowed[nxt]])


def cyclic_decomposition(graph_S: ChainGraph, graph_Sm: ChainGraph, K, m: int,
                         order: ConeOrder = DEFAULT_ORDER) -> CyclicDecomposition:
    """Split a component ``K`` into the pieces ``S^i L(a)`` and check they are mutually unordered.

    ``L(a)`` is the forward set of the smallest box ``a`` of ``K`` in the
    ``S^m`` graph restricted to ``K``.  Overlapping images are merged, the
    number of pieces must divide ``m``, and no two boxes from different
    pieces may be comparable (closed boxes, exists-exists).
    """
    if int(m) < 1:
        raise UsageError("m must be >= 1")
    m = int(m)
    if not graph_S.grid.same_as(graph_Sm.grid):
        raise UsageError("the S and S^m graphs must share a grid")
    boxes = K.boxes if isinstance(K, ChainComponent) else np.asarray(list(K), dtype=np.int64)
    boxes = np.unique(boxes)
    if boxes.size == 0:
        raise UsageError("empty component")
    allowed = np.zeros(graph_S.n_nodes, dtype=bool)
    allowed[boxes] = True
    a = int(boxes[0])
    L = np.flatnonzero(_bfs(graph_Sm, [a], allowed))
    if L.size == 0:
        L = np.array([a], dtype=np.int64)
    images = [L]
    for _ in range(1, m):
        images.append(_successors_in(graph_S, images[-1], allowed))
    # union-find over overlapping images
    parent = list(range(m))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner = {}
    for i, piece in enumerate(images):
        for b in piece.tolist():
            j = owner.setdefault(b, i)
            if find(j) != find(i):
                parent[find(i)] = find(j)
    groups: dict[int, list[np.ndarray]] = {}
    for i, piece in enumerate(images):
        groups.setdefault(find(i), []).append(piece)
    pieces = [np.unique(np.concatenate(v)) for _, v in sorted(groups.items())]
    pieces = [p for p in pieces if p.size]
    d = len(pieces)
    covered = np.unique(np.concatenate(pieces))
    diagnostics = {"a": a, "L_size": int(L.size), "image_sizes": [int(p.size) for p in images]}
    if m % d:
        raise StructureViolation(f"{d} pieces do not divide m={m}", witness={"d": d, "m": m})
    missing = np.setdiff1d(boxes, covered)
    if missing.size:
        raise StructureViolation("pieces do not cover the component", witness={"uncovered": missing.tolist()})
    grid = graph_S.grid
    for i in range(d):
        lo_i, hi_i = grid.bounds(pieces[i])
        for j in range(i + 1, d):
            lo_j, hi_j = grid.bounds(pieces[j])
            s = order.sign
            A_lo, A_hi, B_lo, B_hi = (lo_i, hi_i, lo_j, hi_j) if s > 0 else (-hi_i, -lo_i, -hi_j, -lo_j)
            up = np.all(A_lo[:, None, :] <= B_hi[None, :, :], axis=2)
            down = np.all(B_lo[None, :, :] <= A_hi[:, None, :], axis=2)
            bad = up | down
            if bad.any():
                p, q = np.unravel_index(int(np.argmax(bad)), bad.shape)
                bp, bq = int(pieces[i][p]), int(pieces[j][q])
                assert boxes_comparable(*grid.bounds(bp), *grid.bounds(bq), order)
                raise StructureViolation(
                    f"boxes {bp} (piece {i}) and {bq} (piece {j}) are comparable",
                    witness={"boxes": (bp, bq), "pieces": (i, j)})
    return CyclicDecomposition(pieces, d, m, diagnostics)


# ------------------------------------------------------------------ oracle

def brute_force_sccs(n: int, edges) -> list[frozenset[int]]:
    """Mutual-reachability classes by transitive closure (for testing)."""
    R = np.eye(n, dtype=bool)
    for u, v in edges:
        R[u, v] = True
    for k in range(n):
        R = R | (R[:, k:k + 1] & R[k:k + 1, :])
    M = R & R.T
    seen, out = set(), []
    for i in range(n):
        if i not in seen:
            cls = frozenset(np.flatnonzero(M[i]).tolist())
            seen |= cls
            out.append(cls)
    return out
