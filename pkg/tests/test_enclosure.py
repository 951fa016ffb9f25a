from __future__ import annotations

import numpy as np
import pytest
from scipy import ndimage
from scipy.sparse.csgraph import breadth_first_order, shortest_path

from monochain import (BoxGrid, ChainGraph, UsageError, build_chain_graph, build_grid, build_semiflow_chain_graph,
                       chain_recurrent_boxes, default_samples, dilate, lookup, make_map, map_points,
                       nontrivial_components, read_edges, refine)
from monochain.enclosure import _sample_points


@pytest.fixture(scope="module")
def linear16():
    sys_ = lookup("linear-contraction")
    grid = build_grid((sys_.lower, sys_.upper), (16, 16))
    return sys_, grid, build_chain_graph(sys_, grid)


@pytest.fixture(scope="module")
def tanh64():
    sys_ = lookup("diagonal-tanh")
    grid = build_grid((sys_.lower, sys_.upper), (64, 64))
    return sys_, grid, build_semiflow_chain_graph(sys_, grid, R=1.0)


def _reach(graph: ChainGraph, u: int) -> set[int]:
    return set(breadth_first_order(graph.to_csr(), u, directed=True, return_predecessors=False).tolist())


def test_grid_arithmetic():
    g = build_grid(((0, 0), (1, 1)), (2, 2))
    assert g.n_boxes == 4 and g.box_diameter == 0.5
    g = build_grid(((-2, -2), (2, 2)), (64, 64))
    assert g.n_boxes == 4096 and g.box_diameter == 0.0625
    assert build_grid(((-2,) * 3, (2,) * 3), (32, 32, 32)).n_boxes == 32768
    with pytest.raises(UsageError):
        build_grid(((0, 0), (0, 1)), (2, 2))
    with pytest.raises(UsageError):
        build_grid(((0, 0), (1, 1)), (0, 2))


def test_box_id_bijection():
    g = build_grid(((-1, 0, 2), (1, 3, 4)), (3, 4, 5))
    ids = np.arange(g.n_boxes)
    np.testing.assert_array_equal(g.box_id(g.multi_index(ids)), ids)
    np.testing.assert_array_equal(g.box_of(g.centers(ids)), ids)
    lo, hi = g.bounds(ids)
    assert np.all(hi > lo)
    # the boxes tile the domain: total volume and no centre shared
    assert np.prod(hi - lo, axis=1).sum() == pytest.approx(np.prod(g.upper - g.lower))


def test_default_samples():
    assert default_samples(2) == 13
    assert default_samples(3) == 17


def test_origin_box_has_self_loop(linear16):
    _, grid, G = linear16
    assert G.has_self_loop(grid.box_of(np.zeros((1, 2)))[0])


def test_identity_edges_are_neighbourhood_adjacency():
    ident = make_map("identity", lambda X: X.copy(), (0, 0), (1, 1))
    grid = build_grid(((0, 0), (1, 1)), (8, 8))
    G = build_chain_graph(ident, grid)
    M = grid.multi_index(np.arange(grid.n_boxes))
    for b in range(grid.n_boxes):
        assert G.has_self_loop(b)
        cheb = np.abs(M - M[b]).max(axis=1)
        expected = set(np.flatnonzero(cheb <= 1).tolist())
        assert set(G.successors(b).tolist()) == expected


def test_linear_contraction_drains_into_origin_component(linear16):
    _, grid, G = linear16
    o = grid.box_of(np.zeros((1, 2)))[0]
    D = shortest_path(G.to_csr(), directed=True, unweighted=True)
    origin_comp = set(np.flatnonzero(np.isfinite(D[o]) & np.isfinite(D[:, o])).tolist())
    # oracle: brute-force reachability on the generated digraph
    for b in range(grid.n_boxes):
        assert np.isfinite(D[b, o])
    for b in origin_comp:
        assert set(G.successors(b).tolist()) <= origin_comp
    assert G.EXIT not in _reach(G, 0)


def test_diagonal_boxes_loop_and_chain_together(tanh64):
    _, grid, G = tanh64
    diag = grid.box_id(np.stack([np.arange(64)] * 2, axis=1))
    assert all(G.has_self_loop(b) for b in diag)
    D = shortest_path(G.to_csr(), directed=True, unweighted=True, indices=diag)
    for i in range(63):
        assert np.isfinite(D[i, diag[i + 1]]) and np.isfinite(D[i + 1, diag[i]])


def test_bistable_sink_cannot_reach_saddle():
    sys_ = lookup("bistable-coop")
    grid = build_grid((sys_.lower, sys_.upper), (128, 128))
    G = build_semiflow_chain_graph(sys_, grid, R=1.0)
    a = 0.9575040240765553
    origin, plus, minus = grid.box_of(np.array([[1e-9, 1e-9], [a, a], [-a, -a]]))
    assert origin not in _reach(G, plus)
    assert origin not in _reach(G, minus)
    assert plus not in _reach(G, minus) and minus not in _reach(G, plus)


def test_determinism_and_serialisation(tmp_path, linear16):
    sys_, grid, G = linear16
    H = build_chain_graph(sys_, grid)
    assert G.edges_text() == H.edges_text()
    G.write_edges(tmp_path / "g.edges")
    back = read_edges(tmp_path / "g.edges")
    assert back.edges_text() == G.edges_text()
    assert back.grid.same_as(grid) and back.epsilon == G.epsilon
    csv = G.centers_csv().splitlines()
    assert csv[0] == "box_id,c0,c1" and len(csv) == grid.n_boxes + 1


def test_epsilon_monotone(linear16):
    sys_, grid, G = linear16
    big = build_chain_graph(sys_, grid, epsilon=1.7 * grid.box_diameter)
    s1, t1 = G.edge_arrays()
    s2, t2 = big.edge_arrays()
    assert set(zip(s1.tolist(), t1.tolist())) <= set(zip(s2.tolist(), t2.tolist()))


def test_epsilon_below_diameter_rejected(linear16):
    sys_, grid, _ = linear16
    with pytest.raises(UsageError):
        build_chain_graph(sys_, grid, epsilon=0.5 * grid.box_diameter)
    with pytest.raises(UsageError):
        build_chain_graph(sys_, grid, samples_per_box=3)
    with pytest.raises(UsageError):
        build_semiflow_chain_graph(lookup("diagonal-tanh"), build_grid(((-2, -2), (2, 2)), (8, 8)),
                                   R=1.0, times=(0.5, 1.0))


def test_escape_goes_to_absorbing_exit():
    grow = make_map("grow", lambda X: 3.0 * X, (-1, -1), (1, 1))
    grid = build_grid(((-1, -1), (1, 1)), (8, 8))
    G = build_chain_graph(grow, grid)
    corner = grid.box_of(np.array([[0.95, 0.95]]))[0]
    assert G.has_edge(corner, G.EXIT)
    assert G.successors(G.EXIT).size == 0
    assert G.EXIT not in set(chain_recurrent_boxes(G).tolist())


def _replay_chain(sys_, graph: ChainGraph, path: list[int]) -> float:
    """Rebuild a point chain along a box path; return the worst step error."""
    grid = graph.grid
    n = grid.dimension
    n_fixed = 2 ** n + 1
    rng = np.random.default_rng(graph.seed)
    offsets = rng.random((grid.n_boxes, graph.samples_per_box - n_fixed, n))
    pts = []
    for b, nxt in zip(path[:-1], path[1:]):
        X = _sample_points(grid, np.array([b]), offsets[[b]])[0]
        Y, _ = map_points(sys_, X)
        lo, hi = grid.bounds([nxt])
        d = np.maximum(np.maximum(lo - Y, Y - hi), 0).max(axis=1)
        pts.append(X[int(np.argmin(d))])
    pts.append(grid.centers([path[-1]])[0])
    pts = np.array(pts)
    img, _ = map_points(sys_, pts[:-1])
    return float(np.abs(img - pts[1:]).max(axis=1).max())


def test_chain_replay_soundness(linear16):
    sys_, grid, G = linear16
    _, pred = shortest_path(G.to_csr(), directed=True, unweighted=True, return_predecessors=True)
    rng = np.random.default_rng(4)
    target = grid.box_of(np.zeros((1, 2)))[0]
    for u in rng.choice(grid.n_boxes, 25, replace=False):
        path = [target]
        while path[-1] != u:
            path.append(int(pred[u, path[-1]]))
        path = path[::-1]
        if len(path) < 2:
            continue
        assert _replay_chain(sys_, G, path) < 2 * G.epsilon + grid.box_diameter


def test_refine_shrinks_origin_cover(linear16):
    _, grid, G = linear16
    o = grid.box_of(np.zeros((1, 2)))[0]
    comp = next(c for c in nontrivial_components(G) if o in c.box_set())
    fine, G2 = refine(G, comp.boxes)
    assert fine.subdivisions == (32, 32)
    assert G2.epsilon == pytest.approx(fine.box_diameter)
    vol = chain_recurrent_boxes(G2).size * np.prod(fine.widths)
    assert vol <= 0.5 * comp.size * np.prod(grid.widths)
    with pytest.raises(UsageError):
        refine(G, [])
    with pytest.raises(UsageError):
        refine(G, comp.boxes, factor=1)


def test_refine_keeps_diagonal_connected():
    sys_ = lookup("diagonal-tanh")
    grid = build_grid((sys_.lower, sys_.upper), (32, 32))
    G = build_semiflow_chain_graph(sys_, grid)
    (comp,) = nontrivial_components(G)
    fine, G2 = refine(G, comp.boxes)
    comps = nontrivial_components(G2)
    assert len(comps) == 1
    mask = np.zeros(fine.n_boxes, dtype=bool)
    mask[comps[0].boxes] = True
    _, n_pieces = ndimage.label(mask.reshape(fine.shape), structure=np.ones((3, 3)))
    assert n_pieces == 1
    diag = fine.box_id(np.stack([np.arange(64)] * 2, axis=1))
    assert mask[diag].all()


def test_dilate_rings():
    g = build_grid(((0, 0), (1, 1)), (10, 10))
    c = g.box_id([[5, 5]])
    assert dilate(g, c, 1).size == 9
    assert dilate(g, c, 2).size == 25
    assert dilate(g, g.box_id([[0, 0]]), 1).size == 4


def test_from_edges_rejects_exit_sources():
    g = BoxGrid(np.zeros(2), np.ones(2), (2, 2))
    with pytest.raises(UsageError):
        ChainGraph.from_edges(g, [(4, 0)])
