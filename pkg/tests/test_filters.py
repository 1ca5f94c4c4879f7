import numpy as np
import pytest

from adamore import engine, filters, graphs
from adamore.engine import Tensor

from _oracles import check_grad, dense_sym_norm, random_adjacency


def path2():
    return graphs.make_graph(2, [(0, 1)], np.eye(2))


def view_with_weights(g, w):
    """Weighted view straight from a per-undirected-edge weight vector."""
    src, dst = g.directed_pairs()
    m = g.n_edges
    wt = Tensor(np.concatenate([w, w]).reshape(-1, 1))
    return filters.AdjacencyView(n_nodes=g.n_nodes, src=src, dst=dst, weights=wt)


def dense_weighted_sym(g, w):
    """Dense oracle for the weighted symmetric normalization."""
    n = g.n_nodes
    a = np.zeros((n, n))
    for (u, v), we in zip(g.edges, w):
        a[u, v] = we
        a[v, u] = we
    a += np.eye(n)
    d = a.sum(axis=1)
    return a / np.sqrt(d)[:, None] / np.sqrt(d)[None, :]


def test_spec_validation_and_tokens():
    assert filters.FilterSpec("sgc", 2).token() == "sgc:2"
    spec = filters.FilterSpec("lapsgc", 1)
    assert spec.alpha == 1.0
    assert filters.parse_filter_token("lapsgc:1:0.5").alpha == 0.5
    with pytest.raises(ValueError):
        filters.FilterSpec("nope", 1)
    with pytest.raises(ValueError):
        filters.FilterSpec("sgc", -1)
    with pytest.raises(ValueError):
        filters.FilterSpec("sgc", 1, alpha=0.5)


def test_sgc_zero_hops_is_identity():
    g = path2()
    h = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    out = filters.apply_filter(filters.FilterSpec("sgc", 0), h, filters.raw_view(g))
    assert out is h


def test_sgc_one_hop_two_node_path():
    g = path2()
    out = filters.apply_filter(filters.FilterSpec("sgc", 1), Tensor(np.eye(2)),
                               filters.raw_view(g))
    assert np.allclose(out.values, [[0.5, 0.5], [0.5, 0.5]], atol=1e-12)


def test_lapsgc_one_hop_two_node_path():
    g = path2()
    out = filters.apply_filter(filters.FilterSpec("lapsgc", 1, alpha=1.0),
                               Tensor(np.eye(2)), filters.raw_view(g))
    assert np.allclose(out.values, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-12)


def test_sgc_matches_dense_oracle_random_graphs():
    rng = np.random.default_rng(2)
    for _ in range(10):
        n = int(rng.integers(2, 14))
        adj = random_adjacency(rng, n)
        iu, ju = np.nonzero(np.triu(adj, 1))
        g = graphs.make_graph(n, np.stack([iu, ju], axis=1), np.eye(n))
        h = Tensor(rng.normal(size=(n, 3)))
        for k in (1, 2, 3):
            out = filters.apply_filter(filters.FilterSpec("sgc", k), h, filters.raw_view(g))
            expect = np.linalg.matrix_power(dense_sym_norm(adj), k) @ h.values
            assert np.allclose(out.values, expect, atol=1e-10)


def test_weighted_view_matches_dense_oracle():
    rng = np.random.default_rng(3)
    g = graphs.gen_sbm(5, 2, 0.7, 0.3, feat_dim=4, seed=1)
    w = rng.uniform(0.1, 0.9, size=g.n_edges)
    h = Tensor(rng.normal(size=(g.n_nodes, 3)))
    out = filters.apply_filter(filters.FilterSpec("sgc", 2), h, view_with_weights(g, w))
    dense = dense_weighted_sym(g, w)
    assert np.allclose(out.values, dense @ dense @ h.values, atol=1e-10)


def test_all_ones_weights_equal_raw_graph():
    rng = np.random.default_rng(4)
    g = graphs.gen_sbm(6, 2, 0.6, 0.2, feat_dim=4, seed=2)
    h = Tensor(rng.normal(size=(g.n_nodes, 3)))
    raw = filters.apply_filter(filters.FilterSpec("sgc", 2), h, filters.raw_view(g))
    ones = filters.apply_filter(filters.FilterSpec("sgc", 2), h,
                                view_with_weights(g, np.ones(g.n_edges)))
    assert np.allclose(raw.values, ones.values, atol=1e-12)


def test_linearity():
    rng = np.random.default_rng(5)
    g = graphs.gen_sbm(5, 2, 0.5, 0.2, feat_dim=3, seed=3)
    view = view_with_weights(g, rng.uniform(0.2, 0.8, size=g.n_edges))
    h1 = rng.normal(size=(g.n_nodes, 3))
    h2 = rng.normal(size=(g.n_nodes, 3))
    a, b = 0.7, -1.3
    for kind, k in (("sgc", 2), ("lapsgc", 2), ("spline_lp", 1), ("spline_hp", 1)):
        spec = filters.FilterSpec(kind, k, alpha=1.0 if kind == "lapsgc" else None)
        mixed = filters.apply_filter(spec, Tensor(a * h1 + b * h2), view)
        f1 = filters.apply_filter(spec, Tensor(h1), view)
        f2 = filters.apply_filter(spec, Tensor(h2), view)
        assert np.allclose(mixed.values, a * f1.values + b * f2.values, atol=1e-10)


def test_spline_perfect_reconstruction_regular_graphs():
    rng = np.random.default_rng(6)
    for n, d in ((8, 3), (10, 4), (12, 5)):
        # circulant d-regular graph
        edges = []
        for i in range(n):
            for step in range(1, d // 2 + 1):
                edges.append((i, (i + step) % n))
        if d % 2 == 1:
            edges += [(i, (i + n // 2) % n) for i in range(n // 2)]
        g = graphs.make_graph(n, edges, np.eye(n))
        assert set(g.degrees()) == {d}
        h = Tensor(rng.normal(size=(n, 4)))
        view = filters.raw_view(g)
        lp = filters.apply_filter(filters.FilterSpec("spline_lp", 1), h, view)
        hp = filters.apply_filter(filters.FilterSpec("spline_hp", 1), h, view)
        assert np.allclose(lp.values + hp.values, h.values, atol=1e-10)
        # on a d-regular graph spline_lp is exactly (I + A/d)/2
        adj = np.zeros((n, n))
        for u, v in g.edges:
            adj[u, v] = adj[v, u] = 1.0
        assert np.allclose(lp.values, 0.5 * (h.values + adj @ h.values / d), atol=1e-12)


def test_free_filters_are_single_hops():
    rng = np.random.default_rng(7)
    g = graphs.gen_sbm(5, 2, 0.5, 0.2, feat_dim=3, seed=4)
    view = view_with_weights(g, rng.uniform(0.2, 0.8, size=g.n_edges))
    h = Tensor(rng.normal(size=(g.n_nodes, 3)))
    lpf = filters.apply_filter(filters.FilterSpec("free_lpf", 1), h, view)
    sgc1 = filters.apply_filter(filters.FilterSpec("sgc", 1), h, view)
    assert np.allclose(lpf.values, sgc1.values, atol=1e-14)
    hpf = filters.apply_filter(filters.FilterSpec("free_hpf", 1), h, view)
    lap1 = filters.apply_filter(filters.FilterSpec("lapsgc", 1, alpha=1.0), h, view)
    assert np.allclose(hpf.values, lap1.values, atol=1e-14)


def test_filter_bank_consistency_and_order():
    rng = np.random.default_rng(8)
    g = graphs.gen_sbm(5, 2, 0.6, 0.2, feat_dim=3, seed=5)
    view = filters.raw_view(g)
    h = Tensor(rng.normal(size=(g.n_nodes, 3)))
    specs = [filters.FilterSpec("sgc", k) for k in (1, 2, 3)]
    outs = filters.filter_bank_outputs(specs, h, view)
    assert len(outs) == 3
    direct = filters.apply_filter(filters.FilterSpec("sgc", 3), h, view)
    assert np.array_equal(outs[2].values, direct.values)


def test_filter_bank_zero_features():
    g = graphs.gen_sbm(4, 2, 0.6, 0.2, feat_dim=3, seed=6)
    outs = filters.filter_bank_outputs(
        [filters.FilterSpec("sgc", 1), filters.FilterSpec("lapsgc", 2)],
        Tensor(np.zeros((g.n_nodes, 3))), filters.raw_view(g))
    for out in outs:
        assert not out.values.any()


def test_gradients_flow_through_h_and_weights():
    rng = np.random.default_rng(9)
    g = graphs.gen_sbm(4, 2, 0.7, 0.3, feat_dim=3, seed=7)
    m = g.n_edges
    h = Tensor(rng.normal(size=(g.n_nodes, 3)), requires_grad=True)
    w_und = Tensor(rng.uniform(0.2, 0.8, size=(m, 1)), requires_grad=True)
    src, dst = g.directed_pairs()
    target = Tensor(rng.normal(size=(g.n_nodes, 3)))

    def loss_fn():
        w_dir = engine.gather_rows(w_und, np.concatenate([np.arange(m), np.arange(m)]))
        view = filters.AdjacencyView(n_nodes=g.n_nodes, src=src, dst=dst, weights=w_dir)
        out = filters.apply_filter(filters.FilterSpec("lapsgc", 2, alpha=0.8), h, view)
        return engine.frobenius(out, target)

    assert check_grad(loss_fn, [h, w_und], seed=1) <= 1e-4
