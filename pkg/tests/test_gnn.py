import numpy as np
import pytest

from amlgraph import elliptic, gnn, graph, kernels, tensor
from amlgraph.errors import TrainingError

from conftest import toy_graph


@pytest.fixture(scope="module")
def gnn_fixture(fixture_ds, fixture_split):
    g = graph.build_graph(fixture_ds)
    X = elliptic.feature_view(fixture_ds, "tx")
    return fixture_ds, fixture_split, g, X


@pytest.fixture(scope="module")
def trained_fixture(gnn_fixture):
    ds, split, g, X = gnn_fixture
    cfg = gnn.GnnTrainConfig(epochs=200, patience=None, seed=0)
    return gnn.train_gnn("gcn", X, ds.y, g, split, cfg)


# ---------------------------------------------------------------------------
# graph convolution forward
# ---------------------------------------------------------------------------


def naive_conv(layer, states, src, dst):
    """Per-node python loop mirroring the vectorized layer."""
    n, h = states.shape
    msgs = np.array([layer.message.forward(states[i : i + 1])[0] for i in range(n)])
    agg = np.zeros((n, h))
    for s, d in zip(src, dst):
        agg[d] += msgs[s]
    out = np.zeros((n, h))
    for i in range(n):
        cat = np.concatenate([states[i], agg[i]])[None, :]
        out[i] = layer.update.forward(cat)[0] + states[i]
    return out


def test_graph_conv_matches_naive_aggregation():
    g5 = toy_graph(5, 0.5, 1)
    states = np.random.default_rng(2).normal(size=(5, 4))
    layer = gnn.GraphConvLayer(4, np.random.default_rng(3), "c")
    src, dst = gnn.prepare_edges(g5, symmetrize=False)
    out = layer.forward(states, src, dst)
    naive = naive_conv(layer, states, src, dst)
    assert np.max(np.abs(out - naive)) <= 1e-12


def test_graph_conv_edgeless_reduces_to_update_mlp():
    g0 = graph.TxGraph.from_edges(4, np.zeros((0, 2), dtype=np.int64))
    s0, d0 = gnn.prepare_edges(g0, symmetrize=True)
    layer = gnn.GraphConvLayer(4, np.random.default_rng(3), "c")
    st4 = np.random.default_rng(6).normal(size=(4, 4))
    out0 = layer.forward(st4, s0, d0)
    cat0 = np.concatenate([st4, np.zeros_like(st4)], axis=1)
    want0 = layer.update.forward(cat0) + st4
    assert np.array_equal(out0, want0)


# ---------------------------------------------------------------------------
# attention forward invariants
# ---------------------------------------------------------------------------


def test_attention_weights_form_a_distribution_per_node():
    g8 = toy_graph(8, 0.4, 5)
    asrc, adst = gnn.prepare_edges(g8, symmetrize=True, self_loops=True)
    head = gnn.AttentionHead(4, 3, np.random.default_rng(4), "h")
    st8 = np.random.default_rng(2).normal(size=(8, 4))
    alpha = head.attention_weights(st8, asrc, adst)
    sums = kernels.segment_sum(alpha, adst, 8)
    assert np.all(np.abs(sums - 1.0) <= 1e-12)
    assert np.all(alpha >= 0)


def test_attention_self_loop_only_node_projects_its_own_state():
    g1 = graph.TxGraph.from_edges(3, np.array([[1, 2]], dtype=np.int64))
    s1, d1 = gnn.prepare_edges(g1, symmetrize=False, self_loops=True)
    st3 = np.random.default_rng(2).normal(size=(3, 4))
    head = gnn.AttentionHead(4, 3, np.random.default_rng(7), "h2")
    o = head.forward(st3, s1, d1, canonical=True)
    assert np.allclose(o[0], (st3 @ head.W)[0], atol=1e-12)  # node 0: self-loop only


def test_attention_identical_neighbors_share_weight_equally():
    gg = graph.TxGraph.from_edges(3, np.array([[0, 2], [1, 2]], dtype=np.int64))
    ss, dd = gnn.prepare_edges(gg, symmetrize=False, self_loops=False)
    st3 = np.random.default_rng(2).normal(size=(3, 4))
    st_eq = np.vstack([st3[0], st3[0], st3[2]])
    head = gnn.AttentionHead(4, 3, np.random.default_rng(8), "h3")
    al = head.attention_weights(st_eq, ss, dd)
    assert np.allclose(al, [0.5, 0.5], atol=1e-12)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def test_graph_conv_gradients():
    gt = toy_graph(6, 0.4, 11)
    sp, dp = gnn.prepare_edges(gt, symmetrize=True)
    X = np.random.default_rng(12).normal(size=(6, 3))
    R = np.random.default_rng(13).normal(size=(6, 3))
    lay = gnn.GraphConvLayer(3, np.random.default_rng(14), "gc")
    base = [p for _, p in lay.named_params()]

    def f(inputs):
        for p, v in zip(base, inputs):
            p[...] = v
        out = lay.forward(X, sp, dp, train=True)
        loss = float((out * R).sum())
        lay.backward(R)
        return loss, [g.copy() for g in lay.grads()]

    assert tensor.grad_check(f, [p.copy() for p in base], h=1e-6) < 1e-4


def test_attention_gradients():
    gt = toy_graph(6, 0.5, 21)
    sp, dp = gnn.prepare_edges(gt, symmetrize=True, self_loops=True)
    X = np.random.default_rng(22).normal(size=(6, 3))
    R = np.random.default_rng(23).normal(size=(6, 2))
    hd = gnn.AttentionHead(3, 2, np.random.default_rng(24), "ga")
    base = [p for _, p in hd.named_params()]

    def f(inputs):
        for p, v in zip(base, inputs):
            p[...] = v
        out = hd.forward(X, sp, dp, train=True)
        loss = float((out * R).sum())
        hd.backward(R)
        return loss, [g.copy() for g in hd.grads()]

    assert tensor.grad_check(f, [p.copy() for p in base], h=1e-6) < 1e-4


@pytest.mark.parametrize("kind", ["gcn", "gat"])
def test_full_model_gradients(kind):
    n = 10
    gt = toy_graph(n, 0.3, 31)
    X = np.random.default_rng(32).normal(size=(n, 4))
    y = np.random.default_rng(33).integers(0, 2, size=n).astype(np.int64)
    w = np.where(y == 1, 0.7, 0.3)
    if kind == "gcn":
        model = gnn.GcnModel(4, hidden=3, seed=5)
        sp, dp = gnn.prepare_edges(gt, symmetrize=True)
    else:
        model = gnn.GatModel(4, hidden=5, heads=2, head_dim=3, out_hidden=4, dropout=0.0, seed=5)
        sp, dp = gnn.prepare_edges(gt, symmetrize=True, self_loops=True)
    params = model.params()

    def f(inputs):
        for p, v in zip(params, inputs):
            p[...] = v
        logits = model.forward(X, sp, dp, train=True)
        loss, d = tensor.softmax_xent(logits, y, w)
        model.backward(d)
        return loss, [g.copy() for g in model.grads()]

    # Check at random parameters: zero-init biases can park a relu input
    # exactly on its kink, where central differences are wrong.
    rng = np.random.default_rng(77)
    base = [rng.normal(size=p.shape) * 0.5 for p in params]
    assert tensor.grad_check(f, base, h=1e-6) < 1e-4


# ---------------------------------------------------------------------------
# architecture bookkeeping
# ---------------------------------------------------------------------------


def test_parameter_counts_match_architecture():
    gat93 = gnn.GatModel(93)
    assert gat93.n_params == 59952
    assert gat93.dense_out.n_params == 662
    table = dict(gat93.param_table())
    assert table["dense_in"] == 10340
    assert table["attention"] == 12320
    assert table["dense_mid"] == 36630
    assert gnn.GcnModel(93).logits_layer.n_params == 66


# ---------------------------------------------------------------------------
# symmetry properties
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["gcn", "gat"])
def test_node_relabeling_equivariance_is_exact(kind):
    n = 30
    gt = toy_graph(n, 0.15, 41)
    X = np.random.default_rng(42).normal(size=(n, 6))
    if kind == "gcn":
        model = gnn.GcnModel(6, hidden=8, seed=9)
        prep = lambda g: gnn.prepare_edges(g, symmetrize=True)
    else:
        model = gnn.GatModel(6, hidden=7, heads=3, head_dim=4, out_hidden=5, dropout=0.5, seed=9)
        prep = lambda g: gnn.prepare_edges(g, symmetrize=True, self_loops=True)
    out = model.forward(X, *prep(gt), train=False)
    perm = np.random.default_rng(43).permutation(n)
    inv = np.argsort(perm)
    e2 = np.stack([perm[gt.edges[:, 0]], perm[gt.edges[:, 1]]], axis=1)
    g2 = graph.TxGraph.from_edges(n, e2)
    out2 = model.forward(X[inv], *prep(g2), train=False)
    assert np.array_equal(out2, out[inv])


def test_edge_list_permutation_invariance_is_exact():
    gt = toy_graph(12, 0.3, 51)
    X = np.random.default_rng(52).normal(size=(12, 6))
    model = gnn.GcnModel(6, hidden=8, seed=9)
    sp, dp = gnn.prepare_edges(gt, symmetrize=True)
    perm_e = np.random.default_rng(53).permutation(gt.edges.shape[0])
    g_p = graph.TxGraph.from_edges(12, gt.edges[perm_e])
    sp2, dp2 = gnn.prepare_edges(g_p, symmetrize=True)
    for train in (False, True):
        a = model.forward(X, sp, dp, train=train)
        b = model.forward(X, sp2, dp2, train=train)
        assert np.array_equal(a, b), f"train={train}"


def test_edgeless_models_reduce_to_per_node_mlps():
    g_empty = graph.TxGraph.from_edges(9, np.zeros((0, 2), dtype=np.int64))
    X9 = np.random.default_rng(61).normal(size=(9, 5))

    gcn = gnn.GcnModel(5, hidden=4, seed=3)
    se, de = gnn.prepare_edges(g_empty, symmetrize=True)
    out = gcn.forward(X9, se, de, train=False)
    h = gcn.pre.forward(X9)
    for conv in (gcn.conv1, gcn.conv2):
        cat = np.concatenate([h, np.zeros_like(h)], axis=1)
        h = conv.update.forward(cat) + h
    want = gcn.logits_layer.forward(gcn.post.forward(h))
    assert np.max(np.abs(out - want)) <= 1e-12

    gat = gnn.GatModel(5, hidden=4, heads=2, head_dim=3, out_hidden=4, dropout=0.0, seed=3)
    se, de = gnn.prepare_edges(g_empty, symmetrize=True, self_loops=True)
    out = gat.forward(X9, se, de, train=False)
    h = gat.dense_in.forward(X9)
    h = np.concatenate([h @ hd.W for hd in gat.attention.heads], axis=1)
    want = gat.dense_out.forward(gat.dense_mid.forward(h))
    assert np.max(np.abs(out - want)) <= 1e-12


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def test_fixture_training_reaches_high_f1(trained_fixture):
    trained, history = trained_fixture
    best = max(h[3] for h in history)
    assert best >= 0.9, best
    losses = [h[1] for h in history]
    assert losses[-1] < 0.5 * losses[0]


def test_training_is_deterministic(gnn_fixture):
    ds, split, g, X = gnn_fixture
    cfg = gnn.GnnTrainConfig(epochs=5, patience=None, seed=0)
    a, ha = gnn.train_gnn("gcn", X, ds.y, g, split, cfg)
    b, hb = gnn.train_gnn("gcn", X, ds.y, g, split, cfg)
    assert ha == hb
    assert np.array_equal(a.logits(), b.logits())


def test_early_stopping_restores_best_snapshot(gnn_fixture):
    ds, split, g, X = gnn_fixture
    cfg = gnn.GnnTrainConfig(epochs=200, patience=10, seed=0)
    trained, history = gnn.train_gnn("gcn", X, ds.y, g, split, cfg)
    assert trained.epochs_run <= 200
    f1_at_best = [h for h in history if h[0] == trained.best_epoch][0][3]
    assert f1_at_best == max(h[3] for h in history)


def test_divergence_raises_training_error(gnn_fixture):
    ds, split, g, X = gnn_fixture
    bad = gnn.GnnTrainConfig(epochs=30, patience=None, lr=1e60, seed=0)
    empty = graph.TxGraph.from_edges(50, np.zeros((0, 2), np.int64))
    tiny_split = elliptic.TemporalSplit(34, np.arange(40), np.arange(40, 50))
    with np.errstate(all="ignore"):
        with pytest.raises(TrainingError, match="epoch"):
            gnn.train_gnn("gcn", X[:50], ds.y[:50], empty, tiny_split, bad)


def test_checkpoint_round_trip(gnn_fixture, trained_fixture):
    ds, split, g, X = gnn_fixture
    trained, _ = trained_fixture
    entries = dict(trained.to_entries())
    back = gnn.load_gnn("gcn", trained.get_config(), entries, X, trained.src, trained.dst)
    assert np.array_equal(back.logits(), trained.logits())


def test_gat_trains_on_fixture(gnn_fixture):
    ds, split, g, X = gnn_fixture
    cfg = gnn.GnnTrainConfig(epochs=30, patience=None, seed=0)
    trained, history = gnn.train_gnn("gat", X, ds.y, g, split, cfg)
    assert len(history) == 30
    losses = [h[1] for h in history]
    assert np.all(np.isfinite(losses))
    assert losses[-1] < losses[0]
