import xml.etree.ElementTree as ET

import numpy as np
import pytest

from amlgraph import elliptic, graph
from amlgraph.errors import ShapeError

from conftest import toy_graph


def random_edges(rng, n, e):
    edges = rng.integers(0, n, size=(e, 2)).astype(np.int64)
    return edges[edges[:, 0] != edges[:, 1]]


def test_csr_neighbors_match_edge_list():
    rng = np.random.default_rng(0)
    for _ in range(15):
        n = int(rng.integers(2, 40))
        edges = random_edges(rng, n, int(rng.integers(0, 120)))
        g = graph.TxGraph.from_edges(n, edges)
        assert g.n_edges == edges.shape[0]
        for u in range(n):
            out_want = np.sort(edges[edges[:, 0] == u, 1])
            in_want = np.sort(edges[edges[:, 1] == u, 0])
            assert np.array_equal(g.out_neighbors(u), out_want)
            assert np.array_equal(g.in_neighbors(u), in_want)
        assert np.array_equal(g.out_degree, np.bincount(edges[:, 0], minlength=n))
        assert np.array_equal(g.in_degree, np.bincount(edges[:, 1], minlength=n))


def test_csr_is_independent_of_edge_order():
    rng = np.random.default_rng(1)
    edges = random_edges(rng, 12, 40)
    a = graph.TxGraph.from_edges(12, edges)
    b = graph.TxGraph.from_edges(12, edges[rng.permutation(edges.shape[0])])
    assert np.array_equal(a.edges, b.edges)
    assert np.array_equal(a.out_targets, b.out_targets)
    assert np.array_equal(a.in_sources, b.in_sources)


def test_undirected_neighbors_deduplicate():
    g = graph.TxGraph.from_edges(3, np.array([[0, 1], [1, 0], [0, 2]]))
    assert np.array_equal(g.undirected_neighbors(0), [1, 2])


def test_build_rejects_bad_input():
    with pytest.raises(ShapeError):
        graph.TxGraph.from_edges(3, np.array([[0, 5]]))
    with pytest.raises(ShapeError):
        graph.TxGraph.from_edges(3, np.array([[-1, 0]]))
    with pytest.raises(ShapeError):
        graph.TxGraph.from_edges(-1, np.empty((0, 2), np.int64))
    g = graph.TxGraph.from_edges(3, np.array([[0, 1]]))
    with pytest.raises(ShapeError):
        g.out_neighbors(7)


def test_empty_graph():
    g = graph.TxGraph.from_edges(4, np.empty((0, 2), np.int64))
    assert g.n_edges == 0
    assert np.array_equal(g.out_degree, np.zeros(4, np.int64))
    assert g.undirected_neighbors(2).size == 0


# ---------------------------------------------------------------------------
# ego subgraphs
# ---------------------------------------------------------------------------


def bfs_oracle(edges, n, center, depth):
    adj = [set() for _ in range(n)]
    for s, d in edges:
        adj[s].add(d)
        adj[d].add(s)
    seen = {center}
    frontier = {center}
    for _ in range(depth):
        frontier = {v for u in frontier for v in adj[u]} - seen
        seen |= frontier
    return seen


def test_ego_subgraph_matches_bfs_oracle():
    rng = np.random.default_rng(2)
    for trial in range(20):
        n = int(rng.integers(3, 50))
        edges = random_edges(rng, n, int(rng.integers(1, 150)))
        g = graph.TxGraph.from_edges(n, edges)
        center = int(rng.integers(0, n))
        depth = int(rng.integers(0, 4))
        sub = graph.ego_subgraph(g, center, depth)
        want = bfs_oracle(edges, n, center, depth)
        assert set(sub.members.tolist()) == want, trial
        # induced edges: exactly the original pairs inside the member set
        member_set = want
        induced = {
            (int(s), int(d)) for s, d in np.unique(edges, axis=0) if s in member_set and d in member_set
        }
        assert {tuple(e) for e in sub.edges} == induced


def test_ego_subgraph_depth_zero_and_validation():
    g = toy_graph(6, 0.5, 3)
    sub = graph.ego_subgraph(g, 2, 0)
    assert sub.members.tolist() == [2]
    with pytest.raises(ShapeError):
        graph.ego_subgraph(g, 99, 1)
    with pytest.raises(ValueError):
        graph.ego_subgraph(g, 0, -1)


# ---------------------------------------------------------------------------
# aggregation and components
# ---------------------------------------------------------------------------


def test_aggregate_one_hop_matches_naive_means():
    rng = np.random.default_rng(3)
    n = 15
    edges = random_edges(rng, n, 50)
    g = graph.TxGraph.from_edges(n, edges)
    X = rng.normal(size=(n, 4))
    got = graph.aggregate_one_hop(g, X)
    assert got.shape == (n, 8)
    for u in range(n):
        ins = edges[edges[:, 1] == u, 0]
        outs = edges[edges[:, 0] == u, 1]
        want_in = X[ins].mean(axis=0) if ins.size else np.zeros(4)
        want_out = X[outs].mean(axis=0) if outs.size else np.zeros(4)
        assert np.allclose(got[u, :4], want_in, atol=1e-12)
        assert np.allclose(got[u, 4:], want_out, atol=1e-12)
    with pytest.raises(ShapeError):
        graph.aggregate_one_hop(g, X[:-1])


def test_connected_components_against_union_find():
    rng = np.random.default_rng(4)
    for _ in range(10):
        n = int(rng.integers(2, 60))
        edges = random_edges(rng, n, int(rng.integers(0, n * 2)))
        g = graph.TxGraph.from_edges(n, edges)
        labels = graph.connected_components(g)

        parent = list(range(n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for s, d in edges:
            parent[find(int(s))] = find(int(d))
        # same component iff same root
        for i in range(n):
            for j in range(i + 1, n):
                assert (labels[i] == labels[j]) == (find(i) == find(j))
        # dense ids ordered by smallest member
        firsts = [int(np.flatnonzero(labels == c)[0]) for c in range(labels.max() + 1)]
        assert firsts == sorted(firsts)


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------


def _export_fixture():
    g = graph.TxGraph.from_edges(5, np.array([[0, 1], [1, 2], [3, 0], [2, 4]]))
    sub = graph.ego_subgraph(g, 0, 2)
    labels = {0: elliptic.LICIT, 1: elliptic.ILLICIT, 2: elliptic.LICIT, 3: elliptic.UNKNOWN}
    return sub, labels


def test_export_dot_colors_and_center_shape():
    sub, labels = _export_fixture()
    text = graph.export_dot(sub, labels)
    assert text.startswith("digraph ego {")
    assert 'n0 [label="0", fillcolor=green, shape=doublecircle];' in text
    assert 'n1 [label="1", fillcolor=red];' in text
    assert 'n3 [label="3", fillcolor=grey];' in text
    assert "n1 -> n2;" in text
    # unannotated nodes fall back to grey
    assert "fillcolor=grey" in graph.export_dot(sub, None)


def test_export_dot_differs_only_in_fillcolor_across_annotations():
    sub, labels = _export_fixture()
    flipped = dict(labels)
    flipped[1] = elliptic.LICIT
    a = graph.export_dot(sub, labels).splitlines()
    b = graph.export_dot(sub, flipped).splitlines()
    assert len(a) == len(b)
    for la, lb in zip(a, b):
        if la != lb:
            assert "fillcolor=" in la and "fillcolor=" in lb
            assert la.split("fillcolor=")[0] == lb.split("fillcolor=")[0]


def test_export_dot_tx_id_labels_and_file_output(tmp_path):
    sub, labels = _export_fixture()
    ids = np.array(["a", "b", "c", "d", "e"], dtype=object)
    path = tmp_path / "ego.dot"
    text = graph.export_dot(sub, labels, path=path, tx_ids=ids)
    assert 'label="a"' in text
    assert path.read_text(encoding="utf-8") == text


def test_export_graphml_is_valid_xml_with_attributes(tmp_path):
    sub, labels = _export_fixture()
    path = tmp_path / "ego.graphml"
    text = graph.export_graphml(
        sub, path=path, labels=labels, predictions={0: elliptic.ILLICIT}, time_steps={i: i + 1 for i in range(5)}
    )
    ns = {"g": "http://graphml.graphdrawing.org/xmlns"}
    root = ET.fromstring(text)
    nodes = root.findall(".//g:node", ns)
    edges = root.findall(".//g:edge", ns)
    assert len(nodes) == sub.n_members
    assert len(edges) == sub.edges.shape[0]
    keys = {k.get("id") for k in root.findall("g:key", ns)}
    assert keys == {"label", "prediction", "time_step"}
    first = nodes[0].find("g:data[@key='label']", ns)
    assert first.text == "licit"
    assert path.read_text(encoding="utf-8") == text
