"""Immutable CSR transaction graph and graph utilities.

Both adjacency directions are stored (out_offsets/out_targets and
in_offsets/in_sources) with neighbors sorted, so iteration order never
depends on input edge order.  Builds exist for the cleaned dataset and for
raw tables (the latter keeps unlabeled nodes, which ego-neighborhood
visualization wants to show in grey).
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .elliptic import ILLICIT, LICIT, UNKNOWN, PreprocessedDataset, RawTables
from .errors import ShapeError

DOT_COLORS = {ILLICIT: "red", LICIT: "green", UNKNOWN: "grey"}
_LABEL_TEXT = {ILLICIT: "illicit", LICIT: "licit", UNKNOWN: "unknown"}


@dataclass(frozen=True)
class TxGraph:
    """Directed graph in compressed sparse row form, both directions."""

    n_nodes: int
    out_offsets: np.ndarray  # (n+1,) int64
    out_targets: np.ndarray  # (e,) int64, sorted within each source slice
    in_offsets: np.ndarray  # (n+1,) int64
    in_sources: np.ndarray  # (e,) int64, sorted within each target slice
    edges: np.ndarray  # (e, 2) int64, lexicographically sorted by (src, dst)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def out_degree(self) -> np.ndarray:
        return np.diff(self.out_offsets)

    @property
    def in_degree(self) -> np.ndarray:
        return np.diff(self.in_offsets)

    def out_neighbors(self, node: int) -> np.ndarray:
        self._check_node(node)
        return self.out_targets[self.out_offsets[node] : self.out_offsets[node + 1]]

    def in_neighbors(self, node: int) -> np.ndarray:
        self._check_node(node)
        return self.in_sources[self.in_offsets[node] : self.in_offsets[node + 1]]

    def undirected_neighbors(self, node: int) -> np.ndarray:
        """Distinct neighbors ignoring direction, ascending."""
        return np.unique(np.concatenate([self.out_neighbors(node), self.in_neighbors(node)]))

    def _check_node(self, node: int) -> None:
        if not 0 <= node < self.n_nodes:
            raise ShapeError(f"node {node} outside [0, {self.n_nodes})")

    @classmethod
    def from_edges(cls, n_nodes: int, edges) -> "TxGraph":
        """Build from an (e, 2) array of node-index pairs, any row order."""
        return _build(n_nodes, edges)


def _build(n_nodes: int, edges: np.ndarray) -> TxGraph:
    if n_nodes < 0:
        raise ShapeError(f"n_nodes must be >= 0, got {n_nodes}")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        lo, hi = int(edges.min()), int(edges.max())
        if lo < 0 or hi >= n_nodes:
            raise ShapeError(f"edge endpoints out of range [0, {n_nodes}): found [{lo}, {hi}]")
    src, dst = edges[:, 0], edges[:, 1]

    order_out = np.lexsort((dst, src))
    sorted_edges = edges[order_out]
    out_counts = np.bincount(src, minlength=n_nodes)
    out_offsets = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(out_counts, out=out_offsets[1:])

    order_in = np.lexsort((src, dst))
    in_counts = np.bincount(dst, minlength=n_nodes)
    in_offsets = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(in_counts, out=in_offsets[1:])

    return TxGraph(
        n_nodes=int(n_nodes),
        out_offsets=out_offsets,
        out_targets=np.ascontiguousarray(sorted_edges[:, 1]),
        in_offsets=in_offsets,
        in_sources=np.ascontiguousarray(edges[order_in][:, 0]),
        edges=np.ascontiguousarray(sorted_edges),
    )


def build_graph(ds: PreprocessedDataset) -> TxGraph:
    """Graph over the cleaned dataset's dense node index."""
    return _build(ds.n_nodes, ds.edges)


def build_full_graph(raw: RawTables) -> TxGraph:
    """Graph over all raw rows, unlabeled nodes included."""
    return _build(raw.n_nodes, raw.edges)


# ---------------------------------------------------------------------------
# Ego subgraphs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EgoSubgraph:
    """Nodes within ``depth`` undirected hops of ``center`` plus the induced
    directed edges.  Members ascending, edges in (src, dst) order."""

    center: int
    depth: int
    members: np.ndarray  # (m,) int64 sorted
    edges: np.ndarray  # (k, 2) int64

    @property
    def n_members(self) -> int:
        return int(self.members.shape[0])


def ego_subgraph(g: TxGraph, center: int, depth: int) -> EgoSubgraph:
    if not 0 <= center < g.n_nodes:
        raise ShapeError(f"center {center} outside [0, {g.n_nodes})")
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")

    seen = {center}
    frontier = [center]
    for _ in range(depth):
        nxt = []
        for u in frontier:
            for v in np.concatenate([g.out_neighbors(u), g.in_neighbors(u)]):
                v = int(v)
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        if not nxt:
            break
        frontier = nxt

    members = np.array(sorted(seen), dtype=np.int64)
    mask = np.zeros(g.n_nodes, dtype=bool)
    mask[members] = True
    kept = []
    for u in members:
        for v in g.out_neighbors(int(u)):
            if mask[v]:
                kept.append((int(u), int(v)))
    edges = np.array(kept, dtype=np.int64).reshape(-1, 2)
    return EgoSubgraph(center=int(center), depth=int(depth), members=members, edges=edges)


# ---------------------------------------------------------------------------
# One-hop feature aggregation
# ---------------------------------------------------------------------------


def aggregate_one_hop(g: TxGraph, X) -> np.ndarray:
    """Concatenate each node's in-neighbor mean and out-neighbor mean.

    Returns (n, 2f); nodes without neighbors on a side get zeros there.
    """
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    if X.ndim != 2 or X.shape[0] != g.n_nodes:
        raise ShapeError(f"X must be ({g.n_nodes}, f), got {X.shape}")

    in_ids = np.repeat(np.arange(g.n_nodes, dtype=np.int64), g.in_degree)
    in_sum = kernels.segment_sum(X[g.in_sources], in_ids, g.n_nodes)
    out_ids = np.repeat(np.arange(g.n_nodes, dtype=np.int64), g.out_degree)
    out_sum = kernels.segment_sum(X[g.out_targets], out_ids, g.n_nodes)

    in_deg = g.in_degree.astype(np.float64)
    out_deg = g.out_degree.astype(np.float64)
    in_mean = np.divide(in_sum, in_deg[:, None], out=np.zeros_like(in_sum), where=in_deg[:, None] > 0)
    out_mean = np.divide(
        out_sum, out_deg[:, None], out=np.zeros_like(out_sum), where=out_deg[:, None] > 0
    )
    return np.column_stack([in_mean, out_mean])


# ---------------------------------------------------------------------------
# Connected components (undirected)
# ---------------------------------------------------------------------------


def connected_components(g: TxGraph) -> np.ndarray:
    """Component label per node; ids dense from 0, ordered by each
    component's smallest member."""
    labels = np.full(g.n_nodes, -1, dtype=np.int64)
    next_id = 0
    for start in range(g.n_nodes):
        if labels[start] != -1:
            continue
        labels[start] = next_id
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in g.undirected_neighbors(u):
                v = int(v)
                if labels[v] == -1:
                    labels[v] = next_id
                    queue.append(v)
        next_id += 1
    return labels


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def _annotation_of(annotations, node: int) -> int:
    if annotations is None:
        return UNKNOWN
    value = annotations.get(node, UNKNOWN) if hasattr(annotations, "get") else annotations[node]
    return int(value)


def export_dot(sub: EgoSubgraph, annotations, path=None, tx_ids=None, graph_name="ego") -> str:
    """Render an ego subgraph as Graphviz DOT, colored by annotation.

    ``annotations`` maps node index -> label (missing nodes show as
    unknown/grey).  Output ordering is stable: members ascending, then the
    subgraph's (src, dst)-ordered edges.
    """
    lines = [f"digraph {graph_name} {{"]
    lines.append("  node [style=filled];")
    for u in sub.members:
        u = int(u)
        label = str(tx_ids[u]) if tx_ids is not None else str(u)
        color = DOT_COLORS.get(_annotation_of(annotations, u), "grey")
        shape = ", shape=doublecircle" if u == sub.center else ""
        lines.append(f'  n{u} [label="{label}", fillcolor={color}{shape}];')
    for u, v in sub.edges:
        lines.append(f"  n{int(u)} -> n{int(v)};")
    lines.append("}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def export_graphml(
    sub: EgoSubgraph,
    path=None,
    labels=None,
    predictions=None,
    time_steps=None,
    tx_ids=None,
) -> str:
    """Render an ego subgraph as GraphML with label/prediction/time_step
    node attributes (attributes without data are omitted)."""
    root = ET.Element("graphml", xmlns="http://graphml.graphdrawing.org/xmlns")
    keys = []
    if labels is not None:
        keys.append(("label", "string"))
    if predictions is not None:
        keys.append(("prediction", "string"))
    if time_steps is not None:
        keys.append(("time_step", "int"))
    for name, kind in keys:
        ET.SubElement(
            root, "key", id=name, attrib={"for": "node", "attr.name": name, "attr.type": kind}
        )
    graph = ET.SubElement(root, "graph", id="ego", edgedefault="directed")
    for u in sub.members:
        u = int(u)
        node_id = str(tx_ids[u]) if tx_ids is not None else f"n{u}"
        node = ET.SubElement(graph, "node", id=node_id)
        if labels is not None:
            ET.SubElement(node, "data", key="label").text = _LABEL_TEXT[_annotation_of(labels, u)]
        if predictions is not None:
            ET.SubElement(node, "data", key="prediction").text = _LABEL_TEXT[
                _annotation_of(predictions, u)
            ]
        if time_steps is not None:
            ET.SubElement(node, "data", key="time_step").text = str(int(time_steps[u]))
    for u, v in sub.edges:
        su = str(tx_ids[int(u)]) if tx_ids is not None else f"n{int(u)}"
        sv = str(tx_ids[int(v)]) if tx_ids is not None else f"n{int(v)}"
        ET.SubElement(graph, "edge", source=su, target=sv)
    ET.indent(root)
    text = ET.tostring(root, encoding="unicode") + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
