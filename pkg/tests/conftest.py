import os
from pathlib import Path

import numpy as np
import pytest

from amlgraph import elliptic, graph

REAL_BASENAMES = {
    "features": ("elliptic_txs_features.csv", "features.csv"),
    "classes": ("elliptic_txs_classes.csv", "classes.csv"),
    "edges": ("elliptic_txs_edgelist.csv", "edgelist.csv"),
}


def real_dataset_paths():
    """Paths to the real CSVs under $AMLGRAPH_DATA_DIR, or None."""
    root = os.environ.get("AMLGRAPH_DATA_DIR")
    if not root:
        return None
    found = {}
    for key, names in REAL_BASENAMES.items():
        hit = next((Path(root) / n for n in names if (Path(root) / n).exists()), None)
        if hit is None:
            return None
        found[key] = hit
    return found


requires_real_data = pytest.mark.skipif(
    real_dataset_paths() is None,
    reason="real dataset CSVs not found; set AMLGRAPH_DATA_DIR to run",
)


def toy_graph(n: int, p_edge: float, seed: int) -> graph.TxGraph:
    """Random directed graph without self-loops."""
    r = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    mask = r.random(len(pairs)) < p_edge
    edges = np.array([pq for pq, m in zip(pairs, mask) if m], dtype=np.int64).reshape(-1, 2)
    return graph.TxGraph.from_edges(n, edges)


@pytest.fixture(scope="session")
def fixture_raw():
    return elliptic.fixture_raw()


@pytest.fixture(scope="session")
def fixture_ds(fixture_raw):
    return elliptic.preprocess(fixture_raw)


@pytest.fixture(scope="session")
def fixture_split(fixture_ds):
    return elliptic.temporal_split(fixture_ds)
