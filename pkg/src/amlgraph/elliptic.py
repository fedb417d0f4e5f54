"""Labeled Bitcoin transaction-graph dataset: ingestion and cleaning.

The raw dataset is three CSVs:

* features: headerless, one row per transaction: tx_id, time_step, then the
  feature columns (the public release has 93 local + 72 aggregated = 165).
* classes: header ``txId,class`` with class in {"1", "2", "unknown"},
  meaning illicit, licit, unlabeled.
* edgelist: header ``txId1,txId2``, directed payment flows.

Loading keeps everything (including unlabeled rows, which visualization
needs); ``preprocess`` drops unlabeled nodes and their edges and replaces
transaction ids with a sorted dense index, which is what the models consume.
The real dataset is not redistributed here; ``synth_dataset`` generates a
schema-compatible substitute with a planted illicit pattern so everything is
testable offline.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import kernels
from .errors import ParseError, StructuralError

LICIT = 0
ILLICIT = 1
UNKNOWN = 2

LABEL_NAMES = {LICIT: "licit", ILLICIT: "illicit", UNKNOWN: "unknown"}
_CLASS_TOKEN_TO_LABEL = {"1": ILLICIT, "2": LICIT, "unknown": UNKNOWN}

# Column layout of the public release: 93 local + 72 aggregated features.
PUBLIC_N_FEATURES = 165
PUBLIC_N_LOCAL = 93

FEATURES_TX = "tx"
FEATURES_TX_AGG = "tx_agg"
FEATURE_MODES = (FEATURES_TX, FEATURES_TX_AGG)


@dataclass
class RawTables:
    """Parsed but uncleaned dataset; row order is file order."""

    tx_ids: np.ndarray  # (n,) str
    time_steps: np.ndarray  # (n,) int64, >= 1
    features: np.ndarray  # (n, f) float64, excludes the time step
    labels: np.ndarray  # (n,) int64 in {LICIT, ILLICIT, UNKNOWN}
    edges: np.ndarray  # (e, 2) int64 indices into rows
    n_local: int

    @property
    def n_nodes(self) -> int:
        return int(self.tx_ids.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def n_agg(self) -> int:
        return int(self.features.shape[1]) - self.n_local

    def label_counts(self) -> dict[str, int]:
        return {
            name: int(np.sum(self.labels == value))
            for value, name in sorted(LABEL_NAMES.items(), key=lambda kv: kv[1])
        }

    def summary(self) -> dict:
        return {
            "nodes": self.n_nodes,
            "edges": self.n_edges,
            "n_features": int(self.features.shape[1]),
            "n_local": self.n_local,
            "n_agg": self.n_agg,
            "label_counts": self.label_counts(),
        }


@dataclass
class PreprocessedDataset:
    """Clean modeling dataset: labeled nodes only, dense sorted index."""

    tx_ids: np.ndarray  # (n,) str, sorted
    X: np.ndarray  # (n, f) float64
    y: np.ndarray  # (n,) int64 in {LICIT, ILLICIT}
    time_steps: np.ndarray  # (n,) int64
    edges: np.ndarray  # (e, 2) int64 indices into the dense index
    n_local: int

    @property
    def n_nodes(self) -> int:
        return int(self.X.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def n_agg(self) -> int:
        return int(self.X.shape[1]) - self.n_local

    def summary(self) -> dict:
        return {
            "nodes": self.n_nodes,
            "edges": self.n_edges,
            "n_features": int(self.X.shape[1]),
            "illicit": int(np.sum(self.y == ILLICIT)),
            "licit": int(np.sum(self.y == LICIT)),
        }


@dataclass(frozen=True)
class TemporalSplit:
    boundary: int
    train_idx: np.ndarray
    test_idx: np.ndarray


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _first_line(path: Path) -> str | None:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n").rstrip("\r")
            if line:
                return line
            return None
    return None


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def _has_header(path: Path) -> bool:
    """A first row containing any token that is neither numeric nor the
    literal 'unknown' is treated as a header."""
    line = _first_line(path)
    if line is None:
        return False
    tokens = [t.strip() for t in line.split(",")]
    return any(not _is_number(t) and t != "unknown" for t in tokens)


def _wrap_tokenize_error(exc: Exception, path: Path) -> ParseError:
    m = re.search(r"line (\d+)", str(exc))
    line = int(m.group(1)) if m else None
    return ParseError(f"malformed CSV: {exc}", path=str(path), line=line)


def _read_csv(path: Path, has_header: bool, dtype=None) -> pd.DataFrame:
    try:
        return pd.read_csv(
            path,
            header=None,
            skiprows=1 if has_header else 0,
            dtype=dtype,
            na_filter=False,
            float_precision="round_trip",
        )
    except pd.errors.EmptyDataError:
        return pd.DataFrame()
    except (pd.errors.ParserError, ValueError) as exc:
        raise _wrap_tokenize_error(exc, path) from exc


def _locate_bad_number(path: Path, skip: int, column_start: int):
    """Slow diagnostic pass: find the first non-numeric cell; returns
    (1-based line, column) or None."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno <= skip or not line.strip():
                continue
            for col, token in enumerate(line.rstrip("\n").split(",")):
                if col >= column_start and not _is_number(token.strip()):
                    return lineno, col
    return None


def load_raw(
    features_path,
    classes_path,
    edges_path,
    n_local: int | None = None,
) -> RawTables:
    """Parse the three raw CSVs into RawTables.

    ``n_local`` sets how many feature columns are "local"; default is the
    public layout (93) when the file has 165 feature columns, otherwise all
    columns count as local.
    """
    features_path = Path(features_path)
    classes_path = Path(classes_path)
    edges_path = Path(edges_path)
    for p in (features_path, classes_path, edges_path):
        if not p.exists():
            raise FileNotFoundError(f"input file not found: {p}")

    # --- features ---------------------------------------------------------
    feat_header = _has_header(features_path)
    try:
        feat = _read_csv(features_path, feat_header, dtype={0: str})
    except ParseError:
        raise
    if feat.empty:
        tx_ids = np.empty(0, dtype=object)
        time_steps = np.empty(0, dtype=np.int64)
        features = np.empty((0, 0), dtype=np.float64)
    else:
        if feat.shape[1] < 3:
            raise ParseError(
                f"features file needs >= 3 columns (id, time step, features), got {feat.shape[1]}",
                path=str(features_path),
            )
        tx_ids = feat.iloc[:, 0].to_numpy(dtype=object)
        body = feat.iloc[:, 1:].to_numpy()
        if body.dtype == object:
            loc = _locate_bad_number(features_path, 1 if feat_header else 0, 1)
            line = loc[0] if loc else None
            raise ParseError("non-numeric value in features file", path=str(features_path), line=line)
        body = body.astype(np.float64)
        raw_time = body[:, 0]
        if np.any(raw_time != np.round(raw_time)) or np.any(raw_time < 1):
            bad = int(np.flatnonzero((raw_time != np.round(raw_time)) | (raw_time < 1))[0])
            raise ParseError(
                f"time step must be an integer >= 1, got {raw_time[bad]!r}",
                path=str(features_path),
                line=bad + (2 if feat_header else 1),
            )
        time_steps = raw_time.astype(np.int64)
        features = np.ascontiguousarray(body[:, 1:])

    n_feature_cols = features.shape[1]
    if n_local is None:
        n_local = PUBLIC_N_LOCAL if n_feature_cols == PUBLIC_N_FEATURES else n_feature_cols
    if not 0 <= n_local <= n_feature_cols:
        raise ValueError(f"n_local={n_local} outside [0, {n_feature_cols}]")

    ids_list = [str(t) for t in tx_ids]
    index_of = {}
    for i, t in enumerate(ids_list):
        if t in index_of:
            raise StructuralError(f"duplicate tx id in features file: {t!r}")
        index_of[t] = i
    tx_ids = np.array(ids_list, dtype=object)

    # --- classes -----------------------------------------------------------
    cls_header = _has_header(classes_path)
    cls = _read_csv(classes_path, cls_header, dtype=str)
    labels = np.full(len(ids_list), UNKNOWN, dtype=np.int64)
    if not cls.empty:
        if cls.shape[1] != 2:
            raise ParseError(
                f"classes file must have 2 columns, got {cls.shape[1]}", path=str(classes_path)
            )
        seen_ids = cls.iloc[:, 0].to_numpy(dtype=object)
        seen_cls = cls.iloc[:, 1].to_numpy(dtype=object)
        missing = []
        for row, (tid, token) in enumerate(zip(seen_ids, seen_cls)):
            tid = str(tid).strip()
            token = str(token).strip()
            if token not in _CLASS_TOKEN_TO_LABEL:
                raise ParseError(
                    f"unexpected class value {token!r} (want 1, 2, or unknown)",
                    path=str(classes_path),
                    line=row + (2 if cls_header else 1),
                )
            idx = index_of.get(tid)
            if idx is None:
                missing.append(tid)
            else:
                labels[idx] = _CLASS_TOKEN_TO_LABEL[token]
        if missing:
            shown = ", ".join(missing[:5])
            raise StructuralError(
                f"{len(missing)} class rows reference unknown tx ids (e.g. {shown})"
            )

    # --- edges -------------------------------------------------------------
    edge_header = _has_header(edges_path)
    edf = _read_csv(edges_path, edge_header, dtype=str)
    if edf.empty:
        edges = np.empty((0, 2), dtype=np.int64)
    else:
        if edf.shape[1] != 2:
            raise ParseError(
                f"edge file must have 2 columns, got {edf.shape[1]}", path=str(edges_path)
            )
        src_ids = [str(t).strip() for t in edf.iloc[:, 0]]
        dst_ids = [str(t).strip() for t in edf.iloc[:, 1]]
        dangling = [t for t in src_ids if t not in index_of]
        dangling += [t for t in dst_ids if t not in index_of]
        if dangling:
            shown = ", ".join(dangling[:5])
            raise StructuralError(
                f"{len(dangling)} edge endpoints have no feature row (e.g. {shown})"
            )
        edges = np.empty((len(src_ids), 2), dtype=np.int64)
        edges[:, 0] = [index_of[t] for t in src_ids]
        edges[:, 1] = [index_of[t] for t in dst_ids]

    return RawTables(
        tx_ids=tx_ids,
        time_steps=time_steps,
        features=features,
        labels=labels,
        edges=edges,
        n_local=int(n_local),
    )


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def _sorted_order(ids: np.ndarray) -> np.ndarray:
    """Argsort tx ids: numeric when every id is a digit string, else
    lexicographic.  Total and deterministic either way."""
    if ids.size == 0:
        return np.empty(0, dtype=np.int64)
    as_str = [str(t) for t in ids]
    if all(t.isdigit() for t in as_str):
        return np.argsort(np.array([int(t) for t in as_str], dtype=np.int64), kind="stable")
    return np.argsort(np.array(as_str, dtype=object), kind="stable")


def preprocess(raw: RawTables) -> PreprocessedDataset:
    """Drop unlabeled nodes and their edges; reindex by sorted tx id.

    Output nodes are exactly the licit/illicit rows; edges keep only pairs
    whose endpoints both survive; indices refer to the new sorted order.
    """
    keep = raw.labels != UNKNOWN
    kept_rows = np.flatnonzero(keep)
    order = _sorted_order(raw.tx_ids[kept_rows])
    kept_sorted = kept_rows[order]

    new_index = np.full(raw.n_nodes, -1, dtype=np.int64)
    new_index[kept_sorted] = np.arange(kept_sorted.size)

    if raw.n_edges:
        e = raw.edges
        mask = keep[e[:, 0]] & keep[e[:, 1]]
        edges = new_index[e[mask]]
    else:
        edges = np.empty((0, 2), dtype=np.int64)

    return PreprocessedDataset(
        tx_ids=raw.tx_ids[kept_sorted].copy(),
        X=np.ascontiguousarray(raw.features[kept_sorted]),
        y=raw.labels[kept_sorted].copy(),
        time_steps=raw.time_steps[kept_sorted].copy(),
        edges=np.ascontiguousarray(edges, dtype=np.int64),
        n_local=raw.n_local,
    )


def temporal_split(ds: PreprocessedDataset, boundary: int = 34) -> TemporalSplit:
    """Train on time steps <= boundary, test on the rest."""
    if ds.n_nodes == 0:
        raise ValueError("cannot split an empty dataset")
    max_step = int(ds.time_steps.max())
    if not 1 <= boundary < max_step:
        raise ValueError(
            f"split boundary must satisfy 1 <= boundary < max time step ({max_step}), got {boundary}"
        )
    train_idx = np.flatnonzero(ds.time_steps <= boundary)
    test_idx = np.flatnonzero(ds.time_steps > boundary)
    return TemporalSplit(boundary=boundary, train_idx=train_idx, test_idx=test_idx)


def feature_view(ds: PreprocessedDataset, mode: str, include_time: bool = False) -> np.ndarray:
    """Select the feature columns for a modeling run.

    ``tx`` is the local columns only, ``tx_agg`` local plus aggregated.
    ``include_time`` appends the time step as a float column (off by
    default: the step indexes the split and is not a transaction property).
    """
    if mode not in FEATURE_MODES:
        raise ValueError(f"feature mode must be one of {FEATURE_MODES}, got {mode!r}")
    X = ds.X if mode == FEATURES_TX_AGG else ds.X[:, : ds.n_local]
    if include_time:
        X = np.column_stack([X, ds.time_steps.astype(np.float64)])
    return X


# ---------------------------------------------------------------------------
# Synthetic data with a planted illicit pattern
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MotifConfig:
    """Shape of the planted illicit pattern.

    Illicit transactions get a mean shift on the first ``shifted_cols``
    local features and ``fan_in`` distinct incoming edges, so both feature-
    and structure-based models have signal to find.
    """

    fan_in: int = 5
    feature_shift: float = 2.0
    shifted_cols: int = 3
    n_local: int = 10
    n_agg: int = 4
    unknown_rate: float = 0.15
    background_edges_per_node: float = 1.0


def synth_dataset(
    n_nodes: int,
    n_steps: int = 49,
    illicit_rate: float = 0.1,
    motif: MotifConfig | None = None,
    seed: int = 0,
) -> RawTables:
    """Deterministically generate a schema-compatible labeled graph."""
    motif = motif or MotifConfig()
    if n_nodes < 0:
        raise ValueError(f"n_nodes must be >= 0, got {n_nodes}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if not 0.0 <= illicit_rate <= 1.0:
        raise ValueError(f"illicit_rate must be in [0, 1], got {illicit_rate}")
    if not 0.0 <= motif.unknown_rate < 1.0:
        raise ValueError(f"unknown_rate must be in [0, 1), got {motif.unknown_rate}")
    if motif.shifted_cols > motif.n_local:
        raise ValueError("shifted_cols cannot exceed n_local")
    if n_nodes and n_nodes <= motif.fan_in:
        raise ValueError(f"need n_nodes > fan_in={motif.fan_in} to plant the motif")

    rng = np.random.default_rng(seed)
    n_feat = motif.n_local + motif.n_agg

    if n_nodes == 0:
        return RawTables(
            tx_ids=np.empty(0, dtype=object),
            time_steps=np.empty(0, dtype=np.int64),
            features=np.empty((0, n_feat), dtype=np.float64),
            labels=np.empty(0, dtype=np.int64),
            edges=np.empty((0, 2), dtype=np.int64),
            n_local=motif.n_local,
        )

    # Labels: illicit with prob illicit_rate, unknown with prob unknown_rate
    # of the remainder, licit otherwise.
    r = rng.random(n_nodes)
    labels = np.full(n_nodes, LICIT, dtype=np.int64)
    labels[r < illicit_rate] = ILLICIT
    labels[(r >= illicit_rate) & (r < illicit_rate + (1 - illicit_rate) * motif.unknown_rate)] = UNKNOWN

    time_steps = rng.integers(1, n_steps + 1, size=n_nodes).astype(np.int64)

    local = rng.standard_normal((n_nodes, motif.n_local))
    illicit_rows = np.flatnonzero(labels == ILLICIT)
    local[illicit_rows, : motif.shifted_cols] += motif.feature_shift

    # Edges: per-step random background plus a fan-in motif into each
    # illicit node (sources drawn from the whole graph so the in-degree
    # floor holds even in sparse steps).
    srcs: list[np.ndarray] = []
    dsts: list[np.ndarray] = []
    for step in range(1, n_steps + 1):
        members = np.flatnonzero(time_steps == step)
        if members.size < 2:
            continue
        k = int(round(motif.background_edges_per_node * members.size))
        if k:
            s = members[rng.integers(0, members.size, size=k)]
            d = members[rng.integers(0, members.size, size=k)]
            ok = s != d
            srcs.append(s[ok])
            dsts.append(d[ok])
    for hub in illicit_rows:
        pool = np.concatenate([np.arange(hub), np.arange(hub + 1, n_nodes)])
        chos = rng.choice(pool, size=motif.fan_in, replace=False)
        srcs.append(chos)
        dsts.append(np.full(motif.fan_in, hub, dtype=np.int64))
    if srcs:
        edges = np.column_stack([np.concatenate(srcs), np.concatenate(dsts)]).astype(np.int64)
    else:
        edges = np.empty((0, 2), dtype=np.int64)

    # Aggregated columns: true in-neighbor means of the first n_agg local
    # columns (zeros for nodes without inflows), so tx_agg mode carries
    # real one-hop information like the public layout.
    agg = np.zeros((n_nodes, motif.n_agg), dtype=np.float64)
    if motif.n_agg and edges.shape[0]:
        sums = kernels.segment_sum(local[edges[:, 0], : motif.n_agg], edges[:, 1], n_nodes)
        deg = np.bincount(edges[:, 1], minlength=n_nodes).astype(np.float64)
        nz = deg > 0
        agg[nz] = sums[nz] / deg[nz, None]

    features = np.column_stack([local, agg]) if n_feat else np.empty((n_nodes, 0))

    # Shuffle row order so nothing downstream can rely on generation order,
    # and give ids a non-sorted ordering to exercise the reindex step.
    perm = rng.permutation(n_nodes)
    inv = np.empty(n_nodes, dtype=np.int64)
    inv[perm] = np.arange(n_nodes)
    ids = np.array([str(100_000 + i * 3) for i in rng.permutation(n_nodes)], dtype=object)

    return RawTables(
        tx_ids=ids,
        time_steps=time_steps[perm],
        features=np.ascontiguousarray(features[perm]),
        labels=labels[perm],
        edges=inv[edges] if edges.size else edges,
        n_local=motif.n_local,
    )


# Canonical in-repo fixture used by the end-to-end tests and `selftest`.
FIXTURE_PARAMS = dict(n_nodes=2000, n_steps=49, illicit_rate=0.1, seed=7)


def fixture_raw() -> RawTables:
    """The shipped 2,000-node planted-pattern fixture."""
    return synth_dataset(**FIXTURE_PARAMS)


def write_raw_csv(raw: RawTables, out_dir) -> dict[str, str]:
    """Write RawTables as the three-file raw CSV layout; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "features": str(out / "features.csv"),
        "classes": str(out / "classes.csv"),
        "edges": str(out / "edgelist.csv"),
    }
    label_token = {ILLICIT: "1", LICIT: "2", UNKNOWN: "unknown"}
    with open(paths["features"], "w", encoding="utf-8", newline="\n") as fh:
        for i in range(raw.n_nodes):
            cells = [str(raw.tx_ids[i]), str(int(raw.time_steps[i]))]
            cells += [repr(float(v)) for v in raw.features[i]]
            fh.write(",".join(cells) + "\n")
    with open(paths["classes"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("txId,class\n")
        for i in range(raw.n_nodes):
            fh.write(f"{raw.tx_ids[i]},{label_token[int(raw.labels[i])]}\n")
    with open(paths["edges"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("txId1,txId2\n")
        for s, d in raw.edges:
            fh.write(f"{raw.tx_ids[s]},{raw.tx_ids[d]}\n")
    return paths


# ---------------------------------------------------------------------------
# Clean-dataset bundle
# ---------------------------------------------------------------------------

BUNDLE_VERSION = 1


def save_bundle(ds: PreprocessedDataset, path) -> None:
    """Persist a preprocessed dataset as one .npz bundle with a version tag."""
    np.savez(
        path,
        bundle_version=np.int64(BUNDLE_VERSION),
        tx_ids=np.array([str(t) for t in ds.tx_ids]),
        X=ds.X,
        y=ds.y,
        time_steps=ds.time_steps,
        edges=ds.edges.reshape(-1, 2),
        n_local=np.int64(ds.n_local),
    )


def load_bundle(path) -> PreprocessedDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"bundle not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        names = set(z.files)
        if "bundle_version" not in names:
            raise ValueError(f"not a dataset bundle: {path}")
        version = int(z["bundle_version"])
        if version != BUNDLE_VERSION:
            raise ValueError(f"unsupported bundle version {version} (want {BUNDLE_VERSION})")
        required = {"tx_ids", "X", "y", "time_steps", "edges", "n_local"}
        if not required <= names:
            raise ValueError(f"bundle missing fields: {sorted(required - names)}")
        return PreprocessedDataset(
            tx_ids=z["tx_ids"].astype(object),
            X=np.ascontiguousarray(z["X"], dtype=np.float64),
            y=z["y"].astype(np.int64),
            time_steps=z["time_steps"].astype(np.int64),
            edges=np.ascontiguousarray(z["edges"], dtype=np.int64).reshape(-1, 2),
            n_local=int(z["n_local"]),
        )


def write_manifest(raw: RawTables, path, seed: int | None = None, extra: dict | None = None) -> dict:
    """Write generation metadata next to synthetic CSVs."""
    manifest = {"generator": "amlgraph.synth_dataset", **raw.summary()}
    if seed is not None:
        manifest["seed"] = seed
    if extra:
        manifest.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
