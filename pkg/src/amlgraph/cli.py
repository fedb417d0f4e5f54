"""Command-line interface: ingest, train, eval, bench, export, selftest,
synth.

Configuration is a flat JSON file; every key has a kebab-case CLI flag
that overrides it.  All commands are deterministic for a fixed
(input, config, seed) triple: result CSVs are byte-identical across
reruns.  Wall-clock timings go to a separate timings.csv so the result
files stay reproducible.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import elliptic, gnn, graph, kernels, metrics, tensor
from . import baselines as bl
from .errors import NumericsError, ParseError, ShapeError, StructuralError, TrainingError

DATA_DIR_ENV = "AMLGRAPH_DATA_DIR"

FEATURE_MODES = (elliptic.FEATURES_TX, elliptic.FEATURES_TX_AGG)

# The benchmark grid: every baseline in both feature modes, then the two
# graph models on local features, baselines first so partial results land
# early.
BENCH_CELLS = tuple(
    [(fam, mode) for fam in (
        "decision_tree",
        "random_forest",
        "adaboost",
        "logreg",
        "svc",
        "knn",
        "mlp",
    ) for mode in FEATURE_MODES]
    + [("gcn", "tx"), ("gat", "tx")]
)

ALL_FAMILIES = tuple(dict.fromkeys([fam for fam, _ in BENCH_CELLS]))

# Flat config schema; None means "use the model family's own default".
DEFAULTS: dict = {
    "data_dir": None,
    "features_csv": None,
    "classes_csv": None,
    "edges_csv": None,
    "bundle": None,
    "out_dir": "runs",
    "feature_mode": "tx",
    "include_time": False,
    "split_boundary": 34,
    "model": "gcn",
    "seed": 0,
    "jobs": 1,
    "repeats": 1,
    "models": None,  # bench cells as "family:mode" strings; None = full grid
    # shared learning knobs (None -> family default)
    "lr": None,
    "epochs": None,
    "patience": 100,
    "l2": 1e-4,
    "dropout": None,
    "batch_norm": False,
    "symmetrize": True,
    "class_weight_licit": bl.DEFAULT_CLASS_WEIGHTS[0],
    "class_weight_illicit": bl.DEFAULT_CLASS_WEIGHTS[1],
    # gnn architecture
    "hidden": 32,
    "gat_hidden": 110,
    "heads": 5,
    "head_dim": 22,
    "gat_out_hidden": 330,
    # baselines
    "n_trees": 100,
    "max_depth": None,
    "min_leaf": 1,
    "rounds": 100,
    "stump_depth": 1,
    "k": 5,
    "mlp_hidden": [64, 32],
}

_RAW_BASENAMES = {
    "features_csv": ("elliptic_txs_features.csv", "features.csv"),
    "classes_csv": ("elliptic_txs_classes.csv", "classes.csv"),
    "edges_csv": ("elliptic_txs_edgelist.csv", "edgelist.csv"),
}

_CLI_ERRORS = (
    ParseError,
    StructuralError,
    ShapeError,
    NumericsError,
    TrainingError,
    ValueError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
    KeyError,
)


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def load_config(path=None, overrides: dict | None = None) -> dict:
    """DEFAULTS <- JSON file <- CLI overrides, with key validation."""
    cfg = dict(DEFAULTS)
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                file_cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CliError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise CliError(f"config {path} must be a JSON object")
        unknown = sorted(set(file_cfg) - set(DEFAULTS))
        if unknown:
            raise CliError(f"unknown config keys in {path}: {', '.join(unknown)}")
        cfg.update(file_cfg)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    if cfg["data_dir"] is None:
        cfg["data_dir"] = os.environ.get(DATA_DIR_ENV)
    if cfg["feature_mode"] not in FEATURE_MODES:
        raise CliError(f"feature_mode must be one of {FEATURE_MODES}, got {cfg['feature_mode']!r}")
    if cfg["patience"] is not None and cfg["patience"] <= 0:
        cfg["patience"] = None
    return cfg


def _class_weights(cfg) -> tuple:
    return (float(cfg["class_weight_licit"]), float(cfg["class_weight_illicit"]))


def resolve_raw_paths(cfg) -> dict:
    """Locate the three raw CSVs from explicit keys or the data dir."""
    paths = {}
    missing = []
    for key, basenames in _RAW_BASENAMES.items():
        if cfg.get(key):
            paths[key] = Path(cfg[key])
            continue
        found = None
        if cfg.get("data_dir"):
            for base in basenames:
                cand = Path(cfg["data_dir"]) / base
                if cand.exists():
                    found = cand
                    break
        if found is None:
            missing.append(f"{key} (looked for {' or '.join(basenames)})")
        else:
            paths[key] = found
    if missing:
        raise CliError(
            "cannot locate raw CSVs: "
            + "; ".join(missing)
            + f". Pass --features-csv/--classes-csv/--edges-csv, --data-dir, or set {DATA_DIR_ENV}."
        )
    for p in paths.values():
        if not Path(p).exists():
            raise CliError(f"no such file: {p}")
    return paths


def _load_dataset(cfg) -> elliptic.PreprocessedDataset:
    """Clean dataset from the bundle if given, otherwise from raw CSVs."""
    if cfg.get("bundle"):
        return elliptic.load_bundle(cfg["bundle"])
    paths = resolve_raw_paths(cfg)
    raw = elliptic.load_raw(paths["features_csv"], paths["classes_csv"], paths["edges_csv"])
    return elliptic.preprocess(raw)


def cell_seed(master_seed: int, family: str, mode: str, repeat: int = 0) -> int:
    """Independent per-cell seed derived by hashing, stable across runs."""
    digest = hashlib.sha256(f"{master_seed}:{family}:{mode}:{repeat}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# ---------------------------------------------------------------------------
# Model construction / persistence
# ---------------------------------------------------------------------------


def _make_baseline(family: str, cfg: dict, seed: int):
    cw = _class_weights(cfg)
    if family == "decision_tree":
        return bl.DecisionTree(max_depth=cfg["max_depth"], min_leaf=cfg["min_leaf"])
    if family == "random_forest":
        return bl.RandomForest(
            n_trees=cfg["n_trees"],
            max_depth=cfg["max_depth"],
            min_leaf=cfg["min_leaf"],
            seed=seed,
        )
    if family == "adaboost":
        return bl.AdaBoost(rounds=cfg["rounds"], stump_depth=cfg["stump_depth"])
    if family == "logreg":
        return bl.LogisticRegression(
            lr=0.5 if cfg["lr"] is None else cfg["lr"],
            epochs=500 if cfg["epochs"] is None else cfg["epochs"],
            l2=cfg["l2"],
            class_weights=cw,
        )
    if family == "svc":
        return bl.LinearSVC(
            l2=cfg["l2"],
            epochs=500 if cfg["epochs"] is None else cfg["epochs"],
            class_weights=cw,
        )
    if family == "knn":
        return bl.KNearestNeighbors(k=cfg["k"])
    if family == "mlp":
        return bl.MlpClassifier(
            hidden=tuple(cfg["mlp_hidden"]),
            epochs=200 if cfg["epochs"] is None else cfg["epochs"],
            lr=1e-3 if cfg["lr"] is None else cfg["lr"],
            class_weights=cw,
            seed=seed,
        )
    raise CliError(f"unknown model family {family!r}; choose from {', '.join(ALL_FAMILIES)}")


def _gnn_config(cfg: dict, seed: int) -> gnn.GnnTrainConfig:
    return gnn.GnnTrainConfig(
        epochs=1000 if cfg["epochs"] is None else cfg["epochs"],
        lr=1e-3 if cfg["lr"] is None else cfg["lr"],
        patience=cfg["patience"],
        class_weights=_class_weights(cfg),
        seed=seed,
        symmetrize=cfg["symmetrize"],
        hidden=cfg["hidden"],
        dropout=cfg["dropout"],
        batch_norm=cfg["batch_norm"],
        gat_hidden=cfg["gat_hidden"],
        heads=cfg["heads"],
        head_dim=cfg["head_dim"],
        gat_out_hidden=cfg["gat_out_hidden"],
    )


def _train_one(family: str, mode: str, ds, split, cfg: dict, seed: int):
    """Train one (family, feature-mode) cell; returns (model, test predictions,
    gnn history or None)."""
    X = elliptic.feature_view(ds, mode, include_time=cfg["include_time"])
    if family in gnn.GNN_FAMILIES:
        g = graph.build_graph(ds)
        trained, history = gnn.train_gnn(family, X, ds.y, g, split, _gnn_config(cfg, seed))
        return trained, trained.predict(split.test_idx), history
    model = _make_baseline(family, cfg, seed)
    model.fit(X[split.train_idx], ds.y[split.train_idx])
    return model, model.predict(X[split.test_idx]), None


def save_model(path, model, family: str, context: dict) -> None:
    """Checkpoint plus JSON sidecar describing how to rebuild the model."""
    tensor.save_checkpoint(path, model.to_entries())
    if family in gnn.GNN_FAMILIES:
        config = model.get_config()
    else:
        config = model.metadata()["config"]
    sidecar = {"format": 1, "family": family, "config": config, **context}
    with open(Path(path).with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path, ds=None):
    """Rebuild a checkpointed model; GNN families need the dataset."""
    sidecar_path = Path(path).with_suffix(".json")
    if not sidecar_path.exists():
        raise CliError(f"checkpoint sidecar not found: {sidecar_path}")
    with open(sidecar_path, "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    entries = tensor.load_checkpoint(path)
    family = sidecar["family"]
    if family in bl.BASELINE_FAMILIES:
        model = bl.BASELINE_FAMILIES[family].from_state(sidecar["config"], entries)
        return model, sidecar
    if family not in gnn.GNN_FAMILIES:
        raise CliError(f"checkpoint names unknown family {family!r}")
    if ds is None:
        raise CliError(f"evaluating a {family} checkpoint requires the dataset")
    X = elliptic.feature_view(
        ds, sidecar.get("feature_mode", "tx"), include_time=sidecar.get("include_time", False)
    )
    g = graph.build_graph(ds)
    src, dst = gnn.prepare_edges(
        g, symmetrize=sidecar.get("symmetrize", True), self_loops=(family == "gat")
    )
    return gnn.load_gnn(family, sidecar["config"], entries, X, src, dst), sidecar


def _predict_with(model, family: str, ds, split, mode: str, include_time: bool, on: str):
    idx = {"test": split.test_idx, "train": split.train_idx}.get(on)
    if on == "all":
        idx = np.arange(ds.n_nodes)
    if idx is None:
        raise CliError(f"--on must be train, test, or all, got {on!r}")
    if family in gnn.GNN_FAMILIES:
        return model.predict(idx), idx
    X = elliptic.feature_view(ds, mode, include_time=include_time)
    return model.predict(X[idx]), idx


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: dict, args) -> int:
    raw = elliptic.synth_dataset(
        n_nodes=args.n_nodes,
        n_steps=args.n_steps,
        illicit_rate=args.illicit_rate,
        seed=cfg["seed"],
    )
    out = Path(cfg["out_dir"])
    paths = elliptic.write_raw_csv(raw, out)
    manifest = elliptic.write_manifest(raw, out / "manifest.json", seed=cfg["seed"])
    print(f"wrote {paths['features']}, {paths['classes']}, {paths['edges']}")
    print(
        f"nodes={manifest['nodes']} edges={manifest['edges']} "
        f"illicit={manifest['label_counts']['illicit']} "
        f"licit={manifest['label_counts']['licit']} "
        f"unknown={manifest['label_counts']['unknown']}"
    )
    return 0


def cmd_ingest(cfg: dict, args) -> int:
    paths = resolve_raw_paths(cfg)
    raw = elliptic.load_raw(paths["features_csv"], paths["classes_csv"], paths["edges_csv"])
    counts = raw.label_counts()
    print(
        f"raw: nodes={raw.n_nodes} edges={raw.n_edges} "
        f"illicit={counts['illicit']} licit={counts['licit']} unknown={counts['unknown']}"
    )
    ds = elliptic.preprocess(raw)
    print(f"clean: nodes={ds.n_nodes} edges={ds.edges.shape[0]}")
    out = Path(args.out) if args.out else Path(cfg["out_dir"]) / "bundle.npz"
    out.parent.mkdir(parents=True, exist_ok=True)
    elliptic.save_bundle(ds, out)
    print(f"bundle: {out}")
    return 0


def cmd_train(cfg: dict, args) -> int:
    family = cfg["model"]
    if family not in ALL_FAMILIES:
        raise CliError(f"unknown model {family!r}; choose from {', '.join(ALL_FAMILIES)}")
    mode = cfg["feature_mode"]
    ds = _load_dataset(cfg)
    split = elliptic.temporal_split(ds, boundary=cfg["split_boundary"])
    seed = int(cfg["seed"])
    model, pred, history = _train_one(family, mode, ds, split, cfg, seed)
    report = metrics.full_report(
        pred, ds.y[split.test_idx], model=family, features=mode, seed=seed
    )

    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{family}_{mode}"
    context = {
        "feature_mode": mode,
        "include_time": cfg["include_time"],
        "split_boundary": cfg["split_boundary"],
        "symmetrize": cfg["symmetrize"],
        "seed": seed,
    }
    save_model(out / f"{stem}.ckpt", model, family, context)
    if history is not None:
        gnn.write_history_csv(out / f"history_{stem}.csv", history)
    metrics.write_results_csv(out / f"report_{stem}.csv", [report])

    print(
        f"{family} ({mode}): test illicit P={report.precision_illicit:.3f} "
        f"R={report.recall_illicit:.3f} F1={report.f1_illicit:.3f} "
        f"micro-F1={report.micro_f1:.3f} [n={report.n_samples}]"
    )
    print(f"checkpoint: {out / (stem + '.ckpt')}")
    return 0


def cmd_eval(cfg: dict, args) -> int:
    if not args.checkpoint:
        raise CliError("eval requires --checkpoint")
    ds = _load_dataset(cfg)
    model, sidecar = load_model(args.checkpoint, ds)
    boundary = (
        cfg["split_boundary"]
        if args.split_boundary is not None
        else sidecar.get("split_boundary", cfg["split_boundary"])
    )
    split = elliptic.temporal_split(ds, boundary=boundary)
    mode = sidecar.get("feature_mode", cfg["feature_mode"])
    pred, idx = _predict_with(
        model, sidecar["family"], ds, split, mode, sidecar.get("include_time", False), args.on
    )
    report = metrics.full_report(
        pred, ds.y[idx], model=sidecar["family"], features=mode, seed=sidecar.get("seed", 0)
    )
    if args.out:
        metrics.write_results_csv(args.out, [report])
    print(metrics.results_csv([report]), end="")
    return 0


def _parse_cells(cfg) -> list:
    if not cfg.get("models"):
        return list(BENCH_CELLS)
    cells = []
    for item in cfg["models"]:
        if ":" not in item:
            raise CliError(f"bench cell {item!r} must be 'family:feature_mode'")
        fam, mode = item.split(":", 1)
        if fam not in ALL_FAMILIES:
            raise CliError(f"unknown model family {fam!r} in models list")
        if mode not in FEATURE_MODES:
            raise CliError(f"unknown feature mode {mode!r} in models list")
        if (fam, mode) in cells:
            raise CliError(f"duplicate bench cell {item!r}")
        cells.append((fam, mode))
    return cells


def _run_cell(payload: dict):
    """One bench cell (all repeats), importable at top level so it can run
    in a worker process."""
    cfg = payload["cfg"]
    family, mode = payload["family"], payload["mode"]
    ds = _load_dataset(cfg)
    split = elliptic.temporal_split(ds, boundary=cfg["split_boundary"])
    t0 = time.perf_counter()
    reports = []
    history = None
    for r in range(cfg["repeats"]):
        seed = cell_seed(cfg["seed"], family, mode, repeat=r)
        _, pred, hist = _train_one(family, mode, ds, split, cfg, seed)
        reports.append(
            metrics.full_report(pred, ds.y[split.test_idx], model=family, features=mode, seed=seed)
        )
        if r == 0:
            history = hist
    seconds = time.perf_counter() - t0
    return {"reports": reports, "history": history, "seconds": seconds}


_METRIC_FIELDS = (
    "precision_illicit",
    "recall_illicit",
    "f1_illicit",
    "precision_licit",
    "recall_licit",
    "f1_licit",
    "micro_f1",
)


def _mean_report(reports) -> metrics.EvalReport:
    if len(reports) == 1:
        return reports[0]
    first = reports[0]
    sd = {}
    mean = {}
    for name in _METRIC_FIELDS:
        vals = np.array([getattr(r, name) for r in reports])
        mean[name] = float(vals.mean())
        sd[name] = float(vals.std(ddof=1))
    return metrics.EvalReport(
        model=first.model,
        features=first.features,
        seed=first.seed,
        n_samples=first.n_samples,
        extra={"repeats": len(reports), "sd": sd},
        **mean,
    )


def cmd_bench(cfg: dict, args) -> int:
    cells = _parse_cells(cfg)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    # Resolve data source once so worker processes agree with the parent.
    if not cfg.get("bundle"):
        paths = resolve_raw_paths(cfg)
        cfg = dict(cfg, **{k: str(v) for k, v in paths.items()})

    payloads = [{"cfg": cfg, "family": fam, "mode": mode} for fam, mode in cells]
    results: list = [None] * len(cells)
    failures: list[str] = []

    jobs = max(1, int(cfg["jobs"]))
    if jobs == 1:
        for i, payload in enumerate(payloads):
            name = f"{payload['family']}:{payload['mode']}"
            try:
                results[i] = _run_cell(payload)
                print(f"done {name} ({results[i]['seconds']:.1f}s)")
            except _CLI_ERRORS as exc:
                failures.append(f"{name}: {exc}")
                print(f"FAILED {name}: {exc}", file=sys.stderr)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_run_cell, p): i for i, p in enumerate(payloads)}
            for fut, i in futures.items():
                name = f"{payloads[i]['family']}:{payloads[i]['mode']}"
                try:
                    results[i] = fut.result()
                    print(f"done {name} ({results[i]['seconds']:.1f}s)")
                except Exception as exc:  # worker failures arrive as generic
                    failures.append(f"{name}: {exc}")
                    print(f"FAILED {name}: {exc}", file=sys.stderr)

    reports = []
    timing_rows = []
    for (fam, mode), res in zip(cells, results):
        if res is None:
            continue
        reports.append(_mean_report(res["reports"]))
        timing_rows.append(f"{fam},{mode},{res['seconds']:.3f}")
        if res["history"] is not None:
            gnn.write_history_csv(out / f"history_{fam}_{mode}.csv", res["history"])

    if reports:
        metrics.write_results_csv(out / "results.csv", reports)
        illicit_md = metrics.markdown_table(reports, positive="illicit")
        licit_md = metrics.markdown_table(reports, positive="licit")
        (out / "table_illicit.md").write_text(illicit_md, encoding="utf-8")
        (out / "table_licit.md").write_text(licit_md, encoding="utf-8")
        if cfg["repeats"] > 1:
            lines = ["model,features,f1_illicit_mean,f1_illicit_sd"]
            for r in reports:
                sd = r.extra.get("sd", {}).get("f1_illicit", 0.0)
                lines.append(f"{r.model},{r.features},{r.f1_illicit:.4f},{sd:.4f}")
            (out / "repeats_summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(illicit_md)
    with open(out / "timings.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("model,features,seconds\n" + "".join(row + "\n" for row in timing_rows))

    if failures:
        (out / "failures.txt").write_text("\n".join(failures) + "\n", encoding="utf-8")
        print(f"{len(failures)} cell(s) failed; see {out / 'failures.txt'}", file=sys.stderr)
        return 1
    return 0


def cmd_export(cfg: dict, args) -> int:
    paths = resolve_raw_paths(cfg)
    raw = elliptic.load_raw(paths["features_csv"], paths["classes_csv"], paths["edges_csv"])
    g = graph.build_full_graph(raw)

    if args.tx is not None:
        hits = np.flatnonzero(raw.tx_ids == str(args.tx))
        if hits.size == 0:
            raise CliError(f"transaction id {args.tx!r} not found")
        center = int(hits[0])
    elif args.tx_index is not None:
        if not 0 <= args.tx_index < raw.n_nodes:
            raise CliError(f"tx index {args.tx_index} outside [0, {raw.n_nodes})")
        center = args.tx_index
    else:
        raise CliError("export requires --tx or --tx-index")

    sub = graph.ego_subgraph(g, center, depth=args.depth)

    if args.annotations == "truth":
        annotations = {int(i): int(raw.labels[i]) for i in sub.members}
    elif args.annotations == "predicted":
        if not args.checkpoint:
            raise CliError("annotations=predicted requires --checkpoint")
        ds = _load_dataset(cfg)
        model, sidecar = load_model(args.checkpoint, ds)
        clean_index = {tx: i for i, tx in enumerate(ds.tx_ids)}
        member_tx = raw.tx_ids[sub.members]
        mapped = [(m, clean_index.get(tx)) for m, tx in zip(sub.members, member_tx)]
        known = [(int(m), ci) for m, ci in mapped if ci is not None]
        annotations = {}
        if known:
            clean_rows = np.array([ci for _, ci in known])
            if sidecar["family"] in gnn.GNN_FAMILIES:
                pred = model.predict(clean_rows)
            else:
                X = elliptic.feature_view(
                    ds,
                    sidecar.get("feature_mode", cfg["feature_mode"]),
                    include_time=sidecar.get("include_time", False),
                )
                pred = model.predict(X[clean_rows])
            annotations = {m: int(p) for (m, _), p in zip(known, pred)}
    elif args.annotations == "none":
        annotations = None
    else:
        raise CliError(f"--annotations must be truth, predicted, or none, got {args.annotations!r}")

    ext = "dot" if args.format == "dot" else "graphml"
    out_path = Path(args.out) if args.out else Path(cfg["out_dir"]) / (
        f"ego_{raw.tx_ids[center]}_d{args.depth}.{ext}"
    )
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if args.format == "dot":
        graph.export_dot(sub, annotations, path=out_path, tx_ids=raw.tx_ids)
    else:
        labels = {int(i): int(raw.labels[i]) for i in sub.members}
        graph.export_graphml(
            sub,
            path=out_path,
            labels=labels,
            predictions=annotations if args.annotations == "predicted" else None,
            time_steps={int(i): int(raw.time_steps[i]) for i in sub.members},
            tx_ids=raw.tx_ids,
        )
    print(f"wrote {out_path} (center={raw.tx_ids[center]}, members={sub.n_members}, edges={len(sub.edges)})")
    return 0


# ---------------------------------------------------------------------------
# Self-test
# ---------------------------------------------------------------------------


def _selftest_checks(inject_gradient_fault: bool = False):
    """Yield (name, callable) pairs; each callable returns a detail string
    or raises AssertionError."""

    def segment_oracles():
        rng = np.random.default_rng(0)
        for _ in range(5):
            e, n, c = int(rng.integers(1, 400)), int(rng.integers(1, 40)), int(rng.integers(1, 5))
            data = rng.normal(size=(e, c))
            ids = rng.integers(0, n, size=e)
            want = np.zeros((n, c))
            for i in range(e):
                want[ids[i]] += data[i]
            got = kernels.segment_sum(data, ids, n)
            assert np.max(np.abs(got - want)) <= 1e-12
            scores = rng.normal(size=e)
            sm = kernels.segment_softmax(scores, ids, n)
            for s in range(n):
                m = ids == s
                if m.any():
                    ex = np.exp(scores[m] - scores[m].max())
                    assert np.max(np.abs(sm[m] - ex / ex.sum())) <= 1e-12
        return "segment_sum and segment_softmax match naive loops"

    def dense_grad():
        rng = np.random.default_rng(1)
        lay = tensor.Dense(4, 3, rng, name="d")
        X = rng.normal(size=(6, 4))
        R = rng.normal(size=(6, 3))

        def f(inputs):
            lay.weight[...] = inputs[0]
            lay.bias[...] = inputs[1]
            out = lay.forward(X)
            loss = float((out * R).sum())
            lay.backward(R)
            return loss, [lay.d_weight.copy(), lay.d_bias.copy()]

        err = tensor.grad_check(f, [lay.weight.copy(), lay.bias.copy()], h=1e-6)
        assert err < 1e-4, f"dense gradient error {err:.2e}"
        return f"dense gradient error {err:.2e}"

    def xent_grad():
        rng = np.random.default_rng(2)
        logits0 = rng.normal(size=(7, 2))
        y = rng.integers(0, 2, size=7)
        w = np.where(y == 1, 0.7, 0.3)

        def f(inputs):
            loss, grad = tensor.softmax_xent(inputs[0], y, w)
            return loss, [grad]

        err = tensor.grad_check(f, [logits0], h=1e-6)
        assert err < 1e-4, f"softmax-xent gradient error {err:.2e}"
        return f"softmax-xent gradient error {err:.2e}"

    def conv_grad():
        rng = np.random.default_rng(3)
        edges = np.array([[0, 1], [1, 2], [2, 0], [3, 1], [2, 3]], dtype=np.int64)
        g = graph.TxGraph.from_edges(4, edges)
        src, dst = gnn.prepare_edges(g, symmetrize=True)
        X = rng.normal(size=(4, 3))
        R = rng.normal(size=(4, 3))
        lay = gnn.GraphConvLayer(3, rng, "c")
        base = [p for p in lay.params()]

        def f(inputs):
            for p, v in zip(base, inputs):
                p[...] = v
            out = lay.forward(X, src, dst, train=True)
            loss = float((out * R).sum())
            lay.backward(R)
            grads = [g.copy() for g in lay.grads()]
            if inject_gradient_fault:
                grads[0] = grads[0] + 1e-3
            return loss, grads

        err = tensor.grad_check(f, [p.copy() for p in base], h=1e-6)
        assert err < 1e-4, f"graph_conv gradient error {err:.2e}"
        return f"graph_conv gradient error {err:.2e}"

    def attention_grad():
        rng = np.random.default_rng(4)
        edges = np.array([[0, 1], [1, 2], [2, 0], [1, 3]], dtype=np.int64)
        g = graph.TxGraph.from_edges(4, edges)
        src, dst = gnn.prepare_edges(g, symmetrize=True, self_loops=True)
        X = rng.normal(size=(4, 3))
        R = rng.normal(size=(4, 2))
        head = gnn.AttentionHead(3, 2, rng, "h")
        base = head.params()

        def f(inputs):
            for p, v in zip(base, inputs):
                p[...] = v
            out = head.forward(X, src, dst, train=True)
            loss = float((out * R).sum())
            head.backward(R)
            return loss, [g.copy() for g in head.grads()]

        err = tensor.grad_check(f, [p.copy() for p in base], h=1e-6)
        assert err < 1e-4, f"attention gradient error {err:.2e}"
        alpha = head.attention_weights(X, src, dst)
        sums = kernels.segment_sum(alpha, dst, 4)
        assert np.max(np.abs(sums - 1.0)) <= 1e-12, "attention weights do not sum to 1"
        return f"attention gradient error {err:.2e}; weights sum to 1"

    def full_model_grads():
        rng = np.random.default_rng(5)
        edges = rng.integers(0, 8, size=(12, 2)).astype(np.int64)
        edges = edges[edges[:, 0] != edges[:, 1]]
        g = graph.TxGraph.from_edges(8, edges)
        X = rng.normal(size=(8, 3))
        y = rng.integers(0, 2, size=8).astype(np.int64)
        w = np.where(y == 1, 0.7, 0.3)
        details = []
        for kind, model, loops in (
            ("gcn", gnn.GcnModel(3, hidden=3, seed=6), False),
            ("gat", gnn.GatModel(3, hidden=4, heads=2, head_dim=2, out_hidden=3, dropout=0.0, seed=6), True),
        ):
            src, dst = gnn.prepare_edges(g, symmetrize=True, self_loops=loops)
            params = model.params()
            # Check at random parameters: zero-init biases can park a relu
            # input exactly on its kink, where central differences are wrong.
            base = [rng.normal(size=p.shape) * 0.5 for p in params]

            def f(inputs):
                for p, v in zip(params, inputs):
                    p[...] = v
                logits = model.forward(X, src, dst, train=True)
                loss, d = tensor.softmax_xent(logits, y, w)
                model.backward(d)
                return loss, [gr.copy() for gr in model.grads()]

            err = tensor.grad_check(f, base, h=1e-6)
            assert err < 1e-4, f"{kind} gradient error {err:.2e}"
            details.append(f"{kind} {err:.2e}")
        return "full-model gradient errors: " + ", ".join(details)

    def table_f1_values():
        v1 = metrics.f1(0.906, 0.790)
        assert abs(v1 - 0.844) <= 5e-4, f"F1(0.906, 0.790) = {v1:.6f}"
        v2 = metrics.f1(0.981, 0.651)
        assert abs(v2 - 0.782) <= 1.1e-3, f"F1(0.981, 0.651) = {v2:.6f}"
        rng = np.random.default_rng(6)
        for _ in range(20):
            n = int(rng.integers(1, 100))
            p = rng.integers(0, 2, size=n)
            t = rng.integers(0, 2, size=n)
            assert abs(metrics.micro_f1(p, t) - np.mean(p == t)) <= 1e-12
        return f"F1 checks: {v1:.4f}, {v2:.4f}; micro-F1 equals accuracy"

    def tree_oracle():
        rng = np.random.default_rng(7)
        for trial in range(10):
            n = int(rng.integers(8, 80))
            nf = int(rng.integers(1, 5))
            X = rng.normal(size=(n, nf))
            y = rng.integers(0, 2, size=n)
            if len(np.unique(y)) < 2:
                continue
            tree = bl.DecisionTree(max_depth=1).fit(X, y)
            best = None
            for fidx in range(nf):
                vals = np.unique(X[:, fidx])
                for a, b in zip(vals[:-1], vals[1:]):
                    t = (a + b) / 2.0
                    if t >= b:
                        continue
                    left = X[:, fidx] <= t
                    lc = [np.sum((y == 0) & left), np.sum((y == 1) & left)]
                    rc = [np.sum((y == 0) & ~left), np.sum((y == 1) & ~left)]
                    gain = bl.info_gain(np.add(lc, rc), lc, rc)
                    if best is None or gain > best[0]:
                        best = (gain, fidx, t)
            if best is None or best[0] <= 0:
                continue
            got = tree.root_split
            assert got is not None and got[0] == best[1] and abs(got[1] - best[2]) < 1e-12, (
                f"trial {trial}: root {got} != oracle {best[1:]}"
            )
        return "decision-tree root splits match exhaustive search"

    def knn_oracle():
        rng = np.random.default_rng(8)
        for _ in range(5):
            ntr = int(rng.integers(10, 200))
            nf = int(rng.integers(2, 5))
            Xtr = rng.normal(size=(ntr, nf))
            ytr = rng.integers(0, 2, size=ntr)
            Xte = rng.normal(size=(20, nf))
            k = int(rng.integers(1, min(6, ntr + 1)))
            model = bl.KNearestNeighbors(k=k).fit(Xtr, ytr)
            mu, sd = Xtr.mean(0), Xtr.std(0)
            sd[sd == 0] = 1.0
            A, Q = (Xtr - mu) / sd, (Xte - mu) / sd
            for i in range(Q.shape[0]):
                d = np.sqrt(((A - Q[i]) ** 2).sum(1))
                order = np.lexsort((np.arange(ntr), d))[:k]
                votes = int(ytr[order].sum())
                want = 1 if 2 * votes > k else 0
                assert model.predict(Xte[i : i + 1])[0] == want
        return "k-NN matches brute-force oracle"

    def adaboost_weights():
        rng = np.random.default_rng(9)
        X = rng.normal(size=(40, 3))
        y = (X[:, 0] + 0.5 * rng.normal(size=40) > 0).astype(np.int64)
        model = bl.AdaBoost(rounds=10).fit(X, y)
        w = np.full(40, 1.0 / 40)
        for stump, alpha in zip(model.stumps, model.alphas):
            assert abs(w.sum() - 1.0) <= 1e-12 and np.all(w >= 0)
            pred = stump.predict(X)
            agree = np.where(pred == y, 1.0, -1.0)
            w = w * np.exp(-alpha * agree)
            w = w / w.sum()
        return f"AdaBoost weights stay a distribution over {len(model.stumps)} rounds"

    def relabel_equivariance():
        rng = np.random.default_rng(10)
        n = 12
        edges = rng.integers(0, n, size=(20, 2)).astype(np.int64)
        edges = edges[edges[:, 0] != edges[:, 1]]
        g = graph.TxGraph.from_edges(n, edges)
        X = rng.normal(size=(n, 4))
        model = gnn.GcnModel(4, hidden=5, seed=11)
        src, dst = gnn.prepare_edges(g, symmetrize=True)
        out = model.forward(X, src, dst, train=False)
        perm = rng.permutation(n)
        inv = np.argsort(perm)
        g2 = graph.TxGraph.from_edges(n, np.stack([perm[edges[:, 0]], perm[edges[:, 1]]], 1))
        src2, dst2 = gnn.prepare_edges(g2, symmetrize=True)
        out2 = model.forward(X[inv], src2, dst2, train=False)
        assert np.array_equal(out2, out[inv]), "relabeled outputs differ"
        return "node relabeling permutes outputs exactly"

    return [
        ("segment-op oracles", segment_oracles),
        ("dense gradient", dense_grad),
        ("softmax-xent gradient", xent_grad),
        ("graph-conv gradient", conv_grad),
        ("attention gradient", attention_grad),
        ("full-model gradients", full_model_grads),
        ("benchmark F1 values", table_f1_values),
        ("tree split oracle", tree_oracle),
        ("k-NN oracle", knn_oracle),
        ("AdaBoost weight distribution", adaboost_weights),
        ("relabeling equivariance", relabel_equivariance),
    ]


def cmd_selftest(cfg: dict, args) -> int:
    failures = 0
    for name, check in _selftest_checks(inject_gradient_fault=args.inject_gradient_fault):
        try:
            detail = check()
            print(f"PASS {name}: {detail}")
        except AssertionError as exc:
            failures += 1
            print(f"FAIL {name}: {exc}")
    total = len(_selftest_checks())
    print(f"{total - failures}/{total} checks passed")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--data-dir", dest="data_dir", help=f"dataset root (default ${DATA_DIR_ENV})")
    p.add_argument("--features-csv", dest="features_csv")
    p.add_argument("--classes-csv", dest="classes_csv")
    p.add_argument("--edges-csv", dest="edges_csv")
    p.add_argument("--bundle", dest="bundle", help="preprocessed .npz bundle")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--feature-mode", dest="feature_mode", choices=FEATURE_MODES)
    p.add_argument("--include-time", dest="include_time", action="store_const", const=True)
    p.add_argument("--split-boundary", dest="split_boundary", type=int)
    p.add_argument("--model", dest="model", choices=ALL_FAMILIES)
    p.add_argument("--seed", dest="seed", type=int)
    p.add_argument("--jobs", dest="jobs", type=int)
    p.add_argument("--repeats", dest="repeats", type=int)
    p.add_argument("--lr", dest="lr", type=float)
    p.add_argument("--epochs", dest="epochs", type=int)
    p.add_argument("--patience", dest="patience", type=int, help="<= 0 disables early stopping")
    p.add_argument("--l2", dest="l2", type=float)
    p.add_argument("--dropout", dest="dropout", type=float)
    p.add_argument("--batch-norm", dest="batch_norm", action="store_const", const=True)
    p.add_argument("--no-symmetrize", dest="symmetrize", action="store_const", const=False)
    p.add_argument("--class-weight-licit", dest="class_weight_licit", type=float)
    p.add_argument("--class-weight-illicit", dest="class_weight_illicit", type=float)
    p.add_argument("--hidden", dest="hidden", type=int)
    p.add_argument("--gat-hidden", dest="gat_hidden", type=int)
    p.add_argument("--heads", dest="heads", type=int)
    p.add_argument("--head-dim", dest="head_dim", type=int)
    p.add_argument("--gat-out-hidden", dest="gat_out_hidden", type=int)
    p.add_argument("--n-trees", dest="n_trees", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--min-leaf", dest="min_leaf", type=int)
    p.add_argument("--rounds", dest="rounds", type=int)
    p.add_argument("--stump-depth", dest="stump_depth", type=int)
    p.add_argument("--k", dest="k", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amlgraph",
        description="Transaction-graph classification benchmark: data ingestion, "
        "from-scratch baselines, graph neural models, and evaluation tables.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic raw CSV dataset")
    _add_config_flags(p)
    p.add_argument("--n-nodes", type=int, default=2000)
    p.add_argument("--n-steps", type=int, default=49)
    p.add_argument("--illicit-rate", type=float, default=0.1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse raw CSVs, preprocess, write a clean bundle")
    _add_config_flags(p)
    p.add_argument("--out", help="bundle path (default <out-dir>/bundle.npz)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one model and report test metrics")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--on", choices=("train", "test", "all"), default="test")
    p.add_argument("--out", help="write the report CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="run the full benchmark grid and emit tables")
    _add_config_flags(p)
    p.add_argument(
        "--models",
        nargs="+",
        help="subset of cells as family:mode (e.g. random_forest:tx_agg gcn:tx)",
    )
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export", help="export an annotated ego subgraph (DOT/GraphML)")
    _add_config_flags(p)
    p.add_argument("--tx", help="transaction id to center on")
    p.add_argument("--tx-index", type=int, help="raw row index to center on")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--annotations", choices=("truth", "predicted", "none"), default="truth")
    p.add_argument("--format", choices=("dot", "graphml"), default="dot")
    p.add_argument("--checkpoint", help="required for --annotations predicted")
    p.add_argument("--out", help="output file path")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("selftest", help="run built-in numeric and oracle checks")
    _add_config_flags(p)
    p.add_argument(
        "--inject-gradient-fault",
        action="store_true",
        help="negative control: corrupt one gradient and expect a failure",
    )
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = {k: getattr(args, k) for k in DEFAULTS if hasattr(args, k)}
        if getattr(args, "models", None):
            overrides["models"] = args.models
        cfg = load_config(getattr(args, "config", None), overrides)
        return args.func(cfg, args)
    except (CliError, *_CLI_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
