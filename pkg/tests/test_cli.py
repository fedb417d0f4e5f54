import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from amlgraph import cli, elliptic


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Small synthetic workspace: raw CSVs plus a clean bundle."""
    root = tmp_path_factory.mktemp("cliws")
    data = root / "data"
    bundle = root / "runs" / "bundle.npz"
    assert cli.main(["synth", "--out-dir", str(data), "--n-nodes", "600", "--seed", "7"]) == 0
    assert cli.main(["ingest", "--data-dir", str(data), "--out", str(bundle)]) == 0
    return {"root": root, "data": data, "bundle": bundle}


def test_synth_writes_csvs_and_manifest(tmp_path, capsys):
    out = tmp_path / "d"
    assert cli.main(["synth", "--out-dir", str(out), "--n-nodes", "200", "--n-steps", "10"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("wrote ")
    assert lines[1].startswith("nodes=200 edges=")
    assert "illicit=" in lines[1] and "unknown=" in lines[1]
    for name in ("features.csv", "classes.csv", "edgelist.csv", "manifest.json"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["nodes"] == 200
    assert manifest["seed"] == 0


def test_synth_same_seed_same_bytes(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    args = ["synth", "--n-nodes", "200", "--n-steps", "10"]
    assert cli.main(args + ["--out-dir", str(a), "--seed", "4"]) == 0
    assert cli.main(args + ["--out-dir", str(b), "--seed", "4"]) == 0
    assert cli.main(args + ["--out-dir", str(c), "--seed", "5"]) == 0
    assert (a / "features.csv").read_bytes() == (b / "features.csv").read_bytes()
    assert (a / "features.csv").read_bytes() != (c / "features.csv").read_bytes()


def test_ingest_reports_counts_and_bundle_round_trips(ws, tmp_path, capsys):
    out = tmp_path / "bundle2.npz"
    assert cli.main(["ingest", "--data-dir", str(ws["data"]), "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("raw: nodes=600 ")
    assert lines[1].startswith("clean: nodes=")
    ds = elliptic.load_bundle(out)
    ref = elliptic.load_bundle(ws["bundle"])
    assert np.array_equal(ds.X, ref.X)
    assert np.array_equal(ds.edges, ref.edges)


def test_train_decision_tree_writes_artifacts(ws, tmp_path, capsys):
    out = tmp_path / "run"
    rc = cli.main(
        ["train", "--model", "decision_tree", "--bundle", str(ws["bundle"]), "--out-dir", str(out)]
    )
    assert rc == 0
    text = capsys.readouterr().out
    assert "decision_tree (tx): test illicit P=" in text
    assert "checkpoint: " in text
    assert (out / "decision_tree_tx.ckpt").exists()
    sidecar = json.loads((out / "decision_tree_tx.json").read_text())
    assert sidecar["family"] == "decision_tree"
    assert sidecar["feature_mode"] == "tx"
    assert (out / "report_decision_tree_tx.csv").exists()


def test_eval_reproduces_training_report(ws, tmp_path, capsys):
    out = tmp_path / "run"
    assert (
        cli.main(
            [
                "train",
                "--model",
                "gcn",
                "--bundle",
                str(ws["bundle"]),
                "--out-dir",
                str(out),
                "--epochs",
                "15",
                "--patience",
                "0",
                "--seed",
                "3",
            ]
        )
        == 0
    )
    capsys.readouterr()
    history = (out / "history_gcn_tx.csv").read_text().splitlines()
    assert history[0] == "epoch,loss,train_f1,test_f1"
    assert len(history) == 16  # header + one row per epoch, early stop disabled

    eval_out = tmp_path / "eval_report.csv"
    rc = cli.main(
        [
            "eval",
            "--checkpoint",
            str(out / "gcn_tx.ckpt"),
            "--bundle",
            str(ws["bundle"]),
            "--out",
            str(eval_out),
        ]
    )
    assert rc == 0
    printed = capsys.readouterr().out
    assert printed == eval_out.read_text()
    assert eval_out.read_bytes() == (out / "report_gcn_tx.csv").read_bytes()


def test_eval_on_flag_selects_the_split(ws, tmp_path, capsys):
    out = tmp_path / "run"
    assert (
        cli.main(
            ["train", "--model", "knn", "--bundle", str(ws["bundle"]), "--out-dir", str(out)]
        )
        == 0
    )
    capsys.readouterr()
    rows = {}
    for on in ("test", "all"):
        rc = cli.main(
            [
                "eval",
                "--checkpoint",
                str(out / "knn_tx.ckpt"),
                "--bundle",
                str(ws["bundle"]),
                "--on",
                on,
            ]
        )
        assert rc == 0
        header, rows[on] = capsys.readouterr().out.splitlines()
        assert rows[on].startswith("knn,tx,")
    # the whole graph includes the training rows, so the numbers move
    assert rows["all"] != rows["test"]


def test_bench_subset_rerun_is_byte_identical(ws, tmp_path, capsys):
    base = [
        "bench",
        "--bundle",
        str(ws["bundle"]),
        "--models",
        "decision_tree:tx",
        "knn:tx",
    ]
    d1, d2, d3 = (tmp_path / n for n in ("b1", "b2", "b3"))
    assert cli.main(base + ["--out-dir", str(d1)]) == 0
    assert cli.main(base + ["--out-dir", str(d2)]) == 0
    assert cli.main(base + ["--out-dir", str(d3), "--jobs", "2"]) == 0
    capsys.readouterr()
    for name in ("results.csv", "table_illicit.md", "table_licit.md"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name
        assert (d1 / name).read_bytes() == (d3 / name).read_bytes(), name
    timings = (d1 / "timings.csv").read_text().splitlines()
    assert timings[0] == "model,features,seconds"
    assert len(timings) == 3


def test_bench_repeats_writes_summary(ws, tmp_path, capsys):
    out = tmp_path / "rep"
    rc = cli.main(
        [
            "bench",
            "--bundle",
            str(ws["bundle"]),
            "--models",
            "random_forest:tx",
            "--repeats",
            "3",
            "--out-dir",
            str(out),
        ]
    )
    assert rc == 0
    capsys.readouterr()
    lines = (out / "repeats_summary.csv").read_text().splitlines()
    assert lines[0] == "model,features,f1_illicit_mean,f1_illicit_sd"
    assert lines[1].startswith("random_forest,tx,")


def test_bench_failed_cell_is_recorded_and_others_survive(ws, tmp_path, capsys):
    out = tmp_path / "fail"
    with np.errstate(all="ignore"):
        rc = cli.main(
            [
                "bench",
                "--bundle",
                str(ws["bundle"]),
                "--models",
                "gcn:tx",
                "decision_tree:tx",
                "--lr",
                "1e60",
                "--epochs",
                "5",
                "--out-dir",
                str(out),
            ]
        )
    assert rc == 1
    err = capsys.readouterr().err
    assert "FAILED gcn:tx" in err
    failures = (out / "failures.txt").read_text()
    assert failures.startswith("gcn:tx: ")
    results = (out / "results.csv").read_text()
    assert "decision_tree" in results and "gcn" not in results


def test_bench_rejects_bad_cells(ws, tmp_path, capsys):
    args = ["bench", "--bundle", str(ws["bundle"]), "--out-dir", str(tmp_path)]
    assert cli.main(args + ["--models", "decision_tree:tx", "decision_tree:tx"]) == 1
    assert "duplicate" in capsys.readouterr().err
    assert cli.main(args + ["--models", "nonsense:tx"]) == 1
    assert "unknown model family" in capsys.readouterr().err
    assert cli.main(args + ["--models", "gcn"]) == 1
    assert "must be 'family:feature_mode'" in capsys.readouterr().err


def test_export_truth_predicted_and_graphml(ws, tmp_path, capsys):
    run = tmp_path / "run"
    assert (
        cli.main(
            ["train", "--model", "decision_tree", "--bundle", str(ws["bundle"]), "--out-dir", str(run)]
        )
        == 0
    )
    truth_dot = tmp_path / "truth.dot"
    rc = cli.main(
        [
            "export",
            "--data-dir",
            str(ws["data"]),
            "--tx-index",
            "0",
            "--out",
            str(truth_dot),
        ]
    )
    assert rc == 0
    assert "wrote" in capsys.readouterr().out
    text = truth_dot.read_text()
    assert text.startswith("digraph")
    assert "fillcolor=" in text

    pred_dot = tmp_path / "pred.dot"
    rc = cli.main(
        [
            "export",
            "--data-dir",
            str(ws["data"]),
            "--bundle",
            str(ws["bundle"]),
            "--tx-index",
            "0",
            "--annotations",
            "predicted",
            "--checkpoint",
            str(run / "decision_tree_tx.ckpt"),
            "--out",
            str(pred_dot),
        ]
    )
    assert rc == 0
    # same topology, only node colors may differ
    strip = lambda s: [l.split("fillcolor=")[0] for l in s.splitlines()]
    assert strip(pred_dot.read_text()) == strip(text)

    gml = tmp_path / "ego.graphml"
    rc = cli.main(
        [
            "export",
            "--data-dir",
            str(ws["data"]),
            "--tx-index",
            "0",
            "--format",
            "graphml",
            "--out",
            str(gml),
        ]
    )
    assert rc == 0
    root = ET.parse(gml).getroot()
    assert root.tag.endswith("graphml")


def test_export_unknown_tx_errors(ws, tmp_path, capsys):
    rc = cli.main(
        ["export", "--data-dir", str(ws["data"]), "--tx", "no-such-id", "--out-dir", str(tmp_path)]
    )
    assert rc == 1
    assert "error: " in capsys.readouterr().err


def test_config_file_with_flag_overrides(ws, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 5, "epochs": 3, "patience": 0}))
    out = tmp_path / "run"
    rc = cli.main(
        [
            "train",
            "--config",
            str(cfg),
            "--model",
            "gcn",
            "--bundle",
            str(ws["bundle"]),
            "--out-dir",
            str(out),
            "--epochs",
            "2",
        ]
    )
    assert rc == 0
    capsys.readouterr()
    history = (out / "history_gcn_tx.csv").read_text().splitlines()
    assert len(history) == 3  # header + 2 epochs: the flag beat the config file
    sidecar = json.loads((out / "gcn_tx.json").read_text())
    assert sidecar["seed"] == 5  # config key passed through


def test_config_unknown_key_rejected(ws, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"learning_rate": 0.1}))
    rc = cli.main(
        ["train", "--config", str(cfg), "--model", "knn", "--bundle", str(ws["bundle"])]
    )
    assert rc == 1
    assert "unknown config key" in capsys.readouterr().err


def test_missing_data_errors_cleanly(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(cli.DATA_DIR_ENV, raising=False)
    rc = cli.main(["train", "--model", "knn", "--data-dir", str(tmp_path / "nowhere")])
    assert rc == 1
    assert "error: " in capsys.readouterr().err


def test_data_dir_env_var_is_honored(ws, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.DATA_DIR_ENV, str(ws["data"]))
    rc = cli.main(["ingest", "--out", str(tmp_path / "b.npz")])
    assert rc == 0
    assert "clean: nodes=" in capsys.readouterr().out


def test_invalid_choice_exits_two(ws):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--model", "transformer", "--bundle", str(ws["bundle"])])
    assert exc.value.code == 2


def test_selftest_passes(capsys):
    assert cli.main(["selftest"]) == 0
    out = capsys.readouterr().out
    lines = out.splitlines()
    assert all(l.startswith("PASS ") for l in lines[:-1])
    total = len(lines) - 1
    assert lines[-1] == f"{total}/{total} checks passed"


def test_selftest_fault_injection_is_caught(capsys):
    assert cli.main(["selftest", "--inject-gradient-fault"]) == 1
    out = capsys.readouterr().out
    lines = out.splitlines()
    assert any(l.startswith("FAIL graph-conv gradient") for l in lines)
    # only the corrupted check fails
    assert sum(l.startswith("FAIL ") for l in lines) == 1
