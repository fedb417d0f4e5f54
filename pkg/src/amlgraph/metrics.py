"""Evaluation metrics and report formatting.

Per-class precision/recall/F1 plus micro-averaged F1, a row-per-run CSV
writer, and a markdown table generator that mirrors the usual benchmark
layout (one row per model, columns Precision / Recall / F1 / micro-avg F1
for a chosen class, column maxima in bold).

Convention: labels are integers, illicit = 1, licit = 0.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

ILLICIT = 1
LICIT = 0

RESULTS_CSV_COLUMNS = [
    "model",
    "features",
    "precision_illicit",
    "recall_illicit",
    "f1_illicit",
    "precision_licit",
    "recall_licit",
    "f1_licit",
    "micro_f1",
    "seed",
]


@dataclass(frozen=True)
class ConfusionMatrix:
    """Binary confusion counts for one positive class."""

    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _check_pair(predictions, truth):
    p = np.asarray(predictions)
    t = np.asarray(truth)
    if p.shape != t.shape or p.ndim != 1:
        raise ShapeError(f"predictions {p.shape} and truth {t.shape} must be equal-length vectors")
    return p, t


def confusion_matrix(predictions, truth, positive_label: int = ILLICIT) -> ConfusionMatrix:
    p, t = _check_pair(predictions, truth)
    pos_pred = p == positive_label
    pos_true = t == positive_label
    return ConfusionMatrix(
        tp=int(np.sum(pos_pred & pos_true)),
        fp=int(np.sum(pos_pred & ~pos_true)),
        fn=int(np.sum(~pos_pred & pos_true)),
        tn=int(np.sum(~pos_pred & ~pos_true)),
    )


def precision(cm: ConfusionMatrix) -> float:
    """TP / (TP + FP); 0 when nothing was predicted positive."""
    denom = cm.tp + cm.fp
    return cm.tp / denom if denom else 0.0


def recall(cm: ConfusionMatrix) -> float:
    """TP / (TP + FN); 0 when no positives exist."""
    denom = cm.tp + cm.fn
    return cm.tp / denom if denom else 0.0


def f1(p: float, r: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if not (0.0 <= p <= 1.0 and 0.0 <= r <= 1.0):
        raise ValueError(f"precision/recall must lie in [0, 1], got {p}, {r}")
    if p == r:
        # the harmonic mean of equal values is that value; skipping the
        # ratio avoids rounding, keeping micro-F1 == accuracy exact
        return p
    s = p + r
    return 2.0 * p * r / s if s else 0.0


def micro_f1(predictions, truth) -> float:
    """Micro-averaged F1 over all classes present in the truth/predictions.

    Pools per-class TP/FP/FN before forming the ratio.  With single-label
    predictions every miss is both a false positive (for the predicted
    class) and a false negative (for the true one), so this equals plain
    accuracy; it is still computed from pooled counts rather than shortcut
    to accuracy.
    """
    p, t = _check_pair(predictions, truth)
    if p.size == 0:
        return 0.0
    classes = np.union1d(np.unique(p), np.unique(t))
    tp = fp = fn = 0
    for c in classes:
        cm = confusion_matrix(p, t, positive_label=int(c))
        tp += cm.tp
        fp += cm.fp
        fn += cm.fn
    denom_p = tp + fp
    denom_r = tp + fn
    micro_p = tp / denom_p if denom_p else 0.0
    micro_r = tp / denom_r if denom_r else 0.0
    return f1(micro_p, micro_r)


@dataclass
class EvalReport:
    """All metrics for one (model, feature set, seed) evaluation."""

    model: str
    features: str
    precision_illicit: float
    recall_illicit: float
    f1_illicit: float
    precision_licit: float
    recall_licit: float
    f1_licit: float
    micro_f1: float
    seed: int
    n_samples: int = 0
    # Names of metrics whose denominator was empty (value reported as 0).
    undefined: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)

    def as_csv_row(self) -> list[str]:
        vals = [
            self.model,
            self.features,
            repr(self.precision_illicit),
            repr(self.recall_illicit),
            repr(self.f1_illicit),
            repr(self.precision_licit),
            repr(self.recall_licit),
            repr(self.f1_licit),
            repr(self.micro_f1),
            str(self.seed),
        ]
        return vals


def full_report(predictions, truth, model: str = "", features: str = "", seed: int = 0) -> EvalReport:
    """Evaluate a prediction vector against truth on both classes."""
    p, t = _check_pair(predictions, truth)
    undefined = []
    values = {}
    for cls_name, cls in (("illicit", ILLICIT), ("licit", LICIT)):
        cm = confusion_matrix(p, t, positive_label=cls)
        if cm.tp + cm.fp == 0:
            undefined.append(f"precision_{cls_name}")
        if cm.tp + cm.fn == 0:
            undefined.append(f"recall_{cls_name}")
        values[f"precision_{cls_name}"] = precision(cm)
        values[f"recall_{cls_name}"] = recall(cm)
        values[f"f1_{cls_name}"] = f1(precision(cm), recall(cm))
    return EvalReport(
        model=model,
        features=features,
        precision_illicit=values["precision_illicit"],
        recall_illicit=values["recall_illicit"],
        f1_illicit=values["f1_illicit"],
        precision_licit=values["precision_licit"],
        recall_licit=values["recall_licit"],
        f1_licit=values["f1_licit"],
        micro_f1=micro_f1(p, t),
        seed=seed,
        n_samples=int(p.size),
        undefined=tuple(undefined),
    )


def results_csv(reports) -> str:
    """Render reports as CSV text (full float precision, stable order)."""
    buf = io.StringIO()
    buf.write(",".join(RESULTS_CSV_COLUMNS) + "\n")
    for r in reports:
        buf.write(",".join(r.as_csv_row()) + "\n")
    return buf.getvalue()


def write_results_csv(path, reports) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(results_csv(reports))


def markdown_table(reports, positive: str = "illicit") -> str:
    """Markdown benchmark table for one class, bolding each column's maximum.

    Rows keep the order given.  Values are rounded to 3 decimals; bolding
    compares the rounded values so display ties are all bold.
    """
    if positive not in ("illicit", "licit"):
        raise ValueError(f"positive must be 'illicit' or 'licit', got {positive!r}")
    cols = [f"precision_{positive}", f"recall_{positive}", f"f1_{positive}", "micro_f1"]
    headers = ["Model", "Features", "Precision", "Recall", "F1", "Micro-avg F1"]
    rows = []
    for r in reports:
        rows.append([getattr(r, c) for c in cols])
    rounded = [[round(v, 3) for v in row] for row in rows]
    maxima = [max(col) for col in zip(*rounded)] if rounded else []

    lines = ["| " + " | ".join(headers) + " |", "|" + "---|" * len(headers)]
    for r, row in zip(reports, rounded):
        cells = [r.model, r.features]
        for j, v in enumerate(row):
            text = f"{v:.3f}"
            cells.append(f"**{text}**" if v == maxima[j] else text)
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
