"""Confusion-matrix accumulation and derived classification metrics.

Conventions: matrix[i][j] counts samples whose true class is i and predicted
class is j.  For binary problems the positive class sits at index 1, so the
matrix reads [[TN, FP], [FN, TP]].  Metrics are kept as fractions in [0, 1];
renderers format them as percentages with two decimals.

A zero denominator (no predicted positives, no actual positives, ...) yields
0.0 for the affected metric and an entry in the report's `undefined` list
rather than a NaN or an exception.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


class ConfusionMatrix:
    def __init__(self, class_names):
        self.class_names = list(class_names)
        if len(self.class_names) < 2:
            raise ValidationError(
                f"confusion matrix needs >= 2 classes, got {self.class_names}")
        c = len(self.class_names)
        self.matrix = np.zeros((c, c), dtype=np.int64)

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def total(self):
        return int(self.matrix.sum())

    def update(self, true, pred):
        c = self.num_classes
        if not 0 <= true < c or not 0 <= pred < c:
            raise ValidationError(
                f"labels must lie in [0, {c}), got true={true} pred={pred}")
        self.matrix[true, pred] += 1

    def update_batch(self, trues, preds):
        trues = np.asarray(trues)
        preds = np.asarray(preds)
        if trues.shape != preds.shape:
            raise ValidationError(
                f"trues shape {trues.shape} != preds shape {preds.shape}")
        for t, p in zip(trues.ravel(), preds.ravel()):
            self.update(int(t), int(p))

    def merge(self, other):
        if other.class_names != self.class_names:
            raise ValidationError("cannot merge confusion matrices over "
                                  f"{other.class_names} into {self.class_names}")
        self.matrix += other.matrix
        return self

    @classmethod
    def from_pairs(cls, trues, preds, class_names):
        cm = cls(class_names)
        cm.update_batch(trues, preds)
        return cm

    @classmethod
    def from_binary_counts(cls, tp, tn, fp, fn,
                           class_names=("negative", "positive")):
        cm = cls(class_names)
        if cm.num_classes != 2:
            raise ValidationError("binary counts need exactly 2 class names")
        cm.matrix[0, 0] = tn
        cm.matrix[0, 1] = fp
        cm.matrix[1, 0] = fn
        cm.matrix[1, 1] = tp
        return cm

    def to_csv(self):
        """C+1 column table: header row then one row per true class."""
        lines = ["true\\pred," + ",".join(self.class_names)]
        for i, name in enumerate(self.class_names):
            lines.append(name + "," + ",".join(str(int(v)) for v in self.matrix[i]))
        return "\n".join(lines) + "\n"


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    averaging: str                      # "binary" or "macro"
    n_samples: int
    undefined: list = field(default_factory=list)
    per_class: dict = None
    positive_class: str = None

    def to_dict(self):
        d = {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "averaging": self.averaging,
            "n_samples": self.n_samples,
            "undefined": list(self.undefined),
        }
        if self.positive_class is not None:
            d["positive_class"] = self.positive_class
        if self.per_class is not None:
            d["per_class"] = {k: dict(v) for k, v in self.per_class.items()}
        return d


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def binary_metrics(cm, positive=1):
    """Precision/recall/F1/accuracy treating class `positive` as positive."""
    if cm.num_classes != 2:
        raise ValidationError(
            f"binary metrics need a 2x2 matrix, got {cm.num_classes} classes")
    if positive not in (0, 1):
        raise ValidationError(f"positive index must be 0 or 1, got {positive}")
    neg = 1 - positive
    m = cm.matrix
    tp = int(m[positive, positive])
    tn = int(m[neg, neg])
    fp = int(m[neg, positive])
    fn = int(m[positive, neg])
    undefined = []
    precision = _ratio(tp, tp + fp, "precision", undefined)
    recall = _ratio(tp, tp + fn, "recall", undefined)
    f1 = _ratio(2 * precision * recall, precision + recall, "f1", undefined)
    accuracy = _ratio(tp + tn, tp + tn + fp + fn, "accuracy", undefined)
    return MetricsReport(accuracy=accuracy, precision=precision, recall=recall,
                         f1=f1, averaging="binary", n_samples=cm.total,
                         undefined=undefined,
                         positive_class=cm.class_names[positive])


def multiclass_metrics(cm):
    """Macro-averaged one-vs-rest precision/recall/F1 plus overall accuracy."""
    m = cm.matrix
    undefined = []
    total = cm.total
    accuracy = _ratio(int(np.trace(m)), total, "accuracy", undefined)
    per_class = {}
    precisions, recalls, f1s = [], [], []
    for i, name in enumerate(cm.class_names):
        tp = int(m[i, i])
        fp = int(m[:, i].sum()) - tp
        fn = int(m[i, :].sum()) - tp
        p = _ratio(tp, tp + fp, f"precision[{name}]", undefined)
        r = _ratio(tp, tp + fn, f"recall[{name}]", undefined)
        f = _ratio(2 * p * r, p + r, f"f1[{name}]", undefined)
        per_class[name] = {"precision": p, "recall": r, "f1": f,
                           "support": tp + fn}
        precisions.append(p)
        recalls.append(r)
        f1s.append(f)
    return MetricsReport(accuracy=accuracy,
                         precision=float(np.mean(precisions)),
                         recall=float(np.mean(recalls)),
                         f1=float(np.mean(f1s)),
                         averaging="macro", n_samples=total,
                         undefined=undefined, per_class=per_class)


def metrics_for(cm):
    """Dispatch on matrix size: 2 classes -> binary, otherwise macro."""
    return binary_metrics(cm) if cm.num_classes == 2 else multiclass_metrics(cm)


def report_from_dict(d):
    """Rebuild (MetricsReport, ConfusionMatrix or None) from to_dict output."""
    try:
        rep = MetricsReport(
            accuracy=d["accuracy"], precision=d["precision"],
            recall=d["recall"], f1=d["f1"], averaging=d["averaging"],
            n_samples=d["n_samples"], undefined=list(d.get("undefined", [])),
            per_class=d.get("per_class"),
            positive_class=d.get("positive_class"))
    except KeyError as e:
        raise ValidationError(f"report dictionary missing field {e}") from e
    cm = None
    if "confusion" in d:
        cm = ConfusionMatrix(d["confusion"]["classes"])
        m = np.asarray(d["confusion"]["matrix"], dtype=np.int64)
        if m.shape != cm.matrix.shape:
            raise ValidationError(
                f"confusion matrix shape {m.shape} does not match "
                f"{cm.num_classes} classes")
        cm.matrix[:] = m
    return rep, cm


def _pct(x):
    return f"{100.0 * x:.2f}"


def render_report(report, cm=None, fmt="json"):
    """Serialize a MetricsReport (optionally with its confusion matrix)."""
    if fmt == "json":
        d = report.to_dict()
        if cm is not None:
            d["confusion"] = {"classes": cm.class_names,
                              "matrix": cm.matrix.tolist()}
        return json.dumps(d, indent=2) + "\n"
    if fmt == "markdown":
        lines = ["| metric | value |", "| --- | --- |"]
        for key in ("accuracy", "precision", "recall", "f1"):
            lines.append(f"| {key} ({report.averaging}) "
                         f"| {_pct(getattr(report, key))}% |")
        lines.append(f"| samples | {report.n_samples} |")
        if report.undefined:
            lines.append(f"| undefined | {', '.join(report.undefined)} |")
        if cm is not None:
            lines.append("")
            lines.append("| true\\pred | " + " | ".join(cm.class_names) + " |")
            lines.append("|" + " --- |" * (cm.num_classes + 1))
            for i, name in enumerate(cm.class_names):
                row = " | ".join(str(int(v)) for v in cm.matrix[i])
                lines.append(f"| {name} | {row} |")
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        lines = ["metric,value"]
        for key in ("accuracy", "precision", "recall", "f1"):
            lines.append(f"{key},{_pct(getattr(report, key))}")
        lines.append(f"n_samples,{report.n_samples}")
        out = "\n".join(lines) + "\n"
        if cm is not None:
            out += cm.to_csv()
        return out
    raise ValidationError(f"unknown report format {fmt!r}")
