"""Performance metrics, per-class one-vs-rest fairness gaps and the FATE trade-off score.

Fairness gaps for a binary sensitive attribute, summed over classes ``c``:

    EOpp1 = sum_c |TPR_c,0 - TPR_c,1|
    EOpp0 = sum_c |TNR_c,0 - TNR_c,1|
    EOdd  = sum_c |TPR_c,0 - TPR_c,1| + |FPR_c,0 - FPR_c,1|
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CRITERIA = ("EOpp0", "EOpp1", "EOdd")


class MetricsError(ValueError):
    pass


@dataclass
class PredictionDump:
    y: np.ndarray
    yhat: np.ndarray
    q: np.ndarray
    a: np.ndarray
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=int)
        self.yhat = np.asarray(self.yhat, dtype=int)
        self.q = np.asarray(self.q, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=int)
        n = self.y.shape[0]
        if self.ids is None:
            self.ids = np.arange(n)
        self.ids = np.asarray(self.ids, dtype=int)
        if self.q.ndim != 2 or not (self.yhat.shape == self.a.shape == self.ids.shape == (n,)) \
                or self.q.shape[0] != n:
            raise MetricsError("prediction dump columns have inconsistent lengths")
        u = self.q.shape[1]
        if n and (self.y.min() < 0 or self.y.max() >= u or self.yhat.min() < 0 or self.yhat.max() >= u):
            raise MetricsError(f"labels must lie in [0, {u})")

    @classmethod
    def from_probs(cls, q, y, a, ids=None) -> "PredictionDump":
        q = np.asarray(q, dtype=np.float64)
        return cls(y, q.argmax(axis=1), q, a, ids)

    @property
    def num_classes(self) -> int:
        return self.q.shape[1]

    def __len__(self) -> int:
        return self.y.shape[0]

    def write_csv(self, path: str | Path) -> None:
        u = self.num_classes
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "y", "yhat", "a", *(f"q_{j}" for j in range(u))])
            for i in range(len(self)):
                w.writerow([int(self.ids[i]), int(self.y[i]), int(self.yhat[i]), int(self.a[i]),
                            *(repr(float(v)) for v in self.q[i])])

    @classmethod
    def read_csv(cls, path: str | Path) -> "PredictionDump":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][:4] != ["id", "y", "yhat", "a"]:
            raise MetricsError(f"{path}: bad prediction dump header")
        u = len(rows[0]) - 4
        body = rows[1:]
        for lineno, r in enumerate(body, start=2):
            if len(r) != u + 4:
                raise MetricsError(f"{path}: line {lineno}: expected {u + 4} fields")
        ids = [int(r[0]) for r in body]
        y = [int(r[1]) for r in body]
        yhat = [int(r[2]) for r in body]
        a = [int(r[3]) for r in body]
        q = np.array([[float(v) for v in r[4:]] for r in body]).reshape(len(body), u)
        return cls(y, yhat, q, a, ids)


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    EOpp0: float
    EOpp1: float
    EOdd: float
    skipped_classes: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)

    def scaled(self) -> dict[str, float]:
        """Values x100, the convention used by published result tables."""
        return {k: 100.0 * v for k, v in asdict(self).items() if k != "skipped_classes"}

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def from_json(cls, path: str | Path) -> "MetricsReport":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def performance(dump: PredictionDump) -> dict[str, float]:
    if len(dump) == 0:
        raise MetricsError("empty prediction dump")
    y, yhat = dump.y, dump.yhat
    precisions, recalls, f1s = [], [], []
    for c in range(dump.num_classes):
        tp = np.sum((yhat == c) & (y == c))
        pred_c = np.sum(yhat == c)
        true_c = np.sum(y == c)
        if true_c == 0:
            # absent class: excluded from the macro mean
            continue
        p = tp / pred_c if pred_c else 0.0
        r = tp / true_c
        precisions.append(p)
        recalls.append(r)
        f1s.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
    return {
        "accuracy": float(np.mean(y == yhat)),
        "precision": float(np.mean(precisions)),
        "recall": float(np.mean(recalls)),
        "f1": float(np.mean(f1s)),
    }


def group_rates(dump: PredictionDump, c: int, g: int) -> tuple[float, float] | None:
    """(TPR, TNR) for class ``c`` one-vs-rest within group ``g``; None if undefined."""
    in_g = dump.a == g
    pos = in_g & (dump.y == c)
    neg = in_g & (dump.y != c)
    if not pos.any() or not neg.any():
        return None
    tpr = np.mean(dump.yhat[pos] == c)
    tnr = np.mean(dump.yhat[neg] != c)
    return float(tpr), float(tnr)


def fairness(dump: PredictionDump) -> dict:
    groups = set(np.unique(dump.a).tolist())
    if not {0, 1} <= groups:
        raise MetricsError(f"fairness needs both attribute groups, found {sorted(groups)}")
    eopp0 = eopp1 = eodd = 0.0
    skipped = []
    for c in range(dump.num_classes):
        r0, r1 = group_rates(dump, c, 0), group_rates(dump, c, 1)
        if r0 is None or r1 is None:
            skipped.append(c)
            log.warning("class %d lacks positives or negatives in a group; skipped in fairness gaps", c)
            continue
        tpr_gap = abs(r0[0] - r1[0])
        tnr_gap = abs(r0[1] - r1[1])
        eopp1 += tpr_gap
        eopp0 += tnr_gap
        # FPR = 1 - TNR, so the FPR gap equals the TNR gap
        eodd += tpr_gap + tnr_gap
    return {"EOpp0": eopp0, "EOpp1": eopp1, "EOdd": eodd, "skipped_classes": skipped}


def evaluate(dump: PredictionDump) -> MetricsReport:
    return MetricsReport(**performance(dump), **fairness(dump))


# FATE --------------------------------------------------------------------


def fate(acc_e: float, fc_e: float, acc_b: float, fc_b: float, lam: float = 1.0) -> float:
    if not acc_b > 0:
        raise MetricsError(f"baseline accuracy must be > 0, got {acc_b}")
    if not fc_b > 0:
        raise MetricsError(f"baseline fairness criterion must be > 0 (got {fc_b}); relative change undefined")
    return (acc_e - acc_b) / acc_b - lam * (fc_e - fc_b) / fc_b


@dataclass
class FateEntry:
    criterion: str
    fate: float
    acc_e: float
    acc_b: float
    fc_e: float
    fc_b: float
    lam: float

    def recompute(self) -> float:
        return fate(self.acc_e, self.fc_e, self.acc_b, self.fc_b, self.lam)


@dataclass
class FateReport:
    entries: dict[str, FateEntry]
    lam: float = 1.0

    def as_dict(self) -> dict:
        return {"lambda": self.lam, "criteria": {k: asdict(v) for k, v in self.entries.items()}}

    def scaled(self) -> dict[str, float]:
        return {k: 100.0 * v.fate for k, v in self.entries.items()}

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True), encoding="utf-8")


def fate_report(enhanced: MetricsReport, baseline: MetricsReport, lam: float = 1.0) -> FateReport:
    entries = {}
    for fc in CRITERIA:
        fc_e, fc_b = getattr(enhanced, fc), getattr(baseline, fc)
        value = fate(enhanced.accuracy, fc_e, baseline.accuracy, fc_b, lam)
        entries[fc] = FateEntry(fc, value, enhanced.accuracy, baseline.accuracy, fc_e, fc_b, lam)
    return FateReport(entries, lam)
