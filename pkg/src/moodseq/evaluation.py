"""Sequence and patient level metrics, ROC curves, test-set balancing, major
voting and the group comparison statistics."""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


class UndefinedMetric(ValueError):
    pass


# -- confusion matrix and scalar metrics -----------------------------------------

@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (K, K); rows true, columns predicted

    @classmethod
    def from_predictions(cls, preds, labels, k: int) -> "ConfusionMatrix":
        preds, labels = _check_pair(preds, labels, k)
        counts = np.zeros((k, k), dtype=np.int64)
        np.add.at(counts, (labels, preds), 1)
        return cls(counts)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    def normalized(self) -> np.ndarray:
        """Row-normalized view; empty rows stay zero."""
        rows = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def to_csv(self, path, names: Sequence[str] | None = None, normalized: bool = False) -> None:
        names = list(names) if names is not None else [str(i) for i in range(self.k)]
        values = self.normalized() if normalized else self.counts
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true"] + names)
            for name, row in zip(names, values):
                w.writerow([name] + [repr(float(v)) if normalized else int(v) for v in row])


def _check_pair(preds, labels, k: int) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if len(preds) != len(labels):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(labels)} labels")
    if len(preds) == 0:
        raise ValueError("metrics need at least one sample")
    for what, arr in (("prediction", preds), ("label", labels)):
        if arr.min() < 0 or arr.max() >= k:
            raise ValueError(f"{what} outside 0..{k - 1}")
    return preds, labels


@dataclass
class EvaluationReport:
    k: int
    n: int
    accuracy: float
    precision: float  # macro
    recall: float  # macro
    f1: float  # macro
    weighted_f1: float
    per_class_precision: list[float]
    per_class_recall: list[float]
    per_class_f1: list[float]
    sensitivity: float  # recall of the positive (significant) class in the binary view
    specificity: float
    confusion: ConfusionMatrix = field(repr=False)

    def row(self) -> dict:
        return {"n": self.n, "accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1, "weighted_f1": self.weighted_f1,
                "sensitivity": self.sensitivity, "specificity": self.specificity}


def _safe_div(a: float, b: float) -> float:
    return a / b if b else 0.0


def report_from_confusion(cm: ConfusionMatrix, positive: Sequence[int] | None = None) -> EvaluationReport:
    """All metrics derived from the confusion matrix.

    ``positive`` lists the classes forming the significant side of the binary
    view; it defaults to class 1 for K=2 and to classes >= 2 otherwise.
    """
    c = cm.counts.astype(np.float64)
    k = cm.k
    n = c.sum()
    tp = np.diag(c)
    pred_tot = c.sum(axis=0)
    true_tot = c.sum(axis=1)
    prec = [_safe_div(tp[i], pred_tot[i]) for i in range(k)]
    rec = [_safe_div(tp[i], true_tot[i]) for i in range(k)]
    f1 = [_safe_div(2 * p * r, p + r) for p, r in zip(prec, rec)]
    if positive is None:
        positive = [1] if k == 2 else list(range(2, k))
    pos = np.zeros(k, dtype=bool)
    pos[list(positive)] = True
    btp = c[np.ix_(pos, pos)].sum()
    bfn = c[np.ix_(pos, ~pos)].sum()
    btn = c[np.ix_(~pos, ~pos)].sum()
    bfp = c[np.ix_(~pos, pos)].sum()
    return EvaluationReport(
        k=k, n=int(n), accuracy=float(tp.sum() / n),
        precision=float(np.mean(prec)), recall=float(np.mean(rec)), f1=float(np.mean(f1)),
        weighted_f1=float(np.dot(f1, true_tot) / n),
        per_class_precision=[float(v) for v in prec], per_class_recall=[float(v) for v in rec],
        per_class_f1=[float(v) for v in f1],
        sensitivity=float(_safe_div(btp, btp + bfn)), specificity=float(_safe_div(btn, btn + bfp)),
        confusion=cm)


def metrics(preds, labels, k: int = 5, positive: Sequence[int] | None = None) -> EvaluationReport:
    return report_from_confusion(ConfusionMatrix.from_predictions(preds, labels, k), positive)


def binary_view(classes, scores=None) -> np.ndarray:
    """Map severity indices to significant (1) / not (0).

    With PHQ-8 scores available the exact rule score > 10 applies; predicted
    classes only carry the bin, so moderate and above counts as significant.
    """
    if scores is not None:
        return (np.asarray(scores) > 10).astype(np.int64)
    return (np.asarray(classes) >= 2).astype(np.int64)


# -- ROC / AUC ----------------------------------------------------------------------

@dataclass
class RocCurve:
    label: str
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_curve(scores, indicator, label: str = "") -> RocCurve:
    """Full threshold sweep; tied scores move both rates in a single step."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(indicator).astype(bool).ravel()
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric(f"ROC for {label or 'class'} needs both positive and negative samples")
    order = np.argsort(-scores, kind="mergesort")
    s, yy = scores[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tps = np.cumsum(yy)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thr = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(label, fpr, tpr, thr, auc)


@dataclass
class RocReport:
    per_class: dict[int, RocCurve]
    micro: RocCurve

    @property
    def micro_auc(self) -> float:
        return self.micro.auc

    def to_csv(self, path, names: Sequence[str] | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["curve", "threshold", "fpr", "tpr"])
            curves = [(names[i] if names else str(i), c) for i, c in self.per_class.items()]
            curves.append(("micro", self.micro))
            for name, c in curves:
                for t, f, p in zip(c.thresholds, c.fpr, c.tpr):
                    w.writerow([name, repr(float(t)), repr(float(f)), repr(float(p))])


def roc_micro_auc(scores, labels) -> RocReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or len(scores) != len(labels):
        raise ValueError(f"scores must be (N, K) with N={len(labels)}, got {scores.shape}")
    if not np.allclose(scores.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("score rows must sum to 1")
    k = scores.shape[1]
    onehot = np.eye(k, dtype=bool)[labels]
    per_class = {}
    for j in range(k):
        try:
            per_class[j] = roc_curve(scores[:, j], onehot[:, j], label=str(j))
        except UndefinedMetric as exc:
            log.warning("excluding class %d from per-class ROC: %s", j, exc)
    micro = roc_curve(scores.ravel(), onehot.ravel(), label="micro")
    return RocReport(per_class, micro)


# -- balancing and voting -----------------------------------------------------------

def balance_by_oversampling(labels, seed: int = 0, k: int | None = None) -> np.ndarray:
    """Indices of a class-balanced sample: every original index once, plus
    seeded draws with replacement lifting each class to the majority count."""
    labels = np.asarray(labels, dtype=np.int64)
    k = k if k is not None else int(labels.max()) + 1
    counts = np.bincount(labels, minlength=k)
    absent = [c for c in range(k) if counts[c] == 0]
    if absent:
        raise ValueError(f"cannot balance: classes {absent} have no samples")
    rng = np.random.default_rng(seed)
    target = counts.max()
    out = [np.arange(len(labels))]
    for c in range(k):
        members = np.nonzero(labels == c)[0]
        if counts[c] < target:
            out.append(rng.choice(members, size=target - counts[c], replace=True))
    return np.concatenate(out)


@dataclass
class PatientPrediction:
    subject_id: str
    window_preds: list[int]
    voted: int
    tally: dict[int, int]


def majority_vote(window_preds, subject_id: str = "") -> PatientPrediction:
    """Mode of the window predictions; ties go to the more severe class."""
    preds = [int(p) for p in window_preds]
    if not preds:
        raise ValueError(f"no window predictions for subject {subject_id!r}")
    tally = Counter(preds)
    top = max(tally.values())
    voted = max(c for c, n in tally.items() if n == top)
    return PatientPrediction(subject_id, preds, voted, dict(sorted(tally.items())))


def patient_level(subject_ids, window_preds) -> list[PatientPrediction]:
    groups: dict[str, list[int]] = {}
    for sid, p in zip(subject_ids, window_preds):
        groups.setdefault(sid, []).append(int(p))
    return [majority_vote(groups[s], s) for s in sorted(groups)]


# -- t-test ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz continued fraction for the incomplete beta
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    if not math.isfinite(t):
        return 0.0
    return betainc_reg(df / 2.0, 0.5, df / (df + t * t))


@dataclass
class TTestResult:
    t: float
    p: float
    df: float


def welch_ttest(a, b, equal_var: bool = False) -> TTestResult:
    """Two-sided t-test; Welch by default, pooled Student's t with ``equal_var``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ValueError(f"each sample needs n >= 2 (got {na} and {nb})")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0.0 or vb == 0.0:
        raise ValueError("degenerate sample: zero variance")
    diff = a.mean() - b.mean()
    if equal_var:
        df = na + nb - 2.0
        sp = ((na - 1) * va + (nb - 1) * vb) / df
        se = math.sqrt(sp * (1.0 / na + 1.0 / nb))
    else:
        qa, qb = va / na, vb / nb
        se = math.sqrt(qa + qb)
        df = (qa + qb) ** 2 / (qa ** 2 / (na - 1) + qb ** 2 / (nb - 1))
    t = diff / se
    return TTestResult(float(t), float(t_two_sided_p(t, df)), float(df))


# -- group statistics ------------------------------------------------------------------

@dataclass
class GroupStats:
    group: str  # control (PHQ-8 <= 10) or experiment (> 10)
    n_subjects: int
    n_sentences: int
    duration_mean: float
    duration_std: float
    sentence_mean: float
    sentence_std: float


@dataclass
class SubjectSummary:
    subject_id: str
    phq8: int
    duration_seconds: float
    sentence_lengths: list[int]


@dataclass
class StatisticsReport:
    control: GroupStats
    experiment: GroupStats
    duration_test: TTestResult
    sentence_test: TTestResult
    histograms: dict[str, tuple[np.ndarray, dict[str, np.ndarray]]]

    def table(self) -> str:
        lines = [f"{'group':<11} {'n':>4} {'duration (s)':>22} {'sentences':>9} {'sentence length':>20}"]
        for g in (self.control, self.experiment):
            lines.append(f"{g.group:<11} {g.n_subjects:>4} "
                         f"{g.duration_mean:>12.4f}±{g.duration_std:<9.4f} {g.n_sentences:>9} "
                         f"{g.sentence_mean:>10.4f}±{g.sentence_std:<9.4f}")
        lines.append(f"duration        t={self.duration_test.t:.4f} df={self.duration_test.df:.2f} "
                     f"p={self.duration_test.p:.4e}")
        lines.append(f"sentence length t={self.sentence_test.t:.4f} df={self.sentence_test.df:.2f} "
                     f"p={self.sentence_test.p:.4e}")
        return "\n".join(lines)

    def histograms_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["quantity", "bin_left", "bin_right", "control", "experiment"])
            for quantity, (edges, counts) in self.histograms.items():
                for i in range(len(edges) - 1):
                    w.writerow([quantity, repr(float(edges[i])), repr(float(edges[i + 1])),
                                int(counts["control"][i]), int(counts["experiment"][i])])


def split_groups(subjects: Sequence[SubjectSummary]) -> tuple[list, list]:
    control = [s for s in subjects if s.phq8 <= 10]
    experiment = [s for s in subjects if s.phq8 > 10]
    return control, experiment


def group_statistics(subjects: Sequence[SubjectSummary], bins: int = 20,
                     equal_var: bool = False) -> StatisticsReport:
    """Duration is compared per subject, sentence length per sentence."""
    groups = dict(zip(("control", "experiment"), split_groups(subjects)))
    for name, members in groups.items():
        if len(members) < 2:
            raise ValueError(f"{name} group has {len(members)} subjects; need at least 2")
    stats, dur, sent = {}, {}, {}
    for name, members in groups.items():
        dur[name] = np.array([s.duration_seconds for s in members], dtype=np.float64)
        sent[name] = np.array([n for s in members for n in s.sentence_lengths], dtype=np.float64)
        if len(sent[name]) < 2:
            raise ValueError(f"{name} group has fewer than 2 sentences")
        stats[name] = GroupStats(name, len(members), len(sent[name]),
                                 float(dur[name].mean()), float(dur[name].std(ddof=1)),
                                 float(sent[name].mean()), float(sent[name].std(ddof=1)))
    hist = {}
    for quantity, data in (("duration_seconds", dur), ("sentence_length", sent)):
        edges = np.histogram_bin_edges(np.concatenate(list(data.values())), bins=bins)
        hist[quantity] = (edges, {g: np.histogram(v, bins=edges)[0] for g, v in data.items()})
    return StatisticsReport(
        stats["control"], stats["experiment"],
        welch_ttest(dur["control"], dur["experiment"], equal_var),
        welch_ttest(sent["control"], sent["experiment"], equal_var),
        hist)
