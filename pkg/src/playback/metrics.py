"""Ranking metrics: top-k accuracy, mAP, macro AUC and d-prime.

AP uses the precision-at-each-positive formulation; AUC is the Mann-Whitney
statistic with average ranks for ties, macro-averaged over classes that have
both positives and negatives. d-prime is sqrt(2) * probit(AUC) with the AUC
capped away from 0 and 1 before the probit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

AUC_CAP = 1e-12


@dataclass
class MetricsReport:
    top1: float
    top5: float
    mAP: float
    auc: float
    d_prime: float

    def as_dict(self) -> dict:
        return {"top1": self.top1, "top5": self.top5, "mAP": self.mAP,
                "auc": self.auc, "d_prime": self.d_prime}


def inverse_normal_cdf(p: float) -> float:
    """Probit function via Acklam's rational approximation plus one Halley
    refinement; absolute error well below 1e-9 on (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probit argument must lie in (0, 1), got {p}")
    a = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
    b = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00)
    p_low, p_high = 0.02425, 1.0 - 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
             ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0))
    elif p <= p_high:
        q = p - 0.5
        r = q * q
        x = ((((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
             (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
              ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0))
    # Halley step against the exact CDF
    err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = err * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


def d_prime_from_auc(auc: float) -> float:
    capped = min(max(auc, AUC_CAP), 1.0 - AUC_CAP)
    return math.sqrt(2.0) * inverse_normal_cdf(capped)


def top_k_accuracy(scores: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Percentage of samples whose (any) true class is among the k best scores.

    Ties break toward the lower class index; labels may be an int vector or a
    binary (samples, classes) matrix.
    """
    scores = np.asarray(scores, dtype=np.float64)
    k = min(k, scores.shape[1])
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    if labels.ndim == 1:
        hits = (order == labels[:, None]).any(axis=1)
    else:
        hits = np.array([labels[i, order[i]].any() for i in range(len(labels))])
    return 100.0 * float(hits.mean())


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    order = np.argsort(-scores, kind="stable")
    hits = positives[order].astype(np.float64)
    cum = np.cumsum(hits)
    ranks = np.arange(1, len(hits) + 1)
    precision_at_pos = cum[hits > 0] / ranks[hits > 0]
    return float(precision_at_pos.mean())


def binary_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Mann-Whitney AUC with average ranks on ties."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    rank_sum = float(ranks[positives > 0].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def compute_metrics(scores: np.ndarray, labels: np.ndarray) -> MetricsReport:
    """Evaluate class scores against labels (int vector or binary matrix)."""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.isfinite(scores).all():
        raise ValueError("scores contain non-finite values")
    labels = np.asarray(labels)
    n_classes = scores.shape[1]
    binary = labels if labels.ndim == 2 else _to_binary(labels, n_classes)

    aps, aucs = [], []
    skipped = []
    for c in range(n_classes):
        pos = binary[:, c]
        n_pos = int(pos.sum())
        if n_pos == 0 or n_pos == len(pos):
            skipped.append(c)
            continue
        aps.append(average_precision(scores[:, c], pos))
        aucs.append(binary_auc(scores[:, c], pos))
    if skipped:
        logger.warning("classes without both positives and negatives excluded "
                       "from mAP/AUC: %s", skipped)
    mean_ap = float(np.mean(aps)) if aps else 0.0
    mean_auc = float(np.mean(aucs)) if aucs else 0.5
    return MetricsReport(
        top1=top_k_accuracy(scores, labels, 1),
        top5=top_k_accuracy(scores, labels, 5),
        mAP=mean_ap,
        auc=mean_auc,
        d_prime=d_prime_from_auc(mean_auc))


def _to_binary(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels.astype(int)] = 1.0
    return out
