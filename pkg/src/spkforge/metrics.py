"""Verification metrics: EER, normalized minimum detection cost, and the
spoofing-aware EER variant.

Conventions, fixed across all three: a trial is rejected at threshold t
when its score is below t, so FRR(t) = P(positive < t) and
FAR(t) = P(negative >= t).  Candidate thresholds are the midpoints between
adjacent distinct scores plus one point below and above everything; both
error curves are piecewise linear between those operating points and the
EER is read off at their crossing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricError


@dataclass
class DcfParams:
    p_target: float = 0.05
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p_target < 1.0:
            raise MetricError(f"p_target must lie in (0, 1), got {self.p_target}")
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise MetricError("detection costs must be positive")


def _split(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size != labels.size:
        raise MetricError(f"{scores.size} scores vs {labels.size} labels")
    if not np.isfinite(scores).all():
        raise MetricError("scores contain non-finite values")
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise MetricError("need at least one positive and one negative trial")
    return pos, neg


def _thresholds(pos, neg):
    """Midpoints between adjacent distinct scores, plus below-all/above-all."""
    uniq = np.unique(np.concatenate([pos, neg]))
    mids = (uniq[:-1] + uniq[1:]) / 2.0 if uniq.size > 1 else np.empty(0)
    return np.concatenate([[uniq[0] - 1.0], mids, [uniq[-1] + 1.0]])


def _rates(pos, neg, thresholds):
    """(FRR, FAR) at each threshold; FRR non-decreasing, FAR non-increasing."""
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    frr = np.searchsorted(pos_sorted, thresholds, side="left") / pos.size
    far = 1.0 - np.searchsorted(neg_sorted, thresholds, side="left") / neg.size
    return frr, far


def eer(scores, labels):
    """Equal error rate via the piecewise-linear FRR/FAR crossing."""
    pos, neg = _split(scores, labels)
    thresholds = _thresholds(pos, neg)
    frr, far = _rates(pos, neg, thresholds)
    diff = frr - far
    idx = int(np.flatnonzero(diff >= 0)[0])  # first operating point at or past the crossing
    if diff[idx] == 0.0 or idx == 0:
        return float(frr[idx])
    f0, f1 = frr[idx - 1], frr[idx]
    a0, a1 = far[idx - 1], far[idx]
    t = (a0 - f0) / ((f1 - f0) - (a1 - a0))
    return float(f0 + t * (f1 - f0))


def min_dcf(scores, labels, params=None):
    """Minimum detection cost over all thresholds, normalized by the best
    trivial system min(c_miss * p_target, c_fa * (1 - p_target))."""
    params = params or DcfParams()
    pos, neg = _split(scores, labels)
    thresholds = _thresholds(pos, neg)
    p_miss, p_fa = _rates(pos, neg, thresholds)
    cost = params.c_miss * params.p_target * p_miss + params.c_fa * (1.0 - params.p_target) * p_fa
    floor = min(params.c_miss * params.p_target, params.c_fa * (1.0 - params.p_target))
    return float(cost.min() / floor)


def sasv_eer(scores, labels):
    """EER with spoof trials pooled into the negatives.

    ``labels`` uses the trial label names: target / nontarget / spoof.
    """
    labels = np.asarray(labels)
    if not (labels == "target").any():
        raise MetricError("no target trials")
    if not ((labels == "nontarget") | (labels == "spoof")).any():
        raise MetricError("no nontarget or spoof trials")
    known = np.isin(labels, ("target", "nontarget", "spoof"))
    if not known.all():
        raise MetricError(f"unknown trial label {labels[~known][0]!r}")
    binary = (labels == "target").astype(int)
    return eer(scores, binary)


def operating_points(scores, labels):
    """(threshold, FAR, FRR) rows over the full sweep, for report tables."""
    pos, neg = _split(scores, labels)
    thresholds = _thresholds(pos, neg)
    frr, far = _rates(pos, neg, thresholds)
    return np.column_stack([thresholds, far, frr])


def metric_report(values):
    """Text block with one aligned line per metric plus machine-readable
    key=value lines (the part downstream tooling parses)."""
    lines = ["verification metrics", "--------------------"]
    for key in sorted(values):
        lines.append(f"{key:>12}: {values[key]:.6f}")
    lines.append("")
    for key in sorted(values):
        lines.append(f"{key}={values[key]:.6f}")
    return "\n".join(lines) + "\n"
