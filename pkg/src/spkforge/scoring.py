"""Trial scoring, adaptive score normalization, and logistic calibration.

Scores are cosine similarities between speaker embeddings.  AS-norm
z-normalizes each trial against the top-N most similar cohort scores of its
enroll and test sides; the quality-measure calibration is a small logistic
regression over per-trial quality features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCohortError, ScoringError


def cosine_score(e1, e2):
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    n1 = np.linalg.norm(e1)
    n2 = np.linalg.norm(e2)
    if n1 < 1e-30 or n2 < 1e-30:
        raise ScoringError("cannot score a zero embedding")
    return float(e1 @ e2 / (n1 * n2))


def score_trials(embeddings, trials):
    """Raw cosine score per trial, order preserved.

    ``embeddings`` maps utt_id -> vector; a missing utterance is an error
    naming the utt_id.
    """
    scores = np.empty(len(trials))
    for i, t in enumerate(trials):
        for utt in (t.enroll, t.test):
            if utt not in embeddings:
                raise ScoringError(f"no embedding for utterance {utt!r}")
        scores[i] = cosine_score(embeddings[t.enroll], embeddings[t.test])
    return scores


@dataclass
class AsNormConfig:
    topn: int = 50

    def __post_init__(self):
        if self.topn < 2:
            raise ScoringError(f"AS-norm topN must be >= 2, got {self.topn}")


def _unit_rows(matrix):
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if (norms < 1e-30).any():
        raise ScoringError("cohort contains a zero embedding")
    return matrix / norms


def as_norm(raw_scores, trials, embeddings, cohort, cfg):
    """Adaptive score normalization.

    For each trial with raw score s: take the top-N highest cohort cosine
    scores of the enroll side (S_e) and of the test side (S_t), and output
      0.5 * [ (s - mean(S_e)) / std(S_e) + (s - mean(S_t)) / std(S_t) ]
    with the sample (n-1) standard deviation.  A top-N set with std below
    1e-12 cannot normalize anything and is an error.
    """
    cohort = np.asarray(cohort, dtype=np.float64)
    if cohort.ndim != 2 or cohort.shape[0] < cfg.topn:
        raise ScoringError(f"cohort of {cohort.shape[0] if cohort.ndim == 2 else 0} embeddings < topN={cfg.topn}")
    cohort_unit = _unit_rows(cohort)
    cache = {}

    def side_stats(utt):
        if utt not in cache:
            e = np.asarray(embeddings[utt], dtype=np.float64)
            n = np.linalg.norm(e)
            if n < 1e-30:
                raise ScoringError(f"zero embedding for utterance {utt!r}")
            cos = cohort_unit @ (e / n)
            top = np.sort(cos)[-cfg.topn :]
            sd = top.std(ddof=1)
            if sd < 1e-12:
                raise DegenerateCohortError(f"top-{cfg.topn} cohort scores of {utt!r} have zero variance")
            cache[utt] = (top.mean(), sd)
        return cache[utt]

    out = np.empty(len(raw_scores))
    for i, (s, t) in enumerate(zip(raw_scores, trials)):
        mu_e, sd_e = side_stats(t.enroll)
        mu_t, sd_t = side_stats(t.test)
        out[i] = 0.5 * ((s - mu_e) / sd_e + (s - mu_t) / sd_t)
    return out


def normalize_scores(raw_scores, enroll_top, test_top):
    """AS-norm core on precomputed top-N score sets (used by the hand-value
    tests and anywhere the cohort selection already happened)."""
    out = np.empty(len(raw_scores))
    for i, s in enumerate(raw_scores):
        stats = []
        for top in (enroll_top[i], test_top[i]):
            top = np.asarray(top, dtype=np.float64)
            sd = top.std(ddof=1)
            if sd < 1e-12:
                raise DegenerateCohortError("top-N cohort scores have zero variance")
            stats.append((s - top.mean()) / sd)
        out[i] = 0.5 * (stats[0] + stats[1])
    return out


@dataclass
class QmfModel:
    """Calibrated score = weights . features + bias (log odds)."""

    weights: np.ndarray
    bias: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not np.isfinite(self.weights).all() or not np.isfinite(self.bias):
            raise ScoringError("QMF model has non-finite weights")


QMF_FEATURE_NAMES = (
    "raw_score",
    "log_enroll_duration",
    "log_test_duration",
    "enroll_embedding_norm",
    "test_embedding_norm",
    "enroll_cohort_mean",
    "test_cohort_mean",
)


def qmf_features(trials, raw_scores, embeddings, durations, cohort, topn=50):
    """Assemble the per-trial quality feature matrix (len(trials), 7)."""
    cohort = np.asarray(cohort, dtype=np.float64)
    cohort_unit = _unit_rows(cohort)
    cache = {}

    def side(utt):
        if utt not in cache:
            e = np.asarray(embeddings[utt], dtype=np.float64)
            norm = np.linalg.norm(e)
            cos = cohort_unit @ (e / max(norm, 1e-30))
            top = np.sort(cos)[-min(topn, len(cos)) :]
            cache[utt] = (norm, top.mean())
        return cache[utt]

    rows = np.empty((len(trials), len(QMF_FEATURE_NAMES)))
    for i, (t, s) in enumerate(zip(trials, raw_scores)):
        en_norm, en_cm = side(t.enroll)
        te_norm, te_cm = side(t.test)
        rows[i] = (
            s,
            np.log(max(durations[t.enroll], 1e-6)),
            np.log(max(durations[t.test], 1e-6)),
            en_norm,
            te_norm,
            en_cm,
            te_cm,
        )
    return rows


def fit_qmf(features, labels, l2=1e-2, steps=500, lr=0.5, seed=0):
    """Logistic regression by full-batch gradient descent.

    ``labels`` is 1 for target and 0 for nontarget trials; both classes must
    be present.  Features are standardized internally and the learned
    weights folded back to raw-feature space, so a zero-variance feature
    ends with weight exactly 0.  Deterministic (zero init, fixed step
    count); the seed parameter is accepted for interface stability.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ScoringError("empty development set; cannot fit calibration")
    if x.shape[0] != y.size:
        raise ScoringError(f"{x.shape[0]} feature rows vs {y.size} labels")
    if not (0 < y.sum() < y.size):
        raise ScoringError("development set must contain both target and nontarget trials")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    live = sd > 1e-12
    xs = np.where(live, (x - mu) / np.where(live, sd, 1.0), 0.0)
    w = np.zeros(x.shape[1])
    b = 0.0
    n = x.shape[0]
    for _ in range(steps):
        z = xs @ w + b
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
        grad_w = xs.T @ (p - y) / n + l2 * w
        grad_b = float((p - y).mean())
        w -= lr * grad_w
        b -= lr * grad_b
    w_raw = np.where(live, w / np.where(live, sd, 1.0), 0.0)
    b_raw = b - float((w_raw * mu).sum())
    return QmfModel(w_raw, b_raw)


def qmf_apply(model, features):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.weights.size:
        raise ScoringError(f"feature matrix shape {x.shape} does not match {model.weights.size} weights")
    return x @ model.weights + model.bias
