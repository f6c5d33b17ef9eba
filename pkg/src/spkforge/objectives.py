"""Classification objectives: cross-entropy over cosine logits with additive
angular margin, sub-center class directions, and an inter top-k penalty on
the hardest negative classes.

All functions are batched: embeddings (B, D), labels (B,), class weights
(C, K, D).  The full chain is
    cross_entropy(inter_topk_adjust(aam_logits(subcenter_cosines(e, W))))
and every step is differentiable for the training loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import TrainingError


@dataclass
class LossConfig:
    num_classes: int
    embed_dim: int
    scale: float = 30.0
    margin: float = 0.2
    subcenters: int = 3
    topk: int = 5
    inter_margin: float = 0.1

    def __post_init__(self):
        if self.num_classes < 2:
            raise TrainingError(f"need at least 2 classes, got {self.num_classes}")
        if self.scale <= 0:
            raise TrainingError(f"scale must be positive, got {self.scale}")
        if not 0.0 <= self.margin < math.pi / 2:
            raise TrainingError(f"margin must lie in [0, pi/2), got {self.margin}")
        if self.subcenters < 1:
            raise TrainingError(f"subcenters must be >= 1, got {self.subcenters}")
        if not 0 <= self.topk < self.num_classes:
            raise TrainingError(f"topk must lie in [0, num_classes), got {self.topk}")
        if self.inter_margin < 0:
            raise TrainingError(f"inter_margin must be >= 0, got {self.inter_margin}")


def init_class_weights(cfg, seed):
    """(C, K, D) unit-row class directions, deterministic in seed."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(cfg.num_classes, cfg.subcenters, cfg.embed_dim))
    w /= np.linalg.norm(w, axis=2, keepdims=True)
    return Tensor(w, requires_grad=True)


def renormalize_rows_(w):
    """In-place unit-normalize each (class, subcenter) direction of w.data."""
    norms = np.linalg.norm(w.data, axis=-1, keepdims=True)
    if (norms < 1e-30).any():
        raise TrainingError("class weight row collapsed to zero norm")
    w.data /= norms


def _one_hot(labels, num_classes):
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise TrainingError(f"labels must be a 1-D index vector, got shape {labels.shape}")
    if (labels < 0).any() or (labels >= num_classes).any():
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise TrainingError(f"label {bad} out of range [0, {num_classes})")
    oh = np.zeros((labels.size, num_classes))
    oh[np.arange(labels.size), labels] = 1.0
    return oh


def subcenter_cosines(embeddings, weights):
    """Per-class cosine: max over the K sub-center directions.

    embeddings (B, D), weights (C, K, D) -> (B, C) values in [-1, 1].
    """
    if not isinstance(embeddings, Tensor):
        embeddings = Tensor(embeddings)
    if not isinstance(weights, Tensor):
        weights = Tensor(weights)
    c, k, d = weights.shape
    if embeddings.ndim != 2 or embeddings.shape[1] != d:
        raise TrainingError(f"embeddings must be (B, {d}), got shape {embeddings.shape}")
    enorms = np.linalg.norm(embeddings.data, axis=1)
    if (enorms < 1e-30).any():
        raise TrainingError("zero embedding has no direction; cannot take cosines")
    e_unit = embeddings * ((embeddings * embeddings).sum(axis=1, keepdims=True) ** -0.5)
    w_flat = weights.reshape(c * k, d)
    w_unit = w_flat * ((w_flat * w_flat).sum(axis=1, keepdims=True) ** -0.5)
    cos_all = (e_unit @ w_unit.transpose(1, 0)).reshape(embeddings.shape[0], c, k)
    if k == 1:
        return cos_all.reshape(embeddings.shape[0], c)
    return cos_all.max(axis=2)


def aam_logits(cosines, labels, cfg):
    """Scaled cosine logits with additive angular margin on the target class.

    Target logit: s * cos(theta_y + m) via the cos/sin expansion, falling
    back to s * (cos theta_y - m*sin(m)) once theta_y + m would pass pi
    (keeps the logit monotone in theta).  Non-targets: s * cos theta_j.
    """
    if not isinstance(cosines, Tensor):
        cosines = Tensor(cosines)
    onehot = _one_hot(labels, cfg.num_classes)
    if cosines.shape != onehot.shape:
        raise TrainingError(f"cosines shape {cosines.shape} vs {onehot.shape[0]} labels x {cfg.num_classes} classes")
    m = cfg.margin
    if m == 0.0:
        return cosines * cfg.scale
    sin_theta = (ad.maximum(1.0 - cosines * cosines, Tensor(0.0)) + 1e-24).sqrt()
    phi = cosines * math.cos(m) - sin_theta * math.sin(m)
    guard = (cosines.data > math.cos(math.pi - m)).astype(np.float64)
    adjusted = phi * guard + (cosines - m * math.sin(m)) * (1.0 - guard)
    return (cosines * (1.0 - onehot) + adjusted * onehot) * cfg.scale


def inter_topk_adjust(logits, cosines, labels, cfg):
    """Raise the k hardest non-target logits to s * cos(theta_j - m_inter).

    Hardness = highest cosine; ties resolve to the lower class index.  The
    selection itself is not differentiated (constant mask per step).
    """
    if cfg.topk == 0 or cfg.inter_margin == 0.0:
        return logits
    onehot = _one_hot(labels, cfg.num_classes)
    cos_data = cosines.data
    masked = np.where(onehot.astype(bool), -np.inf, cos_data)
    order = np.argsort(-masked, axis=1, kind="stable")  # ties keep lower index first
    pick = order[:, : cfg.topk]
    sel = np.zeros_like(cos_data)
    np.put_along_axis(sel, pick, 1.0, axis=1)
    sel *= 1.0 - onehot  # safety: never touch the target column
    mi = cfg.inter_margin
    sin_theta = (ad.maximum(1.0 - cosines * cosines, Tensor(0.0)) + 1e-24).sqrt()
    eased = (cosines * math.cos(mi) + sin_theta * math.sin(mi)) * cfg.scale
    return logits * (1.0 - sel) + eased * sel


def cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label], stabilized by
    subtracting the row max before exponentiation."""
    if not isinstance(logits, Tensor):
        logits = Tensor(logits)
    onehot = _one_hot(labels, logits.shape[1])
    logp = ad.log_softmax(logits, axis=1)
    return -(logp * onehot).sum() * (1.0 / logits.shape[0])


def margin_loss(embeddings, labels, weights, cfg):
    """Full objective: sub-center cosines -> AAM margin -> inter top-k ->
    cross-entropy, averaged over the batch."""
    cosines = subcenter_cosines(embeddings, weights)
    logits = aam_logits(cosines, labels, cfg)
    logits = inter_topk_adjust(logits, cosines, labels, cfg)
    return cross_entropy(logits, labels)
