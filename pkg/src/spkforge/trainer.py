"""Training loop: seed-deterministic batching, Adam with warm-restart
schedule, periodic checkpoints.

Determinism contract: (config, seed, manifest) fully determines every batch,
every update, and the final checkpoint bytes.  All randomness flows from
named substreams of the config seed; audio is cached read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import load_waveform
from .autodiff import collect_gradients
from .errors import DivergenceError, TrainingError
from .extractor import ExtractorConfig, build_extractor
from .objectives import LossConfig, init_class_weights, margin_loss, renormalize_rows_
from .optim import Adam, Schedule, lr_at


@dataclass
class TrainConfig:
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    batch_size: int = 16
    steps: int = 2000
    seed: int = 17
    crop_seconds: float = 3.0
    checkpoint_every: int = 500
    # loss
    scale: float = 30.0
    margin: float = 0.2
    subcenters: int = 3
    topk: int = 5
    inter_margin: float = 0.1
    # optimizer
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    schedule: Schedule = field(default_factory=Schedule)

    def __post_init__(self):
        if self.batch_size < 2:
            raise TrainingError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.steps < 0:
            raise TrainingError(f"steps must be >= 0, got {self.steps}")
        if self.crop_seconds <= 0:
            raise TrainingError(f"crop_seconds must be positive, got {self.crop_seconds}")
        if self.checkpoint_every < 1:
            raise TrainingError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")


@dataclass
class Checkpoint:
    state: dict  # flat name -> ndarray: param.* / buffer.* entries
    step: int
    config_hash: str
    metrics: dict


def label_map(manifest):
    """Dense class indices over the sorted speaker set."""
    return {spk: i for i, spk in enumerate(manifest.speakers())}


def make_batches(manifest, batch_size, seed):
    """Endless deterministic stream of (utt_ids, labels) batches.

    Entries are reshuffled every epoch from a seed-fixed stream; a trailing
    partial batch is dropped so every batch has exactly batch_size rows.
    """
    if len(manifest) < 2 or len(manifest.speakers()) < 2:
        raise TrainingError("training needs at least 2 utterances over at least 2 speakers")
    if batch_size > len(manifest):
        raise TrainingError(f"batch_size {batch_size} exceeds corpus size {len(manifest)}")
    labels = label_map(manifest)
    entries = list(manifest)
    rng = np.random.default_rng(seed)

    def stream():
        while True:
            order = rng.permutation(len(entries))
            for start in range(0, len(entries) - batch_size + 1, batch_size):
                chunk = [entries[i] for i in order[start : start + batch_size]]
                yield [e.utt_id for e in chunk], np.array([labels[e.speaker_id] for e in chunk])

    return stream()


class _BatchSource:
    """Lazy per-utterance cache of training inputs, float32 in memory.

    Feature front-ends (mel, precomputed_file) cache full-utterance frame
    matrices and crop in the frame domain; sinc_raw caches raw samples and
    crops in the sample domain.  Either way a crop is a deterministic
    function of the rng handed in.
    """

    def __init__(self, manifest, extractor_cfg, crop_seconds):
        self.by_utt = manifest.by_utt()
        self.cfg = extractor_cfg
        self.store = {}
        if extractor_cfg.frontend == "sinc_raw":
            self.target = int(round(crop_seconds * extractor_cfg.sample_rate))
        elif extractor_cfg.frontend == "mel":
            from .features import frame_count

            mel = extractor_cfg.mel_config()
            samples = int(round(crop_seconds * extractor_cfg.sample_rate))
            self.target = frame_count(samples, mel, extractor_cfg.sample_rate)
        else:
            self.target = None  # resolved from the first file's frame rate

    def _load(self, utt_id):
        path = self.by_utt[utt_id].path
        cfg = self.cfg
        if cfg.frontend == "sinc_raw":
            return load_waveform(path).samples.astype(np.float32)
        if cfg.frontend == "mel":
            from .features import mel_spectrogram_batch

            w = load_waveform(path)
            return mel_spectrogram_batch(w.samples[None], cfg.sample_rate, cfg.mel_config())[0].astype(np.float32)
        from .features import load_features

        return load_features(path).frames.astype(np.float32)

    def crop(self, utt_id, rng, crop_seconds):
        if utt_id not in self.store:
            self.store[utt_id] = self._load(utt_id)
            if self.target is None:  # precomputed_file: frames at the file's rate
                by = self.by_utt[utt_id]
                rate = self.store[utt_id].shape[0] / max(by.duration_seconds, 1e-9)
                self.target = max(1, int(round(crop_seconds * rate)))
        full = self.store[utt_id]
        n, target = full.shape[0], self.target
        if n == target:
            return full
        if n > target:
            off = int(rng.integers(0, n - target + 1))
            return full[off : off + target]
        reps = -(-target // n)
        return np.concatenate([full] * reps, axis=0)[:target]


def train(cfg, manifest, out_dir=None, config_hash="", log=None):
    """Run cfg.steps updates; returns the final Checkpoint (and writes
    periodic ones under out_dir when given)."""
    extractor = build_extractor(cfg.extractor, cfg.seed)
    speakers = manifest.speakers()
    loss_cfg = LossConfig(
        num_classes=len(speakers),
        embed_dim=cfg.extractor.embed_dim,
        scale=cfg.scale,
        margin=cfg.margin,
        subcenters=cfg.subcenters,
        topk=cfg.topk,
        inter_margin=cfg.inter_margin,
    )
    weights = init_class_weights(loss_cfg, cfg.seed + 1)
    params = dict(extractor.named_parameters())
    params["loss.W"] = weights
    adam = Adam(cfg.beta1, cfg.beta2, cfg.adam_eps)
    batches = make_batches(manifest, cfg.batch_size, cfg.seed)
    crop_rng = np.random.default_rng(cfg.seed + 2)
    source = _BatchSource(manifest, cfg.extractor, cfg.crop_seconds)
    raw_mode = cfg.extractor.frontend == "sinc_raw"
    losses = []

    def snapshot(step):
        state = extractor.state()
        state["param.loss.W"] = weights.data.copy()
        metrics = {}
        if losses:
            head = losses[: min(10, len(losses))]
            tail = losses[-min(10, len(losses)) :]
            metrics = {"initial_loss": float(np.mean(head)), "final_loss": float(np.mean(tail))}
        return Checkpoint(state, step, config_hash, metrics)

    for step in range(cfg.steps):
        utt_ids, labels = next(batches)
        rows = [source.crop(u, crop_rng, cfg.crop_seconds) for u in utt_ids]
        batch = np.stack(rows).astype(np.float64)
        if raw_mode:
            emb = extractor.embed_batch(batch, mode="train")
        else:
            emb = extractor.embed_features_batch(batch, mode="train")
        loss = margin_loss(emb, labels, weights, loss_cfg)
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(step, f"loss became non-finite ({value}) at step {step}")
        loss.backward()
        grads = collect_gradients(params)
        adam.step(params, grads, lr_at(step, cfg.schedule))
        for p in params.values():
            p.grad = None
        renormalize_rows_(weights)
        losses.append(value)
        if log and (step % 100 == 0 or step == cfg.steps - 1):
            log(f"step {step + 1}/{cfg.steps} loss {value:.4f} lr {lr_at(step, cfg.schedule):.2e}")
        if out_dir is not None and (step + 1) % cfg.checkpoint_every == 0 and (step + 1) < cfg.steps:
            save_checkpoint(snapshot(step + 1), f"{out_dir}/checkpoint_{step + 1:06d}")

    final = snapshot(cfg.steps)
    if out_dir is not None:
        save_checkpoint(final, f"{out_dir}/checkpoint_final")
    return final


def save_checkpoint(ckpt, prefix):
    from .container import save_params

    save_params(f"{prefix}.spkp", ckpt.state)
    with open(f"{prefix}.meta", "w", encoding="utf-8") as f:
        f.write(f"step: {ckpt.step}\n")
        f.write(f"config_hash: {ckpt.config_hash}\n")
        for key in sorted(ckpt.metrics):
            f.write(f"{key}: {ckpt.metrics[key]!r}\n")


def load_checkpoint(prefix):
    from .container import load_params

    state = load_params(f"{prefix}.spkp")
    step = 0
    config_hash = ""
    metrics = {}
    with open(f"{prefix}.meta", encoding="utf-8") as f:
        for line in f:
            key, _, value = line.strip().partition(": ")
            if key == "step":
                step = int(value)
            elif key == "config_hash":
                config_hash = value
            elif key:
                metrics[key] = float(value)
    return Checkpoint(state, step, config_hash, metrics)


def checkpoint_extractor(ckpt, extractor_cfg):
    """Rebuild an extractor and load the checkpoint's model state into it."""
    ex = build_extractor(extractor_cfg, seed=0)
    model_state = {k: v for k, v in ckpt.state.items() if k != "param.loss.W"}
    ex.load_state(model_state)
    return ex
