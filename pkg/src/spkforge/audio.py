"""Audio I/O, speed perturbation, speaker relabeling, length normalization.

Only RIFF/PCM 16-bit mono files are supported; samples live in [-1, 1] as
float64.  Speed perturbation is resampling-style: pitch and tempo change
together, and each (speaker, factor) pair downstream is a distinct class.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyWaveformError,
    PerturbFactorError,
    SpeakerIdError,
    UnsupportedBitDepthError,
    UnsupportedChannelCountError,
    UnsupportedEncodingError,
)

# half-width of the resampling kernel, in zero crossings of the sinc
RESAMPLE_ZERO_CROSSINGS = 16


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise UnsupportedChannelCountError(f"expected mono samples, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size and not np.isfinite(self.samples).all():
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration_seconds(self):
        return self.samples.size / self.sample_rate


@dataclass
class PerturbLabelRule:
    factors: list = field(default_factory=lambda: [0.9, 1.0, 1.1])
    relabel: bool = True

    def __post_init__(self):
        if not any(abs(f - 1.0) < 1e-12 for f in self.factors):
            raise PerturbFactorError("factor list must contain 1.0 (the unperturbed copy)")
        for f in self.factors:
            _check_factor(f)


def _check_factor(factor):
    if not (0.5 < factor < 2.0):
        raise PerturbFactorError(f"speed factor must lie in (0.5, 2.0), got {factor}")


def load_waveform(path):
    """Read a RIFF/PCM file into a Waveform; 16-bit mono only."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            comptype = wf.getcomptype()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise UnsupportedEncodingError(f"{path}: not a readable RIFF/PCM file: {exc}") from exc
    if comptype != "NONE":
        raise UnsupportedEncodingError(f"{path}: compressed wav ({comptype}) not supported")
    if channels != 1:
        raise UnsupportedChannelCountError(f"{path}: unsupported channel count {channels} (mono required)")
    if width != 2:
        raise UnsupportedBitDepthError(f"{path}: unsupported bit depth {width * 8} (16-bit required)")
    ints = np.frombuffer(raw, dtype="<i2")
    return Waveform(ints.astype(np.float64) / 32768.0, rate)


def save_waveform(path, w):
    """Write a Waveform as RIFF/PCM 16-bit mono."""
    ints = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(ints.tobytes())


def speed_perturb(w, factor):
    """Resample so playback speed scales by ``factor``.

    The output keeps the input sample rate; content at frequency f moves to
    f * factor and the length becomes round(len / factor).  factor 1.0 is the
    bit-exact identity.
    """
    _check_factor(factor)
    if w.samples.size == 0:
        raise EmptyWaveformError("cannot perturb an empty waveform")
    if factor == 1.0:
        return Waveform(w.samples.copy(), w.sample_rate)

    x = w.samples
    n_in = x.size
    n_out = int(round(n_in / factor))
    # evaluate x(t) at t = n * factor with a windowed-sinc kernel; when
    # slowing down is a pure interpolation (cutoff 1), speeding up needs the
    # anti-alias cutoff 1/factor
    cutoff = min(1.0, 1.0 / factor)
    half = int(np.ceil(RESAMPLE_ZERO_CROSSINGS / cutoff))
    t = np.arange(n_out, dtype=np.float64) * factor
    base = np.floor(t).astype(np.int64)
    offsets = np.arange(-half + 1, half + 1, dtype=np.int64)
    taps = base[:, None] + offsets[None, :]
    delta = t[:, None] - taps  # |delta| <= half
    kernel = cutoff * np.sinc(cutoff * delta)
    kernel *= 0.5 * (1.0 + np.cos(np.pi * delta / half))
    padded = np.concatenate([np.zeros(half), x, np.zeros(half + 1)])
    y = (padded[taps + half] * kernel).sum(axis=1)
    return Waveform(y, w.sample_rate)


def relabel_speaker(speaker_id, factor, rule):
    """Composite id for a perturbed copy; identity at factor 1.0."""
    if "#" in speaker_id:
        raise SpeakerIdError(f"raw speaker id may not contain '#': {speaker_id!r}")
    if not any(abs(f - factor) < 1e-12 for f in rule.factors):
        raise PerturbFactorError(f"factor {factor} not in rule factors {rule.factors}")
    if abs(factor - 1.0) < 1e-12 or not rule.relabel:
        return speaker_id
    return f"{speaker_id}#sp{factor:g}"


def crop_or_duplicate(w, target_seconds, seed):
    """Force length to round(target_seconds * rate): crop longer inputs at a
    seed-deterministic offset, tile shorter ones and crop from the start."""
    if w.samples.size == 0:
        raise EmptyWaveformError("cannot crop an empty waveform")
    target = int(round(target_seconds * w.sample_rate))
    if target <= 0:
        raise ValueError(f"target_seconds too small: {target_seconds}")
    n = w.samples.size
    if n == target:
        return Waveform(w.samples.copy(), w.sample_rate)
    if n > target:
        rng = np.random.default_rng(seed)
        offset = int(rng.integers(0, n - target + 1))
        return Waveform(w.samples[offset : offset + target].copy(), w.sample_rate)
    reps = -(-target // n)  # ceil
    return Waveform(np.tile(w.samples, reps)[:target], w.sample_rate)
