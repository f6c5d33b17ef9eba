"""Log-mel spectrogram extraction and the SPKF feature-file format.

SPKF layout (little-endian): magic "SPKF", u32 T, u32 D, f32 frame_rate,
then T*D float32 values row-major (frame-major).  The same format feeds the
precomputed-feature front-end.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FeatureError

SPKF_MAGIC = b"SPKF"


@dataclass
class MelConfig:
    n_mels: int = 80
    window_ms: int = 25
    hop_ms: int = 10
    fft_size: int = 512
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.n_mels < 1:
            raise FeatureError(f"n_mels must be >= 1, got {self.n_mels}")
        if self.hop_ms > self.window_ms:
            raise FeatureError(f"hop ({self.hop_ms} ms) must not exceed window ({self.window_ms} ms)")
        if self.log_floor <= 0:
            raise FeatureError("log_floor must be positive")

    def window_samples(self, sample_rate):
        return sample_rate * self.window_ms // 1000

    def hop_samples(self, sample_rate):
        return sample_rate * self.hop_ms // 1000


@dataclass
class FeatureSequence:
    frames: np.ndarray  # (T, D)
    frame_rate: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise FeatureError(f"frames must be a T x D matrix with T >= 1, got shape {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise FeatureError("feature frames contain non-finite values")


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg, sample_rate):
    """Triangular filters, (n_mels, fft_size // 2 + 1); rows cover 0..Nyquist."""
    n_bins = cfg.fft_size // 2 + 1
    freqs = np.arange(n_bins) * sample_rate / cfg.fft_size
    points = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), cfg.n_mels + 2))
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        left, center, right = points[m], points[m + 1], points[m + 2]
        up = (freqs - left) / (center - left)
        down = (right - freqs) / (right - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_center_frequencies(cfg, sample_rate):
    points = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), cfg.n_mels + 2))
    return points[1:-1]


def frame_count(num_samples, cfg, sample_rate):
    win = cfg.window_samples(sample_rate)
    hop = cfg.hop_samples(sample_rate)
    if num_samples < win:
        raise FeatureError(f"waveform of {num_samples} samples shorter than one {win}-sample window")
    return 1 + (num_samples - win) // hop


def mel_spectrogram_batch(samples, sample_rate, cfg):
    """(B, N) float samples -> (B, T, n_mels) log-mel energies."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise FeatureError(f"expected (B, N) sample matrix, got shape {samples.shape}")
    win = cfg.window_samples(sample_rate)
    hop = cfg.hop_samples(sample_rate)
    t = frame_count(samples.shape[1], cfg, sample_rate)
    if cfg.fft_size < win:
        raise FeatureError(f"fft_size {cfg.fft_size} smaller than window ({win} samples)")
    frames = np.lib.stride_tricks.sliding_window_view(samples, win, axis=1)[:, : (t - 1) * hop + 1 : hop]
    windowed = frames * np.hanning(win)
    spectrum = np.fft.rfft(windowed, n=cfg.fft_size, axis=2)
    power = spectrum.real**2 + spectrum.imag**2
    mel = power @ mel_filterbank(cfg, sample_rate).T
    return np.log(np.maximum(mel, cfg.log_floor))


def mel_spectrogram(w, cfg):
    """Waveform -> FeatureSequence of log-mel frames."""
    feats = mel_spectrogram_batch(w.samples[None, :], w.sample_rate, cfg)[0]
    return FeatureSequence(feats, w.sample_rate / cfg.hop_samples(w.sample_rate))


def save_features(path, seq):
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    t, d = frames.shape
    with open(path, "wb") as f:
        f.write(SPKF_MAGIC)
        f.write(struct.pack("<IIf", t, d, seq.frame_rate))
        f.write(frames.tobytes())


def load_features(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != SPKF_MAGIC:
        raise FeatureError(f"{path}: not a feature file (bad magic)")
    if len(blob) < 16:
        raise FeatureError(f"{path}: truncated header")
    t, d, rate = struct.unpack_from("<IIf", blob, 4)
    expected = 16 + 4 * t * d
    if len(blob) != expected:
        raise FeatureError(f"{path}: expected {expected} bytes for {t}x{d} frames, got {len(blob)}")
    frames = np.frombuffer(blob, dtype="<f4", count=t * d, offset=16).reshape(t, d)
    return FeatureSequence(frames.astype(np.float64), float(rate))
