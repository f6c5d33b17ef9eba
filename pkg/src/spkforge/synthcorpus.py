"""Synthetic speaker corpus: deterministic, learnable, not trivially so.

Each speaker is a fixed random voice profile: a fundamental frequency
driving a feedback comb filter (glottal-pulse-like periodicity), three
formant resonators, and a spectral tilt.  Utterances share the profile but
differ in excitation noise, small F0 jitter, amplitude modulation, and
per-utterance filter detuning, so same-speaker pairs are similar in feature
space without being near-duplicates.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.signal import lfilter

from .audio import Waveform, save_waveform
from .manifest import Manifest, ManifestEntry, save_manifest


def _speaker_profile(rng):
    return {
        "f0": float(np.exp(rng.uniform(np.log(90.0), np.log(250.0)))),
        "comb_gain": float(rng.uniform(0.82, 0.93)),
        "formants": [
            float(rng.uniform(350.0, 900.0)),
            float(rng.uniform(1000.0, 2200.0)),
            float(rng.uniform(2400.0, 3400.0)),
        ],
        "bandwidths": [float(rng.uniform(80.0, 160.0)) for _ in range(3)],
        "tilt": float(rng.uniform(0.55, 0.9)),
    }


def _resonator(x, freq, bandwidth, sr):
    r = np.exp(-np.pi * bandwidth / sr)
    theta = 2.0 * np.pi * freq / sr
    return lfilter([1.0 - r], [1.0, -2.0 * r * np.cos(theta), r * r], x)


def synthesize_utterance(profile, rng, seconds, sr):
    """One utterance from a speaker profile and an utterance-level rng."""
    n = int(round(seconds * sr))
    excitation = rng.normal(size=n)
    # per-utterance nuisance
    f0 = profile["f0"] * (1.0 + rng.uniform(-0.04, 0.04))
    detune = 1.0 + rng.uniform(-0.05, 0.05, size=3)
    delay = max(2, int(round(sr / f0)))
    comb_den = np.zeros(delay + 1)
    comb_den[0] = 1.0
    comb_den[delay] = -profile["comb_gain"]
    voiced = lfilter([1.0], comb_den, excitation)
    y = np.zeros(n)
    for freq, bw, d in zip(profile["formants"], profile["bandwidths"], detune):
        y = y + _resonator(voiced, freq * d, bw, sr)
    y = lfilter([1.0], [1.0, -profile["tilt"]], y)  # spectral tilt
    am_hz = rng.uniform(1.5, 5.0)
    am_phase = rng.uniform(0.0, 2.0 * np.pi)
    t = np.arange(n) / sr
    y *= 1.0 + 0.35 * np.sin(2.0 * np.pi * am_hz * t + am_phase)
    y *= 0.08 / (np.sqrt(np.mean(y * y)) + 1e-12)
    np.clip(y, -0.99, 0.99, out=y)
    return Waveform(y, sr)


def gen_synthetic_corpus(num_speakers, utts_per_speaker, seconds, seed, out_dir, sample_rate=16000):
    """Write wav files + manifest under out_dir; returns the Manifest.

    Fully determined by the arguments: speaker i uses substream (seed, i),
    utterance j of speaker i uses (seed, i, j)."""
    if num_speakers < 2:
        raise ValueError(f"need at least 2 speakers, got {num_speakers}")
    if utts_per_speaker < 1:
        raise ValueError(f"need at least 1 utterance per speaker, got {utts_per_speaker}")
    wav_root = os.path.join(out_dir, "wav")
    os.makedirs(wav_root, exist_ok=True)
    entries = []
    for i in range(num_speakers):
        spk = f"s{i:03d}"
        profile = _speaker_profile(np.random.default_rng([seed, i]))
        spk_dir = os.path.join(wav_root, spk)
        os.makedirs(spk_dir, exist_ok=True)
        for j in range(utts_per_speaker):
            utt = f"{spk}_u{j:03d}"
            w = synthesize_utterance(profile, np.random.default_rng([seed, i, j]), seconds, sample_rate)
            path = os.path.join(spk_dir, f"{utt}.wav")
            save_waveform(path, w)
            entries.append(ManifestEntry(utt, spk, os.path.abspath(path), w.duration_seconds))
    manifest = Manifest(entries)
    save_manifest(os.path.join(out_dir, "manifest.txt"), manifest)
    return manifest
