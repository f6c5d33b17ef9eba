"""Synthetic corpus generation and the manifest format it writes."""

import numpy as np
import pytest

from spkforge.audio import load_waveform
from spkforge.errors import ManifestError
from spkforge.features import MelConfig, mel_spectrogram
from spkforge.manifest import (
    Manifest,
    ManifestEntry,
    compute_stats,
    load_manifest,
    save_manifest,
)
from spkforge.synthcorpus import gen_synthetic_corpus


def entry(utt, spk="s000", path="/a/b.wav", dur=1.0):
    return ManifestEntry(utt, spk, path, dur)


class TestManifest:
    def test_roundtrip(self, tmp_path):
        m = Manifest([entry("u1", "spkA", "/x/u1.wav", 2.5), entry("u2", "spkB", "/x/u2.wav", 1.25)])
        path = tmp_path / "m.txt"
        save_manifest(path, m)
        back = load_manifest(path)
        assert [(e.utt_id, e.speaker_id, e.path) for e in back] == [
            ("u1", "spkA", "/x/u1.wav"),
            ("u2", "spkB", "/x/u2.wav"),
        ]
        assert [e.duration_seconds for e in back] == [2.5, 1.25]

    def test_duplicate_utt_rejected(self):
        with pytest.raises(ManifestError, match="duplicate utt_id"):
            Manifest([entry("u1"), entry("u1", "s001")])

    @pytest.mark.parametrize("bad", [entry("u 1"), entry("u1", "s 0"), entry("u1", path="/a b.wav"), entry("")])
    def test_whitespace_or_empty_field_rejected_at_save(self, tmp_path, bad):
        with pytest.raises(ManifestError, match="empty or contains whitespace"):
            save_manifest(tmp_path / "m.txt", Manifest([bad]))

    def test_bad_field_count(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("u1 s000 /x/u1.wav\n")
        with pytest.raises(ManifestError, match=r":1: expected 4 fields, got 3"):
            load_manifest(p)

    def test_bad_duration(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("u1 s000 /x/u1.wav 2.5\nu2 s000 /x/u2.wav long\n")
        with pytest.raises(ManifestError, match=r":2: bad duration"):
            load_manifest(p)

    def test_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("\nu1 s000 /x/u1.wav 1.0\n\n")
        assert len(load_manifest(p)) == 1

    def test_speakers_sorted_and_by_utt(self):
        m = Manifest([entry("u1", "zz"), entry("u2", "aa"), entry("u3", "zz")])
        assert m.speakers() == ["aa", "zz"]
        assert m.by_utt()["u2"].speaker_id == "aa"

    def test_filter(self):
        m = Manifest([entry("u1", "a"), entry("u2", "b")])
        kept = m.filter(lambda e: e.speaker_id == "b")
        assert [e.utt_id for e in kept] == ["u2"]

    def test_stats(self):
        m = Manifest([entry("u1", "a", dur=3600.0), entry("u2", "a", dur=1800.0), entry("u3", "b", dur=1800.0)])
        st = compute_stats(m)
        assert st.num_utts == 3
        assert st.num_speakers == 2
        assert st.total_hours == pytest.approx(2.0)
        assert st.per_speaker == {"a": 2, "b": 1}

    def test_stats_empty_rejected(self):
        with pytest.raises(ManifestError, match="empty manifest"):
            compute_stats(Manifest([]))


class TestGenCorpus:
    def test_layout_and_manifest(self, tmp_path):
        out = tmp_path / "c"
        m = gen_synthetic_corpus(2, 3, 0.5, 11, str(out))
        assert len(m) == 6
        assert m.speakers() == ["s000", "s001"]
        for e in m:
            assert e.utt_id.startswith(e.speaker_id + "_u")
            assert e.path.startswith(str(out))
            assert e.duration_seconds == pytest.approx(0.5)
        assert (out / "wav" / "s001" / "s001_u002.wav").exists()
        on_disk = load_manifest(out / "manifest.txt")
        assert [e.utt_id for e in on_disk] == [e.utt_id for e in m]

    def test_bit_identical_across_runs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        gen_synthetic_corpus(2, 2, 0.4, 5, str(a))
        gen_synthetic_corpus(2, 2, 0.4, 5, str(b))
        for rel in ["wav/s000/s000_u000.wav", "wav/s001/s001_u001.wav"]:
            assert (a / rel).read_bytes() == (b / rel).read_bytes()

    def test_speaker_substreams_independent_of_corpus_size(self, tmp_path):
        # speaker i's audio is a function of (seed, i) alone, so growing the
        # corpus must not disturb the speakers already in it
        small, big = tmp_path / "small", tmp_path / "big"
        gen_synthetic_corpus(2, 2, 0.4, 5, str(small))
        gen_synthetic_corpus(3, 3, 0.4, 5, str(big))
        rel = "wav/s001/s001_u001.wav"
        assert (small / rel).read_bytes() == (big / rel).read_bytes()

    def test_seed_changes_audio(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        gen_synthetic_corpus(2, 1, 0.4, 5, str(a))
        gen_synthetic_corpus(2, 1, 0.4, 6, str(b))
        rel = "wav/s000/s000_u000.wav"
        assert (a / rel).read_bytes() != (b / rel).read_bytes()

    def test_level_and_clipping(self, tmp_path):
        m = gen_synthetic_corpus(2, 1, 0.5, 3, str(tmp_path / "c"))
        for e in m:
            w = load_waveform(e.path)
            rms = np.sqrt(np.mean(w.samples**2))
            assert rms == pytest.approx(0.08, rel=0.05)
            assert np.max(np.abs(w.samples)) <= 0.99

    def test_sample_rate_parameter(self, tmp_path):
        m = gen_synthetic_corpus(2, 1, 0.5, 3, str(tmp_path / "c"), sample_rate=8000)
        w = load_waveform(m.entries[0].path)
        assert w.sample_rate == 8000
        assert len(w.samples) == 4000

    def test_speakers_are_separable_but_utts_differ(self, tmp_path):
        # mean log-mel vectors: same-speaker pairs should be closer than
        # cross-speaker pairs, and repeats of one speaker must not be clones
        m = gen_synthetic_corpus(3, 3, 1.5, 21, str(tmp_path / "c"))
        cfg = MelConfig(n_mels=24)
        means = {}
        for e in m:
            feats = mel_spectrogram(load_waveform(e.path), cfg)
            means.setdefault(e.speaker_id, []).append(feats.frames.mean(axis=0))
        within, across = [], []
        spks = sorted(means)
        for s in spks:
            vs = means[s]
            for i in range(len(vs)):
                for j in range(i + 1, len(vs)):
                    d = float(np.linalg.norm(vs[i] - vs[j]))
                    assert d > 0.0  # not byte-for-byte duplicated voices
                    within.append(d)
        for i in range(len(spks)):
            for j in range(i + 1, len(spks)):
                for va in means[spks[i]]:
                    for vb in means[spks[j]]:
                        across.append(float(np.linalg.norm(va - vb)))
        assert np.mean(within) < np.mean(across)

    @pytest.mark.parametrize("spk,utt", [(1, 3), (0, 3), (2, 0)])
    def test_degenerate_sizes_rejected(self, tmp_path, spk, utt):
        with pytest.raises(ValueError):
            gen_synthetic_corpus(spk, utt, 0.5, 1, str(tmp_path / "c"))
