import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture
def rng():
    return np.random.default_rng(0xBEEF)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """4 speakers x 5 utts x 2 s, shared across tests that train."""
    from spkforge.synthcorpus import gen_synthetic_corpus

    out = tmp_path_factory.mktemp("corpus")
    gen_synthetic_corpus(4, 5, 2.0, 77, str(out))
    return out


@pytest.fixture(scope="session")
def tiny_config_text():
    def make(exp_dir, corpus_dir="", extra=""):
        lines = [
            f"data.exp_dir: {exp_dir}",
            "data.num_speakers: 4",
            "data.utts_per_speaker: 5",
            "data.seconds_per_utt: 2.0",
            "data.holdout_utts: 2",
            "trainer.steps: 20",
            "trainer.batch_size: 8",
            "trainer.checkpoint_every: 10",
            "trainer.crop_seconds: 1.0",
            "extractor.channels: 16",
            "extractor.embed_dim: 24",
            "extractor.attention_hidden: 8",
            "frontend.n_mels: 24",
            "loss.topk: 2",
            "scoring.num_target: 20",
            "scoring.num_nontarget: 20",
        ]
        if corpus_dir:
            lines.insert(0, f"data.corpus_dir: {corpus_dir}")
        if extra:
            lines.append(extra.strip())
        return "\n".join(lines) + "\n"

    return make
