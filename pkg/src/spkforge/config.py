"""Recipe configuration: plain-text `section.key: value` files.

One file drives the whole pipeline. Lines are `section.key: value`,
`#` starts a comment (full-line or trailing), blank lines are ignored.
Every key is declared in _SCHEMA with a type and default; anything else
is rejected with its line number. The config hash covers the effective
settings (defaults folded in, keys sorted) so it is invariant to key
order, comments, and restating a default; filesystem-location keys are
excluded so the same experiment hashed from two directories agrees.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import ConfigError
from .extractor import ExtractorConfig
from .features import MelConfig
from .optim import Schedule
from .scoring import AsNormConfig
from .trainer import TrainConfig

# (section, key) -> (type tag, default). Tags: int, float, bool, str,
# int_list, float_list, str_list.
_SCHEMA = {
    ("data", "corpus_dir"): ("str", ""),
    ("data", "exp_dir"): ("str", "exp"),
    ("data", "augment_dir"): ("str", ""),  # accepted hook; no augmentation is applied
    ("data", "num_speakers"): ("int", 12),
    ("data", "utts_per_speaker"): ("int", 10),
    ("data", "seconds_per_utt"): ("float", 3.0),
    ("data", "corpus_seed"): ("int", 101),
    ("data", "holdout_utts"): ("int", 2),
    ("data", "perturb_factors"): ("float_list", (0.9, 1.0, 1.1)),
    ("frontend", "kind"): ("str", "mel"),
    ("frontend", "sample_rate"): ("int", 16000),
    ("frontend", "n_mels"): ("int", 80),
    ("frontend", "window_ms"): ("int", 25),
    ("frontend", "hop_ms"): ("int", 10),
    ("frontend", "fft_size"): ("int", 512),
    ("frontend", "log_floor"): ("float", 1e-10),
    ("frontend", "sinc_filters"): ("int", 40),
    ("frontend", "sinc_kernel"): ("int", 251),
    ("frontend", "sinc_stride"): ("int", 160),
    ("extractor", "encoder"): ("str", "ecapa_lite"),
    ("extractor", "pooling"): ("str", "attentive_stats"),
    ("extractor", "projector"): ("str_list", ("batch_norm", "linear")),
    ("extractor", "embed_dim"): ("int", 128),
    ("extractor", "channels"): ("int", 128),
    ("extractor", "tdnn_layers"): ("int", 3),
    ("extractor", "kernel"): ("int", 3),
    ("extractor", "dilations"): ("int_list", (2, 3, 4)),
    ("extractor", "se_bottleneck"): ("int", 16),
    ("extractor", "attention_hidden"): ("int", 64),
    ("loss", "scale"): ("float", 30.0),
    ("loss", "margin"): ("float", 0.2),
    ("loss", "subcenters"): ("int", 3),
    ("loss", "topk"): ("int", 5),
    ("loss", "inter_margin"): ("float", 0.1),
    ("trainer", "batch_size"): ("int", 16),
    ("trainer", "steps"): ("int", 2000),
    ("trainer", "seed"): ("int", 17),
    ("trainer", "crop_seconds"): ("float", 3.0),
    ("trainer", "checkpoint_every"): ("int", 500),
    ("trainer", "beta1"): ("float", 0.9),
    ("trainer", "beta2"): ("float", 0.999),
    ("trainer", "adam_eps"): ("float", 1e-8),
    ("trainer", "peak_lr"): ("float", 1e-3),
    ("trainer", "floor_lr"): ("float", 1e-7),
    ("trainer", "warm_steps"): ("int", 100),
    ("trainer", "cycle_steps"): ("int", 1000),
    ("scoring", "num_target"): ("int", 200),
    ("scoring", "num_nontarget"): ("int", 200),
    ("scoring", "trials_seed"): ("int", 7),
    ("scoring", "trials_file"): ("str", ""),  # preset trial list; empty = sample one
    ("scoring", "as_norm"): ("bool", False),
    ("scoring", "topn"): ("int", 50),
    ("scoring", "qmf"): ("bool", False),
    ("registry", "dir"): ("str", ""),
    ("registry", "model_name"): ("str", "model"),
}

# Where an experiment lives must not change what it computes.
_HASH_EXCLUDED = {
    ("data", "corpus_dir"),
    ("data", "exp_dir"),
    ("data", "augment_dir"),
    ("registry", "dir"),
}

SECTIONS = tuple(sorted({s for s, _ in _SCHEMA}))


def _parse_scalar(tag, token, where):
    token = token.strip()
    try:
        if tag == "int":
            return int(token)
        if tag == "float":
            return float(token)
    except ValueError:
        raise ConfigError(f"{where}: expected {tag}, got {token!r}") from None
    if tag == "bool":
        if token.lower() in ("true", "false"):
            return token.lower() == "true"
        raise ConfigError(f"{where}: expected true or false, got {token!r}")
    return token


def _parse_value(tag, raw, where):
    if tag.endswith("_list"):
        inner = tag[: -len("_list")]
        parts = [p for p in (q.strip() for q in raw.split(",")) if p]
        if not parts:
            raise ConfigError(f"{where}: empty list")
        return tuple(_parse_scalar(inner, p, where) for p in parts)
    if not raw.strip() and tag != "str":
        raise ConfigError(f"{where}: empty value")
    return _parse_scalar(tag, raw, where)


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RecipeConfig:
    """Effective settings for one recipe run, defaults folded in."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        full = {k: v for k, (_, v) in _SCHEMA.items()}
        for key, val in self.values.items():
            if key not in full:
                raise ConfigError(f"unknown config key {key[0]}.{key[1]}")
            full[key] = val
        self.values = full

    def get(self, section, key):
        try:
            return self.values[(section, key)]
        except KeyError:
            raise ConfigError(f"unknown config key {section}.{key}") from None

    def config_hash(self):
        return self.hash_sections(SECTIONS)

    def hash_sections(self, sections):
        """Hash of the effective settings in the named sections only."""
        want = set(sections)
        lines = [
            f"{s}.{k}: {_format_value(v)}"
            for (s, k), v in sorted(self.values.items())
            if s in want and (s, k) not in _HASH_EXCLUDED
        ]
        return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()

    def canonical_text(self):
        """Full effective config, one sorted line per key (snapshot format)."""
        return "".join(f"{s}.{k}: {_format_value(v)}\n" for (s, k), v in sorted(self.values.items()))

    def to_mel_config(self):
        g = self.get
        return MelConfig(
            n_mels=g("frontend", "n_mels"),
            window_ms=g("frontend", "window_ms"),
            hop_ms=g("frontend", "hop_ms"),
            fft_size=g("frontend", "fft_size"),
            log_floor=g("frontend", "log_floor"),
        )

    def to_extractor_config(self):
        g = self.get
        return ExtractorConfig(
            frontend=g("frontend", "kind"),
            encoder=g("extractor", "encoder"),
            pooling=g("extractor", "pooling"),
            projector=g("extractor", "projector"),
            embed_dim=g("extractor", "embed_dim"),
            sample_rate=g("frontend", "sample_rate"),
            n_mels=g("frontend", "n_mels"),
            mel_window_ms=g("frontend", "window_ms"),
            mel_hop_ms=g("frontend", "hop_ms"),
            mel_fft=g("frontend", "fft_size"),
            mel_log_floor=g("frontend", "log_floor"),
            sinc_filters=g("frontend", "sinc_filters"),
            sinc_kernel=g("frontend", "sinc_kernel"),
            sinc_stride=g("frontend", "sinc_stride"),
            channels=g("extractor", "channels"),
            tdnn_layers=g("extractor", "tdnn_layers"),
            kernel=g("extractor", "kernel"),
            dilations=g("extractor", "dilations"),
            se_bottleneck=g("extractor", "se_bottleneck"),
            attention_hidden=g("extractor", "attention_hidden"),
        )

    def to_train_config(self):
        g = self.get
        return TrainConfig(
            extractor=self.to_extractor_config(),
            batch_size=g("trainer", "batch_size"),
            steps=g("trainer", "steps"),
            seed=g("trainer", "seed"),
            crop_seconds=g("trainer", "crop_seconds"),
            checkpoint_every=g("trainer", "checkpoint_every"),
            scale=g("loss", "scale"),
            margin=g("loss", "margin"),
            subcenters=g("loss", "subcenters"),
            topk=g("loss", "topk"),
            inter_margin=g("loss", "inter_margin"),
            beta1=g("trainer", "beta1"),
            beta2=g("trainer", "beta2"),
            adam_eps=g("trainer", "adam_eps"),
            schedule=Schedule(
                peak_lr=g("trainer", "peak_lr"),
                floor_lr=g("trainer", "floor_lr"),
                warm_steps=g("trainer", "warm_steps"),
                cycle_steps=g("trainer", "cycle_steps"),
            ),
        )

    def to_asnorm_config(self):
        return AsNormConfig(topn=self.get("scoring", "topn"))


def parse_config_text(text, origin="<config>"):
    overrides = {}
    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'section.key: value', got {raw_line.strip()!r}")
        dotted, raw_value = line.split(":", 1)
        dotted = dotted.strip()
        if dotted.count(".") != 1:
            raise ConfigError(f"{origin}:{lineno}: key must be section.key, got {dotted!r}")
        section, key = dotted.split(".")
        section, key = section.strip(), key.strip()
        if (section, key) not in _SCHEMA:
            raise ConfigError(f"{origin}:{lineno}: unknown config key {section}.{key}")
        if (section, key) in overrides:
            raise ConfigError(f"{origin}:{lineno}: duplicate config key {section}.{key}")
        tag, _ = _SCHEMA[(section, key)]
        overrides[(section, key)] = _parse_value(tag, raw_value, f"{origin}:{lineno}")
    return RecipeConfig(values=overrides)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config_text(text, origin=str(path))


def save_config(cfg: RecipeConfig, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(cfg.canonical_text())
