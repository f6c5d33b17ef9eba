"""Speaker-embedding extractor assembled from four configurable blocks:
front-end -> encoder -> pooling -> projector.

Every block is chosen by name in ExtractorConfig and the whole model is a
flat named-parameter dictionary, so checkpoints serialize through the
parameter container and any block combination composes as long as the
dimensions chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, FeatureError
from .features import FeatureSequence, MelConfig, mel_spectrogram_batch
from .layers import (
    apply_layer,
    make_batch_norm,
    make_conv1d,
    make_layer_norm,
    make_linear,
    make_sinc_conv,
    make_squeeze_excite,
)

VALID_FRONTENDS = ("mel", "sinc_raw", "precomputed_file")
VALID_ENCODERS = ("tdnn", "ecapa_lite", "identity")
VALID_POOLINGS = ("mean", "stats", "attentive_stats")
VALID_PROJECTOR_KINDS = ("linear", "batch_norm", "layer_norm", "relu")

VARIANCE_EPS = 1e-8


@dataclass
class ExtractorConfig:
    frontend: str = "mel"
    encoder: str = "ecapa_lite"
    pooling: str = "attentive_stats"
    projector: tuple = ("batch_norm", "linear")
    embed_dim: int = 128
    sample_rate: int = 16000
    # mel front-end
    n_mels: int = 80
    mel_window_ms: int = 25
    mel_hop_ms: int = 10
    mel_fft: int = 512
    mel_log_floor: float = 1e-10
    # sinc front-end
    sinc_filters: int = 40
    sinc_kernel: int = 251
    sinc_stride: int = 160
    # precomputed front-end
    feature_dim: int = 0
    # encoders
    channels: int = 128
    tdnn_layers: int = 3
    kernel: int = 3
    dilations: tuple = (2, 3, 4)
    se_bottleneck: int = 16
    # attentive pooling
    attention_hidden: int = 64

    def __post_init__(self):
        if isinstance(self.projector, str):
            self.projector = tuple(p.strip() for p in self.projector.split(",") if p.strip())
        self.projector = tuple(self.projector)
        self.dilations = tuple(self.dilations)
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")
        for name, valid, value in (
            ("frontend", VALID_FRONTENDS, self.frontend),
            ("encoder", VALID_ENCODERS, self.encoder),
            ("pooling", VALID_POOLINGS, self.pooling),
        ):
            if value not in valid:
                raise ConfigError(f"unknown {name} {value!r}; valid options: {', '.join(valid)}")
        for p in self.projector:
            kind = p.split(":")[0]
            if kind not in VALID_PROJECTOR_KINDS:
                raise ConfigError(
                    f"unknown projector layer {p!r}; valid kinds: {', '.join(VALID_PROJECTOR_KINDS)}"
                )
        if self.frontend == "precomputed_file" and self.feature_dim < 1:
            raise ConfigError("precomputed_file frontend requires feature_dim >= 1")
        if self.attention_hidden < 1:
            raise ConfigError(f"attention_hidden must be >= 1, got {self.attention_hidden}")

    def mel_config(self):
        return MelConfig(self.n_mels, self.mel_window_ms, self.mel_hop_ms, self.mel_fft, self.mel_log_floor)


def pool_frames(kind, frames, attn=None, eps=VARIANCE_EPS):
    """Aggregate (B, C, T) frame features into (B, P) vectors.

    mean -> P = C; stats and attentive_stats -> P = 2C where the second half
    is the (weighted) standard deviation.  Variance is clamped at eps before
    the square root, so constant frames give sigma = sqrt(eps).
    """
    if not isinstance(frames, Tensor):
        frames = Tensor(frames)
    if frames.ndim != 3:
        raise FeatureError(f"pooling expects (B, C, T) frames, got shape {frames.shape}")
    bsz, c, t = frames.shape
    if t < 1:
        raise FeatureError("cannot pool an empty frame sequence")
    if kind == "mean":
        return frames.mean(axis=2)
    if kind == "stats":
        mu = frames.mean(axis=2)
        e2 = (frames * frames).mean(axis=2)
        var = ad.maximum(e2 - mu * mu, Tensor(eps))
        return ad.concat([mu, var.sqrt()], axis=1)
    if kind == "attentive_stats":
        if attn is None:
            raise ConfigError("attentive_stats pooling requires attention parameters")
        w, b, v = attn["W"], attn["b"], attn["v"]
        flat = frames.transpose(0, 2, 1).reshape(bsz * t, c)
        scores = ((flat @ w.transpose(1, 0) + b.reshape(1, -1)).tanh() @ v.reshape(-1, 1)).reshape(bsz, t)
        alpha = ad.softmax(scores, axis=1).reshape(bsz, 1, t)
        mu = (frames * alpha).sum(axis=2)
        e2 = (frames * frames * alpha).sum(axis=2)
        var = ad.maximum(e2 - mu * mu, Tensor(eps))
        return ad.concat([mu, var.sqrt()], axis=1)
    raise ConfigError(f"unknown pooling {kind!r}; valid options: {', '.join(VALID_POOLINGS)}")


class Extractor:
    """A built model: apply with ``embed_batch`` (training) or ``extract``
    (single input, eval mode).  Parameters live in a flat named dict."""

    def __init__(self, cfg, seed):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self._params = {}
        self._layers = {}

        # front-end
        if cfg.frontend == "mel":
            self.frontend_dim = cfg.n_mels
        elif cfg.frontend == "sinc_raw":
            sinc = make_sinc_conv(cfg.sinc_filters, cfg.sinc_kernel, cfg.sinc_stride, cfg.sample_rate)
            self._register("frontend.sinc", sinc)
            self.frontend_dim = cfg.sinc_filters
        else:
            self.frontend_dim = cfg.feature_dim

        # encoder
        if cfg.encoder == "identity":
            self.encoder_dim = self.frontend_dim
        elif cfg.encoder == "tdnn":
            in_dim = self.frontend_dim
            for i in range(cfg.tdnn_layers):
                dil = cfg.dilations[i % len(cfg.dilations)]
                self._register(f"encoder.l{i}.conv", make_conv1d(rng, in_dim, cfg.channels, cfg.kernel, dilation=dil))
                self._register(f"encoder.l{i}.bn", make_batch_norm(cfg.channels))
                in_dim = cfg.channels
            self.encoder_dim = cfg.channels
        else:  # ecapa_lite
            ch = cfg.channels
            self._register("encoder.conv0", make_conv1d(rng, self.frontend_dim, ch, 5))
            self._register("encoder.bn0", make_batch_norm(ch))
            for i, dil in enumerate(cfg.dilations):
                self._register(f"encoder.block{i}.conv", make_conv1d(rng, ch, ch, cfg.kernel, dilation=dil))
                self._register(f"encoder.block{i}.bn", make_batch_norm(ch))
                self._register(f"encoder.block{i}.se", make_squeeze_excite(rng, ch, cfg.se_bottleneck))
            self._register("encoder.cat", make_conv1d(rng, ch * len(cfg.dilations), ch, 1))
            self._register("encoder.catbn", make_batch_norm(ch))
            self.encoder_dim = ch

        # pooling
        self.pooled_dim = self.encoder_dim if cfg.pooling == "mean" else 2 * self.encoder_dim
        if cfg.pooling == "attentive_stats":
            hid = cfg.attention_hidden
            self._params["pool.W"] = Tensor(
                rng.uniform(-1, 1, (hid, self.encoder_dim)) * np.sqrt(6.0 / self.encoder_dim), requires_grad=True
            )
            self._params["pool.b"] = Tensor(np.zeros(hid), requires_grad=True)
            self._params["pool.v"] = Tensor(rng.uniform(-1, 1, hid) * np.sqrt(6.0 / hid), requires_grad=True)

        # projector
        dim = self.pooled_dim
        self._proj_names = []
        for i, spec in enumerate(cfg.projector):
            kind, _, arg = spec.partition(":")
            name = f"proj.{i}"
            if kind == "linear":
                out = int(arg) if arg else cfg.embed_dim
                self._register(name, make_linear(rng, dim, out))
                dim = out
            elif kind == "batch_norm":
                self._register(name, make_batch_norm(dim))
            elif kind == "layer_norm":
                self._register(name, make_layer_norm(dim))
            elif kind == "relu":
                self._layers[name] = None  # parameter-free
            self._proj_names.append((name, kind))
        if dim != cfg.embed_dim:
            raise ConfigError(f"projector chain ends at dim {dim}, embed_dim is {cfg.embed_dim}")

    # -- parameter plumbing ---------------------------------------------------

    def _register(self, prefix, layer):
        self._layers[prefix] = layer
        for pname, p in layer.params.items():
            self._params[f"{prefix}.{pname}"] = p

    def named_parameters(self):
        return dict(self._params)

    def named_buffers(self):
        out = {}
        for prefix, layer in self._layers.items():
            if layer is None:
                continue
            for bname, b in layer.buffers.items():
                out[f"{prefix}.{bname}"] = b
        return out

    def param_count(self):
        return sum(p.data.size for p in self._params.values())

    def state(self):
        """Flat name -> array snapshot (parameters + buffers), copied."""
        st = {f"param.{k}": v.data.copy() for k, v in self._params.items()}
        st.update({f"buffer.{k}": v.copy() for k, v in self.named_buffers().items()})
        return st

    def load_state(self, st):
        params = {k[6:]: v for k, v in st.items() if k.startswith("param.")}
        buffers = {k[7:]: v for k, v in st.items() if k.startswith("buffer.")}
        if set(params) != set(self._params):
            missing = set(self._params) ^ set(params)
            raise ConfigError(f"checkpoint parameter names do not match model: {sorted(missing)[:5]}")
        for k, v in params.items():
            if v.shape != self._params[k].data.shape:
                raise ConfigError(f"checkpoint shape mismatch for {k}: {v.shape} vs {self._params[k].data.shape}")
            self._params[k].data = v.copy()
        own = self.named_buffers()
        if set(buffers) != set(own):
            raise ConfigError("checkpoint buffer names do not match model")
        for prefix, layer in self._layers.items():
            if layer is None:
                continue
            for bname in list(layer.buffers):
                layer.buffers[bname] = buffers[f"{prefix}.{bname}"].copy()

    # -- forward passes (batched) ---------------------------------------------

    def frontend_batch(self, inputs, mode="eval"):
        """Raw samples (B, N) for mel/sinc_raw, features (B, T, D) for
        precomputed_file -> channel-major Tensor (B, D, T)."""
        cfg = self.cfg
        if cfg.frontend == "mel":
            samples = np.asarray(inputs, dtype=np.float64)
            if samples.ndim != 2:
                raise FeatureError(f"mel frontend expects (B, N) samples, got shape {samples.shape}")
            feats = mel_spectrogram_batch(samples, cfg.sample_rate, cfg.mel_config())
            return Tensor(feats.transpose(0, 2, 1))
        if cfg.frontend == "sinc_raw":
            x = inputs if isinstance(inputs, Tensor) else Tensor(np.asarray(inputs, dtype=np.float64))
            if x.ndim != 2:
                raise FeatureError(f"sinc_raw frontend expects (B, N) samples, got shape {x.shape}")
            bsz, n = x.shape
            y = apply_layer(self._layers["frontend.sinc"], x.reshape(bsz, 1, n), mode)
            # log-energy compression, then per-utterance per-filter standardization
            y = (y * y + Tensor(1e-10)).log()
            mu = y.mean(axis=2, keepdims=True)
            var = ((y - mu) ** 2).mean(axis=2, keepdims=True)
            return (y - mu) / ((var + Tensor(1e-5)).sqrt())
        feats = np.asarray(inputs, dtype=np.float64)
        if feats.ndim != 3 or feats.shape[2] != cfg.feature_dim:
            raise FeatureError(
                f"precomputed frontend expects (B, T, {cfg.feature_dim}) features, got shape {feats.shape}"
            )
        return Tensor(feats.transpose(0, 2, 1))

    def encoder_batch(self, x, mode="eval"):
        cfg = self.cfg
        if x.shape[1] != self.frontend_dim:
            raise FeatureError(f"encoder expects {self.frontend_dim} input channels, got shape {x.shape}")
        if cfg.encoder == "identity":
            return x
        if cfg.encoder == "tdnn":
            for i in range(cfg.tdnn_layers):
                x = apply_layer(self._layers[f"encoder.l{i}.conv"], x, mode).relu()
                x = apply_layer(self._layers[f"encoder.l{i}.bn"], x, mode)
            return x
        h = apply_layer(self._layers["encoder.conv0"], x, mode).relu()
        h = apply_layer(self._layers["encoder.bn0"], h, mode)
        taps = []
        for i in range(len(cfg.dilations)):
            r = apply_layer(self._layers[f"encoder.block{i}.conv"], h, mode).relu()
            r = apply_layer(self._layers[f"encoder.block{i}.bn"], r, mode)
            r = apply_layer(self._layers[f"encoder.block{i}.se"], r, mode)
            h = h + r  # residual keeps gradients alive through the stack
            taps.append(h)
        y = apply_layer(self._layers["encoder.cat"], ad.concat(taps, axis=1), mode).relu()
        return apply_layer(self._layers["encoder.catbn"], y, mode)

    def pool_batch(self, x, mode="eval"):
        attn = None
        if self.cfg.pooling == "attentive_stats":
            attn = {"W": self._params["pool.W"], "b": self._params["pool.b"], "v": self._params["pool.v"]}
        return pool_frames(self.cfg.pooling, x, attn)

    def project_batch(self, x, mode="eval"):
        for name, kind in self._proj_names:
            if kind == "relu":
                x = x.relu()
            else:
                x = apply_layer(self._layers[name], x, mode)
        return x

    def embed_batch(self, inputs, mode="eval"):
        x = self.frontend_batch(inputs, mode)
        x = self.encoder_batch(x, mode)
        x = self.pool_batch(x, mode)
        return self.project_batch(x, mode)

    def embed_features_batch(self, feats, mode="eval"):
        """(B, T, D) front-end frames -> embeddings, skipping the front-end.

        Only meaningful for feature front-ends (mel / precomputed_file);
        lets the trainer cache per-utterance features and crop in the frame
        domain instead of recomputing spectrograms every step.
        """
        if self.cfg.frontend == "sinc_raw":
            raise FeatureError("sinc_raw learns its front-end; feed raw samples via embed_batch")
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 3 or feats.shape[2] != self.frontend_dim:
            raise FeatureError(f"expected (B, T, {self.frontend_dim}) frames, got shape {feats.shape}")
        x = Tensor(feats.transpose(0, 2, 1))
        x = self.encoder_batch(x, mode)
        x = self.pool_batch(x, mode)
        return self.project_batch(x, mode)

    # -- single-input views ---------------------------------------------------

    def _frame_rate(self):
        cfg = self.cfg
        if cfg.frontend == "mel":
            return cfg.sample_rate / cfg.mel_config().hop_samples(cfg.sample_rate)
        if cfg.frontend == "sinc_raw":
            return cfg.sample_rate / cfg.sinc_stride
        return 0.0  # taken from the file instead

    def frontend_forward(self, inp):
        """One input -> FeatureSequence (frames time-major)."""
        if isinstance(inp, FeatureSequence):
            if self.cfg.frontend != "precomputed_file":
                raise FeatureError(f"{self.cfg.frontend} frontend expects raw audio, got a FeatureSequence")
            out = self.frontend_batch(inp.frames[None, :, :])
            return FeatureSequence(out.data[0].T, inp.frame_rate)
        if self.cfg.frontend == "precomputed_file":
            raise FeatureError("precomputed_file frontend expects a FeatureSequence or SPKF file")
        out = self.frontend_batch(np.asarray(inp.samples)[None, :])
        return FeatureSequence(out.data[0].T, self._frame_rate())

    def encoder_forward(self, fs):
        out = self.encoder_batch(Tensor(fs.frames.T[None]), "eval")
        return FeatureSequence(out.data[0].T, fs.frame_rate)

    def pool(self, fs):
        return self.pool_batch(Tensor(fs.frames.T[None]), "eval").data[0]

    def project(self, vec):
        return self.project_batch(Tensor(np.asarray(vec)[None, :]), "eval").data[0]

    def extract(self, inp):
        """Input (Waveform or FeatureSequence) -> (embed_dim,) vector, eval
        mode; deterministic for a fixed model state."""
        if isinstance(inp, FeatureSequence):
            emb = self.embed_batch(inp.frames[None, :, :], "eval")
        else:
            emb = self.embed_batch(np.asarray(inp.samples)[None, :], "eval")
        return emb.data[0].copy()


def build_extractor(cfg, seed):
    """Construct an Extractor with seed-deterministic initialization."""
    return Extractor(cfg, seed)
