"""Neural-net layer kinds built on the autodiff engine.

A layer is data, not a class hierarchy: ``LayerSpec`` carries the kind tag,
trainable parameters (Tensors), non-trainable buffers (plain arrays, e.g.
batch-norm running statistics), and kind-specific hyperparameters.
``apply_layer`` dispatches on the kind.  Construction helpers initialize
parameters deterministically from a numpy Generator.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import GraphError

LAYER_KINDS = (
    "linear",
    "conv1d",
    "batch_norm",
    "layer_norm",
    "relu",
    "sigmoid",
    "softmax",
    "sinc_conv",
    "squeeze_excite",
)


class LayerSpec:
    """One layer: kind tag + parameters + buffers + hyperparameters."""

    __slots__ = ("kind", "params", "buffers", "hyper")

    def __init__(self, kind, params=None, buffers=None, hyper=None):
        if kind not in LAYER_KINDS:
            raise GraphError(f"unknown layer kind {kind!r}; valid kinds: {', '.join(LAYER_KINDS)}")
        self.kind = kind
        self.params = params or {}
        self.buffers = buffers or {}
        self.hyper = hyper or {}

    def __repr__(self):
        return f"LayerSpec({self.kind!r})"


def _uniform_fan_in(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def make_linear(rng, in_dim, out_dim, bias=True):
    params = {"weight": Tensor(_uniform_fan_in(rng, (out_dim, in_dim), in_dim), requires_grad=True)}
    if bias:
        params["bias"] = Tensor(np.zeros(out_dim), requires_grad=True)
    return LayerSpec("linear", params, hyper={"in_dim": in_dim, "out_dim": out_dim})


def make_conv1d(rng, in_channels, out_channels, kernel, stride=1, dilation=1, groups=1, padding="same", bias=True):
    if in_channels % groups or out_channels % groups:
        raise GraphError(f"channels ({in_channels}->{out_channels}) not divisible by groups={groups}")
    if padding == "same":
        span_minus_1 = (kernel - 1) * dilation
        if span_minus_1 % 2:
            raise GraphError("same-padding needs odd effective span; use an odd kernel")
        if stride != 1:
            raise GraphError("same-padding requires stride 1")
        padding = span_minus_1 // 2
    fan_in = in_channels // groups * kernel
    params = {
        "weight": Tensor(_uniform_fan_in(rng, (out_channels, in_channels // groups, kernel), fan_in), requires_grad=True)
    }
    if bias:
        params["bias"] = Tensor(np.zeros(out_channels), requires_grad=True)
    hyper = {"stride": stride, "dilation": dilation, "groups": groups, "padding": padding}
    return LayerSpec("conv1d", params, hyper=hyper)


def make_batch_norm(dim, eps=1e-5, momentum=0.1):
    params = {
        "gamma": Tensor(np.ones(dim), requires_grad=True),
        "beta": Tensor(np.zeros(dim), requires_grad=True),
    }
    buffers = {"running_mean": np.zeros(dim), "running_var": np.ones(dim)}
    return LayerSpec("batch_norm", params, buffers, {"eps": eps, "momentum": momentum})


def make_layer_norm(dim, eps=1e-5):
    params = {
        "gamma": Tensor(np.ones(dim), requires_grad=True),
        "beta": Tensor(np.zeros(dim), requires_grad=True),
    }
    return LayerSpec("layer_norm", params, hyper={"eps": eps})


def make_relu():
    return LayerSpec("relu")


def make_sigmoid():
    return LayerSpec("sigmoid")


def make_softmax(axis=-1):
    return LayerSpec("softmax", hyper={"axis": axis})


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def make_sinc_conv(n_filters, kernel, stride, sample_rate=16000, min_low_hz=100.0, min_band_hz=100.0):
    """Learnable band-pass filterbank over raw audio.

    Each filter is parameterized by (low_hz, band_hz); cutoffs at apply time
    are low = min_low_hz + |low_hz| and high = low + min_band_hz + |band_hz|,
    clamped below Nyquist.  Initialization places the band edges on the mel
    scale between min_low_hz and 0.9 * Nyquist.
    """
    if kernel % 2 == 0:
        raise GraphError("sinc_conv kernel must be odd")
    nyquist = sample_rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(min_low_hz), hz_to_mel(0.9 * nyquist), n_filters + 1))
    # keep both init vectors >= 1 Hz so the |.| reparameterization is smooth
    # at the starting point (gradient checks run at init)
    low_init = np.maximum(edges[:-1] - min_low_hz, 1.0)
    band_init = np.maximum(np.diff(edges) - min_band_hz, 1.0)
    params = {
        "low_hz": Tensor(low_init, requires_grad=True),
        "band_hz": Tensor(band_init, requires_grad=True),
    }
    hyper = {
        "kernel": kernel,
        "stride": stride,
        "sample_rate": sample_rate,
        "min_low_hz": min_low_hz,
        "min_band_hz": min_band_hz,
    }
    return LayerSpec("sinc_conv", params, hyper=hyper)


def make_squeeze_excite(rng, channels, bottleneck):
    params = {
        "w1": Tensor(_uniform_fan_in(rng, (bottleneck, channels), channels), requires_grad=True),
        "b1": Tensor(np.zeros(bottleneck), requires_grad=True),
        "w2": Tensor(_uniform_fan_in(rng, (channels, bottleneck), bottleneck), requires_grad=True),
        "b2": Tensor(np.zeros(channels), requires_grad=True),
    }
    return LayerSpec("squeeze_excite", params, hyper={"channels": channels, "bottleneck": bottleneck})


def sinc_filters(layer):
    """Materialize the (n_filters, kernel) band-pass kernels as a Tensor.

    Differentiable in low_hz/band_hz; the n=0 tap is handled by a constant
    mask so no division by zero enters the graph.
    """
    h = layer.hyper
    k, sr = h["kernel"], h["sample_rate"]
    nyquist = sr / 2.0
    low = Tensor(h["min_low_hz"]) + layer.params["low_hz"].abs()
    high = ad.minimum(low + Tensor(h["min_band_hz"]) + layer.params["band_hz"].abs(), Tensor(0.99 * nyquist))
    n = np.arange(k, dtype=np.float64) - (k - 1) / 2.0
    center = (n == 0).astype(np.float64)
    n_safe = np.where(n == 0, 1.0, n)
    f1 = low.reshape(-1, 1)
    f2 = high.reshape(-1, 1)
    two_pi = 2.0 * np.pi
    wave = (f2 * Tensor(two_pi * n / sr)).sin() - (f1 * Tensor(two_pi * n / sr)).sin()
    body = wave * Tensor((1.0 - center) / (np.pi * n_safe))
    peak = (f2 - f1) * Tensor(2.0 * center / sr)
    window = np.hamming(k)
    return (body + peak) * Tensor(window)


def _check_params(layer):
    for name, p in layer.params.items():
        if not np.isfinite(p.data).all():
            raise GraphError(f"{layer.kind} parameter {name!r} contains non-finite values")


def _norm_axes(x):
    if x.ndim == 2:
        return (0,), x.shape[0]
    if x.ndim == 3:
        return (0, 2), x.shape[0] * x.shape[2]
    raise GraphError(f"batch_norm expects 2-D or 3-D input, got shape {x.shape}")


def _bn_reshape(vec, ndim):
    # broadcast a per-channel vector against (B, C) or (B, C, T)
    return vec.reshape(1, -1) if ndim == 2 else vec.reshape(1, -1, 1)


def apply_layer(layer, x, mode="eval"):
    """Forward one layer.  ``mode`` selects batch vs running statistics for
    batch_norm; every other kind ignores it."""
    if mode not in ("train", "eval"):
        raise GraphError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not isinstance(x, Tensor):
        x = Tensor(x)
    _check_params(layer)
    kind = layer.kind

    if kind == "relu":
        return x.relu()
    if kind == "sigmoid":
        return x.sigmoid()
    if kind == "softmax":
        return ad.softmax(x, axis=layer.hyper.get("axis", -1))

    if kind == "linear":
        w = layer.params["weight"]
        if x.ndim != 2 or x.shape[1] != w.shape[1]:
            raise GraphError(f"linear expects (B, {w.shape[1]}) input, got shape {x.shape}")
        out = x @ w.transpose(1, 0)
        if "bias" in layer.params:
            out = out + layer.params["bias"].reshape(1, -1)
        return out

    if kind == "conv1d":
        h = layer.hyper
        return ad.conv1d(
            x,
            layer.params["weight"],
            layer.params.get("bias"),
            stride=h["stride"],
            dilation=h["dilation"],
            padding=h["padding"],
            groups=h["groups"],
        )

    if kind == "batch_norm":
        gamma, beta = layer.params["gamma"], layer.params["beta"]
        axes, n = _norm_axes(x)
        if x.shape[1] != gamma.shape[0]:
            raise GraphError(f"batch_norm over {gamma.shape[0]} channels, got shape {x.shape}")
        eps = layer.hyper["eps"]
        if mode == "train":
            out, batch_mu, batch_var = ad.batch_norm_train(x, gamma, beta, axes, eps)
            m = layer.hyper["momentum"]
            rm, rv = layer.buffers["running_mean"], layer.buffers["running_var"]
            layer.buffers["running_mean"] = (1 - m) * rm + m * batch_mu
            layer.buffers["running_var"] = (1 - m) * rv + m * batch_var * (n / max(n - 1, 1))
            return out
        else:
            mu = Tensor(_bn_reshape(layer.buffers["running_mean"], x.ndim))
            sd = Tensor(_bn_reshape(np.sqrt(layer.buffers["running_var"] + eps), x.ndim))
            xhat = (x - mu) / sd
        return xhat * _bn_reshape_t(gamma, x.ndim) + _bn_reshape_t(beta, x.ndim)

    if kind == "layer_norm":
        gamma, beta = layer.params["gamma"], layer.params["beta"]
        if x.shape[-1] != gamma.shape[0]:
            raise GraphError(f"layer_norm over last dim {gamma.shape[0]}, got shape {x.shape}")
        eps = layer.hyper["eps"]
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        xhat = (x - mu) / ((var + Tensor(eps)).sqrt())
        return xhat * gamma + beta

    if kind == "sinc_conv":
        if x.ndim != 3 or x.shape[1] != 1:
            raise GraphError(f"sinc_conv expects (B, 1, T) raw audio, got shape {x.shape}")
        filt = sinc_filters(layer)
        weight = filt.reshape(filt.shape[0], 1, filt.shape[1])
        return ad.conv1d(x, weight, stride=layer.hyper["stride"])

    if kind == "squeeze_excite":
        if x.ndim != 3:
            raise GraphError(f"squeeze_excite expects (B, C, T) input, got shape {x.shape}")
        w1, b1 = layer.params["w1"], layer.params["b1"]
        w2, b2 = layer.params["w2"], layer.params["b2"]
        if x.shape[1] != w1.shape[1]:
            raise GraphError(f"squeeze_excite over {w1.shape[1]} channels, got shape {x.shape}")
        z = x.mean(axis=2)
        hdn = (z @ w1.transpose(1, 0) + b1.reshape(1, -1)).relu()
        s = (hdn @ w2.transpose(1, 0) + b2.reshape(1, -1)).sigmoid()
        return x * s.reshape(s.shape[0], s.shape[1], 1)

    raise GraphError(f"unknown layer kind {kind!r}")


def _bn_reshape_t(vec, ndim):
    return vec.reshape(1, -1) if ndim == 2 else vec.reshape(1, -1, 1)


def layer_parameters(layer, prefix):
    """Flat {qualified_name: Tensor} view of one layer's trainable params."""
    return {f"{prefix}.{name}": p for name, p in layer.params.items()}


def layer_buffers(layer, prefix):
    return {f"{prefix}.{name}": b for name, b in layer.buffers.items()}
