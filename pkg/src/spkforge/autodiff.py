"""Reverse-mode automatic differentiation over numpy arrays.

Tensors hold float64 data and record the operations that produced them;
calling ``backward()`` on a scalar result accumulates gradients into every
reachable tensor created with ``requires_grad=True``.  Double precision is
used throughout so that analytic gradients can be validated against central
differences to tight tolerances.
"""

from __future__ import annotations

import numpy as np

from .errors import GraphError

__all__ = [
    "Tensor",
    "concat",
    "maximum",
    "minimum",
    "conv1d",
    "softmax",
    "log_softmax",
    "grad_check",
    "collect_gradients",
]


def _as_array(data):
    arr = np.asarray(data, dtype=np.float64)
    return arr


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` to undo numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph.

    ``data`` is always a float64 ndarray; ``grad`` is filled by backward().
    Tensors are treated as immutable once created (trainers mutate ``data``
    in place only between steps, never inside a recorded graph).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _op(data, parents, backward_fn):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def detach(self):
        return Tensor(self.data)

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data + other.data

        def backward(g, out):
            return (_unbroadcast(g, self.data.shape), _unbroadcast(g, other.data.shape))

        return Tensor._op(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._op(-self.data, (self,), lambda g, out: (-g,))

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data - other.data

        def backward(g, out):
            return (_unbroadcast(g, self.data.shape), _unbroadcast(-g, other.data.shape))

        return Tensor._op(out_data, (self, other), backward)

    def __rsub__(self, other):
        return Tensor(other) - self

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data * other.data

        def backward(g, out):
            return (
                _unbroadcast(g * other.data, self.data.shape),
                _unbroadcast(g * self.data, other.data.shape),
            )

        return Tensor._op(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data / other.data

        def backward(g, out):
            return (
                _unbroadcast(g / other.data, self.data.shape),
                _unbroadcast(-g * self.data / (other.data * other.data), other.data.shape),
            )

        return Tensor._op(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise GraphError("only scalar exponents are supported")
        out_data = self.data ** exponent

        def backward(g, out):
            return (g * exponent * self.data ** (exponent - 1),)

        return Tensor._op(out_data, (self,), backward)

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise GraphError("matmul expects 2-D operands")
        out_data = self.data @ other.data

        def backward(g, out):
            return (g @ other.data.T, self.data.T @ g)

        return Tensor._op(out_data, (self, other), backward)

    def __getitem__(self, key):
        out_data = self.data[key]

        def backward(g, out):
            gx = np.zeros_like(self.data)
            gx[key] = g
            return (gx,)

        return Tensor._op(np.array(out_data), (self,), backward)

    # -- elementwise functions ------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g, out):
            return (g * out.data,)

        return Tensor._op(out_data, (self,), backward)

    def log(self):
        out_data = np.log(self.data)

        def backward(g, out):
            return (g / self.data,)

        return Tensor._op(out_data, (self,), backward)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def backward(g, out):
            return (g * 0.5 / out.data,)

        return Tensor._op(out_data, (self,), backward)

    def sin(self):
        out_data = np.sin(self.data)

        def backward(g, out):
            return (g * np.cos(self.data),)

        return Tensor._op(out_data, (self,), backward)

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g, out):
            return (g * (1.0 - out.data * out.data),)

        return Tensor._op(out_data, (self,), backward)

    def sigmoid(self):
        # two-sided form: never exponentiates a positive argument
        x = self.data
        e = np.exp(-np.abs(x))
        out_data = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

        def backward(g, out):
            return (g * out.data * (1.0 - out.data),)

        return Tensor._op(out_data, (self,), backward)

    def relu(self):
        out_data = np.maximum(self.data, 0.0)

        def backward(g, out):
            return (g * (self.data > 0.0),)

        return Tensor._op(out_data, (self,), backward)

    def abs(self):
        out_data = np.abs(self.data)

        def backward(g, out):
            return (g * np.sign(self.data),)

        return Tensor._op(out_data, (self,), backward)

    # -- reductions and shape ops ---------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g, out):
            if axis is None:
                return (np.broadcast_to(g, self.data.shape).copy(),)
            g2 = g
            if not keepdims:
                g2 = np.expand_dims(g, axis)
            return (np.broadcast_to(g2, self.data.shape).copy(),)

        return Tensor._op(out_data, (self,), backward)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        elif isinstance(axis, tuple):
            n = int(np.prod([self.data.shape[a] for a in axis]))
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis, keepdims=False):
        """Maximum along one axis; gradient flows to the first argmax."""
        out_data = self.data.max(axis=axis, keepdims=keepdims)

        def backward(g, out):
            expanded = out.data if keepdims else np.expand_dims(out.data, axis)
            mask = self.data == expanded
            # ties: route everything to the first maximal entry along axis
            first = np.cumsum(mask, axis=axis) == 1
            mask = mask & first
            g2 = g if keepdims else np.expand_dims(g, axis)
            return (mask * g2,)

        return Tensor._op(out_data, (self,), backward)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)

        def backward(g, out):
            return (g.reshape(self.data.shape),)

        return Tensor._op(out_data, (self,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        out_data = self.data.transpose(axes)
        inverse = tuple(np.argsort(axes))

        def backward(g, out):
            return (g.transpose(inverse),)

        return Tensor._op(out_data, (self,), backward)

    # -- backward pass --------------------------------------------------------

    def backward(self):
        if self.data.ndim != 0 and self.data.size != 1:
            raise GraphError(f"backward requires a scalar output, got shape {self.data.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is None:
                continue
            grads = node._backward_fn(node.grad, node)
            for parent, g in zip(node._parents, grads):
                if not parent.requires_grad or g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
                else:
                    parent.grad = parent.grad + g


# -- module-level graph ops ---------------------------------------------------


def concat(tensors, axis=0):
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g, out):
        grads = []
        for i, t in enumerate(tensors):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return Tensor._op(out_data, tuple(tensors), backward)


def maximum(a, b):
    """Elementwise max; on ties the gradient goes to the first argument."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    out_data = np.maximum(a.data, b.data)

    def backward(g, out):
        take_a = a.data >= b.data
        return (
            _unbroadcast(g * take_a, a.data.shape),
            _unbroadcast(g * ~take_a, b.data.shape),
        )

    return Tensor._op(out_data, (a, b), backward)


def minimum(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    out_data = np.minimum(a.data, b.data)

    def backward(g, out):
        take_a = a.data <= b.data
        return (
            _unbroadcast(g * take_a, a.data.shape),
            _unbroadcast(g * ~take_a, b.data.shape),
        )

    return Tensor._op(out_data, (a, b), backward)


def _conv_windows(xp, kernel, dilation, stride):
    bsz, cin, tp = xp.shape
    span = (kernel - 1) * dilation + 1
    t_out = (tp - span) // stride + 1
    sb, sc, st = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (bsz, cin, kernel, t_out), (sb, sc, st * dilation, st * stride)
    )


def conv1d(x, weight, bias=None, stride=1, dilation=1, padding=0, groups=1):
    """1-D cross-correlation over (batch, channels, time) input.

    ``weight`` has shape (out_channels, in_channels // groups, kernel).
    Output time length is (T + 2*padding - span) // stride + 1 with
    span = (kernel - 1) * dilation + 1.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    weight = weight if isinstance(weight, Tensor) else Tensor(weight)
    if x.data.ndim != 3:
        raise GraphError(f"conv1d expects (B, C, T) input, got shape {x.data.shape}")
    bsz, cin, t_in = x.data.shape
    cout, cin_g, kernel = weight.data.shape
    if cin_g * groups != cin or cout % groups != 0:
        raise GraphError(
            f"conv1d channel mismatch: input {cin} channels, weight {weight.data.shape}, groups {groups}"
        )
    span = (kernel - 1) * dilation + 1
    if t_in + 2 * padding < span:
        raise GraphError(f"conv1d input too short: T={t_in}, span={span}, padding={padding}")

    if padding > 0:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    else:
        xp = x.data
    t_pad = xp.shape[2]
    t_out = (t_pad - span) // stride + 1
    cout_g = cout // groups

    cols = []  # per group: (cin_g * kernel, bsz * t_out)
    outs = np.empty((bsz, cout, t_out))
    for g in range(groups):
        win = _conv_windows(np.ascontiguousarray(xp[:, g * cin_g : (g + 1) * cin_g]), kernel, dilation, stride)
        col = win.transpose(1, 2, 0, 3).reshape(cin_g * kernel, bsz * t_out)
        w2 = weight.data[g * cout_g : (g + 1) * cout_g].reshape(cout_g, cin_g * kernel)
        outs[:, g * cout_g : (g + 1) * cout_g] = (
            (w2 @ col).reshape(cout_g, bsz, t_out).transpose(1, 0, 2)
        )
        cols.append(col)
    if bias is not None:
        bias = bias if isinstance(bias, Tensor) else Tensor(bias)
        outs += bias.data[None, :, None]
        parents = (x, weight, bias)
    else:
        parents = (x, weight)

    def backward(grad_out, out):
        grad_w = np.empty_like(weight.data)
        grad_x = np.zeros((bsz, cin, t_pad)) if x.requires_grad else None
        for g in range(groups):
            go = grad_out[:, g * cout_g : (g + 1) * cout_g]  # (B, cout_g, t_out)
            go2 = go.transpose(1, 0, 2).reshape(cout_g, bsz * t_out)
            grad_w[g * cout_g : (g + 1) * cout_g] = (go2 @ cols[g].T).reshape(cout_g, cin_g, kernel)
            if grad_x is not None:
                w2 = weight.data[g * cout_g : (g + 1) * cout_g].reshape(cout_g, cin_g * kernel)
                tmp = (w2.T @ go2).reshape(cin_g, kernel, bsz, t_out).transpose(2, 0, 1, 3)
                sl = grad_x[:, g * cin_g : (g + 1) * cin_g]
                for k in range(kernel):
                    start = k * dilation
                    stop = start + stride * t_out
                    sl[:, :, start:stop:stride] += tmp[:, :, k, :]
        if grad_x is not None and padding > 0:
            grad_x = grad_x[:, :, padding : t_pad - padding]
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(grad_out.sum(axis=(0, 2)))
        return tuple(grads)

    return Tensor._op(outs, parents, backward)


def batch_norm_train(x, gamma, beta, axes, eps):
    """Fused batch normalization with batch statistics (training mode).

    Normalizes over ``axes`` (per remaining channel axis 1), then applies the
    gamma/beta affine.  Returns (out, batch_mean, batch_var) where the
    statistics are plain arrays (biased variance) for running-stat updates.
    One fused backward replaces the ~9-op composed chain; the composed form
    stays available through the layer eval path and the test oracles.
    """
    gshape = (1, -1) if x.data.ndim == 2 else (1, -1, 1)
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gamma.data.reshape(gshape) + beta.data.reshape(gshape)

    def backward(g, out):
        dxhat = g * gamma.data.reshape(gshape)
        mean_dxhat = dxhat.mean(axis=axes, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes, keepdims=True)
        gx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
        return (gx, (g * xhat).sum(axis=axes), g.sum(axis=axes))

    return Tensor._op(out_data, (x, gamma, beta), backward), mu.reshape(-1), var.reshape(-1)


def softmax(x, axis=-1):
    """Numerically stable softmax; rows are strictly positive and sum to 1."""
    shift = x - Tensor(x.data.max(axis=axis, keepdims=True))
    e = shift.exp()
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    shift = x - Tensor(x.data.max(axis=axis, keepdims=True))
    return shift - shift.exp().sum(axis=axis, keepdims=True).log()


# -- gradient utilities -------------------------------------------------------


def collect_gradients(named_params):
    """Return {name: grad} after backward(); a parameter whose gradient was
    never produced (detached from the graph) is an error."""
    grads = {}
    for name, p in named_params.items():
        if p.grad is None:
            raise GraphError(f"parameter {name!r} is detached from the graph (no gradient)")
        grads[name] = p.grad
    return grads


def grad_check(f, point, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps one Tensor to a scalar Tensor.  Error per coordinate is
    |analytic - numeric| / max(1, |analytic|); the maximum over coordinates
    is returned.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = Tensor(np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64), requires_grad=True)
    out = f(x)
    if out.data.ndim != 0 and out.data.size != 1:
        raise GraphError("grad_check requires a scalar-valued function")
    out.backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)

    base = x.data.copy()
    numeric = np.zeros_like(base)
    flat_base = base.reshape(-1)
    flat_num = numeric.reshape(-1)
    for i in range(flat_base.size):
        orig = flat_base[i]
        flat_base[i] = orig + eps
        fp = float(f(Tensor(base)).data)
        flat_base[i] = orig - eps
        fm = float(f(Tensor(base)).data)
        flat_base[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GraphError("function not finite at perturbed point")
        flat_num[i] = (fp - fm) / (2.0 * eps)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(rel.max()) if rel.size else 0.0
