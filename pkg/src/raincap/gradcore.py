"""A small reverse-mode automatic differentiation engine on numpy arrays.

Every op builds its output eagerly and records a closure that maps the
output gradient to gradients for its parents. Nodes carry a creation id, so
reverse creation order is a valid reverse topological order.
"""
import contextlib
import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


_ids = itertools.count()
_local = threading.local()


def _grad_enabled():
    return getattr(_local, "grad_enabled", True)


def default_dtype():
    return getattr(_local, "dtype", np.float32)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


@contextlib.contextmanager
def precision(dtype):
    """Set the dtype used for new parameters and constants in this thread."""
    prev = default_dtype()
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(default_dtype())
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._id = next(_ids)
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def __len__(self):
        return len(self.data)

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        backward(self)


def tensor(data, requires_grad=False):
    return Tensor(np.array(data, dtype=default_dtype()), requires_grad=requires_grad)


def _wrap(x, like=None):
    if isinstance(x, Tensor):
        return x
    dt = like.dtype if like is not None else default_dtype()
    return Tensor(np.asarray(x, dtype=dt))


def _make(data, parents, backward_fn, op):
    out = Tensor(data)
    out.op = op
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"operands not broadcastable: {a.shape} vs {b.shape}") from None


# ----------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _broadcast_shape(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _broadcast_shape(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _broadcast_shape(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _broadcast_shape(a, b)
    out = a.data / b.data

    def bw(g):
        gb = -g * out / b.data
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw, "div")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clamp_min(a, lo):
    """max(a, lo); the gradient at or below ``lo`` is zero."""
    mask = a.data > lo
    return _make(np.where(mask, a.data, a.data.dtype.type(lo)), (a,), lambda g: (g * mask,), "clamp_min")


# ----------------------------------------------------------------------------
# nonlinearities


def relu(a):
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a):
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _make(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


def log_softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), bw, "log_softmax")


# ----------------------------------------------------------------------------
# shape manipulation and reductions


def reshape(a, shape):
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, idx):
    """Basic (slice/int) indexing. Advanced indexing goes through :func:`take`."""
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _make(np.ascontiguousarray(out), (a,), bw, "getitem")


def take(a, indices):
    """Rows of ``a`` selected by an integer array (embedding lookup)."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= a.shape[0]):
        raise IndexError(f"row index out of range [0, {a.shape[0]})")

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, indices, g)
        return (full,)

    return _make(a.data[indices], (a,), bw, "take")


def sum_(a, axis=None, keepdims=False):
    src = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return sum_(a, axis, keepdims) * (1.0 / n)


def concat(parts, axis=0):
    parts = [_wrap(p) for p in parts]
    ref = parts[0].shape
    ax = axis % len(ref)
    for p in parts[1:]:
        if p.ndim != len(ref) or any(p.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat extents disagree off axis {axis}: {ref} vs {p.shape}")
    sizes = [p.shape[ax] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(np.concatenate([p.data for p in parts], axis=ax), parts, bw, "concat")


def stack(parts, axis=0):
    parts = [_wrap(p) for p in parts]
    return concat([reshape(p, p.shape[:axis] + (1,) + p.shape[axis:]) for p in parts], axis=axis)


# ----------------------------------------------------------------------------
# linear algebra and convolution


def matmul(a, b):
    """(..., k) @ (k, n) -> (..., n)."""
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


def conv2d(x, w, stride=1, pad=0):
    """Cross-correlation of NCHW input with an (Cout, Cin, kh, kw) kernel."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d operands, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input {c}, kernel {ci}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    hp, wp = h + 2 * pad, wd + 2 * pad
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = kernels.im2col(xp, kh, kw, stride)
    w2 = w.data.reshape(co, -1)
    out = (cols @ w2.T).reshape(n, oh, ow, co).transpose(0, 3, 1, 2)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, co)
        gw = (g2.T @ cols).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gxp = kernels.col2im(g2 @ w2, xp.shape, kh, kw, stride)
            gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        return gx, gw

    return _make(np.ascontiguousarray(out), (x, w), bw, "conv2d")


def adaptive_avg_pool(x, out_h, out_w):
    """Average over contiguous bins that exactly cover the NCHW input."""
    if out_h < 1 or out_w < 1:
        raise ShapeError("adaptive pool output extents must be >= 1")
    n, c, h, w = x.shape
    if out_h > h or out_w > w:
        raise ShapeError(f"cannot pool {h}x{w} up to {out_h}x{out_w}")
    rows = [(i * h // out_h, -(-(i + 1) * h // out_h)) for i in range(out_h)]
    cols = [(j * w // out_w, -(-(j + 1) * w // out_w)) for j in range(out_w)]
    if h % out_h == 0 and w % out_w == 0:
        fh, fw = h // out_h, w // out_w
        out = x.data.reshape(n, c, out_h, fh, out_w, fw).mean(axis=(3, 5))

        def bw(g):
            return (np.repeat(np.repeat(g, fh, axis=2), fw, axis=3) / (fh * fw),)

    else:
        out = np.empty((n, c, out_h, out_w), dtype=x.dtype)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                out[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))

        def bw(g):
            gx = np.zeros_like(x.data)
            for i, (r0, r1) in enumerate(rows):
                for j, (c0, c1) in enumerate(cols):
                    gx[:, :, r0:r1, c0:c1] += g[:, :, i : i + 1, j : j + 1] / ((r1 - r0) * (c1 - c0))
            return (gx,)

    return _make(out, (x,), bw, "adaptive_avg_pool")


def nearest_upsample(x, factor):
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bw(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _make(out, (x,), bw, "nearest_upsample")


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel normalisation of NCHW input.

    In training mode batch statistics are used and the running buffers are
    updated in place; otherwise the running buffers are used.
    """
    c = x.shape[1]
    shp = (1, c, 1, 1)
    axes = (0, 2, 3)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.data.size // c
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean, running_var
        m = None
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(shp).astype(x.dtype)) * inv.reshape(shp)
    out = xhat * gamma.data.reshape(shp) + beta.data.reshape(shp)

    def bw(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(shp)
        if training:
            gx = (inv.reshape(shp) / m) * (
                m * gxhat - gxhat.sum(axis=axes, keepdims=True) - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv.reshape(shp)
        return gx, gg, gb

    return _make(out, (x, gamma, beta), bw, "batch_norm")


# ----------------------------------------------------------------------------
# losses (mean reduction)


def _check_same(pred, target, name):
    if pred.shape != target.shape:
        raise ShapeError(f"{name}: shape mismatch {pred.shape} vs {target.shape}")


def mse_loss(pred, target):
    target = _wrap(target, pred)
    _check_same(pred, target, "mse_loss")
    d = pred.data - target.data
    n = d.size

    def bw(g):
        gd = g * (2.0 / n) * d
        return gd, -gd

    return _make(np.asarray((d * d).mean()), (pred, target), bw, "mse_loss")


def l1_loss(pred, target):
    target = _wrap(target, pred)
    _check_same(pred, target, "l1_loss")
    d = pred.data - target.data
    n = d.size

    def bw(g):
        gd = g * np.sign(d) / n
        return gd, -gd

    return _make(np.asarray(np.abs(d).mean()), (pred, target), bw, "l1_loss")


def cross_entropy(logits, targets, ignore_index=None):
    """Mean negative log-probability of ``targets`` under softmax(logits).

    ``logits`` is (N, V); rows whose target equals ``ignore_index`` are
    excluded from the mean.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    valid = np.ones(len(targets), bool) if ignore_index is None else targets != ignore_index
    count = max(int(valid.sum()), 1)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(len(targets))
    safe_t = np.where(valid, targets, 0)
    nll = -(logp[rows, safe_t] * valid).sum() / count

    def bw(g):
        p = np.exp(logp)
        p[rows, safe_t] -= 1.0
        p *= (valid / count)[:, None] * g
        return (p,)

    return _make(np.asarray(nll, dtype=logits.dtype), (logits,), bw, "cross_entropy")


# ----------------------------------------------------------------------------
# backward pass


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._id in nodes or not t.requires_grad:
            continue
        nodes[t._id] = t
        stack.extend(t._parents)
    grads = {loss._id: np.ones_like(loss.data)}
    for nid in sorted(nodes, reverse=True):
        t = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if t._backward is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if p._id in grads:
                grads[p._id] = grads[p._id] + pg
            else:
                grads[p._id] = pg


# ----------------------------------------------------------------------------
# optimisation


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class Adam:
    """Adam with bias correction."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = OptimizerState(
            lr=lr,
            beta1=betas[0],
            beta2=betas[1],
            eps=eps,
            m=[np.zeros_like(p.data) for p in self.params],
            v=[np.zeros_like(p.data) for p in self.params],
        )

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, self.state)


def adam_step(params, state):
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {i} {p.shape} has no gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)


# ----------------------------------------------------------------------------
# finite-difference checking


def numeric_grad(fn, arrays, index, h=1e-5):
    """Central-difference gradient of scalar ``fn(*arrays)`` w.r.t. ``arrays[index]``."""
    x = arrays[index]
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(fn(*arrays))
        flat[i] = old - h
        fm = float(fn(*arrays))
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic, numeric):
    """max |a - n| / max(max|a|, max|n|, 1e-8)."""
    a = np.asarray(analytic, np.float64)
    n = np.asarray(numeric, np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-8)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def check_grad(fn, arrays, h=1e-5, wrt=None):
    """Compare analytic and central-difference gradients in float64.

    ``fn`` maps Tensors to a scalar Tensor. Returns the worst relative error
    over the checked inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    wrt = range(len(arrays)) if wrt is None else wrt
    with precision(np.float64):
        ts = [Tensor(a, requires_grad=True) for a in arrays]
        backward(fn(*ts))

        def scalar(*arrs):
            with no_grad():
                return fn(*[Tensor(a) for a in arrs]).item()

        worst = 0.0
        for i in wrt:
            num = numeric_grad(scalar, arrays, i, h)
            ana = ts[i].grad if ts[i].grad is not None else np.zeros_like(arrays[i])
            worst = max(worst, relative_error(ana, num))
    return worst
