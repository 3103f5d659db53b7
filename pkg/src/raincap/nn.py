"""Parameter containers and layers built on :mod:`raincap.gradcore`."""
import numpy as np

from . import gradcore as gc
from .gradcore import Tensor


class Module:
    """Base class: parameters are Tensor attributes, buffers are ndarray attributes."""

    training = True

    def _children(self):
        for name, val in vars(self).items():
            if isinstance(val, (Tensor, Module, np.ndarray)):
                yield name, val
            elif isinstance(val, (list, tuple)) and val and all(isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix=""):
        for name, val in self._children():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, val in self._children():
            if isinstance(val, np.ndarray):
                yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{name}.")

    def modules(self):
        yield self
        for _, val in self._children():
            if isinstance(val, Module):
                yield from val.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self, prefix=""):
        out = {name: p.data.copy() for name, p in self.named_parameters(prefix)}
        out.update({name: b.copy() for name, b in self.named_buffers(prefix)})
        return out

    def load_state_dict(self, state, prefix=""):
        own = dict(self.named_parameters(prefix))
        bufs = dict(self.named_buffers(prefix))
        missing = [k for k in list(own) + list(bufs) if k not in state]
        if missing:
            raise KeyError(f"missing tensors: {missing[:5]}{' ...' if len(missing) > 5 else ''}")
        for k, p in own.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise gc.ShapeError(f"{k}: expected {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.dtype).copy()
        for k, b in bufs.items():
            b[...] = np.asarray(state[k]).reshape(b.shape)
        return self

    def to(self, dtype):
        """Cast parameters and buffers in place."""
        for m in self.modules():
            for name, val in list(vars(m).items()):
                if isinstance(val, Tensor):
                    val.data = val.data.astype(dtype)
                elif isinstance(val, np.ndarray) and np.issubdtype(val.dtype, np.floating):
                    setattr(m, name, val.astype(dtype))
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr):
    return Tensor(np.asarray(arr, dtype=gc.default_dtype()), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, pad=None, bias=True):
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        std = np.sqrt(2.0 / (cin * k * k))
        self.weight = _param(rng.standard_normal((cout, cin, k, k)) * std)
        self.bias = _param(np.zeros(cout)) if bias else None

    def forward(self, x):
        y = gc.conv2d(x, self.weight, self.stride, self.pad)
        if self.bias is not None:
            y = y + self.bias.reshape(1, -1, 1, 1)
        return y


class Linear(Module):
    def __init__(self, fin, fout, rng, bias=True):
        bound = np.sqrt(6.0 / (fin + fout))
        self.weight = _param(rng.uniform(-bound, bound, (fin, fout)))
        self.bias = _param(np.zeros(fout)) if bias else None

    def forward(self, x):
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class BatchNorm2d(Module):
    def __init__(self, c, momentum=0.1, eps=1e-5):
        self.momentum = momentum
        self.eps = eps
        self.gamma = _param(np.ones(c))
        self.beta = _param(np.zeros(c))
        self.running_mean = np.zeros(c, dtype=gc.default_dtype())
        self.running_var = np.ones(c, dtype=gc.default_dtype())

    def forward(self, x):
        return gc.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.training, self.momentum, self.eps
        )


class Embedding(Module):
    def __init__(self, n, dim, rng):
        self.weight = _param(rng.standard_normal((n, dim)) * 0.1)

    def forward(self, ids):
        return gc.take(self.weight, ids)


class LSTMCell(Module):
    """Standard LSTM cell; gates ordered input, forget, cell, output."""

    def __init__(self, fin, hidden, rng):
        self.hidden = hidden
        bound = np.sqrt(6.0 / (fin + hidden + 4 * hidden))
        self.weight = _param(rng.uniform(-bound, bound, (fin + hidden, 4 * hidden)))
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = 1.0
        self.bias = _param(b)

    def forward(self, x, state):
        h, c = state
        z = gc.concat([x, h], axis=1) @ self.weight + self.bias
        H = self.hidden
        i = gc.sigmoid(z[:, :H])
        f = gc.sigmoid(z[:, H : 2 * H])
        g = gc.tanh(z[:, 2 * H : 3 * H])
        o = gc.sigmoid(z[:, 3 * H :])
        c2 = f * c + i * g
        h2 = o * gc.tanh(c2)
        return h2, c2
