"""Finite-difference checks for every differentiable op and the composite losses."""
from dataclasses import dataclass

import numpy as np

from .. import captioner as cp
from .. import gradcore as gc
from .. import irs as irs_mod
from .. import svfms
from ..gradcore import Tensor

PRIMITIVE_TOL = 1e-4
COMPOSITE_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self):
        return self.error < self.tol


def primitive_cases(rng):
    """name -> (scalar fn of Tensors, input arrays). Random weights are bound once."""
    n = lambda *s: rng.standard_normal(s)
    pos = lambda *s: rng.uniform(0.5, 2.0, s)
    w = lambda *s: Tensor(rng.standard_normal(s))

    def bn(train, W=w(2, 3, 3, 3)):
        return lambda x, g, b: (gc.batch_norm(x, g, b, np.zeros(3), np.ones(3) * 1.5, train) * W).sum()

    return {
        "add": (lambda a, b, W=w(2, 3): ((a + b) * W).sum(), [n(2, 3), n(1, 3)]),
        "sub": (lambda a, b, W=w(2, 3): ((a - b) * W).sum(), [n(2, 3), n(2, 1)]),
        "mul": (lambda a, b, W=w(2, 3): ((a * b) * W).sum(), [n(2, 3), n(2, 3)]),
        "div": (lambda a, b, W=w(2, 3): ((a / b) * W).sum(), [n(2, 3), pos(2, 3)]),
        "neg": (lambda a, W=w(5): ((-a) * W).sum(), [n(5)]),
        "exp_log": (lambda a, b: (gc.log(b) + gc.exp(a)).sum(), [n(4), pos(4)]),
        "matmul": (lambda a, b, W=w(4, 2): ((a @ b) * W).sum(), [n(4, 5), n(5, 2)]),
        "matmul_batched": (lambda a, b, W=w(2, 3, 2): ((a @ b) * W).sum(), [n(2, 3, 4), n(4, 2)]),
        "conv2d": (lambda x, k, W=w(1, 3, 5, 5): (gc.conv2d(x, k, 1, 1) * W).sum(), [n(1, 2, 5, 5), n(3, 2, 3, 3)]),
        "conv2d_s2": (lambda x, k, W=w(2, 2, 3, 3): (gc.conv2d(x, k, 2, 1) * W).sum(), [n(2, 2, 6, 6), n(2, 2, 3, 3)]),
        "relu": (lambda a, W=w(8): (gc.relu(a) * W).sum(), [n(8)]),
        "sigmoid": (lambda a, W=w(8): (gc.sigmoid(a) * W).sum(), [n(8)]),
        "tanh": (lambda a, W=w(8): (gc.tanh(a) * W).sum(), [n(8)]),
        "softmax": (lambda a, W=w(3, 5): (gc.softmax(a, axis=1) * W).sum(), [n(3, 5)]),
        "log_softmax": (lambda a, W=w(3, 5): (gc.log_softmax(a, axis=0) * W).sum(), [n(3, 5)]),
        "pool": (lambda a, W=w(1, 2, 2, 2): (gc.adaptive_avg_pool(a, 2, 2) * W).sum(), [n(1, 2, 5, 5)]),
        "pool_even": (lambda a, W=w(1, 2, 2, 2): (gc.adaptive_avg_pool(a, 2, 2) * W).sum(), [n(1, 2, 4, 4)]),
        "upsample": (lambda a, W=w(1, 2, 4, 4): (gc.nearest_upsample(a, 2) * W).sum(), [n(1, 2, 2, 2)]),
        "concat": (lambda a, b, W=w(1, 5, 2, 2): (gc.concat([a, b], axis=1) * W).sum(), [n(1, 2, 2, 2), n(1, 3, 2, 2)]),
        "stack": (lambda a, b, W=w(2, 3): (gc.stack([a, b], axis=0) * W).sum(), [n(3), n(3)]),
        "bn_train": (bn(True), [n(2, 3, 3, 3), pos(3), n(3)]),
        "bn_eval": (bn(False), [n(2, 3, 3, 3), pos(3), n(3)]),
        "mse": (lambda a, b: gc.mse_loss(a, b), [n(3, 4), n(3, 4)]),
        "l1": (lambda a, b: gc.l1_loss(a, b), [n(3, 4), n(3, 4)]),
        "cross_entropy": (lambda a: gc.cross_entropy(a, [1, 0, 3]), [n(3, 4)]),
        "getitem_take": (
            lambda a, W1=w(4, 2), W2=w(3, 4): (a[:, 1:3] * W1).sum() + (gc.take(a, [0, 2, 2]) * W2).sum(),
            [n(4, 4)],
        ),
        "reshape_transpose": (lambda a, W=w(4, 3): (a.reshape(3, 4).transpose(1, 0) * W).sum(), [n(2, 6)]),
        "mean_sum": (lambda a, W=w(1, 5): a.mean(axis=1).sum() + (a.sum(axis=0, keepdims=True) * W).sum(), [n(3, 5)]),
        "clamp_min": (
            lambda a, W=w(8): (gc.clamp_min(a, 0.05) * W).sum(),
            [np.concatenate([rng.uniform(0.1, 1, 4), rng.uniform(-1, 0, 4)])],
        ),
    }


def param_grad_error(loss_fn, params, rng, per_param=6, h=1e-7):
    """Relative error between analytic and central-difference gradients.

    ``params`` are float64 leaf Tensors; ``per_param`` entries of each are
    probed, chosen at random. The small step keeps probes from straddling
    ReLU, clamp and l1 kinks, which are dense in the composite losses.
    """
    for p in params:
        p.grad = None
    gc.backward(loss_fn())
    ana, num = [], []
    for p in params:
        flat = p.data.reshape(-1)
        g = p.grad.reshape(-1) if p.grad is not None else np.zeros_like(flat)
        for i in rng.choice(flat.size, size=min(per_param, flat.size), replace=False):
            old = flat[i]
            with gc.no_grad():
                flat[i] = old + h
                fp = loss_fn().item()
                flat[i] = old - h
                fm = loss_fn().item()
            flat[i] = old
            ana.append(g[i])
            num.append((fp - fm) / (2 * h))
    return gc.relative_error(np.array(ana), np.array(num))


def _off_kinks(module, rng, scale=0.05):
    """Jitter biases so no ReLU input sits exactly at zero (dead 1x1 bottlenecks at init)."""
    for name, p in module.named_parameters():
        if name.endswith("bias"):
            p.data += scale * rng.standard_normal(p.shape)


def _rain_batch(rng, n, size):
    from ..rainmodel import make_sample

    yy, xx = np.mgrid[0:size, 0:size] / size
    out = []
    for i in range(n):
        J = np.stack([0.3 + 0.3 * np.sin(3 * xx + i), 0.5 + 0.2 * yy, 0.4 + 0.1 * xx * yy], -1)
        depth = 0.3 + 0.5 * yy
        out.append(make_sample(J, depth, int(rng.integers(1 << 30))))
    return out


def irs_loss_check(rng, size=16):
    with gc.precision(np.float64):
        model = irs_mod.IrsModel(seed=int(rng.integers(1 << 30)), widths=(4, 4, 4, 4), radius=4)
        _off_kinks(model, rng)
        samples = _rain_batch(rng, 2, size)
        base, detail = irs_mod.decompose_batch([s.I for s in samples], model)
        base, detail = base.astype(np.float64), detail.astype(np.float64)
        A, T, S = irs_mod._targets(samples)
        T, S = T.astype(np.float64), S.astype(np.float64)

        def loss():
            return irs_mod.irs_loss(*irs_mod.irs_forward(base, detail, model), A, T, S)

        return param_grad_error(loss, model.parameters(), rng)


def svfm_loss_check(rng, size=32):
    """Gradient of L_SVFM through reconstruction and the source encoder."""
    with gc.precision(np.float64):
        dims = cp.CaptionerDims(D=8, widths=(4, 4, 8, 8), grid=2)
        target = cp.Encoder(np.random.default_rng(int(rng.integers(1 << 30))), dims)
        source = cp.Encoder(np.random.default_rng(int(rng.integers(1 << 30))), dims)
        model = svfms.ProposedEncoder(irs_mod.IrsModel(seed=int(rng.integers(1 << 30)), widths=(4, 4, 4, 4)), source)
        _off_kinks(model.irs, rng)
        samples = _rain_batch(rng, 2, size)
        I = irs_mod.to_nchw([s.I for s in samples]).astype(np.float64)
        F_T = Tensor(svfms.target_features(irs_mod.to_nchw([s.J for s in samples]).astype(np.float64), target))

        def loss():
            return svfms.svfm_loss(source(svfms.reconstruct(I, model.irs)), F_T)

        return param_grad_error(loss, model.parameters(), rng, per_param=3)


def captioner_check(rng):
    """Gradient w.r.t. the attention weights and the embedding rows in use."""
    with gc.precision(np.float64):
        dims = cp.CaptionerDims(D=8, k=6, H=10, m=5, grid=2, widths=(4, 4, 8, 8))
        model = cp.Captioner(9, seed=int(rng.integers(1 << 30)), dims=dims)
        a = Tensor(rng.standard_normal((2, 4, 8)))
        ids = np.array([[1, 4, 5, 6, 2], [1, 7, 8, 2, 0]])

        def loss():
            return cp.caption_loss(a, ids, model)[0]

        params = model.att.parameters()
        err = param_grad_error(loss, params, rng)
        # embedding rows: probe only the ids that appear as decoder inputs
        emb = model.dec.embed.weight
        emb.grad = None
        gc.backward(loss())
        ana, num = [], []
        for row in np.unique(ids[:, :-1]):
            for col in rng.choice(emb.shape[1], size=2, replace=False):
                old = emb.data[row, col]
                with gc.no_grad():
                    emb.data[row, col] = old + 1e-6
                    fp = loss().item()
                    emb.data[row, col] = old - 1e-6
                    fm = loss().item()
                emb.data[row, col] = old
                ana.append(emb.grad[row, col])
                num.append((fp - fm) / 2e-6)
        return max(err, gc.relative_error(np.array(ana), np.array(num)))


def run_suite(seed=0, repeats=3):
    """All checks; primitives are repeated over ``repeats`` random draws."""
    rng = np.random.default_rng(seed)
    results = []
    worst = {}
    for _ in range(repeats):
        for name, (fn, arrays) in primitive_cases(rng).items():
            worst[name] = max(worst.get(name, 0.0), gc.check_grad(fn, arrays))
    results += [CheckResult(name, err, PRIMITIVE_TOL) for name, err in worst.items()]
    results.append(CheckResult("L_IRS", irs_loss_check(rng), COMPOSITE_TOL))
    results.append(CheckResult("L_SVFM", svfm_loss_check(rng), COMPOSITE_TOL))
    results.append(CheckResult("captioner", captioner_check(rng), COMPOSITE_TOL))
    return results
