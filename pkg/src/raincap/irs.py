"""Initial reconstruction subnetwork (IRS).

Three skip-connected conv encoder-decoders estimate atmospheric light,
transmission and the rain layer from the base/detail split of a heavy rain
image; the clean image is then recovered by inverting the rain model.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from . import decomp
from . import gradcore as gc
from .gradcore import Tensor
from .nn import Conv2d, Module
from .rainmodel import T_MIN

log = logging.getLogger(__name__)

WIDTHS = (16, 32, 64, 64)
MULTIPLE = 2 ** len(WIDTHS)


class ConvUNet(Module):
    """Four stride-2 downsampling convs, four upsample+conv stages with skips."""

    def __init__(self, cin, cout, rng, widths=WIDTHS, out_act="sigmoid"):
        self.out_act = out_act
        self.down = []
        c = cin
        for w in widths:
            self.down.append(Conv2d(c, w, 3, rng, stride=2))
            c = w
        skips = (cin,) + tuple(widths[:-1])
        ups = tuple(reversed(widths[:-1])) + (widths[0],)
        self.up = []
        for skip, w in zip(reversed(skips), ups):
            self.up.append(Conv2d(c + skip, w, 3, rng))
            c = w
        self.head = Conv2d(c, cout, 1, rng)
        if out_act == "relu":
            self.head.bias.data[:] = 0.01

    def forward(self, x):
        feats = [x]
        h = x
        for conv in self.down:
            h = gc.relu(conv(h))
            feats.append(h)
        feats.pop()
        for conv in self.up:
            h = gc.nearest_upsample(h, 2)
            h = gc.relu(conv(gc.concat([h, feats.pop()], axis=1)))
        y = self.head(h)
        return gc.sigmoid(y) if self.out_act == "sigmoid" else gc.relu(y)


class IrsModel(Module):
    def __init__(self, seed=0, widths=WIDTHS, radius=decomp.DEFAULT_RADIUS, eps=decomp.DEFAULT_EPS):
        rng = np.random.default_rng(seed)
        self.net_A = ConvUNet(3, 3, rng, widths, "sigmoid")
        self.net_T = ConvUNet(6, 1, rng, widths, "sigmoid")
        self.net_S = ConvUNet(3, 1, rng, widths, "relu")
        self.radius = radius
        self.eps = eps


@dataclass
class IrsTrainConfig:
    patch: int = 64
    batch_size: int = 4
    epochs: int = 100
    lr: float = 1e-3
    dataset_size: int = 50

    def __post_init__(self):
        if self.patch % MULTIPLE:
            raise ValueError(f"patch size must be divisible by {MULTIPLE}")
        if min(self.patch, self.batch_size, self.epochs, self.dataset_size) <= 0 or self.lr <= 0:
            raise ValueError("training settings must be positive")


# settings reported for the full-scale run; the desk runs use IrsTrainConfig()
FULL_SCALE_IRS_CONFIG = dict(patch=128, batch_size=4, epochs=300, dataset_size=8000)


@dataclass
class IrsTrainResult:
    model: IrsModel
    history: list = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")


def to_nchw(images):
    """Stack (H, W, C) arrays into an NCHW float32 array."""
    arr = np.stack([np.asarray(im, np.float32) for im in images])
    if arr.ndim == 3:
        arr = arr[..., None]
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


def from_nchw(arr):
    return np.ascontiguousarray(np.asarray(arr).transpose(0, 2, 3, 1))


def _check_extents(x):
    h, w = x.shape[-2:]
    if h % MULTIPLE or w % MULTIPLE:
        raise ValueError(f"input extents {h}x{w} must be divisible by {MULTIPLE}")


def decompose_batch(images, model):
    """Base and detail NCHW arrays for a list of (H, W, 3) images."""
    pairs = [decomp.decompose(im, model.radius, model.eps) for im in images]
    return to_nchw([p.base for p in pairs]), to_nchw([p.detail for p in pairs])


def irs_forward(base, detail, model):
    """Estimates (A_hat, T_hat, S_hat) as NCHW tensors with 3, 1 and 1 channels."""
    base = base if isinstance(base, Tensor) else Tensor(base)
    detail = detail if isinstance(detail, Tensor) else Tensor(detail)
    if base.shape != detail.shape:
        raise gc.ShapeError(f"base {base.shape} and detail {detail.shape} differ")
    _check_extents(base)
    A = model.net_A(base)
    T = model.net_T(gc.concat([base, detail], axis=1))
    S = model.net_S(detail)
    return A, T, S


def irs_loss(A_hat, T_hat, S_hat, A, T, S):
    """Sum of mean squared errors of the three estimates.

    ``A`` may be given per channel with shape (N, 3); it is broadcast to a
    constant map.
    """
    A = np.asarray(A.data if isinstance(A, Tensor) else A, A_hat.dtype)
    if A.ndim == 2:
        A = np.broadcast_to(A[:, :, None, None], A_hat.shape)
    return gc.mse_loss(A_hat, Tensor(np.ascontiguousarray(A))) + gc.mse_loss(T_hat, T) + gc.mse_loss(S_hat, S)


def invert_graph(I, A_hat, T_hat, S_hat, t_min=T_MIN):
    """Differentiable rain-model inverse on NCHW tensors."""
    I = I if isinstance(I, Tensor) else Tensor(I)
    t = gc.clamp_min(T_hat, t_min)
    return (I - (1.0 - t) * A_hat) / t - S_hat


def _targets(samples):
    A = np.stack([s.A for s in samples]).astype(np.float32)
    T = to_nchw([s.T for s in samples])
    S = to_nchw([s.S for s in samples])
    return A, T, S


def _dataset_loss(model, base, detail, A, T, S, batch):
    total = 0.0
    with gc.no_grad():
        for i in range(0, len(base), batch):
            sl = slice(i, i + batch)
            est = irs_forward(base[sl], detail[sl], model)
            total += irs_loss(*est, A[sl], T[sl], S[sl]).item() * len(base[sl])
    return total / len(base)


def train_irs(dataset, cfg=IrsTrainConfig(), seed=0, model=None):
    """Fit the three subnetworks to the (A, T, S) used to synthesize ``dataset``."""
    if not dataset:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    model = model or IrsModel(seed=seed)
    base, detail = decompose_batch([s.I for s in dataset], model)
    A, T, S = _targets(dataset)
    h, w = base.shape[-2:]
    if cfg.patch > min(h, w):
        raise ValueError(f"patch {cfg.patch} exceeds image size {h}x{w}")
    result = IrsTrainResult(model=model)
    result.initial_loss = _dataset_loss(model, base, detail, A, T, S, cfg.batch_size)
    opt = gc.Adam(model.parameters(), lr=cfg.lr)
    p = cfg.patch
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            y0 = int(rng.integers(0, h - p + 1))
            x0 = int(rng.integers(0, w - p + 1))
            crop = (idx, slice(None), slice(y0, y0 + p), slice(x0, x0 + p))
            opt.zero_grad()
            est = irs_forward(base[crop], detail[crop], model)
            loss = irs_loss(*est, A[idx], T[crop], S[crop])
            gc.backward(loss)
            opt.step()
            losses.append(loss.item())
        result.history.append(float(np.mean(losses)))
        log.debug("irs epoch %d loss %.5f", epoch, result.history[-1])
    result.final_loss = _dataset_loss(model, base, detail, A, T, S, cfg.batch_size)
    return result


def estimate(images, model):
    """Frozen-model estimates for a list of (H, W, 3) images, as numpy arrays."""
    base, detail = decompose_batch(images, model)
    with gc.no_grad():
        A, T, S = irs_forward(base, detail, model)
    return A.data, T.data, S.data


def derain(images, model, t_min=T_MIN):
    """Restore a list of heavy rain images; results are unclamped (H, W, 3) arrays."""
    if isinstance(images, np.ndarray) and images.ndim == 3:
        return derain([images], model, t_min)[0]
    base, detail = decompose_batch(images, model)
    with gc.no_grad():
        A, T, S = irs_forward(base, detail, model)
        J = invert_graph(to_nchw(images), A, T, S, t_min)
    return list(from_nchw(J.data))
