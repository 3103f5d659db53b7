"""Base/detail split of an image with a self-guided filter."""
from dataclasses import dataclass

import numpy as np

from . import kernels

DEFAULT_RADIUS = 8
DEFAULT_EPS = 0.01


@dataclass
class BaseDetailPair:
    base: np.ndarray
    detail: np.ndarray


def _box(x, r):
    # shifting by a sample value keeps constant regions exact under the running sums
    c = x.flat[0]
    return c + kernels.box_mean(x - c, r)


def _guided_channel(p, r, eps):
    p = p.astype(np.float64)
    mu = _box(p, r)
    var = np.maximum(_box(p * p, r) - mu * mu, 0.0)
    a = var / (var + eps)
    b = (1.0 - a) * mu
    return _box(a, r) * p + _box(b, r)


def guided_filter(p, r=DEFAULT_RADIUS, eps=DEFAULT_EPS):
    """Edge-preserving smoothing of ``p`` guided by itself, channel by channel.

    Accepts (H, W) or (H, W, C) arrays. Box means use (2r+1)^2 windows with
    edge-replicated borders and are accumulated in float64.
    """
    if r < 1:
        raise ValueError("radius must be >= 1")
    if eps <= 0:
        raise ValueError("eps must be positive")
    p = np.asarray(p)
    k = 2 * r + 1
    if p.shape[0] < k or p.shape[1] < k:
        raise ValueError(f"image {p.shape[:2]} smaller than the {k}x{k} window")
    if p.ndim == 2:
        return _guided_channel(p, r, eps)
    return np.stack([_guided_channel(p[..., c], r, eps) for c in range(p.shape[2])], axis=-1)


def decompose(I, r=DEFAULT_RADIUS, eps=DEFAULT_EPS):
    """Split ``I`` into a smooth base layer and the residual detail layer.

    Both layers are float64 so that ``base + detail`` reproduces ``I`` to
    double rounding.
    """
    base = guided_filter(I, r, eps)
    return BaseDetailPair(base=base, detail=np.asarray(I, np.float64) - base)


def total_variation(img):
    img = np.asarray(img, np.float64)
    return float(np.abs(np.diff(img, axis=0)).sum() + np.abs(np.diff(img, axis=1)).sum())


def streak_energy_split(sample, r=DEFAULT_RADIUS, eps=DEFAULT_EPS):
    """Fraction of the streak energy of a heavy rain sample that lands in the detail layer.

    The streak contribution to I is ``T * S`` (per channel). Its share of the
    detail layer is measured as the change in the detail layer when the
    streaks are removed from the composition.
    """
    from .rainmodel import compose_heavy_rain

    clean_veil = compose_heavy_rain(sample.J, [], sample.T, sample.A)
    d_rain = decompose(sample.I, r, eps).detail
    d_clean = decompose(clean_veil, r, eps).detail
    streak_in_detail = d_rain - d_clean
    streak = (sample.T * sample.S)[..., None] * np.ones(3)
    total = float((streak**2).sum())
    if total == 0.0:
        return 1.0
    # project onto the streak signal so unrelated changes are not counted
    captured = float((streak_in_detail * streak).sum())
    return captured / total
