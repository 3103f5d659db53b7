"""Heavy rain formation, its algebraic inverse, and procedural synthesis of
the rain layers, transmission and atmospheric light.

Images are float arrays of shape (H, W, 3); single-channel fields
(depth, transmission, rain layers) are (H, W).
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels

T_MIN = 0.05


@dataclass(frozen=True)
class StreakParams:
    n_layers: int = 2
    density: float = 0.05
    sigma: float = 1.5
    length: int = 25
    angle: float = 90.0
    brightness: float = 0.85
    beta: float = 1.0

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if not 0.0 < self.density < 1.0:
            raise ValueError("density must lie in (0, 1)")
        if self.beta <= 0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True)
class StreakRanges:
    """Ranges the per-sample parameters are drawn from."""

    n_layers: tuple = (1, 3)
    density: tuple = (0.02, 0.08)
    sigma: tuple = (1.0, 2.0)
    length: tuple = (15, 40)
    angle: tuple = (60.0, 120.0)
    brightness: tuple = (0.7, 1.0)
    beta: tuple = (0.5, 2.0)

    def draw(self, rng):
        return StreakParams(
            n_layers=int(rng.integers(self.n_layers[0], self.n_layers[1] + 1)),
            density=float(rng.uniform(*self.density)),
            sigma=float(rng.uniform(*self.sigma)),
            length=int(rng.integers(self.length[0], self.length[1] + 1)),
            angle=float(rng.uniform(*self.angle)),
            brightness=float(rng.uniform(*self.brightness)),
            beta=float(rng.uniform(*self.beta)),
        )


@dataclass
class HeavyRainSample:
    J: np.ndarray
    I: np.ndarray
    T: np.ndarray
    S: np.ndarray
    A: np.ndarray
    depth: np.ndarray
    seed: int
    params: StreakParams
    layers: list = field(default_factory=list, repr=False)

    def params_dict(self):
        return asdict(self.params)


def _check_hw(name, arr, hw):
    if arr.shape[:2] != hw:
        raise ValueError(f"{name} is {arr.shape[:2]}, expected {hw}")


def line_kernel(length, angle):
    """Unit-sum kernel holding a one-pixel-wide segment through its center.

    ``angle`` is in degrees, measured from the horizontal axis; 90 gives a
    vertical segment.
    """
    size = length if length % 2 else length + 1
    k = np.zeros((size, size))
    c = size // 2
    th = np.deg2rad(angle)
    dx, dy = np.cos(th), -np.sin(th)
    half = (length - 1) / 2.0
    for t in np.linspace(-half, half, 4 * length + 1):
        k[int(np.rint(c + t * dy)), int(np.rint(c + t * dx))] = 1.0
    return k / k.sum()


def synth_streak_layer(seed, params, h, w):
    """One rain layer: thresholded Gaussian noise smeared by a motion kernel.

    The noise keeps its ``density / length`` fraction of largest samples,
    so after smearing each streak covers about ``length`` pixels and the
    layer covers roughly ``density`` of the image.
    """
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((h, w)) * params.sigma
    k = int(params.density / params.length * h * w)
    seeds = np.zeros_like(noise)
    if k > 0:
        top = np.argpartition(noise, noise.size - k, axis=None)[noise.size - k :]
        seeds.flat[top] = np.maximum(noise.flat[top], 0.0)
    layer = kernels.correlate_sparse(seeds, line_kernel(params.length, params.angle))
    return np.maximum(layer, 0.0).astype(np.float32)


def depth_to_transmission(depth, beta):
    if beta <= 0:
        raise ValueError("beta must be positive")
    return np.exp(-beta * np.asarray(depth, dtype=np.float32)).astype(np.float32)


def atmospheric_light(brightness):
    return np.full(3, brightness, dtype=np.float32)


def compose_streaks(J, layers):
    R = np.array(J, dtype=np.float32, copy=True)
    for s in layers:
        _check_hw("rain layer", s, J.shape[:2])
        R += s[..., None]
    return R


def compose_heavy_rain(J, layers, T, A):
    """I = T * (J + sum S_i) + (1 - T) * A, with T shared by all channels."""
    _check_hw("transmission", T, J.shape[:2])
    R = compose_streaks(J, layers)
    t = T[..., None]
    return (t * R + (1.0 - t) * np.asarray(A, np.float32)).astype(np.float32)


def invert_heavy_rain(I, T, A, S, t_min=T_MIN):
    """J = (I - (1 - T) * A) / T - S with T clamped below at ``t_min``."""
    t = np.maximum(np.asarray(T, np.float32), t_min)[..., None]
    S = np.asarray(S, np.float32)
    if S.ndim == 2:
        S = S[..., None]
    return ((I - (1.0 - t) * np.asarray(A, np.float32)) / t - S).astype(np.float32)


def make_sample(J, depth, seed, ranges=StreakRanges()):
    """Draw parameters from ``ranges`` and synthesize a full heavy rain sample."""
    J = np.asarray(J, np.float32)
    depth = np.asarray(depth, np.float32)
    if J.shape[:2] != depth.shape:
        raise ValueError(f"image {J.shape[:2]} and depth {depth.shape} sizes differ")
    ss = np.random.SeedSequence(seed)
    params = ranges.draw(np.random.default_rng(ss.spawn(1)[0]))
    h, w = depth.shape
    layers = [synth_streak_layer(child, params, h, w) for child in ss.spawn(params.n_layers)]
    T = depth_to_transmission(depth, params.beta)
    A = atmospheric_light(params.brightness)
    I = compose_heavy_rain(J, layers, T, A)
    S = np.sum(layers, axis=0).astype(np.float32)
    return HeavyRainSample(J=J, I=I, T=T, S=S, A=A, depth=depth, seed=int(seed), params=params, layers=layers)
