import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raincap import rainmodel as rm
from raincap.harness.shapes import gen_shapes_dataset


def smooth_scene(rng, h=64, w=64):
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    J = np.stack([0.2 + 0.6 * rng.random() * xx, 0.3 + 0.4 * yy, np.full((h, w), rng.uniform(0.1, 0.9))], -1)
    depth = np.clip(0.2 + 0.6 * yy + 0.1 * rng.random(), 0.0, 1.0)
    return J.astype(np.float32), depth.astype(np.float32)


# -- parameters -------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kw", [dict(n_layers=0), dict(length=0), dict(density=0.0), dict(density=1.0), dict(beta=0.0)]
)
def test_streak_params_validation(kw):
    with pytest.raises(ValueError):
        rm.StreakParams(**kw)


def test_ranges_draw_within_bounds(rng):
    r = rm.StreakRanges()
    for _ in range(200):
        p = r.draw(rng)
        assert 1 <= p.n_layers <= 3
        assert 0.02 <= p.density <= 0.08
        assert 15 <= p.length <= 40
        assert 60 <= p.angle <= 120
        assert 0.7 <= p.brightness <= 1.0
        assert 0.5 <= p.beta <= 2.0


# -- streak layers ----------------------------------------------------------------------


def test_line_kernel_unit_sum_and_orientation():
    k = rm.line_kernel(9, 90)
    assert np.isclose(k.sum(), 1.0)
    cols = np.flatnonzero(k.sum(axis=0))
    assert cols.tolist() == [4]
    assert np.count_nonzero(rm.line_kernel(9, 0).sum(axis=1)) == 1


def test_streak_layer_deterministic():
    p = rm.StreakParams()
    a = rm.synth_streak_layer(5, p, 48, 40)
    b = rm.synth_streak_layer(5, p, 48, 40)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, rm.synth_streak_layer(6, p, 48, 40))


def test_streak_layer_tiny_density_is_empty():
    p = rm.StreakParams(density=1e-9)
    assert not rm.synth_streak_layer(0, p, 64, 64).any()


def test_streak_layer_sparse_nonnegative():
    for seed in range(20):
        s = rm.synth_streak_layer(seed, rm.StreakParams(), 64, 64)
        assert s.min() >= 0.0
        assert (s == 0).mean() >= 0.8


def _autocorr(s, dy, dx):
    s = s - s.mean()
    a = s[: s.shape[0] - dy, : s.shape[1] - dx]
    b = s[dy:, dx:]
    return float((a * b).sum())


def test_vertical_streaks_anisotropic():
    s = rm.synth_streak_layer(3, rm.StreakParams(angle=90.0, length=9), 96, 96)
    ys, xs = np.nonzero(s)
    # every nonzero pixel has a nonzero vertical neighbour
    padded = np.pad(s, 1)
    assert all(padded[y, x + 1] > 0 or padded[y + 2, x + 1] > 0 for y, x in zip(ys, xs))
    assert _autocorr(s, 1, 0) > 3 * abs(_autocorr(s, 0, 1))


# -- transmission and composition ------------------------------------------------------


def test_transmission_closed_forms():
    assert rm.depth_to_transmission(np.zeros((2, 2)), 1.3).tolist() == [[1.0, 1.0], [1.0, 1.0]]
    assert np.allclose(rm.depth_to_transmission(np.ones((2, 2)), np.log(2.0)), 0.5)
    with pytest.raises(ValueError):
        rm.depth_to_transmission(np.ones(2), 0.0)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.05, 3))
def test_transmission_monotone(a, b, beta):
    ta, tb = rm.depth_to_transmission(np.array([min(a, b), max(a, b)]), beta)
    assert ta >= tb > 0.0


def test_compose_streaks_cases(rng):
    J = rng.random((5, 6, 3)).astype(np.float32)
    assert np.array_equal(rm.compose_streaks(J, []), J)
    assert np.array_equal(rm.compose_streaks(J, [np.zeros((5, 6), np.float32)]), J)
    s1, s2 = (rng.random((5, 6)).astype(np.float32) for _ in range(2))
    R = rm.compose_streaks(J, [s1, s2])
    for i in range(5):
        for j in range(6):
            for c in range(3):
                assert R[i, j, c] == np.float32(np.float32(J[i, j, c] + s1[i, j]) + s2[i, j])
    with pytest.raises(ValueError):
        rm.compose_streaks(J, [np.zeros((4, 6))])


def test_compose_heavy_rain_cases(rng):
    J = rng.random((4, 4, 3)).astype(np.float32)
    S = rng.random((4, 4)).astype(np.float32)
    A = rm.atmospheric_light(0.8)
    assert np.allclose(rm.compose_heavy_rain(J, [S], np.ones((4, 4), np.float32), A), J + S[..., None])
    assert np.allclose(rm.compose_heavy_rain(J, [S], np.full((4, 4), 1e-12, np.float32), A), 0.8)
    I = rm.compose_heavy_rain(np.full((3, 3, 3), 0.5, np.float32), [], np.full((3, 3), 0.5, np.float32), A)
    assert np.allclose(I, 0.65)
    with pytest.raises(ValueError):
        rm.compose_heavy_rain(J, [S], np.ones((3, 4)), A)


def test_compose_affine_in_J(rng):
    J1, J2 = (rng.random((6, 6, 3)).astype(np.float32) for _ in range(2))
    S = [rng.random((6, 6)).astype(np.float32)]
    T = rng.uniform(0.1, 1, (6, 6)).astype(np.float32)
    A = rm.atmospheric_light(0.9)
    alpha = 0.3
    lhs = rm.compose_heavy_rain(alpha * J1 + (1 - alpha) * J2, S, T, A)
    rhs = alpha * rm.compose_heavy_rain(J1, S, T, A) + (1 - alpha) * rm.compose_heavy_rain(J2, S, T, A)
    assert np.allclose(lhs, rhs, atol=1e-6)


def test_invert_identity_cases(rng):
    I = rng.random((4, 4, 3)).astype(np.float32)
    out = rm.invert_heavy_rain(I, np.ones((4, 4)), rm.atmospheric_light(0.8), np.zeros((4, 4)))
    assert np.array_equal(out, I)
    # the clamp keeps near-zero transmission finite
    out = rm.invert_heavy_rain(I, np.zeros((4, 4)), rm.atmospheric_light(0.8), np.zeros((4, 4)))
    assert np.isfinite(out).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_property(seed):
    rng = np.random.default_rng(seed)
    J, depth = smooth_scene(rng, 32, 32)
    s = rm.make_sample(J, depth, seed)
    Jh = rm.invert_heavy_rain(s.I, s.T, s.A, s.S)
    mask = s.T >= rm.T_MIN
    assert np.abs(Jh - s.J)[mask].max() < 1e-4


def test_make_sample_deterministic_and_consistent(rng):
    J, depth = smooth_scene(rng)
    a = rm.make_sample(J, depth, 11)
    b = rm.make_sample(J, depth, 11)
    for k in ("I", "T", "S", "A"):
        assert getattr(a, k).tobytes() == getattr(b, k).tobytes()
    assert a.params == b.params and len(a.layers) == a.params.n_layers
    assert np.array_equal(a.S, np.sum(a.layers, axis=0).astype(np.float32))
    assert np.array_equal(a.I, rm.compose_heavy_rain(a.J, a.layers, a.T, a.A))
    assert 0 < a.T.min() and a.T.max() <= 1
    assert ((a.A > 0) & (a.A <= 1)).all()
    with pytest.raises(ValueError):
        rm.make_sample(J, depth[:-1], 0)


def test_heavy_rain_washes_out_contrast():
    ds = gen_shapes_dataset(50, 3)
    lower = [np.std(rm.make_sample(r.image, r.depth, 100 + i).I) < np.std(r.image) for i, r in enumerate(ds)]
    assert np.mean(lower) >= 0.9
