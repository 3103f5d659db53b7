import numpy as np
import pytest

from raincap import decomp
from raincap import gradcore as gc
from raincap import irs
from raincap import rainmodel as rm
from raincap.harness.gradcheck import irs_loss_check


def smooth_samples(n, size=32, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = []
    for i in range(n):
        J = np.stack([0.2 + 0.5 * xx * rng.random(), 0.3 + 0.4 * yy, np.full_like(xx, rng.random())], -1)
        out.append(rm.make_sample(J, 0.2 + 0.6 * yy, seed * 100 + i))
    return out


def small_model(seed=0):
    return irs.IrsModel(seed=seed, widths=(8, 8, 8, 8), radius=4)


def test_output_shapes_and_ranges(rng):
    model = irs.IrsModel(seed=1)
    base = rng.random((2, 3, 64, 64)).astype(np.float32)
    detail = (rng.standard_normal((2, 3, 64, 64)) * 0.1).astype(np.float32)
    A, T, S = irs.irs_forward(base, detail, model)
    assert A.shape == (2, 3, 64, 64) and T.shape == (2, 1, 64, 64) and S.shape == (2, 1, 64, 64)
    assert ((A.data > 0) & (A.data < 1)).all()
    assert ((T.data > 0) & (T.data < 1)).all()
    assert (S.data >= 0).all()
    A2, T2, S2 = irs.irs_forward(base, detail, model)
    assert A.data.tobytes() == A2.data.tobytes() and S.data.tobytes() == S2.data.tobytes()


def test_forward_rejects_bad_extents(rng):
    model = small_model()
    with pytest.raises(ValueError):
        irs.irs_forward(np.zeros((1, 3, 24, 32)), np.zeros((1, 3, 24, 32)), model)
    with pytest.raises(gc.ShapeError):
        irs.irs_forward(np.zeros((1, 3, 32, 32)), np.zeros((1, 3, 16, 32)), model)


def test_checkpoint_names():
    names = set(irs.IrsModel().state_dict("irs."))
    assert any(n.startswith("irs.net_A.") for n in names)
    assert any(n.startswith("irs.net_T.") for n in names)
    assert any(n.startswith("irs.net_S.") for n in names)


def test_loss_examples(rng):
    A = rng.random((2, 3)).astype(np.float32)
    T = rng.random((2, 1, 4, 4)).astype(np.float32)
    S = rng.random((2, 1, 4, 4)).astype(np.float32)
    A_map = gc.Tensor(np.broadcast_to(A[:, :, None, None], (2, 3, 4, 4)).copy())
    assert irs.irs_loss(A_map, gc.Tensor(T), gc.Tensor(S), A, T, S).item() == 0.0
    off = irs.irs_loss(A_map + 0.25, gc.Tensor(T), gc.Tensor(S), A, T, S).item()
    assert np.isclose(off, 0.0625)


def test_loss_loop_oracle(rng, f64):
    Ah, Th, Sh = rng.random((2, 3, 4, 4)), rng.random((2, 1, 4, 4)), rng.random((2, 1, 4, 4))
    A, T, S = rng.random((2, 3)), rng.random((2, 1, 4, 4)), rng.random((2, 1, 4, 4))
    got = irs.irs_loss(gc.Tensor(Ah), gc.Tensor(Th), gc.Tensor(Sh), A, T, S).item()
    ea = et = es = 0.0
    for n in range(2):
        for i in range(4):
            for j in range(4):
                for c in range(3):
                    ea += (Ah[n, c, i, j] - A[n, c]) ** 2
                et += (Th[n, 0, i, j] - T[n, 0, i, j]) ** 2
                es += (Sh[n, 0, i, j] - S[n, 0, i, j]) ** 2
    assert abs(got - (ea / 96 + et / 32 + es / 32)) < 1e-6


def test_loss_gradient_matches_fd():
    assert irs_loss_check(np.random.default_rng(3)) < 1e-3


def test_ground_truth_estimates_reduce_to_inverse():
    for s in smooth_samples(4):
        I = irs.to_nchw([s.I])
        A = np.broadcast_to(s.A[None, :, None, None], I.shape).copy()
        J = irs.invert_graph(I, gc.Tensor(A), gc.Tensor(s.T[None, None]), gc.Tensor(s.S[None, None]))
        assert np.array_equal(irs.from_nchw(J.data)[0], rm.invert_heavy_rain(s.I, s.T, s.A, s.S))


def test_untrained_derain_finite_and_deterministic():
    model = small_model()
    images = [s.I for s in smooth_samples(2)]
    a, b = irs.derain(images, model), irs.derain(images, model)
    assert all(np.isfinite(x).all() for x in a)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))
    assert irs.derain(images[0], model).shape == (32, 32, 3)


def test_train_config_validation():
    with pytest.raises(ValueError):
        irs.IrsTrainConfig(patch=60)
    with pytest.raises(ValueError):
        irs.IrsTrainConfig(epochs=0)
    assert irs.FULL_SCALE_IRS_CONFIG == dict(patch=128, batch_size=4, epochs=300, dataset_size=8000)


def test_train_rejects_empty_and_oversized():
    with pytest.raises(ValueError):
        irs.train_irs([], irs.IrsTrainConfig())
    with pytest.raises(ValueError):
        irs.train_irs(smooth_samples(1), irs.IrsTrainConfig(patch=64))


def test_training_deterministic_and_finite():
    data = smooth_samples(4)
    cfg = irs.IrsTrainConfig(patch=32, batch_size=2, epochs=3)
    a = irs.train_irs(data, cfg, seed=5, model=small_model())
    b = irs.train_irs(data, cfg, seed=5, model=small_model())
    assert a.final_loss == b.final_loss
    assert np.isfinite(a.history).all() and len(a.history) == 3


def test_single_sample_capacity():
    data = smooth_samples(1)
    cfg = irs.IrsTrainConfig(patch=32, batch_size=1, epochs=600, lr=2e-3)
    res = irs.train_irs(data, cfg, seed=0, model=small_model())
    assert res.final_loss < 1e-3


def test_decomposition_feeds_the_branches():
    s = smooth_samples(1)[0]
    model = small_model()
    base, detail = irs.decompose_batch([s.I], model)
    ref = decomp.decompose(s.I, 4, model.eps)
    assert np.allclose(base[0].transpose(1, 2, 0), ref.base, atol=1e-6)
    assert np.allclose(detail[0].transpose(1, 2, 0), ref.detail, atol=1e-6)
