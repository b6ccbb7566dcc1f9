import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from stviz import SpatiotemporalTensor
from stviz.errors import DomainError
from stviz.gradcheck import REGULARIZER_TOL, check_regularizers, relative_error
from stviz.regularizers import (RegularizerConfig, penalty, penalty_gradient, r_b_gradient, r_b_value,
                                r_tv_gradient, r_tv_value)
from stviz.tensor import finite_difference_gradient

WIDE = RegularizerConfig(B=1e9, alpha=3.0)
# magnitudes kept away from underflow so squares stay representable
elems = st.one_of(st.just(0.0), st.floats(1e-3, 100), st.floats(-100, -1e-3))
shapes = st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3))
tensors = shapes.flatmap(lambda s: arrays(np.float64, s, elements=elems)).map(SpatiotemporalTensor)


def T(a):
    return SpatiotemporalTensor(np.asarray(a, dtype=float))


def rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def test_energy_examples():
    cfg = RegularizerConfig(B=160, alpha=3)
    assert r_b_value(SpatiotemporalTensor.zeros(2, 2, 2, 2), cfg) == 0.0
    assert r_b_value(T([[[[3.0, 4.0]]]]), cfg) == pytest.approx(125.0, rel=1e-15)
    assert r_b_value(T([[[[161.0, 0.0]]]]), cfg) == float("inf")
    assert r_b_value(T([[[[160.0, 0.0]]]]), cfg) == pytest.approx(160.0 ** 3)
    # every (i, j, k) position contributes
    assert r_b_value(T(np.full((2, 1, 3, 2), [3.0, 4.0])), cfg) == pytest.approx(6 * 125.0)


def test_energy_gradient_examples():
    x = T(np.random.default_rng(0).standard_normal((3, 3, 2, 3)))
    g = r_b_gradient(x, RegularizerConfig(alpha=2.0))
    assert np.allclose(g.data, 2 * x.data, rtol=1e-14)
    assert r_b_gradient(SpatiotemporalTensor.zeros(2, 2, 1, 2), RegularizerConfig()) == SpatiotemporalTensor.zeros(2, 2, 1, 2)
    with pytest.raises(DomainError):
        r_b_gradient(T([[[[200.0, 0.0]]]]), RegularizerConfig())


def test_tv_examples():
    # two pixels in a row, values 0 and 2: one horizontal difference of 2
    x = T(np.array([0.0, 2.0]).reshape(1, 2, 1, 1))
    assert r_tv_value(x, 1, 1) == 4.0
    assert r_tv_value(x, 0, 1) == 0.0
    # two frames: only the temporal term sees them
    y = T(np.array([0.0, 2.0]).reshape(1, 1, 2, 1))
    assert r_tv_value(y, 1, 0) == 0.0
    assert r_tv_value(y, 0, 3) == 12.0
    assert r_tv_value(SpatiotemporalTensor.full((3, 4, 2, 2), 5.0), 1, 1) == 0.0


def test_chi_zero_ignores_frame_order():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((5, 4, 6, 2))
    base = r_tv_value(T(a), 1.0, 0.0)
    for _ in range(5):
        perm = rng.permutation(6)
        assert r_tv_value(T(a[:, :, perm]), 1.0, 0.0) == base


def test_kappa_equals_chi_weights_all_axes_alike():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((4, 4, 4, 1))
    # transposing rows and frames swaps vertical and temporal terms
    b = a.transpose(2, 1, 0, 3)
    assert r_tv_value(T(a), 2.0, 2.0) == pytest.approx(r_tv_value(T(b), 2.0, 2.0), rel=1e-13)


def test_default_weights():
    H, W = 32, 24
    app = RegularizerConfig.appearance(H, W)
    mot = RegularizerConfig.motion(H, W)
    V = 160 / 6.5
    assert (app.B, app.alpha) == (160, 3)
    assert app.V == pytest.approx(V)
    assert app.lambda_b == pytest.approx(1 / (H * W * 160 ** 3), rel=1e-15)
    assert app.lambda_tv == pytest.approx(1 / (H * W * V ** 2), rel=1e-15)
    assert mot.lambda_tv == pytest.approx(10 * app.lambda_tv, rel=1e-15)
    assert mot.lambda_b == app.lambda_b


def test_config_validation():
    for bad in (dict(B=0), dict(alpha=0.5), dict(kappa=-1), dict(lambda_tv=-1), dict(V=0)):
        with pytest.raises(ValueError):
            RegularizerConfig(**bad)


def test_fd_gradients_single():
    rng = np.random.default_rng(6)
    x = T(rng.standard_normal((4, 3, 3, 2)) * 3)
    cfg = RegularizerConfig(alpha=3.5)
    num = finite_difference_gradient(lambda t: r_b_value(t, cfg), x)
    assert relative_error(r_b_gradient(x, cfg).data, num.data) <= REGULARIZER_TOL
    num = finite_difference_gradient(lambda t: r_tv_value(t, 0.3, 7.0), x)
    assert relative_error(r_tv_gradient(x, 0.3, 7.0).data, num.data) <= REGULARIZER_TOL


def test_fd_gradients_seeded_batch():
    errs = check_regularizers(count=20, seed=11)
    assert errs["r_b"] <= REGULARIZER_TOL and errs["r_tv"] <= REGULARIZER_TOL


def test_penalty_combines_terms():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((3, 3, 2, 2))
    cfg = RegularizerConfig(lambda_b=0.25, lambda_tv=0.5, kappa=2.0, chi=3.0)
    want = 0.25 * r_b_value(T(a), cfg) + 0.5 * r_tv_value(T(a), 2.0, 3.0)
    assert penalty(a, cfg) == pytest.approx(want, rel=1e-14)
    g = 0.25 * r_b_gradient(T(a), cfg).data + 0.5 * r_tv_gradient(T(a), 2.0, 3.0).data
    assert np.allclose(penalty_gradient(a, cfg), g, rtol=1e-14)


@settings(max_examples=60, deadline=None)
@given(tensors, st.floats(-5, 5).filter(lambda s: abs(s) > 1e-3), st.floats(1.0, 4.0))
def test_energy_homogeneity(x, s, alpha):
    cfg = RegularizerConfig(B=1e9, alpha=alpha)
    a = r_b_value(x, cfg)
    b = r_b_value(x * s, cfg)
    assert rel(b, abs(s) ** alpha * a) <= 1e-12 or (a == 0 and b == 0)


@settings(max_examples=60, deadline=None)
@given(tensors, st.floats(-5, 5), st.floats(0, 4), st.floats(0, 4))
def test_tv_homogeneity(x, s, kappa, chi):
    a = r_tv_value(x, kappa, chi)
    b = r_tv_value(x * s, kappa, chi)
    assert rel(b, s * s * a) <= 1e-12 or (a == 0 and b == 0)


@settings(max_examples=60, deadline=None)
@given(tensors, st.floats(0, 10), st.floats(0, 10))
def test_tv_anisotropy_decomposition(x, kappa, chi):
    full = r_tv_value(x, kappa, chi)
    parts = kappa * r_tv_value(x, 1, 0) + chi * r_tv_value(x, 0, 1)
    assert rel(full, parts) <= 1e-12 or (full == 0 and parts == 0)


@settings(max_examples=60, deadline=None)
@given(tensors, st.floats(0.1, 5), st.floats(0.1, 5))
def test_non_negative_and_zero_iff_flat(x, kappa, chi):
    assert r_b_value(x, WIDE) >= 0
    tv = r_tv_value(x, kappa, chi)
    assert tv >= 0
    flat = all(np.all(np.diff(x.data, axis=ax) == 0) for ax in (0, 1, 2))
    assert (tv == 0) == flat
    assert (r_b_value(x, WIDE) == 0) == (not x.data.any())


@settings(max_examples=30, deadline=None)
@given(tensors)
def test_constant_has_zero_tv(x):
    c = SpatiotemporalTensor.full(x.shape, float(x.data.flat[0]))
    assert r_tv_value(c, 1, 1) == 0
    assert not r_tv_gradient(c, 1, 1).data.any()


@settings(max_examples=30, deadline=None)
@given(tensors)
def test_energy_outside_ball_is_infinite(x):
    n = np.sqrt((x.data ** 2).sum(axis=-1)).max()
    assume(n > 0)
    assert r_b_value(x, RegularizerConfig(B=n * 0.999)) == float("inf")
    assert np.isfinite(r_b_value(x, RegularizerConfig(B=n)))
