import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sfdm.statfeat import ConditionerMode, build_conditioner, compute_features, feature_channels

windows = arrays(np.float64, st.integers(2, 64), elements=st.floats(-100, 100, allow_nan=False))


def test_three_point_window():
    f = compute_features([1.0, 2.0, 3.0])
    sigma = np.sqrt(2 / 3)
    assert f.mean == 2.0
    assert f.std == pytest.approx(sigma, abs=1e-12)
    np.testing.assert_allclose(f.z, [-1 / sigma, 0, 1 / sigma], atol=1e-12)
    assert f.skew == pytest.approx(0.0, abs=1e-12)
    arr = f.as_array()
    assert arr.shape == (4, 3)
    np.testing.assert_allclose(arr[0], 2.0)
    np.testing.assert_allclose(arr[1], 0.8165, atol=1e-4)
    np.testing.assert_allclose(arr[2], [-1.2247, 0, 1.2247], atol=1e-4)


def test_constant_window():
    f = compute_features([5.0, 5, 5, 5])
    assert (f.mean, f.std, f.skew) == (5.0, 0.0, 0.0)
    assert not f.z.any()


def test_right_skew():
    # z = [-1/sqrt3]*3 + [sqrt3]; mean z^3 = 2/sqrt3 > 0
    assert compute_features([0.0, 0, 0, 1]).skew == pytest.approx(2 / np.sqrt(3))


def test_too_short():
    with pytest.raises(ValueError):
        compute_features([1.0])


@given(windows)
@settings(max_examples=100, deadline=None)
def test_z_is_standardised(x):
    f = compute_features(x)
    assume(f.std > 1e-6)
    assert abs(f.z.mean()) < 1e-6
    assert abs(f.z.std() - 1.0) < 1e-6


@given(windows, st.floats(-50, 50))
@settings(max_examples=60, deadline=None)
def test_shift_invariance(x, shift):
    a, b = compute_features(x), compute_features(x + shift)
    assume(a.std > 1e-3)
    np.testing.assert_allclose(a.z, b.z, atol=1e-6)
    assert a.skew == pytest.approx(b.skew, abs=1e-6)


@given(windows, st.floats(0.1, 20))
@settings(max_examples=60, deadline=None)
def test_scale_equivariance(x, scale):
    a, b = compute_features(x), compute_features(x * scale)
    assume(a.std > 1e-3)
    assert b.mean == pytest.approx(a.mean * scale, rel=1e-9, abs=1e-9)
    assert b.std == pytest.approx(a.std * scale, rel=1e-9)
    np.testing.assert_allclose(a.z, b.z, atol=1e-6)
    assert a.skew == pytest.approx(b.skew, abs=1e-6)


def test_symmetric_window_has_zero_skew():
    x = np.array([-3.0, -1, 0, 1, 3]) + 7.0
    assert compute_features(x).skew == pytest.approx(0.0, abs=1e-12)


def test_batch_matches_single():
    x = np.random.default_rng(0).normal(size=(5, 40))
    x[2] = 4.0
    batch = feature_channels(x)
    for i in range(5):
        np.testing.assert_allclose(batch[i], compute_features(x[i]).as_array(), atol=1e-6)


class TestBuildConditioner:
    def test_stat_features_shape_and_order(self):
        x = np.array([1.0, 2.0, 3.0, 6.0])
        c = build_conditioner(x, ConditionerMode.STAT_FEATURES)
        assert c.shape == (4, 4)
        np.testing.assert_allclose(c, compute_features(x).as_array())

    def test_onehot(self):
        c = build_conditioner(np.zeros(6), "class-onehot", 4, labels=[2])
        assert c.shape == (4, 6)
        assert c[2].tolist() == [1.0] * 6
        assert c[[0, 1, 3]].sum() == 0

    def test_onehot_needs_label(self):
        with pytest.raises(ValueError):
            build_conditioner(np.zeros(6), "class-onehot", 4)
        with pytest.raises(ValueError):
            build_conditioner(np.zeros(6), "class-onehot", 4, labels=[None])

    def test_shifted_windows_share_z_and_skew(self):
        x = np.array([1.0, 4.0, 2.0, 8.0, 3.0])
        a = build_conditioner(x, "stat-features")
        b = build_conditioner(x + 2.5, "stat-features")
        np.testing.assert_allclose(a[2:], b[2:], atol=1e-6)
