import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dgq.smoothing import SmoothScale, apply_smooth, channel_maxima, compute_smooth, threshold_rank
from dgq.tensor import gen_synthetic, outlier_columns

import oracles

positive = st.floats(0.0009765625, 1024.0, width=32)


def test_channel_maxima_single_and_batches():
    assert channel_maxima([np.array([[1, -3], [2, 0]])]).tolist() == [2, 3]
    a = np.array([[1.0, -5.0, 0.0]])
    b = np.array([[-4.0, 2.0, 0.5]])
    assert channel_maxima([a, b]).tolist() == [4.0, 5.0, 0.5]


def test_channel_maxima_errors():
    with pytest.raises(ValueError):
        channel_maxima([])
    with pytest.raises(ValueError):
        channel_maxima([np.ones((1, 2)), np.ones((1, 3))])


def test_outlier_columns_have_largest_maxima():
    outliers = {"count": 3, "magnitude": 50}
    z = channel_maxima([np.asarray(gen_synthetic(256, 512, 11, outliers))])
    top3 = np.sort(np.argsort(z)[-3:])
    assert top3.tolist() == outlier_columns(256, 512, 11, outliers).tolist()


def test_equal_z_gives_identity():
    s = compute_smooth(np.full(64, 2.5))
    assert np.all(s.k == 1) and s.threshold == 2.5


def test_worked_percentile_example():
    z = np.array([1.0] * 995 + [50, 60, 70, 80, 100], np.float32)
    s = compute_smooth(z, 0.005)
    assert s.threshold == 50.0
    assert s.k[-5:].tolist() == pytest.approx([1.0, 1.2, 1.4, 1.6, 2.0], rel=1e-6)
    assert np.all(s.k[:995] == 1)


def test_tiny_h_rank_one():
    assert threshold_rank(4, 0.005) == 1
    s = compute_smooth(np.array([1.0, 3.0, 2.0, 0.5]))
    assert s.threshold == 3.0 and np.all(s.k == 1)


def test_rank_guard_against_float_noise():
    # 0.005 * 1000 evaluates to 5.000000000000001 in binary floating point
    assert threshold_rank(1000, 0.005) == 5
    assert threshold_rank(1024, 0.005) == 6
    assert threshold_rank(200, 0.005) == 1


def test_zero_calibration_rejected():
    with pytest.raises(ValueError):
        compute_smooth(np.zeros(8))
    with pytest.raises(ValueError):
        compute_smooth(np.ones(8), percentile=0.0)


def test_apply_identity_and_scalar():
    X, W = np.arange(6.0).reshape(2, 3), np.arange(12.0).reshape(3, 4)
    Xs, Ws = apply_smooth(X, W, SmoothScale.identity(3))
    assert np.array_equal(Xs, X) and np.array_equal(Ws, W)
    s = SmoothScale(np.array([2.0], np.float32), 1.0)
    x1, w1 = apply_smooth(np.array([[4.0]]), np.array([[2.0]]), s)
    assert (x1.item(), w1.item(), (x1 @ w1).item()) == (2.0, 4.0, 8.0)


def test_apply_shape_check():
    with pytest.raises(ValueError):
        apply_smooth(np.ones((2, 3)), np.ones((4, 2)), SmoothScale.identity(3))


def test_product_preserved_double(rng):
    X = rng.standard_normal((16, 32))
    W = rng.standard_normal((32, 8))
    s = compute_smooth(np.abs(X).max(axis=0) * rng.uniform(1, 30, 32), 0.2)
    Xs, Ws = apply_smooth(X, W, s)
    ref = X @ W
    assert np.linalg.norm(Xs @ Ws - ref) / np.linalg.norm(ref) <= 1e-12


@settings(max_examples=80)
@given(st.integers(1, 300).flatmap(lambda h: hnp.arrays(np.float32, h, elements=positive)), st.floats(0.001, 0.5))
def test_threshold_and_k_properties(z, p):
    s = compute_smooth(z, p)
    assert s.threshold == pytest.approx(oracles.threshold(z, p), rel=0, abs=0)
    assert np.all(s.k >= 1)
    below = z <= s.threshold
    assert np.all(s.k[below] == 1)
    above = ~below
    if above.any():
        assert np.all(s.k[above] > 1)
        # smoothed maxima of the clipped channels land on the threshold
        assert np.allclose(z[above] / s.k[above], s.threshold, rtol=1e-6)


@settings(max_examples=60)
@given(st.integers(2, 64).flatmap(lambda h: hnp.arrays(np.float32, h, elements=positive)), st.data())
def test_monotone_in_z(z, data):
    j = data.draw(st.integers(0, z.size - 1))
    bump = data.draw(st.floats(1.0, 100.0))
    z2 = z.copy()
    z2[j] = np.float32(z[j] * bump)
    assert compute_smooth(z2, 0.05).k[j] >= compute_smooth(z, 0.05).k[j]


@settings(max_examples=40)
@given(st.integers(0, 10_000))
def test_smoothing_preserves_product_property(seed):
    r = np.random.default_rng(seed)
    X = r.standard_normal((6, 12)) * r.uniform(0.1, 40, 12)
    W = r.standard_normal((12, 5))
    Xs, Ws = apply_smooth(X, W, compute_smooth(np.abs(X).max(axis=0), 0.25))
    ref = X @ W
    assert np.linalg.norm(Xs @ Ws - ref) <= 1e-12 * np.linalg.norm(ref)


@pytest.mark.parametrize("h,count", [(800, 3), (1000, 4), (1024, 5)])
def test_k_exactly_on_injected_outliers(h, count):
    outliers = {"count": count, "magnitude": 50}
    z = channel_maxima([np.asarray(gen_synthetic(256, h, 5, outliers))])
    s = compute_smooth(z)
    assert np.flatnonzero(s.k > 1).tolist() == outlier_columns(256, h, 5, outliers).tolist()


def test_more_outliers_than_top_set():
    # h=256 keeps only a rank-2 top set: one of three outliers sits on the threshold having k=1
    outliers = {"count": 3, "magnitude": 50}
    z = channel_maxima([np.asarray(gen_synthetic(256, 256, 5, outliers))])
    k = compute_smooth(z).k
    assert (k > 1).sum() == 1
    assert set(np.flatnonzero(k > 1)) <= set(outlier_columns(256, 256, 5, outliers))
