import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from croprot.features import (AUGMENT_CUTOFFS, WINDOWS, augment_crop, draw_cutoff, features_all, functionals,
                              load_feature_cache, save_feature_cache, season_features, truncate_at,
                              window_slices)
from croprot.prep import GRID_DAYS, SmoothSeries


def quantile_oracle(x, q):
    s = sorted(x)
    pos = q * (len(s) - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


def test_window_layout():
    w = window_slices()
    assert len(w) == 25
    assert (w[0].start, w[0].stop) == (0, 15)
    assert list(GRID_DAYS[w[24]]) == [360, 362, 364]
    sizes = [s.stop - s.start for s in w]
    assert sizes[:23] == [15] * 23 and sizes[23:] == [10, 3]
    for i, s in enumerate(w):
        days = GRID_DAYS[s]
        assert days.min() >= 15 * i and days.max() < min(15 * i + 30, 365)


def test_functionals_examples():
    np.testing.assert_allclose(functionals([1, 2, 3, 4]), [2.5, np.sqrt(1.25), 1.75, 2.5, 3.25, 1, 4])
    np.testing.assert_array_equal(functionals([5, 5, 5]), [5, 0, 5, 5, 5, 5, 5])
    np.testing.assert_array_equal(functionals([0.3]), [0.3, 0, 0.3, 0.3, 0.3, 0.3, 0.3])
    with pytest.raises(ValueError):
        functionals([])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-100, 100)))
def test_functionals_match_oracle(x):
    f = functionals(x)
    ref = [np.mean(x), np.sqrt(np.mean((x - np.mean(x)) ** 2)), quantile_oracle(x, 0.25),
           quantile_oracle(x, 0.5), quantile_oracle(x, 0.75), min(x), max(x)]
    np.testing.assert_allclose(f, ref, rtol=1e-9, atol=1e-9)
    assert f[5] <= f[2] <= f[3] <= f[4] <= f[6] and f[1] >= 0


def _smooth(values):
    return SmoothSeries(np.asarray(values, dtype=np.float64))


def test_season_features_constant_and_shape():
    f = season_features(_smooth(np.full((183, 4), 0.7)))
    assert f.shape == (25, 28)
    blk = f.reshape(25, 4, 7)
    np.testing.assert_array_equal(blk[:, :, 1], 0)
    np.testing.assert_allclose(blk[:, :, [0, 2, 3, 4, 5, 6]], 0.7)


def test_season_features_order_and_monotone():
    vals = np.zeros((183, 4))
    vals[:, 2] = np.linspace(0, 6, 183)
    vals[:, 0] = 0.05
    f = season_features(_smooth(vals)).reshape(25, 4, 7)
    assert np.all(np.diff(f[:, 2, 0]) > 0)           # LAI means increase
    np.testing.assert_allclose(f[:, 0, 0], 0.05)       # B4 block first
    for i, s in enumerate(WINDOWS):
        np.testing.assert_allclose(f[i, 2], functionals(vals[s, 2]))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10), st.floats(-5, 5), st.integers(0, 2 ** 31 - 1))
def test_season_features_affine(a, b, seed):
    x = np.random.default_rng(seed).random((183, 4))
    f = season_features(_smooth(x)).reshape(25, 4, 7)
    g = season_features(_smooth(a * x + b)).reshape(25, 4, 7)
    loc = [0, 2, 3, 4, 5, 6]
    np.testing.assert_allclose(g[:, :, loc], a * f[:, :, loc] + b, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(g[:, :, 1], a * f[:, :, 1], rtol=1e-9, atol=1e-9)


def test_truncate_examples():
    f = np.random.default_rng(0).random((25, 28)) + 1
    np.testing.assert_array_equal(truncate_at(f, 365), f)
    assert not truncate_at(f, 0).any()
    t = truncate_at(f, 180)
    assert not t[12:].any()
    np.testing.assert_array_equal(t[:12], f[:12])
    t = truncate_at(f, 165)
    assert not t[11:].any() and t[10].all()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 365), st.integers(0, 365))
def test_truncate_composes(a, b):
    f = np.random.default_rng(a * 400 + b).random((2, 25, 28)) + 1
    np.testing.assert_array_equal(truncate_at(truncate_at(f, a), b), truncate_at(f, min(a, b)))


def test_augment_distribution():
    rng = np.random.default_rng(2024)
    draws = np.array([draw_cutoff(rng) for _ in range(10_000)])
    counts = np.array([(draws == c).sum() for c in AUGMENT_CUTOFFS])
    assert counts.sum() == 10_000
    p = 1 / len(AUGMENT_CUTOFFS)
    sigma = np.sqrt(10_000 * p * (1 - p))
    assert np.all(np.abs(counts - 10_000 * p) < 3 * sigma)
    from scipy.stats import chisquare
    assert chisquare(counts).pvalue > 1e-3


def test_augment_full_season_is_identity():
    f = np.random.default_rng(1).random((25, 28))

    class Fixed:
        def integers(self, n):
            return n - 1

    np.testing.assert_array_equal(augment_crop(f, Fixed()), f)


def test_feature_cache_round_trip(tmp_path, small_dataset):
    from croprot.prep import prep_all

    smooth = prep_all(list(small_dataset.iter_series())[:10])
    feats = {k: v.astype(np.float32) for k, v in features_all(smooth).items()}
    save_feature_cache(tmp_path / "f.feat", feats)
    back = load_feature_cache(tmp_path / "f.feat")
    assert back.keys() == feats.keys()
    for k in feats:
        assert back[k].size == 700
        np.testing.assert_array_equal(back[k], feats[k])
    assert (tmp_path / "f.feat").read_bytes()[:4] == b"FEAT"
