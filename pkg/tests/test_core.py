import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mace.core import (
    DataError,
    HyperParams,
    NormStats,
    TimeSeriesWindow,
    minmax_normalize,
    n_bins,
    sliding_windows,
    window_offsets,
    window_stack,
)


def test_minmax_endpoints():
    out, st_ = minmax_normalize(np.array([[0.0, 5.0, 10.0]]))
    np.testing.assert_allclose(out, [[0.0, 0.5, 1.0]])
    np.testing.assert_array_equal(st_.lo, [0.0])
    np.testing.assert_array_equal(st_.hi, [10.0])


def test_minmax_constant_feature_maps_to_half():
    out, _ = minmax_normalize(np.array([[3.0, 3.0, 3.0]]))
    np.testing.assert_array_equal(out, [[0.5, 0.5, 0.5]])


def test_minmax_applies_training_stats_without_clipping():
    out, _ = minmax_normalize(np.array([[12.0]]), NormStats([0.0], [10.0]))
    assert out[0, 0] == pytest.approx(1.2)


def test_minmax_rejects_non_finite_with_coordinate():
    x = np.zeros((2, 4))
    x[1, 2] = np.nan
    with pytest.raises(DataError, match=r"\(1, 2\)"):
        minmax_normalize(x)


def test_minmax_stats_feature_count_mismatch():
    with pytest.raises(DataError):
        minmax_normalize(np.zeros((2, 3)), NormStats([0.0], [1.0]))


def test_normstats_rejects_inverted_range():
    with pytest.raises(DataError):
        NormStats([1.0], [0.0])


@given(arrays(np.float64, (3, 12), elements=st.floats(-1e3, 1e3)))
def test_minmax_training_output_in_unit_interval(x):
    out, _ = minmax_normalize(x)
    assert (out >= 0).all() and (out <= 1 + 1e-12).all()


@given(arrays(np.float64, (2, 10), elements=st.floats(-1e3, 1e3)), arrays(np.float64, (2, 7), elements=st.floats(-1e3, 1e3)))
def test_minmax_idempotent_given_stats(train, test):
    _, stats = minmax_normalize(train)
    a, _ = minmax_normalize(test, stats)
    b, _ = minmax_normalize(test, stats)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("T,W,hop,count", [(40, 40, 1, 1), (45, 40, 1, 6), (100, 40, 7, 9)])
def test_sliding_window_counts(T, W, hop, count):
    wins = sliding_windows(np.arange(T, dtype=float), W, hop)
    assert len(wins) == count == (T - W) // hop + 1
    assert [w.start_index for w in wins] == list(range(0, hop * count, hop))


def test_sliding_windows_too_short_reports_lengths():
    with pytest.raises(DataError, match="39.*40"):
        sliding_windows(np.zeros(39), 40)


def test_sliding_windows_bad_hop():
    with pytest.raises(DataError):
        window_stack(np.zeros(50), 40, 0)


@given(st.integers(5, 60), st.integers(1, 5))
def test_hop_one_windowing_is_lossless(T, W):
    x = np.random.default_rng(T).random((2, T + W))
    stack = window_stack(x, W, 1)
    rebuilt = np.concatenate([stack[:, :, 0].T, stack[-1, :, 1:]], axis=1)
    np.testing.assert_array_equal(rebuilt, x)


def test_window_stack_matches_windows():
    x = np.random.default_rng(0).random((3, 50))
    stack = window_stack(x, 40, 3)
    wins = sliding_windows(x, 40, 3, service_id="a")
    for s, w in zip(stack, wins):
        np.testing.assert_array_equal(s, w.values)
        assert w.service_id == "a"
    np.testing.assert_array_equal(window_offsets(50, 40, 3), [w.start_index for w in wins])


def test_window_is_immutable_and_finite():
    w = TimeSeriesWindow(np.ones((2, 4)))
    with pytest.raises(ValueError):
        w.values[0, 0] = 2.0
    with pytest.raises(DataError):
        TimeSeriesWindow(np.array([[1.0, np.inf]]))
    with pytest.raises(DataError):
        TimeSeriesWindow(np.zeros((0, 4)))


def test_hyperparams_defaults_and_strides():
    hp = HyperParams()
    assert (hp.window_size, hp.kernel_len, hp.k_bases, hp.gamma_t, hp.gamma_f) == (40, 5, 20, 7, 7)
    assert (hp.sigma_t, hp.sigma_f, hp.learning_rate) == (5.0, 5.0, 1e-3)
    assert hp.stride_t == 1 and hp.stride_f == hp.kernel_len


@pytest.mark.parametrize(
    "kw",
    [
        {"gamma_t": 4},
        {"gamma_f": 1},
        {"gamma_t": -1},
        {"sigma_t": 0.0},
        {"sigma_f": -1.0},
        {"learning_rate": 0.0},
        {"kernel_len": 0},
        {"k_bases": 22},
    ],
)
def test_hyperparams_validation(kw):
    with pytest.raises(DataError):
        HyperParams(**kw)


def test_hyperparams_accepts_negative_odd_and_full_basis():
    HyperParams(gamma_t=-3, k_bases=n_bins(40))
    assert n_bins(40) == 21 and n_bins(41) == 21
