import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mace.core import HyperParams
from mace.dualconv import (
    EPS_SHIFT,
    ConvKernel,
    DomainError,
    GradientSingularityError,
    InvalidKernelError,
    amplify_time,
    dualistic_conv,
    dualistic_conv_grad,
    freq_pool,
    pad_matrix,
    peak_shift,
    power_conv,
    valley_shift,
)
from oracles import amplify_direct, central_diff, dualistic_conv_direct, rel_err


# -- kernel ----------------------------------------------------------------------

@pytest.mark.parametrize("gamma", [2, 1, -1, 0, 4, -6])
def test_kernel_rejects_inadmissible_gamma(gamma):
    with pytest.raises(InvalidKernelError):
        ConvKernel(np.ones(3), gamma)


def test_kernel_rejects_bad_sigma_stride_and_empty():
    with pytest.raises(InvalidKernelError):
        ConvKernel(np.ones(3), 3, sigma=0.0)
    with pytest.raises(InvalidKernelError):
        ConvKernel(np.ones(3), 3, stride=0)
    with pytest.raises(InvalidKernelError):
        ConvKernel(np.ones(0), 3)


def test_uniform_kernel_defaults_sigma_to_length():
    k = ConvKernel.uniform(4, -5)
    assert k.sigma == 4.0 and k.length == 4 and k.gamma == -5


# -- forward examples ----------------------------------------------------------------

def test_constant_input_preserved():
    out = dualistic_conv(np.array([2.0, 2.0, 2.0]), ConvKernel(np.ones(3), 3, sigma=3.0))
    np.testing.assert_allclose(out, [2.0], rtol=1e-15)


def test_peak_dominance_example():
    out = dualistic_conv(np.array([1.0, 1.0, 10.0]), ConvKernel(np.ones(3), 7))
    # (1 + 1 + 1e7) ** (1/7), frozen from the direct formula
    assert out[0] == pytest.approx(10.000000285714275, rel=1e-14)


def test_valley_picks_minimum_example():
    out = dualistic_conv(np.array([1.0, 1.0, 0.1]), ConvKernel(np.ones(3), -3))
    # (1 + 1 + 1000) ** (-1/3)
    assert out[0] == pytest.approx(0.09993342, rel=1e-7)
    assert out[0] == pytest.approx(1002.0 ** (-1 / 3), rel=1e-14)


def test_output_length_with_stride():
    x = np.arange(1.0, 12.0)
    for L, s in [(3, 1), (3, 2), (4, 4), (5, 3)]:
        out = dualistic_conv(x, ConvKernel(np.ones(L), 3, stride=s))
        assert out.size == (x.size - L) // s + 1


def test_negative_gamma_domain_error_names_index():
    with pytest.raises(DomainError, match=r"x\[2\]"):
        dualistic_conv(np.array([1.0, 0.5, 0.0, 2.0]), ConvKernel(np.ones(2), -3))


def test_non_finite_input_rejected():
    with pytest.raises(Exception, match="non-finite"):
        dualistic_conv(np.array([1.0, np.nan, 2.0]), ConvKernel(np.ones(2), 3))


@given(
    arrays(np.float64, 8, elements=st.floats(-3, 3)),
    arrays(np.float64, 3, elements=st.floats(-1, 1)),
    st.sampled_from([3, 5, 7]),
    st.floats(0.5, 4),
)
def test_forward_matches_direct_formula(x, alpha, gamma, sigma):
    out = dualistic_conv(x, ConvKernel(alpha, gamma, sigma))
    ref = dualistic_conv_direct(x, alpha, gamma, sigma)
    np.testing.assert_allclose(out, ref, rtol=1e-9, atol=1e-12)


@given(arrays(np.float64, 6, elements=st.floats(0.05, 5)), st.sampled_from([-3, -5, -7]))
def test_valley_forward_matches_direct_formula(x, gamma):
    out = dualistic_conv(x, ConvKernel.uniform(3, gamma))
    np.testing.assert_allclose(out, dualistic_conv_direct(x, [1.0] * 3, gamma, 3.0), rtol=1e-9)


def test_no_overflow_at_large_magnitudes():
    # 1e60 ** 7 overflows a double; the rescaled form does not
    out = dualistic_conv(np.array([1e60, 2e60, 1e60]), ConvKernel(np.ones(3), 7, sigma=3.0))
    assert np.isfinite(out).all() and out[0] == pytest.approx(2e60 * ((2 + 2**7) / 3 / 2**7) ** (1 / 7))
    out = dualistic_conv(np.array([1e-60, 2e-60]), ConvKernel(np.ones(2), -7, sigma=2.0))
    assert np.isfinite(out).all() and out[0] > 0


@given(arrays(np.float64, 5, elements=st.floats(0, 10)))
def test_peak_monotone_in_gamma_toward_max(x):
    # with sigma = L the output is a power mean, so it rises with gamma toward the max
    outs = [dualistic_conv(x, ConvKernel.uniform(5, g))[0] for g in (3, 5, 7, 11, 13)]
    assert all(b >= a - 1e-9 * max(1.0, abs(a)) for a, b in zip(outs, outs[1:]))
    assert x.max() * 5 ** (-1 / 13) - 1e-9 <= outs[-1] <= x.max() + 1e-9


@given(arrays(np.float64, 7, elements=st.floats(-5, 5)), st.sampled_from([3, 5, 7, -3, -5, -7]))
def test_unit_kernel_is_identity(x, gamma):
    if gamma < 0:
        x = np.abs(x) + 0.1
    np.testing.assert_allclose(dualistic_conv(x, ConvKernel([1.0], gamma)), x, rtol=1e-14)


# -- time-domain amplification ---------------------------------------------------------

def test_amplify_constant_series_unchanged():
    x = np.full((2, 30), 0.37)
    np.testing.assert_allclose(amplify_time(x, HyperParams()), x, rtol=1e-14)


def test_amplify_unit_kernel_is_identity():
    x = np.random.default_rng(0).random((3, 25))
    hp = HyperParams(kernel_len=1, sigma_t=1.0)
    np.testing.assert_allclose(amplify_time(x, hp), x, atol=1e-14)


def test_amplify_spike_example():
    hp = HyperParams(kernel_len=3, sigma_t=3.0, gamma_t=7)
    out = amplify_time(np.array([0.0, 0.0, 5.0, 0.0, 0.0]), hp)
    # peak ~ 5 * 3 ** (-1/7), valley ~ 0 over each window touching the spike
    np.testing.assert_allclose(out, [0.0, 2.1326, 2.1326, 2.1326, 0.0], atol=1e-4)
    assert (out[1:4] > 0.4 * 5).all() and np.abs(out[[0, 4]]).max() < 1e-12


@given(arrays(np.float64, (2, 15), elements=st.floats(-2, 2)), st.sampled_from([3, 5]), st.sampled_from([3, 7]))
def test_amplify_matches_direct(x, L, gamma):
    hp = HyperParams(kernel_len=L, sigma_t=float(L), gamma_t=gamma)
    out = amplify_time(x, hp)
    for row, o in zip(x, out):
        np.testing.assert_allclose(o, amplify_direct(row, L, gamma, float(L)), rtol=1e-9, atol=1e-12)


def test_amplify_preserves_shape_for_stacks():
    x = np.random.default_rng(1).random((4, 3, 40))
    assert amplify_time(x, HyperParams()).shape == x.shape


def test_valid_conv_influence_set_is_kernel_span():
    rng = np.random.default_rng(3)
    x = rng.uniform(1, 2, 20)
    L = 4
    k = ConvKernel.uniform(L, 7)
    base = dualistic_conv(x, k)
    for i in range(x.size):
        y = x.copy()
        y[i] += 0.5
        changed = np.flatnonzero(dualistic_conv(y, k) != base)
        expect = [j for j in range(i - L + 1, i + 1) if 0 <= j < base.size]
        assert list(changed) == expect


def test_amplify_spike_spreads_over_kernel_length():
    rng = np.random.default_rng(4)
    x = 0.5 + 0.01 * rng.standard_normal(60)
    y = x.copy()
    y[30] += 5.0
    hp = HyperParams()
    d = np.abs(amplify_time(y, hp) - amplify_time(x, hp))
    assert list(np.flatnonzero(d > 0.1)) == [28, 29, 30, 31, 32]


# -- shifts and frequency-domain pooling ------------------------------------------------

def test_shifts():
    x = np.array([[0.3, -1.0, 2.0], [0.5, 0.7, 0.2]])
    np.testing.assert_allclose(valley_shift(x), [[1.1], [-0.1]])
    np.testing.assert_allclose(peak_shift(x), [[1.1], [0.0]])
    assert EPS_SHIFT == 0.1


def test_freq_pool_constant():
    np.testing.assert_allclose(freq_pool(np.full(4, 4.0), ConvKernel(np.ones(2), 7, sigma=2.0)), [4.0, 4.0])


def test_freq_pool_peak_example():
    out = freq_pool(np.array([1.0, 9.0, 2.0, 2.0]), ConvKernel(np.ones(2), 7))
    np.testing.assert_allclose(out, [(1 + 9.0**7) ** (1 / 7), 2 * 2 ** (1 / 7)], rtol=1e-14)
    assert out[0] == pytest.approx(9.0000001, abs=1e-6) and out[1] == pytest.approx(2.2082, abs=1e-4)


def test_freq_pool_padding_rules():
    a = np.array([3.0, 1.0, 2.0, 4.0, 6.0])
    peak = freq_pool(a, ConvKernel(np.ones(2), 7))
    assert peak.size == 3
    assert peak[2] == pytest.approx(6.0)  # zero-padded partner
    P = pad_matrix(5, 2, -7)
    np.testing.assert_allclose(a @ P, [3, 1, 2, 4, 6, 6])
    P = pad_matrix(5, 3, -7)
    np.testing.assert_allclose(a @ P, [3, 1, 2, 4, 6, 5])
    np.testing.assert_allclose(a @ pad_matrix(5, 3, 7), [3, 1, 2, 4, 6, 0])


@given(arrays(np.float64, 10, elements=st.floats(0, 20)), st.sampled_from([2, 5]))
def test_peak_pool_dominates_valley_pool(a, L):
    peak = freq_pool(a, ConvKernel.uniform(L, 7, sigma=1.0))
    valley = freq_pool(a, ConvKernel.uniform(L, -7, sigma=1.0))
    assert (peak >= valley - 1e-9).all()


def test_freq_pool_rejects_negative_amplitudes():
    with pytest.raises(DomainError):
        freq_pool(np.array([1.0, -0.5]), ConvKernel(np.ones(2), 3))


# -- gradients --------------------------------------------------------------------

def test_unit_kernel_gradient_is_upstream():
    x = np.array([0.3, 1.7, 2.2])
    up = np.array([0.5, -1.0, 2.0])
    gx, _ = dualistic_conv_grad(x, ConvKernel([1.0], 3), up)
    np.testing.assert_array_equal(gx, up)


def test_zero_upstream_gives_zero_gradients():
    x = np.array([0.5, 1.0, 2.0, 1.5])
    gx, ga = dualistic_conv_grad(x, ConvKernel(np.ones(2), 5), np.zeros(3))
    assert not gx.any() and not ga.any()


def _fd_check(x, kernel, padding="valid", seed=0):
    up = np.random.default_rng(seed).standard_normal(dualistic_conv(x, kernel, padding).size)
    gx, ga = dualistic_conv_grad(x, kernel, up, padding)
    fx = central_diff(lambda v: float(up @ dualistic_conv(v, kernel, padding)), x)
    fa = central_diff(
        lambda w: float(up @ dualistic_conv(x, ConvKernel(w, kernel.gamma, kernel.sigma, kernel.stride), padding)),
        np.array(kernel.weights),
    )
    return rel_err(gx, fx), rel_err(ga, fa)


def test_gradient_example_random_positive_input():
    x = np.random.default_rng(0).uniform(0.5, 2.0, 5)
    ex, ea = _fd_check(x, ConvKernel.uniform(5, 3))
    assert ex <= 1e-4 and ea <= 1e-4


@given(
    arrays(np.float64, 9, elements=st.floats(0.5, 2.0)),
    arrays(np.float64, 3, elements=st.floats(0.2, 1.0)),
    st.sampled_from([3, 5, 7, -3, -5, -7]),
    st.sampled_from([1, 3]),
    st.sampled_from(["valid", "same"]),
)
def test_gradient_matches_finite_differences(x, alpha, gamma, stride, padding):
    ex, ea = _fd_check(x, ConvKernel(alpha, gamma, 1.5, stride), padding)
    assert ex <= 1e-4 and ea <= 1e-4


def test_gradient_singularity_clamped_or_strict():
    x = np.array([1.0, -1.0])  # pre-root sum is exactly zero
    k = ConvKernel(np.ones(2), 3)
    gx, ga = dualistic_conv_grad(x, k, np.ones(1))
    assert np.isfinite(gx).all() and np.isfinite(ga).all()
    with pytest.raises(GradientSingularityError):
        dualistic_conv_grad(x, k, np.ones(1), strict=True)


def test_power_conv_linear_mode():
    seg = np.array([[1.0, 2.0, 3.0]])
    assert power_conv(seg, np.array([1.0, 1.0, 1.0]), 1, 2.0)[0] == pytest.approx(3.0)
