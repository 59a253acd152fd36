import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mace.core import DataError, TimeSeriesWindow, sliding_windows
from mace.patex import (
    BasisSet,
    FrequencyRepresentation,
    Spectrum,
    ca_dft,
    ca_idft,
    characterize,
    read_bases,
    represent,
    select_basis,
    write_bases,
)
from oracles import dft_direct, projection_lstsq

W = 40
t = np.arange(W)


def sine(f, phase=0.0):
    return np.sin(2 * np.pi * f * t / W + phase)


# -- BasisSet ----------------------------------------------------------------------

def test_basis_sorted_and_validated():
    b = BasisSet(np.array([[7, 3, 0]]), W, "s")
    np.testing.assert_array_equal(b.freqs, [[0, 3, 7]])
    assert (b.m_feat, b.k) == (1, 3)
    with pytest.raises(DataError):
        BasisSet(np.array([[3, 3]]), W)
    with pytest.raises(DataError):
        BasisSet(np.array([[21]]), W)
    with pytest.raises(DataError):
        BasisSet(np.array([[-1]]), W)
    with pytest.raises(DataError):
        BasisSet(np.array([[1.5]]), W)


def test_full_basis():
    b = BasisSet.full(3, W)
    assert b.freqs.shape == (3, 21)
    np.testing.assert_array_equal(b.freqs[2], np.arange(21))


# -- selection ---------------------------------------------------------------------

def test_select_single_dominant_line():
    wins = [TimeSeriesWindow(sine(3)) for _ in range(5)]
    assert select_basis(wins, 1).freqs.tolist() == [[3]]


def test_select_alternating_lines():
    # each window carries both lines with alternating dominance
    wins = [TimeSeriesWindow(sine(3) + 0.5 * sine(7) if i % 2 == 0 else sine(7) + 0.5 * sine(3)) for i in range(10)]
    b = select_basis(wins, 2)
    assert b.freqs.tolist() == [[3, 7]]
    np.testing.assert_array_equal(b.tallies, [[10, 10]])


def test_select_full_k_is_vacuous():
    x = np.random.default_rng(0).random((6, 2, W))
    b = select_basis(x, 21)
    np.testing.assert_array_equal(b.freqs, BasisSet.full(2, W).freqs)


def test_select_tie_break_prefers_lower_index():
    # every bin has zero amplitude, so all tallies tie
    b = select_basis(np.zeros((3, 1, W)), 4)
    assert b.freqs.tolist() == [[0, 1, 2, 3]]


def test_select_per_feature_and_service_id():
    x = np.stack([sine(2), sine(9)])
    wins = sliding_windows(np.tile(x, 3), W, W, service_id="svc")
    b = select_basis(wins, 1)
    assert b.freqs.tolist() == [[2], [9]] and b.service_id == "svc"


def test_select_rejects_empty_and_bad_k():
    with pytest.raises(DataError):
        select_basis([], 2)
    with pytest.raises(DataError):
        select_basis(np.zeros((1, 1, W)), 22)


def test_select_is_deterministic():
    x = np.random.default_rng(5).random((20, 3, W))
    a, b = select_basis(x, 5), select_basis(x.copy(), 5)
    np.testing.assert_array_equal(a.freqs, b.freqs)
    np.testing.assert_array_equal(a.tallies, b.tallies)


# -- transforms --------------------------------------------------------------------

def test_dft_of_sine():
    F = ca_dft(TimeSeriesWindow(sine(3)), BasisSet(np.array([[3]]), W))
    assert F.amplitude[0, 0] == pytest.approx(20.0, abs=1e-12)
    assert F.phase[0, 0] == pytest.approx(-np.pi / 2, abs=1e-12)


def test_dft_of_constant_and_zero():
    F = ca_dft(np.full(W, 0.7), BasisSet(np.array([[0]]), W))
    assert F.coeffs[0, 0] == pytest.approx(0.7 * W) and F.phase[0, 0] == 0.0
    assert not ca_dft(np.zeros((2, W)), BasisSet.full(2, W)).coeffs.any()


def test_subset_matches_direct_full_dft():
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.standard_normal((3, W))
        freqs = np.stack([np.sort(rng.choice(21, 6, replace=False)) for _ in range(3)])
        F = ca_dft(x, BasisSet(freqs, W)).coeffs
        for i in range(3):
            np.testing.assert_allclose(F[i], dft_direct(x[i])[freqs[i]], atol=1e-12, rtol=0)


def test_round_trip_full_basis():
    x = np.random.default_rng(2).standard_normal((5, W))
    b = BasisSet.full(5, W)
    back = ca_idft(ca_dft(x, b), b)
    assert isinstance(back, TimeSeriesWindow)
    np.testing.assert_allclose(back.values, x, atol=1e-9)


def test_round_trip_odd_window():
    x = np.random.default_rng(3).standard_normal((2, 41))
    b = BasisSet.full(2, 41)
    np.testing.assert_allclose(ca_idft(ca_dft(x, b), b).values, x, atol=1e-9)


def test_idft_recovers_sine_under_noise():
    rng = np.random.default_rng(4)
    noise = 0.01 * rng.standard_normal(W)
    b = BasisSet(np.array([[3]]), W)
    xh = ca_idft(ca_dft(sine(3) + noise, b), b).values[0]
    assert np.sqrt(np.mean((xh - sine(3)) ** 2)) <= np.sqrt(np.mean(noise**2))


@given(arrays(np.float64, W, elements=st.floats(-5, 5)), st.lists(st.integers(0, 20), min_size=1, max_size=8, unique=True))
def test_restricted_inverse_is_least_squares_projection(x, freqs):
    b = BasisSet(np.array([freqs]), W)
    xh = ca_idft(ca_dft(x, b), b).values[0]
    np.testing.assert_allclose(xh, projection_lstsq(x, sorted(freqs), W), atol=1e-9)


@given(arrays(np.float64, (2, W), elements=st.floats(-5, 5)), st.integers(1, 21))
def test_projection_does_not_add_energy(x, k):
    b = BasisSet(np.tile(np.arange(k), (2, 1)), W)
    xh = ca_idft(ca_dft(x, b), b).values
    assert (xh**2).sum() <= (x**2).sum() + 1e-9


@given(
    arrays(np.float64, (2, W), elements=st.floats(-5, 5)),
    arrays(np.float64, (2, W), elements=st.floats(-5, 5)),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_dft_is_linear(x, y, a, c):
    b = BasisSet(np.array([[0, 2, 5], [1, 7, 20]]), W)
    lhs = ca_dft(a * x + c * y, b).coeffs
    rhs = a * ca_dft(x, b).coeffs + c * ca_dft(y, b).coeffs
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_zero_spectrum_gives_zero_window():
    b = BasisSet(np.array([[1, 4]]), W)
    assert not ca_idft(Spectrum(np.zeros((1, 2), complex)), b).values.any()


def test_transforms_accept_stacks():
    x = np.random.default_rng(6).random((7, 2, W))
    b = BasisSet(np.array([[0, 3], [1, 2]]), W)
    F = ca_dft(x, b)
    assert F.coeffs.shape == (7, 2, 2)
    back = ca_idft(F, b)
    assert isinstance(back, np.ndarray) and back.shape == x.shape


def test_shape_mismatches():
    b = BasisSet(np.array([[1, 2]]), W)
    with pytest.raises(DataError):
        ca_dft(np.zeros(39), b)
    with pytest.raises(DataError):
        ca_dft(np.zeros((2, W)), b)
    with pytest.raises(DataError):
        ca_idft(Spectrum(np.zeros((1, 3), complex)), b)


# -- characterization ---------------------------------------------------------------

def test_marks():
    b = BasisSet(np.array([[10]]), W)
    rep = characterize(Spectrum(np.array([[3 + 4j]])), b)
    assert rep.tensor.shape == (3, 1, 1)
    assert rep.tensor[0, 0, 0] == pytest.approx(5.0)
    assert rep.tensor[1, 0, 0] == pytest.approx(1.0)
    assert rep.tensor[2, 0, 0] == pytest.approx(0.0, abs=1e-15)
    assert rep.phase[0, 0] == pytest.approx(np.arctan2(4, 3))


def test_zero_spectrum_channels():
    b = BasisSet(np.array([[1, 5, 9]]), W)
    rep = characterize(Spectrum(np.zeros((1, 3), complex)), b)
    assert not rep.amplitude.any()
    s, c = b.marks
    np.testing.assert_array_equal(rep.tensor[1], s)
    np.testing.assert_array_equal(rep.tensor[2], c)


@given(arrays(np.float64, (4, 2, W), elements=st.floats(-5, 5)))
def test_represent_channel_invariants(x):
    b = BasisSet(np.array([[0, 3, 7], [2, 5, 20]]), W)
    rep = represent(x, b)
    assert isinstance(rep, FrequencyRepresentation)
    np.testing.assert_array_equal(rep.amplitude, ca_dft(x, b).amplitude)
    assert (rep.amplitude >= 0).all()
    assert (np.abs(rep.tensor[:, 1:]) <= 1).all()


def test_polar_round_trip():
    F = np.array([[1 + 2j, -3 + 0.5j]])
    S = Spectrum(F)
    np.testing.assert_allclose(Spectrum.from_polar(S.amplitude, S.phase).coeffs, F)


# -- persistence ----------------------------------------------------------------------

def test_bases_csv_round_trip(tmp_path):
    a = BasisSet(np.array([[0, 3], [2, 9]]), W, "a", np.array([[5, 4], [3, 3]]))
    b = BasisSet(np.array([[1, 4], [5, 6]]), W, "b")
    path = tmp_path / "bases.csv"
    write_bases(path, [a, b])
    assert path.read_text().splitlines()[0] == "service_id,feature_index,freq_index,tally"
    got = read_bases(path, W)
    for sid, want in (("a", a), ("b", b)):
        np.testing.assert_array_equal(got[sid].freqs, want.freqs)
        assert got[sid].service_id == sid
    np.testing.assert_array_equal(got["a"].tallies, a.tallies)


def test_bases_csv_errors(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("bad,header\n")
    with pytest.raises(DataError):
        read_bases(p, W)
    p.write_text("service_id,feature_index,freq_index,tally\na,0,1,2\na,1,1,2\na,1,2,2\n")
    with pytest.raises(DataError, match="ragged"):
        read_bases(p, W)
    p.write_text("service_id,feature_index,freq_index,tally\na,0,x,2\n")
    with pytest.raises(DataError, match=":2:"):
        read_bases(p, W)
