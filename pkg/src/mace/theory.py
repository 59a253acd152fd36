"""Executable checks for the analysis behind pooling and basis restriction.

Two results are embodied here.

* A power-mean bound on how far a pooled value drifts from the amplitudes it
  summarises, for Gaussian amplitudes (``theorem1_bound`` versus a Monte
  Carlo estimate from ``mc_gap``).
* Reconstruction error of a restricted basis measured as a KL divergence of
  normalised spectra, and the resulting gap between anomalies and normal
  data (``kl_recon_error``, ``theorem2_gap``, ``corollary1_*``).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import DataError
from .dualconv import power_conv
from .patex import BasisSet, ca_dft


@dataclass(frozen=True)
class GaussianSpectrumModel:
    """Independent Gaussian amplitudes: bin i ~ N(mu_i, nu_i**2).

    ``nu`` holds standard deviations (the diagonal of the covariance read as
    a scale, so that ``nu**gamma`` and ``mu**gamma`` share units).
    """

    mu: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        if mu.ndim != 1 or mu.shape != nu.shape or mu.size == 0:
            raise DataError(f"mu and nu must be equal-length vectors, got {mu.shape} and {nu.shape}")
        if (nu < 0).any():
            raise DataError("nu must be non-negative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)

    @property
    def n(self) -> int:
        return self.mu.size

    def sample(self, trials: int, rng: np.random.Generator) -> np.ndarray:
        return self.mu + self.nu * rng.standard_normal((trials, self.n))


@dataclass(frozen=True)
class NormalizedSpectrum:
    """A probability vector over bins, in the reference order of the normal spectrum.

    ``from_amplitudes`` sorts a normal spectrum by descending amplitude and
    records the order so an anomalous spectrum can be laid out on the same
    bins with ``in_order``.
    """

    q: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if q.ndim != 1 or q.size == 0:
            raise DataError("q must be a non-empty vector")
        if (q < 0).any():
            raise DataError("q must be non-negative")
        if abs(q.sum() - 1.0) > 1e-12:
            raise DataError(f"q must sum to 1 within 1e-12, sums to {q.sum()!r}")
        object.__setattr__(self, "q", q)

    @property
    def n(self) -> int:
        return self.q.size

    @classmethod
    def normalize(cls, amplitudes) -> "NormalizedSpectrum":
        a = np.asarray(amplitudes, dtype=float)
        s = a.sum()
        if s <= 0:
            raise DataError("amplitudes must have a positive sum")
        return cls(a / s)

    @classmethod
    def from_amplitudes(cls, amplitudes) -> tuple["NormalizedSpectrum", np.ndarray]:
        """Normalised spectrum sorted by descending amplitude, plus the bin order."""
        a = np.asarray(amplitudes, dtype=float)
        order = np.argsort(-a, kind="stable")
        return cls.normalize(a[order]), order

    def top(self, k: int) -> float:
        if not 1 <= k <= self.n:
            raise DataError(f"k must lie in [1, {self.n}], got {k}")
        return float(self.q[:k].sum())


@dataclass(frozen=True)
class ShiftModel:
    """Non-negative i.i.d. shifts added to a normal spectrum to model anomalies.

    ``delta_mean`` is in units of the normal spectrum's total amplitude.
    ``exponential`` has mean ``delta_mean``; ``uniform`` draws from
    ``[0, 2 delta_mean]``; ``normal`` draws N(delta_mean, delta_mean**2) and
    truncates at zero.
    """

    delta_mean: float
    dist: str = "exponential"

    def __post_init__(self):
        if not self.delta_mean > 0:
            raise DataError(f"delta_mean must be positive, got {self.delta_mean}")
        if self.dist not in ("exponential", "uniform", "normal"):
            raise DataError(f"unknown shift distribution {self.dist!r}")

    def sample(self, shape, rng: np.random.Generator) -> np.ndarray:
        if self.dist == "exponential":
            d = rng.exponential(self.delta_mean, shape)
        elif self.dist == "uniform":
            d = rng.uniform(0.0, 2 * self.delta_mean, shape)
        else:
            d = rng.normal(self.delta_mean, self.delta_mean, shape)
        return np.maximum(d, 0.0)


def double_factorial(n: int) -> int:
    if n < -1:
        raise DataError(f"double factorial undefined for {n}")
    out = 1
    for v in range(n, 0, -2):
        out *= v
    return out


def _check_gamma(gamma: int) -> None:
    if gamma < 3 or gamma % 2 == 0:
        raise DataError(f"gamma must be an odd integer >= 3, got {gamma}")


def theorem1_bound(model: GaussianSpectrumModel, alpha, gamma: int) -> float:
    """Upper bound on the summed gap between a pooled value and its inputs.

    ``alpha`` are the effective weights, i.e. kernel weights already divided
    by the scaling factor.
    """
    _check_gamma(gamma)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (model.n,):
        raise DataError(f"alpha must have length {model.n}, got shape {alpha.shape}")
    moment = double_factorial(gamma - 1) * model.nu ** gamma * np.abs(alpha)
    inner = float(np.sum(moment + np.abs(alpha * model.mu ** gamma)))
    return 2 ** ((gamma - 1) / gamma) * model.n * inner ** (1 / gamma) - float(model.mu.sum())


def gap_samples(model: GaussianSpectrumModel, alpha, gamma: int, sigma: float, trials: int, seed: int) -> np.ndarray:
    """Per-sample ``sum_j (pool(A) - A_j)`` for amplitudes drawn from ``model``."""
    rng = np.random.default_rng(seed)
    A = model.sample(trials, rng)
    pooled = power_conv(A, np.asarray(alpha, dtype=float), gamma, sigma)
    return model.n * pooled - A.sum(axis=1)


def mc_gap(
    model: GaussianSpectrumModel,
    alpha,
    gamma: int,
    sigma: float = 1.0,
    trials: int = 10_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Monte Carlo mean of the pooling gap and its standard error."""
    _check_gamma(gamma)
    if trials < 1000:
        raise DataError(f"need at least 1000 trials, got {trials}")
    g = gap_samples(model, alpha, gamma, sigma, trials, seed)
    return float(g.mean()), float(g.std(ddof=1) / math.sqrt(trials))


def _q(q) -> np.ndarray:
    return q.q if isinstance(q, NormalizedSpectrum) else NormalizedSpectrum(q).q


def kl_recon_error(q, k: int) -> float:
    """``-log`` of the mass kept by the first k bins; infinite when none is kept."""
    q = _q(q)
    if not 1 <= k <= q.size:
        raise DataError(f"k must lie in [1, {q.size}], got {k}")
    if k == q.size:
        return 0.0  # all mass kept; summation rounding aside
    kept = float(q[:k].sum())
    if kept <= 0:
        return math.inf
    return -math.log(kept)


def theorem2_gap(q_n, q_a, k: int) -> float:
    """``log(sum_k q_N / sum_k q_A)`` on the normal spectrum's bin order."""
    qn, qa = _q(q_n), _q(q_a)
    if qn.shape != qa.shape:
        raise DataError(f"spectra differ in length: {qn.size} vs {qa.size}")
    if not 1 <= k <= qn.size:
        raise DataError(f"k must lie in [1, {qn.size}], got {k}")
    num, den = float(qn[:k].sum()), float(qa[:k].sum())
    if den <= 0:
        return math.inf
    if num <= 0:
        return -math.inf
    return math.log(num) - math.log(den)


def corollary1_holds(q_n, k: int, n: int | None = None) -> bool:
    qn = _q(q_n)
    n = qn.size if n is None else n
    if n != qn.size:
        raise DataError(f"n={n} does not match spectrum length {qn.size}")
    return bool(qn[:k].sum() > k / n)


def corollary1_empirical(q_n, shift: ShiftModel, k: int, trials: int = 10_000, seed: int = 0) -> float:
    """Mean gap over anomalous spectra ``q_N * S + shift``, renormalised (S = 1)."""
    qn = _q(q_n)
    if trials < 1:
        raise DataError("need at least one trial")
    if not 1 <= k <= qn.size:
        raise DataError(f"k must lie in [1, {qn.size}], got {k}")
    rng = np.random.default_rng(seed)
    d = shift.sample((trials, qn.size), rng)
    qa = (qn + d) / (1.0 + d.sum(axis=1, keepdims=True))
    gaps = np.log(qn[:k].sum()) - np.log(qa[:, :k].sum(axis=1))
    return float(gaps.mean())


def amplitude_stats(windows: np.ndarray, labels, basis: BasisSet) -> tuple[float, float, float, float]:
    """``(var_anom, var_norm, mean_anom, mean_norm)`` of per-window amplitudes.

    Each window's amplitudes on ``basis`` are pooled over features and bins;
    the per-window variance and mean are then averaged within each class.
    ``labels`` holds one flag per window.
    """
    x = np.asarray(windows, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if x.ndim != 3 or labels.shape != (x.shape[0],):
        raise DataError(f"need windows [n, m, W] and one label per window, got {x.shape} and {labels.shape}")
    if labels.all() or not labels.any():
        raise DataError("both classes need at least one window")
    amp = ca_dft(x, basis).amplitude.reshape(x.shape[0], -1)
    var, mean = amp.var(axis=1), amp.mean(axis=1)
    return (
        float(var[labels].mean()),
        float(var[~labels].mean()),
        float(mean[labels].mean()),
        float(mean[~labels].mean()),
    )


# -- verdict suite ----------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    check: str
    statistic: float
    threshold: float
    passed: bool


def bound_suite(configs: int, trials: int, seed: int) -> Verdict:
    """Fraction of random configurations whose Monte Carlo gap respects the bound."""
    rng = np.random.default_rng(seed)
    ok = 0
    for c in range(configs):
        n = int(rng.integers(1, 6))
        gamma = int(rng.choice([3, 5, 7]))
        model = GaussianSpectrumModel(rng.uniform(0, 2, n), rng.uniform(0, 2, n))
        alpha = rng.uniform(-1, 1, n)
        mean, se = mc_gap(model, alpha, gamma, 1.0, trials, seed=int(rng.integers(2**31)))
        ok += mean <= theorem1_bound(model, alpha, gamma) + 3 * se
    frac = ok / configs
    return Verdict("pooling_gap_bound", frac, 0.99, frac >= 0.99)


def identity_suite(max_n: int = 12, seed: int = 0) -> list[Verdict]:
    """Gap identity, zero gap at full k and uniform error log(n/k), exhaustively over n and k."""
    rng = np.random.default_rng(seed)
    worst_id = worst_full = worst_uni = 0.0
    for n in range(1, max_n + 1):
        qn = NormalizedSpectrum.from_amplitudes(rng.random(n) + 1e-3)[0]
        qa = NormalizedSpectrum.normalize(rng.random(n) + 1e-3)
        uni = NormalizedSpectrum.normalize(np.ones(n))
        for k in range(1, n + 1):
            gap = theorem2_gap(qn, qa, k)
            worst_id = max(worst_id, abs(gap - (kl_recon_error(qa, k) - kl_recon_error(qn, k))))
            worst_uni = max(worst_uni, abs(kl_recon_error(uni, k) - math.log(n / k)))
        worst_full = max(worst_full, abs(theorem2_gap(qn, qa, n)))
    return [
        Verdict("gap_equals_error_difference", worst_id, 1e-12, worst_id <= 1e-12),
        Verdict("full_basis_gap_zero", worst_full, 1e-12, worst_full <= 1e-12),
        Verdict("uniform_error_log_n_over_k", worst_uni, 1e-12, worst_uni <= 1e-12),
    ]


def random_concentrated(n: int, k: int, rng: np.random.Generator) -> NormalizedSpectrum:
    """A descending spectrum whose first k bins hold more than k/n of the mass."""
    while True:
        a = np.sort(rng.dirichlet(np.full(n, 0.5)))[::-1]
        if a[:k].sum() > k / n:
            return NormalizedSpectrum.normalize(a)


def corollary_suite(spectra: int, trials: int, seed: int) -> Verdict:
    """Fraction of concentrated spectra with a positive mean anomaly gap."""
    rng = np.random.default_rng(seed)
    ok = 0
    for _ in range(spectra):
        n = int(rng.integers(3, 21))
        k = int(rng.integers(1, n))
        q = random_concentrated(n, k, rng)
        shift = ShiftModel(float(rng.uniform(0.05, 1.0)))
        ok += corollary1_empirical(q, shift, k, trials, seed=int(rng.integers(2**31))) > 0
    frac = ok / spectra
    return Verdict("restricted_basis_gap_positive", frac, 0.95, frac >= 0.95)


def run_suite(configs: int = 1000, trials: int = 10_000, spectra: int = 50, seed: int = 0) -> list[Verdict]:
    return [
        bound_suite(configs, trials, seed),
        *identity_suite(12, seed),
        corollary_suite(spectra, trials, seed + 1),
    ]


VERDICT_HEADER = ["check", "statistic", "threshold", "pass"]


def write_verdicts(path: str | Path, verdicts: Iterable[Verdict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VERDICT_HEADER)
        for v in verdicts:
            w.writerow([v.check, repr(float(v.statistic)), repr(float(v.threshold)), int(v.passed)])


def read_verdicts(path: str | Path) -> list[Verdict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != VERDICT_HEADER:
            raise DataError(f"{path}: expected header {','.join(VERDICT_HEADER)}")
        return [Verdict(r[0], float(r[1]), float(r[2]), r[3] == "1") for r in reader]
