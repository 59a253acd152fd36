"""Shared types, windowing and normalization.

Series are stored feature-major: a matrix of shape ``[m_feat, T]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Optional, Sequence

import numpy as np


class MaceError(Exception):
    """Base class for every error raised by this package."""


class DataError(MaceError, ValueError):
    """Malformed, inconsistent or out-of-domain input data."""


class NumericalError(MaceError, ArithmeticError):
    """A computation left its numerically valid range."""


@dataclass(frozen=True)
class NormStats:
    """Per-feature min/max taken from a training split."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise DataError(f"min/max length mismatch: {lo.shape} vs {hi.shape}")
        bad = np.flatnonzero(lo > hi)
        if bad.size:
            raise DataError(f"min > max for feature {int(bad[0])}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


@dataclass(frozen=True)
class TimeSeriesWindow:
    values: np.ndarray
    start_index: int = 0
    service_id: Hashable = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[0] == 0 or v.shape[1] == 0:
            raise DataError(f"window must be a non-empty [m_feat, W] matrix, got shape {v.shape}")
        check_finite(v, "window")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_features(self) -> int:
        return self.values.shape[0]

    @property
    def size(self) -> int:
        return self.values.shape[1]


def _odd_admissible(g: int) -> bool:
    return int(g) == g and g % 2 != 0 and abs(g) >= 3


@dataclass(frozen=True)
class HyperParams:
    """Detector hyperparameters.

    Defaults follow the dataset-agnostic values of the reference setup:
    window 40, kernel 5, 20 bases, learning rate 1e-3, sigma 5 and gamma 7
    in both domains.
    """

    gamma_t: int = 7
    gamma_f: int = 7
    sigma_t: float = 5.0
    sigma_f: float = 5.0
    kernel_len: int = 5
    window_size: int = 40
    k_bases: int = 20
    learning_rate: float = 1e-3

    def __post_init__(self):
        for name in ("gamma_t", "gamma_f"):
            g = getattr(self, name)
            if not _odd_admissible(g):
                raise DataError(f"{name} must be an odd integer with |{name}| >= 3, got {g}")
        for name in ("sigma_t", "sigma_f", "learning_rate"):
            if not getattr(self, name) > 0:
                raise DataError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("kernel_len", "window_size", "k_bases"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise DataError(f"{name} must be a positive integer, got {v}")
        if self.k_bases > n_bins(self.window_size):
            raise DataError(
                f"k_bases={self.k_bases} exceeds the {n_bins(self.window_size)} "
                f"frequency bins of a window of size {self.window_size}"
            )

    @property
    def stride_t(self) -> int:
        return 1

    @property
    def stride_f(self) -> int:
        return self.kernel_len


def n_bins(W: int) -> int:
    """Number of non-redundant DFT bins of a real window of length W."""
    return W // 2 + 1


def check_finite(x: np.ndarray, name: str = "input") -> None:
    finite = np.isfinite(x)
    if not finite.all():
        idx = tuple(int(i) for i in np.argwhere(~finite)[0])
        raise DataError(f"{name} has a non-finite value at index {idx}: {x[idx]!r}")


def minmax_normalize(
    raw: np.ndarray, stats: Optional[NormStats] = None
) -> tuple[np.ndarray, NormStats]:
    """Scale every feature (row) with min-max statistics.

    When ``stats`` is None they are computed from ``raw`` (the training split);
    otherwise they are applied unchanged, so test values may fall outside
    [0, 1]. Constant features map to 0.5.
    """
    x = np.asarray(raw, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    check_finite(x, "raw series")
    if stats is None:
        stats = NormStats(x.min(axis=1), x.max(axis=1))
    elif stats.lo.shape[0] != x.shape[0]:
        raise DataError(f"stats cover {stats.lo.shape[0]} features, series has {x.shape[0]}")
    span = stats.hi - stats.lo
    flat = span == 0
    out = (x - stats.lo[:, None]) / np.where(flat, 1.0, span)[:, None]
    out[flat, :] = 0.5
    return out, stats


def sliding_windows(
    series: np.ndarray, W: int, hop: int = 1, service_id: Hashable = None
) -> list[TimeSeriesWindow]:
    """Cut ``series`` into windows at offsets 0, hop, 2*hop, ...; a trailing partial window is dropped."""
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    stack = window_stack(x, W, hop)
    return [
        TimeSeriesWindow(stack[i], start_index=i * hop, service_id=service_id)
        for i in range(stack.shape[0])
    ]


def window_stack(series: np.ndarray, W: int, hop: int = 1) -> np.ndarray:
    """Array form of :func:`sliding_windows`: shape ``[n_windows, m_feat, W]``."""
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if hop < 1:
        raise DataError(f"hop must be >= 1, got {hop}")
    T = x.shape[1]
    if T < W:
        raise DataError(f"series of length {T} is shorter than the window size {W}; no windows")
    view = np.lib.stride_tricks.sliding_window_view(x, W, axis=1)  # [m, T-W+1, W]
    return np.ascontiguousarray(view[:, ::hop, :].transpose(1, 0, 2))


def window_offsets(T: int, W: int, hop: int = 1) -> np.ndarray:
    if T < W:
        raise DataError(f"series of length {T} is shorter than the window size {W}; no windows")
    return np.arange(0, T - W + 1, hop)


def as_matrix(values: Sequence | np.ndarray) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    return x[None, :] if x.ndim == 1 else x
