"""Pattern extraction: per-service Fourier basis selection and restricted transforms.

A service's normal pattern is summarised by, for every feature, the k
frequency bins that most often rank among the k strongest bins of its
training windows. Transforms then only ever touch those bins.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np

from .core import DataError, TimeSeriesWindow, n_bins


@dataclass(frozen=True)
class BasisSet:
    freqs: np.ndarray  # int [m_feat, k], sorted per row
    window_size: int
    service_id: Hashable = None
    tallies: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        f = np.asarray(self.freqs)
        if f.ndim == 1:
            f = f[None, :]
        if f.ndim != 2 or f.size == 0 or not np.all(f == np.round(f)):
            raise DataError("basis frequencies must be a non-empty integer matrix")
        f = np.sort(f.astype(np.int64), axis=1)
        if (f < 0).any() or (f >= n_bins(self.window_size)).any():
            raise DataError(f"frequency index outside [0, {n_bins(self.window_size) - 1}]")
        if (np.diff(f, axis=1) == 0).any():
            raise DataError("duplicate frequency index within a feature")
        f.setflags(write=False)
        object.__setattr__(self, "freqs", f)
        if self.tallies is not None:
            t = np.asarray(self.tallies, dtype=np.int64).reshape(f.shape)
            object.__setattr__(self, "tallies", t)

    @classmethod
    def full(cls, m_feat: int, W: int, service_id: Hashable = None) -> "BasisSet":
        return cls(np.tile(np.arange(n_bins(W)), (m_feat, 1)), W, service_id)

    @property
    def m_feat(self) -> int:
        return self.freqs.shape[0]

    @property
    def k(self) -> int:
        return self.freqs.shape[1]

    @cached_property
    def _phase_grid(self) -> np.ndarray:
        t = np.arange(self.window_size)
        return 2 * np.pi * self.freqs[..., None] * t / self.window_size  # [m, k, W]

    @cached_property
    def analysis(self) -> np.ndarray:
        """``exp(-i 2 pi w t / W)`` for every selected bin: ``[m, k, W]``."""
        return np.exp(-1j * self._phase_grid)

    @cached_property
    def synthesis(self) -> np.ndarray:
        """Real synthesis kernels ``c_j / W * exp(+i 2 pi w t / W)``: ``[m, k, W]``."""
        W = self.window_size
        c = np.where((self.freqs == 0) | (2 * self.freqs == W), 1.0, 2.0)
        return c[..., None] / W * np.exp(1j * self._phase_grid)

    @cached_property
    def marks(self) -> tuple[np.ndarray, np.ndarray]:
        ang = 2 * np.pi * self.freqs / self.window_size
        return np.sin(ang), np.cos(ang)


@dataclass(frozen=True)
class Spectrum:
    coeffs: np.ndarray  # complex [..., m_feat, k]

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.coeffs)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.coeffs)

    @classmethod
    def from_polar(cls, amplitude: np.ndarray, phase: np.ndarray) -> "Spectrum":
        return cls(amplitude * np.exp(1j * phase))


@dataclass(frozen=True)
class FrequencyRepresentation:
    """Channels ``[amplitude, sin mark, cos mark]`` over ``[..., 3, m_feat, k]``.

    ``phase`` rides along for the inverse transform; it is not a model input.
    """

    tensor: np.ndarray
    phase: np.ndarray

    @property
    def amplitude(self) -> np.ndarray:
        return self.tensor[..., 0, :, :]


def _window_values(windows) -> np.ndarray:
    if isinstance(windows, np.ndarray):
        x = windows
    else:
        windows = list(windows)
        if not windows:
            raise DataError("no windows given")
        x = np.stack([w.values if isinstance(w, TimeSeriesWindow) else np.asarray(w, float) for w in windows])
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[0] == 0:
        raise DataError(f"expected windows shaped [n, m_feat, W], got {x.shape}")
    return x


def select_basis(
    train_windows: Sequence[TimeSeriesWindow] | np.ndarray,
    k_bases: int,
    service_id: Hashable = None,
) -> BasisSet:
    """Pick, per feature, the k bins that most often rank in a window's top k by amplitude.

    Ties (in amplitude and in tally) go to the lower frequency index.
    """
    x = _window_values(train_windows)
    n, m, W = x.shape
    if not 1 <= k_bases <= n_bins(W):
        raise DataError(f"k_bases must lie in [1, {n_bins(W)}] for window size {W}, got {k_bases}")
    if service_id is None and not isinstance(train_windows, np.ndarray):
        service_id = getattr(train_windows[0], "service_id", None)
    amp = np.abs(np.fft.rfft(x, axis=-1))  # [n, m, bins]
    top = np.argsort(-amp, axis=-1, kind="stable")[..., :k_bases]
    tally = np.zeros((m, n_bins(W)), dtype=np.int64)
    for f in range(m):
        tally[f] = np.bincount(top[:, f, :].reshape(-1), minlength=n_bins(W))
    chosen = np.argsort(-tally, axis=-1, kind="stable")[:, :k_bases]
    chosen = np.sort(chosen, axis=-1)
    return BasisSet(chosen, W, service_id, np.take_along_axis(tally, chosen, axis=-1))


def _check(x: np.ndarray, basis: BasisSet) -> None:
    if x.shape[-1] != basis.window_size:
        raise DataError(f"window length {x.shape[-1]} does not match basis window size {basis.window_size}")
    if x.shape[-2] != basis.m_feat:
        raise DataError(f"window has {x.shape[-2]} features, basis has {basis.m_feat}")


def ca_dft(window: TimeSeriesWindow | np.ndarray, basis: BasisSet) -> Spectrum:
    """DFT evaluated by direct summation at the basis bins only.

    Accepts one window or a stack ``[..., m_feat, W]``.
    """
    x = window.values if isinstance(window, TimeSeriesWindow) else np.asarray(window, float)
    if x.ndim == 1:
        x = x[None, :]
    _check(x, basis)
    return Spectrum(np.einsum("mkw,...mw->...mk", basis.analysis, x))


def ca_idft(spectrum: Spectrum, basis: BasisSet, service_id: Hashable = None):
    """Real inverse transform from the basis bins, completing conjugate pairs.

    Returns a :class:`TimeSeriesWindow` for a single spectrum and a plain
    ``[..., m_feat, W]`` array for a stack.
    """
    F = np.asarray(spectrum.coeffs)
    if F.shape[-2:] != basis.freqs.shape:
        raise DataError(f"spectrum shape {F.shape[-2:]} does not match basis {basis.freqs.shape}")
    x = np.einsum("mkw,...mk->...mw", basis.synthesis, F).real
    if x.ndim == 2:
        return TimeSeriesWindow(x, service_id=basis.service_id if service_id is None else service_id)
    return x


def characterize(spectrum: Spectrum, basis: BasisSet) -> FrequencyRepresentation:
    F = np.asarray(spectrum.coeffs)
    if F.shape[-2:] != basis.freqs.shape:
        raise DataError(f"spectrum shape {F.shape[-2:]} does not match basis {basis.freqs.shape}")
    amp = np.abs(F)
    s, c = basis.marks
    s = np.broadcast_to(s, amp.shape)
    c = np.broadcast_to(c, amp.shape)
    return FrequencyRepresentation(np.stack([amp, s, c], axis=-3), np.angle(F))


def represent(windows: np.ndarray, basis: BasisSet) -> FrequencyRepresentation:
    """``characterize(ca_dft(windows))`` for a stack of windows."""
    return characterize(ca_dft(windows, basis), basis)


# -- persistence ----------------------------------------------------------------

BASIS_HEADER = ["service_id", "feature_index", "freq_index", "tally"]


def write_bases(path: str | Path, bases: Iterable[BasisSet]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BASIS_HEADER)
        for b in bases:
            tallies = b.tallies if b.tallies is not None else np.zeros_like(b.freqs)
            for i in range(b.m_feat):
                for j in range(b.k):
                    w.writerow([b.service_id, i, int(b.freqs[i, j]), int(tallies[i, j])])


def read_bases(path: str | Path, window_size: int) -> dict[str, BasisSet]:
    rows: dict[str, dict[int, list[tuple[int, int]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != BASIS_HEADER:
            raise DataError(f"{path}: expected header {','.join(BASIS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            sid, fi, fq, ta = row
            try:
                rows.setdefault(sid, {}).setdefault(int(fi), []).append((int(fq), int(ta)))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    out = {}
    for sid, feats in rows.items():
        idx = sorted(feats)
        if idx != list(range(len(idx))):
            raise DataError(f"{path}: service {sid} has non-contiguous feature indices")
        lens = {len(feats[i]) for i in idx}
        if len(lens) != 1:
            raise DataError(f"{path}: service {sid} has ragged basis sizes {sorted(lens)}")
        pairs = [sorted(feats[i]) for i in idx]
        freqs = np.array([[p[0] for p in row] for row in pairs])
        tallies = np.array([[p[1] for p in row] for row in pairs])
        out[sid] = BasisSet(freqs, window_size, sid, tallies)
    return out
