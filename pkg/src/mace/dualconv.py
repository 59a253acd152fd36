"""Dualistic convolution.

``out_j = root_g( sum_i a_i * x[j*s + i] ** g / sigma )`` with an odd power g and
the sign-preserving odd root. A positive g (peak) lets upward deviations
dominate each kernel window, a negative g (valley) downward ones.

Time-domain use (:func:`amplify_time`) runs with stride 1 and averages both
branches; frequency-domain use (:func:`freq_pool`) runs with stride equal to
the kernel length and so keeps roughly the max (peak) or min (valley) of each
segment.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import DataError, HyperParams, NumericalError, check_finite

#: lower bound that the valley pre-shift lifts every window to
EPS_SHIFT = 0.1
#: gradients treat |pre-root sum| below this as singular
TAU_ROOT = 1e-8


class InvalidKernelError(DataError):
    pass


class DomainError(DataError):
    pass


class GradientSingularityError(NumericalError):
    pass


@dataclass(frozen=True)
class ConvKernel:
    weights: np.ndarray
    gamma: int
    sigma: float = 1.0
    stride: int = 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.size < 1:
            raise InvalidKernelError("kernel needs at least one weight")
        g = self.gamma
        if int(g) != g or g % 2 == 0 or abs(g) < 3:
            raise InvalidKernelError(f"gamma must be an odd integer with |gamma| >= 3, got {g}")
        if not self.sigma > 0:
            raise InvalidKernelError(f"sigma must be positive, got {self.sigma}")
        if int(self.stride) != self.stride or self.stride < 1:
            raise InvalidKernelError(f"stride must be a positive integer, got {self.stride}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "gamma", int(g))

    @classmethod
    def uniform(cls, length: int, gamma: int, sigma: float | None = None, stride: int = 1) -> "ConvKernel":
        """All-ones weights; ``sigma`` defaults to the kernel length so constants pass through."""
        return cls(np.ones(length), gamma, float(length if sigma is None else sigma), stride)

    @property
    def length(self) -> int:
        return self.weights.shape[0]


# -- numerical core -----------------------------------------------------------

def power_conv(seg: np.ndarray, alpha: np.ndarray, gamma: int, sigma: float) -> np.ndarray:
    """Reduce the last axis of ``seg`` with weights ``alpha`` and power ``gamma``.

    Each segment is rescaled by its largest (gamma > 0) or smallest (gamma < 0)
    magnitude before raising to the power, which is the max-subtraction of a
    log-sum-exp in linear form: no term exceeds 1, so nothing overflows.
    gamma == 1 gives an ordinary weighted sum.
    """
    if gamma == 1:
        return seg @ alpha / sigma
    mag = np.abs(seg)
    scale = mag.max(axis=-1) if gamma > 0 else mag.min(axis=-1)
    safe = np.where(scale > 0, scale, 1.0)[..., None]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        t = (seg / safe) ** gamma @ alpha / sigma
        root = np.sign(t) * np.abs(t) ** (1.0 / gamma)
    return np.where(scale > 0, safe[..., 0] * root, 0.0)


def _clamped_abs(out: np.ndarray, gamma: int, tau: float) -> np.ndarray:
    # |u| = |out| ** gamma; keep |u| >= tau
    lim = tau ** (1.0 / gamma)
    a = np.abs(out)
    return np.maximum(a, lim) if gamma > 0 else np.minimum(a, lim)


def _singular(out: np.ndarray, gamma: int, tau: float) -> np.ndarray:
    lim = tau ** (1.0 / gamma)
    a = np.abs(out)
    return a < lim if gamma > 0 else a > lim


def power_conv_grad(
    seg: np.ndarray,
    out: np.ndarray,
    alpha: np.ndarray,
    gamma: int,
    sigma: float,
    upstream: np.ndarray,
    tau: float = TAU_ROOT,
) -> tuple[np.ndarray, np.ndarray]:
    """Backward pass of :func:`power_conv`; returns ``(grad_seg, grad_alpha)``.

    Uses d out / d x_i = (a_i / sigma) * (x_i / |out|) ** (gamma - 1), which is
    the chain rule through power and root written without forming the sum.
    """
    if gamma == 1:
        g_seg = upstream[..., None] * alpha / sigma
        g_alpha = (upstream[..., None] * seg).reshape(-1, seg.shape[-1]).sum(axis=0) / sigma
        return g_seg, g_alpha
    denom = _clamped_abs(out, gamma, tau)[..., None]
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = (seg / denom) ** (gamma - 1)
    g_seg = upstream[..., None] * ratio * (alpha / sigma)
    g_alpha = (upstream[..., None] * ratio * seg).reshape(-1, seg.shape[-1]).sum(axis=0) / (sigma * gamma)
    return g_seg, g_alpha


# -- padding ------------------------------------------------------------------

Padding = Literal["valid", "same", "zero"]


def _pad_index(n: int, L: int, stride: int, padding: str) -> np.ndarray:
    """Indices into x for each padded position; -1 marks an inserted zero."""
    base = np.arange(n)
    if padding == "valid":
        return base
    if padding == "same":
        left = (L - 1) // 2
        right = L - 1 - left
        if n <= max(left, right):
            raise DataError(f"series of length {n} is too short to reflect-pad by {max(left, right)}")
        lidx = np.arange(left, 0, -1)
        ridx = np.arange(n - 2, n - 2 - right, -1)
        return np.concatenate([lidx, base, ridx])
    if padding == "zero":
        extra = (-(max(n, L) - L)) % stride + max(L - n, 0)
        return np.concatenate([base, -np.ones(extra, dtype=int)])
    raise ValueError(f"unknown padding {padding!r}")


def _segments(xp: np.ndarray, L: int, stride: int) -> np.ndarray:
    if xp.shape[-1] < L:
        raise DataError(f"input of length {xp.shape[-1]} is shorter than the kernel ({L})")
    view = np.lib.stride_tricks.sliding_window_view(xp, L, axis=-1)
    return view[..., ::stride, :]


def _gather(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    xp = x[..., np.maximum(idx, 0)]
    if (idx < 0).any():
        xp = np.where(idx < 0, 0.0, xp)
    return xp


def _check_domain(x: np.ndarray, gamma: int) -> None:
    if gamma < 0:
        bad = np.flatnonzero(~(x > 0))
        if bad.size:
            i = int(bad[0])
            raise DomainError(
                f"negative gamma needs strictly positive input; x[{i}] = {x.reshape(-1)[i]!r}"
            )


# -- public operations --------------------------------------------------------

def dualistic_conv(x: np.ndarray, kernel: ConvKernel, padding: Padding = "valid") -> np.ndarray:
    """Apply one dualistic convolution to a 1-D signal.

    No pre-shift happens here: under a negative gamma every input must already
    be positive (see :func:`valley_shift`).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    check_finite(x, "x")
    _check_domain(x, kernel.gamma)
    xp = _gather(x, _pad_index(x.size, kernel.length, kernel.stride, padding))
    seg = _segments(xp, kernel.length, kernel.stride)
    return power_conv(seg, kernel.weights, kernel.gamma, kernel.sigma)


def dualistic_conv_grad(
    x: np.ndarray,
    kernel: ConvKernel,
    upstream: np.ndarray,
    padding: Padding = "valid",
    strict: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(upstream * dualistic_conv(x))`` w.r.t. x and the kernel weights.

    Near-zero pre-root sums are clamped to ``TAU_ROOT``; with ``strict=True``
    they raise :class:`GradientSingularityError` instead.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    _check_domain(x, kernel.gamma)
    idx = _pad_index(x.size, kernel.length, kernel.stride, padding)
    seg = _segments(_gather(x, idx), kernel.length, kernel.stride)
    out = power_conv(seg, kernel.weights, kernel.gamma, kernel.sigma)
    upstream = np.asarray(upstream, dtype=float).reshape(out.shape)
    if strict:
        sing = _singular(out, kernel.gamma, TAU_ROOT)
        if sing.any():
            j = int(np.flatnonzero(sing)[0])
            raise GradientSingularityError(f"pre-root sum of output {j} is below {TAU_ROOT:g}")
    g_seg, g_alpha = power_conv_grad(seg, out, kernel.weights, kernel.gamma, kernel.sigma, upstream)
    # scatter segment gradients back onto padded positions, then onto x
    n_pad = idx.size
    L, s = kernel.length, kernel.stride
    pos = (np.arange(seg.shape[0])[:, None] * s + np.arange(L)[None, :]).reshape(-1)
    g_pad = np.bincount(pos, weights=g_seg.reshape(-1), minlength=n_pad)
    keep = idx >= 0
    g_x = np.bincount(idx[keep], weights=g_pad[keep], minlength=x.size)
    return g_x, g_alpha


def valley_shift(x: np.ndarray, eps: float = EPS_SHIFT, axis: int = -1) -> np.ndarray:
    """Offset that lifts the minimum along ``axis`` to ``eps`` (broadcastable)."""
    return eps - np.min(x, axis=axis, keepdims=True)


def peak_shift(x: np.ndarray, eps: float = EPS_SHIFT, axis: int = -1) -> np.ndarray:
    """Like :func:`valley_shift` but only ever lifts; rows already >= eps are untouched."""
    return np.maximum(valley_shift(x, eps, axis), 0.0)


def _shifted_branch(x: np.ndarray, L: int, gamma: int, sigma: float, stride: int, padding: str) -> np.ndarray:
    s = valley_shift(x) if gamma < 0 else peak_shift(x)
    xs = x + s
    idx = _pad_index(x.shape[-1], L, stride, padding)
    seg = _segments(_gather(xs, idx), L, stride)
    return power_conv(seg, np.ones(L), gamma, sigma) - s


def amplify_time(x: np.ndarray, hp: HyperParams) -> np.ndarray:
    """Time-domain anomaly amplification of a ``[..., T]`` array.

    Each row gets a stride-1 peak and valley convolution with unit weights and
    ``sigma_t``, reflect-padded to keep its length; the result is their
    element-wise average. Both branches run on the row lifted to a minimum of
    ``EPS_SHIFT`` and are shifted back afterwards.
    """
    x = np.asarray(x, dtype=float)
    check_finite(x, "series")
    L, g, sig = hp.kernel_len, hp.gamma_t, hp.sigma_t
    peak = _shifted_branch(x, L, g, sig, 1, "same")
    valley = _shifted_branch(x, L, -g, sig, 1, "same")
    return 0.5 * (peak + valley)


def freq_pool(amplitudes: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    """Stride-``kernel.length`` pooling of a non-negative amplitude vector.

    The tail is padded up to a multiple of the kernel length: zeros for a peak
    kernel, the mean of the partial segment for a valley kernel. Valley kernels
    run on the vector lifted to a minimum of ``EPS_SHIFT``.
    """
    a = np.asarray(amplitudes, dtype=float).reshape(-1)
    check_finite(a, "amplitudes")
    if (a < 0).any():
        raise DomainError(f"amplitudes must be non-negative; a[{int(np.flatnonzero(a < 0)[0])}] < 0")
    L = kernel.length
    a = pad_segments(a[None, :], L, kernel.gamma)[0]
    seg = a.reshape(-1, L)
    if kernel.gamma > 0:
        return power_conv(seg, kernel.weights, kernel.gamma, kernel.sigma)
    s = valley_shift(a, axis=None).item()
    return power_conv(seg + s, kernel.weights, kernel.gamma, kernel.sigma) - s


def pad_matrix(k: int, L: int, gamma: int) -> np.ndarray:
    """Linear map ``[k, k_pad]`` that pads a length-k row to a multiple of L.

    Appended entries are 0 for gamma > 0 and the mean of the partial last
    segment otherwise.
    """
    n_lat = -(-k // L)
    k_pad = n_lat * L
    P = np.zeros((k, k_pad))
    P[np.arange(k), np.arange(k)] = 1.0
    if k_pad > k and gamma < 0:
        start = (n_lat - 1) * L
        P[start:k, k:] = 1.0 / (k - start)
    return P


def pad_segments(a: np.ndarray, L: int, gamma: int) -> np.ndarray:
    k = a.shape[-1]
    if k % L == 0:
        return a
    return a @ pad_matrix(k, L, gamma)
