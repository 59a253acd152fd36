"""Two-branch reconstruction autoencoder over frequency representations.

Each branch maps the three channels of every (sample, feature) row to one
value per bin with a 1x1 mixing, pools the row with a stride-L dualistic
convolution (peak branch gamma = +gamma_f, valley branch -gamma_f) into a
latent of ceil(k / L) values, and decodes it with a linear map followed by
max(., 0). All parameters are shared across features and services.

Gradients are written out by hand; :func:`loss_and_grad` is the single
source of both the loss value and its gradient.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import DataError, HyperParams, NumericalError
from .dualconv import EPS_SHIFT, pad_matrix, power_conv, power_conv_grad
from .patex import BasisSet, FrequencyRepresentation, represent

MAGIC = b"MACE"
FORMAT_VERSION = 1
DIVERGENCE_LOSS = 1e6
ALPHA_FLOOR = 1e-6  # kernel weights stay positive so every pooled value is a power mean
BRANCHES = ("peak", "valley")
PARAM_NAMES = ("mix", "alpha", "dec_w", "dec_b")


class TrainingDivergedError(NumericalError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss = {loss!r}")
        self.epoch = epoch
        self.loss = loss


@dataclass
class Branch:
    mix: np.ndarray  # [3] weights over (amplitude, sin mark, cos mark)
    alpha: np.ndarray  # [L] dualistic kernel
    dec_w: np.ndarray  # [k, n_lat]
    dec_b: np.ndarray  # [k]

    def arrays(self) -> list[np.ndarray]:
        return [self.mix, self.alpha, self.dec_w, self.dec_b]

    def copy(self) -> "Branch":
        return Branch(*(a.copy() for a in self.arrays()))


@dataclass
class ModelState:
    k_bases: int
    kernel_len: int
    gamma_f: int
    sigma_f: float
    peak: Branch
    valley: Branch
    learning_rate: float = 1e-3
    step: int = 0
    linear: bool = False  # plain convolution in place of the dualistic one

    @property
    def n_latent(self) -> int:
        return -(-self.k_bases // self.kernel_len)

    def gamma(self, branch: str) -> int:
        if self.linear:
            return 1
        return self.gamma_f if branch == "peak" else -self.gamma_f

    def branches(self) -> tuple[Branch, Branch]:
        return self.peak, self.valley

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return [
            (f"{bn}.{pn}", arr)
            for bn, br in zip(BRANCHES, self.branches())
            for pn, arr in zip(PARAM_NAMES, br.arrays())
        ]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for _, a in self.named_params()])

    def with_flat(self, vec: np.ndarray) -> "ModelState":
        out = self.copy()
        pos = 0
        for _, arr in out.named_params():
            arr[...] = vec[pos:pos + arr.size].reshape(arr.shape)
            pos += arr.size
        if pos != vec.size:
            raise DataError(f"parameter vector has {vec.size} entries, model needs {pos}")
        return out

    def copy(self) -> "ModelState":
        return replace(self, peak=self.peak.copy(), valley=self.valley.copy())


def init_model(
    k_bases: int,
    hp: HyperParams,
    seed: int = 0,
    linear: bool = False,
    dec_bias: Optional[np.ndarray] = None,
) -> ModelState:
    """Seeded initialisation: mixing and decoder weights U(-0.1, 0.1), kernel 1/L.

    The decoder bias starts at ``dec_bias`` (typically the mean training
    amplitude per position) or zero; a zero start leaves many rectified
    outputs dead when amplitudes are large.
    """
    if dec_bias is None:
        dec_bias = np.zeros(k_bases)
    dec_bias = np.asarray(dec_bias, dtype=float)
    if dec_bias.shape != (k_bases,):
        raise DataError(f"dec_bias must have shape ({k_bases},), got {dec_bias.shape}")
    rng = np.random.default_rng(seed)
    L = hp.kernel_len
    n_lat = -(-k_bases // L)

    def branch() -> Branch:
        return Branch(
            mix=rng.uniform(-0.1, 0.1, 3),
            alpha=np.full(L, 1.0 / L),
            dec_w=rng.uniform(-0.1, 0.1, (k_bases, n_lat)),
            dec_b=dec_bias.copy(),
        )

    return ModelState(
        k_bases=k_bases,
        kernel_len=L,
        gamma_f=hp.gamma_f,
        sigma_f=hp.sigma_f,
        peak=branch(),
        valley=branch(),
        learning_rate=hp.learning_rate,
        linear=linear,
    )


# -- forward / backward on rows ------------------------------------------------

def _rows(rep: FrequencyRepresentation | np.ndarray, k: int) -> tuple[np.ndarray, tuple]:
    t = rep.tensor if isinstance(rep, FrequencyRepresentation) else np.asarray(rep, float)
    if t.ndim < 3 or t.shape[-3] != 3:
        raise DataError(f"representation must be shaped [..., 3, m_feat, k], got {t.shape}")
    if t.shape[-1] != k:
        raise DataError(f"representation has {t.shape[-1]} bins, model expects {k}")
    lead = t.shape[:-3] + t.shape[-2:-1]
    rows = np.moveaxis(t, -3, -2).reshape(-1, 3, k)  # [B, 3, k]
    return rows, lead


def _finite(x: np.ndarray, where: str) -> None:
    if not np.isfinite(x).all():
        raise NumericalError(f"non-finite activation in {where}")


def _branch_forward(model: ModelState, name: str, br: Branch, rows: np.ndarray):
    gamma = model.gamma(name)
    L, k, sigma = model.kernel_len, model.k_bases, model.sigma_f
    h = np.einsum("c,bck->bk", br.mix, rows)
    _finite(h, f"{name}.mix")
    jmin = np.argmin(h, axis=1)
    hmin = h[np.arange(h.shape[0]), jmin]
    if model.linear:
        active = np.zeros_like(hmin)
    elif gamma < 0:
        active = np.ones_like(hmin)
    else:
        active = (EPS_SHIFT - hmin > 0).astype(float)
    s = active * (EPS_SHIFT - hmin)
    P = pad_matrix(k, L, gamma)
    h2 = (h + s[:, None]) @ P
    seg = h2.reshape(h.shape[0], -1, L)
    z0 = power_conv(seg, br.alpha, gamma, sigma)
    _finite(z0, f"{name}.dualconv")
    z = z0 - s[:, None]
    pre = z @ br.dec_w.T + br.dec_b
    _finite(pre, f"{name}.decoder")
    out = np.maximum(pre, 0.0)
    cache = dict(gamma=gamma, jmin=jmin, active=active, P=P, seg=seg, z0=z0, z=z, pre=pre)
    return out, cache


def _branch_backward(model: ModelState, br: Branch, rows: np.ndarray, cache: dict, g_out: np.ndarray) -> Branch:
    g_pre = g_out * (cache["pre"] > 0)
    g_dec_w = g_pre.T @ cache["z"]
    g_dec_b = g_pre.sum(axis=0)
    g_z = g_pre @ br.dec_w
    g_seg, g_alpha = power_conv_grad(
        cache["seg"], cache["z0"], br.alpha, cache["gamma"], model.sigma_f, g_z
    )
    g_h1 = g_seg.reshape(g_seg.shape[0], -1) @ cache["P"].T
    g_s = g_h1.sum(axis=1) - g_z.sum(axis=1)
    g_h = g_h1
    g_h[np.arange(g_h.shape[0]), cache["jmin"]] -= g_s * cache["active"]
    g_mix = np.einsum("bk,bck->c", g_h, rows)
    return Branch(g_mix, g_alpha, g_dec_w, g_dec_b)


def forward(model: ModelState, rep: FrequencyRepresentation | np.ndarray):
    """Reconstruct amplitudes with both branches.

    Returns ``(recon_peak, recon_valley, latents)``; reconstructions have the
    shape of the amplitude channel and ``latents`` maps branch name to the
    ``[..., m_feat, n_latent]`` pooled codes.
    """
    rows, lead = _rows(rep, model.k_bases)
    recon, lat = [], {}
    for name, br in zip(BRANCHES, model.branches()):
        out, cache = _branch_forward(model, name, br, rows)
        recon.append(out.reshape(lead + (model.k_bases,)))
        lat[name] = cache["z"].reshape(lead + (model.n_latent,))
    return recon[0], recon[1], lat


def loss(recon_p: np.ndarray, recon_v: np.ndarray, target: np.ndarray) -> float:
    """Sum of the two branches' mean squared errors."""
    recon_p, recon_v, target = (np.asarray(a, float) for a in (recon_p, recon_v, target))
    if not recon_p.shape == recon_v.shape == target.shape:
        raise DataError(f"shape mismatch: {recon_p.shape}, {recon_v.shape}, {target.shape}")
    return float(np.mean((recon_p - target) ** 2) + np.mean((recon_v - target) ** 2))


def loss_and_grad(model: ModelState, rows: np.ndarray) -> tuple[float, ModelState]:
    """Loss on ``[B, 3, k]`` rows and its gradient, packed as a ModelState."""
    target = rows[:, 0, :]
    total = 0.0
    grads = []
    for name, br in zip(BRANCHES, model.branches()):
        out, cache = _branch_forward(model, name, br, rows)
        diff = out - target
        total += float(np.mean(diff ** 2))
        grads.append(_branch_backward(model, br, rows, cache, 2.0 * diff / diff.size))
    return total, replace(model, peak=grads[0], valley=grads[1])


def _loss_only(model: ModelState, rows: np.ndarray) -> float:
    target = rows[:, 0, :]
    total = 0.0
    for name, br in zip(BRANCHES, model.branches()):
        out, _ = _branch_forward(model, name, br, rows)
        total += float(np.mean((out - target) ** 2))
    return total


# -- training -----------------------------------------------------------------

@dataclass
class TrainResult:
    model: ModelState
    losses: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")


def stack_rows(reps: Sequence[FrequencyRepresentation | np.ndarray], k: int) -> np.ndarray:
    return np.concatenate([_rows(r, k)[0] for r in reps], axis=0)


def project(model: ModelState) -> ModelState:
    """Clip every dualistic kernel weight to at least ``ALPHA_FLOOR`` (in place).

    A negative weight lets the pre-root sum cross zero, where a negative-gamma
    root has a pole and the loss jumps.
    """
    if not model.linear:
        for br in model.branches():
            np.maximum(br.alpha, ALPHA_FLOOR, out=br.alpha)
    return model


def train_rows(
    model: ModelState,
    rows: np.ndarray,
    epochs: int,
    learning_rate: Optional[float] = None,
    tol: float = 1e-6,
    max_halvings: int = 40,
    callback: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Full-batch projected gradient descent; a step that raises the loss by
    more than ``tol`` is retried with half the learning rate.

    After an accepted step the rate doubles again, never beyond the base
    ``learning_rate``, so a single kink in the loss does not freeze training.
    """
    model = model.copy()
    if learning_rate is not None:
        model.learning_rate = float(learning_rate)
    if epochs <= 0:
        return TrainResult(model, [], _loss_only(model, rows) if len(rows) else float("nan"))
    if len(rows) == 0:
        raise DataError("no training rows")
    try:
        cur, grad = loss_and_grad(model, rows)
    except NumericalError as exc:
        raise TrainingDivergedError(0, float("nan")) from exc
    if not np.isfinite(cur) or cur > DIVERGENCE_LOSS:
        raise TrainingDivergedError(0, cur)
    result = TrainResult(model, [], cur)
    base_lr = model.learning_rate
    theta = model.flat()
    g = grad.flat()
    for epoch in range(1, epochs + 1):
        lr = min(base_lr, 2.0 * model.learning_rate)
        for _ in range(max_halvings):
            cand = project(model.with_flat(theta - lr * g))
            try:
                new = _loss_only(cand, rows)
            except NumericalError:
                new = np.inf
            if np.isfinite(new) and new <= cur + tol:
                break
            lr *= 0.5
        else:
            break  # no descent step found; the curve would stay flat
        if new > DIVERGENCE_LOSS:
            raise TrainingDivergedError(epoch, new)
        cand.learning_rate = lr
        cand.step = model.step + 1
        model = cand
        theta = model.flat()
        cur, grad = loss_and_grad(model, rows)
        g = grad.flat()
        result.losses.append(cur)
        if callback is not None:
            callback(epoch, cur)
    result.model = model
    return result


def train(
    model: ModelState,
    windows: np.ndarray,
    basis: BasisSet,
    hp: HyperParams,
    epochs: int,
) -> TrainResult:
    """Train on windows ``[n, m_feat, W]`` of one service projected on ``basis``."""
    rows = stack_rows([represent(np.asarray(windows, float), basis)], model.k_bases)
    return train_rows(model, rows, epochs, hp.learning_rate)


# -- persistence ----------------------------------------------------------------

def save_model(model: ModelState, path: str | Path) -> Path:
    """Write ``path`` (binary parameters) and ``path.manifest`` (shapes and metadata)."""
    path = Path(path)
    params = model.named_params()
    payload = MAGIC + struct.pack("<H", FORMAT_VERSION)
    payload += np.concatenate([a.reshape(-1) for _, a in params]).astype("<f8").tobytes()
    path.write_bytes(payload)
    lines = [
        f"format MACE {FORMAT_VERSION}",
        "dtype float64 little-endian",
        f"k_bases {model.k_bases}",
        f"kernel_len {model.kernel_len}",
        f"gamma_f {model.gamma_f}",
        f"sigma_f {model.sigma_f!r}",
        f"linear {int(model.linear)}",
        f"step {model.step}",
        f"learning_rate {model.learning_rate!r}",
    ]
    lines += [f"param {name} {' '.join(str(d) for d in arr.shape)}" for name, arr in params]
    manifest_path(path).write_text("\n".join(lines) + "\n")
    return path


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest")


def load_model(path: str | Path) -> ModelState:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack("<H", raw[4:6])
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    meta: dict[str, str] = {}
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for line in manifest_path(path).read_text().splitlines():
        key, _, rest = line.partition(" ")
        if key == "param":
            name, *dims = rest.split()
            shapes.append((name, tuple(int(d) for d in dims)))
        elif key:
            meta[key] = rest
    vec = np.frombuffer(raw[6:], dtype="<f8").astype(float)
    hp = HyperParams(
        gamma_f=int(meta["gamma_f"]),
        sigma_f=float(meta["sigma_f"]),
        kernel_len=int(meta["kernel_len"]),
        window_size=2 * int(meta["k_bases"]),
        k_bases=int(meta["k_bases"]),
        learning_rate=float(meta["learning_rate"]),
    )
    model = init_model(int(meta["k_bases"]), hp, linear=bool(int(meta["linear"])))
    expect = [(n, a.shape) for n, a in model.named_params()]
    if expect != shapes:
        raise DataError(f"{path}: manifest shapes {shapes} do not match the model layout {expect}")
    model = model.with_flat(vec)
    model.step = int(meta["step"])
    return model
