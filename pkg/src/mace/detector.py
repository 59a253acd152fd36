"""End-to-end detection: amplify, project, reconstruct, score, threshold."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Optional, Sequence

import numpy as np

from .autoenc import ModelState, TrainResult, forward, init_model, stack_rows, train_rows
from .core import (
    DataError,
    HyperParams,
    NormStats,
    TimeSeriesWindow,
    minmax_normalize,
    n_bins,
    window_offsets,
    window_stack,
)
from .dualconv import amplify_time
from .patex import BasisSet, Spectrum, ca_idft, represent, select_basis


@dataclass(frozen=True)
class Ablation:
    """Switches for the component ablations; everything on is the full detector."""

    patex: bool = True
    dualconv_t: bool = True
    dualconv_f: bool = True


@dataclass
class AnomalyScoreSeries:
    scores: np.ndarray
    threshold: float
    predictions: np.ndarray = field(init=False)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.predictions = (self.scores > self.threshold).astype(np.int8)


def prepare(series: np.ndarray, hp: HyperParams, amplify: bool = True) -> np.ndarray:
    """Amplify a normalised ``[m_feat, T]`` series (identity when ``amplify`` is off)."""
    return amplify_time(series, hp) if amplify else np.asarray(series, dtype=float)


def reconstruct(model: ModelState, basis: BasisSet, windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Time-domain reconstructions of both branches for windows ``[n, m_feat, W]``.

    Decoded amplitudes are recombined with the input phases before the
    restricted inverse transform.
    """
    rep = represent(windows, basis)
    amp_p, amp_v, _ = forward(model, rep)
    rec_p = ca_idft(Spectrum.from_polar(amp_p, rep.phase), basis)
    rec_v = ca_idft(Spectrum.from_polar(amp_v, rep.phase), basis)
    return np.asarray(rec_p), np.asarray(rec_v)


def window_scores(model: ModelState, basis: BasisSet, windows: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Per-window, per-position scores ``[n, W]`` for already-amplified windows.

    Each branch's squared error is averaged over features; the score is the
    larger of the two branch errors at every position.
    """
    windows = np.asarray(windows, dtype=float)
    if windows.ndim == 2:
        windows = windows[None]
    out = np.empty((windows.shape[0], windows.shape[-1]))
    for lo in range(0, windows.shape[0], chunk):
        x = windows[lo:lo + chunk]
        rec_p, rec_v = reconstruct(model, basis, x)
        err_p = ((x - rec_p) ** 2).mean(axis=1)
        err_v = ((x - rec_v) ** 2).mean(axis=1)
        out[lo:lo + chunk] = np.maximum(err_p, err_v)
    return out


def score_window(
    model: ModelState,
    basis: BasisSet,
    hp: HyperParams,
    window: TimeSeriesWindow | np.ndarray,
    amplify: bool = True,
) -> np.ndarray:
    """Scores ``[W]`` of one normalised window, amplified on its own first."""
    x = window.values if isinstance(window, TimeSeriesWindow) else np.asarray(window, float)
    if x.ndim == 1:
        x = x[None]
    return window_scores(model, basis, prepare(x, hp, amplify)[None])[0]


def aggregate(window_scores: Sequence[np.ndarray] | np.ndarray, offsets: Sequence[int], T: int) -> np.ndarray:
    """Mean, per timestamp, of the window scores that cover it."""
    ws = np.asarray(window_scores, dtype=float)
    if ws.ndim == 1:
        ws = ws[None]
    offsets = np.asarray(offsets, dtype=int)
    if ws.shape[0] != offsets.size:
        raise DataError(f"{ws.shape[0]} windows but {offsets.size} offsets")
    W = ws.shape[1]
    pos = (offsets[:, None] + np.arange(W)[None, :]).reshape(-1)
    if pos.size and (pos.min() < 0 or pos.max() >= T):
        raise DataError(f"window positions fall outside [0, {T})")
    total = np.bincount(pos, weights=ws.reshape(-1), minlength=T)
    count = np.bincount(pos, minlength=T)
    gaps = np.flatnonzero(count == 0)
    if gaps.size:
        raise DataError(f"{gaps.size} timestamps are not covered by any window (first: {int(gaps[0])})")
    return total / count


def _f1_from_counts(tp: np.ndarray, fp: np.ndarray, fn: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        r = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        return np.where(p + r > 0, 2 * p * r / (p + r), 0.0)


def choose_threshold(
    scores: np.ndarray,
    labels: Optional[np.ndarray] = None,
    mode: str = "best_f1",
    q: float = 0.99,
) -> float:
    """Pick a threshold; a point is flagged when its score is strictly above it.

    ``best_f1`` tries every distinct score value and keeps the F1 maximiser
    (lowest on ties). ``quantile`` returns the q-quantile of the scores.
    """
    s = np.asarray(scores, dtype=float).reshape(-1)
    if s.size == 0:
        raise DataError("no scores")
    if mode == "quantile":
        if not 0.0 <= q <= 1.0:
            raise DataError(f"quantile must lie in [0, 1], got {q}")
        return float(np.quantile(s, q))
    if mode != "best_f1":
        raise DataError(f"unknown threshold mode {mode!r}")
    if labels is None:
        raise DataError("best_f1 thresholding needs labels")
    y = np.asarray(labels).reshape(-1).astype(bool)
    if y.size != s.size:
        raise DataError(f"{s.size} scores but {y.size} labels")
    cand = np.unique(s)
    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    pos_cum = np.concatenate([[0], np.cumsum(y[order])])
    n_le = np.searchsorted(s_sorted, cand, side="right")
    flagged = s.size - n_le
    tp = pos_cum[-1] - pos_cum[n_le]
    fp = flagged - tp
    fn = y.sum() - tp
    f1 = _f1_from_counts(tp, fp, fn)
    return float(cand[int(np.argmax(f1))])


def point_adjust(predictions: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Mark a whole labelled segment as detected once any point inside it is."""
    pred = np.asarray(predictions).astype(np.int8).reshape(-1).copy()
    y = np.asarray(labels).astype(bool).reshape(-1)
    if pred.size != y.size:
        raise DataError(f"{pred.size} predictions but {y.size} labels")
    edges = np.diff(np.concatenate([[0], y.astype(np.int8), [0]]))
    for a, b in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
        if pred[a:b].any():
            pred[a:b] = 1
    return pred


# -- group fitting and per-service detection --------------------------------------

@dataclass
class FittedGroup:
    hp: HyperParams
    ablation: Ablation
    bases: dict
    stats: dict
    model: ModelState
    train: TrainResult


def _service_basis(series: np.ndarray, hp: HyperParams, ablation: Ablation, sid, basis_hop: int) -> BasisSet:
    if not ablation.patex:
        return BasisSet.full(series.shape[0], hp.window_size, sid)
    return select_basis(window_stack(series, hp.window_size, basis_hop), hp.k_bases, sid)


def preprocess_group(
    datasets: Sequence,
    hp: HyperParams,
    ablation: Ablation = Ablation(),
    basis_hop: Optional[int] = None,
) -> tuple[dict, dict]:
    """Normalisation statistics and basis of every service, keyed by service id."""
    if not datasets:
        raise DataError("a service group needs at least one service")
    basis_hop = hp.window_size if basis_hop is None else basis_hop
    bases, stats = {}, {}
    for ds in datasets:
        norm, st = minmax_normalize(ds.train)
        series = prepare(norm, hp, ablation.dualconv_t)
        bases[ds.service_id] = _service_basis(series, hp, ablation, ds.service_id, basis_hop)
        stats[ds.service_id] = st
    return bases, stats


def train_group(
    datasets: Sequence,
    hp: HyperParams,
    bases: dict,
    stats: dict,
    *,
    epochs: int = 200,
    seed: int = 0,
    ablation: Ablation = Ablation(),
    train_hop: int = 1,
) -> FittedGroup:
    """Train one model on the union of the services' frequency representations."""
    k = hp.k_bases if ablation.patex else n_bins(hp.window_size)
    reps = []
    for ds in datasets:
        norm, _ = minmax_normalize(ds.train, stats[ds.service_id])
        series = prepare(norm, hp, ablation.dualconv_t)
        reps.append(represent(window_stack(series, hp.window_size, train_hop), bases[ds.service_id]))
    rows = stack_rows(reps, k)
    model = init_model(k, hp, seed=seed, linear=not ablation.dualconv_f, dec_bias=rows[:, 0, :].mean(axis=0))
    result = train_rows(model, rows, epochs, hp.learning_rate)
    return FittedGroup(hp, ablation, bases, stats, result.model, result)


def fit_service_group(
    datasets: Sequence,
    hp: HyperParams,
    *,
    epochs: int = 200,
    seed: int = 0,
    ablation: Ablation = Ablation(),
    train_hop: int = 1,
    basis_hop: Optional[int] = None,
) -> FittedGroup:
    """Select a basis per service, then train one shared model on all of them."""
    bases, stats = preprocess_group(datasets, hp, ablation, basis_hop)
    return train_group(
        datasets, hp, bases, stats, epochs=epochs, seed=seed, ablation=ablation, train_hop=train_hop
    )


def score_series(
    model: ModelState,
    basis: BasisSet,
    hp: HyperParams,
    series: np.ndarray,
    stats: Optional[NormStats] = None,
    amplify: bool = True,
    hop: int = 1,
) -> np.ndarray:
    """Per-timestamp scores of a raw ``[m_feat, T]`` series."""
    norm, _ = minmax_normalize(series, stats)
    x = prepare(norm, hp, amplify)
    T = x.shape[1]
    offsets = window_offsets(T, hp.window_size, hop)
    if offsets[-1] + hp.window_size < T:
        offsets = np.append(offsets, T - hp.window_size)  # cover the tail when hop > 1
    windows = np.stack([x[:, o:o + hp.window_size] for o in offsets])
    return aggregate(window_scores(model, basis, windows), offsets, T)


def detect(
    group: FittedGroup,
    service_id: Hashable,
    test: np.ndarray,
    labels: Optional[np.ndarray] = None,
    threshold_mode: Optional[str] = None,
    q: float = 0.99,
) -> AnomalyScoreSeries:
    """Score a test split; best-F1 thresholding when labels exist, else the q-quantile."""
    scores = score_series(
        group.model,
        group.bases[service_id],
        group.hp,
        test,
        group.stats[service_id],
        group.ablation.dualconv_t,
    )
    mode = threshold_mode or ("best_f1" if labels is not None else "quantile")
    return AnomalyScoreSeries(scores, choose_threshold(scores, labels, mode, q))


SCORE_HEADER = ["timestamp", "score", "prediction", "label"]


def write_scores(path: str | Path, result: AnomalyScoreSeries, labels: Optional[np.ndarray] = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_HEADER if labels is not None else SCORE_HEADER[:3])
        for t, (s, p) in enumerate(zip(result.scores, result.predictions)):
            row = [t, repr(float(s)), int(p)]
            if labels is not None:
                row.append(int(labels[t]))
            w.writerow(row)


def read_scores(path: str | Path) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header not in (SCORE_HEADER, SCORE_HEADER[:3]):
            raise DataError(f"{path}: unexpected header {header}")
        rows = list(reader)
    try:
        scores = np.array([float(r[1]) for r in rows])
        preds = np.array([int(r[2]) for r in rows])
        labels = np.array([int(r[3]) for r in rows]) if len(header) == 4 else None
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: {exc}") from None
    return scores, preds, labels
