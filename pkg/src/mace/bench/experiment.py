"""Experiment driver: preprocess -> train -> detect -> eval over service groups.

Every group of services gets its own directory under ``output_dir``::

    group_00/bases.csv       selected bins per service and feature
    group_00/norm.csv        per-feature min/max of each training split
    group_00/model.bin       trained weights (+ model.bin.manifest)
    group_00/loss.csv        loss per epoch, epoch 0 is the initial loss
    group_00/scores/<id>.csv per-timestamp scores and predictions
    group_00/thresholds.csv  threshold used per service
    group_00/metrics.csv     precision / recall / F1 per service

and the run writes ``metrics.csv`` (all services plus a macro row) and
``manifest.json`` (seed, config hash, timings, failures).  Groups run
concurrently, capped by ``MACE_THREADS``; a failing stage aborts only its
own group.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import __version__
from ..autoenc import load_model, save_model
from ..core import DataError, MaceError, NormStats, NumericalError
from ..detector import (
    AnomalyScoreSeries,
    choose_threshold,
    point_adjust,
    preprocess_group,
    read_scores,
    score_series,
    train_group,
    write_scores,
)
from ..patex import read_bases, write_bases
from .config import ExperimentConfig
from .data import ServiceDataset, group_services, load_dataset, write_dataset
from .metrics import prf1
from .synth import multipattern_fixture

log = logging.getLogger(__name__)

STAGES = ("preprocess", "train", "detect", "eval")
NORM_HEADER = ["service_id", "feature_index", "min", "max"]
METRIC_HEADER = ["group", "service_id", "precision", "recall", "f1", "threshold"]


class StageError(MaceError):
    """A stage of one group failed; ``cause`` keeps the original error."""

    def __init__(self, group: int, stage: str, cause: BaseException):
        super().__init__(f"group {group:02d} failed in {stage}: {type(cause).__name__}: {cause}")
        self.group = group
        self.stage = stage
        self.cause = cause


# -- data ------------------------------------------------------------------------

def synth_datasets(cfg: ExperimentConfig) -> list[ServiceDataset]:
    return multipattern_fixture(
        cfg.synth_services,
        cfg.synth_kind,
        cfg.synth_seed,
        m_feat=cfg.synth_features,
        window_size=cfg.window_size,
        t_train=cfg.synth_t_train,
        t_test=cfg.synth_t_test,
        noise=cfg.synth_noise,
        n_anomalies=cfg.synth_anomalies,
        duration=(cfg.synth_duration_min, cfg.synth_duration_max),
        spike_magnitude=cfg.synth_spike_magnitude,
        spike_duration=(cfg.synth_spike_duration_min, cfg.synth_spike_duration_max),
    )


def load_services(cfg: ExperimentConfig) -> list[ServiceDataset]:
    """Datasets from ``data_root``, or the synthetic fixture when it is empty."""
    if cfg.data_root:
        return load_dataset(cfg.data_root, cfg.layout)
    return synth_datasets(cfg)


def write_synth(cfg: ExperimentConfig, root: Optional[str | Path] = None) -> Path:
    """Materialise the synthetic fixture in the smd_style layout."""
    root = Path(root or cfg.data_root or Path(cfg.output_dir) / "data")
    write_dataset(root, synth_datasets(cfg))
    return root


# -- small CSV formats -----------------------------------------------------------------

def write_norm(path: Path, stats: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NORM_HEADER)
        for sid, st in stats.items():
            for i, (lo, hi) in enumerate(zip(st.lo, st.hi)):
                w.writerow([sid, i, repr(float(lo)), repr(float(hi))])


def read_norm(path: Path) -> dict[str, NormStats]:
    rows: dict[str, list[tuple[int, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != NORM_HEADER:
            raise DataError(f"{path}: expected header {','.join(NORM_HEADER)}")
        for lineno, r in enumerate(reader, start=2):
            try:
                rows.setdefault(r[0], []).append((int(r[1]), float(r[2]), float(r[3])))
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed row {r}") from None
    out = {}
    for sid, vals in rows.items():
        vals.sort()
        out[sid] = NormStats([v[1] for v in vals], [v[2] for v in vals])
    return out


def write_loss(path: Path, initial: float, losses: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for e, v in enumerate([initial, *losses]):
            w.writerow([e, repr(float(v))])


def _write_rows(path: Path, header: list[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- stages ----------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def group_dir(cfg: ExperimentConfig, index: int) -> Path:
    return Path(cfg.output_dir) / f"group_{index:02d}"


def stage_preprocess(cfg: ExperimentConfig, datasets: Sequence[ServiceDataset], gdir: Path) -> None:
    hp = cfg.hyperparams()
    bases, stats = preprocess_group(datasets, hp, cfg.ablation(), cfg.basis_hop or None)
    gdir.mkdir(parents=True, exist_ok=True)
    write_bases(gdir / "bases.csv", bases.values())
    write_norm(gdir / "norm.csv", stats)


def _bases_and_stats(cfg: ExperimentConfig, gdir: Path):
    bases = read_bases(gdir / "bases.csv", cfg.window_size)
    stats = read_norm(gdir / "norm.csv")
    return bases, stats


def stage_train(cfg: ExperimentConfig, datasets: Sequence[ServiceDataset], gdir: Path) -> None:
    bases, stats = _bases_and_stats(cfg, gdir)
    missing = [d.service_id for d in datasets if d.service_id not in bases or d.service_id not in stats]
    if missing:
        raise DataError(f"{gdir}: no preprocessing output for services {missing}")
    fitted = train_group(
        datasets,
        cfg.hyperparams(),
        bases,
        stats,
        epochs=cfg.epochs,
        seed=cfg.seed,
        ablation=cfg.ablation(),
        train_hop=cfg.train_hop,
    )
    save_model(fitted.model, gdir / "model.bin")
    write_loss(gdir / "loss.csv", fitted.train.initial_loss, fitted.train.losses)


def stage_detect(cfg: ExperimentConfig, datasets: Sequence[ServiceDataset], gdir: Path) -> None:
    bases, stats = _bases_and_stats(cfg, gdir)
    model = load_model(gdir / "model.bin")
    hp = cfg.hyperparams()
    (gdir / "scores").mkdir(exist_ok=True)
    rows = []
    for ds in datasets:
        scores = score_series(model, bases[ds.service_id], hp, ds.test, stats[ds.service_id], cfg.dualconv_t, cfg.score_hop)
        thr = choose_threshold(scores, ds.labels if cfg.threshold == "best_f1" else None, cfg.threshold, cfg.quantile)
        write_scores(gdir / "scores" / f"{ds.service_id}.csv", AnomalyScoreSeries(scores, thr), ds.labels)
        rows.append([ds.service_id, _fmt(thr)])
    _write_rows(gdir / "thresholds.csv", ["service_id", "threshold"], rows)


def stage_eval(cfg: ExperimentConfig, datasets: Sequence[ServiceDataset], gdir: Path, index: int = 0) -> list[list]:
    thresholds = {}
    with open(gdir / "thresholds.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            thresholds[r["service_id"]] = r["threshold"]
    rows = []
    for ds in datasets:
        _, preds, _ = read_scores(gdir / "scores" / f"{ds.service_id}.csv")
        if preds.shape != ds.labels.shape:
            raise DataError(f"{ds.service_id}: {preds.size} predictions for {ds.labels.size} labels")
        if cfg.point_adjust:
            preds = point_adjust(preds, ds.labels)
        p, r, f = prf1(preds, ds.labels)
        rows.append([f"{index:02d}", ds.service_id, _fmt(p), _fmt(r), _fmt(f), thresholds.get(ds.service_id, "")])
    _write_rows(gdir / "metrics.csv", METRIC_HEADER, rows)
    return rows


# -- orchestration ----------------------------------------------------------------

@dataclass
class GroupOutcome:
    index: int
    services: list[str]
    timings: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    error: Optional[StageError] = None


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    outcomes: list[GroupOutcome]
    metrics_path: Optional[Path]
    manifest_path: Path

    @property
    def failures(self) -> list[StageError]:
        return [o.error for o in self.outcomes if o.error is not None]

    @property
    def macro_f1(self) -> float:
        f = [float(r[4]) for o in self.outcomes for r in o.rows]
        return float(np.mean(f)) if f else float("nan")


def _run_group(cfg: ExperimentConfig, index: int, datasets: Sequence[ServiceDataset], stages: Sequence[str]) -> GroupOutcome:
    out = GroupOutcome(index, [d.service_id for d in datasets])
    gdir = group_dir(cfg, index)
    gdir.mkdir(parents=True, exist_ok=True)
    for stage in stages:
        t0 = time.perf_counter()
        try:
            if stage == "preprocess":
                stage_preprocess(cfg, datasets, gdir)
            elif stage == "train":
                stage_train(cfg, datasets, gdir)
            elif stage == "detect":
                stage_detect(cfg, datasets, gdir)
            else:
                out.rows = stage_eval(cfg, datasets, gdir, index)
        except (MaceError, OSError, ValueError, ArithmeticError) as exc:
            out.error = StageError(index, stage, exc)
            log.error("%s", out.error)
            break
        finally:
            out.timings[stage] = round(time.perf_counter() - t0, 6)
    return out


def worker_cap(n_jobs: int) -> int:
    raw = os.environ.get("MACE_THREADS", "")
    try:
        cap = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        raise DataError(f"MACE_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(cap, n_jobs))


def run_stages(
    cfg: ExperimentConfig,
    stages: Sequence[str] = STAGES,
    datasets: Optional[Sequence[ServiceDataset]] = None,
) -> ExperimentReport:
    """Run ``stages`` (in pipeline order) for every group and write the run manifest."""
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise DataError(f"unknown stages {bad}")
    stages = [s for s in STAGES if s in stages]
    t0 = time.perf_counter()
    datasets = list(datasets) if datasets is not None else load_services(cfg)
    groups = group_services(datasets, cfg.group_size)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=worker_cap(len(groups))) as pool:
        futures = [pool.submit(_run_group, cfg, i, g, stages) for i, g in enumerate(groups)]
        outcomes = [f.result() for f in futures]

    metrics_path = None
    if "eval" in stages:
        rows = [r for o in outcomes for r in o.rows]
        if rows:
            macro = [np.mean([float(r[c]) for r in rows]) for c in (2, 3, 4)]
            rows = rows + [["all", "macro", *(_fmt(v) for v in macro), ""]]
        metrics_path = out_dir / "metrics.csv"
        _write_rows(metrics_path, METRIC_HEADER, rows)

    manifest = {
        "version": __version__,
        "config_source": cfg.source,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "stages": list(stages),
        "threads": worker_cap(len(groups)),
        "groups": [
            {
                "index": o.index,
                "services": o.services,
                "timings_s": o.timings,
                "status": "ok" if o.error is None else "failed",
                "failed_stage": None if o.error is None else o.error.stage,
                "error": None if o.error is None else str(o.error),
            }
            for o in outcomes
        ],
        "total_s": round(time.perf_counter() - t0, 6),
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ExperimentReport(cfg, outcomes, metrics_path, manifest_path)


def run_experiment(cfg: ExperimentConfig, datasets: Optional[Sequence[ServiceDataset]] = None) -> ExperimentReport:
    return run_stages(cfg, STAGES, datasets)


def exit_code(report: ExperimentReport) -> int:
    """0 on success; 3 if any group failed numerically, 2 for data errors, 1 otherwise."""
    causes = [e.cause for e in report.failures]
    if not causes:
        return 0
    if any(isinstance(c, NumericalError) for c in causes):
        return 3
    if any(isinstance(c, (DataError, OSError)) for c in causes):
        return 2
    return 1
