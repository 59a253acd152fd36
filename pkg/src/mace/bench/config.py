"""Flat ``key = value`` experiment configuration.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Unknown keys and malformed values are rejected with the file and line.
Bundled configurations can be named without a path (``default``,
``multipattern``, ``spike``).
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from ..core import DataError, HyperParams
from ..detector import Ablation

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


@dataclass(frozen=True)
class ExperimentConfig:
    # data: a dataset directory, or a synthetic fixture when empty
    data_root: str = ""
    layout: str = "smd_style"
    output_dir: str = "mace_out"
    group_size: int = 10

    # hyperparameters
    window_size: int = 40
    kernel_len: int = 5
    k_bases: int = 20
    gamma_t: int = 7
    gamma_f: int = 7
    sigma_t: float = 5.0
    sigma_f: float = 5.0
    learning_rate: float = 1e-3

    # training and scoring
    epochs: int = 200
    seed: int = 0
    train_hop: int = 1
    basis_hop: int = 0  # 0 means one window size
    score_hop: int = 1

    # evaluation
    threshold: str = "best_f1"
    quantile: float = 0.99
    point_adjust: bool = False

    # ablations
    patex: bool = True
    dualconv_t: bool = True
    dualconv_f: bool = True

    # synthetic fixture
    synth_kind: str = "contextual_swap"
    synth_services: int = 10
    synth_features: int = 2
    synth_seed: int = 0
    synth_t_train: int = 1000
    synth_t_test: int = 1000
    synth_noise: float = 0.05
    synth_anomalies: int = 4
    synth_duration_min: int = 40
    synth_duration_max: int = 80
    synth_spike_magnitude: float = 3.0
    synth_spike_duration_min: int = 1
    synth_spike_duration_max: int = 1

    # theory verdict suite
    theory_configs: int = 1000
    theory_trials: int = 10_000
    theory_spectra: int = 50
    theory_seed: int = 0

    source: str = dataclasses.field(default="", compare=False)

    def __post_init__(self):
        if self.layout != "smd_style":
            raise DataError(f"unknown dataset layout {self.layout!r}")
        if self.threshold not in ("best_f1", "quantile"):
            raise DataError(f"threshold must be best_f1 or quantile, got {self.threshold!r}")
        if not 0 < self.quantile <= 1:
            raise DataError(f"quantile must lie in (0, 1], got {self.quantile}")
        for name in ("group_size", "train_hop", "score_hop", "synth_services", "synth_features"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0 or self.basis_hop < 0:
            raise DataError("epochs and basis_hop must be non-negative")
        self.hyperparams()  # validates the hyperparameter block

    def hyperparams(self) -> HyperParams:
        return HyperParams(
            gamma_t=self.gamma_t,
            gamma_f=self.gamma_f,
            sigma_t=self.sigma_t,
            sigma_f=self.sigma_f,
            kernel_len=self.kernel_len,
            window_size=self.window_size,
            k_bases=self.k_bases,
            learning_rate=self.learning_rate,
        )

    def ablation(self) -> Ablation:
        return Ablation(patex=self.patex, dualconv_t=self.dualconv_t, dualconv_f=self.dualconv_f)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        """Canonical text form; parsing it back gives an equal config."""
        lines = []
        for f in fields(self):
            if f.name == "source":
                continue
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


_FIELDS = {f.name: f for f in fields(ExperimentConfig) if f.name != "source"}


def _convert(kind, raw: str, where: str):
    if kind in (bool, "bool"):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise DataError(f"{where}: expected a boolean, got {raw!r}")
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise DataError(f"{where}: cannot parse {raw!r} as {kind if isinstance(kind, str) else kind.__name__}") from None
    return raw


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise DataError(f"{where}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise DataError(f"{where}: unknown key {key!r}")
        if key in values:
            raise DataError(f"{where}: duplicate key {key!r}")
        values[key] = _convert(_FIELDS[key].type, raw, where)
    return ExperimentConfig(**values, source=source)


def bundled_configs() -> list[str]:
    root = resources.files("mace") / "data"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def _resolve(path: str | Path) -> tuple[str, str]:
    p = Path(path)
    if p.is_file():
        return p.read_text(), str(p)
    name = p.name[:-4] if p.name.endswith(".cfg") else p.name
    if p.parent == Path(".") and name in bundled_configs():
        res = resources.files("mace") / "data" / f"{name}.cfg"
        return res.read_text(), f"bundled:{name}"
    raise DataError(f"config file not found: {path}")


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    """Read a config file (or a bundled config by name) and apply overrides."""
    text, source = _resolve(path)
    cfg = parse_config(text, source)
    changes = {k: v for k, v in overrides.items() if v is not None}
    unknown = set(changes) - set(_FIELDS)
    if unknown:
        raise DataError(f"unknown override keys: {sorted(unknown)}")
    return cfg.replace(**changes) if changes else cfg
