"""Seeded multi-pattern synthetic services with injected anomalies.

A service is a sum of integer-bin sinusoids per feature plus Gaussian noise.
Test splits continue the training clock and carry an anomaly plan:

* ``point_spike`` adds ``magnitude`` on ``duration`` points,
* ``level_shift`` adds ``magnitude`` over a span,
* ``contextual_swap`` replaces a span by another service's clean pattern,
  which is normal there but anomalous here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import DataError
from .data import ServiceDataset

KINDS = ("point_spike", "level_shift", "contextual_swap")


@dataclass(frozen=True)
class Tone:
    freq: int  # cycles per window
    amp: float = 1.0
    phase: float = 0.0


@dataclass(frozen=True)
class AnomalyEvent:
    kind: str
    position: int
    duration: int = 1
    magnitude: float = 1.0
    donor: tuple = ()  # per-feature tones, contextual_swap only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown anomaly kind {self.kind!r}")
        if self.duration < 1:
            raise DataError(f"anomaly duration must be >= 1, got {self.duration}")
        if self.kind == "contextual_swap" and not self.donor:
            raise DataError("contextual_swap needs donor tones")


@dataclass(frozen=True)
class SynthSpec:
    service_id: str
    tones: tuple  # tuple (per feature) of tuples of Tone
    window_size: int = 40
    t_train: int = 1000
    t_test: int = 1000
    noise: float = 0.05
    offset: float = 0.0
    anomalies: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if not self.tones:
            raise DataError("a service needs at least one feature")
        for feat in self.tones:
            for tone in feat:
                if not 0 <= tone.freq < self.window_size / 2:
                    raise DataError(f"tone bin {tone.freq} must lie in [0, {self.window_size / 2})")
        for ev in self.anomalies:
            if ev.position < 0 or ev.position + ev.duration > self.t_test:
                raise DataError(f"anomaly at {ev.position}+{ev.duration} exceeds the test length {self.t_test}")
            if ev.kind == "contextual_swap" and len(ev.donor) != len(self.tones):
                raise DataError("donor must provide tones for every feature")

    @property
    def m_feat(self) -> int:
        return len(self.tones)


def render(tones: tuple, t: np.ndarray, W: int, offset: float = 0.0) -> np.ndarray:
    """Clean signal ``[m_feat, len(t)]`` for per-feature tone lists."""
    out = np.full((len(tones), t.size), float(offset))
    for i, feat in enumerate(tones):
        for tone in feat:
            out[i] += tone.amp * np.sin(2 * np.pi * tone.freq * t / W + tone.phase)
    return out


def synth_generate(spec: SynthSpec) -> ServiceDataset:
    rng = np.random.default_rng(spec.seed)
    W, m = spec.window_size, spec.m_feat
    t_tr = np.arange(spec.t_train)
    t_te = spec.t_train + np.arange(spec.t_test)
    train = render(spec.tones, t_tr, W, spec.offset) + rng.normal(0, spec.noise, (m, spec.t_train))
    noise = rng.normal(0, spec.noise, (m, spec.t_test))
    test = render(spec.tones, t_te, W, spec.offset) + noise
    labels = np.zeros(spec.t_test, dtype=np.int8)
    for ev in spec.anomalies:
        span = slice(ev.position, ev.position + ev.duration)
        if ev.kind in ("point_spike", "level_shift"):
            test[:, span] += ev.magnitude
        else:
            test[:, span] = render(ev.donor, t_te[span], W, spec.offset) + noise[:, span]
        labels[span] = 1
    return ServiceDataset(spec.service_id, train, test, labels)


# -- bundled fixtures ----------------------------------------------------------------

# two low bins per service; neighbours five apart have disjoint sets
FREQ_SETS = ((1, 3), (2, 5), (1, 4), (3, 5), (2, 4), (2, 6), (1, 6), (2, 7), (3, 7), (1, 5))


def multipattern_specs(
    n_services: int = 10,
    kind: str = "contextual_swap",
    seed: int = 0,
    *,
    m_feat: int = 2,
    window_size: int = 40,
    t_train: int = 1000,
    t_test: int = 1000,
    noise: float = 0.05,
    n_anomalies: int = 4,
    duration: tuple[int, int] = (40, 80),
    spike_magnitude: float = 3.0,
    spike_duration: tuple[int, int] = (1, 1),
    freq_sets: Optional[tuple] = None,
) -> list[SynthSpec]:
    """Specs for a group of services whose normal patterns use distinct bins.

    ``contextual_swap`` anomalies borrow the pattern of a service with a
    disjoint bin set; ``point_spike`` anomalies are short bursts of random sign
    whose length is drawn from ``spike_duration`` (single points by default).
    """
    freq_sets = freq_sets or FREQ_SETS
    if n_services > len(freq_sets):
        raise DataError(f"only {len(freq_sets)} distinct frequency sets are defined")
    rng = np.random.default_rng(seed)
    tones = []
    for s in range(n_services):
        feats = []
        for f in range(m_feat):
            amps = (1.0, 0.6) if f % 2 == 0 else (0.6, 1.0)
            feats.append(
                tuple(Tone(b, a, float(rng.uniform(0, 2 * np.pi))) for b, a in zip(freq_sets[s], amps))
            )
        tones.append(tuple(feats))

    specs = []
    for s in range(n_services):
        donors = [d for d in range(n_services) if not set(freq_sets[d]) & set(freq_sets[s])]
        events = []
        if kind == "contextual_swap":
            slots = np.linspace(window_size, t_test - window_size, n_anomalies + 1).astype(int)
            for a in range(n_anomalies):
                dur = int(rng.integers(duration[0], duration[1] + 1))
                lo, hi = slots[a], slots[a + 1] - dur
                pos = int(rng.integers(lo, max(lo + 1, hi)))
                donor = tones[donors[int(rng.integers(len(donors)))]]
                events.append(AnomalyEvent("contextual_swap", pos, dur, 0.0, donor))
        elif kind == "point_spike":
            slots = np.linspace(window_size, t_test - window_size, n_anomalies + 1).astype(int)
            for a in range(n_anomalies):
                dur = int(rng.integers(spike_duration[0], spike_duration[1] + 1))
                pos = int(rng.integers(slots[a] + 5, max(slots[a] + 6, slots[a + 1] - 5 - dur)))
                sign = 1.0 if rng.random() < 0.5 else -1.0
                events.append(AnomalyEvent("point_spike", pos, dur, sign * spike_magnitude))
        else:
            raise DataError(f"unsupported fixture kind {kind!r}")
        specs.append(
            SynthSpec(
                f"svc{s:02d}", tones[s], window_size, t_train, t_test, noise, 0.0, tuple(events),
                int(rng.integers(2**31)),
            )
        )
    return specs


def multipattern_fixture(n_services: int = 10, kind: str = "contextual_swap", seed: int = 0, **kw) -> list[ServiceDataset]:
    return [synth_generate(s) for s in multipattern_specs(n_services, kind, seed, **kw)]
