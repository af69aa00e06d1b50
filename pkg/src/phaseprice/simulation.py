"""Monte-Carlo cohorts from a fitted charge/LOS model.

A patient's admission charge fixes its label ``z0`` for the whole stay. The
label crosses the partition curves at deterministic times, the discharge
hazard is ``c_i`` while in band ``i``, and the LOS is drawn by inverting the
piecewise-linear cumulative hazard with a single uniform.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass

import numpy as np

from .converter import FittedModel
from .errors import ValidationError

log = logging.getLogger(__name__)

SHARD_SIZE = 8192


@dataclass(frozen=True)
class CohortRecord:
    y0: float
    t: float
    y: float
    path: tuple[tuple[int, float], ...] = ()


@dataclass(frozen=True, eq=False)
class Cohort:
    """Column-oriented cohort; ``crossings[k, j]`` is when patient ``k``
    enters band ``j + 2`` (0 if admitted above it, inf if never reached)."""

    z0: np.ndarray
    y0: np.ndarray
    los: np.ndarray
    charge: np.ndarray
    crossings: np.ndarray

    def __len__(self) -> int:
        return self.los.size

    def start_band(self) -> np.ndarray:
        return 1 + np.sum(self.crossings == 0.0, axis=1)

    def path(self, k: int) -> tuple[tuple[int, float], ...]:
        tau = self.crossings[k]
        first = 1 + int(np.sum(tau == 0.0))
        steps = [(first, 0.0)]
        for j, s in enumerate(tau):
            if 0.0 < s < self.los[k]:
                steps.append((j + 2, float(s)))
        return tuple(steps)

    def record(self, k: int) -> CohortRecord:
        return CohortRecord(float(self.y0[k]), float(self.los[k]), float(self.charge[k]), self.path(k))

    def records(self) -> list[CohortRecord]:
        return [self.record(k) for k in range(len(self))]

    def band_at(self, s: float) -> np.ndarray:
        """Band of each patient at time ``s`` regardless of discharge."""
        return 1 + np.sum(self.crossings <= s, axis=1)


def band_of(m: FittedModel, y, t):
    """Index ``i`` with ``C_{i-1}(t) <= y < C_i(t)``."""
    return m.band_of(y, t)


def crossing_times(m: FittedModel, z0: np.ndarray) -> np.ndarray:
    z0 = np.asarray(z0, dtype=float)
    cols = [curve.crossing_time(z0) for curve in m.curves.curves]
    if not cols:
        return np.empty((z0.size, 0))
    return np.column_stack([np.atleast_1d(c) for c in cols])


def _draw_los(c: np.ndarray, tau: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Solve ``H(s) = e`` where ``H`` accrues ``c_j`` per unit time in band j."""
    size = e.size
    bounds = np.column_stack([np.zeros(size), tau, np.full(size, np.inf)])
    los = np.full(size, np.nan)
    acc = np.zeros(size)
    for j, rate in enumerate(c):
        lo, hi = bounds[:, j], bounds[:, j + 1]
        with np.errstate(invalid="ignore"):
            width = np.where(hi > lo, hi - lo, 0.0)
            gain = rate * width
        hit = np.isnan(los) & (acc + gain >= e)
        los[hit] = lo[hit] + (e[hit] - acc[hit]) / rate
        acc = acc + np.where(np.isfinite(gain), gain, 0.0)
    return los


def _simulate_block(m: FittedModel, rng: np.random.Generator, size: int) -> Cohort:
    lp = m.lognormal
    z0 = rng.standard_normal(size)
    e = -np.log1p(-rng.random(size))
    tau = crossing_times(m, z0)
    los = _draw_los(m.params.c, tau, e)
    late = int(np.sum(los > m.horizon))
    if late:
        log.warning("%d discharge draws fell beyond the horizon %.6g; the last "
                    "band's hazard was extended", late, m.horizon)
    y0 = np.exp(lp.mu + lp.sigma * z0)
    return Cohort(z0, y0, los, y0 * np.exp(los), tau)


def simulate_patient(m: FittedModel, rng: np.random.Generator) -> CohortRecord:
    return _simulate_block(m, rng, 1).record(0)


def simulate_arrays(m: FittedModel, size: int, seed: int) -> Cohort:
    """Seeded cohort; shard ``k`` uses the stream ``(seed, k)``."""
    if int(size) < 1:
        raise ValidationError("cohort size must be >= 1")
    size = int(size)
    blocks = []
    for shard, start in enumerate(range(0, size, SHARD_SIZE)):
        rng = np.random.default_rng([int(seed), shard])
        blocks.append(_simulate_block(m, rng, min(SHARD_SIZE, size - start)))
    return Cohort(*(np.concatenate([getattr(b, f) for b in blocks])
                    for f in ("z0", "y0", "los", "charge")),
                  np.concatenate([b.crossings for b in blocks], axis=0))


def simulate_cohort(m: FittedModel, size: int, seed: int) -> list[CohortRecord]:
    return simulate_arrays(m, size, seed).records()


def cohort_csv(charge, los) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["charge", "los"])
    for y, t in zip(charge, los):
        w.writerow([repr(float(y)), repr(float(t))])
    return buf.getvalue()


def paths_json(cohort: Cohort) -> str:
    paths = [[[b, s] for b, s in cohort.path(k)] for k in range(len(cohort))]
    return json.dumps({"paths": paths}, allow_nan=False)


def empirical_occupancy(cohort: Cohort, s: float, n: int) -> np.ndarray:
    """Fractions in bands 1..n still admitted at ``s``, then the discharged fraction."""
    alive = cohort.los > s
    band = cohort.band_at(s)
    counts = np.array([np.sum(alive & (band == i)) for i in range(1, n + 1)], dtype=float)
    return np.append(counts, np.sum(~alive)) / len(cohort)
