"""Per-band price curves: expected charge in excess of the band floor among
patients still admitted in that band."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .converter import FittedModel, band_integral
from .errors import DomainError, VacuousBandError
from .numerics import QuadratureSpec

log = logging.getLogger(__name__)

# bands whose occupancy falls below this are treated as empty
VACUOUS_OCCUPANCY = 1e-300


@dataclass(frozen=True)
class PriceCurve:
    band: int
    t: np.ndarray
    price: np.ndarray  # NaN marks a vacuous cell
    occupancy: np.ndarray
    log_numerator: np.ndarray
    log_denominator: np.ndarray

    def is_increasing(self) -> bool:
        """Whether the finite prices rise with t (diagnostic only)."""
        vals = self.price[np.isfinite(self.price)]
        return bool(np.all(np.diff(vals) > 0))


def _price_parts(m: FittedModel, i: int, t: float, spec: QuadratureSpec | None):
    if not 1 <= i <= m.n:
        raise DomainError(f"band must lie in 1..{m.n}")
    if not 0 <= t <= m.horizon * (1 + 1e-12):
        raise DomainError(f"t={t!r} outside the constructed horizon [0, {m.horizon!r}]")
    sigma = m.lognormal.sigma
    z_floor = m.curves.label(i - 1, t)
    den, den_ref = band_integral(m, i, t, spec=spec)
    log_den = math.log(den) + den_ref if den > 0 else -math.inf
    if log_den < math.log(VACUOUS_OCCUPANCY):
        raise VacuousBandError(i, t, math.exp(log_den) if den > 0 else 0.0)

    if math.isfinite(z_floor):
        def weight(z):
            # log(exp(sigma z) - exp(sigma z_floor)), stable near the floor
            with np.errstate(divide="ignore"):
                return sigma * z + np.log1p(-np.exp(sigma * (z_floor - z)))
    else:
        def weight(z):
            return sigma * z

    num, num_ref = band_integral(m, i, t, log_weight=weight, spec=spec)
    scale = m.lognormal.mu + t
    log_num = math.log(num) + num_ref + scale if num > 0 else -math.inf
    return log_num, log_den


def price(m: FittedModel, i: int, t: float, spec: QuadratureSpec | None = None) -> float:
    """Conditional mean of ``Y_t - C_{i-1}(t)`` given band ``i`` at ``t``."""
    log_num, log_den = _price_parts(m, i, float(t), spec)
    return math.exp(log_num - log_den)


def price_table(
    m: FittedModel,
    t_grid: Sequence[float],
    spec: QuadratureSpec | None = None,
) -> list[PriceCurve]:
    """Prices for every band on ``t_grid``; vacuous cells become NaN."""
    t_grid = np.asarray(t_grid, dtype=float)
    out = []
    for i in range(1, m.n + 1):
        prices = np.full(t_grid.size, np.nan)
        occ = np.zeros(t_grid.size)
        lnum = np.full(t_grid.size, -np.inf)
        lden = np.full(t_grid.size, -np.inf)
        for k, t in enumerate(t_grid):
            try:
                lnum[k], lden[k] = _price_parts(m, i, float(t), spec)
            except VacuousBandError as exc:
                occ[k] = exc.occupancy
                continue
            prices[k] = math.exp(lnum[k] - lden[k])
            occ[k] = math.exp(lden[k])
        curve = PriceCurve(i, t_grid.copy(), prices, occ, lnum, lden)
        if not curve.is_increasing():
            log.info("price curve of band %d is not monotone on the grid", i)
        out.append(curve)
    return out


def price_rows(curves: Sequence[PriceCurve]) -> list[tuple[int, float, float, float]]:
    return [
        (c.band, float(t), float(p), float(o))
        for c in curves
        for t, p, o in zip(c.t, c.price, c.occupancy)
    ]


def price_csv(curves: Sequence[PriceCurve]) -> str:
    """CSV text with header ``band,t,price,occupancy``; empty price when vacuous."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["band", "t", "price", "occupancy"])
    for band, t, p, o in price_rows(curves):
        w.writerow([band, repr(t), repr(p) if math.isfinite(p) else "", repr(o)])
    return buf.getvalue()
