"""Conversion of a Coxian model into a charge/LOS model.

Everything is computed in *label* coordinates ``z = (ln y - t - mu) / sigma``.
A patient's label is fixed for the whole stay, because charge grows along
``y0 * exp(t)``, and it is standard normal at admission. The partition curves
``Z_i(t)`` in label space do not depend on ``(mu, sigma)``. The ODE

    dZ_i/dt = -lam_i * int_{Z_{i-1}(t)}^{Z_i} phi(x) R(x, t) dx / (phi(Z_i) R(Z_i, t))

is the flux balance that makes the surviving mass above ``Z_i`` grow at rate
``lam_i`` times the mass of band ``i``. ``R`` is the survival function: along a
label it decays at rate ``c_i`` while the label sits in band ``i``. Charge
curves follow from ``C_i(t) = exp(mu + sigma * Z_i(t) + t)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.special import ndtri

from .errors import (
    ConstructionError,
    CurveCrossingError,
    DegenerateBandError,
    DomainError,
    NumericalError,
    ValidationError,
)
from .numerics import OdeSpec, QuadratureSpec, integrate, ode_trajectory
from .phase_type import CphParams, cph_quantile
from .rgrst import GrowthModel, LognormalParams

log = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
DEFAULT_HORIZON_QUANTILE = 1.0 - 1e-8


def log_std_normal(z):
    return -0.5 * np.square(z) - _LOG_SQRT_2PI


# --------------------------------------------------------------------------
# Curves


def _limit_slopes(t, z, dz):
    """Fritsch-Carlson limiter for non-increasing data."""
    d = np.minimum(np.asarray(dz, dtype=float).copy(), 0.0)
    secant = np.diff(z) / np.diff(t)
    for k, sec in enumerate(secant):
        if sec == 0.0:
            d[k] = d[k + 1] = 0.0
            continue
        a, b = d[k] / sec, d[k + 1] / sec
        r = a * a + b * b
        if r > 9.0:
            tau = 3.0 / math.sqrt(r)
            d[k] = tau * a * sec
            d[k + 1] = tau * b * sec
    return d


class LabelCurve:
    """A non-increasing curve ``Z(t)`` in label space.

    Stored on an adaptive time grid and interpolated by monotone cubic
    Hermite segments. Beyond the last node the curve is held constant, which
    in charge space means it grows like ``exp(t)``, parallel to the
    characteristics.
    """

    def __init__(self, t: Sequence[float], z: Sequence[float], dz: Sequence[float] | None = None):
        t = np.asarray(t, dtype=float)
        z = np.asarray(z, dtype=float)
        if t.ndim != 1 or t.size < 2 or t.size != z.size:
            raise ValidationError("curve needs matching 1-d node arrays of length >= 2")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValidationError("curve time grid must start at 0 and increase strictly")
        if not np.all(np.isfinite(z)):
            raise ValidationError("curve values must be finite")
        if np.any(np.diff(z) > 0):
            raise ValidationError("label curve must be non-increasing")
        if dz is None:
            dz = _pchip_slopes(t, z)
        self.t = t
        self.z = z
        self.dz = _limit_slopes(t, z, dz)
        for arr in (self.t, self.z, self.dz):
            arr.setflags(write=False)
        self._zrev = z[::-1]
        h = np.diff(t)
        dz0, dz1 = self.dz[:-1] * h, self.dz[1:] * h
        dzv = z[1:] - z[:-1]
        # cubic in the local coordinate s in [0, 1]: c0 + c1 s + c2 s^2 + c3 s^3
        self._coef = np.stack([z[:-1], dz0, 3 * dzv - 2 * dz0 - dz1, -2 * dzv + dz0 + dz1], axis=1)
        self._h = h

    @property
    def horizon(self) -> float:
        return float(self.t[-1])


    def _segment(self, t):
        k = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, self.t.size - 2)
        return k, self._h[k]

    def _hermite(self, k, h, s):
        c = self._coef[k]
        return ((c[..., 3] * s + c[..., 2]) * s + c[..., 1]) * s + c[..., 0]

    def _hermite_slope(self, k, h, s):
        c = self._coef[k]
        return ((3 * c[..., 3] * s + 2 * c[..., 2]) * s + c[..., 1]) / h

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, 0.0, self.horizon)
        k, h = self._segment(tc)
        out = self._hermite(k, h, (tc - self.t[k]) / h)
        return float(out) if out.ndim == 0 else out

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, 0.0, self.horizon)
        k, h = self._segment(tc)
        out = np.where(t > self.horizon, 0.0, self._hermite_slope(k, h, (tc - self.t[k]) / h))
        return float(out) if out.ndim == 0 else out

    def crossing_time(self, z):
        """First time the curve drops to ``z``: 0 if ``z`` is already above it
        at t=0 and ``inf`` if the curve stays above ``z`` through the horizon."""
        z = np.asarray(z, dtype=float)
        out = np.empty(z.shape)
        above = z >= self.z[0]
        never = z < self.z[-1]
        out[above] = 0.0
        out[never] = np.inf
        mid = ~(above | never)
        if np.any(mid):
            out[mid] = self._invert(z[mid])
        return float(out) if out.ndim == 0 else out

    def _invert(self, z):
        # nodes are non-increasing: bracket on the reversed array
        j = np.searchsorted(self._zrev, z, side="left")
        k = np.clip(self.z.size - 1 - j, 0, self.z.size - 2)
        c = self._coef[k]
        c0, c1, c2, c3 = c[:, 0] - z, c[:, 1], c[:, 2], c[:, 3]
        span = self.z[k] - self.z[k + 1]
        lo = np.zeros_like(z)
        hi = np.ones_like(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.clip(np.where(span > 0, (self.z[k] - z) / span, 0.5), 0.0, 1.0)
            for _ in range(6):
                f = ((c3 * s + c2) * s + c1) * s + c0
                lo = np.where(f > 0, s, lo)
                hi = np.where(f <= 0, s, hi)
                step = s - f / ((3 * c3 * s + 2 * c2) * s + c1)
                bad = ~np.isfinite(step) | (step < lo) | (step > hi)
                s = np.where(bad, 0.5 * (lo + hi), step)
        f = ((c3 * s + c2) * s + c1) * s + c0
        slow = np.abs(f) > 64 * np.finfo(float).eps * np.maximum(1.0, np.abs(z))
        if np.any(slow):
            a, b = lo[slow], hi[slow]
            q0, q1, q2, q3 = c0[slow], c1[slow], c2[slow], c3[slow]
            for _ in range(60):
                m = 0.5 * (a + b)
                f = ((q3 * m + q2) * m + q1) * m + q0
                a = np.where(f > 0, m, a)
                b = np.where(f <= 0, m, b)
            s[slow] = 0.5 * (a + b)
        return self.t[k] + s * self._h[k]

    def to_pairs(self) -> list[list[float]]:
        return [[float(a), float(b)] for a, b in zip(self.t, self.z)]


def _pchip_slopes(t, z):
    from scipy.interpolate import PchipInterpolator

    return PchipInterpolator(t, z).derivative()(t)


@dataclass(frozen=True)
class PartitionCurves:
    """Curves ``Z_1 > ... `` separating the bands, in label coordinates.

    ``Z_0 = -inf`` and ``Z_n = +inf`` are implicit.
    """

    n: int
    curves: tuple[LabelCurve, ...]
    horizon: float

    def __post_init__(self):
        if len(self.curves) != self.n - 1:
            raise ValidationError(f"expected {self.n - 1} curves, got {len(self.curves)}")

    def label(self, i: int, t):
        """``Z_i(t)`` for ``i`` in ``0..n`` (infinite at the ends)."""
        t = np.asarray(t, dtype=float)
        if i <= 0:
            out = np.full(t.shape, -np.inf)
        elif i >= self.n:
            out = np.full(t.shape, np.inf)
        else:
            out = np.asarray(self.curves[i - 1](t))
        return float(out) if out.ndim == 0 else out

    def charge(self, i: int, t, lp: LognormalParams):
        """``C_i(t)`` in charge units: 0 for ``i = 0`` and ``inf`` for ``i = n``."""
        t = np.asarray(t, dtype=float)
        with np.errstate(over="ignore"):
            out = np.exp(lp.mu + lp.sigma * np.asarray(self.label(i, t)) + t)
        return float(out) if np.ndim(out) == 0 else out

    def band_of_label(self, z, t):
        z = np.asarray(z, dtype=float)
        t = np.asarray(t, dtype=float)
        band = np.ones(np.broadcast(z, t).shape, dtype=int)
        for curve in self.curves:
            band += z >= curve(t)
        return band

    def is_increasing(self, t) -> bool:
        vals = [self.label(i, t) for i in range(1, self.n)]
        return all(np.all(b > a) for a, b in zip(vals[:-1], vals[1:]))


# --------------------------------------------------------------------------
# Survival function


@dataclass(frozen=True)
class BoundaryRecord:
    """Where backward characteristics leave a band.

    Labels ``z >= axis_from`` reach the admission axis t=0 inside the band,
    where survival is 1. Lower labels hit the curve ``lower_curve`` and carry
    the upstream band's survival value at the contact point.
    """

    axis_from: float
    lower_curve: LabelCurve | None = None
    upstream: "BandRho | None" = None


class BandRho:
    """Survival ``R_i`` of one band, transported along characteristics.

    ``R_i(z, t) = R_b(contact) * exp(-c_i * (t - s_b))`` where ``s_b`` is the
    time the label entered the band: 0 on the admission axis, otherwise the
    crossing time of the lower curve.
    """

    def __init__(self, index: int, rate: float, boundary: BoundaryRecord):
        self.index = index
        self.rate = float(rate)
        self.boundary = boundary

    def log_value(self, z, t):
        z = np.asarray(z, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("t must be non-negative")
        b = self.boundary
        if b.lower_curve is None:
            return -self.rate * t + np.zeros_like(z)
        entry = np.minimum(b.lower_curve.crossing_time(z), t)
        return b.upstream.log_value(z, entry) - self.rate * (t - entry)

    def __call__(self, z, t):
        return np.exp(self.log_value(z, t))


def band_rho(index: int, rate: float, boundary: BoundaryRecord) -> BandRho:
    if not rate > 0:
        raise ValidationError("band rate must be positive")
    if boundary.lower_curve is not None and boundary.upstream is None:
        raise ConstructionError("curve boundary needs upstream survival values", index)
    return BandRho(index, rate, boundary)


@dataclass(frozen=True)
class PiecewiseRho:
    """The assembled survival function: band ``i`` evaluator on band ``i``."""

    c: np.ndarray
    curves: PartitionCurves
    bands: tuple[BandRho, ...]

    def log_value(self, z, t):
        """Log survival for labels ``z`` at times ``t`` (broadcast).

        Sums ``c_j`` times the time spent in each band along the label's
        characteristic, which agrees with the band-wise evaluators.
        """
        z, t = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(t, dtype=float))
        out = np.zeros(z.shape)
        entry = np.zeros(z.shape)
        for j, rate in enumerate(self.c):
            if j < len(self.curves.curves):
                leave = self.curves.curves[j].crossing_time(z)
            else:
                leave = np.full(z.shape, np.inf)
            lo = np.minimum(entry, t)
            hi = np.minimum(leave, t)
            out -= rate * np.maximum(hi - lo, 0.0)
            entry = np.maximum(entry, leave)
        return out

    def band_log_value(self, i: int, z, t):
        return self.bands[i - 1].log_value(z, t)


# --------------------------------------------------------------------------
# Construction


def initial_labels(alpha: Sequence[float]) -> np.ndarray:
    """Standard-normal cut points ``z_1 < ... < z_{n-1}`` with band masses alpha."""
    alpha = np.asarray(alpha, dtype=float)
    n = alpha.size
    head = np.cumsum(alpha)[:-1]
    tail = np.cumsum(alpha[::-1])[::-1][1:]
    if n > 1 and (np.any(head <= 0) or np.any(tail <= 0)):
        bad = int(np.flatnonzero((head <= 0) | (tail <= 0))[0]) + 1
        raise DegenerateBandError(f"partial sum of alpha at index {bad} is 0 or 1")
    z = np.where(head <= 0.5, ndtri(np.minimum(head, 0.5)), -ndtri(np.minimum(tail, 0.5)))
    return z


def initial_cutpoints(alpha: Sequence[float], lp: LognormalParams) -> np.ndarray:
    """Admission-charge cut points whose log-normal band masses equal ``alpha``."""
    return np.exp(lp.mu + lp.sigma * initial_labels(alpha))


def _band_terms(rho_band: BandRho, z, t):
    return log_std_normal(z) + rho_band.log_value(z, t)


def band_curve(
    index: int,
    rate: float,
    lower: LabelCurve | None,
    rho_band: BandRho,
    start: float,
    horizon: float,
    breakpoints: Sequence[float] = (),
    ode_spec: OdeSpec | None = None,
    quad_spec: QuadratureSpec | None = None,
) -> LabelCurve:
    """Solve for the upper curve of band ``index``.

    ``lower`` is the curve below (None for the first band), ``rho_band`` the
    band's survival evaluator and ``start`` the admission cut label.
    """
    if not rate > 0:
        raise ValidationError("forward rate must be positive")
    ode_spec = ode_spec or OdeSpec()
    quad_spec = quad_spec or QuadratureSpec()

    def flux_ratio(t, zu):
        zl = -np.inf if lower is None else float(lower(t))
        if zu == zl:
            return 0.0
        top = float(_band_terms(rho_band, zu, t))
        if not math.isfinite(top):
            raise NumericalError(
                f"band {index}: density underflow at t={t:.6g}; use a shorter horizon"
            )
        # trial stages of the solver may step below the lower curve; the signed
        # integral continues the field smoothly and pushes them back
        a, b, sign = (zl, zu, 1.0) if zl < zu else (zu, zl, -1.0)
        pts = [p for p in breakpoints if a < p < b]
        return sign * integrate(lambda x: np.exp(_band_terms(rho_band, x, t) - top),
                                a, b, quad_spec, points=pts)

    def rhs(t, zu):
        return -rate * flux_ratio(t, zu)

    t_nodes, z_nodes = ode_trajectory(rhs, 0.0, float(start), float(horizon), ode_spec)
    dz = np.array([rhs(t, z) for t, z in zip(t_nodes, z_nodes)])
    if lower is not None:
        gap = z_nodes - lower(t_nodes)
        if np.any(gap <= 0) and not (gap[0] == 0 and np.all(gap[1:] > 0)):
            raise CurveCrossingError(index, float(t_nodes[np.argmax(gap <= 0)]))
    return LabelCurve(t_nodes, z_nodes, dz)


def default_horizon(p: CphParams, quantile: float = DEFAULT_HORIZON_QUANTILE) -> float:
    return cph_quantile(p, quantile)


def build_partition(
    p: CphParams,
    horizon: float | None = None,
    ode_spec: OdeSpec | None = None,
    quad_spec: QuadratureSpec | None = None,
) -> tuple[PartitionCurves, PiecewiseRho]:
    """Inductive band-by-band construction in label coordinates."""
    horizon = float(horizon) if horizon is not None else default_horizon(p)
    if not horizon > 0:
        raise ValidationError("horizon must be positive")
    starts = initial_labels(p.alpha)
    boundary = BoundaryRecord(axis_from=-np.inf)
    curves: list[LabelCurve] = []
    bands: list[BandRho] = []
    for i in range(1, p.n + 1):
        band = band_rho(i, p.c[i - 1], boundary)
        bands.append(band)
        if i == p.n:
            break
        lower = curves[-1] if curves else None
        try:
            curve = band_curve(i, p.lam[i - 1], lower, band, starts[i - 1], horizon,
                               breakpoints=starts[: i - 1], ode_spec=ode_spec,
                               quad_spec=quad_spec)
        except CurveCrossingError:
            raise
        except NumericalError as exc:
            raise ConstructionError(str(exc), i) from exc
        curves.append(curve)
        boundary = BoundaryRecord(axis_from=float(starts[i - 1]), lower_curve=curve,
                                  upstream=band)
    partition = PartitionCurves(p.n, tuple(curves), horizon)
    return partition, PiecewiseRho(p.c.copy(), partition, tuple(bands))


def _bands_from_curves(p: CphParams, partition: PartitionCurves) -> PiecewiseRho:
    boundary = BoundaryRecord(axis_from=-np.inf)
    bands = []
    for i in range(1, p.n + 1):
        band = band_rho(i, p.c[i - 1], boundary)
        bands.append(band)
        if i < p.n:
            curve = partition.curves[i - 1]
            boundary = BoundaryRecord(float(curve.z[0]), curve, band)
    return PiecewiseRho(p.c.copy(), partition, tuple(bands))


@dataclass(frozen=True, eq=False)
class FittedModel:
    params: CphParams
    lognormal: LognormalParams
    curves: PartitionCurves
    rho: PiecewiseRho
    quad_spec: QuadratureSpec = field(default_factory=QuadratureSpec)

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def horizon(self) -> float:
        return self.curves.horizon

    @property
    def growth(self) -> GrowthModel:
        return GrowthModel(self.lognormal)

    def with_lognormal(self, lp: LognormalParams) -> FittedModel:
        """Same curves under a new admission distribution; exact, since label
        curves do not depend on it."""
        return FittedModel(self.params, lp, self.curves, self.rho, self.quad_spec)

    def to_label(self, y, t):
        y = np.asarray(y, dtype=float)
        if np.any(~(y > 0)):
            raise DomainError("charge must be positive")
        return (np.log(y) - np.asarray(t, dtype=float) - self.lognormal.mu) / self.lognormal.sigma

    def curve(self, i: int, t):
        return self.curves.charge(i, t, self.lognormal)

    def band_of(self, y, t):
        out = self.curves.band_of_label(self.to_label(y, t), t)
        return int(out) if out.ndim == 0 else out

    def rho_value(self, y, t):
        out = np.exp(self.rho.log_value(self.to_label(y, t), t))
        return float(out) if out.ndim == 0 else out

    def band_rho_value(self, i: int, y, t):
        out = np.exp(self.rho.band_log_value(i, self.to_label(y, t), t))
        return float(out) if np.ndim(out) == 0 else out

    def log_joint_label(self, z, t):
        """Log joint density of (label, LOS)."""
        band = self.curves.band_of_label(z, t)
        return log_std_normal(z) + np.log(self.params.c[band - 1]) + self.rho.log_value(z, t)

    def log_joint_pdf(self, y, t):
        y = np.asarray(y, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("t must be non-negative")
        z = self.to_label(y, t)
        return self.log_joint_label(z, t) - math.log(self.lognormal.sigma) - np.log(y)

    def to_dict(self) -> dict[str, Any]:
        lp = self.lognormal
        grids = []
        for curve in self.curves.curves:
            charges = np.exp(lp.mu + lp.sigma * curve.z + curve.t)
            grids.append([[float(a), float(b)] for a, b in zip(curve.t, charges)])
        return {
            **self.params.to_dict(),
            **lp.to_dict(),
            "horizon": float(self.horizon),
            "curves": grids,
            "slopes": [curve.dz.tolist() for curve in self.curves.curves],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> FittedModel:
        p = CphParams.from_dict(d)
        lp = LognormalParams.from_dict(d)
        grids = d.get("curves")
        if grids is None:
            raise ValidationError("curves: missing field")
        if len(grids) != p.n - 1:
            raise ValidationError(f"curves: expected {p.n - 1} grids, got {len(grids)}")
        slopes = d.get("slopes") or [None] * len(grids)
        curves = []
        for k, (grid, dz) in enumerate(zip(grids, slopes)):
            arr = np.asarray(grid, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 2 or np.any(arr[:, 1] <= 0):
                raise ValidationError(f"curves[{k}]: expected [t, C] pairs with C > 0")
            z = (np.log(arr[:, 1]) - arr[:, 0] - lp.mu) / lp.sigma
            z = np.minimum.accumulate(z)  # undo round-off from the exp/log trip
            curves.append(LabelCurve(arr[:, 0], z, dz))
        horizon = float(d.get("horizon", curves[0].horizon if curves else math.inf))
        if not curves and not math.isfinite(horizon):
            horizon = default_horizon(p)
        partition = PartitionCurves(p.n, tuple(curves), horizon)
        return cls(p, lp, partition, _bands_from_curves(p, partition))


def construct_rho(
    p: CphParams,
    lp: LognormalParams,
    horizon: float | None = None,
    ode_spec: OdeSpec | None = None,
    quad_spec: QuadratureSpec | None = None,
) -> FittedModel:
    """Build partition curves and the piecewise survival function for ``p``."""
    partition, rho = build_partition(p, horizon, ode_spec, quad_spec)
    return FittedModel(p, lp, partition, rho, quad_spec or QuadratureSpec())


def joint_pdf(m: FittedModel, y, t):
    """Joint density of total charge and LOS, per charge unit per time unit."""
    out = np.exp(m.log_joint_pdf(y, t))
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# Band integrals


def band_limits(m: FittedModel, i: int, t: float) -> tuple[float, float]:
    return m.curves.label(i - 1, t), m.curves.label(i, t)


def _probe(lo: float, hi: float) -> np.ndarray:
    a = lo if math.isfinite(lo) else min(hi, 0.0) - 8.0
    b = hi if math.isfinite(hi) else max(lo, 0.0) + 8.0
    return np.linspace(a, b, 65)


def band_integral(
    m: FittedModel,
    i: int,
    t: float,
    log_weight=None,
    spec: QuadratureSpec | None = None,
) -> tuple[float, float]:
    """``int_band exp(log_weight(z)) * phi(z) * R(z, t) dz`` over band ``i`` at ``t``.

    Returned as ``(value, log_scale)`` with the integral equal to
    ``value * exp(log_scale)``; the scale keeps deep-tail bands representable.
    """
    spec = spec or m.quad_spec
    lo, hi = band_limits(m, i, t)
    if not hi > lo:
        return 0.0, 0.0
    band = m.rho.bands[i - 1]

    def ell(z):
        base = log_std_normal(z) + band.log_value(z, t)
        return base if log_weight is None else base + log_weight(z)

    probe = ell(_probe(lo, hi))
    ref = float(np.max(probe[np.isfinite(probe)])) if np.any(np.isfinite(probe)) else 0.0
    pts = [float(c.z[0]) for c in m.curves.curves if lo < c.z[0] < hi]
    with np.errstate(under="ignore"):
        value = integrate(lambda z: np.exp(ell(z) - ref), lo, hi, spec, points=pts)
    return value, ref


def band_occupancy(m: FittedModel, i: int, t: float, spec: QuadratureSpec | None = None) -> float:
    """Probability of being in band ``i`` and still admitted at ``t``."""
    value, ref = band_integral(m, i, t, spec=spec)
    return value * math.exp(ref) if value > 0 else 0.0


def marginal_los_pdf(m: FittedModel, t: float, spec: QuadratureSpec | None = None) -> float:
    """LOS density of the charge model: the joint density integrated over charge."""
    if t < 0:
        raise DomainError("t must be non-negative")
    total = 0.0
    for i in range(1, m.n + 1):
        value, ref = band_integral(m, i, float(t), spec=spec)
        if value > 0:
            total += m.params.c[i - 1] * value * math.exp(ref)
    return total
