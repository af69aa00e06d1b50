"""Pearson chi-square diagnostics and kernel density grids.

Joint cell probabilities reduce to one-dimensional integrals over the
admission label: a patient with label ``z`` has log-charge
``mu + sigma z + T``, so a rectangle in (log-charge, LOS) is an interval of
``T`` whose conditional probability is a difference of survival values.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.optimize
from scipy.special import gammaincc

from .converter import FittedModel, log_std_normal
from .errors import NumericalError, ValidationError
from .numerics import QuadratureSpec, integrate
from .phase_type import cph_cdf, cph_quantile

# survival is evaluated at this time in place of +inf
_FAR = 1e300
_CELL_SPEC = QuadratureSpec(rel_tol=1e-11, abs_tol=1e-15)


@dataclass(frozen=True)
class BinningSpec:
    mode: str = "equiprobable"
    bins: int = 10
    min_expected: float = 5.0

    def __post_init__(self):
        if self.mode not in ("equiprobable", "equal-width"):
            raise ValidationError("mode must be 'equiprobable' or 'equal-width'")
        if self.bins < 2:
            raise ValidationError("bin count must be >= 2")
        if self.min_expected < 1:
            raise ValidationError("minimum expected count must be >= 1")


@dataclass(frozen=True)
class GofReport:
    statistic: float
    df: int
    p_value: float
    observed: np.ndarray
    expected: np.ndarray
    edges: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def num(x):
            return float(x) if math.isfinite(x) else ("inf" if x > 0 else "-inf")

        return {
            "statistic": float(self.statistic),
            "df": int(self.df),
            "p_value": float(self.p_value),
            "observed": np.asarray(self.observed).tolist(),
            "expected": np.asarray(self.expected).tolist(),
            "edges": [[num(e) for e in axis] for axis in self.edges],
        }


def chi2_sf(statistic: float, df: int) -> float:
    """Upper tail of the chi-square distribution."""
    if df < 1:
        raise ValidationError("degrees of freedom must be >= 1")
    return float(gammaincc(0.5 * df, 0.5 * max(statistic, 0.0)))


def _pearson(observed, expected):
    observed = np.asarray(observed, dtype=float)
    expected = np.asarray(expected, dtype=float)
    return float(np.sum((observed - expected) ** 2 / expected))


def _pool(observed, expected, min_expected):
    """Merge adjacent bins left to right until each expectation is large enough."""
    obs, exp = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs.append(o_acc)
            exp.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if not exp:
            raise ValidationError("all bins fall below the expected-count threshold; use fewer bins")
        obs[-1] += o_acc
        exp[-1] += e_acc
    if len(exp) < 2:
        raise ValidationError("fewer than two bins left after pooling; use fewer bins")
    if min(exp) < min_expected:
        raise ValidationError("expected counts too small after pooling; use fewer bins")
    return np.array(obs), np.array(exp)


def _report(observed, expected, edges, min_expected) -> GofReport:
    obs, exp = _pool(observed, expected, min_expected)
    stat = _pearson(obs, exp)
    df = obs.size - 1
    return GofReport(stat, df, chi2_sf(stat, df), np.asarray(observed, dtype=float),
                     np.asarray(expected, dtype=float), edges)


def cdf_from_pdf(pdf: Callable, lower: float = 0.0, spec: QuadratureSpec | None = None) -> Callable:
    def cdf(x):
        if x <= lower:
            return 0.0
        return min(1.0, integrate(pdf, lower, x, spec))
    return cdf


def invert_cdf(cdf: Callable, q: float, lo: float, hi: float, xtol: float = 1e-12) -> float:
    """Bisection-type root of ``cdf(x) = q`` after expanding the bracket."""
    step = max(1.0, hi - lo)
    while cdf(lo) > q:
        lo -= step
        step *= 2
    step = max(1.0, hi - lo)
    while cdf(hi) < q:
        hi += step
        step *= 2
    return scipy.optimize.brentq(lambda x: cdf(x) - q, lo, hi, xtol=xtol, rtol=1e-15)


def chi2_marginal(
    data,
    model_pdf: Callable,
    spec: BinningSpec | None = None,
    *,
    model_cdf: Callable | None = None,
    support: tuple[float, float] = (0.0, math.inf),
) -> GofReport:
    """Pearson test of a one-dimensional sample against a model density."""
    spec = spec or BinningSpec()
    x = np.asarray(data, dtype=float).ravel()
    if x.size < 5 * spec.bins:
        raise ValidationError(f"need at least {5 * spec.bins} observations for {spec.bins} bins")
    cdf = model_cdf or cdf_from_pdf(model_pdf, support[0])
    lo, hi = support
    if spec.mode == "equiprobable":
        a = lo if math.isfinite(lo) else float(x.min())
        b = float(np.median(x))
        inner = [invert_cdf(cdf, k / spec.bins, a, b) for k in range(1, spec.bins)]
        edges = np.array([lo, *inner, hi])
        expected = np.full(spec.bins, x.size / spec.bins)
    else:
        inner = np.linspace(x.min(), x.max(), spec.bins + 1)[1:-1]
        edges = np.array([lo, *inner, hi])
        cum = np.array([0.0, *[cdf(e) for e in inner], 1.0])
        expected = x.size * np.diff(cum)
    observed = np.bincount(np.searchsorted(edges[1:-1], x, side="right"),
                           minlength=spec.bins).astype(float)
    return _report(observed, expected, [edges.tolist()], spec.min_expected)


# --------------------------------------------------------------------------
# Joint


def _conditional_survival(m: FittedModel, z, s):
    s = np.where(np.isfinite(s), s, _FAR)
    return np.exp(m.rho.log_value(z, np.maximum(s, 0.0)))


def cell_probability(m: FittedModel, t_lo: float, t_hi: float, u_lo: float, u_hi: float,
                     spec: QuadratureSpec | None = None) -> float:
    """``P(t_lo <= T < t_hi, u_lo <= ln Y < u_hi)`` for the model."""
    mu, sigma = m.lognormal.mu, m.lognormal.sigma
    z_lo = (u_lo - mu - t_hi) / sigma
    z_hi = (u_hi - mu - t_lo) / sigma
    if not z_hi > z_lo:
        return 0.0

    def f(z):
        start = np.maximum(t_lo, u_lo - mu - sigma * z)
        stop = np.minimum(t_hi, u_hi - mu - sigma * z)
        gap = _conditional_survival(m, z, start) - _conditional_survival(m, z, stop)
        return np.where(stop > start, np.maximum(gap, 0.0), 0.0) * np.exp(log_std_normal(z))

    # kinks where the charge limits meet the time limits
    kinks = [(u - mu - t) / sigma for u, t in ((u_lo, t_lo), (u_hi, t_hi))
             if math.isfinite(u) and math.isfinite(t)]
    pts = [p for p in (*(curve.z[0] for curve in m.curves.curves), *kinks) if z_lo < p < z_hi]
    try:
        return integrate(f, z_lo, z_hi, spec or _CELL_SPEC, points=sorted(pts))
    except NumericalError as exc:
        raise NumericalError(
            f"cell t=[{t_lo}, {t_hi}) log-charge=[{u_lo}, {u_hi}): {exc}") from exc


def log_charge_cdf(m: FittedModel, u: float, spec: QuadratureSpec | None = None) -> float:
    """``P(ln Y <= u)``."""
    return cell_probability(m, 0.0, math.inf, -math.inf, u, spec)


def los_edges(m: FittedModel, bins: int) -> np.ndarray:
    inner = [cph_quantile(m.params, k / bins) for k in range(1, bins)]
    return np.array([0.0, *inner, math.inf])


def log_charge_edges(m: FittedModel, bins: int, spec: QuadratureSpec | None = None) -> np.ndarray:
    lp = m.lognormal
    guess = lp.mu + 1.0 / float(m.params.c.min())

    def cdf(u):
        return log_charge_cdf(m, u, spec)

    inner = [invert_cdf(cdf, k / bins, guess - 3 * lp.sigma, guess + 3 * lp.sigma, xtol=1e-10)
             for k in range(1, bins)]
    return np.array([-math.inf, *inner, math.inf])


def chi2_joint(charge, los, m: FittedModel, spec: BinningSpec | None = None) -> GofReport:
    """Pearson test on a grid of equiprobable log-charge and LOS splits."""
    spec = spec or BinningSpec(bins=5)
    charge = np.asarray(charge, dtype=float).ravel()
    los = np.asarray(los, dtype=float).ravel()
    if charge.size != los.size:
        raise ValidationError("charge and LOS columns differ in length")
    cells = spec.bins * spec.bins
    if los.size < 5 * cells:
        raise ValidationError(f"need at least {5 * cells} records for {cells} cells")
    u = np.log(charge)
    if spec.mode == "equiprobable":
        t_edges = los_edges(m, spec.bins)
        u_edges = log_charge_edges(m, spec.bins)
    else:
        t_edges = np.array([0.0, *np.linspace(los.min(), los.max(), spec.bins + 1)[1:-1], math.inf])
        u_edges = np.array([-math.inf, *np.linspace(u.min(), u.max(), spec.bins + 1)[1:-1], math.inf])
    expected = np.empty((spec.bins, spec.bins))
    for a in range(spec.bins):
        for b in range(spec.bins):
            expected[a, b] = los.size * cell_probability(
                m, t_edges[a], t_edges[a + 1], u_edges[b], u_edges[b + 1])
    ia = np.searchsorted(t_edges[1:-1], los, side="right")
    ib = np.searchsorted(u_edges[1:-1], u, side="right")
    observed = np.zeros((spec.bins, spec.bins))
    np.add.at(observed, (ia, ib), 1.0)
    return _report(observed.ravel(), expected.ravel(), [t_edges.tolist(), u_edges.tolist()],
                   spec.min_expected)


def los_marginal_report(los, m: FittedModel, spec: BinningSpec | None = None) -> GofReport:
    p = m.params
    return chi2_marginal(los, None, spec, model_cdf=lambda t: cph_cdf(p, t))


def log_charge_marginal_report(charge, m: FittedModel, spec: BinningSpec | None = None) -> GofReport:
    u = np.log(np.asarray(charge, dtype=float))
    return chi2_marginal(u, None, spec, model_cdf=lambda x: log_charge_cdf(m, x),
                         support=(-math.inf, math.inf))


# --------------------------------------------------------------------------
# Density grids


def kde_2d(
    data,
    bandwidths: tuple[float, float] = (0.15, 1.0),
    grid: tuple[Sequence[float], Sequence[float]] | None = None,
    size: int = 50,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Product-Gaussian KDE of (log-charge, LOS) pairs.

    Returns ``(gx, gy, density)`` with ``density[i, j]`` at ``(gx[i], gy[j])``.
    """
    pts = np.asarray(data, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
        raise ValidationError("data must be a non-empty array of pairs")
    hx, hy = bandwidths
    if not (hx > 0 and hy > 0):
        raise ValidationError("bandwidths must be positive")
    if grid is None:
        gx = np.linspace(pts[:, 0].min() - 3 * hx, pts[:, 0].max() + 3 * hx, size)
        gy = np.linspace(pts[:, 1].min() - 3 * hy, pts[:, 1].max() + 3 * hy, size)
    else:
        gx, gy = (np.asarray(g, dtype=float) for g in grid)
    kx = np.exp(-0.5 * ((gx[:, None] - pts[None, :, 0]) / hx) ** 2)
    ky = np.exp(-0.5 * ((gy[:, None] - pts[None, :, 1]) / hy) ** 2)
    dens = kx @ ky.T / (2 * math.pi * hx * hy * pts.shape[0])
    return gx, gy, dens


def model_density_grid(m: FittedModel, gx, gy) -> np.ndarray:
    """Joint density of (log-charge, LOS) on a grid; zero at negative LOS."""
    gx = np.asarray(gx, dtype=float)
    gy = np.asarray(gy, dtype=float)
    u, t = np.meshgrid(gx, gy, indexing="ij")
    out = np.zeros(u.shape)
    ok = t >= 0
    lp = m.lognormal
    z = (u[ok] - t[ok] - lp.mu) / lp.sigma
    out[ok] = np.exp(m.log_joint_label(z, t[ok]) - math.log(lp.sigma))
    return out


def grid_csv(gx, gy, density) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "density"])
    for i, x in enumerate(gx):
        for j, y in enumerate(gy):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(density[i, j]))])
    return buf.getvalue()
