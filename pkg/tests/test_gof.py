import math

import mpmath
import numpy as np
import pytest
from scipy import stats
from scipy.integrate import trapezoid

from phaseprice.converter import joint_pdf
from phaseprice.errors import ValidationError
from phaseprice.gof import (
    BinningSpec,
    _pool,
    cell_probability,
    chi2_joint,
    chi2_marginal,
    chi2_sf,
    grid_csv,
    kde_2d,
    log_charge_cdf,
    log_charge_marginal_report,
    los_edges,
    los_marginal_report,
    model_density_grid,
)
from phaseprice.numerics import integrate
from phaseprice.simulation import simulate_arrays


def test_chi2_sf_against_mpmath():
    rng = np.random.default_rng(0)
    for _ in range(50):
        df = int(rng.integers(1, 40))
        x = float(rng.uniform(0, 3 * df))
        ref = float(mpmath.gammainc(df / 2, x / 2, mpmath.inf, regularized=True))
        assert chi2_sf(x, df) == pytest.approx(ref, rel=1e-10, abs=1e-300)


def test_chi2_sf_edges():
    assert chi2_sf(0.0, 3) == 1.0
    with pytest.raises(ValidationError):
        chi2_sf(1.0, 0)


def test_pooling_merges_small_bins():
    obs, exp = _pool([1, 2, 3, 4, 1], [1.0, 6.0, 2.0, 4.0, 1.0], 5.0)
    np.testing.assert_array_equal(obs, [3, 8])
    np.testing.assert_array_equal(exp, [7.0, 7.0])


def test_pooling_gives_up():
    with pytest.raises(ValidationError, match="fewer bins"):
        _pool([1, 1], [1.0, 1.0], 5.0)


def test_marginal_exponential():
    rng = np.random.default_rng(1)
    x = rng.exponential(1.0, 2000)
    rep = chi2_marginal(x, lambda t: np.exp(-t))
    # equiprobable edges are the exponential quantiles
    np.testing.assert_allclose(rep.edges[0][1:-1], -np.log(1 - np.arange(1, 10) / 10), rtol=1e-9)
    np.testing.assert_allclose(rep.expected, 200.0)
    assert rep.df == 9 and rep.observed.sum() == 2000
    ref = stats.chisquare(rep.observed, rep.expected)
    assert rep.statistic == pytest.approx(ref.statistic)
    assert rep.p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_marginal_equal_width_and_rejection():
    rng = np.random.default_rng(2)
    x = rng.exponential(1.0, 2000)
    rep = chi2_marginal(x, lambda t: np.exp(-t), BinningSpec("equal-width", 8))
    assert rep.expected.sum() == pytest.approx(2000)
    wrong = chi2_marginal(rng.exponential(2.0, 2000), lambda t: np.exp(-t))
    assert wrong.p_value < 1e-6


def test_marginal_needs_data():
    with pytest.raises(ValidationError, match="at least 50"):
        chi2_marginal(np.ones(10), lambda t: np.exp(-t))
    with pytest.raises(ValidationError):
        BinningSpec("quantile")


def test_null_calibration_small():
    rng = np.random.default_rng(3)
    pvals = [chi2_marginal(rng.exponential(1.0, 500), None,
                           model_cdf=lambda t: -math.expm1(-t)).p_value for _ in range(60)]
    assert stats.kstest(pvals, "uniform").pvalue > 0.01


def test_cells_partition_unity(balanced_model):
    m = balanced_model
    t_edges = los_edges(m, 3)
    u_edges = [-math.inf, -0.5, 1.5, math.inf]
    total = sum(cell_probability(m, t_edges[a], t_edges[a + 1], u_edges[b], u_edges[b + 1])
                for a in range(3) for b in range(3))
    assert total == pytest.approx(1.0, abs=1e-9)
    row = sum(cell_probability(m, t_edges[0], t_edges[1], u_edges[b], u_edges[b + 1]) for b in range(3))
    assert row == pytest.approx(1 / 3, abs=1e-9)


def test_cell_by_direct_double_integral(balanced_model):
    # second route: integrate the (log-charge, LOS) density over the rectangle
    m = balanced_model
    t_lo, t_hi, u_lo, u_hi = 0.5, 2.0, -0.5, 1.0

    def inner(t):
        kinks = [math.log(m.curve(i, t)) for i in range(1, m.n)]
        return integrate(lambda u: joint_pdf(m, np.exp(u), t) * np.exp(u), u_lo, u_hi,
                         points=sorted(k for k in kinks if u_lo < k < u_hi))

    direct = integrate(np.vectorize(inner), t_lo, t_hi)
    assert cell_probability(m, t_lo, t_hi, u_lo, u_hi) == pytest.approx(direct, rel=1e-6)


def test_log_charge_cdf_against_simulation(balanced_model):
    cohort = simulate_arrays(balanced_model, 40000, 4)
    u = np.log(cohort.charge)
    for q in (0.0, 1.0, 2.5):
        emp = np.mean(u <= q)
        ref = log_charge_cdf(balanced_model, q)
        assert abs(emp - ref) < 4 * math.sqrt(ref * (1 - ref) / u.size)


def test_joint_and_marginals_accept_own_sample(balanced_model):
    cohort = simulate_arrays(balanced_model, 5000, 5)
    joint = chi2_joint(cohort.charge, cohort.los, balanced_model)
    # charge and LOS are dependent, so some product cells get pooled
    assert 10 <= joint.df <= 24 and joint.p_value > 0.01
    assert joint.expected.sum() == pytest.approx(5000, rel=1e-6)
    assert los_marginal_report(cohort.los, balanced_model).p_value > 0.01
    assert log_charge_marginal_report(cohort.charge, balanced_model).p_value > 0.01
    d = joint.to_dict()
    assert d["edges"][0][-1] == "inf" and d["edges"][1][0] == "-inf"


def test_joint_rejects_shifted_charges(balanced_model):
    cohort = simulate_arrays(balanced_model, 5000, 6)
    rep = chi2_joint(cohort.charge * 1.5, cohort.los, balanced_model)
    assert rep.p_value < 1e-6


def test_kde_single_point_peak():
    gx, gy, dens = kde_2d([[0.0, 0.0]], grid=([0.0], [0.0]))
    assert dens[0, 0] == pytest.approx(1 / (2 * math.pi * 0.15 * 1.0), rel=1e-12)
    assert dens[0, 0] == pytest.approx(1.0610, abs=1e-4)


def test_kde_symmetry_and_mass():
    pts = np.array([[0.0, 1.0], [1.0, 3.0]])
    gx = np.linspace(-2, 3, 401)
    gy = np.linspace(-5, 9, 401)
    _, _, dens = kde_2d(pts, grid=(gx, gy))
    mass = trapezoid(trapezoid(dens, gy, axis=1), gx)
    assert mass == pytest.approx(1.0, abs=1e-4)
    # the pair is symmetric about (0.5, 2)
    np.testing.assert_allclose(dens, dens[::-1, ::-1], atol=1e-12)


def test_kde_validation():
    with pytest.raises(ValidationError):
        kde_2d(np.empty((0, 2)))
    with pytest.raises(ValidationError):
        kde_2d([[0.0, 0.0]], bandwidths=(0.0, 1.0))


def test_model_density_grid(balanced_model):
    m = balanced_model
    gx = np.linspace(-4, 14, 361)
    gy = np.linspace(-1, 30, 621)
    dens = model_density_grid(m, gx, gy)
    assert np.all(dens[:, gy < 0] == 0)
    mass = trapezoid(trapezoid(dens, gy, axis=1), gx)
    assert mass == pytest.approx(1.0, abs=5e-3)
    i, j = 200, 100
    assert dens[i, j] == pytest.approx(joint_pdf(m, math.exp(gx[i]), gy[j]) * math.exp(gx[i]), rel=1e-10)


def test_grid_csv_layout():
    text = grid_csv([0.0, 1.0], [2.0], np.array([[0.5], [0.25]]))
    assert text.splitlines() == ["x,y,density", "0.0,2.0,0.5", "1.0,2.0,0.25"]
