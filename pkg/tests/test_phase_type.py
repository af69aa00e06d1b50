import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from phaseprice.errors import ValidationError
from phaseprice.numerics import integrate
from phaseprice.phase_type import (
    CphParams,
    build_generator,
    cph_cdf,
    cph_mean,
    cph_pdf,
    cph_quantile,
    cph_sample,
    cph_survival,
    phase_occupancy,
    sample_absorption_times,
)
from phaseprice.reference import PUBLISHED_CPH

from conftest import random_cph


def two_phase_pdf(lam, c1, c2, t):
    """Start in phase 1: closed-form convolution of the two sojourns."""
    d1 = c1 + lam
    p1 = math.exp(-d1 * t)
    p2 = lam * (math.exp(-c2 * t) - math.exp(-d1 * t)) / (d1 - c2)
    return c1 * p1 + c2 * p2


@st.composite
def cph_strategy(draw, max_n=5):
    n = draw(st.integers(1, max_n))
    w = draw(st.lists(st.floats(0.01, 1), min_size=n, max_size=n))
    alpha = np.array(w) / sum(w)
    lam = draw(st.lists(st.floats(0.05, 5), min_size=n - 1, max_size=n - 1))
    c = draw(st.lists(st.floats(0.05, 5), min_size=n, max_size=n))
    return CphParams(alpha, lam, c)


class TestParams:
    def test_validation_names_field(self):
        with pytest.raises(ValidationError, match="lambda"):
            CphParams([0.5, 0.5], [-1.0], [1, 1])
        with pytest.raises(ValidationError, match="^c"):
            CphParams([0.5, 0.5], [1.0], [1, 0])
        with pytest.raises(ValidationError, match="alpha"):
            CphParams([0.6, 0.6], [1.0], [1, 1])
        with pytest.raises(ValidationError, match="alpha"):
            CphParams([1.2, -0.2], [1.0], [1, 1])
        with pytest.raises(ValidationError, match="lambda"):
            CphParams([0.5, 0.5], [1.0, 2.0], [1, 1])

    def test_immutable(self):
        p = CphParams([1.0], [], [1.0])
        with pytest.raises(ValueError):
            p.c[0] = 2.0

    def test_json_round_trip(self):
        d = PUBLISHED_CPH.to_dict()
        assert list(d) == ["alpha", "lambda", "c"]
        assert CphParams.from_dict(d) == PUBLISHED_CPH

    def test_missing_field(self):
        with pytest.raises(ValidationError, match="lambda"):
            CphParams.from_dict({"alpha": [1.0], "c": [1.0]})


class TestGenerator:
    def test_single_phase(self):
        g = build_generator(CphParams([1.0], [], [0.5]))
        assert g.S.tolist() == [[-0.5]]
        assert g.exit.tolist() == [0.5]

    def test_two_phase(self):
        g = build_generator(CphParams([1.0, 0.0], [1.0], [2.0, 3.0]))
        assert g.S.tolist() == [[-3.0, 1.0], [0.0, -3.0]]
        assert g.exit.tolist() == [2.0, 3.0]

    def test_published_diagonal(self):
        g = build_generator(PUBLISHED_CPH)
        assert np.allclose(np.diag(g.S), [-2.09 - 1e-6, -15.50, -1.74, -0.14])
        assert np.allclose(np.diag(g.S, 1), [1e-6, 6.45, 0.83])

    @settings(max_examples=40, deadline=None)
    @given(cph_strategy())
    def test_rows_conserve_mass(self, p):
        g = build_generator(p)
        assert np.allclose(g.S.sum(axis=1) + g.exit, 0)
        full = g.full()
        assert np.allclose(full.sum(axis=1), 0)
        assert np.all(full[-1] == 0)
        off = g.S - np.diag(np.diag(g.S))
        assert np.all(off >= 0) and np.all(np.diag(g.S) < 0)


class TestDensity:
    def test_exponential(self):
        p = CphParams([1.0], [], [0.5])
        assert cph_pdf(p, 0) == 0.5
        assert cph_pdf(p, 2) == pytest.approx(0.5 * math.exp(-1), rel=1e-14)

    def test_two_phase_convolution(self):
        p = CphParams([1.0, 0.0], [1.0], [1.0, 1.0])
        assert cph_pdf(p, 1.0) == pytest.approx(math.exp(-1), rel=1e-13)
        q = CphParams([1.0, 0.0], [0.7], [1.3, 0.4])
        for t in (0.1, 1.0, 4.0):
            assert cph_pdf(q, t) == pytest.approx(two_phase_pdf(0.7, 1.3, 0.4, t), rel=1e-12)

    def test_cdf_basics(self):
        p = CphParams([1.0], [], [1.0])
        assert cph_cdf(p, 0) == 0
        assert cph_cdf(p, math.log(2)) == pytest.approx(0.5, abs=1e-15)

    def test_published_cdf_vs_quadrature(self):
        val = integrate(lambda t: cph_pdf(PUBLISHED_CPH, t), 0, 30, points=[1, 5])
        assert abs(val - cph_cdf(PUBLISHED_CPH, 30)) < 1e-8

    @settings(max_examples=30, deadline=None)
    @given(cph_strategy(4))
    def test_pdf_integrates_to_one(self, p):
        hi = cph_quantile(p, 1 - 1e-10)
        assert abs(integrate(lambda t: cph_pdf(p, t), 0, hi) - 1) < 1e-6

    @settings(max_examples=30, deadline=None)
    @given(cph_strategy(4), st.floats(0.01, 20))
    def test_pdf_is_cdf_derivative(self, p, t):
        h = 1e-5
        fd = (cph_cdf(p, t + h) - cph_cdf(p, t - h)) / (2 * h)
        assert abs(fd - cph_pdf(p, t)) < 1e-6

    def test_vector_input(self):
        t = np.array([0.5, 1.0, 2.0])
        assert np.allclose(cph_pdf(PUBLISHED_CPH, t), [cph_pdf(PUBLISHED_CPH, s) for s in t])

    def test_positive_for_positive_t(self):
        assert np.all(cph_pdf(PUBLISHED_CPH, np.linspace(0.01, 60, 100)) > 0)

    def test_quantile_inverts_cdf(self):
        for q in (0.1, 0.5, 0.99, 1 - 1e-8):
            assert cph_cdf(PUBLISHED_CPH, cph_quantile(PUBLISHED_CPH, q)) == pytest.approx(q, abs=1e-10)

    def test_mean(self):
        val = integrate(lambda t: t * cph_pdf(PUBLISHED_CPH, t), 0, math.inf)
        assert cph_mean(PUBLISHED_CPH) == pytest.approx(val, rel=1e-8)


class TestOccupancy:
    def test_initial(self):
        occ = phase_occupancy(PUBLISHED_CPH, 0.0)
        assert np.allclose(occ, [*PUBLISHED_CPH.alpha, 0.0])

    def test_absorbed_fraction_never_negative(self):
        # 1 - sum(alpha) can round to -2e-16
        alpha = np.array([1, 26, 7, 3]) / 37
        occ = phase_occupancy(CphParams(alpha, [1.0, 1.0, 1.0], [1.0] * 4), np.array([0.0]))
        assert 1 - alpha.sum() < 0 and occ[0, -1] == 0.0

    def test_exponential(self):
        occ = phase_occupancy(CphParams([1.0], [], [1.0]), 1.0)
        assert occ == pytest.approx([math.exp(-1), 1 - math.exp(-1)], abs=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(cph_strategy(), st.lists(st.floats(0, 50), min_size=1, max_size=8))
    def test_simplex(self, p, ts):
        occ = phase_occupancy(p, np.array(ts))
        assert np.all((occ >= 0) & (occ <= 1))
        assert np.allclose(occ.sum(axis=-1), 1, atol=1e-10)
        assert np.allclose(occ[..., -1], cph_cdf(p, np.array(ts)), atol=1e-14)

    def test_published_against_chain_simulation(self):
        rng = np.random.default_rng(17)
        counts = np.zeros(5)
        draws = 100_000
        for _ in range(draws):
            t, path = cph_sample(PUBLISHED_CPH, rng)
            if t <= 5:
                counts[4] += 1
            else:
                phase = max(ph for ph, s in path if s <= 5)
                counts[phase - 1] += 1
        p = phase_occupancy(PUBLISHED_CPH, 5.0)
        se = np.sqrt(p * (1 - p) / draws)
        assert np.all(np.abs(counts / draws - p) <= 3 * se + 1e-12)


class TestSampling:
    def test_single_phase_path(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            t, path = cph_sample(CphParams([1.0], [], [1.0]), rng)
            assert path == [(1, 0.0)] and t > 0

    def test_exponential_mean(self):
        t = sample_absorption_times(CphParams([1.0], [], [2.0]), 1_000_000, np.random.default_rng(1))
        assert abs(t.mean() - 0.5) < 3 * 0.5 / math.sqrt(t.size)

    def test_paths_move_forward(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            t, path = cph_sample(PUBLISHED_CPH, rng)
            phases = [ph for ph, _ in path]
            times = [s for _, s in path]
            assert phases == sorted(set(phases))
            assert all(b > a for a, b in zip(times, times[1:]))
            assert times[-1] < t

    def test_published_histogram(self):
        rng = np.random.default_rng(3)
        t = sample_absorption_times(PUBLISHED_CPH, 100_000, rng)
        edges = [cph_quantile(PUBLISHED_CPH, k / 10) for k in range(1, 10)]
        observed = np.bincount(np.searchsorted(edges, t), minlength=10)
        assert stats.chisquare(observed).pvalue > 0.01

    def test_scalar_and_vector_samplers_agree_in_law(self):
        rng = np.random.default_rng(4)
        a = np.array([cph_sample(PUBLISHED_CPH, rng)[0] for _ in range(20_000)])
        b = sample_absorption_times(PUBLISHED_CPH, 20_000, rng)
        assert stats.ks_2samp(a, b).pvalue > 0.001

    def test_ks_suite(self):
        rng = np.random.default_rng(5)
        crit = 1.95 / math.sqrt(100_000)  # asymptotic 0.001 level
        for _ in range(50):
            p = random_cph(rng, int(rng.integers(1, 6)), lam=(0.1, 5), c=(0.1, 5), floor=0.0)
            t = np.sort(sample_absorption_times(p, 100_000, rng))
            cdf = cph_cdf(p, t)
            k = np.arange(1, t.size + 1) / t.size
            d = max(np.max(k - cdf), np.max(cdf - (k - 1 / t.size)))
            assert d < crit

    def test_survival_complements_cdf(self):
        t = np.linspace(0, 40, 50)
        assert np.allclose(cph_survival(PUBLISHED_CPH, t) + cph_cdf(PUBLISHED_CPH, t), 1)
