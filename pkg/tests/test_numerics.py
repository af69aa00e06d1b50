import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from phaseprice.errors import QuadratureError, ValidationError
from phaseprice.numerics import (
    OdeSpec,
    OptimizerSpec,
    QuadratureSpec,
    expm_batch,
    integrate,
    matrix_exp_action,
    minimize,
    ode_trajectory,
    solve_ivp,
)


def npdf(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def taylor_expm(A, terms=80):
    """Plain truncated series; fine for the small norms used here."""
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms):
        term = term @ A / k
        out = out + term
    return out


class TestSpecs:
    @pytest.mark.parametrize("kw", [dict(rel_tol=0), dict(abs_tol=-1), dict(max_subdivisions=0)])
    def test_quadrature_spec_rejects(self, kw):
        with pytest.raises(ValidationError):
            QuadratureSpec(**kw)

    @pytest.mark.parametrize("kw", [dict(first_step=0), dict(rel_tol=0), dict(abs_tol=0)])
    def test_ode_spec_rejects(self, kw):
        with pytest.raises(ValidationError):
            OdeSpec(**kw)

    @pytest.mark.parametrize("kw", [dict(restarts=0), dict(tol=0)])
    def test_optimizer_spec_rejects(self, kw):
        with pytest.raises(ValidationError):
            OptimizerSpec(**kw)


class TestIntegrate:
    def test_constant(self):
        assert integrate(lambda x: np.ones_like(x), 0, 1) == pytest.approx(1, abs=1e-14)

    def test_linear(self):
        assert integrate(lambda x: x, 0, 2) == pytest.approx(2, abs=1e-14)

    def test_normal_on_finite_range_matches_erf(self):
        assert abs(integrate(npdf, -8, 8) - erf(8 / math.sqrt(2))) < 1e-10

    def test_infinite_ranges(self):
        assert integrate(npdf, -math.inf, math.inf) == pytest.approx(1, abs=1e-12)
        assert integrate(npdf, 0, math.inf) == pytest.approx(0.5, abs=1e-12)
        assert integrate(npdf, -math.inf, 1.0) == pytest.approx(0.5 * (1 + erf(1 / math.sqrt(2))), abs=1e-12)

    def test_breakpoints_handle_kinks(self):
        val = integrate(lambda x: np.abs(x - 0.3), 0, 1, points=[0.3])
        assert val == pytest.approx(0.5 * (0.3**2 + 0.7**2), abs=1e-14)

    def test_empty_interval(self):
        assert integrate(lambda x: x, 2.0, 2.0) == 0.0

    def test_reversed_limits_rejected(self):
        with pytest.raises(ValidationError):
            integrate(lambda x: x, 1, 0)

    def test_non_convergence_carries_estimate(self):
        with pytest.raises(QuadratureError) as info:
            integrate(lambda x: np.sign(np.sin(1 / x)), 1e-9, 1,
                      QuadratureSpec(rel_tol=1e-14, abs_tol=1e-16, max_subdivisions=30))
        assert math.isfinite(info.value.estimate)
        assert info.value.error > 0

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-3, 3), st.floats(0.01, 3), st.floats(0.01, 3))
    def test_additive(self, a, w1, w2):
        def f(x):
            return np.exp(-x * x) * np.cos(3 * x)

        b, c = a + w1, a + w1 + w2
        whole = integrate(f, a, c)
        assert abs(whole - integrate(f, a, b) - integrate(f, b, c)) < 1e-10


class TestOde:
    def test_growth(self):
        assert solve_ivp(lambda t, y: y, 0, 1, [1.0])[0] == pytest.approx(math.e, abs=1e-8)

    def test_decay(self):
        assert solve_ivp(lambda t, y: -y, 0, 2, [math.log(2)])[0] == pytest.approx(1, abs=1e-8)

    def test_quadratic(self):
        assert solve_ivp(lambda t, y: t, 0, 0, [3.0])[0] == pytest.approx(4.5, abs=1e-9)

    def test_grid_starting_at_t0(self):
        out = solve_ivp(lambda t, y: y, 0, 2.0, [0.0, 0.5, 1.0])
        assert out[0] == 2.0
        assert out[2] == pytest.approx(2 * math.e, rel=1e-8)

    def test_randomized_linear_suite(self):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(100):
            a, b, y0 = rng.uniform(-2, 1), rng.uniform(-1, 1), rng.uniform(-2, 2)
            grid = np.sort(rng.uniform(0, 2, 5))
            got = solve_ivp(lambda t, y: a * y + b, 0, y0, grid)
            exact = (y0 + b / a) * np.exp(a * grid) - b / a
            worst = max(worst, float(np.max(np.abs(got - exact) / np.maximum(1, np.abs(exact)))))
        assert worst < 1e-7

    def test_trajectory_nodes_include_ends(self):
        t, y = ode_trajectory(lambda t, y: -y, 0, 1.0, 3.0)
        assert t[0] == 0 and t[-1] == pytest.approx(3.0)
        assert np.all(np.diff(t) > 0)
        assert np.max(np.abs(y - np.exp(-t))) < 1e-8

    def test_blowup_reports_last_state(self):
        from phaseprice.errors import OdeError

        with pytest.raises(OdeError) as info:
            solve_ivp(lambda t, y: y * y, 0, 1.0, [2.0], OdeSpec(max_steps=200))
        assert info.value.t < 1.0 + 1e-6


class TestMatrixExp:
    def test_zero_generator(self):
        assert matrix_exp_action(np.zeros((1, 1)), 5, [1.0]) == pytest.approx([1.0])

    def test_scalar_decay(self):
        assert matrix_exp_action(np.array([[-1.0]]), 1, [1.0])[0] == pytest.approx(math.exp(-1), rel=1e-14)

    def test_random_bidiagonal_against_taylor(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            lam = rng.uniform(0.1, 2, 3)
            c = rng.uniform(0.1, 2, 4)
            S = np.diag(-(c + np.append(lam, 0))) + np.diag(lam, 1)
            v = rng.dirichlet(np.ones(4))
            want = v @ taylor_expm(2 * S)
            assert np.max(np.abs(matrix_exp_action(S, 2, v) - want)) < 1e-9
            assert np.max(np.abs(v @ expm_batch(S, [2.0])[0] - want)) < 1e-9

    def test_semigroup(self):
        rng = np.random.default_rng(6)
        S = np.diag([-1.3, -0.7, -2.0]) + np.diag([0.5, 0.4], 1)
        v = rng.dirichlet(np.ones(3))
        for t1, t2 in rng.uniform(0, 5, (10, 2)):
            one = matrix_exp_action(S, t1 + t2, v)
            two = matrix_exp_action(S, t2, matrix_exp_action(S, t1, v))
            assert np.max(np.abs(one - two)) < 1e-8

    def test_batch_matches_single(self):
        S = np.diag([-15.5, -1.74, -0.14]) + np.diag([6.45, 0.83], 1)
        times = np.linspace(0, 60, 41)
        batch = expm_batch(S, times)
        for k, t in enumerate(times):
            ref = matrix_exp_action(S, t, np.eye(3)[0])
            assert np.max(np.abs(batch[k][0] - ref)) < 1e-12 * max(1, np.max(np.abs(ref))) + 1e-15


class TestMinimize:
    def test_quadratic_bowl(self):
        res = minimize(lambda x: (x[0] - 3) ** 2, [0.0])
        assert res.x[0] == pytest.approx(3, abs=1e-5)

    def test_two_dim(self):
        res = minimize(lambda x: x[0] ** 2 + x[1] ** 2, [1.0, 1.0])
        assert np.max(np.abs(res.x)) < 1e-5

    def test_rosenbrock(self):
        def rosen(x):
            return 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2

        res = minimize(rosen, [-1.2, 1.0])
        assert np.max(np.abs(res.x - 1)) < 1e-3

    def test_never_worse_than_start(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            shift = rng.normal(size=3)
            x0 = rng.normal(size=3)

            def f(x):
                return float(np.sum(np.abs(x - shift)) + np.sin(5 * x).sum())

            res = minimize(f, x0, OptimizerSpec(restarts=2, seed=3, max_iterations=200))
            assert res.fun <= f(x0)
            assert res.fun == pytest.approx(f(res.x))

    def test_no_improvement_flag(self):
        res = minimize(lambda x: float(np.sum(np.abs(x))), [0.0, 0.0])
        assert res.warning is not None
        assert np.array_equal(res.x, [0.0, 0.0])

    def test_deterministic(self):
        def f(x):
            return float((x[0] - 1) ** 2 + np.cos(4 * x[1]) + x[1] ** 2)

        spec = OptimizerSpec(restarts=3, seed=9)
        a, b = minimize(f, [2.0, 2.0], spec), minimize(f, [2.0, 2.0], spec)
        assert np.array_equal(a.x, b.x) and a.fun == b.fun

    def test_infinite_start_rejected(self):
        with pytest.raises(ValidationError):
            minimize(lambda x: math.inf, [0.0])
