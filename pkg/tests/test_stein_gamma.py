import math

import numpy as np
import pytest
from scipy import integrate, stats

from gammachaos.stein_gamma import (
    GammaTarget,
    NormalTarget,
    PoissonTarget,
    SteinSolver,
    TestFunction,
    cdf,
    d3_lower_bound,
    default_dictionary,
    density,
    moment,
    smoothness_constants,
)

NUS = (0.5, 1.0, 2.0, 5.0)


def test_density_values():
    assert density(GammaTarget(2.0), 0.0) == pytest.approx(0.5 * math.exp(-1), rel=1e-14)
    for nu in NUS:
        assert density(GammaTarget(nu), -nu - 1) == 0.0


@pytest.mark.parametrize("nu", NUS)
def test_density_normalized(nu):
    t = GammaTarget(nu)
    total = integrate.quad(lambda x: float(t.density(x)), -nu, -nu + 1, limit=200)[0]
    total += integrate.quad(lambda x: float(t.density(x)), -nu + 1, np.inf, limit=200)[0]
    assert total == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("nu", NUS)
def test_moments_vs_quadrature(nu):
    t = GammaTarget(nu)
    for k in range(1, 5):
        # algebraic endpoint weight (x + nu)^(nu/2 - 1) on the first unit
        a = nu / 2
        c = math.exp(-a * math.log(2) - math.lgamma(a))
        q = integrate.quad(lambda x: x ** k * c * math.exp(-(x + nu) / 2), -nu, -nu + 1,
                           weight="alg", wvar=(a - 1, 0), epsabs=1e-13, epsrel=1e-12)[0]
        q += integrate.quad(lambda x: x ** k * float(t.density(x)), -nu + 1, nu + 200,
                            limit=400, epsabs=1e-13, epsrel=1e-12)[0]
        exact = moment(t, k)
        assert abs(q - exact) <= 1e-6 * max(1.0, abs(exact))


def test_moment_table():
    t = GammaTarget(1.0)
    assert [moment(t, k) for k in range(1, 5)] == [0.0, 2.0, 8.0, 60.0]
    with pytest.raises(ValueError):
        moment(t, 5)


def test_cdf_support_and_scipy():
    for nu in NUS:
        t = GammaTarget(nu)
        assert cdf(t, -nu) == 0.0
        assert cdf(t, 1e4) == pytest.approx(1.0)
        xs = np.linspace(-nu + 0.01, 3 * nu + 10, 50)
        ref = stats.gamma(nu / 2, loc=-nu, scale=2).cdf(xs)
        assert np.max(np.abs(cdf(t, xs) - ref)) <= 1e-12


def test_cdf_nu2_monte_carlo():
    t = GammaTarget(2.0)
    rng = np.random.default_rng(2024)
    x = 2 * rng.gamma(1.0, 1.0, 1_000_000) - 2
    p = np.mean(x <= 0)
    se = math.sqrt(p * (1 - p) / len(x))
    assert abs(cdf(t, 0.0) - p) <= 3 * se
    assert cdf(t, 0.0) == pytest.approx(1 - math.exp(-1), rel=1e-12)


def test_smoothness_constants():
    assert smoothness_constants(GammaTarget(1.0)) == pytest.approx((2.0, 3.0, 5.0 / 3.0))
    assert smoothness_constants(GammaTarget(2.0)) == pytest.approx((2.0, 1.0, 2.0 / 3.0))
    assert smoothness_constants(GammaTarget(1e8)) == pytest.approx((2.0, 1.0, 2.0 / 3.0), rel=1e-6)


def test_dictionary_sup_norms():
    xs = np.linspace(-60, 60, 200_001)
    for h in default_dictionary():
        assert all(s <= 1 + 1e-12 for s in h.sup_norms)
        for d, s in zip((h.d1, h.d2, h.d3), h.sup_norms):
            assert np.max(np.abs(d(xs))) <= s + 1e-9
        # derivatives agree with finite differences of the value
        x0 = np.linspace(-3, 3, 7)
        e = 1e-5
        assert np.allclose((h.value(x0 + e) - h.value(x0 - e)) / (2 * e), h.d1(x0), atol=1e-8)
        assert np.allclose((h.d2(x0 + e) - h.d2(x0 - e)) / (2 * e), h.d3(x0), atol=1e-8)


def test_bad_test_function():
    with pytest.raises(ValueError):
        TestFunction("big", np.sin, np.cos, np.sin, np.cos, (2.0, 1.0, 1.0))


def test_constant_h_gives_zero():
    one = TestFunction("one", lambda x: np.ones_like(np.asarray(x, float)),
                       lambda x: np.zeros_like(np.asarray(x, float)),
                       lambda x: np.zeros_like(np.asarray(x, float)),
                       lambda x: np.zeros_like(np.asarray(x, float)), (0.0, 0.0, 0.0))
    s = SteinSolver(GammaTarget(1.0), one)
    U, _ = s.solve(np.linspace(-3, 5, 20))
    assert np.max(np.abs(U)) <= 1e-10


def _residual_fd(nu, h):
    """Stein-equation residual with U' from a five-point finite difference of
    U, so the check does not reuse the solver's own derivative formula."""
    t = GammaTarget(nu)
    s = SteinSolver(t, h)
    xs = np.linspace(-nu + 0.01, nu + 10, 200)
    d = 1e-3
    grid = np.concatenate([xs + k * d for k in (-2, -1, 0, 1, 2)])
    U = s.solve(grid)[0].reshape(5, -1)
    dU = (U[0] - 8 * U[1] + 8 * U[3] - U[4]) / (12 * d)
    lhs = h.value(xs) - s.eh
    rhs = 2 * (xs + nu) * dU - xs * U[2]
    return np.max(np.abs(lhs - rhs))


@pytest.mark.parametrize("nu", [1.0, 2.0])
def test_stein_residual_all_dictionary(nu):
    for h in default_dictionary():
        assert _residual_fd(nu, h) <= 1e-6, h.id


def test_stein_residual_sin():
    sin = TestFunction("sin", np.sin, np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x), (1.0, 1.0, 1.0))
    for nu in (1.0, 2.0):
        assert _residual_fd(nu, sin) <= 1e-6


@pytest.mark.parametrize("nu", [0.5, 1.0, 2.0, 5.0])
def test_sup_bound_c0(nu):
    t = GammaTarget(nu)
    c0 = smoothness_constants(t)[0]
    xs = np.concatenate([np.linspace(-nu - 5, -nu - 1e-6, 50), np.linspace(-nu + 1e-6, nu + 30, 300)])
    for h in default_dictionary():
        U, _ = SteinSolver(t, h).solve(xs)
        assert np.max(np.abs(U)) <= c0


def test_continuity_at_left_endpoint():
    t = GammaTarget(1.0)
    for h in default_dictionary():
        s = SteinSolver(t, h)
        gaps = []
        for eps in (1e-3, 1e-4, 1e-5):
            U, _ = s.solve(np.array([-1.0 - eps, -1.0 + eps]))
            gaps.append(abs(U[1] - U[0]))
        assert gaps[0] > gaps[1] > gaps[2] or gaps[2] <= 1e-9


def test_d3_lower_bound():
    t = GammaTarget(1.0)
    d = default_dictionary()
    rng = np.random.default_rng(77)
    x = t.sample(rng, 1_000_000)
    se = max(np.std(h.value(x)) for h in d) / math.sqrt(len(x))
    assert d3_lower_bound(x, t, d) <= 3 * se
    sin = [h for h in d if h.id == "sin[1]"]
    ref = abs(math.sin(-1.0) - integrate.quad(lambda y: math.sin(y) * float(t.density(y)), -1, np.inf,
                                              limit=400)[0])
    assert d3_lower_bound(np.full(10, -1.0), t, sin) == pytest.approx(ref, abs=1e-8)
    with pytest.raises(ValueError):
        d3_lower_bound(x, t, [])
    with pytest.raises(ValueError):
        d3_lower_bound([], t, d)


def test_sampler_kolmogorov_calibration():
    from gammachaos.chaos_sim import kolmogorov

    rng = np.random.default_rng(5)
    for t in (GammaTarget(1.0), NormalTarget()):
        assert kolmogorov(t.sample(rng, 1_000_000), t) <= 0.005
    p = PoissonTarget(2.0)
    assert kolmogorov(p.sample(rng, 1_000_000), p) <= 0.005
