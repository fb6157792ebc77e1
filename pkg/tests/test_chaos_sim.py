import warnings
from math import sqrt

import numpy as np
import pytest

from gammachaos.chaos_sim import (
    DuplicatePointWarning,
    HypothesisError,
    LegSpec,
    StudySpec,
    addone_l2,
    batch_of,
    check_orders,
    coupled_fixed_n,
    degeneracy_defect,
    derivative_eval,
    disk_graph_stat,
    edge_counts_1d,
    empirical_distances,
    expansion_batch,
    hoeffding_projection,
    hoeffding_rank,
    hybrid_experiment,
    kolmogorov,
    multiple_integral_batch,
    multiple_integral_eval,
    product_gap,
    run_study,
    sample,
    sample_batch,
    sample_from_points,
    stream,
    ustat_batch,
    ustat_direct,
    ustat_eval,
)
from gammachaos.cli import fit_rate
from gammachaos.contract import combine, integral, norm2, product_kernel
from gammachaos.families import (
    block_order3_kernel,
    gamma_ustat_kernel,
    moment_kernel,
    sign_kernel,
    sign_space,
)
from gammachaos.space import (
    ChaosExpansion,
    make_factor,
    make_grid_space,
    rank_kernel,
    uniform_continuum,
    uniform_grid,
)
from gammachaos.stein_gamma import GammaTarget, NormalTarget, PoissonTarget
from conftest import random_kernel


# -- sampling ----------------------------------------------------------------


def test_mean_count():
    sp = uniform_grid(0, 1, 5, 1.0, 7.0)
    b = sample_batch(sp, np.random.default_rng(0), 100_000)
    t = b.totals
    assert abs(t.mean() - 7.0) <= 3 * sqrt(7.0 / len(t))
    sp = uniform_grid(0, 1, 5, 1.0, 1e-9)
    assert sample_batch(sp, np.random.default_rng(0), 1000).totals.sum() == 0


def test_two_atom_poisson6():
    sp = make_grid_space([0.0, 1.0], [1.0, 1.0], 3.0)
    t = sample_batch(sp, np.random.default_rng(1), 200_000).totals
    assert abs(t.mean() - 6) <= 3 * sqrt(6 / len(t))
    assert abs(t.var() - 6) <= 0.1
    assert kolmogorov(t, PoissonTarget(6.0)) <= 0.01


def test_seed_reproducible():
    sp = uniform_continuum(0, 1, 1.0, intensity=50.0)
    a = sample(sp, stream(7, "x", 1))
    b = sample(sp, stream(7, "x", 1))
    assert a.points.tobytes() == b.points.tobytes()
    c = sample(sp, stream(7, "x", 2))
    assert c.points.tobytes() != a.points.tobytes()


def test_duplicate_warning():
    sp = uniform_continuum(0, 1, 1.0, intensity=5.0)
    sp2 = type(sp)(sp.mode, sp.nodes, sp.weights, sp.base_mass, sp.intensity,
                   lambda rng, m: np.zeros((m, 1)))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        while True:
            s = sample(sp2, np.random.default_rng(3))
            if s.count > 1:
                break
        assert any(issubclass(x.category, DuplicatePointWarning) for x in w)


# -- U-statistics -------------------------------------------------------------


def test_ustat_counting():
    sp = make_grid_space([0.0, 1.0, 2.0], [1.0, 1.0, 1.0])
    one = rank_kernel(sp, [make_factor(sp, values=np.ones(3))])
    assert ustat_eval(one, sample_from_points(sp, [0.0, 1.0, 2.0])) == pytest.approx(6.0)
    assert ustat_eval(one, sample_from_points(sp, [1.0])) == 0.0
    assert ustat_eval(one, sample_from_points(sp, [1.0, 1.0])) == pytest.approx(2.0)


def test_ustat_rank_vs_direct(rng):
    f = random_kernel(rng, atoms=8, rank=3, n=10.0)
    d = f.to_dense()
    for _ in range(100):
        m = int(rng.integers(0, 51))
        pts = rng.choice(f.space.nodes[:, 0], m)
        s = sample_from_points(f.space, pts)
        ref = ustat_direct(f, s)
        for k in (f, d):
            assert abs(ustat_eval(k, s) - ref) <= 1e-9 * max(1.0, abs(ref))


def test_ustat_order3_vs_direct(rng):
    f = random_kernel(rng, atoms=5, rank=3, q=3, n=4.0)
    for _ in range(30):
        s = sample_from_points(f.space, rng.choice(f.space.nodes[:, 0], int(rng.integers(0, 12))))
        ref = ustat_direct(f, s)
        assert abs(ustat_eval(f, s) - ref) <= 1e-9 * max(1.0, abs(ref))


def test_ustat_continuum_vs_direct():
    h = gamma_ustat_kernel(30.0, "continuum")
    rng = np.random.default_rng(4)
    for _ in range(20):
        s = sample(h.space, rng)
        ref = ustat_direct(h, s)
        assert abs(ustat_eval(h, s) - ref) <= 1e-9 * max(1.0, abs(ref))


# -- Hoeffding ---------------------------------------------------------------


def test_hoeffding_examples(grid10, rng):
    h = sign_kernel(sign_space(1.0))
    assert degeneracy_defect(h) <= 1e-10
    assert hoeffding_rank(h) == 2
    assert norm2(combine([(1.0, hoeffding_projection(h, 2)), (-1.0, h)])) == 0.0
    # g x g on two atoms with weights (1, 1), g = (1, 0): int g = 1, so
    # h_1(z) = 2 g(z) and ||h_1|| = 2
    sp = make_grid_space([0.0, 1.0], [1.0, 1.0])
    g = rank_kernel(sp, [make_factor(sp, values=[1.0, 0.0])])
    assert degeneracy_defect(g) == pytest.approx(2.0)
    h1 = hoeffding_projection(g, 1)
    assert h1(0.0) == pytest.approx(2.0) and h1(1.0) == pytest.approx(0.0)
    c = rank_kernel(sp, [make_factor(sp, values=[1.0, 1.0])])
    assert hoeffding_rank(c) == 1
    with pytest.raises(ValueError):
        hoeffding_projection(g, 3)


# -- multiple integrals ----------------------------------------------------


def test_q1_integral(grid10, rng):
    g = make_factor(grid10, values=rng.normal(size=10))
    f = rank_kernel(grid10, [g], order=1)
    s = sample(grid10.with_intensity(5.0), rng)
    f5 = f.with_space(grid10.with_intensity(5.0))
    assert multiple_integral_eval(f5, s) == pytest.approx(g.values[s.atoms].sum() - integral(f5))


def test_degenerate_q2_is_pairwise_sum(rng):
    h = gamma_ustat_kernel(20.0)
    b = sample_batch(h.space, rng, 500)
    assert np.allclose(multiple_integral_batch(h, b), ustat_batch(h, b), atol=1e-12)


def test_product_formula_pathwise(rng):
    f = random_kernel(rng, atoms=5, rank=3, n=2.0)
    b = sample_batch(f.space, rng, 300)
    lhs = multiple_integral_batch(f, b) ** 2
    rhs = float(product_kernel(f, 0)) + sum(multiple_integral_batch(product_kernel(f, p), b) for p in range(1, 5))
    assert np.all(np.abs(lhs - rhs) <= 1e-7 * (1 + lhs))


def test_batch_matches_single(rng):
    f = random_kernel(rng, atoms=5, rank=3, q=3, n=2.0)
    for _ in range(20):
        s = sample(f.space, rng)
        assert multiple_integral_batch(f, batch_of(s))[0] == pytest.approx(multiple_integral_eval(f, s), abs=1e-9)


@pytest.mark.parametrize("name", ["sign", "haar2", "random"])
def test_isometry_builtin(name):
    f = moment_kernel(name, 20.0)
    rng = np.random.default_rng(11)
    x = np.concatenate([multiple_integral_batch(f, sample_batch(f.space, rng, 50_000)) for _ in range(2)])
    se = x.std() / sqrt(len(x))
    assert abs(x.mean()) <= 3 * se
    y = x ** 2
    assert abs(y.mean() - 2 * norm2(f)) <= 3 * y.std() / sqrt(len(y))


def test_isometry_order3():
    f = block_order3_kernel(50.0, 12)
    rng = np.random.default_rng(12)
    x = multiple_integral_batch(f, sample_batch(f.space, rng, 100_000))
    y = x ** 2
    assert abs(x.mean()) <= 3 * x.std() / sqrt(len(x))
    assert abs(y.mean() - 6 * norm2(f)) <= 3 * y.std() / sqrt(len(y))


# -- derivatives -------------------------------------------------------------


def test_derivative_q1(grid10, rng):
    g = make_factor(grid10, values=rng.normal(size=10))
    f = rank_kernel(grid10, [g], order=1)
    s = sample(grid10, rng)
    for i, z in enumerate(grid10.nodes[:, 0]):
        assert derivative_eval(f, s, z) == pytest.approx(g.values[i])


def test_add_one_cost(rng):
    for q in (2, 3):
        f = random_kernel(rng, atoms=5, rank=3, q=q, n=2.0)
        for _ in range(100):
            s = sample(f.space, rng)
            z = rng.choice(f.space.nodes[:, 0])
            F = multiple_integral_eval(f, s)
            Fz = multiple_integral_eval(f, s.with_point(z))
            d = derivative_eval(f, s, z)
            assert abs(d - (Fz - F)) <= 1e-8 * max(1.0, abs(d))


def test_derivative_empty_configuration(rng):
    f = random_kernel(rng, atoms=5, rank=3, n=2.0)
    s = sample_from_points(f.space, [])
    z = f.space.nodes[2, 0]
    inner_int = float(f.fix_first(z).integrate_tail(1))
    assert derivative_eval(f, s, z) == pytest.approx(-2 * inner_int)


def test_ustat_decomposition(rng):
    f = random_kernel(rng, atoms=5, rank=3, n=2.0)
    b = sample_batch(f.space, rng, 300)
    # U(h) = E U + I_1(h_1 under mu_n) + I_2(h): h_1 = 2 int h(z, y) mu_n(dy)
    U = ustat_batch(f, b)
    h1 = f.integrate_tail(1).scale(2.0)
    rhs = integral(f) + multiple_integral_batch(h1, b) + multiple_integral_batch(f, b)
    assert np.all(np.abs(U - rhs) <= 1e-7 * (1 + np.abs(U)))


def test_expansion_batch(rng):
    f = random_kernel(rng, atoms=5, rank=3, n=2.0)
    F = ChaosExpansion(2.5, {2: f}, f.space)
    b = sample_batch(f.space, rng, 50)
    assert np.allclose(expansion_batch(F, b), 2.5 + multiple_integral_batch(f, b))


# -- disk graphs -------------------------------------------------------------


def test_disk_graph_collinear():
    r = 1.0
    pts = np.array([[0.0], [0.5], [1.0]])
    assert disk_graph_stat(pts, r, "edge") == 2
    assert disk_graph_stat(pts, r, "triangle") == 0
    assert disk_graph_stat(pts, r, "path", q=3) == 1
    assert disk_graph_stat(np.zeros((0, 1)), r, "edge") == 0
    tri = np.array([[0.0, 0.0], [0.5, 0.0], [0.25, 0.3]])
    assert disk_graph_stat(tri, r, "triangle") == 1
    assert disk_graph_stat(tri, r, "path", q=3) == 0


def test_edge_counts_1d_vs_brute(rng):
    sp = uniform_continuum(-1, 1, 1.0, intensity=30.0)
    b = sample_batch(sp, rng, 200)
    fast = edge_counts_1d(b, 0.05)
    slow = [disk_graph_stat(b.points[b.rep == i], 0.05, "edge") for i in range(b.R)]
    assert np.array_equal(fast, slow)


def test_edge_mean_constant_in_n():
    rng = np.random.default_rng(21)
    for n in (50, 200, 800):
        sp = uniform_continuum(-1, 1, 1.0, intensity=float(n))
        r = 2.0 / n ** 2
        lam = n * n * (r - r * r / 4) / 2
        x = edge_counts_1d(sample_batch(sp, rng, 10_000), r)
        assert abs(x.mean() - lam) <= 3 * x.std() / sqrt(len(x))


def test_addone_l2_vs_direct(rng):
    sp = uniform_continuum(-1, 1, 1.0, intensity=20.0)
    b = sample_batch(sp, rng, 40)
    r = 0.1
    fast = addone_l2(b, r, -1.0, 1.0)
    z = np.linspace(-1, 1, 200_001)
    dz = z[1] - z[0]
    for i in range(b.R):
        x = b.points[b.rep == i, 0]
        D = (np.abs(z[:, None] - x[None, :]) < r).sum(1) if len(x) else np.zeros_like(z)
        assert fast[i] == pytest.approx(10.0 * np.sum(D ** 2) * dz, rel=2e-3, abs=1e-3)


# -- distances ---------------------------------------------------------------


def test_kolmogorov_examples():
    t = GammaTarget(1.0)
    med = float(np.interp(0.5, t.cdf(np.linspace(-1, 3, 100001)), np.linspace(-1, 3, 100001)))
    assert kolmogorov([med], t) == pytest.approx(0.5, abs=1e-4)
    assert kolmogorov([0.0], NormalTarget()) == pytest.approx(0.5)
    # Poisson: compare at half-integers; two atoms at 0 and 1 vs Poisson(1)
    p = PoissonTarget(1.0)
    e0, e1 = np.exp(-1), 2 * np.exp(-1)
    expect = max(abs(0.5 - e0), abs(1.0 - e1), abs(0 - 0.0))
    assert kolmogorov([0.0, 1.0], p) == pytest.approx(expect)
    with pytest.raises(ValueError):
        kolmogorov([], p)


def test_empirical_distances_record(rng):
    x = GammaTarget(2.0).sample(rng, 10_000)
    d = empirical_distances(x, GammaTarget(2.0))
    assert 0 <= d.kolmogorov <= 1 and d.d3_lower >= 0 and d.n == 10_000
    assert np.isnan(empirical_distances([1.0, 2.0], PoissonTarget(1.0)).d3_lower)


def test_product_gap_independent_vs_equal(rng):
    x, y = rng.normal(size=50_000), rng.normal(size=50_000)
    assert product_gap(x, y) < 0.01
    assert product_gap(x, x) > 0.1


# -- experiments -------------------------------------------------------------


def test_orders_refused():
    with pytest.raises(HypothesisError):
        check_orders([2, 4])
    check_orders([2, 3])
    spec = StudySpec("x", [LegSpec("a", GammaTarget(1.0), 2), LegSpec("b", NormalTarget(), 4)],
                     lambda n: None, [10], 100, 0)
    with pytest.raises(HypothesisError):
        hybrid_experiment(spec)


def _tiny_spec(reps=200, ns=(10, 20, 40)):
    def setup(n):
        h = gamma_ustat_kernel(n)
        return h.space, [lambda b, h=h: multiple_integral_batch(h, b)]
    return StudySpec("tiny", [LegSpec("F", GammaTarget(1.0), 2)], setup, list(ns), reps, 5, block=64)


def test_study_determinism_and_workers():
    a = run_study(_tiny_spec())
    b = run_study(_tiny_spec())
    c = run_study(_tiny_spec(), workers=3)
    assert a.rows == b.rows == c.rows
    assert all(0 <= r["kolmogorov"] <= 1 and r["reps"] == 200 for r in a.rows)


def test_study_preconditions():
    with pytest.raises(ValueError):
        run_study(_tiny_spec(reps=50))
    with pytest.raises(ValueError):
        run_study(_tiny_spec(ns=(20, 10, 40)))


def test_depoissonization_slope():
    h0 = sign_kernel(sign_space(1.0))
    ns = [100, 400, 1600, 6400]
    vals = []
    for k, n in enumerate(ns):
        h = h0.with_space(h0.space.with_intensity(n)).scale(1.0 / n)
        sig = sqrt(2 * norm2(h))
        Fp, Fx = coupled_fixed_n(h.space, h, n, stream(3, "dp", k), 40_000)
        vals.append(np.var((Fp - Fx) / sig))
    slope, _ = fit_rate(list(zip(ns, vals)))
    assert -0.7 <= slope <= -0.3


def test_coupling_marginals():
    h0 = sign_kernel(sign_space(1.0))
    n = 50
    h = h0.with_space(h0.space.with_intensity(n)).scale(1.0 / n)
    Fp, Fx = coupled_fixed_n(h.space, h, n, np.random.default_rng(8), 100_000)
    # Poissonized leg has the isometry variance
    assert abs(Fp.var() - 2 * norm2(h)) <= 0.05
    with pytest.raises(ValueError):
        coupled_fixed_n(uniform_continuum(0, 1), h, n, np.random.default_rng(0), 10)
