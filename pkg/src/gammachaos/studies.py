"""The built-in studies. Each returns a list of flat rows (dicts) ready for the
CSV writer, plus a short description stored in the run manifest."""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt
from typing import Sequence

import numpy as np

from . import combinatorics as cb
from .bounds import (
    carre_expansion,
    dejong_report,
    fourth_moment_I2,
    fourth_moment_via_product,
    third_moment_I2,
    three_moment_criterion,
)
from .chaos_sim import (
    LegSpec,
    StudySpec,
    addone_l2,
    carre_pathwise,
    coupled_fixed_n,
    derivative_eval,
    edge_counts_1d,
    expansion_batch,
    hoeffding_projection,
    hybrid_experiment,
    multiple_integral_batch,
    multiple_integral_eval,
    run_blocks,
    run_study,
    sample,
    sample_batch,
    stream,
    ustat_batch,
)
from .contract import contract, integral, norm2, product_kernel, sym_contract
from .families import (
    block_order3_kernel,
    haar_gamma_kernel,
    moment_kernel,
    non_gamma_kernel,
    paired_cells_kernel,
    sign_kernel,
    sign_space,
)
from .space import Kernel, make_factor, make_grid_space, separable_kernel
from .stein_gamma import (
    GammaTarget,
    NormalTarget,
    PoissonTarget,
    SteinSolver,
    default_dictionary,
    stein_operator,
)

DESCRIPTIONS = {
    "identity-suite": "exact algebra and pathwise identities of the contraction and chaos machinery",
    "gamma-ustat": "Gamma limit of a degenerate order-2 U-statistic, exact C_n at rate n^-1/4",
    "three-moment": "three-moment criterion for Gamma limits of double integrals",
    "dejong-normal": "fourth-moment (Normal) regime versus the Gamma regime of degenerate U-statistics",
    "hybrid-gn": "joint Gamma/Normal convergence of chaos components of orders 2 and 3",
    "hybrid-gp": "joint Gamma/Poisson convergence: double integral and disk-graph edge count",
}

DEFAULT_SCHEDULES = {
    "gamma-ustat": [100, 400, 1600, 6400, 25600],
    "three-moment": [100, 400, 1600, 6400, 25600],
    "dejong-normal": [100, 400, 1600, 6400, 25600],
    "hybrid-gn": [100, 400, 1600, 6400, 25600],
    "hybrid-gp": [100, 400, 1600, 6400],
}


# --------------------------------------------------------------------------
# identity suite


@dataclass
class Check:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)

    def row(self) -> dict:
        return {"row_kind": "check", "check": self.name, "value": self.value,
                "tolerance": self.tolerance, "passed": int(self.passed)}


def _random_order2(rng: np.random.Generator, atoms: int = 6, rank: int = 4, n: float = 3.0) -> Kernel:
    sp = make_grid_space(np.linspace(0.0, 1.0, atoms), rng.uniform(0.1, 1.0, atoms), intensity=n)
    fs = [make_factor(sp, values=rng.normal(size=atoms)) for _ in range(rank)]
    terms = [(rng.normal(), [fs[i], fs[j]]) for i in range(rank) for j in range(rank) if rng.random() < 0.7]
    if not terms:
        terms = [(1.0, [fs[0], fs[0]])]
    return separable_kernel(sp, terms)


def _random_order(rng: np.random.Generator, q: int, atoms: int = 4, rank: int = 3) -> Kernel:
    sp = make_grid_space(np.linspace(0.0, 1.0, atoms), rng.uniform(0.2, 1.0, atoms), intensity=2.0)
    fs = [make_factor(sp, values=rng.normal(size=atoms)) for _ in range(rank)]
    terms = [(rng.normal(), [fs[i] for i in rng.integers(0, rank, q)]) for _ in range(4)]
    return separable_kernel(sp, terms)


def check_us_identity(seed: int, count: int = 50) -> Check:
    """4! ||f~*0^0 f||^2 = 2 (2||f||^2)^2 + 16 ||f*1^1 f||^2."""
    rng = stream(seed, "us-identity")
    worst = 0.0
    for _ in range(count):
        f = _random_order2(rng)
        lhs = 24 * norm2(sym_contract(f, f, 0, 0))
        rhs = 2 * (2 * norm2(f)) ** 2 + 16 * norm2(contract(f, f, 1, 1))
        worst = max(worst, abs(lhs - rhs) / abs(rhs))
    return Check("us_identity_rel_err", worst, 1e-10)


def check_c_q() -> Check:
    return Check("c_q_abs_err", max(abs(cb.c_q(2) - 1.0), abs(cb.c_q(4) - 1.0 / 18.0)), 0.0)


def check_swap_identity(seed: int) -> Check:
    """||f *_a^0 f|| = ||f *_q^{q-a} f|| for q in {2, 4}."""
    rng = stream(seed, "swap-identity")
    worst = 0.0
    for q in (2, 4):
        for _ in range(3):
            f = _random_order(rng, q)
            for a in range(2, q + 1):
                x = norm2(contract(f, f, a, 0))
                y = norm2(contract(f, f, q, q - a))
                worst = max(worst, abs(sqrt(x) - sqrt(y)) / sqrt(y))
    return Check("swap_identity_rel_err", worst, 1e-10)


def check_gamma_moments(nus: Sequence[float] = (0.5, 1.0, 2.0, 5.0)) -> Check:
    """Moments of the centred Gamma law against quadrature of its density."""
    worst = 0.0
    for nu in nus:
        t = GammaTarget(nu)
        exact = (0.0, 2 * nu, 8 * nu, 12 * nu ** 2 + 48 * nu)
        for k, m in enumerate(exact, start=1):
            quad = t.expect(lambda x, k=k: x ** k)
            err = abs(quad - m) / abs(m) if m else abs(quad)
            worst = max(worst, err)
    return Check("gamma_moments_rel_err", worst, 1e-6)


def check_stein_residual(nus: Sequence[float] = (1.0, 2.0), points: int = 200) -> Check:
    """|h - E h(G) - (2(x+nu)_+ U' - x U)| on a grid covering both sides of -nu.

    U' is a five-point finite difference of the solver's U, so the check does
    not reuse the derivative formula of the solver. Steps stay on one side
    of -nu."""
    worst = 0.0
    for nu in nus:
        t = GammaTarget(nu)
        xs = np.linspace(-nu - 3.0, nu + 12.0, points)
        d = np.where(xs > -nu, np.minimum(1e-3, np.abs(xs + nu) / 4), 1e-3)
        d = np.where((xs < -nu) & (xs + 2e-3 >= -nu), np.abs(xs + nu) / 4, d)
        for h in default_dictionary():
            s = SteinSolver(t, h)
            pts = np.concatenate([xs, xs - 2 * d, xs - d, xs + d, xs + 2 * d])
            U, _ = s.solve(pts)
            U0, Um2, Um1, Up1, Up2 = U.reshape(5, -1)
            dU = (Um2 - 8 * Um1 + 8 * Up1 - Up2) / (12 * d)
            res = h.value(xs) - s.eh - stein_operator(t, U0, dU, xs)
            worst = max(worst, float(np.max(np.abs(res))))
    return Check("stein_residual_abs", worst, 1e-6)


def _pathwise_setup(seed: int):
    rng = stream(seed, "pathwise")
    f = _random_order2(rng, atoms=5, rank=3, n=2.0)
    return rng, f


def check_product_formula(seed: int, reps: int = 1000) -> Check:
    rng, f = _pathwise_setup(seed)
    b = sample_batch(f.space, rng, reps)
    I2 = multiple_integral_batch(f, b)
    rhs = sum(multiple_integral_batch(product_kernel(f, p), b) for p in range(5))
    return Check("product_formula_rel_err", float(np.max(np.abs(I2 ** 2 - rhs) / (1 + I2 ** 2))), 1e-7)


def check_add_one_cost(seed: int, reps: int = 1000) -> Check:
    rng, f = _pathwise_setup(seed)
    worst = 0.0
    for _ in range(reps):
        s = sample(f.space, rng)
        z = f.space.nodes[rng.integers(f.space.n_nodes)]
        F0 = multiple_integral_eval(f, s)
        F1 = multiple_integral_eval(f, s.with_point(z))
        D = derivative_eval(f, s, z)
        worst = max(worst, abs(F1 - F0 - D) / (1 + abs(D)))
    return Check("add_one_cost_rel_err", worst, 1e-8)


def check_ustat_decomposition(seed: int, reps: int = 1000) -> Check:
    """U(h) = E U + sum_i n^(k-i) I_i(h_i) pathwise, k = 2."""
    rng, h = _pathwise_setup(seed)
    sp = h.space
    n = sp.intensity
    b = sample_batch(sp, rng, reps)
    U = ustat_batch(h, b)
    dec = integral(h) + sum(n ** (2 - i) * multiple_integral_batch(hoeffding_projection(h, i).with_space(sp), b)
                            for i in (1, 2))
    return Check("ustat_decomposition_rel_err", float(np.max(np.abs(U - dec) / (1 + np.abs(U)))), 1e-7)


def check_carre(seed: int, reps: int = 1000) -> Check:
    rng, f = _pathwise_setup(seed)
    b = sample_batch(f.space, rng, reps)
    lhs = carre_pathwise(f, b)
    rhs = expansion_batch(carre_expansion(f), b)
    return Check("carre_rel_err", float(np.max(np.abs(lhs - rhs) / (1 + np.abs(rhs)))), 1e-8)


def algebra_checks(seed: int) -> list[Check]:
    return [check_us_identity(seed), check_c_q(), check_swap_identity(seed),
            check_gamma_moments(), check_stein_residual()]


def pathwise_checks(seed: int, reps: int = 1000) -> list[Check]:
    return [check_product_formula(seed, reps), check_add_one_cost(seed, reps),
            check_ustat_decomposition(seed, reps), check_carre(seed, reps)]


def identity_suite(seed: int, reps: int = 1000) -> list[dict]:
    return [c.row() for c in algebra_checks(seed) + pathwise_checks(seed, reps)]


# --------------------------------------------------------------------------
# moment oracles


def moment_oracle(name: str, seed: int, reps: int, workers: int = 1, n: float = 20.0) -> dict:
    """Monte Carlo moments of I_2(f) against the exact formulas, with
    standard errors."""
    f = moment_kernel(name, n)
    tags = {"sign": 0, "haar2": 1, "random": 2}

    def job(rng, m):
        x = multiple_integral_batch(f, sample_batch(f.space, rng, m))
        return np.stack([x, x ** 2, x ** 3, x ** 4])

    parts = run_blocks(job, seed, "moment-oracle", tags.get(name, 99), reps, 100_000, workers)
    X = np.concatenate(parts, axis=1)
    mc = X.mean(axis=1)
    se = X.std(axis=1) / sqrt(X.shape[1])
    exact = [0.0, 2 * norm2(f), third_moment_I2(f), fourth_moment_I2(f)]
    return {"kernel": name, "mc": mc, "se": se, "exact": np.array(exact),
            "fourth_via_product": fourth_moment_via_product(f)}


# --------------------------------------------------------------------------
# gamma-ustat


def _run(spec: StudySpec, workers: int, raw: dict | None, hybrid_run: bool = False):
    spec.keep_raw = raw is not None
    res = (hybrid_experiment if hybrid_run else run_study)(spec, workers)
    if raw is not None:
        for n, legs in res.raw.items():
            for leg, d in legs.items():
                raw[f"{spec.experiment}:n={n:g}:{leg}"] = d
    return res


def gamma_ustat(n_values, reps: int, seed: int, workers: int = 1,
                base_kernel: Kernel | None = None, nu: float = 1.0,
                coupling_reps: int | None = None, raw: dict | None = None) -> list[dict]:
    """Exact bound rows, Poissonized simulation rows and de-Poissonization
    rows for h_n = h / n under n mu. The default h is sign x sign on the
    uniform law of (-1, 1), represented on two cells."""
    base = base_kernel if base_kernel is not None else sign_kernel(sign_space(1.0))
    rows = []
    for n in n_values:
        rep = dejong_report(base, n, nu=nu)
        r = rep.as_row()
        r.update(row_kind="bound", n=float(n), leg="F")
        r["three_moment_residual"] = three_moment_criterion(
            base.with_space(base.space.with_intensity(n)).scale(1.0 / n), nu)
        rows.append(r)
    target = GammaTarget(nu)

    def setup(n):
        h = base.with_space(base.space.with_intensity(n)).scale(1.0 / n)
        return h.space, [lambda b, h=h: multiple_integral_batch(h, b)]

    spec = StudySpec("gamma-ustat", [LegSpec("F", target, 2)], setup, list(n_values), reps, seed)
    res = _run(spec, workers, raw)
    rows += [dict(r, row_kind="sim") for r in res.rows]
    if base.space.mode.value == "grid":
        cr = coupling_reps or reps
        for k, n in enumerate(n_values):
            h = base.with_space(base.space.with_intensity(n)).scale(1.0 / n)
            sig = sqrt(2 * norm2(h))

            def job(rng, m, h=h, n=n):
                Fp, Fx = coupled_fixed_n(h.space, h, int(n), rng, m)
                return (Fp - Fx) / sig

            d = np.concatenate(run_blocks(job, seed, "depoisson", k, cr, 50_000, workers))
            rows.append({"row_kind": "depoisson", "n": float(n), "leg": "F", "reps": len(d),
                         "var_diff": float(np.var(d)), "mean": float(np.mean(d))})
    return rows


# --------------------------------------------------------------------------
# three-moment


def three_moment(n_values, nu: float = 1.0, base_kernel: Kernel | None = None) -> list[dict]:
    base = base_kernel if base_kernel is not None else sign_kernel(sign_space(1.0))
    rows = []
    for n in n_values:
        f = base.with_space(base.space.with_intensity(n)).scale(1.0 / n)
        rows.append({"row_kind": "bound", "n": float(n), "leg": "gamma", "nu": nu, "q": 2,
                     "variance": 2 * norm2(f), "three_moment_residual": three_moment_criterion(f, nu)})
        g = non_gamma_kernel(n)
        nu_g = norm2(g)  # variance 2 nu
        rows.append({"row_kind": "bound", "n": float(n), "leg": "non_gamma", "nu": nu_g, "q": 2,
                     "variance": 2 * norm2(g), "three_moment_residual": three_moment_criterion(g, nu_g)})
    return rows


# --------------------------------------------------------------------------
# dejong-normal


def normal_cells(n: float) -> int:
    """Number of grid cells of the Normal-regime kernel: about 2 sqrt(n)."""
    return 2 * max(2, int(round(sqrt(n))))


def dejong_normal(n_values, reps: int, seed: int, workers: int = 1, raw: dict | None = None) -> list[dict]:
    rows = []
    for n in n_values:
        m = normal_cells(n)
        # unscaled sum of e_j x e_j; the report applies sqrt(2/m) / n
        base = paired_cells_kernel(1.0, m).scale(sqrt(m / 2.0))
        r = dejong_report(base, n, scale=sqrt(2.0 / m) / n)
        rows.append(dict(r.as_row(), row_kind="bound", n=float(n), leg="normal"))
        g = dejong_report(sign_kernel(sign_space(1.0)), n, nu=1.0)
        rows.append(dict(g.as_row(), row_kind="bound", n=float(n), leg="gamma"))

    def setup(n):
        h = paired_cells_kernel(n, normal_cells(n))
        sig = sqrt(2 * norm2(h))
        return h.space, [lambda b, h=h, sig=sig: multiple_integral_batch(h, b) / sig]

    spec = StudySpec("dejong-normal", [LegSpec("normal", NormalTarget(), 2)], setup,
                     list(n_values), reps, seed)
    rows += [dict(r, row_kind="sim") for r in _run(spec, workers, raw).rows]
    return rows


# --------------------------------------------------------------------------
# hybrids


def gn_cells(n: float) -> int:
    """Grid cells of the order-3 leg: a multiple of 12 near sqrt(n)."""
    return 12 * max(1, int(round(sqrt(n) / 12)))


def hybrid_gn_spec(n_values, reps: int, seed: int) -> StudySpec:
    def setup(n):
        f = block_order3_kernel(n, gn_cells(n))
        h = sign_kernel(f.space).scale(1.0 / n)
        return f.space, [lambda b, h=h: multiple_integral_batch(h, b),
                         lambda b, f=f: multiple_integral_batch(f, b)]

    legs = [LegSpec("gamma", GammaTarget(1.0), 2), LegSpec("normal", NormalTarget(), 3)]
    return StudySpec("hybrid-gn", legs, setup, list(n_values), reps, seed)


GP_NU = 2


def gp_radius(n: float) -> float:
    """r_n = 2 / n^2 on (-1, 1): n^2 r_n stays constant and E[L] -> 1."""
    return 2.0 / n ** 2


def gp_lambda(n: float) -> float:
    r = gp_radius(n)
    return n * n * (r - r * r / 4) / 2


def hybrid_gp_spec(n_values, reps: int, seed: int) -> StudySpec:
    def setup(n):
        h = haar_gamma_kernel(n, GP_NU, mode="continuum")
        r = gp_radius(n)
        return h.space, [lambda b, h=h: multiple_integral_batch(h, b),
                         lambda b, r=r: edge_counts_1d(b, r).astype(float)]

    legs = [LegSpec("gamma", GammaTarget(float(GP_NU)), 2), LegSpec("poisson", PoissonTarget(1.0), None)]
    return StudySpec("hybrid-gp", legs, setup, list(n_values), reps, seed, block=20_000)


def hybrid(experiment: str, n_values, reps: int, seed: int, workers: int = 1,
           raw: dict | None = None) -> list[dict]:
    spec = (hybrid_gn_spec if experiment == "hybrid-gn" else hybrid_gp_spec)(n_values, reps, seed)
    res = _run(spec, workers, raw, hybrid_run=True)
    rows = [dict(r, row_kind="sim") for r in res.rows]
    if experiment == "hybrid-gp":
        for k, n in enumerate(n_values):
            space, _ = spec.setup(n)
            r = gp_radius(n)

            def job(rng, m, space=space, r=r):
                return addone_l2(sample_batch(space, rng, m), r, -1.0, 1.0)

            d = np.concatenate(run_blocks(job, seed, "addone", k, min(reps, 10_000),
                                          max(1, int(4_000_000 // n)), workers))
            rows.append({"row_kind": "diag", "n": float(n), "leg": "poisson", "reps": len(d),
                         "addone_l2": float(np.mean(d)), "mean": gp_lambda(n)})
    return rows


def run_builtin(experiment: str, n_values=None, reps: int = 100_000, seed: int = 0, workers: int = 1,
                base_kernel: Kernel | None = None, nu: float = 1.0,
                raw: dict | None = None) -> list[dict]:
    ns = list(n_values or DEFAULT_SCHEDULES.get(experiment, []))
    if experiment == "identity-suite":
        return identity_suite(seed)
    if experiment == "gamma-ustat":
        return gamma_ustat(ns, reps, seed, workers, base_kernel, nu, raw=raw)
    if experiment == "three-moment":
        return three_moment(ns, nu, base_kernel)
    if experiment == "dejong-normal":
        return dejong_normal(ns, reps, seed, workers, raw)
    if experiment in ("hybrid-gn", "hybrid-gp"):
        return hybrid(experiment, ns, reps, seed, workers, raw)
    raise ValueError(f"unknown experiment {experiment!r}")
