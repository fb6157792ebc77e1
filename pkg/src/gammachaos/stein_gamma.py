"""Centred Gamma target G(nu) = 2 Gamma(nu/2, 1) - nu: density, CDF, moments,
the first-order Stein solution U_h and the smoothness constants.

Also holds the Normal and Poisson targets used by the simulation side, and the
finite test-function dictionary that gives a computable lower bound on d3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

QUAD_TOL = 1e-9
TAYLOR_SWITCH = 1e-12


class QuadratureError(RuntimeError):
    pass


def _quad(fn, a, b, **kw) -> float:
    val, err = integrate.quad(fn, a, b, epsabs=1e-13, epsrel=1e-12, limit=400, **kw)
    if not err <= QUAD_TOL:
        raise QuadratureError(f"quadrature on [{a}, {b}] missed tolerance: error {err:.3g}")
    return val


@dataclass(frozen=True)
class GammaTarget:
    nu: float

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")

    @property
    def a(self) -> float:
        return self.nu / 2

    @property
    def name(self) -> str:
        return f"gamma({self.nu:g})"

    def log_density(self, x):
        u = np.asarray(x, dtype=float) + self.nu
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (self.a - 1) * np.log(u) - u / 2 - self.a * math.log(2) - math.lgamma(self.a)
        return np.where(u > 0, out, -np.inf)

    def density(self, x):
        return np.exp(self.log_density(x))

    def cdf(self, x):
        u = np.maximum(np.asarray(x, dtype=float) + self.nu, 0.0)
        return special.gammainc(self.a, u / 2)

    def sf(self, x):
        u = np.maximum(np.asarray(x, dtype=float) + self.nu, 0.0)
        return special.gammaincc(self.a, u / 2)

    def moment(self, k: int) -> float:
        nu = self.nu
        table = {1: 0.0, 2: 2 * nu, 3: 8 * nu, 4: 12 * nu ** 2 + 48 * nu}
        if k not in table:
            raise ValueError("moments are available for k = 1..4")
        return table[k]

    def expect(self, h: Callable) -> float:
        """E[h(G)] by adaptive quadrature; the endpoint power singularity is
        handled by an algebraic weight."""
        nu, a = self.nu, self.a
        c = math.exp(-a * math.log(2) - math.lgamma(a))
        b = -nu + 40.0
        head = _quad(lambda x: float(h(x)) * c * math.exp(-(x + nu) / 2), -nu, b,
                     weight="alg", wvar=(a - 1, 0))
        tail = _quad(lambda x: float(h(x)) * float(self.density(x)), b, np.inf)
        return head + tail

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return 2 * rng.gamma(self.a, 1.0, size) - self.nu


@dataclass(frozen=True)
class NormalTarget:
    name: str = "normal"

    def cdf(self, x):
        return special.ndtr(np.asarray(x, dtype=float))

    def density(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-x * x / 2) / math.sqrt(2 * math.pi)

    def expect(self, h: Callable) -> float:
        return _quad(lambda x: float(h(x)) * float(self.density(x)), -np.inf, np.inf)

    def sample(self, rng, size):
        return rng.standard_normal(size)


@dataclass(frozen=True)
class PoissonTarget:
    lam: float
    discrete: bool = field(default=True, init=False)

    @property
    def name(self) -> str:
        return f"poisson({self.lam:g})"

    def cdf(self, x):
        k = np.floor(np.asarray(x, dtype=float))
        out = special.gammaincc(np.maximum(k + 1, 1), self.lam)
        return np.where(k < 0, 0.0, out)

    def pmf(self, k):
        k = np.asarray(k, dtype=float)
        with np.errstate(invalid="ignore"):
            out = np.exp(k * math.log(self.lam) - self.lam - special.gammaln(k + 1))
        return np.where((k >= 0) & (k == np.floor(k)), out, 0.0)

    def expect(self, h: Callable) -> float:
        kmax = int(self.lam + 40 * math.sqrt(self.lam) + 40)
        ks = np.arange(kmax + 1)
        return float(np.sum(self.pmf(ks) * np.array([h(k) for k in ks])))

    def sample(self, rng, size):
        return rng.poisson(self.lam, size).astype(float)


# --------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    """A C^3 function with declared sup-norms of its first three derivatives."""

    id: str
    value: Callable
    d1: Callable
    d2: Callable
    d3: Callable
    sup_norms: tuple[float, float, float]

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if any(s > 1 + 1e-12 for s in self.sup_norms):
            raise ValueError(f"{self.id}: derivative sup-norms must be <= 1")

    def __call__(self, x):
        return self.value(x)


def _sig(x):
    return special.expit(x)


SIGMOID_SUP = (0.25, 1 / (6 * math.sqrt(3)), 0.125)


def default_dictionary(ts: Sequence[float] = (0.5, 1.0, 2.0)) -> list[TestFunction]:
    """sin/cos of frequency t scaled by max(t, t^3), and logistic sigmoids of
    slope t scaled by their largest derivative sup, for each t."""
    out = []
    for t in ts:
        s = max(t, t ** 3)
        sups = (t / s, t ** 2 / s, t ** 3 / s)
        out.append(TestFunction(
            f"sin[{t:g}]",
            lambda x, t=t, s=s: np.sin(t * x) / s,
            lambda x, t=t, s=s: t * np.cos(t * x) / s,
            lambda x, t=t, s=s: -t * t * np.sin(t * x) / s,
            lambda x, t=t, s=s: -t ** 3 * np.cos(t * x) / s,
            sups))
        out.append(TestFunction(
            f"cos[{t:g}]",
            lambda x, t=t, s=s: np.cos(t * x) / s,
            lambda x, t=t, s=s: -t * np.sin(t * x) / s,
            lambda x, t=t, s=s: -t * t * np.cos(t * x) / s,
            lambda x, t=t, s=s: t ** 3 * np.sin(t * x) / s,
            sups))
        d = [t * SIGMOID_SUP[0], t ** 2 * SIGMOID_SUP[1], t ** 3 * SIGMOID_SUP[2]]
        s = max(d)

        def v(x, t=t, s=s):
            return _sig(t * x) / s

        def v1(x, t=t, s=s):
            p = _sig(t * x)
            return t * p * (1 - p) / s

        def v2(x, t=t, s=s):
            p = _sig(t * x)
            return t * t * p * (1 - p) * (1 - 2 * p) / s

        def v3(x, t=t, s=s):
            p = _sig(t * x)
            return t ** 3 * p * (1 - p) * (1 - 6 * p + 6 * p * p) / s

        out.append(TestFunction(f"sigmoid[{t:g}]", v, v1, v2, v3, tuple(x / s for x in d)))
    return out


# --------------------------------------------------------------------------
# Stein solution


def smoothness_constants(t: GammaTarget) -> tuple[float, float, float]:
    nu = t.nu
    c0 = max(2.0, 2.0 / nu)
    c1 = max(1.0, 1.0 / nu + 2.0 / nu ** 2)
    c2 = max(2.0 / 3.0, 2.0 / (3.0 * nu) - 3.0 / nu ** 2 + 4.0 / nu ** 3)
    return c0, c1, c2


def _taylor(t: GammaTarget, h: TestFunction, eh: float, u: np.ndarray):
    """U and U' for small u = x + nu from a three-term expansion of the
    quotient of the integral of (h - Eh) g against 2 u g."""
    x0 = -t.nu
    a = t.a
    p0 = float(h.value(x0)) - eh
    p1 = float(h.d1(x0))
    p2 = float(h.d2(x0))
    s0, s1, s2 = p0, p1 - p0 / 2, p2 / 2 - p1 / 2 + p0 / 8
    br = s0 / a + s1 * u / (a + 1) + s2 * u * u / (a + 2)
    dbr = s1 / (a + 1) + 2 * s2 * u / (a + 2)
    e = np.exp(u / 2) / 2
    return e * br, e * (br / 2 + dbr)


@dataclass
class SteinSolver:
    """U_h for one target and test function, with E[h(G)] precomputed."""

    target: GammaTarget
    h: TestFunction
    eh: float = field(default=float("nan"))

    def __post_init__(self):
        if math.isnan(self.eh):
            self.eh = self.target.expect(self.h.value)

    def _centered(self, y):
        return float(self.h.value(y)) - self.eh

    def _integrals(self, xs: np.ndarray) -> np.ndarray:
        """I(x) = int_{-nu}^x (h - Eh) g for sorted xs > -nu, split into a
        lower sweep (from -nu) and an upper sweep (from +inf, I = -tail)."""
        t = self.target
        nu, a = t.nu, t.a
        c = math.exp(-a * math.log(2) - math.lgamma(a))
        med = float(special.gammaincinv(a, 0.5) * 2 - nu)
        out = np.empty(len(xs))
        lo = np.nonzero(xs <= med)[0]
        hi = np.nonzero(xs > med)[0]
        g = lambda y: self._centered(y) * float(t.density(y))
        acc, prev = 0.0, -nu
        for k, i in enumerate(lo):
            x = xs[i]
            if k == 0:
                acc = _quad(lambda y: self._centered(y) * c * math.exp(-(y + nu) / 2), -nu, x,
                            weight="alg", wvar=(a - 1, 0))
            else:
                acc += _quad(g, prev, x)
            out[i] = acc
            prev = x
        acc, prev = 0.0, np.inf
        for i in hi[::-1]:
            x = xs[i]
            acc += _quad(g, x, prev)
            out[i] = -acc
            prev = x
        return out

    def solve(self, x):
        """(U_h(x), U_h'(x)) for scalar or array x."""
        t = self.target
        nu = t.nu
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        order = np.argsort(xs, kind="stable")
        xs_sorted = xs[order]
        U = np.empty(len(xs))
        dU = np.empty(len(xs))
        u = xs_sorted + nu
        hv = np.asarray(self.h.value(xs_sorted), dtype=float) - self.eh
        left = u <= 0
        # left of the support: U = -(h - Eh) / x
        xl = xs_sorted[left]
        U[left] = -hv[left] / xl
        dU[left] = -np.asarray(self.h.d1(xl), dtype=float) / xl + hv[left] / xl ** 2
        right = ~left
        ur = u[right]
        gu = ur * t.density(xs_sorted[right])
        near = (gu < TAYLOR_SWITCH) & (ur < 1.0)
        far = ~near
        Ur = np.empty(len(ur))
        dUr = np.empty(len(ur))
        if near.any():
            Ur[near], dUr[near] = _taylor(t, self.h, self.eh, ur[near])
        if far.any():
            xf = xs_sorted[right][far]
            I = self._integrals(xf)
            Ur[far] = I / (2 * gu[far])
            dUr[far] = (hv[right][far] + xf * Ur[far]) / (2 * ur[far])
        U[right], dU[right] = Ur, dUr
        outU, outdU = np.empty(len(xs)), np.empty(len(xs))
        outU[order], outdU[order] = U, dU
        if np.ndim(x) == 0:
            return float(outU[0]), float(outdU[0])
        return outU, outdU


def stein_solution(t: GammaTarget, h: TestFunction, x, derivative: bool = False):
    U, dU = SteinSolver(t, h).solve(x)
    return (U, dU) if derivative else U


def stein_operator(t: GammaTarget, U: np.ndarray, dU: np.ndarray, x: np.ndarray) -> np.ndarray:
    """2 (x + nu)_+ U'(x) - x U(x)."""
    x = np.asarray(x, dtype=float)
    return 2 * np.maximum(x + t.nu, 0.0) * dU - x * U


def d3_lower_bound(samples, t, dictionary: Sequence[TestFunction]) -> float:
    """max over the dictionary of |mean h(samples) - E h(target)|."""
    xs = np.asarray(samples, dtype=float).ravel()
    if xs.size == 0:
        raise ValueError("no samples")
    if not dictionary:
        raise ValueError("empty dictionary")
    best = 0.0
    for h in dictionary:
        best = max(best, abs(float(np.mean(h.value(xs))) - t.expect(h.value)))
    return best


def density(t: GammaTarget, x):
    return t.density(x)


def cdf(t: GammaTarget, x):
    return t.cdf(x)


def moment(t: GammaTarget, k: int) -> float:
    return t.moment(k)
