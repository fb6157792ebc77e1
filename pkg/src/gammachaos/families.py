"""Built-in kernel families used by the studies and tests."""

from __future__ import annotations

from itertools import permutations
from math import sqrt

import numpy as np

from .space import (
    Factor,
    Kernel,
    MeasureSpace,
    make_factor,
    rank_kernel,
    separable_kernel,
    uniform_continuum,
    uniform_grid,
)


def sign_space(n: float = 1.0, mode: str = "grid", cells: int = 2) -> MeasureSpace:
    """Uniform probability on (-1, 1), as an even grid or with a break at 0."""
    if mode == "grid":
        if cells % 2:
            raise ValueError("need an even number of cells")
        return uniform_grid(-1.0, 1.0, cells, 1.0, n)
    return uniform_continuum(-1.0, 1.0, 1.0, breakpoints=(0.0,), per_panel=2, intensity=n)


def sign_factor(space: MeasureSpace) -> Factor:
    return make_factor(space, func=lambda x: np.where(np.asarray(x)[:, 0] > 0, 1.0, -1.0), name="sign")


def sign_kernel(space: MeasureSpace) -> Kernel:
    """h(z1, z2) = sign(z1) sign(z2): the mean-zero rank-one kernel with unit
    norm under the uniform law on (-1, 1). Scaled by 1/n under n mu it has
    variance 2 and converges to the centred Gamma with nu = 1."""
    return rank_kernel(space, [sign_factor(space)])


def gamma_ustat_kernel(n: float, mode: str = "grid") -> Kernel:
    """h_n = h / n on the space with intensity n."""
    return sign_kernel(sign_space(n, mode)).scale(1.0 / n)


def haar_factors(space: MeasureSpace, count: int) -> list[Factor]:
    """Orthonormal mean-zero Haar-type functions on (-1, 1) under the uniform
    law: sign, then sign of the two halves, and so on."""
    out = []
    level, k = 0, 0
    while len(out) < count:
        if level == 0:
            out.append(sign_factor(space))
            level, k = 1, 0
            continue
        m = 2 ** level
        lo, hi = -1 + 2 * k / m, -1 + 2 * (k + 1) / m
        mid = 0.5 * (lo + hi)
        amp = sqrt(m)

        def f(x, lo=lo, hi=hi, mid=mid, amp=amp):
            x = np.asarray(x)[:, 0]
            return amp * (((x > lo) & (x <= mid)) * -1.0 + ((x > mid) & (x <= hi)) * 1.0)

        out.append(make_factor(space, func=f, name=f"haar{level}.{k}"))
        k += 1
        if k == m:
            level, k = level + 1, 0
    return out


def haar_gamma_kernel(n: float, nu: int, mode: str = "grid") -> Kernel:
    """sum of nu rank-one Haar kernels scaled by 1/n: limit centred Gamma(nu)."""
    levels = int(np.ceil(np.log2(max(nu, 1)))) + 1
    if mode == "grid":
        sp = uniform_grid(-1.0, 1.0, 2 ** levels, 1.0, n)
    else:
        bps = np.linspace(-1, 1, 2 ** levels + 1)[1:-1]
        sp = uniform_continuum(-1.0, 1.0, 1.0, breakpoints=bps, per_panel=2, intensity=n)
    return rank_kernel(sp, haar_factors(sp, nu)).scale(1.0 / n)


def non_gamma_kernel(n: float) -> Kernel:
    """(e1 x e1 - e2 x e2) / n with orthonormal mean-zero e1, e2: the middle
    contraction equals e1 x e1 + e2 x e2, which stays at distance 2 from f."""
    sp = uniform_grid(-1.0, 1.0, 4, 1.0, n)
    e = haar_factors(sp, 2)
    return rank_kernel(sp, e, [1.0, -1.0]).scale(1.0 / n)


def paired_cells_kernel(n: float, m: int) -> Kernel:
    """A Normal-regime degenerate kernel: (2/m)^{1/2} / n times the sum over
    m/2 disjoint cell pairs of e_j x e_j with e_j = sqrt(m/2) (1_{A_j} - 1_{B_j}).

    Under n mu the variance is 2 and ||h *_1^1 h|| / sigma^2 = (2m)^{-1/2},
    so letting m grow with n drives the fourth-moment condition to zero.
    """
    if m % 2:
        raise ValueError("m must be even")
    sp = uniform_grid(-1.0, 1.0, m, 1.0, n)
    fs = []
    for j in range(m // 2):
        v = np.zeros(m)
        v[2 * j], v[2 * j + 1] = sqrt(m / 2.0), -sqrt(m / 2.0)
        fs.append(make_factor(sp, values=v))
    return rank_kernel(sp, fs).scale(sqrt(2.0 / m) / n)


def block_order3_kernel(n: float, m: int) -> Kernel:
    """Order-3 Normal-leg kernel on m cells of the grid over (-1, 1).

    Within each half of the line, the cells are split into consecutive
    triples (a, b, c); each triple contributes the symmetrization of
    e_a x e_b x e_c, where e_j = sqrt(m/2) (1_{cell 2j} - 1_{cell 2j+1}) uses
    two disjoint cells. Every block is orthogonal to sign x sign, and the
    kernel is scaled to unit variance (3! ||f||^2 = 1) under n mu.
    """
    if m % 12:
        raise ValueError("m must be a multiple of 12")
    sp = uniform_grid(-1.0, 1.0, m, 1.0, n)
    fs = []
    for j in range(m // 2):
        v = np.zeros(m)
        v[2 * j], v[2 * j + 1] = sqrt(m / 2.0), -sqrt(m / 2.0)
        fs.append(make_factor(sp, values=v))
    # fs have unit norm under mu; groups of 3 never straddle the half line
    terms = []
    half = m // 4
    for start in (0, half):
        for t in range(start, start + half, 3):
            a, b, c = fs[t], fs[t + 1], fs[t + 2]
            for p in permutations((a, b, c)):
                terms.append((1.0 / 6.0, list(p)))
    blocks = len(terms) // 6
    f = separable_kernel(sp, terms, symmetrize=False)
    # ||sym(a x b x c)||^2 = 1/6 under mu, so 3! ||f||^2 = blocks / n^3
    return f.scale(1.0 / sqrt(blocks * n ** 3))


BUILTIN_MOMENT_KERNELS = ("sign", "haar2", "random")


def moment_kernel(name: str, n: float = 1.0, seed: int = 7) -> Kernel:
    """Small order-2 kernels used by the moment-oracle tests."""
    if name == "sign":
        return gamma_ustat_kernel(n, "grid")
    if name == "haar2":
        return haar_gamma_kernel(n, 2, "grid")
    if name == "random":
        rng = np.random.default_rng(seed)
        sp = uniform_grid(-1.0, 1.0, 5, 1.0, n)
        fs = [make_factor(sp, values=rng.normal(size=5)) for _ in range(3)]
        A = rng.normal(size=(3, 3))
        A = (A + A.T) / 2
        terms = [(A[i, j] / n, [fs[i], fs[j]]) for i in range(3) for j in range(3)]
        return separable_kernel(sp, terms)
    raise ValueError(f"unknown kernel {name!r}")
