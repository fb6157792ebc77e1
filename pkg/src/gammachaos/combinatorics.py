"""Shared factorial/binomial tables and the coefficient generators used by the
contraction algebra, the carre expansion and the bound formulas.

Every combinatorial constant in the package is produced here so that the
transcription risk sits in one small, unit-tested place.
"""

from __future__ import annotations

from functools import lru_cache
from math import comb, factorial, sqrt
from typing import Iterator


def fact(k: int) -> int:
    return factorial(k)


def binom(n: int, k: int) -> int:
    if k < 0 or k > n or n < 0:
        return 0
    return comb(n, k)


def product_formula_terms(q: int, p: int) -> list[tuple[int, int, int]]:
    """(r, l, coefficient) with 2q - r - l = p in the kernel G_p^q f.

    The coefficient is r! C(q,r)^2 C(r,l).
    """
    out = []
    for r in range(q + 1):
        for l in range(r + 1):
            if 2 * q - r - l == p:
                out.append((r, l, fact(r) * binom(q, r) ** 2 * binom(r, l)))
    return out


def carre_terms(q: int, p: int) -> list[tuple[int, int, int]]:
    """(t, s, coefficient) for the order-p kernel of the carre du champ.

    Integrating the product formula for I_{q-1}(f(z,.))^2 over z turns every
    contraction f(z,.) *_r^l f(z,.) into f *_{r+1}^{l+1} f, so with t = r+1,
    s = l+1 the coefficient is (t-1)! C(q-1,t-1)^2 C(t-1,s-1) and the order is
    2q - t - s.
    """
    out = []
    for t in range(1, q + 1):
        for s in range(1, min(t, q - 1) + 1):
            if 2 * q - t - s == p:
                out.append((t, s, fact(t - 1) * binom(q - 1, t - 1) ** 2 * binom(t - 1, s - 1)))
    return out


def third_moment_terms(q: int) -> list[tuple[int, int]]:
    """(p, coefficient) with E[I_q(f)^3] = sum coef * <f ~*_p^{q-p} f, f>.

    Coefficient p! C(q,p)^2 C(p,q-p) q!, for q/2 <= p <= q.
    """
    out = []
    for p in range((q + 1) // 2, q + 1):
        c = fact(p) * binom(q, p) ** 2 * binom(p, q - p) * fact(q)
        if c:
            out.append((p, c))
    return out


def a4_terms(q: int) -> list[tuple[int, int, float]]:
    """(r, l, coefficient) of the contraction-norm bound on the fourth-power
    derivative term; the overall factor q^2 is included.

    Coefficient sqrt((r+l-1)!) (q-l-1)! C(q-1,q-1-l)^2 C(q-1-l,q-r), summed over
    1 <= r <= q, 0 <= l <= r-1.
    """
    out = []
    for r in range(1, q + 1):
        for l in range(0, r):
            if not 1 <= r + l <= 2 * q - 1:
                continue
            c = (
                sqrt(fact(r + l - 1))
                * fact(q - l - 1)
                * binom(q - 1, q - 1 - l) ** 2
                * binom(q - 1 - l, q - r)
            )
            if c:
                out.append((r, l, q * q * c))
    return out


def c_q(q: int) -> float:
    if q < 2 or q % 2:
        raise ValueError(f"c_q is defined for even q >= 2, got {q}")
    h = q // 2
    return 4.0 / (fact(h) * binom(q, h) ** 2)


@lru_cache(maxsize=None)
def set_partitions(k: int) -> tuple[tuple[tuple[int, ...], ...], ...]:
    """All set partitions of {0..k-1}, blocks as sorted tuples."""
    if k == 0:
        return ((),)
    out = []
    for part in set_partitions(k - 1):
        # put k-1 into an existing block or a new one
        for i in range(len(part)):
            blocks = list(part)
            blocks[i] = blocks[i] + (k - 1,)
            out.append(tuple(blocks))
        out.append(part + ((k - 1,),))
    return tuple(out)


@lru_cache(maxsize=None)
def mobius_weights(k: int) -> tuple[tuple[tuple[tuple[int, ...], ...], int], ...]:
    """(partition, weight) pairs with weight prod_B (-1)^(|B|-1) (|B|-1)!.

    Summing weight * prod_B P_B over partitions, with P_B the power sum of the
    pointwise product of the factors in B, gives the sum over distinct tuples.
    """
    out = []
    for part in set_partitions(k):
        w = 1
        for b in part:
            w *= (-1) ** (len(b) - 1) * fact(len(b) - 1)
        out.append((part, w))
    return tuple(out)


def index_pairs(q: int) -> Iterator[tuple[int, int]]:
    for r in range(q + 1):
        for l in range(r + 1):
            yield r, l
