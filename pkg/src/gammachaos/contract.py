"""Contraction algebra on kernels: f *_r^l g, symmetrization, norms, inner
products and the product-formula kernels G_p^q f.

Separable inputs stay separable: every integral reduces to the Gram matrix of
the factor pool under mu_n. Any dense input switches to weighted einsum.
Argument order of a contraction result is (identified, rest of f, rest of g).
"""

from __future__ import annotations

import string
from math import factorial, sqrt
from typing import Sequence

import numpy as np

from . import combinatorics as cb
from .space import (
    DenseKernel,
    Kernel,
    SeparableKernel,
    constant_kernel,
    symmetrize_dense,
    symmetrize_separable,
    zero_kernel,
)


def _check_pair(f: Kernel, g: Kernel, same_order: bool = True):
    if same_order and f.order != g.order:
        raise ValueError(f"order mismatch: {f.order} vs {g.order}")
    if not f.space.same_measure(g.space):
        raise ValueError("kernels live on different measure spaces")


class _Pool:
    """Growing union of factor pools; rows keyed by sorted primitive uids."""

    def __init__(self, space):
        self.space = space
        self.prims: dict = {}
        self.keys: list[tuple] = []
        self.rows: list[np.ndarray] = []
        self.pos: dict[tuple, int] = {}

    def add(self, key: tuple, values: np.ndarray) -> int:
        i = self.pos.get(key)
        if i is None:
            i = len(self.keys)
            self.pos[key] = i
            self.keys.append(key)
            self.rows.append(values)
        return i

    def absorb(self, k: SeparableKernel) -> np.ndarray:
        self.prims.update(k.prims)
        return np.array([self.add(key, row) for key, row in zip(k.keys, k.basis)], dtype=np.int64)

    def product(self, i: int, j: int) -> int:
        key = tuple(sorted(self.keys[i] + self.keys[j]))
        if key in self.pos:
            return self.pos[key]
        return self.add(key, self.rows[i] * self.rows[j])

    def basis(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, self.space.n_nodes))
        return np.vstack(self.rows)

    def build(self, order: int, coefs, index) -> SeparableKernel:
        return SeparableKernel(self.space, order, coefs, index, self.keys, self.basis(), self.prims)


def gram(basis: np.ndarray, space) -> np.ndarray:
    return (basis * space.weights_n) @ basis.T


# --------------------------------------------------------------------------
# contraction


def _letters(n: int, start: int = 0) -> str:
    return string.ascii_letters[start:start + n]


def _dense_contract(F: np.ndarray, G: np.ndarray, w: np.ndarray, r: int, l: int) -> np.ndarray:
    q = F.ndim
    z = _letters(l)
    g = _letters(r - l, l)
    t = _letters(q - r, r)
    s = _letters(q - r, r + (q - r))
    spec = [z + g + t, z + g + s] + list(z)
    out = g + t + s
    ops = [F, G] + [w] * l
    return np.einsum(",".join(spec) + "->" + out, *ops, optimize=True)


def contract(f: Kernel, g: Kernel, r: int, l: int) -> Kernel:
    """Un-symmetrized contraction f *_r^l g of two symmetric kernels of order q.

    r arguments are identified and l of them integrated against mu_n.
    """
    _check_pair(f, g)
    q = f.order
    if not (0 <= l <= r <= q):
        raise ValueError(f"need 0 <= l <= r <= q, got r={r}, l={l}, q={q}")
    if not (f.symmetric and g.symmetric):
        raise ValueError("contractions require symmetric kernels; symmetrize first")
    if isinstance(f, DenseKernel) or isinstance(g, DenseKernel):
        F, G = f.to_dense().tensor, g.to_dense().tensor
        return DenseKernel(f.space, _dense_contract(F, G, f.space.weights_n, r, l))
    order = 2 * q - r - l
    if f.n_terms == 0 or g.n_terms == 0:
        return zero_kernel(f.space, order)
    pool = _Pool(f.space)
    mf, mg = pool.absorb(f), pool.absorb(g)
    I, J = mf[f.index], mg[g.index]
    S, T = len(I), len(J)
    coef = np.outer(f.coefs, g.coefs)
    if l:
        Gm = gram(pool.basis(), f.space)
        for k in range(l):
            coef = coef * Gm[I[:, k][:, None], J[:, k][None, :]]
    cols = []
    for k in range(l, r):
        a = np.broadcast_to(I[:, k][:, None], (S, T)).ravel()
        b = np.broadcast_to(J[:, k][None, :], (S, T)).ravel()
        pairs, inv = np.unique(np.stack([np.minimum(a, b), np.maximum(a, b)], 1), axis=0,
                               return_inverse=True)
        rows = np.array([pool.product(int(i), int(j)) for i, j in pairs], dtype=np.int64)
        cols.append(rows[inv.ravel()])
    cols.append(np.repeat(I[:, r:], T, axis=0))
    cols.append(np.tile(J[:, r:], (S, 1)))
    index = np.concatenate([c.reshape(S * T, -1) for c in cols], axis=1)
    return pool.build(order, coef.ravel(), index)


def symmetrize(f: Kernel) -> Kernel:
    if isinstance(f, DenseKernel):
        return symmetrize_dense(f)
    return symmetrize_separable(f)


def sym_contract(f: Kernel, g: Kernel, r: int, l: int) -> Kernel:
    return symmetrize(contract(f, g, r, l))


# --------------------------------------------------------------------------
# norms


def _dense_inner(F: np.ndarray, G: np.ndarray, w: np.ndarray) -> float:
    t = F * G
    for _ in range(t.ndim):
        t = t @ w
    return float(t)


def inner(f: Kernel, g: Kernel) -> float:
    """integral of f * g against mu_n^q."""
    _check_pair(f, g)
    if f.order == 0:
        return f.scalar() * g.scalar()
    if isinstance(f, DenseKernel) or isinstance(g, DenseKernel):
        return _dense_inner(f.to_dense().tensor, g.to_dense().tensor, f.space.weights_n)
    if f.n_terms == 0 or g.n_terms == 0:
        return 0.0
    pool = _Pool(f.space)
    mf, mg = pool.absorb(f), pool.absorb(g)
    Gm = gram(pool.basis(), f.space)
    I, J = mf[f.index], mg[g.index]
    total = 0.0
    # block over f's terms to bound memory
    step = max(1, 4_000_000 // max(1, len(J)))
    for s0 in range(0, len(I), step):
        Ib = I[s0:s0 + step]
        M = np.ones((len(Ib), len(J)))
        for k in range(f.order):
            M *= Gm[Ib[:, k][:, None], J[:, k][None, :]]
        total += float(f.coefs[s0:s0 + step] @ M @ g.coefs)
    return total


def norm2(f: Kernel) -> float:
    return max(inner(f, f), 0.0)


def norm(f: Kernel) -> float:
    return sqrt(norm2(f))


def contraction_norm(f: Kernel, r: int, l: int, symmetrized: bool = False) -> float:
    k = contract(f, f, r, l)
    return norm(symmetrize(k) if symmetrized else k)


def integral(f: Kernel) -> float:
    """integral of f against mu_n^q."""
    return f.integrate_tail(f.order).scalar()


def power_integral(f: Kernel, m: int) -> float:
    """integral of f^m against mu_n^q (pointwise power of the stored function)."""
    if isinstance(f, DenseKernel):
        return _dense_inner(f.tensor ** (m - 1), f.tensor, f.space.weights_n)
    return integral(pointwise_power(f, m))


def pointwise_product(f: Kernel, g: Kernel) -> Kernel:
    """(f * g)(x) = f(x) g(x) for kernels of equal order."""
    _check_pair(f, g)
    if isinstance(f, DenseKernel) or isinstance(g, DenseKernel):
        return DenseKernel(f.space, f.to_dense().tensor * g.to_dense().tensor)
    q = f.order
    if f.n_terms == 0 or g.n_terms == 0:
        return zero_kernel(f.space, q)
    pool = _Pool(f.space)
    mf, mg = pool.absorb(f), pool.absorb(g)
    I, J = mf[f.index], mg[g.index]
    S, T = len(I), len(J)
    cols = []
    for k in range(q):
        a = np.broadcast_to(I[:, k][:, None], (S, T)).ravel()
        b = np.broadcast_to(J[:, k][None, :], (S, T)).ravel()
        pairs, inv = np.unique(np.stack([np.minimum(a, b), np.maximum(a, b)], 1), axis=0,
                               return_inverse=True)
        rows = np.array([pool.product(int(i), int(j)) for i, j in pairs], dtype=np.int64)
        cols.append(rows[inv.ravel()])
    index = np.stack(cols, 1) if cols else np.zeros((S * T, 0), np.int64)
    return pool.build(q, np.outer(f.coefs, g.coefs).ravel(), index)


def pointwise_power(f: Kernel, m: int) -> Kernel:
    out = f
    for _ in range(m - 1):
        out = pointwise_product(out, f)
    return out


# --------------------------------------------------------------------------
# linear combinations and product-formula kernels


def combine(items: Sequence[tuple[float, Kernel]]) -> Kernel:
    """sum of c * kernel over kernels of one order on one space."""
    if not items:
        raise ValueError("nothing to combine")
    k0 = items[0][1]
    for _, k in items[1:]:
        _check_pair(k0, k)
    if any(isinstance(k, DenseKernel) for _, k in items):
        return DenseKernel(k0.space, sum(c * k.to_dense().tensor for c, k in items))
    pool = _Pool(k0.space)
    coefs, index = [], []
    for c, k in items:
        m = pool.absorb(k)
        coefs.append(c * k.coefs)
        index.append(m[k.index].reshape(k.n_terms, k0.order))
    return pool.build(k0.order, np.concatenate(coefs), np.concatenate(index, axis=0))


def product_kernel(f: Kernel, p: int) -> Kernel:
    """G_p^q f; for p = 0 an order-0 kernel holding q! ||f||^2."""
    q = f.order
    if not 0 <= p <= 2 * q:
        raise ValueError(f"p must lie in [0, {2 * q}], got {p}")
    if p == 0:
        return constant_kernel(f.space, factorial(q) * norm2(f))
    items = [(float(c), sym_contract(f, f, r, l)) for r, l, c in cb.product_formula_terms(q, p)]
    return combine(items)


def c_q_constant(q: int) -> float:
    return cb.c_q(q)


def middle_contraction_defect(f: Kernel) -> float:
    q = f.order
    c = cb.c_q(q)
    m = sym_contract(f, f, q // 2, q // 2)
    return norm(combine([(1.0, m), (-c, f)]))
