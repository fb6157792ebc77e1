"""Finite control measures mu_n = n * mu and the two kernel representations.

Grid mode: a finite set of atoms with quadrature weights. The atoms are read as
cells of a non-atomic measure, so kernels are piecewise constant on cells and
pathwise sums only ever run over distinct points (a Poisson count of k at one
atom means k distinct points in that cell).

Continuum mode: a sampler for mu / mu(Z) plus a quadrature rule used to
integrate callable factors. Quadrature is exact for the piecewise polynomial
factors used by the built-in experiments when panel breakpoints match.

A Kernel stores a function of q variables exactly as given; the `symmetric`
flag records whether that stored function is already symmetric. Point
evaluation always returns the value of the symmetrized function.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from math import factorial
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

ORDER_CAP = 6
PRUNE_REL = 1e-14
SYM_TOL = 1e-12


class Mode(str, Enum):
    GRID = "grid"
    CONTINUUM = "continuum"


Sampler = Callable[[np.random.Generator, int], np.ndarray]


def _as_nodes(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError("points must be a list of coordinates")
    return arr


@dataclass(frozen=True, eq=False)
class MeasureSpace:
    """Control measure mu_n = intensity * mu.

    `nodes`/`weights` are the atoms (grid mode) or the quadrature rule
    (continuum mode) for the base measure mu.
    """

    mode: Mode
    nodes: np.ndarray
    weights: np.ndarray
    base_mass: float
    intensity: float = 1.0
    sampler: Sampler | None = None
    _key: object = field(default=None, repr=False)

    def __post_init__(self):
        if not self.intensity > 0:
            raise ValueError(f"intensity must be positive, got {self.intensity}")
        if not self.base_mass > 0:
            raise ValueError("base_mass must be positive")
        if self._key is None:
            object.__setattr__(self, "_key", object())
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def weights_n(self) -> np.ndarray:
        """Quadrature weights of mu_n."""
        return self.intensity * self.weights

    @property
    def mass_n(self) -> float:
        return self.intensity * self.base_mass

    def with_intensity(self, n: float) -> "MeasureSpace":
        return MeasureSpace(self.mode, self.nodes, self.weights, self.base_mass,
                            float(n), self.sampler, self._key)

    def same_base(self, other: "MeasureSpace") -> bool:
        return self._key is other._key

    def same_measure(self, other: "MeasureSpace") -> bool:
        return self._key is other._key and self.intensity == other.intensity

    def coords(self, x) -> np.ndarray:
        """Normalize one coordinate or a batch of coordinates to shape (N, d)."""
        arr = np.asarray(x, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1) if self.dim == 1 else arr.reshape(1, -1)
        if arr.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim}-dimensional coordinates")
        return arr

    def atom_index(self, x) -> np.ndarray:
        """Index of the atom at each coordinate; raises for non-atoms."""
        if self.mode is not Mode.GRID:
            raise ValueError("atom lookup requires a grid space")
        pts = self.coords(x)
        lut = self._lut()
        out = np.empty(len(pts), dtype=np.int64)
        for i, p in enumerate(pts):
            j = lut.get(p.tobytes())
            if j is None:
                raise ValueError(f"{p.tolist()} is not an atom of the grid")
            out[i] = j
        return out

    def _lut(self) -> dict:
        lut = self.__dict__.get("_lut_cache")
        if lut is None:
            lut = {row.tobytes(): i for i, row in enumerate(np.ascontiguousarray(self.nodes))}
            object.__setattr__(self, "_lut_cache", lut)
        return lut


def make_grid_space(points, weights, intensity: float = 1.0) -> MeasureSpace:
    nodes = _as_nodes(points)
    w = np.asarray(weights, dtype=float).ravel()
    if len(nodes) == 0:
        raise ValueError("empty atom list")
    if len(w) != len(nodes):
        raise ValueError("points and weights differ in length")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if not np.any(w > 0):
        raise ValueError("at least one weight must be positive")
    if not intensity > 0:
        raise ValueError(f"intensity must be positive, got {intensity}")
    return MeasureSpace(Mode.GRID, nodes.copy(), w.copy(), float(w.sum()), float(intensity))


def make_continuum_space(sampler: Sampler, nodes, weights, intensity: float = 1.0,
                         base_mass: float | None = None) -> MeasureSpace:
    """Continuum space from a sampler of mu / mu(Z) and a quadrature rule for mu."""
    nodes = _as_nodes(nodes)
    w = np.asarray(weights, dtype=float).ravel()
    if len(w) != len(nodes) or len(w) == 0:
        raise ValueError("quadrature nodes and weights differ in length")
    mass = float(w.sum()) if base_mass is None else float(base_mass)
    if abs(mass - w.sum()) > 1e-12 * mass:
        raise ValueError("quadrature weights do not sum to the base mass")
    return MeasureSpace(Mode.CONTINUUM, nodes.copy(), w.copy(), mass, float(intensity), sampler)


def uniform_grid(a: float, b: float, cells: int, mass: float = 1.0,
                 intensity: float = 1.0) -> MeasureSpace:
    """Cell midpoints of (a, b), each cell carrying mass / cells."""
    edges = np.linspace(a, b, cells + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    return make_grid_space(mid, np.full(cells, mass / cells), intensity)


def gauss_legendre_panels(edges: Sequence[float], per_panel: int = 8):
    x, w = np.polynomial.legendre.leggauss(per_panel)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(lo + half * (x + 1))
        weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)


def uniform_continuum(a: float, b: float, mass: float = 1.0, breakpoints: Iterable[float] = (),
                      per_panel: int = 8, intensity: float = 1.0) -> MeasureSpace:
    """mass * Uniform(a, b), with Gauss-Legendre panels split at `breakpoints`."""
    edges = sorted({a, b, *[float(t) for t in breakpoints if a < t < b]})
    x, w = gauss_legendre_panels(edges, per_panel)
    w = w * (mass / (b - a))

    def sampler(rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(a, b, size=(size, 1))

    return make_continuum_space(sampler, x, w, intensity, base_mass=mass)


# --------------------------------------------------------------------------
# factors


_uid = itertools.count(1)


@dataclass(frozen=True, eq=False)
class Factor:
    """A one-variable function: its values at the space nodes and, optionally,
    a vectorized closed form taking an (N, d) coordinate array."""

    values: np.ndarray
    func: Callable[[np.ndarray], np.ndarray] | None
    uid: int
    name: str = ""


def make_factor(space: MeasureSpace, func=None, values=None, name: str = "") -> Factor:
    if values is None:
        if func is None:
            raise ValueError("a factor needs a callable or a grid vector")
        values = np.asarray(func(space.nodes), dtype=float).ravel()
    else:
        values = np.asarray(values, dtype=float).ravel().copy()
        if values.shape != (space.n_nodes,):
            raise ValueError("grid vector length differs from the number of nodes")
    if space.mode is Mode.CONTINUUM and func is None:
        raise ValueError("continuum factors need a closed form")
    values.setflags(write=False)
    return Factor(values, func, next(_uid), name)


# --------------------------------------------------------------------------
# kernels


class Kernel:
    order: int
    space: MeasureSpace
    symmetric: bool

    @property
    def kind(self) -> str:
        raise NotImplementedError

    def __float__(self) -> float:
        if self.order != 0:
            raise TypeError("only order-0 kernels convert to float")
        return self.scalar()

    def __call__(self, *args) -> float:
        return eval_kernel(self, args)


class SeparableKernel(Kernel):
    """sum_t coefs[t] * prod_k row[index[t,k]](x_k).

    Each basis row is a product of primitive factors, identified by the sorted
    tuple of their uids, so equal products share one row and merge exactly.
    """

    def __init__(self, space: MeasureSpace, order: int, coefs, index, keys, basis,
                 prims: Mapping[int, Factor], _canonical: bool = True):
        self.space = space
        self.order = int(order)
        coefs = np.asarray(coefs, dtype=float).ravel()
        index = np.asarray(index, dtype=np.int64).reshape(len(coefs), self.order)
        basis = np.asarray(basis, dtype=float).reshape(len(keys), space.n_nodes)
        self.prims = dict(prims)
        if _canonical:
            coefs, index, keys, basis = _canonicalize(coefs, index, list(keys), basis)
        self.coefs, self.index, self.keys, self.basis = coefs, index, tuple(keys), basis
        self.symmetric = _rep_symmetric(coefs, index)

    @property
    def kind(self) -> str:
        return "separable"

    @property
    def n_terms(self) -> int:
        return len(self.coefs)

    def scalar(self) -> float:
        return float(self.coefs.sum()) if self.order == 0 else float("nan")

    def scale(self, c: float) -> "SeparableKernel":
        return SeparableKernel(self.space, self.order, c * self.coefs, self.index,
                               self.keys, self.basis, self.prims)

    def with_space(self, space: MeasureSpace) -> "SeparableKernel":
        if not space.same_base(self.space):
            raise ValueError("kernels can only move between intensities of one base measure")
        k = SeparableKernel.__new__(SeparableKernel)
        k.__dict__.update(self.__dict__)
        k.space = space
        return k

    def row_values_at(self, pts: np.ndarray) -> np.ndarray:
        """(F, N) values of every basis row at coordinates pts (N, d)."""
        out = np.ones((len(self.keys), len(pts)))
        cache: dict[int, np.ndarray] = {}
        for i, key in enumerate(self.keys):
            for u in key:
                if u not in cache:
                    cache[u] = _prim_at(self.prims[u], self.space, pts)
                out[i] *= cache[u]
        return out

    def fix_first_values(self, vals: np.ndarray) -> "SeparableKernel":
        """f(z, .) given the row values at z (length F)."""
        if self.order == 0:
            raise ValueError("cannot fix an argument of an order-0 kernel")
        coefs = self.coefs * vals[self.index[:, 0]]
        return SeparableKernel(self.space, self.order - 1, coefs, self.index[:, 1:],
                               self.keys, self.basis, self.prims)

    def fix_first_node(self, a: int) -> "SeparableKernel":
        return self.fix_first_values(self.basis[:, a])

    def fix_first(self, x) -> "SeparableKernel":
        pts = self.space.coords(x)
        return self.fix_first_values(self.row_values_at(pts)[:, 0])

    def row_integrals(self) -> np.ndarray:
        """integral of each basis row against mu_n."""
        return self.basis @ self.space.weights_n

    def integrate_tail(self, m: int) -> "SeparableKernel":
        """Integrate the last m arguments against mu_n."""
        if m == 0:
            return self
        ints = self.row_integrals()
        coefs = self.coefs * np.prod(ints[self.index[:, self.order - m:]], axis=1)
        return SeparableKernel(self.space, self.order - m, coefs,
                               self.index[:, :self.order - m], self.keys, self.basis, self.prims)

    def to_dense(self) -> "DenseKernel":
        if self.space.mode is not Mode.GRID:
            raise ValueError("dense conversion requires a grid space")
        A = self.space.n_nodes
        t = np.zeros((A,) * self.order)
        for c, idx in zip(self.coefs, self.index):
            term = np.array(c)
            for j in idx:
                term = np.multiply.outer(term, self.basis[j])
            t = t + term
        return DenseKernel(self.space, t)


class DenseKernel(Kernel):
    """q-dimensional array indexed by grid atoms."""

    def __init__(self, space: MeasureSpace, tensor):
        if space.mode is not Mode.GRID:
            raise ValueError("dense kernels require a grid space")
        t = np.asarray(tensor, dtype=float)
        if any(s != space.n_nodes for s in t.shape):
            raise ValueError("tensor shape does not match the grid")
        self.space = space
        self.order = t.ndim
        self.tensor = t
        self.symmetric = _dense_symmetric(t)

    @property
    def kind(self) -> str:
        return "dense"

    def scalar(self) -> float:
        return float(self.tensor) if self.order == 0 else float("nan")

    def scale(self, c: float) -> "DenseKernel":
        return DenseKernel(self.space, c * self.tensor)

    def with_space(self, space: MeasureSpace) -> "DenseKernel":
        if not space.same_base(self.space):
            raise ValueError("kernels can only move between intensities of one base measure")
        return DenseKernel(space, self.tensor)

    def fix_first_node(self, a: int) -> "DenseKernel":
        return DenseKernel(self.space, self.tensor[a])

    def fix_first(self, x) -> "DenseKernel":
        return self.fix_first_node(int(self.space.atom_index(x)[0]))

    def integrate_tail(self, m: int) -> "DenseKernel":
        t = self.tensor
        w = self.space.weights_n
        for _ in range(m):
            t = t @ w
        return DenseKernel(self.space, t)

    def to_dense(self) -> "DenseKernel":
        return self


def _prim_at(f: Factor, space: MeasureSpace, pts: np.ndarray) -> np.ndarray:
    if f.func is not None:
        return np.asarray(f.func(pts), dtype=float).reshape(len(pts))
    return f.values[space.atom_index(pts)]


def _unique_rows(index: np.ndarray):
    """np.unique(index, axis=0, return_inverse=True), via integer row codes
    when they fit in 63 bits."""
    T, q = index.shape
    base = int(index.max()) + 1 if index.size else 1
    if q == 0:
        return index[:1], np.zeros(T, dtype=np.int64)
    if base ** q >= 2 ** 62:
        uniq, inv = np.unique(index, axis=0, return_inverse=True)
        return uniq.reshape(-1, q), inv.ravel()
    codes = np.zeros(T, dtype=np.int64)
    for k in range(q):
        codes = codes * base + index[:, k]
    ucodes, first, inv = np.unique(codes, return_index=True, return_inverse=True)
    return index[first], inv.ravel()


def _canonicalize(coefs, index, keys, basis):
    # one row per key; rows vanishing on every node carry no mass and are dropped
    first: dict[tuple, int] = {}
    remap = np.empty(len(keys), dtype=np.int64)
    for i, k in enumerate(keys):
        remap[i] = first.setdefault(k, i)
    if len(first) != len(keys):
        index = remap[index]
    if len(index) and basis.size:
        dead = ~np.any(basis != 0, axis=1)
        if dead.any():
            alive = ~np.any(dead[index], axis=1)
            coefs, index = coefs[alive], index[alive]
    T = len(coefs)
    if T:
        uniq, inv = _unique_rows(index)
        merged = np.zeros(len(uniq))
        np.add.at(merged, inv, coefs)
        index, coefs = uniq.reshape(len(uniq), index.shape[1]), merged
        big = np.max(np.abs(coefs)) if len(coefs) else 0.0
        keep = np.abs(coefs) >= PRUNE_REL * big if big > 0 else np.zeros(len(coefs), bool)
        coefs, index = coefs[keep], index[keep]
    used = np.unique(index) if index.size else np.zeros(0, np.int64)
    if len(used) != len(keys):
        remap = -np.ones(len(keys), dtype=np.int64)
        remap[used] = np.arange(len(used))
        index = remap[index]
        keys = [keys[i] for i in used]
        basis = basis[used]
    return coefs, index, keys, basis


def _rep_symmetric(coefs, index) -> bool:
    """Exact symmetry of the stored sum: invariance of the canonical term
    table under every adjacent transposition of argument slots."""
    q = index.shape[1]
    if q <= 1 or len(coefs) == 0:
        return True
    scale = np.max(np.abs(coefs))
    order = np.lexsort(index.T[::-1])
    index, coefs = index[order], coefs[order]
    for i in range(q - 1):
        perm = list(range(q))
        perm[i], perm[i + 1] = perm[i + 1], perm[i]
        uniq, inv = _unique_rows(index[:, perm])
        if len(uniq) != len(index) or not np.array_equal(uniq, index):
            return False
        moved = np.zeros(len(uniq))
        np.add.at(moved, inv, coefs)
        if np.max(np.abs(moved - coefs)) > SYM_TOL * scale:
            return False
    return True


def _dense_symmetric(t: np.ndarray) -> bool:
    if t.ndim <= 1:
        return True
    scale = 1.0 + np.max(np.abs(t))
    for i in range(t.ndim - 1):
        axes = list(range(t.ndim))
        axes[i], axes[i + 1] = axes[i + 1], axes[i]
        if np.max(np.abs(t - t.transpose(axes))) > SYM_TOL * scale:
            return False
    return True


# --------------------------------------------------------------------------
# construction helpers


def pool_of(factors: Sequence[Factor]) -> tuple[dict, list, np.ndarray]:
    prims = {f.uid: f for f in factors}
    keys = [(f.uid,) for f in factors]
    basis = np.array([f.values for f in factors]) if factors else np.zeros((0, 0))
    return prims, keys, basis


def separable_kernel(space: MeasureSpace, terms: Sequence[tuple[float, Sequence[Factor]]],
                     symmetrize: bool = True) -> SeparableKernel:
    """Kernel from (coefficient, factors) terms; by default the symmetrization
    of sum c * g_1 (x) ... (x) g_q."""
    if not terms:
        raise ValueError("at least one term is required; use zero_kernel for 0")
    q = len(terms[0][1])
    if any(len(fs) != q for _, fs in terms):
        raise ValueError("all terms must have the same number of factors")
    if q > ORDER_CAP:
        raise ValueError(f"order {q} exceeds the cap {ORDER_CAP}")
    uniq: dict[int, Factor] = {}
    for _, fs in terms:
        for f in fs:
            uniq.setdefault(f.uid, f)
    facs = list(uniq.values())
    pos = {f.uid: i for i, f in enumerate(facs)}
    prims, keys, basis = pool_of(facs)
    coefs = [float(c) for c, _ in terms]
    index = np.array([[pos[f.uid] for f in fs] for _, fs in terms], dtype=np.int64).reshape(len(terms), q)
    k = SeparableKernel(space, q, coefs, index, keys, basis.reshape(len(keys), space.n_nodes), prims)
    if symmetrize and not k.symmetric:
        k = symmetrize_separable(k)
    return k


def rank_kernel(space: MeasureSpace, factors: Sequence[Factor], coefs: Sequence[float] | None = None,
                order: int = 2) -> SeparableKernel:
    """sum_i c_i e_i^{(x) order}."""
    coefs = [1.0] * len(factors) if coefs is None else coefs
    return separable_kernel(space, [(c, [e] * order) for c, e in zip(coefs, factors)])


def zero_kernel(space: MeasureSpace, order: int) -> SeparableKernel:
    return SeparableKernel(space, order, np.zeros(0), np.zeros((0, order), np.int64), [],
                           np.zeros((0, space.n_nodes)), {})


def constant_kernel(space: MeasureSpace, value: float) -> SeparableKernel:
    return SeparableKernel(space, 0, [value], np.zeros((1, 0), np.int64), [],
                           np.zeros((0, space.n_nodes)), {})


def dense_kernel(space: MeasureSpace, tensor, symmetrize: bool = False) -> DenseKernel:
    k = DenseKernel(space, tensor)
    if symmetrize and not k.symmetric:
        k = symmetrize_dense(k)
    return k


def symmetrize_separable(f: SeparableKernel) -> SeparableKernel:
    q = f.order
    if q <= 1 or f.symmetric:
        return f
    perms = list(itertools.permutations(range(q)))
    index = np.concatenate([f.index[:, p] for p in perms], axis=0)
    coefs = np.tile(f.coefs, len(perms)) / factorial(q)
    return SeparableKernel(f.space, q, coefs, index, f.keys, f.basis, f.prims)


def symmetrize_dense(f: DenseKernel) -> DenseKernel:
    q = f.order
    if q <= 1:
        return f
    acc = np.zeros_like(f.tensor)
    for p in itertools.permutations(range(q)):
        acc += f.tensor.transpose(p)
    return DenseKernel(f.space, acc / factorial(q))


# --------------------------------------------------------------------------
# evaluation


def _raw_eval(f: Kernel, pts: np.ndarray) -> float:
    if isinstance(f, DenseKernel):
        idx = f.space.atom_index(pts)
        return float(f.tensor[tuple(idx)])
    if f.order == 0:
        return f.scalar()
    vals = f.row_values_at(pts)  # (F, q)
    prod = np.ones(f.n_terms)
    for k in range(f.order):
        prod *= vals[f.index[:, k], k]
    return float(f.coefs @ prod)


def eval_kernel(f: Kernel, args) -> float:
    """Value of the symmetrized kernel at q coordinates."""
    args = list(args)
    if len(args) != f.order:
        raise ValueError(f"kernel of order {f.order} got {len(args)} arguments")
    if f.order == 0:
        return f.scalar()
    if isinstance(f, SeparableKernel) and f.space.mode is Mode.CONTINUUM:
        if any(f.prims[u].func is None for key in f.keys for u in key):
            raise ValueError("continuum evaluation needs callable factors")
    pts = np.vstack([f.space.coords(a) for a in args])
    if f.symmetric:
        return _raw_eval(f, pts)
    perms = list(itertools.permutations(range(f.order)))
    return sum(_raw_eval(f, pts[list(p)]) for p in perms) / len(perms)


# --------------------------------------------------------------------------


@dataclass
class ChaosExpansion:
    """F = constant + sum_p I_p(components[p])."""

    constant: float
    components: dict[int, Kernel]
    space: MeasureSpace

    def __post_init__(self):
        for p, k in self.components.items():
            if k.order != p:
                raise ValueError(f"component {p} has order {k.order}")
            if not k.space.same_measure(self.space):
                raise ValueError("all components must live on the same space")

    def norm2(self) -> float:
        from .contract import norm2

        total = self.constant ** 2
        for p, k in self.components.items():
            total += factorial(p) * norm2(k)
        return total

    def is_zero(self, tol: float = 0.0) -> bool:
        return self.norm2() <= tol
