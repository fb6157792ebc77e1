"""Poisson configurations and pathwise functionals.

Multiple integrals are evaluated per configuration by inclusion-exclusion over
U-statistics of partially integrated kernels; sums over distinct tuples use
Moebius inversion on set partitions, so every value is exact (no
discretization of the stochastic integral). Everything is batched over
replications: a grid batch is a (R, atoms) count matrix, a continuum batch is
a flat point array with replication labels.
"""

from __future__ import annotations

import itertools
import string
import warnings
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb, sqrt
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from . import combinatorics as cb
from .contract import norm
from .space import (
    ORDER_CAP,
    ChaosExpansion,
    DenseKernel,
    Kernel,
    MeasureSpace,
    Mode,
    SeparableKernel,
    eval_kernel,
)
from .stein_gamma import GammaTarget, NormalTarget, d3_lower_bound, default_dictionary

DEGENERACY_TOL = 1e-10


class DuplicatePointWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# random streams


def stream(seed: int, tag: str, *keys: int) -> np.random.Generator:
    """Generator for (seed, purpose tag, *integer keys).

    The tag is hashed with CRC-32 and, with the keys, becomes the spawn key of
    a SeedSequence seeded by the 64-bit run seed.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(tag.encode()), *map(int, keys)))
    return np.random.Generator(np.random.PCG64(ss))


def run_blocks(fn: Callable[[np.random.Generator, int], object], seed: int, tag: str, key: int,
               reps: int, block: int = 20_000, workers: int = 1) -> list:
    """Split `reps` replications into fixed-size blocks, each with its own
    stream (seed, tag, key, block index). Results come back in block order,
    so they do not depend on the number of workers."""
    sizes = [min(block, reps - s) for s in range(0, reps, block)]
    jobs = [(stream(seed, tag, key, b), m) for b, m in enumerate(sizes)]
    if workers <= 1 or len(jobs) == 1:
        return [fn(g, m) for g, m in jobs]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(lambda job: fn(*job), jobs))


# --------------------------------------------------------------------------
# samples


@dataclass(frozen=True, eq=False)
class PoissonSample:
    points: np.ndarray
    count: int
    space: MeasureSpace
    atoms: np.ndarray | None = None

    def with_point(self, z) -> "PoissonSample":
        """The configuration eta + delta_z."""
        pt = self.space.coords(z)
        atoms = None
        if self.space.mode is Mode.GRID:
            atoms = np.concatenate([self.atoms, self.space.atom_index(pt)])
        return PoissonSample(np.vstack([self.points, pt]), self.count + 1, self.space, atoms)


def sample(space: MeasureSpace, rng: np.random.Generator) -> PoissonSample:
    if space.mode is Mode.GRID:
        counts = rng.poisson(space.weights_n)
        atoms = np.repeat(np.arange(space.n_nodes), counts)
        return PoissonSample(space.nodes[atoms], len(atoms), space, atoms)
    n = rng.poisson(space.mass_n)
    pts = np.asarray(space.sampler(rng, n), dtype=float).reshape(n, space.dim)
    if n > 1 and len(np.unique(pts, axis=0)) < n:
        warnings.warn("continuum sample contains repeated points", DuplicatePointWarning)
    return PoissonSample(pts, n, space)


def sample_from_points(space: MeasureSpace, points) -> PoissonSample:
    pts = space.coords(points) if len(np.atleast_1d(points)) else np.zeros((0, space.dim))
    atoms = space.atom_index(pts) if space.mode is Mode.GRID and len(pts) else (
        np.zeros(0, np.int64) if space.mode is Mode.GRID else None)
    return PoissonSample(pts, len(pts), space, atoms)


@dataclass(eq=False)
class SampleBatch:
    """R configurations. Grid: `counts` (R, atoms). Continuum: `points`
    (M, d) with replication labels `rep` (M,)."""

    space: MeasureSpace
    R: int
    counts: np.ndarray | None = None
    points: np.ndarray | None = None
    rep: np.ndarray | None = None
    _ind: object = field(default=None, repr=False)

    @property
    def totals(self) -> np.ndarray:
        if self.counts is not None:
            return self.counts.sum(axis=1)
        return np.bincount(self.rep, minlength=self.R)

    def indicator(self):
        if self._ind is None:
            M = len(self.rep)
            self._ind = sparse.csr_matrix((np.ones(M), (self.rep, np.arange(M))), shape=(self.R, M))
        return self._ind


def sample_batch(space: MeasureSpace, rng: np.random.Generator, R: int) -> SampleBatch:
    if space.mode is Mode.GRID:
        counts = rng.poisson(space.weights_n, size=(R, space.n_nodes)).astype(float)
        return SampleBatch(space, R, counts=counts)
    ns = rng.poisson(space.mass_n, size=R)
    pts = np.asarray(space.sampler(rng, int(ns.sum())), dtype=float).reshape(-1, space.dim)
    rep = np.repeat(np.arange(R), ns)
    return SampleBatch(space, R, points=pts, rep=rep)


def batch_of(s: PoissonSample) -> SampleBatch:
    if s.space.mode is Mode.GRID:
        counts = np.bincount(s.atoms, minlength=s.space.n_nodes).astype(float)[None, :]
        return SampleBatch(s.space, 1, counts=counts)
    return SampleBatch(s.space, 1, points=s.points, rep=np.zeros(s.count, np.int64))


# --------------------------------------------------------------------------
# sums over distinct tuples


def _row_values(k: SeparableKernel, b: SampleBatch) -> np.ndarray:
    if b.counts is not None:
        return k.basis
    return k.row_values_at(b.points)


def _psum(b: SampleBatch, V: np.ndarray) -> np.ndarray:
    """(R, T) sums over the points of each configuration of the rows of V."""
    if b.counts is not None:
        return b.counts @ V.T
    return np.asarray(b.indicator() @ V.T)


def _ustat_separable(k: SeparableKernel, b: SampleBatch) -> np.ndarray:
    q = k.order
    if q == 0:
        return np.full(b.R, k.scalar())
    if k.n_terms == 0:
        return np.zeros(b.R)
    vals = _row_values(k, b)
    cache: dict[tuple, np.ndarray] = {}

    def block_sum(B: tuple) -> np.ndarray:
        if B not in cache:
            V = np.ones((k.n_terms, vals.shape[1]))
            for j in B:
                V = V * vals[k.index[:, j]]
            cache[B] = _psum(b, V)
        return cache[B]

    total = np.zeros((b.R, k.n_terms))
    for part, w in cb.mobius_weights(q):
        term = np.full((b.R, k.n_terms), float(w))
        for B in part:
            term = term * block_sum(B)
        total += term
    return total @ k.coefs


def _ustat_dense(k: DenseKernel, b: SampleBatch) -> np.ndarray:
    q = k.order
    if q == 0:
        return np.full(b.R, k.scalar())
    if b.counts is None:
        raise ValueError("dense kernels need grid samples")
    total = np.zeros(b.R)
    letters = string.ascii_lowercase
    for part, w in cb.mobius_weights(q):
        lab = [""] * q
        for bi, B in enumerate(part):
            for j in B:
                lab[j] = letters[bi]
        spec = "".join(lab) + "," + ",".join("Z" + letters[bi] for bi in range(len(part))) + "->Z"
        total += w * np.einsum(spec, k.tensor, *([b.counts] * len(part)), optimize=True)
    return total


def ustat_batch(h: Kernel, b: SampleBatch) -> np.ndarray:
    """Sum over ordered distinct k-tuples of h, per configuration.

    For a rank kernel sum_i e_i (x) e_i this is sum_i [(sum e_i)^2 - sum e_i^2],
    the linear-cost identity, which the partition formula reduces to.
    """
    if not h.space.same_base(b.space):
        raise ValueError("kernel and sample live on different spaces")
    if isinstance(h, DenseKernel):
        return _ustat_dense(h, b)
    return _ustat_separable(h, b)


def ustat_eval(h: Kernel, s: PoissonSample) -> float:
    return float(ustat_batch(h, batch_of(s))[0])


def ustat_direct(h: Kernel, s: PoissonSample) -> float:
    """Quadratic-cost oracle: explicit sum over ordered distinct tuples."""
    k = h.order
    total = 0.0
    for tup in itertools.permutations(range(s.count), k):
        total += eval_kernel(h, [s.points[i] for i in tup])
    return total


# --------------------------------------------------------------------------
# multiple integrals


def _symmetric(f: Kernel) -> Kernel:
    if f.symmetric:
        return f
    from .contract import symmetrize

    return symmetrize(f)


def multiple_integral_batch(f: Kernel, b: SampleBatch) -> np.ndarray:
    """I_q(f) per configuration, under the intensity of f's space.

    I_q(f) = sum_i (-1)^(q-i) C(q,i) U_i(f integrated over q-i arguments).
    """
    q = f.order
    if q > ORDER_CAP:
        raise ValueError(f"order {q} exceeds the cap {ORDER_CAP}")
    f = _symmetric(f)
    out = np.zeros(b.R)
    for i in range(q + 1):
        c = (-1) ** (q - i) * comb(q, i)
        out += c * ustat_batch(f.integrate_tail(q - i), b)
    return out


def multiple_integral_eval(f: Kernel, s: PoissonSample) -> float:
    return float(multiple_integral_batch(f, batch_of(s))[0])


def expansion_batch(F: ChaosExpansion, b: SampleBatch) -> np.ndarray:
    out = np.full(b.R, float(F.constant))
    for k in F.components.values():
        out += multiple_integral_batch(k, b)
    return out


def expansion_eval(F: ChaosExpansion, s: PoissonSample) -> float:
    return float(expansion_batch(F, batch_of(s))[0])


def derivative_eval(f: Kernel, s: PoissonSample, z) -> float:
    """D_z I_q(f) = q I_{q-1}(f(z, .))."""
    f = _symmetric(f)
    q = f.order
    if q == 0:
        return 0.0
    return q * multiple_integral_eval(f.fix_first(z), s)


def derivative_field(f: Kernel, b: SampleBatch) -> np.ndarray:
    """(R, nodes) matrix of D_z I_q(f) at every node z of the space."""
    f = _symmetric(f)
    q = f.order
    A = f.space.n_nodes
    out = np.zeros((b.R, A))
    if q == 0:
        return out
    for a in range(A):
        out[:, a] = q * multiple_integral_batch(f.fix_first_node(a), b)
    return out


def second_derivative_field(f: Kernel, b: SampleBatch) -> np.ndarray:
    """(R, nodes, nodes) array of D_{z2} D_{z1} I_q(f) = q(q-1) I_{q-2}(f(z1, z2, .))."""
    f = _symmetric(f)
    q = f.order
    A = f.space.n_nodes
    out = np.zeros((b.R, A, A))
    if q < 2:
        return out
    for a in range(A):
        fa = f.fix_first_node(a)
        for c in range(a, A):
            v = q * (q - 1) * multiple_integral_batch(fa.fix_first_node(c), b)
            out[:, a, c] = v
            out[:, c, a] = v
    return out


def carre_pathwise(f: Kernel, b: SampleBatch) -> np.ndarray:
    """q^{-1} integral of (D_z F)^2 against mu_n, integrated over the nodes."""
    D = derivative_field(f, b)
    return (D * D) @ f.space.weights_n / max(f.order, 1)


# --------------------------------------------------------------------------
# Hoeffding projections


def _base(h: Kernel, space: MeasureSpace | None) -> Kernel:
    sp = (space or h.space).with_intensity(1.0)
    return h.with_space(sp)


def hoeffding_projection(h: Kernel, i: int, space: MeasureSpace | None = None) -> Kernel:
    """h_i = C(k,i) * integral of h(z_1..z_i, .) against mu^(k-i) (base mu)."""
    k = h.order
    if not 1 <= i <= k:
        raise ValueError(f"i must lie in [1, {k}]")
    hb = _base(_symmetric(h), space)
    return hb.integrate_tail(k - i).scale(comb(k, i))


def degeneracy_defect(h: Kernel, space: MeasureSpace | None = None) -> float:
    return norm(hoeffding_projection(h, 1, space))


def hoeffding_rank(h: Kernel, space: MeasureSpace | None = None, tol: float = DEGENERACY_TOL) -> int:
    """Smallest i whose conditional expectation E[h | Y_1..Y_i] is nonzero
    (L2 norm under the sampling law above tol); complete degeneracy gives k."""
    k = h.order
    hb = _base(_symmetric(h), space)
    mass = hb.space.base_mass
    for i in range(1, k + 1):
        cond = hb.integrate_tail(k - i).scale(mass ** (-(k - i)))
        if norm(cond) / sqrt(mass ** i) > tol:
            return i
    return k


# --------------------------------------------------------------------------
# disk graphs


PATTERNS = ("edge", "triangle", "path")


def _pairs(points: np.ndarray, radius: float) -> np.ndarray:
    if len(points) < 2:
        return np.zeros((0, 2), np.int64)
    tree = cKDTree(points)
    pr = tree.query_pairs(radius, output_type="ndarray")
    if len(pr) == 0:
        return pr
    d = np.linalg.norm(points[pr[:, 0]] - points[pr[:, 1]], axis=1)
    return pr[(d > 0) & (d < radius)]


def disk_graph_stat(s: PoissonSample | np.ndarray, radius: float, pattern: str = "edge",
                    q: int = 3) -> int:
    """Number of induced subgraphs isomorphic to the pattern in the graph
    joining points at distance in (0, radius). `path` is the induced path on
    q vertices."""
    if isinstance(s, PoissonSample):
        pts = s.points
    else:
        pts = np.asarray(s, dtype=float)
        pts = pts.reshape(len(pts), -1) if pts.size else np.zeros((0, 1))
    pattern = pattern.lower()
    if pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}")
    pr = _pairs(pts, radius)
    if pattern == "edge":
        return int(len(pr))
    size = 3 if pattern == "triangle" else q
    adj: dict[int, set] = {}
    for a, c in pr.tolist():
        adj.setdefault(a, set()).add(c)
        adj.setdefault(c, set()).add(a)
    # connected components of the touched vertices
    seen: set = set()
    count = 0
    for v0 in adj:
        if v0 in seen:
            continue
        comp, stack = [], [v0]
        seen.add(v0)
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(comp) < size:
            continue
        for sub in itertools.combinations(sorted(comp), size):
            deg = [sum(1 for w in sub if w in adj[v]) for v in sub]
            m = sum(deg) // 2
            if pattern == "triangle":
                count += m == 3
            elif m == size - 1 and sorted(deg) == [1, 1] + [2] * (size - 2) and _connected(sub, adj):
                count += 1
    return int(count)


def _connected(sub, adj) -> bool:
    sub = set(sub)
    start = next(iter(sub))
    seen, stack = {start}, [start]
    while stack:
        v = stack.pop()
        for w in adj[v] & sub:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == len(sub)


def _sorted_1d(b: SampleBatch) -> tuple[np.ndarray, np.ndarray]:
    """Points of a one-dimensional continuum batch sorted by (replication, x).

    One argsort of rep + scaled x replaces a lexsort; differences are later
    taken from the original coordinates, so the key only fixes the order."""
    x = b.points[:, 0]
    lo, hi = float(x.min(initial=0.0)), float(x.max(initial=1.0))
    u = (x - lo) / max(hi - lo, 1e-300) * 0.5
    order = np.argsort(b.rep + u, kind="stable")
    return x[order], b.rep[order]


def _lag_scan(xs: np.ndarray, rs: np.ndarray, R: int, radius: float, weight=None) -> np.ndarray:
    """sum over pairs i < j in one replication with 0 < |x_i - x_j| < radius
    of weight(x_i, x_j) (1 by default), per replication."""
    out = np.zeros(R)
    lag = 1
    while lag < len(xs):
        d = np.abs(xs[lag:] - xs[:-lag])
        same = rs[lag:] == rs[:-lag]
        near = same & (d < radius)
        if not near.any():
            break
        ok = near & (d > 0)
        w = np.ones(int(ok.sum())) if weight is None else weight(xs[:-lag][ok], xs[lag:][ok])
        out += np.bincount(rs[:-lag][ok], weights=w, minlength=R)
        lag += 1
    return out


def edge_counts_1d(b: SampleBatch, radius: float) -> np.ndarray:
    """Edge counts per configuration for one-dimensional continuum batches."""
    xs, rs = _sorted_1d(b)
    return np.rint(_lag_scan(xs, rs, b.R, radius)).astype(np.int64)


# --------------------------------------------------------------------------
# empirical distances


@dataclass
class Distances:
    kolmogorov: float
    d3_lower: float
    moments: tuple[float, float, float, float]
    n: int


def kolmogorov(samples, target) -> float:
    xs = np.sort(np.asarray(samples, dtype=float).ravel())
    N = len(xs)
    if N == 0:
        raise ValueError("no samples")
    if getattr(target, "discrete", False):
        grid = np.arange(-1, int(np.ceil(xs[-1])) + 1) + 0.5
        emp = np.searchsorted(xs, grid, side="right") / N
        return float(np.max(np.abs(emp - target.cdf(grid))))
    F = target.cdf(xs)
    i = np.arange(1, N + 1)
    return float(max(np.max(i / N - F), np.max(F - (i - 1) / N)))


def empirical_distances(samples, target, dictionary=None) -> Distances:
    xs = np.asarray(samples, dtype=float).ravel()
    if xs.size == 0:
        raise ValueError("no samples")
    d3 = float("nan")
    if isinstance(target, (GammaTarget, NormalTarget)):
        d3 = d3_lower_bound(xs, target, dictionary or default_dictionary())
    m = tuple(float(np.mean(xs ** k)) for k in range(1, 5))
    return Distances(kolmogorov(xs, target), d3, m, len(xs))


def product_gap(x: np.ndarray, y: np.ndarray, levels: int = 5) -> float:
    """max over a levels x levels grid of marginal quantiles of
    |F_joint(a, b) - F_x(a) F_y(b)|."""
    ps = (np.arange(1, levels + 1)) / (levels + 1)
    qa = np.quantile(x, ps)
    qb = np.quantile(y, ps)
    A = x[:, None] <= qa[None, :]
    B = y[:, None] <= qb[None, :]
    joint = (A.T.astype(float) @ B.astype(float)) / len(x)
    return float(np.max(np.abs(joint - np.outer(A.mean(0), B.mean(0)))))


def correlation(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Sample correlation and its standard error under independence, 1/sqrt(R)."""
    r = float(np.corrcoef(x, y)[0, 1])
    return r, 1.0 / sqrt(len(x))


# --------------------------------------------------------------------------
# experiments


class HypothesisError(ValueError):
    """A configuration violates a hypothesis of the limit theorem it targets."""


@dataclass
class LegSpec:
    name: str
    target: object
    order: int | None = None  # chaos order; None for non-chaos statistics


@dataclass
class StudySpec:
    """Per-n setup returns the space and one evaluator per leg, each mapping
    a SampleBatch to an (R,) array of draws."""

    experiment: str
    legs: list[LegSpec]
    setup: Callable[[float], tuple[MeasureSpace, list[Callable[[SampleBatch], np.ndarray]]]]
    n_values: Sequence[float]
    reps: int
    seed: int
    block: int = 20_000
    keep_raw: bool = False


@dataclass
class ExperimentResult:
    experiment: str
    seed: int
    n_values: list
    rows: list[dict]
    raw: dict = field(default_factory=dict)

    def leg_series(self, leg: str, key: str) -> tuple[np.ndarray, np.ndarray]:
        rs = [r for r in self.rows if r["leg"] == leg]
        return np.array([r["n"] for r in rs], float), np.array([r[key] for r in rs], float)


def check_orders(orders: Sequence[int]):
    """Refuse 2 q_i = q_j; asymptotic independence is not guaranteed there."""
    for i, a in enumerate(orders):
        for j, b in enumerate(orders):
            if i != j and 2 * a == b:
                raise HypothesisError(f"chaos orders {a} and {b} satisfy 2*q_i = q_j")


def _block_for(n: float, block: int, mass: float) -> int:
    return max(1, min(block, int(4_000_000 // max(mass, 1.0))))


def run_study(spec: StudySpec, workers: int = 1) -> ExperimentResult:
    orders = [leg.order for leg in spec.legs if leg.order is not None]
    check_orders(orders)
    if spec.reps < 100:
        raise ValueError("at least 100 replications are needed for distance estimates")
    ns = list(spec.n_values)
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError("n schedule must be strictly increasing")
    rows, raw = [], {}
    for k, n in enumerate(ns):
        space, evals = spec.setup(n)

        def job(rng, m, space=space, evals=evals):
            b = sample_batch(space, rng, m)
            return [ev(b) for ev in evals]

        blk = _block_for(n, spec.block, space.mass_n if space.mode is Mode.CONTINUUM else 1.0)
        parts = run_blocks(job, spec.seed, spec.experiment, k, spec.reps, blk, workers)
        draws = [np.concatenate([p[i] for p in parts]) for i in range(len(spec.legs))]
        if spec.keep_raw:
            raw[n] = {leg.name: d for leg, d in zip(spec.legs, draws)}
        cross = {}
        if len(draws) == 2:
            r, se = correlation(draws[0], draws[1])
            cross = {"cross_corr": r, "cross_corr_se": se,
                     "product_gap": product_gap(draws[0], draws[1])}
        for leg, d in zip(spec.legs, draws):
            dist = empirical_distances(d, leg.target)
            row = {"n": float(n), "leg": leg.name, "reps": len(d),
                   "mean": dist.moments[0], "var": float(np.var(d)),
                   "m3": dist.moments[2], "m4": dist.moments[3],
                   "kolmogorov": dist.kolmogorov, "d3_lower": dist.d3_lower,
                   "mean_se": float(np.std(d) / sqrt(len(d)))}
            row.update(cross)
            rows.append(row)
    return ExperimentResult(spec.experiment, spec.seed, ns, rows, raw)


def hybrid_experiment(spec: StudySpec, workers: int = 1) -> ExperimentResult:
    if len(spec.legs) != 2:
        raise ValueError("a hybrid experiment has exactly two legs")
    return run_study(spec, workers)


def addone_l2(b: SampleBatch, radius: float, a: float, c: float) -> np.ndarray:
    """Per-configuration value of int (D_z L)^2 mu_n(dz) for the edge count L
    of a one-dimensional batch on (a, c) with uniform intensity.

    D_z L is the number of points within distance radius of z, so the z
    integral is exact: the lengths of the windows (x - radius, x + radius)
    clipped to (a, c), plus twice the clipped overlaps of pairs closer than
    2 radius."""
    dens = b.space.mass_n / (c - a)
    x = b.points[:, 0]
    win = np.minimum(x + radius, c) - np.maximum(x - radius, a)
    out = np.bincount(b.rep, weights=win, minlength=b.R)

    def overlap(u, v):
        lo = np.maximum(np.maximum(u, v) - radius, a)
        hi = np.minimum(np.minimum(u, v) + radius, c)
        return np.maximum(hi - lo, 0.0)

    xs, rs = _sorted_1d(b)
    out += 2 * _lag_scan(xs, rs, b.R, 2 * radius, overlap)
    return dens * out


def coupled_fixed_n(space: MeasureSpace, h: Kernel, n: int, rng: np.random.Generator,
                    R: int) -> tuple[np.ndarray, np.ndarray]:
    """(F'_n, F_n) for a grid space: U-statistics of h over a Poisson(n) sample
    and over exactly n points, coupled through a shared stream of the first
    min(N, n) points. Points are exchangeable, so the shared prefix and the
    surplus are drawn as independent multinomial count vectors."""
    if space.mode is not Mode.GRID:
        raise ValueError("grid spaces only")
    p = space.weights / space.weights.sum()
    N = rng.poisson(n * space.base_mass, size=R)
    common = rng.multinomial(np.minimum(N, n), p).astype(float)
    extra = rng.multinomial(np.abs(N - n), p).astype(float)
    pois = common + np.where((N > n)[:, None], extra, 0.0)
    fixed = common + np.where((N < n)[:, None], extra, 0.0)
    sp = SampleBatch(space, R, counts=pois)
    fx = SampleBatch(space, R, counts=fixed)
    return ustat_batch(h, sp), ustat_batch(h, fx)
