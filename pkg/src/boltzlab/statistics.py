"""Conditioned initial data, partition functions, cluster volumes and weighted norms.

Initial data for N hard spheres are tensor products restricted to the
exclusion domain {|x_i - x_j| > eps} and renormalised by the partition
function Z_N.  Rejection sampling gives both the conditioned samples and an
unbiased estimate of Z_N (the acceptance rate).  The spatial density lives
on the unit box so that rejection terminates.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core_types import (Histogram, PhaseConfiguration, as_generator, check_dimension, unit_ball_volume)


class LowAcceptanceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# one-particle densities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BumpDensity:
    """f0(x, v) = g(x) M_theta(v) on the unit box, g(x) = prod_i (1 - c cos(2 pi x_i)).

    ``c = 0`` is the uniform density; |c| < 1 keeps g positive.
    """

    d: int = 2
    c: float = 0.5
    theta: float = 1.0

    def __post_init__(self):
        check_dimension(self.d)
        if not abs(self.c) < 1:
            raise ValueError("need |c| < 1")

    @property
    def label(self) -> str:
        return f"bump(c={self.c:g})xMaxwellian(theta={self.theta:g})"

    @property
    def sup(self) -> float:
        """sup_x of the velocity integral of f0, i.e. sup g."""
        return (1 + abs(self.c)) ** self.d

    def spatial_density(self, x):
        x = np.asarray(x, float)
        return np.prod(1 - self.c * np.cos(2 * math.pi * x), axis=-1)

    def square_integral(self) -> float:
        """Integral of g^2 over the box."""
        return (1 + 0.5 * self.c**2) ** self.d

    def axis_bin_mass(self, edges):
        """Mass of g's one-dimensional factor on consecutive bins."""
        e = np.asarray(edges, float)
        F = e - self.c * np.sin(2 * math.pi * e) / (2 * math.pi)
        return np.diff(F)

    def sample_positions(self, gen, shape):
        """Coordinatewise rejection from the uniform law (envelope 1 + |c|)."""
        shape = tuple(np.atleast_1d(shape)) + (self.d,)
        n = int(np.prod(shape))
        out = np.empty(n)
        filled = 0
        while filled < n:
            m = max(2 * (n - filled), 1024)
            u = gen.random(m)
            keep = u[gen.random(m) * (1 + abs(self.c)) < 1 - self.c * np.cos(2 * math.pi * u)]
            take = min(len(keep), n - filled)
            out[filled:filled + take] = keep[:take]
            filled += take
        return out.reshape(shape)

    def sample_velocities(self, gen, shape):
        shape = tuple(np.atleast_1d(shape)) + (self.d,)
        return math.sqrt(self.theta) * gen.standard_normal(shape)


# ---------------------------------------------------------------------------
# conditioned sampling and partition functions
# ---------------------------------------------------------------------------

@dataclass
class ConditionedEnsemble:
    """Accepted samples stored as arrays x, v of shape (n_samples, N, d)."""

    x: np.ndarray
    v: np.ndarray
    epsilon: float
    f0_label: str
    attempts: int
    hits: int
    f0: BumpDensity | None = None

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def N(self) -> int:
        return self.x.shape[1]

    @property
    def acceptance_rate(self) -> float:
        return self.hits / self.attempts

    @property
    def Z_hat(self) -> float:
        return self.acceptance_rate

    @property
    def Z_stderr(self) -> float:
        p = self.acceptance_rate
        return math.sqrt(max(p * (1 - p), 0.0) / self.attempts)

    @property
    def samples(self):
        return [PhaseConfiguration(self.x[i], self.v[i]) for i in range(self.n_samples)]


def _min_pair_distance(x):
    """Smallest pairwise distance within each row of x (B, N, d)."""
    B, N, _ = x.shape
    if N < 2:
        return np.full(B, np.inf)
    i, j = np.triu_indices(N, 1)
    return np.linalg.norm(x[:, i] - x[:, j], axis=2).min(axis=1)


def conditioned_sampler(N: int, eps: float, f0: BumpDensity, n_samples: int, rng, max_attempts: int | None = None,
                        chunk_pairs: int = 4_000_000, keep_samples: bool = True) -> ConditionedEnsemble:
    """Rejection sampling of N particles from f0^{(N)} restricted to |x_i - x_j| > eps.

    Proposals are processed in whole batches until ``n_samples``
    acceptances (or ``max_attempts`` proposals, default 1000 n_samples);
    the acceptance rate counts every proposal of those batches, while at
    most ``n_samples`` configurations are kept.  ``keep_samples=False`` only counts, for
    partition-function estimates.
    """
    gen = as_generator(rng)
    if max_attempts is None:
        max_attempts = 1000 * max(n_samples, 1)
    d = f0.d
    npairs = max(N * (N - 1) // 2, 1)
    B = max(1, min(chunk_pairs // npairs, 200_000))
    xs, vs = [], []
    kept = 0
    hits = 0
    attempts = 0
    while kept < n_samples and attempts < max_attempts:
        b = min(B, max_attempts - attempts)
        x = f0.sample_positions(gen, (b, N))
        ok = _min_pair_distance(x) > eps if eps > 0 else np.ones(b, bool)
        attempts += b
        hits += int(np.count_nonzero(ok))
        acc = x[ok][: n_samples - kept]
        kept += len(acc)
        if keep_samples and len(acc):
            xs.append(acc)
            vs.append(f0.sample_velocities(gen, (len(acc), N)))
    if attempts and hits / attempts < 1e-6:
        raise LowAcceptanceError(f"acceptance {hits}/{attempts} below 1e-6: reduce eps or N")
    if xs:
        X, V = np.concatenate(xs), np.concatenate(vs)
    else:
        X = V = np.zeros((0, N, d))
    return ConditionedEnsemble(X, V, float(eps), f0.label, attempts, hits, f0)


def estimate_partition_function(N: int, eps: float, f0: BumpDensity, n_attempts: int, rng,
                                chunk_pairs: int = 4_000_000):
    """(Z_hat, stderr) from ``n_attempts`` independent proposals."""
    gen = as_generator(rng)
    npairs = max(N * (N - 1) // 2, 1)
    B = max(1, min(chunk_pairs // npairs, 200_000))
    hits = 0
    done = 0
    while done < n_attempts:
        b = min(B, n_attempts - done)
        x = f0.sample_positions(gen, (b, N))
        hits += int(np.count_nonzero(_min_pair_distance(x) > eps))
        done += b
    p = hits / n_attempts
    return p, math.sqrt(p * (1 - p) / n_attempts)


def first_order_partition(N: int, eps: float, f0: BumpDensity) -> float:
    """1 - C(N) eps^d with C(N) = N(N-1)/2 kappa_d int g^2 (boundary effects neglected)."""
    return 1 - 0.5 * N * (N - 1) * unit_ball_volume(f0.d) * eps**f0.d * f0.square_integral()


@dataclass
class PartitionCheck:
    ratio: float
    stderr: float
    upper_bound: float
    lower_ok: bool
    upper_ok: bool

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok


def partition_bound_check(Z_N, Z_N_minus_s, N: int, s: int, eps: float, f0_sup: float, d: int,
                          k: float = 3.0) -> PartitionCheck:
    """Check 1 <= Z_{N-s}/Z_N <= (1 - eps kappa_d f0_sup)^(-s) within k standard errors.

    ``Z_N`` and ``Z_N_minus_s`` are (value, stderr) pairs.
    """
    if s == 0:
        return PartitionCheck(1.0, 0.0, 1.0, True, True)
    (zn, sn), (zm, sm) = Z_N, Z_N_minus_s
    if zn <= 0:
        raise ValueError("Z_N estimate must be positive")
    ratio = zm / zn
    se = ratio * math.sqrt((sn / zn) ** 2 + (sm / zm) ** 2) if zm > 0 else math.inf
    base = 1 - eps * unit_ball_volume(d) * f0_sup
    upper = base ** (-s) if base > 0 else math.inf
    return PartitionCheck(ratio, se, upper, bool(ratio + k * se >= 1.0), bool(ratio - k * se <= upper))


# ---------------------------------------------------------------------------
# marginals
# ---------------------------------------------------------------------------

@dataclass
class FactorizationError:
    sup_error: float        # sup over bins of |hat f / f0^{tensor s} - 1|
    abs_error: float        # sup over bins of |hat f - f0^{tensor s}|
    noise: float            # largest per-bin standard error of the relative error
    n_bins: int
    insufficient: bool


def marginal_factorization_error(ens: ConditionedEnsemble, s: int = 1, nbins: int = 4,
                                 f0: BumpDensity | None = None) -> FactorizationError:
    """Sup over bins of |hat f^{(s)} / f0^{tensor s} - 1| for the spatial marginal.

    Velocities are drawn independently of the exclusion constraint, so only
    the position marginal is compared.  All ordered s-tuples of distinct
    particles are pooled.  For s >= 2 bins whose cells touch in every axis
    (the neighbourhood of the diagonals) are skipped.  ``noise`` is the
    largest per-bin standard error; ``insufficient`` flags an error below
    three times that level.
    """
    f0 = f0 or ens.f0
    if f0 is None:
        raise ValueError("the one-particle density is needed")
    if not 1 <= s <= 3:
        raise ValueError("s must be 1, 2 or 3")
    n, N, d = ens.x.shape
    if N < s:
        raise ValueError("s exceeds N")
    tuples = list(itertools.permutations(range(N), s))
    if len(tuples) > 2000:
        sel = np.random.default_rng(0).choice(len(tuples), 2000, replace=False)
        tuples = [tuples[i] for i in sorted(sel)]
    T = np.array(tuples)
    edges = np.linspace(0.0, 1.0, nbins + 1)
    counts = np.zeros((nbins,) * (s * d))
    step = max(1, 2_000_000 // (len(T) * s * d))
    for lo in range(0, n, step):
        data = ens.x[lo:lo + step][:, T, :].reshape(-1, s * d)
        counts += np.histogramdd(data, bins=[edges] * (s * d))[0]
    total = counts.sum()
    vol = (1.0 / nbins) ** (s * d)
    dens = counts / (total * vol)
    mass = f0.axis_bin_mass(edges) / (1.0 / nbins)
    exact = mass
    for _ in range(s * d - 1):
        exact = np.multiply.outer(exact, mass)
    # pooled tuples are correlated within a sample; scale the noise accordingly
    eff = n * min(len(T), max(1, N // s))
    noise = 1.0 / np.sqrt(eff * vol * exact)
    mask = np.ones(counts.shape, bool)
    if s >= 2:
        idx = np.indices(counts.shape).reshape(s, d, *counts.shape)
        for a in range(s):
            for b in range(a + 1, s):
                near = np.all(np.abs(idx[a] - idx[b]) <= 1, axis=0)
                mask &= ~near
    err = np.abs(dens / exact - 1)[mask]
    sup = float(err.max()) if err.size else 0.0
    abs_sup = float(np.abs(dens - exact)[mask].max()) if err.size else 0.0
    nmax = float(noise[mask].max()) if err.size else 0.0
    return FactorizationError(sup, abs_sup, nmax, int(mask.sum()), sup < 3 * nmax)


def observable_average(h: Histogram, phi, X_s) -> float:
    """Integral of phi(V_s) h(X_s, V_s) dV_s by bin summation.

    ``h`` is a histogram whose leading coordinates are the positions X_s
    and whose remaining coordinates are the velocities V_s, in that order.
    ``phi`` maps an (m, s*d) array of velocity bin centres to m values.
    """
    X_s = np.atleast_1d(np.asarray(X_s, float)).ravel()
    nx = X_s.size
    edges = h.edges
    if len(edges) <= nx:
        raise ValueError("histogram has no velocity coordinates")
    idx = []
    for k in range(nx):
        e = edges[k]
        j = int(np.searchsorted(e, X_s[k], side="right") - 1)
        if not 0 <= j < len(e) - 1:
            raise ValueError("X_s lies outside the histogram range")
        idx.append(j)
    slab = h.density[tuple(idx)]
    vcent = [0.5 * (e[1:] + e[:-1]) for e in edges[nx:]]
    grid = np.stack(np.meshgrid(*vcent, indexing="ij"), axis=-1).reshape(-1, len(vcent))
    vvol = float(np.prod([e[1] - e[0] for e in edges[nx:]]))
    vals = np.asarray(phi(grid), float).reshape(slab.shape)
    return float(np.sum(vals * slab) * vvol)


# ---------------------------------------------------------------------------
# clusters
# ---------------------------------------------------------------------------

def _attached_to_roots(points, s: int, eps: float):
    """For each row of points (B, s+m, d): whether every point is eps-chained to a root."""
    B, n, _ = points.shape
    diff = points[:, :, None, :] - points[:, None, :, :]
    adj = np.sum(diff * diff, axis=-1) < eps * eps
    reach = np.zeros((B, n), bool)
    reach[:, :s] = True
    for _ in range(n - s):
        reach = reach | np.any(adj & reach[:, None, :], axis=2)
    return reach.all(axis=1)


@dataclass
class ClusterVolume:
    m: int
    volume: float
    stderr: float
    bound: float


def cluster_bound(s: int, m: int, eps: float, d: int) -> float:
    """m! eps^(md) exp(kappa_d (s + m)): the cluster estimate at zeta = eps^-d, times m!."""
    return math.factorial(m) * eps ** (m * d) * math.exp(unit_ball_volume(d) * (s + m))


def cluster_volume_mc(X_s, m: int, eps: float, n_mc: int, rng, box=None, chunk: int = 500_000) -> ClusterVolume:
    """Volume of the set of Y_m whose points are all eps-chained to X_s.

    Candidates are uniform in ``box = (lo, hi)`` (default: the bounding box
    of X_s widened by m eps, which contains the whole set).
    """
    if not 1 <= m <= 3:
        raise ValueError("m must be 1, 2 or 3")
    gen = as_generator(rng)
    X_s = np.atleast_2d(np.asarray(X_s, float))
    s, d = X_s.shape
    if box is None:
        lo = X_s.min(axis=0) - m * eps
        hi = X_s.max(axis=0) + m * eps
    else:
        lo, hi = (np.broadcast_to(np.asarray(b, float), (d,)) for b in box)
    vol_box = float(np.prod(hi - lo)) ** m
    hits = 0
    done = 0
    while done < n_mc:
        B = min(chunk, n_mc - done)
        Y = lo + (hi - lo) * gen.random((B, m, d))
        pts = np.concatenate([np.broadcast_to(X_s, (B, s, d)), Y], axis=1)
        hits += int(np.count_nonzero(_attached_to_roots(pts, s, eps)))
        done += B
    p = hits / n_mc
    return ClusterVolume(m, vol_box * p, vol_box * math.sqrt(p * (1 - p) / n_mc), cluster_bound(s, m, eps, d))


# ---------------------------------------------------------------------------
# weighted norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormSpec:
    beta: float
    mu: float = 0.0
    epsilon: float = 0.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")


def weighted_norm(g, spec: NormSpec, V_grid, X_grid=None) -> float:
    """Grid maximum of |g(X, V)| exp(beta E0(V) + mu s).

    ``V_grid`` has shape (G, s, d); ``X_grid`` (same leading shape) is
    optional for spatially homogeneous g.  With ``spec.epsilon > 0`` grid
    points with two positions closer than epsilon are outside the domain and
    skipped.  The result is a lower bound on the supremum.
    """
    V = np.asarray(V_grid, float)
    if V.ndim == 2:
        V = V[:, None, :]
    G, s, _ = V.shape
    vals = np.abs(np.asarray(g(X_grid, V) if X_grid is not None else g(None, V), float)).reshape(G)
    E = 0.5 * np.sum(V * V, axis=(1, 2))
    w = vals * np.exp(spec.beta * E + spec.mu * s)
    if spec.epsilon > 0 and X_grid is not None and s > 1:
        X = np.asarray(X_grid, float)
        w = np.where(_min_pair_distance(X) > spec.epsilon, w, 0.0)
    return float(w.max())


def velocity_grid(s: int, d: int, vmax: float, n: int) -> np.ndarray:
    """Tensor grid of n points per axis on [-vmax, vmax], shape (n^(s d), s, d)."""
    ax = np.linspace(-vmax, vmax, n)
    mesh = np.stack(np.meshgrid(*([ax] * (s * d)), indexing="ij"), axis=-1)
    return mesh.reshape(-1, s, d)
