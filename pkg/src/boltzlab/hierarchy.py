"""Collision trees and pseudo-trajectories of the Boltzmann and BBGKY hierarchies.

A collision tree of depth k attached to s root particles fixes adjunction
times t > t_1 > ... > t_k > 0, parents m_i, impact directions nu_i and
velocities v_i of the adjoined particles.  Following the characteristics
backwards from time t, particle s+i is adjoined at time t_i next to its
parent: on top of it for the Boltzmann hierarchy, at distance eps along nu_i
for the BBGKY hierarchy.  When nu_i . (v_i - v_{m_i}) > 0 the pair is
post-collisional and is scattered back to its pre-collisional velocities.

All routines work on batches of trees so that Monte Carlo estimates stay
vectorised; a single :class:`CollisionTree` is a batch of size one.

Parent indices are 0-based: the parent of adjoined particle i (0-based)
is one of the s + i particles already present.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core_types import (HARD_SPHERE, PotentialSpec, PhasePoint, PhaseConfiguration, as_generator,
                         check_dimension, sample_ball, sample_unit_sphere, unit_ball_volume,
                         unit_sphere_area)
from .scattering import scattering_operator_sigma_eps, sigma0_inverse


class InfeasibleTreeError(ValueError):
    pass


class DegenerateEstimateError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncationParams:
    """Truncation parameters with the ordering a << eps0 << eta * delta.

    "<<" is checked as a factor ``ratio`` (100 by default); experiments that
    deliberately explore the regime where the ordering fails may lower it.
    """

    n: int
    R: float
    delta: float
    eta: float
    eps0: float
    a: float
    ratio: float = 100.0

    def __post_init__(self):
        if self.n < 0 or not self.R > 0:
            raise ValueError("need n >= 0 and R > 0")
        if min(self.delta, self.eta, self.eps0, self.a) < 0:
            raise ValueError("truncation parameters must be nonnegative")
        if self.ratio > 0:
            if self.a > self.eps0 / self.ratio * (1 + 1e-12):
                raise ValueError(f"need a <= eps0/{self.ratio:g} (a={self.a}, eps0={self.eps0})")
            if self.eps0 > self.eta * self.delta / self.ratio * (1 + 1e-12):
                raise ValueError(f"need eps0 <= eta*delta/{self.ratio:g} "
                                 f"(eps0={self.eps0}, eta*delta={self.eta * self.delta})")


def truncation_schedule(eps: float, d: int, C1: float = 1.0, C2: float = 1.0,
                        eta: float | None = None, a: float | None = None, ratio: float = 100.0) -> TruncationParams:
    """Parameters tied to eps: n ~ C1 |log eps|, R^2 ~ C2 |log eps|,
    delta = eps^((d-1)/(d+1)), eps0 = eps^(d/(d+1)).

    Defaults: a = min(eps, eps0/ratio) and eta = max(10 sqrt(eps0/delta), ratio eps0/delta),
    which always satisfy the ordering checks.  Explicit choices are checked.
    """
    check_dimension(d)
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    L = abs(math.log(eps))
    delta = eps ** ((d - 1) / (d + 1))
    eps0 = eps ** (d / (d + 1))
    if eta is None:
        eta = max(10.0 * math.sqrt(eps0 / delta), ratio * eps0 / delta)
    if a is None:
        a = min(eps, eps0 / ratio)
    return TruncationParams(n=int(math.ceil(C1 * L)), R=math.sqrt(C2 * L), delta=delta, eta=eta,
                            eps0=eps0, a=a, ratio=ratio)


# ---------------------------------------------------------------------------
# trees
# ---------------------------------------------------------------------------

def simplex_volume(t: float, k: int, delta: float = 0.0) -> float:
    """Volume of {t > t_1 > ... > t_k > 0, t_i - t_{i+1} >= delta} with t_{k+1} = 0."""
    span = t - k * delta
    if span <= 0:
        return 0.0
    return span**k / math.factorial(k)


def sample_times(t: float, k: int, delta: float, size: int, gen) -> np.ndarray:
    """Uniform samples of the delta-separated time simplex, shape (size, k), decreasing."""
    span = t - k * delta
    if k > 0 and span <= 0:
        raise InfeasibleTreeError(f"t = {t} is too small for k = {k} adjunctions separated by {delta}")
    u = -np.sort(-gen.random((size, k)) * span, axis=1)
    return u + delta * np.arange(k, 0, -1)[None, :]


@dataclass
class TreeBatch:
    """B collision trees sharing (s, k, t)."""

    s: int
    k: int
    t: float
    T: np.ndarray          # (B, k) decreasing adjunction times
    M: np.ndarray          # (B, k) 0-based parents, M[:, i] < s + i
    nus: np.ndarray        # (B, k, d)
    vs: np.ndarray         # (B, k, d)
    J: np.ndarray | None = None   # (B, k) prescribed signs, or None when marginalised
    log_q: np.ndarray | None = None   # log proposal density of vs (per tree, summed)
    simplex_volume: float = 1.0
    parent_factor: float = 1.0     # number of parent sequences when M is sampled

    @property
    def size(self) -> int:
        return self.T.shape[0]

    @property
    def d(self) -> int:
        return self.nus.shape[2]

    def tree(self, b: int) -> "CollisionTree":
        return CollisionTree(self.s, self.k, self.t,
                             tuple(int(j) for j in self.J[b]) if self.J is not None else None,
                             tuple(int(m) for m in self.M[b]), self.T[b].copy(),
                             self.nus[b].copy(), self.vs[b].copy())


@dataclass(frozen=True)
class CollisionTree:
    s: int
    k: int
    t: float
    J: tuple | None
    M: tuple
    T: np.ndarray
    nus: np.ndarray
    vs: np.ndarray

    def __post_init__(self):
        T = np.asarray(self.T, float)
        if len(T) != self.k or len(self.M) != self.k:
            raise ValueError("tree arrays must have length k")
        if self.k and not (self.t > T[0] and np.all(np.diff(T) < 0) and T[-1] > 0):
            raise ValueError("times must satisfy t > t_1 > ... > t_k > 0")
        for i, m in enumerate(self.M):
            if not 0 <= m < self.s + i:
                raise ValueError(f"parent {m} invalid for adjunction {i}")
        if self.J is not None and any(j not in (-1, 1) for j in self.J):
            raise ValueError("J entries must be +1 or -1")

    def batch(self) -> TreeBatch:
        J = None if self.J is None else np.array([self.J], dtype=int).reshape(1, self.k)
        d = np.asarray(self.nus).shape[-1] if self.k else 2
        return TreeBatch(self.s, self.k, self.t, np.asarray(self.T, float).reshape(1, self.k),
                         np.asarray(self.M, int).reshape(1, self.k),
                         np.asarray(self.nus, float).reshape(1, self.k, d),
                         np.asarray(self.vs, float).reshape(1, self.k, d), J)

    def separation(self) -> float:
        if self.k == 0:
            return math.inf
        T = np.concatenate([np.asarray(self.T, float), [0.0]])
        return float(np.min(-np.diff(T)))


def _all_parent_sequences(s: int, k: int):
    return list(itertools.product(*[range(s + i) for i in range(k)]))


def sample_trees(s: int, k: int, t: float, params: TruncationParams, size: int, rng, d: int = 2,
                 J=None, M=None, velocity_sampler=None, separated: bool = True) -> TreeBatch:
    """Sample ``size`` trees: times uniform on the delta-separated simplex,
    nu uniform on the sphere, v uniform on B_R (or from ``velocity_sampler``),
    parents uniform unless M is given.

    ``velocity_sampler(gen, n)`` must return ``(v, log_q)`` with v of shape (n, d).
    """
    check_dimension(d)
    gen = as_generator(rng)
    if k > params.n:
        raise InfeasibleTreeError(f"k = {k} exceeds the truncation depth n = {params.n}")
    delta = params.delta if separated else 0.0
    T = sample_times(t, k, delta, size, gen)
    if M is None:
        M_arr = np.stack([gen.integers(0, s + i, size) for i in range(k)], axis=1) if k else np.zeros((size, 0), int)
        pf = float(np.prod([s + i for i in range(k)])) if k else 1.0
    else:
        M = tuple(int(m) for m in M)
        if len(M) != k or any(not 0 <= m < s + i for i, m in enumerate(M)):
            raise ValueError("invalid parent sequence")
        M_arr = np.tile(np.array(M, int), (size, 1)).reshape(size, k)
        pf = 1.0
    nus = sample_unit_sphere(gen, size * k, d).reshape(size, k, d)
    if velocity_sampler is None:
        vs = sample_ball(gen, size * k, d, params.R).reshape(size, k, d)
        log_q = np.full(size, -k * math.log(unit_ball_volume(d) * params.R**d))
    else:
        v, lq = velocity_sampler(gen, size * k)
        vs = np.asarray(v, float).reshape(size, k, d)
        log_q = np.asarray(lq, float).reshape(size, k).sum(axis=1)
    J_arr = None
    if J is not None:
        J = tuple(int(j) for j in J)
        if len(J) != k or any(j not in (-1, 1) for j in J):
            raise ValueError("J must be k entries of +1/-1")
        J_arr = np.tile(np.array(J, int), (size, 1)).reshape(size, k)
    return TreeBatch(s, k, float(t), T, M_arr, nus, vs, J_arr, log_q, simplex_volume(t, k, delta), pf)


def sample_tree(s: int, k: int, t: float, params: TruncationParams, rng, d: int = 2, J=None, M=None) -> CollisionTree:
    """One collision tree (see :func:`sample_trees`)."""
    batch = sample_trees(s, k, t, params, 1, rng, d=d, J=J, M=M)
    return batch.tree(0)


# ---------------------------------------------------------------------------
# good configurations
# ---------------------------------------------------------------------------

def backward_min_distance(dx, dv):
    """inf over tau >= 0 of |dx - tau dv| (closed-form point-to-ray distance), row-wise."""
    dx = np.asarray(dx, float)
    dv = np.asarray(dv, float)
    dvv = np.sum(dv * dv, axis=-1)
    proj = np.sum(dx * dv, axis=-1)
    tau = np.where(dvv > 0, np.maximum(proj, 0.0) / np.where(dvv > 0, dvv, 1.0), 0.0)
    return np.linalg.norm(dx - tau[..., None] * dv, axis=-1)


def good_config_check(Z: PhaseConfiguration, c: float):
    """(all pairs stay at distance >= c under backward free flow, smallest such distance)."""
    n = Z.n
    if n < 2:
        return True, math.inf
    i, j = np.triu_indices(n, 1)
    dist = backward_min_distance(Z.x[i] - Z.x[j], Z.v[i] - Z.v[j])
    m = float(dist.min())
    return bool(m >= c), m


# ---------------------------------------------------------------------------
# pseudo-trajectories
# ---------------------------------------------------------------------------

@dataclass
class PseudoTrajectoryResult:
    """Batch result; arrays have a leading batch axis."""

    X: np.ndarray                 # (B, s+k, d) positions at time 0
    V: np.ndarray                 # (B, s+k, d) velocities at time 0
    recollision: np.ndarray       # (B,) bool
    blocked: np.ndarray           # (B,) bool, adjunction inside another sphere
    grazing: np.ndarray           # (B,) bool, |nu . (v - v_m)| below the eta cutoff
    min_pair_distance: np.ndarray  # (B,)
    weight: np.ndarray            # (B,) product of the nu . (v - v_m) factors (signed if J free)
    sign_ok: np.ndarray           # (B,) False if a prescribed sign J was violated
    energy: np.ndarray            # (B,) kinetic energy at time 0

    def energy_cut_passed(self, R: float) -> np.ndarray:
        return self.energy <= R * R

    def configuration(self, b: int = 0) -> PhaseConfiguration:
        return PhaseConfiguration(self.X[b], self.V[b])


def _kind(Phi_kind):
    if Phi_kind is None or Phi_kind == "hard_sphere":
        return HARD_SPHERE
    if isinstance(Phi_kind, PotentialSpec):
        return Phi_kind
    raise ValueError(f"unknown interaction {Phi_kind!r}")


def _segment_check(X, V, n_act, dt, eps, skip_pair, recoll, mind):
    """Backward free flow of the first n_act particles over durations dt (B,).

    Flags pairs that reach distance eps while approaching (under backward
    motion) and records the minimal pair distance, ignoring the pair given
    in ``skip_pair`` (the pair created at the start of the segment).
    """
    if n_act < 2:
        return
    i, j = np.triu_indices(n_act, 1)
    dx = X[:, i] - X[:, j]                        # (B, P, d)
    dv = -(V[:, i] - V[:, j])                     # backward relative velocity
    b = np.sum(dx * dv, axis=-1)
    v2 = np.sum(dv * dv, axis=-1)
    r2 = np.sum(dx * dx, axis=-1)
    skip = np.zeros(b.shape, bool)
    if skip_pair is not None:
        p, q = skip_pair
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        # index of pair (lo, hi) in the triu enumeration
        idx = lo * n_act - lo * (lo + 1) // 2 + (hi - lo - 1)
        skip[np.arange(len(idx)), idx] = True
    if eps > 0:
        disc = b * b - v2 * (r2 - eps * eps)
        with np.errstate(invalid="ignore", divide="ignore"):
            tc = (r2 - eps * eps) / (-b + np.sqrt(np.maximum(disc, 0.0)))
        hit = (b < 0) & (disc > 0) & (tc <= dt[:, None]) & ~skip
        hit |= (r2 < eps * eps * (1 - 1e-9)) & ~skip
        recoll |= hit.any(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        tau = np.clip(np.where(v2 > 0, -b / np.where(v2 > 0, v2, 1.0), 0.0), 0.0, dt[:, None])
    dist = np.linalg.norm(dx + tau[..., None] * dv, axis=-1)
    dist = np.where(skip, np.inf, dist)
    np.minimum(mind, dist.min(axis=1), out=mind)


def _pseudo_trajectories(X_s, V_s, batch: TreeBatch, eps: float, Phi_kind="hard_sphere",
                         eta: float = 0.0) -> PseudoTrajectoryResult:
    pot = _kind(Phi_kind)
    X_s = np.asarray(X_s, float)
    V_s = np.asarray(V_s, float)
    B, k, s = batch.size, batch.k, batch.s
    if X_s.ndim == 2:
        X_s = np.broadcast_to(X_s, (B,) + X_s.shape)
    if V_s.ndim == 2:
        V_s = np.broadcast_to(V_s, (B,) + V_s.shape)
    d = X_s.shape[2]
    n = s + k
    X = np.zeros((B, n, d))
    V = np.zeros((B, n, d))
    X[:, :s] = X_s
    V[:, :s] = V_s
    rows = np.arange(B)
    cur = np.full(B, float(batch.t))
    weight = np.ones(B)
    sign_ok = np.ones(B, bool)
    recoll = np.zeros(B, bool)
    blocked = np.zeros(B, bool)
    grazing = np.zeros(B, bool)
    mind = np.full(B, np.inf)
    skip = None
    for i in range(k):
        na = s + i
        ti = batch.T[:, i]
        dt = cur - ti
        _segment_check(X, V, na, dt, eps, skip, recoll, mind)
        X[:, :na] -= V[:, :na] * dt[:, None, None]
        cur = ti
        m = batch.M[:, i]
        nu = batch.nus[:, i]
        vnew = batch.vs[:, i]
        xm = X[rows, m]
        vm = V[rows, m]
        c = np.sum(nu * (vnew - vm), axis=1)
        if batch.J is not None:
            ok = np.sign(c) == batch.J[:, i]
            sign_ok &= ok
            weight *= np.abs(c) * ok
        else:
            weight *= c
        if eta > 0:
            g = np.abs(c) < eta
            grazing |= g
        xnew = xm + eps * nu
        if eps > 0 and na > 1:
            dd = np.linalg.norm(X[:, :na] - xnew[:, None, :], axis=2)
            dd[rows, m] = np.inf
            blocked |= (dd < eps * (1 - 1e-12)).any(axis=1)
        post = c > 0
        vnew_out = vnew.copy()
        vm_out = vm.copy()
        xnew_out = xnew.copy()
        xm_out = xm.copy()
        if pot.hard_sphere:
            cc = np.where(post, c, 0.0)[:, None]
            vnew_out = vnew - cc * nu
            vm_out = vm + cc * nu
        else:
            for b in np.nonzero(post)[0]:
                if eps > 0:
                    z1, z2, t_eps = scattering_operator_sigma_eps(
                        PhasePoint(xnew[b], -vnew[b]), PhasePoint(xm[b], -vm[b]), pot, eps)
                    vnew_out[b] = -z1.v
                    vm_out[b] = -z2.v
                    # virtual positions at t_i reproducing the states at t_i - t_eps
                    xnew_out[b] = z1.x + t_eps * vnew_out[b]
                    xm_out[b] = z2.x + t_eps * vm_out[b]
                else:
                    _, vnew_out[b], vm_out[b] = sigma0_inverse(nu[b], vnew[b], vm[b], pot)
        X[:, na] = xnew_out
        V[:, na] = vnew_out
        X[rows, m] = xm_out
        V[rows, m] = vm_out
        skip = (m, np.full(B, na))
    dt = cur.copy()
    _segment_check(X, V, n, dt, eps, skip, recoll, mind)
    X -= V * dt[:, None, None]
    energy = 0.5 * np.sum(V * V, axis=(1, 2))
    return PseudoTrajectoryResult(X, V, recoll, blocked, grazing, mind, weight, sign_ok, energy)


def boltzmann_pseudo_trajectory(Z_s: PhaseConfiguration, tree, Phi_kind="hard_sphere",
                                eta: float = 0.0) -> PseudoTrajectoryResult:
    """Boltzmann pseudo-trajectory (adjunction on top of the parent) of one tree or a batch."""
    batch = tree.batch() if isinstance(tree, CollisionTree) else tree
    return _pseudo_trajectories(Z_s.x, Z_s.v, batch, 0.0, Phi_kind, eta)


def bbgky_pseudo_trajectory(Z_s: PhaseConfiguration, tree, eps: float, Phi_kind="hard_sphere",
                            eta: float = 0.0) -> PseudoTrajectoryResult:
    """BBGKY pseudo-trajectory at diameter eps, with recollision and blocking flags."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    batch = tree.batch() if isinstance(tree, CollisionTree) else tree
    return _pseudo_trajectories(Z_s.x, Z_s.v, batch, float(eps), Phi_kind, eta)


def pseudo_trajectories(X_s, V_s, batch: TreeBatch, eps: float = 0.0, Phi_kind="hard_sphere",
                        eta: float = 0.0) -> PseudoTrajectoryResult:
    """Array form: roots (s, d) or (B, s, d)."""
    return _pseudo_trajectories(X_s, V_s, batch, float(eps), Phi_kind, eta)


def bbgky_prefactor(eps: float, s: int, k: int, d: int) -> float:
    """(N-s)!/(N-s-k)! eps^(k(d-1)) with N = eps^-(d-1) rounded."""
    N = int(round(eps ** (-(d - 1))))
    if N - s - k < 0:
        return 0.0
    out = 1.0
    for j in range(k):
        out *= (N - s - j) * eps ** (d - 1)
    return out


# ---------------------------------------------------------------------------
# initial data and observables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianInitialDatum:
    """f0(x, v) = g(x) * prod_k N(v_k; u_k, theta_k).

    ``x_width`` None means spatially homogeneous (g = 1); otherwise g is an
    isotropic Gaussian density of that width centred at ``x_center``.
    """

    theta: tuple = (1.0, 1.0)
    u: tuple | None = None
    x_width: float | None = None
    x_center: tuple | None = None

    @property
    def d(self) -> int:
        return len(self.theta)

    def _u(self):
        return np.zeros(self.d) if self.u is None else np.asarray(self.u, float)

    def velocity_log_density(self, v):
        th = np.asarray(self.theta, float)
        z = (np.asarray(v, float) - self._u()) ** 2 / th
        return -0.5 * np.sum(z, axis=-1) - 0.5 * np.sum(np.log(2 * math.pi * th))

    def log_density(self, x, v):
        out = self.velocity_log_density(v)
        if self.x_width is not None:
            c = np.zeros(self.d) if self.x_center is None else np.asarray(self.x_center, float)
            w2 = self.x_width**2
            out = out - 0.5 * np.sum((np.asarray(x, float) - c) ** 2, axis=-1) / w2 \
                - 0.5 * self.d * math.log(2 * math.pi * w2)
        return out

    def density(self, x, v):
        return np.exp(self.log_density(x, v))

    def sample_velocities(self, gen, n):
        v = self._u() + np.sqrt(np.asarray(self.theta, float)) * gen.standard_normal((n, self.d))
        return v, self.velocity_log_density(v)

    def proposal(self) -> "GaussianInitialDatum":
        """Isotropic velocity law at the largest temperature, centred at u.

        Collisions conserve kinetic energy, so f0 at the backward-evolved
        velocities divided by this proposal at the forward ones stays bounded.
        """
        th = max(self.theta)
        return GaussianInitialDatum(theta=(th,) * self.d, u=self.u)

    def velocity_moment(self, phi, n=400_000, seed=0):
        gen = np.random.default_rng(seed)
        return float(np.mean(phi(self.sample_velocities(gen, n)[0])))


@dataclass(frozen=True)
class ObservableEstimate:
    value: float
    stderr: float
    n_samples: int
    n_nonzero: int

    @property
    def ci(self):
        return self.value - 3 * self.stderr, self.value + 3 * self.stderr


def elementary_observable(X_s, phi, t: float, f0, params: TruncationParams, n_mc: int, rng, k: int,
                          J=None, M=None, eps: float = 0.0, Phi_kind="hard_sphere",
                          exclude_recollisions: bool = True, separated: bool = False,
                          proposal=None, batch_size: int = 200_000) -> ObservableEstimate:
    """Monte Carlo estimate of an elementary observable of the Boltzmann (eps = 0)
    or BBGKY (eps > 0) hierarchy at positions X_s (shape (s, d)).

    Root and adjoined velocities are drawn from ``proposal`` (default
    ``f0.proposal()``, else the velocity law of f0), nu
    uniformly on the sphere and times uniformly on the time simplex
    (delta-separated if ``separated``).  Each sample carries
        phi(V_s) * prod_i |S^{d-1}| (nu_i . (v_i - v_{m_i}))_{j_i} * vol(simplex)
        * f0^{(s+k)}(Z(0)) / q(velocities) * 1{E <= R^2} * flags
    where samples with |nu_i . (v_i - v_{m_i})| < eta are dropped
    and for eps > 0 the factor (N-s)!/(N-s-k)! eps^(k(d-1)).  With J = None
    the signed factor nu . (v - v_m) sums gain and loss terms in one pass.
    ``phi`` receives the root velocities, shape (B, d) when s = 1 and
    (B, s, d) otherwise, and returns B values.
    With M = None the parents are summed exhaustively for k <= 2 and sampled
    uniformly (with the matching count as weight) for k >= 3.
    """
    gen = as_generator(rng)
    X_s = np.atleast_2d(np.asarray(X_s, float))
    s, d = X_s.shape
    if M is None and k <= 2:
        seqs = _all_parent_sequences(s, k)
    else:
        seqs = [M]
    if proposal is None:
        proposal = f0.proposal() if hasattr(f0, "proposal") else f0
    per = max(1, n_mc // len(seqs))
    sphere = unit_sphere_area(d)
    total = 0.0
    var = 0.0
    nz = 0
    nsamp = 0
    for Mseq in seqs:
        acc = []
        remaining = per
        while remaining > 0:
            B = min(batch_size, remaining)
            remaining -= B
            V_s, lq_root = proposal.sample_velocities(gen, B * s)
            V_s = V_s.reshape(B, s, d)
            lq_root = lq_root.reshape(B, s).sum(axis=1)
            batch = sample_trees(s, k, t, params, B, gen, d=d, J=J, M=Mseq,
                                 velocity_sampler=proposal.sample_velocities, separated=separated)
            res = _pseudo_trajectories(np.broadcast_to(X_s, (B, s, d)), V_s, batch, eps, Phi_kind, params.eta)
            logf = np.sum(f0.log_density(res.X, res.V), axis=1)
            phi_v = np.asarray(phi(V_s[:, 0] if s == 1 else V_s), float).reshape(B)
            val = phi_v * res.weight * sphere**k * batch.simplex_volume * batch.parent_factor
            val = val * np.exp(logf - lq_root - batch.log_q)
            val = np.where(res.energy_cut_passed(params.R) & ~res.grazing, val, 0.0)
            if eps > 0:
                val = val * bbgky_prefactor(eps, s, k, d)
                bad = res.blocked | (res.recollision if exclude_recollisions else False)
                val = np.where(bad, 0.0, val)
            acc.append(val)
        vals = np.concatenate(acc)
        total += float(vals.mean())
        var += float(vals.var(ddof=1)) / len(vals) if len(vals) > 1 else 0.0
        nz += int(np.count_nonzero(vals))
        nsamp += len(vals)
    if nz == 0 and k > 0:
        raise DegenerateEstimateError(f"no nonzero sample among {nsamp} for k = {k}")
    return ObservableEstimate(total, math.sqrt(var), nsamp, nz)


@dataclass
class SeriesResult:
    terms: list
    partial_sums: list
    increments: list
    ratios: list
    flags: list = field(default_factory=list)

    @property
    def value(self) -> float:
        return self.partial_sums[-1]

    @property
    def stderr(self) -> float:
        return math.sqrt(sum(e.stderr**2 for e in self.terms))


def observable_series(X_s, phi, t: float, f0, params: TruncationParams, per_k_budget: int, rng,
                      eps: float = 0.0, t_guard: float | None = None, Phi_kind="hard_sphere",
                      separated: bool = False) -> SeriesResult:
    """Truncated Duhamel series sum_{k <= n} of elementary observables.

    Each order uses an independent child stream of ``rng`` when it is an
    RngSpec, so orders can be recomputed separately.
    """
    import warnings

    from .core_types import RngSpec

    if t_guard is not None and t > t_guard:
        warnings.warn(f"t = {t} exceeds the existence horizon guard {t_guard}", RuntimeWarning, stacklevel=2)
    terms = []
    flags = []
    for k in range(params.n + 1):
        r = rng.child(k) if isinstance(rng, RngSpec) else rng
        est = elementary_observable(X_s, phi, t, f0, params, per_k_budget, r, k, eps=eps,
                                    Phi_kind=Phi_kind, separated=separated)
        terms.append(est)
        if k > 0 and est.stderr > abs(est.value):
            flags.append(f"order {k}: CI wider than the estimate")
    partial = list(np.cumsum([e.value for e in terms]))
    incr = [abs(e.value) for e in terms[1:]]
    ratios = [incr[i + 1] / incr[i] if incr[i] > 0 else math.inf for i in range(len(incr) - 1)]
    return SeriesResult(terms, [float(p) for p in partial], incr, ratios, flags)


# ---------------------------------------------------------------------------
# geometry of the bad sets
# ---------------------------------------------------------------------------

def in_cylinder(u, axis, radius):
    """Whether the rows of u lie within ``radius`` of the line spanned by ``axis``."""
    u = np.asarray(u, float)
    e = np.asarray(axis, float)
    e = e / np.linalg.norm(e, axis=-1, keepdims=True)
    par = np.sum(u * e, axis=-1, keepdims=True)
    return np.linalg.norm(u - par * e, axis=-1) <= radius


def cylinder_lemma_check(xbar1, xbar2, v1, params: TruncationParams, n_mc: int, rng, eps: float | None = None,
                         variant: str = "contact", inside: bool = False, chunk: int = 500_000) -> int:
    """Count violations of the free-transport cylinder lemma.

    x1, x2 are uniform in the a-balls around xbar1, xbar2 and v2 uniform in
    B_R, conditioned to have v1 - v2 outside the cylinder of axis
    xbar1 - xbar2 (``inside=True`` samples inside instead, as a sanity
    inversion).  ``variant="contact"``: radius 6 R a / eps0 and the claim
    |dx - tau dv| > eps for tau >= 0.  ``variant="delta"``: radius
    6 eps0 / delta and the claim |dx - tau dv| > eps0 for tau >= delta.
    """
    gen = as_generator(rng)
    xbar1 = np.asarray(xbar1, float)
    xbar2 = np.asarray(xbar2, float)
    v1 = np.asarray(v1, float)
    d = xbar1.size
    if np.linalg.norm(xbar1 - xbar2) < params.eps0:
        raise ValueError("need |xbar1 - xbar2| >= eps0")
    eps = params.a if eps is None else eps
    if variant == "contact":
        radius, thresh, tau0 = 6 * params.R * params.a / params.eps0, eps, 0.0
    elif variant == "delta":
        radius, thresh, tau0 = 6 * params.eps0 / params.delta, params.eps0, params.delta
    else:
        raise ValueError("variant must be 'contact' or 'delta'")
    axis = xbar1 - xbar2
    violations = 0
    done = 0
    while done < n_mc:
        B = min(chunk, n_mc - done)
        x1 = xbar1 + sample_ball(gen, B, d, params.a)
        x2 = xbar2 + sample_ball(gen, B, d, params.a)
        v2 = sample_ball(gen, B, d, params.R)
        cyl = in_cylinder(v1 - v2, axis, radius)
        keep = cyl if inside else ~cyl
        dx = (x1 - x2)[keep]
        dv = (v1 - v2)[keep]
        if tau0 > 0:
            dx = dx - tau0 * dv
        dist = backward_min_distance(dx, dv)
        violations += int(np.count_nonzero(dist <= thresh))
        done += B
    return violations


def _reflect_pair(nu, v1, v2, Phi_kind):
    """sigma0^{-1} on post-collisional rows (nu, v1, v2): returns (v1*, v2*)."""
    pot = _kind(Phi_kind)
    if pot.hard_sphere:
        c = np.sum(nu * (v1 - v2), axis=1, keepdims=True)
        return v1 - c * nu, v2 + c * nu
    a = np.empty_like(v1)
    b = np.empty_like(v2)
    for r in range(len(nu)):
        _, a[r], b[r] = sigma0_inverse(nu[r], v1[r], v2[r], pot)
    return a, b


def reflected_cylinder_measure(w, y, rho: float, v1, R: float, n_mc: int, rng, eta: float = 0.0,
                               Phi_kind="hard_sphere") -> float:
    """Measure in S^{d-1} x B_R of the post-collisional (nu, v2) with (v2 - v1) . nu > eta
    whose pre-collisional velocities v1*, v2* fall in w + K(y, rho)."""
    gen = as_generator(rng)
    v1 = np.asarray(v1, float)
    d = v1.size
    nu = sample_unit_sphere(gen, n_mc, d)
    v2 = sample_ball(gen, n_mc, d, R)
    post = np.sum((v2 - v1) * nu, axis=1) > eta
    hit = np.zeros(n_mc, bool)
    if post.any():
        v2s, v1s = _reflect_pair(nu[post], v2[post], np.broadcast_to(v1, v2[post].shape).copy(), Phi_kind)
        h = in_cylinder(v1s - w, y, rho) | in_cylinder(v2s - w, y, rho)
        hit[np.nonzero(post)[0]] = h
    total = unit_sphere_area(d) * unit_ball_volume(d) * R**d
    return float(total * hit.mean())


@dataclass
class BadSetMeasure:
    total: float
    components: dict
    stderr: float
    fractions: dict


def bad_set_measure(Zbar: PhaseConfiguration, params: TruncationParams, n_mc: int, rng, parent: int | None = None,
                    Phi_kind="hard_sphere") -> BadSetMeasure:
    """Monte Carlo measure of the pathological set of (nu, v) in S^{d-1} x B_R
    for a particle adjoined to ``parent`` (default: the last particle).

    Components:
      ball      |v - vbar_m| <= eta (any nu)
      cylinder  pre-collisional and v in vbar_j + K(xbar_j - xbar_m, 6Ra/eps0 + 6R eps0/delta)
      cone      post-collisional, nu . (v - vbar_m) <= eta, outside the ball
      reflected post-collisional, outside the cone, and one of the pre-collisional
                velocities in vbar_j + K(xbar_j - xbar_m, 12Ra/eps0 + 12R eps0/delta)
    """
    ok, _ = good_config_check(Zbar, params.eps0)
    if not ok:
        raise ValueError("the reference configuration is not in G_k(eps0)")
    gen = as_generator(rng)
    k, d = Zbar.n, Zbar.d
    m = k - 1 if parent is None else parent
    nu = sample_unit_sphere(gen, n_mc, d)
    v = sample_ball(gen, n_mc, d, params.R)
    vm = Zbar.v[m]
    c = np.sum(nu * (v - vm), axis=1)
    pre = c < 0
    post = c > 0
    ball = np.linalg.norm(v - vm, axis=1) <= params.eta
    rho_pre = 6 * params.R * (params.a / params.eps0 + params.eps0 / params.delta)
    rho_post = 2 * rho_pre
    cyl = np.zeros(n_mc, bool)
    refl = np.zeros(n_mc, bool)
    cone = post & (c <= params.eta) & ~ball
    others = [j for j in range(k) if j != m]
    idx = np.nonzero(post & ~cone)[0]
    if others and idx.size:
        vs, vms = _reflect_pair(nu[idx], v[idx], np.broadcast_to(vm, (idx.size, d)).copy(), Phi_kind)
    for j in others:
        axis = Zbar.x[j] - Zbar.x[m]
        cyl |= pre & in_cylinder(v - Zbar.v[j], axis, rho_pre)
        if idx.size:
            h = in_cylinder(vs - Zbar.v[j], axis, rho_post) | in_cylinder(vms - Zbar.v[j], axis, rho_post)
            refl[idx[h]] = True
    union = ball | cyl | cone | refl
    total_measure = unit_sphere_area(d) * unit_ball_volume(d) * params.R**d
    fr = {"ball": ball.mean(), "cylinder": cyl.mean(), "cone": cone.mean(), "reflected": refl.mean()}
    comps = {key: float(total_measure * val) for key, val in fr.items()}
    p = union.mean()
    return BadSetMeasure(float(total_measure * p), comps, float(total_measure * math.sqrt(p * (1 - p) / n_mc)),
                         {key: float(val) for key, val in fr.items()})


def pathological_size_form(k: int, params: TruncationParams, d: int) -> float:
    """k (R eta^(d-1) + R^d (a/eps0)^(d-1) + R (eps0/delta)^(d-1)), the shape of the bad-set bound."""
    R = params.R
    return k * (R * params.eta ** (d - 1) + R**d * (params.a / params.eps0) ** (d - 1)
                + R * (params.eps0 / params.delta) ** (d - 1))


def random_good_configuration(k: int, d: int, params: TruncationParams, rng, box: float = 1.0,
                              max_tries: int = 10_000) -> PhaseConfiguration:
    """Positions uniform in [0, box]^d and velocities uniform in B_R, resampled until
    the configuration is in G_k(eps0)."""
    gen = as_generator(rng)
    for _ in range(max_tries):
        Z = PhaseConfiguration(gen.random((k, d)) * box, sample_ball(gen, k, d, params.R))
        if good_config_check(Z, params.eps0)[0]:
            return Z
    raise RuntimeError("could not draw a good configuration")


# ---------------------------------------------------------------------------
# recollisions
# ---------------------------------------------------------------------------

@dataclass
class RecollisionPoint:
    eps: float
    fraction: float
    stderr: float
    n: int


def recollision_scaling(s: int, k: int, t: float, params, eps_list, n_mc: int, rng,
                        d: int = 2, separated: bool = True, chunk: int = 200_000) -> list:
    """Fraction of BBGKY pseudo-trajectories with a recollision, for each eps.

    ``params`` is either fixed or a callable eps -> TruncationParams (for
    instance :func:`truncation_schedule`).  Roots sit at the origin (s = 1)
    or on a line with spacing 1, with velocities uniform in B_R; trees are
    drawn without any bad-set exclusion.  Each eps uses an independent child stream when ``rng`` is an
    RngSpec; otherwise one generator is shared in order.
    """
    from .core_types import RngSpec

    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps values must be strictly decreasing")
    out = []
    for idx, eps in enumerate(eps_list):
        gen = rng.child(idx).generator() if isinstance(rng, RngSpec) else as_generator(rng)
        pe = params(eps) if callable(params) else params
        hits = 0
        done = 0
        while done < n_mc:
            B = min(chunk, n_mc - done)
            X = np.zeros((B, s, d))
            X[:, :, 0] = np.arange(s)[None, :]
            V = sample_ball(gen, B * s, d, pe.R).reshape(B, s, d)
            batch = sample_trees(s, k, t, pe, B, gen, d=d, separated=separated)
            res = _pseudo_trajectories(X, V, batch, eps)
            hits += int(np.count_nonzero(res.recollision))
            done += B
        p = hits / n_mc
        out.append(RecollisionPoint(eps, p, math.sqrt(p * (1 - p) / n_mc), n_mc))
    return out
