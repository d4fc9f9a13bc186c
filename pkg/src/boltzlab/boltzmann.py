"""Spatially homogeneous Boltzmann equation: DSMC and diagnostics.

The velocity distribution is represented by n equally weighted particles.
Collisions follow the no-time-counter scheme: a majorant of the total
collision rate proposes candidate pairs and each one is accepted with
probability |g| / g_max, g being the relative velocity.  For both kernels
the total rate of a pair is kappa_{d-1} |g| (the area of the unit impact
disc times the relative speed), so only the law of the scattering direction
differs between hard spheres and a tabulated smooth potential.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .core_types import Binning, as_generator, check_dimension, unit_ball_volume
from .scattering import CrossSectionTable


class MajorantError(RuntimeError):
    """The table kernel was asked for a relative speed it does not cover."""


@dataclass
class VelocityEnsemble:
    velocities: np.ndarray
    weight: float | None = None
    t: float = 0.0

    def __post_init__(self):
        v = np.array(self.velocities, dtype=float)
        if v.ndim != 2 or v.shape[0] == 0:
            raise ValueError("an ensemble needs a nonempty (n, d) velocity array")
        check_dimension(v.shape[1])
        self.velocities = v
        if self.weight is None:
            self.weight = 1.0 / v.shape[0]

    @property
    def n(self) -> int:
        return self.velocities.shape[0]

    @property
    def d(self) -> int:
        return self.velocities.shape[1]

    def momentum(self) -> np.ndarray:
        return self.weight * self.velocities.sum(axis=0)

    def energy(self) -> float:
        return 0.5 * self.weight * float(np.sum(self.velocities**2))

    def temperature(self) -> float:
        u = self.velocities.mean(axis=0)
        return float(np.mean(np.sum((self.velocities - u) ** 2, axis=1))) / self.d

    def moment(self, p: int) -> float:
        """Central moment E|v - u|^p."""
        u = self.velocities.mean(axis=0)
        return float(np.mean(np.sum((self.velocities - u) ** 2, axis=1) ** (p / 2)))


@dataclass(frozen=True)
class MaxwellianParams:
    rho: float = 1.0
    u: tuple = (0.0, 0.0)
    theta: float = 1.0

    def __post_init__(self):
        if not (self.rho > 0 and self.theta > 0):
            raise ValueError("rho and theta must be positive")

    @property
    def d(self) -> int:
        return len(self.u)

    def sample(self, n: int, rng) -> np.ndarray:
        gen = as_generator(rng)
        return np.asarray(self.u) + math.sqrt(self.theta) * gen.standard_normal((n, self.d))


def maxwellian_density(p: MaxwellianParams, v) -> np.ndarray | float:
    v = np.asarray(v, float)
    d = p.d
    r2 = np.sum((v - np.asarray(p.u)) ** 2, axis=-1)
    out = p.rho * (2 * math.pi * p.theta) ** (-d / 2) * np.exp(-r2 / (2 * p.theta))
    return float(out) if np.ndim(out) == 0 else out


def gaussian_entropy(d: int, theta: float = 1.0, rho: float = 1.0) -> float:
    """Closed form of the integral of M log M for a Maxwellian."""
    return rho * math.log(rho) - rho * 0.5 * d * (1.0 + math.log(2 * math.pi * theta))


# ---------------------------------------------------------------------------
# binary collisions
# ---------------------------------------------------------------------------

def post_collision_velocities(v, v1, omega):
    """(v', v1') = (v + (omega.(v1-v)) omega, v1 - (omega.(v1-v)) omega); works row-wise."""
    v = np.asarray(v, float)
    v1 = np.asarray(v1, float)
    omega = np.asarray(omega, float)
    c = np.sum(omega * (v1 - v), axis=-1, keepdims=True)
    return v + c * omega, v1 - c * omega


def total_rate_constant(d: int) -> float:
    """Integral over the sphere of (omega . e)_+ , which equals kappa_{d-1}."""
    return float(unit_ball_volume(d - 1))


def _perpendicular_unit(g_hat: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Uniformly random unit vectors orthogonal to the rows of g_hat."""
    n, d = g_hat.shape
    if d == 2:
        perp = np.column_stack([-g_hat[:, 1], g_hat[:, 0]])
        return perp * np.where(gen.random(n) < 0.5, -1.0, 1.0)[:, None]
    z = gen.standard_normal((n, d))
    z -= np.sum(z * g_hat, axis=1, keepdims=True) * g_hat
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def sample_impact(n: int, d: int, gen: np.random.Generator) -> np.ndarray:
    """Impact parameter J0 = |impact vector| for a uniform point in the unit (d-1)-ball."""
    u = gen.random(n)
    return u if d == 2 else np.sqrt(u)


def sample_scattering_direction(g, kernel, gen: np.random.Generator) -> np.ndarray:
    """omega distributed proportionally to b(g, omega) for each row g."""
    g = np.asarray(g, float)
    n, d = g.shape
    speed = np.linalg.norm(g, axis=1)
    g_hat = g / np.where(speed > 0, speed, 1.0)[:, None]
    J0 = sample_impact(n, d, gen)
    if isinstance(kernel, str):
        if kernel != "hard_sphere":
            raise ValueError(f"unknown kernel {kernel!r}")
        Theta = np.arcsin(J0)
    elif isinstance(kernel, CrossSectionTable):
        E0 = speed**2
        bad = (E0 < kernel.E0_grid[0]) | (E0 > kernel.E0_grid[-1])
        if np.any(bad):
            k = int(np.argmax(bad))
            raise MajorantError(
                f"relative speed w = {speed[k]!r} outside the tabulated range "
                f"(E0 in [{kernel.E0_grid[0]}, {kernel.E0_grid[-1]}]), Theta unavailable")
        Theta = kernel.theta_at(E0, J0)
    else:
        raise TypeError("kernel must be 'hard_sphere' or a CrossSectionTable")
    e_perp = _perpendicular_unit(g_hat, gen)
    return np.cos(Theta)[:, None] * g_hat + np.sin(Theta)[:, None] * e_perp


def dsmc_step(ens: VelocityEnsemble, dt: float, kernel="hard_sphere", rng=None) -> VelocityEnsemble:
    """Advance the ensemble by dt with no-time-counter collisions.

    Candidates are disjoint pairs from a random permutation.  If the
    expected candidate count exceeds n/2 the step is split into sub-steps.
    The number of candidates per sub-step is the integer part of the mean
    plus a Bernoulli draw for the remainder.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    gen = as_generator(0 if rng is None else rng)
    v = ens.velocities.copy()
    n, d = v.shape
    if n < 2:
        return VelocityEnsemble(v, ens.weight, ens.t + dt)
    c_d = total_rate_constant(d)
    u = v.mean(axis=0)
    gmax = 2.0 * float(np.max(np.linalg.norm(v - u, axis=1)))
    if gmax == 0.0:
        return VelocityEnsemble(v, ens.weight, ens.t + dt)
    mean_cand = 0.5 * n * c_d * gmax * dt
    nsub = max(1, int(math.ceil(mean_cand / (n // 2))))
    mean_sub = mean_cand / nsub
    for _ in range(nsub):
        m = int(mean_sub)
        if gen.random() < mean_sub - m:
            m += 1
        m = min(m, n // 2)
        if m == 0:
            continue
        perm = gen.permutation(n)[: 2 * m]
        a, b = perm[:m], perm[m:]
        g = v[b] - v[a]
        speed = np.linalg.norm(g, axis=1)
        acc = gen.random(m) * gmax < speed
        a, b, g = a[acc], b[acc], g[acc]
        if a.size == 0:
            continue
        omega = sample_scattering_direction(g, kernel, gen)
        v[a], v[b] = post_collision_velocities(v[a], v[b], omega)
    return VelocityEnsemble(v, ens.weight, ens.t + dt)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EntropyEstimate:
    H: float
    stderr: float
    occupied_bins: int


def entropy(ens: VelocityEnsemble, binning: Binning = Binning(-6.0, 6.0, 24)) -> EntropyEstimate:
    """Histogram estimate of the integral of f log f over velocity space.

    With bin probabilities p_k and bin volume V the plug-in value is
    sum p_k log(p_k / V).  The Miller-Madow term (K - 1) / (2n), K the
    number of occupied bins, removes the leading downward bias of the
    plug-in Shannon entropy, which enters here with the opposite sign.
    Samples outside the binned range are counted as a single extra bin so
    the probabilities still sum to one.
    """
    v = ens.velocities
    if v.shape[0] == 0:
        raise ValueError("empty ensemble")
    counts, edges = np.histogramdd(v, bins=binning.edges(v.shape[1]))
    vol = float(np.prod([e[1] - e[0] for e in edges]))
    n = v.shape[0]
    c = counts[counts > 0].ravel()
    outside = n - int(counts.sum())
    p = c / n
    logs = np.log(p / vol)
    H = float(np.sum(p * logs))
    K = c.size
    if outside:
        po = outside / n
        H += po * math.log(po / vol)
        K += 1
        logs = np.append(logs, math.log(po / vol))
        p = np.append(p, po)
    H_mm = H - (K - 1) / (2.0 * n)
    var = float(np.sum(p * logs**2) - H**2) / n
    return EntropyEstimate(H_mm, math.sqrt(max(var, 0.0)), K)


@dataclass(frozen=True)
class WeakEstimate:
    value: float
    stderr: float
    rounding: float

    def contains(self, target: float = 0.0, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.stderr + self.rounding

    @property
    def ci(self):
        h = 3.0 * self.stderr + self.rounding
        return self.value - h, self.value + h


def collision_operator_weak(ens: VelocityEnsemble, phi, kernel="hard_sphere", n_samples: int = 100_000,
                            rng=None) -> WeakEstimate:
    """Monte Carlo estimate of the integral of Q(f, f) phi over velocity space.

    Uses the symmetrised form
        1/2 E_{v, v1 ~ f} [ integral b(v1 - v, omega) (phi' + phi1' - phi - phi1) d omega ]
    with omega drawn from b / integral b, so every sample carries the factor
    kappa_{d-1} |v1 - v| / 2.  ``phi`` maps an (m, d) array to m values.
    Collision invariants give identically zero increments up to rounding,
    so the estimate reports a rounding allowance next to the standard error.
    """
    gen = as_generator(0 if rng is None else rng)
    v = ens.velocities
    n, d = v.shape
    if n < 2:
        return WeakEstimate(0.0, 0.0, 0.0)
    i = gen.integers(0, n, n_samples)
    j = (i + gen.integers(1, n, n_samples)) % n
    va, vb = v[i], v[j]
    g = vb - va
    omega = sample_scattering_direction(g, kernel, gen)
    vp, vbp = post_collision_velocities(va, vb, omega)
    terms = [np.asarray(phi(a), float) for a in (vp, vbp, va, vb)]
    rate = 0.5 * total_rate_constant(d) * np.linalg.norm(g, axis=1)
    x = rate * (terms[0] + terms[1] - terms[2] - terms[3])
    scale = rate * sum(np.abs(t) for t in terms)
    rounding = 64 * np.finfo(float).eps * float(np.mean(scale))
    return WeakEstimate(float(x.mean()), float(x.std(ddof=1) / math.sqrt(n_samples)), rounding)


# The local existence time for the Boltzmann equation scales like
# C_beta / |f0|; no numerical constant is available, so the guard uses 1.
EXISTENCE_CONSTANTS = {}
DEFAULT_EXISTENCE_CONSTANT = 1.0


def existence_horizon(f0_bound: float, beta: float = 1.0) -> float:
    """Heuristic runtime guard T = C_beta / f0_bound (C_beta = 1 placeholder)."""
    if not f0_bound > 0:
        raise ValueError("the bound must be positive")
    C = EXISTENCE_CONSTANTS.get(beta)
    if C is None:
        warnings.warn("no existence constant known for this beta; using the placeholder 1",
                      RuntimeWarning, stacklevel=2)
        C = DEFAULT_EXISTENCE_CONSTANT
    return C / f0_bound


# ---------------------------------------------------------------------------
# relaxation runs
# ---------------------------------------------------------------------------

def bimodal_ensemble(n: int, d: int, rng, separation: float = 2.0, spread: float = 0.3) -> VelocityEnsemble:
    """Two Gaussian beams at +/- separation/2 along the first axis (zero momentum)."""
    gen = as_generator(rng)
    v = spread * gen.standard_normal((n, d))
    v[: n // 2, 0] += 0.5 * separation
    v[n // 2:, 0] -= 0.5 * separation
    v -= v.mean(axis=0)
    return VelocityEnsemble(v)


@dataclass
class RelaxationRecord:
    t: float
    momentum: np.ndarray
    energy: float
    H: float
    H_stderr: float
    m4: float


@dataclass
class RelaxationResult:
    records: list = field(default_factory=list)
    final: VelocityEnsemble | None = None

    def H_series(self):
        return np.array([r.H for r in self.records]), np.array([r.H_stderr for r in self.records])


def relax(ens: VelocityEnsemble, dt: float, t_final: float, kernel="hard_sphere", rng=None,
          moments_every: int = 1, binning: Binning = Binning(-6.0, 6.0, 24)) -> RelaxationResult:
    """Repeated :func:`dsmc_step` with moment and entropy records."""
    gen = as_generator(0 if rng is None else rng)
    nsteps = int(round(t_final / dt))
    out = RelaxationResult()

    def record(e):
        h = entropy(e, binning)
        out.records.append(RelaxationRecord(e.t, e.momentum(), e.energy(), h.H, h.stderr, e.moment(4)))

    record(ens)
    for k in range(1, nsteps + 1):
        ens = dsmc_step(ens, dt, kernel, gen)
        if k % moments_every == 0 or k == nsteps:
            record(ens)
    out.final = ens
    return out


def write_relaxation_csv(path, result: RelaxationResult) -> None:
    d = len(result.records[0].momentum) if result.records else 3
    names = ["momentum_x", "momentum_y", "momentum_z"][:d]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *names, "energy", "H", "m4"])
        for r in result.records:
            w.writerow([repr(r.t), *[repr(float(m)) for m in r.momentum], repr(r.energy), repr(r.H), repr(r.m4)])


def maxwellian_ks_test(ens: VelocityEnsemble):
    """KS test of the speeds |v - u| against the Maxwellian speed law at the ensemble temperature."""
    u = ens.velocities.mean(axis=0)
    speeds = np.linalg.norm(ens.velocities - u, axis=1)
    theta = ens.temperature()
    if ens.d == 3:
        dist = stats.maxwell(scale=math.sqrt(theta))
    else:
        dist = stats.chi(df=ens.d, scale=math.sqrt(theta))
    return stats.kstest(speeds, dist.cdf)
