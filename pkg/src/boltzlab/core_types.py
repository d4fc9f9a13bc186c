"""Shared domain types, potentials, Hamiltonians and the randomness contract.

Everything else in the package is built on top of the small value types
defined here.  Configurations are stored as two ``(n, d)`` float arrays so
that the numerical modules can work on them without conversion.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gamma as _gamma

SUPPORTED_DIMENSIONS = (2, 3)


def check_dimension(d: int) -> int:
    if d not in SUPPORTED_DIMENSIONS:
        raise ValueError(f"dimension must be 2 or 3, got {d!r}")
    return int(d)


def unit_ball_volume(d: int) -> float:
    """Volume kappa_d of the unit ball in R^d."""
    return math.pi ** (d / 2) / _gamma(d / 2 + 1)


def unit_sphere_area(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1}."""
    return d * unit_ball_volume(d)


# ---------------------------------------------------------------------------
# phase space
# ---------------------------------------------------------------------------

def _frozen(a, d=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim == 1 and d is None:
        pass
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PhasePoint:
    """A single particle (x, v)."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = _frozen(self.x)
        v = _frozen(self.v)
        if x.ndim != 1 or v.ndim != 1 or x.shape != v.shape:
            raise ValueError("x and v must be vectors of the same length")
        check_dimension(x.shape[0])
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @property
    def d(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class PhaseConfiguration:
    """Ordered list of particles, stored as position and velocity arrays.

    ``x`` and ``v`` have shape ``(n, d)``.  Hard-sphere exclusion is not
    enforced here; use :meth:`is_separated` where it matters.
    """

    x: np.ndarray
    v: np.ndarray
    d: int = field(default=0)

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        v = np.array(self.v, dtype=float)
        d = self.d or (x.shape[-1] if x.ndim == 2 else 0)
        if x.size == 0:
            d = check_dimension(d or 2)
            x = x.reshape(0, d)
            v = v.reshape(0, d)
        if x.ndim != 2 or x.shape != v.shape:
            raise ValueError("x and v must be (n, d) arrays of equal shape")
        check_dimension(x.shape[1])
        if self.d and self.d != x.shape[1]:
            raise ValueError("declared dimension does not match arrays")
        x.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "d", x.shape[1])

    @classmethod
    def from_points(cls, points: Sequence[PhasePoint], d: int | None = None):
        if len(points) == 0:
            return cls(np.zeros((0, d or 2)), np.zeros((0, d or 2)), d or 2)
        return cls(np.array([p.x for p in points]), np.array([p.v for p in points]))

    def __len__(self):
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i) -> PhasePoint:
        return PhasePoint(self.x[i], self.v[i])

    @property
    def particles(self) -> list:
        return [self[i] for i in range(self.n)]

    def min_distance(self) -> float:
        if self.n < 2:
            return math.inf
        dx = self.x[:, None, :] - self.x[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", dx, dx))
        iu = np.triu_indices(self.n, 1)
        return float(r[iu].min())

    def is_separated(self, eps: float) -> bool:
        """True when every pair is at distance >= eps."""
        return self.min_distance() >= eps

    def with_arrays(self, x=None, v=None) -> "PhaseConfiguration":
        return PhaseConfiguration(self.x if x is None else x, self.v if v is None else v)


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------

def boltzmann_grad_epsilon(N: int, d: int) -> float:
    """Diameter eps such that N eps^(d-1) = 1."""
    check_dimension(d)
    if N < 1:
        raise ValueError("N must be >= 1")
    return float(N) ** (-1.0 / (d - 1))


@dataclass(frozen=True)
class SimScaling:
    N: int
    epsilon: float
    d: int
    boltzmann_grad: bool = True

    def __post_init__(self):
        check_dimension(self.d)
        if self.N < 0 or self.epsilon <= 0:
            raise ValueError("need N >= 0 and epsilon > 0")
        if self.boltzmann_grad:
            prod = self.N * self.epsilon ** (self.d - 1)
            if abs(prod - 1.0) > 1e-12:
                raise ValueError(f"N eps^(d-1) = {prod!r}, expected 1")

    @classmethod
    def boltzmann_grad_scaling(cls, N: int, d: int) -> "SimScaling":
        return cls(N, boltzmann_grad_epsilon(N, d), d, True)


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialSpec:
    """Radial repulsive potential supported in the unit ball.

    The closures are only ever called on (0, 1); :meth:`__call__` and the
    derivative helpers return exactly 0 for rho >= 1 whatever the closures
    would give.  ``hard_sphere`` is a limit object without closures.
    """

    label: str
    phi_inner: Callable | None = None
    dphi_inner: Callable | None = None
    ddphi_inner: Callable | None = None
    hard_sphere: bool = False

    def _eval(self, f, rho):
        if self.hard_sphere:
            raise ValueError("the hard-sphere potential is never evaluated")
        r = np.asarray(rho, dtype=float)
        out = np.zeros_like(r)
        inside = (r > 0) & (r < 1)
        if np.any(r <= 0):
            raise ValueError("potential evaluated at rho <= 0")
        if np.any(inside):
            out[inside] = f(r[inside])
        return out if out.ndim else float(out)

    def phi(self, rho):
        return self._eval(self.phi_inner, rho)

    __call__ = phi

    def dphi(self, rho):
        return self._eval(self.dphi_inner, rho)

    def ddphi(self, rho):
        return self._eval(self.ddphi_inner, rho)

    def inverse(self, value: float) -> float:
        """Solve phi(rho) = value for rho in (0, 1) (phi assumed decreasing)."""
        from scipy.optimize import brentq

        if value <= 0:
            return 1.0
        f = lambda r: self.phi(r) - value
        lo = 0.5
        while f(lo) < 0:
            lo *= 0.5
            if lo < 1e-300:
                raise ValueError(f"phi never reaches {value}")
        return brentq(f, lo, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def _exp_barrier_phi(r):
    return np.exp(-1.0 / (1.0 - r * r)) / r


def _exp_barrier_dphi(r):
    q = 1.0 - r * r
    return np.exp(-1.0 / q) * (-2.0 / q**2 - 1.0 / r**2)


def _exp_barrier_ddphi(r):
    q = 1.0 - r * r
    e = np.exp(-1.0 / q)
    gp = -2.0 * r / q**2
    h = -2.0 / q**2 - 1.0 / r**2
    hp = -8.0 * r / q**3 + 2.0 / r**3
    return e * (gp * h + hp)


EXP_BARRIER = PotentialSpec("exp_barrier", _exp_barrier_phi, _exp_barrier_dphi, _exp_barrier_ddphi)

QUADRATIC_CAP = PotentialSpec(
    "quadratic_cap",
    lambda r: (1.0 - r) ** 2,
    lambda r: -2.0 * (1.0 - r),
    lambda r: np.full_like(r, 2.0),
)

HARD_SPHERE = PotentialSpec("hard_sphere", hard_sphere=True)

ZERO_POTENTIAL = PotentialSpec(
    "zero", lambda r: np.zeros_like(r), lambda r: np.zeros_like(r), lambda r: np.zeros_like(r)
)

POTENTIALS = {p.label: p for p in (EXP_BARRIER, QUADRATIC_CAP, HARD_SPHERE, ZERO_POTENTIAL)}


def get_potential(label: str) -> PotentialSpec:
    try:
        pot = POTENTIALS[label]
    except KeyError:
        raise ValueError(f"unknown potential {label!r}; known: {sorted(POTENTIALS)}") from None
    if not pot.hard_sphere and not _is_unbounded(pot):
        warnings.warn(f"potential {label!r} is bounded near 0; accepted for quadrature use",
                      stacklevel=2)
    return pot


def _is_unbounded(pot: PotentialSpec) -> bool:
    rs = 10.0 ** -np.arange(3, 13)
    vals = pot.phi(rs)
    return bool(np.all(np.diff(vals) > 0) and vals[-1] > 1e6)


# ---------------------------------------------------------------------------
# Hamiltonians
# ---------------------------------------------------------------------------

def free_hamiltonian(Z: PhaseConfiguration) -> float:
    """Kinetic energy sum |v_i|^2 / 2."""
    return 0.5 * float(np.sum(Z.v * Z.v))


def epsilon_hamiltonian(Z: PhaseConfiguration, pot: PotentialSpec, eps: float) -> float:
    """Kinetic energy plus pair energy sum_{i<k} phi(|x_i - x_k| / eps).

    Returns ``inf`` when two particles coincide.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    e = free_hamiltonian(Z)
    n = Z.n
    if n < 2:
        return e
    iu = np.triu_indices(n, 1)
    dx = Z.x[iu[0]] - Z.x[iu[1]]
    r = np.sqrt(np.sum(dx * dx, axis=1)) / eps
    if np.any(r == 0):
        return math.inf
    close = r < 1
    if not np.any(close):
        return e
    if pot.hard_sphere:
        return math.inf
    return e + float(np.sum(pot.phi(r[close])))


@dataclass
class PropertyCheck:
    passed: bool
    worst_value: float
    worst_location: float


def validate_potential(pot: PotentialSpec, grid_size: int = 2000) -> dict:
    """Grid check of the structural assumptions on a potential.

    Checks nonnegativity, monotonicity (phi' <= 0), compact support,
    vanishing at the boundary, the cross-section condition
    rho phi'' + 2 phi' >= 0, and whether phi blows up near 0.  Each entry of
    the returned dict is a :class:`PropertyCheck`.
    """
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    if pot.hard_sphere:
        raise ValueError("hard_sphere has no profile to validate")
    rho = np.linspace(0.0, 1.0, grid_size + 2)[1:-1]
    phi = pot.phi(rho)
    dphi = pot.dphi(rho)
    ddphi = pot.ddphi(rho)

    def check(values, ok_mask):
        i = int(np.argmin(values))
        return PropertyCheck(bool(np.all(ok_mask)), float(values[i]), float(rho[i]))

    report = {
        "nonnegative": check(phi, phi >= 0),
        "nonincreasing": check(-dphi, dphi <= 0),
        "cross_section_condition": check(rho * ddphi + 2 * dphi, rho * ddphi + 2 * dphi >= 0),
    }
    outside = np.linspace(1.0, 2.0, grid_size)
    po = pot.phi(outside)
    report["compact_support"] = PropertyCheck(bool(np.all(po == 0)), float(np.max(np.abs(po))), 1.0)
    edge = float(pot.phi(1.0 - 1e-9))
    report["vanishes_at_boundary"] = PropertyCheck(abs(edge) < 1e-6, edge, 1.0 - 1e-9)
    unb = _is_unbounded(pot)
    report["unbounded_near_zero"] = PropertyCheck(unb, float(pot.phi(1e-12)), 1e-12)
    return report


# ---------------------------------------------------------------------------
# histograms
# ---------------------------------------------------------------------------

@dataclass
class Histogram:
    edges: list
    counts: np.ndarray
    density: np.ndarray

    @property
    def bin_volume(self) -> float:
        return float(np.prod([e[1] - e[0] for e in self.edges]))

    def centers(self):
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges]

    def integral(self) -> float:
        return float(self.density.sum() * self.bin_volume)


@dataclass(frozen=True)
class Binning:
    """Uniform bins on [lo, hi] in each coordinate."""

    lo: float = -4.0
    hi: float = 4.0
    nbins: int = 20

    def edges(self, ndim):
        e = np.linspace(self.lo, self.hi, self.nbins + 1)
        return [e] * ndim



# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RngSpec:
    """Reproducible random stream: (seed, stream) plus an optional spawn path.

    Generators are Philox (counter based) seeded through ``SeedSequence``
    with spawn key ``(stream, *path)``, so children are independent and
    their sequences do not depend on how work is spread across workers.
    """

    seed: int
    stream: int = 0
    path: tuple = ()

    def __post_init__(self):
        for val in (self.seed, self.stream, *self.path):
            if not (0 <= int(val) < 2**64):
                raise ValueError("seed, stream and path entries must be 64-bit unsigned")

    def child(self, *index: int) -> "RngSpec":
        return RngSpec(self.seed, self.stream, self.path + tuple(int(i) for i in index))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),) + self.path)
        return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept an RngSpec, an int seed or an existing Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSpec):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngSpec(int(rng)).generator()
    raise TypeError(f"cannot make a generator from {type(rng).__name__}")


def sample_unit_sphere(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sample_ball(rng: np.random.Generator, n: int, d: int, radius: float = 1.0) -> np.ndarray:
    u = sample_unit_sphere(rng, n, d)
    r = radius * rng.random(n) ** (1.0 / d)
    return u * r[:, None]
