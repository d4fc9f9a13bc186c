"""Two-body scattering for compactly supported repulsive potentials.

Reduced variables: relative position dy (unit length = interaction range)
and relative velocity dw.  With E0 = |dw0|^2 and impact parameter
J0 = |dy0 ^ dw0| / |dw0| the radial motion obeys

    rho'^2 + Psi(rho) = E0,     Psi(rho) = E0 J0^2 / rho^2 + 4 phi(rho).

From this we get the minimal radius rho*, the interaction time tau*, the
half-deflection theta and Theta = arcsin(J0) + theta, which in turn fix
the apse direction omega and all scattering maps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import brentq

from .core_types import HARD_SPHERE, PhasePoint, PotentialSpec

_EPS = np.finfo(float).eps
HALF_PI = 0.5 * math.pi
GRAZING_J0 = 1e-10


class ScatteringError(RuntimeError):
    """Raised for malformed inputs or failed root/quadrature computations."""


class QuadratureError(ScatteringError):
    def __init__(self, msg, achieved_error=float("nan")):
        super().__init__(msg)
        self.achieved_error = achieved_error


class NonMonotoneDeflectionError(ScatteringError):
    """Theta(E0, .) is not strictly increasing, so it cannot be inverted.

    This is what happens for potentials violating
    rho phi'' + 2 phi' >= 0 badly enough.
    """


class GrazingError(ScatteringError):
    pass


@dataclass(frozen=True)
class ReducedInputs:
    E0: float
    J0: float

    def __post_init__(self):
        if not self.E0 > 0:
            raise ValueError("E0 must be positive")
        if not 0.0 <= self.J0 <= 1.0:
            raise ValueError("J0 must lie in [0, 1]")


@dataclass(frozen=True)
class ScatteringSolution:
    E0: float
    J0: float
    rho_star: float
    tau_star: float
    theta: float
    Theta: float
    quad_error: float = 0.0


def psi(rho, inp: ReducedInputs, pot: PotentialSpec):
    """Effective radial potential Psi(rho) = E0 J0^2 / rho^2 + 4 phi(rho)."""
    r = np.asarray(rho, dtype=float)
    if np.any(r <= 0):
        raise ValueError("rho must be positive")
    out = inp.E0 * inp.J0**2 / r**2 + 4.0 * pot.phi(r)
    return out if np.ndim(out) else float(out)


def _dpsi(r, inp, pot):
    return -2.0 * inp.E0 * inp.J0**2 / r**3 + 4.0 * pot.dphi(r)


def _ddpsi(r, inp, pot):
    return 6.0 * inp.E0 * inp.J0**2 / r**4 + 4.0 * pot.ddphi(r)


def rho_star(inp: ReducedInputs, pot: PotentialSpec) -> float:
    """Largest rho in (0, 1) with Psi(rho) = E0 (1 when J0 = 1)."""
    if pot.hard_sphere or inp.J0 >= 1.0:
        return 1.0
    E0 = inp.E0
    f = lambda r: psi(r, inp, pot) - E0
    # scan downwards from rho = 1 (where f < 0) for the outermost sign change
    candidates = [1.0 - 2.0**-m for m in range(12, 0, -1)]
    candidates += list(0.5 * 0.8 ** np.arange(1, 1500))
    hi = 1.0
    for lo in candidates:
        if lo < 1e-140:
            break
        if f(lo) >= 0:
            break
        hi = lo
    else:
        lo = 0.0
    if lo < 1e-140 or f(lo) < 0:
        raise ScatteringError(
            f"Psi - E0 has no sign change on (0, 1) for E0={E0}, J0={inp.J0}; "
            "the potential is too weak to turn the particle around")
    return brentq(f, lo, hi, xtol=1e-16, rtol=4 * _EPS, maxiter=500)


class _Integrand:
    """Integrands of tau* and theta after the substitution rho = rho* + (1 - rho*) u^2.

    The inverse square-root singularity at rho* cancels against the Jacobian
    2 (1 - rho*) u.  E0 - Psi(rho) is evaluated as Psi(rho*) - Psi(rho), with
    a second-order Taylor expansion very close to rho* to avoid cancellation.
    """

    def __init__(self, inp, pot, rs):
        self.inp, self.pot, self.rs = inp, pot, rs
        self.span = 1.0 - rs
        self.psi_s = psi(rs, inp, pot)
        self.d1 = -_dpsi(rs, inp, pot)
        self.d2 = -0.5 * _ddpsi(rs, inp, pot)
        self.h_switch = 1e-6 * max(rs, 1e-3)

    def gap(self, u):
        h = self.span * u * u
        if h < self.h_switch:
            return h * (self.d1 + self.d2 * h)
        return self.psi_s - psi(self.rs + h, self.inp, self.pot)

    def tau(self, u):
        if u == 0.0:
            return 2.0 * 2.0 * math.sqrt(self.span / self.d1)
        return 2.0 * 2.0 * self.span * u / math.sqrt(self.gap(u))

    def theta(self, u):
        rho = self.rs + self.span * u * u
        c = math.sqrt(self.inp.E0) * self.inp.J0 / rho**2
        if u == 0.0:
            return c * 2.0 * math.sqrt(self.span / self.d1)
        return c * 2.0 * self.span * u / math.sqrt(self.gap(u))


def _integrate(f, epsabs=1e-13, epsrel=1e-12):
    val, err = quad(f, 0.0, 1.0, epsabs=epsabs, epsrel=epsrel, limit=400)
    if not np.isfinite(val) or err > 1e-8 * max(1.0, abs(val)):
        raise QuadratureError(f"quadrature did not converge (value {val}, error {err})", err)
    return val, err


def tau_star_bounds(inp: ReducedInputs, pot: PotentialSpec) -> float:
    """Upper bound on tau* from the a priori scattering estimates (inf if none applies)."""
    E0, J0 = inp.E0, inp.J0
    bound = math.inf
    if J0 > 0:
        bound = 2.0 * math.sqrt(max(0.0, 1.0 - J0 * J0)) / (J0 * J0 * math.sqrt(E0))
    if not pot.hard_sphere:
        try:
            r4 = pot.inverse(E0 / 4.0)
        except ValueError:
            return bound
        i0 = r4 / (2.0 * math.sqrt(2.0))
        if J0 >= i0:
            bound = min(bound, 16.0 / (math.sqrt(E0) * r4 * r4))
    return bound


def tau_star(inp: ReducedInputs, pot: PotentialSpec, check_bound: bool = True) -> float:
    """Interaction time tau* = 2 int_{rho*}^1 (E0 - Psi)^(-1/2) drho."""
    return deflection(inp, pot, check_bound=check_bound).tau_star


def deflection(inp: ReducedInputs, pot: PotentialSpec, check_bound: bool = True) -> ScatteringSolution:
    """Full scattering solution (rho*, tau*, theta, Theta) for given E0, J0."""
    return _deflection_cached(float(inp.E0), float(inp.J0), pot, check_bound)


@lru_cache(maxsize=200_000)
def _deflection_cached(E0, J0, pot, check_bound):
    inp = ReducedInputs(E0, J0)
    if pot.hard_sphere:
        return ScatteringSolution(E0, J0, 1.0, 0.0, 0.0, math.asin(J0), 0.0)
    if J0 >= 1.0:
        return ScatteringSolution(E0, J0, 1.0, 0.0, 0.0, HALF_PI, 0.0)
    rs = rho_star(inp, pot)
    if rs >= 1.0:
        return ScatteringSolution(E0, J0, 1.0, 0.0, 0.0, math.asin(J0), 0.0)
    ig = _Integrand(inp, pot, rs)
    tau, etau = _integrate(ig.tau)
    if J0 > 0:
        th, eth = _integrate(ig.theta)
    else:
        th, eth = 0.0, 0.0
    if check_bound:
        bound = tau_star_bounds(inp, pot)
        if tau > bound * (1 + 1e-9):
            raise ScatteringError(f"tau*={tau} exceeds the a priori bound {bound}")
    Theta = math.asin(J0) + th
    return ScatteringSolution(E0, J0, rs, tau, th, Theta, etau + eth)


# ---------------------------------------------------------------------------
# reduced ODE
# ---------------------------------------------------------------------------

@dataclass
class ReducedTrajectory:
    dy_exit: np.ndarray
    dw_exit: np.ndarray
    tau_exit: float
    rho_min: float
    energy_drift: float
    nfev: int

    @property
    def Theta(self) -> float:
        """Theta recovered from the total deflection pi - 2 Theta."""
        return self._Theta

    def set_entry(self, dw0):
        w0 = np.asarray(dw0, float)
        w1 = self.dw_exit
        if w0.size == 2:
            cross = abs(w0[0] * w1[1] - w0[1] * w1[0])
        else:
            cross = np.linalg.norm(np.cross(w0, w1))
        chi = math.atan2(cross, float(w0 @ w1))
        self._Theta = 0.5 * (math.pi - chi)


def _reduced_energy(y, pot):
    d = y.size // 2
    r = math.sqrt(float(y[:d] @ y[:d]))
    return 0.5 * float(y[d:] @ y[d:]) + 2.0 * float(pot.phi(r))


def integrate_reduced_ode(dy0, dw0, pot: PotentialSpec, dt: float | None = None,
                          rtol: float = 1e-13, atol: float = 1e-15,
                          max_steps: int = 2_000_000) -> ReducedTrajectory:
    """Integrate dy' = dw, dw' = -2 grad phi(dy) from the unit sphere until exit.

    Uses the explicit 8th order Dormand-Prince scheme with event location
    for the exit |dy| = 1 and for the turning point dy . dw = 0.  ``dt``
    caps the step size.
    """
    dy0 = np.asarray(dy0, float)
    dw0 = np.asarray(dw0, float)
    d = dy0.size
    if abs(np.linalg.norm(dy0) - 1.0) > 1e-12:
        raise ValueError("|dy0| must be 1")
    if dy0 @ dw0 >= 0:
        raise ValueError("initial datum must be pre-collisional (dy0 . dw0 < 0)")
    if pot.hard_sphere:
        raise ValueError("use the closed-form reflection for hard spheres")

    def rhs(_, y):
        x = y[:d]
        r = math.sqrt(float(x @ x))
        out = np.empty_like(y)
        out[:d] = y[d:]
        out[d:] = -2.0 * float(pot.dphi(r)) * x / r if 0 < r < 1 else 0.0
        return out

    def exit_event(_, y):
        return float(y[:d] @ y[:d]) - 1.0

    exit_event.terminal = True
    exit_event.direction = 1.0

    def turn_event(_, y):
        return float(y[:d] @ y[d:])

    turn_event.direction = 1.0

    speed = float(np.linalg.norm(dw0))
    inp = reduced_inputs_from_state(dy0, dw0)
    bound = tau_star_bounds(inp, pot)
    # generous horizon: the terminal exit event stops the integration
    horizon = 10.0 / speed + (10.0 * bound if np.isfinite(bound) else 1e4 / speed)
    y0 = np.concatenate([dy0, dw0])
    sol = solve_ivp(rhs, (0.0, horizon), y0, method="DOP853", rtol=rtol, atol=atol,
                    events=(exit_event, turn_event), max_step=dt if dt else np.inf, dense_output=False)
    if sol.status != 1 or len(sol.t_events[0]) == 0:
        raise ScatteringError(f"reduced ODE did not exit the interaction ball ({sol.message})")
    if sol.nfev > max_steps * 13:
        raise ScatteringError("step-count cap exceeded")
    ye = sol.y_events[0][0]
    if len(sol.y_events[1]):
        yt = sol.y_events[1][0]
        rho_min = float(np.linalg.norm(yt[:d]))
    else:
        rho_min = float(np.min(np.linalg.norm(sol.y[:d], axis=0)))
    e0 = _reduced_energy(y0, pot)
    drift = abs(_reduced_energy(ye, pot) - e0) / e0
    tr = ReducedTrajectory(ye[:d].copy(), ye[d:].copy(), float(sol.t_events[0][0]), rho_min, drift, sol.nfev)
    tr.set_entry(dw0)
    return tr


def ode_deflection(E0: float, J0: float, pot: PotentialSpec, d: int = 2) -> ReducedTrajectory:
    """Reduced trajectory entering at dy0 = e_1 with |dw0|^2 = E0 and impact parameter J0."""
    a = math.asin(J0)
    dy0 = np.zeros(d)
    dy0[0] = 1.0
    dw0 = np.zeros(d)
    dw0[0] = -math.cos(a)
    dw0[1] = math.sin(a)
    return integrate_reduced_ode(dy0, math.sqrt(E0) * dw0, pot)


def oracle_comparison_rows(pot: PotentialSpec, E0_values, J0_values):
    """Rows (E0, J0, Theta_quad, Theta_ode, tau_quad, tau_ode) comparing the two routes."""
    rows = []
    for E0 in E0_values:
        for J0 in J0_values:
            q = deflection(ReducedInputs(float(E0), float(J0)), pot)
            o = ode_deflection(float(E0), float(J0), pot)
            rows.append((float(E0), float(J0), q.Theta, o.Theta, q.tau_star, o.tau_exit))
    return rows


def _impact(dy, dw):
    nw2 = float(dw @ dw)
    c = float(dy @ dw)
    return math.sqrt(max(0.0, float(dy @ dy) * nw2 - c * c) / nw2)


def reduced_inputs_from_state(dy0, dw0) -> ReducedInputs:
    dy0 = np.asarray(dy0, float)
    dw0 = np.asarray(dw0, float)
    return ReducedInputs(float(dw0 @ dw0), min(1.0, _impact(dy0, dw0)))


# ---------------------------------------------------------------------------
# inversion and cross-section
# ---------------------------------------------------------------------------

MONOTONE_GRID = 40


MONOTONE_TOL = 1e-9


@lru_cache(maxsize=4096)
def _theta_samples(E0, pot):
    J = np.linspace(0.0, 1.0, MONOTONE_GRID + 1)
    T = np.empty_like(J)
    for k, j in enumerate(J):
        try:
            T[k] = deflection(ReducedInputs(E0, j), pot).Theta
        except ScatteringError:
            if j != 0.0:
                raise
            # bounded potential below the head-on threshold: the particle passes
            # straight through, which is the undeflected value pi/2
            T[k] = HALF_PI
    return J, T


def check_monotone_deflection(E0: float, pot: PotentialSpec):
    """Sample J0 -> Theta(E0, J0) and raise if it is not increasing.

    Decreases smaller than ``MONOTONE_TOL`` are treated as quadrature noise;
    they only occur next to J0 = 1 where Theta flattens out at pi/2.
    """
    J, T = _theta_samples(float(E0), pot)
    bad = np.where(np.diff(T) < -MONOTONE_TOL)[0]
    if bad.size:
        j = bad[0]
        raise NonMonotoneDeflectionError(
            f"Theta(E0={E0}, J0) decreases between J0={J[j]:.4g} and {J[j+1]:.4g} "
            f"({T[j]:.6g} -> {T[j+1]:.6g}); the potential {pot.label!r} does not satisfy "
            "the cross-section condition rho phi'' + 2 phi' >= 0 closely enough to invert")
    return J, np.maximum.accumulate(T)


def invert_deflection(E0: float, Theta: float, pot: PotentialSpec, xtol: float = 1e-14) -> float:
    """Impact parameter J0 in [0, 1] with Theta(E0, J0) = Theta."""
    if not 0.0 <= Theta <= HALF_PI:
        raise ValueError("Theta must lie in [0, pi/2]")
    if pot.hard_sphere:
        return math.sin(Theta)
    J, T = check_monotone_deflection(E0, pot)
    if Theta <= T[0]:
        return 0.0
    if Theta >= T[-1]:
        return 1.0
    k = int(np.searchsorted(T, Theta))
    lo, hi = J[k - 1], J[k]
    f = lambda j: deflection(ReducedInputs(E0, j), pot).Theta - Theta
    return brentq(f, lo, hi, xtol=xtol, rtol=4 * _EPS, maxiter=300)


@dataclass(frozen=True)
class CrossSectionValue:
    b: float
    dJ_dTheta: float
    error_estimate: float
    uncertain: bool


def cross_section_from_map(J0_of_Theta, w: float, Theta: float, d: int, h: float = 1e-5) -> CrossSectionValue:
    """b = |w| J0^(d-2) dJ0/dTheta sin(Theta)^(2-d) for a given map Theta -> J0.

    The derivative is a Richardson-extrapolated central difference with step h.
    Values whose stencil leaves (0, pi/2), or which sit close to pi/2 where
    dJ0/dTheta blows up, are flagged as uncertain.
    """
    w = abs(float(w))
    if w == 0.0:
        return CrossSectionValue(0.0, 0.0, 0.0, False)
    uncertain = False
    lo, hi = Theta - h, Theta + h
    if lo < 0 or hi > HALF_PI:
        uncertain = True
        h = min(Theta, HALF_PI - Theta) / 2 if 0 < Theta < HALF_PI else h
        if h <= 0:
            return CrossSectionValue(math.nan, math.nan, math.inf, True)
    D1 = (J0_of_Theta(Theta + h) - J0_of_Theta(Theta - h)) / (2 * h)
    D2 = (J0_of_Theta(Theta + h / 2) - J0_of_Theta(Theta - h / 2)) / h
    D = (4 * D2 - D1) / 3
    err = abs(D - D2)
    if HALF_PI - Theta < 1e-3:
        uncertain = True
    J = J0_of_Theta(Theta)
    b = w * J ** (d - 2) * D * math.sin(Theta) ** (2 - d)
    if err > 1e-6 * max(1.0, abs(D)):
        uncertain = True
    return CrossSectionValue(float(b), float(D), float(err), uncertain)


def cross_section(w: float, Theta: float, pot: PotentialSpec, d: int, h: float = 1e-5) -> CrossSectionValue:
    """Scattering cross-section b(w, Theta) for potential ``pot`` in dimension d."""
    if not 0 < Theta < HALF_PI:
        raise ValueError("Theta must lie in (0, pi/2)")
    if pot.hard_sphere:
        return cross_section_from_map(math.sin, w, Theta, d, h)
    E0 = float(w) ** 2
    if E0 == 0:
        return CrossSectionValue(0.0, 0.0, 0.0, False)
    check_monotone_deflection(E0, pot)
    return cross_section_from_map(lambda T: invert_deflection(E0, min(max(T, 0.0), HALF_PI), pot),
                                  w, Theta, d, h)


@dataclass
class CrossSectionTable:
    """Tabulated scattering data on an (E0, Theta) grid plus the (E0, J0) grid."""

    pot_label: str
    d: int
    E0_grid: np.ndarray
    Theta_grid: np.ndarray
    b_values: np.ndarray
    J0_of_Theta: np.ndarray
    J0_grid: np.ndarray
    Theta_of_J0: np.ndarray

    def __post_init__(self):
        self._interp = RegularGridInterpolator((np.log(self.E0_grid), self.J0_grid), self.Theta_of_J0)

    def theta_at(self, E0, J0):
        """Interpolated Theta(E0, J0); E0 outside the grid raises."""
        E0 = np.asarray(E0, float)
        if np.any(E0 < self.E0_grid[0]) or np.any(E0 > self.E0_grid[-1]):
            raise ValueError("E0 outside the tabulated range")
        return self._interp(np.column_stack([np.log(E0), J0]))


def build_cross_section_table(pot: PotentialSpec, E0_grid, d: int, n_theta: int = 16,
                              n_j0: int = 33) -> CrossSectionTable:
    E0_grid = np.asarray(E0_grid, float)
    Theta_grid = np.linspace(0.0, HALF_PI, n_theta + 2)[1:-1]
    J0_grid = np.linspace(0.0, 1.0, n_j0)
    b = np.empty((E0_grid.size, Theta_grid.size))
    Jt = np.empty_like(b)
    TJ = np.empty((E0_grid.size, J0_grid.size))
    for i, E0 in enumerate(E0_grid):
        for k, j in enumerate(J0_grid):
            TJ[i, k] = deflection(ReducedInputs(E0, j), pot).Theta
        if np.any(np.diff(TJ[i]) <= 0) and not pot.hard_sphere:
            check_monotone_deflection(E0, pot)
        for k, T in enumerate(Theta_grid):
            Jt[i, k] = invert_deflection(E0, T, pot)
            b[i, k] = cross_section(math.sqrt(E0), T, pot, d).b
    return CrossSectionTable(pot.label, d, E0_grid, Theta_grid, b, Jt, J0_grid, TJ)


# ---------------------------------------------------------------------------
# scattering maps
# ---------------------------------------------------------------------------

def apse_direction(dy0, dw0, theta: float) -> np.ndarray:
    """Unit vector omega of the apse line: dy0 rotated by theta towards the motion."""
    e0 = np.asarray(dy0, float)
    e0 = e0 / np.linalg.norm(e0)
    t = np.asarray(dw0, float) - (np.asarray(dw0, float) @ e0) * e0
    nt = np.linalg.norm(t)
    if nt == 0.0 or theta == 0.0:
        return e0
    return math.cos(theta) * e0 + math.sin(theta) * (t / nt)


def _scatter_reduced(dy0, dw0, pot):
    """omega and the solution for a pre-collisional reduced state."""
    inp = reduced_inputs_from_state(dy0, dw0)
    if inp.J0 >= 1.0 - GRAZING_J0:
        raise GrazingError(f"grazing configuration (J0 = {inp.J0!r})")
    if pot.hard_sphere:
        sol = ScatteringSolution(inp.E0, inp.J0, 1.0, 0.0, 0.0, math.asin(inp.J0), 0.0)
        return np.asarray(dy0, float) / np.linalg.norm(dy0), sol
    sol = deflection(inp, pot)
    return apse_direction(dy0, dw0, sol.theta), sol


def scattering_operator_sigma_eps(z1: PhasePoint, z2: PhasePoint, pot: PotentialSpec, eps: float):
    """Map a pre-collisional pair at distance eps to its post-collisional image.

    Returns ``(z1', z2', t_eps)`` with ``t_eps = eps * tau*``.
    """
    x1, v1, x2, v2 = z1.x, z1.v, z2.x, z2.v
    dx = x1 - x2
    if abs(np.linalg.norm(dx) - eps) > 1e-9 * eps:
        raise ValueError("particles must be at distance eps")
    dy0 = dx / np.linalg.norm(dx)
    dw0 = v1 - v2
    if dy0 @ dw0 >= 0:
        raise ValueError("pair is not pre-collisional")
    omega, sol = _scatter_reduced(dy0, dw0, pot)
    c = float(omega @ dw0)
    v1p = v1 - c * omega
    v2p = v2 + c * omega
    dy1 = -dy0 + 2.0 * float(omega @ dy0) * omega
    t_eps = eps * sol.tau_star
    centre = 0.5 * (x1 + x2) + 0.5 * t_eps * (v1 + v2)
    x1p = centre + 0.5 * eps * dy1
    x2p = centre - 0.5 * eps * dy1
    return PhasePoint(x1p, v1p), PhasePoint(x2p, v2p), t_eps


def sigma0(nu, v1, v2, pot: PotentialSpec):
    """Limiting scattering map (nu, v1, v2) -> (nu', v1', v2') for a pre-collisional triple."""
    nu = np.asarray(nu, float)
    v1 = np.asarray(v1, float)
    v2 = np.asarray(v2, float)
    dw0 = v1 - v2
    if nu @ dw0 >= 0:
        raise ValueError("sigma0 expects a pre-collisional configuration")
    omega, _ = _scatter_reduced(nu, dw0, pot)
    c = float(omega @ dw0)
    nu_p = -nu + 2.0 * float(omega @ nu) * omega
    return nu_p, v1 - c * omega, v2 + c * omega


def sigma0_inverse(nu, v1, v2, pot: PotentialSpec):
    """Inverse of :func:`sigma0` on post-collisional triples (by time reversal)."""
    nu = np.asarray(nu, float)
    v1 = np.asarray(v1, float)
    v2 = np.asarray(v2, float)
    if nu @ (v1 - v2) <= 0:
        raise ValueError("sigma0_inverse expects a post-collisional configuration")
    nu_s, u1, u2 = sigma0(nu, -v1, -v2, pot)
    return nu_s, -u1, -u2


def scatter_table_rows(pot: PotentialSpec, E0_values, J0_values, d: int = 3):
    """Rows (E0, J0, rho*, tau*, Theta, b) for the scatter-table CSV."""
    rows = []
    for E0 in E0_values:
        for J0 in J0_values:
            sol = deflection(ReducedInputs(float(E0), float(J0)), pot)
            try:
                b = cross_section(math.sqrt(E0), sol.Theta, pot, d).b if 0 < sol.Theta < HALF_PI else math.nan
            except NonMonotoneDeflectionError:
                b = math.nan
            rows.append((float(E0), float(J0), sol.rho_star, sol.tau_star, sol.Theta, b))
    return rows
