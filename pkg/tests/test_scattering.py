import math

import numpy as np
import pytest

from boltzlab.core_types import PhasePoint, get_potential
from boltzlab.scattering import (NonMonotoneDeflectionError, ReducedInputs, check_monotone_deflection,
                                 cross_section, cross_section_from_map, deflection, integrate_reduced_ode,
                                 invert_deflection, ode_deflection, psi, rho_star, scattering_operator_sigma_eps,
                                 sigma0, sigma0_inverse, tau_star_bounds)

POT = get_potential("exp_barrier")
HS = get_potential("hard_sphere")


def test_psi_head_on_and_formula():
    r = np.linspace(0.1, 0.9, 5)
    assert np.allclose(psi(r, ReducedInputs(3.0, 0.0), POT), 4 * POT.phi(r))
    gen = np.random.default_rng(0)
    for E0, J0, rho in zip(gen.uniform(0.1, 50, 20), gen.random(20), gen.uniform(0.05, 0.99, 20)):
        direct = E0 * J0**2 / rho**2 + 4 * math.exp(-1 / (1 - rho**2)) / rho
        assert psi(rho, ReducedInputs(E0, J0), POT) == pytest.approx(direct, rel=1e-14)


def test_matches_high_precision_oracle(frozen):
    for row in frozen["scattering"]:
        sol = deflection(ReducedInputs(row["E0"], row["J0"]), POT)
        assert sol.rho_star == pytest.approx(row["rho_star"], abs=1e-12)
        assert sol.tau_star == pytest.approx(row["tau_star"], rel=1e-10)
        assert sol.Theta - math.asin(row["J0"]) == pytest.approx(row["theta"], abs=1e-10)


def test_turning_point_and_exit_time_vs_ode():
    inp = ReducedInputs(4.0, 0.5)
    sol = deflection(inp, POT)
    traj = ode_deflection(4.0, 0.5, POT)
    assert abs(sol.tau_star - traj.tau_exit) / sol.tau_star < 1e-6
    assert abs(sol.Theta - traj.Theta) < 1e-6
    assert rho_star(inp, POT) == pytest.approx(traj.rho_min, abs=1e-6)


def test_tau_star_respects_a_priori_bound():
    for E0 in (0.5, 4.0, 40.0):
        for J0 in (0.3, 0.6, 0.9):
            inp = ReducedInputs(E0, J0)
            assert deflection(inp, POT, check_bound=False).tau_star <= tau_star_bounds(inp, POT)


def test_deflection_boundary_values():
    assert deflection(ReducedInputs(4.0, 0.0), POT).Theta == 0.0
    assert deflection(ReducedInputs(4.0, 1.0), POT).Theta == pytest.approx(math.pi / 2)


def test_free_motion_is_straight():
    traj = integrate_reduced_ode(np.array([1.0, 0.0]), np.array([-1.0, 0.3]), get_potential("zero"))
    assert np.allclose(traj.dw_exit, [-1.0, 0.3], atol=1e-12)


def test_reduced_ode_conserves_energy():
    traj = ode_deflection(10.0, 0.4, POT)
    assert traj.energy_drift < 1e-9


def test_invert_deflection():
    assert invert_deflection(4.0, 0.0, POT) == 0.0
    assert invert_deflection(4.0, math.pi / 2, POT) == 1.0
    for J0 in np.linspace(0.05, 0.95, 7):
        T = deflection(ReducedInputs(4.0, J0), POT).Theta
        assert invert_deflection(4.0, T, POT) == pytest.approx(J0, abs=1e-8)


def test_monotone_for_exp_barrier_and_not_for_quadratic_cap():
    check_monotone_deflection(4.0, POT)
    with pytest.raises(NonMonotoneDeflectionError):
        check_monotone_deflection(10.0, get_potential("quadratic_cap"))


def test_hard_sphere_cross_section_is_reflection_kernel():
    for T in np.linspace(0.05, 1.5, 12):
        for d in (2, 3):
            val = cross_section_from_map(math.sin, 2.0, T, d)
            assert val.b == pytest.approx(2.0 * math.cos(T), abs=1e-8)


def test_cross_section_reciprocal_derivative():
    E0, d, h = 4.0, 3, 1e-5
    w = math.sqrt(E0)
    for J0 in (0.3, 0.5, 0.7):
        T = deflection(ReducedInputs(E0, J0), POT).Theta
        dT = (deflection(ReducedInputs(E0, J0 + h), POT).Theta - deflection(ReducedInputs(E0, J0 - h), POT).Theta) / (2 * h)
        oracle = w * J0 / dT / math.sin(T)
        assert cross_section(w, T, POT, d).b == pytest.approx(oracle, rel=1e-4)


def test_sigma_eps_conservation_and_centre_of_mass():
    eps = 0.01
    z1 = PhasePoint(np.array([eps * 0.6, eps * 0.8]), np.array([-1.0, 0.2]))
    z2 = PhasePoint(np.zeros(2), np.array([0.5, -0.1]))
    a, b, t = scattering_operator_sigma_eps(z1, z2, POT, eps)
    assert np.linalg.norm(a.x - b.x) == pytest.approx(eps)
    e_in = z1.v @ z1.v + z2.v @ z2.v
    assert a.v @ a.v + b.v @ b.v == pytest.approx(e_in, rel=1e-12)
    assert np.allclose(a.v + b.v, z1.v + z2.v, atol=1e-14)
    centre = 0.5 * (z1.x + z2.x) + 0.5 * t * (z1.v + z2.v)
    assert np.allclose(0.5 * (a.x + b.x), centre, atol=1e-15)


def test_sigma_eps_vs_two_body_ode():
    from scipy.integrate import solve_ivp

    eps = 0.01
    z1 = PhasePoint(np.array([eps * 0.6, eps * 0.8]), np.array([-1.0, 0.2]))
    z2 = PhasePoint(np.zeros(2), np.array([0.5, -0.1]))
    a, b, t = scattering_operator_sigma_eps(z1, z2, POT, eps)

    def rhs(_, y):
        dx = y[0:2] - y[2:4]
        r = np.linalg.norm(dx)
        f = -POT.dphi(r / eps) / eps * dx / r if r < eps else np.zeros(2)
        return np.concatenate([y[4:6], y[6:8], f, -f])

    y0 = np.concatenate([z1.x, z2.x, z1.v, z2.v])
    sol = solve_ivp(rhs, (0, t), y0, method="DOP853", rtol=1e-12, atol=1e-15, max_step=t / 2000)
    y = sol.y[:, -1]
    assert np.allclose(y[0:2], a.x, atol=1e-6 * eps)
    assert np.allclose(y[2:4], b.x, atol=1e-6 * eps)
    assert np.allclose(y[4:6], a.v, atol=1e-6)


def test_sigma0_hard_sphere_is_reflection_involution():
    gen = np.random.default_rng(3)
    for _ in range(20):
        nu = gen.standard_normal(2)
        nu /= np.linalg.norm(nu)
        v1, v2 = gen.standard_normal(2), gen.standard_normal(2)
        if nu @ (v1 - v2) > 0:
            nu = -nu
        nu_p, w1, w2 = sigma0(nu, v1, v2, HS)
        c = nu @ (v1 - v2)
        assert np.allclose(w1, v1 - c * nu) and np.allclose(w2, v2 + c * nu)
        _, u1, u2 = sigma0_inverse(-nu_p, w1, w2, HS) if (-nu_p) @ (w1 - w2) > 0 else sigma0_inverse(nu_p, w1, w2, HS)
        assert np.allclose(u1, v1) and np.allclose(u2, v2)


def test_sigma0_smooth_potential_preserves_invariants():
    gen = np.random.default_rng(4)
    for _ in range(10):
        nu = gen.standard_normal(3)
        nu /= np.linalg.norm(nu)
        v1, v2 = gen.standard_normal(3), gen.standard_normal(3)
        if nu @ (v1 - v2) > 0:
            nu = -nu
        nu_p, w1, w2 = sigma0(nu, v1, v2, POT)
        assert np.allclose(w1 + w2, v1 + v2, atol=1e-13)
        assert w1 @ w1 + w2 @ w2 == pytest.approx(v1 @ v1 + v2 @ v2, rel=1e-12)
        _, u1, u2 = sigma0_inverse(nu_p, w1, w2, POT)
        assert np.allclose(u1, v1, atol=1e-9) and np.allclose(u2, v2, atol=1e-9)
