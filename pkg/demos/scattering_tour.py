"""Deflection angles and cross-sections for the smooth exp-barrier potential.

Prints Theta(E0, J0) on a small grid, the quadrature/ODE agreement and the
cross-section b(w, Theta) next to the hard-sphere value |w| cos Theta.
"""
import math

import numpy as np

from boltzlab.core_types import get_potential, validate_potential
from boltzlab.scattering import ReducedInputs, cross_section, deflection, ode_deflection

pot = get_potential("exp_barrier")

report = validate_potential(pot)
for name, check in report.items():
    print(f"{name:26s} {'ok' if check.passed else 'fails'} (worst {check.worst_value:.3g} at rho={check.worst_location:.3g})")

print("\n  E0    J0    rho*     tau*     Theta    Theta(ODE)")
for E0 in (0.5, 4.0, 50.0):
    for J0 in (0.2, 0.5, 0.8):
        sol = deflection(ReducedInputs(E0, J0), pot)
        traj = ode_deflection(E0, J0, pot)
        print(f"{E0:5.1f} {J0:5.2f} {sol.rho_star:8.5f} {sol.tau_star:8.5f} {sol.Theta:8.5f} {traj.Theta:8.5f}")

w = 2.0
print("\nTheta    b(exp_barrier)  |w| cos Theta")
for T in np.linspace(0.2, 1.4, 5):
    print(f"{T:5.2f}   {cross_section(w, T, pot, 3).b:12.6f}   {w * math.cos(T):12.6f}")
