"""Hard-core conditioning of tensorised initial data.

Estimates partition functions, the ratio Z_{N-2}/Z_N against its upper
bound, and the factorization error of the one-particle marginal along the
Boltzmann-Grad scaling.
"""
import numpy as np

from boltzlab.core_types import boltzmann_grad_epsilon
from boltzlab.statistics import (BumpDensity, conditioned_sampler, estimate_partition_function,
                                 first_order_partition, marginal_factorization_error, partition_bound_check)

f0 = BumpDensity(2, 0.5)
N = 20
eps = boltzmann_grad_epsilon(N, 2)
zN = estimate_partition_function(N, eps, f0, 100_000, 1)
zM = estimate_partition_function(N - 2, eps, f0, 100_000, 2)
print(f"Z_{N} = {zN[0]:.4f} +- {zN[1]:.4f}")
# the first-order expansion is only meaningful when N^2 eps^d is small
z5 = estimate_partition_function(5, 0.01, f0, 400_000, 3)
print(f"Z_5 at eps=0.01: {z5[0]:.5f} +- {z5[1]:.5f}, first order {first_order_partition(5, 0.01, f0):.5f}")
chk = partition_bound_check(zN, zM, N, 2, eps, f0.sup, 2)
print(f"Z_{N - 2}/Z_{N} = {chk.ratio:.3f} +- {chk.stderr:.3f}, upper bound {chk.upper_bound:.3f}")

for n in (10, 20, 40):
    e = boltzmann_grad_epsilon(n, 2)
    ens = conditioned_sampler(n, e, f0, 20_000, n)
    err = marginal_factorization_error(ens, 1)
    print(f"N={n:3d} eps={e:.4f} sup relative error {err.sup_error:.3f} (noise {err.noise:.3f})")
