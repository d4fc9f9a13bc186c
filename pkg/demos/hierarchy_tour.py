"""Pseudo-trajectories and the first terms of the Duhamel series.

Compares the Boltzmann and BBGKY pseudo-trajectories of a few random trees
and evaluates the series of the observable v_x^2 - v_y^2 for an anisotropic
Gaussian at a short time.
"""
import numpy as np

from boltzlab.core_types import PhaseConfiguration, RngSpec
from boltzlab.hierarchy import (GaussianInitialDatum, TruncationParams, bbgky_pseudo_trajectory,
                                boltzmann_pseudo_trajectory, observable_series, sample_tree, truncation_schedule)

eps = 0.01
params = truncation_schedule(eps, 2)
print(params)
root = PhaseConfiguration(np.zeros((1, 2)), np.array([[0.4, -0.2]]))
for seed in range(3):
    tree = sample_tree(1, 3, 1.0, params, seed)
    a = boltzmann_pseudo_trajectory(root, tree)
    b = bbgky_pseudo_trajectory(root, tree, eps)
    dev = np.max(np.linalg.norm(a.X[0] - b.X[0], axis=1))
    print(f"tree {seed}: parents {tree.M}, recollision {bool(b.recollision[0])}, "
          f"max deviation / (3 eps) = {dev / (3 * eps):.3f}")

f0 = GaussianInitialDatum(theta=(0.2, 0.05))
phi = lambda v: v[..., 0] ** 2 - v[..., 1] ** 2
p = TruncationParams(n=3, R=1e3, delta=0.0, eta=0.0, eps0=0.0, a=0.0, ratio=0.0)
series = observable_series(np.zeros((1, 2)), phi, 0.08, f0, p, 200_000, RngSpec(5))
for k, (term, partial) in enumerate(zip(series.terms, series.partial_sums)):
    print(f"k={k}: term {term.value:+.5f} +- {term.stderr:.5f}, partial sum {partial:.5f}")
print("increment ratios", np.round(series.ratios, 3))
