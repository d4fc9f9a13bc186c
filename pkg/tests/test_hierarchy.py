import math

import numpy as np
import pytest
from scipy import stats

from boltzlab.boltzmann import VelocityEnsemble, collision_operator_weak
from boltzlab.core_types import PhaseConfiguration, RngSpec, unit_ball_volume, unit_sphere_area
from boltzlab.hierarchy import (CollisionTree, DegenerateEstimateError, GaussianInitialDatum, InfeasibleTreeError,
                                TruncationParams, backward_min_distance, bad_set_measure, bbgky_prefactor,
                                bbgky_pseudo_trajectory, boltzmann_pseudo_trajectory, cylinder_lemma_check,
                                elementary_observable, good_config_check, observable_series, pseudo_trajectories,
                                reflected_cylinder_measure, sample_times, sample_trees, simplex_volume,
                                truncation_schedule)

LOOSE = TruncationParams(n=4, R=3.0, delta=0.0, eta=0.0, eps0=0.0, a=0.0, ratio=0.0)


def test_schedule_exponents():
    p = truncation_schedule(1e-2, 2)
    assert p.delta == pytest.approx(0.2154, abs=1e-4)
    assert p.eps0 == pytest.approx(0.04642, abs=1e-5)
    q = truncation_schedule(1e-3, 3)
    assert q.delta == pytest.approx(0.03162, abs=1e-5)
    assert q.eps0 == pytest.approx(0.005623, abs=1e-6)
    for r in (p, q):
        assert r.a <= r.eps0 / 100 * (1 + 1e-12)
        assert r.eps0 <= r.eta * r.delta / 100 * (1 + 1e-12)


def test_params_ordering_is_enforced():
    with pytest.raises(ValueError):
        TruncationParams(n=2, R=1.0, delta=0.1, eta=0.1, eps0=0.01, a=0.001)
    with pytest.raises(ValueError):
        truncation_schedule(0.01, 2, eta=0.01)


def test_simplex_volume_and_infeasible_times():
    assert simplex_volume(2.0, 0) == 1.0
    assert simplex_volume(1.0, 3, 0.1) == pytest.approx(0.7**3 / 6)
    assert simplex_volume(1.0, 3, 0.5) == 0.0
    with pytest.raises(InfeasibleTreeError):
        sample_times(1.0, 3, 0.5, 10, np.random.default_rng(0))


def test_single_time_is_uniform_on_shifted_interval():
    t, delta = 1.0, 0.2
    T = sample_times(t, 1, delta, 20_000, np.random.default_rng(1))[:, 0]
    assert stats.kstest(T, stats.uniform(loc=delta, scale=t - delta).cdf).pvalue > 0.001


def test_tree_invariants_property():
    p = TruncationParams(n=4, R=2.0, delta=0.1, eta=0.5, eps0=5e-4, a=5e-6)
    gen = np.random.default_rng(2)
    for k in range(5):
        b = sample_trees(2, k, 1.0, p, 100_000 // 5, gen, d=2)
        if k:
            assert np.all(b.T[:, 0] < 1.0) and np.all(b.T[:, -1] >= p.delta - 1e-12)
            assert np.all(-np.diff(b.T, axis=1) >= p.delta - 1e-12)
            assert np.all(b.M < 2 + np.arange(k)[None, :]) and np.all(b.M >= 0)
            assert np.allclose(np.linalg.norm(b.nus, axis=2), 1)
            assert np.all(np.linalg.norm(b.vs, axis=2) <= p.R)
        assert b.simplex_volume == pytest.approx(simplex_volume(1.0, k, p.delta))
    tree = b.tree(0)
    assert tree.separation() >= p.delta - 1e-12
    with pytest.raises(ValueError):
        CollisionTree(1, 1, 1.0, None, (1,), np.array([0.5]), np.zeros((1, 2)), np.zeros((1, 2)))
    with pytest.raises(InfeasibleTreeError):
        sample_trees(1, 5, 1.0, p, 1, gen)


def test_backward_min_distance_vs_grid():
    gen = np.random.default_rng(3)
    dx = gen.standard_normal((50, 2))
    dv = -dx + 0.3 * gen.standard_normal((50, 2))
    tau = np.linspace(0, 5, 5_000_001)
    for a, b in zip(dx[:5], dv[:5]):
        # minimise on a coarse grid, then refine around the best node
        dist = np.linalg.norm(a[None] - tau[::1000, None] * b[None], axis=1)
        i = int(np.argmin(dist)) * 1000
        fine = tau[max(i - 2000, 0): i + 2000]
        grid = np.min(np.linalg.norm(a[None] - fine[:, None] * b[None], axis=1))
        assert backward_min_distance(a, b) == pytest.approx(grid, abs=1e-9)


def test_good_configuration_check():
    Z = PhaseConfiguration(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[-1.0, 0.0], [0.0, 0.0]]))
    ok, m = good_config_check(Z, 0.1)
    assert not ok and m == pytest.approx(0.0)
    Z2 = PhaseConfiguration(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert good_config_check(Z2, 0.1) == (True, pytest.approx(1.0))


def test_no_adjunction_is_free_transport():
    Z = PhaseConfiguration(np.array([[0.5, 0.5], [2.0, 0.0]]), np.array([[1.0, -1.0], [0.5, 0.2]]))
    tree = CollisionTree(2, 0, 1.5, None, (), np.zeros(0), np.zeros((0, 2)), np.zeros((0, 2)))
    res = boltzmann_pseudo_trajectory(Z, tree)
    assert np.allclose(res.X[0], Z.x - 1.5 * Z.v)
    assert np.array_equal(res.V[0], Z.v)


def test_post_collisional_adjunctions_conserve_energy():
    Z = PhaseConfiguration(np.zeros((1, 2)), np.array([[0.4, -0.3]]))
    gen = np.random.default_rng(4)
    b = sample_trees(1, 2, 1.0, LOOSE, 2000, gen, d=2)
    res = pseudo_trajectories(Z.x, Z.v, b, 0.0)
    # adjunction i is post-collisional when nu . (v_new - v_parent) > 0 at time t_i
    expected = 0.5 * (Z.v[0] @ Z.v[0] + np.sum(b.vs**2, axis=(1, 2)))
    assert np.allclose(res.energy, expected, rtol=1e-12)


def test_bbgky_trajectories_stay_close_to_boltzmann():
    p = truncation_schedule(0.01, 2)
    gen = np.random.default_rng(5)
    for k in range(1, 5):
        eps = 0.01
        b = sample_trees(1, k, 1.0, p, 5000, gen, d=2)
        X = np.zeros((5000, 1, 2))
        V = gen.standard_normal((5000, 1, 2))
        r0 = pseudo_trajectories(X, V, b, 0.0)
        re = pseudo_trajectories(X, V, b, eps)
        free = ~re.recollision & ~re.blocked
        assert free.mean() > 0.5
        dev = np.max(np.linalg.norm(r0.X - re.X, axis=2), axis=1)[free]
        assert np.all(dev <= eps * k * (1 + 1e-9))
        assert np.array_equal(r0.V[free], re.V[free])


def test_bbgky_converges_to_boltzmann_as_eps_shrinks():
    Z = PhaseConfiguration(np.zeros((1, 2)), np.array([[0.3, 0.1]]))
    tree = sample_trees(1, 2, 1.0, LOOSE, 1, np.random.default_rng(6)).tree(0)
    ref = boltzmann_pseudo_trajectory(Z, tree).X[0]
    devs = [np.max(np.abs(bbgky_pseudo_trajectory(Z, tree, e).X[0] - ref)) for e in (1e-2, 1e-3, 1e-4)]
    assert devs[0] > devs[1] > devs[2] and devs[2] <= 2e-4


def test_bbgky_prefactor():
    assert bbgky_prefactor(0.01, 1, 2, 2) == pytest.approx(99 * 98 * 1e-4)
    assert bbgky_prefactor(0.5, 1, 2, 2) == 0.0


def test_zero_order_observable_vs_quadrature(frozen):
    q = frozen["free_flow_observable"]
    f0 = GaussianInitialDatum(theta=tuple(q["theta"]), x_width=q["width"], x_center=(0.0, 0.0))
    p = TruncationParams(n=0, R=20.0, delta=0.0, eta=0.0, eps0=0.0, a=0.0, ratio=0.0)
    est = elementary_observable(np.array([q["X"]]), lambda v: np.sum(v**2, axis=-1), q["t"], f0, p, 200_000, 7, 0)
    assert abs(est.value - q["value"]) < 3 * est.stderr


def test_first_order_term_matches_collision_operator():
    f0 = GaussianInitialDatum(theta=(0.2, 0.05))
    phi = lambda v: v[..., 0] ** 2 - v[..., 1] ** 2
    t = 0.05
    p = TruncationParams(n=1, R=1e3, delta=0.0, eta=0.0, eps0=0.0, a=0.0, ratio=0.0)
    est = elementary_observable(np.zeros((1, 2)), phi, t, f0, p, 200_000, 8, 1)
    v = f0.sample_velocities(np.random.default_rng(9), 400_000)[0]
    w = collision_operator_weak(VelocityEnsemble(v), phi, n_samples=400_000, rng=10)
    # first order in t, with an O(t^2) remainder well below the error bars
    assert abs(est.value - t * w.value) < 3 * math.hypot(est.stderr, t * w.stderr)
    assert abs(est.value) > 5 * est.stderr


def test_first_order_term_scales_linearly_in_time():
    f0 = GaussianInitialDatum(theta=(0.2, 0.05))
    phi = lambda v: v[..., 0] ** 2 - v[..., 1] ** 2
    p = TruncationParams(n=1, R=1e3, delta=0.0, eta=0.0, eps0=0.0, a=0.0, ratio=0.0)
    a = elementary_observable(np.zeros((1, 2)), phi, 0.02, f0, p, 100_000, 11, 1)
    b = elementary_observable(np.zeros((1, 2)), phi, 0.04, f0, p, 100_000, 12, 1)
    assert b.value / a.value == pytest.approx(2.0, rel=0.2)


def test_series_increments_shrink():
    f0 = GaussianInitialDatum(theta=(0.2, 0.05))
    phi = lambda v: v[..., 0] ** 2 - v[..., 1] ** 2
    p = TruncationParams(n=2, R=1e3, delta=0.0, eta=0.0, eps0=0.0, a=0.0, ratio=0.0)
    with pytest.warns(RuntimeWarning):
        res = observable_series(np.zeros((1, 2)), phi, 0.08, f0, p, 100_000, RngSpec(13), t_guard=0.05)
    assert len(res.terms) == 3 and res.ratios[0] < 0.7


def test_degenerate_estimate_is_reported():
    f0 = GaussianInitialDatum(theta=(1.0, 1.0))
    p = TruncationParams(n=1, R=1e-3, delta=0.0, eta=0.0, eps0=0.0, a=0.0, ratio=0.0)
    with pytest.raises(DegenerateEstimateError):
        elementary_observable(np.zeros((1, 2)), lambda v: np.ones(len(v)), 0.1, f0, p, 1000, 14, 1)


def test_cylinder_lemma_and_its_inversion():
    p = TruncationParams(n=4, R=2.0, delta=0.5, eta=0.5, eps0=0.02, a=2e-4, ratio=10)
    args = ([0.0, 0.0], [0.05, 0.01], [0.3, -0.2], p)
    for variant in ("contact", "delta"):
        assert cylinder_lemma_check(*args, 200_000, 15, variant=variant) == 0
        assert cylinder_lemma_check(*args, 50_000, 16, variant=variant, inside=True) > 0


def test_reflected_cylinder_measure_limits():
    w, y, v1 = np.array([0.1, 0.2]), np.array([1.0, 0.3]), np.array([0.5, 0.0])
    assert reflected_cylinder_measure(w, y, 0.0, v1, 2.0, 100_000, 17) == 0.0
    a = reflected_cylinder_measure(w, y, 0.05, v1, 2.0, 400_000, 18)
    b = reflected_cylinder_measure(w, y, 0.05, v1, 4.0, 400_000, 19)
    # linear in R up to a slowly varying log(R / rho) factor in two dimensions
    assert 2.0 < b / a < 3.0


def test_bad_set_single_particle_ball():
    p = TruncationParams(n=2, R=2.0, delta=0.5, eta=0.2, eps0=0.01, a=1e-4, ratio=10)
    Z = PhaseConfiguration(np.zeros((1, 2)), np.array([[0.3, 0.1]]))
    m = bad_set_measure(Z, p, 400_000, 20)
    exact = unit_sphere_area(2) * unit_ball_volume(2) * p.eta**2
    se = unit_sphere_area(2) * unit_ball_volume(2) * p.R**2 * math.sqrt(m.fractions["ball"] / 400_000)
    assert abs(m.components["ball"] - exact) < 3 * se
    assert m.components["cylinder"] == 0.0 and m.components["reflected"] == 0.0
    assert m.total == pytest.approx(m.components["ball"] + m.components["cone"])


def test_bad_set_cylinder_shrinks_with_a():
    Z = PhaseConfiguration(np.array([[0.0, 0.0], [0.5, 0.1]]), np.array([[0.2, -0.4], [0.0, 0.3]]))
    comps = []
    for a in (4e-4, 2e-4):
        p = TruncationParams(n=3, R=1.0, delta=10.0, eta=0.05, eps0=0.01, a=a, ratio=0.0)
        comps.append(bad_set_measure(Z, p, 1_000_000, 21).components["cylinder"])
    assert comps[0] / comps[1] == pytest.approx(2.0 ** (2 - 1), rel=0.15)
