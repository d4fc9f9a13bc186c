"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are written to
the terminal even when output capturing is on.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from boltzlab import hierarchy as hi
from boltzlab.boltzmann import VelocityEnsemble, bimodal_ensemble, collision_operator_weak
from boltzlab.cli import main
from boltzlab.core_types import boltzmann_grad_epsilon, get_potential
from boltzlab.experiments import EXPERIMENTS
from boltzlab.hard_sphere_md import Domain, random_initial_state, reflect, reflect_batch, run_to
from boltzlab.scattering import (NonMonotoneDeflectionError, ReducedInputs, check_monotone_deflection,
                                 cross_section_from_map, deflection)


@pytest.fixture
def report(capsys):
    def _report(number, name, passed, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number:2d} {name}: {'PASS' if passed else 'FAIL'} ({detail})")
        assert passed, detail
    return _report


def _run_cli(tmp_path, experiment, text="", seed=0):
    tmp_path.mkdir(parents=True, exist_ok=True)
    cfg = tmp_path / f"{experiment}.cfg"
    cfg.write_text(text)
    out = tmp_path / experiment
    t0 = time.perf_counter()
    code = main([experiment, "--config", str(cfg), "--out", str(out), "--seed", str(seed)])
    elapsed = time.perf_counter() - t0
    manifest = json.loads((out / "manifest.json").read_text())
    return code, manifest, out, elapsed


def test_01_md_conservation(report):
    N, d = 1000, 2
    st = random_initial_state(N, d, boltzmann_grad_epsilon(N, d), Domain.box(1.0), 1)
    p0, e0 = st.total_momentum(), st.kinetic_energy()
    scale = float(np.sum(np.linalg.norm(st.config.v, axis=1)))
    t0 = time.perf_counter()
    out = run_to(st, 1e9, max_collisions=1_000_000)
    elapsed = time.perf_counter() - t0
    de = abs(out.kinetic_energy() - e0) / e0
    dp = float(np.max(np.abs(out.total_momentum() - p0))) / scale
    ok = out.event_count["pair_collision"] == 1_000_000 and de < 1e-11 and dp < 1e-11 and elapsed < 60
    report(1, "MD conservation", ok, f"energy drift {de:.2e}, momentum drift {dp:.2e}, {elapsed:.1f} s")


def test_02_reflection_law(report):
    gen = np.random.default_rng(2)
    n = 1_000_000
    vi, vj = gen.standard_normal((n, 2)), gen.standard_normal((n, 2))
    nu = gen.standard_normal((n, 2))
    nu /= np.linalg.norm(nu, axis=1, keepdims=True)
    t0 = time.perf_counter()
    a, b = reflect_batch(vi, vj, nu)
    c, e = reflect_batch(a, b, nu)
    elapsed = time.perf_counter() - t0
    e0 = np.sum(vi**2 + vj**2, axis=1)
    scale = np.linalg.norm(vi, axis=1) + np.linalg.norm(vj, axis=1)
    dmom = float(np.max(np.linalg.norm(a + b - vi - vj, axis=1) / scale))
    den = float(np.max(np.abs(np.sum(a**2 + b**2, axis=1) - e0) / e0))
    dinv = float(np.max(np.abs(np.concatenate([c - vi, e - vj])) / np.concatenate([scale, scale])[:, None]))
    # the scalar routine must agree with the batch routine
    same = all(np.allclose(reflect(vi[k], vj[k], nu[k])[0], a[k], rtol=0, atol=1e-15) for k in range(1000))
    ok = max(dmom, den, dinv) < 1e-13 and same and elapsed < 5
    report(2, "reflection law", ok,
           f"momentum {dmom:.1e}, energy {den:.1e}, involution {dinv:.1e}, {elapsed:.2f} s")


def test_03_scattering_oracle_equivalence(report, tmp_path):
    code, man, _, elapsed = _run_cli(tmp_path, "xsec-validate")
    s = man["summary"]
    ok = code == 0 and s["max_abs_dTheta"] <= 1e-6 and s["max_rel_dtau"] <= 1e-6 and elapsed < 120
    report(3, "scattering oracle equivalence", ok,
           f"max |dTheta| {s.get('max_abs_dTheta', math.nan):.2e}, "
           f"max rel dtau {s.get('max_rel_dtau', math.nan):.2e}, {elapsed:.1f} s")


def test_04_monotone_deflection(report):
    pot = get_potential("exp_barrier")
    E0s = np.geomspace(0.1, 100, 20)
    J0s = np.linspace(0.05, 0.95, 20)
    h = 1e-6
    worst = math.inf
    for E0 in E0s:
        for J0 in J0s[1:-1]:
            dT = (deflection(ReducedInputs(E0, J0 + h), pot).Theta
                  - deflection(ReducedInputs(E0, J0 - h), pot).Theta) / (2 * h)
            worst = min(worst, dT)
    try:
        check_monotone_deflection(10.0, get_potential("quadratic_cap"))
        raised = False
    except NonMonotoneDeflectionError:
        raised = True
    report(4, "monotone deflection", worst > 0 and raised,
           f"min dTheta/dJ0 {worst:.3e}, quadratic_cap rejected: {raised}")


def test_05_hard_sphere_cross_section(report):
    w = 1.7
    worst = 0.0
    for d in (2, 3):
        for T in np.linspace(0.01, math.pi / 2 - 0.01, 50):
            b = cross_section_from_map(math.sin, w, T, d).b
            # b = |w| cos Theta equals (omega . w)_+ for omega at angle Theta from w
            omega = np.array([math.cos(T), math.sin(T)])
            target = max(float(omega @ np.array([w, 0.0])), 0.0)
            worst = max(worst, abs(b - target))
    report(5, "hard-sphere cross-section", worst <= 1e-8, f"max |b - (omega.w)_+| {worst:.2e}")


def test_06_h_theorem(report, tmp_path):
    code, man, _, elapsed = _run_cli(tmp_path, "h-theorem")
    s = man["summary"]
    ok = code == 0 and s["worst_increase_minus_2sigma"] <= 0 and s["ks_p"] >= 0.01 and elapsed < 180
    report(6, "H-theorem", ok, f"H {s.get('H_initial', math.nan):.4f} -> {s.get('H_final', math.nan):.4f}, "
           f"KS p {s.get('ks_p', math.nan):.3f}, {elapsed:.1f} s")


def test_07_collision_invariants(report):
    gen = np.random.default_rng(7)
    ensembles = {
        "bimodal": bimodal_ensemble(50_000, 3, gen),
        "shifted exponential": VelocityEnsemble(gen.exponential(size=(50_000, 3)) - 1.0),
        "anisotropic": VelocityEnsemble(gen.standard_normal((50_000, 3)) * [0.3, 1.0, 2.0] + [0.5, 0.0, 0.0]),
    }
    phis = {"1": lambda v: np.ones(len(v)), "|v|^2": lambda v: np.sum(v * v, axis=1)}
    phis.update({f"v{k + 1}": (lambda v, k=k: v[:, k]) for k in range(3)})
    worst = 0.0
    fails = []
    for en, ens in ensembles.items():
        for pn, phi in phis.items():
            est = collision_operator_weak(ens, phi, n_samples=200_000, rng=gen)
            z = abs(est.value) / (est.stderr + est.rounding) if est.stderr + est.rounding > 0 else 0.0
            worst = max(worst, z)
            if not est.contains(0.0, 3.0):
                fails.append(f"{en}/{pn}")
    report(7, "collision invariants", not fails, f"worst |value|/sigma {worst:.2f}, failures {fails}")


def test_08_pseudo_trajectory_proximity(report):
    eps = 0.01
    p = hi.truncation_schedule(eps, 2)
    gen = np.random.default_rng(8)
    worst, n_free, equal = 0.0, 0, True
    for k in range(1, 5):
        B = 30_000
        batch = hi.sample_trees(1, k, 1.0, p, B, gen, d=2)
        X = np.zeros((B, 1, 2))
        V = gen.standard_normal((B, 1, 2))
        r0 = hi.pseudo_trajectories(X, V, batch, 0.0)
        re = hi.pseudo_trajectories(X, V, batch, eps)
        free = ~re.recollision & ~re.blocked
        n_free += int(free.sum())
        dev = np.max(np.linalg.norm(r0.X - re.X, axis=2), axis=1)[free] / (eps * k)
        worst = max(worst, float(dev.max()))
        equal &= bool(np.array_equal(r0.V[free], re.V[free]))
    violations = worst > 1 + 1e-12
    ok = n_free >= 100_000 and not violations and equal
    report(8, "pseudo-trajectory proximity", ok,
           f"{n_free} recollision-free trees, max ratio {worst:.12f}, velocities identical: {equal}")


def test_09_duhamel_vs_dsmc(report, tmp_path):
    code, man, _, elapsed = _run_cli(tmp_path, "duhamel-vs-dsmc")
    s = man["summary"]
    ok = code == 0 and s["gap"] <= s["tolerance"] and s["first_ratio"] < 0.7 and elapsed < 600
    report(9, "Duhamel series vs DSMC", ok,
           f"series {s.get('series', math.nan):.5f} +- {s.get('series_stderr', math.nan):.5f}, "
           f"DSMC {s.get('dsmc', math.nan):.5f} +- {s.get('dsmc_stderr', math.nan):.5f}, "
           f"increment ratios {np.round(s.get('increment_ratios', []), 3).tolist()}, {elapsed:.1f} s")


def test_10_geometric_lemmas(report, tmp_path):
    p = hi.TruncationParams(n=4, R=2.0, delta=0.5, eta=0.5, eps0=0.02, a=2e-4, ratio=10)
    violations = {v: hi.cylinder_lemma_check([0.0, 0.0], [0.05, 0.01], [0.3, -0.2], p, 1_000_000, 10, variant=v)
                  for v in ("contact", "delta")}
    rhos = np.array([0.01, 0.02, 0.04, 0.08])
    meas = [hi.reflected_cylinder_measure(np.array([0.1, 0.2]), np.array([1.0, 0.3]), r, np.array([0.5, 0.0]),
                                          2.0, 2_000_000, 11 + i) for i, r in enumerate(rhos)]
    slope = float(np.polyfit(np.log(rhos), np.log(meas), 1)[0])
    code, man, _, _ = _run_cli(tmp_path, "badset-measure")
    s = man["summary"]
    ok = sum(violations.values()) == 0 and abs(slope - 1) <= 0.1 and code == 0 and s["passed"]
    report(10, "geometric lemmas", ok,
           f"cylinder violations {violations}, reflected slope {slope:.3f}, "
           f"fitted constant {s.get('fitted_constant', math.nan):.3g}, "
           f"held-out ratios {np.round(s.get('held_out_ratios', []), 3).tolist()}")


def test_11_recollision_scaling(report, tmp_path):
    code, man, _, _ = _run_cli(tmp_path, "recollision-scaling")
    s = man["summary"]
    fr, se = s["fractions"], s["stderr"]
    ci_ok = all(fr[i + 1] + 2 * se[i + 1] < fr[i] - 2 * se[i] for i in range(len(fr) - 1))
    ok = code == 0 and s["decreasing"] and ci_ok and abs(s["slope"] - 1) <= 0.3
    report(11, "recollision scaling", ok,
           f"fractions {np.round(fr, 5).tolist()}, slope {s.get('slope', math.nan):.3f}")


def test_12_conditioning(report, tmp_path):
    code, man, _, _ = _run_cli(tmp_path, "conditioning")
    s = man["summary"]
    ok = code == 0 and s["bounds_hold"] and abs(s["factorization_slope"] - 1) <= 0.3
    report(12, "conditioning", ok,
           f"Z18/Z20 {s.get('ratio', math.nan):.4f} +- {s.get('ratio_stderr', math.nan):.4f} "
           f"(bound {s.get('upper_bound', math.nan):.3f}), factorization slope "
           f"{s.get('factorization_slope', math.nan):.3f}")


def test_13_grad_limit(report, tmp_path):
    code, man, out, elapsed = _run_cli(tmp_path, "grad-limit")
    s = man["summary"]
    ok = code == 0 and s["monotone"]
    report(13, "Grad-limit monotonicity", ok,
           f"KS distances {np.round(s.get('distance', []), 4).tolist()} for N = 250, 1000, 4000, {elapsed:.1f} s")


SMALL_CONFIGS = {
    "md-equilibrium": "md.N = 100\nmd.t_final = 1.0\nmd.snapshot_every = 0.5\nmd.log_events = true\n",
    "grad-limit": "gl.N_values = 50,100\ngl.replicas = 2\ngl.dsmc_particles = 5000\ngl.t_final = 0.2\n",
    "h-theorem": "bz.n_particles = 5000\nbz.t_final = 0.4\nbz.moments_every = 5\n",
    "scatter-table": "sc.E0_values = 1.0,4.0\nsc.n_J0 = 3\n",
    "xsec-validate": "xv.n_E0 = 2\nxv.n_J0 = 2\n",
    "duhamel-vs-dsmc": "du.budget = 2000\ndu.k0_factor = 1\ndu.dsmc_particles = 2000\n"
                       "du.dsmc_replicas = 2\ndu.dsmc_steps = 4\n",
    "recollision-scaling": "rc.n_mc = 2000\n",
    "badset-measure": "bs.n_configs = 4\nbs.n_mc = 5000\n",
    "cluster-bounds": "cl.n_mc = 10000\n",
    "conditioning": "co.attempts = 2000\nco.factorization_N = 10,20\nco.samples = 200\n",
}


def test_14_reproducibility(report, tmp_path):
    assert set(SMALL_CONFIGS) == set(EXPERIMENTS)
    differing = []
    for name, text in SMALL_CONFIGS.items():
        outs = []
        for rep in ("a", "b"):
            _, _, out, _ = _run_cli(tmp_path / rep, name, text, seed=14)
            outs.append(out)
        for f in sorted(outs[0].glob("*.csv")) + [outs[0] / "resolved_config.cfg"]:
            other = outs[1] / f.name
            if not other.exists() or f.read_bytes() != other.read_bytes():
                differing.append(f"{name}/{f.name}")
        m0 = json.loads((outs[0] / "manifest.json").read_text())
        m1 = json.loads((outs[1] / "manifest.json").read_text())
        if m0["outputs"] != m1["outputs"] or m0["config_hash"] != m1["config_hash"]:
            differing.append(f"{name}/manifest hashes")
    report(14, "reproducibility", not differing,
           f"{len(SMALL_CONFIGS)} experiments re-run, differing outputs: {differing}")
