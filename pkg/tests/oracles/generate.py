"""Regenerate the frozen reference values in frozen.json.

Every value here is computed by a route that shares no code with the
package: high-precision mpmath quadrature, dense time stepping, polar
quadrature or grid quadrature.  Run from the repository root:

    python3 tests/oracles/generate.py
"""
import json
import math
from pathlib import Path

import mpmath as mp
import numpy as np

OUT = Path(__file__).with_name("frozen.json")


def scattering_oracle():
    """rho*, tau* and the deflection integral for the exp-barrier potential at 30 digits."""
    mp.mp.dps = 30
    rows = []
    for E0, J0 in [(4.0, 0.5), (0.1, 0.05), (100.0, 0.95), (100.0, 0.05), (0.1, 0.95), (1.0, 0.3), (10.0, 0.7)]:
        E0m, J0m = mp.mpf(E0), mp.mpf(J0)
        phi = lambda r: mp.e ** (-1 / (1 - r * r)) / r
        Psi = lambda r: E0m * J0m**2 / r**2 + 4 * phi(r)
        # Psi - E0 changes sign exactly once on (0, 1): bracket by bisection first
        lo, hi = mp.mpf("1e-6"), mp.mpf(1) - mp.mpf("1e-12")
        for _ in range(200):
            mid = (lo + hi) / 2
            if Psi(mid) - E0m > 0:
                lo = mid
            else:
                hi = mid
        rs = mp.findroot(lambda r: Psi(r) - E0m, (lo + hi) / 2)
        tau = 2 * mp.quad(lambda r: 1 / mp.sqrt(E0m - Psi(r)), [rs, (rs + 1) / 2, 1])
        th = mp.quad(lambda r: mp.sqrt(E0m) * J0m / r**2 / mp.sqrt(E0m - Psi(r)), [rs, (rs + 1) / 2, 1])
        rows.append({"E0": E0, "J0": J0, "rho_star": float(rs), "tau_star": float(tau), "theta": float(th)})
    return rows


def md_stepping_oracle(n_pairs=1000, eps=0.1, dt=1e-6, T=1.0, seed=12345):
    """First contact times of random pairs found by dense time stepping."""
    rng = np.random.default_rng(seed)
    x1 = rng.random((n_pairs, 2))
    x2 = x1 + 0.1 + 0.4 * rng.random((n_pairs, 2))
    v1 = rng.standard_normal((n_pairs, 2))
    v2 = rng.standard_normal((n_pairs, 2))
    dx = x1 - x2
    dv = v1 - v2
    hit = np.full(n_pairs, np.nan)
    steps = int(round(T / dt))
    block = 20_000
    for start in range(0, steps + 1, block):
        open_ = np.isnan(hit)
        if not open_.any():
            break
        t = dt * np.arange(start, min(start + block, steps + 1))
        pos = dx[open_, None, :] + t[None, :, None] * dv[open_, None, :]
        close = np.einsum("ptk,ptk->pt", pos, pos) <= eps * eps
        first = np.where(close.any(axis=1), close.argmax(axis=1), -1)
        idx = np.nonzero(open_)[0]
        found = first >= 0
        hit[idx[found]] = t[first[found]]
    return {"eps": eps, "dt": dt, "T": T, "x1": x1.tolist(), "x2": x2.tolist(), "v1": v1.tolist(),
            "v2": v2.tolist(), "t_hit": [None if np.isnan(h) else float(h) for h in hit]}


def pair_overlap_oracle(eps=0.1):
    """Probability that two uniform points of the unit square lie within eps (polar quadrature)."""
    mp.mp.dps = 25
    # density of the difference u is (1-|u1|)(1-|u2|) on [-1,1]^2
    val = 4 * mp.quad(lambda r, a: r * (1 - r * mp.cos(a)) * (1 - r * mp.sin(a)), [0, eps], [0, mp.pi / 2])
    return {"eps": eps, "overlap_probability": float(val), "Z2": float(1 - val)}


def weak_operator_oracle(n_grid=56, n_omega=96):
    """Integral of Q(f, f) v_1^3 for a skewed two-component Gaussian mixture in d = 2,
    by tensor grid quadrature of the symmetrised weak form."""
    comps = [(0.7, (0.5, 0.0), (0.3, 1.0)), (0.3, (-1.0, 0.5), (0.5, 0.5))]

    def f(v):
        out = np.zeros(v.shape[:-1])
        for w, m, s in comps:
            z = ((v[..., 0] - m[0]) ** 2 / s[0] + (v[..., 1] - m[1]) ** 2 / s[1])
            out += w * np.exp(-0.5 * z) / (2 * math.pi * math.sqrt(s[0] * s[1]))
        return out

    ax = np.linspace(-5.0, 5.0, n_grid)
    h = ax[1] - ax[0]
    V = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    fv = f(V)
    keep = fv > 1e-12
    V, fv = V[keep], fv[keep]
    ang = (np.arange(n_omega) + 0.5) * 2 * math.pi / n_omega
    om = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    dom = 2 * math.pi / n_omega
    phi = lambda u: u[..., 0] ** 3
    total = 0.0
    for i in range(len(V)):
        v, v1 = V[i], V
        g = v1 - v
        c = g @ om.T
        cp = np.maximum(c, 0.0)
        vp = v[None, None, :] + c[..., None] * om[None, :, :]
        v1p = v1[:, None, :] - c[..., None] * om[None, :, :]
        dphi = phi(vp) + phi(v1p) - phi(v)[None, None] - phi(v1)[:, None]
        total += fv[i] * np.sum(fv[:, None] * cp * dphi) * dom
    return {"components": comps, "value": 0.5 * total * h**4}


def free_flow_observable_oracle():
    """k = 0 observable: integral of |v|^2 f0(X - t v, v) dv for a Gaussian f0 in x and v."""
    from scipy import integrate

    X, t, width, theta = (0.3, -0.2), 0.5, 0.7, (1.0, 0.5)

    def integrand(v2, v1):
        x = (X[0] - t * v1, X[1] - t * v2)
        gx = math.exp(-0.5 * (x[0] ** 2 + x[1] ** 2) / width**2) / (2 * math.pi * width**2)
        gv = math.exp(-0.5 * (v1 * v1 / theta[0] + v2 * v2 / theta[1])) / (2 * math.pi * math.sqrt(theta[0] * theta[1]))
        return (v1 * v1 + v2 * v2) * gx * gv

    val, err = integrate.dblquad(integrand, -12, 12, -12, 12, epsabs=1e-13, epsrel=1e-11)
    return {"X": X, "t": t, "width": width, "theta": theta, "value": val, "error": err}


if __name__ == "__main__":
    data = {
        "scattering": scattering_oracle(),
        "pair_overlap": pair_overlap_oracle(),
        "weak_operator": weak_operator_oracle(),
        "free_flow_observable": free_flow_observable_oracle(),
        "md_stepping": md_stepping_oracle(),
    }
    OUT.write_text(json.dumps(data, indent=1))
    print("wrote", OUT)
