"""Event-driven molecular dynamics of N hard spheres of diameter eps.

Particles fly freely and reflect elastically at contact.  The event loop is
the classic one: every particle keeps one scheduled event in a binary heap,
stale entries are recognised through per-particle collision counters and
dropped when popped.  In a periodic box each particle also schedules a
"wall_wrap" renewal before its displacement relative to any other particle
could exceed half a box side, which is what makes minimum-image prediction
exact.

The inner loop is compiled with numba.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy.spatial import cKDTree

from .core_types import (Binning, Histogram, PhaseConfiguration, PhasePoint, as_generator,
                         check_dimension)

EVENT_KINDS = ("pair_collision", "wall_wrap", "pathological_grazing", "pathological_triple")
GRAZING_TOL = 1e-12
TIE_TOL = 1e-12
OVERLAP_TOL = 1e-9


class GrazingCollision(ArithmeticError):
    """Raised by :func:`reflect` when nu . (v_i - v_j) is numerically zero."""


class OverlapError(RuntimeError):
    pass


@dataclass(frozen=True)
class Domain:
    kind: str = "free_space"
    side: float = 0.0

    def __post_init__(self):
        if self.kind not in ("free_space", "periodic_box"):
            raise ValueError(f"unknown domain {self.kind!r}")
        if self.kind == "periodic_box" and not self.side > 0:
            raise ValueError("periodic box needs a positive side length")

    @property
    def periodic(self) -> bool:
        return self.kind == "periodic_box"

    @classmethod
    def box(cls, side: float) -> "Domain":
        return cls("periodic_box", float(side))


FREE_SPACE = Domain()


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    pair: tuple
    kind: str


@dataclass
class MdState:
    config: PhaseConfiguration
    epsilon: float
    domain: Domain = FREE_SPACE
    t: float = 0.0
    event_count: dict = field(default_factory=lambda: {k: 0 for k in EVENT_KINDS})
    max_contact_error: float = 0.0
    event_log: list | None = None

    @property
    def n(self) -> int:
        return self.config.n

    def total_momentum(self) -> np.ndarray:
        return self.config.v.sum(axis=0)

    def kinetic_energy(self) -> float:
        return 0.5 * float(np.sum(self.config.v**2))


# ---------------------------------------------------------------------------
# elementary operations
# ---------------------------------------------------------------------------

def predict_pair_collision(zi: PhasePoint, zj: PhasePoint, eps: float):
    """Smallest t > 0 with |dx + t dv| = eps while approaching, or None."""
    dx = np.asarray(zi.x, float) - np.asarray(zj.x, float)
    dv = np.asarray(zi.v, float) - np.asarray(zj.v, float)
    t = _collision_time(dx, dv, eps)
    return None if math.isinf(t) else t


@numba.njit(cache=True, inline="always")
def _collision_time_nb(dx, dv, eps):
    b = 0.0
    v2 = 0.0
    r2 = 0.0
    for k in range(dx.shape[0]):
        b += dx[k] * dv[k]
        v2 += dv[k] * dv[k]
        r2 += dx[k] * dx[k]
    if b >= 0.0 or v2 == 0.0:
        return np.inf
    disc = b * b - v2 * (r2 - eps * eps)
    if disc <= 0.0:
        return np.inf
    # stable root of v2 t^2 + 2 b t + (r2 - eps^2) = 0
    t = (r2 - eps * eps) / (-b + math.sqrt(disc))
    return max(t, 0.0)


def _collision_time(dx, dv, eps):
    return float(_collision_time_nb(np.ascontiguousarray(dx, dtype=np.float64),
                                    np.ascontiguousarray(dv, dtype=np.float64), float(eps)))


def reflect(vi, vj, nu, graze_tol: float = GRAZING_TOL):
    """Elastic reflection of a colliding pair along the unit normal nu."""
    vi = np.asarray(vi, float)
    vj = np.asarray(vj, float)
    nu = np.asarray(nu, float)
    if abs(float(nu @ nu) - 1.0) > 2e-12:
        raise ValueError("nu must be a unit vector")
    dv = vi - vj
    s = float(nu @ dv)
    if abs(s) < graze_tol * max(1.0, math.sqrt(float(dv @ dv))):
        raise GrazingCollision(f"grazing collision, nu . dv = {s!r}")
    return vi - s * nu, vj + s * nu


def reflect_batch(vi, vj, nu):
    """Vectorised :func:`reflect` for arrays of shape (n, d) (no grazing check)."""
    s = np.einsum("ij,ij->i", nu, vi - vj)[:, None]
    return vi - s * nu, vj + s * nu


# ---------------------------------------------------------------------------
# compiled event loop
# ---------------------------------------------------------------------------
#
# Event tuples are (time, i, j, ci, cj, kind) with internal kinds
#   0  pair collision between i < j, valid while cnt[i] == ci and cnt[j] == cj
#   1  renewal horizon of i (all-pairs periodic mode)
#   4  cell crossing of i (cell mode); j encodes 2 * axis + (direction > 0),
#      cj is the crossing counter of i at scheduling time
#
# cnt[i] counts velocity changes of particle i.

_PAIR, _HORIZON, _CROSS = 0, 1, 4


@numba.njit(cache=True)
def _advance(x, v, tl, i, t):
    for k in range(x.shape[1]):
        x[i, k] += v[i, k] * (t - tl[i])
    tl[i] = t


@numba.njit(cache=True)
def _pair_time(i, j, t, x, v, tl, eps2, sx, sy, sz):
    """Contact time of i with the image of j shifted by (sx, sy, sz)."""
    d = x.shape[1]
    dti = t - tl[i]
    dtj = t - tl[j]
    b = 0.0
    v2 = 0.0
    r2 = 0.0
    for k in range(d):
        sh = sx if k == 0 else (sy if k == 1 else sz)
        a = (x[i, k] + v[i, k] * dti) - (x[j, k] + v[j, k] * dtj + sh)
        w = v[i, k] - v[j, k]
        b += a * w
        v2 += w * w
        r2 += a * a
    if b >= 0.0 or v2 == 0.0:
        return np.inf
    disc = b * b - v2 * (r2 - eps2)
    if disc <= 0.0:
        return np.inf
    tc = (r2 - eps2) / (-b + math.sqrt(disc))
    return tc if tc > 0.0 else 0.0


@numba.njit(cache=True)
def _push_pair(heap, t, i, j, cnt, kind=0):
    if j < i:
        heapq.heappush(heap, (t, j, i, cnt[j], cnt[i], kind))
    else:
        heapq.heappush(heap, (t, i, j, cnt[i], cnt[j], kind))


@numba.njit(cache=True)
def _predict_all(i, t, x, v, tl, cnt, eps, L, vbound, heap):
    """All-pairs prediction; in a periodic box also schedules a renewal
    before any non-minimal image could come into contact."""
    n, d = x.shape
    best = np.inf
    partner = -1
    eps2 = eps * eps
    halfL = 0.5 * L
    dti = t - tl[i]
    for j in range(n):
        if j == i:
            continue
        dtj = t - tl[j]
        b = 0.0
        v2 = 0.0
        r2 = 0.0
        for k in range(d):
            a = (x[i, k] + v[i, k] * dti) - (x[j, k] + v[j, k] * dtj)
            if L > 0.0:
                a -= L * math.floor(a / L + 0.5)
            w = v[i, k] - v[j, k]
            b += a * w
            v2 += w * w
            r2 += a * a
        if b >= 0.0 or v2 == 0.0:
            continue
        disc = b * b - v2 * (r2 - eps2)
        if disc <= 0.0:
            continue
        tc = (r2 - eps2) / (-b + math.sqrt(disc))
        if tc < 0.0:
            tc = 0.0
        if tc < best:
            best = tc
            partner = j
    if L > 0.0:
        speed = 0.0
        for k in range(d):
            speed += v[i, k] * v[i, k]
        denom = math.sqrt(speed) + vbound
        horizon = (halfL - eps) / denom if denom > 0 else np.inf
        if horizon < best:
            if horizon < np.inf:
                heapq.heappush(heap, (t + horizon, i, i, cnt[i], cnt[i], _HORIZON))
            return
    if partner >= 0:
        _push_pair(heap, t + best, i, partner, cnt)


@numba.njit(cache=True)
def _predict_cells(i, t, x, v, tl, cnt, ccnt, cell, head, nxt, m, w, eps, L, heap):
    """Prediction against the 3^d neighbouring cells plus the next cell crossing."""
    n, d = x.shape
    eps2 = eps * eps
    best = np.inf
    partner = -1
    noff = 3 ** d
    for o in range(noff):
        rem = o
        flat = 0
        stride = 1
        sx = 0.0
        sy = 0.0
        sz = 0.0
        for k in range(d):
            ck = cell[i, k] + (rem % 3) - 1
            rem //= 3
            sh = 0.0
            if ck < 0:
                ck += m
                sh = -L
            elif ck >= m:
                ck -= m
                sh = L
            if k == 0:
                sx = sh
            elif k == 1:
                sy = sh
            else:
                sz = sh
            flat += ck * stride
            stride *= m
        j = head[flat]
        while j >= 0:
            if j != i:
                tc = _pair_time(i, j, t, x, v, tl, eps2, sx, sy, sz)
                if tc < best:
                    best = tc
                    partner = j
            j = nxt[j]
    tx = np.inf
    code = -1
    dti = t - tl[i]
    for k in range(d):
        vk = v[i, k]
        if vk == 0.0:
            continue
        pos = x[i, k] + vk * dti
        if vk > 0.0:
            tk = ((cell[i, k] + 1) * w - pos) / vk
        else:
            tk = (cell[i, k] * w - pos) / vk
        if tk < 0.0:
            tk = 0.0
        if tk < tx:
            tx = tk
            code = 2 * k + (1 if vk > 0.0 else 0)
    if tx < best:
        heapq.heappush(heap, (t + tx, i, code, cnt[i], ccnt[i], _CROSS))
    elif partner >= 0:
        _push_pair(heap, t + best, i, partner, cnt)


@numba.njit(cache=True)
def _flat(cell, i, m):
    f = 0
    stride = 1
    for k in range(cell.shape[1]):
        f += cell[i, k] * stride
        stride *= m
    return f


@numba.njit(cache=True)
def _predict(i, t, x, v, tl, cnt, ccnt, cell, head, nxt, m, w, eps, L, vbound, heap):
    if m > 0:
        _predict_cells(i, t, x, v, tl, cnt, ccnt, cell, head, nxt, m, w, eps, L, heap)
    else:
        _predict_all(i, t, x, v, tl, cnt, eps, L, vbound, heap)


@numba.njit(cache=True)
def _log(log_t, log_k, log_i, log_j, nlog, t, kind, i, j):
    if nlog < log_t.shape[0]:
        log_t[nlog] = t
        log_k[nlog] = kind
        log_i[nlog] = i
        log_j[nlog] = j
        return nlog + 1
    return nlog


@numba.njit(cache=True)
def _run(x, v, t0, T, eps, L, m, max_collisions, graze_tol, tie_tol, log_cap):
    n, d = x.shape
    tl = np.full(n, t0)
    cnt = np.zeros(n, dtype=np.int64)
    ccnt = np.zeros(n, dtype=np.int64)
    counts = np.zeros(4, dtype=np.int64)
    log_t = np.empty(log_cap)
    log_k = np.empty(log_cap, dtype=np.int64)
    log_i = np.empty(log_cap, dtype=np.int64)
    log_j = np.empty(log_cap, dtype=np.int64)
    nlog = 0

    # cell grid (m == 0 selects all-pairs prediction)
    w = L / m if m > 0 else 0.0
    ncell = m ** d if m > 0 else 1
    cell = np.zeros((n, d), dtype=np.int64)
    head = np.full(ncell, -1, dtype=np.int64)
    nxt = np.full(n, -1, dtype=np.int64)
    prv = np.full(n, -1, dtype=np.int64)
    if m > 0:
        for i in range(n):
            for k in range(d):
                c = int(math.floor(x[i, k] / w))
                cell[i, k] = min(max(c, 0), m - 1)
            f = _flat(cell, i, m)
            nxt[i] = head[f]
            if head[f] >= 0:
                prv[head[f]] = i
            head[f] = i

    # running maximum of all speeds: an upper bound for the whole run
    vbound = 0.0
    for i in range(n):
        sp = 0.0
        for k in range(d):
            sp += v[i, k] * v[i, k]
        vbound = max(vbound, math.sqrt(sp))

    heap = [(np.inf, -1, -1, -1, -1, -1)]
    heap.pop()
    for i in range(n):
        _predict(i, t0, x, v, tl, cnt, ccnt, cell, head, nxt, m, w, eps, L, vbound, heap)
    t = t0
    last_t = -np.inf
    last_i = -1
    last_j = -1
    max_err = 0.0
    status = 0
    halfL = 0.5 * L
    nu = np.empty(d)
    while len(heap) > 0 and counts[0] + counts[2] < max_collisions:
        if heap[0][0] > T:
            break
        te, i, j, ci, cj, kind = heapq.heappop(heap)
        if cnt[i] != ci:
            # the event may have been the only one scheduled for j
            if kind == _PAIR and cnt[j] == cj:
                _predict(j, t, x, v, tl, cnt, ccnt, cell, head, nxt, m, w, eps, L, vbound, heap)
            continue
        if kind == _HORIZON:
            _advance(x, v, tl, i, te)
            wrapped = False
            for k in range(d):
                shift = math.floor(x[i, k] / L)
                if shift != 0.0:
                    x[i, k] -= L * shift
                    wrapped = True
            if wrapped:
                counts[1] += 1
                nlog = _log(log_t, log_k, log_i, log_j, nlog, te, 1, i, -1)
            t = te
            _predict(i, te, x, v, tl, cnt, ccnt, cell, head, nxt, m, w, eps, L, vbound, heap)
            continue
        if kind == _CROSS:
            if ccnt[i] != cj:
                continue
            t = te
            _advance(x, v, tl, i, te)
            ccnt[i] += 1
            f = _flat(cell, i, m)
            if prv[i] >= 0:
                nxt[prv[i]] = nxt[i]
            else:
                head[f] = nxt[i]
            if nxt[i] >= 0:
                prv[nxt[i]] = prv[i]
            k = j // 2
            if j % 2 == 1:
                cell[i, k] += 1
                if cell[i, k] == m:
                    cell[i, k] = 0
                    x[i, k] -= L
                    counts[1] += 1
                    nlog = _log(log_t, log_k, log_i, log_j, nlog, te, 1, i, -1)
            else:
                cell[i, k] -= 1
                if cell[i, k] < 0:
                    cell[i, k] = m - 1
                    x[i, k] += L
                    counts[1] += 1
                    nlog = _log(log_t, log_k, log_i, log_j, nlog, te, 1, i, -1)
            f = _flat(cell, i, m)
            prv[i] = -1
            nxt[i] = head[f]
            if head[f] >= 0:
                prv[head[f]] = i
            head[f] = i
            _predict(i, te, x, v, tl, cnt, ccnt, cell, head, nxt, m, w, eps, L, vbound, heap)
            continue
        if cnt[j] != cj:
            _predict(i, t, x, v, tl, cnt, ccnt, cell, head, nxt, m, w, eps, L, vbound, heap)
            continue
        t = te
        _advance(x, v, tl, i, te)
        _advance(x, v, tl, j, te)
        r2 = 0.0
        for k in range(d):
            a = x[i, k] - x[j, k]
            if L > 0.0:
                if a > halfL:
                    a -= L
                elif a < -halfL:
                    a += L
            nu[k] = a
            r2 += a * a
        r = math.sqrt(r2)
        err = abs(r - eps) / eps
        if err > max_err:
            max_err = err
        if r < eps * (1.0 - 1e-9):
            status = 1
            last_i = i
            last_j = j
            break
        s = 0.0
        dvn = 0.0
        for k in range(d):
            nu[k] /= r
            dvk = v[i, k] - v[j, k]
            s += nu[k] * dvk
            dvn += dvk * dvk
        if te - last_t <= tie_tol and (i == last_i or i == last_j or j == last_i or j == last_j):
            counts[3] += 1
            nlog = _log(log_t, log_k, log_i, log_j, nlog, te, 3, i, j)
        kind_out = 0
        if abs(s) < graze_tol * max(1.0, math.sqrt(dvn)):
            counts[2] += 1
            kind_out = 2
        else:
            si = 0.0
            sj = 0.0
            for k in range(d):
                v[i, k] -= s * nu[k]
                v[j, k] += s * nu[k]
                si += v[i, k] * v[i, k]
                sj += v[j, k] * v[j, k]
            vbound = max(vbound, math.sqrt(max(si, sj)))
            counts[0] += 1
        nlog = _log(log_t, log_k, log_i, log_j, nlog, te, kind_out, i, j)
        last_t = te
        last_i = i
        last_j = j
        cnt[i] += 1
        cnt[j] += 1
        _predict(i, te, x, v, tl, cnt, ccnt, cell, head, nxt, m, w, eps, L, vbound, heap)
        _predict(j, te, x, v, tl, cnt, ccnt, cell, head, nxt, m, w, eps, L, vbound, heap)
    t_end = t if (counts[0] + counts[2] >= max_collisions or status != 0) else T
    for i in range(n):
        _advance(x, v, tl, i, t_end)
        if L > 0.0:
            for k in range(d):
                x[i, k] -= L * math.floor(x[i, k] / L)
    return (t_end, counts, max_err, status, last_i, last_j,
            log_t[:nlog], log_k[:nlog], log_i[:nlog], log_j[:nlog])


def cell_grid_size(N: int, d: int, eps: float, L: float, occupancy: float = 2.0) -> int:
    """Cells per box side for the periodic cell grid, or 0 for all-pairs mode.

    Cells must be at least one diameter wide and there must be at least three
    per side so that the neighbouring cells of a cell are distinct.
    """
    if L <= 0:
        return 0
    m = min(int(math.floor(L / eps)), int(math.floor((N / occupancy) ** (1.0 / d))))
    return m if m >= 3 else 0


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def overlapping_pairs(x: np.ndarray, eps: float, domain: Domain = FREE_SPACE, tol: float = 1e-12):
    """Pairs closer than eps (1 - tol)."""
    if len(x) < 2:
        return set()
    if domain.periodic:
        tree = cKDTree(np.mod(x, domain.side), boxsize=domain.side)
    else:
        tree = cKDTree(x)
    return tree.query_pairs(eps * (1 - tol))


def run_to(state: MdState, T: float, max_collisions: int | None = None,
           log_events: bool = False, log_cap: int = 10_000_000, use_cells: bool = True) -> MdState:
    """Advance the hard-sphere flow to time T (or until max_collisions pair events).

    Returns a new state; counters accumulate on top of those of ``state``.
    The input state is left untouched.
    """
    if T < state.t:
        raise ValueError("T must not precede the current time")
    x = np.array(state.config.x, dtype=np.float64)
    v = np.array(state.config.v, dtype=np.float64)
    if state.n and overlapping_pairs(x, state.epsilon, state.domain, tol=OVERLAP_TOL):
        raise OverlapError("initial configuration has overlapping spheres")
    L = state.domain.side if state.domain.periodic else 0.0
    if L > 0:
        x = np.mod(x, L)
        if state.epsilon >= 0.5 * L:
            raise ValueError("periodic box must be larger than twice the diameter")
    cap = max_collisions if max_collisions is not None else np.iinfo(np.int64).max
    n = state.n
    if n == 0:
        return replace(state, t=float(T), event_count=dict(state.event_count))
    m = cell_grid_size(n, state.config.d, state.epsilon, L) if use_cells else 0
    out = _run(x, v, float(state.t), float(T), float(state.epsilon), float(L), int(m), int(cap),
               GRAZING_TOL, TIE_TOL, int(log_cap) if log_events else 0)
    t_end, counts, max_err, status, li, lj, lt, lk, lii, ljj = out
    if status:
        dump = {"t": t_end, "pair": (int(li), int(lj)), "x_i": x[li].tolist(), "x_j": x[lj].tolist()}
        raise OverlapError(f"overlap beyond tolerance detected: {dump}")
    ec = dict(state.event_count)
    for k, name in enumerate(EVENT_KINDS):
        ec[name] = ec.get(name, 0) + int(counts[k])
    log = None
    if log_events:
        log = [CollisionEvent(float(a), (int(b), int(c)), EVENT_KINDS[int(k)])
               for a, k, b, c in zip(lt, lk, lii, ljj)]
    return MdState(PhaseConfiguration(x, v), state.epsilon, state.domain, float(t_end), ec,
                   max(state.max_contact_error, float(max_err)), log)


def random_initial_state(N: int, d: int, eps: float, domain: Domain, rng, theta: float = 1.0,
                         velocities: np.ndarray | None = None, zero_momentum: bool = True) -> MdState:
    """Uniform non-overlapping positions (box side L, or unit box in free space) and
    Maxwellian velocities at temperature theta."""
    check_dimension(d)
    gen = as_generator(rng)
    side = domain.side if domain.periodic else 1.0
    x = gen.random((N, d)) * side
    for _ in range(1000):
        bad = overlapping_pairs(x, eps, domain, tol=-1e-9)
        if not bad:
            break
        idx = sorted({p[1] for p in bad})
        x[idx] = gen.random((len(idx), d)) * side
    else:
        raise RuntimeError("could not place non-overlapping spheres")
    if velocities is None:
        v = gen.standard_normal((N, d)) * math.sqrt(theta)
        if zero_momentum and N > 1:
            v -= v.mean(axis=0)
    else:
        v = np.array(velocities, float)
    return MdState(PhaseConfiguration(x, v), float(eps), domain)


def _pair_samples(v: np.ndarray, max_pairs: int = 2_000_000):
    n = len(v)
    if n < 2:
        return np.empty((0, 2 * v.shape[1]))
    if n * (n - 1) <= max_pairs:
        i, j = np.nonzero(~np.eye(n, dtype=bool))
    else:
        shifts = np.arange(1, max(2, max_pairs // n))
        i = np.repeat(np.arange(n), len(shifts))
        j = (i + np.tile(shifts, n)) % n
        i, j = np.concatenate([i, j]), np.concatenate([j, i])
    return np.hstack([v[i], v[j]])


def empirical_marginal(states, s: int = 1, binning: Binning = Binning(), positions: bool = False) -> Histogram:
    """Histogram estimate of the s-particle velocity marginal over snapshots.

    Samples outside the binned range are dropped before normalising, so the
    returned density integrates to 1 over the histogram support.  For s=2
    all ordered pairs (i, j), i != j, are used, which symmetrises the
    estimate; very large systems use a fixed, deterministic subset of pairs.
    With ``positions=True`` (s=1 only) the histogram is over (x, v).
    """
    states = list(states)
    if not states:
        raise ValueError("need at least one snapshot")
    if s not in (1, 2):
        raise ValueError("s must be 1 or 2")
    d = states[0].config.d
    if s == 1:
        if positions:
            data = np.vstack([np.hstack([st.config.x, st.config.v]) for st in states])
            side = states[0].domain.side if states[0].domain.periodic else 1.0
            edges = [np.linspace(0, side, binning.nbins + 1)] * d + binning.edges(d)
        else:
            data = np.vstack([st.config.v for st in states])
            edges = binning.edges(d)
    else:
        if positions:
            raise ValueError("positions are only supported for s=1")
        data = np.vstack([_pair_samples(st.config.v) for st in states])
        edges = binning.edges(2 * d)
    counts, edges = np.histogramdd(data, bins=edges)
    total = counts.sum()
    vol = float(np.prod([e[1] - e[0] for e in edges]))
    density = counts / (total * vol) if total > 0 else counts.astype(float)
    return Histogram(list(edges), counts, density)


def reversibility_check(state: MdState, T: float) -> float:
    """Run forward for time T, reverse velocities, run T again; return max position error."""
    fwd = run_to(state, state.t + T)
    patho = sum(fwd.event_count[k] - state.event_count.get(k, 0)
                for k in ("pathological_grazing", "pathological_triple"))
    if patho:
        raise ValueError("the forward run contains pathological events")
    back_state = MdState(PhaseConfiguration(fwd.config.x, -fwd.config.v), state.epsilon,
                         state.domain, fwd.t)
    back = run_to(back_state, fwd.t + T)
    dx = back.config.x - state.config.x
    if state.domain.periodic:
        L = state.domain.side
        dx -= L * np.round(dx / L)
    return float(np.max(np.abs(dx))) if dx.size else 0.0


def write_snapshot_csv(path, states) -> None:
    states = list(states)
    d = states[0].config.d if states else 2
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "particle"] + [f"x{k+1}" for k in range(d)] + [f"v{k+1}" for k in range(d)])
        for st in states:
            for p in range(st.n):
                w.writerow([repr(st.t), p] + [repr(float(a)) for a in st.config.x[p]]
                           + [repr(float(a)) for a in st.config.v[p]])


def write_event_log_csv(path, events) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "kind", "i", "j"])
        for ev in events:
            w.writerow([repr(ev.time), ev.kind, ev.pair[0], ev.pair[1]])
