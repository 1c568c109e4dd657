"""Quadratic objectives over simplices and orthants.

Minimizes ``f(w) = w^T M w + c^T w`` over ``{w >= 0, A w = b}`` where the
affine rows are either empty (orthant), the volume row ``sum w = V``, or
the volume row plus one more row (e.g. a trace constraint).

The driver is projected gradient descent with Armijo backtracking from
several starts.  Each run is finished by solving the stationarity
conditions on its support face exactly, which turns linear convergence
into machine-precision KKT points.  ``M`` need not be positive definite,
so the starts matter.
"""
from dataclasses import dataclass, field

import numpy as np


class InfeasibleConstraints(ValueError):
    """No nonnegative vector satisfies the affine constraints."""


@dataclass
class QPResult:
    w: np.ndarray
    value: float
    multipliers: np.ndarray
    iterations: int
    history: list = field(default_factory=list)
    converged: bool = True
    trail: list = field(default_factory=list)


# ---------------------------------------------------------------- projections

def project_simplex(z, volume):
    """Euclidean projection onto ``{w >= 0, sum w = volume}``."""
    u = np.sort(z)[::-1]
    css = np.cumsum(u) - volume
    k = np.arange(1, len(z) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(z - theta, 0.0)


def _simplex_trace(z, volume, t, c, tol=1e-15):
    """Projection onto ``{w >= 0, sum w = volume, t.w = c}`` by a bracketed root search on the second multiplier."""
    def trace_at(nu):
        w = project_simplex(z - nu * t, volume)
        return w, t @ w

    span = np.ptp(t)
    scale = (np.max(np.abs(z)) + volume) / span
    lo, hi = -scale, scale
    # t.w(nu) is nonincreasing in nu
    for _ in range(200):
        if trace_at(lo)[1] >= c:
            break
        lo *= 2
    for _ in range(200):
        if trace_at(hi)[1] <= c:
            break
        hi *= 2
    # t.w(nu) is piecewise linear, so false position lands on the right piece quickly
    tr_lo, tr_hi = trace_at(lo)[1], trace_at(hi)[1]
    side = 0
    for _ in range(200):
        if tr_lo == tr_hi or hi - lo <= tol * max(1.0, abs(lo), abs(hi)):
            break
        mid = lo + (tr_lo - c) / (tr_lo - tr_hi) * (hi - lo)
        if not lo < mid < hi:
            mid = 0.5 * (lo + hi)
        w, tr = trace_at(mid)
        if abs(tr - c) <= tol * max(abs(c), np.max(np.abs(t)) * volume):
            return w
        if tr > c:
            lo, tr_lo = mid, tr
            if side == 1:                       # Illinois step keeps both ends moving
                tr_hi = c + 0.5 * (tr_hi - c)
            side = 1
        else:
            hi, tr_hi = mid, tr
            if side == -1:
                tr_lo = c + 0.5 * (tr_lo - c)
            side = -1
    w_lo, tr_lo = trace_at(lo)
    w_hi, tr_hi = trace_at(hi)
    # the two bracketing solutions straddle c; mix them to hit it exactly
    if tr_lo != tr_hi:
        a = (tr_lo - c) / (tr_lo - tr_hi)
        return (1 - a) * w_lo + a * w_hi
    return w_lo


class Polytope:
    """``{w >= 0}`` intersected with ``sum w = volume`` and optionally ``t.w = c``."""

    def __init__(self, n, volume=None, trace_row=None, trace_value=None):
        self.n = n
        self.volume = volume
        self.t = None if trace_row is None else np.asarray(trace_row, dtype=float)
        self.c = trace_value
        if volume is None and self.t is not None:
            raise ValueError("a trace row needs the volume row")
        if volume is not None and volume <= 0:
            raise InfeasibleConstraints("volume must be positive")
        if self.t is not None:
            lo, hi = volume * self.t.min(), volume * self.t.max()
            if not lo - 1e-12 * max(abs(lo), abs(hi), 1.0) <= self.c <= hi + 1e-12 * max(abs(lo), abs(hi), 1.0):
                raise InfeasibleConstraints("trace %.6g outside the reachable range [%.6g, %.6g]" % (self.c, lo, hi))
            if np.ptp(self.t) == 0:
                self.t = None          # the trace row is implied by the volume row

    @property
    def rows(self):
        a, b = [], []
        if self.volume is not None:
            a.append(np.ones(self.n))
            b.append(self.volume)
        if self.t is not None:
            a.append(self.t)
            b.append(self.c)
        return np.array(a).reshape(len(a), self.n), np.array(b)

    def project(self, z):
        if self.volume is None:
            return np.maximum(z, 0.0)
        if self.t is None:
            return project_simplex(z, self.volume)
        return _simplex_trace(z, self.volume, self.t, self.c)

    def center(self):
        if self.volume is None:
            return np.zeros(self.n)
        return self.project(np.full(self.n, self.volume / self.n))


# ---------------------------------------------------------------- solver

def objective(m, c, w):
    return float(w @ m @ w + c @ w)


def _pgd(m, c, poly, w, max_iters, xtol, sigma=1e-4):
    norm = np.linalg.norm(m, 2)
    step = 1.0 / (2 * norm + 1e-300)
    f = objective(m, c, w)
    hist, trail = [f], [w]
    scale = poly.volume if poly.volume is not None else max(1.0, np.sum(w))
    for it in range(max_iters):
        g = 2 * m @ w + c
        s = step * 4.0
        while True:
            wn = poly.project(w - s * g)
            fn = objective(m, c, wn)
            if fn <= f + sigma * g @ (wn - w) or s < 1e-30:
                break
            s *= 0.5
        if fn > f:
            break
        moved = np.linalg.norm(wn - w)
        w, f, step = wn, fn, s
        hist.append(f)
        trail.append(w)
        if moved <= xtol * scale:
            return w, hist, it + 1, trail
    return w, hist, max_iters, trail


def _null_space(a, n):
    if a.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(a)
    rank = int(np.sum(s > 1e-12 * max(s[0], 1e-300)))
    return vt[rank:].T


def _polish(m, c, poly, w, support_tol):
    """Exact stationary point on the support face, closest to the uniform point there."""
    n = len(w)
    scale = poly.volume if poly.volume is not None else max(np.max(w), 1e-300)
    sup = np.nonzero(w > support_tol * scale)[0]
    if len(sup) == 0:
        return None
    a_full, b = poly.rows
    a = a_full[:, sup]
    # particular solution of the face constraints
    if a.shape[0]:
        wp = np.linalg.lstsq(a, b, rcond=None)[0]
        if np.linalg.norm(a @ wp - b) > 1e-10 * max(1.0, np.linalg.norm(b)):
            return None
    else:
        wp = np.zeros(len(sup))
    nb = _null_space(a, len(sup))
    ms, cs = m[np.ix_(sup, sup)], c[sup]
    h = 2 * nb.T @ ms @ nb
    if h.size:
        ev = np.linalg.eigvalsh(0.5 * (h + h.T))
        if ev.min() < -1e-10 * max(np.abs(ev).max(), 1e-300):
            return None                      # saddle on this face
        rhs = -nb.T @ (2 * ms @ wp + cs)
        if poly.volume is not None:
            ref = np.full(len(sup), poly.volume / len(sup))
        else:
            ref = w[sup]
        y_ref = nb.T @ (ref - wp)
        y = y_ref + np.linalg.lstsq(h, rhs - h @ y_ref, rcond=1e-12)[0]
        ws = wp + nb @ y
    else:
        ws = wp
    if np.any(ws < 0):
        return None
    out = np.zeros(n)
    out[sup] = ws
    return out


def _multipliers(m, c, poly, w, support_tol):
    a, _ = poly.rows
    g = 2 * m @ w + c
    scale = poly.volume if poly.volume is not None else max(np.max(w), 1e-300)
    sup = w > support_tol * scale
    if a.shape[0] == 0 or not sup.any():
        return np.zeros(0), g
    mu = np.linalg.lstsq(a[:, sup].T, g[sup], rcond=None)[0]
    return mu, g - a.T @ mu


def _kkt(m, c, poly, w, support_tol, kkt_tol):
    _, red = _multipliers(m, c, poly, w, support_tol)
    gscale = max(np.max(np.abs(2 * m @ w + c)), 1e-300)
    return bool(np.all(red >= -kkt_tol * gscale))


def solve(m, c=None, poly=None, starts=None, max_iters=5000, xtol=1e-14, support_tol=1e-12,
          kkt_tol=1e-9, tie_break="entropy", chunk=50):
    """Minimize ``w^T M w + c^T w`` over the polytope from each start; return the best run.

    ``tie_break`` chooses among runs whose values agree to 1e-10 relative:
    ``"entropy"`` prefers the most uniform weights, ``"support"`` the
    lexicographically smallest support and then the most uniform weights.
    Every ``chunk`` descent steps the support face is solved exactly; a run
    ends as soon as that gives a KKT point.
    """
    m = np.asarray(m, dtype=float)
    m = 0.5 * (m + m.T)
    n = m.shape[0]
    c = np.zeros(n) if c is None else np.asarray(c, dtype=float)
    poly = Polytope(n, 1.0) if poly is None else poly
    starts = [poly.center()] if starts is None else starts
    runs = []
    for w0 in starts:
        w = poly.project(np.asarray(w0, dtype=float))
        hist, trail, iters = [objective(m, c, w)], [w], 0
        while iters < max_iters:
            w, h, it, tr = _pgd(m, c, poly, w, min(chunk, max_iters - iters), xtol)
            hist += h[1:]
            trail += tr[1:]
            iters += it
            wp = _polish(m, c, poly, w, support_tol)
            if wp is not None and objective(m, c, wp) <= hist[-1] + 1e-13 * max(abs(hist[-1]), 1e-300):
                w = wp
                hist.append(min(objective(m, c, w), hist[-1]))
                trail.append(w)
            ok = _kkt(m, c, poly, w, support_tol, kkt_tol)
            # a zero weight with negative reduced gradient: descent continues from here
            if ok or it == 0:
                break
        mu, _ = _multipliers(m, c, poly, w, support_tol)
        ok = _kkt(m, c, poly, w, support_tol, kkt_tol)
        runs.append(QPResult(w, objective(m, c, w), mu, iters, hist, ok, trail))
    return _pick(runs, tie_break, support_tol)


def _entropy(w):
    p = w[w > 0] / np.sum(w) if np.sum(w) > 0 else np.ones(1)
    return float(-np.sum(p * np.log(p)))


def _pick(runs, tie_break, support_tol):
    best = min(r.value for r in runs)
    tol = 1e-10 * max(abs(best), 1e-300) + 1e-15
    cands = [r for r in runs if r.value <= best + tol]
    if tie_break == "support":
        def key(r):
            scale = max(np.max(r.w), 1e-300)
            return (tuple(np.nonzero(r.w > support_tol * scale)[0]), -_entropy(r.w))
        return min(cands, key=key)
    return max(cands, key=lambda r: _entropy(r.w))


def default_starts(poly, rng=None, random_starts=0, vertices=True):
    """Center, optionally vertices and seeded random points of the polytope."""
    n = poly.n
    starts = [poly.center()]
    scale = poly.volume if poly.volume is not None else 1.0
    if vertices and n <= 64:
        for i in range(n):
            e = np.zeros(n)
            e[i] = scale
            starts.append(e)
    if rng is not None:
        for _ in range(random_starts):
            starts.append(rng.dirichlet(np.ones(n)) * scale)
    return starts
