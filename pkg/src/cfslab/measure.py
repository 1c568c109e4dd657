"""The causal action on finitely supported measures.

A measure is a list of points (``LocalOperator``) with nonnegative
weights.  Action, boundedness functional, Euler-Lagrange diagnostics,
weight and support minimization, unitary push-forwards, surface-layer
derivatives and the mixing decomposition all live here.
"""
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from . import pairs, qp
from .operators import (DimensionMismatch, LocalOperator, NotHermitian, NOISE_FLOOR, SingularPoint,
                        clean_spectra, from_factor, kernel, lagrangian_from_spectrum,
                        operator_from_dict, operator_to_dict, spin_space, _signature_check)
from .qp import InfeasibleConstraints


class MeasureError(Exception):
    pass


class EmptyMeasure(MeasureError):
    pass


class BadIndexSet(MeasureError, IndexError):
    pass


__all__ = ["DiscreteMeasure", "ActionReport", "SolverConfig", "EmptyMeasure", "BadIndexSet",
           "InfeasibleConstraints", "action_report", "effective_action", "q_kernel", "el_residual",
           "minimize_weights", "minimize_support", "unitary_pushforward", "surface_layer_derivative",
           "convex_mix", "injection_probe"]


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    points: tuple
    weights: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        w = np.asarray(self.weights, dtype=float).copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if w.shape != (len(self.points),):
            raise ValueError("one weight per point required")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if self.points:
            f, n = self.points[0].dim_h, self.points[0].spin_dim
            if any(x.dim_h != f or x.spin_dim != n for x in self.points):
                raise DimensionMismatch("points live in different spaces")

    def __len__(self):
        return len(self.points)

    @property
    def support(self):
        return np.nonzero(self.weights > 0)[0]

    @property
    def volume(self):
        return float(np.sum(self.weights))

    @property
    def traces(self):
        return np.array([x.trace for x in self.points])

    def with_weights(self, w, **info):
        return DiscreteMeasure(self.points, w, info)

    def to_dict(self):
        return {"points": [operator_to_dict(x) for x in self.points],
                "weights": [float(v) for v in self.weights]}

    @classmethod
    def from_dict(cls, obj):
        return cls([operator_from_dict(o) for o in obj["points"]], obj["weights"])


@dataclass(frozen=True)
class ActionReport:
    action: float
    boundedness: float
    volume: float
    trace_integral: float


@dataclass(frozen=True)
class SolverConfig:
    kappa: float = 0.0
    lam: float = None              # Lagrange parameter of the trace constraint; None = fit
    target_volume: float = 1.0
    target_trace: float = None     # None = no trace constraint
    bound_C: float = np.inf
    max_iters: int = 5000
    seed: int = 0
    restarts: int = 4
    xtol: float = 1e-14
    kkt_tol: float = 1e-9
    el_tol: float = 1e-6
    anneal_steps: int = 200
    anneal_T0: float = 0.05
    anneal_ratio: float = 0.97
    anneal_patience: int = 40
    move_scale: float = 0.2
    h_rel: float = 1e-5
    workers: int = 1

    def __post_init__(self):
        if not self.bound_C > 0:
            raise ValueError("bound_C must be positive")
        if self.max_iters <= 0:
            raise ValueError("max_iters must be positive")
        if self.target_volume <= 0:
            raise ValueError("target_volume must be positive")


# ---------------------------------------------------------------- action

def _require(m):
    if len(m) == 0:
        raise EmptyMeasure("measure has no points")


def pair_tables(m, kappa=0.0, workers=1):
    """``L_kappa`` and ``|xy|^2`` over all pairs of points."""
    _require(m)
    return pairs.lagrangian_tables(list(m.points), kappa=kappa, workers=workers)


def action_report(m, kappa=0.0, workers=1):
    """Action (with ``L_kappa``, diagonal included), boundedness, volume and trace integral."""
    lt, tt = pair_tables(m, kappa, workers)
    w = m.weights
    return ActionReport(float(w @ (lt @ w)), float(w @ (tt @ w)), m.volume, float(w @ m.traces))


def effective_action(m, cfg):
    """``S + kappa (T - C) - lambda (trace - c)``; kappa is dropped while ``T < C``."""
    rep = action_report(m, 0.0, cfg.workers)
    kappa = cfg.kappa if rep.boundedness >= cfg.bound_C else 0.0
    val = rep.action
    if kappa:
        val += kappa * (rep.boundedness - cfg.bound_C)
    if cfg.lam is not None:
        val -= cfg.lam * (rep.trace_integral - (cfg.target_trace or 0.0))
    return float(val)


def injection_probe(m, x, tau, kappa=0.0):
    """Action of ``(1 - tau^2) rho + tau^2 rho(F) delta_x`` (evaluation only)."""
    _require(m)
    pts = list(m.points) + [x]
    w = np.concatenate([(1 - tau * tau) * m.weights, [tau * tau * m.volume]])
    return action_report(DiscreteMeasure(pts, w), kappa)


# ---------------------------------------------------------------- Q kernel

@dataclass(frozen=True)
class QKernel:
    """``Q(y, x)`` from ``S_x`` to ``S_y`` with a flag for kinks of the Lagrangian."""
    entries: np.ndarray
    nondifferentiable: bool
    mismatch: float


def _lagrangian_of_kernel(p, gx, gy, nspin, kappa, floor):
    pstar = (p.conj().T * gx[None, :]) / gy[:, None]
    ev = np.linalg.eigvals(p @ pstar)
    return float(lagrangian_from_spectrum(clean_spectra(ev, nspin, floor), nspin, kappa))


def q_kernel(m, i, j, kappa=0.0, h=None):
    """Derivative kernel of ``L_kappa(x_i, x_j)`` with respect to ``P(x_i, x_j)``.

    Returns ``Q(x_j, x_i)`` (a ``k_j x k_i`` matrix) such that the first
    variation is ``2 Re Tr(Q(x_j, x_i) dP(x_i, x_j))``, with ``P(x_j, x_i)``
    varied along as the spin adjoint.  Entries come from central
    differences extrapolated twice (steps 100h, 50h, 25h); second-order
    one-sided differences at step h are compared to flag kinks.
    """
    _require(m)
    x, y = m.points[i], m.points[j]
    if not (x.regular and y.regular):
        raise SingularPoint("Q kernel needs regular points")
    sx, sy = spin_space(x), spin_space(y)
    p = kernel(sx, sy).entries
    gx, gy = x.core, y.core
    n = x.spin_dim
    pscale = np.max(np.abs(p))
    h = 1e-5 * pscale if h is None else h
    floor = NOISE_FLOOR * x.norm * y.norm

    def lag(q):
        return _lagrangian_of_kernel(q, gx, gy, n, kappa, floor)

    l0 = lag(p)
    ev = np.linalg.eigvals(p @ ((p.conj().T * gx[None, :]) / gy[:, None]))
    gscale = max(np.sum(np.abs(ev)) ** 2 / max(pscale, 1e-300), 1e-300)
    q = np.zeros((p.shape[1], p.shape[0]), dtype=complex)
    # eigenvalue round-off over a step of h is too large, so the entries use a
    # Richardson table on wider steps; h itself sets the kink test
    wide = (100 * h, 50 * h, 25 * h)
    worst = 0.0
    for a in range(p.shape[0]):
        for b in range(p.shape[1]):
            d = []
            for phase in (1.0, 1j):
                e = np.zeros_like(p)
                e[a, b] = phase

                def cd(s):
                    return (lag(p + s * e) - lag(p - s * e)) / (2 * s)
                c = [cd(s) for s in wide]
                r = [(4 * c[k + 1] - c[k]) / 3 for k in range(2)]
                d.append((16 * r[1] - r[0]) / 15)
                worst = max(worst, abs(r[1] - d[-1]) / gscale)
                fwd = (-3 * l0 + 4 * lag(p + h * e) - lag(p + 2 * h * e)) / (2 * h)
                bwd = (3 * l0 - 4 * lag(p - h * e) + lag(p - 2 * h * e)) / (2 * h)
                worst = max(worst, abs(fwd - bwd) / gscale)
            q[b, a] = 0.5 * (d[0] - 1j * d[1])
    hrel = h / max(pscale, 1e-300)
    return QKernel(q, worst > 100 * hrel * hrel, worst)


def q_adjoint(q, g_source, g_target):
    """Spin adjoint ``G_s^{-1} Q^dagger G_t`` of a map ``Q: S_s -> S_t``."""
    return (q.conj().T * g_target[None, :]) / g_source[:, None]


# ---------------------------------------------------------------- EL diagnostics

@dataclass(frozen=True)
class ELReport:
    profile: np.ndarray
    spread: float
    mean: float
    lam: float
    q_residual: float = None
    q_lam: float = None


def _fit_lam(ell, tr, sup):
    # lambda making 2 L w + lambda tr as constant as possible on the support (least squares)
    t = tr[sup] - tr[sup].mean()
    if np.dot(t, t) <= 1e-30 * max(np.dot(tr[sup], tr[sup]), 1e-300):
        return 0.0
    e = ell[sup] - ell[sup].mean()
    return float(-np.dot(t, e) / np.dot(t, t))


def el_residual(m, cfg, with_q=False, tables=None):
    """Scalar EL profile ``2 sum_j w_j L_kappa(x_i, x_j) + lambda tr(x_i)`` and optional Q residual."""
    _require(m)
    lt = pair_tables(m, cfg.kappa, cfg.workers)[0] if tables is None else tables
    w = m.weights
    sup = m.support
    ell = 2 * lt @ w
    tr = m.traces
    if cfg.lam is not None:
        lam = cfg.lam
    elif cfg.target_trace is not None:
        lam = _fit_lam(ell, tr, sup)
    else:
        lam = 0.0
    prof = ell + lam * tr
    ps = prof[sup]
    rep = ELReport(prof, float(ps.max() - ps.min()), float(ps.mean()), lam)
    if not with_q:
        return rep
    res, qlam = _q_residual(m, cfg)
    return replace(rep, q_residual=res, q_lam=qlam)


def _q_residual(m, cfg):
    sup = list(m.support)
    pts = m.points
    f = pts[0].dim_h
    # psi^u(x) in the spin basis of x, for u running over the standard basis of H
    psi = {i: pts[i].factor.conj().T for i in sup}
    acc = {}
    for i in sup:
        s = np.zeros_like(psi[i])
        for j in sup:
            qk = q_kernel(m, j, i, cfg.kappa).entries     # Q(x_i, x_j): S_j -> S_i
            s = s + m.weights[j] * (qk @ psi[j])
        acc[i] = s
    if cfg.lam is not None:
        lam = cfg.lam
    else:
        num = sum(np.vdot(psi[i], acc[i]).real for i in sup)
        den = sum(np.vdot(psi[i], psi[i]).real for i in sup)
        lam = 2 * num / den
    res = max(np.max(np.linalg.norm(acc[i] - 0.5 * lam * psi[i], axis=0)) for i in sup)
    return float(res), float(lam)


# ---------------------------------------------------------------- weight minimization

def _polytope(m_traces, cfg, n):
    if cfg.target_trace is None:
        return qp.Polytope(n, cfg.target_volume)
    return qp.Polytope(n, cfg.target_volume, m_traces, cfg.target_trace)


def _solve_tables(lt, tt, traces, cfg, rng, vertices=True, random_starts=None):
    n = lt.shape[0]
    poly = _polytope(traces, cfg, n)
    starts = qp.default_starts(poly, rng, cfg.restarts if random_starts is None else random_starts,
                               vertices)

    def run(kappa):
        return qp.solve(lt + kappa * tt, poly=poly, starts=starts, max_iters=cfg.max_iters,
                        xtol=cfg.xtol, kkt_tol=cfg.kkt_tol)

    def bound(r):
        return float(r.w @ tt @ r.w)

    kappa = cfg.kappa
    res = run(kappa)
    if bound(res) <= cfg.bound_C * (1 + 1e-9):
        return res, kappa
    # the boundedness constraint is active: raise kappa until T <= C
    lo, hi = kappa, max(kappa, 1.0) * 2
    best = None
    for _ in range(60):
        r = run(hi)
        if bound(r) <= cfg.bound_C * (1 + 1e-9):
            best = r
            break
        lo, hi = hi, hi * 4
    if best is None:
        raise InfeasibleConstraints("boundedness constraint T <= C cannot be met")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        r = run(mid)
        if bound(r) <= cfg.bound_C * (1 + 1e-9):
            hi, best = mid, r
        else:
            lo = mid
        if hi - lo <= 1e-12 * hi:
            break
    return best, hi


LOG_COLUMNS = ["iter", "S", "T", "volume", "trace", "accepted", "temperature"]


def minimize_weights(points, cfg):
    """Minimize the action over weights on a fixed support.

    Constraints: ``sum w = target_volume``, ``sum w tr(x) = target_trace``
    (when set) and ``T <= bound_C``.  The returned measure carries the run
    log, the effective ``kappa`` and convergence status in ``info``.
    """
    points = list(points)
    if not points:
        raise EmptyMeasure("no points")
    m0 = DiscreteMeasure(points, np.ones(len(points)))
    lt, tt = pairs.lagrangian_tables(points, kappa=0.0, workers=cfg.workers)
    rng = np.random.default_rng(cfg.seed)
    res, kappa = _solve_tables(lt, tt, m0.traces, cfg, rng)
    w = res.w
    log = []
    for k, wk in enumerate(res.trail):
        log.append([k, float(wk @ lt @ wk), float(wk @ tt @ wk), float(np.sum(wk)),
                    float(wk @ m0.traces), 1, 0.0])
    return m0.with_weights(w, log=log, kappa=kappa, value=res.value, converged=res.converged,
                           objective=res.history)


# ---------------------------------------------------------------- support minimization

def _random_unitary_step(rng, f, scale):
    z = rng.standard_normal((f, f)) + 1j * rng.standard_normal((f, f))
    hm = 0.5 * (z + z.conj().T)
    return expm(1j * scale * hm / np.linalg.norm(hm, 2))


def _move(rng, x, scale):
    if rng.random() < 0.5:
        u = _random_unitary_step(rng, x.dim_h, scale)
        return LocalOperator(u @ x.factor, x.core, x.spin_dim)
    b = x.factor * np.sqrt(np.abs(x.core))[None, :]
    g = rng.standard_normal(b.shape) + 1j * rng.standard_normal(b.shape)
    b = b + scale * np.linalg.norm(b, 2) * g / np.linalg.norm(g, 2)
    return from_factor(b, np.sign(x.core), x.spin_dim)


def _validate(m, cfg):
    for x in m.points:
        _signature_check(x.eigenvalues, x.spin_dim)
        if x.rank > 2 * x.spin_dim:
            raise InfeasibleConstraints("rank exceeds 2n")
    rep = action_report(m, 0.0, cfg.workers)
    if abs(rep.volume - cfg.target_volume) > 1e-9 * cfg.target_volume:
        raise InfeasibleConstraints("volume constraint violated")
    if cfg.target_trace is not None and \
            abs(rep.trace_integral - cfg.target_trace) > 1e-9 * max(abs(cfg.target_trace), 1.0):
        raise InfeasibleConstraints("trace constraint violated")
    if rep.boundedness > cfg.bound_C * (1 + 1e-9):
        raise InfeasibleConstraints("boundedness constraint violated")
    return rep


def minimize_support(cfg, initial):
    """Simulated annealing over point moves, with weights re-optimized after every move.

    Moves are random unitary conjugations of one point or nudges of its
    factor.  The best measure found is returned; its ``info`` holds the log
    (columns ``LOG_COLUMNS``) in which the ``S`` column is the current
    state's action and ``best`` the best-so-far.
    """
    _require(initial)
    el0 = el_residual(initial, cfg)
    if el0.spread <= cfg.el_tol * abs(el0.mean):
        return initial.with_weights(initial.weights, log=[], unchanged=True, el_spread=el0.spread)
    rng = np.random.default_rng(cfg.seed)
    pts = list(initial.points)

    def optimize(points):
        lt, tt = pairs.lagrangian_tables(points, kappa=0.0, workers=cfg.workers)
        traces = np.array([x.trace for x in points])
        res, kappa = _solve_tables(lt, tt, traces, cfg, rng, vertices=len(points) <= 12, random_starts=1)
        return res.w, float(res.w @ lt @ res.w), float(res.w @ tt @ res.w), kappa

    w, s, t, kappa = optimize(pts)
    cur = (pts, w, s, t, kappa)
    best = cur
    temp = cfg.anneal_T0
    escale = max(abs(s), 1e-300)
    stale = 0
    log = [[0, s, t, float(np.sum(w)), float(w @ [x.trace for x in pts]), 1, temp, s]]
    for it in range(1, cfg.anneal_steps + 1):
        i = int(rng.integers(len(pts)))
        cand = list(cur[0])
        cand[i] = _move(rng, cand[i], cfg.move_scale * (0.25 + temp / cfg.anneal_T0))
        try:
            w, s, t, kappa = optimize(cand)
        except InfeasibleConstraints:
            log.append([it, cur[2], cur[3], float(np.sum(cur[1])), float(cur[1] @ [x.trace for x in cur[0]]),
                        0, temp, best[2]])
            temp *= cfg.anneal_ratio
            continue
        d = (s - cur[2]) / escale
        accept = d <= 0 or rng.random() < np.exp(-d / max(temp, 1e-300))
        if accept:
            cur = (cand, w, s, t, kappa)
        if cur[2] < best[2]:
            best, stale = cur, 0
        else:
            stale += 1
        if stale >= cfg.anneal_patience:
            cur, stale = best, 0          # restart from the best state on stagnation
        log.append([it, cur[2], cur[3], float(np.sum(cur[1])), float(cur[1] @ [x.trace for x in cur[0]]),
                    int(accept), temp, best[2]])
        temp *= cfg.anneal_ratio
    out = DiscreteMeasure(best[0], best[1])
    _validate(out, cfg)
    el1 = el_residual(out, replace(cfg, kappa=best[4]))
    return out.with_weights(best[1], log=log, kappa=best[4], value=best[2],
                            el_spread=el1.spread, el_spread_initial=el0.spread, unchanged=False)


# ---------------------------------------------------------------- symmetries

def _unitary(generator, tau):
    g = np.asarray(generator, dtype=complex)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise DimensionMismatch("generator must be square")
    if np.max(np.abs(g - g.conj().T)) > 1e-12 * max(np.max(np.abs(g)), 1e-300):
        raise NotHermitian("generator must be Hermitian")
    return expm(1j * tau * g)


def _conjugate(u, x):
    return LocalOperator(u @ x.factor, x.core, x.spin_dim)


def unitary_pushforward(m, generator, tau):
    """Map every point to ``U x U^{-1}`` with ``U = exp(i tau generator)``; weights unchanged."""
    u = _unitary(generator, tau)
    if u.shape[0] != (m.points[0].dim_h if m.points else u.shape[0]):
        raise DimensionMismatch("generator acts on a different space")
    return DiscreteMeasure([_conjugate(u, x) for x in m.points], m.weights)


def surface_layer_derivative(m, omega, generator, kappa=0.0, h=None, workers=1):
    """Central difference at ``tau = 0`` of the surface-layer integral of a unitary flow.

    ``sum_{x in Omega, y not in Omega} w_x w_y [L(Phi_tau x, y) - L(Phi_-tau x, y)]``.
    """
    raw = [int(i) for i in omega]
    omega = sorted(set(raw))
    if len(omega) != len(raw) or any(i < 0 or i >= len(m) for i in omega):
        raise BadIndexSet("indices repeated or outside the measure")
    if any(m.weights[i] == 0 for i in omega):
        raise BadIndexSet("omega must lie in the support")
    rest = [i for i in m.support if i not in set(omega)]
    if not omega or not rest:
        return 0.0
    g = np.asarray(generator, dtype=complex)
    h = 1e-4 / max(np.linalg.norm(g, 2), 1e-300) if h is None else h
    w = m.weights
    wo, wr = w[omega], w[rest]
    ptsr = [m.points[i] for i in rest]

    def layer(tau):
        u, v = _unitary(g, tau), _unitary(g, -tau)
        fwd = pairs.lagrangian_tables([_conjugate(u, m.points[i]) for i in omega], ptsr, kappa, workers)[0]
        bwd = pairs.lagrangian_tables([_conjugate(v, m.points[i]) for i in omega], ptsr, kappa, workers)[0]
        return float(wo @ (fwd - bwd) @ wr)

    return (layer(h) - layer(-h)) / (2 * h)


# ---------------------------------------------------------------- mixing

@dataclass(frozen=True)
class MixDecomposition:
    diagonal: float              # S(rho) / L
    cross: dict                  # (a, b) -> sum_xy w_x w_y L(P_ab) for a != b
    mixed_action: float          # S of the mixed measure, evaluated directly
    predicted: float             # diagonal + sum(cross) / L^2


def _cross_term(m, va, vb, kappa):
    """``sum_xy w_x w_y L`` with closed chains built from the cross kernels ``P_ab``.

    Points move as ``x -> V x V^{-1}``, so ``Psi(V x V^{-1}) = Psi(x) V^{-1}``
    and the cross kernel carries ``V_a^{-1} V_b`` between the wave evaluations.
    """
    pts, w = m.points, m.weights
    n = pts[0].spin_dim
    tot = 0.0
    vab = va.conj().T @ vb
    for i, x in enumerate(pts):
        for j, y in enumerate(pts):
            if w[i] == 0 or w[j] == 0:
                continue
            p = (x.factor.conj().T @ vab @ y.factor) * y.eigenvalues[None, :]
            pba = (y.factor.conj().T @ vab.conj().T @ x.factor) * x.eigenvalues[None, :]
            ev = np.linalg.eigvals(p @ pba)
            sp = clean_spectra(ev, n, NOISE_FLOOR * x.norm * y.norm)
            tot += w[i] * w[j] * float(lagrangian_from_spectrum(sp, n, kappa))
    return tot


def convex_mix(m, generators, kappa=0.0):
    """Mixed measure ``(1/L) sum_a V_a rho`` with ``V_a = exp(i G_a)`` and its action decomposition."""
    _require(m)
    nmix = len(generators)
    if nmix < 2:
        raise ValueError("need at least two generators")
    us = [_unitary(g, 1.0) for g in generators]
    if any(u.shape[0] != m.points[0].dim_h for u in us):
        raise DimensionMismatch("generator acts on a different space")
    pts, ws = [], []
    for u in us:
        pts += [_conjugate(u, x) for x in m.points]
        ws.append(m.weights / nmix)
    mixed = DiscreteMeasure(pts, np.concatenate(ws))
    s_rho = action_report(m, kappa).action
    cross = {}
    for a in range(nmix):
        for b in range(nmix):
            if a != b:
                cross[(a, b)] = _cross_term(m, us[a], us[b], kappa)
    s_mixed = action_report(mixed, kappa).action
    pred = s_rho / nmix + sum(cross.values()) / nmix ** 2
    return mixed, MixDecomposition(s_rho / nmix, cross, s_mixed, pred)


# ---------------------------------------------------------------- serialization

def write_log(path, log):
    from .io import write_csv
    return write_csv(path, LOG_COLUMNS, [r[:len(LOG_COLUMNS)] for r in log])
