"""Causal variational principles on compact spaces.

A compact space is a finite set of points with a symmetric nonnegative
Lagrangian matrix.  Normalized measures are weight vectors on the simplex;
the action is ``w^T L w``.  Sphere spaces carry unit-vector coordinates and
a Lagrangian ``L(x, y) = g(<x, y>)``, which makes every rotation a symmetry.
"""
import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import CubicSpline

from . import qp

NORM_TOL = 1e-12
PRUNE = 1e-12


class CvpError(Exception):
    pass


class NotNormalized(CvpError, ValueError):
    pass


class InvalidSpace(CvpError, ValueError):
    pass


class IndexOutOfRegion(CvpError, IndexError):
    pass


class InfeasibleInitialData(CvpError):
    pass


class NotConverged(CvpError):
    pass


# ---------------------------------------------------------------- spaces

@dataclass(frozen=True, eq=False)
class CompactSpace:
    """Points (labels or unit vectors) with the Lagrangian matrix between them."""
    points: list
    lagrangian: np.ndarray
    coords: np.ndarray = None          # (n, 3) unit vectors for sphere spaces
    profile: object = None             # g with L = g(<x, y>), if any

    def __post_init__(self):
        lag = np.asarray(self.lagrangian, dtype=float)
        n = len(self.points)
        if lag.shape != (n, n):
            raise InvalidSpace("Lagrangian matrix has shape %s for %d points" % (lag.shape, n))
        scale = max(np.max(np.abs(lag)), 1e-300) if n else 1.0
        if n and np.max(np.abs(lag - lag.T)) > 1e-12 * scale:
            raise InvalidSpace("Lagrangian matrix is not symmetric")
        if n and lag.min() < -1e-12 * scale:
            raise InvalidSpace("Lagrangian matrix has negative entries")
        object.__setattr__(self, "lagrangian", 0.5 * (lag + lag.T))

    def __len__(self):
        return len(self.points)


class Profile:
    """``g(c)`` on ``[-1, 1]`` from polynomial coefficients or from samples (cubic spline)."""

    def __init__(self, coefficients=None, samples=None):
        if (coefficients is None) == (samples is None):
            raise InvalidSpace("give either coefficients or samples")
        if coefficients is not None:
            self.spec = {"coefficients": [float(c) for c in coefficients]}
            p = Polynomial(self.spec["coefficients"])
            self._g, self._dg = p, p.deriv()
        else:
            c = np.asarray(samples["c"], dtype=float)
            g = np.asarray(samples["g"], dtype=float)
            if c.ndim != 1 or c.shape != g.shape or len(c) < 4 or np.any(np.diff(c) <= 0):
                raise InvalidSpace("samples need at least four increasing c values with matching g")
            self.spec = {"samples": {"c": c.tolist(), "g": g.tolist()}}
            sp = CubicSpline(c, g)
            self._g, self._dg = sp, sp.derivative()

    def __call__(self, c):
        return self._g(np.asarray(c, dtype=float))

    def derivative(self, c):
        return self._dg(np.asarray(c, dtype=float))


def _orbit(seed):
    """Orbit of a vector under the 48 signed coordinate permutations."""
    out = set()
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            out.add(tuple(float(s * seed[p]) for s, p in zip(signs, perm)))
    return sorted(out)


ORBITS = {
    "octahedron": (1.0, 0.0, 0.0),
    "cube": (1.0, 1.0, 1.0),
    "cuboctahedron": (1.0, 1.0, 0.0),
}


def sphere_points(orbits=("octahedron", "cube", "cuboctahedron")):
    """Unit vectors forming a union of orbits of the full octahedral group."""
    pts = []
    for name in orbits:
        if name not in ORBITS:
            raise InvalidSpace("unknown orbit %r" % (name,))
        v = np.array(_orbit(ORBITS[name]))
        pts.append(v / np.linalg.norm(v, axis=1)[:, None])
    return np.concatenate(pts)


def sphere_space(profile, orbits=("octahedron", "cube", "cuboctahedron")):
    x = sphere_points(orbits)
    c = np.clip(x @ x.T, -1.0, 1.0)
    return CompactSpace([tuple(p) for p in x], profile(c), x, profile)


def octahedral_rotations():
    """The 24 proper rotations that map the coordinate axes to themselves."""
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            r = np.zeros((3, 3))
            for i, (p, s) in enumerate(zip(perm, signs)):
                r[i, p] = s
            if np.linalg.det(r) > 0:
                mats.append(r)
    return mats


def relabeling(rotation, coords, tol=1e-12):
    """Permutation ``p`` with ``R x_i = x_{p[i]}``; raises if the point set is not preserved."""
    moved = coords @ np.asarray(rotation).T
    d = np.linalg.norm(moved[:, None, :] - coords[None, :, :], axis=2)
    p = np.argmin(d, axis=1)
    if np.max(d[np.arange(len(coords)), p]) > tol or len(set(p)) != len(p):
        raise InvalidSpace("rotation does not preserve the discretization")
    return p


# ---------------------------------------------------------------- the variational principle

def cvp_action(space, weights):
    """``S = w^T L w`` for a normalized weight vector."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(space),):
        raise NotNormalized("expected %d weights, got shape %s" % (len(space), w.shape))
    if np.any(w < 0) or abs(np.sum(w) - 1.0) > NORM_TOL:
        raise NotNormalized("weights must be nonnegative with sum 1 (sum = %.17g)" % np.sum(w))
    return float(w @ space.lagrangian @ w)


@dataclass(frozen=True)
class CvpConfig:
    max_iters: int = 5000
    random_starts: int = 8
    seed: int = 0
    el_tol: float = 1e-6
    tie_break: str = "support"

    def __post_init__(self):
        if self.max_iters < 1 or self.random_starts < 0:
            raise ValueError("max_iters must be positive and random_starts nonnegative")
        if self.tie_break not in ("support", "entropy"):
            raise ValueError("tie_break must be 'support' or 'entropy'")


@dataclass(frozen=True)
class CausalReport:
    timelike: np.ndarray          # boolean matrix on the support: L(x, y) > 0
    timelike_pairs: int
    spacelike_pairs: int


@dataclass
class CvpResult:
    weights: np.ndarray
    support: np.ndarray
    action: float
    el_spread: float              # spread of 2 (L w)_i over the support, relative to the mean
    off_support_gap: float        # min over i off the support of 2 (L w)_i - const, relative
    causal: CausalReport
    history: list = field(default_factory=list)

    @property
    def converged(self):
        return self.el_spread <= 1e-6 and self.off_support_gap >= -1e-6


def el_check(space, w):
    """``(spread, gap)`` of the scalar EL condition ``2 (L w)_i = const`` on the support."""
    ell = 2 * space.lagrangian @ w
    sup = w > PRUNE * max(w.max(), 1e-300)
    mean = float(np.mean(ell[sup]))
    scale = abs(mean) if mean != 0 else 1.0
    spread = float((ell[sup].max() - ell[sup].min()) / scale)
    rest = ell[~sup]
    gap = float((rest.min() - ell[sup].max()) / scale) if rest.size else np.inf
    return spread, gap


def causal_report(space, support):
    lag = space.lagrangian[np.ix_(support, support)]
    scale = max(np.max(np.abs(space.lagrangian)), 1e-300)
    tl = lag > 1e-14 * scale
    iu = np.triu_indices(len(support), 1)
    n_t = int(np.sum(tl[iu]))
    return CausalReport(tl, n_t, len(iu[0]) - n_t)


def cvp_minimize(space, cfg=CvpConfig()):
    """Minimize ``w^T L w`` over the probability simplex.

    Projected gradient descent from the barycenter, every vertex and seeded
    random points; weights below ``1e-12`` are pruned and the rest rescaled.
    Ties go to the lexicographically smallest support, then to the most
    uniform weights.
    """
    n = len(space)
    if n == 0:
        raise InvalidSpace("empty space")
    poly = qp.Polytope(n, 1.0)
    rng = np.random.default_rng(cfg.seed)
    res = qp.solve(space.lagrangian, None, poly, qp.default_starts(poly, rng, cfg.random_starts),
                   max_iters=cfg.max_iters, tie_break=cfg.tie_break)
    w = np.where(res.w > PRUNE, res.w, 0.0)
    w = w / w.sum()
    sup = np.nonzero(w)[0]
    spread, gap = el_check(space, w)
    return CvpResult(w, sup, float(w @ space.lagrangian @ w), spread, gap, causal_report(space, sup),
                     res.history)


# ---------------------------------------------------------------- inner variational principle

@dataclass(frozen=True, eq=False)
class InnerProblem:
    """Inner region, external potential ``phi >= 0``, Lagrange parameter ``s > 0`` and initial data."""
    region: tuple
    phi: np.ndarray
    s: float
    rho0: np.ndarray

    def __post_init__(self):
        region = tuple(int(i) for i in self.region)
        if len(set(region)) != len(region):
            raise IndexOutOfRegion("inner region has repeated indices")
        phi = np.asarray(self.phi, dtype=float)
        rho0 = np.asarray(self.rho0, dtype=float)
        if phi.shape != (len(region),) or rho0.shape != (len(region),):
            raise ValueError("phi and rho0 need one value per inner point")
        if np.any(phi < 0):
            raise ValueError("phi must be nonnegative")
        if np.any(rho0 < 0):
            raise ValueError("rho0 must be nonnegative")
        if not self.s > 0:
            raise ValueError("s must be positive")
        object.__setattr__(self, "region", region)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "rho0", rho0)

    def with_phi(self, phi):
        return InnerProblem(self.region, phi, self.s, self.rho0)


def _region_weights(p, weights):
    if isinstance(weights, dict):
        pos = {j: k for k, j in enumerate(p.region)}
        w = np.zeros(len(p.region))
        for j, v in weights.items():
            if int(j) not in pos:
                raise IndexOutOfRegion("index %r is outside the inner region" % (j,))
            w[pos[int(j)]] = v
        return w
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(p.region),):
        raise IndexOutOfRegion("expected %d weights on the inner region, got shape %s" % (len(p.region), w.shape))
    return w


def _inner_matrix(p, space):
    if any(not 0 <= j < len(space) for j in p.region):
        raise IndexOutOfRegion("inner region index outside the space")
    return space.lagrangian[np.ix_(p.region, p.region)]


def inner_action(p, space, weights):
    """``w^T L w + 2 sum w (phi - s)`` for nonnegative weights on the inner region."""
    lag = _inner_matrix(p, space)
    w = _region_weights(p, weights)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    return float(w @ lag @ w + 2 * w @ (p.phi - p.s))


def inner_weights(p, space, max_iters=5000):
    """Minimizer of the inner action over the nonnegative orthant."""
    lag = _inner_matrix(p, space)
    n = len(p.region)
    poly = qp.Polytope(n)
    starts = [np.full(n, p.s / max(np.max(lag), 1e-300))]
    res = qp.solve(lag, 2 * (p.phi - p.s), poly, starts, max_iters=max_iters)
    return np.where(res.w > PRUNE * max(res.w.max(), 1e-300), res.w, 0.0), res


def bump(space, region, center, radius):
    """Radial bump ``(1 - d^2/r^2)^2`` around ``center`` (chordal distance on sphere
    spaces); without coordinates, the indicator of the center."""
    if space.coords is None:
        return np.array([1.0 if j == center else 0.0 for j in region])
    d = np.linalg.norm(space.coords[list(region)] - space.coords[center], axis=1)
    return np.where(d < radius, (1 - (d / radius) ** 2) ** 2, 0.0)


@dataclass(frozen=True)
class PotentialFamily:
    """``phi = a + b * bump(center)`` with ``a, b >= 0`` and a center in the inner region."""
    radius: float = 0.8
    angles: int = 21              # directions (a, b) = t (1 - theta, theta) searched per center
    phi_max: float = 10.0
    tol: float = 1e-9


@dataclass
class InnerResult:
    feasible: bool
    phi: np.ndarray
    params: tuple                 # (a, b, center)
    phi_norm: float               # max phi
    weights: np.ndarray
    action: float


def _feasible(p, space, phi, tol):
    w, _ = inner_weights(p.with_phi(phi), space)
    return bool(np.all(w >= p.rho0 - tol * max(1.0, p.rho0.max()))), w


def inner_minimize(p, space, family=PotentialFamily()):
    """Smallest ``max phi`` within the family whose minimizer dominates ``rho0``.

    Along each ray ``(a, b) = t (1 - theta, theta)`` the level ``t`` is found
    by bisection on feasibility; the best ray over all centers wins, ties
    going to the lower ``b`` and then the lower center index.
    """
    _inner_matrix(p, space)
    zero = np.zeros(len(p.region))
    ok, w = _feasible(p, space, zero, family.tol)
    if ok:
        q = p.with_phi(zero)
        return InnerResult(True, zero, (0.0, 0.0, p.region[0]), 0.0, w, inner_action(q, space, w))
    best = None
    for center in p.region:
        shape = bump(space, p.region, center, family.radius)
        for k in range(family.angles):
            theta = k / (family.angles - 1)
            direction = (1 - theta) + theta * shape
            if not _feasible(p, space, family.phi_max * direction, family.tol)[0]:
                continue
            lo, hi = 0.0, family.phi_max
            while hi - lo > family.tol * family.phi_max:
                mid = 0.5 * (lo + hi)
                if _feasible(p, space, mid * direction, family.tol)[0]:
                    hi = mid
                else:
                    lo = mid
            phi = hi * direction
            norm = float(phi.max())
            key = (norm, theta, center)
            if best is None or key < best[0]:
                best = (key, phi, (hi * (1 - theta), hi * theta, center))
    if best is None:
        raise InfeasibleInitialData("no potential in the family with max phi <= %g reaches rho0" % family.phi_max)
    _, phi, params = best
    _, w = _feasible(p, space, phi, family.tol)
    return InnerResult(True, phi, params, float(phi.max()), w, inner_action(p.with_phi(phi), space, w))


# ---------------------------------------------------------------- rotation symmetry

def rotation_generator(axis):
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    return np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])


def cap(space, direction, height):
    """Indices of the polar cap ``<x, direction> >= height``."""
    d = np.asarray(direction, dtype=float)
    return np.nonzero(space.coords @ (d / np.linalg.norm(d)) >= height - 1e-12)[0]


def rotation_layer_derivative(space, w, omega, axis):
    """``d/dtau sum_{x in Omega, y not in Omega} w_x w_y [L(R_tau x, y) - L(R_-tau x, y)]`` at 0.

    With ``L = g(<x, y>)`` the derivative of each term is ``2 g'(<x,y>) <J x, y>``.
    """
    if space.coords is None or space.profile is None:
        raise InvalidSpace("rotation flow needs a sphere space")
    omega = np.asarray(sorted(set(int(i) for i in omega)), dtype=int)
    rest = np.setdiff1d(np.arange(len(space)), omega)
    if len(omega) == 0 or len(rest) == 0:
        return 0.0
    x, y = space.coords[omega], space.coords[rest]
    jx = x @ rotation_generator(axis).T
    d = 2 * space.profile.derivative(np.clip(x @ y.T, -1, 1)) * (jx @ y.T)
    return float(w[omega] @ d @ w[rest])


CAP_DIRECTIONS = ((0.0, 0.0, 1.0), (1.0, 2.0, 3.0), (-2.0, 1.0, 0.5))
ROTATION_AXES = ((0.0, 0.0, 1.0), (1.0, 1.0, 0.0), (0.3, -0.5, 0.8))


def symmetry_conservation(space, cfg=CvpConfig(), heights=(-0.5, 0.0, 0.3, 0.8), result=None):
    """Largest rotation surface-layer derivative over polar caps, for a converged minimizer.

    Returns ``(residual, result)``.  Raises NotConverged when the scalar
    EL condition fails, because the conservation law is then not expected.
    """
    res = cvp_minimize(space, cfg) if result is None else result
    if not (res.el_spread <= cfg.el_tol and res.off_support_gap >= -cfg.el_tol):
        raise NotConverged("EL spread %.3g, off-support gap %.3g" % (res.el_spread, res.off_support_gap))
    worst = 0.0
    for direction in CAP_DIRECTIONS:
        for h in heights:
            om = cap(space, direction, h)
            for axis in ROTATION_AXES:
                worst = max(worst, abs(rotation_layer_derivative(space, res.weights, om, axis)))
    return worst, res


# ---------------------------------------------------------------- instances

def space_to_dict(space):
    if space.coords is not None and space.profile is not None:
        return {"sphere": {"points": space.coords.tolist()}, "g": space.profile.spec}
    return {"points": [p if isinstance(p, (str, int)) else list(p) for p in space.points],
            "lagrangian": space.lagrangian.tolist()}


def space_from_dict(obj):
    """Either ``{"points", "lagrangian"}`` or ``{"sphere": {"orbits" | "points"}, "g": {...}}``."""
    if "sphere" in obj:
        g = obj.get("g")
        if not isinstance(g, dict):
            raise InvalidSpace("sphere instances need a 'g' profile")
        prof = Profile(g.get("coefficients"), g.get("samples"))
        sph = obj["sphere"]
        if "points" in sph:
            x = np.asarray(sph["points"], dtype=float)
            x = x / np.linalg.norm(x, axis=1)[:, None]
            c = np.clip(x @ x.T, -1.0, 1.0)
            return CompactSpace([tuple(p) for p in x], prof(c), x, prof)
        return sphere_space(prof, tuple(sph.get("orbits", ("octahedron", "cube", "cuboctahedron"))))
    if "lagrangian" not in obj:
        raise InvalidSpace("instance needs 'lagrangian' or 'sphere'")
    lag = np.asarray(obj["lagrangian"], dtype=float)
    pts = obj.get("points", list(range(len(lag))))
    return CompactSpace(list(pts), lag)


def result_to_dict(res):
    return {"weights": res.weights.tolist(), "support": res.support.tolist(), "action": res.action,
            "el_spread": res.el_spread, "off_support_gap": res.off_support_gap,
            "timelike_pairs": res.causal.timelike_pairs, "spacelike_pairs": res.causal.spacelike_pairs}


LOG_COLUMNS = ["iteration", "action"]
