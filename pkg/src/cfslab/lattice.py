"""Finite causal fermion systems from a regularized Dirac sea on a periodic box.

The Hilbert space is spanned by the negative-frequency plane waves on a
spatial torus of side ``L`` with momenta ``2 pi Z^3 / L`` (``modes`` per
axis, two spins each).  Each wave is normalized to one under
``(u|v) = 2 pi int u^dagger v d^3x``, regularized by a multiplier per mode
and evaluated on a space-time lattice.  Every lattice site gives a local
correlation operator ``F(x) = -E_x^dagger gamma^0 E_x`` where ``E_x`` is the
4 x f evaluation matrix of all waves at ``x``.

Spinors use the Dirac representation, ``gamma^0 = diag(1, 1, -1, -1)``.
"""
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np
from scipy import integrate, special
from scipy.spatial import cKDTree

from . import pairs
from .measure import DiscreteMeasure, _conjugate
from .operators import (TOL_CLASSIFY, from_factor, kernel, properly_timelike,
                        spin_space, sqrt_abs_bound, time_direction)
from .sea import GAMMA

REGULARIZATIONS = ("momentum_damping", "mollifier", "sharp_cutoff")
MAX_F = 2 * 11 ** 3
MERGE_TOL = 1e-12
G0 = np.diag([1.0, 1.0, -1.0, -1.0]).astype(complex)
_SIGMA = (np.array([[0, 1], [1, 0]], dtype=complex),
          np.array([[0, -1j], [1j, 0]], dtype=complex),
          np.array([[1, 0], [0, -1]], dtype=complex))


class LatticeError(Exception):
    pass


class InvalidConfig(LatticeError, ValueError):
    pass


class ConfigTooLarge(LatticeError):
    pass


class BadTimeRange(LatticeError, ValueError):
    pass


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class BoxConfig:
    """Box, mode set, regularization and space-time lattice.

    Lengths are in units of ``1/mass`` when ``mass = 1``.
    """
    size: float = 4.0                   # spatial side L
    modes: int = 5                      # momentum modes per axis (odd)
    mass: float = 1.0
    eps: float = 0.05
    regularization: str = "momentum_damping"
    n_t: int = 4                        # time slices
    n_x: int = 5                        # spatial sites per axis
    t_extent: float = 2.0               # time covered by the slices
    max_f: int = MAX_F

    def __post_init__(self):
        if self.modes < 1 or self.modes % 2 == 0:
            raise InvalidConfig("modes must be a positive odd integer, got %r" % (self.modes,))
        if not (self.size > 0 and self.mass > 0 and self.eps > 0 and self.t_extent > 0):
            raise InvalidConfig("size, mass, eps and t_extent must be positive")
        if self.n_t < 1 or self.n_x < 1:
            raise InvalidConfig("n_t and n_x must be positive")
        if self.regularization not in REGULARIZATIONS:
            raise InvalidConfig("regularization must be one of %s" % ", ".join(REGULARIZATIONS))
        if self.f > self.max_f:
            raise ConfigTooLarge("f = 2 * %d^3 = %d exceeds the maximum %d" % (self.modes, self.f, self.max_f))

    @property
    def f(self):
        return 2 * self.modes ** 3

    @property
    def dx(self):
        return self.size / self.n_x

    @property
    def dt(self):
        return self.t_extent / self.n_t

    @property
    def cell_volume(self):
        return self.dt * self.dx ** 3

    @classmethod
    def from_mapping(cls, d):
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise InvalidConfig("unknown keys: %s" % ", ".join(sorted(unknown)))
        kw = {}
        for k, v in d.items():
            kind = known[k]
            if isinstance(v, bool) or (kind is int and not isinstance(v, int)):
                raise InvalidConfig("%s must be an integer" % k)
            if kind is float and not isinstance(v, (int, float)):
                raise InvalidConfig("%s must be a number" % k)
            if kind is str and not isinstance(v, str):
                raise InvalidConfig("%s must be a string" % k)
            kw[k] = float(v) if kind is float else v
        return cls(**kw)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


# ---------------------------------------------------------------- sea basis

def _negative_energy_spinors(k, m):
    """Orthonormal eigenvectors of ``H = alpha.k + beta m`` with eigenvalue ``-omega``."""
    om = np.sqrt(k @ k + m * m)
    sk = k[0] * _SIGMA[0] + k[1] * _SIGMA[1] + k[2] * _SIGMA[2]
    norm = np.sqrt((om + m) / (2 * om))
    out = []
    for s in range(2):
        chi = np.zeros(2, dtype=complex)
        chi[s] = 1.0
        out.append(norm * np.concatenate([-sk @ chi / (om + m), chi]))
    return out


@dataclass(frozen=True, eq=False)
class SeaBasis:
    """Negative-frequency plane waves ``u_l = c_l e_l exp(i omega_l t + i k_l.x)``.

    ``coeff`` holds ``c_l``: the box normalization ``1/sqrt(2 pi L^3)`` times
    the regularization multiplier of mode ``l``.
    """
    size: float
    mass: float
    kvecs: np.ndarray        # (f, 3)
    spins: np.ndarray        # (f,)
    omega: np.ndarray        # (f,)
    spinors: np.ndarray      # (f, 4), orthonormal pairs per momentum
    coeff: np.ndarray        # (f,)
    norm: float              # 1 / sqrt(2 pi L^3)

    @property
    def f(self):
        return len(self.omega)

    @property
    def multipliers(self):
        return self.coeff / self.norm

    def phases(self, coord):
        t, x = coord[0], np.asarray(coord[1:], dtype=float)
        return np.exp(1j * self.omega * t + 1j * (self.kvecs @ x))

    def evaluate(self, coord):
        """4 x f matrix whose columns are the waves at ``coord = (t, x1, x2, x3)``."""
        return (self.spinors * (self.coeff * self.phases(coord))[:, None]).T

    def subset(self, idx):
        idx = np.atleast_1d(np.asarray(idx))
        return SeaBasis(self.size, self.mass, self.kvecs[idx], self.spins[idx], self.omega[idx],
                        self.spinors[idx], self.coeff[idx], self.norm)

    def evaluate_derivatives(self, coord):
        """Analytic ``d/dt`` and ``d/dx_a`` of the evaluation matrix."""
        e = self.evaluate(coord)
        return [e * (1j * self.omega)[None, :]] + [e * (1j * self.kvecs[:, a])[None, :] for a in range(3)]


def build_sea_basis(cfg):
    """All ``2 modes^3`` negative-frequency waves, normalized to one, unregularized."""
    if cfg.f > cfg.max_f:
        raise ConfigTooLarge("f = %d exceeds %d" % (cfg.f, cfg.max_f))
    half = (cfg.modes - 1) // 2
    ks = 2 * np.pi / cfg.size * np.arange(-half, half + 1)
    kv, sp, om, spin = [], [], [], []
    for k in itertools.product(ks, ks, ks):
        k = np.array(k)
        for s, e in enumerate(_negative_energy_spinors(k, cfg.mass)):
            kv.append(k)
            sp.append(s)
            om.append(np.sqrt(k @ k + cfg.mass ** 2))
            spin.append(e)
    norm = 1.0 / np.sqrt(2 * np.pi * cfg.size ** 3)
    f = len(om)
    return SeaBasis(cfg.size, cfg.mass, np.array(kv), np.array(sp), np.array(om), np.array(spin),
                    np.full(f, norm), norm)


def basis_gram(basis, n_x, t=0.0):
    """``(u_i|u_j) = 2 pi sum_x u_i^dagger u_j dx^3`` on the spatial lattice at time ``t``."""
    dx = basis.size / n_x
    g = np.zeros((basis.f, basis.f), dtype=complex)
    for idx in itertools.product(range(n_x), repeat=3):
        e = basis.evaluate((t,) + tuple(dx * np.array(idx)))
        g += e.conj().T @ e
    return 2 * np.pi * dx ** 3 * g


def dirac_residual(basis, coord, dt):
    """Relative residual of the free Dirac equation with a central time difference.

    ``i gamma^0 (u(t+dt) - u(t-dt)) / (2 dt) + i gamma^a d_a u - m u`` per mode,
    divided by ``|u|``; spatial derivatives are exact.
    """
    t = coord[0]
    up = basis.evaluate((t + dt,) + tuple(coord[1:]))
    um = basis.evaluate((t - dt,) + tuple(coord[1:]))
    e = basis.evaluate(coord)
    d = basis.evaluate_derivatives(coord)
    r = 1j * GAMMA[0] @ (up - um) / (2 * dt) - basis.mass * e
    for a in range(3):
        r = r + 1j * GAMMA[a + 1] @ d[a + 1]
    return np.linalg.norm(r, axis=0) / np.linalg.norm(e, axis=0)


# ---------------------------------------------------------------- regularization

def _bump(r):
    out = np.zeros_like(r)
    inside = r < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def _bump_norm():
    # int over the unit ball in R^4 of exp(-1/(1-r^2)), surface area 2 pi^2 r^3
    val, _ = integrate.quad(lambda r: 2 * np.pi ** 2 * r ** 3 * _bump(np.array([r]))[0], 0, 1,
                            epsabs=1e-15, epsrel=1e-13)
    return val


def mollifier_transform(q, cache={}):
    """Fourier transform of the normalized radial bump in ``R^4`` at Euclidean momentum ``|q|``.

    ``h_hat(q) = (2 pi)^2 / q int_0^1 h(r) J_1(q r) r^2 dr`` with ``h_hat(0) = 1``.
    """
    q = float(q)
    if "norm" not in cache:
        cache["norm"] = _bump_norm()
    if q == 0.0:
        return 1.0
    key = round(q, 12)
    if key not in cache:
        val, _ = integrate.quad(lambda r: _bump(np.array([r]))[0] * special.j1(q * r) * r * r, 0, 1,
                                epsabs=1e-16, epsrel=1e-12, limit=400)
        cache[key] = (2 * np.pi) ** 2 / q * val / cache["norm"]
    return cache[key]


def regularization_multipliers(basis, cfg):
    if cfg.regularization == "momentum_damping":
        return np.exp(-cfg.eps * basis.omega)
    if cfg.regularization == "mollifier":
        # space-time convolution: the plane wave with momentum (omega, k) is scaled by h_hat(eps |q|)
        q = np.sqrt(basis.omega ** 2 + np.sum(basis.kvecs ** 2, axis=1))
        return np.array([mollifier_transform(cfg.eps * v) for v in q])
    kk = np.linalg.norm(basis.kvecs, axis=1)
    return (kk <= 1.0 / cfg.eps).astype(float)


def regularize(basis, cfg):
    """Scale each mode by its regularization multiplier; waves stay exact solutions."""
    r = regularization_multipliers(basis, cfg)
    return SeaBasis(basis.size, basis.mass, basis.kvecs, basis.spins, basis.omega, basis.spinors,
                    basis.coeff * r, basis.norm)


def pointwise_bound(basis):
    """Smallest ``c`` with ``|(R u)(x)| <= c |u|`` for all ``u``: the norm of the evaluation map.

    The phases cancel in ``E E^dagger``, so the bound is the same at every point.
    """
    e = basis.evaluate((0.0, 0.0, 0.0, 0.0))
    return float(np.sqrt(np.max(np.linalg.eigvalsh(e @ e.conj().T))))


def weak_convergence_probe(basis, cfg, eta, n_x):
    """``|int eta^bar (R u - u) d^3x|`` at ``t = 0``, maximized over unit ``u``.

    ``eta`` maps an array of points ``(N, 3)`` to spinors ``(N, 4)``.  The
    integral is linear in the mode coefficients, so the maximum over the unit
    ball is the norm of the vector of per-mode integrals.
    """
    reg = regularize(basis, cfg)
    dx = basis.size / n_x
    grid = dx * np.array(list(itertools.product(range(n_x), repeat=3)), dtype=float)
    et = eta(grid)                                        # (N, 4)
    ph = np.exp(1j * grid @ basis.kvecs.T)                # (N, f)
    base = (et.conj() @ basis.spinors.T) * ph             # eta^dagger e_l phase_l
    overlap = base.sum(axis=0) * dx ** 3                  # int eta^dagger u_l / coeff_l
    diff = overlap * (reg.coeff - basis.coeff)
    return float(np.linalg.norm(diff))


# ---------------------------------------------------------------- local correlation operators

def local_correlation(basis, coord, spin_dim=2):
    """``F(x) = -E_x^dagger gamma^0 E_x`` in factored form."""
    e = basis.evaluate(coord)
    return from_factor(e.conj().T, np.diag(G0).real, spin_dim)


@dataclass(frozen=True, eq=False)
class LatticeSystem:
    config: BoxConfig
    basis: SeaBasis
    coords: np.ndarray           # (n_sites, 4) site coordinates (t, x1, x2, x3)
    site_point: np.ndarray       # site -> index into measure.points
    measure: DiscreteMeasure
    merged: int = 0
    info: dict = field(default_factory=dict)

    @property
    def points(self):
        return self.measure.points

    def site_index(self, it, ix, iy, iz):
        c = self.config
        return ((it * c.n_x + ix) * c.n_x + iy) * c.n_x + iz

    def point_at(self, site):
        return self.measure.points[self.site_point[site]]


def site_coords(cfg):
    t = cfg.dt * np.arange(cfg.n_t)
    x = cfg.dx * np.arange(cfg.n_x)
    return np.array([(a, b, c, d) for a in t for b in x for c in x for d in x], dtype=float)


def _merge(ops, scale, tol, rng):
    """Group operators equal to ``tol * scale`` in the sup norm; returns representative per site."""
    f = ops[0].dim_h
    r = rng.standard_normal(f) + 1j * rng.standard_normal(f)
    sig = np.array([x.dense @ r if f <= 64 else -(x.factor * x.core) @ (x.factor.conj().T @ r) for x in ops])
    proj = np.linalg.qr(rng.standard_normal((f, 8)))[0]
    pts = np.concatenate([(sig @ proj).real, (sig @ proj).imag], axis=1)
    # |(F - G) r| <= f * sup|F - G| * |r|, and an orthonormal projection only shrinks it
    radius = f * tol * scale * np.linalg.norm(r)
    rep = np.arange(len(ops))
    for i, j in sorted(cKDTree(pts).query_pairs(radius)):
        a, b = rep[i], rep[j]
        if a == b:
            continue
        if np.max(np.abs(ops[a].dense - ops[j].dense)) <= tol * scale:
            rep[rep == b] = a
    return rep


def build_system(cfg, workers=1, merge_tol=MERGE_TOL):
    """Local correlation operators at every site, weighted by the cell 4-volume.

    Sites with equal operators (sup norm within ``merge_tol * |F|``) become one
    point carrying the summed weight.
    """
    basis = regularize(build_sea_basis(cfg), cfg)
    coords = site_coords(cfg)

    def chunk(rows):
        return [local_correlation(basis, c) for c in rows]
    blocks = np.array_split(coords, max(1, workers * 4))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            ops = [x for b in ex.map(chunk, blocks) for x in b]
    else:
        ops = [x for b in blocks for x in chunk(b)]
    scale = max(x.norm for x in ops)
    rep = _merge(ops, scale, merge_tol, np.random.default_rng(0))
    uniq, site_point = np.unique(rep, return_inverse=True)
    weights = np.bincount(site_point, minlength=len(uniq)) * cfg.cell_volume
    m = DiscreteMeasure([ops[i] for i in uniq], weights)
    return LatticeSystem(cfg, basis, coords, site_point, m, len(ops) - len(uniq))


# ---------------------------------------------------------------- kernel

def kernel_eps(sys, x, y):
    """``P(x,y) = -sum_l (R u_l)(x) (R u_l)(y)^bar`` as a 4 x 4 spinor matrix (site indices)."""
    ex = sys.basis.evaluate(sys.coords[x])
    ey = sys.basis.evaluate(sys.coords[y])
    return -(ex @ ey.conj().T) @ G0


def mode_sum_kernel(basis, xi):
    """The same sum for a displacement ``xi = y - x`` without a lattice."""
    ex = basis.evaluate(np.zeros(4))
    ey = basis.evaluate(xi)
    return -(ex @ ey.conj().T) @ G0


def spinor_frame(x, e):
    """``Phi = E U``: the spin basis of ``x`` mapped into spinor space."""
    return e @ x.factor


def transported_kernel(sys, x, y):
    """Abstract ``P(x,y)`` carried to spinor space through ``Phi_x P Phi_y^{-1}``."""
    px, py = sys.point_at(x), sys.point_at(y)
    fx = spinor_frame(px, sys.basis.evaluate(sys.coords[x]))
    fy = spinor_frame(py, sys.basis.evaluate(sys.coords[y]))
    p = kernel(spin_space(px), spin_space(py)).entries
    return fx @ p @ np.linalg.inv(fy)


def minimal_image(sys, x, y):
    """``y - x`` with the spatial part reduced to the nearest periodic image."""
    d = sys.coords[y] - sys.coords[x]
    L = sys.config.size
    d[1:] -= L * np.round(d[1:] / L)
    return d


# ---------------------------------------------------------------- wave identities

@dataclass(frozen=True)
class WaveReport:
    f_identity: float       # max |F - (-Psi^* Psi)| / |F|
    p_identity: float       # max |P - (-Psi(x) Psi(y)^*)| / |P|
    wave_agreement: float   # max |Phi psi^u - (R u)(x)| / |R u|
    holder_worst: float     # max lhs / rhs of the Hoelder bound over neighbor pairs
    holder_pairs: int
    sites: int


def wave_identities(sys, sites=None, rng=None, neighbor_pairs=None):
    """Check ``x = -Psi(x)^* Psi(x)``, ``P = -Psi(x) Psi(y)^*``, wave agreement and the Hoelder bound."""
    rng = np.random.default_rng(0) if rng is None else rng
    n = len(sys.coords)
    sites = rng.choice(n, size=min(100, n), replace=False) if sites is None else np.asarray(sites)
    f = sys.basis.f
    fi = pi = wa = 0.0
    for s in sites:
        x = sys.point_at(s)
        psi = x.factor.conj().T                      # Psi(x) u = pi_x u in the spin basis
        psi_star = x.factor * x.core[None, :]        # adjoint w.r.t. the spin product
        fi = max(fi, np.max(np.abs(x.dense + psi_star @ psi)) / x.norm)
        y = sys.point_at(sites[(list(sites).index(s) + 1) % len(sites)])
        pxy = kernel(spin_space(x), spin_space(y)).entries
        alt = -psi @ (y.factor * y.core[None, :])
        pi = max(pi, np.max(np.abs(pxy - alt)) / max(np.max(np.abs(pxy)), 1e-300))
        e = sys.basis.evaluate(sys.coords[s])
        u = rng.standard_normal(f) + 1j * rng.standard_normal(f)
        lhs = spinor_frame(x, e) @ (psi @ u)
        wa = max(wa, np.linalg.norm(lhs - e @ u) / np.linalg.norm(e @ u))
    if neighbor_pairs is None:
        neighbor_pairs = nearest_neighbor_pairs(sys)
    worst = 0.0
    for a, b in neighbor_pairs:
        lhs, rhs = sqrt_abs_bound(sys.point_at(a), sys.point_at(b))
        if rhs > 0:
            worst = max(worst, lhs / rhs)
        elif lhs > 0:
            worst = np.inf
    return WaveReport(float(fi), float(pi), float(wa), float(worst), len(neighbor_pairs), len(sites))


def nearest_neighbor_pairs(sys):
    c = sys.config
    out = []
    for it in range(c.n_t):
        for ix, iy, iz in itertools.product(range(c.n_x), repeat=3):
            s = sys.site_index(it, ix, iy, iz)
            if c.n_x > 1:
                out.append((s, sys.site_index(it, (ix + 1) % c.n_x, iy, iz)))
                out.append((s, sys.site_index(it, ix, (iy + 1) % c.n_x, iz)))
                out.append((s, sys.site_index(it, ix, iy, (iz + 1) % c.n_x)))
            if it + 1 < c.n_t:
                out.append((s, sys.site_index(it + 1, ix, iy, iz)))
    return out


# ---------------------------------------------------------------- Krein space

@dataclass(frozen=True)
class KreinReport:
    inner: np.ndarray          # <psi_a | psi_b>, spin products summed with weights
    norm_gram: np.ndarray      # <<psi_a | psi_b>> with |x|
    minus_p: np.ndarray        # <psi_a | (-P) psi_b>
    neg_p_min_eig: float
    symmetry: float            # max |<P psi_a|psi_b> - <psi_a|P psi_b>| / |Gram|
    witness: float             # max |<psi|(-P)psi> - <phi|phi>| / |Gram|


def _abstract(sys, s, chi):
    """Spinor value ``chi`` at site ``s`` as a vector of ``S_x`` inside ``H``."""
    x = sys.point_at(s)
    fr = spinor_frame(x, sys.basis.evaluate(sys.coords[s]))
    return x.factor @ np.linalg.solve(fr, chi)


def krein_gram(sys, family):
    """Krein products, auxiliary scalar products and the ``-P`` form on a family of wave functions.

    Each member maps site index -> spinor (4,) and vanishes elsewhere.
    """
    w = sys.measure.weights[sys.site_point]
    nf = len(family)
    sites = sorted(set().union(*[set(fam) for fam in family]))
    inner = np.zeros((nf, nf), dtype=complex)
    norm = np.zeros((nf, nf), dtype=complex)
    abstract = [{s: _abstract(sys, s, np.asarray(fam[s], dtype=complex)) for s in fam} for fam in family]
    for s in sites:
        x = sys.point_at(s)
        absx = (x.factor * np.abs(x.core)[None, :]) @ x.factor.conj().T
        for a in range(nf):
            for b in range(nf):
                if s in family[a] and s in family[b]:
                    ca, cb = np.asarray(family[a][s]), np.asarray(family[b][s])
                    inner[a, b] += w[s] * (ca.conj() @ G0 @ cb)
                    norm[a, b] += w[s] * (abstract[a][s].conj() @ absx @ abstract[b][s])
    # (P psi)(x) = sum_y P(x,y) psi(y) w(y), evaluated at the sites of the family
    ppsi = []
    for a in range(nf):
        out = {}
        for s in sites:
            acc = np.zeros(4, dtype=complex)
            for t, chi in family[a].items():
                acc += kernel_eps(sys, s, t) @ np.asarray(chi) * w[t]
            out[s] = acc
        ppsi.append(out)

    def spin(a_vals, b_vals):
        return sum(w[s] * (a_vals[s].conj() @ G0 @ b_vals[s]) for s in a_vals if s in b_vals)
    fam = [{s: np.asarray(v, dtype=complex) for s, v in f.items()} for f in family]
    minus_p = np.array([[-spin(fam[a], ppsi[b]) for b in range(nf)] for a in range(nf)])
    p_left = np.array([[spin(ppsi[a], fam[b]) for b in range(nf)] for a in range(nf)])
    scale = max(np.max(np.abs(minus_p)), 1e-300)
    sym = float(np.max(np.abs(p_left + minus_p)) / scale)     # <P psi|phi> = <psi|P phi>
    # positivity witness: phi = sum_x w(x) x psi(x) in H
    wit = 0.0
    for a in range(nf):
        phi = sum(w[s] * (sys.point_at(s).dense @ abstract[a][s]) for s in abstract[a])
        wit = max(wit, abs(minus_p[a, a] - np.vdot(phi, phi)) / scale)
    herm = 0.5 * (minus_p + minus_p.conj().T)
    return KreinReport(inner, norm, minus_p, float(np.min(np.linalg.eigvalsh(herm))), sym, float(wit))


def random_wave_family(sys, count, support, rng):
    """Random spinor-valued wave functions on ``support`` random sites each."""
    n = len(sys.coords)
    fam = []
    for _ in range(count):
        sites = rng.choice(n, size=support, replace=False)
        fam.append({int(s): rng.standard_normal(4) + 1j * rng.standard_normal(4) for s in sites})
    return fam


# ---------------------------------------------------------------- charge conservation

@dataclass(frozen=True)
class ChargeLayers:
    layer_t0: float
    layer_t1: float
    dirac_integral_t0: float


def charge_surface_layer(sys, t0, t1, u, h=1e-3, kappa=0.0, workers=1):
    """Surface-layer derivative for ``A = |u><u|`` and ``Omega`` = time slices ``t0..t1``.

    ``layer_t0`` collects the pairs (x in Omega, y earlier than ``t0``);
    ``layer_t1`` is minus the pairs with y later than ``t1``, so that
    conservation reads ``layer_t0 = layer_t1``.  ``u`` is a vector in the
    mode basis.  The Dirac integral is ``sum_x (R u)^dagger (R u) dx^3`` at ``t0``.
    """
    c = sys.config
    if not (0 <= t0 <= t1 < c.n_t):
        raise BadTimeRange("need 0 <= t0 <= t1 < n_t, got %r, %r" % (t0, t1))
    u = np.asarray(u, dtype=complex)
    nrm = np.linalg.norm(u)
    per = c.n_x ** 3
    it = np.arange(len(sys.coords)) // per
    omega = np.nonzero((it >= t0) & (it <= t1))[0]
    past = np.nonzero(it < t0)[0]
    future = np.nonzero(it > t1)[0]
    w = sys.measure.weights[sys.site_point]
    dirac = 0.0
    for s in np.nonzero(it == t0)[0]:
        v = sys.basis.evaluate(sys.coords[s]) @ u
        dirac += float(np.vdot(v, v).real) * c.dx ** 3
    if nrm == 0:
        return ChargeLayers(0.0, 0.0, dirac)
    a = np.outer(u, u.conj()) / (nrm * nrm)
    # exp(i tau A) = 1 + (e^{i tau} - 1) A for a projector
    ops = [sys.point_at(s) for s in omega]

    def flow(tau):
        U = np.eye(len(u), dtype=complex) + (np.exp(1j * tau) - 1) * a
        return [_conjugate(U, x) for x in ops]

    def part(others):
        if len(others) == 0:
            return 0.0
        ys = [sys.point_at(s) for s in others]
        fwd = pairs.lagrangian_tables(flow(h), ys, kappa, workers)[0]
        bwd = pairs.lagrangian_tables(flow(-h), ys, kappa, workers)[0]
        # central difference; the flow of |u><u| runs at speed |u|^2
        return float(w[omega] @ (fwd - bwd) @ w[others]) / (2 * h) * nrm * nrm

    return ChargeLayers(part(past), -part(future), dirac)


def charge_ratios(sys, t0, t1, modes, h=1e-3, workers=1):
    """``layer_t0 / dirac_integral_t0`` for single-mode generators ``|u_l><u_l|``.

    A layer proportional to the Dirac integral gives the same ratio for every mode.
    """
    out = []
    for l in modes:
        u = np.zeros(sys.basis.f, dtype=complex)
        u[l] = 1.0
        c = charge_surface_layer(sys, t0, t1, u, h=h, workers=workers)
        out.append(c.layer_t0 / c.dirac_integral_t0)
    return np.array(out)


def ratio_spread(r):
    r = np.asarray(r, dtype=float)
    return float((r.max() - r.min()) / abs(r.mean()))


# ---------------------------------------------------------------- causal survey

@dataclass(frozen=True)
class CausalSurvey:
    table: dict                # (minkowski, lattice) -> count, outside the band
    agreement: float           # fraction of pairs outside the band with matching classes
    excluded: int              # pairs inside the band
    band_table: dict           # the same table inside the band (documented, not asserted)
    time_forward: int          # properly timelike pairs with sign(C) = sign(xi^0)
    time_backward: int         # properly timelike pairs with sign(C) = -sign(xi^0)
    time_undetermined: int     # |C| below tolerance (e.g. purely temporal separation)

    def rows(self):
        out = []
        for region, tab in (("outside", self.table), ("band", self.band_table)):
            for (mk, lt), cnt in sorted(tab.items()):
                out.append([region, mk, lt, cnt])
        return out


SURVEY_COLUMNS = ["region", "minkowski", "lattice", "count"]


def _classify_tags(sp, norms_a, norms_b, tol=TOL_CLASSIFY):
    """Vectorized ``classify_spectrum``: 0 spacelike, 1 timelike, 2 lightlike."""
    mod = np.abs(sp)
    top = mod.max(axis=-1)
    safe = np.where(top > 0, top, 1.0)
    degenerate = (top == 0) | (top <= tol * norms_a[:, None] * norms_b[None, :])
    spread = (top - mod.min(axis=-1)) / safe
    real = np.max(np.abs(sp.imag), axis=-1) / safe <= tol
    tags = np.where(real, 1, 2)
    return np.where(degenerate | (spread <= tol), 0, tags)


def causal_agreement_survey(sys, band, workers=1, c_tol=1e-9, tol=TOL_CLASSIFY):
    """Compare the operator causal classes of all site pairs with the sign of ``xi^2``.

    ``xi`` uses the nearest periodic image.  Pairs with ``||xi^0| - |xi_vec|| <= band``
    are tabulated separately.  Lattice classes other than timelike count as
    spacelike.  On properly timelike pairs outside the band the sign of
    ``time_direction`` is compared with the sign of ``xi^0``.
    """
    if band < sys.config.eps:
        raise ValueError("band must be at least eps")
    pts = sys.points
    norms = np.array([x.norm for x in pts])
    sp = pairs.pair_spectra(pts, workers=workers)
    tags = _classify_tags(sp, norms, norms, tol)
    c = sys.config
    n = len(sys.coords)
    L = c.size
    names = ("spacelike", "timelike")
    table, btable = {}, {}
    agree = total = excluded = 0
    fw = bw = und = 0
    for i in range(n):
        j = np.arange(i + 1, n)
        pi, pj = sys.site_point[i], sys.site_point[j]
        keep = pj != pi
        j, pj = j[keep], pj[keep]
        d = sys.coords[j] - sys.coords[i]
        d[:, 1:] -= L * np.round(d[:, 1:] / L)
        r = np.linalg.norm(d[:, 1:], axis=1)
        mk = (np.abs(d[:, 0]) > r).astype(int)
        lt = (tags[pi, pj] == 1).astype(int)
        inband = np.abs(np.abs(d[:, 0]) - r) <= band
        for sel, tab in ((inband, btable), (~inband, table)):
            for a in (0, 1):
                for b in (0, 1):
                    cnt = int(np.sum(sel & (mk == a) & (lt == b)))
                    if cnt:
                        tab[names[a], names[b]] = tab.get((names[a], names[b]), 0) + cnt
        excluded += int(inband.sum())
        total += int((~inband).sum())
        agree += int(np.sum(~inband & (mk == lt)))
        x = pts[pi]
        for k in np.nonzero(~inband & (mk == 1) & (lt == 1))[0]:
            y = pts[pj[k]]
            if not properly_timelike(x, y, tol):
                continue
            cval = time_direction(x, y)
            if abs(cval) <= c_tol * (x.norm * y.norm) ** 2:
                und += 1
            elif np.sign(cval) == np.sign(d[k, 0]):
                fw += 1
            else:
                bw += 1
    return CausalSurvey(table, agree / total if total else 1.0, excluded, btable, fw, bw, und)


# ---------------------------------------------------------------- comparisons with the closed form

def closed_form_error(cfg, xi, regularized=False):
    """Relative Frobenius distance of the mode sum from the Minkowski kernel at ``xi``.

    With ``regularized`` the reference is the damped closed form at ``2 eps``
    (each of the two waves in the product carries ``exp(-eps omega)``).
    """
    from . import sea
    basis = regularize(build_sea_basis(cfg), cfg)
    p = mode_sum_kernel(basis, np.asarray(xi, dtype=float))
    if regularized:
        ref = sea.regularized_kernel_matrix(xi, cfg.mass, 2 * cfg.eps)
    else:
        ref = sea.kernel_matrix(xi, cfg.mass)
    return float(np.linalg.norm(p - ref) / np.linalg.norm(ref))


REFERENCE = BoxConfig(size=20.0, modes=9, mass=1.0, eps=0.05, regularization="momentum_damping",
                      n_t=2, n_x=9, t_extent=10.0)
REFERENCE_XI = (np.array([1.0, 0.3, 0.2, 0.0]), np.array([0.3, 1.0, 0.0, 0.0]))
# growing box and mode set at a regularization the mode sets resolve: the convergence trend
STANDARD_CONFIGS = tuple(BoxConfig(size=size, modes=mo, mass=1.0, eps=0.5, n_t=2, n_x=mo, t_extent=2.0)
                         for size, mo in ((4.0, 7), (4.5, 9), (5.0, 11)))

