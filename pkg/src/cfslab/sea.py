"""Vacuum Dirac-sea kernel in Minkowski space and the quantities built from it.

Conventions: signature (+,-,-,-), ``xi = y - x``, Dirac representation
with ``gamma^0 = diag(1, 1, -1, -1)``.  The kernel has the form
``P(x, y) = alpha xi_j gamma^j + beta`` away from the light cone.
"""
from dataclasses import dataclass

import numpy as np

from .bessel import kv01, jy01
from .operators import (CausalClass, SPACELIKE, TIMELIKE, classify_spectrum,
                        chain_properly_timelike)

TWO_PI3 = (2 * np.pi) ** 3


class SeaError(Exception):
    pass


class LightconeSingular(SeaError):
    """The separation lies in the band around the light cone."""


class NotTimelike(SeaError):
    pass


class DegenerateDirection(SeaError):
    pass


class NonInvertibleCoincidence(SeaError):
    pass


class PositivityViolation(SeaError):
    pass


# ---------------------------------------------------------------- Dirac matrices

_SIGMA = (np.array([[0, 1], [1, 0]], dtype=complex),
          np.array([[0, -1j], [1j, 0]], dtype=complex),
          np.array([[1, 0], [0, -1]], dtype=complex))
_Z2 = np.zeros((2, 2), dtype=complex)
GAMMA = (np.diag([1, 1, -1, -1]).astype(complex),) + tuple(
    np.block([[_Z2, s], [-s, _Z2]]) for s in _SIGMA)
GAMMA0 = GAMMA[0]
METRIC = np.diag([1.0, -1.0, -1.0, -1.0])


def slash(v):
    """``v_j gamma^j`` for a contravariant 4-vector ``v`` (complex allowed)."""
    v = np.asarray(v)
    return v[0] * GAMMA[0] - v[1] * GAMMA[1] - v[2] * GAMMA[2] - v[3] * GAMMA[3]


def mdot(u, v):
    """Minkowski product of two contravariant vectors."""
    return u[0] * v[0] - u[1] * v[1] - u[2] * v[2] - u[3] * v[3]


@dataclass(frozen=True)
class FourVector:
    t: float
    x1: float = 0.0
    x2: float = 0.0
    x3: float = 0.0

    @property
    def r(self):
        return float(np.sqrt(self.x1 ** 2 + self.x2 ** 2 + self.x3 ** 2))

    @property
    def xi_sq(self):
        return self.t ** 2 - self.r ** 2

    def array(self):
        return np.array([self.t, self.x1, self.x2, self.x3])

    def __sub__(self, other):
        return FourVector(*(self.array() - other.array()))


def as_four(xi):
    if isinstance(xi, FourVector):
        return xi
    return FourVector(*[float(c) for c in xi])


def default_tol_lc(xi):
    return 1e-6 * (1.0 + xi.t ** 2 + xi.r ** 2)


# ---------------------------------------------------------------- the scalar kernel T

def _f_and_derivative(w, m):
    """``F(w) = m^2 K1(m sqrt w)/((2 pi)^3 m sqrt w)`` and ``F'(w)``."""
    u = np.sqrt(np.asarray(w, dtype=complex))
    k0, k1 = kv01(m * u)
    k2 = k0 + 2.0 * k1 / (m * u)
    f = m * m / TWO_PI3 * k1 / (m * u)
    fp = -m * m * k2 / (2.0 * TWO_PI3 * u * u)
    return f, fp


def t_eps_tr(t, r, m, eps):
    """Regularized ``T`` at time ``t`` and spatial distance ``r`` (arrays allowed)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    w = r * r + (eps + 1j * t) ** 2
    return _f_and_derivative(w, m)[0]


def t_eps(xi, m, eps):
    """``(m^2/(2 pi)^3) K1(z)/z`` with ``z = m sqrt(r^2 + (eps + i t)^2)``."""
    xi = as_four(xi)
    return complex(t_eps_tr(xi.t, xi.r, m, eps))


def singular_part(xi, eps):
    """Pole term ``1 / ((2 pi)^3 (r^2 + (eps + i t)^2))``."""
    xi = as_four(xi)
    return 1.0 / (TWO_PI3 * (xi.r ** 2 + (eps + 1j * xi.t) ** 2))


def _require_off_cone(xi, tol_lc):
    tol = default_tol_lc(xi) if tol_lc is None else tol_lc
    if abs(xi.xi_sq) <= tol:
        raise LightconeSingular("|xi^2| = %.3g within the light-cone band %.3g" % (abs(xi.xi_sq), tol))


def t_unreg(xi, m, tol_lc=None):
    """Unregularized ``T(xi)`` away from the light cone."""
    xi = as_four(xi)
    _require_off_cone(xi, tol_lc)
    s = xi.xi_sq
    if s > 0:
        v = np.sqrt(s)
        _, j1, _, y1 = jy01(m * v)
        return complex(m / (16 * np.pi ** 2) * (y1 + 1j * np.sign(xi.t) * j1) / v)
    u = np.sqrt(-s)
    return complex(m / (8 * np.pi ** 3) * kv01(m * u)[1].real / u)


def t_prime_unreg(xi, m, tol_lc=None):
    """Derivative of ``T`` with respect to ``xi^2`` (closed-form Bessel identities)."""
    xi = as_four(xi)
    _require_off_cone(xi, tol_lc)
    s = xi.xi_sq
    if s > 0:
        v = np.sqrt(s)
        z = m * v
        j0, j1, y0, y1 = jy01(z)
        j2 = 2 * j1 / z - j0
        y2 = 2 * y1 / z - y0
        return complex(-m * m * (y2 + 1j * np.sign(xi.t) * j2) / (32 * np.pi ** 2 * s))
    u = np.sqrt(-s)
    k0, k1 = kv01(m * u)
    k2 = (k0 + 2 * k1 / (m * u)).real
    return complex(-m * m * k2 / (16 * np.pi ** 3 * s))


# ---------------------------------------------------------------- kernel scalars

@dataclass(frozen=True)
class KernelScalars:
    alpha: complex
    beta: complex
    xi_sq: float
    time_sign: int


def kernel_scalars(xi, m, tol_lc=None):
    """``alpha = -2i T'(xi^2)`` and ``beta = m T(xi^2)``."""
    xi = as_four(xi)
    beta = m * t_unreg(xi, m, tol_lc)
    alpha = -2j * t_prime_unreg(xi, m, tol_lc)
    return KernelScalars(alpha, beta, xi.xi_sq, int(np.sign(xi.t)) if xi.t != 0 else 0)


def alpha_fd(xi, m, eps=1e-6, rel_step=1e-4):
    """``alpha`` from central differences of ``t_eps`` (validation route).

    Uses the ``r`` derivative (``dT/dr = -2 r T'``) when ``r > 0`` and
    the ``t`` derivative otherwise.
    """
    xi = as_four(xi)
    if xi.r > 0:
        h = rel_step * xi.r
        d = (t_eps_tr(xi.t, xi.r + h, m, eps) - t_eps_tr(xi.t, xi.r - h, m, eps)) / (2 * h)
        tp = -d / (2 * xi.r)
    else:
        h = rel_step * abs(xi.t)
        d = (t_eps_tr(xi.t + h, 0.0, m, eps) - t_eps_tr(xi.t - h, 0.0, m, eps)) / (2 * h)
        tp = d / (2 * (xi.t - 1j * eps))
    return complex(-2j * tp)


def regularized_kernel_parts(xi, m, eps):
    """Vector and scalar parts of ``P^eps = (i dslash + m) T^eps``.

    Returns ``(v, beta)`` with ``v`` the covariant components ``v_j`` so that
    ``P^eps = v_j gamma^j + beta``.
    """
    xi = as_four(xi)
    a = xi.array()
    w = xi.r ** 2 + (eps + 1j * xi.t) ** 2
    f, fp = _f_and_derivative(w, m)
    f, fp = complex(f), complex(fp)
    v = np.array([2 * (eps + 1j * xi.t) * fp, -2j * fp * a[1], -2j * fp * a[2], -2j * fp * a[3]])
    return v, m * f


def regularized_kernel_matrix(xi, m, eps):
    """``P^eps(x, y)`` as a 4x4 spinor matrix."""
    v, beta = regularized_kernel_parts(xi, m, eps)
    vs = v[0] * GAMMA[0] + v[1] * GAMMA[1] + v[2] * GAMMA[2] + v[3] * GAMMA[3]
    return vs + beta * np.eye(4)


def kernel_matrix(xi, m, tol_lc=None):
    """Unregularized ``alpha xi-slash + beta`` as a 4x4 matrix."""
    xi = as_four(xi)
    ks = kernel_scalars(xi, m, tol_lc)
    return ks.alpha * slash(xi.array()) + ks.beta * np.eye(4)


# ---------------------------------------------------------------- closed chain

@dataclass(frozen=True)
class ChainInvariants:
    a: float
    b: float
    roots: tuple


def chain_invariants(ks, check=True):
    """``a = 2 Re(alpha conj(beta))``, ``b = |alpha|^2 xi^2 + |beta|^2``, roots ``b +- sqrt(a^2 xi^2)``."""
    ab = ks.alpha * np.conj(ks.beta)
    a = 2.0 * ab.real
    b = abs(ks.alpha) ** 2 * ks.xi_sq + abs(ks.beta) ** 2
    d = np.sqrt(complex(a * a * ks.xi_sq))
    if check and ks.xi_sq > 0 and b < abs(a) * np.sqrt(ks.xi_sq) * (1 - 1e-12):
        raise PositivityViolation("b = %.6g below |a| sqrt(xi^2) = %.6g" % (b, abs(a) * np.sqrt(ks.xi_sq)))
    return ChainInvariants(a, b, (b + d, b - d))


def chain_matrix(ks, xi):
    """Explicit closed chain ``a xi-slash + b`` on spinors."""
    ci = chain_invariants(ks, check=False)
    return ci.a * slash(as_four(xi).array()) + ci.b * np.eye(4)


def classify_minkowski(xi, m, tol=1e-8, tol_lc=None):
    """Causal class from the closed-chain roots, with the properly-timelike flag."""
    xi = as_four(xi)
    ks = kernel_scalars(xi, m, tol_lc)
    ci = chain_invariants(ks)
    r1, r2 = ci.roots
    cls = classify_spectrum(np.array([r1, r1, r2, r2]), tol)
    if cls.tag == TIMELIKE:
        ok = chain_properly_timelike(chain_matrix(ks, xi), GAMMA0, tol)
        return CausalClass(TIMELIKE, properly_timelike=bool(ok))
    return cls


# ---------------------------------------------------------------- time orientation

def c_functional(x, y, m, eps, tol=1e-10):
    """Time-direction functional for the vacuum with regularized coincidence kernels."""
    x, y = as_four(x), as_four(y)
    xi = y - x
    if xi.xi_sq <= 0:
        raise NotTimelike("xi^2 = %.6g" % xi.xi_sq)
    ks = kernel_scalars(xi, m)
    ci = chain_invariants(ks)
    ab = ks.alpha * np.conj(ks.beta)
    # the vacuum is translation invariant: the coincidence kernel is the same at x and y
    v, beta = regularized_kernel_parts(FourVector(0.0), m, eps)
    vu = METRIC @ v.real                 # contravariant components
    rho = float(mdot(vu, vu) - beta.real ** 2)
    if abs(rho) <= tol * (abs(mdot(vu, vu)) + beta.real ** 2):
        raise NonInvertibleCoincidence("v.v - beta^2 vanishes")
    a4 = xi.array()
    vx = mdot(vu, a4)
    bracket = vx * vx - xi.xi_sq * mdot(vu, vu)
    if abs(bracket) <= tol * abs(xi.xi_sq * mdot(vu, vu)):
        raise DegenerateDirection("xi is parallel to the coincidence vector")
    return float(16 * ci.a / (rho * rho) * ab.imag * bracket)


# ---------------------------------------------------------------- momentum-space check

def momentum_projector_check(kvec, m, case="+"):
    """Deviation in the projector identity for negative-frequency momenta.

    ``case="+"``: ``||(k+m) g0 (k+m) - 2 k0 (k+m)||`` with ``k0 = -omega``.
    ``case="-"``: ``||(k+m) g0 (q+m)||`` with ``k0 = +omega``, ``q0 = -omega``.
    """
    kvec = np.asarray(kvec, dtype=float)
    om = np.sqrt(kvec @ kvec + m * m)
    km = slash(np.r_[-om, kvec]) + m * np.eye(4)
    if case == "+":
        return float(np.linalg.norm(km @ GAMMA0 @ km - 2 * (-om) * km, 2))
    kp = slash(np.r_[om, kvec]) + m * np.eye(4)
    return float(np.linalg.norm(kp @ GAMMA0 @ km, 2))


# ---------------------------------------------------------------- grids

SEA_COLUMNS = ["t", "r", "xi_sq", "re_T", "im_T", "alpha_re", "alpha_im", "beta_re",
               "beta_im", "a", "b", "root1", "root2", "class"]

STANDARD_T = np.linspace(-2.0, 2.0, 20)
STANDARD_R = np.linspace(0.0, 2.0, 20)
STANDARD_EPS = 0.1


def sea_grid(m, t_values=STANDARD_T, r_values=STANDARD_R, tol_lc=None):
    """Rows of the closed-form kernel on a (t, r) grid; light-cone points are marked."""
    rows = []
    for t in t_values:
        for r in r_values:
            xi = FourVector(float(t), float(r))
            try:
                ks = kernel_scalars(xi, m, tol_lc)
            except LightconeSingular:
                nan = float("nan")
                rows.append([float(t), float(r), xi.xi_sq] + [nan] * 10 + ["Lightcone"])
                continue
            ci = chain_invariants(ks)
            cls = classify_minkowski(xi, m, tol_lc=tol_lc)
            T = ks.beta / m
            r1, r2 = ci.roots
            rows.append([float(t), float(r), xi.xi_sq, T.real, T.imag, ks.alpha.real, ks.alpha.imag,
                         ks.beta.real, ks.beta.imag, ci.a, ci.b, _root_str(r1), _root_str(r2), cls.tag])
    return rows


def _root_str(z):
    z = complex(z)
    return "%.17g%+.17gj" % (z.real, z.imag)


def convergence_sweep(xi, m, eps_values=(1e-2, 1e-3, 1e-4)):
    """``|t_eps - t_unreg|`` for decreasing eps and the fitted order."""
    ref = t_unreg(xi, m)
    errs = np.array([abs(t_eps(xi, m, e) - ref) for e in eps_values])
    order = np.polyfit(np.log(eps_values), np.log(errs), 1)[0]
    return errs, float(order)
