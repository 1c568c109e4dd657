"""Modified Bessel functions K0 and K1 for complex arguments.

Principal branch, cut along the negative real axis.  Two evaluation
routes are used:

* ``|z| <= SWITCH``: the ascending series built from I0, I1 and the
  logarithm ``log(z/2)``;
* ``|z| > SWITCH``: Steed's continued fraction (Temme's normalisation),
  which converges in the closed right half plane, including the
  imaginary axis where the ordinary Bessel functions live.

Ordinary J0, J1, Y0, Y1 for real positive argument are obtained from
K0, K1 on the negative imaginary axis through the connection formula
``K_nu(-i x) = (pi i / 2) e^{i nu pi / 2} H^{(1)}_nu(x)``.
"""
import numpy as np

SWITCH = 2.0
_EULER = 0.57721566490153286061
_SERIES_TERMS = 32
_CF_MAXIT = 20000
_CF_EPS = 1e-17


class BesselDomainError(ValueError):
    """Argument outside the closed right half plane, or zero."""


def _series(z):
    q = z * z / 4.0
    logh = np.log(z / 2.0)
    term0 = np.ones_like(z)        # q^k / (k!)^2
    term1 = np.ones_like(z)        # q^k / (k! (k+1)!)
    i0 = np.zeros_like(z)
    i1s = np.zeros_like(z)
    s0 = np.zeros_like(z)
    s1 = np.zeros_like(z)
    harm = 0.0                     # H_k
    for k in range(_SERIES_TERMS):
        if k > 0:
            term0 = term0 * q / (k * k)
            term1 = term1 * q / (k * (k + 1))
            harm += 1.0 / k
        i0 = i0 + term0
        i1s = i1s + term1
        s0 = s0 + harm * term0
        # psi(k+1) + psi(k+2) = -2 gamma + 2 H_k + 1/(k+1)
        s1 = s1 + (-2.0 * _EULER + 2.0 * harm + 1.0 / (k + 1)) * term1
    i1 = z / 2.0 * i1s
    k0 = -(logh + _EULER) * i0 + s0
    k1 = 1.0 / z + logh * i1 - z / 4.0 * s1
    return k0, k1


def _steed(x):
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    q1 = np.zeros_like(x)
    q2 = np.ones_like(x)
    a1 = 0.25
    q = np.full_like(x, a1)
    c = np.full_like(x, a1)
    a = -a1
    s = 1.0 + q * delh
    active = np.ones(x.shape, dtype=bool)
    for i in range(2, _CF_MAXIT):
        a -= 2 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1, q2 = q2, qnew
        q = q + c * qnew
        b = b + 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        dels = q * delh
        # freeze converged entries so later iterations cannot disturb them
        h = np.where(active, h + delh, h)
        s = np.where(active, s + dels, s)
        active &= np.abs(dels) >= _CF_EPS * np.abs(s)
        if not active.any():
            break
    else:
        raise RuntimeError("continued fraction for K did not converge")
    h = a1 * h
    k0 = np.sqrt(np.pi / (2.0 * x)) * np.exp(-x) / s
    k1 = k0 * (x + 0.5 - h) / x
    return k0, k1


def kv01(z):
    """Return ``(K0(z), K1(z))`` for complex ``z`` with ``Re z >= 0``, ``z != 0``.

    Scalars in, scalars out; arrays are evaluated elementwise.
    """
    zz = np.asarray(z, dtype=complex)
    scalar = zz.ndim == 0
    zz = np.atleast_1d(zz)
    if np.any(zz == 0) or np.any(zz.real < -1e-300):
        raise BesselDomainError("K0/K1 need Re z >= 0 and z != 0")
    k0 = np.empty_like(zz)
    k1 = np.empty_like(zz)
    small = np.abs(zz) <= SWITCH
    if small.any():
        k0[small], k1[small] = _series(zz[small])
    if (~small).any():
        k0[~small], k1[~small] = _steed(zz[~small])
    if scalar:
        return k0[0], k1[0]
    return k0, k1


def k1(z):
    """K1 of a complex argument (principal branch)."""
    return kv01(z)[1]


def k2(z):
    """K2 via the recurrence ``K2 = K0 + 2 K1 / z``."""
    k0, k1_ = kv01(z)
    return k0 + 2.0 * k1_ / np.asarray(z, dtype=complex)


def jy01(x):
    """Return ``(J0, J1, Y0, Y1)`` at real ``x > 0`` from K on the imaginary axis.

    With ``K0(-ix) = (pi/2)(-Y0 + i J0)`` and ``K1(-ix) = -(pi/2)(J1 + i Y1)``.
    """
    xx = np.asarray(x, dtype=float)
    if np.any(xx <= 0):
        raise BesselDomainError("J/Y evaluation needs x > 0")
    k0, k1_ = kv01(-1j * xx)
    c = 2.0 / np.pi
    return c * k0.imag, -c * k1_.real, -c * k0.real, -c * k1_.imag
