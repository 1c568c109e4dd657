# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pair sweeps: reduced closed-chain spectra and Lagrangians.

The per-pair eigenproblem is at most 8x8, so a small Hessenberg
shifted-QR solver on the stack beats a LAPACK call per pair; ``zgeev``
is kept as the fallback when the iteration does not settle.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt
from scipy.linalg.cython_lapack cimport zgeev

cnp.import_array()

DEF RMAX = 8
DEF EPS = 2.220446049250313e-16


cdef inline double cabs1(double complex z) noexcept nogil:
    return fabs(z.real) + fabs(z.imag)


cdef inline double cmod(double complex z) noexcept nogil:
    return sqrt(z.real * z.real + z.imag * z.imag)


cdef inline double complex csqrt_(double complex z) noexcept nogil:
    cdef double r = cmod(z)
    cdef double a, b
    if r == 0:
        return 0
    a = sqrt(0.5 * (r + fabs(z.real)))
    b = 0.5 * z.imag / a
    if z.real >= 0:
        return a + 1j * b
    if z.imag >= 0:
        return fabs(b) + 1j * a
    return fabs(b) - 1j * a


cdef void eig2(double complex a, double complex b, double complex c, double complex d,
               double complex *w1, double complex *w2) noexcept nogil:
    cdef double complex m = 0.5 * (a + d)
    cdef double complex p = 0.5 * (a - d)
    cdef double complex s = csqrt_(p * p + b * c)
    cdef double complex l1 = m + s
    cdef double complex l2 = m - s
    cdef double complex t
    if cmod(l1) < cmod(l2):
        t = l1
        l1 = l2
        l2 = t
    if l1 != 0:
        l2 = (a * d - b * c) / l1
    w1[0] = l1
    w2[0] = l2


cdef int small_eig(double complex h[RMAX][RMAX], int r, double complex *w) noexcept nogil:
    """Eigenvalues of the leading r x r block of h (destroyed). Returns 0 on success."""
    cdef int i, j, k, l, hi, its
    cdef double complex v[RMAX]
    cdef double complex cs[RMAX]
    cdef double sn_r[RMAX]
    cdef double complex sn[RMAX]
    cdef double complex alpha, s, mu, t1, t2, x, y
    cdef double nrm, beta, tst
    # Householder reduction to upper Hessenberg form
    for k in range(r - 2):
        nrm = 0
        for i in range(k + 1, r):
            nrm += h[i][k].real * h[i][k].real + h[i][k].imag * h[i][k].imag
        nrm = sqrt(nrm)
        if nrm == 0:
            continue
        x = h[k + 1][k]
        if cmod(x) == 0:
            alpha = -nrm
        else:
            alpha = -x / cmod(x) * nrm
        for i in range(r):
            v[i] = 0
        v[k + 1] = x - alpha
        for i in range(k + 2, r):
            v[i] = h[i][k]
        beta = 0
        for i in range(k + 1, r):
            beta += v[i].real * v[i].real + v[i].imag * v[i].imag
        if beta == 0:
            continue
        # H <- (I - 2 v v^*/beta) H (I - 2 v v^*/beta)
        for j in range(r):
            s = 0
            for i in range(k + 1, r):
                s = s + v[i].conjugate() * h[i][j]
            s = 2 * s / beta
            for i in range(k + 1, r):
                h[i][j] = h[i][j] - v[i] * s
        for i in range(r):
            s = 0
            for j in range(k + 1, r):
                s = s + h[i][j] * v[j]
            s = 2 * s / beta
            for j in range(k + 1, r):
                h[i][j] = h[i][j] - s * v[j].conjugate()
        for i in range(k + 2, r):
            h[i][k] = 0
    hi = r - 1
    its = 0
    while hi >= 0:
        if hi == 0:
            w[0] = h[0][0]
            break
        l = hi
        while l > 0:
            tst = cabs1(h[l - 1][l - 1]) + cabs1(h[l][l])
            if cabs1(h[l][l - 1]) <= EPS * tst:
                h[l][l - 1] = 0
                break
            l -= 1
        if l == hi:
            w[hi] = h[hi][hi]
            hi -= 1
            its = 0
            continue
        if l == hi - 1:
            eig2(h[hi - 1][hi - 1], h[hi - 1][hi], h[hi][hi - 1], h[hi][hi], &w[hi - 1], &w[hi])
            hi -= 2
            its = 0
            continue
        its += 1
        if its > 60:
            return 1
        if its % 11 == 0:
            mu = h[hi][hi] + 0.75 * cabs1(h[hi][hi - 1])
        else:
            # Wilkinson shift: eigenvalue of the trailing 2x2 closest to h[hi][hi]
            eig2(h[hi - 1][hi - 1], h[hi - 1][hi], h[hi][hi - 1], h[hi][hi], &t1, &t2)
            mu = t1 if cmod(t1 - h[hi][hi]) < cmod(t2 - h[hi][hi]) else t2
        for i in range(l, hi + 1):
            h[i][i] = h[i][i] - mu
        # QR factorization of the active block with Givens rotations
        for k in range(l, hi):
            x = h[k][k]
            y = h[k + 1][k]
            nrm = sqrt(x.real * x.real + x.imag * x.imag + y.real * y.real + y.imag * y.imag)
            if nrm == 0:
                cs[k] = 1
                sn[k] = 0
                continue
            cs[k] = x / nrm
            sn[k] = y / nrm
            for j in range(k, hi + 1):
                t1 = h[k][j]
                t2 = h[k + 1][j]
                h[k][j] = cs[k].conjugate() * t1 + sn[k].conjugate() * t2
                h[k + 1][j] = -sn[k] * t1 + cs[k] * t2
        # R Q
        for k in range(l, hi):
            for i in range(l, min(k + 2, hi) + 1):
                t1 = h[i][k]
                t2 = h[i][k + 1]
                h[i][k] = t1 * cs[k] + t2 * sn[k]
                h[i][k + 1] = -t1 * sn[k].conjugate() + t2 * cs[k].conjugate()
        for i in range(l, hi + 1):
            h[i][i] = h[i][i] + mu
    return 0


def chain_spectra(double complex[:, ::1] gram, double[:, ::1] lam_a, double[:, ::1] lam_b):
    """Eigenvalues of ``diag(la_i) C_ij diag(lb_j) C_ij^*`` for every block pair.

    ``gram`` is the ``(Na r) x (Nb r)`` overlap matrix of stacked factors.
    """
    cdef int na = lam_a.shape[0]
    cdef int nb = lam_b.shape[0]
    cdef int r = lam_a.shape[1]
    cdef int i, j, p, q, s, info
    cdef int lwork = 8 * RMAX
    cdef int ldv = 1
    cdef double complex acc
    cdef double complex h[RMAX][RMAX]
    cdef double complex c[RMAX][RMAX]
    cdef double complex wv[RMAX]
    cdef double complex work[8 * RMAX]
    cdef double rwork[2 * RMAX]
    cdef double complex dummy = 0
    cdef char jobn = b'N'
    if r > RMAX:
        raise ValueError("rank above %d not supported by the compiled kernel" % RMAX)
    out = np.empty((na, nb, r), dtype=np.complex128)
    cdef double complex[:, :, ::1] res = out
    if r == 0:
        return out
    with nogil:
        for i in range(na):
            for j in range(nb):
                for p in range(r):
                    for s in range(r):
                        c[p][s] = gram[i * r + p, j * r + s] * lam_b[j, s]
                for p in range(r):
                    for q in range(r):
                        acc = 0
                        for s in range(r):
                            acc = acc + c[p][s] * gram[i * r + q, j * r + s].conjugate()
                        h[p][q] = lam_a[i, p] * acc
                if small_eig(h, r, wv) != 0:
                    # rebuild in column-major order and hand over to LAPACK
                    for p in range(r):
                        for q in range(r):
                            acc = 0
                            for s in range(r):
                                acc = acc + c[p][s] * gram[i * r + q, j * r + s].conjugate()
                            h[q][p] = lam_a[i, p] * acc
                    zgeev(&jobn, &jobn, &r, &h[0][0], &r, &wv[0], &dummy, &ldv, &dummy, &ldv,
                          &work[0], &lwork, &rwork[0], &info)
                    if info != 0:
                        with gil:
                            raise RuntimeError("zgeev failed with info=%d" % info)
                for p in range(r):
                    res[i, j, p] = wv[p]
    return out


def lagrangian_table(double complex[:, :, ::1] spectra, int nspin, double kappa):
    """Return ``(L_kappa, |xy|^2)`` tables from padded spectra."""
    cdef int na = spectra.shape[0]
    cdef int nb = spectra.shape[1]
    cdef int r = spectra.shape[2]
    cdef int i, j, p
    cdef double a, s1, s2, top, val
    lag = np.empty((na, nb), dtype=np.float64)
    wt = np.empty((na, nb), dtype=np.float64)
    cdef double[:, ::1] lv = lag
    cdef double[:, ::1] wv = wt
    with nogil:
        for i in range(na):
            for j in range(nb):
                s1 = 0
                s2 = 0
                top = 0
                for p in range(r):
                    a = cmod(spectra[i, j, p])
                    s1 += a
                    s2 += a * a
                    if a > top:
                        top = a
                val = s2 - s1 * s1 / (2 * nspin) + kappa * s1 * s1
                if val < 0 and val >= -1e-12 * top * top:
                    val = 0
                lv[i, j] = val
                wv[i, j] = s1 * s1
    return lag, wt


def small_eigvals(double complex[:, :] m):
    """Eigenvalues of a small square matrix by the in-kernel QR solver (test hook).

    Returns ``(eigenvalues, status)`` with status 0 on convergence.
    """
    cdef int r = m.shape[0]
    cdef int i, j, st
    cdef double complex h[RMAX][RMAX]
    cdef double complex wv[RMAX]
    if r > RMAX or m.shape[1] != r:
        raise ValueError("need a square matrix of size <= %d" % RMAX)
    for i in range(r):
        for j in range(r):
            h[i][j] = m[i, j]
    st = small_eig(h, r, wv)
    return np.array([wv[i] for i in range(r)]), st
