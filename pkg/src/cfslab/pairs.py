"""Pairwise sweeps over many points: spectra and Lagrangian tables.

Points are stacked into one ``f x (N r)`` factor matrix so that all
overlaps come from a single matrix product; the per-pair work then runs
in the compiled kernel (or its numpy twin).  Rows are split into fixed
chunks and reassembled in order, so results do not depend on the number
of workers.
"""
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import kernels
from .operators import DimensionMismatch, NOISE_FLOOR, TOL_RANK, clean_spectra

CHUNK = 64


def stack(points):
    """Return ``(factors, lam, norms)`` with every factor zero-padded to ``2n`` columns."""
    if not points:
        raise ValueError("no points")
    f, n = points[0].dim_h, points[0].spin_dim
    r = 2 * n
    fac = np.zeros((f, len(points) * r), dtype=complex)
    lam = np.zeros((len(points), r))
    for i, x in enumerate(points):
        if x.dim_h != f or x.spin_dim != n:
            raise DimensionMismatch("points live in different spaces")
        fac[:, i * r:i * r + x.rank] = x.factor
        lam[i, :x.rank] = x.eigenvalues
    norms = np.array([x.norm for x in points])
    return fac, lam, norms


def _chunks(n, size):
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def pair_spectra(points_a, points_b=None, workers=1, tol=TOL_RANK):
    """Cleaned product spectra of all pairs, shape ``(Na, Nb, 2n)``."""
    points_b = points_a if points_b is None else points_b
    fa, la, na = stack(points_a)
    fb, lb, nb = (fa, la, na) if points_b is points_a else stack(points_b)
    if fa.shape[0] != fb.shape[0] or la.shape[1] != lb.shape[1]:
        raise DimensionMismatch("point sets live in different spaces")
    nspin = points_a[0].spin_dim
    r = 2 * nspin
    fah = fa.conj().T

    def work(bounds):
        s, e = bounds
        gram = np.ascontiguousarray(fah[s * r:e * r] @ fb)
        raw = kernels.chain_spectra(gram, np.ascontiguousarray(la[s:e]), lb)
        floor = NOISE_FLOOR * na[s:e, None] * nb[None, :]
        return clean_spectra(raw, nspin, floor, tol)

    parts = _map(work, _chunks(len(points_a), CHUNK), workers)
    return np.concatenate(parts, axis=0)


def lagrangian_tables(points_a, points_b=None, kappa=0.0, workers=1):
    """Return ``(L_kappa, |xy|^2)`` for all pairs."""
    sp = pair_spectra(points_a, points_b, workers)
    return kernels.lagrangian_table(np.ascontiguousarray(sp), points_a[0].spin_dim, float(kappa))


def _map(fn, items, workers):
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))
