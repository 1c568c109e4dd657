"""Numpy versions of the compiled pair sweeps (same signatures and results)."""
import numpy as np


def chain_spectra(gram, lam_a, lam_b):
    na, r = lam_a.shape
    nb = lam_b.shape[0]
    if r == 0:
        return np.empty((na, nb, 0), dtype=complex)
    c = gram.reshape(na, r, nb, r).transpose(0, 2, 1, 3)
    m = (lam_a[:, None, :, None] * c * lam_b[None, :, None, :]) @ c.conj().swapaxes(-1, -2)
    return np.linalg.eigvals(m)


def lagrangian_table(spectra, nspin, kappa):
    mod = np.abs(spectra)
    s1 = mod.sum(axis=-1)
    s2 = (mod * mod).sum(axis=-1)
    top = mod.max(axis=-1, initial=0.0)
    val = s2 - s1 * s1 / (2 * nspin) + kappa * s1 * s1
    val = np.where((val < 0) & (val >= -1e-12 * top * top), 0.0, val)
    return val, s1 * s1
