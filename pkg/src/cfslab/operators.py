"""Finite-rank Hermitian point operators, product spectra and causal structure.

Every point is kept in a canonical factored form ``x = -U diag(core) U^*``
with ``U`` an ``f x k`` matrix of orthonormal eigenvectors spanning the
image of ``x`` and ``core = -eigenvalues``.  In that basis the spin Gram
matrix is simply ``diag(core)``, and every pair computation reduces to
the small overlap matrix ``U_x^* U_y``.
"""
from dataclasses import dataclass
from functools import cached_property
import json

import numpy as np

TOL_RANK = 1e-10
TOL_CLASSIFY = 1e-8
# absolute floor for product eigenvalues, relative to |x| |y|
NOISE_FLOOR = 1e-14


class OperatorError(Exception):
    """Base class for operator errors."""


class NotHermitian(OperatorError):
    pass


class SignatureViolation(OperatorError):
    """More than n positive or more than n negative eigenvalues."""


class RankViolation(OperatorError):
    pass


class DimensionMismatch(OperatorError):
    pass


class SingularGram(OperatorError):
    pass


class SingularPoint(OperatorError):
    """The point does not have maximal rank 2n."""


class NotProperlyTimelike(OperatorError):
    pass


class WrongSpinDimension(OperatorError):
    pass


def _canonical(vecs, eigs):
    """Fix phases (largest entry real positive) and order columns by that entry's row.

    Diagonal matrices thus keep the standard basis order.
    """
    if vecs.shape[1] == 0:
        return vecs, eigs
    idx = np.argmax(np.abs(vecs), axis=0)
    piv = vecs[idx, np.arange(vecs.shape[1])]
    vecs = vecs * (np.abs(piv) / piv)[None, :]
    order = np.lexsort((-eigs, idx))
    return vecs[:, order], eigs[order]


def _signature_check(eigs, spin_dim):
    npos = int(np.sum(eigs > 0))
    nneg = int(np.sum(eigs < 0))
    if npos > spin_dim or nneg > spin_dim:
        raise SignatureViolation(
            "%d positive and %d negative eigenvalues exceed n = %d" % (npos, nneg, spin_dim))


@dataclass(frozen=True, eq=False)
class LocalOperator:
    """Hermitian operator of rank at most ``2n``, stored as ``-U diag(core) U^*``.

    Attributes
    ----------
    factor : (f, k) complex ndarray
        Orthonormal columns spanning the image.
    core : (k,) float ndarray
        Minus the nonzero eigenvalues (so that the spin Gram is ``diag(core)``).
    spin_dim : int
    """
    factor: np.ndarray
    core: np.ndarray
    spin_dim: int

    @property
    def dim_h(self):
        return self.factor.shape[0]

    @property
    def rank(self):
        return self.factor.shape[1]

    @property
    def eigenvalues(self):
        return -self.core

    @property
    def regular(self):
        return self.rank == 2 * self.spin_dim

    @property
    def signature(self):
        return int(np.sum(self.eigenvalues > 0)), int(np.sum(self.eigenvalues < 0))

    @cached_property
    def dense(self):
        return -(self.factor * self.core) @ self.factor.conj().T

    @cached_property
    def norm(self):
        return float(np.max(np.abs(self.core))) if self.rank else 0.0

    @cached_property
    def trace(self):
        return float(-np.sum(self.core))

    def __repr__(self):
        return "LocalOperator(f=%d, n=%d, eigenvalues=%s)" % (
            self.dim_h, self.spin_dim, np.array2string(self.eigenvalues, precision=4))


def make_local_operator(matrix, spin_dim, tol=TOL_RANK):
    """Validate a dense Hermitian matrix and return its canonical factored form."""
    m = np.asarray(matrix, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch("matrix must be square, got shape %s" % (m.shape,))
    if tol <= 0:
        raise ValueError("tol must be positive")
    scale = np.max(np.abs(m)) if m.size else 0.0
    if scale > 0 and np.max(np.abs(m - m.conj().T)) > tol * scale:
        raise NotHermitian("asymmetry %.3g exceeds tolerance" % np.max(np.abs(m - m.conj().T)))
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    big = np.max(np.abs(w)) if w.size else 0.0
    keep = np.abs(w) > tol * big
    w, v = w[keep], v[:, keep]
    _signature_check(w, spin_dim)
    if len(w) > 2 * spin_dim:
        raise RankViolation("rank %d exceeds 2n = %d" % (len(w), 2 * spin_dim))
    v, w = _canonical(v, w)
    return LocalOperator(v, -w, int(spin_dim))


def from_factor(factor, core, spin_dim, tol=TOL_RANK):
    """Build a point ``x = -factor diag(core) factor^*`` from a general factorization.

    ``factor`` need not have orthonormal columns.  Cost is ``O(f r^2)``.
    """
    factor = np.asarray(factor, dtype=complex)
    core = np.asarray(core, dtype=float)
    if factor.ndim != 2 or factor.shape[1] != core.shape[0]:
        raise DimensionMismatch("factor %s and core %s do not match" % (factor.shape, core.shape))
    if factor.shape[1] > 2 * spin_dim:
        raise RankViolation("factor has %d > 2n columns" % factor.shape[1])
    q, r = np.linalg.qr(factor)
    small = -(r * core) @ r.conj().T
    w, v = np.linalg.eigh(0.5 * (small + small.conj().T))
    big = np.max(np.abs(w)) if w.size else 0.0
    keep = np.abs(w) > tol * big
    w, v = w[keep], v[:, keep]
    _signature_check(w, spin_dim)
    v, w = _canonical(q @ v, w)
    return LocalOperator(v, -w, int(spin_dim))


def _check_pair(x, y):
    if x.dim_h != y.dim_h or x.spin_dim != y.spin_dim:
        raise DimensionMismatch("points live in different spaces (f=%d/%d, n=%d/%d)"
                                % (x.dim_h, y.dim_h, x.spin_dim, y.spin_dim))


# ---------------------------------------------------------------- spectra

@dataclass(frozen=True)
class ChainSpectrum:
    """Nontrivial eigenvalues of ``xy``, sorted by decreasing modulus, zero-padded to 2n."""
    eigenvalues: np.ndarray
    scale: float

    @property
    def spin_dim(self):
        return len(self.eigenvalues) // 2


def spectral_weight(spectrum):
    """Sum of the absolute values of the eigenvalues."""
    ev = spectrum.eigenvalues if isinstance(spectrum, ChainSpectrum) else np.asarray(spectrum)
    return float(np.sum(np.abs(ev)))


def clean_spectra(raw, nspin, floor=0.0, tol=TOL_RANK):
    """Discard tiny eigenvalues, sort by modulus and zero-pad (vectorized).

    ``raw`` has shape ``(..., r)``; ``floor`` (broadcastable to ``raw.shape[:-1]``)
    is an absolute noise floor.
    """
    raw = np.asarray(raw, dtype=complex)
    r = raw.shape[-1]
    if r < 2 * nspin:
        pad = np.zeros(raw.shape[:-1] + (2 * nspin - r,), dtype=complex)
        raw = np.concatenate([raw, pad], axis=-1)
    mod = np.abs(raw)
    cut = np.maximum(tol * mod.max(axis=-1), floor)
    raw = np.where(mod > cut[..., None], raw, 0.0)
    # ordering: modulus descending, then real part, then imaginary part; keys are
    # quantized relative to the largest modulus so rounding noise cannot swap ties
    top = np.abs(raw).max(axis=-1, keepdims=True)
    top = np.where(top > 0, top, 1.0)
    keys = [np.round(v / top * 1e9) for v in (-raw.imag, -raw.real, -np.abs(raw))]
    order = np.lexsort(keys, axis=-1)
    raw = np.take_along_axis(raw, order, axis=-1)
    return raw[..., :2 * nspin]


def product_spectrum(x, y, tol=TOL_RANK):
    """Nontrivial spectrum of ``xy`` from the ``k_x x k_x`` reduced eigenproblem."""
    _check_pair(x, y)
    n = x.spin_dim
    if x.rank == 0 or y.rank == 0:
        return ChainSpectrum(np.zeros(2 * n, dtype=complex), 0.0)
    c = x.factor.conj().T @ y.factor
    m = (x.eigenvalues[:, None] * c * y.eigenvalues[None, :]) @ c.conj().T
    ev = clean_spectra(np.linalg.eigvals(m), n, NOISE_FLOOR * x.norm * y.norm, tol)
    return ChainSpectrum(ev, float(np.max(np.abs(ev))))


def lagrangian_from_spectrum(ev, nspin, kappa=0.0):
    """``|(xy)^2| - |xy|^2 / 2n + kappa |xy|^2``, vectorized over leading axes."""
    mod = np.abs(np.asarray(ev))
    s1 = mod.sum(axis=-1)
    s2 = (mod * mod).sum(axis=-1)
    val = s2 - s1 * s1 / (2 * nspin) + kappa * s1 * s1
    scale2 = mod.max(axis=-1, initial=0.0) ** 2
    # clamp rounding noise only; genuinely negative values are left visible
    return np.where((val < 0) & (val >= -1e-12 * scale2), 0.0, val)


def lagrangian(x, y, kappa=0.0):
    """Causal Lagrangian ``L_kappa(x, y)``."""
    sp = product_spectrum(x, y)
    return float(lagrangian_from_spectrum(sp.eigenvalues, x.spin_dim, kappa))


def quarter_sum(ev, nspin):
    """The equivalent form ``(1/4n) sum_ij (|l_i| - |l_j|)^2``."""
    mod = np.abs(np.asarray(ev))
    return float(np.sum((mod[:, None] - mod[None, :]) ** 2) / (4 * nspin))


# ---------------------------------------------------------------- causal structure

@dataclass(frozen=True)
class CausalClass:
    tag: str
    properly_timelike: bool = False
    degenerate: bool = False


SPACELIKE, TIMELIKE, LIGHTLIKE = "Spacelike", "Timelike", "Lightlike"


def classify_spectrum(ev, tol=TOL_CLASSIFY, degenerate_scale=None):
    """Classify a zero-padded spectrum by modulus spread and reality defect."""
    ev = np.asarray(ev, dtype=complex)
    mod = np.abs(ev)
    top = mod.max() if ev.size else 0.0
    if top == 0.0 or (degenerate_scale is not None and top <= tol * degenerate_scale):
        return CausalClass(SPACELIKE, degenerate=True)
    spread = (top - mod.min()) / top
    if spread <= tol:
        return CausalClass(SPACELIKE)
    if np.max(np.abs(ev.imag)) / top <= tol:
        return CausalClass(TIMELIKE)
    return CausalClass(LIGHTLIKE)


def classify_causal(x, y, tol=TOL_CLASSIFY, check_proper=False):
    """Causal class of the pair ``(x, y)``.

    With ``check_proper`` the properly-timelike flag is filled in for
    timelike pairs.
    """
    if not 0 < tol < 0.5:
        raise ValueError("tol must lie in (0, 0.5)")
    sp = product_spectrum(x, y)
    cls = classify_spectrum(sp.eigenvalues, tol, x.norm * y.norm)
    if check_proper and cls.tag == TIMELIKE and properly_timelike(x, y, tol):
        return CausalClass(TIMELIKE, properly_timelike=True)
    return cls


# ---------------------------------------------------------------- spin spaces and kernels

@dataclass(frozen=True, eq=False)
class SpinSpace:
    """Image of a point with its indefinite spin scalar product ``-<u|x v>``."""
    point: LocalOperator

    @property
    def basis(self):
        return self.point.factor

    @property
    def gram(self):
        return np.diag(self.point.core).astype(complex)

    @property
    def dim(self):
        return self.point.rank

    @property
    def signature(self):
        c = self.point.core
        return int(np.sum(c > 0)), int(np.sum(c < 0))

    def product(self, u, v):
        """Spin product of two vectors of H (antilinear in the first slot)."""
        return -np.vdot(u, self.point.dense @ v)

    def adjoint(self, a):
        """Spin adjoint of an endomorphism given in this basis."""
        g = self.point.core
        return (a.conj().T * g[None, :]) / g[:, None]


def spin_space(x):
    return SpinSpace(x)


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """``P(x, y)`` as a ``k_x x k_y`` matrix between the spin bases."""
    target: SpinSpace
    source: SpinSpace
    entries: np.ndarray

    def adjoint(self):
        """``P(x,y)^* = G_y^{-1} P^dagger G_x``, a kernel from S_x to S_y."""
        gx = self.target.point.core
        gy = self.source.point.core
        for g in (gx, gy):
            if g.size and np.min(np.abs(g)) <= TOL_RANK * np.max(np.abs(g)):
                raise SingularGram("spin Gram is numerically singular")
        ent = (self.entries.conj().T * gx[None, :]) / gy[:, None]
        return KernelMatrix(self.source, self.target, ent)


def kernel(sx, sy):
    """``P(x, y) = pi_x y`` restricted to ``S_y``, in the spin bases."""
    _check_pair(sx.point, sy.point)
    c = sx.basis.conj().T @ sy.basis
    return KernelMatrix(sx, sy, c * sy.point.eigenvalues[None, :])


def closed_chain(sx, sy):
    """``A_xy = P(x,y) P(y,x)`` on ``S_x``."""
    return kernel(sx, sy).entries @ kernel(sy, sx).entries


def time_direction(x, y):
    """``C(x,y) = i Tr(yx pi_y pi_x - xy pi_x pi_y)``.

    ``y`` is called future of ``x`` when ``C > 0``.  For a sea of
    negative-frequency waves ``exp(i omega t)`` this labels the Minkowski
    past, so the orientation is reversed relative to ``t``.
    """
    _check_pair(x, y)
    if x.rank == 0 or y.rank == 0:
        return 0.0
    c = x.factor.conj().T @ y.factor
    lx, ly = x.eigenvalues, y.eigenvalues
    ch = c.conj().T
    t1 = np.trace((ly[:, None] * ch) @ (lx[:, None] * c) @ ch @ c)
    t2 = np.trace((lx[:, None] * c) @ (ly[:, None] * ch) @ c @ ch)
    return float((1j * (t1 - t2)).real)


# ---------------------------------------------------------------- properly timelike

@dataclass(frozen=True)
class TimelikeCheck:
    ok: bool
    reason: str = ""

    def __bool__(self):
        return self.ok


def _eigenspaces(a, tol):
    """Eigenvalues of ``a`` grouped into clusters with orthonormal bases per cluster."""
    w, v = np.linalg.eig(a)
    order = np.argsort(w.real, kind="stable")
    w, v = w[order], v[:, order]
    scale = np.max(np.abs(w)) if w.size else 0.0
    groups, start = [], 0
    for i in range(1, len(w) + 1):
        if i == len(w) or abs(w[i] - w[i - 1]) > max(np.sqrt(tol), 1e-6) * scale:
            q, _ = np.linalg.qr(v[:, start:i])
            groups.append((w[start:i].mean(), q))
            start = i
    return w, groups


def properly_timelike(x, y, tol=TOL_CLASSIFY):
    """True iff ``A_xy`` has a real, strictly positive spectrum with definite eigenspaces."""
    _check_pair(x, y)
    if not (x.regular and y.regular):
        return TimelikeCheck(False, "point not regular")
    sx, sy = SpinSpace(x), SpinSpace(y)
    return chain_properly_timelike(closed_chain(sx, sy), sx.gram, tol)


def chain_properly_timelike(a, gram, tol=TOL_CLASSIFY):
    """Check a closed chain ``a`` against the indefinite inner product ``gram``."""
    w, groups = _eigenspaces(a, tol)
    scale = np.max(np.abs(w))
    if scale == 0:
        return TimelikeCheck(False, "closed chain vanishes")
    if np.max(np.abs(w.imag)) > tol * scale:
        return TimelikeCheck(False, "complex eigenvalues")
    if np.min(w.real) <= tol * scale:
        return TimelikeCheck(False, "eigenvalue not strictly positive")
    gnorm = np.max(np.abs(np.linalg.eigvalsh(gram)))
    for lam, q in groups:
        h = q.conj().T @ gram @ q
        e = np.linalg.eigvalsh(0.5 * (h + h.conj().T))
        if np.min(np.abs(e)) <= tol * gnorm or not (np.all(e > 0) or np.all(e < 0)):
            return TimelikeCheck(False, "eigenspace for %.6g is not definite" % lam.real)
    return TimelikeCheck(True)


# ---------------------------------------------------------------- sign operators

def euclidean_sign(sx):
    """``s_x``: +1 on the positive and -1 on the negative spectral subspace of ``-x``."""
    if not sx.point.regular:
        raise SingularPoint("Euclidean sign needs a regular point")
    return np.diag(np.sign(sx.point.core)).astype(complex)


def directional_sign(sx, sy, tol=TOL_CLASSIFY):
    """``v_xy``: +1 on the positive definite, -1 on the negative definite invariant subspace of ``A_xy``."""
    if sx.point.spin_dim != 2:
        raise WrongSpinDimension("directional sign needs spin dimension 2")
    check = properly_timelike(sx.point, sy.point, tol)
    if not check:
        raise NotProperlyTimelike(check.reason)
    a = closed_chain(sx, sy)
    _, groups = _eigenspaces(a, tol)
    cols, signs = [], []
    for _, q in groups:
        h = q.conj().T @ sx.gram @ q
        s = 1.0 if np.linalg.eigvalsh(0.5 * (h + h.conj().T))[0] > 0 else -1.0
        cols.append(q)
        signs.extend([s] * q.shape[1])
    signs = np.array(signs)
    if np.sum(signs > 0) != 2 or np.sum(signs < 0) != 2:
        raise NotProperlyTimelike("invariant subspaces are not two-dimensional")
    basis = np.hstack(cols)
    return basis @ np.diag(signs) @ np.linalg.inv(basis)


def is_clifford_subspace(sx, generators, tol=1e-10):
    """Return the signature ``(r, s)`` if the generators span a Clifford subspace, else None.

    Generators are endomorphisms of the spin space in its basis; they
    must be symmetric with respect to the spin product.
    """
    gens = [np.asarray(u, dtype=complex) for u in generators]
    k = sx.dim
    if not gens:
        return None
    scale = max(np.max(np.abs(u)) for u in gens) ** 2
    for u in gens:
        if u.shape != (k, k):
            raise DimensionMismatch("generator shape %s, spin dimension %d" % (u.shape, k))
        if np.max(np.abs(sx.adjoint(u) - u)) > tol * np.sqrt(scale):
            raise ValueError("generator is not spin-symmetric")
    form = np.zeros((len(gens), len(gens)))
    for i, u in enumerate(gens):
        for j, v in enumerate(gens):
            ac = u @ v + v @ u
            c = np.trace(ac) / k
            if np.max(np.abs(ac - c * np.eye(k))) > tol * scale or abs(c.imag) > tol * scale:
                return None
            form[i, j] = c.real / 2
    e = np.linalg.eigvalsh(form)
    if np.min(np.abs(e)) <= tol * max(np.max(np.abs(e)), 1e-300):
        return None
    return int(np.sum(e > 0)), int(np.sum(e < 0))


# ---------------------------------------------------------------- operator inequality

def _sqrt_abs(h):
    w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
    return (v * np.sqrt(np.abs(w))) @ v.conj().T


def sqrt_abs_bound(x, y):
    """``(||sqrt|y| - sqrt|x|||, ||y - x||^(1/4) ||y + x||^(1/4))`` on the joint image."""
    _check_pair(x, y)
    span = np.hstack([x.factor, y.factor])
    if span.shape[1] == 0:
        return 0.0, 0.0
    u, s, _ = np.linalg.svd(span, full_matrices=False)
    q = u[:, s > TOL_RANK * s[0]]
    ax, ay = q.conj().T @ x.factor, q.conj().T @ y.factor
    xs = (ax * x.eigenvalues) @ ax.conj().T
    ys = (ay * y.eigenvalues) @ ay.conj().T
    lhs = np.linalg.norm(_sqrt_abs(ys) - _sqrt_abs(xs), 2)
    rhs = np.linalg.norm(ys - xs, 2) ** 0.25 * np.linalg.norm(ys + xs, 2) ** 0.25
    return float(lhs), float(rhs)


# ---------------------------------------------------------------- serialization

def operator_to_dict(x):
    """JSON-ready layout: shape plus row-major ``[re, im]`` pairs of the dense matrix."""
    d = x.dense
    return {
        "dim_h": x.dim_h,
        "spin_dim": x.spin_dim,
        "matrix": [[float(z.real), float(z.imag)] for z in d.ravel()],
    }


def operator_from_dict(obj, tol=TOL_RANK):
    f = int(obj["dim_h"])
    pairs = np.asarray(obj["matrix"], dtype=float).reshape(f * f, 2)
    return make_local_operator((pairs[:, 0] + 1j * pairs[:, 1]).reshape(f, f), int(obj["spin_dim"]), tol)


def dumps_operators(points):
    return json.dumps([operator_to_dict(x) for x in points], sort_keys=True)


def loads_operators(text):
    return [operator_from_dict(o) for o in json.loads(text)]


def random_operator(rng, f, spin_dim, rank=None, scale=1.0):
    """Random admissible point: ``rank`` (default 2n) eigenvalues split evenly by sign."""
    rank = 2 * spin_dim if rank is None else rank
    z = rng.standard_normal((f, rank)) + 1j * rng.standard_normal((f, rank))
    q, _ = np.linalg.qr(z)
    npos = min(spin_dim, (rank + 1) // 2)
    signs = np.array([1.0] * npos + [-1.0] * (rank - npos))
    lam = signs * scale * rng.uniform(0.2, 1.0, rank)
    return from_factor(q, -lam, spin_dim)
