import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfslab import operators as op
from cfslab.operators import (LIGHTLIKE, SPACELIKE, TIMELIKE, make_local_operator,
                              random_operator, spin_space)

from oracles import dense_product_spectrum, multiset_distance

seeds = st.integers(0, 2 ** 32 - 1)
dims = st.sampled_from([(4, 1), (7, 1), (16, 1), (5, 2), (9, 2), (16, 2)])


def pair(seed, f, n, full=True):
    rng = np.random.default_rng(seed)
    rank = None if full else int(rng.integers(1, 2 * n + 1))
    return random_operator(rng, f, n, rank), random_operator(rng, f, n, None if full else rank)


# ---------------------------------------------------------------- construction

def test_make_diag_valid():
    x = make_local_operator(np.diag([1.0, -1.0]), 1)
    assert x.rank == 2 and x.signature == (1, 1) and x.regular


def test_make_signature_violation():
    with pytest.raises(op.SignatureViolation):
        make_local_operator(np.diag([1.0, 1.0, -1.0]), 1)


def test_make_zero():
    x = make_local_operator(np.zeros((3, 3)), 1)
    assert x.rank == 0
    assert op.classify_causal(x, x).degenerate


def test_make_not_hermitian():
    with pytest.raises(op.NotHermitian):
        make_local_operator(np.array([[0, 1], [0, 0]]), 1)


def test_make_not_square():
    with pytest.raises(op.DimensionMismatch):
        make_local_operator(np.zeros((2, 3)), 1)


def test_rank_violation_from_factor():
    with pytest.raises(op.RankViolation):
        op.from_factor(np.eye(3), np.ones(3), 1)


def test_small_eigenvalues_dropped():
    x = make_local_operator(np.diag([1.0, -1.0, 1e-13]), 1)
    assert x.rank == 2


@given(seeds, dims)
@settings(max_examples=50, deadline=None)
def test_factored_form_reproduces_matrix(seed, fn):
    f, n = fn
    rng = np.random.default_rng(seed)
    x = random_operator(rng, f, n)
    y = make_local_operator(x.dense, n)
    assert np.allclose(y.dense, x.dense, atol=1e-12)
    assert np.allclose(x.factor.conj().T @ x.factor, np.eye(x.rank), atol=1e-12)
    assert np.allclose(x.dense, x.dense.conj().T, atol=1e-13)


# ---------------------------------------------------------------- spectra and Lagrangian

@pytest.mark.parametrize("ev,w", [([4, 1], 5), ([2j, -2j], 4), ([0, 0], 0)])
def test_spectral_weight(ev, w):
    assert op.spectral_weight(np.array(ev)) == pytest.approx(w)


def test_product_spectrum_examples():
    x = make_local_operator(np.diag([1.0, -1.0]), 1)
    y = make_local_operator(np.diag([2.0, -3.0]), 1)
    assert multiset_distance(op.product_spectrum(x, x).eigenvalues, [1, 1]) < 1e-14
    assert multiset_distance(op.product_spectrum(x, y).eigenvalues, [2, 3]) < 1e-14


def test_product_spectrum_dimension_mismatch():
    x = make_local_operator(np.diag([1.0, -1.0]), 1)
    y = make_local_operator(np.diag([1.0, -1.0, 0.0]), 1)
    with pytest.raises(op.DimensionMismatch):
        op.product_spectrum(x, y)


@given(seeds, dims, st.booleans())
@settings(max_examples=100, deadline=None)
def test_isospectrality_against_dense_oracle(seed, fn, full):
    f, n = fn
    x, y = pair(seed, f, n, full)
    ref = dense_product_spectrum(x.dense, y.dense, n)
    sxy = op.product_spectrum(x, y).eigenvalues
    syx = op.product_spectrum(y, x).eigenvalues
    scale = max(np.max(np.abs(ref)), 1e-300)
    assert multiset_distance(sxy, ref) <= 1e-9 * scale
    assert multiset_distance(syx, sxy) <= 1e-9 * scale


def test_lagrangian_examples():
    assert op.lagrangian_from_spectrum(np.array([4.0, 1.0]), 1) == pytest.approx(4.5)
    assert op.lagrangian_from_spectrum(np.array([2j, -2j]), 1) == 0
    for n in (1, 2, 3):
        x = make_local_operator(np.diag([1.0] * n + [-1.0] * n + [0.0]), n)
        assert op.lagrangian(x, x) == 0
        assert np.sum(np.abs(op.product_spectrum(x, x).eigenvalues)) ** 2 == pytest.approx(4 * n * n)


def test_lagrangian_clamp_keeps_real_negatives():
    # negative values beyond the rounding band are not hidden
    assert op.lagrangian_from_spectrum(np.array([1.0, 1.0]), 1, kappa=0.0) == 0
    assert op.lagrangian_from_spectrum(np.array([1.0, 0.0]), 2) > 0


@given(seeds, dims, st.floats(0, 2))
@settings(max_examples=100, deadline=None)
def test_lagrangian_symmetry_and_quarter_sum(seed, fn, kappa):
    f, n = fn
    x, y = pair(seed, f, n)
    sp = op.product_spectrum(x, y).eigenvalues
    scale2 = np.sum(np.abs(sp)) ** 2
    lxy, lyx = op.lagrangian(x, y, kappa), op.lagrangian(y, x, kappa)
    assert abs(lxy - lyx) <= 1e-12 * scale2
    l0 = op.lagrangian(x, y)
    assert abs(l0 - op.quarter_sum(sp, n)) <= 1e-10 * scale2


# ---------------------------------------------------------------- classification

@pytest.mark.parametrize("ev,tag", [([1 + 2j, 1 - 2j], SPACELIKE), ([3, 1, 3, 1], TIMELIKE),
                                    ([1, 1j, 0, 0], LIGHTLIKE), ([1, 1j], SPACELIKE)])
def test_classify_spectrum(ev, tag):
    assert op.classify_spectrum(np.array(ev)).tag == tag


def test_classify_tol_range():
    x = make_local_operator(np.diag([1.0, -1.0]), 1)
    with pytest.raises(ValueError):
        op.classify_causal(x, x, tol=0.6)


@given(seeds, dims)
@settings(max_examples=100, deadline=None)
def test_classification_symmetric_and_spacelike_action_vanishes(seed, fn):
    f, n = fn
    x, y = pair(seed, f, n)
    cxy, cyx = op.classify_causal(x, y), op.classify_causal(y, x)
    assert cxy.tag == cyx.tag
    c = op.classify_causal(x, y, tol=1e-10)
    if c.tag == SPACELIKE:
        sp = op.product_spectrum(x, y).eigenvalues
        assert op.lagrangian(x, y) <= 1e-9 * np.sum(np.abs(sp)) ** 2


def test_spacelike_construction():
    # orthogonal images give xy = 0: degenerate spacelike, L = 0
    x = make_local_operator(np.diag([1.0, -1.0, 0, 0]), 1)
    y = make_local_operator(np.diag([0, 0, 1.0, -1.0]), 1)
    c = op.classify_causal(x, y)
    assert c.tag == SPACELIKE and c.degenerate
    assert op.lagrangian(x, y) == 0


# ---------------------------------------------------------------- spin spaces and kernels

def test_spin_space_example():
    s = spin_space(make_local_operator(np.diag([-1.0, 2.0, 0.0]), 1))
    assert np.allclose(s.basis, np.eye(3)[:, :2])
    assert np.allclose(s.gram, np.diag([1.0, -2.0]))
    assert s.signature == (1, 1)


def test_spin_space_regular_n2(rng):
    s = spin_space(random_operator(rng, 6, 2))
    assert s.signature == (2, 2)


def test_spin_space_zero():
    s = spin_space(make_local_operator(np.zeros((3, 3)), 1))
    assert s.dim == 0 and s.basis.shape == (3, 0)


def test_spin_product_matches_gram(rng):
    x = random_operator(rng, 6, 2)
    s = spin_space(x)
    g = np.array([[s.product(s.basis[:, i], s.basis[:, j]) for j in range(4)] for i in range(4)])
    assert np.allclose(g, s.gram, atol=1e-13)
    assert np.allclose(g, -s.basis.conj().T @ x.dense @ s.basis, atol=1e-13)


def test_kernel_diag_example():
    sx = spin_space(make_local_operator(np.diag([1.0, -1.0]), 1))
    sy = spin_space(make_local_operator(np.diag([2.0, -3.0]), 1))
    assert np.allclose(op.kernel(sx, sy).entries, np.diag([2.0, -3.0]))


@given(seeds, dims)
@settings(max_examples=100, deadline=None)
def test_kernel_adjoint_trace_and_chain(seed, fn):
    f, n = fn
    x, y = pair(seed, f, n)
    sx, sy = spin_space(x), spin_space(y)
    pxy, pyx = op.kernel(sx, sy), op.kernel(sy, sx)
    scale = x.norm * y.norm
    assert np.max(np.abs(pxy.adjoint().entries - pyx.entries)) <= 1e-10 * y.norm
    assert abs(np.trace(op.kernel(sx, sx).entries) - x.trace) <= 1e-10 * x.norm
    a = op.closed_chain(sx, sy)
    assert abs(np.trace(a) - np.trace(y.dense @ x.dense)) <= 1e-10 * scale
    ev = np.linalg.eigvals(a)
    ref = op.product_spectrum(x, y).eigenvalues
    assert multiset_distance(op.clean_spectra(ev, n), ref) <= 1e-9 * scale


def test_kernel_adjoint_needs_regular_points():
    x = make_local_operator(np.diag([1.0, 0.0, 0.0]), 1)
    y = make_local_operator(np.diag([1.0, -1.0, 0.0]), 1)
    pxy = op.kernel(spin_space(x), spin_space(y))
    assert pxy.entries.shape == (1, 2)
    # rank-deficient Gram columns are simply absent; a numerically tiny one is refused
    tiny = op.LocalOperator(np.eye(3)[:, :2].astype(complex), np.array([-1.0, -1e-13]), 1)
    with pytest.raises(op.SingularGram):
        op.kernel(spin_space(tiny), spin_space(y)).adjoint()


def test_closed_chain_of_point_with_itself(rng):
    x = random_operator(rng, 5, 2)
    s = spin_space(x)
    a = op.closed_chain(s, s)
    assert np.allclose(a, op.kernel(s, s).entries @ op.kernel(s, s).entries)
    assert multiset_distance(np.linalg.eigvals(a), x.eigenvalues ** 2) < 1e-12


# ---------------------------------------------------------------- time direction

@given(seeds, dims)
@settings(max_examples=100, deadline=None)
def test_time_direction_antisymmetric(seed, fn):
    f, n = fn
    x, y = pair(seed, f, n)
    scale = (x.norm * y.norm) ** 1
    assert abs(op.time_direction(x, y) + op.time_direction(y, x)) <= 1e-10 * scale
    assert abs(op.time_direction(x, x)) <= 1e-12 * x.norm ** 2


def test_time_direction_dense_oracle(rng):
    x, y = random_operator(rng, 6, 2), random_operator(rng, 6, 2)
    px = x.factor @ x.factor.conj().T
    py = y.factor @ y.factor.conj().T
    xd, yd = x.dense, y.dense
    ref = 1j * np.trace(yd @ xd @ py @ px - xd @ yd @ px @ py)
    assert abs(ref.imag) < 1e-12
    assert op.time_direction(x, y) == pytest.approx(ref.real, rel=1e-10, abs=1e-13)


# ---------------------------------------------------------------- properly timelike and signs

def test_identity_chain_is_not_properly_timelike():
    # x = y regular with eigenvalues +-1: A_xx = identity on a (2,2) spin space
    x = make_local_operator(np.diag([1.0, 1.0, -1.0, -1.0]), 2)
    s = spin_space(x)
    assert np.allclose(op.closed_chain(s, s), np.eye(4))
    assert not op.properly_timelike(x, x)


def test_properly_timelike_nonregular():
    x = make_local_operator(np.diag([1.0, -1.0, 0, 0]), 2)
    chk = op.properly_timelike(x, x)
    assert not chk and "regular" in chk.reason


@given(seeds)
@settings(max_examples=60, deadline=None)
def test_properly_timelike_symmetric(seed):
    x, y = pair(seed, 6, 2)
    assert bool(op.properly_timelike(x, y)) == bool(op.properly_timelike(y, x))


def timelike_pair():
    # x, y = x + small perturbation: spectrum of xy near {1,1,1,1} split, eigenspaces definite
    rng = np.random.default_rng(8)
    d = np.diag([1.0, 2.0, -1.5, -3.0, 0.0, 0.0])
    h = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    h = 0.05 * (h + h.conj().T)
    x = make_local_operator(d, 2)
    u = np.linalg.qr(np.eye(6) + 1j * h)[0]
    y = make_local_operator(u @ d @ u.conj().T, 2)
    return x, y


def test_directional_sign_properties():
    x, y = timelike_pair()
    assert op.properly_timelike(x, y)
    sx, sy = spin_space(x), spin_space(y)
    v = op.directional_sign(sx, sy)
    a = op.closed_chain(sx, sy)
    assert np.allclose(v @ v, np.eye(4), atol=1e-10)
    assert np.max(np.abs(v @ a - a @ v)) <= 1e-9 * np.max(np.abs(a))
    assert sorted(np.round(np.linalg.eigvals(v).real)) == [-1, -1, 1, 1]


def test_directional_sign_errors():
    x = make_local_operator(np.diag([1.0, 1.0, -1.0, -1.0]), 2)
    s = spin_space(x)
    with pytest.raises(op.NotProperlyTimelike):
        op.directional_sign(s, s)
    x1 = make_local_operator(np.diag([1.0, -1.0]), 1)
    with pytest.raises(op.WrongSpinDimension):
        op.directional_sign(spin_space(x1), spin_space(x1))


def test_euclidean_sign():
    s = spin_space(make_local_operator(np.diag([-1.0, 2.0]), 1))
    assert np.allclose(op.euclidean_sign(s), np.diag([1.0, -1.0]))
    with pytest.raises(op.SingularPoint):
        op.euclidean_sign(spin_space(make_local_operator(np.diag([1.0, 0.0]), 1)))


@given(seeds, dims)
@settings(max_examples=50, deadline=None)
def test_euclidean_sign_involution_and_clifford(seed, fn):
    f, n = fn
    x = pair(seed, f, n)[0]
    s = spin_space(x)
    sx = op.euclidean_sign(s)
    assert np.allclose(sx @ sx, np.eye(s.dim))
    assert np.allclose(s.adjoint(sx), sx)
    assert op.is_clifford_subspace(s, [sx]) == (1, 0)
    assert op.is_clifford_subspace(s, [sx, sx]) is None


def test_dirac_matrices_form_clifford_subspace():
    from cfslab.sea import GAMMA
    # spin space of C^4 with Gram gamma^0: x = -gamma^0 on a 4-dim space
    x = make_local_operator(-np.diag([1.0, 1.0, -1.0, -1.0]), 2)
    s = spin_space(x)
    assert np.allclose(s.gram, np.diag([1, 1, -1, -1]))
    assert op.is_clifford_subspace(s, list(GAMMA)) == (1, 3)


# ---------------------------------------------------------------- operator inequality

def test_sqrt_abs_bound_examples():
    x = make_local_operator(np.diag([1.0, -2.0, 0.0]), 1)
    assert op.sqrt_abs_bound(x, x) == (0.0, 0.0)
    z = make_local_operator(np.zeros((1, 1)), 1)
    y = make_local_operator(np.diag([4.0]), 1)
    lhs, rhs = op.sqrt_abs_bound(z, y)
    assert lhs == pytest.approx(2) and rhs == pytest.approx(2)


@given(seeds, dims, st.booleans())
@settings(max_examples=200, deadline=None)
def test_sqrt_abs_inequality(seed, fn, full):
    f, n = fn
    x, y = pair(seed, f, n, full)
    lhs, rhs = op.sqrt_abs_bound(x, y)
    assert lhs <= rhs + 1e-10 * max(x.norm, y.norm)


# ---------------------------------------------------------------- serialization

def test_json_roundtrip(rng):
    pts = [random_operator(rng, 5, 2) for _ in range(3)]
    text = op.dumps_operators(pts)
    data = json.loads(text)
    assert data[0]["dim_h"] == 5 and len(data[0]["matrix"]) == 25
    back = op.loads_operators(text)
    for a, b in zip(pts, back):
        assert np.allclose(a.dense, b.dense, atol=1e-15)
