import numpy as np
import pytest

from cfslab import lattice as lt
from cfslab import operators as op
from cfslab import sea
from cfslab.measure import DiscreteMeasure, convex_mix

SMALL = lt.BoxConfig(size=4.0, modes=5, eps=0.1, n_t=3, n_x=5, t_extent=1.5)
# converged enough for the closed forms: damping is strong before the mode set ends
CONVERGED = lt.BoxConfig(size=12.0, modes=11, eps=0.4, n_t=3, n_x=6, t_extent=9.0)


@pytest.fixture(scope="module")
def small():
    return lt.build_system(SMALL)


@pytest.fixture(scope="module")
def reference():
    return lt.build_system(lt.REFERENCE)


# ---------------------------------------------------------------- configuration

def test_config_validation():
    with pytest.raises(lt.InvalidConfig):
        lt.BoxConfig(modes=4)
    with pytest.raises(lt.InvalidConfig):
        lt.BoxConfig(eps=0.0)
    with pytest.raises(lt.InvalidConfig):
        lt.BoxConfig(regularization="gaussian")
    with pytest.raises(lt.ConfigTooLarge):
        lt.BoxConfig(modes=13)


def test_config_from_mapping():
    cfg = lt.BoxConfig.from_mapping({"size": 3, "modes": 7, "eps": 0.1})
    assert cfg.size == 3.0 and cfg.f == 2 * 343
    assert lt.BoxConfig.from_mapping(cfg.to_dict()) == cfg
    with pytest.raises(lt.InvalidConfig):
        lt.BoxConfig.from_mapping({"sizes": 3})
    with pytest.raises(lt.InvalidConfig):
        lt.BoxConfig.from_mapping({"modes": 7.0})
    with pytest.raises(lt.InvalidConfig):
        lt.BoxConfig.from_mapping({"modes": True})


# ---------------------------------------------------------------- sea basis

def test_mode_count():
    for m in (1, 3, 5):
        cfg = lt.BoxConfig(modes=m, n_x=m)
        assert lt.build_sea_basis(cfg).f == 2 * m ** 3


@pytest.mark.parametrize("t", [0.0, 0.37])
def test_basis_gram_identity(t):
    b = lt.build_sea_basis(SMALL)
    g = lt.basis_gram(b, SMALL.n_x, t)
    assert np.max(np.abs(g - np.eye(b.f))) <= 1e-10


def test_spinors_are_negative_energy_eigenvectors():
    b = lt.build_sea_basis(SMALL)
    alpha = [sea.GAMMA[0] @ sea.GAMMA[a] for a in (1, 2, 3)]
    for l in range(0, b.f, 17):
        k = b.kvecs[l]
        h = sum(k[a] * alpha[a] for a in range(3)) + b.mass * sea.GAMMA[0]
        assert np.allclose(h @ b.spinors[l], -b.omega[l] * b.spinors[l], atol=1e-12)


def test_dirac_residual_second_order():
    b = lt.build_sea_basis(SMALL)
    x = (0.2, 0.3, 1.1, 2.5)
    r1 = lt.dirac_residual(b, x, 1e-2).max()
    r2 = lt.dirac_residual(b, x, 5e-3).max()
    assert r1 <= (b.omega.max() * 1e-2) ** 2
    assert r1 / r2 == pytest.approx(4.0, rel=1e-2)


# ---------------------------------------------------------------- regularization

def test_damping_multipliers_and_limit():
    b = lt.build_sea_basis(SMALL)
    r = lt.regularize(b, SMALL)
    assert np.allclose(r.multipliers, np.exp(-SMALL.eps * b.omega), rtol=1e-14)
    x = (0.1, 0.2, 0.3, 0.4)
    errs = []
    for eps in (1e-1, 1e-2, 1e-3):
        cfg = lt.BoxConfig(size=4.0, modes=5, eps=eps, n_x=5)
        errs.append(np.abs(lt.regularize(b, cfg).evaluate(x) - b.evaluate(x)).max())
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] <= 1e-2 * np.abs(b.evaluate(x)).max()


def test_sharp_cutoff_zeroes_high_modes():
    cfg = lt.BoxConfig(size=4.0, modes=5, eps=0.3, regularization="sharp_cutoff", n_x=5)
    r = lt.regularize(lt.build_sea_basis(cfg), cfg)
    kk = np.linalg.norm(r.kvecs, axis=1)
    assert np.all(r.multipliers[kk > 1 / 0.3] == 0)
    assert np.all(r.multipliers[kk <= 1 / 0.3] == 1)


def test_mollifier_transform_oracle():
    # 4D radial Fourier transform by direct quadrature in (r, angle)
    from scipy import integrate

    def bump(r):
        return np.exp(-1 / (1 - r * r)) if r < 1 else 0.0

    def direct(q):
        # int_{R^4} h(x) e^{i q.x} d^4x with the 4D angular measure 4 pi sin^2(th) dth
        inner = lambda r: integrate.quad(lambda th: 4 * np.pi * np.sin(th) ** 2 * np.cos(q * r * np.cos(th)),
                                         0, np.pi, epsabs=1e-14)[0]
        return integrate.quad(lambda r: bump(r) * r ** 3 * inner(r), 0, 1, epsabs=1e-14)[0]

    norm = direct(0.0)
    for q in (0.5, 3.0, 9.0):
        assert lt.mollifier_transform(q) == pytest.approx(direct(q) / norm, rel=1e-8, abs=1e-12)
    assert lt.mollifier_transform(0.0) == 1.0


def test_mollifier_weak_convergence_linear_in_eps():
    b = lt.build_sea_basis(SMALL)

    def eta(p):
        return np.exp(-np.sum((p - 2.0) ** 2, axis=1))[:, None] * np.array([1, 0.5, 0, 0.2j])[None, :]

    deltas = []
    for eps in (0.2, 0.1, 0.05):
        cfg = lt.BoxConfig(size=4.0, modes=5, eps=eps, regularization="mollifier", n_x=5)
        deltas.append(lt.weak_convergence_probe(b, cfg, eta, 5) / eps)
    # delta / eps stays bounded (it even shrinks: the bump is even, so the defect is O(eps^2))
    assert deltas[0] >= deltas[1] >= deltas[2]
    assert deltas[2] < 0.1


def test_pointwise_bound_recorded_and_sharp(rng):
    b = lt.regularize(lt.build_sea_basis(SMALL), SMALL)
    c = lt.pointwise_bound(b)
    assert np.isfinite(c) and c > 0
    for _ in range(20):
        u = rng.standard_normal(b.f) + 1j * rng.standard_normal(b.f)
        x = rng.uniform(0, 4, 4)
        assert np.linalg.norm(b.evaluate(x) @ u) <= c * np.linalg.norm(u) * (1 + 1e-12)
    # attained by the top singular vector
    e = b.evaluate(np.zeros(4))
    v = np.linalg.svd(e)[2][0].conj()
    assert np.linalg.norm(e @ v) == pytest.approx(c, rel=1e-12)


# ---------------------------------------------------------------- local correlation operators

def test_site_operators_valid(small):
    for x in small.points:
        assert x.rank <= 4
        assert x.signature == (2, 2)
        y = op.make_local_operator(x.dense, 2)
        assert np.allclose(np.sort(y.eigenvalues), np.sort(x.eigenvalues), atol=1e-12 * x.norm)


def test_single_mode_operator():
    b = lt.regularize(lt.build_sea_basis(SMALL), SMALL).subset([3])
    coord = (0.3, 0.1, 0.2, 0.7)
    x = lt.local_correlation(b, coord)
    psi = b.evaluate(coord)[:, 0]
    assert x.dense.shape == (1, 1)
    assert x.dense[0, 0] == pytest.approx(-(psi.conj() @ lt.G0 @ psi), rel=1e-12)


def test_translation_covariance(small):
    b = small.basis
    a = np.array([0.5, 0.8, 0.0, 1.6])           # a lattice translation
    x = (0.0, 0.8, 1.6, 0.0)
    fx = lt.local_correlation(b, x).dense
    fy = lt.local_correlation(b, tuple(np.array(x) + a)).dense
    v = np.diag(b.phases(a))
    assert np.max(np.abs(fy - v.conj().T @ fx @ v)) <= 1e-12 * np.max(np.abs(fx))
    assert np.allclose(np.linalg.eigvalsh(fx), np.linalg.eigvalsh(fy), atol=1e-10 * np.max(np.abs(fx)))


def test_spectra_site_independent(small):
    ev = np.array([np.sort(x.eigenvalues) for x in small.points])
    assert np.max(np.abs(ev - ev[0])) <= 1e-10 * np.max(np.abs(ev))


def test_total_volume_and_no_merging(small):
    c = small.config
    assert small.measure.volume == pytest.approx(c.t_extent * c.size ** 3, rel=1e-14)
    assert small.merged == 0
    assert len(small.points) == c.n_t * c.n_x ** 3


def test_merging_identical_sites():
    # a single momentum mode set (modes = 1) sees no spatial dependence: every
    # time slice collapses to one point up to the phase, which cancels in F
    cfg = lt.BoxConfig(size=2.0, modes=1, eps=0.1, n_t=2, n_x=3, t_extent=1.0)
    s = lt.build_system(cfg)
    assert len(s.points) == 1
    assert s.merged == 2 * 27 - 1
    assert s.measure.weights[0] == pytest.approx(cfg.t_extent * cfg.size ** 3, rel=1e-14)


def test_workers_do_not_change_points():
    a = lt.build_system(SMALL, workers=1)
    b = lt.build_system(SMALL, workers=3)
    for x, y in zip(a.points, b.points):
        assert np.array_equal(x.dense, y.dense)


# ---------------------------------------------------------------- kernel

def test_kernel_matches_abstract_kernel(small, rng):
    n = len(small.coords)
    for _ in range(50):
        i, j = rng.choice(n, 2, replace=False)
        a = lt.kernel_eps(small, i, j)
        b = lt.transported_kernel(small, i, j)
        assert np.max(np.abs(a - b)) <= 1e-8 * np.max(np.abs(a))


def test_kernel_adjointness(small, rng):
    n = len(small.coords)
    for _ in range(20):
        i, j = rng.choice(n, 2, replace=False)
        pxy = lt.kernel_eps(small, i, j)
        pyx = lt.kernel_eps(small, j, i)
        # spin adjoint with respect to psi^dagger gamma^0 phi
        adj = lt.G0 @ pxy.conj().T @ lt.G0
        assert np.max(np.abs(adj - pyx)) <= 1e-12 * np.max(np.abs(pxy))


def test_coincidence_trace(small):
    for s in (0, 17, 101):
        p = lt.kernel_eps(small, s, s)
        assert np.trace(p).real == pytest.approx(small.point_at(s).trace, rel=1e-12)


def test_mode_sum_matches_regularized_closed_form():
    # box side and mode count large enough that damping ends the sum, not the mode set
    cfg = lt.BoxConfig(size=5.0, modes=11, eps=0.5, n_x=11)
    for xi in ([1.0, 0.3, 0.2, 0.0], [0.3, 1.0, 0.0, 0.0]):
        assert lt.closed_form_error(cfg, xi, regularized=True) <= 0.05


def test_convergence_trend_standard_configs():
    for xi in lt.REFERENCE_XI:
        errs = [lt.closed_form_error(cfg, xi, regularized=True) for cfg in lt.STANDARD_CONFIGS]
        assert errs[0] > errs[1] > errs[2]


def test_convergence_trend_with_modes_converged_box():
    errs = [lt.closed_form_error(lt.BoxConfig(size=5.0, modes=m, eps=0.5, n_x=m), [1.0, 0.3, 0.2, 0.0],
                                 regularized=True) for m in (5, 7, 9, 11)]
    assert all(a > b for a, b in zip(errs, errs[1:]))


# ---------------------------------------------------------------- wave identities

def test_wave_identities(small):
    rep = lt.wave_identities(small, rng=np.random.default_rng(1))
    assert rep.sites == 100
    assert rep.f_identity <= 1e-10
    assert rep.p_identity <= 1e-10
    assert rep.wave_agreement <= 1e-10
    assert rep.holder_worst <= 1.0
    assert rep.holder_pairs == 3 * 125 * 3 + 2 * 125


# ---------------------------------------------------------------- Krein space

@pytest.mark.parametrize("seed", range(3))
def test_krein_positivity_symmetry_witness(small, seed):
    fam = lt.random_wave_family(small, 5, 6, np.random.default_rng(seed))
    rep = lt.krein_gram(small, fam)
    scale = np.max(np.abs(rep.minus_p))
    assert rep.neg_p_min_eig >= -1e-10 * scale
    assert rep.symmetry <= 1e-10
    assert rep.witness <= 1e-10
    assert np.allclose(rep.inner, rep.inner.conj().T, atol=1e-12 * np.max(np.abs(rep.inner)))
    assert np.linalg.eigvalsh(rep.norm_gram).min() >= -1e-12 * np.max(np.abs(rep.norm_gram))


def test_krein_inner_indefinite(small):
    # gamma^0 has signature (2, 2): spinors in the upper and lower components have opposite sign
    up = {0: np.array([1, 0, 0, 0], dtype=complex)}
    down = {0: np.array([0, 0, 1, 0], dtype=complex)}
    rep = lt.krein_gram(small, [up, down])
    w = small.measure.weights[0]
    assert rep.inner[0, 0].real == pytest.approx(w)
    assert rep.inner[1, 1].real == pytest.approx(-w)


# ---------------------------------------------------------------- charge conservation

CHARGE = lt.BoxConfig(size=4.0, modes=5, eps=0.05, n_t=4, n_x=5, t_extent=2.0)


@pytest.fixture(scope="module")
def charge_system():
    return lt.build_system(CHARGE)


@pytest.mark.parametrize("mode", [0, 125, 126])
def test_charge_layers_equal(charge_system, mode):
    u = np.zeros(charge_system.basis.f, dtype=complex)
    u[mode] = 1.0
    c = lt.charge_surface_layer(charge_system, 1, 2, u)
    assert c.layer_t0 != 0
    assert abs(c.layer_t1 - c.layer_t0) <= 1e-3 * abs(c.layer_t0)


def test_charge_layers_random_vector(charge_system, rng):
    u = rng.standard_normal(charge_system.basis.f) + 1j * rng.standard_normal(charge_system.basis.f)
    c = lt.charge_surface_layer(charge_system, 1, 2, u)
    assert abs(c.layer_t1 - c.layer_t0) <= 1e-3 * abs(c.layer_t0)


def test_dirac_integral_of_single_mode(charge_system):
    b = charge_system.basis
    for mode in (0, 125):
        u = np.zeros(b.f, dtype=complex)
        u[mode] = 1.0
        c = lt.charge_surface_layer(charge_system, 1, 2, u)
        assert c.dirac_integral_t0 == pytest.approx(b.multipliers[mode] ** 2 / (2 * np.pi), rel=1e-12)


def test_charge_outside_span():
    cfg = lt.BoxConfig(size=4.0, modes=3, eps=0.5, regularization="sharp_cutoff", n_t=3, n_x=3, t_extent=1.5)
    s = lt.build_system(cfg)
    kk = np.linalg.norm(s.basis.kvecs, axis=1)
    dead = np.nonzero(kk > 2.0)[0][0]
    u = np.zeros(s.basis.f, dtype=complex)
    u[dead] = 1.0
    c = lt.charge_surface_layer(s, 1, 1, u)
    assert c.layer_t0 == 0 and c.layer_t1 == 0


def test_charge_bad_range(charge_system):
    u = np.ones(charge_system.basis.f)
    with pytest.raises(lt.BadTimeRange):
        lt.charge_surface_layer(charge_system, 2, 1, u)
    with pytest.raises(lt.BadTimeRange):
        lt.charge_surface_layer(charge_system, 0, 4, u)


def test_charge_ratios_recorded(charge_system):
    ratios = lt.charge_ratios(charge_system, 1, 2, [0, 125])
    assert np.all(np.isfinite(ratios)) and np.all(ratios != 0)
    assert lt.ratio_spread([2.0, 2.1]) == pytest.approx(0.1 / 2.05)


# ---------------------------------------------------------------- causal survey

def test_survey_reference_agreement(reference):
    s = lt.causal_agreement_survey(reference, 5 * lt.REFERENCE.eps, workers=4)
    assert s.agreement >= 0.99
    assert s.excluded > 0
    assert sum(s.table.values()) + s.excluded == len(reference.coords) * (len(reference.coords) - 1) // 2


def test_survey_time_orientation_converged():
    s = lt.causal_agreement_survey(lt.build_system(CONVERGED), 5 * CONVERGED.eps, workers=4)
    assert s.time_forward + s.time_backward > 0
    assert min(s.time_forward, s.time_backward) == 0


def test_time_direction_matches_closed_form():
    sy = lt.build_system(CONVERGED)
    rng = np.random.default_rng(5)
    n = len(sy.coords)
    checked = 0
    while checked < 20:
        i, j = rng.choice(n, 2, replace=False)
        xi = lt.minimal_image(sy, i, j)
        r = np.linalg.norm(xi[1:])
        if r == 0 or abs(xi[0]) <= r + 5 * CONVERGED.eps:
            continue
        x, y = sy.point_at(i), sy.point_at(j)
        if not op.properly_timelike(x, y):
            continue
        c_lat = op.time_direction(x, y)
        c_ref = sea.c_functional(np.zeros(4), xi, CONVERGED.mass, 2 * CONVERGED.eps)
        assert np.sign(c_lat) == np.sign(c_ref)
        checked += 1


def test_survey_band_validation(small):
    with pytest.raises(ValueError):
        lt.causal_agreement_survey(small, 0.5 * SMALL.eps)


# ---------------------------------------------------------------- random-phase mixing

def test_random_phase_mixing(small):
    sub = DiscreteMeasure(small.points[:12], small.measure.weights[:12])
    f = small.basis.f
    rng = np.random.default_rng(11)
    phases = [rng.uniform(-np.pi, np.pi, f) for _ in range(2)]
    rel = []
    for spread in (0.05, 0.5, 1.0):
        _, dec = convex_mix(sub, [np.diag(spread * p) for p in phases])
        assert abs(dec.mixed_action - dec.predicted) <= 1e-10 * abs(dec.mixed_action)
        rel.append(sum(dec.cross.values()) / (4 * dec.diagonal))
    # decoherence: cross terms lose weight as the random phases spread
    assert rel[0] > rel[1] > rel[2]
