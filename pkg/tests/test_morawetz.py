"""Pointwise and integrated multiplier identities, and the conormal splitting."""

import numpy as np
import pytest

from helmbound import coeff, geom, morawetz
from helmbound.coeff import UnsupportedRegularity
from helmbound.morawetz import MultiplierSpec, ScalarFunction


def _quadratic():
    return morawetz.polynomial_field([1 + 2j, -0.5j], [[0.3, 0.1 + 0.2j], [0.1 + 0.2j, -0.4j]], 0.7)


def test_multiplier_examples():
    x = np.array([[0.3, -1.2], [2.0, 0.5]])
    const = morawetz.polynomial_field([0, 0], np.zeros((2, 2)), 1.0)
    np.testing.assert_allclose(morawetz.multiplier_M(const, MultiplierSpec(0.0, 0.0, 2.0), x), 0.0)
    lin = morawetz.polynomial_field([1, 0], np.zeros((2, 2)))
    np.testing.assert_allclose(morawetz.multiplier_M(lin, MultiplierSpec(1.0, 0.0, 2.0), x), 2 * x[:, 0])


def test_multiplier_rejects_complex_weights():
    with pytest.raises(coeff.ConfigurationError):
        MultiplierSpec(1j, 0.0, 1.0)


def test_polynomial_identity_machine_precision():
    v = _quadratic()
    spec = MultiplierSpec(0.5, 1.0, 3.0)
    x = np.random.default_rng(1).uniform(-1, 1, size=(50, 2))
    assert morawetz.pointwise_identity_residual(v, None, None, spec, x).max() <= 1e-12


@pytest.mark.parametrize("d", [2, 3])
def test_identity_random_cases(d):
    worst = 0.0
    for seed in range(50):
        v, A, n, spec, x = morawetz.random_case(seed, d)
        worst = max(worst, morawetz.pointwise_identity_residual(v, A, n, spec, x).max())
        for part in morawetz.PARTS:
            worst = max(worst, morawetz.pointwise_identity_residual(v, A, n, spec, x, part=part).max())
        worst = max(worst, morawetz.additivity_defect(v, A, n, spec, x))
    assert worst <= 1e-10


def test_beta_only_identity():
    v, A, n, spec, x = morawetz.random_case(7, 2)
    beta_only = MultiplierSpec(0.0, spec.beta, spec.k)
    assert morawetz.pointwise_identity_residual(v, A, n, beta_only, x).max() <= 1e-10


def _smooth_A():
    def ev(x):
        s = 0.2 * np.sin(x[..., 0])
        out = np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()
        out[..., 0, 0] += s
        return out

    def grad(x):
        g = np.zeros(x.shape[:-1] + (2, 2, 2))
        g[..., 0, 0, 0] = 0.2 * np.cos(x[..., 0])
        return g

    return coeff.MatrixCoefficientField(ev, grad, A_min=0.8, A_max=1.2, support_radius=np.inf)


def test_finite_difference_divergence_second_order():
    v = morawetz.plane_wave_field(2.0, (0.6, 0.8), envelope=0.3)
    A = _smooth_A()
    n = coeff.constant_field(1.0)
    spec = MultiplierSpec(0.5, morawetz.radius_function(), 2.0)
    x = np.array([[0.4, 0.9], [-1.1, 0.3], [0.7, -0.6]])
    exact = morawetz.identity_terms(v, A, n, spec, x)
    hs = np.array([1e-2, 5e-3, 2.5e-3])
    errs = [np.abs(morawetz.identity_terms(v, A, n, spec, x, h=h).div_flux - exact.div_flux).max() for h in hs]
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.3)


def test_ml_identity_plane_wave_sign():
    rng = np.random.default_rng(3)
    x = rng.uniform(-5, 5, size=(1000, 2))
    x = x[np.linalg.norm(x, axis=1) > 1e-3]
    v = morawetz.plane_wave_field(3.0, (1.0, 0.0))
    terms = morawetz.ml_identity(v, 0.5, 3.0, x)
    assert terms.residual.max() <= 1e-10
    assert terms.P.min() >= -1e-12


def test_ml_identity_constant_field():
    v = morawetz.polynomial_field([0, 0], np.zeros((2, 2)), 2.0)
    x = np.random.default_rng(4).uniform(0.5, 2, size=(20, 2))
    assert morawetz.ml_identity_residual(v, 0.5, 1.5, x).max() <= 1e-10


def test_ml_outgoing_far_field_decay():
    k = 2.0
    v = morawetz.outgoing_radial_field(k)
    P = []
    for r in (10.0, 100.0):
        x = np.array([[r, 0.0], [0.0, r], [r / np.sqrt(2), -r / np.sqrt(2)]])
        P.append(np.abs(morawetz.ml_identity(v, 0.5, k, x).P).max())
        vr = np.sum(x / r * v.grad(x), axis=-1)
        assert np.abs(vr - 1j * k * v.value(x)).max() <= 0.5 / r ** 1.5 + 1e-14
    assert P[1] < P[0] / 10


def test_tangential_operator_identity_matrix():
    g = np.array([0.3 + 1j, -2.0 + 0.5j])
    nu = np.array([0.6, 0.8])
    T = morawetz.tangential_T(g, np.eye(2), nu)
    np.testing.assert_allclose(T, g - (nu @ g) * nu, atol=1e-15)


def test_tangential_operator_hand_example():
    T = morawetz.tangential_T(np.array([1.0, 0.0]), np.diag([2.0, 1.0]), np.array([1.0, 0.0]))
    np.testing.assert_allclose(T, [0.0, 0.0], atol=1e-15)


@pytest.mark.parametrize("d", [2, 3])
def test_tangential_operator_random(rng, d):
    B = rng.normal(size=(100, d, d))
    A = B @ np.swapaxes(B, 1, 2) + 0.1 * np.eye(d)
    nu = rng.normal(size=(100, d))
    nu /= np.linalg.norm(nu, axis=1, keepdims=True)
    g = rng.normal(size=(100, d)) + 1j * rng.normal(size=(100, d))
    T = morawetz.tangential_T(g, A, nu)
    assert np.abs(np.sum(T * nu, axis=1)).max() <= 1e-13 * np.abs(T).max()
    left, right = morawetz.conormal_split(g, A, nu)
    assert np.abs(left - right).max() <= 1e-12 * np.abs(left).max()


def test_tangential_operator_rejects_indefinite():
    with pytest.raises(coeff.ConfigurationError):
        morawetz.tangential_T(np.ones(2), np.diag([1.0, -1.0]), np.array([0.0, 1.0]))


def test_boundary_density_matches_flux():
    v, A, n, spec, _ = morawetz.random_case(11, 2)
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, size=(30, 2))
    nu = rng.normal(size=(30, 2))
    nu /= np.linalg.norm(nu, axis=1, keepdims=True)
    a = morawetz.boundary_integrand(v, A, n, spec, x, nu)
    b = morawetz.flux_normal(v, A, n, spec, x, nu)
    assert np.abs(a - b).max() <= 1e-12 * max(1.0, np.abs(b).max())


def test_circle_functional_matches_flux():
    k, R, alpha = 2.0, 1.5, 0.5
    v = morawetz.plane_wave_field(k, (0.3, 1.0), envelope=0.2)
    spec = MultiplierSpec(alpha, R, k)
    t = np.linspace(0, 2 * np.pi, 17)
    x = R * np.column_stack([np.cos(t), np.sin(t)])
    nu = x / R
    a = morawetz.circle_boundary_functional(v, k, R, alpha, R, x)
    b = morawetz.flux_normal(v, None, None, spec, x, nu)
    assert np.abs(a - b).max() <= 1e-12 * np.abs(b).max()


def test_integrated_constant_field():
    v = morawetz.polynomial_field([0, 0], np.zeros((2, 2)), 1.0)
    dom = geom.DomainSpec(geom.square(1.0), geom.square(0.3))
    chk = morawetz.integrated_identity_check(v, None, None, MultiplierSpec(0.0, 0.0, 2.0), dom, level=1)
    assert chk.residual <= 1e-10


def test_integrated_identity_converges():
    v = morawetz.plane_wave_field(2.0, (0.6, 0.8), envelope=0.3)
    A = _smooth_A()
    n = morawetz.random_scalar_field(np.random.default_rng(2), 2)
    spec = MultiplierSpec(0.5, morawetz.radius_function(), 2.0)
    dom = geom.DomainSpec(geom.square(2.0), geom.square(0.5))
    res = [morawetz.integrated_identity_check(v, A, n, spec, dom, level=lv).residual for lv in (0, 1, 2)]
    assert res[0] > res[1] > res[2]
    assert res[2] < 1e-6


def test_integrated_rejects_piecewise_constant():
    A, n = coeff.transmission_pair(2.0, 0.5, coeff.Disk(0.5))
    dom = geom.DomainSpec(geom.square(1.0))
    v = morawetz.plane_wave_field(1.0, (1.0, 0.0))
    with pytest.raises(UnsupportedRegularity):
        morawetz.integrated_identity_check(v, A, n, MultiplierSpec(0.0, 0.0, 1.0), dom)


def test_test_field_self_check_catches_wrong_derivative():
    with pytest.raises(coeff.ConfigurationError):
        morawetz.TestField(lambda x: x[..., 0] ** 2, lambda x: np.zeros_like(x),
                           lambda x: np.zeros(x.shape[:-1] + (2, 2)), "bad")


def test_scalar_function_constant():
    f = ScalarFunction.constant(2.5)
    x = np.zeros((3, 2))
    np.testing.assert_array_equal(f.value(x), 2.5)
    np.testing.assert_array_equal(f.grad(x), 0.0)
