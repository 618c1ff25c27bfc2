"""Explicit stability constants (frozen values computed by hand from the closed forms)."""

import math

import numpy as np
import pytest

from helmbound import consts
from helmbound.consts import DomainError, EdpCase, TedpCase


def test_C1_examples():
    assert consts.constant_C1(1, 1, 1, 3, 1) == 20.0
    assert consts.constant_C1(1, 1, 1, 2, 10) == pytest.approx(8.41, abs=1e-12)


def test_C1_large_k_limit():
    assert consts.constant_C1(2, 3, 1.5, 2, 1e12) == pytest.approx(4 * 1.5 ** 2 * (1 / 2 + 1 / 3), rel=1e-10)


def test_C1_monotone_in_k_and_R():
    ks = np.geomspace(0.1, 100, 60)
    Rs = np.linspace(0.5, 10, 40)
    for d in (2, 3):
        vals = np.array([[consts.constant_C1(1.0, 0.5, R, d, k) for k in ks] for R in Rs])
        assert np.all(np.diff(vals, axis=1) <= 0)
        assert np.all(np.diff(vals, axis=0) >= 0)


def test_C1_rejects_bad_input():
    with pytest.raises(ValueError):
        consts.constant_C1(0, 1, 1, 2, 1)
    with pytest.raises(ValueError):
        consts.constant_C1(1, 1, 1, 4, 1)


def test_C2_example():
    assert consts.constant_C2(1, 1, 1, 2, 10) == pytest.approx(594.222464, abs=1e-9)
    c = consts.edp_constants(EdpCase.A2, k=10, d=2, R=1, mu3=1, A_max=1)
    assert c.C2 == pytest.approx(594.222464, abs=1e-9)


def test_C3_C5_example():
    C3, C4, C5 = consts.constants_C3_C5(1, 1, 1, 0.5, 0.5, 2, 1)
    assert C3 == pytest.approx(127.0, abs=1e-12)
    assert C4 == pytest.approx(22.5, abs=1e-12)
    assert C5 == pytest.approx(328.0, abs=1e-12)


def test_C3_C5_threshold():
    with pytest.raises(DomainError, match="sqrt"):
        consts.constants_C3_C5(1, 1, 1, 0.5, 0.5, 2, 0.1)
    with pytest.raises(DomainError):
        consts.edp_constants(EdpCase.N3, k=0.1, d=2, R=1, mu4=1, n_max=1, L_D=0.5, a=0.5)
    k0 = math.sqrt(3 / 8)
    assert consts.constants_C3_C5(1, 1, 1, 0.5, 0.5, 2, k0)[0] > 0


def test_beta_examples():
    assert consts.tedp_beta(1, 1, 1, 1, 1, 1) == 9.0
    assert consts.tedp_beta(1, 1, 1, 1, 2, 1e12) == pytest.approx(6.0, abs=1e-12)
    b1 = consts.tedp_beta(1.0, 0.7, 1.2, 1.5, 0.6, 3.0)
    b2 = consts.tedp_beta(2.0, 0.7, 1.2, 1.5, 0.6, 1.5)
    assert b2 == pytest.approx(2 * b1, rel=1e-14)


def test_tedp_A1_example():
    c = consts.tedp_constants(TedpCase.A1, k=1, d=2, L_I=1, a_I=1, mu1=1, mu2=1)
    assert c.beta == 9.0
    assert c.C1 == pytest.approx(365.0, abs=1e-12)
    assert c.C1_tilde == pytest.approx(30.5, abs=1e-12)


def test_tedp_A1_large_k_limit():
    c = consts.tedp_constants(TedpCase.A1, k=1e12, d=2, L_I=1.3, a_I=0.7, mu1=0.8, mu2=0.6,
                              theta_min=0.9, theta_max=1.1, n_max_GammaI=1.2)
    beta_inf = (1.3 / 0.9) * (1 + 1.2 + 2 * 1.1 ** 2 * (1 + 2 / 0.7))
    assert c.C1 == pytest.approx(4 * (1.3 ** 2 / 0.8 + beta_inf ** 2 / 0.6), rel=1e-10)


def test_tedp_A2_and_N3_cases():
    c2 = consts.tedp_constants(TedpCase.A2, k=1, d=2, L_I=1, a_I=1, mu3=1, A_max=1)
    # 2[(2/mu3)(1+2A_max)^2 (L_I^2 + (beta + d/2k)^2) + mu3/k^2] with beta = 9
    assert c2.C2 == pytest.approx(2 * (2 * 9 * (1 + 100) + 1), abs=1e-12)
    c3 = consts.tedp_constants(TedpCase.N3, k=1, d=2, L_I=1, a_I=1, mu4=1, n_max=1, L_D=0.5, a_D=0.5)
    assert c3.C3 > 0 and c3.C4 == pytest.approx(22.5) and c3.C5 > 0
    assert "(iv)" in c3.note


def test_constants_positive_and_continuous(rng):
    for _ in range(30):
        p = dict(k=rng.uniform(0.7, 20), d=int(rng.integers(2, 4)), L_I=rng.uniform(0.5, 3),
                 a_I=rng.uniform(0.2, 1), theta_min=0.8, theta_max=1.2, n_max_GammaI=rng.uniform(0.5, 2),
                 mu4=rng.uniform(0.2, 2), n_max=rng.uniform(1, 3), L_D=rng.uniform(0.2, 1), a_D=rng.uniform(0.2, 1))
        base = consts.tedp_constants(TedpCase.N3, **p)
        q = dict(p, L_I=p["L_I"] * 1.01, mu4=p["mu4"] * 0.99)
        pert = consts.tedp_constants(TedpCase.N3, **q)
        for name in ("C3", "C4", "C5", "beta", "C1_tilde", "C3_tilde"):
            a, b = getattr(base, name), getattr(pert, name)
            assert math.isfinite(a) and a > 0
            assert abs(b - a) / a < 0.10


def test_k_independent_upper_bound():
    k0 = 1.0
    ks = np.geomspace(k0, 200, 40)
    for f in (lambda k: consts.constant_C1(1, 0.5, 2, 2, k),
              lambda k: consts.constant_C2(1, 2, 2, 2, k),
              lambda k: consts.constants_C3_C5(1, 2, 2, 0.5, 0.5, 3, k)[0],
              lambda k: consts.tedp_constants(TedpCase.A1, k=k, d=2, L_I=2, a_I=0.7, mu1=1, mu2=0.5).C1):
        assert all(f(k) <= f(k0) * (1 + 1e-14) for k in ks)


def test_infsup_lower_bound():
    assert consts.infsup_lower_bound(1, 1, 1, 1, 20, 1) == pytest.approx(0.10056040392404, abs=1e-13)
    assert consts.infsup_lower_bound(0.7, 0.5, 1, 1, 20, 1e-12) == pytest.approx(0.5, rel=1e-9)
    b1 = consts.infsup_lower_bound(1, 1, 1, 1, 20, 3)
    b2 = consts.infsup_lower_bound(1, 1, 2, 1, 20, 3)
    assert b2 > b1 / 2
    with pytest.raises(ValueError):
        consts.infsup_lower_bound(1, 1, 1, 1, -20, 1)


def test_cutoff_values():
    F, dF = consts.cutoff_F(np.array([0.0, 1.0, 0.5]))
    np.testing.assert_array_equal(F, [0.0, 1.0, 0.5])
    np.testing.assert_array_equal(dF, [0.0, 0.0, 1.5])
    with pytest.raises(DomainError):
        consts.cutoff_F(1.5)


def test_cutoff_properties():
    rep = consts.verify_cutoff_properties()
    assert rep.holds
    assert abs(rep.limit_M - 12.0) < 1e-9 and abs(rep.sup_ratio_M - 12.0) < 1e-9
    assert abs(rep.limit_six - 6.0) < 1e-9 and abs(rep.sup_ratio_six - 6.0) < 1e-9
    # approach to the limit point from the right
    t = np.array([1e-4, 1e-6])
    F, dF = consts.cutoff_F(t)
    np.testing.assert_allclose(dF ** 2 / F, 12.0, rtol=1e-3)
    np.testing.assert_allclose(dF ** 2 / (F * (2 - F)), 6.0, rtol=1e-3)


def test_as_rows_echoes_inputs():
    c = consts.tedp_constants(TedpCase.A1, k=1, d=2, L_I=1, a_I=1, mu1=1, mu2=1)
    rows = dict(c.as_rows())
    assert rows["C1"] == pytest.approx(365.0)
    assert rows["input.L_I"] == 1
