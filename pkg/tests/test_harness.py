"""Bound sweeps, discrete inf-sup and the mollification study."""

import math

import numpy as np
import pytest
import scipy.sparse as sp

from helmbound import coeff, fem, geom, harness
from helmbound.geom import GAMMA_I, DomainSpec, Mesh


def _step_field():
    spec = coeff.FamilySpec(kind="piecewise_constant", layer_radii=(1.0,), a_layers=(1.0,), n_layers=(0.5,))
    return coeff.build_family(spec)[1]


def test_mesh_size_rule():
    assert harness.mesh_size(1.0, 0.25, 20) == 0.25
    assert harness.mesh_size(16.0, 0.25, 20) == pytest.approx(2 * math.pi / 320)


def test_gaussian_source_unit_mass_and_separated():
    dom = DomainSpec(geom.square(2.0))
    f, c, cut = harness.gaussian_source(dom)
    np.testing.assert_array_equal(c, [0.0, 0.0])
    assert cut == pytest.approx(3 * dom.diameter() / 10)
    mesh = geom.build_mesh(dom, 0.05)
    # the truncated bump keeps almost all of its unit L^2 mass
    assert fem.function_norm_sq(f, mesh) == pytest.approx(1.0, abs=0.02)
    assert f(np.array([[1.99, 0.0]]))[0] == 0.0
    dom = DomainSpec(geom.square(2.0), geom.square(0.5))
    _, c, cut = harness.gaussian_source(dom)
    np.testing.assert_allclose(c, [1.25, 0.0])
    assert cut <= 0.9 * 0.75


def test_dense_oracle_matches_hand_example():
    # G = I: singular values of S itself
    S = np.array([[3.0, 0.0], [0.0, 0.5j]])
    assert harness.dense_infsup(S, np.eye(2)) == pytest.approx(0.5, abs=1e-14)


def test_two_by_two_toy():
    S = np.array([[2.0, 1j], [1j, 3.0]])
    G = np.array([[2.0, 0.5], [0.5, 1.0]])
    val, _, ok = harness.discrete_infsup(sp.csr_matrix(S), sp.csr_matrix(G))
    assert ok
    assert val == pytest.approx(harness.dense_infsup(S, G), abs=1e-10)


@pytest.mark.parametrize("k", [0.5, 2.0])
def test_one_triangle_toy(k):
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    mesh = Mesh(v, np.array([[0, 1, 2]]), np.array([[0, 1], [1, 2], [2, 0]]), (GAMMA_I,) * 3)
    prob = fem.HelmholtzProblem(k=k, A=coeff.constant_matrix_field(1.0), n=coeff.constant_field(1.0),
                                domain=DomainSpec(v))
    system = fem.assemble(prob, mesh)
    G = harness.h1k_gram(mesh, k)
    val, _, ok = harness.discrete_infsup(system.matrix, G)
    assert ok
    assert val == pytest.approx(harness.dense_infsup(system.matrix, G), abs=1e-10)


def test_sparse_matches_dense_on_small_mesh():
    fam = harness.transmission_family()
    mesh = geom.build_mesh(fam.domain, 0.5)
    prob = fem.HelmholtzProblem(k=2.0, A=fam.A, n=fam.n, domain=fam.domain)
    system = fem.assemble(prob, mesh)
    G = harness.h1k_gram(mesh, 2.0)
    val, _, _ = harness.discrete_infsup(system.matrix, G)
    assert val == pytest.approx(harness.dense_infsup(system.matrix, G), rel=1e-8)


def test_low_frequency_limit_is_coercive():
    fam = harness.homogeneous_family()
    row = harness.infsup_sweep(fam, [0.01]).rows[0]
    assert row.converged
    assert row.discrete_infsup == pytest.approx(1.0, abs=1e-3)  # min(A_min, n_min) = 1
    assert row.lower_bound is not None and 0 < row.lower_bound < row.discrete_infsup


def test_infsup_stable_under_mesh_doubling():
    fam = harness.transmission_family()
    a = harness.infsup_sweep(fam, [2.0], h0=0.2, ppw=1.0).rows[0].discrete_infsup
    b = harness.infsup_sweep(fam, [2.0], h0=0.1, ppw=1.0).rows[0].discrete_infsup
    assert a > 0 and b > 0
    assert abs(a - b) / b < 0.10


def test_infsup_csv(tmp_path):
    rep = harness.infsup_sweep(harness.homogeneous_family(), [1.0], h0=0.5)
    path = tmp_path / "infsup.csv"
    rep.write_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0] == "k,discrete_infsup,lower_bound,margin,iterations,converged"
    assert len(rows) == 2


def test_homogeneous_sweep_passes():
    rep = harness.k_sweep_bound_check(harness.homogeneous_family(), [1, 2, 4, 8], workers=2)
    assert rep.all_pass
    assert [r.k for r in rep.rows] == [1.0, 2.0, 4.0, 8.0]
    assert max(r.ratio for r in rep.rows) < 0.5
    assert all(r.residual < 1e-8 for r in rep.rows)


def test_sweep_uses_A_min_and_n_min_margins():
    rep = harness.k_sweep_bound_check(harness.transmission_family(), [1.0])
    assert rep.mu == pytest.approx((1.0, 0.5))  # (A_min, n_min) for a_i = 2, n_i = 0.5
    r = rep.rows[0]
    assert r.weighted_lhs == pytest.approx(1.0 * r.grad_norm_sq + 0.5 * r.k2_l2_norm_sq, rel=1e-14)
    assert r.ratio == pytest.approx(r.weighted_lhs / (r.constant_used * r.f_norm_sq), rel=1e-14)


def test_trapping_family_refused():
    fam = harness.transmission_family(a_i=1.0, n_i=2.0)
    with pytest.raises(harness.ConditionNotSatisfied):
        harness.k_sweep_bound_check(fam, [1.0])


def test_trapping_family_report_only():
    fam = harness.transmission_family(a_i=1.0, n_i=2.0)
    rep = harness.k_sweep_bound_check(fam, [1.0, 2.0], report_only=True)
    assert rep.report_only
    assert all(r.passed is None and r.ratio > 0 for r in rep.rows)
    assert "report-only" in rep.summary()
    assert all(line.split(",")[9] == "na" for line in rep.csv_lines()[1:])


def test_sweep_rejects_bad_grid():
    fam = harness.homogeneous_family()
    with pytest.raises(coeff.ConfigurationError):
        harness.k_sweep_bound_check(fam, [])
    with pytest.raises(coeff.ConfigurationError):
        harness.k_sweep_bound_check(fam, [0.0])
    with pytest.raises(coeff.ConfigurationError):
        harness.k_sweep_bound_check(fam, [1.0], h0=-1)


def test_sweep_csv_header_and_order(tmp_path):
    rep = harness.k_sweep_bound_check(harness.homogeneous_family(), [2, 1], workers=2)
    path = tmp_path / "sweep.csv"
    rep.write_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0] == ",".join(harness.COLUMNS)
    assert [float(r.split(",")[0]) for r in rows[1:]] == [2.0, 1.0]


def test_mollify_constant_field_distance_zero():
    rep = harness.mollification_study(coeff.constant_field(1.0), [0.2, 0.1])
    assert all(r.l2_distance < 1e-14 for r in rep.rows)
    assert all(r.preserved for r in rep.rows)


def test_mollify_step_field_sqrt_rate():
    rep = harness.mollification_study(_step_field(), [0.2, 0.1, 0.05])
    d = [r.l2_distance for r in rep.rows]
    assert d[0] > d[1] > d[2] > 0
    assert rep.slope == pytest.approx(0.5, abs=0.15)
    assert all(r.mu_radial >= rep.n_min - 1e-9 and r.preserved for r in rep.rows)


def test_mollify_nested_annuli_preserved():
    spec = coeff.FamilySpec(kind="piecewise_constant", layer_radii=(0.6, 1.2), a_layers=(1.0, 1.0),
                            n_layers=(0.3, 0.6))
    n = coeff.build_family(spec)[1]
    rep = harness.mollification_study(n, [0.1, 0.05])
    assert all(r.preserved for r in rep.rows)


def test_mollify_rejects_bad_widths():
    with pytest.raises(coeff.ConfigurationError):
        harness.mollification_study(_step_field(), [])
    with pytest.raises(coeff.ConfigurationError):
        harness.mollification_study(_step_field(), [0.1, -0.1])
