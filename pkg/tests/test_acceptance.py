"""The ten acceptance criteria, each at its stated tolerance and runtime limit.

Every test records one PASS/FAIL line (printed, and repeated in the terminal
summary) before asserting.
"""

import filecmp
import time
from pathlib import Path

import numpy as np
import pytest

from helmbound import cli, coeff, consts, fem, geom, harness, morawetz, rays
from helmbound.morawetz import MultiplierSpec

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
GOLDEN = Path(__file__).resolve().parent / "golden"


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def _smooth_A():
    def ev(x):
        out = np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()
        out[..., 0, 0] += 0.2 * np.sin(x[..., 0])
        out[..., 1, 1] += 0.1 * np.cos(x[..., 1])
        return out

    def grad(x):
        g = np.zeros(x.shape[:-1] + (2, 2, 2))
        g[..., 0, 0, 0] = 0.2 * np.cos(x[..., 0])
        g[..., 1, 1, 1] = -0.1 * np.sin(x[..., 1])
        return g

    return coeff.MatrixCoefficientField(ev, grad, A_min=0.8, A_max=1.3, support_radius=np.inf)


def test_criterion_01_pointwise_identity(acceptance_line):
    with Timer() as t:
        worst = 0.0
        for d in (2, 3):
            for seed in range(100):
                v, A, n, spec, x = morawetz.random_case(seed, d)
                worst = max(worst, morawetz.pointwise_identity_residual(v, A, n, spec, x).max())
        v = morawetz.plane_wave_field(2.0, (0.6, 0.8), envelope=0.3)
        A, n = _smooth_A(), coeff.constant_field(1.0)
        spec = MultiplierSpec(0.5, morawetz.radius_function(), 2.0)
        x = np.array([[0.4, 0.9], [-1.1, 0.3], [0.7, -0.6]])
        exact = morawetz.identity_terms(v, A, n, spec, x).div_flux
        hs = np.array([1e-2, 5e-3, 2.5e-3])
        errs = [np.abs(morawetz.identity_terms(v, A, n, spec, x, h=h).div_flux - exact).max() for h in hs]
        slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    ok = worst <= 1e-10 and abs(slope - 2.0) <= 0.3 and t.elapsed < 30
    acceptance_line(1, "pointwise multiplier identity",
                    ok, f"max residual {worst:.2e} (<= 1e-10), FD slope {slope:.3f}, {t.elapsed:.1f}s (< 30s)")
    assert ok


def test_criterion_02_tangential_operator(acceptance_line):
    with Timer() as t:
        rng = np.random.default_rng(2)
        worst_normal = worst_split = 0.0
        for d in (2, 3):
            B = rng.normal(size=(100, d, d))
            A = B @ np.swapaxes(B, 1, 2) + 0.1 * np.eye(d)
            nu = rng.normal(size=(100, d))
            nu /= np.linalg.norm(nu, axis=1, keepdims=True)
            g = rng.normal(size=(100, d)) + 1j * rng.normal(size=(100, d))
            T = morawetz.tangential_T(g, A, nu)
            worst_normal = max(worst_normal, float(np.abs(np.sum(T * nu, axis=1)).max() / np.abs(T).max()))
            left, right = morawetz.conormal_split(g, A, nu)
            worst_split = max(worst_split, float(np.abs(left - right).max() / np.abs(left).max()))
    ok = worst_normal <= 1e-13 and worst_split <= 1e-12 and t.elapsed < 5
    acceptance_line(2, "tangential operator", ok,
                    f"|T.nu| {worst_normal:.1e} (<= 1e-13), split identity {worst_split:.1e} (<= 1e-12), "
                    f"{t.elapsed:.2f}s (< 5s)")
    assert ok


def test_criterion_03_integrated_identity(acceptance_line):
    with Timer() as t:
        v = morawetz.plane_wave_field(2.0, (0.6, 0.8), envelope=0.3)
        n = morawetz.random_scalar_field(np.random.default_rng(2), 2)
        spec = MultiplierSpec(0.5, morawetz.radius_function(), 2.0)
        dom = geom.DomainSpec(geom.square(2.0), geom.square(0.5))
        chk = morawetz.integrated_identity_check(v, _smooth_A(), n, spec, dom, level=3)
    ok = chk.residual < 1e-6 and t.elapsed < 60
    acceptance_line(3, "integrated identity on a square annulus", ok,
                    f"relative residual {chk.residual:.2e} at level {chk.level} (< 1e-6), {t.elapsed:.1f}s (< 60s)")
    assert ok


def test_criterion_04_constants(acceptance_line):
    with Timer() as t:
        c1 = consts.constant_C1(1, 1, 1, 3, 1)
        cut = consts.verify_cutoff_properties()
        beta = consts.tedp_beta(1, 1, 1, 1, 1, 1)
    ok = (c1 == 20.0 and abs(cut.sup_ratio_M - 12.0) <= 1e-9 and abs(cut.sup_ratio_six - 6.0) <= 1e-9
          and beta == 9.0 and t.elapsed < 1)
    acceptance_line(4, "explicit constants", ok,
                    f"C1 = {c1!r}, sup F'^2/F = {cut.sup_ratio_M:.12g}, sup F'^2/(F(2-F)) = "
                    f"{cut.sup_ratio_six:.12g}, beta = {beta!r}, {t.elapsed:.3f}s (< 1s)")
    assert ok


def test_criterion_05_fem_convergence(acceptance_line):
    with Timer() as t:
        rep = fem.manufactured_solution_test(5.0, geom.DomainSpec(geom.square(1.0)), h0=0.1, levels=3)
    ok = abs(rep.l2_rate - 2.0) <= 0.2 and t.elapsed < 120
    acceptance_line(5, "manufactured plane-wave convergence", ok,
                    f"L2 order {rep.l2_rate:.3f} (2.0 +- 0.2), H1 order {rep.h1_rate:.3f}, {t.elapsed:.1f}s (< 120s)")
    assert ok


@pytest.fixture(scope="module")
def acceptance_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_a")
    cfg = cli.load_config(CONFIGS / "acceptance_sweep.cfg")
    t0 = time.perf_counter()
    code = cli.run(cfg, out, quiet=True)
    return code, out, time.perf_counter() - t0


def test_criterion_06_bound_sweep(acceptance_run, acceptance_line):
    code, out, elapsed = acceptance_run
    rows = (out / "sweep.csv").read_text().splitlines()
    header = rows[0].split(",")
    table = [dict(zip(header, r.split(","))) for r in rows[1:]]
    ks = [float(r["k"]) for r in table]
    ratios = [float(r["ratio"]) for r in table]
    ok = (code == cli.EXIT_OK and ks == [1.0, 2.0, 4.0, 8.0, 16.0] and max(ratios) <= 1.10
          and elapsed < 600)
    acceptance_line(6, "bound sweep, transmission a_i=2 n_i=0.5", ok,
                    f"max ratio {max(ratios):.3e} (<= 1.10) over k = {ks}, {elapsed:.1f}s (< 600s)")
    assert ok


def test_criterion_07_trapping_dichotomy(acceptance_line):
    with Timer() as t:
        R = 6.0
        bump = coeff.radial_field(coeff.bump_profile(2.0, 3.0))
        r1 = rays.circular_orbit_radii(bump, R)[0]
        trap = rays.classify_trapping(bump, R, n_rays=0, extra_launches=[((r1, 0.0), (0.0, 1.0))])
        trapped = trap.verdict is rays.Verdict.TRAPPING_EVIDENCE and trap.s_budget == 1e3 * R
        drift = trap.max_null_drift
        escapes = []
        for n, Rn in ((coeff.constant_field(1.0), 2.0),
                      (coeff.radial_field(coeff.bump_profile(-0.4, 0.0, 0.8, (1.5, 2.0))), 2.0)):
            cert = coeff.check_condition_N3(n, coeff.SamplingRegion(radius=Rn))
            assert cert.holds
            rep = rays.classify_trapping(n, Rn, n_rays=100, mu=cert.mu_values[0])
            escapes.append(rep.n_escaped == 100 and rep.all_within_bound)
            drift = max(drift, rep.max_null_drift)
    ok = trapped and all(escapes) and drift < 1e-6 and t.elapsed < 120
    acceptance_line(7, "trapping/nontrapping dichotomy", ok,
                    f"bump profile: {trap.verdict.value} at r1 = {r1:.10f}; certified profiles escaped within "
                    f"S(R): {escapes}; max null drift {drift:.1e} (< 1e-6), {t.elapsed:.1f}s (< 120s)")
    assert ok


def test_criterion_08_convexity_second_difference(acceptance_line):
    with Timer() as t:
        n = coeff.radial_field(coeff.bump_profile(2.0, 3.0))
        devs, spacing = [], []
        for ds in (0.04, 0.02, 0.01):
            tr = rays.integrate_ray(rays.null_launch([3.6, 0.0], [0.2, 1.0], n), n, 4.0, ds=ds)
            chk = rays.verify_radius_second_derivative(tr, n)
            devs.append(chk.max_deviation)
            spacing.append(chk.spacing)
        slopes = np.diff(np.log(devs)) / np.diff(np.log(spacing))
    ok = bool(np.all(np.abs(slopes - 2.0) <= 0.3)) and t.elapsed < 60
    acceptance_line(8, "second differences of |x|^2/2 along rays", ok,
                    f"Richardson slopes {np.round(slopes, 3).tolist()} (2.0 +- 0.3), {t.elapsed:.1f}s (< 60s)")
    assert ok


def test_criterion_09_mollification(acceptance_line):
    with Timer() as t:
        spec = coeff.FamilySpec(kind="piecewise_constant", layer_radii=(1.0,), a_layers=(1.0,), n_layers=(0.5,))
        step = coeff.build_family(spec)[1]
        rep = harness.mollification_study(step, [0.2, 0.1, 0.05])
    d = [r.l2_distance for r in rep.rows]
    margins = min(r.mu_radial for r in rep.rows)
    ok = (d[0] > d[1] > d[2] and abs(rep.slope - 0.5) <= 0.15 and margins >= rep.n_min - 1e-9
          and all(r.radial_monotone_margin > 0 for r in rep.rows) and t.elapsed < 60)
    acceptance_line(9, "mollification of the step field", ok,
                    f"log-log slope {rep.slope:.4f} (0.5 +- 0.15), min margin {margins:.12g} "
                    f"(>= n_min = {rep.n_min:g}), {t.elapsed:.1f}s (< 60s)")
    assert ok


def test_criterion_10_determinism(acceptance_run, tmp_path, acceptance_line):
    _, first, _ = acceptance_run
    cfg = cli.load_config(CONFIGS / "acceptance_sweep.cfg")
    assert cli.run(cfg, tmp_path, quiet=True) == cli.EXIT_OK
    csvs = sorted(p.name for p in first.glob("*.csv"))
    same = all(filecmp.cmp(first / name, tmp_path / name, shallow=False) for name in csvs)
    golden = (GOLDEN / "acceptance_sweep.csv").read_bytes() == (first / "sweep.csv").read_bytes()
    ok = bool(csvs) and same and golden
    acceptance_line(10, "determinism", ok,
                    f"rerun byte-identical for {csvs}: {same}; matches golden report: {golden}")
    assert ok
