"""End-to-end experiments: bound sweeps over k, discrete inf-sup, mollification.

* :func:`k_sweep_bound_check` solves the truncated problem for a list of
  wavenumbers and compares the weighted solution norm with the explicit
  stability constant of the certified coefficient condition.
* :func:`infsup_estimate` computes the discrete inf-sup constant of the
  sesquilinear form in the k-weighted H^1 norm.
* :func:`mollification_study` measures how fast mollified coefficients
  approach a rough one and whether they keep its monotonicity margins.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import shapely
from scipy.linalg import cholesky, solve_triangular, svdvals
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs

from . import coeff, consts, fem, geom
from .coeff import ConditionId, ConfigurationError, Disk, SamplingRegion

DEFAULT_SAFETY = 0.10
K_MAX = 32.0


class ConditionNotSatisfied(ConfigurationError):
    """The coefficient condition behind the requested constant does not hold."""


# ---------------------------------------------------------------------------
# problem families


@dataclass(frozen=True, eq=False)
class SweepFamily:
    """Coefficients, truncated domain and the condition whose constant is tested."""

    name: str
    A: coeff.MatrixCoefficientField
    n: coeff.CoefficientField
    domain: geom.DomainSpec
    condition: ConditionId = ConditionId.A1
    theta: float = 1.0


def transmission_family(a_i: float = 2.0, n_i: float = 0.5, interface_half: float = 1.0,
                        outer_half: float = 2.0) -> SweepFamily:
    """Square penetrable obstacle [-s, s]^2 inside the impedance square [-L, L]^2."""
    region = coeff.interface_region("square", interface_half)
    A, n = coeff.transmission_pair(a_i, n_i, region)
    domain = geom.DomainSpec(geom.square(outer_half), interfaces=(geom.square(interface_half),))
    return SweepFamily(f"transmission(a_i={a_i:g},n_i={n_i:g})", A, n, domain)


def homogeneous_family(outer_half: float = 1.0) -> SweepFamily:
    return SweepFamily("homogeneous", coeff.constant_matrix_field(1.0), coeff.constant_field(1.0),
                       geom.DomainSpec(geom.square(outer_half)))


def gaussian_source(domain: geom.DomainSpec, sigma: float | None = None, center=None) -> tuple:
    """Unit-L^2-mass Gaussian bump, truncated away from the boundary.

    Returns ``(f, center, truncation_radius)``.  Without an obstacle the bump
    sits at the origin; otherwise midway between the obstacle and the outer
    boundary along the positive first axis.  The truncation radius is
    ``min(3 sigma, 0.9 dist(center, boundary))`` so supp f stays away from
    both boundaries.
    """
    sigma = domain.diameter() / 10 if sigma is None else float(sigma)
    if center is None:
        if domain.obstacle is None:
            center = np.zeros(2)
        else:
            x_in = float(domain.obstacle[:, 0].max())
            x_out = float(domain.outer[:, 0].max())
            center = np.array([0.5 * (x_in + x_out), 0.0])
    center = np.asarray(center, dtype=float)
    dist = float(shapely.Point(*center).distance(domain.region().boundary))
    if dist <= 0 or not bool(domain.contains(center[None])[0]):
        raise ConfigurationError("source centre must lie inside the domain")
    cut = min(3 * sigma, 0.9 * dist)
    amp = 1.0 / (sigma * math.sqrt(math.pi))

    def f(x):
        r2 = np.sum((np.asarray(x) - center) ** 2, axis=-1)
        return np.where(r2 < cut * cut, amp * np.exp(-r2 / (2 * sigma * sigma)), 0.0).astype(complex)

    return f, center, cut


def mesh_size(k: float, h0: float, ppw: float) -> float:
    """h = min(h0, 2 pi / (k ppw)): at least ``ppw`` points per wavelength."""
    return min(h0, 2 * math.pi / (k * ppw))


# ---------------------------------------------------------------------------
# bound sweep


@dataclass(frozen=True)
class BoundRow:
    k: float
    h: float
    grad_norm_sq: float
    k2_l2_norm_sq: float
    weighted_lhs: float
    f_norm_sq: float
    constant_used: float
    ratio: float
    passed: bool | None
    n_vertices: int
    residual: float


COLUMNS = ("k", "h", "n_vertices", "grad_norm_sq", "k2_l2_norm_sq", "weighted_lhs", "f_norm_sq",
           "constant_used", "ratio", "pass", "residual")


@dataclass(frozen=True, eq=False)
class BoundCheckReport:
    rows: list
    condition_id: ConditionId
    family: str
    mesh_rule: str
    safety_factor: float
    constant_source: str
    mu: tuple
    report_only: bool = False
    condition_report: str = ""

    @property
    def all_pass(self) -> bool:
        return all(r.passed for r in self.rows)

    def csv_lines(self) -> list:
        lines = [",".join(COLUMNS)]
        for r in self.rows:
            flag = "na" if r.passed is None else str(bool(r.passed)).lower()
            lines.append(",".join([repr(r.k), repr(r.h), str(r.n_vertices), repr(r.grad_norm_sq),
                                   repr(r.k2_l2_norm_sq), repr(r.weighted_lhs), repr(r.f_norm_sq),
                                   repr(r.constant_used), repr(r.ratio), flag, f"{r.residual:.3e}"]))
        return lines

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("\n".join(self.csv_lines()) + "\n")

    def summary(self) -> str:
        head = [f"family: {self.family}", f"condition: {self.condition_id.value} ({self.condition_report})",
                f"constant: {self.constant_source}", f"mesh rule: {self.mesh_rule}",
                f"safety factor: {self.safety_factor:g}" + ("  [report-only, nothing asserted]"
                                                            if self.report_only else "")]
        body = [f"k={r.k:<6g} h={r.h:.4f} ratio={r.ratio:.4e} "
                + ("" if r.passed is None else ("pass" if r.passed else "FAIL")) for r in self.rows]
        return "\n".join(head + body)


def _weights_and_constant(condition: ConditionId, mu: tuple, family: SweepFamily, k: float) -> tuple:
    """(weight on grad^2, weight on k^2 L2^2, constant, description)."""
    gp = geom.geometric_params(family.domain)
    v = family.domain.outer
    t = np.linspace(0.0, 1.0, 33)[:-1]
    bpts = np.concatenate([v[i] + np.outer(t, v[(i + 1) % len(v)] - v[i]) for i in range(len(v))])
    n_gamma = float(np.max(family.n(bpts)))
    common = dict(k=k, d=2, L_I=gp.L_I, a_I=gp.a_I, theta_min=family.theta, theta_max=family.theta,
                  n_max_GammaI=n_gamma)
    if condition is ConditionId.A1:
        c = consts.tedp_constants(consts.TedpCase.A1, mu1=mu[0], mu2=mu[1], **common)
        return mu[0], mu[1], c.C1, "truncated-problem C1 (A and n condition)"
    if condition is ConditionId.A2:
        c = consts.tedp_constants(consts.TedpCase.A2, mu3=mu[0], A_max=family.A.A_max, **common)
        return mu[0], mu[0], c.C2, "truncated-problem C2 (A-only condition, n = 1)"
    L_D, a_D = (gp.L_D, gp.a_D) if family.domain.obstacle is not None else (1.0, 1.0)
    c = consts.tedp_constants(consts.TedpCase.N3, mu4=mu[0], n_max=family.n.n_max, L_D=L_D, a_D=a_D, **common)
    return mu[0], mu[0], c.C3, "truncated-problem C3 (n-only condition, A = I)"


def certify(family: SweepFamily) -> coeff.ConditionReport:
    """Run the coefficient check matching ``family.condition`` over the whole domain."""
    gp = geom.geometric_params(family.domain)
    region = SamplingRegion(radius=gp.L_I)
    cond = family.condition
    if cond is ConditionId.A1:
        rep = coeff.check_condition_A1(family.A, family.n, region)
    elif cond is ConditionId.A2:
        if not (family.n.n_min == family.n.n_max == 1.0):
            raise ConditionNotSatisfied("the A-only condition requires n = 1")
        rep = coeff.check_condition_A2(family.A, region)
    elif cond is ConditionId.N3:
        if not (family.A.A_min == family.A.A_max == 1.0):
            raise ConditionNotSatisfied("the n-only condition requires A = I")
        rep = coeff.check_condition_N3(family.n, region)
    else:
        raise ConfigurationError(f"no stability constant for condition {cond.value}")
    if not (gp.obstacle_star_shaped and gp.outer_star_shaped):
        return coeff.ConditionReport(rep.condition_id, False, rep.mu_values, rep.worst_point,
                                     rep.sample_count, rep.method + "; domain not star-shaped")
    return rep


def _sweep_one(family: SweepFamily, k: float, h0: float, ppw: float, f: Callable) -> tuple:
    h = mesh_size(k, h0, ppw)
    mesh = geom.build_mesh(family.domain, h)
    prob = fem.HelmholtzProblem(k=k, A=family.A, n=family.n, domain=family.domain, theta=family.theta, f=f)
    sol = fem.solve_problem(prob, mesh)
    grad_sq = sol.norms["grad_L2"] ** 2
    l2_sq = sol.norms["L2"] ** 2
    f_sq = fem.function_norm_sq(f, mesh)
    return h, mesh.n_vertices, grad_sq, k * k * l2_sq, f_sq, sol.residual


def k_sweep_bound_check(family: SweepFamily, ks, h0: float = 0.25, ppw: float = 20.0,
                        safety_factor: float = DEFAULT_SAFETY, report_only: bool = False,
                        workers: int | None = None, source: Callable | None = None) -> BoundCheckReport:
    """Solve for each k and compare the weighted norm with the stability constant.

    Raises :class:`ConditionNotSatisfied` if the coefficient condition fails,
    unless ``report_only`` is set (then the sampled margins are still used
    where positive, rows carry no pass/fail, and nothing is asserted).
    """
    ks = [float(k) for k in ks]
    if not ks or any(not (0 < k <= K_MAX) for k in ks):
        raise ConfigurationError(f"every k must lie in (0, {K_MAX:g}]")
    if not (h0 > 0 and ppw > 0 and safety_factor >= 0):
        raise ConfigurationError("h0 and ppw must be positive and safety_factor non-negative")
    rep = certify(family)
    mu = tuple(rep.mu_values)
    if not rep.holds:
        if not report_only:
            raise ConditionNotSatisfied(f"coefficient check failed ({rep}); rerun in report-only mode")
        mu = tuple(m if m > coeff.HOLD_TOL else 1.0 for m in mu)
    f = source if source is not None else gaussian_source(family.domain)[0]
    workers = workers or os.cpu_count() or 1

    def job(k):
        w_grad, w_l2, C, _ = _weights_and_constant(family.condition, mu, family, k)
        h, nv, g2, kl2, f2, res = _sweep_one(family, k, h0, ppw, f)
        lhs = w_grad * g2 + w_l2 * kl2
        ratio = lhs / (C * f2)
        passed = None if report_only else bool(ratio <= 1.0 + safety_factor)
        return BoundRow(k, h, g2, kl2, lhs, f2, C, ratio, passed, nv, res)

    with ThreadPoolExecutor(max_workers=min(workers, len(ks))) as pool:
        rows = list(pool.map(job, ks))  # map keeps the input order
    source_desc = _weights_and_constant(family.condition, mu, family, ks[0])[3]
    return BoundCheckReport(rows, family.condition, family.name, f"h = min({h0:g}, 2pi/(k*{ppw:g}))",
                            safety_factor, source_desc, mu, report_only, str(rep))


# ---------------------------------------------------------------------------
# discrete inf-sup


@dataclass(frozen=True)
class InfSupRow:
    k: float
    discrete_infsup: float
    lower_bound: float | None
    margin: float | None
    iterations: int
    converged: bool


def h1k_gram(mesh: geom.Mesh, k: float, free: np.ndarray | None = None) -> sp.csr_matrix:
    """Gram matrix of |grad v|^2 + k^2 |v|^2 on the P1 space (optionally restricted)."""
    K, M, _ = fem.assemble_matrices(mesh, coeff.constant_matrix_field(1.0), coeff.constant_field(1.0),
                                    lambda p: np.ones(len(p)))
    G = (K + k * k * M).tocsr()
    if free is not None:
        G = G[free][:, free].tocsr()
    return G


def discrete_infsup(S, G, tol: float = 1e-10, max_iter: int = 500) -> tuple:
    """Smallest singular value of S in the G geometry.

    The inverse operator T = S^{-1} G S^{-H} G is self-adjoint and positive in
    the G inner product, so its eigenvalues are real and the largest is
    1/sigma_min^2.  It is computed with Arnoldi (ARPACK) applied to T with
    the factorisation of S reused; if that does not converge the plain
    inverse power iteration is run instead.  Returns
    ``(sigma_min, operator applications, converged)``.
    """
    S = sp.csc_matrix(S)
    G = sp.csc_matrix(G)
    N = S.shape[0]
    lu = fem.factorize(S, 0.0)

    calls = [0]

    def apply_T(u):
        calls[0] += 1
        return lu.solve(G @ lu.solve(G @ u, trans="H"))

    if N > 2:
        op = LinearOperator((N, N), matvec=lambda u: apply_T(np.asarray(u, dtype=complex).ravel()), dtype=complex)
        try:
            lam = eigs(op, k=1, which="LM", tol=tol, maxiter=max_iter, v0=np.ones(N, dtype=complex),
                       return_eigenvectors=False)
            return 1.0 / math.sqrt(float(np.real(lam[0]))), calls[0], True
        except ArpackNoConvergence:
            pass
    u = np.ones(N, dtype=complex)
    u /= math.sqrt(np.real(np.vdot(u, G @ u)))
    lam_old = 0.0
    for it in range(1, max_iter + 1):
        w = apply_T(u)
        lam = float(np.real(np.vdot(u, G @ w)))
        u = w / math.sqrt(np.real(np.vdot(w, G @ w)))
        if it > 1 and abs(lam - lam_old) <= tol * abs(lam):
            return 1.0 / math.sqrt(lam), it, True
        lam_old = lam
    return 1.0 / math.sqrt(lam_old), max_iter, False


def dense_infsup(S, G) -> float:
    """Reference value: sigma_min(L^{-1} S L^{-H}) with G = L L^H."""
    S = np.asarray(S.toarray() if sp.issparse(S) else S, dtype=complex)
    G = np.asarray(G.toarray() if sp.issparse(G) else G, dtype=complex)
    L = cholesky(G, lower=True)
    X = solve_triangular(L, S, lower=True)
    Y = solve_triangular(L, X.conj().T, lower=True).conj().T
    return float(svdvals(Y).min())


def infsup_estimate(system: fem.DiscreteSystem, mu: tuple | None = None) -> InfSupRow:
    """Discrete inf-sup of an assembled system, with the continuous lower bound when ``mu`` is known.

    ``mu = (mu1, mu2)`` are the certified margins of the A-and-n condition;
    the bound uses C1 of the truncated problem for the system's domain.
    """
    mesh, prob = system.mesh, system.problem
    if mesh is None:
        raise ConfigurationError("system must carry its mesh")
    G = h1k_gram(mesh, system.k, system.free)
    val, it, ok = discrete_infsup(system.matrix, G)
    lower = margin = None
    if mu is not None and prob is not None:
        fam = SweepFamily("system", prob.A, prob.n, prob.domain, ConditionId.A1, float(prob.theta_range()[0]))
        C1 = _weights_and_constant(ConditionId.A1, mu, fam, system.k)[2]
        lower = consts.infsup_lower_bound(prob.A.A_min, prob.n.n_min, prob.n.n_max, min(mu), C1, system.k)
        margin = val - lower
    return InfSupRow(system.k, val, lower, margin, it, ok)


@dataclass(frozen=True, eq=False)
class InfSupReport:
    rows: list

    def write_csv(self, path) -> None:
        lines = ["k,discrete_infsup,lower_bound,margin,iterations,converged"]
        for r in self.rows:
            lo = "na" if r.lower_bound is None else repr(r.lower_bound)
            mg = "na" if r.margin is None else repr(r.margin)
            lines.append(f"{r.k!r},{r.discrete_infsup!r},{lo},{mg},{r.iterations},{str(r.converged).lower()}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def infsup_sweep(family: SweepFamily, ks, h0: float = 0.25, ppw: float = 20.0) -> InfSupReport:
    rep = certify(family)
    mu = tuple(rep.mu_values) if rep.holds and family.condition is ConditionId.A1 else None
    rows = []
    for k in ks:
        mesh = geom.build_mesh(family.domain, mesh_size(float(k), h0, ppw))
        prob = fem.HelmholtzProblem(k=float(k), A=family.A, n=family.n, domain=family.domain, theta=family.theta)
        rows.append(infsup_estimate(fem.assemble(prob, mesh), mu))
    return InfSupReport(rows)


# ---------------------------------------------------------------------------
# mollification


def _radial_breaks(f, delta: float) -> list:
    layers = f.subdomain_spec
    out = []
    if layers is not None:
        for reg in layers.regions:
            if isinstance(reg, Disk) and np.allclose(reg.center, 0.0):
                out.append(reg.radius)
            else:
                return []
    return out


def ball_l2_distance(f, g, R: float, delta: float, n_theta: int = 64) -> float:
    """||f - g||_{L^2(B_R)} in 2D by composite Gauss-Legendre in r times the trapezoid rule in angle.

    Radial pieces are refined to width delta/4 within delta of the radii of
    centred disk interfaces of ``f`` and to R/64 elsewhere.
    """
    breaks = [b for b in _radial_breaks(f, delta) if b < R]
    nodes = {0.0, R}
    for b in breaks:
        nodes.update(np.linspace(max(b - delta, 0.0), min(b + delta, R), 9).tolist())
    nodes = np.array(sorted(nodes))
    fine = [nodes[0]]
    for a, b in zip(nodes[:-1], nodes[1:]):
        m = max(1, int(math.ceil((b - a) / (R / 64))))
        fine.extend(np.linspace(a, b, m + 1)[1:].tolist())
    fine = np.array(fine)
    g8, w8 = np.polynomial.legendre.leggauss(8)
    lo, hi = fine[:-1, None], fine[1:, None]
    r = (lo + (hi - lo) * (g8 + 1) / 2).ravel()
    wr = ((hi - lo) * w8 / 2).ravel() * r
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    pts = np.stack([np.outer(r, np.cos(th)), np.outer(r, np.sin(th))], axis=-1)
    diff = np.abs(f(pts) - g(pts)) ** 2
    if diff.ndim > 2:
        diff = diff.reshape(diff.shape[:2] + (-1,)).sum(axis=-1)
    return float(math.sqrt(np.sum(wr[:, None] * diff) * 2 * np.pi / n_theta))


@dataclass(frozen=True)
class MollifyRow:
    delta: float
    l2_distance: float
    mu_radial: float
    radial_monotone_margin: float
    preserved: bool


@dataclass(frozen=True, eq=False)
class MollifyReport:
    rows: list
    slope: float
    n_min: float

    def write_csv(self, path) -> None:
        lines = ["delta,l2_distance,mu_radial,radial_monotone_margin,preserved"]
        for r in self.rows:
            lines.append(f"{r.delta!r},{r.l2_distance!r},{r.mu_radial!r},{r.radial_monotone_margin!r},"
                         f"{str(r.preserved).lower()}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def mollification_study(f: coeff.CoefficientField, deltas, R: float | None = None,
                        region: SamplingRegion | None = None) -> MollifyReport:
    """Mollify ``f`` at each width; record L^2 distance on B_R and monotonicity margins.

    ``mu_radial`` is inf (n_delta + x . grad n_delta) over the sampling
    region; for a radially nondecreasing field it must stay >= n_min.
    """
    if f.dim != 2:
        raise ConfigurationError("the mollification study is two-dimensional")
    deltas = [float(d) for d in deltas]
    if not deltas or any(d <= 0 for d in deltas):
        raise ConfigurationError("mollification widths must be positive")
    sup = f.support_radius if math.isfinite(f.support_radius) else 1.0
    R = R if R is not None else sup + 2 * max(deltas)
    region = region or SamplingRegion(radius=R, density=48, max_axis_points=129, sobol_log2=9)
    pts = region.points()
    rows = []
    for d in deltas:
        g = coeff.mollify(f, d)
        dist = ball_l2_distance(f, g, R, d)
        mu, _, _ = coeff._scalar_margin(g, 1.0, pts)
        mono = coeff.check_radial_monotone(g, coeff.Direction.NONDECREASING, region)
        rows.append(MollifyRow(d, dist, mu, mono.mu_values[0], bool(mu >= f.n_min - 1e-9)))
    pos = [(r.delta, r.l2_distance) for r in rows if r.l2_distance > 0]
    slope = fem.loglog_slope(*zip(*pos)) if len(pos) >= 2 else float("nan")
    return MollifyReport(rows, slope, f.n_min)
