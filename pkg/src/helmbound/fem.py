"""P1 finite elements for the truncated Helmholtz problem.

Find u with u = g_D on Gamma_D such that for all test functions v

    int A grad u . conj(grad v) - k^2 n u conj(v)  - i k int_{Gamma_I} theta u conj(v)
        = int f conj(v) + int_{Gamma_I} g_I conj(v),

i.e. the weak form of  div(A grad u) + k^2 n u = -f  with the impedance
condition  du/dnu - i k theta u = g_I  on the outer boundary.  With a real
nodal basis the system matrix is complex symmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .coeff import ConfigurationError, MatrixCoefficientField, CoefficientField
from .geom import GAMMA_D, GAMMA_I, DomainSpec, Mesh, build_mesh, refine_uniform

# three interior points, degree-2 exact
TRI_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
TRI_W = np.full(3, 1 / 3)

# seven-point degree-5 rule for error and data norms
_a1, _b1 = 0.059715871789770, 0.470142064105115
_a2, _b2 = 0.797426985353087, 0.101286507323456
HI_BARY = np.array([[1 / 3, 1 / 3, 1 / 3],
                    [_a1, _b1, _b1], [_b1, _a1, _b1], [_b1, _b1, _a1],
                    [_a2, _b2, _b2], [_b2, _a2, _b2], [_b2, _b2, _a2]])
HI_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)

GAUSS2 = np.array([0.5 - 0.5 / math.sqrt(3), 0.5 + 0.5 / math.sqrt(3)])


class SolverError(RuntimeError):
    """Factorisation failed (numerically singular system)."""

    def __init__(self, message: str, k: float):
        super().__init__(f"{message} (k = {k:g})")
        self.k = k


@dataclass(frozen=True, eq=False)
class HelmholtzProblem:
    """Truncated problem data.

    ``theta`` is a constant or a callable on boundary points; ``f`` a callable
    on points returning complex values; ``g_D`` a callable on points;
    ``g_I`` a callable ``(points, outward_normals) -> values``.
    """

    k: float
    A: MatrixCoefficientField
    n: CoefficientField
    domain: DomainSpec
    theta: float | Callable = 1.0
    theta_bounds: tuple | None = None
    f: Callable | None = None
    g_D: Callable | None = None
    g_I: Callable | None = None

    def __post_init__(self):
        if not (self.k > 0 and math.isfinite(self.k)):
            raise ConfigurationError(f"k must be positive, got {self.k}")
        tmin, tmax = self.theta_range()
        if not (0 < tmin <= tmax):
            raise ConfigurationError(f"impedance weight needs 0 < theta_min <= theta_max, got {tmin}, {tmax}")
        # the matrix coefficient must equal I on (a neighbourhood of) Gamma_I
        v = self.domain.outer
        t = np.linspace(0.0, 1.0, 9)
        pts = np.concatenate([v[i] + np.outer(t, v[(i + 1) % len(v)] - v[i]) for i in range(len(v))])
        Av = self.A(pts)
        if np.max(np.abs(Av - np.eye(2))) > 1e-14:
            raise ConfigurationError("A must equal the identity near the impedance boundary")

    def theta_range(self) -> tuple:
        if self.theta_bounds is not None:
            return tuple(float(x) for x in self.theta_bounds)
        if callable(self.theta):
            raise ConfigurationError("callable theta needs explicit theta_bounds")
        return float(self.theta), float(self.theta)

    def theta_at(self, pts: np.ndarray) -> np.ndarray:
        if callable(self.theta):
            return np.asarray(self.theta(pts), dtype=float)
        return np.full(len(pts), float(self.theta))


@dataclass(frozen=True, eq=False)
class DiscreteSystem:
    """Reduced linear system on the free (non-Dirichlet) nodes.

    ``matrix = stiffness - k^2 mass - i k robin`` restricted to ``free``.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    dirichlet_nodes: np.ndarray
    dirichlet_values: np.ndarray
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    robin: sp.csr_matrix
    k: float
    h_max: float
    mesh: Mesh | None = None
    problem: HelmholtzProblem | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.free) + len(self.dirichlet_nodes)


@dataclass(frozen=True, eq=False)
class SolutionField:
    nodal_values: np.ndarray
    norms: dict = field(default_factory=dict)
    residual: float = 0.0
    k: float = 0.0


# ---------------------------------------------------------------------------
# geometry helpers


def _element_geometry(mesh: Mesh) -> tuple:
    """Signed areas and barycentric gradients (M, 3, 2)."""
    p = mesh.vertices[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    area = 0.5 * det
    grads = np.empty(p.shape)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[:, i, 0] = (y[:, j] - y[:, k]) / det
        grads[:, i, 1] = (x[:, k] - x[:, j]) / det
    return area, grads


def quadrature_points(mesh: Mesh, bary: np.ndarray = TRI_BARY) -> np.ndarray:
    p = mesh.vertices[mesh.triangles]
    return np.einsum("qi,mid->mqd", bary, p)


def _scatter(mesh: Mesh, local: np.ndarray, n: int) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def _edge_data(mesh: Mesh, tag: str) -> tuple:
    e = mesh.tagged(tag)
    a, b = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
    d = b - a
    L = np.linalg.norm(d, axis=1)
    nu = np.column_stack([d[:, 1], -d[:, 0]]) / L[:, None]  # outward for CCW-oriented boundary edges
    return e, a, b, L, nu


# ---------------------------------------------------------------------------
# assembly


def assemble_matrices(mesh: Mesh, A: MatrixCoefficientField, n: CoefficientField, theta) -> tuple:
    """Full stiffness, mass (weighted by n) and Gamma_I boundary mass (weighted by theta)."""
    N = len(mesh.vertices)
    area, grads = _element_geometry(mesh)
    if np.any(area <= 0):
        raise ConfigurationError("mesh has non-positive triangle areas")
    xq = quadrature_points(mesh)
    Aq = A(xq)  # (M, 3, 2, 2)
    Abar = np.einsum("q,mqij->mij", TRI_W, Aq)
    Kloc = area[:, None, None] * np.einsum("mid,mde,mje->mij", grads, Abar, grads)
    nq = n(xq)  # (M, 3)
    Mloc = area[:, None, None] * np.einsum("q,mq,qi,qj->mij", TRI_W, nq, TRI_BARY, TRI_BARY)
    K = _scatter(mesh, Kloc, N)
    M = _scatter(mesh, Mloc, N)

    e, a, b, L, _ = _edge_data(mesh, GAMMA_I)
    rows, cols, vals = [], [], []
    if len(e):
        for s in GAUSS2:
            pts = a + s * (b - a)
            th = theta(pts) * L * 0.5
            phi = (1 - s, s)
            for i in range(2):
                for j in range(2):
                    rows.append(e[:, i])
                    cols.append(e[:, j])
                    vals.append(th * phi[i] * phi[j])
        R = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    else:
        R = sp.csr_matrix((N, N))
    return K, M, R


def load_vector(mesh: Mesh, f: Callable | None, g_I: Callable | None) -> np.ndarray:
    N = len(mesh.vertices)
    F = np.zeros(N, dtype=complex)
    if f is not None:
        area, _ = _element_geometry(mesh)
        xq = quadrature_points(mesh)
        fq = np.asarray(f(xq), dtype=complex)
        loc = area[:, None] * np.einsum("q,mq,qi->mi", TRI_W, fq, TRI_BARY)
        np.add.at(F, mesh.triangles.ravel(), loc.ravel())
    if g_I is not None:
        e, a, b, L, nu = _edge_data(mesh, GAMMA_I)
        for s in GAUSS2:
            pts = a + s * (b - a)
            g = np.asarray(g_I(pts, nu), dtype=complex) * L * 0.5
            np.add.at(F, e[:, 0], g * (1 - s))
            np.add.at(F, e[:, 1], g * s)
    return F


def _clean(m) -> sp.csr_matrix:
    m = sp.csr_matrix(m)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return m


def assemble(problem: HelmholtzProblem, mesh: Mesh) -> DiscreteSystem:
    """Assemble the reduced complex-symmetric system on the free nodes."""
    if len(mesh.edge_tags) != len(mesh.boundary_edges) or any(t not in (GAMMA_D, GAMMA_I) for t in mesh.edge_tags):
        raise ConfigurationError("every boundary edge must be tagged GammaD or GammaI")
    if problem.domain.obstacle is None and len(mesh.tagged(GAMMA_D)):
        raise ConfigurationError("mesh has GammaD edges but the domain has no obstacle")
    K, M, R = assemble_matrices(mesh, problem.A, problem.n, problem.theta_at)
    F = load_vector(mesh, problem.f, problem.g_I)
    k = float(problem.k)
    S = (K - k * k * M - 1j * k * R).tocsr()
    N = len(mesh.vertices)
    dn = mesh.boundary_nodes(GAMMA_D)
    if len(dn) and problem.g_D is not None:
        gd = np.asarray(problem.g_D(mesh.vertices[dn]), dtype=complex)
    else:
        gd = np.zeros(len(dn), dtype=complex)
    mask = np.ones(N, dtype=bool)
    mask[dn] = False
    free = np.nonzero(mask)[0]
    rhs = F[free] - (S[free][:, dn] @ gd if len(dn) else 0.0)
    sub = lambda m: _clean(m[free][:, free])  # noqa: E731
    return DiscreteSystem(
        matrix=sub(S), rhs=np.asarray(rhs, dtype=complex), free=free, dirichlet_nodes=dn, dirichlet_values=gd,
        stiffness=sub(K), mass=sub(M), robin=sub(R), k=k, h_max=mesh.h_max, mesh=mesh, problem=problem)


# ---------------------------------------------------------------------------
# solution


def factorize(matrix: sp.spmatrix, k: float):
    """Sparse LU with COLAMD column ordering and partial pivoting."""
    try:
        lu = splu(sp.csc_matrix(matrix, dtype=complex), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SolverError(f"factorisation failed: {exc}", k) from None
    piv = np.abs(lu.U.diagonal())
    if piv.size and piv.min() < 1e-300:
        raise SolverError(f"pivot {piv.min():.3e} below 1e-300; system numerically singular "
                          "(check theta > 0: without impedance damping discrete resonances occur)", k)
    return lu


def solve_linear(matrix, rhs, k: float = 0.0) -> tuple:
    """Solve ``matrix x = rhs``; returns ``(x, relative residual)``."""
    lu = factorize(matrix, k)
    x = lu.solve(np.asarray(rhs, dtype=complex))
    nb = np.linalg.norm(rhs)
    res = np.linalg.norm(matrix @ x - rhs)
    return x, float(res / nb) if nb > 0 else float(res)


def solve(system: DiscreteSystem) -> SolutionField:
    """Direct solve; nodal values include the Dirichlet data, norms attached."""
    if np.linalg.norm(system.rhs) == 0:
        x, res = np.zeros(len(system.free), dtype=complex), 0.0
        factorize(system.matrix, system.k)  # still diagnose singular systems
    else:
        x, res = solve_linear(system.matrix, system.rhs, system.k)
    u = np.zeros(system.n_nodes, dtype=complex)
    u[system.free] = x
    u[system.dirichlet_nodes] = system.dirichlet_values
    norms = {}
    if system.mesh is not None:
        A = system.problem.A if system.problem is not None else None
        norms = compute_norms(u, system.mesh, system.k, A)
    return SolutionField(u, norms, res, system.k)


def solve_problem(problem: HelmholtzProblem, mesh: Mesh) -> SolutionField:
    return solve(assemble(problem, mesh))


def _edge_trace_sq(u: np.ndarray, mesh: Mesh, tag: str) -> float:
    e, a, b, L, _ = _edge_data(mesh, tag)
    if not len(e):
        return 0.0
    ua, ub = u[e[:, 0]], u[e[:, 1]]
    return float(np.sum(L / 3 * (np.abs(ua) ** 2 + np.abs(ub) ** 2 + np.real(ua * np.conj(ub)))))


def compute_norms(u, mesh: Mesh, k: float, A: MatrixCoefficientField | None = None) -> dict:
    """Exact P1 norms of a nodal field (and its boundary traces)."""
    u = np.asarray(u, dtype=complex)
    area, grads = _element_geometry(mesh)
    ut = u[mesh.triangles]
    gu = np.einsum("mi,mid->md", ut, grads)
    grad_sq = float(np.sum(area * np.sum(np.abs(gu) ** 2, axis=1)))
    cross = np.real(ut[:, 0] * np.conj(ut[:, 1]) + ut[:, 1] * np.conj(ut[:, 2]) + ut[:, 2] * np.conj(ut[:, 0]))
    l2_sq = float(np.sum(area / 6 * (np.sum(np.abs(ut) ** 2, axis=1) + cross)))
    norms = {
        "grad_L2": math.sqrt(grad_sq),
        "L2": math.sqrt(max(l2_sq, 0.0)),
        "H1k": math.sqrt(grad_sq + k * k * max(l2_sq, 0.0)),
        "trace_L2_GammaI": math.sqrt(_edge_trace_sq(u, mesh, GAMMA_I)),
        "trace_L2_GammaD": math.sqrt(_edge_trace_sq(u, mesh, GAMMA_D)),
        "conormal_L2_GammaD": 0.0,
    }
    e, a, b, L, nu = _edge_data(mesh, GAMMA_D)
    if len(e):
        owner = {}
        for m, tri in enumerate(mesh.triangles.tolist()):
            for p, q in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                owner[(p, q)] = m
        tri_idx = np.array([owner[(p, q)] for p, q in e.tolist()])
        mid = 0.5 * (a + b)
        Am = A(mid) if A is not None else np.broadcast_to(np.eye(2), (len(e), 2, 2))
        flux = np.einsum("ed,edf,ef->e", nu, Am, gu[tri_idx])
        norms["conormal_L2_GammaD"] = math.sqrt(float(np.sum(L * np.abs(flux) ** 2)))
    return norms


def write_solution_csv(solution: SolutionField, mesh: Mesh, path) -> None:
    """CSV with columns vertex_index, x, y, re_u, im_u (floats via repr)."""
    lines = ["vertex_index,x,y,re_u,im_u"]
    for i, ((x, y), val) in enumerate(zip(mesh.vertices.tolist(), solution.nodal_values.tolist())):
        lines.append(f"{i},{x!r},{y!r},{val.real!r},{val.imag!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# errors against analytic functions


def function_norm_sq(fun: Callable, mesh: Mesh) -> float:
    """int |fun|^2 over the mesh with the degree-5 rule."""
    area, _ = _element_geometry(mesh)
    xq = quadrature_points(mesh, HI_BARY)
    return float(np.sum(area * np.einsum("q,mq->m", HI_W, np.abs(fun(xq)) ** 2)))


def error_norms(u_h: np.ndarray, mesh: Mesh, u_exact: Callable, grad_exact: Callable) -> tuple:
    """(L2 error, H1-seminorm error) of a P1 field against an analytic function."""
    area, grads = _element_geometry(mesh)
    xq = quadrature_points(mesh, HI_BARY)
    ut = np.asarray(u_h, dtype=complex)[mesh.triangles]
    uh_q = np.einsum("qi,mi->mq", HI_BARY, ut)
    guh = np.einsum("mi,mid->md", ut, grads)
    e0 = np.abs(u_exact(xq) - uh_q) ** 2
    e1 = np.sum(np.abs(grad_exact(xq) - guh[:, None, :]) ** 2, axis=-1)
    return (math.sqrt(float(np.sum(area * (e0 @ HI_W)))), math.sqrt(float(np.sum(area * (e1 @ HI_W)))))


@dataclass(frozen=True)
class ConvergenceReport:
    h: tuple
    l2_errors: tuple
    h1_errors: tuple
    l2_rate: float
    h1_rate: float
    residuals: tuple


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x (nan for fewer than two points)."""
    if len(x) < 2:
        return float("nan")
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def plane_wave(k: float, direction) -> tuple:
    """(u, grad u) callables for exp(i k x.d)."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)

    def u(x):
        return np.exp(1j * k * (x @ d))

    def grad(x):
        return 1j * k * u(x)[..., None] * d

    return u, grad


def manufactured_solution_test(k: float, domain: DomainSpec, h0: float = 0.1, levels: int = 3,
                               direction=(1.0, 0.0), meshes: list | None = None) -> ConvergenceReport:
    """Plane-wave convergence study with A = I, n = 1, theta = 1, f = 0.

    The impedance data g_I = du/dnu - i k u and Dirichlet data are taken from
    the exact solution; the meshes are the ``h0`` mesh and its uniform
    refinements unless ``meshes`` is given.
    """
    from .coeff import constant_field, constant_matrix_field

    u, grad = plane_wave(k, direction)

    def g_I(pts, nu):
        return np.sum(grad(pts) * nu, axis=-1) - 1j * k * u(pts)

    problem = HelmholtzProblem(k=k, A=constant_matrix_field(1.0), n=constant_field(1.0), domain=domain,
                               theta=1.0, f=None, g_D=u, g_I=g_I)
    if meshes is None:
        meshes = [build_mesh(domain, h0)]
        for _ in range(levels - 1):
            meshes.append(refine_uniform(meshes[-1]))
    hs, e0s, e1s, res = [], [], [], []
    for mesh in meshes:
        sol = solve(assemble(problem, mesh))
        e0, e1 = error_norms(sol.nodal_values, mesh, u, grad)
        hs.append(mesh.h_max)
        e0s.append(e0)
        e1s.append(e1)
        res.append(sol.residual)
    return ConvergenceReport(tuple(hs), tuple(e0s), tuple(e1s), loglog_slope(hs, e0s), loglog_slope(hs, e1s),
                             tuple(res))
