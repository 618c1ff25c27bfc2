"""Pointwise and integrated Morawetz-type identities.

For  L v = div(A grad v) + k^2 n v  and the multiplier

    M v = x . grad v - i k beta v + alpha v

the identity checked here reads

    2 Re(conj(Mv) Lv) = div Q - (2 alpha - d + 2) <A grad v, grad v> + <(x.grad A) grad v, grad v>
                        - ((d - 2 alpha) n + x.grad n) k^2 |v|^2
                        - 2 Re(i k conj(v) <A grad v, grad beta>) - 2 Re(conj(v) <A grad v, grad alpha>),

    Q = 2 Re(conj(Mv) A grad v) + x (k^2 n |v|^2 - <A grad v, grad v>),

with <a, b> = sum a_j conj(b_j).  It splits into three separately valid
identities, one per term of the multiplier (x.grad, -i k beta, alpha).

Also provided: the tangential operator T on a boundary with conormal
splitting, the integrated identity over polygonal domains, and the
Morawetz-Ludwig identity (A = I, n = 1, beta = r, constant alpha).
Arrays of points ``(N, d)`` are processed in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coeff import (ConfigurationError, MatrixCoefficientField, CoefficientField, Regularity,
                    UnsupportedRegularity)
from .fem import HI_BARY, HI_W, _element_geometry, quadrature_points
from .geom import DomainSpec, build_mesh, refine_uniform, GAMMA_D, GAMMA_I


class IdentityError(ArithmeticError):
    """Non-finite intermediate value in an identity evaluation."""


# ---------------------------------------------------------------------------
# inputs


@dataclass(frozen=True, eq=False)
class TestField:
    """Complex C^2 function with analytic gradient and Hessian on ``(N, d)`` points."""

    __test__ = False  # not a pytest class

    value: Callable
    grad: Callable
    hess: Callable
    description: str = ""
    dim: int = 2
    check: bool = True

    def __post_init__(self):
        if self.check:
            self.self_check()

    def self_check(self, h: float = 1e-4, tol: float = 1e-5) -> float:
        """Compare derivatives with central differences at a few fixed points."""
        d = self.dim
        x = np.linspace(-0.7, 0.8, 4 * d).reshape(4, d) + 0.05 * np.arange(d)
        worst = 0.0
        g, H = self.grad(x), self.hess(x)
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            fd_g = (self.value(x + e) - self.value(x - e)) / (2 * h)
            fd_H = (self.grad(x + e) - self.grad(x - e)) / (2 * h)
            scale = 1.0 + np.abs(g).max() + np.abs(H).max()
            worst = max(worst, float(np.abs(fd_g - g[:, i]).max() / scale),
                        float(np.abs(fd_H - H[:, i, :]).max() / scale))
        if worst > tol:
            raise ConfigurationError(f"test field {self.description!r}: derivatives disagree with "
                                     f"finite differences ({worst:.2e})")
        return worst


@dataclass(frozen=True, eq=False)
class ScalarFunction:
    """Real function with gradient on ``(N, d)`` points."""

    value: Callable
    grad: Callable

    @staticmethod
    def constant(c: float) -> "ScalarFunction":
        c = float(c)
        return ScalarFunction(lambda x: np.full(x.shape[:-1], c), lambda x: np.zeros(x.shape))


def radius_function() -> ScalarFunction:
    """beta = r with gradient x/r (undefined at the origin)."""
    return ScalarFunction(lambda x: np.linalg.norm(x, axis=-1),
                          lambda x: x / np.linalg.norm(x, axis=-1, keepdims=True))


@dataclass(frozen=True, eq=False)
class MultiplierSpec:
    alpha: ScalarFunction | float
    beta: ScalarFunction | float
    k: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            val = getattr(self, name)
            if not isinstance(val, ScalarFunction):
                if isinstance(val, complex):
                    raise ConfigurationError(f"{name} must be real")
                object.__setattr__(self, name, ScalarFunction.constant(val))
        if not self.k > 0:
            raise ConfigurationError("k must be positive")


# ---------------------------------------------------------------------------
# ingredient evaluation


def _coefficient_arrays(A, n, x: np.ndarray) -> tuple:
    if A is None:
        d = x.shape[-1]
        Av = np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d))
        dA = np.zeros(x.shape[:-1] + (d, d, d))
    else:
        Av, dA = A(x), A.gradient(x)
    if n is None:
        nv, dn = np.ones(x.shape[:-1]), np.zeros(x.shape)
    else:
        nv, dn = n(x), n.gradient(x)
    return Av, dA, nv, dn


class _Point:
    """All pointwise quantities needed by the identities at points x."""

    def __init__(self, v: TestField, A, n, spec: MultiplierSpec, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        self.x = x
        self.d = x.shape[-1]
        self.k = float(spec.k)
        self.v = np.asarray(v.value(x), dtype=complex)
        self.g = np.asarray(v.grad(x), dtype=complex)
        self.H = np.asarray(v.hess(x), dtype=complex)
        self.A, self.dA, self.n, self.dn = _coefficient_arrays(A, n, x)
        self.al, self.gal = spec.alpha.value(x), spec.alpha.grad(x)
        self.be, self.gbe = spec.beta.value(x), spec.beta.grad(x)
        self.Ag = np.einsum("...jl,...l->...j", self.A, self.g)
        self.aform = np.real(np.sum(self.Ag * np.conj(self.g), axis=-1))  # <A grad v, grad v>
        self.xdA = np.einsum("...i,...ijl->...jl", x, self.dA)
        self.xg = np.sum(x * self.g, axis=-1)
        # div(A grad v) = d_i A_ij d_j v + A_ij d_ij v
        self.divAg = (np.einsum("...iij,...j->...", self.dA, self.g)
                      + np.einsum("...ij,...ij->...", self.A, self.H))
        self.Lv = self.divAg + self.k ** 2 * self.n * self.v
        self.Mparts = (self.xg, -1j * self.k * self.be * self.v, self.al * self.v)
        self.Mv = sum(self.Mparts)

    # gradients of the multiplier pieces
    def grad_parts(self) -> tuple:
        x = self.x
        gA = self.g + np.einsum("...ij,...j->...i", self.H, x)
        gB = -1j * self.k * (self.v[..., None] * self.gbe + self.be[..., None] * self.g)
        gC = self.v[..., None] * self.gal + self.al[..., None] * self.g
        return gA, gB, gC

    def grad_aform(self) -> np.ndarray:
        """d_i <A grad v, grad v>."""
        t1 = np.real(np.einsum("...ijl,...l,...j->...i", self.dA, self.g, np.conj(self.g)))
        t2 = 2 * np.real(np.einsum("...il,...l->...i", np.einsum("...ij,...jl->...il",
                                                                   self.H, self.A), np.conj(self.g)))
        return t1 + t2

    def grad_nv2(self) -> np.ndarray:
        """grad (n |v|^2)."""
        return np.abs(self.v)[..., None] ** 2 * self.dn + 2 * self.n[..., None] * np.real(
            np.conj(self.v)[..., None] * self.g)


def _check(arr, what):
    if not np.all(np.isfinite(arr)):
        raise IdentityError(f"non-finite value in {what}")
    return arr


# ---------------------------------------------------------------------------
# the identity and its parts


def multiplier_M(v: TestField, spec: MultiplierSpec, x) -> np.ndarray:
    """M v = x . grad v - i k beta v + alpha v."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return (np.sum(x * v.grad(x), axis=-1) - 1j * spec.k * spec.beta.value(x) * v.value(x)
            + spec.alpha.value(x) * v.value(x))


PARTS = ("A", "B", "C")


def flux(v, A, n, spec, x, part: str | None = None) -> np.ndarray:
    """Flux Q (or the flux of one part of the split identity)."""
    p = _Point(v, A, n, spec, x)
    return _flux(p, part)


def _flux(p: _Point, part: str | None) -> np.ndarray:
    wA, wB, wC = p.Mparts
    if part is None:
        w = p.Mv
    else:
        w = {"A": wA, "B": wB, "C": wC}[part]
    Q = 2 * np.real(np.conj(w)[..., None] * p.Ag)
    if part in (None, "A"):
        Q = Q + p.x * (p.k ** 2 * p.n * np.abs(p.v) ** 2 - p.aform)[..., None]
    return Q


def _div_flux_analytic(p: _Point, part: str | None) -> np.ndarray:
    gparts = p.grad_parts()
    sel = range(3) if part is None else [PARTS.index(part)]
    out = np.zeros(p.x.shape[:-1])
    for i in sel:
        w, gw = p.Mparts[i], gparts[i]
        out = out + 2 * np.real(np.sum(np.conj(gw) * p.Ag, axis=-1) + np.conj(w) * p.divAg)
    if part in (None, "A"):
        s = p.k ** 2 * p.n * np.abs(p.v) ** 2 - p.aform
        grad_s = p.k ** 2 * p.grad_nv2() - p.grad_aform()
        out = out + p.d * s + np.sum(p.x * grad_s, axis=-1)
    return out


def _div_flux_fd(v, A, n, spec, x, h: float, part: str | None) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[-1]
    out = np.zeros(x.shape[:-1])
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out = out + (_flux(_Point(v, A, n, spec, x + e), part)[..., i]
                     - _flux(_Point(v, A, n, spec, x - e), part)[..., i]) / (2 * h)
    return out


def _rest(p: _Point, part: str | None) -> np.ndarray:
    """Non-divergence terms on the right-hand side."""
    k2v2 = p.k ** 2 * np.abs(p.v) ** 2
    xdA_form = np.real(np.einsum("...jl,...l,...j->...", p.xdA, p.g, np.conj(p.g)))
    xdn = np.sum(p.x * p.dn, axis=-1)
    terms = {
        "A": (p.d - 2) * p.aform + xdA_form - (p.d * p.n + xdn) * k2v2,
        "B": -2 * np.real(1j * p.k * np.conj(p.v) * np.sum(p.Ag * p.gbe, axis=-1)),
        "C": 2 * p.al * p.n * k2v2 - 2 * p.al * p.aform
        - 2 * np.real(np.conj(p.v) * np.sum(p.Ag * p.gal, axis=-1)),
    }
    if part is not None:
        return terms[part]
    return terms["A"] + terms["B"] + terms["C"]


def rest_terms_combined(v, A, n, spec, x) -> np.ndarray:
    """The non-divergence terms written in their combined (unsplit) form."""
    p = _Point(v, A, n, spec, x)
    k2v2 = p.k ** 2 * np.abs(p.v) ** 2
    xdA_form = np.real(np.einsum("...jl,...l,...j->...", p.xdA, p.g, np.conj(p.g)))
    xdn = np.sum(p.x * p.dn, axis=-1)
    return (-(2 * p.al - p.d + 2) * p.aform + xdA_form - ((p.d - 2 * p.al) * p.n + xdn) * k2v2
            - 2 * np.real(1j * p.k * np.conj(p.v) * np.sum(p.Ag * p.gbe, axis=-1))
            - 2 * np.real(np.conj(p.v) * np.sum(p.Ag * p.gal, axis=-1)))


def _lhs(p: _Point, part: str | None) -> np.ndarray:
    w = p.Mv if part is None else p.Mparts[PARTS.index(part)]
    return 2 * np.real(np.conj(w) * p.Lv)


@dataclass(frozen=True)
class IdentityTerms:
    lhs: np.ndarray
    div_flux: np.ndarray
    rest: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        """|LHS - RHS| scaled by max(1, magnitude of the largest term)."""
        scale = np.maximum.reduce([np.ones_like(self.lhs), np.abs(self.lhs), np.abs(self.div_flux),
                                   np.abs(self.rest)])
        return np.abs(self.lhs - self.div_flux - self.rest) / scale


def identity_terms(v, A, n, spec, x, h: float | None = None, part: str | None = None) -> IdentityTerms:
    """LHS, div Q and the remaining terms; div Q analytic if ``h`` is None, else by central differences."""
    if part is not None and part not in PARTS:
        raise ValueError(f"part must be one of {PARTS}")
    p = _Point(v, A, n, spec, x)
    div = _div_flux_analytic(p, part) if h is None else _div_flux_fd(v, A, n, spec, x, h, part)
    return IdentityTerms(_check(_lhs(p, part), "lhs"), _check(div, "div Q"), _check(_rest(p, part), "rest"))


def pointwise_identity_residual(v, A, n, spec, x, h: float | None = None, part: str | None = None) -> np.ndarray:
    """Scaled residual of the identity at each point (see :class:`IdentityTerms`)."""
    return identity_terms(v, A, n, spec, x, h, part).residual


def additivity_defect(v, A, n, spec, x) -> float:
    """max difference between the parts' sum and the full identity (lhs, flux, rest)."""
    p = _Point(v, A, n, spec, x)
    scale = 1.0 + np.abs(_lhs(p, None)).max() + np.abs(_rest(p, None)).max()
    d_lhs = sum(_lhs(p, q) for q in PARTS) - _lhs(p, None)
    d_flux = sum(_flux(p, q) for q in PARTS) - _flux(p, None)
    d_rest = sum(_rest(p, q) for q in PARTS) - rest_terms_combined(v, A, n, spec, x)
    return float(max(np.abs(d_lhs).max(), np.abs(d_flux).max(), np.abs(d_rest).max()) / scale)


# ---------------------------------------------------------------------------
# Morawetz-Ludwig identity


@dataclass(frozen=True)
class LudwigTerms:
    residual: np.ndarray
    P: np.ndarray


def ml_identity(v: TestField, alpha: float, k: float, x, h: float | None = None) -> LudwigTerms:
    """2Re(conj(M v) Lv) = div Q - P(v) with A = I, n = 1, beta = r, constant alpha, where

    P(v) = (|grad v|^2 - |v_r|^2) + |v_r - i k v|^2 - (2 alpha - (d-1)) (k^2|v|^2 - |grad v|^2).

    P >= 0 when 2 alpha = d - 1.
    """
    spec = MultiplierSpec(float(alpha), radius_function(), k)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p = _Point(v, None, None, spec, x)
    d = x.shape[-1]
    r = np.linalg.norm(x, axis=-1)
    vr = np.sum(x * p.g, axis=-1) / r
    g2 = np.sum(np.abs(p.g) ** 2, axis=-1)
    P = (g2 - np.abs(vr) ** 2) + np.abs(vr - 1j * k * p.v) ** 2 - (2 * alpha - (d - 1)) * (
        k * k * np.abs(p.v) ** 2 - g2)
    div = _div_flux_analytic(p, None) if h is None else _div_flux_fd(v, None, None, spec, x, h, None)
    lhs = _lhs(p, None)
    scale = np.maximum.reduce([np.ones_like(lhs), np.abs(lhs), np.abs(div), np.abs(P)])
    return LudwigTerms(np.abs(lhs - (div - P)) / scale, P)


def ml_identity_residual(v: TestField, alpha: float, k: float, x, h: float | None = None) -> np.ndarray:
    return ml_identity(v, alpha, k, x, h).residual


# ---------------------------------------------------------------------------
# boundary decomposition


def tangential_T(grad_u: np.ndarray, A: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """T = A (grad u - (nu . A grad u / nu^T A nu) nu); tangential: T . nu = 0."""
    grad_u = np.asarray(grad_u)
    A = np.asarray(A, dtype=float)
    nu = np.asarray(nu, dtype=float)
    nt = np.einsum("...i,...ij,...j->...", nu, A, nu)
    if np.any(nt <= 0) or np.any(np.linalg.det(A) <= 0):
        raise ConfigurationError("A must be positive definite for the conormal splitting")
    Ag = np.einsum("...ij,...j->...i", A, grad_u)
    dnu_A = np.sum(nu * Ag, axis=-1)
    inner = grad_u - (dnu_A / nt)[..., None] * nu
    return np.einsum("...ij,...j->...i", A, inner)


def conormal_split(grad_u, A, nu) -> tuple:
    """Both sides of <A grad u, grad u> = <A^{-1} T, T> + |du/dnu_A|^2 / (nu^T A nu)."""
    grad_u = np.asarray(grad_u)
    T = tangential_T(grad_u, A, nu)
    nt = np.einsum("...i,...ij,...j->...", nu, A, nu)
    dnu_A = np.einsum("...i,...ij,...j->...", nu, A, grad_u)
    AinvT = np.linalg.solve(A, T[..., None])[..., 0]
    left = np.real(np.einsum("...ij,...j,...i->...", A, grad_u, np.conj(grad_u)))
    right = np.real(np.sum(AinvT * np.conj(T), axis=-1)) + np.abs(dnu_A) ** 2 / nt
    return left, right


def boundary_integrand(v, A, n, spec, x, nu) -> np.ndarray:
    """Boundary density of the integrated identity in tangential/conormal form:

    (x.nu)(|dv/dnu_A|^2/nu~ - <A^{-1}T, T> + k^2 n |v|^2) + 2 Re((x . conj(A^{-1} T) + i k beta conj(v)
    + alpha conj(v)) dv/dnu_A).
    """
    p = _Point(v, A, n, spec, x)
    nu = np.asarray(nu, dtype=float)
    T = tangential_T(p.g, p.A, nu)
    AinvT = np.linalg.solve(p.A, T[..., None])[..., 0]
    nt = np.einsum("...i,...ij,...j->...", nu, p.A, nu)
    dnu_A = np.sum(nu * p.Ag, axis=-1)
    xnu = np.sum(p.x * nu, axis=-1)
    term1 = xnu * (np.abs(dnu_A) ** 2 / nt - np.real(np.sum(AinvT * np.conj(T), axis=-1))
                   + p.k ** 2 * p.n * np.abs(p.v) ** 2)
    coef = np.sum(p.x * np.conj(AinvT), axis=-1) + 1j * p.k * p.be * np.conj(p.v) + p.al * np.conj(p.v)
    return term1 + 2 * np.real(coef * dnu_A)


def flux_normal(v, A, n, spec, x, nu) -> np.ndarray:
    """Q . nu computed directly from the flux."""
    return np.sum(flux(v, A, n, spec, x) * np.asarray(nu), axis=-1)


def circle_boundary_functional(v: TestField, k: float, R: float, alpha: float, beta: float, x) -> np.ndarray:
    """R(|v_r|^2 - |grad_S v|^2 + k^2|v|^2) - 2 k beta Im(conj(v) v_r) + 2 alpha Re(conj(v) v_r) on |x| = R."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    g = v.grad(x)
    val = v.value(x)
    nu = x / np.linalg.norm(x, axis=-1, keepdims=True)
    vr = np.sum(nu * g, axis=-1)
    gs = g - vr[..., None] * nu
    return (R * (np.abs(vr) ** 2 - np.sum(np.abs(gs) ** 2, axis=-1) + k * k * np.abs(val) ** 2)
            - 2 * k * beta * np.imag(np.conj(val) * vr) + 2 * alpha * np.real(np.conj(val) * vr))


# ---------------------------------------------------------------------------
# integrated identity

GL3 = np.polynomial.legendre.leggauss(3)


@dataclass(frozen=True)
class IntegratedCheck:
    volume_side: float
    boundary_side: float
    boundary_side_flux: float
    residual: float
    level: int
    n_triangles: int


def integrated_identity_check(v, A, n, spec, domain: DomainSpec, level: int = 3, h0: float | None = None
                              ) -> IntegratedCheck:
    """Volume integral of the (divergence) identity against the boundary integral.

    The domain is meshed at ``h0`` (default: diameter / 8) and refined
    ``level`` times; triangles use a degree-5 rule and boundary edges
    3-point Gauss, so the quadrature error decays like h^6.
    """
    if level < 0:
        raise ValueError("quadrature level must be >= 0")
    for fld in (A, n):
        if fld is not None and fld.regularity is Regularity.PIECEWISE_CONSTANT:
            raise UnsupportedRegularity("the integrated identity needs Lipschitz coefficients; "
                                        "piecewise-constant fields are refused (mollify first)")
    if domain.area() <= 0:
        raise ConfigurationError("degenerate domain")
    mesh = build_mesh(domain, h0 if h0 is not None else domain.diameter() / 8)
    for _ in range(level):
        mesh = refine_uniform(mesh)
    area, _ = _element_geometry(mesh)
    xq = quadrature_points(mesh, HI_BARY).reshape(-1, 2)
    terms = identity_terms(v, A, n, spec, xq)
    dens = (terms.lhs - terms.rest).reshape(len(area), -1)
    volume = float(np.sum(area * (dens @ HI_W)))

    e = np.concatenate([mesh.tagged(GAMMA_I), mesh.tagged(GAMMA_D)])
    a, b = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
    dvec = b - a
    L = np.linalg.norm(dvec, axis=1)
    nu = np.column_stack([dvec[:, 1], -dvec[:, 0]]) / L[:, None]
    s_nodes, s_w = GL3
    bside, bflux = 0.0, 0.0
    for s, w in zip(s_nodes, s_w):
        pts = a + ((s + 1) / 2)[..., None] * dvec
        bside += float(np.sum(w * L / 2 * boundary_integrand(v, A, n, spec, pts, nu)))
        bflux += float(np.sum(w * L / 2 * flux_normal(v, A, n, spec, pts, nu)))
    scale = max(abs(volume), abs(bside), 1e-300)
    return IntegratedCheck(volume, bside, bflux, abs(volume - bside) / scale, level, len(mesh.triangles))


# ---------------------------------------------------------------------------
# randomised test data


def random_test_field(rng: np.random.Generator, d: int, n_exp: int = 2) -> TestField:
    """Quadratic complex polynomial plus a few complex exponentials."""
    c0 = rng.normal() + 1j * rng.normal()
    b = rng.normal(size=d) + 1j * rng.normal(size=d)
    Q = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    Q = 0.5 * (Q + Q.T)
    cs = 0.5 * (rng.normal(size=n_exp) + 1j * rng.normal(size=n_exp))
    ws = rng.normal(size=(n_exp, d)) + 1j * rng.normal(size=(n_exp, d)) * 1.5

    def value(x):
        ex = np.exp(x @ ws.T)
        return c0 + x @ b + np.einsum("...i,ij,...j->...", x, Q, x) + ex @ cs

    def grad(x):
        ex = np.exp(x @ ws.T) * cs
        return b + 2 * x @ Q + ex @ ws

    def hess(x):
        ex = np.exp(x @ ws.T) * cs
        return 2 * Q + np.einsum("...m,mi,mj->...ij", ex, ws, ws)

    return TestField(value, grad, hess, "random polynomial+exponential", d)


def random_matrix_field(rng: np.random.Generator, d: int, n_modes: int = 2, amp: float = 0.15
                        ) -> MatrixCoefficientField:
    """A = A0 + sum S_m sin(w_m . x + phi_m), symmetric positive definite."""
    B = rng.normal(size=(d, d))
    A0 = np.eye(d) * 1.5 + 0.3 * (B @ B.T) / d
    S = rng.normal(size=(n_modes, d, d))
    S = 0.5 * (S + np.swapaxes(S, 1, 2))
    S *= amp / np.linalg.norm(S, ord=2, axis=(1, 2))[:, None, None]
    W = rng.normal(size=(n_modes, d))
    phi = rng.uniform(0, 2 * np.pi, size=n_modes)

    def ev(x):
        s = np.sin(x @ W.T + phi)
        return A0 + np.einsum("...m,mjl->...jl", s, S)

    def grad(x):
        c = np.cos(x @ W.T + phi)
        return np.einsum("...m,mi,mjl->...ijl", c, W, S)

    ev0 = np.linalg.eigvalsh(A0)
    return MatrixCoefficientField(ev, grad, Regularity.SMOOTH, A_min=ev0[0] - amp * n_modes,
                                  A_max=ev0[-1] + amp * n_modes, support_radius=math.inf, dim=d,
                                  name="random A")


def random_scalar_field(rng: np.random.Generator, d: int, base: float = 1.0, n_modes: int = 2, amp: float = 0.2
                        ) -> CoefficientField:
    c = amp * rng.uniform(-1, 1, size=n_modes) / n_modes
    W = rng.normal(size=(n_modes, d))
    phi = rng.uniform(0, 2 * np.pi, size=n_modes)

    def ev(x):
        return base + np.sin(x @ W.T + phi) @ c

    def grad(x):
        return (np.cos(x @ W.T + phi) * c) @ W

    return CoefficientField(ev, grad, Regularity.SMOOTH, n_min=base - amp, n_max=base + amp,
                            support_radius=math.inf, dim=d, name="random n")


def random_real_function(rng: np.random.Generator, d: int) -> ScalarFunction:
    a0 = rng.normal()
    a = rng.normal(size=d)
    c = rng.normal()
    w = rng.normal(size=d)

    def value(x):
        return a0 + x @ a + c * np.sin(x @ w)

    def grad(x):
        return a + (c * np.cos(x @ w))[..., None] * w

    return ScalarFunction(value, grad)


def random_case(seed: int, d: int) -> tuple:
    """(v, A, n, spec, points) drawn from a seeded generator."""
    rng = np.random.default_rng(seed)
    v = random_test_field(rng, d)
    A = random_matrix_field(rng, d)
    n = random_scalar_field(rng, d)
    spec = MultiplierSpec(random_real_function(rng, d), random_real_function(rng, d), float(rng.uniform(0.5, 5)))
    x = rng.uniform(-1, 1, size=(8, d))
    return v, A, n, spec, x


# ---------------------------------------------------------------------------
# closed-form test fields


def plane_wave_field(k: float, direction, envelope: float = 0.0) -> TestField:
    """exp(i k x.d) (1 + envelope sin x_1)."""
    dvec = np.asarray(direction, dtype=float)
    dvec = dvec / np.linalg.norm(dvec)
    dim = dvec.size
    e1 = np.zeros(dim)
    e1[0] = 1.0

    def value(x):
        return np.exp(1j * k * (x @ dvec)) * (1 + envelope * np.sin(x[..., 0]))

    def grad(x):
        ph = np.exp(1j * k * (x @ dvec))
        env = 1 + envelope * np.sin(x[..., 0])
        return ph[..., None] * (1j * k * env[..., None] * dvec + (envelope * np.cos(x[..., 0]))[..., None] * e1)

    def hess(x):
        ph = np.exp(1j * k * (x @ dvec))
        env = 1 + envelope * np.sin(x[..., 0])
        denv = envelope * np.cos(x[..., 0])
        ddenv = -envelope * np.sin(x[..., 0])
        dd = np.outer(dvec, dvec)
        de = np.outer(dvec, e1) + np.outer(e1, dvec)
        ee = np.outer(e1, e1)
        return ph[..., None, None] * (-k * k * env[..., None, None] * dd + 1j * k * denv[..., None, None] * de
                                      + ddenv[..., None, None] * ee)

    return TestField(value, grad, hess, f"plane wave k={k:g}", dim)


def outgoing_radial_field(k: float) -> TestField:
    """exp(i k r)/sqrt(r) in two dimensions (away from the origin)."""

    def parts(x):
        r = np.linalg.norm(x, axis=-1)
        v = np.exp(1j * k * r) / np.sqrt(r)
        vr = (1j * k - 0.5 / r) * v
        vrr = ((1j * k - 0.5 / r) ** 2 + 0.5 / r ** 2) * v
        return r, v, vr, vrr

    def value(x):
        return parts(x)[1]

    def grad(x):
        r, _, vr, _ = parts(x)
        return (vr / r)[..., None] * x

    def hess(x):
        r, _, vr, vrr = parts(x)
        xh = x / r[..., None]
        P = np.einsum("...i,...j->...ij", xh, xh)
        eye = np.eye(x.shape[-1])
        return vrr[..., None, None] * P + (vr / r)[..., None, None] * (eye - P)

    return TestField(value, grad, hess, f"outgoing radial k={k:g}", 2, check=False)


def polynomial_field(coeffs_linear, quad, const: complex = 0.0) -> TestField:
    """c + b.x + x^T Q x (complex coefficients)."""
    b = np.asarray(coeffs_linear, dtype=complex)
    Q = np.asarray(quad, dtype=complex)
    Q = 0.5 * (Q + Q.T)
    return TestField(lambda x: const + x @ b + np.einsum("...i,ij,...j->...", x, Q, x),
                     lambda x: b + 2 * x @ Q,
                     lambda x: np.broadcast_to(2 * Q, x.shape[:-1] + Q.shape),
                     "quadratic polynomial", b.size)
