"""Coefficient fields (A, n) for the heterogeneous Helmholtz operator.

The operator is  div(A grad u) + k^2 n u  with a symmetric positive definite
matrix field A and a positive scalar field n, both equal to the identity / one
outside a ball of radius ``support_radius``.  This module provides

* vectorised field containers (values and gradients on arrays of points),
* the nontrapping condition checks, each reporting its infimum margin,
* radial-monotonicity checks for the monotone (possibly discontinuous) family,
* mollification of rough fields by convolution with a smooth bump.

Array conventions: positions are ``(..., d)`` arrays, scalar fields return
``(...)``, matrix fields ``(..., d, d)`` and matrix gradients ``(..., d, d, d)``
indexed ``[..., i, j, l] = d_i A_jl``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.stats import qmc

HOLD_TOL = 1e-9
"""Margins must exceed this value for a condition to count as holding."""

FD_REL_STEP = 1e-5


class ConfigurationError(ValueError):
    """Raised when a field cannot be used the way it was requested."""


class EvaluationError(ArithmeticError):
    """Raised when an evaluator returns a non-finite value."""


class UnsupportedRegularity(ConfigurationError):
    """Raised for coefficient descriptions the checkers cannot interpret."""


class MollifierError(RuntimeError):
    """Internal consistency failure in the mollifier quadrature."""


class Regularity(str, enum.Enum):
    SMOOTH = "smooth"
    LIPSCHITZ = "lipschitz"
    PIECEWISE_CONSTANT = "piecewise_constant"


class ConditionId(str, enum.Enum):
    A1 = "A1"
    A2 = "A2"
    N3 = "N3"
    RADIAL_MONOTONE = "RADIAL_MONOTONE"


class Direction(str, enum.Enum):
    NONDECREASING = "nondecreasing"
    NONINCREASING = "nonincreasing"


# ---------------------------------------------------------------------------
# small linear algebra helpers


def lambda_min(M: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of symmetric ``(..., d, d)`` matrices, d <= 3.

    Closed form for d = 2, cyclic Jacobi sweeps for d = 3.
    """
    M = np.asarray(M, dtype=float)
    d = M.shape[-1]
    if d == 1:
        return M[..., 0, 0].copy()
    if d == 2:
        a, b, c = M[..., 0, 0], 0.5 * (M[..., 0, 1] + M[..., 1, 0]), M[..., 1, 1]
        return 0.5 * (a + c) - np.hypot(0.5 * (a - c), b)
    if d == 3:
        return jacobi_eigenvalues(M).min(axis=-1)
    raise ValueError(f"lambda_min supports d <= 3, got d = {d}")


def jacobi_eigenvalues(M: np.ndarray, sweeps: int = 12) -> np.ndarray:
    """Eigenvalues of symmetric 3x3 matrices by vectorised cyclic Jacobi."""
    A = np.array(M, dtype=float, copy=True)
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    scale = np.abs(A).max(axis=(-1, -2), keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    A = A / scale
    for _ in range(sweeps):
        off = A[..., 0, 1] ** 2 + A[..., 0, 2] ** 2 + A[..., 1, 2] ** 2
        if np.all(off < 1e-40):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = A[..., p, q]
            active = np.abs(apq) > 1e-300
            safe = np.where(active, apq, 1.0)
            tau = (A[..., q, q] - A[..., p, p]) / (2.0 * safe)
            t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t = np.where(tau == 0, 1.0, t)
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            J = np.zeros(A.shape)
            J[..., 0, 0] = J[..., 1, 1] = J[..., 2, 2] = 1.0
            J[..., p, p] = c
            J[..., q, q] = c
            J[..., p, q] = s
            J[..., q, p] = -s
            A = np.einsum("...ji,...jk,...kl->...il", J, A, J)
    return np.stack([A[..., 0, 0], A[..., 1, 1], A[..., 2, 2]], axis=-1) * scale[..., 0]


def _check_finite(values: np.ndarray, x: np.ndarray, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        bad = ~np.isfinite(values)
        while bad.ndim > x.ndim - 1:
            bad = bad.any(axis=-1)
        pos = np.asarray(x)[bad][0] if np.any(bad) else x
        raise EvaluationError(f"{what} is not finite at position {np.array2string(np.asarray(pos))}")
    return values


# ---------------------------------------------------------------------------
# regions for piecewise-constant fields


@dataclass(frozen=True)
class Disk:
    """Closed ball of given radius (a disk in 2D) centred at ``center``."""

    radius: float
    center: tuple = (0.0, 0.0)

    def contains(self, x: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        d = x.shape[-1]
        if c.size != d:
            c = np.zeros(d)
        return np.sum((x - c) ** 2, axis=-1) <= self.radius ** 2

    def star_margin(self) -> float:
        """min over the boundary of x . nu (positive iff star-shaped w.r.t. 0)."""
        return self.radius - float(np.linalg.norm(self.center))

    def max_radius(self) -> float:
        return self.radius + float(np.linalg.norm(self.center))

    def as_polygon(self, n_vertices: int = 256) -> np.ndarray:
        t = 2 * np.pi * np.arange(n_vertices) / n_vertices
        c = np.asarray(self.center, dtype=float)[:2]
        return np.column_stack([c[0] + self.radius * np.cos(t), c[1] + self.radius * np.sin(t)])


@dataclass(frozen=True, eq=False)
class PolygonRegion:
    """Closed simple polygon (2D), vertices in counter-clockwise order."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ConfigurationError("polygon region needs an (N>=3, 2) vertex array")
        object.__setattr__(self, "vertices", v)

    def contains(self, x: np.ndarray) -> np.ndarray:
        import shapely

        poly = shapely.Polygon(self.vertices)
        flat = x.reshape(-1, 2)
        inside = shapely.intersects_xy(poly, flat[:, 0], flat[:, 1])
        return inside.reshape(x.shape[:-1])

    def star_margin(self) -> float:
        from .geom import edge_normals

        v = self.vertices
        nu, _ = edge_normals(v)
        return float(np.min(np.sum(v * nu, axis=1)))

    def max_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.vertices, axis=1)))

    def as_polygon(self, n_vertices: int = 0) -> np.ndarray:
        return self.vertices


@dataclass(frozen=True, eq=False)
class Layers:
    """Nested piecewise-constant description, innermost region first.

    The value is ``values[j]`` on ``regions[j]`` minus the inner regions and
    ``background`` outside the outermost region.  Each region must contain the
    previous one.  Interface points take the inner value.
    """

    regions: tuple
    values: tuple
    background: float = 1.0

    def __post_init__(self):
        if len(self.regions) != len(self.values) or not self.regions:
            raise ConfigurationError("layers need matching, nonempty region/value lists")
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def lookup(self, x: np.ndarray) -> np.ndarray:
        out = np.full(x.shape[:-1], float(self.background))
        for region, value in zip(reversed(self.regions), reversed(self.values)):
            out = np.where(region.contains(x), value, out)
        return out

    def all_values(self) -> list:
        return list(self.values) + [float(self.background)]

    def outward_jumps(self) -> np.ndarray:
        vals = np.array(self.all_values())
        return vals[1:] - vals[:-1]

    def max_radius(self) -> float:
        return max(r.max_radius() for r in self.regions)

    def star_margin(self) -> float:
        return min(r.star_margin() for r in self.regions)


# ---------------------------------------------------------------------------
# field containers


def _fd_gradient(fun: Callable, x: np.ndarray) -> np.ndarray:
    """Central differences with step 1e-5 * max(1, |x|) along each axis."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    h = FD_REL_STEP * np.maximum(1.0, np.linalg.norm(x, axis=-1))
    parts = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        step = h[..., None] * e
        fp = np.asarray(fun(x + step))
        fm = np.asarray(fun(x - step))
        hh = h.reshape(h.shape + (1,) * (fp.ndim - h.ndim))
        parts.append((fp - fm) / (2 * hh))
    return np.stack(parts, axis=x.ndim - 1)


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Scalar coefficient n(x) with bounds and regularity metadata."""

    evaluator: Callable
    gradient_evaluator: Callable | None = None
    regularity: Regularity = Regularity.SMOOTH
    n_min: float = 1.0
    n_max: float = 1.0
    support_radius: float = 0.0
    subdomain_spec: Layers | None = None
    dim: int = 2
    allow_fd: bool = True
    name: str = "field"

    def __post_init__(self):
        object.__setattr__(self, "regularity", Regularity(self.regularity))
        if not (0 < self.n_min <= self.n_max):
            raise ConfigurationError(f"need 0 < n_min <= n_max, got {self.n_min}, {self.n_max}")

    is_matrix = False

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return _check_finite(self.evaluator(x), x, f"{self.name} value")

    def has_gradient(self) -> bool:
        return self.gradient_evaluator is not None or self.regularity is Regularity.SMOOTH or (
            self.regularity is Regularity.LIPSCHITZ and self.allow_fd)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.gradient_evaluator is not None:
            return _check_finite(self.gradient_evaluator(x), x, f"{self.name} gradient")
        if self.regularity is Regularity.PIECEWISE_CONSTANT:
            raise UnsupportedRegularity(f"{self.name}: piecewise-constant field has no pointwise gradient")
        if self.regularity is Regularity.LIPSCHITZ and not self.allow_fd:
            raise ConfigurationError(
                f"{self.name}: lipschitz field has no gradient evaluator and finite differences are disabled")
        return _check_finite(_fd_gradient(self.evaluator, x), x, f"{self.name} gradient")


@dataclass(frozen=True, eq=False)
class MatrixCoefficientField:
    """Symmetric positive definite matrix coefficient A(x)."""

    evaluator: Callable
    gradient_evaluator: Callable | None = None
    regularity: Regularity = Regularity.SMOOTH
    A_min: float = 1.0
    A_max: float = 1.0
    support_radius: float = 0.0
    subdomain_spec: Layers | None = None
    dim: int = 2
    allow_fd: bool = True
    name: str = "matrix field"

    def __post_init__(self):
        object.__setattr__(self, "regularity", Regularity(self.regularity))
        if not (0 < self.A_min <= self.A_max):
            raise ConfigurationError(f"need 0 < A_min <= A_max, got {self.A_min}, {self.A_max}")

    is_matrix = True

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return _check_finite(self.evaluator(x), x, f"{self.name} value")

    def has_gradient(self) -> bool:
        return CoefficientField.has_gradient(self)  # same rule

    def gradient(self, x) -> np.ndarray:
        return CoefficientField.gradient(self, x)


def evaluate_pair(A: MatrixCoefficientField, n: CoefficientField, x) -> tuple:
    """Return ``(A(x), n(x))``; raises :class:`EvaluationError` on non-finite values."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise EvaluationError(f"position is not finite: {x}")
    return A(x), n(x)


# ---------------------------------------------------------------------------
# radial profiles and constructors


def smoothstep_cutoff(r, r_a: float, r_b: float):
    """C^2 cutoff equal to 1 for r <= r_a and 0 for r >= r_b; returns (chi, chi')."""
    r = np.asarray(r, dtype=float)
    w = r_b - r_a
    t = np.minimum(np.maximum((r - r_a) / w, 0.0), 1.0)
    if not t.any():  # common case: everything inside the plateau
        return np.ones_like(t), np.zeros_like(t)
    chi = 1.0 - t ** 3 * (10 - 15 * t + 6 * t * t)
    dchi = -30 * t * t * (1 - t) ** 2 / w
    return chi, dchi


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """A radial function p(r) with derivative, equal to 1 for r >= support."""

    value: Callable
    derivative: Callable | None
    support: float
    name: str = "profile"
    regularity: Regularity = Regularity.SMOOTH


def constant_profile(c: float) -> RadialProfile:
    c = float(c)
    return RadialProfile(lambda r: np.full(np.shape(r), c), lambda r: np.zeros(np.shape(r)),
                         0.0 if c == 1.0 else math.inf, f"constant({c:g})")


def bump_profile(amplitude: float, center: float, width: float = 1.0, cutoff: tuple | None = None) -> RadialProfile:
    """1 + amplitude * exp(-((r-center)/width)^2), smoothly cut to 1 at large r.

    The default cutoff window is ``[center + 2.5 width, center + 3 width]``.
    """
    r_a, r_b = cutoff if cutoff is not None else (center + 2.5 * width, center + 3.0 * width)

    def value(r):
        g = np.exp(-(((np.asarray(r) - center) / width) ** 2))
        chi, _ = smoothstep_cutoff(r, r_a, r_b)
        return 1.0 + amplitude * g * chi

    def derivative(r):
        r = np.asarray(r, dtype=float)
        g = np.exp(-(((r - center) / width) ** 2))
        dg = -2 * (r - center) / width ** 2 * g
        chi, dchi = smoothstep_cutoff(r, r_a, r_b)
        return amplitude * (dg * chi + g * dchi)

    return RadialProfile(value, derivative, float(r_b), f"bump({amplitude:g},{center:g},{width:g})")


def hat_profile(peak: float, radius: float = 1.0) -> RadialProfile:
    """1 + (peak - 1)(1 - r/radius)_+ : Lipschitz, linear inside the ball."""
    slope = (peak - 1.0) / radius

    def value(r):
        return 1.0 + (peak - 1.0) * np.clip(1.0 - np.asarray(r) / radius, 0.0, None)

    def derivative(r):
        return np.where(np.asarray(r) < radius, -slope, 0.0)

    return RadialProfile(value, derivative, float(radius), f"hat({peak:g},{radius:g})", Regularity.LIPSCHITZ)


def tabulated_profile(r_table, values) -> RadialProfile:
    """Piecewise-linear interpolation of (r, value) samples; 1 beyond the table.

    The last tabulated value must equal 1 so the field has compact support.
    """
    r_table = np.asarray(r_table, dtype=float)
    values = np.asarray(values, dtype=float)
    if r_table.ndim != 1 or r_table.shape != values.shape or len(r_table) < 2:
        raise ConfigurationError("tabulated profile needs two equal-length columns with >= 2 rows")
    if np.any(np.diff(r_table) <= 0) or r_table[0] < 0:
        raise ConfigurationError("tabulated radii must be nonnegative and strictly increasing")
    if abs(values[-1] - 1.0) > 1e-12:
        raise ConfigurationError("tabulated profile must end at value 1 (compact support)")
    slopes = np.diff(values) / np.diff(r_table)

    def value(r):
        return np.interp(r, r_table, values, left=values[0], right=1.0)

    def derivative(r):
        idx = np.searchsorted(r_table, r, side="right") - 1
        inside = (idx >= 0) & (idx < len(slopes))
        return np.where(inside, slopes[np.clip(idx, 0, len(slopes) - 1)], 0.0)

    return RadialProfile(value, derivative, float(r_table[-1]), "tabulated", Regularity.LIPSCHITZ)


def load_tabulated_profile(path) -> RadialProfile:
    """Read a two-column CSV ``r, value`` (header lines and '#' comments skipped)."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if rows:
                    raise ConfigurationError(f"{path}:{lineno}: malformed row {row!r}")
    if not rows:
        raise ConfigurationError(f"{path}: no numeric rows")
    data = np.array(rows)
    return tabulated_profile(data[:, 0], data[:, 1])


def _profile_bounds(profile: RadialProfile) -> tuple:
    top = profile.support if math.isfinite(profile.support) else 10.0
    r = np.linspace(0.0, max(top, 1e-12), 20001)
    vals = np.concatenate([profile.value(r), [1.0] if math.isfinite(profile.support) else []])
    return float(vals.min()), float(vals.max())


def _radial_gradient(profile: RadialProfile, x: np.ndarray) -> np.ndarray:
    r = np.sqrt(np.einsum("...i,...i->...", x, x))
    dp = profile.derivative(r)
    pos = r > 0
    return (np.where(pos, dp, 0.0) / np.where(pos, r, 1.0))[..., None] * x


def radial_field(profile: RadialProfile, dim: int = 2) -> CoefficientField:
    lo, hi = _profile_bounds(profile)
    grad = None if profile.derivative is None else (lambda x: _radial_gradient(profile, x))
    return CoefficientField(
        evaluator=lambda x: profile.value(np.linalg.norm(x, axis=-1)),
        gradient_evaluator=grad, regularity=profile.regularity, n_min=lo, n_max=hi,
        support_radius=profile.support, dim=dim, name=f"n={profile.name}")


def radial_matrix_field(profile: RadialProfile, dim: int = 2) -> MatrixCoefficientField:
    """A(x) = a(|x|) I."""
    lo, hi = _profile_bounds(profile)
    eye = np.eye(dim)

    def ev(x):
        return profile.value(np.linalg.norm(x, axis=-1))[..., None, None] * eye

    def grad(x):
        g = _radial_gradient(profile, x)
        return g[..., :, None, None] * eye

    return MatrixCoefficientField(
        evaluator=ev, gradient_evaluator=None if profile.derivative is None else grad,
        regularity=profile.regularity, A_min=lo, A_max=hi, support_radius=profile.support,
        dim=dim, name=f"A={profile.name}*I")


def constant_field(c: float = 1.0, dim: int = 2) -> CoefficientField:
    return radial_field(constant_profile(c), dim)


def constant_matrix_field(c: float = 1.0, dim: int = 2) -> MatrixCoefficientField:
    return radial_matrix_field(constant_profile(c), dim)


def _layer_support(layers: Layers) -> float:
    return layers.max_radius()


def piecewise_field(layers: Layers, dim: int = 2) -> CoefficientField:
    vals = layers.all_values()
    if layers.background != 1.0:
        raise ConfigurationError("background value must be 1 outside the layers")
    return CoefficientField(
        evaluator=layers.lookup, regularity=Regularity.PIECEWISE_CONSTANT,
        n_min=min(vals), n_max=max(vals), support_radius=_layer_support(layers),
        subdomain_spec=layers, dim=dim, name="n=piecewise")


def piecewise_matrix_field(layers: Layers, dim: int = 2) -> MatrixCoefficientField:
    """A = a_j I on the j-th layer, I outside."""
    vals = layers.all_values()
    if layers.background != 1.0:
        raise ConfigurationError("background value must be 1 outside the layers")
    eye = np.eye(dim)
    return MatrixCoefficientField(
        evaluator=lambda x: layers.lookup(x)[..., None, None] * eye,
        regularity=Regularity.PIECEWISE_CONSTANT, A_min=min(vals), A_max=max(vals),
        support_radius=_layer_support(layers), subdomain_spec=layers, dim=dim, name="A=piecewise*I")


def transmission_pair(a_i: float, n_i: float, interface, dim: int = 2) -> tuple:
    """Penetrable obstacle: A = a_i I, n = n_i inside ``interface``, (I, 1) outside."""
    return (piecewise_matrix_field(Layers((interface,), (a_i,)), dim),
            piecewise_field(Layers((interface,), (n_i,)), dim))


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True, eq=False)
class SamplingRegion:
    """Where the almost-everywhere conditions are certified by sampling.

    Samples are a tensor grid over ``[-radius, radius]^d`` restricted to the
    annulus ``r_min <= |x| <= radius`` plus unscrambled Sobol points in the
    same set.  ``radius`` defaults to 1.25 times the field support radius.
    ``exclude`` (points -> bool mask) removes e.g. an obstacle.
    """

    dim: int = 2
    radius: float | None = None
    r_min: float = 0.0
    density: float = 64.0
    sobol_log2: int = 10
    max_axis_points: int | None = None
    exclude: Callable | None = None

    def resolve_radius(self, support: float) -> float:
        if self.radius is not None:
            return float(self.radius)
        if math.isfinite(support) and support > 0:
            return 1.25 * support
        return 1.0

    def points(self, support: float = 0.0) -> np.ndarray:
        rho = self.resolve_radius(support)
        d = self.dim
        cap = self.max_axis_points or (513 if d == 2 else 65)
        m = int(min(math.ceil(2 * rho * self.density) + 1, cap))
        if m % 2 == 0:
            m += 1  # keep the origin on the grid
        axis = np.linspace(-rho, rho, m)
        grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
        sob = qmc.Sobol(d, scramble=False).random_base2(self.sobol_log2)
        pts = np.concatenate([grid, (2 * sob - 1) * rho])
        r = np.linalg.norm(pts, axis=1)
        keep = (r >= self.r_min) & (r <= rho)
        if self.exclude is not None:
            keep &= ~np.asarray(self.exclude(pts), dtype=bool)
        return pts[keep]


# ---------------------------------------------------------------------------
# condition checks


@dataclass(frozen=True)
class ConditionReport:
    condition_id: ConditionId
    holds: bool
    mu_values: tuple
    worst_point: tuple
    sample_count: int
    method: str = "sampled"

    def __str__(self):
        mus = ", ".join(f"{m:.6g}" for m in self.mu_values)
        state = "holds" if self.holds else "FAILS"
        return (f"{self.condition_id.value}: {state}; margins [{mus}] worst at "
                f"{tuple(round(float(c), 6) for c in self.worst_point)} ({self.sample_count} samples, {self.method})")


def _radial_dot_matrix_gradient(G: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(x . grad) A as a (..., d, d) array from the rank-3 gradient."""
    return np.einsum("...i,...ijl->...jl", x, G)


def _chunks(pts: np.ndarray, size: int = 65536):
    for s in range(0, len(pts), size):
        yield pts[s:s + size]


def _sampled_min(fun: Callable, pts: np.ndarray) -> tuple:
    best, where = math.inf, np.zeros(pts.shape[1])
    for chunk in _chunks(pts):
        vals = fun(chunk)
        i = int(np.argmin(vals))
        if vals[i] < best:
            best, where = float(vals[i]), chunk[i]
    return best, where


def _require_layers(f) -> Layers:
    if f.subdomain_spec is None:
        raise UnsupportedRegularity(
            f"{f.name}: piecewise-constant field without a nested subdomain description is not supported")
    return f.subdomain_spec


def _jump_margin(f, factor: float, increasing: bool) -> tuple:
    """Distributional margin for nested piecewise-constant fields.

    Within each layer the gradient vanishes, so the pointwise margin is
    ``factor * value``; across interfaces the jumps must have the sign that
    makes the singular part of x.grad nonnegative (n increasing outward,
    A decreasing outward) and the layers must be star-shaped w.r.t. 0.
    On failure the margin is the most offending jump (or star margin), negated.
    """
    layers = _require_layers(f)
    jumps = layers.outward_jumps()
    signed = jumps if increasing else -jumps
    star = layers.star_margin()
    worst_region = int(np.argmin(signed)) if len(signed) else 0
    region = layers.regions[min(worst_region, len(layers.regions) - 1)]
    if isinstance(region, Disk):
        point = np.zeros(f.dim)
        point[0] = region.radius
    else:
        point = region.vertices[0]
    if star <= 0:
        return star, point
    if signed.min() < 0:
        return float(signed.min()), point
    vals = np.array(layers.all_values())
    j = int(np.argmin(vals))
    point = np.zeros(f.dim)
    return factor * float(vals[j]), point


def _scalar_margin(n: CoefficientField, factor: float, pts: np.ndarray) -> tuple:
    if n.regularity is Regularity.PIECEWISE_CONSTANT:
        return _jump_margin(n, factor, increasing=True) + ("jump-sign rule",)
    n.gradient(pts[:1])  # raise early on configuration problems
    val, where = _sampled_min(lambda p: factor * n(p) + np.sum(p * n.gradient(p), axis=-1), pts)
    return val, where, "sampled"


def _matrix_margin(A: MatrixCoefficientField, factor: float, pts: np.ndarray) -> tuple:
    if A.regularity is Regularity.PIECEWISE_CONSTANT:
        return _jump_margin(A, factor, increasing=False) + ("jump-sign rule",)
    A.gradient(pts[:1])
    val, where = _sampled_min(
        lambda p: lambda_min(factor * A(p) - _radial_dot_matrix_gradient(A.gradient(p), p)), pts)
    return val, where, "sampled"


def _region_for(region: SamplingRegion | None, dim: int) -> SamplingRegion:
    return region if region is not None else SamplingRegion(dim=dim)


def check_condition_A1(A: MatrixCoefficientField, n: CoefficientField,
                       region: SamplingRegion | None = None) -> ConditionReport:
    """mu1 = inf lambda_min(A - (x.grad)A),  mu2 = inf (n + x.grad n)."""
    region = _region_for(region, n.dim)
    pts = region.points(max(A.support_radius, n.support_radius))
    mu1, p1, m1 = _matrix_margin(A, 1.0, pts)
    mu2, p2, m2 = _scalar_margin(n, 1.0, pts)
    worst = p1 if mu1 <= mu2 else p2
    method = m1 if m1 == m2 else f"{m1} (A) / {m2} (n)"
    return ConditionReport(ConditionId.A1, bool(mu1 > HOLD_TOL and mu2 > HOLD_TOL), (mu1, mu2),
                           tuple(np.asarray(worst, dtype=float)), len(pts), method)


def check_condition_A2(A: MatrixCoefficientField, region: SamplingRegion | None = None) -> ConditionReport:
    """mu3 = inf lambda_min(2A - (x.grad)A)."""
    region = _region_for(region, A.dim)
    pts = region.points(A.support_radius)
    mu3, p, m = _matrix_margin(A, 2.0, pts)
    return ConditionReport(ConditionId.A2, bool(mu3 > HOLD_TOL), (mu3,), tuple(np.asarray(p, float)), len(pts), m)


def check_condition_N3(n: CoefficientField, region: SamplingRegion | None = None) -> ConditionReport:
    """mu4 = inf (2n + x.grad n)."""
    region = _region_for(region, n.dim)
    pts = region.points(n.support_radius)
    mu4, p, m = _scalar_margin(n, 2.0, pts)
    return ConditionReport(ConditionId.N3, bool(mu4 > HOLD_TOL), (mu4,), tuple(np.asarray(p, float)), len(pts), m)


RADIAL_OFFSETS = (0.002, 0.01, 0.05, 0.2)


def check_radial_monotone(f, direction: Direction | str | None = None,
                          region: SamplingRegion | None = None, tol: float = HOLD_TOL) -> ConditionReport:
    """Check monotonicity of the field along rays from the origin.

    For scalar fields the default direction is nondecreasing outward; for
    matrix fields nonincreasing outward (in the sense of quadratic forms).
    The reported margin is ``min increment + tol`` so that the usual rule
    "holds iff margin > 0" applies; increments are measured over offsets
    ``h = c * radius`` for several fractions ``c``.
    """
    if direction is None:
        direction = Direction.NONINCREASING if f.is_matrix else Direction.NONDECREASING
    direction = Direction(direction)
    sign = 1.0 if direction is Direction.NONDECREASING else -1.0
    region = _region_for(region, f.dim)
    rho = region.resolve_radius(f.support_radius)
    pts = region.points(f.support_radius)
    r = np.linalg.norm(pts, axis=1)
    pts = pts[r > 1e-12 * max(rho, 1.0)]
    best, where = math.inf, np.zeros(f.dim)
    for frac in RADIAL_OFFSETS:
        h = frac * rho

        def increment(p):
            e = p / np.linalg.norm(p, axis=-1, keepdims=True)
            diff = f(p + h * e) - f(p)
            if f.is_matrix:
                return lambda_min(sign * diff)
            return sign * diff

        val, w = _sampled_min(increment, pts)
        if val < best:
            best, where = val, w
    margin = best + tol
    return ConditionReport(ConditionId.RADIAL_MONOTONE, bool(margin > 0), (margin,),
                           tuple(np.asarray(where, float)), len(pts) * len(RADIAL_OFFSETS))


def check_bounds(f, region: SamplingRegion | None = None, sym_tol: float = 1e-14) -> tuple:
    """Verify the stated bounds (and symmetry for matrices) on samples.

    Returns ``(ok, observed_min, observed_max)``.
    """
    region = _region_for(region, f.dim)
    pts = region.points(f.support_radius)
    lo, hi = math.inf, -math.inf
    for chunk in _chunks(pts):
        v = f(chunk)
        if f.is_matrix:
            if np.max(np.abs(v - np.swapaxes(v, -1, -2))) > sym_tol:
                return False, lo, hi
            lo = min(lo, float(lambda_min(v).min()))
            hi = max(hi, float((-lambda_min(-v)).max()))
        else:
            lo, hi = min(lo, float(v.min())), max(hi, float(v.max()))
    fmin, fmax = (f.A_min, f.A_max) if f.is_matrix else (f.n_min, f.n_max)
    return bool(lo >= fmin - 1e-12 and hi <= fmax + 1e-12), lo, hi


# ---------------------------------------------------------------------------
# mollification


def _bump(rho2: np.ndarray) -> np.ndarray:
    out = np.zeros_like(rho2)
    inside = rho2 < 1.0
    out[inside] = np.exp(1.0 / (rho2[inside] - 1.0))
    return out


def bump_normalization(dim: int) -> float:
    """C with  integral of C exp(1/(|x|^2-1)) over the unit ball = 1."""
    surface = 2 * np.pi ** (dim / 2) / math.gamma(dim / 2)
    radial, _ = integrate.quad(lambda r: np.exp(1.0 / (r * r - 1.0)) * r ** (dim - 1), 0.0, 1.0,
                               epsabs=1e-15, epsrel=1e-14, limit=200)
    return 1.0 / (surface * radial)


def mollifier_kernel(x: np.ndarray, delta: float) -> np.ndarray:
    """psi_delta(x) = psi(x/delta)/delta^d with the analytic normalisation."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    return bump_normalization(d) * _bump(np.sum(x * x, axis=-1) / delta ** 2) / delta ** d


class _KernelRule:
    """Tensor Gauss-Legendre rule for convolution with psi_delta.

    Weights are renormalised to sum to exactly one so that constants are
    reproduced and positive bounds preserved; the raw rule must already
    integrate the analytic kernel to better than 1e-3 and after
    renormalisation to 1e-10, otherwise :class:`MollifierError` is raised.
    """

    def __init__(self, delta: float, dim: int, order: int = 16):
        g, w = np.polynomial.legendre.leggauss(order)
        axes = [g * delta] * dim
        wts = [w * delta] * dim
        Y = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
        W = np.prod(np.stack(np.meshgrid(*wts, indexing="ij"), axis=-1).reshape(-1, dim), axis=1)
        C = bump_normalization(dim)
        rho2 = np.sum(Y * Y, axis=1) / delta ** 2
        psi = C * _bump(rho2) / delta ** dim
        keep = psi > 0
        Y, W, psi, rho2 = Y[keep], W[keep], psi[keep], rho2[keep]
        raw = float(np.sum(W * psi))
        if abs(raw - 1.0) > 1e-3:
            raise MollifierError(f"kernel quadrature mass {raw!r} too far from 1")
        scale = 1.0 / raw
        self.points = Y
        self.weights = W * psi * scale
        # gradient of psi_delta at the nodes: psi * (-2 y / delta^2) / (rho2 - 1)^2
        dpsi = psi[:, None] * (-2.0 * Y / delta ** 2) / ((rho2 - 1.0) ** 2)[:, None]
        self.grad_weights = W[:, None] * dpsi * scale
        drift = abs(float(np.sum(self.weights)) - 1.0)
        if drift > 1e-10:
            raise MollifierError(f"normalisation drift {drift:.3e} exceeds 1e-10")
        self.raw_mass = raw

    def convolve(self, fun: Callable, x: np.ndarray, weights: np.ndarray, chunk: int = 4096) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        flat = x.reshape(-1, x.shape[-1])
        outs = []
        for s in range(0, len(flat), chunk):
            xs = flat[s:s + chunk]
            vals = np.asarray(fun(xs[:, None, :] - self.points[None, :, :]))
            outs.append(np.tensordot(vals, weights, axes=([1], [0])))
        if not outs:
            probe = np.tensordot(np.asarray(fun(self.points[None])), weights, axes=([1], [0]))
            return np.zeros(shape + probe.shape[1:])
        out = np.concatenate(outs, axis=0)
        return out.reshape(shape + out.shape[1:])


def _boundary_gradient(layers: Layers, x: np.ndarray, delta: float) -> np.ndarray:
    """grad (layers * psi_delta) via  sum_j jump_j * int_{dK_j} psi_delta(x - z) nu(z) ds.

    Only 2D; disks use the periodic trapezoid rule, polygon edges composite
    Gauss-Legendre.  Each term is a positive-weight sum, so radial monotonicity
    of the layers carries over exactly to x . grad.
    """
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    flat = x.reshape(-1, 2)
    out = np.zeros_like(flat)
    jumps = layers.outward_jumps()
    for region, jump in zip(layers.regions, jumps):
        if jump == 0:
            continue
        z, nu, ds = _boundary_rule(region, delta)
        if isinstance(region, Disk):
            rr = np.linalg.norm(flat - np.asarray(region.center)[:2], axis=1)
            near = np.abs(rr - region.radius) < delta
        else:
            lo, hi = z.min(axis=0) - delta, z.max(axis=0) + delta
            near = np.all((flat > lo) & (flat < hi), axis=1)
        idx = np.nonzero(near)[0]
        for s in range(0, len(idx), 512):
            sel = idx[s:s + 512]
            psi = mollifier_kernel(flat[sel, None, :] - z[None, :, :], delta)
            out[sel] += jump * (psi * ds[None, :]) @ nu
    return out.reshape(shape + (2,))


def _boundary_rule(region, delta: float) -> tuple:
    if isinstance(region, Disk):
        m = max(512, int(math.ceil(2 * np.pi * region.radius * 48 / delta)))
        t = 2 * np.pi * np.arange(m) / m
        nu = np.column_stack([np.cos(t), np.sin(t)])
        z = np.asarray(region.center, dtype=float)[:2] + region.radius * nu
        ds = np.full(m, 2 * np.pi * region.radius / m)
        return z, nu, ds
    v = region.vertices
    g, w = np.polynomial.legendre.leggauss(8)
    zs, nus, dss = [], [], []
    for i in range(len(v)):
        a, b = v[i], v[(i + 1) % len(v)]
        L = float(np.linalg.norm(b - a))
        pieces = max(1, int(math.ceil(L / (delta / 6))))
        nrm = np.array([b[1] - a[1], a[0] - b[0]]) / L
        edges = np.linspace(0.0, 1.0, pieces + 1)
        for p in range(pieces):
            t = edges[p] + (edges[p + 1] - edges[p]) * (g + 1) / 2
            zs.append(a + np.outer(t, b - a))
            nus.append(np.tile(nrm, (len(t), 1)))
            dss.append(w / 2 * L / pieces)
    return np.concatenate(zs), np.concatenate(nus), np.concatenate(dss)


def mollify(f, delta: float, obstacle=None, quad_order: int = 16):
    """Smooth a coefficient field by convolution with psi_delta.

    Writing n = n_min + pi (resp. A = A_max I - Pi), the perturbation is
    extended by zero inside ``obstacle`` (any object with ``contains``) and
    convolved with the kernel.  The result carries regularity ``smooth``, the
    same bounds, and an analytic gradient (differentiated quadrature, or the
    exact boundary-integral form for nested piecewise-constant 2D fields).
    """
    if not (delta > 0 and math.isfinite(delta)):
        raise ConfigurationError(f"mollification width must be positive, got {delta}")
    rule = _KernelRule(float(delta), f.dim, quad_order)
    base_value = f.A_max if f.is_matrix else f.n_min
    eye = np.eye(f.dim)

    def extended(p):
        v = f(p)
        if obstacle is None:
            return v
        inside = np.asarray(obstacle.contains(p), dtype=bool)
        if f.is_matrix:
            return np.where(inside[..., None, None], base_value * eye, v)
        return np.where(inside, base_value, v)

    def value(x):
        return rule.convolve(extended, x, rule.weights)

    layers = f.subdomain_spec
    if (f.regularity is Regularity.PIECEWISE_CONSTANT and layers is not None and f.dim == 2
            and obstacle is None):
        def scalar_grad(x):
            return _boundary_gradient(layers, x, delta)
        method = "boundary"
    else:
        def scalar_grad(x):
            return rule.convolve(extended, x, rule.grad_weights)
        method = "quadrature"

    if f.is_matrix:
        if method == "boundary":
            def grad(x):
                return scalar_grad(x)[..., :, None, None] * eye
        else:
            def grad(x):
                g = scalar_grad(x)  # (..., d, d, d) with last axis the derivative
                return np.moveaxis(g, -1, -3)
        return MatrixCoefficientField(
            evaluator=value, gradient_evaluator=grad, regularity=Regularity.SMOOTH,
            A_min=f.A_min, A_max=f.A_max, support_radius=f.support_radius + delta,
            dim=f.dim, name=f"{f.name}*psi[{delta:g}]")
    return CoefficientField(
        evaluator=value, gradient_evaluator=scalar_grad, regularity=Regularity.SMOOTH,
        n_min=f.n_min, n_max=f.n_max, support_radius=f.support_radius + delta,
        dim=f.dim, name=f"{f.name}*psi[{delta:g}]")


# ---------------------------------------------------------------------------
# family builder used by the configuration layer

PROFILE_FACTORIES = {
    "constant": constant_profile,
    "bump": bump_profile,
    "hat": hat_profile,
}


def make_profile(name: str, params: Sequence[float] = (), path=None) -> RadialProfile:
    if name == "tabulated":
        if path is None:
            raise ConfigurationError("tabulated profile needs a CSV path")
        return load_tabulated_profile(path)
    try:
        factory = PROFILE_FACTORIES[name]
    except KeyError:
        raise ConfigurationError(f"unknown radial profile {name!r}; known: "
                                 f"{sorted(PROFILE_FACTORIES) + ['tabulated']}") from None
    params = tuple(params)
    if name == "bump" and len(params) == 5:  # amplitude, center, width, cutoff start, cutoff end
        params = params[:3] + (params[3:],)
    try:
        return factory(*params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters {tuple(params)} for profile {name!r}: {exc}") from None


@dataclass(frozen=True)
class FamilySpec:
    """Declarative description of a coefficient pair (see :func:`build_family`)."""

    kind: str = "constant"
    a_value: float = 1.0
    n_value: float = 1.0
    a_profile: str = "constant"
    a_params: tuple = (1.0,)
    n_profile: str = "constant"
    n_params: tuple = (1.0,)
    n_table: str | None = None
    interface: str = "square"
    interface_size: float = 1.0
    a_layers: tuple = ()
    n_layers: tuple = ()
    layer_radii: tuple = ()
    dim: int = 2
    extra: dict = field(default_factory=dict)


def interface_region(shape: str, size: float):
    """Star-shaped interface: 'square' is [-size, size]^2, 'disk' the disk of radius size."""
    if shape == "square":
        s = float(size)
        return PolygonRegion(np.array([[-s, -s], [s, -s], [s, s], [-s, s]]))
    if shape == "disk":
        return Disk(float(size))
    raise ConfigurationError(f"unknown interface shape {shape!r} (square, disk)")


def build_family(spec: FamilySpec) -> tuple:
    """Return ``(A, n)`` for a family description."""
    kind = spec.kind
    if kind == "constant":
        return constant_matrix_field(spec.a_value, spec.dim), constant_field(spec.n_value, spec.dim)
    if kind == "radial_profile":
        A = radial_matrix_field(make_profile(spec.a_profile, spec.a_params), spec.dim)
        n = radial_field(make_profile(spec.n_profile, spec.n_params, spec.n_table), spec.dim)
        return A, n
    if kind == "transmission":
        return transmission_pair(spec.a_value, spec.n_value, interface_region(spec.interface, spec.interface_size),
                                 spec.dim)
    if kind == "piecewise_constant":
        radii = tuple(spec.layer_radii)
        if not radii or len(radii) != len(spec.n_layers) or len(radii) != len(spec.a_layers):
            raise ConfigurationError("piecewise_constant needs equal-length layer_radii, a_layers, n_layers")
        regions = tuple(Disk(float(r)) for r in radii)
        return (piecewise_matrix_field(Layers(regions, spec.a_layers), spec.dim),
                piecewise_field(Layers(regions, spec.n_layers), spec.dim))
    raise UnsupportedRegularity(f"unknown coefficient family {kind!r}")
