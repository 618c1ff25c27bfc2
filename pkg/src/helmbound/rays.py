"""Rays of the Hamiltonian |xi|^2 - n(x) and trapping diagnostics.

Null bicharacteristics solve

    dx/ds = 2 xi,    dxi/ds = grad n(x),    |xi|^2 = n(x) at launch,

and along them  d^2/ds^2 (|x|^2/2) = 2 (2n + x . grad n).  When the margin
2n + x.grad n is bounded below by mu > 0 every ray leaves a ball in bounded
time; for radial n a radius where it is negative carries a trapped circular
orbit.  Ensembles of rays are integrated together (vectorised classic RK4
with a fixed step and step-halving on null-condition drift).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import qmc

from .coeff import CoefficientField, ConfigurationError, RadialProfile

DRIFT_TOL = 1e-6
LAUNCH_TOL = 1e-12
ESCAPE_FACTOR = 1.01


class IntegrationError(RuntimeError):
    """Null-condition drift could not be controlled."""


class Verdict(str, enum.Enum):
    NONTRAPPING_EVIDENCE = "NONTRAPPING_EVIDENCE"
    TRAPPING_EVIDENCE = "TRAPPING_EVIDENCE"


@dataclass(frozen=True)
class RayState:
    x: np.ndarray
    xi: np.ndarray
    s: float


@dataclass(frozen=True, eq=False)
class RayTraceResult:
    """One integrated ray: recorded samples (uniform in s) plus diagnostics."""

    s: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    escaped: bool
    escape_s: float | None
    max_null_drift: float
    max_radius: float
    ds: float
    ray_id: int = 0

    @property
    def samples(self) -> list:
        return [RayState(x, xi, s) for s, x, xi in zip(self.s, self.x, self.xi)]


def _grad(n: CoefficientField):
    if n.gradient_evaluator is not None:
        return n.gradient_evaluator
    if not n.has_gradient():
        raise ConfigurationError(f"{n.name}: ray tracing needs a gradient")
    return n.gradient


def hamiltonian_rhs(x, xi, n: CoefficientField) -> tuple:
    """(dx/ds, dxi/ds) = (2 xi, grad n(x))."""
    return 2.0 * np.asarray(xi, dtype=float), _grad(n)(np.asarray(x, dtype=float))


def null_drift(x, xi, n: CoefficientField) -> np.ndarray:
    return np.abs(np.sum(np.asarray(xi) ** 2, axis=-1) - n(np.asarray(x)))


def _rk4_ensemble(x0, xi0, n, ds, s_max, record_every, R, drift_limit):
    """Integrate all rays with one fixed step; returns traces or None on drift failure.

    Active rays are kept in compact arrays that are only re-indexed when a
    ray escapes, so the per-step cost is four gradient evaluations and one
    evaluation of n.
    """
    grad = n.gradient_evaluator or n.gradient
    N = len(x0)
    n_steps = int(math.ceil(s_max / ds - 1e-9))
    h = ds
    ids = np.arange(N)
    x, p = x0.copy(), xi0.copy()
    rec = [[(0.0, x0[i].copy(), xi0[i].copy())] for i in range(N)]
    escaped = np.zeros(N, dtype=bool)
    escape_s = np.full(N, np.nan)
    max_drift = null_drift(x0, xi0, n)
    r_prev = np.sqrt(np.einsum("ij,ij->i", x0, x0))
    max_r = r_prev.copy()
    last_cross = np.full(N, np.nan)
    for step in range(1, n_steps + 1):
        k1p = grad(x)
        k2p = grad(x + h * p)
        p2 = p + 0.5 * h * k1p
        k3p = grad(x + h * p2)
        p3 = p + 0.5 * h * k2p
        k4p = grad(x + 2 * h * p3)
        p4 = p + h * k3p
        # dx/ds = 2 xi, so the position stages are x + h * (2 xi_j) / 2 etc.
        x = x + h / 3 * (p + 2 * p2 + 2 * p3 + p4)
        p = p + h / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
        s = step * h
        dr = np.abs(np.einsum("ij,ij->i", p, p) - n.evaluator(x))
        if not np.all(np.isfinite(dr)):
            raise IntegrationError("non-finite ray state")
        np.maximum(max_drift[ids], dr, out=dr)
        max_drift[ids] = dr
        if dr.max() > drift_limit:
            return None
        r = np.sqrt(np.einsum("ij,ij->i", x, x))
        max_r[ids] = np.maximum(max_r[ids], r)
        done = None
        if R is not None:
            crossed = (r_prev[ids] <= R) & (r > R)
            if crossed.any():
                ci = ids[crossed]
                frac = (R - r_prev[ci]) / (r[crossed] - r_prev[ci])
                last_cross[ci] = s - h + frac * h
            r_prev[ids] = r
            out = r > ESCAPE_FACTOR * R
            if out.any():
                out &= np.einsum("ij,ij->i", x, p) > 0
                if out.any():
                    done = out
        if step % record_every == 0 or step == n_steps or done is not None:
            for j, i in enumerate(ids):
                if step % record_every == 0 or step == n_steps or done[j]:
                    rec[i].append((s, x[j].copy(), p[j].copy()))
        if done is not None:
            oi = ids[done]
            escaped[oi] = True
            escape_s[oi] = last_cross[oi]
            keep = ~done
            ids, x, p = ids[keep], x[keep], p[keep]
            if not len(ids):
                break
    results = []
    for i in range(N):
        ss, xs, ps = zip(*rec[i])
        results.append(RayTraceResult(
            np.array(ss), np.array(xs), np.array(ps), bool(escaped[i]),
            None if not escaped[i] else float(escape_s[i]), float(max_drift[i]), float(max_r[i]), h, i))
    return results


def integrate_rays(x0, xi0, n: CoefficientField, s_max: float, ds: float = 0.02, record_every: int = 1,
                   R: float | None = None, max_halvings: int = 6) -> list:
    """Integrate an ensemble of rays (rows of ``x0``, ``xi0``).

    If ``R`` is given a ray stops once it is outside ``1.01 R`` moving
    outward; its ``escape_s`` is the last outward crossing of ``|x| = R``.
    The step is halved (and ``record_every`` doubled, keeping the sampling
    interval) whenever the null-condition drift exceeds 1e-6 max(1, n_max).
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    xi0 = np.atleast_2d(np.asarray(xi0, dtype=float))
    if x0.shape != xi0.shape:
        raise ValueError("x0 and xi0 must have the same shape")
    if not (s_max > 0 and ds > 0):
        raise ValueError("s_max and ds must be positive")
    scale = max(1.0, n.n_max)
    launch = null_drift(x0, xi0, n)
    if np.any(launch > LAUNCH_TOL * scale):
        raise ConfigurationError(f"launch violates the null condition by {launch.max():.3e}")
    limit = DRIFT_TOL * scale
    h, rec = float(ds), int(record_every)
    for _ in range(max_halvings + 1):
        out = _rk4_ensemble(x0, xi0, n, h, s_max, rec, R, limit)
        if out is not None:
            return out
        h, rec = h / 2, rec * 2
    raise IntegrationError(f"null-condition drift above {limit:.1e} even at step {h * 2:.3e}")


def integrate_ray(launch: RayState, n: CoefficientField, s_max: float, ds: float = 0.02, record_every: int = 1,
                  R: float | None = None) -> RayTraceResult:
    return integrate_rays(launch.x[None], launch.xi[None], n, s_max, ds, record_every, R)[0]


def null_launch(x0, direction, n: CoefficientField) -> RayState:
    """Launch at x0 along ``direction`` with |xi| = sqrt(n(x0))."""
    x0 = np.asarray(x0, dtype=float)
    d = np.asarray(direction, dtype=float)
    return RayState(x0, d / np.linalg.norm(d) * math.sqrt(float(n(x0[None])[0])), 0.0)


# ---------------------------------------------------------------------------
# geometric identity along rays


@dataclass(frozen=True)
class ConvexityCheck:
    max_deviation: float
    min_second_difference: float
    spacing: float


def _half_r2(x):
    return 0.5 * np.sum(x * x, axis=-1)


def verify_radius_second_derivative(trace: RayTraceResult, n: CoefficientField) -> ConvexityCheck:
    """Centred second differences of |x|^2/2 against 2(2n + x.grad n) at the samples."""
    if len(trace.s) < 3:
        raise ValueError("need at least three samples")
    ds = np.diff(trace.s)
    if np.max(np.abs(ds - ds[0])) > 1e-9 * max(1.0, ds[0]):
        raise ValueError("samples must be uniform in s")
    h = float(ds[0])
    f = _half_r2(trace.x)
    second = (f[2:] - 2 * f[1:-1] + f[:-2]) / h ** 2
    xm = trace.x[1:-1]
    target = 2 * (2 * n(xm) + np.sum(xm * _grad(n)(xm), axis=-1))
    return ConvexityCheck(float(np.max(np.abs(second - target))), float(second.min()), h)


def radius_rate_deviation(trace: RayTraceResult) -> float:
    """max | centred first difference of |x|^2/2 - 2 x.xi | over interior samples."""
    h = float(trace.s[1] - trace.s[0])
    f = _half_r2(trace.x)
    first = (f[2:] - f[:-2]) / (2 * h)
    return float(np.max(np.abs(first - 2 * np.sum(trace.x[1:-1] * trace.xi[1:-1], axis=-1))))


# ---------------------------------------------------------------------------
# classification


def escape_bound(mu: float, R: float, n_max: float) -> float:
    """Smallest s with (mu/2) s^2 - B s - R^2/2 >= 0, B = 2 R sqrt(n_max)."""
    if not mu > 0:
        raise ValueError("escape bound needs mu > 0")
    B = 2 * R * math.sqrt(n_max)
    return (B + math.sqrt(B * B + mu * R * R)) / mu


def launch_ensemble(R: float, count: int, dim: int = 2, fill: float = 0.99) -> tuple:
    """Deterministic quasi-random launch points in B_R and unit directions.

    The first (all-zero) Sobol point is skipped: it would launch from the
    origin exactly, where radial profiles with n'(0) != 0 have a cone point.
    """
    m = int(math.ceil(math.log2(count + 1)))
    if dim == 2:
        u = qmc.Sobol(3, scramble=False).random_base2(m)[1:count + 1]
        rad = fill * R * np.sqrt(u[:, 0])
        x = np.column_stack([rad * np.cos(2 * np.pi * u[:, 1]), rad * np.sin(2 * np.pi * u[:, 1])])
        d = np.column_stack([np.cos(2 * np.pi * u[:, 2]), np.sin(2 * np.pi * u[:, 2])])
        return x, d
    if dim == 3:
        u = qmc.Sobol(5, scramble=False).random_base2(m)[1:count + 1]
        rad = fill * R * np.cbrt(u[:, 0])
        def sphere(a, b):
            z = 2 * a - 1
            t = 2 * np.pi * b
            s = np.sqrt(1 - z * z)
            return np.column_stack([s * np.cos(t), s * np.sin(t), z])
        return rad[:, None] * sphere(u[:, 1], u[:, 2]), sphere(u[:, 3], u[:, 4])
    raise ValueError("dim must be 2 or 3")


@dataclass(frozen=True, eq=False)
class TrappingReport:
    verdict: Verdict
    n_rays: int
    n_escaped: int
    max_escape_s: float
    s_budget: float
    escape_bound: float | None
    all_within_bound: bool | None
    max_null_drift: float
    traces: list = field(default_factory=list, repr=False)

    def summary(self) -> str:
        lines = [f"verdict: {self.verdict.value} (evidence from a finite ray ensemble, not a proof)",
                 f"rays: {self.n_rays}, escaped: {self.n_escaped}, s_budget: {self.s_budget:g}",
                 f"max escape s: {self.max_escape_s:.6g}", f"max null drift: {self.max_null_drift:.3e}"]
        if self.escape_bound is not None:
            lines.append(f"escape bound S(R): {self.escape_bound:.6g}, all within: {self.all_within_bound}")
        return "\n".join(lines)


def classify_trapping(n: CoefficientField, R: float, n_rays: int = 100, s_budget: float | None = None,
                      mu: float | None = None, extra_launches: list | None = None, ds: float = 0.02,
                      record_every: int = 50) -> TrappingReport:
    """Integrate a launch ensemble in B_R and report trapping evidence.

    ``extra_launches`` is a list of ``(x0, direction)`` pairs added after the
    quasi-random ensemble.  With ``mu > 0`` the escape bound S(R) is reported
    and compared with the observed escape parameters.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    if math.isfinite(n.support_radius) and n.support_radius > R:
        raise ConfigurationError(f"supp(1-n) (radius {n.support_radius:g}) is not inside B_R (R = {R:g})")
    s_budget = 1e3 * R if s_budget is None else float(s_budget)
    x, d = launch_ensemble(R, n_rays, n.dim)
    if extra_launches:
        ex = np.array([np.asarray(p, float) for p, _ in extra_launches])
        ed = np.array([np.asarray(q, float) for _, q in extra_launches])
        if np.any(np.linalg.norm(ex, axis=1) >= R):
            raise ConfigurationError("launch point outside B_R")
        x, d = np.concatenate([x, ex]), np.concatenate([d, ed])
    xi = d / np.linalg.norm(d, axis=1, keepdims=True) * np.sqrt(n(x))[:, None]
    traces = integrate_rays(x, xi, n, s_budget, ds, record_every, R)
    esc = [t for t in traces if t.escaped]
    max_s = max((t.escape_s for t in esc), default=0.0)
    verdict = Verdict.NONTRAPPING_EVIDENCE if len(esc) == len(traces) else Verdict.TRAPPING_EVIDENCE
    bound = within = None
    if mu is not None and mu > 0:
        bound = escape_bound(mu, R, n.n_max)
        within = bool(len(esc) == len(traces) and max_s <= bound)
    return TrappingReport(verdict, len(traces), len(esc), float(max_s), s_budget, bound, within,
                          max(t.max_null_drift for t in traces), traces)


# ---------------------------------------------------------------------------
# radial criterion


@dataclass(frozen=True)
class RadialScanResult:
    violating_r: float | None
    min_margin: float
    r_at_min: float


def _radial_margin(profile, r):
    r = np.asarray(r, dtype=float)
    if isinstance(profile, RadialProfile):
        return 2 * profile.value(r) + r * profile.derivative(r)
    x = np.zeros(r.shape + (profile.dim,))
    x[..., 0] = r
    return 2 * profile(x) + r * _grad(profile)(x)[..., 0]


def radial_trapping_scan(profile, r_grid) -> RadialScanResult:
    """Scan 2n(r) + r n'(r); report the first r with a negative value and the minimum."""
    r = np.asarray(r_grid, dtype=float)
    m = _radial_margin(profile, r)
    neg = np.nonzero(m < 0)[0]
    i = int(np.argmin(m))
    return RadialScanResult(float(r[neg[0]]) if len(neg) else None, float(m[i]), float(r[i]))


def circular_orbit_radii(profile, r_max: float, samples: int = 20001) -> list:
    """Roots of 2n + r n' = 0 on (0, r_max], located by sign changes and refined by brentq."""
    r = np.linspace(r_max / samples, r_max, samples)
    m = _radial_margin(profile, r)
    roots = []
    for i in np.nonzero(np.sign(m[:-1]) * np.sign(m[1:]) < 0)[0]:
        roots.append(brentq(lambda t: float(_radial_margin(profile, np.array([t]))[0]), r[i], r[i + 1],
                            xtol=1e-15, rtol=4 * np.finfo(float).eps))
    return roots


def write_trajectories_csv(traces: list, path, n: CoefficientField | None = None) -> None:
    """Columns ray_id, s, x1..xd, xi1..xid, null_drift (nan when ``n`` is not given)."""
    if not traces:
        raise ValueError("no trajectories")
    d = traces[0].x.shape[1]
    head = ["ray_id", "s"] + [f"x{i + 1}" for i in range(d)] + [f"xi{i + 1}" for i in range(d)] + ["null_drift"]
    lines = [",".join(head)]
    for t in traces:
        drift = null_drift(t.x, t.xi, n) if n is not None else np.full(len(t.s), np.nan)
        for s, x, xi, dr in zip(t.s, t.x, t.xi, drift):
            lines.append(",".join([str(t.ray_id), repr(float(s))] + [repr(float(c)) for c in x]
                                  + [repr(float(c)) for c in xi] + [repr(float(dr))]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
