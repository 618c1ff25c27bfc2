"""Explicit stability constants for the heterogeneous Helmholtz problem.

Two settings are covered:

* the exterior Dirichlet problem posed on the whole exterior domain, with the
  bounded region of interest of radius ``R`` (functions ``constant_C1``,
  ``edp_constants``);
* the truncated problem with an impedance condition on an outer polygon of
  radius ``L_I`` (``tedp_beta``, ``tedp_constants``).

Every formula is evaluated literally; no simplification or re-derivation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

K_MIN_FACTOR = math.sqrt(3.0 / 8.0)


class DomainError(ValueError):
    """An input lies outside the range where a bound is stated."""


class EdpCase(str, enum.Enum):
    A2 = "A2_case"
    N3 = "N3_case"


class TedpCase(str, enum.Enum):
    A1 = "cond_A1alt"
    A2 = "cond_A2alt"
    N3 = "cond_N3alt"


def _positive(**kw) -> None:
    for name, value in kw.items():
        if value is None or not (value > 0) or math.isnan(value):
            raise DomainError(f"{name} must be positive, got {value!r}")


def _dim(d) -> int:
    if d not in (2, 3):
        raise DomainError(f"dimension must be 2 or 3, got {d!r}")
    return int(d)


@dataclass(frozen=True)
class StabilityConstants:
    """Bundle of constants; fields not defined for a case are ``None``."""

    mu: tuple = ()
    C1: float | None = None
    C2: float | None = None
    C3: float | None = None
    C4: float | None = None
    C5: float | None = None
    beta: float | None = None
    C1_tilde: float | None = None
    C2_tilde: float | None = None
    C3_tilde: float | None = None
    infsup_lower: float | None = None
    inputs_echo: dict = field(default_factory=dict)
    note: str = ""

    def as_rows(self) -> list:
        """Flat ``(name, value)`` rows, skipping undefined entries."""
        rows = []
        for i, m in enumerate(self.mu):
            if m is not None:
                rows.append((f"mu{i + 1}", m))
        for name in ("C1", "C2", "C3", "C4", "C5", "beta", "C1_tilde", "C2_tilde", "C3_tilde", "infsup_lower"):
            v = getattr(self, name)
            if v is not None:
                rows.append((name, v))
        rows += [(f"input.{k}", v) for k, v in self.inputs_echo.items()]
        return rows


# ---------------------------------------------------------------------------
# exterior problem


def constant_C1(mu1: float, mu2: float, R: float, d: int, k: float) -> float:
    """C1 = 4 [R^2/mu1 + (R + (d-1)/(2k))^2 / mu2]."""
    _positive(mu1=mu1, mu2=mu2, R=R, k=k)
    d = _dim(d)
    return 4.0 * (R * R / mu1 + (R + (d - 1) / (2.0 * k)) ** 2 / mu2)


def constant_C2(mu3: float, A_max: float, R: float, d: int, k: float) -> float:
    """C2 = (4/mu3)(R^2 + (R+1+d/(2k))^2)(1 + 4 A_max + 24 A_max^2/k^2)^2 + 4 mu3/k^2."""
    _positive(mu3=mu3, A_max=A_max, R=R, k=k)
    d = _dim(d)
    return ((4.0 / mu3) * (R * R + (R + 1.0 + d / (2.0 * k)) ** 2)
            * (1.0 + 4.0 * A_max + 24.0 * A_max ** 2 / k ** 2) ** 2 + 4.0 * mu3 / k ** 2)


def constants_C3_C5(mu4: float, n_max: float, R: float, L_D: float, a: float, d: int, k: float) -> tuple:
    """(C3, C4, C5) for the n-condition with Dirichlet data; needs k >= sqrt(3/8)/R."""
    _positive(mu4=mu4, n_max=n_max, R=R, L_D=L_D, a=a, k=k)
    d = _dim(d)
    k_min = K_MIN_FACTOR / R
    if k < k_min:
        raise DomainError(f"k = {k:g} is below the admissible threshold sqrt(3/8)/R = {k_min:.6g}; "
                          "the C3-C5 bounds are only stated for k >= sqrt(3/8)/R")
    q = 1.0 + 1.5 * n_max
    C3 = (4.0 / mu4) * (R * R + (2.0 * R + (d - 2) / (2.0 * k)) ** 2) * q ** 2 + 2.0 * mu4 / (k * k * n_max)
    C4 = 2.0 * q * L_D * (1.0 + 4.0 / a)
    C5 = 2.0 * q * (4.0 / (a * L_D)) * (2.0 * R + (d - 2) / (2.0 * k)) ** 2 + 2.0 * mu4 ** 2 / (a * L_D * k * k)
    return C3, C4, C5


def edp_constants(case: EdpCase | str, *, k: float, d: int, R: float, mu3: float | None = None,
                  A_max: float | None = None, mu4: float | None = None, n_max: float | None = None,
                  L_D: float | None = None, a: float | None = None) -> StabilityConstants:
    """Constants for the A-only condition (C2) or the n-only condition (C3, C4, C5)."""
    case = EdpCase(case)
    if case is EdpCase.A2:
        C2 = constant_C2(mu3, A_max, R, d, k)
        return StabilityConstants(mu=(None, None, mu3, None), C2=C2,
                                  inputs_echo=dict(k=k, d=d, R=R, A_max=A_max))
    C3, C4, C5 = constants_C3_C5(mu4, n_max, R, L_D, a, d, k)
    return StabilityConstants(mu=(None, None, None, mu4), C3=C3, C4=C4, C5=C5,
                              inputs_echo=dict(k=k, d=d, R=R, L_D=L_D, a_D=a, n_max=n_max))


# ---------------------------------------------------------------------------
# truncated problem


def tedp_beta(L_I: float, theta_min: float, theta_max: float, n_max_GammaI: float, a: float, k: float) -> float:
    """beta = (L_I/theta_min)(1 + n_max,GammaI + 1/(k L_I)^2 + 2 theta_max^2 (1 + 2/a))."""
    _positive(L_I=L_I, theta_min=theta_min, theta_max=theta_max, n_max_GammaI=n_max_GammaI, a=a, k=k)
    return (L_I / theta_min) * (1.0 + n_max_GammaI + 1.0 / (k * L_I) ** 2 + 2.0 * theta_max ** 2 * (1.0 + 2.0 / a))


def tedp_C1_tilde(L_I: float, a: float, beta: float, theta_min: float, d: int) -> float:
    _positive(L_I=L_I, a=a, beta=beta, theta_min=theta_min)
    d = _dim(d)
    return 2.0 * (2.0 * (1.0 + 2.0 / a) + beta / (theta_min * L_I) + (d - 1) ** 2 / 4.0) * L_I


def tedp_constants(case: TedpCase | str, *, k: float, d: int, L_I: float, a_I: float, theta_min: float = 1.0,
                   theta_max: float = 1.0, n_max_GammaI: float = 1.0, mu1: float | None = None,
                   mu2: float | None = None, mu3: float | None = None, A_max: float | None = None,
                   mu4: float | None = None, n_max: float | None = None, L_D: float | None = None,
                   a_D: float | None = None) -> StabilityConstants:
    """Constants of the truncated problem for the three coefficient conditions.

    ``cond_A1alt`` gives C1 and C1~, ``cond_A2alt`` gives C2 and C2~,
    ``cond_N3alt`` gives C3, C3~, C4 and C5.  ``a_I`` is the star-shape ball
    fraction of the outer polygon; ``L_D``, ``a_D`` those of the obstacle.
    """
    case = TedpCase(case)
    d = _dim(d)
    beta = tedp_beta(L_I, theta_min, theta_max, n_max_GammaI, a_I, k)
    C1t = tedp_C1_tilde(L_I, a_I, beta, theta_min, d)
    echo = dict(k=k, d=d, L_I=L_I, a_I=a_I, theta_min=theta_min, theta_max=theta_max, n_max_GammaI=n_max_GammaI)
    if case is TedpCase.A1:
        _positive(mu1=mu1, mu2=mu2)
        C1 = 4.0 * (L_I ** 2 / mu1 + (beta + (d - 1) / (2.0 * k)) ** 2 / mu2)
        return StabilityConstants(mu=(mu1, mu2, None, None), C1=C1, beta=beta, C1_tilde=C1t, inputs_echo=echo)
    if case is TedpCase.A2:
        _positive(mu3=mu3, A_max=A_max)
        q = 1.0 + 2.0 * A_max
        C2 = 2.0 * ((2.0 / mu3) * q ** 2 * (L_I ** 2 + (beta + d / (2.0 * k)) ** 2) + mu3 / k ** 2)
        C2t = q * C1t + 4.0 * mu3 ** 2 / (L_I * k ** 2)
        echo["A_max"] = A_max
        return StabilityConstants(mu=(None, None, mu3, None), C2=C2, beta=beta, C1_tilde=C1t, C2_tilde=C2t,
                                  inputs_echo=echo)
    _positive(mu4=mu4, n_max=n_max, L_D=L_D, a_D=a_D)
    q = 1.0 + 1.5 * n_max
    C3 = 2.0 * ((2.0 / mu4) * q ** 2 * (L_I ** 2 + (beta + (d - 2) / (2.0 * k)) ** 2) + mu4 / (2.0 * k ** 2 * n_max))
    C3t = q * C1t + 2.0 * mu4 ** 2 / (L_I * k ** 2)
    C4 = 2.0 * q * L_D * (1.0 + 4.0 / a_D)
    C5 = 2.0 * (q * (4.0 / (a_D * L_D)) * (beta + (d - 2) / (2.0 * k)) ** 2 + 2.0 * mu4 ** 2 / (a_D * L_D))
    echo.update(n_max=n_max, L_D=L_D, a_D=a_D)
    return StabilityConstants(mu=(None, None, None, mu4), C3=C3, C4=C4, C5=C5, beta=beta, C1_tilde=C1t,
                              C3_tilde=C3t, inputs_echo=echo,
                              note="third part is labelled (iv) in the source; exposed here as part_N3")


def infsup_lower_bound(A_min: float, n_min: float, n_max: float, mu_min: float, C1: float, k: float) -> float:
    """min(A_min, n_min) / (1 + 2 sqrt(C1/mu_min) n_max k)."""
    _positive(A_min=A_min, n_min=n_min, n_max=n_max, mu_min=mu_min, C1=C1, k=k)
    return min(A_min, n_min) / (1.0 + 2.0 * math.sqrt(C1 / mu_min) * n_max * k)


# ---------------------------------------------------------------------------
# cutoff function


def cutoff_F(t):
    """F(t) = t^2 (3 - 2t) and F'(t) = 6 t (1 - t) on [0, 1]."""
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t > 1)) or np.any(np.isnan(t)):
        raise DomainError("cutoff argument must lie in [0, 1]")
    return t * t * (3.0 - 2.0 * t), 6.0 * t * (1.0 - t)


def _ratio_M(t):
    """(F')^2 / F with the t^2 factor cancelled: 36 (1-t)^2 / (3-2t)."""
    return 36.0 * (1.0 - t) ** 2 / (3.0 - 2.0 * t)


def _ratio_six(t):
    """(F')^2 / (F (2-F)) with t^2 cancelled: 36 (1-t)^2 / ((3-2t)(2 - t^2(3-2t)))."""
    return 36.0 * (1.0 - t) ** 2 / ((3.0 - 2.0 * t) * (2.0 - t * t * (3.0 - 2.0 * t)))


@dataclass(frozen=True)
class CutoffReport:
    sup_ratio_M: float
    sup_ratio_six: float
    limit_M: float
    limit_six: float
    max_formula_mismatch: float
    holds: bool


def verify_cutoff_properties(n_grid: int = 100001) -> CutoffReport:
    """Check sup (F')^2/F <= 12 and sup (F')^2/(F(2-F)) <= 6 on [0, 1].

    The ratios are evaluated in cancelled form on a dense grid including
    t = 0 (the analytic limit point); the uncancelled quotient is compared to
    the cancelled form on the interior of the grid.
    """
    t = np.linspace(0.0, 1.0, n_grid)
    rM, r6 = _ratio_M(t), _ratio_six(t)
    inner = t[1:-1]
    F, dF = cutoff_F(inner)
    direct_M = dF ** 2 / F
    direct_6 = dF ** 2 / (F * (2.0 - F))
    mismatch = max(float(np.max(np.abs(direct_M - rM[1:-1]) / np.maximum(1.0, rM[1:-1]))),
                   float(np.max(np.abs(direct_6 - r6[1:-1]) / np.maximum(1.0, r6[1:-1]))))
    sup_M, sup_6 = float(rM.max()), float(r6.max())
    lim_M, lim_6 = float(_ratio_M(0.0)), float(_ratio_six(0.0))
    holds = sup_M <= 12.0 + 1e-12 and sup_6 <= 6.0 + 1e-12 and mismatch < 1e-9
    return CutoffReport(sup_M, sup_6, lim_M, lim_6, mismatch, bool(holds))
