"""Penalty schedules beta(t), growth validation, and the integrability check.

Three analytic families are supported (tabulated schedules are not: the
derivative beta_dot enters the dynamics and must be exact):

* ``shifted_power``:  beta(t) = scale * (t + t0)^alpha, alpha > 1
* ``exponential``:    beta(t) = beta0 * exp(c t)
* ``constant``:       beta(t) = beta0

The growth condition requires 0 <= beta_dot <= k beta with

    k < k_max = theta / (1 + lambda gamma) * min(2 gamma / 3, 2 / lambda)

strictly, for theta in (0, 1). The shifted-power family has its largest
ratio beta_dot/beta = alpha/t0 at t = 0, so compliance amounts to choosing
t0 >= alpha / k_max; shifting the classical (1+t)^alpha example this way is
what reconciles the growth bound with the integrability requirement, which
the two hypotheses otherwise leave in tension near t = 0.

The constant family trivially satisfies the growth bound but does not tend
to +infinity; it is kept for ablation runs and flagged via
``tends_to_infinity``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .oracles import ConstraintOracle

FAMILIES = ("shifted_power", "exponential", "constant")


@dataclass(frozen=True)
class PenaltySchedule:
    """Analytic penalty function with exact derivative.

    Use the factory classmethods; the generic constructor does not
    validate parameter ranges.
    """

    family: str
    params: tuple[float, ...]

    @classmethod
    def shifted_power(cls, alpha: float, t0: float, scale: float = 1.0) -> "PenaltySchedule":
        if alpha <= 1.0:
            raise ValueError("shifted_power requires alpha > 1")
        if t0 <= 0.0 or scale <= 0.0:
            raise ValueError("shifted_power requires t0 > 0 and scale > 0")
        return cls("shifted_power", (float(alpha), float(t0), float(scale)))

    @classmethod
    def exponential(cls, beta0: float, c: float) -> "PenaltySchedule":
        if beta0 <= 0.0 or c <= 0.0:
            raise ValueError("exponential requires beta0 > 0 and c > 0")
        return cls("exponential", (float(beta0), float(c)))

    @classmethod
    def constant(cls, beta0: float) -> "PenaltySchedule":
        if beta0 <= 0.0:
            raise ValueError("constant requires beta0 > 0")
        return cls("constant", (float(beta0),))

    def beta(self, t):
        if self.family == "shifted_power":
            alpha, t0, scale = self.params
            return scale * (t + t0) ** alpha
        if self.family == "exponential":
            beta0, c = self.params
            return beta0 * np.exp(c * np.asarray(t, dtype=float)) if np.ndim(t) else beta0 * math.exp(c * t)
        (beta0,) = self.params
        return beta0 * np.ones_like(t, dtype=float) if np.ndim(t) else beta0

    def beta_dot(self, t):
        if self.family == "shifted_power":
            alpha, t0, scale = self.params
            return scale * alpha * (t + t0) ** (alpha - 1.0)
        if self.family == "exponential":
            beta0, c = self.params
            return c * self.beta(t)
        return np.zeros_like(t, dtype=float) if np.ndim(t) else 0.0

    @property
    def tends_to_infinity(self) -> bool:
        return self.family != "constant"

    def sup_growth_ratio(self) -> float:
        """Exact sup over t >= 0 of beta_dot(t) / beta(t)."""
        if self.family == "shifted_power":
            alpha, t0, _ = self.params
            return alpha / t0
        if self.family == "exponential":
            return self.params[1]
        return 0.0

    def integral_inv_beta_converges(self) -> bool:
        """Whether int_0^inf dt / beta(t) is finite."""
        return self.family != "constant"

    def integral_inv_beta(self, lo: float, hi: float | None = None) -> float:
        """int_lo^hi dt / beta(t); hi = None means the infinite tail."""
        if self.family == "shifted_power":
            alpha, t0, scale = self.params
            # antiderivative of (t+t0)^(-alpha): (t+t0)^(1-alpha)/(1-alpha)
            upper = 0.0 if hi is None else (hi + t0) ** (1.0 - alpha) / (1.0 - alpha)
            lower = (lo + t0) ** (1.0 - alpha) / (1.0 - alpha)
            return (upper - lower) / scale
        if self.family == "exponential":
            beta0, c = self.params
            upper = 0.0 if hi is None else -math.exp(-c * hi) / c
            lower = -math.exp(-c * lo) / c
            return (upper - lower) / beta0
        (beta0,) = self.params
        if hi is None:
            return math.inf
        return (hi - lo) / beta0

    def to_json(self) -> dict:
        if self.family == "shifted_power":
            alpha, t0, scale = self.params
            return {"family": "shifted_power", "alpha": alpha, "t0": t0, "scale": scale}
        if self.family == "exponential":
            beta0, c = self.params
            return {"family": "exponential", "beta0": beta0, "c": c}
        return {"family": "constant", "beta0": self.params[0]}

    @classmethod
    def from_json(cls, doc: dict) -> "PenaltySchedule":
        family = doc.get("family")
        if family == "shifted_power":
            return cls.shifted_power(doc["alpha"], doc["t0"], doc.get("scale", 1.0))
        if family == "exponential":
            return cls.exponential(doc["beta0"], doc["c"])
        if family == "constant":
            return cls.constant(doc["beta0"])
        raise ValueError(f"unknown schedule family {family!r}")


@dataclass(frozen=True)
class DynamicsParams:
    """Damping / geometric-damping coefficients and the threshold parameter.

    gamma and lam are the viscous and Hessian damping weights; theta in
    (0, 1) sets how close the certified growth constant may come to the
    admissible ceiling.
    """

    gamma: float
    lam: float
    theta: float = 0.9

    def __post_init__(self):
        if self.gamma <= 0.0 or self.lam <= 0.0:
            raise ValueError("gamma and lam must be positive")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")

    @property
    def k_max(self) -> float:
        return self.theta / (1.0 + self.lam * self.gamma) * min(2.0 * self.gamma / 3.0, 2.0 / self.lam)

    @property
    def epsilon(self) -> float:
        return self.theta * min(2.0 * self.gamma / 3.0, 2.0 / self.lam)


def k_max(params: DynamicsParams) -> float:
    """Admissible ceiling for the growth constant k."""
    return params.k_max


@dataclass(frozen=True)
class GrowthReport:
    """Outcome of checking 0 <= beta_dot <= k beta with k below the ceiling."""

    family: str
    sup_ratio_grid: float
    sup_ratio_analytic: float
    k_max: float
    certified_k: float
    tends_to_infinity: bool
    passed: bool

    def to_json(self) -> dict:
        return {
            "check": "growth_condition",
            "family": self.family,
            "sup_beta_dot_over_beta_grid": self.sup_ratio_grid,
            "sup_beta_dot_over_beta": self.sup_ratio_analytic,
            "k_max": self.k_max,
            "certified_k": self.certified_k,
            "tends_to_infinity": self.tends_to_infinity,
            "passed": self.passed,
        }


def validate_growth(
    schedule: PenaltySchedule,
    params: DynamicsParams,
    horizon: float = 100.0,
    grid_points: int = 2001,
) -> GrowthReport:
    """Check the growth condition on a grid and by the per-family closed form.

    A failure is a verdict, not an exception. The certified k carried
    downstream (into the shrunken penalty) is the analytic sup of
    beta_dot/beta, which keeps the shrink factor as large as the analysis
    permits while staying positive.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    if grid_points < 2:
        raise ValueError("need at least two grid points")
    ts = np.linspace(0.0, horizon, grid_points)
    ratio = np.asarray(schedule.beta_dot(ts)) / np.asarray(schedule.beta(ts))
    sup_grid = float(ratio.max())
    sup_analytic = schedule.sup_growth_ratio()
    ceiling = params.k_max
    passed = sup_analytic < ceiling and sup_grid < ceiling
    return GrowthReport(
        family=schedule.family,
        sup_ratio_grid=sup_grid,
        sup_ratio_analytic=sup_analytic,
        k_max=ceiling,
        certified_k=sup_analytic,
        tends_to_infinity=schedule.tends_to_infinity,
        passed=passed,
    )


@dataclass(frozen=True)
class ConditionHReport:
    """Outcome of the penalty integrability check for a slope p.

    ``numeric_integral`` is the quadrature of t -> beta(t) * gap(p/beta(t))
    over [0, horizon]; ``closed_form_total`` is the exact value of the full
    improper integral when the constraint family admits one (affine
    distance: the integrand is ||p||^2 / (2 beta(t))).
    """

    numeric_integral: float
    horizon: float
    closed_form_total: float | None
    tail_convergent: bool | None
    passed: bool
    diagnostic: str = ""

    def to_json(self) -> dict:
        total = self.closed_form_total
        return {
            "check": "penalty_integrability",
            "numeric_integral_to_horizon": self.numeric_integral,
            "horizon": self.horizon,
            "closed_form_total": None if total is None else (total if math.isfinite(total) else "inf"),
            "tail_convergent": self.tail_convergent,
            "passed": self.passed,
            "diagnostic": self.diagnostic,
        }


def _adaptive_simpson(f, a: float, b: float, tol: float) -> float:
    """Classic recursive adaptive Simpson with absolute tolerance."""

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return recurse(a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + recurse(
            m, b, fm, frm, fb, right, tol / 2.0, depth - 1
        )

    fa, fb = f(a), f(b)
    fm = f(0.5 * (a + b))
    whole = simpson(fa, fm, fb, a, b)
    return recurse(a, b, fa, fm, fb, whole, tol, depth=50)


QUADRATURE_ABS_TOL = 1e-8


def condition_H_check(
    constraint: ConstraintOracle,
    p,
    schedule: PenaltySchedule,
    horizon: float = 1000.0,
) -> ConditionHReport:
    """Check integrability of beta(t) * gap(p / beta(t)) over [0, infinity).

    The quadrature covers [0, horizon]; the exact tail verdict comes from
    the closed form available for the shipped constraint families. A +inf
    sentinel from the conjugate gap means p is outside the range of the
    normal cone and the check fails with a diagnostic.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    p = np.asarray(p, dtype=float)

    gap_at_p = constraint.conjugate_gap(p / schedule.beta(0.0))
    if not math.isfinite(gap_at_p):
        return ConditionHReport(
            numeric_integral=math.inf,
            horizon=horizon,
            closed_form_total=math.inf,
            tail_convergent=False,
            passed=False,
            diagnostic="p not in ran N_{argmin Psi}",
        )

    def integrand(t: float) -> float:
        bt = schedule.beta(t)
        return bt * constraint.conjugate_gap(p / bt)

    numeric = _adaptive_simpson(integrand, 0.0, horizon, QUADRATURE_ABS_TOL)

    p_sq = float(p @ p)
    if constraint.kind == "zero" or p_sq == 0.0:
        # Integrand is identically zero on the finite branch.
        closed_total: float | None = 0.0
        convergent: bool | None = True
    elif constraint.kind == "affine_distance":
        convergent = schedule.integral_inv_beta_converges()
        closed_total = 0.5 * p_sq * schedule.integral_inv_beta(0.0) if convergent else math.inf
    else:
        closed_total = None
        convergent = None

    passed = bool(convergent) if convergent is not None else False
    diagnostic = "" if passed else "divergent tail: int 1/beta = +inf with p != 0"
    return ConditionHReport(
        numeric_integral=float(numeric),
        horizon=horizon,
        closed_form_total=closed_total,
        tail_convergent=convergent,
        passed=passed,
        diagnostic=diagnostic,
    )
