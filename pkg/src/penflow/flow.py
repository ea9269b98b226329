"""Second-order penalized flow as a first-order system, plus integrators.

The dynamics

    xddot + gamma xdot + lam HPhi(x) xdot + lam beta(t) HPsi(x) xdot
        + grad Phi(x) + (beta(t) + lam beta_dot(t)) grad Psi(x) = 0

admit two equivalent first-order formulations:

* Hessian-free (the primary one). With the auxiliary variable
  y = xdot + lam grad Phi(x) + lam beta(t) grad Psi(x), differentiating y
  and substituting the system cancels every second-order term:

      xdot = y - lam grad Phi(x) - lam beta(t) grad Psi(x)
      ydot = -gamma xdot - grad Phi(x) - beta(t) grad Psi(x)

  No Hessian is evaluated, and y is exactly the quantity the energy
  functionals track, so diagnostics read it off the state.

* Hessian-direct in (x, v): v' = -gamma v - lam HPhi(x) v
  - lam beta(t) HPsi(x) v - grad Phi(x) - (beta + lam beta_dot) grad Psi(x).
  Retained purely for cross-validation of the primary form.

Integration is explicit Runge-Kutta: classic fixed-step RK4, or the
Dormand-Prince 5(4) embedded pair with error-per-step control
(safety 0.9, exponent 1/5, step-ratio clamp [0.2, 5]). Because the
effective curvature of the penalized term grows like beta(t), the adaptive
step is additionally capped by

    beta_step_scale / (1 + lam * beta(t) * L_Psi),

with L_Psi the gradient Lipschitz constant of the constraint; when even
that cap underflows min_step the integrator raises a stiffness error
carrying the last good state. Output samples are decoupled from accepted
steps via cubic Hermite interpolation on a caller-chosen uniform cadence,
and the five monitored integrals are accumulated by trapezoid at every
accepted step.

For quadratic objectives with affine-distance (or zero) constraints both
gradients are affine maps and the whole adaptive loop runs in a compiled
kernel; the pure-Python driver implements the identical controller and is
used for opaque oracles, for the Hessian-direct form, and as a
cross-check.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .oracles import ConstraintOracle, FunctionOracle
from .schedules import DynamicsParams, PenaltySchedule, validate_growth
from .lyapunov import RunningIntegrals

Array = np.ndarray

# Dormand-Prince 5(4) tableau. The fifth-order solution propagates; the
# difference to the embedded fourth-order one estimates the local error.
DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
DP_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
DP_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
ERROR_EXPONENT = -0.2  # err^(-1/5)


class IntegrationError(RuntimeError):
    """Integration failed; carries partial output when available."""

    def __init__(self, message: str, trajectory=None, state=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.state = state


class StiffnessError(IntegrationError):
    """Adaptive step underflowed min_step (problem too stiff for the method)."""


@dataclass(frozen=True)
class FlowState:
    """Instantaneous state (t, x, y) of the Hessian-free formulation."""

    t: float
    x: Array
    y: Array

    def velocity(self, problem, constraint, schedule, params) -> Array:
        """Recover xdot = y - lam grad Phi(x) - lam beta(t) grad Psi(x)."""
        beta = schedule.beta(self.t)
        return self.y - params.lam * (
            problem.gradient(self.x) + beta * constraint.base.gradient(self.x)
        )


@dataclass(frozen=True)
class IntegratorControls:
    """Stepping policy. See module docstring for the controller constants."""

    method: str = "adaptive45"  # "adaptive45" | "fixed_rk4"
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = math.inf
    min_step: float = 1e-12
    fixed_step: float = 1e-2
    beta_step_scale: float = 2.0
    use_fast_path: bool = True
    max_steps: int = 50_000_000

    def __post_init__(self):
        if self.method not in ("adaptive45", "fixed_rk4"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.method == "fixed_rk4" and self.fixed_step <= 0:
            raise ValueError("fixed_step must be positive")

    @classmethod
    def fixed_rk4(cls, step: float) -> "IntegratorControls":
        return cls(method="fixed_rk4", fixed_step=step)

    @classmethod
    def adaptive(cls, rel_tol: float = 1e-8, abs_tol: float = 1e-10,
                 **kw) -> "IntegratorControls":
        return cls(method="adaptive45", rel_tol=rel_tol, abs_tol=abs_tol, **kw)


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution with recovered velocities and running integrals.

    Arrays are row-per-sample; times strictly increase from 0 and every
    entry is finite (enforced at construction). Immutable once produced.
    """

    t: Array
    x: Array
    v: Array
    y: Array
    beta: Array
    phi: Array
    psi: Array
    integrals: RunningIntegrals
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.t) == 0:
            raise ValueError("empty trajectory")
        if np.any(np.diff(self.t) <= 0.0):
            raise ValueError("sample times must be strictly increasing")
        for name in ("t", "x", "v", "y", "beta", "phi", "psi"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in trajectory field {name!r}")

    @property
    def dimension(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return len(self.t)

    def state_at(self, i: int) -> FlowState:
        return FlowState(t=float(self.t[i]), x=self.x[i], y=self.y[i])


# ---------------------------------------------------------------------------
# Right-hand sides
# ---------------------------------------------------------------------------

def rhs_hessian_free(state: FlowState, problem, constraint, schedule, params):
    """(dx, dy) of the Hessian-free form; no second-order oracle calls."""
    beta = schedule.beta(state.t)
    gphi = problem.gradient(state.x)
    gpsi = constraint.base.gradient(state.x)
    dx = state.y - params.lam * (gphi + beta * gpsi)
    dy = -params.gamma * dx - gphi - beta * gpsi
    return dx, dy


def rhs_hessian_direct(state, problem, constraint, schedule, params):
    """(dx, dv) of the original second-order system in (x, v) variables."""
    t, x, v = state
    beta = schedule.beta(t)
    beta_dot = schedule.beta_dot(t)
    dv = (
        -params.gamma * v
        - params.lam * problem.hess_vec(x, v)
        - params.lam * beta * constraint.base.hess_vec(x, v)
        - problem.gradient(x)
        - (beta + params.lam * beta_dot) * constraint.base.gradient(x)
    )
    return v, dv


# ---------------------------------------------------------------------------
# Integration driver
# ---------------------------------------------------------------------------

def _output_grid(t_end: float, cadence: float) -> Array:
    n = int(math.floor(t_end / cadence + 1e-9))
    times = np.arange(n + 1, dtype=float) * cadence
    if times[-1] < t_end * (1.0 - 1e-12):
        times = np.append(times, t_end)
    else:
        times[-1] = t_end
    return times


def integrate(problem: FunctionOracle, constraint: ConstraintOracle,
              schedule: PenaltySchedule, params: DynamicsParams,
              u0, v0, t_end: float,
              controls: IntegratorControls | None = None,
              cadence: float | None = None,
              reference=None,
              certified_k: float | None = None,
              formulation: str = "hessian_free",
              ablation: bool = False) -> Trajectory:
    """Integrate the flow from (u0, v0) over [0, t_end].

    ``reference`` is an optional (z, phi_z) pair enabling the anchored
    integrals; ``cadence`` selects uniform output sampling (None emits at
    every accepted step). Unless ``ablation`` is set, the schedule must
    pass the growth validation. Raises StiffnessError / IntegrationError
    with partial output attached on failure.
    """
    if t_end <= 0.0:
        raise ValueError("t_end must be positive")
    if formulation not in ("hessian_free", "hessian_direct"):
        raise ValueError(f"unknown formulation {formulation!r}")
    controls = controls or IntegratorControls()
    n = problem.dimension
    if constraint.base.dimension != n:
        raise ValueError("objective and constraint dimensions disagree")
    u0 = np.asarray(u0, dtype=float).reshape(-1)
    v0 = np.asarray(v0, dtype=float).reshape(-1)
    if u0.shape != (n,) or v0.shape != (n,):
        raise ValueError(f"u0 and v0 must have length {n}")

    growth = validate_growth(schedule, params)
    if not growth.passed and not ablation:
        raise ValueError(
            "schedule violates the growth condition "
            f"(sup beta_dot/beta = {growth.sup_ratio_analytic:.6g} >= "
            f"k_max = {growth.k_max:.6g}); set ablation=True to force"
        )
    if certified_k is None:
        certified_k = growth.certified_k
    lemma_coef = 1.0 - certified_k * (1.0 + params.gamma * params.lam) / params.epsilon

    z = phi_z = None
    if reference is not None:
        z = np.asarray(reference[0], dtype=float).reshape(-1)
        phi_z = float(reference[1])
        grad_phi_z = problem.gradient(z)
    else:
        grad_phi_z = np.full(n, np.nan)

    out_times = None if cadence is None else _output_grid(t_end, cadence)

    wall0 = time.perf_counter()
    fast_ok = (
        controls.use_fast_path
        and controls.method == "adaptive45"
        and formulation == "hessian_free"
        and out_times is not None
        and problem.affine_gradient is not None
        and constraint.base.affine_gradient is not None
    )
    if fast_ok:
        from . import _fastpath

        if _fastpath.AVAILABLE:
            result = _fastpath.run_adaptive(
                problem, constraint, schedule, params, u0, v0, controls,
                out_times, z, grad_phi_z, phi_z, lemma_coef)
            return _finalize(result, problem, constraint, schedule, params,
                             controls, formulation, certified_k, wall0, fast_path=True)

    result = _integrate_python(problem, constraint, schedule, params, u0, v0,
                               t_end, controls, out_times, z, grad_phi_z,
                               phi_z, lemma_coef, formulation)
    return _finalize(result, problem, constraint, schedule, params, controls,
                     formulation, certified_k, wall0, fast_path=False)


@dataclass
class _RawResult:
    t: list | Array
    x: list | Array
    v: list | Array
    y: list | Array
    q: list | Array  # cumulative integrals per emitted sample, shape (N, 5)
    status: int  # 0 ok, 1 stiffness, 2 non-finite, 3 step budget
    t_last: float
    x_last: Array
    y_last: Array
    n_accept: int
    n_reject: int
    n_rhs: int


_STATUS_MESSAGES = {
    1: "step size underflowed min_step (stiffness)",
    2: "non-finite state encountered",
    3: "step budget exceeded",
}


def _finalize(raw: _RawResult, problem, constraint, schedule, params,
              controls, formulation, certified_k, wall0, fast_path: bool) -> Trajectory:
    t = np.asarray(raw.t, dtype=float)
    X = np.asarray(raw.x, dtype=float)
    V = np.asarray(raw.v, dtype=float)
    Y = np.asarray(raw.y, dtype=float)
    Q = np.asarray(raw.q, dtype=float)

    metadata = {
        "method": controls.method,
        "formulation": formulation,
        "fast_path": fast_path,
        "rel_tol": controls.rel_tol,
        "abs_tol": controls.abs_tol,
        "max_step": controls.max_step,
        "min_step": controls.min_step,
        "beta_step_scale": controls.beta_step_scale,
        "fixed_step": controls.fixed_step if controls.method == "fixed_rk4" else None,
        "steps_accepted": int(raw.n_accept),
        "steps_rejected": int(raw.n_reject),
        "rhs_evaluations": int(raw.n_rhs),
        "certified_k": certified_k,
        "wall_time_s": time.perf_counter() - wall0,
    }

    trajectory = None
    if len(t) >= 2:
        from .lyapunov import _values_along

        beta = np.asarray(schedule.beta(t), dtype=float)
        phi = _values_along(X, problem)
        psi = _values_along(X, constraint.base)
        integrals = RunningIntegrals(
            t=t,
            int_beta_psi=Q[:, 0],
            int_speed_sq=Q[:, 1],
            int_grad_comb_sq=Q[:, 2],
            int_inner_gradz=Q[:, 3],
            int_lemma_iii=Q[:, 4],
        )
        trajectory = Trajectory(t=t, x=X, v=V, y=Y, beta=beta, phi=phi,
                                psi=psi, integrals=integrals, metadata=metadata)

    if raw.status != 0:
        msg = (f"{_STATUS_MESSAGES[raw.status]} at t = {raw.t_last:.6g} "
               f"(accepted {raw.n_accept} steps)")
        cls = StiffnessError if raw.status == 1 else IntegrationError
        raise cls(msg, trajectory=trajectory,
                  state=(raw.t_last, raw.x_last, raw.y_last))
    return trajectory


def _integrate_python(problem, constraint, schedule, params, u0, v0, t_end,
                      controls, out_times, z, grad_phi_z, phi_z, lemma_coef,
                      formulation) -> _RawResult:
    """Reference driver: same controller as the compiled kernel."""
    n = problem.dimension
    lam, gamma = params.lam, params.gamma
    lpsi = constraint.base.grad_lipschitz
    has_ref = z is not None

    beta0 = schedule.beta(0.0)
    gphi0 = problem.gradient(u0)
    gpsi0 = constraint.base.gradient(u0)
    y0 = v0 + lam * (gphi0 + beta0 * gpsi0)

    if formulation == "hessian_free":
        s = np.concatenate([u0, y0])

        def f(t, s):
            x, y = s[:n], s[n:]
            beta = schedule.beta(t)
            gphi = problem.gradient(x)
            gpsi = constraint.base.gradient(x)
            dx = y - lam * (gphi + beta * gpsi)
            return np.concatenate([dx, -gamma * dx - gphi - beta * gpsi])

        def split(t, s):
            x, y = s[:n], s[n:]
            beta = schedule.beta(t)
            v = y - lam * (problem.gradient(x) + beta * constraint.base.gradient(x))
            return x, v, y
    else:
        s = np.concatenate([u0, v0])

        def f(t, s):
            x, v = s[:n], s[n:]
            dx, dv = rhs_hessian_direct((t, x, v), problem, constraint, schedule, params)
            return np.concatenate([dx, dv])

        def split(t, s):
            x, v = s[:n], s[n:]
            beta = schedule.beta(t)
            y = v + lam * (problem.gradient(x) + beta * constraint.base.gradient(x))
            return x, v, y

    def integrand(t, s):
        x, v, y = split(t, s)
        beta = schedule.beta(t)
        gphi = problem.gradient(x)
        gpsi = constraint.base.gradient(x)
        comb = gphi + beta * gpsi
        psi_val = constraint.base.value(x)
        q = np.empty(5)
        q[0] = beta * psi_val
        q[1] = v @ v
        q[2] = comb @ comb
        if has_ref:
            q[3] = grad_phi_z @ (x - z)
            q[4] = problem.value(x) - phi_z + lemma_coef * q[0]
        else:
            q[3] = np.nan
            q[4] = np.nan
        return q, x, v, y

    ts, xs, vs, ys, qs = [], [], [], [], []
    cum = np.zeros(5)
    out_idx = 0

    t = 0.0
    q_now, x_now, v_now, y_now = integrand(t, s)
    # sample at t = 0
    if out_times is None or (len(out_times) and out_times[0] <= 1e-15):
        ts.append(0.0)
        xs.append(x_now)
        vs.append(v_now)
        ys.append(y_now)
        qs.append(cum.copy())
        out_idx = 1

    def cap(t):
        return controls.beta_step_scale / (1.0 + lam * schedule.beta(t) * lpsi)

    status, n_accept, n_reject, n_rhs = 0, 0, 0, 0

    if controls.method == "fixed_rk4":
        f0 = f(t, s)
        n_rhs += 1
        while t < t_end * (1.0 - 1e-15):
            h = min(controls.fixed_step, t_end - t)
            k1 = f0
            k2 = f(t + 0.5 * h, s + 0.5 * h * k1)
            k3 = f(t + 0.5 * h, s + 0.5 * h * k2)
            k4 = f(t + h, s + h * k3)
            n_rhs += 3
            s_new = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t_new = t_end if t + h >= t_end * (1.0 - 1e-15) else t + h
            if not np.all(np.isfinite(s_new)):
                status = 2
                break
            f1 = f(t_new, s_new)
            n_rhs += 1
            out_idx, cum = _emit_window(
                out_times, out_idx, t, s, k1, t_new, s_new, f1,
                cum, integrand, ts, xs, vs, ys, qs)
            t, s, f0 = t_new, s_new, f1
            n_accept += 1
            if n_accept > controls.max_steps:
                status = 3
                break
    else:
        k1 = f(t, s)
        n_rhs += 1
        h = min(1e-3, cap(t), controls.max_step, t_end)
        rejected_last = False
        while t < t_end * (1.0 - 1e-15):
            h = min(h, cap(t), controls.max_step, t_end - t)
            if h < controls.min_step:
                status = 1
                break
            if n_accept + n_reject > controls.max_steps:
                status = 3
                break
            k2 = f(t + DP_C[1] * h, s + h * (DP_A[1][0] * k1))
            k3 = f(t + DP_C[2] * h, s + h * (DP_A[2][0] * k1 + DP_A[2][1] * k2))
            k4 = f(t + DP_C[3] * h,
                   s + h * (DP_A[3][0] * k1 + DP_A[3][1] * k2 + DP_A[3][2] * k3))
            k5 = f(t + DP_C[4] * h,
                   s + h * (DP_A[4][0] * k1 + DP_A[4][1] * k2 + DP_A[4][2] * k3
                            + DP_A[4][3] * k4))
            k6 = f(t + h,
                   s + h * (DP_A[5][0] * k1 + DP_A[5][1] * k2 + DP_A[5][2] * k3
                            + DP_A[5][3] * k4 + DP_A[5][4] * k5))
            s_new = s + h * (DP_B[0] * k1 + DP_B[2] * k3 + DP_B[3] * k4
                             + DP_B[4] * k5 + DP_B[5] * k6)
            k7 = f(t + h, s_new)
            n_rhs += 6
            err_vec = h * (DP_E[0] * k1 + DP_E[2] * k3 + DP_E[3] * k4
                           + DP_E[4] * k5 + DP_E[5] * k6 + DP_E[6] * k7)
            scale = controls.abs_tol + controls.rel_tol * np.maximum(
                np.abs(s), np.abs(s_new))
            finite = np.all(np.isfinite(s_new)) and np.all(np.isfinite(err_vec))
            err = math.sqrt(float(np.mean((err_vec / scale) ** 2))) if finite else math.inf

            if err <= 1.0:
                t_new = t_end if t + h >= t_end * (1.0 - 1e-15) else t + h
                out_idx, cum = _emit_window(
                    out_times, out_idx, t, s, k1, t_new, s_new, k7,
                    cum, integrand, ts, xs, vs, ys, qs)
                t, s, k1 = t_new, s_new, k7
                n_accept += 1
                factor = MAX_FACTOR if err == 0.0 else min(
                    MAX_FACTOR, max(MIN_FACTOR, SAFETY * err ** ERROR_EXPONENT))
                if rejected_last:
                    factor = min(1.0, factor)
                h *= factor
                rejected_last = False
            else:
                n_reject += 1
                factor = MIN_FACTOR if not finite else min(
                    1.0, max(MIN_FACTOR, SAFETY * err ** ERROR_EXPONENT))
                h *= factor
                rejected_last = True

    x_last, v_last, y_last = split(t, s)
    return _RawResult(t=ts, x=xs, v=vs, y=ys, q=qs, status=status,
                      t_last=t, x_last=np.array(x_last), y_last=np.array(y_last),
                      n_accept=n_accept, n_reject=n_reject, n_rhs=n_rhs)


def _emit_window(out_times, out_idx, t0, s0, f0, t1, s1, f1, cum,
                 integrand, ts, xs, vs, ys, qs):
    """Emit samples in (t0, t1] and advance the step-level integrals."""
    h = t1 - t0
    q0 = integrand(t0, s0)[0]
    if out_times is None:
        q1, x1v, v1v, y1v = integrand(t1, s1)
        ts.append(t1)
        xs.append(x1v)
        vs.append(v1v)
        ys.append(y1v)
        cum = cum + h * 0.5 * (q0 + q1)
        qs.append(cum.copy())
        return out_idx, cum
    while out_idx < len(out_times) and out_times[out_idx] <= t1 + 1e-12 * max(1.0, t1):
        tau = min(out_times[out_idx], t1)
        theta = (tau - t0) / h
        h00 = 2 * theta**3 - 3 * theta**2 + 1
        h10 = theta**3 - 2 * theta**2 + theta
        h01 = -2 * theta**3 + 3 * theta**2
        h11 = theta**3 - theta**2
        s_tau = h00 * s0 + h10 * h * f0 + h01 * s1 + h11 * h * f1
        q_tau, x_tau, v_tau, y_tau = integrand(tau, s_tau)
        ts.append(tau)
        xs.append(x_tau)
        vs.append(v_tau)
        ys.append(y_tau)
        qs.append(cum + (tau - t0) * 0.5 * (q0 + q_tau))
        out_idx += 1
    q1 = integrand(t1, s1)[0]
    cum = cum + h * 0.5 * (q0 + q1)
    return out_idx, cum


# ---------------------------------------------------------------------------
# File output
# ---------------------------------------------------------------------------

def write_trajectory_csv(path, trajectory: Trajectory) -> None:
    """One row per sample: t,x_1..x_n,v_1..v_n,beta,phi,psi at 17 digits."""
    n = trajectory.dimension
    header = ["t"] + [f"x_{i+1}" for i in range(n)] + [f"v_{i+1}" for i in range(n)]
    header += ["beta", "phi", "psi"]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(trajectory)):
            row = [trajectory.t[i], *trajectory.x[i], *trajectory.v[i],
                   trajectory.beta[i], trajectory.phi[i], trajectory.psi[i]]
            fh.write(",".join("%.17g" % val for val in row) + "\n")


def write_metadata_json(path, trajectory: Trajectory) -> None:
    with open(path, "w") as fh:
        json.dump(trajectory.metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")
