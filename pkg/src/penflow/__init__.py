"""penflow: second-order penalized flows for bilevel convex minimization.

Simulates the damped, geometrically damped, time-penalized dynamics
attached to "minimize Phi over the minimizers of Psi" and verifies its
energy dissipation structure and convergence behavior numerically.
"""

from .oracles import (
    ConstraintOracle,
    FunctionOracle,
    make_affine_distance_constraint,
    make_quadratic,
    make_zero_constraint,
    problem_from_json,
    problem_to_json,
)
from .schedules import (
    ConditionHReport,
    DynamicsParams,
    GrowthReport,
    PenaltySchedule,
    condition_H_check,
    k_max,
    validate_growth,
)
from .flow import (
    FlowState,
    IntegrationError,
    IntegratorControls,
    StiffnessError,
    Trajectory,
    integrate,
    rhs_hessian_direct,
    rhs_hessian_free,
    write_metadata_json,
    write_trajectory_csv,
)
from .lyapunov import (
    ClaimVerdict,
    ConvergenceReport,
    EnergyRecord,
    LyapunovCheck,
    RunningIntegrals,
    VerdictTolerances,
    accumulate_integrals,
    beta_tilde,
    convergence_verdicts,
    delta_one,
    delta_two,
    energy_E,
    energy_delta,
    energy_delta_dot_analytic,
    energy_record,
    lyapunov_inequality_check,
    write_diagnostics_csv,
)
from .gallery import (
    GalleryInstance,
    load_instance,
    solve_reference_kkt,
    standard_gallery,
    verify_reference,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
