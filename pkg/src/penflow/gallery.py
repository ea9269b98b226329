"""Canonical problem instances with independently computed references.

Each instance couples a quadratic objective with an affine-distance (or
zero) constraint and records an anchor z in the solution set together
with the optimal value and the equality multiplier. References come from
a dense KKT solve with iterative refinement, never from a trajectory, so
the convergence verdicts remain non-circular.

The shipped gallery:

* G1 ``free-quadratic``    unconstrained 0.5||x||^2 in R^2; the flow
                           reduces to the Newton-like damped oscillator
                           and has a closed-form solution for gamma=lam=1.
* G2 ``hyperplane-strong`` 0.5||x - (1,2)||^2 over {x_1 = 0}; strongly
                           convex with a unique anchor (0, 2).
* G3 ``subspace-flat``     R^5 instance whose objective is flat along a
                           feasible direction: the solution set is a line,
                           exercising convergence without strong convexity.
                           Its KKT matrix is singular by design, so the
                           reference is the minimum-norm stationary point.
* G4 ``degenerate-lg``     the G2 data retagged for runs with
                           gamma*lam = 1, where the smaller perfect-square
                           energy weight vanishes.
* G5 ``midscale``          n=50, m=10 random instance with spectrum in
                           [0.1, 10], generated once from a recorded seed
                           and committed as JSON so the reference is a
                           stable artifact rather than an RNG contract.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .oracles import (
    ConstraintOracle,
    FunctionOracle,
    make_affine_distance_constraint,
    make_quadratic,
    make_zero_constraint,
    problem_from_json,
    problem_to_json,
)

Array = np.ndarray

KKT_RESIDUAL_TOL = 1e-10

#: Recorded seed for the committed G5 data file (regeneration only).
G5_SEED = 734


@dataclass(frozen=True)
class GalleryInstance:
    """Problem, constraint, and independently verified reference."""

    name: str
    problem: FunctionOracle
    constraint: ConstraintOracle
    z: Array
    phi_z: float
    nu: Array
    tags: tuple

    @property
    def mu(self) -> float:
        return self.problem.strong_convexity

    @property
    def dimension(self) -> int:
        return self.problem.dimension

    def reference(self) -> tuple[Array, float]:
        return self.z, self.phi_z


def solve_reference_kkt(Q, b, A=None, c=None) -> tuple[Array, Array]:
    """Stationarity solve for a quadratic over an affine set.

    Solves [[Q, A^T], [A, 0]] (z, nu) = (b, c) by dense factorization with
    iterative refinement, so grad Phi(z) + A^T nu = 0 and A z = c hold to
    1e-10. A singular KKT matrix (solution set not a point, or unbounded)
    is rejected.
    """
    Q = np.asarray(Q, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    n = Q.shape[0]
    if A is None:
        kkt = Q
        rhs = b
        m = 0
    else:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        c = np.asarray(c, dtype=float).reshape(-1)
        m = A.shape[0]
        kkt = np.block([[Q, A.T], [A, np.zeros((m, m))]])
        rhs = np.concatenate([b, c])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"singular KKT matrix: {exc}") from exc
    # Two refinement passes push the residual to a few ulps of the data.
    for _ in range(2):
        sol = sol + np.linalg.solve(kkt, rhs - kkt @ sol)
    scale = 1.0 + float(np.linalg.norm(rhs))
    residual = float(np.linalg.norm(kkt @ sol - rhs))
    if not np.isfinite(residual) or residual > KKT_RESIDUAL_TOL * scale:
        raise ValueError(
            f"KKT solve did not reach residual tolerance ({residual:.3e})")
    return sol[:n], sol[n:]


def _solve_reference_min_norm(Q, b, A, c) -> tuple[Array, Array]:
    """Minimum-norm stationary point for consistent but singular KKT systems.

    Used by instances whose solution set is a nontrivial affine set (the
    objective is flat along feasible directions); any solution anchors the
    diagnostics equally well.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n, m = Q.shape[0], A.shape[0]
    kkt = np.block([[Q, A.T], [A, np.zeros((m, m))]])
    rhs = np.concatenate([np.asarray(b, float).reshape(-1),
                          np.asarray(c, float).reshape(-1)])
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    scale = 1.0 + float(np.linalg.norm(rhs))
    residual = float(np.linalg.norm(kkt @ sol - rhs))
    if residual > KKT_RESIDUAL_TOL * scale:
        raise ValueError(
            f"flat-instance KKT system inconsistent (residual {residual:.3e})")
    return sol[:n], sol[n:]


def verify_reference(inst: GalleryInstance, tol: float = KKT_RESIDUAL_TOL) -> None:
    """Raise unless the stored reference satisfies the optimality system."""
    g = inst.problem.gradient(inst.z)
    if inst.constraint.kind == "zero":
        stationarity = float(np.linalg.norm(g))
    else:
        A, c = inst.constraint.matrix, inst.constraint.rhs
        stationarity = float(np.linalg.norm(g + A.T @ inst.nu))
        feasibility = float(np.linalg.norm(A @ inst.z - c))
        if feasibility > tol * (1.0 + np.linalg.norm(c)):
            raise ValueError(f"{inst.name}: reference infeasible ({feasibility:.3e})")
    if stationarity > tol * (1.0 + np.linalg.norm(g)):
        raise ValueError(f"{inst.name}: stationarity residual {stationarity:.3e}")
    if not np.isfinite(inst.constraint.conjugate_gap(-g)):
        raise ValueError(f"{inst.name}: -grad Phi(z) outside ran N_{{argmin Psi}}")
    if abs(inst.problem.value(inst.z) - inst.phi_z) > 1e-10 * (1.0 + abs(inst.phi_z)):
        raise ValueError(f"{inst.name}: stored optimal value disagrees with oracle")


# ---------------------------------------------------------------------------
# Instance constructors
# ---------------------------------------------------------------------------

def _build_g1() -> GalleryInstance:
    Q = np.eye(2)
    b = np.zeros(2)
    problem = make_quadratic(Q, b)
    constraint = make_zero_constraint(2)
    z, nu = solve_reference_kkt(Q, b)
    return GalleryInstance("G1", problem, constraint, z, problem.value(z),
                           nu, ("psi_zero", "strongly_convex"))


def _build_g2(name: str = "G2", extra_tags: tuple = ()) -> GalleryInstance:
    a = np.array([1.0, 2.0])
    Q = np.eye(2)
    problem = make_quadratic(Q, a, c=0.5 * float(a @ a))
    A = np.array([[1.0, 0.0]])
    c = np.array([0.0])
    constraint = make_affine_distance_constraint(A, c)
    z, nu = solve_reference_kkt(Q, a, A, c)
    return GalleryInstance(name, problem, constraint, z, problem.value(z),
                           nu, ("affine_constrained", "strongly_convex") + extra_tags)


def _build_g3() -> GalleryInstance:
    Q = np.diag([2.0, 3.0, 1.0, 4.0, 0.0])
    b = np.array([0.8, -1.2, 1.0, 2.0, 0.0])
    problem = make_quadratic(Q, b)
    A = np.array([[1.0, 0.0, 0.0, 0.0, 0.0],
                  [0.0, 1.0, 0.0, 0.0, 0.0]])
    c = np.array([0.5, -0.5])
    constraint = make_affine_distance_constraint(A, c)
    # Flat objective direction e_5 lies inside the constraint set, so the
    # square KKT matrix is singular; anchor at the minimum-norm solution.
    z, nu = _solve_reference_min_norm(Q, b, A, c)
    return GalleryInstance("G3", problem, constraint, z, problem.value(z),
                           nu, ("affine_constrained",))


def _build_g4() -> GalleryInstance:
    return _build_g2(name="G4", extra_tags=("degenerate_lg_one",))


def generate_g5(seed: int = G5_SEED) -> GalleryInstance:
    """Regenerate the midscale instance (writes of the committed JSON only)."""
    rng = np.random.default_rng(seed)
    n, m = 50, 10
    basis, _ = np.linalg.qr(rng.standard_normal((n, n)))
    spectrum = np.linspace(0.1, 10.0, n)
    Q = (basis * spectrum) @ basis.T
    Q = 0.5 * (Q + Q.T)
    A = rng.standard_normal((m, n))
    if np.linalg.svd(A, compute_uv=False)[-1] < 1e-6:
        raise RuntimeError("degenerate constraint draw; change the seed")
    z_target = 0.5 * rng.standard_normal(n)
    c = A @ z_target
    nu_raw = rng.standard_normal(m)
    # Moderate optimal-gradient norm keeps the penalty scale (and hence the
    # explicit-integrator budget) reasonable at desk horizons.
    nu_raw *= 0.3 / np.linalg.norm(A.T @ nu_raw)
    b = Q @ z_target + A.T @ nu_raw
    problem = make_quadratic(Q, b)
    constraint = make_affine_distance_constraint(A, c)
    z, nu = solve_reference_kkt(Q, b, A, c)
    return GalleryInstance("G5", problem, constraint, z, problem.value(z),
                           nu, ("affine_constrained", "strongly_convex"))


# ---------------------------------------------------------------------------
# JSON round trip and packaged data
# ---------------------------------------------------------------------------

def instance_to_json(inst: GalleryInstance) -> dict:
    return {
        "name": inst.name,
        "problem": problem_to_json(inst.problem, inst.constraint),
        "reference": {
            "z": inst.z.tolist(),
            "phi_z": float(inst.phi_z),
            "nu": np.asarray(inst.nu).tolist(),
        },
        "tags": list(inst.tags),
    }


def instance_from_json(doc: dict) -> GalleryInstance:
    problem, constraint = problem_from_json(doc["problem"])
    ref = doc["reference"]
    inst = GalleryInstance(
        name=doc["name"],
        problem=problem,
        constraint=constraint,
        z=np.array(ref["z"], dtype=float),
        phi_z=float(ref["phi_z"]),
        nu=np.array(ref["nu"], dtype=float),
        tags=tuple(doc.get("tags", ())),
    )
    verify_reference(inst)
    return inst


def _data_dir():
    return resources.files(__package__) / "gallery_data"


def load_instance(name_or_path: str) -> GalleryInstance:
    """Load a gallery instance by name (packaged data) or JSON file path."""
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        return instance_from_json(json.loads(path.read_text()))
    entry = _data_dir() / f"{name_or_path}.json"
    if not entry.is_file():
        raise FileNotFoundError(f"unknown gallery instance {name_or_path!r}")
    return instance_from_json(json.loads(entry.read_text()))


def standard_gallery() -> list[GalleryInstance]:
    """G1..G4 built in code; G5 read from the committed data file."""
    instances = [_build_g1(), _build_g2(), _build_g3(), _build_g4(),
                 load_instance("G5")]
    for inst in instances:
        verify_reference(inst)
    return instances


def write_gallery_data(directory) -> list[str]:
    """Dump every instance (G5 regenerated from its seed) as JSON documents."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for inst in [_build_g1(), _build_g2(), _build_g3(), _build_g4(), generate_g5()]:
        target = directory / f"{inst.name}.json"
        target.write_text(json.dumps(instance_to_json(inst), indent=1) + "\n")
        written.append(str(target))
    return written


if __name__ == "__main__":  # regenerate packaged data in place
    import sys

    out = sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent / "gallery_data"
    for line in write_gallery_data(out):
        print(line)
