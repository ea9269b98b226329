"""Function oracles for the objective and the penalized constraint.

An oracle bundles value / gradient / Hessian-vector-product callables with
the smoothness certificates (Lipschitz constants, strong convexity modulus,
lower bound) that the flow and the energy diagnostics rely on. Constraint
oracles additionally expose the metric projection onto their argmin set and
the Fenchel conjugate gap

    gap(p) = Psi*(p) - sigma_{argmin Psi}(p) >= 0,

which drives the integrability condition on the penalty schedule.

Only two constraint families are provided: squared distance to an affine
set, and the identically-zero function (unconstrained case). Squared
distance to a general convex set is only C^1 on the boundary, so it cannot
honestly claim the twice-differentiability the analysis assumes; we do not
ship such an instance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Array = np.ndarray

#: Relative eigenvalue floor below which a quadratic matrix is rejected as
#: indefinite; negatives above the floor are treated as exact zeros.
PSD_EIG_FLOOR = 1e-10

#: Relative tolerance for deciding that a slope p is orthogonal to the
#: tangent space of an affine constraint set (finite conjugate-gap branch).
NORMAL_RANGE_TOL = 1e-9


@dataclass(frozen=True)
class FunctionOracle:
    """Twice continuously differentiable convex function on R^n.

    Immutable after construction; safe to share across concurrent sweeps.

    Attributes
    ----------
    dimension : int
        Ambient dimension n.
    value, gradient : callables
        f(x) and grad f(x).
    hess_vec : callable
        (x, d) -> Hessian of f at x applied to direction d.
    grad_lipschitz : float
        Lipschitz constant of grad f.
    hess_lipschitz : float
        Lipschitz constant of the Hessian map (0 for quadratics).
    strong_convexity : float
        Modulus mu >= 0; 0 means merely convex.
    lower_bound : float
        A certified lower bound inf f.
    affine_gradient : (G, g) or None
        Present when grad f(x) = G x + g exactly; enables the compiled
        integration fast path.
    """

    dimension: int
    value: Callable[[Array], float]
    gradient: Callable[[Array], Array]
    hess_vec: Callable[[Array, Array], Array]
    grad_lipschitz: float
    hess_lipschitz: float
    strong_convexity: float
    lower_bound: float
    affine_gradient: tuple[Array, Array] | None = field(default=None, repr=False)


@dataclass(frozen=True)
class ConstraintOracle:
    """Constraint function Psi >= 0 with min value 0 and argmin structure.

    Attributes
    ----------
    base : FunctionOracle
        Psi itself (value / gradient / hess_vec and certificates).
    argmin_project : callable
        Metric projection onto argmin Psi.
    conjugate_gap : callable
        p -> Psi*(p) - sigma_{argmin Psi}(p); returns +inf when p is not in
        the range of the normal cone to argmin Psi.
    argmin_contains : callable
        (x, tol) -> bool membership test for argmin Psi.
    kind : str
        "affine_distance" or "zero"; used by serialization and reports.
    matrix, rhs : arrays or None
        For the affine family, the defining system A x = c.
    """

    base: FunctionOracle
    argmin_project: Callable[[Array], Array]
    conjugate_gap: Callable[[Array], float]
    argmin_contains: Callable[[Array, float], bool]
    kind: str
    matrix: Array | None = field(default=None, repr=False)
    rhs: Array | None = field(default=None, repr=False)

    def tangent_basis(self) -> Array:
        """Orthonormal basis (columns) of the tangent space of argmin Psi.

        For the zero constraint the argmin is the whole space, hence the
        identity. Used by the finite-dimensional optimality test.
        """
        n = self.base.dimension
        if self.kind == "zero":
            return np.eye(n)
        from scipy.linalg import null_space

        return null_space(self.matrix)


def _as_vector(x, n: int) -> Array:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (n,):
        raise ValueError(f"expected vector of length {n}, got shape {x.shape}")
    return x


def make_quadratic(Q, b, c: float = 0.0, lower_bound: float | None = None) -> FunctionOracle:
    """Quadratic oracle f(x) = 0.5 <Qx, x> - <b, x> + c with Q symmetric PSD.

    The gradient Qx - b is Lipschitz with constant ||Q||_2 and the Hessian
    is constant. strong_convexity is the smallest eigenvalue of Q (clipped
    to 0 when within rounding noise of zero). The lower bound is computed
    from the stationarity system Qx = b whenever it is consistent;
    otherwise the caller must certify one.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError(f"Q must be square, got shape {Q.shape}")
    n = Q.shape[0]
    b = _as_vector(b, n)
    scale = float(np.linalg.norm(Q, 2)) if n else 0.0
    if not np.allclose(Q, Q.T, atol=1e-12 * max(scale, 1.0)):
        raise ValueError("Q must be symmetric")
    Q = 0.5 * (Q + Q.T)
    eigs = np.linalg.eigvalsh(Q)
    if eigs[0] < -PSD_EIG_FLOOR * max(scale, 1.0):
        raise ValueError(f"Q is not positive semidefinite (min eigenvalue {eigs[0]:.3e})")
    mu = max(float(eigs[0]), 0.0)

    if lower_bound is None:
        # Stationary point exists iff b in range(Q); least squares finds it.
        xstar, *_ = np.linalg.lstsq(Q, b, rcond=None)
        residual = np.linalg.norm(Q @ xstar - b)
        if residual > 1e-8 * (1.0 + np.linalg.norm(b)):
            raise ValueError(
                "quadratic is unbounded below (b not in range(Q)); "
                "pass an explicit lower_bound"
            )
        lower_bound = float(0.5 * xstar @ (Q @ xstar) - b @ xstar + c)

    def value(x: Array) -> float:
        return float(0.5 * x @ (Q @ x) - b @ x + c)

    def gradient(x: Array) -> Array:
        return Q @ x - b

    def hess_vec(x: Array, d: Array) -> Array:
        return Q @ d

    return FunctionOracle(
        dimension=n,
        value=value,
        gradient=gradient,
        hess_vec=hess_vec,
        grad_lipschitz=float(eigs[-1]) if n else 0.0,
        hess_lipschitz=0.0,
        strong_convexity=mu,
        lower_bound=float(lower_bound),
        affine_gradient=(Q, -b),
    )


def make_affine_distance_constraint(A, c) -> ConstraintOracle:
    """Constraint Psi(x) = 0.5 * dist(x, C)^2 for the affine set C = {Ax = c}.

    A must have full row rank. Psi is quadratic: its gradient x - P_C(x) is
    1-Lipschitz and its Hessian is the constant orthogonal projector onto
    the normal space range(A^T).

    On the finite branch (p orthogonal to the tangent space null(A)) the
    conjugate gap is exactly 0.5 ||p||^2: the support-function shift
    sigma_C(p) = <p, xbar> cancels between Psi*(p) = 0.5||p||^2 + sigma_C(p)
    and sigma_C(p). Off that branch both terms are +inf and the gap is
    reported as the +inf sentinel, matching the fact that the integrability
    condition only quantifies over the range of the normal cone.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m, n = A.shape
    c = _as_vector(c, m)
    svals = np.linalg.svd(A, compute_uv=False)
    if m > n or svals[-1] <= 1e-10 * svals[0]:
        raise ValueError("A must have full row rank")
    # Cholesky of the (SPD) Gram matrix A A^T backs both the projection and
    # the Hessian-vector product.
    from scipy.linalg import cho_factor, cho_solve

    gram = cho_factor(A @ A.T)

    def normal_component(v: Array) -> Array:
        return A.T @ cho_solve(gram, A @ v)

    # grad Psi(x) = A^T (A A^T)^{-1} (A x - c), an affine map G x + g.
    G = A.T @ cho_solve(gram, A)
    g = -A.T @ cho_solve(gram, c)

    def project(x: Array) -> Array:
        return x - A.T @ cho_solve(gram, A @ x - c)

    def value(x: Array) -> float:
        r = x - project(x)
        return float(0.5 * r @ r)

    def gradient(x: Array) -> Array:
        return x - project(x)

    def hess_vec(x: Array, d: Array) -> Array:
        return normal_component(d)

    def conjugate_gap(p: Array) -> float:
        p = np.asarray(p, dtype=float)
        tangential = p - normal_component(p)
        if np.linalg.norm(tangential) > NORMAL_RANGE_TOL * max(1.0, np.linalg.norm(p)):
            return np.inf
        return float(0.5 * p @ p)

    def contains(x: Array, tol: float = 1e-8) -> bool:
        return bool(np.linalg.norm(x - project(x)) <= tol)

    base = FunctionOracle(
        dimension=n,
        value=value,
        gradient=gradient,
        hess_vec=hess_vec,
        grad_lipschitz=1.0,
        hess_lipschitz=0.0,
        strong_convexity=1.0 if m == n else 0.0,
        lower_bound=0.0,
        affine_gradient=(G, g),
    )
    return ConstraintOracle(
        base=base,
        argmin_project=project,
        conjugate_gap=conjugate_gap,
        argmin_contains=contains,
        kind="affine_distance",
        matrix=A,
        rhs=c,
    )


def make_zero_constraint(n: int) -> ConstraintOracle:
    """The unconstrained case Psi = 0: argmin Psi = R^n.

    The conjugate and the support function both equal the indicator of
    {0}, so the gap is 0 at p = 0 and +inf elsewhere.
    """
    zero_vec = np.zeros(n)

    def value(x: Array) -> float:
        return 0.0

    def gradient(x: Array) -> Array:
        return np.zeros_like(x)

    def hess_vec(x: Array, d: Array) -> Array:
        return np.zeros_like(d)

    def conjugate_gap(p: Array) -> float:
        p = np.asarray(p, dtype=float)
        return 0.0 if np.linalg.norm(p) <= NORMAL_RANGE_TOL else np.inf

    base = FunctionOracle(
        dimension=n,
        value=value,
        gradient=gradient,
        hess_vec=hess_vec,
        grad_lipschitz=0.0,
        hess_lipschitz=0.0,
        strong_convexity=0.0,
        lower_bound=0.0,
        affine_gradient=(np.zeros((n, n)), zero_vec),
    )
    return ConstraintOracle(
        base=base,
        argmin_project=lambda x: np.array(x, dtype=float),
        conjugate_gap=conjugate_gap,
        argmin_contains=lambda x, tol=1e-8: True,
        kind="zero",
    )


# ---------------------------------------------------------------------------
# JSON problem documents
# ---------------------------------------------------------------------------

def problem_to_json(phi: FunctionOracle, psi: ConstraintOracle) -> dict:
    """Serializable document for a (objective, constraint) pair.

    Matrices are dense row-major nested lists. Only oracle families built
    by this module round-trip; arbitrary callables do not.
    """
    if phi.affine_gradient is None:
        raise ValueError("only quadratic objectives are serializable")
    G, g = phi.affine_gradient
    # Recover the 0.5<Qx,x> - <b,x> + c parameters: Q = G, b = -g.
    b = -g
    c = phi.value(np.zeros(phi.dimension))
    doc: dict = {
        "phi": {
            "type": "quadratic",
            "Q": G.tolist(),
            "b": b.tolist(),
            "c": float(c),
            "lower_bound": phi.lower_bound,
        }
    }
    if psi.kind == "zero":
        doc["psi"] = {"type": "zero", "n": psi.base.dimension}
    else:
        doc["psi"] = {
            "type": "affine_distance",
            "A": psi.matrix.tolist(),
            "c": psi.rhs.tolist(),
        }
    return doc


def problem_from_json(doc: dict) -> tuple[FunctionOracle, ConstraintOracle]:
    """Inverse of :func:`problem_to_json`."""
    phi_doc = doc["phi"]
    if phi_doc["type"] != "quadratic":
        raise ValueError(f"unknown objective type {phi_doc['type']!r}")
    phi = make_quadratic(
        np.array(phi_doc["Q"], dtype=float),
        np.array(phi_doc["b"], dtype=float),
        float(phi_doc.get("c", 0.0)),
        lower_bound=phi_doc.get("lower_bound"),
    )
    psi_doc = doc["psi"]
    if psi_doc["type"] == "zero":
        psi = make_zero_constraint(int(psi_doc.get("n", phi.dimension)))
    elif psi_doc["type"] == "affine_distance":
        psi = make_affine_distance_constraint(
            np.array(psi_doc["A"], dtype=float),
            np.array(psi_doc["c"], dtype=float),
        )
    else:
        raise ValueError(f"unknown constraint type {psi_doc['type']!r}")
    if psi.base.dimension != phi.dimension:
        raise ValueError("objective and constraint dimensions disagree")
    return phi, psi


def problem_to_json_str(phi: FunctionOracle, psi: ConstraintOracle) -> str:
    return json.dumps(problem_to_json(phi, psi))
