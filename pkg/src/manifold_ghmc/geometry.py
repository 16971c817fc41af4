"""Linear-algebra kernel for the constraint manifold.

Gram matrices, cotangent-space projections and the Lagrange multiplier
solves for the momentum constraint, used by both the RATTLE stage and the
Ornstein-Uhlenbeck stage of the samplers. All operations are pure
functions of immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParams, SingularGram

#: Library-wide tolerance for the phase-point invariants.
EPS_CONSTRAINT = 1e-10

#: Default condition-number threshold above which an m x m system is
#: treated as numerically singular.
KAPPA_MAX = 1e12


@dataclass(frozen=True)
class MassMatrix:
    """Symmetric positive-definite mass tensor with cached factorizations."""

    matrix: np.ndarray
    inv: np.ndarray
    sqrt: np.ndarray
    inv_sqrt: np.ndarray
    is_identity: bool = False

    @staticmethod
    def identity(d: int) -> "MassMatrix":
        eye = np.eye(d)
        return MassMatrix(eye, eye.copy(), eye.copy(), eye.copy(), is_identity=True)

    @staticmethod
    def from_matrix(M: np.ndarray) -> "MassMatrix":
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise InvalidParams("mass matrix must be square")
        sym_err = np.linalg.norm(M - M.T) / max(np.linalg.norm(M), 1.0)
        if sym_err > 1e-12:
            raise InvalidParams(f"mass matrix not symmetric (relative error {sym_err:.2e})")
        w, U = np.linalg.eigh(0.5 * (M + M.T))
        if np.min(w) <= 0.0:
            raise InvalidParams("mass matrix must be positive definite")
        inv = (U / w) @ U.T
        sqrt = (U * np.sqrt(w)) @ U.T
        inv_sqrt = (U / np.sqrt(w)) @ U.T
        is_id = bool(np.allclose(M, np.eye(M.shape[0]), rtol=0, atol=1e-15))
        return MassMatrix(M, inv, sqrt, inv_sqrt, is_identity=is_id)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class GramMatrix:
    """An m x m constraint-Jacobian Gram matrix and a condition estimate."""

    matrix: np.ndarray
    condition_estimate: float = field(default=np.nan)

    @staticmethod
    def from_matrix(G: np.ndarray) -> "GramMatrix":
        G = np.atleast_2d(np.asarray(G, dtype=float))
        s = np.linalg.svd(G, compute_uv=False)
        smax = float(s[0])
        smin = float(s[-1])
        cond = np.inf if smin == 0.0 else smax / smin
        return GramMatrix(G, cond)

    def is_singular(self, kappa_max: float = KAPPA_MAX) -> bool:
        return (not np.isfinite(self.condition_estimate)) or self.condition_estimate >= kappa_max


@dataclass
class PhasePoint:
    """Position/momentum pair intended to satisfy both manifold constraints."""

    q: np.ndarray
    p: np.ndarray

    def copy(self) -> "PhasePoint":
        return PhasePoint(self.q.copy(), self.p.copy())

    def reversed(self) -> "PhasePoint":
        return PhasePoint(self.q.copy(), -self.p)


def constraint_residuals(model, x: PhasePoint) -> tuple[float, float]:
    """Norms of the position and momentum constraint violations at ``x``."""
    pos = float(np.linalg.norm(model.xi(x.q)))
    mom = float(np.linalg.norm(model.grad_xi(x.q).T @ (model.mass.inv @ x.p)))
    return pos, mom


def assert_phase_point(model, x: PhasePoint, eps: float = EPS_CONSTRAINT) -> None:
    pos, mom = constraint_residuals(model, x)
    if pos > eps or mom > eps:
        raise OffManifoldError(pos, mom)


class OffManifoldError(AssertionError):
    def __init__(self, pos: float, mom: float):
        super().__init__(f"phase point violates constraints: |xi|={pos:.3e}, |grad_xi^T Minv p|={mom:.3e}")


def gram(model, q: np.ndarray, q_tilde: np.ndarray | None = None) -> GramMatrix:
    """Bilinear Gram matrix grad_xi(q)^T M^-1 grad_xi(q_tilde).

    With ``q_tilde`` omitted (or equal to ``q``) this is the quadratic
    form whose invertibility defines a valid constraint Jacobian.
    """
    gq = model.grad_xi(q)
    gt = gq if q_tilde is None or q_tilde is q else model.grad_xi(q_tilde)
    return GramMatrix.from_matrix(gq.T @ (model.mass.inv @ gt))


def cotangent_project(model, q: np.ndarray, v: np.ndarray,
                      kappa_max: float = KAPPA_MAX) -> np.ndarray:
    """Orthogonal projection of ``v`` onto the momentum-constraint subspace at ``q``.

    Orthogonality is with respect to the M^-1 scalar product:
    Pi v = v - grad_xi(q) G^-1 grad_xi(q)^T M^-1 v.
    """
    gq = model.grad_xi(q)
    G = gram(model, q)
    if G.is_singular(kappa_max):
        raise SingularGram(f"Gram condition estimate {G.condition_estimate:.3e} >= {kappa_max:.1e}")
    rhs = gq.T @ (model.mass.inv @ v)
    return v - gq @ np.linalg.solve(G.matrix, rhs)


def momentum_lagrange_rattle(model, q: np.ndarray, p: np.ndarray,
                             kappa_max: float = KAPPA_MAX) -> np.ndarray:
    """Multiplier lambda such that p + grad_xi(q) lambda satisfies the momentum constraint."""
    gq = model.grad_xi(q)
    S = gram(model, q)
    if S.is_singular(kappa_max):
        raise SingularGram(f"Gram condition estimate {S.condition_estimate:.3e} >= {kappa_max:.1e}")
    b = gq.T @ (model.mass.inv @ p)
    return -np.linalg.solve(S.matrix, b)


def ou_drift_matrix(model, gamma: float, dt: float) -> np.ndarray:
    """(Id + dt*gamma*M^-1/4)^-1, the implicit factor of the mid-point OU update."""
    d = model.d
    a = np.eye(d) + (dt * gamma / 4.0) * model.mass.inv
    return np.linalg.inv(a)


def momentum_lagrange_ou(model, q: np.ndarray, p: np.ndarray, gamma: float, dt: float,
                         kappa_max: float = KAPPA_MAX) -> np.ndarray:
    """Multiplier for the momentum constraint in the mid-point OU half-step.

    Solves S lambda = -b with S = grad_xi^T M^-1 W grad_xi,
    b = grad_xi^T M^-1 p and W = (Id + dt*gamma*M^-1/4)^-1, so that
    p + W grad_xi(q) lambda satisfies the momentum constraint.
    """
    gq = model.grad_xi(q)
    W = ou_drift_matrix(model, gamma, dt)
    S = GramMatrix.from_matrix(gq.T @ (model.mass.inv @ (W @ gq)))
    if S.is_singular(kappa_max):
        raise SingularGram(f"OU multiplier system condition {S.condition_estimate:.3e} >= {kappa_max:.1e}")
    b = gq.T @ (model.mass.inv @ p)
    return -np.linalg.solve(S.matrix, b)


def hamiltonian(model, q: np.ndarray, p: np.ndarray) -> float:
    return float(model.V(q) + 0.5 * p @ (model.mass.inv @ p))
