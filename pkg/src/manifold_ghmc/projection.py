"""Newton solver for the RATTLE position constraint.

Finds theta such that xi(q_tilde + M^-1 grad_xi(q) theta) = 0, starting
from theta = 0. Success or failure of this solve decides whether a phase
point admits a RATTLE step at all.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .geometry import KAPPA_MAX, GramMatrix


class NewtonCriterion(Enum):
    #: eta = max(|theta - theta_old|, |xi at new theta|)  (default)
    MAX_RESIDUAL_INCREMENT = "max"
    #: eta = |theta - theta_old| * |grad_xi(q)|  (absolute position increment)
    POSITION_INCREMENT = "position"


@dataclass(frozen=True)
class NewtonConfig:
    max_iterations: int = 100
    tolerance: float = 1e-12
    condition_limit: float = KAPPA_MAX
    criterion: NewtonCriterion = NewtonCriterion.MAX_RESIDUAL_INCREMENT
    # converged multipliers larger than this are treated as spurious distant roots
    theta_max: float = 1e6

    def with_criterion(self, criterion: NewtonCriterion) -> "NewtonConfig":
        return replace(self, criterion=criterion)


class ProjectionStatus(Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    SINGULAR_JACOBIAN = "singular_jacobian"


@dataclass(frozen=True)
class ProjectionOutcome:
    status: ProjectionStatus
    theta: np.ndarray
    iterations_used: int
    residual: float

    @property
    def converged(self) -> bool:
        return self.status is ProjectionStatus.CONVERGED


def newton_project(model, q: np.ndarray, q_tilde: np.ndarray,
                   cfg: NewtonConfig = NewtonConfig()) -> ProjectionOutcome:
    """Project ``q_tilde`` onto the manifold along M^-1 grad_xi(q).

    Deterministic given its inputs. The returned theta satisfies
    xi(q_tilde + M^-1 grad_xi(q) theta) = 0 up to the configured tolerance
    when status is CONVERGED.
    """
    gq = model.grad_xi(q)
    direction = model.mass.inv @ gq  # (d, m)
    grad_q_norm = float(np.linalg.norm(gq))

    theta = np.zeros(model.m)
    eta = 2.0 * cfg.tolerance
    k = 0
    residual = float(np.linalg.norm(model.xi(q_tilde)))
    while k <= cfg.max_iterations and eta > cfg.tolerance:
        k += 1
        theta_old = theta
        pos = q_tilde + direction @ theta
        J = GramMatrix.from_matrix(model.grad_xi(pos).T @ direction)
        if J.is_singular(cfg.condition_limit):
            return ProjectionOutcome(ProjectionStatus.SINGULAR_JACOBIAN, theta, k, residual)
        theta = theta - np.linalg.solve(J.matrix, model.xi(pos))
        if not np.all(np.isfinite(theta)):
            return ProjectionOutcome(ProjectionStatus.SINGULAR_JACOBIAN, theta_old, k, residual)
        residual = float(np.linalg.norm(model.xi(q_tilde + direction @ theta)))
        if cfg.criterion is NewtonCriterion.MAX_RESIDUAL_INCREMENT:
            eta = max(float(np.linalg.norm(theta - theta_old)), residual)
        else:
            eta = float(np.linalg.norm(theta - theta_old)) * grad_q_norm

    if eta < cfg.tolerance and float(np.linalg.norm(theta)) <= cfg.theta_max:
        return ProjectionOutcome(ProjectionStatus.CONVERGED, theta, k, residual)
    return ProjectionOutcome(ProjectionStatus.MAX_ITERATIONS, theta, k, residual)
