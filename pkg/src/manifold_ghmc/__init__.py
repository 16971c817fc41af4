"""Sampling probability measures on submanifolds defined by constraints.

Metropolis-adjusted constrained Hamiltonian dynamics (HMC, MALA, GHMC)
built on the RATTLE integrator with momentum reversal and a reverse
projection check that makes the proposal map an exact involution.
"""

from .errors import (
    ChainAbort,
    InvalidParams,
    ManifoldGHMCError,
    OffManifold,
    RejectionBudgetExceeded,
    SingularGram,
)
from .geometry import (
    GramMatrix,
    MassMatrix,
    PhasePoint,
    cotangent_project,
    gram,
    hamiltonian,
    momentum_lagrange_ou,
    momentum_lagrange_rattle,
)
from .integrator import (
    RattleConfig,
    RattleStepResult,
    ReverseCheckMode,
    StepClassification,
    psi_rev,
    psi_rev_k,
    rattle_one_step,
)
from .models import (
    MODEL_REGISTRY,
    ConstraintModel,
    Potential,
    TorusParams,
    angle_coordinates,
    check_gradients,
    circle_model,
    get_model,
    sphere_model,
    torus_model,
    torus_point,
)
from .projection import NewtonConfig, NewtonCriterion, ProjectionStatus, newton_project
from .sampler import (
    ChainState,
    RejectionTally,
    SamplerConfig,
    Scheme,
    StepOutcome,
    ghmc_step,
    hmc_step,
    make_rng,
    run_chain,
    sample_tangent_gaussian,
    sample_tangent_gaussian_truncated,
)

__version__ = "1.0.0"

__all__ = [name for name in dir() if not name.startswith("_")]
