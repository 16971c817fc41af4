"""Markov-chain layer: momentum resampling, Metropolis acceptance, HMC/GHMC.

The reference implementations here are plain NumPy and work for any
ConstraintModel. ``run_chain`` transparently dispatches long runs on
bundled models (scalar constraint, identity mass) to compiled kernels
that consume the random stream in exactly the same order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import ChainAbort, InvalidParams, RejectionBudgetExceeded, SingularGram
from .geometry import (
    KAPPA_MAX,
    GramMatrix,
    PhasePoint,
    cotangent_project,
    hamiltonian,
    momentum_lagrange_ou,
    ou_drift_matrix,
)
from .integrator import RattleConfig, ReverseCheckMode, StepClassification, psi_rev_k
from .models import ConstraintModel

TRUNCATION_TRIAL_BUDGET = 1_000_000


class Scheme(Enum):
    MRW = "mrw"            # HMC with zero forces in the proposal, K = 1
    HMC = "hmc"
    MALA = "mala"          # HMC with forces and K = 1
    GHMC_STRANG = "ghmc-strang"
    GHMC_LT = "ghmc-lt"


class StepOutcome(Enum):
    ACCEPTED = 0
    NEWTON_FORWARD = 1
    NEWTON_REVERSE = 2
    NON_REVERSIBLE = 3
    METROPOLIS = 4


_CLASSIFICATION_TO_OUTCOME = {
    StepClassification.NEWTON_FORWARD_FAIL: StepOutcome.NEWTON_FORWARD,
    StepClassification.NEWTON_REVERSE_FAIL: StepOutcome.NEWTON_REVERSE,
    StepClassification.NON_REVERSIBLE: StepOutcome.NON_REVERSIBLE,
}


@dataclass
class RejectionTally:
    accepted: int = 0
    newton_forward: int = 0
    newton_reverse: int = 0
    non_reversible: int = 0
    metropolis: int = 0

    @property
    def attempts(self) -> int:
        return (self.accepted + self.newton_forward + self.newton_reverse
                + self.non_reversible + self.metropolis)

    def record(self, outcome: StepOutcome) -> None:
        name = outcome.name.lower()
        setattr(self, name, getattr(self, name) + 1)

    def merge(self, other: "RejectionTally") -> "RejectionTally":
        return RejectionTally(*(getattr(self, f) + getattr(other, f)
                                for f in ("accepted", "newton_forward", "newton_reverse",
                                          "non_reversible", "metropolis")))

    def rates(self) -> dict[str, float]:
        n = self.attempts
        return {f: getattr(self, f) / n for f in
                ("accepted", "newton_forward", "newton_reverse", "non_reversible", "metropolis")}

    @staticmethod
    def from_counts(counts: np.ndarray) -> "RejectionTally":
        return RejectionTally(*(int(c) for c in counts))


@dataclass(frozen=True)
class SamplerConfig:
    scheme: Scheme
    rattle: RattleConfig
    gamma: float = 0.0            # friction (GHMC_STRANG)
    alpha: float | None = None    # momentum-mixing coefficient (GHMC_LT)
    K: int = 1                    # RATTLE sub-steps per proposal
    momentum_cap: float | None = None  # R such that |p|^2 <= R (HMC family only)
    seed: int = 0

    def __post_init__(self):
        if self.scheme in (Scheme.MALA, Scheme.MRW) and self.K != 1:
            raise InvalidParams(f"{self.scheme.value} requires K = 1")
        if self.scheme is Scheme.MRW and self.rattle.use_forces:
            raise InvalidParams("mrw requires use_forces = False")
        if self.scheme is Scheme.MALA and not self.rattle.use_forces:
            raise InvalidParams("mala requires use_forces = True")
        if self.scheme is Scheme.GHMC_LT:
            if self.alpha is None or not (0.0 <= self.alpha <= 1.0):
                raise InvalidParams("ghmc-lt requires alpha in [0, 1]")
        if self.scheme is Scheme.GHMC_STRANG and self.gamma < 0.0:
            raise InvalidParams("ghmc-strang requires gamma >= 0")
        if self.momentum_cap is not None:
            if self.momentum_cap <= 0.0:
                raise InvalidParams("momentum_cap must be positive")
            if self.scheme not in (Scheme.HMC, Scheme.MALA, Scheme.MRW):
                raise InvalidParams("momentum_cap applies to the HMC family only")
        if self.K < 1:
            raise InvalidParams("K must be >= 1")


@dataclass
class ChainState:
    x: PhasePoint
    step_index: int
    rng: np.random.Generator


def make_rng(seed: int, stream: int | None = None) -> np.random.Generator:
    """Counter-based generator; distinct ``stream`` values give independent streams."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=() if stream is None else (stream,))
    return np.random.Generator(np.random.Philox(ss))


def initial_state(model: ConstraintModel, cfg: SamplerConfig,
                  q0: np.ndarray | None = None, p0: np.ndarray | None = None) -> ChainState:
    q = np.array(model.default_q0 if q0 is None else q0, dtype=float)
    p = np.zeros(model.d) if p0 is None else np.array(p0, dtype=float)
    return ChainState(PhasePoint(q, p), 0, make_rng(cfg.seed))


def sample_tangent_gaussian(model: ConstraintModel, q: np.ndarray,
                            rng: np.random.Generator) -> np.ndarray:
    """Draw from the Gaussian on the cotangent space at ``q`` induced by the mass tensor."""
    G = rng.standard_normal(model.d)
    return cotangent_project(model, q, model.mass.sqrt @ G)


def sample_tangent_gaussian_truncated(model: ConstraintModel, q: np.ndarray, cap: float,
                                      rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample the tangent Gaussian until |p|^2 <= cap."""
    if cap <= 0.0:
        raise InvalidParams("truncation radius must be positive")
    for _ in range(TRUNCATION_TRIAL_BUDGET):
        p = sample_tangent_gaussian(model, q, rng)
        if float(p @ p) <= cap:
            return p
    raise RejectionBudgetExceeded(
        f"no draw with |p|^2 <= {cap} in {TRUNCATION_TRIAL_BUDGET} trials")


def _resample_momentum(model, q, cfg: SamplerConfig, rng) -> np.ndarray:
    if cfg.momentum_cap is not None:
        return sample_tangent_gaussian_truncated(model, q, cfg.momentum_cap, rng)
    return sample_tangent_gaussian(model, q, rng)


def _metropolis(model, x_old: PhasePoint, result, rng) -> tuple[PhasePoint, StepOutcome]:
    """Shared accept/reject block; on rejection the pre-proposal state is kept."""
    if not result.proposed:
        return x_old, _CLASSIFICATION_TO_OUTCOME[result.classification]
    prop = result.proposal
    d_h = hamiltonian(model, prop.q, prop.p) - hamiltonian(model, x_old.q, x_old.p)
    u = rng.random()
    if math.log(u) <= -d_h:
        return prop, StepOutcome.ACCEPTED
    return x_old, StepOutcome.METROPOLIS


def hmc_step(model: ConstraintModel, state: ChainState,
             cfg: SamplerConfig) -> tuple[ChainState, StepOutcome]:
    """One constrained HMC step: full momentum refresh, K RATTLE sub-steps, Metropolis.

    On any rejection the chain keeps the freshly resampled momentum.
    """
    if cfg.scheme not in (Scheme.HMC, Scheme.MALA, Scheme.MRW):
        raise InvalidParams(f"hmc_step does not handle scheme {cfg.scheme}")
    q = state.x.q
    try:
        p_t = _resample_momentum(model, q, cfg, state.rng)
        x = PhasePoint(q, p_t)
        result = psi_rev_k(model, x, cfg.rattle, cfg.K)
        new_x, outcome = _metropolis(model, x, result, state.rng)
    except SingularGram as exc:
        raise ChainAbort(str(exc)) from exc
    return ChainState(new_x, state.step_index + 1, state.rng), outcome


def _ou_half_step(model, q, p, gamma, dt, rng) -> np.ndarray:
    """Constrained mid-point OU update of the momenta over dt/2."""
    G = rng.standard_normal(model.d)
    if model.mass.is_identity:
        # scalar form of the same update, matching the compiled kernels bitwise
        a = dt * gamma / 4.0
        w = 1.0 / (1.0 + a)
        p_pred = w * ((1.0 - a) * p + math.sqrt(gamma * dt) * G)
        gq = model.grad_xi(q)
        S = GramMatrix.from_matrix(w * (gq.T @ gq))
        if S.is_singular(KAPPA_MAX):
            raise SingularGram(
                f"OU multiplier system condition {S.condition_estimate:.3e} >= {KAPPA_MAX:.1e}")
        lam = -np.linalg.solve(S.matrix, gq.T @ p_pred)
        return p_pred + gq @ (w * lam)
    W = ou_drift_matrix(model, gamma, dt)
    a = (dt * gamma / 4.0) * model.mass.inv
    p_pred = W @ ((np.eye(model.d) - a) @ p + math.sqrt(gamma * dt) * G)
    lam = momentum_lagrange_ou(model, q, p_pred, gamma, dt)
    return p_pred + W @ (model.grad_xi(q) @ lam)


def ghmc_step(model: ConstraintModel, state: ChainState,
              cfg: SamplerConfig) -> tuple[ChainState, StepOutcome]:
    """One constrained GHMC step (Strang or Lie-Trotter momentum refresh).

    The momentum flip after the Metropolis stage is unconditional, so
    rejected moves reverse the momentum.
    """
    q, p = state.x.q, state.x.p
    rng = state.rng
    try:
        if cfg.scheme is Scheme.GHMC_LT:
            G = rng.standard_normal(model.d)
            p_q = cotangent_project(model, q, cfg.alpha * p + math.sqrt(1.0 - cfg.alpha ** 2) * G)
            x = PhasePoint(q, p_q)
            result = psi_rev_k(model, x, cfg.rattle, cfg.K)
            new_x, outcome = _metropolis(model, x, result, rng)
            new_x = new_x.reversed()
        elif cfg.scheme is Scheme.GHMC_STRANG:
            p_q = _ou_half_step(model, q, p, cfg.gamma, cfg.rattle.dt, rng)
            x = PhasePoint(q, p_q)
            result = psi_rev_k(model, x, cfg.rattle, cfg.K)
            new_x, outcome = _metropolis(model, x, result, rng)
            new_x = new_x.reversed()
            new_x = PhasePoint(new_x.q, _ou_half_step(model, new_x.q, new_x.p,
                                                      cfg.gamma, cfg.rattle.dt, rng))
        else:
            raise InvalidParams(f"ghmc_step does not handle scheme {cfg.scheme}")
    except SingularGram as exc:
        raise ChainAbort(str(exc)) from exc
    return ChainState(new_x, state.step_index + 1, state.rng), outcome


def chain_step(model, state, cfg) -> tuple[ChainState, StepOutcome]:
    if cfg.scheme in (Scheme.HMC, Scheme.MALA, Scheme.MRW):
        return hmc_step(model, state, cfg)
    return ghmc_step(model, state, cfg)


# signature: sink(step_index, q, p, outcome_code)
TrajectorySink = Callable[[int, np.ndarray, np.ndarray, int], None]


def run_chain(model: ConstraintModel, cfg: SamplerConfig, n_iter: int,
              sink: Optional[TrajectorySink] = None, thin: int = 1,
              q0: np.ndarray | None = None, p0: np.ndarray | None = None,
              engine: str = "auto") -> tuple[ChainState, RejectionTally]:
    """Iterate the configured transition ``n_iter`` times.

    Fully deterministic for a fixed seed. Thinned states are streamed to
    ``sink`` when given. ``engine`` is "auto" (compiled kernel when the
    model supports it), "python" or "numba".
    """
    if n_iter < 1:
        raise InvalidParams("n_iter must be >= 1")
    if thin < 1:
        raise InvalidParams("thin must be >= 1")
    if engine not in ("auto", "python", "numba"):
        raise InvalidParams(f"unknown engine {engine!r}")
    use_fast = model.has_fast_path if engine == "auto" else (engine == "numba")
    if use_fast and not model.has_fast_path:
        raise InvalidParams("model has no compiled fast path")

    state = initial_state(model, cfg, q0, p0)
    if use_fast:
        from ._kernels import run_chain_fast
        final_q, final_p, counts, rec_q, rec_p, rec_out, rec_idx = run_chain_fast(
            model, cfg, n_iter, state.x.q, state.x.p, state.rng, thin,
            record=sink is not None)
        if sink is not None:
            for i in range(rec_idx.shape[0]):
                sink(int(rec_idx[i]), rec_q[i], rec_p[i], int(rec_out[i]))
        tally = RejectionTally.from_counts(counts)
        return ChainState(PhasePoint(final_q, final_p), n_iter, state.rng), tally

    tally = RejectionTally()
    for step in range(1, n_iter + 1):
        state, outcome = chain_step(model, state, cfg)
        tally.record(outcome)
        if sink is not None and step % thin == 0:
            sink(step, state.x.q.copy(), state.x.p.copy(), outcome.value)
    return state, tally
