import math

import numpy as np
import pytest
from scipy import stats

from manifold_ghmc.errors import InvalidParams, RejectionBudgetExceeded
from manifold_ghmc.geometry import PhasePoint, cotangent_project
from manifold_ghmc.integrator import RattleConfig
from manifold_ghmc.models import angle_coordinates, circle_model, get_model
from manifold_ghmc.sampler import (
    ChainState,
    RejectionTally,
    SamplerConfig,
    Scheme,
    StepOutcome,
    ghmc_step,
    hmc_step,
    initial_state,
    make_rng,
    run_chain,
    sample_tangent_gaussian,
    sample_tangent_gaussian_truncated,
)


class TestTangentGaussian:
    def test_circle_marginals(self):
        # at q=(1,0) the tangent direction is (0,1): the tangential component
        # is a standard normal, the normal component vanishes identically
        model = circle_model()
        q = np.array([1.0, 0.0])
        rng = make_rng(2024)
        draws = np.array([sample_tangent_gaussian(model, q, rng) for _ in range(100_000)])
        assert np.abs(draws[:, 0]).max() < 1e-12
        assert abs(draws[:, 1].mean()) <= 0.02
        assert 0.98 <= draws[:, 1].var() <= 1.02

    def test_output_orthogonal_to_gradient(self):
        model = get_model("torus-zero")
        q = model.default_q0
        rng = make_rng(1)
        for _ in range(100):
            p = sample_tangent_gaussian(model, q, rng)
            assert abs(float(model.grad_xi(q)[:, 0] @ p)) < 1e-12

    def test_torus_tangent_covariance_is_identity(self):
        model = get_model("torus-zero")
        q = model.default_q0  # (1.5, 0, 0); tangent plane spanned by e_y, e_z
        rng = make_rng(77)
        draws = np.array([sample_tangent_gaussian(model, q, rng) for _ in range(100_000)])
        cov = np.cov(draws[:, 1:].T)
        np.testing.assert_allclose(cov, np.eye(2), atol=0.03)

    def test_truncated_respects_cap(self):
        model = get_model("torus-zero")
        q = model.default_q0
        rng = make_rng(5)
        for _ in range(200):
            p = sample_tangent_gaussian_truncated(model, q, 1.0, rng)
            assert float(p @ p) <= 1.0

    def test_truncated_acceptance_fraction_on_circle(self):
        # the tangential component is a 1-d standard normal, so the fraction
        # of unconstrained draws inside |p|^2 <= 1 is P(chi2_1 <= 1) ~ 0.6827
        model = circle_model()
        q = np.array([0.0, 1.0])
        rng = make_rng(9)
        inside = sum(float(p @ p) <= 1.0
                     for p in (sample_tangent_gaussian(model, q, rng)
                               for _ in range(100_000)))
        expected = stats.chi2.cdf(1.0, df=1)
        assert abs(inside / 100_000 - expected) < 0.01

    def test_nonpositive_cap_rejected(self):
        model = circle_model()
        with pytest.raises(InvalidParams):
            sample_tangent_gaussian_truncated(model, np.array([1.0, 0.0]), -1.0, make_rng(0))


class TestRejectionTally:
    def test_record_and_attempts(self):
        t = RejectionTally()
        t.record(StepOutcome.ACCEPTED)
        t.record(StepOutcome.METROPOLIS)
        t.record(StepOutcome.ACCEPTED)
        assert t.attempts == 3
        assert t.accepted == 2
        assert t.metropolis == 1

    def test_merge(self):
        a = RejectionTally(accepted=2, metropolis=1)
        b = RejectionTally(accepted=1, newton_forward=4)
        c = a.merge(b)
        assert c.accepted == 3
        assert c.newton_forward == 4
        assert c.attempts == 8

    def test_rates_sum_to_one(self):
        t = RejectionTally(accepted=5, newton_forward=3, newton_reverse=1,
                           non_reversible=2, metropolis=4)
        assert sum(t.rates().values()) == pytest.approx(1.0, abs=1e-15)


class TestConfigValidation:
    def test_mala_requires_forces(self):
        with pytest.raises(InvalidParams):
            SamplerConfig(scheme=Scheme.MALA, rattle=RattleConfig(dt=0.1, use_forces=False))

    def test_mrw_requires_no_forces(self):
        with pytest.raises(InvalidParams):
            SamplerConfig(scheme=Scheme.MRW, rattle=RattleConfig(dt=0.1, use_forces=True))

    def test_mala_requires_single_substep(self):
        with pytest.raises(InvalidParams):
            SamplerConfig(scheme=Scheme.MALA, rattle=RattleConfig(dt=0.1), K=2)

    def test_ghmc_lt_requires_alpha(self):
        with pytest.raises(InvalidParams):
            SamplerConfig(scheme=Scheme.GHMC_LT, rattle=RattleConfig(dt=0.1))
        with pytest.raises(InvalidParams):
            SamplerConfig(scheme=Scheme.GHMC_LT, rattle=RattleConfig(dt=0.1), alpha=1.5)

    def test_momentum_cap_hmc_family_only(self):
        with pytest.raises(InvalidParams):
            SamplerConfig(scheme=Scheme.GHMC_LT, rattle=RattleConfig(dt=0.1),
                          alpha=0.5, momentum_cap=1.0)
        with pytest.raises(InvalidParams):
            SamplerConfig(scheme=Scheme.MALA, rattle=RattleConfig(dt=0.1), momentum_cap=-1.0)


class TestSteps:
    def test_rejected_hmc_step_keeps_fresh_momentum(self):
        model = get_model("circle")
        # dt=2: |p| > 1/dt almost surely, so the forward projection fails and
        # the state must keep the freshly drawn momentum, not the previous one
        cfg = SamplerConfig(scheme=Scheme.MALA, rattle=RattleConfig(dt=2.0), seed=3)
        state = initial_state(model, cfg)
        shadow = make_rng(cfg.seed)
        expected_p = cotangent_project(model, state.x.q,
                                       model.mass.sqrt @ shadow.standard_normal(model.d))
        new_state, outcome = hmc_step(model, state, cfg)
        if outcome is not StepOutcome.ACCEPTED:
            np.testing.assert_array_equal(new_state.x.q, state.x.q)
            np.testing.assert_allclose(new_state.x.p, expected_p, atol=1e-14)

    def test_rejected_ghmc_step_reverses_momentum(self):
        model = get_model("circle")
        # alpha=1 keeps the momentum exactly; a forward failure then returns
        # (q, -p) because the post-Metropolis flip is unconditional
        cfg = SamplerConfig(scheme=Scheme.GHMC_LT, rattle=RattleConfig(dt=2.0),
                            alpha=1.0, seed=0)
        q = np.array([1.0, 0.0])
        p = np.array([0.0, 2.5])
        state = ChainState(PhasePoint(q, p), 0, make_rng(0))
        new_state, outcome = ghmc_step(model, state, cfg)
        assert outcome is StepOutcome.NEWTON_FORWARD
        np.testing.assert_array_equal(new_state.x.q, q)
        np.testing.assert_allclose(new_state.x.p, -p, atol=1e-14)

    def test_wrong_scheme_dispatch_rejected(self):
        model = get_model("circle")
        cfg = SamplerConfig(scheme=Scheme.MALA, rattle=RattleConfig(dt=0.1), seed=0)
        state = initial_state(model, cfg)
        with pytest.raises(InvalidParams):
            ghmc_step(model, state, cfg)


def _cfg(scheme, **kw):
    use_forces = scheme is not Scheme.MRW
    return SamplerConfig(scheme=scheme, rattle=RattleConfig(dt=0.5, use_forces=use_forces),
                         seed=kw.pop("seed", 42), **kw)


ALL_SCHEMES = [
    (Scheme.MRW, {}),
    (Scheme.MALA, {}),
    (Scheme.HMC, {"K": 3}),
    (Scheme.GHMC_LT, {"alpha": 0.5}),
    (Scheme.GHMC_STRANG, {"gamma": 1.0}),
]


class TestRunChain:
    @pytest.mark.parametrize("scheme,kw", ALL_SCHEMES)
    def test_deterministic_per_engine(self, scheme, kw):
        model = get_model("torus-quadratic")
        cfg = _cfg(scheme, **kw)
        for engine in ("python", "numba"):
            a, _ = run_chain(model, cfg, 200, engine=engine)
            b, _ = run_chain(model, cfg, 200, engine=engine)
            np.testing.assert_array_equal(a.x.q, b.x.q)
            np.testing.assert_array_equal(a.x.p, b.x.p)

    @pytest.mark.parametrize("scheme,kw", ALL_SCHEMES)
    def test_engines_agree(self, scheme, kw):
        model = get_model("torus-quadratic")
        cfg = _cfg(scheme, **kw)
        got = {}
        for engine in ("python", "numba"):
            rec = []
            _, tally = run_chain(model, cfg, 300, engine=engine,
                                 sink=lambda s, q, p, o: rec.append((s, q, p, o)), thin=5)
            got[engine] = (rec, tally)
        rec_p, tally_p = got["python"]
        rec_n, tally_n = got["numba"]
        assert tally_p.rates() == tally_n.rates()
        for (sa, qa, pa, oa), (sb, qb, pb, ob) in zip(rec_p, rec_n):
            assert sa == sb and oa == ob
            # the Strang OU algebra is matrix-valued in the reference path and
            # scalar in the kernels, so allow last-ulp differences there
            np.testing.assert_allclose(qa, qb, atol=1e-12, rtol=0)
            np.testing.assert_allclose(pa, pb, atol=1e-12, rtol=0)

    def test_tally_conservation(self):
        model = get_model("torus-quadratic")
        _, tally = run_chain(model, _cfg(Scheme.MALA), 5000)
        assert tally.attempts == 5000

    def test_states_stay_on_manifold(self):
        model = get_model("torus-quadratic")
        rec = []
        run_chain(model, _cfg(Scheme.GHMC_LT, alpha=0.5), 2000,
                  sink=lambda s, q, p, o: rec.append((q, p)), thin=50)
        for q, p in rec:
            assert abs(float(model.xi(q)[0])) < 1e-9
            assert abs(float(model.grad_xi(q)[:, 0] @ p)) < 1e-9

    def test_preconditions(self):
        model = get_model("circle")
        cfg = _cfg(Scheme.MALA)
        with pytest.raises(InvalidParams):
            run_chain(model, cfg, 0)
        with pytest.raises(InvalidParams):
            run_chain(model, cfg, 10, thin=0)
        with pytest.raises(InvalidParams):
            run_chain(model, cfg, 10, engine="fortran")

    def test_theta_marginal_uniform(self):
        # the angle around the symmetry axis carries no information in either
        # the flat target or the quadratic one; Kolmogorov-Smirnov at 1%
        model = get_model("torus-zero")
        cfg = SamplerConfig(scheme=Scheme.MALA, rattle=RattleConfig(dt=0.5), seed=101)
        thetas = []

        def sink(step, q, p, o):
            t, _f = angle_coordinates(q)
            thetas.append(t)

        run_chain(model, cfg, 1_000_000, sink=sink, thin=20)
        stat = stats.kstest(np.array(thetas) / (2.0 * math.pi), "uniform")
        assert stat.pvalue > 0.01

    def test_truncated_momentum_budget_error_propagates(self):
        model = get_model("torus-zero")
        cfg = SamplerConfig(scheme=Scheme.MALA, rattle=RattleConfig(dt=0.5),
                            momentum_cap=1e-12, seed=0)
        with pytest.raises(RejectionBudgetExceeded):
            run_chain(model, cfg, 10, engine="numba")
        with pytest.raises(RejectionBudgetExceeded):
            run_chain(model, cfg, 10, engine="python")
