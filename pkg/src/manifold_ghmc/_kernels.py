"""Compiled chain kernels for models with a scalar constraint and identity mass.

Each kernel set is generated per model by closing over its numba-compiled
callbacks. The kernels consume the random stream in exactly the same order
as the reference implementations in :mod:`sampler` (per step: momentum
refresh first, one uniform only when a proposal was produced), so both
paths yield bit-identical chains for the same seed.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .errors import RejectionBudgetExceeded, SingularGram

_TRIAL_BUDGET = 1_000_000

# outcome codes shared with sampler.StepOutcome
#   0 accepted, 1 newton-forward, 2 newton-reverse, 3 non-reversible, 4 metropolis

_KERNEL_CACHE: dict = {}


def _build(jit):
    xi, grad_xi, V, grad_V = jit.xi, jit.grad_xi, jit.V, jit.grad_V

    @njit(nogil=True)
    def newton(q_tilde, g0, crit, n_newt, eps, theta_max):
        theta = 0.0
        eta = 2.0 * eps
        k = 0
        g0_norm = math.sqrt(np.dot(g0, g0))
        while k <= n_newt and eta > eps:
            k += 1
            pos = q_tilde + theta * g0
            J = np.dot(grad_xi(pos), g0)
            if J == 0.0 or not math.isfinite(J):
                return False, theta
            theta_new = theta - xi(pos) / J
            if not math.isfinite(theta_new):
                return False, theta
            d_theta = abs(theta_new - theta)
            theta = theta_new
            residual = abs(xi(q_tilde + theta * g0))
            if crit == 0:
                eta = max(d_theta, residual)
            else:
                eta = d_theta * g0_norm
        return (eta < eps) and (abs(theta) <= theta_max), theta

    @njit(nogil=True)
    def project(q, v):
        g = grad_xi(q)
        gg = np.dot(g, g)
        if gg == 0.0:
            raise SingularGram("zero constraint gradient in momentum projection")
        return v - (np.dot(g, v) / gg) * g

    @njit(nogil=True)
    def rattle(q, p, dt, use_forces, crit, n_newt, eps, theta_max):
        # returns (ok, q1, p1) with p1 already reversed
        if use_forces:
            p_t = p - 0.5 * dt * grad_V(q)
        else:
            p_t = p.copy()
        q_tilde = q + dt * p_t
        g0 = grad_xi(q)
        ok, theta = newton(q_tilde, g0, crit, n_newt, eps, theta_max)
        if not ok:
            return False, q, p
        q1 = q_tilde + theta * g0
        p_half = p_t + (theta / dt) * g0
        if use_forces:
            p_un = p_half - 0.5 * dt * grad_V(q1)
        else:
            p_un = p_half
        p1 = project(q1, p_un)
        return True, q1, -p1

    @njit(nogil=True)
    def psi_rev(q, p, dt, use_forces, rev_mode, eta_rev, crit, n_newt, eps, theta_max):
        # rev_mode: 0 full, 1 converge-only, 2 skip. codes as module header.
        ok, q1, p1 = rattle(q, p, dt, use_forces, crit, n_newt, eps, theta_max)
        if not ok:
            return 1, q, p
        if rev_mode == 2:
            return 0, q1, p1
        ok2, q2, _p2 = rattle(q1, p1, dt, use_forces, crit, n_newt, eps, theta_max)
        if not ok2:
            return 2, q, p
        if rev_mode == 0:
            s = 0.0
            for i in range(q.shape[0]):
                s += (q2[i] - q[i]) ** 2
            if math.sqrt(s) >= eta_rev:
                return 3, q, p
        return 0, q1, p1

    @njit(nogil=True)
    def propose(q, p, dt, K, use_forces, rev_mode, eta_rev, crit, n_newt, eps, theta_max):
        zq, zp = q, p
        for _ in range(K):
            code, zq, zp = psi_rev(zq, zp, dt, use_forces, rev_mode, eta_rev,
                                   crit, n_newt, eps, theta_max)
            if code != 0:
                return code, q, p
            zp = -zp
        return 0, zq, -zp

    @njit(nogil=True)
    def ou_half(rng, q, p, gamma, dt):
        d = q.shape[0]
        G = rng.standard_normal(d)
        a = dt * gamma / 4.0
        w = 1.0 / (1.0 + a)
        p_pred = w * ((1.0 - a) * p + math.sqrt(gamma * dt) * G)
        g = grad_xi(q)
        S = w * np.dot(g, g)
        if S == 0.0:
            raise SingularGram("zero constraint gradient in OU multiplier system")
        lam = -np.dot(g, p_pred) / S
        return p_pred + (w * lam) * g

    @njit(nogil=True)
    def refresh_hmc(rng, q, has_cap, cap):
        d = q.shape[0]
        trials = 0
        while True:
            trials += 1
            if trials > _TRIAL_BUDGET:
                raise RejectionBudgetExceeded("momentum truncation trial budget exhausted")
            G = rng.standard_normal(d)
            pq = project(q, G)
            if (not has_cap) or np.dot(pq, pq) <= cap:
                return pq

    @njit(nogil=True)
    def chain(rng, q0, p0, n_iter,
              scheme, dt, K, use_forces, rev_mode, eta_rev,
              crit, n_newt, eps_newt, theta_max,
              gamma, alpha, has_cap, cap,
              thin, record, rec_q, rec_p, rec_out, rec_idx, counts,
              residence, res_threshold):
        # scheme: 0 HMC family, 1 GHMC Lie-Trotter, 2 GHMC Strang
        q = q0.copy()
        p = p0.copy()
        theta_sign = 1.0
        n_switch = 0
        last_switch = 0
        for step in range(1, n_iter + 1):
            if scheme == 0:
                pq = refresh_hmc(rng, q, has_cap, cap)
            elif scheme == 1:
                G = rng.standard_normal(q.shape[0])
                pq = project(q, alpha * p + math.sqrt(1.0 - alpha * alpha) * G)
            else:
                pq = ou_half(rng, q, p, gamma, dt)
            code, q_prop, p_prop = propose(q, pq, dt, K, use_forces, rev_mode,
                                           eta_rev, crit, n_newt, eps_newt, theta_max)
            if code == 0:
                d_h = ((V(q_prop) + 0.5 * np.dot(p_prop, p_prop))
                       - (V(q) + 0.5 * np.dot(pq, pq)))
                u = rng.random()
                if math.log(u) <= -d_h:
                    q = q_prop
                    p = p_prop
                    out = 0
                else:
                    p = pq
                    out = 4
            else:
                p = pq
                out = code
            if scheme != 0:
                p = -p
            if scheme == 2:
                p = ou_half(rng, q, p, gamma, dt)
            if residence and theta_sign * q[0] < -res_threshold:
                n_switch += 1
                last_switch = step
                theta_sign = -theta_sign
            counts[out] += 1
            if record and step % thin == 0:
                j = step // thin - 1
                for i in range(q.shape[0]):
                    rec_q[j, i] = q[i]
                    rec_p[j, i] = p[i]
                rec_out[j] = out
                rec_idx[j] = step
        return q, p, n_switch, last_switch

    @njit(nogil=True)
    def psi_rev_batch(Q, P, dt, K, use_forces, rev_mode, eta_rev,
                      crit, n_newt, eps, theta_max, out_q, out_p, out_code):
        for i in range(Q.shape[0]):
            code, q1, p1 = propose(Q[i], P[i], dt, K, use_forces, rev_mode,
                                   eta_rev, crit, n_newt, eps, theta_max)
            out_code[i] = code
            for j in range(Q.shape[1]):
                out_q[i, j] = q1[j]
                out_p[i, j] = p1[j]

    return {"chain": chain, "psi_rev_batch": psi_rev_batch, "propose": propose,
            "newton": newton, "project": project, "refresh_hmc": refresh_hmc}


def get_kernels(model):
    kernels = _KERNEL_CACHE.get(model.jit)
    if kernels is None:
        kernels = _build(model.jit)
        _KERNEL_CACHE[model.jit] = kernels
    return kernels


def _scheme_code(cfg):
    from .sampler import Scheme
    if cfg.scheme in (Scheme.HMC, Scheme.MALA, Scheme.MRW):
        return 0
    return 1 if cfg.scheme is Scheme.GHMC_LT else 2


def _rattle_codes(rattle_cfg):
    from .integrator import ReverseCheckMode
    from .projection import NewtonCriterion
    rev = {ReverseCheckMode.FULL: 0,
           ReverseCheckMode.PARTIAL_NO_POSITION_CHECK: 1,
           ReverseCheckMode.NONE_AT_ALL: 2}[rattle_cfg.reverse_check]
    crit = 0 if rattle_cfg.newton.criterion is NewtonCriterion.MAX_RESIDUAL_INCREMENT else 1
    return rev, crit


def run_chain_fast(model, cfg, n_iter, q0, p0, rng, thin=1, record=False,
                   residence=False, res_threshold=0.0):
    """Drive the compiled chain kernel; mirrors sampler.run_chain semantics.

    Returns (q, p, counts, rec_q, rec_p, rec_out, rec_idx) and, when
    ``residence`` is set, appends (n_switch, last_switch_step).
    """
    kern = get_kernels(model)["chain"]
    rc = cfg.rattle
    rev, crit = _rattle_codes(rc)
    n_rec = n_iter // thin if record else 0
    rec_q = np.empty((n_rec, model.d))
    rec_p = np.empty((n_rec, model.d))
    rec_out = np.empty(n_rec, dtype=np.int64)
    rec_idx = np.empty(n_rec, dtype=np.int64)
    counts = np.zeros(5, dtype=np.int64)
    q, p, n_switch, last_switch = kern(
        rng, np.asarray(q0, dtype=float), np.asarray(p0, dtype=float), n_iter,
        _scheme_code(cfg), rc.dt, cfg.K, rc.use_forces, rev, rc.eta_rev,
        crit, rc.newton.max_iterations, rc.newton.tolerance, rc.newton.theta_max,
        cfg.gamma, -1.0 if cfg.alpha is None else cfg.alpha,
        cfg.momentum_cap is not None,
        0.0 if cfg.momentum_cap is None else cfg.momentum_cap,
        thin, record, rec_q, rec_p, rec_out, rec_idx, counts,
        residence, res_threshold)
    result = (q, p, counts, rec_q, rec_p, rec_out, rec_idx)
    return result + ((n_switch, last_switch),) if residence else result


def psi_rev_many(model, Q, P, cfg, K=1):
    """Apply the reverse-checked proposal to each row of (Q, P).

    Returns (codes, Q1, P1); rows that failed keep their inputs.
    """
    kern = get_kernels(model)["psi_rev_batch"]
    rc = cfg if hasattr(cfg, "dt") else cfg.rattle
    rev, crit = _rattle_codes(rc)
    Q = np.ascontiguousarray(Q, dtype=float)
    P = np.ascontiguousarray(P, dtype=float)
    out_q = np.empty_like(Q)
    out_p = np.empty_like(P)
    out_code = np.empty(Q.shape[0], dtype=np.int64)
    kern(Q, P, rc.dt, K, rc.use_forces, rev, rc.eta_rev,
         crit, rc.newton.max_iterations, rc.newton.tolerance, rc.newton.theta_max,
         out_q, out_p, out_code)
    return out_code, out_q, out_p
