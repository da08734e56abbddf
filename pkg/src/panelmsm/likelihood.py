"""Marginal log-likelihood: Gauss-Hermite integration over bivariate
random effects, mover-stayer mixture, and the clustered panel product.

Two code paths compute the same quantity:

* reference operations (interval_block, patient_conditional_loglik,
  patient_marginal_loglik) loop over joints and quadrature nodes directly
  and are meant for tests and small examples;
* total_loglik evaluates the whole dataset through flattened design arrays
  and batched kernels, and is what the optimizer calls.

Conditional probabilities are multiplied in log space; node-wise kernel
entries are floored at the smallest positive normal double before taking
logs, with floor hits reported through an optional audit dictionary.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from panelmsm.data import PanelDataset, Patient, visit_covariate_columns
from panelmsm.design import LikelihoodDesign, build_design
from panelmsm.joints import N_JOINTS
from panelmsm.kernels import four_state_tpm, three_state_tpm, two_state_tpm
from panelmsm.model import (
    ModelSpec,
    OBSERVATION_LEVEL,
    ParameterExplosionError,
    expit,
    mover_six_state_intensities,
    stayer_intensities,
    five_state_sojourn_params,
    sojourn_to_intensities,
    stayer_sojourn_intensities,
)
from panelmsm.states import SIX_STATE, mover_state_index

_TINY = float(np.finfo(np.float64).tiny)
_LOG_TINY = float(np.log(_TINY))

# Cap on (state pairs x quadrature nodes) per processed block, to bound the
# size of the batched kernel arrays.
_BLOCK_ELEMENTS = 1_000_000

# Beyond this rate x interval-length product the kernels carry no usable
# information (the chain has equilibrated to machine precision long before)
# and repeated squaring in the fallback loses row-stochasticity, so the
# point is treated as a parameter explosion (-inf likelihood).
_MAX_RATE_TIME = 1e12

MOVER = "mover"
STAYER = "stayer"


# --------------------------------------------------------------------------
# Gauss-Hermite quadrature
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for integration against the standard normal density."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def count(self) -> int:
        return len(self.nodes)


@lru_cache(maxsize=32)
def gauss_hermite_rule(n: int) -> QuadratureRule:
    """Gauss-Hermite rule in the probabilists' convention.

    Approximates integral of f(x) phi(x; 0, 1) dx by sum w_k f(x_k); exact
    for polynomials up to degree 2n - 1.
    """
    if not 1 <= n <= 100:
        raise ValueError("quadrature size must be between 1 and 100")
    nodes, weights = np.polynomial.hermite_e.hermegauss(n)
    weights = weights / np.sqrt(2.0 * np.pi)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights)


def _node_grid(sigma2_u, sigma2_v, rho, rule: QuadratureRule):
    """Flattened (u, v) node pairs and log-weights for the bivariate normal.

    The bivariate density is factorized as phi(v | u) phi(u): the outer rule
    integrates u ~ N(0, sigma2_u), the inner one v | u with mean
    rho * u * sigma_v / sigma_u and variance sigma2_v * (1 - rho^2).
    """
    su = np.sqrt(sigma2_u)
    sv = np.sqrt(sigma2_v)
    x = rule.nodes
    u = su * x
    v = rho * sv * x[:, None] + sv * np.sqrt(1.0 - rho * rho) * x[None, :]
    logw = np.log(rule.weights)
    logw2 = logw[:, None] + logw[None, :]
    n2 = rule.count * rule.count
    return (
        np.repeat(u, rule.count),
        v.reshape(n2),
        logw2.reshape(n2),
    )


def bivariate_integrate(g, sigma2_u, sigma2_v, rho, rule: QuadratureRule) -> float:
    """Integrate g(u, v) against the zero-mean bivariate normal density."""
    if sigma2_u <= 0 or sigma2_v <= 0 or not -1 < rho < 1:
        raise ValueError("need positive variances and rho in (-1, 1)")
    u, v, logw = _node_grid(sigma2_u, sigma2_v, rho, rule)
    values = np.array([g(ui, vi) for ui, vi in zip(u, v)], dtype=float)
    if not np.all(np.isfinite(values)):
        raise ParameterExplosionError("integrand non-finite at a quadrature node")
    return float(np.sum(np.exp(logw) * values))


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.squeeze(m, axis=axis) + np.log(
            np.sum(np.exp(a - m), axis=axis)
        )
    return out


# --------------------------------------------------------------------------
# Reference per-patient operations
# --------------------------------------------------------------------------


def _guard_scalar(dt: float, *rates: float) -> None:
    if max(rates) * dt > _MAX_RATE_TIME:
        raise ParameterExplosionError("intensity-time product overflow")


def _joint_is_usable(patient: Patient, j: int, l: int, z_visit) -> bool:
    if not (patient.observed[j, l] and patient.observed[j + 1, l]):
        return False
    return all(np.all(np.isfinite(z[l])) for z in z_visit.values())


def interval_block(
    patient: Patient,
    j: int,
    hypothesis: str,
    u: float,
    v: float,
    params,
    spec: ModelSpec,
) -> float:
    """Conditional probability of interval (t_j, t_{j+1}), product over joints.

    j is the 0-based index of the interval's left visit; usable intervals
    have 1 <= j <= n_visits - 2.  Under the stayer hypothesis any observed
    damaged state makes the block zero.
    """
    if not 1 <= j <= patient.n_visits - 2:
        raise ValueError("interval index out of the usable range")
    z_visit = {
        t: visit_covariate_columns(patient, j, spec.columns(t), spec.update_duration)
        for t in spec.transitions
    }
    dt = float(patient.times[j + 1] - patient.times[j])
    log_prob = 0.0
    for l in range(N_JOINTS):
        if not _joint_is_usable(patient, j, l, z_visit):
            continue
        a0, d0 = int(patient.active[j, l]), int(patient.damaged[j, l])
        a1, d1 = int(patient.active[j + 1, l]), int(patient.damaged[j + 1, l])
        if hypothesis == STAYER:
            if d0 or d1:
                return 0.0
            if spec.model == SIX_STATE:
                rates = stayer_intensities(
                    z_visit["gain"][l], z_visit["loss"][l], u, params
                )
            else:
                sj = five_state_sojourn_params(
                    z_visit["sojourn_inactive"][l],
                    z_visit["sojourn_active"][l],
                    z_visit["jump_inactive"][l],
                    z_visit["jump_active"][l],
                    u,
                    v,
                    params,
                )
                rates = stayer_sojourn_intensities(sj.mu4, sj.mu5)
            _guard_scalar(dt, rates.lam_on, rates.lam_off)
            p = two_state_tpm(rates.lam_on, rates.lam_off, dt)[a0, a1]
        elif hypothesis == MOVER:
            if spec.model == SIX_STATE:
                rates = mover_six_state_intensities(
                    z_visit["gain"][l], z_visit["loss"][l], z_visit["damage"][l],
                    u, v, params,
                )
                _guard_scalar(dt, rates.lam12, rates.lam13, rates.lam21,
                              rates.lam24, rates.lam34, rates.lam43)
                p = four_state_tpm(
                    rates.lam12, rates.lam13, rates.lam21,
                    rates.lam24, rates.lam34, rates.lam43, dt,
                )[mover_state_index(a0, d0, spec.model), mover_state_index(a1, d1, spec.model)]
            else:
                sj = five_state_sojourn_params(
                    z_visit["sojourn_inactive"][l],
                    z_visit["sojourn_active"][l],
                    z_visit["jump_inactive"][l],
                    z_visit["jump_active"][l],
                    u,
                    v,
                    params,
                )
                rates = sojourn_to_intensities(sj.mu1, sj.mu2, sj.p13, sj.p23, sj.mu4, sj.mu5)
                _guard_scalar(dt, rates.lam12, rates.lam13, rates.lam21, rates.lam23)
                p = three_state_tpm(
                    rates.lam12, rates.lam13, rates.lam21, rates.lam23, dt
                )[mover_state_index(a0, d0, spec.model), mover_state_index(a1, d1, spec.model)]
        else:
            raise ValueError("hypothesis must be 'mover' or 'stayer'")
        if p <= 0.0:
            return 0.0
        log_prob += np.log(p)
    return float(np.exp(log_prob))


def patient_conditional_loglik(
    patient: Patient,
    hypothesis: str,
    params,
    spec: ModelSpec,
    rule: QuadratureRule | None = None,
) -> float:
    """log L_i conditional on mover/stayer status.

    Observation-level random effects integrate (u, v) separately per
    interval; patient-level ones share one draw across all intervals.
    """
    rule = rule or gauss_hermite_rule(spec.n_quad)
    s2u, s2v, rho = params.sigma2_u, params.sigma2_v, params.rho
    intervals = range(1, patient.n_visits - 1)
    try:
        if spec.re_structure == OBSERVATION_LEVEL:
            total = 0.0
            for j in intervals:
                val = bivariate_integrate(
                    lambda u, v: interval_block(patient, j, hypothesis, u, v, params, spec),
                    s2u, s2v, rho, rule,
                )
                if val <= 0.0:
                    return -np.inf
                total += np.log(val)
            return float(total)
        def product(u, v):
            out = 1.0
            for j in intervals:
                out *= interval_block(patient, j, hypothesis, u, v, params, spec)
            return out
        val = bivariate_integrate(product, s2u, s2v, rho, rule)
        return float(np.log(val)) if val > 0.0 else -np.inf
    except ParameterExplosionError:
        return -np.inf


def patient_marginal_loglik(
    patient: Patient,
    params,
    spec: ModelSpec,
    rule: QuadratureRule | None = None,
) -> float:
    """log of the mover-stayer mixture contribution of one patient."""
    rule = rule or gauss_hermite_rule(spec.n_quad)
    pi = params.pi
    log1m_pi = np.log1p(-pi) if pi < 1 else -np.inf
    l_mover = patient_conditional_loglik(patient, MOVER, params, spec, rule)
    if patient.c_star() == 1:
        return float(log1m_pi + l_mover)
    l_stayer = patient_conditional_loglik(patient, STAYER, params, spec, rule)
    log_pi = np.log(pi) if pi > 0 else -np.inf
    return float(np.logaddexp(log1m_pi + l_mover, log_pi + l_stayer))


# --------------------------------------------------------------------------
# Batched dataset-level likelihood
# --------------------------------------------------------------------------


def _six_state_kernels(design, params, U, V, dt, sl, stayer_needed):
    z = design.z
    eta_gain = z["gain"][sl] @ params.beta_gain + params.log_lam0_gain
    eta_loss = z["loss"][sl] @ params.beta_loss + params.log_lam0_loss
    eta_damage = z["damage"][sl] @ params.beta_damage + params.log_lam0_damage
    with np.errstate(over="ignore"):
        lam12 = np.exp(eta_gain[:, None] + U[None, :])
        lam21 = np.exp(eta_loss[:, None] + params.alpha * U[None, :])
        lam13 = np.exp(eta_damage[:, None] + V[None, :])
        lam34 = lam12 * np.exp(params.damaged_gain)
        lam43 = lam21 * np.exp(params.damaged_loss)
        lam24 = lam13 * np.exp(params.active_damage)
        lam56 = lam12 * np.exp(params.stayer_gain)
        lam65 = lam21 * np.exp(params.stayer_loss)
    _guard_rates(dt, lam12, lam21, lam13, lam34, lam43, lam24, lam56, lam65)
    p_mover = four_state_tpm(lam12, lam13, lam21, lam24, lam34, lam43, dt[:, None])
    p_stayer = None
    if stayer_needed:
        p_stayer = two_state_tpm(lam56, lam65, dt[:, None])
    return p_mover, p_stayer


def _guard_rates(dt, *lams):
    t_max = float(np.max(dt)) if len(dt) else 0.0
    for lam in lams:
        if not np.all(np.isfinite(lam)):
            raise ParameterExplosionError("intensity overflow")
        if float(np.max(lam, initial=0.0)) * t_max > _MAX_RATE_TIME:
            raise ParameterExplosionError("intensity-time product overflow")


def _five_state_kernels(design, params, U, V, dt, sl, stayer_needed):
    z = design.z
    eta_mu1 = z["sojourn_inactive"][sl] @ params.beta_mu_inactive + params.log_mu0_inactive
    eta_mu2 = z["sojourn_active"][sl] @ params.beta_mu_active + params.log_mu0_active
    eta_p13 = z["jump_inactive"][sl] @ params.beta_jump_inactive + params.log_odds0_inactive
    eta_p23 = z["jump_active"][sl] @ params.beta_jump_active + params.log_odds0_active
    with np.errstate(over="ignore"):
        inv_mu1 = np.exp(-(eta_mu1[:, None] + U[None, :]))
        inv_mu2 = np.exp(-(eta_mu2[:, None] + params.alpha1 * U[None, :]))
        p13 = expit(eta_p13[:, None] + V[None, :])
        p23 = expit(eta_p23[:, None] + params.alpha2 * V[None, :])
        lam12 = (1.0 - p13) * inv_mu1
        lam13 = p13 * inv_mu1
        lam21 = (1.0 - p23) * inv_mu2
        lam23 = p23 * inv_mu2
        lam45 = inv_mu1 * np.exp(-params.stayer_mu_inactive)
        lam54 = inv_mu2 * np.exp(-params.stayer_mu_active)
    _guard_rates(dt, lam12, lam13, lam21, lam23, lam45, lam54)
    p_mover = three_state_tpm(lam12, lam13, lam21, lam23, dt[:, None])
    p_stayer = None
    if stayer_needed:
        p_stayer = two_state_tpm(lam45, lam54, dt[:, None])
    return p_mover, p_stayer


def _block_branch_logliks(design, params, spec, U, V, logW, p0, p1, audit):
    """Branch log-likelihoods (mover, stayer) for patients [p0, p1)."""
    i0 = design.interval_offsets[p0]
    i1 = design.interval_offsets[p1]
    e0 = design.pair_offsets[i0]
    e1 = design.pair_offsets[i1]
    pair_group = design.pair_group[e0:e1]
    g0 = int(pair_group[0])
    g1 = int(pair_group[-1]) + 1
    sl = slice(g0, g1)
    dt = design.group_dt[sl]

    c_star = design.c_star[p0:p1]
    stayer_ok = design.stayer_ok[p0:p1]
    stayer_needed = bool(np.any((c_star == 0) & stayer_ok))

    if spec.model == SIX_STATE:
        p_mover, p_stayer = _six_state_kernels(design, params, U, V, dt, sl, stayer_needed)
    else:
        p_mover, p_stayer = _five_state_kernels(design, params, U, V, dt, sl, stayer_needed)

    pg = pair_group - g0
    pf = design.pair_from[e0:e1]
    pt = design.pair_to[e0:e1]
    cnt = design.pair_count[e0:e1]

    entries = p_mover[pg, :, pf, pt]
    if audit is not None:
        audit["floor_hits"] = audit.get("floor_hits", 0) + int(
            np.count_nonzero(entries < _TINY)
        )
    contrib = cnt[:, None] * np.log(np.maximum(entries, _TINY))

    pair_off = design.pair_offsets[i0:i1] - e0
    interval_logprob = np.add.reduceat(contrib, pair_off, axis=0)
    interval_off = design.interval_offsets[p0 : p1 + 1] - i0

    if spec.re_structure == OBSERVATION_LEVEL:
        li = _logsumexp(interval_logprob + logW[None, :], axis=1)
        branch_mover = np.add.reduceat(li, interval_off[:-1])
    else:
        per_patient = np.add.reduceat(interval_logprob, interval_off[:-1], axis=0)
        branch_mover = _logsumexp(per_patient + logW[None, :], axis=1)

    branch_stayer = np.full(p1 - p0, -np.inf)
    if stayer_needed:
        mask = (pf < 2) & (pt < 2)
        entries2 = p_stayer[pg, :, np.minimum(pf, 1), np.minimum(pt, 1)]
        contrib2 = np.where(
            mask[:, None],
            cnt[:, None] * np.log(np.maximum(entries2, _TINY)),
            -np.inf,
        )
        interval_logprob2 = np.add.reduceat(contrib2, pair_off, axis=0)
        if spec.re_structure == OBSERVATION_LEVEL:
            li2 = _logsumexp(interval_logprob2 + logW[None, :], axis=1)
            vals = np.add.reduceat(li2, interval_off[:-1])
        else:
            per_patient2 = np.add.reduceat(interval_logprob2, interval_off[:-1], axis=0)
            vals = _logsumexp(per_patient2 + logW[None, :], axis=1)
        branch_stayer = np.where(stayer_ok, vals, -np.inf)
    return branch_mover, branch_stayer


def total_loglik(
    dataset: PanelDataset | None,
    params,
    spec: ModelSpec,
    rule: QuadratureRule | None = None,
    design: LikelihoodDesign | None = None,
    audit: dict | None = None,
) -> float:
    """Marginal log-likelihood of the whole dataset.

    Patient contributions are summed in ascending patient-id order so the
    value is independent of file order and worker scheduling.  Parameter
    overflow yields -inf rather than an exception, so line searches can
    back off.
    """
    if design is None:
        if dataset is None:
            raise ValueError("either dataset or design must be given")
        design = build_design(dataset, spec)
    rule = rule or gauss_hermite_rule(spec.n_quad)
    npat = design.n_patients

    pi = params.pi
    log1m_pi = np.log1p(-pi) if pi < 1 else -np.inf
    log_pi = np.log(pi) if pi > 0 else -np.inf

    if npat == 0:
        per_patient = np.zeros(0)
    else:
        try:
            U, V, logW = _node_grid(params.sigma2_u, params.sigma2_v, params.rho, rule)
        except (ValueError, FloatingPointError):
            return -np.inf
        n_nodes = len(U)
        branch_mover = np.empty(npat)
        branch_stayer = np.empty(npat)
        def block_pairs(a, b):
            return int(
                design.pair_offsets[design.interval_offsets[b]]
                - design.pair_offsets[design.interval_offsets[a]]
            )

        p0 = 0
        try:
            while p0 < npat:
                p1 = p0 + 1
                while p1 < npat and block_pairs(p0, p1 + 1) * n_nodes <= _BLOCK_ELEMENTS:
                    p1 += 1
                bm, bs = _block_branch_logliks(
                    design, params, spec, U, V, logW, p0, p1, audit
                )
                branch_mover[p0:p1] = bm
                branch_stayer[p0:p1] = bs
                p0 = p1
        except ParameterExplosionError:
            return -np.inf
        with np.errstate(invalid="ignore"):
            per_patient = np.where(
                design.c_star == 1,
                log1m_pi + branch_mover,
                np.logaddexp(log1m_pi + branch_mover, log_pi + branch_stayer),
            )

    trivial = np.where(design.trivial_c_star == 1, log1m_pi, 0.0)
    order = np.argsort(np.array(design.patient_ids, dtype=object), kind="stable")
    total = float(np.sum(per_patient[order]) + np.sum(trivial))
    return total if np.isfinite(total) else -np.inf
