"""Maximum likelihood driver.

BFGS with a backtracking line search maximizes the marginal log-likelihood
over the unconstrained parameter scale (log variances and baselines, atanh
correlation, logit mixture fraction).  Standard errors come from the
inverse of the negated central-difference Hessian at the optimum; 95% Wald
intervals are reported on the natural scale, with transformed parameters
mapped through their link (so e.g. the mixture-fraction interval always
lies inside (0, 1)).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from panelmsm.data import PanelDataset
from panelmsm.design import build_design
from panelmsm.likelihood import gauss_hermite_rule, total_loglik
from panelmsm.model import (
    ModelSpec,
    SixStateParams,
    FiveStateParams,
    expit,
)
from panelmsm.states import SIX_STATE


class InitializationError(RuntimeError):
    """The log-likelihood is -inf at the starting point."""


# --------------------------------------------------------------------------
# Flat parameter vector <-> typed parameter objects
# --------------------------------------------------------------------------

_SIX_SCALARS = (
    "damaged_gain",
    "damaged_loss",
    "active_damage",
    "stayer_gain",
    "stayer_loss",
    "alpha",
)
_FIVE_SCALARS = (
    "stayer_mu_inactive",
    "stayer_mu_active",
    "alpha1",
    "alpha2",
)
_VARIANCE_NAMES = ("log_sigma2_u", "log_sigma2_v", "atanh_rho", "logit_pi")

_SIX_BLOCKS = (
    ("log_lam0_gain", "beta_gain", "gain"),
    ("log_lam0_loss", "beta_loss", "loss"),
    ("log_lam0_damage", "beta_damage", "damage"),
)
_FIVE_BLOCKS = (
    ("log_mu0_inactive", "beta_mu_inactive", "sojourn_inactive"),
    ("log_mu0_active", "beta_mu_active", "sojourn_active"),
    ("log_odds0_inactive", "beta_jump_inactive", "jump_inactive"),
    ("log_odds0_active", "beta_jump_active", "jump_active"),
)


def parameter_names(spec: ModelSpec) -> list[str]:
    """Flat-vector entry names, aligned with pack_params/unpack_params.

    Regression coefficients are named beta_<block>:<column>; everything
    else keeps its attribute name on the unconstrained scale.
    """
    blocks = _SIX_BLOCKS if spec.model == SIX_STATE else _FIVE_BLOCKS
    scalars = _SIX_SCALARS if spec.model == SIX_STATE else _FIVE_SCALARS
    names: list[str] = []
    for baseline, beta, transition in blocks:
        names.append(baseline)
        names.extend(f"{beta}:{col}" for col in spec.columns(transition))
    names.extend(scalars)
    names.extend(_VARIANCE_NAMES)
    return names


def pack_params(params, spec: ModelSpec) -> np.ndarray:
    blocks = _SIX_BLOCKS if spec.model == SIX_STATE else _FIVE_BLOCKS
    scalars = _SIX_SCALARS if spec.model == SIX_STATE else _FIVE_SCALARS
    parts: list[np.ndarray] = []
    for baseline, beta, transition in blocks:
        b = np.asarray(getattr(params, beta), dtype=float)
        if len(b) != len(spec.columns(transition)):
            raise ValueError(f"{beta} has {len(b)} entries, spec expects "
                             f"{len(spec.columns(transition))}")
        parts.append(np.concatenate(([getattr(params, baseline)], b)))
    parts.append(np.array([getattr(params, s) for s in scalars]))
    parts.append(np.array([getattr(params, s) for s in _VARIANCE_NAMES]))
    return np.concatenate(parts)


def unpack_params(theta: np.ndarray, spec: ModelSpec):
    blocks = _SIX_BLOCKS if spec.model == SIX_STATE else _FIVE_BLOCKS
    scalars = _SIX_SCALARS if spec.model == SIX_STATE else _FIVE_SCALARS
    expected = len(parameter_names(spec))
    if len(theta) != expected:
        raise ValueError(
            f"parameter vector length {len(theta)}, expected {expected}"
        )
    kwargs = {}
    k = 0
    for baseline, beta, transition in blocks:
        kwargs[baseline] = float(theta[k])
        k += 1
        p = len(spec.columns(transition))
        kwargs[beta] = np.array(theta[k : k + p])
        k += p
    for s in scalars:
        kwargs[s] = float(theta[k])
        k += 1
    for s in _VARIANCE_NAMES:
        kwargs[s] = float(theta[k])
        k += 1
    if k != len(theta):
        raise ValueError(f"parameter vector length {len(theta)}, expected {k}")
    cls = SixStateParams if spec.model == SIX_STATE else FiveStateParams
    return cls(**kwargs)


# --------------------------------------------------------------------------
# Initial values from crude rates
# --------------------------------------------------------------------------

_FALLBACK_LOG_RATE = float(np.log(0.1))


def _crude_rates(dataset: PanelDataset):
    """Observed transition counts / total time at risk, pooled over joints.

    gain: not-active -> active and loss: active -> not-active among pairs
    that stay undamaged; damage: not-damaged -> damaged from any activity.
    Also returns the fraction of exits from each activity state that land
    in damage, for the sojourn/jump parameterization.
    """
    count = {"gain": 0.0, "loss": 0.0, "damage": 0.0}
    expo = {"gain": 0.0, "loss": 0.0, "damage": 0.0}
    exits = {"inactive": 0.0, "active": 0.0}
    exits_damage = {"inactive": 0.0, "active": 0.0}
    for p in dataset.patients:
        for j in range(p.n_visits - 1):
            dt = p.times[j + 1] - p.times[j]
            both = p.observed[j] & p.observed[j + 1] & (p.damaged[j] == 0)
            a0 = p.active[j][both]
            a1 = p.active[j + 1][both]
            d1 = p.damaged[j + 1][both]
            n0 = np.sum(a0 == 0)
            n1 = np.sum(a0 == 1)
            expo["gain"] += dt * n0
            expo["loss"] += dt * n1
            expo["damage"] += dt * (n0 + n1)
            count["gain"] += np.sum((a0 == 0) & (a1 == 1) & (d1 == 0))
            count["loss"] += np.sum((a0 == 1) & (a1 == 0) & (d1 == 0))
            count["damage"] += np.sum(d1 == 1)
            exits["inactive"] += np.sum((a0 == 0) & ((a1 == 1) | (d1 == 1)))
            exits["active"] += np.sum((a0 == 1) & ((a1 == 0) | (d1 == 1)))
            exits_damage["inactive"] += np.sum((a0 == 0) & (d1 == 1))
            exits_damage["active"] += np.sum((a0 == 1) & (d1 == 1))
    log_rate = {}
    for t in count:
        if count[t] > 0 and expo[t] > 0:
            log_rate[t] = float(np.log(count[t] / expo[t]))
        else:
            log_rate[t] = _FALLBACK_LOG_RATE
    jump = {}
    for s in exits:
        if exits[s] > 0:
            jump[s] = float(np.clip(exits_damage[s] / exits[s], 0.01, 0.5))
        else:
            jump[s] = 0.05
    return log_rate, jump


def initial_values(dataset: PanelDataset, spec: ModelSpec):
    """Starting parameters: crude-rate baselines, zero coefficients,
    unit variances, zero correlation, alpha = -0.2, mixture fraction 0.15.
    """
    log_rate, jump = _crude_rates(dataset)
    common = dict(log_sigma2_u=0.0, log_sigma2_v=0.0, atanh_rho=0.0,
                  logit_pi=float(np.log(0.15 / 0.85)))
    if spec.model == SIX_STATE:
        return SixStateParams(
            log_lam0_gain=log_rate["gain"],
            log_lam0_loss=log_rate["loss"],
            log_lam0_damage=log_rate["damage"],
            beta_gain=np.zeros(len(spec.columns("gain"))),
            beta_loss=np.zeros(len(spec.columns("loss"))),
            beta_damage=np.zeros(len(spec.columns("damage"))),
            alpha=-0.2,
            **common,
        )
    # Total exit rate approximated by the sum of the crude activity and
    # damage rates; mean sojourn time is its reciprocal.
    exit_inactive = np.exp(log_rate["gain"]) + np.exp(log_rate["damage"])
    exit_active = np.exp(log_rate["loss"]) + np.exp(log_rate["damage"])
    return FiveStateParams(
        log_mu0_inactive=float(-np.log(exit_inactive)),
        log_mu0_active=float(-np.log(exit_active)),
        log_odds0_inactive=float(np.log(jump["inactive"] / (1 - jump["inactive"]))),
        log_odds0_active=float(np.log(jump["active"] / (1 - jump["active"]))),
        beta_mu_inactive=np.zeros(len(spec.columns("sojourn_inactive"))),
        beta_mu_active=np.zeros(len(spec.columns("sojourn_active"))),
        beta_jump_inactive=np.zeros(len(spec.columns("jump_inactive"))),
        beta_jump_active=np.zeros(len(spec.columns("jump_active"))),
        alpha1=-0.2,
        alpha2=-0.2,
        **common,
    )


# --------------------------------------------------------------------------
# Derivatives
# --------------------------------------------------------------------------


def fd_gradient(f, theta: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient with per-coordinate relative steps."""
    theta = np.asarray(theta, dtype=float)
    g = np.empty(len(theta))
    for k in range(len(theta)):
        h = rel_step * max(1.0, abs(theta[k]))
        up, down = theta.copy(), theta.copy()
        up[k] += h
        down[k] -= h
        fu, fd = f(up), f(down)
        if np.isfinite(fu) and np.isfinite(fd):
            g[k] = (fu - fd) / (2.0 * h)
        elif np.isfinite(fu):
            g[k] = (fu - f(theta)) / h
        elif np.isfinite(fd):
            g[k] = (f(theta) - fd) / h
        else:
            g[k] = 0.0
    return g


def numerical_hessian(loglik, theta: np.ndarray) -> np.ndarray:
    """Central-difference Hessian of loglik, symmetrized exactly.

    Step sizes are max(1e-4, 1e-4 |theta_k|) per coordinate; off-diagonal
    entries use the standard four-point stencil.
    """
    theta = np.asarray(theta, dtype=float)
    n = len(theta)
    h = np.maximum(1e-4, 1e-4 * np.abs(theta))
    f0 = loglik(theta)
    hess = np.empty((n, n))

    def at(*shifts):
        x = theta.copy()
        for k, s in shifts:
            x[k] += s
        return loglik(x)

    for k in range(n):
        hess[k, k] = (at((k, h[k])) - 2.0 * f0 + at((k, -h[k]))) / h[k] ** 2
        for m in range(k + 1, n):
            val = (
                at((k, h[k]), (m, h[m]))
                - at((k, h[k]), (m, -h[m]))
                - at((k, -h[k]), (m, h[m]))
                + at((k, -h[k]), (m, -h[m]))
            ) / (4.0 * h[k] * h[m])
            hess[k, m] = val
            hess[m, k] = val
    return (hess + hess.T) / 2.0


def covariance_from_hessian(hess: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of -H restricted to its positive-curvature eigenspace.

    Returns (covariance, flagged) where flagged marks parameters whose
    variance could not be obtained from a direction of positive curvature.
    """
    info = -(hess + hess.T) / 2.0
    eigval, eigvec = np.linalg.eigh(info)
    pos = eigval > 1e-12 * max(1.0, float(np.max(np.abs(eigval))))
    if not np.all(pos):
        warnings.warn(
            "Hessian is not negative definite at the optimum; "
            f"{int(np.sum(~pos))} direction(s) of non-positive curvature flagged",
            RuntimeWarning,
            stacklevel=2,
        )
    inv = np.where(pos, 1.0 / np.where(pos, eigval, 1.0), 0.0)
    cov = (eigvec * inv) @ eigvec.T
    # A parameter is unreliable when its axis has weight on a flat/negative
    # direction or its projected variance is non-positive.
    weight_bad = np.sum(eigvec[:, ~pos] ** 2, axis=1) if np.any(~pos) else np.zeros(len(eigval))
    flagged = (np.diag(cov) <= 0) | (weight_bad > 1e-8)
    return cov, flagged


# --------------------------------------------------------------------------
# Wald intervals on the natural reporting scale
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ParameterReport:
    """One row of the reporting table, on the natural scale."""

    name: str
    transition: str
    estimate: float
    se: float
    lower: float
    upper: float
    flagged: bool = False


_Z95 = 1.96

_TRANSITION_OF_BLOCK = {
    "beta_gain": "gain",
    "beta_loss": "loss",
    "beta_damage": "damage",
    "beta_mu_inactive": "sojourn_inactive",
    "beta_mu_active": "sojourn_active",
    "beta_jump_inactive": "jump_inactive",
    "beta_jump_active": "jump_active",
    "log_lam0_gain": "gain",
    "log_lam0_loss": "loss",
    "log_lam0_damage": "damage",
    "log_mu0_inactive": "sojourn_inactive",
    "log_mu0_active": "sojourn_active",
    "log_odds0_inactive": "jump_inactive",
    "log_odds0_active": "jump_active",
}


def _natural(name: str, est: float, se: float):
    """Map one transformed-scale (estimate, se) pair to the natural scale.

    Interval endpoints are transformed from the unconstrained-scale Wald
    interval, so they respect range restrictions; the reported SE is the
    delta-method one.
    """
    lo, hi = est - _Z95 * se, est + _Z95 * se
    if name.startswith("log_"):
        f, df = np.exp, np.exp(est)
        return name[4:], float(f(est)), float(df * se), float(f(lo)), float(f(hi))
    if name == "atanh_rho":
        val = np.tanh(est)
        return "rho", float(val), float((1 - val**2) * se), float(np.tanh(lo)), float(np.tanh(hi))
    if name == "logit_pi":
        val = expit(est)
        return "pi", float(val), float(val * (1 - val) * se), float(expit(lo)), float(expit(hi))
    return name, float(est), float(se), float(lo), float(hi)


def wald_intervals(
    names: list[str],
    theta: np.ndarray,
    covariance: np.ndarray,
    flagged: np.ndarray | None = None,
) -> list[ParameterReport]:
    """95% Wald intervals per parameter on the natural reporting scale.

    A zero SE yields a degenerate (estimate, estimate) interval; flagged
    parameters (non-positive curvature) get NaN SEs and bounds.
    """
    theta = np.asarray(theta, dtype=float)
    covariance = np.asarray(covariance, dtype=float)
    if flagged is None:
        flagged = np.zeros(len(theta), dtype=bool)
    rows = []
    for k, name in enumerate(names):
        block = name.split(":", 1)[0]
        transition = _TRANSITION_OF_BLOCK.get(block, "shared")
        if flagged[k]:
            nat_name, est = _natural(name, theta[k], 0.0)[:2]
            label = name.split(":", 1)[1] if ":" in name else nat_name
            rows.append(ParameterReport(label, transition, est,
                                        np.nan, np.nan, np.nan, True))
            continue
        se_k = float(np.sqrt(max(covariance[k, k], 0.0)))
        nat_name, est, se, lo, hi = _natural(name, theta[k], se_k)
        label = name.split(":", 1)[1] if ":" in name else nat_name
        rows.append(ParameterReport(label, transition, est, se, lo, hi))
    return rows


# --------------------------------------------------------------------------
# BFGS maximizer
# --------------------------------------------------------------------------


@dataclass
class _Maximizer:
    """Quasi-Newton ascent with backtracking line search.

    The inverse-Hessian approximation is kept positive definite by the
    curvature-condition skip, so steps are always ascent directions; the
    line search never accepts a decrease in the objective.
    """

    f: callable
    gtol: float = 1e-5
    ftol: float = 1e-9
    maxiter: int = 2000
    armijo_c1: float = 1e-4
    max_backtracks: int = 40
    n_evals: int = 0

    def _eval(self, x):
        self.n_evals += 1
        return self.f(x)

    def _gradient(self, x):
        g = fd_gradient(self._eval, x)
        return g

    def run(self, x0: np.ndarray):
        x = np.asarray(x0, dtype=float)
        fx = self._eval(x)
        if not np.isfinite(fx):
            raise InitializationError("log-likelihood is -inf at the starting point")
        n = len(x)
        h_inv = np.eye(n)
        g = self._gradient(x)
        flat_count = 0
        message = "maximum iterations reached"
        converged = False
        it = 0
        for it in range(1, self.maxiter + 1):
            if np.max(np.abs(g)) < self.gtol:
                converged, message = True, "gradient norm below tolerance"
                break
            d = h_inv @ g
            slope = float(np.dot(g, d))
            if slope <= 0.0 or not np.isfinite(slope):
                h_inv = np.eye(n)
                d = g
                slope = float(np.dot(g, g))
                if slope == 0.0:
                    converged, message = True, "gradient norm below tolerance"
                    break
            step = 1.0
            fn = -np.inf
            for _ in range(self.max_backtracks):
                xn = x + step * d
                fn = self._eval(xn)
                if np.isfinite(fn) and fn >= fx + self.armijo_c1 * step * slope:
                    break
                step *= 0.5
            else:
                converged, message = False, "line search failed to improve"
                break
            gn = self._gradient(xn)
            s = xn - x
            y = gn - g  # curvature of the ascent problem: s.(-y) > 0
            sy = -float(np.dot(s, y))
            if sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y) + 1e-300):
                rho = 1.0 / sy
                sy_outer = np.outer(s, -y)
                h_inv = (
                    (np.eye(n) - rho * sy_outer) @ h_inv @ (np.eye(n) - rho * sy_outer.T)
                    + rho * np.outer(s, s)
                )
            rel_change = abs(fn - fx) / max(1.0, abs(fx))
            flat_count = flat_count + 1 if rel_change < self.ftol else 0
            x, fx, g = xn, fn, gn
            if flat_count >= 3:
                converged, message = True, "log-likelihood change below tolerance"
                break
        return x, fx, g, it, converged, message


# --------------------------------------------------------------------------
# Fit driver
# --------------------------------------------------------------------------


@dataclass
class FitResult:
    """Maximum likelihood estimates with asymptotic uncertainty.

    theta/se/covariance live on the unconstrained optimization scale and
    are aligned with names; table carries the natural-scale report rows.
    """

    model: str
    re_structure: str
    quadrature_n: int
    names: list[str]
    theta: np.ndarray
    se: np.ndarray
    covariance: np.ndarray
    flagged: np.ndarray
    loglik: float
    iterations: int
    n_evals: int
    converged: bool
    message: str
    table: list[ParameterReport] = field(default_factory=list)
    floor_hits: int = 0

    _spec: ModelSpec | None = None

    @property
    def params(self):
        spec = self._spec or ModelSpec(model=self.model, re_structure=self.re_structure,
                                       quadrature_n=self.quadrature_n)
        return unpack_params(self.theta, spec)

    def by_name(self) -> dict[str, tuple[float, float]]:
        """name -> (estimate, se) on the unconstrained scale."""
        return {n: (float(t), float(s)) for n, t, s in zip(self.names, self.theta, self.se)}


def fit(
    dataset: PanelDataset,
    spec: ModelSpec,
    init=None,
    gtol: float = 1e-5,
    ftol: float = 1e-9,
    maxiter: int = 2000,
    compute_se: bool = True,
) -> FitResult:
    """Fit the model by maximum likelihood.

    init may be a typed parameter object; by default crude-rate starting
    values are used.  With compute_se=False the Hessian pass is skipped
    (useful for likelihood-comparison runs).
    """
    design = build_design(dataset, spec)
    rule = gauss_hermite_rule(spec.n_quad)
    names = parameter_names(spec)

    if init is None:
        init = initial_values(dataset, spec)
    theta0 = pack_params(init, spec)
    if len(theta0) != len(names):
        raise ValueError("initial parameter vector does not match the model spec")

    def objective(theta):
        params = unpack_params(theta, spec)
        return total_loglik(None, params, spec, rule=rule, design=design)

    with warnings.catch_warnings():
        warnings.simplefilter("once", RuntimeWarning)
        opt = _Maximizer(f=objective, gtol=gtol, ftol=ftol, maxiter=maxiter)
        theta, loglik, _, iterations, converged, message = opt.run(theta0)

        n = len(theta)
        if compute_se:
            hess = numerical_hessian(objective, theta)
            cov, flagged = covariance_from_hessian(hess)
            se = np.sqrt(np.maximum(np.diag(cov), 0.0))
            se[flagged] = np.nan
        else:
            cov = np.full((n, n), np.nan)
            se = np.full(n, np.nan)
            flagged = np.zeros(n, dtype=bool)

    audit: dict = {}
    params = unpack_params(theta, spec)
    final = total_loglik(None, params, spec, rule=rule, design=design, audit=audit)
    table = wald_intervals(names, theta, cov, flagged) if compute_se else []
    return FitResult(
        model=spec.model,
        re_structure=spec.re_structure,
        quadrature_n=spec.n_quad,
        names=names,
        theta=theta,
        se=se,
        covariance=cov,
        flagged=flagged,
        loglik=float(final),
        iterations=iterations,
        n_evals=opt.n_evals,
        converged=converged,
        message=message,
        table=table,
        floor_hits=int(audit.get("floor_hits", 0)),
        _spec=spec,
    )
