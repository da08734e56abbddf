"""Model specifications, parameter vectors, and intensity maps.

Two parameterizations are supported:

* six-state: log-linear regressions for the three baseline transition
  intensities (not-active -> active, active -> not-active, and
  not-damaged -> damaged), with the remaining intensities tied to them
  through scalar linkage coefficients (effect of damage on the activity
  transitions, of activity on the damage transition, and of stayer status
  on the activity transitions).

* five-state: log-linear regressions for the mean sojourn times in the
  two pre-damage activity states and logistic regressions for the jump
  probabilities into damage, mapped back to transition intensities via
  lambda = p / mu identities.

All regressions share a bivariate random-effect realization (u, v): u acts
on the activity part (scaled by alpha on the reverse transition), v on the
damage part.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from panelmsm.states import SIX_STATE, FIVE_STATE, MODELS

OBSERVATION_LEVEL = "observation"
PATIENT_LEVEL = "patient"

COVARIATE_NAMES = (
    "opposite_damaged",
    "damaged_count",
    "ama",
    "joint_type",
    "sex",
    "age_onset",
    "duration",
)

# Expanded design-matrix columns per covariate name.
_COVARIATE_COLUMNS = {
    "opposite_damaged": ("opposite_damaged",),
    "damaged_count": ("damaged_count",),
    "ama": ("ama",),
    "joint_type": ("jt_MCP", "jt_PIP", "jt_DIP", "jt_TMCP"),
    "sex": ("sex",),
    "age_onset": ("age_onset",),
    "duration": ("duration",),
}

SIX_STATE_TRANSITIONS = ("gain", "loss", "damage")
FIVE_STATE_TRANSITIONS = (
    "sojourn_inactive",
    "sojourn_active",
    "jump_inactive",
    "jump_active",
)

# Joint type is included only where differential rates were retained in the
# default configuration (activity gain and damage onset); the damaged-joint
# and active-joint indicators enter through linkage coefficients instead.
DEFAULT_SIX_STATE_COVARIATES = {
    "gain": ("opposite_damaged", "damaged_count", "ama", "joint_type", "sex", "age_onset", "duration"),
    "loss": ("opposite_damaged", "damaged_count", "ama", "sex", "age_onset", "duration"),
    "damage": ("opposite_damaged", "damaged_count", "ama", "joint_type", "sex", "age_onset", "duration"),
}

DEFAULT_FIVE_STATE_COVARIATES = {
    t: ("opposite_damaged", "damaged_count", "ama", "sex", "age_onset", "duration")
    for t in FIVE_STATE_TRANSITIONS
}


class ParameterExplosionError(FloatingPointError):
    """An intensity overflowed; the likelihood treats the point as -inf."""


def expand_columns(names: tuple[str, ...]) -> tuple[str, ...]:
    cols: list[str] = []
    for name in names:
        if name not in _COVARIATE_COLUMNS:
            raise ValueError(f"unknown covariate {name!r}; choose from {COVARIATE_NAMES}")
        cols.extend(_COVARIATE_COLUMNS[name])
    return tuple(cols)


@dataclass(frozen=True)
class ModelSpec:
    """Which model to fit and how.

    covariates maps each transition/regression name to the tuple of
    covariate names entering its linear predictor.  quadrature_n defaults
    to 15 for observation-level and 30 for patient-level random effects.
    """

    model: str = SIX_STATE
    re_structure: str = OBSERVATION_LEVEL
    quadrature_n: int | None = None
    covariates: dict[str, tuple[str, ...]] = field(default_factory=dict)
    update_duration: bool = True

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.re_structure not in (OBSERVATION_LEVEL, PATIENT_LEVEL):
            raise ValueError("re_structure must be 'observation' or 'patient'")
        defaults = (
            DEFAULT_SIX_STATE_COVARIATES
            if self.model == SIX_STATE
            else DEFAULT_FIVE_STATE_COVARIATES
        )
        merged = {k: tuple(self.covariates.get(k, v)) for k, v in defaults.items()}
        unknown = set(self.covariates) - set(defaults)
        if unknown:
            raise ValueError(f"unknown transitions {sorted(unknown)} for model {self.model}")
        object.__setattr__(self, "covariates", merged)
        if self.quadrature_n is not None and self.quadrature_n < 1:
            raise ValueError("quadrature_n must be >= 1")

    @property
    def transitions(self) -> tuple[str, ...]:
        return SIX_STATE_TRANSITIONS if self.model == SIX_STATE else FIVE_STATE_TRANSITIONS

    @property
    def n_quad(self) -> int:
        if self.quadrature_n is not None:
            return self.quadrature_n
        return 15 if self.re_structure == OBSERVATION_LEVEL else 30

    def columns(self, transition: str) -> tuple[str, ...]:
        return expand_columns(self.covariates[transition])

    def with_re_structure(self, re_structure: str) -> "ModelSpec":
        return replace(self, re_structure=re_structure, quadrature_n=self.quadrature_n)


# --------------------------------------------------------------------------
# Transform helpers (unconstrained optimization scale <-> natural scale)
# --------------------------------------------------------------------------


def expit(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def logit(p):
    p = np.asarray(p, dtype=float)
    out = np.log(p) - np.log1p(-p)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# Parameter containers
# --------------------------------------------------------------------------


@dataclass
class SixStateParams:
    """Six-state parameters on the unconstrained optimization scale.

    The beta vectors are aligned with the expanded design columns of the
    accompanying ModelSpec.  Linkage coefficients tie the secondary
    intensities to the three baseline regressions.
    """

    log_lam0_gain: float
    log_lam0_loss: float
    log_lam0_damage: float
    beta_gain: np.ndarray
    beta_loss: np.ndarray
    beta_damage: np.ndarray
    damaged_gain: float = 0.0   # lam34 = lam12 * exp(damaged_gain)
    damaged_loss: float = 0.0   # lam43 = lam21 * exp(damaged_loss)
    active_damage: float = 0.0  # lam24 = lam13 * exp(active_damage)
    stayer_gain: float = 0.0    # lam56 = lam12 * exp(stayer_gain)
    stayer_loss: float = 0.0    # lam65 = lam21 * exp(stayer_loss)
    alpha: float = 0.0
    log_sigma2_u: float = 0.0
    log_sigma2_v: float = 0.0
    atanh_rho: float = 0.0
    logit_pi: float = 0.0

    def __post_init__(self):
        self.beta_gain = np.asarray(self.beta_gain, dtype=float)
        self.beta_loss = np.asarray(self.beta_loss, dtype=float)
        self.beta_damage = np.asarray(self.beta_damage, dtype=float)

    @property
    def sigma2_u(self) -> float:
        return float(np.exp(self.log_sigma2_u))

    @property
    def sigma2_v(self) -> float:
        return float(np.exp(self.log_sigma2_v))

    @property
    def rho(self) -> float:
        return float(np.tanh(self.atanh_rho))

    @property
    def pi(self) -> float:
        return expit(self.logit_pi)


@dataclass
class FiveStateParams:
    """Five-state (sojourn time / jump probability) parameters.

    Mean sojourn times are log-linear; jump probabilities into damage are
    modelled on the log-odds scale.  Separate stayer coefficients are kept
    for the two activity states.
    """

    log_mu0_inactive: float
    log_mu0_active: float
    log_odds0_inactive: float
    log_odds0_active: float
    beta_mu_inactive: np.ndarray
    beta_mu_active: np.ndarray
    beta_jump_inactive: np.ndarray
    beta_jump_active: np.ndarray
    stayer_mu_inactive: float = 0.0  # mu4 = mu1 * exp(stayer_mu_inactive)
    stayer_mu_active: float = 0.0    # mu5 = mu2 * exp(stayer_mu_active)
    alpha1: float = 0.0
    alpha2: float = 0.0
    log_sigma2_u: float = 0.0
    log_sigma2_v: float = 0.0
    atanh_rho: float = 0.0
    logit_pi: float = 0.0

    def __post_init__(self):
        self.beta_mu_inactive = np.asarray(self.beta_mu_inactive, dtype=float)
        self.beta_mu_active = np.asarray(self.beta_mu_active, dtype=float)
        self.beta_jump_inactive = np.asarray(self.beta_jump_inactive, dtype=float)
        self.beta_jump_active = np.asarray(self.beta_jump_active, dtype=float)

    @property
    def sigma2_u(self) -> float:
        return float(np.exp(self.log_sigma2_u))

    @property
    def sigma2_v(self) -> float:
        return float(np.exp(self.log_sigma2_v))

    @property
    def rho(self) -> float:
        return float(np.tanh(self.atanh_rho))

    @property
    def pi(self) -> float:
        return expit(self.logit_pi)


# --------------------------------------------------------------------------
# Intensity maps
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class IntensitySet:
    """Mover intensities of the six-state structure (states 1-4)."""

    lam12: float
    lam21: float
    lam13: float
    lam24: float
    lam34: float
    lam43: float


@dataclass(frozen=True)
class StayerIntensitySet:
    """Stayer activity intensities (states 5-6 or 4-5)."""

    lam_on: float   # not active -> active
    lam_off: float  # active -> not active


@dataclass(frozen=True)
class FiveStateIntensitySet:
    """Mover intensities of the three-state structure (states 1-3)."""

    lam12: float
    lam13: float
    lam21: float
    lam23: float


@dataclass(frozen=True)
class SojournParams:
    """Mean sojourn times and damage jump probabilities."""

    mu1: float
    mu2: float
    p13: float
    p23: float
    mu4: float
    mu5: float


def _check_finite(*values: float) -> None:
    if not all(np.isfinite(v) for v in values):
        raise ParameterExplosionError("non-finite intensity (parameter overflow)")


def mover_six_state_intensities(
    z_gain: np.ndarray,
    z_loss: np.ndarray,
    z_damage: np.ndarray,
    u: float,
    v: float,
    params: SixStateParams,
) -> IntensitySet:
    """Mover transition intensities from covariates and random effects.

    The three baseline regressions give lam12, lam21, lam13; the damaged-
    state and active-state intensities follow through the linkage
    coefficients.
    """
    lam12 = np.exp(params.log_lam0_gain + float(np.dot(params.beta_gain, z_gain)) + u)
    lam21 = np.exp(params.log_lam0_loss + float(np.dot(params.beta_loss, z_loss)) + params.alpha * u)
    lam13 = np.exp(params.log_lam0_damage + float(np.dot(params.beta_damage, z_damage)) + v)
    lam34 = lam12 * np.exp(params.damaged_gain)
    lam43 = lam21 * np.exp(params.damaged_loss)
    lam24 = lam13 * np.exp(params.active_damage)
    _check_finite(lam12, lam21, lam13, lam34, lam43, lam24)
    return IntensitySet(lam12, lam21, lam13, lam24, lam34, lam43)


def stayer_intensities(
    z_gain: np.ndarray,
    z_loss: np.ndarray,
    u: float,
    params: SixStateParams,
) -> StayerIntensitySet:
    """Stayer activity intensities, tied to the mover baselines."""
    lam12 = np.exp(params.log_lam0_gain + float(np.dot(params.beta_gain, z_gain)) + u)
    lam21 = np.exp(params.log_lam0_loss + float(np.dot(params.beta_loss, z_loss)) + params.alpha * u)
    lam56 = lam12 * np.exp(params.stayer_gain)
    lam65 = lam21 * np.exp(params.stayer_loss)
    _check_finite(lam56, lam65)
    return StayerIntensitySet(lam56, lam65)


def five_state_sojourn_params(
    z_mu1: np.ndarray,
    z_mu2: np.ndarray,
    z_p13: np.ndarray,
    z_p23: np.ndarray,
    u: float,
    v: float,
    params: FiveStateParams,
) -> SojournParams:
    """Mean sojourn times and jump probabilities from covariates and (u, v)."""
    mu1 = np.exp(params.log_mu0_inactive + float(np.dot(params.beta_mu_inactive, z_mu1)) + u)
    mu2 = np.exp(params.log_mu0_active + float(np.dot(params.beta_mu_active, z_mu2)) + params.alpha1 * u)
    eta13 = params.log_odds0_inactive + float(np.dot(params.beta_jump_inactive, z_p13)) + v
    eta23 = params.log_odds0_active + float(np.dot(params.beta_jump_active, z_p23)) + params.alpha2 * v
    p13 = expit(eta13)
    p23 = expit(eta23)
    mu4 = mu1 * np.exp(params.stayer_mu_inactive)
    mu5 = mu2 * np.exp(params.stayer_mu_active)
    _check_finite(mu1, mu2, mu4, mu5, p13, p23)
    return SojournParams(mu1, mu2, p13, p23, mu4, mu5)


def sojourn_to_intensities(
    mu1: float, mu2: float, p13: float, p23: float, mu4: float, mu5: float
) -> FiveStateIntensitySet:
    """Map sojourn times and jump probabilities to transition intensities.

    Returns the mover intensities; stayer intensities are 1/mu4 and 1/mu5
    and are exposed through stayer_sojourn_intensities.
    """
    if min(mu1, mu2, mu4, mu5) <= 0:
        raise ValueError("mean sojourn times must be positive")
    lam12 = (1.0 - p13) / mu1
    lam13 = p13 / mu1
    lam21 = (1.0 - p23) / mu2
    lam23 = p23 / mu2
    return FiveStateIntensitySet(lam12, lam13, lam21, lam23)


def stayer_sojourn_intensities(mu4: float, mu5: float) -> StayerIntensitySet:
    if min(mu4, mu5) <= 0:
        raise ValueError("mean sojourn times must be positive")
    return StayerIntensitySet(1.0 / mu4, 1.0 / mu5)


def intensities_to_sojourn(rates: FiveStateIntensitySet) -> tuple[float, float, float, float]:
    """Inverse map: (mu1, mu2, p13, p23) from three-state intensities."""
    tot1 = rates.lam12 + rates.lam13
    tot2 = rates.lam21 + rates.lam23
    if tot1 <= 0 or tot2 <= 0:
        raise ValueError("total exit rates must be positive")
    return (1.0 / tot1, 1.0 / tot2, rates.lam13 / tot1, rates.lam23 / tot2)
