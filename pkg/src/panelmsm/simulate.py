"""Synthetic cohort generator.

Simulates joint-level continuous-time Markov paths under the same
piecewise-constant assumption the likelihood makes: intensities are
computed at each clinic visit from the observed panel (so dynamic
covariates feed back exactly as in fitting) and held fixed until the next
visit, within which the path evolves by competing exponential clocks.

Stayer patients are drawn with the mixture probability and never enter a
damaged state.  The hidden truth (stayer labels and random-effect draws)
is returned alongside the dataset so recovery tests can check coverage.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from panelmsm.data import PanelDataset, Patient, visit_covariate_columns
from panelmsm.joints import N_JOINTS
from panelmsm.model import (
    ModelSpec,
    OBSERVATION_LEVEL,
    mover_six_state_intensities,
    stayer_intensities,
    five_state_sojourn_params,
    sojourn_to_intensities,
    stayer_sojourn_intensities,
)
from panelmsm.states import SIX_STATE, N_MOVER_STATES, mover_state_index


@dataclass
class SimConfig:
    """Generator settings: cohort size, visit schedule, and true parameters.

    Visit gaps are lognormal with the given median, clipped to
    [min_gap, max_gap]; visit counts are uniform on [min_visits,
    max_visits].  Baseline covariates are drawn per patient.
    """

    n_patients: int
    params: object
    spec: ModelSpec
    seed: int
    median_gap_years: float = 0.5
    gap_log_sd: float = 0.6
    min_gap_years: float = 0.1
    max_gap_years: float = 3.0
    min_visits: int = 5
    max_visits: int = 20
    sex_proportion: float = 0.5
    age_onset_mean: float = 35.0
    age_onset_sd: float = 10.0
    duration_entry_mean: float = 5.0
    p_initial_active: float = 0.0

    def __post_init__(self):
        if self.n_patients < 1:
            raise ValueError("n_patients must be positive")
        if not 0 < self.min_gap_years <= self.max_gap_years:
            raise ValueError("need 0 < min_gap_years <= max_gap_years")
        if not 2 <= self.min_visits <= self.max_visits:
            raise ValueError("need 2 <= min_visits <= max_visits")


@dataclass
class SimTruth:
    """Hidden generative state for test harnesses.

    effects[pid] is an (n_intervals, 2) array of (u, v) draws for
    observation-level random effects, or a single (1, 2) row shared by all
    intervals for patient-level ones.
    """

    stayer: dict = field(default_factory=dict)
    effects: dict = field(default_factory=dict)


def sample_interval_end_state(
    q_rates: np.ndarray, start: int, dt: float, rng: np.random.Generator
) -> int:
    """End state of a CTMC path of duration dt from start.

    q_rates[r, s] is the intensity r -> s (diagonal ignored); jumps are
    simulated by competing exponential clocks.
    """
    state = start
    remaining = float(dt)
    n = q_rates.shape[0]
    while True:
        rates = q_rates[state]
        total = float(np.sum(rates)) - float(rates[state])
        if total <= 0.0:
            return state
        wait = rng.exponential(1.0 / total)
        if wait >= remaining:
            return state
        remaining -= wait
        probs = rates.copy()
        probs[state] = 0.0
        state = int(rng.choice(n, p=probs / total))


def _mover_q(z_visit, l, u, v, params, model) -> np.ndarray:
    if model == SIX_STATE:
        r = mover_six_state_intensities(
            z_visit["gain"][l], z_visit["loss"][l], z_visit["damage"][l], u, v, params
        )
        q = np.zeros((4, 4))
        q[0, 1], q[0, 2] = r.lam12, r.lam13
        q[1, 0], q[1, 3] = r.lam21, r.lam24
        q[2, 3], q[3, 2] = r.lam34, r.lam43
        return q
    sj = five_state_sojourn_params(
        z_visit["sojourn_inactive"][l], z_visit["sojourn_active"][l],
        z_visit["jump_inactive"][l], z_visit["jump_active"][l], u, v, params,
    )
    r = sojourn_to_intensities(sj.mu1, sj.mu2, sj.p13, sj.p23, sj.mu4, sj.mu5)
    q = np.zeros((3, 3))
    q[0, 1], q[0, 2] = r.lam12, r.lam13
    q[1, 0], q[1, 2] = r.lam21, r.lam23
    return q


def _stayer_q(z_visit, l, u, params, model) -> np.ndarray:
    if model == SIX_STATE:
        r = stayer_intensities(z_visit["gain"][l], z_visit["loss"][l], u, params)
    else:
        sj = five_state_sojourn_params(
            z_visit["sojourn_inactive"][l], z_visit["sojourn_active"][l],
            z_visit["jump_inactive"][l], z_visit["jump_active"][l], u, 0.0, params,
        )
        r = stayer_sojourn_intensities(sj.mu4, sj.mu5)
    return np.array([[0.0, r.lam_on], [r.lam_off, 0.0]])


def _state_flags(state: int, model: str) -> tuple[int, int]:
    """(active, damaged) flags of a mover state index."""
    if model == SIX_STATE:
        return state in (1, 3), state in (2, 3)
    return state == 1, state == 2


def _simulate_patient(pid: str, config: SimConfig, rng: np.random.Generator):
    spec, params = config.spec, config.params
    m = int(rng.integers(config.min_visits, config.max_visits + 1))
    gaps = np.exp(rng.normal(np.log(config.median_gap_years), config.gap_log_sd, m - 1))
    gaps = np.clip(gaps, config.min_gap_years, config.max_gap_years)
    times = np.concatenate(([0.0], np.cumsum(gaps)))

    sex = int(rng.random() < config.sex_proportion)
    age = float(rng.normal(config.age_onset_mean, config.age_onset_sd))
    duration = float(rng.exponential(config.duration_entry_mean))

    is_stayer = bool(rng.random() < params.pi)
    active = np.zeros((m, N_JOINTS), dtype=np.int8)
    damaged = np.zeros((m, N_JOINTS), dtype=np.int8)
    active[0] = rng.random(N_JOINTS) < config.p_initial_active
    patient = Patient(pid, sex, age, duration, times, active, damaged,
                      np.ones((m, N_JOINTS), dtype=bool))

    sigma_u = np.sqrt(params.sigma2_u)
    sigma_v = np.sqrt(params.sigma2_v)
    rho = params.rho

    def draw_effects():
        x, y = rng.standard_normal(2)
        u = sigma_u * x
        v = rho * sigma_v * x + sigma_v * np.sqrt(1.0 - rho * rho) * y
        return u, v

    if spec.re_structure == OBSERVATION_LEVEL:
        effects = np.array([draw_effects() for _ in range(m - 1)])
    else:
        effects = np.array([draw_effects()])

    for j in range(m - 1):
        z_visit = {
            t: visit_covariate_columns(patient, j, spec.columns(t), spec.update_duration)
            for t in spec.transitions
        }
        # AMA is undefined at the entry visit; the generator uses 0 there
        # (the likelihood never sees this interval).
        for z in z_visit.values():
            np.nan_to_num(z, copy=False, nan=0.0)
        u, v = effects[j] if spec.re_structure == OBSERVATION_LEVEL else effects[0]
        dt = float(times[j + 1] - times[j])
        for l in range(N_JOINTS):
            if is_stayer:
                q = _stayer_q(z_visit, l, u, params, spec.model)
                s1 = sample_interval_end_state(q, int(patient.active[j, l]), dt, rng)
                patient.active[j + 1, l] = s1
            else:
                s0 = mover_state_index(patient.active[j, l], patient.damaged[j, l],
                                       spec.model)
                q = _mover_q(z_visit, l, u, v, params, spec.model)
                s1 = sample_interval_end_state(q, s0, dt, rng)
                a, d = _state_flags(s1, spec.model)
                patient.active[j + 1, l] = a
                patient.damaged[j + 1, l] = d
    return patient, is_stayer, effects


def simulate_cohort(config: SimConfig) -> tuple[PanelDataset, SimTruth]:
    """Generate a cohort; identical config and seed give identical output."""
    children = np.random.SeedSequence(config.seed).spawn(config.n_patients)
    width = len(str(config.n_patients))
    truth = SimTruth()
    patients = []
    for k, child in enumerate(children):
        pid = f"sim{k:0{width}d}"
        patient, is_stayer, effects = _simulate_patient(
            pid, config, np.random.default_rng(child)
        )
        patients.append(patient)
        truth.stayer[pid] = is_stayer
        truth.effects[pid] = effects
    return PanelDataset(patients), truth


def write_truth_csv(truth: SimTruth, path) -> None:
    """Sidecar with stayer labels and random-effect draws, one row per draw.

    Patient-level runs have a single row per patient with interval_index -1.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "stayer", "interval_index", "u", "v"])
        for pid in truth.stayer:
            effects = truth.effects[pid]
            single = len(effects) == 1
            for j, (u, v) in enumerate(effects):
                writer.writerow(
                    [pid, int(truth.stayer[pid]), -1 if single else j,
                     f"{u:.10f}", f"{v:.10f}"]
                )


def empirical_transition_table(dataset: PanelDataset) -> np.ndarray:
    """4x4 counts of consecutive-visit state pairs pooled over joints.

    States are ordered (not active, not damaged), (active, not damaged),
    (not active, damaged), (active, damaged); cells implying a damage
    reversal are structurally zero.
    """
    counts = np.zeros((4, 4), dtype=np.int64)
    for p in dataset.patients:
        for j in range(p.n_visits - 1):
            both = np.nonzero(p.observed[j] & p.observed[j + 1])[0]
            for l in both:
                s0 = mover_state_index(p.active[j, l], p.damaged[j, l], SIX_STATE)
                s1 = mover_state_index(p.active[j + 1, l], p.damaged[j + 1, l], SIX_STATE)
                counts[s0, s1] += 1
    return counts
