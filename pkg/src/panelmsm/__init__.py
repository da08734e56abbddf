"""Clustered continuous-time multi-state models for panel-observed data.

Fits mover-stayer mixtures of multi-state Markov models at the individual
joint level, with bivariate log-normal random effects (observation- or
patient-level), dynamic covariates, and an alternative parameterization in
terms of mean sojourn times and jump probabilities.  Includes a simulator
so that all estimation claims can be checked on synthetic cohorts.
"""

from panelmsm.joints import JointId, ALL_JOINTS, opposite_joint, encode_joint_type
from panelmsm.model import (
    ModelSpec,
    SixStateParams,
    FiveStateParams,
    IntensitySet,
    ParameterExplosionError,
    mover_six_state_intensities,
    stayer_intensities,
    five_state_sojourn_params,
    sojourn_to_intensities,
    intensities_to_sojourn,
)
from panelmsm.kernels import (
    two_state_tpm,
    three_state_tpm,
    four_state_tpm,
    expm_oracle,
)
from panelmsm.data import PanelDataset, Patient, read_panel_csv, write_panel_csv, compute_ama
from panelmsm.likelihood import (
    gauss_hermite_rule,
    bivariate_integrate,
    total_loglik,
    patient_marginal_loglik,
    patient_conditional_loglik,
)
from panelmsm.estimation import fit, FitResult, numerical_hessian, wald_intervals
from panelmsm.simulate import SimConfig, simulate_cohort, empirical_transition_table

__all__ = [
    "JointId",
    "ALL_JOINTS",
    "opposite_joint",
    "encode_joint_type",
    "ModelSpec",
    "SixStateParams",
    "FiveStateParams",
    "IntensitySet",
    "ParameterExplosionError",
    "mover_six_state_intensities",
    "stayer_intensities",
    "five_state_sojourn_params",
    "sojourn_to_intensities",
    "intensities_to_sojourn",
    "two_state_tpm",
    "three_state_tpm",
    "four_state_tpm",
    "expm_oracle",
    "PanelDataset",
    "Patient",
    "read_panel_csv",
    "write_panel_csv",
    "compute_ama",
    "gauss_hermite_rule",
    "bivariate_integrate",
    "total_loglik",
    "patient_marginal_loglik",
    "patient_conditional_loglik",
    "fit",
    "FitResult",
    "numerical_hessian",
    "wald_intervals",
    "SimConfig",
    "simulate_cohort",
    "empirical_transition_table",
]

__version__ = "0.1.0"
