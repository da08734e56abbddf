"""Shared parameter factories and simulated-dataset builders."""

import numpy as np
import pytest

from panelmsm.model import (
    FiveStateParams,
    ModelSpec,
    SixStateParams,
    logit,
)
from panelmsm.simulate import SimConfig, simulate_cohort


def make_six_params(n_cov=(0, 0, 0), **overrides):
    """Six-state parameter set with moderate defaults; n_cov gives the
    (gain, loss, damage) regression-coefficient counts."""
    base = dict(
        log_lam0_gain=np.log(0.8),
        log_lam0_loss=np.log(1.2),
        log_lam0_damage=np.log(0.06),
        beta_gain=np.zeros(n_cov[0]),
        beta_loss=np.zeros(n_cov[1]),
        beta_damage=np.zeros(n_cov[2]),
        damaged_gain=0.2,
        damaged_loss=-0.1,
        active_damage=0.8,
        stayer_gain=0.1,
        stayer_loss=-0.1,
        alpha=-0.4,
        log_sigma2_u=np.log(1.5),
        log_sigma2_v=np.log(2.0),
        atanh_rho=np.arctanh(0.2),
        logit_pi=logit(0.15),
    )
    base.update(overrides)
    return SixStateParams(**base)


def make_five_params(n_cov=(0, 0, 0, 0), **overrides):
    """Five-state parameter set with moderate defaults; n_cov gives the
    (sojourn_inactive, sojourn_active, jump_inactive, jump_active) counts."""
    base = dict(
        log_mu0_inactive=np.log(1.5),
        log_mu0_active=np.log(0.8),
        log_odds0_inactive=-3.0,
        log_odds0_active=-2.0,
        beta_mu_inactive=np.zeros(n_cov[0]),
        beta_mu_active=np.zeros(n_cov[1]),
        beta_jump_inactive=np.zeros(n_cov[2]),
        beta_jump_active=np.zeros(n_cov[3]),
        stayer_mu_inactive=0.2,
        stayer_mu_active=-0.2,
        alpha1=-0.4,
        alpha2=0.5,
        log_sigma2_u=np.log(1.5),
        log_sigma2_v=np.log(2.0),
        atanh_rho=np.arctanh(0.2),
        logit_pi=logit(0.15),
    )
    base.update(overrides)
    return FiveStateParams(**base)


def no_covariate_spec(model="six_state", re_structure="observation", **kwargs):
    if model == "six_state":
        cov = {"gain": (), "loss": (), "damage": ()}
    else:
        cov = {
            "sojourn_inactive": (),
            "sojourn_active": (),
            "jump_inactive": (),
            "jump_active": (),
        }
    return ModelSpec(model=model, re_structure=re_structure, covariates=cov, **kwargs)


def sex_only_spec(model="six_state", re_structure="observation", **kwargs):
    if model == "six_state":
        cov = {"gain": ("sex",), "loss": ("sex",), "damage": ("sex",)}
    else:
        cov = {
            "sojourn_inactive": ("sex",),
            "sojourn_active": ("sex",),
            "jump_inactive": ("sex",),
            "jump_active": ("sex",),
        }
    return ModelSpec(model=model, re_structure=re_structure, covariates=cov, **kwargs)


def small_cohort(params, spec, n_patients=8, seed=7, **kwargs):
    config = SimConfig(
        n_patients=n_patients,
        params=params,
        spec=spec,
        seed=seed,
        min_visits=kwargs.pop("min_visits", 4),
        max_visits=kwargs.pop("max_visits", 7),
        **kwargs,
    )
    return simulate_cohort(config)


@pytest.fixture(scope="session")
def six_obs_cohort():
    spec = no_covariate_spec("six_state", "observation", quadrature_n=7)
    params = make_six_params()
    dataset, truth = small_cohort(params, spec)
    return dataset, truth, params, spec


@pytest.fixture(scope="session")
def five_obs_cohort():
    spec = no_covariate_spec("five_state", "observation", quadrature_n=7)
    params = make_five_params()
    dataset, truth = small_cohort(params, spec)
    return dataset, truth, params, spec
