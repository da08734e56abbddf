"""Command-line interface: config parsing, artifacts, and exit codes."""

import numpy as np
import pytest

from panelmsm.cli import (
    UsageError,
    _model_spec_from,
    _params_from_config,
    _read_ini,
    main,
    read_parameter_table,
)
from panelmsm.data import read_panel_csv

_SIM_CONFIG = """\
[model]
model = six
re_structure = obs
quadrature_n = 5
covariates_gain = sex
covariates_loss = sex
covariates_damage =

[parameters]
log_lam0_gain = -0.223
log_lam0_loss = 0.182
log_lam0_damage = -2.3
beta_gain:sex = 0.4
beta_loss:sex = -0.2
damaged_gain = 0.3
damaged_loss = -0.2
active_damage = 0.8
stayer_gain = 0.1
stayer_loss = -0.1
alpha = -0.4
log_sigma2_u = 0.405
log_sigma2_v = 0.693
atanh_rho = 0.203
logit_pi = -1.735

[simulate]
n_patients = 12
seed = 4
min_visits = 4
max_visits = 6

[fit]
maxiter = 15
"""


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    """One simulated cohort shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "sim.ini"
    config.write_text(_SIM_CONFIG)
    out = root / "sim_out"
    assert main(["simulate", "--config", str(config), "--out", str(out)]) == 0
    return root, config, out


class TestConfigParsing:
    def test_parameter_names_keep_colon_and_case(self, sim_dir):
        root, config, _ = sim_dir
        parsed = _read_ini(config)
        assert "beta_gain:sex" in parsed["parameters"]

    def test_spec_from_config(self, sim_dir):
        _, config, _ = sim_dir

        class Args:
            model = None
            re = None
            quad = None

        spec = _model_spec_from(_read_ini(config), Args())
        assert spec.model == "six_state"
        assert spec.re_structure == "observation"
        assert spec.n_quad == 5
        assert spec.covariates["gain"] == ("sex",)
        assert spec.covariates["damage"] == ()

    def test_params_round_trip_from_config(self, sim_dir):
        _, config, _ = sim_dir

        class Args:
            model = None
            re = None
            quad = None

        parsed = _read_ini(config)
        spec = _model_spec_from(parsed, Args())
        params = _params_from_config(parsed, spec)
        assert params.log_lam0_gain == pytest.approx(-0.223)
        assert params.beta_gain[0] == pytest.approx(0.4)
        assert params.pi == pytest.approx(0.15, abs=1e-3)

    def test_unknown_parameter_rejected(self, tmp_path):
        config = tmp_path / "bad.ini"
        config.write_text("[model]\nmodel = six\n[parameters]\nbeta_gain = 1\n")

        class Args:
            model = None
            re = None
            quad = None

        parsed = _read_ini(config)
        spec = _model_spec_from(parsed, Args())
        with pytest.raises(UsageError):
            _params_from_config(parsed, spec)

    def test_missing_config_file(self):
        with pytest.raises(UsageError):
            _read_ini("/nonexistent/panelmsm.ini")


class TestSimulateCommand:
    def test_artifacts_written(self, sim_dir):
        _, _, out = sim_dir
        assert (out / "data.csv").exists()
        assert (out / "truth.csv").exists()
        meta = (out / "metadata.txt").read_text()
        assert "n_patients = 12" in meta and "seed = 4" in meta

    def test_data_csv_is_valid_panel(self, sim_dir):
        _, _, out = sim_dir
        dataset = read_panel_csv(out / "data.csv")
        assert len(dataset) == 12

    def test_same_seed_reproduces_data_bytes(self, sim_dir, tmp_path):
        _, config, out = sim_dir
        again = tmp_path / "again"
        assert main(["simulate", "--config", str(config), "--out", str(again)]) == 0
        assert (again / "data.csv").read_bytes() == (out / "data.csv").read_bytes()
        assert (again / "truth.csv").read_bytes() == (out / "truth.csv").read_bytes()

    def test_simulate_without_config_is_usage_error(self):
        assert main(["simulate"]) == 2


class TestFitCommand:
    @pytest.fixture(scope="class")
    def fit_out(self, sim_dir, tmp_path_factory):
        root, config, out = sim_dir
        fit_dir = tmp_path_factory.mktemp("fit_out")
        code = main([
            "fit", "--config", str(config), "--data", str(out / "data.csv"),
            "--out", str(fit_dir), "--truth", str(out / "truth.csv"),
        ])
        assert code == 0
        return fit_dir

    def test_parameter_table_round_trips_at_six_decimals(self, fit_out):
        rows = read_parameter_table(fit_out / "parameters.csv")
        # 3 baselines + 2 regression coefficients + 6 linkage/RE scalars
        # + 4 variance-scale entries
        assert len(rows) == 15
        names = {r["name"] for r in rows}
        assert {"lam0_gain", "sex", "alpha", "sigma2_u", "pi"} <= names
        for r in rows:
            if not r["flagged"]:
                assert np.isfinite(r["estimate"])
                assert r["lower"] <= r["estimate"] <= r["upper"] or np.isnan(r["lower"])

    def test_metadata_and_report(self, fit_out):
        meta = (fit_out / "metadata.txt").read_text()
        assert "log_likelihood = " in meta and "converged = " in meta
        report = (fit_out / "report.txt").read_text()
        assert "Parameter estimates and 95% Wald intervals" in report
        assert "Truth-vs-estimate comparison" in report
        assert "log-likelihood" in report

    def test_fit_requires_data(self, sim_dir):
        _, config, _ = sim_dir
        assert main(["fit", "--config", str(config)]) == 2

    def test_invalid_data_exits_one(self, sim_dir, tmp_path):
        _, config, _ = sim_dir
        bad = tmp_path / "bad.csv"
        header = ("patient_id,visit_time_years,hand,digit,site,active,damaged,"
                  "sex,age_onset_years,arthritis_duration_years")
        rows = [
            "p1,0.0,L,2,MCP,0,1,1,35.0,5.0",
            "p1,1.0,L,2,MCP,0,0,1,35.0,5.0",  # damage reversal
        ]
        bad.write_text(header + "\n" + "\n".join(rows) + "\n")
        assert main(["fit", "--config", str(config), "--data", str(bad)]) == 1


class TestValidateCommand:
    def test_clean_run_passes(self, capsys):
        assert main(["validate", "--grid", "25", "--seed", "1"]) == 0
        out = capsys.readouterr().out
        assert "validation: PASSED" in out
        assert "kernels: OK" in out and "quadrature: OK" in out

    def test_injected_error_is_caught(self, capsys):
        assert main(["validate", "--grid", "5", "--inject-error"]) == 1
        out = capsys.readouterr().out
        assert "validation: FAILED" in out


class TestSummarizeCommand:
    def test_summary_contents(self, sim_dir, tmp_path, capsys):
        _, _, out = sim_dir
        dest = tmp_path / "sum"
        code = main(["summarize", "--data", str(out / "data.csv"),
                     "--out", str(dest)])
        assert code == 0
        text = (dest / "summary.txt").read_text()
        assert "patients = 12" in text
        assert "observed transition table" in text
        printed = capsys.readouterr().out
        assert "patients = 12" in printed

    def test_summarize_requires_data(self):
        assert main(["summarize"]) == 2


class TestParserBasics:
    def test_unknown_command_exits_two(self):
        assert main(["explain"]) == 2

    def test_no_command_exits_two(self):
        assert main([]) == 2
