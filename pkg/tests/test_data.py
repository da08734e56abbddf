"""Panel data ingestion, validation, and dynamic covariates."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panelmsm.data import (
    AmaUndefinedError,
    CSV_COLUMNS,
    DataValidationError,
    PanelDataset,
    Patient,
    attained_damaged_count,
    compute_ama,
    joint_ama,
    opposite_joint_damaged,
    read_panel_csv,
    visit_covariate_columns,
    write_panel_csv,
)
from panelmsm.joints import ALL_JOINTS, JOINT_INDEX, N_JOINTS, JointId


def _patient(pid="p1", times=(0.0, 1.0, 2.0), **kwargs):
    m = len(times)
    defaults = dict(
        sex=1,
        age_onset=35.0,
        duration_entry=5.0,
        times=np.array(times, dtype=float),
        active=np.zeros((m, N_JOINTS), dtype=np.int8),
        damaged=np.zeros((m, N_JOINTS), dtype=np.int8),
        observed=np.ones((m, N_JOINTS), dtype=bool),
    )
    defaults.update(kwargs)
    return Patient(pid, **defaults)


class TestValidation:
    def test_clean_record_passes(self):
        ds = PanelDataset([_patient()])
        assert len(ds) == 1 and ds.short_record_ids == []

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DataValidationError) as exc:
            PanelDataset([_patient("a"), _patient("a")])
        assert any("duplicate" in p for p in exc.value.problems)

    def test_single_visit_rejected(self):
        with pytest.raises(DataValidationError):
            PanelDataset([_patient(times=(0.0,))])

    def test_nonincreasing_times_rejected(self):
        with pytest.raises(DataValidationError) as exc:
            PanelDataset([_patient(times=(0.0, 1.0, 1.0))])
        assert any("strictly increasing" in p for p in exc.value.problems)

    def test_damage_reversal_rejected_with_location(self):
        damaged = np.zeros((3, N_JOINTS), dtype=np.int8)
        damaged[1, 5] = 1  # damaged at visit 1, healed at visit 2
        with pytest.raises(DataValidationError) as exc:
            PanelDataset([_patient(damaged=damaged)])
        msg = exc.value.problems[0]
        assert "reversal" in msg and ALL_JOINTS[5].label() in msg

    def test_reversal_across_unobserved_gap_detected(self):
        damaged = np.zeros((4, N_JOINTS), dtype=np.int8)
        observed = np.ones((4, N_JOINTS), dtype=bool)
        damaged[1, 0] = 1
        observed[2, 0] = False  # joint missing at visit 2
        damaged[3, 0] = 0
        with pytest.raises(DataValidationError):
            PanelDataset(
                [_patient(times=(0.0, 1.0, 2.0, 3.0), damaged=damaged, observed=observed)]
            )

    def test_two_visit_records_flagged_but_kept(self):
        ds = PanelDataset([_patient("short", times=(0.0, 1.0)), _patient("ok")])
        assert ds.short_record_ids == ["short"]

    def test_c_star_from_last_observed_visit(self):
        damaged = np.zeros((3, N_JOINTS), dtype=np.int8)
        p = _patient(damaged=damaged)
        assert p.c_star() == 0
        damaged[2, 3] = 1
        assert _patient(damaged=damaged).c_star() == 1
        # damage observed earlier but joint missing at the last visit
        damaged2 = np.zeros((3, N_JOINTS), dtype=np.int8)
        damaged2[1, 3] = 1
        damaged2[2, 3] = 1
        observed = np.ones((3, N_JOINTS), dtype=bool)
        observed[2, 3] = False
        assert _patient(damaged=damaged2, observed=observed).c_star() == 0


class TestCsvRoundTrip:
    def test_write_then_read_preserves_everything(self, tmp_path):
        rng = np.random.default_rng(11)
        patients = []
        for k in range(3):
            m = 4
            damaged = np.zeros((m, N_JOINTS), dtype=np.int8)
            onset = rng.integers(1, m, size=N_JOINTS)
            for l in range(N_JOINTS):
                if rng.random() < 0.3:
                    damaged[onset[l]:, l] = 1
            patients.append(
                _patient(
                    f"p{k}",
                    times=tuple(np.cumsum(rng.uniform(0.2, 1.5, m))),
                    sex=int(rng.integers(2)),
                    active=rng.integers(0, 2, (m, N_JOINTS)).astype(np.int8),
                    damaged=damaged,
                    observed=rng.random((m, N_JOINTS)) < 0.9,
                )
            )
        ds = PanelDataset(patients)
        path = tmp_path / "panel.csv"
        write_panel_csv(ds, path)
        back = read_panel_csv(path)
        assert len(back) == 3
        for orig, copy in zip(ds.patients, back.patients):
            assert copy.id == orig.id and copy.sex == orig.sex
            assert copy.age_onset == pytest.approx(orig.age_onset)
            assert np.allclose(copy.times, orig.times, atol=1e-6)
            assert np.array_equal(copy.observed, orig.observed)
            assert np.array_equal(copy.active[orig.observed], orig.active[orig.observed])
            assert np.array_equal(
                copy.damaged[orig.observed], orig.damaged[orig.observed]
            )

    def test_missing_columns_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("patient_id,visit_time_years\np1,0.0\n")
        with pytest.raises(DataValidationError) as exc:
            read_panel_csv(path)
        assert "missing CSV columns" in str(exc.value)

    def test_malformed_value_reports_line_number(self, tmp_path):
        header = ",".join(CSV_COLUMNS)
        good = "p1,0.0,L,2,MCP,0,0,1,35.0,5.0"
        bad = "p1,1.0,L,2,MCP,2,0,1,35.0,5.0"  # active=2
        path = tmp_path / "bad.csv"
        path.write_text(f"{header}\n{good}\n{bad}\n")
        with pytest.raises(DataValidationError) as exc:
            read_panel_csv(path)
        assert "line 3" in str(exc.value)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DataValidationError):
            read_panel_csv(path)


class TestAma:
    def test_worked_example(self):
        # activity 0,1,0,0,1 observed at years 0,1,2,3,5: the interpolated
        # trajectory encloses area 2 over a span of 5 years
        times = np.array([0.0, 1.0, 2.0, 3.0, 5.0])
        x = np.array([0.0, 1.0, 0.0, 0.0, 1.0])
        assert compute_ama(times, x, 5.0) == pytest.approx(0.4, abs=1e-15)

    def test_prefix_evaluation(self):
        times = np.array([0.0, 1.0, 2.0, 3.0, 5.0])
        x = np.array([0.0, 1.0, 0.0, 0.0, 1.0])
        assert compute_ama(times, x, 2.0) == pytest.approx(0.5)

    def test_constant_activity_is_fixed_point(self):
        times = np.array([0.0, 0.7, 2.4, 3.1])
        assert compute_ama(times, np.ones(4), 3.1) == pytest.approx(1.0)
        assert compute_ama(times, np.zeros(4), 3.1) == pytest.approx(0.0)

    def test_undefined_at_first_observation(self):
        with pytest.raises(AmaUndefinedError):
            compute_ama([0.0, 1.0], [1.0, 0.0], 0.0)

    def test_time_must_be_an_observation(self):
        with pytest.raises(ValueError):
            compute_ama([0.0, 1.0, 2.0], [0.0, 1.0, 0.0], 1.5)

    @given(
        gaps=st.lists(st.floats(min_value=0.05, max_value=3.0), min_size=1, max_size=10),
        bits=st.lists(st.integers(min_value=0, max_value=1), min_size=11, max_size=11),
    )
    @settings(max_examples=100, deadline=None)
    def test_stays_in_unit_interval(self, gaps, bits):
        times = np.concatenate([[0.0], np.cumsum(gaps)])
        x = np.array(bits[: len(times)], dtype=float)
        val = compute_ama(times, x, times[-1])
        assert 0.0 <= val <= 1.0


class TestJointCovariates:
    def _record(self):
        m = 3
        active = np.zeros((m, N_JOINTS), dtype=np.int8)
        damaged = np.zeros((m, N_JOINTS), dtype=np.int8)
        observed = np.ones((m, N_JOINTS), dtype=bool)
        lmcp2 = JOINT_INDEX[JointId("L", 2, "MCP")]
        rmcp2 = JOINT_INDEX[JointId("R", 2, "MCP")]
        active[:, lmcp2] = (1, 1, 0)
        damaged[1:, rmcp2] = 1
        damaged[2, JOINT_INDEX[JointId("L", 3, "PIP")]] = 1
        observed[1, JOINT_INDEX[JointId("R", 4, "DIP")]] = False
        return _patient(active=active, damaged=damaged, observed=observed), lmcp2, rmcp2

    def test_attained_damaged_count(self):
        p, _, _ = self._record()
        assert attained_damaged_count(p, 0) == 0
        assert attained_damaged_count(p, 1) == 1
        assert attained_damaged_count(p, 2) == 2

    def test_opposite_joint_damaged(self):
        p, lmcp2, rmcp2 = self._record()
        assert opposite_joint_damaged(p, 1, lmcp2) == 1
        assert opposite_joint_damaged(p, 1, rmcp2) == 0
        assert opposite_joint_damaged(p, 0, lmcp2) == 0

    def test_unobserved_opposite_counts_as_zero(self):
        p, _, _ = self._record()
        ldip4 = JOINT_INDEX[JointId("L", 4, "DIP")]
        assert opposite_joint_damaged(p, 1, ldip4) == 0

    def test_joint_ama_follows_per_joint_history(self):
        p, lmcp2, _ = self._record()
        assert np.isnan(joint_ama(p, 0, lmcp2))
        assert joint_ama(p, 1, lmcp2) == pytest.approx(1.0)
        assert joint_ama(p, 2, lmcp2) == pytest.approx(0.75)

    def test_joint_ama_nan_when_joint_missing_at_visit(self):
        p, _, _ = self._record()
        rdip4 = JOINT_INDEX[JointId("R", 4, "DIP")]
        assert np.isnan(joint_ama(p, 1, rdip4))

    def test_design_matrix_shapes_and_values(self):
        p, lmcp2, rmcp2 = self._record()
        cols = ("opposite_damaged", "damaged_count", "sex", "age_onset", "duration")
        z = visit_covariate_columns(p, 1, cols)
        assert z.shape == (N_JOINTS, 5)
        assert z[lmcp2, 0] == 1.0 and z[rmcp2, 0] == 0.0
        assert np.all(z[:, 1] == 1.0)
        assert np.all(z[:, 2] == 1.0)
        assert np.all(z[:, 3] == 35.0)
        assert np.all(z[:, 4] == pytest.approx(6.0))

    def test_duration_frozen_when_not_updated(self):
        p, _, _ = self._record()
        z = visit_covariate_columns(p, 2, ("duration",), update_duration=False)
        assert np.all(z[:, 0] == pytest.approx(5.0))

    def test_joint_type_columns_match_catalogue(self):
        p, _, _ = self._record()
        cols = ("jt_MCP", "jt_PIP", "jt_DIP", "jt_TMCP")
        z = visit_covariate_columns(p, 0, cols)
        for l, joint in enumerate(ALL_JOINTS):
            expected = {"MCP": 0, "PIP": 1, "DIP": 2, "TMCP": 3}.get(joint.site)
            row = np.zeros(4)
            if expected is not None:
                row[expected] = 1.0
            assert np.array_equal(z[l], row)

    def test_unknown_column_rejected(self):
        p, _, _ = self._record()
        with pytest.raises(ValueError):
            visit_covariate_columns(p, 0, ("grip_strength",))
