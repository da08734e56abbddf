"""Closed-form transition kernels against the matrix-exponential oracle."""

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panelmsm.kernels import (
    KernelConsistencyError,
    expm_oracle,
    four_state_tpm,
    q_four_state,
    q_three_state,
    q_two_state,
    three_state_tpm,
    two_state_tpm,
)

rates = st.floats(min_value=0.01, max_value=20.0)
times = st.floats(min_value=1e-4, max_value=10.0)


def _max_abs(a, b):
    return float(np.max(np.abs(a - b)))


class TestTwoState:
    def test_symmetric_unit_rates_closed_form(self):
        # off-diagonal is (1 - e^(-2 lambda t)) / 2 for lam_ab = lam_ba
        p = two_state_tpm(1.0, 1.0, 1.0)
        expected = (1.0 - np.exp(-2.0)) / 2.0
        assert p[0, 1] == pytest.approx(expected, abs=1e-14)
        assert p[1, 0] == pytest.approx(expected, abs=1e-14)

    def test_zero_rates_give_identity(self):
        assert np.array_equal(two_state_tpm(0.0, 0.0, 5.0), np.eye(2))

    def test_limit_is_stationary_distribution(self):
        p = two_state_tpm(2.0, 1.0, 1e6)
        assert p[0] == pytest.approx([1 / 3, 2 / 3], abs=1e-12)
        assert p[1] == pytest.approx([1 / 3, 2 / 3], abs=1e-12)

    @given(lab=rates, lba=rates, t=times)
    @settings(max_examples=200, deadline=None)
    def test_matches_oracle(self, lab, lba, t):
        p = two_state_tpm(lab, lba, t)
        assert _max_abs(p, expm_oracle(q_two_state(lab, lba), t)) < 1e-10


class TestThreeState:
    @given(l12=rates, l13=rates, l21=rates, l23=rates, t=times)
    @settings(max_examples=200, deadline=None)
    def test_matches_oracle(self, l12, l13, l21, l23, t):
        p = three_state_tpm(l12, l13, l21, l23, t)
        assert _max_abs(p, expm_oracle(q_three_state(l12, l13, l21, l23), t)) < 1e-10

    def test_absorbing_row_is_exact(self):
        p = three_state_tpm(0.5, 0.2, 0.8, 0.3, 2.0)
        assert np.array_equal(p[2], [0.0, 0.0, 1.0])

    def test_rows_sum_to_one(self):
        p = three_state_tpm(0.5, 0.2, 0.8, 0.3, 2.0)
        assert np.max(np.abs(p.sum(axis=1) - 1.0)) < 1e-12


class TestFourState:
    @given(
        l12=rates, l13=rates, l21=rates, l24=rates, l34=rates, l43=rates, t=times
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_oracle(self, l12, l13, l21, l24, l34, l43, t):
        p = four_state_tpm(l12, l13, l21, l24, l34, l43, t)
        q = q_four_state(l12, l13, l21, l24, l34, l43)
        assert _max_abs(p, expm_oracle(q, t)) < 1e-10

    def test_structural_zeros_for_damage_reversal(self):
        p = four_state_tpm(0.8, 0.1, 1.2, 0.4, 0.9, 0.7, 3.0)
        assert np.array_equal(p[2:, :2], np.zeros((2, 2)))

    def test_row_swap_symmetry(self):
        # row 2 under (l12, l13, l21, l24, l34, l43) equals row 1 under the
        # argument swap (l21, l24, l12, l13, l43, l34) with activity states
        # and damage rates exchanged
        args = (0.7, 0.15, 1.1, 0.45, 0.85, 0.6)
        swapped = (args[2], args[3], args[0], args[1], args[5], args[4])
        for t in (0.1, 0.8, 2.5):
            p = four_state_tpm(*args, t)
            ps = four_state_tpm(*swapped, t)
            assert abs(p[1, 0] - ps[0, 1]) < 1e-12
            assert abs(p[1, 1] - ps[0, 0]) < 1e-12
            assert abs(p[1, 3] - ps[0, 2]) < 1e-12
            assert abs(p[1, 2] - ps[0, 3]) < 1e-12

    def test_zero_rates_give_identity(self):
        assert np.array_equal(
            four_state_tpm(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0), np.eye(4)
        )

    def test_damaged_block_is_two_state_chain(self):
        l34, l43 = 0.9, 0.4
        p = four_state_tpm(0.8, 0.1, 1.2, 0.5, l34, l43, 1.3)
        sub = two_state_tpm(l34, l43, 1.3)
        assert _max_abs(p[2:, 2:], sub) < 1e-12

    def test_stiff_rates_fall_back_without_error(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            p = four_state_tpm(0.6, 0.3, 0.1, 6.6e5, 0.8, 0.9, 1.5)
        assert np.max(np.abs(p.sum(axis=1) - 1.0)) < 1e-12
        assert np.all((p >= 0) & (p <= 1))

    def test_degenerate_rates_warn_and_match_oracle(self):
        # the damage-block eigenvalue l34+l43 = 3 coincides with an
        # activity-block eigenvalue, so the residue denominator vanishes
        args = (1.0, 1.0, 1.0, 1.0, 2.0, 1.0)
        with pytest.warns(RuntimeWarning):
            p = four_state_tpm(*args, 1.0)
        assert _max_abs(p, expm_oracle(q_four_state(*args), 1.0)) < 1e-10


class TestSemigroup:
    @given(
        l12=rates, l13=rates, l21=rates, l24=rates, l34=rates, l43=rates,
        t=st.floats(min_value=0.05, max_value=5.0),
        frac=st.floats(min_value=0.1, max_value=0.9),
    )
    @settings(max_examples=150, deadline=None)
    def test_four_state_chapman_kolmogorov(self, l12, l13, l21, l24, l34, l43, t, frac):
        args = (l12, l13, l21, l24, l34, l43)
        s = frac * t
        lhs = four_state_tpm(*args, t)
        rhs = four_state_tpm(*args, s) @ four_state_tpm(*args, t - s)
        assert _max_abs(lhs, rhs) < 1e-10

    @given(l12=rates, l13=rates, l21=rates, l23=rates,
           t=st.floats(min_value=0.05, max_value=5.0),
           frac=st.floats(min_value=0.1, max_value=0.9))
    @settings(max_examples=150, deadline=None)
    def test_three_state_chapman_kolmogorov(self, l12, l13, l21, l23, t, frac):
        args = (l12, l13, l21, l23)
        s = frac * t
        lhs = three_state_tpm(*args, t)
        rhs = three_state_tpm(*args, s) @ three_state_tpm(*args, t - s)
        assert _max_abs(lhs, rhs) < 1e-10


class TestBroadcasting:
    def test_batch_matches_scalar_loop(self):
        rng = np.random.default_rng(4)
        r = rng.uniform(0.05, 3.0, (50, 6))
        t = rng.uniform(0.1, 4.0, 50)
        batch = four_state_tpm(r[:, 0], r[:, 1], r[:, 2], r[:, 3], r[:, 4], r[:, 5], t)
        assert batch.shape == (50, 4, 4)
        for k in range(50):
            single = four_state_tpm(*r[k], t[k])
            assert np.array_equal(batch[k], single)

    def test_time_broadcast_against_rate_grid(self):
        lam = np.array([0.5, 1.0, 2.0])
        p = two_state_tpm(lam, 1.0, 0.7)
        assert p.shape == (3, 2, 2)


class TestDomainAndOracle:
    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError):
            two_state_tpm(-0.1, 1.0, 1.0)
        with pytest.raises(ValueError):
            four_state_tpm(0.1, 0.1, 0.1, -0.1, 0.1, 0.1, 1.0)

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            three_state_tpm(0.1, 0.1, 0.1, 0.1, -1.0)

    def test_oracle_rejects_nonconservative_matrix(self):
        q = np.array([[-1.0, 0.5], [1.0, -1.0]])
        with pytest.raises(ValueError):
            expm_oracle(q, 1.0)

    def test_oracle_rejects_negative_offdiagonal(self):
        q = np.array([[1.0, -1.0], [2.0, -2.0]])
        with pytest.raises(ValueError):
            expm_oracle(q, 1.0)

    def test_oracle_identity_at_t_zero(self):
        q = q_four_state(0.3, 0.2, 0.6, 0.1, 0.5, 0.4)
        assert np.array_equal(expm_oracle(q, 0.0), np.eye(4))
