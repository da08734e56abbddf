"""Flattened likelihood structures.

The marginal likelihood is a product over patients, usable intervals, and
joints of transition-kernel entries.  This module precomputes everything
that does not depend on the parameter vector: per-transition design rows
evaluated at the interval's left endpoint, observed state pairs, and the
bookkeeping offsets linking pairs -> groups -> intervals -> patients.

Joints whose design rows coincide within an interval are merged into one
group carrying a count per observed (from, to) state pair, so the kernel
is evaluated once per distinct intensity set instead of once per joint.

The first interval of every patient is excluded (its dynamic covariates
need an earlier observation), so usable intervals are (t_j, t_{j+1}) for
j >= 2 in 1-based visit numbering.
"""

from dataclasses import dataclass

import numpy as np

from panelmsm.data import PanelDataset, Patient, visit_covariate_columns
from panelmsm.joints import N_JOINTS
from panelmsm.model import ModelSpec
from panelmsm.states import SIX_STATE, N_MOVER_STATES, mover_state_index


@dataclass
class LikelihoodDesign:
    """Parameter-independent part of the likelihood, flattened.

    Arrays are contiguous in the order pairs-within-group, groups-within-
    interval, intervals-within-patient.  Patients without usable intervals
    appear only in trivial_c_star.
    """

    model: str
    n_states: int
    columns: dict[str, tuple[str, ...]]
    z: dict[str, np.ndarray]           # transition -> (n_groups, n_cols)
    group_dt: np.ndarray               # (n_groups,)
    pair_group: np.ndarray             # (n_pairs,)
    pair_from: np.ndarray
    pair_to: np.ndarray
    pair_count: np.ndarray
    pair_offsets: np.ndarray           # (n_intervals + 1,) into pair arrays
    interval_offsets: np.ndarray       # (n_patients + 1,) into intervals
    patient_ids: list
    c_star: np.ndarray                 # (n_patients,)
    stayer_ok: np.ndarray              # (n_patients,) bool
    trivial_c_star: np.ndarray         # c* of patients with no usable interval

    @property
    def n_groups(self) -> int:
        return len(self.group_dt)

    @property
    def n_intervals(self) -> int:
        return len(self.pair_offsets) - 1

    @property
    def n_patients(self) -> int:
        return len(self.patient_ids)


def _interval_groups(patient: Patient, j: int, spec: ModelSpec, n_states: int):
    """Group the joints of interval (t_j, t_{j+1}) by identical design rows."""
    transitions = spec.transitions
    z_visit = {
        t: visit_covariate_columns(patient, j, spec.columns(t), spec.update_duration)
        for t in transitions
    }
    groups: dict[bytes, int] = {}
    rows: list[tuple[np.ndarray, ...]] = []
    counts: list[np.ndarray] = []
    for l in range(N_JOINTS):
        if not (patient.observed[j, l] and patient.observed[j + 1, l]):
            continue
        joint_rows = tuple(z_visit[t][l] for t in transitions)
        if any(not np.all(np.isfinite(r)) for r in joint_rows):
            continue
        key = b"".join(r.tobytes() for r in joint_rows)
        g = groups.get(key)
        if g is None:
            g = len(rows)
            groups[key] = g
            rows.append(joint_rows)
            counts.append(np.zeros((n_states, n_states), dtype=np.int64))
        s0 = mover_state_index(patient.active[j, l], patient.damaged[j, l], spec.model)
        s1 = mover_state_index(patient.active[j + 1, l], patient.damaged[j + 1, l], spec.model)
        counts[g][s0, s1] += 1
    return rows, counts


def build_design(dataset: PanelDataset, spec: ModelSpec) -> LikelihoodDesign:
    transitions = spec.transitions
    n_states = N_MOVER_STATES[spec.model]
    damage_threshold = 2 if spec.model == SIX_STATE else 2  # 0-based first damaged state

    z_rows: dict[str, list[np.ndarray]] = {t: [] for t in transitions}
    group_dt: list[float] = []
    pair_group: list[int] = []
    pair_from: list[int] = []
    pair_to: list[int] = []
    pair_count: list[int] = []
    pair_offsets: list[int] = [0]
    interval_offsets: list[int] = [0]
    patient_ids: list = []
    c_star: list[int] = []
    stayer_ok: list[bool] = []
    trivial_c_star: list[int] = []

    for patient in dataset.patients:
        n_intervals_before = len(pair_offsets) - 1
        patient_stayer_ok = True
        for j in range(1, patient.n_visits - 1):
            rows, counts = _interval_groups(patient, j, spec, n_states)
            if not rows:
                continue
            dt = float(patient.times[j + 1] - patient.times[j])
            for joint_rows, cnt in zip(rows, counts):
                g = len(group_dt)
                group_dt.append(dt)
                for t, r in zip(transitions, joint_rows):
                    z_rows[t].append(r)
                froms, tos = np.nonzero(cnt)
                for s0, s1 in zip(froms, tos):
                    pair_group.append(g)
                    pair_from.append(int(s0))
                    pair_to.append(int(s1))
                    pair_count.append(int(cnt[s0, s1]))
                    if s0 >= damage_threshold or s1 >= damage_threshold:
                        patient_stayer_ok = False
            pair_offsets.append(len(pair_group))
        if len(pair_offsets) - 1 == n_intervals_before:
            trivial_c_star.append(patient.c_star())
            continue
        interval_offsets.append(len(pair_offsets) - 1)
        patient_ids.append(patient.id)
        c_star.append(patient.c_star())
        stayer_ok.append(patient_stayer_ok)

    z = {
        t: (np.array(z_rows[t]) if z_rows[t] else np.zeros((0, len(spec.columns(t)))))
        for t in transitions
    }
    return LikelihoodDesign(
        model=spec.model,
        n_states=n_states,
        columns={t: spec.columns(t) for t in transitions},
        z=z,
        group_dt=np.array(group_dt),
        pair_group=np.array(pair_group, dtype=np.int64),
        pair_from=np.array(pair_from, dtype=np.int64),
        pair_to=np.array(pair_to, dtype=np.int64),
        pair_count=np.array(pair_count, dtype=np.float64),
        pair_offsets=np.array(pair_offsets, dtype=np.int64),
        interval_offsets=np.array(interval_offsets, dtype=np.int64),
        patient_ids=patient_ids,
        c_star=np.array(c_star, dtype=np.int64),
        stayer_ok=np.array(stayer_ok, dtype=bool),
        trivial_c_star=np.array(trivial_c_star, dtype=np.int64),
    )
