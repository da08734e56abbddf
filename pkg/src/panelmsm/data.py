"""Panel dataset model, CSV ingestion, and dynamic covariate computation.

A patient record is a strictly increasing sequence of clinic-visit times
with per-joint (active, damaged) observations at each visit.  Damage is
absorbing, so the damaged flag must be monotone nondecreasing per joint;
ingestion rejects violations rather than silently correcting them.

Dynamic covariates computed from the observed panel:

* AMA (adjusted mean activity): time-average of the linearly interpolated
  activity indicator from the first visit up to the current one, in [0, 1].
  Undefined at the first visit.
* attained damaged count: number of joints damaged at the current visit.
* opposite joint damaged: damaged flag of the contralateral joint.

The covariate vector attached to the interval (t_j, t_{j+1}] uses values
computed at t_j and is held constant over the interval.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from panelmsm.joints import (
    ALL_JOINTS,
    N_JOINTS,
    JOINT_INDEX,
    JOINT_TYPE_DUMMIES,
    OPPOSITE_INDEX,
    JointId,
)

CSV_COLUMNS = (
    "patient_id",
    "visit_time_years",
    "hand",
    "digit",
    "site",
    "active",
    "damaged",
    "sex",
    "age_onset_years",
    "arthritis_duration_years",
)


class DataValidationError(ValueError):
    """The panel data violate a structural requirement."""

    def __init__(self, message: str, problems: list[str] | None = None):
        super().__init__(message)
        self.problems = problems or []


class AmaUndefinedError(ValueError):
    """AMA requires at least one earlier observation."""


@dataclass
class Patient:
    """One patient's panel record.

    active/damaged are (n_visits, 28) int8 arrays aligned with ALL_JOINTS;
    observed marks which (visit, joint) cells carry data.
    """

    id: str
    sex: int
    age_onset: float
    duration_entry: float
    times: np.ndarray
    active: np.ndarray
    damaged: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.active = np.asarray(self.active, dtype=np.int8)
        self.damaged = np.asarray(self.damaged, dtype=np.int8)
        self.observed = np.asarray(self.observed, dtype=bool)

    @property
    def n_visits(self) -> int:
        return len(self.times)

    def c_star(self) -> int:
        """1 iff any damaged joint is observed at the last clinic visit."""
        last = self.n_visits - 1
        return int(np.any(self.damaged[last][self.observed[last]] == 1))


@dataclass
class PanelDataset:
    patients: list[Patient] = field(default_factory=list)
    short_record_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        problems = []
        short = []
        seen = set()
        for p in self.patients:
            if p.id in seen:
                problems.append(f"duplicate patient id {p.id!r}")
            seen.add(p.id)
            if p.n_visits < 2:
                problems.append(f"patient {p.id}: fewer than 2 visits")
                continue
            if np.any(np.diff(p.times) <= 0):
                problems.append(f"patient {p.id}: visit times not strictly increasing")
            if p.n_visits < 3:
                short.append(p.id)
            for l in range(N_JOINTS):
                obs = np.nonzero(p.observed[:, l])[0]
                dmg = p.damaged[obs, l]
                if np.any(np.diff(dmg) < 0):
                    bad = obs[np.nonzero(np.diff(dmg) < 0)[0]]
                    problems.append(
                        f"patient {p.id}, joint {ALL_JOINTS[l].label()}: damage "
                        f"reversal after visit index {int(bad[0])}"
                    )
        if problems:
            raise DataValidationError(
                f"{len(problems)} data problem(s); first: {problems[0]}", problems
            )
        self.short_record_ids = short

    def __len__(self) -> int:
        return len(self.patients)

    def by_id(self) -> dict[str, Patient]:
        return {p.id: p for p in self.patients}


# --------------------------------------------------------------------------
# CSV interface
# --------------------------------------------------------------------------


def _parse_row(row: dict, lineno: int):
    try:
        pid = row["patient_id"].strip()
        t = float(row["visit_time_years"])
        joint = JointId(row["hand"].strip(), int(row["digit"]), row["site"].strip())
        active = int(row["active"])
        damaged = int(row["damaged"])
        sex = int(row["sex"])
        age = float(row["age_onset_years"])
        dur = float(row["arthritis_duration_years"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataValidationError(f"malformed CSV row at line {lineno}: {exc}") from exc
    if active not in (0, 1) or damaged not in (0, 1) or sex not in (0, 1):
        raise DataValidationError(
            f"malformed CSV row at line {lineno}: active/damaged/sex must be 0 or 1"
        )
    return pid, t, joint, active, damaged, sex, age, dur


def read_panel_csv(path) -> PanelDataset:
    """Read a long-format panel CSV (one row per patient, visit, joint)."""
    per_patient: dict[str, dict] = {}
    order: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataValidationError("empty CSV file (header row required)")
        missing = set(CSV_COLUMNS) - set(reader.fieldnames)
        if missing:
            raise DataValidationError(f"missing CSV columns: {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            pid, t, joint, active, damaged, sex, age, dur = _parse_row(row, lineno)
            rec = per_patient.get(pid)
            if rec is None:
                rec = {"sex": sex, "age": age, "dur": dur, "visits": {}}
                per_patient[pid] = rec
                order.append(pid)
            visit = rec["visits"].setdefault(t, {})
            visit[JOINT_INDEX[joint]] = (active, damaged)

    patients = []
    for pid in order:
        rec = per_patient[pid]
        times = np.array(sorted(rec["visits"]))
        m = len(times)
        active = np.zeros((m, N_JOINTS), dtype=np.int8)
        damaged = np.zeros((m, N_JOINTS), dtype=np.int8)
        observed = np.zeros((m, N_JOINTS), dtype=bool)
        for j, t in enumerate(times):
            for l, (a, d) in rec["visits"][t].items():
                active[j, l] = a
                damaged[j, l] = d
                observed[j, l] = True
        patients.append(
            Patient(pid, rec["sex"], rec["age"], rec["dur"], times, active, damaged, observed)
        )
    if not patients:
        raise DataValidationError("CSV contains no data rows")
    return PanelDataset(patients)


def write_panel_csv(dataset: PanelDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for p in dataset.patients:
            for j, t in enumerate(p.times):
                for l, joint in enumerate(ALL_JOINTS):
                    if not p.observed[j, l]:
                        continue
                    writer.writerow(
                        [
                            p.id,
                            f"{t:.6f}",
                            joint.hand,
                            joint.digit,
                            joint.site,
                            int(p.active[j, l]),
                            int(p.damaged[j, l]),
                            p.sex,
                            f"{p.age_onset:.6f}",
                            f"{p.duration_entry:.6f}",
                        ]
                    )


# --------------------------------------------------------------------------
# Dynamic covariates
# --------------------------------------------------------------------------


def compute_ama(times, activity, t) -> float:
    """Time-average of the linearly interpolated activity indicator.

    Integrates the interpolant from times[0] to t (one of the observation
    times) and divides by the elapsed span.  Raises AmaUndefinedError when
    t does not lie strictly after the first observation.
    """
    times = np.asarray(times, dtype=float)
    activity = np.asarray(activity, dtype=float)
    if times.shape != activity.shape or times.ndim != 1 or len(times) < 2:
        raise ValueError("times and activity must be equal-length 1-D, length >= 2")
    idx = np.nonzero(np.isclose(times, t, rtol=0.0, atol=1e-12))[0]
    if len(idx) == 0:
        raise ValueError(f"t={t} is not one of the observation times")
    i = int(idx[0])
    if i == 0:
        raise AmaUndefinedError("AMA is undefined at the first observation")
    area = np.trapezoid(activity[: i + 1], times[: i + 1])
    return float(area / (times[i] - times[0]))


def attained_damaged_count(patient: Patient, visit: int) -> int:
    """Number of joints damaged at the given visit."""
    obs = patient.observed[visit]
    return int(np.sum(patient.damaged[visit][obs] == 1))


def opposite_joint_damaged(patient: Patient, visit: int, joint_index: int) -> int:
    """Damaged flag of the contralateral joint at the same visit."""
    opp = OPPOSITE_INDEX[joint_index]
    if not patient.observed[visit, opp]:
        return 0
    return int(patient.damaged[visit, opp])


def joint_ama(patient: Patient, visit: int, joint_index: int) -> float:
    """AMA for one joint at the time of the given visit; NaN when undefined."""
    obs = np.nonzero(patient.observed[: visit + 1, joint_index])[0]
    if len(obs) < 2 or obs[-1] != visit:
        return np.nan
    times = patient.times[obs]
    activity = patient.active[obs, joint_index]
    try:
        return compute_ama(times, activity, patient.times[visit])
    except AmaUndefinedError:
        return np.nan


def visit_covariate_columns(
    patient: Patient, visit: int, columns: tuple[str, ...], update_duration: bool = True
) -> np.ndarray:
    """(28, n_columns) design matrix of covariate values at one visit."""
    out = np.empty((N_JOINTS, len(columns)))
    cache: dict[str, np.ndarray] = {}

    def column(name: str) -> np.ndarray:
        if name in cache:
            return cache[name]
        if name == "opposite_damaged":
            val = np.array(
                [opposite_joint_damaged(patient, visit, l) for l in range(N_JOINTS)],
                dtype=float,
            )
        elif name == "damaged_count":
            val = np.full(N_JOINTS, float(attained_damaged_count(patient, visit)))
        elif name == "ama":
            val = np.array([joint_ama(patient, visit, l) for l in range(N_JOINTS)])
        elif name.startswith("jt_"):
            idx = ["jt_MCP", "jt_PIP", "jt_DIP", "jt_TMCP"].index(name)
            val = JOINT_TYPE_DUMMIES[:, idx].astype(float)
        elif name == "sex":
            val = np.full(N_JOINTS, float(patient.sex))
        elif name == "age_onset":
            val = np.full(N_JOINTS, float(patient.age_onset))
        elif name == "duration":
            dur = patient.duration_entry
            if update_duration:
                dur += patient.times[visit] - patient.times[0]
            val = np.full(N_JOINTS, float(dur))
        else:
            raise ValueError(f"unknown design column {name!r}")
        cache[name] = val
        return val

    for c, name in enumerate(columns):
        out[:, c] = column(name)
    return out
