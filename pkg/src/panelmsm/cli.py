"""Command-line front end.

Subcommands: fit (maximum likelihood on a panel CSV), simulate (synthetic
cohort + truth sidecar), validate (self-contained numerical checks), and
summarize (descriptive cohort report).  All randomness flows from one
seed, outputs carry no timestamps, and the parameter table round-trips at
six decimal places, so identical config + data + seed give byte-identical
artifacts.

Config files are flat key=value INI sections ([model], [parameters],
[simulate], [fit]); command-line flags override config values.
"""

import argparse
import configparser
import csv
import sys
from pathlib import Path

import numpy as np

from panelmsm import __version__
from panelmsm.data import (
    DataValidationError,
    PanelDataset,
    read_panel_csv,
    write_panel_csv,
    compute_ama,
)
from panelmsm.design import build_design
from panelmsm.estimation import (
    FitResult,
    fit,
    parameter_names,
    unpack_params,
)
from panelmsm.kernels import (
    expm_oracle,
    four_state_tpm,
    three_state_tpm,
    two_state_tpm,
    q_four_state,
    q_three_state,
    q_two_state,
)
from panelmsm.likelihood import bivariate_integrate, gauss_hermite_rule, total_loglik
from panelmsm.model import (
    ModelSpec,
    OBSERVATION_LEVEL,
    PATIENT_LEVEL,
    SixStateParams,
)
from panelmsm.simulate import (
    SimConfig,
    empirical_transition_table,
    simulate_cohort,
    write_truth_csv,
)
from panelmsm.states import SIX_STATE, FIVE_STATE

_MODEL_ALIASES = {"six": SIX_STATE, "five": FIVE_STATE,
                  SIX_STATE: SIX_STATE, FIVE_STATE: FIVE_STATE}
_RE_ALIASES = {"obs": OBSERVATION_LEVEL, "patient": PATIENT_LEVEL,
               OBSERVATION_LEVEL: OBSERVATION_LEVEL, PATIENT_LEVEL: PATIENT_LEVEL}

_SIX_HEADS = {"gain": "Ā→A", "loss": "A→Ā",
              "damage": "D̄→D"}
_FIVE_HEADS = {"sojourn_inactive": "Ā sojourn", "sojourn_active": "A sojourn",
               "jump_inactive": "Ā→D jump", "jump_active": "A→D jump"}


class UsageError(ValueError):
    """Bad flags or config; maps to exit code 2."""


# --------------------------------------------------------------------------
# Config handling
# --------------------------------------------------------------------------


def _read_ini(path) -> configparser.ConfigParser:
    # '=' only, so parameter names like beta_gain:sex keep their colon;
    # optionxform=str keeps design-column case (jt_MCP).
    parser = configparser.ConfigParser(delimiters=("=",))
    parser.optionxform = str
    read = parser.read(path)
    if not read:
        raise UsageError(f"config file not found: {path}")
    return parser


def _model_spec_from(config: configparser.ConfigParser | None, args) -> ModelSpec:
    section = config["model"] if config is not None and config.has_section("model") else {}
    model = _MODEL_ALIASES.get(args.model or section.get("model", SIX_STATE))
    re_structure = _RE_ALIASES.get(args.re or section.get("re_structure", OBSERVATION_LEVEL))
    if model is None:
        raise UsageError("model must be six|five (or six_state|five_state)")
    if re_structure is None:
        raise UsageError("re must be obs|patient")
    quad = args.quad if args.quad is not None else section.get("quadrature_n")
    covariates = {}
    prefix = "covariates_"
    for key in section:
        if key.startswith(prefix):
            raw = section[key].strip()
            covariates[key[len(prefix):]] = tuple(
                s.strip() for s in raw.split(",") if s.strip()
            ) if raw else ()
    update_duration = str(section.get("update_duration", "true")).lower() != "false"
    return ModelSpec(
        model=model,
        re_structure=re_structure,
        quadrature_n=int(quad) if quad is not None else None,
        covariates=covariates,
        update_duration=update_duration,
    )


def _params_from_config(config: configparser.ConfigParser, spec: ModelSpec):
    if not config.has_section("parameters"):
        raise UsageError("config needs a [parameters] section with true values")
    names = parameter_names(spec)
    section = config["parameters"]
    theta = np.zeros(len(names))
    known = {n: k for k, n in enumerate(names)}
    for key in section:
        if key not in known:
            raise UsageError(f"unknown parameter {key!r}; expected one of {names}")
        theta[known[key]] = float(section[key])
    return unpack_params(theta, spec)


# --------------------------------------------------------------------------
# fit
# --------------------------------------------------------------------------


def _write_parameter_table(result: FitResult, path) -> None:
    """Round-trippable table: 6-decimal natural and transformed scales."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "transition", "estimate", "se", "lower", "upper",
                         "theta", "theta_se", "flagged"])
        for row, th, th_se in zip(result.table, result.theta, result.se):
            writer.writerow([
                row.name, row.transition,
                f"{row.estimate:.6f}", f"{row.se:.6f}",
                f"{row.lower:.6f}", f"{row.upper:.6f}",
                f"{th:.6f}", f"{th_se:.6f}", int(row.flagged),
            ])


def read_parameter_table(path) -> list[dict]:
    """Parse parameters.csv back into numeric records."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in ("estimate", "se", "lower", "upper", "theta", "theta_se"):
            row[key] = float(row[key])
        row["flagged"] = bool(int(row["flagged"]))
    return rows


def _metadata_lines(result: FitResult, n_patients: int, seed) -> list[str]:
    return [
        f"model = {result.model}",
        f"re_structure = {result.re_structure}",
        f"quadrature_n = {result.quadrature_n}",
        f"log_likelihood = {result.loglik:.6f}",
        f"iterations = {result.iterations}",
        f"n_evals = {result.n_evals}",
        f"converged = {result.converged}",
        f"message = {result.message}",
        f"floor_hits = {result.floor_hits}",
        f"n_patients = {n_patients}",
        f"seed = {seed if seed is not None else ''}",
        f"version = {__version__}",
    ]


def _format_interval(row) -> str:
    if row.flagged or not np.isfinite(row.se):
        return f"{row.estimate:10.4f}  (curvature flagged)"
    return f"{row.estimate:10.4f}  ({row.lower:.4f}, {row.upper:.4f})"


def _report_lines(result: FitResult) -> list[str]:
    heads = _SIX_HEADS if result.model == SIX_STATE else _FIVE_HEADS
    lines = ["Parameter estimates and 95% Wald intervals", "=" * 44, ""]
    for transition, head in heads.items():
        rows = [r for r in result.table if r.transition == transition]
        if not rows:
            continue
        lines.append(head)
        lines.append("-" * len(head))
        for r in rows:
            lines.append(f"  {r.name:24s} {_format_interval(r)}")
        lines.append("")
    shared = [r for r in result.table if r.transition == "shared"]
    lines.append("Shared (linkage, random effects, mixture)")
    lines.append("-" * 41)
    for r in shared:
        lines.append(f"  {r.name:24s} {_format_interval(r)}")
    lines.append("")
    lines.append(f"log-likelihood  {result.loglik:.2f}")
    return lines


def _truth_comparison_lines(truth_path, result: FitResult) -> list[str]:
    """Checks the mixture fraction and variance components against the
    simulator's hidden truth draws."""
    stayers = []
    us, vs = [], []
    with open(truth_path, newline="", encoding="utf-8") as fh:
        seen = set()
        for row in csv.DictReader(fh):
            if row["patient_id"] not in seen:
                seen.add(row["patient_id"])
                stayers.append(int(row["stayer"]))
            us.append(float(row["u"]))
            vs.append(float(row["v"]))
    by_name = {r.name: r for r in result.table if r.transition == "shared"}
    lines = ["", "Truth-vs-estimate comparison (simulator sidecar)",
             "-" * 48]
    pairs = [
        ("pi", float(np.mean(stayers))),
        ("sigma2_u", float(np.var(us))),
        ("sigma2_v", float(np.var(vs))),
        ("rho", float(np.corrcoef(us, vs)[0, 1]) if len(us) > 1 else np.nan),
    ]
    for name, empirical in pairs:
        row = by_name.get(name)
        if row is None:
            continue
        lines.append(f"  {name:10s} estimate {row.estimate:8.4f}   "
                     f"empirical-truth {empirical:8.4f}")
    return lines


def run_fit(args) -> int:
    config = _read_ini(args.config) if args.config else None
    spec = _model_spec_from(config, args)
    if args.data is None:
        raise UsageError("fit requires --data")
    dataset = read_panel_csv(args.data)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)

    kwargs = {}
    if config is not None and config.has_section("fit"):
        sec = config["fit"]
        for key, cast in (("gtol", float), ("ftol", float), ("maxiter", int)):
            if key in sec:
                kwargs[key] = cast(sec[key])
    result = fit(dataset, spec, **kwargs)

    _write_parameter_table(result, out / "parameters.csv")
    meta = _metadata_lines(result, len(dataset), args.seed)
    (out / "metadata.txt").write_text("\n".join(meta) + "\n", encoding="utf-8")
    report = _report_lines(result)
    if args.truth:
        report += _truth_comparison_lines(args.truth, result)
    (out / "report.txt").write_text("\n".join(report) + "\n", encoding="utf-8")
    print("\n".join(report))
    return 0


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------


def run_simulate(args) -> int:
    if not args.config:
        raise UsageError("simulate requires --config with [parameters] and [simulate]")
    config = _read_ini(args.config)
    spec = _model_spec_from(config, args)
    params = _params_from_config(config, spec)
    sec = config["simulate"] if config.has_section("simulate") else {}
    seed = args.seed if args.seed is not None else int(sec.get("seed", 0))
    float_keys = ("median_gap_years", "gap_log_sd", "min_gap_years", "max_gap_years",
                  "sex_proportion", "age_onset_mean", "age_onset_sd",
                  "duration_entry_mean", "p_initial_active")
    int_keys = ("min_visits", "max_visits")
    kwargs = {k: float(sec[k]) for k in float_keys if k in sec}
    kwargs.update({k: int(sec[k]) for k in int_keys if k in sec})
    cfg = SimConfig(
        n_patients=int(sec.get("n_patients", 100)),
        params=params,
        spec=spec,
        seed=seed,
        **kwargs,
    )
    dataset, truth = simulate_cohort(cfg)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_panel_csv(dataset, out / "data.csv")
    write_truth_csv(truth, out / "truth.csv")
    lines = [
        f"model = {spec.model}",
        f"re_structure = {spec.re_structure}",
        f"n_patients = {cfg.n_patients}",
        f"seed = {seed}",
        f"stayers = {sum(truth.stayer.values())}",
        f"version = {__version__}",
    ]
    (out / "metadata.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


# --------------------------------------------------------------------------
# validate
# --------------------------------------------------------------------------


def _check_kernels(grid: int, rng, inject_error: bool) -> list[str]:
    failures = []
    worst = 0.0
    for _ in range(grid):
        t = float(rng.uniform(1e-3, 8.0))
        r4 = rng.uniform(0.02, 5.0, 6)
        p = four_state_tpm(*r4, t)
        if inject_error:
            p = p.copy()
            p[0, 1] = -p[0, 1]
        ref = expm_oracle(q_four_state(*r4), t)
        diff = float(np.max(np.abs(p - ref)))
        worst = max(worst, diff)
        if diff > 1e-10:
            failures.append(
                f"FAIL four-state kernel vs oracle: max|diff|={diff:.3e} at rates="
                f"{np.round(r4, 6).tolist()} t={t:.6f}"
            )
            break
        r3 = rng.uniform(0.02, 5.0, 4)
        d3 = float(np.max(np.abs(three_state_tpm(*r3, t) - expm_oracle(q_three_state(*r3), t))))
        r2 = rng.uniform(0.02, 5.0, 2)
        d2 = float(np.max(np.abs(two_state_tpm(*r2, t) - expm_oracle(q_two_state(*r2), t))))
        if max(d3, d2) > 1e-10:
            failures.append(f"FAIL three/two-state kernel vs oracle: {max(d3, d2):.3e}")
            break
        # Chapman-Kolmogorov on a split of the same interval
        s = t * float(rng.uniform(0.2, 0.8))
        ck = float(np.max(np.abs(
            four_state_tpm(*r4, t) - four_state_tpm(*r4, s) @ four_state_tpm(*r4, t - s)
        )))
        if ck > 1e-10:
            failures.append(f"FAIL Chapman-Kolmogorov violation {ck:.3e} at t={t:.6f}")
            break
    return failures or [f"kernels: OK (max kernel-vs-oracle diff {worst:.3e})"]


def _check_quadrature() -> list[str]:
    rule = gauss_hermite_rule(15)
    out = []
    for s2 in (0.5, 1.0, 2.07):
        approx = float(np.sum(rule.weights * np.exp(np.sqrt(s2) * rule.nodes)))
        err = abs(approx - np.exp(s2 / 2))
        if err > 1e-4:
            out.append(f"FAIL quadrature lognormal mean sigma2={s2}: err={err:.2e}")
    biv = bivariate_integrate(lambda u, v: np.exp(u + v), 1.0, 1.0, 0.5, rule)
    if abs(biv - np.exp(1.5)) > 1e-4:
        out.append(f"FAIL bivariate lognormal: {biv:.6f} vs {np.exp(1.5):.6f}")
    return out or ["quadrature: OK"]


def _check_likelihood_identities(rng) -> list[str]:
    empty = {t: () for t in ("gain", "loss", "damage")}
    spec = ModelSpec(model=SIX_STATE, covariates=empty, quadrature_n=5)
    params = SixStateParams(
        log_lam0_gain=np.log(0.8), log_lam0_loss=np.log(1.1),
        log_lam0_damage=np.log(0.1),
        beta_gain=np.zeros(0), beta_loss=np.zeros(0), beta_damage=np.zeros(0),
        damaged_gain=0.2, damaged_loss=-0.1, active_damage=0.5,
        stayer_gain=0.1, stayer_loss=0.0, alpha=-0.3,
        log_sigma2_u=0.0, log_sigma2_v=0.0, atanh_rho=np.arctanh(0.3),
        logit_pi=np.log(0.15 / 0.85),
    )
    cfg = SimConfig(n_patients=8, params=params, spec=spec,
                    seed=int(rng.integers(1 << 31)), max_visits=6)
    dataset, _ = simulate_cohort(cfg)
    base = total_loglik(dataset, params, spec)
    doubled = PanelDataset([
        *dataset.patients,
        *[type(p)(p.id + "_copy", p.sex, p.age_onset, p.duration_entry,
                  p.times, p.active, p.damaged, p.observed)
          for p in dataset.patients],
    ])
    out = []
    if abs(total_loglik(doubled, params, spec) - 2 * base) > 1e-9 * max(1, abs(base)):
        out.append("FAIL additivity under dataset duplication")
    permuted = PanelDataset(list(reversed(dataset.patients)))
    if total_loglik(permuted, params, spec) != base:
        out.append("FAIL permutation invariance (not bit-identical)")
    return out or ["likelihood identities: OK"]


def run_validate(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    lines = []
    lines += _check_kernels(args.grid, rng, args.inject_error)
    lines += _check_quadrature()
    lines += _check_likelihood_identities(rng)
    failed = any(l.startswith("FAIL") for l in lines)
    print("\n".join(lines))
    print("validation:", "FAILED" if failed else "PASSED")
    return 1 if failed else 0


# --------------------------------------------------------------------------
# summarize
# --------------------------------------------------------------------------

_STATE_LABELS = ("ĀD̄", "AD̄", "ĀD", "AD")


def run_summarize(args) -> int:
    if args.data is None:
        raise UsageError("summarize requires --data")
    dataset = read_panel_csv(args.data)
    n = len(dataset)
    visits = np.array([p.n_visits for p in dataset.patients])
    followup = np.array([p.times[-1] - p.times[0] for p in dataset.patients])
    gaps = np.concatenate([np.diff(p.times) for p in dataset.patients])
    never_damaged = np.mean([
        not np.any(p.damaged[p.observed]) for p in dataset.patients
    ])
    table = empirical_transition_table(dataset)
    lines = [
        f"patients = {n}",
        f"visits: mean {visits.mean():.2f}, median {np.median(visits):.1f}, "
        f"range {visits.min()}-{visits.max()}",
        f"follow-up years: mean {followup.mean():.2f}, median {np.median(followup):.2f}",
        f"visit gap years: mean {gaps.mean():.2f}, median {np.median(gaps):.2f}",
        f"fraction never damaged = {never_damaged:.3f}",
        "",
        "observed transition table (rows: from, columns: to)",
        "        " + "".join(f"{s:>8s}" for s in _STATE_LABELS),
    ]
    for k, label in enumerate(_STATE_LABELS):
        lines.append(f"{label:>8s}" + "".join(f"{int(c):8d}" for c in table[k]))
    print("\n".join(lines))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panelmsm",
        description="Clustered multi-state Markov models for panel data",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in (("fit", run_fit), ("simulate", run_simulate),
                       ("validate", run_validate), ("summarize", run_summarize)):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--data", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--model", choices=sorted(_MODEL_ALIASES), default=None)
        p.add_argument("--re", choices=sorted(_RE_ALIASES), default=None)
        p.add_argument("--quad", type=int, default=None)
        p.set_defaults(func=func)
    sub.choices["fit"].add_argument("--truth", default=None,
                                    help="simulator truth sidecar for comparison")
    sub.choices["validate"].add_argument("--grid", type=int, default=200)
    sub.choices["validate"].add_argument("--inject-error", action="store_true",
                                         help="self-test: corrupt a kernel entry")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except DataValidationError as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
