"""Monte Carlo sweeps over transmit power, pair count or IQI level.

Every trial index maps to one scenario seed, and every method in a sweep
sees the same scenario and IQI draw for that index (common random
numbers), so differences between methods are paired.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .ao import evaluate_design_under_mismatch, optimize
from .channel import generate_scenario
from .config import ExperimentConfig
from .impairments import IqiSetup

log = logging.getLogger(__name__)

AXES = ("power_P", "pair_count_K", "iqi_amplitude_a_t")

# AO overrides per method; the IQI-unaware design is optimized for ideal
# hardware and evaluated on the actual one.
METHODS = {
    "IGS-NOMA-ES-T_U": dict(set_kind="T_U", mode="ES"),
    "IGS-NOMA-ES-T_I": dict(set_kind="T_I", mode="ES"),
    "IGS-NOMA-ES-T_N": dict(set_kind="T_N", mode="ES"),
    "IGS-NOMA-MS": dict(set_kind="T_I", mode="MS"),
    "PGS-NOMA": dict(signaling="PGS", set_kind="T_U", mode="ES"),
    "IGS-TIN": dict(access="TIN", set_kind="T_U", mode="ES"),
    "no-RIS": dict(ris_kind="none"),
    "regular-RIS": dict(ris_kind="regular"),
    "IQI-unaware": dict(set_kind="T_I", mode="MS"),
}

MAX_FAILURE_RATE = 0.10


class SweepAborted(RuntimeError):
    pass


@dataclass
class SweepSpec:
    axis: str
    values: list
    trials: int
    methods: list
    base: ExperimentConfig = field(default_factory=ExperimentConfig)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.values:
            raise ValueError("values must not be empty")
        if list(self.values) != sorted(self.values):
            raise ValueError("values must be sorted")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"unknown or missing methods {bad}; choose from {list(METHODS)}")
        if self.axis == "pair_count_K" and any(v < 1 or v != int(v) for v in self.values):
            raise ValueError("pair counts must be positive integers")
        if self.workers < 1:
            raise ValueError("workers must be positive")

    @classmethod
    def from_config(cls, cfg: ExperimentConfig, seed: Optional[int] = None,
                    workers: Optional[int] = None) -> "SweepSpec":
        sw = dict(cfg.sweep)
        missing = [k for k in ("axis", "values", "methods") if k not in sw]
        if missing:
            raise ValueError(f"sweep section lacks {missing}")
        return cls(sw["axis"], sw["values"], sw.get("trials", 20), sw["methods"], cfg,
                   sw.get("seed", 0) if seed is None else seed,
                   sw.get("workers", 1) if workers is None else workers)


def trial_seed(seed: int, trial: int) -> int:
    """Scenario seed shared by every method and axis value at trial index ``trial``."""
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


@dataclass
class TrialRecord:
    axis_value: float
    trial: int
    method: str
    scenario_seed: int
    min_rate: float
    rounds: int
    failed: bool = False


@dataclass
class SummaryRow:
    axis_value: float
    method: str
    mean: float
    stderr: float
    n_ok: int
    n_failed: int


@dataclass
class SweepResult:
    axis: str
    summary: list
    trials: list
    failures: int = 0

    def mean(self, method: str, axis_value: float) -> float:
        for r in self.summary:
            if r.method == method and r.axis_value == axis_value:
                return r.mean
        raise KeyError((method, axis_value))

    def paired(self, method: str, axis_value: float) -> np.ndarray:
        """Per-trial rates of ``method`` at ``axis_value`` ordered by trial index."""
        rows = sorted((t for t in self.trials
                       if t.method == method and t.axis_value == axis_value),
                      key=lambda t: t.trial)
        return np.array([t.min_rate for t in rows])


def _trial_setup(spec: SweepSpec, value: float, trial: int):
    base = spec.base
    scen_cfg = base.scenario
    power_db = base.power_db
    amp, phase = base.iqi_amplitude, base.iqi_phase_deg
    if spec.axis == "power_P":
        power_db = value
    elif spec.axis == "pair_count_K":
        scen_cfg = replace(scen_cfg, k_pairs=int(value))
    else:
        amp = value
    seed = trial_seed(spec.seed, trial)
    scenario = generate_scenario(scen_cfg, seed)
    iqi = IqiSetup.for_scenario(scenario, amp, phase)
    return scenario, iqi, power_db, seed


def run_trial(spec: SweepSpec, value: float, trial: int) -> list:
    """All methods on one scenario draw; failures are recorded, not raised."""
    scenario, iqi, power_db, seed = _trial_setup(spec, value, trial)
    out = []
    for method in spec.methods:
        try:
            cfg = spec.base.ao_config(power_db, seed=seed, **METHODS[method])
            if method == "IQI-unaware":
                ideal = IqiSetup.ideal(scenario.n_bs, scenario.n_u, scenario.n_users)
                res = optimize(scenario, ideal, cfg)
                rate = evaluate_design_under_mismatch(
                    res.covs, res.ris, scenario, ideal, iqi, cfg.sigma2, cfg.weights,
                    cfg.access).weighted_min
            else:
                res = optimize(scenario, iqi, cfg)
                rate = res.report.weighted_min
            if not np.isfinite(rate):
                raise FloatingPointError("non-finite rate")
            out.append(TrialRecord(value, trial, method, seed, float(rate),
                                   len(res.trace.records) - 1))
        except Exception as exc:  # a failed trial is excluded, not fatal
            log.warning("trial %d, %s=%s, %s failed: %s", trial, spec.axis, value, method, exc)
            out.append(TrialRecord(value, trial, method, seed, math.nan, 0, True))
    return out


def _run_task(args):
    spec, value, trial = args
    return run_trial(spec, value, trial)


def summarize_trials(records: Sequence[TrialRecord], values, methods) -> list:
    rows = []
    for v in values:
        for m in methods:
            sel = [r for r in records if r.axis_value == v and r.method == m]
            ok = np.array([r.min_rate for r in sel if not r.failed])
            n = len(ok)
            mean = float(ok.mean()) if n else math.nan
            se = float(ok.std(ddof=1) / np.sqrt(n)) if n > 1 else (0.0 if n == 1 else math.nan)
            rows.append(SummaryRow(v, m, mean, se, n, len(sel) - n))
    return rows


def run_sweep(spec: SweepSpec, out_dir=None) -> SweepResult:
    """Run every (axis value, trial) cell and aggregate per method.

    Results do not depend on ``spec.workers``: cells are independent and
    are reduced in a fixed order.
    """
    tasks = [(spec, v, t) for v in spec.values for t in range(spec.trials)]
    planned = len(tasks) * len(spec.methods)
    limit = MAX_FAILURE_RATE * planned
    records, failures = [], 0

    def absorb(batch):
        nonlocal failures
        records.extend(batch)
        failures += sum(r.failed for r in batch)
        if failures > limit:
            raise SweepAborted(f"{failures} of {planned} runs failed (limit 10%)")

    if spec.workers == 1:
        for task in tasks:
            absorb(_run_task(task))
    else:
        with ProcessPoolExecutor(spec.workers) as pool:
            for batch in pool.map(_run_task, tasks, chunksize=1):
                absorb(batch)
    if failures:
        log.warning("%d of %d runs failed and were excluded", failures, planned)
    summary = summarize_trials(records, spec.values, spec.methods)
    result = SweepResult(spec.axis, summary, records, failures)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_summary_csv(summary, out / "summary.csv", spec.axis)
        write_trials_csv(records, out / "trials.csv", spec.axis)
    return result


# ---------------------------------------------------------------- CSV I/O

SUMMARY_FIELDS = ["axis", "axis_value", "method", "mean", "stderr", "n_ok", "n_failed"]
TRIAL_FIELDS = ["axis", "axis_value", "trial", "method", "scenario_seed", "min_rate",
                "rounds", "failed"]
GAIN_FIELDS = ["axis", "axis_value", "reference", "treatment", "reference_mean",
               "treatment_mean", "gain_percent"]


def write_summary_csv(rows, path, axis: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_FIELDS)
        for r in rows:
            w.writerow([axis, repr(r.axis_value), r.method, repr(r.mean), repr(r.stderr),
                        r.n_ok, r.n_failed])


def read_summary_csv(path):
    """Returns ``(axis, rows)``."""
    rows, axis = [], ""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUMMARY_FIELDS:
            raise ValueError(f"{path}: expected columns {SUMMARY_FIELDS}")
        for d in reader:
            axis = d["axis"]
            rows.append(SummaryRow(float(d["axis_value"]), d["method"], float(d["mean"]),
                                   float(d["stderr"]), int(d["n_ok"]), int(d["n_failed"])))
    return axis, rows


def write_trials_csv(records, path, axis: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRIAL_FIELDS)
        for r in records:
            w.writerow([axis, repr(r.axis_value), r.trial, r.method, r.scenario_seed,
                        repr(r.min_rate), r.rounds, int(r.failed)])


def read_trials_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for d in csv.DictReader(fh):
            out.append(TrialRecord(float(d["axis_value"]), int(d["trial"]), d["method"],
                                   int(d["scenario_seed"]), float(d["min_rate"]),
                                   int(d["rounds"]), bool(int(d["failed"]))))
    return out


# ---------------------------------------------------------------- gains

@dataclass
class GainRow:
    axis_value: float
    reference: str
    treatment: str
    reference_mean: float
    treatment_mean: float
    gain_percent: Optional[float]   # None when the reference rate is not positive


def percent_gain(reference: float, treatment: float) -> Optional[float]:
    if not np.isfinite(reference) or reference <= 0 or not np.isfinite(treatment):
        return None
    return (treatment - reference) / reference * 100.0


def summarize_gains(rows: Sequence[SummaryRow], reference: str,
                    treatments: Optional[Sequence[str]] = None) -> list:
    """Percentage improvement of each treatment over ``reference`` per axis value."""
    methods = {r.method for r in rows}
    if reference not in methods:
        raise ValueError(f"reference method {reference!r} not in results")
    if treatments is None:
        treatments = [m for m in dict.fromkeys(r.method for r in rows) if m != reference]
    missing = [t for t in treatments if t not in methods]
    if missing:
        raise ValueError(f"treatment methods {missing} not in results")
    by = {(r.axis_value, r.method): r.mean for r in rows}
    values = sorted({r.axis_value for r in rows})
    out = []
    for v in values:
        ref = by.get((v, reference), math.nan)
        for t in treatments:
            tr = by.get((v, t), math.nan)
            out.append(GainRow(v, reference, t, ref, tr, percent_gain(ref, tr)))
    return out


def write_gains_csv(rows, path, axis: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GAIN_FIELDS)
        for r in rows:
            w.writerow([axis, repr(r.axis_value), r.reference, r.treatment,
                        repr(r.reference_mean), repr(r.treatment_mean),
                        "undefined" if r.gain_percent is None else repr(r.gain_percent)])


def read_gains_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for d in csv.DictReader(fh):
            g = d["gain_percent"]
            out.append(GainRow(float(d["axis_value"]), d["reference"], d["treatment"],
                               float(d["reference_mean"]), float(d["treatment_mean"]),
                               None if g == "undefined" else float(g)))
    return out
