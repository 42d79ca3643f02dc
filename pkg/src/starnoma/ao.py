"""Alternating optimization: covariance step, then surface step, until the objective stalls."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .channel import ComplexScenario, StarRisState
from .covariance import solve_covariance_step
from .impairments import IqiSetup, real_channels
from .rates import ACCESS_MODES, SIGNALING, RateReport, RealCovarianceSet, evaluate_rates
from .ris import (RisStepConfig, finish_candidate, ms_partition, solve_ris_step,
                  weighted_surface_target)
from .solver import SolverSettings
from .surrogates import ChannelModel, ExpansionPoint

log = logging.getLogger(__name__)

RIS_KINDS = ("star", "regular", "none")
IGS_STARTS = ("white", "proper_first", "best")


@dataclass
class AoConfig:
    """Everything the driver needs besides the scenario and the IQI setup.

    ``power`` is the linear transmit power budget; noise power is ``sigma2``.
    ``ris_kind='regular'`` pins every transmission coefficient to zero;
    ``'none'`` keeps the surface off.

    ``igs_start`` picks how an IGS run is started: ``'white'`` from the
    white covariances, ``'proper_first'`` by converging over proper
    covariances first and continuing without the restriction, ``'best'``
    runs both and keeps the better design.

    When a round gains less than ``escape_tol`` (relative), up to
    ``escapes`` joint surface/covariance moves are tried before the usual
    ``tol`` stopping test; ``escapes=0`` gives plain alternation.
    ``cov_rounds`` caps the MM covariance iterations per round.
    """
    power: float = 100.0
    sigma2: float = 1.0
    weights: Optional[np.ndarray] = None
    signaling: str = "IGS"
    access: str = "NOMA"
    ris_kind: str = "star"
    set_kind: str = "T_U"
    mode: str = "ES"
    ms_strategy: str = "alternating"
    epsilon0: float = 1e-2
    epsilon_min: float = 1e-4
    phase_projection: bool = True
    igs_start: str = "best"
    max_rounds: int = 50
    cov_rounds: int = 1
    escapes: int = 5
    escape_tol: float = 1e-2
    escape_iterations: int = 5
    tol: float = 1e-4
    seed: int = 0
    cov_settings: SolverSettings = field(default_factory=SolverSettings)
    ris_settings: SolverSettings = field(default_factory=SolverSettings)

    def validate(self):
        if self.power <= 0:
            raise ValueError("power must be positive")
        if self.signaling not in SIGNALING:
            raise ValueError(f"signaling must be one of {SIGNALING}")
        if self.access not in ACCESS_MODES:
            raise ValueError(f"access must be one of {ACCESS_MODES}")
        if self.ris_kind not in RIS_KINDS:
            raise ValueError(f"ris_kind must be one of {RIS_KINDS}")
        if self.igs_start not in IGS_STARTS:
            raise ValueError(f"igs_start must be one of {IGS_STARTS}")
        if self.max_rounds < 1 or self.cov_rounds < 1:
            raise ValueError("max_rounds and cov_rounds must be positive")
        if self.escapes < 0 or self.escape_iterations < 1:
            raise ValueError("escapes must be non-negative and escape_iterations positive")


@dataclass
class AoRecord:
    iteration: int
    objective: float
    rates: np.ndarray
    cov_time: float = 0.0
    ris_time: float = 0.0
    cov_accepted: bool = True
    ris_accepted: bool = False


@dataclass
class AoTrace:
    records: list = field(default_factory=list)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def is_monotone(self, slack: float = 1e-9) -> bool:
        return bool(np.all(np.diff(self.objectives) >= -slack))

    def write_csv(self, path) -> None:
        n = len(self.records[0].rates) if self.records else 0
        names = ["iteration", "objective", "cov_time", "ris_time", "cov_accepted",
                 "ris_accepted"] + [f"rate_{u}" for u in range(n)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.records:
                w.writerow([r.iteration, repr(r.objective), repr(r.cov_time), repr(r.ris_time),
                            int(r.cov_accepted), int(r.ris_accepted)]
                           + [repr(float(x)) for x in r.rates])


class AoResult(NamedTuple):
    covs: RealCovarianceSet
    ris: StarRisState
    report: RateReport
    trace: AoTrace


def initial_ris(scenario: ComplexScenario, config: AoConfig) -> StarRisState:
    """Starting coefficients: ES splits energy evenly with random phases, MS uses unit modulus."""
    n = scenario.n_ris
    if config.ris_kind == "none" or n == 0:
        return StarRisState.zeros(n)
    rng = np.random.default_rng(config.seed)
    ph_r = rng.uniform(0, 2 * np.pi, n)
    ph_t = rng.uniform(0, 2 * np.pi, n)
    if config.ris_kind == "regular":
        return StarRisState(np.exp(1j * ph_r), np.zeros(n, dtype=complex), "MS",
                            _ris_set(config), np.ones(n, dtype=bool))
    if config.mode == "MS":
        assign = ms_partition(scenario, config.ms_strategy)
        r = np.where(assign, np.exp(1j * ph_r), 0)
        t = np.where(assign, 0, np.exp(1j * ph_t))
        return StarRisState(r.astype(complex), t.astype(complex), "MS", _ris_set(config), assign)
    if config.set_kind == "T_N":
        ph_t = ph_r + np.where(rng.random(n) < 0.5, np.pi / 2, -np.pi / 2)
    amp = 1 / np.sqrt(2.0)
    return StarRisState(amp * np.exp(1j * ph_r), amp * np.exp(1j * ph_t), "ES", config.set_kind)


def _ris_set(config):
    # unit modulus on the active side; T_I and T_N coincide for MS
    return "T_I" if config.set_kind == "T_U" and config.ris_kind == "regular" else config.set_kind


def initial_covariances(scenario: ComplexScenario, power: float) -> RealCovarianceSet:
    return RealCovarianceSet.white(scenario.n_users, scenario.n_bs, power)


def optimize(scenario: ComplexScenario, iqi: IqiSetup, config: AoConfig,
             init: Optional[tuple] = None) -> AoResult:
    """Run AO and return the final accepted design.

    ``init`` is an optional ``(covs, ris)`` warm start; by default the
    white covariances and :func:`initial_ris` are used.
    """
    config.validate()
    if init is not None or config.signaling == "PGS" or config.igs_start == "white":
        return _run(scenario, iqi, config, init)
    first = _run(scenario, iqi, replace(config, signaling="PGS"), None)
    second = _run(scenario, iqi, config, (first.covs, first.ris))
    records = first.trace.records + [
        replace(r, iteration=r.iteration + len(first.trace.records) - 1)
        for r in second.trace.records[1:]]
    staged = second._replace(trace=AoTrace(records))
    if config.igs_start == "proper_first":
        return staged
    white = _run(scenario, iqi, config, None)
    return staged if staged.report.weighted_min > white.report.weighted_min else white


def _run(scenario: ComplexScenario, iqi: IqiSetup, config: AoConfig,
         init: Optional[tuple]) -> AoResult:
    weights = (np.ones(scenario.n_users) if config.weights is None
               else np.asarray(config.weights, dtype=float))
    model = ChannelModel(scenario, iqi, config.sigma2)
    if init is None:
        covs = initial_covariances(scenario, config.power)
        ris = initial_ris(scenario, config)
    else:
        covs, ris = init
    ris_on = config.ris_kind != "none" and scenario.n_ris > 0
    ris_cfg_kind = ris.set_kind

    ep = ExpansionPoint(covs, ris, model, weights, config.access)
    obj = ep.objective
    trace = AoTrace([AoRecord(0, obj, ep.rates.copy())])
    eps = config.epsilon0
    escapes = config.escapes if ris_on else 0
    duals = None
    it = 0
    while it < config.max_rounds:
        it += 1
        prev = obj
        t0 = time.perf_counter()
        covs, ep, obj, cov_ok, new_duals = _covariance_block(ep, model, weights, config)
        duals = new_duals if new_duals is not None else duals
        t1 = time.perf_counter()
        ris_ok = False
        if ris_on:
            cfg = RisStepConfig(ris_cfg_kind, ris.mode, eps, config.ris_settings,
                                config.phase_projection)
            rs = solve_ris_step(ep, cfg)
            ris_ok = rs.accepted
            if ris_ok:
                ris = rs.state
                ep = ExpansionPoint(covs, ris, model, weights, config.access)
                obj = ep.objective
            eps = max(eps / 2, config.epsilon_min)
        t2 = time.perf_counter()
        trace.records.append(AoRecord(it, obj, ep.rates.copy(), t1 - t0, t2 - t1, cov_ok, ris_ok))
        gain = obj - prev
        if gain > config.escape_tol * max(abs(prev), 1e-12):
            continue
        if escapes > 0 and duals is not None and it < config.max_rounds:
            escapes -= 1
            t0 = time.perf_counter()
            cfg = RisStepConfig(ris_cfg_kind, ris.mode, eps, config.ris_settings,
                                config.phase_projection)
            moved = _escape(ep, cfg, duals, model, weights, config)
            if moved is None:
                escapes = 0
            else:
                it += 1
                ep, duals = moved
                covs, ris, obj = ep.covs, ep.ris, ep.objective
                trace.records.append(AoRecord(it, obj, ep.rates.copy(), 0.0,
                                              time.perf_counter() - t0, True, True))
                continue
        if gain <= config.tol * max(abs(prev), 1e-12):
            break
    report = evaluate_rates(model.channels(ep.z), covs, weights, config.access)
    return AoResult(covs, ris, report, trace)


def _covariance_block(ep: ExpansionPoint, model, weights, config: AoConfig, rounds=None):
    """MM iterations over the covariances for the current surface until they stall."""
    covs, obj = ep.covs, ep.objective
    improved = False
    duals = None
    for _ in range(rounds or config.cov_rounds):
        step = solve_covariance_step(ep, config.signaling, config.cov_settings)
        ep_new = ExpansionPoint(step.covs, ep.ris, model, weights, config.access)
        if ep_new.objective < obj:
            break
        gain = ep_new.objective - obj
        improved = improved or gain > 0
        covs, ep, obj, duals = step.covs, ep_new, ep_new.objective, step.duals
        if gain <= config.tol * max(abs(obj), 1e-12):
            break
    return covs, ep, obj, improved, duals


def _escape(ep: ExpansionPoint, cfg: RisStepConfig, duals, model, weights, config: AoConfig):
    """Try to leave a point where neither block improves on its own.

    First the surface moves toward the maximizer of the dual-weighted branch
    minorants, halving from the full move until one helps.  If that gains
    little, flipping the sign of either side is tried as well; it leaves
    saddles where a cascaded path opposes the direct one.  The covariances
    are re-optimized at each candidate and the best strict improvement is
    kept.
    """
    ris = ep.ris

    def attempt(cand):
        cand, _ = finish_candidate(cand, ris, cfg)
        if not cand.is_feasible(1e-9):
            return None
        trial = ExpansionPoint(ep.covs, cand, model, weights, config.access)
        _, trial, obj, _, duals_new = _covariance_block(trial, model, weights, config,
                                                        rounds=max(config.cov_rounds, 3))
        if obj > ep.objective * (1 + config.tol):
            return trial, duals_new if duals_new is not None else duals
        return None

    found = []
    target = weighted_surface_target(ep, cfg, duals, config.escape_iterations)
    for frac in 0.5 ** np.arange(5):
        out = attempt(ris.with_coefficients((1 - frac) * ris.theta_r + frac * target.theta_r,
                                            (1 - frac) * ris.theta_t + frac * target.theta_t))
        if out is not None:
            found.append(out)
            break
    big = ep.objective * (1 + config.escape_tol)
    if not found or found[0][0].objective < big:
        for cand in (ris.with_coefficients(-ris.theta_r, ris.theta_t),
                     ris.with_coefficients(ris.theta_r, -ris.theta_t)):
            out = attempt(cand)
            if out is not None:
                found.append(out)
    if not found:
        return None
    return max(found, key=lambda pair: pair[0].objective)


def evaluate_design_under_mismatch(covs: RealCovarianceSet, ris: StarRisState,
                                   scenario: ComplexScenario, design_iqi: IqiSetup,
                                   true_iqi: IqiSetup, sigma2: float = 1.0, weights=None,
                                   access: str = "NOMA") -> RateReport:
    """Rates of a design optimized under ``design_iqi`` when the hardware follows ``true_iqi``."""
    return evaluate_rates(real_channels(scenario, ris, true_iqi, sigma2), covs, weights, access)


def save_design(path, result: AoResult) -> None:
    """Checkpoint of the final design (covariances, coefficients, trace objectives)."""
    ris = result.ris
    np.savez(path, p=result.covs.p, power_budget=result.covs.power_budget,
             theta_r=ris.theta_r, theta_t=ris.theta_t, mode=ris.mode, set_kind=ris.set_kind,
             ms_assignment=(np.zeros(0, dtype=bool) if ris.ms_assignment is None
                            else ris.ms_assignment),
             objectives=result.trace.objectives, rates=result.report.rates)


def load_design(path):
    """Inverse of :func:`save_design`; returns ``(covs, ris)`` ready for replay."""
    with np.load(path) as d:
        covs = RealCovarianceSet(d["p"], float(d["power_budget"]))
        ms = d["ms_assignment"]
        ris = StarRisState(d["theta_r"], d["theta_t"], str(d["mode"]), str(d["set_kind"]),
                           ms if ms.size else None)
    return covs, ris
