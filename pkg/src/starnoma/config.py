"""Plain-text experiment configuration (INI sections, ``key = value``).

Example::

    [scenario]
    n_bs = 2
    n_ris = 8
    k_pairs = 2

    [iqi]
    amplitude = 1.0
    phase_deg = 5

    [ao]
    power_db = 20
    max_rounds = 50

    [covariance_solver]
    backend = conic

    [sweep]
    axis = power_P
    values = 10, 20, 30
    trials = 20
    methods = IGS-NOMA-ES-T_U, PGS-NOMA
    seed = 1
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .ao import AoConfig
from .channel import ScenarioConfig
from .solver import SolverSettings


class ConfigError(ValueError):
    pass


_AO_FLOATS = ("sigma2", "epsilon0", "epsilon_min", "tol", "escape_tol")
_AO_INTS = ("max_rounds", "cov_rounds", "escapes", "escape_iterations")
_AO_STRINGS = ("signaling", "access", "ris_kind", "set_kind", "mode", "ms_strategy", "igs_start")
_AO_BOOLS = ("phase_projection",)


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    iqi_amplitude: float = 1.0
    iqi_phase_deg: float = 0.0
    power_db: float = 20.0
    ao: AoConfig = field(default_factory=AoConfig)
    sweep: dict = field(default_factory=dict)

    def ao_config(self, power_db: Optional[float] = None, **overrides) -> AoConfig:
        """AO settings at ``power_db`` (default: the configured power) with overrides."""
        p = self.power_db if power_db is None else power_db
        values = {f.name: getattr(self.ao, f.name) for f in fields(AoConfig)}
        values.update(overrides)
        values["power"] = 10 ** (p / 10)
        cfg = AoConfig(**values)
        cfg.validate()
        return cfg


def _floats(text: str) -> list:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _words(text: str) -> list:
    return [v.strip() for v in text.replace(";", ",").split(",") if v.strip()]


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    known = {"scenario", "iqi", "ao", "covariance_solver", "ris_solver", "sweep"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    try:
        cfg = ExperimentConfig()
        if cp.has_section("scenario"):
            cfg.scenario = ScenarioConfig.from_mapping(dict(cp["scenario"]))
        cfg.scenario.validate()
        if cp.has_section("iqi"):
            sec = cp["iqi"]
            cfg.iqi_amplitude = sec.getfloat("amplitude", 1.0)
            cfg.iqi_phase_deg = sec.getfloat("phase_deg", 0.0)
            if cfg.iqi_amplitude <= 0:
                raise ConfigError("iqi amplitude must be positive")
        ao = AoConfig()
        if cp.has_section("ao"):
            sec = cp["ao"]
            cfg.power_db = sec.getfloat("power_db", cfg.power_db)
            for k in _AO_FLOATS:
                if k in sec:
                    setattr(ao, k, sec.getfloat(k))
            for k in _AO_INTS:
                if k in sec:
                    setattr(ao, k, sec.getint(k))
            for k in _AO_STRINGS:
                if k in sec:
                    setattr(ao, k, sec[k].strip())
            for k in _AO_BOOLS:
                if k in sec:
                    setattr(ao, k, sec.getboolean(k))
            if "weights" in sec:
                ao.weights = np.array(_floats(sec["weights"]))
        if cp.has_section("covariance_solver"):
            ao.cov_settings = SolverSettings.from_mapping(dict(cp["covariance_solver"]))
        if cp.has_section("ris_solver"):
            ao.ris_settings = SolverSettings.from_mapping(dict(cp["ris_solver"]))
        ao.validate()
        cfg.ao = ao
        if cp.has_section("sweep"):
            sec = cp["sweep"]
            sw = {}
            if "axis" in sec:
                sw["axis"] = sec["axis"].strip()
            if "values" in sec:
                sw["values"] = _floats(sec["values"])
            if "trials" in sec:
                sw["trials"] = sec.getint("trials")
            if "methods" in sec:
                sw["methods"] = _words(sec["methods"])
            if "seed" in sec:
                sw["seed"] = sec.getint("seed")
            if "workers" in sec:
                sw["workers"] = sec.getint("workers")
            cfg.sweep = sw
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if cfg.ao.weights is not None and len(cfg.ao.weights) != 2 * cfg.scenario.k_pairs:
        if cfg.sweep.get("axis") != "pair_count_K":
            raise ConfigError("weights must list one value per user (2K)")
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())
