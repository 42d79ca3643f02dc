"""Propagation channels for a STAR-RIS assisted MIMO broadcast channel.

Users ``0..K-1`` are cell-centre users (CCUs) on the reflection side of the
surface; users ``K..2K-1`` are cell-edge users (CEUs) on the transmission
side.  CCU ``k`` is paired with CEU ``k + K``.  All indices are 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

REFLECT = "reflection"
TRANSMIT = "transmission"

SET_KINDS = ("T_U", "T_I", "T_N")
MODES = ("ES", "MS")


class ChannelDimensionError(ValueError):
    """Raised when channel or coefficient shapes disagree with the scenario."""


@dataclass
class ScenarioConfig:
    """Network size, geometry and large-scale fading for scenario draws.

    Positions are in metres on a plane.  The BS sits at the origin and the
    surface at ``(ris_x, 0)``; its plane is the vertical line ``x = ris_x``.
    Path gain of a link of length ``d`` is ``(d / ref_distance) ** -alpha``.
    """
    n_bs: int = 2
    n_u: int = 2
    n_ris: int = 8
    k_pairs: int = 2
    ris_x: float = 20.0
    ccu_r_min: float = 5.0
    ccu_r_max: float = 15.0
    ceu_r_min: float = 5.0
    ceu_r_max: float = 15.0
    alpha_direct: float = 3.5
    alpha_ris: float = 2.2
    ref_distance: float = 10.0
    fading: str = "rayleigh"

    def validate(self) -> None:
        for name in ("n_bs", "n_u", "k_pairs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_ris < 0:
            raise ValueError(f"n_ris must be non-negative, got {self.n_ris}")
        if not 0 < self.ccu_r_min <= self.ccu_r_max < self.ris_x:
            raise ValueError("CCU annulus must satisfy 0 < r_min <= r_max < ris_x")
        if not 0 < self.ceu_r_min <= self.ceu_r_max:
            raise ValueError("CEU annulus must satisfy 0 < r_min <= r_max")
        if self.ref_distance <= 0:
            raise ValueError("ref_distance must be positive")
        if self.fading != "rayleigh":
            raise ValueError(f"unsupported fading kind {self.fading!r}")

    @classmethod
    def from_mapping(cls, values: dict) -> "ScenarioConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in values:
                kwargs[f.name] = type(f.default)(values[f.name])
        return cls(**kwargs)


@dataclass(frozen=True)
class ComplexScenario:
    """One network draw: complex channels, geometry and NOMA pairing."""
    n_bs: int
    n_u: int
    n_ris: int
    k_pairs: int
    direct: np.ndarray       # (2K, N_u, N_BS)   F_k
    bs_to_ris: np.ndarray    # (N_RIS, N_BS)     G
    ris_to_user: np.ndarray  # (2K, N_u, N_RIS)  G_k
    side: tuple
    positions: Optional[np.ndarray] = None   # (2K, 2)
    pl_direct: Optional[np.ndarray] = None   # (2K,)
    pl_ris_user: Optional[np.ndarray] = None  # (2K,)
    pl_bs_ris: float = 1.0

    def __post_init__(self):
        self.validate()

    @property
    def n_users(self) -> int:
        return 2 * self.k_pairs

    def partner(self, user: int) -> int:
        return (user + self.k_pairs) % self.n_users

    def is_ccu(self, user: int) -> bool:
        return user < self.k_pairs

    def validate(self) -> None:
        n = self.n_users
        expected = {
            "direct": (n, self.n_u, self.n_bs),
            "bs_to_ris": (self.n_ris, self.n_bs),
            "ris_to_user": (n, self.n_u, self.n_ris),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ChannelDimensionError(
                    f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        if len(self.side) != n or any(s not in (REFLECT, TRANSMIT) for s in self.side):
            raise ValueError("side must list 'reflection'/'transmission' per user")

    def save(self, path) -> None:
        """Dump to a ``.npz`` archive for replay."""
        np.savez(
            path, n_bs=self.n_bs, n_u=self.n_u, n_ris=self.n_ris, k_pairs=self.k_pairs,
            direct=self.direct, bs_to_ris=self.bs_to_ris, ris_to_user=self.ris_to_user,
            side=np.array(self.side), positions=_or_empty(self.positions),
            pl_direct=_or_empty(self.pl_direct), pl_ris_user=_or_empty(self.pl_ris_user),
            pl_bs_ris=self.pl_bs_ris,
        )

    @classmethod
    def load(cls, path) -> "ComplexScenario":
        with np.load(Path(path), allow_pickle=False) as z:
            opt = {k: (z[k] if z[k].size else None)
                   for k in ("positions", "pl_direct", "pl_ris_user")}
            return cls(
                n_bs=int(z["n_bs"]), n_u=int(z["n_u"]), n_ris=int(z["n_ris"]),
                k_pairs=int(z["k_pairs"]), direct=z["direct"], bs_to_ris=z["bs_to_ris"],
                ris_to_user=z["ris_to_user"], side=tuple(str(s) for s in z["side"]),
                pl_bs_ris=float(z["pl_bs_ris"]), **opt)


def _or_empty(a):
    return np.zeros(0) if a is None else a


@dataclass(frozen=True)
class StarRisState:
    """Reflection and transmission coefficients of every surface element.

    ``ms_assignment[i]`` is True when element ``i`` reflects (MS mode only).
    """
    theta_r: np.ndarray
    theta_t: np.ndarray
    mode: str = "ES"
    set_kind: str = "T_U"
    ms_assignment: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.set_kind not in SET_KINDS:
            raise ValueError(f"set_kind must be one of {SET_KINDS}")
        if self.theta_r.shape != self.theta_t.shape or self.theta_r.ndim != 1:
            raise ChannelDimensionError("theta_r and theta_t must be equal-length vectors")
        if self.mode == "MS":
            if self.ms_assignment is None or self.ms_assignment.shape != self.theta_r.shape:
                raise ValueError("MS mode needs a per-element ms_assignment")

    @property
    def n_ris(self) -> int:
        return self.theta_r.shape[0]

    def energy(self) -> np.ndarray:
        return np.abs(self.theta_r) ** 2 + np.abs(self.theta_t) ** 2

    def with_coefficients(self, theta_r, theta_t) -> "StarRisState":
        return replace(self, theta_r=np.asarray(theta_r, dtype=complex),
                       theta_t=np.asarray(theta_t, dtype=complex))

    def feasibility_violations(self, tol: float = 1e-9) -> list:
        """Names of violated constraints for the declared set; empty when feasible."""
        bad = []
        e = self.energy()
        if np.any(e > 1 + tol):
            bad.append("energy<=1")
        if self.set_kind in ("T_I", "T_N") and np.any(e < 1 - tol):
            bad.append("energy>=1")
        if self.set_kind == "T_N":
            for sign in (1, -1):
                if np.any(np.abs(self.theta_r + sign * self.theta_t) ** 2 > 1 + tol):
                    bad.append(f"|r{'+' if sign > 0 else '-'}t|^2<=1")
        if self.mode == "MS":
            a = self.ms_assignment
            if np.any(self.theta_t[a] != 0) or np.any(self.theta_r[~a] != 0):
                bad.append("ms_zero_pattern")
        return bad

    def is_feasible(self, tol: float = 1e-9) -> bool:
        return not self.feasibility_violations(tol)

    @classmethod
    def zeros(cls, n_ris: int) -> "StarRisState":
        z = np.zeros(n_ris, dtype=complex)
        return cls(z, z.copy(), "ES", "T_U")


def compose_effective_channel(scenario: ComplexScenario, ris: StarRisState,
                              user: int) -> np.ndarray:
    """Return ``G_k diag(theta) G + F_k`` with theta chosen by the user's side."""
    if not 0 <= user < scenario.n_users:
        raise IndexError(f"user {user} outside 0..{scenario.n_users - 1}")
    if ris.n_ris != scenario.n_ris:
        raise ChannelDimensionError(
            f"theta has {ris.n_ris} elements but G has {scenario.n_ris} rows")
    theta = ris.theta_r if scenario.side[user] == REFLECT else ris.theta_t
    gk = scenario.ris_to_user[user]
    return (gk * theta) @ scenario.bs_to_ris + scenario.direct[user]


def path_gain(distance, alpha: float, ref_distance: float):
    return (np.asarray(distance, dtype=float) / ref_distance) ** (-alpha)


def _crandn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _annulus(rng, n, r_min, r_max, ang_lo, ang_hi):
    # uniform over the annular sector area
    r = np.sqrt(rng.uniform(r_min ** 2, r_max ** 2, n))
    a = rng.uniform(ang_lo, ang_hi, n)
    return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)


def generate_scenario(config: ScenarioConfig, seed: int) -> ComplexScenario:
    """Draw one scenario deterministically from ``seed``.

    CCUs fall in an annulus around the BS (reflection side), CEUs in an
    annulus centred on the surface behind its plane (transmission side).
    The CEU cluster is shuffled before pairing, so CCU ``k`` meets a random
    CEU.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    K, n = config.k_pairs, 2 * config.k_pairs
    ris_pos = np.array([config.ris_x, 0.0])

    ccu = _annulus(rng, K, config.ccu_r_min, config.ccu_r_max, -np.pi, np.pi)
    ceu = ris_pos + _annulus(rng, K, config.ceu_r_min, config.ceu_r_max,
                             -np.pi / 2, np.pi / 2)
    ceu = ceu[rng.permutation(K)]
    pos = np.vstack([ccu, ceu])

    d_direct = np.linalg.norm(pos, axis=1)
    d_ris_user = np.linalg.norm(pos - ris_pos, axis=1)
    pl_direct = path_gain(d_direct, config.alpha_direct, config.ref_distance)
    pl_ris_user = path_gain(d_ris_user, config.alpha_ris, config.ref_distance)
    pl_bs_ris = float(path_gain(config.ris_x, config.alpha_ris, config.ref_distance))

    direct = np.sqrt(pl_direct)[:, None, None] * _crandn(rng, (n, config.n_u, config.n_bs))
    bs_to_ris = np.sqrt(pl_bs_ris) * _crandn(rng, (config.n_ris, config.n_bs))
    ris_to_user = (np.sqrt(pl_ris_user)[:, None, None]
                   * _crandn(rng, (n, config.n_u, config.n_ris)))
    side = tuple([REFLECT] * K + [TRANSMIT] * K)
    return ComplexScenario(
        n_bs=config.n_bs, n_u=config.n_u, n_ris=config.n_ris, k_pairs=K,
        direct=direct, bs_to_ris=bs_to_ris, ris_to_user=ris_to_user, side=side,
        positions=pos, pl_direct=pl_direct, pl_ris_user=pl_ris_user, pl_bs_ris=pl_bs_ris)


def without_ris(scenario: ComplexScenario) -> ComplexScenario:
    """Same draw with the surface removed (``N_RIS = 0``)."""
    return replace(scenario, n_ris=0,
                   bs_to_ris=np.zeros((0, scenario.n_bs), dtype=complex),
                   ris_to_user=np.zeros((scenario.n_users, scenario.n_u, 0), dtype=complex))
