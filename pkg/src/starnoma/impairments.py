"""I/Q imbalance as widely-linear transforms and the real-domain channel.

A widely-linear map ``y = B1 x + B2 conj(x)`` acts on the stacked real
vector ``[Re x; Im x]`` as the real matrix returned by :func:`wl_to_real`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ComplexScenario, StarRisState, compose_effective_channel


@dataclass(frozen=True)
class IqiProfile:
    """Amplitude/phase imbalance of one transceiver (diagonals only, phases in radians)."""
    a_t: np.ndarray
    phi_t: np.ndarray
    a_r: np.ndarray
    phi_r: np.ndarray

    def __post_init__(self):
        n = self.a_t.shape
        for name in ("phi_t", "a_r", "phi_r"):
            if getattr(self, name).shape != n:
                raise ValueError(f"{name} must match a_t shape {n}")
        if np.any(self.a_t <= 0) or np.any(self.a_r <= 0):
            raise ValueError("IQI amplitudes must be positive")

    @classmethod
    def ideal(cls, n: int) -> "IqiProfile":
        return cls(np.ones(n), np.zeros(n), np.ones(n), np.zeros(n))

    @classmethod
    def scaled_identity(cls, n: int, amplitude: float, phase_deg: float) -> "IqiProfile":
        a = np.full(n, float(amplitude))
        p = np.full(n, np.deg2rad(phase_deg))
        return cls(a, p, a.copy(), p.copy())

    @property
    def is_ideal(self) -> bool:
        return (np.all(self.a_t == 1) and np.all(self.phi_t == 0)
                and np.all(self.a_r == 1) and np.all(self.phi_r == 0))


@dataclass(frozen=True)
class IqiSetup:
    """Transmit-side imbalance at the BS and receive-side imbalance per user."""
    bs: IqiProfile
    users: tuple

    @classmethod
    def ideal(cls, n_bs: int, n_u: int, n_users: int) -> "IqiSetup":
        return cls(IqiProfile.ideal(n_bs), tuple(IqiProfile.ideal(n_u) for _ in range(n_users)))

    @classmethod
    def uniform(cls, n_bs: int, n_u: int, n_users: int, amplitude: float,
                phase_deg: float) -> "IqiSetup":
        """Same ``A = a I``, ``phi = phase I`` at the BS and at every user."""
        return cls(IqiProfile.scaled_identity(n_bs, amplitude, phase_deg),
                   tuple(IqiProfile.scaled_identity(n_u, amplitude, phase_deg)
                         for _ in range(n_users)))

    @classmethod
    def for_scenario(cls, scenario: ComplexScenario, amplitude: float = 1.0,
                     phase_deg: float = 0.0) -> "IqiSetup":
        if amplitude == 1.0 and phase_deg == 0.0:
            return cls.ideal(scenario.n_bs, scenario.n_u, scenario.n_users)
        return cls.uniform(scenario.n_bs, scenario.n_u, scenario.n_users, amplitude, phase_deg)


@dataclass(frozen=True)
class RealChannel:
    h_real: np.ndarray   # (2 N_u, 2 N_BS)
    c_noise: np.ndarray  # (2 N_u, 2 N_u)


def _check_diagonal(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if np.any(m - np.diag(np.diag(m))):
        raise ValueError(f"{name} must be diagonal")
    if np.any(np.iscomplex(m)):
        raise ValueError(f"{name} must be real")
    return np.real(np.diag(m))


def gamma_matrices(amp: np.ndarray, phase: np.ndarray):
    """``Gamma1 = (I + A e^{j phi}) / 2`` and ``Gamma2 = I - conj(Gamma1)``."""
    a = _check_diagonal(amp, "amp")
    p = _check_diagonal(phase, "phase")
    if a.shape != p.shape:
        raise ValueError("amp and phase must have the same size")
    g1 = (1 + a * np.exp(1j * p)) / 2
    g2 = 1 - np.conj(g1)
    return np.diag(g1), np.diag(g2)


def widely_linear_apply(g1: np.ndarray, g2: np.ndarray, x: np.ndarray) -> np.ndarray:
    if g1.shape != g2.shape or g1.shape[1] != x.shape[0]:
        raise ValueError(f"shape mismatch: Gamma {g1.shape}/{g2.shape}, x {x.shape}")
    return g1 @ x + g2 @ np.conj(x)


def wl_to_real(b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """Real 2x2-block matrix of ``x -> B1 x + B2 conj(x)``; batched over leading axes."""
    top = np.concatenate([np.real(b1 + b2), np.imag(b2) - np.imag(b1)], axis=-1)
    bot = np.concatenate([np.imag(b1 + b2), np.real(b1) - np.real(b2)], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def real_stack(x: np.ndarray) -> np.ndarray:
    return np.concatenate([np.real(x), np.imag(x)], axis=0)


class WidelyLinearChain:
    """TX imbalance -> complex channel -> RX imbalance, linear in the complex channel.

    Precomputes the four gamma matrices so that many channels (e.g. the
    per-element basis used in the surface step) map cheaply to the real
    domain.
    """

    def __init__(self, iqi_tx: IqiProfile, iqi_rx: IqiProfile):
        self.g1t, self.g2t = _gammas(iqi_tx.a_t, iqi_tx.phi_t)
        self.g1r, self.g2r = _gammas(iqi_rx.a_r, iqi_rx.phi_r)
        self.rx_real = wl_to_real(np.diag(self.g1r), np.diag(self.g2r))
        if abs(np.linalg.det(self.rx_real)) < 1e-12:
            raise ValueError("receive imbalance makes the widely-linear map singular")

    def real_channel(self, h: np.ndarray) -> np.ndarray:
        """Map complex channel(s) ``(..., N_u, N_BS)`` to the real domain."""
        hc = np.conj(h)
        g1r = self.g1r[:, None]
        g2r = self.g2r[:, None]
        b1 = g1r * h * self.g1t + g2r * hc * np.conj(self.g2t)
        b2 = g1r * h * self.g2t + g2r * hc * np.conj(self.g1t)
        return wl_to_real(b1, b2)

    def noise_covariance(self, sigma2: float) -> np.ndarray:
        m = self.rx_real
        c = 0.5 * sigma2 * (m @ m.T)
        return 0.5 * (c + c.T)


def _gammas(a, p):
    g1 = (1 + a * np.exp(1j * p)) / 2
    return g1, 1 - np.conj(g1)


def real_decompose(scenario: ComplexScenario, ris: StarRisState, user: int,
                   iqi_tx: IqiProfile, iqi_rx: IqiProfile, sigma2: float) -> RealChannel:
    """Effective real channel and noise covariance seen by ``user``.

    The complex chain is ``y = G1r (H (G1t x + G2t x*) + n) + G2r (...)*``
    with proper noise ``n ~ CN(0, sigma2 I)``.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    chain = WidelyLinearChain(iqi_tx, iqi_rx)
    h = compose_effective_channel(scenario, ris, user)
    return RealChannel(chain.real_channel(h), chain.noise_covariance(sigma2))


def real_channels(scenario: ComplexScenario, ris: StarRisState, iqi: IqiSetup,
                  sigma2: float) -> list:
    return [real_decompose(scenario, ris, u, iqi.bs, iqi.users[u], sigma2)
            for u in range(scenario.n_users)]


def complex_to_real_cov(q: np.ndarray) -> np.ndarray:
    """Covariance of ``[Re x; Im x]`` for a proper vector with ``E[x x^H] = q``."""
    return 0.5 * np.block([[np.real(q), -np.imag(q)], [np.imag(q), np.real(q)]])

