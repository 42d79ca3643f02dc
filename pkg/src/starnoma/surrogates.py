"""Concave minorants of the branch rates, in the covariances or the surface coefficients.

Covariance step: ``log det(D + S)`` is kept (concave) and ``log det(D)``
is replaced by its tangent plane at the expansion point.

Surface step: for ``r = 0.5 log2 det(I + D^{-1} H P H^T)`` the bound

    r >= r0 - Tr(S0 D0^-1)/(2 ln2) + Tr(A H)/ln2
            - Tr((D0^-1 - (D0 + S0)^-1)(D + S))/(2 ln2),   A = P H0^T D0^-1

is concave in the real channel ``H``, hence in the coefficients, and tight
at ``H0``.

Surface variables are packed as a real array ``z`` of shape ``(2, N, 2)``:
``z[0]`` holds (Re, Im) of the reflection coefficients, ``z[1]`` of the
transmission coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .channel import REFLECT, ComplexScenario, StarRisState
from .impairments import IqiSetup, RealChannel, WidelyLinearChain
from .rates import (LN2, BranchEvaluator, RateReport, RealCovarianceSet, evaluate_rates,
                    logdet_spd, rate_branches)


def pack_ris(ris: StarRisState) -> np.ndarray:
    th = np.stack([ris.theta_r, ris.theta_t])
    return np.stack([th.real, th.imag], axis=-1)


def unpack_ris(z: np.ndarray):
    th = z[..., 0] + 1j * z[..., 1]
    return th[0], th[1]


class ChannelModel:
    """Real-domain channels of all users as an affine function of ``z``."""

    def __init__(self, scenario: ComplexScenario, iqi: IqiSetup, sigma2: float):
        if sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        self.scenario = scenario
        n = scenario.n_users
        chains = [WidelyLinearChain(iqi.bs, iqi.users[u]) for u in range(n)]
        self.side = np.array([0 if s == REFLECT else 1 for s in scenario.side])
        self.base = np.array([chains[u].real_channel(scenario.direct[u]) for u in range(n)])
        self.c_noise = np.array([c.noise_covariance(sigma2) for c in chains])
        # outer products of RIS->user columns with BS->RIS rows, per element
        outer = np.einsum("uai,ib->uiab", scenario.ris_to_user, scenario.bs_to_ris)
        self.basis = np.stack(
            [np.array([chains[u].real_channel(outer[u]) for u in range(n)]),
             np.array([chains[u].real_channel(1j * outer[u]) for u in range(n)])],
            axis=2)  # (n_users, N, 2, m, nb)

    def h_real(self, z: np.ndarray) -> np.ndarray:
        zs = z[self.side].reshape(len(self.side), 1, -1)  # (n_users, 1, N*2)
        u, n, _, m, nb = self.basis.shape
        flat = zs @ self.basis.reshape(u, n * 2, m * nb)
        return self.base + flat.reshape(u, m, nb)

    def channels(self, z: np.ndarray) -> list:
        h = self.h_real(z)
        return [RealChannel(h[u], self.c_noise[u]) for u in range(len(h))]


@dataclass
class ExpansionPoint:
    """Snapshot of covariances and coefficients with the cached matrices around it."""
    covs: RealCovarianceSet
    ris: StarRisState
    model: ChannelModel
    weights: np.ndarray
    access: str = "NOMA"
    h: np.ndarray = field(init=False, repr=False)
    evaluator: BranchEvaluator = field(init=False, repr=False)
    d: np.ndarray = field(init=False, repr=False)
    total: np.ndarray = field(init=False, repr=False)
    branch_rates: np.ndarray = field(init=False, repr=False)
    rates: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.z = pack_ris(self.ris)
        self.h = self.model.h_real(self.z)
        self.evaluator = BranchEvaluator(self.h, self.model.c_noise,
                                         rate_branches(self.model.scenario.k_pairs, self.access))
        self.d, self.total = self.evaluator.d_and_total(self.covs.p)
        self.branch_rates = 0.5 * (logdet_spd(self.total) - logdet_spd(self.d)) / LN2
        self.rates = self.evaluator.user_rates(self.branch_rates)

    @classmethod
    def build(cls, scenario, ris, covs, iqi: IqiSetup, sigma2: float = 1.0, weights=None,
              access: str = "NOMA") -> "ExpansionPoint":
        w = np.ones(scenario.n_users) if weights is None else weights
        return cls(covs, ris, ChannelModel(scenario, iqi, sigma2), w, access)

    @property
    def branches(self):
        return self.evaluator.branches

    @property
    def objective(self) -> float:
        return float(np.min(self.weights * self.rates))

    def report(self) -> RateReport:
        return evaluate_rates(self.model.channels(self.z), self.covs, self.weights, self.access)

    # true rates away from the snapshot, used by tests and acceptance checks
    def branch_rates_at_cov(self, p: np.ndarray) -> np.ndarray:
        return self.evaluator.branch_rates(p)

    def branch_rates_at_ris(self, z: np.ndarray) -> np.ndarray:
        ev = BranchEvaluator(self.model.h_real(z), self.model.c_noise, self.branches)
        return ev.branch_rates(self.covs.p)

    def user_rates_at_ris(self, z: np.ndarray) -> np.ndarray:
        return self.evaluator.user_rates(self.branch_rates_at_ris(z))


def _sym_inv(m):
    out = np.linalg.inv(m)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


class CovSurrogates:
    """Covariance-step minorants of all branches, evaluated jointly.

    Branch ``b`` keeps ``0.5 log2 det(C_n + H Q_b H^T)`` over its full
    stream set and replaces ``-0.5 log2 det D_b`` by its tangent plane,
    ``L_b = H^T D0^{-1} H / (2 ln2)``.
    """

    def __init__(self, ep: ExpansionPoint):
        ev = ep.evaluator
        self.ev = ev
        self.lin = ev.ht_rx @ _sym_inv(ep.d) @ ev.h_rx / (2 * LN2)
        q0 = ev.mix(ev.imask, ep.covs.p)
        self.const = (-0.5 * logdet_spd(ep.d) / LN2
                      + np.sum(self.lin * q0, axis=(1, 2)))
        self.w = ep.weights[ev.owner]

    def _total(self, p):
        ev = self.ev
        return ev.cn_rx + ev.h_rx @ ev.mix(ev.tmask, p) @ ev.ht_rx

    def values(self, p: np.ndarray) -> np.ndarray:
        lin = np.sum(self.lin * self.ev.mix(self.ev.imask, p), axis=(1, 2))
        return 0.5 * logdet_spd(self._total(p)) / LN2 + self.const - lin

    def grad_combo(self, p: np.ndarray, c: np.ndarray) -> np.ndarray:
        """``sum_b c_b * grad s_b(P)``, shaped like ``P``."""
        ev = self.ev
        k = ev.ht_rx @ _sym_inv(self._total(p)) @ ev.h_rx / (2 * LN2)
        flat = ((ev.tmask * c[:, None]).T @ k.reshape(len(c), -1)
                - (ev.imask * c[:, None]).T @ self.lin.reshape(len(c), -1))
        return flat.reshape(p.shape)

    def grads(self, p: np.ndarray) -> np.ndarray:
        eye = np.eye(len(self.w))
        return np.array([self.grad_combo(p, e) for e in eye])

    def weighted_values(self, p):
        return self.w * self.values(p)

    def weighted_grad_combo(self, p, c):
        return self.grad_combo(p, self.w * c)


class RisSurrogates:
    """Surface-step minorants of all branches, evaluated jointly in ``z``."""

    def __init__(self, ep: ExpansionPoint):
        ev = ep.evaluator
        self.ev = ev
        self.model = ep.model
        p = ep.covs.p
        dinv = _sym_inv(ep.d)
        tinv = _sym_inv(ep.total)
        s0 = ep.total - ep.d
        self.wmat = dinv - tinv
        self.q = ev.mix(ev.tmask, p)
        # A_b^T = D0^-1 H0 P_signal, stored transposed to match H
        self.at = dinv @ ev.h_rx @ p[ev.sig]
        self.const = (ep.branch_rates
                      - np.sum(s0 * dinv, axis=(1, 2)) / (2 * LN2)
                      - np.sum(self.wmat * ev.cn_rx, axis=(1, 2)) / (2 * LN2))
        self.w = ep.weights[ev.owner]
        n_users = ep.h.shape[0]
        # route branch gradients to the receiving user's channel
        self.route = np.zeros((n_users, len(ev.rx)))
        self.route[ev.rx, np.arange(len(ev.rx))] = 1.0
        u, n, _, m, nb = self.model.basis.shape
        self.basis_flat = self.model.basis.reshape(u, n * 2, m * nb)

    def values(self, z: np.ndarray) -> np.ndarray:
        h = self.model.h_real(z)[self.ev.rx]
        lin = np.sum(self.at * h, axis=(1, 2))
        quad = np.sum((self.wmat @ h @ self.q) * h, axis=(1, 2))
        return self.const + lin / LN2 - quad / (2 * LN2)

    def grad_h(self, z: np.ndarray) -> np.ndarray:
        h = self.model.h_real(z)[self.ev.rx]
        return (self.at - self.wmat @ h @ self.q) / LN2

    def grad_combo(self, z: np.ndarray, c: np.ndarray) -> np.ndarray:
        gh = self.grad_h(z)
        gu = (self.route * c) @ gh.reshape(len(c), -1)          # (users, m*nb)
        gz = (self.basis_flat @ gu[:, :, None])[..., 0]         # (users, N*2)
        gz = gz.reshape(gz.shape[0], -1, 2)
        out = np.zeros_like(z)
        np.add.at(out, self.model.side, gz)
        return out

    def grads(self, z: np.ndarray) -> np.ndarray:
        eye = np.eye(len(self.w))
        return np.array([self.grad_combo(z, e) for e in eye])

    def weighted_values(self, z):
        return self.w * self.values(z)

    def weighted_grad_combo(self, z, c):
        return self.grad_combo(z, self.w * c)


@dataclass
class SurrogateRate:
    """Concave minorant of one user's rate: an evaluator and a (sub)gradient."""
    kind: str
    value: Callable
    gradient: Callable
    branch_indices: tuple = ()


def _user_surrogate(batch, ep: ExpansionPoint, user: int, kind: str) -> SurrogateRate:
    idx = tuple(i for i, b in enumerate(ep.branches) if b.owner == user)

    def value(x):
        return float(np.min(batch.values(x)[list(idx)]))

    def gradient(x):
        v = batch.values(x)[list(idx)]
        c = np.zeros(len(ep.branches))
        c[idx[int(np.argmin(v))]] = 1.0
        return batch.grad_combo(x, c)

    return SurrogateRate(kind, value, gradient, idx)


def _check_user(ep, user, want_ccu):
    k = ep.model.scenario.k_pairs
    if (user < k) != want_ccu or not 0 <= user < 2 * k:
        raise ValueError(f"user {user} is not a {'CCU' if want_ccu else 'CEU'}")


def surrogate_cov_ccu(ep: ExpansionPoint, user: int) -> SurrogateRate:
    _check_user(ep, user, True)
    return _user_surrogate(CovSurrogates(ep), ep, user, "ccu_cov")


def surrogate_cov_ceu(ep: ExpansionPoint, pair: int) -> SurrogateRate:
    """Minimum of the own-decoding and partner-decoding minorants of CEU ``pair + K``."""
    user = pair + ep.model.scenario.k_pairs
    _check_user(ep, user, False)
    return _user_surrogate(CovSurrogates(ep), ep, user, "ceu_cov")


def surrogate_ris_ccu(ep: ExpansionPoint, user: int) -> SurrogateRate:
    _check_user(ep, user, True)
    return _user_surrogate(RisSurrogates(ep), ep, user, "ccu_ris")


def surrogate_ris_ceu(ep: ExpansionPoint, pair: int) -> SurrogateRate:
    user = pair + ep.model.scenario.k_pairs
    _check_user(ep, user, False)
    return _user_surrogate(RisSurrogates(ep), ep, user, "ceu_ris")
