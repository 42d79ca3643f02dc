"""NOMA achievable rates in the real (stacked) domain.

Every user rate is assembled from *branches*.  A branch is one decoding
event: receiver ``rx`` decodes stream ``signal`` while treating the streams
in ``interference`` as noise, and achieves
``0.5 * log2 det(I + D^{-1} S)`` with ``D = C_n + sum_{j in I} H P_j H^T`` and
``S = H P_signal H^T``.  A user's rate is the minimum over the branches it
owns: one branch for a CCU, two for a CEU under NOMA (own decoding and
decoding at its partner CCU before SIC).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

LN2 = np.log(2.0)
ACCESS_MODES = ("NOMA", "TIN")
SIGNALING = ("IGS", "PGS")


class SingularNoiseError(np.linalg.LinAlgError):
    pass


@dataclass
class RealCovarianceSet:
    """Real transmit covariances, one ``2N_BS x 2N_BS`` matrix per user."""
    p: np.ndarray
    power_budget: float

    @property
    def n_users(self) -> int:
        return self.p.shape[0]

    def total_power(self) -> float:
        return float(np.trace(self.p, axis1=1, axis2=2).sum())

    def is_feasible(self, tol: float = 1e-9, proper: bool = False) -> bool:
        sym = np.allclose(self.p, np.swapaxes(self.p, 1, 2), atol=tol)
        psd = np.all(np.linalg.eigvalsh(0.5 * (self.p + np.swapaxes(self.p, 1, 2))) >= -tol)
        ok = sym and psd and self.total_power() <= self.power_budget * (1 + tol) + tol
        if proper:
            ok = ok and is_proper_structure(self.p, tol)
        return bool(ok)

    @classmethod
    def white(cls, n_users: int, n_bs: int, budget: float) -> "RealCovarianceSet":
        """Uniform white allocation ``P / (2K * 2N_BS) * I`` (already proper)."""
        n = 2 * n_bs
        p = np.broadcast_to(np.eye(n) * budget / (n_users * n), (n_users, n, n)).copy()
        return cls(p, budget)


def is_proper_structure(p: np.ndarray, tol: float = 1e-9) -> bool:
    """True when every matrix has the form ``[[A, B], [-B, A]]``, A symmetric, B skew."""
    n = p.shape[-1] // 2
    a, b = p[..., :n, :n], p[..., :n, n:]
    return bool(np.allclose(p[..., n:, n:], a, atol=tol)
                and np.allclose(p[..., n:, :n], -b, atol=tol)
                and np.allclose(a, np.swapaxes(a, -1, -2), atol=tol)
                and np.allclose(b, -np.swapaxes(b, -1, -2), atol=tol))


@dataclass(frozen=True)
class RateBranch:
    owner: int
    rx: int
    signal: int
    interference: tuple
    label: str = "own"


def rate_branches(k_pairs: int, access: str = "NOMA") -> list:
    """Decoding branches for ``2K`` users under NOMA (SIC) or TIN."""
    if access not in ACCESS_MODES:
        raise ValueError(f"access must be one of {ACCESS_MODES}")
    n = 2 * k_pairs
    out = []
    for k in range(k_pairs):
        kb = k + k_pairs
        if access == "NOMA":
            out.append(RateBranch(k, k, k, tuple(j for j in range(n) if j not in (k, kb))))
        else:
            out.append(RateBranch(k, k, k, tuple(j for j in range(n) if j != k)))
    for k in range(k_pairs):
        kb = k + k_pairs
        others = tuple(j for j in range(n) if j != kb)
        out.append(RateBranch(kb, kb, kb, others))
        if access == "NOMA":
            out.append(RateBranch(kb, k, kb, others, "partner"))
    return out


def logdet_spd(m: np.ndarray) -> np.ndarray:
    """Natural log-determinant of (batched) symmetric positive-definite matrices."""
    try:
        c = np.linalg.cholesky(m)
        return 2.0 * np.log(np.diagonal(c, axis1=-2, axis2=-1)).sum(-1)
    except np.linalg.LinAlgError:
        sign, ld = np.linalg.slogdet(m)
        if np.any(sign <= 0):
            raise SingularNoiseError("matrix is not positive definite")
        return ld


def _regularized(d: np.ndarray) -> np.ndarray:
    if np.linalg.cond(d) > 1e12:
        return d + 1e-10 * np.eye(d.shape[0])
    return d


def _half_log2_ratio(d: np.ndarray, s: np.ndarray) -> float:
    d = _regularized(0.5 * (d + d.T))
    s = 0.5 * (s + s.T)
    try:
        np.linalg.cholesky(d)
    except np.linalg.LinAlgError:
        raise SingularNoiseError("interference-plus-noise matrix is singular") from None
    return float(max(0.5 * (logdet_spd(d + s) - logdet_spd(d)) / LN2, 0.0))


def interference_matrices(channels: Sequence, covs: RealCovarianceSet, user: int,
                          role: str, sic: bool = True):
    """Interference-plus-noise and signal matrices for one decoding role.

    ``role='ccu'`` (CCU index) -> ``(D_k, S_k)``;
    ``role='ceu'`` (CEU index) -> ``(D_kb, S_kb)``;
    ``role='ceu_at_ccu'`` (CEU index) -> ``(D_k, S_k, S_k->kb)`` at the paired CCU.
    With ``sic=False`` the CCU treats its partner's stream as noise.
    """
    n = len(channels)
    k_pairs = n // 2
    is_ccu = user < k_pairs
    if role == "ccu" and not is_ccu or role in ("ceu", "ceu_at_ccu") and is_ccu:
        raise ValueError(f"role {role!r} does not match user {user}")
    if role not in ("ccu", "ceu", "ceu_at_ccu"):
        raise ValueError(f"unknown role {role!r}")

    def recv(rx, j):
        h = channels[rx].h_real
        return h @ covs.p[j] @ h.T

    if role == "ceu":
        d = channels[user].c_noise + sum(recv(user, j) for j in range(n) if j != user)
        return d, recv(user, user)
    k = user if role == "ccu" else user - k_pairs
    kb = k + k_pairs
    skip = (k, kb) if sic else (k,)
    d = channels[k].c_noise + sum(recv(k, j) for j in range(n) if j not in skip)
    if role == "ccu":
        return d, recv(k, k)
    return d, recv(k, k), recv(k, kb)


def rate_ccu(d: np.ndarray, s: np.ndarray) -> float:
    """``0.5 log2 det(I + D^{-1} S)`` via the ratio ``det(D + S) / det(D)``."""
    return _half_log2_ratio(d, s)


def rate_ceu(d_own, s_own, d_partner, s_partner_own, s_cross):
    """CEU rate: the smaller of own decoding and decoding at the partner CCU.

    Returns ``(rate, part_own, part_partner)``.
    """
    own = _half_log2_ratio(d_own, s_own)
    partner = _half_log2_ratio(d_partner + s_partner_own, s_cross)
    return min(own, partner), own, partner


def weighted_min_rate(report: "RateReport", weights) -> float:
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    return float(np.min(w * report.rates))


@dataclass
class RateReport:
    rates: np.ndarray
    ceu_parts: np.ndarray           # (K, 2): own decoding, decoding at partner
    weighted_min: float
    weights: np.ndarray
    access: str = "NOMA"
    d_matrices: Optional[np.ndarray] = field(default=None, repr=False)
    s_matrices: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def k_pairs(self) -> int:
        return self.rates.shape[0] // 2

    def binding_branch(self, user: int) -> str:
        if user < self.k_pairs or self.access == "TIN":
            return ""
        own, partner = self.ceu_parts[user - self.k_pairs]
        return "own" if own <= partner else "partner"

    def csv_rows(self) -> list:
        rows = []
        for u, r in enumerate(self.rates):
            role = "ccu" if u < self.k_pairs else "ceu"
            rows.append({"user": u, "role": role, "rate": float(r),
                         "binding": self.binding_branch(u)})
        return rows

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["user", "role", "rate", "binding"])
            w.writeheader()
            w.writerows(self.csv_rows())


class BranchEvaluator:
    """Batched evaluation of all branch rates for fixed real channels.

    For branch ``b`` the interference-plus-noise matrix is
    ``C_n + H Q_b H^T`` with ``Q_b = sum_{j in I_b} P_j``; adding the signal
    stream gives the total received covariance.
    """

    def __init__(self, h: np.ndarray, c_noise: np.ndarray, branches: Sequence[RateBranch]):
        self.h = h
        self.c_noise = c_noise
        self.branches = list(branches)
        n = h.shape[0]
        nb = len(self.branches)
        self.rx = np.array([b.rx for b in self.branches], dtype=int)
        self.sig = np.array([b.signal for b in self.branches], dtype=int)
        self.owner = np.array([b.owner for b in self.branches], dtype=int)
        self.imask = np.zeros((nb, n))
        for i, b in enumerate(self.branches):
            self.imask[i, list(b.interference)] = 1.0
        self.tmask = self.imask.copy()
        self.tmask[np.arange(nb), self.sig] = 1.0
        self.h_rx = h[self.rx]
        self.ht_rx = np.swapaxes(self.h_rx, 1, 2)
        self.cn_rx = c_noise[self.rx]

    @staticmethod
    def mix(mask: np.ndarray, p: np.ndarray) -> np.ndarray:
        """``sum_j mask[b, j] P_j`` for every branch."""
        return (mask @ p.reshape(p.shape[0], -1)).reshape((mask.shape[0],) + p.shape[1:])

    def received(self, p: np.ndarray) -> np.ndarray:
        """``H_r P_j H_r^T`` for every receiver ``r`` and stream ``j``: ``(n, n, m, m)``."""
        h = self.h[:, None]
        return h @ p[None] @ np.swapaxes(h, -1, -2)

    def d_and_total(self, p: np.ndarray):
        d = self.cn_rx + self.h_rx @ self.mix(self.imask, p) @ self.ht_rx
        t = self.cn_rx + self.h_rx @ self.mix(self.tmask, p) @ self.ht_rx
        return d, t

    def branch_rates(self, p: np.ndarray) -> np.ndarray:
        d, t = self.d_and_total(p)
        return np.maximum(0.5 * (logdet_spd(t) - logdet_spd(d)) / LN2, 0.0)

    def user_rates(self, branch_values: np.ndarray) -> np.ndarray:
        n = self.h.shape[0]
        out = np.full(n, np.inf)
        np.minimum.at(out, self.owner, branch_values)
        return out


def stack_channels(channels: Sequence):
    return (np.array([c.h_real for c in channels]), np.array([c.c_noise for c in channels]))


def evaluate_rates(channels: Sequence, covs: RealCovarianceSet, weights=None,
                   access: str = "NOMA") -> RateReport:
    """True rates of every user for the given real channels and covariances."""
    n = len(channels)
    k_pairs = n // 2
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    h, cn = stack_channels(channels)
    ev = BranchEvaluator(h, cn, rate_branches(k_pairs, access))
    d, t = ev.d_and_total(covs.p)
    vals = np.maximum(0.5 * (logdet_spd(t) - logdet_spd(d)) / LN2, 0.0)
    rates = ev.user_rates(vals)
    parts = np.full((k_pairs, 2), np.nan)
    own_idx = [i for i, b in enumerate(ev.branches) if b.owner == b.rx]
    for i, b in enumerate(ev.branches):
        if b.owner >= k_pairs:
            parts[b.owner - k_pairs, 0 if b.label == "own" else 1] = vals[i]
    return RateReport(
        rates=rates, ceu_parts=parts, weighted_min=float(np.min(w * rates)), weights=w,
        access=access, d_matrices=d[own_idx],
        s_matrices=(t - d)[own_idx])
