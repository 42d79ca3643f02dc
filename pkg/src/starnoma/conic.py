"""Exact solution of the convexified subproblems with a conic solver.

Both subproblems are written once per problem structure as parametrized
cvxpy programs (DPP), so repeated solves only refresh the numerical data.

Covariance step, branch ``b``::

    log det(C_n + M_b vec(Q_b)) / (2 ln2) + c_b - <L_b, Q'_b>  >=  t / w_b

with ``M_b = H_b kron H_b``, ``Q_b`` the sum of the covariances the branch
receives and ``Q'_b`` its interference part.

Surface step, branch ``b``::

    c_b + <a_b, z> - |G_b z + g_b|^2  >=  t / w_b

where ``z`` are the coefficients of the side the receiver sits on and the
quadratic is ``Tr(W H Q H^T) / (2 ln2)`` factored through square roots of
``W`` and ``Q``.
"""
from __future__ import annotations

import logging
import warnings
from typing import Optional

import cvxpy as cp
import numpy as np

from .rates import LN2

log = logging.getLogger(__name__)

_OK = (cp.OPTIMAL, cp.OPTIMAL_INACCURATE)
_cache: dict = {}


class ConicFailure(RuntimeError):
    pass


def _solve(prob: cp.Problem):
    try:
        with warnings.catch_warnings():
            # inaccurate solutions are accepted; the driver's acceptance test guards them
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(solver=cp.CLARABEL)
    except cp.error.SolverError as exc:
        raise ConicFailure(str(exc)) from exc
    if prob.status not in _OK:
        raise ConicFailure(f"solver status {prob.status}")
    if prob.status != cp.OPTIMAL:
        log.debug("conic solve returned %s", prob.status)


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """A factor ``F`` with ``F F^T = a`` for symmetric PSD ``a`` (negative eigenvalues clipped)."""
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    return v * np.sqrt(np.maximum(w, 0.0))


class CovarianceProgram:
    """Max-min of the covariance minorants over ``{P_j PSD, sum Tr P_j <= budget}``."""

    def __init__(self, m: int, k: int, imask: np.ndarray, tmask: np.ndarray, proper: bool):
        n_branch, n_users = imask.shape
        self.p = [cp.Variable((k, k), PSD=True) for _ in range(n_users)]
        self.t = cp.Variable()
        self.mk = [cp.Parameter((m * m, k * k)) for _ in range(n_branch)]
        self.lin = [cp.Parameter(k * k) for _ in range(n_branch)]
        self.cn = [cp.Parameter(m * m) for _ in range(n_branch)]
        self.const = cp.Parameter(n_branch)
        self.inv_w = cp.Parameter(n_branch, nonneg=True)
        self.budget = cp.Parameter(nonneg=True)
        cons = [sum(cp.trace(p) for p in self.p) <= self.budget]
        self.rate_cons = []
        for b in range(n_branch):
            q = sum(self.p[j] for j in range(n_users) if tmask[b, j])
            tot = cp.reshape(self.cn[b] + self.mk[b] @ cp.vec(q, order="F"), (m, m), order="F")
            val = cp.log_det(0.5 * (tot + tot.T)) / (2 * LN2) + self.const[b]
            if imask[b].any():
                qi = sum(self.p[j] for j in range(n_users) if imask[b, j])
                val = val - self.lin[b] @ cp.vec(qi, order="F")
            self.rate_cons.append(val >= self.inv_w[b] * self.t)
        cons += self.rate_cons
        if proper:
            h = k // 2
            for p in self.p:
                cons += [p[:h, :h] == p[h:, h:], p[:h, h:] == -p[h:, :h]]
        self.problem = cp.Problem(cp.Maximize(self.t), cons)

    @classmethod
    def get(cls, m, k, imask, tmask, proper) -> "CovarianceProgram":
        key = ("cov", m, k, imask.tobytes(), imask.shape, tmask.tobytes(), proper)
        if key not in _cache:
            _cache[key] = cls(m, k, imask, tmask, proper)
        return _cache[key]

    def solve(self, sur, budget: float) -> np.ndarray:
        ev = sur.ev
        for b in range(len(ev.rx)):
            h = ev.h_rx[b]
            self.mk[b].value = np.kron(h, h)
            self.lin[b].value = sur.lin[b].ravel(order="F")
            self.cn[b].value = ev.cn_rx[b].ravel(order="F")
        self.const.value = sur.const
        self.inv_w.value = 1.0 / sur.w
        self.budget.value = budget
        _solve(self.problem)
        return np.array([p.value for p in self.p])

    def duals(self) -> np.ndarray:
        """Multipliers of the branch constraints from the last solve."""
        return np.array([max(float(c.dual_value), 0.0) for c in self.rate_cons])


class SurfaceProgram:
    """Max-min of the surface minorants over the per-element coefficient sets.

    With ``weighted_sum`` the objective is ``sum_b lam_b val_b`` instead and
    ``lam`` has to be passed to :meth:`solve`.
    """

    def __init__(self, n_ris: int, mk: int, branch_side: tuple, coupled: bool, floor: bool,
                 weighted_sum: bool = False):
        n = n_ris
        self.z = [cp.Variable((n, 2)), cp.Variable((n, 2))]
        zv = [cp.vec(self.z[0], order="C"), cp.vec(self.z[1], order="C")]
        self.t = cp.Variable()
        nb = len(branch_side)
        self.g_mat = [cp.Parameter((mk, 2 * n)) for _ in range(nb)]
        self.g_vec = [cp.Parameter(mk) for _ in range(nb)]
        self.a = [cp.Parameter(2 * n) for _ in range(nb)]
        self.const = cp.Parameter(nb)
        self.inv_w = cp.Parameter(nb, nonneg=True)
        self.off = [cp.Parameter((n, 2), nonneg=True), cp.Parameter((n, 2), nonneg=True)]
        cons = [cp.multiply(self.off[0], self.z[0]) == 0,
                cp.multiply(self.off[1], self.z[1]) == 0]
        vals = []
        for b, s in enumerate(branch_side):
            val = (self.const[b] + self.a[b] @ zv[s]
                   - cp.sum_squares(self.g_mat[b] @ zv[s] + self.g_vec[b]))
            vals.append(val)
            if not weighted_sum:
                cons.append(val >= self.inv_w[b] * self.t)
        y = cp.hstack([self.z[0], self.z[1]])
        if coupled:
            cons += [cp.norm(self.z[0] + self.z[1], 2, axis=1) <= 1,
                     cp.norm(self.z[0] - self.z[1], 2, axis=1) <= 1]
        else:
            cons.append(cp.norm(y, 2, axis=1) <= 1)
        self.normal = self.offset = None
        if floor:
            self.normal = cp.Parameter((n, 4))
            self.offset = cp.Parameter(n)
            cons.append(cp.sum(cp.multiply(self.normal, y), axis=1) >= self.offset)
        # for the weighted sum the multipliers are folded into the branch data
        goal = sum(vals) if weighted_sum else self.t
        self.problem = cp.Problem(cp.Maximize(goal), cons)

    @classmethod
    def get(cls, n_ris, mk, branch_side, coupled, floor,
            weighted_sum: bool = False) -> "SurfaceProgram":
        key = ("ris", n_ris, mk, tuple(branch_side), coupled, floor, weighted_sum)
        if key not in _cache:
            _cache[key] = cls(n_ris, mk, tuple(branch_side), coupled, floor, weighted_sum)
        return _cache[key]

    def solve(self, sur, mask: np.ndarray, floor=None, lam=None) -> np.ndarray:
        ev, model = sur.ev, sur.model
        _, n, _, m, nb = model.basis.shape
        consts = np.empty(len(ev.rx))
        scale = np.ones(len(ev.rx)) if lam is None else np.asarray(lam, dtype=float)
        for b, r in enumerate(ev.rx):
            bm = model.basis[r].reshape(2 * n, m * nb).T
            base = model.base[r].ravel()
            # Tr(W H Q H^T) = |F_w^T H F_q|^2 and vec_row(F_w^T H F_q) = (F_w^T kron F_q^T) vec_row(H)
            kr = np.kron(psd_sqrt(sur.wmat[b]).T, psd_sqrt(sur.q[b]).T)
            kr *= np.sqrt(scale[b] / (2 * LN2))
            self.g_mat[b].value = kr @ bm
            self.g_vec[b].value = kr @ base
            at = sur.at[b].ravel() / LN2
            self.a[b].value = scale[b] * (bm.T @ at)
            consts[b] = scale[b] * (sur.const[b] + at @ base)
        self.const.value = consts
        self.inv_w.value = 1.0 / sur.w
        self.off[0].value = 1.0 - mask[0]
        self.off[1].value = 1.0 - mask[1]
        if self.normal is not None:
            self.normal.value = floor.normal
            self.offset.value = floor.offset
        _solve(self.problem)
        return np.stack([self.z[0].value, self.z[1].value])


def clear_cache() -> None:
    _cache.clear()
