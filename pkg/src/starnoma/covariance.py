"""Covariance step: maximize the minimum weighted covariance minorant."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .conic import ConicFailure, CovarianceProgram
from .rates import SIGNALING, RealCovarianceSet
from .solver import SolverSettings, maximize_min
from .surrogates import CovSurrogates, ExpansionPoint

log = logging.getLogger(__name__)


def proper_part(p: np.ndarray) -> np.ndarray:
    """Orthogonal projection of symmetric matrices onto ``[[A, B], [-B, A]]``."""
    n = p.shape[-1] // 2
    a = 0.5 * (p[..., :n, :n] + p[..., n:, n:])
    b = 0.5 * (p[..., :n, n:] - p[..., n:, :n])
    return np.concatenate([np.concatenate([a, b], -1), np.concatenate([-b, a], -1)], -2)


def _capped_nonneg(w: np.ndarray, budget: float) -> np.ndarray:
    """Euclidean projection of a vector onto ``{x >= 0, sum(x) <= budget}``."""
    x = np.maximum(w, 0.0)
    if x.sum() <= budget:
        return x
    s = np.sort(w)[::-1]
    css = np.cumsum(s) - budget
    idx = np.arange(1, len(s) + 1)
    rho = np.nonzero(s - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(w - tau, 0.0)


def project_stack(p: np.ndarray, budget: float, proper: bool = False) -> np.ndarray:
    p = 0.5 * (p + np.swapaxes(p, -1, -2))
    if proper:
        p = proper_part(p)
    w, v = np.linalg.eigh(p)
    w = _capped_nonneg(w.ravel(), budget).reshape(w.shape)
    out = np.einsum("kab,kb,kcb->kac", v, w, v)
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    if proper:
        out = proper_part(out)
    return out


def project_feasible(covs: RealCovarianceSet, signaling: str = "IGS") -> RealCovarianceSet:
    """Nearest feasible covariance set in Frobenius norm.

    The feasible set is ``{P_k PSD, sum_k Tr P_k <= budget}``, intersected
    with the proper-structure subspace under PGS.
    """
    if signaling not in SIGNALING:
        raise ValueError(f"signaling must be one of {SIGNALING}")
    return RealCovarianceSet(project_stack(covs.p, covs.power_budget, signaling == "PGS"),
                             covs.power_budget)


@dataclass
class CovStepResult:
    covs: RealCovarianceSet
    surrogate_value: float
    start_value: float
    iterations: int
    converged: bool
    duals: Optional[np.ndarray] = None


def solve_covariance_step(ep: ExpansionPoint, signaling: str = "IGS",
                          settings: SolverSettings = None) -> CovStepResult:
    """One MM update of all covariances for the surface fixed at ``ep.ris``.

    Access mode (NOMA or TIN) and weights are those of the expansion point.
    """
    budget = ep.covs.power_budget
    if budget <= 0:
        raise ValueError("power budget must be positive")
    if signaling not in SIGNALING:
        raise ValueError(f"signaling must be one of {SIGNALING}")
    settings = settings or SolverSettings()
    sur = CovSurrogates(ep)
    proper = signaling == "PGS"
    if settings.backend == "conic":
        ev = ep.evaluator
        try:
            prog = CovarianceProgram.get(ev.h.shape[1], ev.h.shape[2], ev.imask, ev.tmask, proper)
            p = project_stack(prog.solve(sur, budget), budget, proper)
            start = float(np.min(sur.weighted_values(ep.covs.p)))
            value = float(np.min(sur.weighted_values(p)))
            return CovStepResult(RealCovarianceSet(p, budget), value, start, 1, True,
                                 prog.duals())
        except ConicFailure as exc:
            log.warning("conic covariance solve failed (%s); using projected gradient", exc)
    res = maximize_min(sur.weighted_values, sur.weighted_grad_combo,
                       lambda p: project_stack(p, budget, proper),
                       ep.covs.p, scale=budget, settings=settings)
    if not res.converged:
        log.warning("covariance step stopped at the iteration cap (%d)", res.iterations)
    return CovStepResult(RealCovarianceSet(res.x, budget), res.value, res.start_value,
                         res.iterations, res.converged)
