"""Projected gradient ascent on a log-sum-exp soft minimum.

Both convexified subproblems have the epigraph form
``max_x min_b f_b(x)`` over a convex set with concave ``f_b``.  The soft
minimum ``-mu log sum exp(-f_b / mu)`` is smooth and concave, and lies
within ``mu log B`` of the hard minimum; ``mu`` is annealed over rounds.
The best iterate by *hard* minimum is returned, so the result never falls
below the starting point.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

BACKENDS = ("conic", "gradient")

@dataclass
class SolverSettings:
    max_iter: int = 2000
    tol: float = 1e-6
    patience: int = 20
    mu_schedule: tuple = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
    armijo: float = 1e-4
    min_step: float = 1e-8
    backend: str = "conic"   # "conic" (exact, cvxpy) or "gradient" (this module)

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")

    @classmethod
    def from_mapping(cls, values: dict, prefix: str = "") -> "SolverSettings":
        s = cls()
        for name in ("max_iter", "patience"):
            if prefix + name in values:
                setattr(s, name, int(values[prefix + name]))
        for name in ("tol", "armijo", "min_step"):
            if prefix + name in values:
                setattr(s, name, float(values[prefix + name]))
        if prefix + "backend" in values:
            s.backend = str(values[prefix + "backend"]).strip()
            s.__post_init__()
        if prefix + "mu_schedule" in values:
            s.mu_schedule = tuple(float(v) for v in str(values[prefix + "mu_schedule"]).split(","))
        return s


@dataclass
class SolveResult:
    x: np.ndarray
    value: float
    start_value: float
    iterations: int
    converged: bool


def soft_min(v: np.ndarray, mu: float):
    """Soft minimum of ``v`` and its softmax weights."""
    lo = v.min()
    e = np.exp(-(v - lo) / mu)
    s = e.sum()
    return lo - mu * np.log(s), e / s


def maximize_min(values: Callable, grad_combo: Callable, project: Callable, x0: np.ndarray,
                 scale: float, settings: SolverSettings = SolverSettings()) -> SolveResult:
    """Maximize ``min_b values(x)[b]`` over the set defined by ``project``.

    ``values(x)`` returns the weighted branch values ``(B,)``;
    ``grad_combo(x, c)`` returns ``sum_b c_b grad values_b(x)``.  Steps are taken along
    the normalized soft-min gradient scaled by ``scale``; the step length
    backtracks by halving from at most 1 (warm-started from the previous
    accepted length).
    """
    x = project(x0)
    v = values(x)
    best_x, best = x, float(v.min())
    start = float(values(x0).min()) if x0 is not x else best
    if best < start:
        best_x, best = x0, start
    it = 0
    step = 1.0
    converged = False
    for frac in settings.mu_schedule:
        mu = frac * max(abs(best), 1e-3)
        f, w = soft_min(v, mu)
        history = [f]
        while it < settings.max_iter:
            it += 1
            g = grad_combo(x, w)
            gn = np.linalg.norm(g)
            if gn == 0 or not np.isfinite(gn):
                converged = True
                break
            d = g * (scale / gn)
            step = min(1.0, 2 * step)
            while True:
                x_new = project(x + step * d)
                v_new = values(x_new)
                f_new, w_new = soft_min(v_new, mu)
                if f_new >= f + settings.armijo * np.sum(g * (x_new - x)):
                    break
                step *= 0.5
                if step < settings.min_step:
                    x_new = None
                    break
            if x_new is None:
                converged = True
                break
            x, v, f, w = x_new, v_new, f_new, w_new
            hard = float(v.min())
            if hard > best:
                best_x, best = x, hard
            history.append(f)
            if len(history) > settings.patience:
                if history[-1] - history[-1 - settings.patience] < settings.tol:
                    converged = True
                    break
        if it >= settings.max_iter:
            break
        # restart the next round from the best point found so far
        x, v = best_x, values(best_x)
    return SolveResult(best_x, best, start, it, converged)
