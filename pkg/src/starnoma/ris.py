"""Surface step: MM update of the reflection/transmission coefficients.

The convexified problem is solved over per-element convex sets:

* ``T_U``: ``|r|^2 + |t|^2 <= 1``;
* ``T_I``: additionally the linearized floor ``|r|^2 + |t|^2 >= 1 - eps``;
* ``T_N``: additionally ``|r +- t|^2 <= 1``.

Solutions on ``T_I``/``T_N`` are rescaled to unit energy and accepted only
when the true minimum weighted rate does not drop.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .channel import REFLECT, SET_KINDS, ComplexScenario, StarRisState
from .conic import ConicFailure, SurfaceProgram
from .solver import SolveResult, SolverSettings, maximize_min
from .surrogates import ExpansionPoint, RisSurrogates, pack_ris, unpack_ris

log = logging.getLogger(__name__)

_HALF = 1 / np.sqrt(2.0)


@dataclass
class RisStepConfig:
    set_kind: str = "T_U"
    mode: str = "ES"
    epsilon: float = 1e-2
    settings: SolverSettings = field(default_factory=SolverSettings)
    phase_projection: bool = True

    def __post_init__(self):
        if self.set_kind not in SET_KINDS:
            raise ValueError(f"set_kind must be one of {SET_KINDS}")
        if not 0 < self.epsilon <= 0.1:
            raise ValueError("epsilon must lie in (0, 0.1]")
        if self.settings.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass(frozen=True)
class ModulusFloor:
    """Affine under-estimator of ``|r_i|^2 + |t_i|^2`` around a previous point.

    The constraint reads ``<normal_i, z_i> >= offset_i`` with ``z_i`` the
    stacked (Re r, Im r, Re t, Im t) of element ``i``.
    """
    normal: np.ndarray   # (N, 4)
    offset: np.ndarray   # (N,)
    epsilon: float

    def affine_value(self, z: np.ndarray) -> np.ndarray:
        """``|r0|^2 + 2 Re(r0 (r - r0)*) + (same for t)`` per element."""
        y = _elements(z)
        c = self.normal
        return 2 * np.sum(c * y, axis=1) - np.sum(c * c, axis=1)

    def satisfied(self, z: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        return self.affine_value(z) >= 1 - self.epsilon - tol


def _elements(z: np.ndarray) -> np.ndarray:
    """``(2, N, 2)`` packing -> per-element 4-vectors ``(N, 4)``."""
    return np.concatenate([z[0], z[1]], axis=1)


def _from_elements(y: np.ndarray) -> np.ndarray:
    return np.stack([y[:, :2], y[:, 2:]])


def linearize_modulus_floor(theta_prev: StarRisState, epsilon: float) -> ModulusFloor:
    c = _elements(pack_ris(theta_prev))
    if not np.all(np.isfinite(c)):
        raise ValueError("previous coefficients must be finite")
    offset = 0.5 * (1 - epsilon + np.sum(c * c, axis=1))
    return ModulusFloor(c, offset, epsilon)


def _ball(y: np.ndarray, radius: float = 1.0) -> np.ndarray:
    n = np.linalg.norm(y, axis=-1, keepdims=True)
    return y * np.minimum(1.0, radius / np.maximum(n, 1e-300))


def project_ball_halfspace(y: np.ndarray, a: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Row-wise projection onto ``{|y| <= 1, <a, y> >= beta}`` (closed form)."""
    an = np.linalg.norm(a, axis=1)
    ok = an > 1e-12
    u = np.where(ok[:, None], a / np.where(ok, an, 1.0)[:, None], 0.0)
    b = np.where(ok, np.minimum(beta / np.where(ok, an, 1.0), 1.0), -np.inf)
    out = _ball(y)
    uy = np.sum(u * y, axis=1)
    need = ok & (np.sum(u * out, axis=1) < b)
    if not np.any(need):
        return out
    y2 = y + np.maximum(b - uy, 0.0)[:, None] * u
    inside = np.linalg.norm(y2, axis=1) <= 1.0
    use2 = need & inside
    out[use2] = y2[use2]
    circ = need & ~inside
    if np.any(circ):
        yp = y[circ] - uy[circ, None] * u[circ]
        pn = np.linalg.norm(yp, axis=1)
        # degenerate: pick any direction orthogonal to u
        if np.any(pn < 1e-15):
            for i in np.nonzero(pn < 1e-15)[0]:
                e = np.eye(4)[np.argmin(np.abs(u[circ][i]))]
                e = e - np.dot(e, u[circ][i]) * u[circ][i]
                yp[i] = e
            pn = np.linalg.norm(yp, axis=1)
        r = np.sqrt(np.maximum(1 - b[circ] ** 2, 0.0))
        out[circ] = b[circ, None] * u[circ] + r[:, None] * yp / pn[:, None]
    return out


def _to_sum_diff(y):
    # (r, t) -> ((r + t)/sqrt2, (r - t)/sqrt2), an orthogonal map on R^4
    r, t = y[:, :2], y[:, 2:]
    return np.concatenate([(r + t) * _HALF, (r - t) * _HALF], axis=1)


_from_sum_diff = _to_sum_diff  # the map is an involution


def _project_disks(w: np.ndarray) -> np.ndarray:
    return np.concatenate([_ball(w[:, :2], _HALF), _ball(w[:, 2:], _HALF)], axis=1)


def _disk_support(w, a):
    """``<a, P(w)>`` and its derivative along ``a`` for the two-disk projection."""
    val = np.zeros(len(w))
    der = np.zeros(len(w))
    for sl in (slice(0, 2), slice(2, 4)):
        y, u = w[:, sl], a[:, sl]
        n = np.linalg.norm(y, axis=1)
        uu = np.sum(u * u, axis=1)
        uy = np.sum(u * y, axis=1)
        out = n > _HALF
        ns = np.where(out, n, 1.0)
        val += np.where(out, _HALF * uy / ns, uy)
        der += np.where(out, _HALF * (uu - uy ** 2 / ns ** 2) / ns, uu)
    return val, der


def project_coupled(y: np.ndarray, a: Optional[np.ndarray] = None,
                    beta: Optional[np.ndarray] = None, iters: int = 60) -> np.ndarray:
    """Row-wise projection onto ``{|r + t|^2 <= 1, |r - t|^2 <= 1}`` with an optional halfspace.

    In sum/difference coordinates the two constraints are two disks of
    radius ``1/sqrt2``.  With the halfspace ``<a, x> >= beta`` the solution
    is the disk projection of ``w + lam a`` for the smallest ``lam >= 0``
    meeting the halfspace; ``lam`` is found by safeguarded Newton steps on
    the nondecreasing map ``lam -> <a, P(w + lam a)>``.
    """
    w = _to_sum_diff(y)
    p0 = _project_disks(w)
    if a is None:
        return _from_sum_diff(p0)
    aw = _to_sum_diff(a)
    short = np.sum(aw * p0, axis=1) < beta
    if not np.any(short):
        return _from_sum_diff(p0)
    ws, As, bs = w[short], aw[short], beta[short]
    lo = np.zeros(len(ws))
    hi = np.ones(len(ws))
    for _ in range(60):
        g, _ = _disk_support(ws + hi[:, None] * As, As)
        bad = g < bs
        if not np.any(bad):
            break
        lo[bad] = hi[bad]
        hi[bad] *= 4.0
    lam = hi.copy()
    for _ in range(iters):
        g, dg = _disk_support(ws + lam[:, None] * As, As)
        ok = g >= bs
        hi = np.where(ok, lam, hi)
        lo = np.where(ok, lo, lam)
        if np.all(ok & (g - bs <= 1e-13 * np.maximum(1.0, np.abs(bs)))) or np.all(hi - lo <= 1e-15 * hi):
            break
        newton = lam - (g - bs) / np.where(dg > 0, dg, 1.0)
        inside = (dg > 0) & (newton > lo) & (newton < hi)
        lam = np.where(inside, newton, 0.5 * (lo + hi))
    p0[short] = _project_disks(ws + hi[:, None] * As)
    return _from_sum_diff(p0)


def free_mask(ris: StarRisState) -> np.ndarray:
    """``(2, N, 2)`` array with 1 on coordinates the solver may move."""
    m = np.ones((2, ris.n_ris, 2))
    if ris.mode == "MS":
        m[1, ris.ms_assignment] = 0.0
        m[0, ~ris.ms_assignment] = 0.0
    return m


def make_projector(ris: StarRisState, set_kind: str,
                   floor: Optional[ModulusFloor] = None) -> Callable:
    mask = free_mask(ris)
    coupled = set_kind == "T_N" and ris.mode == "ES"
    if set_kind != "T_U" and floor is None:
        raise ValueError(f"{set_kind} needs the linearized modulus floor")
    a = None if floor is None else floor.normal * _elements(mask)

    def project(z):
        y = _elements(z * mask)
        if set_kind == "T_U":
            y = _ball(y)
        elif coupled:
            y = project_coupled(y, a, floor.offset)
        else:
            y = project_ball_halfspace(y, a, floor.offset)
        return _from_elements(y) * mask

    return project


def normalize_unit_sum(theta: StarRisState, previous: Optional[StarRisState] = None):
    """Scale each element to unit total energy.

    Elements with both coefficients zero fall back to ``previous`` (or stay
    zero) and are flagged.  Returns ``(state, flagged)``.
    """
    e = np.sqrt(theta.energy())
    flagged = e == 0
    scale = np.where(flagged, 1.0, 1.0 / np.where(flagged, 1.0, e))
    r = theta.theta_r * scale
    t = theta.theta_t * scale
    if np.any(flagged) and previous is not None:
        r[flagged] = previous.theta_r[flagged]
        t[flagged] = previous.theta_t[flagged]
    return theta.with_coefficients(r, t), flagged


def project_phase_quadrature(theta: StarRisState) -> StarRisState:
    """Rotate each transmission coefficient to the nearer of ``angle(r) +- pi/2``.

    Moduli are kept, so unit energy is preserved, and ``|r +- t|^2 =
    |r|^2 + |t|^2`` afterwards.
    """
    r, t = theta.theta_r, theta.theta_t
    active = (r != 0) & (t != 0)
    if not np.any(active):
        return theta
    ang_r = np.angle(r)
    cands = np.stack([ang_r + np.pi / 2, ang_r - np.pi / 2])
    dist = np.abs(np.angle(np.exp(1j * (cands - np.angle(t)))))
    best = cands[np.argmin(dist, axis=0), np.arange(len(r))]
    t_new = np.where(active, np.abs(t) * np.exp(1j * best), t)
    return theta.with_coefficients(r, t_new)


def accept_if_improved(candidate: StarRisState, incumbent: StarRisState,
                       full_rate_evaluator: Callable, weights=None):
    """Keep the candidate only if its true minimum weighted rate is not lower.

    Exact ties keep the incumbent.  Returns ``(state, accepted, objective)``.
    """
    rc = np.asarray(full_rate_evaluator(candidate))
    ri = np.asarray(full_rate_evaluator(incumbent))
    w = np.ones_like(rc) if weights is None else np.asarray(weights, dtype=float)
    fc, fi = float(np.min(w * rc)), float(np.min(w * ri))
    if fc > fi:
        return candidate, True, fc
    return incumbent, False, fi


def ms_partition(scenario: ComplexScenario, strategy: str = "alternating") -> np.ndarray:
    """Per-element assignment for mode switching; True means the element reflects."""
    n = scenario.n_ris
    if n < 2:
        raise ValueError("mode switching needs at least two elements")
    if strategy == "alternating":
        return np.arange(n) % 2 == 0
    if strategy == "greedy_gain":
        col = np.sum(np.abs(scenario.ris_to_user) ** 2, axis=1)   # (users, N)
        row = np.sum(np.abs(scenario.bs_to_ris) ** 2, axis=1)     # (N,)
        gain = col * row
        refl = np.array([s == REFLECT for s in scenario.side])
        return gain[refl].sum(0) >= gain[~refl].sum(0)
    if strategy == "reflect_only":
        return np.ones(n, dtype=bool)
    raise ValueError(f"unknown partition strategy {strategy!r}")


@dataclass
class RisStepResult:
    state: StarRisState
    accepted: bool
    objective: float
    candidate: StarRisState
    surrogate_value: float
    iterations: int
    converged: bool
    flagged: np.ndarray


def finish_candidate(cand: StarRisState, ris: StarRisState, cfg: RisStepConfig):
    """Rescale to unit energy (``T_I``/``T_N``) and snap ES ``T_N`` phases to quadrature."""
    flagged = np.zeros(ris.n_ris, dtype=bool)
    if cfg.set_kind != "T_U":
        cand, flagged = normalize_unit_sum(cand, ris)
        if cfg.set_kind == "T_N" and ris.mode == "ES" and cfg.phase_projection:
            cand = project_phase_quadrature(cand)
    return cand, flagged


def weighted_surface_target(ep: ExpansionPoint, cfg: RisStepConfig, lam: np.ndarray,
                            iterations: int = 1) -> StarRisState:
    """Ascend ``sum_b lam_b`` times the branch rates over the surface by MM.

    Each iteration maximizes the weighted minorants over the convexified set
    and re-expands there.  With ``lam`` the covariance-step multipliers this
    follows the sensitivity of the covariance optimum to the surface, so
    users that are expensive in power are favoured.  The point is returned
    before any rescaling.
    """
    lam = np.asarray(lam, dtype=float)
    for _ in range(iterations):
        ris = replace(ep.ris, set_kind=cfg.set_kind)
        floor = None if cfg.set_kind == "T_U" else linearize_modulus_floor(ris, cfg.epsilon)
        project = make_projector(ris, cfg.set_kind, floor)
        mask = free_mask(ris)
        sur = RisSurrogates(ep)
        z = None
        if cfg.settings.backend == "conic":
            coupled = cfg.set_kind == "T_N" and ris.mode == "ES"
            side = tuple(int(ep.model.side[r]) for r in ep.evaluator.rx)
            try:
                prog = SurfaceProgram.get(ris.n_ris,
                                          ep.model.basis.shape[3] * ep.model.basis.shape[4],
                                          side, coupled, floor is not None, weighted_sum=True)
                z = project(prog.solve(sur, mask, floor, lam))
            except ConicFailure as exc:
                log.warning("conic weighted surface solve failed (%s); using projected gradient",
                            exc)
        if z is None:
            z = maximize_min(lambda x: np.array([lam @ sur.values(x)]),
                             lambda x, c: c[0] * sur.grad_combo(x, lam) * mask,
                             project, ep.z, scale=1.0, settings=cfg.settings).x
        r, t = unpack_ris(z * mask)
        ep = ExpansionPoint(ep.covs, ris.with_coefficients(r, t), ep.model, ep.weights,
                            ep.access)
    return ep.ris


def solve_ris_step(ep: ExpansionPoint, cfg: RisStepConfig) -> RisStepResult:
    """Solve the convexified surface problem at ``ep``, normalize and guard.

    Mode and MS assignment are taken from ``ep.ris``; ``cfg.mode`` must
    agree with it.
    """
    ris = ep.ris
    if ris.mode != cfg.mode:
        raise ValueError(f"expansion point is in {ris.mode} mode, config says {cfg.mode}")
    ris = replace(ris, set_kind=cfg.set_kind)
    if not ris.is_feasible(1e-7):
        raise ValueError(
            f"starting point infeasible for {cfg.set_kind}: {ris.feasibility_violations(1e-7)}")
    floor = None if cfg.set_kind == "T_U" else linearize_modulus_floor(ris, cfg.epsilon)
    project = make_projector(ris, cfg.set_kind, floor)
    mask = free_mask(ris)
    sur = RisSurrogates(ep)
    res = None
    if cfg.settings.backend == "conic":
        coupled = cfg.set_kind == "T_N" and ris.mode == "ES"
        side = tuple(int(ep.model.side[r]) for r in ep.evaluator.rx)
        try:
            prog = SurfaceProgram.get(ris.n_ris, ep.model.basis.shape[3] * ep.model.basis.shape[4],
                                      side, coupled, floor is not None)
            z = project(prog.solve(sur, mask, floor))
            res = SolveResult(z, float(np.min(sur.weighted_values(z))),
                              float(np.min(sur.weighted_values(ep.z))), 1, True)
        except ConicFailure as exc:
            log.warning("conic surface solve failed (%s); using projected gradient", exc)
    if res is None:
        res = maximize_min(sur.weighted_values,
                           lambda z, c: sur.weighted_grad_combo(z, c) * mask,
                           project, ep.z, scale=1.0, settings=cfg.settings)
    r, t = unpack_ris(res.x * mask)
    cand, flagged = finish_candidate(ris.with_coefficients(r, t), ris, cfg)
    if not cand.is_feasible(1e-9):
        log.warning("surface candidate infeasible (%s); keeping incumbent",
                    cand.feasibility_violations(1e-9))
        state, accepted, obj = ris, False, ep.objective
    else:
        state, accepted, obj = accept_if_improved(
            cand, ris, lambda s: ep.user_rates_at_ris(pack_ris(s)), ep.weights)
    if not res.converged:
        log.warning("surface step stopped at the iteration cap (%d)", res.iterations)
    return RisStepResult(state, accepted, obj, cand, res.value, res.iterations,
                         res.converged, flagged)
