"""Fast numerical self-checks run by ``starnoma selftest``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ao import AoConfig, initial_covariances, initial_ris
from .channel import ScenarioConfig, compose_effective_channel, generate_scenario
from .covariance import project_stack
from .impairments import IqiSetup, complex_to_real_cov, gamma_matrices, real_channels
from .rates import LN2, RealCovarianceSet, evaluate_rates
from .ris import make_projector
from .surrogates import ChannelModel, CovSurrogates, ExpansionPoint, RisSurrogates


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _random_proper_covs(rng, n_users, n_bs, budget):
    q = []
    for _ in range(n_users):
        g = rng.standard_normal((n_bs, n_bs)) + 1j * rng.standard_normal((n_bs, n_bs))
        q.append(g @ g.conj().T)
    q = np.array(q)
    q *= budget / np.real(np.trace(q, axis1=1, axis2=2)).sum()
    return q


def complex_rates(scenario, ris, q, sigma2=1.0):
    """Per-user NOMA rates computed directly with complex matrices (proper signals, ideal hardware)."""
    k = scenario.k_pairs
    n = scenario.n_users
    h = [compose_effective_channel(scenario, ris, u) for u in range(n)]

    def rate(rx, sig, interf):
        d = sigma2 * np.eye(scenario.n_u) + sum(h[rx] @ q[j] @ h[rx].conj().T for j in interf)
        s = h[rx] @ q[sig] @ h[rx].conj().T
        return max(np.linalg.slogdet(d + s)[1] - np.linalg.slogdet(d)[1], 0.0) / LN2

    out = np.empty(n)
    for c in range(k):
        cb = c + k
        out[c] = rate(c, c, [j for j in range(n) if j not in (c, cb)])
        others = [j for j in range(n) if j != cb]
        out[cb] = min(rate(cb, cb, others), rate(c, cb, others))
    return out


def check_gamma_identity(rng) -> CheckResult:
    err = 0.0
    for _ in range(20):
        a = rng.uniform(0.2, 1.5, 3)
        ph = rng.uniform(-np.pi / 6, np.pi / 6, 3)
        g1, g2 = gamma_matrices(np.diag(a), np.diag(ph))
        err = max(err, np.max(np.abs(g1 + g2.conj() - np.eye(3))))
    return CheckResult("gamma identity", bool(err < 1e-15), f"max error {err:.2e}")


def check_ideal_noise(rng) -> CheckResult:
    sc = generate_scenario(ScenarioConfig(n_ris=4, k_pairs=1), int(rng.integers(1 << 31)))
    sigma2 = float(rng.uniform(0.1, 3.0))
    ch = real_channels(sc, initial_ris(sc, AoConfig()), IqiSetup.for_scenario(sc), sigma2)
    err = max(np.max(np.abs(c.c_noise - sigma2 / 2 * np.eye(2 * sc.n_u))) for c in ch)
    return CheckResult("ideal noise covariance", bool(err < 1e-15), f"max error {err:.2e}")


def check_real_vs_complex(rng, n_instances: int = 20) -> CheckResult:
    worst = 0.0
    for _ in range(n_instances):
        sc = generate_scenario(ScenarioConfig(n_ris=6, k_pairs=2), int(rng.integers(1 << 31)))
        ris = initial_ris(sc, AoConfig(seed=int(rng.integers(1000))))
        q = _random_proper_covs(rng, sc.n_users, sc.n_bs, 100.0)
        covs = RealCovarianceSet(np.array([complex_to_real_cov(x) for x in q]), 100.0)
        real = evaluate_rates(real_channels(sc, ris, IqiSetup.for_scenario(sc), 1.0), covs).rates
        worst = max(worst, np.max(np.abs(real - complex_rates(sc, ris, q))))
    return CheckResult("real vs complex rates", bool(worst < 1e-9), f"max deviation {worst:.2e}")


def _expansion_point(rng, iqi_amp=0.9):
    sc = generate_scenario(ScenarioConfig(n_ris=6, k_pairs=2), int(rng.integers(1 << 31)))
    iqi = IqiSetup.for_scenario(sc, iqi_amp, 5.0)
    cfg = AoConfig(set_kind="T_I", seed=int(rng.integers(1000)))
    covs = initial_covariances(sc, 100.0)
    p = project_stack(covs.p + rng.standard_normal(covs.p.shape), 100.0)
    p = project_stack(p + np.swapaxes(p, 1, 2), 100.0)
    return ExpansionPoint(RealCovarianceSet(p, 100.0), initial_ris(sc, cfg),
                          ChannelModel(sc, iqi, 1.0), np.ones(sc.n_users))


def check_surrogates(rng, draws: int = 50) -> CheckResult:
    ep = _expansion_point(rng)
    cs, rs = CovSurrogates(ep), RisSurrogates(ep)
    tight = max(np.max(np.abs(cs.values(ep.covs.p) - ep.branch_rates)),
                np.max(np.abs(rs.values(ep.z) - ep.branch_rates)))
    viol = 0.0
    proj = make_projector(ep.ris, "T_U", None)
    for _ in range(draws):
        p = project_stack(ep.covs.p + 5 * rng.standard_normal(ep.covs.p.shape), 100.0)
        viol = max(viol, np.max(cs.values(p) - ep.branch_rates_at_cov(p)))
        z = proj(ep.z + 0.5 * rng.standard_normal(ep.z.shape))
        viol = max(viol, np.max(rs.values(z) - ep.branch_rates_at_ris(z)))
    ok = bool(tight < 1e-9 and viol < 1e-9)
    return CheckResult("surrogate tightness and minorization", ok,
                       f"tightness {tight:.2e}, worst violation {viol:.2e}")


def check_projection(rng) -> CheckResult:
    p = rng.standard_normal((4, 4, 4))
    p = p + np.swapaxes(p, 1, 2)
    out = project_stack(p, 3.0)
    ok = (np.all(np.linalg.eigvalsh(out) >= -1e-10)
          and np.trace(out, axis1=1, axis2=2).sum() <= 3.0 + 1e-9)
    return CheckResult("covariance projection feasibility", bool(ok), "")


def run_all(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    return [check_gamma_identity(rng), check_ideal_noise(rng), check_real_vs_complex(rng),
            check_surrogates(rng), check_projection(rng)]
