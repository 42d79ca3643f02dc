import csv

import numpy as np
import pytest

from starnoma.channel import ScenarioConfig, StarRisState, generate_scenario
from starnoma.checks import _random_proper_covs, complex_rates
from starnoma.impairments import IqiSetup, RealChannel, complex_to_real_cov, real_channels
from starnoma.rates import (RealCovarianceSet, SingularNoiseError, evaluate_rates,
                            interference_matrices, rate_branches, rate_ccu, rate_ceu,
                            weighted_min_rate)


def _random_psd(rng, n_users, dim, budget):
    g = rng.standard_normal((n_users, dim, dim))
    p = g @ np.swapaxes(g, 1, 2)
    return p * budget / np.trace(p, axis1=1, axis2=2).sum()


def _random_channels(rng, n_users, m=4, k=4):
    out = []
    for _ in range(n_users):
        a = rng.standard_normal((m, m))
        out.append(RealChannel(rng.standard_normal((m, k)), 0.3 * np.eye(m) + 0.1 * a @ a.T))
    return out


def test_interference_matrices_oracle(rng):
    ch = _random_channels(rng, 4)
    covs = RealCovarianceSet(_random_psd(rng, 4, 4, 10.0), 10.0)
    recv = lambda r, j: ch[r].h_real @ covs.p[j] @ ch[r].h_real.T
    d, s = interference_matrices(ch, covs, 0, "ccu")
    np.testing.assert_allclose(d, ch[0].c_noise + recv(0, 1) + recv(0, 3), atol=1e-12)
    np.testing.assert_allclose(s, recv(0, 0), atol=1e-12)
    d, s = interference_matrices(ch, covs, 2, "ceu")
    np.testing.assert_allclose(d, ch[2].c_noise + recv(2, 0) + recv(2, 1) + recv(2, 3), atol=1e-12)
    d, s, x = interference_matrices(ch, covs, 2, "ceu_at_ccu")
    np.testing.assert_allclose(x, recv(0, 2), atol=1e-12)
    d_tin, _ = interference_matrices(ch, covs, 0, "ccu", sic=False)
    np.testing.assert_allclose(d_tin, d + recv(0, 2), atol=1e-12)
    with pytest.raises(ValueError):
        interference_matrices(ch, covs, 0, "ceu")


def test_scalar_shannon():
    # 2x2 real model of a scalar complex link: rate = log2(1 + |h|^2 q / sigma^2)
    d = 0.5 * np.eye(2)
    for snr in (0.1, 1.0, 37.0):
        s = 0.5 * snr * np.eye(2)
        assert abs(rate_ccu(d, s) - np.log2(1 + snr)) < 1e-12


def test_real_matches_complex_domain():
    rng = np.random.default_rng(0)
    for i in range(10):
        sc = generate_scenario(ScenarioConfig(n_ris=5, k_pairs=2), i)
        ris = StarRisState(np.exp(1j * rng.uniform(0, 6.3, 5)) * 0.7,
                           np.exp(1j * rng.uniform(0, 6.3, 5)) * 0.7)
        q = _random_proper_covs(rng, 4, 2, 50.0)
        covs = RealCovarianceSet(np.array([complex_to_real_cov(x) for x in q]), 50.0)
        real = evaluate_rates(real_channels(sc, ris, IqiSetup.for_scenario(sc), 1.0), covs).rates
        np.testing.assert_allclose(real, complex_rates(sc, ris, q), atol=1e-9)


def test_ceu_rate_is_min_of_branches(rng):
    ch = _random_channels(rng, 4)
    covs = RealCovarianceSet(_random_psd(rng, 4, 4, 10.0), 10.0)
    rep = evaluate_rates(ch, covs)
    for kb in (2, 3):
        d_own, s_own = interference_matrices(ch, covs, kb, "ceu")
        d_p, s_p, s_x = interference_matrices(ch, covs, kb, "ceu_at_ccu")
        r, own, part = rate_ceu(d_own, s_own, d_p, s_p, s_x)
        assert r == min(own, part)
        assert abs(rep.rates[kb] - r) < 1e-10
        np.testing.assert_allclose(rep.ceu_parts[kb - 2], [own, part], atol=1e-10)
        assert rep.binding_branch(kb) == ("own" if own <= part else "partner")


def test_weighted_min(rng):
    ch = _random_channels(rng, 4)
    covs = RealCovarianceSet(_random_psd(rng, 4, 4, 10.0), 10.0)
    w = np.array([1.0, 2.0, 0.5, 1.5])
    rep = evaluate_rates(ch, covs, weights=w)
    assert rep.weighted_min == pytest.approx(np.min(w * rep.rates))
    assert weighted_min_rate(rep, w) == pytest.approx(rep.weighted_min)
    with pytest.raises(ValueError):
        weighted_min_rate(rep, [1, 0, 1, 1])


def test_sic_beats_treating_partner_as_noise(rng):
    for _ in range(20):
        ch = _random_channels(rng, 6)
        covs = RealCovarianceSet(_random_psd(rng, 6, 4, 20.0), 20.0)
        noma = evaluate_rates(ch, covs, access="NOMA").rates
        tin = evaluate_rates(ch, covs, access="TIN").rates
        assert np.all(noma[:3] >= tin[:3] - 1e-12)


def test_orthogonal_rotation_invariance(rng):
    ch = _random_channels(rng, 4)
    covs = RealCovarianceSet(_random_psd(rng, 4, 4, 10.0), 10.0)
    u, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    rot = [RealChannel(c.h_real @ u.T, c.c_noise) for c in ch]
    rcovs = RealCovarianceSet(u @ covs.p @ u.T, 10.0)
    np.testing.assert_allclose(evaluate_rates(rot, rcovs).rates, evaluate_rates(ch, covs).rates,
                               atol=1e-10)


def test_branch_structure():
    noma = rate_branches(3, "NOMA")
    assert len(noma) == 9
    assert noma[0].interference == (1, 2, 4, 5)
    partner = [b for b in noma if b.label == "partner"]
    assert [(b.owner, b.rx) for b in partner] == [(3, 0), (4, 1), (5, 2)]
    tin = rate_branches(2, "TIN")
    assert len(tin) == 4 and tin[0].interference == (1, 2, 3)
    with pytest.raises(ValueError):
        rate_branches(2, "OMA")


def test_zero_power_gives_zero_rates(rng):
    ch = _random_channels(rng, 2)
    rep = evaluate_rates(ch, RealCovarianceSet(np.zeros((2, 4, 4)), 1.0))
    np.testing.assert_array_equal(rep.rates, 0.0)


def test_singular_noise_rejected():
    ch = [RealChannel(np.eye(2), np.zeros((2, 2))) for _ in range(2)]
    with pytest.raises(SingularNoiseError):
        evaluate_rates(ch, RealCovarianceSet(np.zeros((2, 2, 2)), 1.0))


def test_covariance_set_helpers():
    w = RealCovarianceSet.white(4, 2, 8.0)
    assert w.total_power() == pytest.approx(8.0)
    assert w.is_feasible(proper=True)
    bad = RealCovarianceSet(-np.eye(4)[None].repeat(2, 0), 8.0)
    assert not bad.is_feasible()


def test_csv_report(tmp_path, rng):
    ch = _random_channels(rng, 4)
    rep = evaluate_rates(ch, RealCovarianceSet(_random_psd(rng, 4, 4, 10.0), 10.0))
    path = tmp_path / "rates.csv"
    rep.write_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert [r["role"] for r in rows] == ["ccu", "ccu", "ceu", "ceu"]
    assert float(rows[2]["rate"]) == rep.rates[2]
    assert rows[0]["binding"] == "" and rows[3]["binding"] in ("own", "partner")
