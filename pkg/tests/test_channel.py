import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from starnoma.channel import (REFLECT, TRANSMIT, ChannelDimensionError, ComplexScenario,
                              ScenarioConfig, StarRisState, compose_effective_channel,
                              generate_scenario, without_ris)


def _ris(n, rng):
    return StarRisState(rng.standard_normal(n) + 1j * rng.standard_normal(n),
                        rng.standard_normal(n) + 1j * rng.standard_normal(n))


def test_zero_coefficients_leave_direct_link(small_scenario):
    ris = StarRisState.zeros(small_scenario.n_ris)
    for u in range(small_scenario.n_users):
        np.testing.assert_array_equal(compose_effective_channel(small_scenario, ris, u),
                                      small_scenario.direct[u])


def test_identity_composition():
    n = 3
    sc = ComplexScenario(n, n, n, 1, np.zeros((2, n, n), complex), np.eye(n, dtype=complex),
                         np.stack([np.eye(n, dtype=complex)] * 2), (REFLECT, TRANSMIT))
    ris = StarRisState(np.ones(n, complex), np.zeros(n, complex))
    np.testing.assert_array_equal(compose_effective_channel(sc, ris, 0), np.eye(n))
    np.testing.assert_array_equal(compose_effective_channel(sc, ris, 1), np.zeros((n, n)))


def test_matches_elementwise_evaluation(rng):
    sc = generate_scenario(ScenarioConfig(n_bs=2, n_u=2, n_ris=4, k_pairs=1), 9)
    ris = _ris(4, rng)
    for u in range(2):
        theta = ris.theta_r if sc.side[u] == REFLECT else ris.theta_t
        ref = np.array(sc.direct[u])
        for a in range(2):
            for b in range(2):
                ref[a, b] += sum(sc.ris_to_user[u][a, i] * theta[i] * sc.bs_to_ris[i, b]
                                 for i in range(4))
        np.testing.assert_allclose(compose_effective_channel(sc, ris, u), ref, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(i=st.integers(0, 5), delta_re=st.floats(-3, 3), delta_im=st.floats(-3, 3),
       seed=st.integers(0, 2 ** 16))
def test_linear_in_each_coefficient(i, delta_re, delta_im, seed):
    sc = generate_scenario(ScenarioConfig(n_ris=6, k_pairs=1), seed)
    rng = np.random.default_rng(seed)
    ris = _ris(6, rng)
    delta = delta_re + 1j * delta_im
    r2 = ris.theta_r.copy()
    r2[i] += delta
    moved = ris.with_coefficients(r2, ris.theta_t)
    diff = compose_effective_channel(sc, moved, 0) - compose_effective_channel(sc, ris, 0)
    expect = delta * np.outer(sc.ris_to_user[0][:, i], sc.bs_to_ris[i])
    np.testing.assert_allclose(diff, expect, atol=1e-12)


def test_transmission_change_leaves_reflection_users(small_scenario, rng):
    ris = _ris(small_scenario.n_ris, rng)
    other = ris.with_coefficients(ris.theta_r, ris.theta_t + 0.3)
    for u in range(small_scenario.n_users):
        same = np.array_equal(compose_effective_channel(small_scenario, ris, u),
                              compose_effective_channel(small_scenario, other, u))
        assert same == (small_scenario.side[u] == REFLECT)


def test_dimension_mismatch_named(small_scenario):
    with pytest.raises(ChannelDimensionError, match="theta"):
        compose_effective_channel(small_scenario, StarRisState.zeros(3), 0)
    with pytest.raises(ChannelDimensionError, match="direct"):
        ComplexScenario(2, 2, 2, 1, np.zeros((2, 3, 2), complex), np.zeros((2, 2), complex),
                        np.zeros((2, 2, 2), complex), (REFLECT, TRANSMIT))


def test_generation_deterministic():
    cfg = ScenarioConfig(n_ris=5, k_pairs=2)
    a, b = generate_scenario(cfg, 42), generate_scenario(cfg, 42)
    for name in ("direct", "bs_to_ris", "ris_to_user", "positions"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.direct, generate_scenario(cfg, 43).direct)


def test_large_surface_scenario():
    sc = generate_scenario(ScenarioConfig(n_bs=2, n_u=2, n_ris=60, k_pairs=3), 0)
    assert sc.n_users == 6
    assert sc.side == (REFLECT,) * 3 + (TRANSMIT,) * 3
    assert sc.ris_to_user.shape == (6, 2, 60) and sc.bs_to_ris.shape == (60, 2)
    assert all(sc.partner(k) == k + 3 for k in range(3))


def test_direct_link_moment():
    # E|F_k|_F^2 = N_u N_BS * path gain, checked over 10^4 draws
    cfg = ScenarioConfig(n_ris=1, k_pairs=1)
    ratio = []
    for s in range(10_000):
        sc = generate_scenario(cfg, s)
        ratio.append(np.sum(np.abs(sc.direct) ** 2, axis=(1, 2)) / (4 * sc.pl_direct))
    assert abs(np.mean(ratio) - 1) < 0.05


def test_clusters_have_different_distances():
    sc = generate_scenario(ScenarioConfig(k_pairs=3), 5)
    d = np.linalg.norm(sc.positions, axis=1)
    assert d[:3].max() < d[3:].min()
    assert sc.pl_direct[:3].min() > sc.pl_direct[3:].max()


@pytest.mark.parametrize("field,value", [("n_bs", 0), ("k_pairs", 0), ("n_ris", -1)])
def test_bad_config_rejected(field, value):
    with pytest.raises(ValueError):
        generate_scenario(ScenarioConfig(**{field: value}), 0)


def test_state_invariants(rng):
    r = np.array([0.6, 1.0, 0.0])
    t = np.array([0.6j, 0.0, 1.0])
    st_ = StarRisState(r.astype(complex), t.astype(complex), set_kind="T_N")
    assert not st_.is_feasible()           # element 0 has |r|^2+|t|^2 = 0.72
    ok = StarRisState(r / np.sqrt(0.72) * [1, 0, 0] + [0, 1, 0],
                      t / np.sqrt(0.72) * [1, 0, 0] + [0, 0, 1], set_kind="T_N")
    assert ok.is_feasible(1e-12)
    with pytest.raises(ValueError):
        StarRisState(np.ones(2, complex), np.ones(2, complex), mode="MS")
    bad_ms = StarRisState(np.ones(2, complex), np.ones(2, complex), "MS", "T_U",
                          np.array([True, False]))
    assert not bad_ms.is_feasible()


def test_save_load_roundtrip(tmp_path, small_scenario):
    p = tmp_path / "sc.npz"
    small_scenario.save(p)
    back = ComplexScenario.load(p)
    np.testing.assert_array_equal(back.ris_to_user, small_scenario.ris_to_user)
    assert back.side == small_scenario.side


def test_without_ris(small_scenario):
    sc = without_ris(small_scenario)
    h = compose_effective_channel(sc, StarRisState.zeros(0), 2)
    np.testing.assert_array_equal(h, small_scenario.direct[2])
