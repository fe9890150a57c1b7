import numpy as np
import pytest
from hypothesis import given, strategies as st

from osasim.channel import (
    ChannelChain, DegenerateChainError, OccupancyProcess, index_state, joint_stationary,
    predict, product_matrix, simulate, state_index, stationary_distribution, step,
    validate_joint_matrix,
)

prob = st.floats(0.0, 1.0, allow_nan=False)


def test_chain_validation():
    with pytest.raises(ValueError):
        ChannelChain(1.2, 0.1)
    with pytest.raises(ValueError):
        ChannelChain(0.5, -0.1)
    with pytest.raises(ValueError):
        ChannelChain(0.5, 0.5, bandwidth=0.0)
    m = ChannelChain(0.8, 0.3).matrix
    np.testing.assert_allclose(m.sum(axis=1), 1.0)


@pytest.mark.parametrize("p_ii,p_bi,expected", [(0.8, 0.3, 0.6), (0.5, 0.5, 0.5), (1.0, 1.0, 1.0)])
def test_stationary_examples(p_ii, p_bi, expected):
    s = stationary_distribution(ChannelChain(p_ii, p_bi))
    assert s.idle == pytest.approx(expected, abs=1e-15)
    assert not s.degenerate


def test_stationary_degenerate_cases():
    s = stationary_distribution(ChannelChain(0.0, 1.0))
    assert s.idle == 0.5 and s.degenerate
    with pytest.raises(DegenerateChainError, match="no unique stationary distribution"):
        stationary_distribution(ChannelChain(1.0, 0.0))


def test_predict_examples():
    assert predict(1.0, ChannelChain(0.8, 0.3)) == pytest.approx(0.8)
    assert predict(0.6, ChannelChain(0.8, 0.3)) == pytest.approx(0.6)
    assert predict(0.0, ChannelChain(0.8, 0.3)) == pytest.approx(0.3)


@given(prob, prob)
def test_stationary_is_fixed_point(p_ii, p_bi):
    chain = ChannelChain(p_ii, p_bi)
    if p_ii == 1.0 and p_bi == 0.0:
        return
    pi = stationary_distribution(chain).idle
    b = pi
    for _ in range(5):
        b = predict(b, chain)
        assert abs(b - pi) <= 1e-12


def test_absorbing_and_alternating(rng):
    idle = simulate(OccupancyProcess((ChannelChain(1.0, 0.0),), (True,)), 50, rng)
    assert idle.all()
    alt = simulate(OccupancyProcess((ChannelChain(0.0, 1.0),), (True,)), 50, rng)[:, 0]
    assert np.array_equal(alt, np.arange(50) % 2 == 0)


def test_long_run_idle_fraction():
    chain = ChannelChain(0.8, 0.3)
    traj = simulate(OccupancyProcess((chain,), (True,)), 10**6, np.random.default_rng(7))
    # mixing: lag-one autocorrelation is p_ii - p_bi = 0.5, so T_eff = T/3
    assert abs(traj.mean() - 0.6) < 0.002


def test_determinism():
    chains = (ChannelChain(0.8, 0.3), ChannelChain(0.6, 0.2))
    a = simulate(OccupancyProcess(chains, (True, False)), 1000, np.random.default_rng(3))
    b = simulate(OccupancyProcess(chains, (True, False)), 1000, np.random.default_rng(3))
    assert np.array_equal(a, b)


def test_step_matches_simulate_row_one():
    chains = (ChannelChain(0.8, 0.3), ChannelChain(0.6, 0.2))
    proc = OccupancyProcess(chains, (True, False))
    nxt = step(proc, np.random.default_rng(9))
    assert nxt.slot_index == 1
    assert len(nxt.state) == 2


def test_state_index_roundtrip():
    for n in range(1, 5):
        for s in range(1 << n):
            assert state_index(index_state(s, n)) == s


def test_product_matrix_is_kronecker_of_marginals():
    chains = (ChannelChain(0.8, 0.3), ChannelChain(0.6, 0.1), ChannelChain(0.9, 0.5))
    m = product_matrix(chains)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)
    for s in range(8):
        for t in range(8):
            a, b = index_state(s, 3), index_state(t, 3)
            expected = 1.0
            for c, x, y in zip(chains, a, b):
                p_idle = c.p_ii if x else c.p_bi
                expected *= p_idle if y else 1.0 - p_idle
            assert m[s, t] == pytest.approx(expected, abs=1e-15)
    pi = joint_stationary(m)
    np.testing.assert_allclose(pi @ m, pi, atol=1e-12)


def test_joint_matrix_validation():
    with pytest.raises(ValueError):
        validate_joint_matrix(np.ones((4, 4)), 2)
    with pytest.raises(ValueError):
        validate_joint_matrix(np.eye(3), 2)


def test_joint_mode_reproduces_product_statistics():
    chains = (ChannelChain(0.8, 0.3), ChannelChain(0.7, 0.2))
    m = product_matrix(chains)
    proc = OccupancyProcess(chains, (True, True), joint=m)
    traj = simulate(proc, 200000, np.random.default_rng(1))
    pis = [stationary_distribution(c).idle for c in chains]
    np.testing.assert_allclose(traj.mean(axis=0), pis, atol=0.01)


def test_joint_mode_correlated_channels():
    # the two channels always share state
    m = np.zeros((4, 4))
    m[0b00] = [0.7, 0, 0, 0.3]
    m[0b11] = [0.2, 0, 0, 0.8]
    m[0b01] = m[0b10] = [0.5, 0, 0, 0.5]
    chains = (ChannelChain(0.5, 0.5), ChannelChain(0.5, 0.5))
    traj = simulate(OccupancyProcess(chains, (True, True), joint=m), 5000, np.random.default_rng(2))
    assert np.array_equal(traj[:, 0], traj[:, 1])


def test_from_stationary_frequencies():
    chains = (ChannelChain(0.8, 0.3),)
    rng = np.random.default_rng(4)
    hits = sum(OccupancyProcess.from_stationary(chains, rng).state[0] for _ in range(20000))
    assert abs(hits / 20000 - 0.6) < 0.015
