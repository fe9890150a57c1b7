import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import RegularGridInterpolator

from osasim.access import optimal_access_policy
from osasim.channel import ChannelChain, product_matrix, stationary_distribution
from osasim.tracker import (
    BeliefState, GridValue, InconsistentObservationError, TrackRecord, bayes_correct,
    belief_update, evaluate_policy, joint_marginals, joint_update, myopic_choice,
    myopic_policy, product_joint, run_tracking, static_choice, static_policy, value_iteration,
)

prob = st.floats(0.0, 1.0, allow_nan=False)
CHAINS = (ChannelChain(0.8, 0.3, 1.0), ChannelChain(0.6, 0.1, 2.0))


def test_bayes_examples():
    assert bayes_correct(0.5, True, 0.1, 0.2) == pytest.approx(0.45 / 0.55, abs=1e-15)
    assert bayes_correct(0.5, False, 0.1, 0.2) == pytest.approx(0.05 / 0.45, abs=1e-15)


@given(st.floats(0.0, 1.0))
def test_uninformative_observation_keeps_prior(p):
    for obs in (True, False):
        assert bayes_correct(p, obs, 0.5, 0.5) == pytest.approx(p, abs=1e-12)


def test_inconsistent_observation():
    with pytest.raises(InconsistentObservationError, match="inconsistent observation"):
        bayes_correct(1.0, False, 0.0, 0.0)


def test_belief_update_predicts_all_channels():
    b = belief_update([0.5, 0.5], 0, True, 0.1, 0.2, CHAINS)
    post = 0.45 / 0.55
    assert b.per_channel_idle[0] == pytest.approx(post * 0.8 + (1 - post) * 0.3)
    assert b.per_channel_idle[1] == pytest.approx(0.5 * 0.6 + 0.5 * 0.1)


def test_belief_state_validation():
    with pytest.raises(ValueError):
        BeliefState([1.2])
    with pytest.raises(ValueError):
        BeliefState([0.5], joint=[0.2, 0.2])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(prob, prob), min_size=2, max_size=4), st.integers(0, 2**31 - 1))
def test_product_filter_matches_joint_filter(params, seed):
    chains = [ChannelChain(a, b) for a, b in params]
    rng = np.random.default_rng(seed)
    n = len(chains)
    p = rng.random(n)
    joint = product_joint(p)
    m = product_matrix(chains)
    for _ in range(10):
        a = int(rng.integers(n))
        obs = bool(rng.random() < 0.5)
        try:
            joint = joint_update(joint, a, obs, 0.1, 0.2, m)
        except InconsistentObservationError:
            return
        p = belief_update(p, a, obs, 0.1, 0.2, chains).per_channel_idle
        np.testing.assert_allclose(joint_marginals(joint), p, atol=1e-9)


def test_static_choice_examples():
    # pi = 0.6 and 0.4
    a, b = ChannelChain(0.8, 0.3), ChannelChain(0.7, 0.2)
    assert stationary_distribution(b).idle == pytest.approx(0.4)
    assert static_choice([a, b]) == 0
    assert static_choice([a, ChannelChain(0.7, 0.2, 2.0)]) == 1
    assert static_choice([ChannelChain(0.5, 0.5), ChannelChain(0.5, 0.5)]) == 0


def test_myopic_choice_examples():
    unit = [ChannelChain(0.5, 0.5), ChannelChain(0.5, 0.5)]
    assert myopic_choice([0.9, 0.1], unit) == 0
    assert myopic_choice([0.4, 0.5], [ChannelChain(0.5, 0.5, 2.0), ChannelChain(0.5, 0.5)]) == 0
    assert myopic_choice(BeliefState.stationary(CHAINS), CHAINS) == static_choice(CHAINS)


def test_grid_value_matches_scipy_interpolator():
    rng = np.random.default_rng(0)
    for n in (1, 2, 3):
        table = rng.random((5,) * n)
        g = GridValue(table)
        ref = RegularGridInterpolator((np.linspace(0, 1, 5),) * n, table)
        pts = rng.random((200, n))
        pts[:5] = 1.0
        pts[5:10] = 0.0
        np.testing.assert_allclose(g(pts), ref(pts), atol=1e-12)
        for q in pts[:20]:
            assert g.at(list(q)) == pytest.approx(float(ref(q[None])[0]), abs=1e-12)


def test_scalar_and_vector_q_values_agree():
    pol = value_iteration(CHAINS, 0.1, 0.1, 0.1, 3, 9)
    rng = np.random.default_rng(1)
    for _ in range(50):
        b = rng.random(2)
        np.testing.assert_allclose(pol._q_scalar(b, None), pol.q_values(b), atol=1e-12)


def test_horizon_one_equals_myopic():
    pol = value_iteration(CHAINS, 0.1, 0.2, 0.1, 1, 9)
    for b in itertools.product(pol.grid, repeat=2):
        assert pol.choose(list(b)) == myopic_choice(list(b), CHAINS)


def test_single_channel_value_matches_scalar_recursion():
    chain = ChannelChain(0.8, 0.3, 2.0)
    eps, delta, zeta, h = 0.1, 0.2, 0.1, 4
    pol = value_iteration([chain], eps, delta, zeta, h, 33)
    gain = optimal_access_policy(delta, zeta).idle_gain(eps)
    # with one channel the expected idle probability just follows the chain
    p, total = 0.3, 0.0
    for _ in range(h):
        total += chain.bandwidth * p * gain
        p = p * chain.p_ii + (1 - p) * chain.p_bi
    assert evaluate_policy(pol, [0.3], h, eps, delta, zeta) == pytest.approx(total, abs=1e-12)
    assert pol.value([0.3]) == pytest.approx(total, abs=1e-3)


def test_value_nondecreasing_in_horizon_and_nonincreasing_in_delta():
    b = [0.5, 0.4]
    vals = [value_iteration(CHAINS, 0.1, 0.1, 0.1, h, 9).value(b) for h in (1, 2, 3)]
    assert vals[0] <= vals[1] <= vals[2]
    by_delta = [value_iteration(CHAINS, 0.1, d, 0.1, 2, 9).value(b) for d in (0.05, 0.1, 0.2)]
    assert by_delta[0] >= by_delta[1] >= by_delta[2]


def test_value_iteration_errors():
    with pytest.raises(ValueError):
        value_iteration(CHAINS, 0.1, 0.1, 0.1, 0)
    with pytest.raises(ValueError):
        value_iteration(CHAINS, 0.1, 0.1, 0.1, 1, 1)
    with pytest.raises(ValueError):
        value_iteration([ChannelChain(0.5, 0.5)] * 5, 0.1, 0.1, 0.1, 1)


def test_actions_are_valid_indices():
    pol = value_iteration(CHAINS, 0.1, 0.1, 0.1, 2, 9)
    for act in pol.actions:
        assert set(np.unique(act)) <= {0, 1}


def test_always_idle_perfect_detector_gets_max_bandwidth():
    chains = (ChannelChain(1.0, 1.0, 1.0), ChannelChain(1.0, 1.0, 3.0))
    rec = run_tracking(chains, myopic_policy(chains), 0.0, 0.0, 0.1, 200,
                       np.random.default_rng(0))
    assert np.all(rec.reward == 3.0)
    assert not rec.collision.any()


def test_static_throughput_closed_form():
    chains = (ChannelChain(0.8, 0.3, 2.0), ChannelChain(0.5, 0.1, 1.0))
    eps, delta, zeta = 0.1, 0.1, 0.1
    rec = run_tracking(chains, static_policy(chains), eps, delta, zeta, 200000,
                       np.random.default_rng(5))
    expected = 2.0 * 0.6 * (1 - eps)
    se = np.std(rec.reward) / np.sqrt(len(rec)) * np.sqrt(3)  # mixing allowance
    assert abs(rec.mean_throughput() - expected) < 4 * se


def test_myopic_beats_static_on_heterogeneous_chains():
    chains = (ChannelChain(0.9, 0.05, 1.0), ChannelChain(0.8, 0.1, 1.5), ChannelChain(0.7, 0.1, 2.0))
    out = {}
    for name, pol in (("static", static_policy(chains)), ("myopic", myopic_policy(chains)),
                      ("vi", value_iteration(chains, 0.1, 0.1, 0.1, 2, 17))):
        out[name] = run_tracking(chains, pol, 0.1, 0.1, 0.1, 20000, np.random.default_rng(2))
    s, m, v = (out[k].reward for k in ("static", "myopic", "vi"))
    se = np.sqrt(np.var(m - s) / len(m))
    assert m.mean() - s.mean() > 2 * se
    se_vm = np.sqrt(np.var(v - m) / len(m))
    assert v.mean() >= m.mean() - 2 * se_vm


def test_run_is_deterministic_per_seed():
    pol = value_iteration(CHAINS, 0.1, 0.1, 0.1, 2, 9)
    a = run_tracking(CHAINS, pol, 0.1, 0.1, 0.1, 300, np.random.default_rng(4))
    b = run_tracking(CHAINS, pol, 0.1, 0.1, 0.1, 300, np.random.default_rng(4))
    assert a.equals(b)
    assert a.to_csv() == b.to_csv()


def test_common_random_numbers_across_strategies():
    a = run_tracking(CHAINS, static_policy(CHAINS), 0.1, 0.1, 0.1, 300, np.random.default_rng(4))
    b = run_tracking(CHAINS, myopic_policy(CHAINS), 0.1, 0.1, 0.1, 300, np.random.default_rng(4))
    assert np.array_equal(a.true_state, b.true_state)


def test_accounting_identity():
    rec = run_tracking(CHAINS, myopic_policy(CHAINS), 0.1, 0.2, 0.1, 2000, np.random.default_rng(6))
    bw = np.array([c.bandwidth for c in CHAINS])
    idle = rec.sensed_idle
    assert rec.reward.sum() == pytest.approx(np.sum(bw[rec.action] * (rec.accessed & idle)))
    assert rec.collision.sum() == np.sum(rec.accessed & ~idle)


def test_belief_trace_follows_filter():
    rec = run_tracking(CHAINS, myopic_policy(CHAINS), 0.1, 0.2, 0.1, 50, np.random.default_rng(8))
    b = rec.belief[0]
    for t in range(49):
        b = belief_update(b, int(rec.action[t]), bool(rec.observation[t]), 0.1, 0.2, CHAINS).per_channel_idle
        np.testing.assert_allclose(rec.belief[t + 1], b, atol=1e-12)


def test_windowed_and_cumulative_series():
    rec = run_tracking(CHAINS, myopic_policy(CHAINS), 0.1, 0.2, 0.1, 400, np.random.default_rng(8))
    w = rec.windowed_throughput()
    assert len(w) == 20
    assert w.mean() == pytest.approx(rec.mean_throughput())
    assert rec.cumulative_throughput()[-1] == pytest.approx(rec.mean_throughput())
    assert len(rec.windowed_throughput(7)) == 400 // 7


def test_csv_roundtrip():
    gate = lambda slot, ch: (slot % 3 != 0, 0.5)
    for g in (None, gate):
        rec = run_tracking(CHAINS, myopic_policy(CHAINS), 0.1, 0.2, 0.1, 100,
                           np.random.default_rng(9), gate=g)
        back = TrackRecord.from_csv(rec.to_csv())
        assert back.equals(rec)
        assert back.to_csv() == rec.to_csv()
    assert rec.to_csv().splitlines()[0] == (
        "slot,action,observation,accessed,true_state_bits,reward,collision_flag,"
        "belief_0,belief_1,power")


def test_gate_blocks_transmissions():
    rec = run_tracking(CHAINS, myopic_policy(CHAINS), 0.0, 0.0, 0.1, 100,
                       np.random.default_rng(1), gate=lambda s, c: (False, 0.0))
    assert not rec.accessed.any() and rec.reward.sum() == 0


def test_fallback_after_inconsistent_observation():
    # perfect detector with belief pinned at 1: a busy report is impossible
    chains = (ChannelChain(1.0, 0.0),)
    rec = run_tracking(chains, myopic_policy(chains), 0.0, 0.0, 0.1, 5,
                       np.random.default_rng(0), initial_state=(False,), initial_belief=[1.0])
    assert rec.belief[1][0] == 0.0
