"""Acceptance criteria, one test each, at the stated tolerances."""

import itertools
import math
import os
import subprocess
import sys
import time

import numpy as np

from osasim import harness
from osasim.access import collision_rate, optimal_access_policy
from osasim.channel import ChannelChain, index_state, product_matrix
from osasim.detector import samples_required, samples_required_monte_carlo
from osasim.geometry import conservative_detect, is_overlooked, random_topology
from osasim.geometry import Role, distance
from osasim.policy import Verdict, evaluate, load_policy, TransmissionRequest, tighten
from osasim.scenario import BUNDLED, load_scenario
from osasim.sharing import ConflictGraph, brute_force, distributed_color, greedy_color, is_valid, utility
from osasim.tracker import (
    belief_update, evaluate_policy, joint_marginals, joint_update, product_joint, run_tracking,
    static_policy, value_iteration,
)


def test_collision_constraint_identity(verdict):
    start = time.perf_counter()
    chains = (ChannelChain(0.8, 0.3),)
    rates = {}
    for delta in (0.05, 0.1, 0.25):
        rec = run_tracking(chains, static_policy(chains), 0.1, delta, 0.1, 10**6,
                           np.random.default_rng(100 + int(delta * 100)))
        rates[delta] = collision_rate(rec)[0]
    elapsed = time.perf_counter() - start
    ok = all(abs(r - 0.1) <= 0.003 for r in rates.values()) and elapsed < 10
    detail = ", ".join(f"delta={d}: {r:.4f}" for d, r in rates.items()) + f" ({elapsed:.1f}s)"
    assert verdict("collision identity", ok, detail)


def test_separation_principle_sweep(verdict):
    start = time.perf_counter()
    scenario = load_scenario("fig6.scn")
    assert scenario.slots >= 10**5 and scenario.detector.roc.is_concave()
    grid = harness.parse_grid("0.02:0.30:0.01")
    rows = harness.sweep(scenario, "delta", grid)
    best = max(rows, key=lambda r: r.mean_throughput)
    within = all(r.collision_conditional <= 0.1 + 3 * r.collision_conditional_stderr for r in rows)
    elapsed = time.perf_counter() - start
    ok = abs(best.delta - 0.10) <= 0.01 + 1e-12 and within and elapsed < 300
    detail = (f"argmax delta={best.delta:.2f} (throughput {best.mean_throughput:.4f}), "
              f"collision within 3 se at all {len(rows)} points: {within} ({elapsed:.1f}s)")
    assert verdict("separation principle", ok, detail)


def test_fig5_shape(verdict):
    start = time.perf_counter()
    scenario = load_scenario("fig5.scn")
    assert len(scenario.seeds) == 10
    pomdp = harness.run(scenario)
    static = harness.run(scenario.with_strategy("static"))
    x = np.array([m.mean_throughput for m in pomdp.per_seed])
    y = np.array([m.mean_throughput for m in static.per_seed])
    d = x - 1.3 * y
    se = d.std(ddof=1) / math.sqrt(len(d))
    gain_ok = d.mean() > 2 * se
    t = scenario.slots
    reward = np.mean([pomdp.records[s].reward for s in pomdp.seeds], axis=0)
    late, early = reward[t // 2:].mean(), reward[: t // 10].mean()
    elapsed = time.perf_counter() - start
    ok = gain_ok and late >= early and elapsed < 120
    detail = (f"(a) value_iteration {x.mean():.4f} vs static {y.mean():.4f} "
              f"(+{100 * (x.mean() / y.mean() - 1):.0f}%, margin over +30% is {d.mean() / se:.1f} se); "
              f"(b) late {late:.4f} >= early {early:.4f} ({elapsed:.1f}s)")
    assert verdict("fig5 shape", ok, detail)


def test_belief_filter_oracle(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for n in (2, 3, 4):
        for _ in range(1000):
            chains = [ChannelChain(*rng.uniform(0.05, 0.95, 2)) for _ in range(n)]
            eps, delta = rng.uniform(0.0, 0.4, 2)
            matrix = product_matrix(chains)
            p = rng.uniform(0.05, 0.95, n)
            joint = product_joint(p)
            state = [bool(v) for v in rng.random(n) < p]
            for _ in range(20):
                a = int(rng.integers(n))
                u = rng.random()
                obs = (u >= eps) if state[a] else (u < delta)
                joint = joint_update(joint, a, obs, eps, delta, matrix)
                p = belief_update(p, a, obs, eps, delta, chains).per_channel_idle
                worst = max(worst, float(np.max(np.abs(joint_marginals(joint) - p))))
                state = [bool(rng.random() < (c.p_ii if s else c.p_bi)) for c, s in zip(chains, state)]
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 60
    assert verdict("belief filter oracle", ok, f"max deviation {worst:.2e} over 3000 trajectories ({elapsed:.1f}s)")


def _tree_optimum(chains, belief, horizon, eps, delta, zeta):
    """Best expected reward over every sensing decision tree, on the joint chain."""
    n = len(chains)
    matrix = product_matrix(chains)
    gain = optimal_access_policy(delta, zeta).idle_gain(eps)
    bw = [c.bandwidth for c in chains]
    idle = [np.array([index_state(s, n)[a] for s in range(1 << n)]) for a in range(n)]
    nodes = sum(2 ** k for k in range(horizon))

    def value(tree, mass, node, depth):
        # ``mass``: unnormalized joint distribution of the current slot
        if depth == horizon:
            return 0.0
        a = tree[node]
        total = bw[a] * gain * float(mass[idle[a]].sum())
        for k, like in enumerate((np.where(idle[a], 1 - eps, delta), np.where(idle[a], eps, 1 - delta))):
            nxt = (mass * like) @ matrix
            total += value(tree, nxt, 2 * node + 1 + k, depth + 1)
        return total

    start = product_joint(belief)
    return max(value(tree, start, 0, 0) for tree in itertools.product(range(n), repeat=nodes))


def test_tiny_pomdp_optimality(verdict):
    # Perfect sensing starts from a known joint state, so every reachable
    # belief is a prediction of a 0/1 vector. The dyadic pair keeps those
    # predictions on the 33-point grid; the generic pair does not.
    start = time.perf_counter()
    generic = (ChannelChain(0.9, 0.2, 1.0), ChannelChain(0.6, 0.3, 1.6))
    dyadic = (ChannelChain(0.75, 0.25, 1.0), ChannelChain(0.875, 0.375, 1.5))
    known = [np.array(s, dtype=float) for s in itertools.product((0, 1), repeat=2)]
    rng = np.random.default_rng(7)
    noisy = [np.array([2 / 3, 3 / 7])] + [rng.random(2) for _ in range(15)]
    cases = (
        ("perfect, generic chains", generic, known, 0.0, 1e-6),
        ("perfect, dyadic chains", dyadic, known + [np.array([0.5, 0.75])], 0.0, 1e-6),
        ("eps=delta=0.1", generic, noisy, 0.1, 1e-2),
    )
    parts, ok = [], True
    for name, chains, beliefs, err, tol in cases:
        pol = value_iteration(chains, err, err, 0.1, 3)
        worst = max(abs(_tree_optimum(chains, b, 3, err, err, 0.1)
                        - evaluate_policy(pol, b, 3, err, err, 0.1)) for b in beliefs)
        ok &= worst <= tol
        parts.append(f"{name}: gap {worst:.1e} (tol {tol:g})")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 60
    assert verdict("tiny POMDP optimality", ok, "; ".join(parts) + f" ({elapsed:.1f}s)")


def test_energy_detector_scaling(verdict):
    start = time.perf_counter()
    snrs = np.geomspace(0.01, 0.1, 5)
    analytic = np.array([samples_required(s, 0.1, 0.9).energy for s in snrs], dtype=float)
    rng = np.random.default_rng(31)
    mc = np.array([samples_required_monte_carlo(s, 0.1, 0.9, 10**5, rng) for s in snrs], dtype=float)
    slope = np.polyfit(np.log(snrs), np.log(analytic), 1)[0]
    slope_mc = np.polyfit(np.log(snrs), np.log(mc), 1)[0]
    rel = np.max(np.abs(analytic - mc) / mc)
    elapsed = time.perf_counter() - start
    ok = -2.3 <= slope <= -1.7 and -2.3 <= slope_mc <= -1.7 and rel <= 0.2 and elapsed < 300
    detail = (f"slope analytic {slope:.3f}, Monte-Carlo {slope_mc:.3f}; "
              f"max analytic/MC discrepancy {100 * rel:.1f}% ({elapsed:.1f}s)")
    assert verdict("energy detector scaling", ok, detail)


def test_coloring_oracle(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(808)
    worst, invalid = 1.0, 0
    for _ in range(200):
        n = int(rng.integers(1, 9))
        k = int(rng.integers(1, 4))
        verts = [f"v{i}" for i in range(n)]
        lists = {v: {c for c in range(k) if rng.random() < 0.6} for v in verts}
        p = rng.uniform(0.1, 0.9)
        edges = {(a, b) for a, b in itertools.combinations(verts, 2) if rng.random() < p}
        g = ConflictGraph(lists, edges)
        bw = {c: 1.0 for c in range(k)}
        greedy = greedy_color(g, bw, order="max-degree-first")
        dist = distributed_color(g, 200, rng)
        invalid += (not is_valid(g, greedy)) + (not is_valid(g, dist))
        best, _ = brute_force(g, bw)
        if best > 0:
            worst = min(worst, utility(greedy, bw) / best)
    elapsed = time.perf_counter() - start
    ok = invalid == 0 and worst >= 0.5 and elapsed < 60
    assert verdict("coloring oracle", ok,
                   f"{invalid} invalid outputs, worst greedy/optimal ratio {worst:.3f} ({elapsed:.1f}s)")


def test_geometry_conservativeness(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(99)
    violations = overlooked = 0
    for _ in range(10**4):
        topo = random_topology(rng)
        if conservative_detect(topo, "A", 0, 0):
            a = topo.secondary("A")
            receivers = topo.active(0, 0, Role.RECEIVING)
            violations += any(distance(r, a) <= topo.r_tx for r in receivers)
        overlooked += is_overlooked(topo, "A", "B", 0, 0)
    elapsed = time.perf_counter() - start
    ok = violations == 0 and overlooked > 0 and elapsed < 30
    assert verdict("geometry conservativeness", ok,
                   f"{violations} violations, {overlooked} overlooked-opportunity witnesses ({elapsed:.1f}s)")


def test_policy_engine_contract(verdict):
    start = time.perf_counter()
    policy = load_policy(BUNDLED / "tiers.policy")
    fixtures = [
        (TransmissionRequest(1, 0.5), Verdict.YES),
        (TransmissionRequest(3, 0.5), Verdict.NO),
        (TransmissionRequest(1, 2.0), Verdict.YES_WITH_CONSTRAINTS),
        (TransmissionRequest(1, 2.0, detector_class="tier2"), Verdict.YES),
        (TransmissionRequest(0, 0.5, time=150), Verdict.NO),
    ]
    fixtures_ok = all(evaluate(policy, r).verdict is v for r, v in fixtures)
    rng = np.random.default_rng(5)
    tightened = unsound = 0
    for _ in range(2000):
        r = TransmissionRequest(int(rng.integers(0, 5)), float(rng.uniform(0, 8)),
                                int(rng.integers(1, 30)), 0.0, 0.0, int(rng.integers(0, 300)),
                                str(rng.choice(["", "tier1", "tier2"])))
        d = evaluate(policy, r)
        if d.verdict is Verdict.YES_WITH_CONSTRAINTS:
            tightened += 1
            unsound += evaluate(policy, tighten(r, d)).verdict is not Verdict.YES
    report = harness.run(load_scenario("gated.scn"))
    elapsed = time.perf_counter() - start
    ok = fixtures_ok and unsound == 0 and tightened > 0 and report.violations == 0 and elapsed < 5
    assert verdict("policy engine contract", ok,
                   f"fixtures {'ok' if fixtures_ok else 'wrong'}, {unsound}/{tightened} tightened "
                   f"requests not yes, gated-run violations {report.violations} ({elapsed:.1f}s)")


def test_reproducibility(verdict, tmp_path):
    outputs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        env = dict(os.environ, OSASIM_OUTPUT_DIR=str(out))
        r = subprocess.run([sys.executable, "-m", "osasim", "run", "fig5.scn", "--seed", "7"],
                           env=env, capture_output=True, text=True, cwd=tmp_path)
        assert r.returncode == 0, r.stderr
        outputs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    same = outputs[0] == outputs[1] and len(outputs[0]) >= 3
    assert verdict("reproducibility", same,
                   f"{len(outputs[0])} CSV files compared byte for byte: "
                   f"{'identical' if same else 'differ'}")
