"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 constraint or policy
violation. ``OSASIM_OUTPUT_DIR`` overrides the output directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .detector import EnergyDetectorSpec, energy_roc_analytic, energy_roc_monte_carlo
from .policy import AmbiguousPolicyError, PolicyError, Verdict, evaluate, load_policy, parse_request
from .scenario import ConfigError, load_scenario, resolve
from .sharing import assignment_csv, distributed_color, greedy_color, is_valid, load_graph, utility

OUTPUT_ENV = "OSASIM_OUTPUT_DIR"


def _out_dir(args, scenario) -> Path:
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env)
    if getattr(args, "out", None):
        return Path(args.out)
    if scenario.output:
        return Path(scenario.output)
    return Path("osasim-out") / Path(scenario.source).stem


def _scenario(args):
    sc = load_scenario(args.scenario)
    if args.seed:
        sc = sc.with_seeds(args.seed)
    if args.slots:
        sc = replace(sc, slots=args.slots)
    return sc


def cmd_run(args) -> int:
    sc = _scenario(args)
    if args.strategy:
        sc = sc.with_strategy(args.strategy)
    rep = harness.run(sc)
    out = _out_dir(args, sc)
    harness.report(rep, out)
    sys.stdout.write(harness.summary_text(rep))
    print(f"wrote {out}")
    return rep.exit_status


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    rows = harness.sweep(sc, args.axis, harness.parse_grid(args.grid))
    text = harness.sweep_csv(rows, args.axis)
    out = _out_dir(args, sc)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"sweep_{args.axis}.csv").write_text(text)
    sys.stdout.write(text)
    zeta = sc.constraint.zeta
    over = [r for r in rows if r.collision_conditional is not None
            and args.axis != "zeta"
            and r.collision_conditional > zeta + 3.0 * r.collision_conditional_stderr]
    return 2 if over else 0


def cmd_roc(args) -> int:
    spec = EnergyDetectorSpec(args.snr, args.samples)
    if args.mc_trials:
        roc = energy_roc_monte_carlo(args.snr, args.samples, args.mc_trials,
                                     np.random.default_rng(args.seed))
    else:
        roc = energy_roc_analytic(spec, points=args.points)
    text = roc.to_text()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_color(args) -> int:
    graph = load_graph(resolve(args.graph))
    bw = {c: 1.0 for c in graph.channels()}
    if args.algo == "greedy":
        a = greedy_color(graph, bw, args.objective, args.order, args.single_channel)
    else:
        a = distributed_color(graph, args.rounds, np.random.default_rng(args.seed),
                              args.single_channel)
    sys.stdout.write(assignment_csv(a))
    print(f"# utility ({args.objective}): {utility(a, bw, args.objective)!r}")
    return 0 if is_valid(graph, a) else 2


def cmd_policy_check(args) -> int:
    policy = load_policy(resolve(args.policy))
    req = parse_request(args.request)
    d = evaluate(policy, req)
    print(d)
    if d.rule:
        print(f"# rule: {d.rule}")
    return 0 if d.verdict is Verdict.YES else 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="osasim", description="Opportunistic spectrum access simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="closed-loop run of a scenario")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int, action="append", help="override seeds (repeatable)")
    r.add_argument("--slots", type=int)
    r.add_argument("--strategy", choices=["static", "myopic", "value_iteration"])
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="one run per grid point")
    s.add_argument("scenario")
    s.add_argument("--axis", required=True, choices=harness.AXES)
    s.add_argument("--grid", required=True, help="start:stop:step or comma list")
    s.add_argument("--seed", type=int, action="append")
    s.add_argument("--slots", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    o = sub.add_parser("roc", help="energy-detector ROC as text")
    o.add_argument("--snr", type=float, required=True)
    o.add_argument("--samples", type=int, required=True)
    o.add_argument("--points", type=int, default=101)
    o.add_argument("--mc-trials", type=int, default=0, help="Monte-Carlo instead of analytic")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out")
    o.set_defaults(func=cmd_roc)

    c = sub.add_parser("color", help="list-color a conflict graph")
    c.add_argument("graph")
    c.add_argument("--algo", choices=["greedy", "distributed"], default="greedy")
    c.add_argument("--objective", choices=["sum", "pf"], default="sum")
    c.add_argument("--order", choices=["max-degree-first", "static"], default="max-degree-first")
    c.add_argument("--single-channel", action="store_true")
    c.add_argument("--rounds", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_color)

    k = sub.add_parser("policy-check", help="evaluate one request against a policy file")
    k.add_argument("policy")
    k.add_argument("request", help="e.g. band=1,power=2.5,detector_class=tier1")
    k.set_defaults(func=cmd_policy_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PolicyError, AmbiguousPolicyError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
