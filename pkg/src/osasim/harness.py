"""Experiment orchestration: closed-loop runs, sweeps and report files."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .access import CollisionStats, collision_stats
from .geometry import is_opportunity, is_overlooked, max_power
from .policy import ComplianceReport, check_run, power_gate
from .scenario import ConfigError, Scenario
from .tracker import TrackRecord, myopic_policy, run_tracking, static_policy, value_iteration

AXES = ("delta", "zeta", "snr", "horizon")


@dataclass(frozen=True)
class SeedMetrics:
    seed: int
    slots: int
    delivered: float
    transmissions: int
    collisions: int
    busy_slots: int
    false_alarms: int
    idle_sensed: int
    geometric_opportunities: int
    geometric_overlooked: int
    violations: int
    windowed: np.ndarray = field(repr=False)
    cumulative: np.ndarray = field(repr=False)

    @property
    def mean_throughput(self) -> float:
        return self.delivered / self.slots

    @property
    def collision(self) -> CollisionStats:
        return CollisionStats(self.collisions, self.busy_slots, self.slots)

    @property
    def overlooked_rate(self) -> float | None:
        """Fraction of idle sensed slots the detector reported busy."""
        return self.false_alarms / self.idle_sensed if self.idle_sensed else None

    @property
    def geometric_overlooked_rate(self) -> float | None:
        if not self.geometric_opportunities:
            return None
        return self.geometric_overlooked / self.geometric_opportunities


@dataclass
class MetricsReport:
    scenario: Scenario
    per_seed: list
    records: dict = field(repr=False)
    compliance: dict = field(default_factory=dict, repr=False)

    @property
    def seeds(self) -> list:
        return [m.seed for m in self.per_seed]

    @property
    def mean_throughput(self) -> float:
        return float(np.mean([m.mean_throughput for m in self.per_seed]))

    @property
    def throughput_stderr(self) -> float:
        """Across-seed standard error; per-slot spread when there is one seed."""
        if len(self.per_seed) > 1:
            x = np.array([m.mean_throughput for m in self.per_seed])
            return float(np.std(x, ddof=1) / math.sqrt(len(x)))
        rec = self.records[self.per_seed[0].seed]
        return float(np.std(rec.reward, ddof=1) / math.sqrt(len(rec))) if len(rec) > 1 else 0.0

    @property
    def collision(self) -> CollisionStats:
        return CollisionStats(sum(m.collisions for m in self.per_seed),
                              sum(m.busy_slots for m in self.per_seed),
                              sum(m.slots for m in self.per_seed))

    @property
    def unconditional_stderr(self) -> float:
        c = self.collision
        p = c.unconditional
        return math.sqrt(p * (1.0 - p) / c.slots)

    @property
    def overlooked_rate(self) -> float | None:
        idle = sum(m.idle_sensed for m in self.per_seed)
        return sum(m.false_alarms for m in self.per_seed) / idle if idle else None

    @property
    def geometric_overlooked_rate(self) -> float | None:
        opp = sum(m.geometric_opportunities for m in self.per_seed)
        return sum(m.geometric_overlooked for m in self.per_seed) / opp if opp else None

    @property
    def violations(self) -> int:
        return sum(m.violations for m in self.per_seed)

    @property
    def windowed(self) -> np.ndarray:
        return np.mean([m.windowed for m in self.per_seed], axis=0)

    @property
    def cumulative(self) -> np.ndarray:
        return np.mean([m.cumulative for m in self.per_seed], axis=0)

    @property
    def constraint_violated(self) -> bool:
        """Pooled conditional collision rate above zeta by more than 3 standard errors."""
        c = self.collision
        if not c.conditional_defined:
            return False
        zeta = self.scenario.constraint.zeta
        se = math.sqrt(zeta * (1.0 - zeta) / c.busy_slots)
        return c.conditional > zeta + 3.0 * se

    @property
    def exit_status(self) -> int:
        return 2 if self.violations or self.constraint_violated else 0


def build_policy(scenario: Scenario):
    if scenario.strategy == "static":
        return static_policy(scenario.chains)
    if scenario.strategy == "myopic":
        return myopic_policy(scenario.chains)
    d = scenario.detector
    return value_iteration(scenario.chains, d.epsilon, d.delta, scenario.constraint.zeta,
                           scenario.horizon, scenario.resolution)


def requested_power(scenario: Scenario) -> float:
    """Transmit power asked of the policy engine.

    Explicit ``[policy] power`` wins; otherwise the interference bound for
    a receiver just outside the conservative detection disk.
    """
    g = scenario.gate
    if g is not None and g.power is not None:
        return g.power
    topo = scenario.topology
    if topo is not None:
        return max_power(scenario.constraint.eta, topo.R_p + topo.r_tx, topo.alpha, topo.R_p)
    return 1.0


def _seed_metrics(scenario: Scenario, seed: int, rec: TrackRecord,
                  compliance: ComplianceReport | None) -> SeedMetrics:
    stats = collision_stats(rec)
    sensed_idle = rec.sensed_idle
    geo_opp = geo_over = 0
    if scenario.topology is not None and scenario.pair is not None:
        tx, rx = scenario.pair
        for t in range(len(rec)):
            a = int(rec.action[t])
            if is_opportunity(scenario.topology, tx, rx, a, t):
                geo_opp += 1
                geo_over += is_overlooked(scenario.topology, tx, rx, a, t)
    return SeedMetrics(
        seed=seed,
        slots=len(rec),
        delivered=float(np.sum(rec.reward)),
        transmissions=int(np.sum(rec.accessed)),
        collisions=stats.collisions,
        busy_slots=stats.busy_slots,
        false_alarms=int(np.sum(sensed_idle & ~rec.observation)),
        idle_sensed=int(np.sum(sensed_idle)),
        geometric_opportunities=geo_opp,
        geometric_overlooked=int(geo_over),
        violations=len(compliance.violations) if compliance else 0,
        windowed=rec.windowed_throughput(scenario.window),
        cumulative=rec.cumulative_throughput(),
    )


def run(scenario: Scenario, policy=None) -> MetricsReport:
    """Closed-loop run for every seed of ``scenario`` (seed-sorted)."""
    policy = policy or build_policy(scenario)
    d, g = scenario.detector, scenario.gate
    power = requested_power(scenario) if g is not None else None
    per_seed, records, compliance = [], {}, {}
    for seed in sorted(scenario.seeds):
        gate = None
        if g is not None and g.enforce:
            gate = power_gate(g.policy, power, x=g.x, y=g.y, detector_class=g.detector_class)
        rec = run_tracking(scenario.chains, policy, d.epsilon, d.delta, scenario.constraint.zeta,
                           scenario.slots, np.random.default_rng(seed),
                           initial_state=scenario.initial_state, joint=scenario.joint, gate=gate)
        comp = None
        if g is not None:
            if rec.power is None:
                rec.power = np.where(rec.accessed, power, 0.0)
            comp = check_run(g.policy, rec, rec.power, x=g.x, y=g.y,
                             detector_class=g.detector_class)
            compliance[seed] = comp
        records[seed] = rec
        per_seed.append(_seed_metrics(scenario, seed, rec, comp))
    return MetricsReport(scenario, per_seed, records, compliance)


@dataclass(frozen=True)
class SweepRow:
    value: float
    delta: float
    epsilon: float
    mean_throughput: float
    throughput_stderr: float
    collision_conditional: float | None
    collision_conditional_stderr: float
    collision_unconditional: float
    collision_unconditional_stderr: float


def _apply(scenario: Scenario, axis: str, value) -> Scenario:
    if axis == "delta":
        return scenario.with_operating_delta(float(value))
    if axis == "zeta":
        return scenario.with_zeta(float(value))
    if axis == "snr":
        return scenario.with_snr(float(value))
    if axis == "horizon":
        return scenario.with_horizon(int(value))
    raise ConfigError(f"unknown sweep axis {axis!r} (choose from {', '.join(AXES)})")


def sweep_row(value, report: MetricsReport) -> SweepRow:
    c = report.collision
    return SweepRow(
        value=float(value),
        delta=report.scenario.detector.delta,
        epsilon=report.scenario.detector.epsilon,
        mean_throughput=report.mean_throughput,
        throughput_stderr=report.throughput_stderr,
        collision_conditional=c.conditional,
        collision_conditional_stderr=c.conditional_stderr(),
        collision_unconditional=c.unconditional,
        collision_unconditional_stderr=report.unconditional_stderr,
    )


def sweep(scenario: Scenario, axis: str, grid) -> list:
    """One :func:`run` per grid point, in grid order."""
    grid = list(grid)
    if not grid:
        raise ConfigError("empty sweep grid")
    return [sweep_row(v, run(_apply(scenario, axis, v))) for v in grid]


def parse_grid(spec: str) -> list:
    """``start:stop:step`` (inclusive) or a comma list."""
    spec = spec.strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid {spec!r}: expected start:stop:step")
        lo, hi, step = (float(p) for p in parts)
        if step <= 0 or hi < lo:
            raise ConfigError(f"grid {spec!r}: need step > 0 and stop >= start")
        k = int(math.floor((hi - lo) / step + 1e-9))
        return [round(lo + i * step, 10) for i in range(k + 1)]
    try:
        values = [float(v) for v in spec.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"grid {spec!r}: {exc}") from None
    if not values:
        raise ConfigError("empty sweep grid")
    return values


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _parse_cell(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        return float(text)


SWEEP_COLUMNS = ["value", "delta", "epsilon", "mean_throughput", "throughput_stderr",
                 "collision_conditional", "collision_conditional_stderr",
                 "collision_unconditional", "collision_unconditional_stderr"]


def sweep_csv(rows, axis: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([axis] + SWEEP_COLUMNS[1:])
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in SWEEP_COLUMNS])
    return buf.getvalue()


def parse_sweep_csv(text: str) -> list:
    rows = list(csv.reader(io.StringIO(text)))
    out = []
    for row in rows[1:]:
        cells = [_parse_cell(c) for c in row]
        cells = [float(c) if isinstance(c, int) else c for c in cells]
        out.append(SweepRow(*cells))
    return out


METRIC_COLUMNS = ["seed", "slots", "mean_throughput", "delivered", "transmissions",
                  "collisions", "busy_slots", "collision_conditional",
                  "collision_unconditional", "false_alarms", "idle_sensed",
                  "overlooked_rate", "geometric_overlooked_rate", "violations"]


def _metric_row(m) -> list:
    c = m.collision
    return [m.seed, m.slots, m.mean_throughput, m.delivered, m.transmissions, m.collisions,
            m.busy_slots, c.conditional, c.unconditional, m.false_alarms, m.idle_sensed,
            m.overlooked_rate, m.geometric_overlooked_rate, m.violations]


def metrics_csv(report: MetricsReport) -> str:
    """Per-seed rows followed by an ``all`` row of pooled counts.

    The pooled row's ``mean_throughput`` is the mean of the per-seed means.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for m in report.per_seed:
        w.writerow([_fmt(v) for v in _metric_row(m)])
    c = report.collision
    pooled = ["all", c.slots, report.mean_throughput,
              math.fsum(m.delivered for m in report.per_seed),
              sum(m.transmissions for m in report.per_seed), c.collisions, c.busy_slots,
              c.conditional, c.unconditional, sum(m.false_alarms for m in report.per_seed),
              sum(m.idle_sensed for m in report.per_seed), report.overlooked_rate,
              report.geometric_overlooked_rate, report.violations]
    w.writerow([_fmt(v) for v in pooled])
    return buf.getvalue()


def parse_metrics_csv(text: str) -> list:
    rows = list(csv.reader(io.StringIO(text)))
    header = rows[0]
    return [{h: (c if c == "all" else _parse_cell(c)) for h, c in zip(header, row)}
            for row in rows[1:]]


def windowed_csv(report: MetricsReport) -> str:
    window = report.scenario.window or max(1, report.scenario.slots // 20)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window", "slot_start", "slot_end", "mean"] + [f"seed_{s}" for s in report.seeds])
    for i, mean in enumerate(report.windowed):
        w.writerow([i, i * window, (i + 1) * window - 1, repr(float(mean))]
                   + [repr(float(m.windowed[i])) for m in report.per_seed])
    return buf.getvalue()


def summary_text(report: MetricsReport) -> str:
    s = report.scenario
    c = report.collision
    lines = [
        f"scenario: {Path(s.source).name}",
        f"config_sha256: {s.config_hash}",
        f"seeds: {' '.join(str(x) for x in report.seeds)}",
        f"strategy: {s.strategy}" + (f" (horizon {s.horizon})" if s.strategy == "value_iteration" else ""),
        f"slots_per_seed: {s.slots}",
        f"operating_point: epsilon={s.detector.epsilon!r} delta={s.detector.delta!r}",
        f"zeta: {s.constraint.zeta!r}",
        f"mean_throughput: {report.mean_throughput!r} (stderr {report.throughput_stderr!r})",
        f"collisions: {c.collisions} of {c.busy_slots} busy sensed slots, {c.slots} slots",
    ]
    if c.conditional_defined:
        lines.append(f"collision_conditional: {c.conditional!r}")
    else:
        lines.append("collision_conditional: undefined")
        lines.append("note: the sensed channel was never busy, so the per-busy-slot "
                     "collision rate is undefined; only the per-slot rate is reported")
    lines.append(f"collision_unconditional: {c.unconditional!r}")
    ov = report.overlooked_rate
    lines.append(f"overlooked_rate: {'undefined' if ov is None else repr(ov)}")
    if s.topology is not None:
        g = report.geometric_overlooked_rate
        lines.append(f"geometric_overlooked_rate: {'undefined' if g is None else repr(g)}")
    if s.gate is not None:
        lines.append(f"policy_violations: {report.violations}")
    lines.append(f"constraint_violated: {str(report.constraint_violated).lower()}")
    return "\n".join(lines) + "\n"


def report(metrics: MetricsReport, out_dir, formats=("csv", "summary-text")) -> list:
    """Write report files into ``out_dir``; returns the paths written."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from None
    files = {}
    for fmt in formats:
        if fmt == "csv":
            for seed in metrics.seeds:
                files[f"trace_seed{seed}.csv"] = metrics.records[seed].to_csv()
            files["metrics.csv"] = metrics_csv(metrics)
            files["windowed.csv"] = windowed_csv(metrics)
        elif fmt == "summary-text":
            files["summary.txt"] = summary_text(metrics)
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    written = []
    for name, text in files.items():
        p = out / name
        with open(p, "w", newline="") as fh:
            fh.write(text)
        written.append(p)
    return written


def throughput_vs_operating_point(scenario: Scenario, zeta: float, roc, delta_grid) -> list:
    """Sweep the detector operating point along ``roc`` at collision budget ``zeta``."""
    base = scenario.with_zeta(zeta)
    base = replace(base, detector=replace(base.detector, roc=roc, energy=None))
    return sweep(base, "delta", delta_grid)
