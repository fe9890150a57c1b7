"""Scenario files.

Flat sectioned text, one ``key = value`` per line, ``#`` comments.
Repeatable keys (``channel``, ``joint_row``, ``primary``, ``secondary``)
may appear several times. Example::

    [channels]
    channel = 0.95 0.02 1.0     # p_ii p_bi bandwidth
    channel = 0.90 0.03 1.5
    initial_state = busy busy

    [detector]
    epsilon = 0.1
    delta = 0.1

    [constraint]
    zeta = 0.1

    [strategy]
    kind = myopic

    [run]
    slots = 1000
    seeds = 1-10

Detector alternatives: ``roc = <file> | chance | gaussian:<separation>`` or
``energy_snr``/``energy_samples`` (analytic energy-detector ROC), each with
an optional ``operating_delta`` (defaults to zeta).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .access import InterferenceConstraint
from .channel import ChannelChain, validate_joint_matrix
from .detector import EnergyDetectorSpec, RocCurve, chance_roc, energy_roc_analytic, gaussian_shift_roc
from .geometry import PrimaryNode, SecondaryNode, Topology
from .policy import PolicyError, PolicySet, load_policy

SECTIONS = {
    "channels": {"channel", "initial_state", "joint_row"},
    "detector": {"epsilon", "delta", "roc", "operating_delta", "energy_snr", "energy_samples"},
    "constraint": {"zeta", "eta", "collision_space"},
    "strategy": {"kind", "horizon", "resolution"},
    "topology": {"r_tx", "r_rx", "R_p", "alpha", "eta", "primary", "secondary", "pair"},
    "policy": {"file", "detector_class", "power", "x", "y", "enforce"},
    "run": {"slots", "seeds", "window", "output"},
}
REPEATABLE = {"channel", "joint_row", "primary", "secondary", "pair"}
BUNDLED = Path(__file__).parent / "scenarios"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Detector:
    """Operating point ``(epsilon, delta)`` and the ROC it was read from."""

    epsilon: float
    delta: float
    roc: RocCurve | None = None
    energy: EnergyDetectorSpec | None = None
    operating_delta: float | None = None


@dataclass(frozen=True)
class PolicyGate:
    policy: PolicySet
    detector_class: str = ""
    power: float | None = None
    x: float = 0.0
    y: float = 0.0
    enforce: bool = True


@dataclass(frozen=True)
class Scenario:
    chains: tuple
    detector: Detector
    constraint: InterferenceConstraint
    strategy: str = "myopic"
    horizon: int = 1
    resolution: int = 33
    slots: int = 1000
    seeds: tuple = (1,)
    window: int | None = None
    initial_state: tuple | None = None
    joint: np.ndarray | None = field(default=None, compare=False)
    topology: Topology | None = None
    pair: tuple | None = None
    gate: PolicyGate | None = None
    output: str | None = None
    source: str = "<memory>"
    config_hash: str = ""

    @property
    def n(self) -> int:
        return len(self.chains)

    def with_seeds(self, seeds) -> "Scenario":
        return replace(self, seeds=tuple(int(s) for s in seeds))

    def with_zeta(self, zeta: float) -> "Scenario":
        constraint = replace(self.constraint, zeta=zeta)
        return replace(self, constraint=constraint, detector=_operating(self.detector, zeta))

    def with_operating_delta(self, delta: float) -> "Scenario":
        d = self.detector
        if d.roc is None:
            raise ConfigError("sweeping delta needs an ROC detector (roc= or energy_*)")
        d = replace(d, operating_delta=delta)
        return replace(self, detector=_operating(d, self.constraint.zeta))

    def with_snr(self, snr: float) -> "Scenario":
        d = self.detector
        if d.energy is None:
            raise ConfigError("sweeping snr needs an energy detector (energy_snr=)")
        spec = replace(d.energy, snr=snr)
        d = replace(d, energy=spec, roc=energy_roc_analytic(spec))
        return replace(self, detector=_operating(d, self.constraint.zeta))

    def with_strategy(self, kind: str) -> "Scenario":
        return replace(self, strategy=kind)

    def with_horizon(self, horizon: int) -> "Scenario":
        if self.strategy != "value_iteration":
            raise ConfigError("sweeping horizon needs strategy kind = value_iteration")
        return replace(self, horizon=int(horizon))


def _operating(d: Detector, zeta: float) -> Detector:
    if d.roc is None:
        return d
    delta = d.operating_delta if d.operating_delta is not None else zeta
    return replace(d, delta=delta, epsilon=d.roc.epsilon_at(delta))


def config_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _parse_sections(text: str, source: str) -> dict:
    sections: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{source}:{lineno}: malformed section header {line!r}")
            current = line[1:-1].strip()
            if current not in SECTIONS:
                raise ConfigError(f"{source}:{lineno}: unknown section [{current}]")
            if current in sections:
                raise ConfigError(f"{source}:{lineno}: section [{current}] repeated")
            sections[current] = {}
            continue
        if current is None:
            raise ConfigError(f"{source}:{lineno}: key outside any section")
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SECTIONS[current]:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} in [{current}]")
        entries = sections[current].setdefault(key, [])
        if entries and key not in REPEATABLE:
            raise ConfigError(f"{source}:{lineno}: key {key!r} given twice")
        entries.append((value, lineno))
    return sections


class _Reader:
    """Typed access to parsed entries with line-numbered errors."""

    def __init__(self, sections: dict, source: str):
        self.sections = sections
        self.source = source

    def fail(self, lineno, msg):
        where = f"{self.source}:{lineno}" if lineno else self.source
        raise ConfigError(f"{where}: {msg}")

    def entries(self, section, key):
        return self.sections.get(section, {}).get(key, [])

    def get(self, section, key, conv, default=None, required=False):
        entries = self.entries(section, key)
        if not entries:
            if required:
                self.fail(None, f"missing required key {key!r} in [{section}]")
            return default
        value, lineno = entries[0]
        try:
            return conv(value)
        except (ValueError, TypeError) as exc:
            self.fail(lineno, f"bad value for {key!r}: {exc}")

    def line(self, section, key):
        entries = self.entries(section, key)
        return entries[0][1] if entries else None


def _seeds(text: str) -> tuple:
    out = []
    for part in text.replace(",", " ").split():
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError("empty seed list")
    return tuple(out)


def _state_word(word: str) -> bool:
    w = word.lower()
    if w in ("idle", "1"):
        return True
    if w in ("busy", "0"):
        return False
    raise ValueError(f"state must be idle/busy, got {word!r}")


def _flag(text: str) -> bool:
    t = text.lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _probability(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{v} outside [0, 1]")
    return v


def _roc(spec: str, base: Path) -> RocCurve:
    if spec == "chance":
        return chance_roc()
    if spec.startswith("gaussian:"):
        return gaussian_shift_roc(float(spec.split(":", 1)[1]))
    path = Path(spec)
    if not path.is_absolute():
        path = base / path
    if not path.exists():
        raise ValueError(f"ROC file {spec!r} not found")
    return RocCurve.load(path)


def parse_scenario(text: str, source: str = "<memory>", base: Path | None = None,
                   raw: bytes | None = None) -> Scenario:
    base = base or Path(".")
    r = _Reader(_parse_sections(text, source), source)
    for section in ("channels", "detector", "constraint"):
        if section not in r.sections:
            r.fail(None, f"missing section [{section}]")

    chains = []
    for value, lineno in r.entries("channels", "channel"):
        parts = value.split()
        if len(parts) not in (2, 3):
            r.fail(lineno, "channel needs 'p_ii p_bi [bandwidth]'")
        try:
            nums = [float(p) for p in parts]
            chains.append(ChannelChain(*nums))
        except ValueError as exc:
            r.fail(lineno, str(exc))
    if not chains:
        r.fail(None, "no channel declared in [channels]")
    n = len(chains)

    initial_state = r.get("channels", "initial_state",
                          lambda v: tuple(_state_word(w) for w in v.split()))
    if initial_state is not None and len(initial_state) != n:
        r.fail(r.line("channels", "initial_state"),
               f"initial_state lists {len(initial_state)} channels, expected {n}")

    joint = None
    rows = r.entries("channels", "joint_row")
    if rows:
        try:
            joint = validate_joint_matrix([[float(x) for x in v.split()] for v, _ in rows], n)
        except ValueError as exc:
            r.fail(rows[0][1], str(exc))

    try:
        constraint = InterferenceConstraint(
            zeta=r.get("constraint", "zeta", float, required=True),
            eta=r.get("constraint", "eta", float, 1.0),
            collision_space=r.get("constraint", "collision_space", str, "per-busy-slot-conditional"),
        )
    except ValueError as exc:
        r.fail(r.line("constraint", "zeta"), str(exc))
    zeta = constraint.zeta

    roc_spec = r.get("detector", "roc", str)
    snr = r.get("detector", "energy_snr", float)
    op = r.get("detector", "operating_delta", _probability)
    if roc_spec is not None and snr is not None:
        r.fail(r.line("detector", "roc"), "give either roc= or energy_snr=, not both")
    if roc_spec is not None or snr is not None:
        energy = None
        if roc_spec is not None:
            roc = r.get("detector", "roc", lambda v: _roc(v, base))
        else:
            samples = r.get("detector", "energy_samples", int, required=True)
            try:
                energy = EnergyDetectorSpec(snr, samples)
            except ValueError as exc:
                r.fail(r.line("detector", "energy_snr"), str(exc))
            roc = energy_roc_analytic(energy)
        try:
            detector = _operating(Detector(0.0, 0.0, roc, energy, op), zeta)
        except ValueError as exc:
            r.fail(r.line("detector", "operating_delta"), str(exc))
    else:
        detector = Detector(
            r.get("detector", "epsilon", _probability, required=True),
            r.get("detector", "delta", _probability, required=True),
        )
    if detector.delta >= 1.0:
        r.fail(r.line("detector", "delta"), "delta must be below 1")

    kind = r.get("strategy", "kind", str, "myopic")
    if kind not in ("static", "myopic", "value_iteration"):
        r.fail(r.line("strategy", "kind"), f"unknown strategy {kind!r}")
    horizon = r.get("strategy", "horizon", int, 1)
    resolution = r.get("strategy", "resolution", int, 33)
    if horizon < 1:
        r.fail(r.line("strategy", "horizon"), "horizon must be at least 1")
    if resolution < 2:
        r.fail(r.line("strategy", "resolution"), "resolution must be at least 2")
    if kind == "value_iteration" and n > 4:
        r.fail(r.line("strategy", "kind"), "value_iteration supports at most 4 channels")

    topology, pair = _topology(r, n) if "topology" in r.sections else (None, None)
    gate = _gate(r, base) if "policy" in r.sections else None

    slots = r.get("run", "slots", int, 1000)
    if slots < 1:
        r.fail(r.line("run", "slots"), "slots must be positive")
    window = r.get("run", "window", int)
    if window is not None and not 1 <= window <= slots:
        r.fail(r.line("run", "window"), "window must lie in [1, slots]")

    return Scenario(
        chains=tuple(chains), detector=detector, constraint=constraint, strategy=kind,
        horizon=horizon, resolution=resolution, slots=slots,
        seeds=r.get("run", "seeds", _seeds, (1,)), window=window,
        initial_state=initial_state, joint=joint, topology=topology, pair=pair, gate=gate,
        output=r.get("run", "output", str), source=source,
        config_hash=config_hash(raw if raw is not None else text.encode()),
    )


def _topology(r: _Reader, n: int):
    primaries, secondaries = [], []
    for value, lineno in r.entries("topology", "primary"):
        parts = value.split()
        if len(parts) < 3:
            r.fail(lineno, "primary needs 'id x y [channel:roles ...]'")
        sched = {}
        try:
            for tok in parts[3:]:
                c, codes = tok.split(":")
                c = int(c)
                if not 0 <= c < n:
                    raise ValueError(f"channel {c} out of range")
                if not codes or set(codes) - set("TR-"):
                    raise ValueError(f"roles must use T, R, - (got {codes!r})")
                sched[c] = codes
            primaries.append(PrimaryNode(parts[0], float(parts[1]), float(parts[2]), sched))
        except ValueError as exc:
            r.fail(lineno, str(exc))
    for value, lineno in r.entries("topology", "secondary"):
        parts = value.split()
        if len(parts) != 3:
            r.fail(lineno, "secondary needs 'id x y'")
        try:
            secondaries.append(SecondaryNode(parts[0], float(parts[1]), float(parts[2])))
        except ValueError as exc:
            r.fail(lineno, str(exc))
    pairs = []
    for value, lineno in r.entries("topology", "pair"):
        parts = value.split()
        if len(parts) != 2:
            r.fail(lineno, "pair needs 'tx rx'")
        pairs.append((tuple(parts), lineno))
    try:
        topo = Topology(
            primaries, secondaries, [p for p, _ in pairs],
            r_tx=r.get("topology", "r_tx", float, 1.0),
            r_rx=r.get("topology", "r_rx", float, 1.0),
            R_p=r.get("topology", "R_p", float, 0.0),
            alpha=r.get("topology", "alpha", float, 2.0),
            eta=r.get("topology", "eta", float, 1.0),
        )
        for c in range(n):
            for t in range(topo.period()):
                topo.check_receivers(c, t)
    except (ValueError, KeyError) as exc:
        r.fail(pairs[0][1] if pairs else None, str(exc))
    return topo, (topo.pairs[0] if topo.pairs else None)


def _gate(r: _Reader, base: Path) -> PolicyGate:
    path = r.get("policy", "file", str, required=True)
    p = Path(path) if Path(path).is_absolute() else base / path
    if not p.exists():
        r.fail(r.line("policy", "file"), f"policy file {path!r} not found")
    try:
        policy = load_policy(p)
    except PolicyError as exc:
        r.fail(r.line("policy", "file"), f"{p.name}: {exc}")
    return PolicyGate(
        policy=policy,
        detector_class=r.get("policy", "detector_class", str, ""),
        power=r.get("policy", "power", float),
        x=r.get("policy", "x", float, 0.0),
        y=r.get("policy", "y", float, 0.0),
        enforce=r.get("policy", "enforce", _flag, True),
    )


def resolve(path) -> Path:
    """Find a scenario, graph or policy file, falling back to the bundled fixtures."""
    p = Path(path)
    if p.exists():
        return p
    bundled = BUNDLED / p.name
    if bundled.exists():
        return bundled
    raise ConfigError(f"{path}: no such file")


def load_scenario(path) -> Scenario:
    p = resolve(path)
    raw = p.read_bytes()
    return parse_scenario(raw.decode(), str(p), p.parent, raw)
