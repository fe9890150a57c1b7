"""Priority-ordered regulatory rules over transmission requests.

A policy file holds one record per line::

    default effect=deny
    rule id=base priority=0 effect=permit cap.power=1.0 cap.duration=10
    rule id=tv priority=10 match.band=2 effect=deny
    rule id=hq priority=5 match.detector_class=tier2 effect=permit cap.power=4

Match keys: ``match.band`` (channel list), ``match.region`` (axis-aligned
rectangle ``x0,y0,x1,y1``), ``match.time`` (inclusive slot range ``t0-t1``),
``match.detector_class`` (name list). Cap keys: ``cap.power`` (W),
``cap.duration`` (slots), ``cap.bands`` (channel list).
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path


class PolicyError(ValueError):
    pass


class AmbiguousPolicyError(PolicyError):
    pass


class Effect(str, Enum):
    PERMIT = "permit"
    DENY = "deny"


class Verdict(str, Enum):
    YES = "yes"
    NO = "no"
    YES_WITH_CONSTRAINTS = "yes_with_constraints"


@dataclass(frozen=True)
class TransmissionRequest:
    band: int
    power: float
    duration: int = 1
    x: float = 0.0
    y: float = 0.0
    time: int = 0
    detector_class: str = ""

    def __post_init__(self):
        if self.power < 0:
            raise ValueError("power must be nonnegative")
        if self.duration < 1:
            raise ValueError("duration must be at least 1 slot")


@dataclass(frozen=True)
class Caps:
    power: float | None = None
    duration: int | None = None
    bands: frozenset | None = None

    def __post_init__(self):
        if self.power is not None and self.power < 0:
            raise ValueError("cap.power must be nonnegative")
        if self.duration is not None and self.duration < 0:
            raise ValueError("cap.duration must be nonnegative")


@dataclass(frozen=True)
class PolicyRule:
    id: str
    priority: int
    effect: Effect
    bands: frozenset | None = None
    region: tuple | None = None
    time: tuple | None = None
    detector_classes: frozenset | None = None
    caps: Caps = field(default_factory=Caps)

    def matches(self, req: TransmissionRequest) -> bool:
        if self.bands is not None and req.band not in self.bands:
            return False
        if self.region is not None:
            x0, y0, x1, y1 = self.region
            if not (x0 <= req.x <= x1 and y0 <= req.y <= y1):
                return False
        if self.time is not None and not self.time[0] <= req.time <= self.time[1]:
            return False
        if self.detector_classes is not None and req.detector_class not in self.detector_classes:
            return False
        return True


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    caps: dict = field(default_factory=dict)
    rule: str | None = None
    reason: str = ""

    def __str__(self):
        if self.verdict is Verdict.YES_WITH_CONSTRAINTS:
            body = ", ".join(f"{k} <= {v}" for k, v in sorted(self.caps.items()))
            return f"yes_with_constraints({body})"
        return self.verdict.value


@dataclass(frozen=True)
class PolicySet:
    rules: tuple
    default: Effect = Effect.DENY

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        object.__setattr__(self, "default", Effect(self.default))


def evaluate(policy: PolicySet, req: TransmissionRequest) -> Decision:
    """Decision of the highest-priority matching rule.

    Equal-priority matches that disagree (effect or caps) raise
    :class:`AmbiguousPolicyError`. A permit whose power or duration cap is
    exceeded answers ``yes_with_constraints`` with the binding caps; a band
    outside ``cap.bands`` cannot be fixed by tightening and answers ``no``.
    """
    matches = [r for r in policy.rules if r.matches(req)]
    if not matches:
        verdict = Verdict.YES if policy.default is Effect.PERMIT else Verdict.NO
        return Decision(verdict, reason="default")
    top = max(r.priority for r in matches)
    winners = sorted((r for r in matches if r.priority == top), key=lambda r: r.id)
    if len({(r.effect, r.caps) for r in winners}) > 1:
        ids = ", ".join(r.id for r in winners)
        raise AmbiguousPolicyError(f"ambiguous policy: conflicting rules at priority {top}: {ids}")
    rule = winners[0]
    if rule.effect is Effect.DENY:
        return Decision(Verdict.NO, rule=rule.id, reason="deny rule")
    caps = rule.caps
    if caps.bands is not None and req.band not in caps.bands:
        return Decision(Verdict.NO, rule=rule.id, reason="band outside cap.bands")
    if caps.duration is not None and caps.duration < 1:
        return Decision(Verdict.NO, rule=rule.id, reason="cap.duration below one slot")
    if caps.power is not None and caps.power == 0:
        return Decision(Verdict.NO, rule=rule.id, reason="cap.power is zero")
    binding = {}
    if caps.power is not None and req.power > caps.power:
        binding["power"] = caps.power
    if caps.duration is not None and req.duration > caps.duration:
        binding["duration"] = caps.duration
    if binding:
        return Decision(Verdict.YES_WITH_CONSTRAINTS, binding, rule.id, "cap exceeded")
    return Decision(Verdict.YES, rule=rule.id)


def tighten(req: TransmissionRequest, decision: Decision) -> TransmissionRequest:
    """Request reduced to the caps returned with ``yes_with_constraints``."""
    out = req
    if "power" in decision.caps:
        out = replace(out, power=min(out.power, decision.caps["power"]))
    if "duration" in decision.caps:
        out = replace(out, duration=min(out.duration, int(decision.caps["duration"])))
    return out


def _ints(text: str) -> frozenset:
    return frozenset(int(v) for v in text.split(",") if v)


def _parse_rule(fields: dict, lineno: int) -> PolicyRule:
    known = {"id", "priority", "effect", "match.band", "match.region", "match.time",
             "match.detector_class", "cap.power", "cap.duration", "cap.bands"}
    unknown = set(fields) - known
    if unknown:
        raise PolicyError(f"line {lineno}: unknown field {sorted(unknown)[0]!r}")
    for key in ("priority", "effect"):
        if key not in fields:
            raise PolicyError(f"line {lineno}: rule needs {key}=")
    try:
        region = None
        if "match.region" in fields:
            region = tuple(float(v) for v in fields["match.region"].split(","))
            if len(region) != 4:
                raise ValueError("match.region needs x0,y0,x1,y1")
        time = None
        if "match.time" in fields:
            lo, hi = fields["match.time"].split("-")
            time = (int(lo), int(hi))
        caps = Caps(
            power=float(fields["cap.power"]) if "cap.power" in fields else None,
            duration=int(fields["cap.duration"]) if "cap.duration" in fields else None,
            bands=_ints(fields["cap.bands"]) if "cap.bands" in fields else None,
        )
        return PolicyRule(
            id=fields.get("id", f"line{lineno}"),
            priority=int(fields["priority"]),
            effect=Effect(fields["effect"]),
            bands=_ints(fields["match.band"]) if "match.band" in fields else None,
            region=region,
            time=time,
            detector_classes=(frozenset(fields["match.detector_class"].split(","))
                              if "match.detector_class" in fields else None),
            caps=caps,
        )
    except ValueError as exc:
        raise PolicyError(f"line {lineno}: {exc}") from None


def _fields(tokens, lineno: int) -> dict:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise PolicyError(f"line {lineno}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        if k in out:
            raise PolicyError(f"line {lineno}: duplicate field {k!r}")
        out[k] = v
    return out


def parse_policy(text: str) -> PolicySet:
    rules, default, ids = [], None, set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            tokens = shlex.split(line)
        except ValueError as exc:
            raise PolicyError(f"line {lineno}: {exc}") from None
        kind = tokens[0]
        if kind not in ("default", "rule"):
            raise PolicyError(f"line {lineno}: unknown record type {kind!r}")
        fields = _fields(tokens[1:], lineno)
        if kind == "default":
            if default is not None:
                raise PolicyError(f"line {lineno}: default declared twice")
            try:
                default = Effect(fields.get("effect", ""))
            except ValueError:
                raise PolicyError(f"line {lineno}: default needs effect=permit|deny") from None
        elif kind == "rule":
            rule = _parse_rule(fields, lineno)
            if rule.id in ids:
                raise PolicyError(f"line {lineno}: duplicate rule id {rule.id!r}")
            ids.add(rule.id)
            rules.append(rule)
    if default is None:
        raise PolicyError("policy declares no default effect")
    return PolicySet(tuple(rules), default)


def load_policy(path) -> PolicySet:
    return parse_policy(Path(path).read_text())


def parse_request(text: str) -> TransmissionRequest:
    """Request from ``key=value`` tokens (commas or whitespace separated)."""
    fields = _fields(text.replace(",", " ").split(), 1)
    conv = {"band": int, "power": float, "duration": int, "x": float, "y": float,
            "time": int, "detector_class": str}
    unknown = set(fields) - set(conv)
    if unknown:
        raise PolicyError(f"unknown request field {sorted(unknown)[0]!r}")
    for key in ("band", "power"):
        if key not in fields:
            raise PolicyError(f"request needs {key}=")
    try:
        return TransmissionRequest(**{k: conv[k](v) for k, v in fields.items()})
    except ValueError as exc:
        raise PolicyError(str(exc)) from None


@dataclass(frozen=True)
class Violation:
    slot: int
    kind: str  # "deny" or "cap"
    detail: str


@dataclass(frozen=True)
class ComplianceReport:
    slots_checked: int
    transmissions: int
    violations: tuple

    @property
    def hard_denials(self) -> int:
        return sum(1 for v in self.violations if v.kind == "deny")

    @property
    def exit_status(self) -> int:
        return 2 if self.violations else 0


def check_run(policy: PolicySet, record, power, *, x: float = 0.0, y: float = 0.0,
              detector_class: str = "", duration: int = 1) -> ComplianceReport:
    """Replay every transmitted slot of a track record through ``policy``."""
    power = list(power)
    if len(power) != len(record):
        raise ValueError(f"trace lengths differ: record {len(record)}, power {len(power)}")
    violations = []
    tx = 0
    for t in range(len(record)):
        if not record.accessed[t]:
            continue
        tx += 1
        req = TransmissionRequest(int(record.action[t]), float(power[t]), duration,
                                  x, y, t, detector_class)
        d = evaluate(policy, req)
        if d.verdict is Verdict.NO:
            violations.append(Violation(t, "deny", d.reason))
        elif d.verdict is Verdict.YES_WITH_CONSTRAINTS:
            detail = ", ".join(f"{k} {getattr(req, k)} > {v}" for k, v in sorted(d.caps.items()))
            violations.append(Violation(t, "cap", detail))
    return ComplianceReport(len(record), tx, tuple(violations))


def power_gate(policy: PolicySet, power: float, *, x: float = 0.0, y: float = 0.0,
               detector_class: str = "", duration: int = 1):
    """Transmission gate for :func:`osasim.tracker.run_tracking`.

    Denied requests are suppressed; constrained ones go out at the capped
    power.
    """
    def gate(slot: int, channel: int):
        req = TransmissionRequest(channel, power, duration, x, y, slot, detector_class)
        d = evaluate(policy, req)
        if d.verdict is Verdict.NO:
            return False, 0.0
        if d.verdict is Verdict.YES_WITH_CONSTRAINTS:
            req = tighten(req, d)
            if evaluate(policy, req).verdict is not Verdict.YES:
                return False, 0.0
        return True, req.power

    return gate
