"""Disk interference model for spectrum opportunities.

Distances equal to a radius count as inside the disk (blocking).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum


class Role(str, Enum):
    TRANSMITTING = "T"
    RECEIVING = "R"
    SILENT = "-"


@dataclass(frozen=True)
class PrimaryNode:
    """A primary user with a per-channel activity schedule.

    ``schedule`` maps channel -> string of role codes (``T``, ``R``, ``-``),
    one per slot, repeated cyclically. Channels absent from the schedule are
    silent.
    """

    id: str
    x: float
    y: float
    schedule: dict = field(default_factory=dict)

    def role(self, channel: int, slot: int) -> Role:
        codes = self.schedule.get(channel)
        if not codes:
            return Role.SILENT
        return Role(codes[slot % len(codes)])


@dataclass(frozen=True)
class SecondaryNode:
    id: str
    x: float
    y: float


def distance(a, b) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


@dataclass(frozen=True)
class Topology:
    """Node positions, radii and power-control parameters.

    r_tx: interference radius of a secondary transmitter (m)
    r_rx: vulnerability radius of a secondary receiver (m)
    R_p: primary transmission range (m)
    alpha: path-loss exponent
    eta: maximum interference power at a primary receiver (W)
    """

    primaries: tuple
    secondaries: tuple
    pairs: tuple = ()
    r_tx: float = 1.0
    r_rx: float = 1.0
    R_p: float = 0.0
    alpha: float = 2.0
    eta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "primaries", tuple(self.primaries))
        object.__setattr__(self, "secondaries", tuple(self.secondaries))
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))
        if not (self.r_tx > 0 and self.r_rx > 0):
            raise ValueError("r_tx and r_rx must be positive")
        if self.R_p < 0:
            raise ValueError("R_p must be nonnegative")
        if not (self.alpha > 0 and self.eta > 0):
            raise ValueError("alpha and eta must be positive")
        ids = [s.id for s in self.secondaries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate secondary id")
        for tx, rx in self.pairs:
            self.secondary(tx)
            self.secondary(rx)

    def secondary(self, node_id: str) -> SecondaryNode:
        for s in self.secondaries:
            if s.id == node_id:
                return s
        raise KeyError(f"unknown node id {node_id!r}")

    def active(self, channel: int, slot: int, role: Role) -> list:
        return [p for p in self.primaries if p.role(channel, slot) is role]

    def channels(self) -> set:
        return {c for p in self.primaries for c in p.schedule}

    def period(self) -> int:
        """Least common multiple of all schedule lengths."""
        out = 1
        for p in self.primaries:
            for codes in p.schedule.values():
                out = math.lcm(out, len(codes))
        return out

    def check_receivers(self, channel: int, slot: int) -> None:
        """Every active primary receiver needs an active transmitter within R_p."""
        txs = self.active(channel, slot, Role.TRANSMITTING)
        for rx in self.active(channel, slot, Role.RECEIVING):
            if not any(distance(rx, t) <= self.R_p for t in txs):
                raise ValueError(
                    f"primary receiver {rx.id!r} on channel {channel} slot {slot} "
                    f"has no transmitter within R_p={self.R_p}"
                )


def _any_within(nodes, center, radius: float) -> bool:
    return any(distance(n, center) <= radius for n in nodes)


def is_opportunity(topo: Topology, tx: str, rx: str, channel: int, slot: int) -> bool:
    """Ground truth: A may send to B without hitting or being hit by primaries."""
    a, b = topo.secondary(tx), topo.secondary(rx)
    if _any_within(topo.active(channel, slot, Role.RECEIVING), a, topo.r_tx):
        return False
    return not _any_within(topo.active(channel, slot, Role.TRANSMITTING), b, topo.r_rx)


def conservative_detect(topo: Topology, tx: str, channel: int, slot: int) -> bool:
    """Transmitter-side clearance from primary transmitters within R_p + r_tx."""
    a = topo.secondary(tx)
    return not _any_within(topo.active(channel, slot, Role.TRANSMITTING), a, topo.R_p + topo.r_tx)


def rts_cts_opportunity(topo: Topology, tx: str, rx: str, channel: int, slot: int,
                        tx_side_mode: str = "exact") -> bool:
    """Two-step RTS/CTS detection.

    The transmitter clears its side (no primary receiver within r_tx in
    ``exact`` mode, or via :func:`conservative_detect`); a received RTS then
    certifies that no primary transmitter is within r_rx of the receiver.
    """
    a, b = topo.secondary(tx), topo.secondary(rx)
    if tx_side_mode == "exact":
        tx_clear = not _any_within(topo.active(channel, slot, Role.RECEIVING), a, topo.r_tx)
    elif tx_side_mode == "conservative":
        tx_clear = conservative_detect(topo, tx, channel, slot)
    else:
        raise ValueError(f"unknown tx_side_mode {tx_side_mode!r}")
    if not tx_clear:
        return False
    return not _any_within(topo.active(channel, slot, Role.TRANSMITTING), b, topo.r_rx)


def is_overlooked(topo: Topology, tx: str, rx: str, channel: int, slot: int) -> bool:
    """True opportunity rejected by conservative transmitter detection."""
    return is_opportunity(topo, tx, rx, channel, slot) and not conservative_detect(topo, tx, channel, slot)


def max_power(eta: float, d: float, alpha: float, R_p: float | None = None) -> float:
    """Largest secondary transmit power keeping interference below eta.

    With ``R_p`` given, ``d`` is a primary-transmitter detection range and
    only ``d - R_p`` of it protects receivers.
    """
    if eta <= 0 or alpha <= 0:
        raise ValueError("eta and alpha must be positive")
    if d <= 0:
        raise ValueError("detection range must be positive")
    if R_p is None:
        return eta * d ** alpha
    if d <= R_p:
        return 0.0
    return eta * (d - R_p) ** alpha


def random_topology(rng, *, area: float = 20.0, primaries: int = 3, max_receivers: int = 2,
                    r_tx: float | None = None, r_rx: float | None = None,
                    R_p: float | None = None) -> Topology:
    """Random single-slot topology on channel 0 with secondaries ``A`` and ``B``.

    Each primary transmitter gets up to ``max_receivers`` receivers placed
    uniformly in its R_p disk, so the receiver invariant holds. Radii not
    given are drawn uniformly from [1, 6].
    """
    r_tx = float(rng.uniform(1, 6)) if r_tx is None else r_tx
    r_rx = float(rng.uniform(1, 6)) if r_rx is None else r_rx
    R_p = float(rng.uniform(1, 6)) if R_p is None else R_p
    nodes = []
    for k in range(primaries):
        x, y = rng.uniform(0, area, 2)
        nodes.append(PrimaryNode(f"T{k}", float(x), float(y), {0: "T"}))
        for j in range(int(rng.integers(0, max_receivers + 1))):
            rad = R_p * math.sqrt(rng.random()) * (1.0 - 1e-9)
            ang = rng.uniform(0, 2 * math.pi)
            nodes.append(PrimaryNode(f"R{k}_{j}", float(x + rad * math.cos(ang)),
                                     float(y + rad * math.sin(ang)), {0: "R"}))
    (ax, ay), (bx, by) = rng.uniform(0, area, (2, 2))
    secs = [SecondaryNode("A", float(ax), float(ay)), SecondaryNode("B", float(bx), float(by))]
    return Topology(nodes, secs, [("A", "B")], r_tx=r_tx, r_rx=r_rx, R_p=R_p)
