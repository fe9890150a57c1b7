"""Collision-constrained access decisions.

Given a detector operating at miss probability ``delta`` and a collision
budget ``zeta``, the access policy randomizes on the detector output so that
the probability of transmitting on a busy channel equals ``zeta``:

* delta > zeta: transmit on an "idle" report with probability zeta/delta,
  never on a "busy" report;
* delta < zeta: always transmit on "idle", and on "busy" with probability
  (zeta - delta)/(1 - delta);
* delta == zeta: trust the detector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class CollisionSpace(str, Enum):
    CONDITIONAL = "per-busy-slot-conditional"
    UNCONDITIONAL = "per-slot-unconditional"


@dataclass(frozen=True)
class InterferenceConstraint:
    zeta: float
    eta: float = 1.0
    collision_space: CollisionSpace = CollisionSpace.CONDITIONAL

    def __post_init__(self):
        if not 0.0 < self.zeta < 1.0:
            raise ValueError(f"zeta must lie in (0, 1), got {self.zeta}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        object.__setattr__(self, "collision_space", CollisionSpace(self.collision_space))


@dataclass(frozen=True)
class AccessPolicy:
    p_tx_given_idle_obs: float
    p_tx_given_busy_obs: float

    def __post_init__(self):
        for v in (self.p_tx_given_idle_obs, self.p_tx_given_busy_obs):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"transmit probability {v} outside [0, 1]")

    def p_tx(self, observed_idle: bool) -> float:
        return self.p_tx_given_idle_obs if observed_idle else self.p_tx_given_busy_obs

    def idle_gain(self, epsilon: float) -> float:
        """P(transmit | channel idle) for a detector with false-alarm ``epsilon``."""
        return (1.0 - epsilon) * self.p_tx_given_idle_obs + epsilon * self.p_tx_given_busy_obs

    def busy_exposure(self, delta: float) -> float:
        """P(transmit | channel busy), the conditional collision probability."""
        return delta * self.p_tx_given_idle_obs + (1.0 - delta) * self.p_tx_given_busy_obs


TRUST = AccessPolicy(1.0, 0.0)
ALWAYS = AccessPolicy(1.0, 1.0)


def optimal_access_policy(delta: float, zeta: float) -> AccessPolicy:
    if not 0.0 < zeta < 1.0:
        raise ValueError(f"zeta must lie in (0, 1), got {zeta}")
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    if delta == 1.0:
        raise ValueError(
            "detector uninformative (delta=1): constraint unsatisfiable "
            "with a positive idle-throughput guarantee"
        )
    if delta > zeta:
        return AccessPolicy(zeta / delta, 0.0)
    if delta < zeta:
        return AccessPolicy(1.0, (zeta - delta) / (1.0 - delta))
    return TRUST


def decide_access(observed_idle: bool, policy: AccessPolicy, rng: np.random.Generator) -> bool:
    return rng.random() < policy.p_tx(observed_idle)


@dataclass(frozen=True)
class CollisionStats:
    """Collision counts and rates in both probability spaces.

    ``conditional`` is None when the sensed channel was never busy.
    """

    collisions: int
    busy_slots: int
    slots: int

    @property
    def conditional(self) -> float | None:
        return self.collisions / self.busy_slots if self.busy_slots else None

    @property
    def unconditional(self) -> float:
        return self.collisions / self.slots

    @property
    def conditional_defined(self) -> bool:
        return self.busy_slots > 0

    def rate(self, space) -> float | None:
        space = CollisionSpace(space)
        return self.conditional if space is CollisionSpace.CONDITIONAL else self.unconditional

    def conditional_stderr(self) -> float:
        if not self.busy_slots:
            return math.nan
        p = self.collisions / self.busy_slots
        return math.sqrt(p * (1.0 - p) / self.busy_slots)


def collision_stats(record) -> CollisionStats:
    """Counts from a track record (needs ``accessed``, ``sensed_idle``)."""
    if len(record) == 0:
        raise ValueError("empty record")
    accessed = np.asarray(record.accessed, dtype=bool)
    busy = ~np.asarray(record.sensed_idle, dtype=bool)
    return CollisionStats(int(np.sum(accessed & busy)), int(np.sum(busy)), len(record))


def collision_rate(record, space=CollisionSpace.CONDITIONAL) -> tuple[float | None, CollisionStats]:
    stats = collision_stats(record)
    return stats.rate(space), stats
