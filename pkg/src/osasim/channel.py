"""Primary-user channel occupancy as a Markov process.

Each channel is a two-state (idle/busy) chain. The default joint process is
the product of independent per-channel chains; an explicit 2^N x 2^N joint
transition matrix may be supplied instead for small N.

Joint state index convention: bit ``i`` of the index is set when channel
``i`` is idle.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

IDLE = True
BUSY = False

MAX_JOINT_CHANNELS = 8


class DegenerateChainError(ValueError):
    """Raised when a chain has no unique stationary distribution."""


@dataclass(frozen=True)
class ChannelChain:
    """Two-state occupancy chain of one channel.

    p_ii is P(idle -> idle), p_bi is P(busy -> idle); bandwidth is the reward
    (bits per slot) earned by a successful transmission on the channel.
    """

    p_ii: float
    p_bi: float
    bandwidth: float = 1.0

    def __post_init__(self):
        for name in ("p_ii", "p_bi"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    @property
    def matrix(self) -> np.ndarray:
        """Row-stochastic matrix with state order (busy, idle)."""
        return np.array([[1.0 - self.p_bi, self.p_bi],
                         [1.0 - self.p_ii, self.p_ii]])


@dataclass(frozen=True)
class Stationary:
    """Stationary idle probability, with a flag for the periodic chain."""

    idle: float
    degenerate: bool = False

    def __float__(self):
        return self.idle


def stationary_distribution(chain: ChannelChain) -> Stationary:
    """Stationary probability that ``chain`` is idle.

    The periodic chain (p_ii=0, p_bi=1) returns 0.5 flagged as degenerate;
    the reducible chain (p_ii=1, p_bi=0) has no unique answer and raises.
    """
    if chain.p_ii == 1.0 and chain.p_bi == 0.0:
        raise DegenerateChainError("no unique stationary distribution")
    if chain.p_ii == 0.0 and chain.p_bi == 1.0:
        return Stationary(0.5, degenerate=True)
    return Stationary(chain.p_bi / (1.0 - chain.p_ii + chain.p_bi))


def predict(belief_idle: float, chain: ChannelChain) -> float:
    """One-slot-ahead probability of idle given current idle probability."""
    if not 0.0 <= belief_idle <= 1.0:
        raise ValueError(f"belief must lie in [0, 1], got {belief_idle}")
    return belief_idle * chain.p_ii + (1.0 - belief_idle) * chain.p_bi


def state_index(state) -> int:
    return int(sum(1 << i for i, idle in enumerate(state) if idle))


def index_state(index: int, n: int) -> tuple[bool, ...]:
    return tuple(bool((index >> i) & 1) for i in range(n))


def product_matrix(chains) -> np.ndarray:
    """Joint 2^N x 2^N transition matrix of independent chains."""
    n = len(chains)
    size = 1 << n
    out = np.ones((size, size))
    for s in range(size):
        for t in range(size):
            for i, c in enumerate(chains):
                src, dst = (s >> i) & 1, (t >> i) & 1
                out[s, t] *= c.matrix[src, dst]
    return out


def validate_joint_matrix(matrix, n: int, tol: float = 1e-9) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if n > MAX_JOINT_CHANNELS:
        raise ValueError(f"joint-matrix mode supports at most {MAX_JOINT_CHANNELS} channels")
    size = 1 << n
    if m.shape != (size, size):
        raise ValueError(f"joint matrix must be {size}x{size}, got {m.shape}")
    if np.any(m < 0):
        raise ValueError("joint matrix has negative entries")
    bad = np.flatnonzero(np.abs(m.sum(axis=1) - 1.0) > tol)
    if bad.size:
        raise ValueError(f"joint matrix row {int(bad[0])} does not sum to 1")
    return m


@dataclass
class OccupancyProcess:
    """Ground-truth occupancy of N channels.

    ``state[i]`` is True when channel i is idle. When ``joint`` is set, the
    process evolves by that matrix instead of the per-channel chains (the
    chains still supply bandwidths).
    """

    chains: tuple[ChannelChain, ...]
    state: tuple[bool, ...]
    slot_index: int = 0
    joint: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.chains = tuple(self.chains)
        self.state = tuple(bool(s) for s in self.state)
        if len(self.state) != len(self.chains):
            raise ValueError("state length must equal the number of channels")
        if self.joint is not None:
            self.joint = validate_joint_matrix(self.joint, len(self.chains))

    @property
    def n(self) -> int:
        return len(self.chains)

    @classmethod
    def from_stationary(cls, chains, rng: np.random.Generator, joint=None) -> "OccupancyProcess":
        """Start from a draw of the stationary distribution."""
        chains = tuple(chains)
        if joint is None:
            pi = [stationary_distribution(c).idle for c in chains]
            state = tuple(bool(u < p) for u, p in zip(rng.random(len(chains)), pi))
        else:
            pi = joint_stationary(validate_joint_matrix(joint, len(chains)))
            state = index_state(int(rng.choice(len(pi), p=pi)), len(chains))
        return cls(chains, state, 0, joint)


def joint_stationary(matrix: np.ndarray) -> np.ndarray:
    """Left eigenvector of a joint matrix for eigenvalue 1, normalized."""
    w, v = np.linalg.eig(matrix.T)
    k = int(np.argmin(np.abs(w - 1.0)))
    pi = np.abs(np.real(v[:, k]))
    return pi / pi.sum()


def next_state(process: OccupancyProcess, u) -> tuple[bool, ...]:
    """Transition driven by uniforms ``u``.

    Product mode uses one uniform per channel; joint mode uses ``u[0]``.
    """
    if process.joint is None:
        return tuple(
            bool(ui < (c.p_ii if idle else c.p_bi))
            for ui, c, idle in zip(u, process.chains, process.state)
        )
    row = process.joint[state_index(process.state)]
    k = int(np.searchsorted(np.cumsum(row), u[0], side="right"))
    return index_state(min(k, len(row) - 1), process.n)


def step(process: OccupancyProcess, rng: np.random.Generator) -> OccupancyProcess:
    """Advance the process by one slot."""
    u = rng.random(process.n)
    return replace(process, state=next_state(process, u), slot_index=process.slot_index + 1)


def simulate(process: OccupancyProcess, slots: int, rng: np.random.Generator) -> np.ndarray:
    """Occupancy trajectory as a (slots, N) boolean array.

    Row 0 is the process's current state; row t is the state t slots later.
    """
    n = process.n
    out = np.empty((slots, n), dtype=bool)
    if slots == 0:
        return out
    if process.joint is None:
        u = rng.random((slots - 1, n))
        for i, c in enumerate(process.chains):
            col = u[:, i].tolist()
            p_ii, p_bi = c.p_ii, c.p_bi
            idle = process.state[i]
            traj = [idle]
            append = traj.append
            for x in col:
                idle = x < (p_ii if idle else p_bi)
                append(idle)
            out[:, i] = traj
        return out
    u = rng.random(slots - 1)
    cum = np.cumsum(process.joint, axis=1)
    s = state_index(process.state)
    idx = [s]
    for x in u.tolist():
        s = min(int(np.searchsorted(cum[s], x, side="right")), len(cum) - 1)
        idx.append(s)
    idx = np.asarray(idx)
    for i in range(n):
        out[:, i] = (idx >> i) & 1
    return out
