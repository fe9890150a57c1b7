"""Opportunity tracking: belief filtering and channel-sensing strategies.

A secondary user senses one channel per slot. Its belief is the vector of
per-channel idle probabilities given the whole sensing history (product
form), or, for small N, the full distribution over the 2^N joint states.
Strategies:

* static: always the channel with the largest ``B * P(idle)`` under the
  stationary distribution;
* myopic: the channel with the largest ``B * belief``;
* value_iteration: finite-horizon lookahead over a grid approximation of the
  value function on the belief space.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .access import AccessPolicy, optimal_access_policy

TIE_TOL = 1e-12
DEFAULT_RESOLUTION = 33
MAX_EXACT_CHANNELS = 4


class InconsistentObservationError(ValueError):
    pass


@dataclass
class BeliefState:
    per_channel_idle: np.ndarray
    joint: np.ndarray | None = None

    def __post_init__(self):
        self.per_channel_idle = np.asarray(self.per_channel_idle, dtype=float)
        if np.any((self.per_channel_idle < 0) | (self.per_channel_idle > 1)):
            raise ValueError("belief probabilities must lie in [0, 1]")
        if self.joint is not None:
            self.joint = np.asarray(self.joint, dtype=float)
            if abs(self.joint.sum() - 1.0) > 1e-9:
                raise ValueError("joint belief must sum to 1")

    @classmethod
    def stationary(cls, chains) -> "BeliefState":
        return cls(np.array([ch.stationary_distribution(c).idle for c in chains]))


def bayes_correct(p: float, observed_idle: bool, epsilon: float, delta: float) -> float:
    """Posterior idle probability of the sensed channel."""
    if observed_idle:
        num = p * (1.0 - epsilon)
        den = num + (1.0 - p) * delta
    else:
        num = p * epsilon
        den = num + (1.0 - p) * (1.0 - delta)
    if den <= 0.0:
        raise InconsistentObservationError("inconsistent observation")
    return num / den


def belief_update(belief, sensed_channel: int, observed_idle: bool,
                  epsilon: float, delta: float, chains) -> BeliefState:
    """Bayes correction on the sensed channel, then a one-slot prediction.

    Accepts a :class:`BeliefState` or a plain sequence of idle probabilities.
    """
    p = np.array(getattr(belief, "per_channel_idle", belief), dtype=float)
    p[sensed_channel] = bayes_correct(p[sensed_channel], observed_idle, epsilon, delta)
    out = np.array([ch.predict(float(b), c) for b, c in zip(p, chains)])
    return BeliefState(out)


def joint_update(joint: np.ndarray, sensed_channel: int, observed_idle: bool,
                 epsilon: float, delta: float, matrix: np.ndarray) -> np.ndarray:
    """Exact Bayes filter over the 2^N joint occupancy states."""
    n = int(np.log2(len(joint)))
    idle = np.array([ch.index_state(s, n)[sensed_channel] for s in range(len(joint))])
    if observed_idle:
        like = np.where(idle, 1.0 - epsilon, delta)
    else:
        like = np.where(idle, epsilon, 1.0 - delta)
    post = joint * like
    z = post.sum()
    if z <= 0.0:
        raise InconsistentObservationError("inconsistent observation")
    return (post / z) @ matrix


def joint_marginals(joint: np.ndarray) -> np.ndarray:
    n = int(np.log2(len(joint)))
    return np.array([
        sum(joint[s] for s in range(len(joint)) if (s >> i) & 1) for i in range(n)
    ])


def product_joint(per_channel_idle) -> np.ndarray:
    p = list(per_channel_idle)
    n = len(p)
    out = np.empty(1 << n)
    for s in range(1 << n):
        v = 1.0
        for i, idle in enumerate(ch.index_state(s, n)):
            v *= p[i] if idle else 1.0 - p[i]
        out[s] = v
    return out


def _argmax_low(values) -> int:
    values = np.asarray(values, dtype=float)
    return int(np.flatnonzero(values >= values.max() - TIE_TOL)[0])


def static_choice(chains) -> int:
    return _argmax_low([c.bandwidth * ch.stationary_distribution(c).idle for c in chains])


def myopic_choice(belief, chains) -> int:
    p = getattr(belief, "per_channel_idle", belief)
    return _argmax_low([c.bandwidth * b for b, c in zip(p, chains)])


class GridValue:
    """Multilinear interpolant of a value table on the uniform grid over [0,1]^N."""

    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=float)
        self.n = self.table.ndim
        self.size = self.table.shape[0]
        self._flat = self.table.ravel()
        self._strides = np.array([self.size ** (self.n - 1 - i) for i in range(self.n)])
        self._corners = np.array(list(np.ndindex(*(2,) * self.n)))
        self._values = self._flat.tolist()
        self._stride_list = self._strides.tolist()
        self._corner_list = [(int(c @ self._strides), tuple(c.tolist())) for c in self._corners]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        x = np.clip(np.asarray(points, dtype=float), 0.0, 1.0) * (self.size - 1)
        lo = np.minimum(np.floor(x).astype(int), self.size - 2)
        frac = x - lo
        base = lo @ self._strides
        out = np.zeros(len(x))
        for corner in self._corners:
            wgt = np.prod(np.where(corner, frac, 1.0 - frac), axis=1)
            out += wgt * self._flat[base + corner @ self._strides]
        return out

    def at(self, point) -> float:
        """Scalar evaluation; same result as ``__call__`` without numpy overhead."""
        g = self.size - 1
        base = 0
        fracs = []
        for x, stride in zip(point, self._stride_list):
            x = min(max(x, 0.0), 1.0) * g
            lo = min(int(x), g - 1)
            fracs.append(x - lo)
            base += lo * stride
        total = 0.0
        for offset, corner in self._corner_list:
            wgt = 1.0
            for f, bit in zip(fracs, corner):
                wgt *= f if bit else 1.0 - f
            total += wgt * self._values[base + offset]
        return total


def _q_values(points: np.ndarray, chains, epsilon: float, delta: float,
              gain: float, future) -> np.ndarray:
    """Lookahead action values at each belief point.

    ``future`` maps an (M, N) array of beliefs to values, or is None for the
    last slot. ``gain`` is P(transmit | idle) under the access policy.
    """
    m, n = points.shape
    p_ii = np.array([c.p_ii for c in chains])
    p_bi = np.array([c.p_bi for c in chains])
    bw = np.array([c.bandwidth for c in chains])
    q = points * (bw * gain)
    if future is None:
        return q
    probs = np.empty((n, 2, m))
    nxt = np.empty((n, 2, m, n))
    predicted = points * p_ii + (1.0 - points) * p_bi
    for a in range(n):
        w = points[:, a]
        p_idle_obs = w * (1.0 - epsilon) + (1.0 - w) * delta
        p_busy_obs = 1.0 - p_idle_obs
        with np.errstate(divide="ignore", invalid="ignore"):
            post_idle = np.where(p_idle_obs > 0, w * (1.0 - epsilon) / p_idle_obs, w)
            post_busy = np.where(p_busy_obs > 0, w * epsilon / p_busy_obs, w)
        for k, (prob, post) in enumerate(((p_idle_obs, post_idle), (p_busy_obs, post_busy))):
            probs[a, k] = prob
            nxt[a, k] = predicted
            nxt[a, k, :, a] = post * p_ii[a] + (1.0 - post) * p_bi[a]
    fut = future(nxt.reshape(-1, n)).reshape(n, 2, m)
    q += (probs * fut).sum(axis=1).T
    return q


@dataclass
class SensingPolicy:
    """Channel-selection rule.

    For ``value_iteration``, ``values[k]`` holds the k-slot value function on
    the regular belief grid and ``actions[k]`` the greedy action there.
    """

    kind: str
    chains: tuple
    horizon: int = 1
    epsilon: float = 0.0
    delta: float = 0.0
    zeta: float = 0.5
    grid: np.ndarray | None = None
    values: list = field(default_factory=list, repr=False)
    actions: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.chains = tuple(self.chains)
        if self.kind not in ("static", "myopic", "value_iteration"):
            raise ValueError(f"unknown sensing strategy {self.kind!r}")
        self._static = static_choice(self.chains) if self.kind == "static" else None
        self._interp = {}

    @property
    def access(self) -> AccessPolicy:
        return optimal_access_policy(self.delta, self.zeta)

    def value_function(self, k: int):
        """Interpolated k-slot value function (k=0 is identically zero)."""
        if k == 0:
            return None
        if k not in self._interp:
            self._interp[k] = GridValue(self.values[k])
        return self._interp[k]

    def value(self, belief, k: int | None = None) -> float:
        k = self.horizon if k is None else k
        f = self.value_function(k)
        if f is None:
            return 0.0
        p = np.asarray(getattr(belief, "per_channel_idle", belief), dtype=float)
        return float(f(p[None, :])[0])

    def q_values(self, belief, steps_to_go: int | None = None) -> np.ndarray:
        h = self.horizon if steps_to_go is None else min(steps_to_go, self.horizon)
        p = np.asarray(getattr(belief, "per_channel_idle", belief), dtype=float)
        gain = self.access.idle_gain(self.epsilon)
        return _q_values(p[None, :], self.chains, self.epsilon, self.delta, gain,
                         self.value_function(h - 1))[0]

    def choose(self, belief, steps_to_go: int | None = None) -> int:
        if self.kind == "static":
            return self._static
        if self.kind == "myopic":
            return myopic_choice(belief, self.chains)
        return _argmax_low(self._q_scalar(belief, steps_to_go))

    def _q_scalar(self, belief, steps_to_go: int | None) -> list:
        """Pure-Python twin of :meth:`q_values` for a single belief."""
        h = self.horizon if steps_to_go is None else min(steps_to_go, self.horizon)
        p = [float(b) for b in getattr(belief, "per_channel_idle", belief)]
        eps, dl = self.epsilon, self.delta
        gain = self.access.idle_gain(eps)
        future = self.value_function(h - 1)
        pred = [b * c.p_ii + (1.0 - b) * c.p_bi for b, c in zip(p, self.chains)]
        q = []
        for a, c in enumerate(self.chains):
            w = p[a]
            val = c.bandwidth * w * gain
            if future is not None:
                p_idle = w * (1.0 - eps) + (1.0 - w) * dl
                for prob, num in ((p_idle, w * (1.0 - eps)), (1.0 - p_idle, w * eps)):
                    post = num / prob if prob > 0 else w
                    nxt = list(pred)
                    nxt[a] = post * c.p_ii + (1.0 - post) * c.p_bi
                    val += prob * future.at(nxt)
            q.append(val)
        return q


def static_policy(chains) -> SensingPolicy:
    return SensingPolicy("static", chains)


def myopic_policy(chains) -> SensingPolicy:
    return SensingPolicy("myopic", chains)


def value_iteration(chains, epsilon: float, delta: float, zeta: float, horizon: int,
                    belief_grid_resolution: int = DEFAULT_RESOLUTION) -> SensingPolicy:
    """Finite-horizon expected-throughput maximization on a belief grid.

    The access rule is fixed to :func:`optimal_access_policy` for the given
    operating point, so each slot's reward is ``B_a * P(idle) * P(tx|idle)``.
    """
    chains = tuple(chains)
    n = len(chains)
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if belief_grid_resolution < 2:
        raise ValueError("belief grid resolution must be at least 2")
    if n > MAX_EXACT_CHANNELS:
        raise ValueError(f"value iteration supports at most {MAX_EXACT_CHANNELS} channels")
    grid = np.linspace(0.0, 1.0, belief_grid_resolution)
    shape = (belief_grid_resolution,) * n
    points = np.stack(np.meshgrid(*(grid,) * n, indexing="ij"), axis=-1).reshape(-1, n)
    gain = optimal_access_policy(delta, zeta).idle_gain(epsilon)
    values = [np.zeros(shape)]
    actions = [np.zeros(shape, dtype=int)]
    future = None
    for _ in range(horizon):
        q = _q_values(points, chains, epsilon, delta, gain, future)
        best = q.max(axis=1, keepdims=True)
        act = np.argmax(q >= best - TIE_TOL, axis=1)
        v = best[:, 0].reshape(shape)
        values.append(v)
        actions.append(act.reshape(shape))
        future = GridValue(v)
    return SensingPolicy("value_iteration", chains, horizon, epsilon, delta, zeta,
                         grid, values, actions)


def evaluate_policy(policy: SensingPolicy, belief, horizon: int, epsilon: float,
                    delta: float, zeta: float) -> float:
    """Exact expected reward of ``policy`` over ``horizon`` slots.

    Enumerates every observation sequence; value-iteration policies look
    ahead over the remaining slots.
    """
    chains = policy.chains
    gain = optimal_access_policy(delta, zeta).idle_gain(epsilon)

    def rec(p, steps):
        if steps == 0:
            return 0.0
        a = policy.choose(p, steps)
        w = p[a]
        total = chains[a].bandwidth * w * gain
        p_idle_obs = w * (1.0 - epsilon) + (1.0 - w) * delta
        for obs, prob in ((True, p_idle_obs), (False, 1.0 - p_idle_obs)):
            if prob <= 0.0:
                continue
            nxt = belief_update(p, a, obs, epsilon, delta, chains).per_channel_idle
            total += prob * rec(nxt, steps - 1)
        return total

    p0 = np.asarray(getattr(belief, "per_channel_idle", belief), dtype=float)
    return rec(p0, horizon)


@dataclass
class TrackRecord:
    """Per-slot trace of a closed-loop tracking run.

    ``belief[t]`` is the belief on which the slot-t sensing decision was
    made; ``observation`` is True when the detector reported idle.
    """

    action: np.ndarray
    observation: np.ndarray
    accessed: np.ndarray
    true_state: np.ndarray
    reward: np.ndarray
    collision: np.ndarray
    belief: np.ndarray
    power: np.ndarray | None = None

    def __len__(self):
        return len(self.action)

    @property
    def n_channels(self) -> int:
        return self.true_state.shape[1]

    @property
    def sensed_idle(self) -> np.ndarray:
        return self.true_state[np.arange(len(self)), self.action]

    def mean_throughput(self) -> float:
        return float(np.mean(self.reward))

    def cumulative_throughput(self) -> np.ndarray:
        return np.cumsum(self.reward) / np.arange(1, len(self) + 1)

    def windowed_throughput(self, window: int | None = None) -> np.ndarray:
        """Means over consecutive non-overlapping windows (default T/20)."""
        window = window or max(1, len(self) // 20)
        k = len(self) // window
        return self.reward[: k * window].reshape(k, window).mean(axis=1)

    HEADER_FIXED = ["slot", "action", "observation", "accessed", "true_state_bits",
                    "reward", "collision_flag"]

    def to_csv(self) -> str:
        n = self.n_channels
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = self.HEADER_FIXED + [f"belief_{i}" for i in range(n)]
        if self.power is not None:
            header.append("power")
        w.writerow(header)
        for t in range(len(self)):
            bits = "".join("1" if s else "0" for s in self.true_state[t])
            row = [t, int(self.action[t]), int(self.observation[t]), int(self.accessed[t]),
                   bits, repr(float(self.reward[t])), int(self.collision[t])]
            row += [repr(float(b)) for b in self.belief[t]]
            if self.power is not None:
                row.append(repr(float(self.power[t])))
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrackRecord":
        rows = list(csv.reader(io.StringIO(text)))
        header, rows = rows[0], rows[1:]
        n = sum(1 for h in header if h.startswith("belief_"))
        has_power = header[-1] == "power"
        col = {h: i for i, h in enumerate(header)}

        def ints(name, dtype):
            return np.array([int(r[col[name]]) for r in rows], dtype=dtype)

        return cls(
            action=ints("action", int),
            observation=ints("observation", bool),
            accessed=ints("accessed", bool),
            true_state=np.array([[c == "1" for c in r[col["true_state_bits"]]] for r in rows],
                                dtype=bool).reshape(len(rows), n),
            reward=np.array([float(r[col["reward"]]) for r in rows]),
            collision=ints("collision_flag", bool),
            belief=np.array([[float(r[col[f"belief_{i}"]]) for i in range(n)] for r in rows]
                            ).reshape(len(rows), n),
            power=np.array([float(r[col["power"]]) for r in rows]) if has_power else None,
        )

    def equals(self, other: "TrackRecord") -> bool:
        pairs = [(self.action, other.action), (self.observation, other.observation),
                 (self.accessed, other.accessed), (self.true_state, other.true_state),
                 (self.reward, other.reward), (self.collision, other.collision),
                 (self.belief, other.belief)]
        if (self.power is None) != (other.power is None):
            return False
        if self.power is not None:
            pairs.append((self.power, other.power))
        return all(np.array_equal(a, b) for a, b in pairs)


def _fallback_posterior(observed_idle: bool, epsilon: float, delta: float) -> float:
    # likelihood ratio under a flat prior
    return bayes_correct(0.5, observed_idle, epsilon, delta)


def run_tracking(chains, policy: SensingPolicy, epsilon: float, delta: float, zeta: float,
                 slots: int, rng: np.random.Generator, *, access: AccessPolicy | None = None,
                 initial_state=None, initial_belief=None, joint=None,
                 gate=None) -> TrackRecord:
    """Closed loop of sense -> access -> reward over ``slots`` slots.

    All randomness is drawn up front in a fixed order (initial state,
    occupancy trajectory, sensing noise, access draws), so runs that share
    a seed see the same primary traffic whatever the strategy.

    ``gate(slot, channel)`` may veto or reshape a transmission; it returns
    ``(allowed, power)``.
    """
    chains = tuple(chains)
    n = len(chains)
    if access is None:
        access = optimal_access_policy(delta, zeta)
    if initial_state is None:
        proc = ch.OccupancyProcess.from_stationary(chains, rng, joint)
    else:
        proc = ch.OccupancyProcess(chains, tuple(initial_state), 0, joint)
    truth = ch.simulate(proc, slots, rng)
    u_sense = rng.random(slots).tolist()
    u_access = rng.random(slots).tolist()

    if initial_belief is None:
        belief = [ch.stationary_distribution(c).idle for c in chains]
    else:
        belief = [float(b) for b in getattr(initial_belief, "per_channel_idle", initial_belief)]
    p_ii = [c.p_ii for c in chains]
    p_bi = [c.p_bi for c in chains]
    bw = [c.bandwidth for c in chains]
    tx_idle, tx_busy = access.p_tx_given_idle_obs, access.p_tx_given_busy_obs

    actions = [0] * slots
    obs_arr = [False] * slots
    acc_arr = [False] * slots
    rew = [0.0] * slots
    col = [False] * slots
    beliefs = []
    keep_belief = beliefs.extend
    power = [0.0] * slots if gate is not None else None
    kind = policy.kind
    static = policy.choose(belief) if kind == "static" else None
    truth_cols = [truth[:, i].tolist() for i in range(n)]
    trans = list(zip(p_ii, p_bi))
    chan = range(n)

    for t in range(slots):
        keep_belief(belief)
        if kind == "static":
            a = static
        elif kind == "myopic":
            a = _argmax_low([bw[i] * belief[i] for i in chan])
        else:
            a = policy.choose(belief, None)
        idle = truth_cols[a][t]
        u = u_sense[t]
        o = not u < epsilon if idle else u < delta
        tx = u_access[t] < (tx_idle if o else tx_busy)
        if tx and gate is not None:
            tx, pw = gate(t, a)
            power[t] = pw if tx else 0.0
        actions[t] = a
        obs_arr[t] = o
        acc_arr[t] = tx
        if tx:
            if idle:
                rew[t] = bw[a]
            else:
                col[t] = True
        p = belief[a]
        if o:
            num = p * (1.0 - epsilon)
            den = num + (1.0 - p) * delta
        else:
            num = p * epsilon
            den = num + (1.0 - p) * (1.0 - delta)
        post = num / den if den > 0.0 else _fallback_posterior(o, epsilon, delta)
        belief = [b * pi + (1.0 - b) * pb for b, (pi, pb) in zip(belief, trans)]
        belief[a] = post * p_ii[a] + (1.0 - post) * p_bi[a]

    actions = np.array(actions, dtype=int)
    obs_arr = np.array(obs_arr, dtype=bool)
    acc_arr = np.array(acc_arr, dtype=bool)
    rew = np.array(rew)
    col = np.array(col, dtype=bool)
    beliefs = np.array(beliefs, dtype=float).reshape(slots, n)
    if power is not None:
        power = np.array(power)
    return TrackRecord(actions, obs_arr, acc_arr, truth, rew, col, beliefs, power)
