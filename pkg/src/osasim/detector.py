"""Imperfect spectrum sensing.

A detector is summarized by its ROC: false-alarm probability ``epsilon``
(idle reported busy) against miss probability ``delta`` (busy reported
idle). The energy detector is modeled with the Gaussian approximation of
the normalized received energy: mean 1 and variance 2/Ns under noise only,
mean 1+SNR and variance 2(1+SNR)^2/Ns with a Gaussian primary signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm


class InfeasibleTargetError(ValueError):
    pass


@dataclass(frozen=True)
class RocCurve:
    """Piecewise-linear ROC through points ``(epsilon, delta)``.

    ``epsilon`` is strictly increasing, ``delta`` nonincreasing.
    """

    epsilon: tuple
    delta: tuple

    def __post_init__(self):
        eps = np.asarray(self.epsilon, dtype=float)
        dl = np.asarray(self.delta, dtype=float)
        if eps.shape != dl.shape or eps.ndim != 1 or eps.size < 2:
            raise ValueError("ROC needs at least two (epsilon, delta) points")
        if np.any((eps < 0) | (eps > 1) | (dl < 0) | (dl > 1)):
            raise ValueError("ROC values must lie in [0, 1]")
        if np.any(np.diff(eps) <= 0):
            raise ValueError("ROC epsilon must be strictly increasing")
        if np.any(np.diff(dl) > 0):
            raise ValueError("ROC delta must be nonincreasing")
        object.__setattr__(self, "epsilon", tuple(eps.tolist()))
        object.__setattr__(self, "delta", tuple(dl.tolist()))

    @classmethod
    def from_points(cls, points) -> "RocCurve":
        pts = sorted(points)
        return cls(tuple(p[0] for p in pts), tuple(p[1] for p in pts))

    @property
    def power(self) -> np.ndarray:
        return 1.0 - np.asarray(self.delta)

    def delta_at(self, epsilon: float) -> float:
        return float(np.interp(epsilon, self.epsilon, self.delta))

    def epsilon_at(self, delta: float) -> float:
        """False-alarm probability at miss probability ``delta``.

        Flat stretches of the curve resolve to the smallest epsilon.
        """
        eps = np.asarray(self.epsilon)
        dl = np.asarray(self.delta)
        if not dl[-1] <= delta <= dl[0]:
            raise ValueError(f"delta={delta} outside curve support [{dl[-1]}, {dl[0]}]")
        # delta is nonincreasing; interpolate on the reversed arrays
        rd, re = dl[::-1], eps[::-1]
        k = int(np.searchsorted(rd, delta, side="left"))
        if k < len(rd) and rd[k] == delta:
            # several points may share this delta; take the smallest epsilon
            return float(eps[dl == delta].min())
        d0, d1, e0, e1 = rd[k - 1], rd[k], re[k - 1], re[k]
        return float(e0 + (delta - d0) * (e1 - e0) / (d1 - d0))

    def is_concave(self, tol: float = 1e-12) -> bool:
        """Whether detection power is concave in epsilon on the sampled points."""
        e = np.asarray(self.epsilon)
        p = self.power
        de, dp = np.diff(e), np.diff(p)
        # slope of each segment >= slope of the next, cross-multiplied
        turn = dp[:-1] * de[1:] - dp[1:] * de[:-1]
        return bool(np.all(turn >= -tol))

    def to_text(self) -> str:
        return "".join(f"{e:.17g} {d:.17g}\n" for e, d in zip(self.epsilon, self.delta))

    @classmethod
    def from_text(cls, text: str) -> "RocCurve":
        pts = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected two columns 'epsilon delta'")
            pts.append((float(parts[0]), float(parts[1])))
        return cls(tuple(p[0] for p in pts), tuple(p[1] for p in pts))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "RocCurve":
        return cls.from_text(Path(path).read_text())


def chance_roc(points: int = 101) -> RocCurve:
    """Uninformative detector: 1 - delta = epsilon."""
    e = np.linspace(0.0, 1.0, points)
    return RocCurve(tuple(e), tuple(1.0 - e))


def gaussian_shift_roc(separation: float, points: int = 201) -> RocCurve:
    """Concave ROC of a unit-variance Gaussian mean-shift test."""
    z = np.linspace(-8.0, 8.0, points)[::-1]
    eps = norm.sf(z)
    delta = norm.cdf(z - separation)
    eps = np.concatenate([[0.0], eps, [1.0]])
    delta = np.concatenate([[1.0], delta, [0.0]])
    keep = np.concatenate([[True], np.diff(eps) > 0])
    return RocCurve(tuple(eps[keep]), tuple(delta[keep]))


def sense(true_idle: bool, epsilon: float, delta: float, rng: np.random.Generator) -> bool:
    """Noisy observation of a channel; returns True when reported idle."""
    return observe(true_idle, epsilon, delta, rng.random())


def observe(true_idle: bool, epsilon: float, delta: float, u: float) -> bool:
    """:func:`sense` driven by a given uniform ``u``."""
    if true_idle:
        return not u < epsilon
    return u < delta


@dataclass(frozen=True)
class EnergyDetectorSpec:
    snr: float
    num_samples: int
    threshold: float = 1.0

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if self.num_samples < 1:
            raise ValueError("num_samples must be at least 1")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")


def energy_operating_point(snr: float, num_samples: int, threshold: float) -> tuple[float, float]:
    """(epsilon, delta) of the energy detector at one threshold."""
    k = math.sqrt(num_samples / 2.0)
    eps = float(norm.sf((threshold - 1.0) * k))
    power = float(norm.sf((threshold - (1.0 + snr)) * k / (1.0 + snr)))
    return eps, 1.0 - power


def energy_roc_analytic(spec: EnergyDetectorSpec, points: int = 401) -> RocCurve:
    """ROC traced over a threshold grid around the two energy means."""
    sd = math.sqrt(2.0 / spec.num_samples)
    # energies are nonnegative; below zero the approximation dips under chance
    lo = max(0.0, 1.0 - 9.0 * sd)
    hi = (1.0 + spec.snr) * (1.0 + 9.0 * sd)
    taus = np.linspace(lo, hi, points)
    k = math.sqrt(spec.num_samples / 2.0)
    eps = norm.sf((taus - 1.0) * k)
    delta = norm.cdf((taus - (1.0 + spec.snr)) * k / (1.0 + spec.snr))
    eps, delta = eps[::-1], delta[::-1]
    eps = np.concatenate([[0.0], eps, [1.0]])
    delta = np.concatenate([[1.0], delta, [0.0]])
    keep = np.concatenate([[True], np.diff(eps) > 0])
    delta = np.minimum.accumulate(delta[keep])
    return RocCurve(tuple(eps[keep]), tuple(delta))


def energy_statistics(snr: float, num_samples: int, trials: int, busy: bool,
                      rng: np.random.Generator, raw: bool = False) -> np.ndarray:
    """Monte-Carlo draws of the normalized energy statistic.

    With ``raw`` the statistic is averaged from explicit Gaussian samples;
    otherwise the exact chi-square law of that average is sampled directly.
    """
    scale = 1.0 + snr if busy else 1.0
    if raw:
        x = rng.standard_normal((trials, num_samples)) * math.sqrt(scale)
        return (x * x).mean(axis=1)
    return scale * rng.chisquare(num_samples, size=trials) / num_samples


def energy_roc_monte_carlo(snr: float, num_samples: int, trials: int,
                           rng: np.random.Generator, raw: bool = False) -> RocCurve:
    """Empirical ROC from simulated energies under both hypotheses."""
    h0 = np.sort(energy_statistics(snr, num_samples, trials, False, rng, raw))
    h1 = np.sort(energy_statistics(snr, num_samples, trials, True, rng, raw))
    taus = np.unique(np.concatenate([h0, h1]))[::max(1, 2 * trials // 400)]
    eps = 1.0 - np.searchsorted(h0, taus, side="right") / trials
    delta = np.searchsorted(h1, taus, side="right") / trials
    eps, delta = eps[::-1], delta[::-1]
    eps = np.concatenate([[0.0], eps, [1.0]])
    delta = np.concatenate([[1.0], delta, [0.0]])
    keep = np.concatenate([[True], np.diff(eps) > 0])
    delta = np.minimum.accumulate(delta[keep])
    return RocCurve(tuple(eps[keep]), tuple(delta))


@dataclass(frozen=True)
class SampleRequirement:
    energy: int
    matched_filter: int
    matched_filter_constant: float


def samples_required(snr: float, epsilon_target: float, power_target: float) -> SampleRequirement:
    """Samples per sensing epoch needed to reach the target operating point.

    The energy-detector count inverts the Gaussian-approximation ROC:
    Ns = 2 (Q^-1(eps) - (1+SNR) Q^-1(Pd))^2 / SNR^2. The coherent reference
    is c/SNR with c = (Q^-1(eps) - Q^-1(Pd))^2.
    """
    if not snr > 0:
        raise ValueError("snr must be positive")
    for name, v in (("epsilon_target", epsilon_target), ("power_target", power_target)):
        if not 0.0 < v < 1.0:
            raise ValueError(f"{name} must lie in (0, 1)")
    if power_target < epsilon_target:
        raise InfeasibleTargetError(
            f"detection power {power_target} below false-alarm rate {epsilon_target}"
        )
    a = norm.isf(epsilon_target)
    b = norm.isf(power_target)
    gap = a - (1.0 + snr) * b
    energy = 1 if gap <= 0 else max(1, math.ceil(2.0 * gap * gap / (snr * snr) - 1e-9))
    c = (a - b) ** 2
    mf = max(1, math.ceil(c / snr - 1e-9))
    return SampleRequirement(energy, mf, c)


def detection_power_monte_carlo(snr: float, num_samples: int, epsilon: float, trials: int,
                                rng: np.random.Generator) -> float:
    """Empirical detection power with the threshold set at the H0 (1-eps) quantile."""
    h0 = energy_statistics(snr, num_samples, trials, False, rng)
    h1 = energy_statistics(snr, num_samples, trials, True, rng)
    tau = np.quantile(h0, 1.0 - epsilon)
    return float(np.mean(h1 > tau))


def samples_required_monte_carlo(snr: float, epsilon_target: float, power_target: float,
                                 trials: int, rng: np.random.Generator,
                                 hi: int | None = None) -> int:
    """Smallest Ns whose simulated detection power reaches ``power_target``.

    Bisection over Ns; each probe draws fresh statistics from ``rng``.
    """
    if hi is None:
        hi = 8 * samples_required(snr, epsilon_target, power_target).energy + 16
    lo = 0
    if detection_power_monte_carlo(snr, hi, epsilon_target, trials, rng) < power_target:
        raise InfeasibleTargetError(f"power target not reached with {hi} samples")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if detection_power_monte_carlo(snr, mid, epsilon_target, trials, rng) >= power_target:
            hi = mid
        else:
            lo = mid
    return hi
