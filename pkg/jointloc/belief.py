"""Particle beliefs for agents and potential targets (PTs).

A PT belief carries its nonexistence probability as a scalar mass next to the
particle weights, so ``weights.sum() + nonexistence == 1`` after normalize.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple, Union

import numpy as np

from errors import DegenerateBeliefError

PTLabel = Tuple[int, int, int]


@dataclass
class AgentBelief:
    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.particles.shape[1] != 4:
            raise ValueError(f"particles must have shape (N, 4), got {self.particles.shape}")
        if self.particles.shape[0] != self.weights.shape[0] or self.weights.shape[0] < 1:
            raise ValueError(
                f"particle/weight count mismatch: {self.particles.shape[0]} vs {self.weights.shape[0]}"
            )
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    @classmethod
    def point_mass(cls, state: np.ndarray, n: int = 1) -> "AgentBelief":
        state = np.asarray(state, dtype=float).reshape(1, 4)
        return cls(np.repeat(state, n, axis=0), np.full(n, 1.0 / n))

    @classmethod
    def from_samples(cls, particles: np.ndarray) -> "AgentBelief":
        n = np.asarray(particles).shape[0]
        return cls(particles, np.full(n, 1.0 / n))


@dataclass
class PTBelief:
    particles: np.ndarray
    weights: np.ndarray
    nonexistence: float
    label: PTLabel
    demoted: bool = field(default=False)

    def __post_init__(self) -> None:
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.nonexistence = float(self.nonexistence)
        if self.particles.shape[1] != 4:
            raise ValueError(f"particles must have shape (N, 4), got {self.particles.shape}")
        if self.particles.shape[0] != self.weights.shape[0] or self.weights.shape[0] < 1:
            raise ValueError(
                f"particle/weight count mismatch: {self.particles.shape[0]} vs {self.weights.shape[0]}"
            )
        if np.any(self.weights < 0) or self.nonexistence < 0:
            raise ValueError("weights and nonexistence mass must be non-negative")
        self.label = tuple(int(v) for v in self.label)  # type: ignore[assignment]

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])


Belief = Union[AgentBelief, PTBelief]


def existence_probability(pt: PTBelief) -> float:
    return float(pt.weights.sum())


def _total_mass(belief: Belief) -> float:
    total = float(belief.weights.sum())
    if isinstance(belief, PTBelief):
        total += belief.nonexistence
    return total


def normalize(belief: Belief) -> Belief:
    total = _total_mass(belief)
    if not np.isfinite(total) or total <= 0:
        raise DegenerateBeliefError(f"degenerate belief: total mass {total}")
    if isinstance(belief, PTBelief):
        return replace(belief, weights=belief.weights / total, nonexistence=belief.nonexistence / total)
    return replace(belief, weights=belief.weights / total)


def mmse_estimate(belief: Belief) -> np.ndarray:
    """Weighted mean state; PT weights are conditioned on existence."""
    mass = float(belief.weights.sum())
    if not np.isfinite(mass) or mass <= 0:
        raise DegenerateBeliefError("no existence support")
    return (belief.weights @ belief.particles) / mass


def systematic_indices(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    cdf = np.cumsum(w / w.sum())
    cdf[-1] = 1.0
    positions = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cdf, positions, side="right").clip(max=w.shape[0] - 1)


def resample_systematic(belief: Belief, rng: np.random.Generator, n: Optional[int] = None) -> Belief:
    """Low-variance resampling to ``n`` (default: current size) equally weighted particles.

    PT beliefs keep their existence probability; a PT with no existence mass
    is returned unchanged.
    """
    n = belief.size if n is None else int(n)
    if n < 1:
        raise ValueError(f"particle count must be positive, got {n}")
    mass = float(belief.weights.sum())
    if isinstance(belief, PTBelief):
        if not np.isfinite(mass) or mass + belief.nonexistence <= 0:
            raise DegenerateBeliefError("degenerate belief")
        if mass <= 0:
            return belief
    elif not np.isfinite(mass) or mass <= 0:
        raise DegenerateBeliefError("degenerate belief")

    idx = systematic_indices(belief.weights, n, rng)
    particles = belief.particles[idx].copy()
    return replace(belief, particles=particles, weights=np.full(n, mass / n))


def collapse_to_mmse(belief: AgentBelief) -> AgentBelief:
    """Single-particle point mass at the MMSE estimate."""
    return AgentBelief.point_mass(mmse_estimate(belief))
