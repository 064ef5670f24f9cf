"""Agents, groups, trajectories and returns.

Everything here is an immutable value; the training loops keep their own
array buffers and only build these records at the API boundary.
"""

from __future__ import annotations

from collections.abc import Hashable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, EmptyGroupError, ValidationError

__all__ = [
    "AgentProfile",
    "StepRecord",
    "TrajectoryBatch",
    "GroupPartition",
    "total_return",
    "discounted_returns",
    "group_mean_return",
    "partition",
]


@dataclass(frozen=True)
class AgentProfile:
    id: int
    z: int
    lf: Hashable = None
    action_count: int = 1

    def __post_init__(self):
        if self.z not in (0, 1):
            raise ValidationError(f"agent {self.id}: z must be 0 or 1, got {self.z!r}")
        if self.action_count < 1:
            raise ValidationError(f"agent {self.id}: action_count must be positive")


@dataclass(frozen=True)
class StepRecord:
    observation: np.ndarray
    action: int
    log_prob: float
    reward: float
    value_estimate: float
    terminal: bool = False

    def __post_init__(self):
        if self.action < 0:
            raise ValidationError(f"negative action index {self.action}")
        if self.log_prob > 0.0:
            raise ValidationError(f"log_prob must be <= 0, got {self.log_prob}")


@dataclass(frozen=True)
class TrajectoryBatch:
    """Per-agent step sequences of one episode of length at most ``T``."""

    steps: Mapping[int, tuple[StepRecord, ...]]
    T: int
    action_counts: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.T < 1:
            raise ValidationError("episode length T must be positive")
        frozen = {}
        for agent, seq in self.steps.items():
            seq = tuple(seq)
            if len(seq) > self.T:
                raise ValidationError(f"agent {agent}: {len(seq)} steps exceed T={self.T}")
            for k, rec in enumerate(seq):
                if rec.terminal and k != len(seq) - 1:
                    raise ValidationError(f"agent {agent}: steps continue after terminal flag at {k}")
                n_act = self.action_counts.get(agent)
                if n_act is not None and rec.action >= n_act:
                    raise ValidationError(f"agent {agent}: action {rec.action} >= {n_act}")
            frozen[agent] = seq
        object.__setattr__(self, "steps", frozen)

    @property
    def agents(self) -> list[int]:
        return sorted(self.steps)

    def rewards(self, agent: int) -> np.ndarray:
        if agent not in self.steps:
            raise KeyError(f"unknown agent id {agent}")
        return np.array([s.reward for s in self.steps[agent]], dtype=np.float64)

    @classmethod
    def from_rewards(cls, rewards: Mapping[int, Sequence[float]], T: int | None = None) -> "TrajectoryBatch":
        """Reward-only batch, convenient for return bookkeeping."""
        steps = {
            a: tuple(StepRecord(np.zeros(0), 0, 0.0, float(r), 0.0) for r in rs)
            for a, rs in rewards.items()
        }
        if T is None:
            T = max([len(v) for v in steps.values()] + [1])
        return cls(steps, T)


@dataclass(frozen=True)
class GroupPartition:
    sensitive: frozenset
    non_sensitive: frozenset
    by_lf: Mapping[Hashable, frozenset] = field(default_factory=dict)

    @property
    def agents(self) -> frozenset:
        return self.sensitive | self.non_sensitive

    def lf_levels(self) -> list:
        return sorted(self.by_lf, key=repr)

    def subgroup(self, lf_value, z: int) -> frozenset:
        base = self.sensitive if z == 1 else self.non_sensitive
        return base & self.by_lf.get(lf_value, frozenset())

    def restrict(self, keep: Iterable[int]) -> "GroupPartition":
        """The same partition over ``keep`` only; emptied lf levels are dropped."""
        keep = frozenset(keep)
        by_lf = {v: m & keep for v, m in self.by_lf.items() if m & keep}
        return GroupPartition(self.sensitive & keep, self.non_sensitive & keep, by_lf)


def total_return(batch: TrajectoryBatch, agent: int) -> float:
    """Undiscounted sum of the agent's rewards over the episode."""
    if agent not in batch.steps:
        raise KeyError(f"unknown agent id {agent}")
    return float(sum(s.reward for s in batch.steps[agent]))


def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Reward-to-go ``G_t = r_t + gamma * G_{t+1}``."""
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must lie in [0, 1], got {gamma}")
    r = np.ascontiguousarray(rewards, dtype=np.float64)
    return kernels.discounted_returns(r, float(gamma))


def group_mean_return(batch: TrajectoryBatch, group: Iterable[int]) -> float:
    group = list(group)
    if not group:
        raise EmptyGroupError("group mean over an empty group")
    return sum(total_return(batch, a) for a in group) / len(group)


def partition(profiles: Iterable[AgentProfile]) -> GroupPartition:
    profiles = list(profiles)
    if not profiles:
        raise ValidationError("cannot partition an empty population")
    ids = [p.id for p in profiles]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate agent ids in population")
    sensitive = frozenset(p.id for p in profiles if p.z == 1)
    non_sensitive = frozenset(p.id for p in profiles if p.z == 0)
    by_lf: dict = {}
    for p in profiles:
        by_lf.setdefault(p.lf, set()).add(p.id)
    return GroupPartition(sensitive, non_sensitive, {k: frozenset(v) for k, v in by_lf.items()})
