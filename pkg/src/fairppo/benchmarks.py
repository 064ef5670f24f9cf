"""FEN and SOTO baselines: configuration, reward shaping and head scheduling.

The training loops live in :mod:`fairppo.harness.agents`; everything here is
a pure function so it can be tested in isolation.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .fairness import shift_nonnegative
from .policy.ppo import PpoConfig


@dataclass(frozen=True)
class FenConfig:
    k_sub: int = 2
    t_macro: int = 10
    reward_scale: float = 1.0
    fairness_epsilon: float = 1e-6
    ppo: PpoConfig = field(default_factory=lambda: PpoConfig(
        learning_rate=1e-4, clip_epsilon=0.1, epochs=5, minibatch_size=256, c2=0.01, c1=0.5))

    def __post_init__(self):
        if self.k_sub < 2:
            raise ConfigError("FEN needs at least two sub-policies")
        if self.t_macro < 1:
            raise ConfigError("t_macro must be positive")
        if self.reward_scale <= 0 or self.fairness_epsilon <= 0:
            raise ConfigError("reward_scale and fairness_epsilon must be positive")

    @classmethod
    def for_env(cls, env: str) -> "FenConfig":
        if env == "ah":
            return cls()
        if env == "hs":
            return cls(
                k_sub=4, t_macro=50, reward_scale=100.0, fairness_epsilon=0.1,
                ppo=PpoConfig(learning_rate=1e-5, clip_epsilon=0.1, epochs=10, minibatch_size=64, c2=0.01, c1=0.5),
            )
        raise ConfigError(f"unknown environment {env!r}")


@dataclass(frozen=True)
class SotoConfig:
    alpha_fairness: float = 1.0
    beta_proportion: float = 0.5
    ppo: PpoConfig = field(default_factory=lambda: PpoConfig(
        learning_rate=1e-4, clip_epsilon=0.2, epochs=5, minibatch_size=256, c2=0.05))

    def __post_init__(self):
        if self.alpha_fairness <= 0:
            raise ConfigError("alpha_fairness must be positive")
        if not 0.0 <= self.beta_proportion <= 1.0:
            raise ConfigError("beta_proportion must lie in [0, 1]")

    @classmethod
    def for_env(cls, env: str, alpha_fairness: float | None = None) -> "SotoConfig":
        if env == "ah":
            return cls(alpha_fairness=1.0 if alpha_fairness is None else alpha_fairness)
        if env == "hs":
            return cls(
                alpha_fairness=0.9 if alpha_fairness is None else alpha_fairness,
                ppo=PpoConfig(learning_rate=5e-4, clip_epsilon=0.2, epochs=5, minibatch_size=64, c2=0.01),
            )
        raise ConfigError(f"unknown environment {env!r}")


SOTO_AH_ALPHAS = (0.9, 1.0, 2.0, 5.0)


def fen_fair_efficient_reward(own_utility: float, mean_utility: float, cfg: FenConfig) -> float:
    """``(u_bar / c) / (eps + |u / u_bar - 1|)`` with ``u_bar`` floored at ``eps``."""
    eps = cfg.fairness_epsilon
    mean = max(float(mean_utility), eps)
    return (mean / cfg.reward_scale) / (eps + abs(float(own_utility) / mean - 1.0))


def fen_controller_due(step_count: int, t_macro: int) -> bool:
    """Whether a new sub-policy is chosen at this step."""
    return step_count % t_macro == 0


def fen_controller_step(sample_index, step_count: int, current: int | None, t_macro: int) -> int:
    """Sub-policy for this step: resample only at macro boundaries.

    ``sample_index`` is a zero-argument callable that runs the controller.
    """
    if current is None or fen_controller_due(step_count, t_macro):
        return int(sample_index())
    return current


def soto_team_probability(training_progress: float, cfg: SotoConfig) -> float:
    if not 0.0 <= training_progress <= 1.0:
        raise ConfigError("training progress must lie in [0, 1]")
    return float(np.clip(2.0 * cfg.beta_proportion * training_progress, 0.0, 1.0))


def soto_select_head(rng: np.random.Generator, training_progress: float, cfg: SotoConfig) -> str:
    """``"team"`` with probability ``2 * beta * progress`` (clipped), else ``"self"``."""
    p = soto_team_probability(training_progress, cfg)
    return "team" if rng.random() < p else "self"


def soto_welfare_weight(utilities: Mapping, cfg: SotoConfig) -> dict:
    """Weights proportional to ``u ** -alpha`` on shifted utilities, mean 1."""
    keys = list(utilities)
    if not keys:
        return {}
    u = shift_nonnegative(np.array([float(utilities[k]) for k in keys]), strict=True)
    if np.all(u == u[0]):
        return {k: 1.0 for k in keys}
    # log space keeps large alpha from overflowing
    logw = -cfg.alpha_fairness * np.log(u)
    w = np.exp(logw - logw.max())
    w = w / w.mean()
    return {k: float(x) for k, x in zip(keys, w)}
