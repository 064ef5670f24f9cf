"""PPO and Fair-PPO objectives, advantage estimation and the shared update.

Objectives are returned as quantities to *maximise*; the update descends
their negation with Adam.

Fair-PPO subtracts ``lambda * penalty`` from the PPO objective. The penalty
value itself is a per-episode constant, so on its own it would not move the
parameters. Two differentiable surrogates carry its gradient:

* retrospective (alpha): ``mean((ratio - 1) * fair_ret_coef)``, a
  score-function estimate of how the sampled actions moved the disparity;
  ``fair_ret_coef`` already holds ``dPenalty/dG_i`` times the advantage.
* prospective (beta): ``sum(fair_val_coef * (V - V_old))`` with
  ``fair_val_coef = dPenalty/dV_t``.

Both vanish at the behaviour policy, so the objective value there equals
``ppo_loss - lambda * penalty`` exactly.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .. import kernels
from ..errors import ConfigError, NumericError, ShapeError, ValidationError
from ..fairness import PenaltySpec
from . import autodiff as ad
from .network import ParameterSet, mlp_graph
from .optim import AdamState, optimize_step

LAMBDA_MAX = 10.0


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    c1: float = 0.5
    c2: float = 0.01
    epochs: int = 4
    minibatch_size: int = 64
    learning_rate: float = 3e-4
    max_grad_norm: float | None = 0.5
    normalize_advantages: bool = True

    def __post_init__(self):
        for name in ("gamma", "gae_lambda"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.clip_epsilon <= 0:
            raise ConfigError("clip_epsilon must be positive")
        if self.c1 < 0 or self.c2 < 0:
            raise ConfigError("c1 and c2 must be non-negative")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ConfigError("epochs and minibatch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass(frozen=True)
class FairPpoConfig:
    ppo: PpoConfig = field(default_factory=PpoConfig)
    penalty: PenaltySpec = field(default_factory=PenaltySpec)
    lambda_mode: str = "dynamic"
    lambda_value: float = 1.0
    per_timestep_penalty: bool = False  # alternative placement of the penalty; not implemented

    def __post_init__(self):
        if self.lambda_mode not in ("fixed", "dynamic"):
            raise ConfigError(f"lambda_mode must be 'fixed' or 'dynamic', got {self.lambda_mode!r}")
        if self.lambda_mode == "fixed" and self.lambda_value < 0:
            raise ConfigError("fixed lambda must be non-negative")
        if self.per_timestep_penalty:
            raise NotImplementedError("per-timestep penalty placement is not implemented")


@dataclass
class AdvantageBatch:
    obs: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    targets: np.ndarray
    old_values: np.ndarray | None = None
    fair_ret_coef: np.ndarray | None = None
    fair_val_coef: np.ndarray | None = None

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.float64)
        if self.obs.ndim == 1:
            self.obs = self.obs[:, None]
        self.actions = np.asarray(self.actions, dtype=np.int64)
        n = len(self.actions)
        for name in ("old_log_probs", "advantages", "targets", "old_values", "fair_ret_coef", "fair_val_coef"):
            val = getattr(self, name)
            if val is None:
                continue
            val = np.asarray(val, dtype=np.float64)
            if val.shape != (n,):
                raise ShapeError(f"{name} has shape {val.shape}, expected ({n},)")
            setattr(self, name, val)
        if self.obs.shape[0] != n:
            raise ShapeError("observation rows do not match batch length")
        if not np.all(np.isfinite(self.advantages)):
            raise NumericError("non-finite advantages")

    def __len__(self):
        return len(self.actions)

    def subset(self, idx) -> "AdvantageBatch":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return AdvantageBatch(
            self.obs[idx], self.actions[idx], self.old_log_probs[idx], self.advantages[idx], self.targets[idx],
            pick(self.old_values), pick(self.fair_ret_coef), pick(self.fair_val_coef),
        )

    @staticmethod
    def concat(batches: Sequence["AdvantageBatch"]) -> "AdvantageBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            raise ValidationError("nothing to concatenate")

        def cat(name):
            parts = [getattr(b, name) for b in batches]
            if all(p is None for p in parts):
                return None
            return np.concatenate([np.zeros(len(b)) if p is None else p for b, p in zip(batches, parts)])

        return AdvantageBatch(
            np.concatenate([b.obs for b in batches]),
            np.concatenate([b.actions for b in batches]),
            cat("old_log_probs"), cat("advantages"), cat("targets"),
            cat("old_values"), cat("fair_ret_coef"), cat("fair_val_coef"),
        )


# ---------------------------------------------------------------------------
# Scalar pieces
# ---------------------------------------------------------------------------


def gae(rewards, values, gamma: float, lam: float, dones=None) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and value targets for one sequence.

    ``values`` carries one entry per step plus the bootstrap value of the
    state after the last step (0 for terminal endings).
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (r.size + 1,):
        raise ShapeError(f"values must have length len(rewards)+1 = {r.size + 1}, got {v.shape}")
    d = np.zeros(r.size) if dones is None else np.asarray(dones, dtype=np.float64)
    adv = kernels.gae_matrix(r[None, :], v[None, :], d[None, :], gamma, lam)[0]
    return adv, adv + v[:-1]


def advantages(batch, values: Mapping[int, Sequence[float]], cfg: PpoConfig) -> AdvantageBatch:
    """Build an :class:`AdvantageBatch` from a ``TrajectoryBatch``.

    ``values[agent]`` holds the value estimate of every recorded state plus
    a bootstrap entry for the state after the last step.
    """
    parts = []
    for agent in batch.agents:
        steps = batch.steps[agent]
        if not steps:
            continue
        vals = np.asarray(values[agent], dtype=np.float64)
        if steps[-1].terminal:
            if vals.size == len(steps):
                vals = np.append(vals, 0.0)
            vals = vals.copy()
            vals[-1] = 0.0
        rewards = [s.reward for s in steps]
        adv, targets = gae(rewards, vals, cfg.gamma, cfg.gae_lambda)
        parts.append(
            AdvantageBatch(
                np.stack([np.asarray(s.observation, dtype=np.float64) for s in steps]),
                [s.action for s in steps],
                [s.log_prob for s in steps],
                adv,
                targets,
                old_values=vals[:-1],
            )
        )
    return AdvantageBatch.concat(parts)


def clip_objective(ratio: float, advantage: float, epsilon: float) -> float:
    if not ratio > 0:
        raise NumericError(f"probability ratio must be positive, got {ratio}")
    return min(ratio * advantage, min(max(ratio, 1.0 - epsilon), 1.0 + epsilon) * advantage)


def value_loss(value: float, target: float) -> float:
    return (value - target) ** 2


def dynamic_lambda(ppo_loss_magnitude: float, penalty_magnitude: float, lambda_max: float = LAMBDA_MAX) -> float:
    if ppo_loss_magnitude < 0 and penalty_magnitude < 0:
        raise ValidationError("magnitudes must be non-negative")
    lam = abs(ppo_loss_magnitude) / (abs(penalty_magnitude) + 1e-8)
    return float(min(max(lam, 0.0), lambda_max))


# ---------------------------------------------------------------------------
# Objectives on the autodiff graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FairTerms:
    """Episode-level penalty inputs for one update."""

    penalty_value: float
    lam: float
    alpha: float
    beta: float


def _wrap(params) -> dict:
    return {k: ad.Tensor(v, requires_grad=True) for k, v in params.items()}


def objective_graph(tparams: dict, batch: AdvantageBatch, cfg: PpoConfig, fair: FairTerms | None = None) -> ad.Tensor:
    if len(batch) == 0:
        raise ValidationError("empty batch")
    logits = mlp_graph(tparams, "pi", ad.Tensor(batch.obs))
    logp_all = ad.log_softmax(logits)
    logp = ad.take_rows(logp_all, batch.actions)
    ratio = ad.exp(ad.sub(logp, batch.old_log_probs))
    eps = cfg.clip_epsilon
    surr = ad.minimum(ad.mul(ratio, batch.advantages), ad.mul(ad.clip(ratio, 1.0 - eps, 1.0 + eps), batch.advantages))
    l_clip = ad.mean(surr)
    ent = ad.mean(ad.mul(ad.sum_(ad.mul(ad.exp(logp_all), logp_all), axis=1), -1.0))
    v = ad.column(mlp_graph(tparams, "vf", ad.Tensor(batch.obs)), 0)
    l_vf = ad.mean(ad.square(ad.sub(v, batch.targets)))
    obj = ad.add(ad.sub(l_clip, ad.mul(l_vf, cfg.c1)), ad.mul(ent, cfg.c2))
    if fair is None:
        return obj
    pen = ad.Tensor(fair.penalty_value)
    if batch.fair_ret_coef is not None:
        ret_sur = ad.mean(ad.mul(ad.sub(ratio, 1.0), batch.fair_ret_coef))
        pen = ad.add(pen, ad.mul(ret_sur, fair.alpha))
    if batch.fair_val_coef is not None:
        base = batch.old_values if batch.old_values is not None else np.zeros(len(batch))
        val_sur = ad.sum_(ad.mul(ad.sub(v, base), batch.fair_val_coef))
        pen = ad.add(pen, ad.mul(val_sur, fair.beta))
    return ad.sub(obj, ad.mul(pen, fair.lam))


def ppo_loss(params, advantage_batch: AdvantageBatch, cfg: PpoConfig) -> float:
    """Mean of ``L_clip - c1 * L_vf + c2 * H`` (to be maximised)."""
    return objective_graph(params, advantage_batch, cfg).item()


def fair_ppo_loss(params, advantage_batch: AdvantageBatch, penalty_value: float, lam: float, cfg) -> float:
    """``ppo_loss - lam * penalty`` including the gradient-carrying surrogates."""
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    if penalty_value < 0:
        raise ValidationError("penalty must be non-negative")
    ppo_cfg, spec = _split(cfg)
    fair = FairTerms(float(penalty_value), float(lam), spec.alpha, spec.beta)
    return objective_graph(params, advantage_batch, ppo_cfg, fair).item()


def _split(cfg) -> tuple[PpoConfig, PenaltySpec]:
    if isinstance(cfg, FairPpoConfig):
        return cfg.ppo, cfg.penalty
    return cfg, PenaltySpec()


def gradient(objective: Callable[[dict], ad.Tensor], params) -> ParameterSet:
    """Reverse-mode gradient of ``objective(tensor_params)`` w.r.t. ``params``."""
    tparams = _wrap(params)
    out = objective(tparams)
    if not isinstance(out, ad.Tensor):
        out = ad.as_tensor(out)
    if out.data.size != 1:
        raise ShapeError("objective must be scalar")
    out.backward()
    grads = ParameterSet()
    for k, t in tparams.items():
        g = np.zeros_like(t.data) if t.grad is None else t.grad.reshape(t.data.shape)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {k!r}")
        grads[k] = g
    return grads


def value_and_gradient(objective: Callable[[dict], ad.Tensor], params) -> tuple[float, ParameterSet]:
    holder = {}

    def wrapped(tp):
        holder["v"] = objective(tp)
        return holder["v"]

    g = gradient(wrapped, params)
    return holder["v"].item(), g


def numerical_gradient(fn: Callable[[ParameterSet], float], params, h: float = 1e-5) -> ParameterSet:
    """Central finite differences, one coordinate at a time."""
    base = ParameterSet((k, np.array(v, dtype=np.float64, order="C")) for k, v in params.items())
    out = ParameterSet()
    for k, v in base.items():
        g = np.zeros_like(v)
        flat = v.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = fn(base)
            flat[i] = old - h
            fm = fn(base)
            flat[i] = old
            gf[i] = (fp - fm) / (2.0 * h)
        out[k] = g
    return out


def _mlp_forward(params, head: str, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    acts = [x]
    k = 0
    while f"{head}.w{k}" in params:
        x = x @ params[f"{head}.w{k}"] + params[f"{head}.b{k}"]
        if f"{head}.w{k + 1}" in params:
            x = np.tanh(x)
            acts.append(x)
        k += 1
    return x, acts


def _mlp_backward(params, head: str, acts: list[np.ndarray], g: np.ndarray, out: dict):
    n = len(acts)
    for k in reversed(range(n)):
        out[f"{head}.w{k}"] = acts[k].T @ g
        out[f"{head}.b{k}"] = g.sum(axis=0)
        if k:
            g = (g @ params[f"{head}.w{k}"].T) * (1.0 - acts[k] * acts[k])


def objective_and_gradient(params, batch: AdvantageBatch, cfg: PpoConfig, fair: FairTerms | None = None):
    """Closed-form value and gradient of :func:`objective_graph`.

    Same conventions as the graph version: ties in the surrogate minimum take
    the unclipped branch, and the clip passes gradient on its closed interval.
    """
    n = len(batch)
    if n == 0:
        raise ValidationError("empty batch")
    rows = np.arange(n)
    logits, pi_acts = _mlp_forward(params, "pi", batch.obs)
    logp_all = ad.log_softmax_np(logits)
    p = np.exp(logp_all)
    logp = logp_all[rows, batch.actions]
    ratio = np.exp(logp - batch.old_log_probs)
    adv = batch.advantages
    eps = cfg.clip_epsilon
    s1 = ratio * adv
    s2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    pick = s1 <= s2
    inside = (ratio >= 1.0 - eps) & (ratio <= 1.0 + eps)
    ent_rows = -np.sum(p * logp_all, axis=1)
    vout, vf_acts = _mlp_forward(params, "vf", batch.obs)
    v = vout[:, 0]
    diff = v - batch.targets
    value = float(np.mean(np.where(pick, s1, s2)) - cfg.c1 * np.mean(diff * diff) + cfg.c2 * np.mean(ent_rows))

    g_ratio = np.where(pick, adv, adv * inside) / n
    g_v = -cfg.c1 * 2.0 * diff / n
    if fair is not None:
        pen = fair.penalty_value
        if batch.fair_ret_coef is not None:
            pen += fair.alpha * float(np.mean((ratio - 1.0) * batch.fair_ret_coef))
            g_ratio = g_ratio - fair.lam * fair.alpha * batch.fair_ret_coef / n
        if batch.fair_val_coef is not None:
            base = batch.old_values if batch.old_values is not None else np.zeros(n)
            pen += fair.beta * float(np.sum((v - base) * batch.fair_val_coef))
            g_v = g_v - fair.lam * fair.beta * batch.fair_val_coef
        value -= fair.lam * pen
    g_logp = g_ratio * ratio
    g_logits = -g_logp[:, None] * p
    g_logits[rows, batch.actions] += g_logp
    g_logits -= (cfg.c2 / n) * p * (logp_all + ent_rows[:, None])

    grads: dict = {}
    _mlp_backward(params, "pi", pi_acts, g_logits, grads)
    _mlp_backward(params, "vf", vf_acts, g_v[:, None], grads)
    out = ParameterSet()
    for k in params:
        g = grads[k]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {k!r}")
        out[k] = g
    return value, out


# ---------------------------------------------------------------------------
# Shared update
# ---------------------------------------------------------------------------


@dataclass
class UpdateStats:
    objective: float = 0.0
    ppo_objective: float = 0.0
    lam: float = 0.0
    penalty: float = 0.0
    minibatches: int = 0


def normalize_advantages(batch: AdvantageBatch) -> AdvantageBatch:
    a = batch.advantages
    if a.size < 2:
        return batch
    std = a.std()
    return replace(batch, advantages=(a - a.mean()) / (std + 1e-8))


def ppo_update(
    params: ParameterSet,
    opt_state: AdamState,
    batch: AdvantageBatch,
    cfg: PpoConfig,
    rng: np.random.Generator,
    fair: FairTerms | None = None,
) -> tuple[ParameterSet, AdamState, UpdateStats]:
    """Epochs of shuffled minibatch Adam steps on the (Fair-)PPO objective.

    This single routine serves Fair-PPO, PPO, and the FEN/SOTO baselines.
    """
    n = len(batch)
    if n == 0:
        raise ValidationError("empty batch")
    if cfg.normalize_advantages:
        batch = normalize_advantages(batch)
    stats = UpdateStats(lam=0.0 if fair is None else fair.lam, penalty=0.0 if fair is None else fair.penalty_value)
    mb = min(cfg.minibatch_size, n)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, mb):
            idx = perm[start:start + mb]
            sub = batch.subset(idx)
            if sub.fair_val_coef is not None:
                sub.fair_val_coef = sub.fair_val_coef * (n / len(idx))
            value, grad = objective_and_gradient(params, sub, cfg, fair)
            if cfg.max_grad_norm is not None:
                norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grad.values())))
                if norm > cfg.max_grad_norm:
                    scale = cfg.max_grad_norm / (norm + 1e-12)
                    grad = ParameterSet((k, g * scale) for k, g in grad.items())
            descent = ParameterSet((k, -g) for k, g in grad.items())
            params, opt_state = optimize_step(params, descent, opt_state, cfg.learning_rate)
            stats.objective += value
            stats.minibatches += 1
    stats.objective /= max(stats.minibatches, 1)
    return params, opt_state, stats
