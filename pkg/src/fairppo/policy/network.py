"""Separate policy and value MLPs with tanh hidden layers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import NumericError, ShapeError
from . import autodiff as ad


@dataclass(frozen=True)
class Architecture:
    obs_dim: int
    n_actions: int
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.obs_dim < 1 or self.n_actions < 1:
            raise ShapeError("obs_dim and n_actions must be positive")

    def layer_shapes(self, head: str) -> list[tuple[int, int]]:
        out = self.n_actions if head == "pi" else 1
        sizes = (self.obs_dim, *self.hidden, out)
        return list(zip(sizes[:-1], sizes[1:]))

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for head in ("pi", "vf"):
            for k, (fan_in, fan_out) in enumerate(self.layer_shapes(head)):
                shapes[f"{head}.w{k}"] = (fan_in, fan_out)
                shapes[f"{head}.b{k}"] = (fan_out,)
        return shapes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(int(d["obs_dim"]), int(d["n_actions"]), tuple(d["hidden"]))


class ParameterSet(dict):
    """Ordered ``name -> float64 array`` mapping for one policy+value network."""

    def copy(self) -> "ParameterSet":
        return ParameterSet((k, v.copy()) for k, v in self.items())

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet((k, np.zeros_like(v)) for k, v in self.items())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.values()]) if self else np.zeros(0)

    def unflatten(self, vec: np.ndarray) -> "ParameterSet":
        out, pos = ParameterSet(), 0
        for k, v in self.items():
            out[k] = np.asarray(vec[pos:pos + v.size], dtype=np.float64).reshape(v.shape).copy()
            pos += v.size
        return out

    def check_finite(self):
        for k, v in self.items():
            if not np.all(np.isfinite(v)):
                raise NumericError(f"non-finite entries in parameter {k!r}")

    def check_shapes(self, arch: Architecture):
        expected = arch.tensor_shapes()
        if list(expected) != list(self):
            raise ShapeError(f"parameter names {list(self)} do not match architecture")
        for k, shape in expected.items():
            if self[k].shape != shape:
                raise ShapeError(f"{k}: shape {self[k].shape} != {shape}")


def _orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


def init_params(arch: Architecture, rng: np.random.Generator) -> ParameterSet:
    """Orthogonal init: sqrt(2) gain on hidden layers, 0.01 / 1.0 on the policy / value outputs."""
    params = ParameterSet()
    for head, final_gain in (("pi", 0.01), ("vf", 1.0)):
        layers = arch.layer_shapes(head)
        for k, (fan_in, fan_out) in enumerate(layers):
            gain = final_gain if k == len(layers) - 1 else np.sqrt(2.0)
            params[f"{head}.w{k}"] = _orthogonal(rng, fan_in, fan_out, gain)
            params[f"{head}.b{k}"] = np.zeros(fan_out)
    return params


def zero_params(arch: Architecture) -> ParameterSet:
    return ParameterSet((k, np.zeros(s)) for k, s in arch.tensor_shapes().items())


def _n_layers(params, head: str) -> int:
    n = 0
    while f"{head}.w{n}" in params:
        n += 1
    return n


def _check_obs(params, obs: np.ndarray) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    single = obs.ndim == 1
    obs2 = obs[None, :] if single else obs
    if obs2.ndim != 2 or obs2.shape[1] != params["pi.w0"].shape[0]:
        raise ShapeError(f"observation dimension {obs2.shape[-1]} != {params['pi.w0'].shape[0]}")
    if not np.all(np.isfinite(obs2)):
        raise NumericError("non-finite observation")
    return obs2


def mlp_np(params, head: str, x: np.ndarray) -> np.ndarray:
    n = _n_layers(params, head)
    for k in range(n):
        x = x @ params[f"{head}.w{k}"] + params[f"{head}.b{k}"]
        if k < n - 1:
            x = np.tanh(x)
    return x


def mlp_graph(params: dict, head: str, x) -> ad.Tensor:
    """Same computation as :func:`mlp_np` on autodiff tensors."""
    n = _n_layers(params, head)
    for k in range(n):
        x = ad.add(ad.matmul(x, params[f"{head}.w{k}"]), params[f"{head}.b{k}"])
        if k < n - 1:
            x = ad.tanh(x)
    return x


def policy_log_probs(params, obs: np.ndarray) -> np.ndarray:
    return ad.log_softmax_np(mlp_np(params, "pi", _check_obs(params, obs)))


def policy_forward(params, observation: np.ndarray) -> np.ndarray:
    """Action probabilities; a 1-D observation gives a 1-D distribution."""
    obs = np.asarray(observation, dtype=np.float64)
    probs = np.exp(policy_log_probs(params, obs))
    return probs[0] if obs.ndim == 1 else probs


def value_forward(params, observation: np.ndarray):
    obs = np.asarray(observation, dtype=np.float64)
    v = mlp_np(params, "vf", _check_obs(params, obs))[:, 0]
    return float(v[0]) if obs.ndim == 1 else v


def entropy(dist) -> float:
    p = np.asarray(dist, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def sample_actions(log_probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling driven by externally supplied U(0,1) draws."""
    cdf = np.cumsum(np.exp(log_probs), axis=1)
    idx = (cdf <= uniforms[:, None]).sum(axis=1)
    return np.minimum(idx, log_probs.shape[1] - 1)
