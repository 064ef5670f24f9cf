"""Adam, as a pure function over parameter dictionaries.

Moments are kept as flat vectors in a fixed key order, so one step is a
handful of vector operations regardless of how many tensors the network has.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from .network import ParameterSet

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass(frozen=True)
class AdamState:
    keys: tuple = ()
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        keys = tuple(params)
        size = sum(np.asarray(params[k]).size for k in keys)
        return cls(keys, np.zeros(size), np.zeros(size), 0)


def _flatten(tensors, keys) -> np.ndarray:
    return np.concatenate([np.asarray(tensors[k], dtype=np.float64).ravel() for k in keys])


def optimize_step(params, gradient, state: AdamState, learning_rate: float):
    """One Adam descent step. Returns new parameters and a new state."""
    if set(params) != set(gradient):
        raise ShapeError("gradient names do not match parameters")
    for k in params:
        if np.shape(gradient[k]) != np.shape(params[k]):
            raise ShapeError(f"{k}: gradient shape {np.shape(gradient[k])} != {np.shape(params[k])}")
    if state.m is None or set(state.keys) != set(params):
        state = AdamState.for_params(params)
    keys = state.keys
    g = _flatten(gradient, keys)
    p = _flatten(params, keys)
    t = state.t + 1
    m = BETA1 * state.m + (1.0 - BETA1) * g
    v = BETA2 * state.v + (1.0 - BETA2) * (g * g)
    p = p - learning_rate * (m / (1.0 - BETA1**t)) / (np.sqrt(v / (1.0 - BETA2**t)) + EPS)
    out = ParameterSet()
    offset = 0
    for k in keys:
        shape = np.shape(params[k])
        size = int(np.prod(shape)) if shape else 1
        out[k] = p[offset:offset + size].reshape(shape)
        offset += size
    return ParameterSet((k, out[k]) for k in params), AdamState(keys, m, v, t)
