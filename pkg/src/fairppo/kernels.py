"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise (or when
``FAIRPPO_PURE_PYTHON=1``) the numpy versions are used. Both backends give
bit-identical outputs, which the test suite checks.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

CELL_FEATURES = _kernels_py.CELL_FEATURES

_ext = None
if not os.environ.get("FAIRPPO_PURE_PYTHON"):
    try:
        from . import _kernels as _ext  # type: ignore[attr-defined]
    except ImportError:
        _ext = None

BACKEND = "cython" if _ext is not None else "python"


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` ('cython', 'python' or None=active)."""
    if name is None:
        name = BACKEND
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _ext is None:
            raise ImportError("compiled kernels are not available")
        return _ext
    raise ValueError(f"unknown backend {name!r}")


_active = get_backend()


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    return _active.discounted_returns(np.ascontiguousarray(rewards, dtype=np.float64), float(gamma))


def gae_matrix(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    return _active.gae_matrix(
        np.ascontiguousarray(rewards, dtype=np.float64),
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(dones, dtype=np.float64),
        float(gamma),
        float(lam),
    )


def ah_window(color, ripe, occ, prefs, positions, radius: int) -> np.ndarray:
    return _active.ah_window(
        np.ascontiguousarray(color, dtype=np.int8),
        np.ascontiguousarray(ripe, dtype=np.uint8),
        np.ascontiguousarray(occ, dtype=np.int32),
        np.ascontiguousarray(prefs, dtype=np.int8),
        np.ascontiguousarray(positions, dtype=np.int32),
        int(radius),
    )
