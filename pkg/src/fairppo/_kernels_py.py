"""Pure-Python/numpy implementations of the hot kernels.

Each function mirrors ``_kernels.pyx`` operation for operation so the two
backends produce bit-identical results.
"""

from __future__ import annotations

import numpy as np

CELL_FEATURES = 6  # out-of-bounds, red bush, blue bush, ripe berry, same-pref agent, other-pref agent


def discounted_returns(rewards, gamma):
    n = rewards.shape[0]
    out = np.empty(n, dtype=np.float64)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def gae_matrix(rewards, values, dones, gamma, lam):
    """GAE over a batch of equal-length sequences.

    rewards, dones: (N, T); values: (N, T + 1) where column T is the bootstrap.
    Returns advantages of shape (N, T).
    """
    n, T = rewards.shape
    adv = np.empty((n, T), dtype=np.float64)
    last = np.zeros(n, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        nonterm = 1.0 - dones[:, t]
        delta = rewards[:, t] + gamma * values[:, t + 1] * nonterm - values[:, t]
        last = delta + gamma * lam * nonterm * last
        adv[:, t] = last
    return adv


def ah_window(color, ripe, occ, prefs, positions, radius):
    """Egocentric (2r+1)^2 x 6 cell features for every agent."""
    h, w = color.shape
    k = 2 * radius + 1
    n = positions.shape[0]
    pc = np.full((h + 2 * radius, w + 2 * radius), -1, dtype=np.int64)
    pc[radius:radius + h, radius:radius + w] = color
    pr = np.zeros_like(pc)
    pr[radius:radius + h, radius:radius + w] = ripe
    po = np.full_like(pc, -2)
    po[radius:radius + h, radius:radius + w] = occ
    out = np.zeros((n, k, k, CELL_FEATURES), dtype=np.float64)
    for i in range(n):
        r0, c0 = positions[i, 0], positions[i, 1]
        wc = pc[r0:r0 + k, c0:c0 + k]
        wr = pr[r0:r0 + k, c0:c0 + k]
        wo = po[r0:r0 + k, c0:c0 + k]
        occupied = wo >= 0
        opref = np.where(occupied, prefs[np.where(occupied, wo, 0)], -1)
        out[i, :, :, 0] = wc == -1
        out[i, :, :, 1] = wc == 1
        out[i, :, :, 2] = wc == 2
        out[i, :, :, 3] = (wr != 0) & (wc > 0)
        out[i, :, :, 4] = occupied & (opref == prefs[i])
        out[i, :, :, 5] = occupied & (opref != prefs[i])
    return out.reshape(n, k * k * CELL_FEATURES)
