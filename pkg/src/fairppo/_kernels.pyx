# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; see ``_kernels_py`` for the reference versions."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

CELL_FEATURES = 6


def discounted_returns(const double[::1] rewards, double gamma):
    cdef Py_ssize_t n = rewards.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double acc = 0.0
    cdef Py_ssize_t t
    for t in range(n - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        o[t] = acc
    return out


def gae_matrix(const double[:, :] rewards, const double[:, :] values,
               const double[:, :] dones, double gamma, double lam):
    cdef Py_ssize_t n = rewards.shape[0]
    cdef Py_ssize_t T = rewards.shape[1]
    adv = np.empty((n, T), dtype=np.float64)
    cdef double[:, ::1] a = adv
    cdef Py_ssize_t i, t
    cdef double last, nonterm, delta
    for i in range(n):
        last = 0.0
        for t in range(T - 1, -1, -1):
            nonterm = 1.0 - dones[i, t]
            delta = rewards[i, t] + gamma * values[i, t + 1] * nonterm - values[i, t]
            last = delta + gamma * lam * nonterm * last
            a[i, t] = last
    return adv


def ah_window(const signed char[:, :] color, const unsigned char[:, :] ripe,
              const int[:, :] occ, const signed char[:] prefs,
              const int[:, :] positions, int radius):
    cdef Py_ssize_t h = color.shape[0]
    cdef Py_ssize_t w = color.shape[1]
    cdef Py_ssize_t n = positions.shape[0]
    cdef Py_ssize_t k = 2 * radius + 1
    out = np.zeros((n, k * k * CELL_FEATURES), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, dr, dc, r, c, base
    cdef int col, other
    for i in range(n):
        for dr in range(k):
            r = positions[i, 0] + dr - radius
            for dc in range(k):
                c = positions[i, 1] + dc - radius
                base = (dr * k + dc) * CELL_FEATURES
                if r < 0 or r >= h or c < 0 or c >= w:
                    o[i, base] = 1.0
                    continue
                col = color[r, c]
                if col == 1:
                    o[i, base + 1] = 1.0
                elif col == 2:
                    o[i, base + 2] = 1.0
                if col > 0 and ripe[r, c] != 0:
                    o[i, base + 3] = 1.0
                other = occ[r, c]
                if other >= 0:
                    if prefs[other] == prefs[i]:
                        o[i, base + 4] = 1.0
                    else:
                        o[i, base + 5] = 1.0
    return out
