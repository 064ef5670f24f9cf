"""Independent brute-force references: plain loops over agents, no numpy reductions."""

from __future__ import annotations

import math


def mean(xs):
    xs = list(xs)
    return sum(xs) / len(xs)


def dp(returns, z):
    g1 = [returns[a] for a in returns if z[a] == 1]
    g0 = [returns[a] for a in returns if z[a] == 0]
    return abs(mean(g1) - mean(g0))


def cf(factual, counterfactual):
    total = 0.0
    for a in factual:
        total += abs(factual[a] - counterfactual[a])
    return total


def csp(returns, z, lf):
    per = {}
    for v in set(lf.values()):
        g1 = [returns[a] for a in returns if z[a] == 1 and lf[a] == v]
        g0 = [returns[a] for a in returns if z[a] == 0 and lf[a] == v]
        if g1 and g0:
            per[v] = abs(mean(g1) - mean(g0))
    return per, sum(per.values())


def shifted(xs, strict=False):
    m = min(xs)
    if m < 0 or (strict and m <= 0):
        return [x - m + 1e-9 for x in xs]
    return list(xs)


def gini(xs):
    x = shifted(xs)
    n = len(x)
    mu = sum(x) / n
    if mu == 0:
        return 0.0
    s = 0.0
    for a in x:
        for b in x:
            s += abs(a - b)
    return s / (2 * n * n * mu)


def jfi(xs):
    x = shifted(xs)
    sq = sum(a * a for a in x)
    if sq == 0:
        return 1.0
    return sum(x) ** 2 / (len(x) * sq)


def nnsw(xs):
    if all(a == xs[0] for a in xs):
        return 1.0
    x = shifted(xs, strict=True)
    geo = math.exp(sum(math.log(a) for a in x) / len(x))
    return min(1.0, geo / (sum(x) / len(x)))


def dp_penalty(returns, values, z, alpha, beta):
    return alpha * dp(returns, z) + beta * dp(values, z)


def cf_penalty(ret, val, cf_ret, cf_val, alpha, beta):
    return alpha * cf(ret, cf_ret) + beta * cf(val, cf_val)


def csp_penalty(returns, values, z, lf, alpha, beta):
    return alpha * csp(returns, z, lf)[1] + beta * csp(values, z, lf)[1]


def gae(rewards, values, gamma, lam):
    """Explicit double sum: A_t = sum_l (gamma lam)^l delta_{t+l}."""
    n = len(rewards)
    deltas = [rewards[t] + gamma * values[t + 1] - values[t] for t in range(n)]
    out = []
    for t in range(n):
        s = 0.0
        for l in range(n - t):
            s += (gamma * lam) ** l * deltas[t + l]
        out.append(s)
    return out


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)
