"""Disparity metrics, Fair-PPO penalties and inequality statistics.

Returns are plain ``agent -> float`` mappings; groups come from a
:class:`~fairppo.core.GroupPartition`.
"""

from __future__ import annotations

import math
from collections.abc import Hashable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import GroupPartition
from .errors import ConfigError, EmptyGroupError, ValidationError

SHIFT_EPS = 1e-9
NORM_FLOOR = 1e-8


class Metric(str, Enum):
    DP = "DP"
    CF = "CF"
    CSP = "CSP"


@dataclass(frozen=True)
class PenaltySpec:
    metric: Metric = Metric.DP
    alpha: float = 0.0
    beta: float = 0.0
    lf_domain: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"alpha and beta must be non-negative (got {self.alpha}, {self.beta})")
        if self.metric is Metric.CSP and not self.lf_domain:
            raise ConfigError("CSP penalty needs a non-empty legitimate-factor domain")
        object.__setattr__(self, "lf_domain", tuple(self.lf_domain))

    @property
    def is_null(self) -> bool:
        return self.alpha == 0.0 and self.beta == 0.0


def _mean(values: Mapping[int, float], group) -> float:
    group = list(group)
    if not group:
        raise EmptyGroupError("mean over an empty group")
    return sum(values[a] for a in group) / len(group)


# ---------------------------------------------------------------------------
# Disparity metrics
# ---------------------------------------------------------------------------


def demographic_disparity(returns: Mapping[int, float], partition: GroupPartition) -> float:
    """``|mean(N1) - mean(N0)|``."""
    return abs(_mean(returns, sorted(partition.sensitive)) - _mean(returns, sorted(partition.non_sensitive)))


def counterfactual_disparity(factual: Mapping[int, float], counterfactual: Mapping[int, float]) -> float:
    if set(factual) != set(counterfactual):
        raise ValidationError("factual and counterfactual populations differ")
    return float(sum(abs(factual[a] - counterfactual[a]) for a in sorted(factual)))


def conditional_statistical_disparity(
    returns: Mapping[int, float], partition: GroupPartition
) -> tuple[dict, float]:
    """Per-level demographic disparity inside each legitimate-factor subgroup.

    Levels where either group is empty are left out of the map (the caller
    can compare against ``partition.lf_levels()`` to see what was skipped).
    """
    per_lf = {}
    for v in partition.lf_levels():
        s1 = sorted(partition.subgroup(v, 1))
        s0 = sorted(partition.subgroup(v, 0))
        if not s1 or not s0:
            continue
        per_lf[v] = abs(_mean(returns, s1) - _mean(returns, s0))
    if not per_lf:
        raise EmptyGroupError("no legitimate-factor level has both groups populated")
    return per_lf, float(sum(per_lf.values()))


# ---------------------------------------------------------------------------
# Penalties
# ---------------------------------------------------------------------------


def _require(spec: PenaltySpec, metric: Metric):
    if spec.metric is not metric:
        raise ConfigError(f"penalty spec is for {spec.metric.value}, not {metric.value}")


def dp_penalty(group_returns: tuple[float, float], group_values: tuple[float, float], spec: PenaltySpec) -> float:
    _require(spec, Metric.DP)
    g1, g0 = group_returns
    v1, v0 = group_values
    return spec.alpha * abs(g1 - g0) + spec.beta * abs(v1 - v0)


def cf_penalty(
    factual: Mapping[int, tuple[float, float]],
    counterfactual: Mapping[int, tuple[float, float]],
    spec: PenaltySpec,
) -> float:
    _require(spec, Metric.CF)
    if set(factual) != set(counterfactual):
        raise ValidationError("factual and counterfactual populations differ")
    keys = sorted(factual)
    ret = sum(abs(factual[a][0] - counterfactual[a][0]) for a in keys)
    val = sum(abs(factual[a][1] - counterfactual[a][1]) for a in keys)
    return spec.alpha * ret + spec.beta * val


def csp_penalty(
    per_lf_group_returns: Mapping[Hashable, tuple[float, float]],
    per_lf_group_values: Mapping[Hashable, tuple[float, float]],
    spec: PenaltySpec,
) -> float:
    _require(spec, Metric.CSP)
    if not per_lf_group_returns:
        raise EmptyGroupError("no legitimate-factor level has both groups populated")
    levels = sorted(per_lf_group_returns, key=repr)
    ret = sum(abs(per_lf_group_returns[v][0] - per_lf_group_returns[v][1]) for v in levels)
    val = sum(abs(per_lf_group_values[v][0] - per_lf_group_values[v][1]) for v in levels)
    return spec.alpha * ret + spec.beta * val


def penalty_components(
    returns: Mapping[int, float],
    values: Mapping[int, float],
    partition: GroupPartition,
    spec: PenaltySpec,
    cf_returns: Mapping[int, float] | None = None,
    cf_values: Mapping[int, float] | None = None,
) -> tuple[float, float]:
    """Raw (retrospective, prospective) disparities for ``spec.metric``."""
    if spec.metric is Metric.DP:
        return (
            demographic_disparity(returns, partition),
            demographic_disparity(values, partition),
        )
    if spec.metric is Metric.CF:
        if cf_returns is None or cf_values is None:
            raise ValidationError("CF penalty needs counterfactual returns and values")
        return counterfactual_disparity(returns, cf_returns), counterfactual_disparity(values, cf_values)
    return (
        conditional_statistical_disparity(returns, partition)[1],
        conditional_statistical_disparity(values, partition)[1],
    )


def penalty_gradient(
    quantities: Mapping[int, float],
    partition: GroupPartition,
    metric: Metric,
    counterfactual: Mapping[int, float] | None = None,
) -> dict[int, float]:
    """Partial derivative of a disparity with respect to each agent's quantity.

    For DP and CSP this is ``+-sign(gap) / |subgroup|``; for CF it is
    ``sign(x_i - x_i')`` (the counterfactual copy gets the negation).
    Agents outside every populated subgroup get 0.
    """
    metric = Metric(metric)
    grad = {a: 0.0 for a in quantities}
    if metric is Metric.CF:
        if counterfactual is None:
            raise ValidationError("CF gradient needs counterfactual quantities")
        for a in quantities:
            grad[a] = float(np.sign(quantities[a] - counterfactual[a]))
        return grad
    if metric is Metric.DP:
        blocks = [(sorted(partition.sensitive), sorted(partition.non_sensitive))]
    else:
        blocks = [(sorted(partition.subgroup(v, 1)), sorted(partition.subgroup(v, 0))) for v in partition.lf_levels()]
    for s1, s0 in blocks:
        if not s1 or not s0:
            continue
        sign = float(np.sign(_mean(quantities, s1) - _mean(quantities, s0)))
        for a in s1:
            grad[a] += sign / len(s1)
        for a in s0:
            grad[a] -= sign / len(s0)
    return grad


class PenaltyNormalizer:
    """Scales each penalty component by the running maximum of its magnitude."""

    def __init__(self, floor: float = NORM_FLOOR):
        self.floor = floor
        self.max_ret = 0.0
        self.max_val = 0.0

    def __call__(self, ret_gap: float, val_gap: float) -> tuple[float, float]:
        self.max_ret = max(self.max_ret, abs(ret_gap))
        self.max_val = max(self.max_val, abs(val_gap))
        return ret_gap / max(self.max_ret, self.floor), val_gap / max(self.max_val, self.floor)

    @property
    def scales(self) -> tuple[float, float]:
        return max(self.max_ret, self.floor), max(self.max_val, self.floor)

    def state_dict(self) -> dict:
        return {"max_ret": self.max_ret, "max_val": self.max_val}


# ---------------------------------------------------------------------------
# Inequality statistics
# ---------------------------------------------------------------------------


def _as_array(rewards: Sequence[float]) -> np.ndarray:
    x = np.asarray(rewards, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValidationError("statistic of an empty reward vector")
    if not np.all(np.isfinite(x)):
        raise ValidationError("rewards must be finite")
    return x


def shift_nonnegative(x: np.ndarray, strict: bool = False) -> np.ndarray:
    """Shift by ``-min + eps`` when any entry is negative (or zero, if strict)."""
    m = x.min()
    if m < 0 or (strict and m <= 0):
        return x - m + SHIFT_EPS
    return x


def gini(rewards: Sequence[float]) -> float:
    x = np.sort(shift_nonnegative(_as_array(rewards)))
    n = x.size
    total = x.sum()
    if total == 0.0:
        return 0.0
    # sum_{i,j} |x_i - x_j| = 2 * sum_i (2i - n - 1) x_(i) for sorted x, i = 1..n
    ranks = np.arange(1, n + 1, dtype=np.float64)
    return float(np.dot(2.0 * ranks - n - 1.0, x) / (n * total))


def jfi(rewards: Sequence[float]) -> float:
    x = shift_nonnegative(_as_array(rewards))
    sq = float(np.dot(x, x))
    if sq == 0.0:
        return 1.0
    s = float(x.sum())
    return s * s / (x.size * sq)


def nnsw(rewards: Sequence[float]) -> float:
    """Geometric mean over arithmetic mean of the (shifted) rewards."""
    x = _as_array(rewards)
    if np.all(x == x[0]):
        return 1.0
    x = shift_nonnegative(x, strict=True)
    geo = math.exp(float(np.mean(np.log(x))))
    return min(1.0, geo / float(x.mean()))


def price_of_fairness(fair_mean_reward: float, baseline_mean_reward: float) -> float:
    if baseline_mean_reward == 0:
        raise ValidationError("price of fairness is undefined for a zero baseline")
    return (baseline_mean_reward - fair_mean_reward) / abs(baseline_mean_reward)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportOptions:
    counterfactual: Mapping[int, float] | None = None
    baseline_mean_reward: float | None = None
    lf_levels: tuple = ()


@dataclass(frozen=True)
class FairnessReport:
    dp: float
    gini: float
    jfi: float
    nnsw: float
    mean_reward: float
    csp_by_lf: Mapping = field(default_factory=dict)
    csp_total: float | None = None
    csp_skipped: tuple = ()
    cf: float | None = None
    price_of_fairness: float | None = None

    def columns(self, lf_levels: Sequence | None = None) -> list[str]:
        levels = list(lf_levels) if lf_levels is not None else sorted(self.csp_by_lf, key=repr)
        return (
            ["dp", "csp_total"]
            + [f"csp_{v}" for v in levels]
            + ["cf", "gini", "jfi", "nnsw", "mean_reward", "price_of_fairness"]
        )

    def as_row(self, lf_levels: Sequence | None = None) -> dict:
        levels = list(lf_levels) if lf_levels is not None else sorted(self.csp_by_lf, key=repr)
        row = {"dp": self.dp, "csp_total": self.csp_total}
        for v in levels:
            row[f"csp_{v}"] = self.csp_by_lf.get(v)
        row.update(
            cf=self.cf,
            gini=self.gini,
            jfi=self.jfi,
            nnsw=self.nnsw,
            mean_reward=self.mean_reward,
            price_of_fairness=self.price_of_fairness,
        )
        return row

    def csv_header(self, lf_levels: Sequence | None = None) -> str:
        return ",".join(self.columns(lf_levels))

    def csv_row(self, lf_levels: Sequence | None = None) -> str:
        return ",".join(format_value(v) for v in self.as_row(lf_levels).values())

    def to_text(self) -> str:
        lines = [f"{k}: {format_value(v)}" for k, v in self.as_row().items()]
        if self.csp_skipped:
            lines.append("csp_skipped: " + ", ".join(map(str, self.csp_skipped)))
        return "\n".join(lines)


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report(returns: Mapping[int, float], partition: GroupPartition, options: ReportOptions | None = None) -> FairnessReport:
    options = options or ReportOptions()
    vals = [returns[a] for a in sorted(returns)]
    per_lf: dict = {}
    total = None
    skipped: tuple = ()
    if partition.by_lf and not (len(partition.by_lf) == 1 and None in partition.by_lf):
        try:
            per_lf, total = conditional_statistical_disparity(returns, partition)
        except EmptyGroupError:
            per_lf, total = {}, None
        skipped = tuple(v for v in partition.lf_levels() if v not in per_lf)
    cf = None
    if options.counterfactual is not None:
        cf = counterfactual_disparity(returns, options.counterfactual)
    mean_reward = float(np.mean(vals))
    pof = None
    if options.baseline_mean_reward is not None:
        pof = price_of_fairness(mean_reward, options.baseline_mean_reward)
    return FairnessReport(
        dp=demographic_disparity(returns, partition),
        gini=gini(vals),
        jfi=jfi(vals),
        nnsw=nnsw(vals),
        mean_reward=mean_reward,
        csp_by_lf=per_lf,
        csp_total=total,
        csp_skipped=skipped,
        cf=cf,
        price_of_fairness=pof,
    )
