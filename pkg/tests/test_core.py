from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairppo.core import (
    AgentProfile,
    StepRecord,
    TrajectoryBatch,
    discounted_returns,
    group_mean_return,
    partition,
    total_return,
)
from fairppo.errors import ConfigError, EmptyGroupError, ValidationError

rewards_lists = st.lists(st.floats(-100, 100, allow_nan=False), min_size=0, max_size=30)


def test_total_return_examples():
    batch = TrajectoryBatch.from_rewards({0: [1.0, 2.0, -0.5], 1: [], 2: [5.0]}, T=3)
    assert total_return(batch, 0) == 2.5
    assert total_return(batch, 1) == 0.0
    assert total_return(batch, 2) == 5.0
    with pytest.raises(KeyError):
        total_return(batch, 9)


def test_discounted_returns_examples():
    assert discounted_returns([1, 1, 1], 1.0).tolist() == [3, 2, 1]
    assert discounted_returns([1, 1, 1], 0.0).tolist() == [1, 1, 1]
    assert discounted_returns([0, 0, 4], 0.5).tolist() == [1, 2, 4]
    with pytest.raises(ConfigError):
        discounted_returns([1.0], 1.5)


@given(rewards_lists, st.floats(0, 1))
def test_discounted_returns_recursion(rs, gamma):
    g = discounted_returns(rs, gamma)
    assert g.shape == (len(rs),)
    for t in range(len(rs) - 1):
        assert g[t] == pytest.approx(rs[t] + gamma * g[t + 1], rel=1e-12, abs=1e-12)


@given(rewards_lists)
def test_total_return_is_undiscounted_head(rs):
    batch = TrajectoryBatch.from_rewards({0: rs}, T=max(len(rs), 1))
    g = discounted_returns(rs, 1.0)
    expected = g[0] if rs else 0.0
    assert total_return(batch, 0) == pytest.approx(expected, rel=1e-12, abs=1e-9)


def test_group_mean_return():
    batch = TrajectoryBatch.from_rewards({0: [2.0], 1: [1.0, 3.0], 2: [7.0]})
    assert group_mean_return(batch, {0, 1}) == 3.0
    assert group_mean_return(batch, {2}) == 7.0
    with pytest.raises(EmptyGroupError):
        group_mean_return(batch, set())


def test_partition_examples():
    profs = [AgentProfile(i, z, lf) for i, (z, lf) in enumerate(zip([1, 0, 1, 0], ["red", "red", "blue", "blue"]))]
    p = partition(profs)
    assert p.sensitive == {0, 2} and p.non_sensitive == {1, 3}
    assert {k: len(v) for k, v in p.by_lf.items()} == {"red": 2, "blue": 2}
    assert partition([AgentProfile(0, 0), AgentProfile(1, 0)]).sensitive == frozenset()
    with pytest.raises(ValidationError):
        partition([AgentProfile(0, 0), AgentProfile(0, 1)])
    with pytest.raises(ValidationError):
        partition([])


@given(st.lists(st.tuples(st.integers(0, 1), st.sampled_from("abc")), min_size=1, max_size=15), st.randoms())
def test_partition_order_independent(spec, rnd):
    profs = [AgentProfile(i, z, lf) for i, (z, lf) in enumerate(spec)]
    shuffled = profs[:]
    rnd.shuffle(shuffled)
    a, b = partition(profs), partition(shuffled)
    assert a == b
    assert a.sensitive | a.non_sensitive == frozenset(range(len(spec)))
    assert not a.sensitive & a.non_sensitive
    assert frozenset().union(*a.by_lf.values()) == a.agents


def test_restrict_drops_empty_levels():
    profs = [AgentProfile(0, 1, "x"), AgentProfile(1, 0, "x"), AgentProfile(2, 0, "y")]
    r = partition(profs).restrict({0, 1})
    assert r.agents == {0, 1} and r.lf_levels() == ["x"]


def test_record_validation():
    with pytest.raises(ValidationError):
        AgentProfile(0, 2)
    with pytest.raises(ValidationError):
        StepRecord(np.zeros(1), 0, 0.5, 0.0, 0.0)
    with pytest.raises(ValidationError):
        StepRecord(np.zeros(1), -1, -0.1, 0.0, 0.0)
    term = StepRecord(np.zeros(1), 0, -0.1, 1.0, 0.0, terminal=True)
    with pytest.raises(ValidationError):
        TrajectoryBatch({0: (term, term)}, T=5)
    with pytest.raises(ValidationError):
        TrajectoryBatch({0: (StepRecord(np.zeros(1), 3, -0.1, 0.0, 0.0),)}, T=5, action_counts={0: 2})
    with pytest.raises(ValidationError):
        TrajectoryBatch.from_rewards({0: [1.0, 2.0]}, T=1)
