"""Episode runners binding algorithms to the two environments."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from ..core import GroupPartition
from ..envs import ah, hs
from ..fairness import shift_nonnegative
from .agents import Algorithm, EpisodeContext

AH_SLOTS_GROUPED = ("z0", "z1")
AH_SLOTS_SHARED = ("shared",)
HS_SLOTS = {
    "triage_router": (hs.TRIAGE_OBS_DIM, hs.N_TRIAGE_ACTIONS),
    "escort_dispatcher": (hs.ESCORT_OBS_DIM, hs.N_ESCORT_ACTIONS),
    "doctor_manager": (hs.DOCTOR_OBS_DIM, hs.N_DOCTOR_ACTIONS),
}


def ah_slots(cfg: ah.AhConfig, shared: bool) -> dict:
    names = AH_SLOTS_SHARED if shared else AH_SLOTS_GROUPED
    return {n: (cfg.obs_dim, ah.N_ACTIONS) for n in names}


@dataclass
class EpisodeResult:
    returns: dict
    partition: GroupPartition
    value_sums: dict = field(default_factory=dict)
    value_counts: dict = field(default_factory=dict)
    hs_metrics: hs.HsMetrics | None = None
    invariant_violations: list = field(default_factory=list)

    @property
    def mean_reward(self) -> float:
        return float(np.mean(list(self.returns.values()))) if self.returns else 0.0


# ---------------------------------------------------------------------------
# Allelopathic Harvest
# ---------------------------------------------------------------------------


def run_ah_episode(
    alg: Algorithm,
    cfg: ah.AhConfig,
    episode_seed: int,
    record: bool = True,
    deterministic: bool = False,
    counterfactual: bool = False,
    check: bool = False,
    steps: int | None = None,
    trace: ah.AhTrace | None = None,
) -> EpisodeResult:
    """One episode. The counterfactual twin reuses every random stream."""
    state = ah.ah_reset(cfg, episode_seed)
    if counterfactual:
        state = ah.flip_z(state)
    u_rng = np.random.default_rng([episode_seed, 2])
    aux_rng = np.random.default_rng([episode_seed, 3])
    n = state.n_agents
    T = cfg.episode_length_ts if steps is None else steps
    cum = np.zeros(n)
    vsum = np.zeros(n)
    violations: list[str] = []
    alg.begin_episode()
    if alg.shared_ah:
        groups = [("shared", np.arange(n))]
    else:
        groups = [(f"z{g}", np.flatnonzero(state.z == g)) for g in (0, 1)]
        groups = [(s, idx) for s, idx in groups if idx.size]
    for t in range(T):
        obs = ah.ah_observe_all(state)
        u = u_rng.random(n)
        actions = np.empty(n, dtype=np.int64)
        for slot, idx in groups:
            a, v = alg.act(slot, idx, obs[idx], u[idx], idx, aux_rng, record, deterministic)
            actions[idx] = a
            vsum[idx] += v
        prev = state
        state, r = ah.ah_step(state, actions)
        cum += r
        if check:
            violations += ah.check_invariants(prev, actions, state)
        if trace is not None:
            trace.record(state, actions, r)
        if record:
            own = cum / (t + 1)
            mean = np.full(n, own.mean())
            team = np.full(n, r.mean())
            for slot, idx in groups:
                alg.feedback(slot, idx, r[idx], own[idx], mean[idx], team[idx])
    return EpisodeResult(
        returns={i: float(cum[i]) for i in range(n)},
        partition=state.partition(),
        value_sums={i: float(vsum[i]) for i in range(n)},
        value_counts={i: T for i in range(n)},
        invariant_violations=violations,
    )


def ah_context(res: EpisodeResult, cf: EpisodeResult | None = None) -> EpisodeContext:
    return EpisodeContext(
        returns=res.returns,
        partition=res.partition,
        value_sums=res.value_sums,
        value_counts=res.value_counts,
        cf_returns=None if cf is None else cf.returns,
        cf_value_sums=None if cf is None else cf.value_sums,
        cf_value_counts=None if cf is None else cf.value_counts,
        welfare_utilities=res.returns,
        unit_of=None,
    )


# ---------------------------------------------------------------------------
# HospitalSim
# ---------------------------------------------------------------------------


def _group_utilities(sim: hs.HospitalSim) -> tuple[float, float]:
    """(impaired, overall) utility from patient rewards so far, shifted non-negative."""
    sums = [0.0, 0.0]
    counts = [0, 0]
    for p in sim.patients:
        if p.stage != hs.Stage.NOT_ARRIVED:
            sums[p.z] += p.accumulated_reward
            counts[p.z] += 1
    means = np.array([sums[g] / counts[g] if counts[g] else 0.0 for g in (0, 1)])
    u = shift_nonnegative(means)
    return float(u[1]), float(u.mean())


def run_hs_day(
    alg: Algorithm,
    cfg: hs.HsConfig,
    day_seed: int,
    record: bool = True,
    deterministic: bool = False,
    counterfactual: bool = False,
    check: bool = False,
) -> EpisodeResult:
    """One simulated day. The counterfactual day flips impairments on the same patient pool."""
    patients = hs.sample_day(cfg, day_seed)
    if counterfactual:
        patients = hs.flip_impairments(patients)
    sim = hs.HospitalSim(cfg, seed=day_seed, patients=patients)
    u_rng = {s: np.random.default_rng([day_seed, 2, k]) for k, s in enumerate(sorted(HS_SLOTS))}
    aux_rng = np.random.default_rng([day_seed, 3])
    vsum: dict = defaultdict(float)
    vcnt: dict = defaultdict(int)
    actor = np.zeros(1, dtype=np.int64)
    alg.begin_episode()
    while (req := sim.advance()) is not None:
        slot = req.agent
        tag = -1 if req.patient is None else int(req.patient)
        a, v = alg.act(slot, actor, req.observation[None, :], u_rng[slot].random(1), np.array([tag]), aux_rng,
                       record, deterministic)
        r = sim.apply(req, int(a[0]))
        if tag >= 0:
            vsum[tag] += float(v[0])
            vcnt[tag] += 1
        if record:
            own, mean = _group_utilities(sim)
            alg.feedback(slot, actor, [r], [own], [mean], [r])
    metrics = sim.metrics()
    returns = dict(metrics.patient_rewards)
    violations = hs.check_invariants(sim) if check else []
    return EpisodeResult(
        returns=returns,
        partition=sim.patient_partition() if returns else GroupPartition(frozenset(), frozenset()),
        value_sums=dict(vsum),
        value_counts=dict(vcnt),
        hs_metrics=metrics,
        invariant_violations=violations,
    )


def hs_context(res: EpisodeResult, cf: EpisodeResult | None = None) -> EpisodeContext:
    m = res.hs_metrics
    groups = {z: float(np.mean(v)) for z, v in m.group_rewards.items() if v}
    unit_of = {pid: int(pid in res.partition.sensitive) for pid in res.returns}
    return EpisodeContext(
        returns=res.returns,
        partition=res.partition,
        value_sums=res.value_sums,
        value_counts=res.value_counts,
        cf_returns=None if cf is None else cf.returns,
        cf_value_sums=None if cf is None else cf.value_sums,
        cf_value_counts=None if cf is None else cf.value_counts,
        welfare_utilities=groups,
        unit_of=unit_of,
    )
