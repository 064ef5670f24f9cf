"""Learners and the four training algorithms (Fair-PPO, PPO, FEN, SOTO).

Algorithms know nothing about the environments. A runner calls, per episode:
``begin_episode`` -> (``act`` / ``feedback``)* -> ``end_episode(ctx)``.
Actions are grouped into *slots*, one parameter set (or family of parameter
sets) per slot; ``actors`` index independent trajectories inside a slot and
``tags`` name the fairness-population member a sample concerns.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field, replace

import numpy as np

from ..benchmarks import (
    FenConfig,
    SotoConfig,
    fen_controller_due,
    fen_fair_efficient_reward,
    soto_select_head,
    soto_team_probability,
    soto_welfare_weight,
)
from ..core import GroupPartition
from ..errors import EmptyGroupError, NumericError
from ..fairness import (
    Metric,
    PenaltyNormalizer,
    conditional_statistical_disparity,
    counterfactual_disparity,
    demographic_disparity,
    penalty_gradient,
)
from ..policy import checkpoint
from ..policy.network import Architecture, ParameterSet, init_params, mlp_np, policy_log_probs, sample_actions
from ..policy.optim import AdamState
from ..policy.ppo import (
    AdvantageBatch,
    FairPpoConfig,
    FairTerms,
    PpoConfig,
    UpdateStats,
    dynamic_lambda,
    gae,
    normalize_advantages,
    ppo_loss,
    ppo_update,
)

# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


class Learner:
    """One parameter set with its optimizer state and shuffling stream."""

    def __init__(self, name: str, arch: Architecture, cfg: PpoConfig, seed: tuple):
        self.name = name
        self.arch = arch
        self.cfg = cfg
        self.params = init_params(arch, np.random.default_rng([*seed, 0]))
        self.opt = AdamState.for_params(self.params)
        self.rng = np.random.default_rng([*seed, 1])

    def forward(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        obs = np.atleast_2d(obs)
        return policy_log_probs(self.params, obs), mlp_np(self.params, "vf", obs)[:, 0]

    def value(self, obs: np.ndarray) -> float:
        return float(mlp_np(self.params, "vf", np.atleast_2d(obs))[0, 0])

    def update(self, batch: AdvantageBatch, fair: FairTerms | None = None) -> UpdateStats:
        params, opt, stats = ppo_update(self.params, self.opt, batch, self.cfg, self.rng, fair)
        try:
            params.check_finite()
        except NumericError as exc:
            raise NumericError(f"{self.name}: {exc}") from exc
        self.params, self.opt = params, opt
        return stats


def choose(logp: np.ndarray, uniforms: np.ndarray, deterministic: bool) -> np.ndarray:
    if deterministic:
        return np.argmax(logp, axis=1)
    return sample_actions(logp, np.asarray(uniforms, dtype=np.float64))


@dataclass
class _Segment:
    actor: int
    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    logp: list = field(default_factory=list)
    values: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    tags: list = field(default_factory=list)
    bootstrap: float = 0.0


@dataclass
class SampleInfo:
    actors: np.ndarray
    tags: np.ndarray
    advantages: np.ndarray  # before any normalisation or weighting


class TrajectoryStore:
    """Per-actor trajectory segments for one learner."""

    def __init__(self):
        self._open: dict[int, _Segment] = {}
        self.segments: list[_Segment] = []

    def add(self, actor: int, obs, action: int, logp: float, value: float, tag: int):
        seg = self._open.get(actor)
        if seg is None:
            seg = self._open[actor] = _Segment(actor)
        seg.obs.append(obs)
        seg.actions.append(int(action))
        seg.logp.append(float(logp))
        seg.values.append(float(value))
        seg.rewards.append(0.0)
        seg.tags.append(int(tag))

    def reward(self, actor: int, r: float):
        seg = self._open.get(actor)
        if seg is not None and seg.rewards:
            seg.rewards[-1] += float(r)

    def is_open(self, actor: int) -> bool:
        return actor in self._open

    def close(self, actor: int, bootstrap: float = 0.0):
        seg = self._open.pop(actor, None)
        if seg is not None and seg.actions:
            seg.bootstrap = float(bootstrap)
            self.segments.append(seg)

    def close_all(self):
        for actor in sorted(self._open):
            self.close(actor)

    def __len__(self):
        return sum(len(s.actions) for s in self.segments)

    def build(self, cfg: PpoConfig) -> tuple[AdvantageBatch, SampleInfo] | None:
        if not self.segments:
            return None
        obs, acts, logp, adv, tgt, vals, actors, tags = [], [], [], [], [], [], [], []
        for s in self.segments:
            a, t = gae(s.rewards, s.values + [s.bootstrap], cfg.gamma, cfg.gae_lambda)
            obs.append(np.asarray(s.obs, dtype=np.float64))
            acts += s.actions
            logp += s.logp
            adv.append(a)
            tgt.append(t)
            vals += s.values
            actors += [s.actor] * len(s.actions)
            tags += s.tags
        adv = np.concatenate(adv)
        batch = AdvantageBatch(np.concatenate(obs), acts, logp, adv, np.concatenate(tgt), old_values=vals)
        return batch, SampleInfo(np.asarray(actors), np.asarray(tags), adv.copy())

    def clear(self):
        self._open.clear()
        self.segments.clear()


@dataclass
class EpisodeContext:
    """Episode-end information the runner hands to the algorithm."""

    returns: Mapping[int, float]
    partition: GroupPartition
    value_sums: Mapping[int, float] = field(default_factory=dict)
    value_counts: Mapping[int, int] = field(default_factory=dict)
    cf_returns: Mapping[int, float] | None = None
    cf_value_sums: Mapping[int, float] | None = None
    cf_value_counts: Mapping[int, int] | None = None
    welfare_utilities: Mapping | None = None  # unit -> utility for SOTO
    unit_of: Mapping[int, object] | None = None  # tag -> welfare unit

    def mean_values(self, cf: bool = False) -> dict[int, float]:
        sums = self.cf_value_sums if cf else self.value_sums
        counts = self.cf_value_counts if cf else self.value_counts
        if sums is None:
            return {}
        return {k: sums[k] / counts[k] for k in sums if counts.get(k)}


def _arch_key(slot: str, role: str) -> str:
    return f"{slot}/{role}"


class Algorithm:
    """Shared plumbing: slots, learners, checkpoint round-trip."""

    name = "base"
    shared_ah = False  # one slot for every AH agent instead of one per group

    def __init__(self, slots: Mapping[str, tuple[int, int]], seed: int, hidden=(64, 64)):
        self.slots = dict(slots)
        self.seed = int(seed)
        self.hidden = tuple(hidden)
        self.progress = 0.0
        self.learners: dict[str, Learner] = {}

    def _learner(self, slot: str, role: str, n_actions: int, cfg: PpoConfig, index: int) -> Learner:
        obs_dim = self.slots[slot][0]
        slot_index = sorted(self.slots).index(slot)
        ln = Learner(_arch_key(slot, role), Architecture(obs_dim, n_actions, self.hidden), cfg, (self.seed, slot_index, index))
        self.learners[ln.name] = ln
        return ln

    def set_progress(self, progress: float):
        self.progress = float(min(max(progress, 0.0), 1.0))

    def begin_episode(self):
        pass

    def networks(self) -> dict:
        return {k: (ln.arch, ln.params) for k, ln in sorted(self.learners.items())}

    def load_networks(self, nets: Mapping):
        for k, (arch, params) in nets.items():
            ln = self.learners[k]
            params.check_shapes(ln.arch)
            ln.params = ParameterSet((n, np.array(v, dtype=np.float64)) for n, v in params.items())

    def expected_architectures(self) -> dict:
        return {k: ln.arch for k, ln in self.learners.items()}

    def save(self, path, metadata: dict | None = None):
        return checkpoint.save(path, self.networks(), metadata)

    def load(self, path):
        nets, meta = checkpoint.load(path, self.expected_architectures())
        self.load_networks(nets)
        return meta

    def traces(self) -> dict:
        return {}


# ---------------------------------------------------------------------------
# PPO and Fair-PPO
# ---------------------------------------------------------------------------


def _gap_and_grad(q: Mapping[int, float], partition: GroupPartition, metric: Metric, cf: Mapping[int, float] | None):
    """Raw disparity of ``q`` and its per-member derivative."""
    if metric is Metric.CF:
        if cf is None:
            return 0.0, {}
        keys = sorted(set(q) & set(cf))
        if not keys:
            return 0.0, {}
        qq = {k: q[k] for k in keys}
        cc = {k: cf[k] for k in keys}
        return counterfactual_disparity(qq, cc), penalty_gradient(qq, partition, metric, cc)
    part = partition.restrict(q)
    qq = {k: q[k] for k in part.agents}
    try:
        if metric is Metric.DP:
            gap = demographic_disparity(qq, part)
        else:
            gap = conditional_statistical_disparity(qq, part)[1]
    except EmptyGroupError:
        return 0.0, {}
    return gap, penalty_gradient(qq, part, metric)


class PpoAlgorithm(Algorithm):
    """Plain PPO, or Fair-PPO when ``fair`` is given."""

    name = "ppo"

    def __init__(self, slots, seed: int, cfg: PpoConfig | None = None, fair: FairPpoConfig | None = None,
                 hidden=(64, 64), shared_ah: bool = False):
        super().__init__(slots, seed, hidden)
        self.fair = fair
        self.cfg = fair.ppo if fair is not None else (cfg or PpoConfig())
        self.shared_ah = shared_ah
        if fair is not None:
            self.name = "fairppo"
        self.normalizer = PenaltyNormalizer()
        self.policy = {s: self._learner(s, "policy", n_act, self.cfg, 0) for s, (_, n_act) in self.slots.items()}
        self.stores = {s: TrajectoryStore() for s in self.slots}

    def act(self, slot, actors, obs, uniforms, tags, aux_rng=None, record=True, deterministic=False):
        logp, v = self.policy[slot].forward(obs)
        a = choose(logp, uniforms, deterministic)
        if record:
            st = self.stores[slot]
            for j, actor in enumerate(actors):
                st.add(int(actor), obs[j], a[j], logp[j, a[j]], v[j], tags[j])
        return a, v

    def feedback(self, slot, actors, rewards, own_utility=None, mean_utility=None, team_rewards=None):
        st = self.stores[slot]
        for actor, r in zip(actors, rewards):
            st.reward(int(actor), r)

    def _fair_terms(self, ctx: EpisodeContext) -> dict:
        spec = self.fair.penalty
        metric = spec.metric
        values = ctx.mean_values()
        cf_values = ctx.mean_values(cf=True) if ctx.cf_value_sums is not None else None
        ret_gap, gr = _gap_and_grad(ctx.returns, ctx.partition, metric, ctx.cf_returns)
        val_gap, gv = _gap_and_grad(values, ctx.partition, metric, cf_values)
        nr, nv = self.normalizer(ret_gap, val_gap)
        sr, sv = self.normalizer.scales
        return {
            "penalty": spec.alpha * nr + spec.beta * nv,
            "ret_gap": ret_gap,
            "val_gap": val_gap,
            "gr": gr,
            "gv": gv,
            "sr": sr,
            "sv": sv,
            "counts": ctx.value_counts,
        }

    def end_episode(self, ctx: EpisodeContext | None = None) -> dict:
        terms = self._fair_terms(ctx) if self.fair is not None else None
        stats = {"penalty": None, "lambda": None, "ret_gap": None, "val_gap": None}
        lams = []
        for slot in sorted(self.slots):
            st = self.stores[slot]
            st.close_all()
            built = st.build(self.cfg)
            st.clear()
            if built is None:
                continue
            batch, info = built
            fair = None
            if terms is not None:
                spec = self.fair.penalty
                gr, gv, counts = terms["gr"], terms["gv"], terms["counts"]
                ret_coef = np.array([gr.get(int(t), 0.0) for t in info.tags]) * info.advantages / terms["sr"]
                val_coef = np.array(
                    [gv.get(int(t), 0.0) / counts[int(t)] if int(t) in gv else 0.0 for t in info.tags]
                ) / terms["sv"]
                batch = replace(batch, fair_ret_coef=ret_coef, fair_val_coef=val_coef)
                if self.fair.lambda_mode == "fixed":
                    lam = self.fair.lambda_value
                else:
                    probe = normalize_advantages(batch) if self.cfg.normalize_advantages else batch
                    lam = dynamic_lambda(abs(ppo_loss(self.policy[slot].params, probe, self.cfg)), terms["penalty"])
                lams.append(lam)
                fair = FairTerms(terms["penalty"], lam, spec.alpha, spec.beta)
            self.policy[slot].update(batch, fair)
        if terms is not None:
            stats.update(penalty=terms["penalty"], ret_gap=terms["ret_gap"], val_gap=terms["val_gap"])
            stats["lambda"] = float(np.mean(lams)) if lams else None
        return stats


# ---------------------------------------------------------------------------
# FEN
# ---------------------------------------------------------------------------


@dataclass
class _FenActor:
    steps: int = 0
    active: int | None = None
    history: list = field(default_factory=list)


class FenAlgorithm(Algorithm):
    """Controller choosing among ``k_sub`` sub-policies every ``t_macro`` steps.

    Sub-policy 0 learns from the environment reward; the others learn from
    the fair-efficient signal spread over the macro window. The controller
    learns from the fair-efficient signal as well.
    """

    name = "fen"
    shared_ah = True

    def __init__(self, slots, seed: int, cfg: FenConfig | None = None, hidden=(64, 64)):
        super().__init__(slots, seed, hidden)
        self.cfg = cfg or FenConfig()
        k = self.cfg.k_sub
        self.controller = {s: self._learner(s, "controller", k, self.cfg.ppo, 0) for s in self.slots}
        self.subs = {
            s: [self._learner(s, f"sub{i}", n_act, self.cfg.ppo, 1 + i) for i in range(k)]
            for s, (_, n_act) in self.slots.items()
        }
        self.ctrl_store = {s: TrajectoryStore() for s in self.slots}
        self.sub_store = {s: [TrajectoryStore() for _ in range(k)] for s in self.slots}
        self.state: dict = {}
        self.episode_traces: list[dict] = []
        self.controller_decisions: list[dict] = []

    def begin_episode(self):
        self.state = {}
        self._decisions = {}

    def act(self, slot, actors, obs, uniforms, tags, aux_rng=None, record=True, deterministic=False):
        cfg = self.cfg
        states = [self.state.setdefault((slot, int(a)), _FenActor()) for a in actors]
        due = [j for j, s in enumerate(states) if fen_controller_due(s.steps, cfg.t_macro)]
        if due:
            logp_c, v_c = self.controller[slot].forward(obs[due])
            u = aux_rng.random(len(due)) if aux_rng is not None else np.full(len(due), 0.5)
            choice = choose(logp_c, u, deterministic)
            for k, j in enumerate(due):
                s, actor = states[j], int(actors[j])
                if record:
                    if s.active is not None:
                        prev = self.subs[slot][s.active]
                        self.sub_store[slot][s.active].close(actor, prev.value(obs[j]))
                    self.ctrl_store[slot].add(actor, obs[j], choice[k], logp_c[k, choice[k]], v_c[k], tags[j])
                s.active = int(choice[k])
                self._decisions[(slot, actor)] = self._decisions.get((slot, actor), 0) + 1
        actions = np.empty(len(actors), dtype=np.int64)
        values = np.empty(len(actors))
        for i in sorted({s.active for s in states}):
            idx = [j for j, s in enumerate(states) if s.active == i]
            logp, v = self.subs[slot][i].forward(obs[idx])
            a = choose(logp, np.asarray(uniforms)[idx], deterministic)
            actions[idx], values[idx] = a, v
            if record:
                for k, j in enumerate(idx):
                    self.sub_store[slot][i].add(int(actors[j]), obs[j], a[k], logp[k, a[k]], v[k], tags[j])
        for s in states:
            s.history.append(s.active)
            s.steps += 1
        return actions, values

    def feedback(self, slot, actors, rewards, own_utility=None, mean_utility=None, team_rewards=None):
        cfg = self.cfg
        for j, actor in enumerate(actors):
            actor = int(actor)
            s = self.state[(slot, actor)]
            signal = fen_fair_efficient_reward(own_utility[j], mean_utility[j], cfg) / cfg.t_macro
            r = rewards[j] if s.active == 0 else signal
            self.sub_store[slot][s.active].reward(actor, r)
            self.ctrl_store[slot].reward(actor, signal)

    def end_episode(self, ctx: EpisodeContext | None = None) -> dict:
        self.episode_traces.append(
            {f"{slot}:{actor}": np.asarray(s.history, dtype=np.int16) for (slot, actor), s in sorted(self.state.items())}
        )
        self.controller_decisions.append({f"{k[0]}:{k[1]}": v for k, v in sorted(self._decisions.items())})
        for slot in sorted(self.slots):
            stores = [(self.controller[slot], self.ctrl_store[slot])] + list(zip(self.subs[slot], self.sub_store[slot]))
            for ln, st in stores:
                st.close_all()
                built = st.build(ln.cfg)
                st.clear()
                if built is not None:
                    ln.update(built[0])
        return {"penalty": None, "lambda": None, "ret_gap": None, "val_gap": None}

    def traces(self) -> dict:
        return {"fen_active": self.episode_traces, "fen_decisions": self.controller_decisions}


def fen_trace_violations(history: np.ndarray, t_macro: int) -> list[str]:
    """Sub-policy switches off a macro boundary, or steps with no active sub-policy."""
    problems = []
    h = np.asarray(history)
    if np.any(h < 0):
        problems.append("step without an active sub-policy")
    for t in range(1, len(h)):
        if h[t] != h[t - 1] and t % t_macro != 0:
            problems.append(f"switch at step {t}, not a multiple of {t_macro}")
    return problems


# ---------------------------------------------------------------------------
# SOTO
# ---------------------------------------------------------------------------


class SotoAlgorithm(Algorithm):
    """Self-oriented and team-oriented heads chosen per step on a progress schedule."""

    name = "soto"
    shared_ah = True
    HEADS = ("self", "team")

    def __init__(self, slots, seed: int, cfg: SotoConfig | None = None, hidden=(64, 64)):
        super().__init__(slots, seed, hidden)
        self.cfg = cfg or SotoConfig()
        self.heads = {
            s: {h: self._learner(s, h, n_act, self.cfg.ppo, i) for i, h in enumerate(self.HEADS)}
            for s, (_, n_act) in self.slots.items()
        }
        self.stores = {s: {h: TrajectoryStore() for h in self.HEADS} for s in self.slots}
        self.active: dict = {}
        self.head_counts: list[dict] = []
        self._team = 0
        self._draws = 0

    def begin_episode(self):
        self.active = {}
        self._team = 0
        self._draws = 0

    def act(self, slot, actors, obs, uniforms, tags, aux_rng=None, record=True, deterministic=False):
        heads = []
        for j, actor in enumerate(actors):
            if deterministic or aux_rng is None:
                h = "team" if soto_team_probability(self.progress, self.cfg) >= 0.5 else "self"
            else:
                h = soto_select_head(aux_rng, self.progress, self.cfg)
            key = (slot, int(actor))
            prev = self.active.get(key)
            if record and prev is not None and prev != h:
                self.stores[slot][prev].close(int(actor), self.heads[slot][prev].value(obs[j]))
            self.active[key] = h
            heads.append(h)
            self._draws += 1
            self._team += h == "team"
        actions = np.empty(len(actors), dtype=np.int64)
        values = np.empty(len(actors))
        for h in self.HEADS:
            idx = [j for j, x in enumerate(heads) if x == h]
            if not idx:
                continue
            logp, v = self.heads[slot][h].forward(obs[idx])
            a = choose(logp, np.asarray(uniforms)[idx], deterministic)
            actions[idx], values[idx] = a, v
            if record:
                for k, j in enumerate(idx):
                    self.stores[slot][h].add(int(actors[j]), obs[j], a[k], logp[k, a[k]], v[k], tags[j])
        return actions, values

    def feedback(self, slot, actors, rewards, own_utility=None, mean_utility=None, team_rewards=None):
        for j, actor in enumerate(actors):
            h = self.active[(slot, int(actor))]
            r = rewards[j] if h == "self" or team_rewards is None else team_rewards[j]
            self.stores[slot][h].reward(int(actor), r)

    def end_episode(self, ctx: EpisodeContext | None = None) -> dict:
        self.head_counts.append({"progress": self.progress, "team": self._team, "draws": self._draws})
        weights = {}
        if ctx is not None and ctx.welfare_utilities:
            weights = soto_welfare_weight(ctx.welfare_utilities, self.cfg)
        unit_of = ctx.unit_of if ctx is not None and ctx.unit_of is not None else {}
        for slot in sorted(self.slots):
            for h in self.HEADS:
                st = self.stores[slot][h]
                st.close_all()
                built = st.build(self.cfg.ppo)
                st.clear()
                if built is None:
                    continue
                batch, info = built
                if h == "team" and weights:
                    w = np.array([weights.get(unit_of.get(int(t), int(t)), 1.0) for t in info.tags])
                    batch = replace(batch, advantages=batch.advantages * w)
                self.heads[slot][h].update(batch)
        return {"penalty": None, "lambda": None, "ret_gap": None, "val_gap": None}

    def traces(self) -> dict:
        return {"soto_heads": self.head_counts}


def soto_trace_violations(head_counts: list[dict], cfg: SotoConfig, sigmas: float = 3.0) -> list[str]:
    """Per-episode team frequencies inside a binomial band around the schedule,
    and a nondecreasing schedule over the recorded episodes."""
    problems = []
    probs = [soto_team_probability(h["progress"], cfg) for h in head_counts]
    if any(b < a for a, b in zip(probs, probs[1:])):
        problems.append("team-head probability decreased during training")
    for k, (h, p) in enumerate(zip(head_counts, probs)):
        n = h["draws"]
        if n == 0:
            continue
        sd = np.sqrt(p * (1 - p) / n)
        freq = h["team"] / n
        if abs(freq - p) > sigmas * sd + 1e-12:
            problems.append(f"episode {k}: team frequency {freq:.3f} outside {p:.3f} +- {sigmas} sd")
    return problems
