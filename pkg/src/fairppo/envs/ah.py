"""Allelopathic Harvest: a 2-D berry grid with two preference groups.

Half of each preference group is mobility-impaired (``z = 1``) and may
only move on alternate turns. A step resolves in a fixed phase order:
blocks, movement, bush interactions, then bush dynamics (regrowth, ageing,
death, spontaneous growth).

Agents may stand on bush cells; Eat, ChangeColor, Plant and Ripen act on
the bush under the agent.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from enum import IntEnum
from pathlib import Path

import numpy as np

from .. import kernels
from ..core import AgentProfile, GroupPartition, partition
from ..errors import ConfigError, ValidationError

EMPTY, RED, BLUE = 0, 1, 2
COLOR_NAMES = {RED: "red", BLUE: "blue"}


class AhAction(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    EAT = 4
    CHANGE_COLOR = 5
    PLANT = 6
    RIPEN = 7
    BLOCK = 8
    NOOP = 9


N_ACTIONS = len(AhAction)
MOVES = {AhAction.UP: (-1, 0), AhAction.DOWN: (1, 0), AhAction.LEFT: (0, -1), AhAction.RIGHT: (0, 1)}
NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class AhRewards:
    eat_match: float = 2.0
    eat_other: float = 1.0
    ripen_match: float = 1.0
    ripen_other: float = 0.5
    change_from_opposing: float = 1.0
    change_own: float = 0.25
    plant: float = 0.5
    block_opposing: float = 0.5
    block_same: float = 0.1


@dataclass(frozen=True)
class AhConfig:
    grid_width: int = 15
    grid_height: int = 15
    n_agents: int = 40
    n_bushes: int = 30
    red_fraction: float = 0.5
    berry_regrowth_ts: int = 3
    bush_lifespan_ts: int = 120
    bush_growth_rate_ts: int = 2
    episode_length_ts: int = 3000
    view_radius: int = 2
    z_visible: bool = True
    rewards: AhRewards = field(default_factory=AhRewards)

    def __post_init__(self):
        if isinstance(self.rewards, dict):
            object.__setattr__(self, "rewards", AhRewards(**self.rewards))
        cells = self.grid_width * self.grid_height
        if self.grid_width < 1 or self.grid_height < 1:
            raise ConfigError("grid dimensions must be positive")
        if self.n_agents < 2 or self.n_agents % 2:
            raise ConfigError("n_agents must be a positive even integer")
        if self.n_agents > cells:
            raise ConfigError(f"{self.n_agents} agents do not fit on {cells} cells")
        if not 0 <= self.n_bushes <= cells:
            raise ConfigError("n_bushes must fit on the grid")
        if not 0.0 <= self.red_fraction <= 1.0:
            raise ConfigError("red_fraction must lie in [0, 1]")
        for name in ("berry_regrowth_ts", "bush_lifespan_ts", "bush_growth_rate_ts", "episode_length_ts"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def obs_dim(self) -> int:
        k = 2 * self.view_radius + 1
        return k * k * kernels.CELL_FEATURES + 5

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Bush:
    position: tuple[int, int]
    color: int
    has_ripe_berry: bool
    regrowth_countdown: int
    age: int


@dataclass
class AhState:
    cfg: AhConfig
    seed: int
    t: int
    color: np.ndarray  # int8 (H, W): EMPTY / RED / BLUE
    ripe: np.ndarray  # uint8 (H, W)
    countdown: np.ndarray  # int32 (H, W)
    age: np.ndarray  # int32 (H, W)
    positions: np.ndarray  # int32 (N, 2) as (row, col)
    prefs: np.ndarray  # int8 (N,)
    z: np.ndarray  # int8 (N,)
    cooldown: np.ndarray  # int8 (N,)
    blocked: np.ndarray  # bool (N,), blocked during the last step
    last_eaten: tuple = ()

    @property
    def n_agents(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "AhState":
        return replace(
            self,
            color=self.color.copy(), ripe=self.ripe.copy(), countdown=self.countdown.copy(), age=self.age.copy(),
            positions=self.positions.copy(), prefs=self.prefs.copy(), z=self.z.copy(),
            cooldown=self.cooldown.copy(), blocked=self.blocked.copy(),
        )

    def occupancy(self) -> np.ndarray:
        occ = np.full(self.color.shape, -1, dtype=np.int32)
        occ[self.positions[:, 0], self.positions[:, 1]] = np.arange(self.n_agents, dtype=np.int32)
        return occ

    def bushes(self) -> list[Bush]:
        rows, cols = np.nonzero(self.color)
        return [
            Bush((int(r), int(c)), int(self.color[r, c]), bool(self.ripe[r, c]), int(self.countdown[r, c]), int(self.age[r, c]))
            for r, c in zip(rows, cols)
        ]

    def bush_census(self) -> dict:
        return {
            "red": int(np.sum(self.color == RED)),
            "blue": int(np.sum(self.color == BLUE)),
            "ripe": int(np.sum((self.color > 0) & (self.ripe > 0))),
        }

    def profiles(self) -> list[AgentProfile]:
        return [AgentProfile(i, int(self.z[i]), COLOR_NAMES[int(self.prefs[i])], N_ACTIONS) for i in range(self.n_agents)]

    def partition(self) -> GroupPartition:
        return partition(self.profiles())


def ah_reset(cfg: AhConfig, seed: int) -> AhState:
    rng = np.random.default_rng([int(seed), 0])
    h, w = cfg.grid_height, cfg.grid_width
    cells = h * w
    agent_cells = rng.permutation(cells)[: cfg.n_agents]
    positions = np.stack([agent_cells // w, agent_cells % w], axis=1).astype(np.int32)

    n_red = int(round(cfg.n_agents * cfg.red_fraction))
    prefs = np.full(cfg.n_agents, BLUE, dtype=np.int8)
    prefs[rng.permutation(cfg.n_agents)[:n_red]] = RED
    z = np.zeros(cfg.n_agents, dtype=np.int8)
    for colour in (RED, BLUE):
        members = np.flatnonzero(prefs == colour)
        z[rng.permutation(members)[: len(members) // 2]] = 1

    color = np.zeros((h, w), dtype=np.int8)
    bush_cells = rng.permutation(cells)[: cfg.n_bushes]
    n_red_bushes = (cfg.n_bushes + 1) // 2
    color.flat[bush_cells[:n_red_bushes]] = RED
    color.flat[bush_cells[n_red_bushes:]] = BLUE
    ripe = (color > 0).astype(np.uint8)
    age = np.zeros((h, w), dtype=np.int32)
    # staggered initial ages avoid a synchronised die-off at the first lifespan
    age.flat[bush_cells] = rng.integers(0, cfg.bush_lifespan_ts, size=len(bush_cells))
    return AhState(
        cfg=cfg, seed=int(seed), t=0, color=color, ripe=ripe, countdown=np.zeros((h, w), dtype=np.int32), age=age,
        positions=positions, prefs=prefs, z=z, cooldown=np.zeros(cfg.n_agents, dtype=np.int8),
        blocked=np.zeros(cfg.n_agents, dtype=bool),
    )


def ah_counterfactual_pair(cfg: AhConfig, seed: int) -> tuple[AhState, AhState]:
    """Factual state and its twin with every agent's ``z`` flipped."""
    factual = ah_reset(cfg, seed)
    return factual, flip_z(factual)


def flip_z(state: AhState) -> AhState:
    twin = state.copy()
    twin.z = (1 - state.z).astype(np.int8)
    twin.cooldown = np.zeros_like(state.cooldown)
    return twin


def ah_observe_all(state: AhState) -> np.ndarray:
    """Observation matrix, one row per agent."""
    cfg = state.cfg
    window = kernels.ah_window(state.color, state.ripe, state.occupancy(), state.prefs, state.positions, cfg.view_radius)
    cells = float(state.color.size)
    tail = np.empty((state.n_agents, 5))
    tail[:, 0] = state.prefs == RED
    tail[:, 1] = state.z if cfg.z_visible else 0.0
    tail[:, 2] = state.cooldown if cfg.z_visible else 0.0
    tail[:, 3] = np.sum(state.color == RED) / cells
    tail[:, 4] = np.sum(state.color == BLUE) / cells
    return np.concatenate([window, tail], axis=1)


def ah_observe(state: AhState, agent_id: int) -> np.ndarray:
    if not 0 <= agent_id < state.n_agents:
        raise ValidationError(f"unknown agent {agent_id}")
    return ah_observe_all(state)[agent_id]


def _step_rng(state: AhState) -> np.random.Generator:
    return np.random.default_rng([state.seed, 1, state.t])


def ah_step(state: AhState, joint_actions) -> tuple[AhState, np.ndarray]:
    """Advance one step; returns the new state and per-agent rewards."""
    cfg, R = state.cfg, state.cfg.rewards
    n = state.n_agents
    actions = np.asarray(joint_actions, dtype=np.int64).ravel()
    if actions.shape != (n,):
        raise ValidationError(f"expected {n} actions, got {actions.shape}")
    if np.any(actions < 0) or np.any(actions >= N_ACTIONS):
        raise ValidationError("action index out of range")

    s = state.copy()
    h, w = s.color.shape
    rewards = np.zeros(n)
    occ = s.occupancy()

    # (1) blocks, in id order; a blocked agent's own block is cancelled
    blocked = np.zeros(n, dtype=bool)
    for i in range(n):
        if actions[i] != AhAction.BLOCK or blocked[i]:
            continue
        r, c = s.positions[i]
        best = None
        for dr, dc in NEIGHBOURS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and occ[rr, cc] >= 0:
                j = int(occ[rr, cc])
                key = (s.prefs[j] == s.prefs[i], j)  # opposing preference first, then lower id
                if best is None or key < best[0]:
                    best = (key, j)
        if best is not None:
            j = best[1]
            blocked[j] = True
            rewards[i] += R.block_same if s.prefs[j] == s.prefs[i] else R.block_opposing
    s.blocked = blocked

    # (2) movement into cells empty at step start; lower id wins contests
    claimed = set()
    for i in range(n):
        a = AhAction(int(actions[i]))
        if a not in MOVES or blocked[i]:
            continue
        if s.z[i] == 1 and s.cooldown[i] != 0:
            continue
        dr, dc = MOVES[a]
        rr, cc = s.positions[i, 0] + dr, s.positions[i, 1] + dc
        if not (0 <= rr < h and 0 <= cc < w) or occ[rr, cc] >= 0 or (rr, cc) in claimed:
            continue
        claimed.add((rr, cc))
        s.positions[i] = (rr, cc)

    # (3) interactions with the bush under the agent
    touched = np.zeros((h, w), dtype=bool)
    planted = np.zeros((h, w), dtype=bool)
    eaten = []
    for i in range(n):
        if blocked[i]:
            continue
        a = int(actions[i])
        r, c = int(s.positions[i, 0]), int(s.positions[i, 1])
        col, pref = int(s.color[r, c]), int(s.prefs[i])
        if a == AhAction.EAT:
            if col and s.ripe[r, c]:
                s.ripe[r, c] = 0
                s.countdown[r, c] = cfg.berry_regrowth_ts
                touched[r, c] = True
                eaten.append((r, c))
                rewards[i] += R.eat_match if col == pref else R.eat_other
        elif a == AhAction.CHANGE_COLOR:
            if col:
                if col != pref:
                    s.color[r, c] = pref
                    rewards[i] += R.change_from_opposing
                else:
                    rewards[i] += R.change_own
        elif a == AhAction.PLANT:
            if not col:
                s.color[r, c] = pref
                s.ripe[r, c] = 0
                s.countdown[r, c] = cfg.berry_regrowth_ts
                s.age[r, c] = 0
                touched[r, c] = True
                planted[r, c] = True
                rewards[i] += R.plant
        elif a == AhAction.RIPEN:
            if col and not s.ripe[r, c]:
                s.ripe[r, c] = 1
                s.countdown[r, c] = 0
                touched[r, c] = True
                rewards[i] += R.ripen_match if col == pref else R.ripen_other
    s.last_eaten = tuple(eaten)

    # (4) bush dynamics
    alive = s.color > 0
    regrowing = alive & (s.ripe == 0) & ~touched
    s.countdown[regrowing] -= 1
    done = regrowing & (s.countdown <= 0)
    s.ripe[done] = 1
    s.countdown[done] = 0
    s.age[alive & ~planted] += 1
    dead = alive & (s.age >= cfg.bush_lifespan_ts)
    s.color[dead] = EMPTY
    s.ripe[dead] = 0
    s.countdown[dead] = 0
    s.age[dead] = 0

    if (s.t + 1) % cfg.bush_growth_rate_ts == 0:
        _spontaneous_growth(s, _step_rng(state))

    s.cooldown = np.where(s.z == 1, 1 - s.cooldown, 0).astype(np.int8)
    s.t += 1
    return s, rewards


def _spontaneous_growth(s: AhState, rng: np.random.Generator):
    """Each colour spawns one bush with probability equal to its current share."""
    u = rng.random(4)
    counts = {RED: int(np.sum(s.color == RED)), BLUE: int(np.sum(s.color == BLUE))}
    total = counts[RED] + counts[BLUE]
    if total == 0:
        return
    for k, colour in enumerate((RED, BLUE)):
        if u[2 * k] >= counts[colour] / total:
            continue
        empty = np.flatnonzero(s.color.ravel() == EMPTY)
        if empty.size == 0:
            return
        cell = empty[min(int(u[2 * k + 1] * empty.size), empty.size - 1)]
        s.color.flat[cell] = colour
        s.ripe.flat[cell] = 0
        s.countdown.flat[cell] = s.cfg.berry_regrowth_ts
        s.age.flat[cell] = 0


def check_invariants(prev: AhState, actions, nxt: AhState) -> list[str]:
    """Violations of single occupancy, berry conservation and bush lifespan."""
    cfg = prev.cfg
    problems = []
    cells = {tuple(p) for p in nxt.positions.tolist()}
    if len(cells) != nxt.n_agents:
        problems.append(f"t={prev.t}: two agents share a cell")
    for r, c in nxt.last_eaten:
        if not (prev.color[r, c] > 0 and prev.ripe[r, c]):
            problems.append(f"t={prev.t}: berry eaten at {(r, c)} without a ripe berry")
        if nxt.color[r, c] > 0 and nxt.countdown[r, c] != cfg.berry_regrowth_ts:
            problems.append(f"t={prev.t}: eaten bush at {(r, c)} countdown {nxt.countdown[r, c]} != {cfg.berry_regrowth_ts}")
    alive = nxt.color > 0
    if np.any(nxt.age[alive] >= cfg.bush_lifespan_ts):
        problems.append(f"t={prev.t}: bush alive past its lifespan")
    if np.any((nxt.countdown < 0) | (nxt.countdown > cfg.berry_regrowth_ts)):
        problems.append(f"t={prev.t}: regrowth countdown out of range")
    if int(alive.sum()) > nxt.color.size:
        problems.append(f"t={prev.t}: more bushes than cells")
    eats = sum(1 for a in np.asarray(actions) if a == AhAction.EAT)
    if len(nxt.last_eaten) > eats:
        problems.append(f"t={prev.t}: more berries eaten than Eat actions")
    return problems


class AhTrace:
    """Per-step structured record of an episode, written as JSON lines."""

    def __init__(self):
        self.records: list[dict] = []

    def record(self, state: AhState, actions, rewards):
        self.records.append(
            {
                "t": int(state.t),
                "actions": [int(a) for a in actions],
                "rewards": [float(r) for r in rewards],
                "bushes": state.bush_census(),
            }
        )

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return path
