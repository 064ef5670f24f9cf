"""HospitalSim: an event-driven hospital day with three learning decision points.

Patients arrive, register with a clerk, travel to triage, are routed to a
ward by the *triage router*, wait for a doctor, are treated and leave.
Impaired patients cannot move alone: each of their moves raises an escort
request that the *escort dispatcher* fills with a nurse or robot. The
*doctor manager* periodically relocates swing doctors between wards.

The simulation blocks whenever a learning agent must act: :meth:`advance`
returns a :class:`DecisionRequest` and the matching ``*_apply`` call (or
:meth:`apply`) resumes it.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from ..core import AgentProfile, GroupPartition, partition
from ..errors import ConfigError, SequencingError, ValidationError

# ---------------------------------------------------------------------------
# Domain tables
# ---------------------------------------------------------------------------


class Priority(IntEnum):
    HIGH = 0
    MEDIUM = 1
    LOW = 2


PRIORITY_NAMES = ("high", "medium", "low")
PRIORITY_FACTOR = {Priority.HIGH: 3, Priority.MEDIUM: 2, Priority.LOW: 1}


class Impairment(IntEnum):
    NONE = 0
    LOW = 1
    HIGH = 2


IMPAIRMENT_PROBS = (0.60, 0.25, 0.15)
PATIENT_SPEED = {Impairment.NONE: 75.0, Impairment.LOW: 60.0, Impairment.HIGH: 45.0}
NURSE_SPEED = 90.0
ROBOT_SPEED = 100.0

ILLNESSES = ("Pediatric", "General", "Cardio", "Xray", "Psychiatric", "Emergency")
WARDS = ("Pediatrics", "PromptCare", "AcuteCare", "Imaging", "Psychiatry", "Resuscitation")
SYMPTOMS = (
    "is a child",
    "fever",
    "cough",
    "minor pain",
    "chest pain",
    "shortness of breath",
    "high blood pressure",
    "suspected fracture",
    "confusion",
    "unconsciousness",
)
ILLNESS_SYMPTOMS = {
    "Pediatric": frozenset({"is a child", "fever", "cough"}),
    "General": frozenset({"fever", "minor pain"}),
    "Cardio": frozenset({"chest pain", "shortness of breath", "high blood pressure"}),
    "Xray": frozenset({"suspected fracture", "minor pain"}),
    "Psychiatric": frozenset({"confusion", "high blood pressure"}),
    "Emergency": frozenset({"unconsciousness", "chest pain", "shortness of breath"}),
}
WARD_WEIGHTS = {
    "Pediatric": {"Pediatrics": 1.0, "PromptCare": 0.6},
    "General": {"PromptCare": 1.0, "AcuteCare": 0.5},
    "Cardio": {"AcuteCare": 1.0, "Resuscitation": 0.7, "PromptCare": 0.4},
    "Xray": {"Imaging": 1.0, "PromptCare": 0.5},
    "Psychiatric": {"Psychiatry": 1.0, "PromptCare": 0.2},
    "Emergency": {"Resuscitation": 1.0},
}
PRIMARY_WARD = {ill: next(w for w, x in m.items() if x == 1.0) for ill, m in WARD_WEIGHTS.items()}

# locations: entrance, triage, the six wards, corridor hub, exit
ENTRANCE, TRIAGE = 0, 1
WARD_LOC = {w: 2 + k for k, w in enumerate(WARDS)}
HUB, EXIT = 8, 9
LOCATIONS = ("Entrance", "Triage", *WARDS, "Hub", "Exit")

TRIAGE_OBS_DIM = len(SYMPTOMS) + 3 + len(WARDS)
ESCORT_OBS_DIM = 6
DOCTOR_OBS_DIM = 3 * len(WARDS)
N_TRIAGE_ACTIONS = len(WARDS)
N_ESCORT_ACTIONS = 6  # priority class x {nurse, robot}
N_DOCTOR_ACTIONS = len(WARDS) + 1  # send one swing doctor to ward w, or hold


def routing_class(illness: str, ward: str) -> str:
    w = WARD_WEIGHTS[illness].get(ward)
    if w is None:
        return "incorrect"
    return "perfect" if w == 1.0 else "backup"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

DEFAULT_HUB_DISTANCE = {
    "Entrance": 30.0,
    "Triage": 25.0,
    "Pediatrics": 60.0,
    "PromptCare": 40.0,
    "AcuteCare": 55.0,
    "Imaging": 50.0 + 100.0,  # different floor
    "Psychiatry": 70.0 + 100.0,  # different floor
    "Resuscitation": 45.0,
    "Hub": 0.0,
    "Exit": 35.0,
}


@dataclass(frozen=True)
class HsRewards:
    completion: float = 10.0
    wait_per_minute: float = 0.01
    incorrect_routing: float = -2.0
    triage_wait_weight: float = 0.01
    escort_priority: float = 1.0
    escort_nurse_bonus: float = 0.5
    escort_distance: float = 0.002
    escort_wait: float = 0.02
    doctor_congestion: float = 0.01
    doctor_move: float = 0.05


@dataclass(frozen=True)
class HsConfig:
    clerks: int = 30
    nurses: int = 60
    robots: int = 30
    triage_dispatchers: int = 30
    swing_doctors: int = 18
    ward_doctors_per_ward: int = 10
    wards: int = 6
    patients_per_day: int = 300
    day_length_min: float = 720.0
    peak_start_min: float = 180.0
    peak_end_min: float = 360.0
    peak_multiplier: float = 3.0
    treatment_mean_min: float = 20.0
    service_delay_min: float = 2.0
    rebalance_interval_min: float = 30.0
    doctor_speed: float = 80.0
    hub_distance: dict = field(default_factory=lambda: dict(DEFAULT_HUB_DISTANCE))
    distance_matrix: tuple | None = None
    rewards: HsRewards = field(default_factory=HsRewards)

    def __post_init__(self):
        if isinstance(self.rewards, dict):
            object.__setattr__(self, "rewards", HsRewards(**self.rewards))
        for name in ("clerks", "nurses", "triage_dispatchers", "ward_doctors_per_ward", "patients_per_day"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.robots < 0 or self.swing_doctors < 0:
            raise ConfigError("staff counts must be non-negative")
        if self.wards != len(WARDS):
            raise ConfigError(f"the ward table defines exactly {len(WARDS)} wards")
        if self.day_length_min <= 0:
            raise ConfigError("day length must be positive")
        if not 0 <= self.peak_start_min <= self.peak_end_min <= self.day_length_min:
            raise ConfigError("peak window must lie inside the day")
        if self.peak_multiplier < 0:
            raise ConfigError("peak multiplier must be non-negative")
        if self.distance_matrix is not None:
            m = np.asarray(self.distance_matrix, dtype=float)
            if m.shape != (len(LOCATIONS), len(LOCATIONS)) or not np.allclose(m, m.T) or np.any(m < 0):
                raise ConfigError("distance matrix must be a symmetric non-negative 10x10 matrix")
            object.__setattr__(self, "distance_matrix", tuple(map(tuple, m.tolist())))

    @classmethod
    def desk(cls, **overrides) -> "HsConfig":
        """60 patients/day with staff scaled by the same 1/5 factor."""
        base = dict(
            clerks=6, nurses=12, robots=6, triage_dispatchers=6, swing_doctors=4,
            ward_doctors_per_ward=2, patients_per_day=60,
        )
        base.update(overrides)
        return cls(**base)

    def distances(self) -> np.ndarray:
        if self.distance_matrix is not None:
            return np.asarray(self.distance_matrix, dtype=float)
        spoke = np.array([self.hub_distance[name] for name in LOCATIONS], dtype=float)
        d = spoke[:, None] + spoke[None, :]
        np.fill_diagonal(d, 0.0)
        return d

    def to_dict(self) -> dict:
        d = asdict(self)
        d["distance_matrix"] = None if self.distance_matrix is None else [list(r) for r in self.distance_matrix]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HsConfig":
        d = dict(d)
        if "rewards" in d and isinstance(d["rewards"], dict):
            d["rewards"] = HsRewards(**d["rewards"])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "HsConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Entities
# ---------------------------------------------------------------------------


class Stage(IntEnum):
    NOT_ARRIVED = 0
    CLERK_QUEUE = 1
    CLERK_SERVICE = 2
    MOVING = 3
    ESCORT_WAIT = 4
    TRIAGE_QUEUE = 5
    TRIAGE_SERVICE = 6
    TRIAGE_DECISION = 7
    WARD_QUEUE = 8
    TREATMENT = 9
    TREATED = 10
    EXITED = 11


WAITING_STAGES = frozenset({Stage.CLERK_QUEUE, Stage.ESCORT_WAIT, Stage.TRIAGE_QUEUE, Stage.TRIAGE_DECISION, Stage.WARD_QUEUE})
ACTIVE_STAGES = frozenset({Stage.CLERK_SERVICE, Stage.MOVING, Stage.TRIAGE_SERVICE, Stage.TREATMENT})
DONE_STAGES = frozenset({Stage.TREATED, Stage.EXITED})


@dataclass
class Patient:
    id: int
    priority: Priority
    impairment: Impairment
    illness: str
    arrival_time: float = 0.0
    treatment_duration: float = 20.0
    stage: Stage = Stage.NOT_ARRIVED
    location: int = ENTRANCE
    ward: str | None = None
    routing: str | None = None
    accumulated_reward: float = 0.0
    wait_clocks: dict = field(default_factory=dict)
    wait_started: float | None = None
    treated: bool = False

    @property
    def symptoms(self) -> frozenset:
        return ILLNESS_SYMPTOMS[self.illness]

    @property
    def speed(self) -> float:
        return PATIENT_SPEED[self.impairment]

    @property
    def self_moving(self) -> bool:
        return self.impairment == Impairment.NONE

    @property
    def z(self) -> int:
        return int(self.impairment != Impairment.NONE)

    @property
    def priority_factor(self) -> int:
        return PRIORITY_FACTOR[self.priority]


@dataclass
class Staff:
    id: int
    kind: str  # "nurse" | "robot"
    location: int = ENTRANCE
    patient: int | None = None

    @property
    def speed(self) -> float:
        return NURSE_SPEED if self.kind == "nurse" else ROBOT_SPEED

    @property
    def idle(self) -> bool:
        return self.patient is None


@dataclass
class SwingDoctor:
    id: int
    ward: int  # ward index it belongs to (destination while travelling)
    arrived: bool = True
    busy: bool = False


@dataclass
class EscortRequestRecord:
    id: int
    patient: int
    origin: int
    destination: int
    time: float


class EventKind(IntEnum):
    ARRIVAL = 0
    SERVICE_COMPLETE = 1
    TRIAGE_DECISION = 2
    ESCORT_REQUEST = 3
    ESCORT_ASSIGNED = 4
    MOVE_COMPLETE = 5
    TREATMENT_START = 6
    TREATMENT_COMPLETE = 7
    DOCTOR_REBALANCE = 8
    EXIT = 9


@dataclass(frozen=True)
class HsEvent:
    time: float
    seq: int
    kind: EventKind
    payload: tuple = ()

    def __lt__(self, other):
        return (self.time, self.seq) < (other.time, other.seq)


@dataclass(frozen=True)
class DecisionRequest:
    seq: int
    agent: str  # "triage_router" | "escort_dispatcher" | "doctor_manager"
    observation: np.ndarray
    n_actions: int
    time: float
    patient: int | None = None


@dataclass
class HsMetrics:
    patients_arrived: int
    patients_treated: int
    patients_in_progress: int
    patients_waiting: int
    mean_escort_wait: float | None
    mean_escort_travel: float | None
    swing_doctor_moves: int
    perfect_routing_pct: float | None
    backup_routing_pct: float | None
    incorrect_routing_pct: float | None
    patient_rewards: dict  # patient id -> accumulated reward
    group_rewards: dict  # z -> list of rewards
    group_priority_rewards: dict  # (z, priority name) -> list of rewards
    learner_rewards: dict  # learner -> total reward

    def group_mean(self, z: int) -> float | None:
        vals = self.group_rewards.get(z, [])
        return float(np.mean(vals)) if vals else None

    @property
    def demographic_disparity(self) -> float | None:
        g1, g0 = self.group_mean(1), self.group_mean(0)
        return None if g1 is None or g0 is None else abs(g1 - g0)

    def csp_by_priority(self) -> dict:
        out = {}
        for name in PRIORITY_NAMES:
            a = self.group_priority_rewards.get((1, name), [])
            b = self.group_priority_rewards.get((0, name), [])
            if a and b:
                out[name] = abs(float(np.mean(a)) - float(np.mean(b)))
        return out

    def as_row(self) -> dict:
        csp = self.csp_by_priority()
        return {
            "patients_arrived": self.patients_arrived,
            "patients_treated": self.patients_treated,
            "mean_escort_wait": self.mean_escort_wait,
            "mean_escort_travel": self.mean_escort_travel,
            "swing_doctor_moves": self.swing_doctor_moves,
            "perfect_routing_pct": self.perfect_routing_pct,
            "backup_routing_pct": self.backup_routing_pct,
            "incorrect_routing_pct": self.incorrect_routing_pct,
            "hs_dp": self.demographic_disparity,
            **{f"hs_csp_{p}": csp.get(p) for p in PRIORITY_NAMES},
        }


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sample_patient(rng: np.random.Generator, patient_id: int = 0) -> Patient:
    u = rng.random(3)
    priority = Priority(min(int(u[0] * 3), 2))
    illness = ILLNESSES[min(int(u[1] * 6), 5)]
    if u[2] < IMPAIRMENT_PROBS[0]:
        impairment = Impairment.NONE
    elif u[2] < IMPAIRMENT_PROBS[0] + IMPAIRMENT_PROBS[1]:
        impairment = Impairment.LOW
    else:
        impairment = Impairment.HIGH
    return Patient(patient_id, priority, impairment, illness)


def arrival_rate(t, cfg: HsConfig):
    """Piecewise-constant relative rate (off-peak = 1)."""
    t = np.asarray(t, dtype=float)
    return np.where((t >= cfg.peak_start_min) & (t < cfg.peak_end_min), cfg.peak_multiplier, 1.0)


def sample_arrival_times(rng: np.random.Generator, cfg: HsConfig) -> np.ndarray:
    """Exactly ``patients_per_day`` arrivals by thinning against the rate schedule."""
    L = cfg.day_length_min
    peak_len = cfg.peak_end_min - cfg.peak_start_min
    total = cfg.peak_multiplier * peak_len + (L - peak_len)
    if total <= 0:
        raise ConfigError("arrival schedule has zero total rate")
    rmax = max(cfg.peak_multiplier, 1.0 if peak_len < L else 0.0)
    out: list[float] = []
    n = cfg.patients_per_day
    while len(out) < n:
        cand = rng.random(2 * n) * L
        keep = rng.random(2 * n) * rmax < arrival_rate(cand, cfg)
        out.extend(cand[keep].tolist())
    return np.sort(np.asarray(out[:n]))


def sample_day(cfg: HsConfig, seed: int) -> list[Patient]:
    """The day's patient pool with arrival times and treatment durations."""
    rng = np.random.default_rng([int(seed), 11])
    times = sample_arrival_times(rng, cfg)
    patients = []
    for i, t in enumerate(times):
        p = sample_patient(rng, i)
        p.arrival_time = float(t)
        p.treatment_duration = float(rng.exponential(cfg.treatment_mean_min))
        patients.append(p)
    return patients


def flip_impairments(patients: list[Patient]) -> list[Patient]:
    """Counterfactual pool: none <-> high, low unchanged; everything else shared."""
    swap = {Impairment.NONE: Impairment.HIGH, Impairment.HIGH: Impairment.NONE, Impairment.LOW: Impairment.LOW}
    return [
        Patient(p.id, p.priority, swap[p.impairment], p.illness, p.arrival_time, p.treatment_duration)
        for p in patients
    ]


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


class _Pool:
    """Identical servers with a FIFO queue and a fixed service delay."""

    def __init__(self, size: int):
        self.size = size
        self.busy = 0
        self.queue: deque[int] = deque()


class HospitalSim:
    def __init__(self, cfg: HsConfig, seed: int = 0, patients: list[Patient] | None = None):
        self.cfg = cfg
        self.seed = int(seed)
        self.dist = cfg.distances()
        self.patients = sample_day(cfg, seed) if patients is None else patients
        self.t = 0.0
        self._heap: list[HsEvent] = []
        self._seq = itertools.count()
        self._req_seq = itertools.count()
        self.pending: DecisionRequest | None = None
        self.done = False

        self.clerks = _Pool(cfg.clerks)
        self.triage_pool = _Pool(cfg.triage_dispatchers)
        self.triage_waiting: deque[int] = deque()
        self.staff = [Staff(i, "nurse") for i in range(cfg.nurses)] + [
            Staff(cfg.nurses + i, "robot") for i in range(cfg.robots)
        ]
        self.escort_requests: dict[int, EscortRequestRecord] = {}
        self._escort_ids = itertools.count()
        self._in_flight: dict[int, EscortRequestRecord] = {}
        self.ward_queue: list[deque[int]] = [deque() for _ in WARDS]
        self.resident_free = [cfg.ward_doctors_per_ward] * len(WARDS)
        self.swing = [SwingDoctor(i, i % len(WARDS)) for i in range(cfg.swing_doctors)]
        self.doctor_due = False

        # bookkeeping
        self.event_log: list[tuple[float, EventKind]] = []
        self.staff_intervals: list[tuple[int, float, float | None, int]] = []
        self._staff_open: dict[int, int] = {}
        self.escort_waits: list[float] = []
        self.escort_travel: list[float] = []
        self.swing_moves = 0
        self.routing_counts = {"perfect": 0, "backup": 0, "incorrect": 0}
        self.treatments_completed = 0
        self.learner_rewards = {"triage_router": 0.0, "escort_dispatcher": 0.0, "doctor_manager": 0.0}

        for p in self.patients:
            self._schedule(p.arrival_time, EventKind.ARRIVAL, (p.id,))
        self._schedule(0.0, EventKind.DOCTOR_REBALANCE)

    # -- event plumbing ------------------------------------------------------
    def _schedule(self, time: float, kind: EventKind, payload: tuple = ()):
        heapq.heappush(self._heap, HsEvent(float(time), next(self._seq), kind, payload))

    def _start_wait(self, p: Patient, stage: Stage):
        p.stage = stage
        p.wait_started = self.t

    def _end_wait(self, p: Patient, until: float | None = None):
        if p.wait_started is None:
            return
        end = self.t if until is None else until
        minutes = max(0.0, end - p.wait_started)
        key = p.stage.name.lower()
        p.wait_clocks[key] = p.wait_clocks.get(key, 0.0) + minutes
        if not p.treated:  # waiting to leave is not penalised
            p.accumulated_reward -= self.cfg.rewards.wait_per_minute * p.priority_factor * minutes
        p.wait_started = None

    @property
    def queue(self) -> list[HsEvent]:
        return sorted(self._heap)

    # -- main loop -------------------------------------------------------------
    def advance(self) -> DecisionRequest | None:
        """Run until a learning agent must act (returned) or the day ends (None)."""
        if self.pending is not None:
            raise SequencingError("a decision is outstanding; apply it before advancing")
        while True:
            if self.done:
                return None
            req = self._next_decision()
            if req is not None:
                self.pending = req
                return req
            if not self._heap or self._heap[0].time >= self.cfg.day_length_min:
                self._finish_day()
                return None
            ev = heapq.heappop(self._heap)
            self.t = ev.time
            self.event_log.append((ev.time, ev.kind))
            self._process(ev)

    def _finish_day(self):
        self.t = self.cfg.day_length_min
        for p in self.patients:
            if p.wait_started is not None:
                self._end_wait(p, self.t)
        self.done = True

    def _next_decision(self) -> DecisionRequest | None:
        if self.triage_waiting:
            pid = self.triage_waiting[0]
            return DecisionRequest(next(self._req_seq), "triage_router", self.triage_observation(pid), N_TRIAGE_ACTIONS, self.t, pid)
        if self.escort_requests and any(s.idle for s in self.staff):
            return DecisionRequest(next(self._req_seq), "escort_dispatcher", self.escort_observation(), N_ESCORT_ACTIONS, self.t,
                                   self._escort_focus_patient())
        if self.doctor_due:
            return DecisionRequest(next(self._req_seq), "doctor_manager", self.doctor_observation(), N_DOCTOR_ACTIONS, self.t)
        return None

    def _process(self, ev: HsEvent):
        k = ev.kind
        if k == EventKind.ARRIVAL:
            p = self.patients[ev.payload[0]]
            p.location = ENTRANCE
            self._join_pool(self.clerks, p, Stage.CLERK_QUEUE, Stage.CLERK_SERVICE, "clerk")
        elif k == EventKind.SERVICE_COMPLETE:
            pid, pool_name = ev.payload
            pool = self.clerks if pool_name == "clerk" else self.triage_pool
            pool.busy -= 1
            if pool.queue:
                nxt = self.patients[pool.queue.popleft()]
                self._end_wait(nxt)
                self._serve(pool, nxt, Stage.CLERK_SERVICE if pool_name == "clerk" else Stage.TRIAGE_SERVICE, pool_name)
            p = self.patients[pid]
            if pool_name == "clerk":
                self._request_move(p, TRIAGE)
            else:
                self._schedule(self.t, EventKind.TRIAGE_DECISION, (pid,))
        elif k == EventKind.TRIAGE_DECISION:
            p = self.patients[ev.payload[0]]
            self._start_wait(p, Stage.TRIAGE_DECISION)
            self.triage_waiting.append(p.id)
        elif k == EventKind.ESCORT_REQUEST:
            pid, dest = ev.payload
            p = self.patients[pid]
            rid = next(self._escort_ids)
            self.escort_requests[rid] = EscortRequestRecord(rid, pid, p.location, dest, self.t)
            self._start_wait(p, Stage.ESCORT_WAIT)
        elif k == EventKind.ESCORT_ASSIGNED:
            rid, staff_id = ev.payload
            req = self._in_flight.pop(rid)
            p, s = self.patients[req.patient], self.staff[staff_id]
            self._end_wait(p)
            self.escort_waits.append(self.t - req.time)
            s.location = p.location
            duration = self.dist[p.location, req.destination] / min(s.speed, p.speed)
            self.escort_travel.append(duration)
            p.stage = Stage.MOVING
            self._schedule(self.t + duration, EventKind.MOVE_COMPLETE, ("patient", p.id, req.destination, staff_id))
        elif k == EventKind.MOVE_COMPLETE:
            if ev.payload[0] == "doctor":
                d = self.swing[ev.payload[1]]
                d.arrived = True
                self._try_treat(d.ward)
                return
            _, pid, dest, staff_id = ev.payload
            p = self.patients[pid]
            p.location = dest
            if staff_id is not None:
                s = self.staff[staff_id]
                s.location = dest
                s.patient = None
                idx = self._staff_open.pop(staff_id)
                sid, start, _, who = self.staff_intervals[idx]
                self.staff_intervals[idx] = (sid, start, self.t, who)
            if dest == TRIAGE:
                self._join_pool(self.triage_pool, p, Stage.TRIAGE_QUEUE, Stage.TRIAGE_SERVICE, "triage")
            elif dest == EXIT:
                self._schedule(self.t, EventKind.EXIT, (pid,))
            else:
                w = dest - 2
                self._start_wait(p, Stage.WARD_QUEUE)
                self.ward_queue[w].append(pid)
                self._try_treat(w)
        elif k == EventKind.TREATMENT_START:
            pass  # bookkeeping only; treatment is scheduled when a doctor frees up
        elif k == EventKind.TREATMENT_COMPLETE:
            pid, w, doctor = ev.payload
            p = self.patients[pid]
            weight = WARD_WEIGHTS[p.illness].get(WARDS[w], 0.0)
            p.accumulated_reward += self.cfg.rewards.completion * weight
            p.stage = Stage.TREATED
            p.treated = True
            self.treatments_completed += 1
            if doctor < 0:
                self.resident_free[w] += 1
            else:
                self.swing[doctor].busy = False
            self._try_treat(w)
            self._request_move(p, EXIT)
        elif k == EventKind.DOCTOR_REBALANCE:
            self.doctor_due = True
            self._schedule(self.t + self.cfg.rebalance_interval_min, EventKind.DOCTOR_REBALANCE)
        elif k == EventKind.EXIT:
            self.patients[ev.payload[0]].stage = Stage.EXITED

    def _join_pool(self, pool: _Pool, p: Patient, wait_stage: Stage, service_stage: Stage, name: str):
        if pool.busy < pool.size:
            self._serve(pool, p, service_stage, name)
        else:
            self._start_wait(p, wait_stage)
            pool.queue.append(p.id)

    def _serve(self, pool: _Pool, p: Patient, stage: Stage, name: str):
        pool.busy += 1
        p.stage = stage
        self._schedule(self.t + self.cfg.service_delay_min, EventKind.SERVICE_COMPLETE, (p.id, name))

    def _request_move(self, p: Patient, dest: int):
        if p.self_moving:
            p.stage = Stage.MOVING
            self._schedule(self.t + self.dist[p.location, dest] / p.speed, EventKind.MOVE_COMPLETE, ("patient", p.id, dest, None))
        else:
            p.stage = Stage.ESCORT_WAIT
            p.wait_started = self.t
            self._schedule(self.t, EventKind.ESCORT_REQUEST, (p.id, dest))

    def _doctors_present(self, w: int) -> tuple[int, int]:
        """(idle, total) doctors physically at ward ``w``."""
        swing_here = [d for d in self.swing if d.ward == w and d.arrived]
        idle = self.resident_free[w] + sum(1 for d in swing_here if not d.busy)
        return idle, self.cfg.ward_doctors_per_ward + len(swing_here)

    def _try_treat(self, w: int):
        while self.ward_queue[w]:
            if self.resident_free[w] > 0:
                self.resident_free[w] -= 1
                doctor = -1
            else:
                free = [d for d in self.swing if d.ward == w and d.arrived and not d.busy]
                if not free:
                    return
                free[0].busy = True
                doctor = free[0].id
            p = self.patients[self.ward_queue[w].popleft()]
            self._end_wait(p)
            p.stage = Stage.TREATMENT
            self.event_log.append((self.t, EventKind.TREATMENT_START))
            self._schedule(self.t + p.treatment_duration, EventKind.TREATMENT_COMPLETE, (p.id, w, doctor))

    # -- observations ------------------------------------------------------------
    def expected_wait(self, w: int) -> float:
        """Queue length x mean treatment time / active doctors (minutes)."""
        _, total = self._doctors_present(w)
        return len(self.ward_queue[w]) * self.cfg.treatment_mean_min / max(total, 1)

    def triage_observe(self, patient_id: int) -> np.ndarray:
        p = self.patients[patient_id]
        sym = np.array([s in p.symptoms for s in SYMPTOMS], dtype=float)
        pri = np.zeros(3)
        pri[int(p.priority)] = 1.0
        waits = np.array([self.expected_wait(w) for w in range(len(WARDS))]) / 60.0
        return np.concatenate([sym, pri, waits])

    triage_observation = triage_observe

    def escort_observe(self) -> np.ndarray:
        """(#high, #medium, #low pending, longest wait [min], idle-nurse share, idle-robot share)."""
        counts = np.zeros(3)
        longest = 0.0
        for req in self.escort_requests.values():
            counts[int(self.patients[req.patient].priority)] += 1
            longest = max(longest, self.t - req.time)
        nurses = [s for s in self.staff if s.kind == "nurse"]
        robots = [s for s in self.staff if s.kind == "robot"]
        idle_n = sum(s.idle for s in nurses) / len(nurses) if nurses else 0.0
        idle_r = sum(s.idle for s in robots) / len(robots) if robots else 0.0
        return np.array([counts[0], counts[1], counts[2], longest, idle_n, idle_r])

    def escort_observation(self) -> np.ndarray:
        return self.escort_observe() / np.array([10.0, 10.0, 10.0, 60.0, 1.0, 1.0])

    def doctor_observe(self, ward: int) -> np.ndarray:
        """(queue length, available-doctor proportion, mean queue priority with high=3 .. low=1)."""
        idle, total = self._doctors_present(ward)
        q = self.ward_queue[ward]
        mean_pri = float(np.mean([self.patients[i].priority_factor for i in q])) if q else 0.0
        return np.array([len(q), idle / total if total else 0.0, mean_pri])

    def doctor_observation(self) -> np.ndarray:
        scale = np.array([10.0, 1.0, 3.0])
        return np.concatenate([self.doctor_observe(w) / scale for w in range(len(WARDS))])

    def _escort_focus_patient(self) -> int | None:
        if not self.escort_requests:
            return None
        req = min(self.escort_requests.values(), key=lambda r: (-self.patients[r.patient].priority_factor, r.time, r.id))
        return req.patient

    # -- decisions -----------------------------------------------------------------
    def _claim(self, request: DecisionRequest | None, agent: str) -> DecisionRequest:
        if self.pending is None or self.pending.agent != agent:
            raise SequencingError(f"no outstanding {agent} decision")
        if request is not None and request.seq != self.pending.seq:
            raise SequencingError(f"stale decision request {request.seq} (outstanding {self.pending.seq})")
        req = self.pending
        self.pending = None
        return req

    def apply(self, request: DecisionRequest, action: int) -> float:
        """Apply a learner's discrete action to the outstanding request."""
        if not 0 <= int(action) < request.n_actions:
            raise ValidationError(f"action {action} outside [0, {request.n_actions})")
        if request.agent == "triage_router":
            return self.triage_apply(request.patient, int(action), request)
        if request.agent == "escort_dispatcher":
            return self.escort_apply(self.escort_action_to_assignment(int(action)), request)
        return self.doctor_apply(self.doctor_action_to_allocation(int(action)), request)

    def triage_apply(self, patient_id: int, ward_choice: int, request: DecisionRequest | None = None) -> float:
        if not 0 <= ward_choice < len(WARDS):
            raise ValidationError(f"invalid ward index {ward_choice}")
        req = self._claim(request, "triage_router")
        if req.patient != patient_id:
            raise SequencingError("triage decision for a different patient")
        self.triage_waiting.popleft()
        p = self.patients[patient_id]
        self._end_wait(p)
        ward = WARDS[ward_choice]
        cls = routing_class(p.illness, ward)
        p.routing = cls
        self.routing_counts[cls] += 1
        R = self.cfg.rewards
        if cls == "incorrect":
            reward = R.incorrect_routing
            ward = PRIMARY_WARD[p.illness]
        else:
            reward = WARD_WEIGHTS[p.illness][ward] - R.triage_wait_weight * self.expected_wait(WARDS.index(ward))
        p.ward = ward
        self._request_move(p, WARD_LOC[ward])
        self.learner_rewards["triage_router"] += reward
        return reward

    def escort_action_to_assignment(self, action: int) -> dict[int, int]:
        pri_class, kind = divmod(action, 2)
        kind = "nurse" if kind == 0 else "robot"
        reqs = sorted(self.escort_requests.values(), key=lambda r: (r.time, r.id))
        chosen = [r for r in reqs if int(self.patients[r.patient].priority) == pri_class] or reqs
        req = chosen[0]
        loc = self.patients[req.patient].location
        idle = [s for s in self.staff if s.idle]
        typed = [s for s in idle if s.kind == kind] or idle
        staff = min(typed, key=lambda s: (self.dist[s.location, loc], s.id))
        return {req.id: staff.id}

    def escort_apply(self, assignment: dict[int, int], request: DecisionRequest | None = None) -> float:
        for rid, sid in assignment.items():
            if rid not in self.escort_requests:
                raise ValidationError(f"unknown escort request {rid}")
            if not 0 <= sid < len(self.staff) or not self.staff[sid].idle:
                raise ValidationError(f"staff {sid} is not idle")
        if len(set(assignment.values())) != len(assignment):
            raise ValidationError("one staff member assigned to several requests")
        self._claim(request, "escort_dispatcher")
        R = self.cfg.rewards
        total = 0.0
        for rid, sid in assignment.items():
            req = self.escort_requests.pop(rid)
            s, p = self.staff[sid], self.patients[req.patient]
            s.patient = p.id
            self._staff_open[sid] = len(self.staff_intervals)
            self.staff_intervals.append((sid, self.t, None, p.id))
            distance = self.dist[s.location, p.location]
            waited = self.t - req.time
            total += (
                R.escort_priority * p.priority_factor / 3.0
                + (R.escort_nurse_bonus if s.kind == "nurse" else 0.0)
                - R.escort_distance * distance
                - R.escort_wait * waited
            )
            self._in_flight[rid] = req
            self._schedule(self.t + distance / s.speed, EventKind.ESCORT_ASSIGNED, (rid, sid))
        self.learner_rewards["escort_dispatcher"] += total
        return total

    def swing_allocation(self) -> list[int]:
        counts = [0] * len(WARDS)
        for d in self.swing:
            counts[d.ward] += 1
        return counts

    def doctor_action_to_allocation(self, action: int) -> dict[int, int]:
        alloc = self.swing_allocation()
        if action == len(WARDS):
            return dict(enumerate(alloc))
        movable = [w for w in range(len(WARDS)) if w != action and any(
            d.ward == w and d.arrived and not d.busy for d in self.swing)]
        if movable:
            src = max(movable, key=lambda w: (sum(d.ward == w and d.arrived and not d.busy for d in self.swing), -w))
            alloc[src] -= 1
            alloc[action] += 1
        return dict(enumerate(alloc))

    def doctor_apply(self, allocation: dict[int, int], request: DecisionRequest | None = None) -> float:
        """Move idle swing doctors toward ``allocation`` (ward index -> count)."""
        if any(c < 0 for c in allocation.values()) or sum(allocation.values()) > len(self.swing):
            raise ValidationError("swing-doctor allocation exceeds the available doctors")
        if any(not 0 <= w < len(WARDS) for w in allocation):
            raise ValidationError("invalid ward index in allocation")
        self._claim(request, "doctor_manager")
        self.doctor_due = False
        current = self.swing_allocation()
        target = [allocation.get(w, 0) for w in range(len(WARDS))]
        deficit = [w for w in range(len(WARDS)) for _ in range(max(0, target[w] - current[w]))]
        moves = 0
        for w_to in deficit:
            surplus = [d for d in self.swing if d.arrived and not d.busy and current[d.ward] > target[d.ward]]
            if not surplus:
                break
            d = surplus[0]
            current[d.ward] -= 1
            current[w_to] += 1
            travel = self.dist[WARD_LOC[WARDS[d.ward]], WARD_LOC[WARDS[w_to]]] / self.cfg.doctor_speed
            d.ward, d.arrived = w_to, False
            self._schedule(self.t + travel, EventKind.MOVE_COMPLETE, ("doctor", d.id, None, None))
            moves += 1
        self.swing_moves += moves
        R = self.cfg.rewards
        congestion = 0.0
        for w in range(len(WARDS)):
            q, _, pri = self.doctor_observe(w)
            idle, _ = self._doctors_present(w)
            congestion += q * pri / (idle + 1)
        reward = -R.doctor_congestion * congestion - R.doctor_move * moves
        self.learner_rewards["doctor_manager"] += reward
        return reward

    # -- results -------------------------------------------------------------------
    def arrived(self) -> list[Patient]:
        return [p for p in self.patients if p.stage != Stage.NOT_ARRIVED]

    def metrics(self) -> HsMetrics:
        arrived = self.arrived()
        treated = sum(p.treated for p in arrived)
        waiting = sum(not p.treated and p.stage in WAITING_STAGES for p in arrived)
        active = sum(not p.treated and p.stage in ACTIVE_STAGES for p in arrived)
        routed = sum(self.routing_counts.values())
        pct = {k: (100.0 * v / routed if routed else None) for k, v in self.routing_counts.items()}
        groups: dict = {0: [], 1: []}
        gp: dict = {}
        for p in arrived:
            groups[p.z].append(p.accumulated_reward)
            gp.setdefault((p.z, PRIORITY_NAMES[p.priority]), []).append(p.accumulated_reward)
        return HsMetrics(
            patients_arrived=len(arrived),
            patients_treated=treated,
            patients_in_progress=active,
            patients_waiting=waiting,
            mean_escort_wait=float(np.mean(self.escort_waits)) if self.escort_waits else None,
            mean_escort_travel=float(np.mean(self.escort_travel)) if self.escort_travel else None,
            swing_doctor_moves=self.swing_moves,
            perfect_routing_pct=pct["perfect"],
            backup_routing_pct=pct["backup"],
            incorrect_routing_pct=pct["incorrect"],
            patient_rewards={p.id: p.accumulated_reward for p in arrived},
            group_rewards=groups,
            group_priority_rewards=gp,
            learner_rewards=dict(self.learner_rewards),
        )

    def patient_profiles(self) -> list[AgentProfile]:
        return [AgentProfile(p.id, p.z, PRIORITY_NAMES[p.priority], 1) for p in self.arrived()]

    def patient_partition(self) -> GroupPartition:
        return partition(self.patient_profiles())


def episode_metrics(sim: HospitalSim) -> HsMetrics:
    return sim.metrics()


def check_invariants(sim: HospitalSim) -> list[str]:
    """Conservation, event-time monotonicity and no double-booking."""
    problems = []
    times = [t for t, _ in sim.event_log]
    if any(b < a for a, b in zip(times, times[1:])):
        problems.append("event times decreased")
    m = sim.metrics()
    if m.patients_arrived != m.patients_treated + m.patients_in_progress + m.patients_waiting:
        problems.append(
            f"conservation: {m.patients_arrived} arrived != {m.patients_treated} treated + "
            f"{m.patients_in_progress} in progress + {m.patients_waiting} waiting"
        )
    if m.patients_treated != sim.treatments_completed:
        problems.append("treated count disagrees with completed treatments")
    n_arrivals = sum(1 for _, k in sim.event_log if k == EventKind.ARRIVAL)
    if n_arrivals != m.patients_arrived:
        problems.append("arrival events disagree with arrived patients")
    if len({p.id for p in sim.patients}) != len(sim.patients):
        problems.append("duplicate patient ids")
    by_staff: dict = {}
    for sid, start, end, _ in sim.staff_intervals:
        by_staff.setdefault(sid, []).append((start, math.inf if end is None else end))
    for sid, spans in by_staff.items():
        spans.sort()
        for (s0, e0), (s1, _) in zip(spans, spans[1:]):
            if s1 < e0:
                problems.append(f"staff {sid} double-booked at t={s1:.2f}")
    busy_now = [s.id for s in sim.staff if not s.idle]
    if len(busy_now) != len(set(busy_now)):
        problems.append("duplicate busy staff")
    return problems


def write_metrics_csv(path, rows: list[dict]):
    """Write per-day metric rows with a stable column order taken from the first row."""
    import csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else [])
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
