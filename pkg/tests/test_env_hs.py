from __future__ import annotations

import copy
import json

import numpy as np
import pytest
from scipy import stats

from fairppo.envs.hs import (
    ILLNESS_SYMPTOMS, ILLNESSES, IMPAIRMENT_PROBS, N_DOCTOR_ACTIONS, N_ESCORT_ACTIONS, SYMPTOMS, TRIAGE_OBS_DIM, WARD_WEIGHTS,
    WARDS, HospitalSim, HsConfig, Impairment, Patient, Priority, Stage, arrival_rate, check_invariants, flip_impairments,
    routing_class, sample_arrival_times, sample_day, sample_patient,
)
from fairppo.errors import ConfigError, SequencingError, ValidationError
from toy import random_hs_day

DESK = HsConfig.desk()


# --- static tables --------------------------------------------------------------


def test_symptom_table():
    assert len(SYMPTOMS) == 10
    assert ILLNESS_SYMPTOMS["Cardio"] == {"chest pain", "shortness of breath", "high blood pressure"}
    assert ILLNESS_SYMPTOMS["Pediatric"] == {"is a child", "fever", "cough"}
    for s in ILLNESS_SYMPTOMS.values():
        assert s <= set(SYMPTOMS)


@pytest.mark.parametrize(
    "illness, ward, want",
    [
        ("Cardio", "AcuteCare", "perfect"),
        ("Cardio", "Resuscitation", "backup"),
        ("Cardio", "Imaging", "incorrect"),
        ("Emergency", "Resuscitation", "perfect"),
        ("Emergency", "PromptCare", "incorrect"),
        ("Psychiatric", "PromptCare", "backup"),
    ],
)
def test_routing_class(illness, ward, want):
    assert routing_class(illness, ward) == want


def test_each_illness_has_one_primary_ward():
    for ill in ILLNESSES:
        assert sorted(WARD_WEIGHTS[ill].values()).count(1.0) == 1
        assert all(0 < w <= 1 for w in WARD_WEIGHTS[ill].values())


def test_patient_speeds_and_groups():
    p = Patient(0, Priority.HIGH, Impairment.NONE, "General")
    q = Patient(1, Priority.LOW, Impairment.HIGH, "General")
    assert p.speed == 75.0 and q.speed == 45.0
    assert p.self_moving and not q.self_moving
    assert (p.z, q.z) == (0, 1)
    assert (p.priority_factor, q.priority_factor) == (3, 1)


# --- sampling ------------------------------------------------------------------


def test_patient_sampler_marginals_chi_square():
    rng = np.random.default_rng(0)
    pats = [sample_patient(rng, i) for i in range(6000)]
    n = len(pats)
    pri = np.bincount([int(p.priority) for p in pats], minlength=3)
    ill = np.array([sum(p.illness == x for p in pats) for x in ILLNESSES])
    imp = np.bincount([int(p.impairment) for p in pats], minlength=3)
    assert stats.chisquare(pri, np.full(3, n / 3)).pvalue > 0.01
    assert stats.chisquare(ill, np.full(6, n / 6)).pvalue > 0.01
    assert stats.chisquare(imp, n * np.array(IMPAIRMENT_PROBS)).pvalue > 0.01


def test_arrival_count_and_peak_share():
    cfg = DESK
    rng = np.random.default_rng(1)
    times = np.concatenate([sample_arrival_times(rng, cfg) for _ in range(50)])
    assert times.size == 50 * cfg.patients_per_day
    assert np.all((times >= 0) & (times < cfg.day_length_min))
    peak_len = cfg.peak_end_min - cfg.peak_start_min
    share = cfg.peak_multiplier * peak_len / (cfg.peak_multiplier * peak_len + cfg.day_length_min - peak_len)
    in_peak = np.mean((times >= cfg.peak_start_min) & (times < cfg.peak_end_min))
    assert in_peak == pytest.approx(share, abs=0.02)


def test_off_peak_arrivals_are_uniform():
    cfg = DESK
    rng = np.random.default_rng(2)
    times = np.concatenate([sample_arrival_times(rng, cfg) for _ in range(40)])
    late = times[times >= cfg.peak_end_min]
    u = (late - cfg.peak_end_min) / (cfg.day_length_min - cfg.peak_end_min)
    assert stats.kstest(u, "uniform").pvalue > 0.01


def test_arrival_rate_schedule():
    assert arrival_rate([0.0, 180.0, 359.9, 360.0], DESK).tolist() == [1.0, 3.0, 3.0, 1.0]


def test_sample_day_deterministic_and_sorted():
    a, b = sample_day(DESK, 4), sample_day(DESK, 4)
    assert [(p.arrival_time, p.illness, p.impairment) for p in a] == [(p.arrival_time, p.illness, p.impairment) for p in b]
    t = [p.arrival_time for p in a]
    assert t == sorted(t)
    assert [p.id for p in a] == list(range(len(a)))


def test_flip_impairments_swaps_extremes_only():
    pats = sample_day(DESK, 0)
    flipped = flip_impairments(pats)
    swap = {Impairment.NONE: Impairment.HIGH, Impairment.HIGH: Impairment.NONE, Impairment.LOW: Impairment.LOW}
    for p, q in zip(pats, flipped):
        assert q.impairment == swap[p.impairment]
        assert (q.arrival_time, q.illness, q.priority, q.treatment_duration) == (
            p.arrival_time, p.illness, p.priority, p.treatment_duration)


# --- configuration -----------------------------------------------------------------


def test_desk_config_and_json_round_trip(tmp_path):
    assert DESK.patients_per_day == 60 and DESK.nurses == 12
    path = tmp_path / "hs.json"
    path.write_text(json.dumps(DESK.to_dict()))
    assert HsConfig.from_file(path) == DESK
    d = DESK.distances()
    assert d.shape == (10, 10) and np.allclose(d, d.T) and np.all(np.diag(d) == 0)


@pytest.mark.parametrize(
    "kwargs",
    [dict(nurses=0), dict(robots=-1), dict(wards=5), dict(peak_start_min=400.0, peak_end_min=300.0),
     dict(distance_matrix=((1.0,),))],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        HsConfig(**kwargs)


# --- simulation ------------------------------------------------------------------


def _run_to(sim, agent):
    """Advance, answering other learners with their first action, until ``agent`` is asked."""
    while (req := sim.advance()) is not None:
        if req.agent == agent:
            return req
        sim.apply(req, 0 if req.agent != "doctor_manager" else N_DOCTOR_ACTIONS - 1)
    return None


def test_triage_rewards_by_routing_class():
    sim = HospitalSim(DESK, 0)
    req = _run_to(sim, "triage_router")
    p = sim.patients[req.patient]
    assert req.observation.shape == (TRIAGE_OBS_DIM,)
    primary = WARDS.index(next(w for w, x in WARD_WEIGHTS[p.illness].items() if x == 1.0))
    r = sim.apply(req, primary)
    assert p.routing == "perfect"
    assert r == pytest.approx(1.0 - DESK.rewards.triage_wait_weight * sim.expected_wait(primary))
    req = _run_to(sim, "triage_router")
    q = sim.patients[req.patient]
    wrong = next(k for k, w in enumerate(WARDS) if w not in WARD_WEIGHTS[q.illness])
    assert sim.apply(req, wrong) == DESK.rewards.incorrect_routing
    assert q.ward == next(w for w, x in WARD_WEIGHTS[q.illness].items() if x == 1.0)


def test_sequencing_errors():
    sim = HospitalSim(DESK, 0)
    req = sim.advance()
    with pytest.raises(SequencingError):
        sim.advance()
    with pytest.raises(ValidationError):
        sim.apply(req, req.n_actions)
    sim.apply(req, 0)
    with pytest.raises(SequencingError):
        sim.apply(req, 0)


def test_escort_reward_prefers_high_priority_and_nurses():
    sim = HospitalSim(DESK, 3)
    req = _run_to(sim, "escort_dispatcher")
    assert req.observation.shape == (N_ESCORT_ACTIONS,)
    rid = min(sim.escort_requests)
    p = sim.patients[sim.escort_requests[rid].patient]
    nurse = next(s for s in sim.staff if s.kind == "nurse" and s.idle)
    robot = next(s for s in sim.staff if s.kind == "robot" and s.idle and s.location == nurse.location)
    R = DESK.rewards
    d = sim.dist[nurse.location, p.location]
    base = R.escort_priority * p.priority_factor / 3 - R.escort_distance * d - R.escort_wait * (sim.t - sim.escort_requests[rid].time)
    twin = copy.deepcopy(sim)
    assert sim.escort_apply({rid: nurse.id}, req) == pytest.approx(base + R.escort_nurse_bonus)
    assert twin.escort_apply({rid: robot.id}, req) == pytest.approx(base)


def test_escort_rejects_busy_staff_and_unknown_requests():
    sim = HospitalSim(DESK, 3)
    req = _run_to(sim, "escort_dispatcher")
    rid = min(sim.escort_requests)
    with pytest.raises(ValidationError):
        sim.escort_apply({rid + 999: 0}, req)
    sim.staff[0].patient = 12345
    with pytest.raises(ValidationError):
        sim.escort_apply({rid: 0}, req)


def test_doctor_allocation_moves_and_bounds():
    sim = HospitalSim(DESK, 0)
    req = _run_to(sim, "doctor_manager")
    assert sim.swing_allocation() == [1, 1, 1, 1, 0, 0]
    with pytest.raises(ValidationError):
        sim.doctor_apply({0: 5}, req)
    sim.doctor_apply({0: 4}, req)
    assert sim.swing_allocation() == [4, 0, 0, 0, 0, 0]
    assert sim.swing_moves == 3
    assert all(not d.arrived for d in sim.swing if d.id != 0)


def test_random_day_invariants_and_accounting():
    sim, problems = random_hs_day(DESK, 5, check_each_step=True)
    assert problems == []
    m = sim.metrics()
    assert m.patients_arrived == DESK.patients_per_day
    assert m.patients_treated > 0
    assert set(m.group_rewards) == {0, 1}
    assert len(m.patient_rewards) == m.patients_arrived
    row = m.as_row()
    assert row["hs_dp"] == pytest.approx(m.demographic_disparity)
    assert sum(v for k, v in row.items() if k.endswith("_routing_pct")) == pytest.approx(100.0)


def test_day_is_deterministic():
    a, _ = random_hs_day(DESK, 8)
    b, _ = random_hs_day(DESK, 8)
    assert a.metrics().patient_rewards == b.metrics().patient_rewards
    assert a.event_log == b.event_log


def test_invariant_checker_detects_double_booking():
    sim, _ = random_hs_day(DESK, 1)
    sid, start, end, who = sim.staff_intervals[0]
    sim.staff_intervals.append((sid, start, end, who))
    assert any("double-booked" in p for p in check_invariants(sim))


def test_treated_patients_are_not_waiting():
    sim, _ = random_hs_day(DESK, 2)
    for p in sim.arrived():
        if p.treated:
            assert p.stage in (Stage.TREATED, Stage.MOVING, Stage.ESCORT_WAIT, Stage.EXITED)
