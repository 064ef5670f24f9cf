"""Experiment configuration, train / evaluate / sweep, and CSV persistence."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..benchmarks import SOTO_AH_ALPHAS, FenConfig, SotoConfig
from ..envs import ah, hs
from ..errors import ConfigError, EmptyGroupError, FairPPOError
from ..fairness import (
    FairnessReport,
    Metric,
    PenaltySpec,
    ReportOptions,
    conditional_statistical_disparity,
    demographic_disparity,
    format_value,
    price_of_fairness,
    report,
)
from ..policy.ppo import FairPpoConfig, PpoConfig
from .agents import Algorithm, FenAlgorithm, PpoAlgorithm, SotoAlgorithm
from .runners import HS_SLOTS, ah_context, ah_slots, hs_context, run_ah_episode, run_hs_day

ENVIRONMENTS = ("ah", "hs")
ALGORITHMS = ("fairppo", "ppo", "fen", "soto")
PAPER_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
HS_LF_LEVELS = ("high", "medium", "low")
AH_LF_LEVELS = ("blue", "red")

PRESETS = {
    ("ah", "desk"): {"train_episodes": 150, "eval_episodes": 20, "eval_episode_length": 300},
    ("ah", "paper"): {"train_episodes": 1000, "eval_episodes": 500, "eval_episode_length": 1500},
    ("hs", "desk"): {"train_episodes": 50, "eval_episodes": 10, "eval_episode_length": None},
    ("hs", "paper"): {"train_episodes": 2000, "eval_episodes": 500, "eval_episode_length": None},
}


@dataclass(frozen=True)
class ExperimentConfig:
    environment: str = "ah"
    algorithm: str = "fairppo"
    metric: str = "DP"
    alpha: float = 0.0
    beta: float = 0.0
    seeds: tuple = (0, 1, 2, 3, 4)
    scale: str = "desk"
    train_episodes: int | None = None
    eval_episodes: int | None = None
    eval_episode_length: int | None = None
    env: dict = field(default_factory=dict)
    ppo: dict = field(default_factory=dict)
    lambda_mode: str = "dynamic"
    lambda_value: float = 1.0
    soto_alpha: float | None = None
    alphas: tuple = ()
    betas: tuple = ()
    soto_alphas: tuple = ()
    hidden: tuple = (64, 64)
    checkpoint_every: int = 0
    deterministic_eval: bool = False
    check_invariants: bool = False
    output_dir: str = "runs"

    def __post_init__(self):
        if self.environment not in ENVIRONMENTS:
            raise ConfigError(f"environment must be one of {ENVIRONMENTS}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        if self.scale not in ("desk", "paper"):
            raise ConfigError("scale must be 'desk' or 'paper'")
        object.__setattr__(self, "metric", Metric(self.metric).value)
        for name in ("seeds", "alphas", "betas", "soto_alphas", "hidden"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        preset = PRESETS[(self.environment, self.scale)]
        for k, v in preset.items():
            if getattr(self, k) is None:
                object.__setattr__(self, k, v)
        if self.train_episodes < 1 or self.eval_episodes < 0:
            raise ConfigError("episode counts must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        object.__setattr__(self, "env", dict(self.env))
        object.__setattr__(self, "ppo", dict(self.ppo))
        self.env_config()  # validates overrides

    # -- derived configuration -------------------------------------------------
    def env_config(self):
        if self.environment == "ah":
            base = {}
            if self.scale == "desk":
                base = dict(grid_width=11, grid_height=11, n_agents=8, n_bushes=16, episode_length_ts=300)
            base.update(self.env)
            return ah.AhConfig(**base)
        if self.scale == "desk":
            return hs.HsConfig.desk(**self.env)
        return hs.HsConfig.from_dict(self.env) if self.env else hs.HsConfig()

    def lf_levels(self) -> tuple:
        return AH_LF_LEVELS if self.environment == "ah" else HS_LF_LEVELS

    def penalty_spec(self) -> PenaltySpec:
        lf = self.lf_levels() if self.metric == "CSP" else ()
        return PenaltySpec(self.metric, self.alpha, self.beta, lf)

    def ppo_config(self) -> PpoConfig:
        return PpoConfig(**self.ppo)

    def build_algorithm(self, seed: int) -> Algorithm:
        env_cfg = self.env_config()
        if self.algorithm in ("ppo", "fairppo"):
            slots = ah_slots(env_cfg, False) if self.environment == "ah" else HS_SLOTS
            if self.algorithm == "ppo":
                return PpoAlgorithm(slots, seed, cfg=self.ppo_config(), hidden=self.hidden)
            fair = FairPpoConfig(self.ppo_config(), self.penalty_spec(), self.lambda_mode, self.lambda_value)
            return PpoAlgorithm(slots, seed, fair=fair, hidden=self.hidden)
        slots = ah_slots(env_cfg, True) if self.environment == "ah" else HS_SLOTS
        if self.algorithm == "fen":
            cfg = FenConfig.for_env(self.environment)
            if self.ppo:
                cfg = replace(cfg, ppo=replace(cfg.ppo, **self.ppo))
            return FenAlgorithm(slots, seed, cfg, hidden=self.hidden)
        cfg = SotoConfig.for_env(self.environment, self.soto_alpha)
        if self.ppo:
            cfg = replace(cfg, ppo=replace(cfg.ppo, **self.ppo))
        return SotoAlgorithm(slots, seed, cfg, hidden=self.hidden)

    # -- identity ----------------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("seeds", "alphas", "betas", "soto_alphas", "hidden"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def config_hash(self) -> str:
        """Stable identity of everything except seeds, sweep grids and output location."""
        d = self.to_dict()
        for k in ("seeds", "output_dir", "alphas", "betas", "soto_alphas"):
            d.pop(k)
        raw = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(raw).hexdigest()[:12]

    def label(self) -> str:
        if self.algorithm == "fairppo":
            return f"fairppo-{self.metric}-a{self.alpha:g}-b{self.beta:g}"
        if self.algorithm == "soto":
            return f"soto-af{SotoConfig.for_env(self.environment, self.soto_alpha).alpha_fairness:g}"
        return self.algorithm

    def run_dir(self, seed: int) -> Path:
        return Path(self.output_dir) / f"{self.environment}-{self.label()}-{self.config_hash()}" / f"seed{seed}"


@dataclass
class RunRecord:
    config_hash: str
    config: ExperimentConfig
    seed: int
    rows: list = field(default_factory=list)
    report: FairnessReport | None = None
    eval_row: dict | None = None
    wall_clock: float = 0.0
    checkpoint_path: str | None = None
    traces: dict = field(default_factory=dict)
    invariant_violations: list = field(default_factory=list)
    error: str | None = None


def episode_seed(seed: int, episode: int, phase: int) -> int:
    """Independent 32-bit seed for (run seed, episode, train/eval phase)."""
    return int(np.random.SeedSequence([int(seed), int(episode), int(phase)]).generate_state(1)[0])


def _safe(fn, *args):
    try:
        return fn(*args)
    except EmptyGroupError:
        return None


def _episode(config: ExperimentConfig, alg: Algorithm, env_cfg, seed: int, record: bool, deterministic: bool,
             counterfactual: bool = False, steps: int | None = None):
    if config.environment == "ah":
        return run_ah_episode(alg, env_cfg, seed, record=record, deterministic=deterministic,
                              counterfactual=counterfactual, check=config.check_invariants, steps=steps)
    return run_hs_day(alg, env_cfg, seed, record=record, deterministic=deterministic,
                      counterfactual=counterfactual, check=config.check_invariants)


def _context(config: ExperimentConfig, res, cf=None):
    return ah_context(res, cf) if config.environment == "ah" else hs_context(res, cf)


# ---------------------------------------------------------------------------
# Train / evaluate
# ---------------------------------------------------------------------------


TRAIN_COLUMNS = (
    "config_hash", "environment", "algorithm", "label", "seed", "episode", "mean_reward", "dp", "csp_total",
    "penalty", "lambda", "ret_gap", "val_gap", "patients_treated",
)


def train(config: ExperimentConfig, seed: int | None = None, alg: Algorithm | None = None,
          checkpoint: bool = True) -> RunRecord:
    """Train one seed for ``config.train_episodes`` episodes."""
    seed = config.seeds[0] if seed is None else int(seed)
    start = time.perf_counter()
    env_cfg = config.env_config()
    alg = alg or config.build_algorithm(seed)
    rec = RunRecord(config.config_hash(), config, seed)
    cf_needed = config.algorithm == "fairppo" and config.metric == "CF"
    E = config.train_episodes
    run_dir = config.run_dir(seed)
    for ep in range(E):
        alg.set_progress(ep / (E - 1) if E > 1 else 1.0)
        es = episode_seed(seed, ep, 0)
        res = _episode(config, alg, env_cfg, es, record=True, deterministic=False)
        cf = _episode(config, alg, env_cfg, es, record=False, deterministic=False, counterfactual=True) if cf_needed else None
        stats = alg.end_episode(_context(config, res, cf))
        rec.invariant_violations += res.invariant_violations
        csp = _safe(conditional_statistical_disparity, res.returns, res.partition)
        rec.rows.append({
            "config_hash": rec.config_hash,
            "environment": config.environment,
            "algorithm": config.algorithm,
            "label": config.label(),
            "seed": seed,
            "episode": ep,
            "mean_reward": res.mean_reward,
            "dp": _safe(demographic_disparity, res.returns, res.partition),
            "csp_total": None if csp is None else csp[1],
            "penalty": stats.get("penalty"),
            "lambda": stats.get("lambda"),
            "ret_gap": stats.get("ret_gap"),
            "val_gap": stats.get("val_gap"),
            "patients_treated": None if res.hs_metrics is None else res.hs_metrics.patients_treated,
        })
        if checkpoint and config.checkpoint_every and (ep + 1) % config.checkpoint_every == 0 and ep + 1 < E:
            alg.save(run_dir / f"checkpoint-ep{ep + 1}.fppo", _ckpt_meta(config, seed, ep + 1))
    if checkpoint:
        rec.checkpoint_path = str(alg.save(run_dir / "checkpoint.fppo", _ckpt_meta(config, seed, E)))
    rec.traces = alg.traces()
    rec.wall_clock = time.perf_counter() - start
    rec.alg = alg
    return rec


def _ckpt_meta(config: ExperimentConfig, seed: int, episodes: int) -> dict:
    return {"config": config.to_dict(), "config_hash": config.config_hash(), "seed": seed, "episodes": episodes}


def mean_report(reports: list[FairnessReport], lf_levels=()) -> FairnessReport:
    """Average per-episode reports field by field."""
    if not reports:
        raise FairPPOError("no reports to average")

    def avg(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    levels = sorted({k for r in reports for k in r.csp_by_lf} | set(lf_levels), key=repr)
    csp = {v: avg([r.csp_by_lf.get(v) for r in reports]) for v in levels}
    skipped = tuple(v for v in levels if csp[v] is None)
    csp = {v: x for v, x in csp.items() if x is not None}
    cfs = [r.cf for r in reports]
    return FairnessReport(
        dp=avg([r.dp for r in reports]),
        gini=avg([r.gini for r in reports]),
        jfi=avg([r.jfi for r in reports]),
        nnsw=avg([r.nnsw for r in reports]),
        mean_reward=avg([r.mean_reward for r in reports]),
        csp_by_lf=csp,
        csp_total=avg([r.csp_total for r in reports]),
        csp_skipped=skipped,
        cf=avg(cfs) if all(c is not None for c in cfs) else None,
        price_of_fairness=None,
    )


HS_EVAL_COLUMNS = (
    "patients_treated", "mean_escort_wait", "mean_escort_travel", "swing_doctor_moves",
    "perfect_routing_pct", "backup_routing_pct", "incorrect_routing_pct",
)


def evaluate(config: ExperimentConfig, seed: int | None = None, checkpoint_path=None,
             alg: Algorithm | None = None, counterfactual: bool | None = None) -> RunRecord:
    """Frozen-policy rollouts; metrics averaged over episodes."""
    seed = config.seeds[0] if seed is None else int(seed)
    start = time.perf_counter()
    env_cfg = config.env_config()
    if alg is None:
        alg = config.build_algorithm(seed)
        if checkpoint_path is None:
            checkpoint_path = config.run_dir(seed) / "checkpoint.fppo"
        alg.load(checkpoint_path)
    alg.set_progress(1.0)
    if counterfactual is None:
        counterfactual = config.metric == "CF"
    reports, hs_rows = [], []
    for ep in range(config.eval_episodes):
        es = episode_seed(seed, ep, 1)
        res = _episode(config, alg, env_cfg, es, record=False, deterministic=config.deterministic_eval,
                       steps=config.eval_episode_length)
        cf = None
        if counterfactual:
            cf = _episode(config, alg, env_cfg, es, record=False, deterministic=config.deterministic_eval,
                          counterfactual=True, steps=config.eval_episode_length)
        if not res.returns:
            continue
        try:
            reports.append(report(res.returns, res.partition,
                                  ReportOptions(counterfactual=None if cf is None else cf.returns)))
        except EmptyGroupError:
            continue
        if res.hs_metrics is not None:
            hs_rows.append(res.hs_metrics.as_row())
    rec = RunRecord(config.config_hash(), config, seed)
    rec.checkpoint_path = None if checkpoint_path is None else str(checkpoint_path)
    if reports:
        rec.report = mean_report(reports, config.lf_levels())
        rec.eval_row = eval_row(config, seed, rec.report, hs_rows)
    rec.wall_clock = time.perf_counter() - start
    return rec


def eval_row(config: ExperimentConfig, seed: int, rep: FairnessReport, hs_rows: list[dict]) -> dict:
    row = {
        "config_hash": config.config_hash(),
        "environment": config.environment,
        "algorithm": config.algorithm,
        "label": config.label(),
        "metric": config.metric,
        "alpha": config.alpha,
        "beta": config.beta,
        "seed": seed,
    }
    row.update(rep.as_row(config.lf_levels()))
    if config.environment == "hs":
        for k in HS_EVAL_COLUMNS:
            vals = [r[k] for r in hs_rows if r.get(k) is not None]
            row[k] = float(np.mean(vals)) if vals else None
    return row


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def write_csv(path, rows: list[dict], columns=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns) if columns is not None else (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_value(r.get(c)) for c in columns])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def persist(train_rec: RunRecord | None, eval_rec: RunRecord | None, config: ExperimentConfig, seed: int) -> Path:
    d = config.run_dir(seed)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
    if train_rec is not None:
        write_csv(d / "train.csv", train_rec.rows, TRAIN_COLUMNS)
    if eval_rec is not None and eval_rec.eval_row is not None:
        write_csv(d / "eval.csv", [eval_rec.eval_row])
        (d / "report.txt").write_text(eval_rec.report.to_text() + "\n")
    # Wall-clock lives apart from the metric CSVs so those stay byte-reproducible.
    tpath = d / "timing.json"
    timing = json.loads(tpath.read_text()) if tpath.exists() else {}
    if train_rec is not None:
        timing["train_seconds"] = train_rec.wall_clock
    if eval_rec is not None:
        timing["eval_seconds"] = eval_rec.wall_clock
    tpath.write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    return d


def run(config: ExperimentConfig, seeds=None) -> list[tuple[RunRecord, RunRecord]]:
    """Train and evaluate every seed, writing each run directory."""
    out = []
    for seed in seeds if seeds is not None else config.seeds:
        tr = train(config, seed)
        ev = evaluate(config, seed, alg=tr.alg, checkpoint_path=tr.checkpoint_path)
        persist(tr, ev, config, seed)
        out.append((tr, ev))
    return out


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def grid_configs(config: ExperimentConfig) -> list[ExperimentConfig]:
    """Expand the sweep grid; Fair-PPO grids always include alpha = beta = 0."""
    if config.algorithm == "fairppo":
        alphas = config.alphas or PAPER_GRID
        betas = config.betas or PAPER_GRID
        pairs = [(a, b) for a in alphas for b in betas]
        if (0.0, 0.0) not in pairs:
            pairs.insert(0, (0.0, 0.0))
        return [replace(config, alpha=float(a), beta=float(b), alphas=(), betas=()) for a, b in pairs]
    if config.algorithm == "soto":
        alphas = config.soto_alphas or ((SOTO_AH_ALPHAS if config.environment == "ah" else (0.9,)))
        return [replace(config, soto_alpha=float(a), soto_alphas=()) for a in alphas]
    return [replace(config, alphas=(), betas=(), soto_alphas=())]


SWEEP_SUMMARY_COLUMNS = ("label", "config_hash", "runs", "median_dp", "median_mean_reward", "median_gini", "median_price_of_fairness")


def sweep(config: ExperimentConfig) -> list[RunRecord]:
    """One train+evaluate run per grid point and seed; failures are recorded, not raised."""
    records: list[RunRecord] = []
    for cfg in grid_configs(config):
        for seed in cfg.seeds:
            try:
                tr = train(cfg, seed)
                ev = evaluate(cfg, seed, alg=tr.alg, checkpoint_path=tr.checkpoint_path)
                ev.rows = tr.rows
                ev.traces = tr.traces
                persist(tr, None, cfg, seed)
                records.append(ev)
            except FairPPOError as exc:
                records.append(RunRecord(cfg.config_hash(), cfg, seed, error=f"{type(exc).__name__}: {exc}"))
    # Evaluation files are written once the reference run's reward is known.
    attach_price_of_fairness(records)
    for r in records:
        if r.error is None:
            persist(None, r, r.config, r.seed)
    write_sweep(config, records)
    return records


def attach_price_of_fairness(records: list[RunRecord]):
    """Reference each report against the alpha = beta = 0 run with the same seed."""
    base = {
        r.seed: r.report.mean_reward
        for r in records
        if r.report is not None and r.config.algorithm == "fairppo" and r.config.alpha == 0 and r.config.beta == 0
    }
    for r in records:
        if r.report is None or r.seed not in base or base[r.seed] == 0:
            continue
        pof = price_of_fairness(r.report.mean_reward, base[r.seed])
        r.report = replace(r.report, price_of_fairness=pof)
        if r.eval_row is not None:
            r.eval_row["price_of_fairness"] = pof


def summarize(records: list[RunRecord]) -> list[dict]:
    """Median metrics per configuration, sorted by lowest disparity."""
    return summary_rows([r.eval_row for r in records if r.eval_row is not None])


def summary_rows(evals: list[dict]) -> list[dict]:
    """Median summary of evaluation rows (in memory or read back from CSV)."""
    groups: dict = {}
    for e in evals:
        groups.setdefault((e["label"], e["config_hash"]), []).append(e)

    def med(rows, key):
        vals = [float(r[key]) for r in rows if r.get(key) not in (None, "")]
        return float(np.median(vals)) if vals else None

    rows = [
        {
            "label": label,
            "config_hash": h,
            "runs": len(rs),
            "median_dp": med(rs, "dp"),
            "median_mean_reward": med(rs, "mean_reward"),
            "median_gini": med(rs, "gini"),
            "median_price_of_fairness": med(rs, "price_of_fairness"),
        }
        for (label, h), rs in groups.items()
    ]
    return sorted(rows, key=lambda r: (r["median_dp"] is None, r["median_dp"] or 0.0, r["label"], r["config_hash"]))


def write_sweep(config: ExperimentConfig, records: list[RunRecord]) -> Path:
    out = Path(config.output_dir)
    rows = [r.eval_row for r in records if r.eval_row is not None]
    if rows:
        write_csv(out / f"sweep-{config.environment}-{config.algorithm}.csv", rows)
    failures = [{"label": r.config.label(), "seed": r.seed, "error": r.error} for r in records if r.error]
    if failures:
        write_csv(out / f"sweep-{config.environment}-{config.algorithm}-failures.csv", failures)
    return write_csv(out / f"sweep-{config.environment}-{config.algorithm}-summary.csv", summarize(records),
                     SWEEP_SUMMARY_COLUMNS)
