"""Figure export: disparity boxplots, disparity/reward Pareto front, training curves.

Every image is written next to the CSV holding exactly the values drawn.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from ..errors import FairPPOError
from .experiment import RunRecord, read_csv, write_csv

BOXPLOT_COLUMNS = ("label", "seed", "dp", "mean_reward")
PARETO_COLUMNS = ("label", "median_dp", "median_mean_reward", "non_dominated")
CURVE_COLUMNS = ("label", "episode", "median_dp", "median_mean_reward", "seeds")


def _float(x):
    if x is None or x == "":
        return None
    return float(x)


def rows_from_records(records: list[RunRecord]) -> tuple[list[dict], list[dict]]:
    """(evaluation rows, training rows) from in-memory records."""
    evals = [r.eval_row for r in records if r.eval_row is not None]
    trains = [row for r in records for row in r.rows]
    return evals, trains


def rows_from_directory(root) -> tuple[list[dict], list[dict]]:
    """Collect every eval.csv / train.csv below ``root``, in sorted path order."""
    root = Path(root)
    evals = [row for p in sorted(root.rglob("eval.csv")) for row in read_csv(p)]
    trains = [row for p in sorted(root.rglob("train.csv")) for row in read_csv(p)]
    return evals, trains


def non_dominated(points: list[tuple[float, float]]) -> list[bool]:
    """Flags for points not dominated under (minimise disparity, maximise reward)."""
    flags = []
    for i, (d, r) in enumerate(points):
        dominated = any(
            (d2 <= d and r2 >= r) and (d2 < d or r2 > r) for j, (d2, r2) in enumerate(points) if j != i
        )
        flags.append(not dominated)
    return flags


def boxplot_rows(evals: list[dict]) -> list[dict]:
    rows = [
        {"label": e["label"], "seed": int(e["seed"]), "dp": _float(e.get("dp")), "mean_reward": _float(e.get("mean_reward"))}
        for e in evals
    ]
    return sorted(rows, key=lambda r: (r["label"], r["seed"]))


def pareto_rows(evals: list[dict]) -> list[dict]:
    by_label = defaultdict(list)
    for r in boxplot_rows(evals):
        if r["dp"] is not None and r["mean_reward"] is not None:
            by_label[r["label"]].append(r)
    rows = [
        {
            "label": label,
            "median_dp": float(np.median([x["dp"] for x in rs])),
            "median_mean_reward": float(np.median([x["mean_reward"] for x in rs])),
        }
        for label, rs in sorted(by_label.items())
    ]
    flags = non_dominated([(r["median_dp"], r["median_mean_reward"]) for r in rows])
    for r, f in zip(rows, flags):
        r["non_dominated"] = int(f)
    return rows


def curve_rows(trains: list[dict]) -> list[dict]:
    acc = defaultdict(lambda: {"dp": [], "mean_reward": [], "seeds": set()})
    for t in trains:
        key = (t["label"], int(t["episode"]))
        dp = _float(t.get("dp"))
        if dp is not None:
            acc[key]["dp"].append(dp)
        acc[key]["mean_reward"].append(float(t["mean_reward"]))
        acc[key]["seeds"].add(int(t["seed"]))
    return [
        {
            "label": label,
            "episode": ep,
            "median_dp": float(np.median(v["dp"])) if v["dp"] else None,
            "median_mean_reward": float(np.median(v["mean_reward"])),
            "seeds": len(v["seeds"]),
        }
        for (label, ep), v in sorted(acc.items())
    ]


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    return path


def export_plots(evals: list[dict], trains: list[dict], out_dir, prefix: str = "") -> list[Path]:
    """Write boxplot, Pareto and curve figures with their CSVs; returns all written paths."""
    if not evals and not trains:
        raise FairPPOError("nothing to plot: no evaluation or training rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plt = _figure()
    written: list[Path] = []

    if evals:
        box = boxplot_rows(evals)
        written.append(write_csv(out / f"{prefix}boxplot_dp.csv", box, BOXPLOT_COLUMNS))
        labels = sorted({r["label"] for r in box})
        data = [[r["dp"] for r in box if r["label"] == lab and r["dp"] is not None] for lab in labels]
        fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(labels) + 2), 4))
        ax.boxplot(data)
        ax.set_xticks(range(1, len(labels) + 1), labels, rotation=60, ha="right", fontsize=7)
        ax.set_ylabel("demographic disparity")
        written.append(_save(fig, out / f"{prefix}boxplot_dp.png"))
        plt.close(fig)

        par = pareto_rows(evals)
        written.append(write_csv(out / f"{prefix}pareto.csv", par, PARETO_COLUMNS))
        fig, ax = plt.subplots(figsize=(5, 4))
        for r in par:
            ax.scatter(r["median_dp"], r["median_mean_reward"], c="tab:red" if r["non_dominated"] else "tab:gray", s=18)
        front = sorted((r["median_dp"], r["median_mean_reward"]) for r in par if r["non_dominated"])
        if front:
            ax.plot(*zip(*front), c="tab:red", lw=1)
        ax.set_xlabel("median demographic disparity")
        ax.set_ylabel("median mean reward")
        written.append(_save(fig, out / f"{prefix}pareto.png"))
        plt.close(fig)

    if trains:
        cur = curve_rows(trains)
        written.append(write_csv(out / f"{prefix}curves.csv", cur, CURVE_COLUMNS))
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
        for label in sorted({r["label"] for r in cur}):
            rs = [r for r in cur if r["label"] == label]
            a1.plot([r["episode"] for r in rs], [r["median_mean_reward"] for r in rs], lw=1, label=label)
            pts = [(r["episode"], r["median_dp"]) for r in rs if r["median_dp"] is not None]
            if pts:
                a2.plot(*zip(*pts), lw=1, label=label)
        a1.set_xlabel("episode")
        a1.set_ylabel("median mean reward")
        a2.set_xlabel("episode")
        a2.set_ylabel("median demographic disparity")
        a2.legend(fontsize=6)
        written.append(_save(fig, out / f"{prefix}curves.png"))
        plt.close(fig)
    return written
