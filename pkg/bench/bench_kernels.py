"""Compiled vs pure-Python kernels: timing and bit-identity.

Usage::

    python3 bench/bench_kernels.py [--repeat 20] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from fairppo import kernels
from fairppo.envs import ah


def workloads(rng: np.random.Generator) -> dict:
    rewards = rng.normal(size=(64, 300))
    values = rng.normal(size=(64, 301))
    dones = (rng.random((64, 300)) < 0.01).astype(np.float64)
    cfg = ah.AhConfig(grid_width=15, grid_height=15, n_agents=40, n_bushes=30)
    s = ah.ah_reset(cfg, 0)
    return {
        "discounted_returns(3000)": ("discounted_returns", (rewards.ravel()[:3000].copy(), 0.99)),
        "gae_matrix(64x300)": ("gae_matrix", (rewards, values, dones, 0.99, 0.95)),
        "ah_window(40 agents, r=2)": (
            "ah_window",
            (s.color, s.ripe, s.occupancy(), s.prefs, s.positions.astype(np.int32), cfg.view_radius),
        ),
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--json", help="also write results here")
    args = parser.parse_args(argv)

    py = kernels.get_backend("python")
    try:
        cy = kernels.get_backend("cython")
    except ImportError:
        print("compiled kernels not built; only the Python backend is available", file=sys.stderr)
        cy = None

    results = []
    for name, (fn, call_args) in workloads(np.random.default_rng(0)).items():
        row = {"kernel": name}
        for label, mod in (("python", py), ("cython", cy)):
            if mod is None:
                continue
            f = getattr(mod, fn)
            row[f"{label}_ms"] = 1e3 * min(timeit.repeat(lambda: f(*call_args), number=1, repeat=args.repeat))
        if cy is not None:
            row["speedup"] = row["python_ms"] / row["cython_ms"]
            row["identical"] = bool(np.array_equal(getattr(py, fn)(*call_args), getattr(cy, fn)(*call_args)))
        results.append(row)

    print(f"{'kernel':28s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}  identical")
    for r in results:
        print(f"{r['kernel']:28s} {r['python_ms']:10.3f} {r.get('cython_ms', float('nan')):10.3f} "
              f"{r.get('speedup', float('nan')):8.1f}  {r.get('identical', '-')}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0 if all(r.get("identical", True) for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
