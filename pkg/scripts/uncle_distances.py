"""Honest uncle-distance distribution: analytic value next to a seeded simulation."""

from __future__ import annotations

import argparse
import sys

from ethsm.markov import stationary_closed_form
from ethsm.model import MiningConfig, RewardSchedule
from ethsm.revenue import resolve_truncation
from ethsm.rewards import honest_uncle_distance_distribution
from ethsm.sim import run_simulation


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--alphas", type=lambda s: [float(x) for x in s.split(",")], default=[0.3, 0.45])
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--blocks", type=int, default=100_000)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    schedule = RewardSchedule.ethereum()
    print("alpha,source," + ",".join(f"d{d}" for d in range(1, 7)) + ",expectation")
    for a in args.alphas:
        cfg = MiningConfig(a, args.gamma)
        dist = stationary_closed_form(cfg, resolve_truncation(cfg, None))
        analytic = honest_uncle_distance_distribution(dist, cfg, schedule)[1:]
        exp_a = sum((d + 1) * x for d, x in enumerate(analytic))
        print(f"{a},analytic," + ",".join(f"{x:.4f}" for x in analytic) + f",{exp_a:.4f}")
        res = run_simulation(cfg, schedule, args.blocks, args.runs, args.seed)
        sim = res.honest_uncle_distribution
        print(f"{a},simulated," + ",".join(f"{x:.4f}" for x in sim) + f",{res.honest_uncle_expectation:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
