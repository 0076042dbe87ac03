"""Compare analytic revenue with simulation across a range of pool sizes.

Prints one row per (alpha, quantity) with the simulated value, its standard
error and the z-score against the analytic value.
"""

from __future__ import annotations

import argparse
import sys

from ethsm.model import MiningConfig, RewardSchedule
from ethsm.revenue import absolute_revenue, evaluate
from ethsm.sim import run_simulation

QUANTITIES = ("r_b_s", "r_b_h", "r_u_s", "r_u_h", "r_n_s", "r_n_h")


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--alphas", type=lambda s: [float(x) for x in s.split(",")], default=[0.1, 0.2, 0.3, 0.4, 0.45])
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--schedule", default="ethereum")
    p.add_argument("--blocks", type=int, default=100_000)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args(argv)

    schedule = RewardSchedule.from_tag(args.schedule)
    worst = 0.0
    print("alpha,quantity,analytic,simulated,se,z")
    for a in args.alphas:
        cfg = MiningConfig(a, args.gamma)
        b = evaluate(cfg, schedule)
        res = run_simulation(cfg, schedule, args.blocks, args.runs, args.seed, workers=args.workers)
        pairs = [(q, getattr(b, q), res.rates[q], res.rate_se[q]) for q in QUANTITIES]
        for sc in (1, 2):
            us, uh = absolute_revenue(b, sc)
            pairs.append((f"U_s_{sc}", us, res.revenue[f"U_s_{sc}"], res.revenue[f"U_s_{sc}_se"]))
            pairs.append((f"U_h_{sc}", uh, res.revenue[f"U_h_{sc}"], res.revenue[f"U_h_{sc}_se"]))
        for q, theory, got, se in pairs:
            z = (got - theory) / se if se > 0 else 0.0
            worst = max(worst, abs(z))
            print(f"{a},{q},{theory:.6f},{got:.6f},{se:.2e},{z:+.2f}")
    print(f"max |z| = {worst:.2f}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
