"""Profitability thresholds versus gamma for several reward schedules.

    python scripts/thresholds.py --out results/thresholds.csv
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from ethsm.model import RewardSchedule
from ethsm.revenue import profitability_threshold, thresholds_csv

SCHEDULES = ("ethereum", "fixed:1/2", "fixed:7/8", "bitcoin")


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--gamma-step", type=float, default=0.05)
    p.add_argument("--schedules", default=",".join(SCHEDULES))
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--out", default="-")
    args = p.parse_args(argv)

    gammas = np.round(np.arange(0.0, 1.0 + 1e-9, args.gamma_step), 10)
    rows = []
    for tag in args.schedules.split(","):
        schedule = RewardSchedule.from_tag(tag)
        scenarios = (1,) if tag == "bitcoin" else (1, 2)
        for sc in scenarios:
            for g in gammas:
                r = profitability_threshold(float(g), schedule, sc, args.tolerance)
                rows.append(r)
                print(f"{tag:>10} s{sc} gamma={g:.2f} alpha*={r.alpha_star:.4f} {r.status}", file=sys.stderr)
    text = thresholds_csv(rows)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
