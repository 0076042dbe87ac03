"""Closed-form against numeric stationary distribution over an (alpha, gamma) grid."""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from ethsm import markov
from ethsm.model import MiningConfig


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--truncation", type=int, default=markov.DEFAULT_TRUNCATION)
    p.add_argument("--alphas", type=lambda s: [float(x) for x in s.split(",")],
                   default=[round(0.05 * k, 2) for k in range(1, 10)])
    p.add_argument("--gammas", type=lambda s: [float(x) for x in s.split(",")], default=[0, 0.25, 0.5, 0.75, 1])
    args = p.parse_args(argv)

    N = args.truncation
    print("alpha,gamma,max_gap,numeric_window_tail,closed_tail,seconds")
    for a in args.alphas:
        for g in args.gammas:
            cfg = MiningConfig(a, g)
            t0 = time.perf_counter()
            closed = markov.stationary_closed_form(cfg, N)
            numeric = markov.stationary_numeric(cfg, N)
            gap = float(np.abs(closed.pi - numeric.pi).max())
            dt = time.perf_counter() - t0
            print(f"{a},{g},{gap:.2e},{numeric.tail_mass_bound:.2e},{closed.tail_mass_bound:.2e},{dt:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
