"""Command-line front end: ``ethsm <command> [options]``.

Every command writes CSV or JSON to --out (stdout by default) and returns exit
status 0 only when its internal consistency checks pass.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import markov, revenue, rewards, sim
from .model import ConfigError, MiningConfig, RewardSchedule, load_config

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 3, 2
STATIONARY_TOLERANCE = 1e-9
REFERENCE_UNCLE_DISTANCES = {
    0.3: ((0.527, 0.295, 0.111, 0.043, 0.017, 0.007), 1.75),
    0.45: ((0.284, 0.249, 0.171, 0.125, 0.096, 0.075), 2.72),
}


@dataclass(frozen=True)
class SweepSpec:
    alpha_range: tuple[float, float, float]
    gamma_list: tuple[float, ...]
    schedules: tuple[str, ...]
    scenarios: tuple[int, ...]
    mode: str = "analytic"

    def alphas(self) -> list[float]:
        start, stop, step = self.alpha_range
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + k * step, 10) for k in range(max(n, 0))]

    def errors(self) -> list[str]:
        out = []
        start, stop, step = self.alpha_range
        if step <= 0 or stop < start:
            out.append("alpha range must satisfy start <= stop and step > 0")
        if start <= 0 or stop >= 1:
            out.append("alpha range must lie inside (0, 1)")
        if self.mode != "simulate" and stop >= 0.5:
            out.append("alpha out of range for stationary analysis: analytic sweeps need alpha < 0.5")
        if any(not 0 <= g <= 1 for g in self.gamma_list):
            out.append("gamma out of range: every gamma must lie in [0, 1]")
        if self.mode not in ("analytic", "simulate", "both"):
            out.append(f"unknown mode {self.mode!r}")
        return out


# -- helpers --------------------------------------------------------------------

def fmt(v: object) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{float(v):.9g}"
    return str(v)


def rows_to_csv(header: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(r.get(h, "")) for h in header])
    return buf.getvalue()


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.9g}") if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def to_json(obj) -> str:
    return json.dumps(_json_ready(obj), sort_keys=True, indent=2) + "\n"


def emit(args, text: str) -> None:
    if args.out and args.out != "-":
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("ETHSM_WORKERS", "1")))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items: list, workers: int) -> list:
    """Map preserving input order, so output never depends on completion order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def scenario_list(text: str) -> list[int]:
    out = []
    for x in str_list(text):
        try:
            out.append(int(revenue.Scenario.parse(x)))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return out


def resolve(args) -> tuple[MiningConfig, RewardSchedule]:
    """Config file values first, then explicit flags on top."""
    if args.config:
        config, schedule = load_config(args.config)
    else:
        config, schedule = MiningConfig(0.3, 0.5), RewardSchedule.ethereum()
    alpha = args.alpha if getattr(args, "alpha", None) is not None else config.alpha
    gamma = args.gamma if getattr(args, "gamma", None) is not None else config.gamma
    if getattr(args, "schedule", None):
        schedule = RewardSchedule.from_tag(args.schedule)
    config = MiningConfig(alpha, gamma)
    errs = config.errors()
    if errs:
        raise ConfigError(errs)
    return config, schedule


# -- commands -------------------------------------------------------------------

def cmd_stationary(args) -> int:
    config, _ = resolve(args)
    config.require_analytic()
    N = args.truncation or markov.DEFAULT_TRUNCATION
    closed = markov.stationary_closed_form(config, N)
    try:
        numeric = markov.stationary_numeric(config, N, args.tolerance, max_window=max(2 * N, N + 8))
    except markov.NonConvergenceError as exc:
        if exc.distribution is None:
            raise
        warn(f"numeric solve stopped at its window budget: {exc}; consider a larger --truncation")
        numeric = exc.distribution
    gap = float(np.abs(closed.pi - numeric.pi).max())
    if closed.tail_mass_bound > 1e-9:
        warn(f"omitted mass beyond i={N} is {closed.tail_mass_bound:.3e}; consider a larger --truncation")
    summary = {
        "alpha": config.alpha, "gamma": config.gamma, "truncation": N,
        "tail_mass_closed": closed.tail_mass_bound, "tail_mass_numeric": numeric.tail_mass_bound,
        "max_discrepancy": gap, "consistent": gap <= STATIONARY_TOLERANCE,
    }
    print(f"max per-state discrepancy {gap:.3e}; omitted mass {closed.tail_mass_bound:.3e}", file=sys.stderr)
    if args.format == "json":
        summary["states"] = [
            {"i": i, "j": j, "closed": pc, "numeric": pn}
            for ((i, j), pc), pn in zip(closed.items(), numeric.pi.tolist())
            if max(pc, pn) >= args.min_prob
        ]
        emit(args, to_json(summary))
    else:
        emit(args, markov.distributions_csv([closed, numeric], args.min_prob))
    return EXIT_OK if summary["consistent"] else EXIT_CHECK_FAILED


REVENUE_HEADER = [
    "alpha", "gamma", "schedule", "r_b_s", "r_b_h", "r_u_s", "r_u_h", "r_n_s", "r_n_h", "uncle_count_rate",
    "r_total", "U_s_1", "U_h_1", "U_s_2", "U_h_2", "R_s", "inflation", "max_discrepancy", "consistent",
    "literal_r_n_s", "literal_r_n_h", "error_bound", "truncation",
]


def revenue_row(config: MiningConfig, schedule: RewardSchedule, truncation: int | None) -> dict:
    N = revenue.resolve_truncation(config, truncation)
    dist = markov.stationary_closed_form(config, N)
    audit = rewards.revenue_audit(dist, config, schedule)
    b = audit.attribution
    row = b.as_row()
    for sc in revenue.Scenario:
        row[f"U_s_{int(sc)}"], row[f"U_h_{int(sc)}"] = revenue.absolute_revenue(b, sc)
    row.update(R_s=revenue.relative_share(b), inflation=revenue.total_inflation(b),
               max_discrepancy=audit.max_discrepancy, consistent=audit.consistent,
               literal_r_n_s=audit.literal_nephew_pool, literal_r_n_h=audit.literal_nephew_honest, truncation=N)
    return row


def cmd_revenue(args) -> int:
    config, schedule = resolve(args)
    config.require_analytic()
    row = revenue_row(config, schedule, args.truncation)
    sc = revenue.Scenario.parse(args.scenario)
    row["U_s"], row["U_h"] = row[f"U_s_{int(sc)}"], row[f"U_h_{int(sc)}"]
    row["scenario"] = int(sc)
    if args.format == "json":
        emit(args, to_json(row))
    else:
        emit(args, rows_to_csv(["scenario", "U_s", "U_h"] + REVENUE_HEADER, [row]))
    if not row["consistent"]:
        print(f"consistency failure: attribution and closed formulas differ by {row['max_discrepancy']:.3e}",
              file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _threshold_job(job):
    gamma, tag, scenario, tol, truncation = job
    if tag == "bitcoin-baseline":
        res = revenue.bitcoin_baseline_threshold(gamma, tol, truncation)
        return {**res.as_row(), "schedule": "bitcoin-baseline"}
    return revenue.profitability_threshold(gamma, RewardSchedule.from_tag(tag), scenario, tol, truncation).as_row()


THRESHOLD_HEADER = ["gamma", "scenario", "schedule", "alpha_star", "bracket_width", "status"]


def cmd_threshold(args) -> int:
    jobs = sorted({(g, tag, sc, args.tolerance, args.truncation)
                   for g in args.gammas for tag in args.schedules for sc in args.scenarios})
    if not args.no_baseline:
        jobs += [(g, "bitcoin-baseline", 1, args.tolerance, args.truncation) for g in sorted(set(args.gammas))]
    rows = parallel_map(_threshold_job, jobs, args.workers)
    for r in rows:
        if r["status"] != "crossing":
            warn(f"gamma={r['gamma']} {r['schedule']} scenario {r['scenario']}: {r['status'].replace('_', ' ')}")
    if args.format == "json":
        emit(args, to_json(rows))
    else:
        emit(args, rows_to_csv(THRESHOLD_HEADER, rows))
    return EXIT_OK


def comparison(result: sim.SimResult, config: MiningConfig, schedule: RewardSchedule,
               truncation: int | None = None) -> dict:
    """Analytic value, simulated value and z-score for every reported quantity."""
    if config.alpha >= 0.5:
        return {}
    b = revenue.evaluate(config, schedule, truncation)
    analytic = b.rates()
    for sc in revenue.Scenario:
        analytic[f"U_s_{int(sc)}"], analytic[f"U_h_{int(sc)}"] = revenue.absolute_revenue(b, sc)
    out = {}
    for k, v in analytic.items():
        if k in result.rates:
            est, se = result.rates[k], result.rate_se[k]
        else:
            est, se = result.revenue[k], result.revenue[k + "_se"]
        z = (est - v) / se if se > 0 else (0.0 if est == v else math.inf)
        out[k] = {"analytic": v, "simulated": est, "se": se, "z": z, "abs_diff": est - v}
    return out


def cmd_simulate(args) -> int:
    config, schedule = resolve(args)
    result = sim.run_simulation(config, schedule, args.blocks, args.runs, args.seed, miners=args.miners,
                                max_uncles_per_block=args.max_uncles, workers=args.workers)
    for w in result.warnings:
        warn(w)
    payload = result.to_dict()
    payload["comparison"] = comparison(result, config, schedule, args.truncation)
    if args.trace:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(args.seed).spawn(1)[0]))
        run = sim.simulate_run(config, schedule, args.blocks, rng, record_trace=True, miners=args.miners,
                               max_uncles_per_block=args.max_uncles)
        with open(args.trace, "w") as fh:
            fh.write(sim.trace_lines(run.trace or []))
    if args.format == "csv":
        row = result.summary_row()
        for k, c in payload["comparison"].items():
            row[f"{k}_analytic"], row[f"{k}_z"] = c["analytic"], c["z"]
        emit(args, rows_to_csv(list(row), [row]))
    else:
        emit(args, to_json(payload))
    ok = result.lemma1_ok and result.invariant_violations == 0 and result.pool_uncle_violations == 0
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _table2_job(job):
    alpha, gamma, tag, blocks, runs, seed = job
    return sim.run_simulation(MiningConfig(alpha, gamma), RewardSchedule.from_tag(tag), blocks, runs, seed)


def cmd_table2(args) -> int:
    _, schedule = resolve(args)
    gamma = args.gamma if args.gamma is not None else 0.5
    rows = []
    sims = []
    if not args.analytic_only:
        jobs = [(a, gamma, schedule.tag, args.blocks, args.runs, args.seed) for a in args.alphas]
        sims = parallel_map(_table2_job, jobs, args.workers)
    for k, a in enumerate(args.alphas):
        if 0 < a < 0.5:
            cfg = MiningConfig(a, gamma)
            dist = markov.stationary_closed_form(cfg, revenue.resolve_truncation(cfg, args.truncation))
            h = rewards.honest_uncle_distance_distribution(dist, cfg, schedule)[1:7]
            rows.append(_t2row(a, gamma, "analytic", h, int(0)))
        if sims:
            r = sims[k]
            n = sum(r.honest_uncle_hist[1:])
            row = _t2row(a, gamma, "simulated", np.asarray(r.honest_uncle_distribution[:6]), n)
            if n < 100:
                row["notice"] = "insufficient sample"
                warn(f"alpha={a}: only {n} honest uncles observed")
            rows.append(row)
    header = ["alpha", "gamma", "source", "d1", "d2", "d3", "d4", "d5", "d6", "expectation", "uncles", "notice"]
    emit(args, to_json(rows) if args.format == "json" else rows_to_csv(header, rows))
    return EXIT_OK


def _t2row(alpha, gamma, source, h, n) -> dict:
    h = np.asarray(h, dtype=float)
    row = {"alpha": alpha, "gamma": gamma, "source": source, "uncles": n, "notice": ""}
    for d in range(6):
        row[f"d{d + 1}"] = float(h[d]) if d < len(h) else 0.0
    row["expectation"] = float(np.dot(np.arange(1, len(h) + 1), h))
    return row


def _sweep_job(job):
    alpha, gamma, tag, mode, blocks, runs, seed, truncation = job
    cfg, sched = MiningConfig(alpha, gamma), RewardSchedule.from_tag(tag)
    out = {"alpha": alpha, "gamma": gamma, "schedule": sched.tag}
    if mode in ("analytic", "both") and alpha < 0.5:
        out["analytic"] = revenue_row(cfg, sched, truncation)
    if mode in ("simulate", "both"):
        out["sim"] = sim.run_simulation(cfg, sched, blocks, runs, seed).summary_row()
    return out


def cmd_sweep(args) -> int:
    spec = SweepSpec(tuple(args.alpha_range), tuple(args.gammas), tuple(args.schedules), tuple(args.scenarios),
                     args.mode)
    errs = spec.errors()
    if errs:
        raise ConfigError(errs)
    jobs = [(a, g, tag, spec.mode, args.blocks, args.runs, args.seed, args.truncation)
            for tag in spec.schedules for g in spec.gamma_list for a in spec.alphas()]
    cells = parallel_map(_sweep_job, jobs, args.workers)
    rows, ok = [], True
    for cell in cells:
        for sc in spec.scenarios:
            row = {"alpha": cell["alpha"], "gamma": cell["gamma"], "schedule": cell["schedule"], "scenario": sc}
            if "analytic" in cell:
                an = cell["analytic"]
                ok &= bool(an["consistent"])
                row.update(U_s=an[f"U_s_{sc}"], U_h=an[f"U_h_{sc}"], R_s=an["R_s"], r_total=an["r_total"],
                           consistent=an["consistent"])
            if "sim" in cell:
                s = cell["sim"]
                row.update(sim_U_s=s[f"U_s_{sc}"], sim_U_s_se=s[f"U_s_{sc}_se"], sim_U_h=s[f"U_h_{sc}"],
                           sim_U_h_se=s[f"U_h_{sc}_se"])
            rows.append(row)
    header = ["alpha", "gamma", "schedule", "scenario", "U_s", "U_h", "R_s", "r_total", "consistent",
              "sim_U_s", "sim_U_s_se", "sim_U_h", "sim_U_h_se"]
    emit(args, to_json(rows) if args.format == "json" else rows_to_csv(header, rows))
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--format", choices=("csv", "json"), default=None)
    common.add_argument("--truncation", type=positive_int, default=None,
                        help="state-space bound on i; default 200 for stationary, automatic elsewhere")
    common.add_argument("--workers", type=positive_int, default=default_workers(),
                        help="worker processes (default $ETHSM_WORKERS or 1)")

    def model_flags(p, schedule=True):
        p.add_argument("--alpha", type=float)
        p.add_argument("--gamma", type=float)
        if schedule:
            p.add_argument("--schedule", help="ethereum | bitcoin | fixed:<v>[:<maxd>|:unbounded]")

    parser = argparse.ArgumentParser(prog="ethsm", description="Selfish mining with uncle and nephew rewards.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stationary", parents=[common], help="closed-form and numeric stationary distributions")
    model_flags(p, schedule=False)
    p.add_argument("--tolerance", type=float, default=1e-10)
    p.add_argument("--min-prob", type=float, default=0.0, help="omit states below this probability")
    p.set_defaults(func=cmd_stationary, fmt_default="csv")

    p = sub.add_parser("revenue", parents=[common], help="revenue rates, U_s, U_h and R_s for one configuration")
    model_flags(p)
    p.add_argument("--scenario", default="1", help="1 (regular rate one) or 2 (regular plus uncle rate one)")
    p.set_defaults(func=cmd_revenue, fmt_default="csv")

    p = sub.add_parser("threshold", parents=[common], help="profitability thresholds alpha*")
    p.add_argument("--gammas", type=float_list, default=[0.5])
    p.add_argument("--schedules", type=str_list, default=["ethereum"])
    p.add_argument("--scenarios", type=scenario_list, default=[1, 2])
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--no-baseline", action="store_true", help="skip the static-reward baseline rows")
    p.set_defaults(func=cmd_threshold, fmt_default="csv")

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo simulation with analytic comparison")
    model_flags(p)
    p.add_argument("--blocks", type=positive_int, default=100_000)
    p.add_argument("--runs", type=positive_int, default=10)
    p.add_argument("--miners", type=positive_int, default=None, help="simulate n discrete miners")
    p.add_argument("--max-uncles", type=positive_int, default=None, help="cap on uncle references per block")
    p.add_argument("--trace", help="write a per-event trace of one run to this file")
    p.set_defaults(func=cmd_simulate, fmt_default="json")

    p = sub.add_parser("table2", parents=[common], help="honest uncle-distance distribution")
    p.add_argument("--alphas", type=float_list, default=[0.3, 0.45])
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--schedule", default=None)
    p.add_argument("--blocks", type=positive_int, default=100_000)
    p.add_argument("--runs", type=positive_int, default=10)
    p.add_argument("--analytic-only", action="store_true")
    p.set_defaults(func=cmd_table2, fmt_default="csv", alpha=None)

    p = sub.add_parser("sweep", parents=[common], help="grid sweep over alpha, gamma, schedules and scenarios")
    p.add_argument("--alpha-range", type=float, nargs=3, metavar=("START", "STOP", "STEP"),
                   default=[0.05, 0.45, 0.05])
    p.add_argument("--gammas", type=float_list, default=[0.5])
    p.add_argument("--schedules", type=str_list, default=["ethereum"])
    p.add_argument("--scenarios", type=scenario_list, default=[1, 2])
    p.add_argument("--mode", choices=("analytic", "simulate", "both"), default="analytic")
    p.add_argument("--blocks", type=positive_int, default=100_000)
    p.add_argument("--runs", type=positive_int, default=10)
    p.set_defaults(func=cmd_sweep, fmt_default="csv")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.format is None:
        args.format = args.fmt_default
    try:
        return args.func(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except rewards.ModelConsistencyError as exc:
        print(f"consistency failure: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except markov.NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
