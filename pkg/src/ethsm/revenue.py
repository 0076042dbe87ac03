"""Absolute revenue, relative share and profitability thresholds."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass

import numpy as np

from .markov import DEFAULT_TRUNCATION, auto_truncation, stationary_closed_form
from .model import MiningConfig, RewardSchedule
from .rewards import RevenueBreakdown, aggregate_revenue

AUTO_TAIL = 1e-12
SCAN_LO, SCAN_HI, SCAN_STEP = 0.01, 0.499, 0.005


class Scenario(enum.IntEnum):
    """Which block rate the difficulty adjustment pins to one per time unit."""

    REGULAR_RATE_ONE = 1
    REGULAR_PLUS_UNCLE_RATE_ONE = 2

    @classmethod
    def parse(cls, value: str | int) -> Scenario:
        if isinstance(value, str):
            v = value.strip().lower()
            if v in ("1", "regular", "regular_rate_one", "s1"):
                return cls.REGULAR_RATE_ONE
            if v in ("2", "regular+uncle", "regular_plus_uncle_rate_one", "s2"):
                return cls.REGULAR_PLUS_UNCLE_RATE_ONE
            raise ValueError(f"unknown scenario {value!r}")
        return cls(value)


def resolve_truncation(config: MiningConfig, truncation: int | None) -> int:
    """``None`` picks the smallest doubling of the default window with omitted mass <= AUTO_TAIL."""
    if truncation is None:
        return auto_truncation(config, AUTO_TAIL, DEFAULT_TRUNCATION, max_bound=3200)
    return int(truncation)


def evaluate(config: MiningConfig, schedule: RewardSchedule, truncation: int | None = None,
             check: bool = True) -> RevenueBreakdown:
    dist = stationary_closed_form(config, resolve_truncation(config, truncation))
    return aggregate_revenue(dist, config, schedule, check=check)


def absolute_revenue(breakdown: RevenueBreakdown, scenario: Scenario | int = Scenario.REGULAR_RATE_ONE
                     ) -> tuple[float, float]:
    scenario = Scenario(scenario)
    den = breakdown.r_b_s + breakdown.r_b_h
    if scenario == Scenario.REGULAR_PLUS_UNCLE_RATE_ONE:
        den += breakdown.uncle_count_rate
    if den <= 0:
        raise ZeroDivisionError("no regular blocks are produced")
    return breakdown.pool_total / den, breakdown.honest_total / den


def relative_share(breakdown: RevenueBreakdown) -> float:
    return breakdown.pool_total / breakdown.r_total


def total_inflation(breakdown: RevenueBreakdown) -> float:
    """Total payout per regular block, i.e. r_total / (r_b_s + r_b_h)."""
    return breakdown.r_total / (breakdown.r_b_s + breakdown.r_b_h)


def eyal_sirer_share(alpha: float, gamma: float) -> float:
    """Relative revenue of the classic static-reward selfish-mining analysis."""
    a, g = alpha, gamma
    num = a * (1 - a) ** 2 * (4 * a + g * (1 - 2 * a)) - a**3
    return num / (1 - a * (1 + (2 - a) * a))


# -- thresholds ---------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdResult:
    alpha_star: float
    gamma: float
    scenario: Scenario
    schedule: str
    bracket_width: float
    status: str = "crossing"  # or "always_profitable" / "never_profitable"

    def as_row(self) -> dict[str, object]:
        return {
            "gamma": self.gamma,
            "scenario": int(self.scenario),
            "schedule": self.schedule,
            "alpha_star": self.alpha_star,
            "bracket_width": self.bracket_width,
            "status": self.status,
        }


def _scan_grid() -> np.ndarray:
    n = int(round((SCAN_HI - SCAN_LO) / SCAN_STEP))
    grid = SCAN_LO + SCAN_STEP * np.arange(n + 1)
    grid = grid[grid < SCAN_HI]
    return np.append(np.round(grid, 10), SCAN_HI)


def profitability_threshold(gamma: float, schedule: RewardSchedule,
                            scenario: Scenario | int = Scenario.REGULAR_RATE_ONE, tolerance: float = 1e-6,
                            truncation: int | None = None) -> ThresholdResult:
    """Smallest alpha in the scan domain with U_s(alpha) >= alpha.

    A coarse upward scan locates the first sign change of U_s - alpha, then
    bisection narrows that bracket to ``tolerance``.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    scenario = Scenario(scenario)

    def gain(a: float) -> float:
        cfg = MiningConfig(float(a), gamma)
        return absolute_revenue(evaluate(cfg, schedule, truncation), scenario)[0] - a

    grid = _scan_grid()
    prev = None
    for a in grid:
        if gain(a) >= 0:
            break
        prev = a
    else:
        return ThresholdResult(math.nan, gamma, scenario, schedule.tag, math.nan, "never_profitable")
    if prev is None:
        return ThresholdResult(0.0, gamma, scenario, schedule.tag, float(grid[0]), "always_profitable")
    lo, hi = float(prev), float(a)
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if gain(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return ThresholdResult(0.5 * (lo + hi), gamma, scenario, schedule.tag, hi - lo)


def bitcoin_baseline_threshold(gamma: float, tolerance: float = 1e-6, truncation: int | None = None
                               ) -> ThresholdResult:
    return profitability_threshold(gamma, RewardSchedule.bitcoin(), Scenario.REGULAR_RATE_ONE, tolerance, truncation)


def thresholds_csv(rows: list[ThresholdResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["gamma", "scenario", "schedule", "alpha_star", "bracket_width", "status"])
    for r in rows:
        w.writerow([f"{r.gamma:.9g}", int(r.scenario), r.schedule, f"{r.alpha_star:.9g}", f"{r.bracket_width:.9g}",
                    r.status])
    return buf.getvalue()
