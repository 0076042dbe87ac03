"""Mining parameters and reward schedules.

Rewards are expressed in units of the static block reward (K_s = 1) and kept
as exact fractions; callers convert to float at computation boundaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any

STATIC_REWARD = Fraction(1)
ETHEREUM_NEPHEW_REWARD = Fraction(1, 32)
ETHEREUM_MAX_DISTANCE = 6

UNCLE_MODES = ("ethereum", "fixed", "none")


class ConfigError(ValueError):
    """Raised with the full list of violated constraints."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class MiningConfig:
    alpha: float
    gamma: float

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha

    def errors(self) -> list[str]:
        out = []
        if not (0.0 < self.alpha < 1.0):
            out.append(f"alpha out of range: {self.alpha!r} not in (0, 1)")
        if not (0.0 <= self.gamma <= 1.0):
            out.append(f"gamma out of range: {self.gamma!r} not in [0, 1]")
        return out

    def require_analytic(self) -> None:
        """The chain is positive recurrent only for alpha < 1/2."""
        errs = self.errors()
        if not errs and self.alpha >= 0.5:
            errs.append(f"alpha out of range for stationary analysis: {self.alpha!r} >= 0.5")
        if errs:
            raise ConfigError(errs)


def ethereum_uncle_reward(distance: int) -> Fraction:
    if 1 <= distance <= ETHEREUM_MAX_DISTANCE:
        return Fraction(8 - distance, 8)
    return Fraction(0)


def fixed_uncle_reward(
    value: Fraction | float, distance: int, max_reference_distance: int | None = ETHEREUM_MAX_DISTANCE
) -> Fraction:
    value = Fraction(value).limit_denominator(1 << 20)
    if distance < 1:
        return Fraction(0)
    if max_reference_distance is not None and distance > max_reference_distance:
        return Fraction(0)
    return value


@dataclass(frozen=True)
class RewardSchedule:
    """Static, uncle and nephew rewards as functions of the reference distance.

    ``max_reference_distance=None`` means uncles may be referenced at any
    distance (the "regardless of the distance" fixed schedules).
    """

    uncle_mode: str = "ethereum"
    fixed_uncle_value: Fraction = Fraction(0)
    nephew_value: Fraction = ETHEREUM_NEPHEW_REWARD
    max_reference_distance: int | None = ETHEREUM_MAX_DISTANCE
    static_reward: Fraction = STATIC_REWARD

    def __post_init__(self):
        # normalise float inputs to exact fractions
        for name in ("fixed_uncle_value", "nephew_value", "static_reward"):
            v = getattr(self, name)
            if not isinstance(v, Fraction):
                object.__setattr__(self, name, Fraction(v).limit_denominator(1 << 20))
        errs = self.errors()
        if errs:
            raise ConfigError(errs)

    @classmethod
    def ethereum(cls, max_reference_distance: int | None = ETHEREUM_MAX_DISTANCE) -> RewardSchedule:
        return cls("ethereum", Fraction(0), ETHEREUM_NEPHEW_REWARD, max_reference_distance)

    @classmethod
    def fixed(
        cls,
        value: Fraction | float | str,
        max_reference_distance: int | None = ETHEREUM_MAX_DISTANCE,
        nephew_value: Fraction | float = ETHEREUM_NEPHEW_REWARD,
    ) -> RewardSchedule:
        return cls("fixed", Fraction(value), Fraction(nephew_value), max_reference_distance)

    @classmethod
    def bitcoin(cls, max_reference_distance: int | None = ETHEREUM_MAX_DISTANCE) -> RewardSchedule:
        """Static reward only. Uncles still exist in the tree but earn nothing."""
        return cls("none", Fraction(0), Fraction(0), max_reference_distance)

    @classmethod
    def from_tag(cls, tag: str) -> RewardSchedule:
        """Parse ``ethereum``, ``bitcoin``, ``fixed:4/8`` or ``fixed:7/8:unbounded``."""
        parts = tag.strip().lower().split(":")
        kind = parts[0]
        max_d: int | None = ETHEREUM_MAX_DISTANCE
        rest = parts[1:]
        if kind == "fixed":
            if not rest:
                raise ConfigError([f"fixed schedule needs a value: {tag!r}"])
            value, rest = rest[0], rest[1:]
        if rest:
            max_d = None if rest[0] in ("unbounded", "inf", "none") else int(rest[0])
        if kind == "ethereum":
            return cls.ethereum(max_d)
        if kind in ("bitcoin", "none"):
            return cls.bitcoin(max_d)
        if kind == "fixed":
            return cls.fixed(Fraction(value), max_d)
        raise ConfigError([f"unknown schedule tag {tag!r}"])

    @property
    def tag(self) -> str:
        if self.uncle_mode == "ethereum":
            base = "ethereum"
        elif self.uncle_mode == "none" and self.nephew_value == 0:
            base = "bitcoin"
        elif self.uncle_mode == "fixed":
            base = f"fixed:{self.fixed_uncle_value}"
        else:
            base = self.uncle_mode
        if self.max_reference_distance != ETHEREUM_MAX_DISTANCE:
            base += ":" + ("unbounded" if self.max_reference_distance is None else str(self.max_reference_distance))
        return base

    def references(self, distance: int) -> bool:
        """Whether an uncle at this distance can be referenced at all."""
        if distance < 1:
            return False
        return self.max_reference_distance is None or distance <= self.max_reference_distance

    def uncle_reward(self, distance: int) -> Fraction:
        if not self.references(distance):
            return Fraction(0)
        if self.uncle_mode == "ethereum":
            return ethereum_uncle_reward(distance)
        if self.uncle_mode == "fixed":
            return fixed_uncle_reward(self.fixed_uncle_value, distance, self.max_reference_distance)
        return Fraction(0)

    def nephew_reward(self, distance: int) -> Fraction:
        return self.nephew_value if self.references(distance) else Fraction(0)

    def errors(self) -> list[str]:
        out = []
        if self.uncle_mode not in UNCLE_MODES:
            out.append(f"uncle_reward_mode must be one of {UNCLE_MODES}, got {self.uncle_mode!r}")
        if self.static_reward != 1:
            out.append("static reward must be normalised to 1")
        if self.fixed_uncle_value < 0 or self.nephew_value < 0:
            out.append("negative rewards are not allowed")
        if self.fixed_uncle_value > self.static_reward:
            out.append("uncle reward exceeds static reward")
        if self.nephew_value > self.static_reward:
            out.append("nephew reward exceeds static reward")
        if self.max_reference_distance is not None and self.max_reference_distance < 1:
            out.append("max_reference_distance must be a positive integer")
        return out

    def uncle_table(self, upto: int) -> list[float]:
        """Float uncle rewards indexed by distance, entry 0 unused."""
        return [0.0] + [float(self.uncle_reward(d)) for d in range(1, upto + 1)]

    def nephew_table(self, upto: int) -> list[float]:
        return [0.0] + [float(self.nephew_reward(d)) for d in range(1, upto + 1)]


def validate_config(config: MiningConfig, schedule: RewardSchedule) -> tuple[MiningConfig, RewardSchedule]:
    errs = config.errors() + schedule.errors()
    if errs:
        raise ConfigError(errs)
    return config, schedule


# -- configuration file -----------------------------------------------------

def config_to_dict(config: MiningConfig, schedule: RewardSchedule) -> dict[str, Any]:
    return {
        "alpha": config.alpha,
        "gamma": config.gamma,
        "uncle_reward_mode": schedule.uncle_mode,
        "fixed_uncle_value": str(schedule.fixed_uncle_value),
        "nephew_value": str(schedule.nephew_value),
        "max_reference_distance": schedule.max_reference_distance,
    }


def config_from_dict(d: dict[str, Any]) -> tuple[MiningConfig, RewardSchedule]:
    unknown = set(d) - {
        "alpha", "gamma", "uncle_reward_mode", "fixed_uncle_value", "nephew_value", "max_reference_distance"
    }
    if unknown:
        raise ConfigError([f"unknown configuration keys: {sorted(unknown)}"])
    config = MiningConfig(float(d.get("alpha", 0.3)), float(d.get("gamma", 0.5)))
    max_d = d.get("max_reference_distance", ETHEREUM_MAX_DISTANCE)
    try:
        schedule = RewardSchedule(
            uncle_mode=d.get("uncle_reward_mode", "ethereum"),
            fixed_uncle_value=Fraction(str(d.get("fixed_uncle_value", "0"))),
            nephew_value=Fraction(str(d.get("nephew_value", "1/32"))),
            max_reference_distance=None if max_d is None else int(max_d),
        )
    except ConfigError as exc:
        raise ConfigError(config.errors() + exc.errors) from None
    return validate_config(config, schedule)


def save_config(path: str | Path, config: MiningConfig, schedule: RewardSchedule) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config, schedule), indent=2) + "\n")


def load_config(path: str | Path) -> tuple[MiningConfig, RewardSchedule]:
    return config_from_dict(json.loads(Path(path).read_text()))
