"""Selfish mining in proof-of-work chains with uncle and nephew rewards."""

from .markov import (
    ChainState,
    EventKind,
    NonConvergenceError,
    StationaryDistribution,
    TransitionRate,
    multisum_f,
    stationary_closed_form,
    stationary_numeric,
    transition_rates,
)
from .model import (
    ConfigError,
    MiningConfig,
    RewardSchedule,
    ethereum_uncle_reward,
    fixed_uncle_reward,
    load_config,
    save_config,
    validate_config,
)
from .revenue import (
    Scenario,
    ThresholdResult,
    absolute_revenue,
    bitcoin_baseline_threshold,
    evaluate,
    profitability_threshold,
    relative_share,
)
from .rewards import (
    ModelConsistencyError,
    RevenueBreakdown,
    RewardAttribution,
    aggregate_revenue,
    attribute_transition,
)
from .sim import SimResult, replay_step, run_simulation, verify_lemma1

__version__ = "0.1.0"
