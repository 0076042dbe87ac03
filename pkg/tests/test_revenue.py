import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ethsm.markov import stationary_closed_form
from ethsm.model import MiningConfig, RewardSchedule
from ethsm.revenue import (
    Scenario,
    absolute_revenue,
    bitcoin_baseline_threshold,
    evaluate,
    eyal_sirer_share,
    profitability_threshold,
    relative_share,
    thresholds_csv,
    total_inflation,
)
from ethsm.rewards import RevenueBreakdown

from oracles import eyal_sirer_threshold

ETH = RewardSchedule.ethereum()


def test_scenario_parse():
    assert Scenario.parse("1") is Scenario.REGULAR_RATE_ONE
    assert Scenario.parse("s2") is Scenario.REGULAR_PLUS_UNCLE_RATE_ONE
    with pytest.raises(ValueError):
        Scenario.parse("3")


def test_small_alpha_limits():
    b = evaluate(MiningConfig(1e-6, 0.5), ETH)
    us, uh = absolute_revenue(b, Scenario.REGULAR_RATE_ONE)
    assert us == pytest.approx(0, abs=1e-5) and uh == pytest.approx(1, abs=1e-5)
    assert relative_share(b) == pytest.approx(0, abs=1e-5)


def test_all_to_pool_share_is_one():
    b = RevenueBreakdown(0.4, 0.5, "x", 0.5, 0.0, 0.1, 0.0, 0.01, 0.0, 0.2)
    assert relative_share(b) == 1.0


def test_fixed_half_profitable_at_point_four():
    us, _ = absolute_revenue(evaluate(MiningConfig(0.4, 0.5), RewardSchedule.fixed(0.5)), 1)
    assert us > 0.4


def test_share_above_fair_at_point_four():
    assert 0.4 < relative_share(evaluate(MiningConfig(0.4, 0.5), ETH)) < 1


def test_static_only_absolute_equals_relative():
    b = evaluate(MiningConfig(0.3, 0.2), RewardSchedule.bitcoin())
    us, _ = absolute_revenue(b, 1)
    assert us == pytest.approx(b.r_b_s / (b.r_b_s + b.r_b_h))
    assert us == pytest.approx(relative_share(b))


@settings(max_examples=25)
@given(st.floats(0.01, 0.45), st.floats(0, 1), st.sampled_from([ETH, RewardSchedule.fixed(0.5)]))
def test_conservation_under_rescaling(alpha, gamma, sched):
    b = evaluate(MiningConfig(alpha, gamma), sched)
    for sc, den in ((1, b.r_b_s + b.r_b_h), (2, b.r_b_s + b.r_b_h + b.uncle_count_rate)):
        us, uh = absolute_revenue(b, sc)
        assert us + uh == pytest.approx(b.r_total / den, rel=1e-12)
    assert absolute_revenue(b, 2)[0] <= absolute_revenue(b, 1)[0]


def test_eyal_sirer_known_values():
    assert eyal_sirer_share(0.25, 0.5) == pytest.approx(0.25)
    assert eyal_sirer_share(1 / 3, 0.0) == pytest.approx(1 / 3)


def test_inflation_at_one_tail_fixed_seven_eighths():
    b = evaluate(MiningConfig(0.45, 0.5), RewardSchedule.fixed(0.875, None))
    assert total_inflation(b) == pytest.approx(1.3475797, abs=1e-6)


@pytest.mark.parametrize("gamma", [0.0, 0.25, 0.5, 0.75])
def test_bitcoin_baseline_matches_classic_threshold(gamma):
    res = bitcoin_baseline_threshold(gamma, tolerance=1e-7)
    assert res.status == "crossing"
    assert res.alpha_star == pytest.approx(eyal_sirer_threshold(gamma), abs=1e-6)


def test_bitcoin_baseline_always_profitable_at_full_gamma():
    res = bitcoin_baseline_threshold(1.0)
    assert res.status == "always_profitable" and res.alpha_star == 0.0


def test_threshold_bracket_certificate():
    res = profitability_threshold(0.5, ETH, 1, tolerance=1e-5)
    assert res.bracket_width <= 1e-5
    lo = res.alpha_star - res.bracket_width
    hi = res.alpha_star + res.bracket_width
    assert absolute_revenue(evaluate(MiningConfig(hi, 0.5), ETH), 1)[0] >= hi
    assert absolute_revenue(evaluate(MiningConfig(lo, 0.5), ETH), 1)[0] < lo


def test_scenario_one_equals_baseline_without_uncle_rewards():
    a = profitability_threshold(0.3, RewardSchedule.bitcoin(), 1, tolerance=1e-7)
    b = bitcoin_baseline_threshold(0.3, tolerance=1e-7)
    assert a.alpha_star == b.alpha_star


def test_scenario_two_not_below_scenario_one():
    for sched in (ETH, RewardSchedule.fixed(0.5)):
        s1 = profitability_threshold(0.5, sched, 1, tolerance=1e-4)
        s2 = profitability_threshold(0.5, sched, 2, tolerance=1e-4)
        assert s2.alpha_star >= s1.alpha_star


def test_threshold_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        profitability_threshold(0.5, ETH, 1, tolerance=0)


def test_static_threshold_without_tie_advantage():
    res = profitability_threshold(0.0, RewardSchedule.bitcoin(), 1, tolerance=1e-3, truncation=200)
    assert res.status == "crossing" and res.alpha_star == pytest.approx(1 / 3, abs=1e-3)


def test_thresholds_csv():
    res = bitcoin_baseline_threshold(0.5, tolerance=1e-4)
    text = thresholds_csv([res])
    head, row = text.strip().splitlines()
    assert head == "gamma,scenario,schedule,alpha_star,bracket_width,status"
    assert row.startswith("0.5,1,bitcoin,")
    assert float(row.split(",")[3]) == pytest.approx(0.25, abs=1e-4)
