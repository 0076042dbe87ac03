import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ethsm.markov import EventKind, stationary_closed_form, transition_rates
from ethsm.model import MiningConfig, RewardSchedule
from ethsm.revenue import eyal_sirer_share, resolve_truncation
from ethsm.rewards import (
    ModelConsistencyError,
    RevenueBreakdown,
    aggregate_revenue,
    attribute_transition,
    breakdown_csv,
    honest_uncle_distance_distribution,
    revenue_audit,
    revenue_by_attribution,
    static_rates_rational,
)

from oracles import reachable_states

ETH = RewardSchedule.ethereum()
SCHEDULES = [ETH, RewardSchedule.fixed(0.5), RewardSchedule.fixed(0.875, None), RewardSchedule.bitcoin()]
configs = st.builds(MiningConfig, st.floats(0.01, 0.42), st.floats(0, 1))


def test_case1_honest_from_origin():
    at = attribute_transition((0, 0), EventKind.HONEST_BLOCK, MiningConfig(0.3, 0.5), ETH)
    assert at.p_regular == 1 and at.static_to_honest == 1
    assert at.p_uncle == 0 and at.uncle_to_honest == at.nephew_to_pool == at.nephew_to_honest == 0


def test_case2_pool_from_origin():
    a, g = 0.3, 0.4
    b = 1 - a
    at = attribute_transition((0, 0), EventKind.POOL_BLOCK, MiningConfig(a, g), ETH)
    assert at.p_regular == pytest.approx(a + a * b + b * b * g)
    assert at.p_uncle == pytest.approx(b * b * (1 - g))
    assert at.uncle_distance == 1
    assert at.uncle_to_pool == pytest.approx(b * b * (1 - g) * 7 / 8)
    assert at.nephew_to_honest == pytest.approx(b * b * (1 - g) / 32)
    assert at.p_regular + at.p_uncle == pytest.approx(1.0)


@pytest.mark.parametrize("state", [(1, 0), (1, 1), (2, 0), (5, 3), (9, 1)])
def test_pool_blocks_in_lead_are_regular(state):
    at = attribute_transition(state, EventKind.POOL_BLOCK, MiningConfig(0.35, 0.5), ETH)
    assert at.p_regular == 1 and at.static_to_pool == 1 and at.p_uncle == 0


def test_case4_honest_from_one_lead():
    a, g = 0.4, 0.5
    b = 1 - a
    at = attribute_transition((1, 0), EventKind.HONEST_BLOCK, MiningConfig(a, g), ETH)
    assert at.p_regular == pytest.approx(b * (1 - g))
    assert at.p_uncle == pytest.approx(a + b * g)
    assert at.uncle_distance == 1
    assert at.nephew_to_pool == pytest.approx(a / 32)
    assert at.nephew_to_honest == pytest.approx(b * g / 32)


def test_case7_on_prefix_reset():
    at = attribute_transition((4, 1), EventKind.HONEST_ON_PREFIX, MiningConfig(0.4, 0.5), ETH)
    assert at.p_uncle == 1 and at.uncle_distance == 3
    assert at.uncle_to_honest == pytest.approx(5 / 8)
    # honest nephew with probability 0.36 * (1 + 0.4 * 0.6 * 0.5)
    assert at.nephew_to_honest == pytest.approx(0.4032 / 32)
    assert at.nephew_to_pool == pytest.approx(0.5968 / 32)


def test_off_prefix_is_plain_stale():
    at = attribute_transition((5, 2), EventKind.HONEST_OFF_PREFIX, MiningConfig(0.4, 0.5), ETH)
    assert at.p_regular == 0 and at.p_uncle == 0 and at.p_stale == 1


def test_out_of_range_uncles_earn_nothing():
    at = attribute_transition((9, 0), EventKind.HONEST_BLOCK, MiningConfig(0.4, 0.5), ETH)
    assert at.p_uncle == 0 and at.uncle_to_honest == 0 and at.nephew_to_pool == 0
    at = attribute_transition((9, 0), EventKind.HONEST_BLOCK, MiningConfig(0.4, 0.5), RewardSchedule.fixed(0.5, None))
    assert at.p_uncle == 1 and at.uncle_distance == 9 and at.uncle_to_honest == 0.5


def test_invalid_transition_rejected():
    with pytest.raises(ValueError):
        attribute_transition((3, 0), EventKind.HONEST_ON_PREFIX, MiningConfig(0.3, 0.5), ETH)
    with pytest.raises(ValueError):
        attribute_transition((2, 1), EventKind.POOL_BLOCK, MiningConfig(0.3, 0.5), ETH)


@given(configs, st.sampled_from(reachable_states(10)), st.sampled_from(SCHEDULES))
def test_attribution_probabilities(cfg, state, sched):
    for tr in transition_rates(state, cfg):
        at = attribute_transition(state, tr.event_kind, cfg, sched)
        assert 0 <= at.p_regular <= 1 and 0 <= at.p_uncle <= 1
        assert at.p_regular + at.p_uncle <= 1 + 1e-12
        assert at.static_to_pool + at.static_to_honest == pytest.approx(at.p_regular)
        if tr.event_kind == EventKind.POOL_BLOCK:
            assert at.static_to_honest == 0 and at.uncle_to_honest == 0
            if at.p_uncle:
                assert at.uncle_distance == 1
        else:
            assert at.static_to_pool == 0 and at.uncle_to_pool == 0
        if at.p_uncle:
            kn = float(sched.nephew_reward(at.uncle_distance))
            assert at.nephew_to_pool + at.nephew_to_honest == pytest.approx(at.p_uncle * kn)
            assert 0 <= at.nephew_to_pool and 0 <= at.nephew_to_honest
        else:
            assert at.uncle_to_pool == at.uncle_to_honest == at.nephew_to_pool == at.nephew_to_honest == 0


@given(configs, st.sampled_from(SCHEDULES))
def test_vectorised_path_matches_scalar_loop(cfg, sched):
    dist = stationary_closed_form(cfg, 30)
    tot = dict.fromkeys(["sp", "sh", "up", "uh", "np", "nh", "uc"], 0.0)
    for s, p in dist.items():
        for tr in transition_rates(s, cfg):
            at = attribute_transition(s, tr.event_kind, cfg, sched)
            w = p * tr.rate
            tot["sp"] += w * at.static_to_pool
            tot["sh"] += w * at.static_to_honest
            tot["up"] += w * at.uncle_to_pool
            tot["uh"] += w * at.uncle_to_honest
            tot["np"] += w * at.nephew_to_pool
            tot["nh"] += w * at.nephew_to_honest
            tot["uc"] += w * at.p_uncle
    b = revenue_by_attribution(dist, cfg, sched)
    got = [b.r_b_s, b.r_b_h, b.r_u_s, b.r_u_h, b.r_n_s, b.r_n_h, b.uncle_count_rate]
    assert got == pytest.approx(list(tot.values()), abs=1e-13)


def test_frozen_rates_at_point_four():
    cfg = MiningConfig(0.4, 0.5)
    b = aggregate_revenue(stationary_closed_form(cfg, 200), cfg, ETH)
    assert b.r_b_s == pytest.approx(0.1808 / 0.488, abs=1e-12)
    assert b.r_u_s == pytest.approx(0.4 * 0.36 * 0.5 * 0.875 * 0.2 / 0.488, abs=1e-12)
    assert b.r_u_s == pytest.approx(0.025820, abs=1e-6)
    # values frozen from an independent evaluation of the corrected closed formulas
    assert b.r_u_h == pytest.approx(0.1328892693786683, abs=1e-10)
    assert b.r_n_s == pytest.approx(0.0032336713053001424, abs=1e-10)
    assert b.r_n_h == pytest.approx(0.0035231916779016404, abs=1e-10)
    assert b.uncle_count_rate == pytest.approx(0.21621961546245705, abs=1e-10)


@given(configs, st.sampled_from(SCHEDULES))
def test_two_paths_agree(cfg, sched):
    dist = stationary_closed_form(cfg, resolve_truncation(cfg, None))
    audit = revenue_audit(dist, cfg, sched)
    assert audit.consistent, audit.discrepancies()


@given(configs)
def test_static_rates_match_rational_forms(cfg):
    dist = stationary_closed_form(cfg, resolve_truncation(cfg, None))
    b = revenue_by_attribution(dist, cfg, ETH)
    rs, rh = static_rates_rational(cfg.alpha, cfg.gamma)
    assert b.r_b_s == pytest.approx(rs, abs=1e-10)
    assert b.r_b_h == pytest.approx(rh, abs=1e-10)
    assert b.r_b_s + b.r_b_h <= 1


@given(configs)
def test_static_only_share_matches_classic_formula(cfg):
    dist = stationary_closed_form(cfg, resolve_truncation(cfg, None))
    b = aggregate_revenue(dist, cfg, RewardSchedule.bitcoin())
    assert b.r_u_s == b.r_u_h == b.r_n_s == b.r_n_h == 0
    assert b.r_b_s / (b.r_b_s + b.r_b_h) == pytest.approx(eyal_sirer_share(cfg.alpha, cfg.gamma), abs=1e-10)


def test_literal_nephew_formulas_disagree():
    cfg = MiningConfig(0.45, 0.5)
    audit = revenue_audit(stationary_closed_form(cfg, 200), cfg, ETH)
    assert audit.consistent
    assert audit.literal_nephew_pool == pytest.approx(0.0012772866631647316, rel=1e-9)
    assert audit.literal_nephew_honest == pytest.approx(0.0016966834407563117, rel=1e-9)
    gap_s, gap_h = audit.literal_nephew_gap
    assert abs(gap_s) > 1e-3 and abs(gap_h) > 5e-4


def test_small_alpha_limit():
    cfg = MiningConfig(1e-6, 0.5)
    b = aggregate_revenue(stationary_closed_form(cfg, 20), cfg, ETH)
    assert b.r_b_h == pytest.approx(1.0, abs=1e-5)
    assert b.r_b_s + b.r_u_s + b.r_n_s < 1e-5


def test_consistency_failure_is_raised(monkeypatch):
    import ethsm.rewards as rw

    cfg = MiningConfig(0.3, 0.5)
    dist = stationary_closed_form(cfg, 100)
    real = rw.revenue_closed_form

    def skewed(*args):
        bd, ns, nh = real(*args)
        return RevenueBreakdown(**{**bd.__dict__, "r_u_h": bd.r_u_h + 1e-6}), ns, nh

    monkeypatch.setattr(rw, "revenue_closed_form", skewed)
    with pytest.raises(ModelConsistencyError, match="r_u_h"):
        aggregate_revenue(dist, cfg, ETH)


def test_breakdown_invariants():
    cfg = MiningConfig(0.33, 0.7)
    b = aggregate_revenue(stationary_closed_form(cfg, 200), cfg, ETH)
    assert all(v >= 0 for v in b.rates().values())
    assert b.r_total == pytest.approx(sum(b.rates().values()) - b.uncle_count_rate)


def test_honest_uncle_distances():
    for alpha, want, mean in [(0.3, (0.527, 0.295, 0.111, 0.043, 0.017, 0.007), 1.748),
                              (0.45, (0.284, 0.249, 0.171, 0.125, 0.096, 0.075), 2.726)]:
        cfg = MiningConfig(alpha, 0.5)
        h = honest_uncle_distance_distribution(stationary_closed_form(cfg, 200), cfg, ETH)
        assert np.round(h[1:], 3).tolist() == list(want)
        assert float(np.dot(np.arange(7), h)) == pytest.approx(mean, abs=1e-3)


def test_breakdown_csv():
    cfg = MiningConfig(0.4, 0.5)
    text = breakdown_csv([aggregate_revenue(stationary_closed_form(cfg, 200), cfg, ETH)])
    head, row = text.strip().splitlines()
    assert head.split(",")[:3] == ["alpha", "gamma", "schedule"] and head.endswith("r_total")
    assert row.startswith("0.4,0.5,ethereum,0.370491803")
    assert not math.isnan(float(row.split(",")[-1]))
