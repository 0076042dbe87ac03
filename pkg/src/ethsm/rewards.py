"""Expected rewards of each newly mined block and the aggregate revenue rates.

Every transition of the chain creates exactly one block (the "target").  Its
eventual fate depends only on the state it was mined in and on the next few
events, so its expected static, uncle and nephew rewards can be written per
transition.  Summing pi * rate * attribution over the chain gives the revenue
rates; the same rates also have closed formulas, and both are computed so they
can audit each other.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .markov import (
    ChainState,
    EventKind,
    StationaryDistribution,
    state_arrays,
    state_index,
    transition_rates,
    transition_table,
)
from .model import MiningConfig, RewardSchedule

CONSISTENCY_TOLERANCE = 1e-8
RATE_FIELDS = ("r_b_s", "r_b_h", "r_u_s", "r_u_h", "r_n_s", "r_n_h", "uncle_count_rate")


class ModelConsistencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class RewardAttribution:
    p_regular: float = 0.0
    p_uncle: float = 0.0
    uncle_distance: int | None = None
    static_to_pool: float = 0.0
    static_to_honest: float = 0.0
    uncle_to_pool: float = 0.0
    uncle_to_honest: float = 0.0
    nephew_to_pool: float = 0.0
    nephew_to_honest: float = 0.0

    @property
    def p_stale(self) -> float:
        return 1.0 - self.p_regular - self.p_uncle


def honest_nephew_probability(lead: int, config: MiningConfig) -> float:
    """Probability that the block referencing an honest uncle orphaned at ``lead`` is honest."""
    a, b, g = config.alpha, config.beta, config.gamma
    return b ** (lead - 1) * (1 + a * b * (1 - g))


def attribute_transition(state: tuple[int, int], event_kind: EventKind, config: MiningConfig,
                         schedule: RewardSchedule) -> RewardAttribution:
    """Attribution of the block created by ``event_kind`` in ``state``."""
    s = ChainState(*state)
    event_kind = EventKind(event_kind)
    if not any(tr.event_kind == event_kind for tr in transition_rates(s, config)) and not _zero_rate_ok(s, event_kind):
        raise ValueError(f"invalid transition: {event_kind.name} from {tuple(s)}")
    a, b, g = config.alpha, config.beta, config.gamma
    ku = lambda d: float(schedule.uncle_reward(d))  # noqa: E731
    kn = lambda d: float(schedule.nephew_reward(d))  # noqa: E731
    pool = event_kind == EventKind.POOL_BLOCK

    if pool:
        if s == (0, 0):
            # the pool's lone block survives unless two honest blocks out-race it off its branch
            p_unc = b * b * (1 - g) if schedule.references(1) else 0.0
            p_reg = a + a * b + b * b * g
            return RewardAttribution(p_reg, p_unc, 1 if p_unc else None, static_to_pool=p_reg,
                                     uncle_to_pool=p_unc * ku(1), nephew_to_honest=p_unc * kn(1))
        return RewardAttribution(1.0, 0.0, None, static_to_pool=1.0)

    if s == (0, 0) or s == (1, 1):
        return RewardAttribution(1.0, 0.0, None, static_to_honest=1.0)
    if s == (1, 0):
        p_reg = b * (1 - g)
        if not schedule.references(1):
            return RewardAttribution(p_reg, 0.0, None, static_to_honest=p_reg)
        return RewardAttribution(p_reg, a + b * g, 1, static_to_honest=p_reg, uncle_to_honest=(a + b * g) * ku(1),
                                 nephew_to_pool=a * kn(1), nephew_to_honest=b * g * kn(1))
    if event_kind == EventKind.HONEST_OFF_PREFIX:
        return RewardAttribution()
    lead = s.lead
    if not schedule.references(lead):
        return RewardAttribution()
    h = honest_nephew_probability(lead, config)
    return RewardAttribution(0.0, 1.0, lead, uncle_to_honest=ku(lead), nephew_to_pool=(1 - h) * kn(lead),
                             nephew_to_honest=h * kn(lead))


def _zero_rate_ok(s: ChainState, kind: EventKind) -> bool:
    # branches of the rule set that exist structurally but have rate 0 at gamma in {0, 1}
    if s.l_s < 2 or s.l_h < 1:
        return False
    return kind in (EventKind.HONEST_ON_PREFIX, EventKind.HONEST_OFF_PREFIX)


# -- aggregate rates ----------------------------------------------------------

@dataclass(frozen=True)
class RevenueBreakdown:
    alpha: float
    gamma: float
    schedule: str
    r_b_s: float
    r_b_h: float
    r_u_s: float
    r_u_h: float
    r_n_s: float
    r_n_h: float
    uncle_count_rate: float
    error_bound: float = 0.0  # truncation contribution: omitted mass times the largest reward

    @property
    def r_total(self) -> float:
        return self.r_b_s + self.r_b_h + self.r_u_s + self.r_u_h + self.r_n_s + self.r_n_h

    @property
    def pool_total(self) -> float:
        return self.r_b_s + self.r_u_s + self.r_n_s

    @property
    def honest_total(self) -> float:
        return self.r_b_h + self.r_u_h + self.r_n_h

    def rates(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in RATE_FIELDS}

    def as_row(self) -> dict[str, object]:
        row = asdict(self)
        row["r_total"] = self.r_total
        return row


@dataclass(frozen=True)
class RevenueAudit:
    """Both computations side by side, plus the literal nephew formulas for the record."""

    attribution: RevenueBreakdown
    closed: RevenueBreakdown
    literal_nephew_pool: float
    literal_nephew_honest: float
    max_discrepancy: float
    tolerance: float = CONSISTENCY_TOLERANCE

    @property
    def consistent(self) -> bool:
        return self.max_discrepancy <= self.tolerance

    @property
    def literal_nephew_gap(self) -> tuple[float, float]:
        return (self.literal_nephew_pool - self.attribution.r_n_s, self.literal_nephew_honest - self.attribution.r_n_h)

    def discrepancies(self) -> dict[str, float]:
        return {k: abs(getattr(self.attribution, k) - getattr(self.closed, k)) for k in RATE_FIELDS}


def _reward_arrays(schedule: RewardSchedule, upto: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uncle reward, nephew reward and referencing indicator indexed by distance 0..upto."""
    d = range(upto + 1)
    ku = np.array([float(schedule.uncle_reward(x)) for x in d])
    kn = np.array([float(schedule.nephew_reward(x)) for x in d])
    ref = np.array([1.0 if schedule.references(x) else 0.0 for x in d])
    return ku, kn, ref


def _max_reward(schedule: RewardSchedule, upto: int) -> float:
    ku, kn, _ = _reward_arrays(schedule, min(upto, 64))
    return max(float(schedule.static_reward), float(ku.max()) + float(kn.max()))


def revenue_by_attribution(dist: StationaryDistribution, config: MiningConfig,
                           schedule: RewardSchedule) -> RevenueBreakdown:
    """Sum of pi(s) * rate * attribution over every transition out of the retained states."""
    a, b, g = config.alpha, config.beta, config.gamma
    N = dist.bound
    tt = transition_table(N, config)
    I, J = state_arrays(N)
    si, sj = I[tt.src], J[tt.src]
    w = dist.pi[tt.src] * tt.rate
    ku, kn, ref = _reward_arrays(schedule, N)
    pool = tt.kind == EventKind.POOL_BLOCK
    at00, at10, at11 = tt.src == 0, tt.src == 1, tt.src == 2
    big = si >= 2
    lead = np.where(big, si - sj, 0)

    sp = np.where(pool & at00, a + a * b + b * b * g, np.where(pool, 1.0, 0.0))
    sh = np.where(~pool & (at00 | at11), 1.0, np.where(~pool & at10, b * (1 - g), 0.0))
    uncle2 = pool & at00
    unc_pool = np.where(uncle2, b * b * (1 - g) * ref[1], 0.0)
    deep = ~pool & big & (tt.kind != EventKind.HONEST_OFF_PREFIX)
    unc_h_prob = np.where(~pool & at10, (a + b * g) * ref[1], np.where(deep, ref[lead], 0.0))
    dist_h = np.where(at10, 1, lead)
    hprob = np.where(deep, b ** np.maximum(lead - 1, 0) * (1 + a * b * (1 - g)), 0.0)
    neph_pool = np.where(~pool & at10, a * kn[1], 0.0) + np.where(deep, (1 - hprob) * kn[lead], 0.0)
    neph_honest = (unc_pool * kn[1] + np.where(~pool & at10, b * g * kn[1], 0.0)
                   + np.where(deep, hprob * kn[lead], 0.0))
    dot = lambda x: float(np.dot(w, x))  # noqa: E731
    return RevenueBreakdown(
        config.alpha, config.gamma, schedule.tag,
        r_b_s=dot(sp), r_b_h=dot(sh),
        r_u_s=dot(unc_pool * ku[1]), r_u_h=dot(unc_h_prob * ku[dist_h]),
        r_n_s=dot(neph_pool), r_n_h=dot(neph_honest),
        uncle_count_rate=dot(unc_pool + unc_h_prob),
        error_bound=dist.tail_mass_bound * _max_reward(schedule, N),
    )


def lead_masses(dist: StationaryDistribution) -> tuple[np.ndarray, np.ndarray]:
    """(pi(L, 0), sum_{j>=1} pi(L + j, j)) indexed by lead L = 0..bound."""
    I, J = dist.states
    N = dist.bound
    lead = I - J
    big = I >= 2
    zero = np.zeros(N + 1)
    m0 = zero.copy()
    m0[I[big & (J == 0)]] = dist.pi[big & (J == 0)]
    sel = big & (J >= 1)
    m1 = np.bincount(lead[sel], weights=dist.pi[sel], minlength=N + 1)
    return m0, m1


def revenue_closed_form(dist: StationaryDistribution, config: MiningConfig,
                        schedule: RewardSchedule) -> tuple[RevenueBreakdown, float, float]:
    """Closed revenue formulas with the infinite sums cut at the distribution's bound.

    The nephew rates use the honest-nephew probability beta^(L-1)(1 + a b (1-g))
    for an honest uncle orphaned at lead L and include the j = 0 terms.  The two
    trailing floats are the nephew rates from the literal formulas
        ns = a b Kn(1) pi10 + sum b^(i-1) g (a - a b^2 (1-g)) Kn(i) pi(i+j, j)
        nh = a b^2 (1-g) Kn(1) pi00 + b^2 g Kn(1) pi10 + sum b^i g (1 + a b (1-g)) Kn(i) pi(i+j, j)
    which are kept only for comparison.
    """
    a, b, g = config.alpha, config.beta, config.gamma
    N = dist.bound
    p00, p10, p11 = dist[(0, 0)], dist[(1, 0)], dist[(1, 1)]
    ku, kn, ref = _reward_arrays(schedule, N)
    m0, m1 = lead_masses(dist)
    L = np.arange(N + 1)
    tailL = L >= 2
    hprob = np.where(tailL, b ** np.maximum(L - 1, 0) * (1 + a * b * (1 - g)), 0.0)
    orphan = np.where(tailL, b * m0 + b * g * m1, 0.0)  # honest uncle creation rate at each lead

    r_b_s = a - a * b * b * (1 - g) * p00
    r_b_h = b * (p00 + p11) + b * b * (1 - g) * p10
    r_u_s = a * b * b * (1 - g) * ku[1] * p00
    r_u_h = (a * b + b * b * g) * ku[1] * p10 + float(np.dot(orphan, ku))
    r_n_s = a * b * kn[1] * p10 + float(np.dot(orphan * (1 - hprob), kn))
    r_n_h = a * b * b * (1 - g) * kn[1] * p00 + b * b * g * kn[1] * p10 + float(np.dot(orphan * hprob, kn))
    uncles = a * b * b * (1 - g) * ref[1] * p00 + (a * b + b * b * g) * ref[1] * p10 + float(np.dot(orphan, ref))

    lit_w = np.where(tailL, m1, 0.0)
    lit_ns = a * b * kn[1] * p10 + float(np.sum(b ** np.maximum(L - 1, 0) * g * (a - a * b * b * (1 - g)) * kn * lit_w))
    lit_nh = (a * b * b * (1 - g) * kn[1] * p00 + b * b * g * kn[1] * p10
              + float(np.sum(b**L * g * (1 + a * b * (1 - g)) * kn * lit_w)))
    bd = RevenueBreakdown(config.alpha, config.gamma, schedule.tag, r_b_s, r_b_h, r_u_s, r_u_h, r_n_s, r_n_h,
                          uncles, dist.tail_mass_bound * _max_reward(schedule, N))
    return bd, lit_ns, lit_nh


def static_rates_rational(alpha: float, gamma: float) -> tuple[float, float]:
    """Untruncated static-reward rates as rational functions of alpha and gamma."""
    a, g = alpha, gamma
    den = 2 * a**3 - 4 * a**2 + 1
    rs = (a * (1 - a) ** 2 * (4 * a + g * (1 - 2 * a)) - a**3) / den
    rh = (1 - 2 * a) * (1 - a) * (a * (1 - a) * (2 - g) + 1) / den
    return rs, rh


def revenue_audit(dist: StationaryDistribution, config: MiningConfig, schedule: RewardSchedule,
                  tolerance: float = CONSISTENCY_TOLERANCE) -> RevenueAudit:
    by_attr = revenue_by_attribution(dist, config, schedule)
    closed, ns, nh = revenue_closed_form(dist, config, schedule)
    gap = max(abs(getattr(by_attr, k) - getattr(closed, k)) for k in RATE_FIELDS)
    return RevenueAudit(by_attr, closed, ns, nh, gap, tolerance)


def aggregate_revenue(dist: StationaryDistribution, config: MiningConfig, schedule: RewardSchedule,
                      check: bool = True) -> RevenueBreakdown:
    """Revenue rates from per-transition attribution, cross-checked against the closed formulas."""
    audit = revenue_audit(dist, config, schedule)
    if check and not audit.consistent:
        worst = max(audit.discrepancies().items(), key=lambda kv: kv[1])
        raise ModelConsistencyError(
            f"attribution and closed formulas disagree at alpha={config.alpha}, gamma={config.gamma}: "
            f"{worst[0]} differs by {worst[1]:.3e} > {audit.tolerance:.1e}"
        )
    return audit.attribution


def honest_uncle_distance_distribution(dist: StationaryDistribution, config: MiningConfig,
                                       schedule: RewardSchedule) -> np.ndarray:
    """Share of referenced honest uncles at each distance 1..max_reference_distance (entry 0 unused)."""
    a, b, g = config.alpha, config.beta, config.gamma
    upto = schedule.max_reference_distance or dist.bound
    m0, m1 = lead_masses(dist)
    h = np.zeros(upto + 1)
    h[1] = (a * b + b * b * g) * dist[(1, 0)]
    for d in range(2, min(upto, dist.bound) + 1):
        h[d] = b * m0[d] + b * g * m1[d]
    total = h.sum()
    return h / total if total > 0 else h


def breakdown_csv(rows: list[RevenueBreakdown]) -> str:
    buf = io.StringIO()
    names = [f.name for f in fields(RevenueBreakdown) if f.name != "error_bound"] + ["r_total"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for r in rows:
        d = r.as_row()
        w.writerow([_fmt(d[n]) for n in names])
    return buf.getvalue()


def _fmt(v: object) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.9g}"
    return str(v)
