"""Block-tree Monte Carlo simulation of the selfish-mining strategy.

Each event is one new block: the pool finds it with probability alpha, honest
miners with probability beta.  With zero propagation delay the honest miners
behave as one aggregate process, except during a fork of two equal-length
public branches where each honest block lands on the pool's branch with
probability gamma.  The simulator keeps the explicit tree, resolves uncle
references chain by chain, and only turns blocks into rewards once the run
has settled.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .markov import n_states, state_arrays, state_index
from .model import ConfigError, MiningConfig, RewardSchedule

POOL, HONEST = 0, 1
GENESIS = 0
TALLY_FIELDS = ("r_b_s", "r_b_h", "r_u_s", "r_u_h", "r_n_s", "r_n_h", "uncle_count_rate")
HIST_DISTANCES = 6


class SimEvent(NamedTuple):
    """One mined block.  ``on_pool_branch`` only matters while two public branches tie."""

    pool: bool
    on_pool_branch: bool = False

    @property
    def label(self) -> str:
        if self.pool:
            return "pool"
        return "honest-pool-branch" if self.on_pool_branch else "honest"


POOL_EVENT = SimEvent(True)
HONEST_EVENT = SimEvent(False, False)
HONEST_ON_POOL = SimEvent(False, True)


class BlockTree:
    """Column-oriented block store; block 0 is the genesis block."""

    def __init__(self):
        self.parent = [-1]
        self.height = [0]
        self.miner = [-1]
        self.published = bytearray(b"\x01")
        self.regular = bytearray(b"\x01")
        self.pre_i = [0]
        self.pre_j = [0]
        self.refs: list[tuple[int, ...]] = [()]
        self.nephew = [-1]  # regular block that references this one, once final

    def __len__(self) -> int:
        return len(self.parent)

    def status(self, b: int) -> str:
        if self.regular[b]:
            return "regular"
        if self.nephew[b] >= 0:
            return f"uncle({self.height[self.nephew[b]] - self.height[b]})"
        return "stale"


class StepRecord(NamedTuple):
    index: int
    event: str
    pre: tuple[int, int]
    post: tuple[int, int]
    block: int
    published: tuple[int, ...]
    references: tuple[int, ...]


class SimState:
    """The pool's view: agreed fork base, private branch and honest public branch.

    ``private`` holds the pool's blocks above the fork base, the first
    ``len(honest)`` of which are published; ``honest`` holds the honest public
    branch above the fork base.  (L_s, L_h) = (len(private), len(honest)).
    """

    def __init__(self, schedule: RewardSchedule | None = None, max_uncles_per_block: int | None = None):
        self.tree = BlockTree()
        self.fork_base = GENESIS
        self.private: list[int] = []
        self.honest: list[int] = []
        self.open: list[int] = []  # blocks that might still be referenced as uncles
        self.max_distance = (schedule or RewardSchedule.ethereum()).max_reference_distance
        self.max_uncles = max_uncles_per_block
        self.events = 0
        self.invariant_violations = 0
        self._published: list[int] = []

    @property
    def state(self) -> tuple[int, int]:
        return len(self.private), len(self.honest)

    # -- tree helpers ---------------------------------------------------------

    def _references(self, parent: int, h: int, miner: int) -> tuple[int, ...]:
        t = self.tree
        height, par = t.height, t.parent
        floor = min(height[u] for u in self.open) - 1
        anc = set()
        seen_refs: set[int] = set()
        a = parent
        while a >= 0 and height[a] >= floor:
            anc.add(a)
            if t.refs[a]:
                seen_refs.update(t.refs[a])
            a = par[a]
        maxd = self.max_distance
        out = []
        for u in self.open:
            if u in anc or u in seen_refs or par[u] not in anc:
                continue
            d = h - height[u]
            if d < 1 or (maxd is not None and d > maxd):
                continue
            if miner == HONEST and not t.published[u]:
                continue
            out.append(u)
        if self.max_uncles is not None and len(out) > self.max_uncles:
            out.sort(key=lambda u: (h - height[u], u))
            out = out[: self.max_uncles]
        return tuple(out)

    def _mine(self, parent: int, miner: int) -> int:
        t = self.tree
        b = len(t.parent)
        h = t.height[parent] + 1
        refs = self._references(parent, h, miner) if self.open else ()
        i, j = self.state
        t.parent.append(parent)
        t.height.append(h)
        t.miner.append(miner)
        t.published.append(1 if miner == HONEST else 0)
        t.regular.append(0)
        t.pre_i.append(i)
        t.pre_j.append(j)
        t.refs.append(refs)
        t.nephew.append(-1)
        self.open.append(b)
        return b

    def _publish(self, b: int) -> None:
        self.tree.published[b] = 1
        self._published.append(b)

    def _settle(self, new_base: int) -> None:
        """Everyone now agrees on ``new_base``: make its ancestry regular and prune candidates."""
        t = self.tree
        a = new_base
        base = self.fork_base
        while a != base:
            t.regular[a] = 1
            for u in t.refs[a]:
                t.nephew[u] = a
            a = t.parent[a]
        self.fork_base = new_base
        bh = t.height[new_base]
        maxd = self.max_distance
        keep = []
        for u in self.open:
            if t.regular[u] or t.nephew[u] >= 0:
                continue
            p = t.parent[u]
            if t.height[p] <= bh and not t.regular[p]:
                continue
            if maxd is not None and bh + 1 - t.height[u] > maxd:
                continue
            keep.append(u)
        self.open = keep

    def _check_invariant(self) -> None:
        j = len(self.honest)
        if not j:
            return
        t = self.tree
        tip = self.private[j - 1]
        ok = t.published[tip] and t.height[tip] == t.height[self.honest[-1]]
        if len(self.private) > j and t.published[self.private[j]]:
            ok = False
        if not ok:
            self.invariant_violations += 1

    # -- strategy ---------------------------------------------------------------

    def step(self, event: SimEvent) -> StepRecord:
        pre = self.state
        self._published = []
        if event.pool:
            b = self._pool_block()
        else:
            b = self._honest_block(event.on_pool_branch)
        self._check_invariant()
        self.events += 1
        return StepRecord(self.events - 1, event.label, pre, self.state, b, tuple(self._published),
                          self.tree.refs[b])

    def _pool_block(self) -> int:
        i, j = self.state
        b = self._mine(self.private[-1] if self.private else self.fork_base, POOL)
        self.private.append(b)
        if (i, j) == (1, 1):
            # (L_s, L_h) = (2, 1): publish and win the tie
            self._publish(b)
            self._settle(b)
            self.private, self.honest = [], []
        return b

    def _honest_block(self, on_pool_branch: bool) -> int:
        i, j = self.state
        if j == 0:
            parent = self.fork_base
        else:
            parent = self.private[j - 1] if on_pool_branch else self.honest[-1]
        b = self._mine(parent, HONEST)
        if (i, j) == (0, 0):
            self._settle(b)
            return b
        if (i, j) == (1, 0):
            self.honest = [b]
            self._publish(self.private[0])
            return b
        if (i, j) == (1, 1):
            self._settle(b)
            self.private, self.honest = [], []
            return b
        if j and on_pool_branch:
            # the honest block extends a published prefix: that prefix is now agreed on
            self._settle(self.private[j - 1])
            self.private = self.private[j:]
            self.honest = [b]
        else:
            self.honest.append(b)
        i2, j2 = self.state
        if i2 - j2 == 1:
            for p in self.private[j2 - 1:]:
                self._publish(p)
            self._settle(self.private[-1])
            self.private, self.honest = [], []
        else:
            self._publish(self.private[j2 - 1])
        return b

    def flush(self) -> None:
        """Force consensus: the pool publishes everything and its branch is adopted."""
        if self.private:
            for p in self.private:
                self._publish(p)
            self._settle(self.private[-1])
        elif self.honest:
            self._settle(self.honest[-1])
        self.private, self.honest = [], []

    def pending_candidates(self, upto: int) -> bool:
        """Whether some block with id <= upto could still gain an uncle reference."""
        t = self.tree
        bh = t.height[self.fork_base]
        maxd = self.max_distance
        for u in self.open:
            if u > upto or t.regular[u]:
                continue
            if t.regular[t.parent[u]] and (maxd is None or bh + 1 - t.height[u] <= maxd):
                return True
        return False


def replay_step(state: SimState, event: SimEvent) -> tuple[SimState, StepRecord]:
    """Apply one event to ``state`` in place and return it with the step record."""
    return state, state.step(event)


def replay(events: Iterable[SimEvent], schedule: RewardSchedule | None = None) -> tuple[SimState, list[StepRecord]]:
    st = SimState(schedule)
    return st, [st.step(e) for e in events]


# -- statistics ---------------------------------------------------------------

def verify_lemma1(tree: BlockTree, upto: int | None = None) -> bool:
    """Blocks mined while the pool led by two or more are regular exactly when pool-mined."""
    n = len(tree) if upto is None else min(len(tree), upto + 1)
    for b in range(1, n):
        i, j = tree.pre_i[b], tree.pre_j[b]
        if i >= 2 and i - j >= 2:
            if bool(tree.regular[b]) != (tree.miner[b] == POOL):
                return False
    return True


def pool_uncle_distance_violations(tree: BlockTree) -> int:
    bad = 0
    for b, nep in enumerate(tree.nephew):
        if nep >= 0 and tree.miner[b] == POOL and tree.height[nep] - tree.height[b] != 1:
            bad += 1
    return bad


@dataclass
class RunOutcome:
    batch_tallies: np.ndarray  # batches x TALLY_FIELDS, reward units (uncle count last)
    batch_sizes: np.ndarray
    batch_occupancy: list[np.ndarray]
    honest_uncle_hist: np.ndarray  # counts at distances 0..HIST_DISTANCES (0 unused)
    regular_counts: tuple[int, int]
    lemma1_ok: bool
    pool_uncle_violations: int
    invariant_violations: int
    settle_events: int
    trace: list[StepRecord] | None = None
    tree: BlockTree | None = None
    forced_settlement: bool = False


def _event_stream(rng: np.random.Generator, config: MiningConfig, miners: int | None, chunk: int = 1 << 15):
    a, g = config.alpha, config.gamma
    if miners is None:
        while True:
            u = rng.random((chunk, 2))
            pool = u[:, 0] < a
            branch = u[:, 1] < g
            yield from zip(pool.tolist(), branch.tolist())
    else:
        k = int(round(a * miners))
        prefer = int(round(g * (miners - k)))
        while True:
            m = rng.integers(0, miners, chunk)
            pool = m < k
            branch = (m - k) < prefer
            yield from zip(pool.tolist(), branch.tolist())


def simulate_run(config: MiningConfig, schedule: RewardSchedule, blocks: int, rng: np.random.Generator,
                 batches: int = 10, miners: int | None = None, max_uncles_per_block: int | None = None,
                 record_trace: bool = False, keep_tree: bool = False, settle_cap: int | None = None) -> RunOutcome:
    if settle_cap is None:
        settle_cap = max(10_000, blocks)
    st = SimState(schedule, max_uncles_per_block)
    trace: list[StepRecord] | None = [] if record_trace else None
    stream = _event_stream(rng, config, miners)
    pool_ev, hon_pool, hon = POOL_EVENT, HONEST_ON_POOL, HONEST_EVENT
    step = st.step
    for _ in range(blocks):
        p, br = next(stream)
        rec = step(pool_ev if p else (hon_pool if br else hon))
        if trace is not None:
            trace.append(rec)
    settle = 0
    forced = False
    while st.state != (0, 0) or st.pending_candidates(blocks):
        if settle >= settle_cap:
            # only reachable when alpha >= 0.5, where the lead drifts upward forever
            st.flush()
            forced = True
            break
        p, br = next(stream)
        rec = step(pool_ev if p else (hon_pool if br else hon))
        if trace is not None:
            trace.append(rec)
        settle += 1
    out = _tally(st, schedule, blocks, batches, trace, keep_tree, settle)
    out.forced_settlement = forced
    return out


def _tally(st: SimState, schedule: RewardSchedule, blocks: int, batches: int, trace, keep_tree: bool,
           settle: int) -> RunOutcome:
    t = st.tree
    ids = np.arange(1, blocks + 1)
    miner = np.asarray(t.miner)[ids]
    regular = np.frombuffer(bytes(t.regular), dtype=np.uint8)[ids].astype(bool)
    nephew = np.asarray(t.nephew)[ids]
    height = np.asarray(t.height)
    all_miner = np.asarray(t.miner)
    is_uncle = nephew >= 0
    dist = np.where(is_uncle, height[np.maximum(nephew, 0)] - height[ids], 0)
    dmax = int(dist.max()) if len(dist) else 1
    ku = np.asarray(schedule.uncle_table(max(dmax, 1)))
    kn = np.asarray(schedule.nephew_table(max(dmax, 1)))
    nep_miner = np.where(is_uncle, all_miner[np.maximum(nephew, 0)], -1)
    pool, honest = miner == POOL, miner == HONEST
    cols = np.stack([
        (regular & pool).astype(float),
        (regular & honest).astype(float),
        np.where(is_uncle & pool, ku[dist], 0.0),
        np.where(is_uncle & honest, ku[dist], 0.0),
        np.where(is_uncle & (nep_miner == POOL), kn[dist], 0.0),
        np.where(is_uncle & (nep_miner == HONEST), kn[dist], 0.0),
        is_uncle.astype(float),
    ], axis=1)
    batch = (ids - 1) * batches // blocks
    tallies = np.zeros((batches, len(TALLY_FIELDS)))
    np.add.at(tallies, batch, cols)
    sizes = np.bincount(batch, minlength=batches)
    occ_key = state_index(np.asarray(t.pre_i)[ids], np.asarray(t.pre_j)[ids])
    nkeys = int(occ_key.max()) + 1
    occupancy = [np.bincount(occ_key[batch == k], minlength=nkeys) for k in range(batches)]
    hist = np.bincount(dist[is_uncle & honest], minlength=HIST_DISTANCES + 1)[: HIST_DISTANCES + 1]
    return RunOutcome(
        batch_tallies=tallies,
        batch_sizes=sizes,
        batch_occupancy=occupancy,
        honest_uncle_hist=hist.astype(np.int64),
        regular_counts=(int((regular & pool).sum()), int((regular & honest).sum())),
        lemma1_ok=verify_lemma1(t, blocks),
        pool_uncle_violations=pool_uncle_distance_violations(t),
        invariant_violations=st.invariant_violations,
        settle_events=settle,
        trace=trace,
        tree=t if keep_tree else None,
    )


# -- aggregated result --------------------------------------------------------

@dataclass
class SimResult:
    alpha: float
    gamma: float
    schedule: str
    seed: int
    runs: int
    blocks: int
    rates: dict[str, float]
    rate_se: dict[str, float]
    revenue: dict[str, float]  # U_s/U_h per scenario with standard errors
    honest_uncle_hist: list[int]
    regular_counts: tuple[int, int]
    settle_events: int
    lemma1_ok: bool
    pool_uncle_violations: int
    invariant_violations: int
    occupancy: dict[str, tuple[float, float]] = field(default_factory=dict)
    miners: int | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def blocks_generated(self) -> int:
        return self.blocks * self.runs

    @property
    def honest_uncle_distribution(self) -> list[float]:
        h = np.asarray(self.honest_uncle_hist[1:], dtype=float)
        return (h / h.sum()).tolist() if h.sum() > 0 else [0.0] * len(h)

    @property
    def honest_uncle_expectation(self) -> float:
        p = self.honest_uncle_distribution
        return float(sum((d + 1) * x for d, x in enumerate(p)))

    def occupancy_of(self, i: int, j: int) -> tuple[float, float]:
        return self.occupancy.get(f"{i},{j}", (0.0, 0.0))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "schedule": self.schedule,
            "seed": self.seed,
            "runs": self.runs,
            "blocks": self.blocks,
            "blocks_generated": self.blocks_generated,
            "miners": self.miners,
            "rates": self.rates,
            "rate_se": self.rate_se,
            "revenue": self.revenue,
            "honest_uncle_hist": self.honest_uncle_hist,
            "honest_uncle_distribution": self.honest_uncle_distribution,
            "honest_uncle_expectation": self.honest_uncle_expectation,
            "regular_counts": list(self.regular_counts),
            "settle_events": self.settle_events,
            "checks": {
                "lemma1_ok": self.lemma1_ok,
                "pool_uncle_violations": self.pool_uncle_violations,
                "invariant_violations": self.invariant_violations,
            },
            "occupancy": {k: list(v) for k, v in self.occupancy.items()},
            "warnings": self.warnings,
        }

    def to_json(self) -> str:
        return json.dumps(_round_floats(self.to_dict()), sort_keys=True, indent=2) + "\n"

    def summary_row(self) -> dict[str, object]:
        row: dict[str, object] = {"alpha": self.alpha, "gamma": self.gamma, "schedule": self.schedule,
                                  "seed": self.seed, "runs": self.runs, "blocks": self.blocks}
        for k in TALLY_FIELDS:
            row[k] = self.rates[k]
            row[k + "_se"] = self.rate_se[k]
        row.update(self.revenue)
        row["lemma1_ok"] = self.lemma1_ok
        return row

    def to_csv(self) -> str:
        row = self.summary_row()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(row))
        w.writerow([f"{v:.9g}" if isinstance(v, float) else v for v in row.values()])
        return buf.getvalue()


def _round_floats(obj):
    if isinstance(obj, float):
        return float(f"{obj:.9g}") if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def _ratio_se(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    """Ratio-of-sums estimate with a delta-method standard error over batches."""
    r = num.sum() / den.sum()
    n = len(num)
    if n < 2:
        return float(r), math.nan
    resid = num - r * den
    se = math.sqrt(float(np.sum(resid**2)) / (n * (n - 1))) / float(den.mean())
    return float(r), se


def aggregate(config: MiningConfig, schedule: RewardSchedule, outcomes: list[RunOutcome], seed: int, blocks: int,
              miners: int | None = None) -> SimResult:
    T = np.concatenate([o.batch_tallies for o in outcomes])
    S = np.concatenate([o.batch_sizes for o in outcomes]).astype(float)
    rates, rate_se = {}, {}
    for k, name in enumerate(TALLY_FIELDS):
        rates[name], rate_se[name] = _ratio_se(T[:, k], S)
    pool = T[:, 0] + T[:, 2] + T[:, 4]
    honest = T[:, 1] + T[:, 3] + T[:, 5]
    reg = T[:, 0] + T[:, 1]
    revenue = {}
    for sc, den in ((1, reg), (2, reg + T[:, 6])):
        revenue[f"U_s_{sc}"], revenue[f"U_s_{sc}_se"] = _ratio_se(pool, den)
        revenue[f"U_h_{sc}"], revenue[f"U_h_{sc}_se"] = _ratio_se(honest, den)
    revenue["R_s"], revenue["R_s_se"] = _ratio_se(pool, pool + honest)

    width = max(len(o) for r in outcomes for o in r.batch_occupancy)
    occ = np.zeros((len(S), width))
    row = 0
    for o in outcomes:
        for c in o.batch_occupancy:
            occ[row, : len(c)] = c
            row += 1
    freq = occ.sum(axis=0) / S.sum()
    bound = 2
    while n_states(bound) < width:
        bound += 1
    I, J = state_arrays(bound)
    occupancy = {}
    for idx in np.nonzero(freq)[0]:
        f, se = _ratio_se(occ[:, idx], S)
        occupancy[f"{I[idx]},{J[idx]}"] = (f, se)

    hist = np.sum([o.honest_uncle_hist for o in outcomes], axis=0)
    warnings = []
    if config.alpha >= 0.5:
        warnings.append("alpha >= 0.5: the pool's lead grows without bound; no stationary regime")
    forced = sum(o.forced_settlement for o in outcomes)
    if forced:
        warnings.append(f"{forced} run(s) never returned to (0,0); the pool's branch was adopted by fiat")
    return SimResult(
        alpha=config.alpha, gamma=config.gamma, schedule=schedule.tag, seed=seed, runs=len(outcomes), blocks=blocks,
        rates=rates, rate_se=rate_se, revenue=revenue, honest_uncle_hist=[int(x) for x in hist],
        regular_counts=(sum(o.regular_counts[0] for o in outcomes), sum(o.regular_counts[1] for o in outcomes)),
        settle_events=sum(o.settle_events for o in outcomes),
        lemma1_ok=all(o.lemma1_ok for o in outcomes),
        pool_uncle_violations=sum(o.pool_uncle_violations for o in outcomes),
        invariant_violations=sum(o.invariant_violations for o in outcomes),
        occupancy=occupancy, miners=miners, warnings=warnings,
    )


def _run_worker(args):
    config, schedule, blocks, child, batches, miners, max_uncles = args
    rng = np.random.Generator(np.random.PCG64(child))
    return simulate_run(config, schedule, blocks, rng, batches, miners, max_uncles)


def run_simulation(config: MiningConfig, schedule: RewardSchedule, blocks: int = 100_000, runs: int = 10,
                   seed: int = 0, batches: int = 10, miners: int | None = None,
                   max_uncles_per_block: int | None = None, workers: int = 1) -> SimResult:
    """Simulate ``runs`` independent runs of ``blocks`` scored blocks each.

    Every run draws from its own child of ``SeedSequence(seed)``, so results do
    not depend on ``workers``.
    """
    errs = config.errors() + schedule.errors()
    if not isinstance(blocks, int) or blocks < 1:
        errs.append(f"blocks must be a positive integer, got {blocks!r}")
    if not isinstance(runs, int) or runs < 1:
        errs.append(f"runs must be a positive integer, got {runs!r}")
    if batches < 1 or batches > blocks:
        errs.append("batches must be between 1 and blocks")
    if miners is not None and miners < 2:
        errs.append("miners must be at least 2")
    if errs:
        raise ConfigError(errs)
    children = np.random.SeedSequence(seed).spawn(runs)
    jobs = [(config, schedule, blocks, c, batches, miners, max_uncles_per_block) for c in children]
    if workers > 1 and runs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            outcomes = list(ex.map(_run_worker, jobs))
    else:
        outcomes = [_run_worker(j) for j in jobs]
    return aggregate(config, schedule, outcomes, seed, blocks, miners)


def trace_lines(records: Iterable[StepRecord]) -> str:
    out = []
    for r in records:
        pub = ",".join(map(str, r.published)) or "-"
        refs = ",".join(map(str, r.references)) or "-"
        out.append(f"{r.index}\t{r.event}\t{r.pre[0]},{r.pre[1]}\t{r.post[0]},{r.post[1]}\tblock={r.block}"
                   f"\tpublished={pub}\trefs={refs}")
    return "\n".join(out) + ("\n" if out else "")
