"""The two-dimensional (L_s, L_h) chain of the selfish-mining strategy.

Time is rescaled so blocks arrive at total rate 1, hence every state has total
outgoing rate 1 (the honest self-loop at (0, 0) included).  States are stored
in a flat array indexed as

    (0,0) -> 0, (1,0) -> 1, (1,1) -> 2, (i,j) -> 3 + (i-2)(i-1)/2 + j  for i >= 2, 0 <= j <= i-2

and a distribution "with bound N" holds every reachable state with i <= N.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, NamedTuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, gmres, splu
from scipy.special import gammaln

from .model import ConfigError, MiningConfig

DEFAULT_TRUNCATION = 200


class EventKind(enum.IntEnum):
    POOL_BLOCK = 0
    HONEST_BLOCK = 1  # no fork in progress, or the fork has no pool-published prefix yet
    HONEST_ON_PREFIX = 2  # honest block extends a published prefix of the private branch
    HONEST_OFF_PREFIX = 3  # honest block extends the honest public branch


class ChainState(NamedTuple):
    l_s: int
    l_h: int

    @property
    def lead(self) -> int:
        return self.l_s - self.l_h

    def is_reachable(self) -> bool:
        if self in ((0, 0), (1, 0), (1, 1)):
            return True
        return self.l_h >= 0 and self.l_s - self.l_h >= 2


@dataclass(frozen=True)
class TransitionRate:
    source: ChainState
    target: ChainState
    rate: float
    event_kind: EventKind


def transition_rates(state: tuple[int, int], config: MiningConfig) -> list[TransitionRate]:
    """Outgoing transitions of ``state``; zero-rate branches are omitted.

    At (1, 1) the pool and honest blocks both resolve the tie to (0, 0); they
    are listed separately because their blocks are rewarded differently.
    """
    s = ChainState(*state)
    if not s.is_reachable():
        raise ValueError(f"unreachable state {tuple(s)}")
    a, b, g = config.alpha, config.beta, config.gamma
    i, j = s
    P, H, ON, OFF = EventKind.POOL_BLOCK, EventKind.HONEST_BLOCK, EventKind.HONEST_ON_PREFIX, EventKind.HONEST_OFF_PREFIX
    if s == (0, 0):
        out = [((0, 0), b, H), ((1, 0), a, P)]
    elif s == (1, 0):
        out = [((2, 0), a, P), ((1, 1), b, H)]
    elif s == (1, 1):
        out = [((0, 0), a, P), ((0, 0), b, H)]
    else:
        out = [((i + 1, j), a, P)]
        if j == 0:
            out.append(((0, 0) if i == 2 else (i, 1), b, H))
        elif i - j == 2:
            out += [((0, 0), b * g, ON), ((0, 0), b * (1 - g), OFF)]
        else:
            out += [((i - j, 1), b * g, ON), ((i, j + 1), b * (1 - g), OFF)]
    return [TransitionRate(s, ChainState(*t), r, k) for t, r, k in out if r > 0]


def rates_by_target(state: tuple[int, int], config: MiningConfig) -> dict[ChainState, float]:
    out: dict[ChainState, float] = {}
    for tr in transition_rates(state, config):
        out[tr.target] = out.get(tr.target, 0.0) + tr.rate
    return out


# -- multiple-summation function ---------------------------------------------

def multisum_f(x: int, y: int, z: int) -> int:
    """Number of z-fold nested index tuples in the stationary closed form.

    The nested sum counts ballot-like sequences; with m = x - y it equals
    (m-1)/(m+z-1) * C(m+2z-2, z).  Zero when z < 1 or x < y + 2.
    """
    m = x - y
    if z < 1 or m < 2:
        return 0
    return (m - 1) * math.comb(m + 2 * z - 2, z) // (m + z - 1)


def log_multisum_f(m: np.ndarray, z: np.ndarray) -> np.ndarray:
    """log f as a function of m = x - y and z; -inf where f vanishes."""
    m = np.asarray(m, dtype=float)
    z = np.asarray(z, dtype=float)
    ok = (z >= 1) & (m >= 2)
    mm = np.where(ok, m, 2.0)
    zz = np.where(ok, z, 1.0)
    val = np.log(mm - 1) - np.log(mm + zz - 1) + gammaln(mm + 2 * zz - 1) - gammaln(zz + 1) - gammaln(mm + zz - 1)
    return np.where(ok, val, -np.inf)


# -- state space --------------------------------------------------------------

def n_states(bound: int) -> int:
    return 3 + (bound - 1) * bound // 2


@lru_cache(maxsize=8)
def state_arrays(bound: int) -> tuple[np.ndarray, np.ndarray]:
    """(I, J) coordinate arrays of every retained state, in index order."""
    if bound < 2:
        raise ValueError("bound must be >= 2")
    n = n_states(bound)
    I = np.empty(n, dtype=np.int64)
    J = np.empty(n, dtype=np.int64)
    I[:3] = (0, 1, 1)
    J[:3] = (0, 0, 1)
    k = np.arange(n - 3)
    # row i starts at offset (i-2)(i-1)/2
    i = np.floor((3 + np.sqrt(1 + 8 * k)) / 2).astype(np.int64)
    i = np.where((i - 2) * (i - 1) // 2 > k, i - 1, i)
    i = np.where((i - 1) * i // 2 <= k, i + 1, i)
    I[3:] = i
    J[3:] = k - (i - 2) * (i - 1) // 2
    I.setflags(write=False)
    J.setflags(write=False)
    return I, J


def state_index(i, j):
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    out = 3 + (i - 2) * (i - 1) // 2 + j
    out = np.where(i == 0, 0, out)
    out = np.where((i == 1) & (j == 0), 1, out)
    out = np.where((i == 1) & (j == 1), 2, out)
    return out


@dataclass(frozen=True)
class TransitionTable:
    """Every transition out of the retained states, as parallel arrays.

    ``dst`` is -1 where the target lies outside the window.
    """

    bound: int
    src: np.ndarray
    dst: np.ndarray
    rate: np.ndarray
    kind: np.ndarray


def transition_table(bound: int, config: MiningConfig) -> TransitionTable:
    a, b, g = config.alpha, config.beta, config.gamma
    I, J = state_arrays(bound)
    idx = np.arange(len(I))
    lead = I - J
    big = I >= 2
    parts = []

    def add(mask, ti, tj, rate, kind):
        if rate <= 0:
            return
        ti = np.broadcast_to(ti, I.shape)[mask]
        tj = np.broadcast_to(tj, I.shape)[mask]
        dst = np.where(ti <= bound, state_index(ti, tj), -1)
        parts.append((idx[mask], dst, np.full(dst.shape, rate), np.full(dst.shape, int(kind))))

    P, H, ON, OFF = EventKind.POOL_BLOCK, EventKind.HONEST_BLOCK, EventKind.HONEST_ON_PREFIX, EventKind.HONEST_OFF_PREFIX
    s00, s10, s11 = idx == 0, idx == 1, idx == 2
    add(s00, 0, 0, b, H)
    add(s00, 1, 0, a, P)
    add(s10, 2, 0, a, P)
    add(s10, 1, 1, b, H)
    add(s11, 0, 0, a, P)
    add(s11, 0, 0, b, H)
    add(big, I + 1, J, a, P)
    add(big & (J == 0) & (lead == 2), 0, 0, b, H)
    add(big & (J == 0) & (lead >= 3), I, 1, b, H)
    tie2 = big & (J >= 1) & (lead == 2)
    add(tie2, 0, 0, b * g, ON)
    add(tie2, 0, 0, b * (1 - g), OFF)
    deep = big & (J >= 1) & (lead >= 3)
    add(deep, I - J, 1, b * g, ON)
    add(deep, I, J + 1, b * (1 - g), OFF)
    src, dst, rate, kind = (np.concatenate(x) for x in zip(*parts))
    order = np.lexsort((kind, src))
    return TransitionTable(bound, src[order], dst[order], rate[order], kind[order])


def inflow_matrix(bound: int, config: MiningConfig) -> sparse.csr_matrix:
    """Q with Q[t, s] = rate s -> t; transitions leaving the window are dropped."""
    tt = transition_table(bound, config)
    keep = tt.dst >= 0
    n = n_states(bound)
    return sparse.csr_matrix((tt.rate[keep], (tt.dst[keep], tt.src[keep])), shape=(n, n))


# -- distributions ------------------------------------------------------------

@dataclass(frozen=True)
class StationaryDistribution:
    alpha: float
    gamma: float
    bound: int
    pi: np.ndarray
    method: str
    tail_mass_bound: float

    def __getitem__(self, state: tuple[int, int]) -> float:
        i, j = state
        if not ChainState(i, j).is_reachable() or i > self.bound:
            return 0.0
        return float(self.pi[int(state_index(i, j))])

    @property
    def states(self) -> tuple[np.ndarray, np.ndarray]:
        return state_arrays(self.bound)

    @property
    def total_mass(self) -> float:
        return float(self.pi.sum())

    def restrict(self, bound: int) -> StationaryDistribution:
        if bound > self.bound:
            raise ValueError("cannot widen a distribution")
        n = n_states(bound)
        kept = self.pi[:n]
        tail = self.tail_mass_bound + float(self.pi[n:].sum())
        return StationaryDistribution(self.alpha, self.gamma, bound, kept, self.method, tail)

    def items(self) -> Iterator[tuple[tuple[int, int], float]]:
        I, J = self.states
        for i, j, p in zip(I.tolist(), J.tolist(), self.pi.tolist()):
            yield (i, j), p


def _pi00(alpha: float) -> float:
    return (1 - 2 * alpha) / (2 * alpha**3 - 4 * alpha**2 + 1)


@lru_cache(maxsize=32)
def stationary_closed_form(config: MiningConfig, truncation: int = DEFAULT_TRUNCATION) -> StationaryDistribution:
    """Evaluate the closed-form stationary probabilities for every state with i <= truncation.

    For i >= j + 2, j >= 1 the probability is the three-term expression
        a^i b^j (1-g)^j f(i,j,j)
      + a^(i-j) g (1-g)^(j-1) (b^-(i-j-1) - 1)
      - g (1-g)^(j-1) sum_{k=1..j} a^(i-k) b^(j-k) f(i,j,j-k)
    times pi(0,0), with f(., ., 0) = 0.  Terms are formed in log space so large
    windows do not overflow; negligible entries underflow quietly to zero.
    """
    config.require_analytic()
    a, b, g = config.alpha, config.beta, config.gamma
    N = int(truncation)
    if N < 2:
        raise ValueError("truncation must be >= 2")
    p00 = _pi00(a)
    pi = np.zeros(n_states(N))
    pi[0] = p00
    pi[1] = a * p00
    pi[2] = (a - a * a) * p00
    la, lb = math.log(a), math.log(b)
    for i in range(2, N + 1):
        pi[int(state_index(i, 0))] = math.exp(i * la) * p00
    lg1 = math.log1p(-g) if g < 1 else -math.inf
    with np.errstate(under="ignore"):
        _fill_fork_states(pi, N, la, lb, g, lg1, p00)
    tail = max(0.0, 1.0 - math.fsum(pi.tolist()))
    pi.setflags(write=False)
    return StationaryDistribution(a, g, N, pi, "closed", tail)


def _fill_fork_states(pi: np.ndarray, N: int, la: float, lb: float, g: float, lg1: float, p00: float) -> None:
    for m in range(2, N):
        J = N - m  # j = 1..J keeps i = m + j <= N
        z = np.arange(0, J + 1)
        # u[z] = a^m (ab)^z f(m, z), the summand shared by the first and third terms
        logu = m * la + z * (la + lb) + log_multisum_f(m, z)
        u = np.exp(logu)
        j = z[1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            w1 = np.exp(np.where(j > 0, j * lg1, 0.0)) if g < 1 else (j == 0).astype(float)
            wg = g * np.exp((j - 1) * lg1) if g < 1 else g * (j == 1).astype(float)
        t1 = w1 * u[1:]
        t2 = wg * (math.exp(m * la + (1 - m) * lb) - math.exp(m * la))
        t3 = wg * np.cumsum(u)[:-1]
        pi[state_index(m + j, j)] = (t1 + t2 - t3) * p00


def closed_form_tail(config: MiningConfig, truncation: int) -> float:
    return stationary_closed_form(config, truncation).tail_mass_bound


def auto_truncation(config: MiningConfig, target_tail: float = 1e-12, start: int = DEFAULT_TRUNCATION,
                    max_bound: int = 6400) -> int:
    """Smallest doubling of ``start`` whose omitted closed-form mass is <= target_tail."""
    n = start
    while n < max_bound and closed_form_tail(config, n) > target_tail:
        n *= 2
    return min(n, max_bound)


# -- independent numeric solve ------------------------------------------------

class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, distribution: StationaryDistribution | None, residual: float):
        super().__init__(f"{message} (achieved residual {residual:.3e})")
        self.distribution = distribution
        self.residual = residual


def balance_residuals(pi: np.ndarray, bound: int, config: MiningConfig) -> np.ndarray:
    """Inflow minus outflow for every retained state (outflow rate is 1 everywhere).

    Inflows from states beyond the window are absent, so equations of states
    fed from outside (resets into (i,1), the lead-2 sum into (0,0)) carry that
    truncation; callers compare only equations well inside the window.
    """
    Q = inflow_matrix(bound, config)
    return Q @ pi - pi


def _solve_window(bound: int, config: MiningConfig) -> tuple[np.ndarray, float]:
    """Unnormalised solution anchored at u(0,0) = 1, plus the linear residual.

    The balance system (I - Q) u = 0 is solved with row/column (0,0) removed.
    Everything except the reset transitions (i,j) -> (i-j,1) is lower triangular
    in index order, so the triangular part is an exact preconditioner at
    gamma = 0 and a strong one otherwise.
    """
    Q = inflow_matrix(bound, config)
    n = Q.shape[0]
    A = (sparse.identity(n, format="csr") - Q)[1:, 1:].tocsc()
    rhs = np.asarray(Q[1:, 0].todense()).ravel()
    lower = splu(sparse.tril(A, format="csc"), permc_spec="NATURAL")
    x = lower.solve(rhs)
    if config.gamma > 0:
        M = LinearOperator(A.shape, lower.solve)
        # keep the Krylov basis under ~400 MB on large windows
        restart = int(min(200, max(10, 5e7 // A.shape[0])))
        x, _ = gmres(A, rhs, x0=x, M=M, rtol=1e-15, atol=0.0, restart=restart, maxiter=50)
    residual = float(np.abs(A @ x - rhs).max())
    return np.concatenate([[1.0], x]), residual


def _row_masses(pi: np.ndarray, bound: int) -> np.ndarray:
    I, _ = state_arrays(bound)
    return np.bincount(I, weights=pi, minlength=bound + 1)


def _tail_beyond(pi: np.ndarray, bound: int) -> float:
    """Mass beyond row ``bound`` extrapolated from the decay of the last rows."""
    rows = _row_masses(pi, bound)
    k = max(4, bound // 10)
    hi, lo = rows[bound], rows[bound - k]
    if hi <= 0:
        return 0.0
    if lo <= 0 or hi >= lo:
        return math.inf
    rho = (hi / lo) ** (1.0 / k)
    return hi * rho / (1 - rho)


def stationary_numeric(config: MiningConfig, truncation: int = DEFAULT_TRUNCATION, tolerance: float = 1e-10,
                       max_window: int = 4096) -> StationaryDistribution:
    """Solve the truncated balance equations directly, independent of the closed form.

    The internal window starts at ``truncation`` and doubles until the mass
    extrapolated beyond it is <= tolerance; the returned distribution keeps the
    states with i <= truncation.  ``tail_mass_bound`` is the retained shortfall
    from 1 plus the extrapolated mass beyond the internal window.
    """
    config.require_analytic()
    if truncation < 4:
        raise ValueError("truncation must be >= 4")
    window = int(truncation)
    while True:
        u, residual = _solve_window(window, config)
        pi = u / u.sum()
        beyond = _tail_beyond(pi, window)
        if residual > max(tolerance, 1e-12):
            raise NonConvergenceError("linear solve did not converge", None, residual)
        if beyond <= tolerance:
            break
        if window * 2 > max_window:
            dist = StationaryDistribution(config.alpha, config.gamma, window, pi, "numeric", beyond)
            raise NonConvergenceError(
                f"tail beyond i={window} estimated at {beyond:.3e} > {tolerance:.1e}",
                dist.restrict(min(truncation, window)),
                residual,
            )
        window *= 2
    pi = pi * (1.0 - beyond)
    dist = StationaryDistribution(config.alpha, config.gamma, window, pi, "numeric", beyond)
    return dist.restrict(truncation)


# -- export ---------------------------------------------------------------------

def distribution_rows(dist: StationaryDistribution, min_prob: float = 0.0) -> list[tuple[int, int, float, str]]:
    return [(i, j, p, dist.method) for (i, j), p in dist.items() if p >= min_prob]


def distributions_csv(dists: list[StationaryDistribution], min_prob: float = 0.0) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "pi", "method"])
    for d in dists:
        for i, j, p, m in distribution_rows(d, min_prob):
            w.writerow([i, j, f"{p:.9g}", m])
    return buf.getvalue()


__all__ = [
    "ChainState", "ConfigError", "DEFAULT_TRUNCATION", "EventKind", "NonConvergenceError",
    "StationaryDistribution", "TransitionRate", "TransitionTable", "auto_truncation", "balance_residuals",
    "distributions_csv", "inflow_matrix", "multisum_f", "n_states", "rates_by_target", "state_arrays",
    "state_index", "stationary_closed_form", "stationary_numeric", "transition_rates", "transition_table",
]
