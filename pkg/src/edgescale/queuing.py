"""Steady-state queueing math for sizing container pools against waiting-time bounds.

Two pool models are supported:

* a homogeneous pool of ``c`` identical containers (classic M/M/c/FCFS), and
* a heterogeneous pool with per-container service rates, analysed with the
  worst-case assumption that the dispatcher always picks the slowest idle
  container, so the computed waiting-time tail is a lower bound on the real one.

All factorial/power terms are accumulated as log-space recurrences so the math
stays finite for pools up to the hard cap (10 000 containers) and offered loads
up to 10 000; naive factorial evaluation overflows around c = 170.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CapExceeded, InfeasibleDeadline, InvalidParameter, UnstableSystem

DEFAULT_PERCENTILE = 0.99
DEFAULT_CONTAINER_CAP = 10_000


@dataclass(frozen=True)
class WaitTarget:
    """Waiting-time goal: require P(wait <= t) >= percentile."""

    t: float
    percentile: float = DEFAULT_PERCENTILE

    def __post_init__(self):
        if not self.t > 0:
            raise InvalidParameter(f"waiting-time bound must be > 0, got {self.t}")
        if not 0 < self.percentile < 1:
            raise InvalidParameter(f"percentile must be in (0, 1), got {self.percentile}")


@dataclass(frozen=True)
class HomogeneousModel:
    """M/M/c pool: Poisson arrivals at `lam`, c identical containers of rate `mu`."""

    lam: float
    mu: float
    c: int

    def __post_init__(self):
        if self.lam < 0 or not math.isfinite(self.lam):
            raise InvalidParameter(f"arrival rate must be finite and >= 0, got {self.lam}")
        if self.mu <= 0 or not math.isfinite(self.mu):
            raise InvalidParameter(f"service rate must be finite and > 0, got {self.mu}")
        if self.c < 1 or self.c != int(self.c):
            raise InvalidParameter(f"container count must be a positive integer, got {self.c}")

    @property
    def is_stable(self) -> bool:
        return self.lam < self.c * self.mu

    def require_stable(self):
        if not self.is_stable:
            raise UnstableSystem(
                f"lam={self.lam} >= c*mu={self.c * self.mu}; no steady state"
            )


@dataclass(frozen=True)
class HeterogeneousModel:
    """Pool with per-container rates, slowest first (worst-case dispatch order)."""

    lam: float
    rates: tuple

    def __post_init__(self):
        if self.lam < 0 or not math.isfinite(self.lam):
            raise InvalidParameter(f"arrival rate must be finite and >= 0, got {self.lam}")
        rates = tuple(float(r) for r in self.rates)
        if not rates:
            raise InvalidParameter("rates must be non-empty")
        if any(r <= 0 or not math.isfinite(r) for r in rates):
            raise InvalidParameter("every container rate must be finite and > 0")
        if any(a > b for a, b in zip(rates, rates[1:])):
            raise InvalidParameter("rates must be sorted ascending (slowest first)")
        object.__setattr__(self, "rates", rates)

    @property
    def c(self) -> int:
        return len(self.rates)

    @property
    def drain_rate(self) -> float:
        return float(sum(self.rates))

    @property
    def is_stable(self) -> bool:
        return self.lam < self.drain_rate

    def require_stable(self):
        if not self.is_stable:
            raise UnstableSystem(
                f"lam={self.lam} >= total rate {self.drain_rate}; no steady state"
            )


def _logsumexp(terms: np.ndarray) -> float:
    hi = float(np.max(terms))
    if hi == -math.inf:
        return -math.inf
    return hi + math.log(float(np.sum(np.exp(terms - hi))))


def _log_head_homogeneous(lam: float, mu: float, c: int) -> np.ndarray:
    """log of r^n/n! for n = 0..c, via the recurrence a_n = a_{n-1} * r/n."""
    out = np.empty(c + 1)
    out[0] = 0.0
    if c > 0:
        log_r = math.log(lam / mu)
        out[1:] = np.cumsum(log_r - np.log(np.arange(1, c + 1)))
    return out


def _log_head_heterogeneous(lam: float, rates: Sequence[float]) -> np.ndarray:
    """log of lam^n / prod_{k<=n}(mu_1+...+mu_k) for n = 0..c (slowest-first order)."""
    drains = np.cumsum(np.asarray(rates, dtype=float))
    out = np.empty(len(drains) + 1)
    out[0] = 0.0
    out[1:] = np.cumsum(math.log(lam) - np.log(drains))
    return out


def _tail_probability(log_head: np.ndarray, log_ratio: float, upto: int) -> float:
    """P(N <= upto) for a chain with head terms log_head[0..c] and geometric tail.

    Beyond n = c the unnormalised term is head[c] * ratio^(n-c) with ratio < 1.
    `upto` must be >= c - 1 (true for any nonnegative waiting bound).
    """
    c = len(log_head) - 1
    # log(1 - ratio) via expm1 stays accurate for ratio near both 0 and 1
    log_one_minus_ratio = math.log(-math.expm1(log_ratio))
    log_denom = _logsumexp(
        np.append(log_head[:c], log_head[c] - log_one_minus_ratio)
    )
    if upto < c:
        log_num = _logsumexp(log_head[: upto + 1])
    else:
        m = upto - c + 1
        log_partial = math.log(-math.expm1(m * log_ratio)) - log_one_minus_ratio
        log_num = np.logaddexp(_logsumexp(log_head[:c]), log_head[c] + log_partial)
    return min(1.0, math.exp(float(log_num) - log_denom))


def p_zero_homogeneous(model: HomogeneousModel) -> float:
    """Probability of an empty system (P0) for a stable M/M/c pool."""
    model.require_stable()
    if model.lam == 0:
        return 1.0
    rho = model.lam / (model.c * model.mu)
    log_head = _log_head_homogeneous(model.lam, model.mu, model.c)
    log_one_minus_rho = math.log(-math.expm1(math.log(rho)))
    log_z = _logsumexp(
        np.append(log_head[: model.c], log_head[model.c] - log_one_minus_rho)
    )
    return math.exp(-log_z)


def steady_prob_homogeneous(model: HomogeneousModel, n: int) -> float:
    """P(exactly n requests in the system) for a stable M/M/c pool."""
    model.require_stable()
    if n < 0 or n != int(n):
        raise InvalidParameter(f"occupancy must be a nonnegative integer, got {n}")
    if model.lam == 0:
        return 1.0 if n == 0 else 0.0
    c = model.c
    log_head = _log_head_homogeneous(model.lam, model.mu, c)
    log_rho = math.log(model.lam / (c * model.mu))
    log_one_minus_rho = math.log(-math.expm1(log_rho))
    log_z = _logsumexp(np.append(log_head[:c], log_head[c] - log_one_minus_rho))
    if n <= c:
        log_term = float(log_head[n])
    else:
        log_term = float(log_head[c]) + (n - c) * log_rho
    return math.exp(log_term - log_z)


def wait_tail_homogeneous(model: HomogeneousModel, target: WaitTarget) -> float:
    """P(wait <= t): occupancy mass up to L = floor(t*c*mu + c - 1).

    A request that finds n others in the pool waits about (n - c + 1)/(c*mu),
    so bounding the wait by t is bounding the occupancy it sees by L.
    """
    model.require_stable()
    if model.lam == 0:
        return 1.0
    c, mu = model.c, model.mu
    upto = math.floor(target.t * c * mu + c - 1)
    log_head = _log_head_homogeneous(model.lam, mu, c)
    log_rho = math.log(model.lam / (c * mu))
    return _tail_probability(log_head, log_rho, upto)


def steady_prob_heterogeneous(model: HeterogeneousModel, n: int) -> float:
    """P(exactly n in system) under the worst-case slowest-first analysis."""
    model.require_stable()
    if n < 0 or n != int(n):
        raise InvalidParameter(f"occupancy must be a nonnegative integer, got {n}")
    if model.lam == 0:
        return 1.0 if n == 0 else 0.0
    c = model.c
    log_head = _log_head_heterogeneous(model.lam, model.rates)
    log_ratio = math.log(model.lam / model.drain_rate)
    log_one_minus_ratio = math.log(-math.expm1(log_ratio))
    log_z = _logsumexp(np.append(log_head[:c], log_head[c] - log_one_minus_ratio))
    if n <= c:
        log_term = float(log_head[n])
    else:
        log_term = float(log_head[c]) + (n - c) * log_ratio
    return math.exp(log_term - log_z)


def wait_tail_heterogeneous(model: HeterogeneousModel, target: WaitTarget) -> float:
    """Worst-case P(wait <= t) with waiting index L = floor(t*sum(rates) + c - 1).

    The pool drains at sum(rates) when saturated, so the drain rate replaces
    c*mu from the homogeneous bound. Real dispatchers do no worse than the
    slowest-first order assumed here, so this is a conservative lower bound.
    """
    model.require_stable()
    if model.lam == 0:
        return 1.0
    c = model.c
    upto = math.floor(target.t * model.drain_rate + c - 1)
    log_head = _log_head_heterogeneous(model.lam, model.rates)
    log_ratio = math.log(model.lam / model.drain_rate)
    return _tail_probability(log_head, log_ratio, upto)


def _log_prob_queued(log_head: np.ndarray, log_ratio: float) -> float:
    """log P(N >= c): all-servers-busy probability of the occupancy chain."""
    c = len(log_head) - 1
    log_one_minus_ratio = math.log(-math.expm1(log_ratio))
    log_z = _logsumexp(np.append(log_head[:c], log_head[c] - log_one_minus_ratio))
    return float(log_head[c]) - log_one_minus_ratio - log_z


def wait_cdf_homogeneous(model: HomogeneousModel, t: float) -> float:
    """Exact M/M/c waiting-time CDF: P(W <= t) = 1 - P(N >= c) * exp(-(c*mu - lam)*t).

    Unlike wait_tail_homogeneous (the occupancy-cutoff rule used for sizing,
    which treats each queued request's wait as its conditional mean), this
    integrates the true Erlang-distributed wait and is what a measurement of
    the same M/M/c system converges to.
    """
    model.require_stable()
    if t < 0:
        raise InvalidParameter(f"t must be >= 0, got {t}")
    if model.lam == 0:
        return 1.0
    c, mu = model.c, model.mu
    log_head = _log_head_homogeneous(model.lam, mu, c)
    log_pq = _log_prob_queued(log_head, math.log(model.lam / (c * mu)))
    return 1.0 - math.exp(log_pq - (c * mu - model.lam) * t)


def wait_cdf_heterogeneous(model: HeterogeneousModel, t: float) -> float:
    """Worst-case waiting-time CDF: P(W <= t) = 1 - P(N >= c) * exp(-(S - lam)*t).

    Occupancy comes from the slowest-first worst-case chain; given a queue
    position, the wait is an exact Erlang sum at the saturated drain rate
    S = sum(rates) (every completion backfills from the queue while anyone
    waits). This lower-bounds the waiting CDF of any real dispatcher.
    """
    model.require_stable()
    if t < 0:
        raise InvalidParameter(f"t must be >= 0, got {t}")
    if model.lam == 0:
        return 1.0
    log_head = _log_head_heterogeneous(model.lam, model.rates)
    log_pq = _log_prob_queued(log_head, math.log(model.lam / model.drain_rate))
    return 1.0 - math.exp(log_pq - (model.drain_rate - model.lam) * t)


def min_stable_count(lam: float, mu: float) -> int:
    """Smallest c with lam < c*mu (at least 1)."""
    if lam <= 0:
        return 1
    c = int(math.floor(lam / mu)) + 1
    while c * mu <= lam:  # float-division rounding guard
        c += 1
    return max(1, c)


def find_c_homogeneous(
    lam: float,
    mu: float,
    target: WaitTarget,
    c_start: int = 0,
    cap: int = DEFAULT_CONTAINER_CAP,
) -> int:
    """Smallest container count meeting the waiting target, scanning upward.

    The scan begins at max(c_start, stability floor); c_start is a warm start
    (the current pool size), not an upper bound on the answer.
    """
    if mu <= 0:
        raise InvalidParameter(f"service rate must be > 0, got {mu}")
    if lam < 0:
        raise InvalidParameter(f"arrival rate must be >= 0, got {lam}")
    if c_start < 0:
        raise InvalidParameter(f"c_start must be >= 0, got {c_start}")
    c = max(c_start, min_stable_count(lam, mu))
    while c <= cap:
        if wait_tail_homogeneous(HomogeneousModel(lam, mu, c), target) >= target.percentile:
            return c
        c += 1
    raise CapExceeded(f"no c <= {cap} meets P(wait <= {target.t}) >= {target.percentile}")


def find_c_heterogeneous(
    lam: float,
    existing_rates: Sequence[float],
    standard_mu: float,
    target: WaitTarget,
    cap: int = DEFAULT_CONTAINER_CAP,
) -> int:
    """Smallest number of standard containers to add to an existing pool.

    Returns k >= 0 such that the pool (existing_rates + k copies of
    standard_mu), re-sorted ascending, meets the waiting target under the
    worst-case heterogeneous model. With an empty pool this reduces to
    find_c_homogeneous.
    """
    if standard_mu <= 0:
        raise InvalidParameter(f"standard rate must be > 0, got {standard_mu}")
    if lam < 0:
        raise InvalidParameter(f"arrival rate must be >= 0, got {lam}")
    base = np.sort(np.asarray(list(existing_rates), dtype=float))
    if base.size and base[0] <= 0:
        raise InvalidParameter("every existing rate must be > 0")
    insert_at = int(np.searchsorted(base, standard_mu))
    base_sum = float(base.sum())

    # skip straight to the stability floor: need base_sum + k*standard_mu > lam
    k = 0
    if lam >= base_sum:
        k = int(math.floor((lam - base_sum) / standard_mu)) + 1
    while base_sum + k * standard_mu <= lam:
        k += 1

    while base.size + k <= cap:
        if base.size + k > 0:
            pool = np.concatenate(
                [base[:insert_at], np.full(k, float(standard_mu)), base[insert_at:]]
            )
            model = HeterogeneousModel(lam, tuple(pool))
            if model.is_stable and wait_tail_heterogeneous(model, target) >= target.percentile:
                return k
        k += 1
    raise CapExceeded(
        f"pool would exceed {cap} containers before meeting the waiting target"
    )


def wait_budget(deadline: float, profile, percentile: float = DEFAULT_PERCENTILE) -> WaitTarget:
    """Convert a response-time deadline into a waiting-time target.

    t = deadline - s_q, where s_q is the `percentile` quantile of the
    function's service-time distribution at full container size (taken from
    `profile.service_quantile`). Raises InfeasibleDeadline when the service
    tail alone exceeds the deadline, i.e. no container count can help.
    """
    if deadline <= 0:
        raise InvalidParameter(f"deadline must be > 0, got {deadline}")
    s_hi = profile.service_quantile(percentile)
    t = deadline - s_hi
    if t <= 0:
        raise InfeasibleDeadline(
            f"deadline {deadline}s <= service-time p{percentile * 100:g} of {s_hi:.6g}s"
        )
    return WaitTarget(t=t, percentile=percentile)
