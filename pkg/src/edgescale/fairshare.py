"""Weighted fair shares under overload: guaranteed minimums and water-filling.

Capacity here is an abstract quantity (the allocator uses vCPUs, the tests
mostly use whole containers). All results are floored to multiples of
`quantum` so the caller can never overcommit; leftover whole quanta are handed
out by largest fractional remainder, ties broken by function id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import EmptyUser, InvalidParameter

_EPS = 1e-9


@dataclass(frozen=True)
class WeightTree:
    """Two-level weight hierarchy: users own functions, both carry weights."""

    users: tuple  # of (user_id, user_weight, ((function_id, weight), ...))

    def __post_init__(self):
        seen = set()
        users = []
        for user_id, user_weight, functions in self.users:
            if user_weight <= 0:
                raise InvalidParameter(f"user {user_id!r} weight must be > 0")
            functions = tuple((str(f), float(w)) for f, w in functions)
            if not functions:
                raise EmptyUser(f"user {user_id!r} has no functions")
            for fid, w in functions:
                if w <= 0:
                    raise InvalidParameter(f"function {fid!r} weight must be > 0")
                if fid in seen:
                    raise InvalidParameter(f"function id {fid!r} appears twice")
                seen.add(fid)
            users.append((str(user_id), float(user_weight), functions))
        object.__setattr__(self, "users", tuple(users))


def flatten_weights(tree: WeightTree) -> dict:
    """Effective per-function weight: user share split by in-user weight.

    The weights of one user's functions sum to that user's weight, so the
    grand total equals the sum of user weights.
    """
    out = {}
    for _, user_weight, functions in tree.users:
        in_user_total = sum(w for _, w in functions)
        for fid, w in functions:
            out[fid] = user_weight * w / in_user_total
    return out


def _floor_quanta(x: float, quantum: float) -> float:
    return math.floor(x / quantum + _EPS) * quantum


def guaranteed_shares(weights: dict, capacity: float, quantum: float = 1.0) -> dict:
    """Guaranteed minimum per function: floor(w_i / sum(w) * C) in quanta."""
    if capacity < 0:
        raise InvalidParameter(f"capacity must be >= 0, got {capacity}")
    total_w = sum(weights.values())
    return {
        fid: _floor_quanta(capacity * w / total_w, quantum)
        for fid, w in weights.items()
    }


def detect_overload(demands: dict, capacity: float) -> bool:
    """True iff aggregate demand strictly exceeds capacity (equality is fine)."""
    return sum(demands.values()) > capacity + _EPS


@dataclass(frozen=True)
class ShareResult:
    guaranteed: dict
    adjusted: dict
    overloaded: bool


def adjust_allocations(
    demands: dict, weights: dict, capacity: float, quantum: float = 1.0
) -> ShareResult:
    """Cap demands to fair shares under overload; pass them through otherwise.

    Well-behaved functions (demand <= guaranteed share) keep their demand.
    The remaining capacity is split across the overloaded ones in proportion
    to weight, water-filling: anyone whose proportional share exceeds their
    demand is capped there and the surplus re-split among the rest. Floors to
    `quantum` happen last, with leftover quanta going to the largest
    fractional remainders (ties by function id).
    """
    if any(d < 0 for d in demands.values()):
        raise InvalidParameter("demands must be >= 0")
    guar = guaranteed_shares(weights, capacity, quantum)
    if not detect_overload(demands, capacity):
        return ShareResult(guaranteed=guar, adjusted=dict(demands), overloaded=False)

    adjusted = {}
    over = []
    budget = capacity
    for fid, demand in demands.items():
        if demand <= guar[fid] + _EPS:
            adjusted[fid] = demand
            budget -= demand
        else:
            over.append(fid)

    # continuous water-filling over the overloaded set
    shares = {}
    active = list(over)
    while active:
        w_active = sum(weights[f] for f in active)
        capped = []
        for fid in active:
            prop = budget * weights[fid] / w_active
            if prop >= demands[fid] - _EPS:
                capped.append(fid)
        if not capped:
            for fid in active:
                shares[fid] = budget * weights[fid] / w_active
            break
        for fid in capped:
            shares[fid] = demands[fid]
            budget -= demands[fid]
            active.remove(fid)

    # floor to quanta, then hand leftover quanta to the biggest remainders
    leftover = sum(shares.values())
    for fid in over:
        adjusted[fid] = _floor_quanta(shares[fid], quantum)
        leftover -= adjusted[fid]
    by_remainder = sorted(
        over, key=lambda f: (-(shares[f] - adjusted[f]), f)
    )
    for fid in by_remainder:
        if leftover < quantum - _EPS:
            break
        if adjusted[fid] + quantum <= demands[fid] + _EPS:
            adjusted[fid] += quantum
            leftover -= quantum

    return ShareResult(guaranteed=guar, adjusted=adjusted, overloaded=True)
