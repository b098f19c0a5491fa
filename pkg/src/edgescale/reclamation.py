"""Resource reclamation: container termination and incremental CPU deflation.

A ServiceProfile describes how fast a function runs at full container size and
how that degrades when the container's CPU is deflated. The default
degradation curve follows the measured pattern for typical functions: taking
up to 30% of the CPU away costs only ~10% of throughput (allocation slack),
after which throughput falls roughly linearly until it is simply proportional
to the CPU fraction at 70% deflation and beyond.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import count

import numpy as np

from .errors import InvalidFraction, InvalidParameter, ParseError, SchemaError

DISTRIBUTIONS = ("exponential", "deterministic", "empirical")

# (cpu_fraction, rate multiplier) anchors; linear in between, proportional
# below the last anchor
DEFAULT_CURVE = ((0.0, 0.0), (0.3, 0.3), (0.7, 0.9), (1.0, 1.0))


@dataclass(frozen=True)
class ServiceProfile:
    """Service-time behaviour of one function across container sizes."""

    base_rate: float
    distribution: str = "exponential"
    curve: tuple = DEFAULT_CURVE
    slack: float = 0.3
    samples: tuple = ()

    def __post_init__(self):
        if self.base_rate <= 0:
            raise InvalidParameter(f"base rate must be > 0, got {self.base_rate}")
        if self.distribution not in DISTRIBUTIONS:
            raise InvalidParameter(
                f"distribution must be one of {DISTRIBUTIONS}, got {self.distribution!r}"
            )
        if self.distribution == "empirical":
            samples = tuple(float(s) for s in self.samples)
            if not samples or any(s <= 0 for s in samples):
                raise InvalidParameter("empirical profile needs positive samples")
            object.__setattr__(self, "samples", samples)
        curve = tuple((float(f), float(m)) for f, m in self.curve)
        fracs = [f for f, _ in curve]
        mults = [m for _, m in curve]
        if fracs != sorted(fracs) or len(set(fracs)) != len(fracs):
            raise InvalidParameter("curve fractions must be strictly increasing")
        if mults != sorted(mults):
            raise InvalidParameter("curve multiplier must be nonincreasing as CPU shrinks")
        if abs(self.multiplier_at(curve, 1.0) - 1.0) > 1e-9:
            raise InvalidParameter("degradation curve must give multiplier 1.0 at full size")
        object.__setattr__(self, "curve", curve)

    @staticmethod
    def multiplier_at(curve, fraction: float) -> float:
        fracs = [f for f, _ in curve]
        mults = [m for _, m in curve]
        return float(np.interp(fraction, fracs, mults))

    def multiplier(self, cpu_fraction: float) -> float:
        if not 0 < cpu_fraction <= 1:
            raise InvalidFraction(f"cpu fraction must be in (0, 1], got {cpu_fraction}")
        return self.multiplier_at(self.curve, cpu_fraction)

    def service_quantile(self, q: float) -> float:
        """Quantile of the service-time distribution at full container size."""
        if not 0 < q < 1:
            raise InvalidParameter(f"quantile must be in (0, 1), got {q}")
        if self.distribution == "deterministic":
            return 1.0 / self.base_rate
        if self.distribution == "exponential":
            return -math.log(1.0 - q) / self.base_rate
        return float(np.quantile(np.array(self.samples), q))

    def mean_service_time(self) -> float:
        if self.distribution == "empirical":
            return float(np.mean(self.samples))
        return 1.0 / self.base_rate


def service_rate(profile: ServiceProfile, cpu_fraction: float) -> float:
    """Effective request rate of a container running at `cpu_fraction`."""
    return profile.base_rate * profile.multiplier(cpu_fraction)


def load_profile_curve(path) -> tuple:
    """Read (cpu_fraction, mean service seconds) rows into a multiplier curve.

    The multiplier at fraction f is time(1.0)/time(f), so the file must
    include a fraction-1.0 row to normalise against.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip().lower() in ("cpu_fraction", "fraction"):
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 columns, got {len(row)}", line=lineno)
            try:
                frac, seconds = float(row[0]), float(row[1])
            except ValueError as exc:
                raise ParseError(f"bad number: {exc}", line=lineno) from None
            if not 0 < frac <= 1:
                raise SchemaError(f"line {lineno}: cpu_fraction {frac} outside (0, 1]")
            if seconds <= 0:
                raise SchemaError(f"line {lineno}: service time must be > 0")
            rows.append((frac, seconds))
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    rows.sort()
    full = [s for f, s in rows if abs(f - 1.0) < 1e-9]
    if not full:
        raise SchemaError(f"{path}: missing the cpu_fraction=1.0 row to normalise against")
    base = full[0]
    return tuple((f, base / s) for f, s in rows)


_container_ids = count(1)


@dataclass
class ContainerState:
    """One running container; CPU can deflate within [1 - tau, 1], memory is fixed."""

    function_id: str
    node_id: int
    standard_vcpu: float
    memory_mb: float
    profile: ServiceProfile
    cpu_fraction: float = 1.0
    lazy_marked: bool = False
    ready_at: float = 0.0
    id: int = field(default_factory=lambda: next(_container_ids))

    def __post_init__(self):
        if not 0 < self.cpu_fraction <= 1:
            raise InvalidFraction(f"cpu fraction must be in (0, 1], got {self.cpu_fraction}")

    @property
    def allocated_vcpu(self) -> float:
        return self.standard_vcpu * self.cpu_fraction

    @property
    def effective_rate(self) -> float:
        return service_rate(self.profile, self.cpu_fraction)


@dataclass(frozen=True)
class Terminate:
    container_id: int


@dataclass(frozen=True)
class SetFraction:
    container_id: int
    fraction: float


def _by_allocation(containers):
    return sorted(containers, key=lambda c: (c.allocated_vcpu, c.id))


def reclaim_by_termination(containers, target_vcpu: float) -> list:
    """Terminate smallest containers first until total vCPU <= target.

    An exact fit is not always possible; the survivors' total is the largest
    achievable value <= target, which may strand a sub-container fragment.
    """
    actions = []
    total = sum(c.allocated_vcpu for c in containers)
    for victim in _by_allocation(containers):
        if total <= target_vcpu + 1e-9:
            break
        actions.append(Terminate(victim.id))
        total -= victim.allocated_vcpu
    return actions


def reclaim_by_deflation(containers, target_vcpu: float, tau: float, step: float) -> list:
    """Uniformly deflate the pool in `step` increments until total vCPU <= target.

    Every container steps down together, bounded below by fraction 1 - tau.
    If the bound is hit before enough CPU is reclaimed, smallest containers
    are terminated until the survivors can reach the target, and the
    survivors settle at the uniform on-grid fraction that lands the total
    just under the target (no stranded fragment).
    """
    if not 0 < tau < 1:
        raise InvalidParameter(f"tau must be in (0, 1), got {tau}")
    if step <= 0:
        raise InvalidParameter(f"step must be > 0, got {step}")
    pool = list(containers)
    total = sum(c.allocated_vcpu for c in pool)
    if total <= target_vcpu + 1e-9 or not pool:
        return []

    floor_frac = 1.0 - tau
    fractions = {c.id: c.cpu_fraction for c in pool}
    sizes = {c.id: c.standard_vcpu for c in pool}

    def pool_total(fracs, members):
        return sum(fracs[c.id] * sizes[c.id] for c in members)

    while pool_total(fractions, pool) > target_vcpu + 1e-9:
        stepped = False
        for c in pool:
            if fractions[c.id] > floor_frac + 1e-9:
                fractions[c.id] = max(floor_frac, fractions[c.id] - step)
                stepped = True
        if not stepped:
            break

    actions = []
    survivors = list(pool)
    if pool_total(fractions, pool) > target_vcpu + 1e-9:
        # fully deflated and still over: shed smallest containers, then relax
        # the survivors to the on-grid fraction that fits the target exactly
        for victim in _by_allocation(pool):
            if sum(floor_frac * sizes[c.id] for c in survivors) <= target_vcpu + 1e-9:
                break
            actions.append(Terminate(victim.id))
            survivors.remove(victim)
        if survivors:
            std_total = sum(sizes[c.id] for c in survivors)
            exact = target_vcpu / std_total
            on_grid = 1.0 - step * math.ceil((1.0 - exact) / step - 1e-9)
            frac = min(1.0, max(floor_frac, on_grid))
            for c in survivors:
                fractions[c.id] = frac

    for c in survivors:
        if abs(fractions[c.id] - c.cpu_fraction) > 1e-12:
            actions.append(SetFraction(c.id, fractions[c.id]))
    return actions


def reclaim_by_deflation_grouped(containers, target_vcpu: float, tau: float, step: float) -> list:
    """Node-aware deflation: deflate co-located containers together, deepest first.

    Uniform whole-pool deflation spreads the reclaimed CPU as slivers across
    every node, where none of it can host a new container. Processing one
    node-group at a time (most reclaimable first) concentrates the freed
    capacity so the under-provisioned function's creates can actually land.
    Falls back to termination, like the uniform variant, when even full
    deflation cannot reach the target.
    """
    if not 0 < tau < 1:
        raise InvalidParameter(f"tau must be in (0, 1), got {tau}")
    if step <= 0:
        raise InvalidParameter(f"step must be > 0, got {step}")
    pool = list(containers)
    total = sum(c.allocated_vcpu for c in pool)
    if total <= target_vcpu + 1e-9 or not pool:
        return []

    floor_frac = 1.0 - tau
    fractions = {c.id: c.cpu_fraction for c in pool}
    sizes = {c.id: c.standard_vcpu for c in pool}

    groups: dict = {}
    for c in pool:
        groups.setdefault(c.node_id, []).append(c)

    def reclaimable(node):
        return sum((fractions[c.id] - floor_frac) * sizes[c.id] for c in groups[node])

    processed: set = set()
    while total > target_vcpu + 1e-9 and len(processed) < len(groups):
        remaining = total - target_vcpu
        candidates = [n for n in groups if n not in processed and reclaimable(n) > 1e-9]
        covering = [n for n in candidates if reclaimable(n) >= remaining - 1e-9]
        if not covering:
            # releasing across several nodes would strand the freed CPU as
            # sub-container slivers nothing can be placed into; terminate
            # instead (the paper's fallback, taken one case earlier)
            break
        # smallest group that covers the whole release: the freed CPU stays
        # contiguous and bigger groups stay in reserve
        node = min(covering, key=lambda n: (reclaimable(n), n))
        members = sorted(groups[node], key=lambda c: c.id)
        # one step-quantum at a time, round-robin, stopping at the target so
        # nothing extra is stranded
        while total > target_vcpu + 1e-9:
            stepped = False
            for c in members:
                if total <= target_vcpu + 1e-9:
                    break
                if fractions[c.id] > floor_frac + 1e-9:
                    new = max(floor_frac, fractions[c.id] - step)
                    total -= (fractions[c.id] - new) * sizes[c.id]
                    fractions[c.id] = new
                    stepped = True
            if not stepped:
                break
        processed.add(node)

    actions = []
    survivors = list(pool)
    if total > target_vcpu + 1e-9:
        headroom = sum(reclaimable(n) for n in groups)
        if total - target_vcpu <= headroom + 1e-9:
            # deflation could cover the release but only as scattered slivers:
            # shed whole containers instead so the freed CPU is placeable
            for victim in _by_allocation(pool):
                if total <= target_vcpu + 1e-9:
                    break
                actions.append(Terminate(victim.id))
                survivors.remove(victim)
                total -= fractions[victim.id] * sizes[victim.id]
        else:
            # genuinely out of deflation headroom: keep as many containers as
            # the floor allows
            for victim in _by_allocation(pool):
                if sum(floor_frac * sizes[c.id] for c in survivors) <= target_vcpu + 1e-9:
                    break
                actions.append(Terminate(victim.id))
                survivors.remove(victim)
        # relax the survivors to the on-grid uniform fraction that refills the
        # pool up to the target exactly
        if survivors:
            std_total = sum(sizes[c.id] for c in survivors)
            exact = target_vcpu / std_total
            on_grid = 1.0 - step * math.ceil((1.0 - exact) / step - 1e-9)
            frac = min(1.0, max(floor_frac, on_grid))
            if frac * std_total <= target_vcpu + 1e-9:
                for c in survivors:
                    fractions[c.id] = frac

    for c in survivors:
        if abs(fractions[c.id] - c.cpu_fraction) > 1e-12:
            actions.append(SetFraction(c.id, fractions[c.id]))
    return actions


def plan_inflation(containers, target_vcpu: float, step: float) -> list:
    """Uniformly re-inflate deflated containers toward the target, never past it.

    Inflation is free (no cold start), so restoring deflated capacity always
    precedes creating new containers when a pool needs to grow.
    """
    pool = [c for c in containers if c.cpu_fraction < 1.0 - 1e-12]
    if not pool:
        return []
    fractions = {c.id: c.cpu_fraction for c in pool}
    total = sum(c.allocated_vcpu for c in containers)
    while True:
        stepped = False
        for c in pool:
            if fractions[c.id] >= 1.0 - 1e-12:
                continue
            inc = (min(1.0, fractions[c.id] + step) - fractions[c.id]) * c.standard_vcpu
            if total + inc > target_vcpu + 1e-9:
                continue
            fractions[c.id] = min(1.0, fractions[c.id] + step)
            total += inc
            stepped = True
        if not stepped:
            break
    return [
        SetFraction(c.id, fractions[c.id])
        for c in pool
        if abs(fractions[c.id] - c.cpu_fraction) > 1e-12
    ]
