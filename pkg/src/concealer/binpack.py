"""Padding combinatorics: packing cell-ids into fixed-size bins, disjoint
fake-id padding, bound certificates, range-bin sizing, and super-bins.

Every retrieval unit the processor fetches is shaped here.  Bins are padded
to identical size with globally disjoint fake-id ranges (shared fake ids
across bins would reveal true bin fill to anyone watching which rows are
fetched twice).  All functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import BoundViolation, CapacityError, DivisibilityError


@dataclass(frozen=True)
class PackInput:
    cid: int
    weight: int


@dataclass(frozen=True)
class Bin:
    """One fixed-size retrieval unit: member ids plus a half-open fake range."""

    id: int
    members: tuple[int, ...]
    real_count: int
    fake_lo: int
    fake_hi: int
    capacity: int

    @property
    def n_fake(self) -> int:
        return self.fake_hi - self.fake_lo

    @property
    def fake_ids(self) -> range:
        return range(self.fake_lo, self.fake_hi)


@dataclass(frozen=True)
class BinPlan:
    bins: tuple[Bin, ...]
    capacity: int
    total_fake: int

    def bin_of(self, cid: int) -> Bin:
        for b in self.bins:
            if cid in b.members:
                return b
        raise KeyError(f"cid {cid} not in any bin")


@dataclass(frozen=True)
class BoundCertificate:
    n: int
    capacity: int
    n_bins: int
    total_fake: int
    strict: bool
    bins_bound_ok: bool
    fake_bound_ok: bool


def _sorted_inputs(inputs: Iterable[PackInput]) -> list[PackInput]:
    # Weight descending; equal weights by cid ascending for determinism.
    return sorted(inputs, key=lambda it: (-it.weight, it.cid))


def ffd_pack(inputs: Iterable[PackInput], capacity: int) -> list[list[int]]:
    """First-fit decreasing: place each id in the first bin it fits.

    Zero-weight ids still get placed.  All bins except at most one end up at
    least half full.
    """
    items = _sorted_inputs(inputs)
    _check_capacity(items, capacity)
    bins: list[list[int]] = []
    loads: list[int] = []
    for it in items:
        for i, load in enumerate(loads):
            if load + it.weight <= capacity:
                bins[i].append(it.cid)
                loads[i] += it.weight
                break
        else:
            bins.append([it.cid])
            loads.append(it.weight)
    return bins


def bfd_pack(inputs: Iterable[PackInput], capacity: int) -> list[list[int]]:
    """Best-fit decreasing: place each id in the tightest bin it fits."""
    items = _sorted_inputs(inputs)
    _check_capacity(items, capacity)
    bins: list[list[int]] = []
    loads: list[int] = []
    for it in items:
        best = -1
        best_left = None
        for i, load in enumerate(loads):
            left = capacity - load - it.weight
            if left >= 0 and (best_left is None or left < best_left):
                best, best_left = i, left
        if best < 0:
            bins.append([it.cid])
            loads.append(it.weight)
        else:
            bins[best].append(it.cid)
            loads[best] += it.weight
    return bins


def _check_capacity(items: Sequence[PackInput], capacity: int) -> None:
    for it in items:
        if it.weight < 0:
            raise ValueError(f"negative weight for cid {it.cid}")
        if it.weight > capacity:
            raise CapacityError(
                f"cid {it.cid} weighs {it.weight}, above capacity {capacity}"
            )


def equi_size(
    bins: Sequence[Sequence[int]], capacity: int, weights: Mapping[int, int]
) -> BinPlan:
    """Pad every packed bin to exactly ``capacity`` rows with consecutive,
    globally disjoint fake-id ranges (ids are 1-based and dense)."""
    out: list[Bin] = []
    next_fake = 1
    for i, members in enumerate(bins):
        real = sum(weights[cid] for cid in members)
        need = capacity - real
        out.append(
            Bin(
                id=i,
                members=tuple(members),
                real_count=real,
                fake_lo=next_fake,
                fake_hi=next_fake + need,
                capacity=capacity,
            )
        )
        next_fake += need
    return BinPlan(bins=tuple(out), capacity=capacity, total_fake=next_fake - 1)


def build_plan(
    counts: Mapping[int, int], capacity: int | None = None, packer: str = "ffd"
) -> BinPlan:
    """Pack per-id counts and equi-size the result in one step.

    Capacity defaults to the largest count, the smallest size that avoids
    splitting any id across bins.
    """
    inputs = [PackInput(cid, w) for cid, w in counts.items()]
    if capacity is None:
        capacity = max((it.weight for it in inputs), default=0)
    pack = ffd_pack if packer == "ffd" else bfd_pack
    return equi_size(pack(inputs, capacity), capacity, counts)


def certify_bounds(plan: BinPlan, n: int) -> BoundCertificate:
    """Check the plan against its worst-case guarantees: at most 2n/|b| bins
    and at most n + |b|/2 fake rows.

    The guarantees assume n well above |b|; below 10x we allow one bin of
    slack.  A violation signals an implementation bug, never expected on
    valid packer output.
    """
    cap = plan.capacity
    n_bins = len(plan.bins)
    strict = cap > 0 and n >= 10 * cap
    if strict:
        bins_ok = n_bins <= 2 * n / cap
        fake_ok = plan.total_fake <= n + cap / 2
    else:
        bins_ok = n_bins <= math.ceil(2 * n / cap) + 1 if cap > 0 else n_bins <= 1
        fake_ok = plan.total_fake <= n + cap / 2 + cap
    cert = BoundCertificate(
        n=n,
        capacity=cap,
        n_bins=n_bins,
        total_fake=plan.total_fake,
        strict=strict,
        bins_bound_ok=bins_ok,
        fake_bound_ok=fake_ok,
    )
    if not (bins_ok and fake_ok):
        raise BoundViolation(f"packing bounds violated: {cert}")
    return cert


def ebpb_bin_size(column_counts: Sequence[Sequence[int]], window: int) -> int:
    """Smallest bin size that fits any ``window`` cells of one column: the
    largest top-``window`` sum over all columns."""
    if window < 1:
        raise ValueError("window must be positive")
    best = 0
    for col in column_counts:
        top = sorted(col, reverse=True)[:window]
        best = max(best, sum(top))
    return best


@dataclass(frozen=True)
class IntervalPlan:
    """Fixed-length discretization of an ordered value domain.

    Interval i (1-based) covers values [(i-1)*length+1 .. i*length], the last
    one possibly short.  Bin size is the largest per-interval total, so every
    interval is fetched at the same width.
    """

    n_values: int
    length: int
    bin_size: int

    @property
    def n_intervals(self) -> int:
        return math.ceil(self.n_values / self.length)

    def values_of(self, interval: int) -> range:
        lo = (interval - 1) * self.length + 1
        return range(lo, min(lo + self.length, self.n_values + 1))

    def interval_of(self, value: int) -> int:
        if not 1 <= value <= self.n_values:
            raise ValueError(f"value {value} outside domain 1..{self.n_values}")
        return (value - 1) // self.length + 1

    def intervals_for_range(self, lo: int, hi: int) -> list[int]:
        if lo > hi:
            raise ValueError("empty range")
        return list(range(self.interval_of(lo), self.interval_of(hi) + 1))


def interval_bins(
    n_values: int, length: int, per_value_counts: Sequence[int]
) -> IntervalPlan:
    if length < 1:
        raise ValueError("interval length must be positive")
    if len(per_value_counts) != n_values:
        raise ValueError("per-value counts length mismatch")
    plan = IntervalPlan(n_values=n_values, length=length, bin_size=0)
    sizes = [
        sum(per_value_counts[v - 1] for v in plan.values_of(i))
        for i in range(1, plan.n_intervals + 1)
    ]
    return IntervalPlan(n_values=n_values, length=length, bin_size=max(sizes, default=0))


@dataclass(frozen=True)
class SuperBinPlan:
    f: int
    assignment: tuple[tuple[int, ...], ...]  # super-bin -> ordered bin indexes

    def super_of(self, bin_id: int) -> int:
        for s, members in enumerate(self.assignment):
            if bin_id in members:
                return s
        raise KeyError(f"bin {bin_id} not in any super-bin")


def build_super_bins(unique_counts: Sequence[int], f: int) -> SuperBinPlan:
    """Group bins so each group is fetched a near-equal number of times under
    a uniform per-value workload.

    Bins are sorted by unique-value count descending (ties by index).  The f
    largest seed one group each; every later round hands the next bin to the
    group that has the fewest bins and, among those, the smallest accumulated
    unique-value total (ties to the lowest group index).
    """
    n = len(unique_counts)
    if f < 1 or n % f != 0:
        raise DivisibilityError(f"{f} super-bins do not evenly divide {n} bins")
    order = sorted(range(n), key=lambda i: (-unique_counts[i], i))
    groups: list[list[int]] = [[] for _ in range(f)]
    totals = [0] * f
    for idx in order:
        fewest = min(len(g) for g in groups)
        candidates = [s for s in range(f) if len(groups[s]) == fewest]
        target = min(candidates, key=lambda s: (totals[s], s))
        groups[target].append(idx)
        totals[target] += unique_counts[idx]
    return SuperBinPlan(f=f, assignment=tuple(tuple(g) for g in groups))


def super_bin_totals(plan: SuperBinPlan, unique_counts: Sequence[int]) -> list[int]:
    """Fetch count per super-bin under a uniform per-unique-value workload."""
    return [sum(unique_counts[i] for i in members) for members in plan.assignment]
