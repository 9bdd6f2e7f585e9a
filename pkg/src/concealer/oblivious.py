"""Data-independent sorting and branchless flag machinery.

The processor's side-channel-hardened paths route every comparison through
the helpers here: a bitonic network whose compare-exchange sequence is a
function of the input length alone, and flag updates computed with
constant-time equality plus arithmetic selects instead of branches.  A
trace recorder captures the comparator and comparison schedule so tests can
assert it never depends on the data.

This gives algorithmic obliviousness - the operation trace is
data-independent - not microarchitectural constant-time execution.
"""

from __future__ import annotations

import hmac
from dataclasses import dataclass, field


@dataclass
class Trace:
    """Recorded schedule of data-touching events, for equality checks."""

    events: list[tuple] = field(default_factory=list)

    def comparator(self, i: int, j: int) -> None:
        self.events.append(("cmp", i, j))

    def match(self, row: int, flt: int) -> None:
        self.events.append(("match", row, flt))


def ct_equal(a: bytes, b: bytes) -> int:
    """Constant-time bytes equality, as 0/1."""
    return int(hmac.compare_digest(a, b))


def _ceil_pow2(n: int) -> int:
    size = 1
    while size < n:
        size *= 2
    return size


def sort_by_flag_desc(items: list[tuple[int, object]], trace: Trace | None = None) -> list[tuple[int, object]]:
    """Sort (flag, payload) pairs so higher flags come first, using a bitonic
    network padded to a power of two.

    The compare-exchange schedule depends only on ``len(items)``; each
    exchange is an arithmetic select on the flag comparison, not a branch.
    """
    n = len(items)
    if n == 0:
        return []
    size = _ceil_pow2(n)
    # Padding sorts after every real flag (real flags are nonnegative).
    arr: list[tuple[int, object]] = list(items) + [(-1, None)] * (size - n)
    for k_stage in _bitonic_schedule(size):
        for i, j, ascending in k_stage:
            a, b = arr[i], arr[j]
            # Descending output overall: swap when the pair is out of order
            # for this comparator's direction.
            swap = (a[0] < b[0]) if not ascending else (a[0] > b[0])
            s = int(swap)
            pair = (a, b)
            arr[i] = pair[s]
            arr[j] = pair[1 - s]
            if trace is not None:
                trace.comparator(i, j)
    return arr[:n]


def _bitonic_schedule(size: int):
    """Comparator stages of the classic iterative bitonic network over
    ``size`` lanes (size must be a power of two)."""
    k = 2
    while k <= size:
        j = k // 2
        while j >= 1:
            stage = []
            for i in range(size):
                partner = i ^ j
                if partner > i:
                    # Direction alternates by k-block; we emit descending
                    # blocks so the final pass leaves a descending array.
                    ascending = bool(i & k)
                    stage.append((i, partner, ascending))
            yield stage
            j //= 2
        k *= 2


def match_flags(
    row_fields: list[bytes],
    filters: list[bytes],
    trace: Trace | None = None,
) -> list[int]:
    """Flag each row that equals any filter, comparing every row against
    every filter with constant-time equality and a select that keeps an
    earlier match."""
    flags = []
    for ri, field_bytes in enumerate(row_fields):
        v = 0
        for fi, flt in enumerate(filters):
            m = ct_equal(field_bytes, flt)
            v = v | m
            if trace is not None:
                trace.match(ri, fi)
        flags.append(v)
    return flags


def and_flags(a: list[int], b: list[int]) -> list[int]:
    return [x & y for x, y in zip(a, b)]
