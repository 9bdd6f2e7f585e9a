"""Plaintext brute-force query evaluator.

The reference the encrypted pipeline is checked against: scans cleartext
rows, applies the predicate directly, and folds the aggregate with the same
tie-breaking and empty-set conventions as the processor.  Kept free of any
crypto or store import so the two routes share nothing but the row type.
"""

from __future__ import annotations

from .grid import PlainTuple
from .processor import NO_MATCH, Aggregate, Query


def matching_rows(rows: list[PlainTuple], query: Query) -> list[PlainTuple]:
    out = []
    for r in rows:
        if not (query.t_lo <= r.time <= query.t_hi):
            continue
        if query.location is not None and r.location != query.location:
            continue
        if query.observation is not None and r.observation != query.observation:
            continue
        out.append(r)
    return out


def _numeric(row: PlainTuple, column: str | None) -> int:
    if column in (None, "observation"):
        return int(row.observation)
    for k, v in row.extras:
        if k == column:
            return int(v)
    raise KeyError(f"row has no column {column!r}")


def evaluate(rows: list[PlainTuple], query: Query):
    matches = matching_rows(rows, query)
    agg: Aggregate = query.aggregate
    if agg.kind == "count":
        return len(matches)
    if agg.kind == "select":
        return sorted(matches, key=lambda r: (r.time, r.location, r.observation))
    if agg.kind == "topk":
        counts: dict[str, int] = {}
        for r in matches:
            counts[r.location] = counts.get(r.location, 0) + 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return ranked[:agg.k]
    values = [_numeric(r, agg.column) for r in matches]
    if agg.kind == "sum":
        return sum(values)
    if not values:
        return NO_MATCH
    if agg.kind == "min":
        return min(values)
    if agg.kind == "max":
        return max(values)
    return sum(values) / len(values)
