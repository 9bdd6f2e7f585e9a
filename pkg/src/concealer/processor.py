"""Trusted query processor: a software stand-in for a secure enclave.

Holds the only copy of the master secret on the service-provider side,
talks to the untrusted store through a narrow interface (metadata fetch,
multi-get, rewrite), and answers point, range, and multi-epoch aggregate
queries while fetching a fixed number of rows per query class.

Per-query flow: authenticate, map the predicate to grid cells, pick the
fixed-size retrieval unit (bin, range bin, interval slab, or super-bin),
emit one trapdoor per candidate row, optionally verify hash chains over the
fetched rows, flag matches by exact ciphertext comparison, and aggregate -
decrypting only flagged rows.  With ``oblivious=True`` trapdoor creation
and filtering run through data-independent sorting and branchless selects.

State that must survive across queries (bin plans, per-bin key versions
after rewrites, recomputed chain tags) lives inside this object, never at
the store.
"""

from __future__ import annotations

import hmac as _hmac
import math
import os
import random
from dataclasses import dataclass, field

from . import oblivious
from .binpack import (
    BinPlan,
    IntervalPlan,
    SuperBinPlan,
    build_plan,
    build_super_bins,
    ebpb_bin_size,
    interval_bins,
)
from .crypto import (
    FAKE_MARKER,
    FIELD_WIDTH,
    RECORD_WIDTH,
    EpochKey,
    MasterSecret,
    chain_digest,
    decode_ids,
    derive_epoch_key,
    derive_registry_key,
    det_decrypt,
    det_encrypt,
    grid_hash,
    pad_block,
    rnd_decrypt,
    rnd_encrypt,
    rnd_filler_len,
    unpad_block,
)
from .encryptor import (
    dummy_index_key,
    el_plain,
    eo_plain,
    fake_index_key,
    index_key,
    parse_record,
)
from .errors import (
    AuthenticationFailure,
    AuthFailure,
    AuthorizationFailure,
    ConfigError,
    InsufficientFakes,
    IntegrityFailure,
    UnknownEpoch,
    UnsupportedVerification,
)
from .grid import Grid, GridConfig, PlainTuple
from .oblivious import Trace
from .store import MISSING_ROW, Store
from .wire import EncryptedRow, unpack_cell_vector, unpack_counter_vector, unpack_registry, unpack_tags


class NoMatch:
    """Result marker for order aggregates over an empty match set."""

    __slots__ = ()

    def __repr__(self):
        return "NoMatch"

    def __eq__(self, other):
        return isinstance(other, NoMatch)

    def __hash__(self):
        return hash("NoMatch")


NO_MATCH = NoMatch()

AGGREGATE_KINDS = ("count", "sum", "min", "max", "topk", "avg", "select")


@dataclass(frozen=True)
class Aggregate:
    kind: str
    column: str | None = None  # numeric column for sum/min/max/avg
    k: int = 3  # result size for topk

    def __post_init__(self):
        if self.kind not in AGGREGATE_KINDS:
            raise ValueError(f"unknown aggregate {self.kind!r}")


@dataclass(frozen=True)
class Query:
    """One predicate shape: location, observation, or both, always with a
    closed time range (a point is a width-zero range)."""

    aggregate: Aggregate
    t_lo: int
    t_hi: int
    location: str | None = None
    observation: str | None = None
    epochs: tuple[int, int] | None = None  # inclusive eid range for multi-epoch

    def __post_init__(self):
        if self.location is None and self.observation is None:
            raise ValueError("query needs a location or observation predicate")
        if self.t_lo > self.t_hi:
            raise ValueError("empty time range")


@dataclass(frozen=True)
class QueryResult:
    value: object
    rows_fetched: int
    verified: bool | None  # None when verification was not requested


@dataclass(frozen=True)
class Session:
    user_id: str


@dataclass
class _EpochState:
    eid: int
    start: int
    duration: int
    grid: Grid
    plan: BinPlan
    n_fake_pool: int
    key_version: dict[int, int] = field(default_factory=dict)  # bin id -> counter
    rewrite_counter: int = 0
    tag_plain: dict[int, tuple[bytes, bytes, bytes]] | None = None
    # (cid -> [(cell_index, count, counter_offset)]) in canonical cell order.
    cell_blocks: dict[int, list[tuple[int, int, int]]] = field(default_factory=dict)
    ebpb_window: int = 0
    ebpb_bsize: int = 0
    ebpb_fakes: dict[tuple, tuple[int, ...]] = field(default_factory=dict)
    ebpb_cursor: int = 0
    winsec: dict[int, tuple[IntervalPlan, dict[int, tuple[int, ...]]]] = field(default_factory=dict)
    super_plan: SuperBinPlan | None = None


class TrustedProcessor:
    def __init__(
        self,
        master: MasterSecret,
        store: Store,
        oblivious: bool = False,
        verify: bool = False,
        super_bins: int | None = None,
        decoy_rng: random.Random | None = None,
    ):
        self.master = master
        self.store = store
        self.oblivious = oblivious
        self.verify_default = verify
        self.super_bins = super_bins
        self._rng = decoy_rng if decoy_rng is not None else random.SystemRandom()
        self._states: dict[int, _EpochState] = {}
        self._registry: dict[str, bytes] = {}
        self.last_trace: Trace | None = None

    # -- registry and sessions ------------------------------------------------

    def load_registry(self, blob: bytes) -> int:
        records = unpack_registry(rnd_decrypt(derive_registry_key(self.master), blob))
        self._registry = dict(records)
        return len(records)

    def authenticate(self, user_id: str, credential: bytes) -> Session:
        verifier = self._registry.get(user_id)
        if verifier is None:
            # Compare against a dummy so unknown users cost the same.
            _hmac.compare_digest(credential, bytes(32))
            raise AuthFailure(f"unknown user {user_id!r}")
        if not _hmac.compare_digest(verifier, credential):
            raise AuthFailure("bad credential")
        return Session(user_id=user_id)

    def _authorize(self, session: Session, query: Query) -> None:
        # Individualized queries run only against the caller's own readings.
        if query.observation is not None and query.observation != session.user_id:
            raise AuthorizationFailure(
                "observation predicates are restricted to the querying identity"
            )

    # -- per-epoch state -------------------------------------------------------

    def _key(self, eid: int, version: int) -> EpochKey:
        return derive_epoch_key(self.master, eid, version)

    def _state(self, eid: int) -> _EpochState:
        if eid in self._states:
            return self._states[eid]
        header = self.store.fetch_header(eid)
        enc_cells, enc_counts, enc_tags = self.store.fetch_metadata(eid)
        key = self._key(eid, 0)
        pairs = unpack_cell_vector(rnd_decrypt(key, enc_cells))
        c_tuple = unpack_counter_vector(rnd_decrypt(key, enc_counts))
        config = GridConfig(
            x=header["x"], y=header["y"], u=header["u"],
            epoch_duration=header["duration"],
        )
        grid = Grid.from_vectors(config, header["epoch_start"], pairs, c_tuple)
        counts = {cid: grid.c_tuple[cid] for cid in range(1, config.u + 1)}
        plan = build_plan(counts)
        if plan.total_fake > header["n_fake"]:
            raise InsufficientFakes(
                f"plan needs {plan.total_fake} fake rows, epoch carries {header['n_fake']}"
            )
        state = _EpochState(
            eid=eid,
            start=header["epoch_start"],
            duration=header["duration"],
            grid=grid,
            plan=plan,
            n_fake_pool=header["n_fake"],
            key_version={b.id: 0 for b in plan.bins},
        )
        state.cell_blocks = self._compute_cell_blocks(grid)
        if self.super_bins:
            uniq = self._unique_counts(state)
            state.super_plan = build_super_bins(uniq, self.super_bins)
        self._states[eid] = state
        return state

    @staticmethod
    def _compute_cell_blocks(grid: Grid) -> dict[int, list[tuple[int, int, int]]]:
        """Counter sub-blocks per cell-id: rows were encrypted grouped by
        cell in (column, row) order, so each cell owns a contiguous slice of
        its id's counter range."""
        cfg = grid.config
        blocks: dict[int, list[tuple[int, int, int]]] = {}
        offsets: dict[int, int] = {}
        for p in range(cfg.x):
            for q in range(cfg.y):
                idx = grid.cell_index(p, q)
                cid = grid.cid_at(p, q)
                count = grid.cell_counts[idx]
                off = offsets.get(cid, 0)
                blocks.setdefault(cid, []).append((idx, count, off))
                offsets[cid] = off + count
        return blocks

    def _unique_counts(self, state: _EpochState) -> list[int]:
        """Distinct-value proxy per bin: populated cells of its member ids."""
        per_cid: dict[int, int] = {}
        for cid, cells in state.cell_blocks.items():
            per_cid[cid] = sum(1 for _, count, _ in cells if count > 0)
        return [sum(per_cid.get(cid, 0) for cid in b.members) for b in state.plan.bins]

    def plan_bins(self, eid: int) -> BinPlan:
        return self._state(eid).plan

    def _tags(self, state: _EpochState) -> dict[int, tuple[bytes, bytes, bytes]]:
        if state.tag_plain is None:
            _, _, enc_tags = self.store.fetch_metadata(state.eid)
            key = self._key(state.eid, 0)
            try:
                packed = unpack_tags(enc_tags)
            except Exception as exc:
                raise AuthenticationFailure("tag blob corrupt") from exc
            state.tag_plain = {
                cid: (rnd_decrypt(key, hl), rnd_decrypt(key, ho), rnd_decrypt(key, hr))
                for cid, (hl, ho, hr) in packed.items()
            }
        return state.tag_plain

    # -- trapdoors -------------------------------------------------------------

    def _bin_trapdoors(self, state: _EpochState, b) -> list[bytes]:
        key = self._key(state.eid, state.key_version[b.id])
        out = []
        for cid in b.members:
            for j in range(1, state.grid.c_tuple[cid] + 1):
                out.append(index_key(key, cid, j))
        for j in b.fake_ids:
            out.append(fake_index_key(key, j))
        return out

    def oblivious_trapdoors(self, state: _EpochState, b, trace: Trace | None = None) -> tuple[list[bytes], int]:
        """Constant-work trapdoor creation: the same number of candidates is
        generated for every bin, flagged, sorted by a data-independent
        network, and truncated to the flagged prefix.

        Returns (trapdoors to send, candidate count before truncation).
        """
        plan = state.plan
        key = self._key(state.eid, state.key_version[b.id])
        cmax = max(len(x.members) for x in plan.bins)
        nmax = max((state.grid.c_tuple[cid] for x in plan.bins for cid in x.members), default=0)
        fmax = max(x.n_fake for x in plan.bins)
        items: list[tuple[int, bytes]] = []
        rank = 0
        total = cmax * nmax + fmax
        for slot in range(cmax):
            real = slot < len(b.members)
            cid = b.members[slot] if real else None
            count = state.grid.c_tuple[cid] if real else 0
            for j in range(1, nmax + 1):
                v = int(real and j <= count)
                td = index_key(key, cid, j) if real else dummy_index_key(key, j)
                # Composite key: flagged first, generation order preserved.
                items.append((v * total + (total - rank), td))
                rank += 1
        for i in range(fmax):
            j = b.fake_lo + i
            v = int(j < b.fake_hi)
            td = fake_index_key(key, j) if v else dummy_index_key(key, 2**32 + i)
            items.append((v * total + (total - rank), td))
            rank += 1
        n_send = sum(1 for k, _ in items if k >= total)
        ordered = oblivious.sort_by_flag_desc(items, trace)
        return [td for _, td in ordered[:n_send]], len(items)

    def _send_bin(self, state: _EpochState, b, log: list) -> list:
        """Fetch one bin's rows, tracking trace when oblivious."""
        if self.oblivious:
            trace = Trace()
            trapdoors, _ = self.oblivious_trapdoors(state, b, trace)
            self.last_trace = trace
        else:
            trapdoors = self._bin_trapdoors(state, b)
        rows = self.store.multi_get(state.eid, trapdoors)
        log.append((b, trapdoors, rows))
        return rows

    # -- verification ------------------------------------------------------------

    def verify_bins(self, state: _EpochState, b, rows: list) -> bool:
        """Recompute per-id chains over the fetched rows (which arrive in
        counter order) and compare against the provider's tags."""
        tags = self._tags(state)
        pos = 0
        ok = True
        for cid in b.members:
            n = state.grid.c_tuple[cid]
            group = rows[pos:pos + n]
            pos += n
            if any(r is MISSING_ROW for r in group):
                ok = False
                continue
            hl = chain_digest([r.el for r in group])
            ho = chain_digest([r.eo for r in group])
            hr = chain_digest([r.er for r in group])
            want = tags.get(cid)
            if want is None or (hl, ho, hr) != want:
                ok = False
        return ok

    # -- filtering and aggregation -------------------------------------------

    def _column_of(self, query: Query) -> str:
        if query.location is not None and query.observation is not None:
            return "both"
        return "el" if query.location is not None else "eo"

    def _filters(self, state: _EpochState, version: int, query: Query) -> tuple[list[bytes], list[bytes]]:
        """Exact-match filters per in-range timestamp, byte-identical to the
        stored first-occurrence ciphertexts."""
        key = self._key(state.eid, version)
        lo = max(query.t_lo, state.start)
        hi = min(query.t_hi, state.start + state.duration - 1)
        el_f: list[bytes] = []
        eo_f: list[bytes] = []
        for t in range(lo, hi + 1):
            if query.location is not None:
                el_f.append(det_encrypt(key, pad_block(el_plain(query.location, t), FIELD_WIDTH)))
            if query.observation is not None:
                eo_f.append(det_encrypt(key, pad_block(eo_plain(query.observation, t), FIELD_WIDTH)))
        return el_f, eo_f

    def _flag_rows(self, rows: list, el_f: list[bytes], eo_f: list[bytes], column: str) -> list[int]:
        el_bytes = [r.el if r is not MISSING_ROW else b"\x00" for r in rows]
        eo_bytes = [r.eo if r is not MISSING_ROW else b"\x00" for r in rows]
        if self.oblivious:
            trace = Trace()
            if column == "el":
                flags = oblivious.match_flags(el_bytes, el_f, trace)
            elif column == "eo":
                flags = oblivious.match_flags(eo_bytes, eo_f, trace)
            else:
                flags = oblivious.and_flags(
                    oblivious.match_flags(el_bytes, el_f, trace),
                    oblivious.match_flags(eo_bytes, eo_f, trace),
                )
            n = len(rows)
            ordered = oblivious.sort_by_flag_desc(
                [(flags[i] * n + (n - i), i) for i in range(n)], trace
            )
            self.last_trace = trace
            # Flags are consumed positionally by the caller; the network pass
            # above exists for its data-independent schedule.
            return flags
        if column == "el":
            fset = set(el_f)
            return [int(b in fset) for b in el_bytes]
        if column == "eo":
            fset = set(eo_f)
            return [int(b in fset) for b in eo_bytes]
        lset, oset = set(el_f), set(eo_f)
        return [int(l in lset and o in oset) for l, o in zip(el_bytes, eo_bytes)]

    def oblivious_filter(self, rows: list, filters: list[bytes], column: str = "el") -> list[int]:
        """Branchless flagging of fetched rows against exact-match filters."""
        trace = Trace()
        fields = [getattr(r, column) if r is not MISSING_ROW else b"\x00" for r in rows]
        flags = oblivious.match_flags(fields, filters, trace)
        self.last_trace = trace
        return flags

    @staticmethod
    def _numeric(row: PlainTuple, column: str | None) -> int:
        if column in (None, "observation"):
            return int(row.observation)
        for k, v in row.extras:
            if k == column:
                return int(v)
        raise KeyError(f"row has no column {column!r}")

    def aggregate(self, flagged: list[tuple[int, EncryptedRow, EpochKey]], agg: Aggregate):
        """Fold flagged rows into the answer; counting never decrypts, the
        other kinds decrypt the flagged rows only."""
        if agg.kind == "count":
            return sum(v for v, _, _ in flagged)
        matches = [
            parse_record(unpad_block(det_decrypt(key, row.er)))
            for v, row, key in flagged
            if v
        ]
        if agg.kind == "select":
            return sorted(matches, key=lambda r: (r.time, r.location, r.observation))
        if agg.kind == "topk":
            counts: dict[str, int] = {}
            for r in matches:
                counts[r.location] = counts.get(r.location, 0) + 1
            ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
            return ranked[:agg.k]
        values = [self._numeric(r, agg.column) for r in matches]
        if agg.kind == "sum":
            return sum(values)
        if not values:
            return NO_MATCH
        if agg.kind == "min":
            return min(values)
        if agg.kind == "max":
            return max(values)
        return sum(values) / len(values)  # avg

    # -- query protocols ---------------------------------------------------------

    def _resolve_epoch(self, query: Query) -> int:
        for eid in self.store.epochs():
            h = self.store.fetch_header(eid)
            if h["epoch_start"] <= query.t_lo and query.t_hi < h["epoch_start"] + h["duration"]:
                return eid
        raise UnknownEpoch("no single epoch covers the query range")

    def _covered_cells(self, state: _EpochState, query: Query) -> list[tuple[int, int]]:
        """(p, q) cells the predicate can touch within this epoch."""
        grid = state.grid
        lo = max(query.t_lo, state.start)
        hi = min(query.t_hi, state.start + state.duration - 1)
        subs = range(grid.subinterval_of(lo), grid.subinterval_of(hi) + 1)
        rows = [grid.row_of_subinterval(s) for s in subs]
        if query.location is not None:
            ps = [grid_hash(query.location.encode(), grid.config.x)]
        else:
            ps = list(range(grid.config.x))
        return [(p, q) for p in ps for q in rows]

    def _target_bins(self, state: _EpochState, query: Query) -> list:
        cids = {state.grid.cid_at(p, q) for p, q in self._covered_cells(state, query)}
        seen = set()
        bins = []
        for cid in sorted(cids):
            b = state.plan.bin_of(cid)
            if b.id not in seen:
                seen.add(b.id)
                bins.append(b)
        return bins

    def _expand_super(self, state: _EpochState, bins: list) -> list:
        if state.super_plan is None:
            return bins
        ids = set()
        for b in bins:
            ids.update(state.super_plan.assignment[state.super_plan.super_of(b.id)])
        return [state.plan.bins[i] for i in sorted(ids)]

    def _run_bins(self, state: _EpochState, bins: list, query: Query, verify: bool):
        log: list = []
        flagged: list[tuple[int, EncryptedRow, EpochKey]] = []
        column = self._column_of(query)
        verified: bool | None = None if not verify else True
        for b in bins:
            rows = self._send_bin(state, b, log)
            if verify:
                if not self.verify_bins(state, b, rows):
                    raise IntegrityFailure(f"chain mismatch in epoch {state.eid} bin {b.id}")
            version = state.key_version[b.id]
            el_f, eo_f = self._filters(state, version, query)
            flags = self._flag_rows(rows, el_f, eo_f, column)
            key = self._key(state.eid, version)
            for v, row in zip(flags, rows):
                actual = row if row is not MISSING_ROW else None
                if actual is None:
                    continue
                flagged.append((v, actual, key))
        rows_fetched = sum(len(t) for _, t, _ in log)
        return flagged, rows_fetched, verified

    def point_query(self, session: Session, query: Query, verify: bool | None = None) -> QueryResult:
        """Fixed-size bin fetch for a point predicate; every possible point
        costs exactly one bin (or super-bin)."""
        self._authorize(session, query)
        verify = self.verify_default if verify is None else verify
        eid = self._resolve_epoch(query)
        state = self._state(eid)
        bins = self._expand_super(state, self._target_bins(state, query))
        flagged, fetched, verified = self._run_bins(state, bins, query, verify)
        return QueryResult(self.aggregate(flagged, query.aggregate), fetched, verified)

    def range_query_trivial(self, session: Session, query: Query, verify: bool | None = None) -> QueryResult:
        """Range as a union of point fetches, deduplicated by bin."""
        return self.point_query(session, query, verify=verify)

    def range_query_ebpb(self, session: Session, query: Query, verify: bool | None = None) -> QueryResult:
        """Range bins sized by the worst top-window column total.

        Fetches exactly the covered cells (each cell owns a contiguous
        counter block of its id) plus fakes up to the current bin size.
        """
        self._authorize(session, query)
        verify = self.verify_default if verify is None else verify
        if verify:
            raise UnsupportedVerification("chain tags cover whole ids; range bins fetch cells")
        if query.location is None:
            raise ConfigError("this range protocol needs a location predicate")
        eid = self._resolve_epoch(query)
        state = self._state(eid)
        cells = self._covered_cells(state, query)
        window = len(cells)
        if window > state.ebpb_window:
            state.ebpb_window = window
            state.ebpb_bsize = ebpb_bin_size(state.grid.column_counts(), window)
            state.ebpb_fakes.clear()
        bsize = state.ebpb_bsize
        keyed, real = self._cell_trapdoors(state, cells)
        need = bsize - real
        if need < 0:
            raise ConfigError("range bin smaller than its real rows")
        cache_key = tuple(sorted(cells))
        if cache_key not in state.ebpb_fakes:
            state.ebpb_fakes[cache_key] = self._alloc_fakes(state, need, "range bin")
        for j in state.ebpb_fakes[cache_key]:
            key = self._key(eid, self._fake_version(state, j))
            keyed.append((fake_index_key(key, j), key))
        rows = self.store.multi_get(eid, [td for td, _ in keyed])
        flagged = self._filter_keyed(state, rows, keyed, query)
        return QueryResult(self.aggregate(flagged, query.aggregate), len(keyed), None)

    def range_query_winsec(
        self, session: Session, query: Query, interval_len: int, verify: bool | None = None
    ) -> QueryResult:
        """Fixed-interval slabs: the epoch's subintervals are cut into
        intervals of fixed length, each padded to one constant bin size;
        a query fetches whole intervals, so the fetch set depends only on
        how many intervals the range touches."""
        self._authorize(session, query)
        verify = self.verify_default if verify is None else verify
        if verify:
            raise UnsupportedVerification("chain tags cover whole ids; interval slabs fetch cells")
        eid = self._resolve_epoch(query)
        state = self._state(eid)
        grid = state.grid
        y = grid.config.y
        if interval_len < 1:
            raise ConfigError("interval length must be positive")
        if interval_len not in state.winsec:
            per_sub = [0] * y
            for p in range(grid.config.x):
                for q_sub in range(y):
                    row = grid.row_of_subinterval(q_sub)
                    per_sub[q_sub] += grid.cell_counts[grid.cell_index(p, row)]
            plan = interval_bins(y, interval_len, per_sub)
            fakes: dict[int, tuple[int, ...]] = {}
            for i in range(1, plan.n_intervals + 1):
                real = sum(per_sub[v - 1] for v in plan.values_of(i))
                fakes[i] = self._alloc_fakes(state, plan.bin_size - real, f"winsec{interval_len}")
            state.winsec[interval_len] = (plan, fakes)
        plan, fakes = state.winsec[interval_len]
        lo = max(query.t_lo, state.start)
        hi = min(query.t_hi, state.start + state.duration - 1)
        v_lo = grid.subinterval_of(lo) + 1
        v_hi = grid.subinterval_of(hi) + 1
        intervals = plan.intervals_for_range(v_lo, v_hi)
        if self.super_bins:
            # Experimental: interval slabs grouped like bins, fetched whole.
            sp = build_super_bins([len(plan.values_of(i)) for i in range(1, plan.n_intervals + 1)],
                                  self.super_bins)
            expanded: set[int] = set()
            for i in intervals:
                expanded.update(m + 1 for m in sp.assignment[sp.super_of(i - 1)])
            intervals = sorted(expanded)
        cells: list[tuple[int, int]] = []
        for i in intervals:
            for v in plan.values_of(i):
                row = grid.row_of_subinterval(v - 1)
                cells.extend((p, row) for p in range(grid.config.x))
        keyed, _ = self._cell_trapdoors(state, cells)
        for i in intervals:
            for j in fakes[i]:
                key = self._key(eid, self._fake_version(state, j))
                keyed.append((fake_index_key(key, j), key))
        rows = self.store.multi_get(eid, [td for td, _ in keyed])
        flagged = self._filter_keyed(state, rows, keyed, query)
        return QueryResult(
            self.aggregate(flagged, query.aggregate), len(keyed), None
        )

    def _cell_trapdoors(
        self, state: _EpochState, cells: list[tuple[int, int]]
    ) -> tuple[list[tuple[bytes, EpochKey]], int]:
        """Keyed trapdoors for exactly the given cells' rows, using each
        cell's contiguous counter block within its id."""
        grid = state.grid
        out: list[tuple[bytes, EpochKey]] = []
        real = 0
        for p, q in cells:
            idx = grid.cell_index(p, q)
            cid = grid.cid_at(p, q)
            for cell_idx, count, offset in state.cell_blocks[cid]:
                if cell_idx != idx:
                    continue
                version = state.key_version[state.plan.bin_of(cid).id]
                key = self._key(state.eid, version)
                for j in range(offset + 1, offset + count + 1):
                    out.append((index_key(key, cid, j), key))
                real += count
                break
        return out, real

    def _alloc_fakes(self, state: _EpochState, need: int, pool: str) -> tuple[int, ...]:
        """Sequential fake-id blocks per plan; ids wrap around the epoch's
        pool once exhausted (each block stays internally distinct)."""
        if need == 0:
            return ()
        if state.n_fake_pool < need:
            raise InsufficientFakes(
                f"{pool} bin needs {need} fake rows, epoch carries {state.n_fake_pool}"
            )
        start = state.ebpb_cursor
        ids = tuple((start + i) % state.n_fake_pool + 1 for i in range(need))
        state.ebpb_cursor = (start + need) % state.n_fake_pool
        return ids

    def _fake_version(self, state: _EpochState, j: int) -> int:
        for b in state.plan.bins:
            if b.fake_lo <= j < b.fake_hi:
                return state.key_version[b.id]
        return 0

    def _filter_keyed(self, state, rows, keyed: list[tuple[bytes, EpochKey]], query):
        """Flag fetched rows whose ids' bins may sit at different key
        versions: batch rows by key and filter each batch with filters built
        under that key."""
        column = self._column_of(query)
        groups: dict[bytes, tuple[EpochKey, list[int]]] = {}
        for i, (_, key) in enumerate(keyed):
            groups.setdefault(key.bytes, (key, []))[1].append(i)
        flags = [0] * len(rows)
        for key, idxs in groups.values():
            el_f, eo_f = self._filters(state, key.rewrite_counter, query)
            batch = self._flag_rows([rows[i] for i in idxs], el_f, eo_f, column)
            for i, v in zip(idxs, batch):
                flags[i] = v
        return [
            (flags[i], rows[i], keyed[i][1])
            for i in range(len(rows))
            if rows[i] is not MISSING_ROW
        ]

    def multi_epoch_query(self, session: Session, query: Query, verify: bool | None = None) -> QueryResult:
        """Query across epochs with decoy fetches and rewrite.

        Every overlapped epoch gives up the same number of bins: the
        satisfying ones plus random decoys, or pure decoys when nothing
        matches, so the store cannot tell which epochs satisfied.  All
        fetched rows are re-encrypted under the epoch's next key and written
        back, unlinking them from every previously issued trapdoor.
        """
        self._authorize(session, query)
        verify = self.verify_default if verify is None else verify
        if query.epochs is None:
            raise ValueError("multi-epoch query needs an epoch range")
        eids = [e for e in sorted(self.store.epochs()) if query.epochs[0] <= e <= query.epochs[1]]
        if not eids:
            raise UnknownEpoch("no ingested epoch in range")
        flagged_all: list[tuple[int, EncryptedRow, EpochKey]] = []
        fetched = 0
        verified: bool | None = None if not verify else True
        for eid in eids:
            state = self._state(eid)
            end = state.start + state.duration
            overlap = not (query.t_hi < state.start or query.t_lo >= end)
            targets = self._target_bins(state, query) if overlap else []
            n_bins = len(state.plan.bins)
            want = max(1, math.ceil(math.log2(n_bins)) if n_bins > 1 else 1, len(targets))
            want = min(want, n_bins)
            others = [b for b in state.plan.bins if b not in targets]
            decoys = self._rng.sample(others, want - len(targets)) if want > len(targets) else []
            batch = targets + decoys
            flagged, got, _ = self._run_bins(state, batch, query, verify)
            # Decoy rows never match the predicate (their ids cover other
            # cells); they flow through filters and rewrite all the same.
            flagged_all.extend(flagged)
            fetched += got
            self._rewrite_bins(state, batch)
        return QueryResult(self.aggregate(flagged_all, query.aggregate), fetched, verified)

    def _rewrite_bins(self, state: _EpochState, bins: list) -> None:
        """Re-encrypt every row of the given bins under the epoch's next key
        and replace them at the store, in a fresh permutation."""
        if not bins:
            return
        new_version = state.rewrite_counter + 1
        new_key = self._key(state.eid, new_version)
        replacements: list[tuple[bytes, EncryptedRow]] = []
        new_chains: dict[int, dict[int, tuple[bytes, bytes, bytes]]] = {}
        for b in bins:
            old_key = self._key(state.eid, state.key_version[b.id])
            trapdoors = self._bin_trapdoors(state, b)
            rows = self.store.multi_get(state.eid, trapdoors)
            for td, row in zip(trapdoors, rows):
                if row is MISSING_ROW:
                    raise IntegrityFailure("row vanished during rewrite")
                marker, j = decode_ids(unpad_block(det_decrypt(old_key, row.ec)))
                if marker == FAKE_MARKER:
                    new_row = _fresh_fake_row(new_key, j)
                else:
                    el = det_decrypt(old_key, row.el)
                    eo = det_decrypt(old_key, row.eo)
                    er = det_decrypt(old_key, row.er)
                    new_row = EncryptedRow(
                        el=det_encrypt(new_key, el),
                        eo=det_encrypt(new_key, eo),
                        er=det_encrypt(new_key, er),
                        ec=index_key(new_key, marker, j),
                    )
                    new_chains.setdefault(marker, {})[j] = (new_row.el, new_row.eo, new_row.er)
                replacements.append((td, new_row))
        self._rng.shuffle(replacements)
        self.store.rewrite_epoch(state.eid, replacements)
        tags = self._tags(state)
        for cid, per_counter in new_chains.items():
            cts = [per_counter[j] for j in sorted(per_counter)]
            tags[cid] = (
                chain_digest([c[0] for c in cts]),
                chain_digest([c[1] for c in cts]),
                chain_digest([c[2] for c in cts]),
            )
        for b in bins:
            state.key_version[b.id] = new_version
        state.rewrite_counter = new_version

    # -- dispatch ----------------------------------------------------------------

    def execute(
        self,
        session: Session,
        query: Query,
        method: str = "bpb",
        interval_len: int = 0,
        verify: bool | None = None,
    ) -> QueryResult:
        if query.epochs is not None:
            return self.multi_epoch_query(session, query, verify=verify)
        if method == "bpb":
            return self.point_query(session, query, verify=verify)
        if method == "ebpb":
            return self.range_query_ebpb(session, query, verify=verify)
        if method == "winsec":
            if interval_len < 1:
                raise ConfigError("winsec needs a positive interval length")
            return self.range_query_winsec(session, query, interval_len, verify=verify)
        raise ValueError(f"unknown method {method!r}")


def _fresh_fake_row(key: EpochKey, j: int) -> EncryptedRow:
    return EncryptedRow(
        el=rnd_encrypt(key, os.urandom(rnd_filler_len(FIELD_WIDTH))),
        eo=rnd_encrypt(key, os.urandom(rnd_filler_len(FIELD_WIDTH))),
        er=rnd_encrypt(key, os.urandom(rnd_filler_len(RECORD_WIDTH))),
        ec=fake_index_key(key, j),
    )
