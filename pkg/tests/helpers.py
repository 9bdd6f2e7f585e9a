"""Shared fixtures-in-code for the test suite: the two worked-example
datasets, environment builders, and store tampering utilities."""

from __future__ import annotations

import random
from dataclasses import dataclass, replace

from concealer.crypto import MasterSecret, det_decrypt, unpad_block, decode_ids, FAKE_MARKER
from concealer.encryptor import FakeStrategy, encrypt_epoch
from concealer.grid import Grid, GridConfig, PlainTuple
from concealer.processor import Session, TrustedProcessor
from concealer.store import Store
from concealer.wire import EncryptedRow, EpochPackage, parse_package, serialize_package

MASTER = MasterSecret(bytes(range(32)))
ADMIN = Session("admin")


# --- Table 1 worked example ---------------------------------------------------
# Six readings over a 2x2 grid with three cell-ids.  The seed reproduces the
# layout [cid1 cid2 / cid1 cid3]; l1 and l3 share a column, l2 gets the other;
# t5 falls in the subinterval mapped to cid2's row, t3 in cid3's row.

T1_CONFIG = GridConfig(x=2, y=2, u=3, epoch_duration=600, rng_seed=4)
T1_START = 0
T1_TIMES = (30, 90, 150, 210, 390, 450)
T1_ROWS = [
    PlainTuple("l1", T1_TIMES[0], "o1"),
    PlainTuple("l1", T1_TIMES[1], "o2"),
    PlainTuple("l2", T1_TIMES[2], "o2"),
    PlainTuple("l1", T1_TIMES[3], "o1"),
    PlainTuple("l2", T1_TIMES[4], "o3"),
    PlainTuple("l3", T1_TIMES[5], "o2"),
]


# --- Table 3 worked example -----------------------------------------------------
# A 4x4 grid with 11 cell-ids and fixed per-cell tuple counts; rows T1..T4 are
# subintervals 1..4, columns are the four locations below.

T3_LOCATIONS = ("l1", "l2", "l6", "l10")  # hash to columns 0,1,2,3
T3_CONFIG = GridConfig(x=4, y=4, u=11, epoch_duration=1200, rng_seed=0)
T3_START = 0
# (cid, count) by [T row 1..4][column], straight from the worked example.
T3_CELLS = {
    4: [(1, 40), (6, 30), (7, 2), (11, 9)],
    3: [(2, 50), (7, 50), (6, 21), (9, 60)],
    2: [(3, 60), (11, 40), (4, 45), (8, 48)],
    1: [(3, 40), (10, 50), (10, 10), (5, 50)],
}


def table3_grid() -> Grid:
    from concealer.grid import time_row_permutation

    row_of_sub = time_row_permutation(4)
    cells = [0] * 16
    for ti, row in T3_CELLS.items():
        q = row_of_sub[ti - 1]
        for p, (cid, _) in enumerate(row):
            cells[q * 4 + p] = cid
    return Grid(T3_CONFIG, T3_START, cells)


def table3_rows() -> list[PlainTuple]:
    rows = []
    obs = 0
    for ti, row in T3_CELLS.items():
        sub = ti - 1
        lo = T3_START + sub * 300
        for p, (_, count) in enumerate(row):
            for k in range(count):
                obs += 1
                rows.append(PlainTuple(T3_LOCATIONS[p], lo + k, f"d{obs:04d}"))
    rows.sort(key=lambda r: r.time)
    return rows


def t3_subinterval_times(ti: int) -> tuple[int, int]:
    """Inclusive time range of worked-example row T_i."""
    lo = T3_START + (ti - 1) * 300
    return lo, lo + 299


# --- environments ----------------------------------------------------------------

class RecordingStore(Store):
    """Store that remembers every multi-get batch (eid, trapdoor tuple)."""

    def __init__(self, root):
        super().__init__(root)
        self.batches: list[tuple[int, tuple[bytes, ...]]] = []

    def multi_get(self, eid, trapdoors):
        self.batches.append((eid, tuple(trapdoors)))
        return super().multi_get(eid, trapdoors)

    def sent_keys(self) -> set[bytes]:
        return {td for _, batch in self.batches for td in batch}


@dataclass
class Env:
    master: MasterSecret
    store: Store
    processor: TrustedProcessor
    session: Session
    rows: list[PlainTuple]
    start: int


def build_env(
    tmp_path,
    rows: list[PlainTuple],
    config: GridConfig,
    epoch_start: int = 0,
    strategy: FakeStrategy = FakeStrategy.SIMULATED_BIN_PACKING,
    grid: Grid | None = None,
    master: MasterSecret = MASTER,
    store_cls=Store,
    **proc_kwargs,
) -> Env:
    store = store_cls(tmp_path / "store")
    pkg = encrypt_epoch(rows, config, master, strategy, epoch_start=epoch_start, grid=grid)
    store.ingest(serialize_package(pkg))
    proc = TrustedProcessor(master, store, **proc_kwargs)
    proc._registry = {"admin": bytes(32)}
    return Env(master=master, store=store, processor=proc, session=ADMIN,
               rows=rows, start=epoch_start)


def multi_env(
    tmp_path,
    epochs: list[tuple[int, list[PlainTuple]]],
    config: GridConfig,
    strategy: FakeStrategy = FakeStrategy.EQUAL_COUNT,
    master: MasterSecret = MASTER,
    store_cls=Store,
    **proc_kwargs,
) -> Env:
    store = store_cls(tmp_path / "store")
    for start, rows in epochs:
        pkg = encrypt_epoch(rows, config, master, strategy, epoch_start=start)
        store.ingest(serialize_package(pkg))
    proc = TrustedProcessor(master, store, **proc_kwargs)
    proc._registry = {"admin": bytes(32)}
    all_rows = [r for _, rows in epochs for r in rows]
    return Env(master=master, store=store, processor=proc, session=ADMIN,
               rows=all_rows, start=epochs[0][0])


def random_rows(rng: random.Random, n: int, n_locations: int, duration: int,
                start: int = 0, n_obs: int = 30) -> list[PlainTuple]:
    """Rows with strictly distinct timestamps so filterable pairs are unique."""
    ticks = sorted(rng.sample(range(duration), n))
    return [
        PlainTuple(
            location=f"l{rng.randint(1, n_locations):03d}",
            time=start + t,
            observation=f"d{rng.randint(1, n_obs):03d}",
            extras=(("val", str(rng.randint(0, 999))),),
        )
        for t in ticks
    ]


# --- store tampering ------------------------------------------------------------

def _load(store: Store, eid: int) -> EpochPackage:
    return parse_package((store.root / str(eid) / "package.cncl").read_bytes())


def _write_back(store: Store, eid: int, pkg: EpochPackage, drop_keys: set[bytes] = frozenset()):
    data = serialize_package(pkg)
    (store.root / str(eid) / "package.cncl").write_bytes(data)
    index = store._row_offsets(data, pkg)
    for key in drop_keys:
        index.pop(key, None)
    (store.root / str(eid) / "index.idx").write_bytes(store._index_bytes(index))
    store._index_cache.pop(eid, None)


def real_row_positions(master: MasterSecret, pkg: EpochPackage) -> list[tuple[int, int, int]]:
    """(row position, cid, counter) for every real row of the package."""
    from concealer.crypto import derive_epoch_key

    key = derive_epoch_key(master, pkg.eid, 0)
    out = []
    for i, row in enumerate(pkg.rows):
        marker, j = decode_ids(unpad_block(det_decrypt(key, row.ec)))
        if marker != FAKE_MARKER:
            out.append((i, marker, j))
    return out


def tamper_bitflip(store: Store, master: MasterSecret, eid: int, rng: random.Random):
    pkg = _load(store, eid)
    pos, _, _ = rng.choice(real_row_positions(master, pkg))
    row = pkg.rows[pos]
    field = rng.choice(["el", "eo", "er"])
    data = bytearray(getattr(row, field))
    bit = rng.randrange(len(data) * 8)
    data[bit // 8] ^= 1 << (bit % 8)
    rows = list(pkg.rows)
    rows[pos] = replace(row, **{field: bytes(data)})
    _write_back(store, eid, replace(pkg, rows=tuple(rows)))


def tamper_delete(store: Store, master: MasterSecret, eid: int, rng: random.Random):
    pkg = _load(store, eid)
    pos, _, _ = rng.choice(real_row_positions(master, pkg))
    _write_back(store, eid, pkg, drop_keys={pkg.rows[pos].ec})


def tamper_substitute(store: Store, master: MasterSecret, eid: int, rng: random.Random):
    """Replace a real row's content with fresh garbage, keeping its key."""
    pkg = _load(store, eid)
    pos, _, _ = rng.choice(real_row_positions(master, pkg))
    row = pkg.rows[pos]
    rows = list(pkg.rows)
    rows[pos] = EncryptedRow(
        el=rng.randbytes(len(row.el)),
        eo=rng.randbytes(len(row.eo)),
        er=rng.randbytes(len(row.er)),
        ec=row.ec,
    )
    _write_back(store, eid, replace(pkg, rows=tuple(rows)))


def tamper_swap(store: Store, master: MasterSecret, eid: int, rng: random.Random):
    """Swap the content of two real rows from different ids, keeping keys."""
    pkg = _load(store, eid)
    reals = real_row_positions(master, pkg)
    by_cid: dict[int, list[int]] = {}
    for pos, cid, _ in reals:
        by_cid.setdefault(cid, []).append(pos)
    cids = [c for c in by_cid if by_cid[c]]
    a_cid, b_cid = rng.sample(cids, 2)
    a, b = rng.choice(by_cid[a_cid]), rng.choice(by_cid[b_cid])
    rows = list(pkg.rows)
    ra, rb = rows[a], rows[b]
    rows[a] = EncryptedRow(el=rb.el, eo=rb.eo, er=rb.er, ec=ra.ec)
    rows[b] = EncryptedRow(el=ra.el, eo=ra.eo, er=ra.er, ec=rb.ec)
    _write_back(store, eid, replace(pkg, rows=tuple(rows)))
