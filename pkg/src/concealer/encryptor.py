"""Data-provider side: encrypt one epoch of readings into a package.

Each real row gets four ciphertexts: two filter-matchable columns (location
and observation, each concatenated with the timestamp so repeats stay
distinguishable), the full record, and the index key built from the row's
cell-id and a dense per-id counter.  Padding rows carry reserved index keys
and randomized filler that is byte-for-byte as long as real fields.  Per-id
hash chains over the three content columns become the integrity tags.

Rows are processed grouped by cell (column-major over the grid) so each
cell owns a contiguous block of its id's counter range; range protocols
rely on that to fetch single cells out of ids shared by several cells.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass

from . import crypto
from .binpack import BinPlan, build_plan
from .crypto import (
    FIELD_WIDTH,
    RECORD_WIDTH,
    SEP,
    EpochKey,
    MasterSecret,
    chain_digest,
    derive_epoch_key,
    det_encrypt,
    encode_ids,
    encode_u64,
    pad_block,
    rnd_encrypt,
    rnd_filler_len,
)
from .errors import EmptyEpoch, EpochBoundsError
from .grid import Grid, GridConfig, PlainTuple, build_grid
from .wire import (
    EncryptedRow,
    EpochPackage,
    pack_cell_vector,
    pack_counter_vector,
    pack_tags,
)


class FakeStrategy(enum.Enum):
    EQUAL_COUNT = "equal"
    SIMULATED_BIN_PACKING = "binpack"


# --- plaintext layouts ------------------------------------------------------
# These builders are shared verbatim by the query processor so trapdoors and
# filters match the stored ciphertexts byte for byte.

def _ident_bytes(value: str) -> bytes:
    data = value.encode()
    if SEP in data or not data:
        raise ValueError(f"identifier {value!r} is empty or contains a reserved byte")
    return data


def el_plain(location: str, t: int, dup_counter: int | None = None) -> bytes:
    parts = [_ident_bytes(location), encode_u64(t)]
    if dup_counter is not None:
        parts.append(encode_u64(dup_counter))
    return SEP.join(parts)


def eo_plain(observation: str, t: int, dup_counter: int | None = None) -> bytes:
    parts = [_ident_bytes(observation), encode_u64(t)]
    if dup_counter is not None:
        parts.append(encode_u64(dup_counter))
    return SEP.join(parts)


def er_plain(row: PlainTuple, seq: int | None = None) -> bytes:
    # Time and the optional disambiguation suffix are ASCII digits: the
    # record column is parsed by splitting on the separator, so no field may
    # carry arbitrary binary.
    parts = [_ident_bytes(row.location), str(row.time).encode(), _ident_bytes(row.observation)]
    for k, v in row.extras:
        if not k or "=" in k:
            raise ValueError(f"bad extras key {k!r}")
        parts.append(_ident_bytes(f"{k}={v}"))
    if seq is not None:
        parts.append(b"\x00" + str(seq).encode())
    return SEP.join(parts)


def parse_record(plain: bytes) -> PlainTuple:
    """Inverse of ``er_plain``, dropping any disambiguation suffix."""
    parts = plain.split(SEP)
    if parts and parts[-1][:1] == b"\x00":
        parts = parts[:-1]
    location = parts[0].decode()
    t = int(parts[1])
    observation = parts[2].decode()
    extras = []
    for field in parts[3:]:
        k, _, v = field.decode().partition("=")
        extras.append((k, v))
    return PlainTuple(location=location, time=t, observation=observation, extras=tuple(extras))


def index_key(key: EpochKey, cid: int, counter: int) -> bytes:
    """Deterministic index ciphertext: the store's lookup key, the
    processor's trapdoor."""
    return det_encrypt(key, pad_block(encode_ids(cid, counter), FIELD_WIDTH))


def fake_index_key(key: EpochKey, j: int) -> bytes:
    return index_key(key, crypto.FAKE_MARKER, j)


def dummy_index_key(key: EpochKey, j: int) -> bytes:
    """A syntactically valid key that can never match a stored row; used as
    constant-work padding by the oblivious trapdoor path."""
    return index_key(key, crypto.DUMMY_MARKER, j)


# --- epoch encryption -------------------------------------------------------

def generate_fake_rows(n_fake: int, key: EpochKey) -> list[EncryptedRow]:
    """Padding rows: dense reserved index keys, randomized filler elsewhere.

    Filler lengths are chosen so every serialized fake row is byte-for-byte
    as long as a real row.
    """
    rows = []
    field_fill = rnd_filler_len(FIELD_WIDTH)
    record_fill = rnd_filler_len(RECORD_WIDTH)
    rng = random.SystemRandom()
    for j in range(1, n_fake + 1):
        rows.append(
            EncryptedRow(
                el=rnd_encrypt(key, rng.randbytes(field_fill)),
                eo=rnd_encrypt(key, rng.randbytes(field_fill)),
                er=rnd_encrypt(key, rng.randbytes(record_fill)),
                ec=fake_index_key(key, j),
            )
        )
    return rows


def build_chains(
    groups: dict[int, tuple[list[bytes], list[bytes], list[bytes]]], key: EpochKey
) -> dict[int, tuple[bytes, bytes, bytes]]:
    """Fold each id's column ciphertexts (in counter order) into chain
    digests and encrypt the three finals as the verifiable tag."""
    tags = {}
    for cid, (els, eos, ers) in groups.items():
        tags[cid] = (
            rnd_encrypt(key, chain_digest(els)),
            rnd_encrypt(key, chain_digest(eos)),
            rnd_encrypt(key, chain_digest(ers)),
        )
    return tags


def _cell_grouped_order(grid: Grid, rows: list[PlainTuple]) -> list[tuple[int, object]]:
    located = [(grid.locate(r.location, r.time), i) for i, r in enumerate(rows)]
    located.sort(key=lambda item: (item[0].p, item[0].q, item[1]))
    return [(i, cell) for cell, i in located]


def simulate_plan(
    rows: list[PlainTuple],
    config: GridConfig,
    epoch_start: int,
    grid: Grid | None = None,
) -> tuple[Grid, BinPlan]:
    """Dry-run the grid assignment and bin creation the processor will do;
    used to size padding and for ingestion reports."""
    g = grid if grid is not None else build_grid(config, epoch_start)
    sim = Grid(config, epoch_start, g.cells)
    for r in rows:
        sim.assign_counter(sim.locate(r.location, r.time))
    counts = {cid: sim.c_tuple[cid] for cid in range(1, config.u + 1)}
    return sim, build_plan(counts)


def encrypt_epoch(
    rows: list[PlainTuple],
    config: GridConfig,
    master: MasterSecret,
    strategy: FakeStrategy = FakeStrategy.SIMULATED_BIN_PACKING,
    epoch_start: int = 0,
    eid: int | None = None,
    grid: Grid | None = None,
) -> EpochPackage:
    """Run the full encryption pipeline for one epoch's rows."""
    if not rows:
        raise EmptyEpoch("epoch has no rows")
    if eid is None:
        eid = epoch_start
    end = epoch_start + config.epoch_duration
    for r in rows:
        if not (epoch_start <= r.time < end):
            raise EpochBoundsError(f"row at t={r.time} outside [{epoch_start}, {end})")

    # A supplied grid is used as a layout template; counters start fresh.
    g = Grid(config, epoch_start, grid.cells) if grid is not None else build_grid(config, epoch_start)
    key = derive_epoch_key(master, eid, 0)

    encrypted: list[EncryptedRow] = []
    chain_groups: dict[int, tuple[list[bytes], list[bytes], list[bytes]]] = {
        cid: ([], [], []) for cid in range(1, config.u + 1)
    }
    seen_lt: set[tuple[str, int]] = set()
    seen_ot: set[tuple[str, int]] = set()
    seen_full: set[tuple] = set()
    for ordinal, (i, cell) in enumerate(_cell_grouped_order(g, rows)):
        row = rows[i]
        counter = g.assign_counter(cell)
        lt, ot = (row.location, row.time), (row.observation, row.time)
        full = (row.location, row.time, row.observation, row.extras)
        el = el_plain(row.location, row.time, counter if lt in seen_lt else None)
        eo = eo_plain(row.observation, row.time, counter if ot in seen_ot else None)
        er = er_plain(row, ordinal if full in seen_full else None)
        seen_lt.add(lt)
        seen_ot.add(ot)
        seen_full.add(full)
        enc = EncryptedRow(
            el=det_encrypt(key, pad_block(el, FIELD_WIDTH)),
            eo=det_encrypt(key, pad_block(eo, FIELD_WIDTH)),
            er=det_encrypt(key, pad_block(er, RECORD_WIDTH)),
            ec=index_key(key, cell.cid, counter),
        )
        encrypted.append(enc)
        group = chain_groups[cell.cid]
        group[0].append(enc.el)
        group[1].append(enc.eo)
        group[2].append(enc.er)

    if strategy is FakeStrategy.EQUAL_COUNT:
        n_fake = len(rows)
    else:
        counts = {cid: g.c_tuple[cid] for cid in range(1, config.u + 1)}
        n_fake = build_plan(counts).total_fake
    encrypted.extend(generate_fake_rows(n_fake, key))

    # Fresh CSPRNG; the permutation seed is never retained.
    random.SystemRandom().shuffle(encrypted)

    pairs = [(g.cells[i], g.cell_counts[i]) for i in range(config.x * config.y)]
    return EpochPackage(
        eid=eid,
        epoch_start=epoch_start,
        duration=config.epoch_duration,
        x=config.x,
        y=config.y,
        u=config.u,
        n_fake=n_fake,
        enc_cell_id=rnd_encrypt(key, pack_cell_vector(pairs)),
        enc_c_tuple=rnd_encrypt(key, pack_counter_vector(g.c_tuple[1:])),
        # The tags blob frames one randomized ciphertext per digest; the
        # framing itself (ids and lengths) is public metadata.
        enc_tags=pack_tags(build_chains(chain_groups, key)),
        rows=tuple(encrypted),
    )
