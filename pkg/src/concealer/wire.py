"""Bit-exact serialization of epoch packages and related blobs.

Package layout (all integers big-endian):

    magic "CNCL" | version u16
    header: eid u64, epoch_start u64, duration u64, x u32, y u32, u u32,
            n_rows u64, n_fake u64
    three length-prefixed blobs: enc_cell_id, enc_c_tuple, enc_tags
    n_rows framed records, each four length-prefixed ciphertext fields
    in order el, eo, er, ec

Length prefixes are u32.  This module only frames bytes; it never touches
keys or plaintext, so the untrusted store may import it freely.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import CorruptPackage

MAGIC = b"CNCL"
VERSION = 1

_HEADER = struct.Struct(">QQQIIIQQ")


@dataclass(frozen=True)
class EncryptedRow:
    el: bytes
    eo: bytes
    er: bytes
    ec: bytes


@dataclass(frozen=True)
class EpochPackage:
    eid: int
    epoch_start: int
    duration: int
    x: int
    y: int
    u: int
    n_fake: int
    enc_cell_id: bytes
    enc_c_tuple: bytes
    enc_tags: bytes
    rows: tuple[EncryptedRow, ...]

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_real(self) -> int:
        return len(self.rows) - self.n_fake


def _blob(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptPackage("truncated package")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def blob(self) -> bytes:
        (n,) = struct.unpack(">I", self.take(4))
        return self.take(n)


def serialize_row(row: EncryptedRow) -> bytes:
    return _blob(row.el) + _blob(row.eo) + _blob(row.er) + _blob(row.ec)


def parse_row(reader: _Reader) -> EncryptedRow:
    return EncryptedRow(el=reader.blob(), eo=reader.blob(), er=reader.blob(), ec=reader.blob())


def serialize_package(pkg: EpochPackage) -> bytes:
    parts = [
        MAGIC,
        struct.pack(">H", VERSION),
        _HEADER.pack(
            pkg.eid, pkg.epoch_start, pkg.duration,
            pkg.x, pkg.y, pkg.u, pkg.n_rows, pkg.n_fake,
        ),
        _blob(pkg.enc_cell_id),
        _blob(pkg.enc_c_tuple),
        _blob(pkg.enc_tags),
    ]
    parts.extend(serialize_row(r) for r in pkg.rows)
    return b"".join(parts)


def parse_package(data: bytes) -> EpochPackage:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CorruptPackage("bad magic")
    (version,) = struct.unpack(">H", r.take(2))
    if version != VERSION:
        raise CorruptPackage(f"unsupported version {version}")
    eid, start, duration, x, y, u, n_rows, n_fake = _HEADER.unpack(r.take(_HEADER.size))
    enc_cell_id = r.blob()
    enc_c_tuple = r.blob()
    enc_tags = r.blob()
    rows = tuple(parse_row(r) for _ in range(n_rows))
    if r.pos != len(data):
        raise CorruptPackage("trailing bytes after package")
    return EpochPackage(
        eid=eid, epoch_start=start, duration=duration, x=x, y=y, u=u,
        n_fake=n_fake, enc_cell_id=enc_cell_id, enc_c_tuple=enc_c_tuple,
        enc_tags=enc_tags, rows=rows,
    )


# ---------------------------------------------------------------------------
# Plaintext layouts of the metadata vectors (encrypted before transmission).

def pack_cell_vector(pairs: list[tuple[int, int]]) -> bytes:
    """Per-cell (cell-id, tuple count) pairs in row-major-by-q order."""
    out = [struct.pack(">I", len(pairs))]
    out.extend(struct.pack(">IQ", cid, count) for cid, count in pairs)
    return b"".join(out)


def unpack_cell_vector(data: bytes) -> list[tuple[int, int]]:
    r = _Reader(data)
    (n,) = struct.unpack(">I", r.take(4))
    return [struct.unpack(">IQ", r.take(12)) for _ in range(n)]


def pack_counter_vector(counts: list[int]) -> bytes:
    out = [struct.pack(">I", len(counts))]
    out.extend(struct.pack(">Q", c) for c in counts)
    return b"".join(out)


def unpack_counter_vector(data: bytes) -> list[int]:
    r = _Reader(data)
    (n,) = struct.unpack(">I", r.take(4))
    return [struct.unpack(">Q", r.take(8))[0] for _ in range(n)]


def pack_tags(tags: dict[int, tuple[bytes, bytes, bytes]]) -> bytes:
    """Per-cell-id triples of encrypted chain digests, ordered by cell-id."""
    out = [struct.pack(">I", len(tags))]
    for cid in sorted(tags):
        hl, ho, hr = tags[cid]
        out.append(struct.pack(">Q", cid))
        out.extend(_blob(t) for t in (hl, ho, hr))
    return b"".join(out)


def unpack_tags(data: bytes) -> dict[int, tuple[bytes, bytes, bytes]]:
    r = _Reader(data)
    (n,) = struct.unpack(">I", r.take(4))
    tags = {}
    for _ in range(n):
        (cid,) = struct.unpack(">Q", r.take(8))
        tags[cid] = (r.blob(), r.blob(), r.blob())
    return tags


def pack_registry(records: list[tuple[str, bytes]]) -> bytes:
    """User-id to 32-byte verifier records, framed like package blobs."""
    out = [struct.pack(">I", len(records))]
    for uid, verifier in records:
        if len(verifier) != 32:
            raise ValueError("verifier must be 32 bytes")
        out.append(_blob(uid.encode()))
        out.append(verifier)
    return b"".join(out)


def unpack_registry(data: bytes) -> list[tuple[str, bytes]]:
    r = _Reader(data)
    (n,) = struct.unpack(">I", r.take(4))
    return [(r.blob().decode(), r.take(32)) for _ in range(n)]
