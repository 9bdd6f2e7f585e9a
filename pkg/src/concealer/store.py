"""The untrusted service-provider store.

Persists epoch packages, keeps an ordered exact-match index over the index
ciphertext of every row, answers multi-get batches, and supports the
replace-rows rewrite.  Everything here is opaque bytes: this module imports
no decryption operation and never sees key material, plaintext, or bin
plans.  What it can observe, it logs: one access-log line per multi-get
with the batch size.

On-disk layout:

    <root>/<eid>/package.cncl   epoch package, wire format
    <root>/<eid>/index.idx      sorted (u32 keylen, key, u64 offset) entries
    <root>/catalog              one line per epoch: eid, row count, file name
    <root>/access.log           one line per multi_get: eid, batch size, unix ts
"""

from __future__ import annotations

import os
import struct
import threading
import time
from pathlib import Path

from .errors import CorruptPackage, DuplicateEpoch, UnknownEpoch, UnknownKey
from .wire import (
    EncryptedRow,
    EpochPackage,
    _Reader,
    parse_package,
    parse_row,
    serialize_package,
    serialize_row,
)


class MissingRow:
    """Marker returned for trapdoors that match no stored row.

    Not an error: the integrity layer decides whether a miss means
    tampering.
    """

    __slots__ = ()

    def __repr__(self):
        return "MissingRow"


MISSING_ROW = MissingRow()

_PACKAGE = "package.cncl"
_INDEX = "index.idx"


class Store:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[int, threading.Lock] = {}
        self._guard = threading.Lock()
        self._index_cache: dict[int, dict[bytes, int]] = {}

    # -- helpers -------------------------------------------------------------

    def _lock(self, eid: int) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(eid, threading.Lock())

    def _epoch_dir(self, eid: int) -> Path:
        return self.root / str(eid)

    def _package_path(self, eid: int) -> Path:
        return self._epoch_dir(eid) / _PACKAGE

    def epochs(self) -> list[int]:
        catalog = self.root / "catalog"
        if not catalog.exists():
            return []
        return [int(line.split("\t")[0]) for line in catalog.read_text().splitlines() if line]

    def has_epoch(self, eid: int) -> bool:
        return self._package_path(eid).exists()

    def _load_package(self, eid: int) -> EpochPackage:
        if not self.has_epoch(eid):
            raise UnknownEpoch(f"epoch {eid} not ingested")
        return parse_package(self._package_path(eid).read_bytes())

    def _index(self, eid: int) -> dict[bytes, int]:
        if eid in self._index_cache:
            return self._index_cache[eid]
        path = self._epoch_dir(eid) / _INDEX
        if not path.exists():
            raise UnknownEpoch(f"epoch {eid} not ingested")
        data = path.read_bytes()
        index: dict[bytes, int] = {}
        pos = 0
        while pos < len(data):
            (klen,) = struct.unpack_from(">I", data, pos)
            pos += 4
            key = data[pos:pos + klen]
            pos += klen
            (offset,) = struct.unpack_from(">Q", data, pos)
            pos += 8
            index[key] = offset
        self._index_cache[eid] = index
        return index

    @staticmethod
    def _index_bytes(index: dict[bytes, int]) -> bytes:
        out = []
        for key in sorted(index):
            out.append(struct.pack(">I", len(key)) + key + struct.pack(">Q", index[key]))
        return b"".join(out)

    @staticmethod
    def _row_offsets(package_bytes: bytes, pkg: EpochPackage) -> dict[bytes, int]:
        # Row records sit at the tail of the package; walk them once to map
        # each index key to its record's byte offset.
        offset = len(package_bytes)
        sizes = [len(serialize_row(r)) for r in pkg.rows]
        offset -= sum(sizes)
        index = {}
        for row, size in zip(pkg.rows, sizes):
            index[row.ec] = offset
            offset += size
        return index

    # -- operations ------------------------------------------------------------

    def ingest(self, package_bytes: bytes) -> int:
        """Persist a serialized epoch package and index its rows."""
        try:
            pkg = parse_package(package_bytes)
        except CorruptPackage:
            raise
        except Exception as exc:  # pragma: no cover - defensive
            raise CorruptPackage(str(exc)) from exc
        with self._lock(pkg.eid):
            if self.has_epoch(pkg.eid):
                raise DuplicateEpoch(f"epoch {pkg.eid} already ingested")
            edir = self._epoch_dir(pkg.eid)
            edir.mkdir(parents=True, exist_ok=True)
            self._package_path(pkg.eid).write_bytes(package_bytes)
            index = self._row_offsets(package_bytes, pkg)
            (edir / _INDEX).write_bytes(self._index_bytes(index))
            self._index_cache[pkg.eid] = index
            with open(self.root / "catalog", "a") as fh:
                fh.write(f"{pkg.eid}\t{pkg.n_rows}\t{pkg.eid}/{_PACKAGE}\n")
        return pkg.n_rows

    def multi_get(self, eid: int, trapdoors: list[bytes]) -> list[EncryptedRow | MissingRow]:
        """Exact-match retrieval in trapdoor order; misses are markers."""
        index = self._index(eid)
        data = self._package_path(eid).read_bytes()
        out: list[EncryptedRow | MissingRow] = []
        for key in trapdoors:
            offset = index.get(key)
            if offset is None:
                out.append(MISSING_ROW)
            else:
                out.append(parse_row(_Reader(data, offset)))
        with open(self.root / "access.log", "a") as fh:
            fh.write(f"{eid}\t{len(trapdoors)}\t{int(time.time())}\n")
        return out

    def rewrite_epoch(self, eid: int, replacements: list[tuple[bytes, EncryptedRow]]) -> int:
        """Replace rows key-for-key: old rows leave the file and index, new
        rows append in caller-supplied order.  Readers of this store instance
        see the old or the new epoch, never a mix."""
        with self._lock(eid):
            pkg = self._load_package(eid)
            old_keys = {old for old, _ in replacements}
            present = {row.ec for row in pkg.rows}
            for key in old_keys:
                if key not in present:
                    raise UnknownKey("rewrite references a key that is not stored")
            kept = [row for row in pkg.rows if row.ec not in old_keys]
            new_rows = tuple(kept) + tuple(row for _, row in replacements)
            new_pkg = EpochPackage(
                eid=pkg.eid, epoch_start=pkg.epoch_start, duration=pkg.duration,
                x=pkg.x, y=pkg.y, u=pkg.u, n_fake=pkg.n_fake,
                enc_cell_id=pkg.enc_cell_id, enc_c_tuple=pkg.enc_c_tuple,
                enc_tags=pkg.enc_tags, rows=new_rows,
            )
            data = serialize_package(new_pkg)
            index = self._row_offsets(data, new_pkg)
            edir = self._epoch_dir(eid)
            tmp_pkg = edir / (_PACKAGE + ".tmp")
            tmp_idx = edir / (_INDEX + ".tmp")
            tmp_pkg.write_bytes(data)
            tmp_idx.write_bytes(self._index_bytes(index))
            os.replace(tmp_pkg, self._package_path(eid))
            os.replace(tmp_idx, edir / _INDEX)
            self._index_cache[eid] = index
        return len(replacements)

    def fetch_metadata(self, eid: int) -> tuple[bytes, bytes, bytes]:
        pkg = self._load_package(eid)
        return pkg.enc_cell_id, pkg.enc_c_tuple, pkg.enc_tags

    def fetch_header(self, eid: int) -> dict:
        """Cleartext package header; the adversary is assumed to know it."""
        pkg = self._load_package(eid)
        return {
            "eid": pkg.eid, "epoch_start": pkg.epoch_start, "duration": pkg.duration,
            "x": pkg.x, "y": pkg.y, "u": pkg.u,
            "n_rows": pkg.n_rows, "n_fake": pkg.n_fake,
        }

    def access_log(self) -> list[tuple[int, int, int]]:
        path = self.root / "access.log"
        if not path.exists():
            return []
        out = []
        for line in path.read_text().splitlines():
            eid, n, ts = line.split("\t")
            out.append((int(eid), int(n), int(ts)))
        return out
