"""The x-by-y cell grid shared between the data provider and the query
processor.

Locations hash onto the x columns (many-to-one when the location domain is
larger than x).  The epoch is split into y equal subintervals whose indexes
are mapped onto the y rows through a public hash-derived bijection, so
adjacent subintervals do not occupy adjacent rows.  Each cell holds one
cell-id out of 1..u; several cells may share an id.  Per-id counters make
index keys unique, and per-cell tallies let range protocols size their
fetches.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .crypto import encode_u64, grid_hash
from .errors import ConfigError, OutOfEpoch


@dataclass(frozen=True)
class PlainTuple:
    """One sensor reading: who/where, when, what, plus optional extra columns."""

    location: str
    time: int
    observation: str
    extras: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class GridConfig:
    x: int
    y: int
    u: int
    epoch_duration: int
    rng_seed: int = 0

    def __post_init__(self):
        if self.x < 1 or self.y < 1 or self.u < 1:
            raise ConfigError("grid dimensions must be positive")
        if self.u > self.x * self.y:
            raise ConfigError(f"u={self.u} exceeds cell count {self.x * self.y}")
        if self.epoch_duration < 1:
            raise ConfigError("epoch duration must be positive")


@dataclass(frozen=True)
class CellRef:
    p: int
    q: int
    cid: int


def time_row_permutation(y: int) -> list[int]:
    """Bijection from subinterval index to grid row, derived from the public
    hash so both sides agree without sharing extra state."""
    scores = [(grid_hash(b"time-row" + encode_u64(i), 2**64), i) for i in range(y)]
    order = sorted(range(y), key=lambda i: scores[i])
    perm = [0] * y
    for row, sub in enumerate(order):
        perm[sub] = row
    return perm


class Grid:
    """Cell layout plus the mutable per-id and per-cell tallies.

    Mutated only while ingesting a single epoch; read-only afterwards.
    """

    def __init__(self, config: GridConfig, epoch_start: int, cells: list[int]):
        if len(cells) != config.x * config.y:
            raise ConfigError("cell vector length mismatch")
        if set(cells) != set(range(1, config.u + 1)):
            raise ConfigError("cell vector must cover exactly the ids 1..u")
        self.config = config
        self.epoch_start = epoch_start
        self._cells = list(cells)
        self.c_tuple = [0] * (config.u + 1)  # index 0 unused
        self.cell_counts = [0] * (config.x * config.y)
        self._row_of_sub = time_row_permutation(config.y)

    # The flat cell vector is stored row-major by q (time row), matching the
    # order in which it is serialized and shared.
    def cell_index(self, p: int, q: int) -> int:
        return q * self.config.x + p

    def cid_at(self, p: int, q: int) -> int:
        return self._cells[self.cell_index(p, q)]

    @property
    def cells(self) -> list[int]:
        return list(self._cells)

    def subinterval_of(self, t: int) -> int:
        cfg = self.config
        if not (self.epoch_start <= t < self.epoch_start + cfg.epoch_duration):
            raise OutOfEpoch(
                f"t={t} outside [{self.epoch_start}, {self.epoch_start + cfg.epoch_duration})"
            )
        return ((t - self.epoch_start) * cfg.y) // cfg.epoch_duration

    def row_of_subinterval(self, sub: int) -> int:
        return self._row_of_sub[sub]

    def subinterval_bounds(self, sub: int) -> tuple[int, int]:
        """Half-open [lo, hi) timestamp range of one subinterval."""
        cfg = self.config
        lo = self.epoch_start + (sub * cfg.epoch_duration) // cfg.y
        hi = self.epoch_start + ((sub + 1) * cfg.epoch_duration) // cfg.y
        return lo, hi

    def locate(self, location: str, t: int) -> CellRef:
        """Map a (location, time) pair to its cell; deterministic, so the
        data provider and the processor agree bit-exactly."""
        p = grid_hash(location.encode(), self.config.x)
        q = self.row_of_subinterval(self.subinterval_of(t))
        return CellRef(p=p, q=q, cid=self.cid_at(p, q))

    def assign_counter(self, cell: CellRef) -> int:
        """Increment and return the 1-based dense counter for the cell's id,
        tallying the cell itself as a side effect."""
        self.c_tuple[cell.cid] += 1
        self.cell_counts[self.cell_index(cell.p, cell.q)] += 1
        return self.c_tuple[cell.cid]

    def column_counts(self) -> list[list[int]]:
        """Per-cell tallies as x columns of y entries (indexed by grid row)."""
        cfg = self.config
        return [
            [self.cell_counts[self.cell_index(p, q)] for q in range(cfg.y)]
            for p in range(cfg.x)
        ]

    @classmethod
    def from_vectors(
        cls,
        config: GridConfig,
        epoch_start: int,
        cell_pairs: list[tuple[int, int]],
        c_tuple: list[int],
    ) -> "Grid":
        """Rebuild the shared state from the decrypted metadata vectors."""
        grid = cls(config, epoch_start, [cid for cid, _ in cell_pairs])
        grid.cell_counts = [count for _, count in cell_pairs]
        if len(c_tuple) != config.u:
            raise ConfigError("counter vector length mismatch")
        grid.c_tuple = [0] + list(c_tuple)
        return grid


def build_grid(config: GridConfig, epoch_start: int = 0) -> Grid:
    """Seeded allocation of cell-ids over the grid: every id appears at least
    once, the remainder is drawn uniformly, then the multiset is shuffled."""
    rng = random.Random(config.rng_seed)
    n_cells = config.x * config.y
    ids = list(range(1, config.u + 1))
    ids += [rng.randint(1, config.u) for _ in range(n_cells - config.u)]
    rng.shuffle(ids)
    return Grid(config, epoch_start, ids)


def compose_key(*values: str) -> str:
    """Flatten a multi-attribute index key into one location coordinate.

    Multi-column grids (e.g. order-key plus line-number) reuse the single
    (location, time) machinery by hashing the composed key.
    """
    for v in values:
        if "\x1f" in v:
            raise ValueError("attribute values must not contain the unit separator")
    return "\x1f".join(values)
