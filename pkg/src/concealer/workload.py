"""Synthetic workload generation and the plaintext data-file format.

Rows model skewed sensor traffic: locations drawn from a Zipf-weighted
pool, strictly increasing timestamps (one reading per tick, so filterable
columns never collide), observation ids drawn uniformly, and a numeric
``val`` extras column for the order aggregates.

File format, one record per line:

    location <tab> time <tab> observation [<tab> key=value ...]
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

from .grid import PlainTuple


@dataclass(frozen=True)
class WorkloadSpec:
    n_rows: int = 1000
    n_locations: int = 20
    n_observations: int = 50
    n_epochs: int = 1
    epoch_duration: int = 3600
    zipf_s: float = 0.8
    seed: int = 7
    # Fractions of point / range / aggregate-heavy queries in benches.
    query_mix: tuple[float, float, float] = (0.4, 0.4, 0.2)


def zipf_weights(n: int, s: float) -> list[float]:
    return [1.0 / (i ** s) for i in range(1, n + 1)]


def generate_epochs(spec: WorkloadSpec, epoch_start: int = 0) -> list[tuple[int, list[PlainTuple]]]:
    """Deterministic epochs of rows; timestamps strictly increase inside an
    epoch so (location, time) and (observation, time) pairs stay unique."""
    rng = random.Random(spec.seed)
    locations = [f"l{i:03d}" for i in range(1, spec.n_locations + 1)]
    observations = [f"d{i:04d}" for i in range(1, spec.n_observations + 1)]
    weights = zipf_weights(spec.n_locations, spec.zipf_s)
    per_epoch = spec.n_rows // spec.n_epochs
    if per_epoch < 1:
        raise ValueError("fewer rows than epochs")
    if per_epoch > spec.epoch_duration:
        raise ValueError("per-epoch rows exceed distinct timestamps available")
    epochs = []
    for e in range(spec.n_epochs):
        start = epoch_start + e * spec.epoch_duration
        ticks = sorted(rng.sample(range(spec.epoch_duration), per_epoch))
        rows = [
            PlainTuple(
                location=rng.choices(locations, weights)[0],
                time=start + t,
                observation=rng.choice(observations),
                extras=(("val", str(rng.randint(0, 999))),),
            )
            for t in ticks
        ]
        epochs.append((start, rows))
    return epochs


def write_rows(path: str | Path, rows: list[PlainTuple]) -> None:
    with open(path, "w") as fh:
        for r in rows:
            extras = "".join(f"\t{k}={v}" for k, v in r.extras)
            fh.write(f"{r.location}\t{r.time}\t{r.observation}{extras}\n")


def read_rows(path: str | Path) -> list[PlainTuple]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            raise ValueError(f"malformed record: {line!r}")
        extras = tuple(tuple(p.split("=", 1)) for p in parts[3:])
        rows.append(
            PlainTuple(location=parts[0], time=int(parts[1]), observation=parts[2], extras=extras)
        )
    return rows
