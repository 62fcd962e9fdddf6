"""Dataset containers, seeded random streams, standardization and CSV I/O.

Every randomized routine in the package takes an :class:`RngStream`. A stream
is a ``(seed, stream_id)`` pair that maps onto numpy's PCG64 generator through
``SeedSequence(seed, spawn_key=(stream_id,))``; the algorithm choice is part of
the public contract, so the same pair reproduces the same draws everywhere.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError, ParseError

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """A reproducible source of randomness.

    ``child(k)`` derives an independent sub-stream, so per-replicate or
    per-null-dataset draws can be regenerated without replaying a sequence.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _U64 and 0 <= self.stream_id <= _U64):
            raise InvalidInputError("seed and stream_id must be unsigned 64-bit integers")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int) -> "RngStream":
        stream = self
        for key in keys:
            mixed = np.random.SeedSequence([stream.stream_id, int(key)]).generate_state(1, np.uint64)
            stream = RngStream(self.seed, int(mixed[0]))
        return stream


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator, or an int seed."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator()
    raise InvalidInputError(f"cannot build a generator from {type(rng).__name__}")


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """N rows of (x, y, z) with scalar x, y and p-dimensional z."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        x = _frozen(self.x).reshape(-1)
        y = _frozen(self.y).reshape(-1)
        z = np.array(self.z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        z.setflags(write=False)
        if z.ndim != 2:
            raise InvalidInputError("z must be a matrix")
        n = x.shape[0]
        if n < 1 or y.shape[0] != n or z.shape[0] != n or z.shape[1] < 1:
            raise InvalidInputError(
                f"inconsistent shapes: x={x.shape}, y={y.shape}, z={z.shape}"
            )
        for name, arr in (("x", x), ("y", y), ("z", z)):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} contains non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @property
    def n_rows(self) -> int:
        return self.x.shape[0]

    @property
    def z_dim(self) -> int:
        return self.z.shape[1]

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows)
        return LabeledDataset(self.x[rows], self.y[rows], self.z[rows])

    def with_x(self, x_new) -> "LabeledDataset":
        return LabeledDataset(x_new, self.y, self.z)


@dataclass(frozen=True, eq=False)
class NullDataset:
    """A copy of a dataset whose x column was redrawn from p(x | z)."""

    base: LabeledDataset
    source_seed: RngStream | None = None

    @property
    def x(self):
        return self.base.x

    @property
    def y(self):
        return self.base.y

    @property
    def z(self):
        return self.base.z


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.5
    shuffle_seed: RngStream = field(default_factory=lambda: RngStream(0))

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidInputError("train_fraction must lie in (0, 1)")


def round_half_away(value: float) -> int:
    return int(math.floor(abs(value) + 0.5)) * (1 if value >= 0 else -1)


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    if n < 2:
        raise InvalidInputError("need at least 2 rows to split")
    n_train = min(max(round_half_away(spec.train_fraction * n), 1), n - 1)
    perm = spec.shuffle_seed.generator().permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split_train_test(d: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Shuffle rows with ``spec.shuffle_seed`` and cut off round(f * N) training rows."""
    train_idx, test_idx = split_indices(d.n_rows, spec)
    return d.subset(train_idx), d.subset(test_idx)


class Standardized(NamedTuple):
    values: np.ndarray
    means: np.ndarray
    stdevs: np.ndarray
    constant: np.ndarray


def standardize_columns(m) -> Standardized:
    """Center and scale each column with the population (divisor n) stdev.

    Constant columns become all-zero and are reported in ``constant``; their
    ``stdevs`` entry is set to 1 so the transform stays invertible.
    """
    m = np.asarray(m, dtype=float)
    squeeze = m.ndim == 1
    if squeeze:
        m = m[:, None]
    means = m.mean(axis=0)
    stdevs = m.std(axis=0)
    constant = stdevs <= 1e-12 * (1.0 + np.abs(means))
    stdevs = np.where(constant, 1.0, stdevs)
    values = (m - means) / stdevs
    values[:, constant] = 0.0
    if squeeze:
        values = values[:, 0]
    return Standardized(values, means, stdevs, constant)


def write_csv(d: LabeledDataset, path) -> None:
    """Write ``x, y, z_1..z_p`` with round-trip float formatting."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"] + [f"z_{j + 1}" for j in range(d.z_dim)])
        for i in range(d.n_rows):
            w.writerow([repr(float(d.x[i])), repr(float(d.y[i]))] + [repr(float(v)) for v in d.z[i]])


def load_csv(path) -> LabeledDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", row=0)
    header = [h.strip() for h in rows[0]]
    for required in ("x", "y"):
        if required not in header:
            raise ParseError(f"missing column {required!r}", row=0)
    z_cols = sorted(
        (h for h in header if h.startswith("z_") and h[2:].isdigit()), key=lambda h: int(h[2:])
    )
    if not z_cols:
        raise ParseError("missing column 'z_1'", row=0)
    for j, name in enumerate(z_cols, start=1):
        if name != f"z_{j}":
            raise ParseError(f"missing column 'z_{j}'", row=0)
    idx_x, idx_y = header.index("x"), header.index("y")
    idx_z = [header.index(c) for c in z_cols]
    body = [r for r in rows[1:] if r]
    if not body:
        raise ParseError("no data rows", row=1)
    out = np.empty((len(body), 2 + len(idx_z)))
    for i, r in enumerate(body, start=1):
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(r)}", row=i)
        for k, col in enumerate([idx_x, idx_y] + idx_z):
            try:
                out[i - 1, k] = float(r[col])
            except ValueError:
                raise ParseError(f"non-numeric value {r[col]!r} in column {header[col]!r}", row=i) from None
    if not np.all(np.isfinite(out)):
        bad = int(np.where(~np.all(np.isfinite(out), axis=1))[0][0]) + 1
        raise ParseError("non-finite value", row=bad)
    return LabeledDataset(out[:, 0], out[:, 1], out[:, 2:])
