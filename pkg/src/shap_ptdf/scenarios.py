"""Seeded scenario sampling, train/test splitting, and CSV persistence.

Random numbers come from the PCG64 bit generator seeded through
``numpy.random.SeedSequence([stream, seed])``.  Uniform doubles are formed
from the raw 64-bit outputs as ``(u >> 11) * 2**-53``, so a dataset depends
only on those two documented algorithms and reproduces across platforms and
NumPy releases.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError
from .grid import Network
from .powerflow import Scenario, flows_batch

__all__ = [
    "Dataset",
    "Scenario",
    "read_csv",
    "sample_scenarios",
    "split",
    "uniform_stream",
    "write_csv",
]

STREAM_SAMPLE = 0
STREAM_SPLIT = 1
STREAM_BACKGROUND = 2


def uniform_stream(seed: int, size: int, stream: int = STREAM_SAMPLE) -> np.ndarray:
    """``size`` doubles uniform on [0, 1) from the documented PCG64 stream."""
    seq = np.random.SeedSequence([int(stream), int(seed)])
    raw = np.random.PCG64(seq).random_raw(size)
    return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def seeded_permutation(seed: int, n: int, stream: int) -> np.ndarray:
    return np.argsort(uniform_stream(seed, n, stream), kind="stable")


@dataclass
class Dataset:
    """Injection features ``X`` (n, k) and branch-flow targets ``Y`` (n, m), MW."""

    X: np.ndarray
    Y: np.ndarray
    feature_names: list[str]
    target_names: list[str]
    seed: int | None = None
    index: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, len(self.feature_names))
        Y = np.asarray(self.Y, dtype=float)
        rows = self.X.shape[0] if Y.size == 0 else -1
        self.Y = Y.reshape(rows, len(self.target_names))
        if self.X.shape[0] != self.Y.shape[0]:
            raise DataError("feature and target row counts differ")
        if self.index is None:
            self.index = np.arange(self.X.shape[0])
        self.feature_names = list(self.feature_names)
        self.target_names = list(self.target_names)

    def __len__(self):
        return self.X.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.feature_names == other.feature_names
            and self.target_names == other.target_names
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.Y, other.Y)
        )

    @property
    def scenarios(self) -> list[Scenario]:
        return [Scenario(x, y) for x, y in zip(self.X, self.Y)]

    def target(self, label: str) -> np.ndarray:
        try:
            return self.Y[:, self.target_names.index(label)]
        except ValueError:
            raise KeyError(f"unknown target line {label!r}") from None

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(
            self.X[rows], self.Y[rows], self.feature_names, self.target_names,
            self.seed, self.index[rows],
        )


def sample_scenarios(net: Network, n: int, low: float, high: float, seed: int) -> Dataset:
    """Draw ``n`` i.i.d. uniform injection vectors on [low, high) and solve each."""
    if n < 1:
        raise DataError("n must be >= 1")
    if not low < high:
        raise DataError(f"low ({low}) must be below high ({high})")
    k = len(net.gen_buses)
    u = uniform_stream(seed, n * k).reshape(n, k)
    X = low + (high - low) * u
    # rounding in the affine map can land exactly on high
    X = np.where(X >= high, np.nextafter(high, low), X)
    return Dataset(X, flows_batch(net, X), net.feature_names,
                   [f"F{lbl}" for lbl in net.branch_labels], seed)


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random disjoint split with ``round(train_fraction * n)`` training rows."""
    if not 0 < train_fraction < 1:
        raise DataError("train_fraction must lie strictly between 0 and 1")
    n = len(ds)
    n_train = int(round(train_fraction * n))
    perm = seeded_permutation(seed, n, STREAM_SPLIT)
    return ds.take(np.sort(perm[:n_train])), ds.take(np.sort(perm[n_train:]))


def format_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ds.feature_names + ds.target_names)
    for x, y in zip(ds.X, ds.Y):
        writer.writerow([f"{v:.10g}" for v in np.concatenate([x, y])])
    return buf.getvalue()


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(ds: Dataset, path) -> None:
    atomic_write_text(path, format_csv(ds))


def read_csv(path, feature_names=("PG2", "PG3"), target_names=None, seed=None) -> Dataset:
    """Read a dataset CSV; the header must list ``feature_names`` first.

    When ``target_names`` is None every remaining column must be named ``F<label>``.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty dataset file")
    header = [h.strip() for h in rows[0]]
    k = len(feature_names)
    if header[:k] != list(feature_names):
        raise DataError(f"{path}: header must start with {','.join(feature_names)}")
    targets = header[k:]
    if target_names is not None and targets != list(target_names):
        raise DataError(f"{path}: header mismatch, expected targets {list(target_names)}")
    if not targets or not all(t.startswith("F") and len(t) > 1 for t in targets):
        raise DataError(f"{path}: header mismatch, target columns must be F<line>")
    body = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        try:
            body.append([float(c) for c in row])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric cell") from None
    if not body:
        raise DataError(f"{path}: dataset has no rows")
    arr = np.array(body, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: non-finite value")
    return Dataset(arr[:, :k], arr[:, k:], list(feature_names), targets, seed)
