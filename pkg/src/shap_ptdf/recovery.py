"""Regress summed SHAP values on injections to estimate PTDF rows."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError, NumericalError
from .grid import Network
from .linalg import lstsq_qr
from .powerflow import PtdfMatrix
from .scenarios import Dataset
from .shapley import ExplanationSet


@dataclass
class ShapLibrary:
    """Injection matrix ``P`` (n, k) and per-row SHAP sums ``phi_sums`` (n,)."""

    P: np.ndarray
    phi_sums: np.ndarray
    feature_names: list[str] | None = None

    def __post_init__(self):
        self.phi_sums = np.asarray(self.phi_sums, dtype=float).reshape(-1)
        P = np.asarray(self.P, dtype=float)
        self.P = P.reshape(self.phi_sums.size, -1) if P.size else P.reshape(0, P.shape[-1] if P.ndim == 2 else 0)
        if not (np.all(np.isfinite(self.P)) and np.all(np.isfinite(self.phi_sums))):
            raise DataError("library contains non-finite values")

    def __len__(self):
        return self.phi_sums.size


@dataclass
class RecoveryResult:
    d_hat: np.ndarray
    epsilon: float
    residual_rms: float


def build_library(es: ExplanationSet, ds: Dataset) -> ShapLibrary:
    if len(es) != len(ds):
        raise DataError(f"{len(es)} explanations for {len(ds)} dataset rows")
    if len(es) == 0:
        return ShapLibrary(np.zeros((0, len(ds.feature_names))), np.zeros(0), ds.feature_names)
    if not np.array_equal(es.feature_values, ds.X):
        raise DataError("explanations are not row-aligned with the dataset")
    return ShapLibrary(ds.X.copy(), es.phis.sum(axis=1), list(ds.feature_names))


def recover_ptdf(lib: ShapLibrary) -> RecoveryResult:
    """Least-squares fit ``phi_sum ~ P @ d_hat + epsilon``."""
    n, k = lib.P.shape
    names = lib.feature_names or [f"x{i}" for i in range(k)]
    if n < k + 1:
        raise NumericalError(f"need at least {k + 1} library rows, got {n}")
    for j in range(k):
        if np.all(lib.P[:, j] == lib.P[0, j]):
            raise NumericalError(f"injection column {names[j]!r} is constant; PTDF not identifiable")
    design = np.column_stack([lib.P, np.ones(n)])
    coef = lstsq_qr(design, lib.phi_sums, [*names, "intercept"])
    resid = design @ coef - lib.phi_sums
    return RecoveryResult(coef[:k], float(coef[k]), float(np.sqrt(np.mean(resid ** 2))))


def recover_all(net: Network, explanations: dict[str, ExplanationSet], ds: Dataset) -> PtdfMatrix:
    """Recovered PTDF matrix; ``explanations`` maps branch label to its SHAP set on ``ds``."""
    rows = []
    for label in net.branch_labels:
        if label not in explanations:
            raise DataError(f"no explanations for line {label}")
        rows.append(recover_ptdf(build_library(explanations[label], ds)).d_hat)
    return PtdfMatrix(np.array(rows), net.branch_labels, net.gen_buses)


@dataclass
class ComparisonReport:
    true: PtdfMatrix
    recovered: PtdfMatrix

    @property
    def errors(self) -> np.ndarray:
        return self.recovered.values - self.true.values

    @property
    def max_abs_error(self) -> float:
        return float(np.max(np.abs(self.errors))) if self.errors.size else 0.0

    @property
    def line_rms(self) -> np.ndarray:
        return np.sqrt(np.mean(self.errors ** 2, axis=1))

    def to_text(self) -> str:
        buses = self.true.col_labels
        head = ["Line", *[f"Bus {b}" for b in buses], "|", *[f"Bus {b}" for b in buses], "RMS err"]
        width = 10
        lines = [
            f"{'':<10}{'True PTDF D':^{width * len(buses)}} | {'SHAP-based PTDF D_hat':^{width * len(buses)}}",
            f"{head[0]:<10}" + "".join(f"{h:>{width}}" for h in head[1:1 + len(buses)])
            + " | " + "".join(f"{h:>{width}}" for h in head[2 + len(buses):2 + 2 * len(buses)])
            + f"{head[-1]:>{width + 2}}",
        ]
        lines.append("-" * len(lines[1]))
        for r, label in enumerate(self.true.row_labels):
            t = "".join(f"{_fmt4(v):>{width}}" for v in self.true.values[r])
            h = "".join(f"{_fmt4(v):>{width}}" for v in self.recovered.values[r])
            lines.append(f"{'Line ' + label:<10}{t} | {h}{self.line_rms[r]:>{width + 2}.2e}")
        lines.append("-" * len(lines[1]))
        lines.append(f"max |D_hat - D| = {self.max_abs_error:.3e}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["line", "bus", "true", "recovered", "abs_err"])
        for r, label in enumerate(self.true.row_labels):
            for c, bus in enumerate(self.true.col_labels):
                t, h = self.true.values[r, c], self.recovered.values[r, c]
                writer.writerow([label, bus, repr(float(t)), repr(float(h)), repr(float(abs(h - t)))])
        return buf.getvalue()


def _fmt4(v: float) -> str:
    s = f"{v:.4f}"
    return "0.0000" if s == "-0.0000" else s


def compare_ptdf(d: PtdfMatrix, d_hat: PtdfMatrix) -> ComparisonReport:
    if d.shape != d_hat.shape or d.row_labels != d_hat.row_labels or d.col_labels != d_hat.col_labels:
        raise DataError("PTDF matrices differ in shape or labels")
    return ComparisonReport(d, d_hat)


def format_ptdf(d: PtdfMatrix, title: str = "PTDF") -> str:
    width = 10
    lines = [title, f"{'Line':<10}" + "".join(f"{'Bus ' + str(b):>{width}}" for b in d.col_labels)]
    for r, label in enumerate(d.row_labels):
        lines.append(f"{'Line ' + label:<10}" + "".join(f"{_fmt4(v):>{width}}" for v in d.values[r]))
    return "\n".join(lines) + "\n"


def ptdf_to_csv(d: PtdfMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["line", *[f"bus{b}" for b in d.col_labels]])
    for r, label in enumerate(d.row_labels):
        writer.writerow([label, *[repr(float(v)) for v in d.values[r]]])
    return buf.getvalue()


def ptdf_from_csv(text: str) -> PtdfMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][0] != "line" or not all(h.startswith("bus") for h in rows[0][1:]):
        raise DataError("not a PTDF CSV")
    cols = [int(h[3:]) for h in rows[0][1:]]
    try:
        values = [[float(c) for c in r[1:]] for r in rows[1:]]
    except ValueError:
        raise DataError("non-numeric PTDF entry") from None
    return PtdfMatrix(np.array(values).reshape(len(rows) - 1, len(cols)), [r[0] for r in rows[1:]], cols)
