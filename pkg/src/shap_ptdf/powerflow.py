"""DC power flow and power transfer distribution factors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import DataError, NumericalError
from .grid import Network, susceptance_matrices


@dataclass(frozen=True)
class PtdfMatrix:
    """Line-flow sensitivities (MW/MW), rows = branches, columns = gen buses."""

    values: np.ndarray
    row_labels: tuple[str, ...]
    col_labels: tuple[int, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_labels", tuple(self.row_labels))
        object.__setattr__(self, "col_labels", tuple(self.col_labels))
        if values.shape != (len(self.row_labels), len(self.col_labels)):
            raise DataError(
                f"PTDF shape {values.shape} does not match labels "
                f"({len(self.row_labels)} x {len(self.col_labels)})"
            )
        if not np.all(np.isfinite(values)):
            raise DataError("PTDF entries must be finite")
        values.setflags(write=False)

    @property
    def shape(self):
        return self.values.shape

    def row(self, label: str) -> np.ndarray:
        return self.values[self.row_labels.index(label)]

    def entry(self, label: str, bus: int) -> float:
        return float(self.values[self.row_labels.index(label), self.col_labels.index(bus)])

    def is_bounded(self, tol: float = 1e-12) -> bool:
        """True when every entry lies in [-1, 1]."""
        return bool(np.all(np.abs(self.values) <= 1.0 + tol))


def _as_injection(net: Network, inj) -> np.ndarray:
    p = np.asarray(inj, dtype=float).reshape(-1)
    if p.shape != (len(net.gen_buses),):
        raise DataError(f"expected {len(net.gen_buses)} injections, got {p.size}")
    if not np.all(np.isfinite(p)):
        raise DataError("injections must be finite")
    return p


def bus_injections(net: Network, inj) -> np.ndarray:
    """Net MW injection per bus, with the slack generator balancing total load."""
    p = _as_injection(net, inj)
    pbus = -np.array([b.load for b in net.buses])
    for g, pg in zip(net.gen_buses, p):
        pbus[net.bus_index(g)] += pg
    pbus[net.bus_index(net.slack_bus)] += net.total_load - p.sum()
    return pbus


class _ReducedSystem:
    """LU factorisation of Bbus with the slack row and column removed."""

    def __init__(self, net: Network):
        bbus, bf = susceptance_matrices(net)
        self.net = net
        self.bf = bf
        self.keep = np.array([i for i in range(net.n_buses) if i != net.bus_index(net.slack_bus)])
        reduced = bbus[np.ix_(self.keep, self.keep)]
        try:
            rcond = 1.0 / np.linalg.cond(reduced) if reduced.size else 1.0
        except np.linalg.LinAlgError:
            rcond = 0.0
        if not np.isfinite(rcond) or rcond < 1e-14:
            raise NumericalError("reduced susceptance matrix is singular")
        self.lu = scipy.linalg.lu_factor(reduced)

    def angles(self, pbus_pu: np.ndarray) -> np.ndarray:
        theta = np.zeros(self.net.n_buses)
        if self.keep.size:
            theta[self.keep] = scipy.linalg.lu_solve(self.lu, pbus_pu[self.keep])
        return theta


def solve_dc(net: Network, inj) -> tuple[np.ndarray, np.ndarray]:
    """Solve the DC power flow for generator injections ``inj`` (MW).

    Returns ``(angles, flows)``: bus voltage angles in radians (slack = 0) and
    branch flows in MW, positive from ``from_bus`` to ``to_bus``.
    """
    system = _ReducedSystem(net)
    pbus = bus_injections(net, inj)
    theta = system.angles(pbus / net.base_mva)
    flows = system.bf @ theta * net.base_mva
    return theta, flows


def balance_residual(net: Network, inj, flows) -> np.ndarray:
    """Per-bus MW mismatch between net injection and outgoing branch flow."""
    return bus_injections(net, inj) - net.incidence.T @ np.asarray(flows, dtype=float)


def _ptdf_closed_form(net: Network) -> np.ndarray:
    system = _ReducedSystem(net)
    k = system.keep.size
    inv = scipy.linalg.lu_solve(system.lu, np.eye(k)) if k else np.zeros((0, 0))
    full = np.zeros((net.n_branches, net.n_buses))
    full[:, system.keep] = system.bf[:, system.keep] @ inv
    return full[:, [net.bus_index(g) for g in net.gen_buses]]


def _ptdf_finite_difference(net: Network, step: float = 1.0) -> np.ndarray:
    k = len(net.gen_buses)
    _, f0 = solve_dc(net, np.zeros(k))
    cols = []
    for j in range(k):
        p = np.zeros(k)
        p[j] = step
        cols.append((solve_dc(net, p)[1] - f0) / step)
    return np.column_stack(cols) if cols else np.zeros((net.n_branches, 0))


def analytical_ptdf(net: Network, method: str = "closed_form") -> PtdfMatrix:
    """PTDF of every branch with respect to each non-slack generator bus.

    ``method`` is ``"closed_form"`` (reduced-matrix inverse) or
    ``"finite_difference"`` (1 MW perturbations of :func:`solve_dc`).
    """
    if method == "closed_form":
        values = _ptdf_closed_form(net)
    elif method == "finite_difference":
        values = _ptdf_finite_difference(net)
    else:
        raise ValueError(f"unknown method {method!r}")
    return PtdfMatrix(values, net.branch_labels, net.gen_buses)


@dataclass(frozen=True)
class Scenario:
    """One database row: generator injections and the resulting branch flows."""

    injections: np.ndarray
    flows: np.ndarray


def run_scenario(net: Network, inj) -> Scenario:
    _, flows = solve_dc(net, inj)
    return Scenario(_as_injection(net, inj), flows)


def flows_batch(net: Network, injections) -> np.ndarray:
    """Branch flows (MW) for each row of an ``(n, k)`` injection matrix."""
    p = np.asarray(injections, dtype=float)
    if p.ndim != 2 or p.shape[1] != len(net.gen_buses):
        raise DataError(f"expected an (n, {len(net.gen_buses)}) injection matrix")
    if not np.all(np.isfinite(p)):
        raise DataError("injections must be finite")
    system = _ReducedSystem(net)
    pbus = np.tile(-np.array([b.load for b in net.buses]), (p.shape[0], 1))
    for j, g in enumerate(net.gen_buses):
        pbus[:, net.bus_index(g)] += p[:, j]
    pbus[:, net.bus_index(net.slack_bus)] += net.total_load - p.sum(axis=1)
    theta = np.zeros_like(pbus)
    if system.keep.size:
        theta[:, system.keep] = scipy.linalg.lu_solve(
            system.lu, (pbus[:, system.keep] / net.base_mva).T
        ).T
    return theta @ system.bf.T * net.base_mva
