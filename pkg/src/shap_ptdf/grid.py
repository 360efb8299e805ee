"""Network data model, plain-text case format, and DC susceptance matrices.

Reactances are per unit on ``base_mva``; loads are MW.  Branch orientation
(``from_bus -> to_bus``) is the positive flow direction everywhere.

Case file format (whitespace separated, ``#`` starts a comment)::

    baseMVA 100
    bus <id> <slack|generator|load|junction> <load_MW>
    branch <from> <to> <x_pu>
    slack <id>
    gen <bus>

``gen`` lines list the non-slack generator buses in feature order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .exceptions import CaseFormatError, NetworkValidationError

BUS_KINDS = ("slack", "generator", "load", "junction")


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    load: float = 0.0

    def __post_init__(self):
        if self.kind not in BUS_KINDS:
            raise NetworkValidationError(f"bus {self.id}: unknown kind {self.kind!r}")
        if not np.isfinite(self.load) or self.load < 0:
            raise NetworkValidationError(f"bus {self.id}: load must be finite and >= 0")


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    reactance: float
    label: str = ""

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise NetworkValidationError(f"branch {self.from_bus}-{self.to_bus}: self loop")
        if not np.isfinite(self.reactance) or self.reactance <= 0:
            raise NetworkValidationError(
                f"branch {self.from_bus}-{self.to_bus}: reactance must be > 0, "
                f"got {self.reactance!r}"
            )
        if not self.label:
            object.__setattr__(self, "label", f"{self.from_bus}-{self.to_bus}")


@dataclass(frozen=True)
class Network:
    """An immutable single-island DC network.

    ``gen_buses`` holds the non-slack generator buses and fixes the feature
    order used by datasets, SHAP vectors and PTDF columns.
    """

    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    slack_bus: int
    gen_buses: tuple[int, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "gen_buses", tuple(self.gen_buses))
        object.__setattr__(self, "_index", {b.id: i for i, b in enumerate(self.buses)})
        self._validate()

    def _validate(self):
        if not (np.isfinite(self.base_mva) and self.base_mva > 0):
            raise NetworkValidationError("baseMVA must be > 0")
        if len(self._index) != len(self.buses):
            raise NetworkValidationError("duplicate bus id")
        if not self.buses:
            raise NetworkValidationError("network has no buses")
        slacks = [b.id for b in self.buses if b.kind == "slack"]
        if len(slacks) != 1:
            raise NetworkValidationError(f"expected exactly one slack bus, found {len(slacks)}")
        if self.slack_bus != slacks[0]:
            raise NetworkValidationError(
                f"slack bus {self.slack_bus} is not the bus of kind 'slack' ({slacks[0]})"
            )
        labels = [br.label for br in self.branches]
        if len(set(labels)) != len(labels):
            raise NetworkValidationError("duplicate branch label")
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in self._index:
                    raise NetworkValidationError(f"branch {br.label}: unknown bus {end}")
        if len(set(self.gen_buses)) != len(self.gen_buses):
            raise NetworkValidationError("duplicate generator bus")
        for g in self.gen_buses:
            if g not in self._index:
                raise NetworkValidationError(f"generator bus {g} does not exist")
            if g == self.slack_bus:
                raise NetworkValidationError("slack bus cannot be listed as a gen bus")
        n = len(self.buses)
        if n > 1:
            rows = [self._index[br.from_bus] for br in self.branches]
            cols = [self._index[br.to_bus] for br in self.branches]
            adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
            n_comp, _ = connected_components(adj, directed=False)
            if n_comp != 1:
                raise NetworkValidationError(f"network is disconnected ({n_comp} islands)")

    def bus_index(self, bus_id: int) -> int:
        return self._index[bus_id]

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @property
    def total_load(self) -> float:
        return float(sum(b.load for b in self.buses))

    @property
    def branch_labels(self) -> list[str]:
        return [br.label for br in self.branches]

    @property
    def feature_names(self) -> list[str]:
        return [f"PG{g}" for g in self.gen_buses]

    @cached_property
    def incidence(self) -> np.ndarray:
        """Branch-bus incidence matrix: +1 at the from end, -1 at the to end."""
        a = np.zeros((self.n_branches, self.n_buses))
        for k, br in enumerate(self.branches):
            a[k, self._index[br.from_bus]] = 1.0
            a[k, self._index[br.to_bus]] = -1.0
        a.setflags(write=False)
        return a

    def branch(self, label: str) -> Branch:
        for br in self.branches:
            if br.label == label:
                return br
        raise KeyError(label)


def susceptance_matrices(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Bbus, Bf)`` in per unit.

    ``Bf @ theta`` gives branch flows and ``Bbus = A.T @ diag(1/x) @ A`` is the
    weighted Laplacian of the branch graph.
    """
    a = net.incidence
    b = np.array([1.0 / br.reactance for br in net.branches])
    bf = b[:, None] * a
    bbus = a.T @ bf
    return bbus, bf


# Transcribed from the Matpower case9 distribution (branch x in p.u., bus Pd in MW).
_CASE9_BRANCHES = (
    (1, 4, 0.0576),
    (4, 5, 0.092),
    (5, 6, 0.17),
    (3, 6, 0.0586),
    (6, 7, 0.1008),
    (7, 8, 0.072),
    (8, 2, 0.0625),
    (8, 9, 0.161),
    (9, 4, 0.085),
)
_CASE9_BUSES = (
    (1, "slack", 0.0),
    (2, "generator", 0.0),
    (3, "generator", 0.0),
    (4, "junction", 0.0),
    (5, "load", 90.0),
    (6, "junction", 0.0),
    (7, "load", 100.0),
    (8, "junction", 0.0),
    (9, "load", 125.0),
)


def builtin_case9() -> Network:
    """The 9-bus, 3-generator test network with slack at bus 1."""
    return Network(
        base_mva=100.0,
        buses=tuple(Bus(i, kind, load) for i, kind, load in _CASE9_BUSES),
        branches=tuple(Branch(f, t, x) for f, t, x in _CASE9_BRANCHES),
        slack_bus=1,
        gen_buses=(2, 3),
    )


def _num(tok, lineno, kind):
    try:
        return kind(tok)
    except ValueError:
        raise CaseFormatError(lineno, f"expected {kind.__name__}, got {tok!r}") from None


def parse_case(text: str) -> Network:
    """Parse the plain-text case format (see module docstring)."""
    base_mva = None
    buses, branches, gens, slacks = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        key, args = tok[0], tok[1:]
        arity = {"baseMVA": 1, "bus": 3, "branch": 3, "slack": 1, "gen": 1}
        if key not in arity:
            raise CaseFormatError(lineno, f"unknown record {key!r}")
        if len(args) != arity[key]:
            raise CaseFormatError(lineno, f"{key} expects {arity[key]} fields, got {len(args)}")
        if key == "baseMVA":
            if base_mva is not None:
                raise CaseFormatError(lineno, "duplicate baseMVA")
            base_mva = _num(args[0], lineno, float)
        elif key == "bus":
            if args[1] not in BUS_KINDS:
                raise CaseFormatError(lineno, f"unknown bus kind {args[1]!r}")
            buses.append(Bus(_num(args[0], lineno, int), args[1], _num(args[2], lineno, float)))
        elif key == "branch":
            branches.append(
                Branch(
                    _num(args[0], lineno, int),
                    _num(args[1], lineno, int),
                    _num(args[2], lineno, float),
                )
            )
        elif key == "slack":
            slacks.append(_num(args[0], lineno, int))
        else:
            gens.append(_num(args[0], lineno, int))
    if base_mva is None:
        raise CaseFormatError(0, "missing baseMVA header")
    if len(slacks) != 1:
        raise NetworkValidationError(f"expected exactly one slack record, found {len(slacks)}")
    return Network(base_mva, tuple(buses), tuple(branches), slacks[0], tuple(gens))


def serialize_case(net: Network) -> str:
    """Inverse of :func:`parse_case`; floats use their shortest round-trip repr."""
    lines = [f"baseMVA {net.base_mva!r}"]
    lines += [f"bus {b.id} {b.kind} {float(b.load)!r}" for b in net.buses]
    lines += [f"branch {br.from_bus} {br.to_bus} {float(br.reactance)!r}" for br in net.branches]
    lines.append(f"slack {net.slack_bus}")
    lines += [f"gen {g}" for g in net.gen_buses]
    return "\n".join(lines) + "\n"


def load_case(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return parse_case(fh.read())
