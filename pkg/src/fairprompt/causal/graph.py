"""Finite-domain causal graphs with selection (sink) nodes."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterable, Mapping

import numpy as np

from ..errors import (
    CptShapeMismatch,
    CycleDetected,
    GraphError,
    RowNotNormalized,
    StateSpaceTooLarge,
    UnknownVariable,
)

DEFAULT_MAX_STATES = 2**22
ROW_TOL = 1e-12

ROLES = ("observed", "internal", "selection")
_ROLE_ALIASES = {"internal-representation": "internal", "internal_representation": "internal"}

# Closed vocabulary for edge annotations; labels never change probabilities.
EDGE_LABELS = frozenset(
    [f"red-{i}" for i in range(1, 7)]
    + [f"blue-{r}" for r in ("i", "ii", "iii", "iv", "v")]
    + [f"red-{r}" for r in ("vi", "vii", "viii")]
    + ["plain"]
)

SELECTION_DOMAIN = (0, 1)


@dataclass(frozen=True)
class NodeSpec:
    name: str
    domain: tuple
    role: str = "observed"

    @property
    def is_selection(self) -> bool:
        return self.role == "selection"


@dataclass(frozen=True)
class Edge:
    parent: str
    child: str
    label: str = "plain"


def assignment_key(values: Iterable[Any]) -> str:
    """Key a parent assignment as values joined by ``|`` in parent order."""
    return "|".join(str(v) for v in values)


@dataclass(frozen=True, eq=False)
class CausalGraph:
    """Validated DAG over finite-domain nodes.

    Use :func:`build_graph` rather than constructing this directly; the
    factor arrays and topological order are filled in there.
    """

    nodes: tuple[NodeSpec, ...]
    edges: tuple[Edge, ...]
    cpts: Mapping[str, Mapping[str, tuple[float, ...]]]
    selections: Mapping[str, Mapping[str, float]]
    order: tuple[str, ...]
    n_states: int
    max_states: int = DEFAULT_MAX_STATES
    _factors: Mapping[str, np.ndarray] = field(default_factory=dict, repr=False)
    _index: Mapping[str, int] = field(default_factory=dict, repr=False)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n.name for n in self.nodes)

    def node(self, name: str) -> NodeSpec:
        try:
            return self.nodes[self._index[name]]
        except KeyError:
            raise UnknownVariable(f"unknown node {name!r}") from None

    def axis(self, name: str) -> int:
        self.node(name)
        return self._index[name]

    def parents(self, name: str) -> tuple[str, ...]:
        self.node(name)
        return tuple(e.parent for e in self.edges if e.child == name)

    def children(self, name: str) -> tuple[str, ...]:
        self.node(name)
        return tuple(e.child for e in self.edges if e.parent == name)

    def edge_label(self, parent: str, child: str) -> str:
        for e in self.edges:
            if e.parent == parent and e.child == child:
                return e.label
        raise KeyError(f"no edge {parent}->{child}")

    @property
    def selection_nodes(self) -> tuple[str, ...]:
        return tuple(n.name for n in self.nodes if n.is_selection)

    def factor(self, name: str) -> np.ndarray:
        """Factor array with axes ``(*parents, name)``; read-only."""
        self.node(name)
        return self._factors[name]

    def parent_assignments(self, name: str) -> list[tuple]:
        doms = [self.node(p).domain for p in self.parents(name)]
        return list(itertools.product(*doms))

    def with_selection(self, name: str, table: Mapping[Any, float]) -> "CausalGraph":
        """Copy of the graph with the selection table of ``name`` replaced."""
        if not self.node(name).is_selection:
            raise GraphError(f"{name!r} is not a selection node")
        selections = {k: dict(v) for k, v in self.selections.items()}
        selections[name] = dict(table)
        return build_graph(
            self.nodes, self.edges, self.cpts, selections, max_states=self.max_states
        )

    def describe(self) -> dict:
        return {
            "nodes": [{"name": n.name, "domain": list(n.domain), "role": n.role} for n in self.nodes],
            "edges": [{"from": e.parent, "to": e.child, "label": e.label} for e in self.edges],
            "cpts": {k: {kk: list(vv) for kk, vv in v.items()} for k, v in self.cpts.items()},
            "selections": {k: dict(v) for k, v in self.selections.items()},
        }


def _coerce_node(spec) -> NodeSpec:
    if isinstance(spec, NodeSpec):
        node = spec
    elif isinstance(spec, Mapping):
        node = NodeSpec(spec["name"], tuple(spec.get("domain", SELECTION_DOMAIN)), spec.get("role", "observed"))
    else:
        name, domain, *rest = spec
        node = NodeSpec(name, tuple(domain), rest[0] if rest else "observed")
    role = _ROLE_ALIASES.get(node.role, node.role)
    if role not in ROLES:
        raise GraphError(f"node {node.name!r}: unknown role {node.role!r}")
    domain = tuple(node.domain)
    if role == "selection":
        if len(domain) != 2:
            raise CptShapeMismatch(f"selection node {node.name!r} must be binary")
        domain = SELECTION_DOMAIN
    if not domain:
        raise CptShapeMismatch(f"node {node.name!r} has an empty domain")
    if len({str(v) for v in domain}) != len(domain):
        raise GraphError(f"node {node.name!r} has duplicate domain labels")
    return NodeSpec(node.name, domain, role)


def _coerce_edge(spec) -> Edge:
    if isinstance(spec, Edge):
        edge = spec
    elif isinstance(spec, Mapping):
        edge = Edge(spec["from"], spec["to"], spec.get("label", "plain"))
    else:
        edge = Edge(*spec)
    if edge.label not in EDGE_LABELS:
        raise GraphError(f"edge {edge.parent}->{edge.child}: unknown label {edge.label!r}")
    return edge


def _normalize_keys(table: Mapping) -> dict[str, Any]:
    out = {}
    for key, value in table.items():
        k = assignment_key(key) if isinstance(key, tuple) else str(key)
        if k in out:
            raise CptShapeMismatch(f"duplicate parent assignment key {k!r}")
        out[k] = value
    return out


def _topological_order(names: list[str], edges: list[Edge]) -> list[str]:
    indeg = {n: 0 for n in names}
    kids: dict[str, list[str]] = {n: [] for n in names}
    for e in edges:
        if e.parent == e.child:
            raise CycleDetected(f"self-loop on {e.parent!r}")
        indeg[e.child] += 1
        kids[e.parent].append(e.child)
    order: list[str] = []
    ready = [n for n in names if indeg[n] == 0]
    while ready:
        n = ready.pop(0)
        order.append(n)
        for c in kids[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
        ready.sort(key=names.index)
    if len(order) != len(names):
        stuck = sorted(set(names) - set(order), key=names.index)
        raise CycleDetected(f"cycle among nodes {stuck}")
    return order


def build_graph(
    nodes,
    edges,
    cpts: Mapping[str, Mapping],
    selections: Mapping[str, Mapping] | None = None,
    *,
    max_states: int = DEFAULT_MAX_STATES,
) -> CausalGraph:
    """Validate a graph description and precompute its factor arrays.

    Parameters
    ----------
    nodes : iterable of NodeSpec, dicts ``{name, domain, role}`` or tuples
    edges : iterable of Edge, dicts ``{from, to, label}`` or ``(parent, child[, label])``
    cpts : per non-selection node, ``{parent-key: [probabilities]}``
    selections : per selection node, ``{parent-key: P(S=1 | parents)}``
    max_states : cap on the dense joint size

    Parent keys are the parent values joined by ``|`` in edge declaration
    order (tuples of values are also accepted); root nodes use ``""``.
    """
    node_list = [_coerce_node(n) for n in nodes]
    names = [n.name for n in node_list]
    if len(set(names)) != len(names):
        raise GraphError("node names must be unique")
    index = {n: i for i, n in enumerate(names)}
    edge_list = [_coerce_edge(e) for e in edges]
    for e in edge_list:
        for end in (e.parent, e.child):
            if end not in index:
                raise UnknownVariable(f"edge references unknown node {end!r}")
    if len({(e.parent, e.child) for e in edge_list}) != len(edge_list):
        raise GraphError("duplicate edge")

    n_states = math.prod(len(n.domain) for n in node_list)
    if n_states > max_states:
        raise StateSpaceTooLarge(f"{n_states} joint states exceed the cap of {max_states}")

    order = _topological_order(names, edge_list)
    by_name = {n.name: n for n in node_list}
    for e in edge_list:
        if by_name[e.parent].is_selection:
            raise GraphError(f"selection node {e.parent!r} must be a sink, found child {e.child!r}")

    selections = selections or {}
    cpts_in = {k: _normalize_keys(v) for k, v in cpts.items()}
    sel_in = {k: _normalize_keys(v) for k, v in selections.items()}
    for k in list(cpts_in) + list(sel_in):
        if k not in index:
            raise UnknownVariable(f"table given for unknown node {k!r}")

    factors: dict[str, np.ndarray] = {}
    cpts_out: dict[str, dict[str, tuple[float, ...]]] = {}
    sel_out: dict[str, dict[str, float]] = {}
    for node in node_list:
        parents = [e.parent for e in edge_list if e.child == node.name]
        pdoms = [by_name[p].domain for p in parents]
        combos = list(itertools.product(*pdoms))
        expected = {assignment_key(c) for c in combos}
        shape = tuple(len(d) for d in pdoms) + (len(node.domain),)
        arr = np.empty(shape, dtype=float)
        if node.is_selection:
            if node.name in cpts_in:
                raise CptShapeMismatch(f"selection node {node.name!r} takes a selection table, not a CPT")
            table = sel_in.get(node.name)
            if table is None:
                raise CptShapeMismatch(f"missing selection table for {node.name!r}")
            if set(table) != expected:
                raise CptShapeMismatch(
                    f"selection table of {node.name!r} must have exactly the keys {sorted(expected)}"
                )
            clean = {}
            for combo in combos:
                k = assignment_key(combo)
                p = float(table[k])
                if not 0.0 <= p <= 1.0 or math.isnan(p):
                    raise RowNotNormalized(f"{node.name}[{k}]: selection probability {p} outside [0, 1]")
                arr[combo_index(combo, pdoms)] = (1.0 - p, p)
                clean[k] = p
            sel_out[node.name] = clean
        else:
            if node.name in sel_in:
                raise CptShapeMismatch(f"{node.name!r} is not a selection node")
            table = cpts_in.get(node.name)
            if table is None:
                raise CptShapeMismatch(f"missing CPT for {node.name!r}")
            if set(table) != expected:
                raise CptShapeMismatch(
                    f"CPT of {node.name!r} must have exactly the parent keys {sorted(expected)}"
                )
            clean = {}
            for combo in combos:
                k = assignment_key(combo)
                row = tuple(float(p) for p in table[k])
                if len(row) != len(node.domain):
                    raise CptShapeMismatch(
                        f"{node.name}[{k}]: row has {len(row)} entries, domain has {len(node.domain)}"
                    )
                if any(not 0.0 <= p <= 1.0 for p in row):
                    raise RowNotNormalized(f"{node.name}[{k}]: probabilities outside [0, 1]")
                if abs(math.fsum(row) - 1.0) > ROW_TOL:
                    raise RowNotNormalized(f"{node.name}[{k}]: row sums to {math.fsum(row)!r}")
                arr[combo_index(combo, pdoms)] = row
                clean[k] = row
            cpts_out[node.name] = clean
        arr.setflags(write=False)
        factors[node.name] = arr

    return CausalGraph(
        nodes=tuple(node_list),
        edges=tuple(edge_list),
        cpts=MappingProxyType(cpts_out),
        selections=MappingProxyType(sel_out),
        order=tuple(order),
        n_states=n_states,
        max_states=max_states,
        _factors=MappingProxyType(factors),
        _index=MappingProxyType(index),
    )


def combo_index(combo: tuple, domains: list[tuple]) -> tuple[int, ...]:
    return tuple(d.index(v) for v, d in zip(combo, domains))
