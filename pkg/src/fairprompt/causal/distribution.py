"""Dense joint distributions over finite domains, built by enumeration."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from ..errors import StateSpaceTooLarge, UnknownVariable, ZeroProbabilityEvidence
from .graph import CausalGraph

SUM_TOL = 1e-9
MIN_EVIDENCE_MASS = 1e-15

Evidence = Iterable[tuple[str, Any]] | Mapping[str, Any]


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Probability table over the cross product of the variables' domains.

    ``table`` has one axis per entry of ``variables`` and is never mutated.
    """

    variables: tuple[str, ...]
    domains: tuple[tuple, ...]
    table: np.ndarray

    def __post_init__(self):
        if self.table.shape != tuple(len(d) for d in self.domains):
            raise ValueError("table shape does not match the variable domains")
        if len(set(self.variables)) != len(self.variables):
            raise ValueError("duplicate variable names")
        self.table.setflags(write=False)

    def axis(self, name: str) -> int:
        try:
            return self.variables.index(name)
        except ValueError:
            raise UnknownVariable(f"unknown variable {name!r}") from None

    def domain(self, name: str) -> tuple:
        return self.domains[self.axis(name)]

    def value_index(self, name: str, value: Any) -> int:
        dom = self.domain(name)
        if value in dom:
            return dom.index(value)
        labels = [str(v) for v in dom]
        if str(value) in labels:
            return labels.index(str(value))
        raise UnknownVariable(f"value {value!r} is not in the domain of {name!r}: {dom}")

    def total(self) -> float:
        return float(self.table.sum())

    def probability(self, assignment: Mapping[str, Any]) -> float:
        """Probability of a (possibly partial) assignment."""
        idx: list[Any] = [slice(None)] * len(self.variables)
        for name, value in assignment.items():
            idx[self.axis(name)] = self.value_index(name, value)
        return float(self.table[tuple(idx)].sum())

    def items(self):
        """Yield ``(assignment tuple, probability)`` over every joint state."""
        for combo in itertools.product(*(range(len(d)) for d in self.domains)):
            values = tuple(d[i] for d, i in zip(self.domains, combo))
            yield values, float(self.table[combo])

    def as_dict(self) -> dict[tuple, float]:
        return dict(self.items())

    def marginal(self, names: Sequence[str]) -> "DiscreteDistribution":
        """Distribution over ``names`` (in that order), summing out the rest."""
        names = tuple(names)
        if len(set(names)) != len(names):
            raise ValueError("duplicate names in marginal")
        keep = [self.axis(n) for n in names]
        drop = tuple(i for i in range(len(self.variables)) if i not in keep)
        summed = self.table.sum(axis=drop) if drop else self.table
        remaining = [i for i in range(len(self.variables)) if i not in drop]
        perm = [remaining.index(i) for i in keep]
        table = np.ascontiguousarray(np.transpose(summed, perm)) if perm else np.asarray(summed)
        return DiscreteDistribution(names, tuple(self.domains[i] for i in keep), table)

    def marginalize(self, names: Iterable[str]) -> "DiscreteDistribution":
        """Sum out ``names``."""
        drop = set(names)
        for n in drop:
            self.axis(n)
        return self.marginal([v for v in self.variables if v not in drop])

    def normalized(self) -> "DiscreteDistribution":
        mass = self.total()
        if mass <= MIN_EVIDENCE_MASS:
            raise ZeroProbabilityEvidence("cannot normalize a table with zero mass")
        return DiscreteDistribution(self.variables, self.domains, self.table / mass)


def joint_distribution(graph: CausalGraph, max_states: int | None = None) -> DiscreteDistribution:
    """Exact joint over every node (selection nodes included) by enumeration.

    The table is the product of each node's factor, multiplied in
    topological order and broadcast onto the node declaration axes.
    """
    cap = graph.max_states if max_states is None else max_states
    if graph.n_states > cap:
        raise StateSpaceTooLarge(f"{graph.n_states} joint states exceed the cap of {cap}")
    names = graph.names
    n = len(names)
    table = np.ones(tuple(len(node.domain) for node in graph.nodes), dtype=float)
    for name in graph.order:
        axes = [graph.axis(p) for p in graph.parents(name)] + [graph.axis(name)]
        factor = graph.factor(name)
        perm = np.argsort(axes)
        shape = [1] * n
        for ax in axes:
            shape[ax] = table.shape[ax]
        table = table * np.transpose(factor, perm).reshape(shape)
    return DiscreteDistribution(names, tuple(node.domain for node in graph.nodes), table)


def _evidence_pairs(evidence: Evidence) -> list[tuple[str, Any]]:
    if evidence is None:
        return []
    if isinstance(evidence, Mapping):
        return list(evidence.items())
    return [tuple(e) for e in evidence]


def condition(dist: DiscreteDistribution, evidence: Evidence) -> DiscreteDistribution:
    """Condition on a value assignment and drop the conditioned variables.

    Raises ZeroProbabilityEvidence when the event has probability
    ``<= 1e-15``; an empty table is never silently renormalized.
    """
    pairs = _evidence_pairs(evidence)
    fixed: dict[int, int] = {}
    for name, value in pairs:
        ax = dist.axis(name)
        vi = dist.value_index(name, value)
        if fixed.get(ax, vi) != vi:
            raise ZeroProbabilityEvidence(f"contradictory evidence on {name!r}")
        fixed[ax] = vi
    if not fixed:
        return dist
    idx = tuple(fixed.get(i, slice(None)) for i in range(len(dist.variables)))
    sub = np.asarray(dist.table[idx])
    mass = float(sub.sum())
    if mass <= MIN_EVIDENCE_MASS:
        desc = ", ".join(f"{n}={v}" for n, v in pairs)
        raise ZeroProbabilityEvidence(f"evidence ({desc}) has probability {mass:.3g}")
    keep = [i for i in range(len(dist.variables)) if i not in fixed]
    return DiscreteDistribution(
        tuple(dist.variables[i] for i in keep),
        tuple(dist.domains[i] for i in keep),
        sub / mass,
    )
