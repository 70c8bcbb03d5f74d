"""Checks that combining the three prompting objectives removes A -> Y dependence.

The reasoning graph has internal representations for the social category
(A), entity, scenario, social-agnostic fact and social-salient text, the
decision Y (children of fact and salient only), the historical selection S
and the prompt-driven selection PPC. Every check conditions on S=1, PPC=1.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import RoleUnmapped, TopologyMismatch, ZeroProbabilityEvidence
from .distribution import condition, joint_distribution
from .graph import CausalGraph, assignment_key
from .independence import DEFAULT_THRESHOLD, IndependenceReport, test_independence

ROLE_NAMES = ("A", "Y", "S", "PPC", "entity", "scenario", "fact", "salient")
PPC_PARENT_ROLES = ("A", "entity", "scenario", "fact", "salient")
S_PARENT_ROLES = ("A", "entity", "scenario")

# premise key -> (strategy, role measured against A)
PREMISES = (
    ("I:fact", "fact"),
    ("II:entity", "entity"),
    ("II:scenario", "scenario"),
    ("III:salient", "salient"),
)


@dataclass(frozen=True)
class Theorem1Report:
    roles: Mapping[str, str]
    premises: Mapping[str, IndependenceReport]
    conclusion: IndependenceReport
    joint_parents: IndependenceReport
    threshold: float
    premises_hold: bool
    conclusion_holds: bool
    status: str  # verified | premises unsatisfied | counterexample

    @property
    def max_premise_mi(self) -> float:
        return max(r.mutual_information for r in self.premises.values())

    def to_dict(self) -> dict:
        return {
            "roles": dict(self.roles),
            "threshold": self.threshold,
            "premises": {k: r.to_dict() for k, r in self.premises.items()},
            "conclusion": self.conclusion.to_dict(),
            "joint_parents": self.joint_parents.to_dict(),
            "premises_hold": self.premises_hold,
            "conclusion_holds": self.conclusion_holds,
            "status": self.status,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        """Plain-text MI table for terminals."""
        rows = [(k, r) for k, r in self.premises.items()]
        rows += [("conclusion", self.conclusion), ("joint-parents", self.joint_parents)]
        lines = [f"{'check':<14} {'pair':<22} {'MI (nats)':>12}  verdict"]
        for k, r in rows:
            lines.append(f"{k:<14} {' _|_ '.join(r.pair):<22} {r.mutual_information:>12.3e}  {r.verdict}")
        lines.append(f"status: {self.status}")
        return "\n".join(lines)


def check_roles(graph: CausalGraph, names: Mapping[str, str]) -> dict[str, str]:
    """Validate the role mapping against the reasoning-graph topology."""
    missing = [r for r in ROLE_NAMES if r not in names]
    if missing:
        raise RoleUnmapped(f"roles not mapped: {missing}")
    known = set(graph.names)
    absent = [f"{r}={names[r]}" for r in ROLE_NAMES if names[r] not in known]
    if absent:
        raise RoleUnmapped(f"mapped nodes missing from graph: {absent}")
    roles = {r: names[r] for r in ROLE_NAMES}
    if len(set(roles.values())) != len(roles):
        raise TopologyMismatch("each role needs its own node")
    for r in ("S", "PPC"):
        if not graph.node(roles[r]).is_selection:
            raise TopologyMismatch(f"{r} ({roles[r]}) must be a selection node")
    y_parents = set(graph.parents(roles["Y"]))
    if y_parents != {roles["fact"], roles["salient"]}:
        raise TopologyMismatch(
            f"decision {roles['Y']} must have exactly the parents fact and salient, got {sorted(y_parents)}"
        )
    allowed = {roles[r] for r in PPC_PARENT_ROLES}
    extra = set(graph.parents(roles["PPC"])) - allowed
    if extra:
        raise TopologyMismatch(f"PPC parents outside the five representations: {sorted(extra)}")
    allowed = {roles[r] for r in S_PARENT_ROLES}
    extra = set(graph.parents(roles["S"])) - allowed
    if extra:
        raise TopologyMismatch(f"S parents outside social category/entity/scenario: {sorted(extra)}")
    return roles


def verify_theorem1(
    graph: CausalGraph, names: Mapping[str, str], threshold: float = DEFAULT_THRESHOLD
) -> Theorem1Report:
    """Compute the premise and conclusion MIs given S=1, PPC=1.

    ``conclusion_holds`` is only true when every premise and the
    conclusion fall below ``threshold``. A failing premise yields status
    ``"premises unsatisfied"``; premises holding with a dependent decision
    yields ``"counterexample"`` (see ``joint_parents`` for why).
    """
    roles = check_roles(graph, names)
    post = condition(joint_distribution(graph), [(roles["S"], 1), (roles["PPC"], 1)])
    a = roles["A"]
    premises = {
        key: test_independence(post, a, roles[role], threshold=threshold) for key, role in PREMISES
    }
    conclusion = test_independence(post, a, roles["Y"], threshold=threshold)
    joint = test_independence(post, a, (roles["fact"], roles["salient"]), threshold=threshold)
    premises_hold = all(r.independent for r in premises.values())
    holds = premises_hold and conclusion.independent
    if not premises_hold:
        status = "premises unsatisfied"
    elif conclusion.independent:
        status = "verified"
    else:
        status = "counterexample"
    return Theorem1Report(roles, premises, conclusion, joint, threshold, premises_hold, holds, status)


def construct_ppc(
    graph: CausalGraph, names: Mapping[str, str], target: np.ndarray | None = None
) -> dict[str, float]:
    """PPC table under which A is independent of the other representations.

    Sets ``P(PPC=1 | a, r)`` proportional to ``target(a) / P(a | r, S=1)``,
    where r ranges over the remaining PPC parents, so that the selected
    joint factorizes as ``target(a) * P(r | S=1)``. ``target`` defaults to
    ``P(A | S=1)``. Requires full support of ``P(a, r | S=1)``.
    """
    roles = check_roles(graph, names)
    ppc = roles["PPC"]
    parents = graph.parents(ppc)
    if set(parents) != {roles[r] for r in PPC_PARENT_ROLES}:
        raise TopologyMismatch("construction needs PPC parents = all five representations")
    base = joint_distribution(graph).marginalize([ppc])
    q = condition(base, [(roles["S"], 1)]).marginal(parents).table
    a_ax = parents.index(roles["A"])
    pa_given_r = q / q.sum(axis=a_ax, keepdims=True)
    if np.any(pa_given_r <= 0):
        raise ZeroProbabilityEvidence("construction needs P(a | r, S=1) > 0 everywhere")
    if target is None:
        target = q.sum(axis=tuple(i for i in range(q.ndim) if i != a_ax))
    target = np.asarray(target, dtype=float)
    shape = [1] * q.ndim
    shape[a_ax] = -1
    w = target.reshape(shape) / pa_given_r
    w = w / w.max()
    table = {}
    for combo in graph.parent_assignments(ppc):
        idx = tuple(graph.node(p).domain.index(v) for p, v in zip(parents, combo))
        table[assignment_key(combo)] = float(w[idx])
    return table


@dataclass
class SearchResult:
    table: dict[str, float]
    report: Theorem1Report
    trace: list[float] = field(default_factory=list)
    best_trace: list[float] = field(default_factory=list)


def _objective(graph: CausalGraph, names: Mapping[str, str], table, threshold):
    candidate = graph.with_selection(names["PPC"], table)
    try:
        report = verify_theorem1(candidate, names, threshold)
    except ZeroProbabilityEvidence:
        return float("inf"), None
    return report.max_premise_mi, report


def search_ppc(
    graph: CausalGraph,
    names: Mapping[str, str],
    trials: int = 100,
    seed: int = 0,
    threshold: float = DEFAULT_THRESHOLD,
) -> SearchResult:
    """Seeded random search over PPC tables minimizing the largest premise MI.

    A demonstration utility: each trial draws every ``P(PPC=1 | parents)``
    uniformly from [0, 1]; the best table found so far is kept.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    roles = check_roles(graph, names)
    rng = np.random.default_rng(seed)
    keys = [assignment_key(c) for c in graph.parent_assignments(roles["PPC"])]
    best_value, best_table, best_report = float("inf"), None, None
    trace: list[float] = []
    best_trace: list[float] = []
    for _ in range(trials):
        draws = rng.uniform(0.0, 1.0, size=len(keys))
        table = {k: float(p) for k, p in zip(keys, draws)}
        value, report = _objective(graph, roles, table, threshold)
        trace.append(value)
        if report is not None and value < best_value:
            best_value, best_table, best_report = value, table, report
        best_trace.append(best_value)
    if best_report is None:
        raise ZeroProbabilityEvidence("every sampled PPC table made S=1, PPC=1 impossible")
    return SearchResult(best_table, best_report, trace, best_trace)
