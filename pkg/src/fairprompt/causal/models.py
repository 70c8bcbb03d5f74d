"""Ready-made graphs: the disease/symptom selection example and reasoning graphs.

Every numeric table here is a constructed fixture, not an estimate of any
real process.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from .graph import CausalGraph, NodeSpec, assignment_key, build_graph
from .theorem import construct_ppc

BINARY = (0, 1)

REASONING_ROLES = {
    "A": "A",
    "Y": "Y",
    "S": "S",
    "PPC": "PPC",
    "entity": "entity",
    "scenario": "scenario",
    "fact": "fact",
    "salient": "salient",
}

# (parent, child, label) for the prompt-modulated reasoning graph. Red
# numerals are unregulated paths toward the decision, red roman numerals
# the historical selection, blue roman numerals the prompt selection.
REASONING_EDGES = (
    ("A", "salient", "red-1"),
    ("entity", "fact", "red-2"),
    ("scenario", "fact", "red-3"),
    ("fact", "salient", "red-4"),
    ("fact", "Y", "red-5"),
    ("salient", "Y", "red-6"),
    ("A", "S", "red-vi"),
    ("entity", "S", "red-vii"),
    ("scenario", "S", "red-viii"),
    ("A", "PPC", "blue-i"),
    ("entity", "PPC", "blue-ii"),
    ("scenario", "PPC", "blue-iii"),
    ("salient", "PPC", "blue-iv"),
    ("fact", "PPC", "blue-v"),
)

REASONING_NODES = (
    NodeSpec("A", BINARY, "internal"),
    NodeSpec("entity", BINARY, "internal"),
    NodeSpec("scenario", BINARY, "internal"),
    NodeSpec("fact", BINARY, "internal"),
    NodeSpec("salient", BINARY, "internal"),
    NodeSpec("Y", BINARY, "observed"),
    NodeSpec("S", BINARY, "selection"),
    NodeSpec("PPC", BINARY, "selection"),
)


def _keys(n_parents: int):
    return [tuple(int(b) for b in np.binary_repr(i, n_parents)) if n_parents else () for i in range(2**n_parents)]


def _const_ppc(value: float = 1.0) -> dict[str, float]:
    return {assignment_key(k): value for k in _keys(5)}


def berkson_graph(
    p_x1: float = 0.3,
    p_x2: float = 0.2,
    y1_given_x1: tuple[float, float] = (0.1, 0.8),
    y2_given_x2: tuple[float, float] = (0.15, 0.9),
) -> CausalGraph:
    """Two unrelated diseases X1, X2 with symptoms Y1, Y2 and five selections.

    S1 selects on X1 (cause), S2 on Y1 (effect), S3 on (X2, Y2), S4 is
    hospital admission ``Y1 or Y2`` and S5 selects on the unrelated pair
    (X1, X2). ``y*_given_x*`` give ``P(Y=1 | X=0), P(Y=1 | X=1)``.

    S3 is tuned so that X2 and Y2 look independent once S3=1 even though
    X2 causes Y2.
    """
    p_y2 = [[1 - y2_given_x2[0], y2_given_x2[0]], [1 - y2_given_x2[1], y2_given_x2[1]]]
    # weight proportional to 1 / P(y2 | x2) flattens the X2 -> Y2 dependence
    w = {(x, y): 1.0 / p_y2[x][y] for x in BINARY for y in BINARY}
    top = max(w.values())
    s3 = {assignment_key(k): v / top for k, v in w.items()}
    nodes = [
        NodeSpec("X1", BINARY, "observed"),
        NodeSpec("X2", BINARY, "observed"),
        NodeSpec("Y1", BINARY, "observed"),
        NodeSpec("Y2", BINARY, "observed"),
    ] + [NodeSpec(f"S{i}", BINARY, "selection") for i in range(1, 6)]
    edges = [
        ("X1", "Y1"),
        ("X2", "Y2"),
        ("X1", "S1"),
        ("Y1", "S2"),
        ("X2", "S3"),
        ("Y2", "S3"),
        ("Y1", "S4"),
        ("Y2", "S4"),
        ("X1", "S5"),
        ("X2", "S5"),
    ]
    cpts = {
        "X1": {"": [1 - p_x1, p_x1]},
        "X2": {"": [1 - p_x2, p_x2]},
        "Y1": {"0": [1 - y1_given_x1[0], y1_given_x1[0]], "1": [1 - y1_given_x1[1], y1_given_x1[1]]},
        "Y2": {"0": p_y2[0], "1": p_y2[1]},
    }
    selections = {
        "S1": {"0": 0.3, "1": 0.9},
        "S2": {"0": 0.2, "1": 0.7},
        "S3": s3,
        "S4": {"0|0": 0.0, "0|1": 1.0, "1|0": 1.0, "1|1": 1.0},
        "S5": {"0|0": 0.1, "0|1": 0.5, "1|0": 0.5, "1|1": 0.9},
    }
    return build_graph(nodes, edges, cpts, selections)


def reasoning_graph(cpts: dict, s_table: dict, ppc_table: dict | None = None) -> CausalGraph:
    """Reasoning graph with the given CPTs; PPC defaults to always selecting."""
    return build_graph(
        REASONING_NODES,
        REASONING_EDGES,
        cpts,
        {"S": s_table, "PPC": ppc_table if ppc_table is not None else _const_ppc()},
    )


# Hand-picked tables for the fixture reasoning graph.
_FIXTURE_CPTS = {
    "A": {"": [0.5, 0.5]},
    "entity": {"": [0.6, 0.4]},
    "scenario": {"": [0.7, 0.3]},
    "fact": {"0|0": [0.9, 0.1], "0|1": [0.6, 0.4], "1|0": [0.3, 0.7], "1|1": [0.2, 0.8]},
    "salient": {"0|0": [0.8, 0.2], "0|1": [0.5, 0.5], "1|0": [0.2, 0.8], "1|1": [0.4, 0.6]},
    "Y": {"0|0": [0.9, 0.1], "0|1": [0.4, 0.6], "1|0": [0.3, 0.7], "1|1": [0.1, 0.9]},
}


def _fixture_s(a: int, e: int, sc: int) -> Fraction:
    # stereotype: A tends to co-occur with matching entity and scenario values
    return (Fraction(4, 5) if a == e else Fraction(1, 5)) * (Fraction(9, 10) if sc == a else Fraction(3, 5))


def _salient(a: int, f: int, s: int) -> Fraction:
    row = _FIXTURE_CPTS["salient"][f"{a}|{f}"]
    return Fraction(row[s]).limit_denominator(100)


def theorem_fixture_graph(select_with_ppc: bool = True) -> CausalGraph:
    """Binary reasoning graph whose PPC table satisfies all three objectives.

    PPC weights each (a, entity, scenario, fact, salient) cell by
    ``c / (P(S=1 | a, entity, scenario) * P(salient | a, fact))``. After
    selecting on S=1 and PPC=1 the joint is proportional to
    ``P(a) P(entity) P(scenario) P(fact | entity, scenario) P(Y | fact, salient)``,
    so A is independent of every other node.

    With ``select_with_ppc=False`` PPC always fires and the biased S is
    left unopposed.
    """
    s_table = {assignment_key(k): float(_fixture_s(*k)) for k in _keys(3)}
    if not select_with_ppc:
        return reasoning_graph(_FIXTURE_CPTS, s_table)
    # PPC parent order follows edge declaration: A, entity, scenario, salient, fact
    raw = {}
    for a, e, sc, sal, f in _keys(5):
        raw[(a, e, sc, sal, f)] = 1 / (_fixture_s(a, e, sc) * _salient(a, f, sal))
    top = max(raw.values())
    ppc = {assignment_key(k): float(v / top) for k, v in raw.items()}
    return reasoning_graph(_FIXTURE_CPTS, s_table, ppc)


def disconnected_graph() -> CausalGraph:
    """Reasoning graph in which A has no edges at all."""
    nodes = REASONING_NODES
    edges = [e for e in REASONING_EDGES if "A" not in (e[0], e[1])]
    cpts = dict(_FIXTURE_CPTS)
    cpts["salient"] = {"0": [0.7, 0.3], "1": [0.35, 0.65]}
    s_table = {assignment_key(k): 0.2 + 0.6 * k[0] * k[1] for k in _keys(2)}
    ppc = {assignment_key(k): 0.25 + 0.5 * (sum(k) % 2) for k in _keys(4)}
    return build_graph(nodes, edges, cpts, {"S": s_table, "PPC": ppc})


def xor_counterexample_graph() -> CausalGraph:
    """Pairwise premises hold, yet the decision still depends on A.

    PPC keeps only cells with ``A = fact XOR salient`` (reweighted so that
    fact and salient stay uniform and independent), and Y = fact AND
    salient. A is then pairwise independent of fact, salient, entity and
    scenario but not of the pair (fact, salient), nor of Y.
    """
    cpts = {
        "A": {"": [0.5, 0.5]},
        "entity": {"": [0.5, 0.5]},
        "scenario": {"": [0.5, 0.5]},
        "fact": {k: [0.5, 0.5] for k in ("0|0", "0|1", "1|0", "1|1")},
        "salient": {k: [0.5, 0.5] for k in ("0|0", "0|1", "1|0", "1|1")},
        "Y": {"0|0": [1.0, 0.0], "0|1": [1.0, 0.0], "1|0": [1.0, 0.0], "1|1": [0.0, 1.0]},
    }
    s_table = {assignment_key(k): 1.0 for k in _keys(3)}
    ppc = {assignment_key(k): 1.0 if k[0] == (k[3] ^ k[4]) else 0.0 for k in _keys(5)}
    return reasoning_graph(cpts, s_table, ppc)


def random_reasoning_graph(rng: np.random.Generator, low: float = 0.05, constructed_ppc: bool = True) -> CausalGraph:
    """Reasoning graph with random binary CPTs and a random biased S.

    With ``constructed_ppc`` the PPC table comes from :func:`construct_ppc`,
    otherwise PPC always fires.
    """
    def row():
        p = float(rng.uniform(low, 1 - low))
        return [1 - p, p]

    cpts = {
        "A": {"": row()},
        "entity": {"": row()},
        "scenario": {"": row()},
        "fact": {assignment_key(k): row() for k in _keys(2)},
        "salient": {assignment_key(k): row() for k in _keys(2)},
        "Y": {assignment_key(k): row() for k in _keys(2)},
    }
    s_table = {assignment_key(k): float(rng.uniform(low, 1.0)) for k in _keys(3)}
    graph = reasoning_graph(cpts, s_table)
    if constructed_ppc:
        graph = graph.with_selection("PPC", construct_ppc(graph, REASONING_ROLES))
    return graph
