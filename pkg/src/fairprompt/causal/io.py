"""JSON documents for graphs: nodes, edges, cpts, selections and optional roles."""
from __future__ import annotations

import json
from pathlib import Path

from ..errors import ParseError
from .graph import DEFAULT_MAX_STATES, CausalGraph, build_graph


def graph_from_dict(doc: dict, max_states: int = DEFAULT_MAX_STATES) -> CausalGraph:
    try:
        nodes, edges = doc["nodes"], doc.get("edges", [])
        cpts = doc.get("cpts", {})
    except (KeyError, TypeError) as exc:
        raise ParseError(f"graph document is missing {exc}") from exc
    return build_graph(nodes, edges, cpts, doc.get("selections", {}), max_states=max_states)


def graph_to_dict(graph: CausalGraph, roles: dict | None = None) -> dict:
    doc = graph.describe()
    if roles:
        doc["roles"] = dict(roles)
    return doc


def load_graph(path: str | Path, max_states: int = DEFAULT_MAX_STATES) -> tuple[CausalGraph, dict | None]:
    """Read a graph document; returns the graph and its ``roles`` entry, if any."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, path=path) from exc
    return graph_from_dict(doc, max_states), doc.get("roles")


def save_graph(graph: CausalGraph, path: str | Path, roles: dict | None = None) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(graph, roles), indent=2) + "\n", encoding="utf-8")
