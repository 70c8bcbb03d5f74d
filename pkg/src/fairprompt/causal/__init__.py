"""Exact discrete causal models with selection variables."""
from .distribution import DiscreteDistribution, condition, joint_distribution
from .graph import DEFAULT_MAX_STATES, EDGE_LABELS, CausalGraph, Edge, NodeSpec, assignment_key, build_graph
from .independence import IndependenceReport, entropy, mutual_information, test_independence
from .io import graph_from_dict, graph_to_dict, load_graph, save_graph
from .theorem import (
    ROLE_NAMES,
    SearchResult,
    Theorem1Report,
    check_roles,
    construct_ppc,
    search_ppc,
    verify_theorem1,
)

__all__ = [
    "CausalGraph",
    "DEFAULT_MAX_STATES",
    "DiscreteDistribution",
    "EDGE_LABELS",
    "Edge",
    "IndependenceReport",
    "NodeSpec",
    "ROLE_NAMES",
    "SearchResult",
    "Theorem1Report",
    "assignment_key",
    "build_graph",
    "check_roles",
    "condition",
    "construct_ppc",
    "entropy",
    "graph_from_dict",
    "graph_to_dict",
    "joint_distribution",
    "load_graph",
    "mutual_information",
    "save_graph",
    "search_ppc",
    "test_independence",
    "verify_theorem1",
]
