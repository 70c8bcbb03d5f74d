"""Brute-force reference implementations used only by the tests.

They read the validated tables through the public graph API and never
touch the numpy factor arrays, so they check the vectorized code along an
independent route.
"""
from __future__ import annotations

import itertools
import math
import re
import string
from collections import defaultdict

from fairprompt.causal import CausalGraph, assignment_key


def naive_joint(graph: CausalGraph) -> dict[tuple, float]:
    names = graph.names
    out = {}
    for values in itertools.product(*(graph.node(n).domain for n in names)):
        a = dict(zip(names, values))
        p = 1.0
        for n in names:
            key = assignment_key(a[pa] for pa in graph.parents(n))
            if graph.node(n).is_selection:
                s = graph.selections[n][key]
                p *= s if a[n] == 1 else 1.0 - s
            else:
                p *= graph.cpts[n][key][graph.node(n).domain.index(a[n])]
        out[values] = p
    return out


def naive_mi(graph: CausalGraph, xs, ys, evidence=(), zs=()) -> float:
    names = graph.names
    pos = {n: i for i, n in enumerate(names)}
    joint = naive_joint(graph)
    keep = {k: v for k, v in joint.items() if all(k[pos[n]] == val for n, val in evidence)}
    total = sum(keep.values())
    pxyz, pxz, pyz, pz = defaultdict(float), defaultdict(float), defaultdict(float), defaultdict(float)
    for k, v in keep.items():
        x = tuple(k[pos[n]] for n in xs)
        y = tuple(k[pos[n]] for n in ys)
        z = tuple(k[pos[n]] for n in zs)
        p = v / total
        pxyz[x, y, z] += p
        pxz[x, z] += p
        pyz[y, z] += p
        pz[z] += p
    mi = 0.0
    for (x, y, z), p in pxyz.items():
        if p > 0:
            mi += p * math.log(p * pz[z] / (pxz[x, z] * pyz[y, z]))
    return mi


def berkson_hand(p_x1=0.3, p_x2=0.2, y1=(0.1, 0.8), y2=(0.15, 0.9)) -> tuple[float, float]:
    """I(X1;X2) and I(X1;X2 | S4=1) for the two-disease admission example.

    S4 = Y1 or Y2, so P(S4=1 | x1, x2) = 1 - (1 - P(y1|x1)) (1 - P(y2|x2)).
    """
    px1 = (1 - p_x1, p_x1)
    px2 = (1 - p_x2, p_x2)
    w = {}
    for a in (0, 1):
        for b in (0, 1):
            w[a, b] = px1[a] * px2[b] * (1 - (1 - y1[a]) * (1 - y2[b]))
    z = sum(w.values())
    p = {k: v / z for k, v in w.items()}
    m1 = {a: p[a, 0] + p[a, 1] for a in (0, 1)}
    m2 = {b: p[0, b] + p[1, b] for b in (0, 1)}
    cond = sum(p[a, b] * math.log(p[a, b] / (m1[a] * m2[b])) for a in (0, 1) for b in (0, 1))
    # marginally the two diseases are independent by construction
    marg = sum(px1[a] * px2[b] * math.log(1.0) for a in (0, 1) for b in (0, 1))
    return marg, cond


_ARTICLES = {"a", "an", "the"}


def naive_normalize(text: str) -> str:
    kept = "".join(" " if ch in string.punctuation + "‘’“”" else ch for ch in text.lower())
    return " ".join(w for w in kept.split() if w not in _ARTICLES)


def naive_match(text: str, options) -> int | None:
    """Exact normalized match, else the single option found as whole words."""
    t = naive_normalize(text)
    norm = [naive_normalize(o) for o in options]
    for i, o in enumerate(norm):
        if o and t == o:
            return i
    def inside(small, big):
        return re.search(r"(?<!\S)" + re.escape(small) + r"(?!\S)", big) is not None

    hits = [i for i, o in enumerate(norm) if o and inside(o, t)]
    # an option that is part of a longer hit does not count on its own
    hits = [i for i in hits if not any(norm[i] != norm[j] and inside(norm[i], norm[j]) for j in hits)]
    # duplicate options normalize to one answer; the first index stands for it
    return hits[0] if len({norm[i] for i in hits}) == 1 else None


def random_small_graph(rng, n_nodes: int, max_parents: int = 3, p_selection: float = 0.3):
    """Random DAG over binary nodes; some sinks become selection nodes.

    Returns (graph, observed names, selection names).
    """
    from fairprompt.causal import build_graph

    names = [f"V{i}" for i in range(n_nodes)]
    edges = []
    for j in range(1, n_nodes):
        k = int(rng.integers(0, min(j, max_parents) + 1))
        for i in sorted(rng.choice(j, size=k, replace=False)):
            edges.append((names[i], names[j]))
    has_child = {p for p, _ in edges}
    sinks = [n for n in names if n not in has_child]
    # keep at least two ordinary nodes to measure
    selection = [n for n in sinks[2:] if rng.random() < p_selection]
    nodes = [{"name": n, "domain": [0, 1], "role": "selection" if n in selection else "observed"} for n in names]
    cpts, sels = {}, {}
    for n in names:
        parents = [p for p, c in edges if c == n]
        keys = [assignment_key(c) for c in itertools.product((0, 1), repeat=len(parents))]
        if n in selection:
            sels[n] = {k: float(rng.uniform(0.05, 1.0)) for k in keys}
        else:
            rows = {}
            for k in keys:
                p = float(rng.uniform(0.02, 0.98))
                rows[k] = [1 - p, p]
            cpts[n] = rows
    graph = build_graph(nodes, edges, cpts, sels)
    observed = [n for n in names if n not in selection]
    return graph, observed, selection
