"""Offline reference for the tree optimizer: the cheapest spanning tree we can find centrally.

Small graphs are searched exhaustively.  Larger ones start from a greedy
maximum-quality tree, descend by single edge swaps, then anneal over
single and double swaps from several random restarts, keeping the best
tree ever seen.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import networkx as nx
import numpy as np

from ..overlay import Q_FLOOR, junction_tree, tree_cost

__all__ = ["BaselineResult", "spanning_tree_cost", "offline_tree_optimum", "candidate_graph", "parse_graph"]


@dataclass
class BaselineResult:
    cost: float
    tree: dict
    method: str
    evaluated: int


def _quality(graph: nx.Graph, quality) -> Callable:
    if quality is None:
        def q(i, j):
            d = graph.get_edge_data(i, j)
            return 0.0 if d is None else float(d.get("q", 1.0))
        return q
    if callable(quality):
        return quality
    return lambda i, j: float(quality.get((i, j), 0.0))


def candidate_graph(nodes, quality: Callable | Mapping, q_min: float = 0.0) -> nx.Graph:
    """Undirected graph over ``nodes`` keeping pairs usable in both directions."""
    q = quality if callable(quality) else (lambda i, j: float(quality.get((i, j), 0.0)))
    g = nx.Graph()
    nodes = sorted(nodes)
    g.add_nodes_from(nodes)
    for a, i in enumerate(nodes):
        for j in nodes[a + 1:]:
            qs = min(q(i, j), q(j, i))
            if qs > q_min or (q_min == 0.0 and qs > 0.0):
                g.add_edge(i, j, q=qs)
    return g


def _adj(nodes, edges) -> dict:
    adj = {i: set() for i in nodes}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    return adj


def spanning_tree_cost(adj: Mapping, local: Mapping, quality: Callable, floor: float = Q_FLOOR) -> float:
    _, _, seps = junction_tree(adj, local)
    return tree_cost(seps, quality, floor)


def _exhaustive(g, local, q, floor) -> BaselineResult:
    best, best_adj, n = math.inf, None, 0
    for t in nx.SpanningTreeIterator(g):
        adj = _adj(g.nodes, t.edges)
        c = spanning_tree_cost(adj, local, q, floor)
        n += 1
        if c < best:
            best, best_adj = c, adj
    return BaselineResult(best, best_adj, "exhaustive", n)


def _random_tree(g: nx.Graph, rng) -> set:
    # random spanning tree via Kruskal on random weights
    w = {e: rng.random() for e in g.edges}
    nx.set_edge_attributes(g, w, "_w")
    t = nx.minimum_spanning_tree(g, weight="_w")
    return {tuple(sorted(e)) for e in t.edges}


def _neighbours(g: nx.Graph, edges: set, rng):
    """Yield random legal single swaps (drop, add) for a spanning tree."""
    nodes = list(g.nodes)
    tree = nx.Graph()
    tree.add_nodes_from(nodes)
    tree.add_edges_from(edges)
    outside = [tuple(sorted(e)) for e in g.edges if tuple(sorted(e)) not in edges]
    if not outside:
        return None
    add = outside[rng.integers(len(outside))]
    path = nx.shortest_path(tree, add[0], add[1])
    k = rng.integers(len(path) - 1)
    drop = tuple(sorted((path[k], path[k + 1])))
    return drop, add


def _descend(g, edges, cost_of) -> tuple[set, float, int]:
    """Best-improvement single-swap local search."""
    cur = set(edges)
    cur_cost = cost_of(cur)
    n = 1
    while True:
        tree = nx.Graph()
        tree.add_nodes_from(g.nodes)
        tree.add_edges_from(cur)
        best = None
        for e in g.edges:
            add = tuple(sorted(e))
            if add in cur:
                continue
            path = nx.shortest_path(tree, add[0], add[1])
            for a, b in zip(path, path[1:]):
                cand = (cur - {tuple(sorted((a, b)))}) | {add}
                c = cost_of(cand)
                n += 1
                if c < cur_cost - 1e-9 and (best is None or c < best[1]):
                    best = (cand, c)
        if best is None:
            return cur, cur_cost, n
        cur, cur_cost = best


def _anneal(g, start, cost_of, rng, steps: int, t0: float) -> tuple[set, float, int]:
    cur, cur_cost = set(start), cost_of(start)
    best, best_cost = set(cur), cur_cost
    for s in range(steps):
        temp = t0 * (1.0 - s / steps) + 1e-9
        cand = set(cur)
        for _ in range(1 + int(rng.random() < 0.3)):
            mv = _neighbours(g, cand, rng)
            if mv is None:
                return best, best_cost, s + 1
            cand = (cand - {mv[0]}) | {mv[1]}
        c = cost_of(cand)
        if c <= cur_cost or rng.random() < math.exp(-(c - cur_cost) / temp):
            cur, cur_cost = cand, c
            if c < best_cost:
                best, best_cost = set(cand), c
    return best, best_cost, steps


def offline_tree_optimum(graph: nx.Graph, local: Mapping, quality=None, floor: float = Q_FLOOR,
                         exhaustive_limit: int = 8, seed: int = 0, restarts: int = 4,
                         steps: int = 2000) -> BaselineResult:
    """Lowest tree cost over spanning trees of ``graph``.

    ``quality`` gives directed link qualities (callable or ``{(i, j): q}``);
    by default the ``q`` edge attribute is used in both directions.
    """
    if graph.number_of_nodes() == 0:
        return BaselineResult(0.0, {}, "exhaustive", 0)
    if not nx.is_connected(graph):
        raise ValueError("graph is disconnected; no spanning tree exists")
    q = _quality(graph, quality)
    local = {i: frozenset(local.get(i, ())) for i in graph.nodes}
    if graph.number_of_nodes() <= exhaustive_limit:
        return _exhaustive(graph, local, q, floor)

    nodes = list(graph.nodes)

    def cost_of(edges):
        return spanning_tree_cost(_adj(nodes, edges), local, q, floor)

    rng = np.random.default_rng(seed)
    g = graph.copy()
    nx.set_edge_attributes(g, {(a, b): min(q(a, b), q(b, a)) for a, b in g.edges}, "_q")
    greedy = nx.maximum_spanning_tree(g, weight="_q")
    start = {tuple(sorted(e)) for e in greedy.edges}
    best, best_cost, n = _descend(g, start, cost_of)
    for r in range(restarts):
        init = best if r == 0 else _random_tree(g, rng)
        t0 = 0.05 * best_cost
        cand, c, k = _anneal(g, init, cost_of, rng, steps, t0)
        cand, c, k2 = _descend(g, cand, cost_of)
        n += k + k2
        if c < best_cost:
            best, best_cost = cand, c
    return BaselineResult(best_cost, _adj(nodes, best), "annealing", n)


def parse_graph(text: str) -> tuple[nx.Graph, dict, dict]:
    """Read a candidate-link file.

    ``node ID VAR,VAR,...`` declares a node and its local variables;
    ``edge I J Q [Q_BACK]`` a usable link with directed qualities (``Q_BACK``
    defaults to ``Q``).  Returns (graph, local variables, directed qualities).
    """
    g, local, quality = nx.Graph(), {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].split()
        if not line:
            continue
        try:
            if line[0] == "node":
                nid = int(line[1])
                g.add_node(nid)
                local[nid] = frozenset(v for v in (line[2].split(",") if len(line) > 2 else []) if v)
            elif line[0] == "edge":
                i, j, q = int(line[1]), int(line[2]), float(line[3])
                back = float(line[4]) if len(line) > 4 else q
                g.add_edge(i, j, q=min(q, back))
                quality[(i, j)], quality[(j, i)] = q, back
            else:
                raise ValueError(f"unknown directive {line[0]!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return g, local, quality
