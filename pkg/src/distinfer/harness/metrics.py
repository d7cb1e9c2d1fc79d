"""Error metrics and global structural checks used by the trace validator."""
from __future__ import annotations

import math
from typing import Mapping

import numpy as np

__all__ = ["rms", "forest_components", "is_spanning_tree", "rip_holds", "steiner_cliques",
           "cliques_minimal", "gaussian_kl"]


def rms(estimates: Mapping, truth: Mapping) -> float:
    """Root mean squared error over the nodes that produced an estimate.

    Nodes whose estimate is None (invalid belief) are skipped; the caller
    counts them separately.
    """
    keys = [k for k in sorted(estimates) if estimates[k] is not None]
    if not keys:
        raise ValueError("rms over an empty node set")
    return math.sqrt(sum((estimates[k] - truth[k]) ** 2 for k in keys) / len(keys))


def forest_components(adj: Mapping) -> list:
    seen, out = set(), []
    for s in sorted(adj):
        if s in seen:
            continue
        comp, stack = {s}, [s]
        seen.add(s)
        while stack:
            x = stack.pop()
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    comp.add(y)
                    stack.append(y)
        out.append(comp)
    return out


def is_spanning_tree(adj: Mapping) -> bool:
    n = len(adj)
    n_edges = sum(len(v) for v in adj.values()) // 2
    return n > 0 and n_edges == n - 1 and len(forest_components(adj)) == 1


def rip_holds(adj: Mapping, cliques: Mapping, local: Mapping | None = None) -> bool:
    """Within each tree component every variable's holders are connected.

    With ``local`` given, C_i must also contain V_i.
    """
    if local is not None and any(not set(local[i]) <= set(cliques[i]) for i in adj):
        return False
    variables = set().union(*(set(c) for c in cliques.values())) if cliques else set()
    comps = forest_components(adj)
    for v in sorted(variables, key=str):
        for comp in comps:
            if not _connected_within(adj, {i for i in comp if v in cliques[i]}):
                return False
    return True


def _connected_within(adj: Mapping, holders: set) -> bool:
    if holders:
        start = min(holders)
        seen, stack = {start}, [start]
        while stack:
            x = stack.pop()
            for y in adj[x]:
                if y in holders and y not in seen:
                    seen.add(y)
                    stack.append(y)
        return seen == holders
    return True


def steiner_cliques(adj: Mapping, local: Mapping) -> dict:
    """Minimal cliques on a tree: node i holds x iff i lies on a path between two holders of x.

    Computed by repeatedly pruning leaves that do not carry x, which is
    independent of the reachable-variables recursion the nodes run.
    """
    out = {i: set(local[i]) for i in adj}
    variables = set().union(*(set(v) for v in local.values())) if local else set()
    comps = forest_components(adj)
    for v in variables:
        for comp in comps:
            keep = set(comp)
            deg = {i: sum(1 for j in adj[i] if j in keep) for i in keep}
            carriers = {i for i in comp if v in local[i]}
            if not carriers:
                continue
            changed = True
            while changed:
                changed = False
                for i in sorted(keep):
                    if deg[i] <= 1 and i not in carriers:
                        keep.discard(i)
                        for j in adj[i]:
                            if j in keep:
                                deg[j] -= 1
                        changed = True
            for i in keep:
                out[i].add(v)
    return {i: frozenset(c) for i, c in out.items()}


def cliques_minimal(adj: Mapping, cliques: Mapping, local: Mapping) -> bool:
    """Removing any variable not in V_i from C_i breaks the running intersection property."""
    for i in adj:
        for v in sorted(set(cliques[i]) - set(local[i]), key=str):
            trial = dict(cliques)
            trial[i] = frozenset(cliques[i]) - {v}
            if rip_holds(adj, trial):
                return False
    return True


def gaussian_kl(mean_p, cov_p, mean_q, cov_q) -> float:
    """KL(p || q) between two multivariate normals given in moment form.

    Used as a diagnostic for beliefs read off an invalid junction tree, where
    no exactness guarantee applies.
    """
    mean_p, mean_q = np.atleast_1d(mean_p), np.atleast_1d(mean_q)
    cov_p, cov_q = np.atleast_2d(cov_p), np.atleast_2d(cov_q)
    d = mean_p - mean_q
    sol = np.linalg.solve(cov_q, np.column_stack([cov_p, d]))
    _, logdet_p = np.linalg.slogdet(cov_p)
    _, logdet_q = np.linalg.slogdet(cov_q)
    k = len(mean_p)
    return float(0.5 * (np.trace(sol[:, :k]) + d @ sol[:, k] - k + logdet_q - logdet_p))
