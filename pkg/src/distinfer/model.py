"""Global probability model, external junction tree and factor distribution.

The prior over the environment variables is given as a product of Gaussian
potentials.  Before deployment it is rewritten as a decomposable density:
a junction tree is built over the prior's Markov graph and every clique is
given its exact prior marginal.  Those clique marginals, not the original
potentials, are what the robust inference layer hands out to network nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .gauss import GaussianFactor, NotNormalizableError, product

__all__ = [
    "Measurement",
    "ProbModel",
    "ExternalJunctionTree",
    "NodeAllocation",
    "Allocation",
    "min_fill_order",
    "build_external_jtree",
    "reparameterize",
    "distribute",
    "partition_factors",
    "covering_subtree",
]


@dataclass(frozen=True)
class Measurement:
    """Linear-Gaussian sensor: M = coef . parents + offset + N(0, noise_var)."""

    name: str
    parents: tuple
    coef: tuple
    offset: float = 0.0
    noise_var: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "coef", tuple(float(c) for c in self.coef))
        if len(self.coef) != len(self.parents):
            raise ValueError(f"{self.name}: one coefficient per parent expected")
        if not self.noise_var > 0:
            raise ValueError(f"{self.name}: noise variance must be positive")

    def factor(self) -> GaussianFactor:
        """Conditional density Pr{M | parents} as a factor over (M,) + parents."""
        a = np.array(self.coef)
        row = np.concatenate([[1.0], -a])
        prec = np.outer(row, row) / self.noise_var
        info = row * self.offset / self.noise_var
        g = -0.5 * self.offset ** 2 / self.noise_var - 0.5 * np.log(2 * np.pi * self.noise_var)
        return GaussianFactor((self.name,) + self.parents, prec, info, g)

    def likelihood(self, value: float) -> GaussianFactor:
        """The measurement model instantiated at an observed value."""
        return self.factor().condition({self.name: value})


@dataclass
class ProbModel:
    """Prior potentials over environment variables plus measurement models.

    ``observations``, ``owners`` (measurement -> node) and ``queries``
    (node -> variables) are optional deployment data carried alongside so a
    model file fully describes a run.
    """

    env_vars: tuple
    prior_factors: list
    measurements: list
    observations: dict = field(default_factory=dict)
    owners: dict = field(default_factory=dict)
    queries: dict = field(default_factory=dict)

    def __post_init__(self):
        self.env_vars = tuple(self.env_vars)
        names = [m.name for m in self.measurements]
        if len(set(names)) != len(names):
            raise ValueError("duplicate measurement names")
        known = set(self.env_vars)
        for f in self.prior_factors:
            if not set(f.scope) <= known:
                raise ValueError(f"prior factor over unknown variables {f.scope!r}")
        for m in self.measurements:
            if not set(m.parents) <= known:
                raise ValueError(f"{m.name} has unknown parents {m.parents!r}")
            if m.name in known:
                raise ValueError(f"{m.name} clashes with an environment variable")

    def measurement(self, name: str) -> Measurement:
        for m in self.measurements:
            if m.name == name:
                return m
        raise KeyError(name)

    def prior_joint(self) -> GaussianFactor:
        return product(self.prior_factors, self.env_vars).extend(self.env_vars)

    def check_prior(self) -> None:
        if not self.prior_joint().is_normalizable():
            raise NotNormalizableError("the product of prior factors is not a valid density")

    def nodes(self) -> list:
        return sorted(set(self.owners.values()) | set(self.queries))

    def node_measurements(self, node) -> list:
        return [m.name for m in self.measurements if self.owners.get(m.name) == node]

    def markov_edges(self) -> set:
        """Moral graph edges; measurement parent sets count as cliques too."""
        edges = set()
        scopes = [f.scope for f in self.prior_factors] + [m.parents for m in self.measurements]
        for scope in scopes:
            s = sorted(scope)
            for i, a in enumerate(s):
                for b in s[i + 1:]:
                    edges.add((a, b))
        return edges


# ---------------------------------------------------------------------------
# external junction tree

def min_fill_order(variables: Sequence, edges: Iterable) -> list:
    """Greedy min-fill elimination order; ties broken by variable order."""
    adj = {v: set() for v in variables}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    order = []
    remaining = sorted(adj)
    while remaining:
        best, best_key = None, None
        for v in remaining:
            nb = sorted(adj[v])
            fill = sum(1 for i, a in enumerate(nb) for b in nb[i + 1:] if b not in adj[a])
            key = (fill, len(nb))
            if best_key is None or key < best_key:
                best, best_key = v, key
        nb = adj.pop(best)
        for a in nb:
            adj[a].discard(best)
            adj[a] |= nb - {a}
        remaining.remove(best)
        order.append(best)
    return order


def _mst_edges(sets: Sequence[frozenset]) -> list:
    """Kruskal maximum-weight spanning tree by intersection size.

    Zero-weight edges are allowed so the result is always a single tree.
    Ties go to the lexicographically smaller (i, j) index pair.
    """
    n = len(sets)
    cand = sorted(((-len(sets[i] & sets[j]), i, j) for i in range(n) for j in range(i + 1, n)))
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    out = []
    for _, i, j in cand:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            out.append((i, j))
    return out


@dataclass
class ExternalJunctionTree:
    cliques: list
    edges: list
    marginals: list | None = None

    def neighbors(self, i: int) -> list:
        return sorted([b for a, b in self.edges if a == i] + [a for a, b in self.edges if b == i])

    def separator(self, i: int, j: int) -> frozenset:
        return frozenset(self.cliques[i]) & frozenset(self.cliques[j])

    def separators(self) -> list:
        return [self.separator(i, j) for i, j in self.edges]

    def max_clique_size(self) -> int:
        return max((len(c) for c in self.cliques), default=0)

    def path(self, a: int, b: int) -> list:
        prev = {a: None}
        frontier = [a]
        while frontier:
            nxt = []
            for x in frontier:
                for y in self.neighbors(x):
                    if y not in prev:
                        prev[y] = x
                        nxt.append(y)
            frontier = nxt
        out = [b]
        while out[-1] != a:
            out.append(prev[out[-1]])
        return out[::-1]

    def rip_holds(self) -> bool:
        variables = set().union(*map(set, self.cliques)) if self.cliques else set()
        for v in variables:
            holders = [i for i, c in enumerate(self.cliques) if v in c]
            for i in holders:
                for j in holders:
                    if any(v not in self.cliques[k] for k in self.path(i, j)):
                        return False
        return True

    def reconstruct(self) -> GaussianFactor:
        """The decomposable prior: product of clique over separator marginals."""
        if self.marginals is None:
            raise ValueError("tree has no marginals")
        out = product(self.marginals)
        for i, j in self.edges:
            sep = self.separator(i, j)
            out = out.divide(self.marginals[i].marginalize(sep))
        return out


def build_external_jtree(model: ProbModel, order: Sequence | None = None) -> ExternalJunctionTree:
    """Triangulate the prior's Markov graph and join the cliques into a tree."""
    edges = model.markov_edges()
    if order is None:
        order = min_fill_order(model.env_vars, edges)
    if sorted(order) != sorted(model.env_vars):
        raise ValueError("elimination order must be a permutation of the environment variables")
    adj = {v: set() for v in model.env_vars}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    raw = []
    for v in order:
        nb = adj.pop(v)
        raw.append(frozenset(nb | {v}))
        for a in nb:
            adj[a].discard(v)
            adj[a] |= nb - {a}
    maximal = {c for c in raw if not any(c < d for d in raw)}
    cliques = sorted((tuple(sorted(c)) for c in maximal))
    tree_edges = _mst_edges([frozenset(c) for c in cliques])
    return ExternalJunctionTree(cliques=cliques, edges=tree_edges)


def reparameterize(tree: ExternalJunctionTree, model: ProbModel) -> ExternalJunctionTree:
    """Fill in exact prior clique marginals by two-pass sum-product."""
    model.check_prior()
    n = len(tree.cliques)
    pots = [GaussianFactor.uniform(c) for c in tree.cliques]
    for f in model.prior_factors:
        home = next((i for i, c in enumerate(tree.cliques) if set(f.scope) <= set(c)), None)
        if home is None:
            raise ValueError(f"no clique covers prior factor over {f.scope!r}")
        pots[home] = pots[home].multiply(f)
    pots = [p.extend(c) for p, c in zip(pots, tree.cliques)]
    if n == 0:
        return ExternalJunctionTree(tree.cliques, tree.edges, [])

    # root at clique 0; children lists from a BFS
    order, parent = [0], {0: None}
    for x in order:
        for y in tree.neighbors(x):
            if y not in parent:
                parent[y] = x
                order.append(y)
    up = {}
    for x in reversed(order[1:]):
        belief = pots[x]
        for y in tree.neighbors(x):
            if y != parent[x]:
                belief = belief.multiply(up[y])
        up[x] = belief.marginalize(tree.separator(x, parent[x]))
    down = {}
    for x in order:
        for y in tree.neighbors(x):
            if parent.get(y) != x:
                continue
            belief = pots[x]
            if parent[x] is not None:
                belief = belief.multiply(down[x])
            for z in tree.neighbors(x):
                if z != y and z != parent[x]:
                    belief = belief.multiply(up[z])
            down[y] = belief.marginalize(tree.separator(x, y))
    marginals = []
    for x in range(n):
        belief = pots[x]
        for y in tree.neighbors(x):
            belief = belief.multiply(up[y] if parent.get(y) == x else down[x])
        mean, cov = belief.extend(tree.cliques[x]).moment_stats()
        marginals.append(GaussianFactor.from_moments(tree.cliques[x], mean, cov))
    return ExternalJunctionTree(tree.cliques, tree.edges, marginals)


# ---------------------------------------------------------------------------
# distribution to network nodes

@dataclass
class NodeAllocation:
    node: object
    cliques: tuple
    measurements: tuple
    queries: tuple
    pairing: dict

    def local_vars(self, tree: ExternalJunctionTree) -> frozenset:
        out = set(self.queries)
        for c in self.cliques:
            out |= set(tree.cliques[c])
        return frozenset(out)


@dataclass
class Allocation:
    tree: ExternalJunctionTree
    nodes: dict
    redundancy: int

    def holders(self, clique: int) -> list:
        return sorted(n for n, a in self.nodes.items() if clique in a.cliques)

    def local_vars(self, node) -> frozenset:
        return self.nodes[node].local_vars(self.tree)


def covering_subtree(tree: ExternalJunctionTree, variables: Iterable) -> list:
    """Small connected set of cliques whose union covers ``variables``.

    Anchors are chosen greedily (most uncovered variables first) and joined
    by their tree paths; unneeded leaves are then trimmed.
    """
    need = set(variables)
    if not need:
        return []
    for i, c in sorted(enumerate(tree.cliques), key=lambda t: (len(t[1]), t[0])):
        if need <= set(c):
            return [i]
    anchors, left = [], set(need)
    while left:
        i = max(range(len(tree.cliques)), key=lambda k: (len(left & set(tree.cliques[k])), -k))
        if not left & set(tree.cliques[i]):
            raise ValueError(f"variables {sorted(left)!r} are not in the external tree")
        anchors.append(i)
        left -= set(tree.cliques[i])
    chosen = set()
    for a in anchors:
        chosen |= set(tree.path(anchors[0], a))
    trimmed = True
    while trimmed:
        trimmed = False
        for x in sorted(chosen):
            inside = [y for y in tree.neighbors(x) if y in chosen]
            rest = set().union(*(set(tree.cliques[y]) for y in chosen if y != x))
            if len(inside) <= 1 and need <= rest and len(chosen) > 1:
                chosen.discard(x)
                trimmed = True
                break
    return sorted(chosen)


def distribute(tree: ExternalJunctionTree, model: ProbModel, owner: Mapping | None = None,
               redundancy: int = 1, queries: Mapping | None = None,
               nodes: Sequence | None = None) -> Allocation:
    """Hand clique marginals and measurement models out to network nodes.

    Each node first receives the cliques covering its query variables and the
    parents of its measurements.  Every clique is then topped up to
    ``min(redundancy, #nodes)`` holders, preferring nodes that already carry
    one of its variables and otherwise going round-robin by node id.
    """
    owner = dict(model.owners if owner is None else owner)
    queries = dict(model.queries if queries is None else queries)
    missing = [m.name for m in model.measurements if m.name not in owner]
    if missing:
        raise ValueError(f"measurements without an owner: {missing!r}")
    node_ids = sorted(set(nodes or ()) | set(owner.values()) | set(queries))
    held = {n: set() for n in node_ids}
    pairing = {n: {} for n in node_ids}
    for n in node_ids:
        meas = [m for m in model.measurements if owner[m.name] == n]
        need = set(queries.get(n, ()))
        for m in meas:
            need |= set(m.parents)
        held[n] |= set(covering_subtree(tree, need))
        for m in meas:
            home = next((i for i in sorted(held[n], key=lambda k: (len(tree.cliques[k]), k))
                         if set(m.parents) <= set(tree.cliques[i])), None)
            if home is None:
                home = next(i for i, c in enumerate(tree.cliques) if set(m.parents) <= set(c))
                held[n].add(home)
            pairing[n][m.name] = home

    target = min(max(1, redundancy), len(node_ids))
    cursor = 0
    for ci, clique in enumerate(tree.cliques):
        have = [n for n in node_ids if ci in held[n]]
        while len(have) < target:
            cand = [n for n in node_ids if n not in have]
            near = [n for n in cand if _node_vars(tree, held[n], queries.get(n, ())) & set(clique)]
            pool = near or cand
            pick = pool[cursor % len(pool)]
            cursor += 1
            held[pick].add(ci)
            have.append(pick)

    out = {}
    for n in node_ids:
        out[n] = NodeAllocation(
            node=n,
            cliques=tuple(sorted(held[n])),
            measurements=tuple(m.name for m in model.measurements if owner[m.name] == n),
            queries=tuple(queries.get(n, ())),
            pairing=dict(pairing[n]),
        )
    return Allocation(tree=tree, nodes=out, redundancy=redundancy)


def _node_vars(tree, cliques, queries) -> set:
    out = set(queries)
    for c in cliques:
        out |= set(tree.cliques[c])
    return out


def partition_factors(model: ProbModel, owner: Mapping | None = None,
                      queries: Mapping | None = None, nodes: Sequence | None = None) -> dict:
    """Assign each original prior potential to exactly one node (sum-product baseline).

    A potential goes to the least-loaded node whose measurement parents or
    query variables touch its scope; potentials touching no node go round-robin.
    """
    owner = dict(model.owners if owner is None else owner)
    queries = dict(model.queries if queries is None else queries)
    node_ids = sorted(set(nodes or ()) | set(owner.values()) | set(queries))
    touch = {n: set(queries.get(n, ())) for n in node_ids}
    for m in model.measurements:
        touch[owner[m.name]] |= set(m.parents)
    load = {n: 0 for n in node_ids}
    out = {n: [] for n in node_ids}
    cursor = 0
    for k, f in enumerate(model.prior_factors):
        near = [n for n in node_ids if touch[n] & set(f.scope)]
        if near:
            # prefer nodes touching more of the scope, then the lighter load
            pick = min(near, key=lambda n: (-len(touch[n] & set(f.scope)), load[n], n))
        else:
            pick = node_ids[cursor % len(node_ids)]
            cursor += 1
        out[pick].append(k)
        load[pick] += 1
    return out
