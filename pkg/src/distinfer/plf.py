"""Prior/likelihood factors and model fragments.

A PL factor pairs a prior over a variable set with a likelihood of some
observations given that set.  A model fragment is a collection of PL
factors; it represents a posterior implicitly, through the clique tree its
factors form.  Combination and summary of fragments are the two operations
robust message passing is built from.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .gauss import GaussianFactor, ScopeError

__all__ = [
    "PLFactor",
    "ModelFragment",
    "CanonicalCliqueTree",
    "EvidenceOverlapError",
    "instantiate",
    "prior_only",
    "pl_combine",
    "pl_summary",
    "fragment_combine",
    "canonical_tree",
    "flatten",
    "fragment_summary",
    "PL_HEADER_BYTES",
]

PL_HEADER_BYTES = 16
DEDUP_TOL = 1e-12


class EvidenceOverlapError(ValueError):
    """Two factors being combined both carry the same measurement."""


def _gaussian_params(d: int) -> int:
    return d + d * (d + 1) // 2


def _close(a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    """Elementwise |a - b| <= tol * (1 + |b|), the np.allclose rule without its overhead."""
    return bool(np.all(np.abs(a - b) <= tol * (1.0 + np.abs(b))))


@dataclass(frozen=True, eq=False)
class PLFactor:
    scope: tuple
    prior: GaussianFactor
    likelihood: GaussianFactor
    evidence: frozenset = frozenset()
    key: tuple = field(init=False, repr=False)
    vars: frozenset = field(init=False, repr=False)

    def __post_init__(self):
        scope = tuple(sorted(self.scope))
        object.__setattr__(self, "scope", scope)
        object.__setattr__(self, "prior", self.prior.extend(scope))
        if not set(self.likelihood.scope) <= set(scope):
            raise ScopeError("likelihood scope must lie inside the PL factor scope")
        object.__setattr__(self, "likelihood", self.likelihood.extend(scope, self.prior.var_dims()))
        object.__setattr__(self, "evidence", frozenset(self.evidence))
        # both are read constantly while fragments are sorted and matched
        object.__setattr__(self, "key", (scope, tuple(sorted(self.evidence, key=str))))
        object.__setattr__(self, "vars", frozenset(scope))

    def posterior(self) -> GaussianFactor:
        return self.prior.multiply(self.likelihood)

    def size_bytes(self) -> int:
        return 2 * 8 * _gaussian_params(self.prior.size) + PL_HEADER_BYTES

    def close_to(self, other: "PLFactor", tol: float = DEDUP_TOL) -> bool:
        if self is other:
            return True
        if self.key != other.key:
            return False
        return (_close(self.prior.precision, other.prior.precision, tol)
                and _close(self.prior.info, other.prior.info, tol)
                and _close(self.likelihood.precision, other.likelihood.precision, tol)
                and _close(self.likelihood.info, other.likelihood.info, tol))

    def __repr__(self) -> str:
        ev = ",".join(sorted(map(str, self.evidence)))
        return f"PL({','.join(map(str, self.scope))} | {ev})"


def instantiate(measurement, value: float, prior: GaussianFactor) -> PLFactor:
    """Pair the likelihood of one observed measurement with a prior over its parents.

    ``prior`` may cover more than the parents (a clique containing them);
    the likelihood is then flat in the extra directions.
    """
    if not set(measurement.parents) <= set(prior.scope):
        raise ScopeError(f"prior over {prior.scope!r} does not cover parents of {measurement.name}")
    return PLFactor(prior.scope, prior, measurement.likelihood(value), frozenset([measurement.name]))


def prior_only(prior: GaussianFactor) -> PLFactor:
    """A leftover prior factor paired with a uniform likelihood."""
    return PLFactor(prior.scope, prior, GaussianFactor.uniform(prior.scope, prior.dims))


def pl_combine(a: PLFactor, b: PLFactor) -> PLFactor:
    """Join two PL factors: priors glued over their overlap, likelihoods multiplied.

    The overlap marginal divided out is taken from the factor with the smaller
    scope (``a`` on a tie); for consistent inputs both choices agree.
    """
    if a.evidence & b.evidence:
        raise EvidenceOverlapError(f"measurements {sorted(a.evidence & b.evidence)!r} would be counted twice")
    shared = set(a.scope) & set(b.scope)
    small = b if len(b.scope) < len(a.scope) else a
    prior = a.prior.multiply(b.prior).divide(small.prior.marginalize(shared))
    like = a.likelihood.multiply(b.likelihood)
    return PLFactor(tuple(set(a.scope) | set(b.scope)), prior, like, a.evidence | b.evidence)


def pl_summary(a: PLFactor, keep: Iterable) -> PLFactor:
    """Marginal prior over ``keep`` and the marginal likelihood relative to it."""
    keep = set(keep)
    if not keep <= set(a.scope):
        raise ScopeError(f"summary variables {sorted(keep - set(a.scope))!r} not in scope")
    if keep == set(a.scope):
        return a
    prior = a.prior.marginalize(keep)
    joint = a.posterior().marginalize(keep)
    return PLFactor(tuple(keep), prior, joint.divide(prior), a.evidence)


# ---------------------------------------------------------------------------
# model fragments

class ModelFragment:
    """An ordered, de-duplicated collection of PL factors."""

    __slots__ = ("factors",)

    def __init__(self, factors: Iterable[PLFactor] = ()):
        kept: list[PLFactor] = []
        by_key: dict = {}
        for f in sorted(factors, key=lambda p: p.key):
            same = by_key.setdefault(f.key, [])
            if any(g.close_to(f) for g in same):
                continue
            same.append(f)
            kept.append(f)
        self.factors = tuple(kept)

    def __len__(self) -> int:
        return len(self.factors)

    def __iter__(self):
        return iter(self.factors)

    def __repr__(self) -> str:
        return f"ModelFragment({list(self.factors)!r})"

    @property
    def evidence(self) -> frozenset:
        return frozenset().union(*(f.evidence for f in self.factors)) if self.factors else frozenset()

    @property
    def vars(self) -> frozenset:
        return frozenset().union(*(f.vars for f in self.factors)) if self.factors else frozenset()

    def max_scope(self) -> int:
        return max((len(f.scope) for f in self.factors), default=0)

    def size_bytes(self) -> int:
        return sum(f.size_bytes() for f in self.factors)

    def close_to(self, other: "ModelFragment", tol: float = DEDUP_TOL) -> bool:
        if other is None or len(self) != len(other):
            return False
        return all(a.close_to(b, tol) for a, b in zip(self.factors, other.factors))


def _absorb_non_maximal(factors: list[PLFactor]) -> list[PLFactor]:
    """Fold every factor whose scope lies inside another's into the largest such host.

    A merge keeps the host's scope, so one pass from the smallest scope up
    reaches the same fixed point as repeated rescans.
    """
    out = list(factors)
    scopes = [f.vars for f in out]
    alive = [True] * len(out)
    for i in sorted(range(len(out)), key=lambda k: (len(out[k].scope), out[k].key)):
        hosts = [j for j in range(len(out)) if alive[j] and j != i and scopes[i] <= scopes[j]]
        if not hosts:
            continue
        host = min(hosts, key=lambda j: (-len(out[j].scope), out[j].key))
        out[host] = pl_combine(out[host], out[i])
        alive[i] = False
    return [f for f, a in zip(out, alive) if a]


def fragment_combine(*fragments: ModelFragment, absorb: bool = True) -> ModelFragment:
    """Union of fragments; optionally fold each non-maximal factor into a superset factor."""
    merged = ModelFragment(f for frag in fragments for f in frag)
    if not absorb:
        return merged
    return ModelFragment(_absorb_non_maximal(list(merged.factors)))


@dataclass
class CanonicalCliqueTree:
    factors: tuple
    edges: list

    def adjacency(self) -> dict:
        adj = {i: set() for i in range(len(self.factors))}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def weight(self) -> int:
        return sum(len(self.factors[a].vars & self.factors[b].vars) for a, b in self.edges)

    def rip_holds(self) -> bool:
        adj = self.adjacency()
        variables = set().union(*(f.vars for f in self.factors)) if self.factors else set()
        for v in variables:
            holders = {i for i, f in enumerate(self.factors) if v in f.vars}
            start = min(holders)
            seen, stack = {start}, [start]
            while stack:
                x = stack.pop()
                for y in adj[x]:
                    if y in holders and y not in seen:
                        seen.add(y)
                        stack.append(y)
            if seen != holders:
                return False
        return True


def canonical_tree(fragment: ModelFragment) -> CanonicalCliqueTree:
    """Maximum-weight spanning forest over the factors, weight = |shared variables|."""
    fs = fragment.factors
    cand = []
    for i in range(len(fs)):
        for j in range(i + 1, len(fs)):
            w = len(fs[i].vars & fs[j].vars)
            if w:
                cand.append((-w, i, j))
    cand.sort()
    parent = list(range(len(fs)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = []
    for _, i, j in cand:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            edges.append((i, j))
    return CanonicalCliqueTree(fs, edges)


def flatten(fragment: ModelFragment) -> PLFactor:
    """Collapse a fragment to one PL factor by folding leaves of its canonical tree inward."""
    if not len(fragment):
        raise ValueError("cannot flatten an empty fragment")
    tree = canonical_tree(fragment)
    nodes = dict(enumerate(tree.factors))
    adj = tree.adjacency()
    while True:
        leaves = [i for i in sorted(nodes) if len(adj[i]) == 1]
        if not leaves:
            break
        c = leaves[0]
        (d,) = adj[c]
        nodes[d] = pl_combine(nodes[d], nodes[c])
        adj[d].discard(c)
        del adj[c], nodes[c]
    parts = [nodes[i] for i in sorted(nodes)]
    out = parts[0]
    for p in parts[1:]:
        out = pl_combine(out, p)
    return out


def fragment_summary(fragment: ModelFragment, keep: Iterable,
                     pick: Callable[[Sequence[PLFactor]], int] | None = None) -> ModelFragment:
    """Prune canonical-tree leaves whose prior is redundant for ``keep``.

    A leaf C with neighbour D qualifies when C ∩ keep ⊆ D.  Its likelihood is
    moved onto D through the summary of C to C ∩ D, then C is dropped.
    ``pick`` chooses among qualifying leaves (given as factors, returning an
    index); the default takes the first in canonical order.
    """
    keep = frozenset(keep)
    tree = canonical_tree(fragment)
    nodes = dict(enumerate(tree.factors))
    adj = tree.adjacency()
    while True:
        ready = []
        for c in sorted(nodes):
            if len(adj[c]) != 1:
                continue
            (d,) = adj[c]
            if (nodes[c].vars & keep) <= nodes[d].vars:
                ready.append(c)
        if not ready:
            break
        c = ready[pick([nodes[i] for i in ready]) if pick else 0]
        (d,) = adj[c]
        shared = nodes[c].vars & nodes[d].vars
        nodes[d] = pl_combine(nodes[d], pl_summary(nodes[c], shared))
        adj[d].discard(c)
        del adj[c], nodes[c]
    return ModelFragment(nodes[i] for i in sorted(nodes))
