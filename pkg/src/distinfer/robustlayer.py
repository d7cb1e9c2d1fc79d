"""Robust message passing: model fragments flowing over the network junction tree.

A node starts from its local fragment (the PL factors built from the clique
marginals and measurements it was allocated).  The message to a neighbour is
the summary, to the separator, of the local fragment combined with every
other inbound fragment; the belief is the flattened combination of all of
them.  Because every partial combination is itself a product of proper
priors and likelihoods, intermediate beliefs stay valid densities.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping

from .gauss import GaussianFactor
from .plf import (ModelFragment, PLFactor, flatten, fragment_combine, fragment_summary,
                  instantiate, prior_only)

__all__ = ["RobustBelief", "local_fragment", "gather", "robust_message", "robust_belief",
           "RobustLayer"]

log = logging.getLogger(__name__)


@dataclass
class RobustBelief:
    fragment: ModelFragment
    flat: PLFactor | None
    marginal: GaussianFactor | None
    valid: bool


def local_fragment(node_alloc, tree, model, observations: Mapping | None = None) -> ModelFragment:
    """PL factors for one node: each measurement paired with its clique, plus bare priors.

    Measurements without an observed value contribute nothing; the clique they
    were paired with is kept as a prior-only factor.
    """
    obs = model.observations if observations is None else observations
    factors = []
    used = set()
    for name in node_alloc.measurements:
        if name not in obs:
            continue
        c = node_alloc.pairing[name]
        factors.append(instantiate(model.measurement(name), obs[name], tree.marginals[c]))
        used.add(c)
    for c in node_alloc.cliques:
        if c not in used:
            factors.append(prior_only(tree.marginals[c]))
    return ModelFragment(factors)


def gather(local: ModelFragment, inbox: Mapping, exclude=None) -> tuple[ModelFragment, list]:
    """Combine the local fragment with inbound fragments in neighbour order.

    A fragment whose evidence overlaps evidence already gathered would count a
    measurement twice; it is skipped and its sender reported.  On a valid tree
    at its fixed point this never happens.
    """
    parts = [local]
    seen = set(local.evidence)
    skipped = []
    for k in sorted(inbox):
        if k == exclude:
            continue
        frag = inbox[k]
        ev = frag.evidence
        if ev & seen:
            log.debug("fragment from %s repeats evidence %s; left out", k, sorted(ev & seen))
            skipped.append(k)
            continue
        seen |= ev
        parts.append(frag)
    return fragment_combine(*parts), skipped


def robust_message(local: ModelFragment, inbox, separator: Iterable) -> ModelFragment:
    """Summary of local combined with ``inbox`` (already excluding the receiver)."""
    if not isinstance(inbox, Mapping):
        inbox = dict(enumerate(inbox))
    combined, _ = gather(local, inbox)
    return fragment_summary(combined, separator)


def robust_belief(local: ModelFragment, inbox, queries: Iterable) -> RobustBelief:
    """Flatten everything known and read out the posterior over ``queries``."""
    if not isinstance(inbox, Mapping):
        inbox = dict(enumerate(inbox))
    combined, _ = gather(local, inbox)
    queries = tuple(sorted(queries))
    if not len(combined):
        return RobustBelief(combined, None, None, False)
    flat = flatten(combined)
    post = flat.posterior()
    if not set(queries) <= set(post.scope) or not post.is_normalizable():
        return RobustBelief(combined, flat, None, False)
    return RobustBelief(combined, flat, post.marginalize(queries), True)


class RobustLayer:
    """Node-side driver with the same interface as :class:`SumProdLayer`."""

    kind = "robust"

    def __init__(self, node, local: ModelFragment, queries: Iterable = ()):
        self.node = node
        self.local = local
        self.queries = tuple(sorted(queries))
        self.clique = local.vars
        self.separators: dict = {}
        self.inbox: dict = {}
        self.sent: dict = {}
        self._belief = None
        self._memo: dict = {}
        self.max_scope_sent = 0

    @property
    def local_vars(self) -> frozenset:
        return self.local.vars | frozenset(self.queries)

    def set_structure(self, clique: Iterable, separators: Mapping) -> None:
        self.clique = frozenset(clique)
        for j in list(self.inbox):
            if j not in separators:
                del self.inbox[j]
        for j in list(self.sent):
            if j not in separators:
                del self.sent[j]
        self.separators = {j: frozenset(s) for j, s in separators.items()}
        self._belief = None

    def receive(self, src, payload: ModelFragment) -> None:
        self.inbox[src] = payload
        self._belief = None

    def _inbox(self) -> dict:
        return {k: m for k, m in self.inbox.items() if k in self.separators}

    def message_for(self, j) -> ModelFragment:
        others = {k: m for k, m in self._inbox().items() if k != j}
        # inputs are immutable, so identical objects give an identical message
        key = (self.separators[j], tuple((k, id(m)) for k, m in sorted(others.items())))
        hit = self._memo.get(j)
        if hit is not None and hit[0] == key:
            return hit[2]
        msg = robust_message(self.local, others, self.separators[j])
        self._memo[j] = (key, list(others.values()), msg)
        return msg

    def outgoing(self) -> dict:
        out = {}
        for j in sorted(self.separators):
            msg = self.message_for(j)
            if not msg.close_to(self.sent.get(j)):
                self.sent[j] = msg
                out[j] = msg
                self.max_scope_sent = max(self.max_scope_sent, msg.max_scope())
        return out

    @staticmethod
    def size_of(msg: ModelFragment) -> int:
        return msg.size_bytes()

    def belief(self) -> RobustBelief:
        if self._belief is None:
            self._belief = robust_belief(self.local, self._inbox(), self.queries)
        return self._belief

    def estimate(self, var) -> float | None:
        b = self.belief()
        if not b.valid or var not in b.marginal.scope:
            return None
        return float(b.marginal.mean_of(var)[0])

    def query_marginal(self) -> GaussianFactor | None:
        return self.belief().marginal
