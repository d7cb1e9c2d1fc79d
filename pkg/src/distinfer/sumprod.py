"""Baseline sum-product message passing over the network junction tree.

Each node owns the product of the potentials assigned to it (prior factors
and likelihoods of its own measurements).  Messages marginalize that
product, times all other inbound messages, down to the separator.  When a
partial product cannot be integrated the message is still sent, computed
with a pseudo-inverse and flagged, so the pathological intermediate beliefs
of plain sum-product can be observed rather than crashing the run.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .gauss import GaussianFactor, NonIntegrableError
from .overlay import payload_bytes

__all__ = ["SPMessage", "SPBelief", "sp_message", "sp_belief", "factor_changed",
           "local_potential", "SumProdLayer", "CHANGE_TOL"]

log = logging.getLogger(__name__)

CHANGE_TOL = 1e-12


@dataclass
class SPMessage:
    sender: object
    receiver: object
    payload: GaussianFactor
    version: int = 0
    normalizable: bool = True


@dataclass
class SPBelief:
    node: object
    payload: GaussianFactor
    valid: bool


def factor_changed(old: GaussianFactor | None, new: GaussianFactor, tol: float = CHANGE_TOL) -> bool:
    """True when ``new`` differs from ``old`` by more than ``tol`` in any parameter."""
    if old is None or set(old.scope) != set(new.scope):
        return True
    o = old.extend(new.scope)
    return bool(np.max(np.abs(o.precision - new.precision), initial=0.0) > tol
                or np.max(np.abs(o.info - new.info), initial=0.0) > tol)


def _payloads(inbox) -> list:
    items = inbox.values() if isinstance(inbox, Mapping) else inbox
    return [m.payload if isinstance(m, SPMessage) else m for m in items]


def _usable(factors: list, clique) -> list:
    if clique is None:
        return factors
    clique = set(clique)
    kept = [f for f in factors if set(f.scope) <= clique]
    if len(kept) != len(factors):
        log.debug("ignoring %d inbound message(s) scoped outside the clique", len(factors) - len(kept))
    return kept


def sp_message(local: GaussianFactor, inbox, separator: Iterable, clique: Iterable | None = None,
               sender=None, receiver=None, version: int = 0) -> SPMessage:
    """marginalize(local x prod(inbox), separator), falling back to a pseudo-inverse."""
    sep = tuple(sorted(separator))
    prod = local
    for f in _usable(_payloads(inbox), clique):
        prod = prod.multiply(f)
    prod = prod.extend(tuple(prod.scope) + tuple(v for v in sep if v not in prod.scope))
    try:
        out = prod.marginalize(sep)
        ok = True
    except NonIntegrableError:
        out = prod.marginalize(sep, pseudo=True)
        ok = False
    return SPMessage(sender, receiver, out.extend(sep), version, ok)


def sp_belief(local: GaussianFactor, inbox, clique: Iterable | None = None, node=None) -> SPBelief:
    """Product of the local potential and every inbound message, with a validity flag."""
    prod = local
    for f in _usable(_payloads(inbox), clique):
        prod = prod.multiply(f)
    if clique is not None:
        scope = tuple(sorted(clique))
        prod = prod.extend(scope + tuple(v for v in prod.scope if v not in scope))
    return SPBelief(node, prod, prod.is_normalizable())


def local_potential(model, factor_ids: Iterable[int], measurement_names: Iterable[str],
                    scope: Iterable = ()) -> GaussianFactor:
    """Product of the assigned prior potentials and measurement likelihoods."""
    out = GaussianFactor.uniform(tuple(sorted(scope)))
    for k in factor_ids:
        out = out.multiply(model.prior_factors[k])
    for name in measurement_names:
        if name in model.observations:
            out = out.multiply(model.measurement(name).likelihood(model.observations[name]))
    return out


class SumProdLayer:
    """Node-side driver: keeps the inbox, recomputes messages, detects change."""

    kind = "sumprod"

    def __init__(self, node, local: GaussianFactor, queries: Iterable = ()):
        self.node = node
        self.local = local
        self.queries = tuple(sorted(queries))
        self.clique = frozenset(local.scope)
        self.separators: dict = {}
        self.inbox: dict = {}
        self.sent: dict = {}
        self._belief = None
        self._memo: dict = {}

    @property
    def local_vars(self) -> frozenset:
        return frozenset(self.local.scope) | frozenset(self.queries)

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

    def receive(self, src, payload) -> None:
        self.inbox[src] = payload
        self._belief = None

    def message_for(self, j) -> SPMessage:
        others = {k: m for k, m in self.inbox.items() if k != j and k in self.separators}
        key = (self.separators[j], self.clique, tuple((k, id(m)) for k, m in sorted(others.items())))
        hit = self._memo.get(j)
        if hit is not None and hit[0] == key:
            return hit[2]
        msg = sp_message(self.local, others, self.separators[j], self.clique, self.node, j)
        self._memo[j] = (key, list(others.values()), msg)
        return msg

    def outgoing(self) -> dict:
        """Messages whose payload changed since last sent, keyed by neighbour."""
        out = {}
        for j in sorted(self.separators):
            msg = self.message_for(j)
            prev = self.sent.get(j)
            if prev is None or factor_changed(prev.payload, msg.payload):
                self.sent[j] = msg
                out[j] = msg
        return out

    @staticmethod
    def size_of(msg: SPMessage) -> int:
        return payload_bytes(msg.payload.size)

    def belief(self) -> SPBelief:
        if self._belief is None:
            inbox = {k: m for k, m in self.inbox.items() if k in self.separators}
            self._belief = sp_belief(self.local, inbox, self.clique, self.node)
        return self._belief

    def estimate(self, var) -> float | None:
        """Posterior mean of one query variable, or None when the belief is invalid."""
        b = self.belief()
        if not b.valid or var not in b.payload.scope:
            return None
        return float(b.payload.mean_of(var)[0])

    def query_marginal(self) -> GaussianFactor | None:
        b = self.belief()
        if not b.valid:
            return None
        return b.payload.marginalize(self.queries)
