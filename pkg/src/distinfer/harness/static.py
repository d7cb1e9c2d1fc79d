"""Network-free drivers: deploy a model onto nodes and pass messages on a fixed tree.

These runners stand in for the simulator when only the inference layers are
under test.  Delivery is "latest state per directed edge": a newer message
on an edge replaces an undelivered older one, as the reliable transport does.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Mapping

from ..model import build_external_jtree, distribute, partition_factors, reparameterize
from ..overlay import clique_update, junction_tree, reachable_update
from ..robustlayer import RobustLayer, local_fragment
from ..sumprod import SumProdLayer, local_potential

__all__ = ["Deployment", "deploy", "form_junction_tree", "StaticResult", "run_async",
           "run_scripted"]


@dataclass
class Deployment:
    model: object
    inference: str
    layers: dict
    local_vars: dict
    ext_tree: object = None
    allocation: object = None
    partition: dict = field(default_factory=dict)
    nodes: list = field(default_factory=list)

    def fresh_layers(self, observations: Mapping | None = None) -> dict:
        """New layer objects with empty inboxes (optionally with other observations)."""
        return _make_layers(self, observations)


def _make_layers(dep: Deployment, observations=None) -> dict:
    model = dep.model
    layers = {}
    for n in dep.nodes:
        if dep.inference == "robust":
            alloc = dep.allocation.nodes[n]
            frag = local_fragment(alloc, dep.ext_tree, model, observations)
            layers[n] = RobustLayer(n, frag, alloc.queries)
        else:
            names = model.node_measurements(n)
            if observations is not None:
                names = [m for m in names if m in observations]
            scope = set(model.queries.get(n, ()))
            for k in dep.partition.get(n, ()):
                scope |= set(model.prior_factors[k].scope)
            for m in model.node_measurements(n):
                scope |= set(model.measurement(m).parents)
            pot = local_potential(model, dep.partition.get(n, ()), names, scope)
            layers[n] = SumProdLayer(n, pot, model.queries.get(n, ()))
    return layers


def deploy(model, inference: str = "robust", redundancy: int = 1, nodes=None) -> Deployment:
    """Build node-local state for one inference flavour.

    Robust: external junction tree, clique marginals, redundant allocation.
    Sum-product: the original potentials partitioned across nodes.
    """
    node_ids = sorted(set(nodes or ()) | set(model.nodes()))
    if inference == "robust":
        tree = reparameterize(build_external_jtree(model), model)
        alloc = distribute(tree, model, redundancy=redundancy, nodes=node_ids)
        dep = Deployment(model, inference, {}, {}, tree, alloc, nodes=node_ids)
        dep.local_vars = {n: alloc.local_vars(n) for n in node_ids}
    elif inference == "sumprod":
        part = partition_factors(model, nodes=node_ids)
        dep = Deployment(model, inference, {}, {}, partition=part, nodes=node_ids)
    else:
        raise ValueError(f"unknown inference kind {inference!r}")
    dep.layers = _make_layers(dep)
    if inference == "sumprod":
        dep.local_vars = {n: layer.local_vars for n, layer in dep.layers.items()}
    return dep


def form_junction_tree(adj: Mapping, local: Mapping, seed: int = 0, max_steps: int = 100000):
    """Run the reachable-variables exchange asynchronously to its fixed point.

    Returns (reach, cliques, separators, steps) with reach[(i, j)] the last
    set i sent to j.
    """
    rng = random.Random(seed)
    inbox = {i: {} for i in adj}
    sent = {}
    pending = {}
    for i in sorted(adj):
        for j, r in reachable_update(local[i], inbox[i], adj[i]).items():
            pending[(i, j)] = r
            sent[(i, j)] = r
    steps = 0
    while pending:
        steps += 1
        if steps > max_steps:
            raise RuntimeError("reachable-variables exchange did not settle")
        key = rng.choice(sorted(pending))
        r = pending.pop(key)
        i, j = key
        inbox[j][i] = r
        for k, rr in reachable_update(local[j], inbox[j], adj[j]).items():
            if sent.get((j, k)) != rr:
                sent[(j, k)] = rr
                pending[(j, k)] = rr
    cliques, seps = {}, {}
    for i in adj:
        c, s = clique_update(local[i], inbox[i], adj[i])
        cliques[i] = c
        for j, sep in s.items():
            seps[(i, j)] = sep
    return sent, cliques, seps, steps


@dataclass
class StaticResult:
    layers: dict
    cliques: dict
    separators: dict
    deliveries: int
    rounds: list = field(default_factory=list)   # scripted runs: per-round snapshots


def _install(layers: Mapping, adj: Mapping, local: Mapping):
    _, cliques, seps = junction_tree(adj, local)
    for i, layer in layers.items():
        layer.set_structure(cliques[i], {j: seps[(i, j)] for j in adj[i]})
    return cliques, seps


def run_async(dep: Deployment, adj: Mapping, seed: int = 0, layers: Mapping | None = None,
              max_deliveries: int = 200000) -> StaticResult:
    """Deliver messages one at a time in a seeded random order until quiescent."""
    rng = random.Random(seed)
    layers = dep.fresh_layers() if layers is None else layers
    cliques, seps = _install(layers, adj, dep.local_vars)
    pending = {}
    for i in sorted(layers):
        for j, msg in layers[i].outgoing().items():
            pending[(i, j)] = msg
    n = 0
    while pending:
        n += 1
        if n > max_deliveries:
            raise RuntimeError("message passing did not quiesce")
        key = rng.choice(sorted(pending))
        msg = pending.pop(key)
        i, j = key
        layers[j].receive(i, msg)
        for k, out in layers[j].outgoing().items():
            pending[(j, k)] = out
    return StaticResult(layers, cliques, seps, n)


def run_scripted(dep: Deployment, adj: Mapping, delays: Mapping, max_rounds: int = 1000,
                 observe=None) -> StaticResult:
    """Synchronous rounds; a message on edge (i, j) arrives ``delays[(i, j)]`` rounds later.

    ``observe(round, layers)`` is called after each round's deliveries and its
    return values are collected in ``rounds``.
    """
    layers = dep.fresh_layers()
    cliques, seps = _install(layers, adj, dep.local_vars)
    in_flight = []          # (arrival round, i, j, msg) in send order
    snapshots = []
    n = 0
    for r in range(max_rounds):
        for i in sorted(layers):
            for j, msg in layers[i].outgoing().items():
                in_flight.append((r + delays[(i, j)], i, j, msg))
        due = [m for m in in_flight if m[0] <= r + 1]
        in_flight = [m for m in in_flight if m[0] > r + 1]
        for _, i, j, msg in due:
            layers[j].receive(i, msg)
            n += 1
        if observe is not None:
            snapshots.append(observe(r + 1, layers))
        if not in_flight and not due:
            break
    return StaticResult(layers, cliques, seps, n, snapshots)
