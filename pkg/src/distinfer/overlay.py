"""Structural layers run by every node: link estimation, spanning tree,
junction-tree formation and tree optimization.

This module holds the node-local update rules and the cost model as plain
functions so they can be exercised without the simulator.  The message-driven
state machine that strings them together lives in :mod:`distinfer.node`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

__all__ = [
    "LinkEstimate",
    "on_beacon",
    "JTState",
    "reachable_update",
    "clique_update",
    "payload_bytes",
    "tree_cost",
    "junction_tree",
    "PathRecord",
    "SwapProposal",
    "swap_delta",
    "evaluate_swaps",
    "apply_swap",
    "tree_path",
    "ALPHA",
    "Q_FLOOR",
]

ALPHA = 0.1
Q_FLOOR = 1e-3
HEADER_BYTES = 16


# ---------------------------------------------------------------------------
# link estimation

@dataclass
class LinkEstimate:
    """Inbound reception-rate estimate for one peer."""

    rate: float = 0.0
    last_heard: float = float("-inf")
    alive: bool = False
    ticks: int = 0


def on_beacon(est: LinkEstimate, heard: bool, now: float | None = None,
              alpha: float = ALPHA, loss_after: float | None = None) -> LinkEstimate:
    """EWMA update for one beacon period; ``heard`` says whether a beacon arrived."""
    rate = (1.0 - alpha) * est.rate + alpha * (1.0 if heard else 0.0)
    last = now if (heard and now is not None) else est.last_heard
    alive = est.alive or heard
    if now is not None and loss_after is not None and not heard:
        alive = (now - last) <= loss_after
    return LinkEstimate(rate=rate, last_heard=last, alive=alive, ticks=est.ticks + 1)


# ---------------------------------------------------------------------------
# junction-tree formation

@dataclass
class JTState:
    local: frozenset
    inbox: dict = field(default_factory=dict)
    clique: frozenset = frozenset()
    separators: dict = field(default_factory=dict)


def reachable_update(local: frozenset, inbox: Mapping, neighbors: Iterable) -> dict:
    """R_ij = V_i ∪ (union of R_ki over neighbours k ≠ j); missing entries count as empty."""
    neighbors = sorted(neighbors)
    out = {}
    for j in neighbors:
        acc = set(local)
        for k in neighbors:
            if k != j:
                acc |= inbox.get(k, frozenset())
        out[j] = frozenset(acc)
    return out


def clique_update(local: frozenset, inbox: Mapping, neighbors: Iterable) -> tuple[frozenset, dict]:
    """Clique C_i and separators S_ij = C_i ∩ R_ji."""
    neighbors = sorted(neighbors)
    clique = set(local)
    for a_pos, j in enumerate(neighbors):
        for k in neighbors[a_pos + 1:]:
            clique |= inbox.get(j, frozenset()) & inbox.get(k, frozenset())
    clique = frozenset(clique)
    return clique, {j: clique & inbox.get(j, frozenset()) for j in neighbors}


def junction_tree(adj: Mapping, local: Mapping) -> tuple[dict, dict, dict]:
    """Fixed point of the two rules above on a static forest, by subtree unions.

    Returns (R, C, S) with R[(i, j)] the variables reachable to j from i.
    """
    reach = {}
    for i in adj:
        for j in adj[i]:
            seen, stack, acc = {i}, [i], set()
            while stack:
                x = stack.pop()
                acc |= local[x]
                for y in adj[x]:
                    if y not in seen and not (x == i and y == j):
                        seen.add(y)
                        stack.append(y)
            reach[(i, j)] = frozenset(acc)
    cliques, seps = {}, {}
    for i in adj:
        inbox = {j: reach[(j, i)] for j in adj[i]}
        c, s = clique_update(local[i], inbox, adj[i])
        cliques[i] = c
        for j, sep in s.items():
            seps[(i, j)] = sep
    return reach, cliques, seps


# ---------------------------------------------------------------------------
# cost model

def payload_bytes(n_vars: int, dim: int = 1) -> int:
    """Bytes of a Gaussian message over ``n_vars`` variables plus the header."""
    d = n_vars * dim
    return 8 * (d + d * (d + 1) // 2) + HEADER_BYTES


def tree_cost(separators: Mapping, quality: Callable[[object, object], float] | Mapping,
              floor: float = Q_FLOOR) -> float:
    """Expected bytes to deliver one message across every directed tree edge."""
    q = quality if callable(quality) else (lambda i, j: quality[(i, j)])
    return sum(payload_bytes(len(s)) / max(q(i, j), floor) for (i, j), s in sorted(separators.items()))


def tree_path(adj: Mapping, a, b) -> list:
    prev = {a: None}
    stack = [a]
    while stack:
        x = stack.pop()
        if x == b:
            break
        for y in sorted(adj[x]):
            if y not in prev:
                prev[y] = x
                stack.append(y)
    if b not in prev:
        raise ValueError(f"{b!r} is not reachable from {a!r}")
    out = [b]
    while out[-1] != a:
        out.append(prev[out[-1]])
    return out[::-1]


# ---------------------------------------------------------------------------
# edge swaps

@dataclass(frozen=True)
class PathRecord:
    """What one node on an evaluation path contributes to the swap arithmetic."""

    node: object
    local: frozenset
    inbound: Mapping          # neighbour -> R_{neighbour -> node}
    q_out: Mapping            # neighbour -> link quality node -> neighbour
    version: int = 0


@dataclass(frozen=True)
class SwapProposal:
    originator: object
    old_edge: tuple
    new_edge: tuple
    delta: float
    path: tuple = ()
    versions: tuple = ()


def _edge_costs(rec: PathRecord, inbound: Mapping, q_out: Mapping, floor: float) -> float:
    clique, seps = clique_update(rec.local, inbound, inbound.keys())
    return sum(payload_bytes(len(seps[x])) / max(q_out[x], floor) for x in sorted(inbound))


def swap_delta(originator, origin_clique: frozenset, toward_far: frozenset, far_union: frozenset,
               records: Sequence[PathRecord], q_o_old: float, q_o_new: float, q_k_o: float,
               floor: float = Q_FLOOR) -> float:
    """Cost change of trading edge (o, c) for (o, k).

    ``records`` lists the tree path c ... k on the far side, each with the
    node's local variables, inbound reachable sets (before the swap) and
    outbound link qualities.  ``toward_far`` is R_{o->c} (everything on the
    originator's side), ``far_union`` is R_{c->o``}.  Only directed edges
    leaving a path node, plus the two originator edges, can change cost.
    """
    if len(records) < 2:
        raise ValueError("a swap needs a path of at least two far-side nodes")
    path = [r.node for r in records]
    m = len(path)
    before = 0.0
    for r in records:
        before += _edge_costs(r, r.inbound, r.q_out, floor)
    s_o = origin_clique & far_union
    before += payload_bytes(len(s_o)) / max(q_o_old, floor)

    # inbound sets after the swap: strip the originator at c, add it at k
    after_in = []
    for t, r in enumerate(records):
        inbound = {x: s for x, s in r.inbound.items() if not (t == 0 and x == originator)}
        after_in.append(inbound)
    after_in[-1][originator] = toward_far
    fwd = {}
    for t in range(m - 1):
        acc = set(records[t].local)
        for x, s in after_in[t].items():
            if x != path[t + 1]:
                acc |= fwd[t - 1] if (t > 0 and x == path[t - 1]) else s
        fwd[t] = frozenset(acc)
    bwd = {}
    for t in range(m - 1, 0, -1):
        acc = set(records[t].local)
        for x, s in after_in[t].items():
            if x != path[t - 1]:
                acc |= bwd[t + 1] if (t < m - 1 and x == path[t + 1]) else s
        bwd[t] = frozenset(acc)
    after = 0.0
    for t, r in enumerate(records):
        inbound = dict(after_in[t])
        if t > 0:
            inbound[path[t - 1]] = fwd[t - 1]
        if t < m - 1:
            inbound[path[t + 1]] = bwd[t + 1]
        q_out = dict(r.q_out)
        if t == m - 1:
            q_out[originator] = q_k_o
        after += _edge_costs(r, inbound, q_out, floor)
    after += payload_bytes(len(s_o)) / max(q_o_new, floor)
    return after - before


def evaluate_swaps(adj: Mapping, local: Mapping, quality: Callable, hears: Callable,
                   originator, neighbor, floor: float = Q_FLOOR) -> list[SwapProposal]:
    """All legal swaps of edge (originator, neighbor), computed from path records.

    This is the centralized counterpart of the evaluation broadcast: the far
    component is walked from ``neighbor`` and every node that can hear the
    originator yields a proposal priced with :func:`swap_delta`.
    """
    if neighbor not in adj[originator]:
        raise ValueError("edge is not in the tree")
    reach, cliques, _ = junction_tree(adj, local)
    far = [neighbor]
    seen = {originator, neighbor}
    for x in far:
        for y in sorted(adj[x]):
            if y not in seen:
                seen.add(y)
                far.append(y)

    def record(x):
        return PathRecord(x, frozenset(local[x]), {y: reach[(y, x)] for y in adj[x]},
                          {y: quality(x, y) for y in adj[x]})

    out = []
    for k in far[1:]:
        if k in adj[originator] or not hears(originator, k):
            continue
        path = tree_path(adj, neighbor, k)
        delta = swap_delta(originator, cliques[originator], reach[(originator, neighbor)],
                           reach[(neighbor, originator)], [record(x) for x in path],
                           quality(originator, neighbor), quality(originator, k),
                           quality(k, originator), floor)
        out.append(SwapProposal(originator, (originator, neighbor), (originator, k), delta, tuple(path)))
    return out


def apply_swap(adj: Mapping, proposal: SwapProposal) -> dict:
    """New adjacency with the proposal's old edge replaced by its new edge."""
    out = {k: set(v) for k, v in adj.items()}
    a, b = proposal.old_edge
    c, d = proposal.new_edge
    out[a].discard(b)
    out[b].discard(a)
    out[c].add(d)
    out[d].add(c)
    return out
