"""Per-node protocol stack: link estimation, spanning tree, junction tree,
tree optimization and one inference layer, all driven by simulator events.

Message kinds and their sizes in bytes (used for traffic accounting):

=============  =============================================  ===============================
kind           carried by                                      size
=============  =============================================  ===============================
beacon         broadcast every beacon period                   24 + 4 per path hop + 12 per rate
tree-propose   reliable, child -> new parent ("attach")        24
tree-drop      reliable, child -> old parent                   24
R              reliable, reachable set + adjacency epoch       20 + 4 per variable
inf            reliable, inference message                     layer-defined
eval           reliable, evaluation broadcast over the tree    32 + path records
reply          reliable, out-of-tree reply to the originator   32 + path records
prepare        reliable, swap lock request along the cycle     32 + 8 per route hop
commit         reliable, swap commit along the cycle           32 + 8 per route hop
=============  =============================================  ===============================

The acknowledgement returned by the reliable transport for a tree-propose
plays the role of the accept message.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .netsim import Packet, ReliableChannel
from .overlay import (LinkEstimate, PathRecord, Q_FLOOR, clique_update, on_beacon,
                      reachable_update, swap_delta)

__all__ = ["ProtocolConfig", "Beacon", "SensorNode"]

log = logging.getLogger(__name__)


@dataclass
class ProtocolConfig:
    beacon_period: float = 1.0
    alpha: float = 0.1
    k_loss: int = 5
    warmup: int = 5              # beacon periods a peer must be known before it is used
    q_min: float = 0.6           # symmetric quality needed to attach or to hear an originator
    q_drop: float = 0.3          # parent link is abandoned below this quality
    root_timeout: float = 15.0   # seconds without a fresh root sequence number
    rto: float = 0.25
    optimize: bool = False
    opt_start: float = 40.0
    opt_period: float = 20.0
    opt_window: float = 2.0
    opt_quiet: float = 6.0
    swap_margin: float = 1.0     # bytes; proposals must save more than this
    lease: float = 5.0
    reply_tries: int = 8


@dataclass(frozen=True)
class Beacon:
    sender: int
    root: int
    root_seq: int
    path: tuple                  # sender ... root
    path_q: float
    parent: int | None
    parent_ver: int
    rates: tuple                 # (peer, inbound rate) pairs

    def size(self) -> int:
        return 24 + 4 * len(self.path) + 12 * len(self.rates)

    def rate_of(self, peer) -> float:
        for p, r in self.rates:
            if p == peer:
                return r
        return 0.0


@dataclass(frozen=True)
class EvalMsg:
    eid: tuple
    origin: int
    first: int                   # c, the originator's neighbour on the evaluated edge
    origin_clique: frozenset
    toward_far: frozenset        # R_{o -> c}
    far_union: frozenset         # R_{c -> o}
    records: tuple

    def size(self) -> int:
        return 32 + sum(_record_size(r) for r in self.records)


@dataclass(frozen=True)
class ReplyMsg:
    eid: tuple
    candidate: int
    records: tuple
    q_k_o: float
    path: tuple                  # candidate's path to its root

    def size(self) -> int:
        return 32 + sum(_record_size(r) for r in self.records) + 4 * len(self.path)


@dataclass(frozen=True)
class SwapMsg:
    sid: tuple
    kind: str                    # prepare | commit
    route: tuple
    case: str                    # "parent": originator reparents; "child": path reverses
    versions: tuple
    path: tuple = ()

    def size(self) -> int:
        return 32 + 8 * len(self.route) + 4 * len(self.path)


def _record_size(r: PathRecord) -> int:
    return 8 + 4 * (len(r.local) + sum(len(s) for s in r.inbound.values())) + 12 * len(r.q_out)


@dataclass
class NodeStats:
    swaps_committed: int = 0
    swaps_proposed: int = 0
    evaluations: int = 0
    skipped_overlaps: int = 0
    detaches: int = 0


class SensorNode:
    """One network node.  ``layer`` is a RobustLayer or SumProdLayer."""

    def __init__(self, nid: int, cfg: ProtocolConfig, layer, local_vars):
        self.nid = nid
        self.cfg = cfg
        self.layer = layer
        self.V = frozenset(local_vars)
        self.sim = None
        self.chan: ReliableChannel | None = None
        self.stats = NodeStats()
        # links
        self.links: dict = {}
        self.heard: set = set()
        self.info: dict = {}                 # peer -> (Beacon, time heard)
        # spanning tree
        self.parent = None
        self.parent_ver = 0
        self.parent_since = 0.0
        self.root = nid
        self.root_seq = 0
        self.path = (nid,)
        self.path_q = 1.0
        self.claims: dict = {}               # peer -> (version, is_child)
        self.root_seen: dict = {}            # root -> (max seq, time it last grew)
        self.nbrs: frozenset = frozenset()
        # junction tree
        self.R_in: dict = {}
        self.R_sent: dict = {}
        self.C: frozenset = self.V
        self.S: dict = {}
        self.jt_version = 0
        self.adj_epoch: dict = {}    # bumped each time we (re)adopt a neighbour
        self.peer_epoch: dict = {}   # last epoch seen from each peer
        self.jt_changed = 0.0
        # optimization
        self.lock = None                     # (swap id, expiry)
        self.cursor = 0
        self.eval_count = 0
        self.evals: dict = {}
        self.seen_evals: set = set()

    # ------------------------------------------------------------------ utils

    @property
    def now(self) -> float:
        return self.sim.now

    def q_in(self, peer) -> float:
        est = self.links.get(peer)
        return est.rate if (est is not None and est.alive) else 0.0

    def q_out(self, peer) -> float:
        rec = self.info.get(peer)
        return rec[0].rate_of(self.nid) if rec is not None else 0.0

    def q_sym(self, peer) -> float:
        return min(self.q_in(peer), self.q_out(peer))

    def usable(self, peer) -> bool:
        est = self.links.get(peer)
        return (est is not None and est.alive and est.ticks >= self.cfg.warmup
                and peer in self.info)

    def _stale(self, root) -> bool:
        if root == self.nid:
            return False
        seen = self.root_seen.get(root)
        return seen is None or self.now - seen[1] > self.cfg.root_timeout

    def locked(self):
        if self.lock is not None and self.now >= self.lock[1]:
            self.lock = None
        return self.lock

    def children(self) -> set:
        out = set()
        for peer, (_, is_child) in self.claims.items():
            est = self.links.get(peer)
            if is_child and est is not None and est.alive:
                out.add(peer)
        return out

    # --------------------------------------------------------------- handlers

    def on_start(self, sim) -> None:
        self.sim = sim
        self.chan = ReliableChannel(sim, self.nid, self.cfg.rto)
        phase = (self.nid * 0.6180339887) % 1.0 * self.cfg.beacon_period
        sim.set_timer(self.nid, phase, "beacon")
        if self.cfg.optimize:
            off = (self.nid * 0.7548776662) % 1.0 * self.cfg.opt_period
            sim.set_timer(self.nid, self.cfg.opt_start + off, "opt")
        self._jt_recompute()

    def on_death(self, sim) -> None:
        self.lock = None

    def on_timer(self, sim, tag) -> None:
        if self.chan.on_timer(tag):
            return
        if tag == "beacon":
            self._beacon_tick()
        elif tag == "opt":
            self._opt_tick()
            sim.set_timer(self.nid, self.cfg.opt_period, "opt")
        elif isinstance(tag, tuple) and tag[0] == "decide":
            self._decide(tag[1])

    def on_message(self, sim, src, payload) -> None:
        if isinstance(payload, Beacon):
            self._on_beacon(src, payload)
            return
        if isinstance(payload, Packet):
            got = self.chan.on_packet(src, payload)
            if got is None:
                return
            key, body = got
            kind = key[0] if isinstance(key, tuple) else key
            if kind == "tree":
                self._on_tree_msg(src, body)
            elif kind == "R":
                self._on_R(src, body)
            elif kind == "inf":
                self._on_inf(src, body)
            elif kind == "eval":
                self._on_eval(src, body)
            elif kind == "reply":
                self._on_reply(src, body)
            elif kind == "swap":
                self._on_swap(src, body)

    # ---------------------------------------------------------- link + beacons

    def _on_beacon(self, src, b: Beacon) -> None:
        self.heard.add(src)
        self.info[src] = (b, self.now)
        seen = self.root_seen.get(b.root)
        if seen is None or b.root_seq > seen[0]:
            self.root_seen[b.root] = (b.root_seq, self.now)
        if b.parent == self.nid:
            self._claim(src, b.parent_ver, True)
        else:
            self._claim(src, b.parent_ver, False)
        self._refresh_neighbors()

    def _claim(self, peer, ver: int, is_child: bool) -> None:
        old = self.claims.get(peer)
        if old is None or ver >= old[0]:
            self.claims[peer] = (ver, is_child)

    def _beacon_tick(self) -> None:
        cfg = self.cfg
        loss_after = cfg.k_loss * cfg.beacon_period
        for peer in sorted(set(self.links) | self.heard):
            est = self.links.get(peer, LinkEstimate())
            self.links[peer] = on_beacon(est, peer in self.heard, self.now, cfg.alpha, loss_after)
            if not self.links[peer].alive and peer not in self.nbrs:
                # beacons carry the same tree state, so nothing is lost by giving up
                self.chan.cancel(peer)
        self.heard.clear()
        self._tree_step()
        self._refresh_neighbors()
        rates = tuple((p, round(e.rate, 6)) for p, e in sorted(self.links.items()) if e.alive)
        b = Beacon(self.nid, self.root, self.root_seq, self.path, self.path_q, self.parent,
                   self.parent_ver, rates)
        self.sim.broadcast(self.nid, b, b.size())
        self.sim.set_timer(self.nid, cfg.beacon_period, "beacon")

    # ----------------------------------------------------------- spanning tree

    def _tree_step(self) -> None:
        cfg = self.cfg
        if self.parent is not None:
            p = self.parent
            ok = self.usable(p) and self.q_sym(p) >= cfg.q_drop
            if ok:
                b, t = self.info[p]
                if t >= self.parent_since:
                    if self.nid in b.path or self._stale(b.root):
                        ok = False
                    else:
                        self.root, self.root_seq = b.root, b.root_seq
                        self.path = (self.nid,) + b.path
                        self.path_q = b.path_q * self.q_sym(p)
                elif self._stale(self.root):
                    ok = False
            if not ok:
                self.stats.detaches += 1
                self._set_parent(None)
        if self.parent is None:
            self.root = self.nid
            self.root_seq += 1
            self.path = (self.nid,)
            self.path_q = 1.0
        best, best_key = None, None
        for peer in sorted(self.info):
            if peer == self.parent or not self.usable(peer):
                continue
            b, _ = self.info[peer]
            if self.nid in b.path or b.root >= self.root or self._stale(b.root):
                continue
            q = self.q_sym(peer)
            if q < cfg.q_min:
                continue
            key = (b.root, -(b.path_q * q), len(b.path), peer)
            if best_key is None or key < best_key:
                best, best_key = peer, key
        if best is not None:
            b, _ = self.info[best]
            self._set_parent(best)
            self.root, self.root_seq = b.root, b.root_seq
            self.path = (self.nid,) + b.path
            self.path_q = b.path_q * self.q_sym(best)

    def _set_parent(self, new) -> None:
        old = self.parent
        if new == old:
            return
        self.parent_ver += 1
        self.parent = new
        self.parent_since = self.now
        if old is not None:
            self.chan.send(old, ("tree",), ("drop", self.parent_ver), 24)
        if new is not None:
            self.chan.send(new, ("tree",), ("attach", self.parent_ver), 24)
        self._refresh_neighbors()

    def _on_tree_msg(self, src, body) -> None:
        what, ver = body
        self._claim(src, ver, what == "attach")
        self._refresh_neighbors()

    def _refresh_neighbors(self) -> None:
        new = set(self.children())
        if self.parent is not None:
            new.add(self.parent)
        new.discard(self.nid)
        new = frozenset(new)
        if new == self.nbrs:
            return
        removed = self.nbrs - new
        added = new - self.nbrs
        for j in removed:
            self.R_in.pop(j, None)
            self.R_sent.pop(j, None)
            self.layer.inbox.pop(j, None)
            self.chan.cancel(j, [("R",), ("inf",)])
        for j in added:
            self.R_sent.pop(j, None)
            self.layer.sent.pop(j, None)
        for j in added:
            self.adj_epoch[j] = self.adj_epoch.get(j, 0) + 1
        self.nbrs = new
        self._touch()
        self._jt_recompute()

    def _touch(self) -> None:
        self.jt_version += 1
        self.jt_changed = self.now if self.sim is not None else 0.0

    # ----------------------------------------------------------- junction tree

    def _on_R(self, src, body) -> None:
        reach, epoch = body
        self.R_in[src] = reach
        if self.peer_epoch.get(src) != epoch:
            # the peer (re)joined us and may have discarded what we sent before
            self.peer_epoch[src] = epoch
            self.R_sent.pop(src, None)
            self.layer.sent.pop(src, None)
        if src in self.nbrs:
            self._jt_recompute()

    def _jt_recompute(self) -> None:
        inbox = {j: self.R_in.get(j, frozenset()) for j in self.nbrs}
        out = reachable_update(self.V, inbox, self.nbrs)
        for j in sorted(self.nbrs):
            if out[j] != self.R_sent.get(j):
                self.R_sent[j] = out[j]
                self.chan.send(j, ("R",), (out[j], self.adj_epoch.get(j, 0)), 20 + 4 * len(out[j]))
        c, s = clique_update(self.V, inbox, self.nbrs)
        if c != self.C or s != self.S:
            self.C, self.S = c, s
            self._touch()
        if set(self.layer.separators) != set(s) or self.layer.clique != c or any(
                self.layer.separators.get(j) != sep for j, sep in s.items()):
            self.layer.set_structure(c, s)
        self._flush()

    def _on_inf(self, src, body) -> None:
        self.layer.receive(src, body)
        if src in self.nbrs:
            self._flush()

    def _flush(self) -> None:
        for j, msg in self.layer.outgoing().items():
            self.chan.send(j, ("inf",), msg, self.layer.size_of(msg))

    def quiet(self) -> bool:
        """No reliable tree traffic outstanding from this node."""
        return not self.chan.busy(keys=[("R",), ("inf",), ("tree",)])

    # ------------------------------------------------------------ optimization

    def _opt_tick(self) -> None:
        cfg = self.cfg
        if self.locked() or not self.nbrs or self.now - self.jt_changed < cfg.opt_quiet:
            return
        order = sorted(self.nbrs)
        c = order[self.cursor % len(order)]
        self.cursor += 1
        self.eval_count += 1
        eid = (self.nid, self.eval_count)
        self.evals[eid] = dict(first=c, version=self.jt_version, replies=[],
                               case="parent" if c == self.parent else "child")
        self.stats.evaluations += 1
        msg = EvalMsg(eid, self.nid, c, self.C, self.R_sent.get(c, frozenset()),
                      self.R_in.get(c, frozenset()), ())
        self.chan.send(c, ("eval", eid), msg, msg.size(), max_tries=cfg.reply_tries)
        self.sim.set_timer(self.nid, cfg.opt_window, ("decide", eid))

    def _record(self) -> PathRecord:
        return PathRecord(self.nid, self.V, {y: self.R_in.get(y, frozenset()) for y in sorted(self.nbrs)},
                          {y: self.q_out(y) for y in sorted(self.nbrs)}, self.jt_version)

    def _on_eval(self, src, msg: EvalMsg) -> None:
        if src not in self.nbrs or msg.eid in self.seen_evals:
            return
        self.seen_evals.add(msg.eid)
        if self.now - self.jt_changed < self.cfg.opt_quiet:
            return
        fwd = EvalMsg(msg.eid, msg.origin, msg.first, msg.origin_clique, msg.toward_far,
                      msg.far_union, msg.records + (self._record(),))
        for y in sorted(self.nbrs - {src}):
            self.chan.send(y, ("eval", msg.eid), fwd, fwd.size(), max_tries=self.cfg.reply_tries)
        o = msg.origin
        if (self.nid != msg.first and o not in self.nbrs and not self.locked()
                and self.usable(o) and self.q_sym(o) >= self.cfg.q_min):
            rep = ReplyMsg(msg.eid, self.nid, fwd.records, self.q_out(o), self.path)
            self.chan.send(o, ("reply", msg.eid), rep, rep.size(), max_tries=self.cfg.reply_tries)

    def _on_reply(self, src, rep: ReplyMsg) -> None:
        ev = self.evals.get(rep.eid)
        if ev is not None and ev.get("open", True):
            ev["replies"].append(rep)

    def _decide(self, eid) -> None:
        ev = self.evals.get(eid)
        if ev is None:
            return
        ev["open"] = False
        c = ev["first"]
        if ev["version"] != self.jt_version or c not in self.nbrs or self.locked():
            return
        best, best_delta = None, -self.cfg.swap_margin
        for rep in sorted(ev["replies"], key=lambda r: r.candidate):
            k = rep.candidate
            if k in self.nbrs or not self.usable(k):
                continue
            delta = swap_delta(self.nid, self.C, self.R_sent.get(c, frozenset()),
                               self.R_in.get(c, frozenset()), list(rep.records),
                               self.q_out(c), self.q_out(k), rep.q_k_o, Q_FLOOR)
            if delta < best_delta:
                best, best_delta = rep, delta
        if best is None:
            return
        self.stats.swaps_proposed += 1
        path = [r.node for r in best.records]           # c ... k
        route = tuple(reversed(path)) + (self.nid,)     # k ... c, o
        versions = tuple((r.node, r.version) for r in best.records) + ((self.nid, self.jt_version),)
        sid = eid
        self.lock = (sid, self.now + self.cfg.lease)
        ev["proposal"] = best
        msg = SwapMsg(sid, "prepare", route, ev["case"], versions, best.path)
        self.chan.send(route[0], ("swap", sid), msg, msg.size(), max_tries=self.cfg.reply_tries)

    def _on_swap(self, src, msg: SwapMsg) -> None:
        route = msg.route
        if self.nid not in route:
            return
        idx = route.index(self.nid)
        versions = dict(msg.versions)
        if msg.kind == "prepare":
            if idx == len(route) - 1:
                self._commit_start(msg)
                return
            lk = self.locked()
            if lk is not None and lk[0] != msg.sid:
                return
            if versions.get(self.nid) != self.jt_version:
                return
            self.lock = (msg.sid, self.now + self.cfg.lease)
            nxt = route[idx + 1]
            self.chan.send(nxt, ("swap", msg.sid), msg, msg.size(), max_tries=self.cfg.reply_tries)
            return
        # commit
        lk = self.locked()
        if lk is None or lk[0] != msg.sid:
            log.debug("node %s: commit for %s without a live lock, ignored", self.nid, msg.sid)
            return
        path = msg.path
        if msg.case == "child":
            # reverse the path: each node hangs below the node the commit came from
            self._set_parent(src)
            self.parent_since = self.now
            self.path = (self.nid,) + path
            path = self.path
        self.lock = None
        if idx < len(route) - 2:
            nxt = route[idx + 1]
            out = SwapMsg(msg.sid, "commit", route, msg.case, msg.versions, path)
            self.chan.send(nxt, ("swap", msg.sid), out, out.size(), max_tries=self.cfg.reply_tries)

    def _commit_start(self, msg: SwapMsg) -> None:
        lk = self.locked()
        if lk is None or lk[0] != msg.sid or dict(msg.versions).get(self.nid) != self.jt_version:
            return
        k = msg.route[0]
        self.stats.swaps_committed += 1
        if msg.case == "parent":
            self._set_parent(k)
            self.path = (self.nid,) + msg.path
            path = ()
        else:
            path = self.path
        self.lock = None
        out = SwapMsg(msg.sid, "commit", msg.route, msg.case, msg.versions, path)
        self.chan.send(k, ("swap", msg.sid), out, out.size(), max_tries=self.cfg.reply_tries)
