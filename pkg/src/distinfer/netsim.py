"""Deterministic discrete-event simulator of a lossy broadcast network.

Every transmission is a broadcast that each other live node receives
independently with its directed link quality; nobody learns about losses.
Interference windows silence all traffic between two node sets for a time
interval, and nodes can die on a schedule.  A single seeded ``random.Random``
drives every draw, so a scenario plus seed fixes the whole event trace.

:class:`ReliableChannel` layers acknowledged, retransmitted "latest state"
delivery on top, which is what tree neighbours use between themselves.
"""
from __future__ import annotations

import heapq
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np

__all__ = ["LinkModel", "InterferenceWindow", "FailureSchedule", "Event", "Simulator",
           "Packet", "ReliableChannel", "DEFAULT_LATENCY"]

log = logging.getLogger(__name__)

DEFAULT_LATENCY = 0.05


@dataclass(frozen=True)
class InterferenceWindow:
    start: float
    end: float
    a: frozenset
    b: frozenset

    def blocks(self, i, j, t: float) -> bool:
        if not (self.start <= t < self.end):
            return False
        return (i in self.a and j in self.b) or (i in self.b and j in self.a)


class LinkModel:
    """Directed reception probabilities plus interference windows."""

    def __init__(self, quality: Mapping | None = None, interference: Iterable[InterferenceWindow] = ()):
        self.quality = {}
        self._out = None
        for (i, j), q in (quality or {}).items():
            self.set(i, j, q)
        self.interference = list(interference)

    def set(self, i, j, q: float) -> None:
        q = float(q)
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"link quality {q} for {i}->{j} outside [0, 1]")
        if i == j:
            raise ValueError("self links are meaningless")
        self.quality[(i, j)] = q
        self._out = None

    def q(self, i, j) -> float:
        return self.quality.get((i, j), 0.0)

    def blocked(self, i, j, t: float) -> bool:
        return any(w.blocks(i, j, t) for w in self.interference)

    def receivers(self, i) -> list:
        if self._out is None:
            out = {}
            for (a, j), q in sorted(self.quality.items()):
                if q > 0:
                    out.setdefault(a, []).append(j)
            self._out = out
        return self._out.get(i, [])

    @classmethod
    def distance_decay(cls, coords: Mapping, full: float, zero: float, asym: float = 0.0,
                       seed: int = 0, interference: Iterable[InterferenceWindow] = ()) -> "LinkModel":
        """q = 1 within ``full``, 0 beyond ``zero``, linear between, times a per-direction jitter.

        ``asym`` scales an independent U(0, asym) reduction drawn per directed
        pair, which makes the two directions of a link differ.
        """
        rng = np.random.default_rng(seed)
        nodes = sorted(coords)
        out = cls(interference=interference)
        for i in nodes:
            for j in nodes:
                if i == j:
                    continue
                d = float(np.linalg.norm(np.asarray(coords[i]) - np.asarray(coords[j])))
                if d <= full:
                    q = 1.0
                elif d >= zero:
                    q = 0.0
                else:
                    q = (zero - d) / (zero - full)
                q *= 1.0 - asym * float(rng.random())
                if q > 0:
                    out.set(i, j, q)
        return out


@dataclass
class FailureSchedule:
    death_time: dict = field(default_factory=dict)
    rate: float = 0.0
    seed: int = 0

    def time_of(self, node) -> float:
        return self.death_time.get(node, math.inf)

    @classmethod
    def exponential(cls, nodes: Iterable, rate: float, seed: int = 0, exempt: Iterable = ()) -> "FailureSchedule":
        """i.i.d. exponential lifetimes with the given rate (per second)."""
        rng = np.random.default_rng(seed)
        exempt = set(exempt)
        times = {}
        for n in sorted(nodes):
            t = float(rng.exponential(1.0 / rate)) if rate > 0 else math.inf
            if n not in exempt:
                times[n] = t
        return cls(times, rate, seed)


@dataclass(order=True)
class Event:
    time: float
    seq: int
    kind: str = field(compare=False)          # delivery | timer | death
    node: Any = field(compare=False)
    payload: Any = field(compare=False, default=None)
    src: Any = field(compare=False, default=None)
    size: int = field(compare=False, default=0)


class Simulator:
    """Global clock, event queue and radio.

    Node handlers implement ``on_start(sim)``, ``on_message(sim, src, payload)``
    and ``on_timer(sim, tag)``; an optional ``on_death(sim)`` is called once.
    """

    def __init__(self, links: LinkModel, failures: FailureSchedule | None = None, seed: int = 0,
                 latency: float = DEFAULT_LATENCY, record_trace: bool = False):
        self.links = links
        self.failures = failures or FailureSchedule()
        self.rng = random.Random(seed)
        self.latency = float(latency)
        self.now = 0.0
        self._queue: list = []
        self._seq = 0
        self.handlers: dict = {}
        self.alive: set = set()
        self.bytes_sent: dict = {}
        self.trace: list | None = [] if record_trace else None
        self.blocked_deliveries = 0
        self._started = False

    # setup ------------------------------------------------------------------

    def add_node(self, nid, handler) -> None:
        self.handlers[nid] = handler
        self.alive.add(nid)
        self.bytes_sent.setdefault(nid, 0)

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        for nid in sorted(self.handlers):
            t = self.failures.time_of(nid)
            if math.isfinite(t):
                self._push(t, "death", nid)
        for nid in sorted(self.handlers):
            self.handlers[nid].on_start(self)

    def _push(self, t: float, kind: str, node, payload=None, src=None, size: int = 0) -> Event:
        ev = Event(t, self._seq, kind, node, payload, src, size)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    # radio --------------------------------------------------------------------

    def is_alive(self, nid) -> bool:
        return nid in self.alive

    def _account(self, sender, size: int) -> None:
        self.bytes_sent[sender] = self.bytes_sent.get(sender, 0) + int(size)

    def broadcast(self, sender, payload, size: int) -> list:
        """One transmission; returns the nodes a delivery was scheduled for."""
        if sender not in self.alive:
            log.debug("broadcast from dead node %s ignored", sender)
            return []
        self._account(sender, size)
        out = []
        for j in self.links.receivers(sender):
            if j not in self.alive:
                continue
            hit = self.rng.random() < self.links.q(sender, j)
            if hit and self.links.blocked(sender, j, self.now):
                self.blocked_deliveries += 1
                hit = False
            if hit:
                self._push(self.now + self.latency, "delivery", j, payload, sender, size)
                out.append(j)
        return out

    def unicast(self, sender, dst, payload, size: int) -> bool:
        """A transmission only ``dst`` listens to (same loss model as broadcast)."""
        if sender not in self.alive:
            log.debug("unicast from dead node %s ignored", sender)
            return False
        self._account(sender, size)
        if dst not in self.alive:
            return False
        hit = self.rng.random() < self.links.q(sender, dst)
        if hit and self.links.blocked(sender, dst, self.now):
            self.blocked_deliveries += 1
            hit = False
        if hit:
            self._push(self.now + self.latency, "delivery", dst, payload, sender, size)
        return hit

    def set_timer(self, node, delay: float, tag) -> Event | None:
        if node not in self.alive:
            return None
        return self._push(self.now + max(0.0, float(delay)), "timer", node, tag)

    # loop ----------------------------------------------------------------------

    def peek_time(self) -> float:
        return self._queue[0].time if self._queue else math.inf

    def step(self):
        """Process the earliest event; None when the queue is empty."""
        if not self._queue:
            return None
        ev = heapq.heappop(self._queue)
        self.now = ev.time
        if ev.kind == "death":
            if ev.node in self.alive:
                self.alive.discard(ev.node)
                handler = self.handlers[ev.node]
                if hasattr(handler, "on_death"):
                    handler.on_death(self)
                self._record(ev)
            return ev.time, ev
        if ev.node not in self.alive:
            return ev.time, ev
        if ev.kind == "delivery":
            if self.links.blocked(ev.src, ev.node, ev.time):
                self.blocked_deliveries += 1
                return ev.time, ev
            self._record(ev)
            self.handlers[ev.node].on_message(self, ev.src, ev.payload)
        elif ev.kind == "timer":
            self._record(ev)
            self.handlers[ev.node].on_timer(self, ev.payload)
        return ev.time, ev

    def _record(self, ev: Event) -> None:
        if self.trace is not None:
            tag = ev.payload if ev.kind == "timer" else type(ev.payload).__name__
            self.trace.append((round(ev.time, 9), ev.seq, ev.kind, ev.node, ev.src, repr(tag), ev.size))

    def run(self, until: float, on_sample=None, sample_period: float = 1.0) -> None:
        """Advance to ``until``, calling ``on_sample(t)`` at every multiple of the period."""
        self.start()
        k = int(math.floor(self.now / sample_period)) + 1 if on_sample else None
        while True:
            next_sample = k * sample_period if on_sample else math.inf
            horizon = min(until, next_sample)
            while self._queue and self._queue[0].time <= horizon:
                self.step()
            if on_sample and next_sample <= until:
                self.now = next_sample
                on_sample(next_sample)
                k += 1
                continue
            self.now = until
            break


# ---------------------------------------------------------------------------
# acknowledged transport

@dataclass(frozen=True)
class Packet:
    kind: str            # data | ack
    key: Any
    seq: int
    payload: Any = None


ACK_BYTES = 24
DATA_HEADER_BYTES = 12


class ReliableChannel:
    """Per-node sender/receiver state for acknowledged "latest value" delivery.

    Each (destination, key) holds at most one outstanding payload; sending a
    new one supersedes it.  The receiver hands a payload up only if its
    sequence number is newer than anything seen on that (source, key), so
    retransmissions and reordering never resurrect stale state.
    """

    def __init__(self, sim: Simulator, node, rto: float = 0.25):
        self.sim = sim
        self.node = node
        self.rto = float(rto)
        self.pending: dict = {}
        self._seq: dict = {}
        self._last_rx: dict = {}
        self.retransmissions = 0

    def send(self, dst, key, payload, size: int, max_tries: int | None = None) -> None:
        seq = self._seq.get((dst, key), 0) + 1
        self._seq[(dst, key)] = seq
        self.pending[(dst, key)] = [seq, payload, int(size), 0, max_tries]
        self._transmit(dst, key)

    def _transmit(self, dst, key) -> None:
        seq, payload, size, tries, limit = self.pending[(dst, key)]
        self.pending[(dst, key)][3] = tries + 1
        if tries:
            self.retransmissions += 1
        self.sim.unicast(self.node, dst, Packet("data", key, seq, payload), size + DATA_HEADER_BYTES)
        self.sim.set_timer(self.node, self.rto, ("rto", dst, key, seq))

    def cancel(self, dst, keys: Iterable | None = None) -> None:
        for d, k in list(self.pending):
            if d == dst and (keys is None or k in keys):
                del self.pending[(d, k)]

    def busy(self, dst=None, keys: Iterable | None = None) -> bool:
        return any((dst is None or d == dst) and (keys is None or k in keys) for d, k in self.pending)

    def on_packet(self, src, pkt: Packet):
        """Process an inbound packet; returns (key, payload) for fresh data, else None."""
        if pkt.kind == "ack":
            cur = self.pending.get((src, pkt.key))
            if cur is not None and pkt.seq >= cur[0]:
                del self.pending[(src, pkt.key)]
            return None
        self.sim.unicast(self.node, src, Packet("ack", pkt.key, pkt.seq), ACK_BYTES)
        if pkt.seq <= self._last_rx.get((src, pkt.key), 0):
            return None
        self._last_rx[(src, pkt.key)] = pkt.seq
        return pkt.key, pkt.payload

    def on_timer(self, tag) -> bool:
        """Handle a retransmission timer; False if the tag is not ours."""
        if not (isinstance(tag, tuple) and tag and tag[0] == "rto"):
            return False
        _, dst, key, seq = tag
        cur = self.pending.get((dst, key))
        if cur is None or cur[0] != seq:
            return True
        limit = cur[4]
        if limit is not None and cur[3] >= limit:
            del self.pending[(dst, key)]
            return True
        self._transmit(dst, key)
        return True
