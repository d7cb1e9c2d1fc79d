"""Simulation driver: scenario in, per-tick metrics (and CSV) out."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

from ..netsim import FailureSchedule, InterferenceWindow, LinkModel, Simulator
from ..node import SensorNode
from ..overlay import junction_tree, tree_cost
from .calibration import gen_calibration
from .metrics import forest_components, is_spanning_tree, rip_holds, rms
from .modelfile import read_model
from .oracle import OracleError, oracle_posterior
from .scenario import Scenario, read_scenario
from .static import deploy

__all__ = ["CSV_FIELDS", "World", "TickRow", "RunResult", "build_world", "build_model", "build_links", "run_scenario",
           "write_csv", "rows_to_csv", "converged_components", "agreed_tree", "held_oracle",
           "replicas_intact"]

CSV_FIELDS = ["time", "spanning_tree_valid", "rip_valid", "rms_robust", "rms_sumprod",
              "rms_global_oracle", "rms_local_oracle", "invalid_belief_count", "tree_cost",
              "bytes_sent_total"]


@dataclass
class World:
    scenario: Scenario
    inference: str
    model: object
    targets: dict
    truth: dict
    coords: dict
    links: LinkModel
    sim: Simulator
    nodes: dict
    deployment: object
    _oracle_cache: dict = field(default_factory=dict)

    def oracle(self, measurements) -> object:
        key = frozenset(measurements)
        if key not in self._oracle_cache:
            self._oracle_cache[key] = oracle_posterior(self.model, sorted(key))
        return self._oracle_cache[key]

    def measurements_of(self, nodes) -> list:
        nodes = set(nodes)
        return [m.name for m in self.model.measurements
                if self.model.owners.get(m.name) in nodes and m.name in self.model.observations]

    def held_factors(self, nodes) -> tuple[list, list]:
        """Clique marginals (one per clique, however many replicas) and evidence held by ``nodes``."""
        alloc = self.deployment.allocation
        cliques, evidence = set(), set()
        for i in nodes:
            cliques |= set(alloc.nodes[i].cliques)
            evidence |= set(self.nodes[i].layer.local.evidence)
        tree = self.deployment.ext_tree
        return [tree.marginals[c] for c in sorted(cliques)], sorted(evidence)

    def side_of(self, i, t: float) -> set:
        """Live nodes whose traffic to ``i`` is not blocked at time ``t``."""
        return {j for j in self.sim.alive
                if j == i or not self.links.blocked(i, j, t)}


def held_oracle(world: World, nodes):
    """Dense posterior given exactly the PL factors held by ``nodes`` (robust worlds only)."""
    priors, evidence = world.held_factors(nodes)
    key = ("held", frozenset(c.scope for c in priors), frozenset(evidence))
    if key not in world._oracle_cache:
        world._oracle_cache[key] = oracle_posterior(world.model, evidence, priors=priors)
    return world._oracle_cache[key]


def replicas_intact(world: World) -> bool:
    """Every clique marginal still has at least one live holder (robust worlds only)."""
    alloc = world.deployment.allocation
    alive = world.sim.alive
    return all(any(h in alive for h in alloc.holders(c)) for c in range(len(alloc.tree.cliques)))


@dataclass
class TickRow:
    time: float
    spanning_tree_valid: int
    rip_valid: int
    rms_robust: float | None
    rms_sumprod: float | None
    rms_global_oracle: float | None
    rms_local_oracle: float | None
    invalid_belief_count: int
    tree_cost: float | None
    bytes_sent_total: int

    def as_csv(self) -> list:
        return [_fmt(getattr(self, f)) for f in CSV_FIELDS]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(round(x, 12))
    return str(x)


@dataclass
class RunResult:
    rows: list
    worlds: dict

    def csv_text(self) -> str:
        return rows_to_csv(self.rows)


def build_model(sc: Scenario):
    if sc.model_kind == "calibration":
        args = dict(sc.model_args)
        n = args.pop("nodes")
        seed = args.pop("model_seed", sc.seed)
        graph = args.pop("graph", "geometric")
        cal = gen_calibration(n, graph, seed, **args)
        coords = {i: tuple(cal.coords[i - 1]) for i in range(1, n + 1)}
        return cal.model, dict(cal.targets), dict(cal.true_bias), coords
    path = Path(sc.model_path)
    if not path.is_absolute():
        path = sc.base_dir / path
    bundle = read_model(path)
    return bundle.model, dict(bundle.targets), dict(bundle.truth), dict(bundle.coords)


def build_links(sc: Scenario, coords: dict, nodes: list) -> LinkModel:
    windows = [InterferenceWindow(s, e, a, b) for s, e, a, b in sc.interference]
    args = sc.link_args
    if sc.link_kind == "decay":
        missing = [n for n in nodes if n not in coords]
        if missing:
            raise ValueError(f"distance-decay links need coordinates for nodes {missing!r}")
        links = LinkModel.distance_decay({n: coords[n] for n in nodes}, args.get("full", 0.2),
                                         args.get("zero", 0.45), args.get("asym", 0.0),
                                         int(args.get("seed", sc.seed)), windows)
    elif sc.link_kind == "uniform":
        q = args.get("q", 1.0)
        links = LinkModel({(i, j): q for i in nodes for j in nodes if i != j}, windows)
    else:
        links = LinkModel({}, windows)
    for i, j, q in sc.link_overrides:
        links.set(i, j, q)
    return links


def build_world(sc: Scenario, inference: str | None = None, record_trace: bool = False) -> World:
    inference = inference or (sc.inference if sc.inference != "both" else "robust")
    model, targets, truth, coords = build_model(sc)
    coords.update(sc.coords)
    node_ids = sorted(set(model.nodes()))
    links = build_links(sc, coords, node_ids)
    failures = FailureSchedule()
    if sc.failure_rate > 0:
        fseed = sc.failure_seed if sc.failure_seed is not None else sc.seed + 1
        failures = FailureSchedule.exponential(node_ids, sc.failure_rate, fseed, sc.failure_exempt)
    failures.death_time.update(sc.kills)
    sim = Simulator(links, failures, sc.seed, sc.latency, record_trace)
    dep = deploy(model, inference, sc.redundancy, node_ids)
    nodes = {}
    for nid in node_ids:
        node = SensorNode(nid, sc.protocol, dep.layers[nid], dep.local_vars[nid])
        nodes[nid] = node
        sim.add_node(nid, node)
    return World(sc, inference, model, targets, truth, coords, links, sim, nodes, dep)


def agreed_tree(world: World) -> dict:
    """Adjacency over live nodes using only edges both endpoints list."""
    alive = world.sim.alive
    adj = {i: set() for i in alive}
    for i in alive:
        for j in world.nodes[i].nbrs:
            if j in alive and i in world.nodes[j].nbrs:
                adj[i].add(j)
    return adj


def converged_components(world: World, adj: dict | None = None) -> list:
    """(component, converged) pairs; converged means structure and messages are at rest."""
    adj = agreed_tree(world) if adj is None else adj
    out = []
    for comp in forest_components(adj):
        ok = True
        sub = {i: adj[i] for i in comp}
        n_edges = sum(len(v) for v in sub.values()) // 2
        if n_edges != len(comp) - 1:
            ok = False
        for i in sorted(comp):
            node = world.nodes[i]
            if not ok:
                break
            if node.nbrs != frozenset(adj[i]) or not node.quiet():
                ok = False
                break
            for j in node.nbrs:
                other = world.nodes[j]
                if other.R_in.get(i) != node.R_sent.get(j):
                    ok = False
                    break
                if j not in node.layer.sent or other.layer.inbox.get(i) is not node.layer.sent[j]:
                    ok = False
                    break
        if ok:
            ok = rip_holds(sub, {i: world.nodes[i].C for i in comp}, {i: world.nodes[i].V for i in comp})
        out.append((frozenset(comp), ok))
    return out


def _sample(world: World, t: float) -> TickRow:
    sim = world.sim
    alive = sorted(sim.alive)
    adj = agreed_tree(world)
    span = int(is_spanning_tree(adj))
    rip = int(rip_holds(adj, {i: world.nodes[i].C for i in alive}, {i: world.nodes[i].V for i in alive}))
    est, glob, loc = {}, {}, {}
    invalid = 0
    for i in alive:
        target = world.targets.get(i)
        if target is None or i not in world.truth:
            continue
        e = world.nodes[i].layer.estimate(target)
        if e is None:
            invalid += 1
        est[i] = e
        try:
            glob[i] = world.oracle(world.measurements_of(world.side_of(i, t))).mean_of(target)
            loc[i] = world.oracle(world.measurements_of([i])).mean_of(target)
        except OracleError:
            pass
    truth = world.truth

    def _rms(values):
        try:
            return rms(values, truth)
        except ValueError:
            return None

    cost = None
    if span:
        _, _, seps = junction_tree(adj, {i: world.nodes[i].V for i in alive})
        cost = tree_cost(seps, world.links.q)
    r = _rms(est)
    return TickRow(t, span, rip, r if world.inference == "robust" else None,
                   r if world.inference == "sumprod" else None, _rms(glob), _rms(loc), invalid, cost,
                   int(sum(sim.bytes_sent.values())))


def run_world(world: World, probe=None) -> list:
    rows = []

    def on_sample(t):
        row = _sample(world, t)
        rows.append(row)
        if probe is not None:
            probe(t, world, row)

    world.sim.run(world.scenario.duration, on_sample, world.scenario.sample)
    return rows


def run_scenario(scenario, inference: str | None = None, csv_path=None, probe=None,
                 record_trace: bool = False) -> RunResult:
    """Simulate a scenario (object or file path) and collect one row per sampling tick.

    With ``inference="both"`` the scenario is simulated once per layer and the
    rows are merged: structural columns come from the robust run.
    """
    sc = scenario if isinstance(scenario, Scenario) else read_scenario(scenario)
    kind = inference or sc.inference
    kinds = ["robust", "sumprod"] if kind == "both" else [kind]
    worlds, per_kind = {}, {}
    for k in kinds:
        w = build_world(sc, k, record_trace)
        worlds[k] = w
        per_kind[k] = run_world(w, probe)
    rows = per_kind[kinds[0]]
    if len(kinds) == 2:
        for a, b in zip(rows, per_kind["sumprod"]):
            a.rms_sumprod = b.rms_sumprod
            a.invalid_belief_count = b.invalid_belief_count
    if csv_path is not None:
        write_csv(rows, csv_path)
    return RunResult(rows, worlds)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow(r.as_csv())
    return buf.getvalue()


def write_csv(rows, path) -> None:
    Path(path).write_text(rows_to_csv(rows))
