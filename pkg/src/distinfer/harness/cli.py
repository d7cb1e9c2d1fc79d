"""Command-line entry point.

    distinfer run SCENARIO [--inference robust|sumprod|both] [--csv OUT] [--seed N]
    distinfer oracle FILE [--nodes 1,2 | --measurements M1,M2] [--vars T1,B1]
    distinfer opt-baseline (--graph FILE | --scenario FILE) [--seed N]
    distinfer validate FILE [FILE ...]
    distinfer replay SCENARIO [--seed N] [--against CSV] [--trace-out FILE]

FILE arguments to ``oracle`` and ``validate`` may be model files or scenario
files; the format is detected from the first directive.
"""
from __future__ import annotations

import argparse
import difflib
import logging
import math
import sys
from pathlib import Path

import networkx as nx
import numpy as np

from .baseline import candidate_graph, offline_tree_optimum, parse_graph
from .modelfile import ModelFileError, parse_model
from .oracle import OracleError, oracle_posterior
from .runner import build_links, build_model, build_world, run_scenario
from .scenario import ScenarioError, parse_node_set, parse_scenario

__all__ = ["main", "build_parser", "lint_model", "lint_scenario"]

log = logging.getLogger("distinfer")

_SCENARIO_HEADS = {"seed", "duration", "sample", "latency", "inference", "redundancy", "model",
                   "links", "link", "interference", "failure", "kill", "protocol"}


def _first_directive(text: str) -> str | None:
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].split()
        if line:
            return line[0]
    return None


def _is_scenario(text: str) -> bool:
    return _first_directive(text) in _SCENARIO_HEADS


def _load(path: str):
    """(kind, object) for a model or scenario file."""
    p = Path(path)
    text = p.read_text()
    if _is_scenario(text):
        return "scenario", parse_scenario(text, base_dir=p.parent)
    return "model", parse_model(text)


# --------------------------------------------------------------------------- lint

def lint_model(bundle) -> list:
    """Problems that would make a model unusable in a run; empty when clean."""
    m = bundle.model
    problems = []
    for ms in m.measurements:
        if ms.name not in m.owners:
            problems.append(f"measurement {ms.name} has no owner node")
        if ms.name not in m.observations:
            problems.append(f"measurement {ms.name} has no observed value")
    for node, q in m.queries.items():
        unknown = [v for v in q if v not in m.env_vars]
        if unknown:
            problems.append(f"node {node} queries unknown variables {unknown}")
    for node, v in bundle.targets.items():
        if v not in m.env_vars:
            problems.append(f"node {node} targets unknown variable {v}")
    try:
        oracle_posterior(m, [])
    except OracleError as exc:
        problems.append(str(exc))
    return problems


def lint_scenario(sc) -> list:
    problems = []
    try:
        model, targets, truth, coords = build_model(sc)
    except (ValueError, OSError) as exc:
        return [f"model: {exc}"]
    nodes = sorted(set(model.nodes()))
    known = set(nodes)
    coords.update(sc.coords)
    for s, e, a, b in sc.interference:
        stray = sorted((set(a) | set(b)) - known)
        if stray:
            problems.append(f"interference {s}-{e} names unknown nodes {stray}")
    stray = sorted(set(sc.kills) - known)
    if stray:
        problems.append(f"kill names unknown nodes {stray}")
    try:
        links = build_links(sc, coords, nodes)
    except ValueError as exc:
        return problems + [str(exc)]
    g = candidate_graph(nodes, links.q, sc.protocol.q_min)
    comps = list(nx.connected_components(g))
    if len(comps) > 1:
        sizes = sorted((len(c) for c in comps), reverse=True)
        problems.append(f"links above q_min={sc.protocol.q_min} split the nodes into components of sizes {sizes}")
    return problems


# ----------------------------------------------------------------------- commands

def cmd_run(args) -> int:
    sc = parse_scenario(Path(args.scenario).read_text(), base_dir=Path(args.scenario).parent)
    if args.seed is not None:
        sc.seed = args.seed
    if args.duration is not None:
        sc.duration = args.duration
    res = run_scenario(sc, args.inference, csv_path=args.csv)
    rows = res.rows
    if not rows:
        print("no samples (duration shorter than the sampling period)")
        return 0
    last = rows[-1]
    first_span = next((r.time for r in rows if r.spanning_tree_valid), None)
    print(f"samples            {len(rows)}")
    print(f"first spanning     {first_span if first_span is not None else 'never'}")
    for f in ("rms_robust", "rms_sumprod", "rms_global_oracle", "rms_local_oracle", "tree_cost"):
        v = getattr(last, f)
        print(f"final {f:<18} {'' if v is None else f'{v:.6g}'}")
    print(f"max invalid beliefs {max(r.invalid_belief_count for r in rows)}")
    print(f"bytes sent         {last.bytes_sent_total}")
    if args.csv:
        print(f"wrote {args.csv}")
    return 0


def cmd_oracle(args) -> int:
    kind, obj = _load(args.file)
    if kind == "scenario":
        model = build_model(obj)[0]
    else:
        model = obj.model
    if args.measurements is not None:
        names = [x for x in args.measurements.split(",") if x]
    elif args.nodes is not None:
        nodes = parse_node_set(args.nodes)
        names = [m.name for m in model.measurements if model.owners.get(m.name) in nodes]
    else:
        names = [m.name for m in model.measurements]
    names = [n for n in names if n in model.observations]
    post = oracle_posterior(model, names)
    wanted = args.vars.split(",") if args.vars else list(post.variables)
    print(f"conditioning on {len(names)} measurement(s)")
    print(f"{'variable':<12}{'mean':>16}{'sd':>14}")
    for v in wanted:
        mean, cov = post.marginal([v])
        print(f"{v:<12}{mean[0]:>16.9g}{math.sqrt(cov[0, 0]):>14.6g}")
    return 0


def cmd_opt_baseline(args) -> int:
    if args.graph:
        g, local, quality = parse_graph(Path(args.graph).read_text())
    else:
        sc = parse_scenario(Path(args.scenario).read_text(), base_dir=Path(args.scenario).parent)
        world = build_world(sc)
        nodes = sorted(world.nodes)
        quality = world.links.q
        g = candidate_graph(nodes, quality, sc.protocol.q_min)
        local = {i: world.nodes[i].V for i in nodes}
    res = offline_tree_optimum(g, local, quality, seed=args.seed)
    edges = sorted(tuple(sorted((a, b))) for a in res.tree for b in res.tree[a] if a < b)
    print(f"method    {res.method} ({res.evaluated} trees evaluated)")
    print(f"cost      {res.cost:.6f}")
    print("edges     " + " ".join(f"{a}-{b}" for a, b in edges))
    return 0


def cmd_validate(args) -> int:
    status = 0
    for path in args.files:
        try:
            kind, obj = _load(path)
        except (ModelFileError, ScenarioError, OSError) as exc:
            print(f"{path}: error: {exc}")
            status = 1
            continue
        problems = lint_model(obj) if kind == "model" else lint_scenario(obj)
        if problems:
            status = 1
            for p in problems:
                print(f"{path}: {kind}: {p}")
        else:
            print(f"{path}: {kind} ok")
    return status


def _trace_lines(world) -> list:
    return [" ".join(map(str, ev)) for ev in world.sim.trace]


def cmd_replay(args) -> int:
    path = Path(args.scenario)
    sc = parse_scenario(path.read_text(), base_dir=path.parent)
    if args.seed is not None:
        sc.seed = args.seed
    first = run_scenario(sc, args.inference, record_trace=True)
    csv_a = first.csv_text()
    trace_a = [line for w in first.worlds.values() for line in _trace_lines(w)]
    if args.trace_out:
        Path(args.trace_out).write_text("\n".join(trace_a) + "\n")
    if args.against:
        csv_b, trace_b = Path(args.against).read_text(), None
        label = args.against
    else:
        sc2 = parse_scenario(path.read_text(), base_dir=path.parent)
        sc2.seed = sc.seed
        second = run_scenario(sc2, args.inference, record_trace=True)
        csv_b = second.csv_text()
        trace_b = [line for w in second.worlds.values() for line in _trace_lines(w)]
        label = "second run"
    same_csv = csv_a == csv_b
    same_trace = trace_b is None or trace_a == trace_b
    print(f"seed {sc.seed}: {len(trace_a)} events, {len(first.rows)} rows")
    if same_csv and same_trace:
        print(f"identical to {label}")
        return 0
    if not same_csv:
        diff = difflib.unified_diff(csv_b.splitlines(), csv_a.splitlines(), label, "replay", lineterm="", n=0)
        print("\n".join(list(diff)[:20]))
    if not same_trace:
        diff = difflib.unified_diff(trace_b, trace_a, label, "replay", lineterm="", n=0)
        print("\n".join(list(diff)[:20]))
    return 1


# -------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distinfer", description="Distributed inference simulation harness")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario, write the per-tick CSV and print a summary")
    r.add_argument("scenario")
    r.add_argument("--inference", choices=["robust", "sumprod", "both"])
    r.add_argument("--csv", help="output CSV path")
    r.add_argument("--seed", type=int)
    r.add_argument("--duration", type=float)
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("oracle", help="exact posterior marginals for a measurement subset")
    o.add_argument("file", help="model or scenario file")
    grp = o.add_mutually_exclusive_group()
    grp.add_argument("--nodes", help="condition on measurements owned by these nodes, e.g. 1-4,9")
    grp.add_argument("--measurements", help="comma-separated measurement names")
    o.add_argument("--vars", help="comma-separated variables to print (default: all)")
    o.set_defaults(func=cmd_oracle)

    b = sub.add_parser("opt-baseline", help="offline best spanning-tree cost")
    src = b.add_mutually_exclusive_group(required=True)
    src.add_argument("--graph", help="candidate-link file (node/edge directives)")
    src.add_argument("--scenario", help="use a scenario's nodes and true link qualities")
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_opt_baseline)

    v = sub.add_parser("validate", help="lint model and scenario files")
    v.add_argument("files", nargs="+")
    v.set_defaults(func=cmd_validate)

    rp = sub.add_parser("replay", help="rerun a scenario and diff CSV and event trace")
    rp.add_argument("scenario")
    rp.add_argument("--seed", type=int)
    rp.add_argument("--inference", choices=["robust", "sumprod", "both"])
    rp.add_argument("--against", help="compare with this CSV instead of a second run")
    rp.add_argument("--trace-out", help="write the event trace here")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    try:
        return args.func(args)
    except (ScenarioError, ModelFileError, OracleError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
