"""Line-oriented scenario files.

Example::

    seed 7
    duration 300
    inference robust
    redundancy 1
    model calibration nodes=20 graph=geometric model_seed=3
    links decay full=0.2 zero=0.45 asym=0.1
    interference 60 120 A=1-10 B=11-20
    failure rate=0.002 exempt=1
    kill 7 35.0
    protocol q_min=0.6 optimize=1

Node sets use comma-separated ids and inclusive ranges (``1-4,9``).
Every error message names the offending line.
"""
from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from pathlib import Path

from ..node import ProtocolConfig

__all__ = ["ScenarioError", "Scenario", "parse_scenario", "read_scenario", "parse_node_set"]


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    seed: int = 0
    duration: float = 300.0
    sample: float = 1.0
    latency: float = 0.05
    inference: str = "robust"
    redundancy: int = 1
    model_kind: str = "calibration"
    model_args: dict = field(default_factory=dict)
    model_path: str | None = None
    coords: dict = field(default_factory=dict)
    link_kind: str = "decay"
    link_args: dict = field(default_factory=lambda: {"full": 0.2, "zero": 0.45})
    link_overrides: list = field(default_factory=list)
    interference: list = field(default_factory=list)
    failure_rate: float = 0.0
    failure_seed: int | None = None
    failure_exempt: set = field(default_factory=set)
    kills: dict = field(default_factory=dict)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    source: str = ""
    base_dir: Path = field(default_factory=Path)


def parse_node_set(text: str) -> frozenset:
    out = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            out.update(range(int(a), int(b) + 1))
        else:
            out.add(int(part))
    return frozenset(out)


def _kv(tokens, lineno: int) -> dict:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ScenarioError(f"line {lineno}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


_NUMERIC_MODEL = {"nodes": int, "model_seed": int, "radius": float, "bias_var": float,
                  "noise_var": float, "temp_mean": float, "temp_var": float, "smooth_var": float}


def _convert_protocol(cfg: ProtocolConfig, kv: dict, lineno: int) -> None:
    for k, v in kv.items():
        if not hasattr(cfg, k):
            raise ScenarioError(f"line {lineno}: unknown protocol setting {k!r}")
        cur = getattr(cfg, k)
        try:
            if isinstance(cur, bool):
                val = v.lower() in ("1", "true", "yes", "on")
            elif isinstance(cur, int):
                val = int(v)
            else:
                val = float(v)
        except ValueError:
            raise ScenarioError(f"line {lineno}: bad value {v!r} for {k}") from None
        setattr(cfg, k, val)


def parse_scenario(text: str, base_dir=None) -> Scenario:
    sc = Scenario(source=text, base_dir=Path(base_dir or "."))
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            tok = shlex.split(line)
        except ValueError as exc:
            raise ScenarioError(f"line {lineno}: {exc}") from None
        head, rest = tok[0], tok[1:]
        try:
            if head == "seed":
                sc.seed = int(rest[0])
            elif head == "duration":
                sc.duration = float(rest[0])
            elif head == "sample":
                sc.sample = float(rest[0])
            elif head == "latency":
                sc.latency = float(rest[0])
            elif head == "inference":
                if rest[0] not in ("robust", "sumprod", "both"):
                    raise ScenarioError(f"line {lineno}: inference must be robust, sumprod or both")
                sc.inference = rest[0]
            elif head == "redundancy":
                sc.redundancy = int(rest[0])
                if sc.redundancy < 1:
                    raise ScenarioError(f"line {lineno}: redundancy must be at least 1")
            elif head == "model":
                if rest[0] == "calibration":
                    sc.model_kind = "calibration"
                    args = _kv(rest[1:], lineno)
                    for k, v in args.items():
                        conv = _NUMERIC_MODEL.get(k)
                        sc.model_args[k] = conv(v) if conv else v
                    if "nodes" not in sc.model_args:
                        raise ScenarioError(f"line {lineno}: calibration model needs nodes=")
                elif rest[0] == "file":
                    sc.model_kind = "file"
                    sc.model_path = rest[1]
                else:
                    raise ScenarioError(f"line {lineno}: unknown model kind {rest[0]!r}")
            elif head == "coord":
                sc.coords[int(rest[0])] = (float(rest[1]), float(rest[2]))
            elif head == "links":
                kind = rest[0]
                if kind not in ("decay", "uniform", "none"):
                    raise ScenarioError(f"line {lineno}: unknown link model {kind!r}")
                sc.link_kind = kind
                sc.link_args = {k: float(v) for k, v in _kv(rest[1:], lineno).items()}
            elif head == "link":
                i, j, q = int(rest[0]), int(rest[1]), float(rest[2])
                if not 0.0 <= q <= 1.0:
                    raise ScenarioError(f"line {lineno}: link quality must lie in [0, 1]")
                both = len(rest) > 3 and rest[3] == "both"
                sc.link_overrides.append((i, j, q))
                if both:
                    sc.link_overrides.append((j, i, q))
            elif head == "interference":
                start, end = float(rest[0]), float(rest[1])
                kv = _kv(rest[2:], lineno)
                if end <= start:
                    raise ScenarioError(f"line {lineno}: interference window must end after it starts")
                sc.interference.append((start, end, parse_node_set(kv["A"]), parse_node_set(kv["B"])))
            elif head == "failure":
                kv = _kv(rest, lineno)
                sc.failure_rate = float(kv.get("rate", 0.0))
                if "seed" in kv:
                    sc.failure_seed = int(kv["seed"])
                if "exempt" in kv:
                    sc.failure_exempt = set(parse_node_set(kv["exempt"]))
            elif head == "kill":
                sc.kills[int(rest[0])] = float(rest[1])
            elif head == "protocol":
                _convert_protocol(sc.protocol, _kv(rest, lineno), lineno)
            else:
                raise ScenarioError(f"line {lineno}: unknown directive {head!r}")
        except ScenarioError:
            raise
        except (IndexError, KeyError, ValueError) as exc:
            raise ScenarioError(f"line {lineno}: malformed {head!r} directive ({exc})") from None
    if sc.model_kind == "calibration" and "nodes" not in sc.model_args:
        raise ScenarioError("scenario has no model directive")
    return sc


def read_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), base_dir=path.parent)
