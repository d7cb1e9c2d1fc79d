"""Plain-text model files.

One directive per line, ``#`` starts a comment::

    var T1 T2 B1
    factor T1,T2 prec=2.0,-1.0;-1.0,2.0 info=0.0,0.0
    measurement M1 parents=T1,B1 coef=1,1 offset=0 noise=0.01 owner=1 value=20.3
    query 1 T1,B1
    target 1 B1 truth=0.42
    coord 1 0.25 0.75

Floats are written with ``repr`` so a write/read round trip is exact.
"""
from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..gauss import GaussianFactor
from ..model import Measurement, ProbModel

__all__ = ["ModelFileError", "ModelBundle", "read_model", "write_model", "parse_model"]


class ModelFileError(ValueError):
    pass


@dataclass
class ModelBundle:
    model: ProbModel
    targets: dict = field(default_factory=dict)
    truth: dict = field(default_factory=dict)
    coords: dict = field(default_factory=dict)


def _node_id(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def _floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x != ""]


def _kv(tokens, lineno) -> dict:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ModelFileError(f"line {lineno}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def parse_model(text: str) -> ModelBundle:
    env, factors, meas = [], [], []
    obs, owners, queries, targets, truth, coords = {}, {}, {}, {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = shlex.split(line)
        head, rest = tok[0], tok[1:]
        try:
            if head == "var":
                env.extend(rest)
            elif head == "factor":
                scope = tuple(rest[0].split(","))
                kv = _kv(rest[1:], lineno)
                n = len(scope)
                rows = [_floats(r) for r in kv["prec"].split(";")]
                prec = np.array(rows, dtype=float)
                info = np.array(_floats(kv.get("info", ",".join(["0"] * n))))
                if prec.shape != (n, n) or info.shape != (n,):
                    raise ModelFileError(f"line {lineno}: factor parameters do not match scope size {n}")
                factors.append(GaussianFactor(scope, prec, info, float(kv.get("log", 0.0))))
            elif head == "measurement":
                name = rest[0]
                kv = _kv(rest[1:], lineno)
                parents = tuple(kv["parents"].split(","))
                m = Measurement(name, parents, tuple(_floats(kv["coef"])), float(kv.get("offset", 0.0)),
                                float(kv.get("noise", 1.0)))
                meas.append(m)
                if "owner" in kv:
                    owners[name] = _node_id(kv["owner"])
                if "value" in kv:
                    obs[name] = float(kv["value"])
            elif head == "query":
                queries[_node_id(rest[0])] = tuple(rest[1].split(",")) if len(rest) > 1 else ()
            elif head == "target":
                node = _node_id(rest[0])
                targets[node] = rest[1]
                kv = _kv(rest[2:], lineno)
                if "truth" in kv:
                    truth[node] = float(kv["truth"])
            elif head == "coord":
                coords[_node_id(rest[0])] = (float(rest[1]), float(rest[2]))
            else:
                raise ModelFileError(f"line {lineno}: unknown directive {head!r}")
        except ModelFileError:
            raise
        except (KeyError, IndexError, ValueError) as exc:
            raise ModelFileError(f"line {lineno}: {exc}") from None
    try:
        model = ProbModel(tuple(env), factors, meas, obs, owners, queries)
    except ValueError as exc:
        raise ModelFileError(str(exc)) from None
    return ModelBundle(model, targets, truth, coords)


def read_model(path) -> ModelBundle:
    return parse_model(Path(path).read_text())


def _fmt(xs) -> str:
    return ",".join(repr(float(x)) for x in xs)


def write_model(bundle: ModelBundle, path=None) -> str:
    m = bundle.model
    lines = ["var " + " ".join(m.env_vars)]
    for f in m.prior_factors:
        prec = ";".join(_fmt(row) for row in f.precision)
        lines.append(f"factor {','.join(f.scope)} prec={prec} info={_fmt(f.info)} log={f.log_scale!r}")
    for ms in m.measurements:
        parts = [f"measurement {ms.name}", f"parents={','.join(ms.parents)}", f"coef={_fmt(ms.coef)}",
                 f"offset={ms.offset!r}", f"noise={ms.noise_var!r}"]
        if ms.name in m.owners:
            parts.append(f"owner={m.owners[ms.name]}")
        if ms.name in m.observations:
            parts.append(f"value={m.observations[ms.name]!r}")
        lines.append(" ".join(parts))
    for node in sorted(m.queries, key=str):
        lines.append(f"query {node} {','.join(m.queries[node])}")
    for node in sorted(bundle.targets, key=str):
        extra = f" truth={bundle.truth[node]!r}" if node in bundle.truth else ""
        lines.append(f"target {node} {bundle.targets[node]}{extra}")
    for node in sorted(bundle.coords, key=str):
        x, y = bundle.coords[node]
        lines.append(f"coord {node} {float(x)!r} {float(y)!r}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
