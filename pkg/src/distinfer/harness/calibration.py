"""Synthetic models: the sensor-calibration family and generic random models."""
from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from ..gauss import GaussianFactor
from ..model import Measurement, ProbModel

__all__ = ["CalibrationModel", "gen_calibration", "gen_random_model", "temperature_graph"]


@dataclass
class CalibrationModel:
    coords: np.ndarray
    temp_edges: list
    model: ProbModel
    true_bias: dict
    true_temp: dict
    targets: dict = field(default_factory=dict)   # node -> bias variable scored by RMS
    params: dict = field(default_factory=dict)

    @property
    def nodes(self) -> list:
        return sorted(self.targets)


def _tv(i):
    return f"T{i}"


def _bv(i):
    return f"B{i}"


def temperature_graph(coords: np.ndarray, graph: str = "geometric", radius: float | None = None,
                      edges=None) -> list:
    """Edges (1-based node ids) of the temperature Markov graph."""
    n = len(coords)
    if graph == "chain":
        out = [(i, i + 1) for i in range(1, n)]
    elif graph == "complete":
        out = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    elif graph == "explicit":
        out = sorted(tuple(sorted(e)) for e in edges)
    elif graph == "geometric":
        d = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
        if radius is None:
            # smallest radius giving a connected graph, padded a little
            mst = nx.minimum_spanning_tree(nx.from_numpy_array(d))
            radius = 1.05 * max(w for _, _, w in mst.edges(data="weight")) if n > 1 else 0.0
        out = [(i + 1, j + 1) for i in range(n) for j in range(i + 1, n) if d[i, j] <= radius]
    else:
        raise ValueError(f"unknown graph kind {graph!r}")
    g = nx.Graph()
    g.add_nodes_from(range(1, n + 1))
    g.add_edges_from(out)
    if n > 1 and not nx.is_connected(g):
        raise ValueError("temperature graph is disconnected")
    return out


def gen_calibration(n_nodes: int, graph: str = "geometric", seed: int = 0, *, radius: float | None = None,
                    edges=None, coords=None, bias_var: float = 1.0, noise_var: float = 0.01,
                    temp_mean: float = 20.0, temp_var: float = 4.0, smooth_var: float = 0.25,
                    sample: bool = True) -> CalibrationModel:
    """Temperature GMRF x i.i.d. bias priors x additive measurement model.

    The temperature prior has precision  L / smooth_var + I / temp_var  (L the
    graph Laplacian) and mean ``temp_mean``.  Its precision is spread over
    one pairwise potential per graph edge while the information vector lives
    in per-node unary potentials.  Every node i carries T_i, B_i and one
    measurement M_i = T_i + B_i + noise.
    """
    if n_nodes < 2:
        raise ValueError("a calibration model needs at least two nodes")
    rng = np.random.default_rng(seed)
    coords = rng.random((n_nodes, 2)) if coords is None else np.asarray(coords, dtype=float)
    temp_edges = temperature_graph(coords, graph, radius, edges)
    n = n_nodes
    deg = {i: 0 for i in range(1, n + 1)}
    for a, b in temp_edges:
        deg[a] += 1
        deg[b] += 1
    lap = np.zeros((n, n))
    for a, b in temp_edges:
        lap[a - 1, a - 1] += 1
        lap[b - 1, b - 1] += 1
        lap[a - 1, b - 1] -= 1
        lap[b - 1, a - 1] -= 1
    lam = lap / smooth_var + np.eye(n) / temp_var
    eta = lam @ np.full(n, temp_mean)

    factors = []
    for a, b in temp_edges:
        block = np.array([[lam[a - 1, a - 1] / deg[a], lam[a - 1, b - 1]],
                          [lam[b - 1, a - 1], lam[b - 1, b - 1] / deg[b]]])
        factors.append(GaussianFactor((_tv(a), _tv(b)), block, np.zeros(2)))
    for i in range(1, n + 1):
        factors.append(GaussianFactor((_tv(i),), [[0.0]], [eta[i - 1]]))
    bvar = max(bias_var, 1e-9)
    for i in range(1, n + 1):
        factors.append(GaussianFactor((_bv(i),), [[1.0 / bvar]], [0.0]))

    meas = [Measurement(f"M{i}", (_tv(i), _bv(i)), (1.0, 1.0), 0.0, noise_var) for i in range(1, n + 1)]
    env = tuple(_tv(i) for i in range(1, n + 1)) + tuple(_bv(i) for i in range(1, n + 1))
    owners = {f"M{i}": i for i in range(1, n + 1)}
    queries = {i: (_tv(i), _bv(i)) for i in range(1, n + 1)}

    true_t, true_b, obs = {}, {}, {}
    if sample:
        cov = np.linalg.inv(lam)
        t = rng.multivariate_normal(np.full(n, temp_mean), 0.5 * (cov + cov.T))
        b = rng.normal(0.0, np.sqrt(bias_var), n)
        noise = rng.normal(0.0, np.sqrt(noise_var), n)
        for i in range(1, n + 1):
            true_t[i] = float(t[i - 1])
            true_b[i] = float(b[i - 1])
            obs[f"M{i}"] = float(t[i - 1] + b[i - 1] + noise[i - 1])
    model = ProbModel(env, factors, meas, obs, owners, queries)
    params = dict(n_nodes=n, graph=graph, seed=seed, bias_var=bias_var, noise_var=noise_var,
                  temp_mean=temp_mean, temp_var=temp_var, smooth_var=smooth_var)
    return CalibrationModel(coords, temp_edges, model, true_b, true_t,
                            {i: _bv(i) for i in range(1, n + 1)}, params)


def gen_random_model(n_nodes: int, seed: int = 0, n_vars: int | None = None,
                     max_parents: int = 3) -> ProbModel:
    """A generic linear-Gaussian model with one measurement per node.

    The prior is a product of random pairwise potentials on a connected random
    graph plus diagonal loading that makes the joint positive definite.  Each
    node observes a random linear combination of 1..max_parents variables and
    queries the parents of its own measurement.
    """
    rng = np.random.default_rng(seed)
    n_vars = n_vars or max(2, int(rng.integers(n_nodes // 2 + 1, n_nodes + 3)))
    names = tuple(f"X{k:02d}" for k in range(n_vars))
    g = nx.random_labeled_tree(n_vars, seed=int(rng.integers(2**31))) if n_vars > 1 else nx.empty_graph(1)
    extra = int(rng.integers(0, n_vars + 1))
    for _ in range(extra):
        a, b = rng.choice(n_vars, 2, replace=False)
        g.add_edge(int(a), int(b))
    factors = []
    lam = np.zeros((n_vars, n_vars))
    for a, b in sorted(tuple(sorted(e)) for e in g.edges):
        m = rng.normal(size=(2, 2))
        block = m @ m.T * 0.5
        block[0, 1] = block[1, 0] = rng.normal()
        info = rng.normal(size=2)
        factors.append(GaussianFactor((names[a], names[b]), block, info))
        lam[np.ix_([a, b], [a, b])] += block
    ev_min = float(np.linalg.eigvalsh(lam).min())
    load = max(0.0, -ev_min) + float(rng.uniform(0.3, 1.5))
    for k in range(n_vars):
        factors.append(GaussianFactor((names[k],), [[load]], [rng.normal()]))
    meas, obs, owners, queries = [], {}, {}, {}
    for i in range(1, n_nodes + 1):
        k = int(rng.integers(1, min(max_parents, n_vars) + 1))
        parents = tuple(names[p] for p in sorted(rng.choice(n_vars, k, replace=False)))
        coef = tuple(float(c) for c in rng.uniform(0.5, 1.5, k) * rng.choice([-1, 1], k))
        m = Measurement(f"M{i}", parents, coef, float(rng.normal()), float(rng.uniform(0.05, 1.0)))
        meas.append(m)
        obs[m.name] = float(rng.normal(0, 2))
        owners[m.name] = i
        queries[i] = parents
    return ProbModel(names, factors, meas, obs, owners, queries)
