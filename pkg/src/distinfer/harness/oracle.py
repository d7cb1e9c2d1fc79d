"""Centralized dense-joint inference used as ground truth.

Deliberately independent of the factor algebra: the prior is assembled as
one dense precision matrix, converted to moment form once, and measurements
are folded in with sequential Kalman updates.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np


class OracleError(ValueError):
    """The requested subset does not define a proper posterior."""


@dataclass
class DensePosterior:
    variables: tuple
    mean: np.ndarray
    cov: np.ndarray

    def index(self, names: Iterable) -> list:
        pos = {v: i for i, v in enumerate(self.variables)}
        return [pos[v] for v in names]

    def marginal(self, names: Sequence) -> tuple[np.ndarray, np.ndarray]:
        idx = self.index(names)
        return self.mean[idx], self.cov[np.ix_(idx, idx)]

    def mean_of(self, name) -> float:
        return float(self.mean[self.index([name])[0]])


def _embed(variables: Sequence, scope: Sequence, block: np.ndarray, vec: np.ndarray):
    pos = {v: i for i, v in enumerate(variables)}
    idx = [pos[v] for v in scope]
    n = len(variables)
    big = np.zeros((n, n))
    big[np.ix_(idx, idx)] = block
    bv = np.zeros(n)
    bv[idx] = vec
    return big, bv


def product_prior(variables: Sequence, factors: Iterable) -> tuple[np.ndarray, np.ndarray]:
    """Dense information parameters of a product of potentials."""
    n = len(variables)
    lam = np.zeros((n, n))
    eta = np.zeros(n)
    for f in factors:
        a, b = _embed(variables, f.scope, f.precision, f.info)
        lam += a
        eta += b
    return lam, eta


def decomposable_prior(variables: Sequence, marginals: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Dense information parameters of prod(clique marginals) / prod(separator marginals).

    The clique tree is a maximum-weight spanning tree of the marginals'
    scopes, built with networkx (ties resolved by clique position).
    """
    g = nx.Graph()
    g.add_nodes_from(range(len(marginals)))
    for i in range(len(marginals)):
        for j in range(i + 1, len(marginals)):
            w = len(set(marginals[i].scope) & set(marginals[j].scope))
            if w:
                g.add_edge(i, j, weight=w)
    tree = nx.maximum_spanning_tree(g, algorithm="kruskal")
    lam, eta = product_prior(variables, marginals)
    for i, j in sorted(tuple(sorted(e)) for e in tree.edges):
        sep = sorted(set(marginals[i].scope) & set(marginals[j].scope))
        mu, sig = _moments(marginals[i])
        pos = {v: k for k, v in enumerate(marginals[i].scope)}
        idx = [pos[v] for v in sep]
        s_cov = sig[np.ix_(idx, idx)]
        s_prec = np.linalg.inv(s_cov)
        a, b = _embed(variables, sep, s_prec, s_prec @ mu[idx])
        lam -= a
        eta -= b
    return lam, eta


def _moments(f) -> tuple[np.ndarray, np.ndarray]:
    cov = np.linalg.inv(f.precision)
    return cov @ f.info, cov


def posterior(variables: Sequence, lam: np.ndarray, eta: np.ndarray,
              measurements: Iterable, observations: Mapping) -> DensePosterior:
    """Condition a dense prior on linear-Gaussian measurements by Kalman updates."""
    lam = 0.5 * (lam + lam.T)
    try:
        np.linalg.cholesky(lam)
    except np.linalg.LinAlgError:
        raise OracleError("prior over the requested factors is not normalizable") from None
    cov = np.linalg.inv(lam)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ eta
    pos = {v: i for i, v in enumerate(variables)}
    for m in measurements:
        h = np.zeros(len(variables))
        for p, c in zip(m.parents, m.coef):
            h[pos[p]] += c
        s = float(h @ cov @ h) + m.noise_var
        k = cov @ h / s
        resid = observations[m.name] - (float(h @ mean) + m.offset)
        mean = mean + k * resid
        cov = cov - np.outer(k, h @ cov)
        cov = 0.5 * (cov + cov.T)
    return DensePosterior(tuple(variables), mean, cov)


def oracle_posterior(model, measurements: Iterable[str] | None = None,
                     priors: Sequence | None = None, variables: Sequence | None = None) -> DensePosterior:
    """Exact posterior for a chosen subset of measurements and prior factors.

    ``priors`` defaults to the model's own potentials.  Passing a list of
    clique marginals instead switches to the decomposable reconstruction, which
    is how the partition oracle conditions on one side's factors.
    """
    names = [m.name for m in model.measurements] if measurements is None else list(measurements)
    meas = [model.measurement(n) for n in names]
    if priors is None:
        variables = tuple(model.env_vars) if variables is None else tuple(variables)
        lam, eta = product_prior(variables, model.prior_factors)
    else:
        priors = list(priors)
        if variables is None:
            variables = tuple(sorted(set().union(*(set(p.scope) for p in priors))))
        lam, eta = decomposable_prior(variables, priors)
    missing = {p for m in meas for p in m.parents} - set(variables)
    if missing:
        raise OracleError(f"measurement parents {sorted(missing)!r} have no prior in the subset")
    return posterior(variables, lam, eta, meas, model.observations)
