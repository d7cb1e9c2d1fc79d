"""Gaussian factors over named continuous variables.

A factor is stored in information (canonical) form

    f(x) = exp(g + eta' x - 0.5 x' Lambda x)

which stays well defined for likelihoods and partial beliefs whose precision
is singular or indefinite.  Moment form (mean, covariance) is only a
constructor and a read-out.

Variables are plain hashable, sortable identifiers (strings in every shipped
scenario).  Each variable has a dimension, 1 unless stated otherwise.
"""
from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

TAU_SYM = 1e-9
TAU_PD = 1e-10

_LOG_2PI = float(np.log(2.0 * np.pi))

__all__ = [
    "GaussianFactor",
    "ScopeError",
    "NonIntegrableError",
    "NotNormalizableError",
    "multiply",
    "divide",
    "marginalize",
    "condition",
    "is_normalizable",
    "moment_stats",
    "product",
    "TAU_PD",
    "TAU_SYM",
]


class ScopeError(ValueError):
    """Raised when variable scopes are incompatible for an operation."""


class NonIntegrableError(ValueError):
    """The precision block over eliminated variables is not positive definite."""


class NotNormalizableError(ValueError):
    """The factor has no finite normalizer, so it has no moments."""


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _pd_cholesky(a: np.ndarray, tau: float = TAU_PD) -> np.ndarray | None:
    """Lower Cholesky factor when ``a`` is positive definite beyond ``tau``, else None."""
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return None
    if a.shape[0] and np.min(np.diag(chol)) ** 2 <= tau:
        return None
    return chol


def _is_pd(a: np.ndarray, tau: float = TAU_PD) -> bool:
    return a.shape[0] == 0 or _pd_cholesky(a, tau) is not None


class GaussianFactor:
    """Exponentiated quadratic over an ordered scope of variables.

    Instances are treated as immutable values; every operation returns a new
    factor.  ``log_scale`` is carried along but ignored when comparing two
    factors as distributions.
    """

    __slots__ = ("scope", "dims", "precision", "info", "log_scale", "_offsets")

    def __init__(self, scope: Sequence, precision, info, log_scale: float = 0.0,
                 dims: Sequence[int] | None = None):
        scope = tuple(scope)
        if len(set(scope)) != len(scope):
            raise ScopeError(f"duplicate variables in scope {scope!r}")
        dims = tuple(int(d) for d in dims) if dims is not None else (1,) * len(scope)
        if len(dims) != len(scope) or any(d < 1 for d in dims):
            raise ScopeError("dims must give a positive dimension per variable")
        n = sum(dims)
        precision = np.array(precision, dtype=float).reshape(n, n)
        info = np.array(info, dtype=float).reshape(n)
        self.scope = scope
        self.dims = dims
        self.precision = _sym(precision)
        self.info = info
        self.log_scale = float(log_scale)
        offsets = {}
        pos = 0
        for v, d in zip(scope, dims):
            offsets[v] = (pos, pos + d)
            pos += d
        self._offsets = offsets

    @classmethod
    def _make(cls, scope: tuple, dims: tuple, precision: np.ndarray, info: np.ndarray,
              log_scale: float) -> "GaussianFactor":
        """Trusted constructor for results of the algebra below (no validation or copies)."""
        self = object.__new__(cls)
        self.scope = scope
        self.dims = dims
        self.precision = precision
        self.info = info
        self.log_scale = float(log_scale)
        offsets = {}
        pos = 0
        for v, d in zip(scope, dims):
            offsets[v] = (pos, pos + d)
            pos += d
        self._offsets = offsets
        return self

    # construction -------------------------------------------------------

    @classmethod
    def uniform(cls, scope: Sequence = (), dims: Sequence[int] | None = None) -> "GaussianFactor":
        """Zero-information factor (the identity for multiply)."""
        scope = tuple(scope)
        dims = tuple(dims) if dims is not None else (1,) * len(scope)
        n = sum(dims)
        return cls(scope, np.zeros((n, n)), np.zeros(n), 0.0, dims)

    @classmethod
    def from_moments(cls, scope: Sequence, mean, cov, dims: Sequence[int] | None = None) -> "GaussianFactor":
        """Normalized density N(mean, cov) over ``scope``."""
        scope = tuple(scope)
        dims = tuple(dims) if dims is not None else (1,) * len(scope)
        n = sum(dims)
        mean = np.array(mean, dtype=float).reshape(n)
        cov = _sym(np.array(cov, dtype=float).reshape(n, n))
        if not _is_pd(cov):
            raise NotNormalizableError("covariance is not positive definite")
        prec = _sym(np.linalg.inv(cov))
        info = prec @ mean
        _, logdet = np.linalg.slogdet(cov)
        g = -0.5 * float(mean @ info) - 0.5 * (n * _LOG_2PI + logdet)
        return cls(scope, prec, info, g, dims)

    # bookkeeping --------------------------------------------------------

    @property
    def size(self) -> int:
        """Total scalar dimension of the scope."""
        return self.info.shape[0]

    def dim_of(self, var) -> int:
        lo, hi = self._offsets[var]
        return hi - lo

    def var_dims(self) -> dict:
        return dict(zip(self.scope, self.dims))

    def _idx(self, variables: Iterable) -> np.ndarray:
        out = []
        for v in variables:
            lo, hi = self._offsets[v]
            out.extend(range(lo, hi))
        return np.asarray(out, dtype=int)

    def extend(self, scope: Sequence, dims: Mapping | None = None) -> "GaussianFactor":
        """Re-express over ``scope`` (a superset), padding with zero information."""
        scope = tuple(scope)
        missing = [v for v in self.scope if v not in scope]
        if missing:
            raise ScopeError(f"target scope lacks {missing!r}")
        known = self.var_dims()
        if dims is not None:
            for v, d in dims.items():
                if v in known and known[v] != d:
                    raise ScopeError(f"dimension mismatch for {v!r}")
                known.setdefault(v, d)
        if scope == self.scope:
            return self
        if len(set(scope)) != len(scope):
            raise ScopeError(f"duplicate variables in scope {scope!r}")
        new_dims = tuple(known.get(v, 1) for v in scope)
        start, pos = {}, 0
        for v, d in zip(scope, new_dims):
            start[v] = pos
            pos += d
        idx = np.fromiter((start[v] + k for v, d in zip(self.scope, self.dims) for k in range(d)),
                          dtype=int, count=self.size)
        prec = np.zeros((pos, pos))
        prec[np.ix_(idx, idx)] = self.precision
        info = np.zeros(pos)
        info[idx] = self.info
        return GaussianFactor._make(scope, new_dims, prec, info, self.log_scale)

    # algebra ------------------------------------------------------------

    def _union_scope(self, other: "GaussianFactor"):
        mine = self.var_dims()
        for v, d in other.var_dims().items():
            if v in mine and mine[v] != d:
                raise ScopeError(f"dimension mismatch for shared variable {v!r}")
        scope = self.scope + tuple(v for v in other.scope if v not in mine)
        dims = {**other.var_dims(), **mine}
        return scope, dims

    def multiply(self, other: "GaussianFactor") -> "GaussianFactor":
        if other.scope == self.scope and other.dims == self.dims:
            a, b = self, other
        else:
            scope, dims = self._union_scope(other)
            a = self.extend(scope, dims)
            b = other.extend(scope, dims)
        return GaussianFactor._make(a.scope, a.dims, a.precision + b.precision, a.info + b.info,
                                    a.log_scale + b.log_scale)

    def divide(self, other: "GaussianFactor") -> "GaussianFactor":
        extra = [v for v in other.scope if v not in self._offsets]
        if extra:
            raise ScopeError(f"divisor scope not contained in dividend: {extra!r}")
        self._union_scope(other)
        b = other.extend(self.scope, self.var_dims())
        return GaussianFactor._make(self.scope, self.dims, self.precision - b.precision,
                                    self.info - b.info, self.log_scale - b.log_scale)

    __mul__ = multiply
    __truediv__ = divide

    def marginalize(self, keep: Iterable, pseudo: bool = False) -> "GaussianFactor":
        """Integrate out every variable not in ``keep`` (Schur complement).

        With ``pseudo=True`` a non positive-definite elimination block is
        inverted with the Moore-Penrose pseudo-inverse instead of raising;
        the caller is then responsible for flagging the result.
        """
        keep = set(keep)
        extra = keep - set(self.scope)
        if extra:
            raise ScopeError(f"cannot keep variables outside the scope: {sorted(extra)!r}")
        kept = tuple(v for v in self.scope if v in keep)
        gone = tuple(v for v in self.scope if v not in keep)
        if not gone:
            return self
        k = self._idx(kept)
        e = self._idx(gone)
        lkk = self.precision[np.ix_(k, k)]
        lke = self.precision[np.ix_(k, e)]
        lee = self.precision[np.ix_(e, e)]
        hk = self.info[k]
        he = self.info[e]
        chol = _pd_cholesky(lee)
        if chol is not None:
            sol = np.linalg.solve(lee, np.column_stack([lke.T, he]))
            logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        elif pseudo:
            sol = np.linalg.pinv(lee, hermitian=True) @ np.column_stack([lke.T, he])
            ev = np.linalg.eigvalsh(lee)
            logdet = float(np.sum(np.log(np.abs(ev[np.abs(ev) > TAU_PD])))) if ev.size else 0.0
        else:
            raise NonIntegrableError(f"elimination block over {gone!r} is not positive definite")
        a = sol[:, :-1]
        b = sol[:, -1]
        prec = lkk - lke @ a
        info = hk - lke @ b
        g = self.log_scale + 0.5 * (len(e) * _LOG_2PI - logdet + float(he @ b))
        dims = tuple(self.dim_of(v) for v in kept)
        return GaussianFactor._make(kept, dims, _sym(prec), info, g)

    def condition(self, evidence: Mapping) -> "GaussianFactor":
        """Fix some variables to observed values and drop them from the scope."""
        if not evidence:
            return self
        bad = [v for v in evidence if v not in self._offsets]
        if bad:
            raise ScopeError(f"evidence variables not in scope: {bad!r}")
        obs = tuple(v for v in self.scope if v in evidence)
        rest = tuple(v for v in self.scope if v not in evidence)
        x = np.concatenate([np.atleast_1d(np.asarray(evidence[v], dtype=float)).ravel() for v in obs])
        o = self._idx(obs)
        r = self._idx(rest)
        if x.shape[0] != o.shape[0]:
            raise ScopeError("evidence value has the wrong dimension")
        lrr = self.precision[np.ix_(r, r)]
        lro = self.precision[np.ix_(r, o)]
        loo = self.precision[np.ix_(o, o)]
        info = self.info[r] - lro @ x
        g = self.log_scale + float(self.info[o] @ x) - 0.5 * float(x @ loo @ x)
        dims = tuple(self.dim_of(v) for v in rest)
        return GaussianFactor(rest, lrr, info, g, dims)

    # read-out -----------------------------------------------------------

    def is_normalizable(self) -> bool:
        return _is_pd(self.precision)

    def moment_stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean vector and covariance matrix, in scope order."""
        if not self.is_normalizable():
            raise NotNormalizableError(f"factor over {self.scope!r} is not normalizable")
        cov = _sym(np.linalg.inv(self.precision))
        return cov @ self.info, cov

    def mean_of(self, var) -> np.ndarray:
        mean, _ = self.moment_stats()
        return mean[self._idx([var])]

    def same_distribution(self, other: "GaussianFactor", rtol: float = 1e-9, atol: float = 1e-9) -> bool:
        """Parameter equality up to scope order, ignoring the log-scale."""
        if set(self.scope) != set(other.scope):
            return False
        b = other.extend(self.scope)
        return bool(np.allclose(self.precision, b.precision, rtol=rtol, atol=atol)
                    and np.allclose(self.info, b.info, rtol=rtol, atol=atol))

    def __repr__(self) -> str:
        return f"GaussianFactor(scope={self.scope!r}, size={self.size})"


def multiply(f: GaussianFactor, g: GaussianFactor) -> GaussianFactor:
    return f.multiply(g)


def divide(f: GaussianFactor, g: GaussianFactor) -> GaussianFactor:
    return f.divide(g)


def marginalize(f: GaussianFactor, keep: Iterable, pseudo: bool = False) -> GaussianFactor:
    return f.marginalize(keep, pseudo=pseudo)


def condition(f: GaussianFactor, evidence: Mapping) -> GaussianFactor:
    return f.condition(evidence)


def is_normalizable(f: GaussianFactor) -> bool:
    return f.is_normalizable()


def moment_stats(f: GaussianFactor) -> tuple[np.ndarray, np.ndarray]:
    return f.moment_stats()


def product(factors: Iterable[GaussianFactor], scope: Sequence = ()) -> GaussianFactor:
    """Multiply a sequence of factors, starting from the uniform factor over ``scope``."""
    out = GaussianFactor.uniform(scope)
    for f in factors:
        out = out.multiply(f)
    return out
