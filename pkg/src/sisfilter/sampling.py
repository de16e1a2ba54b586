"""Noisy observations of the infected degree distribution.

Two sampling schemes feed the Gaussian observation model ``y = C x + v``:
uniform sampling within each degree class and respondent-driven sampling
(a weighted random walk with inverse-stationary-probability reweighting).
Degrees without data are row-deleted from ``C`` rather than reported as 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .graph import Graph
from .sis import infected_fraction_by_degree

__all__ = [
    "Observation",
    "WalkConfig",
    "SamplingError",
    "R_MIN",
    "uniform_sample",
    "rds_sample",
    "observe",
    "binomial_observation",
    "proportional_sample_sizes",
    "is_bipartite",
    "write_observations_csv",
    "write_walk_log",
    "exact_observation",
]

R_MIN = 1e-6


class SamplingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Observation:
    """One observation epoch.

    ``y``, ``c_matrix`` and ``r_cov`` cover only the observed degrees
    (``degrees``, 1-based).  ``missing`` has one entry per degree
    ``1..L``.
    """

    y: np.ndarray
    c_matrix: np.ndarray
    r_cov: np.ndarray
    sample_sizes: np.ndarray
    degrees: np.ndarray
    missing: np.ndarray
    warnings: tuple = ()
    walk: np.ndarray | None = None

    @property
    def n_degrees(self) -> int:
        return self.c_matrix.shape[1]

    def full_vector(self, fill=np.nan) -> np.ndarray:
        """Observed values placed at their degree, ``fill`` elsewhere."""
        out = np.full(self.n_degrees, fill, dtype=float)
        out[self.degrees - 1] = self.y
        return out


def _assemble(est, var, gamma, observed, r_min, r_override, warnings=(), walk=None) -> Observation:
    L = len(est)
    idx = np.flatnonzero(observed)
    C = np.eye(L)[idx]
    if r_override is not None:
        r = np.asarray(r_override, dtype=float)
        if r.ndim == 0:
            R = float(r) * np.eye(len(idx))
        elif r.shape == (L, L):
            R = r[np.ix_(idx, idx)]
        elif r.shape == (L,):
            R = np.diag(r[idx])
        else:
            raise SamplingError("R override must be a scalar, a length-L vector or an L x L matrix")
    else:
        R = np.diag(np.maximum(np.asarray(var, dtype=float)[idx], r_min))
    R = 0.5 * (R + R.T)
    return Observation(
        y=np.asarray(est, dtype=float)[idx],
        c_matrix=C,
        r_cov=R,
        sample_sizes=np.asarray(gamma),
        degrees=idx + 1,
        missing=~np.asarray(observed, dtype=bool),
        warnings=tuple(warnings),
        walk=walk,
    )


def uniform_sample(g: Graph, state, gamma, seed=None, r_min: float = R_MIN,
                   r_override=None, max_degree: int | None = None) -> Observation:
    """Uniform with-replacement sampling of ``gamma[l-1]`` nodes from each degree class.

    A class with ``gamma(l) >= M(l)`` is read exactly (census) and gets
    variance 0, which the ``r_min`` floor turns into ``r_min``.  Classes with
    ``gamma(l) = 0`` are reported missing.
    """
    rng = np.random.default_rng(seed)
    L = g.max_degree if max_degree is None else max_degree
    gamma = np.broadcast_to(np.asarray(gamma, dtype=int), (L,)).copy()
    if np.any(gamma < 0):
        raise SamplingError("sample sizes must be nonnegative")
    s = np.asarray(state, dtype=bool)
    deg = g.degrees
    counts = np.bincount(deg, minlength=L + 1)[1 : L + 1]
    est = np.zeros(L)
    var = np.zeros(L)
    observed = gamma > 0
    for l in range(1, L + 1):
        n = gamma[l - 1]
        if n == 0:
            continue
        if counts[l - 1] == 0:
            raise SamplingError(f"degree class {l} is empty but gamma({l}) = {n}")
        nodes = np.flatnonzero(deg == l)
        if n >= len(nodes):
            est[l - 1] = s[nodes].mean()
            continue
        hits = s[rng.choice(nodes, size=n, replace=True)].mean()
        est[l - 1] = hits
        var[l - 1] = hits * (1 - hits) / n
    return _assemble(est, var, gamma, observed, r_min, r_override)


@dataclass(frozen=True)
class WalkConfig:
    """Random-walk sampler settings.

    ``weights`` is a symmetric sparse matrix on the graph's edges or
    ``None`` for unit weights.
    """

    walk_length: int
    burn_in: int = 0
    weights: object = None
    seed: object = None
    n_batches: int = 20
    r_min: float = R_MIN

    def __post_init__(self):
        if not (self.walk_length > self.burn_in >= 0):
            raise SamplingError("need walk_length > burn_in >= 0")
        if self.n_batches < 2:
            raise SamplingError("batch means need at least 2 batches")


def _weight_matrix(g: Graph, weights) -> sp.csr_matrix:
    if weights is None:
        return g.adjacency.astype(float).tocsr()
    W = sp.csr_matrix(weights, dtype=float)
    if W.shape != (g.n_nodes, g.n_nodes):
        raise SamplingError("weight matrix shape does not match the graph")
    if abs(W - W.T).max() > 1e-12 if W.nnz else False:
        raise SamplingError("weights must be symmetric (undirected network)")
    if W.nnz and W.data.min() < 0:
        raise SamplingError("weights must be nonnegative")
    return W


def is_bipartite(adj: sp.spmatrix, nodes=None) -> bool:
    """Two-colouring test on the components containing ``nodes`` (default all)."""
    adj = sp.csr_matrix(adj)
    n = adj.shape[0]
    depth = np.full(n, -1)
    starts = range(n) if nodes is None else nodes
    for s0 in starts:
        if depth[s0] >= 0:
            continue
        order, pred = breadth_first_order(adj, s0, directed=False, return_predecessors=True)
        depth[s0] = 0
        for v in order[1:]:
            depth[v] = depth[pred[v]] + 1
    coo = adj.tocoo()
    keep = (depth[coo.row] >= 0) & (coo.row != coo.col)
    if np.any(coo.row == coo.col):
        return False
    return bool(np.all((depth[coo.row[keep]] - depth[coo.col[keep]]) % 2 == 1))


def _walk(W: sp.csr_matrix, start: int, length: int, rng) -> np.ndarray:
    indptr, indices, data = W.indptr, W.indices, W.data
    cum = np.empty_like(data)
    for i in range(W.shape[0]):
        lo, hi = indptr[i], indptr[i + 1]
        if hi > lo:
            cum[lo:hi] = np.cumsum(data[lo:hi])
    u = rng.random(length)
    path = np.empty(length + 1, dtype=np.int64)
    path[0] = v = start
    for t in range(length):
        lo, hi = indptr[v], indptr[v + 1]
        if hi == lo:
            raise SamplingError(f"walk reached node {v} with no outgoing weight")
        k = np.searchsorted(cum[lo:hi], u[t] * cum[hi - 1], side="right")
        v = indices[lo + min(k, hi - lo - 1)]
        path[t + 1] = v
    return path


def rds_sample(g: Graph, state, cfg: WalkConfig, max_degree: int | None = None,
               start: int | None = None) -> Observation:
    """Respondent-driven sampling estimate of x(l).

    The walk moves ``i -> j`` with probability ``W_ij / sum_j W_ij``; visits
    are reweighted by ``1/pi`` with ``pi(i) proportional to sum_j W_ij``.
    ``R`` comes from non-overlapping batch means.  Degrees never visited are
    flagged missing.  Disconnected or bipartite walk components add a
    warning to the observation instead of raising.
    """
    rng = np.random.default_rng(cfg.seed)
    L = g.max_degree if max_degree is None else max_degree
    W = _weight_matrix(g, cfg.weights)
    strength = np.asarray(W.sum(axis=1)).ravel()
    if strength.sum() <= 0:
        raise SamplingError("graph has no weighted edges to walk on")
    if start is None:
        start = int(rng.choice(np.flatnonzero(strength > 0)))
    warnings = []
    n_comp, labels = connected_components(W, directed=False)
    active = strength > 0
    if len(np.unique(labels[active])) > 1:
        warnings.append("disconnected")
    if is_bipartite(W, [start]):
        warnings.append("bipartite")

    path = _walk(W, start, cfg.walk_length, rng)
    visits = path[cfg.burn_in + 1 :]
    s = np.asarray(state, dtype=bool)
    deg = g.degrees[visits]
    inf = s[visits].astype(float)
    w = 1.0 / (strength[visits] / strength.sum())
    keep = (deg >= 1) & (deg <= L)

    def ratio(mask):
        num = np.bincount(deg[mask], weights=(w * inf)[mask], minlength=L + 1)[1:]
        den = np.bincount(deg[mask], weights=w[mask], minlength=L + 1)[1:]
        with np.errstate(invalid="ignore", divide="ignore"):
            return num / den, den > 0

    est, observed = ratio(keep)
    n_visits = np.bincount(deg[keep], minlength=L + 1)[1 : L + 1]
    batch = np.array_split(np.arange(len(visits)), cfg.n_batches)
    estimates = []
    for b in batch:
        mask = np.zeros(len(visits), dtype=bool)
        mask[b] = True
        e, ok = ratio(mask & keep)
        estimates.append(np.where(ok, e, np.nan))
    estimates = np.array(estimates)
    n_ok = np.sum(~np.isnan(estimates), axis=0)
    var = np.zeros(L)
    ok = n_ok >= 2
    var[ok] = np.nanvar(estimates[:, ok], axis=0, ddof=1) / n_ok[ok]
    est = np.where(observed, est, 0.0)
    return _assemble(est, np.nan_to_num(var), n_visits, observed, cfg.r_min, None,
                     warnings, walk=path)


def observe(g: Graph, state, method: str, config: dict | None = None) -> Observation:
    """Dispatch to :func:`uniform_sample` or :func:`rds_sample`.

    ``config`` keys: ``gamma``, ``seed``, ``r_min``, ``r_override`` for
    uniform; the :class:`WalkConfig` fields for rds.
    """
    config = dict(config or {})
    if method == "uniform":
        gamma = config.pop("gamma", None)
        if gamma is None:
            gamma = g.degree_counts[1:]
        return uniform_sample(g, state, gamma, **config)
    if method == "rds":
        max_degree = config.pop("max_degree", None)
        return rds_sample(g, state, WalkConfig(**config), max_degree=max_degree)
    raise SamplingError(f"unknown sampling method {method!r}; expected 'uniform' or 'rds'")


def proportional_sample_sizes(rho, total: int) -> np.ndarray:
    """gamma(l) proportional to rho(l), at least 1 each, summing to about ``total``."""
    p = np.asarray(getattr(rho, "probs", rho), dtype=float)
    return np.maximum(1, np.round(total * p)).astype(int)


def binomial_observation(x, gamma, seed=None, r_min: float = R_MIN, r_override=None) -> Observation:
    """Sampling at the population level: ``y(l) = Binomial(gamma(l), x(l)) / gamma(l)``.

    Equivalent to :func:`uniform_sample` with replacement when only the
    fractions ``x`` are known (no node-level state).
    """
    rng = np.random.default_rng(seed)
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=int), x.shape).copy()
    if np.any(gamma < 0):
        raise SamplingError("sample sizes must be nonnegative")
    observed = gamma > 0
    y = rng.binomial(gamma, x) / np.maximum(gamma, 1)
    var = y * (1 - y) / np.maximum(gamma, 1)
    return _assemble(y, var, gamma, observed, r_min, r_override)


def write_observations_csv(observations, path) -> None:
    """CSV ``t,degree,y,r_ll,gamma`` with one row per observed degree."""
    rows = ["t,degree,y,r_ll,gamma"]
    for t, obs in enumerate(observations):
        if obs is None:
            continue
        r = np.diag(obs.r_cov)
        for j, l in enumerate(obs.degrees):
            rows.append(f"{t},{l},{float(obs.y[j])!r},{float(r[j])!r},{int(obs.sample_sizes[l - 1])}")
    Path(path).write_text("\n".join(rows) + "\n")


def write_walk_log(g: Graph, state, obs: Observation, path) -> None:
    """CSV ``step,node,degree,state`` for an RDS observation."""
    if obs.walk is None:
        raise SamplingError("observation carries no walk")
    s = np.asarray(state, dtype=bool)
    rows = ["step,node,degree,state"]
    rows += [f"{t},{v},{g.degrees[v]},{int(s[v])}" for t, v in enumerate(obs.walk.tolist())]
    Path(path).write_text("\n".join(rows) + "\n")


def exact_observation(g: Graph, state, r_min: float = R_MIN) -> Observation:
    """Census of every degree class (``R = r_min I``)."""
    x = infected_fraction_by_degree(g, state)
    counts = g.degree_counts[1:]
    return _assemble(x, np.zeros_like(x), counts, counts > 0, r_min, None)
