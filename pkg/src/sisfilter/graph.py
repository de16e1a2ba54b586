"""Undirected graphs, random-graph generators and degree statistics.

Graphs are stored as an edge array plus a node count.  Simple graphs (the
ones SIS dynamics run on) reject self-loops and repeated edges at
construction; the preferential-attachment generator produces a
:class:`MultiGraph`, which keeps repeated edges and self-loops and offers
:meth:`MultiGraph.simple` for the projection used in simulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

__all__ = [
    "Graph",
    "MultiGraph",
    "DegreeDistribution",
    "GraphError",
    "poisson_law",
    "power_law",
    "configuration_model",
    "is_graphical",
    "generate_erdos_renyi",
    "generate_scale_free",
    "generate_preferential_attachment",
    "degree_distribution",
    "write_edgelist",
    "read_edgelist",
    "write_degree_csv",
    "read_degree_csv",
]


class GraphError(ValueError):
    """Invalid graph, generator parameter or degree data."""


def _as_edge_array(edges) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphError(f"edges must have shape (E, 2), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph on nodes ``0..n_nodes-1``.

    Parameters
    ----------
    n_nodes : int
        Number of nodes M (isolated nodes allowed).
    edges : array_like, shape (E, 2)
        Unordered node pairs.  Stored with ``u < v``.
    max_degree : int, optional
        Degree cap L.  Defaults to the largest observed degree.
    """

    n_nodes: int
    edges: np.ndarray
    max_degree: int | None = None

    def __post_init__(self):
        if self.n_nodes < 1:
            raise GraphError("a graph needs at least one node")
        e = _as_edge_array(self.edges).copy()
        if len(e) and (e.min() < 0 or e.max() >= self.n_nodes):
            raise GraphError("edge endpoint outside node range")
        self._check_edges(e)
        object.__setattr__(self, "edges", e)
        e.setflags(write=False)
        deg = self.degrees
        cap = int(deg.max(initial=0)) if self.max_degree is None else int(self.max_degree)
        if deg.max(initial=0) > cap:
            raise GraphError(f"node degree {deg.max()} exceeds max_degree {cap}")
        object.__setattr__(self, "max_degree", cap)

    def _check_edges(self, e: np.ndarray) -> np.ndarray:
        if np.any(e[:, 0] == e[:, 1]):
            raise GraphError("self-loops are not allowed in a simple graph")
        e.sort(axis=1)
        if len(np.unique(e, axis=0)) != len(e):
            raise GraphError("repeated edges are not allowed in a simple graph")
        return e

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes).astype(np.int64)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric sparse adjacency (entry = edge multiplicity)."""
        u, v = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        data = np.ones(len(rows), dtype=np.int64)
        a = sp.csr_matrix((data, (rows, cols)), shape=(self.n_nodes, self.n_nodes))
        a.sum_duplicates()
        return a

    @cached_property
    def degree_counts(self) -> np.ndarray:
        """M(l) for l = 0..L."""
        return np.bincount(self.degrees, minlength=self.max_degree + 1)

    def neighbors(self, node: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[node] : a.indptr[node + 1]]

    def is_connected(self) -> bool:
        n_comp, _ = sp.csgraph.connected_components(self.adjacency, directed=False)
        return n_comp == 1


@dataclass(frozen=True, eq=False)
class MultiGraph(Graph):
    """Graph that keeps repeated edges and self-loops (a self-loop adds 2 to the degree)."""

    def _check_edges(self, e: np.ndarray) -> np.ndarray:
        e.sort(axis=1)
        return e

    def simple(self, max_degree: int | None = None) -> Graph:
        """Simple-graph projection: drop self-loops, collapse repeated edges."""
        e = self.edges[self.edges[:, 0] != self.edges[:, 1]]
        e = np.unique(e, axis=0) if len(e) else e
        return Graph(self.n_nodes, e.copy(), max_degree=max_degree)


@dataclass(frozen=True)
class DegreeDistribution:
    """Probability vector over degrees ``1..L`` (``probs[l-1] = rho(l)``).

    ``n_isolated`` records how many degree-0 nodes were left out.
    """

    probs: np.ndarray
    n_isolated: int = 0
    counts: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).copy()
        if p.ndim != 1 or p.size == 0:
            raise GraphError("degree distribution must be a nonempty vector")
        if np.any(p < 0) or np.any(p > 1):
            raise GraphError("degree probabilities must lie in [0, 1]")
        if abs(p.sum() - 1.0) > 1e-12:
            raise GraphError(f"degree probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def max_degree(self) -> int:
        return len(self.probs)

    @property
    def degrees(self) -> np.ndarray:
        return np.arange(1, len(self.probs) + 1)

    def __getitem__(self, degree: int) -> float:
        if not 1 <= degree <= len(self.probs):
            raise IndexError(degree)
        return float(self.probs[degree - 1])

    def mean(self) -> float:
        return float(self.degrees @ self.probs)

    def is_positive(self) -> bool:
        return bool(np.all(self.probs > 0))

    @classmethod
    def from_weights(cls, weights) -> "DegreeDistribution":
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise GraphError("weights must be nonnegative with positive sum")
        p = w / w.sum()
        # push the rounding residue onto the largest entry so the sum is 1 to the ulp
        p[np.argmax(p)] += 1.0 - p.sum()
        return cls(p)


def poisson_law(lam: float, max_degree: int, include_zero: bool = False) -> np.ndarray:
    """Truncated Poisson pmf on ``1..L`` (or ``0..L``), renormalised."""
    if lam <= 0:
        raise GraphError("Poisson parameter must be positive")
    lo = 0 if include_zero else 1
    l = np.arange(lo, max_degree + 1)
    logw = l * np.log(lam) - lam - gammaln(l + 1)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def power_law(gamma: float, max_degree: int) -> np.ndarray:
    """Normalised ``l**-gamma`` on ``1..L``."""
    if gamma <= 1:
        raise GraphError("power-law exponent must exceed 1")
    if max_degree < 1:
        raise GraphError("max_degree must be >= 1")
    w = np.arange(1, max_degree + 1, dtype=float) ** -gamma
    return w / w.sum()


def _fix_parity(deg: np.ndarray, law: np.ndarray, support: np.ndarray, rng) -> np.ndarray:
    # odd stub total: redraw one random node's degree until the total is even
    while deg.sum() % 2:
        i = rng.integers(len(deg))
        deg[i] = rng.choice(support, p=law)
    return deg


def _draw_graphical(support, law, n_nodes, rng, max_draws: int = 1000) -> np.ndarray:
    # i.i.d. degrees, parity fixed; sequences no simple graph realises are redrawn
    for _ in range(max_draws):
        deg = _fix_parity(rng.choice(support, size=n_nodes, p=law), law, support, rng)
        if is_graphical(deg):
            return deg
    raise GraphError("could not draw a graphical degree sequence; lower max_degree")


def is_graphical(degrees) -> bool:
    """Erdos-Gallai test: can the sequence be realised by a simple graph?"""
    d = np.sort(np.asarray(degrees, dtype=np.int64))[::-1]
    if np.any(d < 0) or d.sum() % 2:
        return False
    n = len(d)
    if n == 0:
        return True
    k = np.arange(1, n + 1)
    lhs = np.cumsum(d)
    # sum_{i>k} min(d_i, k): d is non-increasing, so count entries >= k per k
    asc = d[::-1]
    ge = n - np.searchsorted(asc, k, side="left")  # number of d_i >= k
    # entries with index > k that are >= k contribute k, the rest contribute d_i
    tail_total = lhs[-1] - lhs
    big_after = np.maximum(ge - k, 0)
    small_sum_after = tail_total - _sum_top(d, k, ge)
    rhs = k * (k - 1) + big_after * k + small_sum_after
    return bool(np.all(lhs <= rhs))


def _sum_top(d: np.ndarray, k: np.ndarray, ge: np.ndarray) -> np.ndarray:
    # sum of d_i for k < i <= max(k, ge): the entries after k that are >= k
    c = np.concatenate([[0], np.cumsum(d)])
    hi = np.maximum(ge, k)
    return c[hi] - c[k]


def _match_stubs(deg: np.ndarray, rng, max_rounds: int):
    # one shuffle plus swap repair; None if bad edges remain
    stubs = np.repeat(np.arange(len(deg)), deg)
    rng.shuffle(stubs)
    edges = [tuple(p) for p in np.sort(stubs.reshape(-1, 2), axis=1).tolist()]
    seen: dict[tuple[int, int], int] = {}
    for e in edges:
        seen[e] = seen.get(e, 0) + 1

    def bad(e):
        return e[0] == e[1] or seen[e] > 1

    m = len(edges)
    for _ in range(max_rounds):
        bad_idx = [i for i, e in enumerate(edges) if bad(e)]
        if not bad_idx:
            return edges
        for i in bad_idx:
            if not bad(edges[i]):
                continue
            for _attempt in range(50):
                j = int(rng.integers(m))
                if j == i:
                    continue
                (a, b), (c, d) = edges[i], edges[j]
                if rng.random() < 0.5:
                    c, d = d, c
                e1 = (min(a, c), max(a, c))
                e2 = (min(b, d), max(b, d))
                if e1[0] == e1[1] or e2[0] == e2[1] or e1 == e2:
                    continue
                if seen.get(e1, 0) or seen.get(e2, 0):
                    continue
                for old in (edges[i], edges[j]):
                    seen[old] -= 1
                    if not seen[old]:
                        del seen[old]
                edges[i], edges[j] = e1, e2
                seen[e1] = 1
                seen[e2] = 1
                break
    return None


def configuration_model(degrees, rng=None, max_degree: int | None = None,
                        max_rounds: int = 1000, max_restarts: int = 100) -> Graph:
    """Simple graph with the given degree sequence by stub matching.

    Stubs are paired uniformly at random; each self-loop or repeated edge is
    then removed by a degree-preserving double-edge swap with a uniformly
    chosen edge, so the degree sequence is realised exactly.  If the repair
    stalls the stubs are reshuffled, up to ``max_restarts`` times.
    """
    rng = np.random.default_rng(rng)
    deg = np.asarray(degrees, dtype=np.int64)
    if np.any(deg < 0):
        raise GraphError("negative degree")
    if deg.sum() % 2:
        raise GraphError("degree sequence has odd stub sum")
    if not is_graphical(deg):
        raise GraphError("degree sequence is not graphical (no simple graph realises it)")
    n = len(deg)
    if deg.sum() == 0:
        return Graph(n, np.empty((0, 2), dtype=np.int64), max_degree=max_degree)
    # the swap repair can stall on tiny dense sequences; reshuffle and retry
    for _restart in range(max_restarts):
        edges = _match_stubs(deg, rng, max_rounds)
        if edges is not None:
            break
    else:
        raise GraphError("could not realise degree sequence as a simple graph")
    return Graph(n, np.array(edges, dtype=np.int64), max_degree=max_degree)


def generate_erdos_renyi(n_nodes: int, lam: float, seed=None,
                         max_degree: int | None = None) -> Graph:
    """Configuration-model graph with i.i.d. Poisson(lam) degrees.

    Degrees are drawn on ``0..L`` (``L`` defaults to a cap far in the Poisson
    tail, at most ``n_nodes - 1``) and paired by :func:`configuration_model`.
    A draw with an odd stub sum has one node's degree redrawn; a draw that
    no simple graph realises is redrawn whole.  Degree-0 nodes stay
    isolated.
    """
    if n_nodes < 2:
        raise GraphError("n_nodes must be >= 2")
    if lam <= 0:
        raise GraphError("lambda must be positive")
    rng = np.random.default_rng(seed)
    if max_degree is None:
        max_degree = min(int(np.ceil(lam + 10 * np.sqrt(lam) + 10)), n_nodes - 1)
    support = np.arange(0, max_degree + 1)
    law = poisson_law(lam, max_degree, include_zero=True)
    deg = _draw_graphical(support, law, n_nodes, rng)
    return configuration_model(deg, rng, max_degree=max_degree)


def generate_scale_free(n_nodes: int, gamma: float, max_degree: int, seed=None) -> Graph:
    """Configuration-model graph with degrees drawn from ``l**-gamma`` on ``1..L``."""
    if n_nodes < 2:
        raise GraphError("n_nodes must be >= 2")
    if gamma <= 1:
        raise GraphError("gamma must exceed 1")
    if max_degree < 2:
        raise GraphError("max_degree must be >= 2")
    if max_degree >= n_nodes:
        raise GraphError("max_degree must be below n_nodes for a simple graph")
    rng = np.random.default_rng(seed)
    support = np.arange(1, max_degree + 1)
    law = power_law(gamma, max_degree)
    deg = _draw_graphical(support, law, n_nodes, rng)
    return configuration_model(deg, rng, max_degree=max_degree)


def generate_preferential_attachment(p: float, g0: Graph, steps: int, seed=None) -> MultiGraph:
    """Grow ``g0`` by ``steps`` vertex/edge steps of the preferential-attachment model.

    With probability ``p`` a new vertex joins, attached to an existing vertex
    chosen proportionally to degree; otherwise a new edge joins two vertices
    chosen independently, each proportionally to degree.  Repeated edges and
    self-loops from edge steps are kept.
    """
    if not 0 <= p <= 1:
        raise GraphError("p must lie in [0, 1]")
    if g0.n_edges == 0:
        raise GraphError("initial graph needs at least one edge")
    if steps < 0:
        raise GraphError("steps must be nonnegative")
    rng = np.random.default_rng(seed)
    # every edge contributes both endpoints; sampling a uniform endpoint is
    # sampling a node proportionally to its degree
    endpoints = np.empty(2 * (g0.n_edges + steps), dtype=np.int64)
    endpoints[: 2 * g0.n_edges] = g0.edges.ravel()
    n_end = 2 * g0.n_edges
    n_nodes = g0.n_nodes
    is_vertex = rng.random(steps) < p
    for vertex_step in is_vertex:
        if vertex_step:
            target = endpoints[rng.integers(n_end)]
            endpoints[n_end : n_end + 2] = (n_nodes, target)
            n_nodes += 1
        else:
            u = endpoints[rng.integers(n_end)]
            v = endpoints[rng.integers(n_end)]
            endpoints[n_end : n_end + 2] = (u, v)
        n_end += 2
    return MultiGraph(n_nodes, endpoints.reshape(-1, 2).copy())


def degree_distribution(g: Graph) -> DegreeDistribution:
    """Empirical rho(l) = M(l)/M over non-isolated nodes, l = 1..L."""
    counts = g.degree_counts
    n_isolated = int(counts[0])
    body = counts[1:]
    total = body.sum()
    if total == 0:
        raise GraphError("all nodes are isolated; degree distribution undefined")
    dist = DegreeDistribution.from_weights(body)
    return DegreeDistribution(dist.probs, n_isolated=n_isolated, counts=body.copy())


# --------------------------------------------------------------------- I/O


def write_edgelist(g: Graph, path) -> None:
    lines = [f"# nodes={g.n_nodes}"]
    lines += [f"{u} {v}" for u, v in g.edges.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edgelist(path, multigraph: bool = False) -> Graph:
    n_nodes = None
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line[1:].strip().startswith("nodes="):
                n_nodes = int(line[1:].strip().split("=", 1)[1])
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"{path}:{lineno}: expected 'u v', got {line!r}")
        edges.append((int(parts[0]), int(parts[1])))
    if n_nodes is None:
        n_nodes = 1 + max((max(e) for e in edges), default=0)
    cls = MultiGraph if multigraph else Graph
    return cls(n_nodes, np.array(edges, dtype=np.int64).reshape(-1, 2))


def write_degree_csv(dist: DegreeDistribution, path) -> None:
    rows = ["degree,prob"] + [f"{l},{p!r}" for l, p in zip(dist.degrees, dist.probs.tolist())]
    Path(path).write_text("\n".join(rows) + "\n")


def read_degree_csv(path) -> DegreeDistribution:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    degrees = data[:, 0].astype(int)
    if np.any(degrees < 1):
        raise GraphError("degrees must be >= 1")
    probs = np.zeros(degrees.max())
    probs[degrees - 1] = data[:, 1]
    return DegreeDistribution(probs)
