"""Agent-based SIS dynamics on a fixed graph.

Node states are boolean arrays (``True`` = infected).  A state may also be
a 2-D ``(n_nodes, n_replicas)`` array, in which case every replica is
advanced with independent randomness in one vectorised step.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import DegreeDistribution, Graph

__all__ = [
    "TransitionKernel",
    "KernelError",
    "step_agents",
    "infected_fraction_by_degree",
    "infected_link_probability",
    "simulate_sis",
    "simulate_sis_thinned",
    "random_initial_state",
    "write_kernel_csv",
    "read_kernel_csv",
    "write_trajectory_csv",
]


class KernelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """Per-(degree, infected-neighbour-count) flip probabilities.

    ``p12[l, a]`` is the infected -> susceptible probability and ``p21[l, a]``
    the susceptible -> infected probability for a degree-``l`` node with
    ``a`` infected neighbours (entries with ``a > l`` are unused).  The
    per-step flip probability is ``lam * p21`` for infection and
    ``lam * p12`` for recovery; with ``scale_recovery=False`` recovery uses
    ``p12`` unscaled, so ``lam`` acts as a pure infection rate.
    """

    p12: np.ndarray
    p21: np.ndarray
    lam: float = 1.0
    scale_recovery: bool = True

    def __post_init__(self):
        p12 = np.array(self.p12, dtype=float)
        p21 = np.array(self.p21, dtype=float)
        if p12.shape != p21.shape or p12.ndim != 2 or p12.shape[0] != p12.shape[1]:
            raise KernelError("p12 and p21 must be square (L+1, L+1) tables of equal shape")
        mask = np.tril(np.ones(p12.shape, dtype=bool))
        p12[~mask] = 0.0
        p21[~mask] = 0.0
        for name, t in (("p12", p12), ("p21", p21)):
            if np.any(t < 0) or np.any(t > 1) or not np.all(np.isfinite(t)):
                raise KernelError(f"{name} entries must lie in [0, 1]")
        if self.lam < 0:
            raise KernelError("lambda must be nonnegative")
        if np.any(self.lam * p21 > 1 + 1e-12):
            raise KernelError("lambda * p21 exceeds 1 for some (l, a)")
        if self.scale_recovery and np.any(self.lam * p12 > 1 + 1e-12):
            raise KernelError("lambda * p12 exceeds 1 for some (l, a)")
        p12.setflags(write=False)
        p21.setflags(write=False)
        object.__setattr__(self, "p12", p12)
        object.__setattr__(self, "p21", p21)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def max_degree(self) -> int:
        return self.p12.shape[0] - 1

    @property
    def infection(self) -> np.ndarray:
        """Effective per-step infection probability table ``lam * p21``."""
        return np.minimum(self.lam * self.p21, 1.0)

    @property
    def recovery(self) -> np.ndarray:
        """Effective per-step recovery probability table."""
        if self.scale_recovery:
            return np.minimum(self.lam * self.p12, 1.0)
        return self.p12

    def with_lambda(self, lam: float) -> "TransitionKernel":
        return TransitionKernel(self.p12, self.p21, lam, self.scale_recovery)

    @classmethod
    def constant(cls, max_degree: int, p12: float, p21: float, lam: float = 1.0,
                 scale_recovery: bool = True) -> "TransitionKernel":
        n = max_degree + 1
        return cls(np.full((n, n), p12), np.full((n, n), p21), lam, scale_recovery)

    @classmethod
    def from_functions(cls, max_degree: int, p12, p21, lam: float = 1.0,
                       scale_recovery: bool = True) -> "TransitionKernel":
        """Build tables from callables ``p(l, a)``."""
        n = max_degree + 1
        t12 = np.zeros((n, n))
        t21 = np.zeros((n, n))
        for l in range(n):
            for a in range(l + 1):
                t12[l, a] = p12(l, a)
                t21[l, a] = p21(l, a)
        return cls(t12, t21, lam, scale_recovery)

    @classmethod
    def random(cls, max_degree: int, rng=None, complex_degree: int | None = None,
               lam: float = 1.0, spontaneous: bool = True,
               scale_recovery: bool = True) -> "TransitionKernel":
        """Random kernel with i.i.d. uniform entries.

        Degrees above ``complex_degree`` share one constant value for both
        tables, which keeps the mean-field polynomial degree at
        ``complex_degree + 1``.  ``spontaneous=False`` zeroes ``p21[l, 0]``.
        """
        rng = np.random.default_rng(rng)
        n = max_degree + 1
        p12 = rng.random((n, n))
        p21 = rng.random((n, n))
        if complex_degree is not None and complex_degree < max_degree:
            kappa = rng.random()
            p12[complex_degree + 1 :] = kappa
            p21[complex_degree + 1 :] = kappa
        if not spontaneous:
            p21[:, 0] = 0.0
        return cls(p12, p21, lam, scale_recovery)


def _check_kernel(g: Graph, kernel: TransitionKernel) -> None:
    if g.degrees.max(initial=0) > kernel.max_degree:
        raise KernelError(
            f"graph has degree {g.degrees.max()} beyond kernel max degree {kernel.max_degree}"
        )


def step_agents(g: Graph, kernel: TransitionKernel, state: np.ndarray, rng) -> np.ndarray:
    """One synchronous SIS step.

    Every node reads its degree ``l`` and infected-neighbour count ``a`` from
    the time-``n`` snapshot and flips with probability ``lam * P_ij(l, a)``.
    """
    _check_kernel(g, kernel)
    rng = np.random.default_rng(rng)
    s = np.asarray(state, dtype=bool)
    if s.shape[0] != g.n_nodes:
        raise KernelError("state length does not match the graph")
    a = g.adjacency @ s.astype(np.int64)
    deg = g.degrees if s.ndim == 1 else g.degrees[:, None]
    p_flip = np.where(s, kernel.recovery[deg, a], kernel.infection[deg, a])
    return s ^ (rng.random(s.shape) < p_flip)


def _degree_indicator(g: Graph, max_degree: int) -> sp.csr_matrix:
    deg = g.degrees
    keep = (deg >= 1) & (deg <= max_degree)
    rows = deg[keep] - 1
    cols = np.flatnonzero(keep)
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(max_degree, g.n_nodes))


def infected_fraction_by_degree(g: Graph, state: np.ndarray,
                                max_degree: int | None = None) -> np.ndarray:
    """x(l) = (# infected degree-l nodes) / M(l) for l = 1..L.

    Degree classes with no nodes report 0.  For a 2-D state the result has
    shape ``(n_replicas, L)``.
    """
    L = g.max_degree if max_degree is None else max_degree
    s = np.asarray(state)
    ind = _degree_indicator(g, L)
    m = g.degree_counts[1 : L + 1].astype(float)
    if len(m) < L:
        m = np.pad(m, (0, L - len(m)))
    infected = np.asarray(ind @ s.astype(float))
    safe = np.where(m > 0, m, 1.0)
    if s.ndim > 1:
        return (infected / safe[:, None]).T
    return infected / safe


def infected_link_probability(x, rho) -> float:
    """alpha = sum_l l rho(l) x(l) / sum_l l rho(l)."""
    p = rho.probs if isinstance(rho, DegreeDistribution) else np.asarray(rho, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.shape[0]:
        raise ValueError("x and rho must have the same length")
    l = np.arange(1, len(p) + 1)
    denom = float(l @ p)
    if denom == 0:
        raise ValueError("sum_l l rho(l) is zero")
    return (x @ (l * p)) / denom


def random_initial_state(g: Graph, fractions, rng=None, n_replicas: int | None = None) -> np.ndarray:
    """Infect exactly ``round(x0(l) * M(l))`` uniformly chosen nodes per degree class."""
    rng = np.random.default_rng(rng)
    x0 = np.asarray(fractions, dtype=float)
    if np.isscalar(fractions) or x0.ndim == 0:
        x0 = np.full(g.max_degree, float(x0))
    deg = g.degrees
    shape = (g.n_nodes,) if n_replicas is None else (g.n_nodes, n_replicas)
    s = np.zeros(shape, dtype=bool)
    for l in range(1, g.max_degree + 1):
        nodes = np.flatnonzero(deg == l)
        if len(nodes) == 0:
            continue
        k = int(round(x0[l - 1] * len(nodes)))
        if n_replicas is None:
            s[rng.choice(nodes, size=k, replace=False)] = True
        else:
            for r in range(n_replicas):
                s[rng.choice(nodes, size=k, replace=False), r] = True
    return s


def simulate_sis(g: Graph, kernel: TransitionKernel, initial: np.ndarray, horizon: int,
                 seed=None, return_states: bool = False):
    """Run ``horizon`` synchronous steps; returns the ``(horizon+1, L)`` x-trajectory.

    With ``return_states=True`` also returns the ``(horizon+1, n_nodes)``
    node-state history.  A 2-D ``initial`` runs replicas in parallel and the
    trajectory gains a replica axis: ``(horizon+1, n_replicas, L)``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    _check_kernel(g, kernel)
    rng = np.random.default_rng(seed)
    s = np.asarray(initial, dtype=bool).copy()
    traj = [infected_fraction_by_degree(g, s)]
    states = [s] if return_states else None
    for _ in range(horizon):
        s = step_agents(g, kernel, s, rng)
        traj.append(infected_fraction_by_degree(g, s))
        if return_states:
            states.append(s)
    traj = np.array(traj)
    if return_states:
        return traj, np.array(states)
    return traj


def _bernoulli_positions(total: int, prob: float, rng) -> np.ndarray:
    """Indices in ``range(total)``, each kept independently with probability ``prob``."""
    if prob >= 1.0:
        return np.arange(total)
    out = []
    start = -1
    while True:
        k = int(total * prob + 5 * np.sqrt(total * prob) + 16)
        pos = start + np.cumsum(rng.geometric(prob, size=k))
        out.append(pos[pos < total])
        if pos[-1] >= total:
            break
        start = int(pos[-1])
    return np.concatenate(out)


def simulate_sis_thinned(g: Graph, kernel: TransitionKernel, initial: np.ndarray, horizon: int,
                         seed=None) -> np.ndarray:
    """Same process and output as :func:`simulate_sis`, sampled by thinning.

    Each node-replica is proposed with probability ``p_max`` (the largest
    flip probability in the kernel) and the proposal is accepted with
    probability ``p / p_max``, so nodes flip independently with their own
    probability ``p`` exactly as in :func:`step_agents`.  Neighbour and
    class counts are updated incrementally, so a step costs time
    proportional to the number of proposals.  Worth it when flips are rare.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    _check_kernel(g, kernel)
    rng = np.random.default_rng(seed)
    s = np.asarray(initial, dtype=bool)
    squeeze = s.ndim == 1
    s = (s[:, None] if squeeze else s).copy()
    n, R = s.shape
    if n != g.n_nodes:
        raise KernelError("state length does not match the graph")
    L = g.max_degree
    deg = g.degrees
    adj = g.adjacency
    a = np.asarray(adj @ s.astype(np.int64))
    table = np.stack([kernel.infection, kernel.recovery])
    p_max = float(table.max())
    m_l = g.degree_counts[1 : L + 1].astype(float)
    safe = np.where(m_l > 0, m_l, 1.0)
    cls = np.zeros((R, L + 1))
    np.add.at(cls, (np.tile(np.arange(R), n), np.repeat(deg, R)), s.ravel())
    traj = np.empty((horizon + 1, R, L))
    traj[0] = cls[:, 1:] / safe
    indptr, indices = adj.indptr, adj.indices
    for t in range(1, horizon + 1):
        if p_max > 0:
            pos = _bernoulli_positions(n * R, p_max, rng)
            v, r = np.divmod(pos, R)
            p = table[s[v, r].astype(np.int64), deg[v], a[v, r]]
            hit = rng.random(len(pos)) * p_max < p
            v, r = v[hit], r[hit]
            if len(v):
                sign = np.where(s[v, r], -1, 1)
                s[v, r] ^= True
                np.add.at(cls, (r, deg[v]), sign)
                counts = indptr[v + 1] - indptr[v]
                if counts.sum():
                    nbr = indices[np.concatenate([np.arange(indptr[u], indptr[u + 1]) for u in v])]
                    np.add.at(a, (nbr, np.repeat(r, counts)), np.repeat(sign, counts))
        traj[t] = cls[:, 1:] / safe
    return traj[:, 0] if squeeze else traj


# --------------------------------------------------------------------- I/O


def write_kernel_csv(kernel: TransitionKernel, path) -> None:
    rows = ["l,a,p12,p21"]
    for l in range(kernel.max_degree + 1):
        for a in range(l + 1):
            rows.append(f"{l},{a},{float(kernel.p12[l, a])!r},{float(kernel.p21[l, a])!r}")
    Path(path).write_text("\n".join(rows) + "\n")


def read_kernel_csv(path, lam: float = 1.0, scale_recovery: bool = True) -> TransitionKernel:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    l = data[:, 0].astype(int)
    a = data[:, 1].astype(int)
    if np.any(a > l) or np.any(a < 0):
        raise KernelError("kernel rows need 0 <= a <= l")
    n = l.max() + 1
    p12 = np.zeros((n, n))
    p21 = np.zeros((n, n))
    p12[l, a] = data[:, 2]
    p21[l, a] = data[:, 3]
    return TransitionKernel(p12, p21, lam, scale_recovery)


def write_trajectory_csv(traj: np.ndarray, path, column: str = "x") -> None:
    rows = [f"t,degree,{column}"]
    for t, x in enumerate(np.asarray(traj)):
        rows += [f"{t},{l},{v!r}" for l, v in enumerate(x.tolist(), 1)]
    Path(path).write_text("\n".join(rows) + "\n")
