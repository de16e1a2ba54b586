"""Bayesian filters for the infected degree distribution.

Fast time scale: a Gaussian filter for the polynomial mean-field model.  The
prediction step uses exact Gaussian moments of the polynomial, so the only
approximation is the Gaussian form of the belief itself.  Each component
has the form ``f_l(x) = a_l(alpha) + x_l b_l(alpha)`` with ``alpha = phi' x``,
so conditioning on ``alpha`` reduces every moment to univariate Gaussian
moments ``E[t^k] = (k-1)!! s^k``.

Slow time scale: an HMM filter over the evolving degree distribution.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np
from scipy.special import comb
from scipy.stats import norm

from .meanfield import CapacityError, DenseTensors, PolynomialDynamics

__all__ = [
    "FilterState",
    "FilterError",
    "HmmBelief",
    "TrackResult",
    "MAX_MOMENT_DEGREE",
    "gaussian_poly_moments",
    "gaussian_product_moment",
    "tensor_moments",
    "predict",
    "update",
    "track",
    "default_initial_state",
    "hmm_update",
    "gaussian_likelihood",
    "two_timescale_track",
    "TwoTimescaleReport",
    "write_filter_log",
    "write_hmm_log",
]

MAX_MOMENT_DEGREE = 8


class FilterError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class FilterState:
    """Gaussian belief (mean, covariance); the covariance is re-symmetrised on construction."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise FilterError("covariance shape does not match the mean")
        cov = 0.5 * (cov + cov.T)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.cov).min())


def default_initial_state(n_degrees: int, rho=None, variance: float = 0.1) -> FilterState:
    """Mean 0.5 in every degree class and covariance ``variance * I``.

    ``rho`` is accepted for interface symmetry; the default mean does not depend on it.
    """
    return FilterState(np.full(n_degrees, 0.5), variance * np.eye(n_degrees))


def _gaussian_moments_1d(var: float, order: int) -> np.ndarray:
    m = np.zeros(order + 1)
    m[0] = 1.0
    for k in range(2, order + 1, 2):
        m[k] = m[k - 2] * (k - 1) * var
    return m


def _shift_matrix(shift: float, n: int) -> np.ndarray:
    """T with T[j, k] = C(k, j) shift^(k-j): coefficients in alpha -> coefficients in alpha - shift."""
    j = np.arange(n)[:, None]
    k = np.arange(n)[None, :]
    with np.errstate(invalid="ignore"):
        pw = np.where(k >= j, float(shift) ** np.clip(k - j, 0, None), 0.0)
    return np.where(k >= j, comb(k, j), 0.0) * pw


def gaussian_poly_moments(dyn: PolynomialDynamics, belief: FilterState,
                          max_degree: int = MAX_MOMENT_DEGREE):
    """E[f(x)] and Cov[f(x)] for x ~ N(belief.mean, belief.cov), computed exactly.

    Raises
    ------
    CapacityError
        If the polynomial degree of ``f`` exceeds ``max_degree``.
    """
    if dyn.degree > max_degree:
        raise CapacityError(
            f"dynamics polynomial has degree {dyn.degree}; moment engine limit is {max_degree}"
        )
    mu = belief.mean
    H = belief.cov
    a_alpha, b_alpha = dyn.affine_split()
    D = a_alpha.shape[1] - 1
    phi = dyn.phi
    mu_a = float(phi @ mu)
    Hphi = H @ phi
    s2 = float(phi @ Hphi)
    if s2 > 1e-300:
        k = Hphi / s2
        S = H - s2 * np.outer(k, k)
    else:
        k = np.zeros_like(mu)
        S = H
        s2 = 0.0
    T = _shift_matrix(mu_a, D + 1)
    A = a_alpha @ T.T
    B = b_alpha @ T.T
    # f_l = h_l(t) + u_l b_l(t), u = x - mu - k t independent of t with covariance S
    h = np.zeros((len(mu), D + 2))
    h[:, : D + 1] = A + mu[:, None] * B
    h[:, 1:] += k[:, None] * B
    mom = _gaussian_moments_1d(s2, 2 * D + 2)
    idx = np.arange(D + 2)
    hankel = mom[idx[:, None] + idx[None, :]]
    mean = h @ mom[: D + 2]
    hc = h.copy()
    hc[:, 0] -= mean
    hb = np.zeros_like(h)
    hb[:, : D + 1] = B
    cov = hc @ hankel @ hc.T + S * (hb @ hankel @ hb.T)
    return mean, 0.5 * (cov + cov.T)


def gaussian_product_moment(indices, mean, cov, _cache=None) -> float:
    """E[x_i1 x_i2 ... x_ik] for x ~ N(mean, cov) by the Isserlis/Stein recursion.

    E[x_i R] = mean_i E[R] + sum_{j in R} cov_ij E[R without j].
    """
    key = tuple(sorted(indices))
    if _cache is None:
        mean = np.asarray(mean, dtype=float)
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
    cache = {} if _cache is None else _cache
    if key in cache:
        return cache[key]
    if not key:
        return 1.0
    i, rest = key[0], key[1:]
    val = mean[i] * gaussian_product_moment(rest, mean, cov, cache)
    for pos, j in enumerate(rest):
        if cov[i, j] != 0.0:
            val += cov[i, j] * gaussian_product_moment(rest[:pos] + rest[pos + 1 :], mean, cov, cache)
    cache[key] = val
    return val


def _tensor_monomials(tensors: DenseTensors):
    """Per output row, a dict sorted-index-tuple -> coefficient."""
    L = tensors.tensors[0].shape[0]
    rows = [defaultdict(float) for _ in range(L)]
    for order, t in enumerate(tensors.tensors):
        t = np.asarray(t)
        for pos in zip(*np.nonzero(t)):
            rows[pos[0]][tuple(sorted(pos[1:]))] += float(t[pos])
    return rows


def tensor_moments(tensors: DenseTensors, belief: FilterState):
    """E[f] and Cov[f] from the dense-tensor form by explicit Isserlis expansion.

    Independent of :func:`gaussian_poly_moments`; cost grows quickly with
    dimension and order, so it is intended for small cross-checks.
    """
    rows = _tensor_monomials(tensors)
    mu, H = belief.mean, belief.cov
    cache: dict = {}
    L = len(rows)
    mean = np.array([sum(c * gaussian_product_moment(m, mu, H, cache) for m, c in r.items()) for r in rows])
    second = np.zeros((L, L))
    for l in range(L):
        for m in range(l, L):
            acc = 0.0
            for i1, c1 in rows[l].items():
                for i2, c2 in rows[m].items():
                    acc += c1 * c2 * gaussian_product_moment(i1 + i2, mu, H, cache)
            second[l, m] = second[m, l] = acc
    cov = second - np.outer(mean, mean)
    return mean, 0.5 * (cov + cov.T)


def predict(dyn: PolynomialDynamics, belief: FilterState, process_noise=None,
            max_degree: int = MAX_MOMENT_DEGREE) -> FilterState:
    """Prior for the next step: exact Gaussian moments of f, plus optional process noise."""
    mean, cov = gaussian_poly_moments(dyn, belief, max_degree=max_degree)
    if process_noise is not None:
        q = np.asarray(process_noise, dtype=float)
        cov = cov + (q * np.eye(len(mean)) if q.ndim == 0 else q)
    return FilterState(mean, cov)


def update(belief: FilterState, obs) -> FilterState:
    """Measurement update with Joseph-form covariance.

    ``obs`` needs attributes ``y``, ``c_matrix`` and ``r_cov`` (e.g. an
    :class:`~sisfilter.sampling.Observation`).
    """
    y = np.atleast_1d(np.asarray(obs.y, dtype=float))
    C = np.atleast_2d(np.asarray(obs.c_matrix, dtype=float))
    R = np.atleast_2d(np.asarray(obs.r_cov, dtype=float))
    if C.shape != (y.size, belief.dim) or R.shape != (y.size, y.size):
        raise FilterError("observation dimensions do not match the belief")
    if y.size == 0:
        return belief
    Hm = belief.cov
    innov_cov = R + C @ Hm @ C.T
    cond = np.linalg.cond(innov_cov)
    if not np.isfinite(cond) or cond > 1e14:
        raise FilterError(f"innovation covariance is singular (condition number {cond:.3g})")
    gain = np.linalg.solve(innov_cov, C @ Hm).T
    mean = belief.mean + gain @ (y - C @ belief.mean)
    ikc = np.eye(belief.dim) - gain @ C
    cov = ikc @ Hm @ ikc.T + gain @ R @ gain.T
    return FilterState(mean, cov)


@dataclass
class TrackResult:
    means: np.ndarray
    covs: np.ndarray
    innovations: list
    mse: np.ndarray | None = None

    @property
    def states(self) -> list[FilterState]:
        return [FilterState(m, c) for m, c in zip(self.means, self.covs)]


def track(dyn: PolynomialDynamics, observations, init: FilterState, truth=None,
          process_noise=None, max_degree: int = MAX_MOMENT_DEGREE) -> TrackResult:
    """Alternate predict and update over ``observations`` (``None`` entries skip the update).

    Row ``n`` of the result is the posterior after observation ``n``; the
    first observation is paired with the first prediction from ``init``.
    With ``truth`` (shape ``(len(observations), L)``) the per-step squared
    error ``||xhat_n - x_n||^2`` is returned in ``mse``.
    """
    belief = init
    means, covs, innovations = [], [], []
    for obs in observations:
        belief = predict(dyn, belief, process_noise, max_degree)
        if obs is not None:
            C = np.atleast_2d(obs.c_matrix)
            innovations.append(np.asarray(obs.y) - C @ belief.mean)
            belief = update(belief, obs)
        else:
            innovations.append(None)
        means.append(belief.mean)
        covs.append(belief.cov)
    means = np.array(means)
    mse = None
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        mse = np.sum((means - truth) ** 2, axis=1)
    return TrackResult(means, np.array(covs), innovations, mse)


# ----------------------------------------------------------------- HMM filter


@dataclass(frozen=True, eq=False)
class HmmBelief:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).copy()
        if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise FilterError("HMM belief must be a probability vector")
        object.__setattr__(self, "probs", p)

    @property
    def mode(self) -> int:
        """Most probable state, 1-based."""
        return int(np.argmax(self.probs)) + 1


def hmm_update(belief: HmmBelief, h_matrix, likelihood) -> HmmBelief:
    """rho' = B H' rho / 1' B H' rho with B = diag(likelihood)."""
    H = np.asarray(getattr(h_matrix, "matrix", h_matrix), dtype=float)
    lik = np.asarray(likelihood, dtype=float)
    if np.any(lik < 0):
        raise FilterError("likelihood must be nonnegative")
    unnorm = lik * (H.T @ belief.probs)
    total = unnorm.sum()
    if not total > 0:
        raise FilterError("observation has zero probability under the model")
    post = unnorm / total
    post[np.argmax(post)] += 1.0 - post.sum()
    return HmmBelief(np.clip(post, 0.0, None))


def gaussian_likelihood(z: float, n_states: int, sigma: float) -> np.ndarray:
    """P(z | state i), i = 1..n, for z a rounded Gaussian around i with scale sigma."""
    i = np.arange(1, n_states + 1)
    return norm.cdf((z + 0.5 - i) / sigma) - norm.cdf((z - 0.5 - i) / sigma)


@dataclass
class TwoTimescaleReport:
    k: np.ndarray
    p: np.ndarray
    rho: np.ndarray
    alpha_inf: np.ndarray
    true_mode: np.ndarray
    observed_mode: np.ndarray
    belief: np.ndarray
    belief_mode: np.ndarray = field(default=None)
    alpha_hat: np.ndarray = field(default=None)
    estimated_mode: np.ndarray = field(default=None)

    @property
    def hit_rate(self) -> float:
        return float(np.mean(self.belief_mode == self.true_mode))


def two_timescale_track(p_of_alpha, slow_steps: int, fast_config: dict) -> TwoTimescaleReport:
    """Joint slow/fast tracking run on a synthetic evolving network.

    Per slow step ``k``: the degree distribution is evolved by the
    preferential-attachment matrix with ``p = p_of_alpha(alpha_inf)``; the
    mean-field map built on the new distribution is iterated to its
    asymptotic state; the mode of the infected-node degree profile
    ``rho(l) x_inf(l)`` is observed with rounded Gaussian noise; and the HMM
    belief over the mode is updated.  The updated belief is then used as
    the degree distribution of the next estimated fast-scale build, whose
    asymptotic state gives ``alpha_hat`` and ``estimated_mode``.

    ``fast_config`` keys: ``kernel`` (TransitionKernel), ``rho0`` (length
    N+1 distribution, last entry the absorbing bucket), ``k_start``,
    ``x0`` (scalar or vector), ``m`` (default 1), ``sigma`` (likelihood
    scale, default 0.5), ``obs_noise`` (observation noise scale, default 0),
    ``seed``.
    """
    from .evolution import evolution_matrix
    from .meanfield import asymptotic_state, build_dynamics

    kernel = fast_config["kernel"]
    rho = np.asarray(fast_config["rho0"], dtype=float)
    size = len(rho)
    k0 = int(fast_config.get("k_start", size))
    m = fast_config.get("m", 1.0)
    sigma = float(fast_config.get("sigma", 0.5))
    obs_noise = float(fast_config.get("obs_noise", 0.0))
    rng = np.random.default_rng(fast_config.get("seed"))
    x0 = np.broadcast_to(np.asarray(fast_config.get("x0", 0.05), dtype=float), (size,)).copy()
    belief = HmmBelief(fast_config.get("belief0", rho))

    alpha_inf = 0.0
    ks, ps, rhos, alphas, modes, obs_modes, beliefs, bmodes, ahats, emodes = ([] for _ in range(10))

    def fast_scale(dist):
        support = np.maximum(dist, 1e-300)
        dyn = build_dynamics(kernel, support / support.sum(), m)
        fp = asymptotic_state(dyn, x0, tol=1e-10, max_iter=20_000)
        x_inf = np.clip(fp.x, 0.0, 1.0)
        return float(dyn.phi @ x_inf), int(np.argmax(dist * x_inf)) + 1

    for step in range(slow_steps):
        k = k0 + step
        p = float(p_of_alpha(alpha_inf))
        H = evolution_matrix(p, k, size)
        rho = H.matrix.T @ rho
        rho = np.clip(rho, 0.0, None)
        rho /= rho.sum()
        alpha_inf, true_mode = fast_scale(rho)
        z = true_mode + (obs_noise * rng.standard_normal() if obs_noise > 0 else 0.0)
        z = float(np.clip(np.round(z), 1, size))
        belief = hmm_update(belief, H, gaussian_likelihood(z, size, sigma))
        a_hat, e_mode = fast_scale(belief.probs)
        ahats.append(a_hat)
        emodes.append(e_mode)
        ks.append(k)
        ps.append(p)
        rhos.append(rho.copy())
        alphas.append(alpha_inf)
        modes.append(true_mode)
        obs_modes.append(z)
        beliefs.append(belief.probs)
        bmodes.append(belief.mode)
    return TwoTimescaleReport(
        k=np.array(ks), p=np.array(ps), rho=np.array(rhos), alpha_inf=np.array(alphas),
        true_mode=np.array(modes), observed_mode=np.array(obs_modes),
        belief=np.array(beliefs), belief_mode=np.array(bmodes),
        alpha_hat=np.array(ahats), estimated_mode=np.array(emodes),
    )


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_filter_log(result: TrackResult, observations, path) -> None:
    """CSV ``t,degree,xhat,h_ll,y,mse``; ``t`` starts at 1, blank ``y`` for unobserved degrees."""
    rows = ["t,degree,xhat,h_ll,y,mse"]
    L = result.means.shape[1]
    for t, obs in enumerate(observations):
        y = [None] * L
        if obs is not None:
            C = np.atleast_2d(obs.c_matrix)
            for row, val in zip(C, np.atleast_1d(obs.y)):
                hit = np.flatnonzero(row)
                if len(hit) == 1 and row[hit[0]] == 1.0:
                    y[hit[0]] = val
        mse = None if result.mse is None else result.mse[t]
        for l in range(L):
            rows.append(f"{t + 1},{l + 1},{_fmt(result.means[t, l])},{_fmt(result.covs[t, l, l])},"
                        f"{_fmt(y[l])},{_fmt(mse)}")
    Path(path).write_text("\n".join(rows) + "\n")


def write_hmm_log(report: TwoTimescaleReport, path) -> None:
    """CSV ``k,state,prob,mode_obs``, states 1-based."""
    rows = ["k,state,prob,mode_obs"]
    for k, probs, z in zip(report.k, report.belief, report.observed_mode):
        rows += [f"{int(k)},{i},{float(p)!r},{int(z)}" for i, p in enumerate(probs, 1)]
    Path(path).write_text("\n".join(rows) + "\n")
