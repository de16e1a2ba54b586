"""Posterior Cramér-Rao lower bound for the perturbed mean-field system.

The deterministic map is made stochastic, ``x_{n+1} = f(x_n) + w_n`` with
``w_n ~ N(0, eps I)``, and observed through ``y_n = C x_n + v_n``.  The
Fisher information recursion

    J_{n+1} = D22 - D21 (J_n + D11)^{-1} D12

uses Jacobian expectations estimated over simulated perturbed trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .filter import FilterState, track
from .meanfield import PolynomialDynamics

__all__ = [
    "PcrlbConfig",
    "FisherSequence",
    "PcrlbError",
    "BoundReport",
    "pcrlb_run",
    "simulate_perturbed",
    "mse_vs_bound_report",
    "write_bound_csv",
]


class PcrlbError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PcrlbConfig:
    """Bound settings.  ``c_matrix`` defaults to ``I`` and ``r_cov`` to ``5e-3 I``.

    A scalar ``r_cov`` means ``r_cov I``.
    """

    horizon: int
    epsilon: float = 1e-6
    n_trajectories: int = 100
    c_matrix: np.ndarray | None = None
    r_cov: np.ndarray | None = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise PcrlbError("epsilon must be positive")
        if self.n_trajectories < 1:
            raise PcrlbError("need at least one trajectory")
        if self.horizon < 1:
            raise PcrlbError("horizon must be >= 1")

    def matrices(self, n_degrees: int):
        C = np.eye(n_degrees) if self.c_matrix is None else np.atleast_2d(np.asarray(self.c_matrix, float))
        if self.r_cov is None:
            R = 5e-3 * np.eye(C.shape[0])
        elif np.ndim(self.r_cov) == 0:
            R = float(self.r_cov) * np.eye(C.shape[0])
        else:
            R = np.atleast_2d(np.asarray(self.r_cov, float))
        if C.shape[1] != n_degrees or R.shape != (C.shape[0], C.shape[0]):
            raise PcrlbError("C and R dimensions do not match the state")
        return C, R


@dataclass
class FisherSequence:
    """``j[n]`` is the information matrix at step ``n`` (``j[0] = J0``)."""

    j: np.ndarray
    trajectories: np.ndarray = field(repr=False, default=None)

    @property
    def bound(self) -> np.ndarray:
        """tr(J_n^{-1}) per step."""
        return np.array([np.trace(np.linalg.inv(J)) for J in self.j])


def _check_pd(J: np.ndarray, what: str) -> None:
    if not np.allclose(J, J.T, rtol=0, atol=1e-8 * max(1.0, np.abs(J).max())):
        raise PcrlbError(f"{what} is not symmetric")
    try:
        np.linalg.cholesky(0.5 * (J + J.T))
    except np.linalg.LinAlgError:
        ev = np.linalg.eigvalsh(0.5 * (J + J.T))
        raise PcrlbError(f"{what} is not positive definite (min eigenvalue {ev.min():.3g})") from None


def simulate_perturbed(dyn: PolynomialDynamics, x0_mean, p0, epsilon: float, horizon: int,
                       n_trajectories: int, rng) -> np.ndarray:
    """Trajectories of shape ``(horizon+1, n_trajectories, L)``; ``x0 ~ N(x0_mean, p0)``."""
    L = dyn.n_degrees
    x = rng.multivariate_normal(np.asarray(x0_mean, float), p0, size=n_trajectories)
    out = [x]
    sd = np.sqrt(epsilon)
    for _ in range(horizon):
        x = dyn.evaluate(x) + sd * rng.standard_normal((n_trajectories, L))
        out.append(x)
    return np.array(out)


def pcrlb_run(dyn: PolynomialDynamics, cfg: PcrlbConfig, j0, seed=None,
              x0_mean=None) -> FisherSequence:
    """PCRLB recursion with Monte Carlo Jacobian expectations.

    ``x0_mean`` defaults to 0.5 in every class; the initial state is drawn
    from ``N(x0_mean, J0^{-1})``.
    """
    rng = np.random.default_rng(seed)
    L = dyn.n_degrees
    j0 = np.asarray(j0, dtype=float)
    _check_pd(j0, "J0")
    C, R = cfg.matrices(L)
    x0_mean = np.full(L, 0.5) if x0_mean is None else np.asarray(x0_mean, float)
    traj = simulate_perturbed(dyn, x0_mean, np.linalg.inv(j0), cfg.epsilon, cfg.horizon,
                              cfg.n_trajectories, rng)
    eps = cfg.epsilon
    d22 = np.eye(L) / eps + C.T @ np.linalg.solve(R, C)
    J = j0
    seq = [J]
    for n in range(cfg.horizon):
        F = dyn.jacobian(traj[n])
        d11 = np.einsum("tkl,tkm->lm", F, F) / (len(F) * eps)
        d12 = F.mean(axis=0).T / eps
        S = J + d11
        cond = np.linalg.cond(S)
        if not np.isfinite(cond) or cond > 1e15:
            raise PcrlbError(f"J_n + D11 is singular at step {n} (condition number {cond:.3g})")
        J = d22 - d12.T @ np.linalg.solve(S, d12)
        J = 0.5 * (J + J.T)
        _check_pd(J, f"J_{n + 1}")
        seq.append(J)
    return FisherSequence(np.array(seq), traj)


@dataclass(frozen=True)
class _LinearObservation:
    y: np.ndarray
    c_matrix: np.ndarray
    r_cov: np.ndarray


@dataclass
class BoundReport:
    n: np.ndarray
    trace_bound: np.ndarray
    trace_mse: np.ndarray
    mse_se: np.ndarray
    network_label: str = ""

    def rows(self):
        for i in range(len(self.n)):
            yield int(self.n[i]), float(self.trace_bound[i]), float(self.trace_mse[i]), self.network_label


def mse_vs_bound_report(dyn: PolynomialDynamics, cfg: PcrlbConfig, filter_config: dict | None = None,
                        seed=None, network_label: str = "") -> BoundReport:
    """Run the filter on the bound's own perturbed trajectories.

    ``filter_config`` keys: ``x0_mean`` (default 0.5), ``h0`` (prior
    covariance, default ``0.1 I``), ``process_noise`` (default ``eps``).
    The filter starts from ``N(x0_mean, h0)`` and ``J0 = h0^{-1}``.  Step
    ``n = 0`` reports the prior.
    """
    fc = dict(filter_config or {})
    L = dyn.n_degrees
    rng = np.random.default_rng(seed)
    x0_mean = np.asarray(fc.get("x0_mean", np.full(L, 0.5)), float)
    h0 = np.asarray(fc.get("h0", 0.1 * np.eye(L)), float)
    q = fc.get("process_noise", cfg.epsilon)
    seq = pcrlb_run(dyn, cfg, np.linalg.inv(h0), seed=rng, x0_mean=x0_mean)
    C, R = cfg.matrices(L)
    traj = seq.trajectories
    chol = np.linalg.cholesky(R)
    errs = np.zeros((cfg.horizon + 1, cfg.n_trajectories))
    init = FilterState(x0_mean, h0)
    for r in range(cfg.n_trajectories):
        truth = traj[1:, r]
        noise = rng.standard_normal((cfg.horizon, C.shape[0])) @ chol.T
        obs = [_LinearObservation(C @ x + v, C, R) for x, v in zip(truth, noise)]
        res = track(dyn, obs, init, truth=truth, process_noise=q)
        errs[0, r] = np.sum((x0_mean - traj[0, r]) ** 2)
        errs[1:, r] = res.mse
    mse = errs.mean(axis=1)
    se = errs.std(axis=1, ddof=1) / np.sqrt(cfg.n_trajectories) if cfg.n_trajectories > 1 else np.zeros_like(mse)
    return BoundReport(np.arange(cfg.horizon + 1), seq.bound, mse, se, network_label)


def write_bound_csv(reports, path) -> None:
    """CSV ``n,trace_bound,trace_mse,network_label`` for one or more reports."""
    if isinstance(reports, BoundReport):
        reports = [reports]
    rows = ["n,trace_bound,trace_mse,network_label"]
    for rep in reports:
        rows += [f"{n},{b!r},{m!r},{lab}" for n, b, m, lab in rep.rows()]
    Path(path).write_text("\n".join(rows) + "\n")
