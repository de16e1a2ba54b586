"""Reusable experiment runners shared by the CLI, the demos and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytics import moving_average_filter, var_ls_filter
from .filter import FilterState, TrackResult, track
from .graph import degree_distribution, generate_erdos_renyi, generate_scale_free
from .meanfield import PolynomialDynamics, build_dynamics, simulate_mean_field
from .pcrlb import simulate_perturbed
from .sampling import binomial_observation, proportional_sample_sizes
from .sis import TransitionKernel, infected_fraction_by_degree, random_initial_state, simulate_sis_thinned

__all__ = [
    "LinearObservation",
    "DeviationResult",
    "ComparisonResult",
    "SamplingResult",
    "PipelineRun",
    "mean_field_deviation",
    "constant_noise_observations",
    "filter_comparison",
    "sampling_effect",
    "pipeline_self_consistency",
]


@dataclass(frozen=True)
class LinearObservation:
    """Minimal observation record ``y = C x + v``, ``v ~ N(0, R)``."""

    y: np.ndarray
    c_matrix: np.ndarray
    r_cov: np.ndarray


@dataclass
class DeviationResult:
    """Max-over-time sup-norm deviations per replica for one population size."""

    n_nodes: int
    deviations: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.deviations.mean())

    @property
    def se(self) -> float:
        return float(self.deviations.std(ddof=1) / np.sqrt(len(self.deviations)))


def mean_field_deviation(n_nodes: int, kernel: TransitionKernel, c: float = 2.0, er_lam: float = 2.7,
                         n_replicas: int = 50, initial_fraction: float = 0.5, seed: int = 0,
                         horizon: int | None = None) -> DeviationResult:
    """Agent simulation against the mean field on an ER graph of ``n_nodes`` nodes.

    The kernel is rescaled to ``lam = c / n_nodes`` and the mean field uses
    ``m = 1`` with the graph's own degree distribution, so one mean-field
    step matches one synchronous agent step.  Replicas share the graph and
    the initial state and run for ``horizon`` steps (default ``n_nodes``).
    """
    L = kernel.max_degree
    g = generate_erdos_renyi(n_nodes, er_lam, seed=seed, max_degree=L)
    rho = degree_distribution(g).probs
    if len(rho) < L:
        rho = np.pad(rho, (0, L - len(rho)))
    k = kernel.with_lambda(c / n_nodes)
    s0 = random_initial_state(g, initial_fraction, rng=seed + 1)
    x0 = infected_fraction_by_degree(g, s0, L)
    N = n_nodes if horizon is None else horizon
    if np.any(rho <= 0):
        raise ValueError("every degree class 1..L must be populated; lower the kernel's max degree")
    mf = simulate_mean_field(build_dynamics(k, rho, 1.0), x0, N).x
    states = np.repeat(s0[:, None], n_replicas, axis=1)
    traj = simulate_sis_thinned(g, k, states, N, seed=seed + 2)
    dev = np.abs(traj - mf[:, None, :]).max(axis=2).max(axis=0)
    return DeviationResult(n_nodes, dev)


def constant_noise_observations(truth, r_cov, seed=None) -> list[LinearObservation]:
    """``y_n = x_n + v_n`` with ``v_n ~ N(0, R)`` for each row of ``truth``."""
    truth = np.asarray(truth, dtype=float)
    L = truth.shape[1]
    R = np.asarray(r_cov, dtype=float)
    R = R * np.eye(L) if R.ndim == 0 else R
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(truth.shape) @ np.linalg.cholesky(R).T
    C = np.eye(L)
    return [LinearObservation(y, C, R) for y in truth + noise]


@dataclass
class ComparisonResult:
    """Per-step MSE curves averaged over seeds, plus one example run."""

    mse: dict
    steady_state: dict
    example: TrackResult
    example_observations: list
    example_truth: np.ndarray


def filter_comparison(dyn: PolynomialDynamics, horizon: int = 200, r_cov: float = 5e-3,
                      x0: float = 0.5, init_var: float = 0.1, process_noise: float = 1e-6,
                      misspecified: PolynomialDynamics | None = None, ma_window: int = 10,
                      var_order: int = 1, seeds=range(10)) -> ComparisonResult:
    """Bayesian filter against baselines on a mean-field truth with constant-noise observations.

    The truth is the unperturbed mean field from ``x0``; observations are
    ``C = I``, ``R = r_cov I``.  Curves: ``bayes``, ``misspecified`` (if
    given), ``moving_average`` and ``var``.  ``steady_state`` averages the
    second half of each curve.
    """
    L = dyn.n_degrees
    truth = simulate_mean_field(dyn, np.full(L, x0), horizon).x[1:]
    init = FilterState(np.full(L, x0), init_var * np.eye(L))
    curves = {"bayes": [], "moving_average": [], "var": []}
    if misspecified is not None:
        curves["misspecified"] = []
    example = None
    for i, seed in enumerate(seeds):
        obs = constant_noise_observations(truth, r_cov, seed)
        ys = np.array([o.y for o in obs])
        res = track(dyn, obs, init, truth, process_noise=process_noise)
        curves["bayes"].append(res.mse)
        if misspecified is not None:
            curves["misspecified"].append(track(misspecified, obs, init, truth, process_noise=process_noise).mse)
        curves["moving_average"].append(np.sum((moving_average_filter(ys, ma_window) - truth) ** 2, axis=1))
        curves["var"].append(np.sum((var_ls_filter(ys, var_order) - truth) ** 2, axis=1))
        if i == 0:
            example = (res, obs)
    mse = {k: np.mean(v, axis=0) for k, v in curves.items()}
    steady = {k: float(v[horizon // 2 :].mean()) for k, v in mse.items()}
    return ComparisonResult(mse, steady, example[0], example[1], truth)


@dataclass
class SamplingResult:
    """Filter MSE under binomial sampling: per-run means, the mean curve and one example."""

    run_mse: np.ndarray
    curve: np.ndarray
    example: TrackResult
    example_observations: list
    example_truth: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.run_mse.mean())

    @property
    def se(self) -> float:
        n = len(self.run_mse)
        return float(self.run_mse.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0


def sampling_effect(kernel: TransitionKernel, rho, total: int = 1000, horizon: int = 100,
                    epsilon: float = 1e-5, r_min: float = 1e-3, x0: float = 0.5,
                    init_var: float = 0.1, seeds=range(50), m: float = 1.0) -> SamplingResult:
    """Filter MSE under binomial sampling with ``gamma`` proportional to ``rho``.

    The truth follows the perturbed mean field (process noise ``epsilon``,
    clipped to ``[0, 1]``); each step draws ``Binomial(gamma(l), x(l))``
    samples and the filter uses the plug-in binomial variance, floored at
    ``r_min``.
    """
    rho = np.asarray(rho, dtype=float)
    L = len(rho)
    dyn = build_dynamics(kernel, rho, m)
    gamma = proportional_sample_sizes(rho, total)
    init = FilterState(np.full(L, x0), init_var * np.eye(L))
    curves = []
    example = None
    for seed in seeds:
        rng = np.random.default_rng(seed)
        truth = simulate_perturbed(dyn, np.full(L, x0), np.zeros((L, L)), epsilon, horizon, 1, rng)[1:, 0]
        truth = np.clip(truth, 0.0, 1.0)
        obs = [binomial_observation(x, gamma, seed=rng, r_min=r_min) for x in truth]
        res = track(dyn, obs, init, truth, process_noise=epsilon)
        curves.append(res.mse)
        if example is None:
            example = (res, obs, truth)
    curves = np.array(curves)
    return SamplingResult(curves.mean(axis=1), curves.mean(axis=0), *example)


@dataclass
class PipelineRun:
    seed: int
    ks_statistic: float
    ks_p_value: float
    exponent: float
    n_events: int


def pipeline_self_consistency(n_nodes: int = 5000, gamma: float = 2.5, max_degree: int = 40,
                              delta: float = 0.3, beta: float = 0.12, spontaneous: float = 0.01,
                              initial_fraction: float = 0.1, horizon: int = 60,
                              min_class_size: int = 5, seeds=range(50)) -> list[PipelineRun]:
    """Synthetic event logs from a known SIS process run through :func:`empirics.run_pipeline`.

    Infection ``P21(l, a) = 1 - (1 - beta)^a (1 - spontaneous)`` and
    recovery ``delta`` on a scale-free graph with exponent ``gamma``.
    """
    from .empirics import run_pipeline, synthetic_event_log

    kernel = TransitionKernel.from_functions(
        max_degree, lambda l, a: delta, lambda l, a: 1 - (1 - beta) ** a * (1 - spontaneous)
    )
    runs = []
    for seed in seeds:
        g = generate_scale_free(n_nodes, gamma, max_degree, seed=seed)
        s0 = random_initial_state(g, initial_fraction, rng=seed)
        events, _ = synthetic_event_log(g, kernel, s0, horizon, seed=seed)
        res = run_pipeline(events, delta, seed=seed, min_class_size=min_class_size)
        runs.append(PipelineRun(int(seed), res.ks.statistic, res.ks.p_value, res.fit.exponent, len(events)))
    return runs
