"""Command-line experiment driver.

Every subcommand reads one TOML document (``--config``), validates it
completely, then computes and writes its artifacts into ``--out``.  Files
are produced in a scratch directory and moved into place only after the
whole run succeeded, so a failed run leaves no partial artifacts.  Errors
are reported on stderr as one JSON object; exit status is 2 for invalid
configuration and 1 for failures during computation.

Config layout (sections are read only by the commands that need them)::

    seed = 1                       # required here or via --seed
    [graph]     model = "erdos_renyi" | "scale_free" | "edgelist", ...
    [kernel]    type = "random" | "constant" | "contact" | "csv", ...
    [rho]       law = "power_law" | "poisson" | "uniform" | "probs" | "csv", ...
    [simulate] [meanfield] [track] [pcrlb] [evolution] [hmm] [threshold]
    [events] [ingest] [fit] [report]

File paths inside a config are resolved relative to the config file.

See the files in ``configs/`` for complete examples.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = ["main", "ConfigError", "COMMANDS"]


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted key at fault."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


_MISSING = object()


class Section:
    """Typed, path-aware access to one table of the config."""

    def __init__(self, data, path: str, base: Path = Path(".")):
        if not isinstance(data, dict):
            raise ConfigError(path, "expected a table")
        self.data = data
        self.path = path
        self.base = base
        self.used: set = set()

    def _field(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.data

    def get(self, key: str, kind=float, default=_MISSING, choices=None, check=None, why: str = ""):
        self.used.add(key)
        if key not in self.data:
            if default is _MISSING:
                raise ConfigError(self._field(key), "required key is missing")
            return default
        value = self.data[key]
        try:
            if kind is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise TypeError
                value = float(value)
            elif kind is int:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise TypeError
            elif kind is bool:
                if not isinstance(value, bool):
                    raise TypeError
            elif kind is str:
                if not isinstance(value, str):
                    raise TypeError
            elif kind == "floats":
                value = [float(v) for v in value if not isinstance(v, bool)]
                if len(value) != len(self.data[key]) or not value:
                    raise TypeError
            elif kind == "path":
                if not isinstance(value, str):
                    raise TypeError
                value = self.base / Path(value)
                if not value.exists():
                    raise ConfigError(self._field(key), f"file {str(value)!r} does not exist")
        except (TypeError, ValueError):
            name = kind if isinstance(kind, str) else kind.__name__
            raise ConfigError(self._field(key), f"expected {name}, got {value!r}") from None
        if choices is not None and value not in choices:
            raise ConfigError(self._field(key), f"must be one of {sorted(choices)}, got {value!r}")
        if check is not None and not check(value):
            raise ConfigError(self._field(key), why or f"invalid value {value!r}")
        return value

    def sub(self, key: str, required: bool = True) -> "Section | None":
        self.used.add(key)
        if key not in self.data:
            if required:
                raise ConfigError(self._field(key), "required section is missing")
            return None
        return Section(self.data[key], self._field(key), self.base)

    def subs(self, key: str) -> list:
        self.used.add(key)
        items = self.data.get(key)
        if not isinstance(items, list) or not items:
            raise ConfigError(self._field(key), "expected a nonempty array of tables")
        return [Section(it, f"{self._field(key)}[{i}]", self.base) for i, it in enumerate(items)]

    def finish(self) -> None:
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(self._field(extra[0]), "unknown key")


def _positive(v):
    return v > 0


def _probability(v):
    return 0.0 <= v <= 1.0


# ------------------------------------------------------------------ builders
# Each builder validates eagerly and returns a zero-argument factory, so a
# dry run exercises all validation without generating anything.


def _kernel_plan(cfg: Section, sec: Section | None = None):
    from .sis import TransitionKernel, read_kernel_csv

    s = sec or cfg.sub("kernel")
    kind = s.get("type", str, choices={"random", "constant", "contact", "csv"})
    lam = s.get("lam", float, 1.0, check=lambda v: v >= 0, why="must be nonnegative")
    scale_rec = s.get("scale_recovery", bool, True)
    if kind == "csv":
        path = s.get("path", "path")
        s.finish()
        return lambda: read_kernel_csv(path, lam=lam, scale_recovery=scale_rec)
    L = s.get("max_degree", int, check=lambda v: v >= 1, why="must be >= 1")
    if kind == "random":
        seed = s.get("seed", int)
        cdeg = s.get("complex_degree", int, None)
        spont = s.get("spontaneous", bool, True)
        s.finish()
        return lambda: TransitionKernel.random(L, np.random.default_rng(seed), complex_degree=cdeg, lam=lam,
                                               spontaneous=spont, scale_recovery=scale_rec)
    if kind == "constant":
        p12 = s.get("p12", float, check=_probability, why="must lie in [0, 1]")
        p21 = s.get("p21", float, check=_probability, why="must lie in [0, 1]")
        s.finish()
        return lambda: TransitionKernel.constant(L, p12, p21, lam, scale_rec)
    beta = s.get("beta", float, check=_probability, why="must lie in [0, 1]")
    spont = s.get("spontaneous", float, 0.0, check=_probability, why="must lie in [0, 1]")
    delta = s.get("delta", float, check=_probability, why="must lie in [0, 1]")
    s.finish()
    return lambda: TransitionKernel.from_functions(
        L, lambda l, a: delta, lambda l, a: 1 - (1 - beta) ** a * (1 - spont), lam, scale_rec
    )


def _rho_plan(s: Section, size: int | None = None):
    """Degree distribution from a law, explicit probabilities or a CSV; closes the section."""
    plan = _rho_plan_open(s, size)
    s.finish()
    return plan


def _rho_plan_open(s: Section, size: int | None):
    from .graph import poisson_law, power_law, read_degree_csv

    law = s.get("law", str, choices={"power_law", "poisson", "uniform", "probs", "csv"})
    if law == "probs":
        probs = np.array(s.get("probs", "floats"))
        if np.any(probs < 0) or abs(probs.sum() - 1) > 1e-9:
            raise ConfigError(s._field("probs"), "must be a probability vector")
        return lambda: probs / probs.sum()
    if law == "csv":
        path = s.get("path", "path")
        return lambda: np.asarray(read_degree_csv(path).probs)
    L = s.get("max_degree", int, size, check=lambda v: v >= 1, why="must be >= 1")
    if L is None:
        raise ConfigError(s._field("max_degree"), "required key is missing")
    if law == "power_law":
        gamma = s.get("gamma", float, check=lambda v: v > 1, why="must exceed 1")
        return lambda: power_law(gamma, L)
    if law == "poisson":
        lam = s.get("lam", float, check=_positive, why="must be positive")
        return lambda: poisson_law(lam, L)
    return lambda: np.full(L, 1.0 / L)


def _with_cap(g, max_degree):
    from .graph import Graph

    return g if max_degree is None else Graph(g.n_nodes, g.edges, max_degree)


def _graph_plan(cfg: Section, seed: int):
    from .graph import generate_erdos_renyi, generate_scale_free, read_edgelist

    s = cfg.sub("graph")
    model = s.get("model", str, choices={"erdos_renyi", "scale_free", "edgelist"})
    if model == "edgelist":
        path = s.get("path", "path")
        L = s.get("max_degree", int, None)
        s.finish()
        return lambda: _with_cap(read_edgelist(path), L)
    n = s.get("n_nodes", int, check=lambda v: v >= 2, why="must be >= 2")
    gseed = s.get("seed", int, seed)
    if model == "erdos_renyi":
        lam = s.get("lam", float, check=_positive, why="must be positive")
        L = s.get("max_degree", int, None)
        s.finish()
        return lambda: generate_erdos_renyi(n, lam, seed=gseed, max_degree=L)
    gamma = s.get("gamma", float, check=lambda v: v > 1, why="must exceed 1")
    L = s.get("max_degree", int, check=lambda v: 2 <= v < n, why="must satisfy 2 <= max_degree < n_nodes")
    s.finish()
    return lambda: generate_scale_free(n, gamma, L, seed=gseed)


# ------------------------------------------------------------------ commands
# A command takes (cfg, seed) and returns a runner ``run(out_dir) -> summary``.


def cmd_generate(cfg: Section, seed: int):
    from .graph import degree_distribution, write_degree_csv, write_edgelist

    graph = _graph_plan(cfg, seed)
    ev = cfg.sub("events", required=False)
    if ev is not None:
        kernel = _kernel_plan(cfg)
        horizon = ev.get("horizon", int, check=_positive, why="must be positive")
        frac = ev.get("initial_fraction", float, check=_probability, why="must lie in [0, 1]")
        tag = ev.get("hashtag", str, "#tag")
        bin_width = ev.get("bin_width", int, 60_000, check=_positive, why="must be positive")
        ev.finish()

    def run(out: Path):
        from .empirics import synthetic_event_log, write_events_jsonl
        from .sis import random_initial_state

        g = graph()
        write_edgelist(g, out / "graph.edgelist")
        write_degree_csv(degree_distribution(g), out / "degree.csv")
        summary = {"n_nodes": g.n_nodes, "n_edges": int(len(g.edges)), "max_degree": g.max_degree}
        if ev is not None:
            s0 = random_initial_state(g, frac, rng=seed)
            events, _ = synthetic_event_log(g, kernel(), s0, horizon, seed=seed, bin_width=bin_width)
            write_events_jsonl(events, out / "events.jsonl", hashtag=tag)
            summary["n_events"] = len(events)
        return summary

    return run


def cmd_simulate(cfg: Section, seed: int):
    from .sis import random_initial_state, simulate_sis, simulate_sis_thinned, write_trajectory_csv

    graph = _graph_plan(cfg, seed)
    kernel = _kernel_plan(cfg)
    s = cfg.sub("simulate")
    horizon = s.get("horizon", int, check=_positive, why="must be positive")
    frac = s.get("initial_fraction", float, check=_probability, why="must lie in [0, 1]")
    reps = s.get("n_replicas", int, 1, check=_positive, why="must be positive")
    method = s.get("method", str, "dense", choices={"dense", "thinned"})
    s.finish()

    def run(out: Path):
        g = graph()
        s0 = random_initial_state(g, frac, rng=seed, n_replicas=reps)
        sim = simulate_sis_thinned if method == "thinned" else simulate_sis
        traj = sim(g, kernel(), s0, horizon, seed=seed)
        mean = traj.mean(axis=1) if traj.ndim == 3 else traj
        write_trajectory_csv(mean, out / "trajectory.csv")
        return {"horizon": horizon, "n_replicas": reps, "final_x": mean[-1].tolist()}

    return run


def cmd_meanfield(cfg: Section, seed: int):
    from .meanfield import asymptotic_state, build_dynamics, save_dynamics, simulate_mean_field
    from .sis import write_trajectory_csv

    kernel = _kernel_plan(cfg)
    rho = _rho_plan(cfg.sub("rho"))
    s = cfg.sub("meanfield")
    horizon = s.get("horizon", int, check=_positive, why="must be positive")
    x0 = s.get("x0", float, 0.5, check=_probability, why="must lie in [0, 1]")
    m = s.get("m", float, 1.0, check=_positive, why="must be positive")
    s.finish()

    def run(out: Path):
        r = rho()
        dyn = build_dynamics(kernel(), r, m)
        traj = simulate_mean_field(dyn, np.full(len(r), x0), horizon)
        fp = asymptotic_state(dyn, np.full(len(r), x0))
        write_trajectory_csv(traj.x, out / "meanfield.csv", column="xbar")
        save_dynamics(dyn, out / "dynamics.json")
        fixed = {"x_inf": fp.x.tolist(), "converged": bool(fp.converged), "n_iter": int(fp.n_iter),
                 "flagged": bool(np.any(traj.flagged))}
        (out / "fixed_point.json").write_text(json.dumps(fixed, indent=2) + "\n")
        return fixed

    return run


def cmd_track(cfg: Section, seed: int):
    from .experiments import filter_comparison, sampling_effect
    from .filter import write_filter_log
    from .meanfield import build_dynamics

    kernel = _kernel_plan(cfg)
    s = cfg.sub("track")
    sampling = s.get("sampling", str, "constant", choices={"constant", "binomial"})
    horizon = s.get("horizon", int, check=_positive, why="must be positive")
    n_seeds = s.get("n_seeds", int, 10, check=_positive, why="must be positive")
    x0 = s.get("x0", float, 0.5, check=_probability, why="must lie in [0, 1]")
    init_var = s.get("init_var", float, 0.1, check=_positive, why="must be positive")
    m = s.get("m", float, 1.0, check=_positive, why="must be positive")
    seeds = range(seed, seed + n_seeds)
    if sampling == "constant":
        rho = _rho_plan(cfg.sub("rho"))
        r_cov = s.get("r_cov", float, 5e-3, check=_positive, why="must be positive")
        q = s.get("process_noise", float, 1e-6, check=lambda v: v >= 0, why="must be nonnegative")
        mis = s.get("misspecified", str, "none", choices={"none", "uniform"})
        window = s.get("ma_window", int, 10, check=_positive, why="must be positive")
        order = s.get("var_order", int, 1, check=_positive, why="must be positive")
        s.finish()

        def run(out: Path):
            k = kernel()
            r = rho()
            dyn = build_dynamics(k, r, m)
            wrong = build_dynamics(k, np.full(len(r), 1.0 / len(r)), m) if mis == "uniform" else None
            res = filter_comparison(dyn, horizon, r_cov, x0, init_var, q, wrong, window, order, seeds)
            write_filter_log(res.example, res.example_observations, out / "filter_log.csv")
            names = list(res.mse)
            rows = ["t," + ",".join(names)]
            rows += [f"{t + 1}," + ",".join(repr(float(res.mse[n][t])) for n in names) for t in range(horizon)]
            (out / "mse.csv").write_text("\n".join(rows) + "\n")
            return {"steady_state_mse": res.steady_state}

        return run

    total = s.get("total", int, 1000, check=_positive, why="must be positive")
    eps = s.get("epsilon", float, 1e-5, check=_positive, why="must be positive")
    r_min = s.get("r_min", float, 1e-3, check=_positive, why="must be positive")
    nets = [(n.get("label", str), _rho_plan(n)) for n in s.subs("networks")]
    s.finish()

    def run(out: Path):
        k = kernel()
        rows = ["label,mean_mse,se"]
        summary = {}
        for i, (label, rho) in enumerate(nets):
            res = sampling_effect(k, rho(), total, horizon, eps, r_min, x0, init_var, seeds, m)
            rows.append(f"{label},{res.mean!r},{res.se!r}")
            summary[label] = res.mean
            if i == 0:
                write_filter_log(res.example, res.example_observations, out / "filter_log.csv")
        (out / "sweep.csv").write_text("\n".join(rows) + "\n")
        return {"mean_mse": summary}

    return run


def cmd_pcrlb(cfg: Section, seed: int):
    from .meanfield import build_dynamics
    from .pcrlb import PcrlbConfig, mse_vs_bound_report, write_bound_csv

    kernel = _kernel_plan(cfg)
    s = cfg.sub("pcrlb")
    horizon = s.get("horizon", int, check=_positive, why="must be positive")
    eps = s.get("epsilon", float, 1e-6, check=_positive, why="must be positive")
    n_traj = s.get("n_trajectories", int, 100, check=_positive, why="must be positive")
    r_cov = s.get("r_cov", float, 5e-3, check=_positive, why="must be positive")
    init_var = s.get("init_var", float, 0.1, check=_positive, why="must be positive")
    x0 = s.get("x0", float, 0.5, check=_probability, why="must lie in [0, 1]")
    m = s.get("m", float, 1.0, check=_positive, why="must be positive")
    nets = [(n.get("label", str), _rho_plan(n)) for n in s.subs("networks")]
    s.finish()

    def run(out: Path):
        k = kernel()
        reports = []
        for label, rho in nets:
            r = rho()
            L = len(r)
            cfg_ = PcrlbConfig(horizon, eps, n_traj, np.eye(L), r_cov * np.eye(L))
            fc = {"x0_mean": np.full(L, x0), "h0": init_var * np.eye(L)}
            reports.append(mse_vs_bound_report(build_dynamics(k, r, m), cfg_, fc, seed=seed, network_label=label))
        write_bound_csv(reports, out / "bound.csv")
        return {rep.network_label: {"final_bound": float(rep.trace_bound[-1]),
                                    "final_mse": float(rep.trace_mse[-1])} for rep in reports}

    return run


def _evolution_common(s: Section):
    rho0 = _rho_plan(s.sub("rho0"))
    k_start = s.get("k_start", int, check=_positive, why="must be positive")
    k_end = s.get("k_end", int, check=lambda v: v >= k_start, why="must be >= k_start")
    return rho0, k_start, k_end


def cmd_evolve(cfg: Section, seed: int):
    from .evolution import evolve_distribution

    s = cfg.sub("evolution")
    rho0, k_start, k_end = _evolution_common(s)
    p = s.get("p", float, check=_probability, why="must lie in [0, 1]")
    s.finish()
    h = cfg.sub("hmm", required=False)
    if h is not None:
        kernel = _kernel_plan(cfg)
        a0 = h.get("p_intercept", float)
        a1 = h.get("p_slope", float, 0.0)
        steps = h.get("slow_steps", int, check=_positive, why="must be positive")
        sigma = h.get("sigma", float, 0.5, check=_positive, why="must be positive")
        noise = h.get("obs_noise", float, 0.0, check=lambda v: v >= 0, why="must be nonnegative")
        hx0 = h.get("x0", float, 0.05, check=_probability, why="must lie in [0, 1]")
        hm = h.get("m", float, 1.0, check=_positive, why="must be positive")
        h.finish()

    def run(out: Path):
        r0 = rho0()
        path = evolve_distribution(r0, p, k_start, k_end)
        rows = ["k,degree,rho"]
        for k, rho in zip(range(k_start, k_end + 1), path):
            rows += [f"{k},{d},{float(v)!r}" for d, v in enumerate(rho, 1)]
        (out / "evolution.csv").write_text("\n".join(rows) + "\n")
        summary = {"final_mean_degree": float(np.arange(1, len(r0) + 1) @ path[-1])}
        if h is not None:
            from .filter import two_timescale_track, write_hmm_log

            fast = {"kernel": kernel(), "rho0": r0, "k_start": k_start, "x0": hx0, "m": hm,
                    "sigma": sigma, "obs_noise": noise, "seed": seed}
            rep = two_timescale_track(lambda a: float(np.clip(a0 + a1 * a, 0.0, 1.0)), steps, fast)
            write_hmm_log(rep, out / "hmm_log.csv")
            summary["hmm_hit_rate"] = rep.hit_rate
        return summary

    return run


def cmd_threshold(cfg: Section, seed: int):
    from .evolution import threshold_sweep, write_threshold_csv

    kernel = _kernel_plan(cfg)
    s = cfg.sub("threshold")
    rho0, k_start, k_end = _evolution_common(s)
    grid = s.get("p_grid", "floats")
    if any(not 0 <= p <= 1 for p in grid):
        raise ConfigError(s._field("p_grid"), "entries must lie in [0, 1]")
    empirical = s.get("empirical", bool, False)
    s.finish()

    def run(out: Path):
        k = kernel()
        rows = threshold_sweep(rho0(), k, grid, k_start, k_end, empirical_kernel=k if empirical else None)
        write_threshold_csv(rows, out / "threshold.csv")
        by_k = {}
        for p, kk, cf, _, ok in rows:
            by_k.setdefault(kk, []).append((p, cf, ok))
        monotone = all(all(b[1] >= a[1] for a, b in zip(v, v[1:])) for v in by_k.values())
        return {"lambda_cf_nondecreasing_in_p": monotone, "dominance_ok": all(r[4] for r in rows)}

    return run


def cmd_ingest(cfg: Section, seed: int):
    from .analytics import write_deviation_csv
    from .empirics import ingest_events, run_pipeline, write_rates_csv, write_series_csv
    from .graph import write_edgelist
    from .sis import write_trajectory_csv

    s = cfg.sub("ingest")
    path = s.get("path", "path")
    tag = s.get("hashtag", str, None)
    delta = s.get("delta", float, check=_probability, why="must lie in [0, 1]")
    bin_width = s.get("bin_width", int, 60_000, check=_positive, why="must be positive")
    min_class = s.get("min_class_size", int, 5, check=_positive, why="must be positive")
    smoothing = s.get("smoothing", bool, False)
    s.finish()

    def run(out: Path):
        events = ingest_events(path, tag)
        res = run_pipeline(events, delta, bin_width, seed, min_class, smoothing)
        write_edgelist(res.graph, out / "graph.edgelist")
        write_series_csv(res.series, out / "series.csv")
        write_rates_csv(res.rates, out / "rates.csv")
        write_trajectory_csv(res.model, out / "meanfield.csv", column="xbar")
        write_deviation_csv(res.deviation, out / "deviation.csv")
        (out / "fit.json").write_text(res.fit.to_json() + "\n")
        ks = {"statistic": res.ks.statistic, "p_value": res.ks.p_value,
              "compared_degrees": (np.flatnonzero(res.compared) + 1).tolist()}
        (out / "ks.json").write_text(json.dumps(ks, indent=2) + "\n")
        return {"n_events": len(events), "n_nodes": res.graph.n_nodes, "ks": ks["statistic"],
                "ks_p_value": ks["p_value"], "exponent": res.fit.exponent}

    return run


def cmd_fit(cfg: Section, seed: int):
    from .analytics import fit_power_law_discrete
    from .graph import read_edgelist

    s = cfg.sub("fit")
    path = s.get("path", "path")
    fmt = s.get("format", str, "edgelist", choices={"edgelist", "degrees"})
    l_min = s.get("l_min", int, 1, check=_positive, why="must be >= 1")
    auto = s.get("auto_l_min", bool, False)
    s.finish()

    def run(out: Path):
        if fmt == "edgelist":
            deg = read_edgelist(path).degrees
        else:
            deg = np.loadtxt(path, dtype=int, ndmin=1)
        deg = deg[deg >= (1 if auto else l_min)]
        rep = fit_power_law_discrete(deg, l_min=l_min, auto_l_min=auto)
        (out / "fit.json").write_text(rep.to_json() + "\n")
        return json.loads(rep.to_json())

    return run


def _read_xcsv(path: Path) -> np.ndarray:
    """``(time, degree, value)`` CSV with a header into a ``(T, L)`` array."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0].astype(int)
    d = data[:, 1].astype(int)
    out = np.zeros((t.max() - t.min() + 1, d.max()))
    out[t - t.min(), d - 1] = data[:, 2]
    return out


def cmd_report(cfg: Section, seed: int):
    from .analytics import deviation_table, ks_two_sample, write_deviation_csv
    from .graph import read_degree_csv

    s = cfg.sub("report")
    model = s.get("model", "path")
    data = s.get("data", "path")
    weights = s.get("weights", "path", None)
    s.finish()

    def run(out: Path):
        m = _read_xcsv(model)
        d = _read_xcsv(data)
        n = min(len(m), len(d))
        w = None if weights is None else np.asarray(read_degree_csv(weights).probs)
        table = deviation_table(m[:n], d[:n], w)
        write_deviation_csv(table, out / "deviation.csv")
        ks = ks_two_sample(d[n - 1], m[n - 1])
        res = {"statistic": ks.statistic, "p_value": ks.p_value}
        (out / "ks.json").write_text(json.dumps(res, indent=2) + "\n")
        return {"deviation": table, "ks": res}

    return run


COMMANDS = {
    "generate": (cmd_generate, "generate a graph (and optionally a synthetic event log)"),
    "simulate": (cmd_simulate, "agent-based SIS simulation"),
    "meanfield": (cmd_meanfield, "mean-field trajectory, dynamics dump and fixed point"),
    "track": (cmd_track, "filter runs against baselines or across sampling regimes"),
    "pcrlb": (cmd_pcrlb, "filter MSE against the PCRLB for one or more networks"),
    "evolve": (cmd_evolve, "degree-distribution evolution and two-time-scale tracking"),
    "threshold": (cmd_threshold, "diffusion thresholds along evolved distributions"),
    "ingest": (cmd_ingest, "event-log pipeline: graph, rates, mean-field replay, KS, fit"),
    "fit": (cmd_fit, "discrete power-law fit of a degree sample"),
    "report": (cmd_report, "deviation table and KS test between model and data trajectories"),
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sisfilter", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path, help="TOML experiment config")
        p.add_argument("--seed", type=int, default=None, help="overrides the config's seed")
        p.add_argument("--out", type=Path, default=None, help="output directory (default: config 'out')")
        p.add_argument("--dry-run", action="store_true", help="validate the config and exit")
    return parser


def _fail(kind: str, message: str, field: str | None = None, code: int = 1) -> int:
    diag = {"status": "error", "kind": kind, "message": message}
    if field is not None:
        diag["field"] = field
    print(json.dumps(diag), file=sys.stderr)
    return code


def _commit(scratch: Path, out: Path) -> list:
    """Move every scratch file into ``out`` with an atomic rename per file."""
    names = sorted(p.name for p in scratch.iterdir())
    for name in names:
        os.replace(scratch / name, out / name)
    return names


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        try:
            raw = tomllib.loads(args.config.read_text())
        except OSError as exc:
            raise ConfigError("--config", f"cannot read config: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("--config", f"not valid TOML: {exc}") from None
        cfg = Section(raw, "", args.config.resolve().parent)
        seed = cfg.get("seed", int, None)
        if args.seed is not None:
            seed = args.seed
        if seed is None:
            raise ConfigError("seed", "an explicit seed is required (config 'seed' or --seed)")
        out = args.out
        cfg_out = cfg.get("out", str, None)
        if out is None and cfg_out is not None:
            out = (cfg.base / cfg_out).resolve()
        if out is None and not args.dry_run:
            raise ConfigError("out", "an output directory is required (config 'out' or --out)")
        runner = COMMANDS[args.command][0](cfg, seed)
        cfg.finish()
    except ConfigError as exc:
        return _fail("config", exc.message, exc.field, code=2)

    if args.dry_run:
        print(json.dumps({"status": "ok", "command": args.command, "dry_run": True}))
        return 0

    out.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    try:
        summary = runner(scratch)
        manifest = {"command": args.command, "seed": seed, "config": raw, "summary": summary}
        (scratch / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
        files = _commit(scratch, out)
    except Exception as exc:  # report any failure as a diagnostic, never a traceback
        return _fail(type(exc).__name__, str(exc))
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    print(json.dumps({"status": "ok", "command": args.command, "out": str(out), "artifacts": files},
                     default=_jsonable))
    return 0


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


if __name__ == "__main__":
    sys.exit(main())
