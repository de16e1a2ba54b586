"""Diffusion-log ingestion and empirical SIS parameter extraction.

Input logs are JSON lines ``{"ts": <epoch ms>, "user": str, "mentions":
[str, ...], "text": str}``.  A user who posts a tracked message in a time bin
is infected in that bin; infected users recover with probability ``delta``
per bin.  Recovery is applied before the bin's posts, so every post
re-seeds its author.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Graph
from .sis import TransitionKernel, infected_fraction_by_degree, step_agents

RHO_FLOOR = 1e-15

__all__ = [
    "DiffusionEvent",
    "IngestError",
    "MentionGraph",
    "InfectionTimeSeries",
    "EmpiricalRates",
    "ingest_events",
    "parse_events",
    "build_mention_graph",
    "extract_infection_series",
    "empirical_transition_rates",
    "synthetic_event_log",
    "write_events_jsonl",
    "write_series_csv",
    "write_rates_csv",
    "PipelineResult",
    "run_pipeline",
]

DEFAULT_BIN_MS = 60_000


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class DiffusionEvent:
    timestamp: int
    user: str
    mentions: tuple = ()
    tagged: bool = True

    def __post_init__(self):
        if self.timestamp < 0:
            raise IngestError("timestamp must be nonnegative")
        if not self.user:
            raise IngestError("user id must be nonempty")


def parse_events(lines, hashtag_filter: str | None = None) -> list[DiffusionEvent]:
    """Parse JSON-lines text; see :func:`ingest_events`."""
    tag = hashtag_filter.lower() if hashtag_filter else None
    events = []
    for no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            ts = int(rec["ts"])
            user = str(rec["user"])
            mentions = tuple(str(m) for m in rec.get("mentions", []) or [])
            text = str(rec.get("text", ""))
            ev = DiffusionEvent(ts, user, mentions, tag is None or tag in text.lower())
        except (ValueError, KeyError, TypeError) as exc:
            raise IngestError(f"line {no}: malformed event ({exc})") from None
        if ev.tagged:
            events.append(ev)
    events.sort(key=lambda e: (e.timestamp, e.user))
    if not events:
        warnings.warn("no matching events in the log", stacklevel=3)
    return events


def ingest_events(path, hashtag_filter: str | None = None) -> list[DiffusionEvent]:
    """Read a JSON-lines log, keep events whose text contains the hashtag, sort by time.

    Matching is a case-insensitive substring test; ``hashtag_filter=None``
    keeps every event.  An empty result triggers a warning.

    Raises
    ------
    IngestError
        On a malformed line, with its 1-based line number.
    """
    with open(path, encoding="utf-8") as fh:
        return parse_events(fh, hashtag_filter)


@dataclass(frozen=True, eq=False)
class MentionGraph(Graph):
    """Graph whose node ``i`` is user ``node_ids[i]`` (ids sorted)."""

    node_ids: tuple = ()

    def index(self) -> dict:
        return {u: i for i, u in enumerate(self.node_ids)}


def build_mention_graph(events, max_degree: int | None = None) -> MentionGraph:
    """Undirected simple graph with an edge whenever one user mentions another.

    Nodes are all posting or mentioned users; self-mentions are dropped.
    """
    events = list(events)
    if not events:
        raise IngestError("no events to build a graph from")
    users = set()
    pairs = set()
    for ev in events:
        if not ev.tagged:
            continue
        users.add(ev.user)
        for m in ev.mentions:
            users.add(m)
            if m != ev.user:
                pairs.add((min(ev.user, m), max(ev.user, m)))
    ids = tuple(sorted(users))
    pos = {u: i for i, u in enumerate(ids)}
    edges = np.array(sorted((pos[a], pos[b]) for a, b in pairs), dtype=np.int64).reshape(-1, 2)
    return MentionGraph(len(ids), edges, max_degree, node_ids=ids)


@dataclass
class InfectionTimeSeries:
    bin_start: np.ndarray
    states: np.ndarray
    x: np.ndarray
    bin_width: int = DEFAULT_BIN_MS
    delta: float = 0.0

    @property
    def n_bins(self) -> int:
        return len(self.states)


def extract_infection_series(events, graph: MentionGraph, delta: float,
                             bin_width: int = DEFAULT_BIN_MS, seed=None,
                             t0: int | None = None) -> InfectionTimeSeries:
    """Per-bin node states from posting times.

    In each bin, nodes infected in the previous bin recover with probability
    ``delta``; then every node posting in the bin is (re-)infected.  All
    nodes start susceptible.  Bins run contiguously from ``t0`` (default:
    first event time) to the last event.
    """
    if not 0.0 <= delta <= 1.0:
        raise IngestError("delta must lie in [0, 1]")
    if bin_width <= 0:
        raise IngestError("bin width must be positive")
    events = [e for e in events if e.tagged]
    rng = np.random.default_rng(seed)
    pos = graph.index()
    if not events:
        raise IngestError("no events")
    start = events[0].timestamp if t0 is None else int(t0)
    n_bins = (events[-1].timestamp - start) // bin_width + 1
    posts = [[] for _ in range(n_bins)]
    for e in events:
        b = (e.timestamp - start) // bin_width
        if b < 0:
            continue
        if e.user in pos:
            posts[b].append(pos[e.user])
    s = np.zeros(graph.n_nodes, dtype=bool)
    states = np.zeros((n_bins, graph.n_nodes), dtype=bool)
    for b in range(n_bins):
        if delta > 0:
            s = s & ~(rng.random(graph.n_nodes) < delta)
        s[posts[b]] = True
        states[b] = s
    x = infected_fraction_by_degree(graph, states.T)
    return InfectionTimeSeries(start + bin_width * np.arange(n_bins), states, x, bin_width, delta)


@dataclass
class EmpiricalRates:
    """Empirical transmission table and its denominators.

    ``p_hat[l, a]`` is the fraction of susceptible (degree ``l``, ``a``
    infected neighbours) node-steps that became infected; ``missing`` marks
    cells never observed.
    """

    p_hat: np.ndarray
    counts: np.ndarray
    events: np.ndarray
    missing: np.ndarray
    p_rec: np.ndarray = field(default=None)

    def kernel(self, delta: float | None = None, smoothing: bool = False) -> TransitionKernel:
        """Kernel with ``P21 = p_hat`` and ``P12 = delta`` (or the empirical recovery table)."""
        p21 = (self.events + 1.0) / (self.counts + 2.0) if smoothing else self.p_hat
        if delta is None:
            p12 = self.p_rec
        else:
            p12 = np.full_like(self.p_hat, float(delta))
        return TransitionKernel(p12, p21, 1.0)


def empirical_transition_rates(series: InfectionTimeSeries, graph: Graph,
                               max_degree: int | None = None) -> EmpiricalRates:
    """Count susceptible->infected transitions per (degree, infected neighbours).

    Also tabulates infected->susceptible frequencies in ``p_rec``.
    """
    if series.n_bins < 2:
        raise IngestError("need at least two bins")
    L = graph.degrees.max(initial=0) if max_degree is None else max_degree
    S = series.states
    a = np.asarray((graph.adjacency @ S.T.astype(np.int64))).T  # (bins, nodes)
    deg = np.broadcast_to(graph.degrees, S.shape)
    cur, nxt = S[:-1], S[1:]
    l_, a_ = deg[:-1], a[:-1]
    keep = l_ <= L
    n = L + 1

    def tab(mask):
        return np.bincount((l_ * n + a_)[mask & keep], minlength=n * n).reshape(n, n).astype(float)

    counts = tab(~cur)
    events = tab(~cur & nxt)
    rc = tab(cur)
    re = tab(cur & ~nxt)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_hat = np.where(counts > 0, events / counts, 0.0)
        p_rec = np.where(rc > 0, re / rc, 0.0)
    tri = np.tril(np.ones((n, n), dtype=bool))
    missing = (counts == 0) & tri
    return EmpiricalRates(p_hat, counts, events, missing, p_rec)


def synthetic_event_log(g: Graph, kernel: TransitionKernel, initial, horizon: int, seed=None,
                        t0: int = 0,
                        bin_width: int = DEFAULT_BIN_MS, user_prefix: str = "u"):
    """Simulate SIS on ``g`` and emit one post per new infection.

    A node posts (mentioning all its neighbours) in the bin it becomes
    infected, including the initially infected nodes at bin 0.  Returns
    ``(events, states)`` with the true ``(horizon+1, n_nodes)`` states.
    """
    rng = np.random.default_rng(seed)
    width = len(str(max(g.n_nodes - 1, 0)))
    name = [f"{user_prefix}{i:0{width}d}" for i in range(g.n_nodes)]
    s = np.asarray(initial, dtype=bool).copy()
    states = [s]
    events = []

    def emit(nodes, b):
        for v in nodes:
            ts = t0 + b * bin_width + int(rng.integers(bin_width))
            mentions = tuple(name[u] for u in g.neighbors(v))
            events.append(DiffusionEvent(ts, name[v], mentions, True))

    emit(np.flatnonzero(s), 0)
    for b in range(1, horizon + 1):
        new = step_agents(g, kernel, s, rng)
        emit(np.flatnonzero(new & ~s), b)
        s = new
        states.append(s)
    events.sort(key=lambda e: (e.timestamp, e.user))
    return events, np.array(states)


@dataclass
class PipelineResult:
    """Everything produced by :func:`run_pipeline`.

    ``model`` is the mean-field trajectory aligned with ``series.x``;
    ``compared`` marks the degree classes entering the KS test.
    """

    graph: MentionGraph
    series: InfectionTimeSeries
    rates: EmpiricalRates
    model: np.ndarray
    ks: object
    fit: object
    deviation: dict
    compared: np.ndarray


def run_pipeline(events, delta: float, bin_width: int = DEFAULT_BIN_MS, seed=None,
                 min_class_size: int = 5, smoothing: bool = False, m: float = 1.0) -> PipelineResult:
    """Log to graph, empirical rates, mean-field replay and goodness of fit.

    The mean field is built from the empirical kernel (transmission
    ``p_hat``, recovery ``delta``) and the mention graph's degree
    distribution, started from the first bin's infected fractions and run
    for as many bins as the data.  The two-sample KS test compares the
    final per-degree infected fractions of data and model over classes with
    at least ``min_class_size`` nodes.  Degree classes absent from the
    graph get probability ``1e-15`` so the map stays well defined.
    """
    from .analytics import deviation_table, fit_power_law_discrete, ks_two_sample
    from .meanfield import build_dynamics, simulate_mean_field

    graph = build_mention_graph(events)
    series = extract_infection_series(events, graph, delta, bin_width=bin_width, seed=seed)
    rates = empirical_transition_rates(series, graph)
    kernel = rates.kernel(delta=delta, smoothing=smoothing)
    counts = graph.degree_counts[1 : graph.max_degree + 1].astype(float)
    if counts.sum() == 0:
        raise IngestError("mention graph has no edges")
    rho = np.maximum(counts / counts.sum(), RHO_FLOOR)
    rho /= rho.sum()
    dyn = build_dynamics(kernel, rho, m)
    model = simulate_mean_field(dyn, series.x[0], series.n_bins - 1).x
    compared = counts >= min_class_size
    if not compared.any():
        raise IngestError(f"no degree class has at least {min_class_size} nodes")
    ks = ks_two_sample(series.x[-1][compared], model[-1][compared])
    deg = graph.degrees
    fit = fit_power_law_discrete(deg[deg > 0])
    dev = deviation_table(model, series.x, weights=counts)
    return PipelineResult(graph, series, rates, model, ks, fit, dev, compared)


def write_events_jsonl(events, path, hashtag: str = "#tag") -> None:
    lines = [
        json.dumps({"ts": e.timestamp, "user": e.user, "mentions": list(e.mentions),
                    "text": f"{hashtag} post" if e.tagged else "post"})
        for e in events
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def write_series_csv(series: InfectionTimeSeries, path) -> None:
    """CSV ``bin,degree,x``."""
    rows = ["bin,degree,x"]
    for b, x in enumerate(series.x):
        rows += [f"{b},{l},{v!r}" for l, v in enumerate(x.tolist(), 1)]
    Path(path).write_text("\n".join(rows) + "\n")


def write_rates_csv(rates: EmpiricalRates, path) -> None:
    """CSV ``l,a,p_hat,count`` (``p_hat`` empty for missing cells)."""
    rows = ["l,a,p_hat,count"]
    n = rates.p_hat.shape[0]
    for l in range(n):
        for a in range(l + 1):
            p = "" if rates.missing[l, a] else repr(float(rates.p_hat[l, a]))
            rows.append(f"{l},{a},{p},{int(rates.counts[l, a])}")
    Path(path).write_text("\n".join(rows) + "\n")
