import numpy as np
import pytest
import scipy.sparse as sp

from sisfilter.graph import Graph, generate_erdos_renyi
from sisfilter.sampling import (
    R_MIN,
    SamplingError,
    WalkConfig,
    binomial_observation,
    exact_observation,
    is_bipartite,
    observe,
    proportional_sample_sizes,
    rds_sample,
    uniform_sample,
    write_observations_csv,
    write_walk_log,
)
from sisfilter.sis import infected_fraction_by_degree, random_initial_state


def _cycle(n):
    return Graph(n, [[i, (i + 1) % n] for i in range(n)])


def _ring_lattice(n, k):
    # each node joined to its k nearest neighbours on each side: 2k-regular, non-bipartite for odd n
    return Graph(n, [[i, (i + j) % n] for i in range(n) for j in range(1, k + 1)])


def _assert_psd(obs):
    R = obs.r_cov
    np.testing.assert_array_equal(R, R.T)
    assert np.linalg.eigvalsh(R).min() >= 0


# ------------------------------------------------------------------ uniform


def test_uniform_all_infected():
    g = generate_erdos_renyi(500, 3.0, seed=0)
    gamma = np.where(g.degree_counts[1:] > 0, 20, 0)
    obs = uniform_sample(g, np.ones(500, bool), gamma, seed=1)
    np.testing.assert_array_equal(obs.y, 1.0)
    _assert_psd(obs)


def test_uniform_census_is_exact():
    g = generate_erdos_renyi(500, 3.0, seed=2)
    s = random_initial_state(g, 0.37, rng=3)
    obs = uniform_sample(g, s, g.degree_counts[1:], seed=4)
    x = infected_fraction_by_degree(g, s)
    ok = g.degree_counts[1:] > 0
    np.testing.assert_array_equal(obs.y, x[ok])
    np.testing.assert_array_equal(obs.r_cov, R_MIN * np.eye(ok.sum()))


def test_uniform_binomial_variance_and_bias():
    g = _cycle(1000)
    s = np.zeros(1000, bool)
    s[::2] = True
    ys = np.array([uniform_sample(g, s, [0, 100], seed=i).y[0] for i in range(10_000)])
    assert abs(ys.var(ddof=1) / 0.0025 - 1) < 0.10
    assert abs(ys.mean() - 0.5) < 3 * np.sqrt(0.0025 / len(ys))


def test_uniform_reported_variance_is_plug_in():
    g = _cycle(1000)
    s = np.zeros(1000, bool)
    s[:300] = True
    obs = uniform_sample(g, s, [0, 50], seed=5)
    y = obs.y[0]
    np.testing.assert_allclose(obs.r_cov, [[max(y * (1 - y) / 50, R_MIN)]])
    assert obs.degrees.tolist() == [2] and obs.missing.tolist() == [True, False]
    np.testing.assert_array_equal(obs.c_matrix, [[0.0, 1.0]])


def test_uniform_errors():
    g = _cycle(10)
    with pytest.raises(SamplingError):
        uniform_sample(g, np.zeros(10, bool), [3, 3])
    with pytest.raises(SamplingError):
        uniform_sample(g, np.zeros(10, bool), [0, -1])


def test_full_vector_places_missing_as_nan():
    g = _cycle(10)
    obs = uniform_sample(g, np.ones(10, bool), [0, 10])
    v = obs.full_vector()
    assert np.isnan(v[0]) and v[1] == 1.0


# ---------------------------------------------------------------------- RDS


def test_walk_config_validation():
    with pytest.raises(SamplingError):
        WalkConfig(walk_length=10, burn_in=10)
    with pytest.raises(SamplingError):
        WalkConfig(walk_length=10, n_batches=1)


def test_rds_regular_graph_is_plain_visit_average():
    g = _ring_lattice(101, 2)
    s = np.random.default_rng(0).random(101) < 0.4
    obs = rds_sample(g, s, WalkConfig(walk_length=2000, burn_in=100, seed=1))
    visits = obs.walk[101:]
    np.testing.assert_allclose(obs.y, [s[visits].mean()], rtol=1e-12)
    assert obs.warnings == ()


def test_rds_all_infected():
    g = generate_erdos_renyi(300, 4.0, seed=2)
    obs = rds_sample(g, np.ones(300, bool), WalkConfig(walk_length=3000, seed=3))
    np.testing.assert_allclose(obs.y, 1.0)
    _assert_psd(obs)


def test_rds_long_walk_within_batch_errors():
    g = generate_erdos_renyi(1000, 4.0, seed=4)
    s = random_initial_state(g, np.linspace(0.1, 0.8, g.max_degree), rng=5)
    cc = _giant(g)
    obs = rds_sample(g, s, WalkConfig(walk_length=100_000, burn_in=1000, seed=6), start=int(cc[0]))
    x_cc = _class_fraction(g, s, cc)
    n_visits = obs.sample_sizes
    se = np.sqrt(np.diag(obs.r_cov))
    checked = 0
    for j, l in enumerate(obs.degrees):
        if n_visits[l - 1] >= 100:
            assert abs(obs.y[j] - x_cc[l - 1]) <= 3 * se[j] + 1e-12
            checked += 1
    assert checked >= 4


def _giant(g):
    from scipy.sparse.csgraph import connected_components

    _, lab = connected_components(g.adjacency, directed=False)
    big = np.argmax(np.bincount(lab))
    return np.flatnonzero(lab == big)


def _class_fraction(g, s, nodes):
    L = g.max_degree
    deg = g.degrees[nodes]
    num = np.bincount(deg, weights=s[nodes].astype(float), minlength=L + 1)[1:]
    den = np.bincount(deg, minlength=L + 1)[1:]
    return np.divide(num, den, out=np.zeros(L), where=den > 0)


def test_rds_bias_shrinks_with_walk_length():
    g = generate_erdos_renyi(400, 5.0, seed=7)
    s = random_initial_state(g, np.linspace(0.2, 0.7, g.max_degree), rng=8)
    cc = _giant(g)
    x = _class_fraction(g, s, cc)
    errs = {}
    for n in (1_000, 100_000):
        e = []
        for seed in range(4):
            obs = rds_sample(g, s, WalkConfig(walk_length=n, seed=seed), start=int(cc[seed]))
            keep = obs.sample_sizes[obs.degrees - 1] >= 1
            e.append(np.mean(np.abs(obs.y - x[obs.degrees - 1])[keep]))
        errs[n] = np.mean(e)
    assert errs[100_000] < errs[1_000]


def test_rds_unvisited_degrees_are_missing():
    g = _ring_lattice(51, 1)
    obs = rds_sample(g, np.ones(51, bool), WalkConfig(walk_length=500, seed=0), max_degree=4)
    assert obs.missing.tolist() == [True, False, True, True]
    assert obs.c_matrix.shape == (1, 4)
    assert np.isnan(obs.full_vector()[0])


def test_rds_flags_bipartite_and_disconnected():
    obs = rds_sample(_cycle(10), np.ones(10, bool), WalkConfig(walk_length=200, seed=1))
    assert "bipartite" in obs.warnings
    two = Graph(6, [[0, 1], [1, 2], [0, 2], [3, 4], [4, 5], [3, 5]])
    obs = rds_sample(two, np.ones(6, bool), WalkConfig(walk_length=200, seed=2))
    assert "disconnected" in obs.warnings and "bipartite" not in obs.warnings


def test_is_bipartite():
    assert is_bipartite(_cycle(8).adjacency)
    assert not is_bipartite(_cycle(7).adjacency)


def test_rds_weight_validation():
    g = _cycle(5)
    W = sp.lil_matrix((5, 5))
    W[0, 1] = 1.0
    with pytest.raises(SamplingError):
        rds_sample(g, np.ones(5, bool), WalkConfig(walk_length=10, weights=W.tocsr()))
    with pytest.raises(SamplingError):
        rds_sample(g, np.ones(5, bool), WalkConfig(walk_length=10, weights=sp.eye(3)))


def test_rds_weighted_walk_reweights_by_strength():
    # one heavy edge traps the walk on its endpoints; the 1/pi weights undo the bias
    g = _ring_lattice(31, 2)
    W = g.adjacency.astype(float).tolil()
    W[0, 1] = W[1, 0] = 20.0
    s = np.random.default_rng(9).random(31) < 0.5
    est = np.mean([
        rds_sample(g, s, WalkConfig(walk_length=20_000, burn_in=200, weights=W.tocsr(), seed=i)).y[0]
        for i in range(5)
    ])
    assert abs(est - s.mean()) < 0.05


def test_walk_log(tmp_path):
    g = _ring_lattice(11, 1)
    s = np.zeros(11, bool)
    obs = rds_sample(g, s, WalkConfig(walk_length=5, seed=0))
    write_walk_log(g, s, obs, tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "step,node,degree,state" and len(lines) == 7
    with pytest.raises(SamplingError):
        write_walk_log(g, s, uniform_sample(g, s, [0, 3]), tmp_path / "x.csv")


# ------------------------------------------------------------------ observe


def test_observe_uniform_census():
    g = generate_erdos_renyi(300, 3.0, seed=10)
    s = random_initial_state(g, 0.5, rng=11)
    obs = observe(g, s, "uniform")
    ok = g.degree_counts[1:] > 0
    np.testing.assert_array_equal(obs.y, infected_fraction_by_degree(g, s)[ok])
    np.testing.assert_array_equal(obs.r_cov, R_MIN * np.eye(ok.sum()))


def test_observe_constant_r_override():
    g = generate_erdos_renyi(300, 3.0, seed=12)
    s = random_initial_state(g, 0.5, rng=13)
    gamma = np.where(g.degree_counts[1:] > 0, 10, 0)
    obs = observe(g, s, "uniform", {"gamma": gamma, "seed": 1, "r_override": 5e-3})
    np.testing.assert_array_equal(obs.r_cov, 5e-3 * np.eye(len(obs.y)))


def test_observe_rds_on_regular_graph_matches_uniform_in_expectation():
    g = _ring_lattice(201, 3)
    s = np.random.default_rng(14).random(201) < 0.3
    L = g.max_degree
    rds = [observe(g, s, "rds", {"walk_length": 4000, "burn_in": 100, "seed": i}).y[0] for i in range(40)]
    uni = [observe(g, s, "uniform", {"gamma": np.eye(L, dtype=int)[L - 1] * 200, "seed": i}).y[0]
           for i in range(40)]
    se = np.sqrt(np.var(rds, ddof=1) / 40 + np.var(uni, ddof=1) / 40)
    assert abs(np.mean(rds) - np.mean(uni)) < 3 * se


def test_observe_unknown_method():
    with pytest.raises(SamplingError):
        observe(_cycle(5), np.ones(5, bool), "snowball")


# ------------------------------------------------- population-level sampling


def test_binomial_observation():
    obs = binomial_observation([0.0, 1.0, 0.5], [10, 10, 0], seed=0)
    np.testing.assert_array_equal(obs.y, [0.0, 1.0])
    np.testing.assert_array_equal(obs.r_cov, R_MIN * np.eye(2))
    assert obs.missing.tolist() == [False, False, True]
    over = binomial_observation([0.3, 0.6], [100, 100], seed=1, r_override=[1e-3, 2e-3])
    np.testing.assert_array_equal(over.r_cov, np.diag([1e-3, 2e-3]))
    with pytest.raises(SamplingError):
        binomial_observation([0.3], [-1])
    with pytest.raises(SamplingError):
        binomial_observation([0.3, 0.4], [5, 5], r_override=np.ones((3, 3)))


def test_proportional_sample_sizes():
    np.testing.assert_array_equal(proportional_sample_sizes([0.7, 0.2999, 0.0001], 1000), [700, 300, 1])


def test_exact_observation():
    g = Graph(3, [[0, 1], [1, 2]])
    obs = exact_observation(g, np.array([1, 0, 0], bool))
    np.testing.assert_allclose(obs.y, [0.5, 0.0])


def test_observations_csv(tmp_path):
    obs = binomial_observation([0.5, 0.5], [4, 0], seed=2)
    write_observations_csv([obs, None, obs], tmp_path / "o.csv")
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0] == "t,degree,y,r_ll,gamma"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0", "2"]
    assert lines[1].split(",")[1] == "1" and lines[1].split(",")[4] == "4"
    float(lines[1].split(",")[2])
