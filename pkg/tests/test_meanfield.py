import warnings

import numpy as np
import pytest
from scipy import optimize

from sisfilter.evolution import diffusion_threshold_closed_form
from sisfilter.meanfield import (
    CapacityError,
    RangeWarning,
    asymptotic_state,
    build_dynamics,
    dense_tensors,
    jacobian,
    link_weights,
    load_dynamics,
    mean_field_step,
    save_dynamics,
    simulate_mean_field,
)
from sisfilter.sis import TransitionKernel


def _balance_dyn():
    # L = 1, P21(1,0) = 0, P21(1,1) = 0.4, P12 = 0.2, M = 1
    p21 = np.array([[0.0, 0.0], [0.0, 0.4]])
    p12 = np.full((2, 2), 0.2)
    return build_dynamics(TransitionKernel(p12, p21), [1.0], 1.0)


def _random_rho(L, rng):
    r = rng.random(L) + 0.05
    return r / r.sum()


# -------------------------------------------------------------------- build


def test_link_weights():
    np.testing.assert_allclose(link_weights([0.5, 0.5]), [1 / 3, 2 / 3])


def test_build_errors():
    k = TransitionKernel.constant(3, 0.1, 0.1)
    with pytest.raises(ValueError):
        build_dynamics(k, [0.5, 0.0, 0.5])
    with pytest.raises(ValueError):
        build_dynamics(k, [0.5, 0.4, 0.05])
    with pytest.raises(ValueError):
        build_dynamics(TransitionKernel.constant(2, 0.1, 0.1), [0.25] * 4)
    with pytest.raises(ValueError):
        build_dynamics(k, [0.5, 0.25, 0.25], m=0)


def test_lambda_zero_is_identity():
    rng = np.random.default_rng(0)
    dyn = build_dynamics(TransitionKernel.random(4, rng=1, lam=0.0), _random_rho(4, rng))
    x = rng.random(4)
    np.testing.assert_allclose(mean_field_step(dyn, x), x)
    np.testing.assert_allclose(jacobian(dyn, x), np.eye(4))
    traj = simulate_mean_field(dyn, x, 10)
    assert np.all(traj.x == x) and not traj.any_flagged


def test_balance_example():
    dyn = _balance_dyn()
    np.testing.assert_allclose(mean_field_step(dyn, [0.5]), [0.5], atol=1e-15)
    # f(x) = x + 0.4 x (1 - x) - 0.2 x, so f'(0.5) = 1 + 0.4 * 0 - 0.2
    np.testing.assert_allclose(jacobian(dyn, [0.5]), [[0.8]], atol=1e-15)
    np.testing.assert_allclose(jacobian(dyn, [0.2]), [[1 + 0.4 * 0.6 - 0.2]], atol=1e-15)


def test_rate_endpoints_are_binomial_endpoints():
    k = TransitionKernel.random(5, rng=2, lam=0.7)
    dyn = build_dynamics(k, _random_rho(5, np.random.default_rng(3)))
    g0 = dyn.rates(0.0)[0]
    g1 = dyn.rates(1.0)[0]
    l = np.arange(1, 6)
    np.testing.assert_allclose(g0, 0.7 * k.p21[l, 0], atol=1e-15)
    np.testing.assert_allclose(g1, 0.7 * k.p21[l, l], atol=1e-15)


def test_disease_free_fixed_point():
    k = TransitionKernel.random(4, rng=4, spontaneous=False)
    dyn = build_dynamics(k, _random_rho(4, np.random.default_rng(5)))
    np.testing.assert_array_equal(mean_field_step(dyn, np.zeros(4)), np.zeros(4))
    traj = simulate_mean_field(dyn, np.zeros(4), 25)
    assert np.all(traj.x == 0)


def test_map_preserves_unit_box():
    rng = np.random.default_rng(6)
    for _ in range(50):
        L = int(rng.integers(1, 7))
        dyn = build_dynamics(TransitionKernel.random(L, rng=rng), _random_rho(L, rng), m=float(rng.integers(1, 100)))
        traj = simulate_mean_field(dyn, rng.random(L), 30)
        assert not traj.any_flagged


def test_range_excursion_is_flagged_not_clamped():
    dyn = build_dynamics(TransitionKernel.constant(1, 0.0, 1.0), [1.0], m=0.1)
    with pytest.warns(RangeWarning):
        out = mean_field_step(dyn, [0.5])
    assert out[0] > 1
    traj = simulate_mean_field(dyn, [0.5], 2)
    assert traj.flagged.tolist() == [False, True, True]


def test_m_scales_the_increment():
    k = TransitionKernel.random(3, rng=7)
    rho = _random_rho(3, np.random.default_rng(8))
    x = np.array([0.2, 0.5, 0.9])
    d1 = build_dynamics(k, rho, 1.0).evaluate(x) - x
    d50 = build_dynamics(k, rho, 50.0).evaluate(x) - x
    np.testing.assert_allclose(d50, d1 / 50, rtol=1e-13)


def test_simulate_errors():
    dyn = _balance_dyn()
    with pytest.raises(ValueError):
        simulate_mean_field(dyn, [0.1, 0.2], 3)
    with pytest.raises(ValueError):
        simulate_mean_field(dyn, [0.1], -1)


# ----------------------------------------------------------------- jacobian


def test_jacobian_matches_central_differences():
    rng = np.random.default_rng(9)
    for _ in range(100):
        L = int(rng.integers(1, 8))
        dyn = build_dynamics(TransitionKernel.random(L, rng=rng), _random_rho(L, rng), float(rng.integers(1, 10)))
        x = rng.random(L)
        J = dyn.jacobian(x)
        h = 1e-6
        fd = np.empty((L, L))
        for m in range(L):
            e = np.zeros(L)
            e[m] = h
            fd[:, m] = (dyn.evaluate(x + e) - dyn.evaluate(x - e)) / (2 * h)
        assert np.linalg.norm(J - fd) / np.linalg.norm(J) < 1e-6


def test_jacobian_batched():
    rng = np.random.default_rng(10)
    dyn = build_dynamics(TransitionKernel.random(3, rng=rng), _random_rho(3, rng))
    xs = rng.random((5, 3))
    J = dyn.jacobian(xs)
    assert J.shape == (5, 3, 3)
    np.testing.assert_allclose(J[2], dyn.jacobian(xs[2]))


# ------------------------------------------------------------ dense tensors


def test_dense_tensor_constant_term_degree_one():
    k = TransitionKernel.random(1, rng=11, lam=0.6)
    dyn = build_dynamics(k, [1.0], m=7.0)
    A = dense_tensors(dyn).tensors
    np.testing.assert_allclose(A[0], [0.6 * k.p21[1, 0] / 7.0], rtol=1e-14)


def test_dense_tensor_constant_term_degree_two():
    # the l = 2 constant is the infection rate with no infected neighbours
    k = TransitionKernel.random(2, rng=12, lam=0.8)
    dyn = build_dynamics(k, [0.6, 0.4], m=3.0)
    A = dense_tensors(dyn).tensors
    np.testing.assert_allclose(A[0][1], 0.8 * k.p21[2, 0] / 3.0, rtol=1e-14)
    # linear alpha-coefficient of the inflow: 2 lam (P21(2,1) - P21(2,0)) / M along phi
    inflow = 2 * 0.8 * (k.p21[2, 1] - k.p21[2, 0]) / 3.0
    outflow_const = -(0.8 * k.p21[2, 0] + 0.8 * k.p12[2, 0]) / 3.0
    expected = inflow * dyn.phi
    expected[1] += 1.0 + outflow_const
    np.testing.assert_allclose(A[1][1], expected, rtol=1e-12, atol=1e-15)


def test_dense_tensors_match_per_degree_form():
    rng = np.random.default_rng(13)
    for _ in range(5):
        dyn = build_dynamics(TransitionKernel.random(3, rng=rng), _random_rho(3, rng), m=float(rng.integers(1, 5)))
        T = dense_tensors(dyn)
        assert T.order == 4
        xs = rng.dirichlet(np.ones(3), size=100)
        for x in xs:
            np.testing.assert_allclose(T.evaluate(x), dyn.evaluate(x), rtol=0, atol=1e-10)


def test_dense_tensor_capacity():
    dyn = build_dynamics(TransitionKernel.random(3, rng=14), [0.5, 0.3, 0.2])
    with pytest.raises(CapacityError):
        dense_tensors(dyn, max_order=2)
    big = build_dynamics(TransitionKernel.random(12, rng=15), np.full(12, 1 / 12))
    with pytest.raises(CapacityError):
        dense_tensors(big)


def test_polynomial_degree_follows_complex_degree():
    for c in (1, 2, 3):
        k = TransitionKernel.random(6, rng=c, complex_degree=c)
        dyn = build_dynamics(k, np.full(6, 1 / 6))
        assert dyn.degree == c + 1


# -------------------------------------------------------- asymptotic state


def test_pure_recovery_decays_to_zero():
    k = TransitionKernel.constant(3, 0.3, 0.0)
    dyn = build_dynamics(k, [0.2, 0.5, 0.3])
    fp = asymptotic_state(dyn, [0.9, 0.5, 0.1])
    assert fp.converged
    np.testing.assert_allclose(fp.x, 0, atol=1e-10)


def test_balance_fixed_point_matches_root_finder():
    dyn = _balance_dyn()
    fp = asymptotic_state(dyn, [0.1], tol=1e-14)
    root = optimize.brentq(lambda x: (1 - x) * 0.4 * x - 0.2 * x, 1e-3, 1.0)
    assert fp.converged
    np.testing.assert_allclose(fp.x, [root], atol=1e-10)


def test_scalar_logistic_fixed_point():
    # L = 1 with P21(1,1) = b, P21(1,0) = s, P12 = d
    b, s, d = 0.7, 0.05, 0.3
    p21 = np.array([[0, 0], [s, b]])
    dyn = build_dynamics(TransitionKernel(np.full((2, 2), d), p21), [1.0])
    fp = asymptotic_state(dyn, [0.01], tol=1e-14)
    root = optimize.brentq(lambda x: (1 - x) * (s * (1 - x) + b * x) - d * x, 0.0, 1.0)
    np.testing.assert_allclose(fp.x, [root], atol=1e-9)


def test_below_closed_form_threshold_dies_out():
    rho = np.array([0.5, 0.3, 0.2])
    p21 = np.zeros((4, 4))
    for l in range(1, 4):
        p21[l, 1:l + 1] = 0.3
    k = TransitionKernel(np.ones((4, 4)), p21, scale_recovery=False)
    lam_star = diffusion_threshold_closed_form(rho, k)
    below = build_dynamics(k.with_lambda(0.9 * lam_star), rho)
    fp = asymptotic_state(below, np.full(3, 0.01), tol=1e-13)
    assert np.max(fp.x) < 1e-8
    above = build_dynamics(k.with_lambda(min(1.2 * lam_star, 1 / 0.3)), rho)
    assert np.max(asymptotic_state(above, np.full(3, 0.01), tol=1e-13).x) > 1e-4


def test_asymptotic_reports_non_convergence():
    dyn = _balance_dyn()
    fp = asymptotic_state(dyn, [0.01], tol=1e-14, max_iter=3)
    assert not fp.converged and fp.n_iter == 3
    with pytest.raises(ValueError):
        asymptotic_state(dyn, [0.1], tol=0)


# ---------------------------------------------------------------------- I/O


def test_dynamics_json_round_trip(tmp_path):
    dyn = build_dynamics(TransitionKernel.random(4, rng=16, lam=0.9), [0.1, 0.2, 0.3, 0.4], m=12.0)
    save_dynamics(dyn, tmp_path / "d.json")
    back = load_dynamics(tmp_path / "d.json")
    x = np.array([0.3, 0.1, 0.7, 0.5])
    np.testing.assert_array_equal(back.evaluate(x), dyn.evaluate(x))
    assert set(dyn.to_dict()) == {"rho", "phi", "lambda", "c_inc", "c_dec", "M"}


def test_no_warning_inside_box():
    dyn = _balance_dyn()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        mean_field_step(dyn, [0.3])
