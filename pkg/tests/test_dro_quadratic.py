import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import box_problem, consumer_problem, interval_problem
from oracles import grid_worst_case_cvar
from dro_invopt.agent import Quadratic, forward_solve
from dro_invopt.data import Dataset
from dro_invopt.dro_linear import EmptyBallError
from dro_invopt.dro_quadratic import (
    Exactness, QuadDroSolution, QuadraticSearchSpace, Wasserstein2, check_exactness, erm_first_order,
    exactness_matrix, solve_dro_quadratic, worst_case_risk_quadratic,
)
from dro_invopt.losses import first_order_loss, suboptimality_loss
from dro_invopt.risk import cvar

SQ = Quadratic([[1.0]], [[0.0]], [0.0])


def _fake_solution(hyp, lam):
    return QuadDroSolution(hyp, 0.0, {"lambda": lam}, "optimal", None, 0.1, 1.0, 0.0, "quadratic", {})


def test_exactness_examples():
    hyp = Quadratic(np.eye(2), np.zeros((2, 2)), np.zeros(2))
    assert check_exactness(_fake_solution(hyp, 2.0)) is Exactness.EXACT_CERTIFIED
    assert check_exactness(_fake_solution(hyp, 0.5)) is Exactness.POSSIBLY_CONSERVATIVE
    M = exactness_matrix(hyp.Qxx, hyp.Qxs, 2.0)
    assert np.allclose(np.sort(np.linalg.eigvalsh(M)), [1, 1, 1, 1, 2, 2])


def _consistent_quad_data(rng, n=2, N=4):
    prob = consumer_problem(n)
    Q = rng.normal(size=(n, n))
    truth = Quadratic(np.eye(n) + Q @ Q.T / n, np.eye(n), rng.uniform(-3, 0, n))
    S = rng.uniform(0, 1, (N, n))
    X = np.array([np.clip(forward_solve(prob, truth, s)[0] + rng.uniform(-0.3, 0.3, n), 0, 5) for s in S])
    return prob, Dataset.from_arrays(prob, S, X)


@pytest.mark.parametrize("alpha", [0.5, 1.0])
def test_zero_radius_equals_empirical_cvar(rng, alpha):
    prob, ds = _consistent_quad_data(rng)
    sol = solve_dro_quadratic(prob, ds, QuadraticSearchSpace.strongly_convex(), Wasserstein2(0.0), alpha)
    losses = [suboptimality_loss(prob, sol.theta_hat, s, x) for s, x in ds.pairs()]
    assert sol.certificate == pytest.approx(cvar(losses, alpha), abs=1e-5)
    assert sol.exactness == Exactness.EXACT_CERTIFIED.value


def test_one_d_fixed_hypothesis_matches_brute_force(interval):
    ds = Dataset.from_arrays(interval, [[0.0]], [[0.5]])
    sol = worst_case_risk_quadratic(interval, ds, SQ, Wasserstein2(0.1))
    assert sol.exactness == Exactness.EXACT_CERTIFIED.value
    # single-atom moves within the budget: the best is y = 0.6
    ys = np.linspace(-1, 1, 20001)
    single = max(y ** 2 for y in ys if abs(y - 0.5) <= 0.1 + 1e-12)
    assert sol.certificate == pytest.approx(single, abs=1e-4)
    grid = np.column_stack([np.zeros(201), np.linspace(-1, 1, 201)])
    brute = grid_worst_case_cvar(grid[:, 1] ** 2, grid, [[0.0, 0.5]], 0.1)
    assert sol.certificate == pytest.approx(brute, abs=1e-4)


def test_inconsistent_sample_empty_ball(interval):
    ds = Dataset.from_arrays(interval, [[0.0]], [[1.2]])
    with pytest.raises(EmptyBallError):
        solve_dro_quadratic(interval, ds, QuadraticSearchSpace.strongly_convex(), Wasserstein2(0.05))
    sol = solve_dro_quadratic(interval, ds, QuadraticSearchSpace.strongly_convex(), Wasserstein2(0.3))
    assert np.isfinite(sol.certificate)


def test_band_absorbs_losses(rng):
    prob, ds = _consistent_quad_data(rng)
    space = QuadraticSearchSpace.strongly_convex()
    base = solve_dro_quadratic(prob, ds, space, Wasserstein2(0.0))
    worst = max(suboptimality_loss(prob, base.theta_hat, s, x) for s, x in ds.pairs())
    sol = solve_dro_quadratic(prob, ds, space, Wasserstein2(0.0), delta=worst + 1e-3)
    assert sol.certificate == pytest.approx(0.0, abs=1e-5)


@given(st.integers(0, 10_000), st.sampled_from([0.05, 0.1, 0.2]))
def test_safe_upper_bound_on_grid_worst_case(seed, eps):
    rng = np.random.default_rng(seed)
    prob = box_problem(1, 0.0, 1.0)
    N = int(rng.integers(1, 4))
    X = rng.uniform(0, 1, (N, 1))
    ds = Dataset.from_arrays(prob, np.zeros((N, 1)), X)
    a = rng.uniform(0.2, 2.0)
    hyp = Quadratic([[a]], [[0.0]], [rng.uniform(-2, 1)])
    sol = worst_case_risk_quadratic(prob, ds, hyp, Wasserstein2(eps))
    xs = np.concatenate([np.linspace(0, 1, 101), X[:, 0]])
    z = forward_solve(prob, hyp, [0.0])[1]
    losses = np.array([hyp.value([0.0], [x]) - z for x in xs])
    grid = np.column_stack([np.zeros_like(xs), xs])
    brute = grid_worst_case_cvar(losses, grid, np.hstack([np.zeros((N, 1)), X]), eps)
    assert sol.certificate >= brute - 1e-4
    if sol.exactness == Exactness.EXACT_CERTIFIED.value:
        assert sol.certificate <= brute + 5e-3


@given(st.integers(0, 10_000))
def test_certificate_monotone_in_radius(seed):
    rng = np.random.default_rng(seed)
    prob, ds = _consistent_quad_data(rng, n=1, N=3)
    space = QuadraticSearchSpace.strongly_convex()
    c = [solve_dro_quadratic(prob, ds, space, Wasserstein2(e)).certificate for e in (0.0, 0.05, 0.2)]
    assert c[0] <= c[1] + 1e-6 <= c[2] + 2e-6


def test_bilinear_space_pins_cross_term(rng):
    prob, ds = _consistent_quad_data(rng)
    sol = solve_dro_quadratic(prob, ds, QuadraticSearchSpace.bilinear(), Wasserstein2(0.05))
    assert np.allclose(sol.theta_hat.Qxs, np.eye(2))
    assert np.linalg.eigvalsh(sol.theta_hat.Qxx).min() >= -1e-7
    assert sol.duals["lambda"] >= -1e-8


def test_nominal_ball_space(rng):
    prob, ds = _consistent_quad_data(rng)
    center = Quadratic(np.eye(2), np.eye(2), -np.ones(2))
    sol = solve_dro_quadratic(prob, ds, QuadraticSearchSpace.nominal_ball(center, 0.5), Wasserstein2(0.05))
    th = sol.theta_hat
    stacked = np.concatenate([(th.Qxx - center.Qxx).ravel(), (th.Qxs - center.Qxs).ravel(), th.q - center.q])
    assert np.linalg.norm(stacked) <= 0.5 + 1e-6


def test_first_order_erm_dominates_suboptimality_erm(rng):
    prob, ds = _consistent_quad_data(rng)
    space = QuadraticSearchSpace.strongly_convex()
    sf = erm_first_order(prob, ds, space)
    ss = solve_dro_quadratic(prob, ds, space, Wasserstein2(0.0))
    assert ss.certificate <= sf.certificate + 1e-6
    losses = [first_order_loss(prob, sf.theta_hat, s, x) for s, x in ds.pairs()]
    assert sf.certificate == pytest.approx(np.mean(losses), abs=1e-5)


def test_wasserstein2_validation():
    with pytest.raises(ValueError):
        Wasserstein2(0.1, p=1)
    with pytest.raises(ValueError):
        Wasserstein2(-1.0)
    with pytest.raises(ValueError):
        QuadraticSearchSpace("diagonal")
