import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import interval_problem, polytope_dataset, random_polytope_problem, transport_distance
from dro_invopt.agent import Linear
from dro_invopt.data import Dataset
from dro_invopt.dro_linear import (
    EmptyBallError, LinearSearchSpace, WassersteinSpec, solve_dro_linear, transport_floor,
    worst_case_distribution, worst_case_risk,
)
from dro_invopt.losses import suboptimality_loss
from dro_invopt.risk import cvar, weighted_cvar


def _one_d_brute_force(eps, theta, grid=401):
    """Worst-case expected loss on X=[-1,1] from a point mass at x=1.

    Mass ``w`` moves to ``y`` at cost ``w |1 - y|``; a two-atom search over a
    grid covers the extreme points of the ball here.
    """
    ys = np.linspace(-1, 1, grid)
    ws = np.linspace(0, 1, grid)
    loss = lambda x: theta * x + 1.0  # min over [-1,1] of theta*x is -1 for |theta| = 1
    best = loss(1.0)
    for w in ws:
        cost = w * np.abs(1 - ys)
        val = (1 - w) * loss(1.0) + w * loss(ys)
        ok = cost <= eps + 1e-12
        if ok.any():
            best = max(best, val[ok].max())
    return best


@pytest.mark.parametrize("eps", [0.1, 0.5, 3.0])
def test_one_d_analytic_law(interval, one_d_data, eps):
    sol = solve_dro_linear(interval, one_d_data, LinearSearchSpace.inf_sphere(), WassersteinSpec(eps))
    assert sol.theta[0] == pytest.approx(-1.0)
    assert sol.certificate == pytest.approx(min(eps, 2.0), abs=1e-6)
    brute = min(_one_d_brute_force(eps, -1.0), _one_d_brute_force(eps, 1.0))
    assert sol.certificate == pytest.approx(brute, abs=1e-2)
    assert sol.facet_index == 0


def test_one_d_worst_case_distribution(interval, one_d_data):
    value, dist = worst_case_distribution(interval, one_d_data, [-1.0], WassersteinSpec(0.5))
    assert value == pytest.approx(0.5, abs=1e-6)
    losses = [suboptimality_loss(interval, Linear([-1.0]), s, x) for s, x in zip(dist.S, dist.X)]
    assert np.dot(dist.weights, losses) == pytest.approx(0.5, abs=1e-6)
    w1 = transport_distance(dist.points(), dist.weights, np.array([[0.0, 1.0]]), [1.0])
    assert w1 <= 0.5 + 1e-5


def test_zero_radius_collapses_to_empirical(rng):
    prob, A = random_polytope_problem(rng, 3, 2)
    theta0 = np.array([1.0, 0.5, -1.0])
    ds = polytope_dataset(rng, prob, A, 5, theta0, noise=0.8)
    sol = solve_dro_linear(prob, ds, LinearSearchSpace.norm_ball(theta0, 0.5), WassersteinSpec(0.0))
    losses = [suboptimality_loss(prob, sol.theta_hat, s, x) for s, x in ds.pairs()]
    assert sol.certificate == pytest.approx(np.mean(losses), abs=1e-6)
    value, dist = worst_case_distribution(prob, ds, sol.theta, WassersteinSpec(0.0))
    assert value == pytest.approx(np.mean(losses), abs=1e-6)
    assert transport_distance(dist.points(), dist.weights, np.hstack([ds.S, ds.X]),
                              np.full(ds.N, 1 / ds.N)) <= 1e-5


def test_bounded_rationality_band_absorbs_losses(rng):
    prob, A = random_polytope_problem(rng, 3, 2)
    theta0 = np.array([1.0, 0.5, -1.0])
    ds = polytope_dataset(rng, prob, A, 5, theta0, noise=0.8)
    worst = max(suboptimality_loss(prob, Linear(theta0), s, x) for s, x in ds.pairs())
    sol = solve_dro_linear(prob, ds, LinearSearchSpace.norm_ball(theta0, 0.5), WassersteinSpec(0.0),
                           delta=worst + 1e-3)
    assert sol.certificate == pytest.approx(0.0, abs=1e-6)
    assert sol.duals["tau"] >= -1e-8


@pytest.mark.parametrize("seed", range(6))
def test_primal_dual_sandwich(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    prob, A = random_polytope_problem(rng, n, m)
    ds = polytope_dataset(rng, prob, A, int(rng.integers(1, 6)), rng.normal(size=n), noise=0.9)
    theta = rng.normal(size=n)
    alpha = float(rng.choice([0.5, 1.0]))
    eps = float(rng.choice([0.0, 0.1, 1.0]))
    wass = WassersteinSpec(eps)
    value, dist = worst_case_distribution(prob, ds, theta, wass, alpha)
    assert value == pytest.approx(worst_case_risk(prob, ds, theta, wass, alpha), abs=1e-5)
    losses = [suboptimality_loss(prob, Linear(theta), s, x) for s, x in zip(dist.S, dist.X)]
    assert weighted_cvar(losses, dist.weights, alpha) >= value - 1e-5
    assert all(prob.is_consistent(s, x, 1e-5) for s, x in zip(dist.S, dist.X))
    w1 = transport_distance(dist.points(), dist.weights, np.hstack([ds.S, ds.X]), np.full(ds.N, 1 / ds.N))
    assert w1 <= eps + 1e-5


@given(st.integers(0, 10_000), st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_certificate_monotone_in_radius(seed, e1, e2):
    rng = np.random.default_rng(seed)
    prob, A = random_polytope_problem(rng, 2, 2)
    theta0 = np.array([1.0, -0.5])
    ds = polytope_dataset(rng, prob, A, 3, theta0, noise=0.5)
    space = LinearSearchSpace.norm_ball(theta0, 0.5)
    lo, hi = sorted((e1, e2))
    c_lo = solve_dro_linear(prob, ds, space, WassersteinSpec(lo)).certificate
    c_hi = solve_dro_linear(prob, ds, space, WassersteinSpec(hi)).certificate
    assert c_hi >= c_lo - 1e-6


@given(st.integers(0, 10_000), st.sampled_from([0.25, 0.5, 1.0]), st.floats(0.0, 0.3))
def test_certificate_bounds_empirical_cvar(seed, alpha, eps):
    rng = np.random.default_rng(seed)
    prob, A = random_polytope_problem(rng, 2, 2)
    ds = polytope_dataset(rng, prob, A, 4, np.array([0.5, 1.0]), noise=0.7)
    sol = solve_dro_linear(prob, ds, LinearSearchSpace.inf_sphere(), WassersteinSpec(eps), alpha)
    losses = [suboptimality_loss(prob, sol.theta_hat, s, x) for s, x in ds.pairs()]
    assert sol.certificate >= cvar(losses, alpha) - 1e-6
    assert sol.duals["lambda"] >= -1e-8
    assert LinearSearchSpace.inf_sphere().contains(sol.theta, 1e-6)


def test_inf_sphere_visits_every_facet(rng):
    prob, A = random_polytope_problem(rng, 3, 2)
    ds = polytope_dataset(rng, prob, A, 3, np.array([0.2, 1.0, -0.3]), noise=0.5)
    sol = solve_dro_linear(prob, ds, LinearSearchSpace.inf_sphere(), WassersteinSpec(0.05))
    vals = sol.info["piece_values"]
    assert sorted(vals) == list(range(6))
    assert sol.certificate == pytest.approx(min(v for v in vals.values() if v is not None))


def test_simplex_face_space(rng):
    prob, A = random_polytope_problem(rng, 3, 2)
    ds = polytope_dataset(rng, prob, A, 3, np.array([0.2, 0.5, 0.3]), noise=0.5)
    sol = solve_dro_linear(prob, ds, LinearSearchSpace.simplex_face(), WassersteinSpec(0.05))
    assert sol.theta.min() >= -1e-7 and sol.theta.sum() == pytest.approx(1.0)


def test_empty_ball_for_inconsistent_data(interval):
    ds = Dataset.from_arrays(interval, [[0.0]], [[1.5]])
    assert not ds.consistent[0]
    assert transport_floor(interval, ds) == pytest.approx(0.5, abs=1e-6)
    with pytest.raises(EmptyBallError):
        solve_dro_linear(interval, ds, LinearSearchSpace.inf_sphere(), WassersteinSpec(0.2))
    sol = solve_dro_linear(interval, ds, LinearSearchSpace.inf_sphere(), WassersteinSpec(0.8))
    assert np.isfinite(sol.certificate)


def test_argument_validation(interval, one_d_data):
    with pytest.raises(ValueError):
        WassersteinSpec(-0.1)
    with pytest.raises(ValueError):
        solve_dro_linear(interval, one_d_data, LinearSearchSpace.inf_sphere(), WassersteinSpec(0.1), alpha=0.0)
    with pytest.raises(ValueError):
        solve_dro_linear(interval, one_d_data, LinearSearchSpace.inf_sphere(), WassersteinSpec(0.1), delta=-1)
    with pytest.raises(ValueError):
        LinearSearchSpace("cube")
    with pytest.warns(UserWarning):
        solve_dro_linear(interval, one_d_data, LinearSearchSpace.norm_ball([0.5], 1.0), WassersteinSpec(0.1))


def test_solution_serializes(interval, one_d_data):
    sol = solve_dro_linear(interval, one_d_data, LinearSearchSpace.inf_sphere(), WassersteinSpec(0.5))
    d = json.loads(sol.to_json())
    assert d["certificate"] == pytest.approx(0.5, abs=1e-6)
    space = LinearSearchSpace.norm_ball([1.0, 2.0], 0.5)
    assert LinearSearchSpace.from_dict(space.to_dict()).contains([1.2, 2.1])
