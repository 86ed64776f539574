import json
import math

import numpy as np
import pytest

from dro_invopt.conic import membership
from dro_invopt.experiments import (
    BR, DEFAULT_GRID, LINEAR_BOUNDED, LINEAR_CONSISTENT, PRED, QUAD_CONSISTENT, QUAD_INCONSISTENT,
    QUAD_MODEL, SUBOPT, ConfigError, ScenarioSpec, cross_validate_radius, evaluate_losses,
    fit_method, fold_partition, generate_dataset, generate_instance, instance_from_dict,
    out_of_sample_risk, reproduce, rng_stream, run_eps_sweep, run_learning_curve, solve_at,
    summarize,
)
from dro_invopt.losses import suboptimality_loss
from dro_invopt.risk import RiskSpec

SMALL_LIN = ScenarioSpec(LINEAR_CONSISTENT, m=3, n=3, N_train=6, N_test=40, replications=2, master_seed=11)
SMALL_QUAD = ScenarioSpec(QUAD_CONSISTENT, m=3, n=3, N_train=6, N_test=30, replications=2, master_seed=5)


def test_grid_and_streams():
    assert DEFAULT_GRID == (1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1, 5e-1)
    a = rng_stream(3, 1).uniform(size=5)
    assert np.array_equal(a, rng_stream(3, 1).uniform(size=5))
    assert not np.array_equal(a, rng_stream(3, 2).uniform(size=5))
    with pytest.raises(ConfigError):
        rng_stream(-1, 1)


def test_scenario_defaults_and_validation():
    assert ScenarioSpec(LINEAR_CONSISTENT).delta == 1.0
    assert ScenarioSpec(QUAD_CONSISTENT).delta == 0.2
    assert ScenarioSpec().N_test == 1000
    for bad in (dict(kind="nope"), dict(n=0), dict(kind=QUAD_CONSISTENT, m=2, n=3), dict(delta=-1.0)):
        with pytest.raises(ConfigError):
            ScenarioSpec(**bad)
    with pytest.raises(ConfigError):
        ScenarioSpec.from_json('{"kind": "LinearConsistentNoise", "colour": 1}')
    with pytest.raises(ConfigError, match="line 2"):
        ScenarioSpec.from_json('{\n"kind": }')
    assert ScenarioSpec.from_json(json.dumps(SMALL_LIN.to_dict())) == SMALL_LIN


def test_instance_determinism_and_round_trip():
    a = generate_instance(SMALL_LIN, 4)
    b = generate_instance(SMALL_LIN, 4)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    c = instance_from_dict(json.loads(json.dumps(a.to_dict())))
    assert np.array_equal(c.params["A"], a.params["A"])
    assert np.array_equal(c.true_hyp.theta, a.true_hyp.theta)
    assert json.dumps(generate_instance(SMALL_LIN, 5).to_dict()) != json.dumps(a.to_dict())


@pytest.mark.parametrize("seed", range(5))
def test_linear_instance_construction(seed):
    inst = generate_instance(SMALL_LIN, seed)
    A, theta0 = inst.params["A"], inst.params["theta0"]
    assert np.all(np.abs(A) <= 1)
    assert 1.0 <= np.abs(theta0).max() <= 5.0
    assert np.abs(inst.true_hyp.theta - theta0).max() <= 1.0
    a1 = np.abs(A).sum(axis=1)
    S = inst.prob.signal_set
    assert membership(S, a1, 1e-9) and membership(S, -a1, 1e-9)
    assert not membership(S, a1 + 0.01, 1e-9)
    ds = generate_dataset(inst, split="train")
    assert np.all(np.abs(ds.S) <= a1 + 1e-12)
    # v1 is feasible for its own signal, so X(s) is nonempty
    assert ds.consistent.all()


@pytest.mark.parametrize("seed", range(5))
def test_quadratic_instance_construction(seed):
    inst = generate_instance(SMALL_QUAD, seed)
    eig = np.linalg.eigvalsh(inst.true_hyp.Qxx)
    assert eig.min() >= 0.2 - 1e-9 and eig.max() <= 1.0 + 1e-9
    assert np.allclose(np.sort(eig), np.sort(inst.params["eigenvalues"]), atol=1e-9)
    assert np.all((-2 <= inst.params["q"]) & (inst.params["q"] <= 0))
    lo, hi = inst.prob.box_bounds()
    assert np.allclose(lo, 0) and np.allclose(hi, 5)


def test_model_uncertainty_instance():
    inst = generate_instance(SMALL_QUAD.replace(kind=QUAD_MODEL), 2)
    assert np.all((0.5 <= inst.params["a"]) & (inst.params["a"] <= 1))
    assert np.all((0 <= inst.params["b"]) & (inst.params["b"] <= 0.25))


def test_dataset_flags_and_determinism():
    spec = SMALL_QUAD.replace(kind=QUAD_INCONSISTENT, N_train=30)
    inst = generate_instance(spec, 1)
    ds = generate_dataset(inst, split="train")
    again = generate_dataset(inst, split="train")
    assert np.array_equal(ds.X, again.X) and np.array_equal(ds.consistent, again.consistent)
    xi = inst.prob.support_set()
    recomputed = [membership(xi, np.concatenate([s, x]), 1e-6) for s, x in ds.pairs()]
    assert list(ds.consistent) == recomputed
    assert not ds.consistent.all()
    test = generate_dataset(inst, split="test")
    assert not np.array_equal(test.S[:5], ds.S[:5])
    with pytest.raises(ConfigError):
        generate_dataset(inst, split="valid")


def test_test_set_prefix_extends():
    inst = generate_instance(SMALL_LIN, 3)
    small = generate_dataset(inst, split="test", N=10)
    big = generate_dataset(inst, split="test", N=20)
    assert np.array_equal(small.S, big.S[:10]) and np.array_equal(small.X, big.X[:10])


def test_bounded_rationality_band():
    spec = SMALL_LIN.replace(kind=LINEAR_BOUNDED)
    inst = generate_instance(spec, 6)
    for split in ("train", "test"):
        ds = generate_dataset(inst, split=split, N=15)
        assert ds.consistent.all()
        subs = [suboptimality_loss(inst.prob, inst.true_hyp, s, x) for s, x in ds.pairs()]
        assert max(subs) <= spec.delta + 1e-6


def test_true_hypothesis_has_zero_test_risk():
    for spec in (SMALL_LIN, SMALL_QUAD):
        inst = generate_instance(spec, 0)
        test = generate_dataset(inst, split="test")
        assert out_of_sample_risk(inst.true_hyp, inst, test) == pytest.approx(0.0, abs=1e-6)


def test_expectation_risk_is_mean_of_losses():
    inst = generate_instance(SMALL_LIN, 2)
    test = generate_dataset(inst, split="test")
    hyp = type(inst.true_hyp)(inst.params["theta0"])
    losses = evaluate_losses(hyp, inst, test, (SUBOPT, PRED))
    assert out_of_sample_risk(hyp, inst, test) == pytest.approx(losses[SUBOPT].mean(), rel=1e-12)
    assert out_of_sample_risk(hyp, inst, test, PRED) == pytest.approx(losses[PRED].mean(), rel=1e-12)
    tail = out_of_sample_risk(hyp, inst, test, SUBOPT, RiskSpec.cvar(0.1))
    assert tail >= losses[SUBOPT].mean() - 1e-12


def test_fold_partition():
    folds = fold_partition(12, 5, 3)
    assert len(folds) == 5
    assert sorted(np.concatenate(folds).tolist()) == list(range(12))
    assert all(len(f) in (2, 3) for f in folds)


def test_cv_single_sample():
    inst = generate_instance(SMALL_LIN, 1)
    ds = generate_dataset(inst, split="train", N=1)
    cv = cross_validate_radius(inst, ds)
    assert len(cv.folds) == 1 and cv.fold_scores.shape == (1, len(DEFAULT_GRID))
    assert cv.eps_hat in DEFAULT_GRID


def test_cv_ties_pick_smallest_radius():
    # consistent perfect data: every radius fits with zero validation risk
    inst = generate_instance(SMALL_LIN.replace(delta=0.0), 8)
    ds = generate_dataset(inst, split="train", N=5)
    inst.space = type(inst.space).norm_ball(inst.true_hyp.theta, 0.0 + 1e-9, np.inf)
    cv = cross_validate_radius(inst, ds)
    assert all(w == DEFAULT_GRID[0] for w in cv.winners)
    assert cv.eps_hat == DEFAULT_GRID[0]


def test_cv_fold_scores_recompute():
    inst = generate_instance(SMALL_LIN, 3)
    ds = generate_dataset(inst, split="train")
    grid = (1e-3, 1e-1)
    cv = cross_validate_radius(inst, ds, grid=grid, k=3)
    for f, val in enumerate(cv.folds):
        train = np.concatenate([cv.folds[g] for g in range(3) if g != f])
        for j, eps in enumerate(grid):
            sol = solve_at(inst, ds.subset(train), eps)
            direct = np.mean([suboptimality_loss(inst.prob, sol.theta_hat, s, x)
                              for s, x in ds.subset(val).pairs()])
            assert cv.fold_scores[f, j] == pytest.approx(direct, abs=1e-8)
    assert cv.eps_hat == pytest.approx(np.mean(cv.winners))
    final = solve_at(inst, ds, cv.eps_used)
    assert cv.certificate == pytest.approx(final.certificate, abs=1e-9)


def test_cv_validation():
    inst = generate_instance(SMALL_LIN, 3)
    ds = generate_dataset(inst, split="train")
    with pytest.raises(ConfigError):
        cross_validate_radius(inst, ds, grid=())
    with pytest.raises(ConfigError):
        cross_validate_radius(inst, ds, k=7)


def test_fit_method_dispatch():
    inst = generate_instance(SMALL_LIN, 0)
    ds = generate_dataset(inst, split="train")
    with pytest.raises(ConfigError):
        fit_method("kernel-vi-p2", inst, ds)
    fit = fit_method("bp", inst, ds, bp_budget=1)
    assert fit.status == "budget_exceeded" and not fit.ok
    erm = fit_method("erm", inst, ds)
    dro0 = fit_method("dro", inst, ds, eps=0.0)
    assert erm.certificate == pytest.approx(dro0.certificate, abs=1e-6)


def test_quadratic_empty_ball_recorded():
    spec = SMALL_QUAD.replace(kind=QUAD_INCONSISTENT, noise_halfwidth=0.5, N_train=10)
    inst = generate_instance(spec, 0)
    ds = generate_dataset(inst, split="train")
    assert not ds.consistent.all()
    fit = fit_method("dro", inst, ds, eps=1e-6)
    assert fit.status == "empty_ball" and math.isnan(fit.certificate)


def test_sweep_eps_zero_row_equals_erm():
    spec = SMALL_LIN.replace(replications=2)
    sweep = run_eps_sweep(spec, (0.0, 0.1))
    curve = run_learning_curve(spec, ("erm",), (spec.N_train,))
    zero = [r["value"] for r in sweep if r["eps_grid"] == 0.0]
    erm = [r["value"] for r in curve]
    assert np.allclose(zero, erm, atol=1e-6)
    assert {r["risk_kind"] for r in sweep} == {SUBOPT, PRED}


def test_bounded_scenario_metrics():
    spec = SMALL_LIN.replace(kind=LINEAR_BOUNDED, replications=1)
    rows = run_eps_sweep(spec, (0.01,))
    assert {r["risk_kind"] for r in rows} == {BR, PRED}


def test_summarize_formulas():
    rows = [dict(method="a", value=v, status="ok", flag="") for v in (1.0, 2.0, 4.0)]
    rows += [dict(method="b", value=3.0, status="ok", flag=""),
             dict(method="b", value=float("nan"), status="empty_ball", flag="")]
    out = {r["method"]: r for r in summarize(rows, ("method",))}
    vals = np.array([1.0, 2.0, 4.0])
    assert out["a"]["mean"] == pytest.approx(vals.mean())
    assert out["a"]["stderr"] == pytest.approx(vals.std(ddof=1) / math.sqrt(3))
    assert out["b"]["mean"] == 3.0 and math.isnan(out["b"]["stderr"])
    assert out["b"]["n_ok"] == 1 and out["b"]["n_runs"] == 2 and out["b"]["failures"] == "empty_ball"


def test_single_replication_mean_equals_run():
    spec = SMALL_LIN.replace(replications=1)
    runs = run_learning_curve(spec, ("vi",), (4,))
    summ = summarize(runs, ("method", "N", "risk_kind"))
    for s in summ:
        match = [r["value"] for r in runs if r["risk_kind"] == s["risk_kind"]]
        assert s["mean"] == match[0]


def test_reproduce_sweep_shape():
    rep = reproduce("fig1a", budget=1, overrides=dict(m=2, n=2, N_train=4, N_test=20,
                                                      eps_values=(0.0, 0.01, 0.1)))
    assert rep.columns[:3] == ["eps", "mean_subopt_risk", "mean_pred_risk"]
    assert [r["eps"] for r in rep.rows] == [0.0, 0.01, 0.1]
    with pytest.raises(ConfigError):
        reproduce("fig9")
    with pytest.raises(ConfigError):
        reproduce("fig1a", budget=0)


def test_reproduce_table_layout():
    rep = reproduce("tab1", budget=1, overrides=dict(cells=[(2, 2)], N_train=4, N_test=20,
                                                     grid=(0.01, 0.1)))
    assert [(r["n"], r["m"], r["method"]) for r in rep.rows] == [(2, 2, "dro"), (2, 2, "vi")]
