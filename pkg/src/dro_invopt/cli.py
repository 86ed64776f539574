"""Command-line front end.

Exit codes: 0 success (an empty Wasserstein ball is a reported outcome, not
an error), 2 configuration error, 3 solver failure, 4 budget exceeded.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .agent import hypothesis_from_dict
from .baselines import BudgetExceededError, KernelModel
from .conic import ConicSet, SolverError, nonneg, zero
from .data import Dataset
from .dro_convex import solve_dro_convex
from .dro_linear import EmptyBallError, WassersteinSpec
from .features import FeatureMap
from .losses import LossKind, loss_table, write_loss_csv
from .report import (build_manifest, svg_box_plot, svg_line_plot, write_csv,
                     write_manifest)
from .risk import RiskSpec, empirical_risk, erm_minimize

log = logging.getLogger("dro_invopt")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_BUDGET = 0, 2, 3, 4
METHODS = ("dro-linear", "dro-quad", "dro-convex", "erm", "vi", "bp", "kernel-vi")
LINEAR_ONLY = ("dro-linear", "dro-convex", "bp")
QUAD_ONLY = ("dro-quad", "kernel-vi")

INSTANCE_FILE, TRAIN_FILE, TEST_FILE = "instance.json", "train.csv", "test.csv"
SOLUTION_FILE = "solution.json"
RUN_KEYS = frozenset({"scenario", "method", "eps", "alpha", "delta", "grid", "features", "kernel_degree",
                      "bp_budget", "overrides", "budget", "seed"})


# --------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    """Read a run config; an object without run keys is taken as the scenario itself."""
    if path is None:
        return {"scenario": {}}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ex.ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ex.ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(d, dict):
        raise ex.ConfigError(f"{path}:1: config must be a JSON object")
    if not RUN_KEYS & set(d):
        d = {"scenario": d}
    return d


def scenario_from(cfg: dict, seed) -> ex.ScenarioSpec:
    sc = dict(cfg.get("scenario") or {})
    if seed is not None:
        sc["master_seed"] = seed
    return ex.ScenarioSpec.from_dict(sc)


def parse_eps(text):
    if text is None or text == "cv":
        return text
    try:
        eps = float(text)
    except ValueError as exc:
        raise ex.ConfigError(f"--eps must be a number or 'cv', got {text!r}") from exc
    if not eps >= 0:
        raise ex.ConfigError("--eps must be nonnegative")
    return eps


def check_method(method: str, instance: ex.Instance):
    if method not in METHODS:
        raise ex.ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    if instance.is_linear and method in QUAD_ONLY:
        raise ex.ConfigError(f"method {method} needs a quadratic scenario")
    if not instance.is_linear and method in LINEAR_ONLY:
        raise ex.ConfigError(f"method {method} needs a linear scenario")


def _manifest(command: str, **fields) -> dict:
    return build_manifest(command=command, **fields)


# --------------------------------------------------------------------------
# file helpers


def _load_generated(out: Path):
    paths = [out / INSTANCE_FILE, out / TRAIN_FILE, out / TEST_FILE]
    missing = [p.name for p in paths if not p.exists()]
    if missing:
        raise ex.ConfigError(f"{out}: missing {', '.join(missing)}; run 'generate' first")
    inst = ex.instance_from_dict(json.loads(paths[0].read_text()))
    return inst, Dataset.from_csv(paths[1], inst.prob), Dataset.from_csv(paths[2], inst.prob)


def _load_solution(out: Path):
    path = out / SOLUTION_FILE
    if not path.exists():
        raise ex.ConfigError(f"{path}: missing; run 'solve' or 'cv' first")
    d = json.loads(path.read_text())
    if d.get("status") != "ok":
        return d, None
    if "model" in d:
        return d, KernelModel.from_dict(d["model"])
    return d, hypothesis_from_dict(d["theta_hat"])


def _write_json(path: Path, obj, sha: str):
    d = dict(obj, manifest_sha256=sha)
    path.write_text(json.dumps(d, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# --------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    spec = scenario_from(cfg, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = int(spec.master_seed)
    inst = ex.generate_instance(spec, seed)
    train = ex.generate_dataset(inst, split="train")
    test = ex.generate_dataset(inst, split="test")
    man = _manifest("generate", scenario=spec.to_dict(), seed=seed, grid=ex.DEFAULT_GRID,
                    files=[INSTANCE_FILE, TRAIN_FILE, TEST_FILE])
    sha = write_manifest(out / "manifest.json", man)
    _write_json(out / INSTANCE_FILE, inst.to_dict(), sha)
    train.to_csv(out / TRAIN_FILE, header_comment=f"manifest_sha256={sha}")
    test.to_csv(out / TEST_FILE, header_comment=f"manifest_sha256={sha}")
    print(f"wrote {out / INSTANCE_FILE}, {TRAIN_FILE} ({train.N} rows), {TEST_FILE} ({test.N} rows)")
    return EXIT_OK


def signed_ball(space) -> ConicSet:
    """Weights ``(t+, t-)`` of signed-identity features with ``t+ - t-`` in an inf-norm ball."""
    n, r = space.theta0.size, space.radius
    eye = np.eye(n)
    A = np.vstack([np.hstack([eye, -eye]), np.hstack([-eye, eye])])
    b = np.concatenate([space.theta0 - r, -space.theta0 - r])
    return ConicSet(A, b, (nonneg(2 * n),))


def _risk_spec(alpha: float) -> RiskSpec:
    if not 0.0 < alpha <= 1.0:
        raise ex.ConfigError("--alpha must lie in (0, 1]")
    return RiskSpec() if alpha == 1.0 else RiskSpec.cvar(alpha)


def _fit(method, inst, train, eps, alpha, delta, cfg):
    """Returns ``(payload, hypothesis, cv_result)``."""
    spec_delta = inst.spec.method_delta if delta is None else delta
    if method in ("dro-linear", "dro-quad"):
        if eps == "cv":
            cv = ex.cross_validate_radius(inst, train, {"alpha": alpha, "delta": spec_delta},
                                          grid=tuple(cfg.get("grid", ex.DEFAULT_GRID)))
            payload = cv.solution.to_dict()
            payload.update(eps_hat=cv.eps_hat, eps=cv.eps_used, cv=cv.to_dict())
            return payload, cv.theta_hat, cv
        sol = ex.solve_at(inst, train, float(eps or 0.0), alpha, spec_delta)
        return sol.to_dict(), sol.theta_hat, None
    if eps == "cv":
        raise ex.ConfigError(f"--eps cv applies to dro-linear and dro-quad, not {method}")
    if method == "dro-convex":
        if "features" in cfg:
            feats = FeatureMap.from_dict(cfg["features"])
            d = feats.d
            theta_set = ConicSet(np.vstack([np.ones((1, d)), np.eye(d)]),
                                 np.concatenate([[1.0], np.zeros(d)]), (zero(1), nonneg(d)))
        else:
            feats, theta_set = FeatureMap.signed_identity(inst.prob.n), signed_ball(inst.space)
        sol = solve_dro_convex(inst.prob, train, feats, theta_set, WassersteinSpec(float(eps or 0.0)),
                               alpha)
        return sol.to_dict(), sol.theta_hat, None
    if method == "erm":
        sol = erm_minimize(inst.prob, train, inst.space, inst.spec.train_loss, _risk_spec(alpha), spec_delta)
        return sol.to_dict(), sol.theta_hat, None
    if method == "kernel-vi":
        p = int(cfg.get("kernel_degree", 2))
        fit = ex.fit_method(f"kernel-vi-p{p}", inst, train)
    else:
        fit = ex.fit_method(method, inst, train, bp_budget=cfg.get("bp_budget"))
    if fit.status == "budget_exceeded":
        raise BudgetExceededError(fit.reason)
    if fit.status == "empty_ball":
        raise EmptyBallError(fit.reason)
    if not fit.ok:
        raise RuntimeError(fit.reason)
    if isinstance(fit.hypothesis, KernelModel):
        payload = {"method": method, "model": fit.hypothesis.to_dict(), "certificate": fit.certificate,
                   "flags": ["LOCAL"], "info": fit.hypothesis.info}
    else:
        payload = {"method": method, "theta_hat": fit.hypothesis.to_dict(), "certificate": fit.certificate}
    return payload, fit.hypothesis, None


def _metrics_row(method, inst, train, test, hyp, payload, alpha, delta):
    spec = _risk_spec(alpha)
    loss = ex.BR if (delta or 0) > 0 else ex.SUBOPT
    tr = ex.evaluate_losses(hyp, inst, train, (loss,), delta=delta)
    te = ex.evaluate_losses(hyp, inst, test, (ex.SUBOPT, ex.PRED), delta=delta)
    return {"method": method, "eps": payload.get("eps", 0.0), "certificate": payload.get("certificate"),
            "train_risk": empirical_risk(tr[loss], spec),
            "test_subopt_risk": empirical_risk(te[ex.SUBOPT], spec),
            "test_pred_risk": empirical_risk(te[ex.PRED], spec),
            "exactness": payload.get("exactness", ""), "status": "ok"}


METRIC_COLUMNS = ["method", "eps", "certificate", "train_risk", "test_subopt_risk", "test_pred_risk",
                  "exactness", "status"]


def cmd_solve(args, force_cv: bool = False) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    inst, train, test = _load_generated(out)
    method = args.method or cfg.get("method", "dro-linear" if inst.is_linear else "dro-quad")
    check_method(method, inst)
    eps = "cv" if force_cv else parse_eps(args.eps if args.eps is not None else cfg.get("eps"))
    alpha = float(args.alpha if args.alpha is not None else cfg.get("alpha", 1.0))
    _risk_spec(alpha)
    delta = args.delta if args.delta is not None else cfg.get("delta")
    if delta is not None and not float(delta) >= 0:
        raise ex.ConfigError("--delta must be nonnegative")
    delta = None if delta is None else float(delta)
    man = _manifest("cv" if force_cv else "solve", instance_seed=inst.seed, scenario=inst.spec.to_dict(),
                    method=method, eps=eps, alpha=alpha, delta=delta,
                    grid=cfg.get("grid", ex.DEFAULT_GRID))
    sha = write_manifest(out / f"{'cv' if force_cv else 'solve'}_manifest.json", man)
    try:
        payload, hyp, cv = _fit(method, inst, train, eps, alpha, delta, cfg)
    except EmptyBallError as exc:
        _write_json(out / SOLUTION_FILE, {"method": method, "status": "empty_ball", "eps": eps,
                                          "reason": str(exc)}, sha)
        write_csv(out / "metrics.csv", METRIC_COLUMNS,
                  [{"method": method, "eps": eps, "status": "empty_ball"}], sha)
        print(f"{method}: empty Wasserstein ball at eps={eps}")
        return EXIT_OK
    payload["status"] = "ok"
    _write_json(out / SOLUTION_FILE, payload, sha)
    if cv is not None:
        rows = [{"fold": f, "eps": e, "validation_risk": cv.fold_scores[f, j],
                 "winner": int(cv.winners[f] == e)}
                for f in range(len(cv.folds)) for j, e in enumerate(cv.grid)]
        write_csv(out / "cv.csv", ["fold", "eps", "validation_risk", "winner"], rows, sha)
    eval_delta = inst.spec.method_delta if delta is None else delta
    row = _metrics_row(method, inst, train, test, hyp, payload, alpha, eval_delta)
    write_csv(out / "metrics.csv", METRIC_COLUMNS, [row], sha)
    print(f"{method}: certificate={row['certificate']!r} test_subopt_risk={row['test_subopt_risk']!r}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    inst, train, test = _load_generated(out)
    sol, hyp = _load_solution(out)
    alpha = float(args.alpha if args.alpha is not None else 1.0)
    spec = _risk_spec(alpha)
    delta = inst.spec.delta if args.delta is None else float(args.delta)
    man = _manifest("evaluate", instance_seed=inst.seed, solution=sol.get("manifest_sha256"),
                    alpha=alpha, delta=delta)
    sha = write_manifest(out / "evaluate_manifest.json", man)
    rows = []
    if hyp is not None:
        kinds = (ex.SUBOPT, ex.PRED, ex.BR)
        for split, ds in (("test", test), ("train", train)):
            L = ex.evaluate_losses(hyp, inst, ds, kinds, delta=delta)
            for k in kinds:
                rows.append({"split": split, "loss_kind": k, "risk": spec.kind, "alpha": alpha,
                             "value": empirical_risk(L[k], spec)})
    write_csv(out / "evaluation.csv", ["split", "loss_kind", "risk", "alpha", "value"], rows, sha)
    print(f"wrote {out / 'evaluation.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_losses(args) -> int:
    out = Path(args.out)
    inst, train, test = _load_generated(out)
    sol, hyp = _load_solution(out)
    if hyp is None:
        raise ex.ConfigError("the stored solution has no hypothesis (status "
                             f"{sol.get('status')!r})")
    delta = inst.spec.delta if args.delta is None else float(args.delta)
    man = _manifest("losses", instance_seed=inst.seed, solution=sol.get("manifest_sha256"), delta=delta)
    sha = write_manifest(out / "losses_manifest.json", man)
    kinds = [LossKind.SUBOPTIMALITY, LossKind.PREDICTABILITY, LossKind.BOUNDED_RATIONALITY]
    if isinstance(hyp, KernelModel):
        L = ex.evaluate_losses(hyp, inst, test, [k.value for k in kinds], delta=delta)
        rows = [(i, k.value, L[k.value][i]) for i in range(test.N) for k in kinds]
    else:
        rows = loss_table(inst.prob, hyp, test.S, test.X, kinds, delta, inst.true_hyp)
    write_loss_csv(out / "losses.csv", rows, header_comment=f"manifest_sha256={sha}")
    print(f"wrote {out / 'losses.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = load_config(args.config)
    overrides = dict(cfg.get("overrides", {}))
    budget = int(args.budget if args.budget is not None else cfg.get("budget", ex.DESK_REPLICATIONS))
    seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(r):
        log.info("%s: replication %d done", args.target, r)

    res = ex.reproduce(args.target, budget, seed, overrides, progress)
    man = _manifest("reproduce", **res.settings)
    sha = write_manifest(out / f"{args.target}_manifest.json", man)
    write_csv(out / f"{args.target}.csv", res.columns, res.rows, sha)
    run_cols = sorted({k for r in res.runs for k in r})
    write_csv(out / f"{args.target}_runs.csv", run_cols, res.runs, sha)
    p = res.plot
    if p["kind"] == "line":
        svg = svg_line_plot(p["series"], p["title"], p["xlabel"], p["ylabel"], sha, p["logx"], p["logy"])
    else:
        svg = svg_box_plot(p["groups"], p["title"], p["ylabel"], sha, p["logy"])
    (out / f"{args.target}.svg").write_text(svg)
    print(f"wrote {out / (args.target + '.csv')} and {args.target}.svg")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dro-invopt", description="Distributionally robust inverse optimization")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, method=False):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--out", default=".", help="working directory")
        if method:
            p.add_argument("--method", help=f"one of {', '.join(METHODS)}")
            p.add_argument("--eps", help="Wasserstein radius or 'cv'")
        p.add_argument("--alpha", type=float, help="CVaR level in (0, 1]")
        p.add_argument("--delta", type=float, help="bounded-rationality band")

    common(sub.add_parser("generate", help="write instance.json, train.csv, test.csv"))
    common(sub.add_parser("solve", help="fit an estimator on train.csv"), method=True)
    common(sub.add_parser("cv", help="cross-validate the radius and fit"), method=True)
    common(sub.add_parser("evaluate", help="out-of-sample risks of solution.json"))
    common(sub.add_parser("losses", help="per-sample test losses of solution.json"))
    rp = sub.add_parser("reproduce", help="run a figure or table at desk scale")
    rp.add_argument("target", help=", ".join(sorted(ex.TARGETS)))
    rp.add_argument("--budget", type=int, help="replication count")
    common(rp)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handlers = {"generate": cmd_generate, "solve": cmd_solve, "cv": lambda a: cmd_solve(a, True),
                "evaluate": cmd_evaluate, "losses": cmd_losses, "reproduce": cmd_reproduce}
    try:
        return handlers[args.command](args)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceededError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (SolverError, RuntimeError, ValueError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
