"""Synthetic scenarios, out-of-sample evaluation, radius cross-validation and
experiment runners.

Randomness
----------
Every draw comes from ``rng_stream(seed, stream)``, a numpy ``Generator`` over
the counter-based Philox bit generator keyed by ``(stream << 64) | seed``.
Streams are fixed integers (instance, train, test, folds, method), so train
and test draws never share a counter.  Replication ``r`` uses seed
``master_seed + r``.  Samples are drawn one at a time in index order, so a
larger dataset from the same seed extends a smaller one.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .agent import (AgentProblem, Linear, Quadratic, SqrtUtility, delta_suboptimal_response,
                    forward_solve, hypothesis_from_dict)
from .baselines import (BudgetExceededError, KernelModel, bp_bruteforce, kernel_objective,
                        local_predict, nonparametric_vi, vi_linear, vi_quadratic)
from .conic import ConicSet, SolverError, box_set, nonneg
from .data import Dataset
from .dro_linear import EmptyBallError, LinearSearchSpace, WassersteinSpec, solve_dro_linear
from .dro_quadratic import QuadraticSearchSpace, Wasserstein2, solve_dro_quadratic
from .losses import LossKind, predictability_loss
from .risk import RiskSpec, empirical_risk, erm_minimize

__all__ = ["ConfigError", "ScenarioSpec", "Instance", "CVResult", "FitResult", "rng_stream",
           "generate_instance", "instance_from_dict", "generate_dataset", "evaluate_losses", "out_of_sample_risk",
           "solve_at", "cross_validate_radius", "fit_method", "run_eps_sweep",
           "run_learning_curve", "run_table", "summarize", "reproduce", "Reproduction", "TARGETS",
           "DEFAULT_GRID"]

LINEAR_CONSISTENT = "LinearConsistentNoise"
LINEAR_BOUNDED = "LinearBoundedRationality"
QUAD_CONSISTENT = "QuadConsistentNoise"
QUAD_INCONSISTENT = "QuadInconsistentNoise"
QUAD_MODEL = "QuadModelUncertainty"
SCENARIOS = (LINEAR_CONSISTENT, LINEAR_BOUNDED, QUAD_CONSISTENT, QUAD_INCONSISTENT, QUAD_MODEL)
LINEAR_KINDS = (LINEAR_CONSISTENT, LINEAR_BOUNDED)

STREAM_INSTANCE = 1
STREAM_TRAIN = 2
STREAM_TEST = 3
STREAM_FOLDS = 4
STREAM_METHOD = 5

DEFAULT_GRID = tuple(sorted(b * 10.0 ** c for b in (1, 5) for c in (-4, -3, -2, -1)))
CV_TIE_TOL = 1e-12
QUAD_BOX = 5.0

SUBOPT = "suboptimality"
PRED = "predictability"
BR = "bounded_rationality"

LINEAR_METHODS = ("dro", "erm", "vi", "bp")
QUAD_METHODS = ("dro", "erm", "vi", "kernel-vi-p2", "kernel-vi-p3")


class ConfigError(ValueError):
    """Invalid scenario or method configuration."""


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    """Philox generator keyed by ``(stream << 64) | seed``."""
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seeds must be unsigned 64-bit integers")
    return np.random.Generator(np.random.Philox(key=(int(stream) << 64) | seed))


# --------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class ScenarioSpec:
    """Synthetic experiment configuration.

    ``delta`` defaults to 1 for linear scenarios and 0.2 for quadratic ones.
    Quadratic scenarios have ``m = n``.
    """

    kind: str = LINEAR_CONSISTENT
    m: int = 10
    n: int = 10
    N_train: int = 10
    N_test: int = 1000
    delta: float | None = None
    noise_halfwidth: float = 0.1
    replications: int = 20
    master_seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}; expected one of {SCENARIOS}")
        for name in ("m", "n", "N_train", "N_test", "replications"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.delta is None:
            object.__setattr__(self, "delta", 1.0 if self.is_linear else 0.2)
        if not float(self.delta) >= 0:
            raise ConfigError("delta must be nonnegative")
        object.__setattr__(self, "delta", float(self.delta))
        if not self.noise_halfwidth >= 0:
            raise ConfigError("noise_halfwidth must be nonnegative")
        if not self.is_linear and self.m != self.n:
            raise ConfigError("quadratic scenarios need m == n")
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")

    @property
    def is_linear(self) -> bool:
        return self.kind in LINEAR_KINDS

    @property
    def method_delta(self) -> float:
        """Band width used by the robust estimator (bounded-rationality scenario only)."""
        return self.delta if self.kind == LINEAR_BOUNDED else 0.0

    @property
    def train_loss(self) -> str:
        return BR if self.kind == LINEAR_BOUNDED else SUBOPT

    def replace(self, **kw) -> "ScenarioSpec":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - names
        if extra:
            raise ConfigError(f"unknown scenario fields {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(d, dict):
            raise ConfigError("scenario JSON must be an object")
        return cls.from_dict(d)


@dataclass
class Instance:
    """A generated agent problem; unpacks as ``(prob, true_hyp, space)``."""

    spec: ScenarioSpec
    seed: int
    prob: AgentProblem
    true_hyp: object
    space: object
    params: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.prob, self.true_hyp, self.space))

    @property
    def is_linear(self) -> bool:
        return self.spec.is_linear

    def to_dict(self) -> dict:
        return {"scenario": self.spec.to_dict(), "seed": self.seed,
                "problem": self.prob.to_dict(), "true_hypothesis": self.true_hyp.to_dict(),
                "search_space": self.space.to_dict(),
                "params": {k: np.asarray(v).tolist() for k, v in self.params.items()}}


def instance_from_dict(d: dict) -> Instance:
    """Inverse of :meth:`Instance.to_dict`."""
    spec = ScenarioSpec.from_dict(d["scenario"])
    prob = AgentProblem.from_dict(d["problem"])
    space_cls = LinearSearchSpace if spec.is_linear else QuadraticSearchSpace
    params = {k: np.asarray(v, dtype=float) for k, v in d.get("params", {}).items()}
    return Instance(spec, int(d["seed"]), prob, hypothesis_from_dict(d["true_hypothesis"]),
                    space_cls.from_dict(d["search_space"]), params)


def linear_problem(A) -> AgentProblem:
    """``S = {|s_i| <= ||a_i||_1}`` and ``X(s) = {||x||_inf <= 1, A x >= s}``."""
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    a1 = np.abs(A).sum(axis=1)
    S = ConicSet(np.vstack([np.eye(m), -np.eye(m)]), -np.concatenate([a1, a1]), (nonneg(2 * m),))
    W = np.vstack([np.eye(n), -np.eye(n), A])
    H = np.vstack([np.zeros((2 * n, m)), np.eye(m)])
    h = np.concatenate([-np.ones(2 * n), np.zeros(m)])
    return AgentProblem(S, W, H, h, (nonneg(2 * n + m),))


def quadratic_problem(n: int, upper: float = QUAD_BOX) -> AgentProblem:
    """``S = [0, 1]^n`` and ``X = [0, upper]^n``."""
    W = np.vstack([np.eye(n), -np.eye(n)])
    h = np.concatenate([np.zeros(n), -upper * np.ones(n)])
    return AgentProblem(box_set(np.zeros(n), np.ones(n)), W, np.zeros((2 * n, n)), h,
                        (nonneg(2 * n),))


def generate_instance(spec: ScenarioSpec, seed: int) -> Instance:
    """Draw the problem data and the true hypothesis of one instance."""
    rng = rng_stream(seed, STREAM_INSTANCE)
    m, n = spec.m, spec.n
    if spec.is_linear:
        A = rng.uniform(-1.0, 1.0, (m, n))
        while True:
            theta0 = rng.uniform(-5.0, 5.0, n)
            if np.abs(theta0).max() >= 1.0:
                break
        theta_star = theta0 + rng.uniform(-1.0, 1.0, n)
        space = LinearSearchSpace.norm_ball(theta0, 1.0, np.inf)
        return Instance(spec, int(seed), linear_problem(A), Linear(theta_star), space,
                        {"A": A, "theta0": theta0})
    B = rng.uniform(-1.0, 1.0, (n, n))
    _, V = np.linalg.eigh(0.5 * (B + B.T))
    D = rng.uniform(0.2, 1.0, n)
    Q = V @ np.diag(D) @ V.T
    q = rng.uniform(-2.0, 0.0, n)
    params = {"eigenvalues": D, "Qxx": Q, "q": q}
    hyp = Quadratic(Q, np.eye(n), q)
    if spec.kind == QUAD_MODEL:
        a = rng.uniform(0.5, 1.0, n)
        b = rng.uniform(0.0, 0.25, n)
        params.update(a=a, b=b)
        hyp = SqrtUtility(a, b)
    return Instance(spec, int(seed), quadratic_problem(n), hyp, QuadraticSearchSpace.bilinear(),
                    params)


def generate_dataset(instance: Instance, spec: ScenarioSpec | None = None, seed: int | None = None,
                     split: str = "train", N: int | None = None) -> Dataset:
    """Draw ``N`` signal-response pairs (train: ``N_train``, test: ``N_test``).

    Training responses follow the scenario's imperfection model.  Test
    responses are exact optimizers, except in the bounded-rationality
    scenario where they are drawn like the training responses.
    """
    spec = spec or instance.spec
    seed = instance.seed if seed is None else seed
    if split not in ("train", "test"):
        raise ConfigError("split must be 'train' or 'test'")
    rng = rng_stream(seed, STREAM_TRAIN if split == "train" else STREAM_TEST)
    N = N if N is not None else (spec.N_train if split == "train" else spec.N_test)
    prob, hyp, n = instance.prob, instance.true_hyp, spec.n
    imperfect = split == "train" or spec.kind == LINEAR_BOUNDED
    S, X = [], []
    for _ in range(N):
        if spec.is_linear:
            s = instance.params["A"] @ rng.uniform(-1.0, 1.0, n)
            if imperfect:
                tie = Linear(rng.uniform(-1.0, 1.0, n))
                x = delta_suboptimal_response(prob, hyp, s, spec.delta, tiebreak=tie)
            else:
                x = forward_solve(prob, hyp, s)[0]
        else:
            s = rng.uniform(0.0, 1.0, n)
            if imperfect and spec.kind == QUAD_CONSISTENT:
                tie = Quadratic(np.diag(rng.uniform(0.0, 1.0, n)), np.zeros((n, n)), np.zeros(n))
                x = delta_suboptimal_response(prob, hyp, s, spec.delta, tiebreak=tie)
            elif imperfect and spec.kind == QUAD_INCONSISTENT:
                x = forward_solve(prob, hyp, s)[0] + rng.uniform(-spec.noise_halfwidth,
                                                                 spec.noise_halfwidth, n)
            else:
                x = forward_solve(prob, hyp, s)[0]
        S.append(s)
        X.append(x)
    prov = {"scenario": spec.to_dict(), "instance_seed": instance.seed, "seed": int(seed),
            "split": split}
    return Dataset.from_arrays(prob, np.array(S).reshape(N, spec.m), np.array(X).reshape(N, n), prov)


# --------------------------------------------------------------------------
# evaluation


def evaluate_losses(hyp, instance: Instance, dataset: Dataset, kinds=(SUBOPT,),
                    delta: float | None = None, seed: int = 0) -> dict:
    """Per-sample losses of a hypothesis, sharing one forward solve per sample.

    ``hyp`` may be a :class:`KernelModel`; its losses are measured against
    the local minimizer returned by ``local_predict`` (seeded by ``seed``).
    """
    kinds = tuple(LossKind(k).value for k in kinds)
    delta = instance.spec.delta if delta is None else float(delta)
    prob = instance.prob
    out = {k: np.empty(dataset.N) for k in kinds}
    if isinstance(hyp, KernelModel):
        Xl = local_predict(hyp, prob, dataset.S, seed=seed)
        sub = kernel_objective(hyp, dataset.S, dataset.X) - kernel_objective(hyp, dataset.S, Xl)
        for k in kinds:
            if k == SUBOPT:
                out[k] = sub
            elif k == BR:
                out[k] = np.maximum(sub - delta, 0.0)
            elif k == PRED:
                out[k] = np.sum((dataset.X - Xl) ** 2, axis=1)
            else:
                raise ValueError(f"{k} loss is not available for kernel models")
        return out
    for i, (s, x) in enumerate(dataset.pairs()):
        opt = forward_solve(prob, hyp, s)
        sub = hyp.value(s, x) - opt[1]
        for k in kinds:
            if k == SUBOPT:
                out[k][i] = sub
            elif k == BR:
                out[k][i] = max(sub - delta, 0.0) if delta > 0 else sub
            elif k == PRED:
                out[k][i] = predictability_loss(prob, hyp, s, x, optimum=opt)
            else:
                raise ValueError(f"{k} loss is not evaluated by the experiment harness")
    return out


def out_of_sample_risk(theta_hat, instance: Instance, test_set: Dataset, loss_kind=SUBOPT,
                       spec: RiskSpec = RiskSpec(), delta: float | None = None) -> float:
    """Empirical risk of ``loss_kind`` over an independent test set."""
    kind = LossKind(loss_kind).value
    return empirical_risk(evaluate_losses(theta_hat, instance, test_set, (kind,), delta)[kind], spec)


# --------------------------------------------------------------------------
# fitting


def solve_at(instance: Instance, dataset: Dataset, eps: float, alpha: float = 1.0,
             delta: float | None = None, tol: float | None = None):
    """Robust estimator at a fixed radius (1-Wasserstein/inf-norm for linear,
    2-Wasserstein/2-norm for quadratic scenarios)."""
    delta = instance.spec.method_delta if delta is None else float(delta)
    if instance.is_linear:
        return solve_dro_linear(instance.prob, dataset, instance.space,
                                WassersteinSpec(eps, np.inf, 1), alpha, delta, tol)
    return solve_dro_quadratic(instance.prob, dataset, instance.space, Wasserstein2(eps),
                               alpha, delta, tol)


@dataclass
class CVResult:
    """Outcome of k-fold radius selection; unpacks as ``(eps_hat, theta_hat, certificate)``."""

    eps_hat: float
    solution: object
    grid: tuple
    fold_scores: np.ndarray
    winners: list
    folds: list
    eps_used: float = float("nan")

    def __iter__(self):
        return iter((self.eps_hat, self.solution.theta_hat, self.solution.certificate))

    @property
    def theta_hat(self):
        return self.solution.theta_hat

    @property
    def certificate(self) -> float:
        return float(self.solution.certificate)

    def to_dict(self) -> dict:
        return {"eps_hat": self.eps_hat, "eps_used": self.eps_used, "grid": list(self.grid),
                "fold_scores": [[None if not np.isfinite(v) else float(v) for v in row]
                                for row in self.fold_scores],
                "winners": [None if w is None else float(w) for w in self.winners],
                "certificate": self.certificate}


def fold_partition(N: int, k: int, seed: int) -> list[np.ndarray]:
    perm = rng_stream(seed, STREAM_FOLDS).permutation(N)
    return [np.sort(p) for p in np.array_split(perm, k)]


def cross_validate_radius(instance: Instance, dataset: Dataset, method_config: dict | None = None,
                          k: int | None = None, grid=DEFAULT_GRID, seed: int | None = None) -> CVResult:
    """Select the radius by k-fold validation of the training loss.

    Each fold picks the grid radius with the smallest validation risk (ties
    go to the smallest radius; an empty ball scores ``+inf``).  The estimate
    is the arithmetic mean of the fold winners, followed by a final solve on
    all samples.  If the ball at the mean radius is empty, the smallest grid
    radius above it with a nonempty ball is used and recorded as ``eps_used``.
    """
    cfg = dict(method_config or {})
    alpha = float(cfg.get("alpha", 1.0))
    delta = cfg.get("delta")
    risk = RiskSpec.cvar(alpha) if alpha < 1.0 else RiskSpec()
    grid = tuple(sorted(float(e) for e in grid))
    if not grid:
        raise ConfigError("the radius grid is empty")
    N = dataset.N
    if N < 1:
        raise ConfigError("cross-validation needs at least one sample")
    k = min(5, N) if k is None else int(k)
    if not 1 <= k <= N:
        raise ConfigError(f"fold count {k} must lie in 1..{N}")
    seed = instance.seed if seed is None else seed
    folds = fold_partition(N, k, seed)
    loss = instance.spec.train_loss
    ev_delta = instance.spec.method_delta if delta is None else float(delta)
    scores = np.full((k, len(grid)), np.inf)
    winners = []
    for f, val in enumerate(folds):
        train = np.concatenate([folds[g] for g in range(k) if g != f]) if k > 1 else val
        tr, va = dataset.subset(train), dataset.subset(val)
        for j, eps in enumerate(grid):
            try:
                sol = solve_at(instance, tr, eps, alpha, delta)
            except (EmptyBallError, SolverError):
                continue
            scores[f, j] = out_of_sample_risk(sol.theta_hat, instance, va, loss, risk, ev_delta)
        row = scores[f]
        if np.isfinite(row).any():
            best = row.min()
            j = int(np.flatnonzero(row <= best + CV_TIE_TOL * (1.0 + abs(best)))[0])
            winners.append(grid[j])
        else:
            winners.append(None)
    valid = [w for w in winners if w is not None]
    if not valid:
        raise EmptyBallError("every grid radius gives an empty ball on every fold")
    eps_hat = float(np.mean(valid))
    candidates = [eps_hat] + [e for e in grid if e > eps_hat]
    last = None
    for eps in candidates:
        try:
            sol = solve_at(instance, dataset, eps, alpha, delta)
        except EmptyBallError as exc:
            last = exc
            continue
        return CVResult(eps_hat, sol, grid, scores, winners, folds, eps)
    raise last


@dataclass
class FitResult:
    """A fitted estimator, or the reason it is missing."""

    method: str
    hypothesis: object = None
    certificate: float = float("nan")
    eps: float = float("nan")
    status: str = "ok"
    reason: str = ""
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _method_seed(seed: int, method: str) -> int:
    salt = sum(ord(ch) * 31 ** i for i, ch in enumerate(method)) % (2 ** 32)
    return int(rng_stream(seed, STREAM_METHOD).integers(2 ** 32)) ^ salt


def fit_method(method: str, instance: Instance, dataset: Dataset, eps=None,
               grid=DEFAULT_GRID, bp_budget: int | None = None) -> FitResult:
    """Fit one estimator; solver failures become a :class:`FitResult` with a reason.

    ``eps=None`` cross-validates the robust estimator; a number fixes it.
    """
    prob, space = instance.prob, instance.space
    methods = LINEAR_METHODS if instance.is_linear else QUAD_METHODS
    if method not in methods:
        raise ConfigError(f"method {method!r} is not available here; expected one of {methods}")
    try:
        if method == "dro":
            if eps is None:
                cv = cross_validate_radius(instance, dataset, grid=grid)
                return FitResult(method, cv.theta_hat, cv.certificate, cv.eps_used,
                                 info={"cv": cv.to_dict()})
            sol = solve_at(instance, dataset, float(eps))
            return FitResult(method, sol.theta_hat, float(sol.certificate), float(eps))
        if method == "erm":
            sol = erm_minimize(prob, dataset, space, instance.spec.train_loss, RiskSpec(),
                               instance.spec.method_delta)
            return FitResult(method, sol.theta_hat, float(sol.certificate), 0.0)
        if method == "vi":
            sol = vi_linear(prob, dataset, space) if instance.is_linear else vi_quadratic(prob, dataset, space)
            return FitResult(method, sol.theta_hat, float(sol.certificate))
        if method == "bp":
            kw = {} if bp_budget is None else {"vertex_budget": bp_budget}
            theta, val = bp_bruteforce(prob, dataset, space, **kw)
            return FitResult(method, Linear(theta), val)
        p = int(method[-1])
        model = nonparametric_vi(dataset, prob, p=p, c="cv", seed=_method_seed(instance.seed, method))
        return FitResult(method, model, model.info.get("objective", float("nan")),
                         info={"c": model.c, "flag": "LOCAL"})
    except EmptyBallError as exc:
        return FitResult(method, status="empty_ball", reason=str(exc))
    except BudgetExceededError as exc:
        return FitResult(method, status="budget_exceeded", reason=str(exc))
    except (SolverError, ValueError, RuntimeError) as exc:
        return FitResult(method, status="solver_failure", reason=f"{type(exc).__name__}: {exc}")


# --------------------------------------------------------------------------
# runners


def default_metrics(spec: ScenarioSpec) -> tuple:
    """Suboptimality-type metric first (bounded-rationality loss when the
    agent is boundedly rational), then predictability."""
    return (BR if spec.kind == LINEAR_BOUNDED else SUBOPT, PRED)


def _records(fit: FitResult, instance: Instance, test: Dataset, metrics, rep: int, **keys) -> list:
    rows = []
    vals = {}
    if fit.ok:
        try:
            losses = evaluate_losses(fit.hypothesis, instance, test, metrics,
                                     seed=_method_seed(instance.seed, fit.method + "/predict"))
            vals = {k: float(np.mean(v)) for k, v in losses.items()}
        except (SolverError, ValueError) as exc:
            fit = dataclasses.replace(fit, status="solver_failure", reason=str(exc))
    flag = fit.info.get("flag", "")
    for kind in metrics:
        rows.append(dict(keys, rep=rep, method=fit.method, risk_kind=kind,
                         value=vals.get(kind, float("nan")), status=fit.status,
                         reason=fit.reason, eps=fit.eps, certificate=fit.certificate, flag=flag))
    return rows


def _replication(spec: ScenarioSpec, r: int):
    seed = int(spec.master_seed) + r
    inst = generate_instance(spec, seed)
    return inst, generate_dataset(inst, split="test")


def run_eps_sweep(spec: ScenarioSpec, eps_values=(0.0,) + DEFAULT_GRID, metrics=None,
                  progress=None) -> list[dict]:
    """Per-replication out-of-sample risks of the robust estimator at each radius.

    An empty ball at some radius yields a NaN record with status ``empty_ball``.
    """
    metrics = tuple(metrics or default_metrics(spec))
    rows = []
    for r in range(spec.replications):
        inst, test = _replication(spec, r)
        train = generate_dataset(inst, split="train")
        for eps in eps_values:
            fit = fit_method("dro", inst, train, eps=float(eps))
            rows += _records(fit, inst, test, metrics, r, eps_grid=float(eps), N=train.N)
        if progress:
            progress(r)
    return rows


def run_learning_curve(spec: ScenarioSpec, method_list, sizes, metrics=None, grid=DEFAULT_GRID,
                       bp_budget: int | None = None, progress=None) -> list[dict]:
    """Per-replication risks of each method at each training-set size.

    Training sets of different sizes share a prefix (same seed stream).
    """
    metrics = tuple(metrics or default_metrics(spec))
    sizes = sorted(int(v) for v in sizes)
    rows = []
    for r in range(spec.replications):
        inst, test = _replication(spec, r)
        full = generate_dataset(inst, split="train", N=max(sizes))
        for N in sizes:
            train = full.subset(np.arange(N))
            for method in method_list:
                fit = fit_method(method, inst, train, grid=grid, bp_budget=bp_budget)
                rows += _records(fit, inst, test, metrics, r, N=N)
        if progress:
            progress(r)
    return rows


def run_table(spec: ScenarioSpec, method_list, metrics=None, grid=DEFAULT_GRID,
              progress=None) -> list[dict]:
    """Per-replication risks of each method at the scenario's training size."""
    return run_learning_curve(spec, method_list, (spec.N_train,), metrics, grid, progress=progress)


def summarize(rows: list[dict], keys) -> list[dict]:
    """Mean and standard error over replications, grouped by ``keys``.

    Failed runs are excluded and counted; ``stderr`` is NaN below two runs.
    """
    groups: dict = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    out = []
    for key in sorted(groups, key=lambda t: tuple(_sort_key(v) for v in t)):
        grp = groups[key]
        vals = np.array([g["value"] for g in grp], dtype=float)
        ok = vals[np.isfinite(vals)]
        mean = float(ok.mean()) if ok.size else float("nan")
        se = float(ok.std(ddof=1) / math.sqrt(ok.size)) if ok.size > 1 else float("nan")
        reasons = sorted({g["status"] for g in grp if g["status"] != "ok"})
        flags = sorted({g["flag"] for g in grp if g.get("flag")})
        out.append(dict(zip(keys, key), mean=mean, stderr=se, n_ok=int(ok.size), n_runs=len(grp),
                        failures=";".join(reasons), flags=";".join(flags)))
    return out


def _sort_key(v):
    return (0, float(v), "") if isinstance(v, (int, float, np.floating, np.integer)) else (1, 0.0, str(v))


# --------------------------------------------------------------------------
# reproduction targets

DESK_REPLICATIONS = 20
DESK_SIZES = (5, 10, 20, 40)
DESK_CELLS = ((10, 10), (10, 20), (20, 10), (20, 20))
ALL_CELLS = tuple((n, m) for n in (10, 20, 30, 40, 50) for m in (10, 20, 30, 40, 50))

_LABEL = {SUBOPT: "suboptimality risk", PRED: "predictability risk",
          BR: "bounded-rationality risk"}

TARGETS = {
    "fig1a": dict(kind="sweep", scenario=LINEAR_CONSISTENT),
    "fig1b": dict(kind="curve", scenario=LINEAR_CONSISTENT, metric=SUBOPT, methods=("dro", "vi", "bp")),
    "fig1c": dict(kind="curve", scenario=LINEAR_CONSISTENT, metric=PRED, methods=("dro", "vi", "bp")),
    "fig2a": dict(kind="sweep", scenario=LINEAR_BOUNDED),
    "fig2b": dict(kind="curve", scenario=LINEAR_BOUNDED, metric=BR, methods=("dro", "vi", "bp")),
    "fig2c": dict(kind="curve", scenario=LINEAR_BOUNDED, metric=PRED, methods=("dro", "vi", "bp")),
    "fig3a": dict(kind="sweep", scenario=QUAD_CONSISTENT),
    "fig3b": dict(kind="sweep", scenario=QUAD_INCONSISTENT),
    "fig3c": dict(kind="sweep", scenario=QUAD_MODEL),
    "tab1": dict(kind="table", scenario=LINEAR_CONSISTENT, metric=SUBOPT, methods=("vi", "dro")),
    "tab2": dict(kind="table", scenario=LINEAR_CONSISTENT, metric=PRED, methods=("vi", "dro")),
    "tab3": dict(kind="table", scenario=LINEAR_BOUNDED, metric=BR, methods=("vi", "dro")),
    "tab4": dict(kind="table", scenario=LINEAR_BOUNDED, metric=PRED, methods=("vi", "dro")),
    "tab5": dict(kind="quad_table"),
}

QUAD_TABLE_ROWS = ((QUAD_CONSISTENT, ("vi", "erm", "dro")),
                   (QUAD_INCONSISTENT, ("vi", "erm", "dro")),
                   (QUAD_MODEL, ("vi", "kernel-vi-p2", "kernel-vi-p3", "erm", "dro")))


@dataclass
class Reproduction:
    """Summary table, per-replication records and plot data of one target."""

    target: str
    columns: list
    rows: list
    runs: list
    plot: dict
    settings: dict


def _base_spec(scenario: str, replications: int, seed: int, **kw) -> ScenarioSpec:
    if scenario in LINEAR_KINDS:
        base = dict(m=10, n=10, N_train=10)
    else:
        base = dict(m=10, n=10, N_train=20)
    base.update(kw)
    return ScenarioSpec(kind=scenario, replications=replications, master_seed=seed, **base)


def reproduce(target: str, budget: int = DESK_REPLICATIONS, seed: int = 0, overrides: dict | None = None,
              progress=None) -> Reproduction:
    """Run a figure or table at desk scale.

    ``budget`` is the replication count.  ``overrides`` may set scenario
    fields (``m``, ``n``, ``N_train``, ``N_test``), ``sizes`` for learning
    curves, ``cells`` for the linear tables (list of ``(n, m)`` or "all"),
    ``eps_values`` for sweeps and ``grid`` for cross-validation.
    """
    if target not in TARGETS:
        raise ConfigError(f"unknown target {target!r}; expected one of {sorted(TARGETS)}")
    if budget < 1:
        raise ConfigError("budget must be a positive replication count")
    ov = dict(overrides or {})
    grid = tuple(ov.pop("grid", DEFAULT_GRID))
    sizes = tuple(ov.pop("sizes", DESK_SIZES))
    cells = ov.pop("cells", DESK_CELLS)
    cells = ALL_CELLS if cells == "all" else tuple(tuple(c) for c in cells)
    eps_values = tuple(ov.pop("eps_values", (0.0,) + grid))
    cfg = TARGETS[target]
    settings = dict(target=target, budget=budget, master_seed=seed, grid=grid, overrides=ov)
    if cfg["kind"] == "sweep":
        spec = _base_spec(cfg["scenario"], budget, seed, **ov)
        metrics = default_metrics(spec)
        runs = run_eps_sweep(spec, eps_values, metrics, progress)
        summ = {(r["eps_grid"], r["risk_kind"]): r for r in summarize(runs, ("eps_grid", "risk_kind"))}
        rows = []
        for eps in sorted(set(eps_values)):
            a, b = summ[(eps, metrics[0])], summ[(eps, metrics[1])]
            rows.append(dict(eps=eps, mean_subopt_risk=a["mean"], mean_pred_risk=b["mean"],
                             stderr_subopt_risk=a["stderr"], stderr_pred_risk=b["stderr"],
                             n_ok=a["n_ok"], n_runs=a["n_runs"], failures=a["failures"]))
        cols = ["eps", "mean_subopt_risk", "mean_pred_risk", "stderr_subopt_risk", "stderr_pred_risk",
                "n_ok", "n_runs", "failures"]
        pos = [r for r in rows if r["eps"] > 0]
        plot = dict(kind="line", logx=True, logy=True, xlabel="Wasserstein radius",
                    ylabel="mean out-of-sample risk", title=f"{target}: {spec.kind}",
                    series={_LABEL[metrics[0]]: [(r["eps"], r["mean_subopt_risk"]) for r in pos],
                            _LABEL[metrics[1]]: [(r["eps"], r["mean_pred_risk"]) for r in pos]})
        settings.update(scenario=spec.to_dict(), eps_values=eps_values)
        return Reproduction(target, cols, rows, runs, plot, settings)
    if cfg["kind"] == "curve":
        spec = _base_spec(cfg["scenario"], budget, seed, **ov)
        runs = run_learning_curve(spec, cfg["methods"], sizes, (cfg["metric"],), grid, progress=progress)
        rows = summarize(runs, ("method", "N", "risk_kind"))
        cols = ["method", "N", "risk_kind", "mean", "stderr", "n_ok", "n_runs", "failures"]
        plot = dict(kind="line", logx=False, logy=True, xlabel="training samples N",
                    ylabel=_LABEL[cfg["metric"]], title=f"{target}: {spec.kind}",
                    series={m: [(r["N"], r["mean"]) for r in rows if r["method"] == m]
                            for m in cfg["methods"]})
        settings.update(scenario=spec.to_dict(), sizes=sizes)
        return Reproduction(target, cols, rows, runs, plot, settings)
    if cfg["kind"] == "table":
        runs = []
        for n, m in cells:
            spec = _base_spec(cfg["scenario"], budget, seed, **dict(ov, n=n, m=m))
            for row in run_table(spec, cfg["methods"], (cfg["metric"],), grid, progress):
                runs.append(dict(row, n=n, m=m))
        rows = summarize(runs, ("n", "m", "method", "risk_kind"))
        cols = ["n", "m", "method", "risk_kind", "mean", "stderr", "n_ok", "n_runs", "failures"]
        first = cells[0]
        plot = dict(kind="box", logy=True, ylabel=_LABEL[cfg["metric"]],
                    title=f"{target}: n={first[0]}, m={first[1]}",
                    groups={m: [r["value"] for r in runs if (r["n"], r["m"]) == first and r["method"] == m]
                            for m in cfg["methods"]})
        settings.update(cells=cells, scenario=_base_spec(cfg["scenario"], budget, seed, **ov).to_dict())
        return Reproduction(target, cols, rows, runs, plot, settings)
    runs = []
    for scen, methods in QUAD_TABLE_ROWS:
        spec = _base_spec(scen, budget, seed, **ov)
        for row in run_table(spec, methods, (SUBOPT, PRED), grid, progress):
            runs.append(dict(row, scenario=scen))
    rows = summarize(runs, ("scenario", "method", "risk_kind"))
    cols = ["scenario", "method", "risk_kind", "mean", "stderr", "n_ok", "n_runs", "failures", "flags"]
    plot = dict(kind="box", logy=True, ylabel=_LABEL[SUBOPT], title=f"{target}: {QUAD_CONSISTENT}",
                groups={m: [r["value"] for r in runs if r["scenario"] == QUAD_CONSISTENT
                            and r["method"] == m and r["risk_kind"] == SUBOPT]
                        for m in QUAD_TABLE_ROWS[0][1]})
    settings.update(scenarios={s: _base_spec(s, budget, seed, **ov).to_dict() for s, _ in QUAD_TABLE_ROWS})
    return Reproduction(target, cols, rows, runs, plot, settings)
