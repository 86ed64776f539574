"""Comparison estimators: variational-inequality fits, a brute-force bilevel
oracle, a kernel gradient-field fit, and rationality estimation."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .agent import AgentProblem, Linear, Quadratic
from .conic import NumericalFailureError, ProgramBuilder, Status
from .data import Dataset
from .dro_linear import (INF_SPHERE, SIMPLEX_FACE, DroSolution, LinearSearchSpace,
                         WassersteinSpec, solve_dro_linear)
from .dro_quadratic import (Exactness, QuadDroSolution, QuadraticSearchSpace, Wasserstein2,
                            _psd_part, cross_term_var, solve_dro_quadratic)
from .losses import predictability_loss
from .risk import RiskSpec, erm_minimize

DEFAULT_BP_BUDGET = 20_000
KERNEL_C_GRID = (1e-2, 1e-1, 1.0, 10.0)


class BudgetExceededError(RuntimeError):
    """The brute-force oracle would exceed its evaluation budget."""


def erm(prob, dataset, space, loss_kind="suboptimality", spec: RiskSpec = RiskSpec(), delta=0.0):
    """Empirical risk minimization (zero-radius robust program)."""
    return erm_minimize(prob, dataset, space, loss_kind, spec, delta)


# --------------------------------------------------------------------------
# variational-inequality estimators


def _abs_mean(b: ProgramBuilder, r, N: int):
    u = b.var("abs_r", N)
    b.nonneg(u - r)
    b.nonneg(u + r)
    return u.sum() / N


def vi_linear(prob: AgentProblem, dataset: Dataset, space: LinearSearchSpace,
              tol: float | None = None) -> DroSolution:
    """Minimize the mean absolute first-order residual over a linear search space."""
    W, H, h = prob.W, prob.H, prob.h
    x_dual = tuple(c.dual() for c in prob.x_cones)
    N = dataset.N
    best = None
    for piece in range(space.n_pieces(prob.n)):
        b = ProgramBuilder()
        theta = b.var("theta", prob.n)
        space.add_rows(b, theta, piece)
        r = b.var("r", N)
        for i, (s, x) in enumerate(dataset.pairs()):
            gam = b.var(f"gamma[{i}]", W.shape[0])
            b.in_cones(gam, x_dual)
            b.eq(W.T @ gam - theta)
            b.ge(r[i], gam.dot(W @ x - H @ s - h))
        b.minimize(_abs_mean(b, r, N))
        rep = b.solve(tol)
        if rep.status is Status.NUMERICAL_FAILURE:
            rep.raise_for_status()
        if rep.ok and (best is None or rep.objective_value < best[1].objective_value - 1e-7):
            best = (piece, rep, theta, r)
    if best is None:
        raise RuntimeError("variational-inequality program infeasible on every piece")
    piece, rep, theta, r = best
    return DroSolution(Linear(rep.value(theta).reshape(-1)), float(rep.objective_value),
                       {"r": rep.value(r).reshape(-1)}, rep.status.value,
                       piece if space.kind == INF_SPHERE else None, 0.0, 1.0, 0.0, "vi")


def vi_quadratic(prob: AgentProblem, dataset: Dataset,
                 space: QuadraticSearchSpace | None = None, absolute: bool = True,
                 tol: float | None = None) -> QuadDroSolution:
    """Mean (absolute) first-order residual fit for quadratic hypotheses.

    ``absolute=False`` minimizes the plain mean, which is valid only for
    consistent data.
    """
    space = space or QuadraticSearchSpace.bilinear()
    W, H, h = prob.W, prob.H, prob.h
    x_dual = tuple(c.dual() for c in prob.x_cones)
    N, n, m = dataset.N, prob.n, prob.m
    b = ProgramBuilder()
    Qxx = b.sym("Qxx", n)
    Qxs = cross_term_var(b, space, n, m)
    q = b.var("q", n)
    space.add_rows(b, Qxx, Qxs, q)
    r = b.var("r", N)
    for i, (s, x) in enumerate(dataset.pairs()):
        gam = b.var(f"gamma[{i}]", W.shape[0])
        b.in_cones(gam, x_dual)
        b.eq(W.T @ gam - 2.0 * (Qxx @ x) - Qxs @ s - q)
        b.ge(r[i], gam.dot(W @ x - H @ s - h))
    b.minimize(_abs_mean(b, r, N) if absolute else r.sum() / N)
    rep = b.solve(tol).raise_for_status()
    hyp = Quadratic(_psd_part(rep.value(Qxx)), rep.value(Qxs).reshape(n, m), rep.value(q).reshape(-1))
    sol = QuadDroSolution(hyp, float(rep.objective_value), {"r": rep.value(r).reshape(-1),
                                                            "lambda": float("inf")},
                          rep.status.value, None, 0.0, 1.0, 0.0, "vi")
    sol.exactness = Exactness.EXACT_CERTIFIED.value
    return sol


# --------------------------------------------------------------------------
# brute-force bilevel oracle


def _unit_inf(v):
    v = np.asarray(v, dtype=float)
    nrm = np.abs(v).max()
    return None if nrm <= 1e-12 else v / nrm


def _fit_to_ball(direction, space: LinearSearchSpace):
    """A positive multiple of ``direction`` inside the ball, or None."""
    best_t, best_d = None, np.inf
    # the distance along the ray is convex in t; a fine scan plus the
    # projection of the center is enough for a candidate generator
    t0 = max(float(direction @ space.theta0) / max(float(direction @ direction), 1e-12), 0.0)
    scale = np.abs(space.theta0).max() + space.radius
    for t in np.concatenate([[t0], np.linspace(0.0, 2.0 * scale, 401)[1:]]):
        dist = np.linalg.norm(t * direction - space.theta0, space.norm)
        if dist < best_d:
            best_t, best_d = t, dist
    if best_d <= space.radius + 1e-12:
        return best_t * direction
    return None


def bp_candidates(prob: AgentProblem, space: LinearSearchSpace, step: float = 1.0,
                  extra=None) -> np.ndarray:
    """Candidate cost vectors: a grid over the search space plus facet normals."""
    n = prob.n
    ticks = np.round(np.arange(-1.0, 1.0 + step / 2, step), 12)
    cands = []
    normals = [prob.W[j] for j in range(prob.W.shape[0])]
    if space.kind == INF_SPHERE:
        for g in itertools.product(ticks, repeat=n):
            g = np.array(g)
            if np.isclose(np.abs(g).max(), 1.0):
                cands.append(g)
        cands += [u for u in (_unit_inf(w) for w in normals) if u is not None]
    elif space.kind == SIMPLEX_FACE:
        pos = ticks[ticks >= 0]
        for g in itertools.product(pos, repeat=n):
            g = np.array(g)
            if g.sum() > 0:
                cands.append(g / g.sum())
        cands += [w / w.sum() for w in normals if np.all(w >= 0) and w.sum() > 0]
    else:
        for g in itertools.product(ticks, repeat=n):
            cands.append(space.theta0 + space.radius * np.array(g))
        cands.append(space.theta0.copy())
        for w in normals:
            u = _unit_inf(w)
            if u is not None:
                c = _fit_to_ball(u, space)
                if c is not None:
                    cands.append(c)
    if extra is not None:
        cands += [np.asarray(e, dtype=float).reshape(-1) for e in extra]
    cands = [c for c in cands if space.contains(c, 1e-7) and np.any(c != 0)]
    uniq = np.unique(np.round(np.array(cands), 12), axis=0)
    return uniq


def bp_bruteforce(prob: AgentProblem, dataset: Dataset, space: LinearSearchSpace,
                  vertex_budget: int = DEFAULT_BP_BUDGET, step: float = 1.0,
                  extra=None) -> tuple[np.ndarray, float]:
    """Minimize the mean optimistic predictability loss over candidate cost vectors.

    Candidates are the grid of ``bp_candidates`` (exact over the sphere for
    ``n <= 2``, where every cell of the normal fans is represented by a facet
    normal).  The total number of face-projection solves is checked against
    ``vertex_budget`` before any work is done.
    """
    cands = bp_candidates(prob, space, step, extra)
    cost = len(cands) * dataset.N
    if cost > vertex_budget:
        raise BudgetExceededError(f"{len(cands)} candidates x {dataset.N} samples = {cost} "
                                  f"exceeds the budget {vertex_budget}")
    best_theta, best_val = None, np.inf
    for theta in cands:
        hyp = Linear(theta)
        total = 0.0
        for s, x in dataset.pairs():
            total += predictability_loss(prob, hyp, s, x)
            if total / dataset.N >= best_val + 1e-12:
                break
        val = total / dataset.N
        if val < best_val - 1e-12:
            best_theta, best_val = theta, val
    return best_theta, float(best_val)


# --------------------------------------------------------------------------
# kernel gradient-field fit


def poly_kernel(A, B, p: int, c: float) -> np.ndarray:
    """``k(a, b) = (c <a, b> + 1)^p`` for all row pairs."""
    return (c * np.atleast_2d(A) @ np.atleast_2d(B).T + 1.0) ** p


def curl_rows(points: np.ndarray, p: int) -> np.ndarray:
    """Linear rows on ``vec(coeffs)`` (row-major) making the kernel field curl-free.

    One row per pair ``i < j``, degree ``q <= p`` and multiset of ``q - 1``
    coordinates; the pairs ``i > j`` repeat these rows up to sign.
    """
    X = np.atleast_2d(points)
    N, n = X.shape
    rows = []
    for i, j in itertools.combinations(range(n), 2):
        for q in range(1, p + 1):
            for ls in itertools.combinations_with_replacement(range(n), q - 1):
                prod = np.prod(X[:, list(ls)], axis=1) if ls else np.ones(N)
                row = np.zeros(n * N)
                row[i * N:(i + 1) * N] = X[:, j] * prod
                row[j * N:(j + 1) * N] -= X[:, i] * prod
                rows.append(row)
    return np.array(rows).reshape(-1, n * N)


def curl_row_count(n: int, p: int) -> int:
    return math.comb(n, 2) * sum(math.comb(n + q - 2, q - 1) for q in range(1, p + 1))


@dataclass
class KernelModel:
    """Gradient field ``f_i(x) = sum_k coeffs[i, k] k(x_k, x)``.

    ``coeffs`` is the coefficient matrix of the representer expansion.
    """

    coeffs: np.ndarray
    p: int
    c: float
    training_points: np.ndarray
    kappa: float
    info: dict = field(default_factory=dict)

    def field(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return poly_kernel(X, self.training_points, self.p, self.c) @ self.coeffs.T

    def kernel_matrix(self) -> np.ndarray:
        return poly_kernel(self.training_points, self.training_points, self.p, self.c)

    def curl_residual(self) -> float:
        R = curl_rows(self.training_points, self.p)
        if R.size == 0:
            return 0.0
        scale = np.maximum(np.linalg.norm(R, axis=1), 1.0)
        return float(np.max(np.abs(R @ self.coeffs.reshape(-1)) / scale))

    def to_dict(self) -> dict:
        return {"p": self.p, "c": self.c, "kappa": self.kappa, "coeffs": self.coeffs.tolist(),
                "training_points": self.training_points.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "KernelModel":
        return cls(np.asarray(d["coeffs"], dtype=float), int(d["p"]), float(d["c"]),
                   np.asarray(d["training_points"], dtype=float), float(d["kappa"]))


def _line_integral_factor(u, p: int, c: float):
    """``int_0^1 (c t u + 1)^p dt`` as a polynomial in ``u`` (no singularity at 0)."""
    u = np.asarray(u, dtype=float)
    return sum(math.comb(p, r) * (c * u) ** r / (r + 1) for r in range(p + 1))


def reconstruct_utility(model: KernelModel, x) -> np.ndarray | float:
    """``U(x) - U(0)`` by integrating the field along the segment from 0 to ``x``."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    G = _line_integral_factor(X @ model.training_points.T, model.p, model.c)
    vals = np.einsum("bi,ik,bk->b", X, model.coeffs, G)
    return float(vals[0]) if np.ndim(x) == 1 else vals


def _kernel_program(dataset: Dataset, prob: AgentProblem, p: int, c: float, kappa: float | None,
                    tol: float | None):
    X, S = dataset.X, dataset.S
    N, n = X.shape
    W, H, h = prob.W, prob.H, prob.h
    x_dual = tuple(cn.dual() for cn in prob.x_cones)
    K = poly_kernel(X, X, p, c)
    R = curl_rows(X, p)
    if R.size:
        R = R / np.maximum(np.linalg.norm(R, axis=1, keepdims=True), 1e-300)
        Z = null_space(R)
    else:
        Z = np.eye(n * N)
    w, U = np.linalg.eigh(0.5 * (K + K.T))
    L = U * np.sqrt(np.maximum(w, 0.0))
    M = np.kron(np.eye(n), L.T) @ Z
    # whiten: beta = V diag(1/sig) y, so the smoothness term is ||y||_2;
    # directions with zero kernel norm carry a zero field and are dropped
    _, sig, Vt = np.linalg.svd(M, full_matrices=False)
    keep = sig > 1e-10 * max(sig.max(initial=0.0), 1e-300)
    T = Z @ (Vt[keep].T / sig[keep])
    dim = T.shape[1]

    def build(P):
        dim = P.shape[1]
        b = ProgramBuilder()
        y = b.var("y", dim) if dim else None
        r = b.var("r", N)
        for i, (s, x) in enumerate(zip(S, X)):
            gam = b.var(f"gamma[{i}]", W.shape[0])
            b.in_cones(gam, x_dual)
            fi = (np.kron(np.eye(n), K[:, i].reshape(1, -1)) @ P) @ y if dim else np.zeros(n)
            b.eq(W.T @ gam + fi - s)
            b.ge(r[i], gam.dot(W @ x - H @ s - h))
        return b, y, r, _abs_mean(b, r, N)

    if kappa is None:
        # the unwhitened basis is better conditioned for the residual fit
        b, y, r, mean_abs = build(Z)
        b.minimize(mean_abs)
        rep = b.solve(tol).raise_for_status()
        kappa = float(rep.objective_value) * 1.01 + 1e-6
    b, y, r, mean_abs = build(T)
    b.le(mean_abs, kappa)
    t = b.var("t")
    if dim:
        b.soc(t, y)
    b.minimize(t)
    rep = b.solve(tol)
    if rep.status is Status.INFEASIBLE:
        raise ValueError(f"residual budget kappa={kappa:.4g} is infeasible")
    rep.raise_for_status()
    vec = T @ rep.value(y).reshape(-1) if dim else np.zeros(n * N)
    coeffs = vec.reshape(n, N)
    info = {"curl_rows": int(R.shape[0]), "null_dim": int(Z.shape[1]),
            "objective": float(rep.objective_value) ** 2, "min_kernel_eig": float(w.min())}
    return KernelModel(coeffs, p, c, X.copy(), float(kappa), info)


def _box(prob: AgentProblem):
    bb = prob.box_bounds()
    if bb is None:
        raise ValueError("kernel prediction needs a signal-independent box feasible set")
    return bb


def kernel_first_order_loss(model: KernelModel, prob: AgentProblem, S, X) -> np.ndarray:
    """First-order loss of ``<s, x> - U(x)`` on a box: closed-form inner maximum."""
    lo, hi = _box(prob)
    S = np.atleast_2d(S)
    X = np.atleast_2d(X)
    G = S - model.field(X)
    return np.sum(G * X, axis=1) - np.sum(np.minimum(G * lo, G * hi), axis=1)


def nonparametric_vi(dataset: Dataset, prob: AgentProblem, p: int = 2, c: float | str = "cv",
                     kappa: float | None = None, folds: int = 5, seed: int = 0,
                     c_grid=KERNEL_C_GRID, tol: float | None = None) -> KernelModel:
    """Smoothest curl-free kernel gradient field within a residual budget.

    Parameters
    ----------
    c : float or "cv"
        Kernel scale.  "cv" picks it from ``c_grid`` by k-fold validation of
        the first-order loss.
    kappa : float, optional
        Mean absolute residual budget.  By default the smallest achievable
        residual (plus 1%) is used.
    """
    if p < 1 or p > 3:
        raise ValueError("kernel degree must lie in 1..3")
    if isinstance(c, str):
        if c != "cv":
            raise ValueError("c must be a positive number or 'cv'")
        rng = np.random.default_rng(seed)
        k = min(folds, dataset.N)
        perm = rng.permutation(dataset.N)
        parts = np.array_split(perm, k)
        scores = []
        for cc in c_grid:
            total = 0.0
            for f in range(k):
                val = parts[f]
                train = np.concatenate([parts[g] for g in range(k) if g != f]) if k > 1 else val
                try:
                    mdl = _kernel_program(dataset.subset(train), prob, p, cc, kappa, tol)
                    total += float(np.mean(kernel_first_order_loss(mdl, prob, dataset.S[val],
                                                                   dataset.X[val])))
                except (NumericalFailureError, ValueError):
                    total = np.inf
                    break
            scores.append(total / k)
        order = np.argsort(scores, kind="stable")
        for rank, j in enumerate(order):
            try:
                model = _kernel_program(dataset, prob, p, float(c_grid[j]), kappa, tol)
            except NumericalFailureError:
                if rank == len(order) - 1:
                    raise
                continue
            model.info["cv_scores"] = dict(zip(map(float, c_grid), map(float, scores)))
            model.info["cv_rank"] = rank
            return model
    return _kernel_program(dataset, prob, p, float(c), kappa, tol)


def local_predict(model: KernelModel, prob: AgentProblem, s, step: float = 1e-3,
                  seed: int | None = None, max_iter: int = 100_000, window: int = 50,
                  stop_tol: float = 1e-6, return_trace: bool = False):
    """Projected gradient descent on ``<s, x> - U(x)`` over a box.

    Accepts one signal or a batch of signals (rows).  The starting points are
    uniform in the box.  The result is a local minimizer only.
    """
    lo, hi = _box(prob)
    S = np.atleast_2d(np.asarray(s, dtype=float))
    rng = np.random.default_rng(seed)
    X = rng.uniform(lo, hi, size=(S.shape[0], lo.size))
    calm = np.zeros(S.shape[0], dtype=int)
    active = np.ones(S.shape[0], dtype=bool)
    trace = []
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Xa = X[idx]
        G = S[idx] - model.field(Xa)
        Xn = np.clip(Xa - step * G, lo, hi)
        moved = np.linalg.norm(Xn - Xa, axis=1)
        X[idx] = Xn
        calm[idx] = np.where(moved < stop_tol, calm[idx] + 1, 0)
        active[idx] = calm[idx] < window
        if return_trace:
            trace.append(np.sum(S * X, axis=1) - reconstruct_utility(model, X))
    out = X[0] if np.ndim(s) == 1 else X
    if return_trace:
        return out, np.array(trace)
    return out


def kernel_objective(model: KernelModel, S, X) -> np.ndarray:
    S = np.atleast_2d(S)
    X = np.atleast_2d(X)
    return np.sum(S * X, axis=1) - reconstruct_utility(model, X)


# --------------------------------------------------------------------------
# rationality estimation


@dataclass
class RationalityEstimate:
    delta_hat: float
    theta_hat: object
    solution: object = None


def estimate_rationality(prob: AgentProblem, dataset: Dataset, space) -> RationalityEstimate:
    """Smallest band ``delta`` such that some hypothesis explains every sample.

    Solved as the zero-radius CVaR program at level ``1/N``, which equals the
    largest per-sample suboptimality loss.
    """
    alpha = 1.0 / dataset.N
    if isinstance(space, LinearSearchSpace):
        sol = solve_dro_linear(prob, dataset, space, WassersteinSpec(0.0), alpha)
    elif isinstance(space, QuadraticSearchSpace):
        sol = solve_dro_quadratic(prob, dataset, space, Wasserstein2(0.0), alpha)
    else:
        raise TypeError(f"unsupported search space {type(space).__name__}")
    return RationalityEstimate(max(float(sol.certificate), 0.0), sol.theta_hat, sol)
