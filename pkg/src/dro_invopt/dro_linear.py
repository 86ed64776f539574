"""Distributionally robust inverse optimization for linear hypotheses.

The worst-case CVaR of the suboptimality loss over a 1-Wasserstein ball is
computed exactly by a finite conic program.  Each sample contributes one
block of dual variables for the tail piece and, when the sample lies outside
the support set, a second block for the zero piece.
"""

from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .agent import AgentProblem, Linear, distance_to_support
from .conic import (Affine, InfeasibleError, ProgramBuilder, SolverReport, Status, as_norm,
                    dual_norm, norm_name, vstack)
from .data import Dataset

INF_SPHERE = "inf_sphere"
SIMPLEX_FACE = "simplex_face"
NORM_BALL = "norm_ball"

TIE_TOL = 1e-7
WEIGHT_FLOOR = 1e-7


class EmptyBallError(RuntimeError):
    """No distribution supported on the support set lies within the radius."""

    def __init__(self, message: str, floor: float = float("nan")):
        super().__init__(message)
        self.floor = floor


def transport_floor(prob: AgentProblem, dataset: Dataset, norm=float("inf"), p: int = 1) -> float:
    """Smallest p-Wasserstein distance from the empirical distribution to the support set.

    Each sample moves to its nearest point of the support set, so the floor
    is the p-mean of the projection distances.
    """
    if dataset.consistent.all():
        return 0.0
    dist = [distance_to_support(prob, s, x, norm) ** p
            for s, x, ok in zip(dataset.S, dataset.X, dataset.consistent) if not ok]
    return float((sum(dist) / dataset.N) ** (1.0 / p))


def check_radius(prob: AgentProblem, dataset: Dataset, eps: float, norm, p: int) -> float:
    """Raise :class:`EmptyBallError` if ``eps`` is below the transport floor."""
    floor = transport_floor(prob, dataset, norm, p)
    if eps < floor * (1.0 - 1e-6) - 1e-9:
        raise EmptyBallError(f"radius {eps:.4g} is below the transport floor {floor:.4g}", floor)
    if floor > 0 and eps <= floor * (1.0 + 1e-6) + 1e-9:
        warnings.warn("radius is at the transport floor; the ball is nearly empty", stacklevel=3)
    return floor


@dataclass(frozen=True)
class LinearSearchSpace:
    """Admissible cost vectors.

    ``inf_sphere`` is ``{||theta||_inf = 1}`` (handled facet by facet),
    ``simplex_face`` is ``{theta >= 0, sum(theta) = 1}`` and ``norm_ball``
    is ``{||theta - theta0|| <= radius}``.
    """

    kind: str
    theta0: np.ndarray | None = None
    radius: float = 1.0
    norm: float = float("inf")

    def __post_init__(self):
        if self.kind not in (INF_SPHERE, SIMPLEX_FACE, NORM_BALL):
            raise ValueError(f"unknown linear search space {self.kind!r}")
        object.__setattr__(self, "norm", as_norm(self.norm))
        if self.kind == NORM_BALL:
            if self.theta0 is None:
                raise ValueError("a norm ball needs a center")
            object.__setattr__(self, "theta0", np.asarray(self.theta0, dtype=float).reshape(-1))
            if self.radius < 0:
                raise ValueError("radius must be nonnegative")

    @classmethod
    def inf_sphere(cls) -> "LinearSearchSpace":
        return cls(INF_SPHERE)

    @classmethod
    def simplex_face(cls) -> "LinearSearchSpace":
        return cls(SIMPLEX_FACE)

    @classmethod
    def norm_ball(cls, theta0, radius: float = 1.0, norm=float("inf")) -> "LinearSearchSpace":
        return cls(NORM_BALL, theta0, float(radius), norm)

    def contains_zero(self) -> bool:
        if self.kind != NORM_BALL:
            return False
        return float(np.linalg.norm(self.theta0, self.norm)) <= self.radius

    def n_pieces(self, n: int) -> int:
        return 2 * n if self.kind == INF_SPHERE else 1

    @staticmethod
    def facet(index: int) -> tuple[int, float]:
        """Facet ``index`` fixes coordinate ``index // 2`` to -1 (even) or +1 (odd)."""
        return index // 2, (-1.0 if index % 2 == 0 else 1.0)

    def add_rows(self, builder: ProgramBuilder, theta: Affine, piece: int = 0):
        n = theta.size
        if self.kind == INF_SPHERE:
            k, sign = self.facet(piece)
            builder.eq(theta[k], sign)
            builder.norm_le(theta, 1.0, float("inf"))
        elif self.kind == SIMPLEX_FACE:
            builder.nonneg(theta)
            builder.eq(theta.sum(), 1.0)
        else:
            if self.theta0.size != n:
                raise ValueError("ball center has the wrong dimension")
            builder.norm_le(theta - self.theta0, self.radius, self.norm)

    def contains(self, theta, tol: float = 1e-7) -> bool:
        theta = np.asarray(theta, dtype=float)
        if self.kind == INF_SPHERE:
            return abs(np.abs(theta).max() - 1.0) <= tol
        if self.kind == SIMPLEX_FACE:
            return bool(theta.min() >= -tol and abs(theta.sum() - 1.0) <= tol)
        return float(np.linalg.norm(theta - self.theta0, self.norm)) <= self.radius + tol

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == NORM_BALL:
            d.update(theta0=self.theta0.tolist(), radius=self.radius, norm=norm_name(self.norm))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LinearSearchSpace":
        if d["kind"] == NORM_BALL:
            return cls.norm_ball(d["theta0"], d.get("radius", 1.0), d.get("norm", "inf"))
        return cls(d["kind"])


@dataclass(frozen=True)
class WassersteinSpec:
    """Order ``p``, radius ``eps`` and ground norm on ``(s, x)``."""

    eps: float
    ground_norm: float = float("inf")
    p: int = 1

    def __post_init__(self):
        if not self.eps >= 0:
            raise ValueError("Wasserstein radius must be nonnegative")
        object.__setattr__(self, "eps", float(self.eps))
        object.__setattr__(self, "ground_norm", as_norm(self.ground_norm))

    def to_dict(self):
        return {"p": self.p, "eps": self.eps, "ground_norm": norm_name(self.ground_norm)}


@dataclass
class DroSolution:
    theta_hat: object
    certificate: float
    duals: dict
    status: str
    facet_index: int | None = None
    eps: float = 0.0
    alpha: float = 1.0
    delta: float = 0.0
    method: str = "linear"
    info: dict = field(default_factory=dict)

    @property
    def theta(self) -> np.ndarray:
        return self.theta_hat.theta

    def to_dict(self) -> dict:
        return {"method": self.method,
                "theta_hat": self.theta_hat.to_dict(),
                "certificate": self.certificate,
                "status": self.status,
                "facet_index": self.facet_index,
                "eps": self.eps, "alpha": self.alpha, "delta": self.delta,
                "duals": {k: np.asarray(v, dtype=float).tolist() for k, v in self.duals.items()},
                "info": self.info}

    def to_json(self, **extra) -> str:
        d = self.to_dict()
        d.update(extra)
        return json.dumps(d, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _check_alpha(alpha):
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")


def _build(prob: AgentProblem, data: Dataset, wass: WassersteinSpec, alpha: float,
           delta: float, bounded: bool, space: LinearSearchSpace | None, piece: int,
           theta_fixed=None):
    b = ProgramBuilder()
    N = data.N
    theta = b.var("theta", prob.n)
    if theta_fixed is not None:
        b.eq(theta, np.asarray(theta_fixed, dtype=float))
    else:
        space.add_rows(b, theta, piece)
    lam = b.var("lambda")
    b.nonneg(lam)
    tau = b.var("tau")
    if bounded:
        b.nonneg(tau)
    r = b.var("r", N)
    dn = dual_norm(wass.ground_norm)
    C, d, W, H, h = prob.C, prob.d, prob.W, prob.H, prob.h
    s_dual = prob.signal_set.dual_cones()
    x_dual = tuple(c.dual() for c in prob.x_cones)
    handles = {"phi1": [], "mu1": [], "gamma": [], "phi2": [], "mu2": []}
    for i, (s, x) in enumerate(data.pairs()):
        gs = C @ s - d
        gx = W @ x - H @ s - h
        phi1 = b.var(f"phi1[{i}]", C.shape[0])
        mu1 = b.var(f"mu1[{i}]", W.shape[0])
        gam = b.var(f"gamma[{i}]", W.shape[0])
        b.in_cones(phi1, s_dual)
        b.in_cones(mu1, x_dual)
        b.in_cones(gam, x_dual)
        mg = mu1 + gam
        b.le(phi1.dot(gs) + mg.dot(gx), r[i] + tau + delta)
        b.eq(W.T @ gam - theta)
        b.norm_le(vstack([C.T @ phi1 - H.T @ mg, W.T @ mg]), lam, dn)
        handles["phi1"].append(phi1)
        handles["mu1"].append(mu1)
        handles["gamma"].append(gam)
        if data.consistent[i]:
            b.nonneg(r[i])
            handles["phi2"].append(None)
            handles["mu2"].append(None)
        else:
            phi2 = b.var(f"phi2[{i}]", C.shape[0])
            mu2 = b.var(f"mu2[{i}]", W.shape[0])
            b.in_cones(phi2, s_dual)
            b.in_cones(mu2, x_dual)
            b.le(phi2.dot(gs) + mu2.dot(gx), r[i])
            b.norm_le(vstack([C.T @ phi2 - H.T @ mu2, W.T @ mu2]), lam, dn)
            handles["phi2"].append(phi2)
            handles["mu2"].append(mu2)
    b.minimize(tau + (wass.eps * lam + r.sum() / N) / alpha)
    handles.update(theta=theta, lam=lam, tau=tau, r=r)
    return b, handles


def _extract(rep: SolverReport, handles) -> dict:
    out = {"lambda": rep.scalar(handles["lam"]), "tau": rep.scalar(handles["tau"]),
           "r": rep.value(handles["r"]).reshape(-1)}
    for key in ("phi1", "mu1", "gamma", "phi2", "mu2"):
        rows = []
        width = None
        for h in handles[key]:
            if h is not None:
                width = h.size
        for h in handles[key]:
            if h is None:
                rows.append(np.full(width or 0, np.nan))
            else:
                rows.append(rep.value(h).reshape(-1))
        if width is not None:
            out[key] = np.vstack(rows)
    return out


def _solve_piece(args):
    prob, data, wass, alpha, delta, bounded, space, piece, tol = args
    b, handles = _build(prob, data, wass, alpha, delta, bounded, space, piece)
    rep = b.solve(tol)
    return piece, rep, handles


def solve_dro_linear(prob: AgentProblem, dataset: Dataset, space: LinearSearchSpace,
                     wass: WassersteinSpec, alpha: float = 1.0, delta: float = 0.0,
                     tol: float | None = None, workers: int = 1,
                     force_bounded: bool = False) -> DroSolution:
    """Minimize the worst-case CVaR of the (bounded-rationality) suboptimality loss.

    Parameters
    ----------
    space : LinearSearchSpace
        For the infinity-norm sphere the program is solved once per facet and
        the facet with the smallest certificate is returned; ties within
        ``TIE_TOL`` go to the lowest facet index.
    delta : float
        Band width of the bounded-rationality loss.  ``delta > 0`` adds the
        constraint ``tau >= 0``; ``delta = 0`` solves the plain program unless
        ``force_bounded`` is set.
    workers : int
        Thread count for the facet solves.

    Returns
    -------
    DroSolution
        ``certificate`` is the optimal value, i.e. the worst-case risk bound.
    """
    _check_alpha(alpha)
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if wass.p != 1:
        raise ValueError("linear hypotheses use the 1-Wasserstein ball")
    if space.kind == NORM_BALL and space.contains_zero():
        warnings.warn("search space contains theta = 0, which makes every loss vanish", stacklevel=2)
    floor = check_radius(prob, dataset, wass.eps, wass.ground_norm, 1)
    bounded = delta > 0 or force_bounded
    pieces = range(space.n_pieces(prob.n))
    jobs = [(prob, dataset, wass, alpha, float(delta), bounded, space, k, tol) for k in pieces]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_solve_piece, jobs))
    else:
        results = [_solve_piece(j) for j in jobs]
    best = None
    failures = []
    for piece, rep, handles in sorted(results, key=lambda t: t[0]):
        if rep.status is Status.UNBOUNDED:
            raise EmptyBallError("the program is unbounded, so the ball is empty", floor)
        if rep.status is Status.NUMERICAL_FAILURE:
            failures.append(rep)
            continue
        if not rep.ok:
            continue
        if best is None or rep.objective_value < best[1].objective_value - TIE_TOL:
            best = (piece, rep, handles)
    if best is None:
        if failures:
            failures[0].raise_for_status()
        raise InfeasibleError(results[0][1], "every search-space piece is infeasible")
    piece, rep, handles = best
    theta = rep.value(handles["theta"]).reshape(-1)
    info = {"piece_values": {int(p): (r.objective_value if r.ok else None) for p, r, _ in results},
            "transport_floor": floor,
            "residuals": [float(v) for v in rep.residuals]}
    return DroSolution(Linear(theta), float(rep.objective_value), _extract(rep, handles),
                       rep.status.value,
                       piece if space.kind == INF_SPHERE else None,
                       wass.eps, alpha, float(delta), "linear", info)


def worst_case_risk(prob: AgentProblem, dataset: Dataset, theta, wass: WassersteinSpec,
                    alpha: float = 1.0, delta: float = 0.0, tol: float | None = None) -> float:
    """Worst-case CVaR over the ball for a fixed cost vector ``theta``."""
    _check_alpha(alpha)
    check_radius(prob, dataset, wass.eps, wass.ground_norm, 1)
    b, _ = _build(prob, dataset, wass, alpha, float(delta), delta > 0, None, 0, theta_fixed=theta)
    rep = b.solve(tol)
    if rep.status is Status.UNBOUNDED:
        raise EmptyBallError("the program is unbounded, so the ball is empty")
    return float(rep.raise_for_status().objective_value)


# --------------------------------------------------------------------------
# worst-case distribution


@dataclass
class DiscreteDistribution:
    """Atoms ``(weight, s, x)``; ``tail`` marks atoms of the CVaR tail piece."""

    weights: np.ndarray
    S: np.ndarray
    X: np.ndarray
    tail: np.ndarray
    origin: np.ndarray
    dropped_weight: float = 0.0
    dropped_transport: float = 0.0

    def __len__(self):
        return self.weights.size

    def points(self) -> np.ndarray:
        return np.hstack([self.S, self.X])

    def to_csv(self, path, header_comment: str | None = None):
        m, n = self.S.shape[1], self.X.shape[1]
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["weight"] + [f"s_{k + 1}" for k in range(m)] + [f"x_{k + 1}" for k in range(n)])
            for wt, s, x in zip(self.weights, self.S, self.X):
                w.writerow([repr(float(v)) for v in np.concatenate([[wt], s, x])])


def worst_case_distribution(prob: AgentProblem, dataset: Dataset, theta, wass: WassersteinSpec,
                            alpha: float = 1.0, tol: float | None = None
                            ) -> tuple[float, DiscreteDistribution]:
    """Maximize the CVaR of the loss of ``theta`` over the ball.

    Each sample splits into a tail atom and a body atom with masses
    ``pi_i1 / N`` and ``pi_i2 / N``; the tail atoms carry total mass
    ``alpha``.  Atom locations are recovered from the perspective variables.
    """
    _check_alpha(alpha)
    if wass.p != 1:
        raise ValueError("linear hypotheses use the 1-Wasserstein ball")
    theta = np.asarray(theta, dtype=float).reshape(-1)
    check_radius(prob, dataset, wass.eps, wass.ground_norm, 1)
    N, m, n = dataset.N, prob.m, prob.n
    C, d, W, H, h = prob.C, prob.d, prob.W, prob.H, prob.h
    b = ProgramBuilder()
    pis, ps, qs, ts = {}, {}, {}, {}
    obj = Affine.lift(0.0)
    tail_mass = Affine.lift(0.0)
    transport = Affine.lift(0.0)
    for i, (s, x) in enumerate(dataset.pairs()):
        for j in (1, 2):
            pi = b.var(f"pi[{i},{j}]")
            p = b.var(f"p[{i},{j}]", m)
            q = b.var(f"q[{i},{j}]", n)
            t = b.var(f"t[{i},{j}]")
            b.nonneg(pi)
            b.in_cones(C @ p - d.reshape(-1, 1) @ pi, prob.s_cones)
            b.in_cones(W @ q - H @ p - h.reshape(-1, 1) @ pi, prob.x_cones)
            b.norm_le(vstack([p - s.reshape(-1, 1) @ pi, q - x.reshape(-1, 1) @ pi]), t, wass.ground_norm)
            transport = transport + t
            pis[i, j], ps[i, j], qs[i, j], ts[i, j] = pi, p, q, t
        w = b.var(f"w[{i}]", n)
        b.in_cones(W @ w - H @ ps[i, 1] - h.reshape(-1, 1) @ pis[i, 1], prob.x_cones)
        b.eq(pis[i, 1] + pis[i, 2], 1.0)
        tail_mass = tail_mass + pis[i, 1]
        obj = obj + (qs[i, 1] - w).dot(theta)
    b.eq(tail_mass / N, alpha)
    b.le(transport / N, wass.eps)
    b.maximize(obj / (alpha * N))
    rep = b.solve(tol)
    if rep.status is Status.INFEASIBLE:
        raise EmptyBallError("no distribution on the support set lies within the radius")
    rep.raise_for_status()
    weights, S_out, X_out, tail, origin = [], [], [], [], []
    dropped_w = dropped_t = 0.0
    for (i, j), pi in pis.items():
        piv = rep.scalar(pi)
        wt = piv / N
        if piv <= WEIGHT_FLOOR:
            dropped_w += max(wt, 0.0)
            s_i, x_i = dataset.S[i], dataset.X[i]
            disp = np.concatenate([rep.value(ps[i, j]).reshape(-1) - piv * s_i,
                                   rep.value(qs[i, j]).reshape(-1) - piv * x_i])
            dropped_t += float(np.linalg.norm(disp, wass.ground_norm)) / N if disp.size else 0.0
            continue
        weights.append(wt)
        S_out.append(rep.value(ps[i, j]).reshape(-1) / piv)
        X_out.append(rep.value(qs[i, j]).reshape(-1) / piv)
        tail.append(j == 1)
        origin.append(i)
    if dropped_t > 1e-6:
        warnings.warn(f"dropped atoms carried transport {dropped_t:.3g}", stacklevel=2)
    dist = DiscreteDistribution(np.array(weights), np.array(S_out).reshape(-1, m),
                                np.array(X_out).reshape(-1, n), np.array(tail, dtype=bool),
                                np.array(origin, dtype=int), dropped_w, dropped_t)
    return float(rep.objective_value), dist
