"""Safe semidefinite approximation for quadratic hypotheses.

Hypotheses are ``F(s, x) = <x, Qxx x> + <x, Qxs s> + <q, x>``.  The
worst-case CVaR of the suboptimality loss over a 2-Wasserstein ball is
bounded above by an SDP with one linear matrix inequality per sample (two for
samples outside the support set).  The bound is exact whenever the returned
``lambda`` makes the Lagrangian of each inner problem strictly concave.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .agent import AgentProblem, Quadratic
from .conic import (Affine, ProgramBuilder, Status, as_norm, block, norm_name, scaled_identity,
                    vstack)
from .data import Dataset
from .dro_linear import DroSolution, EmptyBallError, _check_alpha, check_radius

STRONGLY_CONVEX = "strongly_convex"
BILINEAR = "bilinear"
NOMINAL_BALL = "nominal_ball"
FIXED = "fixed"

EXACTNESS_MARGIN = 1e-7


class Exactness(str, enum.Enum):
    EXACT_CERTIFIED = "exact_certified"
    POSSIBLY_CONSERVATIVE = "possibly_conservative"


@dataclass(frozen=True)
class QuadraticSearchSpace:
    """Admissible ``(Qxx, Qxs, q)``.

    ``strongly_convex``: ``Qxx >= I``.  ``bilinear``: ``Qxx >= 0`` and
    ``Qxs = I``.  ``nominal_ball``: ``Qxx >= 0`` and the stacked parameter
    vector within ``radius`` of ``theta0``.  ``fixed``: a single hypothesis.
    """

    kind: str
    theta0: Quadratic | None = None
    radius: float = 1.0
    norm: float = 2.0

    def __post_init__(self):
        if self.kind not in (STRONGLY_CONVEX, BILINEAR, NOMINAL_BALL, FIXED):
            raise ValueError(f"unknown quadratic search space {self.kind!r}")
        object.__setattr__(self, "norm", as_norm(self.norm))
        if self.kind in (NOMINAL_BALL, FIXED) and self.theta0 is None:
            raise ValueError(f"{self.kind} needs a reference hypothesis")

    @classmethod
    def strongly_convex(cls):
        return cls(STRONGLY_CONVEX)

    @classmethod
    def bilinear(cls):
        return cls(BILINEAR)

    @classmethod
    def nominal_ball(cls, theta0: Quadratic, radius: float, norm=2.0):
        return cls(NOMINAL_BALL, theta0, float(radius), norm)

    @classmethod
    def fixed(cls, theta: Quadratic):
        return cls(FIXED, theta)

    def add_rows(self, builder: ProgramBuilder, Qxx: Affine, Qxs: Affine, q: Affine):
        n, m = Qxs.shape
        if self.kind == FIXED:
            builder.eq(Qxx, self.theta0.Qxx)
            if Qxs.terms:
                builder.eq(Qxs, self.theta0.Qxs)
            builder.eq(q, self.theta0.q)
            return
        if self.kind == STRONGLY_CONVEX:
            builder.psd(Qxx - np.eye(n))
        else:
            builder.psd(Qxx)
        if self.kind == BILINEAR:
            if m != n:
                raise ValueError("the bilinear search space needs m == n")
            if Qxs.terms:
                builder.eq(Qxs, np.eye(n))
        elif self.kind == NOMINAL_BALL:
            t0 = self.theta0
            ref = np.concatenate([t0.Qxx.reshape(-1), t0.Qxs.reshape(-1), t0.q])
            vec = vstack([Qxx.flat(), Qxs.flat(), q.flat()])
            builder.norm_le(vec - ref, self.radius, self.norm)

    def fixed_cross_term(self, n: int, m: int):
        """The cross matrix when the space pins it, else None.

        Passing it as a constant keeps the LMI sparsity visible to the solver.
        """
        if self.kind == BILINEAR and m == n:
            return np.eye(n)
        if self.kind == FIXED:
            return np.asarray(self.theta0.Qxs, dtype=float).reshape(n, m)
        return None

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.theta0 is not None:
            d["theta0"] = self.theta0.to_dict()
        if self.kind == NOMINAL_BALL:
            d.update(radius=self.radius, norm=norm_name(self.norm))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QuadraticSearchSpace":
        t0 = d.get("theta0")
        if t0 is not None:
            t0 = Quadratic(t0["Qxx"], t0["Qxs"], t0["q"])
        return cls(d["kind"], t0, float(d.get("radius", 1.0)), d.get("norm", 2.0))


@dataclass(frozen=True)
class Wasserstein2:
    """2-Wasserstein ball with the Euclidean ground metric."""

    eps: float
    p: int = 2
    ground_norm: float = 2.0

    def __post_init__(self):
        if not self.eps >= 0:
            raise ValueError("Wasserstein radius must be nonnegative")
        if self.p != 2 or as_norm(self.ground_norm) != 2.0:
            raise ValueError("quadratic hypotheses use the 2-Wasserstein ball with the 2-norm")
        object.__setattr__(self, "eps", float(self.eps))

    def to_dict(self):
        return {"p": 2, "eps": self.eps, "ground_norm": "2"}


@dataclass
class QuadDroSolution(DroSolution):
    exactness: str = Exactness.POSSIBLY_CONSERVATIVE.value

    @property
    def theta(self) -> Quadratic:
        return self.theta_hat

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["exactness"] = self.exactness
        return d


def cross_term_var(b: ProgramBuilder, space: QuadraticSearchSpace, n: int, m: int) -> Affine:
    """Variable for the cross matrix, or a constant when the space pins it."""
    fixed = space.fixed_cross_term(n, m)
    if fixed is not None:
        return Affine.lift(fixed)
    return b.var("Qxs", (n, m))


def _psd_part(M: np.ndarray) -> np.ndarray:
    M = 0.5 * (M + M.T)
    w, U = np.linalg.eigh(M)
    return (U * np.maximum(w, 0.0)) @ U.T


def exactness_matrix(Qxx, Qxs, lam: float) -> np.ndarray:
    """The block matrix whose strict positivity certifies exactness."""
    Qxx = np.atleast_2d(np.asarray(Qxx, dtype=float))
    Qxs = np.atleast_2d(np.asarray(Qxs, dtype=float))
    n, m = Qxs.shape
    Z = np.zeros((n, n))
    return np.block([[lam * np.eye(m), -0.5 * Qxs.T, 0.5 * Qxs.T],
                     [-0.5 * Qxs, lam * np.eye(n) - Qxx, Z],
                     [0.5 * Qxs, Z, Qxx]])


def check_exactness(sol: QuadDroSolution, margin: float = EXACTNESS_MARGIN) -> Exactness:
    """Certify that the approximation coincides with the robust problem."""
    lam = float(sol.duals.get("lambda", np.nan))
    if math.isinf(lam):
        # zero radius: the singleton reformulation is exact
        return Exactness.EXACT_CERTIFIED
    th = sol.theta_hat
    M = exactness_matrix(th.Qxx, th.Qxs, lam)
    if np.linalg.eigvalsh(M).min() > margin:
        return Exactness.EXACT_CERTIFIED
    return Exactness.POSSIBLY_CONSERVATIVE


def _quad_value(Qxx: Affine, Qxs: Affine, q: Affine, s, x) -> Affine:
    """``F(s, x)`` as an affine function of the parameters."""
    return Qxx.flat().dot(np.outer(x, x)) + Qxs.flat().dot(np.outer(x, s)) + q.dot(x)


def _build(prob, data, space, eps, alpha, delta, bounded, singleton):
    b = ProgramBuilder()
    n, m, N = prob.n, prob.m, data.N
    C, d, W, H, h = prob.C, prob.d, prob.W, prob.H, prob.h
    s_dual = prob.signal_set.dual_cones()
    x_dual = tuple(c.dual() for c in prob.x_cones)
    Qxx = b.sym("Qxx", n)
    Qxs = cross_term_var(b, space, n, m)
    q = b.var("q", n)
    space.add_rows(b, Qxx, Qxs, q)
    tau = b.var("tau")
    if bounded:
        b.nonneg(tau)
    r = b.var("r", N)
    handles = {"Qxx": Qxx, "Qxs": Qxs, "q": q, "tau": tau, "r": r,
               "phi1": [], "mu1": [], "gamma": [], "phi2": [], "mu2": []}
    lam = None
    if not singleton:
        lam = b.var("lambda")
        b.nonneg(lam)
        handles["lam"] = lam
    for i, (s, x) in enumerate(data.pairs()):
        gam = b.var(f"gamma[{i}]", W.shape[0])
        b.in_cones(gam, x_dual)
        handles["gamma"].append(gam)
        if singleton:
            # inner problem over y only: [[Qxx, eta], [eta', rho]] >= 0
            eta = 0.5 * (Qxs @ s + q - W.T @ gam)
            rho = r[i] + tau + delta - _quad_value(Qxx, Qxs, q, s, x) + gam.dot(H @ s + h)
            b.psd(block([[Qxx, eta], [eta.T, rho]]))
            b.nonneg(r[i])
            for key in ("phi1", "mu1", "phi2", "mu2"):
                handles[key].append(None)
            continue
        phi1 = b.var(f"phi1[{i}]", C.shape[0])
        mu1 = b.var(f"mu1[{i}]", W.shape[0])
        b.in_cones(phi1, s_dual)
        b.in_cones(mu1, x_dual)
        mg = mu1 + gam
        sq = float(s @ s + x @ x)
        chi = 0.5 * (H.T @ mg - C.T @ phi1) - s.reshape(-1, 1) @ lam
        zeta = -0.5 * (q + W.T @ mu1) - x.reshape(-1, 1) @ lam
        eta = 0.5 * (q - W.T @ gam)
        rho = tau + r[i] + sq * lam + phi1.dot(d) + mg.dot(h) + delta
        half = 0.5 * Qxs
        b.psd(block([[scaled_identity(lam, m), -half.T, half.T, chi],
                     [-half, scaled_identity(lam, n) - Qxx, None, zeta],
                     [half, None, Qxx, eta],
                     [chi.T, zeta.T, eta.T, rho]]))
        handles["phi1"].append(phi1)
        handles["mu1"].append(mu1)
        if data.consistent[i]:
            b.nonneg(r[i])
            handles["phi2"].append(None)
            handles["mu2"].append(None)
            continue
        phi2 = b.var(f"phi2[{i}]", C.shape[0])
        mu2 = b.var(f"mu2[{i}]", W.shape[0])
        b.in_cones(phi2, s_dual)
        b.in_cones(mu2, x_dual)
        chi2 = 0.5 * (H.T @ mu2 - C.T @ phi2) - s.reshape(-1, 1) @ lam
        zeta2 = -0.5 * (W.T @ mu2) - x.reshape(-1, 1) @ lam
        rho2 = r[i] + sq * lam + phi2.dot(d) + mu2.dot(h)
        # arrow matrix [[lam I, v], [v', rho2]] >= 0 is a rotated cone
        b.rsoc(lam, rho2, vstack([chi2, zeta2]))
        handles["phi2"].append(phi2)
        handles["mu2"].append(mu2)
    obj = r.sum() / N
    if lam is not None:
        obj = obj + eps ** 2 * lam
    b.minimize(tau + obj / alpha)
    return b, handles


def _stack(rep, items):
    width = next((h.size for h in items if h is not None), None)
    if width is None:
        return None
    return np.vstack([np.full(width, np.nan) if h is None else rep.value(h).reshape(-1) for h in items])


def _solution(rep, handles, eps, alpha, delta, method, info) -> QuadDroSolution:
    Qxx = rep.value(handles["Qxx"])
    Qxs = rep.value(handles["Qxs"]).reshape(handles["Qxs"].shape)
    q = rep.value(handles["q"]).reshape(-1)
    hyp = Quadratic(_psd_part(Qxx), Qxs, q)
    duals = {"tau": rep.scalar(handles["tau"]), "r": rep.value(handles["r"]).reshape(-1),
             "lambda": rep.scalar(handles["lam"]) if "lam" in handles else float("inf")}
    for key in ("phi1", "mu1", "gamma", "phi2", "mu2"):
        arr = _stack(rep, handles.get(key, []))
        if arr is not None:
            duals[key] = arr
    info = dict(info)
    info["residuals"] = [float(v) for v in rep.residuals]
    info["raw_Qxx_min_eig"] = float(np.linalg.eigvalsh(0.5 * (Qxx + Qxx.T)).min())
    sol = QuadDroSolution(hyp, float(rep.objective_value), duals, rep.status.value, None,
                          eps, alpha, delta, method, info)
    sol.exactness = check_exactness(sol).value
    return sol


def solve_dro_quadratic(prob: AgentProblem, dataset: Dataset, space: QuadraticSearchSpace,
                        wass: Wasserstein2, alpha: float = 1.0, delta: float = 0.0,
                        tol: float | None = None) -> QuadDroSolution:
    """Minimize the SDP upper bound on the worst-case CVaR.

    At zero radius the ball is the empirical distribution itself and the
    program is replaced by its exact singleton form (the general form then
    has no minimizer because ``lambda`` escapes to infinity).

    Raises
    ------
    EmptyBallError
        If no distribution on the support set lies within the radius.
    """
    _check_alpha(alpha)
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    eps = wass.eps
    floor = check_radius(prob, dataset, eps, 2.0, 2)
    singleton = eps == 0.0
    bounded = delta > 0
    b, handles = _build(prob, dataset, space, eps, alpha, float(delta), bounded, singleton)
    rep = b.solve(tol)
    if rep.status is Status.UNBOUNDED:
        raise EmptyBallError("the program is unbounded, so the ball is empty", floor)
    rep.raise_for_status()
    info = {"form": "singleton" if singleton else "general", "transport_floor": floor}
    return _solution(rep, handles, eps, alpha, float(delta), "quadratic", info)


def worst_case_risk_quadratic(prob: AgentProblem, dataset: Dataset, hyp: Quadratic,
                              wass: Wasserstein2, alpha: float = 1.0, delta: float = 0.0,
                              tol: float | None = None) -> QuadDroSolution:
    """The SDP bound for a fixed hypothesis."""
    return solve_dro_quadratic(prob, dataset, QuadraticSearchSpace.fixed(hyp), wass, alpha, delta, tol)


def erm_first_order(prob: AgentProblem, dataset: Dataset, space: QuadraticSearchSpace,
                    alpha: float = 1.0, tol: float | None = None) -> QuadDroSolution:
    """Minimize the empirical CVaR of the first-order loss.

    The loss at sample ``i`` equals ``min <gamma, W x - H s - h>`` over dual
    multipliers with ``W' gamma = 2 Qxx x + Qxs s + q``, so the whole problem
    is one conic program in the parameters and multipliers.
    """
    _check_alpha(alpha)
    b = ProgramBuilder()
    n, m, N = prob.n, prob.m, dataset.N
    W, H, h = prob.W, prob.H, prob.h
    x_dual = tuple(c.dual() for c in prob.x_cones)
    Qxx = b.sym("Qxx", n)
    Qxs = cross_term_var(b, space, n, m)
    q = b.var("q", n)
    space.add_rows(b, Qxx, Qxs, q)
    tau = b.var("tau")
    r = b.var("r", N)
    gams = []
    for i, (s, x) in enumerate(dataset.pairs()):
        gam = b.var(f"gamma[{i}]", W.shape[0])
        b.in_cones(gam, x_dual)
        b.eq(W.T @ gam - 2.0 * (Qxx @ x) - Qxs @ s - q)
        b.nonneg(r[i])
        b.ge(r[i] + tau, gam.dot(W @ x - H @ s - h))
        gams.append(gam)
    b.minimize(tau + r.sum() / (alpha * N))
    rep = b.solve(tol).raise_for_status()
    handles = {"Qxx": Qxx, "Qxs": Qxs, "q": q, "tau": tau, "r": r, "gamma": gams}
    sol = _solution(rep, handles, 0.0, alpha, 0.0, "erm_first_order", {"form": "first_order"})
    sol.duals["lambda"] = float("inf")
    sol.exactness = Exactness.EXACT_CERTIFIED.value
    return sol
