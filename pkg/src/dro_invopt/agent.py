"""The agent's parametric decision problem and its forward solves.

The agent observes a signal ``s`` in ``S = {s : C s - d in K_S}`` and picks
``x`` in ``X(s) = {x : W x - H s - h in K_X}`` minimizing ``F(s, x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conic import (Affine, ConeKind, ConicSet, InfeasibleError, ProgramBuilder, Status,
                    UnboundedError, vstack)
from .features import FeatureMap

SLATER_TOL = 1e-7
MEMBERSHIP_TOL = 1e-6


# --------------------------------------------------------------------------
# hypotheses


@dataclass(frozen=True)
class Linear:
    """``F(s, x) = <theta, x>``."""

    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float).reshape(-1))

    def value(self, s, x) -> float:
        return float(self.theta @ np.asarray(x, dtype=float))

    def gradient(self, s, x) -> np.ndarray:
        return self.theta.copy()

    def objective(self, builder: ProgramBuilder, s, x: Affine) -> Affine:
        return x.dot(self.theta)

    def to_dict(self):
        return {"kind": "linear", "theta": self.theta.tolist()}


@dataclass(frozen=True)
class Quadratic:
    """``F(s, x) = <x, Qxx x> + <x, Qxs s> + <q, x>``."""

    Qxx: np.ndarray
    Qxs: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Qxx, dtype=float))
        object.__setattr__(self, "Qxx", 0.5 * (Q + Q.T))
        object.__setattr__(self, "Qxs", np.atleast_2d(np.asarray(self.Qxs, dtype=float)))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(-1))

    def value(self, s, x) -> float:
        x = np.asarray(x, dtype=float)
        s = np.asarray(s, dtype=float)
        return float(x @ self.Qxx @ x + x @ self.Qxs @ s + self.q @ x)

    def gradient(self, s, x) -> np.ndarray:
        return 2.0 * self.Qxx @ np.asarray(x, dtype=float) + self.Qxs @ np.asarray(s, dtype=float) + self.q

    def objective(self, builder, s, x):
        lin = self.Qxs @ np.asarray(s, dtype=float) + self.q
        w, U = np.linalg.eigh(self.Qxx)
        if w.min() < -1e-9:
            raise ValueError("quadratic hypothesis is not convex (Qxx has a negative eigenvalue)")
        keep = w > 1e-12
        expr = x.dot(lin)
        if keep.any():
            t = builder.var("quad_epi")
            builder.rsoc(t, 1.0, (np.sqrt(w[keep])[:, None] * U[:, keep].T) @ x)
            expr = expr + t
        return expr

    def to_dict(self):
        return {"kind": "quadratic", "Qxx": self.Qxx.tolist(), "Qxs": self.Qxs.tolist(), "q": self.q.tolist()}


@dataclass(frozen=True)
class ConvexFeatures:
    """``F(s, x) = <theta, Psi(x)>`` with ``theta >= 0``."""

    theta: np.ndarray
    features: FeatureMap

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if np.any(theta < -1e-9):
            raise ValueError("feature weights must be nonnegative")
        object.__setattr__(self, "theta", np.maximum(theta, 0.0))

    def value(self, s, x) -> float:
        return float(self.theta @ self.features.value(x))

    def gradient(self, s, x) -> np.ndarray:
        return self.features.jacobian(x).T @ self.theta

    def objective(self, builder, s, x):
        expr = Affine.lift(0.0)
        for w, comp in zip(self.theta, self.features.components):
            if w != 0.0:
                expr = expr + w * comp.epigraph(builder, x)
        return expr

    def to_dict(self):
        return {"kind": "convex_features", "theta": self.theta.tolist(), "features": self.features.to_dict()}


@dataclass(frozen=True)
class SqrtUtility:
    """``F(s, x) = <s, x> - sum_k sqrt(a_k x_k - b_k)``, infinite off its domain."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(-1))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(-1))

    def value(self, s, x) -> float:
        arg = self.a * np.asarray(x, dtype=float) - self.b
        if np.any(arg < 0):
            return np.inf
        return float(np.asarray(s) @ x - np.sqrt(arg).sum())

    def gradient(self, s, x) -> np.ndarray:
        arg = np.maximum(self.a * np.asarray(x, dtype=float) - self.b, 1e-300)
        return np.asarray(s, dtype=float) - self.a / (2.0 * np.sqrt(arg))

    def objective(self, builder, s, x):
        n = self.a.size
        u = builder.var("sqrt_epi", n)
        arg = self.a.reshape(-1, 1) * np.eye(n) @ x - self.b
        builder.nonneg(arg)
        for k in range(n):
            builder.rsoc(arg[k], 1.0, u[k])
        return x.dot(np.asarray(s, dtype=float)) - u.sum()

    def to_dict(self):
        return {"kind": "sqrt_utility", "a": self.a.tolist(), "b": self.b.tolist()}


Hypothesis = Linear | Quadratic | ConvexFeatures | SqrtUtility


def hypothesis_from_dict(d: dict):
    kind = d["kind"]
    if kind == "linear":
        return Linear(d["theta"])
    if kind == "quadratic":
        return Quadratic(d["Qxx"], d["Qxs"], d["q"])
    if kind == "convex_features":
        return ConvexFeatures(d["theta"], FeatureMap.from_dict(d["features"]))
    if kind == "sqrt_utility":
        return SqrtUtility(d["a"], d["b"])
    raise ValueError(f"unknown hypothesis kind {kind!r}")


# --------------------------------------------------------------------------
# the agent problem


@dataclass(frozen=True)
class AgentProblem:
    """Signal set ``S`` and feasible-set map ``X(s)``.

    Construction verifies that the graph set ``Xi = {(s, x) : s in S,
    x in X(s)}`` has a Slater point (equality rows excepted).
    """

    signal_set: ConicSet
    W: np.ndarray
    H: np.ndarray
    h: np.ndarray
    x_cones: tuple
    check_slater: bool = field(default=True, compare=False)

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        H = np.asarray(self.H, dtype=float).reshape(W.shape[0], self.signal_set.n_vars)
        h = np.asarray(self.h, dtype=float).reshape(-1)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "x_cones", tuple(self.x_cones))
        if sum(c.slots for c in self.x_cones) != W.shape[0]:
            raise ValueError("cone slots do not partition the rows of W")
        if self.check_slater:
            slack = self.slater_slack()
            if not slack > SLATER_TOL:
                raise ValueError(f"support set has no Slater point (max slack {slack:.3g})")

    @property
    def m(self) -> int:
        return self.signal_set.n_vars

    @property
    def n(self) -> int:
        return self.W.shape[1]

    @property
    def C(self) -> np.ndarray:
        return self.signal_set.A

    @property
    def d(self) -> np.ndarray:
        return self.signal_set.b

    @property
    def s_cones(self) -> tuple:
        return self.signal_set.cones

    def feasible_set(self, s) -> ConicSet:
        return ConicSet(self.W, self.H @ np.asarray(s, dtype=float) + self.h, self.x_cones)

    def support_set(self) -> ConicSet:
        """``Xi`` as a conic set over ``(s, x)``."""
        n = self.n
        A = np.block([[self.C, np.zeros((self.C.shape[0], n))], [-self.H, self.W]])
        return ConicSet(A, np.concatenate([self.d, self.h]), self.s_cones + self.x_cones)

    def is_consistent(self, s, x, tol: float = MEMBERSHIP_TOL) -> bool:
        from .conic import membership
        return membership(self.support_set(), np.concatenate([s, x]), tol)

    def add_signal_rows(self, builder: ProgramBuilder, s: Affine):
        builder.in_cones(self.C @ s - self.d, self.s_cones)

    def add_feasible_rows(self, builder: ProgramBuilder, x: Affine, s):
        """Rows ``x in X(s)`` for a constant or affine ``s``."""
        rhs = self.H @ s if isinstance(s, Affine) else Affine.lift(self.H @ np.asarray(s, dtype=float))
        builder.in_cones(self.W @ x - rhs - self.h, self.x_cones)

    def slater_slack(self) -> float:
        """Largest uniform slack (capped at 1) of the non-equality rows of ``Xi``."""
        b = ProgramBuilder()
        s = b.var("s", self.m)
        x = b.var("x", self.n)
        t = b.var("t")
        xi = self.support_set()
        expr = xi.A @ vstack([s, x]) - xi.b
        pos = 0
        for cone in xi.cones:
            e = cone.interior_direction().reshape(-1, 1)
            b.add(expr[pos:pos + cone.slots] - e @ t, cone)
            pos += cone.slots
        b.le(t, 1.0)
        b.maximize(t)
        rep = b.solve()
        if rep.status is Status.UNBOUNDED:
            return 1.0
        if not rep.ok:
            return -np.inf
        return rep.scalar(t)

    def box_bounds(self):
        """Return ``(lo, hi)`` when ``X(s)`` is a signal-independent box, else None."""
        n = self.n
        if self.W.shape[0] != 2 * n or np.any(self.H != 0):
            return None
        if any(c.kind.value != "nonneg" for c in self.x_cones):
            return None
        if not (np.allclose(self.W[:n], np.eye(n)) and np.allclose(self.W[n:], -np.eye(n))):
            return None
        return self.h[:n].copy(), -self.h[n:].copy()

    def to_dict(self) -> dict:
        xs = ConicSet(self.W, self.h, self.x_cones).to_dict()
        return {"m": self.m, "n": self.n, "signal_set": self.signal_set.to_dict(),
                "feasible_map": {"W": xs, "H": self.H.tolist()}}

    @classmethod
    def from_dict(cls, d: dict, check_slater: bool = True) -> "AgentProblem":
        S = ConicSet.from_dict(d["signal_set"])
        fm = ConicSet.from_dict(d["feasible_map"]["W"])
        H = np.asarray(d["feasible_map"]["H"], dtype=float).reshape(fm.n_rows, S.n_vars)
        return cls(S, fm.A, H, fm.b, fm.cones, check_slater=check_slater)


# --------------------------------------------------------------------------
# forward solves


def _solve_or_raise(builder):
    rep = builder.solve()
    if rep.status is Status.INFEASIBLE:
        raise InfeasibleError(rep, "agent problem is infeasible for this signal")
    if rep.status is Status.UNBOUNDED:
        raise UnboundedError(rep, "agent objective is unbounded on X(s)")
    return rep.raise_for_status()


ACTIVE_TOL = 1e-6


def _polish_qp(prob: AgentProblem, hyp, s, x0: np.ndarray) -> np.ndarray:
    """Refine an interior-point QP solution by solving the active-set KKT system.

    Applies to strictly convex objectives over polyhedral ``X(s)``.  The
    refined point is kept only if it is feasible, its multipliers have the
    right signs and its objective is no worse; otherwise ``x0`` is returned.
    """
    kinds = []
    for c in prob.x_cones:
        if c.kind not in (ConeKind.NONNEG, ConeKind.ZERO):
            return x0
        kinds += [c.kind] * c.dim
    Q = np.asarray(hyp.Qxx, dtype=float)
    if np.linalg.eigvalsh(Q).min() <= 1e-9:
        return x0
    W = prob.W
    rhs = prob.H @ s + prob.h
    slack = W @ x0 - rhs
    scale = 1.0 + np.abs(rhs)
    act = [j for j, k in enumerate(kinds) if k is ConeKind.ZERO or slack[j] <= ACTIVE_TOL * scale[j]]
    n, k = prob.n, len(act)
    A = W[act]
    K = np.block([[2.0 * Q, -A.T], [A, np.zeros((k, k))]])
    r = np.concatenate([-(hyp.Qxs @ s + hyp.q), rhs[act]])
    sol, *_ = np.linalg.lstsq(K, r, rcond=None)
    if np.abs(K @ sol - r).max() > 1e-10 * (1.0 + np.abs(r).max()):
        return x0
    x1, mu = sol[:n], sol[n:]
    if np.any((W @ x1 - rhs) < -1e-12 * scale):
        return x0
    if any(mu[i] < -1e-9 for i, j in enumerate(act) if kinds[j] is ConeKind.NONNEG):
        return x0
    return x1 if hyp.value(s, x1) <= hyp.value(s, x0) + 1e-14 else x0


def forward_solve(prob: AgentProblem, hyp, s) -> tuple[np.ndarray, float]:
    """Minimize ``F_hyp(s, .)`` over ``X(s)``; returns ``(x*, value)``."""
    s = np.asarray(s, dtype=float)
    b = ProgramBuilder()
    x = b.var("x", prob.n)
    prob.add_feasible_rows(b, x, s)
    b.minimize(hyp.objective(b, s, x))
    rep = _solve_or_raise(b)
    xs = rep.value(x).reshape(-1)
    if isinstance(hyp, Quadratic):
        xs = _polish_qp(prob, hyp, s, xs)
    val = hyp.value(s, xs)
    if not np.isfinite(val):
        val = rep.objective_value
    return xs, float(val)


def delta_suboptimal_response(prob: AgentProblem, true_hyp, s, delta: float,
                              tiebreak=None, seed: int | None = None,
                              band_tol: float = 1e-8) -> np.ndarray:
    """Minimize a tiebreak objective over the ``delta``-suboptimal responses.

    Parameters
    ----------
    tiebreak : hypothesis, optional
        Objective minimized over the band.  When omitted a linear cost with
        gradient uniform on ``[-1, 1]^n`` is drawn from ``seed``.
    band_tol : float
        Relative slack added to the band so that ``delta = 0`` keeps a
        nonempty interior-point feasible region.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    s = np.asarray(s, dtype=float)
    x_opt, z_opt = forward_solve(prob, true_hyp, s)
    if tiebreak is None:
        rng = np.random.default_rng(seed)
        tiebreak = Linear(rng.uniform(-1.0, 1.0, prob.n))
    b = ProgramBuilder()
    x = b.var("x", prob.n)
    prob.add_feasible_rows(b, x, s)
    b.le(true_hyp.objective(b, s, x), z_opt + delta + band_tol * (1.0 + abs(z_opt)))
    b.minimize(tiebreak.objective(b, s, x))
    rep = b.solve()
    if not rep.ok:
        if delta == 0.0:
            return x_opt
        rep.raise_for_status()
    return rep.value(x).reshape(-1)


def distance_to_support(prob: AgentProblem, s, x, norm=2.0) -> float:
    """Distance from ``(s, x)`` to ``Xi`` in the given ground norm."""
    b = ProgramBuilder()
    sv = b.var("s", prob.m)
    xv = b.var("x", prob.n)
    t = b.var("t")
    prob.add_signal_rows(b, sv)
    prob.add_feasible_rows(b, xv, sv)
    b.norm_le(vstack([sv - np.asarray(s, dtype=float), xv - np.asarray(x, dtype=float)]), t, norm)
    b.minimize(t)
    rep = b.solve().raise_for_status()
    return max(rep.scalar(t), 0.0)


def support_box(prob: AgentProblem) -> tuple[np.ndarray, np.ndarray]:
    """Coordinate-wise bounding box of ``Xi`` (entries may be infinite)."""
    dim = prob.m + prob.n
    lo, hi = np.full(dim, -np.inf), np.full(dim, np.inf)
    for k in range(dim):
        for sign in (1.0, -1.0):
            b = ProgramBuilder()
            sv = b.var("s", prob.m)
            xv = b.var("x", prob.n)
            prob.add_signal_rows(b, sv)
            prob.add_feasible_rows(b, xv, sv)
            v = vstack([sv, xv])
            b.minimize(sign * v[k])
            rep = b.solve()
            if rep.ok:
                val = sign * rep.objective_value
                if sign > 0:
                    lo[k] = val
                else:
                    hi[k] = val
    return lo, hi
