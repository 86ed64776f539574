"""Loss functions for inverse optimization and the strong-convexity constant.

All losses are evaluated exactly as defined; none is clamped at zero, so
the suboptimality loss may be negative at responses outside ``X(s)``.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .agent import AgentProblem, Linear, Quadratic, forward_solve
from .conic import ProgramBuilder

FACE_TOL = 1e-7
STRONG_CONVEXITY_TOL = 1e-9


class LossKind(str, enum.Enum):
    IDENTIFIABILITY = "identifiability"
    PREDICTABILITY = "predictability"
    SUBOPTIMALITY = "suboptimality"
    FIRST_ORDER = "first_order"
    BOUNDED_RATIONALITY = "bounded_rationality"


@dataclass(frozen=True)
class StrongConvexityCert:
    gamma: float


def suboptimality_loss(prob: AgentProblem, hyp, s, x) -> float:
    """``F(s, x) - min_{y in X(s)} F(s, y)``."""
    _, z = forward_solve(prob, hyp, s)
    return hyp.value(s, x) - z


def first_order_loss(prob: AgentProblem, hyp, s, x) -> float:
    """``max_{y in X(s)} <grad_x F(s, x), x - y>``."""
    g = hyp.gradient(s, x)
    if not np.any(g):
        return 0.0
    _, z = forward_solve(prob, Linear(g), s)
    return float(g @ np.asarray(x, dtype=float) - z)


def _strongly_convex(hyp) -> bool:
    return isinstance(hyp, Quadratic) and np.linalg.eigvalsh(hyp.Qxx).min() > STRONG_CONVEXITY_TOL


def predictability_loss(prob: AgentProblem, hyp, s, x, optimum=None) -> float:
    """Squared distance from ``x`` to the optimal set of ``F(s, .)`` on ``X(s)``.

    For strongly convex objectives the optimal set is the forward optimizer;
    otherwise the distance is computed over the optimal face, relaxed by
    ``FACE_TOL`` in objective value.  ``optimum`` may pass a precomputed
    ``forward_solve`` result.
    """
    x = np.asarray(x, dtype=float)
    x_opt, z = forward_solve(prob, hyp, s) if optimum is None else optimum
    if _strongly_convex(hyp):
        return float(np.sum((x - x_opt) ** 2))
    b = ProgramBuilder()
    y = b.var("y", prob.n)
    t = b.var("t")
    prob.add_feasible_rows(b, y, s)
    b.le(hyp.objective(b, s, y), z + FACE_TOL)
    b.rsoc(t, 1.0, y - x)
    b.minimize(t)
    rep = b.solve()
    if not rep.ok:
        return float(np.sum((x - x_opt) ** 2))
    yv = rep.value(y).reshape(-1)
    return float(np.sum((x - yv) ** 2))


def bounded_rationality_loss(prob: AgentProblem, hyp, s, x, delta: float) -> float:
    """``max(suboptimality - delta, 0)``."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    sub = suboptimality_loss(prob, hyp, s, x)
    if delta == 0.0:
        return sub
    return max(sub - delta, 0.0)


def identifiability_loss(true_hyp, hyp, s, x) -> float:
    """``|F(s, x) - F_theta(s, x)|^2``."""
    return float((true_hyp.value(s, x) - hyp.value(s, x)) ** 2)


def gamma_certificate(hyp) -> StrongConvexityCert:
    """Uniform strong-convexity constant under the Euclidean norm."""
    if isinstance(hyp, Quadratic):
        return StrongConvexityCert(max(2.0 * float(np.linalg.eigvalsh(hyp.Qxx).min()), 0.0))
    return StrongConvexityCert(0.0)


def evaluate_loss(kind, prob: AgentProblem, hyp, s, x, delta: float = 0.0, true_hyp=None) -> float:
    kind = LossKind(kind)
    if kind is LossKind.SUBOPTIMALITY:
        return suboptimality_loss(prob, hyp, s, x)
    if kind is LossKind.FIRST_ORDER:
        return first_order_loss(prob, hyp, s, x)
    if kind is LossKind.PREDICTABILITY:
        return predictability_loss(prob, hyp, s, x)
    if kind is LossKind.BOUNDED_RATIONALITY:
        return bounded_rationality_loss(prob, hyp, s, x, delta)
    if true_hyp is None:
        raise ValueError("identifiability loss needs the true hypothesis")
    return identifiability_loss(true_hyp, hyp, s, x)


def loss_table(prob: AgentProblem, hyp, S, X, kinds, delta: float = 0.0, true_hyp=None) -> list[tuple]:
    """Rows ``(sample_index, loss_kind, value)`` for every sample and kind."""
    rows = []
    for i, (s, x) in enumerate(zip(np.atleast_2d(S), np.atleast_2d(X))):
        for kind in kinds:
            kind = LossKind(kind)
            rows.append((i, kind.value, evaluate_loss(kind, prob, hyp, s, x, delta, true_hyp)))
    return rows


def write_loss_csv(path, rows, header_comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["sample_index", "loss_kind", "value"])
        for i, kind, val in rows:
            w.writerow([i, kind, repr(float(val))])
