"""Safe conic approximation for hypotheses ``<theta, Psi(x)>`` with convex features.

The worst case over the 1-Wasserstein ball is relaxed to a worst case over a
ball in signal-feature space.  The relaxation is an upper bound when the map
``(s, x) -> (s, Psi(x))`` is 1-Lipschitz on the support set.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .agent import AgentProblem, ConvexFeatures, support_box
from .conic import Affine, ConicSet, ProgramBuilder, Status, as_norm, dual_norm, membership, vstack
from .data import Dataset
from .dro_linear import DroSolution, EmptyBallError, WassersteinSpec, _check_alpha
from .features import AffinePlus, ConvexQuadratic, FeatureMap, SquaredCoordinate

__all__ = ["FeatureMap", "AffinePlus", "SquaredCoordinate", "ConvexQuadratic",
           "ConvexDroSolution", "solve_dro_convex", "check_lipschitz", "conjugate_rows"]

LIPSCHITZ_SAMPLES = 10_000


@dataclass
class ConvexDroSolution(DroSolution):
    lipschitz_ok: bool = False


def conjugate_rows(component, builder: ProgramBuilder, z: Affine, theta: Affine) -> Affine:
    """Epigraph variable ``t >= theta * psi*(z / theta)``, valid at ``theta = 0``."""
    return component.conjugate_rows(builder, z, theta)


def check_lipschitz(feat: FeatureMap, lo, hi, m: int, norm=2.0, samples: int = LIPSCHITZ_SAMPLES,
                    seed: int = 0, slack: float = 1e-9) -> bool:
    """Test the 1-Lipschitz property of ``(s, x) -> (s, Psi(x))`` on random pairs in a box.

    ``lo`` and ``hi`` bound the stacked vector ``(s, x)``; unbounded boxes fail.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        return False
    hi = np.maximum(hi, lo)
    norm = as_norm(norm)
    rng = np.random.default_rng(seed)
    A = rng.uniform(lo, hi, size=(samples, lo.size))
    B = rng.uniform(lo, hi, size=(samples, lo.size))
    for a, b in zip(A, B):
        lhs = np.concatenate([a[:m] - b[:m], feat.value(a[m:]) - feat.value(b[m:])])
        rhs = a - b
        if np.linalg.norm(lhs, norm) > np.linalg.norm(rhs, norm) * (1.0 + slack) + slack:
            return False
    return True


def solve_dro_convex(prob: AgentProblem, dataset: Dataset, feat: FeatureMap, Theta,
                     wass: WassersteinSpec, alpha: float = 1.0, tol: float | None = None,
                     lipschitz_override: bool = False) -> ConvexDroSolution:
    """Minimize the lifted upper bound on the worst-case CVaR.

    Parameters
    ----------
    Theta : ConicSet or array_like
        Conic set over the weights (``theta >= 0`` is always imposed), or a
        fixed weight vector.
    lipschitz_override : bool
        Skip the sampled Lipschitz check.  Without it a failed check only
        issues a warning, since the program remains well defined.
    """
    _check_alpha(alpha)
    if wass.p != 1:
        raise ValueError("convex hypotheses use the 1-Wasserstein ball")
    lip = feat.lipschitz_ok
    if not lip and not lipschitz_override:
        lo, hi = support_box(prob)
        lip = check_lipschitz(feat, lo, hi, prob.m, wass.ground_norm)
        if not lip:
            warnings.warn("feature map failed the 1-Lipschitz check; the bound may not be safe",
                          stacklevel=2)
    b = ProgramBuilder()
    N, d = dataset.N, feat.d
    C, dv, W, H, h = prob.C, prob.d, prob.W, prob.H, prob.h
    s_dual = prob.signal_set.dual_cones()
    x_dual = tuple(c.dual() for c in prob.x_cones)
    dn = dual_norm(wass.ground_norm)
    theta = b.var("theta", d)
    b.nonneg(theta)
    if isinstance(Theta, ConicSet):
        if Theta.n_vars != d:
            raise ValueError("search space dimension does not match the feature count")
        b.in_cones(Theta.A @ theta - Theta.b, Theta.cones)
    else:
        b.eq(theta, np.asarray(Theta, dtype=float).reshape(-1))
    lam = b.var("lambda")
    b.nonneg(lam)
    tau = b.var("tau")
    r = b.var("r", N)
    S_set = prob.signal_set
    handles = {"phi1": [], "phi2": [], "gamma": [], "z": []}
    for i, (s, x) in enumerate(dataset.pairs()):
        gs = C @ s - dv
        phi1 = b.var(f"phi1[{i}]", C.shape[0])
        gam = b.var(f"gamma[{i}]", W.shape[0])
        b.in_cones(phi1, s_dual)
        b.in_cones(gam, x_dual)
        zs, conj = [], Affine.lift(0.0)
        for j, comp in enumerate(feat.components):
            z = b.var(f"z[{i},{j}]", prob.n)
            conj = conj + conjugate_rows(comp, b, z, theta[j])
            zs.append(z)
        zsum = zs[0]
        for z in zs[1:]:
            zsum = zsum + z
        b.eq(zsum - W.T @ gam)
        lhs = conj + theta.dot(feat.value(x)) + phi1.dot(gs) - gam.dot(H @ s + h)
        b.le(lhs, r[i] + tau)
        b.norm_le(vstack([H.T @ gam - C.T @ phi1, theta]), lam, dn)
        handles["phi1"].append(phi1)
        handles["gamma"].append(gam)
        handles["z"].append(zs)
        if membership(S_set, s, 1e-6):
            b.nonneg(r[i])
            handles["phi2"].append(None)
        else:
            phi2 = b.var(f"phi2[{i}]", C.shape[0])
            b.in_cones(phi2, s_dual)
            b.le(phi2.dot(gs), r[i])
            b.norm_le(vstack([C.T @ phi2, np.zeros(d)]), lam, dn)
            handles["phi2"].append(phi2)
    b.minimize(tau + (wass.eps * lam + r.sum() / N) / alpha)
    rep = b.solve(tol)
    if rep.status is Status.UNBOUNDED:
        raise EmptyBallError("the lifted program is unbounded, so the ball is empty")
    rep.raise_for_status()
    th = np.maximum(rep.value(theta).reshape(-1), 0.0)
    duals = {"lambda": rep.scalar(lam), "tau": rep.scalar(tau), "r": rep.value(r).reshape(-1),
             "phi1": np.vstack([rep.value(v).reshape(-1) for v in handles["phi1"]]),
             "gamma": np.vstack([rep.value(v).reshape(-1) for v in handles["gamma"]]),
             "z": np.array([[rep.value(z).reshape(-1) for z in zs] for zs in handles["z"]])}
    if any(v is not None for v in handles["phi2"]):
        width = C.shape[0]
        duals["phi2"] = np.vstack([np.full(width, np.nan) if v is None else rep.value(v).reshape(-1)
                                   for v in handles["phi2"]])
    info = {"residuals": [float(v) for v in rep.residuals]}
    return ConvexDroSolution(ConvexFeatures(th, feat), float(rep.objective_value), duals,
                             rep.status.value, None, wass.eps, alpha, 0.0, "convex", info,
                             lipschitz_ok=bool(lip))
