"""Risk functionals on loss samples, empirical risk minimization and the
finite-sample Wasserstein radius."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EXPECTATION = "expectation"
CVAR = "cvar"
VAR = "var"


@dataclass(frozen=True)
class RiskSpec:
    """``kind`` is 'expectation', 'cvar' or 'var'; ``alpha`` is the tail mass."""

    kind: str = EXPECTATION
    alpha: float = 1.0

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind == EXPECTATION:
            object.__setattr__(self, "alpha", 1.0)
        elif kind == CVAR:
            if not 0.0 < self.alpha <= 1.0:
                raise ValueError("CVaR level must lie in (0, 1]")
        elif kind == VAR:
            if not 0.0 <= self.alpha <= 1.0:
                raise ValueError("VaR level must lie in [0, 1]")
        else:
            raise ValueError(f"unknown risk kind {self.kind!r}")

    @classmethod
    def cvar(cls, alpha: float) -> "RiskSpec":
        return cls(CVAR, alpha)

    @classmethod
    def var(cls, alpha: float) -> "RiskSpec":
        return cls(VAR, alpha)

    @property
    def cvar_level(self) -> float:
        """CVaR level used by the reformulations (1 for the expectation)."""
        if self.kind == VAR:
            raise ValueError("no reformulation minimizes VaR")
        return self.alpha


def cvar(losses, alpha: float) -> float:
    """Mean of the worst ``alpha`` fraction, splitting the boundary atom."""
    ell = np.sort(np.asarray(losses, dtype=float))[::-1]
    N = ell.size
    mass = alpha * N
    full = int(math.floor(mass + 1e-12))
    full = min(full, N)
    total = ell[:full].sum()
    frac = mass - full
    if full < N and frac > 1e-12:
        total += frac * ell[full]
    return float(total / mass)


def value_at_risk(losses, alpha: float) -> float:
    """Smallest ``tau`` with ``#{l <= tau} / N >= 1 - alpha``."""
    ell = np.sort(np.asarray(losses, dtype=float))
    N = ell.size
    need = int(math.ceil((1.0 - alpha) * N - 1e-12))
    if need <= 0:
        return -np.inf
    return float(ell[need - 1])


def weighted_cvar(losses, weights, alpha: float) -> float:
    """CVaR of a discrete distribution with the given atom weights."""
    ell = np.asarray(losses, dtype=float).reshape(-1)
    w = np.asarray(weights, dtype=float).reshape(-1)
    w = w / w.sum()
    order = np.argsort(-ell, kind="stable")
    remaining, total = alpha, 0.0
    for k in order:
        take = min(w[k], remaining)
        total += take * ell[k]
        remaining -= take
        if remaining <= 1e-15:
            break
    return float(total / alpha)


def empirical_risk(losses, spec: RiskSpec) -> float:
    ell = np.asarray(losses, dtype=float).reshape(-1)
    if ell.size == 0:
        raise ValueError("empirical risk of an empty loss sample")
    if spec.kind == EXPECTATION:
        return float(ell.mean())
    if spec.kind == CVAR:
        return cvar(ell, spec.alpha)
    return value_at_risk(ell, spec.alpha)


def erm_minimize(prob, dataset, search_space, loss_kind="suboptimality",
                 spec: RiskSpec = RiskSpec(), delta: float = 0.0):
    """Empirical risk minimization as the zero-radius robust program.

    Dispatches on the search space: linear spaces use the linear program,
    quadratic spaces the semidefinite program.  The first-order loss is
    minimized through the dual representation of its inner linear program.
    """
    from .losses import LossKind
    from . import dro_linear, dro_quadratic

    kind = LossKind(loss_kind)
    alpha = spec.cvar_level
    if kind not in (LossKind.SUBOPTIMALITY, LossKind.FIRST_ORDER, LossKind.BOUNDED_RATIONALITY):
        raise ValueError(f"ERM is not available for the {kind.value} loss")
    if kind is LossKind.BOUNDED_RATIONALITY and delta <= 0:
        kind = LossKind.SUBOPTIMALITY
    d = delta if kind is LossKind.BOUNDED_RATIONALITY else 0.0
    if isinstance(search_space, dro_linear.LinearSearchSpace):
        # the first-order and suboptimality losses coincide for linear hypotheses
        return dro_linear.solve_dro_linear(prob, dataset, search_space,
                                           dro_linear.WassersteinSpec(eps=0.0), alpha, d)
    if isinstance(search_space, dro_quadratic.QuadraticSearchSpace):
        if kind is LossKind.FIRST_ORDER:
            return dro_quadratic.erm_first_order(prob, dataset, search_space, alpha)
        return dro_quadratic.solve_dro_quadratic(prob, dataset, search_space,
                                                 dro_quadratic.Wasserstein2(eps=0.0), alpha, d)
    raise TypeError(f"unsupported search space {type(search_space).__name__}")


@dataclass(frozen=True)
class RadiusBudget:
    """Inputs of the finite-sample radius formula.

    ``a`` and ``A`` describe the light-tail moment condition; they are kept
    for provenance and do not enter the formula.
    """

    m: int
    n: int
    eps0: float = 0.0
    c1: float = math.e
    c2: float = 1.0
    beta: float = 0.05
    p: float = 1.0
    a: float = 2.0
    A: float = 1.0

    def __post_init__(self):
        if self.m + self.n == 2 * self.p:
            raise ValueError("the radius formula excludes m + n == 2p")
        if self.a <= 1.0:
            raise ValueError("the moment exponent a must exceed 1")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.c1 <= 0 or self.c2 <= 0 or self.eps0 < 0:
            raise ValueError("c1, c2 must be positive and eps0 nonnegative")


def eps_n_radius(budget: RadiusBudget, N: int) -> float:
    """``eps0 + eps_N(beta)`` with the two-branch light-tail rate."""
    if N < 1:
        raise ValueError("N must be positive")
    L = math.log(budget.c1 / budget.beta)
    base = L / (budget.c2 * N)
    if N >= L / budget.c2:
        rate = base ** min(budget.p / (budget.m + budget.n), 0.5)
    else:
        rate = base
    return budget.eps0 + rate
