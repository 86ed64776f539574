"""Convex feature maps with conic-representable conjugates.

A feature map ``Psi = (psi_1, ..., psi_d)`` induces hypotheses
``F_theta(s, x) = <theta, Psi(x)>`` with ``theta >= 0``.  Each component
exposes its value, gradient, an epigraph for forward solves and the
perspective of its convex conjugate for the safe approximation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conic import Affine, ProgramBuilder


@dataclass(frozen=True)
class AffinePlus:
    """``psi(x) = <a, x> + b``."""

    a: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(-1))
        object.__setattr__(self, "b", float(self.b))

    def value(self, x):
        return float(self.a @ x + self.b)

    def gradient(self, x):
        return self.a.copy()

    def epigraph(self, builder: ProgramBuilder, x: Affine) -> Affine:
        return x.dot(self.a) + self.b

    def conjugate_rows(self, builder: ProgramBuilder, z: Affine, theta: Affine) -> Affine:
        # conjugate is the indicator of {a} with value -b
        builder.eq(z - self.a.reshape(-1, 1) @ theta)
        return -self.b * theta

    def to_dict(self):
        return {"kind": "affine", "a": self.a.tolist(), "b": self.b}


@dataclass(frozen=True)
class SquaredCoordinate:
    """``psi(x) = x[index]**2``."""

    index: int

    def value(self, x):
        return float(x[self.index] ** 2)

    def gradient(self, x):
        g = np.zeros(len(x))
        g[self.index] = 2.0 * x[self.index]
        return g

    def epigraph(self, builder, x):
        t = builder.var("feature_epi")
        builder.rsoc(t, 1.0, x[self.index])
        return t

    def conjugate_rows(self, builder, z, theta):
        # theta * (z_k/theta)^2 / 4 <= t  <=>  z_k^2 <= (4t) * theta, other entries zero
        n = z.shape[0]
        t = builder.var("conj_epi")
        others = [j for j in range(n) if j != self.index]
        if others:
            builder.eq(z[others])
        builder.rsoc(4.0 * t, theta, z[self.index])
        return t

    def to_dict(self):
        return {"kind": "sq", "index": int(self.index)}


@dataclass(frozen=True)
class ConvexQuadratic:
    """``psi(x) = <x, P x> + <r, x>`` with ``P`` symmetric PSD."""

    P: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        P = 0.5 * (P + P.T)
        if np.linalg.eigvalsh(P).min() < -1e-9:
            raise ValueError("ConvexQuadratic requires a PSD matrix")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float).reshape(-1))

    def _eig(self):
        w, U = np.linalg.eigh(self.P)
        keep = w > 1e-12 * max(1.0, w.max(initial=0.0))
        return w[keep], U[:, keep], U[:, ~keep]

    def value(self, x):
        return float(x @ self.P @ x + self.r @ x)

    def gradient(self, x):
        return 2.0 * self.P @ x + self.r

    def epigraph(self, builder, x):
        w, U, _ = self._eig()
        t = builder.var("feature_epi")
        if w.size:
            L = np.sqrt(w)[:, None] * U.T
            builder.rsoc(t - x.dot(self.r), 1.0, L @ x)
        else:
            builder.ge(t, x.dot(self.r))
        return t

    def conjugate_rows(self, builder, z, theta):
        # theta * psi*(z/theta) = (z - theta r)' P^+ (z - theta r) / (4 theta)
        w, U, N = self._eig()
        diff = z - self.r.reshape(-1, 1) @ theta
        t = builder.var("conj_epi")
        if N.shape[1]:
            builder.eq(N.T @ diff)
        if w.size:
            builder.rsoc(4.0 * t, theta, (1.0 / np.sqrt(w))[:, None] * U.T @ diff)
        else:
            builder.nonneg(t)
        return t

    def to_dict(self):
        return {"kind": "quad", "P": self.P.tolist(), "r": self.r.tolist()}


_KINDS = {"affine": lambda d: AffinePlus(d["a"], d.get("b", 0.0)),
          "sq": lambda d: SquaredCoordinate(int(d["index"])),
          "quad": lambda d: ConvexQuadratic(d["P"], d["r"])}


@dataclass
class FeatureMap:
    """A list of feature components acting on ``x in R^n``."""

    components: list
    lipschitz_ok: bool = False
    notes: list = field(default_factory=list)

    def __post_init__(self):
        for c in self.components:
            if not isinstance(c, (AffinePlus, SquaredCoordinate, ConvexQuadratic)):
                raise TypeError(f"unsupported feature component {type(c).__name__}")

    @property
    def d(self) -> int:
        return len(self.components)

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([c.value(x) for c in self.components])

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([c.gradient(x) for c in self.components])

    def to_dict(self) -> dict:
        return {"components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMap":
        comps = []
        for c in d["components"]:
            if c["kind"] not in _KINDS:
                raise ValueError(f"unsupported feature kind {c['kind']!r}")
            comps.append(_KINDS[c["kind"]](c))
        return cls(comps)

    @classmethod
    def identity(cls, n: int) -> "FeatureMap":
        return cls([AffinePlus(np.eye(n)[k]) for k in range(n)])

    @classmethod
    def signed_identity(cls, n: int) -> "FeatureMap":
        """Features ``(x, -x)``: nonnegative weights span all linear objectives."""
        eye = np.eye(n)
        return cls([AffinePlus(eye[k]) for k in range(n)] + [AffinePlus(-eye[k]) for k in range(n)])
