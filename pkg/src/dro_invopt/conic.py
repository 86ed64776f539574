"""Cones, conic sets, a small affine modeling layer and the Clarabel backend.

Every reformulation in the package is assembled as a :class:`ConicProgram`
in the standard form ``minimize c'v + c0`` subject to ``A_k v - b_k in K_k``
and handed to :func:`solve`, which returns a :class:`SolverReport`.

PSD blocks use the scaled lower-triangular vectorization: the entries of the
lower triangle are listed row by row and off-diagonal entries are multiplied
by ``sqrt(2)``, so that ``svec(X) . svec(Y) = trace(X Y)``.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import clarabel
import numpy as np
import scipy.sparse as sp

SQRT2 = np.sqrt(2.0)
LP_TOL = 1e-8
SDP_TOL = 1e-9
# near-solutions are accepted when the recomputed residuals are this close
ALMOST_SOLVED_FACTOR = 100.0
TOL_ENV = "INVOPT_SOLVER_TOL"


class ConeKind(str, enum.Enum):
    NONNEG = "nonneg"
    SOC = "soc"
    PSD = "psd"
    ZERO = "zero"
    FREE = "free"


@dataclass(frozen=True)
class Cone:
    """A closed convex cone.

    ``dim`` is the vector length, except for PSD cones where it is the side
    length of the matrix; the cone then occupies ``dim*(dim+1)/2`` slots.
    Second-order cones are ``{(t, v) : ||v||_2 <= t}`` with ``t`` first.
    """

    kind: ConeKind
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "kind", ConeKind(self.kind))
        if int(self.dim) < 1:
            raise ValueError(f"cone dimension must be positive, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))

    @property
    def slots(self) -> int:
        if self.kind is ConeKind.PSD:
            return self.dim * (self.dim + 1) // 2
        return self.dim

    def dual(self) -> "Cone":
        if self.kind is ConeKind.ZERO:
            return Cone(ConeKind.FREE, self.dim)
        if self.kind is ConeKind.FREE:
            return Cone(ConeKind.ZERO, self.dim)
        return self

    def interior_direction(self) -> np.ndarray:
        """A fixed point in the interior (zero for ZERO/FREE cones)."""
        if self.kind is ConeKind.NONNEG:
            return np.ones(self.dim)
        if self.kind is ConeKind.SOC:
            e = np.zeros(self.dim)
            e[0] = 1.0
            return e
        if self.kind is ConeKind.PSD:
            return svec(np.eye(self.dim))
        return np.zeros(self.dim)

    def contains(self, v: np.ndarray, tol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=float)
        if self.kind is ConeKind.NONNEG:
            return bool(np.all(v >= -tol))
        if self.kind is ConeKind.ZERO:
            return bool(np.all(np.abs(v) <= tol))
        if self.kind is ConeKind.FREE:
            return True
        if self.kind is ConeKind.SOC:
            return bool(v[0] - np.linalg.norm(v[1:]) >= -tol)
        return bool(np.linalg.eigvalsh(smat(v, self.dim)).min() >= -tol)


def nonneg(k: int) -> Cone:
    return Cone(ConeKind.NONNEG, k)


def zero(k: int) -> Cone:
    return Cone(ConeKind.ZERO, k)


def svec(M: np.ndarray) -> np.ndarray:
    """Scaled lower-triangular vectorization of a symmetric matrix."""
    M = np.asarray(M, dtype=float)
    i, j = np.tril_indices(M.shape[0])
    scale = np.where(i == j, 1.0, SQRT2)
    return M[i, j] * scale


def smat(v: np.ndarray, k: int) -> np.ndarray:
    """Inverse of :func:`svec`."""
    i, j = np.tril_indices(k)
    scale = np.where(i == j, 1.0, 1.0 / SQRT2)
    M = np.zeros((k, k))
    M[i, j] = np.asarray(v, dtype=float) * scale
    M[j, i] = M[i, j]
    return M


def as_norm(norm) -> float:
    """Normalize a norm tag (1, 2, 'inf', np.inf) to a float."""
    if isinstance(norm, str):
        norm = norm.strip().lower()
        if norm in ("inf", "infinity", "max"):
            return np.inf
        norm = float(norm)
    norm = float(norm)
    if norm not in (1.0, 2.0, np.inf):
        raise ValueError(f"unsupported norm {norm!r}; expected 1, 2 or inf")
    return norm


def dual_norm(norm) -> float:
    """Dual norm tag: inf <-> 1, 2 <-> 2."""
    norm = as_norm(norm)
    return {1.0: np.inf, 2.0: 2.0, np.inf: 1.0}[norm]


def norm_name(norm) -> str:
    norm = as_norm(norm)
    return "inf" if np.isinf(norm) else str(int(norm))


# --------------------------------------------------------------------------
# conic sets


@dataclass(frozen=True)
class ConicSet:
    """The set ``{v : A v - b in K_1 x ... x K_p}``."""

    A: np.ndarray
    b: np.ndarray
    cones: tuple[Cone, ...]

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        cones = tuple(self.cones)
        if A.shape[0] != b.shape[0]:
            raise ValueError("A and b have different row counts")
        if sum(c.slots for c in cones) != A.shape[0]:
            raise ValueError("cone slots do not partition the rows of A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "cones", cones)

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def slices(self) -> list[tuple[Cone, slice]]:
        out, start = [], 0
        for c in self.cones:
            out.append((c, slice(start, start + c.slots)))
            start += c.slots
        return out

    def dual_cones(self) -> tuple[Cone, ...]:
        return tuple(c.dual() for c in self.cones)

    def to_dict(self) -> dict:
        blocks = []
        for cone, sl in self.slices():
            blocks.append({"cone": cone.kind.value, "dim": cone.dim,
                           "A": self.A[sl].tolist(), "b": self.b[sl].tolist()})
        return {"vars": self.n_vars, "blocks": blocks}

    @classmethod
    def from_dict(cls, d: dict) -> "ConicSet":
        n = int(d["vars"])
        As, bs, cones = [], [], []
        for blk in d["blocks"]:
            cone = Cone(blk["cone"], blk["dim"])
            As.append(np.asarray(blk["A"], dtype=float).reshape(cone.slots, n))
            bs.append(np.asarray(blk["b"], dtype=float).reshape(-1))
            cones.append(cone)
        if not cones:
            return cls(np.zeros((0, n)), np.zeros(0), ())
        return cls(np.vstack(As), np.concatenate(bs), tuple(cones))


def box_set(lo, hi) -> ConicSet:
    """The box ``[lo, hi]`` as ``v - lo >= 0, hi - v >= 0``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = lo.size
    A = np.vstack([np.eye(n), -np.eye(n)])
    return ConicSet(A, np.concatenate([lo, -hi]), (nonneg(2 * n),))


def membership(cset: ConicSet, v, tol: float = 1e-6) -> bool:
    """True iff ``A v - b`` lies in each cone up to ``tol``."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != cset.n_vars:
        raise ValueError(f"vector has length {v.size}, set has {cset.n_vars} variables")
    r = cset.A @ v - cset.b
    return all(cone.contains(r[sl], tol) for cone, sl in cset.slices())


# --------------------------------------------------------------------------
# affine expressions


class Affine:
    """Affine function of the decision vector with a matrix shape.

    ``terms`` maps a variable offset to a dense coefficient block of shape
    ``(rows*cols, var_size)``; entries are flattened row-major.
    """

    __slots__ = ("shape", "terms", "const")
    __array_priority__ = 100

    def __init__(self, shape, terms=None, const=None):
        self.shape = (int(shape[0]), int(shape[1]))
        self.terms = terms if terms is not None else {}
        size = self.shape[0] * self.shape[1]
        self.const = np.zeros(size) if const is None else np.asarray(const, dtype=float).reshape(size)

    # construction helpers
    @staticmethod
    def lift(x) -> "Affine":
        if isinstance(x, Affine):
            return x
        a = np.asarray(x, dtype=float)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        elif a.ndim == 1:
            a = a.reshape(-1, 1)
        return Affine(a.shape, {}, a.reshape(-1))

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1]

    def _broadcast(self, other) -> "Affine":
        other = Affine.lift(other)
        if other.shape == self.shape:
            return other
        if other.shape == (1, 1) and not other.terms:
            return Affine(self.shape, {}, np.full(self.size, other.const[0]))
        raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")

    def __add__(self, other):
        other = self._broadcast(other)
        terms = dict(self.terms)
        for k, c in other.terms.items():
            terms[k] = terms[k] + c if k in terms else c
        return Affine(self.shape, terms, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return Affine(self.shape, {k: -c for k, c in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-self._broadcast(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, a):
        a = float(a)
        return Affine(self.shape, {k: a * c for k, c in self.terms.items()}, a * self.const)

    __rmul__ = __mul__

    def __truediv__(self, a):
        return self * (1.0 / float(a))

    def __rmatmul__(self, P):
        """Left multiplication by a constant matrix."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape[1] != self.shape[0]:
            raise ValueError(f"cannot multiply {P.shape} by {self.shape}")
        r, c = self.shape
        if c == 1:
            terms = {k: P @ v for k, v in self.terms.items()}
            return Affine((P.shape[0], 1), terms, P @ self.const)
        M = np.kron(P, np.eye(c))
        return Affine((P.shape[0], c), {k: M @ v for k, v in self.terms.items()}, M @ self.const)

    def __matmul__(self, R):
        """Right multiplication by a constant matrix (or vector)."""
        R = np.asarray(R, dtype=float)
        if R.ndim == 1:
            R = R.reshape(-1, 1)
        r, c = self.shape
        if R.shape[0] != c:
            raise ValueError(f"cannot multiply {self.shape} by {R.shape}")
        M = np.kron(np.eye(r), R.T)
        return Affine((r, R.shape[1]), {k: M @ v for k, v in self.terms.items()}, M @ self.const)

    @property
    def T(self) -> "Affine":
        r, c = self.shape
        perm = np.arange(r * c).reshape(r, c).T.reshape(-1)
        return Affine((c, r), {k: v[perm] for k, v in self.terms.items()}, self.const[perm])

    def __getitem__(self, idx):
        """Select entries of a column vector (returns a column vector)."""
        if self.shape[1] != 1:
            raise ValueError("indexing is only supported for column vectors")
        rows = np.arange(self.shape[0])[idx]
        rows = np.atleast_1d(rows)
        return Affine((rows.size, 1), {k: v[rows] for k, v in self.terms.items()}, self.const[rows])

    def flat(self) -> "Affine":
        return Affine((self.size, 1), self.terms, self.const)

    def reshape(self, rows: int, cols: int) -> "Affine":
        if rows * cols != self.size:
            raise ValueError(f"cannot reshape {self.shape} to {(rows, cols)}")
        return Affine((rows, cols), self.terms, self.const)

    def sum(self) -> "Affine":
        return np.ones((1, self.size)) @ self.flat()

    def dot(self, w) -> "Affine":
        """Scalar ``<w, self>`` for a constant ``w`` of the same size."""
        w = np.asarray(w, dtype=float).reshape(1, -1)
        return w @ self.flat()

    def value(self, x: np.ndarray) -> np.ndarray:
        out = self.const.copy()
        for k, c in self.terms.items():
            out += c @ x[k:k + c.shape[1]]
        return out.reshape(self.shape)

    def scalar_value(self, x: np.ndarray) -> float:
        return float(self.value(x).reshape(-1)[0])


def scaled_identity(t, k: int) -> Affine:
    """``t * I_k`` for a scalar expression ``t``."""
    return (np.eye(k).reshape(-1, 1) @ Affine.lift(t)).reshape(k, k)


def vstack(items: Sequence) -> Affine:
    items = [Affine.lift(a) for a in items]
    cols = items[0].shape[1]
    if any(a.shape[1] != cols for a in items):
        raise ValueError("vstack requires equal column counts")
    return _concat(items, (sum(a.shape[0] for a in items), cols))


def _concat(items, shape) -> Affine:
    keys = {k: c.shape[1] for a in items for k, c in a.terms.items()}
    total = shape[0] * shape[1]
    terms = {k: np.zeros((total, w)) for k, w in keys.items()}
    const = np.zeros(total)
    pos = 0
    for a in items:
        sl = slice(pos, pos + a.size)
        for k, c in a.terms.items():
            terms[k][sl] = c
        const[sl] = a.const
        pos += a.size
    return Affine(shape, terms, const)


def block(grid: Sequence[Sequence]) -> Affine:
    """Assemble a block matrix from Affine/constant blocks (``None`` = zero)."""
    heights = []
    for row in grid:
        h = [Affine.lift(b).shape[0] for b in row if b is not None]
        heights.append(h[0])
    widths = []
    for j in range(len(grid[0])):
        w = [Affine.lift(row[j]).shape[1] for row in grid if row[j] is not None]
        widths.append(w[0])
    R, C = sum(heights), sum(widths)
    roff = np.concatenate([[0], np.cumsum(heights)])
    coff = np.concatenate([[0], np.cumsum(widths)])
    terms: dict[int, np.ndarray] = {}
    const = np.zeros(R * C)
    for bi, row in enumerate(grid):
        for bj, blk in enumerate(row):
            if blk is None:
                continue
            blk = Affine.lift(blk)
            if blk.shape != (heights[bi], widths[bj]):
                raise ValueError(f"block ({bi},{bj}) has shape {blk.shape}")
            p, q = np.meshgrid(np.arange(blk.shape[0]), np.arange(blk.shape[1]), indexing="ij")
            idx = ((roff[bi] + p) * C + coff[bj] + q).reshape(-1)
            const[idx] += blk.const
            for k, c in blk.terms.items():
                if k not in terms:
                    terms[k] = np.zeros((R * C, c.shape[1]))
                terms[k][idx] += c
    return Affine((R, C), terms, const)


# --------------------------------------------------------------------------
# programs


@dataclass(frozen=True)
class ConstraintBlock:
    """Rows ``A v - b in cone``; ``A`` is stored as a CSR matrix."""

    A: sp.csr_matrix
    b: np.ndarray
    cone: Cone


@dataclass(frozen=True)
class ConicProgram:
    c: np.ndarray
    constant: float
    blocks: tuple[ConstraintBlock, ...]
    names: tuple[tuple[str, int, int], ...]
    sense: str = "min"

    @property
    def n_vars(self) -> int:
        return self.c.size

    def has_psd(self) -> bool:
        return any(b.cone.kind is ConeKind.PSD for b in self.blocks)

    def to_json(self) -> str:
        blocks = [{"cone": b.cone.kind.value, "dim": b.cone.dim,
                   "A": b.A.toarray().tolist(), "b": b.b.tolist()} for b in self.blocks]
        doc = {"vars": self.n_vars,
               "names": [list(t) for t in self.names],
               "objective": {"sense": self.sense, "c": self.c.tolist(), "constant": self.constant},
               "blocks": blocks}
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "ConicProgram":
        doc = json.loads(text)
        n = int(doc["vars"])
        blocks = []
        for blk in doc["blocks"]:
            cone = Cone(blk["cone"], blk["dim"])
            A = np.asarray(blk["A"], dtype=float).reshape(cone.slots, n)
            blocks.append(ConstraintBlock(sp.csr_matrix(A), np.asarray(blk["b"], dtype=float), cone))
        obj = doc.get("objective", {})
        c = np.asarray(obj.get("c", [0.0] * n), dtype=float)
        names = tuple((str(a), int(b), int(s)) for a, b, s in doc.get("names", []))
        return cls(c, float(obj.get("constant", 0.0)), tuple(blocks), names, obj.get("sense", "min"))


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


class SolverError(RuntimeError):
    """Raised by :meth:`SolverReport.raise_for_status`."""

    def __init__(self, report: "SolverReport", message: str = ""):
        super().__init__(message or f"solver returned status {report.status.value}")
        self.report = report


class InfeasibleError(SolverError):
    pass


class UnboundedError(SolverError):
    pass


class NumericalFailureError(SolverError):
    pass


@dataclass
class SolverReport:
    status: Status
    primal: np.ndarray
    dual: list[np.ndarray]
    objective_value: float
    residuals: tuple[float, float, float]
    dual_objective: float = float("nan")
    iterations: int = 0
    backend_status: str = ""

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    def raise_for_status(self) -> "SolverReport":
        if self.status is Status.INFEASIBLE:
            raise InfeasibleError(self)
        if self.status is Status.UNBOUNDED:
            raise UnboundedError(self)
        if self.status is Status.NUMERICAL_FAILURE:
            raise NumericalFailureError(self, f"numerical failure ({self.backend_status})")
        return self

    def value(self, expr: Affine) -> np.ndarray:
        return expr.value(self.primal)

    def scalar(self, expr: Affine) -> float:
        return expr.scalar_value(self.primal)


def default_tol(prog: ConicProgram | None = None) -> float:
    env = os.environ.get(TOL_ENV)
    if env:
        return float(env)
    if prog is not None and prog.has_psd():
        return SDP_TOL
    return LP_TOL


def _clarabel_cone(cone: Cone):
    if cone.kind is ConeKind.NONNEG:
        return clarabel.NonnegativeConeT(cone.dim)
    if cone.kind is ConeKind.ZERO:
        return clarabel.ZeroConeT(cone.dim)
    if cone.kind is ConeKind.SOC:
        return clarabel.SecondOrderConeT(cone.dim)
    if cone.kind is ConeKind.PSD:
        return clarabel.PSDTriangleConeT(cone.dim)
    raise ValueError(cone.kind)


_STATUS_MAP = {
    "Solved": Status.OPTIMAL,
    "PrimalInfeasible": Status.INFEASIBLE,
    "AlmostPrimalInfeasible": Status.INFEASIBLE,
    "DualInfeasible": Status.UNBOUNDED,
    "AlmostDualInfeasible": Status.UNBOUNDED,
}


def solve(prog: ConicProgram, tol: float | None = None, max_iter: int = 200) -> SolverReport:
    """Solve a conic program with the Clarabel interior-point method.

    Infeasibility and unboundedness are reported through ``status``; callers
    that need an optimum use :meth:`SolverReport.raise_for_status`.
    """
    tol = default_tol(prog) if tol is None else float(tol)
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    n = prog.n_vars
    active = [b for b in prog.blocks if b.cone.kind is not ConeKind.FREE]
    if active:
        A = sp.vstack([b.A for b in active]).tocsc()
        bvec = np.concatenate([b.b for b in active])
    else:
        A = sp.csc_matrix((0, n))
        bvec = np.zeros(0)
    sign = 1.0 if prog.sense == "min" else -1.0
    q = sign * prog.c
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.tol_infeas_abs = tol
    settings.tol_infeas_rel = tol
    settings.presolve_enable = False
    solver = clarabel.DefaultSolver(sp.csc_matrix((n, n)), q, (-A).tocsc(), -bvec,
                                    [_clarabel_cone(b.cone) for b in active], settings)
    sol = solver.solve()
    name = str(sol.status)
    x = np.asarray(sol.x, dtype=float)
    z = np.asarray(sol.z, dtype=float)
    s = np.asarray(sol.s, dtype=float)

    duals, pos = [], 0
    for b in prog.blocks:
        if b.cone.kind is ConeKind.FREE:
            duals.append(np.zeros(b.cone.slots))
        else:
            duals.append(z[pos:pos + b.cone.slots])
            pos += b.cone.slots

    pobj = float(q @ x)
    dobj = float(bvec @ z)
    r_prim = float(np.max(np.abs(A @ x - bvec - s), initial=0.0))
    r_prim /= max(1.0, np.max(np.abs(bvec), initial=0.0), np.max(np.abs(x), initial=0.0),
                  np.max(np.abs(s), initial=0.0))
    r_dual = float(np.max(np.abs(q - A.T @ z), initial=0.0))
    r_dual /= max(1.0, np.max(np.abs(q), initial=0.0), np.max(np.abs(z), initial=0.0))
    gap = abs(pobj - dobj) / max(1.0, min(abs(pobj), abs(dobj)))

    status = _STATUS_MAP.get(name)
    if status is None:
        ok = name == "AlmostSolved" and max(r_prim, r_dual, gap) <= max(ALMOST_SOLVED_FACTOR * tol, 1e-7)
        status = Status.OPTIMAL if ok else Status.NUMERICAL_FAILURE
    obj = sign * pobj + prog.constant
    if status is Status.INFEASIBLE:
        obj = np.inf if prog.sense == "min" else -np.inf
    elif status is Status.UNBOUNDED:
        obj = -np.inf if prog.sense == "min" else np.inf
    return SolverReport(status, x, duals, obj, (r_prim, r_dual, gap),
                        dual_objective=sign * dobj + prog.constant,
                        iterations=int(sol.iterations), backend_status=name)


class ProgramBuilder:
    """Incremental assembly of a :class:`ConicProgram` from affine rows."""

    def __init__(self):
        self._names: list[tuple[str, int, int]] = []
        self._n = 0
        self._blocks: list[tuple[Affine, Cone]] = []
        self._objective: Affine | None = None
        self._sense = "min"

    @property
    def n_vars(self) -> int:
        return self._n

    def var(self, name: str, shape=1) -> Affine:
        shape = (shape, 1) if np.isscalar(shape) else tuple(shape)
        size = int(shape[0]) * int(shape[1])
        start = self._n
        self._n += size
        self._names.append((name, start, size))
        return Affine(shape, {start: np.eye(size)})

    def sym(self, name: str, k: int) -> Affine:
        """Symmetric ``k x k`` matrix variable (lower triangle stored)."""
        m = k * (k + 1) // 2
        start = self._n
        self._n += m
        self._names.append((name, start, m))
        ii, jj = np.tril_indices(k)
        coef = np.zeros((k * k, m))
        for t, (i, j) in enumerate(zip(ii, jj)):
            coef[i * k + j, t] = 1.0
            coef[j * k + i, t] = 1.0
        return Affine((k, k), {start: coef})

    # constraints: expr in cone
    def add(self, expr, cone: Cone):
        expr = Affine.lift(expr).flat()
        if expr.size != cone.slots:
            raise ValueError(f"expression of size {expr.size} does not fit cone with {cone.slots} slots")
        if cone.kind is not ConeKind.FREE:
            self._blocks.append((expr, cone))

    def nonneg(self, expr):
        expr = Affine.lift(expr)
        self.add(expr, nonneg(expr.size))

    def eq(self, lhs, rhs=0.0):
        expr = Affine.lift(lhs) - rhs
        self.add(expr, zero(expr.size))

    def le(self, lhs, rhs):
        self.nonneg(Affine.lift(rhs) - lhs)

    def ge(self, lhs, rhs):
        self.nonneg(Affine.lift(lhs) - rhs)

    def soc(self, t, v):
        """``||v||_2 <= t``."""
        expr = vstack([Affine.lift(t).flat(), Affine.lift(v).flat()])
        self.add(expr, Cone(ConeKind.SOC, expr.size))

    def rsoc(self, u, w, v):
        """``||v||_2^2 <= u * w`` with ``u, w >= 0``."""
        u, w = Affine.lift(u), Affine.lift(w)
        self.soc(0.5 * (u + w), vstack([Affine.lift(v).flat(), 0.5 * (u - w)]))

    def psd(self, M):
        """Symmetric matrix expression ``M`` is PSD (lower triangle is used)."""
        M = Affine.lift(M)
        k = M.shape[0]
        if M.shape != (k, k):
            raise ValueError("psd expects a square expression")
        ii, jj = np.tril_indices(k)
        rows = ii * k + jj
        scale = np.where(ii == jj, 1.0, SQRT2)
        terms = {key: c[rows] * scale[:, None] for key, c in M.terms.items()}
        expr = Affine((rows.size, 1), terms, M.const[rows] * scale)
        self.add(expr, Cone(ConeKind.PSD, k))

    def in_cones(self, expr, cones: Iterable[Cone]):
        """Rows of ``expr`` lie in consecutive cones (PSD given in svec form)."""
        expr = Affine.lift(expr).flat()
        pos = 0
        for cone in cones:
            self.add(expr[pos:pos + cone.slots], cone)
            pos += cone.slots
        if pos != expr.size:
            raise ValueError("cones do not cover the expression")

    def norm_le(self, v, t, norm):
        """``||v||_norm <= t``, as orthant rows (1, inf) or one second-order cone."""
        norm = as_norm(norm)
        v = Affine.lift(v).flat()
        t = Affine.lift(t)
        if norm == 2.0:
            self.soc(t, v)
        elif np.isinf(norm):
            ones = np.ones((v.size, 1))
            self.nonneg((ones @ t) - v)
            self.nonneg((ones @ t) + v)
        else:
            u = self.var("norm_aux", v.size)
            self.nonneg(u - v)
            self.nonneg(u + v)
            self.nonneg(t - u.sum())

    def minimize(self, expr):
        self._objective = Affine.lift(expr)
        self._sense = "min"

    def maximize(self, expr):
        self._objective = Affine.lift(expr)
        self._sense = "max"

    def build(self) -> ConicProgram:
        n = self._n
        c = np.zeros(n)
        const = 0.0
        if self._objective is not None:
            obj = self._objective
            if obj.size != 1:
                raise ValueError("objective must be scalar")
            for k, coef in obj.terms.items():
                c[k:k + coef.shape[1]] += coef[0]
            const = float(obj.const[0])
        blocks = []
        for expr, cone in self._blocks:
            rows, cols, vals = [], [], []
            for k, coef in expr.terms.items():
                r, cc = np.nonzero(coef)
                rows.append(r)
                cols.append(cc + k)
                vals.append(coef[r, cc])
            if rows:
                A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                  shape=(expr.size, n))
            else:
                A = sp.csr_matrix((expr.size, n))
            blocks.append(ConstraintBlock(A, -expr.const.copy(), cone))
        return ConicProgram(c, const, tuple(blocks), tuple(self._names), self._sense)

    def solve(self, tol: float | None = None) -> SolverReport:
        return solve(self.build(), tol)
