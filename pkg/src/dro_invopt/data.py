"""Signal-response datasets."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .agent import MEMBERSHIP_TOL, AgentProblem
from .conic import membership


@dataclass
class Dataset:
    """``N`` signal-response pairs with support-consistency flags."""

    S: np.ndarray
    X: np.ndarray
    consistent: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.S = np.atleast_2d(np.asarray(self.S, dtype=float))
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.consistent = np.asarray(self.consistent, dtype=bool).reshape(-1)
        if not (self.S.shape[0] == self.X.shape[0] == self.consistent.size):
            raise ValueError("signals, responses and flags have different lengths")

    @classmethod
    def from_arrays(cls, prob: AgentProblem, S, X, provenance=None, tol: float = MEMBERSHIP_TOL):
        S = np.atleast_2d(np.asarray(S, dtype=float))
        X = np.atleast_2d(np.asarray(X, dtype=float))
        xi = prob.support_set()
        flags = [membership(xi, np.concatenate([s, x]), tol) for s, x in zip(S, X)]
        return cls(S, X, np.array(flags, dtype=bool), dict(provenance or {}))

    @property
    def N(self) -> int:
        return self.S.shape[0]

    def __len__(self):
        return self.N

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.S[idx], self.X[idx], self.consistent[idx], dict(self.provenance))

    def pairs(self):
        return zip(self.S, self.X)

    def to_csv(self, path, header_comment: str | None = None):
        m, n = self.S.shape[1], self.X.shape[1]
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow([f"s_{k + 1}" for k in range(m)] + [f"x_{k + 1}" for k in range(n)])
            for s, x in zip(self.S, self.X):
                w.writerow([repr(float(v)) for v in np.concatenate([s, x])])

    @classmethod
    def from_csv(cls, path, prob: AgentProblem) -> "Dataset":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
        header, body = rows[0], rows[1:]
        m = sum(1 for h in header if h.startswith("s_"))
        arr = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
        return cls.from_arrays(prob, arr[:, :m], arr[:, m:])
