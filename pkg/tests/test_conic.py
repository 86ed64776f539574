import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dro_invopt.conic import (
    Cone, ConeKind, ConicProgram, ConicSet, ProgramBuilder, Status, InfeasibleError,
    box_set, dual_norm, membership, nonneg, scaled_identity, smat, solve, svec, zero,
)


def _vertex_min(G, g, c):
    """Minimum of ``c.x`` over ``{G x >= g}`` by enumerating every basic feasible point."""
    n = G.shape[1]
    best = np.inf
    for rows in itertools.combinations(range(G.shape[0]), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, g[list(rows)])
        if np.all(G @ x >= g - 1e-9):
            best = min(best, float(c @ x))
    return best


def test_box_minimum():
    b = ProgramBuilder()
    x = b.var("x")
    b.ge(x, -1.0)
    b.le(x, 1.0)
    b.minimize(x)
    rep = b.solve()
    assert rep.status is Status.OPTIMAL
    assert rep.objective_value == pytest.approx(-1.0, abs=1e-7)


def test_contradictory_rows_infeasible():
    b = ProgramBuilder()
    x = b.var("x")
    b.ge(x, 1.0)
    b.le(x, 0.0)
    b.minimize(0.0 * x)
    rep = b.solve()
    assert rep.status is Status.INFEASIBLE
    with pytest.raises(InfeasibleError):
        rep.raise_for_status()


def test_unbounded_reported():
    b = ProgramBuilder()
    x = b.var("x")
    b.le(x, 0.0)
    b.minimize(x)
    assert b.solve().status is Status.UNBOUNDED


@pytest.mark.parametrize("seed", range(12))
def test_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    cuts = rng.uniform(-1, 1, (int(rng.integers(1, 4)), n))
    G = np.vstack([np.eye(n), -np.eye(n), cuts])
    g = np.concatenate([-np.ones(2 * n), -np.ones(len(cuts))])
    c = rng.normal(size=n)
    b = ProgramBuilder()
    x = b.var("x", n)
    b.ge(G @ x, g)
    b.minimize(x.dot(c))
    rep = b.solve()
    assert rep.ok
    assert rep.objective_value == pytest.approx(_vertex_min(G, g, c), abs=1e-6)


@pytest.mark.parametrize("seed", range(8))
def test_weak_duality_audit(seed):
    rng = np.random.default_rng(100 + seed)
    n = 3
    G = np.vstack([np.eye(n), -np.eye(n), rng.uniform(-1, 1, (2, n))])
    g = -np.ones(G.shape[0])
    b = ProgramBuilder()
    x = b.var("x", n)
    t = b.var("t")
    b.ge(G @ x, g)
    b.soc(t, x)
    b.minimize(x.dot(rng.normal(size=n)) + t)
    rep = b.solve()
    assert rep.ok
    assert rep.objective_value >= rep.dual_objective - 10 * 1e-8
    assert max(rep.residuals) <= 1e-6


def test_dual_norm_pairs():
    assert dual_norm(np.inf) == 1.0
    assert dual_norm(2) == 2.0
    assert dual_norm(1) == np.inf
    assert dual_norm("inf") == 1.0


def test_membership_examples():
    box = box_set(-np.ones(2), np.ones(2))
    assert membership(box, [0.0, 0.0])
    assert not membership(box, [1.2, 0.0], tol=1e-8)
    assert membership(box, [1 + 1e-9, 0.0], tol=1e-6)
    with pytest.raises(ValueError):
        membership(box, [0.0])


def test_psd_cone_slots_and_svec_roundtrip(rng):
    assert Cone(ConeKind.PSD, 4).slots == 10
    M = rng.normal(size=(4, 4))
    M = M + M.T
    v = svec(M)
    assert np.allclose(smat(v, 4), M)
    # svec preserves the trace inner product
    P = rng.normal(size=(4, 4))
    P = P + P.T
    assert svec(M) @ svec(P) == pytest.approx(np.trace(M @ P))


def test_psd_program_minimum_eigenvalue(rng):
    M = rng.normal(size=(3, 3))
    M = M + M.T
    b = ProgramBuilder()
    t = b.var("t")
    b.psd(M - scaled_identity(t, 3))
    b.maximize(t)
    rep = b.solve()
    assert rep.ok
    assert rep.objective_value == pytest.approx(np.linalg.eigvalsh(M).min(), abs=1e-6)


def test_conic_set_rejects_bad_partition():
    with pytest.raises(ValueError):
        ConicSet(np.eye(3), np.zeros(3), (nonneg(2),))
    with pytest.raises(ValueError):
        Cone(ConeKind.NONNEG, 0)


def test_conic_set_dict_roundtrip():
    cs = ConicSet(np.vstack([np.eye(2), [[1.0, 1.0]]]), np.array([0.0, 0.0, 1.0]), (nonneg(2), zero(1)))
    back = ConicSet.from_dict(json.loads(json.dumps(cs.to_dict())))
    assert np.array_equal(back.A, cs.A) and np.array_equal(back.b, cs.b) and back.cones == cs.cones


def test_program_json_roundtrip():
    b = ProgramBuilder()
    x = b.var("x", 2)
    b.ge(x, -1.0)
    b.soc(2.0, x)
    b.minimize(x.sum())
    prog = b.build()
    back = ConicProgram.from_json(prog.to_json())
    assert solve(back).objective_value == pytest.approx(solve(prog).objective_value, abs=1e-7)


def test_tolerance_override(monkeypatch):
    from dro_invopt.conic import TOL_ENV, default_tol

    monkeypatch.setenv(TOL_ENV, "1e-6")
    assert default_tol() == 1e-6
    with pytest.raises(ValueError):
        b = ProgramBuilder()
        x = b.var("x")
        b.ge(x, 0.0)
        b.minimize(x)
        solve(b.build(), tol=-1.0)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=4), st.floats(0.1, 3))
def test_soc_projection_property(v, radius):
    """Closest point in the Euclidean ball has distance max(||v|| - r, 0)."""
    v = np.asarray(v)
    b = ProgramBuilder()
    y = b.var("y", v.size)
    t = b.var("t")
    b.soc(radius, y)
    b.soc(t, y - v)
    b.minimize(t)
    rep = b.solve()
    assert rep.ok
    assert rep.objective_value == pytest.approx(max(np.linalg.norm(v) - radius, 0.0), abs=1e-6)


@given(st.integers(1, 4), st.integers(0, 10_000))
def test_svec_roundtrip_property(k, seed):
    M = np.random.default_rng(seed).normal(size=(k, k))
    M = M + M.T
    assert np.allclose(smat(svec(M), k), M)
