import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import box_problem, consumer_problem, interval_problem, random_polytope_problem
from dro_invopt.agent import Linear, Quadratic, forward_solve
from dro_invopt.losses import (
    LossKind, bounded_rationality_loss, evaluate_loss, first_order_loss, gamma_certificate,
    identifiability_loss, loss_table, predictability_loss, suboptimality_loss, write_loss_csv,
)

SQ = Quadratic([[1.0]], [[0.0]], [0.0])


def test_suboptimality_examples():
    prob = interval_problem()
    assert suboptimality_loss(prob, Linear([1.0]), [0.0], [0.0]) == pytest.approx(1.0, abs=1e-7)
    assert suboptimality_loss(prob, Linear([1.0]), [0.0], [-1.0]) == pytest.approx(0.0, abs=1e-7)
    assert suboptimality_loss(prob, SQ, [0.0], [0.5]) == pytest.approx(0.25, abs=1e-7)


def test_first_order_examples():
    prob = interval_problem()
    assert first_order_loss(prob, SQ, [0.0], [0.5]) == pytest.approx(1.5, abs=1e-7)
    assert first_order_loss(prob, SQ, [0.0], [0.0]) == 0.0


@given(st.integers(0, 10_000))
def test_first_order_equals_suboptimality_for_linear(seed):
    rng = np.random.default_rng(seed)
    prob, A = random_polytope_problem(rng, 3, 2)
    hyp = Linear(rng.normal(size=3))
    s = A @ rng.uniform(-1, 1, 3)
    x = rng.uniform(-1, 1, 3)
    assert first_order_loss(prob, hyp, s, x) == pytest.approx(suboptimality_loss(prob, hyp, s, x), abs=1e-6)


def test_predictability_examples():
    prob = interval_problem()
    assert predictability_loss(prob, SQ, [0.0], [0.5]) == pytest.approx(0.25, abs=1e-7)
    box = box_problem(2)
    hyp = Linear([1.0, 0.0])
    assert predictability_loss(box, hyp, [0.0], [-1.0, 0.3]) == pytest.approx(0.0, abs=1e-6)
    x_opt, _ = forward_solve(box, Linear([1.0, 1.0]), [0.0])
    assert predictability_loss(box, Linear([1.0, 1.0]), [0.0], x_opt) == pytest.approx(0.0, abs=1e-6)


def test_predictability_face_distance_matches_projection():
    # optimal face of theta=(1,0) on [-1,1]^2 is {-1} x [-1,1]
    box = box_problem(2)
    x = np.array([0.5, 0.4])
    assert predictability_loss(box, Linear([1.0, 0.0]), [0.0], x) == pytest.approx(1.5 ** 2, abs=1e-6)


def test_bounded_rationality_examples():
    prob = interval_problem()
    # subopt of x=0 under theta=1 is 1
    assert bounded_rationality_loss(prob, Linear([1.0]), [0.0], [0.0], 1.0) == pytest.approx(0.0, abs=1e-7)
    assert bounded_rationality_loss(prob, Linear([1.0]), [0.0], [0.0], 0.2) == pytest.approx(0.8, abs=1e-7)
    with pytest.raises(ValueError):
        bounded_rationality_loss(prob, Linear([1.0]), [0.0], [0.0], -0.1)


@pytest.mark.parametrize("seed", range(100))
def test_bounded_rationality_zero_delta_is_suboptimality(seed):
    rng = np.random.default_rng(seed)
    prob = box_problem(2)
    hyp = Linear(rng.normal(size=2))
    x = rng.uniform(-1.5, 1.5, 2)
    assert bounded_rationality_loss(prob, hyp, [0.0], x, 0.0) == suboptimality_loss(prob, hyp, [0.0], x)


def test_identifiability_examples(rng):
    assert identifiability_loss(Linear([1.0]), Linear([1.0]), [0.0], [3.0]) == 0.0
    assert identifiability_loss(Linear([1.0]), Linear([2.0]), [0.0], [3.0]) == pytest.approx(9.0)
    a, b = Linear(rng.normal(size=3)), Linear(rng.normal(size=3))
    x = rng.normal(size=3)
    assert identifiability_loss(a, b, [0.0], x) == pytest.approx(float((a.theta @ x - b.theta @ x) ** 2))


def test_gamma_certificate_examples():
    assert gamma_certificate(Quadratic(np.eye(2), np.zeros((2, 1)), np.zeros(2))).gamma == pytest.approx(2.0)
    assert gamma_certificate(Linear([1.0, 1.0])).gamma == 0.0
    assert gamma_certificate(Quadratic(np.diag([0.2, 1.0]), np.zeros((2, 1)), np.zeros(2))).gamma == \
        pytest.approx(0.4)


def _strongly_convex_quadratic(rng, n, m):
    B = rng.normal(size=(n, n))
    return Quadratic(np.eye(n) + B @ B.T / n, rng.normal(size=(n, m)), rng.normal(size=n))


@pytest.mark.parametrize("seed", range(500))
def test_dominance_chain(seed):
    rng = np.random.default_rng(seed)
    n = 2
    prob = consumer_problem(n)
    hyp = _strongly_convex_quadratic(rng, n, n)
    s = rng.uniform(0, 1, n)
    x = rng.uniform(0, 5, n)
    lf = first_order_loss(prob, hyp, s, x)
    ls = suboptimality_loss(prob, hyp, s, x)
    lp = predictability_loss(prob, hyp, s, x)
    gamma = gamma_certificate(hyp).gamma
    assert lf >= ls - 1e-6
    assert ls >= gamma / 2 * lp - 1e-6


def test_loss_table_and_csv(tmp_path):
    prob = interval_problem()
    rows = loss_table(prob, SQ, [[0.0], [0.0]], [[0.5], [0.0]], ["suboptimality", "first_order"])
    assert [r[:2] for r in rows] == [(0, "suboptimality"), (0, "first_order"),
                                     (1, "suboptimality"), (1, "first_order")]
    path = tmp_path / "losses.csv"
    write_loss_csv(path, rows, header_comment="manifest_sha256=abc")
    lines = path.read_text().splitlines()
    assert lines[0] == "# manifest_sha256=abc"
    assert lines[1] == "sample_index,loss_kind,value"
    assert float(lines[2].split(",")[2]) == pytest.approx(0.25)


def test_evaluate_loss_dispatch():
    prob = interval_problem()
    assert evaluate_loss(LossKind.BOUNDED_RATIONALITY, prob, Linear([1.0]), [0.0], [0.0], delta=0.2) == \
        pytest.approx(0.8, abs=1e-7)
    with pytest.raises(ValueError):
        evaluate_loss("identifiability", prob, Linear([1.0]), [0.0], [0.0])
    with pytest.raises(ValueError):
        evaluate_loss("nonsense", prob, Linear([1.0]), [0.0], [0.0])
