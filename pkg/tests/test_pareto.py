import numpy as np
import pytest
import scipy.sparse as sp

from robnav.backend import LpInstance, solve_lp
from robnav.intervals import lp_at_level
from robnav.pareto import (
    FrontError,
    LpFrontProblem,
    ParetoDb,
    SdpFrontProblem,
    dominance_filter,
    eps_efficiency,
    epsilon_constraint_solve,
    iterative_r_front,
    robustness_levels,
    sandwich_front,
    weighted_sum_solve,
)
from robnav.relaxation import build_sdp
from robnav.serialize import canonical_json
from robnav.validation import ValidationError

from oracles import grid_front_1d, nondominated


def segment_problem() -> LpFrontProblem:
    """min (x1, x2) s.t. x1 + x2 >= 1, box [0,1]^2; front = the segment
    between (0, 1) and (1, 0) (vertices frozen by enumeration)."""
    lp = LpInstance(
        objectives=np.eye(2),
        a_ub=sp.csr_matrix(np.array([[-1.0, -1.0]])),
        b_ub=np.array([-1.0]),
        lower=np.zeros(2),
        upper=np.ones(2),
    )
    return LpFrontProblem(lp)


def test_weighted_sum_lexicographic_anchor():
    p = weighted_sum_solve(segment_problem(), [1.0, 0.0])
    np.testing.assert_allclose(p.objective_values, [0.0, 1.0], atol=1e-9)
    assert p.origin == "weighted_sum"


def test_weighted_sum_interior_weight():
    p = weighted_sum_solve(segment_problem(), [1.0, 1.0])
    assert float(np.sum(p.objective_values)) == pytest.approx(1.0, abs=1e-9)


def test_weighted_sum_rejects_zero_weights():
    with pytest.raises(ValidationError):
        weighted_sum_solve(segment_problem(), [0.0, 0.0])


def test_epsilon_constraint_on_segment():
    p = epsilon_constraint_solve(segment_problem(), 0, [np.inf, 0.25])
    np.testing.assert_allclose(p.objective_values, [0.75, 0.25], atol=1e-9)


def test_epsilon_constraint_infeasible():
    with pytest.raises(FrontError, match="infeasible"):
        epsilon_constraint_solve(segment_problem(), 0, [np.inf, -1.0])


def test_epsilon_constraint_requires_finite_bounds():
    with pytest.raises(ValidationError):
        epsilon_constraint_solve(segment_problem(), 0, [np.inf, np.inf])


def test_dominance_filter_examples():
    keep = dominance_filter(np.array([[1.0, 1.0], [2.0, 2.0]]))
    assert keep.tolist() == [0]
    keep = dominance_filter(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert keep.tolist() == [0, 1]
    keep = dominance_filter(np.array([[1.0, 1.0], [1.0, 1.0], [0.5, 2.0]]))
    assert keep.tolist() == [0, 2]


def test_sandwich_segment_coarse():
    db = sandwich_front(segment_problem(), delta=0.5)
    vals = db.values_matrix()
    assert len(db.points) >= 2
    assert any(np.allclose(v, [0.0, 1.0], atol=1e-8) for v in vals)
    assert any(np.allclose(v, [1.0, 0.0], atol=1e-8) for v in vals)
    assert db.quality_gap <= 0.5


def test_sandwich_segment_tight():
    problem = segment_problem()
    db = sandwich_front(problem, delta=0.01)
    assert db.quality_gap <= 0.01
    assert problem.solve_count <= 10
    assert db.solve_count == problem.solve_count


def test_sandwich_single_point_front():
    lp = LpInstance(
        objectives=np.eye(2),
        a_ub=sp.csr_matrix((0, 2)),
        b_ub=np.zeros(0),
        lower=np.zeros(2),
        upper=np.ones(2),
    )
    db = sandwich_front(LpFrontProblem(lp), delta=0.01)
    assert len(db.points) == 1
    assert db.quality_gap == 0.0
    np.testing.assert_allclose(db.points[0].objective_values, [0.0, 0.0], atol=1e-9)


def test_sandwich_polyline_front_meets_gap():
    """Front with several vertices; the inner/outer bracket must hold for a
    dense sweep of directions, not just the refined facet normals."""
    rng = np.random.default_rng(3)
    a = -rng.uniform(0.2, 1.0, size=(6, 2))    # maximize positive combinations
    b = -rng.uniform(0.5, 1.0, size=6)
    lp = LpInstance(objectives=np.eye(2), a_ub=sp.csr_matrix(a), b_ub=b, lower=np.zeros(2), upper=np.full(2, 4.0))
    problem = LpFrontProblem(lp)
    delta = 0.02
    db = sandwich_front(problem, delta=delta)
    assert db.quality_gap <= delta
    ideal = np.asarray(db.normalization["ideal"])
    rngv = np.asarray(db.normalization["range"])
    vals_n = (db.values_matrix() - ideal) / rngv
    for w1 in np.linspace(0.01, 0.99, 40):
        w_n = np.array([w1, 1 - w1])
        w_n /= np.linalg.norm(w_n)
        rep = solve_lp(lp.with_objective((w_n / rngv) @ lp.objectives))
        true_support = float(w_n @ ((lp.objectives @ rep.x - ideal) / rngv))
        inner_support = float(np.min(vals_n @ w_n))
        assert inner_support - true_support <= 2 * delta + 1e-9


def test_sandwich_front_on_sdp(ratio_qcqp):
    """The relaxation's own front: anchors at best-dose and full-level ends.

    The diagonal caps leave the relaxation loose at intermediate levels (the
    best-dose end reaches r = sqrt(99/100) with x = 1), so assertions pin the
    anchor coordinates derived from the PSD algebra, not the original front.
    """
    problem = SdpFrontProblem(build_sdp(ratio_qcqp), tol=1e-9)
    db = sandwich_front(problem, delta=0.04)
    assert db.quality_gap <= 0.04
    vals = db.values_matrix()
    assert any(np.allclose(v, [-1.0, -np.sqrt(0.99)], atol=1e-3) for v in vals), vals
    # max-level anchor: level 1 forces the bilinear column, so dose ~ 2/3
    i = int(np.argmin(vals[:, 1]))
    assert vals[i, 1] == pytest.approx(-1.0, abs=1e-5)
    assert vals[i, 0] == pytest.approx(-2.0 / 3.0, abs=5e-3)


def test_sandwich_seeds_survive(ratio_qcqp):
    from robnav.pareto import ParetoPoint

    seed = ParetoPoint(
        objective_values=np.array([-2.0 / 3.0, -1.0]),
        origin="worst_case_lift",
        params={"level": 1.0},
        decision={"kind": "sdp_border", "x_plus": [2.0 / 3.0], "x_minus": [], "r": 1.0, "rank_estimate": 1},
    )
    problem = SdpFrontProblem(build_sdp(ratio_qcqp), tol=1e-9)
    db = sandwich_front(problem, delta=0.04, seeds=[seed])
    origins = {p.origin for p in db.points}
    assert "worst_case_lift" in origins
    kept = [p for p in db.points if p.origin == "worst_case_lift"]
    np.testing.assert_allclose(kept[0].objective_values, [-2.0 / 3.0, -1.0])


def test_eps_efficiency_examples():
    front = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert eps_efficiency([0.0, 1.0], front) == 0.0
    # reported navigation-style measurement
    eps = eps_efficiency(
        [1.034, -45.06, -0.862], np.array([[1.0339, -45.0665, -0.84]])
    )
    assert eps == pytest.approx(0.022, abs=1e-9)
    # dominated point at sup-distance 0.5 from the only reference point
    assert eps_efficiency([0.5, 0.0], np.array([[0.0, 0.0]])) == pytest.approx(0.5)


def test_eps_efficiency_requires_reference():
    with pytest.raises(ValidationError):
        eps_efficiency([0.0], np.zeros((0, 1)))


def test_robustness_levels():
    assert robustness_levels(0.04) == pytest.approx([i * 0.04 for i in range(25)] + [1.0])
    assert len(robustness_levels(0.04)) == 26
    assert robustness_levels(0.5) == [0.0, 0.5, 1.0]
    assert robustness_levels(1.0) == [0.0, 1.0]


def test_iterative_r_front_ratio(ratio_qcqp):
    db = iterative_r_front(ratio_qcqp, step=0.5, delta=0.04)
    vals = db.values_matrix()
    assert vals.shape[0] == 3
    expected = {(-1.0, 0.0), (-0.8, -0.5), (-2.0 / 3.0, -1.0)}
    got = {(round(v[0], 6), round(v[1], 6)) for v in vals}
    assert got == {(round(a, 6), round(b, 6)) for a, b in expected}
    assert db.solve_count == 3
    assert db.meta["levels"] == [0.0, 0.5, 1.0]


def test_iterative_r_converges_to_grid_front(ratio_qcqp):
    db = iterative_r_front(ratio_qcqp, step=0.05, delta=0.01)
    oracle = grid_front_1d(
        a_c=[2.0], a_d=[1.0], b_c=[2.0], b_d=[0.0], g=-1.0, upper=10.0,
        x_steps=4001, r_steps=201,
    )
    vals = db.values_matrix()
    # directed Hausdorff: every oracle front point is near a computed point
    for q in oracle:
        d = np.min(np.max(np.abs(vals - q), axis=1))
        assert d <= 0.03


def test_pareto_db_roundtrip(ratio_qcqp):
    db = iterative_r_front(ratio_qcqp, step=0.5, delta=0.04)
    db.problem_hash = "abc123"
    doc = db.to_dict()
    text = canonical_json(doc)
    back = ParetoDb.from_dict(__import__("json").loads(text))
    assert canonical_json(back.to_dict()) == text
    for a, b in zip(db.points, back.points):
        assert a.objective_values.tolist() == b.objective_values.tolist()
        assert a.decision == b.decision
