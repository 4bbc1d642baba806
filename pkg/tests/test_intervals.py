import numpy as np
import pytest
import scipy.sparse as sp

from robnav.backend import solve_lp
from robnav.intervals import (
    IntervalMatrix,
    IntervalVector,
    QcqpInstance,
    RobustnessSpec,
    assemble_qcqp,
    lp_at_level,
    make_interval,
    qcqp_feasible,
    rohn_split,
    strong_solution_check,
)
from robnav.model import NominalLp
from robnav.validation import ValidationError

from conftest import random_robustness_spec
from oracles import enumerate_strong_solution


def scalar_spec(a_c=2.0, a_d=1.0, b_c=2.0, b_d=0.0) -> RobustnessSpec:
    return RobustnessSpec(
        matrix=IntervalMatrix(center=sp.csr_matrix([[a_c]]), offset=sp.csr_matrix([[a_d]])),
        rhs=IntervalVector(center=np.array([b_c]), offset=np.array([b_d])),
    )


# --------------------------------------------------------------------- make_interval

def test_make_interval_uses_absolute_center():
    iv = make_interval(np.array([[2.0, -4.0]]), 0.02)
    np.testing.assert_allclose(iv.offset.toarray(), [[0.04, 0.08]])


def test_make_interval_zero_scale():
    iv = make_interval(np.array([[2.0, -4.0]]), 0.0)
    assert iv.offset.nnz == 0


def test_make_interval_unit_scale_bounds():
    iv = make_interval(np.array([[1.0]]), 1.0)
    assert iv.lower().toarray()[0, 0] == pytest.approx(0.0)
    assert iv.upper().toarray()[0, 0] == pytest.approx(2.0)


def test_make_interval_rejects_negative_scale():
    with pytest.raises(ValidationError):
        make_interval(np.array([[1.0]]), -0.1)


# ------------------------------------------------------------ strong_solution_check

def test_strong_solution_examples():
    spec = scalar_spec()
    # expected values frozen from the extreme-enumeration oracle
    assert enumerate_strong_solution([[2.0]], [[1.0]], [2.0], [0.0], [0.6], 1.0)
    assert strong_solution_check(spec, [0.6], 1.0)
    assert not enumerate_strong_solution([[2.0]], [[1.0]], [2.0], [0.0], [0.7], 1.0)
    assert not strong_solution_check(spec, [0.7], 1.0)
    assert enumerate_strong_solution([[2.0]], [[1.0]], [2.0], [0.0], [-1.0], 1.0)
    assert strong_solution_check(spec, [-1.0], 1.0)


def test_strong_solution_dimension_mismatch():
    with pytest.raises(ValidationError):
        strong_solution_check(scalar_spec(), [1.0, 2.0], 0.5)


def test_strong_solution_agrees_with_enumeration():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(120):
        spec = random_robustness_spec(rng, n_max=3, m_max=4)
        x = rng.uniform(-2.0, 2.0, size=spec.num_vars)
        for r in (0.0, 0.3, 1.0):
            expected = enumerate_strong_solution(
                spec.matrix.center.toarray(), spec.matrix.offset.toarray(),
                spec.rhs.center, spec.rhs.offset, x, r,
            )
            assert strong_solution_check(spec, x, r, tol=1e-12) == expected
            checked += 1
    assert checked == 360


# --------------------------------------------------------------------- rohn_split

def test_rohn_split_level_zero_reduces_to_nominal():
    spec = scalar_spec()
    cons = rohn_split(spec, 0.0)
    np.testing.assert_allclose(cons.matrix.toarray(), [[2.0, -2.0]])
    np.testing.assert_allclose(cons.rhs, [2.0])


def test_rohn_split_level_one():
    cons = rohn_split(scalar_spec(), 1.0)
    np.testing.assert_allclose(cons.matrix.toarray(), [[3.0, -1.0]])
    np.testing.assert_allclose(cons.rhs, [2.0])


def test_rohn_split_half_level():
    cons = rohn_split(scalar_spec(), 0.5)
    np.testing.assert_allclose(cons.matrix.toarray(), [[2.5, -1.5]])


def test_rohn_equivalence_on_canonical_split():
    """Split-variable constraints at (x+, x-) = (max(x,0), max(-x,0)) agree
    exactly with the componentwise strong-solution condition."""
    rng = np.random.default_rng(23)
    agree = 0
    for _ in range(200):
        spec = random_robustness_spec(rng)
        x = rng.uniform(-2.0, 2.0, size=spec.num_vars)
        x_plus, x_minus = np.maximum(x, 0.0), np.maximum(-x, 0.0)
        for r in (0.0, 0.3, 1.0):
            cond2 = strong_solution_check(spec, x, r, tol=1e-10)
            cond3 = rohn_split(spec, r).satisfied(x_plus, x_minus, tol=1e-10)
            assert cond2 == cond3
            agree += 1
    assert agree == 600


def test_rohn_split_solutions_certify_strong_solutions():
    rng = np.random.default_rng(5)
    for _ in range(40):
        spec = random_robustness_spec(rng, rhs_uncertain=False)
        n = spec.num_vars
        xp = rng.uniform(0.0, 1.5, size=n)
        xm = rng.uniform(0.0, 1.5, size=n)
        r = float(rng.uniform(0, 1))
        cons = rohn_split(spec, r)
        if cons.satisfied(xp, xm, tol=1e-12):
            assert strong_solution_check(spec, xp - xm, r, tol=1e-9)


# --------------------------------------------------------------------- lp_at_level

def test_lp_at_level_ratio_instance(ratio_qcqp):
    for r, expect in ((1.0, 2.0 / 3.0), (0.0, 1.0), (0.5, 0.8)):
        rep = solve_lp(lp_at_level(ratio_qcqp, r))
        assert rep.status == "optimal"
        assert rep.x[0] == pytest.approx(expect, abs=1e-9)
        assert rep.objective == pytest.approx(-expect, abs=1e-9)


def test_lp_at_level_monotone_feasible_sets():
    rng = np.random.default_rng(3)
    for _ in range(20):
        spec = random_robustness_spec(rng)
        n = spec.num_vars
        q = QcqpInstance(
            robustness=spec,
            objectives=np.ones((1, n)),
            lower=np.full(n, -1.0),
            upper=np.full(n, 2.0),
            split_negative=True,
        )
        r1, r2 = sorted(rng.uniform(0, 1, size=2))
        lp1, lp2 = lp_at_level(q, r1), lp_at_level(q, r2)
        for _ in range(30):
            z = rng.uniform(0, 1.5, size=2 * n)
            ok2 = np.all(lp2.a_ub @ z <= lp2.b_ub + 1e-12)
            ok1 = np.all(lp1.a_ub @ z <= lp1.b_ub + 1e-12)
            if ok2:
                assert ok1, "feasible at the larger level must stay feasible at the smaller"


def test_x_minus_elimination_sound():
    rng = np.random.default_rng(9)
    for _ in range(25):
        spec = random_robustness_spec(rng, rhs_uncertain=False)
        n = spec.num_vars
        nominal = NominalLp(
            constraint_matrix=spec.matrix.center,
            rhs=spec.rhs.center,
            objectives=rng.uniform(-1, 1, size=(1, n)),
            lower=np.zeros(n),
            upper=np.full(n, 2.0),
            row_origin=tuple(type("O", (), {"structure": "s", "voxel": i, "kind": "ub"})() for i in range(spec.num_rows)),
        )
        scale = 0.1
        q_split = assemble_qcqp(nominal, scale, split_negative=True)
        q_flat = assemble_qcqp(nominal, scale, split_negative=False)
        r = float(rng.uniform(0, 1))
        rep_split = solve_lp(lp_at_level(q_split, r))
        rep_flat = solve_lp(lp_at_level(q_flat, r))
        assert rep_split.status == rep_flat.status
        if rep_split.status == "optimal":
            assert rep_split.objective == pytest.approx(rep_flat.objective, abs=1e-7)


# ------------------------------------------------------------------- assemble_qcqp

def test_assemble_qcqp_elimination_requires_nonneg_lower():
    nominal = NominalLp(
        constraint_matrix=sp.csr_matrix([[2.0]]),
        rhs=np.array([2.0]),
        objectives=np.array([[-1.0]]),
        lower=np.array([-1.0]),
        upper=np.array([10.0]),
        row_origin=(type("O", (), {"structure": "s", "voxel": 0, "kind": "ub"})(),),
    )
    with pytest.raises(ValidationError, match="split_negative"):
        assemble_qcqp(nominal, 0.5, split_negative=False)


def test_assemble_qcqp_zero_scale_ignores_r(ratio_qcqp):
    nominal = NominalLp(
        constraint_matrix=sp.csr_matrix([[2.0]]),
        rhs=np.array([2.0]),
        objectives=np.array([[-1.0]]),
        lower=np.array([0.0]),
        upper=np.array([10.0]),
        row_origin=(type("O", (), {"structure": "s", "voxel": 0, "kind": "ub"})(),),
    )
    q = assemble_qcqp(nominal, 0.0, split_negative=False)
    for r in (0.0, 0.37, 1.0):
        rep = solve_lp(lp_at_level(q, r))
        assert rep.x[0] == pytest.approx(1.0, abs=1e-9)


# -------------------------------------------------------------------- qcqp_feasible

def test_qcqp_feasible_tight_point(ratio_qcqp):
    p = ratio_qcqp.point([0.8], r=0.5)
    rep = qcqp_feasible(ratio_qcqp, p)
    assert rep.feasible
    assert rep.max_residual == pytest.approx(0.0, abs=1e-12)


def test_qcqp_feasible_violation_magnitude(ratio_qcqp):
    p = ratio_qcqp.point([0.8], r=0.6)
    rep = qcqp_feasible(ratio_qcqp, p)
    assert not rep.feasible
    assert rep.max_residual == pytest.approx(0.08, abs=1e-12)
    assert rep.worst_kind == "level"
    assert rep.worst_row == 0


def test_qcqp_feasible_r_box(ratio_qcqp):
    p = ratio_qcqp.point([0.0], r=1.2)
    rep = qcqp_feasible(ratio_qcqp, p)
    assert not rep.feasible
    assert rep.worst_kind == "r_box"
