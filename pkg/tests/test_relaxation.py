import numpy as np
import pytest
import scipy.sparse as sp

from robnav.intervals import QcqpInstance, RobustnessSpec, IntervalMatrix, IntervalVector, qcqp_feasible
from robnav.relaxation import (
    GenericQcqp,
    ValidIneqOptions,
    build_sdp,
    extract_border,
    homogenize_qcqp,
    lift_point,
    scalarize_sdp,
)
from robnav.validation import ValidationError

from conftest import random_robustness_spec


def quad_value(Q, q, gamma, x):
    return float(x @ Q @ x + 2.0 * q @ x + gamma)


def test_homogenize_unit_ball_constraint():
    g = GenericQcqp(terms=((np.array([[0.0]]), np.zeros(1), 0.0), (np.array([[1.0]]), np.zeros(1), -1.0)))
    mats = homogenize_qcqp(g)
    np.testing.assert_allclose(mats[1], [[-1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(mats[-1], [[1.0, 0.0], [0.0, 0.0]])


def test_homogenize_linear_term():
    c = np.array([3.0, -2.0])
    g = GenericQcqp(terms=((np.zeros((2, 2)), c / 2.0, 0.0),))
    mats = homogenize_qcqp(g)
    np.testing.assert_allclose(mats[0][0, 1:], c / 2.0)
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.standard_normal(2)
        z = np.concatenate([[1.0], x])
        assert z @ mats[0] @ z == pytest.approx(c @ x)


def test_homogenize_reproduces_quadratics():
    rng = np.random.default_rng(4)
    for _ in range(10):
        n = int(rng.integers(1, 5))
        Q = rng.standard_normal((n, n))
        q = rng.standard_normal(n)
        gamma = float(rng.standard_normal())
        g = GenericQcqp(terms=((Q, q, gamma),))
        M = homogenize_qcqp(g)[0]
        x = rng.standard_normal(n)
        z = np.concatenate([[1.0], x])
        assert z @ M @ z == pytest.approx(quad_value(0.5 * (Q + Q.T), q, gamma, x), rel=1e-12, abs=1e-12)


def test_build_sdp_ratio_instance_block(ratio_qcqp):
    sdp = build_sdp(ratio_qcqp)
    assert sdp.dim == 3  # (1, x, r)
    level = sdp.constraint_blocks[0].toarray()
    rng = np.random.default_rng(1)
    for _ in range(5):
        x, r = rng.uniform(0, 2), rng.uniform(0, 1)
        z = np.array([1.0, x, r])
        assert z @ level @ z == pytest.approx(2 * x + r * x - 2.0, rel=1e-12, abs=1e-12)


def test_build_sdp_r_objective_reads_off_diagonal(ratio_qcqp):
    sdp = build_sdp(ratio_qcqp)
    rng = np.random.default_rng(2)
    r_block = sdp.objective_blocks[-1].toarray()
    for _ in range(5):
        z = np.array([1.0, rng.uniform(0, 2), rng.uniform(0, 1)])
        assert z @ r_block @ z == pytest.approx(-z[-1])


def test_build_sdp_extra_linear_off():
    spec = random_robustness_spec(np.random.default_rng(0))
    q = QcqpInstance(
        robustness=spec,
        objectives=np.ones((1, spec.num_vars)),
        lower=np.zeros(spec.num_vars),
        upper=np.ones(spec.num_vars),
        split_negative=True,
    )
    sdp = build_sdp(q, ValidIneqOptions(border_nonneg=False, diag_caps=False, full_nonneg=False))
    assert sdp.extra_linear == ()


def test_blocks_are_symmetric(ratio_qcqp):
    sdp = build_sdp(ratio_qcqp)
    for B in (*sdp.constraint_blocks, *sdp.objective_blocks, sdp.normalization_block):
        arr = B.toarray()
        np.testing.assert_array_equal(arr, arr.T)


def _random_split_instance(rng):
    spec = random_robustness_spec(rng, n_max=3, m_max=4, rhs_uncertain=True)
    n = spec.num_vars
    return QcqpInstance(
        robustness=spec,
        objectives=rng.uniform(-1, 1, size=(2, n)),
        lower=np.zeros(n),
        upper=np.full(n, 2.0),
        split_negative=bool(rng.integers(0, 2)),
    )


def test_rank_one_lifts_of_feasible_points_satisfy_all_blocks():
    """Relaxation soundness: the lift of any feasible point passes every
    constraint, including the optional valid inequalities."""
    rng = np.random.default_rng(12)
    checked = 0
    while checked < 60:
        q = _random_split_instance(rng)
        n = q.num_vars
        xp = rng.uniform(0, 2, size=n)
        xm = rng.uniform(0, 2, size=n) if q.split_negative else np.zeros(n)
        r = float(rng.uniform(0, 1))
        p = q.point(xp, xm, r=r)
        if not qcqp_feasible(q, p, tol=1e-12).feasible:
            continue
        sdp = build_sdp(q, ValidIneqOptions(border_nonneg=True, diag_caps=True, full_nonneg=True))
        Z = lift_point(sdp, xp, xm, r)
        assert sdp.max_violation(Z) <= 1e-9
        checked += 1


def test_scalarize_single_objective(ratio_qcqp):
    sdp = build_sdp(ratio_qcqp)
    s = scalarize_sdp(sdp, [1.0, 0.0])
    np.testing.assert_allclose(s.objective.toarray(), sdp.objective_blocks[0].toarray())
    s_r = scalarize_sdp(sdp, [0.0, 1.0])
    np.testing.assert_allclose(s_r.objective.toarray(), sdp.objective_blocks[-1].toarray())


def test_scalarize_doubles_identical_blocks(ratio_qcqp):
    sdp = build_sdp(ratio_qcqp)
    s = scalarize_sdp(sdp, [2.0, 0.0])
    np.testing.assert_allclose(s.objective.toarray(), 2.0 * sdp.objective_blocks[0].toarray())


def test_scalarize_rejects_bad_weights(ratio_qcqp):
    sdp = build_sdp(ratio_qcqp)
    with pytest.raises(ValidationError):
        scalarize_sdp(sdp, [0.0, 0.0])
    with pytest.raises(ValidationError):
        scalarize_sdp(sdp, [-1.0, 1.0])


def test_extract_border_rank_one(ratio_qcqp):
    sdp = build_sdp(ratio_qcqp)
    z = np.array([1.0, 0.5, 0.2])
    xp, xm, r, rank = extract_border(np.outer(z, z), sdp.layout)
    np.testing.assert_allclose(xp, [0.5])
    assert xm.size == 0 or np.all(xm == 0)
    assert r == pytest.approx(0.2)
    assert rank == 1


def test_extract_border_identity(ratio_qcqp):
    sdp = build_sdp(ratio_qcqp)
    xp, xm, r, rank = extract_border(np.eye(3), sdp.layout)
    np.testing.assert_allclose(xp, [0.0])
    assert r == 0.0
    assert rank == 3


def test_extract_border_rejects_bad_normalization(ratio_qcqp):
    sdp = build_sdp(ratio_qcqp)
    Z = np.diag([2.0, 1.0, 1.0])
    with pytest.raises(ValidationError):
        extract_border(Z, sdp.layout)
