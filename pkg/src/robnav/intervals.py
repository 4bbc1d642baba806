"""Interval-matrix uncertainty and the inverse-robust problem family.

An interval matrix is the box [center - offset, center + offset].  A fluence
x is a *strong solution* at robustness level r if A x <= b holds for every
realization A, b drawn from the level-r box.  Rohn's classical
characterization turns that semi-infinite condition into finitely many linear
inequalities in the split variables (x_plus, x_minus); treating the level r
itself as a decision variable to maximize makes the constraints bilinear and
yields a QCQP.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .validation import ValidationError, require

__all__ = [
    "IntervalMatrix",
    "IntervalVector",
    "RobustnessSpec",
    "QcqpInstance",
    "QcqpPoint",
    "LpConstraintSet",
    "FeasibilityReport",
    "make_interval",
    "strong_solution_check",
    "rohn_split",
    "lp_at_level",
    "assemble_qcqp",
    "qcqp_feasible",
]

DEFAULT_FEAS_TOL = 1e-8


def _csr(mat) -> sp.csr_matrix:
    return sp.csr_matrix(mat, dtype=float)


@dataclass(frozen=True)
class IntervalMatrix:
    """Box of matrices represented by its center and non-negative offset."""

    center: sp.csr_matrix
    offset: sp.csr_matrix

    def __post_init__(self):
        c, d = _csr(self.center), _csr(self.offset)
        require(c.shape == d.shape, "offset", f"shape {d.shape} != center shape {c.shape}")
        if d.nnz and d.data.min() < -1e-15:
            raise ValidationError("offset", "must be non-negative componentwise")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "offset", d)

    @property
    def shape(self) -> tuple[int, int]:
        return self.center.shape

    def lower(self) -> sp.csr_matrix:
        return (self.center - self.offset).tocsr()

    def upper(self) -> sp.csr_matrix:
        return (self.center + self.offset).tocsr()


@dataclass(frozen=True)
class IntervalVector:
    center: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).ravel()
        d = np.asarray(self.offset, dtype=float).ravel()
        require(c.size == d.size, "offset", f"length {d.size} != center length {c.size}")
        require(bool(np.all(d >= 0)), "offset", "must be non-negative")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "offset", d)

    @property
    def size(self) -> int:
        return self.center.size


@dataclass(frozen=True)
class RobustnessSpec:
    """Uncertain system A x <= b with a scalable box and utility r itself."""

    matrix: IntervalMatrix
    rhs: IntervalVector
    utility: str = "linear_r"

    def __post_init__(self):
        require(
            self.matrix.shape[0] == self.rhs.size,
            "rhs",
            f"length {self.rhs.size} != matrix rows {self.matrix.shape[0]}",
        )
        require(self.utility == "linear_r", "utility", f"unsupported utility {self.utility!r}")

    @property
    def num_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_vars(self) -> int:
        return self.matrix.shape[1]


def make_interval(center, relative_scale: float) -> IntervalMatrix:
    """Entrywise relative box: offset = scale * |center|."""
    if relative_scale < 0:
        raise ValidationError("relative_scale", "must be non-negative")
    c = _csr(center)
    offset = abs(c) * float(relative_scale)
    offset.eliminate_zeros()
    return IntervalMatrix(center=c, offset=offset)


def strong_solution_check(spec: RobustnessSpec, x, r: float, tol: float = DEFAULT_FEAS_TOL) -> bool:
    """Certify A x <= b for every realization in the level-r box.

    Equivalent to the componentwise test
    ``center @ x - rhs_center <= -r * offset @ |x| - r * rhs_offset``.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size != spec.num_vars:
        raise ValidationError("x", f"length {x.size} != {spec.num_vars}")
    require(0.0 <= r <= 1.0, "r", "must lie in [0, 1]")
    lhs = spec.matrix.center @ x - spec.rhs.center
    rhs = -r * (spec.matrix.offset @ np.abs(x)) - r * spec.rhs.offset
    return bool(np.all(lhs <= rhs + tol))


@dataclass(frozen=True)
class LpConstraintSet:
    """Linear constraints over stacked (x_plus, x_minus) split variables.

    ``matrix @ (x_plus, x_minus) <= rhs`` together with x_plus, x_minus >= 0
    and the box ``lower <= x_plus - x_minus <= upper`` (when bounds given).
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    num_vars: int
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def satisfied(self, x_plus, x_minus, tol: float = DEFAULT_FEAS_TOL) -> bool:
        z = np.concatenate([np.asarray(x_plus, float), np.asarray(x_minus, float)])
        if np.any(z < -tol):
            return False
        if np.any(self.matrix @ z > self.rhs + tol):
            return False
        x = z[: self.num_vars] - z[self.num_vars :]
        if self.lower is not None and np.any(x < self.lower - tol):
            return False
        if self.upper is not None and np.any(x > self.upper + tol):
            return False
        return True


def rohn_split(spec: RobustnessSpec, r: float, lower=None, upper=None) -> LpConstraintSet:
    """Level-r split-variable constraints: (Ac + r*Ad) x+ - (Ac - r*Ad) x- <= bc - r*bd."""
    require(0.0 <= r <= 1.0, "r", "must lie in [0, 1]")
    a_hi = spec.matrix.center + r * spec.matrix.offset
    a_lo = spec.matrix.center - r * spec.matrix.offset
    mat = sp.hstack([a_hi, -a_lo], format="csr")
    rhs = spec.rhs.center - r * spec.rhs.offset
    return LpConstraintSet(
        matrix=mat,
        rhs=rhs,
        num_vars=spec.num_vars,
        lower=None if lower is None else np.asarray(lower, float),
        upper=None if upper is None else np.asarray(upper, float),
    )


@dataclass(frozen=True)
class QcqpInstance:
    """Inverse-robust problem over (x_plus, x_minus, r).

    Minimizes (objectives @ (x_plus - x_minus), -r) subject to the bilinear
    level constraints, the fluence box, and r in [0, 1].  With
    ``split_negative`` False the x_minus variables are eliminated, which is
    valid only for non-negative lower bounds.
    """

    robustness: RobustnessSpec
    objectives: np.ndarray      # (k, n)
    lower: np.ndarray
    upper: np.ndarray
    split_negative: bool = True

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.objectives, dtype=float))
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        n = self.robustness.num_vars
        require(g.shape[1] == n, "objectives", f"column count {g.shape[1]} != {n}")
        require(lo.size == n and hi.size == n, "bounds", f"length must be {n}")
        require(bool(np.all(lo <= hi)), "bounds", "lower must not exceed upper")
        if not self.split_negative:
            require(bool(np.all(lo >= 0)), "split_negative", "eliminating x_minus requires lower >= 0")
        object.__setattr__(self, "objectives", g)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def num_vars(self) -> int:
        return self.robustness.num_vars

    @property
    def num_objectives(self) -> int:
        """Dose objectives plus the robustness objective -r."""
        return self.objectives.shape[0] + 1

    def point(self, x_plus, x_minus=None, r: float = 0.0) -> "QcqpPoint":
        x_plus = np.asarray(x_plus, dtype=float).ravel()
        if x_minus is None:
            x_minus = np.zeros_like(x_plus)
        x_minus = np.asarray(x_minus, dtype=float).ravel()
        g = self.objectives @ (x_plus - x_minus)
        return QcqpPoint(x_plus=x_plus, x_minus=x_minus, r=float(r), objective_values=np.append(g, -float(r)))


@dataclass(frozen=True)
class QcqpPoint:
    x_plus: np.ndarray
    x_minus: np.ndarray
    r: float
    objective_values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_plus", np.asarray(self.x_plus, dtype=float).ravel())
        object.__setattr__(self, "x_minus", np.asarray(self.x_minus, dtype=float).ravel())
        object.__setattr__(self, "objective_values", np.asarray(self.objective_values, dtype=float).ravel())

    @property
    def fluence(self) -> np.ndarray:
        return self.x_plus - self.x_minus

    def to_dict(self) -> dict:
        return {
            "x_plus": [float(v) for v in self.x_plus],
            "x_minus": [float(v) for v in self.x_minus],
            "r": float(self.r),
            "objectives": [float(v) for v in self.objective_values],
        }

    @staticmethod
    def from_dict(doc: dict) -> "QcqpPoint":
        return QcqpPoint(
            x_plus=np.asarray(doc["x_plus"], float),
            x_minus=np.asarray(doc["x_minus"], float),
            r=float(doc["r"]),
            objective_values=np.asarray(doc["objectives"], float),
        )


def assemble_qcqp(nominal, scale: float, split_negative: bool = False, rhs_offset=None) -> QcqpInstance:
    """Build the inverse-robust instance from a stacked one-sided LP.

    ``scale`` is the relative entrywise uncertainty of the constraint matrix
    (offset = scale * |A|); the right-hand side is certain unless
    ``rhs_offset`` is given.
    """
    interval = make_interval(nominal.constraint_matrix, scale)
    b_off = np.zeros(nominal.rhs.size) if rhs_offset is None else np.asarray(rhs_offset, float)
    spec = RobustnessSpec(matrix=interval, rhs=IntervalVector(center=nominal.rhs, offset=b_off))
    return QcqpInstance(
        robustness=spec,
        objectives=nominal.objectives,
        lower=nominal.lower,
        upper=nominal.upper,
        split_negative=split_negative,
    )


def lp_at_level(q: QcqpInstance, r: float):
    """Fix the robustness level: the bilinear constraints become linear.

    Returns an LpInstance over (x_plus, x_minus), or over x alone when the
    instance eliminated the negative part.
    """
    from .backend import LpInstance

    require(0.0 <= r <= 1.0, "r", "must lie in [0, 1]")
    spec = q.robustness
    n = q.num_vars
    rhs = spec.rhs.center - r * spec.rhs.offset
    if q.split_negative:
        cons = rohn_split(spec, r)
        box_u = sp.hstack([sp.eye(n), -sp.eye(n)], format="csr")
        a_ub = sp.vstack([cons.matrix, box_u, -box_u], format="csr")
        b_ub = np.concatenate([rhs, q.upper, -q.lower])
        objectives = np.hstack([q.objectives, -q.objectives])
        lb = np.zeros(2 * n)
        ub = np.full(2 * n, np.inf)
    else:
        a_hi = (spec.matrix.center + r * spec.matrix.offset).tocsr()
        a_ub = a_hi
        b_ub = rhs
        objectives = q.objectives
        lb = q.lower
        ub = q.upper
    return LpInstance(objectives=objectives, a_ub=a_ub, b_ub=b_ub, lower=lb, upper=ub)


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    max_residual: float
    worst_row: int | None      # index into the constraint rows, None if a box/bound violation dominates
    worst_kind: str            # "level" | "nonneg" | "box" | "r_box" | "ok"

    def __bool__(self) -> bool:  # pragma: no cover - convenience
        return self.feasible


def qcqp_feasible(q: QcqpInstance, p: QcqpPoint, tol: float = DEFAULT_FEAS_TOL) -> FeasibilityReport:
    """Check one candidate against every bilinear constraint and box."""
    spec = q.robustness
    x_plus, x_minus, r = p.x_plus, p.x_minus, p.r
    if x_plus.size != q.num_vars or x_minus.size != q.num_vars:
        raise ValidationError("point", "variable length mismatch")
    worst = 0.0
    worst_row: int | None = None
    kind = "ok"

    level = (
        spec.matrix.center @ (x_plus - x_minus)
        + r * (spec.matrix.offset @ (x_plus + x_minus))
        + r * spec.rhs.offset
        - spec.rhs.center
    )
    if level.size:
        i = int(np.argmax(level))
        if level[i] > worst:
            worst, worst_row, kind = float(level[i]), i, "level"

    neg = max(float(np.max(-x_plus, initial=0.0)), float(np.max(-x_minus, initial=0.0)))
    if neg > worst:
        worst, worst_row, kind = neg, None, "nonneg"

    x = x_plus - x_minus
    box = max(float(np.max(x - q.upper, initial=0.0)), float(np.max(q.lower - x, initial=0.0)))
    if box > worst:
        worst, worst_row, kind = box, None, "box"

    r_box = max(-r, r - 1.0)
    if r_box > worst:
        worst, worst_row, kind = r_box, None, "r_box"

    return FeasibilityReport(feasible=worst <= tol, max_residual=worst, worst_row=worst_row, worst_kind=kind)
