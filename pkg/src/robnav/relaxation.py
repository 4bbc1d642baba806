"""Homogenization of the inverse-robust QCQP and its semidefinite relaxation.

The lifted variable is z = (1, x_plus, x_minus, r); the relaxation replaces
the rank-1 matrix z z^T with a PSD matrix Z constrained by <M_i, Z> <= 0 per
original constraint, <E_00, Z> = 1 for the homogenizing entry, plus optional
valid inequalities (border/last-row non-negativity, diagonal caps) that are
implied for every rank-1 feasible point and tighten the relaxation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .intervals import QcqpInstance
from .validation import ValidationError, require

__all__ = [
    "GenericQcqp",
    "VariableLayout",
    "ValidIneqOptions",
    "SdpInstance",
    "SdpSolution",
    "ScalarSdp",
    "homogenize_qcqp",
    "build_sdp",
    "scalarize_sdp",
    "extract_border",
    "lift_point",
]


def _sym_csr(mat) -> sp.csr_matrix:
    m = sp.csr_matrix(mat, dtype=float)
    return ((m + m.T) * 0.5).tocsr()


@dataclass(frozen=True)
class GenericQcqp:
    """Plain QCQP x^T Q x + 2 q^T x + gamma; term 0 is the objective."""

    terms: tuple[tuple[np.ndarray, np.ndarray, float], ...]

    def __post_init__(self):
        norm = []
        dim = None
        for Q, q, gamma in self.terms:
            Q = np.atleast_2d(np.asarray(Q, dtype=float))
            q = np.asarray(q, dtype=float).ravel()
            require(Q.shape[0] == Q.shape[1], "terms", "Q must be square")
            require(Q.shape[0] == q.size, "terms", "q length must match Q")
            if dim is None:
                dim = q.size
            require(q.size == dim, "terms", "all terms must share one dimension")
            norm.append((0.5 * (Q + Q.T), q, float(gamma)))
        object.__setattr__(self, "terms", tuple(norm))

    @property
    def dim(self) -> int:
        return self.terms[0][1].size


def homogenize_qcqp(g: GenericQcqp) -> list[np.ndarray]:
    """Lift each term to [[gamma, q^T], [q, Q]]; the last matrix pins z_0^2 = 1."""
    n = g.dim
    mats = []
    for Q, q, gamma in g.terms:
        M = np.zeros((n + 1, n + 1))
        M[0, 0] = gamma
        M[0, 1:] = q
        M[1:, 0] = q
        M[1:, 1:] = Q
        mats.append(M)
    norm = np.zeros((n + 1, n + 1))
    norm[0, 0] = 1.0
    mats.append(norm)
    return mats


@dataclass(frozen=True)
class VariableLayout:
    """Mapping of lifted indices: 0 = constant, then x_plus, x_minus?, r last."""

    num_vars: int
    split_negative: bool

    @property
    def dim(self) -> int:
        return 1 + self.num_vars * (2 if self.split_negative else 1) + 1

    @property
    def r_index(self) -> int:
        return self.dim - 1

    def x_plus_index(self, j: int) -> int:
        return 1 + j

    def x_minus_index(self, j: int) -> int:
        if not self.split_negative:
            raise ValidationError("layout", "instance has no x_minus block")
        return 1 + self.num_vars + j

    def labels(self) -> list[str]:
        out = ["constant"]
        out += [f"x_plus[{j}]" for j in range(self.num_vars)]
        if self.split_negative:
            out += [f"x_minus[{j}]" for j in range(self.num_vars)]
        out.append("r")
        return out

    def split_border(self, border: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        n = self.num_vars
        x_plus = border[:n]
        if self.split_negative:
            x_minus = border[n : 2 * n]
        else:
            x_minus = np.zeros(n)
        return x_plus, x_minus, float(border[-1])


@dataclass(frozen=True)
class ValidIneqOptions:
    border_nonneg: bool = True
    diag_caps: bool = True
    full_nonneg: bool = False


@dataclass(frozen=True)
class EntryConstraint:
    """Linear inequality sum(coef * Z[i, j]) <= rhs on selected entries."""

    entries: tuple[tuple[int, int, float], ...]
    rhs: float
    tag: str

    def block(self, dim: int) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for i, j, c in self.entries:
            if i == j:
                rows.append(i); cols.append(j); vals.append(c)
            else:
                rows.extend([i, j]); cols.extend([j, i]); vals.extend([c / 2, c / 2])
        return sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))


@dataclass(frozen=True)
class SdpInstance:
    """Multi-criteria SDP relaxation with explicit block data."""

    layout: VariableLayout
    constraint_blocks: tuple[sp.csr_matrix, ...]      # <M_i, Z> <= 0
    constraint_tags: tuple[str, ...]
    objective_blocks: tuple[sp.csr_matrix, ...]       # k dose objectives then -r
    normalization_block: sp.csr_matrix                # <., Z> = 1
    extra_linear: tuple[EntryConstraint, ...]
    options: ValidIneqOptions

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def num_objectives(self) -> int:
        return len(self.objective_blocks)

    def objective_values(self, Z: np.ndarray) -> np.ndarray:
        return np.array([float(np.sum(B.multiply(Z)) if sp.issparse(B) else np.sum(B * Z)) for B in self.objective_blocks])

    def constraint_values(self, Z: np.ndarray) -> np.ndarray:
        return np.array([float(np.sum(B.multiply(Z))) for B in self.constraint_blocks])

    def extra_values(self, Z: np.ndarray) -> np.ndarray:
        return np.array([sum(c * Z[i, j] for i, j, c in e.entries) for e in self.extra_linear])

    def max_violation(self, Z: np.ndarray) -> float:
        worst = abs(float(Z[0, 0]) - 1.0)
        vals = self.constraint_values(Z)
        if vals.size:
            worst = max(worst, float(vals.max(initial=0.0)))
        for e, v in zip(self.extra_linear, self.extra_values(Z)):
            worst = max(worst, v - e.rhs)
        return worst


def _linear_block(dim: int, coeffs: list[tuple[int, float]], gamma: float) -> sp.csr_matrix:
    """Homogenized linear row: (1, xhat) block for sum(c * xhat) + gamma <= 0."""
    rows, cols, vals = [0], [0], [gamma]
    for idx, c in coeffs:
        rows.extend([0, idx])
        cols.extend([idx, 0])
        vals.extend([c / 2, c / 2])
    return sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))


def build_sdp(q: QcqpInstance, opts: ValidIneqOptions = ValidIneqOptions()) -> SdpInstance:
    """Assemble the relaxation blocks for an inverse-robust instance.

    Constraint blocks carry the bilinear level rows plus the (certain) variable
    domain: fluence box, split non-negativity, and r in [0, 1], all homogenized
    the same way.  ``opts`` controls the extra valid inequalities only.
    """
    layout = VariableLayout(num_vars=q.num_vars, split_negative=q.split_negative)
    dim = layout.dim
    n = q.num_vars
    r_idx = layout.r_index
    spec = q.robustness
    a_c = spec.matrix.center.tocoo()
    a_d = spec.matrix.offset.tocoo()

    blocks: list[sp.csr_matrix] = []
    tags: list[str] = []

    # Level rows: Ac x+ - Ac x- + r Ad x+ + r Ad x- + r bd - bc <= 0.
    per_row_c: list[list[tuple[int, float]]] = [[] for _ in range(spec.num_rows)]
    per_row_d: list[list[tuple[int, float]]] = [[] for _ in range(spec.num_rows)]
    for i, j, v in zip(a_c.row, a_c.col, a_c.data):
        per_row_c[i].append((int(j), float(v)))
    for i, j, v in zip(a_d.row, a_d.col, a_d.data):
        per_row_d[i].append((int(j), float(v)))
    for i in range(spec.num_rows):
        rows, cols, vals = [0], [0], [-float(spec.rhs.center[i])]
        for j, v in per_row_c[i]:
            jp = layout.x_plus_index(j)
            rows.extend([0, jp]); cols.extend([jp, 0]); vals.extend([v / 2, v / 2])
            if q.split_negative:
                jm = layout.x_minus_index(j)
                rows.extend([0, jm]); cols.extend([jm, 0]); vals.extend([-v / 2, -v / 2])
        for j, v in per_row_d[i]:
            jp = layout.x_plus_index(j)
            rows.extend([jp, r_idx]); cols.extend([r_idx, jp]); vals.extend([v / 2, v / 2])
            if q.split_negative:
                jm = layout.x_minus_index(j)
                rows.extend([jm, r_idx]); cols.extend([r_idx, jm]); vals.extend([v / 2, v / 2])
        bd = float(spec.rhs.offset[i])
        if bd:
            rows.extend([0, r_idx]); cols.extend([r_idx, 0]); vals.extend([bd / 2, bd / 2])
        blocks.append(sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim)))
        tags.append(f"level[{i}]")

    # Variable domain, homogenized identically: box, non-negativity, r-box.
    for j in range(n):
        coeffs = [(layout.x_plus_index(j), 1.0)]
        if q.split_negative:
            coeffs.append((layout.x_minus_index(j), -1.0))
        if np.isfinite(q.upper[j]):
            blocks.append(_linear_block(dim, coeffs, -float(q.upper[j])))
            tags.append(f"upper[{j}]")
        if np.isfinite(q.lower[j]):
            blocks.append(_linear_block(dim, [(i, -c) for i, c in coeffs], float(q.lower[j])))
            tags.append(f"lower[{j}]")
        blocks.append(_linear_block(dim, [(layout.x_plus_index(j), -1.0)], 0.0))
        tags.append(f"nonneg_plus[{j}]")
        if q.split_negative:
            blocks.append(_linear_block(dim, [(layout.x_minus_index(j), -1.0)], 0.0))
            tags.append(f"nonneg_minus[{j}]")
    blocks.append(_linear_block(dim, [(r_idx, -1.0)], 0.0))
    tags.append("r_lower")
    blocks.append(_linear_block(dim, [(r_idx, 1.0)], -1.0))
    tags.append("r_upper")

    # Objectives: dose rows G (x+ - x-), then -r.
    objective_blocks: list[sp.csr_matrix] = []
    for gi in q.objectives:
        rows, cols, vals = [], [], []
        for j in np.nonzero(gi)[0]:
            v = float(gi[j])
            jp = layout.x_plus_index(int(j))
            rows.extend([0, jp]); cols.extend([jp, 0]); vals.extend([v / 2, v / 2])
            if q.split_negative:
                jm = layout.x_minus_index(int(j))
                rows.extend([0, jm]); cols.extend([jm, 0]); vals.extend([-v / 2, -v / 2])
        objective_blocks.append(sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim)))
    objective_blocks.append(
        sp.csr_matrix(([-0.5, -0.5], ([0, r_idx], [r_idx, 0])), shape=(dim, dim))
    )

    normalization = sp.csr_matrix(([1.0], ([0], [0])), shape=(dim, dim))

    extra: list[EntryConstraint] = []
    if opts.border_nonneg:
        for i in range(1, dim):
            extra.append(EntryConstraint(entries=((i, 0, -1.0),), rhs=0.0, tag=f"border_nonneg[{i}]"))
        for j in range(dim - 1):
            extra.append(EntryConstraint(entries=((dim - 1, j, -1.0),), rhs=0.0, tag=f"last_row_nonneg[{j}]"))
    if opts.diag_caps:
        cap_hi = np.concatenate([q.upper, q.upper, [1.0]] if q.split_negative else [q.upper, [1.0]])
        cap_lo = np.concatenate([q.lower, q.lower, [0.0]] if q.split_negative else [q.lower, [0.0]])
        for i in range(1, dim):
            hi, lo = cap_hi[i - 1], cap_lo[i - 1]
            if np.isfinite(hi) and np.isfinite(lo):
                extra.append(EntryConstraint(entries=((i, i, 1.0),), rhs=float(max(hi * hi, lo * lo)), tag=f"diag_cap[{i}]"))
    if opts.full_nonneg:
        for i in range(dim):
            for j in range(i, dim):
                extra.append(EntryConstraint(entries=((i, j, -1.0),), rhs=0.0, tag=f"nonneg[{i},{j}]"))

    return SdpInstance(
        layout=layout,
        constraint_blocks=tuple(blocks),
        constraint_tags=tuple(tags),
        objective_blocks=tuple(objective_blocks),
        normalization_block=normalization,
        extra_linear=tuple(extra),
        options=opts,
    )


@dataclass(frozen=True)
class ScalarSdp:
    """Single-objective instance: min <objective, Z> over the shared constraints."""

    dim: int
    objective: sp.csr_matrix
    ineq_blocks: tuple[sp.csr_matrix, ...]
    ineq_rhs: np.ndarray
    eq_blocks: tuple[sp.csr_matrix, ...]
    eq_rhs: np.ndarray
    layout: VariableLayout | None = None

    @property
    def num_constraints(self) -> int:
        return len(self.ineq_blocks) + len(self.eq_blocks)


def scalarize_sdp(s: SdpInstance, w) -> ScalarSdp:
    """Non-negative weighted sum of the objective blocks; constraints unchanged."""
    w = np.asarray(w, dtype=float).ravel()
    require(w.size == s.num_objectives, "w", f"expected {s.num_objectives} weights")
    require(bool(np.all(w >= 0)), "w", "weights must be non-negative")
    require(bool(np.any(w > 0)), "w", "weights must not all be zero")
    objective = sp.csr_matrix((s.dim, s.dim))
    for wi, B in zip(w, s.objective_blocks):
        if wi:
            objective = objective + wi * B
    ineq_blocks = list(s.constraint_blocks) + [e.block(s.dim) for e in s.extra_linear]
    ineq_rhs = np.concatenate([np.zeros(len(s.constraint_blocks)), np.array([e.rhs for e in s.extra_linear])]) \
        if (s.constraint_blocks or s.extra_linear) else np.zeros(0)
    return ScalarSdp(
        dim=s.dim,
        objective=objective.tocsr(),
        ineq_blocks=tuple(ineq_blocks),
        ineq_rhs=ineq_rhs,
        eq_blocks=(s.normalization_block,),
        eq_rhs=np.array([1.0]),
        layout=s.layout,
    )


@dataclass(frozen=True)
class SdpSolution:
    """Solved relaxation with the border interpreted as (x_plus, x_minus, r)."""

    Z: np.ndarray
    objective_values: np.ndarray
    x_plus: np.ndarray
    x_minus: np.ndarray
    r: float
    rank_estimate: int
    solver_status: str
    info: dict = field(default_factory=dict)

    @property
    def border(self) -> np.ndarray:
        return np.concatenate([self.x_plus, self.x_minus, [self.r]]) if self.x_minus.size else np.concatenate([self.x_plus, [self.r]])

    @property
    def quadratic_block(self) -> np.ndarray:
        return self.Z[1:, 1:]


def extract_border(Z: np.ndarray, layout: VariableLayout, rank_tol: float = 1e-6,
                   z00_tol: float = 1e-6):
    """Read (x_plus, x_minus, r) off the first row of Z, normalized by Z[0,0].

    Returns (x_plus, x_minus, r, rank_estimate); rank counts eigenvalues above
    ``rank_tol`` times the largest.  Raises if the homogenizing entry strayed
    from 1.
    """
    from .backend import rank_of

    z00 = float(Z[0, 0])
    if abs(z00 - 1.0) > z00_tol:
        raise ValidationError("Z", f"homogenizing entry {z00} deviates from 1 beyond {z00_tol}")
    border = np.asarray(Z[0, 1:], dtype=float) / z00
    x_plus, x_minus, r = layout.split_border(border)
    rank = rank_of(Z, rank_tol)
    return x_plus, x_minus, r, rank


def make_solution(sdp: SdpInstance, Z: np.ndarray, solver_status: str, rank_tol: float = 1e-6,
                  info: dict | None = None) -> SdpSolution:
    x_plus, x_minus, r, rank = extract_border(Z, sdp.layout, rank_tol=rank_tol, z00_tol=1e-4)
    return SdpSolution(
        Z=Z,
        objective_values=sdp.objective_values(Z),
        x_plus=x_plus,
        x_minus=x_minus,
        r=r,
        rank_estimate=rank,
        solver_status=solver_status,
        info=info or {},
    )


def lift_point(sdp: SdpInstance, x_plus, x_minus, r: float) -> np.ndarray:
    """Rank-1 lift z z^T of a feasible point, z = (1, x_plus, [x_minus,] r)."""
    parts = [np.ones(1), np.asarray(x_plus, float)]
    if sdp.layout.split_negative:
        parts.append(np.asarray(x_minus, float))
    parts.append(np.array([float(r)]))
    z = np.concatenate(parts)
    require(z.size == sdp.dim, "lift", f"point dimension {z.size} != lifted dim {sdp.dim}")
    return np.outer(z, z)
