"""Conic solving layer: LPs via HiGHS, SDPs via the built-in interior-point
solver or an external process plugged in through ``ROBNAV_SDP_BACKEND``.

The external plug is process-level: the problem is written in the sparse text
format below, the executable is invoked as ``<exe> <problem> <result>``, and
the result file must be a JSON SolveReport with the full matrix ``Z``::

    ROBNAV-SDP 1
    dim <d>
    objective <nnz>        # then nnz lines "i j value" (upper triangle)
    ineq <rhs> <nnz>       # one section per inequality <A, Z> <= rhs
    eq <rhs> <nnz>         # one section per equality
"""
from __future__ import annotations

import json
import os
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .ipm import solve_conic
from .relaxation import ScalarSdp
from .validation import ValidationError, require

__all__ = [
    "LpInstance",
    "SolveReport",
    "solve_lp",
    "solve_sdp",
    "rank_of",
    "export_sdp_text",
    "parse_sdp_text",
]

BACKEND_ENV_VAR = "ROBNAV_SDP_BACKEND"


@dataclass(frozen=True)
class LpInstance:
    """min objectives[active] @ x  s.t.  a_ub x <= b_ub, lower <= x <= upper."""

    objectives: np.ndarray
    a_ub: sp.csr_matrix
    b_ub: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    active: int = 0

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.objectives, dtype=float))
        a = sp.csr_matrix(self.a_ub, dtype=float)
        object.__setattr__(self, "objectives", g)
        object.__setattr__(self, "a_ub", a)
        object.__setattr__(self, "b_ub", np.asarray(self.b_ub, dtype=float).ravel())
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float).ravel())
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float).ravel())
        require(a.shape[0] == self.b_ub.size, "b_ub", "length must equal row count")
        require(a.shape[1] == g.shape[1], "objectives", "column count mismatch")
        require(self.lower.size == a.shape[1] and self.upper.size == a.shape[1], "bounds", "length mismatch")
        if not np.all(np.isfinite(a.data)):
            raise ValidationError("a_ub", "entries must be finite")

    @property
    def num_vars(self) -> int:
        return self.a_ub.shape[1]

    def with_active(self, i: int) -> "LpInstance":
        return LpInstance(self.objectives, self.a_ub, self.b_ub, self.lower, self.upper, active=i)

    def with_objective(self, c) -> "LpInstance":
        return LpInstance(np.atleast_2d(np.asarray(c, float)), self.a_ub, self.b_ub, self.lower, self.upper, active=0)

    def with_extra_rows(self, rows, rhs) -> "LpInstance":
        extra = sp.csr_matrix(np.atleast_2d(np.asarray(rows, float)))
        return LpInstance(
            self.objectives,
            sp.vstack([self.a_ub, extra], format="csr"),
            np.concatenate([self.b_ub, np.atleast_1d(np.asarray(rhs, float))]),
            self.lower,
            self.upper,
            active=self.active,
        )


@dataclass
class SolveReport:
    status: str                       # optimal | infeasible | unbounded | numerical_failure
    x: np.ndarray | None
    objective: float
    max_residual: float
    iterations: int
    wall_time: float
    dual_objective: float | None = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def solve_lp(lp: LpInstance, tol: float = 1e-9) -> SolveReport:
    """Solve with HiGHS; the report re-checks feasibility on the returned point."""
    c = lp.objectives[lp.active]
    t0 = time.perf_counter()
    res = linprog(
        c,
        A_ub=lp.a_ub if lp.a_ub.shape[0] else None,
        b_ub=lp.b_ub if lp.b_ub.size else None,
        bounds=np.column_stack([lp.lower, lp.upper]),
        method="highs",
        options={"primal_feasibility_tolerance": min(tol, 1e-9), "dual_feasibility_tolerance": min(tol, 1e-9)},
    )
    wall = time.perf_counter() - t0
    status = {0: "optimal", 1: "numerical_failure", 2: "infeasible", 3: "unbounded", 4: "numerical_failure"}.get(res.status, "numerical_failure")
    x = np.asarray(res.x, float) if res.x is not None else None
    max_residual = 0.0
    dual_obj = None
    if x is not None and lp.b_ub.size:
        max_residual = float(np.max(lp.a_ub @ x - lp.b_ub, initial=0.0))
    if x is not None:
        max_residual = max(
            max_residual,
            float(np.max(lp.lower - x, initial=0.0)),
            float(np.max(x - lp.upper, initial=0.0)),
        )
    if status == "optimal":
        dual_obj = _lp_dual_objective(lp, res)
    return SolveReport(
        status=status,
        x=x,
        objective=float(res.fun) if res.fun is not None else np.nan,
        max_residual=max_residual,
        iterations=int(getattr(res, "nit", 0) or 0),
        wall_time=wall,
        dual_objective=dual_obj,
        message=str(res.message or ""),
    )


def _lp_dual_objective(lp: LpInstance, res) -> float | None:
    try:
        dual = float(lp.b_ub @ res.ineqlin.marginals) if lp.b_ub.size else 0.0
        lo_m = np.asarray(res.lower.marginals, float)
        up_m = np.asarray(res.upper.marginals, float)
        fin_lo = np.isfinite(lp.lower)
        fin_up = np.isfinite(lp.upper)
        dual += float(lp.lower[fin_lo] @ lo_m[fin_lo]) + float(lp.upper[fin_up] @ up_m[fin_up])
        return dual
    except (AttributeError, TypeError):
        return None


@dataclass
class SdpRawSolution:
    status: str
    Z: np.ndarray | None
    objective: float
    dual_objective: float
    gap: float
    max_residual: float
    iterations: int
    wall_time: float
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _dense_blocks(s: ScalarSdp) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    C = np.asarray(s.objective.todense() if sp.issparse(s.objective) else s.objective, float)
    ineq = [np.asarray(B.todense(), float) if sp.issparse(B) else np.asarray(B, float) for B in s.ineq_blocks]
    eq = [np.asarray(B.todense(), float) if sp.issparse(B) else np.asarray(B, float) for B in s.eq_blocks]
    return C, ineq, eq


def _residual_on(s: ScalarSdp, Z: np.ndarray) -> float:
    worst = 0.0
    for B, h in zip(s.ineq_blocks, s.ineq_rhs):
        worst = max(worst, float(np.sum(B.multiply(Z)) if sp.issparse(B) else np.sum(B * Z)) - float(h))
    for B, g in zip(s.eq_blocks, s.eq_rhs):
        worst = max(worst, abs(float(np.sum(B.multiply(Z)) if sp.issparse(B) else np.sum(B * Z)) - float(g)))
    lam_min = float(np.min(np.linalg.eigvalsh(0.5 * (Z + Z.T))))
    return max(worst, -lam_min, 0.0)


def _dedupe_inequalities(ineq: list[np.ndarray], rhs: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Drop exactly-repeated inequality rows (they only blur the dual)."""
    seen: set[bytes] = set()
    out_mats, out_rhs = [], []
    for A, h in zip(ineq, rhs):
        key = np.ascontiguousarray(A).tobytes() + np.float64(h).tobytes()
        if key in seen:
            continue
        seen.add(key)
        out_mats.append(A)
        out_rhs.append(float(h))
    return out_mats, np.asarray(out_rhs)


def solve_sdp(s: ScalarSdp, tol: float = 1e-8, max_iter: int = 200, backend: str = "auto") -> SdpRawSolution:
    """Solve a scalarized SDP.

    ``backend="auto"`` uses the executable named by ``ROBNAV_SDP_BACKEND`` when
    that variable is set, otherwise the built-in solver.
    """
    if backend == "auto":
        backend = "external" if os.environ.get(BACKEND_ENV_VAR) else "builtin"
    if backend == "external":
        return _solve_sdp_external(s, tol)
    require(backend == "builtin", "backend", f"unknown backend {backend!r}")

    C, ineq, eq = _dense_blocks(s)
    ineq, ineq_rhs = _dedupe_inequalities(ineq, s.ineq_rhs)
    res = solve_conic(C, ineq, ineq_rhs, eq, s.eq_rhs, tol=tol, max_iter=max_iter)
    max_residual = _residual_on(s, res.Z) if res.Z is not None else np.inf
    return SdpRawSolution(
        status=res.status,
        Z=res.Z,
        objective=res.primal_objective,
        dual_objective=res.dual_objective,
        gap=res.gap,
        max_residual=max_residual,
        iterations=res.iterations,
        wall_time=res.wall_time,
        message=res.message,
    )


def rank_of(Z: np.ndarray, rel_tol: float = 1e-6) -> int:
    """Count eigenvalues above rel_tol times the largest (0 for the zero matrix)."""
    Z = 0.5 * (np.asarray(Z, float) + np.asarray(Z, float).T)
    lam = np.linalg.eigvalsh(Z)
    lam_max = float(np.max(np.abs(lam), initial=0.0))
    if lam_max <= 0.0:
        return 0
    return int(np.sum(np.abs(lam) > rel_tol * lam_max))


# ---------------------------------------------------------------------------
# Sparse text interchange + process plug.
# ---------------------------------------------------------------------------

def _entry_lines(B) -> list[str]:
    B = sp.coo_matrix(B)
    lines = []
    for i, j, v in zip(B.row, B.col, B.data):
        if i <= j:
            lines.append(f"{int(i)} {int(j)} {float(v):.17g}")
    return lines


def export_sdp_text(s: ScalarSdp, path: str | Path) -> None:
    out = [f"ROBNAV-SDP 1", f"dim {s.dim}"]
    lines = _entry_lines(s.objective)
    out.append(f"objective {len(lines)}")
    out.extend(lines)
    for B, h in zip(s.ineq_blocks, s.ineq_rhs):
        lines = _entry_lines(B)
        out.append(f"ineq {float(h):.17g} {len(lines)}")
        out.extend(lines)
    for B, g in zip(s.eq_blocks, s.eq_rhs):
        lines = _entry_lines(B)
        out.append(f"eq {float(g):.17g} {len(lines)}")
        out.extend(lines)
    Path(path).write_text("\n".join(out) + "\n")


def parse_sdp_text(path: str | Path) -> ScalarSdp:
    lines = Path(path).read_text().splitlines()
    require(lines and lines[0].startswith("ROBNAV-SDP"), "file", "not a ROBNAV-SDP document")
    pos = 1
    dim = None
    objective = None
    ineq_blocks, ineq_rhs, eq_blocks, eq_rhs = [], [], [], []

    def read_block(nnz: int, start: int):
        rows, cols, vals = [], [], []
        for line in lines[start : start + nnz]:
            i, j, v = line.split()
            i, j, v = int(i), int(j), float(v)
            rows.append(i); cols.append(j); vals.append(v)
            if i != j:
                rows.append(j); cols.append(i); vals.append(v)
        return sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))

    while pos < len(lines):
        parts = lines[pos].split()
        if not parts:
            pos += 1
            continue
        head = parts[0]
        if head == "dim":
            dim = int(parts[1]); pos += 1
        elif head == "objective":
            nnz = int(parts[1])
            objective = read_block(nnz, pos + 1)
            pos += 1 + nnz
        elif head in ("ineq", "eq"):
            rhs, nnz = float(parts[1]), int(parts[2])
            block = read_block(nnz, pos + 1)
            if head == "ineq":
                ineq_blocks.append(block); ineq_rhs.append(rhs)
            else:
                eq_blocks.append(block); eq_rhs.append(rhs)
            pos += 1 + nnz
        else:
            raise ValidationError("file", f"unknown section {head!r}")
    return ScalarSdp(
        dim=dim,
        objective=objective if objective is not None else sp.csr_matrix((dim, dim)),
        ineq_blocks=tuple(ineq_blocks),
        ineq_rhs=np.asarray(ineq_rhs, float),
        eq_blocks=tuple(eq_blocks),
        eq_rhs=np.asarray(eq_rhs, float),
    )


def _solve_sdp_external(s: ScalarSdp, tol: float) -> SdpRawSolution:
    exe = os.environ.get(BACKEND_ENV_VAR)
    require(bool(exe), BACKEND_ENV_VAR, "must point to a solver executable for the external backend")
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory(prefix="robnav-sdp-") as tmp:
        problem = Path(tmp) / "problem.sdp"
        result = Path(tmp) / "result.json"
        export_sdp_text(s, problem)
        proc = subprocess.run([exe, str(problem), str(result)], capture_output=True, text=True)
        if proc.returncode != 0 or not result.exists():
            return SdpRawSolution(
                status="numerical_failure", Z=None, objective=np.nan, dual_objective=np.nan,
                gap=np.inf, max_residual=np.inf, iterations=0,
                wall_time=time.perf_counter() - t0,
                message=f"external backend failed: {proc.stderr[-500:]}",
            )
        doc = json.loads(result.read_text())
    Z = np.asarray(doc["Z"], float) if doc.get("Z") is not None else None
    status = str(doc.get("status", "numerical_failure"))
    max_residual = _residual_on(s, Z) if Z is not None else np.inf

    def _num(key):
        v = doc.get(key)
        return float(v) if v is not None else np.nan

    return SdpRawSolution(
        status=status,
        Z=Z,
        objective=_num("objective"),
        dual_objective=_num("dual_objective"),
        gap=_num("gap"),
        max_residual=max_residual,
        iterations=int(doc.get("iterations") or 0),
        wall_time=time.perf_counter() - t0,
        message=str(doc.get("message", "")),
    )
