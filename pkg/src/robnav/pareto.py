"""Scalarization, dominance, sandwiching approximation, and front databases.

The sandwiching driver brackets a convex Pareto-front between the convex hull
of solved points (inner) and the supporting half-spaces of the weighted-sum
solves (outer); it refines the facet with the largest normalized gap until
the bracket is tighter than delta everywhere.  Objectives are normalized to
[0, 1] via lexicographic anchor points before gaps are measured; the
convention is recorded in the database.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .backend import LpInstance, solve_lp, solve_sdp
from .relaxation import ScalarSdp, SdpInstance, scalarize_sdp
from .validation import ValidationError, require

__all__ = [
    "FrontError",
    "FrontSolve",
    "LpFrontProblem",
    "SdpFrontProblem",
    "ParetoPoint",
    "ParetoDb",
    "weighted_sum_solve",
    "epsilon_constraint_solve",
    "dominance_filter",
    "dominance_filter_points",
    "sandwich_front",
    "eps_efficiency",
    "iterative_r_front",
]

NORMALIZATION_CONVENTION = "anchor-normalized euclidean facet distance"


class FrontError(RuntimeError):
    pass


@dataclass
class FrontSolve:
    values: np.ndarray
    decision: dict
    status: str
    extra: dict = field(default_factory=dict)


class LpFrontProblem:
    """Multi-objective LP wrapper counting every scalarized solve."""

    def __init__(self, lp: LpInstance, decode=None, tol: float = 1e-9):
        require(lp.objectives.shape[0] >= 1, "objectives", "need at least one objective row")
        self.lp = lp
        self.tol = tol
        self.cap_slack = 1e-9
        self.solve_count = 0
        self._decode = decode or (lambda x: {"kind": "lp", "x": [float(v) for v in x]})

    @property
    def num_objectives(self) -> int:
        return self.lp.objectives.shape[0]

    def solve(self, weights, caps=()) -> FrontSolve:
        w = np.asarray(weights, float)
        g = self.lp.objectives
        inst = self.lp.with_objective(w @ g)
        for cap_w, ub in caps:
            inst = inst.with_extra_rows(np.asarray(cap_w, float) @ g, [float(ub)])
        self.solve_count += 1
        rep = solve_lp(inst, tol=self.tol)
        if rep.status == "unbounded":
            raise FrontError("unbounded objective detected in scalarized LP")
        if rep.status != "optimal":
            raise FrontError(f"scalarized LP failed: {rep.status} {rep.message}")
        values = g @ rep.x
        return FrontSolve(values=values, decision=self._decode(rep.x), status=rep.status)


class SdpFrontProblem:
    """Multi-objective SDP relaxation wrapper; keeps the solved matrix around."""

    def __init__(self, sdp: SdpInstance, tol: float = 1e-9, max_iter: int = 200, rank_tol: float = 1e-6):
        self.sdp = sdp
        self.tol = tol
        self.max_iter = max_iter
        self.rank_tol = rank_tol
        self.cap_slack = 1e-7
        # anchors use one blended solve instead of a capped re-solve: the cap
        # leaves the interior-point method without a strictly feasible set
        self.anchor_blend = 1e-4
        self.solve_count = 0

    @property
    def num_objectives(self) -> int:
        return self.sdp.num_objectives

    def solve(self, weights, caps=()) -> FrontSolve:
        scalar = scalarize_sdp(self.sdp, np.asarray(weights, float))
        if caps:
            blocks = list(scalar.ineq_blocks)
            rhs = list(scalar.ineq_rhs)
            for cap_w, ub in caps:
                cap_w = np.asarray(cap_w, float)
                block = sp.csr_matrix((self.sdp.dim, self.sdp.dim))
                for wi, B in zip(cap_w, self.sdp.objective_blocks):
                    if wi:
                        block = block + wi * B
                blocks.append(block.tocsr())
                rhs.append(float(ub))
            scalar = ScalarSdp(
                dim=scalar.dim,
                objective=scalar.objective,
                ineq_blocks=tuple(blocks),
                ineq_rhs=np.asarray(rhs, float),
                eq_blocks=scalar.eq_blocks,
                eq_rhs=scalar.eq_rhs,
                layout=scalar.layout,
            )
        self.solve_count += 1
        res = solve_sdp(scalar, tol=self.tol, max_iter=self.max_iter)
        near_optimal = False
        if res.status == "numerical_failure":
            # degenerate endgames can stall just above a tight tolerance; a
            # residual-clean iterate with a sub-1e-6 gap is ample for front
            # approximation at practical delta values
            if res.Z is not None and res.max_residual <= 1e-8 and res.gap <= 1e-6:
                near_optimal = True
            elif self.tol < 1e-7:
                res = solve_sdp(scalar, tol=min(1e-7, self.tol * 100), max_iter=self.max_iter)
        if res.status == "infeasible":
            raise FrontError("scalarized SDP infeasible")
        if res.status != "optimal" and not near_optimal:
            raise FrontError(f"scalarized SDP failed: {res.status} {res.message}")
        from .backend import rank_of
        from .relaxation import extract_border

        x_plus, x_minus, r, rank = extract_border(res.Z, self.sdp.layout, rank_tol=self.rank_tol, z00_tol=1e-4)
        values = self.sdp.objective_values(res.Z)
        decision = {
            "kind": "sdp_border",
            "x_plus": [float(v) for v in x_plus],
            "x_minus": [float(v) for v in x_minus],
            "r": float(r),
            "rank_estimate": int(rank),
        }
        if near_optimal:
            decision["near_optimal_gap"] = float(res.gap)
        return FrontSolve(values=values, decision=decision, status="optimal", extra={"Z": res.Z})


@dataclass
class ParetoPoint:
    objective_values: np.ndarray
    origin: str                       # weighted_sum | epsilon_constraint | projection | reoptimized | worst_case_lift
    params: dict
    decision: dict
    point_id: str = ""

    def to_dict(self) -> dict:
        return {
            "id": self.point_id,
            "objectives": [float(v) for v in self.objective_values],
            "origin": self.origin,
            "params": self.params,
            "decision": self.decision,
        }

    @staticmethod
    def from_dict(doc: dict) -> "ParetoPoint":
        return ParetoPoint(
            objective_values=np.asarray(doc["objectives"], float),
            origin=str(doc["origin"]),
            params=dict(doc.get("params", {})),
            decision=dict(doc.get("decision", {})),
            point_id=str(doc.get("id", "")),
        )


@dataclass
class ParetoDb:
    points: list[ParetoPoint]
    quality_gap: float
    problem_hash: str
    delta: float
    objective_labels: list[str]
    normalization: dict
    facets: list[dict]
    solve_count: int
    meta: dict = field(default_factory=dict)

    def assign_ids(self, prefix: str = "p") -> None:
        for i, p in enumerate(self.points):
            p.point_id = f"{prefix}{i:04d}"

    def get(self, point_id: str) -> ParetoPoint:
        for p in self.points:
            if p.point_id == point_id:
                return p
        raise KeyError(f"unknown point id {point_id!r}")

    def values_matrix(self) -> np.ndarray:
        return np.vstack([p.objective_values for p in self.points]) if self.points else np.zeros((0, len(self.objective_labels)))

    def to_dict(self) -> dict:
        return {
            "problem_hash": self.problem_hash,
            "delta": float(self.delta),
            "quality_gap": float(self.quality_gap),
            "objective_labels": list(self.objective_labels),
            "normalization": self.normalization,
            "points": [p.to_dict() for p in self.points],
            "facets": self.facets,
            "solve_count": self.solve_count,
            "meta": self.meta,
        }

    @staticmethod
    def from_dict(doc: dict) -> "ParetoDb":
        return ParetoDb(
            points=[ParetoPoint.from_dict(p) for p in doc.get("points", [])],
            quality_gap=float(doc["quality_gap"]),
            problem_hash=str(doc.get("problem_hash", "")),
            delta=float(doc["delta"]),
            objective_labels=list(doc.get("objective_labels", [])),
            normalization=dict(doc.get("normalization", {})),
            facets=list(doc.get("facets", [])),
            solve_count=int(doc.get("solve_count", 0)),
            meta=dict(doc.get("meta", {})),
        )


# ---------------------------------------------------------------------------
# Scalarization operations
# ---------------------------------------------------------------------------

def _unit(i: int, k: int) -> np.ndarray:
    w = np.zeros(k)
    w[i] = 1.0
    return w


def weighted_sum_solve(problem, w, cleanup: str = "auto") -> ParetoPoint:
    """Solve min w.f; with zero weight components a lexicographic second solve
    pulls the answer onto a strictly better representative when one exists."""
    w = np.asarray(w, float)
    k = problem.num_objectives
    require(w.size == k, "w", f"expected {k} weights")
    require(bool(np.all(w >= 0)) and bool(np.any(w > 0)), "w", "weights must be non-negative, not all zero")
    needs_cleanup = cleanup == "always" or (cleanup == "auto" and bool(np.any(w <= 1e-12)))
    blend = getattr(problem, "anchor_blend", 0.0)
    if needs_cleanup and blend:
        chosen = problem.solve(w + blend * float(np.sum(w)) * (w <= 1e-12))
    else:
        s1 = problem.solve(w)
        chosen = s1
        if needs_cleanup:
            v = float(w @ s1.values)
            secondary = np.ones(k)
            cap = v + getattr(problem, "cap_slack", 1e-9) * (1.0 + abs(v))
            try:
                chosen = problem.solve(secondary, caps=[(w, cap)])
            except FrontError:
                chosen = s1
    return ParetoPoint(
        objective_values=chosen.values,
        origin="weighted_sum",
        params={"weights": [float(v) for v in w]},
        decision=chosen.decision,
    )


def epsilon_constraint_solve(problem, j: int, eps) -> ParetoPoint:
    """Minimize objective j with caps f_i <= eps_i on every other objective."""
    k = problem.num_objectives
    require(0 <= j < k, "j", f"objective index out of range [0, {k})")
    eps = np.asarray(eps, float)
    require(eps.size == k, "eps", f"expected {k} entries (entry j ignored)")
    for i in range(k):
        if i != j and not np.isfinite(eps[i]):
            raise ValidationError("eps", f"bound for objective {i} must be finite")
    caps = [(_unit(i, k), float(eps[i])) for i in range(k) if i != j]
    try:
        s = problem.solve(_unit(j, k), caps=caps)
    except FrontError as exc:
        if "infeasible" in str(exc).lower():
            raise FrontError(f"epsilon bounds {eps.tolist()} are infeasible") from exc
        raise
    return ParetoPoint(
        objective_values=s.values,
        origin="epsilon_constraint",
        params={"objective": j, "eps": [float(v) for v in eps]},
        decision=s.decision,
    )


def dominance_filter(values: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Indices of the maximal nondominated subset, in stable order.

    Duplicates collapse onto their first occurrence.
    """
    vals = np.atleast_2d(np.asarray(values, float))
    n = vals.shape[0]
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        if not keep[i]:
            continue
        for j in range(n):
            if i == j or not keep[i]:
                continue
            if not keep[j] and j > i:
                continue
            if j < i and not keep[j]:
                continue
            vi, vj = vals[i], vals[j]
            if np.all(vj <= vi + tol) and np.any(vj < vi - tol):
                keep[i] = False
            elif np.array_equal(vi, vj) and j < i:
                keep[i] = False
    return np.flatnonzero(keep)


def dominance_filter_points(points: list[ParetoPoint], tol: float = 0.0) -> list[ParetoPoint]:
    if not points:
        return []
    idx = dominance_filter(np.vstack([p.objective_values for p in points]), tol=tol)
    return [points[i] for i in idx]


def eps_efficiency(point_values, reference_values, scale=None) -> float:
    """Distance-to-front measure: smallest sup-norm radius (per-axis scaled)
    within which a reference front point matches the candidate."""
    p = np.asarray(point_values, float).ravel()
    ref = np.atleast_2d(np.asarray(reference_values, float))
    require(ref.size > 0, "reference_front", "must be non-empty")
    require(ref.shape[1] == p.size, "reference_front", "objective dimension mismatch")
    s = np.ones_like(p) if scale is None else np.asarray(scale, float).ravel()
    diff = np.abs(ref - p) / s
    return max(0.0, float(np.min(np.max(diff, axis=1))))


# ---------------------------------------------------------------------------
# Sandwiching
# ---------------------------------------------------------------------------

def _anchor(problem, i: int, cache: dict) -> FrontSolve:
    k = problem.num_objectives
    if k == 1:
        return _cached_solve(problem, _unit(i, k), cache)
    blend = getattr(problem, "anchor_blend", 0.0)
    if blend:
        w = _unit(i, k) + blend * (1.0 - _unit(i, k))
        return _cached_solve(problem, w, cache)
    s1 = _cached_solve(problem, _unit(i, k), cache)
    v = float(s1.values[i])
    secondary = np.ones(k)
    secondary[i] = 0.0
    cap = v + getattr(problem, "cap_slack", 1e-9) * (1.0 + abs(v))
    try:
        return problem.solve(secondary, caps=[(_unit(i, k), cap)])
    except FrontError:
        return s1


def _weight_key(w: np.ndarray) -> tuple:
    w = np.asarray(w, float)
    s = float(np.sum(np.abs(w)))
    return tuple(np.round(w / s, 12)) if s else tuple(w)


def _cached_solve(problem, w, cache: dict) -> FrontSolve:
    key = _weight_key(w)
    if key not in cache:
        cache[key] = problem.solve(np.asarray(w, float))
    return cache[key]


@dataclass
class _Tracked:
    values: np.ndarray
    normalized: np.ndarray
    decision: dict
    origin: str
    params: dict


class _Normalizer:
    def __init__(self, anchor_values: list[np.ndarray]):
        a = np.vstack(anchor_values)
        self.ideal = a.min(axis=0)
        rng = a.max(axis=0) - self.ideal
        self.degenerate = rng <= 1e-9 * (1.0 + np.abs(self.ideal))
        rng = np.where(self.degenerate, 1.0, rng)
        self.range = rng

    def norm(self, v: np.ndarray) -> np.ndarray:
        return (v - self.ideal) / self.range

    def weights_to_raw(self, w_norm: np.ndarray) -> np.ndarray:
        return w_norm / self.range

    def to_dict(self) -> dict:
        return {
            "ideal": [float(v) for v in self.ideal],
            "range": [float(v) for v in self.range],
            "convention": NORMALIZATION_CONVENTION,
        }


def _add_tracked(points: list[_Tracked], cand: _Tracked, tol: float = 1e-11) -> bool:
    for p in points:
        if np.all(np.abs(p.normalized - cand.normalized) <= tol):
            return False
    points.append(cand)
    return True


def sandwich_front(problem, delta: float, seeds=(), max_solves: int = 400) -> ParetoDb:
    """Approximate the front of a convex 1-3 objective problem to gap <= delta.

    ``seeds`` are pre-solved points (ParetoPoint) merged into the inner
    approximation without extra solves.  Every stored point originates from a
    weighted-sum (or seeded) solve; the solve count is recorded.
    """
    require(delta > 0, "delta", "must be positive")
    k = problem.num_objectives
    require(1 <= k <= 3, "objectives", "sandwiching supports 1-3 objectives")
    cache: dict = {}
    solved_before = getattr(problem, "solve_count", 0)

    anchors = [_anchor(problem, i, cache) for i in range(k)]
    normalizer = _Normalizer([a.values for a in anchors])

    tracked: list[_Tracked] = []
    for i, a in enumerate(anchors):
        _add_tracked(
            tracked,
            _Tracked(a.values, normalizer.norm(a.values), a.decision, "weighted_sum", {"weights": _unit(i, k).tolist()}),
        )
    for seed in seeds:
        v = np.asarray(seed.objective_values, float)
        _add_tracked(tracked, _Tracked(v, normalizer.norm(v), seed.decision, seed.origin, seed.params))

    facets: list[dict] = []
    gap_achieved = 0.0

    def solve_normal(w_norm: np.ndarray) -> tuple[FrontSolve, float]:
        w_raw = normalizer.weights_to_raw(w_norm)
        s = _cached_solve(problem, w_raw, cache)
        return s, float(w_norm @ normalizer.norm(s.values))

    if k == 1:
        gap_achieved = 0.0
        facets = []
    else:
        active_dims = np.flatnonzero(~normalizer.degenerate)
        if active_dims.size <= 1:
            gap_achieved = 0.0
        elif active_dims.size == 2 or k == 2:
            gap_achieved, facets = _refine_2d(problem, tracked, normalizer, active_dims[:2] if k == 3 else np.array([0, 1]),
                                              delta, cache, max_solves, solve_normal)
        else:
            gap_achieved, facets = _refine_3d(problem, tracked, normalizer, delta, cache, max_solves, solve_normal)

    points = [
        ParetoPoint(objective_values=t.values, origin=t.origin, params=t.params, decision=t.decision)
        for t in tracked
    ]
    points = dominance_filter_points(points)
    db = ParetoDb(
        points=points,
        quality_gap=gap_achieved,
        problem_hash="",
        delta=delta,
        objective_labels=[f"f{i}" for i in range(k)],
        normalization=normalizer.to_dict(),
        facets=facets,
        solve_count=getattr(problem, "solve_count", 0) - solved_before,
        meta={"max_solves": max_solves},
    )
    db.assign_ids()
    return db


def _refine_2d(problem, tracked, normalizer, dims, delta, cache, max_solves, solve_normal):
    """Segment subdivision on the two active objective coordinates."""
    k = tracked[0].values.size
    closed: dict[tuple, float] = {}
    solves_left = [max_solves]

    def facet_weight(pn, qn) -> np.ndarray | None:
        d1, d2 = dims
        if qn[d1] - pn[d1] <= 1e-12 or pn[d2] - qn[d2] <= 1e-12:
            return None
        w = np.zeros(k)
        w[d1] = pn[d2] - qn[d2]
        w[d2] = qn[d1] - pn[d1]
        return w

    while True:
        pts = sorted(tracked, key=lambda t: (t.normalized[dims[0]], -t.normalized[dims[1]]))
        # keep only the nondominated profile along the two active dims
        profile: list[_Tracked] = []
        best = np.inf
        for t in pts:
            if t.normalized[dims[1]] < best - 1e-12:
                profile.append(t)
                best = t.normalized[dims[1]]
        if len(profile) < 2:
            return 0.0, []
        pending = None
        worst_gap = 0.0
        facet_list = []
        for p, q in itertools.pairwise(profile):
            w = facet_weight(p.normalized, q.normalized)
            if w is None:
                continue
            key = (_weight_key(w), round(float(w @ p.normalized), 12))
            facet_list.append({"vertices": [p.normalized[dims].tolist(), q.normalized[dims].tolist()],
                               "weights": w.tolist(), "gap": closed.get(key)})
            if key in closed:
                worst_gap = max(worst_gap, closed[key])
            elif pending is None:
                pending = (p, q, w, key)
        if pending is None:
            return worst_gap, facet_list
        if solves_left[0] <= 0:
            return max(worst_gap, delta * 2), facet_list
        p, q, w, key = pending
        solves_left[0] -= 1
        s, support = solve_normal(w)
        chord = float(w @ p.normalized)
        gap = max(0.0, (chord - support) / float(np.linalg.norm(w)))
        if gap <= delta:
            closed[key] = gap
            continue
        cand = _Tracked(s.values, normalizer.norm(s.values), s.decision, "weighted_sum",
                        {"weights": normalizer.weights_to_raw(w).tolist()})
        if not _add_tracked(tracked, cand):
            closed[key] = gap        # supporting point already known; the chord is the bracket
            continue


def _refine_3d(problem, tracked, normalizer, delta, cache, max_solves, solve_normal):
    from scipy.spatial import ConvexHull, QhullError

    solves_left = max_solves
    closed: dict[tuple, float] = {}

    def lower_facets(pts: np.ndarray):
        corner = np.full(3, 2.0 + float(pts.max()))
        arr = np.vstack([pts, corner])
        try:
            hull = ConvexHull(arr)
        except QhullError:
            try:
                hull = ConvexHull(arr, qhull_options="QJ")
            except QhullError:
                return []
        out = []
        for eq in hull.equations:
            n, off = eq[:3], eq[3]
            if np.all(n <= 1e-9) and np.linalg.norm(n) > 1e-9:
                w = -n
                out.append((w, -off))   # w @ x = -off on the facet
        return out

    while True:
        pts = np.vstack([t.normalized for t in tracked])
        facets = lower_facets(pts)
        worst_gap = 0.0
        pending = None
        facet_list = []
        for w, chord in facets:
            key = _weight_key(w)
            facet_list.append({"weights": w.tolist(), "chord": float(chord), "gap": closed.get(key)})
            if key in closed:
                worst_gap = max(worst_gap, closed[key])
            elif pending is None:
                pending = (w, chord, key)
        if pending is None:
            return worst_gap, facet_list
        if solves_left <= 0:
            return max(worst_gap, delta * 2), facet_list
        w, chord, key = pending
        solves_left -= 1
        s, support = solve_normal(w)
        gap = max(0.0, (chord - support) / float(np.linalg.norm(w)))
        cand = _Tracked(s.values, normalizer.norm(s.values), s.decision, "weighted_sum",
                        {"weights": normalizer.weights_to_raw(w).tolist()})
        if gap <= delta or not _add_tracked(tracked, cand):
            closed[key] = gap


# ---------------------------------------------------------------------------
# Iterative robustness-level baseline
# ---------------------------------------------------------------------------

def robustness_levels(step: float) -> list[float]:
    require(0 < step <= 1, "step", "must lie in (0, 1]")
    levels = []
    i = 0
    while i * step < 1.0 - 1e-12:
        levels.append(round(i * step, 12))
        i += 1
    levels.append(1.0)
    return levels


def iterative_r_front(q, step: float, delta: float, tol: float = 1e-9, max_solves_per_level: int = 200) -> ParetoDb:
    """Baseline: sweep fixed robustness levels, sandwich each level's LP front,
    lift to (dose objectives, -r), and merge nondominated points."""
    from .intervals import lp_at_level

    levels = robustness_levels(step)
    k_dose = q.objectives.shape[0]
    all_points: list[ParetoPoint] = []
    total_solves = 0
    n = q.num_vars

    for r in levels:
        lp = lp_at_level(q, r)

        def decode(x, r=r):
            if q.split_negative:
                xp, xm = x[:n], x[n:]
            else:
                xp, xm = x, np.zeros(n)
            return {
                "kind": "qcqp",
                "x_plus": [float(v) for v in xp],
                "x_minus": [float(v) for v in xm],
                "r": float(r),
            }

        problem = LpFrontProblem(lp, decode=decode, tol=tol)
        if k_dose == 1:
            point = weighted_sum_solve(problem, [1.0], cleanup="never")
            level_points = [point]
            level_gap = 0.0
        else:
            db_level = sandwich_front(problem, delta, max_solves=max_solves_per_level)
            level_points = db_level.points
            level_gap = db_level.quality_gap
        total_solves += problem.solve_count
        for p in level_points:
            lifted = np.append(p.objective_values, -r)
            all_points.append(
                ParetoPoint(
                    objective_values=lifted,
                    origin=p.origin,
                    params={**p.params, "level": r, "level_gap": level_gap},
                    decision=p.decision,
                )
            )

    merged = dominance_filter_points(all_points)
    db = ParetoDb(
        points=merged,
        quality_gap=delta,
        problem_hash="",
        delta=delta,
        objective_labels=[f"f{i}" for i in range(k_dose)] + ["-r"],
        normalization={},
        facets=[],
        solve_count=total_solves,
        meta={"levels": levels, "step": step, "points_before_filter": len(all_points)},
    )
    db.assign_ids(prefix="q")
    return db
