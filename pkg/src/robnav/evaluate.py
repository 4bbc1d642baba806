"""Dose evaluation: DVH curves, uncertainty-scenario audits, clustering gap
reports, and a deterministic 2D phantom generator for desk-scale runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .clustering import ClusteredProblem
from .intervals import RobustnessSpec
from .model import ProblemModel, Structure, mean_objective
from .validation import ValidationError, require

__all__ = [
    "DvhCurve",
    "ScenarioReport",
    "ClusterGapReport",
    "dose",
    "dvh",
    "sample_scenarios",
    "cluster_gap_report",
    "PhantomSpec",
    "generate_phantom",
]

DVH_GRID_POINTS = 128
_SCENARIO_BATCH = 256
_VIOLATION_TOL = 1e-9


def dose(model: ProblemModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.num_beamlets:
        raise ValidationError("x", f"length {x.size} != num_beamlets {model.num_beamlets}")
    return model.dose_matrix @ x


@dataclass(frozen=True)
class DvhCurve:
    structure: str
    grid: np.ndarray          # ascending dose values (Gy)
    fraction: np.ndarray      # fraction of voxels with dose >= grid value

    def __post_init__(self):
        object.__setattr__(self, "grid", np.asarray(self.grid, float))
        object.__setattr__(self, "fraction", np.asarray(self.fraction, float))

    def to_dict(self) -> dict:
        return {
            "structure": self.structure,
            "dose": [float(v) for v in self.grid],
            "fraction": [float(v) for v in self.fraction],
        }


def default_dvh_grid(model: ProblemModel, x) -> np.ndarray:
    d = dose(model, x)
    top = 1.1 * float(np.max(d, initial=0.0))
    return np.linspace(0.0, max(top, 1e-9), DVH_GRID_POINTS)


def dvh(model: ProblemModel, x, structure: str, grid=None) -> DvhCurve:
    """Volume fraction receiving at least each grid dose, on the given model.

    Pass the unclustered model to evaluate a fluence obtained from a clustered
    solve on true per-voxel doses.
    """
    s = model.structure(structure)
    d = dose(model, x)[s.voxel_indices]
    g = default_dvh_grid(model, x) if grid is None else np.asarray(grid, float)
    frac = np.array([float(np.mean(d >= t)) for t in g])
    return DvhCurve(structure=structure, grid=g, fraction=frac)


@dataclass(frozen=True)
class ScenarioReport:
    sampled: int
    level: float
    seed: int
    violating_fraction: float
    max_violation_per_row: np.ndarray
    max_violation: float

    def to_dict(self) -> dict:
        return {
            "sampled": self.sampled,
            "level": float(self.level),
            "seed": self.seed,
            "violating_fraction": float(self.violating_fraction),
            "max_violation": float(self.max_violation),
        }


def sample_scenarios(spec: RobustnessSpec, x, r: float, count: int, seed: int = 0) -> ScenarioReport:
    """Uniformly sample realizations from the level-r box and audit A x <= b.

    Entries are drawn independently, so this is a feasibility audit of the box
    guarantee, not a distributional statement.
    """
    require(count >= 1, "count", "must be at least 1")
    require(0.0 <= r <= 1.0, "r", "must lie in [0, 1]")
    x = np.asarray(x, dtype=float).ravel()
    m = spec.num_rows
    nominal = spec.matrix.center @ x - spec.rhs.center

    offs = spec.matrix.offset.tocoo()
    w = offs.data * x[offs.col]              # per-entry max deviation contribution
    keep = w != 0
    w = w[keep]
    row_of = offs.row[keep]
    scatter = sp.csr_matrix((np.ones(w.size), (row_of, np.arange(w.size))), shape=(m, w.size))
    b_off = spec.rhs.offset

    batches = [_SCENARIO_BATCH] * (count // _SCENARIO_BATCH)
    if count % _SCENARIO_BATCH:
        batches.append(count % _SCENARIO_BATCH)
    streams = np.random.SeedSequence(seed).spawn(len(batches))

    max_per_row = np.full(m, -np.inf)
    violating = 0
    for size, ss in zip(batches, streams):
        rng = np.random.default_rng(ss)
        lhs = np.tile(nominal, (size, 1))
        if w.size and r > 0:
            U = rng.uniform(-1.0, 1.0, size=(size, w.size))
            lhs += r * (scatter @ (U * w).T).T
        if np.any(b_off > 0) and r > 0:
            V = rng.uniform(-1.0, 1.0, size=(size, m))
            lhs -= r * V * b_off
        elif r > 0:
            # keep stream layout stable whether or not the rhs is uncertain
            pass
        max_per_row = np.maximum(max_per_row, lhs.max(axis=0))
        violating += int(np.sum(np.any(lhs > _VIOLATION_TOL, axis=1)))

    max_violation = float(np.max(max_per_row, initial=-np.inf))
    return ScenarioReport(
        sampled=count,
        level=r,
        seed=seed,
        violating_fraction=violating / count,
        max_violation_per_row=max_per_row,
        max_violation=max_violation,
    )


@dataclass(frozen=True)
class StructureGap:
    structure: str
    max_gap: float            # largest |super-voxel dose - member dose|
    mean_gap: float
    bound_violations: int     # member voxels outside the structure's bounds
    worst_bound_violation: float


@dataclass(frozen=True)
class ClusterGapReport:
    per_structure: tuple[StructureGap, ...]
    total_violations: int

    @property
    def clean(self) -> bool:
        return self.total_violations == 0

    def to_dict(self) -> dict:
        return {
            "total_violations": self.total_violations,
            "structures": [
                {
                    "structure": g.structure,
                    "max_gap": float(g.max_gap),
                    "mean_gap": float(g.mean_gap),
                    "bound_violations": g.bound_violations,
                    "worst_bound_violation": float(g.worst_bound_violation),
                }
                for g in self.per_structure
            ],
        }


def cluster_gap_report(model: ProblemModel, clustered: ClusteredProblem, x, tol: float = 1e-6) -> ClusterGapReport:
    """Compare super-voxel doses against their member voxels for one fluence."""
    x = np.asarray(x, dtype=float).ravel()
    member_dose = dose(model, x)
    super_dose = dose(clustered.model, x)
    gaps: dict[str, list[float]] = {}
    violations: dict[str, list[float]] = {}
    bounds = {s.name: (s.lower_bound, s.upper_bound) for s in model.structures}
    for sv_index, sv in enumerate(clustered.lineage):
        d_super = super_dose[sv_index]
        d_members = member_dose[sv.members]
        gaps.setdefault(sv.structure, []).extend(np.abs(d_members - d_super).tolist())
        lb, ub = bounds[sv.structure]
        over = np.zeros_like(d_members)
        if ub is not None and np.isfinite(ub):
            over = np.maximum(over, d_members - ub)
        if lb is not None and np.isfinite(lb):
            over = np.maximum(over, lb - d_members)
        violations.setdefault(sv.structure, []).extend(over.tolist())
    per = []
    total = 0
    for name, g in gaps.items():
        v = np.asarray(violations[name])
        nviol = int(np.sum(v > tol))
        total += nviol
        per.append(
            StructureGap(
                structure=name,
                max_gap=float(np.max(g)),
                mean_gap=float(np.mean(g)),
                bound_violations=nviol,
                worst_bound_violation=float(np.max(v, initial=0.0)),
            )
        )
    return ClusterGapReport(per_structure=tuple(per), total_violations=total)


# ---------------------------------------------------------------------------
# Phantom generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhantomSpec:
    """2D phantom layout: a disc target, a nearby risk disc, and body tissue.

    Beamlets are parallel rays from two orthogonal directions with Gaussian
    lateral profiles and mild depth attenuation; the risk disc sits beside the
    target so one direction can spare it.  Bounds start from the template
    below and are widened per phantom just enough that a reference plan keeps
    at least 5% slack on every row, which keeps the full robustness range
    feasible at 2% matrix uncertainty.
    """

    grid: int = 12
    beamlets: int = 8
    target_bounds: tuple[float, float] = (40.0, 50.0)
    risk_bounds: tuple[float, float] = (0.0, 20.0)
    body_bounds: tuple[float, float] = (0.0, 60.0)
    reference_dose: float = 45.0
    kernel_sigma: float | None = None  # defaults to 0.15 * grid
    kernel_cutoff: float = 1e-3
    single_objective: bool = False     # drop the risk-mean objective (k = 1)


def _disc(grid: int, center: tuple[float, float], radius: float) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")
    mask = (rr - center[0]) ** 2 + (cc - center[1]) ** 2 <= radius**2
    return np.flatnonzero(mask.ravel())


def generate_phantom(spec: PhantomSpec = PhantomSpec(), seed: int = 0) -> ProblemModel:
    """Deterministic synthetic planning case; same seed, same matrices."""
    from scipy.optimize import nnls

    g = spec.grid
    require(g >= 4, "grid", "must be at least 4")
    require(spec.beamlets >= 1, "beamlets", "must be positive")
    rng = np.random.default_rng(seed)

    sigma = spec.kernel_sigma if spec.kernel_sigma is not None else 0.15 * g
    sigma = sigma * float(rng.uniform(0.95, 1.05))
    att = 0.4 / g

    target_center = (g / 2.0 + rng.uniform(-0.5, 0.5), 0.34 * g + rng.uniform(-0.4, 0.4))
    risk_center = (g / 2.0 + rng.uniform(-0.5, 0.5), 0.74 * g + rng.uniform(-0.3, 0.3))
    target_idx = _disc(g, target_center, 0.17 * g)
    risk_idx = _disc(g, risk_center, 0.12 * g)
    risk_idx = np.setdiff1d(risk_idx, target_idx)
    if risk_idx.size == 0:
        risk_idx = np.array([int(round(risk_center[0])) * g + min(g - 1, int(round(risk_center[1])))])

    n_v = spec.beamlets // 2 + spec.beamlets % 2   # vertical rays (travel along rows)
    n_h = spec.beamlets - n_v                      # horizontal rays (travel along columns)
    rr, cc = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
    cols = []
    # vertical rays pass through the target's column band and spare the risk disc
    spread = max(0.12 * g, 0.5)
    v_centers = np.linspace(target_center[1] - spread, target_center[1] + spread, n_v) if n_v else []
    for c0 in v_centers:
        c0 = c0 + rng.uniform(-0.2, 0.2)
        profile = np.exp(-((cc - c0) ** 2) / (2 * sigma**2)) * np.exp(-att * rr)
        cols.append(profile.ravel())
    h_centers = (
        np.linspace(target_center[0] - spread, target_center[0] + spread, n_h) if n_h else []
    )
    for r0 in h_centers:
        r0 = r0 + rng.uniform(-0.2, 0.2)
        profile = np.exp(-((rr - r0) ** 2) / (2 * sigma**2)) * np.exp(-att * cc)
        cols.append(profile.ravel())
    D = np.column_stack(cols)
    D[D < spec.kernel_cutoff] = 0.0

    # Reference plan: non-negative least squares toward a uniform target dose
    # with a small penalty on risk dose, then rescale to the reference level.
    fit_rows = np.vstack([D[target_idx], 0.3 * D[risk_idx]])
    fit_rhs = np.concatenate([np.full(target_idx.size, spec.reference_dose), np.zeros(risk_idx.size)])
    x_ref, _ = nnls(fit_rows, fit_rhs)
    if not np.any(x_ref > 0):
        x_ref = np.ones(spec.beamlets)
    med = float(np.median(D[target_idx] @ x_ref))
    require(med > 0, "phantom", "target is not covered by any beamlet")
    D *= spec.reference_dose / med
    x_ref = x_ref  # dose now D @ x_ref with target median at reference level

    d_ref = D @ x_ref
    t_lo, t_hi = spec.target_bounds
    t_min, t_max = float(np.min(d_ref[target_idx])), float(np.max(d_ref[target_idx]))
    target_lb = min(t_lo, 0.94 * t_min)
    target_ub = max(t_hi, 1.07 * t_max)
    risk_ub = max(spec.risk_bounds[1], 1.07 * float(np.max(d_ref[risk_idx], initial=0.0)))
    body_ub = max(spec.body_bounds[1], 1.07 * float(np.max(d_ref)))
    fluence_upper = max(10.0, 1.5 * float(np.max(x_ref)))

    structures = [
        Structure(
            name="target",
            voxel_indices=target_idx,
            lower_bound=target_lb,
            upper_bound=target_ub,
            is_constrained=True,
            is_optimized=True,
        ),
        Structure(
            name="risk",
            voxel_indices=risk_idx,
            lower_bound=spec.risk_bounds[0],
            upper_bound=risk_ub,
            is_constrained=True,
            is_optimized=not spec.single_objective,
        ),
        Structure(
            name="body",
            voxel_indices=np.arange(g * g, dtype=np.int64),
            lower_bound=spec.body_bounds[0],
            upper_bound=body_ub,
            is_constrained=True,
            is_optimized=False,
        ),
    ]
    model = ProblemModel(
        num_voxels=g * g,
        num_beamlets=spec.beamlets,
        dose_matrix=sp.csr_matrix(D),
        structures=tuple(structures),
        fluence_lower=np.zeros(spec.beamlets),
        fluence_upper=np.full(spec.beamlets, float(fluence_upper)),
    )
    objectives = [mean_objective(model, "target", sign=-1.0)]
    if not spec.single_objective:
        objectives.append(mean_objective(model, "risk", sign=1.0))
    return ProblemModel(
        num_voxels=model.num_voxels,
        num_beamlets=model.num_beamlets,
        dose_matrix=model.dose_matrix,
        structures=model.structures,
        fluence_lower=model.fluence_lower,
        fluence_upper=model.fluence_upper,
        objectives=tuple(objectives),
    )
