"""Nominal multi-criteria fluence planning model.

Holds the dose-influence matrix, named voxel structures with dose bounds,
linear objectives, and the stacked one-sided inequality form used by the
robust machinery downstream.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .validation import ValidationError, as_float_vector, require

__all__ = [
    "Structure",
    "LinearObjective",
    "ProblemModel",
    "RowOrigin",
    "NominalLp",
    "load_problem",
    "save_problem",
    "assemble_nominal",
    "mean_objective",
]


@dataclass(frozen=True)
class Structure:
    """Named voxel set with dose bounds (Gy).

    ``mean_lower``/``mean_upper`` bound the structure-mean dose with a single
    aggregated constraint row; this is experimental and off (None) by default.
    """

    name: str
    voxel_indices: np.ndarray          # int array, sorted, unique
    lower_bound: float | None = None   # Gy, None = unbounded below
    upper_bound: float | None = None
    is_constrained: bool = False
    is_optimized: bool = False
    mean_lower: float | None = None    # experimental structure-mean bounds
    mean_upper: float | None = None

    def __post_init__(self):
        idx = np.unique(np.asarray(self.voxel_indices, dtype=np.int64))
        object.__setattr__(self, "voxel_indices", idx)
        require(idx.size > 0, f"structures[{self.name}].voxels", "must be non-empty")
        if self.lower_bound is not None and self.upper_bound is not None:
            require(
                self.lower_bound <= self.upper_bound,
                f"structures[{self.name}]",
                f"lower bound {self.lower_bound} exceeds upper bound {self.upper_bound}",
            )

    @property
    def size(self) -> int:
        return int(self.voxel_indices.size)


@dataclass(frozen=True)
class LinearObjective:
    """One linear objective row; minimization, maximization via negated coefficients."""

    name: str
    coefficients: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coefficients", as_float_vector(self.coefficients, f"objectives[{self.name}]"))


@dataclass(frozen=True)
class ProblemModel:
    """Validated planning problem: doses are ``dose_matrix @ fluence``."""

    num_voxels: int
    num_beamlets: int
    dose_matrix: sp.csr_matrix
    structures: tuple[Structure, ...]
    fluence_lower: np.ndarray
    fluence_upper: np.ndarray
    objectives: tuple[LinearObjective, ...] = ()

    def __post_init__(self):
        require(self.num_voxels > 0, "num_voxels", "must be positive")
        require(self.num_beamlets > 0, "num_beamlets", "must be positive")
        m = sp.csr_matrix(self.dose_matrix, dtype=float)
        require(
            m.shape == (self.num_voxels, self.num_beamlets),
            "dose_matrix",
            f"shape {m.shape} does not match ({self.num_voxels}, {self.num_beamlets})",
        )
        if m.nnz and m.data.min() < 0:
            raise ValidationError("dose_matrix", "entries must be non-negative")
        object.__setattr__(self, "dose_matrix", m)
        lo = as_float_vector(self.fluence_lower, "fluence_bounds.lower", self.num_beamlets)
        hi = as_float_vector(self.fluence_upper, "fluence_bounds.upper", self.num_beamlets)
        require(bool(np.all(lo <= hi)), "fluence_bounds", "lower must not exceed upper componentwise")
        object.__setattr__(self, "fluence_lower", lo)
        object.__setattr__(self, "fluence_upper", hi)
        object.__setattr__(self, "structures", tuple(self.structures))
        object.__setattr__(self, "objectives", tuple(self.objectives))
        require(len(self.structures) > 0, "structures", "must not be empty")
        for s in self.structures:
            if s.voxel_indices[0] < 0 or s.voxel_indices[-1] >= self.num_voxels:
                raise ValidationError(
                    f"structures[{s.name}].voxels",
                    f"indices must lie in [0, {self.num_voxels})",
                )
        require(
            any(s.is_constrained or s.is_optimized for s in self.structures),
            "structures",
            "at least one structure must be constrained or optimized",
        )
        for o in self.objectives:
            require(
                o.coefficients.size == self.num_beamlets,
                f"objectives[{o.name}]",
                f"coefficient length {o.coefficients.size} != num_beamlets {self.num_beamlets}",
            )

    def structure(self, name: str) -> Structure:
        for s in self.structures:
            if s.name == name:
                return s
        raise KeyError(f"unknown structure {name!r}")

    def structure_rows(self, name: str) -> sp.csr_matrix:
        """Dose-matrix sub-block for one structure (rows in voxel-index order)."""
        return self.dose_matrix[self.structure(name).voxel_indices, :]

    def objective_matrix(self) -> np.ndarray:
        return np.vstack([o.coefficients for o in self.objectives]) if self.objectives else np.zeros((0, self.num_beamlets))


@dataclass(frozen=True)
class RowOrigin:
    """Provenance of one stacked constraint row."""

    structure: str
    voxel: int          # voxel (or super-voxel) index inside the structure's set; -1 for mean rows
    kind: str           # "ub" | "lb" | "mean_ub" | "mean_lb"


@dataclass(frozen=True)
class NominalLp:
    """One-sided form: minimize objective rows of G subject to A x <= b, l <= x <= u."""

    constraint_matrix: sp.csr_matrix
    rhs: np.ndarray
    objectives: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    row_origin: tuple[RowOrigin, ...]

    def __post_init__(self):
        a = sp.csr_matrix(self.constraint_matrix, dtype=float)
        object.__setattr__(self, "constraint_matrix", a)
        object.__setattr__(self, "rhs", np.asarray(self.rhs, dtype=float))
        object.__setattr__(self, "objectives", np.atleast_2d(np.asarray(self.objectives, dtype=float)))
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "row_origin", tuple(self.row_origin))
        require(a.shape[0] == self.rhs.size, "rhs", "length must equal constraint row count")
        require(len(self.row_origin) == a.shape[0], "row_origin", "one entry per constraint row")

    @property
    def num_rows(self) -> int:
        return self.constraint_matrix.shape[0]

    @property
    def num_vars(self) -> int:
        return self.constraint_matrix.shape[1]


def mean_objective(model: ProblemModel, structure_name: str, sign: float = 1.0) -> LinearObjective:
    """Mean-dose objective over one structure; sign=-1 encodes maximization."""
    try:
        s = model.structure(structure_name)
    except KeyError as exc:
        raise ValidationError(f"objectives.structure", str(exc)) from exc
    rows = model.dose_matrix[s.voxel_indices, :]
    coeff = sign * np.asarray(rows.mean(axis=0)).ravel()
    prefix = "-" if sign < 0 else ""
    return LinearObjective(name=f"{prefix}mean({structure_name})", coefficients=coeff)


def assemble_nominal(model: ProblemModel, omit_trivial_lower: bool = False) -> NominalLp:
    """Stack per-voxel dose bounds into A x <= b.

    Each constrained voxel contributes an upper row ``D_i x <= ub`` and a lower
    row ``-D_i x <= -lb``; rows with absent (None/infinite) bounds are skipped,
    as are lower rows with lb <= 0 when ``omit_trivial_lower`` is set.
    Structures may overlap; shared voxels contribute rows for every structure.
    """
    blocks: list[sp.spmatrix] = []
    rhs: list[float] = []
    origin: list[RowOrigin] = []
    for s in model.structures:
        if not s.is_constrained:
            continue
        rows = model.dose_matrix[s.voxel_indices, :]
        if s.upper_bound is not None and np.isfinite(s.upper_bound):
            blocks.append(rows)
            rhs.extend([float(s.upper_bound)] * s.size)
            origin.extend(RowOrigin(s.name, int(v), "ub") for v in s.voxel_indices)
        if s.lower_bound is not None and np.isfinite(s.lower_bound):
            if not (omit_trivial_lower and s.lower_bound <= 0):
                blocks.append(-rows)
                rhs.extend([-float(s.lower_bound)] * s.size)
                origin.extend(RowOrigin(s.name, int(v), "lb") for v in s.voxel_indices)
        mean_row = None
        if s.mean_upper is not None or s.mean_lower is not None:
            mean_row = sp.csr_matrix(rows.mean(axis=0))
        if s.mean_upper is not None and np.isfinite(s.mean_upper):
            blocks.append(mean_row)
            rhs.append(float(s.mean_upper))
            origin.append(RowOrigin(s.name, -1, "mean_ub"))
        if s.mean_lower is not None and np.isfinite(s.mean_lower) and not (omit_trivial_lower and s.mean_lower <= 0):
            blocks.append(-mean_row)
            rhs.append(-float(s.mean_lower))
            origin.append(RowOrigin(s.name, -1, "mean_lb"))
    if blocks:
        a = sp.vstack(blocks, format="csr")
    else:
        a = sp.csr_matrix((0, model.num_beamlets))
    return NominalLp(
        constraint_matrix=a,
        rhs=np.asarray(rhs, dtype=float),
        objectives=model.objective_matrix(),
        lower=model.fluence_lower.copy(),
        upper=model.fluence_upper.copy(),
        row_origin=tuple(origin),
    )


# --------------------------------------------------------------------------
# File format: one JSON document, optionally with a binary triplet sidecar.
# --------------------------------------------------------------------------

_TRIPLET_RECORD = struct.Struct("<QQd")


def _read_triplets_binary(path: Path) -> list[tuple[int, int, float]]:
    data = path.read_bytes()
    if len(data) % _TRIPLET_RECORD.size:
        raise ValidationError("dose_matrix.path", f"{path} is not a whole number of (u64,u64,f64) records")
    return [_TRIPLET_RECORD.unpack_from(data, off) for off in range(0, len(data), _TRIPLET_RECORD.size)]


def _write_triplets_binary(path: Path, mat: sp.csr_matrix) -> None:
    coo = mat.tocoo()
    with open(path, "wb") as fh:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(_TRIPLET_RECORD.pack(int(i), int(j), float(v)))


def _dose_matrix_from_json(doc: dict, base_dir: Path) -> sp.csr_matrix:
    require(isinstance(doc, dict), "dose_matrix", "must be an object")
    fmt = doc.get("format")
    require(fmt == "triplets", "dose_matrix.format", f"unsupported format {fmt!r}")
    rows, cols = int(doc["rows"]), int(doc["cols"])
    if "path" in doc:
        entries = _read_triplets_binary(base_dir / doc["path"])
    else:
        entries = doc.get("entries", [])
    if entries:
        ii, jj, vv = zip(*[(int(e[0]), int(e[1]), float(e[2])) for e in entries])
        if min(ii) < 0 or max(ii) >= rows or min(jj) < 0 or max(jj) >= cols:
            raise ValidationError("dose_matrix.entries", "triplet index out of range")
        mat = sp.coo_matrix((vv, (ii, jj)), shape=(rows, cols)).tocsr()
    else:
        mat = sp.csr_matrix((rows, cols))
    return mat


def _opt_float(doc: dict, key: str) -> float | None:
    v = doc.get(key)
    return None if v is None else float(v)


def problem_from_dict(doc: dict, base_dir: Path | str = ".") -> ProblemModel:
    base_dir = Path(base_dir)
    try:
        num_voxels = int(doc["num_voxels"])
        num_beamlets = int(doc["num_beamlets"])
    except KeyError as exc:
        raise ValidationError(str(exc.args[0]), "missing required field") from exc
    structures = []
    for sdoc in doc.get("structures", []):
        structures.append(
            Structure(
                name=str(sdoc["name"]),
                voxel_indices=np.asarray(sdoc["voxels"], dtype=np.int64),
                lower_bound=_opt_float(sdoc, "lb"),
                upper_bound=_opt_float(sdoc, "ub"),
                is_constrained=bool(sdoc.get("constrained", False)),
                is_optimized=bool(sdoc.get("optimized", False)),
                mean_lower=_opt_float(sdoc, "mean_lb"),
                mean_upper=_opt_float(sdoc, "mean_ub"),
            )
        )
    fb = doc.get("fluence_bounds", {})
    lo, hi = fb.get("lower", 0.0), fb.get("upper")
    require(hi is not None, "fluence_bounds.upper", "is required")
    lower = np.full(num_beamlets, float(lo)) if np.isscalar(lo) else np.asarray(lo, dtype=float)
    upper = np.full(num_beamlets, float(hi)) if np.isscalar(hi) else np.asarray(hi, dtype=float)
    model = ProblemModel(
        num_voxels=num_voxels,
        num_beamlets=num_beamlets,
        dose_matrix=_dose_matrix_from_json(doc.get("dose_matrix", {}), base_dir),
        structures=tuple(structures),
        fluence_lower=lower,
        fluence_upper=upper,
    )
    objectives = []
    for odoc in doc.get("objectives", []):
        kind = odoc.get("kind", "mean")
        if kind == "mean":
            obj = mean_objective(model, str(odoc["structure"]), float(odoc.get("sign", 1.0)))
            if "name" in odoc:
                obj = LinearObjective(name=str(odoc["name"]), coefficients=obj.coefficients)
        elif kind == "explicit":
            obj = LinearObjective(name=str(odoc.get("name", "objective")), coefficients=np.asarray(odoc["coefficients"], dtype=float))
        else:
            raise ValidationError("objectives.kind", f"unknown kind {kind!r}")
        objectives.append(obj)
    if objectives:
        model = ProblemModel(
            num_voxels=model.num_voxels,
            num_beamlets=model.num_beamlets,
            dose_matrix=model.dose_matrix,
            structures=model.structures,
            fluence_lower=model.fluence_lower,
            fluence_upper=model.fluence_upper,
            objectives=tuple(objectives),
        )
    return model


def problem_to_dict(model: ProblemModel, matrix_path: str | None = None) -> dict:
    """Serializable form; with ``matrix_path`` the triplets go to a binary sidecar."""
    coo = model.dose_matrix.tocoo()
    dose: dict = {"format": "triplets", "rows": model.num_voxels, "cols": model.num_beamlets}
    if matrix_path is None:
        dose["entries"] = [[int(i), int(j), float(v)] for i, j, v in zip(coo.row, coo.col, coo.data)]
    else:
        dose["path"] = matrix_path
    return {
        "num_voxels": model.num_voxels,
        "num_beamlets": model.num_beamlets,
        "structures": [
            {
                "name": s.name,
                "voxels": [int(v) for v in s.voxel_indices],
                "lb": s.lower_bound,
                "ub": s.upper_bound,
                "constrained": s.is_constrained,
                "optimized": s.is_optimized,
                **({"mean_lb": s.mean_lower} if s.mean_lower is not None else {}),
                **({"mean_ub": s.mean_upper} if s.mean_upper is not None else {}),
            }
            for s in model.structures
        ],
        "fluence_bounds": {
            "lower": [float(v) for v in model.fluence_lower],
            "upper": [float(v) for v in model.fluence_upper],
        },
        "objectives": [
            {"name": o.name, "kind": "explicit", "coefficients": [float(c) for c in o.coefficients]}
            for o in model.objectives
        ],
        "dose_matrix": dose,
    }


def load_problem(path: str | Path, format: str = "json") -> ProblemModel:
    """Load and validate a problem file. Raises ValidationError naming the offending field."""
    path = Path(path)
    require(format == "json", "format", f"unsupported format {format!r}")
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError("<document>", f"malformed JSON: {exc}") from exc
    return problem_from_dict(doc, base_dir=path.parent)


def save_problem(model: ProblemModel, path: str | Path, sidecar: bool = False) -> None:
    path = Path(path)
    matrix_path = path.with_suffix(".triplets.bin").name if sidecar else None
    doc = problem_to_dict(model, matrix_path=matrix_path)
    if sidecar:
        _write_triplets_binary(path.parent / matrix_path, model.dose_matrix)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
