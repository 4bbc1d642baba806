"""Session directory: one problem, its configuration, and every computed
artifact (cluster map, fronts, projections, reports), with a manifest.

All persisted JSON goes through the canonical writer so that databases
round-trip bit-exactly.
"""
from __future__ import annotations

import datetime
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .backend import solve_lp
from .clustering import ClusterMap, ClusteredProblem, VoxelClusterer, aggregate
from .evaluate import default_dvh_grid, dvh, sample_scenarios
from .intervals import QcqpInstance, QcqpPoint, assemble_qcqp, lp_at_level
from .model import ProblemModel, assemble_nominal, load_problem, problem_from_dict, problem_to_dict
from .pareto import (
    LpFrontProblem,
    ParetoDb,
    ParetoPoint,
    SdpFrontProblem,
    dominance_filter_points,
    iterative_r_front,
    sandwich_front,
    weighted_sum_solve,
)
from .reconstruct import front_consistency_report, project_to_qcqp, verify_efficiency
from .relaxation import SdpInstance, build_sdp
from .serialize import canonical_hash, canonical_json
from .validation import ValidationError, require

__all__ = ["SessionConfig", "Session", "SessionError"]

MANIFEST = "manifest.json"
FRONT_FILES = {"sdp": "front_sdp.json", "iter": "front_iter.json", "worstcase": "front_worstcase.json"}


class SessionError(RuntimeError):
    pass


@dataclass
class SessionConfig:
    scale: float = 0.02           # relative matrix uncertainty
    delta: float = 0.04           # front approximation quality
    cluster_k: float | None = None  # clusters per structure (int) or fraction
    seed: int = 42
    split_negative: bool = False
    sdp_tol: float = 1e-9
    lp_tol: float = 1e-9

    def to_dict(self) -> dict:
        return {
            "scale": float(self.scale),
            "delta": float(self.delta),
            "cluster_k": None if self.cluster_k is None else float(self.cluster_k),
            "seed": int(self.seed),
            "split_negative": bool(self.split_negative),
            "sdp_tol": float(self.sdp_tol),
            "lp_tol": float(self.lp_tol),
        }

    @staticmethod
    def from_dict(doc: dict) -> "SessionConfig":
        return SessionConfig(
            scale=float(doc.get("scale", 0.02)),
            delta=float(doc.get("delta", 0.04)),
            cluster_k=None if doc.get("cluster_k") is None else float(doc["cluster_k"]),
            seed=int(doc.get("seed", 42)),
            split_negative=bool(doc.get("split_negative", False)),
            sdp_tol=float(doc.get("sdp_tol", 1e-9)),
            lp_tol=float(doc.get("lp_tol", 1e-9)),
        )


class Session:
    """Filesystem-backed state shared by the CLI and the navigation service."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._problem: ProblemModel | None = None
        self._clustered: ClusteredProblem | None = None
        self._qcqp: QcqpInstance | None = None
        self._sdp: SdpInstance | None = None

    # ------------------------------------------------------------- manifest

    @property
    def manifest_path(self) -> Path:
        return self.directory / MANIFEST

    def exists(self) -> bool:
        return self.manifest_path.exists()

    def read_manifest(self) -> dict:
        if not self.exists():
            raise SessionError(f"no session manifest in {self.directory}")
        return json.loads(self.manifest_path.read_text())

    def write_manifest(self, doc: dict) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(canonical_json(doc))

    @staticmethod
    def create(directory: str | Path, problem: ProblemModel, config: SessionConfig) -> "Session":
        session = Session(directory)
        session.directory.mkdir(parents=True, exist_ok=True)
        doc = problem_to_dict(problem)
        (session.directory / "problem.json").write_text(canonical_json(doc))
        manifest = {
            "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "config": config.to_dict(),
            "problem_file": "problem.json",
            "problem_hash": canonical_hash({"problem": doc, "config": _hash_relevant(config)}),
            "artifacts": {},
        }
        session.write_manifest(manifest)
        return session

    @staticmethod
    def open_or_create(directory: str | Path, problem_path: str | Path | None = None, **overrides) -> "Session":
        """Open an existing session (overrides must agree with its identity
        keys) or create a fresh one from a problem file."""
        session = Session(directory)
        if session.exists():
            stored = session.config
            for name in ("scale", "seed", "split_negative"):
                given = overrides.get(name)
                if given is not None and given != getattr(stored, name):
                    raise SessionError(
                        f"config mismatch: session has {name}={getattr(stored, name)!r}, command asked for {given!r}"
                    )
            return session
        if problem_path is None:
            raise SessionError("a problem file is needed to start a session")
        config = SessionConfig(**{k: v for k, v in overrides.items() if v is not None})
        return Session.create(directory, load_problem(problem_path), config)

    @property
    def config(self) -> SessionConfig:
        return SessionConfig.from_dict(self.read_manifest()["config"])

    @property
    def problem_hash(self) -> str:
        return str(self.read_manifest()["problem_hash"])

    def _register(self, key: str, filename: str) -> None:
        manifest = self.read_manifest()
        manifest.setdefault("artifacts", {})[key] = filename
        self.write_manifest(manifest)

    # -------------------------------------------------------------- problem

    def problem(self) -> ProblemModel:
        if self._problem is None:
            manifest = self.read_manifest()
            doc = json.loads((self.directory / manifest["problem_file"]).read_text())
            self._problem = problem_from_dict(doc, base_dir=self.directory)
        return self._problem

    def cluster(self, k: float | int | None = None, seed: int | None = None) -> ClusteredProblem:
        """Compute (or recompute) the cluster map and clustered problem."""
        config = self.config
        k = config.cluster_k if k is None else k
        seed = config.seed if seed is None else seed
        require(k is not None, "k", "cluster count or fraction required")
        k_typed = k if isinstance(k, int) else (int(k) if float(k) >= 1 and float(k).is_integer() else float(k))
        clusterer = VoxelClusterer(n_clusters=k_typed, seed=seed)
        clustered = clusterer.fit_transform(self.problem())
        (self.directory / "cluster_map.json").write_text(canonical_json(clusterer.cluster_map_.to_dict()))
        self._register("cluster_map", "cluster_map.json")
        manifest = self.read_manifest()
        manifest["config"]["cluster_k"] = float(k)
        manifest["config"]["seed"] = int(seed)
        new_hash = canonical_hash(
            {
                "problem": json.loads((self.directory / manifest["problem_file"]).read_text()),
                "config": _hash_relevant(SessionConfig.from_dict(manifest["config"])),
            }
        )
        if new_hash != manifest["problem_hash"]:
            # existing fronts were computed against a different clustering
            for kind, filename in FRONT_FILES.items():
                path = self.directory / filename
                if path.exists():
                    path.unlink()
                manifest.get("artifacts", {}).pop(f"front_{kind}", None)
            manifest["problem_hash"] = new_hash
        self.write_manifest(manifest)
        self._clustered = clustered
        self._qcqp = None
        self._sdp = None
        return clustered

    def clustered(self) -> ClusteredProblem | None:
        if self._clustered is not None:
            return self._clustered
        path = self.directory / "cluster_map.json"
        if not path.exists():
            return None
        cmap = ClusterMap.from_dict(json.loads(path.read_text()))
        self._clustered = aggregate(self.problem(), cmap)
        return self._clustered

    def working_model(self) -> ProblemModel:
        clustered = self.clustered()
        if self.config.cluster_k is not None and clustered is None:
            clustered = self.cluster()
        return clustered.model if clustered is not None else self.problem()

    def qcqp(self) -> QcqpInstance:
        if self._qcqp is None:
            config = self.config
            nominal = assemble_nominal(self.working_model())
            self._qcqp = assemble_qcqp(nominal, config.scale, split_negative=config.split_negative)
        return self._qcqp

    def sdp(self) -> SdpInstance:
        if self._sdp is None:
            self._sdp = build_sdp(self.qcqp())
        return self._sdp

    # --------------------------------------------------------------- fronts

    def front_path(self, kind: str) -> Path:
        return self.directory / FRONT_FILES[kind]

    def load_front(self, kind: str) -> ParetoDb | None:
        path = self.front_path(kind)
        if not path.exists():
            return None
        return ParetoDb.from_dict(json.loads(path.read_text()))

    def save_front(self, kind: str, db: ParetoDb) -> None:
        db.problem_hash = self.problem_hash
        self.front_path(kind).write_text(canonical_json(db.to_dict()))
        self._register(f"front_{kind}", FRONT_FILES[kind])

    def compute_front_worstcase(self, delta: float | None = None) -> ParetoDb:
        """Fixed full-level dose front; its points lift onto the relaxation front."""
        config = self.config
        delta = config.delta if delta is None else delta
        q = self.qcqp()
        lp = lp_at_level(q, 1.0)
        n = q.num_vars

        def decode(x):
            xp = x[:n]
            xm = x[n:] if q.split_negative else np.zeros(n)
            return {
                "kind": "qcqp",
                "x_plus": [float(v) for v in xp],
                "x_minus": [float(v) for v in xm],
                "r": 1.0,
            }

        problem = LpFrontProblem(lp, decode=decode, tol=config.lp_tol)
        if q.objectives.shape[0] == 1:
            point = weighted_sum_solve(problem, [1.0], cleanup="never")
            points, gap = [point], 0.0
        else:
            db2 = sandwich_front(problem, delta)
            points, gap = db2.points, db2.quality_gap
        db = ParetoDb(
            points=points,
            quality_gap=gap,
            problem_hash="",
            delta=delta,
            objective_labels=self.objective_labels()[:-1],
            normalization={},
            facets=[],
            solve_count=problem.solve_count,
            meta={"level": 1.0},
        )
        db.assign_ids(prefix="w")
        self.save_front("worstcase", db)
        return db

    def _worstcase_seeds(self, db: ParetoDb | None) -> list[ParetoPoint]:
        if db is None:
            return []
        seeds = []
        for p in db.points:
            dec = p.decision
            seeds.append(
                ParetoPoint(
                    objective_values=np.append(p.objective_values, -1.0),
                    origin="worst_case_lift",
                    params={**p.params, "level": 1.0},
                    decision={
                        "kind": "sdp_border",
                        "x_plus": dec["x_plus"],
                        "x_minus": dec["x_minus"],
                        "r": 1.0,
                        "rank_estimate": 1,
                    },
                )
            )
        return seeds

    def compute_front_sdp(self, delta: float | None = None) -> ParetoDb:
        """Sandwich the relaxation front, seeded with lifted full-level points."""
        config = self.config
        delta = config.delta if delta is None else delta
        worst = self.load_front("worstcase")
        if worst is None:
            worst = self.compute_front_worstcase(delta)
        seeds = self._worstcase_seeds(worst)
        problem = SdpFrontProblem(self.sdp(), tol=config.sdp_tol)
        db = sandwich_front(problem, delta, seeds=seeds)
        db.objective_labels = self.objective_labels()
        db.meta.update(
            {
                "sdp_solves": problem.solve_count,
                "seed_lp_solves": worst.solve_count,
                "kind": "sdp",
            }
        )
        db.solve_count = problem.solve_count + worst.solve_count
        db.assign_ids(prefix="p")
        self.save_front("sdp", db)
        return db

    def compute_front_iter(self, step: float, delta: float | None = None) -> ParetoDb:
        config = self.config
        delta = config.delta if delta is None else delta
        db = iterative_r_front(self.qcqp(), step=step, delta=delta, tol=config.lp_tol)
        db.objective_labels = self.objective_labels()
        db.meta["kind"] = "iter"
        self.save_front("iter", db)
        return db

    def objective_labels(self) -> list[str]:
        labels = [o.name for o in self.problem().objectives]
        return labels + ["-robustness"]

    # ----------------------------------------------------- per-point actions

    def find_point(self, point_id: str) -> tuple[str, ParetoPoint]:
        for kind in ("sdp", "worstcase", "iter"):
            db = self.load_front(kind)
            if db is None:
                continue
            try:
                return kind, db.get(point_id)
            except KeyError:
                pass
        raise SessionError(f"point id {point_id!r} not found in any front")

    def decision_point(self, point: ParetoPoint) -> QcqpPoint:
        dec = point.decision
        q = self.qcqp()
        xp = np.asarray(dec.get("x_plus", []), float)
        xm = np.asarray(dec.get("x_minus", []), float)
        if xm.size == 0:
            xm = np.zeros_like(xp)
        return q.point(xp, xm, r=float(dec.get("r", 0.0)))

    def project_point(self, point_id: str):
        _, point = self.find_point(point_id)
        dec = point.decision
        res = project_to_qcqp(
            self.qcqp(),
            np.asarray(dec["x_plus"], float),
            np.asarray(dec.get("x_minus", []), float),
            float(dec.get("r", 0.0)),
        )
        out = self.directory / f"projection_{point_id}.json"
        out.write_text(canonical_json(res.to_dict()))
        return res

    def verify_point(self, point_id: str):
        _, point = self.find_point(point_id)
        dec = point.decision
        res = project_to_qcqp(
            self.qcqp(),
            np.asarray(dec["x_plus"], float),
            np.asarray(dec.get("x_minus", []), float),
            float(dec.get("r", 0.0)),
        )
        verdict = verify_efficiency(res.point, self.qcqp())
        doc = {"projection": res.to_dict(), "verdict": verdict.to_dict()}
        (self.directory / f"verdict_{point_id}.json").write_text(canonical_json(doc))
        return res, verdict

    def dvh_curves(self, point_id: str, clustered: bool = False):
        _, point = self.find_point(point_id)
        qp = self.decision_point(point)
        if clustered:
            cl = self.clustered()
            require(cl is not None, "clustered", "no cluster map in this session")
            model = cl.model
        else:
            model = self.problem()
        x = qp.fluence
        grid = default_dvh_grid(model, x)
        return [dvh(model, x, s.name, grid=grid) for s in model.structures]

    def scenario_audit(self, point_id: str, count: int = 10000, seed: int | None = None):
        _, point = self.find_point(point_id)
        qp = self.decision_point(point)
        seed = self.config.seed if seed is None else seed
        return sample_scenarios(self.qcqp().robustness, qp.fluence, max(0.0, min(1.0, qp.r)), count, seed=seed)

    # ---------------------------------------------------------------- report

    def report(self) -> dict:
        fronts = {kind: self.load_front(kind) for kind in FRONT_FILES}
        consistency = None
        if fronts["sdp"] is not None:
            consistency = front_consistency_report(self.qcqp(), self.sdp(), fronts["sdp"].points)
        doc = {
            "problem_hash": self.problem_hash,
            "config": self.config.to_dict(),
            "fronts": {
                kind: None
                if db is None
                else {
                    "points": len(db.points),
                    "solve_count": db.solve_count,
                    "quality_gap": db.quality_gap,
                    "delta": db.delta,
                    "meta": db.meta,
                }
                for kind, db in fronts.items()
            },
            "solve_comparison": None,
            "consistency": None if consistency is None else consistency.to_dict(),
        }
        if fronts["sdp"] is not None and fronts["iter"] is not None:
            doc["solve_comparison"] = {
                "front_sdp_solves": fronts["sdp"].solve_count,
                "front_iter_solves": fronts["iter"].solve_count,
                "ratio": fronts["iter"].solve_count / max(1, fronts["sdp"].solve_count),
            }
        (self.directory / "report.json").write_text(canonical_json(doc))
        self._register("report", "report.json")
        return doc


def _hash_relevant(config: SessionConfig) -> dict:
    return {
        "scale": float(config.scale),
        "cluster_k": None if config.cluster_k is None else float(config.cluster_k),
        "seed": int(config.seed),
        "split_negative": bool(config.split_negative),
    }
