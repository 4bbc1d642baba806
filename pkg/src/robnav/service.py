"""Navigation HTTP API backing the interactive front-end.

All numeric payloads originate here; the browser client only renders them.
Routes live under /api/v1.  Front recomputation takes an exclusive lock; the
stateless routes (project, dvh) run concurrently.
"""
from __future__ import annotations

import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, model_validator

from .pareto import ParetoPoint, SdpFrontProblem, eps_efficiency, weighted_sum_solve
from .reconstruct import project_to_qcqp, reoptimize_at_r, verify_efficiency
from .session import Session, SessionError
from .serialize import canonical_json
from .validation import ValidationError

__all__ = ["create_app"]

API = "/api/v1"


class NavigateBody(BaseModel):
    weights: list[float] | None = None
    reference_point: list[float] | None = None
    problem_hash: str | None = None

    @model_validator(mode="after")
    def _one_of(self):
        if (self.weights is None) == (self.reference_point is None):
            raise ValueError("provide exactly one of weights or reference_point")
        return self


class PointBody(BaseModel):
    point_id: str | None = None
    x_plus: list[float] | None = None
    x_minus: list[float] | None = None
    r: float | None = None
    problem_hash: str | None = None

    @model_validator(mode="after")
    def _one_of(self):
        if self.point_id is None and self.x_plus is None:
            raise ValueError("provide point_id or explicit coordinates")
        return self


class ServiceState:
    def __init__(self, session: Session):
        self.session = session
        self.lock = threading.Lock()
        self._nav_points: list[ParetoPoint] = []   # solved on demand, appended to the db view

    def front_db(self):
        db = self.session.load_front("sdp")
        if db is None:
            raise HTTPException(
                status_code=409,
                detail="no relaxation front computed yet; run `robnav front-sdp` for this session first",
            )
        return db

    def check_hash(self, given: str | None):
        if given is not None and given != self.session.problem_hash:
            raise HTTPException(status_code=409, detail="problem_hash mismatch: session holds different data")

    def resolve_point(self, body: PointBody) -> tuple[np.ndarray, np.ndarray, float]:
        if body.point_id is not None:
            _, point = self.session.find_point(body.point_id)
            dec = point.decision
            return (
                np.asarray(dec["x_plus"], float),
                np.asarray(dec.get("x_minus", []), float),
                float(dec.get("r", 0.0)),
            )
        xp = np.asarray(body.x_plus, float)
        xm = np.asarray(body.x_minus or [], float)
        return xp, xm, float(body.r or 0.0)


def _point_payload(p: ParetoPoint) -> dict:
    return p.to_dict()


def create_app(session_dir: str | Path) -> FastAPI:
    state = ServiceState(Session(session_dir))
    app = FastAPI(title="robnav navigation API", version="1")

    @app.exception_handler(SessionError)
    async def _session_error(request: Request, exc: SessionError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(ValidationError)
    async def _validation_error(request: Request, exc: ValidationError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(Exception)
    async def _solver_error(request: Request, exc: Exception):
        diagnostic = uuid.uuid4().hex[:12]
        return JSONResponse(status_code=500, content={"detail": f"internal failure [{diagnostic}]: {exc}"})

    @app.get(API + "/front")
    def front():
        db = state.front_db()
        points = [_point_payload(p) for p in db.points] + [_point_payload(p) for p in state._nav_points]
        return {
            "problem_hash": db.problem_hash,
            "objective_labels": db.objective_labels,
            "quality_gap": db.quality_gap,
            "delta": db.delta,
            "normalization": db.normalization,
            "points": points,
            "facets": db.facets,
        }

    @app.post(API + "/navigate")
    def navigate(body: NavigateBody):
        state.check_hash(body.problem_hash)
        db = state.front_db()
        stored = list(db.points) + list(state._nav_points)
        if body.reference_point is not None:
            ref = np.asarray(body.reference_point, float)
            ideal = np.asarray(db.normalization.get("ideal", np.zeros_like(ref)), float)
            rng = np.asarray(db.normalization.get("range", np.ones_like(ref)), float)
            if ref.size != len(db.objective_labels):
                raise HTTPException(status_code=400, detail="reference_point has wrong dimension")
            vals = np.vstack([p.objective_values for p in stored])
            dist = np.linalg.norm((vals - ref) / rng, axis=1)
            best = stored[int(np.argmin(dist))]
            return {"point": _point_payload(best), "cache": "hit", "distance": float(np.min(dist))}
        w = np.asarray(body.weights, float)
        if w.size != len(db.objective_labels) or np.any(w < 0) or not np.any(w > 0):
            raise HTTPException(status_code=400, detail="weights must be non-negative, not all zero, right dimension")
        w_key = (w / np.sum(w)).round(9)
        for p in stored:
            pw = np.asarray(p.params.get("weights", []), float)
            if pw.size == w.size and np.sum(pw) > 0 and np.allclose(pw / np.sum(pw), w_key, atol=1e-9):
                return {"point": _point_payload(p), "cache": "hit"}
        with state.lock:
            problem = SdpFrontProblem(state.session.sdp(), tol=state.session.config.sdp_tol)
            point = weighted_sum_solve(problem, w)
            point.point_id = f"n{len(state._nav_points):04d}"
            state._nav_points.append(point)
        return {"point": _point_payload(point), "cache": "miss"}

    @app.post(API + "/project")
    def project(body: PointBody):
        state.check_hash(body.problem_hash)
        xp, xm, r = state.resolve_point(body)
        res = project_to_qcqp(state.session.qcqp(), xp, xm, r)
        payload = res.to_dict()
        db = state.session.load_front("sdp")
        if db is not None and db.points:
            scale = np.asarray(db.normalization.get("range", np.ones(res.point.objective_values.size)), float)
            payload["eps_vs_front"] = eps_efficiency(res.point.objective_values, db.values_matrix(), scale=scale)
        return payload

    @app.post(API + "/reoptimize")
    def reoptimize(body: PointBody):
        state.check_hash(body.problem_hash)
        xp, xm, r = state.resolve_point(body)
        q = state.session.qcqp()
        res = project_to_qcqp(q, xp, xm, r)
        improved = reoptimize_at_r(res.point, q)
        verdict = verify_efficiency(improved, q)
        return {
            "projection": res.to_dict(),
            "point": improved.to_dict(),
            "verdict": verdict.to_dict(),
        }

    @app.get(API + "/dvh")
    def dvh_route(point_id: str = Query(..., alias="point"), clustered: bool = False):
        curves = state.session.dvh_curves(point_id, clustered=clustered)
        return {"point": point_id, "clustered": clustered, "curves": [c.to_dict() for c in curves]}

    @app.get(API + "/report")
    def report():
        return state.session.report()

    ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if not ui_dir.exists():
        ui_dir = Path(session_dir) / "ui"
    if ui_dir.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
