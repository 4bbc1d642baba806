"""Command-line workflow: generate phantoms, cluster, compute fronts,
project/verify points, export DVHs, serve the navigation API, and report.

Every command writes JSON artifacts into the session directory and prints a
short human-readable summary; failures exit nonzero with an error JSON on
stdout.
"""
from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from .evaluate import PhantomSpec, generate_phantom
from .model import save_problem
from .serialize import canonical_json
from .session import Session, SessionError
from .validation import ValidationError


def _fail(kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": {"kind": kind, "message": message, **extra}}))
    return 1


def _session_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--session", default="robnav-session", help="session directory")
    p.add_argument("--problem", default=None, help="problem JSON (required on first use of a session)")
    p.add_argument("--scale", type=float, default=None, help="relative matrix uncertainty (default 0.02)")
    p.add_argument("--seed", type=int, default=None)


def _open_session(args) -> Session:
    overrides = {"scale": args.scale, "seed": args.seed}
    if getattr(args, "k", None) is not None:
        overrides["cluster_k"] = args.k
    return Session.open_or_create(args.session, args.problem, **overrides)


def cmd_phantom(args) -> int:
    spec = PhantomSpec(grid=args.grid, beamlets=args.beamlets, single_objective=args.single_objective)
    model = generate_phantom(spec, seed=args.seed)
    save_problem(model, args.out, sidecar=args.sidecar)
    print(f"phantom: {model.num_voxels} voxels, {model.num_beamlets} beamlets, "
          f"{len(model.structures)} structures -> {args.out}")
    return 0


def cmd_cluster(args) -> int:
    session = _open_session(args)
    clustered = session.cluster(k=args.k, seed=args.seed)
    sizes = {s.name: s.size for s in clustered.model.structures}
    print(f"clustered to {clustered.model.num_voxels} super-voxels {sizes} -> {session.directory}/cluster_map.json")
    return 0


def cmd_front_sdp(args) -> int:
    session = _open_session(args)
    db = session.compute_front_sdp(delta=args.delta)
    print(
        f"relaxation front: {len(db.points)} points, gap {db.quality_gap:.4g} (delta {db.delta}), "
        f"{db.meta['sdp_solves']} SDP solves + {db.meta['seed_lp_solves']} seeding LP solves"
    )
    return 0


def cmd_front_iter(args) -> int:
    session = _open_session(args)
    db = session.compute_front_iter(step=args.step, delta=args.delta)
    print(
        f"iterative-level front: {len(db.points)} points over {len(db.meta['levels'])} levels, "
        f"{db.solve_count} LP solves"
    )
    return 0


def cmd_front_worstcase(args) -> int:
    session = _open_session(args)
    db = session.compute_front_worstcase(delta=args.delta)
    print(f"worst-case front (level 1): {len(db.points)} points, {db.solve_count} LP solves")
    return 0


def cmd_project(args) -> int:
    session = Session(args.session)
    res = session.project_point(args.point_id)
    print(
        f"projection of {args.point_id}: level {res.r_in:.4f} -> {res.point.r:.4f} "
        f"(loss {res.r_loss:.4f}), binding row {res.binding_row}"
        + (f"  WARNING: {res.warning}" if res.warning else "")
    )
    return 0


def cmd_verify(args) -> int:
    session = Session(args.session)
    res, verdict = session.verify_point(args.point_id)
    print(f"verify {args.point_id}: projected level {res.point.r:.4f}, verdict {verdict.level} (eps {verdict.eps:.3g})")
    return 0


def cmd_dvh(args) -> int:
    session = Session(args.session)
    curves = session.dvh_curves(args.point_id, clustered=args.clustered)
    out = Path(args.out) if args.out else session.directory / f"dvh_{args.point_id}.csv"
    lines = ["structure,dose,fraction"]
    for c in curves:
        lines.extend(f"{c.structure},{d:.10g},{f:.10g}" for d, f in zip(c.grid, c.fraction))
    out.write_text("\n".join(lines) + "\n")
    out_json = out.with_suffix(".json")
    out_json.write_text(canonical_json({"point": args.point_id, "curves": [c.to_dict() for c in curves]}))
    print(f"DVH for {args.point_id} ({'clustered' if args.clustered else 'unclustered'}): "
          f"{len(curves)} structures -> {out} / {out_json}")
    return 0


def cmd_report(args) -> int:
    session = Session(args.session)
    doc = session.report()
    print(f"report -> {session.directory}/report.json")
    for kind, front in doc["fronts"].items():
        if front:
            print(f"  front[{kind}]: {front['points']} points, {front['solve_count']} solves, gap {front['quality_gap']:.4g}")
    if doc["solve_comparison"]:
        c = doc["solve_comparison"]
        print(f"  scalarized solves: relaxation path {c['front_sdp_solves']} vs iterative path {c['front_iter_solves']} "
              f"(x{c['ratio']:.2f})")
    if doc["consistency"]:
        c = doc["consistency"]
        print(f"  consistency checks: {c['total'] - c['failures']}/{c['total']} passed")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.session)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robnav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic planning problem")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=12)
    p.add_argument("--beamlets", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--single-objective", action="store_true")
    p.add_argument("--sidecar", action="store_true", help="write the dose matrix as a binary triplet sidecar")
    p.set_defaults(fn=cmd_phantom)

    p = sub.add_parser("cluster", help="cluster voxels into super-voxels")
    _session_args(p)
    p.add_argument("--k", type=float, required=True, help="clusters per structure (int) or fraction of voxels")
    p.set_defaults(fn=cmd_cluster)

    p = sub.add_parser("front-sdp", help="sandwich the relaxation Pareto-front")
    _session_args(p)
    p.add_argument("--delta", type=float, default=0.04)
    p.set_defaults(fn=cmd_front_sdp)

    p = sub.add_parser("front-iter", help="baseline: sweep fixed robustness levels")
    _session_args(p)
    p.add_argument("--step", type=float, default=0.04)
    p.add_argument("--delta", type=float, default=0.04)
    p.set_defaults(fn=cmd_front_iter)

    p = sub.add_parser("front-worstcase", help="fixed full-level dose front")
    _session_args(p)
    p.add_argument("--delta", type=float, default=0.04)
    p.set_defaults(fn=cmd_front_worstcase)

    p = sub.add_parser("project", help="project a stored relaxation point")
    p.add_argument("--session", default="robnav-session")
    p.add_argument("--point-id", required=True)
    p.set_defaults(fn=cmd_project)

    p = sub.add_parser("verify", help="project then verify efficiency by LP evidence")
    p.add_argument("--session", default="robnav-session")
    p.add_argument("--point-id", required=True)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("dvh", help="export DVH curves for a stored point")
    p.add_argument("--session", default="robnav-session")
    p.add_argument("--point-id", required=True)
    p.add_argument("--clustered", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_dvh)

    p = sub.add_parser("report", help="solve counts, gaps, consistency checks")
    p.add_argument("--session", default="robnav-session")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("serve", help="run the navigation HTTP API")
    p.add_argument("--session", default="robnav-session")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8699)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, SessionError) as exc:
        return _fail(type(exc).__name__, str(exc))
    except FileNotFoundError as exc:
        return _fail("FileNotFoundError", str(exc))
    except Exception as exc:  # pragma: no cover - last-resort diagnostics
        return _fail(type(exc).__name__, str(exc), traceback=traceback.format_exc()[-2000:])


if __name__ == "__main__":
    sys.exit(main())
