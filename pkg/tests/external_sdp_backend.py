#!/usr/bin/env python3
"""Reference external SDP backend for the process plug, built on cvxpy.

Usage: external_sdp_backend.py <problem.sdp> <result.json>
"""
import json
import sys

import numpy as np


def parse(path):
    lines = [ln for ln in open(path).read().splitlines() if ln.strip()]
    assert lines[0].startswith("ROBNAV-SDP")
    pos, dim = 1, None
    objective, ineq, eq = None, [], []

    def block(nnz, start):
        M = np.zeros((dim, dim))
        for ln in lines[start : start + nnz]:
            i, j, v = ln.split()
            i, j, v = int(i), int(j), float(v)
            M[i, j] = v
            M[j, i] = v
        return M

    while pos < len(lines):
        parts = lines[pos].split()
        if parts[0] == "dim":
            dim = int(parts[1]); pos += 1
        elif parts[0] == "objective":
            nnz = int(parts[1]); objective = block(nnz, pos + 1); pos += 1 + nnz
        elif parts[0] in ("ineq", "eq"):
            rhs, nnz = float(parts[1]), int(parts[2])
            (ineq if parts[0] == "ineq" else eq).append((block(nnz, pos + 1), rhs))
            pos += 1 + nnz
        else:
            raise ValueError(f"bad section {parts[0]}")
    return dim, objective, ineq, eq


def main():
    problem_path, result_path = sys.argv[1], sys.argv[2]
    import cvxpy as cp

    dim, C, ineq, eq = parse(problem_path)
    Z = cp.Variable((dim, dim), symmetric=True)
    cons = [Z >> 0]
    cons += [cp.sum(cp.multiply(A, Z)) <= h for A, h in ineq]
    cons += [cp.sum(cp.multiply(A, Z)) == g for A, g in eq]
    prob = cp.Problem(cp.Minimize(cp.sum(cp.multiply(C, Z))), cons)
    prob.solve(solver=cp.CLARABEL)
    status = {"optimal": "optimal", "infeasible": "infeasible", "unbounded": "unbounded"}.get(prob.status, "numerical_failure")
    doc = {
        "status": status,
        "objective": None if prob.value is None else float(prob.value),
        "dual_objective": None if prob.value is None else float(prob.value),
        "gap": 0.0 if status == "optimal" else None,
        "Z": None if Z.value is None else [[float(v) for v in row] for row in np.asarray(Z.value)],
        "iterations": 0,
        "message": prob.status,
    }
    with open(result_path, "w") as fh:
        json.dump(doc, fh)


if __name__ == "__main__":
    main()
