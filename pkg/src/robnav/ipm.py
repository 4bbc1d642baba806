"""Dense primal-dual interior-point solver for small conic programs.

Solves   min <C, Z>   s.t.  <A_i, Z> <= h_i,  <E_j, Z> = g_j,  Z PSD.

Inequalities get explicit slack variables living in the non-negative orthant,
so the cone is a product (PSD block, LP block).  The search direction uses
Nesterov-Todd scaling with a Mehrotra-style adaptive centering parameter; the
Schur complement is formed densely and factorized with Cholesky.  Intended
for lifted dimensions up to a few hundred; larger problems should go through
the external-backend plug.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

__all__ = ["ConicResult", "solve_conic"]

_STEP_FRACTION = 0.98
_FARKAS_TOL = 1e-7


@dataclass
class ConicResult:
    status: str                 # optimal | infeasible | numerical_failure
    Z: np.ndarray | None
    y: np.ndarray | None
    primal_objective: float
    dual_objective: float
    gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    wall_time: float
    message: str = ""


def _svec_scale(d: int):
    iu = np.triu_indices(d)
    scale = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return iu, scale


def _svec(V: np.ndarray, iu, scale) -> np.ndarray:
    return V[iu] * scale


def _max_step_psd(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest alpha with X + alpha * dX still PSD (X assumed PD)."""
    try:
        L = la.cholesky(X, lower=True)
    except la.LinAlgError:
        return 0.0
    T = la.solve_triangular(L, dX, lower=True)
    T = la.solve_triangular(L, T.T, lower=True)
    lam_min = float(np.min(la.eigvalsh(0.5 * (T + T.T))))
    if lam_min >= -1e-14:
        return np.inf
    return 1.0 / (-lam_min)


def _max_step_orthant(x: np.ndarray, dx: np.ndarray) -> float:
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


def _nt_scaling(X: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Symmetric W with W S W = X."""
    lam, Q = la.eigh(S)
    lam = np.maximum(lam, 1e-300)
    s_half = (Q * np.sqrt(lam)) @ Q.T
    s_ihalf = (Q / np.sqrt(lam)) @ Q.T
    T = s_half @ X @ s_half
    lam_t, Qt = la.eigh(0.5 * (T + T.T))
    lam_t = np.maximum(lam_t, 1e-300)
    t_half = (Qt * np.sqrt(lam_t)) @ Qt.T
    W = s_ihalf @ t_half @ s_ihalf
    return 0.5 * (W + W.T)


def _factor_with_ridge(schur: np.ndarray):
    M = schur.shape[0]
    base = max(float(np.trace(schur)) / max(M, 1), 1.0)
    for ridge in (0.0, 1e-14, 1e-12, 1e-10, 1e-8):
        try:
            return la.cho_factor(schur + ridge * base * np.eye(M))
        except la.LinAlgError:
            continue
    return None


def solve_conic(
    C: np.ndarray,
    ineq_mats: list[np.ndarray],
    ineq_rhs: np.ndarray,
    eq_mats: list[np.ndarray],
    eq_rhs: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> ConicResult:
    start = time.perf_counter()
    d = C.shape[0]
    mi, me = len(ineq_mats), len(eq_mats)
    M = mi + me
    iu, scale = _svec_scale(d)

    mats = np.zeros((M, d, d))
    for a, A in enumerate(ineq_mats):
        mats[a] = A
    for j, E in enumerate(eq_mats):
        mats[mi + j] = E
    b = np.concatenate([np.asarray(ineq_rhs, float), np.asarray(eq_rhs, float)])

    # Row/objective scaling keeps the Schur complement well conditioned.
    row_norm = np.maximum(np.sqrt(np.einsum("mij,mij->m", mats, mats)), 1e-12)
    mats = mats / row_norm[:, None, None]
    b = b / row_norm
    c_norm = max(1.0, float(np.linalg.norm(C)))
    Cs = C / c_norm

    a_svec = mats[:, iu[0], iu[1]] * scale          # (M, dsvec)
    c_svec = _svec(Cs, iu, scale)
    b_norm = 1.0 + float(np.linalg.norm(b))
    c_vec_norm = 1.0 + float(np.linalg.norm(c_svec))

    def apply_a(Vs: np.ndarray, v_lp: np.ndarray) -> np.ndarray:
        out = a_svec @ Vs
        if mi:
            out[:mi] += v_lp
        return out

    tau = max(1.0, float(np.max(np.abs(b))) if M else 1.0)
    rho = max(1.0, float(np.max(np.abs(c_svec))) if c_svec.size else 1.0)
    X = tau * np.eye(d)
    s = np.full(mi, tau)
    y = np.zeros(M)
    S = rho * np.eye(d)
    v = np.full(mi, rho)

    nu = d + mi
    status, message = "numerical_failure", "iteration limit reached"
    best = None
    best_score = np.inf
    it = 0

    def criteria(X, s, y, S, v):
        x_svec = _svec(X, iu, scale)
        rp = b - apply_a(x_svec, s)
        Rd = Cs - np.tensordot(y, mats, axes=1) - S
        rd_lp = -y[:mi] - v
        pobj = float(c_svec @ x_svec)
        dobj = float(b @ y)
        rel_p = float(np.linalg.norm(rp)) / b_norm
        rel_d = (float(np.linalg.norm(Rd)) + (float(np.linalg.norm(rd_lp)) if mi else 0.0)) / c_vec_norm
        rel_gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        return rp, Rd, rd_lp, pobj, dobj, rel_p, rel_d, rel_gap

    for it in range(1, max_iter + 1):
        rp, Rd, rd_lp, pobj, dobj, rel_p, rel_d, rel_gap = criteria(X, s, y, S, v)
        score = max(rel_p, rel_d, rel_gap)
        if score < best_score:
            best_score = score
            best = (X.copy(), s.copy(), y.copy(), S.copy(), v.copy())
        if rel_p <= tol and rel_d <= tol and rel_gap <= tol:
            status, message = "optimal", ""
            break
        mu = (float(np.sum(X * S)) + (float(s @ v) if mi else 0.0)) / nu
        if not np.isfinite(mu) or mu <= 0:
            status, message = "numerical_failure", "complementarity collapsed"
            break

        # Primal infeasibility certificate: y with A^T y conic-negative, b^T y > 0.
        y_norm = float(np.linalg.norm(y))
        if y_norm > 1e6:
            y_hat = y / y_norm
            aty_hat = np.tensordot(y_hat, mats, axes=1)
            lam_max = float(np.max(la.eigvalsh(0.5 * (aty_hat + aty_hat.T)))) if d else 0.0
            lp_ok = (not mi) or float(np.max(y_hat[:mi])) <= _FARKAS_TOL
            if lam_max <= _FARKAS_TOL and lp_ok and b @ y_hat > _FARKAS_TOL:
                status, message = "infeasible", "primal infeasibility certificate found"
                break

        try:
            with np.errstate(over="ignore", invalid="ignore"):
                W = _nt_scaling(X, S)
                w2 = s / v if mi else np.zeros(0)
                tmp = mats @ W
                G = np.matmul(W[None, :, :], tmp)
                g_svec = G[:, iu[0], iu[1]] * scale
                schur = a_svec @ g_svec.T
            if mi:
                schur[:mi, :mi][np.diag_indices(mi)] += w2
            schur = 0.5 * (schur + schur.T)
            if not np.all(np.isfinite(schur)):
                status, message = "numerical_failure", "non-finite Schur complement"
                break
            cho = _factor_with_ridge(schur)
            if cho is None:
                status, message = "numerical_failure", "Schur complement not positive definite"
                break

            def newton(Rc_mat: np.ndarray, rc_lp: np.ndarray):
                # Delta u = Rc - W (Rd - A^T dy) W; solve A Delta u = rp for dy.
                wrdw = W @ Rd @ W
                rhs = rp - apply_a(_svec(Rc_mat, iu, scale), rc_lp) + apply_a(
                    _svec(wrdw, iu, scale), w2 * rd_lp if mi else np.zeros(0)
                )
                dy = la.cho_solve(cho, rhs)
                dy += la.cho_solve(cho, rhs - schur @ dy)   # one refinement step
                dS = Rd - np.tensordot(dy, mats, axes=1)
                dv = rd_lp - dy[:mi] if mi else np.zeros(0)
                dX = Rc_mat - W @ dS @ W
                dX = 0.5 * (dX + dX.T)
                ds = rc_lp - w2 * dv if mi else np.zeros(0)
                return dX, ds, dy, dS, dv

            # Predictor (affine scaling) step.
            dXa, dsa, dya, dSa, dva = newton(-X, -s)
            ap = min(_max_step_psd(X, dXa), _max_step_orthant(s, dsa) if mi else np.inf)
            ad = min(_max_step_psd(S, dSa), _max_step_orthant(v, dva) if mi else np.inf)
            ap, ad = min(1.0, _STEP_FRACTION * ap), min(1.0, _STEP_FRACTION * ad)
            mu_aff = (
                float(np.sum((X + ap * dXa) * (S + ad * dSa)))
                + (float((s + ap * dsa) @ (v + ad * dva)) if mi else 0.0)
            ) / nu
            sigma = min(0.999, max(1e-8, (max(mu_aff, 0.0) / mu) ** 3))

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", la.LinAlgWarning)
                S_inv = la.solve(S, np.eye(d), assume_a="pos")
            S_inv = 0.5 * (S_inv + S_inv.T)
            # Mehrotra second-order correction, symmetrized for the PSD block.
            corr = dXa @ dSa @ S_inv
            Rc = sigma * mu * S_inv - X - 0.5 * (corr + corr.T)
            rc = sigma * mu / v - s - dsa * dva / v if mi else np.zeros(0)
            dX, ds, dy, dS, dv = newton(Rc, rc)
            ap = min(_max_step_psd(X, dX), _max_step_orthant(s, ds) if mi else np.inf)
            ad = min(_max_step_psd(S, dS), _max_step_orthant(v, dv) if mi else np.inf)
            ap, ad = min(1.0, _STEP_FRACTION * ap), min(1.0, _STEP_FRACTION * ad)
            if min(ap, ad) < 0.1:
                # corrector overshoot: compare against the plain centering step
                dX2, ds2, dy2, dS2, dv2 = newton(
                    sigma * mu * S_inv - X, sigma * mu / v - s if mi else np.zeros(0)
                )
                ap2 = min(_max_step_psd(X, dX2), _max_step_orthant(s, ds2) if mi else np.inf)
                ad2 = min(_max_step_psd(S, dS2), _max_step_orthant(v, dv2) if mi else np.inf)
                ap2, ad2 = min(1.0, _STEP_FRACTION * ap2), min(1.0, _STEP_FRACTION * ad2)
                if min(ap2, ad2) > min(ap, ad):
                    dX, ds, dy, dS, dv, ap, ad = dX2, ds2, dy2, dS2, dv2, ap2, ad2
        except (la.LinAlgError, np.linalg.LinAlgError):
            status, message = "numerical_failure", "linear algebra breakdown"
            break
        if ap < 1e-12 and ad < 1e-12:
            status, message = "numerical_failure", "step size collapsed"
            break
        X_n = X + ap * dX
        s_n = s + ap * ds
        y_n = y + ad * dy
        S_n = S + ad * dS
        v_n = v + ad * dv
        if not (np.all(np.isfinite(X_n)) and np.all(np.isfinite(S_n)) and np.all(np.isfinite(y_n))):
            status, message = "numerical_failure", "iterates diverged"
            break
        X, s, y, S, v = 0.5 * (X_n + X_n.T), s_n, y_n, 0.5 * (S_n + S_n.T), v_n

    if best is not None:
        X, s, y, S, v = best
        _, _, _, pobj, dobj, rel_p, rel_d, rel_gap = criteria(X, s, y, S, v)
        if status != "infeasible" and rel_p <= tol and rel_d <= tol and rel_gap <= tol:
            status, message = "optimal", ""

    x_svec = _svec(X, iu, scale)
    rp = b - apply_a(x_svec, s)
    pobj = float(c_svec @ x_svec) * c_norm
    dobj = float(b @ y) * c_norm
    # Undo row scaling on the multipliers.
    y_out = y * c_norm / row_norm
    return ConicResult(
        status=status,
        Z=0.5 * (X + X.T),
        y=y_out,
        primal_objective=pobj,
        dual_objective=dobj,
        gap=abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj)),
        primal_residual=float(np.linalg.norm(rp)) * c_norm if M else 0.0,
        dual_residual=float(np.linalg.norm(Cs - np.tensordot(y, mats, axes=1) - S)) * c_norm,
        iterations=it,
        wall_time=time.perf_counter() - start,
        message=message,
    )
