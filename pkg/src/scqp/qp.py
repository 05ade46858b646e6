"""Dense convex QP solver: primal-dual interior point with Mehrotra
predictor-corrector steps.

Problems minimize  z^T H z + q^T z + const  subject to  G z <= g,
E z = e, and box bounds (entries may be +-inf; lb == ub pins a variable,
which is substituted out before the interior-point iteration).  Node
relaxations inside branch-and-bound are small and dense, so each Newton
step factors the reduced KKT system directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import linprog

KKT_TOL = 1e-8
MAX_ITER = 200
PROX_SHIFT = 1e-12  # proximal diagonal shift for PSD-singular Hessians


@dataclass(frozen=True)
class QpProblem:
    hessian: np.ndarray            # objective includes z^T hessian z (no 1/2)
    linear: np.ndarray
    ineq_matrix: np.ndarray | None = None
    ineq_rhs: np.ndarray | None = None
    eq_matrix: np.ndarray | None = None
    eq_rhs: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    constant: float = 0.0

    @property
    def nvar(self) -> int:
        return len(self.linear)


@dataclass
class QpSolution:
    z: np.ndarray
    status: str                    # Optimal | Infeasible | IterLimit
    obj: float
    ineq_duals: np.ndarray | None = None
    eq_duals: np.ndarray | None = None
    iterations: int = 0
    shifted: bool = False          # proximal shift was applied
    farkas_ray: np.ndarray | None = None


def _expand_constraints(p: QpProblem, fixed_mask, fixed_vals, free_idx):
    """Fold box bounds into inequality rows and substitute fixed variables."""
    n = p.nvar
    G_rows, g_vals = [], []
    if p.ineq_matrix is not None and len(p.ineq_matrix):
        G_rows.append(np.atleast_2d(p.ineq_matrix))
        g_vals.append(np.atleast_1d(p.ineq_rhs))
    lower = p.lower if p.lower is not None else np.full(n, -np.inf)
    upper = p.upper if p.upper is not None else np.full(n, np.inf)
    for i in free_idx:
        if np.isfinite(lower[i]):
            row = np.zeros(n)
            row[i] = -1.0
            G_rows.append(row[None, :])
            g_vals.append(np.array([-lower[i]]))
        if np.isfinite(upper[i]):
            row = np.zeros(n)
            row[i] = 1.0
            G_rows.append(row[None, :])
            g_vals.append(np.array([upper[i]]))
    G = np.vstack(G_rows) if G_rows else np.zeros((0, n))
    g = np.concatenate(g_vals) if g_vals else np.zeros(0)
    E = np.atleast_2d(p.eq_matrix) if p.eq_matrix is not None and len(p.eq_matrix) else np.zeros((0, n))
    e = np.atleast_1d(p.eq_rhs) if p.eq_rhs is not None and len(np.atleast_1d(p.eq_rhs)) else np.zeros(0)
    # substitute out pinned variables
    g = g - G[:, fixed_mask] @ fixed_vals
    e = e - E[:, fixed_mask] @ fixed_vals
    return G[:, free_idx], g, E[:, free_idx], e


def solve_qp(p: QpProblem, max_iter: int = MAX_ITER) -> QpSolution:
    n = p.nvar
    H = np.asarray(p.hessian, dtype=float).reshape(n, n)
    q_full = np.asarray(p.linear, dtype=float)
    lower = p.lower if p.lower is not None else np.full(n, -np.inf)
    upper = p.upper if p.upper is not None else np.full(n, np.inf)
    if np.any(lower > upper + 1e-12):
        return QpSolution(z=np.zeros(n), status="Infeasible", obj=math.inf)
    fixed_mask = np.isfinite(lower) & np.isfinite(upper) & (upper - lower <= 1e-14)
    free_idx = np.where(~fixed_mask)[0]
    fixed_vals = 0.5 * (lower[fixed_mask] + upper[fixed_mask])

    G, g, E, e = _expand_constraints(p, fixed_mask, fixed_vals, free_idx)
    P = 2.0 * H[np.ix_(free_idx, free_idx)]
    qv = q_full[free_idx] + 2.0 * H[np.ix_(free_idx, fixed_mask)] @ fixed_vals
    const = float(p.constant + fixed_vals @ H[np.ix_(fixed_mask, fixed_mask)] @ fixed_vals
                  + q_full[fixed_mask] @ fixed_vals)

    nf = len(free_idx)
    if nf == 0:
        z = np.zeros(n)
        z[fixed_mask] = fixed_vals
        feas = (len(g) == 0 or np.all(g >= -1e-8)) and (len(e) == 0 or np.all(np.abs(e) <= 1e-8))
        status = "Optimal" if feas else "Infeasible"
        return QpSolution(z=z, status=status, obj=const if feas else math.inf)

    # Equilibrate before handing off: columns by variable magnitude (taken
    # from finite bounds), rows to unit inf-norm.  The interior-point
    # iteration is scale-sensitive and cut rows like
    # 2 xbar x - xbar^2 y - phi <= 0 span four orders of magnitude when the
    # semi-continuous bounds are large.  The column scaling is a pure change
    # of variables, so objective values (and the complementarity gap mu) stay
    # in original units and the solver's gap tolerance keeps its meaning.
    lo_f, up_f = lower[free_idx], upper[free_idx]
    mag = np.maximum(np.where(np.isfinite(lo_f), np.abs(lo_f), 0.0),
                     np.where(np.isfinite(up_f), np.abs(up_f), 0.0))
    col = np.where(mag > 0.0, mag, 1.0)
    Ps = P * col[None, :] * col[:, None]
    qs = qv * col
    if len(G):
        Gs = G * col[None, :]
        rG = 1.0 / np.maximum(np.abs(Gs).max(axis=1, initial=0.0), 1e-8)
        Gs = Gs * rG[:, None]
        gs = g * rG
    else:
        Gs, gs, rG = G, g, np.zeros(0)
    if len(E):
        Es = E * col[None, :]
        rE = 1.0 / np.maximum(np.abs(Es).max(axis=1, initial=0.0), 1e-8)
        Es = Es * rE[:, None]
        es = e * rE
    else:
        Es, es, rE = E, e, np.zeros(0)

    zs, stats = _mehrotra(Ps, qs, Gs, gs, Es, es, max_iter,
                          box_lo=lo_f / col, box_hi=up_f / col)
    zf = zs * col
    if stats["lam"] is not None and len(rG):
        stats["lam"] = stats["lam"] * rG
    if stats["nu"] is not None and len(rE):
        stats["nu"] = stats["nu"] * rE
    if stats["status"] != "Optimal":
        # Certify feasibility with a phase-1 LP before reporting failure.
        lp = _phase1(G, g, E, e)
        if lp is not None and lp["infeasible"]:
            return QpSolution(z=np.zeros(n), status="Infeasible", obj=math.inf,
                              farkas_ray=lp["ray"], iterations=stats["iters"])
    z = np.zeros(n)
    z[fixed_mask] = fixed_vals
    z[free_idx] = zf
    obj = float(0.5 * zf @ P @ zf + qv @ zf + const)
    return QpSolution(z=z, status=stats["status"], obj=obj,
                      ineq_duals=stats["lam"], eq_duals=stats["nu"],
                      iterations=stats["iters"], shifted=stats["shifted"])


def _phase1(G, g, E, e):
    """LP feasibility check: min t s.t. Gz - t <= g, |Ez - e| <= t, t >= 0."""
    n = G.shape[1]
    rows = [np.hstack([G, -np.ones((G.shape[0], 1))])]
    rhs = [g]
    if len(e):
        rows.append(np.hstack([E, -np.ones((E.shape[0], 1))]))
        rhs.append(e)
        rows.append(np.hstack([-E, -np.ones((E.shape[0], 1))]))
        rhs.append(-e)
    A_ub = np.vstack(rows)
    b_ub = np.concatenate(rhs)
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    bounds = [(None, None)] * n + [(0, None)]
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        return None
    infeasible = res.fun > 1e-9
    ray = None
    if infeasible and res.ineqlin is not None:
        ray = -np.asarray(res.ineqlin.marginals)[: G.shape[0]]
    return {"infeasible": infeasible, "ray": ray}


def _start_point(P, qv, G, g, E, e, box_lo=None, box_hi=None):
    n, mi, me = len(qv), len(g), len(e)
    K = np.zeros((n + me, n + me))
    K[:n, :n] = P + np.eye(n)
    if me:
        K[:n, n:] = E.T
        K[n:, :n] = E
    rhs = np.concatenate([-qv, e])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    z = sol[:n]
    # Zero-curvature columns (e.g. cut epigraph variables) make the
    # unconstrained minimizer run to -q_i, which can violate bound rows by
    # orders of magnitude and poison the uniform slack shift below.  The
    # box bounds are already folded into G, so clipping only improves the
    # start.
    if box_lo is not None:
        z = np.clip(z, box_lo, box_hi)
    s_hat = g - G @ z if mi else np.zeros(0)
    if mi:
        shift = max(0.0, -1.5 * s_hat.min(initial=0.0)) + 1e-1
        s = s_hat + shift
        lam = np.ones(mi)
        mu = s @ lam / mi
        s += 0.5 * mu / lam.mean()
        lam += 0.5 * mu / s.mean()
    else:
        s = np.zeros(0)
        lam = np.zeros(0)
    nu = sol[n:]
    return z, s, lam, nu


def _mehrotra(P, qv, G, g, E, e, max_iter, box_lo=None, box_hi=None):
    n, mi, me = len(qv), len(g), len(e)
    scale = 1.0 + max(np.abs(P).max(initial=0.0), np.abs(qv).max(initial=0.0),
                      np.abs(G).max(initial=0.0), np.abs(g).max(initial=0.0),
                      np.abs(E).max(initial=0.0), np.abs(e).max(initial=0.0))
    # proximal regularization keeps the KKT matrix factorizable for
    # PSD-singular Hessians; report it only when the Hessian needed it
    try:
        np.linalg.cholesky(P + 1e-10 * scale * np.eye(n))
        shifted = False
    except np.linalg.LinAlgError:
        shifted = True
    Preg = P + PROX_SHIFT * scale * np.eye(n)

    z, s, lam, nu = _start_point(Preg, qv, G, g, E, e, box_lo, box_hi)

    def residuals(z, s, lam, nu):
        r_dual = Preg @ z + qv + (G.T @ lam if mi else 0.0) + (E.T @ nu if me else 0.0)
        r_pri = (G @ z + s - g) if mi else np.zeros(0)
        r_eq = (E @ z - e) if me else np.zeros(0)
        return r_dual, r_pri, r_eq

    status = "IterLimit"
    it = 0
    stall = 0
    best_err = math.inf
    best = (z, s, lam, nu)
    dim = n + mi + me
    for it in range(1, max_iter + 1):
        r_dual, r_pri, r_eq = residuals(z, s, lam, nu)
        mu = (s @ lam / mi) if mi else 0.0
        err = max(np.abs(r_dual).max(initial=0.0), np.abs(r_pri).max(initial=0.0),
                  np.abs(r_eq).max(initial=0.0))
        if not np.isfinite(err):
            break
        merit = max(err, mu * scale)
        if merit < best_err:
            best_err = merit
            best = (z, s, lam, nu)
            stall = 0
        else:
            stall += 1
        if err <= KKT_TOL * scale and mu <= KKT_TOL:
            status = "Optimal"
            break
        if stall > 100:
            break

        # augmented KKT system: better conditioned than condensed normal
        # equations when complementarity products are tiny
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            t = s / np.maximum(lam, 1e-300) if mi else np.zeros(0)
            t = np.clip(t, 1e-14, 1e14)
        K = np.zeros((dim, dim))
        K[:n, :n] = Preg
        if mi:
            K[:n, n:n + mi] = G.T
            K[n:n + mi, :n] = G
            K[n:n + mi, n:n + mi] = -np.diag(t)
        if me:
            K[:n, n + mi:] = E.T
            K[n + mi:, :n] = E
            K[n + mi:, n + mi:] = -1e-12 * np.eye(me)
        try:
            Kf = lu_factor(K)
        except (np.linalg.LinAlgError, ValueError):
            break

        def newton(rc):
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                mid = -r_pri + np.clip(rc / np.maximum(lam, 1e-300), -1e18, 1e18) \
                    if mi else np.zeros(0)
            rhs = np.concatenate([-r_dual, mid, -r_eq])
            sol = lu_solve(Kf, rhs)
            sol += lu_solve(Kf, rhs - K @ sol)  # one refinement pass
            dz = sol[:n]
            dlam = sol[n:n + mi]
            dnu = sol[n + mi:]
            if mi:
                with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                    ds = np.clip((-rc - s * dlam) / np.maximum(lam, 1e-300),
                                 -1e18, 1e18)
            else:
                ds = np.zeros(0)
            return dz, ds, dlam, dnu

        # affine (predictor) direction
        rc_aff = s * lam if mi else np.zeros(0)
        dz_a, ds_a, dlam_a, dnu_a = newton(rc_aff)
        alpha_p = _max_step(s, ds_a)
        alpha_d = _max_step(lam, dlam_a)
        if mi:
            mu_aff = ((s + alpha_p * ds_a) @ (lam + alpha_d * dlam_a)) / mi
            sigma = (mu_aff / max(mu, 1e-300)) ** 3
            rc = s * lam + ds_a * dlam_a - sigma * mu
        else:
            rc = rc_aff
        dz, ds, dlam, dnu = newton(rc)
        alpha_p = min(1.0, 0.99 * _max_step(s, ds))
        alpha_d = min(1.0, 0.99 * _max_step(lam, dlam))
        if max(alpha_p, alpha_d) < 1e-12:
            break
        z = z + alpha_p * dz
        s = s + alpha_p * ds
        lam = lam + alpha_d * dlam
        nu = nu + alpha_d * dnu

    if status != "Optimal":
        z, s, lam, nu = best
        r_dual, r_pri, r_eq = residuals(z, s, lam, nu)
        mu = (s @ lam / mi) if mi else 0.0
        err = max(np.abs(r_dual).max(initial=0.0), np.abs(r_pri).max(initial=0.0),
                  np.abs(r_eq).max(initial=0.0))
        # accept near-converged iterates on degenerate problems
        if err <= 1e2 * KKT_TOL * scale and mu <= 1e2 * KKT_TOL:
            status = "Optimal"
    return z, {"status": status, "lam": lam if mi else None,
               "nu": nu if me else None, "iters": it, "shifted": shifted}


def _max_step(x, dx):
    if len(x) == 0:
        return 1.0
    neg = dx < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-x[neg] / dx[neg])))
