"""First-order (ADMM) solver for cone programs over zero, nonnegative,
second-order, and PSD cones.

Problems are posed in the standard form

    minimize    objective . z
    subject to  M z + s = r,   s in K,

with K a product of cones in the fixed order zero, nonneg, SOC, PSD.  PSD
blocks live in scaled lower-triangular vectorization (off-diagonals times
sqrt(2)) so the cone is self-dual under the Euclidean inner product.  The
iteration is operator splitting on the homogeneous self-dual embedding, so
infeasibility and unboundedness come out as certificates rather than
failures.  Data is Ruiz-equilibrated before solving and every reported
quantity is unscaled back to the caller's coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from scqp import linalg


class UnknownSymbol(Exception):
    pass


@dataclass(frozen=True)
class ConeSpec:
    zero_dim: int = 0
    nonneg_dim: int = 0
    soc_dims: tuple[int, ...] = ()
    psd_dims: tuple[int, ...] = ()

    @property
    def total_dim(self) -> int:
        return (self.zero_dim + self.nonneg_dim + sum(self.soc_dims)
                + sum(s * (s + 1) // 2 for s in self.psd_dims))


@dataclass(frozen=True)
class VariableLayout:
    spans: dict[str, tuple[int, int]]

    def span(self, symbol: str) -> tuple[int, int]:
        if symbol not in self.spans:
            raise UnknownSymbol(symbol)
        return self.spans[symbol]


@dataclass(frozen=True)
class ConicProblem:
    objective: np.ndarray
    constraint_matrix: np.ndarray
    constraint_rhs: np.ndarray
    cones: ConeSpec
    layout: VariableLayout


@dataclass(frozen=True)
class ConicSolution:
    z: np.ndarray
    dual: np.ndarray
    slack: np.ndarray
    status: str  # Optimal | Infeasible | Unbounded | IterLimit
    primal_obj: float
    dual_obj: float
    residuals: tuple[float, float, float]  # (primal, dual, gap)
    iterations: int


@dataclass(frozen=True)
class ConicSettings:
    eps: float = 1e-7
    max_iter: int = 200000
    alpha: float = 1.5
    check_interval: int = 25
    ruiz_iters: int = 15
    anderson_memory: int = 10


def extract(sol: ConicSolution, layout: VariableLayout, symbol: str) -> np.ndarray:
    lo, hi = layout.span(symbol)
    return sol.z[lo:hi]


# ---------------------------------------------------------------------------
# svec helpers

def svec_indices(dim: int):
    rows, cols = np.tril_indices(dim)
    scale = np.where(rows == cols, 1.0, math.sqrt(2.0))
    return rows, cols, scale


def svec(mat: np.ndarray) -> np.ndarray:
    rows, cols, scale = svec_indices(mat.shape[0])
    return mat[rows, cols] * scale


def smat(vec: np.ndarray, dim: int) -> np.ndarray:
    rows, cols, scale = svec_indices(dim)
    out = np.zeros((dim, dim))
    out[rows, cols] = vec / scale
    out[cols, rows] = vec / scale
    return out


# ---------------------------------------------------------------------------
# cone projections

def _proj_soc(v: np.ndarray) -> np.ndarray:
    t, u = v[0], v[1:]
    nu = np.linalg.norm(u)
    if nu <= t:
        return v
    if nu <= -t:
        return np.zeros_like(v)
    a = 0.5 * (t + nu)
    out = np.empty_like(v)
    out[0] = a
    out[1:] = (a / nu) * u
    return out


def _proj_psd2_batch(a, c, d):
    """Projection of 2x2 symmetric [[a, c], [c, d]] batches onto the PSD cone."""
    half_tr = 0.5 * (a + d)
    rad = np.sqrt(0.25 * (a - d) ** 2 + c * c)
    lo, hi = half_tr - rad, half_tr + rad
    # Clip eigenvalues at zero: A+ = max(lo,0) P_lo + max(hi,0) P_hi.
    w_lo, w_hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    safe = np.maximum(rad, 1e-300)
    # Spectral projectors via A = half_tr I + rad U, U = (A - half_tr I)/rad.
    ua, uc = (a - half_tr) / safe, c / safe
    pa = w_hi * (1 + ua) / 2 + w_lo * (1 - ua) / 2
    pd = w_hi * (1 - ua) / 2 + w_lo * (1 + ua) / 2
    pc = (w_hi - w_lo) * uc / 2
    degen = rad < 1e-300
    if np.any(degen):
        pa = np.where(degen, w_hi, pa)
        pd = np.where(degen, w_hi, pd)
        pc = np.where(degen, 0.0, pc)
    return pa, pc, pd


class _ConeProjector:
    """Projection onto the dual-cone product (free x nonneg x SOC x PSD)."""

    def __init__(self, cones: ConeSpec):
        self.cones = cones
        pos = cones.zero_dim
        self.nonneg = slice(pos, pos + cones.nonneg_dim)
        pos += cones.nonneg_dim
        self.socs = []
        for dim in cones.soc_dims:
            self.socs.append(slice(pos, pos + dim))
            pos += dim
        self.psd1 = []  # 1x1 blocks degenerate to clipping
        self.psd2 = []  # 2x2 blocks handled as one batch
        self.psd_big = []
        for dim in cones.psd_dims:
            width = dim * (dim + 1) // 2
            seg = slice(pos, pos + width)
            if dim == 1:
                self.psd1.append(seg)
            elif dim == 2:
                self.psd2.append(seg)
            else:
                self.psd_big.append((seg, dim))
            pos += width
        self.total = pos
        if self.psd2:
            starts = np.array([s.start for s in self.psd2])
            self._psd2_a = starts
            self._psd2_c = starts + 1
            self._psd2_d = starts + 2

    def project(self, w: np.ndarray) -> np.ndarray:
        out = w.copy()
        out[self.nonneg] = np.maximum(out[self.nonneg], 0.0)
        for seg in self.socs:
            out[seg] = _proj_soc(out[seg])
        for seg in self.psd1:
            out[seg] = np.maximum(out[seg], 0.0)
        if self.psd2:
            a = out[self._psd2_a]
            c = out[self._psd2_c] / math.sqrt(2.0)
            d = out[self._psd2_d]
            pa, pc, pd = _proj_psd2_batch(a, c, d)
            out[self._psd2_a] = pa
            out[self._psd2_c] = pc * math.sqrt(2.0)
            out[self._psd2_d] = pd
        for seg, dim in self.psd_big:
            out[seg] = svec(linalg.psd_project(smat(out[seg], dim)))
        return out


# ---------------------------------------------------------------------------
# equilibration

def _ruiz_equilibrate(M: np.ndarray, cones: ConeSpec, iters: int):
    """Row/column equilibration; rows of a SOC/PSD block share one scale so
    the scaled slack stays in the same cone."""
    k, nvar = M.shape
    block_starts = []
    pos = 0
    for _ in range(cones.zero_dim + cones.nonneg_dim):
        block_starts.append(pos)
        pos += 1
    for dim in cones.soc_dims:
        block_starts.append(pos)
        pos += dim
    for dim in cones.psd_dims:
        block_starts.append(pos)
        pos += dim * (dim + 1) // 2
    starts = np.array(block_starts, dtype=int) if block_starts else np.zeros(0, dtype=int)

    D = np.ones(k)
    E = np.ones(nvar)
    work = M.copy()
    for _ in range(iters):
        if k:
            row = np.abs(work).max(axis=1)
            if len(starts):
                block_max = np.maximum.reduceat(row, starts)
                widths = np.diff(np.append(starts, k))
                row = np.repeat(block_max, widths)
            row = np.where(row > 1e-12, row, 1.0)
            dr = 1.0 / np.sqrt(row)
            work *= dr[:, None]
            D *= dr
        col = np.abs(work).max(axis=0)
        col = np.where(col > 1e-12, col, 1.0)
        de = 1.0 / np.sqrt(col)
        work *= de[None, :]
        E *= de
    return work, D, E


# ---------------------------------------------------------------------------
# Anderson acceleration

class _Anderson:
    """Type-II Anderson extrapolation over a fixed-point map, with history
    dropped whenever a candidate step fails its safeguard."""

    def __init__(self, memory: int):
        self.memory = memory
        self.xs: list[np.ndarray] = []
        self.fxs: list[np.ndarray] = []

    def push(self, x: np.ndarray, fx: np.ndarray) -> None:
        self.xs.append(x)
        self.fxs.append(fx)
        if len(self.xs) > self.memory + 1:
            self.xs.pop(0)
            self.fxs.pop(0)

    def reset(self) -> None:
        self.xs.clear()
        self.fxs.clear()

    def candidate(self) -> np.ndarray | None:
        if len(self.xs) < 2:
            return None
        residuals = np.column_stack(
            [fx - x for fx, x in zip(self.fxs, self.xs)])
        d_res = np.diff(residuals, axis=1)
        try:
            gamma, *_ = np.linalg.lstsq(d_res, residuals[:, -1], rcond=None)
        except np.linalg.LinAlgError:
            return None
        d_fx = np.diff(np.column_stack(self.fxs), axis=1)
        cand = self.fxs[-1] - d_fx @ gamma
        if not np.all(np.isfinite(cand)):
            return None
        return cand


# ---------------------------------------------------------------------------
# solver

def solve_conic(p: ConicProblem, settings: ConicSettings | None = None) -> ConicSolution:
    """Operator-splitting solve of the cone program.

    Optimal means all (relative) KKT residuals are below settings.eps.
    IterLimit returns the last iterate with its residuals; the caller
    decides whether the partial answer is usable.
    """
    settings = settings or ConicSettings()
    q = np.asarray(p.objective, dtype=float)
    M = np.asarray(p.constraint_matrix, dtype=float)
    r = np.asarray(p.constraint_rhs, dtype=float)
    k, nvar = M.shape
    if p.cones.total_dim != k or len(q) != nvar or len(r) != k:
        raise ValueError("inconsistent conic problem dimensions")

    Ms, D, E = _ruiz_equilibrate(M, p.cones, settings.ruiz_iters)
    rs = D * r
    qs = E * q
    sc_r = 1.0 / max(float(np.linalg.norm(rs)), 1e-10) if np.any(rs) else 1.0
    sc_q = 1.0 / max(float(np.linalg.norm(qs)), 1e-10) if np.any(qs) else 1.0
    rs = rs * sc_r
    qs = qs * sc_q

    proj = _ConeProjector(p.cones)

    gram = Ms.T @ Ms
    gram[np.diag_indices(nvar)] += 1.0
    chol = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)

    def _solve_block(w1, w2):
        hx = scipy.linalg.cho_solve(chol, w1 - Ms.T @ w2, check_finite=False)
        return hx, w2 + Ms @ hx

    gx, gy = _solve_block(qs, rs)
    g_den = 1.0 + qs @ gx + rs @ gy

    def lin_solve(w):
        w1, w2, w3 = w[:nvar], w[nvar:nvar + k], w[-1]
        hx, hy = _solve_block(w1, w2)
        p_tau = (w3 + qs @ hx + rs @ hy) / g_den
        return np.concatenate([hx - p_tau * gx, hy - p_tau * gy, [p_tau]])

    dim = nvar + k + 1
    u = np.zeros(dim)
    v = np.zeros(dim)
    u[-1] = 1.0
    v[-1] = 1.0

    norm_r = 1.0 + np.linalg.norm(r)
    norm_q = 1.0 + np.linalg.norm(q)

    def _unscale(uu, vv):
        tau = uu[-1]
        z = E * uu[:nvar] / (tau * sc_r) if tau > 0 else np.zeros(nvar)
        y = D * uu[nvar:nvar + k] / (tau * sc_q) if tau > 0 else np.zeros(k)
        s = (vv[nvar:nvar + k] / D) / (tau * sc_r) if tau > 0 else np.zeros(k)
        return z, y, s

    def _residuals(z, y, s):
        pres = np.linalg.norm(M @ z + s - r) / norm_r
        dres = np.linalg.norm(M.T @ y + q) / norm_q
        pobj = float(q @ z)
        dobj = float(-(r @ y))
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        return pres, dres, gap, pobj, dobj

    alpha = settings.alpha

    def sweep(state: np.ndarray) -> np.ndarray:
        su = state[:dim]
        sv = state[dim:]
        ut = lin_solve(su + sv)
        ut = alpha * ut + (1.0 - alpha) * su
        w = ut - sv
        su_new = w.copy()
        su_new[nvar:nvar + k] = proj.project(w[nvar:nvar + k])
        su_new[-1] = max(w[-1], 0.0)
        return np.concatenate([su_new, sv - ut + su_new])

    # The splitting map is positively homogeneous on the embedding, so the
    # iterate can be renormalized freely; Anderson extrapolation over it is
    # safeguarded by reverting any step whose fixed-point residual grows.
    aa = _Anderson(settings.anderson_memory)
    state = np.concatenate([u, v])
    state *= math.sqrt(2.0 * dim) / np.linalg.norm(state)
    fallback = None
    fallback_res = math.inf
    status = "IterLimit"
    best = None
    it = 0
    for it in range(1, settings.max_iter + 1):
        fx = sweep(state)
        res = float(np.linalg.norm(fx - state))
        if fallback is not None and res > fallback_res:
            state = fallback
            fallback = None
            aa.reset()
            fx = sweep(state)
            res = float(np.linalg.norm(fx - state))
        aa.push(state, fx)
        cand = aa.candidate() if settings.anderson_memory > 0 else None
        if cand is not None:
            fallback, fallback_res = fx, res
            state = cand
        else:
            fallback = None
            state = fx
        nrm = np.linalg.norm(state)
        if nrm > 0:
            state *= math.sqrt(2.0 * dim) / nrm
        u = fx[:dim]
        v = fx[dim:]

        if it % settings.check_interval == 0 or it == settings.max_iter:
            tau = u[-1]
            if tau > 1e-12:
                z, y, s = _unscale(u, v)
                pres, dres, gap, pobj, dobj = _residuals(z, y, s)
                best = (z, y, s, pres, dres, gap, pobj, dobj)
                if max(pres, dres, gap) <= settings.eps:
                    status = "Optimal"
                    break
            # certificate checks for the degenerate (tau -> 0) branch
            y_c = D * u[nvar:nvar + k]
            by = float(r @ y_c)
            if by < -1e-12:
                if np.linalg.norm(M.T @ y_c) * norm_r <= settings.eps * (-by):
                    status = "Infeasible"
                    y_cert = y_c / (-by)
                    return ConicSolution(
                        z=np.zeros(nvar), dual=y_cert, slack=np.zeros(k),
                        status=status, primal_obj=math.inf, dual_obj=math.inf,
                        residuals=(math.inf, 0.0, math.inf), iterations=it)
            x_c = E * u[:nvar]
            cx = float(q @ x_c)
            if cx < -1e-12:
                s_c = v[nvar:nvar + k] / D
                if np.linalg.norm(M @ x_c + s_c) * norm_q <= settings.eps * (-cx):
                    status = "Unbounded"
                    return ConicSolution(
                        z=x_c / (-cx), dual=np.zeros(k), slack=s_c / (-cx),
                        status=status, primal_obj=-math.inf, dual_obj=-math.inf,
                        residuals=(0.0, math.inf, math.inf), iterations=it)

    if best is None:
        z, y, s = _unscale(u, v)
        pres, dres, gap, pobj, dobj = _residuals(z, y, s)
        best = (z, y, s, pres, dres, gap, pobj, dobj)
    z, y, s, pres, dres, gap, pobj, dobj = best
    return ConicSolution(z=z, dual=y, slack=s, status=status,
                         primal_obj=pobj, dual_obj=dobj,
                         residuals=(pres, dres, gap), iterations=it)
