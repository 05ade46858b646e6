"""Reformulation builders and parameter machinery.

Covers the perspective parameter heuristics, the three parameter SDPs
(best rho; best lift pair (u, v); best QCR combination (u, v, w, t)), the
SOCP form of the perspective relaxation, the lift recovery maps between
rho and (u, v), perspective-cut separation, and the bound-comparison
driver.  The production pipeline for lift parameters is: solve the rho
SDP, solve one SOCP relaxation at rho*, then recover (u, v) in closed
form; the larger lift SDP is kept as a cross-validation oracle.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from scqp import linalg
from scqp import qp as qpmod
from scqp.conic import (ConeSpec, ConicProblem, ConicSettings, ConicSolution,
                        VariableLayout, solve_conic, svec)
from scqp.model import Instance, full_inequalities


class ConvexityViolation(Exception):
    pass


class DegenerateInput(Exception):
    pass


@dataclass(frozen=True)
class PerspectiveParams:
    rho: np.ndarray


@dataclass(frozen=True)
class LiftParams:
    u: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class QcrParams:
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    t: np.ndarray


@dataclass
class MiqpModel:
    """Linearly constrained MIQP over a named variable layout.

    Objective is z^T hessian z + linear^T z + constant.  The cut pool is
    growable; rows there are ordinary linear inequalities cut_row . z <= rhs.
    """

    hessian: np.ndarray
    linear: np.ndarray
    constant: float
    spans: dict[str, tuple[int, int]]
    ineq_matrix: np.ndarray
    ineq_rhs: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    binary_mask: np.ndarray
    cut_rows: list[np.ndarray] = field(default_factory=list)
    cut_rhs: list[float] = field(default_factory=list)
    cut_tags: list[tuple[int, float]] = field(default_factory=list)  # (i, xbar)

    @property
    def nvar(self) -> int:
        return len(self.linear)

    def span(self, name: str) -> tuple[int, int]:
        return self.spans[name]

    def objective_at(self, z: np.ndarray) -> float:
        return float(z @ self.hessian @ z + self.linear @ z + self.constant)

    def add_cut(self, row: np.ndarray, rhs: float, tag: tuple[int, float]) -> bool:
        """Append a cut unless an equivalent one (same i, same xbar within
        1e-9) is already pooled."""
        for (i, xbar) in self.cut_tags:
            if i == tag[0] and abs(xbar - tag[1]) <= 1e-9:
                return False
        self.cut_rows.append(np.asarray(row, dtype=float))
        self.cut_rhs.append(float(rhs))
        self.cut_tags.append(tag)
        return True

    def relaxation_qp(self) -> qpmod.QpProblem:
        rows = [self.ineq_matrix] + [r[None, :] for r in self.cut_rows]
        rhs = [self.ineq_rhs] + [np.array([v]) for v in self.cut_rhs]
        return qpmod.QpProblem(
            hessian=self.hessian, linear=self.linear, constant=self.constant,
            ineq_matrix=np.vstack(rows), ineq_rhs=np.concatenate(rhs),
            eq_matrix=self.eq_matrix if len(self.eq_matrix) else None,
            eq_rhs=self.eq_rhs if len(self.eq_rhs) else None,
            lower=self.lower.copy(), upper=self.upper.copy())


@dataclass
class BoundReport:
    bound_plain: float | None = None
    bound_pr: float | None = None
    bound_lcr: float | None = None
    bound_qcr: float | None = None
    opt: float | None = None
    impr: float | None = None
    rho: np.ndarray | None = None
    lift: LiftParams | None = None
    timings: dict[str, float] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# shared assembly pieces

def _semicontinuity_rows(inst: Instance, nvar: int, x0: int, y0: int):
    """Rows a_i y_i - x_i <= 0 and x_i - b_i y_i <= 0."""
    n = inst.n
    G = np.zeros((2 * n, nvar))
    rhs = np.zeros(2 * n)
    for i in range(n):
        G[2 * i, x0 + i] = -1.0
        G[2 * i, y0 + i] = inst.lb[i]
        G[2 * i + 1, x0 + i] = 1.0
        G[2 * i + 1, y0 + i] = -inst.ub[i]
    return G, rhs


def _linear_rows(inst: Instance, nvar: int, x0: int, y0: int):
    GA, GB, gd = full_inequalities(inst)
    G = np.zeros((len(gd), nvar))
    G[:, x0:x0 + inst.n] = GA
    G[:, y0:y0 + inst.n] = GB
    return G, gd


def _stack_model(inst: Instance, hessian, linear, constant, spans, extra_lower,
                 extra_upper, extra_names):
    """Assemble the common constraint skeleton for (x, y [, extras])."""
    n = inst.n
    nvar = len(linear)
    Gl, gl = _linear_rows(inst, nvar, 0, n)
    Gs, gs = _semicontinuity_rows(inst, nvar, 0, n)
    lower = np.concatenate([np.minimum(inst.lb, 0.0), np.zeros(n), extra_lower])
    upper = np.concatenate([np.maximum(inst.ub, 0.0), np.ones(n), extra_upper])
    binary = np.zeros(nvar, dtype=bool)
    binary[n:2 * n] = True
    return MiqpModel(
        hessian=hessian, linear=linear, constant=constant, spans=spans,
        ineq_matrix=np.vstack([Gl, Gs]), ineq_rhs=np.concatenate([gl, gs]),
        eq_matrix=np.zeros((0, nvar)), eq_rhs=np.zeros(0),
        lower=lower, upper=upper, binary_mask=binary)


def build_plain(inst: Instance) -> MiqpModel:
    """The instance itself as an MIQP over (x, y), equalities paired."""
    n = inst.n
    H = np.zeros((2 * n, 2 * n))
    H[:n, :n] = inst.Q
    linear = np.concatenate([inst.c, inst.h])
    return _stack_model(inst, H, linear, 0.0,
                        {"x": (0, n), "y": (n, 2 * n)},
                        np.zeros(0), np.zeros(0), ())


def _lift_hessian(Q: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    n = len(u)
    H = np.zeros((2 * n, 2 * n))
    H[:n, :n] = Q
    H[:n, n:] = np.diag(u / 2.0)
    H[n:, :n] = np.diag(u / 2.0)
    H[n:, n:] = np.diag(v)
    return H


def _repair_convexity(Q: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Bump v to absorb marginal indefiniteness left by solver inexactness."""
    H = _lift_hessian(Q, u, v)
    scale = 1.0 + np.abs(H).max(initial=0.0)
    lam = linalg.min_eigenvalue(H)
    if lam >= -linalg.PSD_TOL_FACTOR * scale:
        return u, v
    if lam > -1e-5 * scale:
        v = np.where(v > 0, v - lam, v)
        if linalg.min_eigenvalue(_lift_hessian(Q, u, v)) >= -linalg.PSD_TOL_FACTOR * scale:
            return u, v
    raise ConvexityViolation(f"lifted Hessian min eigenvalue {lam:.3e}")


def build_lcr(inst: Instance, lp: LiftParams) -> MiqpModel:
    """Lifted reformulation: objective f + sum_i (u_i x_i y_i + v_i y_i^2
    - u_i x_i - v_i y_i), same feasible set as the plain model."""
    n = inst.n
    u, v = _repair_convexity(inst.Q, np.asarray(lp.u, float), np.asarray(lp.v, float))
    H = _lift_hessian(inst.Q, u, v)
    linear = np.concatenate([inst.c - u, inst.h - v])
    return _stack_model(inst, H, linear, 0.0,
                        {"x": (0, n), "y": (n, 2 * n)},
                        np.zeros(0), np.zeros(0), ())


def build_pc(inst: Instance, pp: PerspectiveParams) -> MiqpModel:
    """Perspective-cut model over (x, y, phi), seeded with the two cuts at
    xbar = a_i and xbar = b_i plus phi >= 0."""
    n = inst.n
    rho = np.asarray(pp.rho, dtype=float)
    H = np.zeros((3 * n, 3 * n))
    H[:n, :n] = inst.Q - np.diag(rho)
    linear = np.concatenate([inst.c, inst.h, rho])
    # phi_i <= max(a_i^2, b_i^2) never cuts the optimum (the cut region is
    # upward-closed in phi and rho >= 0) but keeps the relaxation QP
    # box-bounded, which the interior-point solver needs on flat directions
    phi_cap = np.maximum(inst.lb ** 2, inst.ub ** 2)
    model = _stack_model(inst, H, linear, 0.0,
                         {"x": (0, n), "y": (n, 2 * n), "phi": (2 * n, 3 * n)},
                         np.zeros(n), phi_cap, ("phi",))
    for i in range(n):
        for xbar in (inst.lb[i], inst.ub[i]):
            row = np.zeros(3 * n)
            row[i] = 2.0 * xbar
            row[n + i] = -xbar * xbar
            row[2 * n + i] = -1.0
            model.add_cut(row, 0.0, (i, float(xbar)))
    return model


def build_qcr(inst: Instance, params: QcrParams) -> MiqpModel:
    """QCR-augmented lift over (x, y, s): adds weighted squared residuals of
    the equality block and the slacked inequalities; both vanish on the
    feasible set, so binary-feasible objectives match f exactly."""
    n = inst.n
    GA, GB, gd = full_inequalities(inst, pair_equalities=False)
    mbar = len(gd)
    eq = inst.equality
    E = eq.E if eq is not None else np.zeros((0, n))
    F = eq.F if eq is not None else np.zeros((0, n))
    g = eq.g if eq is not None else np.zeros(0)
    Meq = len(g)
    u = np.asarray(params.u, float)
    v = np.asarray(params.v, float)
    w = np.asarray(params.w, float).reshape(Meq)
    t = np.asarray(params.t, float).reshape(mbar)

    nvar = 2 * n + mbar
    H = np.zeros((nvar, nvar))
    H[:n, :n] = inst.Q + (E.T * w) @ E + (GA.T * t) @ GA
    H[:n, n:2 * n] = np.diag(u / 2.0) + (E.T * w) @ F + (GA.T * t) @ GB
    H[n:2 * n, :n] = H[:n, n:2 * n].T
    H[:n, 2 * n:] = GA.T * t
    H[2 * n:, :n] = H[:n, 2 * n:].T
    H[n:2 * n, n:2 * n] = np.diag(v) + (F.T * w) @ F + (GB.T * t) @ GB
    H[n:2 * n, 2 * n:] = GB.T * t
    H[2 * n:, n:2 * n] = H[n:2 * n, 2 * n:].T
    H[2 * n:, 2 * n:] = np.diag(t)

    scale = 1.0 + np.abs(H).max(initial=0.0)
    lam = linalg.min_eigenvalue(H)
    if lam < -linalg.PSD_TOL_FACTOR * scale:
        if lam > -1e-5 * scale:
            v = np.where(v > 0, v - lam, v)
            H[n:2 * n, n:2 * n] = np.diag(v) + (F.T * w) @ F + (GB.T * t) @ GB
            lam = linalg.min_eigenvalue(H)
        if lam < -linalg.PSD_TOL_FACTOR * scale:
            raise ConvexityViolation(f"QCR Hessian min eigenvalue {lam:.3e}")

    linear = np.concatenate([
        inst.c - u - 2.0 * E.T @ (w * g) - 2.0 * GA.T @ (t * gd),
        inst.h - v - 2.0 * F.T @ (w * g) - 2.0 * GB.T @ (t * gd),
        -2.0 * t * gd,
    ])
    constant = float(g @ (w * g) + gd @ (t * gd))

    Gs, gs = _semicontinuity_rows(inst, nvar, 0, n)
    eq_rows = np.zeros((mbar + Meq, nvar))
    eq_rows[:mbar, :n] = GA
    eq_rows[:mbar, n:2 * n] = GB
    eq_rows[:mbar, 2 * n:] = np.eye(mbar)
    eq_rows[mbar:, :n] = E
    eq_rows[mbar:, n:2 * n] = F
    eq_rhs = np.concatenate([gd, g])

    lower = np.concatenate([np.minimum(inst.lb, 0.0), np.zeros(n), np.zeros(mbar)])
    upper = np.concatenate([np.maximum(inst.ub, 0.0), np.ones(n), np.full(mbar, np.inf)])
    binary = np.zeros(nvar, dtype=bool)
    binary[n:2 * n] = True
    return MiqpModel(
        hessian=H, linear=linear, constant=constant,
        spans={"x": (0, n), "y": (n, 2 * n), "s": (2 * n, nvar)},
        ineq_matrix=Gs, ineq_rhs=gs,
        eq_matrix=eq_rows, eq_rhs=eq_rhs,
        lower=lower, upper=upper, binary_mask=binary)


# ---------------------------------------------------------------------------
# rho heuristics

def rho_uniform_mineig(inst: Instance) -> PerspectiveParams:
    lam = max(0.0, linalg.min_eigenvalue(inst.Q))
    return PerspectiveParams(rho=np.full(inst.n, lam))


def _sanitize_rho(Q: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Project a candidate rho onto validity (rho >= 0, Q - diag(rho) PSD).

    The uniform shift must iterate: components clipped at zero absorb none
    of it, so a single pass can leave the matrix marginally indefinite."""
    rho = np.maximum(np.asarray(rho, dtype=float), 0.0)
    scale = 1.0 + np.abs(Q).max(initial=0.0)
    for _ in range(100):
        lam = linalg.min_eigenvalue(Q - np.diag(rho))
        if lam >= -1e-10 * scale:
            return rho
        rho = np.maximum(rho + lam, 0.0)
    return np.zeros_like(rho)  # always-valid fallback (Q itself is PSD)


def rho_sdp_simple(inst: Instance,
                   settings: ConicSettings | None = None) -> PerspectiveParams:
    """max e^T rho s.t. rho >= 0, Q - diag(rho) PSD."""
    n = inst.n
    blocks = []
    nonneg = -np.eye(n)
    psd_cols = np.zeros((n * (n + 1) // 2, n))
    for i in range(n):
        T = np.zeros((n, n))
        T[i, i] = -1.0
        psd_cols[:, i] = -svec(T)
    M = np.vstack([nonneg, psd_cols])
    r = np.concatenate([np.zeros(n), svec(inst.Q)])
    prob = ConicProblem(objective=-np.ones(n), constraint_matrix=M,
                        constraint_rhs=r,
                        cones=ConeSpec(nonneg_dim=n, psd_dims=(n,)),
                        layout=VariableLayout({"rho": (0, n)}))
    sol = solve_conic(prob, settings)
    if sol.status != "Optimal":
        return rho_uniform_mineig(inst)
    rho = _sanitize_rho(inst.Q, sol.z)
    fallback = rho_uniform_mineig(inst)
    if rho.sum() < fallback.rho.sum() - 1e-6:
        return fallback
    return PerspectiveParams(rho=rho)


# ---------------------------------------------------------------------------
# SDP assemblies

class _SdpAssembler:
    """Accumulates nonneg rows and affine PSD blocks into conic standard form."""

    def __init__(self, nvar: int):
        self.nvar = nvar
        self.nonneg_rows: list[np.ndarray] = []
        self.nonneg_rhs: list[float] = []
        self.psd_blocks: list[tuple[np.ndarray, list[tuple[int, np.ndarray]]]] = []

    def nonneg_var(self, lo: int, hi: int) -> None:
        for j in range(lo, hi):
            row = np.zeros(self.nvar)
            row[j] = 1.0
            self.nonneg_rows.append(row)
            self.nonneg_rhs.append(0.0)

    def psd(self, S0: np.ndarray, terms: list[tuple[int, np.ndarray]]) -> None:
        self.psd_blocks.append((S0, terms))

    def assemble(self, objective: np.ndarray, layout: dict) -> ConicProblem:
        M_parts, r_parts, psd_dims = [], [], []
        if self.nonneg_rows:
            M_parts.append(-np.vstack(self.nonneg_rows))
            r_parts.append(-np.array(self.nonneg_rhs))
        for S0, terms in self.psd_blocks:
            dim = S0.shape[0]
            width = dim * (dim + 1) // 2
            Mb = np.zeros((width, self.nvar))
            for j, T in terms:
                Mb[:, j] -= svec(T)
            M_parts.append(Mb)
            r_parts.append(svec(S0))
            psd_dims.append(dim)
        cones = ConeSpec(nonneg_dim=len(self.nonneg_rows),
                         psd_dims=tuple(psd_dims))
        return ConicProblem(objective=objective,
                            constraint_matrix=np.vstack(M_parts),
                            constraint_rhs=np.concatenate(r_parts),
                            cones=cones, layout=VariableLayout(layout))


def _spans(sizes: dict[str, int]) -> dict[str, tuple[int, int]]:
    out, pos = {}, 0
    for name, size in sizes.items():
        out[name] = (pos, pos + size)
        pos += size
    return out


def build_sdp_l(inst: Instance) -> ConicProblem:
    """Dual SDP whose optimum tau* is the best perspective-relaxation bound
    and whose rho block is the maximizing perspective parameter."""
    n = inst.n
    GA, GB, gd = full_inequalities(inst)
    mbar = len(gd)
    spans = _spans({"rho": n, "mu": n, "eta": mbar, "pi": n, "lambda": n, "tau": 1})
    nvar = spans["tau"][1]
    asm = _SdpAssembler(nvar)
    for name in ("rho", "mu", "eta", "pi"):
        asm.nonneg_var(*spans[name])
    rho0, mu0 = spans["rho"][0], spans["mu"][0]
    eta0, pi0, lam0 = spans["eta"][0], spans["pi"][0], spans["lambda"][0]
    tau = spans["tau"][0]

    for i in range(n):
        S0 = np.array([[0.0, inst.c[i] / 2.0], [inst.c[i] / 2.0, inst.h[i]]])
        terms = [
            (rho0 + i, np.array([[1.0, 0.0], [0.0, 0.0]])),
            (mu0 + i, np.array([
                [1.0, -(inst.lb[i] + inst.ub[i]) / 2.0],
                [-(inst.lb[i] + inst.ub[i]) / 2.0, inst.lb[i] * inst.ub[i]]])),
            (lam0 + i, np.array([[0.0, -0.5], [-0.5, 0.0]])),
            (pi0 + i, np.array([[0.0, 0.0], [0.0, -1.0]])),
        ]
        for j in range(mbar):
            if GB[j, i] != 0.0:
                terms.append((eta0 + j, np.array([[0.0, 0.0], [0.0, GB[j, i]]])))
        asm.psd(S0, terms)

    big = np.zeros((n + 1, n + 1))
    big[:n, :n] = inst.Q
    terms = []
    for i in range(n):
        T = np.zeros((n + 1, n + 1))
        T[i, i] = -1.0
        terms.append((rho0 + i, T))
        T = np.zeros((n + 1, n + 1))
        T[i, n] = T[n, i] = 0.5
        terms.append((lam0 + i, T))
        T = np.zeros((n + 1, n + 1))
        T[n, n] = -1.0
        terms.append((pi0 + i, T))
    for j in range(mbar):
        T = np.zeros((n + 1, n + 1))
        T[:n, n] = GA[j] / 2.0
        T[n, :n] = GA[j] / 2.0
        T[n, n] = -gd[j]
        terms.append((eta0 + j, T))
    T = np.zeros((n + 1, n + 1))
    T[n, n] = -1.0
    terms.append((tau, T))
    asm.psd(big, terms)

    objective = np.zeros(nvar)
    objective[tau] = -1.0  # maximize tau
    return asm.assemble(objective, spans)


def build_sdp_q(inst: Instance) -> ConicProblem:
    """Dual SDP over the lift pair (u, v); tau* equals the best lifted
    continuous-relaxation bound.  Retained as a cross-validation oracle for
    the cheaper rho-SDP + SOCP recovery path."""
    n = inst.n
    GA, GB, gd = full_inequalities(inst)
    mbar = len(gd)
    spans = _spans({"u": n, "v": n, "eta": mbar, "mu": n, "sigma": n,
                    "lambda": n, "pi": n, "tau": 1})
    nvar = spans["tau"][1]
    asm = _SdpAssembler(nvar)
    for name in ("eta", "mu", "sigma", "lambda", "pi"):
        asm.nonneg_var(*spans[name])
    u0, v0, eta0 = spans["u"][0], spans["v"][0], spans["eta"][0]
    mu0, sig0 = spans["mu"][0], spans["sigma"][0]
    lam0, pi0, tau = spans["lambda"][0], spans["pi"][0], spans["tau"][0]

    dim = 2 * n + 1
    S0 = np.zeros((dim, dim))
    S0[:n, :n] = inst.Q
    S0[:n, 2 * n] = inst.c / 2.0
    S0[2 * n, :n] = inst.c / 2.0
    S0[n:2 * n, 2 * n] = inst.h / 2.0
    S0[2 * n, n:2 * n] = inst.h / 2.0

    def entry(p, q, val):
        T = np.zeros((dim, dim))
        T[p, q] = val
        if p != q:
            T[q, p] = val
        return T

    terms = []
    for i in range(n):
        terms.append((u0 + i, entry(i, n + i, 0.5) + entry(i, 2 * n, -0.5)))
        terms.append((v0 + i, entry(n + i, n + i, 1.0) + entry(n + i, 2 * n, -0.5)))
        terms.append((mu0 + i, entry(i, 2 * n, -0.5)
                      + entry(n + i, 2 * n, inst.lb[i] / 2.0)))
        terms.append((sig0 + i, entry(i, 2 * n, 0.5)
                      + entry(n + i, 2 * n, -inst.ub[i] / 2.0)))
        terms.append((lam0 + i, entry(n + i, 2 * n, -0.5)))
        terms.append((pi0 + i, entry(n + i, 2 * n, 0.5) + entry(2 * n, 2 * n, -1.0)))
    for j in range(mbar):
        T = np.zeros((dim, dim))
        T[:n, 2 * n] = GA[j] / 2.0
        T[2 * n, :n] = GA[j] / 2.0
        T[n:2 * n, 2 * n] += GB[j] / 2.0
        T[2 * n, n:2 * n] += GB[j] / 2.0
        T[2 * n, 2 * n] = -gd[j]
        terms.append((eta0 + j, T))
    terms.append((tau, entry(2 * n, 2 * n, -1.0)))
    asm.psd(S0, terms)

    objective = np.zeros(nvar)
    objective[tau] = -1.0
    return asm.assemble(objective, spans)


def build_sdp_a(inst: Instance) -> ConicProblem:
    """Dual SDP for the QCR-augmented lift over (u, v, w, t); requires the
    native equality block (possibly empty)."""
    n = inst.n
    GA, GB, gd = full_inequalities(inst, pair_equalities=False)
    mbar = len(gd)
    eq = inst.equality
    E = eq.E if eq is not None else np.zeros((0, n))
    F = eq.F if eq is not None else np.zeros((0, n))
    g = eq.g if eq is not None else np.zeros(0)
    Meq = len(g)

    spans = _spans({"u": n, "v": n, "w": Meq, "t": mbar, "eta": mbar,
                    "zeta": Meq, "delta": mbar, "mu": n, "sigma": n,
                    "lambda": n, "pi": n, "tau": 1})
    nvar = spans["tau"][1]
    asm = _SdpAssembler(nvar)
    for name in ("delta", "mu", "sigma", "lambda", "pi"):
        asm.nonneg_var(*spans[name])
    u0, v0, w0, t0 = (spans[k][0] for k in ("u", "v", "w", "t"))
    eta0, zeta0, del0 = (spans[k][0] for k in ("eta", "zeta", "delta"))
    mu0, sig0, lam0, pi0 = (spans[k][0] for k in ("mu", "sigma", "lambda", "pi"))
    tau = spans["tau"][0]

    dim = 2 * n + mbar + 1
    last = dim - 1
    S0 = np.zeros((dim, dim))
    S0[:n, :n] = inst.Q
    S0[:n, last] = inst.c / 2.0
    S0[last, :n] = inst.c / 2.0
    S0[n:2 * n, last] = inst.h / 2.0
    S0[last, n:2 * n] = inst.h / 2.0

    terms = []

    def entry(p, q, val):
        T = np.zeros((dim, dim))
        T[p, q] = val
        if p != q:
            T[q, p] = val
        return T

    for i in range(n):
        terms.append((u0 + i, entry(i, n + i, 0.5) + entry(i, last, -0.5)))
        terms.append((v0 + i, entry(n + i, n + i, 1.0) + entry(n + i, last, -0.5)))
        terms.append((mu0 + i, entry(i, last, -0.5)
                      + entry(n + i, last, inst.lb[i] / 2.0)))
        terms.append((sig0 + i, entry(i, last, 0.5)
                      + entry(n + i, last, -inst.ub[i] / 2.0)))
        terms.append((lam0 + i, entry(n + i, last, -0.5)))
        terms.append((pi0 + i, entry(n + i, last, 0.5) + entry(last, last, -1.0)))
    for k in range(Meq):
        T = np.zeros((dim, dim))
        T[:n, :n] = np.outer(E[k], E[k])
        T[:n, n:2 * n] = np.outer(E[k], F[k])
        T[n:2 * n, :n] = np.outer(F[k], E[k])
        T[n:2 * n, n:2 * n] = np.outer(F[k], F[k])
        T[:n, last] += -g[k] * E[k]
        T[last, :n] += -g[k] * E[k]
        T[n:2 * n, last] += -g[k] * F[k]
        T[last, n:2 * n] += -g[k] * F[k]
        T[last, last] = g[k] * g[k]
        terms.append((w0 + k, T))
        Tz = np.zeros((dim, dim))
        Tz[:n, last] = E[k] / 2.0
        Tz[last, :n] = E[k] / 2.0
        Tz[n:2 * n, last] += F[k] / 2.0
        Tz[last, n:2 * n] += F[k] / 2.0
        Tz[last, last] = -g[k]
        terms.append((zeta0 + k, Tz))
    for j in range(mbar):
        T = np.zeros((dim, dim))
        T[:n, :n] = np.outer(GA[j], GA[j])
        T[:n, n:2 * n] = np.outer(GA[j], GB[j])
        T[n:2 * n, :n] = np.outer(GB[j], GA[j])
        T[n:2 * n, n:2 * n] = np.outer(GB[j], GB[j])
        T[:n, 2 * n + j] += GA[j]
        T[2 * n + j, :n] += GA[j]
        T[n:2 * n, 2 * n + j] += GB[j]
        T[2 * n + j, n:2 * n] += GB[j]
        T[2 * n + j, 2 * n + j] = 1.0
        T[:n, last] += -gd[j] * GA[j]
        T[last, :n] += -gd[j] * GA[j]
        T[n:2 * n, last] += -gd[j] * GB[j]
        T[last, n:2 * n] += -gd[j] * GB[j]
        T[2 * n + j, last] += -gd[j]
        T[last, 2 * n + j] += -gd[j]
        T[last, last] = gd[j] * gd[j]
        terms.append((t0 + j, T))
        Te = np.zeros((dim, dim))
        Te[:n, last] = GA[j] / 2.0
        Te[last, :n] = GA[j] / 2.0
        Te[n:2 * n, last] += GB[j] / 2.0
        Te[last, n:2 * n] += GB[j] / 2.0
        Te[2 * n + j, last] += 0.5
        Te[last, 2 * n + j] += 0.5
        Te[last, last] = -gd[j]
        terms.append((eta0 + j, Te))
        terms.append((del0 + j, entry(2 * n + j, last, -0.5)))
    terms.append((tau, entry(last, last, -1.0)))
    asm.psd(S0, terms)

    objective = np.zeros(nvar)
    objective[tau] = -1.0
    return asm.assemble(objective, spans)


def qcr_params_from_sdp(inst: Instance,
                        settings: ConicSettings | None = None) -> QcrParams:
    """Extract the QCR parameter tuple from the big SDP's optimal point."""
    settings = settings or ConicSettings()
    prob = build_sdp_a(inst)
    sol = solve_conic(prob, settings)
    if sol.status not in ("Optimal", "IterLimit") or \
            max(sol.residuals) > max(1e-4, 10 * settings.eps):
        raise RuntimeError(f"QCR SDP ended with status {sol.status}")
    u = sol.z[slice(*prob.layout.span("u"))]
    v = sol.z[slice(*prob.layout.span("v"))]
    w = sol.z[slice(*prob.layout.span("w"))]
    t = np.maximum(sol.z[slice(*prob.layout.span("t"))], 0.0)
    return QcrParams(u=u, v=v, w=w, t=t)


# ---------------------------------------------------------------------------
# SOCP relaxation of the perspective reformulation

def build_socp_relax(inst: Instance, pp: PerspectiveParams) -> ConicProblem:
    """Continuous SOCP relaxation: per-variable cones model
    phi_i >= x_i^2 / y_i and one epigraph cone carries x^T(Q-diag(rho))x."""
    n = inst.n
    rho = np.asarray(pp.rho, dtype=float)
    GA, GB, gd = full_inequalities(inst)
    mbar = len(gd)
    spans = _spans({"x": n, "y": n, "phi": n, "epi": 1})
    nvar = spans["epi"][1]
    x0, y0, phi0, epi = 0, n, 2 * n, 3 * n

    Qr = inst.Q - np.diag(rho)
    dec = linalg.sym_eigen(Qr)
    keep = dec.values > 1e-12 * (1.0 + dec.values[-1] if len(dec.values) else 1.0)
    R = (np.sqrt(np.maximum(dec.values[keep], 0.0))[:, None]
         * dec.vectors[:, keep].T)
    kq = R.shape[0]

    rows_M, rows_r = [], []
    # nonneg section: linear rows, semicontinuity, y box
    def ge_zero(row, rhs):
        # row . z >= rhs  ->  s = row.z - rhs
        rows_M.append(-row)
        rows_r.append(-rhs)

    for j in range(mbar):
        row = np.zeros(nvar)
        row[x0:x0 + n] = -GA[j]
        row[y0:y0 + n] = -GB[j]
        ge_zero(row, -gd[j])
    for i in range(n):
        row = np.zeros(nvar)
        row[x0 + i] = 1.0
        row[y0 + i] = -inst.lb[i]
        ge_zero(row, 0.0)
        row = np.zeros(nvar)
        row[x0 + i] = -1.0
        row[y0 + i] = inst.ub[i]
        ge_zero(row, 0.0)
        row = np.zeros(nvar)
        row[y0 + i] = 1.0
        ge_zero(row, 0.0)
        row = np.zeros(nvar)
        row[y0 + i] = -1.0
        ge_zero(row, -1.0)
    nonneg_dim = len(rows_M)

    soc_dims = []
    for i in range(n):
        # ((phi+y)/2, x, (phi-y)/2) in SOC_3
        block = np.zeros((3, nvar))
        block[0, phi0 + i] = 0.5
        block[0, y0 + i] = 0.5
        block[1, x0 + i] = 1.0
        block[2, phi0 + i] = 0.5
        block[2, y0 + i] = -0.5
        rows_M.extend(-block)
        rows_r.extend([0.0, 0.0, 0.0])
        soc_dims.append(3)
    # epigraph cone: ((epi+1)/2, R x, (epi-1)/2)
    block = np.zeros((kq + 2, nvar))
    offs = np.zeros(kq + 2)
    block[0, epi] = 0.5
    offs[0] = 0.5
    block[1:kq + 1, x0:x0 + n] = R
    block[kq + 1, epi] = 0.5
    offs[kq + 1] = -0.5
    rows_M.extend(-block)
    rows_r.extend(offs)
    soc_dims.append(kq + 2)

    objective = np.zeros(nvar)
    objective[x0:x0 + n] = inst.c
    objective[y0:y0 + n] = inst.h
    objective[phi0:phi0 + n] = rho
    objective[epi] = 1.0
    return ConicProblem(objective=objective,
                        constraint_matrix=np.vstack(rows_M),
                        constraint_rhs=np.array(rows_r),
                        cones=ConeSpec(nonneg_dim=nonneg_dim,
                                       soc_dims=tuple(soc_dims)),
                        layout=VariableLayout(spans))


# ---------------------------------------------------------------------------
# parameter recovery maps

YSTAR_TOL = 1e-6


def recover_lift_params(inst: Instance, pp: PerspectiveParams,
                        x_star: np.ndarray, y_star: np.ndarray,
                        soc_duals: np.ndarray | None = None,
                        ytol: float = YSTAR_TOL) -> LiftParams:
    """Lift pair from an optimal perspective-relaxation point.

    For active components the pair is the tangent of the perspective term:
    u_i = -2 rho_i x_i / y_i and v_i = rho_i x_i^2 / y_i^2.  For switched-off
    components (y*_i = 0) the tangent degenerates; the correct limit is the
    supporting functional of the perspective epigraph picked out by the
    SOCP's cone duals (t0, t1, t2): u_i = t1, v_i = (t0 - t2)/2, with
    stationarity giving t0 + t2 = 2 rho_i and dual cone membership giving
    exactly the convexity requirement rho_i v_i >= u_i^2 / 4.  Without cone
    duals, off components fall back to (0, 0)."""
    rho = np.asarray(pp.rho, dtype=float)
    x = np.asarray(x_star, dtype=float)
    y = np.clip(np.asarray(y_star, dtype=float), 0.0, 1.0)
    on = y > ytol
    u = np.zeros(inst.n)
    v = np.zeros(inst.n)
    u[on] = -2.0 * rho[on] * x[on] / y[on]
    v[on] = rho[on] * (x[on] / y[on]) ** 2
    if soc_duals is not None:
        off = ~on
        u[off] = soc_duals[off, 1]
        v[off] = np.maximum((soc_duals[off, 0] - soc_duals[off, 2]) / 2.0, 0.0)
    u[v <= 1e-14] = 0.0
    v[v <= 1e-14] = 0.0
    u, v = _repair_convexity(inst.Q, u, v)
    return LiftParams(u=u, v=v)


def lift_params_to_rho(lp: LiftParams) -> PerspectiveParams:
    u = np.asarray(lp.u, dtype=float)
    v = np.asarray(lp.v, dtype=float)
    rho = np.zeros_like(u)
    on = v > 0.0
    rho[on] = u[on] ** 2 / (4.0 * v[on])
    return PerspectiveParams(rho=rho)


def lifted_objective(inst: Instance, lp: LiftParams, x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    base = float(x @ inst.Q @ x + inst.c @ x + inst.h @ y)
    lift = float(np.sum(lp.u * x * y + lp.v * y * y - lp.u * x - lp.v * y))
    return base + lift


def perspective_objective(inst: Instance, pp: PerspectiveParams, x, y) -> float:
    """f_rho with the 0/0 = 0 convention for switched-off components."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rho = np.asarray(pp.rho, dtype=float)
    base = float(x @ (inst.Q - np.diag(rho)) @ x + inst.c @ x + inst.h @ y)
    frac = np.zeros_like(x)
    on = y > 0.0
    frac[on] = rho[on] * x[on] ** 2 / y[on]
    return base + float(frac.sum())


# ---------------------------------------------------------------------------
# perspective-cut separation

@dataclass(frozen=True)
class PerspectiveCut:
    index: int
    xbar: float

    def row(self, model: MiqpModel) -> tuple[np.ndarray, float]:
        x0 = model.span("x")[0]
        y0 = model.span("y")[0]
        phi0 = model.span("phi")[0]
        row = np.zeros(model.nvar)
        row[x0 + self.index] = 2.0 * self.xbar
        row[y0 + self.index] = -self.xbar * self.xbar
        row[phi0 + self.index] = -1.0
        return row, 0.0


def separate_perspective_cut(rho_i: float, x_i: float, y_i: float,
                             a_i: float, b_i: float, phi_i: float,
                             index: int = 0, ytol: float = 1e-9,
                             ctol: float = 1e-6) -> PerspectiveCut | None:
    """Most-violated supporting hyperplane of phi >= x^2/y at the current
    point, or None when the epigraph constraint already holds."""
    if y_i <= ytol:
        return None
    if phi_i >= x_i * x_i / y_i - ctol:
        return None
    xbar = min(max(x_i / y_i, a_i), b_i)
    if 2.0 * xbar * x_i - xbar * xbar * y_i <= phi_i + ctol:
        return None
    return PerspectiveCut(index=index, xbar=float(xbar))


# ---------------------------------------------------------------------------
# bound comparison

def _relax_bound(model: MiqpModel) -> tuple[float, qpmod.QpSolution]:
    sol = qpmod.solve_qp(model.relaxation_qp())
    if sol.status == "Infeasible":
        return math.inf, sol
    if sol.status != "Optimal":
        raise RuntimeError(f"relaxation QP ended with status {sol.status}")
    return sol.obj, sol


@dataclass
class PipelineResult:
    params: PerspectiveParams
    bound_pr: float
    x: np.ndarray
    y: np.ndarray
    soc_duals: np.ndarray
    timings: dict[str, float]


RHO_STAGE_MAX_ITER = 6000
SOCP_STAGE_MAX_ITER = 40000


def _normalized_for_rho(inst: Instance):
    """Per-variable and objective scaling that tames the SDP_l data range.

    With x = diag(s) x~ the perspective parameter maps back via
    rho = rho~ * t / s^2; validity (rho >= 0, Q - diag(rho) PSD) is
    re-established exactly by sanitization after the inverse map."""
    s = np.maximum(np.maximum(np.abs(inst.lb), np.abs(inst.ub)), 1e-12)
    Qs = (inst.Q * s).T * s
    cs = s * inst.c
    t = max(np.abs(Qs).max(initial=0.0), np.abs(cs).max(initial=0.0),
            np.abs(inst.h).max(initial=0.0), 1.0)
    from scqp.model import make_instance
    scaled = make_instance(
        Q=Qs / t, c=cs / t, h=inst.h / t,
        A=inst.A * s if inst.m else inst.A, B=inst.B, d=inst.d,
        lb=inst.lb / s, ub=inst.ub / s, cardinality=inst.cardinality,
        equality=None if inst.equality is None else
        (inst.equality.E * s, inst.equality.F, inst.equality.g))
    return scaled, s, t


def rho_from_sdp_l(inst: Instance,
                   settings: ConicSettings | None = None) -> PerspectiveParams:
    """Best perspective parameter via SDP_l on the normalized instance.

    The bound equality downstream holds for any valid rho, so a capped,
    mildly inexact solve is acceptable here; sanitization restores exact
    feasibility of the returned parameter."""
    settings = settings or ConicSettings()
    scaled, s, t = _normalized_for_rho(inst)
    prob_l = build_sdp_l(scaled)
    stage = ConicSettings(eps=max(settings.eps, 1e-7),
                          max_iter=min(settings.max_iter, RHO_STAGE_MAX_ITER),
                          alpha=settings.alpha,
                          check_interval=settings.check_interval,
                          ruiz_iters=settings.ruiz_iters,
                          anderson_memory=max(settings.anderson_memory, 20))
    sol_l = solve_conic(prob_l, stage)
    usable = sol_l.status in ("Optimal", "IterLimit") and \
        max(sol_l.residuals) <= 1e-3
    if not usable:
        return rho_uniform_mineig(inst)
    lo, hi = prob_l.layout.span("rho")
    rho = np.maximum(sol_l.z[lo:hi], 0.0) * t / (s * s)
    rho = _sanitize_rho(inst.Q, rho)
    fallback = rho_uniform_mineig(inst)
    if rho.sum() < fallback.rho.sum():
        return fallback
    return PerspectiveParams(rho=rho)


def perspective_pipeline(inst: Instance,
                         settings: ConicSettings | None = None) -> PipelineResult:
    """SDP_l -> rho*; SOCP relaxation at rho* -> bound, (x*, y*), cone duals."""
    settings = settings or ConicSettings()
    t0 = time.perf_counter()
    pp = rho_from_sdp_l(inst, settings)
    t_sdp = time.perf_counter() - t0
    # Solve the SOCP on the normalized instance as well: with x = diag(s) x~
    # and the objective divided by t, rho~ = rho s^2 / t keeps Q~ - diag(rho~)
    # exactly PSD, so the stage sees well-scaled data regardless of the
    # original bound magnitudes.
    scaled, s, t = _normalized_for_rho(inst)
    rho_sc = pp.rho * (s * s) / t
    prob_s = build_socp_relax(scaled, PerspectiveParams(rho=rho_sc))
    stage = ConicSettings(eps=settings.eps,
                          max_iter=min(settings.max_iter, SOCP_STAGE_MAX_ITER),
                          alpha=settings.alpha,
                          check_interval=settings.check_interval,
                          ruiz_iters=settings.ruiz_iters,
                          anderson_memory=settings.anderson_memory)
    t0 = time.perf_counter()
    sol_s = solve_conic(prob_s, stage)
    t_socp = time.perf_counter() - t0
    if sol_s.status not in ("Optimal", "IterLimit"):
        raise RuntimeError(f"SOCP relaxation status {sol_s.status}")
    xs = s * sol_s.z[slice(*prob_s.layout.span("x"))]
    ys = sol_s.z[slice(*prob_s.layout.span("y"))]
    base = prob_s.cones.nonneg_dim
    duals_sc = sol_s.dual[base:base + 3 * inst.n].reshape(inst.n, 3)
    # Map the per-component cone duals back to the original scaling.  The
    # supporting-functional slots transform as u = (t/s) t1~ and
    # v = t (t0~ - t2~)/2, while stationarity pairs (t0~ + t2~)/2 with rho~;
    # reassembling the triple from the mapped quantities preserves dual cone
    # membership (t0 >= ||(t1, t2)||  <=>  rho v >= u^2/4).
    u_d = (t / s) * duals_sc[:, 1]
    v_d = t * (duals_sc[:, 0] - duals_sc[:, 2]) / 2.0
    rho_d = (t / (s * s)) * (duals_sc[:, 0] + duals_sc[:, 2]) / 2.0
    duals = np.stack([rho_d + v_d, u_d, rho_d - v_d], axis=1)
    return PipelineResult(params=pp, bound_pr=float(t * sol_s.primal_obj),
                          x=xs, y=ys, soc_duals=duals,
                          timings={"time_sdp_l": t_sdp, "time_socp": t_socp})


def bound_compare(inst: Instance, opt: float | None = None,
                  settings: ConicSettings | None = None,
                  with_qcr: bool | None = None) -> BoundReport:
    """Compute and juxtapose the relaxation bounds of every reformulation.

    Stage failures are recorded in the report instead of aborting."""
    settings = settings or ConicSettings()
    report = BoundReport(opt=opt)
    t0 = time.perf_counter()
    try:
        report.bound_plain, _ = _relax_bound(build_plain(inst))
    except Exception as exc:  # noqa: BLE001 - aggregated by contract
        report.failures["plain"] = str(exc)
    report.timings["time_plain"] = time.perf_counter() - t0

    pipe = None
    try:
        pipe = perspective_pipeline(inst, settings)
        report.bound_pr = pipe.bound_pr
        report.rho = pipe.params.rho
        report.timings.update(pipe.timings)
    except Exception as exc:  # noqa: BLE001
        report.failures["pr"] = str(exc)

    if pipe is not None:
        t0 = time.perf_counter()
        try:
            lp = recover_lift_params(inst, pipe.params, pipe.x, pipe.y,
                                     soc_duals=pipe.soc_duals)
            report.lift = lp
            report.bound_lcr, _ = _relax_bound(build_lcr(inst, lp))
        except Exception as exc:  # noqa: BLE001
            report.failures["lcr"] = str(exc)
        report.timings["time_lcr"] = time.perf_counter() - t0

    if with_qcr is None:
        with_qcr = inst.equality is not None
    if with_qcr:
        t0 = time.perf_counter()
        try:
            sol_a = solve_conic(build_sdp_a(inst), settings)
            # first-order tail convergence on the big SDP is slow; a mildly
            # inexact iterate still locates tau* to more digits than the
            # bound comparison needs
            if sol_a.status == "Optimal" or (
                    sol_a.status == "IterLimit"
                    and max(sol_a.residuals) <= max(1e-4, 10 * settings.eps)):
                report.bound_qcr = float(-sol_a.primal_obj)
            else:
                report.failures["qcr"] = f"SDP status {sol_a.status}"
        except Exception as exc:  # noqa: BLE001
            report.failures["qcr"] = str(exc)
        report.timings["time_sdp_a"] = time.perf_counter() - t0

    if (opt is not None and report.bound_qcr is not None
            and report.bound_pr is not None):
        denom = opt - report.bound_pr
        if abs(denom) > 1e-9 * (1.0 + abs(opt)):
            report.impr = (report.bound_qcr - report.bound_pr) / denom
    return report
