"""Branch-and-bound for semi-continuous convex MIQPs.

One engine serves every reformulation: nodes pop off a best-bound heap,
node relaxations are dense QPs, branching fixes the most fractional
indicator (ties to the smallest index), and fixing y_i = 0 also pins
x_i (and phi_i in the perspective-cut model) to zero.  The perspective-cut
path adds a globally valid cut pool that grows by separation at fractional
points and lazily at integer candidates whose epigraph values lag the true
perspective terms.  A small support-QP heuristic seeds the incumbent at
the root.  An exhaustive support-enumeration oracle is included for
correctness testing on small instances.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from scqp import qp as qpmod
from scqp import reformulate as rf
from scqp.conic import ConicSettings
from scqp.model import Instance, SolverPoint, is_feasible, objective

INT_TOL = 1e-6
MAX_CUT_ROUNDS = 50


class TooLarge(Exception):
    pass


class NoFeasiblePoint(Exception):
    pass


@dataclass
class SolveSettings:
    rel_gap: float = 1e-4
    abs_gap: float = 1e-9
    time_limit: float | None = None
    node_limit: int | None = None
    integrality_tol: float = INT_TOL
    deterministic: bool = False
    conic: ConicSettings = field(default_factory=ConicSettings)


@dataclass
class SolveStats:
    status: str = "Optimal"
    nodes: int = 0
    cuts: int = 0
    best_bound: float = -math.inf
    incumbent: float = math.inf
    elapsed: float = 0.0

    @property
    def gap(self) -> float:
        if not math.isfinite(self.incumbent):
            return math.inf
        return (self.incumbent - self.best_bound) / (1.0 + abs(self.incumbent))


@dataclass
class SolveResult:
    x: np.ndarray
    y: np.ndarray
    obj: float
    stats: SolveStats
    reform: str = "plain"
    model: rf.MiqpModel | None = None


@dataclass
class _Node:
    fixed: dict[int, int]          # binary var index -> 0/1
    bound: float


def _node_bounds(model: rf.MiqpModel, fixed: dict[int, int]):
    lower = model.lower.copy()
    upper = model.upper.copy()
    y0 = model.span("y")[0]
    x0 = model.span("x")[0]
    phi_span = model.spans.get("phi")
    for j, val in fixed.items():
        lower[j] = upper[j] = float(val)
        if val == 0:
            i = j - y0
            lower[x0 + i] = upper[x0 + i] = 0.0
            if phi_span is not None:
                lower[phi_span[0] + i] = upper[phi_span[0] + i] = 0.0
    return lower, upper


def _solve_node(model: rf.MiqpModel, fixed: dict[int, int]) -> qpmod.QpSolution:
    lower, upper = _node_bounds(model, fixed)
    prob = model.relaxation_qp()
    prob = qpmod.QpProblem(
        hessian=prob.hessian, linear=prob.linear, constant=prob.constant,
        ineq_matrix=prob.ineq_matrix, ineq_rhs=prob.ineq_rhs,
        eq_matrix=prob.eq_matrix, eq_rhs=prob.eq_rhs,
        lower=lower, upper=upper)
    return qpmod.solve_qp(prob)


def support_qp(inst: Instance, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Best x for a fixed binary y; returns (objective, x) or (inf, zeros)
    when that support is infeasible."""
    n = inst.n
    y = np.round(np.asarray(y, dtype=float))
    lower = inst.lb * y
    upper = inst.ub * y
    off = y <= 0.5
    lower[off] = upper[off] = 0.0
    eq = inst.equality
    prob = qpmod.QpProblem(
        hessian=inst.Q, linear=inst.c,
        ineq_matrix=inst.A if inst.m else None,
        ineq_rhs=(inst.d - inst.B @ y) if inst.m else None,
        eq_matrix=eq.E if eq is not None else None,
        eq_rhs=(eq.g - eq.F @ y) if eq is not None else None,
        lower=lower, upper=upper)
    sol = qpmod.solve_qp(prob)
    if sol.status != "Optimal":
        return math.inf, np.zeros(n)
    return sol.obj + float(inst.h @ y), sol.z


def _binary_feasible_y(inst: Instance, y: np.ndarray) -> bool:
    if inst.cardinality is not None and y.sum() > inst.cardinality + 0.5:
        return False
    if inst.equality is not None:
        eq = inst.equality
        if np.abs(eq.E).max(initial=0.0) == 0.0:
            if np.abs(eq.F @ y - eq.g).max(initial=0.0) > 1e-6:
                return False
    return True


def _round_heuristic(inst: Instance, y_frac: np.ndarray):
    """Round the relaxation indicators, keeping the K largest when a
    cardinality budget binds, then optimize the support."""
    y = np.zeros(inst.n)
    if inst.equality is not None and np.abs(inst.equality.E).max(initial=0.0) == 0.0:
        # pick the largest indicator inside each disjoint selection row
        F = inst.equality.F
        if np.all((F == 0) | (F == 1)) and np.all(F.sum(axis=0) <= 1):
            for k in range(len(inst.equality.g)):
                members = np.where(F[k] > 0)[0]
                want = int(round(inst.equality.g[k]))
                order = members[np.argsort(-y_frac[members], kind="stable")]
                y[order[:want]] = 1.0
            free = np.where(F.sum(axis=0) == 0)[0]
            y[free] = (y_frac[free] > 0.5).astype(float)
        else:
            return None
    elif inst.cardinality is not None:
        order = np.argsort(-y_frac, kind="stable")
        chosen = [i for i in order if y_frac[i] > 1e-6][: inst.cardinality]
        y[chosen] = 1.0
    else:
        y = (y_frac > 0.5).astype(float)
    if not _binary_feasible_y(inst, y):
        return None
    obj, x = support_qp(inst, y)
    if not math.isfinite(obj):
        return None
    return obj, x, y


def solve_miqp(inst: Instance, model: rf.MiqpModel,
               settings: SolveSettings | None = None,
               separator=None) -> SolveResult:
    """Best-bound branch-and-bound over the binary span of `model`.

    `separator(z)` may return PerspectiveCut objects to append to the
    global pool; integer candidates are always re-priced with an exact
    support QP so incumbent objectives are true original objectives."""
    settings = settings or SolveSettings()
    t_start = time.perf_counter()
    y_lo, y_hi = model.span("y")
    x_lo, x_hi = model.span("x")

    stats = SolveStats()
    inc_obj = math.inf
    inc_x = np.zeros(inst.n)
    inc_y = np.zeros(inst.n)

    def out_of_budget() -> str | None:
        if settings.time_limit is not None and \
                time.perf_counter() - t_start > settings.time_limit:
            return "TimeLimit"
        if settings.node_limit is not None and stats.nodes >= settings.node_limit:
            return "NodeLimit"
        return None

    def try_incumbent(obj, x, y):
        nonlocal inc_obj, inc_x, inc_y
        if obj < inc_obj - 1e-12:
            if is_feasible(inst, SolverPoint(x=x, y=y), binary=True):
                inc_obj, inc_x, inc_y = obj, x, y

    counter = itertools.count()
    heap: list[tuple[float, int, dict]] = [(-math.inf, next(counter), {})]
    exhausted = True

    while heap:
        node_bound, _, fixed = heapq.heappop(heap)
        stats.best_bound = node_bound
        gap_cut = inc_obj - max(settings.abs_gap,
                                settings.rel_gap * (1.0 + abs(inc_obj)))
        if node_bound >= gap_cut:
            stats.best_bound = inc_obj
            break
        budget = out_of_budget()
        if budget:
            stats.status = budget
            exhausted = False
            break

        stats.nodes += 1
        sol = _solve_node(model, fixed)
        rounds = 0
        while sol.status == "Optimal":
            # separation loop: add violated pool cuts, re-solve
            if separator is None or rounds >= MAX_CUT_ROUNDS:
                break
            new_cuts = separator(sol.z)
            added = 0
            for cut in new_cuts:
                row, rhs = cut.row(model)
                if model.add_cut(row, rhs, (cut.index, cut.xbar)):
                    added += 1
            if not added:
                break
            stats.cuts += added
            rounds += 1
            sol = _solve_node(model, fixed)
        if sol.status == "Infeasible":
            continue
        if sol.status != "Optimal":
            # unresolved relaxation: treat conservatively with parent bound
            bound = node_bound if math.isfinite(node_bound) else -math.inf
        else:
            bound = sol.obj
        if bound >= gap_cut:
            continue

        y_rel = sol.z[y_lo:y_hi]
        frac = np.abs(y_rel - np.round(y_rel))
        if sol.status == "Optimal":
            branch_candidates = [i for i in range(inst.n)
                                 if (y_lo + i) not in fixed
                                 and frac[i] > settings.integrality_tol]
        else:
            # the relaxation point is untrusted; keep branching on any
            # unfixed indicator rather than pretending the node is a leaf
            branch_candidates = [i for i in range(inst.n)
                                 if (y_lo + i) not in fixed]
        if not branch_candidates:
            y_int = np.round(y_rel)
            if _binary_feasible_y(inst, y_int):
                obj, x = support_qp(inst, y_int)
                if math.isfinite(obj):
                    try_incumbent(obj, x, y_int)
                    if separator is not None and obj > bound + 1e-7 * (1 + abs(obj)):
                        # epigraph still slack at this integer point; cut and
                        # requeue so the node bound catches up
                        z_fix = sol.z.copy()
                        z_fix[x_lo:x_hi] = x
                        cuts = separator(z_fix)
                        added = 0
                        for cut in cuts:
                            row, rhs = cut.row(model)
                            if model.add_cut(row, rhs, (cut.index, cut.xbar)):
                                added += 1
                        if added:
                            stats.cuts += added
                            heapq.heappush(heap, (bound, next(counter), fixed))
            continue

        if stats.nodes == 1:
            seeded = _round_heuristic(inst, y_rel)
            if seeded is not None:
                try_incumbent(*seeded)

        i = max(branch_candidates, key=lambda i: (frac[i], -i))
        for val in (0, 1):
            child = dict(fixed)
            child[y_lo + i] = val
            heapq.heappush(heap, (bound, next(counter), child))
    else:
        exhausted = True

    if not heap and exhausted and stats.status == "Optimal":
        stats.best_bound = inc_obj
    if not math.isfinite(inc_obj):
        stats.status = "Infeasible" if stats.status == "Optimal" else stats.status
    stats.incumbent = inc_obj
    stats.elapsed = time.perf_counter() - t_start
    return SolveResult(x=inc_x, y=inc_y, obj=inc_obj, stats=stats, model=model)


def solve_pc(inst: Instance, pp: rf.PerspectiveParams | None = None,
             settings: SolveSettings | None = None) -> SolveResult:
    """Perspective-cut branch-and-cut; rho defaults to the diagonal SDP."""
    settings = settings or SolveSettings()
    if pp is None:
        pp = rf.rho_sdp_simple(inst, settings.conic)
    model = rf.build_pc(inst, pp)
    rho = pp.rho
    x_lo, _ = model.span("x")
    y_lo, _ = model.span("y")
    phi_lo, _ = model.span("phi")

    def separator(z):
        cuts = []
        for i in range(inst.n):
            if rho[i] <= 0.0:
                continue
            cut = rf.separate_perspective_cut(
                rho[i], z[x_lo + i], z[y_lo + i], inst.lb[i], inst.ub[i],
                z[phi_lo + i], index=i)
            if cut is not None:
                cuts.append(cut)
        return cuts

    result = solve_miqp(inst, model, settings, separator=separator)
    result.reform = "pc"
    return result


def solve(inst: Instance, reform: str = "pc",
          settings: SolveSettings | None = None) -> SolveResult:
    """Solve to global optimality under the chosen reformulation."""
    settings = settings or SolveSettings()
    if reform == "pc":
        return solve_pc(inst, settings=settings)
    if reform == "plain":
        model = rf.build_plain(inst)
    elif reform == "lcr":
        pipe = rf.perspective_pipeline(inst, settings.conic)
        lp = rf.recover_lift_params(inst, pipe.params, pipe.x, pipe.y,
                                    soc_duals=pipe.soc_duals)
        model = rf.build_lcr(inst, lp)
    elif reform == "qcr":
        params = rf.qcr_params_from_sdp(inst, settings.conic)
        model = rf.build_qcr(inst, params)
    else:
        raise ValueError(f"unknown reformulation {reform!r}")
    result = solve_miqp(inst, model, settings)
    result.reform = reform
    return result


def enumerate_oracle(inst: Instance, max_n: int = 20) -> SolveResult:
    """Exhaustive search over binary supports; ground truth for testing.

    Iterates supports in order of size then lexicographically, so ties
    resolve to the lexicographically smallest support."""
    n = inst.n
    if n > max_n:
        raise TooLarge(f"n={n} exceeds enumeration limit {max_n}")
    t0 = time.perf_counter()
    kmax = inst.cardinality if inst.cardinality is not None else n
    best = (math.inf, np.zeros(n), np.zeros(n))
    count = 0
    for k in range(0, kmax + 1):
        for support in itertools.combinations(range(n), k):
            y = np.zeros(n)
            y[list(support)] = 1.0
            if not _binary_feasible_y(inst, y):
                continue
            count += 1
            obj, x = support_qp(inst, y)
            if obj < best[0] - 1e-9:
                best = (obj, x, y)
    if not math.isfinite(best[0]):
        raise NoFeasiblePoint("no binary support admits a feasible x")
    stats = SolveStats(status="Optimal", nodes=count, best_bound=best[0],
                       incumbent=best[0], elapsed=time.perf_counter() - t0)
    return SolveResult(x=best[1], y=best[2], obj=best[0], stats=stats,
                       reform="enumerate")
