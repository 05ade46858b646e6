"""Acceptance suite: one test per shipped guarantee, one PASS line each.

The heavy fixtures (50-instance bound records, 30-instance solver records)
are computed once per session and shared by the criteria that reference
the same instance sets.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import pytest

from scqp import bnb, cli, linalg, model, qp as qpmod, reformulate as rf
from scqp.conic import ConeSpec, ConicProblem, ConicSettings, VariableLayout, \
    solve_conic
from scqp.generators import GenSpec, gen_mv, gen_ssp


def announce(num: int, name: str, ok: bool, detail: str) -> None:
    print(f"\n[criterion {num}] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {num} {name}: {detail}"


def make(seed: int, family: str, n: int, K: int = 3,
         sections: int | None = None) -> model.Instance:
    dom = ["zero", "plus", "minus"][seed % 3]
    spec = GenSpec(family=family, n=n, K=None if sections else K,
                   dominance=dom, seed=seed, sections=sections)
    return gen_mv(spec) if family == "mv" else gen_ssp(spec)


# ---------------------------------------------------------------------------
# shared fixtures

@dataclass
class BoundRecord:
    inst: model.Instance
    bound_plain: float
    bound_pr: float
    bound_lcr: float
    lift: rf.LiftParams
    oracle: float


@pytest.fixture(scope="session")
def bound_records():
    """50 mixed instances, n in {6..15}: plain/PR/LCR bounds plus oracle."""
    records = []
    t0 = time.perf_counter()
    for seed in range(25):
        for family in ("mv", "ssp"):
            inst = make(seed, family, n=6 + seed % 10)
            bound_plain, _ = rf._relax_bound(rf.build_plain(inst))
            pipe = rf.perspective_pipeline(inst, ConicSettings(eps=1e-9))
            lp = rf.recover_lift_params(inst, pipe.params, pipe.x, pipe.y,
                                        soc_duals=pipe.soc_duals)
            bound_lcr, _ = rf._relax_bound(rf.build_lcr(inst, lp))
            oracle = bnb.enumerate_oracle(inst).obj
            records.append(BoundRecord(inst, bound_plain, pipe.bound_pr,
                                       bound_lcr, lp, oracle))
    return records, time.perf_counter() - t0


@dataclass
class SolveRecord:
    inst: model.Instance
    oracle: float
    results: dict[str, bnb.SolveResult]


@pytest.fixture(scope="session")
def solve_records():
    """30 instances, n <= 12: oracle plus plain/LCR/PC global solves."""
    records = []
    t0 = time.perf_counter()
    settings = bnb.SolveSettings(rel_gap=1e-4)
    for seed in range(15):
        for family in ("mv", "ssp"):
            inst = make(seed, family, n=6 + seed % 7)
            oracle = bnb.enumerate_oracle(inst).obj
            results = {reform: bnb.solve(inst, reform=reform, settings=settings)
                       for reform in ("plain", "lcr", "pc")}
            records.append(SolveRecord(inst, oracle, results))
    return records, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# criteria

def test_criterion_1_lcr_matches_perspective_bound(bound_records):
    records, elapsed = bound_records
    worst = max(abs(r.bound_lcr - r.bound_pr) / (1.0 + abs(r.bound_pr))
                for r in records)
    announce(1, "lifted bound equals perspective SOCP bound",
             worst <= 1e-5,
             f"50 instances, worst rel diff {worst:.2e}, {elapsed:.0f}s")


def test_criterion_2_bound_ordering(bound_records):
    records, _ = bound_records
    worst_plain = max(r.bound_plain - r.bound_lcr for r in records)
    worst_opt = max(r.bound_lcr - r.oracle for r in records)
    ok = worst_plain <= 1e-6 and worst_opt <= 1e-6
    announce(2, "plain <= lifted <= optimum ordering", ok,
             f"max plain-lcr {worst_plain:.2e}, max lcr-opt {worst_opt:.2e}")


def test_criterion_3_zero_lift_at_binary_points():
    rng = np.random.default_rng(20240817)
    worst = 0.0
    checked = 0
    for seed in range(20):
        family = "mv" if seed % 2 == 0 else "ssp"
        inst = make(seed, family, n=8)
        lam = max(linalg.min_eigenvalue(inst.Q), 1e-9)
        u = rng.uniform(-1.0, 1.0, inst.n) * (1.0 + np.abs(inst.c))
        v = u * u / (4.0 * lam) + rng.uniform(0.0, 1.0, inst.n)
        lp = rf.LiftParams(u=u, v=v)
        points = 0
        while points < 50:
            k = int(rng.integers(0, 4))
            y = np.zeros(inst.n)
            y[rng.choice(inst.n, size=k, replace=False)] = 1.0
            if not bnb._binary_feasible_y(inst, y):
                continue
            obj, x = bnb.support_qp(inst, y)
            if not math.isfinite(obj):
                continue
            f = model.objective(inst, model.SolverPoint(x=x, y=y))
            diff = abs(rf.lifted_objective(inst, lp, x, y) - f) / (1.0 + abs(f))
            worst = max(worst, diff)
            points += 1
            checked += 1
    announce(3, "lift term vanishes at binary-feasible points",
             worst <= 1e-9 and checked == 1000,
             f"{checked} points, worst rel diff {worst:.2e}")


def test_criterion_4_recovered_pair_dominated_by_perspective(bound_records):
    records, _ = bound_records
    rng = np.random.default_rng(7)
    worst_rho = 0.0
    worst_eig = 0.0
    worst_gap = 0.0
    per_instance = 10000 // len(records)
    for r in records:
        inst = r.inst
        pp = rf.lift_params_to_rho(r.lift)
        worst_rho = min(worst_rho, float(pp.rho.min()))
        scale = 1.0 + np.abs(inst.Q).max()
        worst_eig = min(worst_eig,
                        linalg.min_eigenvalue(inst.Q - np.diag(pp.rho)) / scale)
        y = rng.uniform(0.0, 1.0, (per_instance, inst.n))
        frac = rng.uniform(0.0, 1.0, (per_instance, inst.n))
        x = (inst.lb + frac * (inst.ub - inst.lb)) * y
        for xi, yi in zip(x, y):
            gap = rf.perspective_objective(inst, pp, xi, yi) - \
                rf.lifted_objective(inst, r.lift, xi, yi)
            worst_gap = min(worst_gap, gap)
    ok = worst_rho >= -1e-8 and worst_eig >= -1e-7 and worst_gap >= -1e-8
    announce(4, "rho from recovered pair is valid and dominates the lift", ok,
             f"min rho {worst_rho:.1e}, min eig/scale {worst_eig:.1e}, "
             f"min pointwise gap {worst_gap:.1e} over 10000 points")


def test_criterion_5_solvers_match_oracle(solve_records):
    records, elapsed = solve_records
    worst = 0.0
    for r in records:
        for reform, result in r.results.items():
            diff = abs(result.obj - r.oracle) / (1.0 + abs(r.oracle))
            worst = max(worst, diff)
    announce(5, "plain/LCR/PC branch-and-bound match enumeration",
             worst <= 1e-6,
             f"30 instances x 3 reformulations, worst rel diff {worst:.2e}, "
             f"{elapsed:.0f}s")


def _pc_root_bound(inst: model.Instance) -> float:
    pp = rf.rho_sdp_simple(inst)
    m = rf.build_pc(inst, pp)
    x0, y0, phi0 = m.span("x")[0], m.span("y")[0], m.span("phi")[0]
    sol = qpmod.solve_qp(m.relaxation_qp())
    for _ in range(bnb.MAX_CUT_ROUNDS):
        if sol.status != "Optimal":
            break
        added = 0
        for i in range(inst.n):
            if pp.rho[i] <= 0.0:
                continue
            cut = rf.separate_perspective_cut(
                pp.rho[i], sol.z[x0 + i], sol.z[y0 + i], inst.lb[i],
                inst.ub[i], sol.z[phi0 + i], index=i)
            if cut is not None:
                row, rhs = cut.row(m)
                added += m.add_cut(row, rhs, (cut.index, cut.xbar))
        if not added:
            break
        sol = qpmod.solve_qp(m.relaxation_qp())
    return sol.obj


def test_criterion_6_cuts_valid_and_root_dominates(solve_records):
    records, _ = solve_records
    worst_cut = 0.0
    n_cuts = 0
    worst_root = 0.0
    for r in records:
        result = r.results["pc"]
        m = result.model
        z = np.zeros(m.nvar)
        z[slice(*m.span("x"))] = result.x
        z[slice(*m.span("y"))] = result.y
        z[slice(*m.span("phi"))] = np.where(result.y > 0.5, result.x ** 2, 0.0)
        for row, rhs in zip(m.cut_rows, m.cut_rhs):
            worst_cut = max(worst_cut, float(row @ z - rhs))
            n_cuts += 1
        plain_root, _ = rf._relax_bound(rf.build_plain(r.inst))
        pc_root = _pc_root_bound(r.inst)
        worst_root = max(worst_root, plain_root - pc_root)
    ok = worst_cut <= 1e-8 and worst_root <= 1e-8
    announce(6, "pooled cuts hold at incumbents; cut root bound dominates", ok,
             f"{n_cuts} cuts, worst violation {worst_cut:.1e}, "
             f"worst root shortfall {worst_root:.1e}")


def test_criterion_7_qcr_dominance_on_sectioned_instances():
    imprs = []
    worst = math.inf
    t0 = time.perf_counter()
    for seed in range(10):
        inst = make(seed, "mv", n=30, sections=10)
        pipe = rf.perspective_pipeline(inst, ConicSettings(eps=1e-8))
        sol_a = solve_conic(rf.build_sdp_a(inst),
                            ConicSettings(eps=1e-7, max_iter=40000))
        assert sol_a.status in ("Optimal", "IterLimit") and \
            max(sol_a.residuals) <= 1e-4
        bound_qcr = float(-sol_a.primal_obj)
        worst = min(worst, bound_qcr - pipe.bound_pr)
        # feasible incumbent from rounding stands in for the (intractable)
        # exact optimum in the improvement ratio
        opt, _, _ = bnb._round_heuristic(inst, pipe.y)
        imprs.append((bound_qcr - pipe.bound_pr) / (opt - pipe.bound_pr))
    mean_impr = float(np.mean(imprs))
    ok = worst >= -1e-6 and mean_impr > 0.0
    announce(7, "QCR SDP bound dominates the perspective-path bound", ok,
             f"10 sectioned n=30 instances, worst margin {worst:+.2e}, "
             f"mean impr {mean_impr:+.3f}, {time.perf_counter() - t0:.0f}s")


def test_criterion_8_univariate_sandwich():
    xs = np.linspace(0.0, 3.0, 21)
    ys = np.array([(j + 1) / 21.0 for j in range(21)])  # 21 points in (0, 1]
    worst_lower = 0.0
    worst_upper = 0.0
    n_pts = 0
    for x in xs:
        for y in ys:
            if not (y <= x <= 3.0 * y):
                continue  # outside the region where the lift is comparable
            f = x * x - 4.0 * x
            q = -x * y + y * y + x - y
            f_uv = f + q
            f_p = x * x / y - 4.0 * x
            worst_lower = min(worst_lower, f_uv - f)
            worst_upper = min(worst_upper, f_p - f_uv)
            n_pts += 1
    ok = worst_lower >= -1e-10 and worst_upper >= -1e-10
    announce(8, "f <= lifted <= perspective on the example grid", ok,
             f"{n_pts} grid points, min margins {worst_lower:.1e} / "
             f"{worst_upper:.1e}")


def _diag_sdp(q: np.ndarray) -> ConicProblem:
    """min <diag(q), X> s.t. trace X = 1, X psd; optimum is min(q)."""
    k = len(q)
    dim = k * (k + 1) // 2
    diag_pos = [i * (i + 3) // 2 for i in range(k)]
    objective = np.zeros(dim)
    objective[diag_pos] = q
    trace_row = np.zeros((1, dim))
    trace_row[0, diag_pos] = 1.0
    return ConicProblem(objective=objective,
                        constraint_matrix=np.vstack([trace_row, -np.eye(dim)]),
                        constraint_rhs=np.concatenate([[1.0], np.zeros(dim)]),
                        cones=ConeSpec(zero_dim=1, psd_dims=(k,)),
                        layout=VariableLayout({"X": (0, dim)}))


def test_criterion_9_cross_validation():
    rng = np.random.default_rng(99)
    worst_qp = 0.0
    for seed in range(100):
        family = "mv" if seed % 2 == 0 else "ssp"
        inst = make(seed, family, n=3 + seed % 6, K=2)
        bound_qp, _ = rf._relax_bound(rf.build_plain(inst))
        sol = solve_conic(
            rf.build_socp_relax(inst, rf.PerspectiveParams(rho=np.zeros(inst.n))),
            ConicSettings(eps=1e-9))
        assert sol.status == "Optimal"
        worst_qp = max(worst_qp,
                       abs(sol.primal_obj - bound_qp) / (1.0 + abs(bound_qp)))
    worst_sdp = 0.0
    for trial in range(20):
        k = 2 + trial % 5
        q = rng.uniform(0.0, 1.0, k)
        sol = solve_conic(_diag_sdp(q), ConicSettings(eps=1e-9))
        assert sol.status == "Optimal"
        worst_sdp = max(worst_sdp, abs(sol.primal_obj - q.min()))
    ok = worst_qp <= 1e-6 and worst_sdp <= 1e-5
    announce(9, "interior-point and conic solvers cross-validate", ok,
             f"100 QPs worst rel diff {worst_qp:.2e}, "
             f"20 diagonal SDPs worst err {worst_sdp:.2e}")


def test_criterion_10_deterministic_csv(tmp_path):
    work = tmp_path / "instances"
    work.mkdir()
    assert cli.main(["generate", "mv", "--n", "5", "--k", "2", "--seed", "3",
                     "-o", str(work / "a.json")]) == 0
    assert cli.main(["generate", "ssp", "--n", "4", "--k", "2", "--seed", "7",
                     "-o", str(work / "b.json")]) == 0
    outputs = []
    for name in ("run1.csv", "run2.csv"):
        out = tmp_path / name
        assert cli.main(["bench", str(work), "--reform", "plain,pc",
                         "--deterministic", "-o", str(out)]) == 0
        outputs.append(out.read_bytes())
    announce(10, "deterministic benchmark output is byte-identical",
             outputs[0] == outputs[1],
             f"{len(outputs[0])} bytes per run")
