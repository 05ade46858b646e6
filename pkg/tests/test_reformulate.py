"""Reformulation builders, parameter maps, and cut separation.

Hand oracles used below:
  * univariate f(x) = x^2 - 4x on {0} u [1, 3] with lift pair (u, v) = (-1, 1):
    the lift term q(x, y) = -xy + y^2 + x - y vanishes whenever y is binary
    and x is in the matching interval.
  * tangent recovery at rho = 1, x* = 1, y* = 1/2:
    u = -2 rho x/y = -4, v = rho (x/y)^2 = 4.
  * cut at xbar = 2: phi >= 2*2*x - 4*y = 4x - 4y.
"""

import math

import numpy as np
import pytest

from scqp import linalg, model, reformulate as rf
from scqp.conic import ConicSettings, solve_conic
from scqp.generators import GenSpec, gen_mv, gen_ssp


def example1_instance():
    return model.make_instance(
        Q=np.array([[1.0]]), c=np.array([-4.0]), h=np.array([0.0]),
        A=np.zeros((0, 1)), B=np.zeros((0, 1)), d=np.zeros(0),
        lb=np.array([1.0]), ub=np.array([3.0]))


def test_plain_model_matches_objective():
    inst = example1_instance()
    m = rf.build_plain(inst)
    z = np.array([2.0, 1.0])  # (x, y)
    assert m.objective_at(z) == pytest.approx(2.0 * 2.0 - 4.0 * 2.0, abs=1e-14)


def test_lcr_zero_lift_at_binary_points():
    inst = example1_instance()
    lp = rf.LiftParams(u=np.array([-1.0]), v=np.array([1.0]))
    m = rf.build_lcr(inst, lp)
    for x in (1.0, 2.0, 3.0):
        assert m.objective_at(np.array([x, 1.0])) == pytest.approx(
            x * x - 4.0 * x, abs=1e-12)
    assert m.objective_at(np.array([0.0, 0.0])) == pytest.approx(0.0, abs=1e-12)
    # strictly between f and the perspective on the fractional region
    x, y = 1.5, 0.5
    f = x * x - 4.0 * x
    f_uv = m.objective_at(np.array([x, y]))
    f_p = x * x / y - 4.0 * x
    assert f <= f_uv + 1e-12 <= f_p + 2e-12


def test_lcr_rejects_indefinite_lift():
    inst = example1_instance()
    with pytest.raises(rf.ConvexityViolation):
        rf.build_lcr(inst, rf.LiftParams(u=np.array([-10.0]), v=np.array([1.0])))


def test_tangent_recovery_hand_value():
    inst = example1_instance()
    pp = rf.PerspectiveParams(rho=np.array([1.0]))
    lp = rf.recover_lift_params(inst, pp, np.array([1.0]), np.array([0.5]))
    assert lp.u[0] == pytest.approx(-4.0, abs=1e-12)
    assert lp.v[0] == pytest.approx(4.0, abs=1e-12)


def test_lift_params_to_rho_inverts_recovery():
    pp = rf.lift_params_to_rho(rf.LiftParams(u=np.array([-4.0, 0.0]),
                                             v=np.array([4.0, 0.0])))
    assert pp.rho[0] == pytest.approx(1.0, abs=1e-12)
    assert pp.rho[1] == 0.0


def test_perspective_objective_zero_convention():
    inst = example1_instance()
    pp = rf.PerspectiveParams(rho=np.array([1.0]))
    assert rf.perspective_objective(inst, pp, [0.0], [0.0]) == 0.0
    assert rf.perspective_objective(inst, pp, [1.0], [0.5]) == pytest.approx(
        1.0 / 0.5 - 4.0, abs=1e-12)


def test_cut_row_hand_value():
    inst = example1_instance()
    m = rf.build_pc(inst, rf.PerspectiveParams(rho=np.array([1.0])))
    row, rhs = rf.PerspectiveCut(index=0, xbar=2.0).row(m)
    # layout (x, y, phi): 4x - 4y - phi <= 0
    assert np.allclose(row, [4.0, -4.0, -1.0]) and rhs == 0.0


def test_separation_logic():
    # violated: phi = 1 < x^2/y = 2, tangent point xbar = x/y = 2
    cut = rf.separate_perspective_cut(1.0, 1.0, 0.5, 0.0, 3.0, 1.0)
    assert cut is not None and cut.xbar == pytest.approx(2.0)
    # satisfied epigraph: no cut
    assert rf.separate_perspective_cut(1.0, 1.0, 0.5, 0.0, 3.0, 2.0) is None
    # switched off: no cut
    assert rf.separate_perspective_cut(1.0, 0.0, 0.0, 0.0, 3.0, 0.0) is None
    # xbar clamps into [a, b]
    cut = rf.separate_perspective_cut(1.0, 1.0, 0.9, 0.0, 0.8, 0.0)
    assert cut is not None and cut.xbar == pytest.approx(0.8)


def test_pc_model_seeds_interval_cuts():
    inst = example1_instance()
    m = rf.build_pc(inst, rf.PerspectiveParams(rho=np.array([1.0])))
    assert len(m.cut_rows) == 2  # xbar = a and xbar = b
    assert m.lower[m.span("phi")[0]] == 0.0
    # pool rejects duplicates within tolerance
    row, rhs = rf.PerspectiveCut(index=0, xbar=1.0).row(m)
    assert not m.add_cut(row, rhs, (0, 1.0 + 1e-12))
    assert m.add_cut(row, rhs, (0, 1.5))


def test_rho_heuristics_valid():
    inst = gen_mv(GenSpec(family="mv", n=6, K=3, seed=4))
    for pp in (rf.rho_uniform_mineig(inst),
               rf.rho_sdp_simple(inst, ConicSettings(eps=1e-8))):
        assert np.all(pp.rho >= -1e-12)
        assert linalg.min_eigenvalue(inst.Q - np.diag(pp.rho)) >= \
            -1e-9 * (1.0 + np.abs(inst.Q).max())
    # the diagonal SDP should strictly beat the uniform heuristic here
    assert rf.rho_sdp_simple(inst).rho.sum() >= rf.rho_uniform_mineig(inst).rho.sum() - 1e-6


def test_socp_equals_qp_at_zero_rho():
    inst = gen_mv(GenSpec(family="mv", n=6, K=3, seed=2))
    bound_qp, _ = rf._relax_bound(rf.build_plain(inst))
    sol = solve_conic(rf.build_socp_relax(
        inst, rf.PerspectiveParams(rho=np.zeros(inst.n))), ConicSettings(eps=1e-9))
    assert sol.status == "Optimal"
    assert sol.primal_obj == pytest.approx(bound_qp, rel=1e-6, abs=1e-8)


def test_pipeline_bound_dominates_plain():
    inst = gen_ssp(GenSpec(family="ssp", n=6, K=2, seed=3))
    pipe = rf.perspective_pipeline(inst, ConicSettings(eps=1e-9))
    bound_plain, _ = rf._relax_bound(rf.build_plain(inst))
    assert pipe.bound_pr >= bound_plain - 1e-6 * (1.0 + abs(bound_plain))
    assert np.all(pipe.params.rho >= -1e-12)


def test_recovered_pair_is_convex_and_matches_bound():
    inst = gen_ssp(GenSpec(family="ssp", n=6, K=2, seed=3))
    pipe = rf.perspective_pipeline(inst, ConicSettings(eps=1e-9))
    lp = rf.recover_lift_params(inst, pipe.params, pipe.x, pipe.y,
                                soc_duals=pipe.soc_duals)
    H = rf._lift_hessian(inst.Q, lp.u, lp.v)
    assert linalg.min_eigenvalue(H) >= -1e-7 * (1.0 + np.abs(H).max())
    bound_lcr, _ = rf._relax_bound(rf.build_lcr(inst, lp))
    assert bound_lcr == pytest.approx(pipe.bound_pr,
                                      rel=1e-5, abs=1e-5)


def test_bound_compare_report_shape():
    inst = gen_mv(GenSpec(family="mv", n=6, K=2, seed=1))
    report = rf.bound_compare(inst)
    assert report.failures == {}
    assert report.bound_plain is not None
    assert report.bound_pr >= report.bound_plain - 1e-6
    assert abs(report.bound_lcr - report.bound_pr) <= 1e-5 * (1 + abs(report.bound_pr))
    assert "time_socp" in report.timings


def test_qcr_binary_objective_matches():
    inst = gen_mv(GenSpec(family="mv", n=6, seed=8, sections=2))
    params = rf.QcrParams(u=np.zeros(6), v=np.zeros(6),
                          w=np.full(len(inst.equality.g), 0.5),
                          t=np.zeros(rf.full_inequalities(
                              inst, pair_equalities=False)[2].shape[0]))
    m = rf.build_qcr(inst, params)
    # evaluate at an exactly binary-feasible point from the support oracle
    from scqp import bnb
    oracle = bnb.enumerate_oracle(inst)
    x, y = oracle.x, oracle.y
    z = np.zeros(m.nvar)
    z[slice(*m.span("x"))] = x
    z[slice(*m.span("y"))] = y
    if "s" in m.spans:
        GA, GB, gd = rf.full_inequalities(inst, pair_equalities=False)
        z[slice(*m.span("s"))] = gd - GA @ x - GB @ y
    p = model.SolverPoint(x=x, y=y)
    assert model.is_feasible(inst, p)
    assert m.objective_at(z) == pytest.approx(model.objective(inst, p), abs=1e-9)
