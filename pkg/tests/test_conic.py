"""Operator-splitting conic solver: LP/SOC/SDP against closed forms.

Solver convention: min objective^T z subject to
constraint_matrix @ z + s = constraint_rhs with s in the cone product
(zero, nonneg, second-order, PSD in svec form, in that order).
"""

import numpy as np
import pytest

from scqp.conic import (ConeSpec, ConicProblem, ConicSettings, VariableLayout,
                        smat, solve_conic, svec)


def _layout(n):
    return VariableLayout({"z": (0, n)})


def test_svec_smat_round_trip():
    rng = np.random.default_rng(2)
    B = rng.standard_normal((4, 4))
    M = B + B.T
    v = svec(M)
    assert v.shape == (10,)
    assert np.allclose(smat(v, 4), M, atol=1e-14)
    # svec is an isometry: <M, M> = <svec(M), svec(M)>
    assert np.sum(M * M) == pytest.approx(v @ v, abs=1e-10)


def test_lp_box():
    # min -z over 0 <= z <= 1  -> z = 1
    prob = ConicProblem(objective=np.array([-1.0]),
                        constraint_matrix=np.array([[1.0], [-1.0]]),
                        constraint_rhs=np.array([1.0, 0.0]),
                        cones=ConeSpec(nonneg_dim=2), layout=_layout(1))
    sol = solve_conic(prob)
    assert sol.status == "Optimal"
    assert sol.z[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.primal_obj == pytest.approx(-1.0, abs=1e-7)
    assert max(sol.residuals) < 1e-7


def test_lp_duals_price_the_binding_row():
    prob = ConicProblem(objective=np.array([-1.0]),
                        constraint_matrix=np.array([[1.0], [-1.0]]),
                        constraint_rhs=np.array([1.0, 0.0]),
                        cones=ConeSpec(nonneg_dim=2), layout=_layout(1))
    sol = solve_conic(prob)
    assert sol.dual[0] == pytest.approx(1.0, abs=1e-6)  # z <= 1 binds
    assert sol.dual[1] == pytest.approx(0.0, abs=1e-6)


def test_soc_maximal_coordinate():
    # max b s.t. ||(a, b)|| <= 1  -> b = 1
    prob = ConicProblem(
        objective=np.array([0.0, -1.0]),
        constraint_matrix=np.array([[0.0, 0.0], [-1.0, 0.0], [0.0, -1.0]]),
        constraint_rhs=np.array([1.0, 0.0, 0.0]),
        cones=ConeSpec(soc_dims=(3,)), layout=_layout(2))
    sol = solve_conic(prob)
    assert sol.status == "Optimal"
    assert np.allclose(sol.z, [0.0, 1.0], atol=1e-6)


def test_diagonal_sdp_closed_form():
    # min <diag(q), X> s.t. trace X = 1, X psd  -> min(q)
    q = np.array([0.7, 0.0, 0.2])  # svec order (0,0), (1,0), (1,1)
    trace_row = np.array([[1.0, 0.0, 1.0]])
    prob = ConicProblem(objective=q,
                        constraint_matrix=np.vstack([trace_row, -np.eye(3)]),
                        constraint_rhs=np.array([1.0, 0.0, 0.0, 0.0]),
                        cones=ConeSpec(zero_dim=1, psd_dims=(2,)),
                        layout=_layout(3))
    sol = solve_conic(prob)
    assert sol.status == "Optimal"
    assert sol.primal_obj == pytest.approx(0.2, abs=1e-6)
    X = smat(sol.z, 2)
    assert np.linalg.eigvalsh(X).min() > -1e-7


def test_infeasible_certificate():
    # z >= 1 and z <= 0 simultaneously
    prob = ConicProblem(objective=np.array([0.0]),
                        constraint_matrix=np.array([[1.0], [-1.0]]),
                        constraint_rhs=np.array([0.0, -1.0]),
                        cones=ConeSpec(nonneg_dim=2), layout=_layout(1))
    sol = solve_conic(prob)
    assert sol.status == "Infeasible"


def test_iter_limit_reported():
    prob = ConicProblem(objective=np.array([-1.0]),
                        constraint_matrix=np.array([[1.0], [-1.0]]),
                        constraint_rhs=np.array([1.0, 0.0]),
                        cones=ConeSpec(nonneg_dim=2), layout=_layout(1))
    sol = solve_conic(prob, ConicSettings(eps=1e-16, max_iter=30))
    assert sol.status in ("IterLimit", "Optimal")
    assert sol.iterations <= 30
