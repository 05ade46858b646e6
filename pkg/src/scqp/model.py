"""Problem datum for semi-continuous QPs, feasibility/objective evaluation,
and the on-disk JSON instance format.

The base problem minimizes  x^T Q x + c^T x + h^T y  subject to
A x + B y <= d, a_i y_i <= x_i <= b_i y_i with binary indicators y, an
optional cardinality budget on y, and an optional equality block
E x + F y = g used by the QCR path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from scqp import linalg

DEFAULT_FEAS_TOL = 1e-6


class DimensionMismatch(Exception):
    pass


class ParseError(Exception):
    pass


@dataclass(frozen=True)
class EqualityBlock:
    E: np.ndarray
    F: np.ndarray
    g: np.ndarray

    @property
    def rows(self) -> int:
        return len(self.g)


@dataclass(frozen=True)
class Instance:
    Q: np.ndarray
    c: np.ndarray
    h: np.ndarray
    A: np.ndarray
    B: np.ndarray
    d: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    cardinality: int | None = None
    equality: EqualityBlock | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def m(self) -> int:
        return len(self.d)


@dataclass(frozen=True)
class SolverPoint:
    x: np.ndarray
    y: np.ndarray


def make_instance(Q, c, h, A, B, d, lb, ub, cardinality=None, equality=None,
                  metadata=None) -> Instance:
    """Normalize raw arrays into an Instance; shapes are checked strictly."""
    c = np.asarray(c, dtype=float).ravel()
    n = len(c)
    Q = np.asarray(Q, dtype=float).reshape(n, n)
    h = np.asarray(h, dtype=float).ravel()
    d = np.asarray(d, dtype=float).ravel()
    m = len(d)
    A = np.asarray(A, dtype=float).reshape(m, n) if m else np.zeros((0, n))
    B = np.asarray(B, dtype=float).reshape(m, n) if m else np.zeros((0, n))
    lb = np.asarray(lb, dtype=float).ravel()
    ub = np.asarray(ub, dtype=float).ravel()
    if not (len(h) == len(lb) == len(ub) == n):
        raise DimensionMismatch("h/lb/ub length must equal n")
    if equality is not None and not isinstance(equality, EqualityBlock):
        E, F, g = equality
        g = np.asarray(g, dtype=float).ravel()
        M = len(g)
        equality = EqualityBlock(
            E=np.asarray(E, dtype=float).reshape(M, n),
            F=np.asarray(F, dtype=float).reshape(M, n),
            g=g,
        )
    return Instance(Q=Q, c=c, h=h, A=A, B=B, d=d, lb=lb, ub=ub,
                    cardinality=cardinality, equality=equality,
                    metadata=dict(metadata or {}))


def validate(inst: Instance) -> list[str]:
    """Structural invariant check; returns one message per violation."""
    report: list[str] = []
    n = inst.n
    for name, arr, shape in [
        ("Q", inst.Q, (n, n)),
        ("A", inst.A, (inst.m, n)),
        ("B", inst.B, (inst.m, n)),
    ]:
        if arr.shape != shape:
            report.append(f"{name} has shape {arr.shape}, expected {shape}")
    if not all(np.all(np.isfinite(a)) for a in
               (inst.Q, inst.c, inst.h, inst.A, inst.B, inst.d, inst.lb, inst.ub)):
        report.append("non-finite data entries")
        return report
    if np.abs(inst.Q - inst.Q.T).max(initial=0.0) > 1e-10 * (1 + np.abs(inst.Q).max(initial=0.0)):
        report.append("Q is not symmetric")
    elif not linalg.is_numerically_psd(inst.Q):
        report.append("Q PSD violated (min eigenvalue below tolerance)")
    if np.any(inst.lb >= inst.ub):
        report.append("a_i < b_i violated for some i")
    if inst.cardinality is not None and not (1 <= inst.cardinality <= n):
        report.append(f"cardinality K={inst.cardinality} outside [1, n]")
    if inst.equality is not None:
        eq = inst.equality
        if eq.E.shape != (eq.rows, n) or eq.F.shape != (eq.rows, n):
            report.append("equality block has inconsistent dimensions")
    return report


def objective(inst: Instance, p: SolverPoint) -> float:
    """Exact quadratic objective x^T Q x + c^T x + h^T y."""
    x, y = np.asarray(p.x, dtype=float), np.asarray(p.y, dtype=float)
    if len(x) != inst.n or len(y) != inst.n:
        raise DimensionMismatch("point dimension does not match instance")
    return float(x @ inst.Q @ x + inst.c @ x + inst.h @ y)


def is_feasible(inst: Instance, p: SolverPoint, binary: bool = True,
                tol: float = DEFAULT_FEAS_TOL) -> bool:
    x, y = np.asarray(p.x, dtype=float), np.asarray(p.y, dtype=float)
    if len(x) != inst.n or len(y) != inst.n:
        raise DimensionMismatch("point dimension does not match instance")
    if inst.m and np.any(inst.A @ x + inst.B @ y > inst.d + tol):
        return False
    if inst.equality is not None:
        eq = inst.equality
        if np.any(np.abs(eq.E @ x + eq.F @ y - eq.g) > tol):
            return False
    if np.any(x < inst.lb * y - tol) or np.any(x > inst.ub * y + tol):
        return False
    if inst.cardinality is not None and y.sum() > inst.cardinality + tol:
        return False
    if binary:
        return bool(np.all(np.minimum(np.abs(y), np.abs(y - 1.0)) <= tol))
    return bool(np.all(y >= -tol) and np.all(y <= 1.0 + tol))


def full_inequalities(inst: Instance, include_cardinality: bool = True,
                      pair_equalities: bool = True):
    """Stack every linear constraint of the instance as G_x x + G_y y <= rhs.

    The cardinality budget becomes a row over y; the equality block (when
    requested) becomes paired inequalities so that every reformulation path
    shares one constraint representation.
    """
    n = inst.n
    Gx = [inst.A]
    Gy = [inst.B]
    rhs = [inst.d]
    if include_cardinality and inst.cardinality is not None:
        Gx.append(np.zeros((1, n)))
        Gy.append(np.ones((1, n)))
        rhs.append(np.array([float(inst.cardinality)]))
    if pair_equalities and inst.equality is not None:
        eq = inst.equality
        Gx.extend([eq.E, -eq.E])
        Gy.extend([eq.F, -eq.F])
        rhs.extend([eq.g, -eq.g])
    return np.vstack(Gx), np.vstack(Gy), np.concatenate(rhs)


def _matrix(rows) -> list[list[float]]:
    return [[float(v) for v in row] for row in np.atleast_2d(rows)]


def write_instance(inst: Instance, path) -> None:
    payload = {
        "n": inst.n,
        "m": inst.m,
        "Q": _matrix(inst.Q),
        "c": [float(v) for v in inst.c],
        "h": [float(v) for v in inst.h],
        "A": _matrix(inst.A) if inst.m else [],
        "B": _matrix(inst.B) if inst.m else [],
        "d": [float(v) for v in inst.d],
        "lb": [float(v) for v in inst.lb],
        "ub": [float(v) for v in inst.ub],
    }
    if inst.cardinality is not None:
        payload["cardinality"] = int(inst.cardinality)
    if inst.equality is not None:
        payload["equality"] = {
            "E": _matrix(inst.equality.E),
            "F": _matrix(inst.equality.F),
            "g": [float(v) for v in inst.equality.g],
        }
    if inst.metadata:
        payload["metadata"] = inst.metadata
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def read_instance(path) -> Instance:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    for key in ("n", "m", "Q", "c", "h", "A", "B", "d", "lb", "ub"):
        if key not in payload:
            raise ParseError(f"{path}: missing field {key!r}")
    n, m = int(payload["n"]), int(payload["m"])
    try:
        equality = None
        if payload.get("equality") is not None:
            eq = payload["equality"]
            equality = (eq["E"], eq["F"], eq["g"])
        inst = make_instance(
            Q=payload["Q"], c=payload["c"], h=payload["h"],
            A=payload["A"], B=payload["B"], d=payload["d"],
            lb=payload["lb"], ub=payload["ub"],
            cardinality=payload.get("cardinality"),
            equality=equality,
            metadata=payload.get("metadata"),
        )
    except (KeyError, ValueError, DimensionMismatch) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if inst.n != n or inst.m != m:
        raise ParseError(f"{path}: declared n/m disagree with array shapes")
    problems = validate(inst)
    if problems:
        raise ParseError(f"{path}: invalid instance: {'; '.join(problems)}")
    return inst
