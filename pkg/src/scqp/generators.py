"""Seeded random instance generators for the portfolio (MV) and subset
selection (SSP) families, plus the section-equality augmentation.

Randomness comes from a self-contained splitmix64 stream so identical seeds
give bit-identical instances on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from scqp.model import EqualityBlock, Instance, make_instance

MASK64 = (1 << 64) - 1

# MV generator knobs: diagonal boost per dominance regime, and the buy-in
# threshold / position cap that keep K in {2..12} feasible under the
# budget row sum(x) = 1.
MV_DELTA = {"minus": 0.1, "zero": 1.0, "plus": 10.0}
MV_BUYIN = 0.05
MV_CAP = 0.6
SSP_BOUND = 100.0


class IndivisibleSections(Exception):
    pass


class SplitMix64:
    """Portable 64-bit PRNG (splitmix64 constants), with uniform/normal draws."""

    GAMMA = 0x9E3779B97F4A7C15
    MIX1 = 0xBF58476D1CE4E5B9
    MIX2 = 0x94D049BB133111EB

    def __init__(self, seed: int):
        self.state = seed & MASK64
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        self.state = (self.state + self.GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * self.MIX1) & MASK64
        z = ((z ^ (z >> 27)) * self.MIX2) & MASK64
        return z ^ (z >> 31)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * (2.0 ** -53)
        return lo + (hi - lo) * u

    def normal(self) -> float:
        if self._spare_normal is not None:
            z, self._spare_normal = self._spare_normal, None
            return z
        # Box-Muller; u1 strictly positive so log is finite.
        u1 = ((self.next_u64() >> 11) + 1) * (2.0 ** -53)
        u2 = (self.next_u64() >> 11) * (2.0 ** -53)
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare_normal = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def uniform_vector(self, size: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        return np.array([self.uniform(lo, hi) for _ in range(size)])

    def normal_matrix(self, rows: int, cols: int) -> np.ndarray:
        return np.array([[self.normal() for _ in range(cols)] for _ in range(rows)])


@dataclass(frozen=True)
class GenSpec:
    family: str
    n: int
    K: int | None = None
    dominance: str = "zero"
    sections: int | None = None
    seed: int = 0

    def check(self) -> None:
        if self.family not in ("mv", "ssp"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.K is not None and not (1 <= self.K <= self.n):
            raise ValueError("K must lie in [1, n]")
        if self.family == "mv" and self.dominance not in MV_DELTA:
            raise ValueError(f"unknown dominance regime {self.dominance!r}")
        if self.sections is not None and self.n % self.sections != 0:
            raise IndivisibleSections(
                f"sections={self.sections} does not divide n={self.n}")


def gen_mv(spec: GenSpec) -> Instance:
    """Cardinality-constrained mean-variance portfolio instance.

    Q = S + delta * diag(uniform[0,1]) with S = C^T C scaled to unit average
    variance; the dominance regime picks delta.  Budget sum(x)=1 is encoded
    as paired inequalities together with the expected-return floor.
    """
    spec.check()
    if spec.family != "mv":
        raise ValueError("gen_mv requires family='mv'")
    rng = SplitMix64(spec.seed)
    n = spec.n
    C = rng.normal_matrix(n, n)
    S = C.T @ C
    S *= n / np.trace(S)
    delta = MV_DELTA[spec.dominance]
    Q = S + delta * np.diag(rng.uniform_vector(n))
    mu = rng.uniform_vector(n, 0.002, 0.01)
    ret_target = float(np.quantile(mu, 0.3))
    ones = np.ones(n)
    A = np.vstack([ones, -ones, -mu])
    B = np.zeros((3, n))
    d = np.array([1.0, -1.0, -ret_target])
    inst = make_instance(
        Q=Q, c=np.zeros(n), h=np.zeros(n), A=A, B=B, d=d,
        lb=np.full(n, MV_BUYIN), ub=np.full(n, MV_CAP),
        cardinality=spec.K,
        metadata={"family": "mv", "dominance": spec.dominance, "seed": spec.seed},
    )
    if spec.sections is not None:
        inst = add_sections(inst, spec.sections)
    return inst


def gen_ssp(spec: GenSpec) -> Instance:
    """Subset-selection least-squares instance: min ||Ax - b||^2, |supp(x)| <= K.

    Uses 2n observations, standard-normal design, b = A beta + eps with
    beta ~ U[-1,1], and box bounds +-100 on x.  The constant ||b||^2 is
    carried in metadata so reported objectives can match the residual form.
    """
    spec.check()
    if spec.family != "ssp":
        raise ValueError("gen_ssp requires family='ssp'")
    rng = SplitMix64(spec.seed)
    n = spec.n
    m_obs = 2 * n
    A_data = rng.normal_matrix(m_obs, n)
    beta = rng.uniform_vector(n, -1.0, 1.0)
    eps = np.array([rng.normal() for _ in range(m_obs)])
    b_data = A_data @ beta + eps
    Q = A_data.T @ A_data
    c = -2.0 * A_data.T @ b_data
    inst = make_instance(
        Q=Q, c=c, h=np.zeros(n), A=np.zeros((0, n)), B=np.zeros((0, n)),
        d=np.zeros(0), lb=np.full(n, -SSP_BOUND), ub=np.full(n, SSP_BOUND),
        cardinality=spec.K,
        metadata={"family": "ssp", "seed": spec.seed,
                  "objective_offset": float(b_data @ b_data)},
    )
    if spec.sections is not None:
        inst = add_sections(inst, spec.sections)
    return inst


def add_sections(inst: Instance, sections: int) -> Instance:
    """Partition variables into equal sections, each forced to pick exactly
    one active indicator; drops the cardinality budget it now implies."""
    n = inst.n
    if sections < 1 or n % sections != 0:
        raise IndivisibleSections(f"sections={sections} does not divide n={n}")
    width = n // sections
    F = np.zeros((sections, n))
    for s in range(sections):
        F[s, s * width : (s + 1) * width] = 1.0
    block = EqualityBlock(E=np.zeros((sections, n)), F=F, g=np.ones(sections))
    metadata = dict(inst.metadata)
    metadata["sections"] = sections
    return Instance(Q=inst.Q, c=inst.c, h=inst.h, A=inst.A, B=inst.B, d=inst.d,
                    lb=inst.lb, ub=inst.ub, cardinality=None, equality=block,
                    metadata=metadata)
