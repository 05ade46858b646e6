"""Solver toolkit for convex quadratic programs with semi-continuous variables.

Builds and compares tightened MIQP reformulations (perspective/SOCP,
perspective cuts, lift-and-convexification, and its QCR combination),
computes optimal reformulation parameters via small SDPs, and certifies
global optima with branch-and-bound.
"""

from scqp.model import Instance, SolverPoint, read_instance, write_instance
from scqp.generators import GenSpec, gen_mv, gen_ssp, add_sections

__all__ = [
    "Instance",
    "SolverPoint",
    "read_instance",
    "write_instance",
    "GenSpec",
    "gen_mv",
    "gen_ssp",
    "add_sections",
]
