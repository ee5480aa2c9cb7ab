"""Desk-scale numerical checks for low-dimensional long-time dynamics of 1D parabolic systems.

Modules
-------
exprlang   expressions in x, u1..um: parse, evaluate, differentiate
system     problem spec, diagonalisation of D, consistency condition
spectrum   exact spectrum of -D d_xx, gap windows, sparsity surrogate
pde        sine-Galerkin / ETDRK2 solver and attractor sampling
reduction  B, B0, U, Q, decomposition residual, similarity of T to A
pipeline   the end-to-end verdict report used by the ``findim`` command
"""
from . import exprlang, pde, reduction, spectrum, system
from .exprlang import ParseError, diff_u, evaluate, parse, to_string
from .pde import SolverSettings, sample_attractor, simulate
from .spectrum import construct_gap_sequence, enumerate_spectrum, test_sparsity_condition
from .system import (SystemSpec, check_consistency, diagonalize, example_family,
                     transform_system)

__version__ = "0.1.0"

__all__ = [
    "exprlang", "system", "spectrum", "pde", "reduction",
    "ParseError", "parse", "evaluate", "diff_u", "to_string",
    "SystemSpec", "diagonalize", "transform_system", "check_consistency", "example_family",
    "enumerate_spectrum", "construct_gap_sequence", "test_sparsity_condition",
    "SolverSettings", "simulate", "sample_attractor",
]
