"""Pairwise decomposition G(u) - G(v) = D h_xx + B0 h + B h_x and the transform U.

For one attractor pair: build B and B0 by quadrature in tau, check the
decomposition residual, solve U_x = -1/2 D^-1 B U, and assemble Q.

Run:  python demos/04_reduction_pair.py
"""
import numpy as np

from findim.pde import SolverSettings, draw_pairs, sample_attractor
from findim.reduction import (assemble_Q, check_commutation, compute_B, compute_B0,
                              decomposition_residual, inverse_defect, liouville_error,
                              make_context, solve_U)
from findim.system import example_family

spec = example_family("commuting_family")
trajs = sample_attractor(spec, SolverSettings(n_modes=32, dt=2e-3, t_end=4.0, transient=2.0),
                         n_traj=4, seed=0)
u, v = draw_pairs(trajs, 1, seed=0)[0]

ctx = make_context(spec, u, v, G=512)
B, B0 = compute_B(ctx), compute_B0(ctx)
print(f"decomposition residual: {decomposition_residual(ctx, B0, B):.2e}")
U, Uinv = solve_U(B, spec.D)
print(f"U(1) =\n{np.round(U.values[-1], 6)}")
print(f"Liouville error {liouville_error(U, B, spec.D):.1e}, "
      f"U U^-1 defect {inverse_defect(U, Uinv):.1e}")
print(f"max |DU - UD|_F = {check_commutation(U, spec.D).max_comm:.1e}")
q = assemble_Q(B0, B, spec.D)
print(f"sup |Q| = {q.sup_norm:.3f}, sup |Q''| (discrete) = {q.sup_second_difference:.3g}")
