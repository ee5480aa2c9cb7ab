"""T = U^-1 A U (discretised) has the spectrum of A.

With U = I the lowest eigenvalue is the discrete-sine value 4 G^2 sin^2(pi/2G);
with a nontrivial U from a commuting pair the lowest quarter still converges to
d_j pi^2 nu^2 at second order.

Run:  python demos/05_similarity.py
"""
import numpy as np

from findim.pde import SolverSettings, draw_pairs, sample_attractor
from findim.reduction import (MatrixFieldSample, compute_B, make_context,
                              similarity_spectrum_check, solve_U, subsample)
from findim.system import SystemSpec, example_family

lap = SystemSpec.build(np.eye(1), [["0"]], ["0"])
for G in (64, 128, 256):
    x = np.linspace(0, 1, G + 1)
    I = MatrixFieldSample(x, np.ones((G + 1, 1, 1)), "I")
    ev = similarity_spectrum_check(lap, I, I, n_compare=1).eigenvalues[0].real
    print(f"G={G:4d}: lowest eigenvalue {ev:.8f}  (pi^2 = {np.pi ** 2:.8f})")

spec = example_family("commuting_family")
trajs = sample_attractor(spec, SolverSettings(n_modes=32, dt=2e-3, t_end=4.0, transient=2.0),
                         n_traj=4, seed=0)
u, v = draw_pairs(trajs, 1, seed=8)[0]
U, V = solve_U(compute_B(make_context(spec, u, v, G=512)), spec.D)
n_cmp = 63
prev = None
for G in (64, 128, 256):
    rep = similarity_spectrum_check(spec, subsample(U, G), subsample(V, G), n_cmp)
    ratio = "" if prev is None else f"  ratio {prev / rep.eig_deviation:.2f}"
    print(f"G={G:4d}: eigenvalue deviation {rep.eig_deviation:.3e}{ratio}")
    prev = rep.eig_deviation
