"""Sine-Galerkin simulation and sampling of the attractor.

The cutoff cubic reaction drives every trajectory into an absorbing ball; after
the transient the samples cluster near the stable equilibria.

Run:  python demos/02_simulate_attractor.py
"""
import numpy as np

from findim.pde import SolverSettings, alpha_norm, sample_attractor, simulate
from findim.system import SystemSpec, example_family

# heat equation: the first mode decays exactly like exp(-pi^2 t)
heat = SystemSpec.build(np.eye(1), [["0"]], ["0"])
phi = np.zeros((1, 16))
phi[0, 0] = 1.0
tr = simulate(heat, phi, SolverSettings(n_modes=16, dt=1e-3, t_end=0.5, transient=0.0))
print(f"heat: c_1(0.5) = {tr.final.coeffs[0, 0]:.12f}, exact {np.exp(-np.pi ** 2 / 2):.12f}")

spec = example_family("commuting_family")
settings = SolverSettings(n_modes=32, dt=2e-3, t_end=6.0, transient=3.0)
trajs = sample_attractor(spec, settings, n_traj=6, seed=1)
for k, t in enumerate(trajs):
    norms = t.norms(spec)
    print(f"trajectory {k}: alpha-norm {norms[0]:7.3f} -> {norms[-1]:7.3f}")
final = sorted({round(alpha_norm(spec, t.final.coeffs), 3) for t in trajs})
print(f"distinct final alpha-norms (equilibria): {final}")
