"""The consistency condition D f = f D on the attractor hull.

Commuting examples pass with a zero commutator; the violating family produces
a witness point (x, pair, tau) where the commutator is of order one.

Run:  python demos/03_consistency.py
"""
from findim.pde import SolverSettings, build_hull, sample_attractor
from findim.system import check_consistency, example_family

settings = SolverSettings(n_modes=32, dt=2e-3, t_end=4.0, transient=2.0)
for kind in ("scalar_diffusion", "commuting_family", "violating_family"):
    spec = example_family(kind)
    hull = build_hull(sample_attractor(spec, settings, n_traj=6, seed=0), n_pairs=100, seed=0)
    rep = check_consistency(spec, hull)
    print(f"{kind:<18} {rep.verdict}  max commutator {rep.max_commutator:.3e} "
          f"over {rep.n_samples} samples")
    if rep.verdict == "FAIL":
        print(f"{'':<18} witness {rep.witness}")
