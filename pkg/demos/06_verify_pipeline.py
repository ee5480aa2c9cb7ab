"""End-to-end verdict report, as produced by ``findim verify``.

Run:  python demos/06_verify_pipeline.py
"""
from findim.config import AnalysisSettings, RunConfig
from findim.pde import SolverSettings
from findim.pipeline import run_verify
from findim.system import example_family

solver = SolverSettings(n_modes=16, dt=2e-3, t_end=4.0, transient=2.0)
for kind in ("commuting_family", "violating_family"):
    cfg = RunConfig(example_family(kind), solver, AnalysisSettings(grid=256, N=1000), kind)
    print(run_verify(cfg).table())
    print()
