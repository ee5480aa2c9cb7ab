"""``findim`` command line: spectrum | simulate | verify | example.

Exit codes: 0 ran to completion (whatever the verdicts), 2 configuration or
spec error, 3 empty analysis, 4 blow-up.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import pde, spectrum
from .config import AnalysisSettings, ConfigError, load_config, spec_to_toml
from .pipeline import dump_json, git_describe, run_verify, spectrum_analysis
from .system import EXAMPLE_KINDS, NotDiagonalizable, NotPositive, diagonalize, example_family

EXIT_OK, EXIT_CONFIG, EXIT_EMPTY, EXIT_BLOWUP = 0, 2, 3, 4


class _Exit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _parse_d(text: str) -> list:
    try:
        d = [float(s) for s in text.split(",") if s.strip()]
    except ValueError as err:
        raise _Exit(EXIT_CONFIG, f"--d must be a comma-separated list of numbers: {err}")
    if not d or any(not x > 0 for x in d):
        raise _Exit(EXIT_CONFIG, "--d entries must be positive")
    return d


def _check_alpha(alpha: Optional[float]) -> None:
    if alpha is not None and not 0.75 < alpha < 1.0:
        raise _Exit(EXIT_CONFIG, f"alpha must lie in (3/4, 1), got {alpha}")


def _out_dir(path: Optional[str], default: str) -> Path:
    out = Path(path or default)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise _Exit(EXIT_CONFIG, f"cannot create output directory {out}: {err}")
    return out


def _config(args):
    if not args.spec:
        raise _Exit(EXIT_CONFIG, "--spec is required")
    _check_alpha(args.alpha)
    try:
        cfg = load_config(args.spec, auto_cutoff=args.auto_cutoff)
        return cfg.with_overrides(alpha=args.alpha, modes=args.modes, dt=args.dt,
                                  tend=args.tend, grid=args.grid, ntau=args.ntau,
                                  seed=args.seed, N=getattr(args, "N", None))
    except ConfigError as err:
        raise _Exit(EXIT_CONFIG, str(err))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_spectrum(args) -> int:
    _check_alpha(args.alpha)
    alpha = 0.8 if args.alpha is None else args.alpha
    if args.d:
        d = _parse_d(args.d)
        N = args.N or 1000
    elif args.spec:
        cfg = _config(args)
        alpha = cfg.spec.alpha
        try:
            d = diagonalize(cfg.spec.D).d.tolist()
        except (NotDiagonalizable, NotPositive) as err:
            raise _Exit(EXIT_CONFIG, f"D has no positive real diagonal form: {err}")
        N = args.N or cfg.analysis.N
    else:
        raise _Exit(EXIT_CONFIG, "give --d LIST or --spec PATH")
    if N < 10:
        raise _Exit(EXIT_CONFIG, "--N must be >= 10")
    out = _out_dir(args.out, "findim-spectrum")
    sa = spectrum_analysis(d, N, alpha, args.eps)
    spectrum.write_spectrum_csv(sa.table, out / "spectrum.csv")
    if sa.gaps is not None:
        spectrum.write_gaps_csv(sa.gaps.windows, out / "gaps.csv")
    summary = sa.summary()
    summary["alpha"] = alpha
    summary["verdict"] = sa.verdict
    dump_json(summary, out / "summary.json")
    print(f"d={d} N={N} alpha={alpha}")
    print(f"counting bounds: max violation {sa.bounds.max_violation:.3g}")
    print(f"gap growth: {sa.growth.verdict} (top-decade max {sa.growth.top_decade_max:.4g}, "
          f"threshold {sa.growth.threshold:.4g})")
    if sa.error:
        print(f"gap analysis: {sa.error}", file=sys.stderr)
        return EXIT_EMPTY
    print(f"gap windows: {len(sa.gaps.windows)} (eps={sa.gaps.eps:.4g}); quadratic bound "
          f"{'holds' if sa.gaps.bound_ok else 'FAILS'}")
    print(f"sparsity surrogate: {sa.sparsity.verdict} slope={sa.sparsity.slope:.4f}")
    print(f"wrote {out}/spectrum.csv, gaps.csv, summary.json")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    spec, solver, an = cfg.spec, cfg.solver, cfg.analysis
    n_traj = args.ntraj or an.n_traj
    out = _out_dir(args.out, "findim-simulate")
    try:
        trajs = pde.sample_attractor(spec, solver, n_traj, seed=an.seed)
    except NotDiagonalizable as err:
        raise _Exit(EXIT_CONFIG, str(err))
    manifest = {"spec_hash": spec.digest, "spec": spec.to_dict(), "solver": solver.to_dict(),
                "seed": an.seed, "n_traj": n_traj, "git": git_describe(), "files": []}
    summary = []
    for k, tr in enumerate(trajs):
        if tr.blowup_time is not None:
            dump_json(manifest, out / "manifest.json")
            print(f"trajectory {k} blew up at t={tr.blowup_time:.6g}", file=sys.stderr)
            return EXIT_BLOWUP
        name = f"trajectory_{k:02d}.csv"
        pde.write_trajectory_csv(tr, out / name)
        manifest["files"].append(name)
        norms = tr.norms(spec)
        keep = tr.times >= tr.transient
        tail = norms[keep] if np.any(keep) else norms
        summary.append({"trajectory": k, "initial_alpha_norm": float(norms[0]),
                        "final_alpha_norm": float(norms[-1]),
                        "post_transient_max": float(np.max(tail)),
                        "monotone_decay": bool(np.all(np.diff(norms) <= 1e-12 * norms[0])
                                               and norms[-1] <= 1e-3 * norms[0]),
                        "dissipativity_ok": tr.dissipativity_ok(spec)})
    manifest["summary"] = summary
    dump_json(manifest, out / "manifest.json")
    radius = max(s["post_transient_max"] for s in summary)
    if all(s["monotone_decay"] for s in summary):
        print(f"all {n_traj} trajectories decay to zero (max post-transient alpha-norm "
              f"{radius:.3e})")
    else:
        ok = all(s["dissipativity_ok"] for s in summary)
        print(f"absorbing ball: post-transient alpha-norm <= {radius:.6g} over {n_traj} "
              f"trajectories; dissipativity surrogate {'PASS' if ok else 'WARN'}")
    print(f"wrote {len(trajs)} trajectory CSVs and manifest.json to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _config(args)
    out = _out_dir(args.out, "findim-verify")
    progress = (lambda msg: print(f"[verify] {msg}", file=sys.stderr)) if args.verbose else None
    report = run_verify(cfg, progress=progress)
    (out / "report.json").write_text(report.to_json())
    table = report.table()
    (out / "report.txt").write_text(table + "\n")
    dump_json({"spec_hash": cfg.spec.digest, "source": cfg.source, "git": git_describe(),
               "solver": cfg.solver.to_dict(), "analysis": cfg.analysis.to_dict()},
              out / "manifest.json")
    print(table)
    return EXIT_OK


def cmd_example(args) -> int:
    kinds = EXAMPLE_KINDS if args.kind == "all" else (args.kind,)
    docs = {}
    for kind in kinds:
        spec = example_family(kind, **({} if args.alpha is None else {"alpha": args.alpha}))
        docs[kind] = spec_to_toml(spec, pde.SolverSettings(), AnalysisSettings())
    if args.out:
        out = _out_dir(args.out, ".")
        for kind, text in docs.items():
            (out / f"{kind}.toml").write_text(text)
            print(f"wrote {out / (kind + '.toml')}")
    else:
        for kind, text in docs.items():
            if len(docs) > 1:
                print(f"# --- {kind} ---")
            print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", help="TOML system configuration")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--alpha", type=float, help="phase-space exponent in (3/4, 1)")
    p.add_argument("--modes", type=int, help="Galerkin modes per component")
    p.add_argument("--dt", type=float, help="time step")
    p.add_argument("--tend", type=float, help="final time")
    p.add_argument("--grid", type=int, help="grid intervals for matrix fields")
    p.add_argument("--ntau", type=int, help="Gauss-Legendre nodes in tau")
    p.add_argument("--auto-cutoff", type=float, metavar="R",
                   help="wrap every f, g entry in bump(R, |u|^2)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="findim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="eigenvalues of A, gap windows, sparsity surrogate")
    _common(p)
    p.add_argument("--d", help="comma-separated diffusion coefficients, e.g. 1,4")
    p.add_argument("--N", type=int, help="number of eigenvalues (default 1000)")
    p.add_argument("--eps", type=float, help="gap threshold (default pi^2 d_- / m^2)")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("simulate", help="integrate seeded trajectories, write CSV + manifest")
    _common(p)
    p.add_argument("--ntraj", type=int, help="number of trajectories")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run every check and print the verdict table")
    _common(p)
    p.add_argument("--N", type=int, help="eigenvalues used in the gap analysis")
    p.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("example", help="emit a built-in example spec as TOML")
    p.add_argument("--kind", default="commuting_family", choices=EXAMPLE_KINDS + ("all",))
    p.add_argument("--alpha", type=float, help="phase-space exponent in (3/4, 1)")
    p.add_argument("--out", help="directory to write <kind>.toml into (default stdout)")
    p.set_defaults(func=cmd_example)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "example":
            _check_alpha(args.alpha)
        return args.func(args)
    except _Exit as err:
        print(f"findim: error: {err}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
