"""TOML run configuration: ``[system]``, ``[solver]`` and ``[analysis]`` tables.

A minimal file::

    [system]
    D = [[1.0, 0.0], [0.0, 2.0]]
    f = [["0", "0"], ["0", "0"]]
    g = ["14*u1 - u1^3", "26*u2 - u2^3"]
    cutoff = 50.0          # optional: wrap every entry in bump(R, |u|^2)

    [solver]
    n_modes = 32

    [analysis]
    seed = 0
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import tomli
import tomli_w

from .exprlang import ParseError
from .pde import SolverSettings
from .system import SpecError, SystemSpec

__all__ = ["ConfigError", "AnalysisSettings", "RunConfig", "load_config", "parse_config",
           "spec_to_toml"]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (maps to exit code 2)."""


@dataclass(frozen=True)
class AnalysisSettings:
    """Sample sizes and resolutions of the verification pipeline."""

    seed: int = 0
    n_traj: int = 8
    hull_pairs: int = 200
    hull_points: int = 65
    reduction_pairs: int = 8
    grid: int = 512
    n_tau: int = 16
    similarity_pairs: int = 2
    similarity_grid: int = 128
    N: int = 2000
    eps: Optional[float] = None
    min_sep: float = 1e-3

    def __post_init__(self):
        if self.n_traj < 1 or self.hull_pairs < 1 or self.reduction_pairs < 0:
            raise ConfigError("sample counts must be positive")
        if self.grid < 16 or self.n_tau < 2:
            raise ConfigError("grid must be >= 16 and n_tau >= 2")
        if not 8 <= self.similarity_grid <= 256:
            # the check also runs at twice this grid, which must stay <= 512
            raise ConfigError("similarity_grid must lie in [8, 256]")
        if self.N < 10:
            raise ConfigError("N must be >= 10")
        if self.eps is not None and not self.eps > 0:
            raise ConfigError("eps must be positive")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass(frozen=True)
class RunConfig:
    spec: SystemSpec
    solver: SolverSettings
    analysis: AnalysisSettings
    source: str = ""

    def with_overrides(self, alpha=None, modes=None, dt=None, tend=None, grid=None,
                       ntau=None, seed=None, N=None) -> "RunConfig":
        """Apply command-line overrides; ``None`` leaves a value unchanged."""
        spec, solver, analysis = self.spec, self.solver, self.analysis
        try:
            if alpha is not None:
                spec = spec.replace(alpha=alpha)
            sv = {k: v for k, v in dict(n_modes=modes, dt=dt, t_end=tend).items()
                  if v is not None}
            if "t_end" in sv and "transient" not in sv:
                sv["transient"] = min(solver.transient, sv["t_end"] / 2)
            if sv:
                solver = solver.replace(**sv)
            an = {k: v for k, v in dict(grid=grid, n_tau=ntau, seed=seed, N=N).items()
                  if v is not None}
            if an:
                analysis = replace(analysis, **an)
        except SpecError as err:
            raise ConfigError(str(err)) from err
        except ValueError as err:
            raise ConfigError(str(err)) from err
        return RunConfig(spec, solver, analysis, self.source)


def _table(doc: dict, name: str, allowed) -> dict:
    tab = doc.get(name, {})
    if not isinstance(tab, dict):
        raise ConfigError(f"[{name}] must be a table")
    unknown = set(tab) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {', '.join(sorted(unknown))}")
    return tab


def parse_config(doc: dict, source: str = "", auto_cutoff: Optional[float] = None
                 ) -> RunConfig:
    """Build a :class:`RunConfig` from a decoded TOML document."""
    unknown = set(doc) - {"system", "solver", "analysis"}
    if unknown:
        raise ConfigError(f"unknown tables: {', '.join(sorted(unknown))}")
    sysd = _table(doc, "system", ("name", "m", "D", "f", "g", "alpha", "cutoff", "strict"))
    for key in ("D", "f", "g"):
        if key not in sysd:
            raise ConfigError(f"[system] is missing '{key}'")
    cutoff = sysd.get("cutoff", auto_cutoff)
    try:
        spec = SystemSpec.build(
            sysd["D"], sysd["f"], sysd["g"], alpha=float(sysd.get("alpha", 0.8)),
            cutoff=None if cutoff is None else float(cutoff), name=str(sysd.get("name", "")),
            strict=bool(sysd.get("strict", True)),
        )
    except ParseError as err:
        raise ConfigError(f"expression error at offset {err.position}: {err.message}") from err
    except (SpecError, TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err
    if "m" in sysd and int(sysd["m"]) != spec.m:
        raise ConfigError(f"m={sysd['m']} does not match D of size {spec.m}")
    solver_keys = [f.name for f in fields(SolverSettings)]
    analysis_keys = [f.name for f in fields(AnalysisSettings)]
    try:
        solver = SolverSettings(**_table(doc, "solver", solver_keys))
        analysis = AnalysisSettings(**_table(doc, "analysis", analysis_keys))
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err
    return RunConfig(spec, solver, analysis, source)


def load_config(path, auto_cutoff: Optional[float] = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except FileNotFoundError as err:
        raise ConfigError(f"no such file: {path}") from err
    except UnicodeDecodeError as err:
        raise ConfigError(f"{path}: configuration must be ASCII") from err
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from err
    return parse_config(doc, source=str(path), auto_cutoff=auto_cutoff)


def spec_to_toml(spec: SystemSpec, solver: Optional[SolverSettings] = None,
                 analysis: Optional[AnalysisSettings] = None) -> str:
    """Serialise a spec (with cutoffs already applied to the expressions) as TOML."""
    sysd = spec.to_dict()
    sysd.pop("m")
    doc = {"system": sysd}
    if solver is not None:
        doc["solver"] = solver.to_dict()
    if analysis is not None:
        doc["analysis"] = analysis.to_dict()
    return tomli_w.dumps(doc)
