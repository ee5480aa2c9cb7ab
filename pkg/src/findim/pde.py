"""Sine-Galerkin discretisation and exponential (ETDRK2) time stepping.

Each component is expanded as ``u_j(x) = sum_nu c[j, nu] * sqrt(2) sin(pi nu x)``
so the Dirichlet conditions hold identically and ``A = -D d_xx`` acts
diagonally (after diagonalising ``D``).  The nonlinearity
``F(u) = f(x, u) u_x + g(x, u)`` is evaluated pseudospectrally on the interior
points of a uniform grid and projected back with the discrete sine transform.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .system import Diagonalization, HullSample, SystemSpec, diagonalize

__all__ = [
    "BlowUpError",
    "SolverSettings",
    "GalerkinState",
    "TrajectorySample",
    "Integrator",
    "sine_basis",
    "synthesize",
    "eval_vector_field",
    "vector_field_on_grid",
    "step",
    "simulate",
    "sobolev_norm",
    "alpha_norm",
    "random_state",
    "sample_attractor",
    "check_w2_bound",
    "draw_pairs",
    "build_hull",
    "write_trajectory_csv",
]

BLOWUP_LIMIT = 1e12
# Reproducibility tolerance of the fixed-step integrator: the semigroup and
# conjugacy checks are deterministic up to rounding, far below this.
INTEGRATOR_TOL = 1e-10


class BlowUpError(ArithmeticError):
    def __init__(self, t: float, message: str = ""):
        super().__init__(message or f"solution blew up at t={t:.6g}")
        self.t = t


@dataclass(frozen=True)
class SolverSettings:
    n_modes: int = 32
    dt: float = 1e-3
    t_end: float = 8.0
    transient: float = 4.0
    snapshot_every: int = 20
    dealias: float = 1.5

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_modes < 8:
            raise ValueError("n_modes must be >= 8")
        if self.dealias not in (1, 1.0, 1.5):
            raise ValueError("dealias must be 1 or 3/2")
        if self.t_end < 0 or self.transient < 0:
            raise ValueError("times must be non-negative")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def n_grid(self) -> int:
        """Interior quadrature points for the nonlinear term."""
        return int(math.ceil(self.dealias * (self.n_modes + 1))) - 1

    def to_dict(self) -> dict:
        return {"n_modes": self.n_modes, "dt": self.dt, "t_end": self.t_end,
                "transient": self.transient, "snapshot_every": self.snapshot_every,
                "dealias": self.dealias}

    def replace(self, **changes) -> "SolverSettings":
        kw = self.to_dict()
        kw.update(changes)
        return SolverSettings(**kw)


@dataclass(frozen=True)
class GalerkinState:
    coeffs: np.ndarray  # (m, n_modes)
    t: float = 0.0

    @property
    def m(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_modes(self) -> int:
        return self.coeffs.shape[1]


# ---------------------------------------------------------------------------
# Basis
# ---------------------------------------------------------------------------


def sine_basis(n_modes: int, x, deriv: int = 0) -> np.ndarray:
    """``deriv``-th x-derivative of ``sqrt(2) sin(pi nu x)``, shape (n_modes, len(x))."""
    x = np.asarray(x, dtype=float)
    k = math.pi * np.arange(1, n_modes + 1)[:, None]
    arg = k * x[None, :]
    r = deriv % 4
    base = (np.sin, np.cos, lambda a: -np.sin(a), lambda a: -np.cos(a))[r](arg)
    return math.sqrt(2.0) * k ** deriv * base


def synthesize(coeffs, x, deriv: int = 0) -> np.ndarray:
    """Grid values of the ``deriv``-th derivative, shape (m, len(x))."""
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    return coeffs @ sine_basis(coeffs.shape[1], x, deriv)


def vector_field_on_grid(spec: SystemSpec, coeffs, x) -> np.ndarray:
    """Pointwise ``G(u) = D u_xx + f(x,u) u_x + g(x,u)``, shape (m, len(x))."""
    u = synthesize(coeffs, x)
    ux = synthesize(coeffs, x, 1)
    uxx = synthesize(coeffs, x, 2)
    out = spec.D @ uxx + spec.eval_g(x, u)
    if not spec.f_is_zero:
        out += np.einsum("ipx,px->ix", spec.eval_f(x, u), ux)
    return out


# ---------------------------------------------------------------------------
# phi functions for exponential integrators
# ---------------------------------------------------------------------------


def _phi1(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-5
    zs = z[small]
    out[small] = 1 + zs / 2 + zs * zs / 6
    zl = z[~small]
    out[~small] = np.expm1(zl) / zl
    return out


def _phi2(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 0.1
    zs = z[small]
    # Taylor series of (e^z - 1 - z) / z^2 = sum z^k / (k+2)!
    acc = np.zeros_like(zs)
    term = np.full_like(zs, 0.5)
    for k in range(1, 16):
        acc += term
        term = term * zs / (k + 2)
    out[small] = acc
    zl = z[~small]
    out[~small] = (np.expm1(zl) - zl) / (zl * zl)
    return out


# ---------------------------------------------------------------------------
# Integrator
# ---------------------------------------------------------------------------


class Integrator:
    """ETDRK2 stepper for one (spec, settings) pair.

    The linear part is propagated exactly, mode by mode, in the eigenbasis of
    ``D``; the nonlinearity enters through the second-order Cox-Matthews
    correction.
    """

    def __init__(self, spec: SystemSpec, settings: SolverSettings,
                 diag: Optional[Diagonalization] = None):
        self.spec = spec
        self.settings = settings
        N = settings.n_modes
        D = spec.D
        self.diagonal = np.count_nonzero(D - np.diag(np.diag(D))) == 0
        if self.diagonal:
            d = np.diag(D).copy()
            self.C = self.Cinv = None
        else:
            diag = diag or diagonalize(D)
            d = diag.d
            self.C, self.Cinv = diag.C, diag.Cinv
        self.d = d
        nu = np.arange(1, N + 1)
        self.lam = d[:, None] * (math.pi * nu[None, :]) ** 2  # (m, N) eigenvalues of A
        z = -self.lam * settings.dt
        self.E = np.exp(z)
        self.phi1 = settings.dt * _phi1(z)
        self.phi2 = settings.dt * _phi2(z)
        M = settings.n_grid
        self.x = np.arange(1, M + 1) / (M + 1)
        self.S = sine_basis(N, self.x).T  # (M, N)
        self.Sx = sine_basis(N, self.x, 1).T
        self.P = self.S.T / (M + 1)  # discrete projection, exact on span(phi_1..phi_M)
        self.has_f = not spec.f_is_zero
        self.has_g = any(not (hasattr(e, "value") and e.value == 0.0) for e in spec.g)

    # coordinates in which the linear operator is diagonal
    def _to_eig(self, c):
        return c if self.diagonal else self.Cinv @ c

    def _from_eig(self, c):
        return c if self.diagonal else self.C @ c

    def nonlinear(self, c) -> np.ndarray:
        """Galerkin projection of F(u), shape (m, N)."""
        m = c.shape[0]
        if not (self.has_f or self.has_g):
            return np.zeros_like(c)
        u = c @ self.S.T
        F = self.spec.eval_g(self.x, u) if self.has_g else np.zeros((m, len(self.x)))
        if self.has_f:
            ux = c @ self.Sx.T
            F = F + np.einsum("ipx,px->ix", self.spec.eval_f(self.x, u), ux)
        return F @ self.P.T

    def rate(self, c) -> np.ndarray:
        """Full Galerkin vector field ``-A c + P F(u)``."""
        lin = self._from_eig(-self.lam * self._to_eig(c))
        return lin + self.nonlinear(c)

    def step(self, c, t: float = 0.0) -> np.ndarray:
        n0 = self.nonlinear(c)
        v0 = self._to_eig(c)
        w0 = self._to_eig(n0)
        va = self.E * v0 + self.phi1 * w0
        a = self._from_eig(va)
        self._guard(a, t)
        na = self.nonlinear(a)
        vnew = va + self.phi2 * (self._to_eig(na) - w0)
        out = self._from_eig(vnew)
        self._guard(out, t)
        return out

    @staticmethod
    def _guard(c, t):
        if not np.all(np.isfinite(c)) or np.max(np.abs(c)) > BLOWUP_LIMIT:
            raise BlowUpError(t)

    def run(self, c, n_steps: int, t0: float = 0.0, every: int = 0):
        """Advance ``n_steps``; returns final coefficients and (times, snapshots)."""
        c = np.array(c, dtype=float)
        dt = self.settings.dt
        times, snaps = [], []
        if every:
            times.append(t0)
            snaps.append(c.copy())
        for k in range(1, n_steps + 1):
            c = self.step(c, t0 + (k - 1) * dt)
            if every and (k % every == 0 or k == n_steps):
                times.append(t0 + k * dt)
                snaps.append(c.copy())
        return c, np.array(times), np.array(snaps)


def eval_vector_field(spec: SystemSpec, state, settings: Optional[SolverSettings] = None
                      ) -> np.ndarray:
    """Time derivative of the Galerkin coefficients."""
    c = state.coeffs if isinstance(state, GalerkinState) else np.asarray(state, dtype=float)
    if settings is None:
        settings = SolverSettings(n_modes=max(8, c.shape[1]))
    if np.max(np.abs(c), initial=0.0) > BLOWUP_LIMIT:
        raise BlowUpError(getattr(state, "t", 0.0), "coefficient exceeds blow-up guard")
    return Integrator(spec, settings).rate(c)


def step(spec: SystemSpec, state: GalerkinState, settings: SolverSettings) -> GalerkinState:
    """One ETDRK2 step of size ``settings.dt``."""
    integ = Integrator(spec, settings)
    return GalerkinState(integ.step(state.coeffs, state.t), state.t + settings.dt)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass
class TrajectorySample:
    times: np.ndarray
    coeffs: np.ndarray  # (n_snap, m, N)
    transient: float
    metadata: dict = field(default_factory=dict)
    blowup_time: Optional[float] = None

    def __len__(self):
        return len(self.times)

    @property
    def final(self) -> GalerkinState:
        return GalerkinState(self.coeffs[-1], float(self.times[-1]))

    def post_transient(self):
        keep = self.times >= self.transient
        return self.times[keep], self.coeffs[keep]

    def norms(self, spec: SystemSpec, s: Optional[float] = None) -> np.ndarray:
        s = spec.alpha if s is None else s
        return np.array([alpha_norm(spec, c, s) for c in self.coeffs])

    def dissipativity_ok(self, spec: SystemSpec) -> bool:
        """Post-transient norms never exceed twice their running median."""
        keep = self.times >= self.transient
        nrm = self.norms(spec)[keep]
        for k in range(len(nrm)):
            if nrm[k] > 2.0 * np.median(nrm[: k + 1]) + 1e-300:
                return False
        return True


def simulate(spec: SystemSpec, u0, settings: SolverSettings,
             integrator: Optional[Integrator] = None) -> TrajectorySample:
    """Integrate from ``u0`` (coefficients or :class:`GalerkinState`) to ``t0 + t_end``.

    Raises :class:`BlowUpError` carrying the blow-up time.
    """
    if isinstance(u0, GalerkinState):
        c0, t0 = u0.coeffs, u0.t
    else:
        c0, t0 = np.asarray(u0, dtype=float), 0.0
    c0 = np.atleast_2d(c0)
    if c0.shape != (spec.m, settings.n_modes):
        raise ValueError(f"initial data must have shape {(spec.m, settings.n_modes)}")
    integ = integrator or Integrator(spec, settings)
    _, times, snaps = integ.run(c0, settings.n_steps, t0=t0, every=settings.snapshot_every)
    meta = {"spec_hash": spec.digest, "settings": settings.to_dict()}
    return TrajectorySample(times, snaps, transient=t0 + settings.transient, metadata=meta)


def sobolev_norm(state, s: float, d: Sequence[float]) -> float:
    """``(sum_{j,nu} (d_j pi^2 nu^2)^(2s) c[j,nu]^2)^(1/2)``, i.e. ``|A^s u|``."""
    if s > 2:
        raise ValueError("s must be <= 2")
    c = state.coeffs if isinstance(state, GalerkinState) else np.atleast_2d(state)
    d = np.asarray(d, dtype=float)
    lam = d[:, None] * (math.pi * np.arange(1, c.shape[1] + 1)[None, :]) ** 2
    return float(np.sqrt(np.sum(lam ** (2 * s) * c * c)))


def alpha_norm(spec: SystemSpec, coeffs, s: Optional[float] = None) -> float:
    """Sobolev-scale norm measured in the eigen-coordinates of ``D``."""
    s = spec.alpha if s is None else s
    D = spec.D
    if np.count_nonzero(D - np.diag(np.diag(D))) == 0:
        return sobolev_norm(coeffs, s, np.diag(D))
    dg = diagonalize(D)
    return sobolev_norm(dg.Cinv @ np.atleast_2d(coeffs), s, dg.d)


def random_state(spec: SystemSpec, n_modes: int, rng: np.random.Generator,
                 radius: float = 1.0) -> np.ndarray:
    """Random coefficients ``~ nu^-3`` scaled to alpha-norm ``radius * U(1/4, 1)``.

    The decay keeps the alpha-norm bounded as ``n_modes`` grows (for
    ``alpha > 3/4`` a ``nu^-2`` decay would not), and draws are made mode by
    mode so the leading coefficients do not depend on ``n_modes``.
    """
    nu = np.arange(1, n_modes + 1)
    r = radius * rng.uniform(0.25, 1.0)
    c = rng.standard_normal((n_modes, spec.m)).T / nu[None, :] ** 3
    return c * (r / alpha_norm(spec, c))


def sample_attractor(spec: SystemSpec, settings: SolverSettings, n_traj: int, seed: int = 0,
                     radius: float = 1.0, workers: int = 1) -> list:
    """Run ``n_traj`` seeded trajectories; blown-up runs carry ``blowup_time``."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    children = np.random.SeedSequence(seed).spawn(n_traj)
    inits = [random_state(spec, settings.n_modes, np.random.default_rng(ss), radius)
             for ss in children]
    integ = Integrator(spec, settings)

    def run(k):
        try:
            tr = simulate(spec, inits[k], settings, integrator=integ)
        except BlowUpError as err:
            meta = {"spec_hash": spec.digest, "settings": settings.to_dict()}
            tr = TrajectorySample(np.empty(0), np.empty((0, spec.m, settings.n_modes)),
                                  settings.transient, meta, blowup_time=err.t)
        tr.metadata.update(seed=seed, trajectory=k)
        return tr

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, range(n_traj)))
    return [run(k) for k in range(n_traj)]


@dataclass(frozen=True)
class W2Report:
    verdict: str
    sup_F_norm: float
    sup_F_norm_double: float
    radius: float
    n_samples: int


def _l2(values, x) -> float:
    return float(np.sqrt(np.trapezoid(np.sum(values * values, axis=0), x)))


def check_w2_bound(spec: SystemSpec, n_samples: int, radius: float, n_modes: int = 32,
                   seed: int = 0, n_x: int = 513) -> W2Report:
    """sup ``|F(u)|_L2`` over random ``u`` in the alpha-ball of ``radius`` and of ``2*radius``.

    The same directions are used at both radii; WARN if the sup grows by more
    than 1.5x (unbounded nonlinearity).
    """
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, n_x)
    sups = [0.0, 0.0]
    for _ in range(n_samples):
        c = random_state(spec, n_modes, rng, radius)
        for k, scale in enumerate((1.0, 2.0)):
            cs = scale * c
            u = synthesize(cs, x)
            F = spec.eval_g(x, u)
            if not spec.f_is_zero:
                F = F + np.einsum("ipx,px->ix", spec.eval_f(x, u), synthesize(cs, x, 1))
            sups[k] = max(sups[k], _l2(F, x))
    grows = sups[1] > 1.5 * sups[0] + 1e-300
    return W2Report("WARN" if grows else "PASS", sups[0], sups[1], radius, n_samples)


# ---------------------------------------------------------------------------
# Pairs and hull samples from trajectories
# ---------------------------------------------------------------------------


def _pool(trajectories) -> np.ndarray:
    """Final 50% of post-transient snapshots of every trajectory, stacked."""
    keep = []
    for tr in trajectories:
        if tr.blowup_time is not None:
            continue
        _, c = tr.post_transient()
        if len(c):
            keep.append(c[len(c) // 2:])
    if not keep:
        raise ValueError("no post-transient snapshots available")
    return np.concatenate(keep)


def draw_pairs(trajectories, n_pairs: int, seed: int = 0, min_sep: float = 0.0) -> list:
    """Random snapshot pairs ``(u, v)`` with ``|u - v|_l2 > min_sep``."""
    pool = _pool(trajectories)
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(200 * n_pairs):
        if len(pairs) == n_pairs:
            break
        i, j = rng.integers(len(pool), size=2)
        if i == j:
            continue
        if np.linalg.norm(pool[i] - pool[j]) <= min_sep:
            continue
        pairs.append((pool[i], pool[j]))
    if len(pairs) < n_pairs:
        raise ValueError(f"could only draw {len(pairs)} of {n_pairs} separated pairs")
    return pairs


def build_hull(trajectories, n_pairs: int = 200, seed: int = 0, n_x: int = 65,
               taus=(0.0, 0.25, 0.5, 0.75, 1.0)) -> HullSample:
    """Convex-combination sample of the attractor on a uniform grid including 0 and 1."""
    pool = _pool(trajectories)
    rng = np.random.default_rng(seed)
    idx = rng.integers(len(pool), size=(n_pairs, 2))
    x = np.linspace(0.0, 1.0, n_x)
    u = np.stack([synthesize(pool[i], x) for i in idx[:, 0]])
    v = np.stack([synthesize(pool[j], x) for j in idx[:, 1]])
    return HullSample(x=x, u=u, v=v, taus=np.asarray(taus, dtype=float))


def write_trajectory_csv(sample: TrajectorySample, path) -> None:
    """Columns ``t, j, nu, c`` (1-based j, nu)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "j", "nu", "c"])
        for t, c in zip(sample.times, sample.coeffs):
            for j in range(c.shape[0]):
                for nu in range(c.shape[1]):
                    w.writerow([repr(float(t)), j + 1, nu + 1, repr(float(c[j, nu]))])
