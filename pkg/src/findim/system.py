"""Problem specification, diagonalisation of D, block structure, consistency check.

A :class:`SystemSpec` describes

    u_t = D u_xx + f(x, u) u_x + g(x, u),   u(0) = u(1) = 0,   x in [0, 1],

with ``f`` an m-by-m matrix and ``g`` an m-vector of :mod:`findim.exprlang`
expressions.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import exprlang as el

__all__ = [
    "SpecError",
    "NotDiagonalizable",
    "NotPositive",
    "SystemSpec",
    "Diagonalization",
    "BlockStructure",
    "HullSample",
    "ConsistencyReport",
    "diagonalize",
    "transform_system",
    "check_consistency",
    "block_structure",
    "example_family",
    "EXAMPLE_KINDS",
]

MAX_M = 16
BOUNDARY_TOL = 1e-12


class SpecError(ValueError):
    """Invalid system specification."""


class NotDiagonalizable(ArithmeticError):
    """D is defective or has a complex spectrum."""


class NotPositive(ArithmeticError):
    """D has an eigenvalue <= 0."""


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """The full problem: ``m``, ``D``, ``f`` (m x m), ``g`` (m), ``alpha``, ``cutoff``.

    Use :meth:`build` to construct from strings; it applies the optional
    auto-cutoff and checks the boundary compatibility ``f(x,0) = g(x,0) = 0``
    at ``x = 0, 1``.
    """

    m: int
    D: np.ndarray
    f: tuple
    g: tuple
    alpha: float = 0.8
    cutoff: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        D = np.array(self.D, dtype=float)
        D.setflags(write=False)
        object.__setattr__(self, "D", D)
        m = self.m
        if m < 1:
            raise SpecError("m must be >= 1")
        if D.shape != (m, m):
            raise SpecError(f"D must be {m}x{m}, got shape {D.shape}")
        if not np.all(np.isfinite(D)):
            raise SpecError("D has non-finite entries")
        if len(self.f) != m or any(len(row) != m for row in self.f):
            raise SpecError(f"f must be an {m}x{m} array of expressions")
        if len(self.g) != m:
            raise SpecError(f"g must have {m} entries")
        object.__setattr__(self, "f", tuple(tuple(row) for row in self.f))
        object.__setattr__(self, "g", tuple(self.g))
        for e in self.all_exprs():
            if el.max_u_index(e) > m:
                raise SpecError(f"expression {el.to_string(e)!r} uses u index > m={m}")
        if not 0.75 < self.alpha < 1.0:
            raise SpecError(f"alpha must lie in (3/4, 1), got {self.alpha}")
        if self.cutoff is not None and not self.cutoff > 0:
            raise SpecError("cutoff radius must be positive")

    @classmethod
    def build(
        cls,
        D,
        f: Sequence[Sequence[str]],
        g: Sequence[str],
        alpha: float = 0.8,
        cutoff: Optional[float] = None,
        name: str = "",
        strict: bool = True,
    ) -> "SystemSpec":
        """Parse string entries; with ``cutoff=R`` each entry is multiplied by ``bump(R, |u|^2)``.

        ``strict`` enforces the boundary compatibility condition.
        """
        D = np.atleast_2d(np.array(D, dtype=float))
        m = D.shape[0]
        fe = [[el.parse(s, m) if isinstance(s, str) else s for s in row] for row in f]
        ge = [el.parse(s, m) if isinstance(s, str) else s for s in g]
        if cutoff is not None:
            norm2 = el.ZERO
            for k in range(1, m + 1):
                norm2 = el.add(norm2, el.power(el.Var(k), 2))
            cut = el.bump(cutoff, norm2)
            fe = [[el.mul(e, cut) for e in row] for row in fe]
            ge = [el.mul(e, cut) for e in ge]
        spec = cls(m=m, D=D, f=fe, g=ge, alpha=alpha, cutoff=cutoff, name=name)
        if strict:
            spec.check_boundary()
        return spec

    def all_exprs(self):
        for row in self.f:
            yield from row
        yield from self.g

    def boundary_values(self) -> float:
        """max |f(x,0)|, |g(x,0)| over x in {0, 1}."""
        zero = [0.0] * self.m
        worst = 0.0
        for x in (0.0, 1.0):
            for e in self.all_exprs():
                worst = max(worst, abs(float(el.evaluate(e, x, zero))))
        return worst

    def check_boundary(self):
        worst = self.boundary_values()
        if worst > BOUNDARY_TOL:
            raise SpecError(
                f"boundary compatibility fails: max |f(x,0)|,|g(x,0)| at x=0,1 is {worst:.3e}"
            )

    # -- numerical evaluation -------------------------------------------------

    @cached_property
    def _compiled(self):
        f = [[el.lambdify(e) for e in row] for row in self.f]
        g = [el.lambdify(e) for e in self.g]
        df = [[[el.lambdify(e) for e in col] for col in row] for row in self.df_du]
        dg = [[el.lambdify(e) for e in row] for row in self.dg_du]
        return f, g, df, dg

    def eval_f(self, x, u) -> np.ndarray:
        """f(x, u) with ``u`` of shape (m, ...) -> array (m, m, ...)."""
        u = np.asarray(u, dtype=float)
        shape = np.broadcast(np.asarray(x), u[0]).shape
        out = np.empty((self.m, self.m) + shape)
        for i, row in enumerate(self._compiled[0]):
            for j, fn in enumerate(row):
                out[i, j] = fn(x, u)
        return out

    def eval_g(self, x, u) -> np.ndarray:
        """g(x, u) with ``u`` of shape (m, ...) -> array (m, ...)."""
        u = np.asarray(u, dtype=float)
        shape = np.broadcast(np.asarray(x), u[0]).shape
        out = np.empty((self.m,) + shape)
        for i, fn in enumerate(self._compiled[1]):
            out[i] = fn(x, u)
        return out

    def eval_df(self, x, u) -> np.ndarray:
        """``out[i, p, l] = d f_ip / d u_l`` at (x, u), shape (m, m, m, ...)."""
        u = np.asarray(u, dtype=float)
        shape = np.broadcast(np.asarray(x), u[0]).shape
        m = self.m
        out = np.empty((m, m, m) + shape)
        for i in range(m):
            for p in range(m):
                for l in range(m):
                    out[i, p, l] = self._compiled[2][i][p][l](x, u)
        return out

    def eval_dg(self, x, u) -> np.ndarray:
        """``out[i, l] = d g_i / d u_l`` at (x, u), shape (m, m, ...)."""
        u = np.asarray(u, dtype=float)
        shape = np.broadcast(np.asarray(x), u[0]).shape
        out = np.empty((self.m, self.m) + shape)
        for i in range(self.m):
            for l in range(self.m):
                out[i, l] = self._compiled[3][i][l](x, u)
        return out

    @cached_property
    def df_du(self) -> tuple:
        """``df_du[i][p][l]`` is the expression for d f_ip / d u_l."""
        return tuple(
            tuple(tuple(el.diff_u(e, l + 1) for l in range(self.m)) for e in row)
            for row in self.f
        )

    @cached_property
    def dg_du(self) -> tuple:
        """``dg_du[i][l]`` is the expression for d g_i / d u_l."""
        return tuple(tuple(el.diff_u(e, l + 1) for l in range(self.m)) for e in self.g)

    @cached_property
    def f_is_zero(self) -> bool:
        return all(isinstance(e, el.Const) and e.value == 0.0 for row in self.f for e in row)

    # -- serialisation --------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "m": self.m,
            "D": self.D.tolist(),
            "f": [[el.to_string(e) for e in row] for row in self.f],
            "g": [el.to_string(e) for e in self.g],
            "alpha": self.alpha,
        }
        if self.name:
            d["name"] = self.name
        return d

    @cached_property
    def digest(self) -> str:
        """Stable short hash of the specification."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "SystemSpec":
        kw = dict(m=self.m, D=self.D, f=self.f, g=self.g, alpha=self.alpha,
                  cutoff=self.cutoff, name=self.name)
        kw.update(changes)
        return SystemSpec(**kw)


# ---------------------------------------------------------------------------
# Diagonalisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Diagonalization:
    C: np.ndarray
    Cinv: np.ndarray
    d: np.ndarray  # ascending
    cond: float

    @property
    def Dbar(self) -> np.ndarray:
        return np.diag(self.d)

    def residual(self, D) -> float:
        D = np.asarray(D, dtype=float)
        R = D - self.C @ self.Dbar @ self.Cinv
        return float(np.linalg.norm(R) / max(np.linalg.norm(D), 1e-300))


def diagonalize(D, imag_tol: float = 1e-10, cond_max: float = 1e12) -> Diagonalization:
    """Real diagonalisation ``D = C diag(d) C^-1`` with ``d`` ascending and positive.

    Raises :class:`NotDiagonalizable` for complex or defective spectra and
    :class:`NotPositive` if some ``d_j <= 0``.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    m = D.shape[0]
    if D.shape != (m, m):
        raise ValueError("D must be square")
    if m > MAX_M:
        raise ValueError(f"m={m} exceeds the dense limit {MAX_M}")
    scale = max(np.linalg.norm(D), 1e-300)
    if np.count_nonzero(D - np.diag(np.diag(D))) == 0:
        d = np.diag(D).copy()
        order = np.argsort(d, kind="stable")
        C = np.eye(m)[:, order]
        d = d[order]
        Cinv = C.T.copy()
    else:
        w, V = np.linalg.eig(D)
        if np.max(np.abs(w.imag)) > imag_tol * scale:
            raise NotDiagonalizable(f"complex eigenvalues {w}")
        w = w.real
        V = V.real
        order = np.argsort(w, kind="stable")
        d, C = w[order], V[:, order]
        # deterministic sign: largest-magnitude entry of each column positive
        for k in range(m):
            p = np.argmax(np.abs(C[:, k]))
            if C[p, k] < 0:
                C[:, k] = -C[:, k]
        cond = np.linalg.cond(C)
        if not np.isfinite(cond) or cond > cond_max:
            raise NotDiagonalizable(f"eigenvector matrix is (near) singular, cond={cond:.3e}")
        Cinv = np.linalg.inv(C)
    if np.any(d <= 0):
        raise NotPositive(f"eigenvalues must be positive, got {d}")
    out = Diagonalization(C=C, Cinv=Cinv, d=d, cond=float(np.linalg.cond(C)))
    res = out.residual(D)
    if res > 1e-10:
        raise NotDiagonalizable(f"reconstruction residual {res:.3e} too large")
    return out


def transform_system(spec: SystemSpec, diag: Diagonalization) -> SystemSpec:
    """System in the variables ``v = C^-1 u``: ``(Dbar, C^-1 f(x,Cv) C, C^-1 g(x,Cv))``."""
    m = spec.m
    C, Cinv = diag.C, diag.Cinv
    mapping = {a + 1: el.linear_combination(C[a], [el.Var(k + 1) for k in range(m)])
               for a in range(m)}
    fs = [[el.substitute(e, mapping) for e in row] for row in spec.f]
    gs = [el.substitute(e, mapping) for e in spec.g]
    # f_bar[i][k] = sum_{a,b} Cinv[i,a] fs[a][b] C[b,k]
    fbar = []
    for i in range(m):
        row = []
        for k in range(m):
            coeffs, terms = [], []
            for a in range(m):
                for b in range(m):
                    coeffs.append(Cinv[i, a] * C[b, k])
                    terms.append(fs[a][b])
            row.append(el.linear_combination(coeffs, terms))
        fbar.append(row)
    gbar = [el.linear_combination(Cinv[i], gs) for i in range(m)]
    name = f"{spec.name}:diag" if spec.name else "diag"
    return SystemSpec(m=m, D=diag.Dbar, f=fbar, g=gbar, alpha=spec.alpha,
                      cutoff=spec.cutoff, name=name)


# ---------------------------------------------------------------------------
# Hull sampling and the consistency condition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HullSample:
    """Pairs of grid functions plus convex weights; ``w = tau*u + (1-tau)*v``.

    ``u`` and ``v`` have shape (n_pairs, m, n_x) and hold values on ``x``.
    """

    x: np.ndarray
    u: np.ndarray
    v: np.ndarray
    taus: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.25, 0.5, 0.75, 1.0]))

    @property
    def n_pairs(self) -> int:
        return self.u.shape[0]

    @property
    def n_points(self) -> int:
        return self.u.shape[0] * len(self.x) * len(self.taus)

    def states(self):
        """Yield ``(pair_index, tau_index, w)`` with ``w`` of shape (m, n_x)."""
        for p in range(self.n_pairs):
            for k, tau in enumerate(self.taus):
                yield p, k, tau * self.u[p] + (1.0 - tau) * self.v[p]


@dataclass(frozen=True)
class ConsistencyReport:
    verdict: str
    max_commutator: float
    tol: float
    witness: Optional[dict]
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "max_commutator": self.max_commutator,
            "tol": self.tol,
            "witness": self.witness,
            "n_samples": self.n_samples,
        }


def _commutator_field(spec: SystemSpec, hull: HullSample):
    """Frobenius norms of D f - f D, shape (n_x, n_pairs, n_tau), and max |f|_F."""
    D = spec.D
    nx = len(hull.x)
    norms = np.zeros((nx, hull.n_pairs, len(hull.taus)))
    fmax = 0.0
    for p, k, w in hull.states():
        F = spec.eval_f(hull.x, w)  # (m, m, nx)
        F = np.moveaxis(F, -1, 0)  # (nx, m, m)
        comm = D @ F - F @ D
        norms[:, p, k] = np.sqrt(np.sum(comm * comm, axis=(1, 2)))
        fmax = max(fmax, float(np.max(np.sqrt(np.sum(F * F, axis=(1, 2))))))
    return norms, fmax


def default_commute_tol(D, fmax: float) -> float:
    return max(1e-8 * (1.0 + np.linalg.norm(D) * fmax), 1e-12)


def check_consistency(spec: SystemSpec, hull: HullSample, tol: Optional[float] = None
                      ) -> ConsistencyReport:
    """Largest ``|D f(x,w) - f(x,w) D|_F`` over the sampled hull.

    The argmax is the first maximiser in (x index, pair index, tau index)
    order, so the witness is deterministic.
    """
    if hull.n_pairs == 0:
        raise ValueError("hull sample is empty")
    norms, fmax = _commutator_field(spec, hull)
    if tol is None:
        tol = default_commute_tol(spec.D, fmax)
    flat = int(np.argmax(norms))
    ix, p, k = np.unravel_index(flat, norms.shape)
    worst = float(norms[ix, p, k])
    verdict = "PASS" if worst <= tol else "FAIL"
    witness = {"x": float(hull.x[ix]), "pair": int(p), "tau": float(hull.taus[k]),
               "commutator": worst}
    return ConsistencyReport(verdict=verdict, max_commutator=worst, tol=float(tol),
                             witness=witness,
                             n_samples=int(norms.size))


# ---------------------------------------------------------------------------
# Block structure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockStructure:
    groups: tuple  # tuple of tuples of 0-based indices
    values: tuple  # diffusion coefficient per group

    @property
    def labels(self) -> np.ndarray:
        lab = np.empty(sum(len(g) for g in self.groups), dtype=int)
        for k, grp in enumerate(self.groups):
            lab[list(grp)] = k
        return lab

    def off_block_mask(self) -> np.ndarray:
        lab = self.labels
        return lab[:, None] != lab[None, :]

    def respects_blocks(self, spec: SystemSpec, hull: HullSample, tol: Optional[float] = None
                        ) -> bool:
        """True iff every sampled f(x, w) is block diagonal within ``tol``."""
        mask = self.off_block_mask()
        worst, fmax = 0.0, 0.0
        for _, _, w in hull.states():
            F = spec.eval_f(hull.x, w)
            fmax = max(fmax, float(np.max(np.sqrt(np.sum(F * F, axis=(0, 1))))))
            off = F[mask]
            if off.size:
                worst = max(worst, float(np.max(np.sqrt(np.sum(off * off, axis=0)))))
        if tol is None:
            tol = default_commute_tol(spec.D, fmax)
        return worst <= tol


def block_structure(D, rtol: float = 1e-12) -> BlockStructure:
    """Group indices of a positive diagonal ``D`` by equal diagonal entries."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    if np.count_nonzero(D - np.diag(np.diag(D))):
        raise ValueError("block_structure expects a diagonal matrix")
    d = np.diag(D)
    if np.any(d <= 0):
        raise NotPositive("diagonal entries must be positive")
    groups: list[list[int]] = []
    values: list[float] = []
    for i, di in enumerate(d):
        for grp, val in zip(groups, values):
            if abs(di - val) <= rtol * max(abs(di), abs(val)):
                grp.append(i)
                break
        else:
            groups.append([i])
            values.append(float(di))
    return BlockStructure(groups=tuple(tuple(g) for g in groups), values=tuple(values))


# ---------------------------------------------------------------------------
# Example families
# ---------------------------------------------------------------------------

EXAMPLE_KINDS = ("scalar_diffusion", "commuting_family", "block_family", "violating_family")

# Reaction rates r_i exceed the first Dirichlet eigenvalue pi^2 d_i, so the
# origin is unstable; the maximum principle bounds u_i^2 by r_i, which keeps
# the attractor inside the plateau of the default cutoff bump(50, |u|^2).
_DEFAULT_RATES = (14.0, 26.0, 38.0, 50.0)


def _cubic(m: int, rates=None) -> list[str]:
    rates = rates if rates is not None else _DEFAULT_RATES
    return [f"{rates[i % len(rates)]!r}*u{i + 1} - u{i + 1}^3" for i in range(m)]


def example_family(kind: str, **params) -> SystemSpec:
    """Built-in specifications used by tests, demos and the ``example`` command.

    ``scalar_diffusion``: ``D = d I``, convection ``f = 0`` (or ``f`` given), cubic reaction.
    ``commuting_family``: ``f = D1 * phi(x, u)`` with diagonal ``D`` and ``D1``.
    ``block_family``: ``D = diag{1, 1, 2}`` with ``f`` block diagonal.
    ``violating_family``: ``D = diag{1, 2}`` and ``f_12 != 0``.
    """
    alpha = params.get("alpha", 0.8)
    cutoff = params.get("cutoff", 50.0)
    if kind == "scalar_diffusion":
        m = params.get("m", 2)
        d = params.get("d", 1.0)
        f = params.get("f", [["0"] * m for _ in range(m)])
        g = params.get("g", _cubic(m, params.get("rates", (14.0,))))
        return SystemSpec.build(d * np.eye(m), f, g, alpha=alpha, cutoff=cutoff,
                                name="scalar_diffusion")
    if kind == "commuting_family":
        D = np.asarray(params.get("D", np.diag([1.0, 2.0])), dtype=float)
        D1 = np.asarray(params.get("D1", np.diag([2.0, 5.0])), dtype=float)
        if np.linalg.norm(D @ D1 - D1 @ D) > 1e-12 * (1 + np.linalg.norm(D) * np.linalg.norm(D1)):
            raise SpecError("D1 must commute with D")
        m = D.shape[0]
        total = " + ".join(f"u{k + 1}" for k in range(m))
        phi = el.parse(params.get("phi", f"sin(pi*x)*sin({total})"), m)
        f = [[el.mul(el.const(D1[i, j]), phi) for j in range(m)] for i in range(m)]
        g = params.get("g", _cubic(m))
        return SystemSpec.build(D, f, g, alpha=alpha, cutoff=cutoff, name="commuting_family")
    if kind == "block_family":
        D = np.diag(params.get("d", [1.0, 1.0, 2.0]))
        f = params.get("f", [["u1", "0.5*u2", "0"], ["sin(pi*x)*u1", "u2", "0"], ["0", "0", "u3"]])
        g = params.get("g", _cubic(3, (14.0, 14.0, 26.0)))
        return SystemSpec.build(D, f, g, alpha=alpha, cutoff=cutoff, name="block_family")
    if kind == "violating_family":
        D = np.asarray(params.get("D", np.diag([1.0, 2.0])), dtype=float)
        f12 = params.get("f12", "sin(pi*x)")
        f = [["0", f12], ["0", "0"]]
        g = params.get("g", _cubic(2))
        return SystemSpec.build(D, f, g, alpha=alpha, cutoff=cutoff, name="violating_family",
                                strict=params.get("strict", True))
    raise ValueError(f"unknown example kind {kind!r}; expected one of {EXAMPLE_KINDS}")
