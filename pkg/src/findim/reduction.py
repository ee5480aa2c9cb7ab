"""Pairwise decomposition of the vector field on attractor pairs.

For states ``u, v`` with ``h = u - v`` and ``w = tau*u + (1 - tau)*v``::

    B(x)  = int_0^1 f(x, w) dtau
    B0(x) = int_0^1 [f_u(x, w) w_x + g_u(x, w)] dtau
    G(u) - G(v) = D h_xx + B0 h + B h_x

The matrix ``U`` solves ``U_x = -1/2 D^-1 B U``, ``U(0) = I``; it removes the
``h_x`` term and leaves the zeroth-order coefficient
``Q = B0 - B_x / 2 - B D^-1 B / 4``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .pde import synthesize
from .spectrum import enumerate_spectrum
from .system import SystemSpec

__all__ = [
    "DegeneratePair",
    "IllConditioned",
    "MatrixFieldSample",
    "PairContext",
    "make_context",
    "compute_B",
    "compute_B0",
    "solve_U",
    "liouville_error",
    "inverse_defect",
    "check_commutation",
    "grid_derivative",
    "assemble_Q",
    "decomposition_residual",
    "discretized_T",
    "similarity_spectrum_check",
    "subsample",
    "run_pair",
    "write_field_csv",
]

DEFAULT_GRID = 512
DEFAULT_NTAU = 16
COND_MAX = 1e8


class DegeneratePair(ValueError):
    """``|u - v|`` is too small for a normalised residual."""


class IllConditioned(ArithmeticError):
    """``|U| |U^-1|`` exceeds the usable range."""


@dataclass(frozen=True)
class MatrixFieldSample:
    x: np.ndarray
    values: np.ndarray  # (G+1, m, m)
    tag: str

    @property
    def G(self) -> int:
        return len(self.x) - 1

    @property
    def m(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PairContext:
    spec: SystemSpec
    u: np.ndarray  # Galerkin coefficients (m, N)
    v: np.ndarray
    x: np.ndarray
    uu: np.ndarray  # grid values (m, G+1)
    vv: np.ndarray
    ux: np.ndarray
    vx: np.ndarray

    @property
    def h(self) -> np.ndarray:
        return self.uu - self.vv

    @property
    def hx(self) -> np.ndarray:
        return self.ux - self.vx


def make_context(spec: SystemSpec, u, v, G: int = DEFAULT_GRID) -> PairContext:
    u = np.atleast_2d(np.asarray(u, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if u.shape != v.shape or u.shape[0] != spec.m:
        raise ValueError("u and v must both have shape (m, n_modes)")
    x = np.linspace(0.0, 1.0, G + 1)
    return PairContext(spec, u, v, x, synthesize(u, x), synthesize(v, x),
                       synthesize(u, x, 1), synthesize(v, x, 1))


def _gauss(n_tau: int):
    nodes, weights = np.polynomial.legendre.leggauss(n_tau)
    return (nodes + 1) / 2, weights / 2


def _hull_points(ctx: PairContext, n_tau: int):
    tau, wts = _gauss(n_tau)
    t = tau[None, :, None]
    w = t * ctx.uu[:, None, :] + (1 - t) * ctx.vv[:, None, :]  # (m, n_tau, G+1)
    wx = t * ctx.ux[:, None, :] + (1 - t) * ctx.vx[:, None, :]
    return w, wx, wts


def compute_B(ctx: PairContext, n_tau: int = DEFAULT_NTAU) -> MatrixFieldSample:
    """Gauss-Legendre quadrature in tau of ``f(x, w(x))``."""
    if n_tau < 2:
        raise ValueError("n_tau must be >= 2")
    w, _, wts = _hull_points(ctx, n_tau)
    F = ctx.spec.eval_f(ctx.x, w)  # (m, m, n_tau, G+1)
    B = np.einsum("ijtx,t->xij", F, wts)
    return MatrixFieldSample(ctx.x, B, "B")


def compute_B0(ctx: PairContext, n_tau: int = DEFAULT_NTAU) -> MatrixFieldSample:
    """Quadrature of ``[f_u(x,w) w_x + g_u(x,w)]_{il} = sum_p df_ip/du_l (w_x)_p + dg_i/du_l``."""
    if n_tau < 2:
        raise ValueError("n_tau must be >= 2")
    spec = ctx.spec
    w, wx, wts = _hull_points(ctx, n_tau)
    integrand = spec.eval_dg(ctx.x, w)  # (m, m, n_tau, G+1)
    if not spec.f_is_zero:
        integrand = integrand + np.einsum("ipltx,ptx->iltx", spec.eval_df(ctx.x, w), wx)
    B0 = np.einsum("iltx,t->xil", integrand, wts)
    return MatrixFieldSample(ctx.x, B0, "B0")


# ---------------------------------------------------------------------------
# Cauchy problem for U
# ---------------------------------------------------------------------------


def _midpoints(values: np.ndarray) -> np.ndarray:
    """Cubic (4-point Lagrange) interpolation to interval midpoints."""
    n = len(values)
    if n < 4:
        return (values[:-1] + values[1:]) / 2
    mid = np.empty((n - 1,) + values.shape[1:])
    mid[1:-1] = (-values[:-3] + 9 * values[1:-2] + 9 * values[2:-1] - values[3:]) / 16
    mid[0] = 0.3125 * values[0] + 0.9375 * values[1] - 0.3125 * values[2] + 0.0625 * values[3]
    mid[-1] = (0.3125 * values[-1] + 0.9375 * values[-2] - 0.3125 * values[-3]
               + 0.0625 * values[-4])
    return mid


def _generator(B: MatrixFieldSample, D) -> tuple:
    Dinv = np.linalg.inv(np.asarray(D, dtype=float))
    K = -0.5 * np.einsum("ij,xjk->xik", Dinv, B.values)
    return K, _midpoints(K)


def solve_U(B: MatrixFieldSample, D, cond_max: float = COND_MAX):
    """Classical RK4 across the grid for ``U`` and, separately, for ``U^-1``.

    ``U_x = K U`` and ``(U^-1)_x = -U^-1 K`` with ``K = -1/2 D^-1 B``; ``B`` at
    half-steps comes from cubic interpolation.
    """
    K, Km = _generator(B, D)
    x = B.x
    m = B.m
    U = np.empty_like(K)
    V = np.empty_like(K)
    U[0] = V[0] = np.eye(m)
    for i in range(len(x) - 1):
        h = x[i + 1] - x[i]
        K0, K1, K2 = K[i], Km[i], K[i + 1]
        u = U[i]
        k1 = K0 @ u
        k2 = K1 @ (u + h / 2 * k1)
        k3 = K1 @ (u + h / 2 * k2)
        k4 = K2 @ (u + h * k3)
        U[i + 1] = u + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        v = V[i]
        l1 = -v @ K0
        l2 = -(v + h / 2 * l1) @ K1
        l3 = -(v + h / 2 * l2) @ K1
        l4 = -(v + h * l3) @ K2
        V[i + 1] = v + h / 6 * (l1 + 2 * l2 + 2 * l3 + l4)
    cond = np.linalg.norm(U, 2, axis=(1, 2)) * np.linalg.norm(V, 2, axis=(1, 2))
    if not np.all(np.isfinite(cond)) or np.max(cond) > cond_max:
        raise IllConditioned(f"|U| |U^-1| reaches {np.max(cond):.3e}")
    return MatrixFieldSample(x, U, "U"), MatrixFieldSample(x, V, "Uinv")


def liouville_error(U: MatrixFieldSample, B: MatrixFieldSample, D) -> float:
    """max relative gap between ``det U(x)`` and ``exp(int_0^x tr K)``."""
    K, Km = _generator(B, D)
    tr = np.trace(K, axis1=1, axis2=2)
    trm = np.trace(Km, axis1=1, axis2=2)
    h = np.diff(B.x)
    integral = np.concatenate([[0.0], np.cumsum(h / 6 * (tr[:-1] + 4 * trm + tr[1:]))])
    expected = np.exp(integral)
    det = np.linalg.det(U.values)
    return float(np.max(np.abs(det - expected) / np.abs(expected)))


def inverse_defect(U: MatrixFieldSample, Uinv: MatrixFieldSample) -> float:
    """max over the grid of ``|U Uinv - I|_F``."""
    P = U.values @ Uinv.values - np.eye(U.m)
    return float(np.max(np.sqrt(np.sum(P * P, axis=(1, 2)))))


@dataclass(frozen=True)
class CommutationReport:
    max_comm: float
    argmax_x: float


def check_commutation(U: MatrixFieldSample, D) -> CommutationReport:
    """max over the grid of ``|D U(x) - U(x) D|_F``."""
    D = np.asarray(D, dtype=float)
    comm = np.einsum("ij,xjk->xik", D, U.values) - np.einsum("xij,jk->xik", U.values, D)
    nrm = np.sqrt(np.sum(comm * comm, axis=(1, 2)))
    k = int(np.argmax(nrm))
    return CommutationReport(float(nrm[k]), float(U.x[k]))


# ---------------------------------------------------------------------------
# Q and the residual identity
# ---------------------------------------------------------------------------


def grid_derivative(values: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order finite differences along axis 0 (one-sided near the ends)."""
    f = values
    n = len(f)
    if n < 5:
        raise ValueError("need at least 5 grid points")
    d = np.empty_like(f)
    d[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
    d[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)
    d[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * h)
    d[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * h)
    d[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * h)
    return d


@dataclass(frozen=True)
class QReport:
    Q: MatrixFieldSample
    Bx: MatrixFieldSample
    sup_norm: float
    sup_second_difference: float


def assemble_Q(B0: MatrixFieldSample, B: MatrixFieldSample, D) -> QReport:
    """``Q = B0 - B_x / 2 - B D^-1 B / 4`` plus its boundedness surrogates."""
    Dinv = np.linalg.inv(np.asarray(D, dtype=float))
    h = B.x[1] - B.x[0]
    Bx = grid_derivative(B.values, h)
    Q = B0.values - 0.5 * Bx - 0.25 * B.values @ Dinv @ B.values
    nrm = np.sqrt(np.sum(Q * Q, axis=(1, 2)))
    d2 = (Q[2:] - 2 * Q[1:-1] + Q[:-2]) / h ** 2
    d2n = np.sqrt(np.sum(d2 * d2, axis=(1, 2)))
    return QReport(MatrixFieldSample(B.x, Q, "Q"), MatrixFieldSample(B.x, Bx, "Bx"),
                   float(np.max(nrm)), float(np.max(d2n)))


def _l2(values, x) -> float:
    return float(np.sqrt(np.trapezoid(np.sum(values * values, axis=0), x)))


def _nonlinearity(spec: SystemSpec, uu, ux, x):
    out = spec.eval_g(x, uu)
    if not spec.f_is_zero:
        out = out + np.einsum("ipx,px->ix", spec.eval_f(x, uu), ux)
    return out


def decomposition_residual(ctx: PairContext, B0: MatrixFieldSample, B: MatrixFieldSample
                           ) -> float:
    """``|[G(u) - G(v)] - [D h_xx + B0 h + B h_x]|_L2 / |h|_L2`` on the context grid.

    The ``D h_xx`` terms are identical on both sides and are cancelled
    exactly, so the comparison is between ``F(u) - F(v)`` and
    ``B0 h + B h_x``.
    """
    h = ctx.h
    hn = _l2(h, ctx.x)
    if hn < 1e-12:
        raise DegeneratePair(f"|h| = {hn:.3e}")
    spec = ctx.spec
    lhs = _nonlinearity(spec, ctx.uu, ctx.ux, ctx.x) - _nonlinearity(spec, ctx.vv, ctx.vx, ctx.x)
    rhs = np.einsum("xil,lx->ix", B0.values, h) + np.einsum("xil,lx->ix", B.values, ctx.hx)
    return _l2(lhs - rhs, ctx.x) / hn


# ---------------------------------------------------------------------------
# Similarity of T = -D U d_xx U^-1 to A
# ---------------------------------------------------------------------------


def subsample(F: MatrixFieldSample, G: int) -> MatrixFieldSample:
    """Restrict a field to the coarser uniform grid with ``G`` intervals."""
    if F.G % G:
        raise ValueError(f"grid {F.G} is not a multiple of {G}")
    s = F.G // G
    return MatrixFieldSample(F.x[::s], F.values[::s], F.tag)


def discretized_T(D, U: MatrixFieldSample, Uinv: MatrixFieldSample) -> np.ndarray:
    """Matrix of ``h -> -D U Delta_h (U^-1 h)`` on the interior grid points.

    Unknowns are ordered component-major: index ``j*(G-1) + k``.
    """
    D = np.asarray(D, dtype=float)
    G = U.G
    n = G - 1
    m = U.m
    hx = 1.0 / G
    lap = (np.diag(np.full(n - 1, 1.0), -1) - 2 * np.eye(n) + np.diag(np.full(n - 1, 1.0), 1))
    lap /= hx ** 2
    Ui = U.values[1:-1]  # (n, m, m)
    Vi = Uinv.values[1:-1]

    def block(fieldv):
        M = np.zeros((m * n, m * n))
        idx = np.arange(n)
        for a in range(m):
            for b in range(m):
                M[a * n + idx, b * n + idx] = fieldv[:, a, b]
        return M

    Umat, Vmat = block(Ui), block(Vi)
    L = np.kron(np.eye(m), lap)
    Dmat = np.kron(D, np.eye(n))
    return -Dmat @ Umat @ L @ Vmat


@dataclass(frozen=True)
class SimilarityReport:
    eig_deviation: float
    max_imag_rel: float
    n_compare: int
    G: int
    eigenvalues: np.ndarray
    exact: np.ndarray
    warn: Optional[str] = None


def similarity_spectrum_check(spec: SystemSpec, U: MatrixFieldSample, Uinv: MatrixFieldSample,
                              n_compare: Optional[int] = None, hypothesis_holds: bool = True
                              ) -> SimilarityReport:
    """Eigenvalues of the discretised ``T`` against the exact spectrum of ``A``.

    Compares the lowest ``n_compare`` eigenvalues (default: lowest quarter)
    by maximum relative deviation.
    """
    if U.G > 512:
        raise ValueError("grid too large for a dense eigensolve (G <= 512)")
    T = discretized_T(spec.D, U, Uinv)
    ev = np.linalg.eigvals(T)
    ev = ev[np.argsort(ev.real, kind="stable")]
    size = len(ev)
    k = n_compare or max(1, size // 4)
    d = np.sort(np.linalg.eigvals(spec.D).real)
    exact = enumerate_spectrum(d, k).lam
    low = ev[:k]
    dev = float(np.max(np.abs(low.real - exact) / exact))
    imag = float(np.max(np.abs(low.imag) / np.abs(low.real)))
    warn = None if hypothesis_holds else "consistency condition fails; similarity to A not expected"
    return SimilarityReport(dev, imag, k, U.G, low, exact, warn)


# ---------------------------------------------------------------------------
# Per-pair pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairRecord:
    pair_id: int
    residual: float
    max_comm: float
    det_U_error: float
    inverse_defect: float
    Q_sup: float
    Q_second_difference: float
    eig_deviation: Optional[float] = None
    eig_imag: Optional[float] = None
    refinement_ratio: Optional[float] = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def run_pair(spec: SystemSpec, u, v, pair_id: int = 0, G: int = DEFAULT_GRID,
             n_tau: int = DEFAULT_NTAU, similarity_grid: Optional[int] = None,
             hypothesis_holds: bool = True) -> PairRecord:
    """B -> B0 -> U -> Q -> residual (and optionally the similarity check) for one pair."""
    ctx = make_context(spec, u, v, G)
    B = compute_B(ctx, n_tau)
    B0 = compute_B0(ctx, n_tau)
    U, Uinv = solve_U(B, spec.D)
    q = assemble_Q(B0, B, spec.D)
    rec = dict(
        pair_id=pair_id,
        residual=decomposition_residual(ctx, B0, B),
        max_comm=check_commutation(U, spec.D).max_comm,
        det_U_error=liouville_error(U, B, spec.D),
        inverse_defect=inverse_defect(U, Uinv),
        Q_sup=q.sup_norm,
        Q_second_difference=q.sup_second_difference,
    )
    if similarity_grid:
        sim = similarity_spectrum_check(spec, subsample(U, similarity_grid),
                                        subsample(Uinv, similarity_grid),
                                        hypothesis_holds=hypothesis_holds)
        rec.update(eig_deviation=sim.eig_deviation, eig_imag=sim.max_imag_rel)
    return PairRecord(**rec)


def write_field_csv(F: MatrixFieldSample, path) -> None:
    """Columns ``x, i, j, value`` (1-based i, j)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "i", "j", "value"])
        for k, xk in enumerate(F.x):
            for i in range(F.m):
                for j in range(F.m):
                    w.writerow([repr(float(xk)), i + 1, j + 1, repr(float(F.values[k, i, j]))])
