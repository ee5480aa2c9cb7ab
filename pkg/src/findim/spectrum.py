"""Spectrum of ``A = -D d^2/dx^2`` on [0, 1] with Dirichlet conditions, and gap windows.

For ``D = diag(d_1, ..., d_m)`` the eigenvalues are exactly
``d_j * pi^2 * nu^2`` (``nu = 1, 2, ...``), so nothing here is discretised.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "PI2",
    "SpectrumTable",
    "GapSequence",
    "BoundsReport",
    "GapGrowthReport",
    "SparsityReport",
    "default_eps",
    "counting_bounds",
    "loglog_slope",
    "GapWindow",
    "EmptySelection",
    "enumerate_spectrum",
    "brute_force_spectrum",
    "verify_counting_bounds",
    "gap_growth_proxy",
    "construct_gap_sequence",
    "test_sparsity_condition",
    "write_spectrum_csv",
    "write_gaps_csv",
]

PI2 = math.pi ** 2


class EmptySelection(ValueError):
    """No index satisfies the gap threshold in the computed range."""


@dataclass(frozen=True)
class SpectrumTable:
    """The ``N`` smallest eigenvalues, ascending, with (j, nu) tags (1-based)."""

    lam: np.ndarray
    j: np.ndarray
    nu: np.ndarray
    d: tuple

    @property
    def N(self) -> int:
        return len(self.lam)

    @property
    def m(self) -> int:
        return len(self.d)

    @property
    def d_minus(self) -> float:
        return min(self.d)

    @property
    def d_plus(self) -> float:
        return max(self.d)

    def replace_lam(self, lam) -> "SpectrumTable":
        return SpectrumTable(np.asarray(lam, dtype=float), self.j, self.nu, self.d)


@dataclass(frozen=True)
class GapWindow:
    """Eigenvalue-free interval ``(a - xi, a + xi)`` built after index ``n``."""

    k: int
    n: int
    a: float
    xi: float
    ratio: float


def _eig(dj: float, nu: int) -> float:
    return dj * PI2 * nu * nu


def enumerate_spectrum(d: Sequence[float], N: int) -> SpectrumTable:
    """The ``N`` smallest ``d_j pi^2 nu^2`` with multiplicity (k-way heap merge).

    Ties are ordered by component index.
    """
    d = tuple(float(x) for x in d)
    if N < 1:
        raise ValueError("N must be >= 1")
    if not d or any(x <= 0 for x in d):
        raise ValueError("all diffusion coefficients must be positive")
    heap = [(_eig(dj, 1), j, 1) for j, dj in enumerate(d)]
    heapq.heapify(heap)
    lam = np.empty(N)
    js = np.empty(N, dtype=int)
    nus = np.empty(N, dtype=int)
    for n in range(N):
        val, j, nu = heapq.heappop(heap)
        lam[n], js[n], nus[n] = val, j + 1, nu
        heapq.heappush(heap, (_eig(d[j], nu + 1), j, nu + 1))
    return SpectrumTable(lam, js, nus, d)


def brute_force_spectrum(d: Sequence[float], N: int) -> np.ndarray:
    """Independent oracle: all ``d_j pi^2 nu^2`` below a safe cutoff, sorted, first N."""
    d = [float(x) for x in d]
    # the N-th eigenvalue never exceeds pi^2 d_+ N^2 (each component alone gives N values)
    cap = PI2 * max(d) * N * N
    vals = []
    for dj in d:
        nu_max = int(math.isqrt(int(cap / (PI2 * dj)) + 1)) + 1
        nu = np.arange(1, nu_max + 1, dtype=float)
        vals.append(dj * PI2 * nu * nu)
    allv = np.sort(np.concatenate(vals), kind="stable")
    return allv[:N]


@dataclass(frozen=True)
class BoundsReport:
    max_violation: float
    index: Optional[int]
    n_checked: int


def counting_bounds(table: SpectrumTable):
    n = np.arange(1, table.N + 1, dtype=float)
    lower = PI2 * table.d_minus / table.m ** 2 * n * n
    upper = PI2 * table.d_plus * n * n
    return lower, upper


def verify_counting_bounds(table: SpectrumTable, rtol: float = 1e-12) -> BoundsReport:
    """Check ``(pi^2 d_- / m^2) n^2 <= lambda_n <= pi^2 d_+ n^2`` for every n.

    Excursions below ``rtol * lambda_n`` are rounding and count as zero.
    """
    if table.N == 0:
        raise ValueError("empty table")
    lower, upper = counting_bounds(table)
    lam = table.lam
    excess = np.maximum(lower - lam, lam - upper)
    excess = np.where(excess > rtol * np.abs(lam), excess, 0.0)
    k = int(np.argmax(excess))
    worst = float(excess[k])
    return BoundsReport(max_violation=worst, index=k + 1 if worst > 0 else None,
                        n_checked=table.N)


@dataclass(frozen=True)
class GapGrowthReport:
    verdict: str
    sup_seen: float
    top_decade_max: float
    threshold: float
    trend: np.ndarray  # running max of n^-1 (lambda_{n+1} - lambda_n), n = 1..N-1


def gap_growth_proxy(table: SpectrumTable) -> GapGrowthReport:
    """Finite-range witness that ``limsup n^-1 (lambda_{n+1} - lambda_n) > 0``.

    PASS when some ``n`` in the top decade of the table has normalised gap at
    least ``pi^2 d_- / (2 m^2)``.
    """
    if table.N < 10:
        raise ValueError("need N >= 10")
    n = np.arange(1, table.N, dtype=float)
    scaled = np.diff(table.lam) / n
    trend = np.maximum.accumulate(scaled)
    threshold = PI2 * table.d_minus / (2 * table.m ** 2)
    top = scaled[int(0.9 * (table.N - 1)):]
    top_max = float(np.max(top))
    return GapGrowthReport(
        verdict="PASS" if top_max >= threshold else "FAIL",
        sup_seen=float(trend[-1]),
        top_decade_max=top_max,
        threshold=threshold,
        trend=trend,
    )


def default_eps(table: SpectrumTable) -> float:
    return PI2 * table.d_minus / table.m ** 2


@dataclass(frozen=True)
class GapSequence:
    windows: list
    eps: float
    M: float
    bound_ok: bool
    windows_empty_ok: bool

    @property
    def indices(self) -> list:
        return [w.n for w in self.windows]


def construct_gap_sequence(table: SpectrumTable, alpha: float, eps: Optional[float] = None
                           ) -> GapSequence:
    """Windows centred between ``lambda_n`` and ``lambda_{n+1}`` wherever the gap exceeds ``eps*n``.

    ``a = (lambda_{n+1} + lambda_n) / 2`` and ``xi = (lambda_{n+1} - lambda_n) / 3``.
    Also checks ``a <= 27 M xi^2 / eps^2`` with ``M = pi^2 d_+`` and that no
    table eigenvalue lies inside any window.
    """
    if not 0.75 < alpha < 1.0:
        raise ValueError("alpha must lie in (3/4, 1)")
    if eps is None:
        eps = default_eps(table)
    if not eps > 0:
        raise ValueError("eps must be positive")
    lam = table.lam
    n = np.arange(1, table.N, dtype=float)
    gaps = np.diff(lam)
    sel = np.nonzero(gaps > eps * n)[0]
    if sel.size == 0:
        raise EmptySelection(f"no gap exceeds eps*n with eps={eps:.6g} for N={table.N}")
    a = (lam[sel + 1] + lam[sel]) / 2
    xi = gaps[sel] / 3
    ratio = a ** (alpha / 2) / xi
    M = PI2 * table.d_plus
    bound_ok = bool(np.all(a <= 27 * M / eps ** 2 * xi ** 2))
    # window scan: count table eigenvalues strictly inside (a - xi, a + xi)
    lo = np.searchsorted(lam, a - xi, side="right")
    hi = np.searchsorted(lam, a + xi, side="left")
    empty_ok = bool(np.all(hi == lo))
    windows = [GapWindow(k=k + 1, n=int(s) + 1, a=float(a[k]), xi=float(xi[k]),
                         ratio=float(ratio[k]))
               for k, s in enumerate(sel)]
    return GapSequence(windows=windows, eps=float(eps), M=M, bound_ok=bound_ok,
                       windows_empty_ok=empty_ok)


@dataclass(frozen=True)
class SparsityReport:
    verdict: str
    ratios: np.ndarray
    slope: float
    xi_last: float
    xi_first_decade_max: float
    n_windows: int
    surrogate: str = (
        "finite-range surrogate: xi grows past the first-decade max and "
        "log(a^(alpha/2)/xi) vs log(a) has tail-half slope <= -0.01"
    )


def loglog_slope(a, ratio) -> float:
    """Least-squares slope of ``log(ratio)`` against ``log(a)``."""
    slope, _ = np.polyfit(np.log(a), np.log(ratio), 1)
    return float(slope)


def test_sparsity_condition(windows: Sequence[GapWindow], alpha: float,
                            slope_max: float = -0.01) -> SparsityReport:
    """Check ``xi_k -> infinity`` and ``a_k^(alpha/2) = o(xi_k)`` as a finite-range trend."""
    if len(windows) < 10:
        raise ValueError("need at least 10 windows")
    a = np.array([w.a for w in windows])
    xi = np.array([w.xi for w in windows])
    ratio = a ** (alpha / 2) / xi
    tail = slice(len(windows) // 2, None)
    slope = loglog_slope(a[tail], ratio[tail])
    first = xi[: max(1, len(windows) // 10)]
    grows = xi[-1] > np.max(first)
    ok = grows and slope <= slope_max
    return SparsityReport(verdict="PASS" if ok else "FAIL", ratios=ratio, slope=slope,
                          xi_last=float(xi[-1]), xi_first_decade_max=float(np.max(first)),
                          n_windows=len(windows))


# pytest must not collect the function above as a test
test_sparsity_condition.__test__ = False


def write_spectrum_csv(table: SpectrumTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "lambda", "j", "nu"])
        for n in range(table.N):
            w.writerow([n + 1, repr(float(table.lam[n])), int(table.j[n]), int(table.nu[n])])


def write_gaps_csv(windows: Sequence[GapWindow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "n_k", "a_k", "xi_k", "ratio"])
        for win in windows:
            w.writerow([win.k, win.n, repr(win.a), repr(win.xi), repr(win.ratio)])
