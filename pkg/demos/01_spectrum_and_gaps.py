"""Eigenvalues of A = -D d^2/dx^2 with Dirichlet conditions, and the gap windows.

For D = diag(d_1..d_m) the spectrum is the merged list d_j pi^2 nu^2.  The gap
construction picks midpoints a_k between consecutive distinct eigenvalues and
half-widths xi_k; the sparsity surrogate asks that a_k^(alpha/2) / xi_k decays.

Run:  python demos/01_spectrum_and_gaps.py
"""
import numpy as np

from findim.spectrum import (construct_gap_sequence, enumerate_spectrum, gap_growth_proxy,
                             test_sparsity_condition, verify_counting_bounds)

for d in ([1.0], [1.0, 4.0], [1.0, 2.0]):
    table = enumerate_spectrum(d, 5000)
    bounds = verify_counting_bounds(table)
    growth = gap_growth_proxy(table)
    gaps = construct_gap_sequence(table, alpha=0.8)
    sparsity = test_sparsity_condition(gaps.windows, 0.8)
    print(f"d={d}")
    print(f"  first eigenvalues / pi^2: {np.round(table.lam[:6] / np.pi ** 2, 3)}")
    print(f"  counting-bound violations: {bounds.max_violation}")
    print(f"  gap growth proxy: {growth.verdict}")
    print(f"  {len(gaps.windows)} gap windows (eps={gaps.eps:.3g}); sparsity slope "
          f"{sparsity.slope:.3f} -> {sparsity.verdict}")
