"""Optional numba-accelerated inner loops.

Everything here has a pure-numpy equivalent in :mod:`qsstime.dynamics`;
these kernels only change speed, never results of the public API contract
(sheet forces computed here are algebraically identical to the direct
pairwise sum). If numba is unavailable the package falls back silently.
"""

from __future__ import annotations

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    numba = None
    HAVE_NUMBA = False


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def resort_order(x, order):
        """Restore sortedness of ``order`` by position; O(n + inversions)."""
        n = order.shape[0]
        swaps = 0
        for i in range(1, n):
            j = order[i]
            xi = x[j]
            k = i - 1
            while k >= 0 and x[order[k]] > xi:
                order[k + 1] = order[k]
                k -= 1
                swaps += 1
            order[k + 1] = j
        return swaps

    @numba.njit(cache=True)
    def sheet_leapfrog_chunk(x, p, order, coupling, inv_mass, dt, n_steps):
        """Advance a 1D sheet ensemble by ``n_steps`` kick-drift-kick steps.

        ``order`` must hold indices sorted by position on entry; it is kept
        sorted incrementally. The rank-based force c*(n-1-2k) equals the
        direct signed pair sum exactly (ties cannot persist between steps and
        contribute zero net force either way at the resolution of the walk).
        Returns the number of pair transpositions seen (crossing counter).
        """
        n = x.shape[0]
        force = np.empty(n)
        for k in range(n):
            force[order[k]] = coupling * (n - 1 - 2 * k)
        swaps = 0
        for _ in range(n_steps):
            for i in range(n):
                p[i] += 0.5 * dt * force[i]
                x[i] += dt * p[i] * inv_mass
            swaps += resort_order(x, order)
            for k in range(n):
                force[order[k]] = coupling * (n - 1 - 2 * k)
            for i in range(n):
                p[i] += 0.5 * dt * force[i]
        return swaps

else:  # pragma: no cover

    def resort_order(x, order):
        raise RuntimeError("numba not available")

    def sheet_leapfrog_chunk(x, p, order, coupling, inv_mass, dt, n_steps):
        raise RuntimeError("numba not available")
