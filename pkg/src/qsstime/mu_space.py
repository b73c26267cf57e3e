"""Coarse-graining into mu-space, mean-field potential, QSS detection.

The one-particle phase space is binned on a uniform rectangular grid whose
bin volume omega defaults to 1/eta0, the inverse of the fine-grained
phase-space density, so a fully packed bin carries unit occupation. A
larger omega (``omega_scale``) trades phase-space resolution for counting
statistics; the convergence criterion of the coarse-grained distribution is
what legitimizes the choice of scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ExtrapolationError, GridMismatchError, OutOfGridError, SingularEvaluationError
from .model import CanonicalState, PairPotential, pair_potential, validate_mass


def _uniform_spacing(edges, label):
    d = np.diff(edges)
    if edges.size < 2 or np.any(d <= 0):
        raise ValueError(f"{label} edges must be strictly increasing with >= 1 bin")
    if not np.allclose(d, d[0], rtol=1e-9, atol=0.0):
        raise ValueError(f"{label} bins must be uniform")
    return float(d[0])


@dataclass(frozen=True)
class MuGrid:
    """Uniform rectangular binning of (Q, P) space.

    ``q_edges`` and ``p_edges`` hold one strictly increasing edge array per
    spatial dimension; the per-bin volume omega is the product of all bin
    widths and is identical for every bin by construction.
    """

    q_edges: tuple
    p_edges: tuple

    def __post_init__(self):
        object.__setattr__(self, "q_edges", tuple(np.asarray(e, dtype=float) for e in self.q_edges))
        object.__setattr__(self, "p_edges", tuple(np.asarray(e, dtype=float) for e in self.p_edges))
        if len(self.q_edges) != len(self.p_edges):
            raise ValueError("q and p must have the same number of dimensions")
        for i, e in enumerate(self.q_edges):
            _uniform_spacing(e, f"q[{i}]")
        for i, e in enumerate(self.p_edges):
            _uniform_spacing(e, f"p[{i}]")

    @property
    def dim(self):
        return len(self.q_edges)

    @property
    def shape(self):
        return tuple(e.size - 1 for e in self.q_edges) + tuple(e.size - 1 for e in self.p_edges)

    @property
    def q_shape(self):
        return tuple(e.size - 1 for e in self.q_edges)

    @property
    def p_shape(self):
        return tuple(e.size - 1 for e in self.p_edges)

    @property
    def omega(self):
        w = 1.0
        for e in self.q_edges + self.p_edges:
            w *= e[1] - e[0]
        return float(w)

    @property
    def q_centers(self):
        return tuple(0.5 * (e[:-1] + e[1:]) for e in self.q_edges)

    @property
    def p_centers(self):
        return tuple(0.5 * (e[:-1] + e[1:]) for e in self.p_edges)

    def q_center_points(self):
        """All spatial bin centers as an (n_q_bins, dim) array."""
        mesh = np.meshgrid(*self.q_centers, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def same_as(self, other):
        return (
            self.dim == other.dim
            and all(np.array_equal(a, b) for a, b in zip(self.q_edges, other.q_edges))
            and all(np.array_equal(a, b) for a, b in zip(self.p_edges, other.p_edges))
        )

    @classmethod
    def from_eta0(cls, eta0, q_extent, p_extent, dim=1, omega_scale=1.0, aspect=None, padding=1.0):
        """Build a grid with bin volume omega = omega_scale / eta0.

        Per dimension the widths satisfy dq*dp = omega^(1/dim) with aspect
        ratio dq/dp defaulting to q_extent/p_extent, and the grid covers
        ``padding`` times the waterbag extents, rounded up to whole bins
        placed symmetrically about the origin.
        """
        if eta0 <= 0 or not np.isfinite(eta0):
            raise ValueError("eta0 must be positive and finite")
        if omega_scale <= 0:
            raise ValueError("omega_scale must be positive")
        if padding < 1.0:
            raise ValueError("padding must be >= 1")
        pair_vol = (omega_scale / eta0) ** (1.0 / dim)
        if aspect is None:
            if p_extent <= 0:
                raise ValueError("p_extent must be positive (or pass an explicit aspect)")
            aspect = q_extent / p_extent
        dq = np.sqrt(pair_vol * aspect)
        dp = np.sqrt(pair_vol / aspect)

        def axis(width, extent):
            n = max(1, int(np.ceil(2.0 * padding * extent / width)))
            return width * (np.arange(n + 1) - n / 2.0)

        q_edges = tuple(axis(dq, q_extent) for _ in range(dim))
        p_edges = tuple(axis(dp, p_extent) for _ in range(dim))
        return cls(q_edges, p_edges)

    @classmethod
    def from_extents(cls, q_extent, p_extent, n_q=32, n_p=32, dim=1):
        q = tuple(np.linspace(-q_extent, q_extent, n_q + 1) for _ in range(dim))
        p = tuple(np.linspace(-p_extent, p_extent, n_p + 1) for _ in range(dim))
        return cls(q, p)


@dataclass
class CoarseGrainedDistribution:
    """Histogram of the ensemble over a :class:`MuGrid`.

    ``counts`` holds particles per bin (floats so window averages stay
    representable); ``f`` is the phase-space mass density counts*M/omega.
    """

    grid: MuGrid
    counts: np.ndarray
    mass_per_particle: float = 1.0
    t: float = 0.0
    out_fraction: float = 0.0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.shape != self.grid.shape:
            raise ValueError(f"counts shape {self.counts.shape} does not match grid shape {self.grid.shape}")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def f(self):
        return self.counts * self.mass_per_particle / self.grid.omega

    def total_mass(self):
        return float(self.counts.sum() * self.mass_per_particle)

    def occupied(self):
        return self.counts > 0

    def min_occupied_count(self):
        occ = self.occupied()
        return float(self.counts[occ].min()) if occ.any() else 0.0

    def max_f(self):
        return float(self.f.max()) if self.counts.size else 0.0


def coarse_grain(state: CanonicalState, grid: MuGrid, mass=1.0, max_out_fraction=0.01):
    """Histogram the ensemble; errors if too much mass misses the grid."""
    m = validate_mass(mass)
    if state.dim != grid.dim:
        raise GridMismatchError(f"state dim {state.dim} vs grid dim {grid.dim}")
    if state.n_particles == 0:
        return CoarseGrainedDistribution(grid, np.zeros(grid.shape), m, state.t, 0.0)
    sample = np.hstack([state.Q, state.P])
    counts, _ = np.histogramdd(sample, bins=list(grid.q_edges) + list(grid.p_edges))
    inside = counts.sum()
    out_fraction = 1.0 - inside / state.n_particles
    if out_fraction > max_out_fraction:
        raise OutOfGridError(
            f"{out_fraction:.2%} of the mass fell outside the grid (limit {max_out_fraction:.2%}); "
            "increase the grid padding"
        )
    return CoarseGrainedDistribution(grid, counts, m, state.t, out_fraction)


@dataclass
class MeanFieldPotential:
    """Phi_MF sampled on spatial grid nodes with linear interpolation."""

    q_axes: tuple
    values: np.ndarray
    interpolation: str = "linear"

    def __post_init__(self):
        self.q_axes = tuple(np.asarray(a, dtype=float) for a in self.q_axes)
        self.values = np.asarray(self.values, dtype=float)
        expected = tuple(a.size for a in self.q_axes)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} does not match axes {expected}")
        if self.interpolation != "linear":
            raise ValueError("only linear interpolation is supported")

    @property
    def dim(self):
        return len(self.q_axes)

    def domain(self):
        return (
            np.array([a[0] for a in self.q_axes]),
            np.array([a[-1] for a in self.q_axes]),
        )

    def minimum(self):
        return float(self.values.min())

    def at(self, positions):
        q = np.asarray(positions, dtype=float)
        if q.ndim == 1:
            q = q.reshape(-1, 1) if self.dim == 1 else q.reshape(1, -1)
        if q.shape[1] != self.dim:
            raise ValueError(f"positions have dim {q.shape[1]}, potential has dim {self.dim}")
        lo, hi = self.domain()
        if np.any(q < lo) or np.any(q > hi):
            raise ExtrapolationError("position outside the mean-field interpolation domain")
        if self.dim == 1:
            return np.interp(q[:, 0], self.q_axes[0], self.values)
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator(self.q_axes, self.values, method="linear", bounds_error=True)
        return interp(q)


def mean_field_potential(dist: CoarseGrainedDistribution, pot: PairPotential, chunk=2048):
    """Phi_MF(Q) = sum over bins of Phi(|Q - Q'|) f(bin) omega, on q nodes.

    The momentum axes are marginalized first; the self-bin kernel value
    Phi(0) must be finite, so an unsoftened newtonian3d kernel is rejected.
    """
    if pot.kind == "newtonian3d" and pot.softening == 0.0:
        raise SingularEvaluationError("mean-field convolution needs softening > 0 for newtonian3d")
    grid = dist.grid
    d = grid.dim
    sum_axes = tuple(range(d, 2 * d))
    mass_q = dist.counts.sum(axis=sum_axes) * dist.mass_per_particle
    nodes = grid.q_center_points()
    src = nodes
    m_flat = mass_q.ravel()
    phi = np.zeros(nodes.shape[0])
    if m_flat.any():
        for start in range(0, nodes.shape[0], chunk):
            block = nodes[start : start + chunk]
            diff = block[:, None, :] - src[None, :, :]
            r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
            phi[start : start + chunk] = pair_potential(pot, r) @ m_flat
    return MeanFieldPotential(grid.q_centers, phi.reshape(grid.q_shape))


def eps_on_grid(grid: MuGrid, mf: MeanFieldPotential, mass=1.0):
    """One-particle energy at every bin center, shaped like the grid."""
    m = validate_mass(mass)
    d = grid.dim
    phi = mf.at(grid.q_center_points()).reshape(grid.q_shape)
    kin = np.zeros(grid.p_shape)
    for axis, pc in enumerate(grid.p_centers):
        shape = [1] * d
        shape[axis] = pc.size
        kin = kin + (pc**2 / (2.0 * m)).reshape(shape)
    return phi.reshape(grid.q_shape + (1,) * d) + kin.reshape((1,) * d + grid.p_shape)


@dataclass
class EnergyMarginal:
    """Shell-averaged f(eps): one row per non-empty energy shell."""

    eps: np.ndarray
    f_mean: np.ndarray
    shell_volume: np.ndarray
    n_bins: np.ndarray
    right_edges: np.ndarray = None
    n_missing: int = 0

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float)
        self.f_mean = np.asarray(self.f_mean, dtype=float)
        self.shell_volume = np.asarray(self.shell_volume, dtype=float)
        self.n_bins = np.asarray(self.n_bins)
        if not (self.eps.size == self.f_mean.size == self.shell_volume.size == self.n_bins.size):
            raise ValueError("table columns must have equal length")
        if self.eps.size and np.any(np.diff(self.eps) <= 0):
            raise ValueError("eps column must be strictly increasing")
        if self.right_edges is not None:
            self.right_edges = np.asarray(self.right_edges, dtype=float)

    def __len__(self):
        return self.eps.size

    def cut_values(self):
        """Candidate Fermi energies: the upper edge of each shell."""
        if self.right_edges is not None:
            return self.right_edges
        if self.eps.size == 1:
            return np.array([self.eps[0] + 1.0])
        mids = 0.5 * (self.eps[:-1] + self.eps[1:])
        last = self.eps[-1] + 0.5 * (self.eps[-1] - self.eps[-2])
        return np.concatenate([mids, [last]])


def energy_marginal(dist: CoarseGrainedDistribution, mf: MeanFieldPotential, mass=1.0, n_energy_bins=40):
    """Average f over constant-energy shells of the bin-center energy.

    Shells partition [min eps over the grid, max eps over occupied bins];
    empty shells are dropped from the table and only counted in
    ``n_missing`` so fits never see imputed zeros.
    """
    if n_energy_bins < 1:
        raise ValueError("n_energy_bins must be >= 1")
    eps = eps_on_grid(dist.grid, mf, mass)
    f = dist.f
    occ = dist.occupied()
    emin = float(eps.min())
    emax = float(eps[occ].max()) if occ.any() else float(eps.max())
    if emax <= emin:
        emax = emin + max(1e-12, 1e-9 * abs(emin))
    edges = np.linspace(emin, emax, n_energy_bins + 1)
    edges[-1] = np.nextafter(edges[-1], np.inf)
    idx = np.searchsorted(edges, eps.ravel(), side="right") - 1
    valid = (idx >= 0) & (idx < n_energy_bins)
    counts = np.bincount(idx[valid], minlength=n_energy_bins)
    fsum = np.bincount(idx[valid], weights=f.ravel()[valid], minlength=n_energy_bins)
    nonempty = counts > 0
    centers = 0.5 * (edges[:-1] + edges[1:])
    return EnergyMarginal(
        eps=centers[nonempty],
        f_mean=fsum[nonempty] / counts[nonempty],
        shell_volume=counts[nonempty] * dist.grid.omega,
        n_bins=counts[nonempty],
        right_edges=edges[1:][nonempty],
        n_missing=int(np.count_nonzero(~nonempty)),
    )


def stationarity_metric(dist_a: CoarseGrainedDistribution, dist_b: CoarseGrainedDistribution):
    """Mass-normalized L1 distance between two histograms on one grid."""
    if not dist_a.grid.same_as(dist_b.grid):
        raise GridMismatchError("stationarity metric needs identical grids")
    mass = dist_a.total_mass()
    l1 = float(np.sum(np.abs(dist_a.f - dist_b.f)) * dist_a.grid.omega)
    if mass == 0.0:
        return 0.0 if dist_b.total_mass() == 0.0 else np.inf
    return l1 / mass


@dataclass
class QssDetection:
    converged: bool
    start_index: int | None
    time: float | None
    max_metric: float | None
    averaged: CoarseGrainedDistribution | None
    window_flags: np.ndarray
    notice: str = ""


def window_converged_flags(dists, threshold=0.02, window=5):
    """Flag every window start whose snapshots are pairwise stationary."""
    n = len(dists)
    starts = max(0, n - window + 1)
    flags = np.zeros(starts, dtype=bool)
    for s in range(starts):
        ok = True
        worst = 0.0
        for i in range(window):
            for j in range(i + 1, window):
                worst = max(worst, stationarity_metric(dists[s + i], dists[s + j]))
                if worst >= threshold:
                    ok = False
                    break
            if not ok:
                break
        flags[s] = ok
    return flags


def detect_qss(dists, threshold=0.02, window=5):
    """Find the earliest window of pairwise-stationary snapshots.

    Returns the detection record with the window-averaged distribution,
    which downstream stages use for the mean-field potential so residual
    mean-field oscillations average out.
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    flags = window_converged_flags(dists, threshold, window)
    hit = np.flatnonzero(flags)
    if hit.size == 0:
        return QssDetection(False, None, None, None, None, flags, "no stationary window found")
    s = int(hit[0])
    chunk = dists[s : s + window]
    worst = max(
        stationarity_metric(chunk[i], chunk[j])
        for i in range(window)
        for j in range(i + 1, window)
    )
    counts = np.mean([d.counts for d in chunk], axis=0)
    averaged = CoarseGrainedDistribution(
        dists[s].grid,
        counts,
        chunk[0].mass_per_particle,
        t=float(np.mean([d.t for d in chunk])),
        out_fraction=float(np.mean([d.out_fraction for d in chunk])),
    )
    return QssDetection(True, s, float(dists[s].t), float(worst), averaged, flags)


def casimir_check(dist: CoarseGrainedDistribution, eta0):
    """Coarse-grained density against the fine-grained bound plus shot noise.

    bound = eta0 * (1 + 3/sqrt(min occupied count)); a coarse-grained f
    above it signals either a histogramming bug or sub-Poisson statistics,
    since mixing can only dilute the fine-grained density.
    """
    c_min = dist.min_occupied_count()
    if c_min <= 0:
        return {"max_f": 0.0, "bound": float(eta0), "min_occupied_count": 0.0, "ok": True}
    bound = eta0 * (1.0 + 3.0 / np.sqrt(c_min))
    max_f = dist.max_f()
    return {
        "max_f": max_f,
        "bound": float(bound),
        "min_occupied_count": c_min,
        "ok": bool(max_f <= bound),
    }
