"""Diluted time-lapse analysis of a two-component coarse-grained ground state.

Each step component occupies mu-space bins as an integer number of
identical rearranged coordinate copies, nu_i = round(f_i * omega / M). On a
bin occupied by both components the proper-time tick must be shared, which
forces the component tick ratio t1/t2 = f2/f1 independently of the lapse.
The per-bin diluted lapse values dl_i = f_i * omega * N therefore disagree
wherever f1 != f2 on the overlap, and the verdict reports whether that
discrepancy exceeds tolerance anywhere. The verdict uses the relative
discrepancy D/(dl1 + dl2), which is invariant under rescaling N: the
obstruction is structural, not a matter of gauge magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError
from .model import GaugeField, validate_mass
from .mu_space import MeanFieldPotential, MuGrid, eps_on_grid
from .qss_fit import TwoStepFit


@dataclass
class ComponentDecomposition:
    """Step-component densities f1, f2 reconstructed on a mu-grid."""

    grid: MuGrid
    eps: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    fit: TwoStepFit = None

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float)
        self.f1 = np.asarray(self.f1, dtype=float)
        self.f2 = np.asarray(self.f2, dtype=float)
        for name, arr in (("eps", self.eps), ("f1", self.f1), ("f2", self.f2)):
            if arr.shape != self.grid.shape:
                raise ValueError(f"{name} shape {arr.shape} does not match grid {self.grid.shape}")
        if np.any(self.f1 < 0) or np.any(self.f2 < 0):
            raise ValueError("component densities must be nonnegative")

    @property
    def overlap_mask(self):
        return (self.f1 > 0) & (self.f2 > 0)

    @property
    def support_mask(self):
        return (self.f1 > 0) | (self.f2 > 0)


def decompose_components(fit: TwoStepFit, grid: MuGrid, mf: MeanFieldPotential, mass=1.0):
    """Rebuild f_i(bin) = eta_i * theta(ef_i - eps(bin center)) from a fit.

    A 'single' verdict zeroes the second component, so the overlap region
    is empty and the time-lapse obstruction is vacuously absent.
    """
    if mf.dim != grid.dim:
        raise GridMismatchError(f"mean field dim {mf.dim} vs grid dim {grid.dim}")
    eps = eps_on_grid(grid, mf, mass)
    f1 = np.where(eps <= fit.ef1, fit.eta1, 0.0)
    if fit.verdict == "single" and fit.eta2 == 0.0:
        f2 = np.zeros_like(eps)
    else:
        f2 = np.where(eps <= fit.ef2, fit.eta2, 0.0)
    return ComponentDecomposition(grid, eps, f1, f2, fit)


def occupancy_counts(f, omega, mass=1.0):
    """nu = round(f * omega / M), copies of the coordinate system per bin.

    Round-to-nearest with ties to even; at M = 1 this is round(f * omega),
    the direct-sum multiplicity of the bin.
    """
    m = validate_mass(mass)
    return np.rint(np.asarray(f, dtype=float) * omega / m)


def bin_occupancy(decomp: ComponentDecomposition, omega=None, mass=1.0):
    """Per-bin occupancies (nu1, nu2) of the two components."""
    w = decomp.grid.omega if omega is None else float(omega)
    return occupancy_counts(decomp.f1, w, mass), occupancy_counts(decomp.f2, w, mass)


@dataclass
class DilutedTimeReport:
    """Per-bin diluted-lapse fields and the global inequivalence verdict.

    On overlap bins ``tick_ratio`` holds t_pl,1 / t_pl,2 = f2/f1 (the lapse
    cancels); elsewhere it is NaN. ``inequivalent`` is true iff the relative
    discrepancy D/(dl1 + dl2) exceeds ``discrepancy_tol`` on some overlap
    bin.
    """

    grid: MuGrid
    nu1: np.ndarray
    nu2: np.ndarray
    lapse: np.ndarray
    dl1: np.ndarray
    dl2: np.ndarray
    discrepancy: np.ndarray
    tick_ratio: np.ndarray
    overlap_mask: np.ndarray
    support_mask: np.ndarray
    discrepancy_tol: float
    inequivalent: bool
    max_discrepancy: float
    max_relative_discrepancy: float
    overlap_fraction: float
    lapse_time: float = 0.0
    omega: float = None
    lapse_spread: np.ndarray = None

    @property
    def verdict(self):
        return "inequivalent" if self.inequivalent else "equivalent"

    def summary(self):
        return {
            "verdict": self.verdict,
            "discrepancy_tol": self.discrepancy_tol,
            "max_discrepancy": self.max_discrepancy,
            "max_relative_discrepancy": self.max_relative_discrepancy,
            "overlap_fraction": self.overlap_fraction,
            "n_support_bins": int(np.count_nonzero(self.support_mask)),
            "n_overlap_bins": int(np.count_nonzero(self.overlap_mask)),
            "total_occupancy_1": float(self.nu1.sum()),
            "total_occupancy_2": float(self.nu2.sum()),
            "lapse_time": self.lapse_time,
            "omega": self.omega,
        }


def _bin_center_points(grid: MuGrid):
    axes = grid.q_centers + grid.p_centers
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    d = grid.dim
    return pts[:, :d], pts[:, d:]


def diluted_lapse(
    decomp: ComponentDecomposition,
    gauge: GaugeField,
    omega=None,
    t=0.0,
    mass=1.0,
    discrepancy_tol=0.05,
    lapse_samples=1,
    seed=0,
):
    """Diluted-lapse fields dl_i = f_i * omega * N and the verdict.

    The fine-grained lapse is sampled at one representative position per
    bin (the center); any fine-grained position in the bin maps to the same
    coarse-grained bin, so the choice is immaterial up to gauge smoothness.
    With ``lapse_samples`` > 1 additional positions are drawn uniformly in
    each spatial bin and the per-bin lapse spread is reported.
    """
    w = decomp.grid.omega if omega is None else float(omega)
    q_pts, _ = _bin_center_points(decomp.grid)
    lapse_flat = gauge.lapse_at(q_pts, t)
    lapse = lapse_flat.reshape(decomp.grid.shape)

    spread = None
    if lapse_samples > 1:
        rng = np.random.default_rng(seed)
        dq = np.array([e[1] - e[0] for e in decomp.grid.q_edges])
        samples = np.empty((lapse_samples, q_pts.shape[0]))
        samples[0] = lapse_flat
        for k in range(1, lapse_samples):
            jitter = rng.uniform(-0.5, 0.5, size=q_pts.shape) * dq[None, :]
            samples[k] = gauge.lapse_at(q_pts + jitter, t)
        spread = samples.std(axis=0).reshape(decomp.grid.shape)

    dl1 = decomp.f1 * w * lapse
    dl2 = decomp.f2 * w * lapse
    disc = np.abs(dl1 - dl2)
    overlap = decomp.overlap_mask
    support = decomp.support_mask

    ratio = np.full(decomp.grid.shape, np.nan)
    ratio[overlap] = decomp.f2[overlap] / decomp.f1[overlap]

    if overlap.any():
        denom = dl1[overlap] + dl2[overlap]
        rel = disc[overlap] / denom
        max_disc = float(disc[overlap].max())
        max_rel = float(rel.max())
        inequivalent = bool(max_rel > discrepancy_tol)
    else:
        max_disc = 0.0
        max_rel = 0.0
        inequivalent = False

    n_support = int(np.count_nonzero(support))
    nu1, nu2 = occupancy_counts(decomp.f1, w, mass), occupancy_counts(decomp.f2, w, mass)
    return DilutedTimeReport(
        grid=decomp.grid,
        nu1=nu1,
        nu2=nu2,
        lapse=lapse,
        dl1=dl1,
        dl2=dl2,
        discrepancy=disc,
        tick_ratio=ratio,
        overlap_mask=overlap,
        support_mask=support,
        discrepancy_tol=float(discrepancy_tol),
        inequivalent=inequivalent,
        max_discrepancy=max_disc,
        max_relative_discrepancy=max_rel,
        overlap_fraction=float(np.count_nonzero(overlap) / n_support) if n_support else 0.0,
        lapse_time=float(t),
        omega=w,
        lapse_spread=spread,
    )


def proper_time_translation_check(report_a: DilutedTimeReport, report_b: DilutedTimeReport, tol=1e-12):
    """True iff two reports from time-translated gauges are identical.

    Proper-time translations leave the lapse unchanged, so the diluted
    fields must agree bin by bin; a genuine reparametrization changes them.
    """
    if not report_a.grid.same_as(report_b.grid):
        raise GridMismatchError("reports live on different grids")
    if not np.array_equal(report_a.support_mask, report_b.support_mask):
        return False
    sup = report_a.support_mask
    if not sup.any():
        return True
    d1 = np.max(np.abs(report_a.dl1[sup] - report_b.dl1[sup]))
    d2 = np.max(np.abs(report_a.dl2[sup] - report_b.dl2[sup]))
    return bool(max(d1, d2) <= tol)


def occupancy_mass_check(decomp: ComponentDecomposition, omega=None, mass=1.0):
    """Rounded occupancies against the decomposed mass, within half a count."""
    w = decomp.grid.omega if omega is None else float(omega)
    nu1, nu2 = bin_occupancy(decomp, w, mass)
    occupancy_mass = float((nu1.sum() + nu2.sum()) * mass)
    direct_mass = float((decomp.f1.sum() + decomp.f2.sum()) * w)
    n_occupied = int(np.count_nonzero(decomp.f1 > 0)) + int(np.count_nonzero(decomp.f2 > 0))
    return {
        "occupancy_mass": occupancy_mass,
        "component_mass": direct_mass,
        "error": abs(occupancy_mass - direct_mass),
        "bound": 0.5 * mass * n_occupied,
        "n_occupied": n_occupied,
    }
