"""File formats for run artifacts.

Every CSV starts with a schema comment line and a header row; floats are
written with 17 significant digits so files round-trip float64 exactly and
identical runs produce byte-identical artifacts. JSON is written with
sorted keys for the same reason.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .errors import ConfigError
from .model import CanonicalState
from .mu_space import CoarseGrainedDistribution, EnergyMarginal, MeanFieldPotential, MuGrid

SCHEMA_PREFIX = "qsstime"
FMT = "%.17g"


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_csv(path, schema, header_cols, rows):
    with open(path, "w") as fh:
        fh.write(f"# schema: {SCHEMA_PREFIX}/{schema} v1\n")
        fh.write(",".join(header_cols) + "\n")
        for row in rows:
            fh.write(",".join(FMT % v for v in row) + "\n")


def _read_csv(path, schema, required_cols):
    data = np.genfromtxt(path, delimiter=",", names=True, comments="#", dtype=float)
    if data.dtype.names is None:
        raise ConfigError(f"{path}: no header row found (expected columns {required_cols})")
    names = list(data.dtype.names)
    missing = [c for c in required_cols if c not in names]
    if missing:
        raise ConfigError(f"{path}: missing columns {missing}; found {names}")
    if data.shape == ():
        data = data.reshape(1)
    return data


# --- conservation log ---------------------------------------------------

def write_conservation_csv(path, log, dim):
    cols = ["t", "energy"] + [f"p_{d}" for d in range(dim)] + ["virial_ratio", "wall_time"]
    rows = (
        [t, e] + list(np.atleast_1d(p)) + [v, w]
        for t, e, p, v, w in zip(log.t, log.energy, log.momentum, log.virial_ratio, log.wall_time)
    )
    _write_csv(path, "conservation", cols, rows)


def read_conservation_csv(path):
    data = _read_csv(path, "conservation", ["t", "energy", "virial_ratio"])
    return {name: np.asarray(data[name]) for name in data.dtype.names}


# --- f(eps) table ---------------------------------------------------------

F_OF_EPS_COLS = ["epsilon", "f_mean", "shell_volume", "n_bins"]


def write_f_of_eps_csv(path, table: EnergyMarginal):
    rows = zip(table.eps, table.f_mean, table.shell_volume, table.n_bins)
    _write_csv(path, "f_of_eps", F_OF_EPS_COLS, rows)


def read_f_of_eps_csv(path):
    try:
        data = _read_csv(path, "f_of_eps", F_OF_EPS_COLS)
    except ValueError as err:
        raise ConfigError(f"{path}: cannot parse f(eps) table: {err}") from None
    if data.shape[0] == 0:
        raise ConfigError(f"{path}: table has no rows")
    return EnergyMarginal(
        eps=data["epsilon"],
        f_mean=data["f_mean"],
        shell_volume=data["shell_volume"],
        n_bins=data["n_bins"].astype(int),
    )


# --- trajectory snapshots -------------------------------------------------

def write_snapshots_npz(path, snapshots):
    t = np.array([s.t for s in snapshots])
    Q = np.stack([s.Q for s in snapshots])
    P = np.stack([s.P for s in snapshots])
    np.savez_compressed(path, t=t, Q=Q, P=P)


def read_snapshots_npz(path):
    with np.load(path) as data:
        return [CanonicalState(q, p, tt) for tt, q, p in zip(data["t"], data["Q"], data["P"])]


def write_snapshots_csv(path, snapshots):
    dim = snapshots[0].dim if snapshots else 1
    cols = ["t", "particle_id"] + [f"q_{d}" for d in range(dim)] + [f"p_{d}" for d in range(dim)]

    def rows():
        for s in snapshots:
            for i in range(s.n_particles):
                yield [s.t, i] + list(s.Q[i]) + list(s.P[i])

    _write_csv(path, "snapshots", cols, rows())


# --- coarse-grained distribution -------------------------------------------

def write_distribution_npz(path, dist: CoarseGrainedDistribution):
    np.savez_compressed(
        path,
        counts=dist.counts,
        mass_per_particle=dist.mass_per_particle,
        t=dist.t,
        out_fraction=dist.out_fraction,
        n_dim=dist.grid.dim,
        **{f"q_edges_{i}": e for i, e in enumerate(dist.grid.q_edges)},
        **{f"p_edges_{i}": e for i, e in enumerate(dist.grid.p_edges)},
    )


def read_distribution_npz(path):
    with np.load(path) as data:
        d = int(data["n_dim"])
        grid = MuGrid(
            tuple(data[f"q_edges_{i}"] for i in range(d)),
            tuple(data[f"p_edges_{i}"] for i in range(d)),
        )
        return CoarseGrainedDistribution(
            grid,
            data["counts"],
            float(data["mass_per_particle"]),
            float(data["t"]),
            float(data["out_fraction"]),
        )


def write_distribution_csv(path, dist: CoarseGrainedDistribution, occupied_only=True):
    d = dist.grid.dim
    cols = [f"q_index_{i}" for i in range(d)] + [f"p_index_{i}" for i in range(d)] + ["f"]
    f = dist.f
    mask = dist.occupied() if occupied_only else np.ones(f.shape, dtype=bool)
    idx = np.argwhere(mask)

    def rows():
        for multi in idx:
            yield list(multi) + [f[tuple(multi)]]

    _write_csv(path, "distribution", cols, rows())


# --- mean-field potential ---------------------------------------------------

def write_mean_field_npz(path, mf: MeanFieldPotential):
    np.savez_compressed(
        path,
        values=mf.values,
        n_dim=mf.dim,
        **{f"q_axis_{i}": a for i, a in enumerate(mf.q_axes)},
    )


def read_mean_field_npz(path):
    with np.load(path) as data:
        d = int(data["n_dim"])
        return MeanFieldPotential(tuple(data[f"q_axis_{i}"] for i in range(d)), data["values"])


def write_mean_field_csv(path, mf: MeanFieldPotential):
    if mf.dim != 1:
        raise ValueError("CSV export of the mean field is 1D only; use the npz form")
    _write_csv(path, "mean_field", ["q", "phi_mf"], zip(mf.q_axes[0], mf.values))


# --- per-bin diluted-lapse report -------------------------------------------

def write_bin_report_csv(path, decomp, report):
    grid = report.grid
    d = grid.dim
    centers = grid.q_centers + grid.p_centers
    cols = (
        [f"q_index_{i}" for i in range(d)]
        + [f"p_index_{i}" for i in range(d)]
        + [f"q_{i}" for i in range(d)]
        + [f"p_{i}" for i in range(d)]
        + ["eps", "f1", "f2", "nu1", "nu2", "lapse", "dl1", "dl2", "discrepancy", "tick_ratio"]
    )
    idx = np.argwhere(report.support_mask)

    def rows():
        for multi in idx:
            key = tuple(multi)
            coords = [centers[ax][multi[ax]] for ax in range(2 * d)]
            yield (
                list(multi)
                + coords
                + [
                    decomp.eps[key],
                    decomp.f1[key],
                    decomp.f2[key],
                    report.nu1[key],
                    report.nu2[key],
                    report.lapse[key],
                    report.dl1[key],
                    report.dl2[key],
                    report.discrepancy[key],
                    report.tick_ratio[key],
                ]
            )

    _write_csv(path, "bin_report", cols, rows())


def read_bin_report_csv(path):
    data = _read_csv(path, "bin_report", ["f1", "f2", "dl1", "dl2"])
    return data
