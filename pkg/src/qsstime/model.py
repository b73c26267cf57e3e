"""Physical model layer: pair potentials, gauge fields, canonical structure.

Units are natural: the gravitational constant is absorbed into the pair
coupling, condensate masses default to 1, and the trivial gauge (lapse 1,
shift 0) is the exactly inertial frame in which all time integration runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularEvaluationError

POTENTIAL_KINDS = ("newtonian3d", "sheet1d", "cosine")


def _as_points(arr):
    """Normalize positions/momenta to float64 arrays of shape (n, dim)."""
    a = np.asarray(arr, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    elif a.ndim != 2:
        raise ValueError(f"expected scalar, 1D or 2D array, got shape {a.shape}")
    return a


def validate_mass(mass):
    m = float(mass)
    if not m > 0:
        raise ValueError(f"soliton mass must be positive, got {mass}")
    return m


@dataclass(frozen=True)
class PairPotential:
    """Binary interaction between two identical condensates.

    kind      one of 'newtonian3d', 'sheet1d', 'cosine'
    coupling  overall strength; plays G*M^2 for gravity-like kinds
    softening Plummer softening length, newtonian3d only
    """

    kind: str
    coupling: float = 1.0
    softening: float = 0.0

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}, expected one of {POTENTIAL_KINDS}")
        if self.softening < 0:
            raise ValueError("softening must be >= 0")
        if self.kind != "newtonian3d" and self.softening != 0.0:
            raise ValueError(f"{self.kind} potential requires softening = 0")

    @property
    def attractive(self):
        return self.coupling > 0


def pair_potential(pot: PairPotential, r):
    """Potential energy of one pair at separation ``r`` (scalar or array).

    newtonian3d: -c / sqrt(r^2 + soft^2)
    sheet1d:      c * r
    cosine:      -c * cos(r)
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("separation must be nonnegative")
    if pot.kind == "newtonian3d":
        if pot.softening == 0.0 and np.any(r == 0.0):
            raise SingularEvaluationError("newtonian3d potential is singular at r = 0 with zero softening")
        out = -pot.coupling / np.sqrt(r * r + pot.softening**2)
    elif pot.kind == "sheet1d":
        out = pot.coupling * r
    else:
        out = -pot.coupling * np.cos(r)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class GaugeField:
    """Time-lapse function N(x, t) and shift vector N^a(x, t).

    ``lapse`` maps ((n, dim) positions, time) -> (n,) positive values and
    ``shift`` maps the same inputs -> (n, dim). ``constant`` carries
    (N0, shift_vector) for gauges known to be space- and time-independent;
    it is what entitles a gauge to be used in trajectory reparametrization.
    """

    lapse: callable
    shift: callable
    constant: tuple | None = None
    label: str = "custom"

    def lapse_at(self, positions, t=0.0):
        q = _as_points(positions)
        n = np.broadcast_to(np.asarray(self.lapse(q, t), dtype=float), (q.shape[0],)).copy()
        if np.any(n <= 0):
            raise ValueError(f"lapse must be positive everywhere, min sampled value {n.min()}")
        return n

    def shift_at(self, positions, t=0.0):
        q = _as_points(positions)
        s = np.asarray(self.shift(q, t), dtype=float)
        return np.broadcast_to(s, q.shape).copy()


def trivial_gauge(dim=1):
    """The exactly inertial frame: N = 1, shift = 0."""
    return GaugeField(
        lapse=lambda q, t: np.ones(q.shape[0]),
        shift=lambda q, t: np.zeros((q.shape[0], dim)),
        constant=(1.0, np.zeros(dim)),
        label="trivial",
    )


def constant_gauge(lapse_value, shift_vector=None, dim=1):
    """Space- and time-independent gauge (N0, N^a)."""
    n0 = float(lapse_value)
    if n0 <= 0:
        raise ValueError("constant lapse must be positive")
    if shift_vector is None:
        shift_vector = np.zeros(dim)
    sv = np.atleast_1d(np.asarray(shift_vector, dtype=float))
    return GaugeField(
        lapse=lambda q, t: np.full(q.shape[0], n0),
        shift=lambda q, t: np.broadcast_to(sv, (q.shape[0], sv.size)).copy(),
        constant=(n0, sv.copy()),
        label=f"constant(N={n0})",
    )


def sinusoidal_gauge(amplitude=0.1, frequency=1.0, wavenumber=0.0, dim=1):
    """Fine-grained lapse N = 1 + a*sin(k*x0 + w*t), shift 0.

    Useful as a genuinely time-dependent gauge for proper-time-translation
    checks; requires |a| < 1 so N stays positive.
    """
    a, w, k = float(amplitude), float(frequency), float(wavenumber)
    if abs(a) >= 1:
        raise ValueError("sinusoidal gauge amplitude must satisfy |a| < 1")
    return GaugeField(
        lapse=lambda q, t: 1.0 + a * np.sin(k * q[:, 0] + w * t),
        shift=lambda q, t: np.zeros((q.shape[0], dim)),
        constant=None,
        label=f"sinusoidal(a={a},w={w},k={k})",
    )


@dataclass
class CanonicalState:
    """Positions, canonical momenta and the coordinate time of an ensemble."""

    Q: np.ndarray
    P: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.Q = _as_points(self.Q)
        self.P = _as_points(self.P)
        if self.Q.shape != self.P.shape:
            raise ValueError(f"Q and P shapes differ: {self.Q.shape} vs {self.P.shape}")
        if not (np.all(np.isfinite(self.Q)) and np.all(np.isfinite(self.P))):
            raise ValueError("state contains non-finite entries")
        self.t = float(self.t)

    @property
    def n_particles(self):
        return self.Q.shape[0]

    @property
    def dim(self):
        return self.Q.shape[1]

    def copy(self):
        return CanonicalState(self.Q.copy(), self.P.copy(), self.t)


def pairwise_potential_per_particle(positions, pot: PairPotential, chunk=1024):
    """W_C = 1/2 sum_{C' != C} Phi(|Q_C - Q_C'|) for every particle.

    Uses exact closed forms for sheet1d (sorted prefix sums) and cosine
    (mean-field identity); newtonian3d falls back to blocked direct
    summation. Summing the result over particles gives the total pair
    potential energy.
    """
    q = _as_points(positions)
    n = q.shape[0]
    if n < 2:
        return np.zeros(n)
    c = pot.coupling
    if pot.kind == "sheet1d":
        x = q[:, 0]
        ordr = np.argsort(x, kind="stable")
        xs = x[ordr]
        pref = np.concatenate(([0.0], np.cumsum(xs)))
        k = np.arange(n)
        # sum_j |x_i - x_j| for the k-th element in sorted order
        s = xs * k - pref[k] + (pref[n] - pref[k + 1]) - xs * (n - 1 - k)
        w = np.empty(n)
        w[ordr] = 0.5 * c * s
        return w
    if pot.kind == "cosine":
        x = q[:, 0]
        cs, sn = np.cos(x), np.sin(x)
        ctot, stot = cs.sum(), sn.sum()
        # sum_j cos(x_i - x_j) = cos x_i * sum cos + sin x_i * sum sin; the
        # j = i term contributes cos 0 = 1 and is removed.
        pair_cos = cs * ctot + sn * stot - 1.0
        return -0.5 * c * pair_cos
    soft2 = pot.softening**2
    if pot.softening == 0.0:
        raise SingularEvaluationError("newtonian3d mean over coincident particles needs softening > 0 or distinct positions")
    w = np.zeros(n)
    for start in range(0, n, chunk):
        block = q[start : start + chunk]
        d = block[:, None, :] - q[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", d, d) + soft2
        inv = 1.0 / np.sqrt(r2)
        rows = np.arange(block.shape[0])
        inv[rows, start + rows] = 0.0
        w[start : start + chunk] = -0.5 * c * inv.sum(axis=1)
    return w


def kinetic_energy(state: CanonicalState, mass=1.0):
    m = validate_mass(mass)
    return float(np.sum(state.P * state.P) / (2.0 * m))


def potential_energy(state: CanonicalState, pot: PairPotential):
    """Total pair potential energy, sum over unordered pairs."""
    if state.n_particles < 2:
        return 0.0
    if pot.kind == "newtonian3d" and pot.softening == 0.0:
        # Exact pairwise evaluation so genuinely distinct points still work.
        return _newtonian_hard_potential(state.Q, pot.coupling)
    return float(np.sum(pairwise_potential_per_particle(state.Q, pot)))


def _newtonian_hard_potential(q, coupling, chunk=1024):
    n = q.shape[0]
    total = 0.0
    for start in range(0, n, chunk):
        block = q[start : start + chunk]
        d = block[:, None, :] - q[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", d, d))
        rows = np.arange(block.shape[0])
        r[rows, start + rows] = np.inf
        if np.any(r == 0.0):
            raise SingularEvaluationError("coincident particles in unsoftened newtonian3d potential")
        total += float(np.sum(-coupling / r))
    return 0.5 * total


def total_hamiltonian(state: CanonicalState, pot: PairPotential, gauge: GaugeField, mass=1.0):
    """Sum_C N_C {P_C^2/2M + 1/2 sum_{C'} Phi} + sum_C N_C^a P_Ca."""
    m = validate_mass(mass)
    lapse = gauge.lapse_at(state.Q, state.t)
    shift = gauge.shift_at(state.Q, state.t)
    kin = np.sum(state.P * state.P, axis=1) / (2.0 * m)
    w = pairwise_potential_per_particle(state.Q, pot)
    return float(np.sum(lapse * (kin + w)) + np.sum(shift * state.P))


def canonical_momentum(qdot, lapse, shift, mass=1.0):
    """P^a = M (Qdot^a - N^a) / N, the center-of-mass momentum."""
    m = validate_mass(mass)
    v = np.asarray(qdot, dtype=float)
    n = np.asarray(lapse, dtype=float)
    s = np.broadcast_to(np.asarray(shift, dtype=float), v.shape)
    if np.any(n <= 0):
        raise ValueError("lapse must be positive")
    return m * (v - s) / n


def velocity_from_momentum(p, lapse, shift, mass=1.0):
    """Inverse of :func:`canonical_momentum`: Qdot^a = N P^a / M + N^a."""
    m = validate_mass(mass)
    pa = np.asarray(p, dtype=float)
    n = np.asarray(lapse, dtype=float)
    s = np.broadcast_to(np.asarray(shift, dtype=float), pa.shape)
    if np.any(n <= 0):
        raise ValueError("lapse must be positive")
    return n * pa / m + s


def velocity_to_physical_shift(qdot):
    """Relabel a condensate velocity as the physical shift vector -Qdot^a."""
    return -np.asarray(qdot, dtype=float)


def one_particle_energy(position, momentum, mean_field, mass=1.0):
    """eps = |P|^2 / 2M + Phi_MF(Q) for one or many phase-space points."""
    m = validate_mass(mass)
    q = _as_points(position)
    p = _as_points(momentum)
    if q.shape != p.shape:
        raise ValueError("position and momentum shapes differ")
    eps = np.sum(p * p, axis=1) / (2.0 * m) + mean_field.at(q)
    return float(eps[0]) if eps.size == 1 else eps
