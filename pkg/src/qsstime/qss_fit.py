"""Zero-temperature step-function fits to the shell-averaged f(eps).

The ground-state coarse-grained distribution is modeled as a superposition
of at most two energy step functions,

    f(eps) = eta1 * theta(ef1 - eps) + eta2 * theta(ef2 - eps),  ef1 <= ef2,

fitted by weighted least squares. Because the model is piecewise constant
in the Fermi energies, scanning the shell edges with closed-form
amplitudes per candidate is exact and deterministic; no continuous
optimizer is involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstraintInfeasibleError, DegenerateFitError, ZeroAcceptanceError
from .model import CanonicalState, validate_mass
from .mu_space import EnergyMarginal


@dataclass(frozen=True)
class StepFit:
    """Single zero-temperature step: f = eta * theta(ef - eps)."""

    eta: float
    ef: float
    residual: float


@dataclass(frozen=True)
class TwoStepFit:
    """Two coexisting Fermi energies with ordering ef1 <= ef2.

    ``residual`` is the weighted RMS misfit; ``verdict`` is 'two-step' when
    the two-step residual beats the single-step one by the model selection
    margin, else 'single'.
    """

    eta1: float
    eta2: float
    ef1: float
    ef2: float
    residual: float
    constrained: bool = False
    verdict: str = "single"
    single_residual: float = np.nan

    def as_dict(self):
        return {
            "eta1": self.eta1,
            "eta2": self.eta2,
            "fermi_energy_1": self.ef1,
            "fermi_energy_2": self.ef2,
            "residual": self.residual,
            "constrained": self.constrained,
            "verdict": self.verdict,
            "single_residual": self.single_residual,
        }


def _validate_table(table: EnergyMarginal, min_shells):
    if len(table) < min_shells:
        raise ValueError(f"need at least {min_shells} energy shells, got {len(table)}")
    if np.any(table.shell_volume <= 0):
        raise ValueError("shell volumes must be positive")
    if np.any(table.f_mean < 0):
        raise ValueError("f values must be nonnegative")
    if not np.any(table.f_mean > 0):
        raise DegenerateFitError("all-zero f(eps) table admits no step fit")


def _prefixes(table):
    w = table.shell_volume
    y = table.f_mean
    zero = np.zeros(1)
    W = np.concatenate([zero, np.cumsum(w)])
    A = np.concatenate([zero, np.cumsum(w * y)])
    Q = np.concatenate([zero, np.cumsum(w * y * y)])
    return W, A, Q


def fit_single_step(table: EnergyMarginal, eta0=None):
    """Best single step by scanning every shell edge as the Fermi energy."""
    _validate_table(table, 3)
    W, A, Q = _prefixes(table)
    S = len(table)
    cuts = table.cut_values()
    k = np.arange(1, S + 1)
    sse = np.maximum(Q[k] - A[k] ** 2 / W[k], 0.0) + (Q[S] - Q[k])
    best = int(np.argmin(sse))  # first minimum: smallest Fermi energy on ties
    eta = A[k[best]] / W[k[best]]
    return StepFit(float(eta), float(cuts[best]), float(np.sqrt(max(sse[best], 0.0) / W[S])))


def fit_two_step(table: EnergyMarginal, eta0=None, constrain=False, model_selection_margin=0.5):
    """Exhaustive scan over ordered Fermi-energy pairs with exact amplitudes.

    With ``constrain`` the amplitudes are tied by eta1 + eta2 = eta0 (the
    unique fine-grained density). Negative closed-form amplitudes are
    clipped to zero and the candidate refitted. Ties in the objective are
    broken toward the smallest ef2 - ef1, then the smallest ef1.
    """
    _validate_table(table, 5)
    if constrain:
        if eta0 is None or not eta0 > 0:
            raise ConstraintInfeasibleError("constrained fit needs a positive eta0")
    W, A, Q = _prefixes(table)
    S = len(table)
    cuts = table.cut_values()
    k = np.arange(1, S + 1)
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    valid = K2 >= K1

    WA, AA, QA = W[K1], A[K1], Q[K1]
    WB, AB, QB = W[K2] - W[K1], A[K2] - A[K1], Q[K2] - Q[K1]
    tail = Q[S] - Q[K2]
    a = AA / WA
    with np.errstate(invalid="ignore", divide="ignore"):
        b = np.where(WB > 0, AB / np.where(WB > 0, WB, 1.0), 0.0)

    if constrain:
        eta2 = b
        eta1 = eta0 - eta2
        clipped = eta1 < 0
        eta1 = np.where(clipped, 0.0, eta1)
        eta2 = np.where(clipped, eta0, eta2)
        # the constraint fixes the model to eta0 on region A regardless of the split
        sse = (
            QA - 2.0 * eta0 * AA + eta0**2 * WA
            + QB - 2.0 * eta2 * AB + eta2**2 * WB
            + tail
        )
    else:
        eta2 = b
        eta1 = a - b
        sse = (
            np.maximum(QA - AA**2 / WA, 0.0)
            + np.where(WB > 0, np.maximum(QB - AB**2 / np.where(WB > 0, WB, 1.0), 0.0), 0.0)
            + tail
        )
        # Negative low-energy amplitude: refit as a single step over A u B.
        neg = eta1 < 0
        if np.any(neg):
            etaC = A[K2] / W[K2]
            sseC = np.maximum(Q[K2] - A[K2] ** 2 / W[K2], 0.0) + tail
            eta1 = np.where(neg, 0.0, eta1)
            eta2 = np.where(neg, etaC, eta2)
            sse = np.where(neg, sseC, sse)

    sse = np.where(valid, np.maximum(sse, 0.0), np.inf)
    ef1 = cuts[K1 - 1]
    ef2 = cuts[K2 - 1]

    best_sse = sse.min()
    tied = np.flatnonzero((sse == best_sse).ravel())
    sep = (ef2 - ef1).ravel()[tied]
    lo = ef1.ravel()[tied]
    pick = tied[np.lexsort((lo, sep))[0]]
    i, j = np.unravel_index(pick, sse.shape)

    residual = float(np.sqrt(max(sse[i, j], 0.0) / W[S]))
    single = fit_single_step(table)
    verdict = "two-step" if residual < model_selection_margin * single.residual else "single"
    return TwoStepFit(
        eta1=float(eta1[i, j]),
        eta2=float(eta2[i, j]),
        ef1=float(ef1[i, j]),
        ef2=float(ef2[i, j]),
        residual=residual,
        constrained=bool(constrain),
        verdict=verdict,
        single_residual=single.residual,
    )


def two_step_value(fit: TwoStepFit, eps):
    """Model f(eps) of a fitted (or hand-built) two-step distribution."""
    eps = np.asarray(eps, dtype=float)
    out = fit.eta1 * (eps <= fit.ef1) + fit.eta2 * (eps <= fit.ef2)
    return out if out.ndim else float(out)


def sample_from_qss(fit: TwoStepFit, mf, n, seed=0, mass=1.0, max_batches=512):
    """Rejection-sample (Q, P) with phase-space density f(eps(Q, P)).

    Positions are drawn uniformly over the mean-field domain and momenta
    uniformly in the ball |P| <= sqrt(2M(ef2 - min Phi_MF)); candidates are
    kept with probability f(eps)/(eta1 + eta2).
    """
    m = validate_mass(mass)
    if fit.eta1 < 0 or fit.eta2 < 0 or fit.eta1 + fit.eta2 <= 0:
        raise ValueError("step amplitudes must be nonnegative with a positive sum")
    if fit.ef1 > fit.ef2:
        raise ValueError("fit must satisfy ef1 <= ef2")
    dim = mf.dim
    if n == 0:
        return CanonicalState(np.zeros((0, dim)), np.zeros((0, dim)), 0.0)
    depth = fit.ef2 - mf.minimum()
    if depth <= 0:
        raise ZeroAcceptanceError("no phase-space volume below the upper Fermi energy")
    p_max = np.sqrt(2.0 * m * depth)
    lo, hi = mf.domain()
    fmax = fit.eta1 + fit.eta2
    rng = np.random.default_rng(seed)
    got_q, got_p = [], []
    remaining = n
    batch = max(4096, 2 * n)
    for _ in range(max_batches):
        q = rng.uniform(lo, hi, size=(batch, dim))
        p = rng.uniform(-p_max, p_max, size=(batch, dim))
        eps = np.sum(p * p, axis=1) / (2.0 * m) + mf.at(q)
        target = fit.eta1 * (eps <= fit.ef1) + fit.eta2 * (eps <= fit.ef2)
        keep = rng.uniform(0.0, fmax, size=batch) < target
        if keep.any():
            got_q.append(q[keep])
            got_p.append(p[keep])
            remaining -= int(keep.sum())
        if remaining <= 0:
            break
    else:
        if not got_q:
            raise ZeroAcceptanceError("rejection sampler accepted nothing; acceptance region is empty")
        raise ZeroAcceptanceError(
            f"sampler stalled with {n - remaining}/{n} accepted after {max_batches} batches"
        )
    Q = np.concatenate(got_q)[:n]
    P = np.concatenate(got_p)[:n]
    return CanonicalState(Q, P, 0.0)


def fit_fermi_profile(table: EnergyMarginal, eta0=None):
    """Optional finite-temperature diagnostic: f = eta / (1 + exp((eps-mu)/T)).

    Returns a dict with the fitted parameters and weighted RMS residual, or
    None when the optimizer fails; this never gates any verdict.
    """
    _validate_table(table, 4)
    from scipy.optimize import curve_fit

    eps, y, w = table.eps, table.f_mean, table.shell_volume

    def profile(e, eta, mu, temp):
        return eta / (1.0 + np.exp(np.clip((e - mu) / max(temp, 1e-12), -500, 500)))

    eta_guess = float(y.max()) if y.max() > 0 else 1.0
    mu_guess = float(eps[np.argmin(np.abs(y - 0.5 * eta_guess))])
    span = float(eps[-1] - eps[0])
    try:
        popt, _ = curve_fit(
            profile,
            eps,
            y,
            p0=[eta_guess, mu_guess, 0.1 * span],
            sigma=1.0 / np.sqrt(w),
            bounds=([0.0, eps[0] - span, 1e-9], [np.inf, eps[-1] + span, 10 * span]),
            maxfev=5000,
        )
    except (RuntimeError, ValueError):
        return None
    resid = float(np.sqrt(np.sum(w * (y - profile(eps, *popt)) ** 2) / np.sum(w)))
    return {"eta": float(popt[0]), "mu": float(popt[1]), "temperature": float(popt[2]), "residual": resid}
