"""Per-receiver maximum-likelihood delay / coefficient estimation and delay CRBs."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .waveform import PulseSpec, pulse_derivative, sample_pulse

GRID_SUBDIVISION = 20
REFINE_TOL = 1e-13
_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class LocalEstimate:
    tau_hat: float
    alpha_hat: complex
    crb_tau_hat: float
    crb_tau: Optional[float] = None


def crb_tau(alpha, sigma2: float, spec: PulseSpec, tau: float, k) -> float:
    """Delay CRB from samples on grid ``k`` for a pulse centred at ``tau``."""
    a2 = abs(alpha) ** 2
    if a2 <= 0:
        raise ValueError("CRB undefined for a zero reflecting coefficient")
    ds = pulse_derivative(spec, np.asarray(k) * spec.Ts - tau)
    return float(1.0 / ((2.0 * spec.E / sigma2) * a2 * np.sum(ds**2)))


def golden_section_max(f, a: float, b: float, tol: float):
    """Maximise a unimodal ``f`` on ``[a, b]`` to interval width ``tol``."""
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def _profile(samples, k, spec, tau):
    s = sample_pulse(spec, k * spec.Ts - tau)
    energy = np.dot(s, s)
    corr = np.dot(samples, s)
    return corr, energy


def estimate_delay_coeff(
    samples,
    k,
    spec: PulseSpec,
    sigma2: float,
    tau_range=None,
) -> LocalEstimate:
    """Joint ML estimate of delay and complex coefficient from coarse-window samples.

    For a fixed delay the coefficient is the least-squares fit, so the delay
    maximises ``|sum r s(kTs - tau)|^2 / sum s(kTs - tau)^2``. That profile is
    scanned on a ``Ts/20`` grid and the best grid point refined by golden
    section.

    Parameters
    ----------
    samples : complex array
        Received samples on the index grid ``k``.
    k : int array
        Contiguous sample indices (the coarse window).
    tau_range : (float, float), optional
        Delay search interval. Defaults to delays whose pulse lies inside the
        window with a ``3T`` margin.
    """
    samples = np.asarray(samples, dtype=complex)
    k = np.asarray(k)
    Ts = spec.Ts
    if tau_range is None:
        tau_range = (k[0] * Ts + 3 * spec.T, k[-1] * Ts - 3 * spec.T)
    lo, hi = tau_range
    if hi < lo:
        raise ValueError("empty delay search interval")

    half = int(np.ceil(5 * spec.T / Ts))
    padded = np.concatenate([np.zeros(half, complex), samples, np.zeros(half + 1, complex)])
    lags = np.arange(-half, half + 1) * Ts
    best_val, best_tau = -np.inf, None
    for j in range(GRID_SUBDIVISION):
        frac = j * Ts / GRID_SUBDIVISION
        h = sample_pulse(spec, lags - frac)
        energy = np.dot(h, h)
        if energy <= 0:
            raise ValueError("template has zero energy")
        # corr[m] pairs sample index m with a pulse centred at k[0] + m + frac
        corr = np.correlate(padded, h, mode="valid")[: len(samples)]
        taus = (k[0] + np.arange(len(samples))) * Ts + frac
        mask = (taus >= lo) & (taus <= hi)
        if not np.any(mask):
            continue
        vals = np.abs(corr[mask]) ** 2 / energy
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best_tau = vals[i], taus[mask][i]
    if best_tau is None:
        raise ValueError("delay search interval contains no grid point")

    def objective(tau):
        corr, energy = _profile(samples, k, spec, tau)
        return abs(corr) ** 2 / energy

    step = Ts / GRID_SUBDIVISION
    a, b = max(lo, best_tau - step), min(hi, best_tau + step)
    tau_hat = golden_section_max(objective, a, b, REFINE_TOL) if b > a else best_tau
    corr, energy = _profile(samples, k, spec, tau_hat)
    if energy <= 0:
        raise ValueError("template has zero energy")
    alpha_hat = corr / (np.sqrt(spec.E) * energy)
    crb_hat = crb_tau(alpha_hat, sigma2, spec, tau_hat, k)
    return LocalEstimate(tau_hat=float(tau_hat), alpha_hat=complex(alpha_hat), crb_tau_hat=crb_hat)
