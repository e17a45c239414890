"""Backhaul codec: Gaussian surrogate, KLT, scalar codebooks and bit allocation.

Receiver and fusion center run the same deterministic construction
(:func:`build_codec`) from the shared quantities (delay / coefficient
estimates, budget, noise level, pulse and window), so codebooks never travel
over the backhaul; only level indices do.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from .signalgen import observation_window
from .waveform import PulseSpec, pulse_derivative, sample_pulse

SENTINEL_FACTOR = 1e6
UNIFORM_SPAN = 4.0
LLOYD_MAX_ITER = 5000
LLOYD_LEVEL_TOL = 1e-12
GH_NODES = 15
# keeps 2**X codebooks tractable; never binds for the budgets studied
MAX_COMPONENT_BITS = 16

KLT = "klt"
UNIFORM = "uniform"

_SQRT_2PI = np.sqrt(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Gaussian surrogate and KLT


@dataclass(frozen=True, eq=False)
class GaussianSurrogate:
    mean: np.ndarray
    covariance: np.ndarray
    q: np.ndarray
    alpha_parts: tuple
    scale: float  # E * CRB, weight of the rank-one term
    sigma2: float


@dataclass(frozen=True, eq=False)
class KLTBasis:
    U: np.ndarray
    gamma: np.ndarray

    def forward(self, v):
        return self.U.T @ v

    def inverse(self, c):
        return self.U @ c


def surrogate_moments(tau_hat, alpha_hat, crb, window, spec: PulseSpec, sigma2) -> GaussianSurrogate:
    """Mean and covariance of the first-order expansion of the window samples about ``tau_hat``."""
    if not crb >= 0:
        raise ValueError("CRB must be nonnegative")
    k = np.asarray(window)
    t = k * spec.Ts - tau_hat
    s = sample_pulse(spec, t)
    ds = pulse_derivative(spec, t)
    ar, ai = float(np.real(alpha_hat)), float(np.imag(alpha_hat))
    mean = np.sqrt(spec.E) * np.concatenate([ar * s, ai * s])
    q = np.concatenate([ar * ds, ai * ds])
    scale = spec.E * crb
    cov = scale * np.outer(q, q) + 0.5 * sigma2 * np.eye(2 * len(k))
    return GaussianSurrogate(mean=mean, covariance=cov, q=q, alpha_parts=(ar, ai), scale=scale, sigma2=float(sigma2))


def klt(surrogate) -> KLTBasis:
    """Eigenbasis of the surrogate covariance, eigenvalues in descending order."""
    cov = surrogate.covariance if isinstance(surrogate, GaussianSurrogate) else np.asarray(surrogate)
    if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14 * np.max(np.abs(cov))):
        raise ValueError("covariance must be symmetric")
    w, v = np.linalg.eigh(cov)
    order = np.argsort(-w, kind="stable")
    U = v[:, order]
    # fix the sign so receiver and fusion center agree on the same basis
    pivots = U[np.argmax(np.abs(U), axis=0), np.arange(U.shape[1])]
    U = U * np.where(pivots < 0, -1.0, 1.0)
    return KLTBasis(U=U, gamma=w[order])


# ---------------------------------------------------------------------------
# Scalar codebooks


@dataclass(frozen=True, eq=False)
class ScalarCodebook:
    levels: np.ndarray
    boundaries: np.ndarray
    mean: float
    variance: float

    @property
    def bits(self) -> int:
        return int(round(np.log2(len(self.levels))))


def _norm_pdf(x):
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def _region_moments(lo, hi):
    """Mass, first and second moment of N(0,1) on each interval ``[lo, hi]``."""
    mass = np.where(lo > 0, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))
    plo, phi = _norm_pdf(lo), _norm_pdf(hi)
    first = plo - phi
    with np.errstate(invalid="ignore"):
        tlo = np.where(np.isfinite(lo), lo * plo, 0.0)
        thi = np.where(np.isfinite(hi), hi * phi, 0.0)
    second = mass + tlo - thi
    return mass, first, second


def _midpoints(levels):
    return 0.5 * (levels[1:] + levels[:-1])


def _distortion(levels):
    edges = np.concatenate([[-np.inf], _midpoints(levels), [np.inf]])
    mass, first, second = _region_moments(edges[:-1], edges[1:])
    return float(np.sum(second - 2.0 * levels * first + levels**2 * mass))


@lru_cache(maxsize=None)
def _standard_lloyd(bits: int):
    n = 2**bits
    # cells from the high-resolution point density (proportional to pdf**(1/3),
    # i.e. quantiles of N(0, 3)), each level at its cell centroid
    edges = np.concatenate([[-np.inf], np.sqrt(3.0) * _quantiles(n), [np.inf]])
    history = []
    levels = None
    for _ in range(LLOYD_MAX_ITER):
        mass, first, _ = _region_moments(edges[:-1], edges[1:])
        new = first / mass
        history.append(_distortion(new))
        edges = np.concatenate([[-np.inf], _midpoints(new), [np.inf]])
        done = levels is not None and np.max(np.abs(new - levels)) <= LLOYD_LEVEL_TOL
        levels = new
        if done:
            break
    levels.setflags(write=False)
    return levels, tuple(history)


def _quantiles(n):
    return ndtri(np.arange(1, n) / n)


def lloyd_distortion_history(bits: int):
    """Distortion of N(0,1) after each Lloyd iteration (for diagnostics)."""
    return list(_standard_lloyd(bits)[1])


def lloyd_codebook(mean: float, variance: float, bits: int) -> ScalarCodebook:
    """Lloyd codebook for ``N(mean, variance)`` with ``2**bits`` levels.

    Built once per resolution for N(0,1) and mapped affinely.
    """
    if bits < 1:
        raise ValueError("need at least one bit")
    if variance <= 0:
        raise ValueError("variance must be positive")
    std_levels, _ = _standard_lloyd(int(bits))
    sd = np.sqrt(variance)
    levels = mean + sd * std_levels
    return ScalarCodebook(levels=levels, boundaries=_midpoints(levels), mean=float(mean), variance=float(variance))


def uniform_codebook(mean: float, variance: float, bits: int, span: float = UNIFORM_SPAN) -> ScalarCodebook:
    """``2**bits`` cell midpoints of a uniform partition of ``mean +/- span*sd``."""
    if bits < 1:
        raise ValueError("need at least one bit")
    n = 2**bits
    sd = np.sqrt(variance)
    levels = mean + span * sd * (-1.0 + (2.0 * np.arange(n) + 1.0) / n)
    return ScalarCodebook(levels=levels, boundaries=_midpoints(levels), mean=float(mean), variance=float(variance))


def codebook_distortion(codebook: ScalarCodebook) -> float:
    """Exact mean squared error of ``codebook`` under its Gaussian source."""
    sd = np.sqrt(codebook.variance)
    return codebook.variance * _distortion((codebook.levels - codebook.mean) / sd)


def quantize(value, codebook: ScalarCodebook):
    """Index of the nearest level; a value on a boundary maps to the lower index."""
    idx = np.searchsorted(codebook.boundaries, value, side="left")
    return int(idx) if np.ndim(idx) == 0 else idx


def dequantize(index, codebook: ScalarCodebook):
    index = np.asarray(index)
    if np.any(index < 0) or np.any(index >= len(codebook.levels)):
        raise IndexError("codebook index out of range")
    out = codebook.levels[index]
    return float(out) if out.ndim == 0 else out


def quant_noise_var(gamma, bits):
    """Additive-noise variance whose mutual information equals ``bits``.

    Zero bits returns a large sentinel, i.e. the component carries no information.
    """
    bits = np.asarray(bits)
    if np.any(bits < 0):
        raise ValueError("bits must be nonnegative")
    gamma = np.asarray(gamma, dtype=float)
    with np.errstate(divide="ignore"):
        eta = np.where(bits > 0, gamma / (4.0 ** np.maximum(bits, 1) - 1.0), SENTINEL_FACTOR * gamma)
    return float(eta) if eta.ndim == 0 else eta


def uniform_noise_var(variance, bits, span: float = UNIFORM_SPAN):
    """Granular noise ``step**2 / 12`` of :func:`uniform_codebook`; sentinel at zero bits."""
    bits = np.asarray(bits)
    variance = np.asarray(variance, dtype=float)
    step = 2.0 * span * np.sqrt(variance) / 2.0 ** np.maximum(bits, 1)
    eta = np.where(bits > 0, step**2 / 12.0, SENTINEL_FACTOR * variance)
    return float(eta) if eta.ndim == 0 else eta


# ---------------------------------------------------------------------------
# Quantized-data delay CRB, its expectation, and greedy allocation


def derivative_vector(tau, alpha_hat, window, spec: PulseSpec):
    """d/dtau of ``[Re, Im] sqrt(E) alpha s(kTs - tau)`` over the window."""
    k = np.asarray(window)
    ds = -pulse_derivative(spec, k * spec.Ts - tau)
    a = np.sqrt(spec.E) * alpha_hat
    return np.concatenate([a.real * ds, a.imag * ds])


def crb_prime(eta, basis: KLTBasis, tau, alpha_hat, window, spec: PulseSpec, sigma2) -> float:
    """Delay CRB from the reconstructed window with quantization noise ``U diag(eta) U^T``.

    The white-noise covariance is a multiple of the identity, so the total
    covariance is diagonal in the KLT basis.
    """
    d = derivative_vector(tau, alpha_hat, window, spec)
    proj = basis.U.T @ d
    info = np.sum(proj**2 / (0.5 * sigma2 + np.asarray(eta, dtype=float)))
    return float(1.0 / info)


def _gh_rule():
    x, w = np.polynomial.hermite.hermgauss(GH_NODES)
    return x, w / np.sqrt(np.pi)


def _gh_projections(basis, tau_hat, crb_hat, alpha_hat, window, spec):
    x, w = _gh_rule()
    taus = tau_hat + np.sqrt(2.0 * crb_hat) * x
    k = np.asarray(window)
    ds = -pulse_derivative(spec, k[None, :] * spec.Ts - taus[:, None])
    a = np.sqrt(spec.E) * alpha_hat
    d = np.concatenate([a.real * ds, a.imag * ds], axis=1)
    return (d @ basis.U) ** 2, w


def ecrb(eta, basis: KLTBasis, tau_hat, crb_hat, alpha_hat, window, spec: PulseSpec, sigma2) -> float:
    """Expected CRB over ``tau ~ N(tau_hat, crb_hat)`` by Gauss-Hermite quadrature."""
    if not crb_hat >= 0:
        raise ValueError("prior variance must be nonnegative")
    G, w = _gh_projections(basis, tau_hat, crb_hat, alpha_hat, window, spec)
    info = G @ (1.0 / (0.5 * sigma2 + np.asarray(eta, dtype=float)))
    vals = 1.0 / info
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite integrand in ECRB quadrature")
    return float(np.dot(w, vals))


@dataclass(frozen=True, eq=False)
class BitAllocation:
    bits: np.ndarray
    budget: int

    def __post_init__(self):
        if int(np.sum(self.bits)) != self.budget:
            raise ValueError("allocation does not match its budget")


def greedy_allocate(budget, basis: KLTBasis, tau_hat, crb_hat, alpha_hat, window, spec: PulseSpec, sigma2,
                    max_bits: int = MAX_COMPONENT_BITS) -> BitAllocation:
    """Add one bit at a time to the component giving the lowest ECRB (ties to lowest index)."""
    budget = int(budget)
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    gamma = basis.gamma
    m = len(gamma)
    if budget > m * max_bits:
        raise ValueError("budget exceeds the per-component bit cap")
    G, w = _gh_projections(basis, tau_hat, crb_hat, alpha_hat, window, spec)
    bits = np.zeros(m, dtype=int)
    inv = 1.0 / (0.5 * sigma2 + quant_noise_var(gamma, bits))
    info = G @ inv
    for _ in range(budget):
        inv_next = 1.0 / (0.5 * sigma2 + quant_noise_var(gamma, bits + 1))
        # info of each candidate: column j swaps inv[j] for inv_next[j]
        cand = info[:, None] + G * (inv_next - inv)[None, :]
        with np.errstate(divide="ignore", over="ignore"):
            scores = w @ (1.0 / cand)
        scores[bits >= max_bits] = np.inf
        j = int(np.argmin(scores))
        bits[j] += 1
        inv[j] = inv_next[j]
        info = G @ inv
    return BitAllocation(bits=bits, budget=budget)


def equal_allocate(budget, variances) -> BitAllocation:
    """Spread bits evenly; leftovers go to the largest-variance components first."""
    budget = int(budget)
    m = len(variances)
    bits = np.full(m, budget // m, dtype=int)
    order = np.lexsort((np.arange(m), -np.asarray(variances)))
    bits[order[: budget % m]] += 1
    return BitAllocation(bits=bits, budget=budget)


# ---------------------------------------------------------------------------
# Bit packing


def pack_indices(indices, bits) -> np.ndarray:
    """Concatenate each index as ``bits[j]`` binary digits, MSB first, ascending ``j``."""
    out = []
    for idx, nb in zip(indices, bits):
        nb = int(nb)
        if nb == 0:
            continue
        idx = int(idx)
        if not 0 <= idx < 2**nb:
            raise ValueError("index does not fit its bit width")
        out.extend((idx >> (nb - 1 - b)) & 1 for b in range(nb))
    return np.array(out, dtype=np.uint8)


def unpack_indices(stream, bits) -> np.ndarray:
    stream = np.asarray(stream, dtype=np.uint8)
    if len(stream) != int(np.sum(bits)):
        raise ValueError(f"bit stream has {len(stream)} bits, expected {int(np.sum(bits))}")
    out = np.zeros(len(bits), dtype=np.int64)
    pos = 0
    for j, nb in enumerate(bits):
        v = 0
        for b in stream[pos:pos + nb]:
            v = (v << 1) | int(b)
        out[j] = v
        pos += nb
    return out


# ---------------------------------------------------------------------------
# Codec shared by receiver and fusion center


@dataclass(frozen=True, eq=False)
class Codec:
    """Everything both ends derive from the shared context.

    ``noise_var`` is the modelled quantization-noise variance per transformed
    component (zero in the unquantized mode, ``budget=None``).
    """

    window: np.ndarray
    surrogate: GaussianSurrogate
    basis: KLTBasis
    allocation: Optional[BitAllocation]
    codebooks: list = field(repr=False)
    noise_var: np.ndarray = None
    quantizer: str = KLT

    @property
    def unquantized(self) -> bool:
        return self.allocation is None

    @property
    def prior_mean(self) -> np.ndarray:
        return self.basis.forward(self.surrogate.mean)

    def encode(self, vector) -> np.ndarray:
        """Quantize a window sample vector to its packed index stream."""
        if self.unquantized:
            raise ValueError("unquantized codec has no bit stream")
        comps = self.basis.forward(np.asarray(vector, dtype=float))
        idx = [quantize(c, cb) if cb is not None else 0 for c, cb in zip(comps, self.codebooks)]
        return pack_indices(idx, self.allocation.bits)

    def decode(self, stream) -> np.ndarray:
        """Reconstructed sample vector ``U r~_C`` from an index stream."""
        if self.unquantized:
            raise ValueError("unquantized codec has no bit stream")
        idx = unpack_indices(stream, self.allocation.bits)
        prior = self.prior_mean
        comps = np.array([
            dequantize(i, cb) if cb is not None else prior[j]
            for j, (i, cb) in enumerate(zip(idx, self.codebooks))
        ])
        return self.basis.inverse(comps)

    @property
    def quant_covariance(self) -> np.ndarray:
        U = self.basis.U
        return (U * self.noise_var) @ U.T


def build_codec(tau_hat, alpha_hat, crb_hat, budget, spec: PulseSpec, sigma2, quantizer: str = KLT) -> Codec:
    """Deterministically construct the codec for one receiver.

    ``budget=None`` (infinite capacity) gives the unquantized mode. With the
    ``uniform`` quantizer the raw window components are quantized directly
    (identity transform) with an even bit split and uniform codebooks.
    """
    window = observation_window(tau_hat, spec).indices
    sur = surrogate_moments(tau_hat, alpha_hat, crb_hat, window, spec, sigma2)
    if quantizer == KLT:
        basis = klt(sur)
    elif quantizer == UNIFORM:
        m = len(sur.mean)
        basis = KLTBasis(U=np.eye(m), gamma=np.diag(sur.covariance).copy())
    else:
        raise ValueError(f"unknown quantizer {quantizer!r}")
    m = len(basis.gamma)
    if budget is None:
        return Codec(window=window, surrogate=sur, basis=basis, allocation=None,
                     codebooks=[None] * m, noise_var=np.zeros(m), quantizer=quantizer)

    prior = basis.forward(sur.mean)
    if quantizer == KLT:
        alloc = greedy_allocate(budget, basis, tau_hat, crb_hat, alpha_hat, window, spec, sigma2)
        make, noise = lloyd_codebook, quant_noise_var(basis.gamma, alloc.bits)
    else:
        alloc = equal_allocate(budget, basis.gamma)
        make, noise = uniform_codebook, uniform_noise_var(basis.gamma, alloc.bits)
    books = [make(prior[j], basis.gamma[j], int(b)) if b > 0 else None for j, b in enumerate(alloc.bits)]
    return Codec(window=window, surrogate=sur, basis=basis, allocation=alloc,
                 codebooks=books, noise_var=np.asarray(noise, dtype=float), quantizer=quantizer)
