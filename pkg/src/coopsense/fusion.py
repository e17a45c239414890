"""Fusion-center reconstruction and ML target localization."""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .geometry import Scene, bistatic_delays
from .local_estimation import crb_tau
from .quantization import KLT, Codec, build_codec
from .signalgen import to_sample_vector
from .waveform import PulseSpec, sample_pulse

ADVANCED = "advanced"
BASELINE = "baseline"

GRID_POINTS = 50
N_SEEDS = 5
POSITION_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class ReceiverPayload:
    """What one receiver sends over its backhaul.

    ``capacity=None`` is the unquantized mode, in which ``raw`` holds the
    window sample vector and ``index_bits`` is empty.
    """

    tau_hat: float
    alpha_hat: complex
    index_bits: np.ndarray
    capacity: Optional[int] = None
    raw: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.capacity is not None and len(self.index_bits) != self.capacity:
            raise ValueError("payload bit length does not match capacity")


@dataclass(frozen=True, eq=False)
class FusionContext:
    """Quantities known to every node before any message is sent."""

    scene: Scene
    spec: PulseSpec
    sigma2: np.ndarray
    k0: Sequence[np.ndarray]
    quantizer: str = KLT


@dataclass(frozen=True, eq=False)
class Reconstruction:
    window: np.ndarray
    r_tilde: np.ndarray
    U: np.ndarray
    total_var: np.ndarray  # sigma2/2 + eta per transformed component
    crb: float

    @property
    def covariance(self) -> np.ndarray:
        """``Q_w + Q_n``."""
        return (self.U * self.total_var) @ self.U.T


@dataclass(frozen=True)
class FusionResult:
    theta: np.ndarray
    design: str
    loglik: float
    on_boundary: bool = False
    ambiguous: bool = False


def receiver_crb(payload: ReceiverPayload, ctx: FusionContext, n: int) -> float:
    return crb_tau(payload.alpha_hat, ctx.sigma2[n], ctx.spec, payload.tau_hat, ctx.k0[n])


def shared_codec(payload: ReceiverPayload, ctx: FusionContext, n: int, crb=None) -> Codec:
    if crb is None:
        crb = receiver_crb(payload, ctx, n)
    return build_codec(payload.tau_hat, payload.alpha_hat, crb, payload.capacity, ctx.spec,
                       ctx.sigma2[n], ctx.quantizer)


def make_payload(samples, k0, tau_hat, alpha_hat, capacity, spec, sigma2, quantizer=KLT, crb=None) -> ReceiverPayload:
    """Receiver side: select the window around ``tau_hat`` and quantize it."""
    if crb is None:
        crb = crb_tau(alpha_hat, sigma2, spec, tau_hat, k0)
    codec = build_codec(tau_hat, alpha_hat, crb, capacity, spec, sigma2, quantizer)
    pos = codec.window - k0[0]
    if pos[0] < 0 or pos[-1] >= len(k0):
        raise ValueError("observation window falls outside the coarse capture")
    vector = to_sample_vector(np.asarray(samples)[pos])
    if capacity is None:
        return ReceiverPayload(tau_hat, complex(alpha_hat), np.zeros(0, np.uint8), None, vector)
    return ReceiverPayload(tau_hat, complex(alpha_hat), codec.encode(vector), int(capacity))


def reconstruct_samples(payload: ReceiverPayload, ctx: FusionContext, n: int) -> Reconstruction:
    crb = receiver_crb(payload, ctx, n)
    codec = shared_codec(payload, ctx, n, crb)
    if codec.unquantized:
        if payload.raw is None:
            raise ValueError("unquantized payload carries no samples")
        r = np.asarray(payload.raw, dtype=float)
    else:
        r = codec.decode(payload.index_bits)
    total = 0.5 * ctx.sigma2[n] + codec.noise_var
    return Reconstruction(window=codec.window, r_tilde=r, U=codec.basis.U, total_var=total, crb=crb)


class _Objective:
    """Vectorised log-likelihood over candidate positions (constants dropped)."""

    def __init__(self, design, payloads, ctx: FusionContext, recons=None):
        self.scene = ctx.scene
        self.spec = ctx.spec
        self.tau_hat = np.array([p.tau_hat for p in payloads])
        if recons is not None:
            crbs = np.array([rc.crb for rc in recons])
        else:
            crbs = np.array([receiver_crb(p, ctx, n) for n, p in enumerate(payloads)])
        self.half_weight = 0.5 / crbs
        self.advanced = design == ADVANCED
        if self.advanced:
            if recons is None:
                recons = [reconstruct_samples(p, ctx, n) for n, p in enumerate(payloads)]
            self.times = np.stack([rc.window * ctx.spec.Ts for rc in recons])
            amp = np.sqrt(ctx.spec.E) * np.array([p.alpha_hat for p in payloads])
            self.amp_re, self.amp_im = amp.real, amp.imag
            self.r = np.stack([rc.r_tilde for rc in recons])
            self.U = np.stack([rc.U for rc in recons])
            self.inv_var = 1.0 / np.stack([rc.total_var for rc in recons])
        elif design != BASELINE:
            raise ValueError(f"unknown design {design!r}")

    def delay_term(self, tau):
        return -np.sum(self.half_weight * (self.tau_hat - tau) ** 2, axis=-1)

    def sample_term(self, tau):
        s = sample_pulse(self.spec, self.times - tau[..., None])
        model = np.concatenate([self.amp_re[:, None] * s, self.amp_im[:, None] * s], axis=-1)
        proj = np.einsum("...ni,nij->...nj", self.r - model, self.U)
        return -0.5 * np.sum(proj**2 * self.inv_var, axis=(-2, -1))

    def __call__(self, theta):
        tau = bistatic_delays(self.scene, theta)
        val = self.delay_term(tau)
        if self.advanced:
            val = val + self.sample_term(tau)
        return val


def loglik_advanced(theta, payloads, ctx: FusionContext, recons=None):
    """Reconstructed-sample quadratic form plus the delay term."""
    return _Objective(ADVANCED, payloads, ctx, recons)(np.asarray(theta, float))


def loglik_baseline(theta, payloads, ctx: FusionContext):
    """Delay term only: ``-sum (tau_hat - tau(theta))^2 / (2 CRB)``."""
    return _Objective(BASELINE, payloads, ctx)(np.asarray(theta, float))


def estimate_location(design, payloads, ctx: FusionContext, region, recons=None,
                      grid_points: int = GRID_POINTS, n_seeds: int = N_SEEDS,
                      tol: float = POSITION_TOL) -> FusionResult:
    """Maximise the selected log-likelihood over a box ``(xmin, xmax, ymin, ymax)``.

    A ``grid_points`` grid supplies the ``n_seeds`` best starting points;
    each is polished with Nelder-Mead to ``tol`` meters and the best polished
    point wins. A zero-width side pins that coordinate, so a segment-shaped
    region gives a one-dimensional search.
    """
    lo = np.array([region[0], region[2]], dtype=float)
    hi = np.array([region[1], region[3]], dtype=float)
    free = hi > lo
    if np.any(hi < lo) or not np.any(free):
        raise ValueError("search region is empty")
    f = _Objective(design, payloads, ctx, recons)
    axes = [np.linspace(lo[i], hi[i], grid_points) if free[i] else lo[i:i + 1] for i in range(2)]
    gx, gy = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    vals = f(pts)
    order = np.argsort(-vals, kind="stable")[:n_seeds]
    step = np.array([(hi[i] - lo[i]) / (grid_points - 1) for i in range(2)])[free]
    flo, fhi = lo[free], hi[free]

    def full(p):
        x = lo.copy()
        x[free] = p
        return x

    def neg(p):
        return -float(f(full(p)))

    best_x, best_val = None, -np.inf
    for i in order:
        x0 = pts[i][free]
        dx = np.where(x0 + step <= fhi, step, -step)
        simplex = np.vstack([x0, x0 + np.diag(dx)])
        res = minimize(neg, x0, method="Nelder-Mead", bounds=list(zip(flo, fhi)),
                       options={"xatol": tol, "fatol": np.inf, "initial_simplex": simplex, "maxiter": 4000})
        if np.isfinite(res.fun) and -res.fun > best_val:
            best_x, best_val = full(np.asarray(res.x, float)), -float(res.fun)
    if best_x is None:
        raise RuntimeError("all optimizer seeds diverged")
    on_edge = bool(np.any((np.abs(best_x - lo) <= tol) & free) or np.any((np.abs(best_x - hi) <= tol) & free))
    return FusionResult(theta=best_x, design=design, loglik=best_val, on_boundary=on_edge,
                        ambiguous=len(payloads) < 3)
