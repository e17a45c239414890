"""Received-signal synthesis and sample-index windows."""

from dataclasses import dataclass

import numpy as np

from .geometry import (
    CIRCULAR,
    Scene,
    TopologySpec,
    amplitude_coefficient,
    bistatic_delays,
    target_support_bounds,
)
from .waveform import PulseSpec, sample_pulse


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """Per-receiver channel state for one trial (arrays of length N)."""

    xi: np.ndarray
    rho: np.ndarray
    tau: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.sigma2) <= 0):
            raise ValueError("noise variance must be positive")

    @property
    def alpha(self) -> np.ndarray:
        return self.rho * self.xi

    @property
    def n_receivers(self) -> int:
        return len(self.tau)


@dataclass(frozen=True, eq=False)
class ObservationWindow:
    """Sample indices forwarded to the fusion center, plus the coarse-capture size."""

    indices: np.ndarray
    k0: int

    def __len__(self):
        return len(self.indices)


def draw_reflection(rng: np.random.Generator, size=None):
    """Unit-modulus reflection coefficient with uniform phase on [0, 2pi)."""
    phase = rng.uniform(0.0, 2.0 * np.pi, size=size)
    return np.exp(1j * phase)


def make_channel(scene: Scene, target, rng: np.random.Generator, sigma2=1.0) -> ChannelRealization:
    n = scene.n_receivers
    rho = np.array([amplitude_coefficient(scene, i, target) for i in range(n)])
    xi = draw_reflection(rng, size=n)
    tau = bistatic_delays(scene, target)
    return ChannelRealization(xi=xi, rho=rho, tau=tau, sigma2=np.broadcast_to(np.asarray(sigma2, float), (n,)).copy())


def received_energy_ratio(spec: PulseSpec, alpha, sigma2):
    """Linear received SNR ``E |alpha|^2 / (sigma2 Ts)``.

    This is the pulse energy over the noise level after summing the unit-energy
    pulse on the sampling grid (``Ts * sum s(kTs)^2 = 1``).
    """
    return spec.E * np.abs(np.asarray(alpha)) ** 2 / (np.asarray(sigma2, float) * spec.Ts)


def receiver_snr_db(spec: PulseSpec, alpha, sigma2):
    return 10.0 * np.log10(received_energy_ratio(spec, alpha, sigma2))


def energy_for_rsnr(rsnr_db: float, spec: PulseSpec, alpha, sigma2) -> float:
    """Transmit energy that makes the aggregate received SNR equal ``rsnr_db``."""
    unit = np.sum(received_energy_ratio(spec.with_energy(1.0), alpha, sigma2))
    if unit <= 0:
        raise ValueError("all receivers have zero gain")
    return float(10.0 ** (rsnr_db / 10.0) / unit)


def synthesize_received(
    spec: PulseSpec,
    chan: ChannelRealization,
    n: int,
    k,
    rng: np.random.Generator,
) -> np.ndarray:
    """Noisy complex samples ``sqrt(E) alpha_n s(kTs - tau_n) + w_n(kTs)``."""
    k = np.asarray(k)
    if k.size == 0:
        raise ValueError("empty sample index set")
    alpha = chan.alpha[n]
    clean = np.sqrt(spec.E) * alpha * sample_pulse(spec, k * spec.Ts - chan.tau[n])
    scale = np.sqrt(chan.sigma2[n] / 2.0)
    noise = scale * (rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape))
    return clean + noise


def observation_window(tau_hat: float, spec: PulseSpec, k0: int = 0) -> ObservationWindow:
    """The ``Td/Ts + 2`` grid points nearest to ``tau_hat`` (ties to the lower index).

    Always contains every ``k`` with ``|k Ts - tau_hat| <= Td/2``.
    """
    if tau_hat < 0:
        raise ValueError("tau_hat must be nonnegative")
    size = spec.window_size
    # snap away float noise so on-grid delays resolve ties consistently
    centre = np.round(tau_hat / spec.Ts, 9)
    base = int(np.floor(centre))
    cand = np.arange(base - size, base + size + 1)
    dist = np.abs(cand - centre)
    order = np.lexsort((cand, dist))
    return ObservationWindow(indices=np.sort(cand[order[:size]]), k0=k0)


def delay_support(scene: Scene, topology: TopologySpec, n: int, resolution: int = 721):
    """Smallest and largest bistatic delay to receiver ``n`` over the target support."""
    xmin, xmax, ymin, ymax = target_support_bounds(topology)
    if topology.kind == CIRCULAR:
        r = topology.radius * np.sqrt(np.linspace(0.0, 1.0, resolution // 3 + 1))
        phi = np.linspace(0.0, 2.0 * np.pi, resolution, endpoint=False)
        rr, pp = np.meshgrid(r, phi)
        cx, cy = (xmin + xmax) / 2.0, (ymin + ymax) / 2.0
        pts = np.stack([cx + rr * np.cos(pp), cy + rr * np.sin(pp)], axis=-1).reshape(-1, 2)
    else:
        xs = np.linspace(xmin, xmax, 10 * resolution)
        pts = np.column_stack([xs, np.full_like(xs, ymin)])
    # direct tx-rx distance is a lower bound, exact when that path crosses the support
    tau = bistatic_delays(scene, pts)[:, n]
    lo = min(tau.min(), np.linalg.norm(scene.tx - scene.rx[n]) / scene.c)
    return float(lo), float(tau.max())


def coarse_window(scene: Scene, topology: TopologySpec, spec: PulseSpec, n: int):
    """Coarse capture indices K0 for receiver ``n`` and the delay search interval.

    The capture spans the delay support plus a ``3T`` guard on both sides.
    """
    lo, hi = delay_support(scene, topology, n)
    guard = 3.0 * spec.T
    k_lo = int(np.floor((lo - guard) / spec.Ts))
    k_hi = int(np.ceil((hi + guard) / spec.Ts))
    return np.arange(k_lo, k_hi + 1), (lo, hi)


def to_sample_vector(samples) -> np.ndarray:
    """Stack complex samples as ``[real parts, imaginary parts]``."""
    samples = np.asarray(samples)
    return np.concatenate([samples.real, samples.imag])
