"""Node placement, bistatic delays, path loss and SNR bookkeeping."""

from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

CIRCULAR = "circular"
LINEAR = "linear"


@dataclass(frozen=True, eq=False)
class Scene:
    """Transmitter and receiver positions (meters) plus propagation constants."""

    tx: np.ndarray
    rx: np.ndarray
    c: float = SPEED_OF_LIGHT
    fc: float = 3.55

    def __post_init__(self):
        tx = np.asarray(self.tx, dtype=float).reshape(2)
        rx = np.atleast_2d(np.asarray(self.rx, dtype=float))
        if rx.ndim != 2 or rx.shape[1] != 2 or rx.shape[0] < 1:
            raise ValueError("rx must be an (N, 2) array with N >= 1")
        if not (np.all(np.isfinite(tx)) and np.all(np.isfinite(rx))):
            raise ValueError("positions must be finite")
        if self.c <= 0:
            raise ValueError("propagation speed must be positive")
        object.__setattr__(self, "tx", tx)
        object.__setattr__(self, "rx", rx)

    @property
    def n_receivers(self) -> int:
        return self.rx.shape[0]


@dataclass(frozen=True)
class TopologySpec:
    """Receiver layout.

    ``circular``: transmitter at the origin, receivers equally spaced in angle
    on a circle of ``radius``; targets uniform over the disk.

    ``linear``: receivers on the x axis with uniform ``spacing`` centred on the
    origin, transmitter at ``(0, standoff)``, targets uniform on the segment
    ``y = target_offset`` spanning the receiver line.
    """

    kind: str = CIRCULAR
    n_receivers: int = 6
    radius: float = 500.0
    spacing: float = 100.0
    standoff: float = 500.0
    target_offset: float = 300.0

    def __post_init__(self):
        if self.kind not in (CIRCULAR, LINEAR):
            raise ValueError(f"unknown topology kind {self.kind!r}")
        if self.n_receivers < 1:
            raise ValueError("n_receivers must be >= 1")
        if self.radius <= 0 or self.spacing <= 0:
            raise ValueError("radius and spacing must be positive")


def build_scene(topology: TopologySpec, fc: float = 3.55, c: float = SPEED_OF_LIGHT) -> Scene:
    n = topology.n_receivers
    if topology.kind == CIRCULAR:
        angles = 2.0 * np.pi * np.arange(n) / n
        rx = topology.radius * np.column_stack([np.cos(angles), np.sin(angles)])
        tx = np.zeros(2)
    else:
        xs = (np.arange(n) - (n - 1) / 2.0) * topology.spacing
        rx = np.column_stack([xs, np.zeros(n)])
        tx = np.array([0.0, topology.standoff])
    return Scene(tx=tx, rx=rx, c=c, fc=fc)


def _linear_segment(topology: TopologySpec):
    half = max((topology.n_receivers - 1) / 2.0 * topology.spacing, topology.spacing / 2.0)
    return -half, half


def target_support_bounds(topology: TopologySpec):
    """Axis-aligned bounding box ``(xmin, xmax, ymin, ymax)`` of the target support."""
    if topology.kind == CIRCULAR:
        r = topology.radius
        return -r, r, -r, r
    lo, hi = _linear_segment(topology)
    y = topology.target_offset
    return lo, hi, y, y


def search_region(topology: TopologySpec, inflate: float = 0.1):
    """Target support box scaled by ``1 + inflate`` about its centre.

    A zero-width side stays zero-width: the linear support is a segment, so
    the search runs along that line.
    """
    xmin, xmax, ymin, ymax = target_support_bounds(topology)
    cx, cy = (xmin + xmax) / 2.0, (ymin + ymax) / 2.0
    wx = (xmax - xmin) * (1.0 + inflate)
    wy = (ymax - ymin) * (1.0 + inflate)
    return cx - wx / 2.0, cx + wx / 2.0, cy - wy / 2.0, cy + wy / 2.0


def sample_target(topology: TopologySpec, rng: np.random.Generator) -> np.ndarray:
    """Draw a target position uniformly over the topology's support."""
    if topology.kind == CIRCULAR:
        r = topology.radius * np.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2.0 * np.pi)
        return np.array([r * np.cos(phi), r * np.sin(phi)])
    lo, hi = _linear_segment(topology)
    return np.array([rng.uniform(lo, hi), topology.target_offset])


def bistatic_delay(scene: Scene, n: int, target) -> float:
    """Propagation time transmitter -> target -> receiver ``n``."""
    if not 0 <= n < scene.n_receivers:
        raise IndexError(f"receiver index {n} out of range")
    target = np.asarray(target, dtype=float)
    return float(
        (np.linalg.norm(scene.tx - target) + np.linalg.norm(scene.rx[n] - target)) / scene.c
    )


def bistatic_delays(scene: Scene, targets) -> np.ndarray:
    """Vectorised delays: ``targets`` of shape (..., 2) -> (..., N)."""
    targets = np.asarray(targets, dtype=float)
    d_tx = np.linalg.norm(targets - scene.tx, axis=-1)
    d_rx = np.linalg.norm(targets[..., None, :] - scene.rx, axis=-1)
    return (d_tx[..., None] + d_rx) / scene.c


def pathloss_db(d_km, fc: float):
    """Microcell LoS path loss, ``d_km`` in kilometres and ``fc`` in GHz."""
    d_km = np.asarray(d_km, dtype=float)
    if np.any(d_km <= 0):
        raise ValueError("distance must be positive")
    out = 32.4 + 20.0 * np.log10(d_km) + 20.0 * np.log10(fc)
    return float(out) if out.ndim == 0 else out


def amplitude_coefficient(scene: Scene, n: int, target) -> float:
    """Amplitude path-loss coefficient over both propagation legs."""
    if not 0 <= n < scene.n_receivers:
        raise IndexError(f"receiver index {n} out of range")
    target = np.asarray(target, dtype=float)
    d1 = np.linalg.norm(scene.tx - target) / 1e3
    d2 = np.linalg.norm(scene.rx[n] - target) / 1e3
    if d1 <= 0 or d2 <= 0:
        raise ValueError("target coincides with a node (zero-length leg)")
    loss = pathloss_db(d1, scene.fc) + pathloss_db(d2, scene.fc)
    return 10.0 ** (-loss / 20.0)


def rsnr(snr_db) -> float:
    """Aggregate received SNR in dB from per-receiver SNRs in dB."""
    snr_db = np.asarray(snr_db, dtype=float)
    if snr_db.size == 0:
        raise ValueError("need at least one receiver SNR")
    return float(10.0 * np.log10(np.sum(10.0 ** (snr_db / 10.0))))
