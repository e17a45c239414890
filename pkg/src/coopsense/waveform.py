"""Lowpass-equivalent transmit pulse and its analytic derivative."""

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class PulseSpec:
    """Transmit pulse parameters and the sampling grid.

    Attributes
    ----------
    T : float
        Pulse width parameter in seconds.
    Ts : float
        Sampling period in seconds.
    Tc : float
        Effective (main-lobe) pulse duration in seconds.
    Td : float
        Length of the observation window forwarded to the fusion center.
    E : float
        Transmit energy.
    """

    T: float = 2e-8
    Ts: float = 1e-8
    Tc: float = 6e-8
    Td: float = 8e-8
    E: float = 1.0

    def __post_init__(self):
        if not (self.T > 0 and self.Ts > 0 and self.Tc > 0):
            raise ValueError("T, Ts and Tc must be positive")
        if self.Td < self.Tc:
            raise ValueError("Td must be at least Tc")
        if self.E <= 0:
            raise ValueError("E must be positive")
        ratio = self.Td / self.Ts
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ValueError(f"Td/Ts must be a positive integer, got {ratio}")

    @property
    def window_ratio(self) -> int:
        return int(round(self.Td / self.Ts))

    @property
    def window_size(self) -> int:
        """Number of samples forwarded per receiver (Td/Ts + 2)."""
        return self.window_ratio + 2

    def with_energy(self, E: float) -> "PulseSpec":
        return replace(self, E=float(E))


def sample_pulse(spec: PulseSpec, t):
    """Gaussian pulse ``(2/T^2)^(1/4) exp(-pi t^2 / T^2)``, unit energy."""
    t = np.asarray(t, dtype=float)
    return (2.0 / spec.T**2) ** 0.25 * np.exp(-np.pi * t**2 / spec.T**2)


def pulse_derivative(spec: PulseSpec, t):
    """Time derivative of :func:`sample_pulse`."""
    t = np.asarray(t, dtype=float)
    return -(2.0 * np.pi * t / spec.T**2) * sample_pulse(spec, t)
