import numpy as np
import pytest

from coopsense.local_estimation import REFINE_TOL, crb_tau, estimate_delay_coeff, golden_section_max
from coopsense.signalgen import ChannelRealization, synthesize_received
from coopsense.waveform import PulseSpec, sample_pulse

K = np.arange(0, 80)


def _noiseless(spec, alpha, tau, k=K):
    return np.sqrt(spec.E) * alpha * sample_pulse(spec, k * spec.Ts - tau)


def _poisson_derivative_energy(T, Ts, terms=20):
    # sum_k s'(k Ts)^2 through the Fourier transform of s'(t)^2
    f = np.arange(-terms, terms + 1) / Ts
    ft = (np.pi / T**2) * (1 - np.pi * f**2 * T**2) * np.exp(-np.pi * f**2 * T**2 / 2)
    return ft.sum() / Ts


def test_noiseless_exact_recovery(spec):
    alpha = 0.5 * np.exp(1j * np.pi / 4)
    tau = 40 * spec.Ts
    est = estimate_delay_coeff(_noiseless(spec, alpha, tau), K, spec, 1.0)
    assert est.tau_hat == pytest.approx(tau, abs=1e-13)
    assert abs(est.alpha_hat - alpha) < 1e-9


def test_noiseless_off_grid(spec):
    alpha = 2.0 - 0.3j
    tau = 37.371 * spec.Ts
    est = estimate_delay_coeff(_noiseless(spec, alpha, tau), K, spec, 1.0)
    assert est.tau_hat == pytest.approx(tau, abs=1e-13)
    assert abs(est.alpha_hat - alpha) < 1e-6


def test_tiny_noise_continuity(spec):
    rng = np.random.default_rng(0)
    alpha, tau = 0.5 * np.exp(1j * np.pi / 4), 40 * spec.Ts
    r = _noiseless(spec, alpha, tau) + 1e-12 * (rng.standard_normal(len(K)) + 1j * rng.standard_normal(len(K)))
    est = estimate_delay_coeff(r, K, spec, 1.0)
    assert abs(est.tau_hat - tau) <= REFINE_TOL


def test_mse_near_crb_at_20db():
    spec = PulseSpec()
    rng = np.random.default_rng(21)
    sigma2 = 1.0
    # matched-filter SNR E|alpha|^2 / (sigma2 Ts) = 100
    spec = spec.with_energy(100 * sigma2 * spec.Ts)
    errs, crbs = [], []
    for _ in range(2000):
        tau = rng.uniform(30, 50) * spec.Ts
        chan = ChannelRealization(xi=np.array([np.exp(1j * rng.uniform(0, 2 * np.pi))]), rho=np.array([1.0]),
                                  tau=np.array([tau]), sigma2=np.array([sigma2]))
        r = synthesize_received(spec, chan, 0, K, rng)
        est = estimate_delay_coeff(r, K, spec, sigma2)
        errs.append((est.tau_hat - tau) ** 2)
        crbs.append(crb_tau(chan.alpha[0], sigma2, spec, tau, K))
    ratio = np.mean(errs) / np.mean(crbs)
    assert 0.8 <= ratio <= 2.0


def test_crb_dense_grid_closed_form():
    T = 2e-8
    Ts = T / 8
    spec = PulseSpec(T=T, Ts=Ts, Tc=6e-8, Td=8e-8, E=10.0)
    k = np.arange(-400, 401)
    expected = T**2 * Ts / (2 * 10.0 * np.pi)
    assert crb_tau(1.0, 1.0, spec, 0.0, k) == pytest.approx(expected, rel=1e-9)


def test_crb_default_grid_values(spec):
    k = np.arange(-50, 51)
    spec10 = spec.with_energy(10.0)
    dense = 2e-8**2 * 1e-8 / (2 * 10 * np.pi)
    assert dense == pytest.approx(6.37e-26, rel=1e-3)
    oracle = 1.0 / (2 * 10.0 * _poisson_derivative_energy(2e-8, 1e-8))
    assert crb_tau(1.0, 1.0, spec10, 0.0, k) == pytest.approx(oracle, rel=1e-9)
    assert oracle == pytest.approx(6.654e-26, rel=1e-3)


def test_crb_energy_scaling(spec):
    a = crb_tau(0.3j, 2.0, spec, 21.3 * spec.Ts, K)
    b = crb_tau(0.3j, 2.0, spec.with_energy(2 * spec.E), 21.3 * spec.Ts, K)
    assert b == pytest.approx(a / 2, rel=1e-12)


def test_crb_shift_invariance(spec):
    a = crb_tau(1.0, 1.0, spec, 30.4 * spec.Ts, K)
    b = crb_tau(1.0, 1.0, spec, 33.4 * spec.Ts, K)
    assert b == pytest.approx(a, rel=1e-9)


def test_crb_rejects_zero_alpha(spec):
    with pytest.raises(ValueError):
        crb_tau(0.0, 1.0, spec, 0.0, K)


def test_golden_section():
    x = golden_section_max(lambda t: -(t - 0.3) ** 2, -1.0, 2.0, 1e-10)
    assert x == pytest.approx(0.3, abs=1e-9)


def test_empty_interval(spec):
    with pytest.raises(ValueError):
        estimate_delay_coeff(np.zeros(len(K)), K, spec, 1.0, tau_range=(5e-7, 4e-7))


def test_positive_crb_estimate(spec, rng):
    r = rng.standard_normal(len(K)) + 1j * rng.standard_normal(len(K))
    assert estimate_delay_coeff(r, K, spec, 1.0).crb_tau_hat > 0
