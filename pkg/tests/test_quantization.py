import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from coopsense.local_estimation import crb_tau
from coopsense.quantization import (
    KLT,
    UNIFORM,
    KLTBasis,
    build_codec,
    codebook_distortion,
    crb_prime,
    derivative_vector,
    dequantize,
    ecrb,
    equal_allocate,
    greedy_allocate,
    klt,
    lloyd_codebook,
    lloyd_distortion_history,
    pack_indices,
    quant_noise_var,
    quantize,
    surrogate_moments,
    uniform_codebook,
    uniform_noise_var,
    unpack_indices,
)
from coopsense.signalgen import observation_window
from coopsense.waveform import PulseSpec


def _centroid_oracle(n_levels, iters=20000):
    """Lloyd iteration with cell integrals from a dense trapezoid table."""
    x = np.linspace(-12, 12, 2_000_001)
    pdf = stats.norm.pdf(x)
    m0 = integrate.cumulative_trapezoid(pdf, x, initial=0)
    m1 = integrate.cumulative_trapezoid(x * pdf, x, initial=0)
    levels = np.linspace(-1.5, 1.5, n_levels)
    for _ in range(iters):
        edges = np.concatenate([[x[0]], (levels[1:] + levels[:-1]) / 2, [x[-1]]])
        a0, a1 = np.interp(edges, x, m0), np.interp(edges, x, m1)
        new = np.diff(a1) / np.diff(a0)
        if np.max(np.abs(new - levels)) < 1e-13:
            break
        levels = new
    return new


def _setup(spec, tau_hat=5e-6 + 3.3e-9, alpha=0.8 * np.exp(0.7j), sigma2=1.0):
    window = observation_window(tau_hat, spec).indices
    k0 = np.arange(window[0] - 30, window[-1] + 31)
    crb = crb_tau(alpha, sigma2, spec, tau_hat, k0)
    sur = surrogate_moments(tau_hat, alpha, crb, window, spec, sigma2)
    return window, crb, sur, klt(sur)


# -- codebooks --------------------------------------------------------------

def test_lloyd_one_bit():
    cb = lloyd_codebook(0.0, 1.0, 1)
    np.testing.assert_allclose(cb.levels, [-np.sqrt(2 / np.pi), np.sqrt(2 / np.pi)], atol=1e-9)
    assert cb.levels[1] == pytest.approx(0.7979, abs=1e-3)


def test_lloyd_two_bit_matches_iteration():
    oracle = _centroid_oracle(4)
    np.testing.assert_allclose(lloyd_codebook(0.0, 1.0, 2).levels, oracle, atol=1e-6)
    np.testing.assert_allclose(oracle, [-1.510, -0.4528, 0.4528, 1.510], atol=1e-3)


def test_lloyd_three_bit_matches_iteration():
    np.testing.assert_allclose(lloyd_codebook(0.0, 1.0, 3).levels, _centroid_oracle(8), atol=1e-5)


def test_lloyd_distortion_nonincreasing():
    for bits in (1, 2, 3, 4):
        h = np.array(lloyd_distortion_history(bits))
        assert np.all(np.diff(h) <= 1e-15)


@settings(max_examples=30)
@given(st.floats(-50, 50), st.floats(1e-3, 1e3), st.integers(1, 5))
def test_lloyd_affine(mu, var, bits):
    std = lloyd_codebook(0.0, 1.0, bits).levels
    np.testing.assert_allclose(lloyd_codebook(mu, var, bits).levels, mu + np.sqrt(var) * std,
                               rtol=1e-12, atol=1e-9)


def test_quantize_level_is_fixed_point():
    cb = lloyd_codebook(1.0, 4.0, 3)
    for i, lvl in enumerate(cb.levels):
        assert quantize(lvl, cb) == i


def test_boundary_tie_goes_low():
    cb = uniform_codebook(0.0, 1.0, 2)
    assert quantize(cb.boundaries[1], cb) == 1


@settings(max_examples=50)
@given(st.floats(-20, 20))
def test_quantize_projection(v):
    cb = lloyd_codebook(0.5, 2.0, 2)
    once = dequantize(quantize(v, cb), cb)
    assert dequantize(quantize(once, cb), cb) == once


def test_monte_carlo_distortion():
    cb = lloyd_codebook(0.0, 1.0, 2)
    x = np.random.default_rng(8).standard_normal(100_000)
    mse = np.mean((dequantize(quantize(x, cb), cb) - x) ** 2)
    assert mse == pytest.approx(codebook_distortion(cb), rel=0.02)
    assert codebook_distortion(cb) == pytest.approx(0.1175, abs=1e-4)


def test_uniform_codebook():
    np.testing.assert_allclose(uniform_codebook(0.0, 1.0, 1).levels, [-2, 2])
    lv = uniform_codebook(3.0, 2.0, 3).levels
    np.testing.assert_allclose(np.diff(lv), np.diff(lv)[0])
    assert uniform_noise_var(1.0, 1) == pytest.approx(16 / 12)


def test_dequantize_range():
    with pytest.raises(IndexError):
        dequantize(4, lloyd_codebook(0.0, 1.0, 2))


# -- noise model ------------------------------------------------------------

def test_noise_var_examples():
    assert quant_noise_var(1.0, 1) == pytest.approx(1 / 3)
    assert quant_noise_var(2.0, 2) == pytest.approx(2 / 15)
    assert quant_noise_var(1.0, 0) == 1e6


@pytest.mark.parametrize("bits", range(1, 9))
def test_noise_var_mutual_information(bits):
    gamma = 2.7
    eta = quant_noise_var(gamma, bits)
    assert 0.5 * np.log2((gamma + eta) / eta) == pytest.approx(bits, abs=1e-12)


# -- surrogate and KLT ------------------------------------------------------

def test_surrogate_real_alpha(spec):
    sur = surrogate_moments(5e-6, 0.9, 1e-20, observation_window(5e-6, spec).indices, spec, 1.0)
    assert np.all(sur.mean[10:] == 0)


def test_surrogate_zero_crb(spec):
    sur = surrogate_moments(5e-6, 0.9j, 0.0, observation_window(5e-6, spec).indices, spec, 2.0)
    np.testing.assert_array_equal(sur.covariance, np.eye(20))


def test_klt_two_dim_toy():
    cov = np.outer([1.0, 0.0], [1.0, 0.0]) + 0.5 * np.eye(2)
    b = klt(cov)
    np.testing.assert_allclose(b.gamma, [1.5, 0.5])
    np.testing.assert_allclose(np.abs(b.U[:, 0]), [1.0, 0.0])


def test_klt_rejects_asymmetric():
    with pytest.raises(ValueError):
        klt(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_klt_top_vector_and_decorrelation(spec):
    _, _, sur, b = _setup(spec)
    q = sur.q / np.linalg.norm(sur.q)
    assert abs(b.U[:, 0] @ q) == pytest.approx(1.0, abs=1e-12)
    D = b.U.T @ sur.covariance @ b.U
    assert np.max(np.abs(D - np.diag(np.diag(D)))) < 1e-8
    np.testing.assert_allclose(b.U.T @ b.U, np.eye(20), atol=1e-12)


@pytest.mark.parametrize("frac", [0.0, 0.25, 0.5, 0.9])
def test_eigenvalue_structure(spec, frac):
    sigma2 = 1.7
    _, _, _, b = _setup(spec, tau_hat=(500 + frac) * spec.Ts, sigma2=sigma2)
    assert 0.9 * sigma2 <= b.gamma[0] <= 1.1 * sigma2
    np.testing.assert_allclose(b.gamma[1:], sigma2 / 2, atol=1e-9)


# -- CRB, ECRB --------------------------------------------------------------

def test_crb_prime_unquantized_limit(spec):
    window, _, _, b = _setup(spec)
    tau = 5e-6 + 3.3e-9
    alpha = 0.8 * np.exp(0.7j)
    full = crb_prime(np.zeros(20), b, tau, alpha, window, spec, 1.0)
    assert full == pytest.approx(crb_tau(alpha, 1.0, spec, tau, window), rel=1e-10)
    empty = crb_prime(quant_noise_var(b.gamma, np.zeros(20, int)), b, tau, alpha, window, spec, 1.0)
    assert empty > full


def test_crb_prime_linear_solver(spec):
    rng = np.random.default_rng(3)
    window = np.array([499, 500])
    for _ in range(10):
        tau = (499 + rng.uniform()) * spec.Ts
        alpha = rng.standard_normal() + 1j * rng.standard_normal()
        sigma2 = rng.uniform(0.5, 2)
        U = np.linalg.qr(rng.standard_normal((4, 4)))[0]
        basis = KLTBasis(U=U, gamma=np.ones(4))
        eta = rng.uniform(0.01, 3, 4)
        d = derivative_vector(tau, alpha, window, spec)
        Q = sigma2 / 2 * np.eye(4) + U @ np.diag(eta) @ U.T
        expected = 1.0 / (d @ np.linalg.solve(Q, d))
        assert crb_prime(eta, basis, tau, alpha, window, spec, sigma2) == pytest.approx(expected, rel=1e-10)


def test_derivative_vector_finite_difference(spec):
    from coopsense.quantization import surrogate_moments as sm
    window = np.arange(495, 505)
    tau, h = 500.3 * spec.Ts, 1e-13
    alpha = 0.4 - 0.2j
    plus = sm(tau + h, alpha, 0.0, window, spec, 1.0).mean
    minus = sm(tau - h, alpha, 0.0, window, spec, 1.0).mean
    np.testing.assert_allclose(derivative_vector(tau, alpha, window, spec), (plus - minus) / (2 * h), rtol=1e-5)


def test_ecrb_delta_prior(spec):
    window, _, _, b = _setup(spec)
    eta = quant_noise_var(b.gamma, np.array([3, 2, 1] + [0] * 17))
    tau, alpha = 5e-6 + 3.3e-9, 0.8 * np.exp(0.7j)
    assert ecrb(eta, b, tau, 0.0, alpha, window, spec, 1.0) == pytest.approx(
        crb_prime(eta, b, tau, alpha, window, spec, 1.0), rel=1e-12)


def test_ecrb_constant_integrand(spec):
    # a wide window makes crb_prime (nearly) constant in tau, so the weights must sum to one
    k = np.arange(400, 600)
    b = KLTBasis(U=np.eye(400), gamma=np.ones(400))
    tau = 500 * spec.Ts
    c0 = crb_prime(np.zeros(400), b, tau, 1.0, k, spec, 1.0)
    assert ecrb(np.zeros(400), b, tau, (2 * spec.Ts) ** 2, 1.0, k, spec, 1.0) == pytest.approx(c0, rel=1e-9)


def test_ecrb_monte_carlo(spec):
    window, _, _, b = _setup(spec)
    tau_hat, alpha = 5e-6 + 3.3e-9, 0.8 * np.exp(0.7j)
    prior = (0.4 * spec.Ts) ** 2
    eta = quant_noise_var(b.gamma, np.array([4, 3, 2, 1] + [0] * 16))
    taus = tau_hat + np.sqrt(prior) * np.random.default_rng(17).standard_normal(100_000)
    mc = np.mean([crb_prime(eta, b, t, alpha, window, spec, 1.0) for t in taus])
    assert ecrb(eta, b, tau_hat, prior, alpha, window, spec, 1.0) == pytest.approx(mc, rel=0.01)


# -- allocation -------------------------------------------------------------

def test_greedy_zero_budget(spec):
    window, crb, _, b = _setup(spec)
    alloc = greedy_allocate(0, b, 5e-6 + 3.3e-9, crb, 0.8 * np.exp(0.7j), window, spec, 1.0)
    assert np.all(alloc.bits == 0)


def test_greedy_first_bit_to_dominant(spec):
    window, crb, _, b = _setup(spec)
    alloc = greedy_allocate(1, b, 5e-6 + 3.3e-9, crb, 0.8 * np.exp(0.7j), window, spec, 1.0)
    assert alloc.bits[0] == 1


def _toy_instance(spec, rng):
    window = np.array([499, 500])
    tau_hat = (499 + rng.uniform()) * spec.Ts
    alpha = (rng.uniform(0.2, 2)) * np.exp(1j * rng.uniform(0, 2 * np.pi))
    sigma2 = rng.uniform(0.3, 3)
    crb = rng.uniform(0.01, 0.5) * spec.Ts**2
    basis = klt(surrogate_moments(tau_hat, alpha, crb, window, spec, sigma2))
    return window, tau_hat, alpha, sigma2, crb, basis


def test_greedy_vs_exhaustive():
    spec = PulseSpec(E=1e-8)
    rng = np.random.default_rng(2024)
    equal = worst = 0
    for i in range(100):
        window, tau_hat, alpha, sigma2, crb, basis = _toy_instance(spec, rng)
        budget = (2, 4, 6)[i % 3]
        g = greedy_allocate(budget, basis, tau_hat, crb, alpha, window, spec, sigma2)
        val_g = ecrb(quant_noise_var(basis.gamma, g.bits), basis, tau_hat, crb, alpha, window, spec, sigma2)
        best = min(
            ecrb(quant_noise_var(basis.gamma, np.array(x)), basis, tau_hat, crb, alpha, window, spec, sigma2)
            for x in itertools.product(range(budget + 1), repeat=4) if sum(x) == budget
        )
        equal += val_g <= best * (1 + 1e-12)
        worst = max(worst, val_g / best - 1)
    assert equal >= 95
    assert worst <= 0.05


def test_equal_allocate():
    a = equal_allocate(10, [1, 5, 3, 5])
    np.testing.assert_array_equal(a.bits, [2, 3, 2, 3])
    assert equal_allocate(7, np.ones(20)).bits.sum() == 7


# -- packing and codec ------------------------------------------------------

def test_pack_msb_first():
    np.testing.assert_array_equal(pack_indices([2, 0, 5], [2, 0, 3]), [1, 0, 1, 0, 1])


@settings(max_examples=50)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=20), st.integers(0, 2**31))
def test_pack_roundtrip(bits, seed):
    rng = np.random.default_rng(seed)
    idx = [int(rng.integers(0, 2**b)) if b else 0 for b in bits]
    stream = pack_indices(idx, bits)
    assert len(stream) == sum(bits)
    np.testing.assert_array_equal(unpack_indices(stream, bits), idx)


def test_unpack_length_check():
    with pytest.raises(ValueError):
        unpack_indices(np.zeros(3, np.uint8), [2, 2])


@pytest.mark.parametrize("quantizer", [KLT, UNIFORM])
def test_codec_roundtrip(spec, quantizer):
    rng = np.random.default_rng(6)
    tau_hat, alpha = 5e-6 + 3.3e-9, 0.8 * np.exp(0.7j)
    _, crb, sur, _ = _setup(spec)
    codec = build_codec(tau_hat, alpha, crb, 10, spec, 1.0, quantizer)
    assert codec.allocation.bits.sum() == 10
    v = sur.mean + rng.standard_normal(20)
    stream = codec.encode(v)
    assert len(stream) == 10
    again = build_codec(tau_hat, alpha, crb, 10, spec, 1.0, quantizer)
    comps = codec.basis.forward(v)
    expect = np.array([dequantize(quantize(c, cb), cb) if cb is not None else codec.prior_mean[j]
                       for j, (c, cb) in enumerate(zip(comps, codec.codebooks))])
    np.testing.assert_array_equal(again.basis.forward(again.decode(stream)), again.basis.forward(codec.basis.inverse(expect)))


def test_codec_zero_budget_is_prior_mean(spec):
    _, crb, sur, _ = _setup(spec)
    codec = build_codec(5e-6 + 3.3e-9, 0.8 * np.exp(0.7j), crb, 0, spec, 1.0)
    np.testing.assert_allclose(codec.decode(np.zeros(0, np.uint8)), sur.mean, atol=1e-12)


def test_codec_unquantized(spec):
    codec = build_codec(5e-6, 1.0, 1e-20, None, spec, 1.0)
    assert codec.unquantized and np.all(codec.noise_var == 0)
    with pytest.raises(ValueError):
        codec.encode(np.zeros(20))
