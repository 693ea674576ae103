import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from fedconformal.channel import (
    ChannelRealization,
    Codebook,
    draw_rayleigh_gains,
    effective_noise_power,
    gamma_worst_case,
    outage_prob,
    power_control,
    renyi2_entropy,
    repetitions,
    tbma_transmit,
    tdma_erasures,
    transmit_energy,
)


class TestRayleigh:
    gains = draw_rayleigh_gains(1_000_000, seed=0)

    def test_mean_power(self):
        assert abs(np.mean(self.gains**2) - 1.0) < 0.01

    @pytest.mark.parametrize("x", [0.5, 1.0, 2.0])
    def test_cdf(self, x):
        assert abs(np.mean(self.gains**2 <= x) - (1 - math.exp(-x))) < 0.005

    def test_seeded(self):
        np.testing.assert_array_equal(draw_rayleigh_gains(5, 3), draw_rayleigh_gains(5, 3))
        assert not np.array_equal(draw_rayleigh_gains(5, 3), draw_rayleigh_gains(5, 4))


class TestOutage:
    def test_example(self):
        expected = 1 - math.exp(-(20 ** (2 / 3) - 1))
        assert outage_prob(20, 60, 20, 1.0) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.998, abs=5e-4)

    def test_limits(self):
        assert outage_prob(20, 60, 20, math.inf) == 0.0
        assert outage_prob(20, 60, 20, 1e12) < 1e-10
        assert outage_prob(1, 60, 20, 1.0) == 0.0

    def test_no_channel_uses(self):
        with pytest.raises(ValueError):
            outage_prob(4, 10, 20, 1.0)

    @pytest.mark.parametrize("M, T, K, snr", [(20, 60, 20, 1.0), (4, 40, 10, 10.0), (16, 100, 25, 3.0)])
    def test_monte_carlo(self, M, T, K, snr):
        h = draw_rayleigh_gains(1_000_000, seed=1).reshape(-1, K)
        erased = np.concatenate([tdma_erasures(ChannelRealization(row, 1.0 / snr), M, T) for row in h])
        assert abs(erased.mean() - outage_prob(M, T, K, snr)) < 0.01

    def test_erasures_from_realization(self):
        ch = ChannelRealization(np.array([0.1, 1.0, 3.0]), 1.0)
        # threshold 4**(2/2) - 1 = 3: erased when h^2 <= 3
        np.testing.assert_array_equal(tdma_erasures(ch, 4, 6), [True, True, False])


class TestPowerControl:
    def test_all_below_threshold(self):
        coefs, active = power_control([0.1, 0.5], 1.0, 2.0)
        assert not active.any() and np.all(coefs == 0)

    def test_boundary_inclusive(self):
        coefs, active = power_control([1.0], 1.0, 2.0)
        assert active[0] and coefs[0] == 2.0

    def test_inversion(self):
        coefs, _ = power_control([2.0, 3.7], 1.0, 0.8)
        assert coefs[0] == 0.4
        np.testing.assert_allclose(np.array([2.0, 3.7]) * coefs, 0.8, rtol=1e-15)

    def test_gamma(self):
        assert gamma_worst_case(20, 1.0, 1.0, 20) == pytest.approx(0.2236, abs=1e-4)
        assert gamma_worst_case(20, 2.0, 1.0, 20) == pytest.approx(math.sqrt(2) * 0.2236068, rel=1e-6)

    @settings(max_examples=200)
    @given(st.integers(1, 64), st.integers(1, 50), st.floats(0.01, 10.0), st.floats(0.05, 4.0),
           st.floats(0.0, 20.0), st.data())
    def test_energy_within_budget(self, M, N_d, P, h_min_sq, h_extra, data):
        counts = data.draw(st.lists(st.integers(0, N_d), min_size=M, max_size=M))
        if sum(counts) == 0:
            counts[0] = 1
        p = np.array(counts, float) / sum(counts)
        h = math.sqrt(h_min_sq) + h_extra
        gamma = gamma_worst_case(M, P, h_min_sq, N_d)
        assume(h * h >= h_min_sq)
        coefs, active = power_control([h], h_min_sq, gamma)
        assert active[0]
        assert transmit_energy(p, coefs[0], N_d) <= M * P + 1e-9

    def test_worst_case_energy_is_tight(self):
        gamma = gamma_worst_case(8, 2.0, 0.5, 10)
        coef = gamma / math.sqrt(0.5)
        assert transmit_energy(np.eye(8)[3], coef, 10) == pytest.approx(16.0)


class TestRenyi:
    def test_examples(self):
        assert renyi2_entropy(np.full(8, 1 / 8)) == pytest.approx(3.0)
        assert renyi2_entropy([1.0, 0, 0]) == 0.0
        assert renyi2_entropy([0.5, 0.5, 0, 0]) == pytest.approx(1.0)


class TestTbma:
    def test_one_hot_noiseless(self):
        M, P, h_min_sq, N_d = 6, 1.0, 0.5, 10
        gamma = gamma_worst_case(M, P, h_min_sq, N_d)
        h = np.array([1.3])
        coefs, _ = power_control(h, h_min_sq, gamma)
        for cb in (Codebook.identity(M), Codebook.random_orthonormal(M, seed=2)):
            w = tbma_transmit(np.eye(M)[[2]], h, coefs, cb, N_d, 0.0)
            expected = np.zeros(M)
            expected[2] = math.sqrt(M * P) * math.sqrt(h_min_sq)
            np.testing.assert_allclose(w, expected, atol=1e-12)

    def test_superposition(self):
        w = tbma_transmit([[1, 0], [0, 1]], [1.0, 2.0], [0.5, 0.25], Codebook.identity(2), 4, 0.0)
        np.testing.assert_allclose(w, [2.0, 2.0])

    def test_no_devices(self):
        w = tbma_transmit(np.empty((0, 3)), [], [], Codebook.identity(3), 4, 0.0)
        np.testing.assert_array_equal(w, np.zeros(3))

    @pytest.mark.parametrize("R", [1, 3])
    @pytest.mark.parametrize("random_codebook", [False, True])
    def test_noise_statistics(self, R, random_codebook):
        M, noise, trials = 8, 0.7, 10_000
        cb = Codebook.random_orthonormal(M, seed=5) if random_codebook else Codebook.identity(M)
        p = np.array([[0.5, 0.5] + [0.0] * 6])
        clean = tbma_transmit(p, [1.0], [1.0], cb, 2, 0.0)
        ws = np.array([tbma_transmit(p, [1.0], [1.0], cb, 2, noise, R=R, seed=s) for s in range(trials)])
        err = ws - clean
        var = noise / R
        assert np.all(np.abs(err.mean(axis=0)) < 3 * math.sqrt(var / trials))
        np.testing.assert_allclose(err.var(axis=0, ddof=1), var, rtol=0.05)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            tbma_transmit([[1.0, 0.0, 0.0]], [1.0], [1.0], Codebook.identity(2), 1, 0.0)
        with pytest.raises(ValueError):
            tbma_transmit([[1.0, 0.0]], [1.0], [1.0], Codebook.identity(2), 1, 0.0, R=0)


@pytest.mark.parametrize("M", [1, 2, 3, 20, 128, 1000, 4096])
def test_codebook_orthonormal(M):
    assert Codebook.identity(M).orthonormality_error() == 0.0
    assert Codebook.random_orthonormal(M, seed=M).orthonormality_error() < 1e-10


def test_codebook_must_be_square():
    with pytest.raises(ValueError):
        Codebook(np.ones((2, 3)))


class TestEffectiveNoise:
    def test_example(self):
        s = effective_noise_power(20, 1.0, 1.0, 20, 400)
        assert s == pytest.approx(400 / (20 * 401**2), rel=1e-12)
        assert s == pytest.approx(1.2437e-4, rel=1e-3)
        assert abs(s - 1.25e-4) / 1.25e-4 < 0.01

    def test_scaling(self):
        assert effective_noise_power(20, 2.0, 1.0, 20, 400) == pytest.approx(
            effective_noise_power(20, 1.0, 1.0, 20, 400) / 2)

    def test_noiseless(self):
        assert effective_noise_power(20, math.inf, 1.0, 20, 400) == 0.0

    def test_matches_rescaled_estimate(self):
        """Entry variance of the rescaled TBMA output equals the closed form."""
        M, P, h_min_sq, N_d, K_a, snr, R = 5, 1.0, 0.8, 10, 3, 2.0, 2
        N_a = N_d * K_a
        gamma = gamma_worst_case(M, P, h_min_sq, N_d)
        p = np.full((K_a, M), 1 / M)
        h = np.array([1.0, 1.5, 2.0])
        coefs, _ = power_control(h, h_min_sq, gamma)
        scale = N_a / (math.sqrt(M * P) * math.sqrt(h_min_sq) * K_a * (N_a + 1))
        ws = np.array([tbma_transmit(p, h, coefs, Codebook.identity(M), N_d, P / snr, R=R, seed=s)
                       for s in range(10_000)])
        np.testing.assert_allclose((scale * ws).var(axis=0, ddof=1),
                                   effective_noise_power(M, R * snr, h_min_sq, N_d, N_a), rtol=0.05)


def test_repetitions():
    assert repetitions(60, 20) == 3
    assert repetitions(20, 20) == 1
    with pytest.raises(ValueError):
        repetitions(19, 20)
