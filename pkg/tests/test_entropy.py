import numpy as np
import pytest
from scipy.stats import norm

from src.entropy import (
    PRECISION,
    FactorizedHistogramModel,
    SpatialGaussianModel,
    ans_decode,
    ans_encode,
    entropy_loss,
    fit_factorized,
    fit_spatial_gaussian,
    gaussian_interval_mass,
    model_from_bytes,
    model_to_bytes,
    probability,
    quantize_probabilities,
    rate_estimate,
)
from src.errors import EntropyCodingError, ParameterError
from src.quantize import dequantize_scalar, fit_scheme, quantize_scalar


def _skewed(rng, n, size):
    p = np.exp(-np.arange(size) / (size / 8))
    return rng.choice(size, size=n, p=p / p.sum())


class TestFixedPoint:
    def test_rows_sum_to_precision_with_every_symbol(self, rng):
        probs = rng.dirichlet(np.full(100, 0.1), size=20)
        freqs = quantize_probabilities(probs)
        assert (freqs.sum(axis=1) == PRECISION).all()
        assert freqs.min() >= 1

    def test_deterministic(self, rng):
        probs = rng.random((5, 256))
        np.testing.assert_array_equal(quantize_probabilities(probs), quantize_probabilities(probs.copy()))

    def test_zero_mass_row(self):
        with pytest.raises(EntropyCodingError):
            quantize_probabilities(np.zeros((1, 4)))


class TestFactorized:
    def test_smoothed_probabilities(self):
        model = fit_factorized(np.array([0, 0, 1, 3]), alpha=1.0, num_symbols=4)
        np.testing.assert_allclose(model.probs[0], [3 / 8, 2 / 8, 1 / 8, 2 / 8])

    def test_probability_is_the_coder_table(self, rng):
        symbols = _skewed(rng, 5000, 64)
        model = fit_factorized(symbols, num_symbols=64)
        p = probability(model, np.arange(64))
        np.testing.assert_array_equal(p, model.tables[0][0] / PRECISION)
        assert p.sum() == pytest.approx(1.0)

    def test_constant_channel_keeps_a_rate_floor(self):
        model = fit_factorized(np.zeros(1000, dtype=np.int64), alpha=1e-6, num_symbols=256)
        assert model.tables[0][0, 0] == PRECISION - 255
        assert -np.log2(model.coded_probabilities()[0, 0]) == pytest.approx(0.0927, abs=1e-4)

    def test_wide_alphabet_splits_into_bytes(self, rng):
        symbols = _skewed(rng, 5000, 4096)
        model = fit_factorized(symbols, num_symbols=4096)
        assert model.split
        p = model.coded_probabilities()
        assert p.shape == (1, 4096)
        assert p.min() > 0
        assert p.sum() == pytest.approx(1.0)

    def test_rate_estimate_is_information_content(self, rng):
        symbols = _skewed(rng, 2000, 32)
        model = fit_factorized(symbols, num_symbols=32)
        expected = -np.log2(model.tables[0][0][symbols] / PRECISION).sum()
        estimate = rate_estimate(model, symbols)
        assert estimate.total_bits == pytest.approx(expected)
        assert estimate.bits_per_symbol == pytest.approx(expected / 2000)

    def test_per_channel_histograms(self, rng):
        symbols = np.stack([np.zeros(100, dtype=int), rng.integers(0, 8, 100)], axis=1)
        model = fit_factorized(symbols, num_symbols=8)
        assert model.channels == 2
        assert model.probs[0, 0] > model.probs[1, 0]

    def test_compact_distribution_codes_smaller(self, rng):
        size = 256
        compact = np.clip(np.round(rng.normal(128, 6, 50000)), 0, size - 1).astype(int)
        uniform = rng.integers(0, size, 50000)
        compact_bytes = len(ans_encode(compact, fit_factorized(compact, num_symbols=size)))
        uniform_bytes = len(ans_encode(uniform, fit_factorized(uniform, num_symbols=size)))
        assert compact_bytes <= 0.7 * uniform_bytes

    def test_bad_inputs(self):
        with pytest.raises(ParameterError):
            fit_factorized(np.array([], dtype=int))
        with pytest.raises(ParameterError):
            fit_factorized(np.array([0, 1]), alpha=0.0)
        with pytest.raises(ParameterError):
            fit_factorized(np.array([0, 5]), num_symbols=4)


class TestSpatialGaussian:
    @pytest.fixture
    def scene(self, rng):
        positions = rng.uniform(0.0, 1.0, size=(4000, 3))
        values = np.sin(4.0 * positions[:, :1]) + 0.01 * rng.normal(size=(4000, 1))
        return positions, values

    def test_voxel_statistics(self, scene):
        positions, values = scene
        scheme = fit_scheme(values, 8)
        model = fit_spatial_gaussian(positions, values, voxel_size=0.25, scheme=scheme)
        assert isinstance(model, SpatialGaussianModel)
        assert model.voxel_count > 0
        assert (model.sigma >= model.sigma_floor).all()
        mu, _ = model.params_at(positions)
        # local means track the smooth field better than the global mean
        assert np.mean((mu - values) ** 2) < np.mean((model.mu0 - values) ** 2)

    def test_interval_mass_matches_cdf_difference(self):
        x = np.linspace(-3, 3, 25)
        p = gaussian_interval_mass(x, 0.2, 0.7, 0.1)
        expected = norm.cdf((x + 0.05 - 0.2) / 0.7) - norm.cdf((x - 0.05 - 0.2) / 0.7)
        np.testing.assert_allclose(p, np.maximum(expected, 2.0 ** -24), rtol=1e-9, atol=1e-15)

    def test_far_tail_is_floored(self):
        assert gaussian_interval_mass(np.array([100.0]), 0.0, 0.01, 0.1)[0] == 2.0 ** -24

    def test_spatial_context_beats_factorized(self, scene):
        positions, values = scene
        scheme = fit_scheme(values, 8)
        symbols = quantize_scalar(values, scheme)
        spatial = fit_spatial_gaussian(positions, values, voxel_size=0.1, scheme=scheme)
        factorized = fit_factorized(symbols, num_symbols=256)
        assert rate_estimate(spatial, symbols, positions).total_bits < rate_estimate(factorized, symbols).total_bits

    def test_entropy_loss_on_grid_equals_rate(self, scene):
        positions, values = scene
        scheme = fit_scheme(values, 8)
        symbols = quantize_scalar(values, scheme)
        grid_values = dequantize_scalar(symbols, scheme)
        model = fit_spatial_gaussian(positions, values, voxel_size=0.2, scheme=scheme)
        loss = entropy_loss(grid_values, scheme.step, model, positions=positions)
        assert loss == pytest.approx(rate_estimate(model, symbols, positions).bits_per_symbol, rel=1e-9)

    def test_needs_positions(self, scene):
        positions, values = scene
        model = fit_spatial_gaussian(positions, values, 0.25, scheme=fit_scheme(values, 8))
        with pytest.raises(ParameterError):
            probability(model, values)

    def test_bad_voxel_size(self, scene):
        positions, values = scene
        with pytest.raises(ParameterError):
            fit_spatial_gaussian(positions, values, 0.0, sigma_floor=0.1)


class TestANS:
    @pytest.mark.parametrize("size", [2, 17, 256, 1024, 65536])
    def test_round_trip(self, rng, size):
        symbols = _skewed(rng, 3000, size)
        model = fit_factorized(symbols, num_symbols=size)
        data = ans_encode(symbols, model)
        np.testing.assert_array_equal(ans_decode(data, model, symbols.size), symbols)

    def test_random_models_and_streams(self, rng):
        for _ in range(200):
            size = int(rng.integers(2, 300))
            channels = int(rng.integers(1, 4))
            n = int(rng.integers(0, 200)) * channels
            train = rng.integers(0, size, size=(max(n // channels, 1), channels))
            model = fit_factorized(train, alpha=float(rng.uniform(0.1, 2.0)), num_symbols=size)
            symbols = rng.integers(0, size, size=n)
            decoded = ans_decode(ans_encode(symbols, model), model, n)
            np.testing.assert_array_equal(decoded, symbols)

    def test_size_close_to_estimate(self, rng):
        symbols = _skewed(rng, 100000, 256)
        model = fit_factorized(symbols, num_symbols=256)
        data = ans_encode(symbols, model)
        assert len(data) <= rate_estimate(model, symbols).total_bytes * 1.01 + 64

    @pytest.mark.slow
    def test_size_close_to_estimate_on_a_million_symbols(self, rng):
        symbols = _skewed(rng, 1_000_000, 1024)
        model = fit_factorized(symbols, num_symbols=1024)
        data = ans_encode(symbols, model)
        assert len(data) <= rate_estimate(model, symbols).total_bytes * 1.01 + 64
        np.testing.assert_array_equal(ans_decode(data, model, symbols.size), symbols)

    @pytest.mark.parametrize("bits", [8, 12])
    def test_spatial_round_trip(self, rng, bits):
        positions = rng.uniform(-1.0, 1.0, size=(2000, 3))
        values = np.cos(3.0 * positions[:, :2]) + 0.02 * rng.normal(size=(2000, 2))
        scheme = fit_scheme(values, bits, per_channel=True)
        symbols = quantize_scalar(values, scheme)
        model = fit_spatial_gaussian(positions, values, 0.3, scheme=scheme)
        data = ans_encode(symbols, model, positions)
        np.testing.assert_array_equal(ans_decode(data, model, symbols.size, positions), symbols.reshape(-1))

    def test_empty_stream(self):
        model = fit_factorized(np.array([0, 1]))
        data = ans_encode(np.array([], dtype=int), model)
        assert len(data) == 4
        assert ans_decode(data, model, 0).size == 0

    def test_symbol_outside_alphabet(self):
        model = fit_factorized(np.array([0, 1, 2]), num_symbols=3)
        with pytest.raises(EntropyCodingError):
            ans_encode(np.array([3]), model)

    def test_truncated_stream(self, rng):
        symbols = _skewed(rng, 2000, 64)
        model = fit_factorized(symbols, num_symbols=64)
        data = ans_encode(symbols, model)
        with pytest.raises(EntropyCodingError):
            ans_decode(data[:-10], model, symbols.size)

    def test_deterministic_bytes(self, rng):
        symbols = _skewed(rng, 5000, 128)
        model = fit_factorized(symbols, num_symbols=128)
        assert ans_encode(symbols, model) == ans_encode(symbols.copy(), model)


class TestSerialization:
    def test_factorized_model_bytes(self, rng):
        symbols = _skewed(rng, 1000, 1000)
        model = fit_factorized(symbols, num_symbols=1000)
        restored = model_from_bytes(model_to_bytes(model))
        assert isinstance(restored, FactorizedHistogramModel)
        assert restored.num_symbols == 1000
        for a, b in zip(model.tables, restored.tables):
            np.testing.assert_array_equal(a, b)
        data = ans_encode(symbols, model)
        np.testing.assert_array_equal(ans_decode(data, restored, symbols.size), symbols)

    def test_gaussian_model_bytes(self, rng):
        positions = rng.uniform(size=(500, 3))
        values = positions[:, :1] * 2.0
        scheme = fit_scheme(values, 10)
        model = fit_spatial_gaussian(positions, values, 0.25, scheme=scheme)
        restored = model_from_bytes(model_to_bytes(model))
        np.testing.assert_array_equal(restored.coding_tables(), model.coding_tables())
        np.testing.assert_array_equal(restored.lo_table, model.lo_table)

    def test_unknown_tag(self):
        with pytest.raises(EntropyCodingError):
            model_from_bytes(b"Xabc")

    def test_truncated_model(self, rng):
        model = fit_factorized(rng.integers(0, 16, 100), num_symbols=16)
        with pytest.raises(EntropyCodingError):
            model_from_bytes(model_to_bytes(model)[:-3])
