import numpy as np
import pytest

from src.errors import DegenerateRangeError, ParameterError, SymbolRangeError
from src.quantize import (
    QuantizationScheme,
    dequantize_scalar,
    fit_scheme,
    fit_vq_codebook,
    quantize_scalar,
    simulate_noise_quant,
    ste_forward,
    vq_decode,
    vq_encode,
)


def _samples(rng, n, lo=-3.0, hi=5.0):
    # float32-representable so the fitted endpoints are the exact extremes
    return rng.uniform(lo, hi, size=n).astype(np.float32).astype(np.float64)


class TestScalar:
    @pytest.mark.parametrize("bits", [5, 8, 12, 16])
    def test_error_within_half_step(self, rng, bits):
        values = _samples(rng, 20000)
        scheme = fit_scheme(values, bits)
        restored = dequantize_scalar(quantize_scalar(values, scheme), scheme)
        assert np.max(np.abs(restored - values)) <= scheme.step / 2 * (1 + 1e-9)

    def test_endpoints_map_to_extreme_symbols(self, rng):
        values = _samples(rng, 1000)
        scheme = fit_scheme(values, 8)
        symbols = quantize_scalar(values, scheme)
        assert symbols[np.argmin(values)] == 0
        assert symbols[np.argmax(values)] == 255
        assert dequantize_scalar(np.array([255]), scheme)[0] == scheme.v_max

    def test_known_step(self):
        scheme = QuantizationScheme("x", 8, 0.0, 255.0)
        assert scheme.step == pytest.approx(1.0)
        np.testing.assert_array_equal(quantize_scalar(np.array([0.4, 0.5, 1.5, 254.6]), scheme), [0, 1, 2, 255])

    def test_out_of_range_values_are_clamped(self):
        scheme = QuantizationScheme("x", 6, -1.0, 1.0)
        symbols = quantize_scalar(np.array([-10.0, 10.0]), scheme)
        assert symbols.tolist() == [0, 63]

    def test_endpoints_rounded_to_float32(self):
        scheme = fit_scheme(np.array([0.1, 0.7]), 8)
        assert scheme.v_min == float(np.float32(0.1))
        assert scheme.v_max == float(np.float32(0.7))

    def test_clip_percentile(self, rng):
        values = np.concatenate([_samples(rng, 1000, 0.0, 1.0), [100.0]])
        scheme = fit_scheme(values, 8, clip_pct=1.0)
        assert scheme.v_max < 2.0

    def test_per_channel_ranges(self, rng):
        values = np.stack([_samples(rng, 500, 0, 1), _samples(rng, 500, 10, 20)], axis=1)
        scheme = fit_scheme(values, 8, per_channel=True)
        assert scheme.channels == 2
        assert scheme.v_min[1] >= 10.0
        restored = dequantize_scalar(quantize_scalar(values, scheme), scheme)
        assert np.all(np.abs(restored - values) <= scheme.step / 2 * (1 + 1e-9))

    def test_log_transform_round_trip(self, rng):
        values = np.exp(_samples(rng, 1000, -5.0, 1.0))
        scheme = fit_scheme(values, 12, transform="log")
        restored = dequantize_scalar(quantize_scalar(values, scheme), scheme)
        np.testing.assert_allclose(np.log(restored), np.log(values), rtol=0, atol=scheme.step / 2 + 1e-6)

    def test_constant_input(self):
        with pytest.raises(DegenerateRangeError) as info:
            fit_scheme(np.full(10, 3.0), 8, attribute="opacity")
        assert info.value.attribute == "opacity"
        assert info.value.value == 3.0

    def test_bit_range(self):
        with pytest.raises(ParameterError):
            fit_scheme(np.arange(10.0), 4)
        with pytest.raises(ParameterError):
            fit_scheme(np.arange(10.0), 17)

    def test_symbol_out_of_range(self):
        scheme = QuantizationScheme("x", 5, 0.0, 1.0)
        with pytest.raises(SymbolRangeError):
            dequantize_scalar(np.array([32]), scheme)

    def test_non_finite_input(self):
        scheme = QuantizationScheme("x", 8, 0.0, 1.0)
        with pytest.raises(ParameterError):
            quantize_scalar(np.array([np.nan]), scheme)

    @pytest.mark.slow
    def test_error_bound_on_a_million_samples(self, rng):
        for bits in (6, 8, 10, 16):
            values = _samples(rng, 1_000_000, -10.0, 10.0)
            scheme = fit_scheme(values, bits)
            restored = dequantize_scalar(quantize_scalar(values, scheme), scheme)
            assert np.max(np.abs(restored - values)) <= scheme.step / 2 * (1 + 1e-9)


class TestSurrogateForwardMaps:
    def test_noise_is_bounded_and_seeded(self, rng):
        values = rng.normal(size=1000)
        a = simulate_noise_quant(values, 0.1, rng_seed=3)
        b = simulate_noise_quant(values, 0.1, rng_seed=3)
        np.testing.assert_array_equal(a, b)
        assert np.max(np.abs(a - values)) <= 0.05
        assert not np.array_equal(a, simulate_noise_quant(values, 0.1, rng_seed=4))

    def test_ste_forward_is_quantize_dequantize(self, rng):
        values = _samples(rng, 500)
        scheme = fit_scheme(values, 7)
        np.testing.assert_array_equal(
            ste_forward(values, scheme), dequantize_scalar(quantize_scalar(values, scheme), scheme)
        )


class TestVector:
    def test_objective_never_increases(self, rng):
        vectors = rng.normal(size=(2000, 6))
        codebook = fit_vq_codebook(vectors, 32, iters=10, seed=1)
        history = np.array(codebook.history)
        assert np.all(np.diff(history) <= 1e-9 * history[0])

    def test_seeded_fit_is_deterministic(self, rng):
        vectors = rng.normal(size=(500, 4))
        a = fit_vq_codebook(vectors, 16, iters=5, seed=7)
        b = fit_vq_codebook(vectors, 16, iters=5, seed=7)
        np.testing.assert_array_equal(a.centroids, b.centroids)

    def test_encode_picks_nearest_centroid(self, rng):
        vectors = rng.normal(size=(400, 3))
        codebook = fit_vq_codebook(vectors, 8, iters=5)
        labels = vq_encode(vectors, codebook)
        c = codebook.centroids.astype(np.float64)
        brute = np.argmin(((vectors[:, None, :] - c[None]) ** 2).sum(axis=2), axis=1)
        np.testing.assert_array_equal(labels, brute)
        np.testing.assert_array_equal(vq_decode(labels, codebook), codebook.centroids[brute])

    def test_k_clamped_to_n(self, rng):
        codebook = fit_vq_codebook(rng.normal(size=(5, 2)), 10, iters=2)
        assert codebook.size == 5

    def test_identical_vectors_are_exact(self):
        vectors = np.repeat(np.eye(3), 20, axis=0)
        codebook = fit_vq_codebook(vectors, 3, iters=3)
        np.testing.assert_allclose(vq_decode(vq_encode(vectors, codebook), codebook), vectors)

    def test_few_distinct_rows_become_the_codebook(self, rng):
        rows = rng.normal(size=(4, 3))
        vectors = rows[rng.integers(0, 4, size=200)]
        codebook = fit_vq_codebook(vectors, 16, iters=5)
        assert codebook.size == 4
        np.testing.assert_array_equal(vq_decode(vq_encode(vectors, codebook), codebook),
                                      vectors.astype(np.float32))

    def test_index_out_of_range(self, rng):
        codebook = fit_vq_codebook(rng.normal(size=(10, 2)), 4, iters=2)
        with pytest.raises(SymbolRangeError):
            vq_decode(np.array([4]), codebook)

    def test_dim_mismatch(self, rng):
        codebook = fit_vq_codebook(rng.normal(size=(10, 2)), 4, iters=2)
        with pytest.raises(ParameterError):
            vq_encode(rng.normal(size=(3, 5)), codebook)
