import numpy as np
import pytest

from src.config import DYNAMIC_PRESET, apply_overrides, preset
from src.container import (
    MAGIC,
    decode_dynamic,
    decode_static,
    encode_dynamic,
    encode_dynamic_detailed,
    encode_static,
    encode_static_detailed,
    inspect,
    is_dynamic_container,
    read_header,
)
from src.dyncore import BASIS, GofSegment, basis_motion_from_fit, fit_basis_pca, positions_at
from src.errors import (
    BadMagicError,
    ChecksumError,
    ContainerError,
    InconsistentGofError,
    StageError,
    TruncatedContainerError,
    VersionError,
)
from src.model import FLAG_DIFFUSE_ONLY, DynamicGaussianCloud
from src.quantize import fit_scheme, quantize_scalar
from src.synthetic import make_cloud, make_dynamic_sequence


def _scheme(values, bits, transform="identity"):
    values = np.asarray(values, dtype=np.float64)
    return fit_scheme(values.reshape(values.shape[0], -1), bits, transform=transform, per_channel=True)


def _basis_gof(n=200, frames=16, seed=11):
    """One GOF whose trajectories come from a three-curve basis fit; anchors differ from the base means."""
    rng = np.random.default_rng(seed)
    base = make_cloud(n, seed=seed)
    times = np.linspace(0.0, 1.0, frames)
    drift = rng.normal(0.0, 0.1, size=(n, 1, 3))
    wobble = rng.normal(0.0, 0.05, size=(n, 1, 3))
    trajectories = (base.means[:, None, :] + drift * times[None, :, None]
                    + wobble * np.sin(2.0 * np.pi * times)[None, :, None])
    motion = basis_motion_from_fit(fit_basis_pca(trajectories, 3), times, n_ctrl=8)
    return DynamicGaussianCloud(base, motion)


@pytest.fixture
def dynamic_config():
    return apply_overrides(preset(DYNAMIC_PRESET), {"plas": {"proposals_per_point": 4}, "vq": {"size": 64, "iters": 5}})


@pytest.fixture
def static_result(small_cloud, fast_config):
    return encode_static_detailed(small_cloud, fast_config)


class TestStatic:
    def test_symbols_survive(self, static_result):
        source = static_result.clouds[0]
        decoded = decode_static(static_result.data)
        assert decoded.n == source.n
        for name in ("log_scales", "opacity_logits", "sh0"):
            scheme = _scheme(source.attribute(name), 8)
            np.testing.assert_array_equal(quantize_scalar(decoded.attribute(name), scheme),
                                          static_result.symbols[0][name])

    def test_means_within_half_step(self, static_result):
        source = static_result.clouds[0]
        scheme = _scheme(source.means, 16)
        error = np.abs(decode_static(static_result.data).means.astype(np.float64) - source.means)
        assert np.all(error <= scheme.step / 2 * (1 + 1e-6) + 1e-6)

    def test_every_attribute_within_half_step_of_the_input(self, small_cloud, fast_config):
        fast_config.prune.opacity = None
        result = encode_static_detailed(small_cloud, fast_config)
        decoded = decode_static(result.data)
        source = small_cloud.subset(result.source_indices[0])
        for name, bits in (("means", 16), ("rotations", 8), ("log_scales", 8), ("opacity_logits", 8), ("sh0", 8)):
            scheme = _scheme(small_cloud.attribute(name), bits)
            error = np.abs(decoded.attribute(name).astype(np.float64) - source.attribute(name))
            assert np.all(error <= scheme.step / 2 * (1 + 1e-6) + 1e-6), name
        assert np.all(decoded.rotations[:, 0] >= 0)

    def test_scaled_rotations_are_renormalized(self, small_cloud, fast_config):
        scaled = small_cloud.replace(rotations=np.asarray(small_cloud.rotations) * 2.0)
        rotations = decode_static(encode_static(scaled, fast_config)).rotations.astype(np.float64)
        assert np.all(np.abs(np.linalg.norm(rotations, axis=1) - 1.0) <= 2.0 / 255)

    def test_input_order_does_not_change_the_bytes(self, small_cloud, fast_config, rng):
        shuffled = small_cloud.subset(rng.permutation(small_cloud.n))
        assert encode_static(shuffled, fast_config) == encode_static(small_cloud, fast_config)

    def test_deterministic(self, small_cloud, fast_config):
        assert encode_static(small_cloud, fast_config) == encode_static(small_cloud, fast_config)

    def test_fewer_bits_smaller_file(self, small_cloud, fast_config):
        six = apply_overrides(preset("static-gscodec-6bit"), {"plas": {"proposals_per_point": 4}})
        assert len(encode_static(small_cloud, six)) < len(encode_static(small_cloud, fast_config))

    def test_pruned_points_are_gone(self, small_cloud, fast_config):
        opacity = np.array(small_cloud.opacity_logits)
        opacity[:50] = -12.0
        result = encode_static_detailed(small_cloud.replace(opacity_logits=opacity), fast_config)
        assert result.prune_reports[0].removed_by_opacity == 50
        assert decode_static(result.data).n == small_cloud.n - 50

    def test_vector_quantized_sh(self, sh_cloud, fast_config):
        result = encode_static_detailed(sh_cloud, fast_config)
        decoded = decode_static(result.data)
        assert decoded.shN.shape == (sh_cloud.n, 8, 3)
        assert result.symbols[0]["shN"].max() < 64
        assert np.unique(decoded.shN.reshape(decoded.n, -1), axis=0).shape[0] <= 64

    def test_diffuse_points_keep_no_sh(self, sh_cloud, fast_config):
        energy = np.square(sh_cloud.shN.astype(np.float64)).sum(axis=(1, 2))
        fast_config.prune.sh_mask = float(np.median(energy))
        result = encode_static_detailed(sh_cloud, fast_config)
        decoded = decode_static(result.data)
        diffuse = (decoded.point_flags() & FLAG_DIFFUSE_ONLY) != 0
        np.testing.assert_array_equal(decoded.point_flags(), result.clouds[0].point_flags())
        assert 0 < diffuse.sum() < decoded.n
        assert not decoded.shN[diffuse].any()

    def test_ans_routes(self, small_cloud, fast_config):
        config = apply_overrides(fast_config, {"routes": {
            "opacity": {"codec": "ans", "model": "gaussian"},
            "sh0": {"codec": "ans"},
        }})
        result = encode_static_detailed(small_cloud, config)
        decoded = decode_static(result.data)
        for name in ("opacity_logits", "sh0"):
            scheme = _scheme(result.clouds[0].attribute(name), 8)
            np.testing.assert_array_equal(quantize_scalar(decoded.attribute(name), scheme), result.symbols[0][name])

    def test_everything_pruned(self, small_cloud, fast_config):
        fast_config.prune.opacity = 0.999
        with pytest.raises(StageError) as info:
            encode_static(small_cloud, fast_config)
        assert info.value.stage == "prune"


class TestReencode:
    @pytest.mark.parametrize("fixture", ["small_cloud", "sh_cloud"])
    def test_decoded_cloud_is_a_fixed_point(self, request, fixture, fast_config):
        fast_config.prune.opacity = None
        once = decode_static(encode_static(request.getfixturevalue(fixture), fast_config))
        twice = decode_static(encode_static(once, fast_config))
        assert twice.attribute_names() == once.attribute_names()
        for name in once.attribute_names():
            np.testing.assert_array_equal(twice.attribute(name), once.attribute(name), err_msg=name)
        np.testing.assert_array_equal(twice.point_flags(), once.point_flags())

    def test_decoded_cloud_encodes_to_the_same_bytes(self, sh_cloud, fast_config):
        fast_config.prune.opacity = None
        data = encode_static(sh_cloud, fast_config)
        assert encode_static(decode_static(data), fast_config) == data

    def test_decoded_rotations_are_not_renormalized(self, small_cloud, fast_config):
        rotations = decode_static(encode_static(small_cloud, fast_config)).rotations.astype(np.float64)
        norms = np.linalg.norm(rotations, axis=1)
        assert np.all(np.abs(norms - 1.0) <= 2.0 / 255)
        assert np.any(np.abs(norms - 1.0) > 1e-4)


class TestCorruption:
    def test_bad_magic(self, static_result):
        with pytest.raises(BadMagicError):
            decode_static(b"XXXX" + static_result.data[4:])

    def test_future_version(self, static_result):
        data = bytearray(static_result.data)
        data[4:6] = (2).to_bytes(2, "little")
        with pytest.raises(VersionError):
            decode_static(bytes(data))

    def test_truncated(self, static_result):
        with pytest.raises(TruncatedContainerError):
            decode_static(static_result.data[:-10])

    def test_truncated_preamble(self):
        with pytest.raises(TruncatedContainerError):
            read_header(MAGIC[:3])

    def test_flipped_payload_byte(self, static_result):
        data = bytearray(static_result.data)
        data[-1] ^= 0xFF
        with pytest.raises(ChecksumError):
            decode_static(bytes(data))

    def test_checksum_error_names_the_chunk(self, static_result):
        header, start = read_header(static_result.data)
        entry = next(c for c in header.chunks if c.attribute == "opacity_logits")
        data = bytearray(static_result.data)
        data[start + entry.offset + entry.length // 2] ^= 0x5A
        with pytest.raises(ChecksumError) as info:
            decode_static(bytes(data))
        assert info.value.chunk == entry.name
        assert entry.name in str(info.value)

class TestInspect:
    def test_components_sum_to_payload(self, sh_cloud, fast_config):
        data = encode_static(sh_cloud, fast_config)
        report = inspect(data)
        assert report.total == len(data) - report.header_size
        assert set(report.components) >= {"Mean", "Quat.", "Scale", "Opa.", "SH 0", "SH N"}
        frame = report.to_frame()
        parts = frame[frame.component != "Total"]
        assert parts.bytes.sum() == report.total
        assert abs(parts.percent.sum() - 100.0) <= 0.1

    def test_csv_and_table(self, static_result):
        report = inspect(static_result.data)
        assert report.format("csv").splitlines()[0] == "component,bytes,kb,percent"
        assert "static container" in report.format("table")

    def test_dynamic_components(self, dynamic_sequence, dynamic_config):
        clouds, segments = dynamic_sequence
        report = inspect(encode_dynamic(clouds, dynamic_config, segments))
        assert report.flavor == "dynamic"
        assert report.sections == 2
        assert {"Motion", "Temporal"} <= set(report.components)


class TestDynamic:
    @pytest.fixture
    def encoded(self, dynamic_sequence, dynamic_config):
        clouds, segments = dynamic_sequence
        return encode_dynamic_detailed(clouds, dynamic_config, segments)

    def test_header(self, encoded):
        header, _ = read_header(encoded.data)
        assert header.dynamic
        assert is_dynamic_container(encoded.data)
        assert [(s.f_start, s.f_end) for s in header.segments] == [(0, 30), (30, 60)]
        assert header.fps == pytest.approx(30.0)

    def test_motion_within_half_step(self, encoded):
        decoded = decode_dynamic(encoded.data)
        assert len(decoded) == 2
        for source, restored in zip(encoded.clouds, decoded):
            n = source.n
            expected = source.motion.pos_coeffs[:, 1:].reshape(n, -1)
            scheme = _scheme(expected, 12)
            error = np.abs(restored.motion.pos_coeffs[:, 1:].reshape(n, -1) - expected)
            assert np.all(error <= scheme.step / 2 * (1 + 1e-6) + 1e-6)
            assert restored.temporal_opacity is not None

    def test_positions_track_the_source(self, encoded):
        decoded = decode_dynamic(encoded.data)
        for source, restored in zip(encoded.clouds, decoded):
            for t in (0.0, 0.5, 1.0):
                np.testing.assert_allclose(positions_at(restored.motion, t), positions_at(source.motion, t), atol=5e-3)

    def test_single_gof(self, encoded):
        full = decode_dynamic(encoded.data)
        only = decode_dynamic(encoded.data, gofs=[1])
        assert len(only) == 1
        assert only[0].gof_index == 1
        np.testing.assert_array_equal(only[0].base.means, full[1].base.means)

    def test_gof_decodes_with_the_other_gofs_wiped(self, encoded):
        header, start = read_header(encoded.data)
        data = bytearray(encoded.data)
        for chunk in header.chunks:
            if chunk.section != 1:
                data[start + chunk.offset:start + chunk.offset + chunk.length] = bytes(chunk.length)
        (only,) = decode_dynamic(bytes(data), gofs=[1])
        (expected,) = decode_dynamic(encoded.data, gofs=[1])
        np.testing.assert_array_equal(only.base.means, expected.base.means)
        np.testing.assert_array_equal(only.motion.pos_coeffs, expected.motion.pos_coeffs)
        with pytest.raises(ChecksumError):
            decode_dynamic(bytes(data), gofs=[0])

    def test_single_gof_holds_the_static_chunks_plus_motion(self, dynamic_sequence, dynamic_config):
        clouds, _ = dynamic_sequence
        dynamic_header, _ = read_header(encode_dynamic([clouds[0]], dynamic_config, [GofSegment(0, 0, 30)]))
        static_header, _ = read_header(encode_static(clouds[0].base, dynamic_config))
        dynamic_names = {c.name for c in dynamic_header.chunks}
        static_names = {c.name for c in static_header.chunks}
        assert len(dynamic_header.sections) == 1
        assert static_names <= dynamic_names
        extra = {c.attribute for c in dynamic_header.chunks if c.name not in static_names}
        assert extra == {"pos_motion", "rot_motion", "time_center", "top_center", "top_scale"}

    def test_basis_motion_round_trip(self, dynamic_config):
        dynamic_config.prune.opacity = None
        source = _basis_gof()
        result = encode_dynamic_detailed([source], dynamic_config, [GofSegment(0, 0, 16)])
        (decoded,) = decode_dynamic(result.data)
        assert decoded.motion.variant == BASIS
        assert decoded.motion.basis.shape == (3, 8)
        assert decoded.motion.knots.shape == (8,)
        np.testing.assert_array_equal(decoded.motion.anchors, decoded.base.means)
        reference = source.motion.subset(result.source_indices[0])
        for t in (0.0, 0.3, 1.0):
            np.testing.assert_allclose(positions_at(decoded.motion, t), positions_at(reference, t), atol=5e-3)

    def test_static_container_refused(self, static_result):
        with pytest.raises(ContainerError):
            decode_dynamic(static_result.data)

    def test_segments_must_match_clouds(self, dynamic_sequence, dynamic_config):
        clouds, segments = dynamic_sequence
        with pytest.raises(InconsistentGofError):
            encode_dynamic(clouds, dynamic_config, segments[:1])

    def test_long_gof_beats_short_ones(self, dynamic_config):
        long_clouds, long_segments = make_dynamic_sequence(n=300, frame_count=120, gof_len=120, seed=9)
        short_clouds, _ = make_dynamic_sequence(n=300, frame_count=120, gof_len=30, seed=9)
        long_size = len(encode_dynamic(long_clouds, dynamic_config, long_segments))
        short_size = sum(
            len(encode_dynamic([cloud], dynamic_config, [GofSegment(0, 0, 30)])) for cloud in short_clouds
        )
        assert long_size < short_size
