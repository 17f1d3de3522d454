import numpy as np
import pytest

from src.data_loader import load_dynamic, load_ply, save_dynamic, save_ply
from src.errors import EmptyCloudError, PlyHeaderError, PlyParseError, PlyPropertyError
from src.model import GaussianCloud
from src.synthetic import make_cloud


def _assert_same(a: GaussianCloud, b: GaussianCloud):
    for name in ("means", "rotations", "log_scales", "opacity_logits", "sh0", "shN"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


class TestPly:
    @pytest.mark.parametrize("degree", [0, 1, 3])
    def test_save_then_load_is_exact(self, degree):
        cloud = make_cloud(40, sh_degree=degree, seed=degree)
        _assert_same(load_ply(save_ply(cloud)), cloud)

    def test_f_rest_is_channel_major(self):
        shN = np.arange(2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3)
        cloud = make_cloud(2, sh_degree=1).replace(shN=shN)
        data = save_ply(cloud)
        loaded = load_ply(data)
        np.testing.assert_array_equal(loaded.shN, shN)
        # property order on disk: all R coefficients first
        header = data[:data.find(b"end_header")].decode()
        rest = [line.split()[-1] for line in header.splitlines() if "f_rest_" in line]
        assert rest == [f"f_rest_{i}" for i in range(9)]

    def test_features_and_flags_survive(self):
        cloud = make_cloud(12, feature_dim=2).replace(flags=np.arange(12) % 4)
        loaded = load_ply(save_ply(cloud))
        np.testing.assert_array_equal(loaded.features, cloud.features)
        np.testing.assert_array_equal(loaded.flags, cloud.flags)

    def test_ascii_ply(self):
        text = (
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            + "".join(f"property float {p}\n" for p in
                      ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                       "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"])
            + "end_header\n1 2 3 0.1 0.2 0.3 0.5 -1 -2 -3 1 0 0 0\n"
        )
        cloud = load_ply(text.encode())
        assert cloud.n == 1
        np.testing.assert_allclose(cloud.means[0], [1, 2, 3])
        np.testing.assert_allclose(cloud.log_scales[0], [-1, -2, -3])

    def test_missing_property_is_named(self):
        text = (
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            "property float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n"
        )
        with pytest.raises(PlyPropertyError) as info:
            load_ply(text.encode())
        assert info.value.prop == "f_dc_0"

    def test_bad_magic_is_header_error(self):
        with pytest.raises(PlyHeaderError):
            load_ply(b"not a ply file at all\n")

    def test_truncated_payload(self):
        data = save_ply(make_cloud(10))
        row = 14 * 4
        with pytest.raises(PlyParseError):
            load_ply(data[:-row])

    def test_empty_cloud(self):
        with pytest.raises(EmptyCloudError):
            save_ply(make_cloud(3).subset(np.zeros(3, dtype=bool)))


class TestDynamicArchive:
    def test_round_trip(self, tmp_path, dynamic_sequence):
        clouds, segments = dynamic_sequence
        path = str(tmp_path / "seq.npz")
        save_dynamic(path, clouds, segments, fps=24.0)
        loaded, loaded_segments, fps = load_dynamic(path)

        assert fps == 24.0
        assert [(s.f_start, s.f_end) for s in loaded_segments] == [(s.f_start, s.f_end) for s in segments]
        for a, b in zip(clouds, loaded):
            _assert_same(a.base, b.base)
            np.testing.assert_array_equal(a.motion.pos_coeffs, b.motion.pos_coeffs)
            np.testing.assert_array_equal(a.temporal_opacity.scales, b.temporal_opacity.scales)
            assert b.gof_index == a.gof_index
