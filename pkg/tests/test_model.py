import numpy as np
import pytest

from src.errors import QuaternionError
from src.model import FLAG_DIFFUSE_ONLY, GaussianCloud, canonicalize, validate
from src.synthetic import make_cloud


def _cloud(n=4, **changes):
    values = dict(
        means=np.zeros((n, 3)),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        log_scales=np.full((n, 3), -3.0),
        opacity_logits=np.zeros(n),
        sh0=np.zeros((n, 3)),
    )
    values.update(changes)
    return GaussianCloud(**values)


class TestGaussianCloud:
    def test_arrays_are_readonly_float32(self):
        cloud = _cloud()
        assert cloud.means.dtype == np.float32
        assert cloud.opacity_logits.shape == (4, 1)
        with pytest.raises(ValueError):
            cloud.means[0, 0] = 1.0

    def test_degree_zero_has_empty_sh_rest(self):
        cloud = _cloud()
        assert cloud.shN.shape == (4, 0, 3)
        assert cloud.sh_degree == 0
        assert "shN" not in cloud.attribute_names()

    def test_sh_degree_from_rest_count(self):
        cloud = make_cloud(10, sh_degree=3)
        assert cloud.sh_rest == 15
        assert cloud.sh_degree == 3
        assert cloud.attribute("shN").shape == (10, 45)

    def test_subset_keeps_arrays_aligned(self):
        cloud = make_cloud(50, sh_degree=1, seed=2).replace(flags=np.arange(50) % 2)
        keep = np.arange(50) % 3 == 0
        sub = cloud.subset(keep)
        assert sub.n == keep.sum()
        np.testing.assert_array_equal(sub.means, cloud.means[keep])
        np.testing.assert_array_equal(sub.shN, cloud.shN[keep])
        np.testing.assert_array_equal(sub.flags, cloud.flags[keep])

    def test_point_flags_default_to_zero(self):
        cloud = _cloud()
        assert cloud.point_flags().tolist() == [0, 0, 0, 0]
        flagged = cloud.replace(flags=[FLAG_DIFFUSE_ONLY, 0, 0, 0])
        assert flagged.point_flags()[0] == FLAG_DIFFUSE_ONLY


class TestValidate:
    def test_clean_cloud_has_empty_report(self):
        report = validate(make_cloud(100))
        assert report.is_valid
        assert report
        assert str(report) == "ok"

    def test_findings_make_the_report_falsy(self):
        rotations = np.tile([1.0, 0.0, 0.0, 0.0], (4, 1))
        rotations[0] = [2.0, 0.0, 0.0, 0.0]
        report = validate(_cloud(rotations=rotations))
        assert not report
        assert not report.is_valid
        assert report.excluding("non_unit").is_valid

    def test_reports_non_finite_and_non_unit(self):
        means = np.zeros((4, 3))
        means[1, 2] = np.nan
        rotations = np.tile([1.0, 0.0, 0.0, 0.0], (4, 1))
        rotations[2] = [2.0, 0.0, 0.0, 0.0]
        report = validate(_cloud(means=means, rotations=rotations))
        assert report.findings["means"] == {"non_finite": 1}
        assert report.findings["rotations"] == {"non_unit": 1}

    def test_reports_dimension_mismatch_without_raising(self):
        report = validate(_cloud(sh0=np.zeros((3, 3))))
        assert report.findings["sh0"] == {"dimension_mismatch": 1}


class TestCanonicalize:
    def test_unit_norm_and_positive_scalar(self, rng):
        q = rng.normal(size=(200, 4)) * 3.0
        out = canonicalize(_cloud(200, rotations=q))
        norms = np.linalg.norm(out.rotations.astype(np.float64), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)
        assert (out.rotations[:, 0] >= 0).all()

    def test_idempotent(self, rng):
        once = canonicalize(_cloud(100, rotations=rng.normal(size=(100, 4))))
        twice = canonicalize(once)
        np.testing.assert_array_equal(once.rotations, twice.rotations)

    def test_other_fields_pass_through(self):
        cloud = make_cloud(30, sh_degree=1, seed=4)
        out = canonicalize(cloud)
        np.testing.assert_array_equal(out.means, cloud.means)
        np.testing.assert_array_equal(out.shN, cloud.shN)

    def test_tolerance_keeps_near_unit_rows(self):
        rotations = np.tile([1.0, 0.0, 0.0, 0.0], (3, 1))
        rotations[0] = [0.995, 0.0, 0.0, 0.0]
        rotations[1] = [-0.9, 0.0, 0.0, 0.0]
        out = canonicalize(_cloud(3, rotations=rotations), tolerance=0.01)
        np.testing.assert_array_equal(out.rotations[0], np.float32([0.995, 0, 0, 0]))
        np.testing.assert_allclose(out.rotations[1], [1.0, 0.0, 0.0, 0.0], atol=1e-7)

    def test_zero_quaternion_names_the_index(self):
        rotations = np.tile([1.0, 0.0, 0.0, 0.0], (5, 1))
        rotations[3] = 0.0
        with pytest.raises(QuaternionError) as info:
            canonicalize(_cloud(5, rotations=rotations))
        assert info.value.index == 3
