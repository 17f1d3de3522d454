import numpy as np
import pytest
from scipy.spatial.distance import cdist

from src.dyncore import BASIS, MotionModel, positions_at
from src.errors import ParameterError
from src.model import FLAG_DIFFUSE_ONLY, FLAG_STATIC, DynamicGaussianCloud
from src.preprocess import (
    AttributeMask,
    apply_mask,
    derive_sh_mask,
    derive_static_mask,
    knn_mean_distances,
    opacity_below_fraction,
    prune,
    prune_by_opacity,
    prune_by_scale,
    prune_outliers_kdtree,
)
from src.synthetic import make_cloud
from src.utils import logit


@pytest.fixture
def cloud(rng):
    base = make_cloud(800, sh_degree=1, seed=11)
    opacity = logit(rng.uniform(0.0, 0.02, size=base.n), eps=1e-9)
    return base.replace(opacity_logits=opacity)


class TestOpacity:
    def test_kept_set_matches_predicate(self, cloud):
        tau = 0.01
        pruned, report = prune_by_opacity(cloud, tau)
        expected = np.flatnonzero(cloud.opacities >= tau)
        np.testing.assert_array_equal(report.kept_indices, expected)
        assert pruned.n == expected.size
        assert report.removed_by_opacity == cloud.n - expected.size

    def test_below_fraction(self, cloud):
        assert opacity_below_fraction(cloud, 0.01) == pytest.approx(np.mean(cloud.opacities < 0.01))

    def test_threshold_range(self, cloud):
        with pytest.raises(ParameterError):
            prune_by_opacity(cloud, 1.0)


class TestScale:
    def test_kept_set_matches_predicate(self, cloud):
        largest = np.exp(cloud.log_scales.astype(np.float64).max(axis=1))
        lo, hi = np.quantile(largest, [0.2, 0.8])
        _, report = prune_by_scale(cloud, lo, hi)
        expected = np.flatnonzero((largest >= lo) & (largest <= hi))
        np.testing.assert_array_equal(report.kept_indices, expected)

    def test_bounds_must_be_ordered(self, cloud):
        with pytest.raises(ParameterError):
            prune_by_scale(cloud, 0.5, 0.1)


class TestOutliers:
    def test_knn_distances_match_brute_force(self, rng):
        points = rng.normal(size=(300, 3))
        k = 6
        dist = np.sort(cdist(points, points), axis=1)[:, 1:k + 1]
        np.testing.assert_allclose(knn_mean_distances(points, k), dist.mean(axis=1), rtol=1e-12)

    def test_kept_set_matches_brute_force(self, rng):
        cloud = make_cloud(500, seed=13)
        far = rng.uniform(5.0, 8.0, size=(5, 3))
        means = np.vstack([cloud.means[:-5], far])
        cloud = cloud.replace(means=means)

        k, m = 10, 3.0
        d = np.sort(cdist(cloud.means, cloud.means), axis=1)[:, 1:k + 1].mean(axis=1)
        expected = np.flatnonzero(d <= d.mean() + m * d.std())
        _, report = prune_outliers_kdtree(cloud, k, m)
        np.testing.assert_array_equal(report.kept_indices, expected)
        assert set(range(495, 500)).issubset(report.removed["outlier"].tolist())

    def test_needs_more_points_than_neighbours(self):
        with pytest.raises(ParameterError):
            prune_outliers_kdtree(make_cloud(5), k=10)


class TestPrune:
    def test_report_composes_in_original_indices(self, cloud):
        largest = np.exp(cloud.log_scales.astype(np.float64).max(axis=1))
        lo, hi = np.quantile(largest, [0.1, 0.9])
        pruned, report = prune(cloud, opacity=0.01, scale=(lo, hi))

        keep = (cloud.opacities >= 0.01) & (largest >= lo) & (largest <= hi)
        np.testing.assert_array_equal(report.kept_indices, np.flatnonzero(keep))
        np.testing.assert_array_equal(pruned.means, cloud.means[keep])
        assert report.total_removed + report.kept == cloud.n
        removed = np.concatenate([report.removed["opacity"], report.removed["scale"]])
        assert np.intersect1d(report.removed["opacity"], report.removed["scale"]).size == 0
        assert np.array_equal(np.sort(removed), report.indices_removed)

    def test_opacity_and_scale_commute(self, cloud):
        largest = np.exp(cloud.log_scales.astype(np.float64).max(axis=1))
        lo, hi = np.quantile(largest, [0.2, 0.8])

        first, a = prune_by_opacity(cloud, 0.01)
        first, b = prune_by_scale(first, lo, hi)
        second, c = prune_by_scale(cloud, lo, hi)
        second, d = prune_by_opacity(second, 0.01)

        np.testing.assert_array_equal(a.then(b).kept_indices, c.then(d).kept_indices)
        np.testing.assert_array_equal(first.means, second.means)
        assert 0 < first.n < cloud.n

    def test_nothing_enabled_keeps_everything(self, cloud):
        pruned, report = prune(cloud)
        assert pruned.n == cloud.n
        assert report.total_removed == 0


class TestMasks:
    def test_sh_mask_zeroes_and_flags(self, rng):
        cloud = make_cloud(200, sh_degree=2, seed=17)
        energy = np.square(cloud.shN.astype(np.float64)).sum(axis=(1, 2))
        eps = float(np.median(energy))
        mask = derive_sh_mask(cloud, eps)
        assert mask.active == int((energy >= eps).sum())

        masked = apply_mask(cloud, mask)
        off = ~mask.bits
        assert not masked.shN[off].any()
        np.testing.assert_array_equal(masked.shN[mask.bits], cloud.shN[mask.bits])
        assert ((masked.flags & FLAG_DIFFUSE_ONLY) != 0).tolist() == off.tolist()

    def test_apply_mask_idempotent(self):
        cloud = make_cloud(100, sh_degree=1, seed=19)
        mask = derive_sh_mask(cloud, 0.01)
        once = apply_mask(cloud, mask)
        twice = apply_mask(once, mask)
        np.testing.assert_array_equal(once.shN, twice.shN)
        np.testing.assert_array_equal(once.flags, twice.flags)

    def test_sh_mask_needs_higher_order_sh(self):
        with pytest.raises(ParameterError):
            derive_sh_mask(make_cloud(10, sh_degree=0), 0.1)

    def test_mask_length_checked(self):
        with pytest.raises(ParameterError):
            apply_mask(make_cloud(10, sh_degree=1), AttributeMask("shN", np.ones(9, dtype=bool)))

    def test_static_mask_finds_moving_points(self, dynamic_sequence):
        dyn = dynamic_sequence[0][0]
        moving = np.abs(dyn.motion.pos_coeffs[:, 1:]).sum(axis=(1, 2)) > 0
        mask = derive_static_mask(dyn, eps=1e-9, samples=8)
        np.testing.assert_array_equal(mask.bits, moving)

        frozen = apply_mask(dyn, mask)
        assert not frozen.motion.pos_coeffs[~moving, 1:].any()
        assert not frozen.motion.rot_coeffs[~moving, 1:].any()
        assert ((frozen.base.flags & FLAG_STATIC) != 0).tolist() == (~moving).tolist()

    def test_basis_reference_is_the_centre_position(self):
        # curve 0 is flat, curve 1 ramps over the GOF
        basis = np.array([[1.0, 1.0, 1.0], [0.0, 0.5, 1.0]])
        coeffs = np.zeros((3, 2, 3))
        coeffs[0, 0] = [0.3, 0.0, 0.0]
        coeffs[1, 1] = [0.2, 0.0, 0.0]
        motion = MotionModel(BASIS, basis=basis, knots=np.array([0.0, 0.5, 1.0]), coeffs=coeffs,
                             anchors=np.zeros((3, 3)))
        dyn = DynamicGaussianCloud(make_cloud(3, seed=2), motion)

        mask = derive_static_mask(dyn, eps=1e-6, samples=5)
        assert mask.bits.tolist() == [False, True, False]

        frozen = apply_mask(dyn, mask)
        np.testing.assert_allclose(frozen.motion.anchors[0], [0.3, 0.0, 0.0])
        np.testing.assert_allclose(frozen.base.means[0], [0.3, 0.0, 0.0], atol=1e-7)
        assert not frozen.motion.coeffs[0].any()
        for t in (0.0, 0.5, 1.0):
            np.testing.assert_allclose(positions_at(frozen.motion, t)[0], [0.3, 0.0, 0.0])
        np.testing.assert_array_equal(frozen.motion.coeffs[1], coeffs[1])

    def test_static_mask_needs_two_samples(self, dynamic_sequence):
        with pytest.raises(ParameterError):
            derive_static_mask(dynamic_sequence[0][0], eps=0.1, samples=1)
