"""
GSCodec - Preprocessing
=======================
Test-time pruning (opacity, scale, KD-tree outliers) and binary adaptive
masks derived after training: SH-N energy masks and static-point masks.

Every prune operation returns the filtered cloud together with a report
that indexes removed points in the operation's input.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, Union

import numpy as np
from loguru import logger
from sklearn.neighbors import KDTree

from .dyncore import POLYNOMIAL, positions_at, zero_motion
from .errors import ParameterError
from .model import FLAG_DIFFUSE_ONLY, DynamicGaussianCloud, GaussianCloud

DEFAULT_OPACITY_THRESHOLD = 0.005
DEFAULT_OUTLIER_NEIGHBOURS = 10
DEFAULT_OUTLIER_STD = 3.0

CRITERIA = ("opacity", "scale", "outlier")


@dataclass
class PruneReport:
    """
    Removal bookkeeping relative to the cloud a pruning run started from.

    Args:
        original: Point count before pruning
        removed: Original indices removed per criterion (disjoint, sorted)
        kept_indices: Original indices of the surviving points, in order
    """

    original: int
    removed: Dict[str, np.ndarray] = field(default_factory=dict)
    kept_indices: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kept_indices is None:
            self.kept_indices = np.arange(self.original)
        for name in CRITERIA:
            self.removed.setdefault(name, np.zeros(0, dtype=np.int64))

    @classmethod
    def single(cls, criterion: str, keep: np.ndarray) -> "PruneReport":
        keep = np.asarray(keep, dtype=bool)
        return cls(keep.size, {criterion: np.flatnonzero(~keep)}, np.flatnonzero(keep))

    @property
    def removed_by_opacity(self) -> int:
        return int(self.removed["opacity"].size)

    @property
    def removed_by_scale(self) -> int:
        return int(self.removed["scale"].size)

    @property
    def removed_by_outlier(self) -> int:
        return int(self.removed["outlier"].size)

    @property
    def total_removed(self) -> int:
        return sum(int(v.size) for v in self.removed.values())

    @property
    def kept(self) -> int:
        return int(self.kept_indices.size)

    @property
    def indices_removed(self) -> np.ndarray:
        return np.sort(np.concatenate([self.removed[name] for name in CRITERIA]))

    def then(self, later: "PruneReport") -> "PruneReport":
        """Compose with a report produced on this report's output cloud."""
        if later.original != self.kept:
            raise ParameterError("report does not follow this one")
        removed = {
            name: np.sort(np.concatenate([self.removed[name], self.kept_indices[later.removed[name]]]))
            for name in CRITERIA
        }
        return PruneReport(self.original, removed, self.kept_indices[later.kept_indices])

    def summary(self) -> str:
        return (f"kept {self.kept:,}/{self.original:,} "
                f"(opacity -{self.removed_by_opacity:,}, scale -{self.removed_by_scale:,}, "
                f"outlier -{self.removed_by_outlier:,})")


@dataclass(frozen=True)
class AttributeMask:
    """Per-point binary mask over one attribute; True marks an active point."""

    target: str
    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=bool).reshape(-1))

    @property
    def ratio(self) -> float:
        return float(self.bits.mean()) if self.bits.size else 0.0

    @property
    def active(self) -> int:
        return int(self.bits.sum())

    def __len__(self) -> int:
        return int(self.bits.size)


# ---------------------------------------------------------------------------
# Pruning
# ---------------------------------------------------------------------------

def opacity_below_fraction(cloud: GaussianCloud, tau: float) -> float:
    """Fraction of points whose activated opacity is below tau."""
    if cloud.n == 0:
        return 0.0
    return float((cloud.opacities < tau).mean())


def prune_by_opacity(cloud: GaussianCloud, tau: float = DEFAULT_OPACITY_THRESHOLD) -> Tuple[GaussianCloud, PruneReport]:
    """
    Keep points with sigmoid(opacity_logit) >= tau.

    Args:
        cloud: Input cloud
        tau: Opacity threshold in [0, 1)
    """
    if not 0.0 <= tau < 1.0:
        raise ParameterError(f"opacity threshold must be in [0, 1), got {tau}")
    keep = cloud.opacities >= tau
    return cloud.subset(keep), PruneReport.single("opacity", keep)


def prune_by_scale(cloud: GaussianCloud, s_min: float, s_max: float) -> Tuple[GaussianCloud, PruneReport]:
    """Keep points whose largest axis scale lies in [s_min, s_max] (scene units)."""
    if not 0.0 < s_min < s_max:
        raise ParameterError(f"scale bounds must satisfy 0 < s_min < s_max, got ({s_min}, {s_max})")
    largest = np.exp(np.asarray(cloud.log_scales, dtype=np.float64).max(axis=1))
    keep = (largest >= s_min) & (largest <= s_max)
    return cloud.subset(keep), PruneReport.single("scale", keep)


def knn_mean_distances(points: np.ndarray, k: int) -> np.ndarray:
    """Mean distance of each point to its k nearest other points."""
    points = np.asarray(points, dtype=np.float64)
    dist, _ = KDTree(points).query(points, k=k + 1)
    # column 0 is the point itself (distance 0)
    return dist[:, 1:].mean(axis=1)


def prune_outliers_kdtree(cloud: GaussianCloud, k: int = DEFAULT_OUTLIER_NEIGHBOURS,
                          m: float = DEFAULT_OUTLIER_STD) -> Tuple[GaussianCloud, PruneReport]:
    """
    Statistical outlier removal on positions.

    d_i is the mean distance to the k nearest neighbours; points with
    d_i > mean(d) + m * std(d) are removed.

    Args:
        cloud: Input cloud with N > k
        k: Neighbour count
        m: Standard-deviation multiplier
    """
    if k < 1:
        raise ParameterError(f"neighbour count must be >= 1, got {k}")
    if m < 0:
        raise ParameterError(f"std multiplier must be >= 0, got {m}")
    if cloud.n <= k:
        raise ParameterError(f"outlier pruning needs more than {k} points, got {cloud.n}")
    d = knn_mean_distances(cloud.means, k)
    keep = ~(d > d.mean() + m * d.std())
    return cloud.subset(keep), PruneReport.single("outlier", keep)


def prune(cloud: GaussianCloud, opacity: Optional[float] = None,
          scale: Optional[Tuple[float, float]] = None,
          outliers: Optional[Tuple[int, float]] = None) -> Tuple[GaussianCloud, PruneReport]:
    """
    Run the enabled prune steps in order opacity -> scale -> outliers.

    Returns:
        Pruned cloud and a report in original indices
    """
    report = PruneReport(cloud.n)
    if opacity is not None:
        logger.info(f"{opacity_below_fraction(cloud, opacity):.1%} of points below opacity {opacity}")
        cloud, step = prune_by_opacity(cloud, opacity)
        report = report.then(step)
    if scale is not None:
        cloud, step = prune_by_scale(cloud, *scale)
        report = report.then(step)
    if outliers is not None:
        cloud, step = prune_outliers_kdtree(cloud, *outliers)
        report = report.then(step)
    logger.info(f"prune: {report.summary()}")
    return cloud, report


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------

def derive_sh_mask(cloud: GaussianCloud, eps: float) -> AttributeMask:
    """Active iff the higher-order SH energy ||shN_i||^2 >= eps."""
    if cloud.sh_rest == 0:
        raise ParameterError("cloud has no higher-order SH coefficients to mask")
    energy = np.square(np.asarray(cloud.shN, dtype=np.float64)).sum(axis=(1, 2))
    mask = AttributeMask("shN", energy >= eps)
    logger.info(f"SH-N mask: {mask.ratio:.1%} active at eps={eps}")
    return mask


def derive_static_mask(dyncloud: DynamicGaussianCloud, eps: float, samples: int) -> AttributeMask:
    """
    Mark points whose displacement from their reference position reaches eps.

    The reference is the position at each point's time center (polynomial
    motion) or at the GOF centre time (basis motion); displacement is
    sampled at `samples` evenly spaced times over the GOF range.

    Returns:
        Mask over "motion"; True marks a dynamic point
    """
    if samples < 2:
        raise ParameterError(f"static mask needs >= 2 time samples, got {samples}")
    motion = dyncloud.motion
    t0, t1 = dyncloud.time_range
    if motion.variant == POLYNOMIAL:
        reference = motion.pos_coeffs[:, 0, :]
    else:
        reference = positions_at(motion, 0.5 * (t0 + t1))

    largest = np.zeros(dyncloud.n, dtype=np.float64)
    for t in np.linspace(t0, t1, samples):
        shift = np.linalg.norm(positions_at(motion, float(t)) - reference, axis=1)
        np.maximum(largest, shift, out=largest)
    mask = AttributeMask("motion", largest >= eps)
    logger.info(f"static mask: {1.0 - mask.ratio:.1%} static at eps={eps}")
    return mask


def apply_mask(cloud: Union[GaussianCloud, DynamicGaussianCloud],
               mask: AttributeMask) -> Union[GaussianCloud, DynamicGaussianCloud]:
    """
    Zero the masked-out entries of the target attribute and flag them.

    "shN" sets FLAG_DIFFUSE_ONLY, "motion" (dynamic clouds) zeroes every
    higher-order motion term and sets FLAG_STATIC. Other per-point attributes
    are zeroed without a flag.
    """
    if len(mask) != cloud.n:
        raise ParameterError(f"mask length {len(mask)} != point count {cloud.n}")
    off = ~mask.bits

    if mask.target == "motion":
        if not isinstance(cloud, DynamicGaussianCloud):
            raise ParameterError("motion masks apply to dynamic clouds")
        return zero_motion(cloud, off)

    if isinstance(cloud, DynamicGaussianCloud):
        return cloud.replace(base=apply_mask(cloud.base, mask))

    values = getattr(cloud, mask.target, None)
    if values is None:
        raise ParameterError(f"cloud has no attribute '{mask.target}'")
    values = np.array(values, copy=True)
    values[off] = 0
    changes = {mask.target: values}
    if mask.target == "shN":
        flags = cloud.point_flags().copy()
        flags[off] |= FLAG_DIFFUSE_ONLY
        changes["flags"] = flags
    return cloud.replace(**changes)


__all__ = [
    "PruneReport", "AttributeMask", "opacity_below_fraction",
    "prune_by_opacity", "prune_by_scale", "prune_outliers_kdtree", "prune",
    "knn_mean_distances", "derive_sh_mask", "derive_static_mask", "apply_mask",
]
