"""
GSCodec - Splat Model
=====================
Core data model for static and dynamic Gaussian Splats, plus validation
and canonicalisation.

Attributes follow the community 3DGS checkpoint layout: quaternions are
(w, x, y, z), scales are natural-log, opacity is a pre-sigmoid logit.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Optional, Tuple, Union

import numpy as np

from .errors import QuaternionError
from .utils import as_readonly, quaternion_norms, sh_degree_from_rest, sigmoid

if TYPE_CHECKING:
    from .dyncore import MotionModel, TemporalOpacity


# Per-point flag bits
FLAG_DIFFUSE_ONLY = 1
FLAG_STATIC = 2

# Attribute names in the order they appear in memory reports.
ATTRIBUTES = ("means", "rotations", "log_scales", "opacity_logits", "sh0", "shN")

UNIT_TOLERANCE = 1e-4
CANONICAL_TOLERANCE = 1e-6


@dataclass(frozen=True)
class GaussianCloud:
    """
    N Gaussian splats. All arrays are read-only float32 (flags uint8).

    Args:
        means: World-space positions [N, 3]
        rotations: Quaternions (w, x, y, z) [N, 4]
        log_scales: Natural-log per-axis scales [N, 3]
        opacity_logits: Pre-sigmoid opacity [N, 1]
        sh0: Degree-0 SH coefficients [N, 3]
        shN: Higher-degree SH coefficients [N, M, 3]; M=0 for degree 0
        features: Optional opaque feature channels [N, F]
        flags: Optional per-point bit flags [N]
    """

    means: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh0: np.ndarray
    shN: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None
    flags: Optional[np.ndarray] = None

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("means", as_readonly(self.means, np.float32))
        set_("rotations", as_readonly(self.rotations, np.float32))
        set_("log_scales", as_readonly(self.log_scales, np.float32))
        opacity = np.asarray(self.opacity_logits, dtype=np.float32)
        if opacity.ndim == 1:
            opacity = opacity[:, None]
        set_("opacity_logits", as_readonly(opacity))
        set_("sh0", as_readonly(self.sh0, np.float32))
        if self.shN is None:
            set_("shN", as_readonly(np.zeros((self.means.shape[0], 0, 3), dtype=np.float32)))
        else:
            set_("shN", as_readonly(self.shN, np.float32))
        set_("features", as_readonly(self.features, np.float32))
        set_("flags", as_readonly(self.flags, np.uint8))

    @property
    def n(self) -> int:
        return int(self.means.shape[0])

    def __len__(self) -> int:
        return self.n

    @property
    def sh_rest(self) -> int:
        """Higher-order SH coefficients per channel (M)."""
        return int(self.shN.shape[1])

    @property
    def sh_degree(self) -> int:
        return sh_degree_from_rest(self.sh_rest)

    @property
    def opacities(self) -> np.ndarray:
        """Activated opacity [N] in float64."""
        return sigmoid(self.opacity_logits[:, 0])

    def point_flags(self) -> np.ndarray:
        """Flags with an all-zero default when none are stored."""
        if self.flags is None:
            return np.zeros(self.n, dtype=np.uint8)
        return np.asarray(self.flags)

    def replace(self, **changes) -> "GaussianCloud":
        return dataclasses.replace(self, **changes)

    def subset(self, keep: np.ndarray) -> "GaussianCloud":
        """
        Filter every per-point array consistently.

        Args:
            keep: Boolean mask [N] or integer index array

        Returns:
            New cloud with the selected points, in input order
        """
        keep = np.asarray(keep)
        pick = lambda a: None if a is None else a[keep]
        return GaussianCloud(
            means=self.means[keep],
            rotations=self.rotations[keep],
            log_scales=self.log_scales[keep],
            opacity_logits=self.opacity_logits[keep],
            sh0=self.sh0[keep],
            shN=self.shN[keep],
            features=pick(self.features),
            flags=pick(self.flags),
        )

    def attribute(self, name: str) -> np.ndarray:
        """Per-point attribute flattened to [N, C]."""
        value = getattr(self, name)
        if value is None:
            raise KeyError(name)
        return np.asarray(value).reshape(self.n, -1)

    def attribute_names(self) -> Tuple[str, ...]:
        names = list(ATTRIBUTES)
        if self.sh_rest == 0:
            names.remove("shN")
        if self.features is not None:
            names.append("features")
        return tuple(names)


@dataclass(frozen=True)
class DynamicGaussianCloud:
    """
    A GaussianCloud whose positions/rotations move over time and whose
    opacity follows a temporal kernel, for one GOF segment.

    Args:
        base: Canonical state at the time center
        motion: Per-point motion model (see dyncore)
        temporal_opacity: Temporal kernel, or None for time-invariant opacity
        time_range: (t_start, t_end) in normalised GOF time
        gof_index: Segment ordinal
    """

    base: GaussianCloud
    motion: "MotionModel"
    temporal_opacity: Optional["TemporalOpacity"] = None
    time_range: Tuple[float, float] = (0.0, 1.0)
    gof_index: int = 0

    @property
    def n(self) -> int:
        return self.base.n

    def replace(self, **changes) -> "DynamicGaussianCloud":
        return dataclasses.replace(self, **changes)

    def subset(self, keep: np.ndarray) -> "DynamicGaussianCloud":
        top = None if self.temporal_opacity is None else self.temporal_opacity.subset(keep)
        return self.replace(
            base=self.base.subset(keep),
            motion=self.motion.subset(keep),
            temporal_opacity=top,
        )


@dataclass
class ValidationReport:
    """
    Per-field findings. An empty report means every invariant holds.

    `findings` maps field name -> {finding kind -> count}, e.g.
    {"means": {"non_finite": 1}, "rotations": {"non_unit": 3}}.
    """

    findings: Dict[str, Dict[str, int]] = field(default_factory=dict)

    def add(self, field_name: str, kind: str, count: int = 1):
        if count <= 0:
            return
        bucket = self.findings.setdefault(field_name, {})
        bucket[kind] = bucket.get(kind, 0) + int(count)

    @property
    def is_empty(self) -> bool:
        return not self.findings

    @property
    def is_valid(self) -> bool:
        return self.is_empty

    def __bool__(self) -> bool:
        # truthy means every invariant holds
        return self.is_valid

    def excluding(self, *kinds: str) -> "ValidationReport":
        """Copy without the given finding kinds (e.g. ones canonicalize repairs)."""
        kept = ValidationReport()
        for name, found in self.findings.items():
            for kind, count in found.items():
                if kind not in kinds:
                    kept.add(name, kind, count)
        return kept

    def __str__(self) -> str:
        if self.is_empty:
            return "ok"
        parts = []
        for name, kinds in self.findings.items():
            parts.append(name + ": " + ", ".join(f"{c} {k}" for k, c in kinds.items()))
        return "; ".join(parts)


_EXPECTED_TRAILING = {
    "means": (3,),
    "rotations": (4,),
    "log_scales": (3,),
    "opacity_logits": (1,),
    "sh0": (3,),
}


def _validate_cloud(cloud: GaussianCloud, report: ValidationReport, prefix: str = ""):
    n = cloud.means.shape[0] if cloud.means.ndim >= 1 else 0
    arrays = {
        "means": cloud.means,
        "rotations": cloud.rotations,
        "log_scales": cloud.log_scales,
        "opacity_logits": cloud.opacity_logits,
        "sh0": cloud.sh0,
        "shN": cloud.shN,
        "features": cloud.features,
        "flags": cloud.flags,
    }
    for name, arr in arrays.items():
        if arr is None:
            continue
        key = prefix + name
        if arr.ndim == 0 or arr.shape[0] != n:
            report.add(key, "dimension_mismatch")
            continue
        expected = _EXPECTED_TRAILING.get(name)
        if expected is not None and tuple(arr.shape[1:]) != expected:
            report.add(key, "dimension_mismatch")
            continue
        if name == "shN" and (arr.ndim != 3 or arr.shape[2] != 3):
            report.add(key, "dimension_mismatch")
            continue
        if arr.dtype.kind == "f":
            bad = ~np.isfinite(arr)
            if bad.ndim > 1:
                bad = bad.reshape(arr.shape[0], -1).any(axis=1)
            report.add(key, "non_finite", int(bad.sum()))

    if cloud.rotations.ndim == 2 and cloud.rotations.shape == (n, 4):
        norms = quaternion_norms(cloud.rotations)
        finite = np.isfinite(norms)
        report.add(prefix + "rotations", "non_unit",
                   int((np.abs(norms[finite] - 1.0) > UNIT_TOLERANCE).sum()))

    if cloud.shN.ndim == 3:
        try:
            sh_degree_from_rest(cloud.shN.shape[1])
        except ValueError:
            report.add(prefix + "shN", "unsupported_degree")


def validate(cloud: Union[GaussianCloud, DynamicGaussianCloud]) -> ValidationReport:
    """
    Check cloud invariants without raising.

    Args:
        cloud: Static or dynamic cloud

    Returns:
        ValidationReport listing non-finite values, non-unit quaternions
        (tolerance 1e-4) and dimension mismatches per field
    """
    report = ValidationReport()
    if isinstance(cloud, DynamicGaussianCloud):
        _validate_cloud(cloud.base, report)
        t0, t1 = cloud.time_range
        if not (np.isfinite(t0) and np.isfinite(t1) and t0 < t1):
            report.add("time_range", "inverted")
        n = cloud.base.n
        if cloud.motion.n != n:
            report.add("motion", "dimension_mismatch")
        if cloud.temporal_opacity is not None:
            top = cloud.temporal_opacity
            if top.n != n:
                report.add("temporal_opacity", "dimension_mismatch")
            else:
                bad = ~np.isfinite(top.scales) | (top.scales <= 0)
                report.add("temporal_opacity", "non_positive_scale", int(bad.sum()))
        return report

    _validate_cloud(cloud, report)
    return report


def canonicalize(cloud: GaussianCloud, tolerance: float = CANONICAL_TOLERANCE) -> GaussianCloud:
    """
    Normalise quaternions and flip their sign so the scalar part is >= 0.

    Rows already within `tolerance` of unit length are left untouched, which
    keeps the operation idempotent. All other fields are passed through.

    Args:
        cloud: Cloud with non-zero rotations
        tolerance: Largest norm deviation kept as is (1e-6 by default; the
            encoder widens it to the precision its rotation route stores)

    Returns:
        Canonical cloud

    Raises:
        QuaternionError: A quaternion has zero norm
    """
    q = np.asarray(cloud.rotations, dtype=np.float64)
    norms = np.linalg.norm(q, axis=1)
    zero = np.flatnonzero(~(norms > 0))
    if zero.size:
        raise QuaternionError(int(zero[0]))

    out = np.array(cloud.rotations, dtype=np.float32, copy=True)
    off_unit = np.abs(norms - 1.0) > tolerance
    if off_unit.any():
        out[off_unit] = (q[off_unit] / norms[off_unit, None]).astype(np.float32)

    negative = out[:, 0] < 0
    out[negative] = -out[negative]

    return cloud.replace(rotations=out)
