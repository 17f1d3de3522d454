"""
GSCodec - Dynamic Core
======================
Time-varying splats: polynomial and shared-basis motion, temporal-kernel
opacity with lifespans, trajectory fitting, time slicing and GOF
segmentation.

Time is normalised to [0, 1] inside each GOF.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from loguru import logger

from .errors import ParameterError, QuaternionError
from .model import FLAG_STATIC, DynamicGaussianCloud, GaussianCloud
from .utils import as_readonly, logit, sigmoid

POLYNOMIAL = "polynomial"
BASIS = "basis"

DEFAULT_POSITION_DEGREE = 3
DEFAULT_ROTATION_DEGREE = 1
DEFAULT_CONTROL_POINTS = 32
SLICE_ALPHA_CUTOFF = 1.0 / 255.0


@dataclass(frozen=True)
class MotionModel:
    """
    Per-point motion for one GOF.

    Polynomial variant: position(t) = sum_k a_k (t - mu_t)^k and
    rotation(t) = normalize(sum_k r_k (t - mu_t)^k). a_0 equals the base mean
    and r_0 the base rotation.

    Basis variant: position(t) = anchor + sum_b c_b B_b(t), with B_b shared by
    all points and sampled at `knots` (linear interpolation). Rotation stays
    at the base rotation.
    """

    variant: str
    pos_coeffs: Optional[np.ndarray] = None      # [N, Kp+1, 3]
    rot_coeffs: Optional[np.ndarray] = None      # [N, Kr+1, 4]
    time_center: Optional[np.ndarray] = None     # [N]
    basis: Optional[np.ndarray] = None           # [B, T_ctrl]
    knots: Optional[np.ndarray] = None           # [T_ctrl]
    coeffs: Optional[np.ndarray] = None          # [N, B, 3]
    anchors: Optional[np.ndarray] = None         # [N, 3]

    def __post_init__(self):
        if self.variant not in (POLYNOMIAL, BASIS):
            raise ParameterError(f"unknown motion variant '{self.variant}'")
        for name in ("pos_coeffs", "rot_coeffs", "time_center", "basis", "knots", "coeffs", "anchors"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, as_readonly(value, np.float64))
        if self.variant == POLYNOMIAL:
            if self.pos_coeffs is None or self.rot_coeffs is None or self.time_center is None:
                raise ParameterError("polynomial motion needs pos_coeffs, rot_coeffs and time_center")
        else:
            if self.basis is None or self.coeffs is None or self.anchors is None:
                raise ParameterError("basis motion needs basis, coeffs and anchors")
            if self.basis.shape[0] < 1:
                raise ParameterError("basis motion needs at least one basis curve")
            if self.knots is None:
                object.__setattr__(
                    self, "knots", as_readonly(np.linspace(0.0, 1.0, self.basis.shape[1]))
                )

    @property
    def n(self) -> int:
        if self.variant == POLYNOMIAL:
            return int(self.pos_coeffs.shape[0])
        return int(self.coeffs.shape[0])

    @property
    def position_degree(self) -> int:
        return int(self.pos_coeffs.shape[1]) - 1

    @property
    def rotation_degree(self) -> int:
        return int(self.rot_coeffs.shape[1]) - 1

    @property
    def basis_count(self) -> int:
        return int(self.basis.shape[0])

    def subset(self, keep: np.ndarray) -> "MotionModel":
        keep = np.asarray(keep)
        if self.variant == POLYNOMIAL:
            return dataclasses.replace(
                self,
                pos_coeffs=self.pos_coeffs[keep],
                rot_coeffs=self.rot_coeffs[keep],
                time_center=self.time_center[keep],
            )
        return dataclasses.replace(self, coeffs=self.coeffs[keep], anchors=self.anchors[keep])

    def replace(self, **changes) -> "MotionModel":
        return dataclasses.replace(self, **changes)

    @classmethod
    def static(cls, base: GaussianCloud, time_center: Optional[np.ndarray] = None,
               position_degree: int = DEFAULT_POSITION_DEGREE,
               rotation_degree: int = DEFAULT_ROTATION_DEGREE) -> "MotionModel":
        """Polynomial model with every higher-order coefficient zero."""
        n = base.n
        pos = np.zeros((n, position_degree + 1, 3))
        pos[:, 0] = base.means
        rot = np.zeros((n, rotation_degree + 1, 4))
        rot[:, 0] = base.rotations
        centers = np.full(n, 0.5) if time_center is None else time_center
        return cls(POLYNOMIAL, pos_coeffs=pos, rot_coeffs=rot, time_center=centers)


@dataclass(frozen=True)
class TemporalOpacity:
    """Per-point temporal kernel centre mu_t and scale s_t > 0."""

    centers: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "centers", as_readonly(self.centers, np.float64))
        object.__setattr__(self, "scales", as_readonly(self.scales, np.float64))

    @property
    def n(self) -> int:
        return int(self.centers.shape[0])

    def subset(self, keep: np.ndarray) -> "TemporalOpacity":
        return TemporalOpacity(self.centers[keep], self.scales[keep])


@dataclass(frozen=True)
class GofSegment:
    """Frames [f_start, f_end) of one group of frames."""

    index: int
    f_start: int
    f_end: int

    @property
    def length(self) -> int:
        return self.f_end - self.f_start

    def frame_to_time(self, frame: int) -> float:
        if self.length <= 1:
            return 0.0
        return (frame - self.f_start) / (self.f_end - self.f_start - 1)

    def time_to_frame(self, t: float) -> int:
        if self.length <= 1:
            return self.f_start
        return self.f_start + int(round(t * (self.f_end - self.f_start - 1)))

    def frame_times(self) -> np.ndarray:
        return np.array([self.frame_to_time(f) for f in range(self.f_start, self.f_end)])


# ---------------------------------------------------------------------------
# Motion evaluation
# ---------------------------------------------------------------------------

def _poly_sum(coeffs: np.ndarray, dt: np.ndarray) -> np.ndarray:
    # coeffs [N, K+1, D], dt [N] -> [N, D]
    out = np.zeros((coeffs.shape[0], coeffs.shape[2]), dtype=np.float64)
    power = np.ones_like(dt)
    for k in range(coeffs.shape[1]):
        out += coeffs[:, k, :] * power[:, None]
        power = power * dt
    return out


def _clamp_time(t: float, time_range: Tuple[float, float]) -> float:
    t0, t1 = time_range
    if t < t0 or t > t1:
        logger.warning(f"time {t} outside [{t0}, {t1}], clamped")
        return float(min(max(t, t0), t1))
    return float(t)


def basis_values(model: MotionModel, t: float) -> np.ndarray:
    """Shared basis curves B_b(t) [B] by linear interpolation of control values."""
    return np.array([np.interp(t, model.knots, curve) for curve in model.basis])


def positions_at(model: MotionModel, t: float) -> np.ndarray:
    """Positions of every point at time t [N, 3] (float64)."""
    if model.variant == POLYNOMIAL:
        return _poly_sum(model.pos_coeffs, t - model.time_center)
    weights = basis_values(model, t)
    return model.anchors + np.einsum("nbd,b->nd", model.coeffs, weights)


def rotations_at(model: MotionModel, t: float, base_rotations: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Unit rotations of every point at time t [N, 4].

    Raises:
        QuaternionError: The polynomial sum vanishes for some point
    """
    if model.variant == BASIS:
        if base_rotations is None:
            raise ParameterError("basis motion keeps base rotations; pass them in")
        return np.asarray(base_rotations, dtype=np.float64)
    q = _poly_sum(model.rot_coeffs, t - model.time_center)
    norms = np.linalg.norm(q, axis=1)
    zero = np.flatnonzero(~(norms > 0))
    if zero.size:
        raise QuaternionError(int(zero[0]))
    return q / norms[:, None]


def eval_motion_poly(model: MotionModel, i: int, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Evaluate the polynomial trajectory of point i at time t.

    Returns:
        position [3], unit rotation [4]
    """
    if model.variant != POLYNOMIAL:
        raise ParameterError("eval_motion_poly needs a polynomial motion model")
    dt = np.array([t - model.time_center[i]])
    position = _poly_sum(model.pos_coeffs[i:i + 1], dt)[0]
    q = _poly_sum(model.rot_coeffs[i:i + 1], dt)[0]
    norm = np.linalg.norm(q)
    if not norm > 0:
        raise QuaternionError(i)
    return position, q / norm


def eval_motion_basis(model: MotionModel, i: int, t: float,
                      time_range: Tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    """Position [3] of point i at time t under the shared-basis model."""
    if model.variant != BASIS:
        raise ParameterError("eval_motion_basis needs a basis motion model")
    t = _clamp_time(t, time_range)
    return model.anchors[i] + basis_values(model, t) @ model.coeffs[i]


# ---------------------------------------------------------------------------
# Temporal opacity
# ---------------------------------------------------------------------------

def temporal_kernel(top: TemporalOpacity, t: float) -> np.ndarray:
    return np.exp(-((t - top.centers) ** 2) / (2.0 * top.scales ** 2))


def eval_temporal_opacity(top: TemporalOpacity, i: int, base_opacity: float, t: float) -> float:
    """alpha_i(t) = base_opacity * exp(-(t - mu_t)^2 / (2 s_t^2))."""
    s = top.scales[i]
    return float(base_opacity * math.exp(-((t - top.centers[i]) ** 2) / (2.0 * s * s)))


def lifespan(top: TemporalOpacity, i: int, base_opacity: float, tau: float) -> Optional[Tuple[float, float]]:
    """
    Time interval over which alpha_i(t) >= tau.

    Returns:
        (t_in, t_out), or None when the point never reaches tau
    """
    if not tau > 0:
        raise ParameterError(f"lifespan threshold must be > 0, got {tau}")
    if base_opacity < tau:
        return None
    half = top.scales[i] * math.sqrt(2.0 * math.log(base_opacity / tau))
    mu = top.centers[i]
    return (float(mu - half), float(mu + half))


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def fit_poly_trajectory(times: np.ndarray, samples: np.ndarray, degree: int,
                        time_center: float) -> np.ndarray:
    """
    Least-squares polynomial fit in (t - time_center).

    Args:
        times: Sample times [J]
        samples: Sample values [J, D] (positions or quaternions)
        degree: Polynomial degree K
        time_center: Expansion point mu_t

    Returns:
        Coefficients [K+1, D]; exact interpolation when J = K+1

    Raises:
        ParameterError: fewer than K+1 distinct sample times
    """
    times = np.asarray(times, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if degree < 0:
        raise ParameterError(f"degree must be >= 0, got {degree}")
    if np.unique(times).size < degree + 1:
        raise ParameterError(
            f"rank-deficient fit: {np.unique(times).size} distinct times for degree {degree}"
        )
    vander = np.vander(times - time_center, degree + 1, increasing=True)
    coeffs, *_ = np.linalg.lstsq(vander, samples, rcond=None)
    return coeffs


class BasisFit(NamedTuple):
    basis: np.ndarray          # [B, T] shared curves
    coefficients: np.ndarray   # [N, B, 3]
    anchors: np.ndarray        # [N, 3] per-point temporal mean
    residual: float            # squared Frobenius residual


def fit_basis_pca(trajectories: np.ndarray, num_bases: int) -> BasisFit:
    """
    Shared motion basis by truncated SVD.

    Each (point, axis) trajectory is one row of a [3N, T] matrix, centred by
    its temporal mean. The rank-B truncation is optimal, so the residual is
    the sum of squared discarded singular values.

    Args:
        trajectories: Positions over time [N, T, 3]
        num_bases: Number of shared curves B

    Returns:
        BasisFit
    """
    if num_bases <= 0:
        raise ParameterError(f"basis count must be > 0, got {num_bases}")
    traj = np.asarray(trajectories, dtype=np.float64)
    n, t, d = traj.shape
    rows = traj.transpose(0, 2, 1).reshape(n * d, t)
    anchors = rows.mean(axis=1, keepdims=True)
    centred = rows - anchors

    u, s, vt = np.linalg.svd(centred, full_matrices=False)
    b = min(num_bases, s.size)
    if b < num_bases:
        logger.warning(f"basis count {num_bases} exceeds rank bound {s.size}; using {b}")

    basis = vt[:b]
    coefficients = (u[:, :b] * s[:b]).reshape(n, d, b).transpose(0, 2, 1)
    residual = float(np.sum(s[b:] ** 2))
    return BasisFit(basis, coefficients, anchors.reshape(n, d), residual)


def basis_motion_from_fit(fit: BasisFit, times: np.ndarray,
                          n_ctrl: int = DEFAULT_CONTROL_POINTS) -> MotionModel:
    """Resample fitted basis curves onto `n_ctrl` evenly spaced control points."""
    knots = np.linspace(0.0, 1.0, n_ctrl)
    times = np.asarray(times, dtype=np.float64)
    basis = np.stack([np.interp(knots, times, curve) for curve in fit.basis])
    return MotionModel(BASIS, basis=basis, knots=knots, coeffs=fit.coefficients, anchors=fit.anchors)


def reconstruct_trajectories(fit: BasisFit) -> np.ndarray:
    """[N, T, 3] trajectories from a basis fit."""
    return fit.anchors[:, None, :] + np.einsum("nbd,bt->ntd", fit.coefficients, fit.basis)


# ---------------------------------------------------------------------------
# Slicing and segmentation
# ---------------------------------------------------------------------------

def opacities_at(dyncloud: DynamicGaussianCloud, t: float) -> np.ndarray:
    """Activated opacity of every point at time t [N]."""
    base = dyncloud.base.opacities
    if dyncloud.temporal_opacity is None:
        return base
    return base * temporal_kernel(dyncloud.temporal_opacity, t)


def slice_at_time(dyncloud: DynamicGaussianCloud, t: float) -> GaussianCloud:
    """
    Static cloud at time t.

    Means/rotations come from the motion model, opacity is alpha(t) stored
    back as a logit, and points with alpha(t) < 1/255 are dropped.
    """
    t = _clamp_time(t, dyncloud.time_range)
    base = dyncloud.base
    means = positions_at(dyncloud.motion, t)
    rotations = rotations_at(dyncloud.motion, t, base.rotations)
    alpha = opacities_at(dyncloud, t)
    keep = alpha >= SLICE_ALPHA_CUTOFF

    if dyncloud.temporal_opacity is None:
        logits = base.opacity_logits[:, 0]
    else:
        logits = logit(alpha)

    sliced = GaussianCloud(
        means=means,
        rotations=rotations,
        log_scales=base.log_scales,
        opacity_logits=logits,
        sh0=base.sh0,
        shN=base.shN,
        features=base.features,
        flags=base.flags,
    )
    return sliced.subset(keep)


def segment_gof(frame_count: int, gof_len: int) -> List[GofSegment]:
    """
    Partition frames into consecutive groups of `gof_len` (last may be shorter).

    Example: 300 frames, gof_len=50 -> 6 segments of 50.
    """
    if gof_len < 1:
        raise ParameterError(f"gof_len must be >= 1, got {gof_len}")
    segments = []
    for index, start in enumerate(range(0, frame_count, gof_len)):
        segments.append(GofSegment(index, start, min(start + gof_len, frame_count)))
    return segments


def count_parameters(dyncloud: DynamicGaussianCloud) -> Dict[str, int]:
    """Stored float counts of a dynamic representation, per component."""
    base = dyncloud.base
    counts = {
        "means": base.means.size,
        "rotations": base.rotations.size,
        "log_scales": base.log_scales.size,
        "opacity": base.opacity_logits.size,
        "sh": base.sh0.size + base.shN.size,
        "features": 0 if base.features is None else base.features.size,
    }
    motion = dyncloud.motion
    if motion.variant == POLYNOMIAL:
        # a_0 / r_0 duplicate the base mean / rotation
        counts["motion"] = motion.pos_coeffs[:, 1:].size + motion.rot_coeffs[:, 1:].size + motion.time_center.size
    else:
        counts["motion"] = motion.coeffs.size + motion.basis.size
    top = dyncloud.temporal_opacity
    counts["temporal_opacity"] = 0 if top is None else top.centers.size + top.scales.size
    counts["total"] = int(sum(counts.values()))
    return {k: int(v) for k, v in counts.items()}


def zero_motion(dyncloud: DynamicGaussianCloud, static: np.ndarray) -> DynamicGaussianCloud:
    """
    Zero every higher-order motion term of points marked static and flag them.

    Static basis points are pinned to their position at the GOF centre time,
    which becomes both their anchor and their base mean.
    """
    static = np.asarray(static, dtype=bool)
    motion = dyncloud.motion
    if motion.variant == POLYNOMIAL:
        pos = np.array(motion.pos_coeffs)
        rot = np.array(motion.rot_coeffs)
        pos[static, 1:] = 0.0
        rot[static, 1:] = 0.0
        motion = motion.replace(pos_coeffs=pos, rot_coeffs=rot)
    base = dyncloud.base
    if motion.variant == BASIS:
        centre = positions_at(motion, 0.5 * (dyncloud.time_range[0] + dyncloud.time_range[1]))
        anchors = np.array(motion.anchors, dtype=np.float64)
        anchors[static] = centre[static]
        coeffs = np.array(motion.coeffs)
        coeffs[static] = 0.0
        motion = motion.replace(coeffs=coeffs, anchors=anchors)
        means = np.array(base.means, copy=True)
        means[static] = centre[static]
        base = base.replace(means=means)
    flags = base.point_flags().copy()
    flags[static] |= FLAG_STATIC
    return dyncloud.replace(motion=motion, base=base.replace(flags=flags))
