"""
GSCodec - Synthetic Scenes
==========================
Procedural static clouds, dynamic GOF sequences and orbit cameras for the
test suite, the end-to-end run and the data generator.
"""

from typing import List, Tuple

import numpy as np

from .dyncore import POLYNOMIAL, GofSegment, MotionModel, TemporalOpacity, segment_gof
from .model import DynamicGaussianCloud, GaussianCloud
from .render import Camera
from .utils import SH_C0, SH_REST_COUNTS, logit, normalize_quaternions


def make_cloud(n: int = 10000, sh_degree: int = 0, seed: int = 0, clusters: int = 8,
               extent: float = 1.0, feature_dim: int = 0) -> GaussianCloud:
    """
    Clustered cloud: points scattered around `clusters` centres, each cluster
    with its own base colour, so neighbouring points carry similar attributes.
    """
    rng = np.random.default_rng(seed)
    centres = rng.uniform(-extent, extent, size=(clusters, 3))
    palette = rng.uniform(0.1, 0.9, size=(clusters, 3))
    member = rng.integers(0, clusters, size=n)

    means = centres[member] + rng.normal(0.0, 0.08 * extent, size=(n, 3))
    rgb = np.clip(palette[member] + rng.normal(0.0, 0.03, size=(n, 3)), 0.0, 1.0)
    quats = normalize_quaternions(rng.normal(size=(n, 4)))
    quats[quats[:, 0] < 0] *= -1
    log_scales = np.log(rng.uniform(0.004, 0.03, size=(n, 3)) * extent)
    opacity = logit(rng.uniform(0.3, 0.99, size=n))

    rest = SH_REST_COUNTS[sh_degree]
    shN = rng.normal(0.0, 0.05, size=(n, rest, 3)) if rest else None
    features = rng.normal(size=(n, feature_dim)) if feature_dim else None
    return GaussianCloud(
        means=means,
        rotations=quats,
        log_scales=log_scales,
        opacity_logits=opacity,
        sh0=(rgb - 0.5) / SH_C0,
        shN=shN,
        features=features,
    )


def make_dynamic_sequence(n: int = 2000, frame_count: int = 120, gof_len: int = 30,
                          static_fraction: float = 0.8, seed: int = 0, sh_degree: int = 0,
                          temporal_opacity: bool = True) -> Tuple[List[DynamicGaussianCloud], List[GofSegment]]:
    """
    A scene where the moving points follow p(u) = p0 + v u + a u^2 in global
    time u = frame / frame_count; every GOF carries the exact cubic expansion
    of that path around its time centre 0.5.

    Temporal opacity centres and scales are drawn once in global time and
    re-expressed in each GOF's local time.

    Returns:
        (one dynamic cloud per GOF, GOF segments)
    """
    rng = np.random.default_rng(seed)
    base = make_cloud(n, sh_degree=sh_degree, seed=seed)
    moving = rng.random(n) >= static_fraction
    velocity = np.where(moving[:, None], rng.normal(0.0, 0.3, size=(n, 3)), 0.0)
    accel = np.where(moving[:, None], rng.normal(0.0, 0.2, size=(n, 3)), 0.0)
    spin = np.where(moving[:, None], rng.normal(0.0, 0.05, size=(n, 4)), 0.0)

    if temporal_opacity:
        centres = rng.uniform(0.0, 1.0, size=n)
        scales = np.where(moving, rng.uniform(0.4, 1.5, size=n), 10.0)

    segments = segment_gof(frame_count, gof_len)
    clouds = []
    for segment in segments:
        alpha = segment.f_start / frame_count
        beta = max(segment.length - 1, 0) / frame_count
        mu = 0.5
        u0 = alpha + beta * mu

        pos = np.zeros((n, 4, 3))
        pos[:, 0] = base.means + velocity * u0 + accel * u0 ** 2
        pos[:, 1] = (velocity + 2.0 * accel * u0) * beta
        pos[:, 2] = accel * beta ** 2
        rot = np.zeros((n, 2, 4))
        rot[:, 0] = base.rotations
        rot[:, 1] = spin
        motion = MotionModel(POLYNOMIAL, pos_coeffs=pos, rot_coeffs=rot, time_center=np.full(n, mu))

        top = None
        if temporal_opacity:
            span = max(beta, 1.0 / frame_count)
            top = TemporalOpacity((centres - alpha) / span, scales / span)
        gof_base = base.replace(means=pos[:, 0])
        clouds.append(DynamicGaussianCloud(gof_base, motion, top, (0.0, 1.0), segment.index))
    return clouds, segments


def orbit_cameras(count: int = 4, width: int = 64, height: int = 64, radius: float = 3.5,
                  elevation: float = 0.8, fov_deg: float = 60.0) -> List[Camera]:
    """Cameras evenly spaced on a circle around the origin, looking at it."""
    cameras = []
    for k in range(count):
        angle = 2.0 * np.pi * k / count
        eye = (radius * np.cos(angle), elevation, radius * np.sin(angle))
        cameras.append(Camera.look_at(eye, (0.0, 0.0, 0.0), width, height, fov_deg, up=(0.0, 1.0, 0.0)))
    return cameras


__all__ = ["make_cloud", "make_dynamic_sequence", "orbit_cameras"]
