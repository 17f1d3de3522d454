"""
GSCodec - Reference Renderer
============================
CPU splatting renderer for static clouds and time slices of dynamic ones.

Every splat is projected to a 2D Gaussian (EWA with a 0.3 px^2 low-pass
dilation), splats are sorted once by camera depth (ties by point index) and
composited front to back per pixel. Rows are rendered in parallel; each
pixel's loop runs sequentially in depth order, so output is independent of
the thread count.

Pixel centres sit at integer coordinates: pixel (u, v) covers (u, v) in
image space, so a point on the optical axis lands at (cx, cy).
"""

import json
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Union

import numba
import numpy as np
from PIL import Image

from .dyncore import slice_at_time
from .errors import ParameterError
from .model import DynamicGaussianCloud, GaussianCloud
from .utils import quaternion_to_rotmat, sh_basis

DILATION = 0.3
ALPHA_MAX = 0.999
ALPHA_MIN = 1.0 / 255.0


@dataclass(frozen=True)
class Camera:
    """
    Pinhole camera, OpenCV axes (x right, y down, z forward).

    Args:
        fx, fy: Focal lengths in pixels (> 0)
        cx, cy: Principal point in pixels
        width, height: Image size in pixels
        rotation: World-to-camera rotation [3, 3]
        translation: World-to-camera translation [3]
        near, far: Clip distances along z (0 < near < far)
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    near: float = 0.01
    far: float = 1000.0

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)
        if not (self.fx > 0 and self.fy > 0):
            raise ParameterError(f"focal lengths must be > 0, got ({self.fx}, {self.fy})")
        if not 0 < self.near < self.far:
            raise ParameterError(f"clip planes must satisfy 0 < near < far, got ({self.near}, {self.far})")
        if self.width < 1 or self.height < 1:
            raise ParameterError(f"image size must be positive, got {self.width}x{self.height}")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world space."""
        return -self.rotation.T @ self.translation

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
            "near": self.near, "far": self.far,
        }

    @classmethod
    def from_dict(cls, values: dict) -> "Camera":
        try:
            return cls(
                fx=float(values["fx"]), fy=float(values["fy"]),
                cx=float(values["cx"]), cy=float(values["cy"]),
                width=int(values["width"]), height=int(values["height"]),
                rotation=values.get("rotation", np.eye(3)),
                translation=values.get("translation", np.zeros(3)),
                near=float(values.get("near", 0.01)), far=float(values.get("far", 1000.0)),
            )
        except KeyError as exc:
            raise ParameterError(f"camera is missing field {exc}") from None

    @classmethod
    def look_at(cls, eye: Sequence[float], target: Sequence[float], width: int, height: int,
                fov_deg: float = 60.0, up: Sequence[float] = (0.0, -1.0, 0.0), **clip) -> "Camera":
        """Camera at `eye` looking at `target`; `up` is the world direction shown at the top of the image."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        down = -np.asarray(up, dtype=np.float64)
        right = np.cross(down, forward)
        norm = np.linalg.norm(right)
        if norm < 1e-12:
            raise ParameterError("view direction is parallel to the up vector")
        right /= norm
        down = np.cross(forward, right)
        rotation = np.stack([right, down, forward])
        focal = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(focal, focal, (width - 1) / 2, (height - 1) / 2, width, height,
                   rotation, -rotation @ eye, **clip)


@dataclass
class ImageBuffer:
    """H x W x 3 linear RGB in [0, 1], row-major."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ParameterError(f"image must be H x W x 3, got {pixels.shape}")
        self.pixels = pixels

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    def to_uint8(self) -> np.ndarray:
        return np.floor(np.clip(self.pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)

    def save(self, path: str):
        Image.fromarray(self.to_uint8(), mode="RGB").save(path)

    @classmethod
    def load(cls, path: str) -> "ImageBuffer":
        with Image.open(path) as image:
            return cls(np.asarray(image.convert("RGB"), dtype=np.float64) / 255.0)


class ProjectedGaussian(NamedTuple):
    mean2d: np.ndarray      # [2]
    cov2d: np.ndarray       # [2, 2]
    depth: float
    culled: bool = False


# ---------------------------------------------------------------------------
# Projection and shading
# ---------------------------------------------------------------------------

def covariance_3d(rotations: np.ndarray, log_scales: np.ndarray) -> np.ndarray:
    """Sigma = R S S^T R^T per point, [N, 3, 3]."""
    R = quaternion_to_rotmat(rotations)
    M = R * np.exp(np.asarray(log_scales, dtype=np.float64))[:, None, :]
    return M @ np.transpose(M, (0, 2, 1))


def project_points(means: np.ndarray, rotations: np.ndarray, log_scales: np.ndarray, camera: Camera):
    """
    Vectorised EWA projection.

    Returns:
        (mean2d [N, 2], cov2d [N, 2, 2], depth [N], visible [N] bool);
        entries of culled points are finite but meaningless
    """
    means = np.asarray(means, dtype=np.float64).reshape(-1, 3)
    W = camera.rotation
    p = means @ W.T + camera.translation
    depth = p[:, 2]
    visible = (depth > camera.near) & (depth < camera.far)
    z = np.where(visible, depth, 1.0)
    x, y = p[:, 0], p[:, 1]

    mean2d = np.stack([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy], axis=1)
    J = np.zeros((means.shape[0], 2, 3))
    J[:, 0, 0] = camera.fx / z
    J[:, 0, 2] = -camera.fx * x / (z * z)
    J[:, 1, 1] = camera.fy / z
    J[:, 1, 2] = -camera.fy * y / (z * z)

    T = J @ W
    cov2d = T @ covariance_3d(rotations, log_scales) @ np.transpose(T, (0, 2, 1))
    cov2d[:, 0, 0] += DILATION
    cov2d[:, 1, 1] += DILATION
    return mean2d, cov2d, depth, visible


def project_gaussian(mean: np.ndarray, rotation: np.ndarray, log_scales: np.ndarray,
                     camera: Camera) -> ProjectedGaussian:
    """
    Project one Gaussian: Sigma2d = J W Sigma3d W^T J^T + 0.3 I.

    Points outside the near/far range come back with culled=True.
    """
    mean2d, cov2d, depth, visible = project_points(
        np.reshape(mean, (1, 3)), np.reshape(rotation, (1, 4)), np.reshape(log_scales, (1, 3)), camera
    )
    return ProjectedGaussian(mean2d[0], cov2d[0], float(depth[0]), not bool(visible[0]))


def eval_sh(sh0: np.ndarray, shN: np.ndarray, view_dir: np.ndarray) -> np.ndarray:
    """
    View-dependent colour: clamp(0.5 + sum_k Y_k(d) c_k, 0, 1).

    Args:
        sh0: Degree-0 coefficients [N, 3] (or [3])
        shN: Higher-order coefficients [N, M, 3] (or [M, 3])
        view_dir: Unit directions from camera to point [N, 3] (or [3])

    Returns:
        RGB [N, 3] (or [3])
    """
    single = np.ndim(sh0) == 1
    sh0 = np.atleast_2d(np.asarray(sh0, dtype=np.float64))
    shN = np.asarray(shN, dtype=np.float64)
    if single:
        shN = shN[None]
    shN = shN.reshape(sh0.shape[0], -1, 3)
    dirs = np.atleast_2d(np.asarray(view_dir, dtype=np.float64))

    degree = int(round(np.sqrt(shN.shape[1] + 1))) - 1
    coeffs = np.concatenate([sh0[:, None, :], shN], axis=1)
    basis = sh_basis(dirs, degree)
    rgb = np.clip(np.einsum("nk,nkc->nc", basis, coeffs) + 0.5, 0.0, 1.0)
    return rgb[0] if single else rgb


# ---------------------------------------------------------------------------
# Compositing
# ---------------------------------------------------------------------------

@numba.jit(nopython=True, parallel=True, cache=True)
def _composite(order, mean2d, conic, opacity, colors, radius, background, out):
    height, width = out.shape[0], out.shape[1]
    for y in numba.prange(height):
        transmittance = np.ones(width)
        acc = np.zeros((width, 3))
        for k in range(order.size):
            i = order[k]
            r = radius[i]
            dy = y - mean2d[i, 1]
            if dy > r or dy < -r:
                continue
            x0 = max(0, int(np.ceil(mean2d[i, 0] - r)))
            x1 = min(width - 1, int(np.floor(mean2d[i, 0] + r)))
            for x in range(x0, x1 + 1):
                dx = x - mean2d[i, 0]
                power = -0.5 * (conic[i, 0] * dx * dx + 2.0 * conic[i, 1] * dx * dy + conic[i, 2] * dy * dy)
                alpha = min(ALPHA_MAX, opacity[i] * np.exp(power))
                if alpha < ALPHA_MIN:
                    continue
                weight = alpha * transmittance[x]
                for c in range(3):
                    acc[x, c] += colors[i, c] * weight
                transmittance[x] *= 1.0 - alpha
        for x in range(width):
            for c in range(3):
                out[y, x, c] = acc[x, c] + background[c] * transmittance[x]


def render(cloud: GaussianCloud, camera: Camera, background: Sequence[float] = (0.0, 0.0, 0.0)) -> ImageBuffer:
    """
    Alpha-composite the cloud front to back.

    alpha_k = min(opacity_k * exp(-d^T Sigma2d^-1 d / 2), 0.999), splats with
    alpha < 1/255 at a pixel are skipped; the remaining transmittance goes
    to the background.
    """
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    out = np.zeros((camera.height, camera.width, 3))
    if cloud.n == 0:
        out[:] = bg
        return ImageBuffer(out)

    mean2d, cov2d, depth, visible = project_points(cloud.means, cloud.rotations, cloud.log_scales, camera)
    opacity = cloud.opacities
    visible &= opacity >= ALPHA_MIN

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    visible &= det > 0
    det = np.where(visible, det, 1.0)
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    # Beyond this radius alpha < 1/255 even along the major axis
    largest = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    reach = 2.0 * np.log(np.maximum(255.0 * opacity, 1.0))
    radius = np.sqrt(np.maximum(largest, 0.0) * reach)

    view = np.asarray(cloud.means, dtype=np.float64) - camera.center
    view /= np.maximum(np.linalg.norm(view, axis=1, keepdims=True), 1e-12)
    colors = eval_sh(cloud.sh0, cloud.shN, view)

    index = np.flatnonzero(visible)
    order = index[np.lexsort((index, depth[index]))]
    _composite(order.astype(np.int64), mean2d, conic, opacity, colors, radius, bg, out)
    return ImageBuffer(out)


def render_at_time(dyncloud: DynamicGaussianCloud, camera: Camera, t: float,
                   background: Sequence[float] = (0.0, 0.0, 0.0)) -> ImageBuffer:
    """Render the dynamic cloud as it appears at normalised time t."""
    return render(slice_at_time(dyncloud, t), camera, background)


def render_views(source: Union[GaussianCloud, DynamicGaussianCloud], cameras: Sequence[Camera],
                 t: Optional[float] = None) -> List[ImageBuffer]:
    if isinstance(source, DynamicGaussianCloud):
        return [render_at_time(source, cam, 0.0 if t is None else t) for cam in cameras]
    return [render(source, cam) for cam in cameras]


def load_cameras(path: str) -> List[Camera]:
    """Read one camera object or a list of them from JSON."""
    with open(path, "r", encoding="utf-8") as f:
        values = json.load(f)
    if isinstance(values, dict):
        values = [values]
    return [Camera.from_dict(v) for v in values]


def save_cameras(path: str, cameras: Sequence[Camera]):
    with open(path, "w", encoding="utf-8") as f:
        json.dump([c.to_dict() for c in cameras], f, indent=2)


__all__ = [
    "Camera", "ImageBuffer", "ProjectedGaussian", "covariance_3d", "project_points",
    "project_gaussian", "eval_sh", "render", "render_at_time", "render_views",
    "load_cameras", "save_cameras",
]
