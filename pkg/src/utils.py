"""
GSCodec - Utility Functions
===========================
Shared math helpers: opacity activations, quaternion algebra, real
spherical-harmonics basis and feature normalisation.
"""

import struct

import numpy as np
from scipy.special import expit, logit as _logit
from typing import Dict, Optional

from .errors import ParameterError


# Real SH constants used by 3DGS checkpoints (degree 0..3).
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

# Number of higher-order SH coefficients per colour channel for degree 0..3.
SH_REST_COUNTS: Dict[int, int] = {0: 0, 1: 3, 2: 8, 3: 15}


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Opacity activation, evaluated in float64."""
    return expit(np.asarray(x, dtype=np.float64))


def logit(p: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """Inverse of sigmoid; `eps` clamps p away from {0, 1} when non-zero."""
    p = np.asarray(p, dtype=np.float64)
    if eps > 0:
        p = np.clip(p, eps, 1.0 - eps)
    return _logit(p)


def sh_degree_from_rest(m: int) -> int:
    """
    Infer SH degree from the number of higher-order coefficients per channel.

    Args:
        m: Coefficients per colour channel, (D+1)^2 - 1

    Returns:
        SH degree D in 0..3
    """
    for degree, count in SH_REST_COUNTS.items():
        if count == m:
            return degree
    raise ParameterError(f"unsupported SH coefficient count {m} (expected one of 0, 3, 8, 15)")


def quaternion_norms(q: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(q, dtype=np.float64), axis=-1)


def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    """Unit-normalise (..., 4) quaternions stored as (w, x, y, z)."""
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quaternion_to_rotmat(q: np.ndarray) -> np.ndarray:
    """
    Build rotation matrices from (w, x, y, z) quaternions.

    The input is normalised first, so q and -q give identical matrices.

    Args:
        q: Quaternions [N, 4]

    Returns:
        Rotation matrices [N, 3, 3] in float64
    """
    q = normalize_quaternions(q)
    r, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]

    R = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - r * z)
    R[:, 0, 2] = 2 * (x * z + r * y)
    R[:, 1, 0] = 2 * (x * y + r * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - r * x)
    R[:, 2, 0] = 2 * (x * z - r * y)
    R[:, 2, 1] = 2 * (y * z + r * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """
    Evaluate the signed real SH basis used by 3DGS shading.

    Args:
        dirs: Unit view directions [N, 3]
        degree: SH degree 0..3

    Returns:
        Basis values [N, (degree+1)^2]; column 0 is the constant term
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    n = dirs.shape[0]
    out = np.empty((n, (degree + 1) ** 2), dtype=np.float64)
    out[:, 0] = SH_C0
    if degree == 0:
        return out

    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    out[:, 1] = -SH_C1 * y
    out[:, 2] = SH_C1 * z
    out[:, 3] = -SH_C1 * x
    if degree == 1:
        return out

    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    out[:, 4] = SH_C2[0] * xy
    out[:, 5] = SH_C2[1] * yz
    out[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
    out[:, 7] = SH_C2[3] * xz
    out[:, 8] = SH_C2[4] * (xx - yy)
    if degree == 2:
        return out

    out[:, 9] = SH_C3[0] * y * (3 * xx - yy)
    out[:, 10] = SH_C3[1] * xy * z
    out[:, 11] = SH_C3[2] * y * (4 * zz - xx - yy)
    out[:, 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
    out[:, 13] = SH_C3[4] * x * (4 * zz - xx - yy)
    out[:, 14] = SH_C3[5] * z * (xx - yy)
    out[:, 15] = SH_C3[6] * x * (xx - 3 * yy)
    return out


def normalize_features(features: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """
    Min-max normalisation of each feature column to [0, 1].

    Constant columns map to 0 instead of dividing by zero.

    Args:
        features: Feature matrix [N, C]
        eps: Range below which a column counts as constant

    Returns:
        Normalised float64 feature matrix [N, C]
    """
    features = np.asarray(features, dtype=np.float64)
    lo = features.min(axis=0, keepdims=True)
    span = features.max(axis=0, keepdims=True) - lo

    # Replace zero span with 1 to avoid NaN
    span = np.where(span < eps, 1.0, span)

    return (features - lo) / span


def morton_codes(points: np.ndarray, bits: int = 10) -> np.ndarray:
    """
    Interleave quantised x/y/z coordinates into Morton (Z-order) codes.

    Args:
        points: Positions [N, 3]
        bits: Bits per axis (<= 21)

    Returns:
        uint64 codes [N]
    """
    grid = normalize_features(points)
    q = np.minimum((grid * (1 << bits)).astype(np.uint64), np.uint64((1 << bits) - 1))
    codes = np.zeros(points.shape[0], dtype=np.uint64)
    for b in range(bits):
        for axis in range(3):
            bit = (q[:, axis] >> np.uint64(b)) & np.uint64(1)
            codes |= bit << np.uint64(3 * b + axis)
    return codes


def as_readonly(array: Optional[np.ndarray], dtype=None) -> Optional[np.ndarray]:
    """Copy into a contiguous array and mark it immutable."""
    if array is None:
        return None
    out = np.array(array, dtype=dtype, copy=True, order="C")
    out.setflags(write=False)
    return out


class ByteReader:
    """
    Sequential little-endian reader over a byte buffer.

    Args:
        data: Buffer to read
        error: Exception class raised when a read runs past the end
        what: Name used in the error message
    """

    def __init__(self, data: bytes, error: type = ValueError, what: str = "buffer"):
        self.data = memoryview(bytes(data))
        self.pos = 0
        self.error = error
        self.what = what

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, count: int) -> bytes:
        if count < 0 or self.pos + count > len(self.data):
            raise self.error(f"truncated {self.what}: need {count} byte(s) at offset {self.pos}")
        chunk = bytes(self.data[self.pos:self.pos + count])
        self.pos += count
        return chunk

    def unpack(self, fmt: str) -> tuple:
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count: int) -> np.ndarray:
        dtype = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype).copy()


def pack_array(values: np.ndarray, dtype) -> bytes:
    """Little-endian raw bytes of `values` cast to `dtype`."""
    return np.ascontiguousarray(values, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()
