"""
GSCodec - Data Loader
=====================
PLY import/export in the community 3DGS vertex layout, plus a compact
.npz container for dynamic GOF sequences.
"""

import io
import os
from typing import Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from plyfile import PlyData, PlyElement, PlyElementParseError, PlyHeaderParseError

from .dyncore import GofSegment, MotionModel, TemporalOpacity
from .errors import (
    EmptyCloudError,
    PlyHeaderError,
    PlyPropertyError,
    PlyTruncatedError,
)
from .model import DynamicGaussianCloud, GaussianCloud
from .utils import SH_REST_COUNTS

POSITION_PROPS = ["x", "y", "z"]
DC_PROPS = [f"f_dc_{i}" for i in range(3)]
OPACITY_PROP = "opacity"
SCALE_PROPS = [f"scale_{i}" for i in range(3)]
ROT_PROPS = [f"rot_{i}" for i in range(4)]
REQUIRED_PROPS = POSITION_PROPS + DC_PROPS + [OPACITY_PROP] + SCALE_PROPS + ROT_PROPS


def _header_length(data: bytes) -> int:
    marker = data.find(b"end_header")
    if marker < 0:
        return 0
    end = data.find(b"\n", marker)
    return len(data) if end < 0 else end + 1


def _indexed_props(names: List[str], prefix: str) -> List[str]:
    found = sorted(
        (n for n in names if n.startswith(prefix) and n[len(prefix):].isdigit()),
        key=lambda n: int(n[len(prefix):]),
    )
    expected = [f"{prefix}{i}" for i in range(len(found))]
    if found != expected:
        missing = sorted(set(expected) - set(found), key=lambda n: int(n[len(prefix):]))
        raise PlyPropertyError(f"non-contiguous '{prefix}*' properties", prop=missing[0] if missing else prefix)
    return found


def load_ply(data: bytes) -> GaussianCloud:
    """
    Parse a 3DGS PLY (binary little-endian or ASCII) into a GaussianCloud.

    f_rest channels are stored channel-major (all R coefficients, then G,
    then B) and are de-interleaved into [N, M, 3].

    Args:
        data: Raw PLY bytes

    Returns:
        GaussianCloud with N = vertex count

    Raises:
        PlyHeaderError: Malformed header
        PlyTruncatedError: Payload shorter than the header promises
        PlyPropertyError: Missing required property or bad f_rest count
        EmptyCloudError: Zero vertices
    """
    header_len = _header_length(data)
    try:
        ply = PlyData.read(io.BytesIO(data))
    except PlyHeaderParseError as exc:
        line = getattr(exc, "line", None)
        offset = 0
        if line:
            offset = sum(len(l) + 1 for l in data.split(b"\n")[: max(line - 1, 0)])
        raise PlyHeaderError(f"malformed PLY header: {exc.message}", offset=offset) from exc
    except PlyElementParseError as exc:
        prop = getattr(exc.prop, "name", None) if getattr(exc, "prop", None) is not None else None
        raise PlyTruncatedError(
            f"truncated or malformed payload: {exc.message}",
            offset=len(data) if header_len else 0,
            prop=prop,
        ) from exc
    except (ValueError, EOFError, StopIteration) as exc:
        raise PlyTruncatedError(f"unreadable payload: {exc}", offset=header_len) from exc

    if "vertex" not in [el.name for el in ply.elements]:
        raise PlyHeaderError("no 'vertex' element in header", offset=0)
    vertex = ply["vertex"].data
    names = list(vertex.dtype.names)

    for prop in REQUIRED_PROPS:
        if prop not in names:
            raise PlyPropertyError("missing required property", offset=header_len, prop=prop)

    n = len(vertex)
    if n == 0:
        raise EmptyCloudError("PLY has zero vertices", offset=header_len)

    stack = lambda props: np.stack([np.asarray(vertex[p], dtype=np.float32) for p in props], axis=1)

    rest = _indexed_props(names, "f_rest_")
    if len(rest) % 3 != 0 or len(rest) // 3 not in SH_REST_COUNTS.values():
        raise PlyPropertyError(
            f"unsupported f_rest count {len(rest)}", offset=header_len, prop="f_rest_0"
        )
    m = len(rest) // 3
    if m:
        shN = stack(rest).reshape(n, 3, m).transpose(0, 2, 1)
    else:
        shN = np.zeros((n, 0, 3), dtype=np.float32)

    feats = _indexed_props(names, "feat_")
    features = stack(feats) if feats else None
    flags = np.asarray(vertex["flags"], dtype=np.uint8) if "flags" in names else None

    return GaussianCloud(
        means=stack(POSITION_PROPS),
        rotations=stack(ROT_PROPS),
        log_scales=stack(SCALE_PROPS),
        opacity_logits=stack([OPACITY_PROP]),
        sh0=stack(DC_PROPS),
        shN=shN,
        features=features,
        flags=flags,
    )


def save_ply(cloud: GaussianCloud) -> bytes:
    """
    Serialise a cloud as binary little-endian PLY.

    Property order: x y z, f_dc_*, f_rest_*, opacity, scale_*, rot_*,
    then optional feat_* and flags.

    Raises:
        EmptyCloudError: N = 0
    """
    n = cloud.n
    if n == 0:
        raise EmptyCloudError("refusing to write an empty cloud")

    m = cloud.sh_rest
    rest = [f"f_rest_{i}" for i in range(3 * m)]
    feats = [] if cloud.features is None else [f"feat_{i}" for i in range(cloud.features.shape[1])]
    float_props = POSITION_PROPS + DC_PROPS + rest + [OPACITY_PROP] + SCALE_PROPS + ROT_PROPS + feats
    dtype = [(p, "<f4") for p in float_props]
    if cloud.flags is not None:
        dtype.append(("flags", "u1"))

    columns = [
        cloud.means,
        cloud.sh0,
        np.asarray(cloud.shN).transpose(0, 2, 1).reshape(n, 3 * m),
        cloud.opacity_logits,
        cloud.log_scales,
        cloud.rotations,
    ]
    if cloud.features is not None:
        columns.append(cloud.features)
    values = np.concatenate(columns, axis=1).astype(np.float32)

    vertex = np.empty(n, dtype=dtype)
    for j, prop in enumerate(float_props):
        vertex[prop] = values[:, j]
    if cloud.flags is not None:
        vertex["flags"] = cloud.flags

    buffer = io.BytesIO()
    PlyData([PlyElement.describe(vertex, "vertex")], text=False, byte_order="<").write(buffer)
    return buffer.getvalue()


def read_ply(path: str) -> GaussianCloud:
    with open(path, "rb") as f:
        cloud = load_ply(f.read())
    logger.info(f"loaded {cloud.n:,} splats (SH degree {cloud.sh_degree}) from {path}")
    return cloud


def write_ply(path: str, cloud: GaussianCloud):
    with open(path, "wb") as f:
        f.write(save_ply(cloud))
    logger.info(f"wrote {cloud.n:,} splats to {path}")


# ---------------------------------------------------------------------------
# Dynamic sequences
# ---------------------------------------------------------------------------

_CLOUD_FIELDS = ("means", "rotations", "log_scales", "opacity_logits", "sh0", "shN", "features", "flags")
_MOTION_FIELDS = ("pos_coeffs", "rot_coeffs", "time_center", "basis", "knots", "coeffs", "anchors")


def save_dynamic(path: str, dynclouds: List[DynamicGaussianCloud],
                 segments: List[GofSegment], fps: float = 30.0):
    """
    Store a GOF sequence in one .npz archive.

    Args:
        path: Output file
        dynclouds: One dynamic cloud per GOF
        segments: GOF frame ranges (same length as dynclouds)
        fps: Playback frame rate
    """
    arrays: Dict[str, np.ndarray] = {
        "fps": np.array(fps),
        "segments": np.array([[s.index, s.f_start, s.f_end] for s in segments], dtype=np.int64),
    }
    for k, dyn in enumerate(dynclouds):
        prefix = f"gof{k}_"
        for name in _CLOUD_FIELDS:
            value = getattr(dyn.base, name)
            if value is not None:
                arrays[prefix + name] = np.asarray(value)
        arrays[prefix + "variant"] = np.array(dyn.motion.variant)
        for name in _MOTION_FIELDS:
            value = getattr(dyn.motion, name)
            if value is not None:
                arrays[prefix + "motion_" + name] = np.asarray(value)
        if dyn.temporal_opacity is not None:
            arrays[prefix + "top_centers"] = dyn.temporal_opacity.centers
            arrays[prefix + "top_scales"] = dyn.temporal_opacity.scales
        arrays[prefix + "time_range"] = np.array(dyn.time_range, dtype=np.float64)
        arrays[prefix + "gof_index"] = np.array(dyn.gof_index)
    np.savez_compressed(path, **arrays)
    logger.info(f"wrote {len(dynclouds)} GOF(s) to {path}")


def load_dynamic(path: str) -> Tuple[List[DynamicGaussianCloud], List[GofSegment], float]:
    """Inverse of save_dynamic."""
    with np.load(path, allow_pickle=False) as archive:
        fps = float(archive["fps"])
        segments = [GofSegment(int(i), int(a), int(b)) for i, a, b in archive["segments"]]
        dynclouds = []
        for k in range(len(segments)):
            prefix = f"gof{k}_"
            get = lambda name: archive[prefix + name] if prefix + name in archive.files else None
            base = GaussianCloud(**{name: get(name) for name in _CLOUD_FIELDS})
            variant = str(get("variant"))
            motion = MotionModel(variant, **{name: get("motion_" + name) for name in _MOTION_FIELDS})
            top = None
            if get("top_centers") is not None:
                top = TemporalOpacity(get("top_centers"), get("top_scales"))
            t0, t1 = get("time_range")
            dynclouds.append(DynamicGaussianCloud(base, motion, top, (float(t0), float(t1)), int(get("gof_index"))))
    return dynclouds, segments, fps


def is_dynamic_path(path: str) -> bool:
    return os.path.splitext(path)[1].lower() == ".npz"


__all__ = [
    "load_ply", "save_ply", "read_ply", "write_ply",
    "save_dynamic", "load_dynamic", "is_dynamic_path",
]
