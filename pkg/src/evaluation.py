"""
GSCodec - Rate-Distortion Evaluation
====================================
RD sweeps over encoder configurations and directory-to-directory image
comparison.

Quality is codec-relative: decoded renders are compared with renders of the
uncompressed input, so the numbers measure compression loss only, not
fidelity to captured photographs.
"""

import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger
from tqdm import tqdm

from .config import EncodeConfig, apply_overrides, preset
from .container import decode_dynamic, decode_static, encode_dynamic, encode_static
from .dyncore import GofSegment, segment_gof
from .errors import ConfigError, ParameterError
from .metrics import bd_psnr, bd_rate, psnr, ssim
from .model import DynamicGaussianCloud, GaussianCloud
from .render import Camera, ImageBuffer, render, render_at_time

RD_COLUMNS = ["config", "bytes", "rate", "psnr", "ssim"]
QUALITY_NOTE = "PSNR/SSIM are measured against renders of the uncompressed input (compression loss only)"
CURVE_SEPARATOR = "@"

ConfigSpec = Union[str, EncodeConfig]


def megabytes(num_bytes: int) -> float:
    """MB = bytes / 2^20."""
    return num_bytes / float(1 << 20)


def megabits_per_second(num_bytes: int, frame_count: int, fps: float) -> float:
    """Average bitrate of a sequence: bytes * 8 / duration / 10^6."""
    if frame_count < 1 or fps <= 0:
        raise ParameterError(f"bitrate needs frames >= 1 and fps > 0, got ({frame_count}, {fps})")
    return num_bytes * 8.0 / (frame_count / fps) / 1e6


# ---------------------------------------------------------------------------
# Configurations
# ---------------------------------------------------------------------------

def bit_sweep(name: str, bits: Sequence[int]) -> Dict[str, EncodeConfig]:
    """One config per bit width: every 8-bit route of the preset set to b."""
    out = {}
    for b in bits:
        config = preset(name)
        for route in config.routes.values():
            if route.bits == 8:
                route.bits = int(b)
        out[f"{name}{CURVE_SEPARATOR}{b}b"] = config.validate()
    return out


def resolve_configs(configs: Union[Sequence[ConfigSpec], Mapping[str, ConfigSpec]]) -> Dict[str, EncodeConfig]:
    """Label -> config from preset names, configs, or a mapping of either."""
    items = configs.items() if isinstance(configs, Mapping) else (
        (c if isinstance(c, str) else c.preset, c) for c in configs
    )
    out = {}
    for label, entry in items:
        if label in out:
            raise ConfigError(f"duplicate sweep label '{label}'")
        out[label] = preset(entry) if isinstance(entry, str) else entry.validate()
    if not out:
        raise ConfigError("sweep has no configurations")
    return out


def load_sweep(path: str) -> Dict[str, EncodeConfig]:
    """
    Read a sweep file.

        presets = ["static-gscodec", "static-gscodec-imgonly"]
        bits = [5, 6, 7, 8]          # optional: one curve per preset

        [configs.opacity-ans]        # optional: labelled overrides
        preset = "static-gscodec"
        routes.opacity.codec = "ans"
    """
    with open(path, "rb") as f:
        try:
            values = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed sweep file: {exc}") from exc

    unknown = set(values) - {"presets", "bits", "configs"}
    if unknown:
        raise ConfigError(f"unknown sweep keys {sorted(unknown)}")
    out: Dict[str, EncodeConfig] = {}
    names = values.get("presets", [])
    bits = values.get("bits")
    for name in names:
        out.update(bit_sweep(name, bits) if bits else {name: preset(name)})
    for label, table in values.get("configs", {}).items():
        table = dict(table)
        base = table.pop("preset", "static-gscodec")
        out[label] = apply_overrides(preset(base), table)
    return resolve_configs(out)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def _mean_quality(reference: List[ImageBuffer], test: List[ImageBuffer]):
    return (float(np.mean([psnr(r, t) for r, t in zip(reference, test)])),
            float(np.mean([ssim(r, t) for r, t in zip(reference, test)])))


def _sample_times(segment: GofSegment, samples: int) -> List[float]:
    frames = np.unique(np.linspace(segment.f_start, segment.f_end - 1, samples).round().astype(int))
    return [segment.frame_to_time(int(f)) for f in frames]


def rd_sweep(source: Union[GaussianCloud, Sequence[DynamicGaussianCloud]], cameras: Sequence[Camera],
             configs: Union[Sequence[ConfigSpec], Mapping[str, ConfigSpec]],
             segments: Optional[Sequence[GofSegment]] = None,
             frames_per_gof: int = 3) -> pd.DataFrame:
    """
    Encode, decode and render the source under every configuration.

    Args:
        source: Static cloud, or one dynamic cloud per GOF
        cameras: At least one camera
        configs: Preset names / configs, optionally keyed by label
        segments: GOF frame ranges for dynamic sources (default: from each config)
        frames_per_gof: Frames rendered per GOF for dynamic sources

    Returns:
        DataFrame with columns config, bytes, rate, psnr, ssim; rate is MB for
        static sources and Mbps for dynamic ones
    """
    if not cameras:
        raise ParameterError("rd_sweep needs at least one camera")
    configs = resolve_configs(configs)
    dynamic = not isinstance(source, GaussianCloud)

    if dynamic:
        gofs = list(source)
        views = lambda clouds, segs: [
            render_at_time(dyn, cam, t)
            for dyn, seg in zip(clouds, segs) for t in _sample_times(seg, frames_per_gof) for cam in cameras
        ]
    else:
        reference = [render(source, cam) for cam in cameras]

    rows = []
    for label, config in tqdm(configs.items(), desc="RD sweep"):
        if dynamic:
            segs = list(segments) if segments is not None else segment_gof(
                config.frame_count or config.gof_len * len(gofs), config.gof_len)
            data = encode_dynamic(gofs, config, segs)
            decoded = decode_dynamic(data)
            frame_count = segs[-1].f_end - segs[0].f_start
            rate = megabits_per_second(len(data), frame_count, config.fps)
            quality = _mean_quality(views(gofs, segs), views(decoded, segs))
        else:
            data = encode_static(source, config)
            rate = megabytes(len(data))
            quality = _mean_quality(reference, [render(decode_static(data), cam) for cam in cameras])
        rows.append({"config": label, "bytes": len(data), "rate": rate, "psnr": quality[0], "ssim": quality[1]})
        logger.info(f"{label}: {len(data):,} bytes, {quality[0]:.2f} dB, SSIM {quality[1]:.4f}")

    frame = pd.DataFrame(rows, columns=RD_COLUMNS)
    frame.attrs["rate_unit"] = "Mbps" if dynamic else "MB"
    frame.attrs["note"] = QUALITY_NOTE
    return frame


def curve(frame: pd.DataFrame, name: str) -> pd.DataFrame:
    """Rows of one bit-sweep curve (labels '<name>@<b>b'), sorted by rate."""
    rows = frame[frame["config"].str.startswith(name + CURVE_SEPARATOR)]
    return rows.sort_values("rate", kind="stable")


def compare_curves(frame: pd.DataFrame, baseline: str, test: str) -> Dict[str, float]:
    """BD-rate (%) and BD-PSNR (dB) of curve `test` against curve `baseline`."""
    a, b = curve(frame, baseline), curve(frame, test)
    return {
        "bd_rate": bd_rate(a["rate"], a["psnr"], b["rate"], b["psnr"]),
        "bd_psnr": bd_psnr(a["rate"], a["psnr"], b["rate"], b["psnr"]),
    }


# ---------------------------------------------------------------------------
# Directory comparison
# ---------------------------------------------------------------------------

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def eval_dirs(ref_dir: str, test_dir: str) -> pd.DataFrame:
    """
    PSNR/SSIM per image for files present in both directories, plus a mean row.

    Raises:
        ParameterError: No image names in common
    """
    list_images = lambda d: {f for f in os.listdir(d) if f.lower().endswith(IMAGE_EXTENSIONS)}
    ref_names, test_names = list_images(ref_dir), list_images(test_dir)
    common = sorted(ref_names & test_names)
    missing = sorted(ref_names - test_names)
    if missing:
        logger.warning(f"{len(missing)} reference image(s) have no test counterpart: {missing[:5]}")
    if not common:
        raise ParameterError(f"no image names shared by {ref_dir} and {test_dir}")

    rows = []
    for name in tqdm(common, desc="Evaluating"):
        ref = ImageBuffer.load(os.path.join(ref_dir, name))
        test = ImageBuffer.load(os.path.join(test_dir, name))
        rows.append({"image": name, "psnr": psnr(ref, test), "ssim": ssim(ref, test)})
    frame = pd.DataFrame(rows, columns=["image", "psnr", "ssim"])
    mean = {"image": "mean", "psnr": frame["psnr"].mean(), "ssim": frame["ssim"].mean()}
    return pd.concat([frame, pd.DataFrame([mean])], ignore_index=True)


__all__ = [
    "RD_COLUMNS", "QUALITY_NOTE", "megabytes", "megabits_per_second", "bit_sweep",
    "resolve_configs", "load_sweep", "rd_sweep", "curve", "compare_curves", "eval_dirs",
]
