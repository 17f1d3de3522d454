"""
GSCodec - 3D-to-2D Mapping
==========================
Arranges unordered splats on a square 2D grid so neighbouring cells carry
similar attributes, packs quantized attributes into 8-bit planes along that
arrangement, and codes planes losslessly as PNG.

The sorter is a seeded multi-scale swap search: for radii W/2, W/4, ..., 1
it proposes random swaps inside radius-r windows and keeps those that
strictly lower the smoothness cost. Proposals are evaluated in vectorised
batches; a batch only applies swaps whose footprints (both cells plus their
4-neighbours) are disjoint, so simultaneous cost deltas stay exact.
"""

import io
import math
import os
import zlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import png
from loguru import logger

from .errors import PlaneError, ParameterError
from .model import GaussianCloud
from .quantize import QuantizationScheme, quantize_scalar
from .utils import morton_codes, normalize_features

DEFAULT_SORT_CHANNELS = ("means", "sh0", "opacity_logits")
PROPOSALS_PER_POINT = 16
MAX_PLANE_CHANNELS = 4
PLANE_GROUP = 3

_NEIGHBOURS = ((0, 1), (0, -1), (1, 0), (-1, 0))


@dataclass(frozen=True)
class PlaneGrid:
    """
    W x H layout of N points.

    Args:
        width: W
        height: H
        perm: Cell index (row-major, y * W + x) of every point [N]
    """

    width: int
    height: int
    perm: np.ndarray

    def __post_init__(self):
        perm = np.array(self.perm, dtype=np.int64, copy=True)
        cells = self.width * self.height
        if perm.ndim != 1 or perm.size > cells:
            raise PlaneError(f"{perm.size} points do not fit a {self.width}x{self.height} grid")
        if perm.size and (perm.min() < 0 or perm.max() >= cells):
            raise PlaneError("grid permutation points outside the grid")
        if np.unique(perm).size != perm.size:
            raise PlaneError("grid permutation is not injective")
        perm.setflags(write=False)
        object.__setattr__(self, "perm", perm)

    @property
    def n(self) -> int:
        return int(self.perm.size)

    @property
    def cells(self) -> int:
        return self.width * self.height

    @property
    def validity(self) -> np.ndarray:
        """[H, W] bool, True where a point sits."""
        valid = np.zeros(self.cells, dtype=bool)
        valid[self.perm] = True
        return valid.reshape(self.height, self.width)

    @property
    def cell_to_point(self) -> np.ndarray:
        """Point index per cell, -1 for padding [H * W]."""
        out = np.full(self.cells, -1, dtype=np.int64)
        out[self.perm] = np.arange(self.n)
        return out


@dataclass(frozen=True)
class AttributePlane:
    """
    One image plane of a quantized attribute.

    Args:
        attribute: Source attribute name
        samples: [H, W, C] integer samples, C in 1..4
        bit_depth: 8 or 16
        part: "hi" / "lo" for byte-split attributes, "" otherwise
        group: Channel-group index for attributes wider than 4 channels
        channel_offset: First attribute channel held by this plane
    """

    attribute: str
    samples: np.ndarray
    bit_depth: int = 8
    part: str = ""
    group: int = 0
    channel_offset: int = 0

    def __post_init__(self):
        if self.bit_depth not in (8, 16):
            raise PlaneError(f"bit depth must be 8 or 16, got {self.bit_depth}")
        samples = np.asarray(self.samples)
        if samples.ndim == 2:
            samples = samples[:, :, None]
        if samples.ndim != 3 or not 1 <= samples.shape[2] <= MAX_PLANE_CHANNELS:
            raise PlaneError(f"plane needs 1-4 channels, got shape {samples.shape}")
        dtype = np.uint8 if self.bit_depth == 8 else np.uint16
        if samples.size and (samples.min() < 0 or samples.max() > np.iinfo(dtype).max):
            raise PlaneError(f"samples exceed {self.bit_depth}-bit range")
        object.__setattr__(self, "samples", samples.astype(dtype))

    @property
    def name(self) -> str:
        name = self.attribute
        if self.group or self.channel_offset:
            name += f"_g{self.group}"
        if self.part:
            name += f"_{self.part}"
        return name

    @property
    def channels(self) -> int:
        return int(self.samples.shape[2])

    @property
    def shape(self) -> Tuple[int, int]:
        return int(self.samples.shape[0]), int(self.samples.shape[1])


def grid_shape(n: int) -> Tuple[int, int]:
    """Smallest square W = H with W * H >= n."""
    side = math.isqrt(n - 1) + 1 if n > 1 else 1
    return side, side


# ---------------------------------------------------------------------------
# Sorting
# ---------------------------------------------------------------------------

def plas_features(cloud: GaussianCloud, channels: Sequence[str] = DEFAULT_SORT_CHANNELS,
                  weights: Optional[Dict[str, float]] = None) -> np.ndarray:
    """
    Sorting features: each attribute min-max normalised per channel to
    [0, 1] and scaled by sqrt(weight) so squared distances carry the weight.
    """
    blocks = []
    for name in channels:
        values = normalize_features(cloud.attribute(name))
        w = 1.0 if weights is None else float(weights.get(name, 1.0))
        if w < 0:
            raise ParameterError(f"negative sort weight for '{name}'")
        blocks.append(values * math.sqrt(w))
    return np.concatenate(blocks, axis=1)


def smoothness_cost(grid: PlaneGrid, features: np.ndarray) -> float:
    """
    Sum over valid 4-neighbour cell pairs of the squared L2 distance between
    their feature vectors.

    Args:
        grid: Layout
        features: Per-point features [N, D]

    Returns:
        Non-negative cost
    """
    features = np.asarray(features, dtype=np.float64).reshape(grid.n, -1)
    image = np.zeros((grid.cells, features.shape[1]), dtype=np.float64)
    image[grid.perm] = features
    image = image.reshape(grid.height, grid.width, -1)
    valid = grid.validity

    cost = 0.0
    horizontal = valid[:, 1:] & valid[:, :-1]
    cost += float((((image[:, 1:] - image[:, :-1]) ** 2).sum(axis=2) * horizontal).sum())
    vertical = valid[1:, :] & valid[:-1, :]
    cost += float((((image[1:, :] - image[:-1, :]) ** 2).sum(axis=2) * vertical).sum())
    return cost


def _initial_layout(n: int, cells: int, rng: np.random.Generator, init: str,
                    positions: Optional[np.ndarray]) -> np.ndarray:
    cell_to_point = np.full(cells, -1, dtype=np.int64)
    if init == "random":
        cell_to_point[:n] = rng.permutation(n)
    elif init == "morton":
        if positions is None:
            raise ParameterError("morton initialisation needs point positions")
        cell_to_point[:n] = np.argsort(morton_codes(positions), kind="stable")
    else:
        raise ParameterError(f"unknown PLAS init '{init}'")
    return cell_to_point


def _swap_batch(cell_to_point: np.ndarray, features: np.ndarray, width: int, n: int,
                radius: int, batch: int, rng: np.random.Generator) -> int:
    """Propose one batch of swaps, apply the improving non-conflicting ones; returns accepted count."""
    height = (n + width - 1) // width
    a = rng.integers(0, n, size=batch)
    ax, ay = a % width, a // width
    dx = rng.integers(-radius, radius + 1, size=batch)
    dy = rng.integers(-radius, radius + 1, size=batch)
    bx = np.clip(ax + dx, 0, width - 1)
    by = np.clip(ay + dy, 0, height - 1)
    b = by * width + bx
    ok = (b != a) & (b < n)
    a, b, ax, ay, bx, by = a[ok], b[ok], ax[ok], ay[ok], bx[ok], by[ok]
    if a.size == 0:
        return 0

    # Footprint cells: a, b and their 4-neighbours (out-of-grid entries -> -1)
    footprint = [a, b]
    for ox, oy in _NEIGHBOURS:
        for cx, cy in ((ax, ay), (bx, by)):
            nx, ny = cx + ox, cy + oy
            cell = ny * width + nx
            inside = (nx >= 0) & (nx < width) & (ny >= 0) & (cell < n)
            footprint.append(np.where(inside, cell, -1))
    footprint = np.stack(footprint, axis=1)

    ids = np.arange(a.size)
    claim = np.full(n, a.size, dtype=np.int64)
    used = footprint >= 0
    np.minimum.at(claim, footprint[used], np.broadcast_to(ids[:, None], footprint.shape)[used])
    owner = np.where(used, claim[np.where(used, footprint, 0)], ids[:, None])
    survive = np.all(owner == ids[:, None], axis=1)

    a, b, ax, ay, bx, by = a[survive], b[survive], ax[survive], ay[survive], bx[survive], by[survive]
    if a.size == 0:
        return 0

    fa = features[cell_to_point[a]]
    fb = features[cell_to_point[b]]
    delta = np.zeros(a.size, dtype=np.float64)
    for ox, oy in _NEIGHBOURS:
        for cx, cy, own, other, here, there in ((ax, ay, a, b, fa, fb), (bx, by, b, a, fb, fa)):
            nx, ny = cx + ox, cy + oy
            cell = ny * width + nx
            inside = (nx >= 0) & (nx < width) & (ny >= 0) & (cell < n) & (cell != other)
            fn = features[cell_to_point[np.where(inside, cell, own)]]
            before = ((here - fn) ** 2).sum(axis=1)
            after = ((there - fn) ** 2).sum(axis=1)
            delta += np.where(inside, after - before, 0.0)

    accept = delta < 0
    a, b = a[accept], b[accept]
    cell_to_point[a], cell_to_point[b] = cell_to_point[b], cell_to_point[a].copy()
    return int(a.size)


def sort_plas(source: Union[GaussianCloud, np.ndarray],
              channels: Sequence[str] = DEFAULT_SORT_CHANNELS,
              weights: Optional[Dict[str, float]] = None,
              grid: Optional[Tuple[int, int]] = None,
              schedule: Optional[Sequence[int]] = None,
              seed: int = 0,
              proposals_per_point: int = PROPOSALS_PER_POINT,
              init: str = "random") -> PlaneGrid:
    """
    Find a locally smooth 2D arrangement of the points.

    Points occupy the first N cells (row-major) of the grid; swaps only move
    points between occupied cells, so padding stays at the end.

    Args:
        source: Cloud (features built from `channels`/`weights`) or a
            precomputed feature matrix [N, D] normalised to [0, 1]
        channels: Attributes used as sorting features
        weights: Per-attribute weights
        grid: (W, H); defaults to the smallest square
        schedule: Swap radii per pass; defaults to W/2, W/4, ..., 1
        seed: Seed for initial placement and proposals
        proposals_per_point: Proposals per pass divided by N
        init: "random" or "morton" initial placement

    Returns:
        PlaneGrid with smoothness cost <= that of the initial placement
    """
    if isinstance(source, GaussianCloud):
        features = plas_features(source, channels, weights)
        positions = source.means
    else:
        features = np.asarray(source, dtype=np.float64)
        features = features.reshape(features.shape[0], -1)
        positions = None
    n = features.shape[0]
    if n < 1:
        raise PlaneError("cannot sort an empty cloud")

    width, height = grid if grid is not None else grid_shape(n)
    if width * height < n:
        raise PlaneError(f"grid {width}x{height} is smaller than {n} points")

    rng = np.random.default_rng(seed)
    cell_to_point = _initial_layout(n, width * height, rng, init, positions)
    to_grid = lambda: PlaneGrid(width, height, np.argsort(cell_to_point[:n], kind="stable"))
    # cell_to_point[:n] is a permutation of points; its inverse is point -> cell

    if schedule is None:
        schedule = []
        r = max(width, height) // 2
        while r >= 1:
            schedule.append(r)
            r //= 2

    total = proposals_per_point * n
    batch = max(1, n // 16)
    for radius in schedule:
        accepted = 0
        for start in range(0, total, batch):
            accepted += _swap_batch(cell_to_point, features, width, n, int(radius), min(batch, total - start), rng)
        logger.debug(f"PLAS radius {radius}: {accepted} swaps, cost {smoothness_cost(to_grid(), features):.4f}")

    return to_grid()


def random_grid(n: int, seed: int = 0, grid: Optional[Tuple[int, int]] = None) -> PlaneGrid:
    """Seeded random placement on the first N cells (the sorter's starting point)."""
    width, height = grid if grid is not None else grid_shape(n)
    rng = np.random.default_rng(seed)
    cell_to_point = _initial_layout(n, width * height, rng, "random", None)
    return PlaneGrid(width, height, np.argsort(cell_to_point[:n], kind="stable"))


# ---------------------------------------------------------------------------
# Plane packing
# ---------------------------------------------------------------------------

def _channel_groups(channels: int) -> List[Tuple[int, int]]:
    if channels <= MAX_PLANE_CHANNELS:
        return [(0, channels)]
    return [(start, min(start + PLANE_GROUP, channels)) for start in range(0, channels, PLANE_GROUP)]


def pack_symbol_planes(symbols: Dict[str, np.ndarray], grid: PlaneGrid,
                       bits: Dict[str, int]) -> List[AttributePlane]:
    """
    Scatter quantized symbols into 8-bit planes along the grid.

    Attributes wider than 8 bits become a high-byte and a low-byte plane;
    attributes with more than 4 channels are split into groups of 3.
    Padding cells are zero.
    """
    planes = []
    for name, values in symbols.items():
        if name not in bits:
            raise PlaneError(f"missing scheme for attribute '{name}'")
        s = np.asarray(values).astype(np.int64).reshape(grid.n, -1)
        parts = [("hi", s >> 8), ("lo", s & 0xFF)] if bits[name] > 8 else [("", s)]
        for part, data in parts:
            for group, (c0, c1) in enumerate(_channel_groups(s.shape[1])):
                image = np.zeros((grid.cells, c1 - c0), dtype=np.uint8)
                image[grid.perm] = data[:, c0:c1]
                planes.append(AttributePlane(
                    attribute=name,
                    samples=image.reshape(grid.height, grid.width, c1 - c0),
                    part=part,
                    group=group,
                    channel_offset=c0,
                ))
    return planes


def pack_planes(source: Union[GaussianCloud, Dict[str, np.ndarray]], grid: PlaneGrid,
                schemes: Dict[str, QuantizationScheme],
                attributes: Optional[Sequence[str]] = None) -> List[AttributePlane]:
    """
    Quantize attributes and pack them into planes.

    Args:
        source: Cloud or mapping of attribute name -> values [N, C]
        grid: Layout from sort_plas
        schemes: Quantizer per attribute
        attributes: Attributes to pack (default: every scheme)

    Raises:
        PlaneError: An attribute has no scheme
    """
    attributes = list(schemes) if attributes is None else list(attributes)
    symbols = {}
    for name in attributes:
        if name not in schemes:
            raise PlaneError(f"missing scheme for attribute '{name}'")
        values = source.attribute(name) if isinstance(source, GaussianCloud) else np.asarray(source[name])
        symbols[name] = quantize_scalar(values.reshape(grid.n, -1), schemes[name])
    return pack_symbol_planes(symbols, grid, {k: schemes[k].bits for k in attributes})


def unpack_planes(planes: Sequence[AttributePlane], grid: PlaneGrid,
                  bits: Optional[Dict[str, int]] = None) -> Dict[str, np.ndarray]:
    """
    Gather symbols back from planes, the exact inverse of packing.

    Args:
        planes: Planes of one or more attributes
        grid: Layout used for packing
        bits: Optional bit width per attribute, checked against the planes

    Returns:
        Mapping attribute -> uint16 symbols [N, C]

    Raises:
        PlaneError: Plane dims differ from the grid, padding is non-zero or
            a byte-split attribute misses one half
    """
    valid = grid.validity.reshape(-1)
    collected: Dict[str, Dict[str, Dict[int, np.ndarray]]] = {}
    for plane in planes:
        if plane.shape != (grid.height, grid.width):
            raise PlaneError(f"plane '{plane.name}' is {plane.shape}, grid is {(grid.height, grid.width)}")
        flat = plane.samples.reshape(grid.cells, plane.channels).astype(np.int64)
        if np.any(flat[~valid]):
            raise PlaneError(f"plane '{plane.name}' has data in padding cells")
        parts = collected.setdefault(plane.attribute, {})
        parts.setdefault(plane.part, {})[plane.channel_offset] = flat[grid.perm]

    out = {}
    for name, parts in collected.items():
        join = lambda groups: np.concatenate([groups[k] for k in sorted(groups)], axis=1)
        if "hi" in parts or "lo" in parts:
            if set(parts) != {"hi", "lo"}:
                raise PlaneError(f"attribute '{name}' misses a byte plane")
            symbols = (join(parts["hi"]) << 8) | join(parts["lo"])
            if bits is not None and bits.get(name, 16) <= 8:
                raise PlaneError(f"attribute '{name}' is byte-split but declared {bits[name]}-bit")
        else:
            symbols = join(parts[""])
        if bits is not None and name in bits and symbols.size and symbols.max() >= (1 << bits[name]):
            raise PlaneError(f"attribute '{name}' exceeds {bits[name]} bits")
        out[name] = symbols.astype(np.uint16)
    return out


# ---------------------------------------------------------------------------
# PNG coding
# ---------------------------------------------------------------------------

def encode_png(plane: AttributePlane, compression: int = 9) -> bytes:
    """Lossless PNG of a plane (grey, grey+alpha, RGB or RGBA)."""
    h, w = plane.shape
    c = plane.channels
    writer = png.Writer(
        width=w,
        height=h,
        greyscale=c in (1, 2),
        alpha=c in (2, 4),
        bitdepth=plane.bit_depth,
        compression=compression,
    )
    buffer = io.BytesIO()
    writer.write(buffer, plane.samples.reshape(h, w * c).tolist())
    return buffer.getvalue()


def decode_png(data: bytes, attribute: str = "", part: str = "", group: int = 0,
               channel_offset: int = 0) -> AttributePlane:
    """
    Decode a PNG into a plane.

    Raises:
        PlaneError: Malformed or unsupported PNG
    """
    try:
        width, height, rows, info = png.Reader(bytes=bytes(data)).asDirect()
        samples = np.array([np.asarray(row) for row in rows])
    except (png.Error, zlib.error, ValueError, IndexError, EOFError) as exc:
        raise PlaneError(f"malformed PNG: {exc}") from exc
    channels = int(info["planes"])
    bit_depth = int(info["bitdepth"])
    if bit_depth not in (8, 16):
        raise PlaneError(f"unsupported PNG bit depth {bit_depth}")
    if samples.shape != (height, width * channels):
        raise PlaneError("PNG row data does not match its header")
    return AttributePlane(
        attribute=attribute,
        samples=samples.reshape(height, width, channels),
        bit_depth=bit_depth,
        part=part,
        group=group,
        channel_offset=channel_offset,
    )


def export_planes(planes: Sequence[AttributePlane], directory: str) -> List[str]:
    """Write one PNG per plane as <name>.png; returns the written paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for plane in planes:
        path = os.path.join(directory, f"{plane.name}.png")
        with open(path, "wb") as f:
            f.write(encode_png(plane))
        paths.append(path)
    logger.info(f"exported {len(paths)} plane(s) to {directory}")
    return paths
