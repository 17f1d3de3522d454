"""
GSCodec - Container
===================
Single-file bitstream for static and dynamic Gaussian Splats, and the
encode/decode pipelines that produce and consume it.

Layout (integers little-endian, floats IEEE-754 binary32):

    magic "GSCS" | version u16 | flavor u8 | header-length u32 | header | chunks

The header holds one section per point set (one for a static scene, one per
GOF for a dynamic sequence) and a chunk directory. Chunk offsets are relative
to the first byte after the header; every chunk carries a CRC-32.

Decoded points come out in grid order (cell 0, 1, ...), which is the order
the encoder packed them in after the 3D-to-2D sort.
"""

import struct
import zlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from tqdm import tqdm

from .config import (
    ANS, DYNAMIC_PRESET, GAUSSIAN, PNG_PLANE, RAW_CONSTANT, STATIC_PRESET, VQ_ANS,
    AttributeRoute, EncodeConfig, preset,
)
from .dyncore import BASIS, POLYNOMIAL, GofSegment, MotionModel, TemporalOpacity, segment_gof
from .entropy import (
    ans_decode, ans_encode, fit_factorized, fit_spatial_gaussian, model_from_bytes, model_to_bytes,
)
from .errors import (
    BadMagicError, ChecksumError, ContainerError, DegenerateRangeError, EmptyCloudError,
    GSCodecError, InconsistentGofError, ParameterError, StageError, TruncatedContainerError,
    VersionError,
)
from .model import (
    CANONICAL_TOLERANCE, FLAG_DIFFUSE_ONLY, FLAG_STATIC, DynamicGaussianCloud, GaussianCloud, canonicalize,
    validate,
)
from .plas import AttributePlane, PlaneGrid, decode_png, encode_png, pack_symbol_planes, sort_plas, unpack_planes
from .preprocess import PruneReport, apply_mask, derive_sh_mask, derive_static_mask, prune
from .quantize import (
    TRANSFORMS, QuantizationScheme, VQCodebook, dequantize_scalar, fit_scheme, fit_vq_codebook,
    quantize_scalar, vq_encode,
)
from .utils import ByteReader, SH_REST_COUNTS, pack_array

MAGIC = b"GSCS"
VERSION = 1
FLAVOR_STATIC = 0
FLAVOR_DYNAMIC = 1

# Basis curves and knots are stored as plain float32 arrays
RAW_FLOAT32 = "raw-float32"
CODEC_IDS = {PNG_PLANE: 0, ANS: 1, VQ_ANS: 2, RAW_CONSTANT: 3, RAW_FLOAT32: 4}
_CODEC_NAMES = {v: k for k, v in CODEC_IDS.items()}
_PARTS = ("", "hi", "lo")

MOTION_NONE = 0
MOTION_POLYNOMIAL = 1
MOTION_BASIS = 2

CODEBOOK_SUFFIX = ".codebook"
REQUIRED_ATTRIBUTES = ("means", "rotations", "log_scales", "opacity_logits", "sh0")
# Attributes coded only for points whose flag bit is clear
MASKED_BY = {"shN": FLAG_DIFFUSE_ONLY, "pos_motion": FLAG_STATIC, "rot_motion": FLAG_STATIC}

_PREAMBLE = struct.Struct("<4sHBI")
_SECTION = struct.Struct("<HIIIBHIIBBBHBff")
_DYNAMIC_FIELDS = struct.Struct("<fII")


# ---------------------------------------------------------------------------
# Header types
# ---------------------------------------------------------------------------

@dataclass
class SectionInfo:
    """
    One independently decodable point set (the whole scene, or one GOF).

    `position_degree` holds the basis count for basis motion.
    """

    index: int
    f_start: int
    f_end: int
    n: int
    sh_degree: int
    feature_dim: int
    width: int
    height: int
    motion: int = MOTION_NONE
    position_degree: int = 0
    rotation_degree: int = 0
    control_points: int = 0
    has_temporal_opacity: bool = False
    time_range: Tuple[float, float] = (0.0, 1.0)

    @property
    def segment(self) -> GofSegment:
        return GofSegment(self.index, self.f_start, self.f_end)

    def pack(self) -> bytes:
        return _SECTION.pack(
            self.index, self.f_start, self.f_end, self.n, self.sh_degree, self.feature_dim,
            self.width, self.height, self.motion, self.position_degree, self.rotation_degree,
            self.control_points, int(self.has_temporal_opacity), *self.time_range,
        )

    @classmethod
    def unpack(cls, reader: ByteReader) -> "SectionInfo":
        (index, f_start, f_end, n, sh_degree, feature_dim, width, height, motion,
         position_degree, rotation_degree, control_points, has_top, t0, t1) = reader.unpack(_SECTION.format[1:])
        return cls(index, f_start, f_end, n, sh_degree, feature_dim, width, height, motion,
                   position_degree, rotation_degree, control_points, bool(has_top), (float(t0), float(t1)))


@dataclass
class ChunkEntry:
    """
    Directory entry of one chunk.

    Args:
        section: Owning section
        name: Unique name within the section (plane names for PNG chunks)
        attribute: Attribute the chunk contributes to
        codec: png-plane, ans, vq+ans, raw-constant or raw-float32
        rows, cols: Shape of the decoded values
        bits, transform, v_min, v_max: Quantization scheme (bits 0 = none)
        part, group, channel_offset: Plane placement for png-plane chunks
    """

    section: int
    name: str
    attribute: str
    codec: str
    rows: int
    cols: int
    bits: int = 0
    transform: str = "identity"
    v_min: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))
    v_max: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))
    part: str = ""
    group: int = 0
    channel_offset: int = 0
    offset: int = 0
    length: int = 0
    crc: int = 0

    @classmethod
    def for_scheme(cls, section: int, name: str, attribute: str, codec: str, rows: int, cols: int,
                   scheme: QuantizationScheme, **placement) -> "ChunkEntry":
        bounds = lambda v: np.broadcast_to(np.asarray(v, dtype=np.float32), (cols,)).copy()
        return cls(section, name, attribute, codec, rows, cols, scheme.bits, scheme.transform,
                   bounds(scheme.v_min), bounds(scheme.v_max), **placement)

    def scheme(self) -> QuantizationScheme:
        if self.bits == 0:
            raise ContainerError(f"chunk '{self.name}' has no quantization scheme")
        return QuantizationScheme(self.attribute, self.bits, self.v_min, self.v_max, self.transform)

    def pack(self) -> bytes:
        name = self.name.encode("utf-8")
        attribute = self.attribute.encode("utf-8")
        return b"".join([
            struct.pack("<B", len(name)), name,
            struct.pack("<B", len(attribute)), attribute,
            struct.pack("<HBIHBBH", self.section, CODEC_IDS[self.codec], self.rows, self.cols,
                        self.bits, TRANSFORMS.index(self.transform), self.v_min.size),
            pack_array(self.v_min, np.float32),
            pack_array(self.v_max, np.float32),
            struct.pack("<BBH", _PARTS.index(self.part), self.group, self.channel_offset),
            struct.pack("<III", self.offset, self.length, self.crc),
        ])

    @classmethod
    def unpack(cls, reader: ByteReader) -> "ChunkEntry":
        (size,) = reader.unpack("B")
        name = reader.take(size).decode("utf-8", errors="replace")
        (size,) = reader.unpack("B")
        attribute = reader.take(size).decode("utf-8", errors="replace")
        section, codec, rows, cols, bits, transform, channels = reader.unpack("HBIHBBH")
        v_min = reader.array(np.float32, channels)
        v_max = reader.array(np.float32, channels)
        part, group, channel_offset = reader.unpack("BBH")
        offset, length, crc = reader.unpack("III")
        if codec not in _CODEC_NAMES or transform >= len(TRANSFORMS) or part >= len(_PARTS):
            raise ContainerError(f"chunk '{name}' has an unknown codec, transform or plane part")
        return cls(section, name, attribute, _CODEC_NAMES[codec], rows, cols, bits, TRANSFORMS[transform],
                   v_min, v_max, _PARTS[part], group, channel_offset, offset, length, crc)


@dataclass
class ContainerHeader:
    version: int
    flavor: int
    sections: List[SectionInfo]
    chunks: List[ChunkEntry]
    fps: float = 0.0
    frame_count: int = 0
    gof_len: int = 0

    @property
    def dynamic(self) -> bool:
        return self.flavor == FLAVOR_DYNAMIC

    @property
    def segments(self) -> List[GofSegment]:
        return [s.segment for s in self.sections]

    @property
    def payload_size(self) -> int:
        return sum(c.length for c in self.chunks)

    def section_chunks(self, index: int) -> List[ChunkEntry]:
        return [c for c in self.chunks if c.section == index]

    def pack(self) -> bytes:
        parts = [struct.pack("<I", len(self.sections))]
        if self.dynamic:
            parts.append(_DYNAMIC_FIELDS.pack(self.fps, self.frame_count, self.gof_len))
        parts.extend(s.pack() for s in self.sections)
        parts.append(struct.pack("<I", len(self.chunks)))
        parts.extend(c.pack() for c in self.chunks)
        return b"".join(parts)


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------

def read_header(data: bytes) -> Tuple[ContainerHeader, int]:
    """
    Parse and check the preamble, header and chunk directory.

    Returns:
        (header, offset of the first chunk byte)

    Raises:
        BadMagicError, VersionError, TruncatedContainerError, ContainerError
    """
    data = bytes(data)
    if len(data) < _PREAMBLE.size:
        if not MAGIC.startswith(data[:4]):
            raise BadMagicError(f"not a GSCodec container (magic {data[:4]!r})")
        raise TruncatedContainerError(f"container is {len(data)} bytes, preamble needs {_PREAMBLE.size}")
    magic, version, flavor, header_len = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"not a GSCodec container (magic {magic!r})")
    if version != VERSION:
        raise VersionError(f"unsupported container version {version} (this build reads {VERSION})")
    if flavor not in (FLAVOR_STATIC, FLAVOR_DYNAMIC):
        raise ContainerError(f"unknown container flavor {flavor}")
    start = _PREAMBLE.size + header_len
    if start > len(data):
        raise TruncatedContainerError(f"header of {header_len} bytes runs past the end of the file")

    reader = ByteReader(data[_PREAMBLE.size:start], TruncatedContainerError, "container header")
    (count,) = reader.unpack("I")
    fps, frame_count, gof_len = 0.0, 0, 0
    if flavor == FLAVOR_DYNAMIC:
        fps, frame_count, gof_len = reader.unpack(_DYNAMIC_FIELDS.format[1:])
    sections = [SectionInfo.unpack(reader) for _ in range(count)]
    (count,) = reader.unpack("I")
    chunks = [ChunkEntry.unpack(reader) for _ in range(count)]
    header = ContainerHeader(version, flavor, sections, chunks, float(fps), frame_count, gof_len)

    payload = len(data) - start
    end = 0
    for chunk in sorted(chunks, key=lambda c: c.offset):
        if chunk.offset + chunk.length > payload:
            raise TruncatedContainerError(f"chunk '{chunk.name}' runs past the end of the file")
        if chunk.offset < end:
            raise ContainerError(f"chunk '{chunk.name}' overlaps its predecessor")
        end = chunk.offset + chunk.length
    known = {s.index for s in sections}
    stray = [c.name for c in chunks if c.section not in known]
    if stray:
        raise ContainerError(f"chunks {stray} belong to no section")
    return header, start


def _chunk_bytes(data: bytes, start: int, entry: ChunkEntry) -> bytes:
    payload = data[start + entry.offset:start + entry.offset + entry.length]
    actual = zlib.crc32(payload) & 0xFFFFFFFF
    if actual != entry.crc:
        raise ChecksumError(entry.name, entry.crc, actual)
    return payload


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

class _ChunkWriter:
    """Collects chunk payloads and their directory entries in write order."""

    def __init__(self):
        self.entries: List[ChunkEntry] = []
        self.payloads: List[bytes] = []
        self.offset = 0
        self._names = set()

    def add(self, entry: ChunkEntry, payload: bytes):
        key = (entry.section, entry.name)
        if key in self._names:
            raise ContainerError(f"duplicate chunk '{entry.name}' in section {entry.section}")
        self._names.add(key)
        entry.offset = self.offset
        entry.length = len(payload)
        entry.crc = zlib.crc32(payload) & 0xFFFFFFFF
        self.entries.append(entry)
        self.payloads.append(payload)
        self.offset += len(payload)
        logger.debug(f"chunk {entry.section}/{entry.name}: {entry.codec}, {len(payload):,} bytes")

    def assemble(self, flavor: int, sections: List[SectionInfo], **dynamic) -> bytes:
        header = ContainerHeader(VERSION, flavor, sections, self.entries, **dynamic).pack()
        return b"".join([_PREAMBLE.pack(MAGIC, VERSION, flavor, len(header)), header, *self.payloads])


@contextmanager
def _stage(name: str):
    """Tag any codec error raised inside the block with the pipeline stage."""
    try:
        yield
    except StageError:
        raise
    except (GSCodecError, ValueError) as exc:
        raise StageError(name, exc) from exc


def _entropy_payload(model, stream: bytes) -> bytes:
    blob = model_to_bytes(model)
    return struct.pack("<I", len(blob)) + blob + stream


def _split_entropy_payload(payload: bytes, name: str):
    reader = ByteReader(payload, TruncatedContainerError, f"chunk '{name}'")
    (size,) = reader.unpack("I")
    model = model_from_bytes(reader.take(size))
    return model, payload[4 + size:]


def _restored(symbols: np.ndarray, scheme: QuantizationScheme) -> np.ndarray:
    """Dequantized values exactly as the decoder stores them."""
    return dequantize_scalar(symbols, scheme).astype(np.float32).astype(np.float64)


def _sub_grid(rows: int, width: int) -> PlaneGrid:
    """Row-major layout of a row subset with the section's grid width."""
    width = max(1, min(width, rows))
    return PlaneGrid(width, (rows + width - 1) // width, np.arange(rows))


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

@dataclass
class EncodeResult:
    """
    Encoded bytes plus the encoder-side view needed for checks and debugging.

    Args:
        data: Container bytes
        clouds: Encoder-side point sets in stored (grid) order, one per section
        symbols: Per section, attribute -> coded symbols (VQ indices for vq+ans)
        planes: Every PNG plane written
        prune_reports: Per section prune report
        source_indices: Per section, input index of every stored point
    """

    data: bytes
    clouds: List[object]
    symbols: List[Dict[str, np.ndarray]]
    planes: List[AttributePlane]
    prune_reports: List[PruneReport]
    source_indices: List[np.ndarray] = field(default_factory=list)


class _SectionEncoder:
    """Encodes the attributes of one section into chunks."""

    def __init__(self, writer: _ChunkWriter, section: SectionInfo, config: EncodeConfig):
        self.writer = writer
        self.section = section
        self.config = config
        self.positions: Optional[np.ndarray] = None
        self.symbols: Dict[str, np.ndarray] = {}
        self.planes: List[AttributePlane] = []

    def _voxel_size(self) -> float:
        if self.config.entropy.voxel_size is not None:
            return float(self.config.entropy.voxel_size)
        diagonal = float(np.linalg.norm(self.positions.max(axis=0) - self.positions.min(axis=0)))
        return diagonal / 16.0 if diagonal > 0 else 1.0

    def raw(self, name: str, values: np.ndarray):
        values = np.asarray(values, dtype=np.float32)
        values = values.reshape(values.shape[0], -1) if values.ndim > 1 else values[None, :]
        entry = ChunkEntry(self.section.index, name, name, RAW_FLOAT32, values.shape[0], values.shape[1])
        self.writer.add(entry, pack_array(values, np.float32))

    def flags(self, flags: np.ndarray):
        with _stage("entropy"):
            symbols = np.asarray(flags, dtype=np.int64)[:, None]
            model = fit_factorized(symbols, self.config.entropy.alpha)
            entry = ChunkEntry(self.section.index, "flags", "flags", ANS, symbols.shape[0], 1)
            self.writer.add(entry, _entropy_payload(model, ans_encode(symbols, model)))
        self.symbols["flags"] = symbols

    def attribute(self, name: str, values: np.ndarray, rows: Optional[np.ndarray] = None):
        """
        Code one attribute along its route.

        Args:
            name: Attribute name
            values: Values of every point [N, C]
            rows: Indices of the points to store (None -> all)
        """
        route = self.config.route(name)
        values = np.asarray(values, dtype=np.float64)
        values = values.reshape(values.shape[0], -1)
        active = values if rows is None else values[rows]
        if active.shape[0] == 0:
            logger.info(f"'{name}': no active points, nothing stored")
            return

        if route.codec == VQ_ANS:
            self._vector(name, active, route)
            return

        with _stage("quantize"):
            try:
                scheme = fit_scheme(active, route.bits, route.clip_pct, name, route.transform, per_channel=True)
            except DegenerateRangeError:
                logger.warning(f"'{name}' is constant; stored as a raw-constant chunk")
                entry = ChunkEntry(self.section.index, name, name, RAW_CONSTANT, active.shape[0], active.shape[1])
                self.writer.add(entry, pack_array(active[0], np.float32))
                if name == "means":
                    self.positions = np.broadcast_to(active[0].astype(np.float32).astype(np.float64), active.shape)
                return
            symbols = quantize_scalar(active, scheme)
        self.symbols[name] = symbols
        if name == "means":
            self.positions = _restored(symbols, scheme)

        if route.codec == PNG_PLANE:
            self._planes(name, symbols, scheme, full=rows is None)
        else:
            self._entropy(name, symbols, active, scheme, route, rows)

    def _planes(self, name: str, symbols: np.ndarray, scheme: QuantizationScheme, full: bool):
        section = self.section
        if full:
            grid = PlaneGrid(section.width, section.height, np.arange(symbols.shape[0]))
        else:
            grid = _sub_grid(symbols.shape[0], section.width)
        with _stage("png"):
            planes = pack_symbol_planes({name: symbols}, grid, {name: scheme.bits})
            for plane in planes:
                entry = ChunkEntry.for_scheme(
                    section.index, plane.name, name, PNG_PLANE, symbols.shape[0], symbols.shape[1], scheme,
                    part=plane.part, group=plane.group, channel_offset=plane.channel_offset,
                )
                self.writer.add(entry, encode_png(plane))
        self.planes.extend(planes)

    def _entropy(self, name: str, symbols: np.ndarray, values: np.ndarray, scheme: QuantizationScheme,
                 route: AttributeRoute, rows: Optional[np.ndarray]):
        alpha = self.config.entropy.alpha
        with _stage("entropy"):
            positions = None
            if route.model == GAUSSIAN:
                if self.positions is None:
                    raise ParameterError(f"'{name}' needs decoded positions; code means first")
                positions = self.positions if rows is None else self.positions[rows]
                model = fit_spatial_gaussian(positions, values, self._voxel_size(), scheme=scheme, alpha=alpha)
            else:
                model = fit_factorized(symbols, alpha, num_symbols=scheme.levels + 1)
            stream = ans_encode(symbols, model, positions)
            entry = ChunkEntry.for_scheme(self.section.index, name, name, ANS, *symbols.shape, scheme)
            self.writer.add(entry, _entropy_payload(model, stream))

    def _vector(self, name: str, vectors: np.ndarray, route: AttributeRoute):
        config = self.config
        with _stage("vq"):
            indices, codebook = _fit_codebook(name, vectors, config)
        self.symbols[name] = indices
        # The codebook itself goes through the scalar route of this attribute
        self.attribute(name + CODEBOOK_SUFFIX, codebook.centroids)
        with _stage("entropy"):
            model = fit_factorized(indices, config.entropy.alpha, num_symbols=codebook.size)
            entry = ChunkEntry(self.section.index, name, name, VQ_ANS, vectors.shape[0], vectors.shape[1])
            self.writer.add(entry, _entropy_payload(model, ans_encode(indices, model)))
        logger.info(f"'{name}': {vectors.shape[0]:,} vectors -> {codebook.size} centroids")


def _codebook_route(config: EncodeConfig, name: str) -> AttributeRoute:
    route = config.route(name)
    return AttributeRoute(ANS, route.bits, transform=route.transform)


def _with_codebook_routes(config: EncodeConfig) -> EncodeConfig:
    config = config.copy()
    for name, route in list(config.routes.items()):
        if route.codec == VQ_ANS:
            config.routes[name + CODEBOOK_SUFFIX] = _codebook_route(config, name)
    return config


def _decoded_values(name: str, values: np.ndarray, config: EncodeConfig) -> np.ndarray:
    """Values [N, C] exactly as the decoder returns them after coding along the route of `name`."""
    route = config.route(name)
    if route.codec == VQ_ANS:
        indices, codebook = _fit_codebook(name, values, config)
        return codebook.centroids.astype(np.float64)[indices]
    try:
        scheme = fit_scheme(values, route.bits, route.clip_pct, name, route.transform, per_channel=True)
    except DegenerateRangeError:
        return np.tile(values[0].astype(np.float32).astype(np.float64), (values.shape[0], 1))
    return _restored(quantize_scalar(values, scheme), scheme)


def _fit_codebook(name: str, vectors: np.ndarray, config: EncodeConfig) -> Tuple[np.ndarray, VQCodebook]:
    """
    Fit a VQ codebook and settle it on the centroids its codebook chunk restores.

    Unused entries are dropped and the survivors quantized again until every
    entry is referenced. Coding the decoded vectors a second time then
    reproduces the same codebook entries.

    Returns:
        Per-vector indices and the restored codebook
    """
    codebook = fit_vq_codebook(vectors, config.vq.size, config.vq.iters, config.seed)
    centroids = codebook.centroids.astype(np.float64)
    while True:
        restored = VQCodebook(_decoded_values(name + CODEBOOK_SUFFIX, centroids, config), seed=config.seed)
        indices = vq_encode(vectors, restored)
        used = np.unique(indices)
        if used.size == restored.size:
            return indices, restored
        logger.debug(f"'{name}': {restored.size - used.size} codebook entries unused after quantization")
        centroids = restored.centroids.astype(np.float64)[used]


def _snap(cloud: GaussianCloud, config: EncodeConfig) -> GaussianCloud:
    """
    Replace every attribute by its decoded value.

    Encoding the snapped cloud gives the same bytes as encoding the cloud,
    and its values are what decode returns, so decode(encode(.)) reaches a
    fixed point after one pass.
    """
    flags = cloud.point_flags()
    fields = {}
    with _stage("quantize"):
        for name in cloud.attribute_names():
            shape = getattr(cloud, name).shape
            values = np.asarray(cloud.attribute(name), dtype=np.float64)
            rows = np.arange(cloud.n)
            if name in MASKED_BY:
                rows = np.flatnonzero((flags & MASKED_BY[name]) == 0)
            snapped = np.zeros_like(values)
            if rows.size:
                snapped[rows] = _decoded_values(name, values[rows], config)
            fields[name] = snapped.reshape(shape)
    return cloud.replace(**fields)


def _rotation_tolerance(config: EncodeConfig) -> float:
    """Norm deviation a stored quaternion can carry: one step per channel over a range of at most 2."""
    return 2.0 / ((1 << config.route("rotations").bits) - 1) + CANONICAL_TOLERANCE


def _prepare(cloud: GaussianCloud, config: EncodeConfig) -> Tuple[GaussianCloud, PruneReport]:
    """Validate, prune, mask and canonicalize one cloud."""
    with _stage("validate"):
        if cloud.n == 0:
            raise EmptyCloudError()
        # off-unit quaternions are renormalized below
        problems = validate(cloud).excluding("non_unit")
        if not problems.is_valid:
            raise ParameterError(f"invalid cloud: {problems}")
    settings = config.prune
    with _stage("prune"):
        cloud, prune_report = prune(cloud, settings.opacity, settings.scale, settings.outliers)
        if cloud.n == 0:
            raise EmptyCloudError("every point was pruned")
        if settings.sh_mask is not None and cloud.sh_rest > 0:
            cloud = apply_mask(cloud, derive_sh_mask(cloud, settings.sh_mask))
    with _stage("canonicalize"):
        # decoded quaternions sit within one quantization step of unit length
        cloud = canonicalize(cloud, tolerance=_rotation_tolerance(config))
    return cloud, prune_report


def _canonical_order(cloud: GaussianCloud) -> np.ndarray:
    """Order of the points by value (first attribute column most significant, flags last)."""
    columns = [np.asarray(cloud.attribute(name), dtype=np.float64) for name in cloud.attribute_names()]
    columns.append(cloud.point_flags().astype(np.float64)[:, None])
    table = np.concatenate(columns, axis=1)
    return np.lexsort(table.T[::-1])


def _arrangement(cloud: GaussianCloud, config: EncodeConfig) -> Tuple[np.ndarray, int, int]:
    """
    Point order along the PLAS grid and the grid size.

    The sort starts from the points in value order, so the layout depends on
    the set of points and the seed, never on the order they arrived in.
    """
    settings = config.plas
    channels = [c for c in settings.channels if c in cloud.attribute_names()]
    canonical = _canonical_order(cloud)
    with _stage("plas"):
        grid = sort_plas(cloud.subset(canonical), channels, settings.weights, seed=config.seed,
                         proposals_per_point=settings.proposals_per_point, init=settings.init)
    logger.info(f"PLAS grid {grid.width}x{grid.height} for {cloud.n:,} points")
    return canonical[np.argsort(grid.perm, kind="stable")], grid.width, grid.height


def _encode_base(encoder: _SectionEncoder, cloud: GaussianCloud):
    if cloud.flags is not None:
        encoder.flags(cloud.flags)
    flags = cloud.point_flags()
    for name in cloud.attribute_names():
        rows = None
        if name in MASKED_BY:
            rows = np.flatnonzero((flags & MASKED_BY[name]) == 0)
        encoder.attribute(name, cloud.attribute(name), rows)


def encode_static_detailed(cloud: GaussianCloud, config: Optional[EncodeConfig] = None) -> EncodeResult:
    """
    Static pipeline: prune -> canonicalize -> snap to decoded values -> PLAS
    sort -> per-attribute route.

    Raises:
        StageError: Any failure, tagged with its stage
    """
    config = _with_codebook_routes((config or preset(STATIC_PRESET)).validate())
    cloud, prune_report = _prepare(cloud, config)
    cloud = _snap(cloud, config)
    order, width, height = _arrangement(cloud, config)
    cloud = cloud.subset(order)

    writer = _ChunkWriter()
    section = SectionInfo(0, 0, 1, cloud.n, cloud.sh_degree,
                          0 if cloud.features is None else cloud.features.shape[1], width, height)
    encoder = _SectionEncoder(writer, section, config)
    _encode_base(encoder, cloud)
    data = writer.assemble(FLAVOR_STATIC, [section])
    logger.info(f"static container: {cloud.n:,} points, {len(data):,} bytes")
    return EncodeResult(data, [cloud], [encoder.symbols], encoder.planes, [prune_report],
                        [prune_report.kept_indices[order]])


def encode_static(cloud: GaussianCloud, config: Optional[EncodeConfig] = None) -> bytes:
    return encode_static_detailed(cloud, config).data


def _motion_attributes(dyncloud: DynamicGaussianCloud) -> Dict[str, np.ndarray]:
    n = dyncloud.n
    motion = dyncloud.motion
    out = {}
    if motion.variant == POLYNOMIAL:
        # a_0 / r_0 are the base mean / rotation
        if motion.position_degree > 0:
            out["pos_motion"] = motion.pos_coeffs[:, 1:].reshape(n, -1)
        if motion.rotation_degree > 0:
            out["rot_motion"] = motion.rot_coeffs[:, 1:].reshape(n, -1)
        out["time_center"] = motion.time_center.reshape(n, 1)
    else:
        out["pos_motion"] = motion.coeffs.reshape(n, -1)
    top = dyncloud.temporal_opacity
    if top is not None:
        out["top_center"] = top.centers.reshape(n, 1)
        out["top_scale"] = top.scales.reshape(n, 1)
    return out


def _align_rotation_signs(dyncloud: DynamicGaussianCloud) -> DynamicGaussianCloud:
    """Negate the rotation polynomial of points whose base quaternion was sign-flipped."""
    motion = dyncloud.motion
    if motion.variant != POLYNOMIAL:
        return dyncloud
    flipped = (motion.rot_coeffs[:, 0] * dyncloud.base.rotations).sum(axis=1) < 0
    if not flipped.any():
        return dyncloud
    rot = np.array(motion.rot_coeffs)
    rot[flipped] = -rot[flipped]
    return dyncloud.replace(motion=motion.replace(rot_coeffs=rot))


def _encode_gof(writer: _ChunkWriter, dyncloud: DynamicGaussianCloud, segment: GofSegment,
                config: EncodeConfig) -> Tuple[SectionInfo, DynamicGaussianCloud, _SectionEncoder, PruneReport,
                                                np.ndarray]:
    if dyncloud.motion.n != dyncloud.n:
        raise InconsistentGofError(
            f"GOF {segment.index}: motion has {dyncloud.motion.n} points, base has {dyncloud.n}"
        )
    top = dyncloud.temporal_opacity
    if top is not None and top.n != dyncloud.n:
        raise InconsistentGofError(f"GOF {segment.index}: temporal opacity has {top.n} points, base has {dyncloud.n}")
    if dyncloud.motion.variant == BASIS:
        # basis positions are anchored on the stored base means
        anchors = np.asarray(dyncloud.motion.anchors, dtype=np.float32)
        if not np.array_equal(anchors, dyncloud.base.means):
            logger.info(f"GOF {segment.index}: base means replaced by the basis anchors")
            dyncloud = dyncloud.replace(base=dyncloud.base.replace(means=anchors))

    base, prune_report = _prepare(dyncloud.base, config)
    dyncloud = dyncloud.subset(prune_report.kept_indices).replace(base=base, gof_index=segment.index)
    dyncloud = _align_rotation_signs(dyncloud)
    if config.prune.static_mask is not None:
        with _stage("dynamic"):
            mask = derive_static_mask(dyncloud, config.prune.static_mask, config.prune.static_samples)
            dyncloud = apply_mask(dyncloud, mask)

    order, width, height = _arrangement(dyncloud.base, config)
    dyncloud = dyncloud.subset(order)
    base = dyncloud.base
    motion = dyncloud.motion

    section = SectionInfo(
        segment.index, segment.f_start, segment.f_end, base.n, base.sh_degree,
        0 if base.features is None else base.features.shape[1], width, height,
        has_temporal_opacity=top is not None, time_range=tuple(float(t) for t in dyncloud.time_range),
    )
    if motion.variant == POLYNOMIAL:
        section.motion = MOTION_POLYNOMIAL
        section.position_degree = motion.position_degree
        section.rotation_degree = motion.rotation_degree
    else:
        section.motion = MOTION_BASIS
        section.position_degree = motion.basis_count
        section.control_points = int(motion.basis.shape[1])

    encoder = _SectionEncoder(writer, section, config)
    _encode_base(encoder, base)
    flags = base.point_flags()
    with _stage("dynamic"):
        for name, values in _motion_attributes(dyncloud).items():
            rows = np.flatnonzero((flags & MASKED_BY[name]) == 0) if name in MASKED_BY else None
            encoder.attribute(name, values, rows)
        if motion.variant == BASIS:
            encoder.raw("basis", motion.basis)
            encoder.raw("knots", motion.knots)
    return section, dyncloud, encoder, prune_report, prune_report.kept_indices[order]


def encode_dynamic_detailed(dynclouds: Sequence[DynamicGaussianCloud], config: Optional[EncodeConfig] = None,
                            segments: Optional[Sequence[GofSegment]] = None) -> EncodeResult:
    """
    Encode one dynamic cloud per GOF; every GOF becomes a self-contained section.

    Args:
        dynclouds: Per-GOF dynamic clouds
        config: Encoder configuration (dynamic preset by default)
        segments: GOF frame ranges; derived from config.frame_count and
            config.gof_len when omitted

    Raises:
        InconsistentGofError: Segments and clouds disagree
        StageError: Any other failure, tagged with its stage
    """
    config = _with_codebook_routes((config or preset(DYNAMIC_PRESET)).validate())
    dynclouds = list(dynclouds)
    if not dynclouds:
        raise InconsistentGofError("no GOFs to encode")
    if segments is None:
        frame_count = config.frame_count or config.gof_len * len(dynclouds)
        segments = segment_gof(frame_count, config.gof_len)
    segments = list(segments)
    if len(segments) != len(dynclouds):
        raise InconsistentGofError(f"{len(segments)} GOF segment(s) for {len(dynclouds)} cloud(s)")
    expected = segment_gof(segments[-1].f_end, max(segments[0].length, 1))
    if [(s.f_start, s.f_end) for s in expected] != [(s.f_start, s.f_end) for s in segments]:
        raise InconsistentGofError("GOF segments must cover frames 0.. in equal runs (the last may be shorter)")

    writer = _ChunkWriter()
    sections, clouds, symbols, planes, reports, sources = [], [], [], [], [], []
    for dyncloud, segment in tqdm(list(zip(dynclouds, segments)), desc="Encoding GOFs", disable=len(segments) < 2):
        section, dyncloud, encoder, report, source = _encode_gof(writer, dyncloud, segment, config)
        sections.append(section)
        clouds.append(dyncloud)
        symbols.append(encoder.symbols)
        planes.extend(encoder.planes)
        reports.append(report)
        sources.append(source)

    frame_count = segments[-1].f_end - segments[0].f_start
    gof_len = max(s.length for s in segments)
    data = writer.assemble(FLAVOR_DYNAMIC, sections, fps=config.fps, frame_count=frame_count, gof_len=gof_len)
    logger.info(f"dynamic container: {len(sections)} GOF(s), {frame_count} frames, {len(data):,} bytes")
    return EncodeResult(data, clouds, symbols, planes, reports, sources)


def encode_dynamic(dynclouds: Sequence[DynamicGaussianCloud], config: Optional[EncodeConfig] = None,
                   segments: Optional[Sequence[GofSegment]] = None) -> bytes:
    return encode_dynamic_detailed(dynclouds, config, segments).data


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

class _SectionDecoder:
    """Decodes the chunks of one section back into per-point arrays."""

    def __init__(self, data: bytes, start: int, section: SectionInfo, chunks: List[ChunkEntry]):
        self.data = data
        self.start = start
        self.section = section
        self.by_attribute: Dict[str, List[ChunkEntry]] = {}
        for chunk in chunks:
            self.by_attribute.setdefault(chunk.attribute, []).append(chunk)
        self.positions: Optional[np.ndarray] = None

    def has(self, name: str) -> bool:
        return name in self.by_attribute

    def _payload(self, entry: ChunkEntry) -> bytes:
        return _chunk_bytes(self.data, self.start, entry)

    def values(self, name: str, rows: Optional[np.ndarray] = None, cols: Optional[int] = None) -> np.ndarray:
        """
        Decode an attribute to [N, C] float64, zero outside `rows`.

        Args:
            name: Attribute name
            rows: Point indices the attribute was stored for (None -> all)
            cols: Channel count when no chunk exists (all rows inactive)
        """
        n = self.section.n
        expected = n if rows is None else rows.size
        chunks = self.by_attribute.get(name)
        if not chunks:
            if expected and name not in MASKED_BY:
                raise ContainerError(f"section {self.section.index} misses attribute '{name}'")
            return np.zeros((n, cols or 0))
        first = chunks[0]
        if any(c.rows != expected for c in chunks):
            raise InconsistentGofError(
                f"section {self.section.index}: '{name}' holds {first.rows} rows, expected {expected}"
            )
        stored = self._decode(name, chunks, None if rows is None else self.positions_for(rows))
        if rows is None:
            return stored
        out = np.zeros((n, first.cols))
        out[rows] = stored
        return out

    def table(self, name: str) -> np.ndarray:
        """Decode a shared raw-float32 table, whose row count is its own and not the point count."""
        chunks = self.by_attribute.get(name)
        if not chunks:
            raise ContainerError(f"section {self.section.index} misses table '{name}'")
        first = chunks[0]
        if first.codec != RAW_FLOAT32:
            raise ContainerError(f"table '{name}' is coded as {first.codec}, expected {RAW_FLOAT32}")
        return self._decode(name, chunks, None)

    def positions_for(self, rows: np.ndarray) -> Optional[np.ndarray]:
        return None if self.positions is None else self.positions[rows]

    def _decode(self, name: str, chunks: List[ChunkEntry], positions: Optional[np.ndarray]) -> np.ndarray:
        first = chunks[0]
        if positions is None:
            positions = self.positions
        if first.codec == RAW_CONSTANT:
            value = ByteReader(self._payload(first), TruncatedContainerError, first.name).array(np.float32, first.cols)
            return np.tile(value.astype(np.float64), (first.rows, 1))
        if first.codec == RAW_FLOAT32:
            reader = ByteReader(self._payload(first), TruncatedContainerError, first.name)
            return reader.array(np.float32, first.rows * first.cols).astype(np.float64).reshape(first.rows, first.cols)
        if first.codec == PNG_PLANE:
            planes = [
                decode_png(self._payload(c), name, c.part, c.group, c.channel_offset) for c in chunks
            ]
            height, width = planes[0].shape
            grid = PlaneGrid(width, height, np.arange(first.rows))
            symbols = unpack_planes(planes, grid, {name: first.bits})[name]
            if symbols.shape[1] != first.cols:
                raise ContainerError(f"planes of '{name}' carry {symbols.shape[1]} channels, expected {first.cols}")
            return _restored(symbols, first.scheme())
        if first.codec == ANS:
            model, stream = _split_entropy_payload(self._payload(first), first.name)
            context = positions if model_is_spatial(model) else None
            symbols = ans_decode(stream, model, first.rows * first.cols, context).reshape(first.rows, first.cols)
            return _restored(symbols, first.scheme())
        # vq+ans
        book_name = name + CODEBOOK_SUFFIX
        if book_name not in self.by_attribute:
            raise ContainerError(f"'{name}' has no codebook chunk")
        codebook = self._decode(book_name, self.by_attribute[book_name], None)
        model, stream = _split_entropy_payload(self._payload(first), first.name)
        indices = ans_decode(stream, model, first.rows)
        if indices.size and indices.max() >= codebook.shape[0]:
            raise ContainerError(f"'{name}' references codebook entry {int(indices.max())} of {codebook.shape[0]}")
        return codebook[indices]

    def flags(self) -> Optional[np.ndarray]:
        chunks = self.by_attribute.get("flags")
        if not chunks:
            return None
        entry = chunks[0]
        if entry.rows != self.section.n:
            raise InconsistentGofError(f"section {self.section.index}: flags hold {entry.rows} rows")
        model, stream = _split_entropy_payload(self._payload(entry), entry.name)
        return ans_decode(stream, model, entry.rows).astype(np.uint8)


def model_is_spatial(model) -> bool:
    return not hasattr(model, "num_symbols")


def _decode_base(decoder: _SectionDecoder) -> GaussianCloud:
    section = decoder.section
    n = section.n
    flags = decoder.flags()
    point_flags = np.zeros(n, dtype=np.uint8) if flags is None else flags

    means = decoder.values("means")
    decoder.positions = means
    fields = {"means": means}
    for name in REQUIRED_ATTRIBUTES[1:]:
        fields[name] = decoder.values(name)

    rest = SH_REST_COUNTS.get(section.sh_degree)
    if rest is None:
        raise ContainerError(f"unsupported SH degree {section.sh_degree}")
    shN = np.zeros((n, 0, 3))
    if rest:
        active = np.flatnonzero((point_flags & FLAG_DIFFUSE_ONLY) == 0)
        shN = decoder.values("shN", active, rest * 3).reshape(n, rest, 3)
    features = decoder.values("features") if section.feature_dim else None

    cloud = GaussianCloud(
        means=fields["means"], rotations=fields["rotations"], log_scales=fields["log_scales"],
        opacity_logits=fields["opacity_logits"], sh0=fields["sh0"], shN=shN,
        features=features, flags=flags,
    )
    # rotations stay as dequantized; renormalizing would move them off the stored grid
    return cloud


def decode_static(data: bytes) -> GaussianCloud:
    """
    Decode a static container.

    Raises:
        BadMagicError, VersionError, TruncatedContainerError, ChecksumError,
        ContainerError
    """
    data = bytes(data)
    header, start = read_header(data)
    if header.dynamic or len(header.sections) != 1:
        raise ContainerError("not a static container; use decode_dynamic")
    section = header.sections[0]
    cloud = _decode_base(_SectionDecoder(data, start, section, header.section_chunks(section.index)))
    logger.info(f"decoded {cloud.n:,} points")
    return cloud


def _decode_gof(data: bytes, start: int, header: ContainerHeader, section: SectionInfo) -> DynamicGaussianCloud:
    decoder = _SectionDecoder(data, start, section, header.section_chunks(section.index))
    base = _decode_base(decoder)
    n = base.n
    flags = base.point_flags()
    moving = np.flatnonzero((flags & FLAG_STATIC) == 0)

    if section.motion == MOTION_POLYNOMIAL:
        kp, kr = section.position_degree, section.rotation_degree
        pos = np.zeros((n, kp + 1, 3))
        pos[:, 0] = base.means
        if kp:
            pos[:, 1:] = decoder.values("pos_motion", moving, kp * 3).reshape(n, kp, 3)
        rot = np.zeros((n, kr + 1, 4))
        rot[:, 0] = base.rotations
        if kr:
            rot[:, 1:] = decoder.values("rot_motion", moving, kr * 4).reshape(n, kr, 4)
        centers = decoder.values("time_center")[:, 0]
        motion = MotionModel(POLYNOMIAL, pos_coeffs=pos, rot_coeffs=rot, time_center=centers)
    elif section.motion == MOTION_BASIS:
        b = section.position_degree
        coeffs = decoder.values("pos_motion", moving, b * 3).reshape(n, b, 3)
        basis = decoder.table("basis")
        knots = decoder.table("knots")
        if basis.shape != (b, section.control_points) or knots.shape != (1, section.control_points):
            raise InconsistentGofError(f"GOF {section.index}: basis tables do not match the section header")
        motion = MotionModel(BASIS, basis=basis, knots=knots[0], coeffs=coeffs, anchors=base.means)
    else:
        raise ContainerError(f"GOF {section.index} has no motion model")

    top = None
    if section.has_temporal_opacity:
        top = TemporalOpacity(decoder.values("top_center")[:, 0], decoder.values("top_scale")[:, 0])
    return DynamicGaussianCloud(base, motion, top, section.time_range, section.index)


def decode_dynamic(data: bytes, gofs: Optional[Sequence[int]] = None) -> List[DynamicGaussianCloud]:
    """
    Decode a dynamic container.

    Args:
        data: Container bytes
        gofs: GOF indices to decode (default: all). Only the chunks of the
            requested GOFs are read and checksummed.

    Raises:
        InconsistentGofError: GOF table does not match the frame count
    """
    data = bytes(data)
    header, start = read_header(data)
    if not header.dynamic:
        raise ContainerError("not a dynamic container; use decode_static")
    expected = segment_gof(header.frame_count, header.gof_len) if header.gof_len else []
    if [(s.f_start, s.f_end) for s in expected] != [(s.f_start, s.f_end) for s in header.segments]:
        raise InconsistentGofError(
            f"GOF table does not partition {header.frame_count} frames into GOFs of {header.gof_len}"
        )
    wanted = [s for s in header.sections if gofs is None or s.index in set(gofs)]
    if gofs is not None and len(wanted) != len(set(gofs)):
        raise ParameterError(f"GOF indices {sorted(gofs)} not all in the container")
    return [_decode_gof(data, start, header, section) for section in wanted]


# ---------------------------------------------------------------------------
# Inspect
# ---------------------------------------------------------------------------

COMPONENTS = {
    "means": "Mean",
    "rotations": "Quat.",
    "log_scales": "Scale",
    "opacity_logits": "Opa.",
    "sh0": "SH 0",
    "shN": "SH N",
    "features": "Feat.",
    "pos_motion": "Motion",
    "rot_motion": "Motion",
    "time_center": "Motion",
    "basis": "Motion",
    "knots": "Motion",
    "top_center": "Temporal",
    "top_scale": "Temporal",
    "flags": "Mask",
}
COMPONENT_ORDER = ("Mean", "Quat.", "Scale", "Opa.", "SH 0", "SH N", "Feat.", "Motion", "Temporal", "Mask")


def component_of(attribute: str) -> str:
    return COMPONENTS.get(attribute.removesuffix(CODEBOOK_SUFFIX), "Other")


@dataclass
class MemoryBreakdownReport:
    """
    Compressed bytes per component.

    `total` is the chunk payload (file size minus preamble and header).
    """

    components: Dict[str, int]
    file_size: int
    header_size: int
    flavor: str = "static"
    sections: int = 1

    @property
    def total(self) -> int:
        return sum(self.components.values())

    def percent(self, component: str) -> float:
        return 100.0 * self.components[component] / self.total if self.total else 0.0

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"component": name, "bytes": size, "kb": round(size / 1024, 2), "percent": round(self.percent(name), 2)}
            for name, size in self.components.items()
        ]
        rows.append({"component": "Total", "bytes": self.total, "kb": round(self.total / 1024, 2),
                     "percent": 100.0 if self.total else 0.0})
        return pd.DataFrame(rows, columns=["component", "bytes", "kb", "percent"])

    def format(self, style: str = "table") -> str:
        frame = self.to_frame()
        if style == "csv":
            return frame.to_csv(index=False)
        if style != "table":
            raise ParameterError(f"unknown report format '{style}'")
        lines = [frame.to_string(index=False),
                 f"{self.flavor} container, {self.sections} section(s), "
                 f"{self.file_size:,} bytes on disk ({self.header_size:,} header)"]
        return "\n".join(lines)


def inspect(data: bytes) -> MemoryBreakdownReport:
    """Per-component compressed size; components sum to the payload exactly."""
    header, start = read_header(data)
    sizes: Dict[str, int] = {}
    for chunk in header.chunks:
        name = component_of(chunk.attribute)
        sizes[name] = sizes.get(name, 0) + chunk.length
    order = list(COMPONENT_ORDER) + sorted(set(sizes) - set(COMPONENT_ORDER))
    components = {name: sizes[name] for name in order if name in sizes}
    return MemoryBreakdownReport(
        components=components,
        file_size=len(data),
        header_size=start,
        flavor="dynamic" if header.dynamic else "static",
        sections=len(header.sections),
    )


def is_dynamic_container(data: bytes) -> bool:
    return read_header(data)[0].dynamic


__all__ = [
    "MAGIC", "VERSION", "SectionInfo", "ChunkEntry", "ContainerHeader", "EncodeResult",
    "MemoryBreakdownReport", "read_header", "encode_static", "encode_static_detailed",
    "decode_static", "encode_dynamic", "encode_dynamic_detailed", "decode_dynamic",
    "inspect", "is_dynamic_container", "component_of",
]
