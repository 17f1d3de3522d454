"""
GSCodec - Entropy Models
========================
Post-hoc fitted probability models over quantized attribute symbols and a
byte-wise rANS coder driven by their 12-bit fixed-point tables.

Two model families:
    FactorizedHistogramModel - one smoothed histogram per channel
    SpatialGaussianModel     - per-voxel Gaussian (mu, sigma) over a coarse
                               grid of the scene bounding box

Alphabets wider than 256 symbols are coded as a high byte followed by a low
byte, each with its own table, so every symbol keeps non-zero mass at
12-bit precision.
"""

import struct
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple, Union

import numba
import numpy as np
from loguru import logger
from scipy.special import ndtr

from .errors import EntropyCodingError, ParameterError
from .quantize import QuantizationScheme, forward_transform, quantize_scalar
from .utils import ByteReader, pack_array

SCALE_BITS = 12
PRECISION = 1 << SCALE_BITS
RANS_L = 1 << 23
P_MIN = 2.0 ** -24
DEFAULT_ALPHA = 1.0
BYTE_ALPHABET = 256

_FACTORIZED_TAG = b"F"
_GAUSSIAN_TAG = b"G"


# ---------------------------------------------------------------------------
# Fixed-point tables
# ---------------------------------------------------------------------------

def quantize_probabilities(probs: np.ndarray) -> np.ndarray:
    """
    Convert probability rows to 12-bit frequency rows.

    Every symbol gets at least 1/4096; the rest is distributed by largest
    fractional part (lowest index first on ties), so the result depends
    only on the input values.

    Args:
        probs: Non-negative rows [T, S], S <= 4096

    Returns:
        int64 frequencies [T, S], each row summing to 4096
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    rows, size = probs.shape
    if size > PRECISION:
        raise EntropyCodingError(f"alphabet of {size} symbols exceeds coder precision")
    totals = probs.sum(axis=1, keepdims=True)
    if np.any(~(totals > 0)):
        raise EntropyCodingError("probability row with zero total mass")
    scaled = probs / totals * (PRECISION - size)
    base = np.floor(scaled)
    freqs = base.astype(np.int64) + 1
    remainder = np.clip(PRECISION - freqs.sum(axis=1), 0, size)

    order = np.argsort(-(scaled - base), axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.broadcast_to(np.arange(size), (rows, size)).copy(), axis=1)
    freqs += rank < remainder[:, None]
    return freqs


def _cumulative(freqs: np.ndarray) -> np.ndarray:
    cum = np.zeros((freqs.shape[0], freqs.shape[1] + 1), dtype=np.int64)
    np.cumsum(freqs, axis=1, out=cum[:, 1:])
    return cum


def _stack_tables(*tables: np.ndarray) -> np.ndarray:
    """Concatenate frequency tables of different widths, zero-padded on the right."""
    width = max(t.shape[1] for t in tables)
    padded = [np.pad(t, ((0, 0), (0, width - t.shape[1]))) for t in tables]
    return np.ascontiguousarray(np.concatenate(padded, axis=0), dtype=np.int64)


# ---------------------------------------------------------------------------
# Factorized model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FactorizedHistogramModel:
    """
    Per-channel histogram p[s] = (count(s) + alpha) / (n + alpha * S).

    Args:
        num_symbols: Alphabet size S
        alpha: Laplace smoothing
        probs: Smoothed frequencies [C, S]
        tables: Coder frequencies; (direct [C, S],) or (high [C, ceil(S/256)], low [C, 256])
    """

    num_symbols: int
    alpha: float
    probs: np.ndarray
    tables: Tuple[np.ndarray, ...]

    @property
    def channels(self) -> int:
        return int(self.tables[0].shape[0])

    @property
    def split(self) -> bool:
        return len(self.tables) == 2

    def cdf(self, channel: int = 0) -> np.ndarray:
        """Cumulative fixed-point table of the first coding stage for one channel."""
        return _cumulative(self.tables[0][channel:channel + 1])[0]

    def coded_probabilities(self) -> np.ndarray:
        """The probability the coder assigns to each symbol, [C, S]."""
        if not self.split:
            return self.tables[0] / PRECISION
        s = np.arange(self.num_symbols)
        hi = self.tables[0][:, s >> 8] / PRECISION
        lo = self.tables[1][:, s & 0xFF] / PRECISION
        return hi * lo


def fit_factorized(symbols: np.ndarray, alpha: float = DEFAULT_ALPHA,
                   num_symbols: Optional[int] = None) -> FactorizedHistogramModel:
    """
    Fit one smoothed histogram per channel.

    Coding goes through 12-bit tables in which every symbol keeps a frequency
    of at least 1 in 4096. A channel over S symbols therefore costs at least
    -log2((4097 - S) / 4096) bits per symbol even when it is constant: about
    0.093 bits for S = 256, and more for wider alphabets.

    Args:
        symbols: Non-negative integer symbols [n] or [n, C]
        alpha: Laplace smoothing (> 0)
        num_symbols: Alphabet size S; defaults to max symbol + 1 (at least 2)

    Returns:
        FactorizedHistogramModel
    """
    s = np.asarray(symbols)
    if s.size == 0:
        raise ParameterError("cannot fit an entropy model to an empty stream")
    if not alpha > 0:
        raise ParameterError(f"smoothing alpha must be > 0, got {alpha}")
    s = s.reshape(s.shape[0], -1).astype(np.int64) if s.ndim > 1 else s.astype(np.int64)[:, None]
    if s.min() < 0:
        raise ParameterError("symbols must be non-negative")
    size = max(int(num_symbols) if num_symbols else int(s.max()) + 1, 2)
    if s.max() >= size:
        raise ParameterError(f"symbol {int(s.max())} outside alphabet of {size}")

    n, channels = s.shape
    histogram = lambda values, bins: np.stack(
        [np.bincount(values[:, c], minlength=bins) for c in range(channels)]
    )
    counts = histogram(s, size)
    probs = (counts + alpha) / (n + alpha * size)

    if size <= BYTE_ALPHABET:
        tables = (quantize_probabilities(probs),)
    else:
        n_hi = (size + BYTE_ALPHABET - 1) // BYTE_ALPHABET
        hi = (histogram(s >> 8, n_hi) + alpha) / (n + alpha * n_hi)
        lo = (histogram(s & 0xFF, BYTE_ALPHABET) + alpha) / (n + alpha * BYTE_ALPHABET)
        tables = (quantize_probabilities(hi), quantize_probabilities(lo))
    return FactorizedHistogramModel(size, float(alpha), probs, tables)


# ---------------------------------------------------------------------------
# Spatial Gaussian model
# ---------------------------------------------------------------------------

def _to_half(values: np.ndarray) -> np.ndarray:
    limit = float(np.finfo(np.float16).max)
    return np.clip(values, -limit, limit).astype(np.float16).astype(np.float64)


def _half_at_least(values: np.ndarray, floor: float) -> np.ndarray:
    half = np.maximum(values, floor).astype(np.float16)
    half = np.where(half.astype(np.float64) < floor, np.nextafter(half, np.float16(np.inf)), half)
    return half.astype(np.float64)


@dataclass(frozen=True)
class SpatialGaussianModel:
    """
    Voxel-context Gaussian model of one attribute.

    Points fall into voxels of a regular grid over the bounding box; voxels
    with at least two members carry their own (mu, sigma) per channel, all
    others use the global (mu0, sigma0). mu/sigma are held at float16
    precision, sigma >= sigma_floor.

    v_min / v_max / bits describe the symbol grid and are required for
    coding and symbol-rate estimation.
    """

    origin: np.ndarray
    voxel_size: float
    dims: np.ndarray
    voxel_ids: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    mu0: np.ndarray
    sigma0: np.ndarray
    sigma_floor: float
    bits: int = 8
    v_min: Optional[np.ndarray] = None
    v_max: Optional[np.ndarray] = None
    lo_table: Optional[np.ndarray] = None

    @property
    def channels(self) -> int:
        return int(self.mu0.shape[0])

    @property
    def voxel_count(self) -> int:
        return int(self.voxel_ids.shape[0])

    @property
    def split(self) -> bool:
        return self.bits > 8

    @property
    def q_step(self) -> np.ndarray:
        if self.v_min is None:
            raise ParameterError("model has no symbol grid; fit it with a quantization scheme")
        return (self.v_max - self.v_min) / ((1 << self.bits) - 1)

    def _voxel_index(self, positions: np.ndarray) -> np.ndarray:
        pos = np.asarray(positions, dtype=np.float64)
        cell = np.floor((pos - self.origin) / self.voxel_size).astype(np.int64)
        cell = np.clip(cell, 0, self.dims - 1)
        return (cell[:, 0] * self.dims[1] + cell[:, 1]) * self.dims[2] + cell[:, 2]

    def context_rows(self, positions: np.ndarray) -> np.ndarray:
        """Row of each point in the parameter tables; voxel_count means fallback."""
        ids = self._voxel_index(positions)
        v = self.voxel_count
        if v == 0:
            return np.full(ids.shape[0], 0, dtype=np.int64)
        rows = np.searchsorted(self.voxel_ids, ids)
        found = (rows < v) & (self.voxel_ids[np.minimum(rows, v - 1)] == ids)
        return np.where(found, rows, v)

    def params_at(self, positions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(mu, sigma) per point and channel, [N, C] each."""
        rows = self.context_rows(positions)
        mu = np.vstack([self.mu, self.mu0[None, :]])
        sigma = np.vstack([self.sigma, self.sigma0[None, :]])
        return mu[rows], sigma[rows]

    def coding_tables(self) -> np.ndarray:
        """
        Fixed-point tables for every (row, channel) context, [(V+1)*C, S'].

        S' is the full alphabet, or the high-byte alphabet when split; group
        mass is the Gaussian mass over the group's symbol cells.
        """
        group = BYTE_ALPHABET if self.split else 1
        groups = (1 << self.bits) // group
        edge_symbols = np.arange(groups + 1) * group - 0.5
        edges = self.v_min[None, :, None] + edge_symbols[None, None, :] * self.q_step[None, :, None]
        mu = np.vstack([self.mu, self.mu0[None, :]])[:, :, None]
        sigma = np.vstack([self.sigma, self.sigma0[None, :]])[:, :, None]
        mass = np.diff(ndtr((edges - mu) / sigma), axis=2)
        mass = np.maximum(mass, P_MIN)
        return quantize_probabilities(mass.reshape(-1, groups))


def fit_spatial_gaussian(positions: np.ndarray, values: np.ndarray, voxel_size: float,
                         sigma_floor: Optional[float] = None,
                         scheme: Optional[QuantizationScheme] = None,
                         alpha: float = DEFAULT_ALPHA) -> SpatialGaussianModel:
    """
    Fit per-voxel Gaussians to an attribute.

    Args:
        positions: Point positions [N, 3]
        values: Attribute values [N] or [N, C]
        voxel_size: Edge length of the context voxels (> 0)
        sigma_floor: Lower bound on sigma; defaults to Q_s / 4 of `scheme`
        scheme: Quantizer whose symbol grid the model will code
        alpha: Smoothing of the low-byte tables for alphabets > 256

    Returns:
        SpatialGaussianModel
    """
    if not voxel_size > 0:
        raise ParameterError(f"voxel_size must be > 0, got {voxel_size}")
    pos = np.asarray(positions, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    vals = vals.reshape(vals.shape[0], -1)
    if scheme is not None:
        vals = forward_transform(vals, scheme.transform)
    n, channels = vals.shape
    if n == 0:
        raise ParameterError("cannot fit an entropy model to an empty attribute")
    if pos.shape != (n, 3):
        raise ParameterError(f"positions {pos.shape} do not match {n} values")

    if sigma_floor is None:
        if scheme is None:
            raise ParameterError("sigma_floor or a quantization scheme is required")
        sigma_floor = float(np.min(scheme.step)) / 4.0
    if not sigma_floor > 0:
        raise ParameterError(f"sigma_floor must be > 0, got {sigma_floor}")
    sigma_floor = float(np.float32(sigma_floor))

    origin = pos.min(axis=0).astype(np.float32).astype(np.float64)
    voxel_size = float(np.float32(voxel_size))
    dims = (np.floor((pos.max(axis=0) - origin) / voxel_size).astype(np.int64) + 1)
    if float(np.prod(dims.astype(np.float64))) >= 2.0 ** 32:
        raise ParameterError(f"voxel_size {voxel_size} gives a grid of {dims.tolist()} voxels; use larger voxels")

    model = SpatialGaussianModel(
        origin=origin, voxel_size=voxel_size, dims=dims,
        voxel_ids=np.zeros(0, dtype=np.int64),
        mu=np.zeros((0, channels)), sigma=np.zeros((0, channels)),
        mu0=np.zeros(channels), sigma0=np.ones(channels), sigma_floor=sigma_floor,
    )
    ids = model._voxel_index(pos)
    unique, inverse, counts = np.unique(ids, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)

    sums = np.stack([np.bincount(inverse, weights=vals[:, c], minlength=unique.size) for c in range(channels)], axis=1)
    means = sums / counts[:, None]
    sq = np.stack([np.bincount(inverse, weights=(vals[:, c] - means[inverse, c]) ** 2, minlength=unique.size)
                   for c in range(channels)], axis=1)
    stds = np.sqrt(sq / counts[:, None])

    own = counts >= 2
    mu0 = vals.mean(axis=0)
    sigma0 = vals.std(axis=0)
    logger.debug(f"spatial model: {int(own.sum())}/{unique.size} voxels with own statistics")

    bits = 8
    v_min = v_max = lo_table = None
    if scheme is not None:
        bits = scheme.bits
        v_min = np.broadcast_to(np.asarray(scheme.v_min, dtype=np.float64), (channels,)).copy()
        v_max = np.broadcast_to(np.asarray(scheme.v_max, dtype=np.float64), (channels,)).copy()
        if bits > 8:
            lo = quantize_scalar(vals, scheme).astype(np.int64) & 0xFF
            counts_lo = np.stack([np.bincount(lo[:, c], minlength=BYTE_ALPHABET) for c in range(channels)])
            lo_table = quantize_probabilities((counts_lo + alpha) / (n + alpha * BYTE_ALPHABET))

    return SpatialGaussianModel(
        origin=origin,
        voxel_size=voxel_size,
        dims=dims,
        voxel_ids=unique[own].astype(np.int64),
        mu=_to_half(means[own]),
        sigma=_half_at_least(stds[own], sigma_floor),
        mu0=_to_half(mu0),
        sigma0=_half_at_least(sigma0, sigma_floor),
        sigma_floor=sigma_floor,
        bits=bits,
        v_min=v_min,
        v_max=v_max,
        lo_table=lo_table,
    )


EntropyModel = Union[FactorizedHistogramModel, SpatialGaussianModel]


# ---------------------------------------------------------------------------
# Probabilities and rates
# ---------------------------------------------------------------------------

def _as_rows(x: np.ndarray, channels: int) -> np.ndarray:
    x = np.asarray(x)
    return x.reshape(-1, channels)


def gaussian_interval_mass(x: np.ndarray, mu: np.ndarray, sigma: np.ndarray,
                           q_step: Union[float, np.ndarray]) -> np.ndarray:
    """Phi((x + Q/2 - mu)/sigma) - Phi((x - Q/2 - mu)/sigma), floored at P_MIN."""
    d = np.asarray(x, dtype=np.float64) - mu
    half = np.asarray(q_step, dtype=np.float64) / 2.0
    z_hi = (d + half) / sigma
    z_lo = (d - half) / sigma
    # upper tail through the survival side to keep precision
    p = np.where(z_lo > 0, ndtr(-z_lo) - ndtr(-z_hi), ndtr(z_hi) - ndtr(z_lo))
    return np.maximum(p, P_MIN)


def probability(model: EntropyModel, x: np.ndarray, q_step: Optional[Union[float, np.ndarray]] = None,
                positions: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Probability of each element under the model.

    Factorized models read the coder's fixed-point table at integer symbols.
    Spatial models apply the Gaussian interval mass at (continuous) values,
    with Q_s defaulting to the model's symbol grid.

    Returns:
        Probabilities with the shape of `x`
    """
    x = np.asarray(x)
    if isinstance(model, FactorizedHistogramModel):
        s = _as_rows(x, model.channels).astype(np.int64)
        if s.size and (s.min() < 0 or s.max() >= model.num_symbols):
            raise EntropyCodingError(f"symbol outside alphabet of {model.num_symbols}")
        ch = np.arange(model.channels)[None, :]
        if model.split:
            p = model.tables[0][ch, s >> 8] * model.tables[1][ch, s & 0xFF] / float(PRECISION * PRECISION)
        else:
            p = model.tables[0][ch, s] / float(PRECISION)
        return p.reshape(x.shape)

    if positions is None:
        raise ParameterError("spatial Gaussian model needs point positions")
    values = _as_rows(x, model.channels).astype(np.float64)
    mu, sigma = model.params_at(positions)
    q = model.q_step if q_step is None else q_step
    return gaussian_interval_mass(values, mu, sigma, q).reshape(x.shape)


class RateEstimate(NamedTuple):
    total_bits: float
    count: int

    @property
    def bits_per_symbol(self) -> float:
        return self.total_bits / self.count if self.count else 0.0

    @property
    def total_bytes(self) -> float:
        return self.total_bits / 8.0


def _symbol_values(model: SpatialGaussianModel, symbols: np.ndarray) -> np.ndarray:
    s = _as_rows(symbols, model.channels).astype(np.float64)
    return model.v_min[None, :] + s * model.q_step[None, :]


def rate_estimate(model: EntropyModel, symbols: np.ndarray,
                  positions: Optional[np.ndarray] = None) -> RateEstimate:
    """
    Information content sum(-log2 p(symbol)) of a symbol stream.

    Args:
        model: Fitted model
        symbols: Integer symbols [n] or [n, C]
        positions: Point positions, spatial models only

    Returns:
        RateEstimate with total bits and per-symbol mean
    """
    symbols = np.asarray(symbols)
    if isinstance(model, FactorizedHistogramModel):
        p = probability(model, symbols)
    else:
        p = probability(model, _symbol_values(model, symbols), positions=positions)
    return RateEstimate(float(-np.log2(p).sum()), int(symbols.size))


def entropy_loss(values: np.ndarray, q_step: Union[float, np.ndarray], model: EntropyModel,
                 positions: Optional[np.ndarray] = None,
                 scheme: Optional[QuantizationScheme] = None) -> float:
    """
    Mean bits per element, -(1/n) sum log2 P(v), evaluated at continuous values.

    Factorized models need the `scheme` that maps values to their symbols.
    On values already on the quantization grid this equals
    rate_estimate(...).bits_per_symbol.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return 0.0
    if isinstance(model, FactorizedHistogramModel):
        if scheme is None:
            raise ParameterError("factorized entropy loss needs the quantization scheme")
        p = probability(model, quantize_scalar(values, scheme))
    else:
        p = probability(model, values, q_step=q_step, positions=positions)
    return float(-np.log2(p).mean())


# ---------------------------------------------------------------------------
# rANS coder
# ---------------------------------------------------------------------------

@numba.jit(nopython=True, cache=True)
def _rans_encode(syms, ctxs, freq, cum, out):
    x = np.int64(RANS_L)
    ptr = out.shape[0]
    for j in range(syms.shape[0] - 1, -1, -1):
        f = freq[ctxs[j], syms[j]]
        c = cum[ctxs[j], syms[j]]
        x_max = ((RANS_L >> SCALE_BITS) << 8) * f
        while x >= x_max:
            ptr -= 1
            out[ptr] = x & 0xFF
            x >>= 8
        x = ((x // f) << SCALE_BITS) + (x % f) + c
    ptr -= 4
    for k in range(4):
        out[ptr + k] = (x >> (8 * k)) & 0xFF
    return ptr


@numba.jit(nopython=True, cache=True)
def _rans_decode(data, ctxs, freq, cum, out):
    # 0 ok, 1 ran out of bytes, 2 final state or length mismatch
    size = data.shape[0]
    if size < 4:
        return 1
    x = np.int64(0)
    for k in range(4):
        x |= np.int64(data[k]) << (8 * k)
    pos = 4
    mask = PRECISION - 1
    top = cum.shape[1] - 1
    for j in range(out.shape[0]):
        t = ctxs[j]
        slot = x & mask
        lo = 0
        hi = top
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if cum[t, mid] <= slot:
                lo = mid
            else:
                hi = mid
        out[j] = lo
        x = freq[t, lo] * (x >> SCALE_BITS) + slot - cum[t, lo]
        while x < RANS_L:
            if pos >= size:
                return 1
            x = (x << 8) | np.int64(data[pos])
            pos += 1
    if x != RANS_L or pos != size:
        return 2
    return 0


class _CodingPlan(NamedTuple):
    contexts: np.ndarray   # context row of every coded sub-symbol
    freqs: np.ndarray      # [T, S'] int64
    split: bool


def _plan(model: EntropyModel, n: int, positions: Optional[np.ndarray]) -> _CodingPlan:
    if isinstance(model, FactorizedHistogramModel):
        c = model.channels
        if n % c:
            raise EntropyCodingError(f"{n} symbols do not fill {c} channels")
        channel = np.arange(n, dtype=np.int64) % c
        if not model.split:
            return _CodingPlan(channel, _stack_tables(model.tables[0]), False)
        contexts = np.stack([channel, c + channel], axis=1).reshape(-1)
        return _CodingPlan(contexts, _stack_tables(*model.tables), True)

    if positions is None:
        raise ParameterError("spatial Gaussian model needs point positions")
    if model.v_min is None:
        raise ParameterError("model has no symbol grid; fit it with a quantization scheme")
    c = model.channels
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[0] * c != n:
        raise EntropyCodingError(f"{n} symbols do not match {positions.shape[0]} points x {c} channels")
    rows = model.context_rows(positions)
    index = np.arange(n, dtype=np.int64)
    channel = index % c
    contexts = rows[index // c] * c + channel
    tables = model.coding_tables()
    if not model.split:
        return _CodingPlan(contexts, _stack_tables(tables), False)
    lo_contexts = tables.shape[0] + channel
    both = np.stack([contexts, lo_contexts], axis=1).reshape(-1)
    return _CodingPlan(both, _stack_tables(tables, model.lo_table), True)


def _alphabet(model: EntropyModel) -> int:
    if isinstance(model, FactorizedHistogramModel):
        return model.num_symbols
    return 1 << model.bits


def ans_encode(symbols: np.ndarray, model: EntropyModel,
               positions: Optional[np.ndarray] = None) -> bytes:
    """
    rANS-encode a symbol stream.

    The stream is the 32-bit final coder state followed by the renormalisation
    bytes; its length is implied by the symbol count given to ans_decode.

    Args:
        symbols: Integer symbols [n] or [n, C] (row-major channel order)
        model: Fitted model shared with the decoder
        positions: Point positions [n / C, 3] for spatial models

    Returns:
        Encoded bytes (4 bytes for an empty stream)

    Raises:
        EntropyCodingError: Symbol outside the alphabet or without mass
    """
    s = np.asarray(symbols).reshape(-1).astype(np.int64)
    n = s.size
    plan = _plan(model, n, positions)
    if n and (s.min() < 0 or s.max() >= _alphabet(model)):
        raise EntropyCodingError(f"symbol outside alphabet of {_alphabet(model)}")
    subs = np.stack([s >> 8, s & 0xFF], axis=1).reshape(-1) if plan.split else s
    if subs.size and np.any(plan.freqs[plan.contexts, subs] == 0):
        raise EntropyCodingError("symbol with zero quantized mass")

    out = np.empty(2 * subs.size + 4, dtype=np.uint8)
    start = _rans_encode(subs, plan.contexts, plan.freqs, _cumulative(plan.freqs), out)
    return out[start:].tobytes()


def ans_decode(data: bytes, model: EntropyModel, n: int,
               positions: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Decode `n` symbols produced by ans_encode with the same model.

    Returns:
        int64 symbols [n], row-major channel order

    Raises:
        EntropyCodingError: Truncated or corrupt stream
    """
    plan = _plan(model, n, positions)
    buffer = np.frombuffer(bytes(data), dtype=np.uint8)
    subs = np.empty(plan.contexts.size, dtype=np.int64)
    status = _rans_decode(buffer, plan.contexts, plan.freqs, _cumulative(plan.freqs), subs)
    if status == 1:
        raise EntropyCodingError(f"truncated ANS stream ({buffer.size} bytes for {n} symbols)")
    if status == 2:
        raise EntropyCodingError("corrupt ANS stream (final coder state mismatch)")
    if plan.split:
        pairs = subs.reshape(-1, 2)
        return (pairs[:, 0] << 8) | pairs[:, 1]
    return subs


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def model_to_bytes(model: EntropyModel) -> bytes:
    """Serialise the parts of a model the decoder needs."""
    if isinstance(model, FactorizedHistogramModel):
        parts = [_FACTORIZED_TAG, struct.pack("<IHfB", model.num_symbols, model.channels,
                                              model.alpha, len(model.tables))]
        for table in model.tables:
            parts.append(struct.pack("<I", table.shape[1]))
            parts.append(pack_array(table, np.uint16))
        return b"".join(parts)

    if model.v_min is None:
        raise ParameterError("only models with a symbol grid can be stored")
    c = model.channels
    parts = [
        _GAUSSIAN_TAG,
        struct.pack("<HBff", c, model.bits, model.voxel_size, model.sigma_floor),
        pack_array(model.origin, np.float32),
        pack_array(model.dims, np.uint32),
        pack_array(model.v_min, np.float32),
        pack_array(model.v_max, np.float32),
        pack_array(model.mu0, np.float16),
        pack_array(model.sigma0, np.float16),
        struct.pack("<I", model.voxel_count),
        pack_array(model.voxel_ids, np.uint32),
        pack_array(model.mu, np.float16),
        pack_array(model.sigma, np.float16),
    ]
    if model.split:
        parts.append(pack_array(model.lo_table, np.uint16))
    return b"".join(parts)


def model_from_bytes(data: bytes) -> EntropyModel:
    """Inverse of model_to_bytes."""
    reader = ByteReader(data, EntropyCodingError, "entropy model")
    tag = reader.take(1)
    if tag == _FACTORIZED_TAG:
        size, channels, alpha, count = reader.unpack("IHfB")
        tables = []
        for _ in range(count):
            (width,) = reader.unpack("I")
            tables.append(reader.array(np.uint16, channels * width).reshape(channels, width).astype(np.int64))
        model = FactorizedHistogramModel(size, float(alpha), np.empty((channels, 0)), tuple(tables))
        return FactorizedHistogramModel(size, float(alpha), model.coded_probabilities(), tuple(tables))

    if tag != _GAUSSIAN_TAG:
        raise EntropyCodingError(f"unknown entropy model tag {tag!r}")
    channels, bits, voxel_size, sigma_floor = reader.unpack("HBff")
    f64 = lambda dtype, count: reader.array(dtype, count).astype(np.float64)
    origin = f64(np.float32, 3)
    dims = reader.array(np.uint32, 3).astype(np.int64)
    v_min = f64(np.float32, channels)
    v_max = f64(np.float32, channels)
    mu0 = f64(np.float16, channels)
    sigma0 = f64(np.float16, channels)
    (voxels,) = reader.unpack("I")
    voxel_ids = reader.array(np.uint32, voxels).astype(np.int64)
    mu = f64(np.float16, voxels * channels).reshape(voxels, channels)
    sigma = f64(np.float16, voxels * channels).reshape(voxels, channels)
    lo_table = None
    if bits > 8:
        lo_table = reader.array(np.uint16, channels * BYTE_ALPHABET).reshape(channels, BYTE_ALPHABET).astype(np.int64)
    return SpatialGaussianModel(
        origin=origin, voxel_size=float(voxel_size), dims=dims, voxel_ids=voxel_ids,
        mu=mu, sigma=sigma, mu0=mu0, sigma0=sigma0, sigma_floor=float(sigma_floor),
        bits=int(bits), v_min=v_min, v_max=v_max, lo_table=lo_table,
    )
