"""
GSCodec - Quantization
======================
Variable bit-width scalar quantization, k-means vector quantization and the
forward maps of the differentiable-quantization surrogates (uniform noise
and straight-through rounding).

Symbols use round-half-away-from-zero; quantization endpoints are rounded
to float32 when a scheme is fitted so encoder and decoder share them
bit-exactly through the container header.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
from loguru import logger
from sklearn.cluster import kmeans_plusplus

from .errors import DegenerateRangeError, ParameterError, SymbolRangeError

TRANSFORMS = ("identity", "log", "logit", "unit-normalize")
MIN_BITS = 5
MAX_BITS = 16

ArrayLike = Union[float, np.ndarray]


def forward_transform(values: np.ndarray, transform: str) -> np.ndarray:
    """Map natural-domain values into the space they are quantized in."""
    values = np.asarray(values, dtype=np.float64)
    if transform == "identity":
        return values
    if transform == "log":
        return np.log(values)
    if transform == "logit":
        return np.log(values) - np.log1p(-values)
    if transform == "unit-normalize":
        return values / np.linalg.norm(values, axis=-1, keepdims=True)
    raise ParameterError(f"unknown transform '{transform}'")


def inverse_transform(values: np.ndarray, transform: str) -> np.ndarray:
    """Inverse of forward_transform (unit-normalize maps back to itself)."""
    values = np.asarray(values, dtype=np.float64)
    if transform in ("identity", "unit-normalize"):
        return values
    if transform == "log":
        return np.exp(values)
    if transform == "logit":
        return 1.0 / (1.0 + np.exp(-values))
    raise ParameterError(f"unknown transform '{transform}'")


@dataclass(frozen=True)
class QuantizationScheme:
    """
    Uniform scalar quantizer for one attribute.

    `v_min` / `v_max` are scalars or per-channel arrays (broadcast along the
    last axis) in transformed space. Step Q_s = (v_max - v_min) / (2^b - 1).
    """

    attribute: str
    bits: int
    v_min: ArrayLike
    v_max: ArrayLike
    transform: str = "identity"

    def __post_init__(self):
        if not MIN_BITS <= int(self.bits) <= MAX_BITS:
            raise ParameterError(f"bits must be in [{MIN_BITS}, {MAX_BITS}], got {self.bits}")
        if self.transform not in TRANSFORMS:
            raise ParameterError(f"unknown transform '{self.transform}'")
        lo = np.asarray(self.v_min, dtype=np.float32).astype(np.float64)
        hi = np.asarray(self.v_max, dtype=np.float32).astype(np.float64)
        if lo.shape != hi.shape:
            raise ParameterError("v_min and v_max must have the same shape")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ParameterError("quantization range must be finite")
        if np.any(lo >= hi):
            raise DegenerateRangeError(self.attribute, float(np.ravel(lo)[0]))
        object.__setattr__(self, "bits", int(self.bits))
        object.__setattr__(self, "v_min", lo if lo.ndim else float(lo))
        object.__setattr__(self, "v_max", hi if hi.ndim else float(hi))

    @property
    def levels(self) -> int:
        """Largest symbol, 2^b - 1."""
        return (1 << self.bits) - 1

    @property
    def step(self) -> ArrayLike:
        return (np.asarray(self.v_max) - np.asarray(self.v_min)) / self.levels

    @property
    def channels(self) -> int:
        return int(np.size(self.v_min)) if np.ndim(self.v_min) else 1

    def with_bits(self, bits: int) -> "QuantizationScheme":
        return QuantizationScheme(self.attribute, bits, self.v_min, self.v_max, self.transform)


def fit_scheme(values: np.ndarray, bits: int, clip_pct: float = 0.0,
               attribute: str = "values", transform: str = "identity",
               per_channel: bool = False) -> QuantizationScheme:
    """
    Fit a quantization range from data.

    Args:
        values: Samples in natural domain, [N] or [N, C]
        bits: Bit width b in 5..16
        clip_pct: Percentile clipped at each end (0 -> exact min/max)
        attribute: Attribute name recorded in the scheme
        transform: Forward transform applied before fitting
        per_channel: Fit one range per last-axis channel

    Returns:
        QuantizationScheme

    Raises:
        DegenerateRangeError: Constant input (every channel when per_channel)
    """
    if not 0.0 <= clip_pct < 50.0:
        raise ParameterError(f"clip_pct must be in [0, 50), got {clip_pct}")
    values = forward_transform(values, transform)
    if values.size == 0:
        raise ParameterError("cannot fit a scheme to empty input")
    if not np.all(np.isfinite(values)):
        raise ParameterError(f"non-finite values in '{attribute}'")

    if per_channel:
        flat = values.reshape(-1, values.shape[-1])
        lo = np.percentile(flat, clip_pct, axis=0)
        hi = np.percentile(flat, 100.0 - clip_pct, axis=0)
    else:
        lo = np.percentile(values, clip_pct)
        hi = np.percentile(values, 100.0 - clip_pct)

    lo = np.asarray(lo, dtype=np.float32)
    hi = np.asarray(hi, dtype=np.float32)
    flat_channels = lo >= hi
    if np.all(flat_channels):
        raise DegenerateRangeError(attribute, float(np.ravel(lo)[0]))
    if np.any(flat_channels):
        # Constant channels quantize to symbol 0 and decode exactly to v_min
        hi = np.where(flat_channels, np.nextafter(lo, np.float32(np.inf)), hi)
        logger.debug(f"'{attribute}': {int(flat_channels.sum())} constant channel(s) widened by one ulp")

    return QuantizationScheme(attribute, bits, lo, hi, transform)


def quantize_scalar(values: np.ndarray, scheme: QuantizationScheme) -> np.ndarray:
    """
    symbol = round((clamp(v) - v_min) / Q_s), ties away from zero.

    Returns:
        uint16 symbols in [0, 2^b - 1], same shape as `values`

    Raises:
        ParameterError: Non-finite input
    """
    v = forward_transform(values, scheme.transform)
    if not np.all(np.isfinite(v)):
        raise ParameterError(f"non-finite input to quantizer for '{scheme.attribute}'")
    lo, hi = scheme.v_min, scheme.v_max
    x = (np.clip(v, lo, hi) - lo) / scheme.step
    # x >= 0, so half-away-from-zero is floor(x + 0.5)
    symbols = np.floor(x + 0.5)
    return np.clip(symbols, 0, scheme.levels).astype(np.uint16)


def dequantize_scalar(symbols: np.ndarray, scheme: QuantizationScheme) -> np.ndarray:
    """
    v = v_min + symbol * Q_s (exactly v_max for the top symbol).

    Raises:
        SymbolRangeError: Symbol outside [0, 2^b - 1]
    """
    s = np.asarray(symbols).astype(np.int64)
    if s.size and (s.min() < 0 or s.max() > scheme.levels):
        raise SymbolRangeError(
            f"symbol out of range for {scheme.bits}-bit '{scheme.attribute}': "
            f"[{s.min()}, {s.max()}]"
        )
    lo = np.asarray(scheme.v_min)
    hi = np.asarray(scheme.v_max)
    values = lo + s * scheme.step
    values = np.where(s == scheme.levels, np.broadcast_to(hi, values.shape), values)
    return inverse_transform(values, scheme.transform)


def simulate_noise_quant(values: np.ndarray, q_step: ArrayLike, rng_seed: int) -> np.ndarray:
    """
    Uniform-noise proxy of scalar quantization: v + n, n ~ U[-Q_s/2, Q_s/2].

    The same seed always yields the same perturbation.
    """
    values = np.asarray(values, dtype=np.float64)
    q_step = np.asarray(q_step, dtype=np.float64)
    if np.any(q_step < 0):
        raise ParameterError("quantization step must be >= 0")
    rng = np.random.default_rng(rng_seed)
    unit = rng.uniform(-0.5, 0.5, size=values.shape)
    return values + unit * q_step


def ste_forward(values: np.ndarray, scheme: QuantizationScheme) -> np.ndarray:
    """
    Forward map of straight-through quantization, dequantize(quantize(v)).

    A differentiable host treats the backward pass as identity
    (d v_tilde / d v = 1); see surrogates.ste_quantize for the torch version.
    """
    return dequantize_scalar(quantize_scalar(values, scheme), scheme)


# ---------------------------------------------------------------------------
# Vector quantization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VQCodebook:
    """K x d centroid table fitted with seeded k-means."""

    centroids: np.ndarray
    seed: int = 0
    history: Tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        c = np.array(self.centroids, dtype=np.float32, copy=True)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ParameterError("codebook needs at least one centroid")
        if not np.all(np.isfinite(c)):
            raise ParameterError("codebook centroids must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def size(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.centroids.shape[1])


def _nearest(vectors: np.ndarray, centroids: np.ndarray, chunk_elems: int = 1 << 22) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row (lowest index on ties) and its squared distance."""
    x = np.asarray(vectors, dtype=np.float64)
    c = np.asarray(centroids, dtype=np.float64)
    c_sq = np.einsum("kd,kd->k", c, c)
    labels = np.empty(x.shape[0], dtype=np.int64)
    dists = np.empty(x.shape[0], dtype=np.float64)
    rows = max(1, chunk_elems // max(c.shape[0], 1))
    for start in range(0, x.shape[0], rows):
        block = x[start:start + rows]
        d = np.einsum("nd,nd->n", block, block)[:, None] - 2.0 * block @ c.T + c_sq[None, :]
        np.maximum(d, 0.0, out=d)
        idx = np.argmin(d, axis=1)
        labels[start:start + rows] = idx
        dists[start:start + rows] = d[np.arange(block.shape[0]), idx]
    return labels, dists


def fit_vq_codebook(vectors: np.ndarray, k: int, iters: int = 20, seed: int = 0) -> VQCodebook:
    """
    k-means with k-means++ seeding and a fixed number of Lloyd iterations.

    Empty clusters are re-seeded from the points farthest from their
    current centroid. The objective after each assignment is recorded in
    `history` and never increases. Input with at most k distinct rows gets
    those rows (sorted) as an exact codebook.

    Args:
        vectors: Training vectors [N, d]
        k: Codebook size (clamped to N with a warning)
        iters: Lloyd iterations
        seed: Seed for k-means++ seeding

    Returns:
        VQCodebook
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ParameterError("need at least one vector to fit a codebook")
    n, d = x.shape
    if k < 1:
        raise ParameterError(f"codebook size must be >= 1, got {k}")
    if k > n:
        logger.warning(f"codebook size {k} exceeds {n} vectors; clamped to {n}")
        k = n

    distinct = np.unique(x, axis=0)
    if distinct.shape[0] <= k:
        logger.debug(f"{distinct.shape[0]} distinct vectors fit a {k}-entry codebook exactly")
        return VQCodebook(distinct, seed=seed, history=(0.0,))

    centers, _ = kmeans_plusplus(x, n_clusters=k, random_state=seed)
    centers = centers.astype(np.float64)

    history = []
    for it in range(iters):
        labels, dist = _nearest(x, centers)
        history.append(float(dist.sum()))
        logger.debug(f"k-means iter {it}: objective {history[-1]:.6g}")

        counts = np.bincount(labels, minlength=k)
        sums = np.stack([np.bincount(labels, weights=x[:, j], minlength=k) for j in range(d)], axis=1)
        filled = counts > 0
        centers[filled] = sums[filled] / counts[filled, None]

        empty = np.flatnonzero(~filled)
        if empty.size:
            far = np.argsort(-dist, kind="stable")[: empty.size]
            centers[empty] = x[far]

    _, dist = _nearest(x, centers)
    history.append(float(dist.sum()))
    return VQCodebook(centers, seed=seed, history=tuple(history))


def vq_encode(vectors: np.ndarray, codebook: VQCodebook) -> np.ndarray:
    """Index of the nearest centroid per vector (lowest index on ties)."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != codebook.dim:
        raise ParameterError(f"vector dim {x.shape[-1]} != codebook dim {codebook.dim}")
    labels, _ = _nearest(x, codebook.centroids)
    return labels


def vq_decode(indices: np.ndarray, codebook: VQCodebook) -> np.ndarray:
    """Centroid rows for each index."""
    idx = np.asarray(indices).astype(np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= codebook.size):
        raise SymbolRangeError(f"VQ index out of range [0, {codebook.size})")
    return codebook.centroids[idx]
