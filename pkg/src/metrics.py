"""
GSCodec - Image Metrics
=======================
PSNR, SSIM and Bjontegaard deltas between rate-distortion curves.
"""

from typing import Sequence, Union

import numpy as np
from skimage.metrics import structural_similarity

from .errors import ParameterError
from .render import ImageBuffer

PSNR_CAP = 99.0
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

ImageLike = Union[ImageBuffer, np.ndarray]


def _pixels(image: ImageLike) -> np.ndarray:
    return image.pixels if isinstance(image, ImageBuffer) else np.asarray(image, dtype=np.float64)


def _pair(a: ImageLike, b: ImageLike):
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise ParameterError(f"image dims differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: ImageLike, b: ImageLike) -> float:
    """10 log10(1 / MSE) for images in [0, 1], capped at 99 dB."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def ssim(a: ImageLike, b: ImageLike) -> float:
    """
    Mean SSIM over channels.

    11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, data range 1.
    """
    a, b = _pair(a, b)
    channel_axis = -1 if a.ndim == 3 else None
    return float(structural_similarity(
        a, b,
        data_range=1.0,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=SSIM_K1,
        K2=SSIM_K2,
        channel_axis=channel_axis,
    ))


def _curve(rates: Sequence[float], quality: Sequence[float]):
    rates = np.asarray(rates, dtype=np.float64)
    quality = np.asarray(quality, dtype=np.float64)
    if rates.size != quality.size or rates.size < 4:
        raise ParameterError("a rate-distortion curve needs at least 4 (rate, quality) points")
    if np.any(rates <= 0):
        raise ParameterError("rates must be positive")
    order = np.argsort(rates, kind="stable")
    return np.log10(rates[order]), quality[order]


def bd_psnr(rates_a: Sequence[float], psnr_a: Sequence[float],
            rates_b: Sequence[float], psnr_b: Sequence[float]) -> float:
    """
    Average PSNR gain of curve B over curve A (dB) over the shared rate range.

    Cubic fits of PSNR against log10(rate), integrated and averaged.
    """
    la, qa = _curve(rates_a, psnr_a)
    lb, qb = _curve(rates_b, psnr_b)
    lo, hi = max(la.min(), lb.min()), min(la.max(), lb.max())
    if not hi > lo:
        raise ParameterError("curves do not overlap in rate")
    ia = np.polyint(np.polyfit(la, qa, 3))
    ib = np.polyint(np.polyfit(lb, qb, 3))
    area_a = np.polyval(ia, hi) - np.polyval(ia, lo)
    area_b = np.polyval(ib, hi) - np.polyval(ib, lo)
    return float((area_b - area_a) / (hi - lo))


def bd_rate(rates_a: Sequence[float], psnr_a: Sequence[float],
            rates_b: Sequence[float], psnr_b: Sequence[float]) -> float:
    """
    Average rate change of curve B relative to A (percent) at equal quality.

    Negative values mean B needs fewer bits.
    """
    la, qa = _curve(rates_a, psnr_a)
    lb, qb = _curve(rates_b, psnr_b)
    lo, hi = max(qa.min(), qb.min()), min(qa.max(), qb.max())
    if not hi > lo:
        raise ParameterError("curves do not overlap in quality")
    ia = np.polyint(np.polyfit(qa, la, 3))
    ib = np.polyint(np.polyfit(qb, lb, 3))
    area_a = np.polyval(ia, hi) - np.polyval(ia, lo)
    area_b = np.polyval(ib, hi) - np.polyval(ib, lo)
    return float((10.0 ** ((area_b - area_a) / (hi - lo)) - 1.0) * 100.0)


__all__ = ["PSNR_CAP", "psnr", "ssim", "bd_psnr", "bd_rate"]
