"""
GSCodec - Differentiable Surrogates
===================================
Torch versions of the quantization and rate surrogates, for use inside an
external training loop. Forward values match the numpy functions in
quantize.py / entropy.py; gradients follow the usual conventions (uniform
noise is additive, straight-through rounding passes gradients unchanged).
"""

from typing import Optional, Union

import numpy as np
import torch

from .entropy import P_MIN, FactorizedHistogramModel
from .errors import ParameterError
from .quantize import QuantizationScheme


def noise_quantize(x: torch.Tensor, q_step: Union[float, torch.Tensor],
                   generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """
    x + n with n ~ U[-Q_s/2, Q_s/2].

    Args:
        x: Attribute tensor
        q_step: Quantization step (scalar or broadcastable tensor)
        generator: Seeded generator for reproducible noise

    Returns:
        Perturbed tensor, differentiable w.r.t. x
    """
    unit = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) - 0.5
    return x + unit * q_step


class STEQuantize(torch.autograd.Function):
    """Round to the quantizer grid in forward, identity gradient in backward."""

    @staticmethod
    def forward(ctx, x: torch.Tensor, v_min: torch.Tensor, v_max: torch.Tensor, levels: int) -> torch.Tensor:
        step = (v_max - v_min) / levels
        clamped = torch.maximum(torch.minimum(x, v_max), v_min)
        symbols = torch.clamp(torch.floor((clamped - v_min) / step + 0.5), 0, levels)
        return torch.where(symbols == levels, v_max.expand_as(x), v_min + symbols * step)

    @staticmethod
    def backward(ctx, grad_output: torch.Tensor):
        return grad_output, None, None, None


def _scheme_tensors(scheme: QuantizationScheme, like: torch.Tensor):
    as_tensor = lambda v: torch.as_tensor(np.asarray(v, dtype=np.float64), dtype=like.dtype, device=like.device)
    return as_tensor(scheme.v_min), as_tensor(scheme.v_max)


def ste_quantize(x: torch.Tensor, scheme: QuantizationScheme) -> torch.Tensor:
    """
    Straight-through quantization: forward equals quantize.ste_forward,
    d output / d x = 1.
    """
    if scheme.transform != "identity":
        raise ParameterError("torch straight-through quantization supports identity schemes only")
    v_min, v_max = _scheme_tensors(scheme, x)
    return STEQuantize.apply(x, v_min, v_max, scheme.levels)


def gaussian_likelihood(x: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor,
                        q_step: Union[float, torch.Tensor]) -> torch.Tensor:
    """Gaussian mass of the quantization cell around x, floored at 2^-24."""
    d = x - mu
    z_hi = (d + q_step / 2) / sigma
    z_lo = (d - q_step / 2) / sigma
    ndtr = torch.special.ndtr
    p = torch.where(z_lo > 0, ndtr(-z_lo) - ndtr(-z_hi), ndtr(z_hi) - ndtr(z_lo))
    return torch.clamp_min(p, P_MIN)


def gaussian_entropy_loss(x: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor,
                          q_step: Union[float, torch.Tensor]) -> torch.Tensor:
    """Mean bits per element under a Gaussian entropy model."""
    return -torch.log2(gaussian_likelihood(x, mu, sigma, q_step)).mean()


def factorized_entropy_loss(x: torch.Tensor, model: FactorizedHistogramModel,
                            scheme: QuantizationScheme) -> torch.Tensor:
    """
    Mean bits per element under a fitted histogram.

    log2 p is linearly interpolated between neighbouring symbols so the loss
    has a gradient w.r.t. x; on grid values it equals the table lookup.

    Args:
        x: Values [n, C] (or [n] for one channel)
        model: Fitted histogram over the scheme's symbols
        scheme: Quantizer with identity transform
    """
    if scheme.transform != "identity":
        raise ParameterError("torch entropy loss supports identity schemes only")
    table = torch.as_tensor(-np.log2(model.coded_probabilities()), dtype=x.dtype, device=x.device)
    v_min, v_max = _scheme_tensors(scheme, x)
    step = (v_max - v_min) / scheme.levels

    rows = x.reshape(-1, model.channels)
    u = (torch.maximum(torch.minimum(rows, v_max), v_min) - v_min) / step
    u = torch.clamp(u, 0, model.num_symbols - 1)
    lo = torch.floor(u).long()
    hi = torch.clamp(lo + 1, max=model.num_symbols - 1)
    frac = u - lo.to(x.dtype)
    channel = torch.arange(model.channels, device=x.device).expand_as(lo)
    bits = table[channel, lo] * (1 - frac) + table[channel, hi] * frac
    return bits.mean()
