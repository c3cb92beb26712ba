"""Decoder and encoder training objectives as differentiable graph nodes.

Every loss takes predictions as a :class:`Tensor` of colour fields shaped
(N, H, W, 2) (or a single H x W x 2 field) and constant targets of the same
shape.  Each field contributes the sum of its per-pixel terms; the returned
scalar is the mean of those sums over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, as_tensor
from .colorspace import AbHistogram
from .errors import DimensionError
from .pca import SIGMA_FLOOR, PcaBasis


@dataclass
class LossWeights:
    lambda_mah: float = 0.1
    lambda_grad: float = 1e-3
    kl_weight: float = 1e-2

    def __post_init__(self):
        for name in ("lambda_mah", "lambda_grad", "kl_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def _batched(pred, target) -> tuple[Tensor, np.ndarray]:
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    if pred.ndim == 3:
        pred = pred.reshape((1,) + pred.shape)
        target = target[None]
    if pred.ndim != 4 or pred.shape[-1] != 2:
        raise DimensionError(f"expected colour fields shaped (N, H, W, 2), got {pred.shape}")
    return pred, target


def loss_mah(pred, target, basis: PcaBasis) -> Tensor:
    """Squared differences along the principal directions, each scaled by
    its training-set variance, plus the residual scaled by the variance of
    the last kept direction."""
    pred, target = _batched(pred, target)
    if tuple(pred.shape[1:]) != tuple(basis.field_shape):
        raise DimensionError(f"fields {pred.shape[1:]} do not match basis geometry {basis.field_shape}")
    n = pred.shape[0]
    diff = (pred - target).reshape(n, basis.dim)
    sig = np.maximum(basis.sigmas, SIGMA_FLOOR)
    coeffs = diff @ basis.components.T
    along = ((coeffs / sig) ** 2).sum()
    residual = diff - coeffs @ basis.components
    across = residual.square().sum() / (sig[-1] ** 2)
    return (along + across) / n


def loss_hist(pred, target, hist: AbHistogram) -> Tensor:
    """Squared error weighted per pixel by the rarity of the target colour."""
    pred, target = _batched(pred, target)
    w = hist.weights(target)[..., None]
    return (((pred - target).square()) * w).sum() / pred.shape[0]


def loss_grad(pred, target) -> Tensor:
    """Mismatch between horizontal and vertical forward differences."""
    pred, target = _batched(pred, target)
    d = pred - target
    dh = d[:, :, 1:, :] - d[:, :, :-1, :]
    dv = d[:, 1:, :, :] - d[:, :-1, :, :]
    return (dh.square().sum() + dv.square().sum()) / pred.shape[0]


def loss_l2(pred, target) -> Tensor:
    """Plain squared error, the unweighted baseline objective."""
    pred, target = _batched(pred, target)
    return (pred - target).square().sum() / pred.shape[0]


def decoder_loss_terms(pred, target, basis: PcaBasis, hist: AbHistogram,
                       weights: LossWeights | None = None) -> dict[str, Tensor]:
    weights = weights or LossWeights()
    terms = {
        "L_hist": loss_hist(pred, target, hist),
        "L_mah": loss_mah(pred, target, basis),
        "L_grad": loss_grad(pred, target),
    }
    terms["L_dec"] = terms["L_hist"] + weights.lambda_mah * terms["L_mah"] + weights.lambda_grad * terms["L_grad"]
    return terms


def loss_dec(pred, target, basis: PcaBasis, hist: AbHistogram, weights: LossWeights | None = None) -> Tensor:
    return decoder_loss_terms(pred, target, basis, hist, weights)["L_dec"]


def loss_kl(mu, logvar) -> Tensor:
    """KL divergence from N(mu, exp(logvar)) to the standard normal."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise DimensionError("mu and logvar must share a shape")
    if mu.ndim == 1:
        mu, logvar = mu.reshape(1, -1), logvar.reshape(1, -1)
    per_item = (mu.square() + logvar.exp() - 1.0 - logvar).sum() * 0.5
    return per_item / mu.shape[0]
