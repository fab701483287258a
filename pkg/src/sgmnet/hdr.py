"""Gamma lifting, mu-law tonemapping, the training loss and PSNR metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

GAMMA = 2.2
RANGE_SLACK = 1e-6


@dataclass(frozen=True)
class TonemapConfig:
    mu: float = 5000.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")


DEFAULT_TONEMAP = TonemapConfig()


def lift(ldr, exposure):
    """Linearize an LDR image: ldr ** 2.2 / exposure.

    ``exposure`` is a scalar or an array broadcastable against ``ldr``
    (for a batch, shape (B, 1, 1, 1)).
    """
    ldr = np.asarray(ldr)
    t = np.asarray(exposure, dtype=ldr.dtype if ldr.dtype.kind == "f" else np.float64)
    if np.any(t <= 0):
        raise ValueError("exposure times must be positive")
    if ldr.size and (ldr.min() < -RANGE_SLACK or ldr.max() > 1 + RANGE_SLACK):
        raise ValueError(f"LDR values must lie in [0, 1], got [{ldr.min()}, {ldr.max()}]")
    ldr = np.clip(ldr, 0, 1)
    return ldr ** GAMMA / t


def _check_unit(x: np.ndarray, what: str) -> None:
    if x.size and x.min() < -RANGE_SLACK:
        raise ValueError(f"{what} has negative values beyond tolerance (min {x.min()})")
    if x.size and x.max() > 1 + RANGE_SLACK:
        raise ValueError(f"{what} exceeds 1 beyond tolerance (max {x.max()})")


def mu_law(y, cfg: TonemapConfig = DEFAULT_TONEMAP):
    """log(1 + mu*y) / log(1 + mu); works on Tensors (recorded) and arrays."""
    denom = math.log1p(cfg.mu)
    if isinstance(y, Tensor):
        _check_unit(y.data, "tonemap input")
        if y.data.min() < 0 or y.data.max() > 1:
            y = T.clip(y, 0.0, 1.0)
        return T.log1p(y * cfg.mu) / denom
    y = np.asarray(y)
    _check_unit(y, "tonemap input")
    y = np.clip(y, 0, 1)
    dt = y.dtype if y.dtype.kind == "f" else np.float64
    return np.log1p(y * np.asarray(cfg.mu, dtype=dt)) / np.asarray(denom, dtype=dt)


def loss(y: Tensor, y_gt, cfg: TonemapConfig = DEFAULT_TONEMAP) -> Tensor:
    """Mean squared error between tonemapped prediction and target."""
    y = T.as_tensor(y)
    y_gt = T.as_tensor(y_gt, dtype=y.dtype)
    if y.shape != y_gt.shape:
        raise T.ShapeError(f"prediction {y.shape} and target {y_gt.shape} differ")
    d = mu_law(y, cfg) - mu_law(y_gt, cfg)
    return T.reduce_mean(d * d)


def psnr_from_mse(mse: float) -> float:
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise T.ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr_linear(y, y_gt) -> float:
    """PSNR with peak 1; ``inf`` for identical inputs."""
    return psnr_from_mse(_mse(y, y_gt))


def psnr_tonemapped(y, y_gt, cfg: TonemapConfig = DEFAULT_TONEMAP) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_gt = np.asarray(y_gt, dtype=np.float64)
    return psnr_linear(mu_law(y, cfg), mu_law(y_gt, cfg))
