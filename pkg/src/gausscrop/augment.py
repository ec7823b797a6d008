"""Flip, 3x3 Gaussian blur and per-channel standardization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gausscrop.rng import RngStream


@dataclass(frozen=True)
class AugmentConfig:
    flip_probability: float = 0.5
    blur_sigma: float = 1.0
    mean: tuple[float, ...] | None = None
    std: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (0.0 <= self.flip_probability <= 1.0):
            raise ValueError(f"flip_probability must lie in [0, 1], got {self.flip_probability}")
        if not self.blur_sigma > 0:
            raise ValueError(f"blur_sigma must be positive, got {self.blur_sigma}")
        if (self.mean is None) != (self.std is None):
            raise ValueError("mean and std must be given together")
        if self.std is not None and any(s <= 0 for s in self.std):
            raise ValueError("standardization std must be positive per channel")

    def with_stats(self, mean, std) -> "AugmentConfig":
        return AugmentConfig(self.flip_probability, self.blur_sigma, tuple(map(float, mean)), tuple(map(float, std)))


def hflip(image: np.ndarray) -> np.ndarray:
    """Mirror left-right; works on ``(H, W, C)`` and batched ``(B, H, W, C)`` arrays."""
    return image[..., ::-1, :]


def gaussian_kernel3(sigma: float) -> np.ndarray:
    """Normalized 1-D taps of a 3-wide Gaussian; the 3x3 kernel is their outer product."""
    taps = np.exp(-np.array([1.0, 0.0, 1.0]) / (2.0 * sigma**2))
    return taps / taps.sum()


def blur3x3(image: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """Separable 3x3 Gaussian blur with edge replication, so constant images pass through unchanged."""
    k0, k1, _ = gaussian_kernel3(sigma)
    h_ax, w_ax = image.ndim - 3, image.ndim - 2
    pad = [(0, 0)] * image.ndim
    pad[h_ax] = (1, 1)
    pad[w_ax] = (1, 1)
    p = np.pad(image, pad, mode="edge")
    # along width
    mid = p[..., :, 1:-1, :] * k1 + (p[..., :, :-2, :] + p[..., :, 2:, :]) * k0
    # along height
    return mid[..., 1:-1, :, :] * k1 + (mid[..., :-2, :, :] + mid[..., 2:, :, :]) * k0


def channel_stats(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std over every pixel of a ``(..., C)`` array."""
    flat = images.reshape(-1, images.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    if np.any(std == 0):
        raise ValueError(f"channel(s) {np.flatnonzero(std == 0).tolist()} have zero variance")
    return mean, std


def standardize(image: np.ndarray, mean, std) -> np.ndarray:
    return (image - np.asarray(mean)) / np.asarray(std)


def augment(image: np.ndarray, cfg: AugmentConfig, rng: RngStream) -> np.ndarray:
    """Random flip, then blur, then standardization (when stats are set)."""
    out = hflip(image) if rng.bernoulli(cfg.flip_probability) else image
    out = blur3x3(out, cfg.blur_sigma)
    if cfg.mean is not None:
        out = standardize(out, cfg.mean, cfg.std)
    return out


def augment_batch(images: np.ndarray, cfg: AugmentConfig, rng: RngStream) -> np.ndarray:
    """``augment`` over a ``(B, H, W, C)`` batch with one flip decision per image."""
    flips = rng.bernoulli(cfg.flip_probability, size=len(images))
    out = np.where(flips[:, None, None, None], images[:, :, ::-1, :], images)
    out = blur3x3(out, cfg.blur_sigma)
    if cfg.mean is not None:
        out = standardize(out, cfg.mean, cfg.std)
    return out
