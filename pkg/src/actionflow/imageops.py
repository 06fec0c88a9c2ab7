"""Bilinear sampling primitives shared by flow resampling, augmentation,
evaluation crops, and warp-consistency checks.

All routines operate on the trailing two axes of an array, are pure numpy
(vectorized gathers, no scipy loop per sample), and clamp at the borders.
Pixel (i, j) is centered at coordinate (y=i, x=j); resizing maps target
pixel centers through ``src = (dst + 0.5) * in/out - 0.5``.
"""

from __future__ import annotations

import numpy as np


def sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``img`` (..., H, W) at float coords; ys/xs share one shape.

    Returns an array shaped like ``img.shape[:-2] + ys.shape``. Coordinates
    outside the image are clamped to the border pixel.
    """
    h, w = img.shape[-2:]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(img.dtype)
    fx = (xs - x0).astype(img.dtype)
    v00 = img[..., y0, x0]
    v01 = img[..., y0, x1]
    v10 = img[..., y1, x0]
    v11 = img[..., y1, x1]
    top = v00 + (v01 - v00) * fx
    bot = v10 + (v11 - v10) * fx
    return top + (bot - top) * fy


def resize_bilinear(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Resize the trailing (H, W) axes to ``out_hw``."""
    ho, wo = out_hw
    h, w = img.shape[-2:]
    if (ho, wo) == (h, w):
        return img.copy()
    ys = (np.arange(ho, dtype=np.float64) + 0.5) * (h / ho) - 0.5
    xs = (np.arange(wo, dtype=np.float64) + 0.5) * (w / wo) - 0.5
    ys, xs = np.meshgrid(ys, xs, indexing="ij")
    return sample_bilinear(img, ys, xs)


def warp_backward(img: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Backward-warp: out(p) = img(p + flow(p)). img (..., H, W), flow (2, H, W)
    with channel 0 = u (x displacement), channel 1 = v (y displacement)."""
    h, w = img.shape[-2:]
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return sample_bilinear(img, ys + flow[1], xs + flow[0])


def box_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    """Average ``factor`` x ``factor`` blocks of the trailing two axes."""
    h, w = img.shape[-2:]
    assert h % factor == 0 and w % factor == 0
    shape = img.shape[:-2] + (h // factor, factor, w // factor, factor)
    return img.reshape(shape).mean(axis=(-3, -1))
