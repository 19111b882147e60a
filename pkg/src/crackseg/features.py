"""Fixed per-pixel feature bank.

Eight channels per pixel, all computed with reflect padding:

    0  raw intensity
    1  Gaussian blur, sigma 1
    2  Gaussian blur, sigma 2
    3  Gaussian blur, sigma 4
    4  gradient magnitude (3x3 central-difference kernels)
    5  difference of Gaussians (sigma 1 minus sigma 4)
    6  local standard deviation, 5x5 window
    7  local minimum, 3x3 window

Channels are z-scored per image before use so that downstream Gaussian
fitting is well conditioned regardless of scene brightness.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from scipy import ndimage

FEATURE_DIM = 8

_KY = np.array([[0.0, -0.5, 0.0],
                [0.0, 0.0, 0.0],
                [0.0, 0.5, 0.0]])
_KX = _KY.T


def extract_features(image: np.ndarray) -> np.ndarray:
    """Raw (unstandardized) feature map, shape (H, W, 8)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"image must be a nonempty 2-D grid, got shape {image.shape}")

    blur1 = ndimage.gaussian_filter(image, 1.0, mode="reflect")
    blur2 = ndimage.gaussian_filter(image, 2.0, mode="reflect")
    blur4 = ndimage.gaussian_filter(image, 4.0, mode="reflect")
    gy = ndimage.correlate(image, _KY, mode="reflect")
    gx = ndimage.correlate(image, _KX, mode="reflect")
    grad = np.sqrt(gy * gy + gx * gx)
    dog = blur1 - blur4
    local_mean = ndimage.uniform_filter(image, 5, mode="reflect")
    local_sq = ndimage.uniform_filter(image * image, 5, mode="reflect")
    local_std = np.sqrt(np.maximum(local_sq - local_mean * local_mean, 0.0))
    local_min = ndimage.minimum_filter(image, size=3, mode="reflect")

    return np.stack([image, blur1, blur2, blur4, grad, dog, local_std, local_min], axis=-1)


def standardize(fm: np.ndarray) -> np.ndarray:
    """Per-channel per-image z-scoring; constant channels map to all zeros."""
    fm = np.asarray(fm, dtype=np.float64)
    mean = fm.mean(axis=(0, 1))
    std = fm.std(axis=(0, 1))
    out = np.zeros_like(fm)
    live = std > 1e-12
    out[..., live] = (fm[..., live] - mean[live]) / std[live]
    return out


def image_features(image: np.ndarray) -> np.ndarray:
    """extract_features followed by standardize; the training-time pipeline."""
    return standardize(extract_features(image))


def save_features(path, fm: np.ndarray) -> None:
    """Flat binary dump: u32 header (H, W, D), then f32 values in (h, w, d) order."""
    fm = np.asarray(fm)
    h, w, d = fm.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", h, w, d))
        fh.write(np.ascontiguousarray(fm, dtype="<f4").tobytes())


def load_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    h, w, d = struct.unpack_from("<III", raw, 0)
    values = np.frombuffer(raw, dtype="<f4", offset=12)
    if values.size != h * w * d:
        raise ValueError(f"feature dump truncated: header says {h}x{w}x{d}, got {values.size} values")
    return values.reshape(h, w, d).astype(np.float64)
