"""Dense hand-crafted descriptors standing in for a learned encoder.

Two descriptor families are provided.  ``census`` stores the sign of the
intensity difference against every pixel of a square window; it is invariant
to monotone intensity rescaling.  ``zncc_patch`` stores mean-subtracted
window intensities, so cosine similarity between two such descriptors is the
classic zero-mean NCC score (up to the constant channel).  Both append a
constant channel of 1.0, which keeps every descriptor's norm strictly
positive even on textureless patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError

DESCRIPTOR_KINDS = ("census", "zncc_patch")


@dataclass(frozen=True)
class FeatureMap:
    """H x W x K descriptor field; K = window area + 1 constant channel."""

    channels: np.ndarray
    descriptor_kind: str
    radius: int

    def __post_init__(self):
        ch = np.array(self.channels, dtype=np.float64)
        if ch.ndim != 3:
            raise ConfigurationError("feature channels must be HxWxK")
        if not np.all(np.isfinite(ch)):
            raise ConfigurationError("features must be finite")
        if self.descriptor_kind not in DESCRIPTOR_KINDS:
            raise ConfigurationError(
                f"unknown descriptor kind {self.descriptor_kind!r}; "
                f"expected one of {DESCRIPTOR_KINDS}")
        if self.radius < 0:
            raise ConfigurationError("radius must be non-negative")
        norms = np.linalg.norm(ch, axis=2)
        if np.any(norms <= 0):
            raise ConfigurationError("descriptors must have positive norm")
        ch.setflags(write=False)
        object.__setattr__(self, "channels", ch)

    @property
    def shape(self) -> tuple[int, int]:
        return self.channels.shape[:2]

    @property
    def num_channels(self) -> int:
        return self.channels.shape[2]


def _downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Average-pool by an integer factor, truncating ragged borders."""
    if factor == 1:
        return image
    h, w = image.shape
    hh, ww = h // factor, w // factor
    if hh < 1 or ww < 1:
        raise ConfigurationError("downsample factor exceeds image size")
    crop = image[:hh * factor, :ww * factor]
    return crop.reshape(hh, factor, ww, factor).mean(axis=(1, 3))


def extract_features(image: np.ndarray, kind: str = "census",
                     radius: int = 2, downsample: int = 1) -> FeatureMap:
    """Compute a dense descriptor field from a grayscale image in [0, 1].

    Borders are handled by clamped (edge-replicated) sampling.  Window
    offsets are enumerated row-major from (-radius,-radius) to
    (+radius,+radius); the final channel is the constant 1.0.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ConfigurationError("image must be a single-channel HxW array")
    if not np.all(np.isfinite(img)):
        raise ConfigurationError("image must be finite")
    if kind not in DESCRIPTOR_KINDS:
        raise ConfigurationError(
            f"unknown descriptor kind {kind!r}; expected one of {DESCRIPTOR_KINDS}")
    if radius < 1:
        raise ConfigurationError("radius must be at least 1")
    if downsample < 1:
        raise ConfigurationError("downsample factor must be at least 1")
    img = _downsample(img, downsample)
    height, width = img.shape
    side = 2 * radius + 1
    if side > min(height, width):
        raise ConfigurationError(
            f"window side {side} exceeds image extent {min(height, width)}")

    padded = np.pad(img, radius, mode="edge")
    window = np.lib.stride_tricks.sliding_window_view(padded, (side, side))
    # window[v, u, dy, dx] = clamped I(v + dy - radius, u + dx - radius)
    patches = window.reshape(height, width, side * side)

    if kind == "census":
        channels = np.sign(patches - img[:, :, None])
    else:
        channels = patches - patches.mean(axis=2, keepdims=True)
    channels = np.concatenate(
        [channels, np.ones((height, width, 1))], axis=2)
    return FeatureMap(channels, kind, radius)


def local_contrast(image: np.ndarray, radius: int = 1) -> np.ndarray:
    """Window standard deviation with clamped borders; a cheap texturedness cue."""
    img = np.asarray(image, dtype=np.float64)
    size = 2 * radius + 1
    mean = ndimage.uniform_filter(img, size=size, mode="nearest")
    mean_sq = ndimage.uniform_filter(img * img, size=size, mode="nearest")
    return np.sqrt(np.maximum(mean_sq - mean * mean, 0.0))
