"""GRU-style gated blend of fresh state features with warped history.

All three gates are 1x1-convolution linear maps over the concatenated
[current, history] channels:

    z = sigmoid(W_z [c, h] + b_z)      update gate
    r = sigmoid(W_r [c, h] + b_r)      reset gate
    q = tanh(W_q [r*c, h] + b_q)       candidate
    out = z * c + (1 - z) * q

Pixels with no history (never observed before, or vacated by the warp) use
a zero history vector, the neutral element of the linear maps.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, ParseError
from .geometry import HiddenState

WEIGHT_MAGIC = b"TCSW"
WEIGHT_VERSION = 1


@dataclass(frozen=True)
class FusionWeights:
    """Three F x 2F gate matrices plus their F-vector biases."""

    w_z: np.ndarray
    w_r: np.ndarray
    w_q: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_q: np.ndarray

    def __post_init__(self):
        mats = {}
        num = np.asarray(self.w_z).shape[0] if np.asarray(self.w_z).ndim == 2 else 0
        for name in ("w_z", "w_r", "w_q", "b_z", "b_r", "b_q"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            want = (num, 2 * num) if name.startswith("w") else (num,)
            if arr.shape != want:
                raise ConfigurationError(
                    f"{name} must have shape {want}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            mats[name] = arr
        for name, arr in mats.items():
            object.__setattr__(self, name, arr)

    @property
    def num_channels(self) -> int:
        return self.w_z.shape[0]

    @classmethod
    def seeded(cls, num_channels: int, seed: int = 0,
               sigma: float = 0.1) -> "FusionWeights":
        """Deterministic Gaussian weights; stands in for trained parameters."""
        rng = np.random.default_rng(seed)
        shape = (num_channels, 2 * num_channels)
        return cls(rng.normal(0.0, sigma, shape),
                   rng.normal(0.0, sigma, shape),
                   rng.normal(0.0, sigma, shape),
                   rng.normal(0.0, sigma, num_channels),
                   rng.normal(0.0, sigma, num_channels),
                   rng.normal(0.0, sigma, num_channels))


def _linear(weights: np.ndarray, bias: np.ndarray, field: np.ndarray) -> np.ndarray:
    # fixed-order einsum reduction keeps results independent of threading
    return np.einsum("hwc,fc->hwf", field, weights) + bias


def gru_blend(current: np.ndarray, history: np.ndarray,
              weights: FusionWeights) -> np.ndarray:
    """Core gate arithmetic on raw HxWxF arrays."""
    if current.shape != history.shape or current.shape[2] != weights.num_channels:
        raise ConfigurationError("channel layout does not match weights")
    cat = np.concatenate([current, history], axis=2)
    z = expit(_linear(weights.w_z, weights.b_z, cat))
    r = expit(_linear(weights.w_r, weights.b_r, cat))
    gated = np.concatenate([r * current, history], axis=2)
    q = np.tanh(_linear(weights.w_q, weights.b_q, gated))
    return z * current + (1.0 - z) * q


def fuse_state(current: HiddenState, history: HiddenState,
               weights: FusionWeights) -> HiddenState:
    """Blend fresh state features with (partially valid) warped history."""
    if not current.valid.all():
        raise ConfigurationError("current state features must be fully valid")
    if current.channels.shape != history.channels.shape:
        raise ConfigurationError("current/history channel shapes differ")
    hist = np.where(history.valid[:, :, None], history.channels, 0.0)
    blended = gru_blend(current.channels, hist, weights)
    return HiddenState(blended, np.ones(current.valid.shape, dtype=bool))


def save_weights(path, weights: FusionWeights) -> None:
    """Write the little-endian binary weight container."""
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<II", WEIGHT_VERSION, weights.num_channels))
        for arr in (weights.w_z, weights.w_r, weights.w_q,
                    weights.b_z, weights.b_r, weights.b_q):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_weights(path) -> FusionWeights:
    """Read a weight container written by save_weights."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != WEIGHT_MAGIC:
        raise ParseError(path, "bad magic; not a fusion weight file", offset=0)
    if len(blob) < 12:
        raise ParseError(path, "truncated header", offset=len(blob))
    version, num = struct.unpack_from("<II", blob, 4)
    if version != WEIGHT_VERSION:
        raise ParseError(path, f"unsupported version {version}", offset=4)
    if num == 0 or num > 4096:
        raise ParseError(path, f"implausible channel count {num}", offset=8)
    counts = [num * 2 * num] * 3 + [num] * 3
    need = 12 + 4 * sum(counts)
    if len(blob) != need:
        raise ParseError(path, f"expected {need} bytes, found {len(blob)}",
                         offset=min(need, len(blob)))
    offset = 12
    arrays = []
    for count in counts:
        arrays.append(np.frombuffer(blob, dtype="<f4", count=count,
                                    offset=offset).astype(np.float64))
        offset += 4 * count
    return FusionWeights(arrays[0].reshape(num, 2 * num),
                         arrays[1].reshape(num, 2 * num),
                         arrays[2].reshape(num, 2 * num),
                         arrays[3], arrays[4], arrays[5])
