"""Densify a semi-dense disparity map and derive per-pixel state features.

The hole filling is a pull-push pyramid: validity-weighted 2x2 averaging
down to a level with no holes, then nearest-parent hole filling on the way
back up.  Every filled value is therefore a convex combination of input
valid values — the fill can never extrapolate outside the input range — and
valid pixels pass through verbatim.  A learned completion network could be
swapped in behind the same interface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, EmptyHintError
from .features import FeatureMap, local_contrast
from .geometry import HiddenState, SemiDenseDisparity

# distance-to-valid saturates here; beyond this the cue is "far" either way
DISTANCE_CAP = 8.0


@dataclass(frozen=True)
class CompletionOutput:
    """Fully dense disparity plus the state features handed to fusion."""

    dense: np.ndarray
    state: HiddenState

    def __post_init__(self):
        dense = np.array(self.dense, dtype=np.float64)
        if dense.ndim != 2:
            raise ConfigurationError("dense disparity must be HxW")
        if not np.all(np.isfinite(dense)) or np.any(dense < 0):
            raise ConfigurationError("dense disparity must be finite and >= 0")
        if self.state.channels.shape[:2] != dense.shape:
            raise ConfigurationError("state shape does not match disparity")
        dense.setflags(write=False)
        object.__setattr__(self, "dense", dense)


def _downsample(values: np.ndarray, weights: np.ndarray):
    """2x2 validity-weighted pooling; ragged edges padded with zero weight."""
    h, w = values.shape
    hh, ww = (h + 1) // 2, (w + 1) // 2
    acc_v = np.zeros((hh * 2, ww * 2))
    acc_w = np.zeros((hh * 2, ww * 2))
    acc_v[:h, :w] = values * weights
    acc_w[:h, :w] = weights
    wsum = acc_w.reshape(hh, 2, ww, 2).sum(axis=(1, 3))
    vsum = acc_v.reshape(hh, 2, ww, 2).sum(axis=(1, 3))
    vals = np.divide(vsum, wsum, out=np.zeros_like(vsum), where=wsum > 0)
    return vals, wsum


def pull_push_fill(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Fill ``values`` where ``valid`` is false; returns a dense array."""
    weights = valid.astype(np.float64)
    if not np.any(weights):
        raise EmptyHintError("cannot complete a map with no valid pixels")
    levels = [(np.where(valid, values, 0.0), weights)]
    while np.any(levels[-1][1] == 0):
        levels.append(_downsample(*levels[-1]))
    filled = levels[-1][0]
    for vals, wts in reversed(levels[:-1]):
        h, w = vals.shape
        parent = np.repeat(np.repeat(filled, 2, axis=0), 2, axis=1)[:h, :w]
        filled = np.where(wts > 0, vals, parent)
    return filled


def complete(semi: SemiDenseDisparity, context: FeatureMap | None = None,
             num_state_channels: int = 16) -> CompletionOutput:
    """Densify ``semi`` and build its state-feature field.

    ``context`` is part of the interface for drop-in learned completers;
    the pull-push surrogate ignores it.  State channels: 0 holds the
    completed disparity squashed to [0,1) via d/(1+d); 1 the clamped,
    normalized distance to the nearest valid input pixel; 2 the squashed
    local disparity contrast; the rest are zero up to the configured width.
    """
    if context is not None and context.shape != semi.shape:
        raise ConfigurationError("context feature shape does not match disparity")
    if num_state_channels < 3:
        raise ConfigurationError("need at least 3 state channels")
    if semi.num_valid == 0:
        raise EmptyHintError("completion needs at least one valid disparity")

    dense = pull_push_fill(semi.values, semi.valid)
    height, width = dense.shape

    state = np.zeros((height, width, num_state_channels))
    state[:, :, 0] = dense / (1.0 + dense)
    dist = ndimage.distance_transform_edt(~semi.valid)
    state[:, :, 1] = np.minimum(dist, DISTANCE_CAP) / DISTANCE_CAP
    contrast = local_contrast(dense, radius=1)
    state[:, :, 2] = contrast / (1.0 + contrast)

    return CompletionOutput(dense, HiddenState(state, np.ones((height, width), dtype=bool)))
