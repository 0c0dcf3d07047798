"""Cosine-similarity cost volume over integer disparity hypotheses.

The volume stores C(v,u,d) = cos(F_l(v,u), F_r(v,u-d)) for d in [0, D).
Samples that would read left of the right image (u - d < 0) hold the
sentinel -1, the floor of the cosine range, so a sentinel can never win an
argmax against any in-range score.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError
from .features import FeatureMap
from .geometry import SemiDenseDisparity

SENTINEL = -1.0


@dataclass(frozen=True)
class CostVolume:
    """H x W x D matching-score grid; immutable once built."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 3:
            raise ConfigurationError("cost volume must be HxWxD")
        if not np.all(np.isfinite(vals)):
            raise ConfigurationError("cost volume must be finite")
        if np.any(vals < -1.0) or np.any(vals > 1.0):
            raise ConfigurationError("cost entries must lie in [-1, 1]")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @property
    def num_hypotheses(self) -> int:
        return self.values.shape[2]


def build_cost_volume(left: FeatureMap, right: FeatureMap,
                      num_hypotheses: int) -> CostVolume:
    """Correlate left and right descriptor fields over D disparity offsets."""
    if left.channels.shape != right.channels.shape:
        raise ConfigurationError("left/right feature shapes differ")
    if left.descriptor_kind != right.descriptor_kind:
        raise ConfigurationError("left/right descriptor kinds differ")
    height, width = left.shape
    if not 1 <= num_hypotheses <= width:
        raise ConfigurationError(
            f"need 1 <= D <= image width, got D={num_hypotheses}, W={width}")

    ln = left.channels / np.linalg.norm(left.channels, axis=2, keepdims=True)
    rn = right.channels / np.linalg.norm(right.channels, axis=2, keepdims=True)

    vals = np.full((height, width, num_hypotheses), SENTINEL)
    for d in range(num_hypotheses):
        # einsum with default optimize keeps the reduction order fixed, so
        # results do not depend on BLAS threading
        sim = np.einsum("hwk,hwk->hw", ln[:, d:, :], rn[:, :width - d, :])
        vals[:, d:, d] = np.clip(sim, -1.0, 1.0)
    return CostVolume(vals)


def wta_semidense(volume: CostVolume, threshold: float = 0.3) -> SemiDenseDisparity:
    """Winner-take-all with a second-best margin test.

    A pixel is kept when the best score beats the best score outside the
    winner's immediate neighborhood {d1-1, d1, d1+1} by more than
    ``threshold``.  Argmax ties break toward the smaller disparity.
    Sentinel entries carry no evidence: they can neither win nor serve as
    the second best, so pixels whose in-range hypotheses all sit within
    the winner's neighborhood (image-edge pixels) come out invalid.
    """
    if not 0.0 <= threshold <= 2.0:
        raise ConfigurationError("threshold must lie in [0, 2]")
    num = volume.num_hypotheses
    if num < 4:
        raise ConfigurationError("need at least 4 disparity hypotheses")
    vals = np.where(volume.values == SENTINEL, -np.inf, volume.values)
    best = np.argmax(vals, axis=2)                      # first max = smallest d
    best_score = np.take_along_axis(vals, best[:, :, None], axis=2)[:, :, 0]

    hyp = np.arange(num)
    excluded = np.abs(hyp[None, None, :] - best[:, :, None]) <= 1
    runner_score = np.max(np.where(excluded, -np.inf, vals), axis=2)

    evidence = np.isfinite(best_score) & np.isfinite(runner_score)
    runner_safe = np.where(evidence, runner_score, 0.0)   # avoid inf-inf
    valid = evidence & (best_score - runner_safe > threshold)
    return SemiDenseDisparity(np.where(valid, best.astype(np.float64), 0.0), valid)


def lookup(volume: CostVolume, disparity: np.ndarray,
           radius: int = 4) -> np.ndarray:
    """Sample a (2r+1)-wide slab of scores around a dense disparity map.

    Entry k holds the linearly interpolated score at disparity
    d(v,u) + (k - r), with queries clamped to [0, D-1].  If an
    interpolation endpoint falls in the sentinel region (index > u) the
    slab entry is -1; endpoints with zero weight do not count.
    """
    disp = np.asarray(disparity, dtype=np.float64)
    if disp.shape != volume.shape:
        raise ConfigurationError("disparity shape does not match cost volume")
    if not np.all(np.isfinite(disp)):
        raise ConfigurationError("disparity must be finite")
    if np.any(disp < 0):
        raise DomainError("lookup requires non-negative disparities")
    if radius < 0:
        raise ConfigurationError("lookup radius must be non-negative")

    vals = volume.values
    num = volume.num_hypotheses
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    query = np.clip(disp[:, :, None] + offsets, 0.0, float(num - 1))
    lo = np.floor(query).astype(np.int64)
    hi = np.minimum(lo + 1, num - 1)
    frac = query - lo

    v_lo = np.take_along_axis(vals, lo, axis=2)
    v_hi = np.take_along_axis(vals, hi, axis=2)
    slab = (1.0 - frac) * v_lo + frac * v_hi

    cols = np.arange(volume.shape[1])[None, :, None]
    sentinel = (lo > cols) | ((frac > 0) & (hi > cols))
    return np.where(sentinel, SENTINEL, slab)


def dump_cost_curve(volume: CostVolume, row: int, col: int, path) -> None:
    """Write one pixel's matching curve as a two-column CSV (d, score)."""
    if not (0 <= row < volume.shape[0] and 0 <= col < volume.shape[1]):
        raise ConfigurationError("pixel outside cost volume")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d", "cost"])
        for d in range(volume.num_hypotheses):
            writer.writerow([d, repr(float(volume.values[row, col, d]))])
