"""Frame-by-frame orchestration: matching, temporal carry-over, refinement.

Each frame runs the same chain — descriptors, cost volume, a semi-dense
disparity source, completion, state fusion, iterative refinement.  What
changes between modes is only where the semi-dense source comes from: the
cost volume itself (single-frame mode, and always on the first frame) or
the previous frame's result pushed through the relative camera motion
(temporal mode).  All cross-frame information lives in one TemporalCache;
the run loop never holds more than the current frame plus that cache.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .completion import complete
from .config import RunConfig
from .cost_volume import build_cost_volume, wta_semidense
from .errors import ConfigurationError, EmptyHintError
from .features import extract_features
from .fusion import FusionWeights, fuse_state
from .geometry import (CameraModel, HiddenState, Pose, forward_warp,
                       relative_pose)
from .refinement import iterate

log = logging.getLogger(__name__)

SOURCE_COST_VOLUME = "cost_volume"
SOURCE_TEMPORAL = "temporal"
SOURCE_FALLBACK = "fallback"


@dataclass(frozen=True)
class InputFrame:
    """One rectified stereo pair plus its camera-to-world pose."""

    left: np.ndarray
    right: np.ndarray
    pose: Pose
    timestamp: float
    name: str = ""


@dataclass(frozen=True)
class TemporalCache:
    """Everything the next frame may inherit: disparity, state, pose."""

    disparity: np.ndarray | None = None
    hidden: HiddenState | None = None
    pose: Pose | None = None

    def __post_init__(self):
        filled = [x is not None for x in (self.disparity, self.hidden,
                                          self.pose)]
        if any(filled) != all(filled):
            raise ConfigurationError(
                "temporal cache must be wholly present or wholly absent")
        if self.disparity is not None and not np.all(np.isfinite(self.disparity)):
            raise ConfigurationError("cached disparity must be finite")

    @property
    def present(self) -> bool:
        return self.disparity is not None


@dataclass(frozen=True)
class FrameResult:
    """Per-frame outputs plus bookkeeping for metric lines."""

    disparity: np.ndarray
    source: str
    hint_fraction: float      # valid share of the semi-dense source
    step_sizes: tuple         # mean |update| per refinement iteration


class PipelineSession:
    """Shared per-run state: configuration, camera, deterministic weights."""

    def __init__(self, cfg: RunConfig, cam: CameraModel):
        self.cfg = cfg
        self.cam = cam
        self.fusion_weights = FusionWeights.seeded(cfg.state_channels,
                                                   seed=cfg.seed)
        self.gate_weights = FusionWeights.seeded(cfg.state_channels,
                                                 seed=cfg.seed + 1)
        self.refinement = cfg.refinement()

    def _check_frame(self, frame: InputFrame):
        shape = (self.cam.height, self.cam.width)
        if frame.left.shape != shape or frame.right.shape != shape:
            raise ConfigurationError(
                f"frame {frame.name or '?'}: image shape "
                f"{frame.left.shape} does not match camera {shape}")


def process_frame(session: PipelineSession, frame: InputFrame,
                  cache: TemporalCache) -> tuple[FrameResult, TemporalCache]:
    """Run the full chain on one frame and roll the cache forward."""
    cfg = session.cfg
    session._check_frame(frame)
    left = extract_features(frame.left, kind=cfg.descriptor, radius=cfg.radius)
    right = extract_features(frame.right, kind=cfg.descriptor,
                             radius=cfg.radius)
    volume = build_cost_volume(left, right, cfg.disparities)

    use_cache = cfg.mode == "temporal" and cache.present
    history = None
    if use_cache:
        relative = relative_pose(cache.pose, frame.pose)
        semi, history = forward_warp(cache.disparity, cache.hidden, relative,
                                     session.cam)
        source = SOURCE_TEMPORAL
    else:
        semi = wta_semidense(volume, threshold=cfg.theta)
        source = SOURCE_COST_VOLUME

    try:
        completed = complete(semi, context=left,
                             num_state_channels=cfg.state_channels)
    except EmptyHintError:
        if source != SOURCE_TEMPORAL:
            raise
        log.warning("frame %s: warped hint is empty, falling back to the "
                    "cost-volume source", frame.name or "?")
        semi = wta_semidense(volume, threshold=cfg.theta)
        source = SOURCE_FALLBACK
        completed = complete(semi, context=left,
                             num_state_channels=cfg.state_channels)

    if history is None:
        history = HiddenState.zeros(session.cam.height, session.cam.width,
                                    cfg.state_channels)
    hidden0 = fuse_state(completed.state, history, session.fusion_weights)
    disparity, hidden, trace = iterate(completed.dense, hidden0, volume, left,
                                       session.refinement,
                                       gate_weights=session.gate_weights)

    steps = []
    prev = completed.dense
    for fused in trace.disp_propagated:
        steps.append(float(np.mean(np.abs(fused - prev))))
        prev = fused
    result = FrameResult(disparity=disparity, source=source,
                         hint_fraction=float(semi.valid.mean()),
                         step_sizes=tuple(steps))
    new_cache = TemporalCache(disparity=disparity, hidden=hidden,
                              pose=frame.pose)
    return result, new_cache


def run_sequence(frames, cfg: RunConfig, cam: CameraModel, sink) -> int:
    """Stream frames through process_frame; one frame in flight at a time.

    ``frames`` is any iterable of InputFrame; ``sink(frame, result)`` is
    called once per frame and owns all persistence.  Returns the number of
    frames processed.
    """
    session = PipelineSession(cfg, cam)
    cache = TemporalCache()
    count = 0
    for frame in frames:
        result, cache = process_frame(session, frame, cache)
        sink(frame, result)
        count += 1
    if count == 0:
        raise ConfigurationError("sequence contains no frames")
    return count
