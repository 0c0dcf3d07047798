"""Iterative refinement alternating between disparity and gradient space.

One iteration runs four stages over immutable inputs:

1. disparity step — fit a parabola around the best score in a local cost
   slab and move the disparity by the (clamped) sub-pixel offset;
2. gradient sampling + cleanup — recover local plane slopes from disparity
   differences at non-collinear offset pairs, take the per-pixel median
   over the sampled estimates, and smooth it with context-similarity
   weights;
3. plane propagation — every pixel receives candidate disparities
   extrapolated from its neighbors' local planes;
4. weighted fusion — candidates are averaged under a softmax over their
   matching scores, and a gated per-pixel blend folds the result into the
   hidden state.

Each stage is a deterministic surrogate for a learned block in the design
this follows; interfaces and data flow are kept so trained modules could be
substituted one for one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cost_volume import SENTINEL, CostVolume, lookup
from .errors import ConfigurationError
from .features import FeatureMap
from .fileio import write_pfm
from .fusion import FusionWeights, gru_blend
from .geometry import HiddenState

DEFAULT_OFFSET_PAIRS = (((1, 0), (0, 1)),
                        ((-1, 0), (0, -1)),
                        ((1, 1), (1, -1)),
                        ((-1, 1), (-1, -1)))
DEFAULT_NEIGHBORHOOD = tuple((du, dv) for dv in (-1, 0, 1) for du in (-1, 0, 1))

# weight of the slab statistics folded into the hidden state each step
_STATE_BLEND = 0.25


@dataclass(frozen=True)
class GradientField:
    """Disparity slopes du = ∂d/∂u, dv = ∂d/∂v in px/px, clamped per component."""

    du: np.ndarray
    dv: np.ndarray
    clamp: float = 8.0

    def __post_init__(self):
        if self.clamp <= 0:
            raise ConfigurationError("gradient clamp must be positive")
        arrs = {}
        for name in ("du", "dv"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2:
                raise ConfigurationError("gradient components must be HxW")
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError("gradients must be finite")
            arr = np.clip(arr, -self.clamp, self.clamp)
            arr.setflags(write=False)
            arrs[name] = arr
        if arrs["du"].shape != arrs["dv"].shape:
            raise ConfigurationError("du and dv shapes differ")
        for name, arr in arrs.items():
            object.__setattr__(self, name, arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.du.shape


@dataclass(frozen=True)
class RefinementConfig:
    """Knobs for the iteration loop; defaults follow the reference setup."""

    num_iterations: int = 5
    lookup_radius: int = 4
    offset_pairs: tuple = DEFAULT_OFFSET_PAIRS
    neighborhood: tuple = DEFAULT_NEIGHBORHOOD
    beta: float = 14.0
    step_clamp: float = 2.0
    gradient_clamp: float = 8.0

    def __post_init__(self):
        if self.num_iterations < 0:
            raise ConfigurationError("iteration count must be >= 0")
        if self.lookup_radius < 1:
            raise ConfigurationError("lookup radius must be >= 1")
        if self.step_clamp <= 0 or self.gradient_clamp <= 0:
            raise ConfigurationError("clamps must be positive")
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ConfigurationError("softmax sharpness must be finite and >= 0")
        if not self.offset_pairs:
            raise ConfigurationError("need at least one gradient offset pair")
        for (u1, v1), (u2, v2) in self.offset_pairs:
            if u2 * v1 - u1 * v2 == 0:
                raise ConfigurationError(
                    f"offset pair ({u1},{v1}),({u2},{v2}) is collinear")
        if (0, 0) not in self.neighborhood:
            raise ConfigurationError("propagation neighborhood must include (0,0)")


@dataclass
class IterationTrace:
    """Per-iteration intermediates, consumed by the loss evaluators."""

    disp_steps: list = field(default_factory=list)      # after disparity step
    gradients: list = field(default_factory=list)       # refined GradientField
    disp_propagated: list = field(default_factory=list)  # after fusion
    step_sizes: list = field(default_factory=list)       # signed Δd fields

    def __len__(self):
        return len(self.disp_propagated)


def refine_disparity_step(disp: np.ndarray, hidden: HiddenState,
                          slab: np.ndarray, cfg: RefinementConfig):
    """Local parabola step toward the slab's score peak.

    Returns (new disparity, updated hidden state, signed step field).  Flat
    slabs do not move, and neither do slabs whose centre entry is a
    sentinel: there the current estimate points off the image, so any real
    scores left in the window belong to hypotheses unrelated to it and
    chasing their maximum would drag the pixel toward noise.  A peak on the
    slab edge, or next to a sentinel entry, takes the integer offset
    without a parabola fit.
    """
    if slab.shape[:2] != disp.shape or slab.ndim != 3:
        raise ConfigurationError("slab shape does not match disparity")
    radius = (slab.shape[2] - 1) // 2
    if slab.shape[2] != 2 * radius + 1:
        raise ConfigurationError("slab width must be odd")

    peak = np.argmax(slab, axis=2)
    peak_score = np.take_along_axis(slab, peak[:, :, None], axis=2)[:, :, 0]
    flat = np.max(slab, axis=2) == np.min(slab, axis=2)
    sentinel_anchored = slab[:, :, radius] == SENTINEL

    interior = (peak > 0) & (peak < 2 * radius)
    lo_idx = np.clip(peak - 1, 0, 2 * radius)
    hi_idx = np.clip(peak + 1, 0, 2 * radius)
    y_lo = np.take_along_axis(slab, lo_idx[:, :, None], axis=2)[:, :, 0]
    y_hi = np.take_along_axis(slab, hi_idx[:, :, None], axis=2)[:, :, 0]
    usable = interior & (y_lo != SENTINEL) & (y_hi != SENTINEL)

    denom = y_lo - 2.0 * peak_score + y_hi
    safe = np.abs(denom) > 1e-12
    sub = np.where(usable & safe,
                   0.5 * (y_lo - y_hi) / np.where(safe, denom, 1.0), 0.0)
    sub = np.clip(sub, -1.0, 1.0)

    step = (peak - radius).astype(np.float64) + sub
    step = np.where(flat | sentinel_anchored, 0.0, step)
    step = np.clip(step, -cfg.step_clamp, cfg.step_clamp)
    new_disp = np.maximum(disp + step, 0.0)

    # surrogate hidden update: fold normalized slab statistics into the
    # first channels so downstream gates see match quality and step size
    stats = np.stack([peak_score, slab.mean(axis=2),
                      step / cfg.step_clamp], axis=2)
    channels = hidden.channels.copy()
    k = min(3, channels.shape[2])
    channels[:, :, :k] = ((1.0 - _STATE_BLEND) * channels[:, :, :k]
                          + _STATE_BLEND * stats[:, :, :k])
    return new_disp, HiddenState(channels, hidden.valid), step


def _shift_clamped(arr: np.ndarray, du: int, dv: int) -> np.ndarray:
    """arr sampled at (v+dv, u+du) with coordinates clamped to the image."""
    height, width = arr.shape[:2]
    rows = np.clip(np.arange(height) + dv, 0, height - 1)
    cols = np.clip(np.arange(width) + du, 0, width - 1)
    return arr[rows[:, None], cols[None, :]]


def sample_gradients(disp: np.ndarray, offset_pairs=DEFAULT_OFFSET_PAIRS,
                     clamp: float = 8.0) -> list[GradientField]:
    """Plane slopes from disparity differences at two offsets per pair.

    For offsets x1, x2 with differences Δd1, Δd2 the unique plane through
    the three samples has
        ∂d/∂u = (Δv1·Δd2 − Δv2·Δd1) / (Δu2·Δv1 − Δu1·Δv2)
        ∂d/∂v = (Δu2·Δd1 − Δu1·Δd2) / (Δu2·Δv1 − Δu1·Δv2).
    Neighbors outside the image are clamped, so border estimates lean on
    repeated samples and are refined away by the median/smoothing stage.
    """
    disp = np.asarray(disp, dtype=np.float64)
    fields = []
    for (u1, v1), (u2, v2) in offset_pairs:
        det = u2 * v1 - u1 * v2
        if det == 0:
            raise ConfigurationError(
                f"offset pair ({u1},{v1}),({u2},{v2}) is collinear")
        dd1 = _shift_clamped(disp, u1, v1) - disp
        dd2 = _shift_clamped(disp, u2, v2) - disp
        du = (v1 * dd2 - v2 * dd1) / det
        dv = (u2 * dd1 - u1 * dd2) / det
        fields.append(GradientField(du, dv, clamp=clamp))
    return fields


def refine_gradients(samples: list[GradientField], context: FeatureMap,
                     clamp: float = 8.0) -> GradientField:
    """Median over samples, then one 3x3 context-similarity-weighted average."""
    if not samples:
        raise ConfigurationError("need at least one gradient sample")
    shape = samples[0].shape
    if context.shape != shape:
        raise ConfigurationError("context shape does not match gradients")
    du = np.median(np.stack([s.du for s in samples]), axis=0)
    dv = np.median(np.stack([s.dv for s in samples]), axis=0)

    unit = context.channels / np.linalg.norm(context.channels, axis=2,
                                             keepdims=True)
    acc_u = np.zeros(shape)
    acc_v = np.zeros(shape)
    total = np.zeros(shape)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            sim = np.einsum("hwk,hwk->hw", unit,
                            _shift_clamped(unit, dx, dy))
            weight = np.maximum(sim, 0.0)
            acc_u += weight * _shift_clamped(du, dx, dy)
            acc_v += weight * _shift_clamped(dv, dx, dy)
            total += weight
    # center weight is cos(x,x)=1, so the denominator never vanishes
    return GradientField(acc_u / total, acc_v / total, clamp=clamp)


def propagate(disp: np.ndarray, grad: GradientField,
              neighborhood=DEFAULT_NEIGHBORHOOD) -> np.ndarray:
    """Per-pixel disparity candidates extrapolated from neighbors' planes.

    Neighbor n at clamped position p+Δ contributes
    d(n) + (u_p − u_n)·du(n) + (v_p − v_n)·dv(n); at borders the clamped
    displacement (not the nominal offset) is used, so exact planes still
    propagate exactly.
    """
    disp = np.asarray(disp, dtype=np.float64)
    if grad.shape != disp.shape:
        raise ConfigurationError("gradient shape does not match disparity")
    if (0, 0) not in neighborhood:
        raise ConfigurationError("propagation neighborhood must include (0,0)")
    height, width = disp.shape
    vv, uu = np.mgrid[0:height, 0:width]
    candidates = np.empty((height, width, len(neighborhood)))
    for k, (du_off, dv_off) in enumerate(neighborhood):
        un = np.clip(uu + du_off, 0, width - 1)
        vn = np.clip(vv + dv_off, 0, height - 1)
        candidates[:, :, k] = (disp[vn, un]
                               + (uu - un) * grad.du[vn, un]
                               + (vv - vn) * grad.dv[vn, un])
    return candidates


def weighted_fusion(candidates: np.ndarray, volume: CostVolume,
                    hidden: HiddenState | None = None,
                    beta: float = 14.0) -> np.ndarray:
    """Softmax-over-matching-score average of the candidate stack.

    ``hidden`` is accepted for interface parity with a learned weight
    regressor; the surrogate scores candidates purely by their
    interpolated cost.  Candidates below zero disparity score as
    sentinels, like any candidate whose interpolation touches the
    out-of-range region.
    """
    cands = np.asarray(candidates, dtype=np.float64)
    if cands.ndim != 3 or cands.shape[:2] != volume.shape:
        raise ConfigurationError("candidate stack shape mismatch")
    if not np.all(np.isfinite(cands)):
        raise ConfigurationError("candidates must be finite")
    num = volume.num_hypotheses
    scores = np.empty_like(cands)
    for k in range(cands.shape[2]):
        slab = lookup(volume, np.clip(cands[:, :, k], 0.0, float(num - 1)),
                      radius=0)
        scores[:, :, k] = slab[:, :, 0]
    scores = np.where(cands < 0, SENTINEL, scores)

    logits = beta * scores
    logits -= logits.max(axis=2, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=2, keepdims=True)
    return np.einsum("hwk,hwk->hw", weights, cands)


def _encode_disparity(disp: np.ndarray, num_channels: int) -> np.ndarray:
    """Bounded per-pixel features of the current disparity for the gates."""
    height, width = disp.shape
    enc = np.zeros((height, width, num_channels))
    enc[:, :, 0] = disp / (1.0 + disp)
    if num_channels > 1:
        enc[:, :, 1] = np.tanh(_shift_clamped(disp, 1, 0) - disp)
    if num_channels > 2:
        enc[:, :, 2] = np.tanh(_shift_clamped(disp, 0, 1) - disp)
    return enc


def iterate(disp0: np.ndarray, hidden0: HiddenState, volume: CostVolume,
            context: FeatureMap, cfg: RefinementConfig,
            gate_weights: FusionWeights | None = None):
    """Run the full refinement loop; returns (d_N, h_N, trace)."""
    disp = np.asarray(disp0, dtype=np.float64)
    if disp.shape != volume.shape or hidden0.channels.shape[:2] != disp.shape:
        raise ConfigurationError("disparity/hidden/volume shapes disagree")
    if gate_weights is None:
        gate_weights = FusionWeights.seeded(hidden0.num_channels, seed=0)
    hidden = hidden0
    trace = IterationTrace()
    for _ in range(cfg.num_iterations):
        slab = lookup(volume, disp, radius=cfg.lookup_radius)
        disp_step, hidden, step = refine_disparity_step(disp, hidden, slab, cfg)
        samples = sample_gradients(disp_step, cfg.offset_pairs,
                                   clamp=cfg.gradient_clamp)
        grad = refine_gradients(samples, context, clamp=cfg.gradient_clamp)
        cands = propagate(disp_step, grad, cfg.neighborhood)
        fused = np.maximum(weighted_fusion(cands, volume, hidden, cfg.beta), 0.0)

        encoding = _encode_disparity(fused, hidden.num_channels)
        hidden = HiddenState(gru_blend(encoding, hidden.channels, gate_weights),
                             hidden.valid)
        trace.disp_steps.append(disp_step)
        trace.gradients.append(grad)
        trace.disp_propagated.append(fused)
        trace.step_sizes.append(step)
        disp = fused
    return disp, hidden, trace


def dump_iteration_maps(trace: IterationTrace, directory) -> None:
    """Write per-iteration disparity and |step| maps as PFM files."""
    import os
    os.makedirs(directory, exist_ok=True)
    for i, (disp, step) in enumerate(zip(trace.disp_propagated,
                                         trace.step_sizes)):
        write_pfm(os.path.join(directory, f"disp_iter{i:02d}.pfm"), disp)
        write_pfm(os.path.join(directory, f"step_iter{i:02d}.pfm"),
                  np.abs(step))
