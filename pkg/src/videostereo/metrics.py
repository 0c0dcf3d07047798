"""Pure evaluators: matching losses, accuracy metrics, temporal consistency.

Nothing here feeds back into the pipeline — these functions exist so the
quality of every stage can be scored against ground truth, and so tests can
pin their arithmetic against brute-force oracles.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .cost_volume import CostVolume
from .errors import ConfigurationError, DomainError, UndefinedLossError
from .geometry import CameraModel, Pose, relative_pose
from .refinement import GradientField


@dataclass(frozen=True)
class LossWeights:
    """Margin, decay, and balance scalars for the loss combination."""

    eta: float = 0.5
    gamma: float = 0.9
    lambda_dc: float = 0.1
    lambda_gdp: float = 1.2

    def __post_init__(self):
        if self.eta < 0:
            raise ConfigurationError("margin eta must be >= 0")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError("decay gamma must lie in (0, 1]")
        if self.lambda_dc < 0 or self.lambda_gdp < 0:
            raise ConfigurationError("balance weights must be >= 0")


@dataclass
class MetricsReport:
    """One region's worth of numbers; absent metrics stay None."""

    region: str
    n_pixels: int
    epe: float | None = None
    bad1: float | None = None
    bad3: float | None = None
    d1: float | None = None
    abs_dd: float | None = None
    relu_de: float | None = None

    def merged_with(self, other: "MetricsReport") -> "MetricsReport":
        """Combine accuracy and temporal halves computed for the same region."""
        if other.region != self.region:
            raise ConfigurationError("cannot merge reports for different regions")
        out = MetricsReport(region=self.region, n_pixels=self.n_pixels)
        for name in ("epe", "bad1", "bad3", "d1", "abs_dd", "relu_de"):
            mine, theirs = getattr(self, name), getattr(other, name)
            setattr(out, name, mine if mine is not None else theirs)
        return out

    def to_json_line(self, **extra) -> str:
        record = dict(extra)
        record.update(asdict(self))
        return json.dumps(record, sort_keys=True)


# ---------------------------------------------------------------------- psi

def psi(column: np.ndarray, disparity: float) -> float:
    """Linear interpolation of a per-pixel cost column at a real disparity."""
    col = np.asarray(column, dtype=np.float64)
    if col.ndim != 1:
        raise ConfigurationError("psi takes a 1-D cost column")
    num = col.shape[0]
    if not 0.0 <= disparity <= num - 1:
        raise DomainError(f"disparity {disparity} outside [0, {num - 1}]")
    lo = int(np.floor(disparity))
    if lo == disparity:
        return float(col[lo])
    frac = disparity - lo
    return float((1.0 - frac) * col[lo] + frac * col[lo + 1])


def _psi_field(values: np.ndarray, disp: np.ndarray) -> np.ndarray:
    """Vectorized psi over an HxWxD volume at an HxW disparity map."""
    num = values.shape[2]
    lo = np.floor(disp).astype(np.int64)
    lo = np.clip(lo, 0, num - 1)
    hi = np.minimum(lo + 1, num - 1)
    frac = disp - lo
    v_lo = np.take_along_axis(values, lo[:, :, None], axis=2)[:, :, 0]
    v_hi = np.take_along_axis(values, hi[:, :, None], axis=2)[:, :, 0]
    return (1.0 - frac) * v_lo + frac * v_hi


# --------------------------------------------------------------------- losses

def cost_volume_loss(volume: CostVolume, d_gt: np.ndarray,
                     valid_gt: np.ndarray | None = None,
                     eta: float = 0.5) -> float:
    """Contrastive volume quality: reward psi(gt), margin against best non-match.

    Non-matches are integer hypotheses outside [gt-1.5, gt+1.5].  Pixels
    with invalid GT, GT beyond the last hypothesis, or an empty non-match
    set do not contribute.
    """
    gt = np.asarray(d_gt, dtype=np.float64)
    if gt.shape != volume.shape:
        raise ConfigurationError("GT shape does not match volume")
    if valid_gt is None:
        valid_gt = np.ones(gt.shape, dtype=bool)
    num = volume.num_hypotheses
    contributing = valid_gt & (gt >= 0) & (gt <= num - 1)

    hyp = np.arange(num, dtype=np.float64)
    excluded = (hyp[None, None, :] >= np.ceil(gt - 1.5)[:, :, None]) & \
               (hyp[None, None, :] <= np.floor(gt + 1.5)[:, :, None])
    masked = np.where(excluded, -np.inf, volume.values)
    nm_score = masked.max(axis=2)
    contributing &= np.isfinite(nm_score)
    if not np.any(contributing):
        raise UndefinedLossError("no pixel contributes to the volume loss")

    psi_gt = _psi_field(volume.values, gt)
    per_pixel = 1.0 - psi_gt + np.maximum(eta + nm_score - psi_gt, 0.0)
    return float(per_pixel[contributing].mean())


def _masked_l1(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    if not np.any(mask):
        raise UndefinedLossError("no valid pixel for an L1 term")
    return float(np.abs(a - b)[mask].mean())


def disparity_loss(d_dc: np.ndarray, d_dsr: list, d_gdp: list,
                   d_gt: np.ndarray, valid_gt: np.ndarray | None = None,
                   weights: LossWeights = LossWeights()) -> float:
    """Initialization L1 plus decay-weighted per-iteration L1 terms.

    lambda_dc * L1(d_dc) + sum_i gamma^(N-i) * (L1(d_dsr_i)
    + lambda_gdp * L1(d_gdp_i)) with i counted from 1; the latest
    iteration carries the largest weight.
    """
    gt = np.asarray(d_gt, dtype=np.float64)
    if valid_gt is None:
        valid_gt = np.ones(gt.shape, dtype=bool)
    if len(d_dsr) != len(d_gdp):
        raise ConfigurationError("per-iteration output lists differ in length")
    total = weights.lambda_dc * _masked_l1(np.asarray(d_dc), gt, valid_gt)
    count = len(d_dsr)
    for idx, (step_map, prop_map) in enumerate(zip(d_dsr, d_gdp)):
        decay = weights.gamma ** (count - (idx + 1))
        total += decay * (_masked_l1(np.asarray(step_map), gt, valid_gt)
                          + weights.lambda_gdp
                          * _masked_l1(np.asarray(prop_map), gt, valid_gt))
    return float(total)


def forward_diff_gradients(disp: np.ndarray):
    """du(u,v) = d(u+1,v) - d(u,v); dv likewise along rows; last line zero."""
    disp = np.asarray(disp, dtype=np.float64)
    du = np.zeros_like(disp)
    dv = np.zeros_like(disp)
    du[:, :-1] = disp[:, 1:] - disp[:, :-1]
    dv[:-1, :] = disp[1:, :] - disp[:-1, :]
    return du, dv


def gradient_loss(g_gsr: GradientField, d_gdp: np.ndarray, d_gt: np.ndarray,
                  valid_gt: np.ndarray | None = None) -> float:
    """Mean L1 from refined gradients and from propagated-output gradients
    to the GT gradient, forward differences on both discrete maps."""
    gt = np.asarray(d_gt, dtype=np.float64)
    if g_gsr.shape != gt.shape:
        raise ConfigurationError("gradient field shape does not match GT")
    if valid_gt is None:
        valid_gt = np.ones(gt.shape, dtype=bool)
    gt_du, gt_dv = forward_diff_gradients(gt)
    out_du, out_dv = forward_diff_gradients(np.asarray(d_gdp))

    # forward stencil needs (u,v), (u+1,v), (u,v+1) all valid and in-bounds
    stencil = np.zeros(gt.shape, dtype=bool)
    stencil[:-1, :-1] = (valid_gt[:-1, :-1] & valid_gt[:-1, 1:]
                         & valid_gt[1:, :-1])
    if not np.any(stencil):
        raise UndefinedLossError("no pixel has a fully valid GT stencil")

    gsr_term = (np.abs(g_gsr.du - gt_du) + np.abs(g_gsr.dv - gt_dv))[stencil].mean()
    gdp_term = (np.abs(out_du - gt_du) + np.abs(out_dv - gt_dv))[stencil].mean()
    return float(gsr_term + gdp_term)


def total_loss(cv_loss: float, disp_loss: float, grad_loss: float) -> float:
    parts = np.array([cv_loss, disp_loss, grad_loss], dtype=np.float64)
    if not np.all(np.isfinite(parts)):
        raise ConfigurationError("loss components must be finite")
    return float(parts.sum())


# -------------------------------------------------------------------- metrics

def accuracy_metrics(disp: np.ndarray, d_gt: np.ndarray,
                     region_mask: np.ndarray,
                     valid_gt: np.ndarray | None = None,
                     region: str = "ALL") -> MetricsReport:
    """EPE, bad-1, bad-3, and D1 over one region; empty regions stay absent."""
    disp = np.asarray(disp, dtype=np.float64)
    gt = np.asarray(d_gt, dtype=np.float64)
    if valid_gt is None:
        valid_gt = np.ones(gt.shape, dtype=bool)
    select = np.asarray(region_mask, dtype=bool) & valid_gt
    count = int(np.count_nonzero(select))
    if count == 0:
        return MetricsReport(region=region, n_pixels=0)
    err = np.abs(disp - gt)[select]
    gt_sel = gt[select]
    return MetricsReport(
        region=region, n_pixels=count,
        epe=float(err.mean()),
        bad1=float((err > 1.0).mean() * 100.0),
        bad3=float((err > 3.0).mean() * 100.0),
        d1=float(((err > 3.0) & (err > 0.05 * gt_sel)).mean() * 100.0))


def bilinear_sample(field: np.ndarray, u: np.ndarray, v: np.ndarray,
                    valid: np.ndarray | None = None):
    """Sample an HxW field at real coordinates.

    Returns (values, ok) where ok requires all four touched corners to be
    inside the image and, when ``valid`` is given, marked valid.
    """
    field = np.asarray(field, dtype=np.float64)
    height, width = field.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    ok = (u >= 0) & (u <= width - 1) & (v >= 0) & (v <= height - 1)
    uc = np.clip(u, 0, width - 1)
    vc = np.clip(v, 0, height - 1)
    u0 = np.floor(uc).astype(np.int64)
    v0 = np.floor(vc).astype(np.int64)
    u1 = np.minimum(u0 + 1, width - 1)
    v1 = np.minimum(v0 + 1, height - 1)
    fu = uc - u0
    fv = vc - v0
    value = ((1 - fv) * ((1 - fu) * field[v0, u0] + fu * field[v0, u1])
             + fv * ((1 - fu) * field[v1, u0] + fu * field[v1, u1]))
    if valid is not None:
        corners_ok = (valid[v0, u0] & valid[v0, u1]
                      & valid[v1, u0] & valid[v1, u1])
        ok = ok & corners_ok
    return value, ok


def _nearest_sample(field: np.ndarray, u: np.ndarray, v: np.ndarray,
                    valid: np.ndarray | None = None):
    height, width = field.shape
    ui = np.rint(u).astype(np.int64)
    vi = np.rint(v).astype(np.int64)
    ok = (ui >= 0) & (ui < width) & (vi >= 0) & (vi < height)
    uc = np.clip(ui, 0, width - 1)
    vc = np.clip(vi, 0, height - 1)
    value = field[vc, uc]
    if valid is not None:
        ok = ok & valid[vc, uc]
    return value, ok


def temporal_metrics(d_t: np.ndarray, d_t1: np.ndarray,
                     flow_u: np.ndarray, flow_v: np.ndarray,
                     flow_valid: np.ndarray,
                     d_gt_t: np.ndarray, d_gt_t1: np.ndarray,
                     region_mask: np.ndarray,
                     cam: CameraModel, pose_t: Pose, pose_t1: Pose,
                     region: str = "ALL",
                     sampling: str = "bilinear") -> MetricsReport:
    """Frame-to-frame consistency of estimates aligned by GT flow.

    |Δd|: the next frame's disparity is sampled at each pixel's flow
    target, lifted to 3D, carried back through the t+1 → t pose transform,
    re-expressed as a frame-t disparity, and differenced against d_t.
    Relu(Δe): error maps |d − gt| of both frames are aligned by sampling
    alone and only increases count.  Both use one contributing set: region
    pixels with valid flow, in-bounds samples, positive sampled disparity,
    and positive re-expressed depth.
    """
    sampler = {"bilinear": bilinear_sample, "nearest": _nearest_sample}.get(sampling)
    if sampler is None:
        raise ConfigurationError("sampling must be 'bilinear' or 'nearest'")
    height, width = np.asarray(d_t).shape
    vv, uu = np.mgrid[0:height, 0:width].astype(np.float64)
    su = uu + np.asarray(flow_u, dtype=np.float64)
    sv = vv + np.asarray(flow_v, dtype=np.float64)

    d_next, ok = sampler(np.asarray(d_t1, dtype=np.float64), su, sv)
    contributing = (np.asarray(region_mask, dtype=bool)
                    & np.asarray(flow_valid, dtype=bool) & ok & (d_next > 0))

    # re-express the sampled t+1 disparity in frame t via the pose chain
    z_next = np.where(contributing, cam.baseline * cam.fx / np.where(
        contributing, d_next, 1.0), 1.0)
    x_cam = (su - cam.cx) * z_next / cam.fx
    y_cam = (sv - cam.cy) * z_next / cam.fy
    pts = np.stack([x_cam, y_cam, z_next], axis=-1)
    into_t = relative_pose(pose_t1, pose_t)
    z_in_t = pts @ into_t.rotation.T[:, 2] + into_t.translation[2]
    contributing &= z_in_t > 0
    if not np.any(contributing):
        return MetricsReport(region=region, n_pixels=0)
    d_back = cam.baseline * cam.fx / np.where(contributing, z_in_t, 1.0)
    abs_dd = np.abs(d_back - np.asarray(d_t))[contributing].mean()

    err_t = np.abs(np.asarray(d_t) - np.asarray(d_gt_t))
    err_t1 = np.abs(np.asarray(d_t1) - np.asarray(d_gt_t1))
    err_next, _ = sampler(err_t1, su, sv)
    relu_de = np.maximum(err_next - err_t, 0.0)[contributing].mean()

    return MetricsReport(region=region,
                         n_pixels=int(np.count_nonzero(contributing)),
                         abs_dd=float(abs_dd), relu_de=float(relu_de))
