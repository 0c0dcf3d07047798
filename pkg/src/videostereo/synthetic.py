"""Analytic ground-truth factory: textured planes rendered by ray casting.

Every quantity is evaluated in closed form — ray-plane intersection per
pixel, procedural textures sampled in plane-local metric coordinates at the
exact intersection points of *both* cameras — so stereo pairs are
photometrically consistent with zero resampling blur, and disparity, flow,
and occlusion masks are exact rather than rendered approximations.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ParseError
from .fileio import (write_camera_file, write_gray_png16, write_pfm,
                     write_pgm_mask)
from .geometry import CameraModel, Pose, write_pose_file

OCCLUSION_DEPTH_TOL = 1e-4  # meters
TEXTURE_KINDS = ("noise", "checker")
_CHECKER_PERIOD = 0.5  # meters


@dataclass(frozen=True)
class PlaneSpec:
    """Textured plane: points X with normal . X = offset.

    ``bounds`` of (xmin, xmax, ymin, ymax, zmin, zmax) clip the plane to an
    axis-aligned box, turning it into a finite panel.  Infinite planes only
    ever meet in concave joints where nothing hides anything, so a floating
    panel is what puts genuine in-view occlusion into a scene.

    ``texture_scale`` multiplies the plane-local coordinates before texture
    lookup: a scale below 1 stretches the pattern, which is how a far-away
    plane keeps its screen-space wavelengths inside the matchable band
    instead of aliasing into view-dependent shimmer.
    """

    normal: tuple
    offset: float
    texture_seed: int = 0
    texture_kind: str = "noise"
    bounds: tuple | None = None
    texture_scale: float = 1.0

    def __post_init__(self):
        n = np.array(self.normal, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(n)) or np.linalg.norm(n) < 1e-12:
            raise ConfigurationError("plane normal must be finite and nonzero")
        if self.texture_kind not in TEXTURE_KINDS:
            raise ConfigurationError(
                f"texture kind must be one of {TEXTURE_KINDS}")
        if not np.isfinite(self.texture_scale) or self.texture_scale <= 0:
            raise ConfigurationError("texture scale must be finite and > 0")
        object.__setattr__(self, "normal", tuple(float(x) for x in n))
        if self.bounds is not None:
            b = np.array(self.bounds, dtype=np.float64).reshape(-1)
            if b.size != 6 or np.any(np.isnan(b)):
                raise ConfigurationError(
                    "bounds must be (xmin, xmax, ymin, ymax, zmin, zmax)")
            if b[0] >= b[1] or b[2] >= b[3] or b[4] >= b[5]:
                raise ConfigurationError("bounds must have min < max per axis")
            object.__setattr__(self, "bounds", tuple(float(x) for x in b))


@dataclass(frozen=True)
class SceneSpec:
    """Piecewise-planar scene plus a left-camera trajectory."""

    planes: tuple
    trajectory: tuple
    camera: CameraModel
    num_hypotheses: int = 64
    seed: int = 0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.planes:
            raise ConfigurationError("scene needs at least one plane")
        if not self.trajectory:
            raise ConfigurationError("scene needs at least one camera pose")
        if self.num_hypotheses < 4:
            raise ConfigurationError("need at least 4 disparity hypotheses")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise sigma must be >= 0")
        object.__setattr__(self, "planes", tuple(self.planes))
        object.__setattr__(self, "trajectory", tuple(self.trajectory))

    @property
    def num_frames(self) -> int:
        return len(self.trajectory)


@dataclass(frozen=True)
class FrameTruth:
    """One frame of rendered data plus its exact ground truth.

    flow_* and occlusion describe the transition to the *next* frame and
    are None for the final frame of a sequence.
    """

    left: np.ndarray
    right: np.ndarray
    disparity: np.ndarray
    flow_u: np.ndarray | None
    flow_v: np.ndarray | None
    occlusion: np.ndarray | None
    pose: Pose
    timestamp: float


def _plane_basis(plane: PlaneSpec):
    """Unit normal plus an orthonormal in-plane basis, deterministic."""
    n = np.array(plane.normal) / np.linalg.norm(plane.normal)
    seed_axis = np.array([1.0, 0.0, 0.0])
    if abs(n @ seed_axis) > 0.9:
        seed_axis = np.array([0.0, 1.0, 0.0])
    e1 = seed_axis - (seed_axis @ n) * n
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return n, e1, e2


def _texture(plane: PlaneSpec, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Procedural intensity in [0.02, 0.98] over plane-local coordinates."""
    if plane.texture_kind == "checker":
        cells = np.floor(s / _CHECKER_PERIOD) + np.floor(t / _CHECKER_PERIOD)
        return np.where(np.mod(cells, 2.0) == 0.0, 0.2, 0.8)
    rng = np.random.default_rng(plane.texture_seed)
    count = 32
    # isotropic and broadband: wavelengths log-spaced across 0.1-2.0 plane
    # units, so whatever a surface's depth and foreshortening do to the
    # projection, part of the energy always lands in the 3-10 px screen
    # band where matching margins live.  Components that project below
    # the sampling limit are still point-sampled consistently in both
    # views; they only stop helping sub-pixel interpolation.
    angles = rng.uniform(0.0, 2.0 * np.pi, size=count)
    mags = 2.0 * np.pi / np.exp(rng.uniform(np.log(0.1), np.log(2.0),
                                            size=count))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=count)
    value = np.zeros_like(s)
    for i in range(count):
        value += np.sin(mags[i] * (np.cos(angles[i]) * s
                                   + np.sin(angles[i]) * t) + phase[i])
    value /= np.sqrt(count)   # unit variance, not unit peak
    low_freq = rng.uniform(1.5, 5.0, size=(4, 2))
    low_phase = rng.uniform(0.0, 2.0 * np.pi, size=4)
    low = np.zeros_like(s)
    for i in range(4):
        low += np.sin(low_freq[i, 0] * s + low_freq[i, 1] * t + low_phase[i])
    return np.clip(0.5 + 0.45 * value + 0.05 * low, 0.02, 0.98)


def _intersect(spec: SceneSpec, pose: Pose, u: np.ndarray, v: np.ndarray):
    """Nearest plane along each pixel ray.

    The ray direction is ((u-cx)/fx, (v-cy)/fy, 1) in camera coordinates,
    so the ray parameter *is* the camera-frame depth.  Returns (depth,
    plane index, world points).
    """
    cam = spec.camera
    dirs_cam = np.stack([(u - cam.cx) / cam.fx,
                         (v - cam.cy) / cam.fy,
                         np.ones_like(u)], axis=-1)
    dirs_world = dirs_cam @ pose.rotation.T
    origin = pose.translation

    depth = np.full(u.shape, np.inf)
    index = np.full(u.shape, -1, dtype=np.int64)
    for k, plane in enumerate(spec.planes):
        n = np.asarray(plane.normal)
        denom = dirs_world @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (plane.offset - origin @ n) / denom
        lam = np.where((np.abs(denom) > 1e-12) & (lam > 1e-9), lam, np.inf)
        if plane.bounds is not None:
            hit_ok = np.isfinite(lam)
            pts = origin + np.where(hit_ok, lam, 1.0)[..., None] * dirs_world
            b = plane.bounds
            for axis in range(3):
                hit_ok &= (pts[..., axis] >= b[2 * axis]) & \
                          (pts[..., axis] <= b[2 * axis + 1])
            lam = np.where(hit_ok, lam, np.inf)
        closer = lam < depth
        depth = np.where(closer, lam, depth)
        index = np.where(closer, k, index)

    if np.any(~np.isfinite(depth)):
        bad = np.argwhere(~np.isfinite(depth))[0]
        raise ConfigurationError(
            f"scene leaves pixel (v={bad[0]}, u={bad[1]}) uncovered")
    points = origin + depth[..., None] * dirs_world
    return depth, index, points


def _render(spec: SceneSpec, pose: Pose, u: np.ndarray, v: np.ndarray):
    depth, index, points = _intersect(spec, pose, u, v)
    image = np.zeros(u.shape)
    for k, plane in enumerate(spec.planes):
        hit = index == k
        if not np.any(hit):
            continue
        _, e1, e2 = _plane_basis(plane)
        s = points[hit] @ e1 * plane.texture_scale
        t = points[hit] @ e2 * plane.texture_scale
        image[hit] = _texture(plane, s, t)
    return image, depth, points


def _right_pose(pose: Pose, baseline: float) -> Pose:
    return pose.compose(Pose(np.eye(3), np.array([baseline, 0.0, 0.0])))


def generate_scene(spec: SceneSpec) -> list[FrameTruth]:
    """Render the whole sequence with exact ground truth."""
    cam = spec.camera
    vv, uu = np.mgrid[0:cam.height, 0:cam.width].astype(np.float64)

    rendered = []
    for t, pose in enumerate(spec.trajectory):
        left, depth, points = _render(spec, pose, uu, vv)
        right, _, _ = _render(spec, _right_pose(pose, cam.baseline), uu, vv)
        disparity = cam.baseline * cam.fx / depth
        if np.any(disparity >= spec.num_hypotheses):
            raise ConfigurationError(
                f"frame {t}: disparity {disparity.max():.2f} px reaches the "
                f"hypothesis count {spec.num_hypotheses}")
        if spec.noise_sigma > 0:
            rng = np.random.default_rng([spec.seed, t])
            left = np.clip(left + rng.normal(0, spec.noise_sigma, left.shape),
                           0.0, 1.0)
            right = np.clip(right + rng.normal(0, spec.noise_sigma, right.shape),
                            0.0, 1.0)
        rendered.append((left, right, disparity, points, pose))

    frames = []
    for t, (left, right, disparity, points, pose) in enumerate(rendered):
        flow_u = flow_v = occlusion = None
        if t + 1 < len(rendered):
            nxt = spec.trajectory[t + 1]
            in_next = nxt.inverse().apply(points)
            z_next = in_next[..., 2]
            behind = z_next <= 0
            safe_z = np.where(behind, 1.0, z_next)
            un = cam.fx * in_next[..., 0] / safe_z + cam.cx
            vn = cam.fy * in_next[..., 1] / safe_z + cam.cy
            flow_u = np.where(behind, 0.0, un - uu)
            flow_v = np.where(behind, 0.0, vn - vv)
            outside = (un < 0) | (un > cam.width - 1) | \
                      (vn < 0) | (vn > cam.height - 1)
            surf_depth, _, _ = _intersect(
                spec, nxt, np.clip(un, 0, cam.width - 1),
                np.clip(vn, 0, cam.height - 1))
            hidden = z_next > surf_depth + OCCLUSION_DEPTH_TOL
            occlusion = behind | outside | hidden
        frames.append(FrameTruth(left=left, right=right, disparity=disparity,
                                 flow_u=flow_u, flow_v=flow_v,
                                 occlusion=occlusion, pose=pose,
                                 timestamp=float(t)))
    return frames


# ------------------------------------------------------------------- fixtures

def standard_camera(width: int = 192, height: int = 128) -> CameraModel:
    return CameraModel(fx=160.0, fy=160.0, cx=(width - 1) / 2.0,
                       cy=(height - 1) / 2.0, baseline=0.25,
                       width=width, height=height)


def forward_lateral_trajectory(num_frames: int, dx: float = 0.05,
                               dy: float = 0.0, dz: float = 0.12,
                               yaw_step: float = 0.004) -> tuple:
    poses = []
    for t in range(num_frames):
        ang = yaw_step * t
        c, s = np.cos(ang), np.sin(ang)
        rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        poses.append(Pose(rot, np.array([dx * t, dy * t, dz * t])))
    return tuple(poses)


def standard_scene(num_frames: int = 8, seed: int = 0,
                   noise_sigma: float = 0.005) -> SceneSpec:
    """Floor, side wall, far backdrop, floating panel; forward+lateral camera.

    The default benchmark fixture: 192x128 frames, disparities within 64
    hypotheses, a depth discontinuity around the panel so both the stereo
    half-occlusion band and the frame-to-frame occlusion band are
    non-trivial and stay inside the image.  A pinch of sensor noise is on
    by default so the two operating modes differ by their actual temporal
    behavior rather than by deterministic resampling quirks.
    """
    # every surface with disparity above ~1 px is kept away from the left
    # image border: a pixel with u < d has its true match off the image,
    # the cost volume holds only sentinels there, and whichever mode is
    # running can only guess.  Worse, such guesses are one-way traffic —
    # a candidate below u can pick up a coincidental matching score while
    # the truthful one cannot — so carried-over state drifts a little
    # further down every frame.  The mid wall therefore hands off to a
    # receding side surface (x + 0.64 z = 2.48, through the wall edge at
    # x=-5.2, z=12) that carries disparity smoothly down to ~0.8 at the
    # border: no depth discontinuity, no half-occluded strip, nothing
    # for either mode to trip on.
    #
    # the panel floats at z=6 in front of a mid wall at z=12; the camera
    # advances while sliding left, so the panel sweeps right across the
    # wall and a strip behind its trailing (right) edge goes hidden
    # every frame while staying well inside the field of view.
    # Straddling the principal row keeps the forward zoom from covering
    # wall above or below the panel, so the mask is essentially just
    # the trailing strip — and that strip is the one place pixels stay
    # cleanly stereo-matched right up to the frame they disappear (the
    # half-occlusion band hugs the panel's far, left edge).  The mid
    # wall's right edge hides inside the side-wall corner, and as the
    # camera slides left its left edge only ever reveals backdrop, so
    # the panel strip stays the sole occlusion source.  Forward motion
    # also makes content exit at every image border rather than enter,
    # which keeps freshly-revealed border strips out of the temporal
    # statistics.  The backdrop texture is stretched 4x so its pattern
    # stays matchable at depth 45.
    planes = (PlaneSpec((0.0, 1.0, 0.0), 2.0, texture_seed=seed + 11,
                        bounds=(-2.6, 100.0, 1.5, 2.5, 0.05, 12.0)),
              PlaneSpec((1.0, 0.0, 0.0), 4.0, texture_seed=seed + 12,
                        bounds=(3.5, 4.5, -100.0, 100.0, 0.05, 12.0)),
              PlaneSpec((0.0, 0.0, 1.0), 12.0, texture_seed=seed + 13,
                        bounds=(-5.2, 4.1, -100.0, 100.0, 11.0, 13.0)),
              PlaneSpec((1.0, 0.0, 0.64), 2.48, texture_seed=seed + 14,
                        bounds=(-45.0, -5.2, -100.0, 100.0, 11.0, 100.0),
                        texture_scale=0.1),
              PlaneSpec((0.0, 0.0, 1.0), 6.0, texture_seed=seed + 15,
                        bounds=(-2.3, -0.8, -0.3, 0.3, 5.0, 7.0)))
    trajectory = forward_lateral_trajectory(num_frames, dx=-0.08, dz=0.12,
                                            yaw_step=0.0)
    return SceneSpec(planes=planes, trajectory=trajectory,
                     camera=standard_camera(), num_hypotheses=64,
                     seed=seed, noise_sigma=noise_sigma)


def slanted_plane_scene(num_frames: int = 2, seed: int = 5) -> SceneSpec:
    """A single tilted plane; its true disparity field is affine in (u,v)."""
    plane = PlaneSpec((-0.5, -0.8, 1.0), 8.0, texture_seed=seed)
    return SceneSpec(planes=(plane,),
                     trajectory=forward_lateral_trajectory(num_frames),
                     camera=standard_camera(), num_hypotheses=64, seed=seed)


# ------------------------------------------------------------ directory output

def write_scene(directory, spec: SceneSpec) -> list[FrameTruth]:
    """Render and write the on-disk layout the pipeline ingests.

    left/, right/ hold 16-bit grayscale PNGs; disp_gt/, flow_u/, flow_v/
    PFM maps; occ/ PGM masks (transition files exist for all but the last
    frame); poses.txt and camera.txt describe the rig.
    """
    frames = generate_scene(spec)
    directory = os.fspath(directory)
    for sub in ("left", "right", "disp_gt", "flow_u", "flow_v", "occ"):
        os.makedirs(os.path.join(directory, sub), exist_ok=True)
    for t, frame in enumerate(frames):
        name = f"{t:06d}"
        write_gray_png16(os.path.join(directory, "left", name + ".png"),
                         frame.left)
        write_gray_png16(os.path.join(directory, "right", name + ".png"),
                         frame.right)
        write_pfm(os.path.join(directory, "disp_gt", name + ".pfm"),
                  frame.disparity)
        if frame.flow_u is not None:
            write_pfm(os.path.join(directory, "flow_u", name + ".pfm"),
                      frame.flow_u)
            write_pfm(os.path.join(directory, "flow_v", name + ".pfm"),
                      frame.flow_v)
            write_pgm_mask(os.path.join(directory, "occ", name + ".pgm"),
                           frame.occlusion)
    write_pose_file(os.path.join(directory, "poses.txt"),
                    [(f.timestamp, f.pose) for f in frames])
    write_camera_file(os.path.join(directory, "camera.txt"), spec.camera)
    return frames


# ------------------------------------------------------------- spec text files

_SCALARS = {"width": int, "height": int, "fx": float, "fy": float,
            "cx": float, "cy": float, "baseline": float, "frames": int,
            "seed": int, "disparities": int, "noise_sigma": float,
            "texture": str}


def read_scene_spec(path) -> SceneSpec:
    """Parse a key=value scene description.

    Scalar keys: width, height, fx, fy, cx, cy, baseline, frames, seed,
    disparities, noise_sigma, texture.  Repeated keys:
    ``plane = nx, ny, nz, offset[, texture_scale]`` (infinite plane),
    ``panel = nx, ny, nz, offset, xmin, xmax, ymin, ymax, zmin, zmax
    [, texture_scale]`` (plane clipped to a box), and
    ``step = dx, dy, dz, yaw`` (per-frame camera increment).  '#' starts
    a comment.
    """
    values = {"frames": 8, "seed": 0, "disparities": 64, "noise_sigma": 0.0,
              "texture": "noise", "width": 192, "height": 128,
              "fx": 160.0, "fy": 160.0, "baseline": 0.25}
    planes_raw = []
    step = (0.05, 0.0, 0.12, 0.004)
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ParseError(path, "expected key = value", line=line_no)
            key, _, raw = body.partition("=")
            key, raw = key.strip(), raw.strip()
            if key in ("plane", "panel"):
                parts = [p.strip() for p in raw.split(",")]
                want = 4 if key == "plane" else 10
                if len(parts) not in (want, want + 1):
                    shape = ("nx, ny, nz, offset" if key == "plane" else
                             "nx, ny, nz, offset, xmin, xmax, ymin, ymax, "
                             "zmin, zmax")
                    raise ParseError(
                        path, f"{key} needs {shape} and an optional "
                              "texture_scale", line=line_no)
                try:
                    nums = tuple(float(p) for p in parts)
                except ValueError:
                    raise ParseError(path, f"non-numeric {key} entry",
                                     line=line_no) from None
                scale = nums[want] if len(nums) > want else 1.0
                box = nums[4:want] if key == "panel" else None
                planes_raw.append((nums[:4], box, scale))
            elif key == "step":
                parts = [p.strip() for p in raw.split(",")]
                if len(parts) != 4:
                    raise ParseError(path, "step needs dx, dy, dz, yaw",
                                     line=line_no)
                try:
                    step = tuple(float(p) for p in parts)
                except ValueError:
                    raise ParseError(path, "non-numeric step entry",
                                     line=line_no) from None
            elif key in _SCALARS:
                try:
                    values[key] = _SCALARS[key](raw)
                except ValueError:
                    raise ParseError(path, f"bad value for {key}",
                                     line=line_no) from None
            else:
                accepted = ", ".join(sorted([*_SCALARS, "panel", "plane",
                                             "step"]))
                raise ParseError(path, f"unknown key {key!r}; accepted: "
                                       f"{accepted}", line=line_no)
    if not planes_raw:
        raise ParseError(path, "scene needs at least one plane line")
    if values["texture"] not in TEXTURE_KINDS:
        raise ParseError(path, f"texture must be one of {TEXTURE_KINDS}")
    cx = values.get("cx", (values["width"] - 1) / 2.0)
    cy = values.get("cy", (values["height"] - 1) / 2.0)
    camera = CameraModel(fx=values["fx"], fy=values["fy"], cx=cx, cy=cy,
                         baseline=values["baseline"], width=values["width"],
                         height=values["height"])
    planes = tuple(PlaneSpec(p[:3], p[3], texture_seed=values["seed"] + 11 + i,
                             texture_kind=values["texture"], bounds=box,
                             texture_scale=scale)
                   for i, (p, box, scale) in enumerate(planes_raw))
    trajectory = forward_lateral_trajectory(values["frames"], dx=step[0],
                                            dy=step[1], dz=step[2],
                                            yaw_step=step[3])
    return SceneSpec(planes=planes, trajectory=trajectory, camera=camera,
                     num_hypotheses=values["disparities"], seed=values["seed"],
                     noise_sigma=values["noise_sigma"])


def standard_scene_spec_text(num_frames: int = 8, seed: int = 0) -> str:
    """The standard fixture in the text format read_scene_spec parses."""
    return ("# floor, side wall, mid wall, receding left surface,"
            " floating panel; forward+lateral camera\n"
            "width = 192\nheight = 128\n"
            "fx = 160\nfy = 160\nbaseline = 0.25\n"
            f"frames = {num_frames}\nseed = {seed}\ndisparities = 64\n"
            "noise_sigma = 0.005\n"
            "panel = 0, 1, 0, 2, -2.6, 100, 1.5, 2.5, 0.05, 12\n"
            "panel = 1, 0, 0, 4, 3.5, 4.5, -100, 100, 0.05, 12\n"
            "panel = 0, 0, 1, 12, -5.2, 4.1, -100, 100, 11, 13\n"
            "panel = 1, 0, 0.64, 2.48, -45, -5.2, -100, 100, 11, 100, 0.1\n"
            "panel = 0, 0, 1, 6, -2.3, -0.8, -0.3, 0.3, 5, 7\n"
            "step = -0.08, 0, 0.12, 0\n")
