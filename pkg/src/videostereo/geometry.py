"""Pinhole camera model, SE(3) poses, and cross-frame forward warping.

Conventions: image u is the column (right-positive), v the row
(down-positive); camera frames are right-handed with z forward; all poses
are camera-to-world.  Disparity is the horizontal offset of a rectified
stereo pair, linked to depth by z = baseline * fx / d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigurationError, DomainError, ParseError

_ROTATION_TOL = 1e-9


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CameraModel:
    """Rectified stereo rig: pinhole intrinsics plus horizontal baseline in meters."""

    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError("focal lengths must be positive")
        if self.baseline <= 0:
            raise ConfigurationError("baseline must be positive")
        if self.width < 1 or self.height < 1:
            raise ConfigurationError("image dimensions must be at least 1x1")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform (rotation 3x3, translation in meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise ConfigurationError("pose contains non-finite values")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ROTATION_TOL:
            raise ConfigurationError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ROTATION_TOL:
            raise ConfigurationError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", _readonly(r))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, qx, qy, qz, qw, translation) -> "Pose":
        """Quaternion in x,y,z,w order (TUM convention), normalized on the way in."""
        rot = Rotation.from_quat([qx, qy, qz, qw])
        return cls(rot.as_matrix(), np.asarray(translation, dtype=np.float64))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self @ other).apply(p) == self.apply(other.apply(p))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


def relative_pose(prev: Pose, cur: Pose) -> Pose:
    """Transform taking points from the prev camera frame into the cur frame.

    Computed as inverse(cur) composed with prev; both inputs are
    camera-to-world.
    """
    return cur.inverse().compose(prev)


@dataclass(frozen=True)
class SemiDenseDisparity:
    """Disparity values plus an explicit per-pixel validity mask.

    Values at invalid pixels are exactly 0, so the map also honours the
    value-0-means-invalid convention, but the mask is authoritative: a true
    zero disparity and a missing sample are distinct states.
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        mask = np.array(self.valid, dtype=bool)
        if vals.shape != mask.shape or vals.ndim != 2:
            raise ConfigurationError("values and valid must be matching HxW arrays")
        if not np.all(np.isfinite(vals)):
            raise ConfigurationError("disparity values must be finite")
        if np.any(vals[mask] < 0):
            raise ConfigurationError("valid disparities must be non-negative")
        vals[~mask] = 0.0
        object.__setattr__(self, "values", _readonly(vals))
        object.__setattr__(self, "valid", _readonly(mask))

    @classmethod
    def dense(cls, values: np.ndarray) -> "SemiDenseDisparity":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.ones(values.shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def num_valid(self) -> int:
        return int(np.count_nonzero(self.valid))


@dataclass(frozen=True)
class HiddenState:
    """Per-pixel feature field carried across refinement iterations and,
    warped, across frames."""

    channels: np.ndarray  # H x W x F
    valid: np.ndarray     # H x W

    def __post_init__(self):
        ch = np.array(self.channels, dtype=np.float64)
        mask = np.array(self.valid, dtype=bool)
        if ch.ndim != 3 or ch.shape[:2] != mask.shape:
            raise ConfigurationError("channels must be HxWxF with an HxW mask")
        if not np.all(np.isfinite(ch)):
            raise ConfigurationError("hidden state must be finite")
        object.__setattr__(self, "channels", _readonly(ch))
        object.__setattr__(self, "valid", _readonly(mask))

    @classmethod
    def zeros(cls, height: int, width: int, num_channels: int,
              valid: bool = False) -> "HiddenState":
        return cls(np.zeros((height, width, num_channels)),
                   np.full((height, width), valid, dtype=bool))

    @property
    def num_channels(self) -> int:
        return self.channels.shape[2]


def depth_from_disparity(disparity, cam: CameraModel):
    """z = baseline * fx / d.  Raises DomainError for d <= 0."""
    d = np.asarray(disparity, dtype=np.float64)
    if np.any(d <= 0):
        raise DomainError("disparity must be positive to convert to depth")
    return cam.baseline * cam.fx / d


def disparity_from_depth(depth, cam: CameraModel):
    """d = baseline * fx / z, the inverse of depth_from_disparity."""
    z = np.asarray(depth, dtype=np.float64)
    if np.any(z <= 0):
        raise DomainError("depth must be positive to convert to disparity")
    return cam.baseline * cam.fx / z


def backproject(u, v, z, cam: CameraModel) -> np.ndarray:
    """Lift pixel coordinates at depth z into camera coordinates, shape (..., 3)."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        raise DomainError("backprojection requires positive depth")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return np.stack([(u - cam.cx) * z / cam.fx,
                     (v - cam.cy) * z / cam.fy,
                     np.broadcast_to(z, np.broadcast_shapes(u.shape, v.shape, z.shape)).copy()],
                    axis=-1)


def pinhole_project(points, cam: CameraModel):
    """Project camera-frame points (..., 3) to (u, v, z).

    Raises DomainError if any point lies at or behind the camera plane;
    vectorized callers that need silent dropping filter beforehand.
    """
    pts = np.asarray(points, dtype=np.float64)
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    if np.any(z <= 0):
        raise DomainError("point behind camera")
    return cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy, z


def forward_warp(prev_disp: np.ndarray,
                 prev_hidden: HiddenState | None,
                 relative: Pose,
                 cam: CameraModel) -> tuple[SemiDenseDisparity, HiddenState]:
    """Push a disparity map (and its hidden state) into another viewpoint.

    Every source pixel with positive disparity is lifted to 3D, moved by
    ``relative``, and re-projected; the new disparity is written at the
    rounded target pixel.  Collisions keep the sample with the largest
    warped disparity (nearest surface); out-of-bounds and behind-camera
    samples are dropped.  The hidden-state vector of the winning source
    travels along the same pixel mapping.  Target pixels never written are
    invalid in both outputs.
    """
    disp = np.asarray(prev_disp, dtype=np.float64)
    if disp.ndim != 2:
        raise ConfigurationError("disparity must be HxW")
    if not np.all(np.isfinite(disp)):
        raise ConfigurationError("disparity must be finite")
    height, width = disp.shape
    num_channels = 0
    if prev_hidden is not None:
        if prev_hidden.channels.shape[:2] != disp.shape:
            raise ConfigurationError("hidden state shape does not match disparity")
        num_channels = prev_hidden.num_channels

    out_vals = np.zeros((height, width))
    out_valid = np.zeros((height, width), dtype=bool)
    out_hidden = np.zeros((height, width, num_channels))

    src_v, src_u = np.nonzero(disp > 0)
    if src_v.size:
        d = disp[src_v, src_u]
        z = cam.baseline * cam.fx / d
        pts = backproject(src_u.astype(np.float64), src_v.astype(np.float64), z, cam)
        moved = relative.apply(pts)
        zt = moved[..., 2]
        front = zt > 0
        moved, zt = moved[front], zt[front]
        src_v, src_u = src_v[front], src_u[front]

        ut = cam.fx * moved[..., 0] / zt + cam.cx
        vt = cam.fy * moved[..., 1] / zt + cam.cy
        # round-to-nearest target pixel (ties to even); no splatting
        ui = np.rint(ut).astype(np.int64)
        vi = np.rint(vt).astype(np.int64)
        inside = (ui >= 0) & (ui < width) & (vi >= 0) & (vi < height)

        warped = cam.baseline * cam.fx / zt[inside]
        flat = vi[inside] * width + ui[inside]
        src_v, src_u = src_v[inside], src_u[inside]

        if flat.size:
            # z-buffer: per target keep the sample with max disparity
            order = np.lexsort((warped, flat))
            flat_sorted = flat[order]
            last = np.flatnonzero(
                np.concatenate([flat_sorted[1:] != flat_sorted[:-1], [True]]))
            winners = order[last]
            tv, tu = np.divmod(flat_sorted[last], width)
            out_vals[tv, tu] = warped[winners]
            out_valid[tv, tu] = True
            if num_channels:
                out_hidden[tv, tu] = prev_hidden.channels[src_v[winners], src_u[winners]]

    return (SemiDenseDisparity(out_vals, out_valid),
            HiddenState(out_hidden, out_valid.copy()))


def read_pose_file(path) -> list[tuple[float, Pose]]:
    """Parse a camera-to-world trajectory file.

    Two line formats are auto-detected by token count:
      * 8 tokens:  "timestamp tx ty tz qx qy qz qw" (TUM convention)
      * 12 tokens: 3x4 row-major pose matrix (KITTI odometry convention;
        the line index is used as the timestamp)

    Rotations read from text are re-orthonormalized, so truncated decimal
    representations survive the Pose orthonormality check.
    """
    poses: list[tuple[float, Pose]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            tokens = body.split()
            try:
                values = [float(tok) for tok in tokens]
            except ValueError:
                raise ParseError(path, "non-numeric pose entry", line=line_no) from None
            if len(values) == 8:
                ts, tx, ty, tz, qx, qy, qz, qw = values
                norm = np.linalg.norm([qx, qy, qz, qw])
                if norm < 1e-12:
                    raise ParseError(path, "zero-norm quaternion", line=line_no)
                pose = Pose.from_quaternion(qx, qy, qz, qw, (tx, ty, tz))
            elif len(values) == 12:
                mat = np.array(values).reshape(3, 4)
                rot = Rotation.from_matrix(mat[:, :3]).as_matrix()
                try:
                    pose = Pose(rot, mat[:, 3])
                except ConfigurationError as exc:
                    raise ParseError(path, str(exc), line=line_no) from None
                ts = float(len(poses))
            else:
                raise ParseError(
                    path,
                    f"expected 8 (TUM) or 12 (KITTI) values per pose, got {len(values)}",
                    line=line_no)
            poses.append((ts, pose))
    return poses


def write_pose_file(path, poses: list[tuple[float, Pose]]) -> None:
    """Write a trajectory in the TUM text format (quaternion x,y,z,w)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for ts, pose in poses:
            q = Rotation.from_matrix(pose.rotation).as_quat()
            t = pose.translation
            fh.write(f"{ts:.6f} {t[0]:.9f} {t[1]:.9f} {t[2]:.9f} "
                     f"{q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f}\n")
