"""3D box decoding, multi-camera projection, and RoI feature pooling.

Coordinate conventions:
    World frame: right-handed, z up, meters.
    Box frame: x along the heading (length axis), y lateral (width axis),
        z vertical (height axis), origin at the box center.
    Camera frame: x right, y down, z forward (optical axis).
    Image frame: u right, v down, pixels.

A box corner with index ``k`` carries sign bits ``(b2 b1 b0)``: ``b2``
selects the sign of ``l/2`` along x, ``b1`` the sign of ``w/2`` along y,
``b0`` the sign of ``h/2`` along z (bit 0 means minus, bit 1 means plus).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ValidationError

# Depth below this (meters) counts as behind the camera plane.
DEPTH_EPS = 1e-6

# Serialized parameter order used by all file formats and loss vectors.
BOX_PARAM_ORDER = ("cx", "cy", "h", "w", "cz", "l", "cos_yaw", "sin_yaw", "vx", "vy")

# Corner sign table, canonical bit order (rows are corners 0..7).
_CORNER_SIGNS = np.array(
    [[(k >> 2) & 1, (k >> 1) & 1, k & 1] for k in range(8)], dtype=float
) * 2.0 - 1.0


@dataclass(frozen=True)
class BoxState:
    """A 10-parameter 3D bounding box: center, size, heading, planar velocity.

    ``w`` is the lateral width, ``l`` the longitudinal length (along the
    heading), ``h`` the vertical height, all in meters and strictly positive.
    The heading is encoded as (cos_yaw, sin_yaw), unit norm within 1e-6.
    """

    cx: float
    cy: float
    cz: float
    w: float
    l: float
    h: float
    cos_yaw: float
    sin_yaw: float
    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self):
        vals = (self.cx, self.cy, self.cz, self.w, self.l, self.h,
                self.cos_yaw, self.sin_yaw, self.vx, self.vy)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"box has non-finite fields: {vals}")
        if self.w <= 0 or self.l <= 0 or self.h <= 0:
            raise ValidationError(
                f"box dimensions must be positive, got w={self.w} l={self.l} h={self.h}")
        norm2 = self.cos_yaw * self.cos_yaw + self.sin_yaw * self.sin_yaw
        if abs(norm2 - 1.0) > 1e-6:
            raise ValidationError(
                f"(cos_yaw, sin_yaw) must be unit norm, got |.|^2 = {norm2}")

    @property
    def yaw(self) -> float:
        return math.atan2(self.sin_yaw, self.cos_yaw)

    def to_array(self) -> np.ndarray:
        """Serialize as [cx, cy, h, w, cz, l, cos_yaw, sin_yaw, vx, vy]."""
        return np.array([self.cx, self.cy, self.h, self.w, self.cz, self.l,
                         self.cos_yaw, self.sin_yaw, self.vx, self.vy])

    @classmethod
    def from_array(cls, arr) -> "BoxState":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (10,):
            raise ValidationError(f"box array must have 10 entries, got shape {arr.shape}")
        cx, cy, h, w, cz, l, c, s, vx, vy = arr.tolist()
        return cls(cx=cx, cy=cy, cz=cz, w=w, l=l, h=h,
                   cos_yaw=c, sin_yaw=s, vx=vx, vy=vy)

    @classmethod
    def from_yaw(cls, cx, cy, cz, w, l, h, yaw, vx=0.0, vy=0.0) -> "BoxState":
        return cls(cx=cx, cy=cy, cz=cz, w=w, l=l, h=h,
                   cos_yaw=math.cos(yaw), sin_yaw=math.sin(yaw), vx=vx, vy=vy)


class Visibility(Enum):
    """How a projected box relates to one camera's image."""

    VISIBLE = "Visible"
    PARTIALLY_VISIBLE = "PartiallyVisible"
    BEHIND_CAMERA = "BehindCamera"
    OUT_OF_FRAME = "OutOfFrame"

    @property
    def contributes(self) -> bool:
        return self in (Visibility.VISIBLE, Visibility.PARTIALLY_VISIBLE)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: 3x3 intrinsics, 4x4 world-to-camera extrinsics, bounds."""

    intrinsic: np.ndarray
    extrinsic: np.ndarray
    image_width: int
    image_height: int
    name: str = ""

    def __post_init__(self):
        K = np.asarray(self.intrinsic, dtype=float)
        E = np.asarray(self.extrinsic, dtype=float)
        if K.shape != (3, 3):
            raise ValidationError(f"camera {self.name!r}: intrinsic must be 3x3, got {K.shape}")
        if E.shape != (4, 4):
            raise ValidationError(f"camera {self.name!r}: extrinsic must be 4x4, got {E.shape}")
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(E))):
            raise ValidationError(f"camera {self.name!r}: non-finite camera parameters")
        R = E[:3, :3]
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-6:
            raise ValidationError(
                f"camera {self.name!r}: extrinsic rotation is not orthonormal")
        if np.linalg.det(R) < 0:
            raise ValidationError(
                f"camera {self.name!r}: extrinsic rotation has negative determinant")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValidationError(
                f"camera {self.name!r}: image size must be positive, "
                f"got {self.image_width}x{self.image_height}")
        object.__setattr__(self, "intrinsic", K)
        object.__setattr__(self, "extrinsic", E)

    @property
    def projection(self) -> np.ndarray:
        """Composed 3x4 world-to-pixel projection matrix."""
        return self.intrinsic @ self.extrinsic[:3, :]


@dataclass(frozen=True)
class ProjectedCorners:
    """Per-corner pixel coordinates and camera-frame depths for one camera.

    Corners with depth <= DEPTH_EPS are flagged non-projectable; their
    (u, v) entries are NaN and must not be consumed.
    """

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    projectable: np.ndarray


@dataclass(frozen=True)
class ProjectedRoI:
    """Axis-aligned projection rectangle of a box on one camera image.

    ``(xmin, ymin, xmax, ymax)`` is the raw corner-extent rectangle and may
    extend beyond the image; ``clipped`` is its intersection with the image
    rectangle (None when the box is behind the camera or out of frame).
    """

    camera_index: int
    xmin: float
    ymin: float
    xmax: float
    ymax: float
    visibility: Visibility
    clipped: tuple | None


@dataclass(frozen=True)
class FeatureMap:
    """A dense (height, width, channels) grid of finite real values."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValidationError(f"feature map must be HxWxC, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("feature map contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def decode_corners(box: BoxState) -> np.ndarray:
    """Return the eight box corners, shape (8, 3), in canonical bit order.

    Corner k = center + R(yaw) @ (sign(b2) l/2, sign(b1) w/2, sign(b0) h/2).
    """
    half = np.array([box.l / 2.0, box.w / 2.0, box.h / 2.0])
    local = _CORNER_SIGNS * half
    c, s = box.cos_yaw, box.sin_yaw
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + np.array([box.cx, box.cy, box.cz])


def project_corners(corners: np.ndarray, cam: CameraModel) -> ProjectedCorners:
    """Project eight corners through a camera; flag non-positive depths.

    Depth is the camera-frame z before perspective division; division only
    happens for depths above DEPTH_EPS.
    """
    corners = np.asarray(corners, dtype=float)
    if corners.shape != (8, 3):
        raise ValidationError(f"corners must have shape (8, 3), got {corners.shape}")
    hom = np.hstack([corners, np.ones((8, 1))])
    cam_pts = hom @ cam.extrinsic[:3, :].T
    depth = cam_pts[:, 2]
    projectable = depth > DEPTH_EPS
    pix = cam_pts @ cam.intrinsic.T
    safe = np.where(projectable, depth, 1.0)
    u = np.where(projectable, pix[:, 0] / safe, np.nan)
    v = np.where(projectable, pix[:, 1] / safe, np.nan)
    return ProjectedCorners(u=u, v=v, depth=depth, projectable=projectable)


def roi_from_projection(projected: ProjectedCorners, cam: CameraModel,
                        camera_index: int = 0) -> ProjectedRoI:
    """Form the corner-extent rectangle and classify its visibility.

    All depths behind the camera plane -> BehindCamera. A mixed-depth box
    (some corners behind) has no geometrically meaningful extent rectangle
    and is classified OutOfFrame. Otherwise the rectangle is intersected
    with the image: fully inside -> Visible, disjoint -> OutOfFrame,
    straddling -> PartiallyVisible with the clipped rectangle attached.
    """
    if not np.any(projected.projectable):
        return ProjectedRoI(camera_index, 0.0, 0.0, 0.0, 0.0,
                            Visibility.BEHIND_CAMERA, None)
    if not np.all(projected.projectable):
        return ProjectedRoI(camera_index, 0.0, 0.0, 0.0, 0.0,
                            Visibility.OUT_OF_FRAME, None)
    xmin = float(np.min(projected.u))
    ymin = float(np.min(projected.v))
    xmax = float(np.max(projected.u))
    ymax = float(np.max(projected.v))
    w, h = float(cam.image_width), float(cam.image_height)
    if xmax < 0.0 or xmin > w or ymax < 0.0 or ymin > h:
        return ProjectedRoI(camera_index, xmin, ymin, xmax, ymax,
                            Visibility.OUT_OF_FRAME, None)
    cx1, cy1 = max(xmin, 0.0), max(ymin, 0.0)
    cx2, cy2 = min(xmax, w), min(ymax, h)
    if xmin >= 0.0 and ymin >= 0.0 and xmax <= w and ymax <= h:
        vis = Visibility.VISIBLE
    else:
        vis = Visibility.PARTIALLY_VISIBLE
    return ProjectedRoI(camera_index, xmin, ymin, xmax, ymax, vis,
                        (cx1, cy1, cx2, cy2))


def _bilinear_grid(data: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinearly sample data (H, W, C) at the outer grid ys x xs.

    Lattice point (y, x) holds the value at continuous coordinate (x, y);
    neighbors outside the lattice contribute zero.
    """
    h, w, c = data.shape
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    wy1 = ys - y0
    wx1 = xs - x0
    out = np.zeros((ys.size, xs.size, c))
    for dy, wy in ((0, 1.0 - wy1), (1, wy1)):
        yi = y0.astype(int) + dy
        ok_y = (yi >= 0) & (yi < h)
        for dx, wx in ((0, 1.0 - wx1), (1, wx1)):
            xi = x0.astype(int) + dx
            ok_x = (xi >= 0) & (xi < w)
            weight = np.outer(wy * ok_y, wx * ok_x)
            vals = data[np.clip(yi, 0, h - 1)[:, None],
                        np.clip(xi, 0, w - 1)[None, :], :]
            out += weight[:, :, None] * vals
    return out


def roi_align(fm: FeatureMap, roi: ProjectedRoI, out_h: int, out_w: int,
              sampling_ratio: int = 2) -> np.ndarray:
    """Average-pool bilinear samples of the clipped roi into an out_h x out_w grid.

    Each bin averages sampling_ratio^2 samples at regular sub-bin centers.
    Rois that are behind the camera or out of frame pool to all zeros.
    """
    if out_h < 1 or out_w < 1 or sampling_ratio < 1:
        raise ValidationError(
            f"output size and sampling ratio must be >= 1, "
            f"got {out_h}x{out_w} ratio {sampling_ratio}")
    if not roi.visibility.contributes:
        return np.zeros((out_h, out_w, fm.channels))
    x1, y1, x2, y2 = roi.clipped
    bin_h = (y2 - y1) / out_h
    bin_w = (x2 - x1) / out_w
    offs = (np.arange(sampling_ratio) + 0.5) / sampling_ratio
    ys = (y1 + bin_h * (np.arange(out_h)[:, None] + offs[None, :])).reshape(-1)
    xs = (x1 + bin_w * (np.arange(out_w)[:, None] + offs[None, :])).reshape(-1)
    samples = _bilinear_grid(fm.data, ys, xs)
    samples = samples.reshape(out_h, sampling_ratio, out_w, sampling_ratio, fm.channels)
    return samples.mean(axis=(1, 3))


def aggregate_views(grids, visibilities) -> np.ndarray:
    """Element-wise mean of the grids whose view contributes (cross-view fusion).

    The output shape never depends on how many cameras saw the box; with no
    contributing view the result is all zeros.
    """
    if len(grids) == 0:
        raise ValidationError("aggregate_views needs at least one grid")
    if len(grids) != len(visibilities):
        raise ValidationError(
            f"{len(grids)} grids but {len(visibilities)} visibility flags")
    shape = np.asarray(grids[0]).shape
    stacked = []
    for g, vis in zip(grids, visibilities):
        g = np.asarray(g, dtype=float)
        if g.shape != shape:
            raise ValidationError(f"grid shape mismatch: {g.shape} vs {shape}")
        if vis.contributes:
            stacked.append(g)
    if not stacked:
        return np.zeros(shape)
    return np.mean(stacked, axis=0)


def _scale_roi(roi: ProjectedRoI, sx: float, sy: float) -> ProjectedRoI:
    clipped = None
    if roi.clipped is not None:
        x1, y1, x2, y2 = roi.clipped
        clipped = (x1 * sx, y1 * sy, x2 * sx, y2 * sy)
    return ProjectedRoI(roi.camera_index, roi.xmin * sx, roi.ymin * sy,
                        roi.xmax * sx, roi.ymax * sy, roi.visibility, clipped)


def sample_box_features(box: BoxState, rig, maps, out_h: int = 7, out_w: int = 7,
                        sampling_ratio: int = 2):
    """Project a box into every camera, pool per-view RoI features, and fuse.

    ``maps`` holds one FeatureMap per camera (a single pyramid level); rois
    are scaled from image pixels into each map's grid before pooling.
    Returns (fused grid, list of per-camera ProjectedRoI in image pixels).
    """
    if len(rig) != len(maps):
        raise ValidationError(f"{len(rig)} cameras but {len(maps)} feature maps")
    if len(rig) == 0:
        raise ValidationError("camera rig is empty")
    corners = decode_corners(box)
    rois = []
    grids = []
    flags = []
    for idx, (cam, fm) in enumerate(zip(rig, maps)):
        projected = project_corners(corners, cam)
        roi = roi_from_projection(projected, cam, camera_index=idx)
        rois.append(roi)
        scaled = _scale_roi(roi, fm.width / cam.image_width,
                            fm.height / cam.image_height)
        grids.append(roi_align(fm, scaled, out_h, out_w, sampling_ratio))
        flags.append(roi.visibility)
    fused = aggregate_views(grids, flags)
    return fused, rois
