"""Box normalization and the iterative cascade box-adjustment arithmetic.

Each refinement stage receives one delta per box (strict positional
pairing) and produces the next stage's boxes: positions move by offsets
scaled with the current dimensions, dimensions rescale through a
log-space exponential (which keeps them strictly positive), and rotation
and velocity are replaced outright by the delta's values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AdjustmentError, ValidationError
from .geometry import BoxState

MAX_STAGES = 6


@dataclass(frozen=True)
class BoxDelta:
    """One refinement cue: scaled position offsets, log-space dimension
    adjustments, and replacement rotation/velocity values."""

    d_x: float
    d_y: float
    d_z: float
    d_w: float
    d_l: float
    d_h: float
    cos_yaw: float
    sin_yaw: float
    vx: float
    vy: float

    def __post_init__(self):
        vals = (self.d_x, self.d_y, self.d_z, self.d_w, self.d_l, self.d_h,
                self.cos_yaw, self.sin_yaw, self.vx, self.vy)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"delta has non-finite fields: {vals}")

    @classmethod
    def identity_for(cls, box: BoxState) -> "BoxDelta":
        """The delta that maps ``box`` to itself."""
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                   box.cos_yaw, box.sin_yaw, box.vx, box.vy)


@dataclass(frozen=True)
class DetectionRegion:
    """Axis-aligned world region boxes are normalized against, meters."""

    x_range: tuple = (-61.2, 61.2)
    y_range: tuple = (-61.2, 61.2)
    z_range: tuple = (-5.0, 3.0)

    def __post_init__(self):
        for name, (lo, hi) in (("x", self.x_range), ("y", self.y_range),
                               ("z", self.z_range)):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValidationError(f"{name}_range must satisfy min < max, got ({lo}, {hi})")

    @property
    def volume(self) -> float:
        return ((self.x_range[1] - self.x_range[0])
                * (self.y_range[1] - self.y_range[0])
                * (self.z_range[1] - self.z_range[0]))


DEFAULT_REGION = DetectionRegion()


def _unit_rotation(c: float, s: float) -> tuple:
    """Renormalize a (cos, sin) pair; degenerate pairs fall back to yaw 0."""
    norm2 = c * c + s * s
    if norm2 < 1e-24:
        return 1.0, 0.0
    if abs(norm2 - 1.0) <= 1e-12:
        return c, s
    norm = math.sqrt(norm2)
    return c / norm, s / norm


def apply_adjustment(box: BoxState, delta: BoxDelta) -> BoxState:
    """Apply one refinement delta to one box.

    Position offsets are scaled by the matching current dimension
    (x by w, y by l, z by h); dimensions multiply by e^delta; rotation and
    velocity are taken from the delta, with (cos, sin) renormalized.
    """
    cx = delta.d_x * box.w + box.cx
    cy = delta.d_y * box.l + box.cy
    cz = delta.d_z * box.h + box.cz
    try:
        w = math.exp(delta.d_w) * box.w
        l = math.exp(delta.d_l) * box.l
        h = math.exp(delta.d_h) * box.h
    except OverflowError:
        raise AdjustmentError(
            f"dimension adjustment overflowed: ({delta.d_w}, {delta.d_l}, {delta.d_h})")
    cos_yaw, sin_yaw = _unit_rotation(delta.cos_yaw, delta.sin_yaw)
    vals = (cx, cy, cz, w, l, h, delta.vx, delta.vy)
    if not all(math.isfinite(v) for v in vals):
        raise AdjustmentError(f"adjustment produced non-finite box: {vals}")
    return BoxState(cx=cx, cy=cy, cz=cz, w=w, l=l, h=h,
                    cos_yaw=cos_yaw, sin_yaw=sin_yaw, vx=delta.vx, vy=delta.vy)


def normalize_box(box: BoxState, region: DetectionRegion = DEFAULT_REGION) -> BoxState:
    """Map the box center affinely into [0, 1]^3 over the detection region.

    Dimensions, rotation and velocity pass through untouched; centers
    outside the region map outside [0, 1] and are preserved.
    """
    nx = (box.cx - region.x_range[0]) / (region.x_range[1] - region.x_range[0])
    ny = (box.cy - region.y_range[0]) / (region.y_range[1] - region.y_range[0])
    nz = (box.cz - region.z_range[0]) / (region.z_range[1] - region.z_range[0])
    return BoxState(cx=nx, cy=ny, cz=nz, w=box.w, l=box.l, h=box.h,
                    cos_yaw=box.cos_yaw, sin_yaw=box.sin_yaw, vx=box.vx, vy=box.vy)


def denormalize_box(box: BoxState, region: DetectionRegion = DEFAULT_REGION) -> BoxState:
    """Exact inverse of normalize_box."""
    cx = box.cx * (region.x_range[1] - region.x_range[0]) + region.x_range[0]
    cy = box.cy * (region.y_range[1] - region.y_range[0]) + region.y_range[0]
    cz = box.cz * (region.z_range[1] - region.z_range[0]) + region.z_range[0]
    return BoxState(cx=cx, cy=cy, cz=cz, w=box.w, l=box.l, h=box.h,
                    cos_yaw=box.cos_yaw, sin_yaw=box.sin_yaw, vx=box.vx, vy=box.vy)


def run_cascade(boxes, stage_deltas) -> list:
    """Apply the per-stage deltas sequentially and return final-stage boxes.

    ``stage_deltas`` is a stages x N nested sequence; delta i of every stage
    applies only to box i (boxes and cues form strict pairs).
    """
    n_stages = len(stage_deltas)
    if not 1 <= n_stages <= MAX_STAGES:
        raise ValidationError(f"stage count must be in 1..{MAX_STAGES}, got {n_stages}")
    current = list(boxes)
    for stage_idx, deltas in enumerate(stage_deltas):
        if len(deltas) != len(current):
            raise ValidationError(
                f"stage {stage_idx} has {len(deltas)} deltas for {len(current)} boxes")
        current = [apply_adjustment(b, d) for b, d in zip(current, deltas)]
    return current


def random_query_boxes(n: int, region: DetectionRegion = DEFAULT_REGION,
                       rng=None) -> list:
    """Uniform random box candidates over the detection region.

    Centers are uniform in the region, dimensions fixed at a car-like
    (l, w, h) = (4.0, 2.0, 1.5) m, heading 0, velocity 0.
    """
    rng = np.random.default_rng(rng)
    boxes = []
    for _ in range(n):
        cx = rng.uniform(*region.x_range)
        cy = rng.uniform(*region.y_range)
        cz = rng.uniform(*region.z_range)
        boxes.append(BoxState(cx=cx, cy=cy, cz=cz, w=2.0, l=4.0, h=1.5,
                              cos_yaw=1.0, sin_yaw=0.0))
    return boxes
