"""Randomized self-check of the geometry and cascade arithmetic.

Every check pits a library operation against an independently coded naive
oracle (per-corner projection loops, hand centroid sums, brute-force
properties) on seeded random inputs drawn around a camera rig.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cascade, geometry
from .geometry import BoxState, Visibility


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class SelfCheckReport:
    seed: int
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "passed": self.passed,
                "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail}
                           for c in self.checks]}


def _random_box(rng) -> BoxState:
    yaw = rng.uniform(-math.pi, math.pi)
    return BoxState(cx=rng.uniform(-40, 40), cy=rng.uniform(-40, 40),
                    cz=rng.uniform(-3, 3),
                    w=rng.uniform(0.5, 3.0), l=rng.uniform(0.5, 6.0),
                    h=rng.uniform(0.5, 3.0),
                    cos_yaw=math.cos(yaw), sin_yaw=math.sin(yaw),
                    vx=rng.uniform(-10, 10), vy=rng.uniform(-10, 10))


def _naive_project(corner, cam):
    """Independent per-corner pinhole projection (plain loops, no batching)."""
    x, y, z, one = corner[0], corner[1], corner[2], 1.0
    cam_pt = [0.0, 0.0, 0.0]
    for row in range(3):
        e = cam.extrinsic[row]
        cam_pt[row] = e[0] * x + e[1] * y + e[2] * z + e[3] * one
    depth = cam_pt[2]
    pix = [0.0, 0.0, 0.0]
    for row in range(3):
        k = cam.intrinsic[row]
        pix[row] = k[0] * cam_pt[0] + k[1] * cam_pt[1] + k[2] * cam_pt[2]
    if depth <= geometry.DEPTH_EPS:
        return None
    return pix[0] / depth, pix[1] / depth, depth


def _check_projection_oracle(rng, rig, n):
    worst = 0.0
    for _ in range(n):
        box = _random_box(rng)
        cam = rig[rng.integers(len(rig))]
        corners = geometry.decode_corners(box)
        projected = geometry.project_corners(corners, cam)
        roi = geometry.roi_from_projection(projected, cam)
        naive = [_naive_project(c, cam) for c in corners]
        if any(p is None for p in naive):
            ok = roi.visibility in (Visibility.BEHIND_CAMERA, Visibility.OUT_OF_FRAME)
            if not ok:
                return CheckResult("projection_oracle", False,
                                   "partially-behind box not classified out of frame")
            continue
        us = [p[0] for p in naive]
        vs = [p[1] for p in naive]
        err = max(abs(roi.xmin - min(us)), abs(roi.ymin - min(vs)),
                  abs(roi.xmax - max(us)), abs(roi.ymax - max(vs)))
        worst = max(worst, err)
        if err > 1e-6:
            return CheckResult("projection_oracle", False,
                               f"extent mismatch of {err:.3e} px")
    return CheckResult("projection_oracle", True, f"max extent error {worst:.3e} px")


def _check_corner_centroid(rng, n):
    worst = 0.0
    for _ in range(n):
        box = _random_box(rng)
        centroid = geometry.decode_corners(box).mean(axis=0)
        err = float(np.max(np.abs(centroid - [box.cx, box.cy, box.cz])))
        worst = max(worst, err)
        if err > 1e-9:
            return CheckResult("corner_centroid", False, f"centroid off by {err:.3e} m")
    return CheckResult("corner_centroid", True, f"max centroid error {worst:.3e} m")


def _check_rigid_invariance(rng, n):
    for _ in range(n):
        box = _random_box(rng)
        yaw = rng.uniform(-math.pi, math.pi)
        rotated = BoxState(cx=box.cx, cy=box.cy, cz=box.cz, w=box.w, l=box.l,
                           h=box.h, cos_yaw=math.cos(yaw), sin_yaw=math.sin(yaw))
        d_a = _pairwise(geometry.decode_corners(box))
        d_b = _pairwise(geometry.decode_corners(rotated))
        if np.max(np.abs(d_a - d_b)) > 1e-9:
            return CheckResult("rigid_invariance", False,
                               "corner distances changed under a yaw change")
    return CheckResult("rigid_invariance", True, "pairwise distances yaw-invariant")


def _pairwise(corners):
    diff = corners[:, None, :] - corners[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2))


def _check_projection_consistency(rng, rig, n):
    for _ in range(n):
        box = _random_box(rng)
        cam = rig[rng.integers(len(rig))]
        angle = rng.uniform(-math.pi, math.pi)
        c, s = math.cos(angle), math.sin(angle)
        g = np.eye(4)
        g[:3, :3] = [[c, -s, 0], [s, c, 0], [0, 0, 1]]
        g[:3, 3] = rng.uniform(-20, 20, size=3)
        corners = geometry.decode_corners(box)
        moved = corners @ g[:3, :3].T + g[:3, 3]
        moved_cam = geometry.CameraModel(
            intrinsic=cam.intrinsic,
            extrinsic=cam.extrinsic @ np.linalg.inv(g),
            image_width=cam.image_width, image_height=cam.image_height,
            name=cam.name)
        a = geometry.project_corners(corners, cam)
        b = geometry.project_corners(moved, moved_cam)
        if not np.array_equal(a.projectable, b.projectable):
            return CheckResult("projection_consistency", False,
                               "projectability changed under a rigid transform")
        mask = a.projectable
        err = 0.0
        if np.any(mask):
            err = max(float(np.max(np.abs(a.u[mask] - b.u[mask]))),
                      float(np.max(np.abs(a.v[mask] - b.v[mask]))),
                      float(np.max(np.abs(a.depth[mask] - b.depth[mask]))))
        if err > 1e-6:
            return CheckResult("projection_consistency", False,
                               f"projection moved by {err:.3e} under a rigid transform")
    return CheckResult("projection_consistency", True,
                       "projections invariant under shared rigid transforms")


def _check_roi_align_constant(rng, n):
    for _ in range(n):
        value = rng.uniform(-5, 5)
        fm = geometry.FeatureMap(np.full((rng.integers(4, 12), rng.integers(4, 12), 2),
                                         value))
        x1 = rng.uniform(0.5, fm.width - 2.5)
        y1 = rng.uniform(0.5, fm.height - 2.5)
        roi = geometry.ProjectedRoI(0, x1, y1, x1 + 1.5, y1 + 1.5,
                                    Visibility.VISIBLE,
                                    (x1, y1, x1 + 1.5, y1 + 1.5))
        pooled = geometry.roi_align(fm, roi, int(rng.integers(1, 5)),
                                    int(rng.integers(1, 5)), 2)
        if np.max(np.abs(pooled - value)) > 1e-9:
            return CheckResult("roi_align_constant", False,
                               "constant map did not pool to the constant")
    return CheckResult("roi_align_constant", True, "constant maps pool exactly")


def _check_aggregate_permutation(rng, n):
    for _ in range(n):
        k = int(rng.integers(2, 6))
        grids = [rng.standard_normal((3, 3, 2)) for _ in range(k)]
        flags = [Visibility.VISIBLE if rng.random() > 0.3 else Visibility.BEHIND_CAMERA
                 for _ in range(k)]
        fused = geometry.aggregate_views(grids, flags)
        perm = rng.permutation(k)
        fused_p = geometry.aggregate_views([grids[i] for i in perm],
                                           [flags[i] for i in perm])
        if np.max(np.abs(fused - fused_p)) > 1e-12:
            return CheckResult("aggregate_permutation", False,
                               "fusion depends on camera order")
    return CheckResult("aggregate_permutation", True, "fusion is order-invariant")


def _check_cascade(rng, n):
    for _ in range(n):
        box = _random_box(rng)
        identity = cascade.BoxDelta.identity_for(box)
        if cascade.apply_adjustment(box, identity) != box:
            return CheckResult("cascade", False, "identity delta moved a box")
        delta = cascade.BoxDelta(
            d_x=rng.uniform(-2, 2), d_y=rng.uniform(-2, 2), d_z=rng.uniform(-2, 2),
            d_w=rng.uniform(-2, 2), d_l=rng.uniform(-2, 2), d_h=rng.uniform(-2, 2),
            cos_yaw=rng.uniform(-2, 2), sin_yaw=rng.uniform(-2, 2),
            vx=rng.uniform(-10, 10), vy=rng.uniform(-10, 10))
        adjusted = cascade.apply_adjustment(box, delta)
        if min(adjusted.w, adjusted.l, adjusted.h) <= 0:
            return CheckResult("cascade", False, "adjustment lost dim positivity")
        norm = adjusted.cos_yaw ** 2 + adjusted.sin_yaw ** 2
        if abs(norm - 1.0) > 1e-9:
            return CheckResult("cascade", False, "rotation lost unit norm")
        back = cascade.denormalize_box(cascade.normalize_box(box))
        if max(abs(back.cx - box.cx), abs(back.cy - box.cy), abs(back.cz - box.cz)) > 1e-12:
            return CheckResult("cascade", False, "normalize/denormalize not inverse")
    return CheckResult("cascade", True, "identity, positivity, unit norm, inverses hold")


def run_geometry_selfcheck(rig, seed: int, n_samples: int = 200) -> SelfCheckReport:
    """Run all randomized invariant checks against a camera rig.

    ``rig`` is a list of CameraModels (already validated at load time).
    The report is deterministic for a fixed seed.
    """
    report = SelfCheckReport(seed=seed)
    rng = np.random.default_rng(seed)
    report.checks.append(_check_projection_oracle(rng, rig, n_samples))
    report.checks.append(_check_corner_centroid(rng, n_samples))
    report.checks.append(_check_rigid_invariance(rng, n_samples))
    report.checks.append(_check_projection_consistency(rng, rig, n_samples))
    report.checks.append(_check_roi_align_constant(rng, max(20, n_samples // 10)))
    report.checks.append(_check_aggregate_permutation(rng, max(20, n_samples // 10)))
    report.checks.append(_check_cascade(rng, n_samples))
    return report
