import math

import numpy as np
import pytest

from mvtrack3d.geometry import BoxState, CameraModel


def make_camera(yaw=0.0, center=(0.0, 0.0, 0.0), fx=1000.0, fy=1000.0,
                cx=500.0, cy=500.0, width=1000, height=1000, name=""):
    """Camera at ``center`` facing world azimuth ``yaw`` (z up, y_cam down)."""
    c, s = math.cos(yaw), math.sin(yaw)
    forward = np.array([c, s, 0.0])
    right = np.array([s, -c, 0.0])
    down = np.array([0.0, 0.0, -1.0])
    rot = np.vstack([right, down, forward])
    ext = np.eye(4)
    ext[:3, :3] = rot
    ext[:3, 3] = -rot @ np.asarray(center, dtype=float)
    intr = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
    return CameraModel(intrinsic=intr, extrinsic=ext, image_width=width,
                       image_height=height, name=name or f"cam-yaw{yaw:.2f}")


def ring_rig(n=6, **kwargs):
    """n cameras at the origin looking outward at even azimuth intervals."""
    return [make_camera(yaw=2.0 * math.pi * k / n, name=f"ring-{k}", **kwargs)
            for k in range(n)]


def random_rotation(rng):
    """Uniform-ish random rotation with determinant +1."""
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_camera(rng, name=""):
    ext = np.eye(4)
    ext[:3, :3] = random_rotation(rng)
    ext[:3, 3] = rng.uniform(-20.0, 20.0, size=3)
    fx, fy = rng.uniform(300.0, 1500.0, size=2)
    width = int(rng.integers(600, 2000))
    height = int(rng.integers(400, 1200))
    intr = np.array([[fx, 0.0, width / 2.0 + rng.uniform(-20, 20)],
                     [0.0, fy, height / 2.0 + rng.uniform(-20, 20)],
                     [0.0, 0.0, 1.0]])
    return CameraModel(intrinsic=intr, extrinsic=ext, image_width=width,
                       image_height=height, name=name)


def random_box(rng):
    yaw = rng.uniform(-math.pi, math.pi)
    return BoxState(cx=rng.uniform(-40.0, 40.0), cy=rng.uniform(-40.0, 40.0),
                    cz=rng.uniform(-4.0, 3.0),
                    w=rng.uniform(0.3, 3.0), l=rng.uniform(0.3, 6.0),
                    h=rng.uniform(0.3, 3.0),
                    cos_yaw=math.cos(yaw), sin_yaw=math.sin(yaw),
                    vx=rng.uniform(-10.0, 10.0), vy=rng.uniform(-10.0, 10.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
