"""Synthetic tracking scenarios: ground-truth trajectories plus noisy detections.

Objects follow constant-velocity or constant-turn-rate trajectories on a
planar world. Detections perturb position, heading and velocity, drop out
at a configurable rate, and are joined by clutter; a configurable fraction
of the clutter lands near true objects with plausible dimensions and
velocities, mimicking detector ghost/duplicate outputs. Every true
identity carries fixed latent RoI- and query-feature embeddings; its
detections carry noisy renormalized copies, clutter carries random ones.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields

import numpy as np

from .dataio import Detection, FramePacket
from .errors import ValidationError
from .geometry import BoxState

TRAJECTORY_KINDS = ("constant_velocity", "turning")


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything deciding one synthetic scenario (seed aside)."""

    n_objects: int = 8
    trajectories: tuple = ("constant_velocity", "turning")
    pos_noise: float = 0.3
    yaw_noise: float = 0.05
    vel_noise: float = 0.3
    dropout: float = 0.0
    clutter_rate: float = 0.0
    clutter_near_fraction: float = 0.5
    embedding_dim: int = 32
    embedding_noise: float = 0.2
    frame_rate: float = 2.0
    duration: float = 30.0
    extent: float = 40.0
    bounce: bool = True
    sequence_id: str = "scene-0"

    def __post_init__(self):
        if self.n_objects < 0:
            raise ValidationError(f"n_objects must be >= 0, got {self.n_objects}")
        traj = tuple(self.trajectories)
        if not traj or any(t not in TRAJECTORY_KINDS for t in traj):
            raise ValidationError(
                f"trajectories must be drawn from {TRAJECTORY_KINDS}, got {traj}")
        object.__setattr__(self, "trajectories", traj)
        for name in ("pos_noise", "yaw_noise", "vel_noise", "clutter_rate",
                     "embedding_noise"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")
        for name in ("dropout", "clutter_near_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        if self.embedding_dim < 0:
            raise ValidationError("embedding_dim must be >= 0 (0 disables embeddings)")
        if self.frame_rate <= 0 or self.duration <= 0 or self.extent <= 0:
            raise ValidationError("frame_rate, duration and extent must be positive")

    @property
    def n_frames(self) -> int:
        return max(1, int(round(self.duration * self.frame_rate)))

    @classmethod
    def from_mapping(cls, mapping) -> "ScenarioSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ValidationError(f"unknown scenario keys: {', '.join(unknown)}")
        data = dict(mapping)
        if "trajectories" in data:
            data["trajectories"] = tuple(data["trajectories"])
        return cls(**data)


def load_scenario_spec(path) -> ScenarioSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return ScenarioSpec.from_mapping(json.load(fh))


class _SimObject:
    def __init__(self, rng, spec: ScenarioSpec, kind: str, existing):
        core = 0.8 * spec.extent
        for _ in range(200):
            pos = rng.uniform(-core, core, size=2)
            if all(np.linalg.norm(pos - q) > 8.0 for q in existing):
                break
        self.pos = pos
        self.z = rng.uniform(-1.0, 0.5)
        self.heading = rng.uniform(-math.pi, math.pi)
        self.speed = rng.uniform(2.0, 8.0)
        self.turn_rate = 0.0
        if kind == "turning":
            self.turn_rate = rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 0.25)
        self.dims = (rng.uniform(1.6, 2.2), rng.uniform(3.5, 5.0),
                     rng.uniform(1.4, 1.8))  # (w, l, h)

    @property
    def velocity(self):
        return self.speed * np.array([math.cos(self.heading), math.sin(self.heading)])

    def box(self) -> BoxState:
        v = self.velocity
        return BoxState(cx=float(self.pos[0]), cy=float(self.pos[1]), cz=float(self.z),
                        w=self.dims[0], l=self.dims[1], h=self.dims[2],
                        cos_yaw=math.cos(self.heading), sin_yaw=math.sin(self.heading),
                        vx=float(v[0]), vy=float(v[1]))

    def advance(self, dt: float, extent: float, bounce: bool):
        self.pos = self.pos + self.velocity * dt
        if self.turn_rate != 0.0:
            self.heading += self.turn_rate * dt
        if not bounce:
            return
        # Bounce off the scenario bounds so objects stay in play; note this
        # makes even "constant velocity" objects turn at the walls.
        for axis in (0, 1):
            if abs(self.pos[axis]) > extent:
                self.pos[axis] = math.copysign(extent, self.pos[axis])
                v = self.velocity
                v[axis] = -v[axis]
                self.heading = math.atan2(v[1], v[0])


def _unit(rng, dim):
    v = rng.standard_normal(dim)
    n = np.linalg.norm(v)
    while n < 1e-12:
        v = rng.standard_normal(dim)
        n = np.linalg.norm(v)
    return v / n


def _perturbed(rng, latent, noise):
    if latent is None:
        return None
    dim = latent.size
    v = latent + noise * rng.standard_normal(dim) / math.sqrt(dim)
    n = np.linalg.norm(v)
    if n < 1e-12:
        return latent.copy()
    return v / n


def _noisy_detection(rng, obj: _SimObject, spec: ScenarioSpec, roi_latent,
                     query_latent) -> Detection:
    gt = obj.box()
    yaw = gt.yaw + rng.normal(0.0, spec.yaw_noise)
    box = BoxState(
        cx=gt.cx + rng.normal(0.0, spec.pos_noise),
        cy=gt.cy + rng.normal(0.0, spec.pos_noise),
        cz=gt.cz + rng.normal(0.0, 0.5 * spec.pos_noise),
        w=gt.w, l=gt.l, h=gt.h,
        cos_yaw=math.cos(yaw), sin_yaw=math.sin(yaw),
        vx=gt.vx + rng.normal(0.0, spec.vel_noise),
        vy=gt.vy + rng.normal(0.0, spec.vel_noise))
    score = float(np.clip(rng.normal(0.85, 0.05), 0.6, 0.99))
    return Detection(box=box, class_name="car", score=score,
                     roi_feature=_perturbed(rng, roi_latent, spec.embedding_noise),
                     query_feature=_perturbed(rng, query_latent, spec.embedding_noise))


def _clutter_detection(rng, objects, spec: ScenarioSpec) -> Detection:
    near = objects and rng.random() < spec.clutter_near_fraction
    if near:
        obj = objects[rng.integers(len(objects))]
        angle = rng.uniform(-math.pi, math.pi)
        radius = rng.uniform(0.5, 4.0)
        cx = obj.pos[0] + radius * math.cos(angle)
        cy = obj.pos[1] + radius * math.sin(angle)
        cz = obj.z + rng.normal(0.0, 0.3)
        yaw = obj.heading + rng.normal(0.0, 0.3)
        vel = obj.velocity + rng.normal(0.0, 1.0, size=2)
        w, l, h = obj.dims
    else:
        cx, cy = rng.uniform(-spec.extent, spec.extent, size=2)
        cz = rng.uniform(-1.5, 1.0)
        yaw = rng.uniform(-math.pi, math.pi)
        vel = rng.normal(0.0, 3.0, size=2)
        w, l, h = rng.uniform(1.5, 2.5), rng.uniform(3.0, 5.5), rng.uniform(1.2, 2.0)
    box = BoxState(cx=float(cx), cy=float(cy), cz=float(cz), w=float(w), l=float(l),
                   h=float(h), cos_yaw=math.cos(yaw), sin_yaw=math.sin(yaw),
                   vx=float(vel[0]), vy=float(vel[1]))
    score = float(rng.uniform(0.1, 0.6))
    emb_dim = spec.embedding_dim
    roi = _unit(rng, emb_dim) if emb_dim else None
    query = _unit(rng, emb_dim) if emb_dim else None
    return Detection(box=box, class_name="car", score=score,
                     roi_feature=roi, query_feature=query)


def generate_scenario(spec: ScenarioSpec, seed: int):
    """Simulate one scenario; deterministic for a fixed (spec, seed).

    Returns (ground-truth packets, detection packets): the ground truth
    carries exact boxes with track ids, the detections carry noise,
    dropouts, clutter and feature embeddings.
    """
    rng = np.random.default_rng(seed)
    objects = []
    for i in range(spec.n_objects):
        kind = spec.trajectories[i % len(spec.trajectories)]
        objects.append(_SimObject(rng, spec, kind, [o.pos for o in objects]))
    emb_dim = spec.embedding_dim
    roi_latents = [_unit(rng, emb_dim) if emb_dim else None for _ in objects]
    query_latents = [_unit(rng, emb_dim) if emb_dim else None for _ in objects]

    dt = 1.0 / spec.frame_rate
    gt_packets = []
    det_packets = []
    for k in range(spec.n_frames):
        ts = k * dt
        gt_dets = []
        dets = []
        for i, obj in enumerate(objects):
            gt_dets.append(Detection(box=obj.box(), class_name="car", score=1.0,
                                     track_id=i + 1))
            if rng.random() >= spec.dropout:
                dets.append(_noisy_detection(rng, obj, spec, roi_latents[i],
                                             query_latents[i]))
        n_clutter = rng.poisson(spec.clutter_rate) if spec.clutter_rate > 0 else 0
        for _ in range(n_clutter):
            dets.append(_clutter_detection(rng, objects, spec))
        gt_packets.append(FramePacket(sequence_id=spec.sequence_id, timestamp=ts,
                                      detections=tuple(gt_dets)))
        det_packets.append(FramePacket(sequence_id=spec.sequence_id, timestamp=ts,
                                       detections=tuple(dets)))
        for obj in objects:
            obj.advance(dt, spec.extent, spec.bounce)
    return gt_packets, det_packets
