"""Data formats: detection/track JSON-lines, camera rigs, configs, fixtures.

Detection files are JSON lines, one frame per line:

    {"sequence_id": str, "timestamp": float, "ego_pose": [16 numbers]?,
     "detections": [{"box": [10 numbers], "class": str, "score": float,
                     "track_id"?: int, "roi_feature"?: [...],
                     "query_feature"?: [...]}]}

The box array is serialized [cx, cy, h, w, cz, l, cos_yaw, sin_yaw, vx, vy].
Track files mirror detection files with a mandatory integer track_id per
object. Loading never mutates the data; the optional ego pose is applied
explicitly at tracking ingestion via apply_ego_pose().
"""

from __future__ import annotations

import json
import math
import os
import struct
import sys
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError
from .geometry import BoxState, CameraModel, FeatureMap

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class Detection:
    """One detected object: box, class, score, optional feature embeddings."""

    box: BoxState
    class_name: str
    score: float
    roi_feature: np.ndarray | None = None
    query_feature: np.ndarray | None = None
    track_id: int | None = None

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class FramePacket:
    """All detections of one sequence at one timestamp."""

    sequence_id: str
    timestamp: float
    detections: tuple
    ego_pose: np.ndarray | None = None


def _parse_detection(obj, path_prefix, require_track_id):
    if not isinstance(obj, dict):
        raise ValidationError(f"{path_prefix}: detection must be an object")
    box = obj.get("box")
    if not isinstance(box, list) or len(box) != 10:
        raise ValidationError(f"{path_prefix}.box: expected 10 numbers")
    try:
        box_state = BoxState.from_array(box)
    except ValidationError as exc:
        raise ValidationError(f"{path_prefix}.box: {exc}")
    cls = obj.get("class")
    if not isinstance(cls, str) or not cls:
        raise ValidationError(f"{path_prefix}.class: expected a nonempty string")
    score = obj.get("score")
    if not isinstance(score, (int, float)) or not 0.0 <= score <= 1.0:
        raise ValidationError(f"{path_prefix}.score: expected a number in [0, 1]")
    track_id = obj.get("track_id")
    if require_track_id and not isinstance(track_id, int):
        raise ValidationError(f"{path_prefix}.track_id: expected an integer")
    if track_id is not None and not isinstance(track_id, int):
        raise ValidationError(f"{path_prefix}.track_id: expected an integer")
    feats = {}
    for key in ("roi_feature", "query_feature"):
        raw = obj.get(key)
        if raw is None:
            feats[key] = None
            continue
        arr = np.asarray(raw, dtype=float)
        if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)):
            raise ValidationError(f"{path_prefix}.{key}: expected a finite 1-D array")
        feats[key] = arr
    known = {"box", "class", "score", "track_id", "roi_feature", "query_feature"}
    extra = sorted(set(obj) - known)
    if extra:
        raise ValidationError(f"{path_prefix}: unknown keys {extra}")
    return Detection(box=box_state, class_name=cls, score=float(score),
                     track_id=track_id, **feats)


def _parse_frame(obj, line_no, require_track_id):
    if not isinstance(obj, dict):
        raise ParseError("frame record must be a JSON object", line=line_no)
    seq = obj.get("sequence_id")
    if not isinstance(seq, str) or not seq:
        raise ValidationError("sequence_id: expected a nonempty string")
    ts = obj.get("timestamp")
    if not isinstance(ts, (int, float)) or not math.isfinite(ts):
        raise ValidationError("timestamp: expected a finite number")
    pose = obj.get("ego_pose")
    if pose is not None:
        if not isinstance(pose, list) or len(pose) != 16:
            raise ValidationError("ego_pose: expected 16 numbers")
        pose = np.asarray(pose, dtype=float).reshape(4, 4)
        if not np.all(np.isfinite(pose)):
            raise ValidationError("ego_pose: contains non-finite values")
    dets_raw = obj.get("detections")
    if not isinstance(dets_raw, list):
        raise ValidationError("detections: expected a list")
    dets = tuple(_parse_detection(d, f"detections[{i}]", require_track_id)
                 for i, d in enumerate(dets_raw))
    known = {"sequence_id", "timestamp", "ego_pose", "detections"}
    extra = sorted(set(obj) - known)
    if extra:
        raise ValidationError(f"unknown frame keys {extra}")
    return FramePacket(sequence_id=seq, timestamp=float(ts),
                       detections=dets, ego_pose=pose)


def _load_frames(path, require_track_id):
    packets = []
    last_ts = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=line_no)
            try:
                packet = _parse_frame(obj, line_no, require_track_id)
            except ValidationError as exc:
                raise ParseError(str(exc), line=line_no)
            prev = last_ts.get(packet.sequence_id)
            if prev is not None and packet.timestamp <= prev:
                raise ParseError(
                    f"timestamp {packet.timestamp} not strictly increasing within "
                    f"sequence {packet.sequence_id!r}", line=line_no)
            last_ts[packet.sequence_id] = packet.timestamp
            packets.append(packet)
    return packets


def load_detections(path) -> list:
    """Load a detection file as validated FramePackets (file order)."""
    return _load_frames(path, require_track_id=False)


def load_tracks(path) -> list:
    """Load a track file; every object must carry an integer track_id."""
    return _load_frames(path, require_track_id=True)


def group_sequences(packets) -> dict:
    """Group packets by sequence id, preserving file order."""
    out = {}
    for p in packets:
        out.setdefault(p.sequence_id, []).append(p)
    return out


def _detection_obj(det: Detection) -> dict:
    obj = {"box": [float(x) for x in det.box.to_array()],
           "class": det.class_name,
           "score": float(det.score)}
    if det.track_id is not None:
        obj["track_id"] = int(det.track_id)
    if det.roi_feature is not None:
        obj["roi_feature"] = [float(x) for x in det.roi_feature]
    if det.query_feature is not None:
        obj["query_feature"] = [float(x) for x in det.query_feature]
    return obj


def _frame_obj(packet: FramePacket) -> dict:
    obj = {"sequence_id": packet.sequence_id, "timestamp": packet.timestamp}
    if packet.ego_pose is not None:
        obj["ego_pose"] = [float(x) for x in packet.ego_pose.reshape(-1)]
    obj["detections"] = [_detection_obj(d) for d in packet.detections]
    return obj


def _dump_frames(packets, require_track_id):
    lines = []
    for i, p in enumerate(packets):
        if require_track_id:
            for j, d in enumerate(p.detections):
                if d.track_id is None:
                    raise ValidationError(
                        f"frame {i} detections[{j}]: track files require track_id")
        lines.append(json.dumps(_frame_obj(p), separators=(",", ":"),
                                allow_nan=False))
    return "".join(line + "\n" for line in lines)


def atomic_write_text(path, text):
    """Write a file all-or-nothing: no partial output on failure."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_detections(path, packets):
    """Write FramePackets as a detection file (inverse of load_detections)."""
    atomic_write_text(path, _dump_frames(packets, require_track_id=False))


def write_tracks(path, packets):
    """Write FramePackets as a track file; objects must carry track ids."""
    atomic_write_text(path, _dump_frames(packets, require_track_id=True))


def apply_ego_pose(packet: FramePacket) -> FramePacket:
    """Transform all boxes into the world frame through the ego pose.

    The 4x4 pose maps ego coordinates to world coordinates; centers are
    transformed rigidly, headings and velocities rotate through the pose's
    planar rotation. Returns a packet with ego_pose cleared.
    """
    if packet.ego_pose is None:
        return packet
    rot = packet.ego_pose[:3, :3]
    trans = packet.ego_pose[:3, 3]
    dets = []
    for det in packet.detections:
        b = det.box
        center = rot @ np.array([b.cx, b.cy, b.cz]) + trans
        heading = rot @ np.array([b.cos_yaw, b.sin_yaw, 0.0])
        norm = math.hypot(heading[0], heading[1])
        if norm < 1e-12:
            raise ValidationError("ego pose degenerates the box heading")
        vel = rot @ np.array([b.vx, b.vy, 0.0])
        box = BoxState(cx=float(center[0]), cy=float(center[1]), cz=float(center[2]),
                       w=b.w, l=b.l, h=b.h,
                       cos_yaw=float(heading[0] / norm), sin_yaw=float(heading[1] / norm),
                       vx=float(vel[0]), vy=float(vel[1]))
        dets.append(Detection(box=box, class_name=det.class_name, score=det.score,
                              roi_feature=det.roi_feature,
                              query_feature=det.query_feature,
                              track_id=det.track_id))
    return FramePacket(sequence_id=packet.sequence_id, timestamp=packet.timestamp,
                       detections=tuple(dets), ego_pose=None)


def load_camera_rig(path) -> list:
    """Load a camera rig JSON file as validated CameraModels.

    Format: a list of {"name": str, "intrinsic": [9 row-major numbers],
    "extrinsic": [16 row-major numbers, world->camera], "width": int,
    "height": int}. Validation failures name the offending camera.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid rig JSON: {exc.msg}", line=exc.lineno)
    if not isinstance(data, list) or not data:
        raise ValidationError("camera rig must be a nonempty list")
    cams = []
    for i, entry in enumerate(data):
        name = entry.get("name", f"camera[{i}]")
        intrinsic = entry.get("intrinsic")
        extrinsic = entry.get("extrinsic")
        if not isinstance(intrinsic, list) or len(intrinsic) != 9:
            raise ValidationError(f"camera {name!r}: intrinsic must be 9 numbers")
        if not isinstance(extrinsic, list) or len(extrinsic) != 16:
            raise ValidationError(f"camera {name!r}: extrinsic must be 16 numbers")
        cams.append(CameraModel(
            intrinsic=np.asarray(intrinsic, dtype=float).reshape(3, 3),
            extrinsic=np.asarray(extrinsic, dtype=float).reshape(4, 4),
            image_width=int(entry.get("width", 0)),
            image_height=int(entry.get("height", 0)),
            name=str(name)))
    return cams


def write_camera_rig(path, cams):
    entries = []
    for cam in cams:
        entries.append({
            "name": cam.name,
            "intrinsic": [float(x) for x in cam.intrinsic.reshape(-1)],
            "extrinsic": [float(x) for x in cam.extrinsic.reshape(-1)],
            "width": cam.image_width,
            "height": cam.image_height,
        })
    atomic_write_text(path, json.dumps(entries, indent=2) + "\n")


_FM_HEADER = struct.Struct("<III")


def write_feature_map(path, fm: FeatureMap):
    """Binary feature-map fixture: 12-byte (h, w, c) header + row-major f32."""
    data = np.ascontiguousarray(fm.data, dtype=np.float32)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(_FM_HEADER.pack(fm.height, fm.width, fm.channels))
        fh.write(data.tobytes())
    os.replace(tmp, path)


def read_feature_map(path) -> FeatureMap:
    with open(path, "rb") as fh:
        header = fh.read(_FM_HEADER.size)
        if len(header) != _FM_HEADER.size:
            raise ParseError("feature map file too short for header")
        h, w, c = _FM_HEADER.unpack(header)
        payload = fh.read()
    expected = h * w * c * 4
    if len(payload) != expected:
        raise ParseError(
            f"feature map payload is {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype=np.float32).reshape(h, w, c)
    return FeatureMap(data=data.astype(float))


def load_tracker_config(path):
    """Load a TOML tracker config; keys mirror TrackerConfig fields."""
    from .tracker import TrackerConfig

    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ParseError(f"invalid TOML: {exc}")
    return TrackerConfig.from_mapping(data)
