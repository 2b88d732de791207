"""Command-line pipeline: simulate, track, evaluate, self-check.

Commands:
    sim       --spec F --seed N --out-dir D
    track     --detections F [--cameras F] [--config F] --mode M --out F
    eval      --tracks F --gt F --out F [--no-figures]
    selfcheck --cameras F --seed N [--samples N]

Every command validates its inputs fully before writing anything and exits
nonzero on any failure; output files are written atomically. The only
environment variable honored is MVTRACK3D_VERBOSE (log verbosity).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from . import dataio, metrics, report, simulate
from .errors import MvTrackError
from .tracker import TRACK_MODES, MBMTracker, TrackerConfig, config_for_mode

log = logging.getLogger("mvtrack3d")


def run_track(detections_path, out_path, mode="pr+h", config_path=None,
              cameras_path=None) -> dict:
    """Track every sequence of a detection file and write a track file.

    Returns a run summary. The optional camera rig is loaded and validated
    so rig problems surface here rather than downstream.
    """
    config = (dataio.load_tracker_config(config_path) if config_path
              else TrackerConfig())
    config = config_for_mode(config, mode)
    if cameras_path:
        rig = dataio.load_camera_rig(cameras_path)
        log.info("validated camera rig with %d cameras", len(rig))
    packets = dataio.load_detections(detections_path)
    sequences = dataio.group_sequences(packets)
    started = time.monotonic()
    out_packets = []
    labels = set()
    for seq_id, frames in sequences.items():
        tracker = MBMTracker(config)
        for frame in frames:
            world = dataio.apply_ego_pose(frame)
            outputs = tracker.step(world)
            dets = tuple(dataio.Detection(box=o.box, class_name=o.class_name,
                                          score=o.score, track_id=o.track_id)
                         for o in outputs)
            labels.update(o.track_id for o in outputs)
            out_packets.append(dataio.FramePacket(sequence_id=seq_id,
                                                  timestamp=frame.timestamp,
                                                  detections=dets))
    dataio.write_tracks(out_path, out_packets)
    return {
        "mode": mode,
        "sequences": len(sequences),
        "frames": len(packets),
        "tracks": len(labels),
        "runtime_s": round(time.monotonic() - started, 3),
        "out": str(out_path),
    }


def run_eval(tracks_path, gt_path, out_path, figures=True,
             dist_threshold=metrics.DEFAULT_DIST_THRESHOLD,
             n_recall_points=40) -> metrics.MotReport:
    """Evaluate a track file against ground truth and write the report."""
    track_packets = dataio.load_tracks(tracks_path)
    gt_packets = dataio.load_tracks(gt_path)
    sequences = metrics.frames_from_packets(gt_packets, track_packets)
    mot_report, sweep = metrics.evaluate_tracking(
        sequences, dist_threshold=dist_threshold, n_recall_points=n_recall_points)
    gt_only = [[metrics.EvalFrame(timestamp=f.timestamp, gts=f.gts, tracks=())
                for f in frames] for frames in sequences]
    report.write_report(out_path, mot_report, sweep=sweep,
                        gt_sequences=gt_only, track_sequences=sequences,
                        figures=figures)
    return mot_report


def run_sim(spec_path, seed, out_dir) -> dict:
    """Generate a scenario and write ground-truth and detection files."""
    spec = (simulate.load_scenario_spec(spec_path) if spec_path
            else simulate.ScenarioSpec())
    gt_packets, det_packets = simulate.generate_scenario(spec, seed)
    os.makedirs(out_dir, exist_ok=True)
    gt_path = os.path.join(out_dir, "gt.jsonl")
    det_path = os.path.join(out_dir, "detections.jsonl")
    dataio.write_tracks(gt_path, gt_packets)
    dataio.write_detections(det_path, det_packets)
    return {"frames": len(det_packets), "objects": spec.n_objects,
            "gt": gt_path, "detections": det_path}


def _cmd_track(args) -> int:
    summary = run_track(args.detections, args.out, mode=args.mode,
                        config_path=args.config, cameras_path=args.cameras)
    print(json.dumps(summary))
    return 0


def _cmd_eval(args) -> int:
    mot_report = run_eval(args.tracks, args.gt, args.out,
                          figures=not args.no_figures)
    print(json.dumps(mot_report.to_dict(), sort_keys=True))
    return 0


def _cmd_sim(args) -> int:
    summary = run_sim(args.spec, args.seed, args.out_dir)
    print(json.dumps(summary))
    return 0


def _cmd_selfcheck(args) -> int:
    from .selfcheck import run_geometry_selfcheck

    rig = dataio.load_camera_rig(args.cameras)
    result = run_geometry_selfcheck(rig, args.seed, n_samples=args.samples)
    for check in result.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"[{status}] {check.name}: {check.detail}")
    print(f"selfcheck {'passed' if result.passed else 'FAILED'} (seed {result.seed})")
    return 0 if result.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvtrack3d",
        description="Multi-camera 3D tracking pipeline: simulate, track, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_track = sub.add_parser("track", help="run the tracker over a detection file")
    p_track.add_argument("--detections", required=True, help="detection JSON-lines file")
    p_track.add_argument("--cameras", default=None, help="camera rig JSON file")
    p_track.add_argument("--config", default=None, help="tracker TOML config file")
    p_track.add_argument("--mode", default="pr+h", choices=TRACK_MODES,
                         help="association mode (default pr+h)")
    p_track.add_argument("--out", required=True, help="output track file")
    p_track.set_defaults(func=_cmd_track)

    p_eval = sub.add_parser("eval", help="evaluate tracks against ground truth")
    p_eval.add_argument("--tracks", required=True, help="track JSON-lines file")
    p_eval.add_argument("--gt", required=True, help="ground-truth track file")
    p_eval.add_argument("--out", required=True, help="output report JSON path")
    p_eval.add_argument("--no-figures", action="store_true",
                        help="skip PNG figure rendering")
    p_eval.set_defaults(func=_cmd_eval)

    p_sim = sub.add_parser("sim", help="generate a synthetic scenario")
    p_sim.add_argument("--spec", default=None, help="scenario spec JSON file")
    p_sim.add_argument("--seed", type=int, required=True, help="random seed")
    p_sim.add_argument("--out-dir", required=True, help="output directory")
    p_sim.set_defaults(func=_cmd_sim)

    p_check = sub.add_parser("selfcheck", help="randomized geometry/cascade checks")
    p_check.add_argument("--cameras", required=True, help="camera rig JSON file")
    p_check.add_argument("--seed", type=int, required=True, help="random seed")
    p_check.add_argument("--samples", type=int, default=200,
                         help="random samples per check (default 200)")
    p_check.set_defaults(func=_cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    level = logging.DEBUG if os.environ.get("MVTRACK3D_VERBOSE") else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (MvTrackError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
