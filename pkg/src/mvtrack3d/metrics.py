"""CLEAR-MOT evaluation and recall-averaged tracking accuracy.

Matching follows the CLEAR protocol on bird's-eye-view center distance:
established ground-truth/track correspondences persist while both parties
stay within the gate; the remainder is matched per frame by minimum-cost
assignment at a 2 m default gate. An identity switch is counted when a
ground truth's matched track label differs from the last track it was ever
matched to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import hungarian
from .errors import UndefinedMetricError, ValidationError
from .geometry import BoxState

DEFAULT_DIST_THRESHOLD = 2.0
BIG_COST = 1e9


@dataclass(frozen=True)
class GtObject:
    label: int
    box: BoxState
    class_name: str = ""


@dataclass(frozen=True)
class TrackObject:
    label: int
    box: BoxState
    class_name: str = ""
    score: float = 1.0


@dataclass(frozen=True)
class EvalFrame:
    """Ground truths and tracker output for one timestamp."""

    timestamp: float
    gts: tuple
    tracks: tuple

    def __post_init__(self):
        gts = tuple(self.gts)
        tracks = tuple(self.tracks)
        for name, items in (("ground-truth", gts), ("track", tracks)):
            labels = [o.label for o in items]
            if len(labels) != len(set(labels)):
                raise ValidationError(f"duplicate {name} labels in frame "
                                      f"at t={self.timestamp}")
        object.__setattr__(self, "gts", gts)
        object.__setattr__(self, "tracks", tracks)


@dataclass(frozen=True)
class MotReport:
    """CLEAR-MOT totals plus their recall-averaged variants."""

    mota: float
    motp: float
    recall: float
    precision: float
    id_switches: int
    false_positives: int
    misses: int
    amota: float
    amotp: float
    gt_count: int = 0
    true_positives: int = 0

    def __post_init__(self):
        if self.mota > 1.0 + 1e-12:
            raise ValidationError(f"MOTA cannot exceed 1, got {self.mota}")
        for name in ("recall", "precision"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0 + 1e-12):
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        for name in ("id_switches", "false_positives", "misses"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "mota": self.mota, "motp": self.motp,
            "recall": self.recall, "precision": self.precision,
            "id_switches": self.id_switches,
            "false_positives": self.false_positives,
            "misses": self.misses,
            "amota": self.amota, "amotp": self.amotp,
            "gt_count": self.gt_count, "true_positives": self.true_positives,
        }

    @classmethod
    def from_dict(cls, data) -> "MotReport":
        return cls(**data)


@dataclass
class FrameMatch:
    """Per-frame correspondence and event counts."""

    matches: list = field(default_factory=list)  # (gt_label, track_label, distance)
    tp: int = 0
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    gt_count: int = 0
    track_count: int = 0


def _bev_distance(a: BoxState, b: BoxState) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


def match_frame(gts, tracks, prev_matching: dict | None = None,
                dist_threshold: float = DEFAULT_DIST_THRESHOLD) -> tuple:
    """Match one frame's tracks to ground truths.

    ``prev_matching`` maps gt label -> track label from earlier frames;
    persisting pairs are kept while still within the gate, the rest go
    through minimum-cost assignment on BEV center distance. Returns
    (FrameMatch, updated matching dict).
    """
    prev = dict(prev_matching or {})
    result = FrameMatch(gt_count=len(gts), track_count=len(tracks))
    gt_by_label = {g.label: g for g in gts}
    track_by_label = {t.label: t for t in tracks}

    matched_gts = set()
    matched_tracks = set()
    # Keep persistent correspondences that are still valid; each track can
    # serve at most one ground truth.
    for gt_label in sorted(prev):
        tr_label = prev[gt_label]
        g = gt_by_label.get(gt_label)
        t = track_by_label.get(tr_label)
        if g is None or t is None or tr_label in matched_tracks:
            continue
        d = _bev_distance(g.box, t.box)
        if d <= dist_threshold:
            result.matches.append((gt_label, tr_label, d))
            matched_gts.add(gt_label)
            matched_tracks.add(tr_label)

    free_gts = [g for g in gts if g.label not in matched_gts]
    free_tracks = [t for t in tracks if t.label not in matched_tracks]
    if free_gts and free_tracks:
        cost = np.full((len(free_gts), len(free_tracks)), BIG_COST)
        for i, g in enumerate(free_gts):
            for j, t in enumerate(free_tracks):
                d = _bev_distance(g.box, t.box)
                if d <= dist_threshold:
                    cost[i, j] = d
        for i, j in hungarian(cost).pairs:
            if cost[i, j] >= BIG_COST:
                continue
            g, t = free_gts[i], free_tracks[j]
            d = _bev_distance(g.box, t.box)
            result.matches.append((g.label, t.label, d))
            matched_gts.add(g.label)
            matched_tracks.add(t.label)
            if g.label in prev and prev[g.label] != t.label:
                result.idsw += 1
            prev[g.label] = t.label

    result.tp = len(result.matches)
    result.fn = len(gts) - result.tp
    result.fp = len(tracks) - result.tp
    return result, prev


def match_sequence(frames, dist_threshold: float = DEFAULT_DIST_THRESHOLD) -> list:
    """Run match_frame over an ordered sequence of EvalFrames."""
    matching = {}
    results = []
    for frame in frames:
        res, matching = match_frame(frame.gts, frame.tracks, matching, dist_threshold)
        results.append(res)
    return results


def compute_mota_motp(results) -> dict:
    """Aggregate CLEAR-MOT totals over matched frames.

    MOTA = 1 - (FP + FN + IDSW) / GT; MOTP is the mean matched center
    distance in meters (0 with no matches). Raises when no ground truth
    exists anywhere.
    """
    if not results:
        raise UndefinedMetricError("no frames to evaluate")
    gt_total = sum(r.gt_count for r in results)
    if gt_total == 0:
        raise UndefinedMetricError("metrics undefined without ground truth")
    fp = sum(r.fp for r in results)
    fn = sum(r.fn for r in results)
    idsw = sum(r.idsw for r in results)
    tp = sum(r.tp for r in results)
    track_total = sum(r.track_count for r in results)
    dist_sum = sum(d for r in results for _, _, d in r.matches)
    return {
        "mota": 1.0 - (fp + fn + idsw) / gt_total,
        "motp": dist_sum / tp if tp else 0.0,
        "recall": tp / gt_total,
        "precision": tp / track_total if track_total else 0.0,
        "id_switches": idsw,
        "false_positives": fp,
        "misses": fn,
        "gt_count": gt_total,
        "true_positives": tp,
    }


def _filter_tracks(sequences, threshold):
    out = []
    for frames in sequences:
        out.append([EvalFrame(timestamp=f.timestamp, gts=f.gts,
                              tracks=tuple(t for t in f.tracks if t.score >= threshold))
                    for f in frames])
    return out


def _eval_threshold(sequences, threshold, dist_threshold):
    results = []
    for frames in _filter_tracks(sequences, threshold):
        results.extend(match_sequence(frames, dist_threshold))
    return compute_mota_motp(results)


def compute_amota(sequences, n_recall_points: int = 40,
                  dist_threshold: float = DEFAULT_DIST_THRESHOLD):
    """Recall-averaged tracking accuracy/precision over a score sweep.

    For each of n_recall_points evenly spaced recall targets, the sweep
    picks the highest score threshold whose recall reaches the target and
    evaluates the recall-normalized accuracy

        max(0, 1 - (IDSW + FP + FN - (1 - r) * GT) / (r * GT))

    at that threshold's achieved recall r. Unreached targets are skipped;
    with no achieved target both averages are 0. Returns
    (amota, amotp, sweep) where sweep lists (target, threshold, recall,
    accuracy, motp) rows for reporting.
    """
    if n_recall_points < 1:
        raise ValidationError(f"n_recall_points must be >= 1, got {n_recall_points}")
    scores = sorted({t.score for frames in sequences for f in frames for t in f.tracks},
                    reverse=True)
    cache = {}

    def eval_at(th):
        if th not in cache:
            cache[th] = _eval_threshold(sequences, th, dist_threshold)
        return cache[th]

    targets = [(i + 1) / n_recall_points for i in range(n_recall_points)]
    sweep = []
    motar_values = []
    motp_values = []
    if scores:
        # Recall is nondecreasing as the threshold drops; for each target,
        # binary-search the highest threshold that reaches it.
        for target in targets:
            lo, hi = 0, len(scores) - 1
            found = None
            if eval_at(scores[hi])["recall"] >= target:
                while lo <= hi:
                    mid = (lo + hi) // 2
                    if eval_at(scores[mid])["recall"] >= target:
                        found = mid
                        hi = mid - 1
                    else:
                        lo = mid + 1
            if found is None:
                continue
            th = scores[found]
            stats = eval_at(th)
            r = stats["recall"]
            gt = stats["gt_count"]
            err = stats["id_switches"] + stats["false_positives"] + stats["misses"]
            motar = max(0.0, 1.0 - (err - (1.0 - r) * gt) / (r * gt))
            sweep.append({"target": target, "threshold": th, "recall": r,
                          "motar": motar, "motp": stats["motp"]})
            motar_values.append(motar)
            motp_values.append(stats["motp"])
    amota = float(np.mean(motar_values)) if motar_values else 0.0
    amotp = float(np.mean(motp_values)) if motp_values else 0.0
    return amota, amotp, sweep


def evaluate_tracking(sequences, dist_threshold: float = DEFAULT_DIST_THRESHOLD,
                      n_recall_points: int = 40):
    """Full evaluation of EvalFrame sequences: CLEAR totals + recall sweep.

    Returns (MotReport, sweep rows).
    """
    results = []
    for frames in sequences:
        results.extend(match_sequence(frames, dist_threshold))
    totals = compute_mota_motp(results)
    amota, amotp, sweep = compute_amota(sequences, n_recall_points, dist_threshold)
    report = MotReport(amota=amota, amotp=amotp, **totals)
    return report, sweep


def frames_from_packets(gt_packets, track_packets) -> list:
    """Align ground-truth and track FramePackets into EvalFrame sequences.

    Frames align on (sequence_id, timestamp); ground-truth frames with no
    track frame count as all-missed, track frames with no ground-truth
    frame as all-false-positive.
    """
    from .dataio import group_sequences

    gt_seqs = group_sequences(gt_packets)
    tr_seqs = group_sequences(track_packets)
    sequences = []
    for seq_id in sorted(set(gt_seqs) | set(tr_seqs)):
        gt_by_ts = {p.timestamp: p for p in gt_seqs.get(seq_id, [])}
        tr_by_ts = {p.timestamp: p for p in tr_seqs.get(seq_id, [])}
        frames = []
        for ts in sorted(set(gt_by_ts) | set(tr_by_ts)):
            gts = tuple(GtObject(label=d.track_id, box=d.box, class_name=d.class_name)
                        for d in gt_by_ts[ts].detections) if ts in gt_by_ts else ()
            tracks = tuple(TrackObject(label=d.track_id, box=d.box,
                                       class_name=d.class_name, score=d.score)
                           for d in tr_by_ts[ts].detections) if ts in tr_by_ts else ()
            frames.append(EvalFrame(timestamp=ts, gts=gts, tracks=tracks))
        sequences.append(frames)
    return sequences
