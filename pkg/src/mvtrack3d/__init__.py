"""Multi-camera 3D perception toolkit.

Box-to-corner decoding and pinhole projection with RoI-align feature
pooling, cascade box-adjustment arithmetic, set-prediction matching
(focal + L1 costs with optimal assignment), a multi-Bernoulli-mixture
multi-object tracker with a hybrid box/appearance likelihood, and
CLEAR-style tracking evaluation with recall-averaged accuracy.
"""

from .cascade import (BoxDelta, DetectionRegion, apply_adjustment,
                      denormalize_box, normalize_box, run_cascade)
from .geometry import (BoxState, CameraModel, FeatureMap, ProjectedRoI,
                       Visibility, aggregate_views, decode_corners,
                       project_corners, roi_align, roi_from_projection,
                       sample_box_features)
from .tracker import (BernoulliComponent, GlobalHypothesis, KinematicState,
                      MBMState, MBMTracker, Measurement, TrackerConfig,
                      TrackOutput, extract_tracks, mbm_update, prune_and_cap)

__version__ = "0.1.0"

__all__ = [
    "BoxState", "CameraModel", "FeatureMap", "ProjectedRoI", "Visibility",
    "decode_corners", "project_corners", "roi_from_projection", "roi_align",
    "aggregate_views", "sample_box_features",
    "BoxDelta", "DetectionRegion", "apply_adjustment", "normalize_box",
    "denormalize_box", "run_cascade",
    "BernoulliComponent", "GlobalHypothesis", "KinematicState", "MBMState",
    "MBMTracker", "Measurement", "TrackerConfig", "TrackOutput",
    "extract_tracks", "mbm_update", "prune_and_cap",
    "__version__",
]
