"""Multi-object tracking with a multi-Bernoulli mixture over association hypotheses.

Each potential object is a Bernoulli component: an existence probability r,
an unscented-Kalman-filtered kinematic state [cx, cy, cz, yaw, vx, vy],
smoothed box dimensions, and running appearance-feature memories. A global
hypothesis selects one component variant per track label and carries a
weight; the tracker maintains a capped, pruned mixture of such hypotheses.

Per frame, every surviving hypothesis expands through a ranked-assignment
(Murty) sweep over its tracks and the frame's measurements. A detected
track pays the negative hybrid log-likelihood (Gaussian innovation density
plus weighted cosine similarities of RoI- and query-feature embeddings), a
missed track pays its Bernoulli missed-detection term, and an unclaimed
measurement births a new component against the clutter density. The
deterministic mode replaces all of this with single-best Mahalanobis
matching and keeps exactly one hypothesis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import chi2

from .assignment import murty_kbest
from .errors import (NumericalError, SequenceOrderError,
                     UndefinedSimilarityError, ValidationError)
from .geometry import BoxState

STATE_DIM = 6
YAW_IDX = 3

TRACK_MODES = ("de", "pr", "pr+r", "pr+h")


def wrap_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]; in-range values pass through exactly."""
    if -math.pi < a <= math.pi:
        return a
    r = math.fmod(a, math.tau)
    if r > math.pi:
        r -= math.tau
    elif r <= -math.pi:
        r += math.tau
    return r


@dataclass(frozen=True)
class TrackerConfig:
    """All tracker knobs; every field is overridable from a TOML config file.

    ``alpha`` and ``beta`` weight the RoI-feature and query-feature cosine
    terms of the hybrid likelihood. ``sigma_*`` are the unscented-transform
    spread parameters (named apart from the likelihood weights on purpose).
    Noise entries are diagonal variances over [cx, cy, cz, yaw, vx, vy];
    process noise is per second and scales with the frame gap.
    """

    alpha: float = 0.5
    beta: float = 0.5
    p_detect: float = 0.9
    p_survive: float = 0.99
    clutter_density: float = 1e-4
    gate_prob: float = 0.95
    max_hypotheses: int = 50
    hyp_prune_ratio: float = 1e-3
    bernoulli_prune_r: float = 1e-2
    extract_r: float = 0.5
    process_noise: tuple = (0.5, 0.5, 0.05, 0.05, 0.7, 0.7)
    measurement_noise: tuple = (0.2, 0.2, 0.1, 0.05, 0.3, 0.3)
    birth_noise: tuple = (0.5, 0.5, 0.25, 0.1, 0.5, 0.5)
    sigma_spread: float = 1e-3
    sigma_secondary: float = 2.0
    sigma_tertiary: float = 0.0
    feature_decay: float = 0.9
    dims_decay: float = 0.9
    deterministic: bool = False

    def __post_init__(self):
        for name in ("p_detect", "p_survive", "feature_decay", "dims_decay"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        if self.max_hypotheses < 1:
            raise ValidationError(f"max_hypotheses must be >= 1, got {self.max_hypotheses}")
        if self.clutter_density <= 0:
            raise ValidationError(f"clutter_density must be positive, got {self.clutter_density}")
        if not (0.0 < self.gate_prob <= 1.0):
            raise ValidationError(f"gate_prob must be in (0, 1], got {self.gate_prob}")
        if not (0.0 <= self.extract_r <= 1.0):
            raise ValidationError(f"extract_r must be in [0, 1], got {self.extract_r}")
        for name in ("process_noise", "measurement_noise", "birth_noise"):
            diag = tuple(float(x) for x in getattr(self, name))
            if len(diag) != STATE_DIM or any(x < 0 for x in diag):
                raise ValidationError(
                    f"{name} must be {STATE_DIM} nonnegative variances, got {diag}")
            object.__setattr__(self, name, diag)
        if self.sigma_spread <= 0:
            raise ValidationError(f"sigma_spread must be positive, got {self.sigma_spread}")

    @classmethod
    def from_mapping(cls, mapping) -> "TrackerConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ValidationError(f"unknown tracker config keys: {', '.join(unknown)}")
        return cls(**mapping)

    def to_mapping(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def config_for_mode(cfg: TrackerConfig, mode: str) -> TrackerConfig:
    """Specialize a config for one association mode.

    de: deterministic single-hypothesis Mahalanobis matching, features off.
    pr: probabilistic association on the box likelihood only.
    pr+r: adds the RoI-feature cosine term; pr+h: adds both feature terms.
    """
    mode = mode.lower()
    if mode == "de":
        return replace(cfg, deterministic=True, max_hypotheses=1, alpha=0.0, beta=0.0)
    if mode == "pr":
        return replace(cfg, deterministic=False, alpha=0.0, beta=0.0)
    if mode == "pr+r":
        return replace(cfg, deterministic=False, beta=0.0)
    if mode == "pr+h":
        return replace(cfg, deterministic=False)
    raise ValidationError(f"unknown mode {mode!r}, expected one of {TRACK_MODES}")


@dataclass(frozen=True)
class Measurement:
    """One detection converted to tracker form.

    ``vector`` is [cx, cy, cz, yaw, vx, vy] with yaw wrapped into (-pi, pi];
    ``dims`` is (w, l, h).
    """

    vector: np.ndarray
    dims: np.ndarray
    class_name: str
    score: float
    roi_feature: np.ndarray | None = None
    query_feature: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float)
        d = np.asarray(self.dims, dtype=float)
        if v.shape != (STATE_DIM,) or not np.all(np.isfinite(v)):
            raise ValidationError(f"measurement vector must be {STATE_DIM} finite values")
        if not (-math.pi < v[YAW_IDX] <= math.pi):
            raise ValidationError(f"measurement yaw {v[YAW_IDX]} outside (-pi, pi]")
        if d.shape != (3,) or np.any(d <= 0) or not np.all(np.isfinite(d)):
            raise ValidationError("measurement dims must be 3 positive values")
        if not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"measurement score must be in [0, 1], got {self.score}")
        object.__setattr__(self, "vector", v)
        object.__setattr__(self, "dims", d)


def measurement_from_detection(det) -> Measurement:
    """Build a Measurement from a detection record carrying a BoxState."""
    box = det.box
    vec = np.array([box.cx, box.cy, box.cz,
                    wrap_angle(math.atan2(box.sin_yaw, box.cos_yaw)),
                    box.vx, box.vy])
    feats = {}
    for name in ("roi_feature", "query_feature"):
        f = getattr(det, name, None)
        feats[name] = None if f is None else np.asarray(f, dtype=float)
    return Measurement(vector=vec, dims=np.array([box.w, box.l, box.h]),
                       class_name=det.class_name, score=det.score, **feats)


@dataclass(frozen=True)
class KinematicState:
    """Filtered mean/covariance over [cx, cy, cz, yaw, vx, vy] plus smoothed dims."""

    mean: np.ndarray
    cov: np.ndarray
    dims: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).copy()
        cov = np.asarray(self.cov, dtype=float)
        dims = np.asarray(self.dims, dtype=float)
        if mean.shape != (STATE_DIM,) or not np.all(np.isfinite(mean)):
            raise ValidationError(f"state mean must be {STATE_DIM} finite values")
        if cov.shape != (STATE_DIM, STATE_DIM) or not np.all(np.isfinite(cov)):
            raise ValidationError(f"covariance must be {STATE_DIM}x{STATE_DIM} and finite")
        if np.max(np.abs(cov - cov.T)) > 1e-9:
            raise NumericalError("covariance is not symmetric within 1e-9")
        cov = 0.5 * (cov + cov.T)
        # Eigenvalues must not dip below -1e-9; cheap Cholesky probe.
        try:
            np.linalg.cholesky(cov + 2e-9 * np.eye(STATE_DIM))
        except np.linalg.LinAlgError:
            raise NumericalError("covariance is not positive semidefinite")
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ValidationError("dims must be 3 positive values")
        mean[YAW_IDX] = wrap_angle(mean[YAW_IDX])
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "dims", dims)


def _unit_or_none(vec) -> np.ndarray | None:
    if vec is None:
        return None
    v = np.asarray(vec, dtype=float)
    n = float(np.linalg.norm(v))
    if n == 0.0 or not np.all(np.isfinite(v)):
        return None
    return v / n


@dataclass(frozen=True)
class BernoulliComponent:
    """One potential object: existence probability, state, label and memories.

    ``last_event`` records the measurement index the component was updated
    with in its most recent frame (None for a missed-detection variant).
    """

    r: float
    state: KinematicState
    label: int
    roi_memory: np.ndarray | None = None
    query_memory: np.ndarray | None = None
    hits: int = 0
    misses: int = 0
    class_name: str = ""
    score: float = 0.0
    last_event: int | None = None

    def __post_init__(self):
        if not (-1e-12 <= self.r <= 1.0 + 1e-12):
            raise ValidationError(f"existence probability must be in [0, 1], got {self.r}")
        object.__setattr__(self, "r", min(max(self.r, 0.0), 1.0))
        for name in ("roi_memory", "query_memory"):
            mem = getattr(self, name)
            if mem is not None:
                mem = np.asarray(mem, dtype=float)
                n = float(np.linalg.norm(mem))
                if abs(n - 1.0) > 1e-6:
                    raise ValidationError(f"{name} must be unit norm, got |.| = {n}")
                object.__setattr__(self, name, mem)


@dataclass(frozen=True)
class GlobalHypothesis:
    """One weighted association hypothesis: track label -> component id."""

    weight: float
    tracks: dict

    def signature(self) -> tuple:
        return tuple(sorted(self.tracks.items()))


@dataclass
class MBMState:
    """The tracker's mutable posterior: component table + hypothesis mixture."""

    components: dict = field(default_factory=dict)
    hypotheses: list = field(default_factory=list)
    next_label: int = 1
    next_component: int = 1
    last_timestamp: float | None = None


@dataclass(frozen=True)
class TrackOutput:
    """One emitted per-frame track estimate."""

    track_id: int
    box: BoxState
    class_name: str
    score: float


# ---------------------------------------------------------------------------
# Likelihood pieces


def mahalanobis(innovation, S) -> float:
    """sqrt(nu' S^-1 nu) for a symmetric positive definite S."""
    nu = np.asarray(innovation, dtype=float)
    S = np.asarray(S, dtype=float)
    try:
        factor = cho_factor(0.5 * (S + S.T), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"innovation covariance is singular: {exc}")
    q = float(nu @ cho_solve(factor, nu))
    if not math.isfinite(q):
        raise NumericalError("Mahalanobis distance is not finite")
    return math.sqrt(max(q, 0.0))


def cosine_similarity(a, b) -> float:
    """a.b / (|a||b|), clamped into [-1, 1]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise UndefinedSimilarityError("cosine similarity of a zero vector")
    return min(max(float(a @ b) / (na * nb), -1.0), 1.0)


def hybrid_likelihood(l_box: float, l_roi: float | None, l_prop: float | None,
                      cfg: TrackerConfig) -> float:
    """Combined association likelihood; absent feature terms contribute zero."""
    l = float(l_box)
    if l_roi is not None:
        l += cfg.alpha * l_roi
    if l_prop is not None:
        l += cfg.beta * l_prop
    return l


def _gate_distance(gate_prob: float) -> float:
    return math.sqrt(chi2.ppf(gate_prob, STATE_DIM))


def _innovation(comp: BernoulliComponent, z: Measurement, cfg: TrackerConfig):
    nu = z.vector - comp.state.mean
    nu[YAW_IDX] = wrap_angle(nu[YAW_IDX])
    S = comp.state.cov + np.diag(cfg.measurement_noise)
    return nu, 0.5 * (S + S.T)


def gate(comp: BernoulliComponent, z: Measurement, cfg: TrackerConfig) -> bool:
    """Feasibility test: Mahalanobis distance within the chi-square gate.

    The boundary is closed (distance exactly at the gate is feasible);
    gate_prob = 1 disables gating entirely.
    """
    if cfg.gate_prob >= 1.0:
        return True
    nu, S = _innovation(comp, z, cfg)
    return mahalanobis(nu, S) <= _gate_distance(cfg.gate_prob)


# ---------------------------------------------------------------------------
# Unscented Kalman filter


def _safe_cholesky(mat: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * max(1.0, float(np.trace(mat)) / mat.shape[0])
        try:
            return np.linalg.cholesky(mat + jitter * np.eye(mat.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"covariance square root failed: {exc}")


def _sigma_points(mean: np.ndarray, cov: np.ndarray, cfg: TrackerConfig):
    """Scaled symmetric sigma points with mean/covariance weights."""
    n = mean.size
    lam = cfg.sigma_spread ** 2 * (n + cfg.sigma_tertiary) - n
    scale = n + lam
    root = _safe_cholesky(scale * cov)
    pts = np.empty((2 * n + 1, n))
    pts[0] = mean
    pts[1:n + 1] = mean + root.T
    pts[n + 1:] = mean - root.T
    wm = np.full(2 * n + 1, 1.0 / (2.0 * scale))
    wc = wm.copy()
    wm[0] = lam / scale
    wc[0] = lam / scale + (1.0 - cfg.sigma_spread ** 2 + cfg.sigma_secondary)
    return pts, wm, wc


def _points_mean(pts: np.ndarray, wm: np.ndarray) -> np.ndarray:
    """Weighted sigma-point mean; yaw averaged circularly."""
    m = wm @ pts
    m[YAW_IDX] = math.atan2(float(wm @ np.sin(pts[:, YAW_IDX])),
                            float(wm @ np.cos(pts[:, YAW_IDX])))
    return m


def _points_spread(pts: np.ndarray, mean: np.ndarray) -> np.ndarray:
    d = pts - mean
    d[:, YAW_IDX] = [wrap_angle(x) for x in d[:, YAW_IDX]]
    return d


def ukf_predict(comp: BernoulliComponent, dt: float, cfg: TrackerConfig) -> BernoulliComponent:
    """Propagate one component by dt seconds.

    Motion is planar constant velocity (x += vx dt, y += vy dt) with a
    random walk on z, yaw and velocity; existence decays by the survival
    probability. Process noise scales linearly with dt.
    """
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    st = comp.state
    pts, wm, wc = _sigma_points(st.mean, st.cov, cfg)
    pts[:, 0] += pts[:, 4] * dt
    pts[:, 1] += pts[:, 5] * dt
    mean = _points_mean(pts, wm)
    d = _points_spread(pts, mean)
    cov = (wc[:, None] * d).T @ d + np.diag(cfg.process_noise) * dt
    state = KinematicState(mean=mean, cov=0.5 * (cov + cov.T), dims=st.dims)
    return replace(comp, r=cfg.p_survive * comp.r, state=state)


def ukf_update(comp: BernoulliComponent, z: Measurement, cfg: TrackerConfig):
    """Measurement update of one component; all six state components observed.

    Returns (updated component, Gaussian log-likelihood of the innovation).
    Existence probability is left untouched; the association layer owns it.
    Dims and the feature memories advance by their exponential averages.
    """
    st = comp.state
    pts, wm, wc = _sigma_points(st.mean, st.cov, cfg)
    zmean = _points_mean(pts, wm)
    dz = _points_spread(pts, zmean)
    S = (wc[:, None] * dz).T @ dz + np.diag(cfg.measurement_noise)
    S = 0.5 * (S + S.T)
    try:
        factor = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"innovation covariance is singular: {exc}")
    nu = z.vector - zmean
    nu[YAW_IDX] = wrap_angle(nu[YAW_IDX])
    cross = (wc[:, None] * dz).T @ dz  # state/measurement cross covariance
    gain = cho_solve(factor, cross.T).T
    mean = st.mean + gain @ nu
    mean[YAW_IDX] = wrap_angle(mean[YAW_IDX])
    cov = st.cov - gain @ S @ gain.T
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    loglik = -0.5 * (float(nu @ cho_solve(factor, nu))
                     + logdet + STATE_DIM * math.log(2.0 * math.pi))
    dims = cfg.dims_decay * st.dims + (1.0 - cfg.dims_decay) * z.dims
    state = KinematicState(mean=mean, cov=0.5 * (cov + cov.T), dims=dims)
    updated = replace(
        comp,
        state=state,
        roi_memory=_advance_memory(comp.roi_memory, z.roi_feature, cfg.feature_decay),
        query_memory=_advance_memory(comp.query_memory, z.query_feature, cfg.feature_decay),
        hits=comp.hits + 1,
        misses=0,
        score=cfg.dims_decay * comp.score + (1.0 - cfg.dims_decay) * z.score,
    )
    return updated, loglik


def _advance_memory(mem, feat, decay):
    f = _unit_or_none(feat)
    if f is None:
        return mem
    if mem is None:
        return f
    mixed = decay * mem + (1.0 - decay) * f
    n = float(np.linalg.norm(mixed))
    if n < 1e-12:
        return mem
    return mixed / n


# ---------------------------------------------------------------------------
# Multi-Bernoulli mixture update


def _birth_component(z: Measurement, label: int, event: int,
                     cfg: TrackerConfig) -> BernoulliComponent:
    state = KinematicState(mean=z.vector.copy(),
                           cov=np.diag(cfg.birth_noise),
                           dims=z.dims.copy())
    return BernoulliComponent(
        r=min(max(z.score, 0.05), 0.95),
        state=state,
        label=label,
        roi_memory=_unit_or_none(z.roi_feature),
        query_memory=_unit_or_none(z.query_feature),
        hits=1,
        misses=0,
        class_name=z.class_name,
        score=z.score,
        last_event=event,
    )


def _feature_terms(comp: BernoulliComponent, z: Measurement, cfg: TrackerConfig):
    l_roi = l_prop = None
    if cfg.alpha != 0.0 and comp.roi_memory is not None and z.roi_feature is not None:
        try:
            l_roi = cosine_similarity(comp.roi_memory, z.roi_feature)
        except UndefinedSimilarityError:
            l_roi = None
    if cfg.beta != 0.0 and comp.query_memory is not None and z.query_feature is not None:
        try:
            l_prop = cosine_similarity(comp.query_memory, z.query_feature)
        except UndefinedSimilarityError:
            l_prop = None
    return l_roi, l_prop


def mbm_update(state: MBMState, frame, cfg: TrackerConfig) -> MBMState:
    """Advance the mixture by one frame of detections.

    Predicts every live component, expands each global hypothesis through a
    ranked assignment over (tracks x measurements) with missed-detection and
    birth outcomes, renormalizes the hypothesis weights, and prunes. Frames
    must arrive in strictly increasing timestamp order.
    """
    ts = float(frame.timestamp)
    if state.last_timestamp is not None and ts <= state.last_timestamp:
        raise SequenceOrderError(
            f"frame timestamp {ts} not after previous {state.last_timestamp}")
    dt = None if state.last_timestamp is None else ts - state.last_timestamp

    predicted = {}
    for cid, comp in state.components.items():
        predicted[cid] = ukf_predict(comp, dt, cfg) if dt is not None else comp

    measurements = [measurement_from_detection(d) for d in frame.detections]
    n_meas = len(measurements)
    births = {j: _birth_component(z, state.next_label + j, j, cfg)
              for j, z in enumerate(measurements)}

    new_components = {}
    key_to_cid = {}
    next_cid = state.next_component

    def register(key, comp):
        nonlocal next_cid
        cid = key_to_cid.get(key)
        if cid is None:
            cid = next_cid
            next_cid += 1
            key_to_cid[key] = cid
            new_components[cid] = comp
        return cid

    pair_cache = {}

    def detected(cid, j):
        """Posterior variant of component cid updated with measurement j."""
        key = (cid, j)
        if key not in pair_cache:
            comp, z = predicted[cid], measurements[j]
            if not gate(comp, z, cfg):
                pair_cache[key] = None
            else:
                upd, ll = ukf_update(comp, z, cfg)
                l_roi, l_prop = _feature_terms(comp, z, cfg)
                pair_cache[key] = (replace(upd, r=1.0, last_event=j),
                                   hybrid_likelihood(ll, l_roi, l_prop, cfg))
        return pair_cache[key]

    dist_cache = {}

    def distance(cid, j):
        key = (cid, j)
        if key not in dist_cache:
            nu, S = _innovation(predicted[cid], measurements[j], cfg)
            dist_cache[key] = mahalanobis(nu, S)
        return dist_cache[key]

    missed_cache = {}

    def missed(cid):
        if cid not in missed_cache:
            comp = predicted[cid]
            denom = max(1.0 - comp.r * cfg.p_detect, 1e-300)
            missed_cache[cid] = replace(comp,
                                        r=min(comp.r * (1.0 - cfg.p_detect) / denom, 1.0),
                                        misses=comp.misses + 1,
                                        last_event=None)
        return missed_cache[cid]

    parents = state.hypotheses or [GlobalHypothesis(weight=1.0, tracks={})]
    gate_d = _gate_distance(cfg.gate_prob) if cfg.gate_prob < 1.0 else 1e3
    log_clutter = math.log(cfg.clutter_density)

    children = []
    for parent in parents:
        labels = sorted(parent.tracks)
        cids = [parent.tracks[lab] for lab in labels]
        n_t = len(labels)
        cost = np.full((n_meas, n_t + n_meas), np.inf)
        miss_fold = 0.0
        for col, cid in enumerate(cids):
            comp = predicted[cid]
            if cfg.deterministic:
                for j in range(n_meas):
                    d = distance(cid, j)
                    if d <= gate_d:
                        cost[j, col] = d
                continue
            rpd = comp.r * cfg.p_detect
            log_miss = math.log(max(1.0 - rpd, 1e-300))
            miss_fold += log_miss
            if rpd <= 0.0:
                continue
            log_rpd = math.log(rpd)
            for j in range(n_meas):
                res = detected(cid, j)
                if res is not None:
                    cost[j, col] = -(res[1] + log_rpd) + log_miss
        for j in range(n_meas):
            cost[j, n_t + j] = gate_d if cfg.deterministic else -log_clutter

        budget = max(1, math.ceil(cfg.max_hypotheses * parent.weight))
        log_parent = math.log(max(parent.weight, 1e-300))
        for sol in murty_kbest(cost, budget):
            tracks = {}
            taken = set()
            for j, col in sol.pairs:
                if col < n_t:
                    # The distance gate and gate() agree, so this pair is
                    # never gated out of the update cache.
                    comp_upd, _ = detected(cids[col], j)
                    tracks[labels[col]] = register(("det", cids[col], j), comp_upd)
                    taken.add(col)
                else:
                    bj = col - n_t
                    tracks[births[bj].label] = register(("birth", bj), births[bj])
            for col in range(n_t):
                if col not in taken:
                    tracks[labels[col]] = register(("miss", cids[col]), missed(cids[col]))
            children.append((log_parent - sol.total + miss_fold, tracks))

    logs = np.array([lw for lw, _ in children])
    norm = logs - _logsumexp(logs)
    hypotheses = [GlobalHypothesis(weight=float(np.exp(lw)), tracks=tracks)
                  for lw, (_, tracks) in zip(norm, children)]

    out = MBMState(components=new_components,
                   hypotheses=hypotheses,
                   next_label=state.next_label + n_meas,
                   next_component=next_cid,
                   last_timestamp=ts)
    return prune_and_cap(out, cfg)


def _logsumexp(logs: np.ndarray) -> float:
    m = float(np.max(logs))
    return m + math.log(float(np.sum(np.exp(logs - m))))


def prune_and_cap(state: MBMState, cfg: TrackerConfig) -> MBMState:
    """Prune low-weight hypotheses and low-existence components, cap at K.

    Hypotheses below hyp_prune_ratio of the maximum weight are dropped and
    the rest renormalized; components with r below bernoulli_prune_r leave
    every hypothesis; identical surviving hypotheses merge by weight sum;
    components referenced by no hypothesis are discarded. Track labels are
    never reused.
    """
    if not state.hypotheses:
        return state
    wmax = max(h.weight for h in state.hypotheses)
    kept = [h for h in state.hypotheses if h.weight >= wmax * cfg.hyp_prune_ratio]
    kept.sort(key=lambda h: (-h.weight, h.signature()))
    kept = kept[:cfg.max_hypotheses]

    merged = {}
    order = []
    for h in kept:
        tracks = {lab: cid for lab, cid in h.tracks.items()
                  if state.components[cid].r >= cfg.bernoulli_prune_r}
        sig = tuple(sorted(tracks.items()))
        if sig in merged:
            merged[sig][0] += h.weight
        else:
            merged[sig] = [h.weight, tracks]
            order.append(sig)

    total = sum(merged[sig][0] for sig in order)
    hypotheses = [GlobalHypothesis(weight=merged[sig][0] / total, tracks=merged[sig][1])
                  for sig in order]
    referenced = {cid for h in hypotheses for cid in h.tracks.values()}
    components = {cid: comp for cid, comp in state.components.items()
                  if cid in referenced}
    return MBMState(components=components,
                    hypotheses=hypotheses,
                    next_label=state.next_label,
                    next_component=state.next_component,
                    last_timestamp=state.last_timestamp)


def extract_tracks(state: MBMState, cfg: TrackerConfig) -> list:
    """Emit track estimates from the highest-weight hypothesis.

    Every component with existence at or above extract_r yields one record:
    its label, a box rebuilt from the filtered state and smoothed dims, and
    score = r x running class score.
    """
    if not state.hypotheses:
        return []
    best = min(state.hypotheses, key=lambda h: (-h.weight, h.signature()))
    out = []
    for label in sorted(best.tracks):
        comp = state.components[best.tracks[label]]
        if comp.r < cfg.extract_r:
            continue
        mean, dims = comp.state.mean, comp.state.dims
        box = BoxState(cx=float(mean[0]), cy=float(mean[1]), cz=float(mean[2]),
                       w=float(dims[0]), l=float(dims[1]), h=float(dims[2]),
                       cos_yaw=math.cos(mean[YAW_IDX]), sin_yaw=math.sin(mean[YAW_IDX]),
                       vx=float(mean[4]), vy=float(mean[5]))
        out.append(TrackOutput(track_id=label, box=box,
                               class_name=comp.class_name,
                               score=comp.r * comp.score))
    return out


class MBMTracker:
    """Sequential per-sequence tracking state machine.

    One instance tracks one sequence; feed frames in timestamp order via
    step(). Distinct sequences need distinct instances.
    """

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config if config is not None else TrackerConfig()
        self.state = MBMState()

    def step(self, frame) -> list:
        """Ingest one frame and return the current track estimates."""
        self.state = mbm_update(self.state, frame, self.config)
        return extract_tracks(self.state, self.config)
