"""Set-prediction matching costs and optimal assignment solvers.

The bipartite solvers return matchings as sorted (row, col) pair lists.
Ties between equal-cost matchings are broken lexicographically on the
pair list, which makes every caller deterministic. ``murty_kbest``
enumerates complete assignments in nondecreasing cost order (Murty's
partitioning over scipy's linear_sum_assignment); ``hungarian`` is its
k=1 case.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cascade import DEFAULT_REGION, DetectionRegion, normalize_box
from .errors import InfeasibleMatrixError, ValidationError
from .geometry import BoxState

PROB_CLAMP = 1e-7


@dataclass
class CostMatrix:
    """A rows x cols cost table with optional per-cell infeasibility flags."""

    costs: np.ndarray
    feasible: np.ndarray | None = None

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.costs, dtype=float))
        if c.ndim != 2:
            raise ValidationError(f"cost matrix must be 2-D, got shape {c.shape}")
        if self.feasible is None:
            mask = np.isfinite(c)
        else:
            mask = np.asarray(self.feasible, dtype=bool)
            if mask.shape != c.shape:
                raise ValidationError(
                    f"feasibility mask shape {mask.shape} != costs shape {c.shape}")
            if not np.all(np.isfinite(c[mask])):
                raise ValidationError("feasible cells must be finite")
        self.costs = c
        self.feasible = mask

    @property
    def n_rows(self) -> int:
        return self.costs.shape[0]

    @property
    def n_cols(self) -> int:
        return self.costs.shape[1]

    def dense(self) -> np.ndarray:
        """Costs with infeasible cells replaced by +inf."""
        out = np.where(self.feasible, self.costs, np.inf)
        return out.astype(float)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the matching cost: focal classification + L1 regression."""

    w_cls: float = 2.0
    w_reg: float = 0.25
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    def __post_init__(self):
        for name in ("w_cls", "w_reg", "focal_alpha", "focal_gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be nonnegative, got {v}")


@dataclass(frozen=True)
class Assignment:
    """A complete matching: sorted (row, col) pairs plus its total cost."""

    pairs: tuple
    total: float


def focal_loss(p: float, is_positive: bool, alpha: float = 0.25,
               gamma: float = 2.0) -> float:
    """Hard-example-weighted cross entropy of one probability.

    p is clamped into [1e-7, 1 - 1e-7]; the positive branch uses p_t = p
    and weight alpha, the negative branch p_t = 1 - p and weight 1 - alpha.
    """
    p = min(max(float(p), PROB_CLAMP), 1.0 - PROB_CLAMP)
    if is_positive:
        p_t, a_t = p, alpha
    else:
        p_t, a_t = 1.0 - p, 1.0 - alpha
    return -a_t * (1.0 - p_t) ** gamma * math.log(p_t)


def l1_box_cost(pred: BoxState, gt: BoxState,
                region: DetectionRegion = DEFAULT_REGION) -> float:
    """Sum of absolute differences over the serialized 10-parameter vectors.

    Centers are normalized into the detection region first so position
    errors are commensurate with the unit-scale remaining parameters.
    """
    a = normalize_box(pred, region).to_array()
    b = normalize_box(gt, region).to_array()
    return float(np.sum(np.abs(a - b)))


def build_cost_matrix(preds, gts, weights: LossWeights = LossWeights(),
                      region: DetectionRegion = DEFAULT_REGION) -> CostMatrix:
    """Matching cost of every (prediction, ground truth) pair.

    Cell (i, j) combines the positive-class focal cost of prediction i's
    score for ground truth j's class with the weighted L1 box cost.
    """
    if len(preds) == 0:
        raise ValidationError("build_cost_matrix needs at least one prediction")
    costs = np.zeros((len(preds), len(gts)))
    for i, (box_i, scores_i) in enumerate(preds):
        scores_i = np.asarray(scores_i, dtype=float)
        for j, (box_j, class_j) in enumerate(gts):
            cls_cost = focal_loss(scores_i[class_j], True,
                                  weights.focal_alpha, weights.focal_gamma)
            reg_cost = l1_box_cost(box_i, box_j, region)
            costs[i, j] = weights.w_cls * cls_cost + weights.w_reg * reg_cost
    return CostMatrix(costs)


def _as_dense(costs) -> np.ndarray:
    if isinstance(costs, CostMatrix):
        return costs.dense()
    return CostMatrix(np.asarray(costs, dtype=float)).dense()


def _solve_dense(dense: np.ndarray):
    """One linear-sum-assignment solve; None when no feasible matching exists."""
    try:
        rows, cols = linear_sum_assignment(dense)
    except ValueError:
        return None
    total = float(dense[rows, cols].sum())
    if not math.isfinite(total):
        return None
    return tuple(sorted(zip(rows.tolist(), cols.tolist()))), total


def murty_kbest(costs, k: int) -> list:
    """The k lowest-cost complete assignments, in nondecreasing cost order.

    Complete means min(n_rows, n_cols) pairs. Equal-cost assignments are
    ordered by their sorted pair lists; if fewer than k assignments exist,
    all of them are returned.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    dense = _as_dense(costs)
    root = _solve_dense(dense)
    if root is None:
        raise InfeasibleMatrixError(
            f"no feasible complete assignment for a {dense.shape[0]}x{dense.shape[1]} matrix")

    counter = itertools.count()
    root_pairs, root_total = root
    # Heap of subproblems keyed by (optimal cost, pair list) so equal-cost
    # solutions pop in a deterministic order.
    heap = [(root_total, root_pairs, next(counter), dense, ())]
    results = []
    while heap:
        total, pairs, _, matrix, forced = heapq.heappop(heap)
        if len(results) >= k and total > results[k - 1].total:
            break
        results.append(Assignment(pairs=pairs, total=total))
        # Partition the remaining solution space: child i forbids free pair
        # i and forces all free pairs before it.
        forced_set = set(forced)
        free = [p for p in pairs if p not in forced_set]
        current = matrix
        for idx, (r, c) in enumerate(free):
            child = current.copy()
            child[r, c] = np.inf
            sol = _solve_dense(child)
            if sol is not None:
                child_forced = forced + tuple(free[:idx])
                heapq.heappush(
                    heap, (sol[1], sol[0], next(counter), child, child_forced))
            if idx < len(free) - 1:
                # Force (r, c) for the later siblings: kill the rest of its
                # row and column.
                if current is matrix:
                    current = matrix.copy()
                kept = current[r, c]
                current[r, :] = np.inf
                current[:, c] = np.inf
                current[r, c] = kept
    results.sort(key=lambda a: (a.total, a.pairs))
    return results[:k]


def hungarian(costs) -> Assignment:
    """Minimum-total-cost complete matching (ties broken lexicographically)."""
    return murty_kbest(costs, 1)[0]


def set_prediction_loss(preds, gts, weights: LossWeights = LossWeights(),
                        region: DetectionRegion = DEFAULT_REGION):
    """Matched detection loss: optimal assignment, then focal + L1 totals.

    Every prediction contributes focal terms over all classes (positive on
    its matched ground truth class, negative elsewhere); the L1 term sums
    over matched pairs only. Returns (total loss, matching pairs).
    """
    if len(preds) == 0:
        raise ValidationError("set_prediction_loss needs at least one prediction")
    if len(gts) == 0:
        matching = []
    else:
        matching = list(hungarian(build_cost_matrix(preds, gts, weights, region)).pairs)
    matched_class = {i: gts[j][1] for i, j in matching}
    cls_total = 0.0
    for i, (_, scores_i) in enumerate(preds):
        scores_i = np.asarray(scores_i, dtype=float)
        positive = matched_class.get(i)
        for c, p in enumerate(scores_i):
            cls_total += focal_loss(p, c == positive,
                                    weights.focal_alpha, weights.focal_gamma)
    reg_total = sum(l1_box_cost(preds[i][0], gts[j][0], region)
                    for i, j in matching)
    total = weights.w_cls * cls_total + weights.w_reg * reg_total
    return total, matching
