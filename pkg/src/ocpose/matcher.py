"""Optimal-transport matching of detections to ground truth and the OCpose score.

Transport network for one image with ``E`` detections, ``G`` non-crowd GT
entries and ``C`` crowd regions:

* supplies: every detection (1) and one dummy detection (``G + E*C``);
* demands: every non-crowd GT (1), every crowd (``E``), one dummy GT (``E``);
* arc costs: detection -> GT or crowd ``1 - OKS``; detection -> dummy GT 1;
  dummy detection -> non-crowd GT 1; dummy detection -> crowd or dummy GT 0.

OCpose is the mean cost over the unit pairs of the optimal plan, leaving out
the zero-cost absorption flow from the dummy detection.

Crowd and dummy-GT capacities never bind, so every detection independently
picks a GT, its cheapest crowd, or the dummy GT. That collapses the network
to a square assignment of size ``E + G`` which :func:`solve_transport` hands
to the Hungarian kernel.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dataset_io import GTKind, Scene, SigmaTable
from .errors import OracleLimitError
from .similarity import oks_pose_matrix, region_oks_batch


@dataclass(frozen=True)
class CostMatrix:
    """Rows are detections. Columns hold non-crowd GTs first, then crowds."""

    values: np.ndarray
    n_noncrowd: int
    n_crowd: int
    gt_index: tuple[int, ...] = ()  # column -> position in scene.gts

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.n_noncrowd + self.n_crowd:
            raise ValueError(f"cost matrix shape {values.shape} does not match {self.n_noncrowd}+{self.n_crowd} columns")
        if not np.isfinite(values).all():
            raise ValueError("cost matrix has non-finite entries")
        object.__setattr__(self, "values", values)
        if not self.gt_index:
            object.__setattr__(self, "gt_index", tuple(range(values.shape[1])))

    @property
    def n_det(self) -> int:
        return self.values.shape[0]

    @property
    def noncrowd(self) -> np.ndarray:
        return self.values[:, : self.n_noncrowd]

    @property
    def crowd(self) -> np.ndarray:
        return self.values[:, self.n_noncrowd :]

    def head(self, n_det: int) -> CostMatrix:
        """The first ``n_det`` rows; with score-sorted rows this is a threshold cut."""
        return CostMatrix(self.values[:n_det], self.n_noncrowd, self.n_crowd, self.gt_index)


@dataclass(frozen=True)
class MatchPair:
    det: int | None  # None: dummy detection
    gt: int | None  # cost-matrix column; None: dummy GT
    cost: float
    mass: int = 1
    crowd: bool = False

    @property
    def is_absorption(self) -> bool:
        return self.det is None and (self.gt is None or self.crowd)


@dataclass
class MatchPlan:
    pairs: list[MatchPair]
    pi_one: list[MatchPair] = field(default_factory=list)
    total_cost: float = 0.0  # objective value of the whole plan
    pair_cost_sum: float = 0.0  # sum of costs over pi_one

    @property
    def num_pairs(self) -> int:
        return len(self.pi_one)

    @property
    def ocpose(self) -> float:
        return self.pair_cost_sum / len(self.pi_one) if self.pi_one else 0.0

    @property
    def false_positives(self) -> int:
        return sum(p.det is not None and p.gt is None for p in self.pairs)

    @property
    def false_negatives(self) -> int:
        return sum(p.det is None and p.gt is not None and not p.crowd for p in self.pairs)


def build_cost_matrix(
    scene: Scene, sigmas: SigmaTable, region_mode: str = "mask", bbox_expand: float = 1.0
) -> CostMatrix:
    dets = scene.detections
    noncrowd = [i for i, g in enumerate(scene.gts) if g.kind is not GTKind.CROWD]
    crowds = [i for i, g in enumerate(scene.gts) if g.kind is GTKind.CROWD]
    order = noncrowd + crowds
    values = np.ones((len(dets), len(order)))
    if dets:
        det_kpts = np.stack([d.keypoints for d in dets])
        poses = [c for c, i in enumerate(order) if scene.gts[i].kind is GTKind.POSE]
        if poses:
            gts = [scene.gts[order[c]] for c in poses]
            oks = oks_pose_matrix(
                det_kpts, np.stack([g.keypoints for g in gts]), np.array([g.scale_s for g in gts]), sigmas
            )
            values[:, poses] = 1.0 - oks
        for c, i in enumerate(order):
            g = scene.gts[i]
            if g.kind is not GTKind.POSE:
                values[:, c] = 1.0 - region_oks_batch(det_kpts, g, sigmas, region_mode, bbox_expand)
    np.clip(values, 0.0, 1.0, out=values)
    return CostMatrix(values, len(noncrowd), len(crowds), tuple(order))


def _plan_from_choices(costs: CostMatrix, choice: list[int | None], exclude_crowd_matches: bool) -> MatchPlan:
    """Assemble a plan; ``choice[i]`` is a column or None (dummy GT) for detection i."""
    g, c, e = costs.n_noncrowd, costs.n_crowd, costs.n_det
    pairs: list[MatchPair] = []
    taken = set()
    crowd_load = [0] * c
    n_dummy_gt = 0
    for i, j in enumerate(choice):
        if j is None:
            pairs.append(MatchPair(i, None, 1.0))
            n_dummy_gt += 1
        elif j < g:
            assert j not in taken, "non-crowd GT matched twice"
            taken.add(j)
            pairs.append(MatchPair(i, j, float(costs.values[i, j])))
        else:
            crowd_load[j - g] += 1
            pairs.append(MatchPair(i, j, float(costs.values[i, j]), crowd=True))
    for j in range(g):
        if j not in taken:
            pairs.append(MatchPair(None, j, 1.0))
    for k in range(c):
        if e - crowd_load[k] > 0:
            pairs.append(MatchPair(None, g + k, 0.0, mass=e - crowd_load[k], crowd=True))
    if e - n_dummy_gt > 0:
        pairs.append(MatchPair(None, None, 0.0, mass=e - n_dummy_gt))

    pi_one = [p for p in pairs if not p.is_absorption and not (exclude_crowd_matches and p.crowd)]
    total = float(sum(p.cost * p.mass for p in pairs))
    pair_cost_sum = float(sum(p.cost for p in pi_one))
    return MatchPlan(pairs, pi_one, total, pair_cost_sum)


def solve_transport(costs: CostMatrix, exclude_crowd_matches: bool = False) -> MatchPlan:
    """Exact minimum-cost integral plan."""
    e, g = costs.n_det, costs.n_noncrowd
    # cheapest way out for each detection that does not take a non-crowd GT
    if costs.n_crowd and e:
        best_crowd = costs.crowd.argmin(axis=1)
        best_crowd_cost = costs.crowd[np.arange(e), best_crowd]
        use_crowd = best_crowd_cost < 1.0  # on a tie the dummy GT wins: count it as a false positive
        exit_cost = np.where(use_crowd, best_crowd_cost, 1.0)
    else:
        best_crowd = np.zeros(e, np.int64)
        use_crowd = np.zeros(e, bool)
        exit_cost = np.ones(e)

    n = e + g
    square = np.zeros((n, n))
    square[:e, :g] = costs.noncrowd
    square[:e, g:] = exit_cost[:, None]
    square[e:, :g] = 1.0
    assignment = kernels.linear_assignment(square)

    choice: list[int | None] = []
    for i in range(e):
        j = int(assignment[i])
        if j < g and not (costs.values[i, j] >= 1.0 and use_crowd[i] and exit_cost[i] <= 0.0):
            choice.append(j)
        elif j < g:
            # cost-equal alternative: crowd absorbs the detection, the GT goes unmatched
            choice.append(g + int(best_crowd[i]))
        elif use_crowd[i]:
            choice.append(g + int(best_crowd[i]))
        else:
            choice.append(None)
    plan = _plan_from_choices(costs, choice, exclude_crowd_matches)
    assert abs(plan.total_cost - float(square[np.arange(n), assignment].sum())) < 1e-9 * max(1, n)
    return plan


ORACLE_LIMIT = 6


def brute_force_oracle(costs: CostMatrix, exclude_crowd_matches: bool = False) -> MatchPlan:
    """Enumerate every integral plan and return a cheapest one.

    Each detection picks a non-crowd GT (at most once per GT), a crowd, or the
    dummy GT; leftover non-crowd GTs go to the dummy detection. Ties go to the
    lexicographically smallest choice vector (columns ascending, dummy last).
    """
    e, g, c = costs.n_det, costs.n_noncrowd, costs.n_crowd
    if e > ORACLE_LIMIT or g + c > ORACLE_LIMIT:
        raise OracleLimitError(f"oracle handles at most {ORACLE_LIMIT} detections and GTs, got {e}x{g + c}")
    options = g + c + 1  # last option = dummy GT
    if e == 0:
        return _plan_from_choices(costs, [], exclude_crowd_matches)
    combos = np.array(list(itertools.product(range(options), repeat=e)), dtype=np.int64)
    if g:
        hits = np.stack([(combos == j).sum(axis=1) for j in range(g)], axis=1)
        combos = combos[(hits <= 1).all(axis=1)]
        matched = (combos < g).sum(axis=1)
    else:
        matched = np.zeros(len(combos), np.int64)
    arc = np.concatenate([costs.values, np.ones((e, 1))], axis=1)
    det_cost = arc[np.arange(e)[None, :], combos].sum(axis=1)
    totals = det_cost + (g - matched)
    best = int(np.argmin(totals))
    choice = [None if j == options - 1 else int(j) for j in combos[best]]
    return _plan_from_choices(costs, choice, exclude_crowd_matches)


@dataclass(frozen=True)
class OCPoseAggregate:
    per_image_mean: float
    pooled: float
    n_images: int  # images that entered the per-image mean
    num_pairs: int
    pair_cost_sum: float


def ocpose_score(plans: list[MatchPlan]) -> OCPoseAggregate:
    """Both aggregations over images: mean of per-image values, and pooled pairs.

    Images with an empty pair set (no detections and no non-crowd GT) are
    left out of the per-image mean.
    """
    if not plans:
        raise ValueError("ocpose_score needs at least one plan")
    values = [p.ocpose for p in plans if p.num_pairs > 0]
    num_pairs = sum(p.num_pairs for p in plans)
    pair_cost_sum = float(sum(p.pair_cost_sum for p in plans))
    mean = float(np.mean(values)) if values else 0.0
    pooled = pair_cost_sum / num_pairs if num_pairs else 0.0
    return OCPoseAggregate(mean, pooled, len(values), num_pairs, pair_cost_sum)
