"""Detection metrics over pose predictions.

Matching is greedy in descending confidence: each prediction claims the
nearest still-open ground-truth object within the correctness radius
(a fraction of the model diameter, measured with the symmetry-aware
pose distance). Objects below the visibility cutoff are not part of the
task; predictions landing only on those are discarded rather than
penalized. Average precision integrates the precision envelope over
recall, all points, no interpolation grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .geometry import ObjectModel, Pose, pose_distance_matrix
from .postprocess import FinalPrediction


class MatchLabel(Enum):
    TRUE_POSITIVE = "tp"
    FALSE_POSITIVE = "fp"
    DISCARDED = "discarded"


@dataclass(frozen=True)
class EvalConfig:
    vis_cutoff: float = 0.5
    radius_frac: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.vis_cutoff <= 1.0:
            raise ValueError(f"vis_cutoff must be in (0, 1], got {self.vis_cutoff}")
        if not (math.isfinite(self.radius_frac) and self.radius_frac > 0):
            raise ValueError(f"radius_frac must be positive, got {self.radius_frac}")


@dataclass(frozen=True)
class MatchResult:
    """Labels are aligned with the prediction input order; `order` lists
    prediction indices in the processing (descending confidence) order."""

    labels: tuple
    pred_gt: tuple
    gt_eligible: tuple
    gt_matched: tuple
    order: tuple

    @property
    def tp_count(self) -> int:
        return sum(1 for l in self.labels if l is MatchLabel.TRUE_POSITIVE)

    @property
    def fp_count(self) -> int:
        return sum(1 for l in self.labels if l is MatchLabel.FALSE_POSITIVE)

    @property
    def discarded_count(self) -> int:
        return sum(1 for l in self.labels if l is MatchLabel.DISCARDED)

    @property
    def eligible_count(self) -> int:
        return sum(1 for e in self.gt_eligible if e)

    @property
    def missed_count(self) -> int:
        return sum(1 for e, m in zip(self.gt_eligible, self.gt_matched) if e and not m)

    def ordered_labels(self) -> list:
        return [self.labels[i] for i in self.order]


def match(
    predictions: Sequence[FinalPrediction],
    ground_truth: Sequence,
    model: ObjectModel,
    config: EvalConfig | None = None,
) -> MatchResult:
    """Greedy confidence-ordered matching of predictions to ground truth.

    `ground_truth` holds (pose, visibility) pairs. A prediction claims
    the nearest unclaimed eligible object within the radius (distance
    ties break toward the lower ground-truth index). Failing that, it is
    discarded when some ignored (sub-cutoff) object lies within the
    radius, and a false positive otherwise.
    """
    cfg = config or EvalConfig()
    preds = list(predictions)
    gt_poses = [pose for pose, _ in ground_truth]
    vis = np.array([float(v) for _, v in ground_truth], dtype=float)
    if vis.size and (np.any(vis < 0.0) or np.any(vis > 1.0)):
        raise ValueError("ground-truth visibility outside [0, 1]")
    eligible = vis >= cfg.vis_cutoff

    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    radius = cfg.radius_frac * model.diameter
    if preds and gt_poses:
        dist = pose_distance_matrix([p.pose for p in preds], gt_poses, model)
    else:
        dist = np.zeros((len(preds), len(gt_poses)))

    labels: list = [None] * len(preds)
    pred_gt = [-1] * len(preds)
    claimed = np.zeros(len(gt_poses), dtype=bool)
    for i in order:
        within = dist[i] <= radius
        open_eligible = within & eligible & ~claimed
        if open_eligible.any():
            candidates = np.nonzero(open_eligible)[0]
            best = int(candidates[np.argmin(dist[i][candidates])])
            claimed[best] = True
            labels[i] = MatchLabel.TRUE_POSITIVE
            pred_gt[i] = best
        elif (within & ~eligible).any():
            labels[i] = MatchLabel.DISCARDED
        else:
            labels[i] = MatchLabel.FALSE_POSITIVE

    return MatchResult(
        labels=tuple(labels),
        pred_gt=tuple(pred_gt),
        gt_eligible=tuple(bool(e) for e in eligible),
        gt_matched=tuple(bool(c) for c in claimed),
        order=tuple(order),
    )


@dataclass(frozen=True)
class PRCurve:
    recalls: np.ndarray
    precisions: np.ndarray
    ap: float

    def __post_init__(self) -> None:
        recalls = np.asarray(self.recalls, dtype=float)
        precisions = np.asarray(self.precisions, dtype=float)
        if recalls.shape != precisions.shape or recalls.ndim != 1:
            raise ValueError("recall and precision arrays must be 1-D and congruent")
        if recalls.size and np.any(np.diff(recalls) < 0):
            raise ValueError("recalls must be non-decreasing")
        if not 0.0 <= self.ap <= 1.0:
            raise ValueError(f"ap must be in [0, 1], got {self.ap}")
        recalls.flags.writeable = False
        precisions.flags.writeable = False
        object.__setattr__(self, "recalls", recalls)
        object.__setattr__(self, "precisions", precisions)


def _tp_flags(labels) -> np.ndarray:
    flags = []
    for label in labels:
        if isinstance(label, MatchLabel):
            if label is MatchLabel.DISCARDED:
                continue
            flags.append(label is MatchLabel.TRUE_POSITIVE)
        elif isinstance(label, (bool, np.bool_)):
            flags.append(bool(label))
        else:
            raise TypeError(f"label must be MatchLabel or bool, got {label!r}")
    return np.asarray(flags, dtype=bool)


def average_precision(labels, gt_count: int) -> PRCurve:
    """PR curve from confidence-ordered labels against `gt_count` objects.

    Discarded labels are dropped. With no objects the AP is 1.0 for an
    empty prediction list and 0.0 otherwise.
    """
    if gt_count < 0:
        raise ValueError(f"gt_count must be >= 0, got {gt_count}")
    flags = _tp_flags(labels)
    if gt_count == 0:
        if flags.any():
            raise ValueError("true-positive label with zero ground-truth objects")
        precisions = np.zeros(flags.size)
        return PRCurve(np.zeros(flags.size), precisions, 1.0 if flags.size == 0 else 0.0)
    if flags.size == 0:
        return PRCurve(np.zeros(0), np.zeros(0), 0.0)
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recalls = tp / gt_count
    precisions = tp / (tp + fp)
    padded_recalls = np.concatenate(([0.0], recalls))
    envelope = np.concatenate(([0.0], precisions))
    envelope = np.maximum.accumulate(envelope[::-1])[::-1]
    ap = float(np.sum(np.diff(padded_recalls) * envelope[1:]))
    return PRCurve(recalls, precisions, min(max(ap, 0.0), 1.0))


@dataclass(frozen=True)
class SceneTruth:
    model: ObjectModel
    ground_truth: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "ground_truth", tuple(self.ground_truth))


@dataclass(frozen=True)
class SceneReport:
    scene_id: str
    curve: PRCurve
    tp: int
    fp: int
    discarded: int
    eligible: int
    missed: int


@dataclass(frozen=True)
class DatasetReport:
    scenes: tuple
    pooled: PRCurve
    per_model: dict
    macro_ap: float


def evaluate_dataset(
    predictions_by_scene: Mapping,
    truth_by_scene: Mapping,
    config: EvalConfig | None = None,
) -> DatasetReport:
    """Match every scene, then pool (confidence, label) pairs into one
    micro-averaged curve overall and per object model; the per-scene
    macro average rides along. Scene id sets must coincide."""
    cfg = config or EvalConfig()
    pred_ids = set(predictions_by_scene)
    truth_ids = set(truth_by_scene)
    if pred_ids != truth_ids:
        missing = sorted(truth_ids - pred_ids, key=str)
        orphaned = sorted(pred_ids - truth_ids, key=str)
        raise ValueError(
            "scene ids do not line up: "
            f"scenes without predictions {missing}, predictions without scenes {orphaned}"
        )

    scene_ids = sorted(truth_ids, key=str)
    reports = []
    # (-confidence, within-scene rank, scene position) keeps equal-confidence
    # records from duplicate scenes adjacent, so pooling is duplication-proof
    records = []
    eligible_total = 0
    eligible_by_model: dict = {}
    records_by_model: dict = {}
    for position, scene_id in enumerate(scene_ids):
        truth = truth_by_scene[scene_id]
        preds = list(predictions_by_scene[scene_id])
        result = match(preds, truth.ground_truth, truth.model, cfg)
        eligible = result.eligible_count
        ordered = result.ordered_labels()
        curve = average_precision(ordered, eligible)
        reports.append(
            SceneReport(
                scene_id=scene_id,
                curve=curve,
                tp=result.tp_count,
                fp=result.fp_count,
                discarded=result.discarded_count,
                eligible=eligible,
                missed=result.missed_count,
            )
        )
        eligible_total += eligible
        name = truth.model.name
        eligible_by_model[name] = eligible_by_model.get(name, 0) + eligible
        rank = 0
        for pred_index, label in zip(result.order, ordered):
            if label is MatchLabel.DISCARDED:
                continue
            record = (
                -preds[pred_index].confidence,
                rank,
                position,
                label is MatchLabel.TRUE_POSITIVE,
            )
            records.append(record)
            records_by_model.setdefault(name, []).append(record)
            rank += 1

    records.sort(key=lambda r: r[:3])
    pooled = average_precision([bool(r[3]) for r in records], eligible_total)
    per_model = {}
    for name in sorted(records_by_model.keys() | eligible_by_model.keys()):
        rows = sorted(records_by_model.get(name, []), key=lambda r: r[:3])
        per_model[name] = average_precision(
            [bool(r[3]) for r in rows], eligible_by_model.get(name, 0)
        )
    macro_ap = (
        float(np.mean([r.curve.ap for r in reports])) if reports else 1.0
    )
    return DatasetReport(
        scenes=tuple(reports),
        pooled=pooled,
        per_model=per_model,
        macro_ap=macro_ap,
    )
