"""Density-based clustering of pose hypotheses into final predictions.

Grid decodings emit several hypotheses per object (duplicated cells,
adjacent ranks, segmentation pixels); clustering with the symmetry-aware
pose distance merges them. Semantics follow DBSCAN: a hypothesis is a
core point when at least min_points hypotheses (itself included) lie
within eps, clusters are the connected components of core points, and a
non-core point joins the cluster of the most confident core that
reaches it. With min_points = 1 every point is core, so nothing is ever
dropped as noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .codecs import PoseHypothesis
from .geometry import ObjectModel, Pose, average_poses, pose_distance_matrix


@dataclass(frozen=True)
class ClusterParams:
    eps: float
    min_points: int = 1
    confidence_threshold: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.eps) and self.eps > 0):
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.min_points < 1:
            raise ValueError(f"min_points must be >= 1, got {self.min_points}")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError(
                f"confidence_threshold must be in [0, 1], got {self.confidence_threshold}"
            )

    @classmethod
    def for_model(cls, model: ObjectModel, min_points: int = 1,
                  confidence_threshold: float = 0.0) -> "ClusterParams":
        """Default radius: one tenth of the object diameter."""
        return cls(0.1 * model.diameter, min_points, confidence_threshold)


@dataclass(frozen=True)
class FinalPrediction:
    """One object estimate: averaged pose, best member confidence, support."""

    pose: Pose
    confidence: float
    support: int

    def __post_init__(self) -> None:
        if self.support < 1:
            raise ValueError(f"support must be >= 1, got {self.support}")


def _canonical_quat(pose: Pose) -> np.ndarray:
    q = pose.rotation.q
    for component in q:
        if component != 0.0:
            return q if component > 0.0 else -q
    return q


def _sort_key(hyp: PoseHypothesis):
    return (
        -hyp.confidence,
        tuple(hyp.pose.translation),
        tuple(_canonical_quat(hyp.pose)),
        hyp.cell,
    )


def cluster_members(
    hypotheses: Sequence[PoseHypothesis],
    params: ClusterParams,
    model: ObjectModel,
) -> list:
    """Clusters as lists of indices into `hypotheses`; order-independent.

    Hypotheses below the confidence threshold are ignored; non-core
    points out of reach of every core are dropped as noise (only
    possible when min_points > 1).
    """
    kept = [i for i, h in enumerate(hypotheses)
            if h.confidence >= params.confidence_threshold]
    # canonical processing order makes the result independent of input order
    kept.sort(key=lambda i: (_sort_key(hypotheses[i]), i))
    if not kept:
        return []

    # collapse bit-identical poses first; duplicates are free support
    groups: dict = {}
    group_order = []
    for idx in kept:
        h = hypotheses[idx]
        key = (h.pose.translation.tobytes(), _canonical_quat(h.pose).tobytes())
        if key not in groups:
            groups[key] = []
            group_order.append(key)
        groups[key].append(idx)
    uniques = [groups[key] for key in group_order]
    poses = [hypotheses[members[0]].pose for members in uniques]
    sizes = np.array([len(members) for members in uniques])

    dist = pose_distance_matrix(poses, poses, model)
    within = dist <= params.eps
    neighbour_count = (within * sizes[None, :]).sum(axis=1)
    core = neighbour_count >= params.min_points

    n = len(uniques)
    labels = np.full(n, -1)
    current = 0
    for start in range(n):
        if not core[start] or labels[start] >= 0:
            continue
        stack = [start]
        labels[start] = current
        while stack:
            at = stack.pop()
            for nb in np.nonzero(within[at] & core)[0]:
                if labels[nb] < 0:
                    labels[nb] = current
                    stack.append(nb)
        current += 1

    for idx in range(n):  # border points: most confident reaching core wins
        if core[idx] or not ((within[idx] & core).any()):
            continue
        reach = np.nonzero(within[idx] & core)[0]
        best = max(
            reach,
            key=lambda r: (
                hypotheses[uniques[r][0]].confidence,
                -r,
            ),
        )
        labels[idx] = labels[best]

    clusters = []
    for label in range(current):
        members = []
        for idx in np.nonzero(labels == label)[0]:
            members.extend(uniques[idx])
        clusters.append(members)
    return clusters


def cluster(
    hypotheses: Sequence[PoseHypothesis],
    params: ClusterParams,
    model: ObjectModel,
) -> list:
    """Merge hypotheses into one confidence-weighted prediction per cluster."""
    predictions = []
    for members in cluster_members(hypotheses, params, model):
        hyps = [hypotheses[i] for i in members]
        poses = [h.pose for h in hyps]
        weights = [h.confidence for h in hyps]
        if sum(weights) <= 0.0:
            weights = [1.0] * len(hyps)
        pose = average_poses(poses, weights, model)
        predictions.append(
            FinalPrediction(
                pose=pose,
                confidence=max(h.confidence for h in hyps),
                support=len(hyps),
            )
        )
    predictions.sort(
        key=lambda p: (
            -p.confidence,
            -p.support,
            tuple(p.pose.translation),
            tuple(_canonical_quat(p.pose)),
        )
    )
    return predictions
