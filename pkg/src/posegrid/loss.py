"""Multi-task training loss over ground-truth pose tensors.

Every cell block carries [presence, visibility, x, y, z, a1, a2, a3].
The presence error is always counted; visibility, position, and
orientation errors only where the ground truth marks an object, with
the position/orientation pair weighted by a visibility ramp so barely
visible instances contribute less.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import FEATURE_SIZE, GridSpec
from .geometry import EulerZYZ, SymmetryKind, SymmetrySpec

_TWO_PI = 2.0 * math.pi

POSE_WEIGHT_MODES = ("cubic", "linear")


@dataclass(frozen=True)
class LossWeights:
    """Term weights; pose_mode picks the visibility ramp for pose errors.

    "cubic" scales position/orientation errors by 8 * v^3, "linear" by v.
    """

    presence: float = 0.1
    visibility: float = 0.25
    position: float = 1.0
    orientation: float = 1.0
    pose_mode: str = "cubic"

    def __post_init__(self) -> None:
        for name in ("presence", "visibility", "position", "orientation"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} weight must be finite and >= 0, got {v}")
        if self.pose_mode not in POSE_WEIGHT_MODES:
            raise ValueError(f"pose_mode must be one of {POSE_WEIGHT_MODES}, got {self.pose_mode!r}")

    def pose_weight(self, vis):
        v = np.asarray(vis, dtype=float)
        if self.pose_mode == "cubic":
            return 8.0 * v * v * v
        return v


@dataclass(frozen=True)
class LossBreakdown:
    """Weighted contribution of each term; total is their sum."""

    total: float
    presence: float
    visibility: float
    position: float
    orientation: float


def angle_channel_count(sym: SymmetrySpec | None) -> int:
    """Orientation channels carrying information for this symmetry class."""
    if sym is not None and sym.kind is SymmetryKind.REVOLUTION:
        return 2
    return 3


def angle_normalize(e: EulerZYZ, sym: SymmetrySpec) -> tuple:
    """Map Z-Y-Z angles into [0, 1) channel values.

    alpha and beta divide by 2*pi; gamma divides by its symmetry-reduced
    range 2*pi/k. Revolution objects carry no gamma information, so the
    third value is fixed at 0. Angles outside their canonical ranges are
    rejected.
    """
    if not 0.0 <= e.alpha < _TWO_PI:
        raise ValueError(f"alpha {e.alpha} outside [0, 2*pi)")
    if not 0.0 <= e.beta < _TWO_PI:
        raise ValueError(f"beta {e.beta} outside [0, 2*pi)")
    if sym.kind is SymmetryKind.REVOLUTION:
        return e.alpha / _TWO_PI, e.beta / _TWO_PI, 0.0
    span = sym.gamma_range
    if not 0.0 <= e.gamma < span:
        raise ValueError(f"gamma {e.gamma} outside [0, {span:.6g})")
    return e.alpha / _TWO_PI, e.beta / _TWO_PI, e.gamma / span


def angle_denormalize(a1: float, a2: float, a3: float, sym: SymmetrySpec) -> EulerZYZ:
    """Inverse of angle_normalize; values must lie in [0, 1)."""
    for name, v in (("a1", a1), ("a2", a2), ("a3", a3)):
        if not 0.0 <= v < 1.0:
            raise ValueError(f"{name}={v} outside [0, 1)")
    if sym.kind is SymmetryKind.REVOLUTION:
        return EulerZYZ(a1 * _TWO_PI, a2 * _TWO_PI, 0.0)
    return EulerZYZ(a1 * _TWO_PI, a2 * _TWO_PI, a3 * sym.gamma_range)


def _blocks(tensor: np.ndarray, grid: GridSpec, label: str) -> np.ndarray:
    t = np.asarray(tensor, dtype=float)
    expected = (grid.sx, grid.sy, grid.channels)
    if t.shape != expected:
        raise ValueError(f"{label} tensor shape {t.shape} does not match grid {expected}")
    return t.reshape(grid.sx, grid.sy, grid.blocks, FEATURE_SIZE)


def _check_gt_presence(p: np.ndarray) -> None:
    if not np.all((p == 0.0) | (p == 1.0)):
        bad = p[(p != 0.0) & (p != 1.0)].flat[0]
        raise ValueError(f"ground-truth presence must be exactly 0 or 1, found {bad}")


def loss(
    pred: np.ndarray,
    gt: np.ndarray,
    weights: LossWeights,
    grid: GridSpec,
    sym: SymmetrySpec | None = None,
    per_cell_mean: bool = False,
) -> LossBreakdown:
    """Total loss and per-term contributions, summed over all cell blocks.

    sym narrows the orientation channels (a revolution axis drops the
    third angle); per_cell_mean divides everything by the block count for
    scale-free comparison across grid sizes.
    """
    p = _blocks(pred, grid, "pred")
    g = _blocks(gt, grid, "gt")
    gate = g[..., 0]
    _check_gt_presence(gate)
    diff = p - g

    presence = weights.presence * float(np.square(diff[..., 0]).sum())
    visibility = weights.visibility * float((gate * np.square(diff[..., 1])).sum())
    ramp = gate * weights.pose_weight(g[..., 1])
    position = weights.position * float((ramp * np.square(diff[..., 2:5]).sum(axis=-1)).sum())
    n_angles = angle_channel_count(sym)
    ang_sq = np.square(diff[..., 5 : 5 + n_angles]).sum(axis=-1)
    orientation = weights.orientation * float((ramp * ang_sq).sum())

    scale = 1.0 / (grid.sx * grid.sy * grid.blocks) if per_cell_mean else 1.0
    presence *= scale
    visibility *= scale
    position *= scale
    orientation *= scale
    total = presence + visibility + position + orientation
    return LossBreakdown(total, presence, visibility, position, orientation)


def loss_grad(
    pred: np.ndarray,
    gt: np.ndarray,
    weights: LossWeights,
    grid: GridSpec,
    sym: SymmetrySpec | None = None,
    per_cell_mean: bool = False,
) -> np.ndarray:
    """Analytic gradient of loss().total with respect to pred."""
    p = _blocks(pred, grid, "pred")
    g = _blocks(gt, grid, "gt")
    gate = g[..., 0]
    _check_gt_presence(gate)
    diff = p - g

    grad = np.zeros_like(p)
    grad[..., 0] = 2.0 * weights.presence * diff[..., 0]
    grad[..., 1] = 2.0 * weights.visibility * gate * diff[..., 1]
    ramp = gate * weights.pose_weight(g[..., 1])
    grad[..., 2:5] = 2.0 * weights.position * ramp[..., None] * diff[..., 2:5]
    n_angles = angle_channel_count(sym)
    grad[..., 5 : 5 + n_angles] = (
        2.0 * weights.orientation * ramp[..., None] * diff[..., 5 : 5 + n_angles]
    )
    if per_cell_mean:
        grad /= grid.sx * grid.sy * grid.blocks
    return grad.reshape(grid.sx, grid.sy, grid.channels)
