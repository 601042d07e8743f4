"""Ground-truth tensor codecs for grid-based multi-object pose estimation.

Each scene is encoded into an (Sx, Sy, channels) tensor whose cells hold
8-value feature blocks [presence, visibility, x, y, z, a1, a2, a3].
The six layout variants differ in which cells an object claims and in
the reference frame of its position values:

- vanilla: the cell the origin projects into, in-cell coordinates.
- eve:     vanilla claims, plus copies into neighbouring cells when the
           origin sits within 0.2 of a cell border (up to 3 neighbours
           at a corner); positions switch to the enlarged-image frame so
           the copies stay meaningful.
- ap:      origin plus the projections of the model's additional
           reference points claim cells; all carry the full pose in the
           enlarged-image frame, and origins outrank reference points.
- z:       like vanilla with the depth range split into Sz slices; the
           claim lands in the channel block of its slice.
- mp:      up to poses_per_cell objects per cell, ranked by descending
           visibility, presence chained so rank l is set only when all
           earlier ranks are.
- si:      the segmentation raster is nearest-neighbour resized to the
           grid and every non-background cell carries its object's
           feature in the enlarged-image frame.

Conflicting claims of equal priority go to the higher visibility, then
the lower instance id, making every encoding independent of input order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .camera import (
    FEATURE_SIZE,
    CameraIntrinsics,
    CellCoords,
    GridSpec,
    OutOfFrustumError,
    OutOfImageError,
    ProjectionError,
    Variant,
    cell_of,
    cell_to_point,
    enlarged_denormalize,
    enlarged_normalize,
)
from .geometry import Pose, euler_to_rotation, rotation_to_euler
from .loss import angle_denormalize, angle_normalize
from .scenegen import RenderResult, Scene

EVE_BORDER_THRESHOLD = 0.2

_ENLARGED_VARIANTS = (Variant.EVE, Variant.AP, Variant.SI)


@dataclass(frozen=True)
class ObjectAnnotation:
    """One instance to encode: id, pose, and its rendered visibility."""

    instance_id: int
    pose: Pose
    visibility: float

    def __post_init__(self) -> None:
        if self.instance_id < 0:
            raise ValueError(f"instance id must be >= 0, got {self.instance_id}")
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError(f"visibility must be in [0, 1], got {self.visibility}")


@dataclass(frozen=True)
class PoseHypothesis:
    """Decoded cell content: confidence is the presence activation."""

    confidence: float
    visibility: float
    pose: Pose
    cell: tuple


def annotations_from(scene: Scene, rendered: RenderResult) -> list:
    """Annotations for a rendered scene, visibility taken from the render."""
    if len(rendered.visibility) != len(scene.objects):
        raise ValueError(
            f"render carries {len(rendered.visibility)} visibilities for "
            f"{len(scene.objects)} objects"
        )
    return [
        ObjectAnnotation(obj_id, pose, float(np.clip(rendered.visibility[obj_id], 0.0, 1.0)))
        for obj_id, pose in scene.objects
    ]


def _check_annotations(annotations: Sequence[ObjectAnnotation], rendered: RenderResult) -> None:
    seen = set()
    for ann in annotations:
        if ann.instance_id in seen:
            raise ValueError(f"duplicate annotation id {ann.instance_id}")
        seen.add(ann.instance_id)
        if ann.instance_id >= len(rendered.visibility):
            raise ValueError(f"annotation id {ann.instance_id} missing from render")


def _priority_order(annotations: Iterable[ObjectAnnotation]) -> list:
    """Claim order: highest visibility first, ties to the lower id."""
    return sorted(annotations, key=lambda a: (-a.visibility, a.instance_id))


def _origin_cell(ann: ObjectAnnotation, cam: CameraIntrinsics, grid: GridSpec):
    try:
        return cell_of(ann.pose.translation, cam, grid)
    except (OutOfImageError, OutOfFrustumError, ProjectionError):
        return None


def _eve_neighbours(cell: CellCoords, grid: GridSpec) -> list:
    """Cells an origin near a border extends into (diagonal at corners)."""
    di = -1 if cell.x <= EVE_BORDER_THRESHOLD else 1 if cell.x >= 1.0 - EVE_BORDER_THRESHOLD else 0
    dj = -1 if cell.y <= EVE_BORDER_THRESHOLD else 1 if cell.y >= 1.0 - EVE_BORDER_THRESHOLD else 0
    out = []
    for step_i, step_j in ((di, 0), (0, dj), (di, dj)):
        if step_i == 0 and step_j == 0:
            continue
        ni, nj = cell.i + step_i, cell.j + step_j
        if 0 <= ni < grid.sx and 0 <= nj < grid.sy:
            key = (ni, nj, cell.k)
            if key not in out:
                out.append(key)
    return out


def _si_source_pixels(cam: CameraIntrinsics, grid: GridSpec) -> tuple:
    """Raster pixel sampled by each grid cell under nearest-neighbour resize."""
    us = np.minimum((np.arange(grid.sx) + 0.5) * cam.width // grid.sx, cam.width - 1).astype(int)
    vs = np.minimum((np.arange(grid.sy) + 0.5) * cam.height // grid.sy, cam.height - 1).astype(int)
    return us, vs


def _claims(
    annotations: Sequence[ObjectAnnotation],
    rendered: RenderResult,
    model,
    cam: CameraIntrinsics,
    grid: GridSpec,
) -> dict:
    """(i, j, k, rank) -> (winning annotation, claim source).

    The source names what put the object into the cell: "origin",
    "extension" (eve border copies), "point" (ap reference points), or
    "pixel" (si segmentation samples)."""
    variant = grid.variant
    ordered = _priority_order(annotations)
    claims: dict = {}

    if variant is Variant.SI:
        us, vs = _si_source_pixels(cam, grid)
        by_id = {ann.instance_id: ann for ann in annotations}
        seg = rendered.segmentation
        for i in range(grid.sx):
            for j in range(grid.sy):
                obj_id = int(seg[vs[j], us[i]])
                if obj_id < 0:
                    continue
                if obj_id not in by_id:
                    raise ValueError(f"segmentation references id {obj_id} with no annotation")
                claims[(i, j, 0, 0)] = (by_id[obj_id], "pixel")
        return claims

    origin_cells = {ann.instance_id: _origin_cell(ann, cam, grid) for ann in annotations}

    if variant is Variant.MP:
        ranks: dict = {}
        for ann in ordered:
            cell = origin_cells[ann.instance_id]
            if cell is None:
                continue
            key = (cell.i, cell.j, cell.k)
            rank = ranks.get(key, 0)
            if rank < grid.poses_per_cell:
                claims[(cell.i, cell.j, cell.k, rank)] = (ann, "origin")
                ranks[key] = rank + 1
        return claims

    for ann in ordered:  # origin claims, all remaining variants
        cell = origin_cells[ann.instance_id]
        if cell is None:
            continue
        key = (cell.i, cell.j, cell.k, 0)
        if key not in claims:
            claims[key] = (ann, "origin")

    if variant is Variant.EVE:
        origin_keys = set(claims)
        for ann in ordered:
            cell = origin_cells[ann.instance_id]
            if cell is None:
                continue
            for ni, nj, nk in _eve_neighbours(cell, grid):
                key = (ni, nj, nk, 0)
                if key not in origin_keys and key not in claims:
                    claims[key] = (ann, "extension")
    elif variant is Variant.AP:
        origin_keys = set(claims)
        extra = np.asarray(model.additional_points, dtype=float).reshape(-1, 3)
        for ann in ordered:
            if extra.size == 0:
                break
            world = ann.pose.rotation.apply(extra) + ann.pose.translation
            for point in world:
                try:
                    cell = cell_of(point, cam, grid)
                except (OutOfImageError, OutOfFrustumError, ProjectionError):
                    continue
                key = (cell.i, cell.j, cell.k, 0)
                if key not in origin_keys and key not in claims:
                    claims[key] = (ann, "point")
    return claims


def _feature(
    ann: ObjectAnnotation,
    model,
    cam: CameraIntrinsics,
    grid: GridSpec,
    origin_cell: CellCoords | None,
) -> np.ndarray | None:
    """8-value feature block for one object, or None when unrepresentable."""
    euler = rotation_to_euler(ann.pose.rotation, model.symmetry)
    a1, a2, a3 = angle_normalize(euler, model.symmetry)
    if grid.variant in _ENLARGED_VARIANTS:
        try:
            x, y, z = enlarged_normalize(ann.pose.translation, cam, model.diameter)
        except ProjectionError:
            return None
    else:
        if origin_cell is None:
            return None
        x, y, z = origin_cell.x, origin_cell.y, origin_cell.z
    return np.array([1.0, ann.visibility, x, y, z, a1, a2, a3])


def encode(
    annotations: Sequence[ObjectAnnotation],
    rendered: RenderResult,
    model,
    cam: CameraIntrinsics,
    grid: GridSpec,
) -> np.ndarray:
    """Ground-truth tensor for a set of annotated instances.

    Cells nothing claims stay all-zero. Objects no cell of the variant
    can represent (for example an origin outside the frustum under
    vanilla/z/mp) are skipped; coverage_report tallies them.
    """
    _check_annotations(annotations, rendered)
    claims = _claims(annotations, rendered, model, cam, grid)
    tensor = np.zeros((grid.sx, grid.sy, grid.channels))
    features: dict = {}
    origin_cells: dict = {}
    for (i, j, k, rank), (ann, _) in claims.items():
        if ann.instance_id not in features:
            if ann.instance_id not in origin_cells:
                origin_cells[ann.instance_id] = _origin_cell(ann, cam, grid)
            features[ann.instance_id] = _feature(
                ann, model, cam, grid, origin_cells[ann.instance_id]
            )
        vec = features[ann.instance_id]
        if vec is None:
            continue
        base = FEATURE_SIZE * grid.block_index(k, rank)
        tensor[i, j, base : base + FEATURE_SIZE] = vec
    return tensor


def _wrap_unit(v: float) -> float:
    w = v % 1.0
    return 0.0 if w >= 1.0 else w


def decode(
    tensor: np.ndarray,
    grid: GridSpec,
    cam: CameraIntrinsics,
    model,
    threshold: float = 0.5,
) -> list:
    """Pose hypotheses for every cell block whose presence clears threshold.

    mp-style grids stop scanning a cell at the first rank below
    threshold, honouring the chained-presence convention. Angle channels
    wrap periodically into [0, 1); no suppression or merging happens
    here (postprocess.cluster does that).
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    t = np.asarray(tensor, dtype=float)
    expected = (grid.sx, grid.sy, grid.channels)
    if t.shape != expected:
        raise ValueError(f"tensor shape {t.shape} does not match grid {expected}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor must be finite")
    blocks = t.reshape(grid.sx, grid.sy, grid.sz, grid.poses_per_cell, FEATURE_SIZE)
    active = np.logical_and.accumulate(blocks[..., 0] >= threshold, axis=3)

    hypotheses = []
    for i, j, k, rank in np.argwhere(active):
        vec = blocks[i, j, k, rank]
        a1, a2, a3 = (_wrap_unit(float(v)) for v in vec[5:8])
        rotation = euler_to_rotation(angle_denormalize(a1, a2, a3, model.symmetry))
        if grid.variant in _ENLARGED_VARIANTS:
            translation = enlarged_denormalize(
                float(vec[2]), float(vec[3]), float(vec[4]), cam, model.diameter
            )
        else:
            cell = CellCoords(int(i), int(j), int(k), float(vec[2]), float(vec[3]), float(vec[4]))
            translation = cell_to_point(cell, cam, grid)
        hypotheses.append(
            PoseHypothesis(
                confidence=float(vec[0]),
                visibility=float(np.clip(vec[1], 0.0, 1.0)),
                pose=Pose(rotation, translation),
                cell=(int(i), int(j), int(k), int(rank)),
            )
        )
    return hypotheses


@dataclass(frozen=True)
class VariantCoverage:
    """Which objects one variant's assignment represents.

    point_captured lists the objects that kept at least one cell claimed
    through an additional reference point after conflict resolution;
    it is empty for every variant without reference points."""

    variant: Variant
    eligible: tuple
    captured: tuple
    missed: tuple
    captured_all: tuple
    point_captured: tuple = ()

    @property
    def captured_count(self) -> int:
        return len(self.captured)

    @property
    def missed_count(self) -> int:
        return len(self.missed)


@dataclass(frozen=True)
class CoverageReport:
    per_variant: Mapping


def coverage_report(
    scene: Scene,
    rendered: RenderResult,
    model,
    cam: CameraIntrinsics,
    grids: Mapping | None = None,
    vis_cutoff: float = 0.5,
) -> CoverageReport:
    """Captured/missed tallies per variant for objects at or above vis_cutoff.

    grids may override the per-variant grid specs; by default every
    variant uses its standard configuration.
    """
    annotations = annotations_from(scene, rendered)
    _check_annotations(annotations, rendered)
    if grids is None:
        grids = {v: GridSpec.for_variant(v) for v in Variant}
    eligible = tuple(
        sorted(a.instance_id for a in annotations if a.visibility >= vis_cutoff)
    )
    report = {}
    for variant, grid in grids.items():
        variant = Variant(variant)
        claims = _claims(annotations, rendered, model, cam, grid)
        representable: dict = {}
        captured_all = set()
        point_captured = set()
        for ann, source in claims.values():
            if ann.instance_id not in representable:
                cell = _origin_cell(ann, cam, grid)
                representable[ann.instance_id] = (
                    _feature(ann, model, cam, grid, cell) is not None
                )
            if not representable[ann.instance_id]:
                continue
            captured_all.add(ann.instance_id)
            if source == "point":
                point_captured.add(ann.instance_id)
        captured = tuple(sorted(set(eligible) & captured_all))
        missed = tuple(sorted(set(eligible) - captured_all))
        report[variant] = VariantCoverage(
            variant,
            eligible,
            captured,
            missed,
            tuple(sorted(captured_all)),
            tuple(sorted(point_captured)),
        )
    return CoverageReport(report)
