"""Synthetic bin-picking scenes: sampling, rendering, and depth defects.

Objects are unions of spheres, which keeps the rasteriser exact: every
depth sample is the analytic nearest ray-sphere intersection, and the
per-object visibility is the pixel count it won in the full render over
the pixel count of the object rendered alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .camera import CameraIntrinsics, project
from .geometry import (
    ObjectModel,
    Pose,
    Rotation,
    ShapeSphere,
    SymmetryKind,
    SymmetrySpec,
)


@dataclass(frozen=True)
class BinBounds:
    """Axis-aligned box of allowed object origins, in the camera frame."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.lower, dtype=float).reshape(3).copy()
        hi = np.asarray(self.upper, dtype=float).reshape(3).copy()
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("bounds must be finite")
        if np.any(lo >= hi):
            raise ValueError(f"lower bound must be strictly below upper, got {lo} vs {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def corners(self) -> np.ndarray:
        lo, hi = self.lower, self.upper
        pick = np.array(np.meshgrid([0, 1], [0, 1], [0, 1])).T.reshape(-1, 3)
        return np.where(pick == 0, lo, hi)


@dataclass(frozen=True)
class Scene:
    """Sampled object instances; ids are dense and start at 0."""

    objects: tuple
    model: ObjectModel
    camera: CameraIntrinsics
    seed: int

    def __post_init__(self) -> None:
        ids = [obj_id for obj_id, _ in self.objects]
        if ids != list(range(len(ids))):
            raise ValueError(f"instance ids must be 0..n-1 in order, got {ids}")
        object.__setattr__(self, "objects", tuple(self.objects))

    @property
    def poses(self) -> list:
        return [pose for _, pose in self.objects]


@dataclass(frozen=True)
class RenderResult:
    """Depth and segmentation rasters plus per-object visibility.

    depth is in the camera length unit with 0 marking background;
    segmentation holds instance ids with -1 exactly where depth is 0.
    """

    depth: np.ndarray
    segmentation: np.ndarray
    visibility: np.ndarray


@dataclass(frozen=True)
class NoiseConfig:
    """Depth corruption: dropout to 0, Gaussian noise, then box blur."""

    dropout: float = 0.0
    depth_sigma: float = 0.0
    blur_size: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError(f"dropout must be in [0, 1], got {self.dropout}")
        if self.depth_sigma < 0:
            raise ValueError(f"depth_sigma must be >= 0, got {self.depth_sigma}")
        if self.blur_size < 0:
            raise ValueError(f"blur_size must be >= 0, got {self.blur_size}")


def _frustum_violation(point: np.ndarray, cam: CameraIntrinsics) -> str | None:
    z = float(point[2])
    if not cam.near <= z <= cam.far:
        return f"z={z:.6g} outside [{cam.near}, {cam.far}]"
    u, v, _ = project(point, cam)
    if not 0.0 <= u < cam.width:
        return f"u={u:.6g} outside [0, {cam.width})"
    if not 0.0 <= v < cam.height:
        return f"v={v:.6g} outside [0, {cam.height})"
    return None


def sample_scene(
    seed: int,
    model: ObjectModel,
    count: int,
    bounds: BinBounds,
    cam: CameraIntrinsics,
) -> Scene:
    """Scene with `count` instances, uniform origins and uniform rotations.

    Deterministic for a given seed. The bounds box must sit inside the
    camera frustum so every sampled origin projects into the image.
    """
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    for corner in bounds.corners():
        problem = _frustum_violation(corner, cam)
        if problem is not None:
            raise ValueError(f"bin bounds corner {corner} outside frustum: {problem}")
    rng = np.random.default_rng(seed)
    translations = rng.uniform(bounds.lower, bounds.upper, size=(count, 3))
    quats = rng.normal(size=(count, 4))
    objects = []
    for idx in range(count):
        rotation = Rotation.from_quat(quats[idx])
        objects.append((idx, Pose(rotation, translations[idx])))
    return Scene(tuple(objects), model, cam, seed)


def _sphere_window(
    c: np.ndarray, r: float, cam: CameraIntrinsics, clip: bool
) -> tuple | None:
    """Conservative pixel bounding box of a sphere's silhouette."""
    cz = float(c[2])
    if cz - r <= 1e-6:
        return None  # straddles the camera plane; outside supported scenes
    z_lo, z_hi = cz - r, cz + r
    us, vs = [], []
    for z in (z_lo, z_hi):
        for sx in (-1.0, 1.0):
            us.append(cam.fu * (c[0] + sx * r) / z + cam.cu)
            vs.append(cam.fv * (c[1] + sx * r) / z + cam.cv)
    u0 = int(math.floor(min(us))) - 1
    u1 = int(math.ceil(max(us))) + 1
    v0 = int(math.floor(min(vs))) - 1
    v1 = int(math.ceil(max(vs))) + 1
    if clip:
        u0, u1 = max(u0, 0), min(u1, cam.width)
        v0, v1 = max(v0, 0), min(v1, cam.height)
        if u0 >= u1 or v0 >= v1:
            return None
    return u0, u1, v0, v1


def _sphere_hits(
    c: np.ndarray, r: float, cam: CameraIntrinsics, window: tuple
) -> tuple:
    """Boolean hit mask and nearest-intersection z-depth over a pixel window."""
    u0, u1, v0, v1 = window
    us = (np.arange(u0, u1) + 0.5 - cam.cu) / cam.fu
    vs = (np.arange(v0, v1) + 0.5 - cam.cv) / cam.fv
    dx, dy = np.meshgrid(us, vs)
    # ray p(s) = s * (dx, dy, 1); depth of the hit equals s
    dd = dx * dx + dy * dy + 1.0
    dc = dx * c[0] + dy * c[1] + c[2]
    disc = dc * dc - dd * (float(c @ c) - r * r)
    hit = disc >= 0.0
    s = np.zeros_like(dx)
    root = np.sqrt(np.where(hit, disc, 0.0))
    np.divide(dc - root, dd, out=s, where=hit)
    hit &= s > 0.0
    return hit, s


def _alone_pixels(
    spheres: list, cam: CameraIntrinsics, clip: bool
) -> int:
    """Pixel count covered by one object rendered alone."""
    windows = []
    for c, r in spheres:
        w = _sphere_window(c, r, cam, clip)
        if w is not None:
            windows.append((c, r, w))
    if not windows:
        return 0
    u0 = min(w[2][0] for w in windows)
    u1 = max(w[2][1] for w in windows)
    v0 = min(w[2][2] for w in windows)
    v1 = max(w[2][3] for w in windows)
    mask = np.zeros((v1 - v0, u1 - u0), dtype=bool)
    for c, r, (wu0, wu1, wv0, wv1) in windows:
        hit, _ = _sphere_hits(c, r, cam, (wu0, wu1, wv0, wv1))
        mask[wv0 - v0 : wv1 - v0, wu0 - u0 : wu1 - u0] |= hit
    return int(mask.sum())


def render(scene: Scene, unclipped_visibility: bool = False) -> RenderResult:
    """Z-buffer render of a scene; deterministic for identical inputs.

    Visibility compares against the object rendered alone on the same
    image, so a partly out-of-view but unoccluded object still scores
    1.0; set unclipped_visibility to compare against its full silhouette
    instead.
    """
    cam = scene.camera
    h, w = cam.height, cam.width
    depth = np.full((h, w), np.inf)
    seg = np.full((h, w), -1, dtype=np.int32)
    n = len(scene.objects)
    visibility = np.zeros(n)

    world_spheres = []
    for obj_id, pose in scene.objects:
        spheres = [
            (pose.rotation.apply(s.center) + pose.translation, s.radius)
            for s in scene.model.shape_spheres
        ]
        world_spheres.append(spheres)
        for c, r in spheres:
            window = _sphere_window(c, r, cam, clip=True)
            if window is None:
                continue
            hit, s = _sphere_hits(c, r, cam, window)
            u0, u1, v0, v1 = window
            tile_d = depth[v0:v1, u0:u1]
            tile_s = seg[v0:v1, u0:u1]
            closer = hit & (s < tile_d)  # strict: ties keep the lower id
            tile_d[closer] = s[closer]
            tile_s[closer] = obj_id

    counts = np.bincount(seg[seg >= 0].ravel(), minlength=n) if n else np.zeros(0, int)
    for obj_id in range(n):
        alone = _alone_pixels(world_spheres[obj_id], cam, clip=not unclipped_visibility)
        visibility[obj_id] = counts[obj_id] / alone if alone > 0 else 0.0

    depth[~np.isfinite(depth)] = 0.0
    visibility.setflags(write=False)
    depth.setflags(write=False)
    seg.setflags(write=False)
    return RenderResult(depth, seg, visibility)


def corrupt_depth(depth: np.ndarray, config: NoiseConfig, seed: int) -> np.ndarray:
    """Degrade a depth raster: dropout, Gaussian noise on valid pixels, box blur."""
    out = np.array(depth, dtype=float)
    rng = np.random.default_rng(seed)
    if config.dropout > 0.0:
        out[rng.random(out.shape) < config.dropout] = 0.0
    if config.depth_sigma > 0.0:
        noise = rng.normal(0.0, config.depth_sigma, out.shape)
        out = np.where(out > 0.0, out + noise, 0.0)
    if config.blur_size > 1:
        out = ndimage.uniform_filter(out, size=config.blur_size, mode="nearest")
    return out


def _axis_estimates(raster: np.ndarray) -> tuple:
    """Per-row linear interpolation across zeros; flags two-sided estimates."""
    h, w = raster.shape
    est = np.zeros_like(raster)
    two_sided = np.zeros(raster.shape, dtype=bool)
    cols = np.arange(w)
    for row in range(h):
        line = raster[row]
        valid = line > 0.0
        idx = np.nonzero(valid)[0]
        if idx.size == 0:
            continue
        est[row] = np.interp(cols, idx, line[idx])
        two_sided[row] = (cols >= idx[0]) & (cols <= idx[-1])
    return est, two_sided


def interpolate_missing(depth: np.ndarray) -> np.ndarray:
    """Fill zero pixels from the nearest valid pixels along rows and columns.

    Interior holes take the mean of the row-wise and column-wise linear
    interpolations (either one alone when the other is one-sided); holes
    no row or column can reach copy the nearest valid pixel. Valid
    pixels pass through untouched.
    """
    d = np.asarray(depth, dtype=float)
    invalid = d == 0.0
    if not invalid.any():
        return d.copy()
    if invalid.all():
        raise ValueError("depth raster has no valid pixels to interpolate from")

    row_est, row_ok = _axis_estimates(d)
    col_est_t, col_ok_t = _axis_estimates(d.T)
    col_est, col_ok = col_est_t.T, col_ok_t.T

    filled = np.where(row_ok & col_ok, 0.5 * (row_est + col_est), 0.0)
    filled = np.where(row_ok & ~col_ok, row_est, filled)
    filled = np.where(col_ok & ~row_ok, col_est, filled)
    unreachable = invalid & ~(row_ok | col_ok)
    if unreachable.any():
        _, (ri, ci) = ndimage.distance_transform_edt(invalid, return_indices=True)
        filled[unreachable] = d[ri[unreachable], ci[unreachable]]

    out = d.copy()
    out[invalid] = filled[invalid]
    return out


def _ball_points(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    direction = rng.normal(size=(count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return direction * radius * rng.random(count)[:, None] ** (1.0 / 3.0)


def make_model(
    sym: SymmetrySpec,
    diameter: float = 0.24,
    seed: int = 7,
    surface_count: int = 64,
    name: str | None = None,
) -> ObjectModel:
    """Canned sphere-set object consistent with the requested symmetry.

    The surface point set is invariant under the symmetry group (exactly
    for cyclic orders, on-axis for revolution), which makes the pose
    distance symmetric and keeps symmetry-equivalent poses at distance
    zero. Symmetric objects carry two reference points at +-0.3 *
    diameter on the object z-axis; the asymmetric one gets a tetrahedron
    of four, whose projection spreads over several grid cells under any
    orientation.
    """
    rng = np.random.default_rng(seed)
    radius = 0.5 * diameter

    if sym.kind is SymmetryKind.NONE:
        spheres = (
            ShapeSphere((0.0, 0.0, 0.0), 0.50 * radius),
            ShapeSphere((0.50 * radius, 0.0, 0.0), 0.34 * radius),
            ShapeSphere((0.0, 0.44 * radius, 0.20 * radius), 0.30 * radius),
            ShapeSphere((-0.30 * radius, -0.20 * radius, -0.40 * radius), 0.26 * radius),
        )
        pts = _ball_points(rng, max(surface_count, 32), 0.80 * radius)
        pts -= pts.mean(axis=0)
        default_name = "blob"
    elif sym.kind is SymmetryKind.CYCLIC:
        k = sym.order
        lobes = []
        for step in range(k):
            a = 2.0 * math.pi * step / k
            lobes.append(
                ShapeSphere(
                    (0.55 * radius * math.cos(a), 0.55 * radius * math.sin(a), 0.15 * radius),
                    0.30 * radius,
                )
            )
        spheres = (ShapeSphere((0.0, 0.0, 0.0), 0.45 * radius), *lobes)
        base = max(-(-surface_count // k), -(-32 // k))  # ceil; orbit total stays >= 32
        seed_pts = _ball_points(rng, base, 0.78 * radius)
        orbits = []
        for step in range(k):
            a = 2.0 * math.pi * step / k
            c, s = math.cos(a), math.sin(a)
            rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
            orbits.append(seed_pts @ rot.T)
        pts = np.concatenate(orbits)
        pts[:, 2] -= pts[:, 2].mean()  # keep the orbit structure, centre on z only
        default_name = f"cyclic{k}"
    else:
        spheres = (
            ShapeSphere((0.0, 0.0, -0.50 * radius), 0.40 * radius),
            ShapeSphere((0.0, 0.0, 0.0), 0.50 * radius),
            ShapeSphere((0.0, 0.0, 0.55 * radius), 0.35 * radius),
        )
        count = max(surface_count, 33)
        zs = np.linspace(-0.75 * radius, 0.75 * radius, count)
        pts = np.column_stack([np.zeros(count), np.zeros(count), zs])
        default_name = "spindle"

    if np.linalg.norm(pts, axis=1).max() > radius:
        pts *= 0.98 * radius / np.linalg.norm(pts, axis=1).max()
    if sym.kind is SymmetryKind.NONE:
        extra = (0.35 * diameter / math.sqrt(3.0)) * np.array(
            [
                [1.0, 1.0, 1.0],
                [1.0, -1.0, -1.0],
                [-1.0, 1.0, -1.0],
                [-1.0, -1.0, 1.0],
            ]
        )
    else:
        # on-axis points are invariant under any rotation about z
        extra = np.array([[0.0, 0.0, 0.3 * diameter], [0.0, 0.0, -0.3 * diameter]])
    return ObjectModel(
        symmetry=sym,
        diameter=diameter,
        surface_points=pts,
        additional_points=extra,
        shape_spheres=spheres,
        name=name or default_name,
    )
