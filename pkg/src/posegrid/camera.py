"""Pinhole camera, frustum grid, and position normalisations.

The camera frustum between the near and far clip planes is cut into
Sx * Sy (* Sz) truncated pyramids by splitting the image evenly in u and
v and, optionally, the depth range evenly in z. Positions are expressed
either as in-cell fractions of the pyramid a point falls into, or
normalised against an image enlarged by one object diameter on every
side so that origins slightly outside the view keep usable coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class ProjectionError(ValueError):
    """Point at or behind the camera plane."""


class OutOfImageError(ValueError):
    """Projection lands outside the image rectangle."""


class OutOfFrustumError(ValueError):
    """Depth outside the [near, far) clip range."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fu: float
    fv: float
    cu: float
    cv: float
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self) -> None:
        if self.fu <= 0 or self.fv <= 0:
            raise ValueError(f"focal lengths must be positive, got fu={self.fu}, fv={self.fv}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not 0 < self.near < self.far:
            raise ValueError(f"need 0 < near < far, got near={self.near}, far={self.far}")


def project(point: np.ndarray, cam: CameraIntrinsics) -> tuple:
    """Pixel coordinates and depth (u, v, z) of one or more camera-frame points."""
    p = np.asarray(point, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0.0):
        raise ProjectionError(f"point depth must be positive, got z={float(np.min(z)):.6g}")
    u = cam.fu * p[..., 0] / z + cam.cu
    v = cam.fv * p[..., 1] / z + cam.cv
    if p.ndim == 1:
        return float(u), float(v), float(z)
    return u, v, z


def backproject(u, v, depth, cam: CameraIntrinsics) -> np.ndarray:
    """Camera-frame point for pixel coordinates at a given z-depth."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    z = np.asarray(depth, dtype=float)
    if np.any(z <= 0.0):
        raise ProjectionError(f"depth must be positive, got {float(np.min(z)):.6g}")
    x = (u - cam.cu) * z / cam.fu
    y = (v - cam.cv) * z / cam.fv
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


class Variant(str, Enum):
    """Ground-truth tensor layout family."""

    VANILLA = "vanilla"
    EVE = "eve"  # volume elements extended across cell borders
    AP = "ap"  # additional reference points claim extra cells
    Z = "z"  # depth axis discretised into slices
    MP = "mp"  # several ranked poses per cell
    SI = "si"  # per-pixel features from a resized segmentation image


_VARIANT_DEFAULTS = {
    Variant.VANILLA: (16, 16, 1, 1),
    Variant.EVE: (16, 16, 1, 1),
    Variant.AP: (16, 16, 1, 1),
    Variant.Z: (16, 16, 16, 1),
    Variant.MP: (8, 8, 1, 3),
    Variant.SI: (32, 32, 1, 1),
}

FEATURE_SIZE = 8  # presence, visibility, x, y, z, a1, a2, a3


@dataclass(frozen=True)
class GridSpec:
    """Grid resolution and per-cell capacity for one tensor variant."""

    variant: Variant
    sx: int
    sy: int
    sz: int = 1
    poses_per_cell: int = 1

    def __post_init__(self) -> None:
        for name in ("sx", "sy", "sz", "poses_per_cell"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    @classmethod
    def for_variant(cls, variant: Variant | str) -> "GridSpec":
        variant = Variant(variant)
        sx, sy, sz, p = _VARIANT_DEFAULTS[variant]
        return cls(variant, sx, sy, sz, p)

    @property
    def channels(self) -> int:
        return FEATURE_SIZE * self.sz * self.poses_per_cell

    @property
    def blocks(self) -> int:
        return self.sz * self.poses_per_cell

    def block_index(self, k: int, rank: int) -> int:
        return k * self.poses_per_cell + rank


@dataclass(frozen=True)
class CellCoords:
    """Grid cell indices plus in-cell fractions, each fraction in [0, 1)."""

    i: int
    j: int
    k: int
    x: float
    y: float
    z: float


def _split(value: float, cells: int) -> tuple:
    scaled = value * cells
    idx = int(scaled)
    if idx >= cells:  # guard float rounding at the upper edge
        idx = cells - 1
        frac = math.nextafter(1.0, 0.0)
    else:
        frac = scaled - idx
    return idx, frac


def cell_of(point: np.ndarray, cam: CameraIntrinsics, grid: GridSpec) -> CellCoords:
    """Frustum cell containing a camera-frame point.

    Raises OutOfImageError / OutOfFrustumError naming the offending
    coordinate. A depth exactly on the far plane is clamped into the
    last depth slice.
    """
    u, v, z = project(point, cam)
    if not 0.0 <= u < cam.width:
        raise OutOfImageError(f"u={u:.6g} outside [0, {cam.width})")
    if not 0.0 <= v < cam.height:
        raise OutOfImageError(f"v={v:.6g} outside [0, {cam.height})")
    if not cam.near <= z <= cam.far:
        raise OutOfFrustumError(f"z={z:.6g} outside [{cam.near}, {cam.far})")
    i, fx = _split(u / cam.width, grid.sx)
    j, fy = _split(v / cam.height, grid.sy)
    k, fz = _split((z - cam.near) / (cam.far - cam.near), grid.sz)
    return CellCoords(i, j, k, fx, fy, fz)


def cell_to_point(cell: CellCoords, cam: CameraIntrinsics, grid: GridSpec) -> np.ndarray:
    """Camera-frame point at the given cell-plus-fraction coordinates."""
    u = (cell.i + cell.x) * cam.width / grid.sx
    v = (cell.j + cell.y) * cam.height / grid.sy
    z = cam.near + (cell.k + cell.z) * (cam.far - cam.near) / grid.sz
    return backproject(u, v, z, cam)


def enlarged_normalize(
    point: np.ndarray, cam: CameraIntrinsics, diameter: float
) -> tuple:
    """(x, y, z) of a point against the image enlarged by one diameter.

    The pixel margin equals the projected size of one object diameter at
    the point's depth, so a point up to one diameter outside the image
    still normalises into [0, 1]; the depth range is widened by one
    diameter on both ends.
    """
    if diameter <= 0:
        raise ValueError(f"diameter must be positive, got {diameter}")
    u, v, z = project(point, cam)
    mu = cam.fu * diameter / z
    mv = cam.fv * diameter / z
    x = (u + mu) / (cam.width + 2.0 * mu)
    y = (v + mv) / (cam.height + 2.0 * mv)
    z_lo = cam.near - diameter
    z_hi = cam.far + diameter
    zn = (z - z_lo) / (z_hi - z_lo)
    return x, y, zn


def enlarged_denormalize(
    x: float, y: float, zn: float, cam: CameraIntrinsics, diameter: float
) -> np.ndarray:
    """Inverse of enlarged_normalize; recovers the camera-frame point."""
    if diameter <= 0:
        raise ValueError(f"diameter must be positive, got {diameter}")
    z_lo = cam.near - diameter
    z_hi = cam.far + diameter
    z = z_lo + zn * (z_hi - z_lo)
    if z <= 0.0:
        raise ProjectionError(f"normalised depth {zn:.6g} maps to non-positive z={z:.6g}")
    mu = cam.fu * diameter / z
    mv = cam.fv * diameter / z
    u = x * (cam.width + 2.0 * mu) - mu
    v = y * (cam.height + 2.0 * mv) - mv
    return backproject(u, v, z, cam)
