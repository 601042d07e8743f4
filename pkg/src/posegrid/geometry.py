"""Rigid poses, object symmetry groups, and symmetry-aware pose distances.

Rotations are unit quaternions. Objects declare their proper symmetry
group about the object z-axis (none, cyclic of order k, or a full
revolution axis), and every distance or average in here minimises over
that group, so two poses that differ only by an object symmetry compare
as equal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Sequence

import numpy as np

_TWO_PI = 2.0 * math.pi
_GIMBAL_TOL = 1e-9
_REVOLUTION_SAMPLES = 360
# distances this far below the working scale are rounding residue, not signal
_ZERO_SNAP = 1e-12


def _wrap_angle(x: float, modulus: float) -> float:
    # fmod can land exactly on the modulus after the negative fixup
    y = math.fmod(x, modulus)
    if y < 0.0:
        y += modulus
    if y >= modulus:
        y = 0.0
    return y


class SymmetryKind(Enum):
    NONE = "none"
    CYCLIC = "cyclic"
    REVOLUTION = "revolution"


@dataclass(frozen=True)
class SymmetrySpec:
    """Proper symmetry of an object about its z-axis."""

    kind: SymmetryKind
    order: int = 1

    def __post_init__(self) -> None:
        if self.kind is SymmetryKind.CYCLIC:
            if self.order < 2:
                raise ValueError(f"cyclic symmetry needs order >= 2, got {self.order}")
        elif self.order != 1:
            raise ValueError(f"order only applies to cyclic symmetry, got {self.order}")

    @classmethod
    def none(cls) -> "SymmetrySpec":
        return cls(SymmetryKind.NONE)

    @classmethod
    def cyclic(cls, order: int) -> "SymmetrySpec":
        return cls(SymmetryKind.CYCLIC, order)

    @classmethod
    def revolution(cls) -> "SymmetrySpec":
        return cls(SymmetryKind.REVOLUTION)

    @property
    def gamma_range(self) -> float:
        """Upper bound of the canonical range for the third Euler angle."""
        if self.kind is SymmetryKind.CYCLIC:
            return _TWO_PI / self.order
        return _TWO_PI


class Rotation:
    """Unit quaternion (w, x, y, z). q and -q describe the same rotation."""

    __slots__ = ("q",)

    def __init__(self, w: float, x: float, y: float, z: float):
        q = np.array([w, x, y, z], dtype=float)
        n = float(np.linalg.norm(q))
        if not np.isfinite(n) or n < 1e-12:
            raise ValueError("quaternion must be finite and nonzero")
        if abs(n - 1.0) > 1e-12:  # keep already-unit input bit-stable
            q /= n
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    def __setattr__(self, name, value):
        raise AttributeError("Rotation is immutable")

    @classmethod
    def from_quat(cls, q: Sequence[float]) -> "Rotation":
        w, x, y, z = (float(v) for v in q)
        return cls(w, x, y, z)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def about_z(cls, angle: float) -> "Rotation":
        h = 0.5 * angle
        return cls(math.cos(h), 0.0, 0.0, math.sin(h))

    @classmethod
    def about_y(cls, angle: float) -> "Rotation":
        h = 0.5 * angle
        return cls(math.cos(h), 0.0, math.sin(h), 0.0)

    @classmethod
    def about_x(cls, angle: float) -> "Rotation":
        h = 0.5 * angle
        return cls(math.cos(h), math.sin(h), 0.0, 0.0)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Rotation":
        """Quaternion from a proper rotation matrix (Shepperd's method)."""
        m = np.asarray(m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got {m.shape}")
        t = np.trace(m)
        if t > 0:
            s = math.sqrt(t + 1.0) * 2.0
            w = 0.25 * s
            x = (m[2, 1] - m[1, 2]) / s
            y = (m[0, 2] - m[2, 0]) / s
            z = (m[1, 0] - m[0, 1]) / s
        elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            w = (m[2, 1] - m[1, 2]) / s
            x = 0.25 * s
            y = (m[0, 1] + m[1, 0]) / s
            z = (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] >= m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            w = (m[0, 2] - m[2, 0]) / s
            x = (m[0, 1] + m[1, 0]) / s
            y = 0.25 * s
            z = (m[1, 2] + m[2, 1]) / s
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            w = (m[1, 0] - m[0, 1]) / s
            x = (m[0, 2] + m[2, 0]) / s
            y = (m[1, 2] + m[2, 1]) / s
            z = 0.25 * s
        return cls(w, x, y, z)

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.q
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def __mul__(self, other: "Rotation") -> "Rotation":
        """Composition: (a * b) rotates by b first, then by a."""
        w1, x1, y1, z1 = self.q
        w2, x2, y2, z2 = other.q
        return Rotation(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def inverse(self) -> "Rotation":
        w, x, y, z = self.q
        return Rotation(w, -x, -y, -z)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Rotate one 3-vector or an (..., 3) stack of them."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.as_matrix().T

    def angle_to(self, other: "Rotation") -> float:
        """Geodesic angle between two rotations, in radians."""
        d = min(1.0, abs(float(np.dot(self.q, other.q))))
        return 2.0 * math.acos(d)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Rotation):
            return NotImplemented
        return abs(float(np.dot(self.q, other.q))) >= 1.0 - 1e-9

    __hash__ = None  # tolerance-based equality

    def __repr__(self) -> str:
        w, x, y, z = self.q
        return f"Rotation({w:.6f}, {x:.6f}, {y:.6f}, {z:.6f})"


@dataclass(frozen=True)
class Pose:
    """Rigid transform: camera_point = rotation * object_point + translation."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.translation, dtype=float).reshape(3).copy()
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    def transform(self, points: np.ndarray) -> np.ndarray:
        return self.rotation.apply(points) + self.translation

    def compose_rotation(self, r: Rotation) -> "Pose":
        """Apply an extra object-frame rotation: (R * r, t)."""
        return Pose(self.rotation * r, self.translation)


@dataclass(frozen=True)
class EulerZYZ:
    """Intrinsic Z-Y-Z angles: R = Rz(alpha) @ Ry(beta) @ Rz(gamma).

    gimbal_lock marks decompositions where beta hit 0 or pi and the
    z-spin split between alpha and gamma was fixed by convention.
    """

    alpha: float
    beta: float
    gamma: float
    gimbal_lock: bool = False

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            if not 0.0 <= v < _TWO_PI:
                raise ValueError(f"{name} must lie in [0, 2*pi), got {v}")


def euler_to_rotation(e: EulerZYZ) -> Rotation:
    """Rotation for intrinsic Z-Y-Z angles."""
    return Rotation.about_z(e.alpha) * Rotation.about_y(e.beta) * Rotation.about_z(e.gamma)


def rotation_to_euler(r: Rotation, sym: SymmetrySpec) -> EulerZYZ:
    """Canonical Z-Y-Z decomposition, third angle reduced by the symmetry.

    The returned angles reconstruct r up to a symmetry of sym: gamma is
    wrapped into [0, 2*pi/k) for cyclic order k and forced to 0 for
    revolution objects. At gimbal lock (sin(beta) = 0) the z-spin goes to
    alpha, except that any part of it expressible as a symmetry is
    dropped, which for cyclic objects leaves the residue in gamma.
    """
    m = r.as_matrix()
    sin_beta = math.hypot(m[0, 2], m[1, 2])
    if sin_beta < _GIMBAL_TOL:
        if m[2, 2] > 0.0:  # beta = 0: pure z-spin
            spin = math.atan2(m[1, 0], m[0, 0])
            if sym.kind is SymmetryKind.REVOLUTION:
                return EulerZYZ(0.0, 0.0, 0.0, gimbal_lock=True)
            if sym.kind is SymmetryKind.CYCLIC:
                return EulerZYZ(0.0, 0.0, _wrap_angle(spin, sym.gamma_range), gimbal_lock=True)
            return EulerZYZ(_wrap_angle(spin, _TWO_PI), 0.0, 0.0, gimbal_lock=True)
        # beta = pi: R = Rz(spin) @ Ry(pi), gamma fixed to 0
        spin = math.atan2(-m[1, 0], -m[0, 0])
        return EulerZYZ(_wrap_angle(spin, _TWO_PI), math.pi, 0.0, gimbal_lock=True)

    alpha = math.atan2(m[1, 2], m[0, 2])
    beta = math.atan2(sin_beta, m[2, 2])
    gamma = math.atan2(m[2, 1], -m[2, 0])
    if sym.kind is SymmetryKind.REVOLUTION:
        gamma = 0.0
    else:
        gamma = _wrap_angle(gamma, sym.gamma_range)
    return EulerZYZ(_wrap_angle(alpha, _TWO_PI), _wrap_angle(beta, _TWO_PI), gamma)


@lru_cache(maxsize=32)
def _representative_matrices(kind: SymmetryKind, order: int, samples: int) -> np.ndarray:
    if kind is SymmetryKind.NONE:
        angles = np.zeros(1)
    elif kind is SymmetryKind.CYCLIC:
        angles = _TWO_PI * np.arange(order) / order
    else:
        angles = _TWO_PI * np.arange(samples) / samples
    c, s = np.cos(angles), np.sin(angles)
    mats = np.zeros((angles.size, 3, 3))
    mats[:, 0, 0] = c
    mats[:, 0, 1] = -s
    mats[:, 1, 0] = s
    mats[:, 1, 1] = c
    mats[:, 2, 2] = 1.0
    mats.setflags(write=False)
    return mats


def symmetry_representatives(
    sym: SymmetrySpec, revolution_samples: int = _REVOLUTION_SAMPLES
) -> list[Rotation]:
    """Rotations standing in for the symmetry group; identity comes first.

    Finite groups are returned exactly; a revolution axis is sampled at
    revolution_samples evenly spaced angles.
    """
    if revolution_samples < 1:
        raise ValueError("revolution_samples must be >= 1")
    mats = _representative_matrices(sym.kind, sym.order, revolution_samples)
    return [Rotation.from_matrix(m) for m in mats]


@dataclass(frozen=True)
class ShapeSphere:
    """One sphere of a sphere-set object shape, in the object frame."""

    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        c = np.asarray(self.center, dtype=float).reshape(3).copy()
        if not np.all(np.isfinite(c)):
            raise ValueError("sphere center must be finite")
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"sphere radius must be positive, got {self.radius}")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)


@dataclass(frozen=True)
class ObjectModel:
    """Object geometry plus its declared symmetry.

    surface_points feed the pose distance; they must fit inside the
    bounding sphere implied by diameter. additional_points are reference
    points some encodings project next to the origin; their placement has
    to respect the symmetry (on-axis for revolution, an orbit-invariant
    set for cyclic order k) so a pose and its symmetry-equivalents stay
    indistinguishable. shape_spheres give the renderable shape.
    """

    symmetry: SymmetrySpec
    diameter: float
    surface_points: np.ndarray
    additional_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    shape_spheres: tuple[ShapeSphere, ...] = ()
    name: str = "object"

    def __post_init__(self) -> None:
        if not (np.isfinite(self.diameter) and self.diameter > 0):
            raise ValueError(f"diameter must be positive, got {self.diameter}")
        pts = np.asarray(self.surface_points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"surface_points must be (N, 3), got {pts.shape}")
        if pts.shape[0] < 32:
            raise ValueError(f"need at least 32 surface points, got {pts.shape[0]}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("surface_points must be finite")
        radius = 0.5 * self.diameter
        norms = np.linalg.norm(pts, axis=1)
        if norms.max() > radius + 1e-9:
            raise ValueError(
                f"surface point at radius {norms.max():.6g} exceeds diameter/2 = {radius:.6g}"
            )
        extra = np.asarray(self.additional_points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(extra)):
            raise ValueError("additional_points must be finite")
        self._check_additional_points(extra, radius)
        for sphere in self.shape_spheres:
            reach = float(np.linalg.norm(sphere.center)) + sphere.radius
            if reach > radius + 1e-9:
                raise ValueError(
                    f"shape sphere reaches {reach:.6g}, outside diameter/2 = {radius:.6g}"
                )
        pts = pts.copy()
        pts.setflags(write=False)
        extra = extra.copy()
        extra.setflags(write=False)
        object.__setattr__(self, "surface_points", pts)
        object.__setattr__(self, "additional_points", extra)
        object.__setattr__(self, "shape_spheres", tuple(self.shape_spheres))

    def _check_additional_points(self, extra: np.ndarray, radius: float) -> None:
        if extra.size == 0:
            return
        if np.linalg.norm(extra, axis=1).max() > radius + 1e-9:
            raise ValueError("additional points must lie within diameter/2 of the origin")
        if self.symmetry.kind is SymmetryKind.REVOLUTION:
            off_axis = np.abs(extra[:, :2]).max()
            if off_axis > 1e-9:
                raise ValueError(
                    f"revolution objects need additional points on the z-axis, "
                    f"largest offset {off_axis:.3g}"
                )
        elif self.symmetry.kind is SymmetryKind.CYCLIC:
            step = _TWO_PI / self.symmetry.order
            c, s = math.cos(step), math.sin(step)
            rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
            rotated = extra @ rot.T
            # the rotated set must be the same set, point for point
            taken = [False] * len(extra)
            for rp in rotated:
                best, best_d = -1, math.inf
                for idx, p in enumerate(extra):
                    if taken[idx]:
                        continue
                    d = float(np.linalg.norm(rp - p))
                    if d < best_d:
                        best, best_d = idx, d
                if best < 0 or best_d > 1e-6:
                    raise ValueError(
                        "additional points of a cyclic object must map onto "
                        "themselves under one symmetry step"
                    )
                taken[best] = True


def _surface_points(model: ObjectModel) -> np.ndarray:
    pts = model.surface_points
    if pts.shape[0] == 0:
        raise ValueError("model has no surface points")
    return pts


def pose_distance(
    a: Pose,
    b: Pose,
    model: ObjectModel,
    revolution_samples: int = _REVOLUTION_SAMPLES,
) -> float:
    """RMS surface-point distance between two poses, minimised over symmetry.

    For each symmetry representative g the surface points are carried
    through (Ra*g, ta) and (Rb, tb); the smallest RMS mismatch wins. The
    result is a pseudo-metric (exact for finite symmetry groups, sampled
    for revolution axes) expressed in the same length unit as the model.
    """
    pts = _surface_points(model)
    reps = _representative_matrices(model.symmetry.kind, model.symmetry.order, revolution_samples)
    ra = a.rotation.as_matrix() @ reps  # (M, 3, 3)
    pa = np.einsum("mij,nj->mni", ra, pts) + a.translation
    pb = pts @ b.rotation.as_matrix().T + b.translation
    d2 = np.square(pa - pb).sum(axis=2).mean(axis=1)
    d = math.sqrt(max(0.0, float(d2.min())))
    scale = 1.0 + float(np.linalg.norm(a.translation)) + float(np.linalg.norm(b.translation))
    if d <= _ZERO_SNAP * scale:
        return 0.0
    return d


def pose_distance_matrix(
    poses_a: Sequence[Pose],
    poses_b: Sequence[Pose],
    model: ObjectModel,
    revolution_samples: int = _REVOLUTION_SAMPLES,
) -> np.ndarray:
    """All-pairs pose_distance, vectorised; rows index poses_a."""
    na, nb = len(poses_a), len(poses_b)
    if na == 0 or nb == 0:
        return np.zeros((na, nb))
    pts = _surface_points(model)
    n = pts.shape[0]
    reps = _representative_matrices(model.symmetry.kind, model.symmetry.order, revolution_samples)

    rb = np.stack([p.rotation.as_matrix() for p in poses_b])
    tb = np.stack([p.translation for p in poses_b])
    flat_b = (np.einsum("bij,nj->bni", rb, pts) + tb[:, None, :]).reshape(nb, 3 * n)

    ra = np.stack([p.rotation.as_matrix() for p in poses_a])
    ta = np.stack([p.translation for p in poses_a])
    ra_sym = np.einsum("aij,mjk->amik", ra, reps)
    flat_a = (np.einsum("amik,nk->amni", ra_sym, pts) + ta[:, None, None, :]).reshape(
        na, reps.shape[0], 3 * n
    )

    sq_a = np.square(flat_a).sum(axis=2)
    sq_b = np.square(flat_b).sum(axis=1)
    cross = np.einsum("amf,bf->amb", flat_a, flat_b)
    d2 = (sq_a[:, :, None] - 2.0 * cross + sq_b[None, None, :]) / n
    np.clip(d2, 0.0, None, out=d2)
    d = np.sqrt(d2.min(axis=1))
    scale = 1.0 + np.linalg.norm(ta, axis=1)[:, None] + np.linalg.norm(tb, axis=1)[None, :]
    d[d <= _ZERO_SNAP * scale] = 0.0
    return d


def average_poses(
    poses: Sequence[Pose],
    weights: Sequence[float],
    model: ObjectModel,
    revolution_samples: int = _REVOLUTION_SAMPLES,
) -> Pose:
    """Weighted mean pose, symmetry-aware.

    Each rotation is first aligned to the first pose by its closest
    symmetry representative (ties take the lowest representative index),
    quaternions are sign-aligned against the first and averaged in the
    chordal sense; translations average directly.
    """
    if len(poses) == 0:
        raise ValueError("cannot average zero poses")
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(poses),):
        raise ValueError(f"need one weight per pose, got {w.shape} for {len(poses)} poses")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = float(w.sum())
    if total <= 0:
        raise ValueError("weights must not all be zero")

    pts = _surface_points(model)
    reps = _representative_matrices(model.symmetry.kind, model.symmetry.order, revolution_samples)
    ref = poses[0].rotation.as_matrix()
    ref_pts = pts @ ref.T

    quats = np.zeros((len(poses), 4))
    for idx, pose in enumerate(poses):
        cand = np.einsum("mij,nj->mni", pose.rotation.as_matrix() @ reps, pts)
        d2 = np.square(cand - ref_pts).sum(axis=2).mean(axis=1)
        g = int(d2.argmin())
        aligned = pose.rotation * Rotation.from_matrix(reps[g])
        quats[idx] = aligned.q
    signs = np.where(quats @ quats[0] < 0.0, -1.0, 1.0)
    mean_q = (quats * (signs * w)[:, None]).sum(axis=0)
    norm = float(np.linalg.norm(mean_q))
    if norm < 1e-12:
        mean_q = quats[0]  # degenerate spread, fall back to the reference
    rotation = Rotation.from_quat(mean_q)
    translation = (np.stack([p.translation for p in poses]) * w[:, None]).sum(axis=0) / total
    return Pose(rotation, translation)
