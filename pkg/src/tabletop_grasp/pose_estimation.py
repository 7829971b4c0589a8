"""Planar object pose from a binary pixel mask.

The pose of a mask is its centroid plus the orientation of the principal
axis of the pixel scatter.  Everything here is a pure function of its
inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

HALF_PI = 0.5 * math.pi

# relative size of the eigenvalue gap below which the spectrum counts as a tie
DEGENERATE_RTOL = 1e-12


class PoseError(ValueError):
    """Base class for pose-estimation failures."""


class EmptyMask(PoseError):
    pass


class DegenerateDirection(PoseError):
    pass


class InvalidReference(PoseError):
    pass


class SingularCalibration(PoseError):
    pass


@dataclass(frozen=True)
class PixelMask:
    """Visible silhouette of one object instance.

    ``points`` is an ``(n, 2)`` integer array of ``(x, y)`` pixel
    coordinates, x being the column and y the row.
    """

    points: np.ndarray
    class_label: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.size == 0:
            pts = np.zeros((0, 2), dtype=np.int64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"mask points must have shape (n, 2), got {pts.shape}")
        if not np.issubdtype(pts.dtype, np.integer):
            if not np.all(pts == np.round(pts)):
                raise ValueError("mask points must be integer pixel coordinates")
            pts = pts.astype(np.int64)
        if len(pts) > 1 and len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("mask contains duplicate points")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @classmethod
    def from_image(cls, image: np.ndarray, class_label: int = 0) -> "PixelMask":
        """Collect every nonzero pixel of a 2-D image."""
        rows, cols = np.nonzero(np.asarray(image))
        return cls(np.column_stack([cols, rows]), class_label)

    def to_image(self, shape: Tuple[int, int]) -> np.ndarray:
        img = np.zeros(shape, dtype=np.uint8)
        if len(self.points):
            img[self.points[:, 1], self.points[:, 0]] = 255
        return img


@dataclass(frozen=True)
class Sym2Matrix:
    """Symmetric 2x2 matrix ``[[a, b], [b, d]]``."""

    a: float
    b: float
    d: float

    def as_array(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.b, self.d]])


@dataclass(frozen=True)
class ObjectPose:
    center: Tuple[float, float]
    theta: float
    eigenvalues: Tuple[float, float] = (0.0, 0.0)
    degenerate: bool = False

    @property
    def x(self) -> float:
        return self.center[0]

    @property
    def y(self) -> float:
        return self.center[1]

    def covariance(self) -> np.ndarray:
        """Rebuild the scatter matrix from the eigen-pair representation."""
        l1, l2 = self.eigenvalues
        a1 = np.array([math.cos(self.theta), math.sin(self.theta)])
        a2 = np.array([-a1[1], a1[0]])
        return l1 * np.outer(a1, a1) + l2 * np.outer(a2, a2)


@dataclass(frozen=True)
class PrincipalComponent:
    direction: np.ndarray
    projected_points: Optional[np.ndarray] = field(default=None, repr=False)


MaskLike = Union[PixelMask, np.ndarray, Sequence[Tuple[float, float]]]


def _as_points(mask: MaskLike) -> np.ndarray:
    pts = mask.points if isinstance(mask, PixelMask) else mask
    pts = np.asarray(pts, dtype=float)
    if pts.size == 0:
        raise EmptyMask("mask has no points")
    return pts.reshape(-1, 2)


def fold_angle(theta: float) -> float:
    """Reduce a line angle (period pi) to the interval (-pi/2, pi/2]."""
    t = math.remainder(theta, math.pi)
    if t <= -HALF_PI:
        t += math.pi
    return t


def mask_centroid(mask: MaskLike) -> Tuple[float, float]:
    pts = _as_points(mask)
    cx, cy = pts.mean(axis=0)
    return float(cx), float(cy)


def covariance_2x2(mask: MaskLike, center: Tuple[float, float]) -> Sym2Matrix:
    """Population covariance (1/n normalisation) of the mask residuals."""
    res = _as_points(mask) - np.asarray(center, dtype=float)
    n = len(res)
    a = float(res[:, 0] @ res[:, 0]) / n
    b = float(res[:, 0] @ res[:, 1]) / n
    d = float(res[:, 1] @ res[:, 1]) / n
    return Sym2Matrix(a, b, d)


def eigen_sym2(m: Sym2Matrix):
    """Closed-form eigen-decomposition of a symmetric 2x2 matrix.

    Returns
    -------
    eigenvalues : tuple
        ``(l1, l2)`` with ``l1 >= l2``.
    eigenvectors : tuple of ndarray
        Unit vectors ``(alpha1, alpha2)``; ``alpha2`` is ``alpha1`` rotated
        by +90 degrees.  On a tied spectrum ``alpha1 = (1, 0)``.
    """
    half_tr = 0.5 * (m.a + m.d)
    # sqrt(tr^2/4 - det) written without cancellation
    radius = math.hypot(0.5 * (m.a - m.d), m.b)
    l1, l2 = half_tr + radius, half_tr - radius
    scale = max(abs(m.a), abs(m.b), abs(m.d))
    if radius <= DEGENERATE_RTOL * scale or radius == 0.0:
        phi = 0.0
    else:
        phi = 0.5 * math.atan2(2.0 * m.b, m.a - m.d)
    a1 = np.array([math.cos(phi), math.sin(phi)])
    a2 = np.array([-a1[1], a1[0]])
    return (l1, l2), (a1, a2)


def is_degenerate_spectrum(l1: float, l2: float) -> bool:
    return (l1 - l2) <= DEGENERATE_RTOL * max(abs(l1), abs(l2)) or l1 == l2


def principal_angle(direction) -> float:
    """Angle of the line spanned by ``direction``, in (-pi/2, pi/2]."""
    vx, vy = (float(c) for c in np.asarray(direction, dtype=float).ravel()[:2])
    if math.hypot(vx, vy) < 1e-300:
        raise DegenerateDirection("zero direction vector has no angle")
    return fold_angle(math.atan2(vy, vx))


def estimate_pose(mask: MaskLike, debug: bool = False):
    """Centroid and principal-axis orientation of a pixel mask.

    With ``debug=True`` a ``(pose, PrincipalComponent)`` pair is returned,
    the second item holding every residual projected onto the principal
    line through the centroid.
    """
    pts = _as_points(mask)
    center = mask_centroid(pts)
    cov = covariance_2x2(pts, center)
    (l1, l2), (a1, _) = eigen_sym2(cov)
    l2 = max(l2, 0.0)
    l1 = max(l1, l2)
    degenerate = len(pts) < 2 or is_degenerate_spectrum(l1, l2)
    theta = 0.0 if degenerate else principal_angle(a1)
    pose = ObjectPose(center, theta, (l1, l2), degenerate)
    if not debug:
        return pose
    c = np.asarray(center)
    projected = (pts - c) @ np.outer(a1, a1) + c
    return pose, PrincipalComponent(a1, projected)


def mask_ratio(visible: MaskLike, full_area: int) -> float:
    """Visible pixel count over the unoccluded reference count.

    Counts above ``full_area`` by at most 1% are treated as rasterisation
    jitter and clamp to 1.0.
    """
    if full_area <= 0:
        raise InvalidReference(f"full_area must be positive, got {full_area}")
    m = len(visible.points) if isinstance(visible, PixelMask) else len(np.asarray(visible).reshape(-1, 2))
    r = m / full_area
    if r > 1.0:
        if m > 1.01 * full_area:
            raise InvalidReference(
                f"visible count {m} exceeds reference area {full_area} by more than 1%"
            )
        r = 1.0
    return r


@dataclass(frozen=True)
class AffineCalibration:
    """Affine map ``world = matrix @ pixel + offset``."""

    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.matrix, dtype=float).reshape(2, 2)
        b = np.asarray(self.offset, dtype=float).reshape(2)
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "offset", b)

    @classmethod
    def identity(cls) -> "AffineCalibration":
        return cls(np.eye(2), np.zeros(2))

    def apply(self, xy) -> np.ndarray:
        return self.matrix @ np.asarray(xy, dtype=float) + self.offset

    def inverse(self) -> "AffineCalibration":
        inv = np.linalg.inv(self.matrix)
        return AffineCalibration(inv, -inv @ self.offset)


def pixel_to_world(calib: AffineCalibration, pixel_pose: ObjectPose) -> ObjectPose:
    """Map a pixel-frame pose through an affine camera calibration.

    The scatter matrix is pushed through the linear part and re-decomposed,
    so the orientation stays the principal axis of the mapped pixel cloud
    even for anisotropic or mirroring maps.
    """
    A = calib.matrix
    det = float(np.linalg.det(A))
    if not np.all(np.isfinite(A)) or abs(det) < 1e-15 * max(1.0, float(np.abs(A).max()) ** 2):
        raise SingularCalibration(f"calibration matrix is singular (det={det:g})")
    cx, cy = calib.apply(pixel_pose.center)
    center = (float(cx), float(cy))
    if pixel_pose.degenerate or pixel_pose.eigenvalues[0] <= 0.0:
        # no usable spectrum: carry the mapped reference axis
        d = A @ np.array([math.cos(pixel_pose.theta), math.sin(pixel_pose.theta)])
        l1, l2 = (lam * abs(det) for lam in pixel_pose.eigenvalues)
        return ObjectPose(center, principal_angle(d), (l1, l2), pixel_pose.degenerate)
    cov = A @ pixel_pose.covariance() @ A.T
    (l1, l2), (a1, _) = eigen_sym2(Sym2Matrix(cov[0, 0], 0.5 * (cov[0, 1] + cov[1, 0]), cov[1, 1]))
    l2 = max(l2, 0.0)
    if is_degenerate_spectrum(l1, l2):
        return ObjectPose(center, 0.0, (l1, l2), True)
    return ObjectPose(center, principal_angle(a1), (l1, l2), False)
