"""Rotation representations, conversions, and the binned-angle machinery.

Conventions used throughout the package:

* World frame is right-handed with x = optical axis at zero rotation,
  y = left, z = up.  Yaw rotates about z, pitch about y, roll about x.
* A full orientation is composed as R(roll, pitch, yaw) = Rx * Ry * Rz.
* All angles cross API boundaries in degrees and live in [-180, 180).
* Relative poses between two upright cameras are parameterized as
  (pitch of image 1, pitch of image 2, relative yaw).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

ORTHONORMALITY_TOL = 1e-9


def wrap_angle(deg: float) -> float:
    """Wrap an angle in degrees into [-180, 180)."""
    return float((deg + 180.0) % 360.0 - 180.0)


def rot_x(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def is_rotation_matrix(m: np.ndarray, tol: float = ORTHONORMALITY_TOL) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    if not np.allclose(m.T @ m, np.eye(3), atol=tol, rtol=0.0):
        return False
    return abs(np.linalg.det(m) - 1.0) <= tol


def check_rotation_matrix(m: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Return m as a float array, raising ValueError if it is not a rotation."""
    m = np.asarray(m, dtype=float)
    if not is_rotation_matrix(m, tol=tol):
        raise ValueError("expected a 3x3 special-orthogonal matrix")
    return m


@dataclass(frozen=True)
class EulerTriple:
    """Roll / pitch / yaw angles in degrees, each in [-180, 180)."""

    alpha: float  # roll, about the optical axis
    beta: float   # pitch, about the lateral axis
    gamma: float  # yaw, about the vertical axis

    def wrapped(self) -> "EulerTriple":
        return EulerTriple(wrap_angle(self.alpha), wrap_angle(self.beta), wrap_angle(self.gamma))


@dataclass(frozen=True)
class RelPoseParam:
    """Relative pose of two zero-roll cameras: absolute pitches plus relative yaw."""

    beta1: float
    beta2: float
    delta_gamma: float


class OverlapClass(Enum):
    LARGE = "Large"
    SMALL = "Small"
    NONE = "None"


@dataclass(frozen=True)
class AngleBins:
    """Uniform 1-degree bins over [-180, 180), half-open on the right."""

    n_bins: int = 360
    lo: float = -180.0
    hi: float = 180.0

    def __post_init__(self):
        if (self.hi - self.lo) / self.n_bins != 1.0:
            raise ValueError("bin width must be exactly 1 degree")

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.n_bins


DEFAULT_BINS = AngleBins()


def euler_to_matrix(e: EulerTriple) -> np.ndarray:
    """Compose the rotation Rx(roll) * Ry(pitch) * Rz(yaw)."""
    for v in (e.alpha, e.beta, e.gamma):
        if not math.isfinite(v):
            raise ValueError("Euler angles must be finite")
    return rot_x(e.alpha) @ rot_y(e.beta) @ rot_z(e.gamma)


def matrix_to_euler(m: np.ndarray) -> EulerTriple:
    """Decompose a rotation into the Rx*Ry*Rz Euler angles.

    At gimbal lock (|pitch| = 90 degrees) yaw and roll are coupled; the
    canonical solution with yaw = 0 is returned.
    """
    m = check_rotation_matrix(m)
    sb = float(np.clip(m[0, 2], -1.0, 1.0))
    cb = math.hypot(m[0, 0], m[0, 1])  # |cos(beta)|, well conditioned near the poles
    beta = math.degrees(math.atan2(sb, cb))
    if cb < 1e-9:
        # Gimbal lock: only alpha +/- gamma is determined. Fix gamma = 0.
        gamma = 0.0
        if sb > 0:
            alpha = math.degrees(math.atan2(m[1, 0], m[1, 1]))
        else:
            alpha = math.degrees(math.atan2(-m[1, 0], m[1, 1]))
    else:
        alpha = math.degrees(math.atan2(-m[1, 2], m[2, 2]))
        gamma = math.degrees(math.atan2(-m[0, 1], m[0, 0]))
    return EulerTriple(wrap_angle(alpha), wrap_angle(beta), wrap_angle(gamma))


def relative_from_params(p: RelPoseParam) -> np.ndarray:
    """Relative rotation of a camera pair: R(0, beta2, dgamma) * R(0, beta1, 0)^T."""
    r2 = euler_to_matrix(EulerTriple(0.0, p.beta2, p.delta_gamma))
    r1 = euler_to_matrix(EulerTriple(0.0, p.beta1, 0.0))
    return r2 @ r1.T


def geodesic_error(r: np.ndarray, r_star: np.ndarray) -> float:
    """Angle in degrees of the rotation taking r to r_star, in [0, 180].

    The trace argument is clamped to [-1, 1] to absorb floating-point drift.
    """
    r = np.asarray(r, dtype=float)
    r_star = np.asarray(r_star, dtype=float)
    c = (np.trace(r.T @ r_star) - 1.0) / 2.0
    return math.degrees(math.acos(float(np.clip(c, -1.0, 1.0))))


def angle_to_bin(angle: float, bins: AngleBins = DEFAULT_BINS) -> int:
    """Index of the half-open 1-degree bin containing the wrapped angle."""
    wrapped = wrap_angle(angle)
    idx = int(math.floor(wrapped - bins.lo))
    return min(max(idx, 0), bins.n_bins - 1)


def bin_to_angle(idx: int, bins: AngleBins = DEFAULT_BINS) -> float:
    """Center angle of a bin index (half-degree centers)."""
    if not 0 <= idx < bins.n_bins:
        raise ValueError(f"bin index {idx} outside [0, {bins.n_bins})")
    return bins.lo + idx + bins.width / 2.0


def overlap_class(r_star: np.ndarray) -> OverlapClass:
    """Classify a relative rotation by its geodesic angle.

    Up to 45 degrees the views overlap strongly, between 45 and 90 a 90-degree
    field of view still shares content, and beyond 90 the pair is disjoint.
    """
    theta = geodesic_error(np.eye(3), r_star)
    # Inclusive boundaries, padded so exact 45/90-degree rotations are not
    # pushed across by the last-ulp noise of the trace formula.
    if theta <= 45.0 + 1e-9:
        return OverlapClass.LARGE
    if theta <= 90.0 + 1e-9:
        return OverlapClass.SMALL
    return OverlapClass.NONE


def assert_distribution(probs: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or probs.shape[0] != DEFAULT_BINS.n_bins:
        raise ValueError("expected a length-360 probability vector")
    if np.any(probs < 0) or abs(float(probs.sum()) - 1.0) > tol:
        raise ValueError("probabilities must be non-negative and sum to 1")
    return probs


def top_k_angles(probs: np.ndarray, k: int, bins: AngleBins = DEFAULT_BINS) -> list[tuple[float, float]]:
    """The k most probable bin centers, ties broken toward the lower bin index."""
    probs = np.asarray(probs, dtype=float)
    if k < 1 or k > bins.n_bins:
        raise ValueError(f"k must lie in [1, {bins.n_bins}]")
    # Stable sort on negated probabilities keeps lower indices first on ties.
    order = np.argsort(-probs, kind="stable")[:k]
    return [(bin_to_angle(int(i), bins), float(probs[i])) for i in order]


def rotation_to_json(m: np.ndarray) -> list[float]:
    """Row-major 9-element list, the wire format for rotations."""
    return [float(v) for v in np.asarray(m, dtype=float).reshape(-1)]


def rotation_from_json(values) -> np.ndarray:
    m = np.asarray(values, dtype=float).reshape(3, 3)
    return check_rotation_matrix(m)
