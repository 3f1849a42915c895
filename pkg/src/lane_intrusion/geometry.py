"""Pinhole camera model and world-frame reference for lane-relative position.

World frame: Z forward along the road, X lateral (right positive), Y down.
Lane markings run parallel to Z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_DEPTH_M = 1e-6


class PointBehindCamera(ValueError):
    """Raised when a point has camera-frame depth at or below ``MIN_DEPTH_M``."""


class DegenerateLane(ValueError):
    """Raised when the two marking positions coincide."""


@dataclass(frozen=True)
class CameraIntrinsics:
    f_x: float
    f_y: float
    u_0: float
    v_0: float

    def __post_init__(self):
        if not (self.f_x > 0 and self.f_y > 0):
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.f_x, 0.0, self.u_0], [0.0, self.f_y, self.v_0], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class CameraPose:
    """Camera position in the world frame (meters) and Euler angles (radians)."""

    x_c: float = 0.0
    y_c: float = 0.0
    z_c: float = 0.0
    theta_x: float = 0.0
    theta_y: float = 0.0
    theta_z: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x_c, self.y_c, self.z_c], dtype=float)

    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.theta_x, self.theta_y, self.theta_z)


@dataclass(frozen=True)
class WorldPoint:
    X_w: float
    Y_w: float
    Z_w: float

    def as_array(self) -> np.ndarray:
        return np.array([self.X_w, self.Y_w, self.Z_w], dtype=float)


@dataclass(frozen=True)
class ImagePoint:
    u: float
    v: float
    Z_c: float


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_matrix(theta_x: float, theta_y: float, theta_z: float) -> np.ndarray:
    """World-to-camera rotation ``R_z(theta_z) @ R_x(theta_x) @ R_y(theta_y)``."""
    return _rot_z(theta_z) @ _rot_x(theta_x) @ _rot_y(theta_y)


def world_to_camera(points, pose: CameraPose) -> np.ndarray:
    """Map world points of shape (..., 3) into the camera frame.

    The translation is ``-A @ C`` for camera centre ``C``, so the camera sits at
    the origin of its own frame.
    """
    pts = np.asarray(points, dtype=float)
    A = pose.rotation()
    return (pts - pose.position) @ A.T


def project_points(points, intr: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """Vectorised projection. Returns an array (..., 3) of ``(u, v, Z_c)``.

    Raises
    ------
    PointBehindCamera
        If any point has depth ``Z_c <= MIN_DEPTH_M``.
    """
    cam = world_to_camera(points, pose)
    z = cam[..., 2]
    if np.any(z <= MIN_DEPTH_M):
        raise PointBehindCamera(f"min camera depth {float(np.min(z)):.3g} m")
    u = (intr.f_x * cam[..., 0] + intr.u_0 * z) / z
    v = (intr.f_y * cam[..., 1] + intr.v_0 * z) / z
    return np.stack([u, v, z], axis=-1)


def project(p: WorldPoint, intr: CameraIntrinsics, pose: CameraPose) -> ImagePoint:
    u, v, z = project_points(p.as_array(), intr, pose)
    return ImagePoint(float(u), float(v), float(z))


def relative_position_world(X_o: float, X_1: float, X_2: float) -> float:
    """Lane-relative position of an object computed from world lateral coordinates.

    Zero at the lane centre, +/-0.5 on the markings, one unit per lane width.
    """
    if X_1 == X_2:
        raise DegenerateLane("marking positions coincide")
    return (2.0 * X_o - (X_1 + X_2)) / (2.0 * abs(X_1 - X_2))
