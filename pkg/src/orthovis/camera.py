"""Pinhole camera pose and projection.

The camera looks down +z of its own frame, the principal point sits at the
image center and pixels are square. Model points map to the camera frame via
``p_cam = R(rotation) @ p + translation``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

N_PARAMS = 10
FOCAL = slice(0, 1)
ROTATION = slice(1, 4)
TRANSLATION = slice(4, 7)
JAW = slice(7, 10)


def canonical_rotvec(rvec) -> np.ndarray:
    r = np.asarray(rvec, dtype=np.float64).reshape(3)
    angle = float(np.linalg.norm(r))
    if angle < math.pi:
        return r.copy()
    axis = r / angle
    angle = math.fmod(angle, 2 * math.pi)
    if angle > math.pi:
        axis, angle = -axis, 2 * math.pi - angle
    return axis * angle


def rotation_matrix(rvec) -> np.ndarray:
    """Rodrigues' formula for an axis-angle vector."""
    r = np.asarray(rvec, dtype=np.float64).reshape(3)
    theta = math.sqrt(float(r @ r))
    if theta < 1e-12:
        k = np.array([[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]])
        return np.eye(3) + k
    x, y, z = r / theta
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


def rotation_angle_between(ra, rb) -> float:
    """Geodesic distance in radians between two axis-angle rotations."""
    rel = rotation_matrix(ra).T @ rotation_matrix(rb)
    c = (np.trace(rel) - 1.0) / 2.0
    # acos is ill-conditioned near 0; use the skew part for small angles.
    s = 0.5 * np.linalg.norm([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]])
    return math.atan2(s, c)


@dataclass(frozen=True, eq=False)
class PoseParams:
    focal: float
    rotation: np.ndarray
    translation: np.ndarray
    jaw_offset: np.ndarray

    def __post_init__(self):
        focal = float(self.focal)
        if not focal > 0 or not math.isfinite(focal):
            raise ValueError(f"focal must be positive and finite, got {self.focal}")
        object.__setattr__(self, "focal", focal)
        for name in ("rotation", "translation", "jaw_offset"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(3)
            if name == "rotation":
                v = canonical_rotvec(v)
            v = v.copy()
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @classmethod
    def from_vector(cls, theta) -> "PoseParams":
        theta = np.asarray(theta, dtype=np.float64).reshape(N_PARAMS)
        return cls(theta[0], theta[ROTATION], theta[TRANSLATION], theta[JAW])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.focal], self.rotation, self.translation, self.jaw_offset])

    @property
    def matrix(self) -> np.ndarray:
        return rotation_matrix(self.rotation)

    def replace(self, **changes) -> "PoseParams":
        fields = dict(focal=self.focal, rotation=self.rotation,
                      translation=self.translation, jaw_offset=self.jaw_offset)
        fields.update(changes)
        return PoseParams(**fields)

    def to_dict(self) -> dict:
        return {
            "focal": self.focal,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "jaw_offset": self.jaw_offset.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PoseParams":
        return cls(d["focal"], d["rotation"], d["translation"], d.get("jaw_offset", [0.0, 0.0, 0.0]))

    def __eq__(self, other):
        if not isinstance(other, PoseParams):
            return NotImplemented
        return bool(np.array_equal(self.to_vector(), other.to_vector()))

    def __repr__(self):
        return (f"PoseParams(focal={self.focal:.6g}, rotation={self.rotation.tolist()}, "
                f"translation={self.translation.tolist()}, jaw_offset={self.jaw_offset.tolist()})")


def project_points(pose: PoseParams, points, size=(256, 256)):
    """Project model-frame points.

    Returns ``(uvz, behind)``: an (N, 3) array of pixel column, pixel row and
    camera depth, plus a boolean flag for points with ``z_cam <= 0``. The
    jaw offset is not applied here; points are taken as already placed.
    ``size`` is ``(width, height)``.
    """
    w, h = size
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = p @ pose.matrix.T + pose.translation
    z = cam[:, 2]
    behind = z <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = pose.focal * cam[:, 0] / z + (w - 1) / 2.0
        v = pose.focal * cam[:, 1] / z + (h - 1) / 2.0
    u[behind] = np.nan
    v[behind] = np.nan
    return np.column_stack([u, v, z]), behind
