"""Synthetic dental arches and ground-truth fitting cases.

Model frame convention used here: x to the patient's left as seen in the
photo (image right), y down, z away from the viewer. Upper teeth have
negative y, incisors sit nearest the camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .camera import PoseParams, rotation_angle_between, rotation_matrix
from .render import RenderOptions, depth_to_mask, render_depth, render_stage
from .teeth import TeethModel, Tooth, TreatmentSeries, model_bounds, scene_diagonal


@dataclass(frozen=True)
class ArchSpec:
    teeth_per_jaw: int = 14
    arch_width: float = 50.0
    arch_depth: float = 40.0
    tooth_size: tuple = (7.0, 9.0, 7.0)
    jaw_gap: float = 1.0
    seed: int = 0
    subdivisions: int = 4
    size_jitter: float = 0.08
    angle_jitter_deg: float = 3.0

    def __post_init__(self):
        if not 1 <= self.teeth_per_jaw <= 16:
            raise ValueError("teeth_per_jaw must be in 1..16")
        if self.arch_width <= 0 or self.arch_depth < 0 or self.jaw_gap < 0:
            raise ValueError("arch dimensions must be positive")
        if len(self.tooth_size) != 3 or min(self.tooth_size) <= 0:
            raise ValueError("tooth_size must be three positive extents")
        if self.subdivisions < 1:
            raise ValueError("subdivisions must be >= 1")


def rounded_box(size, subdivisions: int = 4, roundness: float = 0.35):
    """Closed triangle mesh of a box with rounded edges, centered at the origin."""
    n = subdivisions
    half = np.asarray(size, dtype=np.float64) / 2.0
    radius = roundness * half.min()
    inner = half - radius
    g = np.linspace(-1.0, 1.0, n + 1)
    a, b = np.meshgrid(g, g, indexing="ij")
    a, b = a.ravel(), b.ravel()
    one = np.ones_like(a)
    faces = []
    verts = []
    # Each face gets its own grid; seam vertices are merged below.
    for axis in range(3):
        for sign in (-1.0, 1.0):
            q = np.empty((len(a), 3))
            q[:, axis] = sign * one
            q[:, (axis + 1) % 3] = a
            q[:, (axis + 2) % 3] = b
            base = sum(len(v) for v in verts)
            verts.append(q)
            for i in range(n):
                for j in range(n):
                    v00 = base + i * (n + 1) + j
                    v01 = v00 + 1
                    v10 = v00 + n + 1
                    v11 = v10 + 1
                    if sign > 0:
                        faces.append((v00, v10, v11))
                        faces.append((v00, v11, v01))
                    else:
                        faces.append((v00, v11, v10))
                        faces.append((v00, v01, v11))
    q = np.concatenate(verts)
    uniq, inverse = np.unique(q, axis=0, return_inverse=True)
    tris = inverse.reshape(-1)[np.asarray(faces)]
    p = uniq * half
    c = np.clip(p, -inner, inner)
    d = p - c
    norm = np.linalg.norm(d, axis=1, keepdims=True)
    p = c + radius * d / np.where(norm > 0, norm, 1.0)
    return p, tris


def _arc_positions(width: float, depth: float, count: int, span: float):
    """Points equally spaced by arc length along z = depth * (2x / width)^2, |x| <= span / 2."""
    xs = np.linspace(-span / 2, span / 2, 4001)
    zs = depth * (2 * xs / width) ** 2
    seg = np.hypot(np.diff(xs), np.diff(zs))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if count == 1:
        targets = np.array([s[-1] / 2])
    else:
        targets = np.linspace(0.0, s[-1], count)
    x = np.interp(targets, s, xs)
    z = depth * (2 * x / width) ** 2
    slope = 8 * depth * x / width**2
    return x, z, np.arctan(slope), targets - s[-1] / 2


def _fdi_numbers(arc_offsets, upper: bool):
    # Patient's right shows on the image left (negative x): quadrants 1 and 4.
    right = arc_offsets <= 0
    ids = np.zeros(len(arc_offsets), dtype=int)
    for side_right in (True, False):
        sel = np.flatnonzero(right == side_right)
        rank = np.argsort(np.abs(arc_offsets[sel]), kind="stable")
        if upper:
            quadrant = 1 if side_right else 2
        else:
            quadrant = 4 if side_right else 3
        for r, idx in enumerate(sel[rank]):
            ids[idx] = quadrant * 10 + r + 1
    return ids


def make_arch_model(spec: ArchSpec = ArchSpec(), stage_index: int = 0) -> TeethModel:
    rng = np.random.default_rng(spec.seed)
    size = np.asarray(spec.tooth_size, dtype=np.float64)
    # arch_width is the outer width, so the end teeth are centered half a tooth inside it.
    span = max(spec.arch_width - size[0], 0.0)
    x, z, phi, offsets = _arc_positions(spec.arch_width, spec.arch_depth, spec.teeth_per_jaw, span)
    teeth = []
    for upper in (True, False):
        ids = _fdi_numbers(offsets, upper)
        for k in range(spec.teeth_per_jaw):
            dims = size * (1.0 + spec.size_jitter * rng.uniform(-1, 1, 3))
            jitter = np.deg2rad(spec.angle_jitter_deg) * rng.uniform(-1, 1, 3)
            verts, tris = rounded_box(dims, spec.subdivisions)
            # Width axis follows the arch tangent.
            rot = rotation_matrix([0.0, -phi[k], 0.0]) @ rotation_matrix(jitter)
            y = -(spec.jaw_gap / 2 + dims[1] / 2)
            if not upper:
                y = -y
            center = np.array([x[k], y, z[k]])
            teeth.append(Tooth(int(ids[k]), verts @ rot.T + center, tris))
    model = TeethModel(tuple(teeth), stage_index)
    lo, hi = model_bounds(model)
    shift = -(lo + hi) / 2
    return TeethModel(tuple(t.translated(shift) for t in model.teeth), stage_index)


def default_pose(model: TeethModel, size=(256, 256), focal_factor: float = 1.0) -> PoseParams:
    """Camera looking at the model's box center along +z, framing it at 80% of the image.

    Identity rotation, zero jaw offset, focal ``focal_factor * height``. The
    larger of the box's width and height is what gets framed.
    """
    w, h = size
    lo, hi = model_bounds(model)
    center = (lo + hi) / 2
    extent = max(hi[0] - lo[0], hi[1] - lo[1])
    focal = focal_factor * h
    distance = focal * extent / (0.8 * min(w, h))
    translation = np.array([0.0, 0.0, distance]) - center
    return PoseParams(focal, [0.0, 0.0, 0.0], translation, [0.0, 0.0, 0.0])


@dataclass(frozen=True)
class PoseRanges:
    """Uniform sampling box for ground-truth poses around :func:`default_pose`.

    Translation and jaw ranges are fractions of the scene diagonal.
    """

    rotation_deg: float = 8.0
    translation_frac: float = 0.05
    focal_scale: tuple = (0.9, 1.1)
    jaw_frac: float = 0.02


@dataclass(frozen=True)
class Perturbation:
    """Bounds for an initial guess around a true pose (ball radii, focal factor range)."""

    rotation_deg: float = 5.0
    translation_frac: float = 0.05
    focal_scale: tuple = (0.9, 1.1)
    jaw_frac: float = 0.02


@dataclass(frozen=True, eq=False)
class SyntheticCase:
    series: TreatmentSeries
    true_pose: PoseParams
    target_silhouette: np.ndarray
    mouth_label: np.ndarray
    size: tuple = (256, 256)
    visibility_window: float = 0.5

    @property
    def scene_scale(self) -> float:
        return scene_diagonal(self.series[0])


def _uniform_ball(rng, radius):
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    return d * radius * rng.uniform(0.0, 1.0)


def perturb_pose(pose: PoseParams, scene_scale: float, rng,
                 bounds: Perturbation = Perturbation()) -> PoseParams:
    """Random initial guess: rotation composed with a random-axis turn of at most
    ``rotation_deg``, translation and jaw moved within balls, focal scaled."""
    delta = _uniform_ball(rng, np.deg2rad(bounds.rotation_deg))
    rot = (Rotation.from_rotvec(delta) * Rotation.from_rotvec(np.array(pose.rotation))).as_rotvec()
    return PoseParams(
        pose.focal * rng.uniform(*bounds.focal_scale),
        rot,
        pose.translation + _uniform_ball(rng, bounds.translation_frac * scene_scale),
        pose.jaw_offset + _uniform_ball(rng, bounds.jaw_frac * scene_scale),
    )


def move_some_teeth(model: TeethModel, rng, count: int = 3, shift: float = 1.0,
                    angle_deg: float = 5.0, stage_index: int = 1) -> TeethModel:
    """A later treatment stage: a few teeth shifted and tipped about their centroids."""
    chosen = set(rng.choice(len(model.teeth), size=min(count, len(model.teeth)), replace=False).tolist())
    teeth = []
    for k, t in enumerate(model.teeth):
        if k in chosen:
            c = t.vertices.mean(axis=0)
            rot = rotation_matrix(np.deg2rad(angle_deg) * rng.uniform(-1, 1, 3))
            move = shift * rng.uniform(-1, 1, 3)
            t = Tooth(t.id, (t.vertices - c) @ rot.T + c + move, t.triangles)
        teeth.append(t)
    return TeethModel(tuple(teeth), stage_index)


def mouth_label_from_mask(teeth_mask: np.ndarray, dilation: int = 8,
                          occluded_rows: float = 0.10) -> np.ndarray:
    """Dilated convex hull of the teeth mask with the top and bottom image rows cut away."""
    from skimage.morphology import convex_hull_image

    teeth_mask = np.asarray(teeth_mask) != 0
    if not teeth_mask.any():
        return np.zeros(teeth_mask.shape, dtype=np.uint8)
    hull = convex_hull_image(teeth_mask) | teeth_mask
    label = ndimage.distance_transform_edt(~hull) <= dilation
    h = label.shape[0]
    cut = int(round(occluded_rows * h))
    if cut:
        label[:cut] = False
        label[h - cut:] = False
    return label.astype(np.uint8)


def make_synthetic_case(spec: ArchSpec = ArchSpec(), pose_ranges: PoseRanges = PoseRanges(),
                        size=(256, 256), visibility_window: float = 0.5,
                        n_stages: int = 2, max_retries: int = 10) -> SyntheticCase:
    rng = np.random.default_rng([spec.seed, 7])
    stage0 = make_arch_model(spec, 0)
    stages = [stage0]
    for i in range(1, n_stages):
        stages.append(move_some_teeth(stages[-1], rng, stage_index=i))
    series = TreatmentSeries(tuple(stages))
    base = default_pose(stage0, size)
    diag = scene_diagonal(stage0)
    opts = RenderOptions(size=size, visibility_window=visibility_window)
    for _ in range(max_retries):
        r = pose_ranges
        pose = PoseParams(
            base.focal * rng.uniform(*r.focal_scale),
            np.deg2rad(r.rotation_deg) * rng.uniform(-1, 1, 3),
            base.translation + r.translation_frac * diag * rng.uniform(-1, 1, 3),
            r.jaw_frac * diag * rng.uniform(-1, 1, 3),
        )
        teeth_mask = depth_to_mask(render_depth(pose, stage0, size, visibility_window))
        label = mouth_label_from_mask(teeth_mask)
        if not label.any():
            continue
        target, _ = render_stage(pose, stage0, label, opts)
        if target.any():
            return SyntheticCase(series, pose, target, label, tuple(size), visibility_window)
    raise RuntimeError(f"no usable pose after {max_retries} attempts")


@dataclass(frozen=True)
class RecoveryReport:
    rotation_error_deg: float
    translation_error: float
    focal_error: float
    jaw_error: float
    thresholds: tuple = (2.0, 0.02, 0.02, 0.02)

    @property
    def passed(self) -> bool:
        rot, trans, focal, jaw = self.thresholds
        return (self.rotation_error_deg <= rot and self.translation_error <= trans
                and self.focal_error <= focal and self.jaw_error <= jaw)

    def to_dict(self) -> dict:
        return {"rotation_error_deg": self.rotation_error_deg,
                "translation_error": self.translation_error,
                "focal_error": self.focal_error, "jaw_error": self.jaw_error,
                "passed": self.passed}


def evaluate_recovery(result, truth: PoseParams, scene_scale: float,
                      thresholds=(2.0, 0.02, 0.02, 0.02)) -> RecoveryReport:
    """Pose errors relative to ``truth``. ``result`` is a FitResult or a PoseParams.

    Translation and jaw errors are Euclidean distances over ``scene_scale``;
    focal error is relative.
    """
    pose = getattr(result, "pose", result)
    return RecoveryReport(
        math.degrees(rotation_angle_between(pose.rotation, truth.rotation)),
        float(np.linalg.norm(pose.translation - truth.translation) / scene_scale),
        abs(pose.focal - truth.focal) / truth.focal,
        float(np.linalg.norm(pose.jaw_offset - truth.jaw_offset) / scene_scale),
        tuple(thresholds),
    )
