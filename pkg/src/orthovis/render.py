"""Tooth-id and depth shading on top of the shared z-buffer rasterizer.

All rasters are numpy arrays indexed ``[row, column]`` with the origin at the
top-left pixel. Sizes are given as ``(width, height)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from . import _kernels
from .camera import PoseParams
from .teeth import TeethModel

DEFAULT_SIZE = (256, 256)
DEFAULT_VISIBILITY_WINDOW = 0.5
DEPTH_FLOOR = 0.05


@dataclass(frozen=True)
class RenderOptions:
    size: tuple = DEFAULT_SIZE
    visibility_window: float = DEFAULT_VISIBILITY_WINDOW
    blur_sigma: float = 0.0
    depth_floor: float = DEPTH_FLOOR


class Modalities(NamedTuple):
    silhouette: np.ndarray
    mask: np.ndarray
    depth: np.ndarray


def line_gain(sigma: float) -> float:
    """Factor that gives a blurred one-pixel line the same peak as the unblurred line."""
    return math.sqrt(2 * math.pi) * sigma if sigma > 0 else 1.0


def gaussian_kernel(sigma: float, truncate: float = 4.0) -> np.ndarray:
    """1-D factor of the separable line-normalized Gaussian used for silhouettes.

    The outer product of two of these is the unit-sum 2-D Gaussian times
    :func:`line_gain`, so straight edges keep intensity ~1 at every sigma.
    """
    if sigma < 0:
        raise ValueError("blur sigma must be >= 0")
    if sigma == 0:
        return np.ones(1)
    radius = int(truncate * sigma + 0.5)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum() * math.sqrt(line_gain(sigma))


def blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Zero-padded line-normalized Gaussian blur; ``sigma == 0`` returns a float copy.

    Not clamped: callers clamp silhouettes to [0, 1] where thick edge bundles
    overlap.
    """
    image = np.asarray(image, dtype=np.float64)
    if sigma < 0:
        raise ValueError("blur sigma must be >= 0")
    if sigma == 0:
        return image.copy()
    out = ndimage.gaussian_filter(image, sigma, mode="constant", cval=0.0, truncate=4.0)
    return out * line_gain(sigma)


def _rasterize(pose: PoseParams, model: TeethModel, size, visibility_window):
    w, h = size
    label = np.zeros((h, w), dtype=np.int32)
    izbuf = np.zeros((h, w))
    packed = model.packed
    if len(packed.ids) == 0:
        return label, izbuf, packed
    theta = pose.to_vector()
    cam = np.empty_like(packed.vertices)
    include = np.empty(len(packed.ids), dtype=np.bool_)
    _kernels.camera_vertices(packed.vertices, packed.is_lower, theta, cam)
    _kernels.visible_teeth(cam, packed.vert_tooth, len(packed.ids), float(visibility_window), include)
    _kernels.rasterize(cam, packed.triangles, packed.tri_tooth, include, pose.focal, label, izbuf)
    return label, izbuf, packed


def render_id_map(pose: PoseParams, model: TeethModel, size=DEFAULT_SIZE,
                  visibility_window: float = DEFAULT_VISIBILITY_WINDOW) -> np.ndarray:
    """Per-pixel FDI id of the nearest visible tooth surface, 0 for background.

    The lower jaw is displaced by ``pose.jaw_offset`` first. Teeth whose
    nearest vertex lies deeper than ``visibility_window`` of the scene's depth
    range (measured from the front) are left out.
    """
    label, _, packed = _rasterize(pose, model, size, visibility_window)
    lut = np.concatenate([[0], packed.ids]).astype(np.int32)
    return lut[label]


def id_map_to_silhouette(idmap: np.ndarray, blur_sigma: float = 0.0) -> np.ndarray:
    idmap = np.asarray(idmap)
    h, w = idmap.shape
    edges = np.zeros((h, w))
    _kernels.edge_pixels(idmap.astype(np.int32), edges, 0, h - 1, 0, w - 1)
    return np.clip(blur(edges, blur_sigma), 0.0, 1.0)


def render_silhouette(pose: PoseParams, model: TeethModel, size=DEFAULT_SIZE,
                      visibility_window: float = DEFAULT_VISIBILITY_WINDOW,
                      blur_sigma: float = 0.0) -> np.ndarray:
    return id_map_to_silhouette(render_id_map(pose, model, size, visibility_window), blur_sigma)


def render_depth(pose: PoseParams, model: TeethModel, size=DEFAULT_SIZE,
                 visibility_window: float = DEFAULT_VISIBILITY_WINDOW,
                 depth_floor: float = DEPTH_FLOOR) -> np.ndarray:
    """White-to-dark depth shading: nearest covered surface 1.0, farthest ``depth_floor``."""
    label, izbuf, _ = _rasterize(pose, model, size, visibility_window)
    covered = label > 0
    out = np.zeros(label.shape)
    if not covered.any():
        return out
    d = 1.0 / izbuf[covered]
    d_near, d_far = d.min(), d.max()
    if d_far > d_near:
        shade = (d_far - d) / (d_far - d_near)
    else:
        shade = np.ones_like(d)
    out[covered] = np.maximum(depth_floor, shade)
    return out


def depth_to_mask(depth: np.ndarray) -> np.ndarray:
    return (np.asarray(depth) > 0).astype(np.uint8)


def _check_label(mouth_label, size):
    mouth_label = np.asarray(mouth_label)
    w, h = size
    if mouth_label.shape != (h, w):
        raise ValueError(f"mouth label is {mouth_label.shape[1]}x{mouth_label.shape[0]}, "
                         f"render size is {w}x{h}")
    return mouth_label != 0


def render_modalities(pose: PoseParams, model: TeethModel, mouth_label: np.ndarray,
                      options: RenderOptions = RenderOptions()) -> Modalities:
    """Silhouette, teeth mask and depth for one stage, each zeroed outside the mouth label."""
    inside = _check_label(mouth_label, options.size)
    depth = render_depth(pose, model, options.size, options.visibility_window, options.depth_floor)
    silhouette = render_silhouette(pose, model, options.size, options.visibility_window,
                                   options.blur_sigma)
    mask = depth_to_mask(depth)
    return Modalities(np.where(inside, silhouette, 0.0),
                      np.where(inside, mask, 0).astype(np.uint8),
                      np.where(inside, depth, 0.0))


def render_stage(pose: PoseParams, model: TeethModel, mouth_label: np.ndarray,
                 options: RenderOptions = RenderOptions()):
    m = render_modalities(pose, model, mouth_label, options)
    return m.silhouette, m.mask
