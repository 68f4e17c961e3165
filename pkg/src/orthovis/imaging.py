"""Mouth-crop compositing and lαβ color statistics transfer.

RGB images are float arrays of shape (H, W, 3) in [0, 1]; masks are (H, W)
arrays where nonzero means inside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RGB2LMS = np.array([[0.3811, 0.5783, 0.0402],
                    [0.1967, 0.7244, 0.0782],
                    [0.0241, 0.1288, 0.8444]])
LMS2LAB = np.diag([1 / np.sqrt(3), 1 / np.sqrt(6), 1 / np.sqrt(2)]) @ np.array([[1.0, 1.0, 1.0],
                                                                              [1.0, 1.0, -2.0],
                                                                              [1.0, -1.0, 0.0]])
LMS2RGB = np.linalg.inv(RGB2LMS)
LAB2LMS = np.linalg.inv(LMS2LAB)

RGB_FLOOR = 1e-4
SIGMA_GUARD = 1e-6


@dataclass(frozen=True)
class CropRect:
    """Square mouth crop inside the face image, top-left corner at (x0, y0)."""

    x0: int
    y0: int
    side: int

    def __post_init__(self):
        for name in ("x0", "y0", "side"):
            v = getattr(self, name)
            if int(v) != v:
                raise ValueError(f"crop {name} must be an integer, got {v}")
            object.__setattr__(self, name, int(v))
        if self.side <= 0:
            raise ValueError("crop side must be positive")

    def check_inside(self, image: np.ndarray) -> None:
        h, w = image.shape[:2]
        if self.x0 < 0 or self.y0 < 0 or self.x0 + self.side > w or self.y0 + self.side > h:
            raise ValueError(f"crop {self} exceeds the {w}x{h} face image")

    @property
    def slices(self):
        return slice(self.y0, self.y0 + self.side), slice(self.x0, self.x0 + self.side)

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "side": self.side}

    @classmethod
    def from_dict(cls, d: dict) -> "CropRect":
        return cls(d["x0"], d["y0"], d["side"])


def extract_crop(face: np.ndarray, rect: CropRect) -> np.ndarray:
    rect.check_inside(face)
    return face[rect.slices].copy()


def paste_crop(face: np.ndarray, crop: np.ndarray, rect: CropRect) -> np.ndarray:
    rect.check_inside(face)
    if crop.shape[:2] != (rect.side, rect.side) or crop.shape[2:] != face.shape[2:]:
        raise ValueError(f"crop of shape {crop.shape} does not fit {rect} in a face of shape {face.shape}")
    out = face.copy()
    out[rect.slices] = crop
    return out


def _same_hw(*arrays):
    shapes = {a.shape[:2] for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"image sizes differ: {sorted(shapes)}")


def fuse(generated: np.ndarray, original: np.ndarray, mouth_label: np.ndarray) -> np.ndarray:
    """Generated pixels inside the mouth label, original pixels elsewhere.

    Implemented as a selection, so outside the label the result is a
    bit-exact copy of ``original``.
    """
    generated = np.asarray(generated)
    original = np.asarray(original)
    mouth_label = np.asarray(mouth_label)
    _same_hw(generated, original, mouth_label)
    if generated.shape != original.shape:
        raise ValueError(f"generated {generated.shape} and original {original.shape} differ")
    inside = mouth_label != 0
    if generated.ndim == 3:
        inside = inside[..., None]
    return np.where(inside, generated, original)


def rgb_to_lab(img: np.ndarray) -> np.ndarray:
    rgb = np.clip(np.asarray(img, dtype=np.float64), RGB_FLOOR, 1.0)
    lms = rgb @ RGB2LMS.T
    return np.log10(lms) @ LMS2LAB.T


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    lms = 10.0 ** (np.asarray(lab, dtype=np.float64) @ LAB2LMS.T)
    return np.clip(lms @ LMS2RGB.T, 0.0, 1.0)


def region_moments(lab: np.ndarray, region: np.ndarray):
    """Per-channel mean and population standard deviation over ``region``."""
    inside = np.asarray(region) != 0
    if not inside.any():
        raise ValueError("statistics region is empty")
    v = lab[inside]
    return v.mean(axis=0), v.std(axis=0)


def transfer_lab(output_lab: np.ndarray, reference_lab: np.ndarray, output_region: np.ndarray,
                 reference_region: np.ndarray) -> np.ndarray:
    """Shift and scale each lαβ channel inside ``output_region`` to the reference moments."""
    mu_out, sd_out = region_moments(output_lab, output_region)
    mu_ref, sd_ref = region_moments(reference_lab, reference_region)
    scale = np.where(sd_out < SIGMA_GUARD, 1.0, sd_ref / np.where(sd_out < SIGMA_GUARD, 1.0, sd_out))
    moved = (output_lab - mu_out) * scale + mu_ref
    return np.where((np.asarray(output_region) != 0)[..., None], moved, output_lab)


def color_transfer(output_img: np.ndarray, reference_img: np.ndarray, output_region: np.ndarray,
                   reference_region: np.ndarray) -> np.ndarray:
    """Match lαβ mean and spread of ``output_region`` to those of ``reference_region``.

    Pixels outside ``output_region`` are returned untouched.
    """
    output_img = np.asarray(output_img, dtype=np.float64)
    reference_img = np.asarray(reference_img, dtype=np.float64)
    _same_hw(output_img, output_region)
    _same_hw(reference_img, reference_region)
    inside = np.asarray(output_region) != 0
    lab = transfer_lab(rgb_to_lab(output_img), rgb_to_lab(reference_img), output_region,
                       reference_region)
    return np.where(inside[..., None], lab_to_rgb(lab), output_img)
