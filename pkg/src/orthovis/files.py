"""PNG and JSON readers/writers for the pipeline's image and sidecar files."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import PoseParams
from .imaging import CropRect

MASK_THRESHOLD = 128


def _open(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return Image.open(path)


def read_rgb(path) -> np.ndarray:
    """8-bit RGB PNG as floats in [0, 1]."""
    with _open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_rgb(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {img.shape}")
    Image.fromarray(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)).save(path)


def read_gray(path) -> np.ndarray:
    """Grayscale PNG (8- or 16-bit) as floats in [0, 1]."""
    with _open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            a = np.asarray(im, dtype=np.float64)
            return a / 65535.0
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def write_gray(path, img: np.ndarray, bits: int = 8) -> None:
    img = np.clip(np.asarray(img, dtype=np.float64), 0, 1)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got {img.shape}")
    if bits == 8:
        Image.fromarray(np.round(img * 255).astype(np.uint8)).save(path)
    elif bits == 16:
        Image.fromarray(np.round(img * 65535).astype(np.uint16)).save(path)
    else:
        raise ValueError("bits must be 8 or 16")


def read_mask(path) -> np.ndarray:
    """Binary mask: gray values >= 128 are inside."""
    with _open(path) as im:
        a = np.asarray(im.convert("L"))
    return (a >= MASK_THRESHOLD).astype(np.uint8)


def write_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    Image.fromarray(np.where(mask != 0, 255, 0).astype(np.uint8)).save(path)


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return json.loads(path.read_text())


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def read_pose(path) -> PoseParams:
    """Pose JSON; accepts a bare pose or a fit result with a ``pose`` entry."""
    d = read_json(path)
    return PoseParams.from_dict(d["pose"] if "pose" in d else d)


def write_pose(path, pose: PoseParams) -> None:
    write_json(path, pose.to_dict())


def read_rect(path) -> CropRect:
    return CropRect.from_dict(read_json(path))
