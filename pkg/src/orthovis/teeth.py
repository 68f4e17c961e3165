"""Per-tooth labeled meshes and the treatment-stage series built from them.

A stage file is a small wavefront subset: ``o tooth_<FDI>`` starts a tooth,
``v x y z`` adds a vertex, ``f a b c ...`` adds a face (1-based, global
vertex indices, polygons fan-triangulated). Anything else is ignored.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

UPPER = "upper"
LOWER = "lower"

_STAGE_RE = re.compile(r"^stage_(\d+)\.obj$")
_TOOTH_RE = re.compile(r"^tooth_(\d+)$")


class MeshFormatError(ValueError):
    """A stage file or stage directory could not be parsed into teeth."""


class ToothSetMismatch(ValueError):
    """Treatment stages do not all carry the same tooth ids."""


def jaw_of(fdi: int) -> str:
    quadrant = fdi // 10
    if quadrant in (1, 2):
        return UPPER
    if quadrant in (3, 4):
        return LOWER
    raise ValueError(f"not a permanent-dentition FDI number: {fdi}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Tooth:
    id: int
    vertices: np.ndarray
    triangles: np.ndarray
    jaw: str = ""

    def __post_init__(self):
        fdi = int(self.id)
        if not 11 <= fdi <= 48 or fdi % 10 == 0 or fdi % 10 > 8:
            raise ValueError(f"invalid FDI tooth id {self.id}")
        expected = jaw_of(fdi)
        if self.jaw and self.jaw != expected:
            raise ValueError(f"tooth {fdi} belongs to the {expected} jaw, got {self.jaw!r}")
        verts = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        tris = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(verts) == 0:
            raise ValueError(f"tooth {fdi} has no vertices")
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise ValueError(f"tooth {fdi} has triangle indices out of range")
        object.__setattr__(self, "id", fdi)
        object.__setattr__(self, "jaw", expected)
        object.__setattr__(self, "vertices", _frozen(verts))
        object.__setattr__(self, "triangles", _frozen(tris))

    def translated(self, offset) -> "Tooth":
        return Tooth(self.id, self.vertices + np.asarray(offset, dtype=np.float64),
                     self.triangles, self.jaw)


@dataclass(frozen=True)
class Packed:
    """Flat arrays consumed by the rasterizer."""

    vertices: np.ndarray     # (V, 3)
    is_lower: np.ndarray     # (V,) bool
    vert_tooth: np.ndarray   # (V,) tooth index
    triangles: np.ndarray    # (T, 3) into vertices
    tri_tooth: np.ndarray    # (T,) tooth index
    ids: np.ndarray          # (n_teeth,) FDI number per tooth index


@dataclass(frozen=True, eq=False)
class TeethModel:
    teeth: tuple
    stage_index: int = 0

    def __post_init__(self):
        teeth = tuple(self.teeth)
        ids = [t.id for t in teeth]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate tooth ids in stage {self.stage_index}")
        if self.stage_index < 0:
            raise ValueError("stage_index must be >= 0")
        object.__setattr__(self, "teeth", teeth)

    @property
    def ids(self) -> list[int]:
        return [t.id for t in self.teeth]

    def tooth(self, fdi: int) -> Tooth:
        for t in self.teeth:
            if t.id == fdi:
                return t
        raise KeyError(fdi)

    @property
    def n_triangles(self) -> int:
        return sum(len(t.triangles) for t in self.teeth)

    @cached_property
    def packed(self) -> Packed:
        verts, lower, vtooth, tris, ttooth = [], [], [], [], []
        base = 0
        for k, t in enumerate(self.teeth):
            n = len(t.vertices)
            verts.append(t.vertices)
            lower.append(np.full(n, t.jaw == LOWER))
            vtooth.append(np.full(n, k, dtype=np.int64))
            tris.append(t.triangles + base)
            ttooth.append(np.full(len(t.triangles), k, dtype=np.int64))
            base += n
        if not self.teeth:
            return Packed(np.zeros((0, 3)), np.zeros(0, bool), np.zeros(0, np.int64),
                          np.zeros((0, 3), np.int64), np.zeros(0, np.int64),
                          np.zeros(0, np.int32))
        return Packed(
            np.ascontiguousarray(np.concatenate(verts)),
            np.concatenate(lower),
            np.concatenate(vtooth),
            np.ascontiguousarray(np.concatenate(tris)),
            np.concatenate(ttooth),
            np.array(self.ids, dtype=np.int32),
        )


@dataclass(frozen=True, eq=False)
class TreatmentSeries:
    stages: tuple = field(default_factory=tuple)

    def __post_init__(self):
        stages = tuple(self.stages)
        if not stages:
            raise ValueError("a treatment series needs at least one stage")
        reference = set(stages[0].ids)
        for i, stage in enumerate(stages):
            ids = set(stage.ids)
            if ids != reference:
                missing = sorted(reference - ids)
                extra = sorted(ids - reference)
                raise ToothSetMismatch(
                    f"tooth set mismatch in stage {i}: missing {missing}, unexpected {extra}")
        object.__setattr__(self, "stages", stages)

    def __len__(self):
        return len(self.stages)

    def __getitem__(self, i) -> TeethModel:
        return self.stages[i]


def apply_jaw_offset(model: TeethModel, offset) -> TeethModel:
    """Translate every lower-jaw tooth by ``offset``; upper teeth are shared, not copied."""
    offset = np.asarray(offset, dtype=np.float64).reshape(3)
    teeth = tuple(t.translated(offset) if t.jaw == LOWER else t for t in model.teeth)
    return TeethModel(teeth, model.stage_index)


def model_bounds(model: TeethModel) -> tuple[np.ndarray, np.ndarray]:
    if not model.teeth:
        raise ValueError("cannot bound an empty model")
    verts = model.packed.vertices
    return verts.min(axis=0), verts.max(axis=0)


def scene_diagonal(model: TeethModel) -> float:
    lo, hi = model_bounds(model)
    return float(np.linalg.norm(hi - lo))


def read_stage(path, stage_index: int = 0) -> TeethModel:
    path = Path(path)
    verts: list[list[float]] = []
    groups: dict[int, list[list[int]]] = {}
    order: list[int] = []
    current = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            toks = line.split()
            if not toks or toks[0].startswith("#"):
                continue
            try:
                if toks[0] in ("o", "g"):
                    m = _TOOTH_RE.match(toks[1]) if len(toks) > 1 else None
                    if m is None:
                        raise MeshFormatError(f"{path}:{lineno}: object name must be tooth_<FDI>")
                    current = int(m.group(1))
                    if current in groups:
                        raise MeshFormatError(f"{path}:{lineno}: duplicate tooth id {current}")
                    groups[current] = []
                    order.append(current)
                elif toks[0] == "v":
                    verts.append([float(x) for x in toks[1:4]])
                    if len(verts[-1]) != 3:
                        raise MeshFormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                elif toks[0] == "f":
                    if current is None:
                        raise MeshFormatError(f"{path}:{lineno}: face outside a tooth object")
                    idx = [int(tok.split("/")[0]) for tok in toks[1:]]
                    if len(idx) < 3:
                        raise MeshFormatError(f"{path}:{lineno}: face needs >= 3 vertices")
                    idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                    for j in range(1, len(idx) - 1):
                        groups[current].append([idx[0], idx[j], idx[j + 1]])
            except (ValueError, IndexError) as exc:
                if isinstance(exc, MeshFormatError):
                    raise
                raise MeshFormatError(f"{path}:{lineno}: {exc}") from exc
    if not order:
        raise MeshFormatError(f"{path}: no tooth objects found")
    all_verts = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    teeth = []
    for fdi in order:
        faces = np.asarray(groups[fdi], dtype=np.int64).reshape(-1, 3)
        if faces.size == 0:
            raise MeshFormatError(f"{path}: tooth {fdi} has no faces")
        if faces.min() < 0 or faces.max() >= len(all_verts):
            raise MeshFormatError(f"{path}: tooth {fdi} references missing vertices")
        # Reindex to the vertices this tooth actually uses.
        used, local = np.unique(faces, return_inverse=True)
        try:
            teeth.append(Tooth(fdi, all_verts[used], local.reshape(-1, 3)))
        except ValueError as exc:
            raise MeshFormatError(f"{path}: {exc}") from exc
    return TeethModel(tuple(teeth), stage_index)


def write_stage(model: TeethModel, path) -> None:
    lines = []
    base = 1
    for t in model.teeth:
        lines.append(f"o tooth_{t.id}")
        lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in t.vertices.tolist())
        lines.extend(f"f {a + base} {b + base} {c + base}" for a, b, c in t.triangles.tolist())
        base += len(t.vertices)
    Path(path).write_text("\n".join(lines) + "\n")


def stage_files(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise MeshFormatError(f"not a directory: {directory}")
    found = {}
    for p in directory.iterdir():
        m = _STAGE_RE.match(p.name)
        if m:
            i = int(m.group(1))
            if i in found:
                raise MeshFormatError(f"duplicate stage number {i} in {directory}")
            found[i] = p
    if not found:
        raise MeshFormatError(f"no stage_###.obj files in {directory}")
    indices = sorted(found)
    if indices != list(range(len(indices))):
        raise MeshFormatError(f"stage numbering in {directory} is not contiguous from 0: {indices}")
    return [found[i] for i in indices]


def load_treatment_series(directory) -> TreatmentSeries:
    stages = [read_stage(p, i) for i, p in enumerate(stage_files(directory))]
    return TreatmentSeries(tuple(stages))


def save_treatment_series(series: TreatmentSeries | Sequence[TeethModel], directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stages: Iterable[TeethModel] = series.stages if isinstance(series, TreatmentSeries) else series
    paths = []
    for i, stage in enumerate(stages):
        p = directory / f"stage_{i:03d}.obj"
        write_stage(stage, p)
        paths.append(p)
    return paths
