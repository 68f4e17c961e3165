"""Slow, obviously-correct reference implementations used by the tests.

Nothing here imports the package's numeric code paths; rotations come from
scipy and everything else is written out per pixel.
"""

import math

import numpy as np
from scipy.spatial.transform import Rotation


def pinhole(points, focal, rotvec, translation, size):
    """Scalar per-point pinhole projection: list of (u, v, z)."""
    w, h = size
    r = Rotation.from_rotvec(np.array(rotvec, dtype=float)).as_matrix()
    out = []
    for p in np.asarray(points, dtype=float):
        x, y, z = r @ p + np.asarray(translation, dtype=float)
        out.append((focal * x / z + (w - 1) / 2, focal * y / z + (h - 1) / 2, z))
    return out


def _ray_triangle_depth(d, a, b, c):
    """Camera-frame ray t*d from the origin; returns hit depth (z) or None."""
    e1 = b - a
    e2 = c - a
    p = np.cross(d, e2)
    det = e1 @ p
    if abs(det) < 1e-14:
        return None
    s = -a
    u = (s @ p) / det
    q = np.cross(s, e1)
    v = (d @ q) / det
    if u < 0 or v < 0 or u + v > 1:
        return None
    t = (e2 @ q) / det
    if t <= 0:
        return None
    return t * d[2]


def _segment_distance(p, a, b):
    ab = b - a
    denom = ab @ ab
    t = 0.0 if denom == 0 else min(1.0, max(0.0, ((p - a) @ ab) / denom))
    return float(np.linalg.norm(p - (a + t * ab)))


def raycast_scene(triangles, tooth_ids, pose, size, window):
    """Brute-force id map for a list of model-frame triangles.

    ``triangles`` is (T, 3, 3), ``tooth_ids`` gives each triangle's FDI id
    (one triangle per tooth here). Returns ``(ids, near_edge)`` where
    ``near_edge`` flags pixel centers within 0.5 px of a projected edge.
    """
    w, h = size
    f = pose["focal"]
    r = Rotation.from_rotvec(np.array(pose["rotation"], dtype=float)).as_matrix()
    t = np.asarray(pose["translation"], dtype=float)
    jaw = np.asarray(pose["jaw_offset"], dtype=float)
    cams = []
    for tri, fdi in zip(triangles, tooth_ids):
        tri = np.asarray(tri, dtype=float)
        if fdi // 10 in (3, 4):
            tri = tri + jaw
        cams.append(np.array([r @ v + t for v in tri]))
    zs = np.concatenate([c[:, 2] for c in cams])
    zfront, zback = zs.min(), zs.max()
    tau = zfront + window * (zback - zfront)
    keep = [c[:, 2].min() <= tau and c[:, 2].min() > 1e-9 for c in cams]

    cx, cy = (w - 1) / 2, (h - 1) / 2
    proj = [np.array([[f * v[0] / v[2] + cx, f * v[1] / v[2] + cy] for v in c]) for c in cams]
    ids = np.zeros((h, w), dtype=int)
    near = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            d = np.array([(x - cx) / f, (y - cy) / f, 1.0])
            best = math.inf
            for c, fdi, k, pr in zip(cams, tooth_ids, keep, proj):
                if not k:
                    continue
                pc = np.array([x, y], dtype=float)
                if min(_segment_distance(pc, pr[i], pr[(i + 1) % 3]) for i in range(3)) < 0.5:
                    near[y, x] = True
                z = _ray_triangle_depth(d, c[0], c[1], c[2])
                if z is not None and z < best:
                    best = z
                    ids[y, x] = fdi
    return ids, near


def edge_oracle(idmap):
    """Edge pixels by direct enumeration of the 4-neighbourhood rule."""
    idmap = np.asarray(idmap)
    h, w = idmap.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            v = idmap[y, x]
            if v == 0:
                continue
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                yy, xx = y + dy, x + dx
                other = idmap[yy, xx] if 0 <= yy < h and 0 <= xx < w else 0
                if other != v:
                    out[y, x] = 1.0
                    break
    return out


def lab_pixel(rgb):
    """One pixel through the published RGB -> LMS -> log10 -> l alpha beta formulas."""
    r, g, b = (min(1.0, max(1e-4, float(c))) for c in rgb)
    L = 0.3811 * r + 0.5783 * g + 0.0402 * b
    M = 0.1967 * r + 0.7244 * g + 0.0782 * b
    S = 0.0241 * r + 0.1288 * g + 0.8444 * b
    L, M, S = math.log10(L), math.log10(M), math.log10(S)
    return ((L + M + S) / math.sqrt(3), (L + M - 2 * S) / math.sqrt(6), (L - M) / math.sqrt(2))


FDI_POOL = (11, 21, 31, 42, 17, 36)


def random_scene(rng, size=None):
    """Up to three random triangles (one per tooth) in front of a random camera.

    Returns ``(triangles, ids, pose_dict, size, window)``.
    """
    if size is None:
        size = (int(rng.integers(8, 33)), int(rng.integers(8, 33)))
    n = int(rng.integers(1, 4))
    ids = [int(i) for i in rng.choice(FDI_POOL, size=n, replace=False)]
    while True:
        pose = {"focal": float(rng.uniform(0.6, 1.4) * max(size)),
                "rotation": rng.normal(0, 0.4, 3),
                "translation": np.array([*rng.normal(0, 0.3, 2), rng.uniform(4, 8)]),
                "jaw_offset": rng.normal(0, 0.2, 3)}
        tris = rng.uniform(-1.5, 1.5, (n, 3, 3))
        r = Rotation.from_rotvec(pose["rotation"]).as_matrix()
        ok = True
        for tri, fdi in zip(tris, ids):
            v = tri + (pose["jaw_offset"] if fdi // 10 in (3, 4) else 0)
            if ((v @ r.T + pose["translation"])[:, 2] < 0.5).any():
                ok = False
        if ok:
            break
    window = float(rng.choice([1.0, rng.uniform(0.2, 1.0)]))
    return tris, ids, pose, size, window
