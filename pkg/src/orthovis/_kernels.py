"""Compiled inner loops shared by the renderer and the pose fitter.

Pose vectors are the 10-vector ``[focal, rx, ry, rz, tx, ty, tz, jx, jy, jz]``.
Label rasters hold ``tooth index + 1`` (0 is background); the Python layer
maps those back to FDI numbers.
"""

import math

import numpy as np
from numba import njit

NEAR = 1e-9


@njit(cache=True)
def rotmat(rx, ry, rz):
    r = np.empty((3, 3))
    theta = math.sqrt(rx * rx + ry * ry + rz * rz)
    if theta < 1e-12:
        r[0, 0] = 1.0; r[0, 1] = -rz; r[0, 2] = ry
        r[1, 0] = rz; r[1, 1] = 1.0; r[1, 2] = -rx
        r[2, 0] = -ry; r[2, 1] = rx; r[2, 2] = 1.0
        return r
    x = rx / theta
    y = ry / theta
    z = rz / theta
    s = math.sin(theta)
    c = 1.0 - math.cos(theta)
    r[0, 0] = 1.0 + c * (-y * y - z * z)
    r[0, 1] = -s * z + c * x * y
    r[0, 2] = s * y + c * x * z
    r[1, 0] = s * z + c * x * y
    r[1, 1] = 1.0 + c * (-x * x - z * z)
    r[1, 2] = -s * x + c * y * z
    r[2, 0] = -s * y + c * x * z
    r[2, 1] = s * x + c * y * z
    r[2, 2] = 1.0 + c * (-x * x - y * y)
    return r


@njit(cache=True)
def camera_vertices(verts, is_lower, theta, out):
    r = rotmat(theta[1], theta[2], theta[3])
    for i in range(verts.shape[0]):
        px = verts[i, 0]
        py = verts[i, 1]
        pz = verts[i, 2]
        if is_lower[i]:
            px += theta[7]
            py += theta[8]
            pz += theta[9]
        out[i, 0] = r[0, 0] * px + r[0, 1] * py + r[0, 2] * pz + theta[4]
        out[i, 1] = r[1, 0] * px + r[1, 1] * py + r[1, 2] * pz + theta[5]
        out[i, 2] = r[2, 0] * px + r[2, 1] * py + r[2, 2] * pz + theta[6]


@njit(cache=True)
def visible_teeth(cam, vert_tooth, n_teeth, window, include):
    """Mark teeth whose nearest vertex lies within the front ``window`` of the depth range."""
    zmin = np.full(n_teeth, np.inf)
    zfront = np.inf
    zback = -np.inf
    for i in range(cam.shape[0]):
        z = cam[i, 2]
        k = vert_tooth[i]
        if z < zmin[k]:
            zmin[k] = z
        if z < zfront:
            zfront = z
        if z > zback:
            zback = z
    tau = zfront + window * (zback - zfront)
    for k in range(n_teeth):
        include[k] = zmin[k] <= tau


@njit(cache=True)
def rasterize(cam, tris, tri_tooth, include, focal, label, izbuf):
    """Z-buffered pixel-center coverage; pixel (x, y) has its center at u=x, v=y.

    ``izbuf`` receives inverse camera depth (0 where nothing is drawn). It is
    affine in screen space, as are the edge functions, so both are stepped
    incrementally across each bounding-box row. Triangles with a vertex at
    or behind the camera plane are dropped, not clipped.
    """
    h, w = label.shape
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    for y in range(h):
        for x in range(w):
            label[y, x] = 0
            izbuf[y, x] = 0.0
    nv = cam.shape[0]
    pu = np.empty(nv)
    pv = np.empty(nv)
    piz = np.empty(nv)
    for i in range(nv):
        z = cam[i, 2]
        if z <= NEAR:
            piz[i] = -1.0
            continue
        iz = 1.0 / z
        piz[i] = iz
        pu[i] = focal * cam[i, 0] * iz + cx
        pv[i] = focal * cam[i, 1] * iz + cy
    for t in range(tris.shape[0]):
        k = tri_tooth[t]
        if not include[k]:
            continue
        a = tris[t, 0]
        b = tris[t, 1]
        c = tris[t, 2]
        ia = piz[a]
        ib = piz[b]
        ic = piz[c]
        if ia < 0.0 or ib < 0.0 or ic < 0.0:
            continue
        ua = pu[a]
        va = pv[a]
        ub = pu[b]
        vb = pv[b]
        uc = pu[c]
        vc = pv[c]
        umin = ua if ua < ub else ub
        umin = umin if umin < uc else uc
        umax = ua if ua > ub else ub
        umax = umax if umax > uc else uc
        vmin = va if va < vb else vb
        vmin = vmin if vmin < vc else vc
        vmax = va if va > vb else vb
        vmax = vmax if vmax > vc else vc
        if not (umax >= 0.0 and vmax >= 0.0 and umin <= w - 1 and vmin <= h - 1):
            continue
        x0 = max(0, int(math.ceil(umin)))
        x1 = min(w - 1, int(math.floor(umax)))
        if x0 > x1:
            continue
        y0 = max(0, int(math.ceil(vmin)))
        y1 = min(h - 1, int(math.floor(vmax)))
        if y0 > y1:
            continue
        area = (ub - ua) * (vc - va) - (vb - va) * (uc - ua)
        if area == 0.0 or not math.isfinite(area):
            continue
        inv_area = 1.0 / area
        # Barycentric weight of each vertex as an affine function c + x*dx + y*dy.
        c0 = (ub * vc - vb * uc) * inv_area
        dx0 = (vb - vc) * inv_area
        dy0 = (uc - ub) * inv_area
        c1 = (uc * va - vc * ua) * inv_area
        dx1 = (vc - va) * inv_area
        dy1 = (ua - uc) * inv_area
        c2 = (ua * vb - va * ub) * inv_area
        dx2 = (va - vb) * inv_area
        dy2 = (ub - ua) * inv_area
        qc = c0 * ia + c1 * ib + c2 * ic
        qx = dx0 * ia + dx1 * ib + dx2 * ic
        qy = dy0 * ia + dy1 * ib + dy2 * ic
        lab = k + 1
        for py in range(y0, y1 + 1):
            zrow = izbuf[py]
            lrow = label[py]
            w0 = c0 + dy0 * py + dx0 * x0
            w1 = c1 + dy1 * py + dx1 * x0
            w2 = c2 + dy2 * py + dx2 * x0
            iz = qc + qy * py + qx * x0
            for px in range(x0, x1 + 1):
                # Chained comparisons; builtin min() is several times slower here.
                if w0 >= 0.0 and w1 >= 0.0 and w2 >= 0.0 and iz > zrow[px]:
                    zrow[px] = iz
                    lrow[px] = lab
                w0 += dx0
                w1 += dx1
                w2 += dx2
                iz += qx


@njit(cache=True)
def edge_pixels(label, out, r0, r1, c0, c1):
    """1.0 on covered pixels with a 4-neighbour of different label; outside the image counts as background."""
    h, w = label.shape
    for y in range(r0, r1 + 1):
        for x in range(c0, c1 + 1):
            v = label[y, x]
            e = 0.0
            if v != 0:
                if y == 0 or label[y - 1, x] != v:
                    e = 1.0
                elif y == h - 1 or label[y + 1, x] != v:
                    e = 1.0
                elif x == 0 or label[y, x - 1] != v:
                    e = 1.0
                elif x == w - 1 or label[y, x + 1] != v:
                    e = 1.0
            out[y, x] = e


@njit(cache=True)
def blur_region(src, kernel, tmp, out, r0, r1, c0, c1):
    """Separable zero-padded convolution evaluated only on rows r0..r1, cols c0..c1.

    ``src`` must be valid on the region grown by the kernel radius. The
    horizontal pass scatters from nonzero source pixels, which suits sparse
    edge images.
    """
    h, w = src.shape
    n = kernel.shape[0]
    rad = n // 2
    hr0 = max(0, r0 - rad)
    hr1 = min(h - 1, r1 + rad)
    sc0 = max(0, c0 - rad)
    sc1 = min(w - 1, c1 + rad)
    rowhas = np.zeros(h, dtype=np.bool_)
    for y in range(hr0, hr1 + 1):
        for x in range(c0, c1 + 1):
            tmp[y, x] = 0.0
        for xs in range(sc0, sc1 + 1):
            v = src[y, xs]
            if v == 0.0:
                continue
            rowhas[y] = True
            # tmp[x] += kernel[j] * src[x + j - rad]  =>  x = xs - j + rad
            jlo = max(0, xs + rad - c1)
            jhi = min(n - 1, xs + rad - c0)
            for j in range(jlo, jhi + 1):
                tmp[y, xs - j + rad] += kernel[j] * v
    for y in range(r0, r1 + 1):
        for x in range(c0, c1 + 1):
            out[y, x] = 0.0
        for j in range(n):
            yy = y + j - rad
            if yy < 0 or yy >= h or not rowhas[yy]:
                continue
            kj = kernel[j]
            for x in range(c0, c1 + 1):
                out[y, x] += kj * tmp[yy, x]


@njit(cache=True)
def silhouette_loss_batch(thetas, verts, is_lower, vert_tooth, tris, tri_tooth, n_teeth,
                          window, mask, target, kernel, bbox, losses):
    """Masked mean squared difference between ``target`` and the blurred
    rendered silhouette, for each pose row of ``thetas``.

    ``target`` is already blurred; ``bbox`` = (r0, r1, c0, c1) bounds the mask.
    """
    h, w = mask.shape
    r0 = bbox[0]
    r1 = bbox[1]
    c0 = bbox[2]
    c1 = bbox[3]
    rad = kernel.shape[0] // 2
    er0 = max(0, r0 - rad)
    er1 = min(h - 1, r1 + rad)
    ec0 = max(0, c0 - rad)
    ec1 = min(w - 1, c1 + rad)
    count = 0
    for y in range(r0, r1 + 1):
        for x in range(c0, c1 + 1):
            if mask[y, x]:
                count += 1
    cam = np.empty((verts.shape[0], 3))
    include = np.empty(n_teeth, dtype=np.bool_)
    label = np.empty((h, w), dtype=np.int32)
    izbuf = np.empty((h, w))
    edges = np.zeros((h, w))
    tmp = np.zeros((h, w))
    blurred = np.zeros((h, w))
    for k in range(thetas.shape[0]):
        theta = thetas[k]
        camera_vertices(verts, is_lower, theta, cam)
        visible_teeth(cam, vert_tooth, n_teeth, window, include)
        rasterize(cam, tris, tri_tooth, include, theta[0], label, izbuf)
        edge_pixels(label, edges, er0, er1, ec0, ec1)
        blur_region(edges, kernel, tmp, blurred, r0, r1, c0, c1)
        acc = 0.0
        for y in range(r0, r1 + 1):
            for x in range(c0, c1 + 1):
                if mask[y, x]:
                    v = blurred[y, x]
                    if v > 1.0:
                        v = 1.0
                    elif v < 0.0:
                        v = 0.0
                    d = target[y, x] - v
                    acc += d * d
        losses[k] = acc / count
