"""Compiled per-pixel loops.

All reductions run sequentially in pixel order so results do not depend on
thread count or input ordering. Loops that only write their own output
pixel use ``prange``.
"""

import math

import numpy as np
from numba import njit, prange

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def project_one(x, y, z, width, height, el_max, d_el):
    """Continuous (row, col) and range of a point; row < -0.5 or >= H-0.5 is outside."""
    rng = math.sqrt(x * x + y * y + z * z)
    az = math.atan2(y, x)
    el = math.asin(max(-1.0, min(1.0, z / rng)))
    col = az / TWO_PI * width
    if col < 0.0:
        col += width
    row = (el_max - el) / d_el - 0.5
    return row, col, rng


@njit(cache=True)
def pixel_of(row, col, width, height):
    """Integer pixel containing a continuous coordinate, or (-1, -1) when outside."""
    if row < -0.5 or row >= height - 0.5:
        return -1, -1
    i = int(math.floor(row + 0.5))
    j = int(math.floor(col + 0.5))
    if j >= width:
        j -= width
    if j < 0:
        j += width
    return i, j


@njit(cache=True)
def zbuffer(points, intensity, width, height, el_max, d_el, max_range):
    depth = np.zeros((height, width), dtype=np.float32)
    inten = np.zeros((height, width), dtype=np.float32)
    win = np.full((height, width), -1, dtype=np.int64)
    best = np.full((height, width), np.inf)
    for k in range(points.shape[0]):
        x, y, z = points[k, 0], points[k, 1], points[k, 2]
        r2 = x * x + y * y + z * z
        if not (r2 > 0.0):
            continue
        row, col, rng = project_one(x, y, z, width, height, el_max, d_el)
        if rng >= max_range:
            continue
        i, j = pixel_of(row, col, width, height)
        if i < 0:
            continue
        b = best[i, j]
        take = False
        if rng < b:
            take = True
        elif rng == b:
            w = win[i, j]
            # tie-break: lexicographically smaller (x, y, z, intensity)
            if x < points[w, 0]:
                take = True
            elif x == points[w, 0]:
                if y < points[w, 1]:
                    take = True
                elif y == points[w, 1]:
                    if z < points[w, 2]:
                        take = True
                    elif z == points[w, 2] and intensity[k] < intensity[w]:
                        take = True
        if take:
            best[i, j] = rng
            win[i, j] = k
    for i in range(height):
        for j in range(width):
            w = win[i, j]
            if w >= 0:
                depth[i, j] = best[i, j]
                inten[i, j] = intensity[w]
    return depth, inten


@njit(cache=True, inline="always")
def _is_edge(da, db, edge_abs, edge_rel):
    return abs(da - db) > edge_abs + edge_rel * da


@njit(cache=True, parallel=True)
def normals_from_depth(depth, dirs, edge_abs, edge_rel, mask):
    """Cross-product normals from right and down neighbours.

    Only pixels with ``mask`` set are recomputed; others are returned as zero.
    The bottom row falls back to the up neighbour.
    """
    h, w = depth.shape
    out = np.zeros((h, w, 3), dtype=np.float32)
    for i in prange(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            d0 = depth[i, j]
            if d0 <= 0.0:
                continue
            jr = j + 1 if j + 1 < w else 0
            if i + 1 < h:
                iv = i + 1
                sgn = 1.0
            else:
                iv = i - 1
                sgn = -1.0
            if iv < 0:
                continue
            d1 = depth[i, jr]
            d2 = depth[iv, j]
            if d1 <= 0.0 or d2 <= 0.0:
                continue
            if _is_edge(d0, d1, edge_abs, edge_rel) or _is_edge(d0, d2, edge_abs, edge_rel):
                continue
            px = d0 * dirs[i, j, 0]
            py = d0 * dirs[i, j, 1]
            pz = d0 * dirs[i, j, 2]
            ax = d1 * dirs[i, jr, 0] - px
            ay = d1 * dirs[i, jr, 1] - py
            az = d1 * dirs[i, jr, 2] - pz
            bx = sgn * (d2 * dirs[iv, j, 0] - px)
            by = sgn * (d2 * dirs[iv, j, 1] - py)
            bz = sgn * (d2 * dirs[iv, j, 2] - pz)
            nx = ay * bz - az * by
            ny = az * bx - ax * bz
            nz = ax * by - ay * bx
            nn = math.sqrt(nx * nx + ny * ny + nz * nz)
            if nn == 0.0:
                continue
            if nx * px + ny * py + nz * pz > 0.0:
                nn = -nn
            out[i, j, 0] = nx / nn
            out[i, j, 1] = ny / nn
            out[i, j, 2] = nz / nn
    return out


@njit(cache=True, parallel=True, fastmath=True)
def atrous_pass(normals, depth, step, edge_abs, edge_rel, mask, cos_gate):
    """One dilated B3-spline pass over the normal field.

    Neighbours across a depth edge, or whose normal is more than the gate
    angle away from the centre normal (surface creases), are skipped.
    Pixels with depth but no normal are filled from their neighbours.
    The tap loop is branch-free: rejected neighbours get zero weight.
    """
    h, w = depth.shape
    kern = np.array([1.0 / 16.0, 1.0 / 4.0, 3.0 / 8.0, 1.0 / 4.0, 1.0 / 16.0], dtype=np.float32)
    out = normals.copy()
    # planar copies padded by the kernel reach: azimuth wraps, rows beyond the
    # image and pixels without a normal get a depth no edge test accepts
    p = 2 * step
    far = np.float32(-1e30)
    pad = np.zeros((4, h + 2 * p, w + 2 * p), np.float32)
    pad[3, :, :] = far
    for i in prange(h):
        for jp in range(w + 2 * p):
            j = (jp - p) % w
            x = normals[i, j, 0]
            y = normals[i, j, 1]
            z = normals[i, j, 2]
            d = depth[i, j]
            if x * x + y * y + z * z > 0.0 and d > 0.0:
                pad[0, i + p, jp] = x
                pad[1, i + p, jp] = y
                pad[2, i + p, jp] = z
                pad[3, i + p, jp] = d
    for i in prange(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            d0 = depth[i, j]
            if d0 <= 0.0:
                continue
            cx = normals[i, j, 0]
            cy = normals[i, j, 1]
            cz = normals[i, j, 2]
            gate = np.float32(cos_gate)
            if cx == 0.0 and cy == 0.0 and cz == 0.0:
                gate = np.float32(-2.0)
            thr = np.float32(edge_abs + edge_rel * d0)
            sx = np.float32(0.0)
            sy = np.float32(0.0)
            sz = np.float32(0.0)
            for a in range(5):
                ii = i + a * step
                ka = kern[a]
                for b in range(5):
                    jj = j + b * step
                    nx = pad[0, ii, jj]
                    ny = pad[1, ii, jj]
                    nz = pad[2, ii, jj]
                    ok = (abs(d0 - pad[3, ii, jj]) <= thr) & (nx * cx + ny * cy + nz * cz >= gate)
                    k = ka * kern[b] * np.float32(ok)
                    sx += k * nx
                    sy += k * ny
                    sz += k * nz
            nn = math.sqrt(sx * sx + sy * sy + sz * sz)
            if nn > 0.0:
                out[i, j, 0] = sx / nn
                out[i, j, 1] = sy / nn
                out[i, j, 2] = sz / nn
    return out


@njit(cache=True)
def downsample_min(depth, inten, normals, weight, factor, w_max):
    h, w = depth.shape
    ho = h // factor
    wo = w // factor
    d_out = np.zeros((ho, wo), dtype=np.float32)
    i_out = np.zeros((ho, wo), dtype=np.float32)
    n_out = np.zeros((ho, wo, 3), dtype=np.float32)
    w_out = np.zeros((ho, wo), dtype=np.uint8)
    for io in range(ho):
        for jo in range(wo):
            best = np.inf
            bi = -1
            bj = -1
            wsum = 0
            for a in range(factor):
                for b in range(factor):
                    i = io * factor + a
                    j = jo * factor + b
                    d = depth[i, j]
                    if d > 0.0:
                        wsum += weight[i, j]
                        if d < best:
                            best = d
                            bi = i
                            bj = j
            if bi >= 0:
                d_out[io, jo] = best
                i_out[io, jo] = inten[bi, bj]
                n_out[io, jo, 0] = normals[bi, bj, 0]
                n_out[io, jo, 1] = normals[bi, bj, 1]
                n_out[io, jo, 2] = normals[bi, bj, 2]
                w_out[io, jo] = min(wsum, w_max)
    return d_out, i_out, n_out, w_out


@njit(cache=True, fastmath=True)
def associate_accumulate(
    src_pts, src_nrm, rot, trans,
    tgt_depth, tgt_nrm, tgt_dirs, el_max, d_el,
    max_dist, cos_theta, accumulate, accepted_mask,
):
    """Projective association of source points into a target panorama.

    Returns ``(ata, atb, sum_sq, counts)`` where counts holds
    ``[candidates, accepted, rejected_distance, rejected_angle]``. The normal
    equations use the target normal (point-to-plane on the target surface)
    and the twist is a left perturbation in the target frame.
    """
    h, w = tgt_depth.shape
    ata = np.zeros((6, 6))
    atb = np.zeros(6)
    sum_sq = 0.0
    counts = np.zeros(4, dtype=np.int64)
    jac = np.zeros(6)
    md2 = max_dist * max_dist
    for k in range(src_pts.shape[0]):
        accepted_mask[k] = False
        sx, sy, sz = src_pts[k, 0], src_pts[k, 1], src_pts[k, 2]
        x = rot[0, 0] * sx + rot[0, 1] * sy + rot[0, 2] * sz + trans[0]
        y = rot[1, 0] * sx + rot[1, 1] * sy + rot[1, 2] * sz + trans[1]
        z = rot[2, 0] * sx + rot[2, 1] * sy + rot[2, 2] * sz + trans[2]
        if x == 0.0 and y == 0.0 and z == 0.0:
            continue
        row, col, _ = project_one(x, y, z, w, h, el_max, d_el)
        i, j = pixel_of(row, col, w, h)
        if i < 0:
            continue
        d = tgt_depth[i, j]
        if d <= 0.0:
            continue
        nx = float(tgt_nrm[i, j, 0])
        ny = float(tgt_nrm[i, j, 1])
        nz = float(tgt_nrm[i, j, 2])
        if nx == 0.0 and ny == 0.0 and nz == 0.0:
            continue
        counts[0] += 1
        tx = d * tgt_dirs[i, j, 0]
        ty = d * tgt_dirs[i, j, 1]
        tz = d * tgt_dirs[i, j, 2]
        ex = x - tx
        ey = y - ty
        ez = z - tz
        if ex * ex + ey * ey + ez * ez > md2:
            counts[2] += 1
            continue
        mx = src_nrm[k, 0]
        my = src_nrm[k, 1]
        mz = src_nrm[k, 2]
        rx = rot[0, 0] * mx + rot[0, 1] * my + rot[0, 2] * mz
        ry = rot[1, 0] * mx + rot[1, 1] * my + rot[1, 2] * mz
        rz = rot[2, 0] * mx + rot[2, 1] * my + rot[2, 2] * mz
        if rx * nx + ry * ny + rz * nz < cos_theta:
            counts[3] += 1
            continue
        counts[1] += 1
        accepted_mask[k] = True
        r = ex * nx + ey * ny + ez * nz
        sum_sq += r * r
        if accumulate:
            # J = [x cross n, n]
            j0 = y * nz - z * ny
            j1 = z * nx - x * nz
            j2 = x * ny - y * nx
            jac[0] = j0
            jac[1] = j1
            jac[2] = j2
            jac[3] = nx
            jac[4] = ny
            jac[5] = nz
            for a in range(6):
                atb[a] += jac[a] * r
                for b in range(a, 6):
                    ata[a, b] += jac[a] * jac[b]
    for a in range(6):
        for b in range(a):
            ata[a, b] = ata[b, a]
    return ata, atb, sum_sq, counts


@njit(cache=True)
def fuse_into(
    kf_depth, kf_inten, kf_nrm, kf_weight, kf_dirs, kf_el_max, kf_d_el,
    sw_depth, sw_inten, sw_nrm, sw_dirs, sw_el_max, sw_d_el, sw_valid,
    rot, trans, max_dist, cos_theta, w_max, touched,
):
    """Fuse a registered sweep panorama into a keyframe in place.

    ``rot``/``trans`` map sweep coordinates into keyframe coordinates.
    Occupied keyframe pixels look up the sweep pixel they project to and
    average a ray/plane depth measurement; empty pixels are filled by
    forward-splatting sweep points. Returns the number of averaged and newly
    filled pixels.
    """
    kh, kw = kf_depth.shape
    sh, sw = sw_depth.shape
    n_avg = 0
    n_new = 0
    md = max_dist
    # inverse of (rot, trans)
    it0 = -(rot[0, 0] * trans[0] + rot[1, 0] * trans[1] + rot[2, 0] * trans[2])
    it1 = -(rot[0, 1] * trans[0] + rot[1, 1] * trans[1] + rot[2, 1] * trans[2])
    it2 = -(rot[0, 2] * trans[0] + rot[1, 2] * trans[1] + rot[2, 2] * trans[2])
    occupied = kf_depth > 0.0
    for i in range(kh):
        for j in range(kw):
            touched[i, j] = False
            if not occupied[i, j]:
                continue
            d0 = kf_depth[i, j]
            dx, dy, dz = kf_dirs[i, j, 0], kf_dirs[i, j, 1], kf_dirs[i, j, 2]
            kx, ky, kz = d0 * dx, d0 * dy, d0 * dz
            sx = rot[0, 0] * kx + rot[1, 0] * ky + rot[2, 0] * kz + it0
            sy = rot[0, 1] * kx + rot[1, 1] * ky + rot[2, 1] * kz + it1
            sz = rot[0, 2] * kx + rot[1, 2] * ky + rot[2, 2] * kz + it2
            if sx == 0.0 and sy == 0.0 and sz == 0.0:
                continue
            row, col, _ = project_one(sx, sy, sz, sw, sh, sw_el_max, sw_d_el)
            si, sj = pixel_of(row, col, sw, sh)
            if si < 0 or not sw_valid[si, sj]:
                continue
            meas, ok = _ray_plane_depth(
                sw_depth[si, sj], sw_dirs[si, sj], sw_nrm[si, sj], rot, trans, dx, dy, dz
            )
            if not ok:
                continue
            if abs(meas - d0) > md:
                continue
            mnx = rot[0, 0] * sw_nrm[si, sj, 0] + rot[0, 1] * sw_nrm[si, sj, 1] + rot[0, 2] * sw_nrm[si, sj, 2]
            mny = rot[1, 0] * sw_nrm[si, sj, 0] + rot[1, 1] * sw_nrm[si, sj, 1] + rot[1, 2] * sw_nrm[si, sj, 2]
            mnz = rot[2, 0] * sw_nrm[si, sj, 0] + rot[2, 1] * sw_nrm[si, sj, 1] + rot[2, 2] * sw_nrm[si, sj, 2]
            knx, kny, knz = kf_nrm[i, j, 0], kf_nrm[i, j, 1], kf_nrm[i, j, 2]
            if not (knx == 0.0 and kny == 0.0 and knz == 0.0):
                if mnx * knx + mny * kny + mnz * knz < cos_theta:
                    continue
            wt = kf_weight[i, j]
            if wt > w_max:
                wt = w_max
            kf_depth[i, j] = (wt * d0 + meas) / (wt + 1.0)
            kf_inten[i, j] = (wt * kf_inten[i, j] + sw_inten[si, sj]) / (wt + 1.0)
            if wt < w_max:
                kf_weight[i, j] = wt + 1
            else:
                kf_weight[i, j] = w_max
            touched[i, j] = True
            n_avg += 1
    # forward splat into empty pixels: nearest sweep sample wins
    best = np.full((kh, kw), np.inf)
    for si in range(sh):
        for sj in range(sw):
            if not sw_valid[si, sj]:
                continue
            ds = sw_depth[si, sj]
            px = ds * sw_dirs[si, sj, 0]
            py = ds * sw_dirs[si, sj, 1]
            pz = ds * sw_dirs[si, sj, 2]
            x = rot[0, 0] * px + rot[0, 1] * py + rot[0, 2] * pz + trans[0]
            y = rot[1, 0] * px + rot[1, 1] * py + rot[1, 2] * pz + trans[1]
            z = rot[2, 0] * px + rot[2, 1] * py + rot[2, 2] * pz + trans[2]
            if x == 0.0 and y == 0.0 and z == 0.0:
                continue
            row, col, rng = project_one(x, y, z, kw, kh, kf_el_max, kf_d_el)
            i, j = pixel_of(row, col, kw, kh)
            if i < 0 or occupied[i, j]:
                continue
            meas, ok = _ray_plane_depth(
                ds, sw_dirs[si, sj], sw_nrm[si, sj], rot, trans,
                kf_dirs[i, j, 0], kf_dirs[i, j, 1], kf_dirs[i, j, 2],
            )
            if not ok or abs(meas - rng) > 0.05 * rng:
                meas = rng
            if rng < best[i, j]:
                best[i, j] = rng
                kf_depth[i, j] = meas
                kf_inten[i, j] = sw_inten[si, sj]
                kf_nrm[i, j, 0] = rot[0, 0] * sw_nrm[si, sj, 0] + rot[0, 1] * sw_nrm[si, sj, 1] + rot[0, 2] * sw_nrm[si, sj, 2]
                kf_nrm[i, j, 1] = rot[1, 0] * sw_nrm[si, sj, 0] + rot[1, 1] * sw_nrm[si, sj, 1] + rot[1, 2] * sw_nrm[si, sj, 2]
                kf_nrm[i, j, 2] = rot[2, 0] * sw_nrm[si, sj, 0] + rot[2, 1] * sw_nrm[si, sj, 1] + rot[2, 2] * sw_nrm[si, sj, 2]
                kf_weight[i, j] = 1
                touched[i, j] = True
    for i in range(kh):
        for j in range(kw):
            if not occupied[i, j] and touched[i, j]:
                n_new += 1
    return n_avg, n_new


@njit(cache=True, inline="always")
def _ray_plane_depth(ds, sdir, snrm, rot, trans, dx, dy, dz):
    """Depth along keyframe ray (dx, dy, dz) of the sweep sample's tangent plane."""
    px = ds * sdir[0]
    py = ds * sdir[1]
    pz = ds * sdir[2]
    x = rot[0, 0] * px + rot[0, 1] * py + rot[0, 2] * pz + trans[0]
    y = rot[1, 0] * px + rot[1, 1] * py + rot[1, 2] * pz + trans[1]
    z = rot[2, 0] * px + rot[2, 1] * py + rot[2, 2] * pz + trans[2]
    nx = rot[0, 0] * snrm[0] + rot[0, 1] * snrm[1] + rot[0, 2] * snrm[2]
    ny = rot[1, 0] * snrm[0] + rot[1, 1] * snrm[1] + rot[1, 2] * snrm[2]
    nz = rot[2, 0] * snrm[0] + rot[2, 1] * snrm[1] + rot[2, 2] * snrm[2]
    rng = math.sqrt(x * x + y * y + z * z)
    if nx == 0.0 and ny == 0.0 and nz == 0.0:
        return rng, True
    den = nx * dx + ny * dy + nz * dz
    if abs(den) < 0.2:
        return rng, False
    lam = (nx * x + ny * y + nz * z) / den
    if lam <= 0.0:
        return rng, False
    # lateral offset between the sample and the intersection stays within a few footprints
    ox = lam * dx - x
    oy = lam * dy - y
    oz = lam * dz - z
    if math.sqrt(ox * ox + oy * oy + oz * oz) > 0.05 * rng + 0.05:
        return rng, False
    return lam, True


@njit(cache=True, inline="always")
def _neighbourhood_min(depth, weight, i, j, min_weight):
    """Smallest confident depth around (i, j); 0 when any neighbour is missing or weak."""
    h, w = depth.shape
    best = np.inf
    for a in range(i - 1, i + 2):
        if a < 0 or a >= h:
            return 0.0
        for b in range(j - 1, j + 2):
            bb = b % w
            d = depth[a, bb]
            if d <= 0.0 or weight[a, bb] < min_weight:
                return 0.0
            if d < best:
                best = d
    return best


@njit(cache=True)
def see_through(in_depth, in_dirs, rot, trans, ot_depth, ot_weight, ot_el_max, ot_d_el, margin, min_weight, invalid):
    """Mark pixels of an incoming keyframe that another keyframe confidently sees past.

    ``rot``/``trans`` map incoming coordinates into the other keyframe. The
    other keyframe's surface range is bounded below by the smallest depth in
    the 3x3 neighbourhood of the pixel the point lands on; on a continuous
    surface that bound never exceeds the true range, so static geometry is
    not marked. Returns the number of newly marked pixels.
    """
    h, w = in_depth.shape
    oh, ow = ot_depth.shape
    n = 0
    for i in range(h):
        for j in range(w):
            d0 = in_depth[i, j]
            if d0 <= 0.0 or invalid[i, j]:
                continue
            px = d0 * in_dirs[i, j, 0]
            py = d0 * in_dirs[i, j, 1]
            pz = d0 * in_dirs[i, j, 2]
            x = rot[0, 0] * px + rot[0, 1] * py + rot[0, 2] * pz + trans[0]
            y = rot[1, 0] * px + rot[1, 1] * py + rot[1, 2] * pz + trans[1]
            z = rot[2, 0] * px + rot[2, 1] * py + rot[2, 2] * pz + trans[2]
            if x == 0.0 and y == 0.0 and z == 0.0:
                continue
            row, col, rng = project_one(x, y, z, ow, oh, ot_el_max, ot_d_el)
            oi, oj = pixel_of(row, col, ow, oh)
            if oi < 0:
                continue
            if _neighbourhood_min(ot_depth, ot_weight, oi, oj, min_weight) > rng + margin:
                invalid[i, j] = True
                n += 1
    return n
