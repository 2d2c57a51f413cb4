"""Compiled inner loops for the brute-force insertability search.

Slack of one placement is the minimum over a set of signed terms:

* every peg vertex and edge sample: signed distance to the hole boundary
  (positive inside the hole);
* every hole vertex: signed distance to the placed peg boundary, positive
  outside the peg.

When the peg lies inside the hole this is exactly the distance between the
two boundaries. A proper edge crossing with all terms non-negative marks a
sliver overlap and is scored ``-CROSSING_PENALTY``.
"""

import math

import numpy as np
from numba import njit

CROSSING_PENALTY = 1e-6


@njit(cache=True)
def signed_distance(px, py, poly):
    n = poly.shape[0]
    inside = False
    dmin2 = np.inf
    j = n - 1
    for i in range(n):
        xi = poly[i, 0]
        yi = poly[i, 1]
        xj = poly[j, 0]
        yj = poly[j, 1]
        if (yi > py) != (yj > py):
            xint = (xj - xi) * (py - yi) / (yj - yi) + xi
            if px < xint:
                inside = not inside
        ex = xj - xi
        ey = yj - yi
        l2 = ex * ex + ey * ey
        t = 0.0
        if l2 > 0.0:
            t = ((px - xi) * ex + (py - yi) * ey) / l2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
        qx = xi + t * ex - px
        qy = yi + t * ey - py
        d2 = qx * qx + qy * qy
        if d2 < dmin2:
            dmin2 = d2
        j = i
    d = math.sqrt(dmin2)
    return d if inside else -d


@njit(cache=True)
def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


@njit(cache=True)
def _has_proper_crossing(peg, tx, ty, hole):
    n = peg.shape[0]
    m = hole.shape[0]
    for i in range(n):
        ax = peg[i, 0] + tx
        ay = peg[i, 1] + ty
        k = (i + 1) % n
        bx = peg[k, 0] + tx
        by = peg[k, 1] + ty
        for j in range(m):
            cx = hole[j, 0]
            cy = hole[j, 1]
            q = (j + 1) % m
            dx = hole[q, 0]
            dy = hole[q, 1]
            o1 = _orient(ax, ay, bx, by, cx, cy)
            o2 = _orient(ax, ay, bx, by, dx, dy)
            if o1 * o2 >= -1e-12:
                continue
            o3 = _orient(cx, cy, dx, dy, ax, ay)
            o4 = _orient(cx, cy, dx, dy, bx, by)
            if o3 * o4 < -1e-12:
                return True
    return False


@njit(cache=True)
def placement_slack(peg, order, samples, hole, tx, ty, stop_at):
    """Boundary slack of ``peg`` translated by (tx, ty) inside ``hole``.

    Returns early with any value <= ``stop_at`` once the placement cannot
    beat it; the value is exact otherwise.
    """
    slack = np.inf
    for k in range(order.shape[0]):
        i = order[k]
        s = signed_distance(peg[i, 0] + tx, peg[i, 1] + ty, hole)
        if s < slack:
            slack = s
            if slack <= stop_at:
                return slack
    for i in range(hole.shape[0]):
        s = -signed_distance(hole[i, 0] - tx, hole[i, 1] - ty, peg)
        if s < slack:
            slack = s
            if slack <= stop_at:
                return slack
    for i in range(samples.shape[0]):
        s = signed_distance(samples[i, 0] + tx, samples[i, 1] + ty, hole)
        if s < slack:
            slack = s
            if slack <= stop_at:
                return slack
    if slack >= 0.0 and _has_proper_crossing(peg, tx, ty, hole):
        return -CROSSING_PENALTY
    return slack


@njit(cache=True)
def grid_search(peg, order, samples, hole, cos_y, sin_y, shifts, clearance, tie_tol):
    """Maximise slack over yaw x translation; earlier grid points win ties.

    ``peg``/``samples`` are centred on the peg centroid and ``hole`` on the
    hole centroid; ``order`` is the visiting order of peg vertices.
    Returns (best_margin, yaw_index, shift_index).
    """
    n_p = peg.shape[0]
    n_s = samples.shape[0]
    rp = np.empty((n_p, 2))
    rs = np.empty((n_s, 2))
    best = -np.inf
    best_y = -1
    best_t = -1
    for iy in range(cos_y.shape[0]):
        c = cos_y[iy]
        s = sin_y[iy]
        for i in range(n_p):
            rp[i, 0] = c * peg[i, 0] - s * peg[i, 1]
            rp[i, 1] = s * peg[i, 0] + c * peg[i, 1]
        for i in range(n_s):
            rs[i, 0] = c * samples[i, 0] - s * samples[i, 1]
            rs[i, 1] = s * samples[i, 0] + c * samples[i, 1]
        for it in range(shifts.shape[0]):
            # slack is compared before subtracting clearance
            threshold = best + clearance + tie_tol
            slack = placement_slack(rp, order, rs, hole, shifts[it, 0], shifts[it, 1], threshold)
            if slack > threshold:
                best = slack - clearance
                best_y = iy
                best_t = it
    return best, best_y, best_t


@njit(cache=True)
def any_fit(peg, order, samples, hole, cos_y, sin_y, shifts, needed):
    """True as soon as one grid placement reaches slack ``needed``."""
    n_p = peg.shape[0]
    n_s = samples.shape[0]
    rp = np.empty((n_p, 2))
    rs = np.empty((n_s, 2))
    stop = needed - 1e-12
    for iy in range(cos_y.shape[0]):
        c = cos_y[iy]
        s = sin_y[iy]
        for i in range(n_p):
            rp[i, 0] = c * peg[i, 0] - s * peg[i, 1]
            rp[i, 1] = s * peg[i, 0] + c * peg[i, 1]
        for i in range(n_s):
            rs[i, 0] = c * samples[i, 0] - s * samples[i, 1]
            rs[i, 1] = s * samples[i, 0] + c * samples[i, 1]
        for it in range(shifts.shape[0]):
            if placement_slack(rp, order, rs, hole, shifts[it, 0], shifts[it, 1], stop) >= needed:
                return True
    return False


@njit(cache=True)
def points_signed_distance(points, poly):
    out = np.empty(points.shape[0])
    for i in range(points.shape[0]):
        out[i] = signed_distance(points[i, 0], points[i, 1], poly)
    return out


# ---------------------------------------------------------------------------
# scene raycasting

SURF_NONE = 0
SURF_TABLE = 1
SURF_BOARD = 2
SURF_FLOOR = 3
SURF_WALL = 4
SURF_BOX = 5

LABEL_TABLE = -1
LABEL_BOARD = -2
LABEL_BOX0 = 1000


@njit(cache=True)
def _inside_slice(px, py, verts, start, stop):
    inside = False
    j = stop - 1
    for i in range(start, stop):
        yi = verts[i, 1]
        yj = verts[j, 1]
        if (yi > py) != (yj > py):
            xi = verts[i, 0]
            xint = (verts[j, 0] - xi) * (py - yi) / (yj - yi) + xi
            if px < xint:
                inside = not inside
        j = i
    return inside


@njit(cache=True)
def raycast(origin, R, fx, fy, cx, cy, width, height,
            board, board_z, holes, hole_off, floor_z, boxes, box_off, box_z):
    """Cast one ray per pixel centre against the board, its holes, boxes and table.

    Lengths are millimetres in the world frame. Returns the camera z-depth,
    a segment label and a surface code per pixel. Boxes must be ordered
    tallest first; prism side walls are not modelled.
    """
    depth = np.zeros((height, width))
    label = np.full((height, width), LABEL_TABLE, dtype=np.int32)
    surf = np.zeros((height, width), dtype=np.uint8)
    nb = board.shape[0]
    nh = hole_off.shape[0] - 1
    nx = box_off.shape[0] - 1
    for v in range(height):
        yc = (v - cy) / fy
        for u in range(width):
            xc = (u - cx) / fx
            dx = R[0, 0] * xc + R[0, 1] * yc + R[0, 2]
            dy = R[1, 0] * xc + R[1, 1] * yc + R[1, 2]
            dz = R[2, 0] * xc + R[2, 1] * yc + R[2, 2]
            if dz >= 0.0:
                continue
            t = (board_z - origin[2]) / dz
            x = origin[0] + t * dx
            y = origin[1] + t * dy
            if nb > 0 and _inside_slice(x, y, board, 0, nb):
                k = -1
                for h in range(nh):
                    if _inside_slice(x, y, holes, hole_off[h], hole_off[h + 1]):
                        k = h
                        break
                if k < 0:
                    depth[v, u] = t
                    label[v, u] = LABEL_BOARD
                    surf[v, u] = SURF_BOARD
                    continue
                tf = (floor_z[k] - origin[2]) / dz
                xf = origin[0] + tf * dx
                yf = origin[1] + tf * dy
                label[v, u] = k
                if _inside_slice(xf, yf, holes, hole_off[k], hole_off[k + 1]):
                    depth[v, u] = tf
                    surf[v, u] = SURF_FLOOR
                else:
                    lo = t
                    hi = tf
                    for _ in range(40):
                        mid = 0.5 * (lo + hi)
                        if _inside_slice(origin[0] + mid * dx, origin[1] + mid * dy,
                                         holes, hole_off[k], hole_off[k + 1]):
                            lo = mid
                        else:
                            hi = mid
                    depth[v, u] = 0.5 * (lo + hi)
                    surf[v, u] = SURF_WALL
                continue
            hit = False
            for b in range(nx):
                tb = (box_z[b] - origin[2]) / dz
                xb = origin[0] + tb * dx
                yb = origin[1] + tb * dy
                if _inside_slice(xb, yb, boxes, box_off[b], box_off[b + 1]):
                    depth[v, u] = tb
                    label[v, u] = LABEL_BOX0 + b
                    surf[v, u] = SURF_BOX
                    hit = True
                    break
            if not hit:
                depth[v, u] = -origin[2] / dz
                surf[v, u] = SURF_TABLE
    return depth, label, surf
