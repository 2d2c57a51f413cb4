"""Rigid-body math, pinhole deprojection and planar polygon machinery.

Units are explicit at every boundary: image-plane quantities are pixels,
board cross-sections are millimetres and world kinematics are metres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .errors import (
    DegenerateError,
    InvalidPolygonError,
    InvalidTransformError,
    ValidationError,
    ZeroDepthError,
)

ORTHONORMAL_TOL = 1e-9
# re-orthonormalise composed rotations well before they reach ORTHONORMAL_TOL
_DRIFT_LIMIT = 1e-12

YAW_STEP_DEG = 1.0
SHIFT_RANGE_MM = 2.0
SHIFT_STEP_MM = 0.25
EDGE_SAMPLE_MM = 0.5
FIT_TOL_MM = 1e-9


def _orthonormal_error(R):
    return float(np.max(np.abs(R.T @ R - np.eye(3))))


def _reorthonormalize(R):
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


@dataclass(frozen=True, eq=False)
class SE3Transform:
    """Rigid transform mapping points p to ``rotation @ p + translation`` (metres)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidTransformError("transform has non-finite entries")
        if _orthonormal_error(R) > ORTHONORMAL_TOL or abs(np.linalg.det(R) - 1.0) > ORTHONORMAL_TOL:
            raise InvalidTransformError("rotation is not orthonormal with det +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix):
        M = np.asarray(matrix, dtype=float)
        if M.shape != (4, 4):
            raise InvalidTransformError(f"expected 4x4 matrix, got {M.shape}")
        if not np.allclose(M[3], [0, 0, 0, 1], atol=ORTHONORMAL_TOL):
            raise InvalidTransformError("bottom row must be [0, 0, 0, 1]")
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_rpy(cls, roll=0.0, pitch=0.0, yaw=0.0, translation=(0.0, 0.0, 0.0)):
        """Build from fixed-axis roll/pitch/yaw in degrees (R = Rz @ Ry @ Rx)."""
        return cls(rotation_z(yaw) @ rotation_y(pitch) @ rotation_x(roll), translation)

    def as_matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def inverse(self):
        Rt = self.rotation.T
        return SE3Transform(Rt, -Rt @ self.translation)

    def apply(self, points):
        return transform_points(points, self)

    def __matmul__(self, other):
        return compose(self, other)

    def allclose(self, other, atol=1e-9):
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )

    def __repr__(self):
        return f"SE3Transform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def rotation_x(deg):
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def rotation_y(deg):
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def rotation_z(deg):
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


def compose(T_a: SE3Transform, T_b: SE3Transform) -> SE3Transform:
    """Return T_a ∘ T_b, i.e. the transform applying ``T_b`` first."""
    R = T_a.rotation @ T_b.rotation
    if _orthonormal_error(R) > _DRIFT_LIMIT:
        R = _reorthonormalize(R)
    return SE3Transform(R, T_a.rotation @ T_b.translation + T_a.translation)


def transform_points(points, T: SE3Transform) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    single = P.ndim == 1
    P = P.reshape(-1, 3)
    out = P @ T.rotation.T + T.translation
    return out[0] if single else out


def _wrap360(deg):
    out = float(deg) % 360.0
    # tiny negatives wrap to exactly 360.0
    return 0.0 if out >= 360.0 or out == 0.0 else out


def angle_diff(a, b, period=360.0):
    """Smallest absolute difference between two angles modulo ``period``."""
    d = (float(a) - float(b)) % period
    return min(d, period - d)


@dataclass(frozen=True)
class SE2Pose:
    """Planar pose: x, y in metres (world frame), yaw in degrees [0, 360)."""

    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "yaw"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"SE2Pose.{name} must be finite")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", _wrap360(self.yaw))

    def compose(self, other: "SE2Pose") -> "SE2Pose":
        c, s = math.cos(math.radians(self.yaw)), math.sin(math.radians(self.yaw))
        return SE2Pose(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.yaw + other.yaw,
        )

    def to_dict(self):
        return {"x": self.x, "y": self.y, "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d):
        return cls(d["x"], d["y"], d.get("yaw", 0.0))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValidationError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point must lie inside the image")

    def as_matrix(self):
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


def deproject_pixel(u, v, depth, K: CameraIntrinsics) -> np.ndarray:
    """Back-project pixel (u, v) with depth in millimetres to camera-frame metres."""
    if depth == 0:
        raise ZeroDepthError(f"pixel ({u}, {v}) has invalid depth 0")
    if depth < 0:
        raise ValidationError("depth must be positive")
    if not (0 <= u < K.width and 0 <= v < K.height):
        raise ValidationError(f"pixel ({u}, {v}) outside {K.width}x{K.height} image")
    d = depth / 1000.0
    return np.array([(u - K.cx) * d / K.fx, (v - K.cy) * d / K.fy, d])


def deproject_pixels(u, v, depth, K: CameraIntrinsics) -> np.ndarray:
    """Vectorised :func:`deproject_pixel`; callers must drop zero depths first."""
    d = np.asarray(depth, dtype=float) / 1000.0
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return np.stack([(u - K.cx) * d / K.fx, (v - K.cy) * d / K.fy, d], axis=-1)


# ---------------------------------------------------------------------------
# polygons


def _signed_area(V):
    x, y = V[:, 0], V[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_intersect(p1, p2, q1, q2):
    """Vectorised closed-segment intersection test (collinear overlap counts)."""

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    def on_seg(a, b, c):
        return (
            (np.minimum(a[..., 0], b[..., 0]) - 1e-12 <= c[..., 0])
            & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0]) + 1e-12)
            & (np.minimum(a[..., 1], b[..., 1]) - 1e-12 <= c[..., 1])
            & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1]) + 1e-12)
        )

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    eps = 1e-12
    proper = (o1 * o2 < -eps) & (o3 * o4 < -eps)
    touch = (
        ((np.abs(o1) <= eps) & on_seg(p1, p2, q1))
        | ((np.abs(o2) <= eps) & on_seg(p1, p2, q2))
        | ((np.abs(o3) <= eps) & on_seg(q1, q2, p1))
        | ((np.abs(o4) <= eps) & on_seg(q1, q2, p2))
    )
    return proper | touch


@dataclass(frozen=True, eq=False)
class Polygon2D:
    """Simple polygon with counter-clockwise vertices (millimetres)."""

    vertices: np.ndarray

    def __post_init__(self):
        V = np.array(self.vertices, dtype=float)
        if V.ndim != 2 or V.shape[1] != 2:
            raise InvalidPolygonError(f"vertices must have shape (n, 2), got {V.shape}")
        if len(V) > 1 and np.allclose(V[0], V[-1]):
            V = V[:-1]
        if len(V) < 3:
            raise InvalidPolygonError("polygon needs at least 3 vertices")
        if not np.all(np.isfinite(V)):
            raise InvalidPolygonError("polygon has non-finite vertices")
        if _signed_area(V) <= 0:
            raise InvalidPolygonError("polygon must be counter-clockwise with positive area")
        if not _is_simple(V):
            raise InvalidPolygonError("polygon is self-intersecting")
        V.setflags(write=False)
        object.__setattr__(self, "vertices", V)

    @classmethod
    def from_points(cls, points):
        """Accept either orientation; clockwise input is reversed."""
        V = np.array(points, dtype=float)
        if len(V) >= 3 and _signed_area(V) < 0:
            V = V[::-1]
        return cls(V)

    def __len__(self):
        return len(self.vertices)

    @property
    def area(self):
        return _signed_area(self.vertices)

    @property
    def centroid(self):
        return _polygon_centroid(self.vertices)

    @property
    def bounds(self):
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def edges(self):
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    def rotated(self, deg, about=(0.0, 0.0)):
        return Polygon2D(rotate_points(self.vertices, deg, about))

    def translated(self, dx, dy):
        return Polygon2D(self.vertices + np.array([dx, dy], dtype=float))

    def scaled(self, sx, sy=None):
        sy = sx if sy is None else sy
        return Polygon2D.from_points(self.vertices * np.array([sx, sy]))

    def centered(self):
        return self.translated(*(-self.centroid))

    def contains(self, points):
        return points_in_polygon(points, self.vertices)

    def signed_distance(self, points):
        """Signed distance to the boundary, positive inside."""
        P = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 2))
        return _kernels.points_signed_distance(P, np.ascontiguousarray(self.vertices))

    def key(self):
        return self.vertices.tobytes()

    def __eq__(self, other):
        return isinstance(other, Polygon2D) and self.vertices.shape == other.vertices.shape and bool(
            np.array_equal(self.vertices, other.vertices)
        )

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"Polygon2D({self.vertices.round(4).tolist()})"


def _is_simple(V):
    n = len(V)
    if n == 3:
        return abs(_signed_area(V)) > 0
    a, b = V, np.roll(V, -1, axis=0)
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))  # first and last edges are adjacent
    i, j = i[keep], j[keep]
    return not bool(np.any(_segments_intersect(a[i], b[i], a[j], b[j])))


def rotate_points(points, deg, about=(0.0, 0.0)):
    P = np.asarray(points, dtype=float)
    c0 = np.asarray(about, dtype=float)
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    R = np.array([[c, -s], [s, c]])
    return (P - c0) @ R.T + c0


def points_in_polygon(points, vertices) -> np.ndarray:
    """Even-odd containment test, vectorised over points."""
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    V = np.asarray(vertices, dtype=float)
    px, py = P[:, 0], P[:, 1]
    inside = np.zeros(len(P), dtype=bool)
    xj, yj = V[-1]
    for xi, yi in V:
        crosses = (yi > py) != (yj > py)
        if np.any(crosses):
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = (xj - xi) * (py - yi) / (yj - yi) + xi
            inside ^= crosses & (px < xint)
        xj, yj = xi, yi
    return inside


def offset_polygon(poly: Polygon2D, distance_mm: float) -> Polygon2D:
    """Outward mitre offset: every edge moves ``distance_mm`` along its normal."""
    if distance_mm == 0:
        return poly
    V = poly.vertices
    nxt = np.roll(V, -1, axis=0)
    d = nxt - V
    L = np.linalg.norm(d, axis=1)
    normals = np.stack([d[:, 1], -d[:, 0]], axis=1) / L[:, None]
    # line k: normals[k] . x = c[k]
    c = np.einsum("ij,ij->i", normals, V) + distance_mm
    out = []
    for i in range(len(V)):
        n0, n1 = normals[i - 1], normals[i]
        A = np.array([n0, n1])
        det = np.linalg.det(A)
        if abs(det) < 1e-12:
            out.append(V[i] + distance_mm * n1)
        else:
            out.append(np.linalg.solve(A, [c[i - 1], c[i]]))
    return Polygon2D(np.array(out))


def rotational_symmetry_order(poly: Polygon2D, tol=1e-6, max_order=8) -> int:
    """Largest k <= max_order such that rotating by 360/k maps the polygon onto itself."""
    V = poly.vertices - poly.centroid
    for k in range(max_order, 1, -1):
        if len(V) % k:
            continue
        R = rotate_points(V, 360.0 / k)
        d = np.linalg.norm(R[:, None, :] - V[None, :, :], axis=2)
        if np.all(d.min(axis=1) < tol * max(1.0, np.abs(V).max())):
            return k
    return 1


# ---------------------------------------------------------------------------
# hull and bounding rectangle


@dataclass(frozen=True)
class OrientedRect:
    """Minimum-area rectangle; ``angle`` is the long-edge direction mod 90 in [0, 90)."""

    center: tuple
    half_extents: tuple
    angle: float

    def __post_init__(self):
        w, h = self.half_extents
        if not (w >= h > 0):
            raise ValidationError("half extents must satisfy w >= h > 0")
        if not (0 <= self.angle < 90):
            raise ValidationError("angle must lie in [0, 90)")

    @property
    def area(self):
        return 4.0 * self.half_extents[0] * self.half_extents[1]

    def corners(self):
        w, h = self.half_extents
        local = np.array([[-w, -h], [w, -h], [w, h], [-w, h]])
        return rotate_points(local, self.angle) + np.asarray(self.center)


def convex_hull(points) -> Polygon2D:
    """Andrew's monotone chain; returns the hull counter-clockwise."""
    P = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(P) < 3:
        raise DegenerateError(f"need at least 3 distinct points, got {len(P)}")

    # turns smaller than this count as straight, so near-collinear slivers never reach the hull
    eps = 1e-12 * max(1.0, float(np.ptp(P))) ** 2

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    pts = [tuple(p) for p in P]  # np.unique sorts lexicographically
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= eps:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= eps:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3 or _signed_area(hull) <= eps:
        raise DegenerateError("points are collinear")
    return Polygon2D(hull)


def _mod90(deg):
    a = deg % 90.0
    if a >= 90.0 - 1e-9 or a < 1e-12:
        return 0.0
    return a


def min_area_rect(hull: Polygon2D) -> OrientedRect:
    """Rotating-calipers minimum-area rectangle of a convex polygon.

    One rectangle edge is collinear with a hull edge. Among equal-area
    candidates the smaller reported angle wins.
    """
    V = hull.vertices
    if hull.area <= 1e-12:
        raise DegenerateError("hull has zero area")
    d = np.roll(V, -1, axis=0) - V
    L = np.linalg.norm(d, axis=1)
    ok = L > 0
    e = d[ok] / L[ok, None]
    n = np.stack([-e[:, 1], e[:, 0]], axis=1)
    pe = V @ e.T  # (nv, ne)
    pn = V @ n.T
    ext_e = pe.max(axis=0) - pe.min(axis=0)
    ext_n = pn.max(axis=0) - pn.min(axis=0)
    areas = ext_e * ext_n
    angles_e = np.degrees(np.arctan2(e[:, 1], e[:, 0]))
    long_dir = np.where(ext_e >= ext_n, angles_e, angles_e + 90.0)
    reported = np.array([_mod90(a) for a in long_dir])
    amin = areas.min()
    tied = np.flatnonzero(areas <= amin * (1 + 1e-12) + 1e-15)
    k = tied[np.argmin(reported[tied])]
    ce = 0.5 * (pe[:, k].max() + pe[:, k].min())
    cn = 0.5 * (pn[:, k].max() + pn[:, k].min())
    center = ce * e[k] + cn * n[k]
    w, h = sorted((ext_e[k] / 2.0, ext_n[k] / 2.0), reverse=True)
    if h <= 0:
        raise DegenerateError("hull has zero width")
    return OrientedRect((float(center[0]), float(center[1])), (float(w), float(h)), float(reported[k]))


# ---------------------------------------------------------------------------
# brute-force insertability oracle


@dataclass(frozen=True)
class Insertability:
    fits: bool
    margin_mm: float
    best_yaw: float
    best_offset_mm: tuple = (0.0, 0.0)

    def __iter__(self):
        return iter((self.fits, self.margin_mm, self.best_yaw))


def _edge_samples(V, spacing):
    pts = []
    nxt = np.roll(V, -1, axis=0)
    for a, b in zip(V, nxt):
        k = int(math.ceil(np.linalg.norm(b - a) / spacing))
        if k > 1:
            t = np.arange(1, k)[:, None] / k
            pts.append(a + t * (b - a))
    return np.concatenate(pts) if pts else np.zeros((0, 2))


def default_yaw_grid(step_deg=YAW_STEP_DEG):
    return np.arange(0.0, 360.0, step_deg)


def aligned_yaw_grid(window_deg=3.0, step_deg=YAW_STEP_DEG):
    """Yaws ordered 0, +s, -s, +2s, ... so ties prefer the smallest deviation."""
    out = [0.0]
    k = 1
    while k * step_deg <= window_deg + 1e-9:
        out += [k * step_deg, -k * step_deg]
        k += 1
    return np.array(out)


def shift_grid(range_mm=SHIFT_RANGE_MM, step_mm=SHIFT_STEP_MM):
    n = int(round(range_mm / step_mm))
    ticks = np.arange(-n, n + 1) * step_mm
    # nearest-to-centre first so ties keep centroid alignment
    g = np.array([(x, y) for x in ticks for y in ticks])
    order = np.lexsort((g[:, 1], g[:, 0], np.hypot(g[:, 0], g[:, 1]).round(9)))
    return g[order]


def insertability(
    peg: Polygon2D,
    hole: Polygon2D,
    clearance_mm: float = 0.0,
    *,
    yaws=None,
    shift_range_mm=SHIFT_RANGE_MM,
    shift_step_mm=SHIFT_STEP_MM,
    edge_sample_mm=EDGE_SAMPLE_MM,
) -> Insertability:
    """Decide by exhaustive grid search whether ``peg`` fits into ``hole``.

    The peg (about its centroid) is rotated over ``yaws`` (default every
    1 deg in [0, 360)) and translated on a square grid of ±2 mm in 0.25 mm
    steps around centroid alignment. ``margin_mm`` is the best boundary slack
    minus ``clearance_mm``; ``fits`` is ``margin_mm >= 0`` (1e-9 tolerance).
    Ties go to the earlier yaw in ``yaws``.
    """
    if not isinstance(peg, Polygon2D) or not isinstance(hole, Polygon2D):
        raise InvalidPolygonError("peg and hole must be Polygon2D")
    if clearance_mm < 0 or not math.isfinite(clearance_mm):
        raise ValidationError("clearance_mm must be a finite value >= 0")
    yaw_arr = default_yaw_grid() if yaws is None else np.asarray(yaws, dtype=float)
    return _insertability_cached(
        peg.key(), len(peg), hole.key(), len(hole), float(clearance_mm),
        yaw_arr.tobytes(), float(shift_range_mm), float(shift_step_mm), float(edge_sample_mm),
    )


def _polygon_centroid(V):
    x, y = V[:, 0], V[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    return np.array([((x + xn) * cross).sum() / (6 * a), ((y + yn) * cross).sum() / (6 * a)])


def _prepared(P, H, spacing):
    P = np.ascontiguousarray(P - _polygon_centroid(P))
    H = np.ascontiguousarray(H - _polygon_centroid(H))
    # far vertices first: they are the likeliest to violate, which speeds early exit
    order = np.argsort(-np.hypot(P[:, 0], P[:, 1]), kind="stable").astype(np.int64)
    S = np.ascontiguousarray(_edge_samples(P, spacing))
    return P, H, order, S


_WIDTH_DIRS = 180


@lru_cache(maxsize=4096)
def _width_profile(key, n):
    """Polygon width along directions 0, 1, ..., 179 degrees."""
    V = np.frombuffer(key).reshape(n, 2)
    phi = np.radians(np.arange(_WIDTH_DIRS, dtype=float))
    proj = V @ np.stack([np.cos(phi), np.sin(phi)])
    return proj.max(axis=0) - proj.min(axis=0)


def _width_feasible(peg, hole, yaws, slack):
    """Per yaw: the rotated peg's width plus ``2 * slack`` stays within the hole's width in every sampled direction."""
    hole_w = _width_profile(hole.key(), len(hole))
    grow = 2.0 * max(slack, 0.0) - 1e-9
    whole = np.rint(yaws)
    if np.all(np.abs(yaws - whole) < 1e-12):
        peg_w = _width_profile(peg.key(), len(peg))
        idx = (np.arange(_WIDTH_DIRS)[None, :] - whole.astype(np.int64)[:, None]) % _WIDTH_DIRS
        return np.all(peg_w[idx] + grow <= hole_w[None, :], axis=1)
    phi = np.radians(np.arange(_WIDTH_DIRS, dtype=float))[None, :] - np.radians(yaws)[:, None]
    proj = peg.vertices[:, 0, None, None] * np.cos(phi) + peg.vertices[:, 1, None, None] * np.sin(phi)
    return np.all(proj.max(axis=0) - proj.min(axis=0) + grow <= hole_w[None, :], axis=1)


def fits_somewhere(
    peg: Polygon2D,
    hole: Polygon2D,
    clearance_mm: float = 0.0,
    *,
    yaws=None,
    shift_range_mm=SHIFT_RANGE_MM,
    shift_step_mm=SHIFT_STEP_MM,
    edge_sample_mm=EDGE_SAMPLE_MM,
) -> bool:
    """Same verdict as ``insertability(...).fits`` without computing the margin.

    Stops at the first admitting placement. Yaws at which the rotated peg
    hull, grown by the clearance, is wider than the hole hull in some
    direction are skipped: no placement at such a yaw can keep every peg
    vertex inside.
    """
    if not isinstance(peg, Polygon2D) or not isinstance(hole, Polygon2D):
        raise InvalidPolygonError("peg and hole must be Polygon2D")
    if clearance_mm < 0 or not math.isfinite(clearance_mm):
        raise ValidationError("clearance_mm must be a finite value >= 0")
    yaw_arr = default_yaw_grid() if yaws is None else np.asarray(yaws, dtype=float)
    needed = clearance_mm - FIT_TOL_MM
    yaw_arr = yaw_arr[_width_feasible(peg, hole, yaw_arr, needed)]
    if yaw_arr.size == 0:
        return False
    P, H, order, S = _prepared(peg.vertices, hole.vertices, edge_sample_mm)
    rad = np.radians(yaw_arr)
    shifts = np.ascontiguousarray(shift_grid(shift_range_mm, shift_step_mm))
    return bool(_kernels.any_fit(P, order, S, H, np.cos(rad), np.sin(rad), shifts, needed))


@lru_cache(maxsize=65536)
def _insertability_cached(peg_key, n_peg, hole_key, n_hole, clearance, yaw_key, shift_range, shift_step, spacing):
    P = np.frombuffer(peg_key).reshape(n_peg, 2)
    H = np.frombuffer(hole_key).reshape(n_hole, 2)
    yaws = np.frombuffer(yaw_key)
    P, H, order, S = _prepared(P, H, spacing)
    rad = np.radians(yaws)
    shifts = np.ascontiguousarray(shift_grid(shift_range, shift_step))
    best, iy, it = _kernels.grid_search(P, order, S, H, np.cos(rad), np.sin(rad), shifts, clearance, 1e-9)
    return Insertability(
        fits=bool(best >= -FIT_TOL_MM),
        margin_mm=float(best),
        best_yaw=_wrap360(yaws[iy]),
        best_offset_mm=(float(shifts[it, 0]), float(shifts[it, 1])),
    )
