"""Planar hole pose: yaw from canonicalisation plus four-way classification, position from the cloud centroid.

Image-plane angles use display coordinates (u right, -v up) so they read
counter-clockwise like world yaw. For a downward-looking camera, a world
direction at angle a appears at ``a - camera_yaw``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator

from ._validation import check_image, check_mask
from .detection import centroid
from .errors import AllUnparseableError, BackendError, ValidationError
from .geometry import (
    OrientedRect,
    Polygon2D,
    SE2Pose,
    angle_diff,
    convex_hull,
    min_area_rect,
    rotate_points,
)
from .matcher import InputStrategy, OracleBackend, build_prompt, rank_candidates

ROTATIONS = (0, 90, 180, 270)


@dataclass
class CanonicalizedImage:
    """Crop rotated by ``-theta`` about its mask's bounding-rectangle centre."""

    image: np.ndarray
    mask: np.ndarray
    theta: float
    rect: OrientedRect
    center_px: tuple  # (u, v) of the rectangle centre on the canvas


@dataclass
class YawEstimate:
    theta_yaw: float
    theta_rotate: int
    theta: float
    ranking: list = field(default_factory=list)  # [(rotation, MatchResponse or None)] best first

    def __post_init__(self):
        expected = (self.theta_rotate + self.theta) % 360.0
        if abs(((self.theta_yaw - expected) + 180.0) % 360.0 - 180.0) > 1e-9:
            raise ValidationError("theta_yaw must equal theta_rotate + theta (mod 360)")

    def yaw_for_rank(self, rank):
        """Yaw hypothesis using the rotation at position ``rank`` of the ranking."""
        return (self.ranking[rank][0] + self.theta) % 360.0

    @property
    def hypotheses(self):
        return [self.yaw_for_rank(i) for i in range(len(self.ranking))]

    def to_dict(self):
        return {
            "theta_yaw": self.theta_yaw,
            "theta_rotate": self.theta_rotate,
            "theta": self.theta,
            "ranking": [{"rotation": r, "response": None if m is None else m.to_dict()} for r, m in self.ranking],
        }


def _refine_angle(edge_pts, angle, center, min_cover=0.75, band_px=1.5, passes=2):
    """Correct ``angle`` by line fits to boundary runs lying flush along the rectangle's sides.

    Near axis-aligned edges show a single pixel step, which the hull
    snaps to; a least-squares line through the whole run keeps the step's
    position. Sides covered by less than ``min_cover`` of their length
    (arcs, short arm ends) are ignored.
    """
    for _ in range(passes):
        local = rotate_points(edge_pts - np.asarray(center), -angle)
        lo, hi = local.min(axis=0), local.max(axis=0)
        devs, weights = [], []
        for axis in (0, 1):
            span = hi[1 - axis] - lo[1 - axis]
            for side in (lo[axis], hi[axis]):
                near = np.abs(local[:, axis] - side) <= band_px
                along, across = local[near, 1 - axis], local[near, axis]
                if near.sum() < 3 or np.ptp(along) < min_cover * span:
                    continue
                slope = np.polyfit(along, across, 1)[0]
                devs.append(math.degrees(math.atan(slope)) * (1.0 if axis == 1 else -1.0))
                weights.append(np.ptp(along))
        if not devs:
            break
        angle += float(np.average(devs, weights=weights))
    return angle


def mask_rect(mask, refine=True) -> OrientedRect:
    """Minimum-area rectangle of a mask in display coordinates (pixel centres).

    With ``refine`` the hull angle is corrected from straight flush sides.
    """
    m = check_mask(mask, min_pixels=3)
    v, u = np.nonzero(m)
    hull = convex_hull(np.stack([u, -v], axis=1).astype(float))
    rect = min_area_rect(hull)
    if not refine:
        return rect
    ev, eu = np.nonzero(m & ~ndimage.binary_erosion(m))
    angle = _refine_angle(np.stack([eu, -ev], axis=1).astype(float), rect.angle, rect.center) % 90.0
    if angle >= 90.0 - 1e-12:
        angle = 0.0
    if abs(angle_diff(angle, rect.angle, 90.0)) < 1e-9:
        return rect
    local = rotate_points(hull.vertices, -angle)
    lo, hi = local.min(axis=0), local.max(axis=0)
    cx, cy = rotate_points(((lo + hi) / 2)[None, :], angle)[0]
    return OrientedRect((float(cx), float(cy)), tuple(sorted(((hi - lo) / 2).tolist(), reverse=True)), angle)


def _rotate_canvas(arr, theta, center_disp, order):
    """Rotate ``arr`` by -theta (display sense) about ``center_disp`` onto a padded canvas."""
    h, w = arr.shape[:2]
    c, s = math.cos(math.radians(theta)), math.sin(math.radians(theta))
    cx, cy = center_disp
    corners = np.array([[-0.5, 0.5], [w - 0.5, 0.5], [w - 0.5, -(h - 0.5)], [-0.5, -(h - 0.5)]])
    rel = corners - [cx, cy]
    # forward map by -theta
    rot = np.stack([c * rel[:, 0] + s * rel[:, 1], -s * rel[:, 0] + c * rel[:, 1]], axis=1)
    xmin, ymax = math.floor(rot[:, 0].min()), math.ceil(rot[:, 1].max())
    W = int(math.ceil(rot[:, 0].max()) - xmin) + 1
    H = int(ymax - math.floor(rot[:, 1].min())) + 1
    uu, vv = np.meshgrid(np.arange(W, dtype=float), np.arange(H, dtype=float))
    xr, yr = uu + xmin, ymax - vv
    # inverse map by +theta back to source display coordinates
    sx = c * xr - s * yr + cx
    sy = s * xr + c * yr + cy
    coords = [-sy, sx]  # (row, col)
    if arr.ndim == 2:
        out = ndimage.map_coordinates(arr.astype(float), coords, order=order, cval=0.0, mode="constant")
    else:
        out = np.stack([ndimage.map_coordinates(arr[..., k].astype(float), coords, order=order, cval=0.0)
                        for k in range(arr.shape[2])], axis=-1)
    return out, (float(-xmin), float(ymax))


def canonicalize(image, mask) -> CanonicalizedImage:
    """Rotate ``image`` and ``mask`` so the mask's minimum-area rectangle is axis-aligned.

    Masks use nearest-neighbour resampling and stay binary; intensity
    images use bilinear interpolation. The canvas grows to hold the whole
    rotated crop, with zero fill.
    """
    img = check_image(image)
    m = check_mask(mask, min_pixels=3)
    if img.shape[:2] != m.shape:
        raise ValidationError("image and mask differ in size")
    rect = mask_rect(m)
    theta = rect.angle
    out_img, center = _rotate_canvas(img, theta, rect.center, order=1)
    out_mask, _ = _rotate_canvas(m.astype(np.uint8), theta, rect.center, order=0)
    if img.dtype == np.uint8:
        out_img = np.clip(np.rint(out_img), 0, 255).astype(np.uint8)
    else:
        out_img = out_img.astype(img.dtype)
    return CanonicalizedImage(out_img, out_mask > 0.5, theta, rect, center)


def four_rotations(canonical) -> list:
    """Canonical image turned clockwise by 0, 90, 180 and 270 degrees (pixel permutations)."""
    img = canonical.image if isinstance(canonical, CanonicalizedImage) else np.asarray(canonical)
    return [np.ascontiguousarray(np.rot90(img, k=-(r // 90))) for r in ROTATIONS]


@dataclass
class YawContext:
    """Ground truth an oracle backend needs to judge rotated hole views.

    ``hole_shape`` is in the hole frame and ``hole_yaw_deg`` is the hole
    frame's angle in display coordinates.
    """

    peg_shape: Polygon2D
    hole_shape: Polygon2D
    hole_yaw_deg: float
    group: str | None = None

    def displayed(self, theta, rotation):
        return self.hole_shape.rotated(self.hole_yaw_deg - theta - rotation)


def estimate_yaw(peg_image, canonical: CanonicalizedImage, backend, *, context: YawContext | None = None,
                 ) -> YawEstimate:
    """Ask the backend which 90-degree turn of the canonical crop matches the peg."""
    responses = []
    for i, (r, img) in enumerate(zip(ROTATIONS, four_rotations(canonical))):
        ctx = {}
        if context is not None:
            ctx = {"peg_shape": context.peg_shape, "hole_shape": context.displayed(canonical.theta, r),
                   "group": context.group}
        bundle = build_prompt([peg_image], [img], InputStrategy.CROSS_SECTIONAL_ONLY, task="yaw", context=ctx)
        try:
            responses.append((i, backend.answer(bundle, i)))
        except BackendError:
            responses.append((i, None))
    if all(resp is None for _, resp in responses):
        raise AllUnparseableError("no rotation produced a verdict")
    order = rank_candidates(responses)
    by_index = dict(responses)
    ranking = [(ROTATIONS[i], by_index[i]) for i in order]
    rot = ranking[0][0]
    theta = canonical.theta
    return YawEstimate((rot + theta) % 360.0, rot, theta, ranking)


def localize(candidate) -> np.ndarray:
    """Hole position: centroid of the candidate's world-frame cloud (metres)."""
    return centroid(candidate.cloud)


def se2_estimate(candidate, yaw: YawEstimate, rank=0) -> SE2Pose:
    """World SE(2) pose from the centroid and the yaw hypothesis at ``rank``."""
    p = localize(candidate)
    return SE2Pose(p[0], p[1], yaw.yaw_for_rank(rank) + getattr(candidate, "camera_yaw_deg", 0.0))


def yaw_context_for(candidate, peg_shape, group=None):
    """Oracle context from a synthetic candidate's ground truth, or None when unknown."""
    truth = candidate.truth or {}
    if peg_shape is None or "polygon_local_mm" not in truth:
        return None
    yaw_disp = truth["pose_world"]["yaw"] - candidate.camera_yaw_deg
    return YawContext(peg_shape, Polygon2D(truth["polygon_local_mm"]), yaw_disp, group)


class YawEstimator(BaseEstimator):
    """Estimator wrapper: ``fit(peg)`` then ``predict(candidate)`` returns a YawEstimate."""

    def __init__(self, backend=None, view="top"):
        self.backend = backend
        self.view = view

    def fit(self, peg, y=None):
        if self.view not in peg.images:
            raise ValidationError(f"peg has no '{self.view}' view")
        self.backend_ = self.backend if self.backend is not None else OracleBackend()
        self.peg_ = peg
        return self

    def canonical(self, candidate):
        return canonicalize(candidate.views[self.view], candidate.mask_crops[self.view])

    def predict(self, candidate, group=None) -> YawEstimate:
        if not hasattr(self, "peg_"):
            raise ValidationError("YawEstimator is not fitted")
        ctx = yaw_context_for(candidate, getattr(self.peg_, "shape", None), group)
        return estimate_yaw(self.peg_.images[self.view], self.canonical(candidate), self.backend_, context=ctx)
