"""Scene ingestion and candidate-hole extraction.

A scene directory holds ``scene.json`` plus PGM rasters. Every segment mask
in the top view is lifted to a world-frame point cloud through the
gripper/camera chain; segments whose mean height falls below the height
threshold (table clutter) are dropped, and the survivors are cropped from
every view.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_cloud, check_mask, check_same_shape
from .errors import (
    EmptyCloudError,
    FormatError,
    InvalidTransformError,
    MissingFileError,
    ValidationError,
)
from .geometry import CameraIntrinsics, Polygon2D, SE3Transform, compose, deproject_pixels, transform_points
from .pgm import read_pgm, write_pgm

SCENE_FORMAT = "pegmate-scene/1"
Z_THRESHOLD_M = 0.050
CROP_MARGIN_PX = 16
DEPTH_VIEW = "top"


@dataclass
class Scene:
    """One perception snapshot: top-view depth, grayscale views and segment masks.

    ``masks[k][view]`` is the binary mask of segment ``k`` in ``view``.
    ``segments[k]`` carries per-segment metadata (ground truth for synthetic
    scenes). Camera poses map camera coordinates to the world frame and are
    derived from the gripper pose and the hand-eye transform.
    """

    depth: np.ndarray
    views: dict
    masks: list
    intrinsics: dict
    gripper_pose: dict
    hand_eye: SE3Transform
    segments: list = field(default_factory=list)
    peg_views: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.depth.dtype != np.uint16 or self.depth.ndim != 2:
            raise ValidationError("depth must be a 2-D uint16 image")
        if DEPTH_VIEW not in self.views:
            raise ValidationError(f"scene needs a '{DEPTH_VIEW}' view")
        check_same_shape(self.depth, self.views[DEPTH_VIEW], ("depth", "top view"))
        for name, img in self.views.items():
            K = self.intrinsics.get(name)
            if K is None or name not in self.gripper_pose:
                raise ValidationError(f"view '{name}' lacks intrinsics or pose")
            if img.shape[:2] != (K.height, K.width):
                raise ValidationError(f"view '{name}' is {img.shape[:2]}, intrinsics say {(K.height, K.width)}")
        for k, per_view in enumerate(self.masks):
            for name, m in per_view.items():
                if name not in self.views:
                    raise ValidationError(f"mask {k} refers to unknown view '{name}'")
                check_same_shape(m, self.views[name], (f"mask {k}/{name}", "view"))
        if self.segments and len(self.segments) != len(self.masks):
            raise ValidationError("segments and masks differ in length")

    @property
    def view_names(self):
        return list(self.views)

    def camera_pose(self, view):
        return compose(self.gripper_pose[view], self.hand_eye)

    def camera_yaw_deg(self, view=DEPTH_VIEW):
        """In-plane rotation between the world xy axes and the displayed image axes."""
        R = self.camera_pose(view).rotation
        return math.degrees(math.atan2(R[1, 0], R[0, 0])) % 360.0


@dataclass
class HoleCandidate:
    """One retained segment with its cloud, centroid and per-view crops."""

    index: int
    masks: dict
    views: dict
    mask_crops: dict
    crop_boxes: dict
    cloud: np.ndarray
    centroid: np.ndarray
    truth: dict | None = None
    camera_yaw_deg: float = 0.0

    @property
    def images(self):
        return self.views

    @property
    def z_mean(self):
        return float(self.centroid[2])

    @property
    def shape(self):
        """Ground-truth cross-section in the hole frame, if known."""
        if self.truth and "polygon_local_mm" in self.truth:
            return Polygon2D(self.truth["polygon_local_mm"])
        return None

    @property
    def name(self):
        return (self.truth or {}).get("family")


# ---------------------------------------------------------------------------
# point clouds


def mask_to_cloud(mask, depth, K: CameraIntrinsics, T_wc: SE3Transform) -> np.ndarray:
    """World-frame points (metres) for mask pixels with a valid depth reading."""
    m = check_mask(mask)
    check_same_shape(m, depth)
    d = np.asarray(depth)
    v, u = np.nonzero(m & (d > 0))
    if len(u) == 0:
        raise EmptyCloudError("no mask pixel has a valid depth")
    pts = deproject_pixels(u, v, d[v, u], K)
    return transform_points(pts, T_wc)


def centroid(cloud) -> np.ndarray:
    """Arithmetic mean of the cloud."""
    return check_cloud(cloud).mean(axis=0)


def filter_by_height(candidates, z_threshold=Z_THRESHOLD_M):
    """Keep candidates whose mean height is at least ``z_threshold`` metres."""
    return [c for c in candidates if c.centroid[2] >= z_threshold]


def partition_by_height(candidates, z_threshold=Z_THRESHOLD_M):
    kept = filter_by_height(candidates, z_threshold)
    ids = {id(c) for c in kept}
    return kept, [c for c in candidates if id(c) not in ids]


def mask_bbox(mask):
    """Inclusive-exclusive bounding box (v0, v1, u0, u1) of a non-empty mask."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if len(rows) == 0:
        raise ValidationError("mask is empty")
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def crop_box(mask, margin_px=CROP_MARGIN_PX):
    v0, v1, u0, u1 = mask_bbox(mask)
    h, w = mask.shape
    return max(0, v0 - margin_px), min(h, v1 + margin_px), max(0, u0 - margin_px), min(w, u1 + margin_px)


def crop_views(scene: Scene, candidate, margin_px=CROP_MARGIN_PX):
    """Crop every view around the candidate's mask in that view."""
    out, boxes = {}, {}
    for name in scene.views:
        if name not in candidate.masks:
            raise ValidationError(f"candidate {candidate.index} has no mask in view '{name}'")
        box = crop_box(candidate.masks[name], margin_px)
        v0, v1, u0, u1 = box
        out[name] = scene.views[name][v0:v1, u0:u1].copy()
        boxes[name] = box
    return out, boxes


def _segment_centroid(scene, k):
    K = scene.intrinsics[DEPTH_VIEW]
    cloud = mask_to_cloud(scene.masks[k][DEPTH_VIEW], scene.depth, K, scene.camera_pose(DEPTH_VIEW))
    return cloud, cloud.mean(axis=0)


def detect_candidates(scene: Scene, z_threshold=Z_THRESHOLD_M, margin_px=CROP_MARGIN_PX):
    """Lift, filter and crop every segment of ``scene``; order follows the masks."""
    yaw = scene.camera_yaw_deg(DEPTH_VIEW)
    out = []
    for k, per_view in enumerate(scene.masks):
        try:
            cloud, c = _segment_centroid(scene, k)
        except EmptyCloudError:
            continue
        if c[2] < z_threshold:
            continue
        proto = HoleCandidate(k, per_view, {}, {}, {}, cloud, c,
                              scene.segments[k] if scene.segments else None, yaw)
        views, boxes = crop_views(scene, proto, margin_px)
        proto.views = views
        proto.crop_boxes = boxes
        proto.mask_crops = {
            n: per_view[n][b[0]:b[1], b[2]:b[3]].copy() for n, b in boxes.items()
        }
        if len(cloud) < 3:
            continue
        out.append(proto)
    return out


class HoleDetector(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``transform(scene)`` returns the retained candidates."""

    def __init__(self, z_threshold_m=Z_THRESHOLD_M, margin_px=CROP_MARGIN_PX):
        self.z_threshold_m = z_threshold_m
        self.margin_px = margin_px

    def fit(self, scene=None, y=None):
        if not (self.z_threshold_m >= 0 and math.isfinite(self.z_threshold_m)):
            raise ValidationError("z_threshold_m must be finite and >= 0")
        if int(self.margin_px) != self.margin_px or self.margin_px < 0:
            raise ValidationError("margin_px must be a non-negative integer")
        self.n_segments_seen_ = len(scene.masks) if scene is not None else 0
        return self

    def transform(self, scene):
        if not hasattr(self, "n_segments_seen_"):
            self.fit(scene)
        return detect_candidates(scene, self.z_threshold_m, int(self.margin_px))


# ---------------------------------------------------------------------------
# scene directory IO


def _mat(T: SE3Transform):
    return T.as_matrix().tolist()


def save_scene(scene: Scene, path):
    """Write ``scene`` in the scene-directory format; output is byte-stable."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    write_pgm(root / "depth_top.pgm", scene.depth)
    views = {}
    for name, img in scene.views.items():
        fname = f"view_{name}.pgm"
        write_pgm(root / fname, np.asarray(img, dtype=np.uint8))
        views[name] = {
            "image": fname,
            "intrinsics": scene.intrinsics[name].to_dict(),
            "T_world_gripper": _mat(scene.gripper_pose[name]),
        }
    segments = []
    for k, per_view in enumerate(scene.masks):
        files = {}
        for name, m in per_view.items():
            fname = f"mask_{k}_{name}.pgm"
            write_pgm(root / fname, np.where(m, 255, 0).astype(np.uint8))
            files[name] = fname
        entry = {"index": k, "masks": files}
        if scene.segments:
            entry["truth"] = scene.segments[k]
        segments.append(entry)
    peg = {}
    for name, img in scene.peg_views.items():
        fname = f"peg_{name}.pgm"
        write_pgm(root / fname, np.asarray(img, dtype=np.uint8))
        peg[name] = fname
    doc = {
        "format": SCENE_FORMAT,
        "depth": {"file": "depth_top.pgm", "view": DEPTH_VIEW, "units": "mm"},
        "T_gripper_camera": _mat(scene.hand_eye),
        "views": views,
        "segments": segments,
        "peg_views": peg,
        "meta": scene.meta,
    }
    (root / "scene.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return root


def _pose(matrix, where, path):
    try:
        return SE3Transform.from_matrix(matrix)
    except (InvalidTransformError, ValueError, TypeError) as exc:
        raise FormatError(f"{where}: {exc}", path) from None


def _read_mask(path):
    img = read_pgm(path)
    if img.dtype != np.uint8 or not np.all((img == 0) | (img == 255)):
        raise FormatError("mask must be 8-bit with values 0 or 255", path)
    return img == 255


def load_scene(path) -> Scene:
    root = Path(path)
    meta_path = root / "scene.json"
    if not meta_path.is_file():
        raise MissingFileError(f"missing file {meta_path}")
    try:
        doc = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON ({exc})", meta_path) from None
    if not isinstance(doc, dict) or doc.get("format") != SCENE_FORMAT:
        raise FormatError(f"expected format '{SCENE_FORMAT}'", meta_path)
    try:
        depth_file = root / doc["depth"]["file"]
        hand_eye = _pose(doc["T_gripper_camera"], "T_gripper_camera", meta_path)
        views, intr, grip = {}, {}, {}
        for name, v in doc["views"].items():
            views[name] = read_pgm(root / v["image"])
            try:
                intr[name] = CameraIntrinsics.from_dict(v["intrinsics"])
            except ValidationError as exc:
                raise FormatError(f"view '{name}' intrinsics: {exc}", meta_path) from None
            grip[name] = _pose(v["T_world_gripper"], f"view '{name}' T_world_gripper", meta_path)
        masks, segments = [], []
        for entry in doc["segments"]:
            masks.append({n: _read_mask(root / f) for n, f in entry["masks"].items()})
            segments.append(entry.get("truth", {}))
        peg_views = {n: read_pgm(root / f) for n, f in doc.get("peg_views", {}).items()}
    except (KeyError, TypeError, AttributeError) as exc:
        raise FormatError(f"missing or malformed field {exc}", meta_path) from None
    depth = read_pgm(depth_file)
    if depth.dtype != np.uint16:
        raise FormatError("depth must be 16-bit", depth_file)
    try:
        return Scene(depth, views, masks, intr, grip, hand_eye,
                     segments if any(segments) else [], peg_views, doc.get("meta", {}))
    except ValidationError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(str(exc), root) from None


def write_candidates(candidates, out_dir):
    """Write crops and ``candidates.json`` (index, centroid, mean height, crop files)."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for c in candidates:
        crops = {}
        for name, img in c.views.items():
            fname = f"crop_{c.index}_{name}.pgm"
            write_pgm(root / fname, np.asarray(img, dtype=np.uint8))
            crops[name] = fname
            mname = f"cropmask_{c.index}_{name}.pgm"
            write_pgm(root / mname, np.where(c.mask_crops[name], 255, 0).astype(np.uint8))
        rows.append({
            "index": c.index,
            "centroid_m": [float(x) for x in c.centroid],
            "z_mean_m": c.z_mean,
            "n_points": int(len(c.cloud)),
            "crops": crops,
            "crop_boxes": {n: list(b) for n, b in c.crop_boxes.items()},
        })
    path = root / "candidates.json"
    path.write_text(json.dumps({"candidates": rows}, sort_keys=True, indent=1) + "\n")
    return path
