"""Synthetic peg/hole boards and their rendering into scene directories.

Shapes live in a canonical local frame: the minimum-area rectangle of the
outline is axis-aligned and the area centroid sits at the origin. A mating
hole is the peg outline offset outwards by the clearance. Distractor holes
are other pegs' mating holes that the geometry oracle certifies will not
accept the peg.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import ndimage

from . import _kernels
from .detection import Scene, save_scene
from .errors import InvalidDimensionsError, PlacementFailure, ValidationError
from .geometry import (
    CameraIntrinsics,
    Polygon2D,
    SE2Pose,
    SE3Transform,
    compose,
    convex_hull,
    fits_somewhere,
    min_area_rect,
    offset_polygon,
    rotation_x,
    rotation_y,
    rotational_symmetry_order,
)

FAMILIES = ("rectangle", "trapezoid", "d_shape", "cross", "keyed_circle", "l_shape")
ASYMMETRIC_FAMILIES = ("trapezoid", "d_shape", "keyed_circle", "l_shape")
# keyed_circle is left out: its offset hole's bounding rectangle tilts away from the peg's,
# so 90-degree classification after canonicalisation is ill-posed
PANEL_FAMILIES = ("trapezoid", "d_shape", "l_shape")

_REQUIRED = {
    "rectangle": ("width", "height"),
    "trapezoid": ("bottom", "top", "height"),
    "d_shape": ("diameter",),
    "cross": ("span_x", "span_y", "arm_width"),
    "keyed_circle": ("radius", "key_width", "key_height"),
    "l_shape": ("width", "height", "thickness"),
}

DEFAULT_CLEARANCE_MM = 0.5
DEFAULT_SEPARATION_MM = 0.3
CIRCLE_SEGMENTS = 32


@dataclass(frozen=True)
class ShapeSpec:
    family: str
    params: tuple = ()
    label: str = ""

    def __post_init__(self):
        if self.family not in _REQUIRED:
            raise InvalidDimensionsError(f"unknown shape family '{self.family}'")
        items = self.params.items() if isinstance(self.params, dict) else self.params
        object.__setattr__(self, "params", tuple(sorted((str(k), float(v)) for k, v in items)))
        p = self.param_dict
        missing = [k for k in _REQUIRED[self.family] if k not in p]
        if missing:
            raise InvalidDimensionsError(f"{self.family} needs {missing}")
        bad = [k for k, v in p.items() if not (v > 0 and math.isfinite(v))]
        if bad:
            raise InvalidDimensionsError(f"dimensions must be positive: {bad}")

    @classmethod
    def make(cls, family, label="", **params):
        return cls(family, params, label)

    @property
    def param_dict(self):
        return dict(self.params)

    @property
    def name(self):
        return self.label or self.family

    def to_dict(self):
        return {"family": self.family, "params": self.param_dict, "label": self.label}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], d.get("params", {}), d.get("label", ""))


def _arc(radius, a0, a1, segments):
    """Points on a circle from angle a0 to a1 (radians), end points included."""
    n = max(2, int(math.ceil(abs(a1 - a0) / (2 * math.pi) * segments)) + 1)
    t = np.linspace(a0, a1, n)
    return np.stack([radius * np.cos(t), radius * np.sin(t)], axis=1)


def _raw_outline(family, p):
    seg = int(p.get("segments", CIRCLE_SEGMENTS))
    if family == "rectangle":
        w, h = p["width"] / 2, p["height"] / 2
        return np.array([[-w, -h], [w, -h], [w, h], [-w, h]])
    if family == "trapezoid":
        b, t, h = p["bottom"] / 2, p["top"] / 2, p["height"] / 2
        if t >= b:
            raise InvalidDimensionsError("trapezoid top must be shorter than bottom")
        return np.array([[-b, -h], [b, -h], [t, h], [-t, h]])
    if family == "d_shape":
        r = p["diameter"] / 2
        a = p.get("flat_offset", r / 2)
        if a >= r:
            raise InvalidDimensionsError("flat_offset must be below the radius")
        phi = math.asin(a / r)
        return _arc(r, -phi, math.pi + phi, seg)
    if family == "cross":
        sx, sy, w = p["span_x"] / 2, p["span_y"] / 2, p["arm_width"] / 2
        if w >= min(sx, sy):
            raise InvalidDimensionsError("arm_width must be below both spans")
        return np.array([
            [w, -sy], [w, -w], [sx, -w], [sx, w], [w, w], [w, sy],
            [-w, sy], [-w, w], [-sx, w], [-sx, -w], [-w, -w], [-w, -sy],
        ])
    if family == "keyed_circle":
        r, kw, kh = p["radius"], p["key_width"] / 2, p["key_height"]
        if kw >= r:
            raise InvalidDimensionsError("key_width must be below the diameter")
        y0 = math.sqrt(r * r - kw * kw)
        a0 = math.atan2(y0, -kw)
        a1 = math.atan2(y0, kw) + 2 * math.pi
        arc = _arc(r, a0, a1, seg)
        return np.vstack([arc, [[kw, r + kh], [-kw, r + kh]]])
    if family == "l_shape":
        w, h, t = p["width"], p["height"], p["thickness"]
        if t >= min(w, h):
            raise InvalidDimensionsError("thickness must be below width and height")
        return np.array([[0, 0], [w, 0], [w, t], [t, t], [t, h], [0, h]], dtype=float)
    raise InvalidDimensionsError(f"unknown shape family '{family}'")


def canonical_frame(poly: Polygon2D) -> Polygon2D:
    """Rotate so the minimum-area rectangle is axis-aligned, then centre on the centroid."""
    rect = min_area_rect(convex_hull(poly.vertices))
    out = poly.rotated(-rect.angle) if rect.angle else poly
    return out.centered()


@lru_cache(maxsize=4096)
def _make_shape_cached(spec: ShapeSpec):
    poly = Polygon2D.from_points(_raw_outline(spec.family, spec.param_dict))
    return canonical_frame(poly)


def make_shape(spec: ShapeSpec) -> Polygon2D:
    """Cross-section polygon (mm) of ``spec`` in its canonical frame."""
    return _make_shape_cached(spec)


def mating_hole(peg: Polygon2D, clearance_mm: float) -> Polygon2D:
    """Hole outline admitting ``peg`` with ``clearance_mm`` all round, centred on its centroid."""
    if clearance_mm < 0:
        raise ValidationError("clearance_mm must be >= 0")
    return offset_polygon(peg, clearance_mm).centered()


def _r1(x):
    return round(float(x), 1)


def random_shape(rng, families=FAMILIES, label="") -> ShapeSpec:
    """Draw a desk-scale shape (10-20 mm features) from ``families``."""
    fam = families[int(rng.integers(len(families)))]
    u = rng.uniform
    if fam == "rectangle":
        p = {"width": _r1(u(8, 20)), "height": _r1(u(8, 20))}
    elif fam == "trapezoid":
        b = _r1(u(12, 20))
        p = {"bottom": b, "top": _r1(b * u(0.4, 0.75)), "height": _r1(u(9, 16))}
    elif fam == "d_shape":
        d = _r1(u(10, 18))
        p = {"diameter": d, "flat_offset": _r1(d / 2 * u(0.3, 0.6))}
    elif fam == "cross":
        p = {"span_x": _r1(u(12, 20)), "span_y": _r1(u(12, 20)), "arm_width": _r1(u(4, 7))}
    elif fam == "keyed_circle":
        p = {"radius": _r1(u(5, 8)), "key_width": _r1(u(2, 3.5)), "key_height": _r1(u(1.5, 3))}
    else:
        p = {"width": _r1(u(10, 18)), "height": _r1(u(10, 18)), "thickness": _r1(u(4, 7))}
    return ShapeSpec(fam, p, label)


def certification_clearance(clearance_mm, separation_mm):
    cert = round(clearance_mm - separation_mm, 9)
    if cert < 0:
        raise ValidationError("separation_mm must not exceed clearance_mm")
    return cert


def admits(peg: Polygon2D, hole: Polygon2D, clearance_mm) -> bool:
    return fits_somewhere(peg, hole, clearance_mm)


# ---------------------------------------------------------------------------
# worlds


@dataclass(frozen=True)
class HoleSpec:
    """A hole cut for ``shape`` with ``clearance_mm``; ``pose`` is in the board frame."""

    shape: ShapeSpec
    pose: SE2Pose
    clearance_mm: float = DEFAULT_CLEARANCE_MM
    depth_mm: float = 1.0

    def polygon(self) -> Polygon2D:
        return mating_hole(make_shape(self.shape), self.clearance_mm)

    def to_dict(self):
        return {"shape": self.shape.to_dict(), "pose": self.pose.to_dict(),
                "clearance_mm": self.clearance_mm, "depth_mm": self.depth_mm}

    @classmethod
    def from_dict(cls, d):
        return cls(ShapeSpec.from_dict(d["shape"]), SE2Pose.from_dict(d["pose"]),
                   float(d["clearance_mm"]), float(d["depth_mm"]))


@dataclass(frozen=True)
class ClutterSpec:
    """Box resting on the table; ``pose`` is in the world frame."""

    size_mm: tuple
    height_mm: float
    pose: SE2Pose

    def polygon_world(self) -> Polygon2D:
        w, h = self.size_mm[0] / 2, self.size_mm[1] / 2
        box = Polygon2D([[-w, -h], [w, -h], [w, h], [-w, h]]).rotated(self.pose.yaw)
        return box.translated(self.pose.x * 1000, self.pose.y * 1000)

    def to_dict(self):
        return {"size_mm": list(self.size_mm), "height_mm": self.height_mm, "pose": self.pose.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["size_mm"]), float(d["height_mm"]), SE2Pose.from_dict(d["pose"]))


@dataclass(frozen=True)
class SyntheticWorld:
    board_pose: SE2Pose
    holes: tuple
    peg: ShapeSpec
    ground_truth_index: int
    board_height_mm: float = 80.0
    board_radius_mm: float = 50.0
    peg_grasp_pose: SE2Pose = field(default_factory=lambda: SE2Pose(0.0, 0.0, 0.0))
    clutter: tuple = ()
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "holes", tuple(self.holes))
        object.__setattr__(self, "clutter", tuple(self.clutter))
        if self.board_height_mm < 0:
            raise ValidationError("board_height_mm must be >= 0")
        if self.ground_truth_index is not None and not (0 <= self.ground_truth_index < len(self.holes)):
            raise ValidationError("ground_truth_index out of range")

    def hole_world_pose(self, k) -> SE2Pose:
        """World pose of hole ``k``: metres, yaw in degrees."""
        return self.board_pose.compose(self.holes[k].pose)

    def hole_world_polygon(self, k) -> Polygon2D:
        pose = self.hole_world_pose(k)
        return self.holes[k].polygon().rotated(pose.yaw).translated(pose.x * 1000, pose.y * 1000)

    def board_polygon_world(self) -> Polygon2D:
        t = np.linspace(0, 2 * math.pi, 64, endpoint=False)
        ring = self.board_radius_mm * np.stack([np.cos(t), np.sin(t)], axis=1)
        return Polygon2D(ring).translated(self.board_pose.x * 1000, self.board_pose.y * 1000)

    def to_dict(self):
        return {
            "board_pose": self.board_pose.to_dict(),
            "holes": [h.to_dict() for h in self.holes],
            "peg": self.peg.to_dict(),
            "ground_truth_index": self.ground_truth_index,
            "board_height_mm": self.board_height_mm,
            "board_radius_mm": self.board_radius_mm,
            "peg_grasp_pose": self.peg_grasp_pose.to_dict(),
            "clutter": [c.to_dict() for c in self.clutter],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            SE2Pose.from_dict(d["board_pose"]),
            tuple(HoleSpec.from_dict(h) for h in d["holes"]),
            ShapeSpec.from_dict(d["peg"]),
            d["ground_truth_index"],
            float(d.get("board_height_mm", 80.0)),
            float(d.get("board_radius_mm", 50.0)),
            SE2Pose.from_dict(d.get("peg_grasp_pose", {"x": 0, "y": 0})),
            tuple(ClutterSpec.from_dict(c) for c in d.get("clutter", [])),
            d.get("seed"),
        )

    def with_peg(self, peg: ShapeSpec, ground_truth_index: int) -> "SyntheticWorld":
        return replace(self, peg=peg, ground_truth_index=ground_truth_index)


def _draw_distractor(rng, peg_spec, peg_poly, families, clearance_mm, cert, existing, tries=200):
    for _ in range(tries):
        if rng.random() < 0.5:
            # a perturbed copy of the peg's own family is the hardest distractor
            p = {k: _r1(v * rng.uniform(0.75, 1.3)) for k, v in peg_spec.param_dict.items()}
            try:
                cand = ShapeSpec(peg_spec.family, p)
                make_shape(cand)
            except (InvalidDimensionsError, ValidationError):
                continue
        else:
            cand = random_shape(rng, families)
        if cand in existing:
            continue
        if not admits(peg_poly, mating_hole(make_shape(cand), clearance_mm), cert):
            return cand
    raise PlacementFailure("could not draw a distractor that rejects the peg")


def _circumradius(poly):
    return float(np.max(np.hypot(poly.vertices[:, 0], poly.vertices[:, 1])))


def _place_holes(rng, polys, board_radius_mm, gap_mm=3.0, rim_mm=3.0, max_tries=1000):
    """Rejection-sample non-overlapping hole centres (mm, board frame)."""
    radii = [_circumradius(p) for p in polys]
    centres = []
    tries = 0
    for r in radii:
        reach = board_radius_mm - r - rim_mm
        if reach < 0:
            raise PlacementFailure("hole does not fit on the board")
        while True:
            tries += 1
            if tries > max_tries:
                raise PlacementFailure(f"could not place {len(polys)} holes in {max_tries} tries")
            rho = reach * math.sqrt(rng.random())
            phi = rng.uniform(0, 2 * math.pi)
            c = (rho * math.cos(phi), rho * math.sin(phi))
            if all(math.hypot(c[0] - q[0], c[1] - q[1]) >= r + rq + gap_mm for q, rq in zip(centres, radii)):
                centres.append(c)
                break
    return centres


def _draw_clutter(rng, n, board_pose, board_radius_mm, max_tries=1000):
    out = []
    placed = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > max_tries:
            raise PlacementFailure(f"could not place {n} clutter boxes")
        sx, sy = _r1(rng.uniform(8, 16)), _r1(rng.uniform(8, 16))
        half = math.hypot(sx, sy) / 2
        lo, hi = board_radius_mm + 6 + half, 100.0 - half
        dx = rng.uniform(lo, hi) * (1 if rng.random() < 0.5 else -1)
        dy = rng.uniform(-48 + half, 48 - half)
        if any(math.hypot(dx - a, dy - b) < half + hb + 2 for a, b, hb in placed):
            continue
        placed.append((dx, dy, half))
        pose = SE2Pose(board_pose.x + dx / 1000, board_pose.y + dy / 1000, rng.uniform(0, 360))
        out.append(ClutterSpec((sx, sy), _r1(rng.uniform(5, 40)), pose))
    return tuple(out)


def _board_pose(rng):
    return SE2Pose(0.45 + rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(0, 360))


def make_board(
    peg: ShapeSpec,
    distractors: int = 0,
    clearance_mm: float = DEFAULT_CLEARANCE_MM,
    seed: int = 0,
    *,
    separation_mm: float = DEFAULT_SEPARATION_MM,
    clutter: int = 0,
    board_height_mm: float = 80.0,
    board_radius_mm: float = 50.0,
    hole_depth_mm: float = 1.0,
    families=FAMILIES,
    max_tries: int = 1000,
) -> SyntheticWorld:
    """Board with the peg's mating hole among ``distractors`` certified non-admitting holes.

    Distractors are checked with the oracle at ``clearance_mm - separation_mm``,
    so the mating hole is the only one that admits the peg even for a
    matcher that demands that much slack.
    """
    if distractors < 0:
        raise ValidationError("distractors must be >= 0")
    rng = np.random.default_rng(seed)
    cert = certification_clearance(clearance_mm, separation_mm)
    peg_poly = make_shape(peg)
    shapes = [peg]
    for _ in range(distractors):
        shapes.append(_draw_distractor(rng, peg, peg_poly, tuple(families), clearance_mm, cert, shapes))
    order = rng.permutation(len(shapes))
    shapes = [shapes[i] for i in order]
    gt = int(np.flatnonzero(order == 0)[0])
    polys = [mating_hole(make_shape(s), clearance_mm) for s in shapes]
    centres = _place_holes(rng, polys, board_radius_mm, max_tries=max_tries)
    holes = tuple(
        HoleSpec(s, SE2Pose(c[0] / 1000, c[1] / 1000, rng.uniform(0, 360)), clearance_mm, hole_depth_mm)
        for s, c in zip(shapes, centres)
    )
    board = _board_pose(rng)
    boxes = _draw_clutter(rng, clutter, board, board_radius_mm)
    return SyntheticWorld(board, holes, peg, gt, float(board_height_mm), float(board_radius_mm),
                          clutter=boxes, seed=seed)


def draw_certified_pegs(rng, n, families, clearance_mm, cert, max_draws=None):
    """``n`` shapes whose mating holes accept only their own peg at ``cert`` clearance."""
    pegs, polys, holes = [], [], []
    max_draws = max_draws or 50 * n
    draws = 0
    while len(pegs) < n:
        draws += 1
        if draws > max_draws:
            raise PlacementFailure(f"could not draw {n} mutually exclusive pegs")
        spec = random_shape(rng, families)
        if spec in pegs:
            continue
        poly = make_shape(spec)
        hole = mating_hole(poly, clearance_mm)
        if any(admits(poly, h, cert) for h in holes):
            continue
        if any(admits(p, hole, cert) for p in polys):
            continue
        pegs.append(spec)
        polys.append(poly)
        holes.append(hole)
    return pegs


def make_panel(
    n_pegs: int = 5,
    clearance_mm: float = DEFAULT_CLEARANCE_MM,
    seed: int = 0,
    *,
    separation_mm: float = DEFAULT_SEPARATION_MM,
    families=PANEL_FAMILIES,
    pegs=None,
    clutter: int = 0,
    board_height_mm: float = 80.0,
    board_radius_mm: float = 50.0,
) -> list:
    """One board holding the mating holes of ``n_pegs`` pegs; one world per peg."""
    rng = np.random.default_rng(seed)
    cert = certification_clearance(clearance_mm, separation_mm)
    if pegs is None:
        pegs = draw_certified_pegs(rng, n_pegs, tuple(families), clearance_mm, cert)
    pegs = list(pegs)
    order = rng.permutation(len(pegs))
    shapes = [pegs[i] for i in order]
    polys = [mating_hole(make_shape(s), clearance_mm) for s in shapes]
    centres = _place_holes(rng, polys, board_radius_mm)
    holes = tuple(
        HoleSpec(s, SE2Pose(c[0] / 1000, c[1] / 1000, rng.uniform(0, 360)), clearance_mm)
        for s, c in zip(shapes, centres)
    )
    board = _board_pose(rng)
    boxes = _draw_clutter(rng, clutter, board, board_radius_mm)
    base = SyntheticWorld(board, holes, pegs[0], int(np.flatnonzero(order == 0)[0]),
                          float(board_height_mm), float(board_radius_mm), clutter=boxes, seed=seed)
    return [base.with_peg(p, int(np.flatnonzero(order == i)[0])) for i, p in enumerate(pegs)]


# ---------------------------------------------------------------------------
# matching benchmarks


@dataclass
class ShapeItem:
    """A peg or hole presented to the matcher without a rendered scene."""

    index: int
    name: str
    shape: Polygon2D
    spec: ShapeSpec
    images: dict = field(default_factory=dict)


@dataclass
class MatchingDataset:
    pegs: list
    holes: list
    truth: list  # truth[i] is the index of peg i's mating hole

    def __len__(self):
        return len(self.pegs)


def _items(specs, kind, clearance_mm, mm_per_pixel):
    out = []
    for i, s in enumerate(specs):
        peg = make_shape(s)
        shape = peg if kind == "peg" else mating_hole(peg, clearance_mm)
        out.append(ShapeItem(i, s.family, shape, s, render_shape_views(shape, kind, mm_per_pixel, third_view=True)))
    return out


def _dataset(rng, pegs, clearance_mm, mm_per_pixel):
    perm = rng.permutation(len(pegs))
    hole_specs = [pegs[i] for i in perm]
    truth = [int(np.flatnonzero(perm == i)[0]) for i in range(len(pegs))]
    return MatchingDataset(_items(pegs, "peg", clearance_mm, mm_per_pixel),
                           _items(hole_specs, "hole", clearance_mm, mm_per_pixel), truth)


def make_matching_benchmark(
    n: int = 20,
    clearance_mm: float = DEFAULT_CLEARANCE_MM,
    separation_mm: float = DEFAULT_SEPARATION_MM,
    seed: int = 0,
    families=FAMILIES,
    mm_per_pixel: float = 0.15,
) -> MatchingDataset:
    """``n`` pegs and their shuffled mating holes; each peg is certified to fit only its own."""
    rng = np.random.default_rng(seed)
    cert = certification_clearance(clearance_mm, separation_mm)
    pegs = draw_certified_pegs(rng, n, tuple(families), clearance_mm, cert)
    return _dataset(rng, pegs, clearance_mm, mm_per_pixel)


def make_near_tie_benchmark(
    n_pairs: int = 4,
    clearance_mm: float = DEFAULT_CLEARANCE_MM,
    seed: int = 0,
    mm_per_pixel: float = 0.15,
    cert_clearance_mm: float = 0.2,
) -> MatchingDataset:
    """Rectangle pairs where the larger peg's row admits two holes.

    Pair i holds an (a x b) peg and an (a - 0.1) x (b + 1) sibling. The
    wide peg also fits the sibling's hole, with less slack than its own,
    so its row carries two admitting holes. Bases vary inversely in width
    and length, so no peg fits another pair's hole.
    """
    if n_pairs < 1:
        raise ValidationError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    pegs = []
    for i in range(n_pairs):
        a = _r1(8 + 3 * i + rng.uniform(0, 0.5))
        b = _r1(8 + 3 * (n_pairs + 2) - 3 * i + rng.uniform(0, 0.5))
        pegs.append(ShapeSpec("rectangle", {"width": a, "height": b}, f"bar-{i}"))
        pegs.append(ShapeSpec("rectangle", {"width": _r1(a - 0.1), "height": _r1(b + 1.0)}, f"bar-{i}-long"))
    return _dataset(rng, pegs, clearance_mm, mm_per_pixel)


# ---------------------------------------------------------------------------
# rendering

GRAY = {
    _kernels.SURF_NONE: 0,
    _kernels.SURF_TABLE: 90,
    _kernels.SURF_BOARD: 170,
    _kernels.SURF_FLOOR: 40,
    _kernels.SURF_WALL: 70,
    _kernels.SURF_BOX: 220,
}


@dataclass(frozen=True)
class NoiseConfig:
    depth_sigma_mm: float = 0.0
    mask_erosion_px: int = 0
    centroid_bias_mm: float = 0.0

    def __post_init__(self):
        if self.depth_sigma_mm < 0 or self.mask_erosion_px < 0 or self.centroid_bias_mm < 0:
            raise ValidationError("noise magnitudes must be >= 0")


DEFAULT_HAND_EYE = SE3Transform.from_rpy(0.0, 0.0, 90.0, (0.0, 0.06, 0.04))


@dataclass(frozen=True)
class RenderConfig:
    mm_per_pixel: float = 0.15  # at the board surface, top view
    camera_height_m: float = 0.5
    angled_view_deg: float = 30.0
    width: int = 1280
    height: int = 720
    noise: NoiseConfig = NoiseConfig()
    third_view: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.mm_per_pixel > 0:
            raise ValidationError("mm_per_pixel must be > 0")
        if not (0 <= self.angled_view_deg < 90):
            raise ValidationError("angled_view_deg must lie in [0, 90)")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("image size must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["noise"] = NoiseConfig(**d.get("noise", {}))
        return cls(**d)


def _top_rotation():
    # camera x along world x, camera y along world -y, optical axis straight down
    return np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]])


def camera_poses(world: SyntheticWorld, cfg: RenderConfig) -> dict:
    """World-from-camera transforms for every rendered view."""
    board_xy = np.array([world.board_pose.x, world.board_pose.y])
    pivot = np.array([*board_xy, world.board_height_mm / 1000])
    top = SE3Transform(_top_rotation(), np.array([*board_xy, cfg.camera_height_m]))
    poses = {"top": top}

    def pitched(R_axis):
        return SE3Transform(R_axis @ top.rotation, pivot + R_axis @ (top.translation - pivot))

    poses["angled"] = pitched(rotation_x(cfg.angled_view_deg))
    if cfg.third_view:
        poses["side"] = pitched(rotation_y(cfg.angled_view_deg))
    return poses


def intrinsics_for(world: SyntheticWorld, cfg: RenderConfig) -> CameraIntrinsics:
    f = (cfg.camera_height_m * 1000 - world.board_height_mm) / cfg.mm_per_pixel
    return CameraIntrinsics(f, f, (cfg.width - 1) / 2, (cfg.height - 1) / 2, cfg.width, cfg.height)


def _packed(polys):
    if not polys:
        return np.zeros((0, 2)), np.zeros(1, dtype=np.int64)
    verts = np.ascontiguousarray(np.vstack([p.vertices for p in polys]))
    off = np.concatenate([[0], np.cumsum([len(p) for p in polys])]).astype(np.int64)
    return verts, off


def _raycast_view(world, T_wc, K, hole_polys, boxes):
    hv, ho = _packed(hole_polys)
    floor = np.array([world.board_height_mm - h.depth_mm for h in world.holes], dtype=float)
    bv, bo = _packed([b.polygon_world() for b in boxes])
    bz = np.array([b.height_mm for b in boxes], dtype=float)
    return _kernels.raycast(
        T_wc.translation * 1000, np.ascontiguousarray(T_wc.rotation),
        K.fx, K.fy, K.cx, K.cy, K.width, K.height,
        np.ascontiguousarray(world.board_polygon_world().vertices), float(world.board_height_mm),
        hv, ho, floor, bv, bo, bz,
    )


def _shade(surf):
    lut = np.zeros(256, dtype=np.uint8)
    for code, g in GRAY.items():
        lut[code] = g
    return lut[surf]


def _hole_truth(world, k):
    pose = world.hole_world_pose(k)
    spec = world.holes[k]
    poly = spec.polygon()
    return {
        "kind": "hole",
        "hole_index": k,
        "family": spec.shape.family,
        "shape": spec.shape.to_dict(),
        "clearance_mm": spec.clearance_mm,
        "depth_mm": spec.depth_mm,
        "pose_world": pose.to_dict(),
        "polygon_local_mm": poly.vertices.tolist(),
        "symmetric_180": bool(_is_180_symmetric(poly)),
    }


def _is_180_symmetric(poly):
    return rotational_symmetry_order(poly) % 2 == 0


def _render_board(world, cfg, rng):
    """Raycast every view of the board shared by a panel; returns the per-peg independent parts."""
    K = intrinsics_for(world, cfg)
    poses = camera_poses(world, cfg)
    hole_polys = [world.hole_world_polygon(k) for k in range(len(world.holes))]
    boxes = sorted(world.clutter, key=lambda b: -b.height_mm)
    box_index = {id(b): i for i, b in enumerate(world.clutter)}
    n_holes = len(world.holes)
    views, masks = {}, [dict() for _ in range(n_holes + len(boxes))]
    depth_img = None
    for name, T_wc in poses.items():
        depth, label, surf = _raycast_view(world, T_wc, K, hole_polys, boxes)
        views[name] = _shade(surf)
        for k in range(n_holes):
            masks[k][name] = label == k
        for j, b in enumerate(boxes):
            masks[n_holes + box_index[id(b)]][name] = label == _kernels.LABEL_BOX0 + j
        if name == "top":
            if cfg.noise.depth_sigma_mm > 0:
                depth = depth + rng.normal(0.0, cfg.noise.depth_sigma_mm, depth.shape) * (depth > 0)
            depth_img = np.clip(np.rint(depth), 0, 65535).astype(np.uint16)
    if cfg.noise.mask_erosion_px > 0:
        for per_view in masks:
            for name in per_view:
                per_view[name] = ndimage.binary_erosion(per_view[name], iterations=cfg.noise.mask_erosion_px)
    segments = [_hole_truth(world, k) for k in range(n_holes)]
    segments += [{"kind": "clutter", "height_mm": c.height_mm, "pose_world": c.pose.to_dict()}
                 for c in world.clutter]
    return K, poses, views, masks, depth_img, segments


def _board_key(world):
    d = world.to_dict()
    for k in ("peg", "ground_truth_index", "peg_grasp_pose"):
        d.pop(k, None)
    return d


def render_panel(worlds, cfg: RenderConfig = RenderConfig()) -> list:
    """Render worlds sharing one board; the board is raycast once.

    Each world gets its own peg views, metadata and centroid-bias draw
    (the bias stream is seeded by ``(cfg.seed, position)``).
    """
    worlds = list(worlds)
    if not worlds:
        raise ValidationError("render_panel needs at least one world")
    key = _board_key(worlds[0])
    if any(_board_key(w) != key for w in worlds[1:]):
        raise ValidationError("render_panel worlds must share the board, holes and clutter")
    K, poses, views, masks, depth_img, segments = _render_board(worlds[0], cfg, np.random.default_rng(cfg.seed))
    hand_eye = DEFAULT_HAND_EYE
    out = []
    for i, world in enumerate(worlds):
        bias = np.zeros(3)
        if cfg.noise.centroid_bias_mm > 0:
            phi = np.random.default_rng([cfg.seed, i]).uniform(0, 2 * math.pi)
            bias[:2] = cfg.noise.centroid_bias_mm / 1000 * np.array([math.cos(phi), math.sin(phi)])
        shift = SE3Transform(np.eye(3), bias)
        grip = {n: compose(shift, compose(T, hand_eye.inverse())) for n, T in poses.items()}
        peg_poly = make_shape(world.peg)
        out.append(Scene(
            depth=depth_img,
            views=views,
            masks=masks,
            intrinsics={n: K for n in poses},
            gripper_pose=grip,
            hand_eye=hand_eye,
            segments=segments,
            peg_views=render_shape_views(peg_poly, "peg", cfg.mm_per_pixel, cfg.angled_view_deg, cfg.third_view),
            meta={
                "ground_truth_index": world.ground_truth_index,
                "peg": {"shape": world.peg.to_dict(), "polygon_local_mm": peg_poly.vertices.tolist(),
                        "grasp_pose": world.peg_grasp_pose.to_dict()},
                "world": world.to_dict(),
                "render": cfg.to_dict(),
                "centroid_bias_m": [round(float(v), 12) for v in bias],
            },
        ))
    return out


def render_scene(world: SyntheticWorld, cfg: RenderConfig = RenderConfig(), out_dir=None) -> Scene:
    """Render ``world`` into a :class:`Scene`; also write it when ``out_dir`` is given."""
    scene = render_panel([world], cfg)[0]
    if out_dir is not None:
        save_scene(scene, out_dir)
    return scene


def render_shape_views(poly: Polygon2D, kind="peg", mm_per_pixel=0.15, angled_deg=30.0,
                       third_view=False, pad_px=16, wall_mm=6.0) -> dict:
    """Orthographic top and oblique views of a single peg or hole cross-section."""
    x0, y0, x1, y1 = poly.bounds
    w = int(math.ceil((x1 - x0) / mm_per_pixel)) + 2 * pad_px
    h = int(math.ceil((y1 - y0) / mm_per_pixel)) + 2 * pad_px
    fg, bg, side = (200, 30, 120) if kind == "peg" else (40, 170, 70)
    c = math.cos(math.radians(angled_deg))
    s = math.sin(math.radians(angled_deg))
    wall_px = int(round(wall_mm * s / mm_per_pixel))
    out = {}

    def raster(sx, sy, extrude):
        hh = int(math.ceil(h * sy)) + (extrude if kind == "peg" else 0)
        ww = int(math.ceil(w * sx))
        uu, vv = np.meshgrid(np.arange(ww) + 0.5, np.arange(hh) + 0.5)
        xs = x0 - pad_px * mm_per_pixel + uu * mm_per_pixel / sx
        ys = y1 + pad_px * mm_per_pixel - vv * mm_per_pixel / sy
        top = poly.contains(np.stack([xs.ravel(), ys.ravel()], 1)).reshape(hh, ww)
        img = np.full((hh, ww), bg, dtype=np.uint8)
        if extrude:
            # side faces: the footprint swept towards the viewer
            swept = np.zeros_like(top)
            for k in range(1, extrude + 1):
                swept[k:] |= top[:-k]
            if kind == "peg":
                img[swept & ~top] = side
            else:
                img[top] = fg
                img[top & ~swept] = side
                return img
        img[top] = fg
        return img

    out["top"] = raster(1.0, 1.0, 0)
    out["angled"] = raster(1.0, c, wall_px)
    if third_view:
        out["side"] = raster(c, 1.0, wall_px)
    return out
