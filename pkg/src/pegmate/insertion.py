"""Approach plus Archimedean spiral search against a funnel contact model.

The peg descends to the estimated pose and presses down. Contact reads
the force threshold until a waypoint brings the peg inside the capture
funnel of the true mating hole with a compatible yaw; then it drops in.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ValidationError
from .geometry import SE2Pose, angle_diff, rotational_symmetry_order


class FailureMode(str, enum.Enum):
    NONE = "none"
    OUT_OF_REACH = "out_of_reach"
    YAW_MISMATCH = "yaw_mismatch"
    WRONG_HOLE = "wrong_hole"


@dataclass(frozen=True)
class SpiralParams:
    max_radius_mm: float = 5.0
    rotations: float = 10.0
    waypoint_arc_mm: float = 0.25
    approach_offset_mm: float = 3.0
    contact_force_threshold_N: float = 1.0

    def __post_init__(self):
        for name in ("max_radius_mm", "rotations", "waypoint_arc_mm", "approach_offset_mm",
                     "contact_force_threshold_N"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValidationError(f"{name} must be positive")
        if self.waypoint_arc_mm > self.max_radius_mm:
            raise ValidationError("waypoint_arc_mm must not exceed max_radius_mm")

    @property
    def pitch_mm(self):
        """Radial distance between consecutive turns."""
        return self.max_radius_mm / self.rotations

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _arc_length(phi, c):
    return 0.5 * c * (phi * np.sqrt(1 + phi * phi) + np.arcsinh(phi))


@lru_cache(maxsize=64)
def _spiral_offsets(max_radius, rotations, arc):
    c = max_radius / (2 * math.pi * rotations)
    phi_end = 2 * math.pi * rotations
    total = float(_arc_length(phi_end, c))
    s = np.arange(0.0, total, arc)
    # invert s(phi) by Newton from the large-phi approximation s ~ c phi^2 / 2
    phi = np.sqrt(2 * s / c)
    for _ in range(30):
        f = _arc_length(phi, c) - s
        step = f / (c * np.sqrt(1 + phi * phi))
        phi = np.clip(phi - step, 0.0, phi_end)
        if np.max(np.abs(step)) < 1e-13:
            break
    if total - s[-1] > 1e-9:
        phi = np.append(phi, phi_end)
    r = c * phi
    pts = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
    pts[0] = 0.0
    pts.setflags(write=False)
    return pts


def spiral_waypoints(center: SE2Pose, params: SpiralParams = SpiralParams()) -> np.ndarray:
    """Offsets (mm, world xy) of the spiral search around ``center``; yaw stays at ``center.yaw``.

    Waypoints follow r = c * phi with c = max_radius / (2 pi rotations),
    spaced ``waypoint_arc_mm`` apart along the curve, starting at the
    centre and ending exactly on the outer radius.
    """
    return _spiral_offsets(float(params.max_radius_mm), float(params.rotations), float(params.waypoint_arc_mm))


def waypoint_poses(center: SE2Pose, params: SpiralParams = SpiralParams()):
    off = spiral_waypoints(center, params) / 1000.0
    return [SE2Pose(center.x + dx, center.y + dy, center.yaw) for dx, dy in off]


@dataclass(frozen=True)
class ContactWorld:
    world: object  # SyntheticWorld
    success_funnel_xy_mm: float = 0.4
    success_funnel_yaw_deg: float = 2.0
    surface_z_m: float | None = None

    def __post_init__(self):
        if not (self.success_funnel_xy_mm > 0 and self.success_funnel_yaw_deg > 0):
            raise ValidationError("funnel tolerances must be positive")
        if self.surface_z_m is None:
            object.__setattr__(self, "surface_z_m", self.world.board_height_mm / 1000.0)


@dataclass(frozen=True)
class InsertionOutcome:
    success: bool
    waypoints_used: int
    final_offset_mm: tuple
    failure_mode: FailureMode = FailureMode.NONE
    targeted_index: int | None = None
    yaw_error_deg: float = 0.0
    approach_z_m: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "failure_mode", FailureMode(self.failure_mode))
        if self.success != (self.failure_mode is FailureMode.NONE):
            raise ValidationError("success must coincide with failure_mode 'none'")

    def to_dict(self):
        return {
            "success": self.success,
            "waypoints_used": self.waypoints_used,
            "final_offset_mm": [round(v, 9) for v in self.final_offset_mm],
            "failure_mode": self.failure_mode.value,
            "targeted_index": self.targeted_index,
            "yaw_error_deg": round(self.yaw_error_deg, 9),
        }


@lru_cache(maxsize=1024)
def _symmetry(world, k):
    return rotational_symmetry_order(world.holes[k].polygon())


def targeted_hole(world, estimate: SE2Pose) -> int:
    """Hole whose centre is nearest to the estimated position."""
    d = [math.hypot(world.hole_world_pose(k).x - estimate.x, world.hole_world_pose(k).y - estimate.y)
         for k in range(len(world.holes))]
    return int(np.argmin(d))


def simulate_attempt(world: ContactWorld, estimate: SE2Pose, true_hole_index=None,
                     params: SpiralParams = SpiralParams()) -> InsertionOutcome:
    """Descend at ``estimate`` and run the spiral until the peg drops or the spiral ends."""
    if not all(math.isfinite(v) for v in (estimate.x, estimate.y, estimate.yaw)):
        raise ValidationError("estimate must be finite")
    sw = world.world
    true_k = sw.ground_truth_index if true_hole_index is None else true_hole_index
    target = targeted_hole(sw, estimate)
    wps = spiral_waypoints(estimate, params)
    approach = world.surface_z_m + params.approach_offset_mm / 1000.0
    hole = sw.hole_world_pose(true_k)
    period = 360.0 / _symmetry(sw, true_k)
    yaw_err = angle_diff(estimate.yaw, hole.yaw, period)
    rel = np.array([(hole.x - estimate.x) * 1000.0, (hole.y - estimate.y) * 1000.0])
    if target != true_k:
        last = rel - wps[-1]
        return InsertionOutcome(False, len(wps), (float(last[0]), float(last[1])), FailureMode.WRONG_HOLE,
                                target, yaw_err, approach)
    resid = rel[None, :] - wps
    dist = np.hypot(resid[:, 0], resid[:, 1])
    hit = np.flatnonzero(dist <= world.success_funnel_xy_mm + 1e-12)
    if len(hit) == 0:
        k = int(np.argmin(dist))
        return InsertionOutcome(False, len(wps), (float(resid[k, 0]), float(resid[k, 1])),
                                FailureMode.OUT_OF_REACH, target, yaw_err, approach)
    k = int(hit[0])
    off = (float(resid[k, 0]), float(resid[k, 1]))
    if yaw_err > world.success_funnel_yaw_deg:
        return InsertionOutcome(False, len(wps), off, FailureMode.YAW_MISMATCH, target, yaw_err, approach)
    return InsertionOutcome(True, k + 1, off, FailureMode.NONE, target, yaw_err, approach)
