import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pegmate.detection import HoleCandidate
from pegmate.errors import AllUnparseableError, DegenerateError, ValidationError
from pegmate.geometry import Polygon2D, angle_diff
from pegmate.matcher import OracleBackend, Reply
from pegmate.pose import (
    YawEstimate,
    YawEstimator,
    canonicalize,
    estimate_yaw,
    four_rotations,
    localize,
    mask_rect,
    se2_estimate,
)
from pegmate.worldgen import ShapeSpec, make_shape, mating_hole

D_SHAPE = ShapeSpec.make("d_shape", diameter=16)
RECT = ShapeSpec.make("rectangle", width=18, height=10)


def _rect_mask(w, h, angle, size=160):
    """Rasterised w x h rectangle (pixels) rotated by ``angle`` in display sense."""
    poly = Polygon2D([[-w / 2, -h / 2], [w / 2, -h / 2], [w / 2, h / 2], [-w / 2, h / 2]]).rotated(angle)
    vv, uu = np.mgrid[0:size, 0:size] + 0.5
    pts = np.stack([uu.ravel() - size / 2, size / 2 - vv.ravel()], 1)
    return poly.contains(pts).reshape(size, size)


def test_axis_aligned_mask_is_unchanged():
    mask = np.zeros((30, 40), bool)
    mask[8:20, 5:33] = True
    can = canonicalize(mask.astype(np.uint8) * 200, mask)
    assert can.theta == 0
    ys, xs = np.nonzero(can.mask)
    assert can.mask.sum() == mask.sum()
    assert np.ptp(xs) == 27 and np.ptp(ys) == 11


@settings(max_examples=30)
@given(st.floats(0.0, 89.9))
def test_canonical_angle_recovered(angle):
    # at 300 px a one-pixel step spans 0.2 deg, below the tolerance
    mask = _rect_mask(300, 160, angle, size=400)
    can = canonicalize(mask.astype(np.uint8) * 255, mask)
    assert angle_diff(can.theta, angle, 90.0) <= 0.5
    assert set(np.unique(can.mask)) <= {False, True}
    # the canonical mask is axis aligned
    assert angle_diff(mask_rect(can.mask).angle, 0.0, 90.0) <= 0.5


def test_canonical_canvas_never_clips():
    mask = _rect_mask(140, 30, 37.0, size=150)
    can = canonicalize(mask.astype(np.uint8) * 255, mask)
    assert abs(int(can.mask.sum()) - int(mask.sum())) <= 0.03 * mask.sum()
    assert not can.mask[0].any() and not can.mask[-1].any()
    assert not can.mask[:, 0].any() and not can.mask[:, -1].any()


def test_canonicalize_rejects_degenerate_and_mismatched():
    with pytest.raises(DegenerateError):
        canonicalize(np.zeros((10, 10), np.uint8), np.zeros((10, 10), bool))
    m = np.zeros((10, 10), bool)
    m[2:6, 2:8] = True
    with pytest.raises(ValidationError):
        canonicalize(np.zeros((9, 10), np.uint8), m)


def test_four_rotations_are_permutations():
    img = np.random.default_rng(1).integers(0, 255, (13, 21), dtype=np.uint8)
    r0, r90, r180, r270 = four_rotations(img)
    assert np.array_equal(r0, img)
    assert np.array_equal(np.rot90(r90, -1), r180)
    assert np.array_equal(np.rot90(np.rot90(r180, 2), 2), r180)
    twice = four_rotations(r180)[2]
    assert np.array_equal(twice, img)
    again = r90
    for _ in range(3):
        again = four_rotations(again)[1]
    assert np.array_equal(again, img)
    for r in (r90, r180, r270):
        assert np.array_equal(np.sort(r.ravel()), np.sort(img.ravel()))
    assert r90.shape == (21, 13) and r180.shape == img.shape


def test_yaw_identity_is_enforced():
    YawEstimate(205.0, 180, 25.0)
    YawEstimate(10.0, 270, 100.0)
    with pytest.raises(ValidationError):
        YawEstimate(200.0, 180, 25.0)


def test_d_shape_at_205_degrees(make_peg, hole_candidate):
    hole = mating_hole(make_shape(D_SHAPE), 0.5)
    est = YawEstimator().fit(make_peg(D_SHAPE)).predict(hole_candidate(hole, 205.0))
    assert est.theta_rotate == 180
    assert est.theta == pytest.approx(25.0, abs=0.7)
    assert angle_diff(est.theta_yaw, 205.0, 360.0) <= 1.0
    assert len(est.ranking) == 4 and est.hypotheses[0] == est.theta_yaw


@pytest.mark.parametrize("yaw", [12.0, 95.0, 250.0])
def test_symmetric_rectangle_top_two_are_a_half_turn_apart(make_peg, hole_candidate, yaw):
    hole = mating_hole(make_shape(RECT), 0.5)
    est = YawEstimator().fit(make_peg(RECT)).predict(hole_candidate(hole, yaw))
    first, second = est.hypotheses[:2]
    assert angle_diff(first, second, 360.0) == pytest.approx(180.0, abs=1e-9)
    assert angle_diff(first, yaw, 180.0) <= 1.0


def test_square_hole_ties_to_rotation_zero(make_peg, hole_candidate):
    sq = ShapeSpec.make("rectangle", width=12, height=12)
    est = YawEstimator().fit(make_peg(sq)).predict(hole_candidate(mating_hole(make_shape(sq), 0.5), 30.0))
    assert all(r.is_yes for _, r in est.ranking)
    assert est.theta_rotate == 0


def test_ranking_not_values_decides(make_peg, hole_candidate):
    # a monotone rescaling of oracle probabilities leaves the chosen rotation unchanged
    hole = mating_hole(make_shape(D_SHAPE), 0.5)
    cand = hole_candidate(hole, 140.0)
    base = YawEstimator(OracleBackend()).fit(make_peg(D_SHAPE)).predict(cand)
    sharp = YawEstimator(OracleBackend(temperature_mm=0.05)).fit(make_peg(D_SHAPE)).predict(cand)
    assert [r for r, _ in base.ranking] == [r for r, _ in sharp.ranking]


def test_all_unparseable(make_peg, hole_candidate):
    class Mute(OracleBackend):
        def complete(self, bundle):
            return Reply("hmm")

    with pytest.raises(AllUnparseableError):
        YawEstimator(Mute()).fit(make_peg(D_SHAPE)).predict(
            hole_candidate(mating_hole(make_shape(D_SHAPE), 0.5), 10.0))


def test_estimator_requires_fit_and_view(make_peg):
    with pytest.raises(ValidationError):
        YawEstimator().predict(None)
    with pytest.raises(ValidationError):
        YawEstimator(view="side").fit(make_peg(D_SHAPE))


def test_estimate_yaw_without_context_falls_back_cleanly():
    # an oracle without ground truth cannot judge; every rotation is unparseable
    img = np.zeros((20, 30), np.uint8)
    m = np.zeros((20, 30), bool)
    m[5:15, 5:25] = True
    with pytest.raises((AllUnparseableError, ValidationError)):
        estimate_yaw(img, canonicalize(img, m), OracleBackend())


def _cloud_candidate(cloud, yaw_est=None):
    c = np.asarray(cloud, float)
    return HoleCandidate(0, {}, {}, {}, {}, c, c.mean(axis=0))


def test_localize_single_point_and_translation():
    assert np.allclose(localize(_cloud_candidate([[0.1, 0.2, 0.3]])), [0.1, 0.2, 0.3])
    cloud = np.random.default_rng(0).normal(size=(50, 3))
    shift = np.array([0.25, -0.5, 0.0])
    assert np.allclose(localize(_cloud_candidate(cloud + shift)) - localize(_cloud_candidate(cloud)), shift,
                       atol=1e-12)


def test_se2_estimate_composes_position_and_yaw():
    cand = _cloud_candidate([[0.1, 0.2, 0.06], [0.3, 0.4, 0.06]])
    est = YawEstimate(205.0, 180, 25.0, [(180, None), (0, None)])
    pose = se2_estimate(cand, est)
    assert (pose.x, pose.y, pose.yaw) == pytest.approx((0.2, 0.3, 205.0))
    assert se2_estimate(cand, est, rank=1).yaw == pytest.approx(25.0)


def test_pose_on_rendered_panel(panel):
    worlds, scenes = panel
    from pegmate.detection import detect_candidates
    from pegmate.pipeline import peg_input

    for world, scene in zip(worlds, scenes):
        cands = detect_candidates(scene)
        cand = next(c for c in cands if c.index == world.ground_truth_index)
        est = YawEstimator().fit(peg_input(scene)).predict(cand)
        pose = se2_estimate(cand, est)
        truth = world.hole_world_pose(world.ground_truth_index)
        bias = np.asarray(scene.meta.get("centroid_bias_m", [0.0, 0.0]))[:2]
        assert math.hypot(pose.x - bias[0] - truth.x, pose.y - bias[1] - truth.y) < 1e-3
        assert angle_diff(pose.yaw, truth.yaw, 360.0) <= 1.0
