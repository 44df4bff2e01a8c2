"""Oriented-box geometry tests, oracle-first.

The independent oracles here (voxel Monte-Carlo volume estimation, per-point
brute force containment, hand-rotated corners) never call the code paths
they check.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from ovoda.errors import CoincidentCenters, ValidationError
from ovoda.geometry import (
    Box2D,
    Box3D,
    CameraModel,
    PointCloud,
    SpatialRelation,
    bev_center_distance,
    combine,
    corners,
    crop_points,
    iou3d,
    project_box,
    spatial_relation,
    wrap_yaw,
)


def random_box(rng: np.random.Generator, span: float = 10.0) -> Box3D:
    center = rng.uniform(-span, span, size=3)
    size = rng.uniform(0.4, 4.0, size=3)
    yaw = rng.uniform(-math.pi, math.pi)
    return Box3D(tuple(center), tuple(size), yaw)


def point_in_box_bruteforce(p, box: Box3D) -> bool:
    """Independent containment test: rotate the point into the box frame
    with explicit scalar trigonometry."""
    dx = p[0] - box.center[0]
    dy = p[1] - box.center[1]
    dz = p[2] - box.center[2]
    c, s = math.cos(-box.yaw), math.sin(-box.yaw)
    lx = c * dx - s * dy
    ly = s * dx + c * dy
    return (
        abs(lx) < box.size[0] / 2
        and abs(ly) < box.size[1] / 2
        and abs(dz) < box.size[2] / 2
    )


def voxel_mc_iou(a: Box3D, b: Box3D, rng: np.random.Generator, per_axis: int = 64) -> float:
    """Monte-Carlo IoU oracle: jittered voxel samples over the pair's AABB
    estimate the intersection volume; box volumes are exact."""
    pts = np.vstack([corners(a), corners(b)])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    axes = [np.linspace(lo[d], hi[d], per_axis, endpoint=False) for d in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    step = (hi - lo) / per_axis
    samples = grid + rng.uniform(0.0, 1.0, size=grid.shape) * step

    def inside(box: Box3D) -> np.ndarray:
        d = samples - np.asarray(box.center)
        c, s = math.cos(-box.yaw), math.sin(-box.yaw)
        lx = c * d[:, 0] - s * d[:, 1]
        ly = s * d[:, 0] + c * d[:, 1]
        half = np.asarray(box.size) / 2
        return (np.abs(lx) < half[0]) & (np.abs(ly) < half[1]) & (np.abs(d[:, 2]) < half[2])

    frac = np.count_nonzero(inside(a) & inside(b)) / len(samples)
    inter = frac * float(np.prod(hi - lo))
    union = a.volume + b.volume - inter
    return inter / union


def relation_bruteforce(subject: Box3D, reference: Box3D) -> SpatialRelation:
    """Independent re-derivation of the relation rule with scalar math."""
    dx = subject.center[0] - reference.center[0]
    dy = subject.center[1] - reference.center[1]
    yaw = reference.yaw
    fx = math.cos(-yaw) * dx - math.sin(-yaw) * dy
    fy = math.sin(-yaw) * dx + math.cos(-yaw) * dy
    if abs(fx) >= abs(fy):
        return SpatialRelation.IN_FRONT_OF if fx > 0 else SpatialRelation.BEHIND
    return SpatialRelation.ON_LEFT_OF if fy > 0 else SpatialRelation.ON_RIGHT_OF


class TestBoxTypes:
    def test_invalid_size_rejected(self):
        with pytest.raises(ValidationError):
            Box3D((0, 0, 0), (1, 0, 1), 0.0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError):
            Box3D((0, 0, float("nan")), (1, 1, 1), 0.0)
        with pytest.raises(ValidationError):
            Box3D((0, 0, 0), (1, 1, 1), float("inf"))

    def test_yaw_wrapping(self):
        assert Box3D((0, 0, 0), (1, 1, 1), 3 * math.pi).yaw == pytest.approx(math.pi)
        assert Box3D((0, 0, 0), (1, 1, 1), -math.pi).yaw == pytest.approx(math.pi)
        # In-range yaw is preserved bit-exactly.
        assert Box3D((0, 0, 0), (1, 1, 1), 1.25).yaw == 1.25
        assert wrap_yaw(math.pi) == math.pi

    def test_box2d_invariant(self):
        with pytest.raises(ValidationError):
            Box2D(5.0, 0.0, 1.0, 1.0)


class TestCorners:
    def test_unit_cube_at_origin(self):
        pts = corners(Box3D((0, 0, 0), (1, 1, 1), 0.0))
        expected = {(sx * 0.5, sy * 0.5, sz * 0.5) for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)}
        got = {tuple(np.round(p, 12)) for p in pts}
        assert got == expected

    def test_yaw_pi_same_corner_set(self):
        a = corners(Box3D((0, 0, 0), (1, 1, 1), 0.0))
        b = corners(Box3D((0, 0, 0), (1, 1, 1), math.pi))
        sa = {tuple(np.round(p, 9)) for p in a}
        sb = {tuple(np.round(p, 9)) for p in b}
        assert sa == sb

    def test_quarter_turn_swaps_length_and_width(self):
        # Oracle: rotate the yaw-0 corner set by a hand-built rotation matrix.
        rotated = corners(Box3D((0, 0, 0), (2, 1, 1), math.pi / 2))
        base = corners(Box3D((0, 0, 0), (2, 1, 1), 0.0))
        c, s = math.cos(math.pi / 2), math.sin(math.pi / 2)
        oracle = np.array([[c * x - s * y, s * x + c * y, z] for x, y, z in base])
        swapped = corners(Box3D((0, 0, 0), (1, 2, 1), 0.0))
        set_rot = {tuple(np.round(p, 9)) for p in rotated}
        assert set_rot == {tuple(np.round(p, 9)) for p in oracle}
        assert set_rot == {tuple(np.round(p, 9)) for p in swapped}

    def test_ordering_bottom_then_top(self):
        pts = corners(Box3D((0, 0, 0), (2, 1, 1), 0.0))
        assert np.all(pts[:4, 2] == -0.5)
        assert np.all(pts[4:, 2] == 0.5)
        # First corner is front-left: +x (forward), +y (left).
        assert pts[0, 0] > 0 and pts[0, 1] > 0


class TestIou3d:
    def test_identical_boxes(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            b = random_box(rng)
            assert iou3d(b, b) == pytest.approx(1.0, abs=1e-9)

    def test_disjoint(self):
        a = Box3D((0, 0, 0), (1, 1, 1))
        b = Box3D((100, 0, 0), (1, 1, 1))
        assert iou3d(a, b) == 0.0

    def test_half_offset_cubes(self):
        # Closed form: overlap volume 0.5, union 1.5.
        a = Box3D((0, 0, 0), (1, 1, 1))
        b = Box3D((0.5, 0, 0), (1, 1, 1))
        assert iou3d(a, b) == pytest.approx(1.0 / 3.0, abs=1e-9)

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a, b = random_box(rng, 3.0), random_box(rng, 3.0)
            v1, v2 = iou3d(a, b), iou3d(b, a)
            assert v1 == pytest.approx(v2, abs=1e-9)
            assert 0.0 <= v1 <= 1.0

    def test_against_voxel_monte_carlo(self):
        rng = np.random.default_rng(11)
        for _ in range(60):
            a = random_box(rng, 2.0)
            b = random_box(rng, 2.0)
            assert iou3d(a, b) == pytest.approx(voxel_mc_iou(a, b, rng), abs=0.02)

    def test_rotation_invariant_self_overlap(self):
        # A square footprint rotated 45 degrees against itself: known ratio.
        a = Box3D((0, 0, 0), (2, 2, 2), 0.0)
        b = Box3D((0, 0, 0), (2, 2, 2), math.pi / 4)
        inter_area = 8 * (math.sqrt(2) - 1)  # regular octagon from two squares
        expected = inter_area * 2 / (8 + 8 - inter_area * 2)
        assert iou3d(a, b) == pytest.approx(expected, abs=1e-9)


class TestBevCenterDistance:
    def test_coincident(self):
        b = Box3D((1, 2, 3), (1, 1, 1))
        assert bev_center_distance(b, b) == 0.0

    def test_z_ignored(self):
        a = Box3D((0, 0, 0), (1, 1, 1))
        b = Box3D((3, 4, 10), (1, 1, 1))
        assert bev_center_distance(a, b) == pytest.approx(5.0, abs=0)

    def test_matches_scalar_formula(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a, b = random_box(rng), random_box(rng)
            expect = math.sqrt(
                (a.center[0] - b.center[0]) ** 2 + (a.center[1] - b.center[1]) ** 2
            )
            assert bev_center_distance(a, b) == pytest.approx(expect, abs=1e-12)


class TestCombine:
    def test_idempotent_on_aabb(self):
        b = Box3D((1, 2, 3), (2, 3, 4), 0.0)
        u = combine(b, b)
        assert u.center == pytest.approx(b.center)
        assert u.size == pytest.approx(b.size)
        assert u.yaw == 0.0

    def test_two_unit_cubes(self):
        a = Box3D((0, 0, 0), (1, 1, 1))
        b = Box3D((4, 0, 0), (1, 1, 1))
        u = combine(a, b)
        # Hand min/max over 16 corners: x in [-0.5, 4.5], y and z in [-0.5, 0.5].
        assert u.center == pytest.approx((2.0, 0.0, 0.0))
        assert u.size == pytest.approx((5.0, 1.0, 1.0))

    def test_commutative_and_contains_inputs(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            a, b = random_box(rng), random_box(rng)
            u1, u2 = combine(a, b), combine(b, a)
            assert u1.center == pytest.approx(u2.center, abs=1e-12)
            assert u1.size == pytest.approx(u2.size, abs=1e-12)
            pts = np.vstack([corners(a), corners(b)])
            lo = np.asarray(u1.center) - np.asarray(u1.size) / 2
            hi = np.asarray(u1.center) + np.asarray(u1.size) / 2
            assert np.all(pts >= lo - 1e-9) and np.all(pts <= hi + 1e-9)


class TestSpatialRelation:
    def test_forward_axis(self):
        s = Box3D((10, 0, 0), (1, 1, 1))
        r = Box3D((0, 0, 0), (1, 1, 1))
        assert spatial_relation(s, r) is SpatialRelation.IN_FRONT_OF

    def test_left_axis(self):
        s = Box3D((0, 5, 0), (1, 1, 1))
        r = Box3D((0, 0, 0), (1, 1, 1))
        assert spatial_relation(s, r) is SpatialRelation.ON_LEFT_OF

    def test_rotated_reference(self):
        # Reference yawed 90 degrees: a subject on world +y lies dead ahead.
        s = Box3D((0, 5, 0), (1, 1, 1))
        r = Box3D((0, 0, 0), (1, 1, 1), math.pi / 2)
        assert spatial_relation(s, r) is SpatialRelation.IN_FRONT_OF

    def test_tie_resolves_to_front_axis(self):
        s = Box3D((3, 3, 0), (1, 1, 1))
        r = Box3D((0, 0, 0), (1, 1, 1))
        assert spatial_relation(s, r) is SpatialRelation.IN_FRONT_OF

    def test_coincident_raises(self):
        a = Box3D((0, 0, 0), (1, 1, 1))
        b = Box3D((0, 0, 5), (2, 2, 2))
        with pytest.raises(CoincidentCenters):
            spatial_relation(a, b)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(17)
        for _ in range(1000):
            s, r = random_box(rng), random_box(rng)
            assert spatial_relation(s, r) is relation_bruteforce(s, r)

    def test_frame_covariance(self):
        rng = np.random.default_rng(19)
        for _ in range(100):
            s, r = random_box(rng), random_box(rng)
            delta = rng.uniform(-math.pi, math.pi)
            c, sn = math.cos(delta), math.sin(delta)

            def rot(box: Box3D) -> Box3D:
                x, y, z = box.center
                return Box3D((c * x - sn * y, sn * x + c * y, z), box.size, box.yaw + delta)

            assert spatial_relation(s, r) is spatial_relation(rot(s), rot(r))

    def test_on_axis_antisymmetry(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            yaw = rng.uniform(-math.pi, math.pi)
            r = Box3D((0, 0, 0), (1, 1, 1), yaw)
            d = rng.uniform(1.0, 20.0)
            s = Box3D((d * math.cos(yaw), d * math.sin(yaw), 0), (1, 1, 1), yaw)
            assert spatial_relation(s, r) is SpatialRelation.IN_FRONT_OF
            assert spatial_relation(r, s) is SpatialRelation.BEHIND


def identity_camera(f: float = 800.0, size=(1600, 900)) -> CameraModel:
    K = np.array([[f, 0, size[0] / 2], [0, f, size[1] / 2], [0, 0, 1.0]])
    return CameraModel("cam0", K, np.eye(4), size)


class TestProjectBox:
    def test_box_straight_ahead(self):
        cam = identity_camera()
        rect = project_box(Box3D((0, 0, 10), (1, 1, 1)), cam)
        # Hand pinhole projection: corners at x,y = +/-0.5, z in {9.5, 10.5}.
        assert rect is not None
        u_lo = 800 + 800 * (-0.5 / 9.5)
        u_hi = 800 + 800 * (0.5 / 9.5)
        v_lo = 450 + 800 * (-0.5 / 9.5)
        v_hi = 450 + 800 * (0.5 / 9.5)
        assert rect.x_min == pytest.approx(u_lo, abs=1e-9)
        assert rect.x_max == pytest.approx(u_hi, abs=1e-9)
        assert rect.y_min == pytest.approx(v_lo, abs=1e-9)
        assert rect.y_max == pytest.approx(v_hi, abs=1e-9)
        cx = (rect.x_min + rect.x_max) / 2
        cy = (rect.y_min + rect.y_max) / 2
        assert (cx, cy) == pytest.approx((800.0, 450.0), abs=1e-9)

    def test_box_behind_camera(self):
        cam = identity_camera()
        assert project_box(Box3D((0, 0, -10), (1, 1, 1)), cam) is None

    def test_partially_behind_uses_survivors(self):
        cam = identity_camera()
        box = Box3D((0, 0, 0.6), (1, 1, 1.2))  # spans z in [0, 1.2]
        rect = project_box(box, cam)
        assert rect is not None
        # Oracle: project the four survivor corners (z = 1.2) by hand.
        u = [800 + 800 * (x / 1.2) for x in (-0.5, 0.5)]
        v = [450 + 800 * (y / 1.2) for y in (-0.5, 0.5)]
        assert rect.x_min == pytest.approx(max(0.0, u[0]), abs=1e-9)
        assert rect.x_max == pytest.approx(min(1600.0, u[1]), abs=1e-9)
        assert rect.y_min == pytest.approx(max(0.0, v[0]), abs=1e-9)
        assert rect.y_max == pytest.approx(min(900.0, v[1]), abs=1e-9)

    def test_clamped_to_image(self):
        cam = identity_camera()
        rect = project_box(Box3D((30, 0, 5), (1, 1, 1)), cam)
        assert rect is not None
        assert rect.x_max <= 1600.0 and rect.x_min >= 0.0


class TestCameraModel:
    def test_rejects_bad_rotation(self):
        E = np.eye(4)
        E[0, 0] = 2.0
        with pytest.raises(ValidationError):
            CameraModel("c", np.diag([800.0, 800.0, 1.0]), E, (100, 100))

    def test_rejects_lower_triangular(self):
        K = np.array([[800, 0, 50], [5, 800, 50], [0, 0, 1.0]])
        with pytest.raises(ValidationError):
            CameraModel("c", K, np.eye(4), (100, 100))


class TestCropPoints:
    def test_center_included(self):
        box = Box3D((1, 2, 3), (2, 2, 2), 0.3)
        idx = crop_points(box, PointCloud(np.array([[1.0, 2.0, 3.0]])))
        assert list(idx) == [0]

    def test_far_point_excluded(self):
        box = Box3D((0, 0, 0), (2, 1, 1), 0.0)
        p = np.array([[4.0, 0.0, 0.0]])  # 2x length away along heading
        assert len(crop_points(box, PointCloud(p))) == 0

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(29)
        pts = rng.uniform(-1.2, 1.2, size=(1000, 3))
        box = Box3D((0, 0, 0), (1, 1, 1), 0.0)
        got = set(crop_points(box, PointCloud(pts)).tolist())
        expect = {i for i, p in enumerate(pts) if point_in_box_bruteforce(p, box)}
        assert got == expect

    def test_matches_bruteforce_rotated(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            box = random_box(rng, 1.0)
            pts = rng.uniform(-6, 6, size=(500, 3))
            got = set(crop_points(box, pts).tolist())
            expect = {i for i, p in enumerate(pts) if point_in_box_bruteforce(p, box)}
            assert got == expect
