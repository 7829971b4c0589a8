import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabletop_grasp.pose_estimation import (
    AffineCalibration,
    DegenerateDirection,
    EmptyMask,
    InvalidReference,
    ObjectPose,
    PixelMask,
    SingularCalibration,
    Sym2Matrix,
    covariance_2x2,
    eigen_sym2,
    estimate_pose,
    fold_angle,
    mask_centroid,
    mask_ratio,
    pixel_to_world,
    principal_angle,
)

from oracles import angle_gap_mod_pi, covariance_oracle, eigen_oracle, mean_oracle, pose_oracle


def rect_raster(cx, cy, w, h, theta, size=200):
    """Integer pixels whose centres fall in a rotated rectangle."""
    ys, xs = np.mgrid[0:size, 0:size]
    dx, dy = xs - cx, ys - cy
    u = math.cos(theta) * dx + math.sin(theta) * dy
    v = -math.sin(theta) * dx + math.cos(theta) * dy
    inside = (np.abs(u) <= w / 2) & (np.abs(v) <= h / 2)
    return np.column_stack([xs[inside], ys[inside]])


class TestCentroid:
    def test_two_points(self):
        assert mask_centroid(PixelMask([(0, 0), (2, 0)])) == (1.0, 0.0)

    def test_collinear(self):
        assert mask_centroid(PixelMask([(0, 0), (1, 0), (2, 0)])) == (1.0, 0.0)

    def test_random_cloud_matches_summation(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(0, 100, size=(200, 2))
        got = mask_centroid(pts)
        want = mean_oracle(pts.tolist())
        assert got == pytest.approx(want, abs=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyMask):
            mask_centroid(PixelMask(np.zeros((0, 2), dtype=int)))


class TestCovariance:
    def test_two_point_variance(self):
        c = covariance_2x2(PixelMask([(0, 0), (2, 0)]), (1, 0))
        assert (c.a, c.b, c.d) == (1.0, 0.0, 0.0)

    def test_diagonal_line(self):
        c = covariance_2x2(PixelMask([(0, 0), (1, 1), (2, 2)]), (1, 1))
        assert c.a == pytest.approx(2 / 3) and c.b == pytest.approx(2 / 3) and c.d == pytest.approx(2 / 3)

    def test_random_cloud_matches_accumulation(self):
        rng = np.random.default_rng(4)
        pts = rng.uniform(-5, 40, size=(150, 2))
        center = mean_oracle(pts.tolist())
        want = covariance_oracle(pts.tolist(), center)
        got = covariance_2x2(pts, center).as_array()
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyMask):
            covariance_2x2([], (0, 0))


class TestEigen:
    def test_diagonal(self):
        (l1, l2), (a1, a2) = eigen_sym2(Sym2Matrix(4, 0, 1))
        assert (l1, l2) == (4, 1)
        np.testing.assert_allclose(a1, [1, 0], atol=1e-15)

    def test_known_spectrum(self):
        (l1, l2), (a1, _) = eigen_sym2(Sym2Matrix(2, 1, 2))
        assert l1 == pytest.approx(3) and l2 == pytest.approx(1)
        np.testing.assert_allclose(a1, np.array([1, 1]) / math.sqrt(2), atol=1e-12)

    def test_tie_breaks_to_x_axis(self):
        (l1, l2), (a1, a2) = eigen_sym2(Sym2Matrix(2, 0, 2))
        assert l1 == l2 == 2
        np.testing.assert_array_equal(a1, [1, 0])

    def test_random_psd_against_characteristic_polynomial(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            B = rng.normal(size=(2, 2))
            M = B @ B.T
            m = Sym2Matrix(M[0, 0], M[0, 1], M[1, 1])
            (l1, l2), (a1, a2) = eigen_sym2(m)
            (o1, o2), v = eigen_oracle(M.tolist())
            assert l1 == pytest.approx(o1, rel=1e-12, abs=1e-12)
            assert l2 == pytest.approx(o2, rel=1e-9, abs=1e-12)
            assert l1 >= l2
            for lam, vec in ((l1, a1), (l2, a2)):
                assert np.linalg.norm(M @ vec - lam * vec) < 1e-9
                assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-12)
            assert abs(a1 @ a2) < 1e-12
            assert abs(abs(a1 @ np.array(v)) - 1.0) < 1e-9

    @given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
    def test_eigen_residual_property(self, a, b, d):
        M = np.array([[a, b], [b, d]])
        (l1, l2), (a1, a2) = eigen_sym2(Sym2Matrix(a, b, d))
        scale = max(1.0, abs(a), abs(b), abs(d))
        assert l1 >= l2
        assert np.linalg.norm(M @ a1 - l1 * a1) <= 1e-9 * scale
        assert np.linalg.norm(M @ a2 - l2 * a2) <= 1e-9 * scale


class TestPrincipalAngle:
    def test_horizontal(self):
        assert principal_angle((1, 0)) == 0.0

    def test_vertical_folds_to_positive(self):
        assert principal_angle((0, 1)) == pytest.approx(math.pi / 2)
        assert principal_angle((0, -1)) == pytest.approx(math.pi / 2)

    def test_diagonal(self):
        assert principal_angle(np.array([1, 1]) / math.sqrt(2)) == pytest.approx(math.pi / 4)

    def test_zero_vector(self):
        with pytest.raises(DegenerateDirection):
            principal_angle((0, 0))

    @given(st.floats(-math.pi, math.pi))
    def test_negation_invariance(self, phi):
        v = np.array([math.cos(phi), math.sin(phi)])
        a, b = principal_angle(v), principal_angle(-v)
        assert -math.pi / 2 < a <= math.pi / 2
        assert angle_gap_mod_pi(a, b) < 1e-12

    @given(st.floats(-50, 50))
    def test_fold_range(self, theta):
        t = fold_angle(theta)
        assert -math.pi / 2 < t <= math.pi / 2
        assert angle_gap_mod_pi(t, theta) < 1e-9


class TestEstimatePose:
    def test_horizontal_line(self):
        p = estimate_pose(PixelMask([(0, 0), (1, 0), (2, 0)]))
        assert p.center == (1.0, 0.0) and p.theta == 0.0 and not p.degenerate

    def test_vertical_line(self):
        p = estimate_pose(PixelMask([(0, 0), (0, 1), (0, 2)]))
        assert p.center == (0.0, 1.0) and p.theta == pytest.approx(math.pi / 2)

    def test_rotated_rectangle_raster(self):
        pts = rect_raster(100.3, 99.7, 60, 15, 0.3)
        p = estimate_pose(PixelMask(pts))
        assert abs(p.theta - 0.3) < 0.02
        assert p.center == pytest.approx((100.3, 99.7), abs=0.5)

    def test_single_point_is_degenerate(self):
        p = estimate_pose(PixelMask([(5, 7)]))
        assert p.center == (5.0, 7.0) and p.theta == 0.0 and p.degenerate

    def test_square_is_degenerate(self):
        pts = [(x, y) for x in range(4) for y in range(4)]
        p = estimate_pose(PixelMask(pts))
        assert p.degenerate and p.theta == 0.0

    def test_empty(self):
        with pytest.raises(EmptyMask):
            estimate_pose(PixelMask([]))

    def test_debug_projection_lies_on_principal_line(self):
        pts = rect_raster(50, 50, 40, 10, -0.7, size=100)
        pose, pc = estimate_pose(PixelMask(pts), debug=True)
        c = np.array(pose.center)
        rel = pc.projected_points - c
        normal = np.array([-math.sin(pose.theta), math.cos(pose.theta)])
        assert np.max(np.abs(rel @ normal)) < 1e-9
        assert np.linalg.norm(pc.direction) == pytest.approx(1.0, abs=1e-9)

    def test_eigenvalues_ordered(self):
        p = estimate_pose(PixelMask(rect_raster(30, 30, 20, 6, 1.0, size=60)))
        assert p.eigenvalues[0] >= p.eigenvalues[1] >= 0

    def test_pipeline_matches_oracle_on_random_clouds(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            n = int(rng.integers(3, 200))
            pts = rng.normal(size=(n, 2)) @ rng.normal(size=(2, 2)) + rng.uniform(-50, 50, 2)
            pose = estimate_pose(pts)
            (cx, cy), theta = pose_oracle(pts.tolist())
            assert pose.center == pytest.approx((cx, cy), abs=1e-9)
            assert angle_gap_mod_pi(pose.theta, theta) < 1e-9

    @settings(max_examples=50)
    @given(st.integers(-500, 500), st.integers(-500, 500), st.integers(0, 10_000))
    def test_translation_equivariance(self, tx, ty, seed):
        rng = np.random.default_rng(seed)
        pts = np.unique(rng.integers(0, 40, size=(30, 2)), axis=0)
        p0 = estimate_pose(PixelMask(pts))
        p1 = estimate_pose(PixelMask(pts + np.array([tx, ty])))
        assert p1.center == pytest.approx((p0.center[0] + tx, p0.center[1] + ty), abs=1e-9)
        assert p1.theta == pytest.approx(p0.theta, abs=1e-9)

    @settings(max_examples=50)
    @given(st.floats(-math.pi, math.pi), st.integers(0, 10_000))
    def test_rotation_equivariance(self, phi, seed):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(50, 2)) * np.array([5.0, 1.0])
        R = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
        p0 = estimate_pose(pts)
        p1 = estimate_pose(pts @ R.T)
        assert angle_gap_mod_pi(p1.theta, p0.theta + phi) < 1e-6


class TestMaskRatio:
    def test_unoccluded(self):
        assert mask_ratio(PixelMask([(i, 0) for i in range(100)]), 100) == 1.0

    def test_half(self):
        assert mask_ratio(PixelMask([(i, 0) for i in range(50)]), 100) == 0.5

    def test_zero_reference(self):
        with pytest.raises(InvalidReference):
            mask_ratio(PixelMask([(0, 0)]), 0)

    def test_jitter_clamps(self):
        assert mask_ratio(PixelMask([(i, 0) for i in range(101)]), 100) == 1.0
        with pytest.raises(InvalidReference):
            mask_ratio(PixelMask([(i, 0) for i in range(110)]), 100)

    def test_two_object_occlusion_against_set_difference(self):
        under = {(x, y) for x in range(10, 40) for y in range(10, 20)}
        over = {(x, y) for x in range(30, 50) for y in range(5, 25)}
        visible = sorted(under - over)
        want = len(under - over) / len(under)
        assert mask_ratio(PixelMask(visible), len(under)) == want

    @given(st.integers(1, 200), st.integers(0, 200))
    def test_monotone_under_removal(self, n, k):
        pts = [(i, 0) for i in range(n)]
        k = min(k, n)
        assert mask_ratio(PixelMask(pts[: n - k]), n) <= mask_ratio(PixelMask(pts), n)


class TestPixelToWorld:
    pose = ObjectPose((12.0, 30.0), 0.4, (9.0, 1.0))

    def test_identity(self):
        out = pixel_to_world(AffineCalibration.identity(), self.pose)
        assert out.center == self.pose.center
        assert out.theta == pytest.approx(self.pose.theta, abs=1e-12)

    def test_uniform_scale(self):
        out = pixel_to_world(AffineCalibration(0.01 * np.eye(2), np.zeros(2)), self.pose)
        assert out.center == pytest.approx((0.12, 0.30))
        assert out.theta == pytest.approx(0.4, abs=1e-12)
        assert out.eigenvalues == pytest.approx((9e-4, 1e-4))

    def test_quarter_turn(self):
        rot = AffineCalibration(np.array([[0.0, -1.0], [1.0, 0.0]]), np.zeros(2))
        out = pixel_to_world(rot, ObjectPose((1.0, 0.0), 0.0, (4.0, 1.0)))
        assert out.theta == pytest.approx(math.pi / 2)
        assert out.center == pytest.approx((0.0, 1.0))

    def test_quarter_turn_without_spectrum(self):
        rot = AffineCalibration(np.array([[0.0, -1.0], [1.0, 0.0]]), np.zeros(2))
        assert pixel_to_world(rot, ObjectPose((0.0, 0.0), 0.0)).theta == pytest.approx(math.pi / 2)

    def test_row_flip_mirrors_angle(self):
        flip = AffineCalibration(np.diag([1.0, -1.0]), np.zeros(2))
        assert pixel_to_world(flip, self.pose).theta == pytest.approx(-0.4)

    def test_singular(self):
        with pytest.raises(SingularCalibration):
            pixel_to_world(AffineCalibration(np.zeros((2, 2)), np.zeros(2)), self.pose)

    def test_matches_pose_of_mapped_points(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(size=(80, 2)) * np.array([6.0, 2.0]) + 40
        A = np.array([[0.02, 0.003], [-0.001, -0.015]])
        calib = AffineCalibration(A, np.array([-1.0, 0.5]))
        direct = estimate_pose(pts @ A.T + calib.offset)
        mapped = pixel_to_world(calib, estimate_pose(pts))
        assert mapped.center == pytest.approx(direct.center, abs=1e-12)
        assert angle_gap_mod_pi(mapped.theta, direct.theta) < 1e-9


class TestPixelMask:
    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            PixelMask([(1, 1), (1, 1)])

    def test_image_roundtrip(self):
        m = PixelMask([(0, 1), (3, 2)], class_label=4)
        back = PixelMask.from_image(m.to_image((5, 5)), 4)
        assert sorted(map(tuple, back.points)) == [(0, 1), (3, 2)]
