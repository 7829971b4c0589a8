import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tabletop_grasp.maskio import (
    MaskFormatError,
    pose_record_for_file,
    read_mask,
    read_pgm,
    write_mask,
    write_pgm,
)
from tabletop_grasp.perception_bridge import (
    DetectedObject,
    FileMaskSource,
    PerceptionUnavailable,
    SimulatorMaskSource,
    TargetNotFound,
    build_state,
    perceive,
    select_target,
)
from tabletop_grasp.pose_estimation import AffineCalibration, ObjectPose, PixelMask
from tabletop_grasp.tabletop_env import Effector, ScenarioSpec, TabletopEnv

from helpers import angle_gap


def det(label, ratio, x=0.0, y=0.0, theta=0.0, visible=True, uid=None):
    return DetectedObject(label, ObjectPose((x, y), theta), ratio, visible, uid)


class TestMaskFiles:
    @pytest.mark.parametrize("binary", [True, False])
    def test_pgm_roundtrip(self, tmp_path, binary):
        img = np.zeros((7, 5), dtype=np.uint8)
        img[2, 3] = img[6, 0] = 255
        write_pgm(tmp_path / "m.pgm", img, binary=binary)
        np.testing.assert_array_equal(read_pgm(tmp_path / "m.pgm") > 0, img > 0)

    def test_pgm_comments(self, tmp_path):
        (tmp_path / "c.pgm").write_text("P2\n# made by hand\n3 2\n255\n0 255 0\n0 0 255\n")
        img = read_pgm(tmp_path / "c.pgm")
        assert img.shape == (2, 3) and img[0, 1] == 255 and img[1, 2] == 255

    def test_malformed(self, tmp_path):
        (tmp_path / "b.pgm").write_bytes(b"P7\n1 1\n255\n\x00")
        with pytest.raises(MaskFormatError):
            read_pgm(tmp_path / "b.pgm")

    def test_mask_roundtrip_with_sidecar(self, tmp_path):
        m = PixelMask([(1, 2), (3, 4), (4, 4)], class_label=5)
        write_mask(tmp_path / "obj.pgm", m, (6, 6), full_area=4)
        back, full = read_mask(tmp_path / "obj.pgm")
        assert full == 4 and back.class_label == 5
        assert sorted(map(tuple, back.points)) == [(1, 2), (3, 4), (4, 4)]

    def test_missing_sidecar(self, tmp_path):
        write_pgm(tmp_path / "x.pgm", np.ones((2, 2), dtype=np.uint8))
        with pytest.raises(MaskFormatError):
            read_mask(tmp_path / "x.pgm")

    def test_pose_record(self, tmp_path):
        m = PixelMask([(i, 3) for i in range(10)], class_label=2)
        write_mask(tmp_path / "line.pgm", m, (12, 12), full_area=20)
        rec = pose_record_for_file(tmp_path / "line.pgm")
        assert rec == {"class": 2, "x": 4.5, "y": 3.0, "theta": 0.0, "ratio": 0.5, "degenerate": False}


class TestPerceive:
    def test_simulator_fidelity(self):
        for seed in range(20):
            env = TabletopEnv(ScenarioSpec("static"))
            env.reset(seed=seed)
            (d,) = perceive(SimulatorMaskSource(env), env.workspace.calib)
            t = env.target
            assert d.ratio == 1.0 and d.uid == t.uid
            assert math.hypot(d.pose.x - t.pose.x, d.pose.y - t.pose.y) < 0.01
            if not t.orientation_free:
                assert angle_gap(d.pose.theta, t.pose.theta) < 0.1

    def test_file_source_matches_simulator(self, tmp_path):
        env = TabletopEnv(ScenarioSpec("clutter", object_count=4, overlap_density=0.5))
        env.reset(seed=2)
        paths = []
        for i, r in enumerate(env.render()):
            p = tmp_path / f"obj{i}.pgm"
            write_mask(p, r.mask, (200, 200), r.full_area)
            paths.append(p)
        from_sim = perceive(SimulatorMaskSource(env), env.workspace.calib)
        from_files = perceive(FileMaskSource(paths), env.workspace.calib)
        for a, b in zip(from_sim, from_files):
            assert a.ratio == b.ratio and a.class_label == b.class_label
            if a.visible:
                assert a.pose.center == pytest.approx(b.pose.center, abs=1e-12)

    def test_fully_hidden_object(self):
        class Source:
            def masks(self):
                from tabletop_grasp.tabletop_env import RenderedMask
                return [RenderedMask(PixelMask(np.zeros((0, 2), dtype=int), 3), 40, 7)]
        (d,) = perceive(Source(), AffineCalibration.identity())
        assert not d.visible and d.ratio == 0.0 and d.pose is None

    def test_source_failure(self):
        with pytest.raises(PerceptionUnavailable):
            perceive(FileMaskSource(["/nonexistent/mask.pgm"]), AffineCalibration.identity())


class TestSelect:
    def test_highest_ratio_wins(self):
        ds = [det(0, 0.4), det(1, 0.9), det(2, 0.7)]
        assert select_target(ds, "by_ratio").class_label == 1

    def test_ties_by_class_then_pose(self):
        ds = [det(3, 1.0, x=0.2), det(1, 1.0, x=0.5), det(1, 1.0, x=-0.1)]
        chosen = select_target(ds)
        assert chosen.class_label == 1 and chosen.pose.x == -0.1

    def test_by_class(self):
        ds = [det(0, 1.0), det(4, 0.3), det(4, 0.6, x=1.0)]
        assert select_target(ds, "by_class", 4).pose.x == 1.0
        with pytest.raises(TargetNotFound):
            select_target(ds, "by_class", 6)

    def test_hidden_ignored(self):
        with pytest.raises(TargetNotFound):
            select_target([det(0, 0.0, visible=False)])

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            select_target([det(0, 1.0)], "random")

    @given(st.lists(st.tuples(st.integers(0, 6), st.floats(0.01, 1.0), st.floats(-1, 1)), min_size=1, max_size=8))
    def test_order_independent(self, items):
        ds = [det(c, r, x=x) for c, r, x in items]
        a = select_target(ds)
        b = select_target(list(reversed(ds)))
        assert (a.class_label, a.ratio, a.pose.x) == (b.class_label, b.ratio, b.pose.x)
        assert a.ratio == max(d.ratio for d in ds)


class TestBuildState:
    def test_concatenation(self):
        s = build_state(det(0, 1.0, 0.1, 0.2, 0.3), Effector(0.4, 0.5, 0.6))
        np.testing.assert_array_equal(s.to_array(), [0.1, 0.2, 0.3, 0.4, 0.5, 0.6])

    def test_invisible(self):
        with pytest.raises(TargetNotFound):
            build_state(DetectedObject(0, None, 0.0, False), Effector())
