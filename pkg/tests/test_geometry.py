import math
import warnings

import numpy as np
import pytest
import sympy

from mmst.errors import ContractError, InsufficientHistoryError
from mmst.geometry import (AGENT, GLOBAL, FeatureStats, Pose, Trajectory,
                           destandardize, from_agent_frame, motion_features,
                           poses_to_array, standardize, to_agent_frame,
                           transform_to_frame, wrap_angle)


class TestFrameTransform:
    def test_identity_pose(self, rng):
        pts = rng.standard_normal((6, 2))
        traj = Trajectory(pts, GLOBAL)
        out = to_agent_frame(traj, Pose(0.0, 0.0, 0.0))
        np.testing.assert_allclose(out.points, pts, atol=1e-15)
        assert out.frame == AGENT

    def test_hand_rotation(self):
        out = transform_to_frame(np.array([[1.0, 2.0]]), Pose(1.0, 1.0, math.pi / 2))
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-12)

    def test_round_trip(self, rng):
        for _ in range(50):
            origin = Pose(*rng.uniform(-50, 50, 2), rng.uniform(-math.pi, math.pi))
            pts = rng.uniform(-100, 100, (8, 2))
            traj = Trajectory(pts, GLOBAL)
            back = from_agent_frame(to_agent_frame(traj, origin), origin)
            assert np.abs(back.points - pts).max() < 1e-9

    def test_isometry(self, rng):
        origin = Pose(3.0, -2.0, 0.7)
        pts = rng.uniform(-10, 10, (10, 2))
        out = transform_to_frame(pts, origin)
        d_in = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        d_out = np.linalg.norm(out[:, None] - out[None], axis=-1)
        assert np.abs(d_in - d_out).max() < 1e-9

    def test_frame_tag_enforced(self):
        traj = Trajectory(np.zeros((2, 2)), AGENT)
        with pytest.raises(ContractError):
            to_agent_frame(traj, Pose(0, 0, 0))


class TestMotionFeatures:
    def test_straight_line(self):
        dt = 0.5
        poses = [Pose(5.0 * dt * i, 0.0, 0.0) for i in range(8)]
        feats = motion_features(poses, dt)
        np.testing.assert_allclose(feats[:, 0], 5.0, atol=1e-12)
        np.testing.assert_allclose(feats[:, 1], 0.0, atol=1e-12)
        np.testing.assert_allclose(feats[:, 2], 0.0, atol=1e-12)

    def test_uniform_circular_motion(self):
        radius, speed, dt = 10.0, 5.0, 0.1
        omega = speed / radius
        poses = []
        for i in range(20):
            ang = omega * dt * i
            poses.append(Pose(radius * math.cos(ang), radius * math.sin(ang),
                              ang + math.pi / 2))
        feats = motion_features(poses, dt)
        np.testing.assert_allclose(feats[:, 2], 0.5, atol=1e-9)
        np.testing.assert_allclose(feats[:, 1], 0.0, atol=1e-9)

    def test_spline_against_symbolic_derivatives(self):
        t = sympy.Symbol("t")
        fx = 3 * t + sympy.sin(t)
        fy = 2 * sympy.cos(t) + t ** 2 / 10
        vx, vy = sympy.diff(fx, t), sympy.diff(fy, t)
        speed = sympy.sqrt(vx ** 2 + vy ** 2)
        accel = sympy.diff(speed, t)
        heading = sympy.atan2(vy, vx)
        yaw_rate = sympy.simplify(sympy.diff(heading, t))
        fns = {name: sympy.lambdify(t, expr)
               for name, expr in (("x", fx), ("y", fy), ("speed", speed),
                                  ("accel", accel), ("heading", heading),
                                  ("yaw_rate", yaw_rate))}
        dt = 0.05
        times = np.arange(0, 4, dt)
        poses = [Pose(fns["x"](tt), fns["y"](tt), fns["heading"](tt))
                 for tt in times]
        feats = motion_features(poses, dt)
        for i in range(5, len(times)):
            # backward differences estimate v and yaw rate at midpoints,
            # acceleration one step earlier
            v_true = fns["speed"](times[i] - dt / 2)
            a_true = fns["accel"](times[i] - dt)
            w_true = fns["yaw_rate"](times[i] - dt / 2)
            assert abs(feats[i, 0] - v_true) < 0.05 * max(abs(v_true), 1.0)
            assert abs(feats[i, 1] - a_true) < 0.05 * max(abs(a_true), 1.0)
            assert abs(feats[i, 2] - w_true) < 0.05 * max(abs(w_true), 1.0)

    def test_insufficient_history(self):
        with pytest.raises(InsufficientHistoryError):
            motion_features([Pose(0, 0, 0), Pose(1, 0, 0)], 0.5)

    def test_rigid_invariance(self, rng):
        poses = [Pose(float(x), float(y), float(w)) for x, y, w in
                 np.cumsum(rng.uniform(0.1, 0.5, (10, 3)), axis=0)]
        feats = motion_features(poses, 0.5)
        shift, rot = rng.uniform(-30, 30, 2), rng.uniform(-3, 3)
        c, s = math.cos(rot), math.sin(rot)
        moved = [Pose(c * p.x - s * p.y + shift[0],
                      s * p.x + c * p.y + shift[1],
                      wrap_angle(p.yaw + rot)) for p in poses]
        feats2 = motion_features(moved, 0.5)
        assert np.abs(feats - feats2).max() < 1e-9

    def test_speed_nonnegative(self, rng):
        arr = rng.standard_normal((12, 3)).cumsum(axis=0)
        feats = motion_features(arr, 0.5)
        assert (feats[:, 0] >= 0).all()


class TestStandardize:
    def test_centering(self):
        stats = FeatureStats(np.array([1.0, 2.0, 3.0]), np.ones(3))
        out = standardize(np.array([[1.0, 2.0, 3.0]]), stats)
        np.testing.assert_array_equal(out, np.zeros((1, 3)))

    def test_identity_stats(self, rng):
        x = rng.standard_normal((5, 3))
        stats = FeatureStats(np.zeros(3), np.ones(3))
        np.testing.assert_array_equal(standardize(x, stats), x)

    def test_fit_then_standardize_is_white(self, rng):
        x = rng.standard_normal((400, 3)) * [2.0, 5.0, 0.1] + [1.0, -4.0, 0.0]
        stats = FeatureStats.fit(x)
        z = standardize(x, stats)
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-6)

    def test_invertibility(self, rng):
        x = rng.standard_normal((50, 3)) * 3.0 + 1.0
        stats = FeatureStats.fit(x)
        np.testing.assert_allclose(destandardize(standardize(x, stats), stats),
                                   x, atol=1e-6)

    def test_zero_variance_flagged(self):
        x = np.ones((10, 3))
        x[:, 0] = np.linspace(0, 1, 10)
        with pytest.warns(RuntimeWarning):
            stats = FeatureStats.fit(x)
        assert stats.degenerate.tolist() == [False, True, True]
        assert (stats.std[1:] == 1.0).all()


class TestPose:
    def test_yaw_wrapped(self):
        assert Pose(0, 0, 3 * math.pi).yaw == pytest.approx(math.pi)
        assert Pose(0, 0, -math.pi).yaw == pytest.approx(math.pi)

    def test_non_finite_rejected(self):
        with pytest.raises(ContractError):
            Pose(float("nan"), 0.0, 0.0)

    def test_poses_to_array(self):
        arr = poses_to_array([Pose(1, 2, 0.5), Pose(3, 4, -0.5)])
        np.testing.assert_allclose(arr, [[1, 2, 0.5], [3, 4, -0.5]])
