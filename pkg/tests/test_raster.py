import math

import numpy as np
import pytest

from mmst.errors import ContractError, InsufficientHistoryError
from mmst.geometry import Pose
from mmst.raster import (LAYER_TYPES, Polygon, Polyline, RasterConfig,
                         RasterWindow, SemanticMap, global_chunk,
                         local_chunk_stack, rasterize_layer, write_pgm)

from oracles import point_in_polygon_winding


def square_window(side_px=16, size_m=16.0, pose=Pose(0, 0, 0)):
    half = size_m / 2
    return RasterWindow(pose, half, half, half, size_m / side_px)


class TestRasterizeLayer:
    def test_empty_layer(self):
        out = rasterize_layer([], square_window())
        assert out.shape == (16, 16)
        assert np.all(out == 0)

    def test_left_half_rectangle(self):
        # covers y in [0, 8]: the left half of the window (left = +y)
        rect = Polygon(np.array([[-8.0, 0.0], [8.0, 0.0], [8.0, 8.0],
                                 [-8.0, 8.0]]))
        out = rasterize_layer([rect], square_window())
        assert np.all(out[:, :8] == 1)
        assert np.all(out[:, 8:] == 0)

    def test_full_window_polygon(self):
        rect = Polygon(np.array([[-9.0, -9.0], [9.0, -9.0], [9.0, 9.0],
                                 [-9.0, 9.0]]))
        out = rasterize_layer([rect], square_window())
        assert np.all(out == 1)

    def test_matches_winding_oracle(self, rng):
        ring = rng.uniform(-6, 6, (7, 2))
        window = square_window()
        out = rasterize_layer([Polygon(ring)], window)
        px, py = window.pixel_centers()
        for flat_idx in rng.choice(out.size, size=64, replace=False):
            p = (px[flat_idx], py[flat_idx])
            dists = np.abs(np.cross(np.roll(ring, -1, 0) - ring,
                                    p - ring)) / \
                np.maximum(np.linalg.norm(np.roll(ring, -1, 0) - ring,
                                          axis=1), 1e-12)
            if dists.min() < 0.3:
                continue  # skip near-edge pixels where rules may differ
            expected = point_in_polygon_winding(p[0], p[1], ring)
            assert bool(out.reshape(-1)[flat_idx]) == expected

    def test_polyline_width(self):
        line = Polyline(np.array([[-8.0, 0.0], [8.0, 0.0]]), width=2.0)
        window = square_window()
        out = rasterize_layer([line], window)
        px, py = window.pixel_centers()
        inside = np.abs(py) <= 1.0
        np.testing.assert_array_equal(out.reshape(-1) > 0, inside)

    def test_determinism(self, rng):
        ring = rng.uniform(-7, 7, (6, 2))
        a = rasterize_layer([Polygon(ring)], square_window())
        b = rasterize_layer([Polygon(ring)], square_window())
        assert np.array_equal(a, b)


class TestGlobalChunk:
    def _map_with_rect_ahead(self):
        m = SemanticMap()
        m.add("drivable_area", Polygon(np.array([[10.0, -20.0], [60.0, -20.0],
                                                 [60.0, 20.0], [10.0, 20.0]])))
        return m

    def test_content_only_in_upper_region(self):
        cfg = RasterConfig()
        chunk = global_chunk(self._map_with_rect_ahead(), Pose(0, 0, 0), cfg)
        h = chunk.shape[0]
        # rect ahead (x in [10, 60]) maps to upper rows; agent row is near
        # the bottom (5 m rear of 105 m window)
        assert chunk[: h // 2].sum() > 0
        assert chunk[int(h * 0.95):].sum() == 0

    def test_rotation_equivariance(self):
        cfg = RasterConfig()
        m = SemanticMap()
        m.add("drivable_area", Polygon(np.array([[5.0, -7.0], [40.0, -7.0],
                                                 [40.0, 12.0], [5.0, 12.0]])))
        m.add("lane", Polyline(np.array([[0.0, 0.0], [50.0, 0.0]]), 3.5))
        base = global_chunk(m, Pose(0, 0, 0), cfg)
        ang = math.pi / 2
        c, s = math.cos(ang), math.sin(ang)
        rot = np.array([[c, -s], [s, c]])
        m2 = SemanticMap()
        for name in LAYER_TYPES:
            for geom in m.layers[name]:
                if isinstance(geom, Polygon):
                    m2.add(name, Polygon(geom.ring @ rot.T))
                else:
                    m2.add(name, Polyline(geom.points @ rot.T, geom.width))
        rotated = global_chunk(m2, Pose(0, 0, ang), cfg)
        disagree = (base != rotated).mean()
        assert disagree <= 0.005

    def test_values_in_unit_interval(self):
        cfg = RasterConfig()
        chunk = global_chunk(self._map_with_rect_ahead(), Pose(0, 0, 0), cfg)
        assert chunk.min() >= 0.0 and chunk.max() <= 1.0

    def test_empty_map_all_zero(self):
        chunk = global_chunk(SemanticMap(), Pose(0, 0, 0), RasterConfig())
        assert np.all(chunk == 0)


class TestLocalChunkStack:
    def _simple_map(self):
        m = SemanticMap()
        m.add("road_segment", Polygon(np.array([[-50.0, -4.0], [50.0, -4.0],
                                                [50.0, 4.0], [-50.0, 4.0]])))
        m.add("lane", Polyline(np.array([[-50.0, 0.0], [50.0, 0.0]]), 3.5))
        return m

    def test_stationary_agent_identical_slices(self):
        cfg = RasterConfig()
        poses = [Pose(1.0, 0.5, 0.2)] * 5
        stack = local_chunk_stack(self._simple_map(), poses, cfg, 5)
        for t in range(1, 5):
            assert np.array_equal(stack[0], stack[t])

    def test_shape_for_default_horizons(self):
        cfg = RasterConfig()
        poses = [Pose(float(i), 0, 0) for i in range(5)]
        stack = local_chunk_stack(self._simple_map(), poses, cfg, 5)
        assert stack.shape == (5, 4, cfg.local_px, cfg.local_px)

    def test_channel_content_matches_layer(self):
        cfg = RasterConfig()
        poses = [Pose(0, 0, 0)] * 5
        stack = local_chunk_stack(self._simple_map(), poses, cfg, 5)
        assert stack[0, 0].sum() > 0      # road_segment present
        assert stack[0, 2].sum() > 0      # lane present
        assert stack[0, 1].sum() == 0     # no drivable geometry
        assert stack[0, 3].sum() == 0     # no walkway geometry

    def test_channel_union_equals_union_raster(self):
        cfg = RasterConfig()
        m = self._simple_map()
        window = cfg.local_window(Pose(0, 0, 0))
        union_geoms = [g for name in LAYER_TYPES for g in m.layers[name]]
        union = rasterize_layer(union_geoms, window)
        stack = local_chunk_stack(m, [Pose(0, 0, 0)], cfg, 1)
        np.testing.assert_array_equal(stack[0].max(axis=0), union)

    def test_insufficient_history(self):
        with pytest.raises(InsufficientHistoryError):
            local_chunk_stack(self._simple_map(), [Pose(0, 0, 0)] * 3,
                              RasterConfig(), 5)

    def test_determinism(self):
        cfg = RasterConfig()
        poses = [Pose(float(i), 0.1 * i, 0.01 * i) for i in range(5)]
        a = local_chunk_stack(self._simple_map(), poses, cfg, 5)
        b = local_chunk_stack(self._simple_map(), poses, cfg, 5)
        assert np.array_equal(a, b)


class TestPgm:
    def test_header_and_payload(self, tmp_path):
        img = np.linspace(0, 1, 12).reshape(3, 4)
        path = tmp_path / "out.pgm"
        write_pgm(path, img)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n4 3\n255\n")
        assert len(raw) == len(b"P5\n4 3\n255\n") + 12


class TestWindow:
    def test_invalid_extents(self):
        with pytest.raises(ContractError):
            RasterWindow(Pose(0, 0, 0), -1.0, 1.0, 1.0, 0.5)

    def test_pixel_centers_orientation(self):
        w = square_window(side_px=4, size_m=4.0)
        px, py = w.pixel_centers()
        # row 0 = far forward, column 0 = far left
        assert px[0] == pytest.approx(1.5)
        assert py[0] == pytest.approx(1.5)
        assert px[-1] == pytest.approx(-1.5)
        assert py[-1] == pytest.approx(-1.5)
