"""Binary rasterization of vector semantic maps.

Two products: the global chunk ``M`` (one normalized intensity image of
the area ahead of the agent) and the local stack ``D`` (per-timestep
20 m x 20 m windows split into one binary channel per layer type).

Fill rule: a pixel is set iff its center lies inside a polygon (or
within half the width of a polyline).  The crossing test is inclusive
on lower/left boundaries, exclusive on upper/right, so rasters are
deterministic and adjacent polygons never double-fill.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, InsufficientHistoryError
from .geometry import Pose, transform_to_frame, transform_from_frame

LAYER_TYPES = ("road_segment", "drivable_area", "lane", "walkway")
N_LAYERS = len(LAYER_TYPES)

# Intensity encoding of layer identity in the merged global chunk.
LAYER_WEIGHTS = {"road_segment": 0.25, "drivable_area": 0.5, "lane": 0.75,
                 "walkway": 1.0}


@dataclass(frozen=True)
class Polygon:
    ring: np.ndarray  # (N, 2) closed implicitly (first != last required)

    def __post_init__(self):
        ring = np.asarray(self.ring, dtype=np.float64)
        if ring.ndim != 2 or ring.shape[1] != 2 or len(ring) < 3:
            raise ContractError("polygon ring needs an (N>=3, 2) array")
        if not np.isfinite(ring).all():
            raise ContractError("polygon coordinates must be finite")
        object.__setattr__(self, "ring", ring)


@dataclass(frozen=True)
class Polyline:
    points: np.ndarray  # (N, 2) centerline
    width: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ContractError("polyline needs an (N>=2, 2) array")
        if not np.isfinite(pts).all() or self.width <= 0:
            raise ContractError("polyline needs finite points and positive width")
        object.__setattr__(self, "points", pts)


@dataclass
class SemanticMap:
    """Vector geometry per layer type, fixed layer order."""

    layers: dict = field(default_factory=lambda: {name: [] for name in LAYER_TYPES})

    def __post_init__(self):
        for name in LAYER_TYPES:
            self.layers.setdefault(name, [])
        unknown = set(self.layers) - set(LAYER_TYPES)
        if unknown:
            raise ContractError(f"unknown layer types: {sorted(unknown)}")

    def add(self, layer: str, geom) -> None:
        if layer not in LAYER_TYPES:
            raise ContractError(f"unknown layer type {layer!r}")
        self.layers[layer].append(geom)


@dataclass(frozen=True)
class RasterWindow:
    """An oriented crop: forward/rear/lateral extents around a center pose."""

    center: Pose
    forward_m: float
    rear_m: float
    half_width_m: float
    resolution: float  # meters per pixel

    def __post_init__(self):
        if min(self.forward_m + self.rear_m, self.half_width_m,
               self.resolution) <= 0:
            raise ContractError("window extents and resolution must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        h = int(round((self.forward_m + self.rear_m) / self.resolution))
        w = int(round(2.0 * self.half_width_m / self.resolution))
        return h, w

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Window-frame coordinates of all pixel centers (x forward, y left).

        Row 0 is the far forward edge; column 0 is the far left edge.
        """
        h, w = self.shape
        x = self.forward_m - (np.arange(h) + 0.5) * self.resolution
        y = self.half_width_m - (np.arange(w) + 0.5) * self.resolution
        return np.repeat(x, w), np.tile(y, h)

    def world_corners(self) -> np.ndarray:
        local = np.array([
            [self.forward_m, self.half_width_m],
            [self.forward_m, -self.half_width_m],
            [-self.rear_m, -self.half_width_m],
            [-self.rear_m, self.half_width_m],
        ])
        return transform_from_frame(local, self.center)


def _points_in_ring(px: np.ndarray, py: np.ndarray, ring: np.ndarray) -> np.ndarray:
    """Crossing-number test, lower/left inclusive, vectorized over points."""
    inside = np.zeros(px.shape, dtype=bool)
    ax, ay = ring[-1]
    for bx, by in ring:
        crosses = (ay <= py) != (by <= py)
        if crosses.any():
            t = (py - ay) / (by - ay)
            xi = ax + t * (bx - ax)
            inside ^= crosses & (px < xi)
        ax, ay = bx, by
    return inside


def _points_near_polyline(px: np.ndarray, py: np.ndarray,
                          pts: np.ndarray, width: float) -> np.ndarray:
    hit = np.zeros(px.shape, dtype=bool)
    r = 0.5 * width
    for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
        dx, dy = bx - ax, by - ay
        den = dx * dx + dy * dy
        if den == 0.0:
            d2 = (px - ax) ** 2 + (py - ay) ** 2
        else:
            t = np.clip(((px - ax) * dx + (py - ay) * dy) / den, 0.0, 1.0)
            d2 = (px - (ax + t * dx)) ** 2 + (py - (ay + t * dy)) ** 2
        hit |= d2 <= r * r
    return hit


def _geom_bbox(geom) -> np.ndarray:
    if isinstance(geom, Polygon):
        pts = geom.ring
        pad = 0.0
    else:
        pts = geom.points
        pad = 0.5 * geom.width
    return np.array([pts[:, 0].min() - pad, pts[:, 1].min() - pad,
                     pts[:, 0].max() + pad, pts[:, 1].max() + pad])


def rasterize_layer(geometry, window: RasterWindow) -> np.ndarray:
    """Binary occupancy of one layer's geometry inside the window."""
    h, w = window.shape
    out = np.zeros(h * w, dtype=bool)
    if geometry:
        corners = window.world_corners()
        wb = np.array([corners[:, 0].min(), corners[:, 1].min(),
                       corners[:, 0].max(), corners[:, 1].max()])
        px, py = window.pixel_centers()
        for geom in geometry:
            gb = _geom_bbox(geom)
            if gb[2] < wb[0] or gb[0] > wb[2] or gb[3] < wb[1] or gb[1] > wb[3]:
                continue
            if isinstance(geom, Polygon):
                local = transform_to_frame(geom.ring, window.center)
                out |= _points_in_ring(px, py, local)
            elif isinstance(geom, Polyline):
                local = transform_to_frame(geom.points, window.center)
                out |= _points_near_polyline(px, py, local, geom.width)
            else:
                raise ContractError(f"unsupported geometry {type(geom).__name__}")
    return out.reshape(h, w).astype(np.float32)


@dataclass(frozen=True)
class RasterConfig:
    global_forward_m: float = 100.0
    global_rear_m: float = 5.0
    global_half_width_m: float = 52.5
    global_px: int = 128
    local_size_m: float = 20.0
    local_px: int = 32

    @property
    def global_resolution(self) -> float:
        return (self.global_forward_m + self.global_rear_m) / self.global_px

    @property
    def local_resolution(self) -> float:
        return self.local_size_m / self.local_px

    def global_window(self, pose: Pose) -> RasterWindow:
        return RasterWindow(pose, self.global_forward_m, self.global_rear_m,
                            self.global_half_width_m, self.global_resolution)

    def local_window(self, pose: Pose) -> RasterWindow:
        half = 0.5 * self.local_size_m
        return RasterWindow(pose, half, half, half, self.local_resolution)


def global_chunk(semantic_map: SemanticMap, pose: Pose,
                 config: RasterConfig) -> np.ndarray:
    """Merged, normalized intensity image of the area around ``pose``.

    Layers are rasterized separately, combined as a weighted sum that
    encodes layer identity into intensity, then divided by the maximum
    so values live in [0, 1].
    """
    window = config.global_window(pose)
    acc = np.zeros(window.shape, dtype=np.float32)
    for name in LAYER_TYPES:
        layer = rasterize_layer(semantic_map.layers[name], window)
        acc += LAYER_WEIGHTS[name] * layer
    peak = acc.max()
    if peak > 0:
        acc /= peak
    return acc


def local_chunk_stack(semantic_map: SemanticMap, past_poses,
                      config: RasterConfig, n_steps: int) -> np.ndarray:
    """Per-timestep binary layer channels around each past pose.

    Returns (n_steps, n_layers, local_px, local_px); ``past_poses`` must
    hold exactly one pose per observed timestep.
    """
    poses = list(past_poses)
    if len(poses) < n_steps:
        raise InsufficientHistoryError(
            f"need {n_steps} past poses, got {len(poses)}")
    if len(poses) != n_steps:
        raise ContractError(f"expected exactly {n_steps} poses, got {len(poses)}")
    out = np.zeros((n_steps, N_LAYERS, config.local_px, config.local_px),
                   dtype=np.float32)
    for t, pose in enumerate(poses):
        window = config.local_window(pose)
        for i, name in enumerate(LAYER_TYPES):
            out[t, i] = rasterize_layer(semantic_map.layers[name], window)
    return out


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """P5 dump of a [0, 1] matrix (debugging aid)."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(img * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
