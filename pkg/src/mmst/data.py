"""Synthetic driving scenes, scene-file I/O, and training examples.

Scenes are procedurally built from three road templates (straight,
curve, T-intersection) with smooth tracks sampled at a fixed rate.
Tracks keep a constant cruise speed modulated by low-frequency noise,
so acceleration stays within 4 m/s^2 and yaw rate within 0.7 rad/s by
construction; turn routes cap speed from their tightest arc radius.

The scene JSON schema doubles as the adapter boundary for real map
data: polygon layers are coordinate rings, lanes are centerline plus
width, tracks are pose lists at the declared rate.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, rng as rng_mod
from .config import Config, DataConfig
from .errors import ContractError, DataError, GenerationError, InsufficientHistoryError
from .geometry import (FeatureStats, Pose, motion_features, poses_to_array,
                       standardize, transform_to_frame, wrap_angle)
from .raster import (LAYER_TYPES, Polygon, Polyline, RasterConfig, SemanticMap,
                     global_chunk, local_chunk_stack)

SCENE_VERSION = 1
CACHE_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")

MAX_ACCEL = 4.0        # m/s^2
MAX_YAW_RATE = 0.7     # rad/s
MIN_TURN_RADIUS = 3.0  # m
LANE_WIDTH = 3.5       # m


@dataclass
class Track:
    track_id: str
    poses: list

    def __len__(self):
        return len(self.poses)


@dataclass
class Scene:
    semantic_map: SemanticMap
    tracks: list
    rate_hz: float
    meta: dict = field(default_factory=dict)

    @property
    def period(self) -> float:
        return 1.0 / self.rate_hz


# -- route construction --------------------------------------------------------


class _Route:
    """Dense centerline with arclength lookup and a speed cap."""

    def __init__(self, points: np.ndarray, speed_cap: float):
        self.points = np.asarray(points, dtype=np.float64)
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.s[-1])
        self.speed_cap = speed_cap

    def point_at(self, s: float) -> np.ndarray:
        x = np.interp(s, self.s, self.points[:, 0])
        y = np.interp(s, self.s, self.points[:, 1])
        return np.array([x, y])


def _line(p0, p1, step: float = 1.0) -> np.ndarray:
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(2, int(math.ceil(np.linalg.norm(p1 - p0) / step)) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    return p0 + t * (p1 - p0)


def _arc(center, radius: float, a0: float, a1: float,
         step_deg: float = 2.0) -> np.ndarray:
    if radius < MIN_TURN_RADIUS:
        raise GenerationError(
            f"turn radius {radius} m below minimum {MIN_TURN_RADIUS} m")
    n = max(2, int(math.ceil(abs(a1 - a0) / math.radians(step_deg))) + 1)
    ang = np.linspace(a0, a1, n)
    cx, cy = center
    return np.stack([cx + radius * np.cos(ang), cy + radius * np.sin(ang)], axis=1)


def _join(*pieces) -> np.ndarray:
    out = [np.asarray(pieces[0], float)]
    for piece in pieces[1:]:
        piece = np.asarray(piece, float)
        if np.allclose(out[-1][-1], piece[0], atol=1e-9):
            piece = piece[1:]
        out.append(piece)
    return np.concatenate(out, axis=0)


def _rect(x0, x1, y0, y1) -> Polygon:
    return Polygon(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], float))


def _annulus_sector(r_in, r_out, a0, a1, step_deg: float = 4.0) -> Polygon:
    n = max(2, int(math.ceil(abs(a1 - a0) / math.radians(step_deg))) + 1)
    ang = np.linspace(a0, a1, n)
    outer = np.stack([r_out * np.cos(ang), r_out * np.sin(ang)], axis=1)
    inner = np.stack([r_in * np.cos(ang[::-1]), r_in * np.sin(ang[::-1])], axis=1)
    return Polygon(np.concatenate([outer, inner], axis=0))


def _arc_lane(radius, a0, a1, step_deg: float = 4.0) -> Polyline:
    return Polyline(_arc((0.0, 0.0), radius, a0, a1, step_deg), LANE_WIDTH)


# -- templates -----------------------------------------------------------------

EXTENT = 150.0


def _straight_template():
    """Two lanes per direction; supports keep-lane and lane-change."""
    m = SemanticMap()
    m.add("road_segment", _rect(-EXTENT, EXTENT, -7.0, 7.0))
    m.add("drivable_area", _rect(-EXTENT, EXTENT, -7.3, 7.3))
    for y in (-1.75, -5.25, 1.75, 5.25):
        m.add("lane", Polyline(np.array([[-EXTENT, y], [EXTENT, y]]), LANE_WIDTH))
    m.add("walkway", _rect(-EXTENT, EXTENT, 7.3, 9.3))
    m.add("walkway", _rect(-EXTENT, EXTENT, -9.3, -7.3))

    def routes(rng):
        eastbound = rng.random() < 0.5
        inner, outer = (-1.75, -5.25) if eastbound else (1.75, 5.25)
        sgn = 1.0 if eastbound else -1.0
        lane_y = inner if rng.random() < 0.5 else outer
        maneuver = "lane_change" if rng.random() < 0.35 else "keep_lane"
        if maneuver == "keep_lane":
            pts = _line((-sgn * EXTENT, lane_y), (sgn * EXTENT, lane_y))
            return _Route(pts, np.inf), maneuver, None
        other = outer if lane_y == inner else inner
        return _Route(_line((-sgn * EXTENT, lane_y), (sgn * EXTENT, lane_y)),
                      np.inf), maneuver, {"from_y": lane_y, "to_y": other,
                                          "sign": sgn}
    return m, routes


def _curve_template():
    """Single lane per direction along an arc of radius 70 m."""
    r0 = 70.0
    a0, a1 = math.radians(-100.0), math.radians(100.0)
    m = SemanticMap()
    m.add("road_segment", _annulus_sector(r0 - 3.5, r0 + 3.5, a0, a1))
    m.add("drivable_area", _annulus_sector(r0 - 3.8, r0 + 3.8, a0, a1))
    m.add("lane", _arc_lane(r0 - 1.75, a0, a1))
    m.add("lane", _arc_lane(r0 + 1.75, a0, a1))
    m.add("walkway", _annulus_sector(r0 - 5.8, r0 - 3.8, a0, a1))
    m.add("walkway", _annulus_sector(r0 + 3.8, r0 + 5.8, a0, a1))

    def routes(rng):
        ccw = rng.random() < 0.5
        radius = r0 + (1.75 if ccw else -1.75)
        cap = MAX_YAW_RATE * radius * 0.9
        pts = _arc((0.0, 0.0), radius, a0 if ccw else a1, a1 if ccw else a0,
                   step_deg=1.0)
        return _Route(pts, cap), "keep_lane", None
    return m, routes


def _t_template():
    """Main road east-west plus a branch north; through and turn routes."""
    m = SemanticMap()
    m.add("road_segment", _rect(-EXTENT, EXTENT, -3.5, 3.5))
    m.add("road_segment", _rect(-3.5, 3.5, 3.5, EXTENT))
    m.add("drivable_area", _rect(-EXTENT, EXTENT, -3.8, 3.8))
    m.add("drivable_area", _rect(-3.8, 3.8, 3.5, EXTENT))
    m.add("lane", Polyline(np.array([[-EXTENT, -1.75], [EXTENT, -1.75]]), LANE_WIDTH))
    m.add("lane", Polyline(np.array([[EXTENT, 1.75], [-EXTENT, 1.75]]), LANE_WIDTH))
    m.add("lane", Polyline(np.array([[1.75, 3.5], [1.75, EXTENT]]), LANE_WIDTH))
    m.add("lane", Polyline(np.array([[-1.75, EXTENT], [-1.75, 3.5]]), LANE_WIDTH))
    m.add("walkway", _rect(-EXTENT, EXTENT, -5.8, -3.8))
    m.add("walkway", _rect(-EXTENT, -3.8, 3.8, 5.8))
    m.add("walkway", _rect(3.8, EXTENT, 3.8, 5.8))
    m.add("walkway", _rect(-5.8, -3.8, 5.8, EXTENT))
    m.add("walkway", _rect(3.8, 5.8, 5.8, EXTENT))

    r_left, r_right = 8.0, 5.0

    def turn(entry, arc_pts, exit_):
        return _Route(_join(entry, arc_pts, exit_),
                      MAX_YAW_RATE * min(r_left, r_right) * 0.85)

    def routes(rng):
        choice = rng.choice(["east_through", "east_left", "west_through",
                             "west_right", "south_left", "south_right"])
        if choice == "east_through":
            return _Route(_line((-EXTENT, -1.75), (EXTENT, -1.75)), np.inf), \
                "keep_lane", None
        if choice == "west_through":
            return _Route(_line((EXTENT, 1.75), (-EXTENT, 1.75)), np.inf), \
                "keep_lane", None
        if choice == "east_left":
            # eastbound at y=-1.75 turning onto the northbound lane x=+1.75
            arc = _arc((1.75 - r_left, -1.75 + r_left), r_left,
                       math.radians(-90.0), 0.0, step_deg=1.0)
            route = turn(_line((-EXTENT, -1.75), (1.75 - r_left, -1.75)), arc,
                         _line((1.75, -1.75 + r_left), (1.75, EXTENT)))
            route.speed_cap = MAX_YAW_RATE * r_left * 0.85
            return route, "turn_left", None
        if choice == "west_right":
            arc = _arc((1.75 + r_right, 1.75 + r_right), r_right,
                       math.radians(-90.0), math.radians(-180.0), step_deg=1.0)
            route = turn(_line((EXTENT, 1.75), (1.75 + r_right, 1.75)), arc,
                         _line((1.75, 1.75 + r_right), (1.75, EXTENT)))
            route.speed_cap = MAX_YAW_RATE * r_right * 0.85
            return route, "turn_right", None
        if choice == "south_left":
            # southbound at x=-1.75 turning onto the eastbound lane y=-1.75
            arc = _arc((-1.75 + r_left, -1.75 + r_left), r_left,
                       math.radians(180.0), math.radians(270.0), step_deg=1.0)
            route = turn(_line((-1.75, EXTENT), (-1.75, -1.75 + r_left)), arc,
                         _line((-1.75 + r_left, -1.75), (EXTENT, -1.75)))
            route.speed_cap = MAX_YAW_RATE * r_left * 0.85
            return route, "turn_left", None
        # south_right: southbound turning onto the westbound lane y=+1.75
        arc = _arc((-1.75 - r_right, 1.75 + r_right), r_right, 0.0,
                   math.radians(-90.0), step_deg=1.0)
        route = turn(_line((-1.75, EXTENT), (-1.75, 1.75 + r_right)), arc,
                     _line((-1.75 - r_right, 1.75), (-EXTENT, 1.75)))
        route.speed_cap = MAX_YAW_RATE * r_right * 0.85
        return route, "turn_right", None
    return m, routes


_TEMPLATES = {
    "straight": _straight_template,
    "curve": _curve_template,
    "t_intersection": _t_template,
}


# -- track sampling --------------------------------------------------------------


@dataclass(frozen=True)
class SceneSpec:
    """Per-scene generation recipe derived from :class:`DataConfig`."""

    rate_hz: float = 2.0
    track_sec: float = 20.0
    speed_range: tuple = (4.0, 9.0)
    lateral_noise_m: float = 0.25
    speed_noise: float = 0.08
    template_mix: tuple = (0.4, 0.2, 0.4)
    min_tracks: int = 1
    max_tracks: int = 2

    @classmethod
    def from_data_config(cls, cfg: DataConfig) -> "SceneSpec":
        return cls(track_sec=cfg.track_sec, speed_range=cfg.speed_range,
                   lateral_noise_m=cfg.lateral_noise_m,
                   speed_noise=cfg.speed_noise, template_mix=cfg.template_mix)


def _sample_track(rng, route: _Route, maneuver: str, extra, spec: SceneSpec,
                  track_id: str) -> Track:
    dt = 1.0 / spec.rate_hz
    n_steps = int(round(spec.track_sec * spec.rate_hz))
    times = np.arange(n_steps + 1) * dt

    v0 = min(rng.uniform(*spec.speed_range), route.speed_cap)
    if v0 <= 0 or not np.isfinite(v0):
        raise GenerationError(f"no feasible speed for route cap {route.speed_cap}")
    omega = 2.0 * math.pi * rng.uniform(0.04, 0.1)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    amp = spec.speed_noise * rng.random()

    def arclength(t):
        return v0 * t - (v0 * amp / omega) * (np.cos(omega * t + phase)
                                              - np.cos(phase))

    travel = float(arclength(times[-1]))
    margin = 2.0
    usable = route.length - travel - 2.0 * margin
    if usable < 0:
        raise GenerationError(
            f"route too short: {route.length:.0f} m for {travel:.0f} m of travel")
    if np.isfinite(route.speed_cap) or maneuver == "lane_change":
        # place the interesting part (mid-route) inside the track window
        mid = 0.5 * route.length
        lo = max(margin, mid - travel + 5.0)
        hi = min(margin + usable, mid - 5.0)
        s0 = rng.uniform(lo, hi) if lo < hi else margin + usable * rng.random()
    else:
        s0 = margin + usable * rng.random()

    lat_omega = 2.0 * math.pi * rng.uniform(0.03, 0.08)
    lat_phase = rng.uniform(0.0, 2.0 * math.pi)
    lat_amp = spec.lateral_noise_m * rng.random()
    shift_start = rng.uniform(3.0, spec.track_sec - 8.0) \
        if maneuver == "lane_change" else 0.0

    def lateral(t):
        base = lat_amp * np.sin(lat_omega * t + lat_phase)
        if maneuver == "lane_change":
            ramp = np.clip((t - shift_start) / 4.0, 0.0, 1.0)
            blend = 0.5 - 0.5 * np.cos(np.pi * ramp)
            base = base + blend * (extra["to_y"] - extra["from_y"]) * extra["sign"]
        return base

    eps = 0.02
    poses = []
    for t in times:
        p, yaw = _pose_on_route(route, arclength(t) + s0, lateral(t),
                                arclength(t + eps) + s0, lateral(t + eps))
        poses.append(Pose(p[0], p[1], yaw))
    track = Track(track_id, poses)
    _check_kinematics(track, dt)
    return track


def _pose_on_route(route: _Route, s: float, lat: float,
                   s_next: float, lat_next: float):
    def offset_point(sv, lv):
        p = route.point_at(sv)
        q = route.point_at(min(sv + 0.05, route.length))
        tangent = q - p
        norm = np.linalg.norm(tangent)
        if norm == 0.0:
            tangent = np.array([1.0, 0.0])
        else:
            tangent = tangent / norm
        normal = np.array([-tangent[1], tangent[0]])
        return p + lv * normal

    p0 = offset_point(s, lat)
    p1 = offset_point(s_next, lat_next)
    d = p1 - p0
    yaw = math.atan2(d[1], d[0])
    return p0, yaw


def _check_kinematics(track: Track, dt: float) -> None:
    feats = motion_features(track.poses, dt)
    if np.abs(feats[:, 1]).max() > MAX_ACCEL:
        raise GenerationError(
            f"track {track.track_id}: acceleration {np.abs(feats[:, 1]).max():.2f} "
            f"exceeds {MAX_ACCEL} m/s^2")
    if np.abs(feats[:, 2]).max() > MAX_YAW_RATE:
        raise GenerationError(
            f"track {track.track_id}: yaw rate {np.abs(feats[:, 2]).max():.2f} "
            f"exceeds {MAX_YAW_RATE} rad/s")


def generate_scene(seed: int, spec: SceneSpec) -> Scene:
    """Procedural map + smooth tracks; identical seeds yield identical scenes."""
    rng = rng_mod.stream(seed, rng_mod.DATA)
    names = list(_TEMPLATES)
    mix = np.asarray(spec.template_mix, dtype=np.float64)
    if mix.shape != (3,) or (mix < 0).any() or mix.sum() == 0:
        raise GenerationError("template_mix must be three nonnegative weights")
    template = names[int(rng.choice(3, p=mix / mix.sum()))]
    semantic_map, route_fn = _TEMPLATES[template]()
    n_tracks = int(rng.integers(spec.min_tracks, spec.max_tracks + 1))
    tracks = []
    for i in range(n_tracks):
        route, maneuver, extra = route_fn(rng)
        tracks.append(_sample_track(rng, route, maneuver, extra, spec,
                                    f"agent_{i}"))
    return Scene(semantic_map, tracks, spec.rate_hz,
                 meta={"template": template, "seed": int(seed)})


# -- scene JSON ------------------------------------------------------------------


def save_scene(scene: Scene, path: str | Path) -> None:
    layers = {}
    for name in LAYER_TYPES:
        entries = []
        for geom in scene.semantic_map.layers[name]:
            if isinstance(geom, Polygon):
                entries.append({"ring": [[float(x), float(y)]
                                         for x, y in geom.ring]})
            else:
                entries.append({"centerline": [[float(x), float(y)]
                                               for x, y in geom.points],
                                "width": float(geom.width)})
        layers[name] = entries
    payload = {
        "version": SCENE_VERSION,
        "rate_hz": scene.rate_hz,
        "map": {"layers": layers},
        "tracks": [{"id": t.track_id,
                    "poses": [[float(p.x), float(p.y), float(p.yaw)]
                              for p in t.poses]} for t in scene.tracks],
        "meta": scene.meta,
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _require(payload: dict, key: str, where: str):
    if key not in payload:
        raise DataError(f"scene file: missing field {key!r} in {where}")
    return payload[key]


def load_scene(path: str | Path) -> Scene:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from None
    version = _require(payload, "version", "root")
    if version != SCENE_VERSION:
        raise DataError(f"scene file: unsupported version {version}")
    rate_hz = _require(payload, "rate_hz", "root")
    if not isinstance(rate_hz, (int, float)) or rate_hz <= 0:
        raise DataError("scene file: field 'rate_hz' must be a positive number")
    layers = _require(_require(payload, "map", "root"), "layers", "map")
    semantic_map = SemanticMap()
    for name in LAYER_TYPES:
        for i, entry in enumerate(layers.get(name, [])):
            where = f"map.layers.{name}[{i}]"
            try:
                if "ring" in entry:
                    semantic_map.add(name, Polygon(np.asarray(entry["ring"])))
                elif "centerline" in entry:
                    semantic_map.add(name, Polyline(
                        np.asarray(entry["centerline"]),
                        float(_require(entry, "width", where))))
                else:
                    raise DataError(
                        f"scene file: {where} needs 'ring' or 'centerline'")
            except ContractError as exc:
                raise DataError(f"scene file: {where}: {exc}") from None
    unknown = set(layers) - set(LAYER_TYPES)
    if unknown:
        raise DataError(f"scene file: unknown layer types {sorted(unknown)}")
    tracks = []
    dt = 1.0 / float(rate_hz)
    for j, entry in enumerate(_require(payload, "tracks", "root")):
        track_id = _require(entry, "id", f"tracks[{j}]")
        poses = []
        prev_t = None
        for k, row in enumerate(_require(entry, "poses", f"tracks[{j}]")):
            where = f"tracks[{j}].poses[{k}]"
            if len(row) == 4:
                t, x, y, yaw = row
                if prev_t is not None and abs((t - prev_t) - dt) > 1e-6:
                    raise DataError(
                        f"scene file: {where}: timestamp spacing "
                        f"{t - prev_t:.6f} != 1/rate_hz = {dt:.6f}")
                prev_t = t
            elif len(row) == 3:
                x, y, yaw = row
            else:
                raise DataError(
                    f"scene file: {where} must be [x, y, yaw] or [t, x, y, yaw]")
            try:
                poses.append(Pose(float(x), float(y), float(yaw)))
            except ContractError as exc:
                raise DataError(f"scene file: {where}: {exc}") from None
        tracks.append(Track(str(track_id), poses))
    return Scene(semantic_map, tracks, float(rate_hz), payload.get("meta", {}))


# -- examples --------------------------------------------------------------------


@dataclass
class Example:
    """One (standardized states, past, future, global chunk, local stack)."""

    example_id: str
    states: np.ndarray        # (T_obs, 3) standardized
    past: np.ndarray          # (T_obs, 2) agent frame
    future: np.ndarray        # (T_fut, 2) agent frame
    global_chunk: np.ndarray  # (1, H, W)
    local_stack: np.ndarray   # (T_obs, n_layers, h, w)


def anchor_indices(track: Track, rate_hz: float, n_obs: int, n_future: int,
                   stride_sec: float) -> list[int]:
    stride = max(1, int(round(stride_sec * rate_hz)))
    first = n_obs - 1
    last = len(track) - 1 - n_future
    return list(range(first, last + 1, stride))


def build_example(scene: Scene, track_id: str, anchor: int, cfg: Config,
                  stats: FeatureStats,
                  local_cache: dict | None = None) -> Example:
    """Assemble one training example anchored at ``anchor`` on the track."""
    m = cfg.model
    track = next((t for t in scene.tracks if t.track_id == track_id), None)
    if track is None:
        raise ContractError(f"no track {track_id!r} in scene")
    n_obs, n_fut = m.n_obs, m.n_future
    if anchor < n_obs - 1 or anchor + n_fut > len(track) - 1:
        raise InsufficientHistoryError(
            f"anchor {anchor} lacks {n_obs} past or {n_fut} future poses")
    past_poses = track.poses[anchor - n_obs + 1:anchor + 1]
    future_poses = track.poses[anchor + 1:anchor + 1 + n_fut]
    origin = track.poses[anchor]
    past_xy = poses_to_array(past_poses)[:, :2]
    future_xy = poses_to_array(future_poses)[:, :2]
    states = standardize(motion_features(past_poses, scene.period), stats)
    chunk = global_chunk(scene.semantic_map, origin, cfg.raster)[None]
    if local_cache is None:
        stack = local_chunk_stack(scene.semantic_map, past_poses, cfg.raster, n_obs)
    else:
        slices = []
        for offset, pose in enumerate(past_poses):
            key = (track_id, anchor - n_obs + 1 + offset)
            if key not in local_cache:
                local_cache[key] = local_chunk_stack(
                    scene.semantic_map, [pose], cfg.raster, 1)[0]
            slices.append(local_cache[key])
        stack = np.stack(slices, axis=0)
    return Example(
        example_id=f"{scene.meta.get('scene_id', 'scene')}:{track_id}:{anchor}",
        states=states.astype(np.float32),
        past=transform_to_frame(past_xy, origin).astype(np.float32),
        future=transform_to_frame(future_xy, origin).astype(np.float32),
        global_chunk=chunk.astype(np.float32),
        local_stack=stack.astype(np.float32),
    )


# -- splitting ---------------------------------------------------------------------


@dataclass
class SplitSpec:
    fractions: tuple | None = (0.7, 0.15, 0.15)
    explicit: dict | None = None
    seed: int = 0


def split_dataset(ids: list, spec: SplitSpec) -> dict:
    """Deterministic, disjoint, covering train/val/test id lists."""
    ids = list(ids)
    if spec.explicit is not None:
        parts = {name: list(spec.explicit.get(name, [])) for name in SPLIT_NAMES}
        all_listed = [i for name in SPLIT_NAMES for i in parts[name]]
        if len(set(all_listed)) != len(all_listed):
            raise ContractError("explicit split lists overlap")
        if set(all_listed) != set(ids):
            raise ContractError("explicit split lists must cover all ids")
        return parts
    if spec.fractions is None or len(spec.fractions) != 3 \
            or abs(sum(spec.fractions) - 1.0) > 1e-9:
        raise ContractError("split fractions must be three values summing to 1")
    order = rng_mod.stream(spec.seed, rng_mod.SPLIT).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    n_train = int(math.floor(spec.fractions[0] * n))
    n_val = int(math.floor(spec.fractions[1] * n))
    return {"train": shuffled[:n_train],
            "val": shuffled[n_train:n_train + n_val],
            "test": shuffled[n_train + n_val:]}


# -- cache -------------------------------------------------------------------------


def _example_arrays(ex: Example) -> dict:
    return {"states": ex.states, "past": ex.past, "future": ex.future,
            "global_chunk": ex.global_chunk, "local_stack": ex.local_stack}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_dataset(seed: int, cfg: Config, out_dir: str | Path,
                  n_scenes: int | None = None) -> dict:
    """Generate scenes, build the example cache, return summary counts."""
    out = Path(out_dir)
    scenes_dir = out / "scenes"
    cache_dir = out / "cache"
    scenes_dir.mkdir(parents=True, exist_ok=True)
    cache_dir.mkdir(parents=True, exist_ok=True)
    n_scenes = cfg.data.n_scenes if n_scenes is None else n_scenes
    spec = SceneSpec.from_data_config(cfg.data)

    scenes = []
    for i in range(n_scenes):
        scene = generate_scene(seed * 1_000_003 + i, spec)
        scene.meta["scene_id"] = f"scene_{i:04d}"
        save_scene(scene, scenes_dir / f"scene_{i:04d}.json")
        scenes.append(scene)

    anchors = []  # (scene idx, track id, anchor idx, example id)
    for i, scene in enumerate(scenes):
        for track in scene.tracks:
            for a in anchor_indices(track, scene.rate_hz, cfg.model.n_obs,
                                    cfg.model.n_future,
                                    cfg.data.anchor_stride_sec):
                anchors.append((i, track.track_id, a,
                                f"{scene.meta['scene_id']}:{track.track_id}:{a}"))
    ids = [a[3] for a in anchors]
    by_id = {a[3]: a for a in anchors}
    splits = split_dataset(ids, SplitSpec(cfg.data.split_fractions, seed=seed))

    train_feats = []
    for ex_id in splits["train"]:
        i, track_id, a, _ = by_id[ex_id]
        scene = scenes[i]
        track = next(t for t in scene.tracks if t.track_id == track_id)
        past = track.poses[a - cfg.model.n_obs + 1:a + 1]
        train_feats.append(motion_features(past, scene.period))
    stats = FeatureStats.fit(np.concatenate(train_feats, axis=0))

    counts = {}
    local_caches = [dict() for _ in scenes]
    for name in SPLIT_NAMES:
        split_dir = cache_dir / name
        split_dir.mkdir(exist_ok=True)
        rows = []
        for ex_id in splits[name]:
            i, track_id, a, _ = by_id[ex_id]
            ex = build_example(scenes[i], track_id, a, cfg, stats,
                               local_cache=local_caches[i])
            fname = f"ex_{len(rows):05d}.bin"
            checkpoint.save_arrays(split_dir / fname, _example_arrays(ex))
            rows.append((ex.example_id, fname, _sha256(split_dir / fname)))
        with open(split_dir / "index.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["example_id", "file", "sha256"])
            writer.writerows(rows)
        counts[name] = len(rows)

    meta = {
        "version": CACHE_VERSION,
        "seed": seed,
        "rate_hz": cfg.model.rate_hz,
        "n_obs": cfg.model.n_obs,
        "n_future": cfg.model.n_future,
        "raster": {"global_px": cfg.raster.global_px,
                   "local_px": cfg.raster.local_px},
        "counts": counts,
        "stats": {"mean": stats.mean.tolist(), "std": stats.std.tolist()},
    }
    (cache_dir / "meta.json").write_text(json.dumps(meta, indent=2,
                                                    sort_keys=True) + "\n")
    return {"scenes": n_scenes, **counts}


def load_stats(cache_dir: str | Path) -> FeatureStats:
    meta = json.loads((Path(cache_dir) / "meta.json").read_text())
    return FeatureStats(np.asarray(meta["stats"]["mean"]),
                        np.asarray(meta["stats"]["std"]))


def load_split(cache_dir: str | Path, name: str,
               verify: bool = True) -> list[Example]:
    """Read one split back; index hashes guard against corruption."""
    split_dir = Path(cache_dir) / name
    index = split_dir / "index.csv"
    if not index.exists():
        raise DataError(f"{split_dir}: missing index.csv")
    examples = []
    with open(index, newline="") as fh:
        for row in csv.DictReader(fh):
            path = split_dir / row["file"]
            if not path.exists():
                raise DataError(f"{path}: listed in index but missing")
            if verify and _sha256(path) != row["sha256"]:
                raise DataError(f"{path}: content hash mismatch (corrupt cache)")
            arrays = checkpoint.load_arrays(path)
            examples.append(Example(example_id=row["example_id"], **{
                k: arrays[k] for k in ("states", "past", "future",
                                       "global_chunk", "local_stack")}))
    return examples
