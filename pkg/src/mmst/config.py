"""Configuration dataclasses and strict JSON loading.

Every run resolves to a single ``Config`` tree; unknown keys are
rejected by name so typos fail fast (CLI exit code 2).  The defaults
are the desk-scale profile: small rasters and few epochs so a full
train/eval cycle stays in the minutes range on one CPU core.  The
``full_scale`` profile restores the published training constants
(360 epochs, 0.5 m/px and 0.25 m/px rasters).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .raster import RasterConfig


@dataclass(frozen=True)
class ModelConfig:
    rate_hz: float = 2.0
    history_sec: float = 2.0
    horizon_sec: float = 6.0
    n_layer_types: int = 4
    conv_channels: tuple[int, ...] = (16, 32, 64)
    conv_kernel: int = 3
    conv_stride: int = 2
    conv_padding: int = 1
    lower_caps: int = 8
    lower_caps_dim: int = 8
    higher_caps: int = 4
    higher_caps_dim: int = 16
    final_caps_dim: int = 32
    global_caps: int = 8
    global_caps_dim: int = 16
    state_embed: int = 32
    lstm_hidden: int = 64
    past_embed: int = 64
    future_embed: int = 64
    recog_hidden: int = 128
    latent_dim: int = 32
    gen_hidden: tuple[int, ...] = (256, 256, 128)
    logvar_clip: float = 6.0
    leaky_slope: float = 1e-2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    # Trajectories cross the model boundary in meters but are scaled to
    # unit range inside (conditioning; gradients stay comparable across
    # layers).
    coord_scale: float = 20.0
    dtype: str = "float32"

    @property
    def n_obs(self) -> int:
        """Observed points including the anchor timestep."""
        return int(round(self.history_sec * self.rate_hz)) + 1

    @property
    def n_future(self) -> int:
        return int(round(self.horizon_sec * self.rate_hz))


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    beta: float = 1e-2
    distance: str = "l2"  # l1 | l2 | blend
    blend_lambda: float = 0.5
    n_train: int = 32

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("loss weights must be nonnegative")
        if not 0.0 <= self.blend_lambda <= 1.0:
            raise ConfigError("blend_lambda must lie in [0, 1]")
        if self.n_train < 1:
            raise ConfigError("n_train must be >= 1")
        if self.distance not in ("l1", "l2", "blend"):
            raise ConfigError(f"unknown distance kind {self.distance!r}")


@dataclass(frozen=True)
class DataConfig:
    n_scenes: int = 100
    anchor_stride_sec: float = 1.0
    track_sec: float = 20.0
    speed_range: tuple[float, float] = (4.0, 9.0)
    lateral_noise_m: float = 0.25
    speed_noise: float = 0.08
    template_mix: tuple[float, float, float] = (0.4, 0.2, 0.4)  # straight, curve, T
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    sps_c: float = 0.5
    sps_gamma_bound: float = 1.0
    val_k: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2 (batch normalization)")
        if self.sps_c <= 0 or self.sps_gamma_bound <= 0:
            raise ConfigError("sps_c and sps_gamma_bound must be positive")


@dataclass(frozen=True)
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    raster: RasterConfig = field(default_factory=RasterConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


FULL_SCALE_OVERRIDES = {
    "raster": {"global_px": 210, "local_px": 80},
    "train": {"epochs": 360},
}


def _build(cls, payload: dict, path: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"config section {path or 'root'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in payload.items():
        if key not in fields:
            raise ConfigError(f"unknown config field {path + key!r}")
        ftype = fields[key].type
        if dataclasses.is_dataclass(_section_type(ftype)):
            kwargs[key] = _build(_section_type(ftype), value, f"{path}{key}.")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


_SECTIONS = {"model": ModelConfig, "raster": RasterConfig, "loss": LossConfig,
             "data": DataConfig, "train": TrainConfig}


def _section_type(annotation):
    if isinstance(annotation, str):
        return {"ModelConfig": ModelConfig, "RasterConfig": RasterConfig,
                "LossConfig": LossConfig, "DataConfig": DataConfig,
                "TrainConfig": TrainConfig}.get(annotation)
    return annotation


def from_dict(payload: dict) -> Config:
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    payload = dict(payload)
    profile = payload.pop("profile", None)
    if profile not in (None, "desk", "full_scale"):
        raise ConfigError(f"unknown config field 'profile' value {profile!r}")
    if profile == "full_scale":
        merged = {k: dict(v) for k, v in FULL_SCALE_OVERRIDES.items()}
        for key, value in payload.items():
            if isinstance(value, dict):
                merged.setdefault(key, {}).update(value)
            else:
                merged[key] = value
        payload = merged
    return _build(Config, payload, "")


def load(path: str | Path) -> Config:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return from_dict(payload)


def to_dict(cfg: Config) -> dict:
    return dataclasses.asdict(cfg)


def dump(cfg: Config, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")
