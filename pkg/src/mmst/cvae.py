"""Recognition network, standard-normal prior, and the motion generator.

Training draws latents from the recognition posterior (reparameterized
so gradients reach the distribution parameters); inference bypasses
recognition entirely and samples the prior.  The generator decodes one
trajectory per latent; the agent state vector enters as an extra input
to its second layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import ContractError, DimensionError
from .nn import BatchNorm, Linear, Module
from .tensor import Tensor, concat, gaussian_sample, leaky_relu


@dataclass
class GaussianParams:
    """Diagonal-Gaussian latent parameters; the head emits log variance."""

    mu: Tensor
    log_var: Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_var.shape:
            raise ContractError("mu and log_var must share a shape")

    @property
    def sigma(self) -> Tensor:
        return (self.log_var * 0.5).exp()

    @classmethod
    def from_arrays(cls, mu, sigma) -> "GaussianParams":
        sigma = np.asarray(sigma, dtype=np.float64)
        if (sigma <= 0).any():
            raise ContractError("sigma must be strictly positive")
        return cls(Tensor(np.asarray(mu, dtype=np.float64)),
                   Tensor(2.0 * np.log(sigma)))


class FlatEncoder(Module):
    """Flatten a trajectory along time, one linear layer + leaky ReLU.

    Inputs arrive in meters and are divided by ``coord_scale`` so the
    layer operates on unit-range values.
    """

    def __init__(self, n_points: int, out_features: int, slope: float, rng, dtype,
                 coord_scale: float = 1.0):
        super().__init__()
        self.n_points = n_points
        self.slope = slope
        self.coord_scale = coord_scale
        self.fc = self.add_child("fc", Linear(2 * n_points, out_features, rng, dtype))

    def __call__(self, traj: Tensor) -> Tensor:
        """(B, n_points, 2) to (B, out_features)."""
        if traj.data.ndim != 3 or traj.shape[1] != self.n_points or traj.shape[2] != 2:
            raise ContractError(
                f"expected (B, {self.n_points}, 2) trajectory, got {traj.shape}")
        flat = traj.reshape(traj.shape[0], 2 * self.n_points)
        return leaky_relu(self.fc(flat * (1.0 / self.coord_scale)), self.slope)


class RecognitionHead(Module):
    """Two linear layers with leaky ReLU and batch normalization between."""

    def __init__(self, in_features: int, hidden: int, out_features: int,
                 slope: float, bn_eps: float, bn_momentum: float, rng, dtype):
        super().__init__()
        self.slope = slope
        self.fc1 = self.add_child("fc1", Linear(in_features, hidden, rng, dtype))
        self.bn = self.add_child("bn", BatchNorm(hidden, dtype, bn_eps, bn_momentum))
        self.fc2 = self.add_child("fc2", Linear(hidden, out_features, rng, dtype))

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return self.fc2(self.bn(leaky_relu(self.fc1(x), self.slope), train))


class Recognition(Module):
    """Two-headed posterior network over (future encoding, condition)."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        self.cfg = cfg
        in_features = cfg.future_embed + cfg.past_embed + (
            cfg.global_caps * cfg.global_caps_dim)
        self.mu_head = self.add_child("mu", RecognitionHead(
            in_features, cfg.recog_hidden, cfg.latent_dim, cfg.leaky_slope,
            cfg.bn_eps, cfg.bn_momentum, rng, dtype))
        self.var_head = self.add_child("log_var", RecognitionHead(
            in_features, cfg.recog_hidden, cfg.latent_dim, cfg.leaky_slope,
            cfg.bn_eps, cfg.bn_momentum, rng, dtype))

    def __call__(self, future_enc: Tensor, condition: Tensor,
                 train: bool = True) -> GaussianParams:
        x = concat([future_enc, condition], axis=1)
        mu = self.mu_head(x, train)
        log_var = self.var_head(x, train).clip(-self.cfg.logvar_clip,
                                               self.cfg.logvar_clip)
        return GaussianParams(mu, log_var)


def reparameterize(params: GaussianParams, noise: Tensor) -> Tensor:
    """z = mu + sigma * eps, differentiable w.r.t. the parameters."""
    if noise.shape != params.mu.shape:
        raise ContractError(
            f"noise shape {noise.shape} != parameter shape {params.mu.shape}")
    return params.mu + params.sigma * noise


class Generator(Module):
    """Four-layer MLP; the agent state joins the second layer's input."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        self.cfg = cfg
        cond = cfg.past_embed + cfg.global_caps * cfg.global_caps_dim
        h1, h2, h3 = cfg.gen_hidden
        self.fc1 = self.add_child("fc1", Linear(cfg.latent_dim + cond, h1, rng, dtype))
        self.fc2 = self.add_child("fc2", Linear(h1 + cfg.lstm_hidden, h2, rng, dtype))
        self.fc3 = self.add_child("fc3", Linear(h2, h3, rng, dtype))
        self.fc4 = self.add_child("fc4", Linear(h3, 2 * cfg.n_future, rng, dtype))

    def __call__(self, z: Tensor, condition: Tensor, state: Tensor) -> Tensor:
        """Decode latents to (N, n_future, 2) agent-frame trajectories."""
        cfg = self.cfg
        if z.data.ndim != 2 or z.shape[1] != cfg.latent_dim:
            raise ContractError(f"expected (N, {cfg.latent_dim}) latents, got {z.shape}")
        if z.shape[0] != condition.shape[0] or z.shape[0] != state.shape[0]:
            raise ContractError("latents, condition and state batch sizes differ")
        slope = cfg.leaky_slope
        h = leaky_relu(self.fc1(concat([z, condition], axis=1)), slope)
        h = leaky_relu(self.fc2(concat([h, state], axis=1)), slope)
        h = leaky_relu(self.fc3(h), slope)
        out = self.fc4(h) * cfg.coord_scale
        return out.reshape(z.shape[0], cfg.n_future, 2)


def sample_latents(k: int, latent_dim: int, rng: np.random.Generator,
                   dtype=np.float32) -> Tensor:
    """k prior draws; a longer request with the same stream extends a
    shorter one (prefix property), which keeps k-sweeps consistent."""
    if k < 1:
        raise ContractError(f"sample count must be >= 1, got {k}")
    return gaussian_sample((k, latent_dim), rng, dtype=dtype)
