"""The assembled predictor: capsule encoders + CVAE over one batch.

A batch carries numpy arrays; the model wraps them into graph tensors,
encodes the condition (past motion + global map) and the agent state,
then either scores ground truth through the recognition posterior
(training) or decodes prior samples (inference).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import checkpoint, rng as rng_mod
from .capsnet import GlobalEncoder, LocalEncoder
from .config import Config
from .cvae import (FlatEncoder, GaussianParams, Generator, Recognition,
                   reparameterize, sample_latents)
from .errors import ContractError
from .geometry import FeatureStats
from .nn import Module, count_parameters
from .tensor import Tensor, concat, no_grad, repeat_rows

STATS_MEAN_KEY = "feature_stats/mean"
STATS_STD_KEY = "feature_stats/std"


@dataclass
class Batch:
    """Model-ready arrays for a set of examples."""

    states: np.ndarray        # (B, T_obs, 3) standardized motion features
    past: np.ndarray          # (B, T_obs, 2) agent-frame positions
    future: np.ndarray        # (B, T_fut, 2) agent-frame positions
    global_chunk: np.ndarray  # (B, 1, H, W)
    local_stack: np.ndarray   # (B, T_obs, n_layers, h, w)
    ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.states)


class MMST(Module):
    """Multi-modal stochastic trajectory model."""

    def __init__(self, cfg: Config, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        m = cfg.model
        self._dtype = np.float32 if m.dtype == "float32" else np.float64
        init = rng_mod.stream(seed, rng_mod.INIT)
        self.local_enc = self.add_child("local_enc", LocalEncoder(
            m, cfg.raster.local_px, init, self._dtype))
        self.global_enc = self.add_child("global_enc", GlobalEncoder(
            m, cfg.raster.global_px, init, self._dtype))
        self.past_enc = self.add_child("past_enc", FlatEncoder(
            m.n_obs, m.past_embed, m.leaky_slope, init, self._dtype,
            coord_scale=m.coord_scale))
        self.future_enc = self.add_child("future_enc", FlatEncoder(
            m.n_future, m.future_embed, m.leaky_slope, init, self._dtype,
            coord_scale=m.coord_scale))
        self.recognition = self.add_child("recognition", Recognition(
            m, init, self._dtype))
        self.generator = self.add_child("generator", Generator(
            m, init, self._dtype))
        self.feature_stats = FeatureStats(np.zeros(3), np.ones(3))

    # -- forward pieces --------------------------------------------------------

    def _as_tensor(self, arr: np.ndarray) -> Tensor:
        return Tensor(np.asarray(arr, dtype=self._dtype))

    def encode_condition(self, batch: Batch) -> tuple[Tensor, Tensor]:
        """Returns (condition vector c, agent state vector)."""
        p_hat = self.past_enc(self._as_tensor(batch.past))
        m_hat = self.global_enc(self._as_tensor(batch.global_chunk))
        c = concat([p_hat, m_hat], axis=1)
        s_hat = self.local_enc.encode_state(self._as_tensor(batch.local_stack),
                                            self._as_tensor(batch.states))
        return c, s_hat

    def posterior(self, batch: Batch, condition: Tensor,
                  train: bool = True) -> GaussianParams:
        g_hat = self.future_enc(self._as_tensor(batch.future))
        return self.recognition(g_hat, condition, train=train)

    def decode_posterior(self, params: GaussianParams, condition: Tensor,
                         state: Tensor, n: int,
                         rng: np.random.Generator) -> Tensor:
        """n reparameterized decodes per example, shape (B, n, T, 2)."""
        if n < 1:
            raise ContractError(f"sample count must be >= 1, got {n}")
        b, latent = params.mu.shape
        eps = Tensor(rng.standard_normal((b, n, latent)).astype(self._dtype))
        z = params.mu.reshape(b, 1, latent) + params.sigma.reshape(b, 1, latent) * eps
        flat = self.generator(z.reshape(b * n, latent),
                              repeat_rows(condition, n), repeat_rows(state, n))
        t = self.cfg.model.n_future
        return flat.reshape(b, n, t, 2)

    def sample_k(self, k: int, condition: Tensor, state: Tensor,
                 rng: np.random.Generator) -> Tensor:
        """k prior-sampled trajectories per example, shape (B, k, T, 2)."""
        b = condition.shape[0]
        m = self.cfg.model
        zs = [sample_latents(k, m.latent_dim, rng, self._dtype) for _ in range(b)]
        z = concat(zs, axis=0)  # (B * k, latent), per-example blocks
        flat = self.generator(z, repeat_rows(condition, k), repeat_rows(state, k))
        return flat.reshape(b, k, m.n_future, 2)

    def predict(self, batch: Batch, k: int, seed: int,
                example_offset: int = 0) -> np.ndarray:
        """Inference-mode sampling; draws are keyed per example index so
        results do not depend on how examples are batched."""
        m = self.cfg.model
        with no_grad():
            condition, state = self.encode_condition(batch)
            outs = []
            for i in range(len(batch)):
                gen = rng_mod.stream(seed, rng_mod.EVAL, example_offset + i)
                z = sample_latents(k, m.latent_dim, gen, self._dtype)
                flat = self.generator(z, repeat_rows(condition[i:i + 1], k),
                                      repeat_rows(state[i:i + 1], k))
                outs.append(flat.data.reshape(k, m.n_future, 2))
        return np.stack(outs, axis=0)

    # -- persistence -------------------------------------------------------------

    def save(self, path) -> None:
        arrays = self.state_arrays()
        arrays[STATS_MEAN_KEY] = self.feature_stats.mean
        arrays[STATS_STD_KEY] = self.feature_stats.std
        checkpoint.save_arrays(path, arrays)

    def load(self, path) -> None:
        arrays = checkpoint.load_arrays(path)
        mean = arrays.pop(STATS_MEAN_KEY, None)
        std = arrays.pop(STATS_STD_KEY, None)
        self.load_state(arrays)
        if mean is not None and std is not None:
            self.feature_stats = FeatureStats(np.asarray(mean, dtype=np.float64),
                                              np.asarray(std, dtype=np.float64))

    def n_parameters(self) -> int:
        return count_parameters(self)
