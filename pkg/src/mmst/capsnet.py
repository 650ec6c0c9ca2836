"""Capsule-based scene encoders.

Two feature extractors: a local encoder turning per-timestep layer
stacks into one vector per timestep (then fused with motion states
through a recurrent pass), and an independent global encoder for the
merged map chunk.  Capsule layers are linear projections whose outputs
are reshaped into vectors and squashed; the squash keeps every capsule
magnitude below one.  The convolutional trunk and the lower capsule
layer are shared across all layer types; each type owns its higher
capsule head.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ContractError, DimensionError
from .nn import Conv2d, Linear, LSTMCell, Module
from .tensor import Tensor, concat, leaky_relu, squash


def _np_dtype(cfg: ModelConfig):
    return np.float32 if cfg.dtype == "float32" else np.float64


class ConvBase(Module):
    """Strided conv stack reducing a raster to a flat feature vector."""

    def __init__(self, cfg: ModelConfig, side_px: int, rng, dtype):
        super().__init__()
        self.slope = cfg.leaky_slope
        self.convs = []
        side = side_px
        ch = 1
        for i, out_ch in enumerate(cfg.conv_channels):
            conv = Conv2d(ch, out_ch, cfg.conv_kernel, rng, dtype,
                          stride=cfg.conv_stride, padding=cfg.conv_padding)
            self.add_child(f"conv{i}", conv)
            self.convs.append(conv)
            side = (side + 2 * cfg.conv_padding - cfg.conv_kernel) // cfg.conv_stride + 1
            ch = out_ch
        self.out_features = ch * side * side

    def __call__(self, x: Tensor) -> Tensor:
        """(N, 1, H, W) rasters to (N, out_features)."""
        for conv in self.convs:
            x = leaky_relu(conv(x), self.slope)
        return x.reshape(x.shape[0], self.out_features)


class CapsuleLayer(Module):
    """Linear map into ``caps`` vectors of ``dim`` entries, then squash."""

    def __init__(self, in_features: int, caps: int, dim: int, rng, dtype):
        super().__init__()
        self.caps = caps
        self.dim = dim
        self.fc = self.add_child("fc", Linear(in_features, caps * dim, rng, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        """(N, in_features) to (N, caps * dim), squashed per capsule."""
        n = x.shape[0]
        v = self.fc(x).reshape(n, self.caps, self.dim)
        return squash(v, axis=-1).reshape(n, self.caps * self.dim)


class LocalEncoder(Module):
    """Encodes layer stacks and motion states into the agent state vector."""

    def __init__(self, cfg: ModelConfig, local_px: int, rng, dtype=None):
        super().__init__()
        self.cfg = cfg
        dtype = dtype or _np_dtype(cfg)
        self.base = self.add_child("base", ConvBase(cfg, local_px, rng, dtype))
        self.lower = self.add_child("lower", CapsuleLayer(
            self.base.out_features, cfg.lower_caps, cfg.lower_caps_dim, rng, dtype))
        lower_out = cfg.lower_caps * cfg.lower_caps_dim
        self.higher = []
        for i in range(cfg.n_layer_types):
            head = CapsuleLayer(lower_out, cfg.higher_caps, cfg.higher_caps_dim,
                                rng, dtype)
            self.add_child(f"higher{i}", head)
            self.higher.append(head)
        higher_out = cfg.higher_caps * cfg.higher_caps_dim
        self.final = self.add_child("final", CapsuleLayer(
            cfg.n_layer_types * higher_out, 1, cfg.final_caps_dim, rng, dtype))
        self.state_fc = self.add_child("state_fc", Linear(
            3, cfg.state_embed, rng, dtype))
        self.lstm = self.add_child("lstm", LSTMCell(
            cfg.final_caps_dim + cfg.state_embed, cfg.lstm_hidden, rng, dtype))
        self._dtype = dtype

    # -- granular operations -------------------------------------------------

    def encode_semantic_layer(self, raster: Tensor, layer_index: int) -> Tensor:
        """One (1, H, W) or (N, 1, H, W) raster through trunk + type head."""
        if not 0 <= layer_index < self.cfg.n_layer_types:
            raise ContractError(f"unknown layer type index {layer_index}")
        x = raster if raster.data.ndim == 4 else raster.reshape(1, *raster.shape)
        return self.higher[layer_index](self.lower(self.base(x)))

    def encode_local_map(self, stack: Tensor) -> Tensor:
        """(n_layers, H, W) single-timestep stack to the final capsule vector."""
        if stack.data.ndim != 3 or stack.shape[0] != self.cfg.n_layer_types:
            raise ContractError(
                f"expected ({self.cfg.n_layer_types}, H, W) stack, got {stack.shape}")
        per_type = [self.encode_semantic_layer(stack[i:i + 1], i)
                    for i in range(self.cfg.n_layer_types)]
        return self.final(concat(per_type, axis=1))

    def encode_state(self, stacks: Tensor, states: Tensor) -> Tensor:
        """(B, T, n_layers, H, W) stacks + (B, T, 3) states to (B, hidden).

        The per-timestep map encodings are concatenated with embedded
        motion states and consumed by the recurrent cell; the final
        hidden state is the agent state vector.
        """
        cfg = self.cfg
        if stacks.data.ndim != 5 or states.data.ndim != 3:
            raise DimensionError("encode_state expects (B,T,L,H,W) and (B,T,3)")
        b, t = stacks.shape[0], stacks.shape[1]
        if states.shape[0] != b or states.shape[1] != t:
            raise ContractError(
                f"timestep mismatch: stacks {stacks.shape[:2]} vs states "
                f"{states.shape[:2]}")
        if t != cfg.n_obs:
            raise ContractError(f"expected {cfg.n_obs} timesteps, got {t}")
        caps = self._encode_stacks(stacks)  # (B, T, final_caps_dim)
        emb = leaky_relu(
            self.state_fc(states.reshape(b * t, 3)), cfg.leaky_slope)
        fused = concat([caps.reshape(b * t, cfg.final_caps_dim), emb], axis=1)
        fused = fused.reshape(b, t, cfg.final_caps_dim + cfg.state_embed)
        h = T.zeros((b, cfg.lstm_hidden), dtype=self._dtype)
        c = T.zeros((b, cfg.lstm_hidden), dtype=self._dtype)
        for step in range(t):
            h, c = self.lstm(fused[:, step, :], h, c)
        return h

    # -- batched trunk ---------------------------------------------------------

    def _encode_stacks(self, stacks: Tensor) -> Tensor:
        """Shared trunk over all (batch, timestep, layer) rasters at once."""
        cfg = self.cfg
        b, t, n_layers, hh, ww = stacks.shape
        flat = stacks.reshape(b * t * n_layers, 1, hh, ww)
        low = self.lower(self.base(flat))
        low = low.reshape(b * t, n_layers, cfg.lower_caps * cfg.lower_caps_dim)
        per_type = [self.higher[i](low[:, i, :]) for i in range(n_layers)]
        final = self.final(concat(per_type, axis=1))
        return final.reshape(b, t, cfg.final_caps_dim)


class GlobalEncoder(Module):
    """Independent capsule stack for the merged global chunk."""

    def __init__(self, cfg: ModelConfig, global_px: int, rng, dtype=None):
        super().__init__()
        self.cfg = cfg
        dtype = dtype or _np_dtype(cfg)
        self.base = self.add_child("base", ConvBase(cfg, global_px, rng, dtype))
        self.lower = self.add_child("lower", CapsuleLayer(
            self.base.out_features, cfg.lower_caps, cfg.lower_caps_dim, rng, dtype))
        self.higher = self.add_child("higher", CapsuleLayer(
            cfg.lower_caps * cfg.lower_caps_dim, cfg.global_caps,
            cfg.global_caps_dim, rng, dtype))

    @property
    def out_features(self) -> int:
        return self.cfg.global_caps * self.cfg.global_caps_dim

    def __call__(self, chunk: Tensor) -> Tensor:
        """(B, 1, H, W) or (1, H, W) chunk to (B, caps * dim)."""
        x = chunk if chunk.data.ndim == 4 else chunk.reshape(1, *chunk.shape)
        return self.higher(self.lower(self.base(x)))
