"""Parameterized layers on top of the tensor engine.

Initialization: fan-in-scaled uniform for linear/conv weights,
orthogonal blocks for the recurrent matrix, zeros for biases.  Every
layer registers its parameters under a path-like name so checkpoints
are stable across refactors.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DegenerateBatchError, DimensionError
from .tensor import Tensor


class Module:
    """Minimal parameter container."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def register(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (f"{prefix}{name}", p)
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}/")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Trainable parameters plus persistent buffers (running stats)."""
        out = {name: p.data for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            out[name] = buf
        return out

    def named_buffers(self, prefix: str = ""):
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}/")

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in arrays:
                raise DimensionError(f"checkpoint missing parameter {name!r}")
            if tuple(arrays[name].shape) != tuple(p.data.shape):
                raise DimensionError(
                    f"parameter {name!r}: checkpoint shape {arrays[name].shape} "
                    f"!= model shape {p.data.shape}")
            p.data = arrays[name].astype(p.data.dtype)
        buffers = dict(self.named_buffers())
        for name, buf in buffers.items():
            if name in arrays:
                buf[...] = arrays[name].astype(buf.dtype)


def _uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, dtype):
    # Kaiming-style gain: keeps activation scale through leaky-ReLU
    # stacks, and keeps capsule pre-squash norms near one (the squash
    # is superlinear near zero, so undersized inputs collapse through
    # stacked capsule layers).
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, dtype):
        super().__init__()
        self.w = self.register("w", _uniform_fan_in(rng, (in_features, out_features),
                                                    in_features, dtype))
        self.b = self.register("b", np.zeros(out_features, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int,
                 rng: np.random.Generator, dtype, stride: int = 1, padding: int = 0):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = in_ch * kernel * kernel
        self.w = self.register("w", _uniform_fan_in(
            rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype))
        self.b = self.register("b", np.zeros(out_ch, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class BatchNorm(Module):
    """1-D batch normalization over axis 0.

    Training mode normalizes by batch statistics (biased variance) and
    updates running stats; inference mode uses the running stats.  A
    batch of one has no usable statistics and is rejected.
    """

    def __init__(self, features: int, dtype, eps: float = 1e-8,
                 momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = self.register("gamma", np.ones(features, dtype=dtype))
        self.beta = self.register("beta", np.zeros(features, dtype=dtype))
        self.running_mean = np.zeros(features, dtype=dtype)
        self.running_var = np.ones(features, dtype=dtype)

    def named_buffers(self, prefix: str = ""):
        yield (f"{prefix}running_mean", self.running_mean)
        yield (f"{prefix}running_var", self.running_var)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        if x.data.ndim != 2:
            raise DimensionError("batch norm expects (batch, features)")
        if train:
            if x.shape[0] < 2:
                raise DegenerateBatchError(
                    "batch normalization needs batch >= 2 in training mode")
            mu = x.mean(axis=0)
            centered = x - mu
            var = (centered * centered).mean(axis=0)
            m = self.momentum
            self.running_mean = ((1.0 - m) * self.running_mean
                                 + m * mu.data.astype(self.running_mean.dtype))
            self.running_var = ((1.0 - m) * self.running_var
                                + m * var.data.astype(self.running_var.dtype))
            inv = (var + self.eps) ** -0.5
            return centered * inv * self.gamma + self.beta
        inv = (self.running_var + self.eps) ** -0.5
        return (x - Tensor(self.running_mean)) * Tensor(inv) * self.gamma + self.beta


class LSTMCell(Module):
    """Single-layer recurrent cell; recurrent weights start orthogonal."""

    def __init__(self, input_size: int, hidden_size: int,
                 rng: np.random.Generator, dtype):
        super().__init__()
        self.hidden_size = hidden_size
        self.w_x = self.register("w_x", _uniform_fan_in(
            rng, (input_size, 4 * hidden_size), input_size, dtype))
        blocks = []
        for _ in range(4):
            q, r = np.linalg.qr(rng.standard_normal((hidden_size, hidden_size)))
            blocks.append(q * np.sign(np.diag(r)))
        self.w_h = self.register("w_h", np.concatenate(blocks, axis=1).astype(dtype))
        self.b = self.register("b", np.zeros(4 * hidden_size, dtype=dtype))

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        return T.lstm_cell(x, h, c, self.w_x, self.w_h, self.b)


def count_parameters(module: Module) -> int:
    """Total trainable scalar count."""
    return sum(p.data.size for p in module.parameters())
