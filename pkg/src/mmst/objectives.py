"""Training loss (KL + minimum-over-samples reconstruction) and the
displacement metrics used for evaluation.

The total objective is alpha * MoN + beta * KL: the reconstruction
term takes, per example, the distance of the closest generated sample
to the ground truth (summed over the batch), and the KL term pulls the
recognition posterior toward the standard-normal prior.

Metrics come in two modes.  The primary mode is the community
definition: ADE is the per-timestep mean Euclidean displacement, FDE
the endpoint displacement, each minimized over the first k samples and
averaged over examples.  The literal mode keeps the root-of-summed-
squares form ((1/n) * sqrt(sum_i min_k ||.||^2)) for fidelity.
"""

from __future__ import annotations

import numpy as np

from .config import LossConfig
from .cvae import GaussianParams
from .errors import ContractError
from .tensor import Tensor

DISTANCE_KINDS = ("l1", "l2", "blend")


def kl_divergence(params: GaussianParams) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)), summed over latent dims and batch."""
    mu, log_var = params.mu, params.log_var
    return -0.5 * (1.0 + log_var - mu * mu - log_var.exp()).sum()


def distance(truth: Tensor, pred: Tensor, kind: str = "l2",
             blend_lambda: float = 0.5) -> Tensor:
    """Distance between one trajectory (T, 2) and one prediction (T, 2)."""
    if truth.shape != pred.shape:
        raise ContractError(
            f"trajectory lengths differ: {truth.shape} vs {pred.shape}")
    diff = pred - truth
    if kind == "l2":
        return (diff * diff).sum()
    if kind == "l1":
        return diff.abs().sum()
    if kind == "blend":
        return blend_lambda * ((diff * diff).sum() + diff.abs().sum())
    raise ContractError(f"unknown distance kind {kind!r}")


def _sample_distances(truth: Tensor, samples: Tensor, kind: str,
                      blend_lambda: float) -> Tensor:
    """(B, T, 2) truth vs (B, k, T, 2) samples to per-sample distances (B, k)."""
    b, k = samples.shape[0], samples.shape[1]
    diff = samples - truth.reshape(b, 1, *truth.shape[1:])
    sq = (diff * diff).sum(axis=(2, 3))
    if kind == "l2":
        return sq
    ab = diff.abs().sum(axis=(2, 3))
    if kind == "l1":
        return ab
    if kind == "blend":
        return blend_lambda * (sq + ab)
    raise ContractError(f"unknown distance kind {kind!r}")


def mon_loss(truth: Tensor, samples: Tensor, config: LossConfig) -> Tensor:
    """Minimum-over-samples reconstruction, summed over the batch.

    Gradient reaches only the closest sample per example; ties go to
    the lowest sample index.
    """
    if samples.data.ndim != 4 or samples.shape[1] < 1:
        raise ContractError("samples must be (B, k>=1, T, 2)")
    if truth.data.ndim != 3 or truth.shape[0] != samples.shape[0] \
            or truth.shape[1:] != samples.shape[2:]:
        raise ContractError(
            f"truth {truth.shape} incompatible with samples {samples.shape}")
    d = _sample_distances(truth, samples, config.distance, config.blend_lambda)
    return d.amin(axis=1).sum()


def total_loss(truth: Tensor, samples: Tensor, params: GaussianParams,
               config: LossConfig) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (total, mon term, kl term) as graph tensors."""
    mon = mon_loss(truth, samples, config)
    kl = kl_divergence(params)
    return config.alpha * mon + config.beta * kl, mon, kl


# -- evaluation metrics (numpy) ----------------------------------------------


def _check_metric_inputs(truth: np.ndarray, samples: np.ndarray, k: int):
    truth = np.asarray(truth, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 4 or truth.ndim != 3:
        raise ContractError("expected samples (N, S, T, 2) and truth (N, T, 2)")
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if samples.shape[1] < k:
        raise ContractError(
            f"only {samples.shape[1]} stored samples per example, need k={k}")
    return truth, samples


def min_ade(truth: np.ndarray, samples: np.ndarray, k: int,
            mode: str = "primary") -> float:
    """Minimum average displacement over the first k samples.

    ``truth`` is (N, T, 2); ``samples`` is (N, S, T, 2) with S >= k.
    """
    truth, samples = _check_metric_inputs(truth, samples, k)
    err = np.linalg.norm(samples[:, :k] - truth[:, None], axis=-1)  # (N, k, T)
    if mode == "primary":
        return float(err.mean(axis=-1).min(axis=1).mean())
    if mode == "literal":
        sq = (err ** 2).sum(axis=-1).min(axis=1)  # per-example min ||Y - Yhat||^2
        return float(np.sqrt(sq.sum()) / len(truth))
    raise ContractError(f"unknown metric mode {mode!r}")


def min_fde(truth: np.ndarray, samples: np.ndarray, k: int,
            mode: str = "primary") -> float:
    """Minimum final displacement over the first k samples."""
    truth, samples = _check_metric_inputs(truth, samples, k)
    err = np.linalg.norm(samples[:, :k, -1] - truth[:, None, -1], axis=-1)  # (N, k)
    if mode == "primary":
        return float(err.min(axis=1).mean())
    if mode == "literal":
        sq = (err ** 2).min(axis=1)
        return float(np.sqrt(sq.sum()) / len(truth))
    raise ContractError(f"unknown metric mode {mode!r}")
