"""Optimization loop and experiment drivers.

The optimizer is the bounded stochastic Polyak rule: step size
gamma = min(loss / (c * ||g||^2), gamma_bound) with the squared
gradient norm summed over all parameters.  Training draws the MoN
latents from the recognition posterior; validation after each epoch
scores prior samples, and the best-validation checkpoint is kept.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import objectives, rng as rng_mod
from .config import Config, LossConfig
from .data import Example, load_split, load_stats
from .errors import ContractError, NumericError
from .geometry import FeatureStats
from .model import MMST, Batch
from .tensor import Tensor, grads_of

MON_N_GRID = (16, 32, 64, 128, 256)
DISTANCE_GRID = ("l1", "l2", "blend")
K_SWEEP_GRID = tuple(2 ** e for e in range(4, 14))
TABLE_K_GRID = (1, 5, 10, 20, 50, 100, 200)

# Published full-scale reference results (nuScenes-trained; not
# comparable to desk-scale synthetic numbers).  Keys: training sample
# count n -> {k: (minADE_k, minFDE_k)}.
REFERENCE_MON = {
    16: {10: (1.77, 3.81), 25: (1.32, 2.51), 50: (1.09, 1.87), 100: (0.92, 1.38)},
    32: {10: (1.82, 3.92), 25: (1.25, 2.42), 50: (1.05, 1.82), 100: (0.89, 1.32)},
    64: {10: (1.99, 4.37), 25: (1.43, 2.79), 50: (1.14, 2.00), 100: (0.95, 1.46)},
    128: {10: (2.07, 4.53), 25: (1.45, 2.84), 50: (1.17, 2.02), 100: (0.94, 1.44)},
    256: {10: (2.19, 4.80), 25: (1.52, 3.00), 50: (1.19, 2.11), 100: (0.97, 1.50)},
}
REFERENCE_DISTANCE = {
    "l1": {10: (1.94, 4.00), 25: (1.45, 2.72), 50: (1.20, 2.05), 100: (1.00, 1.51)},
    "l2": {10: (1.82, 3.92), 25: (1.25, 2.42), 50: (1.05, 1.82), 100: (0.89, 1.32)},
    "blend": {10: (1.79, 3.83), 25: (1.30, 2.49), 50: (1.07, 1.81),
              100: (0.90, 1.36)},
}
REFERENCE_TABLE_K = {
    1: (6.34, 15.22), 5: (2.44, 5.51), 10: (1.82, 3.92), 20: (1.39, 2.76),
    50: (1.05, 1.82), 100: (0.89, 1.32), 200: (0.78, 0.98),
}
REFERENCE_PARAM_COUNT = 7_400_000
REFERENCE_LABEL = "full-scale reference (nuScenes-trained, not comparable)"
DESK_LABEL = "desk-scale synthetic"


def sps_step(params: list[Tensor], batch_loss: float, gradients: list[np.ndarray],
             c: float, gamma_bound: float) -> float:
    """Apply one bounded Polyak step in place; returns the step size used."""
    if batch_loss < 0:
        raise ContractError("sps_step expects a nonnegative loss")
    sq_norm = 0.0
    for g in gradients:
        sq_norm += float((g.astype(np.float64) ** 2).sum())
    if sq_norm == 0.0:
        return 0.0
    gamma = min(batch_loss / (c * sq_norm), gamma_bound)
    for p, g in zip(params, gradients):
        p.data = p.data - p.data.dtype.type(gamma) * g
    return gamma


class SPSOptimizer:
    def __init__(self, params: list[Tensor], c: float = 0.5,
                 gamma_bound: float = 1.0):
        self.params = list(params)
        self.c = c
        self.gamma_bound = gamma_bound

    def step(self, batch_loss: float) -> float:
        grads = grads_of(self.params)
        return sps_step(self.params, batch_loss, grads, self.c, self.gamma_bound)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class StepResult:
    total: float
    mon: float
    kl: float
    gamma: float


def train_step(model: MMST, batch: Batch, loss_cfg: LossConfig,
               optimizer: SPSOptimizer, rng: np.random.Generator) -> StepResult:
    """One optimization step: encode, sample posterior latents, decode
    the MoN set, score, backpropagate, apply the Polyak update."""
    optimizer.zero_grad()
    condition, state = model.encode_condition(batch)
    params = model.posterior(batch, condition, train=True)
    samples = model.decode_posterior(params, condition, state, loss_cfg.n_train,
                                     rng)
    truth = Tensor(np.asarray(batch.future, dtype=samples.data.dtype))
    total, mon, kl = objectives.total_loss(truth, samples, params, loss_cfg)
    if not np.isfinite(total.data):
        raise NumericError(
            f"non-finite loss on batch {batch.ids!r}: "
            f"mon={float(mon.data)} kl={float(kl.data)}")
    total.backward()
    gamma = optimizer.step(float(total.data))
    return StepResult(float(total.data), float(mon.data), float(kl.data), gamma)


def assemble_batch(examples: list[Example]) -> Batch:
    return Batch(
        states=np.stack([e.states for e in examples]),
        past=np.stack([e.past for e in examples]),
        future=np.stack([e.future for e in examples]),
        global_chunk=np.stack([e.global_chunk for e in examples]),
        local_stack=np.stack([e.local_stack for e in examples]),
        ids=[e.example_id for e in examples],
    )


def evaluate_samples(model: MMST, examples: list[Example], k: int, seed: int,
                     batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Prior-sampled predictions (N, k, T, 2) and truths (N, T, 2)."""
    preds, truths = [], []
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo:lo + batch_size]
        batch = assemble_batch(chunk)
        preds.append(model.predict(batch, k, seed, example_offset=lo))
        truths.append(batch.future.astype(np.float64))
    return np.concatenate(preds), np.concatenate(truths)


def validation_min_ade(model: MMST, examples: list[Example], k: int,
                       seed: int) -> float:
    preds, truths = evaluate_samples(model, examples, k, seed)
    return objectives.min_ade(truths, preds, k)


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)

    def add(self, **row):
        self.epochs.append(row)

    def column(self, name):
        return [row[name] for row in self.epochs]

    def write_csv(self, path):
        cols = ["epoch", "train_loss", "train_mon", "train_kl",
                "val_min_ade", "wall_clock_s"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in self.epochs:
                fh.write(",".join(_fmt(row[c]) for c in cols) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".9g")
    return str(v)


def fit(cfg: Config, data_dir: str | Path, out_dir: str | Path,
        log=print) -> tuple[Path, TrainHistory]:
    """Full training run; writes checkpoints and history into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = Path(data_dir) / "cache"
    train_examples = load_split(cache, "train")
    val_examples = load_split(cache, "val")
    if not train_examples or not val_examples:
        raise ContractError("empty train or validation split")
    train_ids = {e.example_id for e in train_examples}
    val_ids = {e.example_id for e in val_examples}
    if train_ids & val_ids:
        raise ContractError("train/validation splits overlap")

    tc = cfg.train
    model = MMST(cfg, seed=tc.seed)
    model.feature_stats = load_stats(cache)
    optimizer = SPSOptimizer(model.parameters(), tc.sps_c, tc.sps_gamma_bound)
    history = TrainHistory()

    baseline = validation_min_ade(model, val_examples, tc.val_k, tc.seed)
    history.add(epoch=0, train_loss=float("nan"), train_mon=float("nan"),
                train_kl=float("nan"), val_min_ade=baseline, wall_clock_s=0.0)
    log(f"epoch 0 (untrained): val minADE_{tc.val_k} = {baseline:.3f} m")

    best = baseline
    best_path = out / "best.bin"
    model.save(best_path)
    used_train_ids = set()
    n_batches = len(train_examples) // tc.batch_size
    if n_batches == 0:
        raise ContractError(
            f"train split smaller than one batch ({len(train_examples)} "
            f"< {tc.batch_size})")
    start = time.time()
    for epoch in range(1, tc.epochs + 1):
        order = rng_mod.stream(tc.seed, rng_mod.SHUFFLE, epoch).permutation(
            len(train_examples))
        latent_rng = rng_mod.stream(tc.seed, rng_mod.LATENT, epoch)
        totals = np.zeros(3)
        for b in range(n_batches):
            idx = order[b * tc.batch_size:(b + 1) * tc.batch_size]
            batch = assemble_batch([train_examples[i] for i in idx])
            used_train_ids.update(batch.ids)
            res = train_step(model, batch, cfg.loss, optimizer, latent_rng)
            totals += (res.total, res.mon, res.kl)
        totals /= n_batches
        val = validation_min_ade(model, val_examples, tc.val_k, tc.seed)
        history.add(epoch=epoch, train_loss=totals[0], train_mon=totals[1],
                    train_kl=totals[2], val_min_ade=val,
                    wall_clock_s=time.time() - start)
        log(f"epoch {epoch}: loss={totals[0]:.2f} mon={totals[1]:.2f} "
            f"kl={totals[2]:.3f} val minADE_{tc.val_k}={val:.3f} m")
        if val < best:
            best = val
            model.save(best_path)
    if used_train_ids & val_ids:
        raise ContractError("validation example leaked into a training batch")
    model.save(out / "final.bin")
    history.write_csv(out / "history.csv")
    (out / "split_hygiene.json").write_text(json.dumps({
        "train_batch_membership_sha256": hashlib.sha256(
            "\n".join(sorted(used_train_ids)).encode()).hexdigest(),
        "val_overlap": 0,
    }, indent=2) + "\n")
    return best_path, history


# -- experiment drivers ----------------------------------------------------------


def metric_table(model: MMST, examples: list[Example], k_values, seed: int,
                 mode: str = "primary") -> list[dict]:
    """One row per k; samples are nested so errors are nonincreasing in k."""
    k_values = sorted(set(int(k) for k in k_values))
    if not k_values or k_values[0] < 1:
        raise ContractError("k values must be positive")
    k_max = k_values[-1]
    preds, truths = evaluate_samples(model, examples, k_max, seed)
    rows = []
    for k in k_values:
        rows.append({
            "k": k,
            "minADE": objectives.min_ade(truths, preds, k, mode),
            "minFDE": objectives.min_fde(truths, preds, k, mode),
            "n_examples": len(examples),
            "distance_kind": "euclidean" if mode == "primary" else "literal",
        })
    return rows


def reference_rows(kind: str) -> list[dict]:
    """Published full-scale numbers for embedding in desk-scale reports."""
    rows = []
    if kind == "mon-n":
        for n, table in REFERENCE_MON.items():
            for k, (ade, fde) in table.items():
                rows.append({"setting": f"n={n}", "k": k, "minADE": ade,
                             "minFDE": fde, "scale": REFERENCE_LABEL})
    elif kind == "distance":
        for name, table in REFERENCE_DISTANCE.items():
            for k, (ade, fde) in table.items():
                rows.append({"setting": name, "k": k, "minADE": ade,
                             "minFDE": fde, "scale": REFERENCE_LABEL})
    elif kind == "k-sweep":
        for k, (ade, fde) in REFERENCE_TABLE_K.items():
            rows.append({"setting": "n=32", "k": k, "minADE": ade,
                         "minFDE": fde, "scale": REFERENCE_LABEL})
    else:
        raise ContractError(f"unknown ablation kind {kind!r}")
    return rows
