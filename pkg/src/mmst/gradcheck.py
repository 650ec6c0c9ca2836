"""Central finite-difference verification of every differentiable op
and of the fully composed model graph.

Per-op checks perturb whole input tensors; the composed check samples
a handful of coordinates from every parameter tensor (probing each
scalar of a full model is infeasible) and adds a directional probe
along one random direction through all parameters at once, which
touches every coordinate in aggregate.  All checks run in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import objectives, rng as rng_mod
from . import tensor as T
from .config import Config, LossConfig, ModelConfig
from .model import MMST, Batch
from .nn import BatchNorm
from .raster import RasterConfig
from .tensor import Tensor, grads_of

OP_TOL = 1e-4
COMPOSED_TOL = 1e-3
# Coordinates whose gradient magnitude sits below the floor are judged
# on absolute error (floor * tol); finite differences cannot resolve
# relative accuracy there.  The composed floor matches the usual
# autograd-gradcheck atol of 1e-5 at rtol 1e-3.
_OP_FLOOR = 1e-4
_COMPOSED_FLOOR = 1e-2


@dataclass
class CheckReport:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def rel_err(analytic: np.ndarray, numeric: np.ndarray,
            floor: float = _OP_FLOOR) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / den).max())


def fd_grad(f, x: np.ndarray) -> np.ndarray:
    """Central finite differences of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        h = 1e-5 * max(1.0, abs(flat[i]))
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * h)
    return g


def _check_inputs(name: str, make_loss, inputs: list[np.ndarray]) -> CheckReport:
    """Compare backward grads with finite differences for each input."""
    tensors = [Tensor(x.astype(np.float64), requires_grad=True) for x in inputs]
    loss = make_loss(*tensors)
    loss.backward()
    worst = 0.0
    for j, t in enumerate(tensors):
        def f(x, j=j):
            probe = [Tensor(v.data) for v in tensors]
            probe[j] = Tensor(x)
            return make_loss(*probe).item()
        numeric = fd_grad(f, t.data.copy())
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, rel_err(analytic, numeric))
    return CheckReport(name, worst, OP_TOL)


def check_single_ops(seed: int = 0) -> list[CheckReport]:
    rng = rng_mod.stream(seed, rng_mod.INIT, 999)

    def w(shape):
        return rng.standard_normal(shape)

    reports = []

    def add(name, make_loss, *inputs):
        reports.append(_check_inputs(name, make_loss, list(inputs)))

    pa, pb = w((4, 5)), w((5, 3))
    proj = w((4, 3))
    add("matmul", lambda a, b: ((a @ b) * Tensor(proj)).sum(), pa, pb)

    x4 = w((2, 2, 5, 5))
    k4 = w((3, 2, 2, 2))
    b4 = w(3)
    pj = w((2, 3, 3, 3))
    add("conv2d",
        lambda x, k, b: (T.conv2d(x, k, b, stride=2, padding=1)
                         * Tensor(pj)).sum(), x4, k4, b4)

    xe = w((3, 4))
    pe = w((3, 4))
    add("leaky_relu", lambda x: (T.leaky_relu(x, 1e-2) * Tensor(pe)).sum(), xe)
    add("squash", lambda x: (T.squash(x, axis=-1) * Tensor(pe)).sum(), xe)
    add("exp", lambda x: (x.exp() * Tensor(pe)).sum(), xe)
    add("tanh", lambda x: (x.tanh() * Tensor(pe)).sum(), xe)
    add("sigmoid", lambda x: (x.sigmoid() * Tensor(pe)).sum(), xe)
    add("abs", lambda x: (x.abs() * Tensor(pe)).sum(), xe + 0.1)
    add("log", lambda x: (x.log() * Tensor(pe)).sum(), np.abs(xe) + 0.5)
    add("sqrt", lambda x: (x.sqrt() * Tensor(pe)).sum(), np.abs(xe) + 0.5)
    add("clip", lambda x: (x.clip(-0.8, 0.8) * Tensor(pe)).sum(), xe)
    add("add", lambda a, b: ((a + b) * Tensor(pe)).sum(), xe, w((3, 4)))
    add("sub", lambda a, b: ((a - b) * Tensor(pe)).sum(), xe, w((3, 4)))
    add("mul", lambda a, b: ((a * b) * Tensor(pe)).sum(), xe, w((3, 4)))
    add("div", lambda a, b: ((a / b) * Tensor(pe)).sum(), xe,
        np.abs(w((3, 4))) + 0.5)
    add("mul_broadcast", lambda a, b: ((a * b) * Tensor(pe)).sum(), xe, w((1, 4)))
    add("pow", lambda x: ((x ** 3.0) * Tensor(pe)).sum(), xe)
    p3, p4 = w(3), w(4)
    p43, p22, p38, p94 = w((4, 3)), w((2, 2)), w((3, 8)), w((9, 4))
    add("sum_axis", lambda x: (x.sum(axis=1) * Tensor(p3)).sum(), xe)
    add("mean", lambda x: (x.mean(axis=0) * Tensor(p4)).sum(), xe)
    add("amin", lambda x: (x.amin(axis=1) * Tensor(p3)).sum(), xe)
    add("reshape", lambda x: (x.reshape(4, 3) * Tensor(p43)).sum(), xe)
    add("transpose", lambda x: (x.transpose() * Tensor(p43)).sum(), xe)
    add("slice", lambda x: (x[1:, ::2] * Tensor(p22)).sum(), xe)
    add("concat", lambda a, b: (T.concat([a, b], axis=1)
                                * Tensor(p38)).sum(), xe, w((3, 4)))
    add("repeat_rows", lambda x: (T.repeat_rows(x, 3)
                                  * Tensor(p94)).sum(), xe)

    xl, hl, cl = w((2, 3)), w((2, 4)), w((2, 4))
    wx, wh, bl = w((3, 16)), w((4, 16)), w(16)
    ph = w((2, 4))
    def lstm_loss(x, h, c, wxx, whh, bb):
        h2, c2 = T.lstm_cell(x, h, c, wxx, whh, bb)
        return (h2 * Tensor(ph)).sum() + (c2 * Tensor(ph)).sum()
    add("lstm_cell", lstm_loss, xl, hl, cl, wx, wh, bl)

    xb = w((6, 3))
    pbn = w((6, 3))
    def bn_loss(x, gamma, beta):
        layer = BatchNorm(3, np.float64)
        layer.gamma = gamma
        layer.beta = beta
        return (layer(x, train=True) * Tensor(pbn)).sum()
    add("batch_norm", bn_loss, xb, np.ones(3) + 0.3 * w(3), 0.3 * w(3))

    return reports


def _tiny_config(dtype: str = "float64") -> Config:
    return Config(
        model=ModelConfig(
            history_sec=1.0, horizon_sec=2.0, conv_channels=(2, 3),
            lower_caps=2, lower_caps_dim=3, higher_caps=2, higher_caps_dim=4,
            final_caps_dim=6, global_caps=2, global_caps_dim=4, state_embed=4,
            lstm_hidden=6, past_embed=6, future_embed=6, recog_hidden=8,
            latent_dim=4, gen_hidden=(8, 8, 6), dtype=dtype),
        raster=RasterConfig(global_px=8, local_px=8),
    )


def _random_batch(cfg: Config, rng, batch: int = 2) -> Batch:
    m = cfg.model
    return Batch(
        states=rng.standard_normal((batch, m.n_obs, 3)),
        past=rng.standard_normal((batch, m.n_obs, 2)),
        future=rng.standard_normal((batch, m.n_future, 2)),
        global_chunk=rng.random((batch, 1, cfg.raster.global_px,
                                 cfg.raster.global_px)),
        local_stack=(rng.random((batch, m.n_obs, m.n_layer_types,
                                 cfg.raster.local_px, cfg.raster.local_px))
                     > 0.6).astype(np.float64),
        ids=[f"probe_{i}" for i in range(batch)],
    )


def composed_loss(model: MMST, batch: Batch, eps: np.ndarray,
                  loss_cfg: LossConfig) -> Tensor:
    """Training loss with frozen reparameterization noise (pure in params)."""
    condition, state = model.encode_condition(batch)
    params = model.posterior(batch, condition, train=True)
    b, n, latent = eps.shape
    noise = Tensor(eps)
    z = params.mu.reshape(b, 1, latent) + params.sigma.reshape(b, 1, latent) * noise
    flat = model.generator(z.reshape(b * n, latent),
                           T.repeat_rows(condition, n), T.repeat_rows(state, n))
    samples = flat.reshape(b, n, model.cfg.model.n_future, 2)
    truth = Tensor(np.asarray(batch.future, dtype=np.float64))
    total, _, _ = objectives.total_loss(truth, samples, params, loss_cfg)
    return total


def check_composed(seed: int = 0, per_param: int = 3) -> CheckReport:
    """Sampled finite differences through encoder + CVAE + loss."""
    cfg = _tiny_config()
    model = MMST(cfg, seed=seed)
    rng = rng_mod.stream(seed, rng_mod.INIT, 998)
    batch = _random_batch(cfg, rng)
    loss_cfg = LossConfig(n_train=2)
    eps = rng.standard_normal((len(batch), loss_cfg.n_train,
                               cfg.model.latent_dim))

    loss = composed_loss(model, batch, eps, loss_cfg)
    loss.backward()
    named = list(model.named_parameters())
    grads = {name: (p.grad.copy() if p.grad is not None else
                    np.zeros_like(p.data)) for name, p in named}

    def eval_loss() -> float:
        return composed_loss(model, batch, eps, loss_cfg).item()

    def central(flat, i, h) -> float:
        orig = flat[i]
        flat[i] = orig + h
        hi = eval_loss()
        flat[i] = orig - h
        lo = eval_loss()
        flat[i] = orig
        return (hi - lo) / (2.0 * h)

    worst = 0.0
    for name, p in named:
        flat = p.data.reshape(-1)
        gflat = grads[name].reshape(-1)
        count = min(per_param, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        for i in coords:
            h = 1e-5 * max(1.0, abs(flat[i]))
            # Richardson extrapolation cancels the h^2 truncation term,
            # which dominates on low-gradient, high-curvature coordinates
            # (squash near the origin).
            numeric = (4.0 * central(flat, i, 0.5 * h) - central(flat, i, h)) / 3.0
            worst = max(worst, rel_err(gflat[i], numeric, _COMPOSED_FLOOR))

    # directional probe across every coordinate at once
    direction = [rng.standard_normal(p.data.shape) for _, p in named]
    norm = np.sqrt(sum(float((d ** 2).sum()) for d in direction))
    direction = [d / norm for d in direction]
    analytic_dd = sum(float((grads[name] * d).sum())
                      for (name, _), d in zip(named, direction))
    h = 1e-5
    for (_, p), d in zip(named, direction):
        p.data = p.data + h * d
    hi = eval_loss()
    for (_, p), d in zip(named, direction):
        p.data = p.data - 2.0 * h * d
    lo = eval_loss()
    for (_, p), d in zip(named, direction):
        p.data = p.data + h * d
    worst = max(worst, rel_err(analytic_dd, (hi - lo) / (2.0 * h),
                               _COMPOSED_FLOOR))
    return CheckReport(f"composed(seed={seed})", worst, COMPOSED_TOL)


def run_suite(n_seeds: int = 20, log=print) -> bool:
    """Per-op suite on one seed plus composed checks over many seeds."""
    ok = True
    for report in check_single_ops(seed=0):
        ok &= report.passed
        log(f"{'PASS' if report.passed else 'FAIL'} op {report.name}: "
            f"max rel err {report.max_rel_err:.3e} (tol {report.tol:.0e})")
    for seed in range(n_seeds):
        report = check_composed(seed=seed)
        ok &= report.passed
        log(f"{'PASS' if report.passed else 'FAIL'} {report.name}: "
            f"max rel err {report.max_rel_err:.3e} (tol {report.tol:.0e})")
    return ok
