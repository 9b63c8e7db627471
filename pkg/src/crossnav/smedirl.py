"""Smoothed maximum-entropy deep IRL: visitation-matching gradient,
bilateral smoothing loss, and the epoch training loop.

Sign convention (one descent step): the demonstration term is an ascent
direction on log-likelihood, the smoothing and weight-decay terms are
penalties, so each step descends
    -L_demo + lambda_smooth * L_bilateral + L_reg.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path as FsPath

import numpy as np

from . import rewardnet
from .featurize import Snapshot, build_stack
from .gridmdp import (
    GridPath,
    GridSpec,
    demo_visitations,
    expected_visitations,
    sample_rollout,
    soft_value_iteration,
)

log = logging.getLogger(__name__)

STATS_FORMAT_VERSION = 1


@dataclass
class Demonstration:
    """One training sample: feature snapshot plus a 10-cell reference path."""

    snapshot: Snapshot
    reference: GridPath
    start_cell: tuple[int, int]
    source: str  # expert | extrapolated | counter_stop_augmented
    episode_id: str
    t: float

    def __post_init__(self):
        if len(self.reference.cells) != 10:
            raise ValueError("reference must span exactly 10 grid points")
        if tuple(self.start_cell) != tuple(self.reference.cells[0]):
            raise ValueError("start_cell must equal the first reference cell")


@dataclass
class DemoDataset:
    demonstrations: list[Demonstration]
    spec: GridSpec
    scene_id: str = "scene"
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.demonstrations)

    def counts_by_source(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for d in self.demonstrations:
            out[d.source] = out.get(d.source, 0) + 1
        return out


@dataclass
class TrainConfig:
    horizon: int = 10
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 16
    lambda_smooth: float = 0.1
    sigma_s: float = 1.5     # cells
    sigma_c: float = 1.0     # reward units
    lambda_reg: float = 1e-6
    svf_mode: str = "expectation"  # or "sampled"
    optimizer: str = "adam"        # or "sgd_momentum"
    seed: int = 0

    def __post_init__(self):
        if self.horizon != 10:
            raise ValueError("the reference horizon is fixed at 10 grid points")
        if min(self.sigma_s, self.sigma_c) <= 0 or self.lr <= 0:
            raise ValueError("scales and learning rate must be positive")
        if self.svf_mode not in ("expectation", "sampled"):
            raise ValueError(f"unknown svf_mode {self.svf_mode}")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer}")


@dataclass
class TrainStats:
    records: list[dict] = field(default_factory=list)
    aborted: bool = False

    def append(self, **kw) -> None:
        self.records.append(kw)

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(json.dumps({"type": "header",
                                "version": STATS_FORMAT_VERSION}) + "\n")
            for rec in self.records:
                f.write(json.dumps({"type": "epoch", **rec}) + "\n")
            if self.aborted:
                f.write(json.dumps({"type": "aborted"}) + "\n")


def medirl_grad(reward: np.ndarray, demo: Demonstration, cfg: TrainConfig,
                spec: GridSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Ascent field mu_D - E[mu] on the reward map (sums to zero)."""
    if not np.all(np.isfinite(reward)):
        raise ValueError("reward must be finite")
    mu_d = demo_visitations(demo.reference, cfg.horizon, spec).counts
    policy = soft_value_iteration(reward, cfg.horizon, spec)
    if cfg.svf_mode == "expectation":
        e_mu = expected_visitations(policy, demo.start_cell, cfg.horizon, spec).counts
    else:
        rollout = sample_rollout(policy, demo.start_cell, cfg.horizon,
                                 rng or np.random.default_rng(cfg.seed), spec)
        e_mu = demo_visitations(rollout, cfg.horizon, spec).counts
    return mu_d - e_mu


# 8-connected neighbor offsets; the loss over ordered pairs equals twice the
# sum over one representative offset per direction pair
_NEIGHBORS = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)
              if (dr, dc) != (0, 0)]
_HALF_NEIGHBORS = [(0, 1), (1, 0), (1, 1), (1, -1)]


def bilateral_loss_and_grad(reward: np.ndarray, sigma_s: float, sigma_c: float,
                            full_grad: bool = True) -> tuple[float, np.ndarray]:
    """Edge-aware smoothing penalty over ordered 8-connected neighbor pairs.

    loss = sum_p sum_q ||r_p - r_q||^2 exp(-|p-q|^2 / 2 sigma_s^2)
                                       exp(-(r_p - r_q)^2 / 2 sigma_c^2)

    With full_grad both exponential factors are differentiated (product
    rule); otherwise they are treated as constant weights.
    """
    if sigma_s <= 0 or sigma_c <= 0:
        raise ValueError("sigmas must be positive")
    r = np.asarray(reward, dtype=float)
    rows, cols = r.shape
    loss = 0.0
    grad = np.zeros_like(r)
    inv2ss = 1.0 / (2.0 * sigma_s * sigma_s)
    inv2sc = 1.0 / (2.0 * sigma_c * sigma_c)
    for dr, dc in _HALF_NEIGHBORS:
        w_s = np.exp(-(dr * dr + dc * dc) * inv2ss)
        p_r0, p_r1 = max(dr, 0), rows + min(dr, 0)
        p_c0, p_c1 = max(dc, 0), cols + min(dc, 0)
        q_r0, q_r1 = p_r0 - dr, p_r1 - dr
        q_c0, q_c1 = p_c0 - dc, p_c1 - dc
        delta = r[p_r0:p_r1, p_c0:p_c1] - r[q_r0:q_r1, q_c0:q_c1]
        w_c = np.exp(-delta * delta * inv2sc)
        loss += 2.0 * float(np.sum(delta * delta * w_s * w_c))
        if full_grad:
            dpair = (4.0 * delta - 4.0 * delta**3 * inv2sc) * w_s * w_c
        else:
            dpair = 4.0 * delta * w_s * w_c
        grad[p_r0:p_r1, p_c0:p_c1] += dpair
        grad[q_r0:q_r1, q_c0:q_c1] -= dpair
    return loss, grad


def reward_smoothness_metric(reward: np.ndarray) -> float:
    """Mean squared difference over 8-connected neighbor pairs."""
    r = np.asarray(reward, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("reward must be finite")
    rows, cols = r.shape
    total = 0.0
    count = 0
    for dr, dc in _NEIGHBORS:
        p_r0, p_r1 = max(dr, 0), rows + min(dr, 0)
        p_c0, p_c1 = max(dc, 0), cols + min(dc, 0)
        delta = r[p_r0:p_r1, p_c0:p_c1] - r[p_r0 - dr:p_r1 - dr, p_c0 - dc:p_c1 - dc]
        total += float(np.sum(delta * delta))
        count += delta.size
    return total / count if count else 0.0


class _Adam:
    def __init__(self, n: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class _SgdMomentum:
    def __init__(self, n: int, lr: float, momentum=0.9):
        self.lr, self.mu = lr, momentum
        self.v = np.zeros(n)

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.v = self.mu * self.v - self.lr * grad
        return theta + self.v


# gradients inside a minibatch reduce in fixed chunks of this size, so the
# result is bit-identical for any worker count (including serial runs)
_REDUCE_CHUNK = 8

_POOL_STATE: dict = {}


def _demo_descent_grad(demo: Demonstration, params, cfg: TrainConfig,
                       spec: GridSpec, sample_rng_key) -> tuple[np.ndarray, float, float]:
    """One demo's descent gradient on theta plus its loss terms."""
    stack32 = build_stack(demo.snapshot, spec).channels.astype(np.float32)
    reward, cache = rewardnet.forward(stack32, params)
    srng = np.random.default_rng(sample_rng_key)
    ascent = medirl_grad(reward, demo, cfg, spec, rng=srng)
    descent_field = -ascent
    demo_loss = float(np.sum(-ascent * reward))
    smooth_loss = 0.0
    if cfg.lambda_smooth > 0:
        smooth_loss, s_grad = bilateral_loss_and_grad(reward, cfg.sigma_s, cfg.sigma_c)
        descent_field = descent_field + cfg.lambda_smooth * s_grad
    return rewardnet.backward(cache, descent_field), demo_loss, smooth_loss


def _pool_init(demos, spec, cfg, net_cfg):
    import threadpoolctl

    threadpoolctl.threadpool_limits(1)  # one BLAS thread per worker process
    _POOL_STATE["demos"] = demos
    _POOL_STATE["spec"] = spec
    _POOL_STATE["cfg"] = cfg
    _POOL_STATE["net_cfg"] = net_cfg


def _pool_chunk(args):
    indices, theta_bytes, step_counter = args
    params = rewardnet.Params(
        config=_POOL_STATE["net_cfg"],
        theta=np.frombuffer(theta_bytes, dtype=np.float64).copy())
    cfg = _POOL_STATE["cfg"]
    spec = _POOL_STATE["spec"]
    grad = np.zeros_like(params.theta)
    demo_loss = smooth_loss = 0.0
    for di in indices:
        g, dl, sl = _demo_descent_grad(_POOL_STATE["demos"][di], params, cfg,
                                       spec, [cfg.seed, step_counter, int(di)])
        grad += g
        demo_loss += dl
        smooth_loss += sl
    return grad, demo_loss, smooth_loss


def train(dataset: DemoDataset, net_cfg: rewardnet.NetConfig, cfg: TrainConfig,
          checkpoint_dir=None, checkpoint_every: int = 0,
          log_every: int = 10, workers: int = 1) -> tuple[rewardnet.Params, TrainStats]:
    """Minibatch visitation-matching training, deterministic under the seed.

    Per-demo gradients inside a minibatch are pure given the parameters and
    may run on worker processes; they reduce in fixed-size chunks so the
    result is independent of the worker count.  Divergence (non-finite loss
    or gradient) aborts and returns the last good parameters instead of
    raising.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    spec = dataset.spec
    params = rewardnet.init(net_cfg)
    opt_cls = _Adam if cfg.optimizer == "adam" else _SgdMomentum
    opt = opt_cls(len(params.theta), cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    stats = TrainStats()
    last_good = params.theta.copy()
    demos = dataset.demonstrations
    ckpt_dir = FsPath(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    pool = None
    if workers > 1:
        import multiprocessing as mp

        pool = mp.get_context("fork").Pool(
            workers, initializer=_pool_init, initargs=(demos, spec, cfg, net_cfg))

    def batch_gradient(batch, step_counter):
        chunks = [batch[c0:c0 + _REDUCE_CHUNK]
                  for c0 in range(0, len(batch), _REDUCE_CHUNK)]
        if pool is not None:
            theta_bytes = params.theta.tobytes()
            results = pool.map(_pool_chunk,
                               [(tuple(int(i) for i in chunk), theta_bytes,
                                 step_counter) for chunk in chunks])
        else:
            results = []
            for chunk in chunks:
                grad = np.zeros_like(params.theta)
                dl_sum = sl_sum = 0.0
                for di in chunk:
                    g, dl, sl = _demo_descent_grad(
                        demos[di], params, cfg, spec,
                        [cfg.seed, step_counter, int(di)])
                    grad += g
                    dl_sum += dl
                    sl_sum += sl
                results.append((grad, dl_sum, sl_sum))
        total = np.zeros_like(params.theta)
        dl_total = sl_total = 0.0
        for grad, dl, sl in results:  # fixed chunk order
            total += grad
            dl_total += dl
            sl_total += sl
        return total, dl_total, sl_total

    try:
        step_counter = 0
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(demos))
            ep_demo_loss = ep_smooth_loss = ep_grad_norm = 0.0
            n_batches = 0
            aborted = False
            for b0 in range(0, len(order), cfg.batch_size):
                batch = order[b0:b0 + cfg.batch_size]
                grad, dl, sl = batch_gradient(batch, step_counter)
                ep_demo_loss += dl
                ep_smooth_loss += sl
                grad /= len(batch)
                reg_loss, rgrad = rewardnet.reg_grad(params, cfg.lambda_reg)
                grad += rgrad
                gnorm = float(np.linalg.norm(grad))
                if not np.isfinite(gnorm):
                    log.warning("non-finite gradient at epoch %d; aborting with "
                                "last good parameters", epoch)
                    aborted = True
                    break
                params.theta = opt.step(params.theta, grad)
                step_counter += 1
                ep_grad_norm += gnorm
                n_batches += 1
            if aborted or not np.all(np.isfinite(params.theta)):
                stats.aborted = True
                params.theta = last_good
                break
            last_good = params.theta.copy()
            stats.append(
                epoch=epoch,
                demo_loss=ep_demo_loss / max(len(order), 1),
                smooth_loss=ep_smooth_loss / max(len(order), 1),
                reg_loss=reg_loss,
                grad_norm=ep_grad_norm / max(n_batches, 1),
            )
            if log_every and epoch % log_every == 0:
                log.info("epoch %d: demo_loss=%.4f smooth=%.4f |g|=%.4f",
                         epoch, stats.records[-1]["demo_loss"],
                         stats.records[-1]["smooth_loss"],
                         stats.records[-1]["grad_norm"])
            if ckpt_dir is not None and checkpoint_every \
                    and (epoch + 1) % checkpoint_every == 0:
                rewardnet.save_params(params, ckpt_dir / f"epoch_{epoch + 1:04d}.ckpt")
    finally:
        if pool is not None:
            pool.terminate()
            pool.join()

    return params, stats


def save_train_config(cfg: TrainConfig, path) -> None:
    """Human-readable key/value config file."""
    with open(path, "w") as f:
        f.write("# crossnav training configuration\n")
        for key, value in asdict(cfg).items():
            f.write(f"{key} = {value}\n")


def load_train_config(path) -> TrainConfig:
    values: dict = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key in ("horizon", "epochs", "batch_size", "seed"):
                values[key] = int(raw)
            elif key in ("svf_mode", "optimizer"):
                values[key] = raw
            else:
                values[key] = float(raw)
    return TrainConfig(**values)
