"""Differentiable reward approximator: feature stack in, reward map out.

A small encoder-decoder with skip connections, written directly in numpy
with hand-derived backward passes so gradients are exact, deterministic and
checkable against finite differences.  Parameters live in one flat float64
vector; layer weights are views into it.

Layer stack for L encoder levels with widths (w0 .. w_{L-1}):
    enc_i : 3x3 conv -> relu           (2x mean-pool between levels)
    dec_i : nearest 2x upsample, concat enc_i skip, 3x3 conv -> relu
    head  : 1x1 conv, identity activation
Spatial size is preserved end to end; H and W must divide by 2^(L-1).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CHECKPOINT_MAGIC = b"CNAVRNET"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint file."""


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 8
    encoder_widths: tuple[int, ...] = (16, 32, 64)
    kernel: int = 3
    seed: int = 0
    final_bias_zero: bool = True
    # extra convs at the deepest level: cheap receptive-field growth (each
    # adds kernel-1 cells of reach at the coarsest stride for ~2% flops)
    bottleneck_convs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(self.encoder_widths))
        if self.levels < 1:
            raise ValueError("need at least one encoder level")
        if self.kernel % 2 != 1:
            raise ValueError("kernel must be odd for same-padding")
        if self.in_channels < 1:
            raise ValueError("in_channels must be positive")
        if self.bottleneck_convs < 1:
            raise ValueError("need at least the one bottleneck conv")

    @property
    def levels(self) -> int:
        return len(self.encoder_widths)

    def layer_channels(self) -> list[tuple[str, int, int, int]]:
        """(name, c_in, c_out, kernel) for every conv, in parameter order."""
        w = self.encoder_widths
        layers = []
        c_prev = self.in_channels
        for i, width in enumerate(w):
            layers.append((f"enc{i}", c_prev, width, self.kernel))
            c_prev = width
        for j in range(self.bottleneck_convs - 1):
            layers.append((f"mid{j}", c_prev, c_prev, self.kernel))
        for i in range(self.levels - 2, -1, -1):
            layers.append((f"dec{i}", c_prev + w[i], w[i], self.kernel))
            c_prev = w[i]
        layers.append(("head", c_prev, 1, 1))
        return layers


@dataclass
class Params:
    """Flat parameter vector plus the config that shapes it."""

    config: NetConfig
    theta: np.ndarray  # (n,) float64

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if len(self.theta) != n_params(self.config):
            raise ValueError(
                f"theta has {len(self.theta)} entries, config needs "
                f"{n_params(self.config)}"
            )

    def tensors(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(weight, bias) views into theta per conv layer."""
        out = []
        off = 0
        for _, c_in, c_out, k in self.config.layer_channels():
            wsize = c_in * k * k * c_out
            w = self.theta[off:off + wsize].reshape(c_in * k * k, c_out)
            off += wsize
            b = self.theta[off:off + c_out]
            off += c_out
            out.append((w, b))
        return out

    def weight_mask(self) -> np.ndarray:
        """Boolean mask over theta selecting weights (not biases)."""
        mask = np.zeros(len(self.theta), dtype=bool)
        off = 0
        for _, c_in, c_out, k in self.config.layer_channels():
            wsize = c_in * k * k * c_out
            mask[off:off + wsize] = True
            off += wsize + c_out
        return mask


def n_params(config: NetConfig) -> int:
    total = 0
    for _, c_in, c_out, k in config.layer_channels():
        total += c_in * k * k * c_out + c_out
    return total


def init(config: NetConfig) -> Params:
    """Seeded fan-in-scaled initialization; biases start at zero."""
    rng = np.random.default_rng(config.seed)
    chunks = []
    layers = config.layer_channels()
    for name, c_in, c_out, k in layers:
        fan_in = c_in * k * k
        scale = np.sqrt(2.0 / fan_in) if name != "head" else np.sqrt(1.0 / fan_in)
        chunks.append(rng.normal(0.0, scale, fan_in * c_out))
        if name == "head" and not config.final_bias_zero:
            chunks.append(rng.normal(0.0, 0.1, c_out))
        else:
            chunks.append(np.zeros(c_out))
    return Params(config=config, theta=np.concatenate(chunks))


# -- conv primitives ---------------------------------------------------------

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(C, H, W) -> (H*W, C*k*k) patch matrix with zero same-padding."""
    c, h, w = x.shape
    if k == 1:
        return x.reshape(c, h * w).T.copy()
    p = k // 2
    xp = np.zeros((c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    xp[:, p:p + h, p:p + w] = x
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (C, H, W, k, k)
    return np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4).reshape(h * w, c * k * k))


def _col2im(dcols: np.ndarray, c: int, h: int, w: int, k: int) -> np.ndarray:
    """Adjoint of _im2col: scatter patch gradients back onto the image."""
    if k == 1:
        return dcols.T.reshape(c, h, w).copy()
    p = k // 2
    dxp = np.zeros((c, h + 2 * p, w + 2 * p), dtype=dcols.dtype)
    dc = dcols.reshape(h, w, c, k, k)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + h, j:j + w] += dc[:, :, :, i, j].transpose(2, 0, 1)
    return dxp[:, p:p + h, p:p + w]


def _pool2(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def _unpool2(d: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(d, 2, axis=1), 2, axis=2) / 4.0


def _upsample2(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def _downsum2(d: np.ndarray) -> np.ndarray:
    c, h, w = d.shape
    return d.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


@dataclass
class ActivationCache:
    params: Params
    input_shape: tuple[int, int, int]
    records: list = field(default_factory=list)


def forward(stack, params: Params) -> tuple[np.ndarray, ActivationCache]:
    """Run the net on an (in_channels, H, W) input; returns (reward, cache).

    Compute precision follows the input dtype: float32 inputs run the whole
    pass in float32 (the training fast path), anything else in float64.
    """
    x = np.asarray(getattr(stack, "channels", stack))
    dtype = np.float32 if x.dtype == np.float32 else np.float64
    x = x.astype(dtype, copy=False)
    cfg = params.config
    if x.ndim != 3 or x.shape[0] != cfg.in_channels:
        raise ValueError(
            f"input shape {x.shape} does not match {cfg.in_channels} channels"
        )
    _, h, w = x.shape
    down = 2 ** (cfg.levels - 1)
    if h % down or w % down:
        raise ValueError(f"spatial size {h}x{w} not divisible by {down}")

    tensors = [(wm.astype(dtype, copy=False), b.astype(dtype, copy=False))
               for wm, b in params.tensors()]
    layers = cfg.layer_channels()
    cache = ActivationCache(params=params, input_shape=x.shape)
    skips = []

    cur = x
    li = 0
    for i in range(cfg.levels):
        name, c_in, c_out, k = layers[li]
        wmat, b = tensors[li]
        cols = _im2col(cur, k)
        pre = cols @ wmat + b
        hh, ww = cur.shape[1:]
        act = np.maximum(pre, 0.0)
        cache.records.append({"cols": cols, "mask": pre > 0, "hw": (hh, ww), "k": k,
                              "c_in": c_in, "c_out": c_out})
        cur = act.T.reshape(c_out, hh, ww)
        li += 1
        if i < cfg.levels - 1:
            skips.append(cur)
            cur = _pool2(cur)

    for _ in range(cfg.bottleneck_convs - 1):
        name, c_in, c_out, k = layers[li]
        wmat, b = tensors[li]
        cols = _im2col(cur, k)
        pre = cols @ wmat + b
        hh, ww = cur.shape[1:]
        act = np.maximum(pre, 0.0)
        cache.records.append({"cols": cols, "mask": pre > 0, "hw": (hh, ww), "k": k,
                              "c_in": c_in, "c_out": c_out})
        cur = act.T.reshape(c_out, hh, ww)
        li += 1

    for i in range(cfg.levels - 2, -1, -1):
        name, c_in, c_out, k = layers[li]
        wmat, b = tensors[li]
        up = _upsample2(cur)
        skip = skips[i]
        cat = np.concatenate([up, skip], axis=0)
        cols = _im2col(cat, k)
        pre = cols @ wmat + b
        hh, ww = cat.shape[1:]
        act = np.maximum(pre, 0.0)
        cache.records.append({"cols": cols, "mask": pre > 0, "hw": (hh, ww), "k": k,
                              "c_in": c_in, "c_out": c_out,
                              "split": up.shape[0]})
        cur = act.T.reshape(c_out, hh, ww)
        li += 1

    name, c_in, c_out, k = layers[li]
    wmat, b = tensors[li]
    cols = _im2col(cur, k)
    out = cols @ wmat + b
    hh, ww = cur.shape[1:]
    cache.records.append({"cols": cols, "mask": None, "hw": (hh, ww), "k": k,
                          "c_in": c_in, "c_out": c_out})
    reward = out.reshape(hh, ww)
    if not np.all(np.isfinite(reward)):
        raise FloatingPointError("non-finite reward map")
    return reward, cache


def backward(cache: ActivationCache, dl_dr: np.ndarray) -> np.ndarray:
    """Gradient of sum(dl_dr * reward) w.r.t. theta, as a flat vector."""
    params = cache.params
    cfg = params.config
    dtype = cache.records[0]["cols"].dtype  # match the forward precision
    dl_dr = np.asarray(dl_dr).astype(dtype, copy=False)
    h0, w0 = cache.input_shape[1:]
    if dl_dr.shape != (h0, w0):
        raise ValueError(f"dl_dr shape {dl_dr.shape} does not match {h0}x{w0}")
    if len(cache.records) != len(cfg.layer_channels()):
        raise ValueError("cache does not match params config")

    tensors = [(wm.astype(dtype, copy=False), b.astype(dtype, copy=False))
               for wm, b in params.tensors()]
    grad = np.zeros_like(params.theta)
    gviews = Params(config=cfg, theta=grad).tensors()

    # head (identity activation)
    rec = cache.records[-1]
    hh, ww = rec["hw"]
    dout = dl_dr.reshape(hh * ww, 1)
    wmat, _ = tensors[-1]
    gw, gb = gviews[-1]
    gw += rec["cols"].T @ dout
    gb += dout.sum(axis=0)
    dcur = _col2im(dout @ wmat.T, rec["c_in"], hh, ww, rec["k"])

    # decoder records reversed give dec_0 (finest) first; dec_i consumed skip i
    n_dec = cfg.levels - 1
    idx = len(cache.records) - 2
    dskips = {}
    for i in range(0, n_dec):
        rec = cache.records[idx]
        hh, ww = rec["hw"]
        dpre = dcur.reshape(dcur.shape[0], hh * ww).T * rec["mask"]
        wmat, _ = tensors[idx]
        gw, gb = gviews[idx]
        gw += rec["cols"].T @ dpre
        gb += dpre.sum(axis=0)
        dcat = _col2im(dpre @ wmat.T, rec["c_in"], hh, ww, rec["k"])
        split = rec["split"]
        dskips[i] = dcat[split:]
        dcur = _downsum2(dcat[:split])
        idx -= 1

    # extra bottleneck convs, in reverse
    for _ in range(cfg.bottleneck_convs - 1):
        rec = cache.records[idx]
        hh, ww = rec["hw"]
        dpre = dcur.reshape(dcur.shape[0], hh * ww).T * rec["mask"]
        wmat, _ = tensors[idx]
        gw, gb = gviews[idx]
        gw += rec["cols"].T @ dpre
        gb += dpre.sum(axis=0)
        dcur = _col2im(dpre @ wmat.T, rec["c_in"], hh, ww, rec["k"])
        idx -= 1

    # encoder levels, deepest first
    for i in range(cfg.levels - 1, -1, -1):
        rec = cache.records[idx]
        hh, ww = rec["hw"]
        if i < cfg.levels - 1:
            dcur = _unpool2(dcur) + dskips[i]
        dpre = dcur.reshape(dcur.shape[0], hh * ww).T * rec["mask"]
        wmat, _ = tensors[idx]
        gw, gb = gviews[idx]
        gw += rec["cols"].T @ dpre
        gb += dpre.sum(axis=0)
        if idx > 0:
            dcur = _col2im(dpre @ wmat.T, rec["c_in"], hh, ww, rec["k"])
        idx -= 1

    return grad


def reg_grad(params: Params, lambda_reg: float) -> tuple[float, np.ndarray]:
    """L2 penalty on weights only: (lambda * ||w||^2, 2 * lambda * w)."""
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be nonnegative")
    mask = params.weight_mask()
    w = params.theta * mask
    loss = float(lambda_reg * np.dot(w, w))
    return loss, 2.0 * lambda_reg * w


# -- persistence -------------------------------------------------------------

def save_params(params: Params, path) -> None:
    """Versioned binary checkpoint; theta stored as little-endian float32."""
    cfg = params.config
    header = json.dumps({
        "in_channels": cfg.in_channels,
        "encoder_widths": list(cfg.encoder_widths),
        "kernel": cfg.kernel,
        "seed": cfg.seed,
        "final_bias_zero": cfg.final_bias_zero,
        "bottleneck_convs": cfg.bottleneck_convs,
        "n_params": len(params.theta),
    }).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(params.theta.astype("<f4").tobytes())


def load_params(path, expected_config: NetConfig | None = None) -> Params:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 8 or not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a reward-net checkpoint")
    off = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", blob, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    if off + hlen > len(blob):
        raise CheckpointError(f"{path}: truncated header")
    try:
        meta = json.loads(blob[off:off + hlen].decode())
        config = NetConfig(
            in_channels=meta["in_channels"],
            encoder_widths=tuple(meta["encoder_widths"]),
            kernel=meta["kernel"],
            seed=meta["seed"],
            final_bias_zero=meta["final_bias_zero"],
            bottleneck_convs=meta.get("bottleneck_convs", 1),
        )
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: corrupted header ({e})") from e
    off += hlen
    theta = np.frombuffer(blob[off:], dtype="<f4")
    if len(theta) != meta["n_params"] or len(theta) != n_params(config):
        raise CheckpointError(
            f"{path}: parameter count {len(theta)} does not match config"
        )
    if expected_config is not None and config != expected_config:
        raise CheckpointError(
            f"{path}: checkpoint config {config} differs from expected "
            f"{expected_config}"
        )
    return Params(config=config, theta=theta.astype(np.float64))
