"""Dilated causal temporal convolutional network with hand-derived backprop.

Layout conventions:
  - windows arrive as (n, w, d) float64; internally convolutions use (n, c, w)
  - residual block i applies two causal convs at dilation dilations[i], with a
    ReLU between them and a ReLU after the residual sum; a 1x1 projection
    aligns channel counts on blocks whose input width differs from the output
  - a linear head maps the final time step's hidden vector to the d-channel
    next-observation forecast

Everything is plain numpy. Gradients are exact partials of the batch MSE and
are validated against central finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import Diverged, InvalidArch, TooFewSamples, WindowTooShort
from .telemetry import WindowedDataset, split_chronological


@dataclass(frozen=True)
class TcnArch:
    input_channels: int
    hidden_channels: int
    kernel_size: int
    dilations: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(x) for x in self.dilations))
        if self.input_channels < 1 or self.hidden_channels < 1:
            raise InvalidArch("channel counts must be positive")
        if self.kernel_size < 2:
            raise InvalidArch("kernel_size must be >= 2")
        if not self.dilations or any(d < 1 for d in self.dilations):
            raise InvalidArch("dilations must be a non-empty list of positive ints")

    @property
    def num_blocks(self) -> int:
        return len(self.dilations)

    def block_in_channels(self, i: int) -> int:
        return self.input_channels if i == 0 else self.hidden_channels


def receptive_field(arch: TcnArch) -> int:
    """Past steps visible to the final output: 1 + 2(k-1) * sum of dilations."""
    return 1 + 2 * (arch.kernel_size - 1) * sum(arch.dilations)


def param_order(arch: TcnArch) -> list[str]:
    """Canonical parameter name sequence; persistence flattens in this order."""
    names: list[str] = []
    for i in range(arch.num_blocks):
        names += [f"block{i}.conv1.w", f"block{i}.conv1.b",
                  f"block{i}.conv2.w", f"block{i}.conv2.b"]
        if arch.block_in_channels(i) != arch.hidden_channels:
            names += [f"block{i}.proj.w", f"block{i}.proj.b"]
    names += ["head.w", "head.b"]
    return names


def param_shapes(arch: TcnArch) -> dict[str, tuple[int, ...]]:
    d, h, k = arch.input_channels, arch.hidden_channels, arch.kernel_size
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(arch.num_blocks):
        c_in = arch.block_in_channels(i)
        shapes[f"block{i}.conv1.w"] = (h, c_in, k)
        shapes[f"block{i}.conv1.b"] = (h,)
        shapes[f"block{i}.conv2.w"] = (h, h, k)
        shapes[f"block{i}.conv2.b"] = (h,)
        if c_in != h:
            shapes[f"block{i}.proj.w"] = (h, c_in)
            shapes[f"block{i}.proj.b"] = (h,)
    shapes["head.w"] = (d, h)
    shapes["head.b"] = (d,)
    return shapes


@dataclass
class TcnModel:
    arch: TcnArch
    params: dict[str, np.ndarray]

    def copy(self) -> "TcnModel":
        return TcnModel(self.arch, {k: v.copy() for k, v in self.params.items()})


def _glorot_limit(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_model(arch: TcnArch, seed: int) -> TcnModel:
    """Glorot-uniform kernels (fans count taps), zero biases, seeded draws."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name in param_order(arch):
        shape = param_shapes(arch)[name]
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=np.float64)
        elif name.endswith("conv1.w") or name.endswith("conv2.w"):
            h, c_in, k = shape
            lim = _glorot_limit(c_in * k, h * k)
            params[name] = rng.uniform(-lim, lim, size=shape)
        elif name.endswith("proj.w"):
            h, c_in = shape
            lim = _glorot_limit(c_in, h)
            params[name] = rng.uniform(-lim, lim, size=shape)
        else:  # head.w
            d, h = shape
            lim = _glorot_limit(h, d)
            params[name] = rng.uniform(-lim, lim, size=shape)
    return TcnModel(arch, params)


def _causal_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray, dilation: int
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Left-padded dilated conv over (n, c_in, width); returns (out, padded x)."""
    n, c_in, width = x.shape
    c_out, _, k = w.shape
    pad = (k - 1) * dilation
    xp = np.zeros((n, c_in, width + pad), dtype=np.float64)
    xp[:, :, pad:] = x
    out = np.empty((n, c_out, width), dtype=np.float64)
    out[:] = b[None, :, None]
    for j in range(k):
        out += np.matmul(w[:, :, j], xp[:, :, j * dilation:j * dilation + width])
    return out, xp


def _causal_conv_backward(d_out: np.ndarray, xp: np.ndarray, w: np.ndarray,
                          dilation: int
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, c_out, width = d_out.shape
    _, c_in, k = w.shape
    pad = (k - 1) * dilation
    d_b = d_out.sum(axis=(0, 2))
    d_w = np.empty_like(w)
    d_xp = np.zeros_like(xp)
    for j in range(k):
        sl = slice(j * dilation, j * dilation + width)
        d_w[:, :, j] = np.tensordot(d_out, xp[:, :, sl], axes=([0, 2], [0, 2]))
        d_xp[:, :, sl] += np.matmul(w[:, :, j].T, d_out)
    return d_xp[:, :, pad:], d_w, d_b


def _forward(model: TcnModel, x_bcw: np.ndarray, keep_caches: bool
             ) -> tuple[np.ndarray, list[dict]]:
    """Run all blocks plus head on conv-layout input (n, d, w)."""
    p = model.params
    cur = x_bcw
    caches: list[dict] = []
    for i, dil in enumerate(model.arch.dilations):
        z1, xp1 = _causal_conv(cur, p[f"block{i}.conv1.w"], p[f"block{i}.conv1.b"], dil)
        a1 = np.maximum(z1, 0.0)
        z2, xp2 = _causal_conv(a1, p[f"block{i}.conv2.w"], p[f"block{i}.conv2.b"], dil)
        if f"block{i}.proj.w" in p:
            res = np.matmul(p[f"block{i}.proj.w"], cur) + p[f"block{i}.proj.b"][None, :, None]
        else:
            res = cur
        pre = z2 + res
        out = np.maximum(pre, 0.0)
        if keep_caches:
            caches.append({"x": cur, "xp1": xp1, "z1": z1, "xp2": xp2, "pre": pre})
        cur = out
    h_last = cur[:, :, -1]
    preds = h_last @ p["head.w"].T + p["head.b"]
    if keep_caches:
        caches.append({"h_last": h_last, "out_shape": cur.shape})
    return preds, caches


def _check_window_width(model: TcnModel, width: int) -> None:
    rf = receptive_field(model.arch)
    if width < rf:
        raise WindowTooShort(f"window width {width} < receptive field {rf}")


def forward_batch(model: TcnModel, windows: np.ndarray) -> np.ndarray:
    """Predict the next observation for each (w, d) window in (n, w, d)."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[2] != model.arch.input_channels:
        raise WindowTooShort("windows must be (n, w, d) with d matching the model")
    _check_window_width(model, windows.shape[1])
    preds, _ = _forward(model, windows.transpose(0, 2, 1), keep_caches=False)
    return preds


def forward(model: TcnModel, window: np.ndarray) -> np.ndarray:
    """Single-window convenience wrapper around forward_batch."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise WindowTooShort("window must be a (w, d) matrix")
    return forward_batch(model, window[None])[0]


def loss_and_grads(model: TcnModel, inputs: np.ndarray, targets: np.ndarray
                   ) -> tuple[float, dict[str, np.ndarray]]:
    """Batch MSE over all channels and its exact gradients."""
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.shape[0] == 0:
        raise TooFewSamples("batch is empty")
    _check_window_width(model, inputs.shape[1])
    p = model.params
    preds, caches = _forward(model, inputs.transpose(0, 2, 1), keep_caches=True)
    diff = preds - targets
    n, d = diff.shape
    mse = float(np.mean(diff * diff))

    grads = {k: np.zeros_like(v) for k, v in p.items()}
    d_preds = (2.0 / (n * d)) * diff
    head = caches[-1]
    grads["head.w"] = d_preds.T @ head["h_last"]
    grads["head.b"] = d_preds.sum(axis=0)
    d_cur = np.zeros(head["out_shape"], dtype=np.float64)
    d_cur[:, :, -1] = d_preds @ p["head.w"]

    for i in reversed(range(model.arch.num_blocks)):
        c = caches[i]
        dil = model.arch.dilations[i]
        d_pre = d_cur * (c["pre"] > 0.0)
        d_a1, d_w2, d_b2 = _causal_conv_backward(d_pre, c["xp2"], p[f"block{i}.conv2.w"], dil)
        grads[f"block{i}.conv2.w"] = d_w2
        grads[f"block{i}.conv2.b"] = d_b2
        d_z1 = d_a1 * (c["z1"] > 0.0)
        d_x, d_w1, d_b1 = _causal_conv_backward(d_z1, c["xp1"], p[f"block{i}.conv1.w"], dil)
        grads[f"block{i}.conv1.w"] = d_w1
        grads[f"block{i}.conv1.b"] = d_b1
        if f"block{i}.proj.w" in p:
            grads[f"block{i}.proj.w"] = np.tensordot(d_pre, c["x"], axes=([0, 2], [0, 2]))
            grads[f"block{i}.proj.b"] = d_pre.sum(axis=(0, 2))
            d_x += np.matmul(p[f"block{i}.proj.w"].T, d_pre)
        else:
            d_x += d_pre
        d_cur = d_x
    return mse, grads


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 5
    seed: int = 0
    val_fraction: float = 0.2


@dataclass
class TrainReport:
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    best_epoch: int = -1
    final_epoch: int = -1
    seed: int = 0
    hyper: dict = field(default_factory=dict)


def _val_mse(model: TcnModel, ds: WindowedDataset) -> float:
    preds = forward_batch(model, ds.inputs)
    diff = preds - ds.targets
    return float(np.mean(diff * diff))


def train(model: TcnModel, dataset: WindowedDataset, hyper: TrainConfig
          ) -> tuple[TcnModel, TrainReport]:
    """Adam on batch MSE with chronological validation split and early stop.

    Deterministic given the seed: shuffle order, batch boundaries, and
    gradient accumulation order are all fixed. Returns the weights of the
    best validation epoch.
    """
    report = TrainReport(seed=hyper.seed, hyper={
        "epochs": hyper.epochs, "batch_size": hyper.batch_size,
        "learning_rate": hyper.learning_rate, "beta1": hyper.beta1,
        "beta2": hyper.beta2, "eps": hyper.eps, "patience": hyper.patience,
        "val_fraction": hyper.val_fraction,
    })
    if hyper.epochs == 0:
        return model.copy(), report
    if dataset.num_windows < 2:
        raise TooFewSamples("need at least 2 windows to train with validation")
    _check_window_width(model, dataset.inputs.shape[1])

    train_ds, val_ds = split_chronological(dataset, 1.0 - hyper.val_fraction)
    rng = np.random.default_rng(hyper.seed)
    work = model.copy()
    m = {k: np.zeros_like(v) for k, v in work.params.items()}
    v = {k: np.zeros_like(val) for k, val in work.params.items()}
    step = 0
    best_val = math.inf
    best_params = None
    best_epoch = -1
    stale = 0

    for epoch in range(hyper.epochs):
        perm = rng.permutation(train_ds.num_windows)
        total = 0.0
        for lo in range(0, len(perm), hyper.batch_size):
            idx = perm[lo:lo + hyper.batch_size]
            mse, grads = loss_and_grads(work, train_ds.inputs[idx], train_ds.targets[idx])
            if not math.isfinite(mse):
                raise Diverged(f"training loss became non-finite at epoch {epoch}")
            total += mse * len(idx)
            step += 1
            bc1 = 1.0 - hyper.beta1 ** step
            bc2 = 1.0 - hyper.beta2 ** step
            for key, g in grads.items():
                m[key] = hyper.beta1 * m[key] + (1.0 - hyper.beta1) * g
                v[key] = hyper.beta2 * v[key] + (1.0 - hyper.beta2) * (g * g)
                work.params[key] -= (hyper.learning_rate * (m[key] / bc1)
                                     / (np.sqrt(v[key] / bc2) + hyper.eps))
        train_mse = total / train_ds.num_windows
        val_mse = _val_mse(work, val_ds)
        if not math.isfinite(val_mse):
            raise Diverged(f"validation loss became non-finite at epoch {epoch}")
        report.train_mse.append(train_mse)
        report.val_mse.append(val_mse)
        if val_mse < best_val:
            best_val = val_mse
            best_params = {k: p.copy() for k, p in work.params.items()}
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale > hyper.patience:
                break

    report.best_epoch = best_epoch
    report.final_epoch = len(report.val_mse) - 1
    if best_params is not None:
        work.params = best_params
    return work, report
