"""Multi-channel residual CNN for motion-artifact prediction.

Layer stack (all kernels 3x3, zero "same" padding)::

    layer 1            conv  n_channels -> n_filters, ReLU
    layer 2..n_conv+1  conv  n_filters  -> n_filters, batch norm, ReLU
    layer n_conv+2     conv  n_filters  -> n_channels

The network predicts the artifact (residual) component; the clean image is
the input minus the prediction. Public functions take ``(N, C, H, W)``
batches. Internally activations are kept channel-last so every convolution
is a single ``(N*H*W, 9*C) @ (9*C, F)`` matrix product over windowed views.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .mrt import read_mrt, write_mrt
from .numerics import Rng

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
FORMAT_VERSION = 1

TRAINABLE = ("kernel", "bias", "gamma", "beta")
BUFFERS = ("rmean", "rvar")


@dataclass(frozen=True)
class LayerSpec:
    index: int  # 1-based
    kind: str  # "conv_relu" | "conv_bn_relu" | "conv"
    c_in: int
    c_out: int

    @property
    def has_bn(self) -> bool:
        return self.kind == "conv_bn_relu"

    @property
    def has_relu(self) -> bool:
        return self.kind != "conv"


def layer_specs(n_conv: int, n_filters: int, n_channels: int) -> list[LayerSpec]:
    specs = [LayerSpec(1, "conv_relu", n_channels, n_filters)]
    specs += [LayerSpec(i + 2, "conv_bn_relu", n_filters, n_filters) for i in range(n_conv)]
    specs.append(LayerSpec(n_conv + 2, "conv", n_filters, n_channels))
    return specs


def marc_param_count(n_conv: int, n_filters: int = 64, n_channels: int = 7) -> int:
    """Closed-form parameter count, batch norm contributing 4 values per channel."""
    head = 9 * n_channels * n_filters + n_filters
    block = 9 * n_filters * n_filters + n_filters + 4 * n_filters
    tail = 9 * n_filters * n_channels + n_channels
    return head + n_conv * block + tail


class MarcModel:
    """Layer descriptors plus a flat ``name -> ndarray`` parameter table.

    Parameter names are ``layer{i}_{kernel|bias|gamma|beta|rmean|rvar}``;
    kernels are stored ``(c_out, c_in, 3, 3)``.
    """

    def __init__(self, n_conv: int, n_filters: int, n_channels: int, params: dict, dtype=np.float32):
        self.n_conv = n_conv
        self.n_filters = n_filters
        self.n_channels = n_channels
        self.dtype = np.dtype(dtype)
        self.layers = layer_specs(n_conv, n_filters, n_channels)
        self.params = params
        self._cache = None

    @property
    def depth(self) -> int:
        return len(self.layers)

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if k.rsplit("_", 1)[1] in TRAINABLE}

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.params[k][...] = v

    def astype(self, dtype) -> "MarcModel":
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        return MarcModel(self.n_conv, self.n_filters, self.n_channels, params, dtype)


def build_marc(n_conv: int, n_filters: int = 64, n_channels: int = 7, seed: int = 0, dtype=np.float32) -> MarcModel:
    """He-initialized kernels, zero biases, identity batch norm."""
    if n_conv < 1:
        raise ValueError(f"n_conv must be at least 1, got {n_conv}")
    if n_filters < 1 or n_channels < 1:
        raise ValueError("n_filters and n_channels must be positive")
    rng = Rng(seed)
    params: dict[str, np.ndarray] = {}
    for spec in layer_specs(n_conv, n_filters, n_channels):
        std = np.sqrt(2.0 / (9 * spec.c_in))
        p = f"layer{spec.index}_"
        params[p + "kernel"] = rng.normal((spec.c_out, spec.c_in, 3, 3), scale=std).astype(dtype)
        params[p + "bias"] = np.zeros(spec.c_out, dtype=dtype)
        if spec.has_bn:
            params[p + "gamma"] = np.ones(spec.c_out, dtype=dtype)
            params[p + "beta"] = np.zeros(spec.c_out, dtype=dtype)
            params[p + "rmean"] = np.zeros(spec.c_out, dtype=dtype)
            params[p + "rvar"] = np.ones(spec.c_out, dtype=dtype)
    return MarcModel(n_conv, n_filters, n_channels, params, dtype)


def param_count(model: MarcModel) -> int:
    return int(sum(v.size for v in model.params.values()))


# --- primitives (channel-last) ---------------------------------------------


def _im2col(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # n, h, w, c, dy, dx
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * w, 9 * c)


def _kernel_matrix(kernel: np.ndarray) -> np.ndarray:
    f, c = kernel.shape[:2]
    return kernel.transpose(2, 3, 1, 0).reshape(9 * c, f)


def _colsum(x2: np.ndarray) -> np.ndarray:
    # GEMV is far faster than ndarray.sum(axis=0) on tall, narrow arrays
    return np.ones(x2.shape[0], dtype=x2.dtype) @ x2


def conv_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, keep_cols: bool = False):
    n, h, w, _ = x.shape
    cols = _im2col(x)
    out = cols @ _kernel_matrix(kernel)
    out += bias
    out = out.reshape(n, h, w, kernel.shape[0])
    return (out, cols) if keep_cols else out


def conv_backward(cols: np.ndarray, kernel: np.ndarray, g: np.ndarray, need_dx: bool = True):
    """Gradients of a same-padded 3x3 convolution, given the forward im2col matrix.

    The input gradient is itself a same-padded correlation of ``g`` with the
    spatially flipped, channel-transposed kernel.
    """
    f, c = kernel.shape[:2]
    g2 = g.reshape(-1, f)
    dk = (cols.T @ g2).reshape(3, 3, c, f).transpose(3, 2, 0, 1)
    db = _colsum(g2)
    dx = None
    if need_dx:
        flipped = kernel[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        dx = conv_forward(g, flipped, np.zeros(c, dtype=g.dtype))
    return dx, np.ascontiguousarray(dk), db


def bn_train_forward(x, gamma, beta, eps=BN_EPS):
    """Batch norm with statistics over N, H, W; returns (y, xhat, inv_std, mean, var)."""
    x2 = x.reshape(-1, x.shape[-1])
    m = x2.shape[0]
    mean = _colsum(x2) / m
    xc = x2 - mean
    var = _colsum(xc * xc) / m
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    y = xhat * gamma + beta
    return y.reshape(x.shape), xhat.reshape(x.shape), inv_std, mean, var


def bn_backward(g, xhat, inv_std, gamma):
    c = g.shape[-1]
    g2 = g.reshape(-1, c)
    xh = xhat.reshape(-1, c)
    m = g2.shape[0]
    dbeta = _colsum(g2)
    dgamma = _colsum(g2 * xh)
    dx = (g2 - dbeta / m - xh * (dgamma / m)) * (gamma * inv_std)
    return dx.reshape(g.shape), dgamma, dbeta


# --- network ----------------------------------------------------------------


def _to_internal(model: MarcModel, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch)
    if batch.ndim != 4:
        raise ValueError(f"expected an (N, C, H, W) batch, got shape {batch.shape}")
    if batch.shape[1] != model.n_channels:
        raise ValueError(f"model expects {model.n_channels} channels, batch has {batch.shape[1]}")
    if batch.shape[2] < 3 or batch.shape[3] < 3:
        raise ValueError(f"spatial size must be at least 3x3, got {batch.shape[2:]}")
    return np.ascontiguousarray(batch.transpose(0, 2, 3, 1), dtype=model.dtype)


def _run(model: MarcModel, x: np.ndarray, train: bool, stop_at: int | None = None, taps=()):
    """Push a channel-last batch through the stack; returns (output, cache, tapped maps)."""
    p = model.params
    cache = []
    tapped = {}
    for spec in model.layers:
        pre = f"layer{spec.index}_"
        y, cols = conv_forward(x, p[pre + "kernel"], p[pre + "bias"], keep_cols=True)
        entry = {"cols": cols}
        if spec.has_bn:
            gamma, beta = p[pre + "gamma"], p[pre + "beta"]
            if train:
                y, xhat, inv_std, mean, var = bn_train_forward(y, gamma, beta)
                entry.update(xhat=xhat, inv_std=inv_std)
                p[pre + "rmean"][...] = BN_MOMENTUM * p[pre + "rmean"] + (1 - BN_MOMENTUM) * mean
                p[pre + "rvar"][...] = BN_MOMENTUM * p[pre + "rvar"] + (1 - BN_MOMENTUM) * var
            else:
                scale = gamma / np.sqrt(p[pre + "rvar"] + BN_EPS)
                y = y * scale + (beta - p[pre + "rmean"] * scale)
        if spec.has_relu:
            np.maximum(y, 0, out=y)
            if train:
                entry["active"] = y > 0
        if train:
            cache.append(entry)
        if spec.index in taps:
            tapped[spec.index] = y
        x = y
        if stop_at is not None and spec.index == stop_at:
            break
    return x, cache, tapped


def forward(model: MarcModel, batch: np.ndarray, mode: str = "infer") -> np.ndarray:
    """Predicted residual for an (N, C, H, W) batch.

    ``mode="train"`` normalizes with batch statistics, updates the running
    statistics and keeps the activations needed by :func:`backward`.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = _to_internal(model, batch)
    out, cache, _ = _run(model, x, train=mode == "train")
    model._cache = (batch, cache) if mode == "train" else None
    return out.transpose(0, 3, 1, 2)


def backward(model: MarcModel, batch: np.ndarray, grad_out: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of every trainable parameter given dLoss/dOutput.

    Must follow ``forward(model, batch, "train")`` on the same batch; running
    statistics receive no gradient.
    """
    if model._cache is None:
        raise RuntimeError("backward called without a preceding train-mode forward")
    cached_batch, cache = model._cache
    if cached_batch is not batch and not (
        np.shape(cached_batch) == np.shape(batch) and np.array_equal(cached_batch, batch)
    ):
        raise RuntimeError("backward called with a batch different from the last forward")
    g = np.asarray(grad_out)
    if g.shape != np.shape(batch):
        raise ValueError(f"grad_out shape {g.shape} does not match output shape {np.shape(batch)}")
    g = np.ascontiguousarray(g.transpose(0, 2, 3, 1), dtype=model.dtype)
    p = model.params
    grads = {}
    for spec, entry in zip(reversed(model.layers), reversed(cache)):
        pre = f"layer{spec.index}_"
        if spec.has_relu:
            g = g * entry["active"]
        if spec.has_bn:
            g, grads[pre + "gamma"], grads[pre + "beta"] = bn_backward(
                g, entry["xhat"], entry["inv_std"], p[pre + "gamma"]
            )
        g, grads[pre + "kernel"], grads[pre + "bias"] = conv_backward(
            entry["cols"], p[pre + "kernel"], g, need_dx=spec.index > 1
        )
    return grads


def predict(model: MarcModel, batch: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Inference-mode forward in chunks of ``batch_size`` samples."""
    batch = np.asarray(batch)
    out = np.empty(batch.shape, dtype=model.dtype)
    for start in range(0, batch.shape[0], batch_size):
        out[start : start + batch_size] = forward(model, batch[start : start + batch_size], "infer")
    return out


def denoise(model: MarcModel, volume: np.ndarray, batch_size: int = 4, clamp: bool = True):
    """Full-slice artifact removal on a ``(phase, slice, H, W)`` volume.

    Every slice is one ``(phases, H, W)`` network input. Returns
    ``(denoised, residual)``; ``denoised = volume - residual``, clamped to be
    non-negative when ``clamp`` is set. The volume should already be
    normalized the way the training patches were.
    """
    volume = np.asarray(volume)
    if volume.ndim != 4:
        raise ValueError(f"expected a (phase, slice, H, W) volume, got shape {volume.shape}")
    if volume.shape[0] != model.n_channels:
        raise ValueError(f"model expects {model.n_channels} phases, volume has {volume.shape[0]}")
    slices = volume.transpose(1, 0, 2, 3)
    residual = predict(model, slices, batch_size).transpose(1, 0, 2, 3)
    denoised = volume.astype(model.dtype) - residual
    if clamp:
        np.maximum(denoised, 0, out=denoised)
    return denoised, residual


def extract_features(model: MarcModel, batch: np.ndarray, layer_indices) -> list[np.ndarray]:
    """Post-activation maps (N, F, H, W) at the given 1-based layer indices, inference mode."""
    indices = [int(i) for i in layer_indices]
    for i in indices:
        if not 1 <= i <= model.depth:
            raise IndexError(f"layer index {i} outside 1..{model.depth}")
    x = _to_internal(model, batch)
    _, _, tapped = _run(model, x, train=False, stop_at=max(indices), taps=set(indices))
    return [tapped[i].transpose(0, 3, 1, 2).copy() for i in indices]


# --- bundle I/O -------------------------------------------------------------

MANIFEST = "manifest.txt"


def save_model(model: MarcModel, directory: str | os.PathLike) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [
        f"format_version = {FORMAT_VERSION}",
        f"n_conv = {model.n_conv}",
        f"n_filters = {model.n_filters}",
        f"n_channels = {model.n_channels}",
        f"dtype = {model.dtype.name}",
        f"bn_eps = {BN_EPS!r}",
        f"bn_momentum = {BN_MOMENTUM!r}",
    ]
    for spec in model.layers:
        lines.append(f"layer{spec.index} = {spec.kind} in={spec.c_in} out={spec.c_out} kernel=3x3")
    (d / MANIFEST).write_text("\n".join(lines) + "\n")
    for name, arr in model.params.items():
        write_mrt(d / f"{name}.mrt", np.ascontiguousarray(arr, dtype=np.float64 if arr.dtype == np.float64 else np.float32))


def load_model(directory: str | os.PathLike) -> MarcModel:
    d = Path(directory)
    path = d / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"model bundle has no {path}")
    meta = {}
    for line in path.read_text().splitlines():
        key, sep, value = line.partition("=")
        if sep:
            meta[key.strip()] = value.strip()
    if int(meta.get("format_version", -1)) != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {meta.get('format_version')}")
    n_conv, n_filters, n_channels = (int(meta[k]) for k in ("n_conv", "n_filters", "n_channels"))
    dtype = np.dtype(meta.get("dtype", "float32"))
    template = build_marc(n_conv, n_filters, n_channels, dtype=dtype)
    params = {}
    for name, ref in template.params.items():
        arr = read_mrt(d / f"{name}.mrt")
        if arr.shape != ref.shape:
            raise ValueError(f"{name}: stored shape {arr.shape}, expected {ref.shape}")
        params[name] = arr.astype(dtype)
    return MarcModel(n_conv, n_filters, n_channels, params, dtype)
