"""Dense, 1D convolution and average pooling with hand-written backward passes.

Forward functions return ``(output, cache)``; backward functions need that
cache and refuse to run without it. Nothing here mutates parameters, so a
frozen store can be shared by concurrent forward callers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("relu", "linear")


class ShapeError(ValueError):
    pass


def rowwise_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w`` computed one row at a time.

    Every row goes through the same kernel whatever the batch size, so a
    sample's output does not depend on which other rows share its batch.
    Plain gemm does not give that guarantee for narrow outputs.
    """
    return np.matmul(x[:, None, :], w)[:, 0, :]


def _check_activation(activation: str) -> None:
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


@dataclass
class DenseCache:
    x: np.ndarray
    z: np.ndarray
    activation: str


def dense_forward(x, w, b, activation="linear"):
    _check_activation(activation)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: input shape {x.shape} does not match weights shape {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias shape {b.shape} does not match weights shape {w.shape}")
    z = rowwise_matmul(x, w) + b
    out = np.maximum(z, 0.0) if activation == "relu" else z
    return out, DenseCache(x, z, activation)


def dense_backward(grad, cache: DenseCache | None, w):
    """Return ``(input_grad, weight_grad, bias_grad)``. relu'(0) is taken as 0."""
    if cache is None:
        raise RuntimeError("dense_backward called without a cached forward pass")
    if grad.shape != cache.z.shape:
        raise ShapeError(f"dense: upstream grad shape {grad.shape} vs output shape {cache.z.shape}")
    if cache.activation == "relu":
        grad = grad * (cache.z > 0.0)
    dx = grad @ w.T
    dw = cache.x.T @ grad
    db = grad.sum(axis=0)
    return dx, dw, db


@dataclass
class ConvCache:
    cols: np.ndarray  # (batch, L_out, C_in * K)
    in_shape: tuple
    padding: int


def conv1d_forward(x, kernels, bias, padding=0):
    """Zero-padded cross-correlation: (B, C_in, L) -> (B, C_out, L + 2p - K + 1)."""
    if x.ndim != 3 or kernels.ndim != 3 or x.shape[1] != kernels.shape[1]:
        raise ShapeError(f"conv1d: input shape {x.shape} does not match kernels shape {kernels.shape}")
    if bias.shape != (kernels.shape[0],):
        raise ShapeError(f"conv1d: bias shape {bias.shape} vs kernels shape {kernels.shape}")
    if padding < 0:
        raise ValueError("conv1d: padding must be >= 0")
    batch, c_in, length = x.shape
    c_out, _, k = kernels.shape
    l_out = length + 2 * padding - k + 1
    if l_out <= 0:
        raise ShapeError(f"conv1d: output length {l_out} for L={length}, K={k}, padding={padding}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    windows = sliding_window_view(xp, k, axis=2)  # (B, C_in, L_out, K)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(batch * l_out, c_in * k)
    wmat = kernels.reshape(c_out, c_in * k)
    out = rowwise_matmul(cols, wmat.T).reshape(batch, l_out, c_out) + bias
    return (
        np.ascontiguousarray(out.transpose(0, 2, 1)),
        ConvCache(cols.reshape(batch, l_out, c_in * k), x.shape, padding),
    )


def conv1d_backward(grad, cache: ConvCache | None, kernels):
    """Return ``(input_grad, kernel_grad, bias_grad)``."""
    if cache is None:
        raise RuntimeError("conv1d_backward called without a cached forward pass")
    batch, c_in, length = cache.in_shape
    c_out, _, k = kernels.shape
    l_out = cache.cols.shape[1]
    if grad.shape != (batch, c_out, l_out):
        raise ShapeError(f"conv1d: upstream grad shape {grad.shape}, expected {(batch, c_out, l_out)}")
    g2 = grad.transpose(0, 2, 1).reshape(batch * l_out, c_out)
    cols = cache.cols.reshape(batch * l_out, c_in * k)
    dk = (g2.T @ cols).reshape(c_out, c_in, k)
    db = grad.sum(axis=(0, 2))
    dcols = (g2 @ kernels.reshape(c_out, c_in * k)).reshape(batch, l_out, c_in, k)
    p = cache.padding
    dxp = np.zeros((batch, c_in, length + 2 * p))
    for j in range(k):
        dxp[:, :, j:j + l_out] += dcols[:, :, :, j].transpose(0, 2, 1)
    dx = dxp[:, :, p:p + length] if p else dxp
    return dx, dk, db


def avgpool1d_forward(x, window):
    if x.ndim != 3:
        raise ShapeError(f"avgpool1d: expected (batch, channels, length), got {x.shape}")
    if window < 1 or x.shape[2] % window:
        raise ShapeError(f"avgpool1d: window {window} does not divide length {x.shape[2]}")
    b, c, length = x.shape
    out = x.reshape(b, c, length // window, window).mean(axis=3)
    return out, (x.shape, window)


def avgpool1d_backward(grad, cache):
    if cache is None:
        raise RuntimeError("avgpool1d_backward called without a cached forward pass")
    shape, window = cache
    return np.repeat(grad / window, window, axis=2).reshape(shape)


def avgpool1d(x, window):
    return avgpool1d_forward(x, window)[0]


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Dense:
    def __init__(self, name: str, in_dim: int, out_dim: int, activation: str = "linear"):
        if in_dim < 1 or out_dim < 1:
            raise ValueError(f"dense {name}: in_dim and out_dim must be >= 1")
        _check_activation(activation)
        self.name, self.in_dim, self.out_dim, self.activation = name, in_dim, out_dim, activation

    @property
    def shapes(self):
        return {f"{self.name}.weight": (self.in_dim, self.out_dim), f"{self.name}.bias": (self.out_dim,)}

    def init(self, store, rng):
        store.add(f"{self.name}.weight",
                  glorot_uniform(rng, (self.in_dim, self.out_dim), self.in_dim, self.out_dim))
        store.add(f"{self.name}.bias", np.zeros(self.out_dim))

    def forward(self, store, x):
        return dense_forward(x, store[f"{self.name}.weight"], store[f"{self.name}.bias"], self.activation)

    def backward(self, store, cache, grad):
        w = store[f"{self.name}.weight"]
        dx, dw, db = dense_backward(grad, cache, w)
        store.accumulate(f"{self.name}.weight", dw)
        store.accumulate(f"{self.name}.bias", db)
        return dx


class Conv1d:
    def __init__(self, name: str, in_channels: int, out_channels: int, kernel: int, padding: int = 0):
        if kernel < 1 or padding < 0 or in_channels < 1 or out_channels < 1:
            raise ValueError(f"conv1d {name}: invalid geometry")
        self.name = name
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.padding = kernel, padding

    @property
    def shapes(self):
        return {
            f"{self.name}.weight": (self.out_channels, self.in_channels, self.kernel),
            f"{self.name}.bias": (self.out_channels,),
        }

    def init(self, store, rng):
        shape = (self.out_channels, self.in_channels, self.kernel)
        store.add(f"{self.name}.weight", glorot_uniform(
            rng, shape, self.in_channels * self.kernel, self.out_channels * self.kernel))
        store.add(f"{self.name}.bias", np.zeros(self.out_channels))

    def forward(self, store, x):
        return conv1d_forward(x, store[f"{self.name}.weight"], store[f"{self.name}.bias"], self.padding)

    def backward(self, store, cache, grad):
        dx, dk, db = conv1d_backward(grad, cache, store[f"{self.name}.weight"])
        store.accumulate(f"{self.name}.weight", dk)
        store.accumulate(f"{self.name}.bias", db)
        return dx
