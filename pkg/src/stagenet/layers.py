"""Differentiable layers with explicit forward and backward passes.

Every layer caches what its backward pass needs during ``forward`` and
must not be asked for gradients before running it.  Convolution uses the
cross-correlation convention (no kernel flip).  Parameters are plain
numpy arrays owned by the layer and updated in place by the optimizer;
activations passed between layers are read-only.

Weight init is fan-in-scaled uniform (bound sqrt(6/fan_in)) for conv and
linear; batchnorm starts at gamma=1, beta=0.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import SeededRng


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    """ln(1 + exp(x)) computed without overflow; positive for all finite x
    that do not underflow exp (|x| beyond ~745 in float64)."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


class Layer:
    """Base class: subclasses fill ``params``/``grads`` with matching keys."""

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.training = True
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise ContractError(f"{self.kind}: backward called before forward")
        return self._cache

    def set_training(self, flag: bool):
        self.training = bool(flag)

    def zero_grads(self):
        for k in self.params:
            self.grads[k] = np.zeros_like(self.params[k])

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state that checkpoints must persist."""
        return {}


class Conv2d(Layer):
    """k x k cross-correlation, k in {1, 3}, with optional bias.

    Output spatial extent is floor((H + 2*pad - k)/stride) + 1; pad 1 with
    stride 1 and k=3 keeps the feature size fixed.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, pad: int = 0, bias: bool = True,
                 rng: SeededRng | None = None, dtype=np.float32):
        super().__init__()
        if kernel_size not in (1, 3):
            raise ContractError(f"kernel size must be 1 or 3, got {kernel_size}")
        self.kind = f"conv{kernel_size}x{kernel_size}"
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.pad = pad
        fan_in = in_channels * kernel_size * kernel_size
        bound = np.sqrt(6.0 / fan_in)
        rng = rng if rng is not None else SeededRng(0)
        w = rng.uniform(-bound, bound, (out_channels, in_channels, kernel_size, kernel_size))
        self.params["weight"] = w.astype(dtype)
        if bias:
            self.params["bias"] = np.zeros(out_channels, dtype=dtype)
        self.zero_grads()

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel_size, self.stride, self.pad
        if h + 2 * p < k or w + 2 * p < k:
            raise ShapeError(f"{self.kind}: input {h}x{w} too small for k={k}, pad={p}")
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def _pad(self, x: np.ndarray) -> np.ndarray:
        if self.pad == 0:
            return x
        p = self.pad
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        if c != self.in_channels:
            raise ShapeError(f"{self.kind}: expected {self.in_channels} channels, got {c}")
        ho, wo = self.out_hw(h, w)
        k, s = self.kernel_size, self.stride
        xp = self._pad(x)
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        win = win[:, :, ::s, ::s]
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * ho * wo, c * k * k)
        wmat = self.params["weight"].reshape(self.out_channels, -1)
        out = cols @ wmat.T
        if "bias" in self.params:
            out += self.params["bias"]
        out = np.ascontiguousarray(out.reshape(b, ho, wo, self.out_channels).transpose(0, 3, 1, 2))
        self._cache = (x.shape, xp, ho, wo)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x_shape, xp, ho, wo = self._need_cache()
        k, s, p = self.kernel_size, self.stride, self.pad
        w = self.params["weight"]
        dw = self.grads["weight"]
        dxp = np.zeros_like(xp)
        # Accumulate per kernel position: equal work to the forward pass,
        # no scatter needed because each (ki,kj) hits a strided slice.
        for ki in range(k):
            for kj in range(k):
                xs = xp[:, :, ki:ki + s * ho:s, kj:kj + s * wo:s]
                dw[:, :, ki, kj] += np.tensordot(grad_out, xs, axes=([0, 2, 3], [0, 2, 3]))
                contrib = np.tensordot(grad_out, w[:, :, ki, kj], axes=([1], [0]))
                dxp[:, :, ki:ki + s * ho:s, kj:kj + s * wo:s] += contrib.transpose(0, 3, 1, 2)
        if "bias" in self.params:
            self.grads["bias"] += grad_out.sum(axis=(0, 2, 3))
        if p:
            return np.ascontiguousarray(dxp[:, :, p:-p, p:-p])
        return dxp


class MaxPool2x2(Layer):
    """2x2 max pooling with stride 2; ties route to the lowest linear index."""

    kind = "maxpool2x2"

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        if h < 2 or w < 2:
            raise ShapeError(f"maxpool2x2: spatial extents {h}x{w} below window")
        return (h - 2) // 2 + 1, (w - 2) // 2 + 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        ho, wo = self.out_hw(h, w)
        win = np.lib.stride_tricks.sliding_window_view(x, (2, 2), axis=(2, 3))
        win = win[:, :, ::2, ::2].reshape(b, c, ho, wo, 4)
        idx = np.argmax(win, axis=-1)
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, idx)
        return np.ascontiguousarray(out)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x_shape, idx = self._need_cache()
        b, c, h, w = x_shape
        ho, wo = grad_out.shape[2], grad_out.shape[3]
        scat = np.zeros((b, c, ho, wo, 4), dtype=grad_out.dtype)
        np.put_along_axis(scat, idx[..., None], grad_out[..., None], axis=-1)
        dx = np.zeros(x_shape, dtype=grad_out.dtype)
        block = scat.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        dx[:, :, :2 * ho, :2 * wo] = block.reshape(b, c, 2 * ho, 2 * wo)
        return dx


class AdaptiveMaxPool(Layer):
    """Global spatial max per channel (fixed (1,1) output size).

    Works for any spatial extents, so score heads become independent of
    the input resolution.  Ties route to the lowest linear index.
    """

    kind = "adaptive_maxpool"

    def __init__(self, out_size=(1, 1)):
        super().__init__()
        if tuple(out_size) != (1, 1):
            raise ContractError("only (1,1) adaptive pooling is supported")

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        flat = x.reshape(b, c, h * w)
        idx = np.argmax(flat, axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)
        self._cache = (x.shape, idx)
        return np.ascontiguousarray(out.reshape(b, c, 1, 1))

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x_shape, idx = self._need_cache()
        b, c, h, w = x_shape
        dx = np.zeros((b, c, h * w), dtype=grad_out.dtype)
        np.put_along_axis(dx, idx[..., None], grad_out.reshape(b, c, 1), axis=-1)
        return dx.reshape(x_shape)


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (batch, height, width).

    Train mode normalizes by batch statistics and updates running
    statistics with the configured momentum; eval mode is a pure function
    of the running statistics.  Variance uses the 1/M convention both for
    normalization and for the running buffer.
    """

    kind = "batchnorm2d"

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.zero_grads()

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        if c != self.channels:
            raise ShapeError(f"batchnorm2d: expected {self.channels} channels, got {c}")
        gamma = self.params["gamma"].reshape(1, c, 1, 1)
        beta = self.params["beta"].reshape(1, c, 1, 1)
        if self.training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            self.running_mean += m * (mean.astype(self.running_mean.dtype) - self.running_mean)
            self.running_var += m * (var.astype(self.running_var.dtype) - self.running_var)
        else:
            mean = self.running_mean
            var = self.running_var
        invstd = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(1, c, 1, 1)) * invstd.reshape(1, c, 1, 1)
        self._cache = (xhat, invstd, b * h * w)
        return gamma * xhat + beta

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        xhat, invstd, m = self._need_cache()
        c = self.channels
        gamma = self.params["gamma"].reshape(1, c, 1, 1)
        dbeta = grad_out.sum(axis=(0, 2, 3))
        dgamma = (grad_out * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] += dbeta
        self.grads["gamma"] += dgamma
        if not self.training:
            return grad_out * gamma * invstd.reshape(1, c, 1, 1)
        g = grad_out * gamma
        sum_g = g.sum(axis=(0, 2, 3), keepdims=True)
        sum_gx = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dx = (invstd.reshape(1, c, 1, 1) / m) * (m * g - sum_g - xhat * sum_gx)
        return dx.astype(grad_out.dtype)


class Linear(Layer):
    """Affine map x @ W + b with W of shape (in_features, out_features)."""

    kind = "linear"

    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: SeededRng | None = None, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        bound = np.sqrt(6.0 / in_features)
        rng = rng if rng is not None else SeededRng(0)
        w = rng.uniform(-bound, bound, (in_features, out_features))
        self.params["weight"] = w.astype(dtype)
        if bias:
            self.params["bias"] = np.zeros(out_features, dtype=dtype)
        self.zero_grads()

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"linear: expected (B,{self.in_features}), got {x.shape}")
        self._cache = x
        out = x @ self.params["weight"]
        if "bias" in self.params:
            out = out + self.params["bias"]
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x = self._need_cache()
        self.grads["weight"] += x.T @ grad_out
        if "bias" in self.params:
            self.grads["bias"] += grad_out.sum(axis=0)
        return grad_out @ self.params["weight"].T


class ReLU(Layer):
    kind = "relu"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x > 0
        return np.maximum(x, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        mask = self._need_cache()
        return grad_out * mask


class Softplus(Layer):
    """Smooth positive activation ln(1+exp(x)); derivative is the logistic."""

    kind = "softplus"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x
        return softplus(x)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x = self._need_cache()
        return grad_out * _sigmoid(x)


def add_skip(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise residual addition; shapes must already match."""
    if a.shape != b.shape:
        raise ShapeError(f"add_skip: {a.shape} vs {b.shape}")
    return a + b


class GradTape:
    """Ordered record of executed layers; backward replays them reversed."""

    def __init__(self):
        self.nodes: list[Layer] = []

    def run(self, layer: Layer, x: np.ndarray) -> np.ndarray:
        out = layer.forward(x)
        self.nodes.append(layer)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.nodes):
            grad = layer.backward(grad)
        return grad

    def clear(self):
        self.nodes.clear()
