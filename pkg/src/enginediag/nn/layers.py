"""Layers with explicit forward/backward passes over numpy arrays.

Convolutions use cross-correlation semantics with no padding; pooling is
non-overlapping with first-maximum tie-breaking so gradients are
deterministic.  Convolution forward lowers to one GEMM via im2col; the
patch matrix is rebuilt in backward rather than cached, trading a little
compute for peak memory.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import AllMasked, ShapeMismatch


class Parameter:
    """A trainable array with an accumulated gradient."""

    __slots__ = ("name", "data", "grad", "requires_grad")

    def __init__(self, name: str, data: np.ndarray, requires_grad: bool = True):
        self.name = name
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad

    def zero_grad(self) -> None:
        self.grad = None

    def add_grad(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g


class Layer:
    """Base layer: stateless unless it declares parameters or buffers."""

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[Parameter]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        return {}


def _init_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, *, rng, dtype=np.float32):
        self.in_channels = in_channels
        self.kernel = kernel
        self.stride = stride
        self.weight = Parameter("weight", _init_uniform(
            rng, (out_channels, in_channels, kernel), in_channels * kernel, dtype))
        self.bias = Parameter("bias", np.zeros(out_channels, dtype=dtype))
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def _patches(self, x):
        # (b, w_out, c_in * kernel)
        v = sliding_window_view(x, self.kernel, axis=2)[:, :, ::self.stride]
        return np.ascontiguousarray(v.transpose(0, 2, 1, 3)).reshape(
            x.shape[0], -1, self.in_channels * self.kernel)

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(
                f"conv1d expects (b, {self.in_channels}, w), got {x.shape}")
        if x.shape[2] < self.kernel:
            raise ShapeMismatch(
                f"input width {x.shape[2]} < kernel {self.kernel}")
        self._x = x
        w_flat = self.weight.data.reshape(self.weight.data.shape[0], -1)
        out = self._patches(x) @ w_flat.T + self.bias.data
        return np.ascontiguousarray(out.transpose(0, 2, 1))

    def backward(self, dout):
        x = self._x
        b, c_out, w_out = dout.shape
        dflat = np.ascontiguousarray(dout.transpose(0, 2, 1)).reshape(-1, c_out)
        patches = self._patches(x).reshape(dflat.shape[0], -1)
        self.weight.add_grad((dflat.T @ patches).reshape(self.weight.data.shape))
        self.bias.add_grad(dout.sum(axis=(0, 2)))
        dpatches = (dflat @ self.weight.data.reshape(c_out, -1)).reshape(
            b, w_out, self.in_channels, self.kernel)
        dpatches = dpatches.transpose(0, 2, 1, 3)  # (b, c_in, w_out, k)
        dx = np.zeros_like(x)
        span = self.stride * (w_out - 1) + 1
        for j in range(self.kernel):
            dx[:, :, j:j + span:self.stride] += dpatches[:, :, :, j]
        return dx


class Conv2d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int | tuple,
                 stride: int = 1, *, rng, dtype=np.float32):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        self.in_channels = in_channels
        self.kh, self.kw = kh, kw
        self.stride = stride
        self.weight = Parameter("weight", _init_uniform(
            rng, (out_channels, in_channels, kh, kw), in_channels * kh * kw, dtype))
        self.bias = Parameter("bias", np.zeros(out_channels, dtype=dtype))
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def _patches(self, x):
        # (b, h_out * w_out, c_in * kh * kw)
        v = sliding_window_view(x, (self.kh, self.kw), axis=(2, 3))
        v = v[:, :, ::self.stride, ::self.stride]
        return np.ascontiguousarray(v.transpose(0, 2, 3, 1, 4, 5)).reshape(
            x.shape[0], -1, self.in_channels * self.kh * self.kw)

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(
                f"conv2d expects (b, {self.in_channels}, h, w), got {x.shape}")
        if x.shape[2] < self.kh or x.shape[3] < self.kw:
            raise ShapeMismatch(
                f"input {x.shape[2:]} smaller than kernel ({self.kh}, {self.kw})")
        self._x = x
        self._out_hw = ((x.shape[2] - self.kh) // self.stride + 1,
                        (x.shape[3] - self.kw) // self.stride + 1)
        w_flat = self.weight.data.reshape(self.weight.data.shape[0], -1)
        out = self._patches(x) @ w_flat.T + self.bias.data
        h_out, w_out = self._out_hw
        return np.ascontiguousarray(
            out.transpose(0, 2, 1)).reshape(x.shape[0], -1, h_out, w_out)

    def backward(self, dout):
        x = self._x
        b, c_out = dout.shape[:2]
        h_out, w_out = self._out_hw
        dflat = np.ascontiguousarray(
            dout.reshape(b, c_out, -1).transpose(0, 2, 1)).reshape(-1, c_out)
        patches = self._patches(x).reshape(dflat.shape[0], -1)
        self.weight.add_grad((dflat.T @ patches).reshape(self.weight.data.shape))
        self.bias.add_grad(dout.sum(axis=(0, 2, 3)))
        dpatches = (dflat @ self.weight.data.reshape(c_out, -1)).reshape(
            b, h_out * w_out, self.in_channels, self.kh, self.kw)
        dpatches = dpatches.reshape(b, h_out, w_out, self.in_channels, self.kh, self.kw)
        dx = np.zeros_like(x)
        hspan = self.stride * (h_out - 1) + 1
        wspan = self.stride * (w_out - 1) + 1
        for i in range(self.kh):
            for j in range(self.kw):
                dx[:, :, i:i + hspan:self.stride, j:j + wspan:self.stride] += \
                    dpatches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx


class ReLU(Layer):
    def forward(self, x, training=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class MaxPool1d(Layer):
    """Non-overlapping max pooling; the window shrinks to the input width
    when the input is narrower than the nominal pool size."""

    def __init__(self, size: int):
        self.size = size

    def forward(self, x, training=False):
        b, c, w = x.shape
        size = min(self.size, w)
        w_out = w // size
        trimmed = x[:, :, :w_out * size].reshape(b, c, w_out, size)
        self._argmax = trimmed.argmax(axis=3)
        self._in_shape = x.shape
        self._size = size
        return np.take_along_axis(trimmed, self._argmax[..., None], axis=3)[..., 0]

    def backward(self, dout):
        b, c, w = self._in_shape
        size = self._size
        w_out = dout.shape[2]
        dtrim = np.zeros((b, c, w_out, size), dtype=dout.dtype)
        np.put_along_axis(dtrim, self._argmax[..., None], dout[..., None], axis=3)
        dx = np.zeros(self._in_shape, dtype=dout.dtype)
        dx[:, :, :w_out * size] = dtrim.reshape(b, c, w_out * size)
        return dx


class MaxPool2d(Layer):
    """2D non-overlapping max pooling with per-dimension window clamping."""

    def __init__(self, size: int):
        self.size = size

    def forward(self, x, training=False):
        b, c, h, w = x.shape
        ph, pw = min(self.size, h), min(self.size, w)
        h_out, w_out = h // ph, w // pw
        trimmed = x[:, :, :h_out * ph, :w_out * pw]
        windows = trimmed.reshape(b, c, h_out, ph, w_out, pw)
        windows = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 3, 5))
        flat = windows.reshape(b, c, h_out, w_out, ph * pw)
        self._argmax = flat.argmax(axis=4)
        self._in_shape = x.shape
        self._sizes = (ph, pw)
        return np.take_along_axis(flat, self._argmax[..., None], axis=4)[..., 0]

    def backward(self, dout):
        b, c, h, w = self._in_shape
        ph, pw = self._sizes
        h_out, w_out = dout.shape[2], dout.shape[3]
        dflat = np.zeros((b, c, h_out, w_out, ph * pw), dtype=dout.dtype)
        np.put_along_axis(dflat, self._argmax[..., None], dout[..., None], axis=4)
        dwin = dflat.reshape(b, c, h_out, w_out, ph, pw).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros(self._in_shape, dtype=dout.dtype)
        dx[:, :, :h_out * ph, :w_out * pw] = dwin.reshape(b, c, h_out * ph, w_out * pw)
        return dx


class BatchNorm(Layer):
    """Per-channel normalization over batch and spatial axes.

    Training mode normalizes by batch statistics and updates running
    stats (momentum 0.1, unbiased variance); evaluation mode uses the
    running stats, so inference is a fixed affine map.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 *, dtype=np.float32):
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter("gamma", np.ones(channels, dtype=dtype))
        self.beta = Parameter("beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def _expand(self, v, ndim):
        return v.reshape((1, -1) + (1,) * (ndim - 2))

    def forward(self, x, training=False):
        axes = (0,) + tuple(range(2, x.ndim))
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            n = x.size // x.shape[1]
            unbiased = var * n / max(n - 1, 1)
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mean).astype(
                self.running_mean.dtype)
            self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(
                self.running_var.dtype)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._expand(mean, x.ndim)) * self._expand(inv_std, x.ndim)
        self._training = training
        self._xhat, self._inv_std, self._axes = xhat, inv_std, axes
        return self._expand(self.gamma.data, x.ndim) * xhat \
            + self._expand(self.beta.data, x.ndim)

    def backward(self, dout):
        xhat, inv_std, axes = self._xhat, self._inv_std, self._axes
        self.gamma.add_grad((dout * xhat).sum(axis=axes))
        self.beta.add_grad(dout.sum(axis=axes))
        gamma = self._expand(self.gamma.data, dout.ndim)
        dxhat = dout * gamma
        if not self._training:
            return dxhat * self._expand(inv_std, dout.ndim)
        n = dout.size // dout.shape[1]
        sum_d = self._expand(dxhat.sum(axis=axes), dout.ndim)
        sum_dx = self._expand((dxhat * xhat).sum(axis=axes), dout.ndim)
        return (dxhat - sum_d / n - xhat * sum_dx / n) \
            * self._expand(inv_std, dout.ndim)


class Dropout(Layer):
    """Inverted dropout: scales survivors at train time, identity at eval."""

    def __init__(self, p: float, rng=None):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability {p} outside [0, 1)")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng()

    def reseed(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def forward(self, x, training=False):
        if not training or self.p == 0.0:
            self._mask = None
            return x
        keep = (self.rng.random(x.shape) >= self.p)
        self._mask = keep.astype(x.dtype) / (1.0 - self.p)
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


class GlobalAvgPool(Layer):
    """Mean over all spatial axes: (b, c, ...) -> (b, c)."""

    def forward(self, x, training=False):
        self._in_shape = x.shape
        return x.mean(axis=tuple(range(2, x.ndim)))

    def backward(self, dout):
        shape = self._in_shape
        n = int(np.prod(shape[2:]))
        expanded = dout.reshape(dout.shape + (1,) * (len(shape) - 2))
        return np.broadcast_to(expanded / n, shape).astype(dout.dtype, copy=True)


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, *, rng, dtype=np.float32):
        self.in_features = in_features
        self.weight = Parameter("weight", _init_uniform(
            rng, (in_features, out_features), in_features, dtype))
        self.bias = Parameter("bias", np.zeros(out_features, dtype=dtype))

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(
                f"linear expects (b, {self.in_features}), got {x.shape}")
        self._x = x
        return x @ self.weight.data + self.bias.data

    def backward(self, dout):
        self.weight.add_grad(self._x.T @ dout)
        self.bias.add_grad(dout.sum(axis=0))
        return dout @ self.weight.data.T


class LogSoftmax(Layer):
    def forward(self, x, training=False):
        shifted = x - x.max(axis=1, keepdims=True)
        self._out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return self._out

    def backward(self, dout):
        return dout - np.exp(self._out) * dout.sum(axis=1, keepdims=True)


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def named_params(self, prefix: str = "") -> dict[str, Parameter]:
        out = {}
        for i, layer in enumerate(self.layers):
            for p in layer.params():
                out[f"{prefix}{i}.{p.name}"] = p
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name in layer.buffers():
                out[f"{prefix}{i}.{name}"] = layer.buffers()[name]
        return out

    def set_buffers(self, values: dict[str, np.ndarray], prefix: str = "") -> None:
        for i, layer in enumerate(self.layers):
            for name in layer.buffers():
                key = f"{prefix}{i}.{name}"
                if key in values:
                    setattr(layer, name, values[key].copy())

    def dropouts(self) -> list[Dropout]:
        return [layer for layer in self.layers if isinstance(layer, Dropout)]


def nll_loss(log_probs: np.ndarray, targets: np.ndarray,
             mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Masked negative log-likelihood over log-softmax rows.

    Returns (loss, gradient wrt log_probs).  Masked-out samples
    contribute nothing and are excluded from the mean; a batch with
    every sample masked raises AllMasked.
    """
    b, k = log_probs.shape
    targets = np.asarray(targets)
    if targets.shape != (b,):
        raise ShapeMismatch(f"targets shape {targets.shape} != ({b},)")
    if np.any(targets >= k) or np.any(targets < 0):
        raise ShapeMismatch("target class index out of range")
    if mask is None:
        mask = np.ones(b, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise AllMasked("no unmasked samples in batch")
    rows = np.arange(b)
    picked = log_probs[rows, targets]
    loss = float(-(picked * mask).sum() / n)
    grad = np.zeros_like(log_probs)
    grad[rows[mask], targets[mask]] = -1.0 / n
    return loss, grad
