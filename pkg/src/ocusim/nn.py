"""Layer framework for optical convolutional networks and their electrical twins.

Every layer implements forward/backward with explicit numpy math; backward
accumulates parameter gradients into Param objects and returns the gradient
w.r.t. its input.  The optical convolution layer (OclLayer) evaluates a bank
of diffractive cascades through the collapsed transfer matrices; the
electrical Conv2dLayer walks the exact same im2col path with ordinary
real-valued kernels, so optical/electrical comparisons share all plumbing.

Shapes: images and feature maps are (B, C, N, N); dense activations (B, F).
"""

from __future__ import annotations

import math

import numpy as np

from .optics import OcuGeometry, propagation_matrices, stacked_transfer_partials
from .optim import Param
from .tensorize import feature_dim, fold_batch, im2col_batch

TWO_PI = 2.0 * math.pi


class Layer:
    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[Param]:
        return []

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad):
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if i == 0 and isinstance(layer, (OclLayer, Conv2dLayer)):
                return layer.backward(grad, need_input_grad=False)
            grad = layer.backward(grad)
        return grad

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def out_shape(self, in_shape):
        for layer in self.layers:
            in_shape = layer.out_shape(in_shape)
        return in_shape


# ---------------------------------------------------------------------------
# reflection padding helpers (denoiser keeps spatial size; classifier is unpadded)
# ---------------------------------------------------------------------------

def _reflect_index(n: int, pad: int) -> np.ndarray:
    if pad == 0:
        return np.arange(n)
    if pad >= n:
        raise ValueError("reflection pad must be smaller than the image")
    return np.concatenate(
        [np.arange(pad, 0, -1), np.arange(n), np.arange(n - 2, n - 2 - pad, -1)]
    )

def _reflect_pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    idx = _reflect_index(x.shape[-1], pad)
    return x[..., idx, :][..., :, idx]


def _reflect_pad_grad(grad: np.ndarray, pad: int, n: int) -> np.ndarray:
    """Adjoint of _reflect_pad: scatter-add padded gradients back."""
    if pad == 0:
        return grad
    idx = _reflect_index(n, pad)
    rows = np.zeros(grad.shape[:-2] + (n, grad.shape[-1]), dtype=grad.dtype)
    for src, dst in enumerate(idx):
        rows[..., dst, :] += grad[..., src, :]
    out = np.zeros(rows.shape[:-1] + (n,), dtype=grad.dtype)
    for src, dst in enumerate(idx):
        out[..., dst] += rows[..., src]
    return out


# ---------------------------------------------------------------------------
# convolution layers
# ---------------------------------------------------------------------------

class OclLayer(Layer):
    """Optical convolution layer: ``kernels`` OCKs of ``channels`` OCUs each.

    Input (B, C, N, N) -> (B, q, G, G).  OCK m sums the balanced-detected
    outputs of its C units, one per input channel.  All q*C cascades share
    one geometry (so one set of diffraction matrices); phases and per-unit
    detection gains are trainable, gains in log space since they absorb the
    physical field scale.  ``port_sign`` records which detector port each
    unit treats as positive (a wiring choice fixed at calibration so no
    unit starts with an always-negative, ReLU-dead output).
    """

    def __init__(self, geometry: OcuGeometry, kernels: int, channels: int,
                 rng: np.random.Generator, stride: int = 1, pad: int = 0):
        h2 = geometry.num_inputs
        h = int(round(math.sqrt(h2)))
        if h * h != h2:
            raise ValueError("geometry num_inputs must be a square number")
        self.geometry = geometry
        self.q = kernels
        self.c = channels
        self.h = h
        self.stride = stride
        self.pad = pad
        self.fs = propagation_matrices(geometry)
        shape = (kernels, channels, geometry.metaline_count, geometry.metaunits_per_layer)
        self.phases = Param(rng.uniform(0.0, TWO_PI, size=shape), "phases")
        self.log_gain = Param(np.zeros((kernels, channels)), "log_gain")
        self.port_sign = np.ones((kernels, channels))
        self._cache = None

    def params(self):
        return [self.phases, self.log_gain]

    def gains(self) -> np.ndarray:
        return np.exp(self.log_gain.value)

    def out_shape(self, in_shape):
        b, c, n, _ = in_shape
        if c != self.c:
            raise ValueError(f"layer expects {self.c} channels, got {c}")
        g = feature_dim(n + 2 * self.pad, self.h, self.stride)
        return (b, self.q, g, g)

    def _bank(self):
        flat = self.phases.value.reshape(self.q * self.c, -1, self.geometry.metaunits_per_layer)
        return stacked_transfer_partials(flat, self.fs)

    def forward(self, x, training=False):
        b, c, n, _ = x.shape
        if c != self.c:
            raise ValueError(f"layer expects {self.c} channels, got {c}")
        padded = _reflect_pad(x, self.pad)
        g = feature_dim(padded.shape[-1], self.h, self.stride)
        h2 = self.h * self.h
        cols = im2col_batch(padded, self.h, self.stride).reshape(self.c, h2, -1)
        partials = self._bank()
        a = partials.total.reshape(self.q, self.c, 2, h2)
        n_cols = cols.shape[-1]
        resp = np.empty((self.q, self.c, 2, n_cols), dtype=complex)
        for ch in range(self.c):
            flat = a[:, ch].reshape(2 * self.q, h2)
            # one real gemm for both field quadratures
            stacked = np.vstack([flat.real, flat.imag]) @ cols[ch]
            resp[:, ch].real = stacked[:2 * self.q].reshape(self.q, 2, n_cols)
            resp[:, ch].imag = stacked[2 * self.q:].reshape(self.q, 2, n_cols)
        r_pos, r_neg = resp[:, :, 0], resp[:, :, 1]
        diff = ((r_pos.real ** 2 + r_pos.imag ** 2)
                - (r_neg.real ** 2 + r_neg.imag ** 2))
        y = (self.gains() * self.port_sign)[:, :, None] * diff
        fm = y.sum(axis=1)
        out = fm.reshape(self.q, b, g, g).transpose(1, 0, 2, 3)
        self._cache = (x.shape, cols, partials, a, resp, diff, g)
        return out

    def backward(self, grad, need_input_grad: bool = True):
        in_shape, cols, partials, a, resp, diff, g = self._cache
        b = in_shape[0]
        h2 = self.h * self.h
        gq = grad.transpose(1, 0, 2, 3).reshape(self.q, -1)
        eff = self.gains() * self.port_sign

        self.log_gain.grad += eff * np.einsum("qn,qcn->qc", gq, diff)

        rbar = np.empty_like(resp)
        scale = 2.0 * eff[:, :, None] * gq[:, None, :]
        rbar[:, :, 0] = scale * resp[:, :, 0]
        rbar[:, :, 1] = -scale * resp[:, :, 1]

        n_cols = cols.shape[-1]
        s_all = np.empty((self.q, self.c, 2, h2), dtype=complex)
        for ch in range(self.c):
            rb = rbar[:, ch].reshape(2 * self.q, n_cols)
            both = cols[ch] @ np.hstack([rb.real.T, rb.imag.T])
            s_flat = both[:, :2 * self.q] + 1j * both[:, 2 * self.q:]
            s_all[:, ch] = s_flat.reshape(h2, self.q, 2).transpose(1, 2, 0)

        v = self.geometry.metaunits_per_layer
        masks = partials.masks.reshape(self.q, self.c, -1, v)
        s_conj = np.conj(s_all)
        for l in range(self.geometry.metaline_count):
            right = partials.right[l].reshape(self.q, self.c, v, h2)
            left = partials.left[l].reshape(self.q, self.c, 2, v)
            p = np.einsum("qcvh,qcoh->qcvo", right, s_conj)
            gv = masks[:, :, l] * np.einsum("qcvo,qcov->qcv", p, left)
            self.phases.grad[:, :, l] += -np.imag(gv)

        if not need_input_grad:
            return None
        dcols = np.empty((self.c, h2, n_cols))
        for ch in range(self.c):
            flat = a[:, ch].reshape(2 * self.q, h2)
            rb = rbar[:, ch].reshape(2 * self.q, n_cols)
            # Re(A^H rbar) as one stacked real gemm
            dcols[ch] = np.hstack([flat.real.T, flat.imag.T]) @ np.vstack(
                [rb.real, rb.imag])
        n_pad = in_shape[-1] + 2 * self.pad
        padded_shape = (b, self.c, n_pad, n_pad)
        dpadded = fold_batch(dcols.reshape(self.c * h2, n_cols), padded_shape,
                             self.h, self.stride)
        return _reflect_pad_grad(dpadded, self.pad, in_shape[-1])

    def calibrate_gains(self, x: np.ndarray, target_rms: float = 1.0) -> None:
        """Fix port polarity and set each unit's gain to a useful scale.

        Run once on a representative batch before training: gains are set
        so each detected sub-map has RMS ~ target (square-law outputs
        otherwise sit at the raw physical field scale and gradients die),
        and the positive detector port is chosen per unit so its output is
        not negative almost everywhere (which a downstream ReLU would
        silence permanently).
        """
        self.forward(x, training=False)
        _, _, _, _, _, diff, _ = self._cache
        rms = np.sqrt(np.mean(diff * diff, axis=-1))
        safe = np.where(rms > 0, rms, 1.0)
        self.log_gain.value[...] = np.log(target_rms / safe)
        mean = np.mean(diff, axis=-1)
        self.port_sign[...] = np.where(mean < 0, -1.0, 1.0)
        self._cache = None


class Conv2dLayer(Layer):
    """Ordinary real-valued convolution (the electrical baseline twin)."""

    def __init__(self, kernels: int, channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, pad: int = 0):
        self.q = kernels
        self.c = channels
        self.h = kernel_size
        self.stride = stride
        self.pad = pad
        fan_in = channels * kernel_size * kernel_size
        self.weight = Param(
            rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(kernels, channels, kernel_size, kernel_size)),
            "weight",
        )
        self.bias = Param(np.zeros(kernels), "bias")
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, in_shape):
        b, c, n, _ = in_shape
        if c != self.c:
            raise ValueError(f"layer expects {self.c} channels, got {c}")
        g = feature_dim(n + 2 * self.pad, self.h, self.stride)
        return (b, self.q, g, g)

    def forward(self, x, training=False):
        b = x.shape[0]
        padded = _reflect_pad(x, self.pad)
        g = feature_dim(padded.shape[-1], self.h, self.stride)
        cols = im2col_batch(padded, self.h, self.stride)
        w2 = self.weight.value.reshape(self.q, -1)
        fm = w2 @ cols + self.bias.value[:, None]
        self._cache = (x.shape, cols)
        return fm.reshape(self.q, b, g, g).transpose(1, 0, 2, 3)

    def backward(self, grad, need_input_grad: bool = True):
        in_shape, cols = self._cache
        b = in_shape[0]
        gq = grad.transpose(1, 0, 2, 3).reshape(self.q, -1)
        self.weight.grad += (gq @ cols.T).reshape(self.weight.value.shape)
        self.bias.grad += gq.sum(axis=1)
        if not need_input_grad:
            return None
        dcols = self.weight.value.reshape(self.q, -1).T @ gq
        n_pad = in_shape[-1] + 2 * self.pad
        dpadded = fold_batch(dcols, (b, self.c, n_pad, n_pad), self.h, self.stride)
        return _reflect_pad_grad(dpadded, self.pad, in_shape[-1])


# ---------------------------------------------------------------------------
# pointwise / pooling / normalization layers
# ---------------------------------------------------------------------------

class ReluLayer(Layer):
    def forward(self, x, training=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad):
        return grad * self._mask


class Pool2dLayer(Layer):
    """Window pooling; ``mode`` is "mean" (default, gradient-smooth) or "max"."""

    def __init__(self, window: int = 2, stride: int | None = None, mode: str = "mean"):
        if mode not in ("mean", "max"):
            raise ValueError("pool mode must be 'mean' or 'max'")
        self.window = window
        self.stride = stride if stride is not None else window
        self.mode = mode

    def out_shape(self, in_shape):
        b, c, n, _ = in_shape
        g = feature_dim(n, self.window, self.stride)
        return (b, c, g, g)

    def _windows(self, x):
        g = feature_dim(x.shape[-1], self.window, self.stride)
        w, s = self.window, self.stride
        stack = np.stack([
            x[..., i:i + s * g:s, j:j + s * g:s]
            for i in range(w) for j in range(w)
        ])
        return stack, g

    def forward(self, x, training=False):
        if self.window > x.shape[-1]:
            raise ValueError("pool window larger than feature map")
        stack, g = self._windows(x)
        if self.mode == "mean":
            out = stack.mean(axis=0)
            self._cache = (x.shape, None)
        else:
            idx = stack.argmax(axis=0)
            out = np.take_along_axis(stack, idx[None], axis=0)[0]
            self._cache = (x.shape, idx)
        return out

    def backward(self, grad):
        in_shape, idx = self._cache
        w, s = self.window, self.stride
        g = grad.shape[-1]
        out = np.zeros(in_shape, dtype=grad.dtype)
        if self.mode == "mean":
            share = grad / (w * w)
            for i in range(w):
                for j in range(w):
                    out[..., i:i + s * g:s, j:j + s * g:s] += share
        else:
            for k, (i, j) in enumerate((i, j) for i in range(w) for j in range(w)):
                out[..., i:i + s * g:s, j:j + s * g:s] += grad * (idx == k)
        return out


class BatchNormLayer(Layer):
    """Per-channel standardization with learned scale/shift.

    Training mode uses batch statistics (batch >= 2) and refreshes the
    running estimates; inference normalizes with the running statistics.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Param(np.ones(channels), "gamma")
        self.beta = Param(np.zeros(channels), "beta")
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def params(self):
        return [self.gamma, self.beta]

    def _axes(self, x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _expand(self, v, x):
        return v if x.ndim == 2 else v[:, None, None]

    def forward(self, x, training=False):
        axes = self._axes(x)
        if training:
            if x.shape[0] < 2:
                raise ValueError("batch normalization needs batch size >= 2 in training")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean
            self.running_var = (1 - m) * self.running_var + m * var
        else:
            mean = self.running_mean
            var = self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._expand(mean, x)) * self._expand(inv, x)
        self._cache = (xhat, inv, training, x.shape)
        return self._expand(self.gamma.value, x) * xhat + self._expand(self.beta.value, x)

    def backward(self, grad):
        xhat, inv, training, shape = self._cache
        axes = self._axes(grad)
        self.gamma.grad += (grad * xhat).sum(axis=axes)
        self.beta.grad += grad.sum(axis=axes)
        gamma = self._expand(self.gamma.value, grad)
        inv_e = self._expand(inv, grad)
        if not training:
            return grad * gamma * inv_e
        m = grad.size // grad.shape[1] if grad.ndim == 4 else grad.shape[0]
        dxhat = grad * gamma
        sum_dxhat = self._expand(dxhat.sum(axis=axes), grad)
        sum_dxhat_x = self._expand((dxhat * xhat).sum(axis=axes), grad)
        return (inv_e / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_x)


class FlattenLayer(Layer):
    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)

    def out_shape(self, in_shape):
        total = 1
        for d in in_shape[1:]:
            total *= d
        return (in_shape[0], total)


class DenseLayer(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = Param(rng.normal(0.0, math.sqrt(2.0 / n_in), size=(n_in, n_out)), "weight")
        self.bias = Param(np.zeros(n_out), "bias")

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, in_shape):
        return (in_shape[0], self.weight.value.shape[1])

    def forward(self, x, training=False):
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, grad):
        self.weight.grad += self._x.T @ grad
        self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.value.T


def dense_head(n_in: int, hidden: tuple[int, ...], n_out: int,
               rng: np.random.Generator) -> list[Layer]:
    """The classifier tail: affine -> ReLU -> ... -> affine."""
    sizes = [n_in, *hidden, n_out]
    layers: list[Layer] = []
    for i in range(len(sizes) - 1):
        layers.append(DenseLayer(sizes[i], sizes[i + 1], rng))
        if i < len(sizes) - 2:
            layers.append(ReluLayer())
    return layers


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def softmax_cross_entropy(scores: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch, stabilized by max subtraction."""
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite class scores")
    shifted = scores - scores.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    b = scores.shape[0]
    picked = probs[np.arange(b), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    grad = probs.copy()
    grad[np.arange(b), labels] -= 1.0
    return loss, grad / b


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size
