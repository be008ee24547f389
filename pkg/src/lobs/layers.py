"""Prunable layer types.

Both layer kinds keep their parameters in a single ``weights`` matrix of
shape (block_size, n_blocks) whose last row is the bias, driven by a
constant-1 input appended during the forward pass.  One column ("block")
holds every parameter feeding one output unit (dense) or one output
channel (conv), which is exactly the granularity at which the layer
Hessian is block diagonal.  A parameter's flat index is
``q = col * block_size + row``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

RELU = "relu"
IDENTITY = "identity"
ACTIVATIONS = (RELU, IDENTITY)


def activate(z, activation):
    if activation == RELU:
        return np.maximum(z, 0.0)
    if activation == IDENTITY:
        return np.asarray(z)
    raise ValueError(f"unknown activation {activation!r}")


def activation_grad_mask(z, activation):
    """Elementwise derivative of the activation at pre-activation z."""
    if activation == RELU:
        return (z > 0).astype(z.dtype)
    if activation == IDENTITY:
        return np.ones_like(z)
    raise ValueError(f"unknown activation {activation!r}")


def glorot_uniform(shape, fan_in, fan_out, rng):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class DenseLayer:
    """Fully connected layer with a folded bias row and a pruning mask.

    ``weights`` has shape (fan_in + 1, fan_out).  The last row holds each
    output unit's bias so biases are ordinary prunable parameters covered
    by the same second-order machinery as the rest.
    """

    weights: np.ndarray
    mask: np.ndarray
    activation: str = RELU

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.mask = np.ascontiguousarray(self.mask, dtype=np.uint8)
        if self.weights.shape != self.mask.shape:
            raise DimensionError(
                f"weights shape {self.weights.shape} != mask shape {self.mask.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def init(cls, fan_in, fan_out, activation=RELU, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        w = np.zeros((fan_in + 1, fan_out))
        w[:-1, :] = glorot_uniform((fan_in, fan_out), fan_in, fan_out, rng)
        return cls(w, np.ones_like(w, dtype=np.uint8), activation)

    @property
    def fan_in(self):
        return self.weights.shape[0] - 1

    @property
    def fan_out(self):
        return self.weights.shape[1]

    @property
    def block_size(self):
        return self.weights.shape[0]

    @property
    def n_blocks(self):
        return self.weights.shape[1]

    @property
    def n_params(self):
        return self.weights.size

    @property
    def active_count(self):
        return int(self.mask.sum())

    def masked_weights(self):
        return self.weights * self.mask

    def out_features(self, in_features):
        if in_features != self.fan_in:
            raise DimensionError(
                f"input feature size {in_features} incompatible with layer "
                f"expecting {self.fan_in}")
        return self.fan_out

    def copy(self):
        return DenseLayer(self.weights.copy(), self.mask.copy(), self.activation)

    def validate(self):
        assert self.weights.shape == self.mask.shape
        assert np.all(self.weights[self.mask == 0] == 0.0), "pruned weight non-zero"


@dataclass
class ConvLayer:
    """2-D convolution stored as a patch-space weight matrix.

    ``weights`` has shape (in_channels*kh*kw + 1, out_channels): column i is
    channel i's vectorized filter in (channel, row, col) order with the bias
    last, matching the layout of extracted input patches.  The 4-axis
    ``filters`` view is derived on demand.
    """

    weights: np.ndarray
    mask: np.ndarray
    in_channels: int
    kernel: tuple
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)
    activation: str = RELU

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.mask = np.ascontiguousarray(self.mask, dtype=np.uint8)
        self.kernel = tuple(int(k) for k in self.kernel)
        self.stride = tuple(int(s) for s in self.stride)
        self.padding = tuple(int(p) for p in self.padding)
        if self.weights.shape != self.mask.shape:
            raise DimensionError(
                f"weights shape {self.weights.shape} != mask shape {self.mask.shape}")
        kh, kw = self.kernel
        if self.weights.shape[0] != self.in_channels * kh * kw + 1:
            raise DimensionError(
                f"weight rows {self.weights.shape[0]} != "
                f"in_channels*kh*kw+1 = {self.in_channels * kh * kw + 1}"
            )
        if min(self.stride) < 1 or min(self.padding) < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def init(cls, in_channels, out_channels, kernel, stride=(1, 1), padding=(0, 0),
             activation=RELU, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        kh, kw = kernel
        fan_in = in_channels * kh * kw
        fan_out = out_channels * kh * kw
        w = np.zeros((fan_in + 1, out_channels))
        w[:-1, :] = glorot_uniform((fan_in, out_channels), fan_in, fan_out, rng)
        return cls(w, np.ones_like(w, dtype=np.uint8), in_channels, kernel,
                   stride, padding, activation)

    @property
    def out_channels(self):
        return self.weights.shape[1]

    @property
    def block_size(self):
        return self.weights.shape[0]

    @property
    def n_blocks(self):
        return self.weights.shape[1]

    @property
    def n_params(self):
        return self.weights.size

    @property
    def active_count(self):
        return int(self.mask.sum())

    @property
    def filters(self):
        """4-axis view (out_channels, in_channels, kh, kw) of the filter taps."""
        kh, kw = self.kernel
        return self.weights[:-1, :].T.reshape(
            self.out_channels, self.in_channels, kh, kw)

    @property
    def bias(self):
        return self.weights[-1, :]

    def masked_weights(self):
        return self.weights * self.mask

    def out_shape(self, in_shape):
        """Spatial output shape (out_channels, oh, ow) for input (c, h, w)."""
        c, h, w = in_shape
        if c != self.in_channels:
            raise DimensionError(
                f"input has {c} channels, layer expects {self.in_channels}")
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        oh = (h + 2 * ph - kh) // sh + 1
        ow = (w + 2 * pw - kw) // sw + 1
        if oh < 1 or ow < 1:
            raise DimensionError(
                f"kernel {self.kernel} with stride {self.stride}, padding "
                f"{self.padding} does not fit input {in_shape}")
        return (self.out_channels, oh, ow)

    def out_features(self, in_features):
        raise DimensionError(
            "conv layer needs a spatial input shape, got flat features only")

    def copy(self):
        return ConvLayer(self.weights.copy(), self.mask.copy(), self.in_channels,
                         self.kernel, self.stride, self.padding, self.activation)

    def validate(self):
        assert self.weights.shape == self.mask.shape
        assert np.all(self.weights[self.mask == 0] == 0.0), "pruned weight non-zero"
