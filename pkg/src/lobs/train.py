"""Masked SGD training with a softmax cross-entropy objective.

Gradients are multiplied elementwise by each layer's mask before the
update, so pruned parameters stay exactly zero through any amount of
retraining.  All randomness flows through one ``numpy`` generator, making
the loss trace bitwise reproducible for a fixed seed.
"""

from dataclasses import dataclass

import numpy as np

from . import convops
from .errors import DivergenceError
from .layers import ConvLayer, activation_grad_mask
from .network import append_ones_row, forward


@dataclass
class TrainConfig:
    learning_rate: float
    batch_size: int = 64
    iterations: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=0, keepdims=True)
    n = labels.shape[0]
    loss = -np.mean(np.log(probs[labels, np.arange(n)] + 1e-300))
    grad = probs
    grad[labels, np.arange(n)] -= 1.0
    grad /= n
    return loss, grad


def _forward_caches(net, batch):
    """Forward pass retaining what backprop needs per layer."""
    in_shapes = net.layer_input_shapes()
    n = batch.shape[1]
    caches = []
    cur = batch
    for l, layer in enumerate(net.layers):
        if isinstance(layer, ConvLayer):
            maps = cur.T.reshape(n, *in_shapes[l])
            z_cols, patches = convops.conv_forward_cols(layer, maps, in_shapes[l])
            out_shape = layer.out_shape(in_shapes[l])
            z = convops.cols_to_maps(z_cols, out_shape, n).reshape(n, -1).T
            caches.append(("conv", patches, in_shapes[l], out_shape, z))
        else:
            x_ext = append_ones_row(cur)
            z = layer.masked_weights().T @ x_ext
            caches.append(("dense", x_ext, None, None, z))
        cur = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return caches, cur


def _backward(net, caches, grad_logits, n):
    """Per-layer weight gradients for the cached forward pass."""
    grads = [None] * net.n_layers
    d_out = grad_logits
    for l in range(net.n_layers - 1, -1, -1):
        layer = net.layers[l]
        kind, a, in_shape, out_shape, z = caches[l]
        dz = d_out * activation_grad_mask(z, layer.activation)
        if kind == "dense":
            grads[l] = a @ dz.T
            if l > 0:
                d_out = layer.masked_weights()[:-1, :] @ dz
        else:
            dz_cols = convops.maps_to_cols(dz.T.reshape(n, *out_shape))
            grads[l] = a @ dz_cols.T
            if l > 0:
                d_patches = layer.masked_weights()[:-1, :] @ dz_cols
                d_maps = convops.col2im(d_patches, layer, in_shape, n)
                d_out = d_maps.reshape(n, -1).T
    return grads


def train_sgd(net, data, config, rng=None):
    """Train ``net`` in place; returns (net, per-iteration loss trace)."""
    if data.n == 0:
        raise ValueError("training dataset is empty")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    trace = np.empty(config.iterations)
    for it in range(config.iterations):
        idx = rng.integers(0, data.n, size=config.batch_size)
        batch = data.inputs[:, idx]
        labels = data.labels[idx]
        caches, _ = _forward_caches(net, batch)
        loss, grad_logits = softmax_cross_entropy(caches[-1][-1], labels)
        if not np.isfinite(loss):
            raise DivergenceError(f"loss became {loss} at iteration {it}",
                                  iteration=it)
        trace[it] = loss
        grads = _backward(net, caches, grad_logits, batch.shape[1])
        for layer, grad in zip(net.layers, grads):
            layer.weights -= config.learning_rate * (grad * layer.mask)
    return net, trace


def dataset_loss(net, data, chunk=4096):
    """Mean softmax cross-entropy of the current network on a dataset."""
    total = 0.0
    for start in range(0, data.n, chunk):
        stop = min(start + chunk, data.n)
        _, zs = forward(net, data.inputs[:, start:stop])
        loss, _ = softmax_cross_entropy(zs[-1], data.labels[start:stop])
        total += loss * (stop - start)
    return total / data.n
