"""Feed-forward network container, forward pass, and probe snapshots."""

from dataclasses import dataclass

import numpy as np

from . import convops
from .errors import DimensionError
from .layers import ConvLayer, DenseLayer, activate


@dataclass
class Network:
    """Ordered stack of dense/conv layers acting on column-sample batches.

    ``input_shape`` (channels, height, width) is required when any layer is
    convolutional; ``input_dim`` is always the flat feature count.
    """

    layers: list
    input_dim: int
    input_shape: tuple = None

    def __post_init__(self):
        if self.input_shape is not None:
            self.input_shape = tuple(int(s) for s in self.input_shape)
            if int(np.prod(self.input_shape)) != self.input_dim:
                raise DimensionError(
                    f"input_shape {self.input_shape} does not flatten to "
                    f"input_dim {self.input_dim}")
        self.validate()

    def validate(self):
        """Check adjacent layer compatibility; raises with the layer index."""
        for l, shape in enumerate(self.layer_input_shapes()):
            del shape  # shape propagation itself performs the checks
        return True

    def layer_input_shapes(self):
        """Per-layer input descriptors: (c, h, w) tuples or flat ints."""
        shapes = []
        spatial = self.input_shape
        flat = self.input_dim
        for l, layer in enumerate(self.layers):
            try:
                if isinstance(layer, ConvLayer):
                    if spatial is None:
                        raise DimensionError(
                            "conv layer without a spatial input shape")
                    shapes.append(spatial)
                    spatial = layer.out_shape(spatial)
                    flat = int(np.prod(spatial))
                else:
                    shapes.append(flat)
                    flat = layer.out_features(flat)
                    spatial = None
            except DimensionError as err:
                err.layer_index = l
                raise
        return shapes

    @property
    def n_layers(self):
        return len(self.layers)

    @property
    def n_params(self):
        return sum(layer.n_params for layer in self.layers)

    @property
    def active_count(self):
        return sum(layer.active_count for layer in self.layers)

    def compression_ratio(self):
        """Preserved / original parameter count over the whole network."""
        return self.active_count / self.n_params

    def copy(self):
        return Network([layer.copy() for layer in self.layers],
                       self.input_dim, self.input_shape)


@dataclass
class LayerSnapshot:
    """Captured layer inputs (with bias row) and pre-activations on a probe.

    Dense layers store one column per probe sample; conv layers store one
    column per retained (sample, patch position) pair.
    """

    layer_index: int
    inputs: np.ndarray
    pre_activations: np.ndarray

    @property
    def sample_count(self):
        return self.inputs.shape[1]


def append_ones_row(x):
    out = np.empty((x.shape[0] + 1, x.shape[1]))
    out[:-1, :] = x
    out[-1, :] = 1.0
    return out


def layer_pre_activation(layer, x_flat, in_shape=None):
    """One layer's pre-activations on a flattened (features, n) input."""
    if isinstance(layer, ConvLayer):
        n = x_flat.shape[1]
        maps = x_flat.T.reshape(n, *in_shape)
        z_cols, _ = convops.conv_forward_cols(layer, maps, in_shape)
        out_shape = layer.out_shape(in_shape)
        return convops.cols_to_maps(z_cols, out_shape, n).reshape(n, -1).T
    return layer.masked_weights().T @ append_ones_row(x_flat)


def forward(net, batch):
    """Run the network on a (input_dim, n) batch.

    Returns (ys, zs): per-layer outputs and pre-activations, every entry
    flattened to (features, n) with (channel, row, col) feature order.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] != net.input_dim:
        raise DimensionError(
            f"batch has {batch.shape[0] if batch.ndim == 2 else batch.shape} "
            f"rows, network expects {net.input_dim}", layer_index=0)
    in_shapes = net.layer_input_shapes()
    ys, zs = [], []
    cur = batch
    for l, layer in enumerate(net.layers):
        z = layer_pre_activation(layer, cur, in_shapes[l])
        y = activate(z, layer.activation)
        zs.append(z)
        ys.append(y)
        cur = y
    return ys, zs


def capture_snapshots(net, probe, conv_positions_cap=20, seed=0):
    """Capture one LayerSnapshot per layer of the current (masked) network.

    Conv snapshots hold patch columns; when a feature map yields more than
    ``conv_positions_cap`` patch positions, a seeded uniform subset per
    sample is kept (the layer Hessian is an average over positions, so
    uniform subsampling leaves it unbiased).
    """
    if probe.n == 0:
        raise ValueError("probe dataset is empty")
    in_shapes = net.layer_input_shapes()
    rng = np.random.default_rng(seed)
    n = probe.n
    snapshots = []
    cur = probe.inputs
    for l, layer in enumerate(net.layers):
        if isinstance(layer, ConvLayer):
            maps = cur.T.reshape(n, *in_shapes[l])
            z_cols, patches = convops.conv_forward_cols(layer, maps, in_shapes[l])
            positions = patches.shape[1] // n
            if conv_positions_cap is not None and positions > conv_positions_cap:
                keep = np.concatenate([
                    j * positions + np.sort(rng.choice(
                        positions, size=conv_positions_cap, replace=False))
                    for j in range(n)])
                snap_in = patches[:, keep]
                snap_z = z_cols[:, keep]
            else:
                snap_in, snap_z = patches, z_cols
            snapshots.append(LayerSnapshot(l, snap_in, snap_z))
            out_shape = layer.out_shape(in_shapes[l])
            z = convops.cols_to_maps(z_cols, out_shape, n).reshape(n, -1).T
        else:
            x_ext = append_ones_row(cur)
            z = layer.masked_weights().T @ x_ext
            snapshots.append(LayerSnapshot(l, x_ext, z))
        cur = activate(z, layer.activation)
    return snapshots


def logits(net, inputs, chunk=4096):
    """Final pre-activations evaluated in memory-bounded chunks."""
    outs = []
    for start in range(0, inputs.shape[1], chunk):
        _, zs = forward(net, inputs[:, start:start + chunk])
        outs.append(zs[-1])
    return np.concatenate(outs, axis=1)


def test_error(net, dataset, chunk=4096):
    """Misclassification rate under argmax of the final pre-activations."""
    pred = np.argmax(logits(net, dataset.inputs, chunk=chunk), axis=0)
    return float(np.mean(pred != dataset.labels))
