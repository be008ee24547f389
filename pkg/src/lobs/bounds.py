"""Layer-wise and accumulated pruning errors, and their bound checks.

For each layer the reconstruction error E = (1/n)||Ẑ - Z||_F² (measured on
the original layer inputs) bounds the post-activation RMS error
ε = (1/√n)||Ŷ - Y||_F from above by √E, because the activations are
1-Lipschitz.  Chaining layers, the accumulated output error ε̃ is bounded
by a weighted sum of the per-layer √E terms, the weights being products of
downstream parameter Frobenius norms.  This module measures every quantity
in those statements and evaluates the bounds numerically.
"""

from dataclasses import dataclass, field

import numpy as np

from . import convops
from .errors import DimensionError
from .layers import ConvLayer, activate
from .network import forward, layer_pre_activation

BOUND_SLACK = 1e-9


def layer_error(z_ref, z_hat, activation="relu"):
    """(E, ε) between a layer's original and pruned responses.

    E = (1/n)||Ẑ - Z||_F² on pre-activations, ε = (1/√n)||Ŷ - Y||_F on
    outputs, with n the number of columns.
    """
    z_ref = np.asarray(z_ref, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    if z_ref.shape != z_hat.shape:
        raise DimensionError(
            f"pre-activation shapes differ: {z_ref.shape} vs {z_hat.shape}")
    n = z_ref.shape[1] if z_ref.ndim == 2 else 1
    z_ref = z_ref.reshape(-1, n)
    z_hat = z_hat.reshape(-1, n)
    dz = z_hat - z_ref
    e_value = float(np.sum(dz * dz)) / n
    dy = activate(z_hat, activation) - activate(z_ref, activation)
    eps = float(np.linalg.norm(dy)) / np.sqrt(n)
    return e_value, eps


def frobenius_theta(layer, in_shape=None):
    """Frobenius norm of the layer's masked parameters as a linear operator.

    Dense layers: plain norm of the weight matrix (bias row included).
    Conv layers: norm of the equivalent fully-connected operator, where a
    filter tap is counted once per output position whose receptive field
    keeps it inside the unpadded input (taps landing on padding drop out of
    the operator), and the bias repeats at every position.  A raw filter
    norm would not bound the layer's amplification once windows overlap.
    """
    w = layer.masked_weights()
    if not isinstance(layer, ConvLayer):
        return float(np.linalg.norm(w))
    if in_shape is None:
        raise ValueError("conv layers need their input shape")
    indices, out_shape, padded_shape = convops.conv_geometry(layer, in_shape)
    c, h, wd = in_shape
    indicator = np.zeros(padded_shape)
    ph, pw = layer.padding
    indicator[:, ph:ph + h, pw:pw + wd] = 1.0
    tap_counts = indicator.reshape(-1)[indices].sum(axis=1)   # (taps,)
    positions = indices.shape[1]
    sq = float(np.sum(w[:-1, :] ** 2 * tap_counts[:, None]))
    sq += positions * float(np.sum(w[-1, :] ** 2))
    return float(np.sqrt(sq))


def check_topology(original, pruned):
    if original.n_layers != pruned.n_layers:
        raise DimensionError("networks have different depths")
    for l, (a, b) in enumerate(zip(original.layers, pruned.layers)):
        if type(a) is not type(b) or a.weights.shape != b.weights.shape:
            raise DimensionError("layer shapes differ", layer_index=l)


def accumulated_error(original, pruned, probe):
    """Accumulated output error ε̃ per layer when the pruned net is chained.

    Returns (ε̃ of the final layer, full per-layer trace).
    """
    check_topology(original, pruned)
    ys_o, _ = forward(original, probe.inputs)
    ys_p, _ = forward(pruned, probe.inputs)
    n = probe.n
    trace = [float(np.linalg.norm(yp - yo)) / np.sqrt(n)
             for yo, yp in zip(ys_o, ys_p)]
    return trace[-1], trace


def theorem1_rhs(layer_dE, layer_frob):
    """Weighted sum of per-layer √(δE) bounding the accumulated error.

    Layer k's contribution is scaled by the product of the masked-weight
    Frobenius norms of every later layer.
    """
    layer_dE = list(layer_dE)
    layer_frob = list(layer_frob)
    if len(layer_dE) < 1 or len(layer_dE) != len(layer_frob):
        raise ValueError("need matching per-layer δE and norm lists")
    total = 0.0
    n_layers = len(layer_dE)
    for k in range(n_layers - 1):
        total += float(np.prod(layer_frob[k + 1:])) * np.sqrt(layer_dE[k])
    return total + float(np.sqrt(layer_dE[-1]))


@dataclass
class BoundReport:
    """Measured per-layer errors, scale factors, and bound evaluations."""

    layer_dE: list
    layer_eps: list
    layer_sqrt_dE: list
    layer_frob: list
    scale_factors: list            # S_l = prod of frob norms after layer l
    eps_tilde_trace: list
    eps_tilde_final: float
    rhs: float
    xi_r_estimate: float
    xi_r_measured: float
    theorem2_lhs: list = field(default_factory=list)
    theorem2_rhs: list = field(default_factory=list)

    def lemma1_ok(self, slack=BOUND_SLACK):
        return all(e <= s + slack
                   for e, s in zip(self.layer_eps, self.layer_sqrt_dE))

    def theorem1_ok(self, slack=BOUND_SLACK):
        return self.eps_tilde_final <= self.rhs + slack

    def theorem2_ok(self, slack=BOUND_SLACK):
        return all(l <= r + slack
                   for l, r in zip(self.theorem2_lhs, self.theorem2_rhs))

    def summary(self):
        return (f"accumulated output error {self.eps_tilde_final:.6g} "
                f"<= bound {self.rhs:.6g} "
                f"(lemma1 {'ok' if self.lemma1_ok() else 'VIOLATED'}, "
                f"theorem1 {'ok' if self.theorem1_ok() else 'VIOLATED'}, "
                f"theorem2 {'ok' if self.theorem2_ok() else 'VIOLATED'})")

    def rows(self):
        header = ["layer", "dE", "sqrt_dE", "eps", "frob_norm",
                  "scale_factor", "eps_tilde"]
        body = [
            [l, self.layer_dE[l], self.layer_sqrt_dE[l], self.layer_eps[l],
             self.layer_frob[l], self.scale_factors[l],
             self.eps_tilde_trace[l]]
            for l in range(len(self.layer_dE))
        ]
        return header, body

    def to_csv(self, path):
        import csv
        header, body = self.rows()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(body)
            writer.writerow([])
            writer.writerow(["summary", self.summary()])


def build_bound_report(original, pruned, probe):
    """Measure every bound ingredient for an (original, pruned) pair."""
    check_topology(original, pruned)
    in_shapes = original.layer_input_shapes()
    ys_o, zs_o = forward(original, probe.inputs)
    ys_p, _ = forward(pruned, probe.inputs)
    n = probe.n
    sqrt_n = np.sqrt(n)

    layer_dE, layer_eps, layer_frob = [], [], []
    yhat_layerwise = []
    for l, layer in enumerate(pruned.layers):
        x = probe.inputs if l == 0 else ys_o[l - 1]
        z_hat = layer_pre_activation(layer, x, in_shapes[l])
        dE, eps = layer_error(zs_o[l], z_hat, layer.activation)
        layer_dE.append(dE)
        layer_eps.append(eps)
        layer_frob.append(frobenius_theta(layer, in_shapes[l]
                                          if isinstance(layer, ConvLayer)
                                          else None))
        yhat_layerwise.append(activate(z_hat, layer.activation))

    n_layers = len(pruned.layers)
    scale_factors = [float(np.prod(layer_frob[l + 1:])) for l in range(n_layers)]
    eps_tilde_trace = [float(np.linalg.norm(yp - yo)) / sqrt_n
                       for yo, yp in zip(ys_o, ys_p)]
    rhs = theorem1_rhs(layer_dE, layer_frob)

    theorem2_lhs, theorem2_rhs = [], []
    for l in range(1, n_layers):
        theorem2_lhs.append(float(np.linalg.norm(ys_p[l] - yhat_layerwise[l])))
        theorem2_rhs.append(sqrt_n * layer_frob[l] * eps_tilde_trace[l - 1])

    norm_y1 = float(np.linalg.norm(ys_o[0]))
    norm_yL = float(np.linalg.norm(ys_o[-1]))
    if norm_yL == 0.0:
        raise ValueError("original network output has zero norm on the probe")
    xi_estimate = (np.sqrt(layer_dE[0]) / (norm_y1 / sqrt_n)
                   if norm_y1 > 0 else np.inf)
    xi_measured = float(np.linalg.norm(ys_p[-1] - ys_o[-1])) / norm_yL

    return BoundReport(layer_dE, layer_eps,
                       [float(np.sqrt(v)) for v in layer_dE],
                       layer_frob, scale_factors, eps_tilde_trace,
                       eps_tilde_trace[-1], rhs,
                       float(xi_estimate), xi_measured,
                       theorem2_lhs, theorem2_rhs)


def relative_output_error(original, pruned, probe, dE_first_layer=None):
    """First-layer-driven estimate of the relative output change vs. truth.

    The estimate divides √(δE¹) by the RMS column norm of the original
    first-layer output; the measured value is ||Ỹ - Y||_F / ||Y||_F at the
    final layer.
    """
    report = build_bound_report(original, pruned, probe)
    if dE_first_layer is None:
        dE_first_layer = report.layer_dE[0]
    n = probe.n
    ys_o, _ = forward(original, probe.inputs)
    norm_y1 = float(np.linalg.norm(ys_o[0]))
    if norm_y1 == 0.0:
        raise ValueError("first-layer output has zero norm on the probe")
    estimate = float(np.sqrt(dE_first_layer) / (norm_y1 / np.sqrt(n)))
    return estimate, report.xi_r_measured


@dataclass
class HistogramReport:
    edges: np.ndarray
    counts: np.ndarray
    fractions: np.ndarray
    cutoff: float
    fraction_below: float


def sensitivity_histogram(scores, bins=40, cutoff=1e-3):
    """Log-spaced histogram of finite sensitivity scores.

    Zeros are folded into the lowest bin; the report states the fraction of
    scores strictly below ``cutoff``.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    finite = scores[np.isfinite(scores)]
    if finite.size == 0:
        raise ValueError("no finite sensitivity scores")
    positive = finite[finite > 0]
    if positive.size == 0:
        edges = np.array([0.0, 1.0])
        counts = np.array([finite.size])
    else:
        lo, hi = positive.min(), positive.max()
        if lo == hi:
            edges = np.array([lo * (1 - 1e-9), hi * (1 + 1e-9)])
        else:
            edges = np.logspace(np.log10(lo), np.log10(hi), bins + 1)
        counts, edges = np.histogram(np.maximum(finite, lo), bins=edges)
    fractions = counts / finite.size
    fraction_below = float(np.mean(finite < cutoff))
    return HistogramReport(edges, counts, fractions, cutoff, fraction_below)
