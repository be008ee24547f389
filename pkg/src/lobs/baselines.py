"""Alternative pruning criteria: random, magnitude, diagonal-curvature, ApoZW.

All baselines delete the lowest-scored parameters outright (no
compensating update); the second-order criterion delegates to the pruner.
Ties are broken by lowest flat index everywhere.
"""

import numpy as np

from .pruner import PruneConfig, PruneDecision, prune_layer

CRITERIA = ("random", "magnitude", "obd", "apozw", "lobs")


def score_magnitude(layer):
    """|theta| per parameter; pruned entries are +inf (never re-selected)."""
    scores = np.abs(layer.weights).flatten(order="F")
    scores[layer.mask.flatten(order="F") == 0] = np.inf
    return scores


def obd_curvature_diag(snapshot):
    """Diagonal second derivatives of the layer reconstruction error.

    One entry per block row; equals twice the mean squared input because
    the error carries no 1/2 prefactor.
    """
    y = snapshot.inputs
    return 2.0 * np.mean(y * y, axis=1)


def score_obd_diagonal(layer, snapshot):
    """Diagonal-curvature sensitivity (1/2) theta^2 H_qq, no compensation."""
    curv = obd_curvature_diag(snapshot)
    scores = (0.5 * layer.weights ** 2 * curv[:, None]).flatten(order="F")
    scores[layer.mask.flatten(order="F") == 0] = np.inf
    return scores


def score_apozw(layer, snapshot):
    """|mean input over the probe| x |weight|, the input-weighted magnitude.

    The probe mean is taken over signed activations before the absolute
    value, exactly as defined.
    """
    mean_in = np.mean(snapshot.inputs, axis=1)
    scores = np.abs(mean_in[:, None] * layer.weights).flatten(order="F")
    scores[layer.mask.flatten(order="F") == 0] = np.inf
    return scores


def score_random(layer, seed):
    """Seeded random permutation ranking over the active parameters."""
    flat_mask = layer.mask.flatten(order="F")
    scores = np.full(flat_mask.shape[0], np.inf)
    active = np.flatnonzero(flat_mask)
    rng = np.random.default_rng(seed)
    scores[active] = rng.permutation(active.shape[0]).astype(np.float64)
    return scores


def criterion_scores(criterion, layer, snapshot=None, seed=0):
    if criterion == "magnitude":
        return score_magnitude(layer)
    if criterion == "obd":
        return score_obd_diagonal(layer, snapshot)
    if criterion == "apozw":
        return score_apozw(layer, snapshot)
    if criterion == "random":
        return score_random(layer, seed)
    raise ValueError(f"unknown scoring criterion {criterion!r}")


def prune_by_criterion(net, layer_index, criterion, ratio, snapshot=None,
                       seed=0, alpha=1e6, batch_size=1000, decision_sink=None):
    """Prune ceil(ratio * active) parameters of one layer by a criterion.

    ``ratio`` is the fraction of currently active parameters to delete.
    Criteria other than ``lobs`` zero the selected weights with no
    compensation.
    """
    if not (0.0 < ratio <= 1.0):
        raise ValueError("ratio must lie in (0, 1]")
    layer = net.layers[layer_index]
    k = int(np.ceil(ratio * layer.active_count))
    if criterion == "lobs":
        config = PruneConfig.by_count(k, batch_size_per_recompute=batch_size)
        prune_layer(net, layer_index, snapshot, config, alpha=alpha,
                    decision_sink=decision_sink)
        return net
    scores = criterion_scores(criterion, layer, snapshot=snapshot, seed=seed)
    order = np.argsort(scores, kind="stable")[:k]
    rows = layer.block_size
    for q in order:
        r, c = int(q) % rows, int(q) // rows
        if decision_sink is not None:
            decision_sink(PruneDecision(layer_index, int(q), r, c,
                                        float(scores[q]), float(layer.weights[r, c])))
        layer.weights[r, c] = 0.0
        layer.mask[r, c] = 0
    return net
