"""Second-order layer pruning with compensating weight updates.

A parameter's sensitivity is the exact increase of the layer
reconstruction error when that parameter is deleted and the rest of its
block optimally absorbs the change:

    L_q = theta_q^2 / [Psi^-1]_rr,    delta_block = -(theta_q / [Psi^-1]_rr) Psi^-1 e_r

(the error Hessian blocks are 2*Psi; the factor cancels in the update and
lands as theta^2 rather than theta^2/2 in the score).  Layer inputs are
fixed while a layer is being pruned, so Psi^-1 is computed once per layer
per stage and never refreshed mid-stage.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, LayerExhaustedError
from .hessian import DEGENERATE_DIAG, recursive_psi_inverse
from .layers import activate
from .network import capture_snapshots, test_error
from .train import train_sgd

log = logging.getLogger(__name__)

MODES = ("threshold", "ratio", "count")


@dataclass
class PruneConfig:
    """Stopping rule for pruning one layer.

    Exactly one of ``epsilon`` (threshold on sqrt(L_q)), ``compression_ratio``
    (preserved/original parameters), or ``count`` is set, matching ``mode``.
    Sensitivities are recomputed every ``batch_size_per_recompute`` prunes;
    within a batch, decisions use the frozen ranking while updates compose
    cumulatively.
    """

    mode: str
    epsilon: float = None
    compression_ratio: float = None
    count: int = None
    batch_size_per_recompute: int = 1000

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        given = {
            "threshold": self.epsilon,
            "ratio": self.compression_ratio,
            "count": self.count,
        }
        for mode, value in given.items():
            if (value is not None) != (mode == self.mode):
                raise ValueError(
                    f"mode {self.mode!r} requires exactly its own stopping "
                    f"value; got epsilon={self.epsilon}, "
                    f"compression_ratio={self.compression_ratio}, "
                    f"count={self.count}")
        if self.mode == "ratio" and not (0.0 < self.compression_ratio <= 1.0):
            raise ValueError("compression_ratio must lie in (0, 1]")
        if self.mode == "count" and self.count < 0:
            raise ValueError("count must be >= 0")
        if self.batch_size_per_recompute < 1:
            raise ValueError("batch_size_per_recompute must be >= 1")

    @classmethod
    def threshold(cls, epsilon, **kw):
        return cls("threshold", epsilon=epsilon, **kw)

    @classmethod
    def ratio(cls, compression_ratio, **kw):
        return cls("ratio", compression_ratio=compression_ratio, **kw)

    @classmethod
    def by_count(cls, count, **kw):
        return cls("count", count=count, **kw)


@dataclass
class SensitivityTable:
    """Flat per-parameter sensitivities for one layer.

    ``scores[q]`` is finite for active parameters, +inf for already-pruned
    ones and for active parameters whose curvature direction is unobserved
    on the probe (``degenerate``); those are never selected.
    """

    layer_index: int
    scores: np.ndarray
    degenerate: np.ndarray

    @property
    def selectable(self):
        return np.isfinite(self.scores)

    def active_scores(self):
        return self.scores[self.selectable]


@dataclass
class PruneDecision:
    """One pruning action: delete parameter q, compensate within its block.

    ``delta`` (when kept) is the in-block update vector; ``delta[row]``
    equals exactly ``-theta`` and masked coordinates stay zero.
    """

    layer_index: int
    q: int
    row: int
    col: int
    sensitivity: float
    theta: float
    delta: np.ndarray = None

    @property
    def predicted_dE(self):
        return self.sensitivity


def sensitivities(layer, pinv):
    """Score every parameter of ``layer`` against the block inverse ``pinv``."""
    rows = layer.block_size
    if pinv.inv.shape[0] != rows:
        raise DimensionError(
            f"inverse of size {pinv.inv.shape[0]} does not match layer block "
            f"size {rows}")
    diag = np.diag(pinv.inv)
    degenerate_rows = diag <= DEGENERATE_DIAG
    safe = np.where(degenerate_rows, 1.0, diag)
    w = layer.weights
    scores = (w * w) / safe[:, None]
    degenerate = degenerate_rows[:, None] & (w != 0.0)
    scores[degenerate] = np.inf
    scores[layer.mask == 0] = np.inf
    return SensitivityTable(
        pinv.layer_index,
        scores.flatten(order="F"),
        (degenerate & (layer.mask != 0)).flatten(order="F"),
    )


def apply_prune(layer, pinv, q, keep_delta):
    """Delete flat parameter q with optimal in-block compensation."""
    rows = layer.block_size
    r, c = q % rows, q // rows
    theta = layer.weights[r, c]
    d = pinv.inv[r, r]
    score = theta * theta / d if d > DEGENERATE_DIAG else (
        0.0 if theta == 0.0 else np.inf)
    if theta == 0.0:
        delta = np.zeros(rows)
    else:
        delta = pinv.inv[:, r] * (-theta / d)
    delta[r] = -theta
    # compensation never touches coordinates that are already pruned
    delta *= layer.mask[:, c]
    layer.weights[:, c] += delta
    layer.weights[r, c] = 0.0
    layer.mask[r, c] = 0
    return PruneDecision(pinv.layer_index, int(q), int(r), int(c),
                         float(score), float(theta),
                         delta if keep_delta else None)


def prune_one(layer, table, pinv, keep_delta=True):
    """Prune the least sensitive selectable parameter (ties: lowest index)."""
    if not np.any(table.selectable):
        raise LayerExhaustedError("no prunable parameter left in layer")
    q = int(np.argmin(table.scores))
    decision = apply_prune(layer, pinv, q, keep_delta)
    table.scores[q] = np.inf
    return decision


def measure_layer_dE(layer, snapshot):
    """Reconstruction error E = (1/N)||Ŵᵀ Y - Z||_F² on the snapshot."""
    z_hat = layer.masked_weights().T @ snapshot.inputs
    diff = z_hat - snapshot.pre_activations
    return float(np.sum(diff * diff)) / snapshot.sample_count


def measure_layer_eps(layer, snapshot):
    """Post-activation RMS error (1/sqrt(N))||σ(Ẑ) - σ(Z)||_F."""
    z_hat = layer.masked_weights().T @ snapshot.inputs
    diff = (activate(z_hat, layer.activation)
            - activate(snapshot.pre_activations, layer.activation))
    return float(np.linalg.norm(diff)) / np.sqrt(snapshot.sample_count)


def prune_layer(net, layer_index, snapshot, config, pinv=None, alpha=1e6,
                keep_deltas=False, decision_sink=None):
    """Prune one layer until its stopping rule fires.

    Returns (ordered decisions, final layer reconstruction error).  The
    block inverse is built once from the snapshot and reused for every
    decision; sensitivities are re-ranked every
    ``config.batch_size_per_recompute`` prunes.
    """
    layer = net.layers[layer_index]
    if pinv is None:
        pinv = recursive_psi_inverse(snapshot, alpha=alpha)

    if config.mode == "count":
        to_prune = config.count
    elif config.mode == "ratio":
        target_preserved = int(np.floor(config.compression_ratio * layer.n_params))
        to_prune = max(layer.active_count - target_preserved, 0)
    else:
        to_prune = None  # threshold mode stops on the score, not a count

    decisions = []
    done = to_prune == 0
    warned = False
    while not done:
        table = sensitivities(layer, pinv)
        if not warned and np.any(table.degenerate):
            log.warning("layer %d: %d parameter(s) lie in input directions "
                        "unobserved on the probe and are never pruned",
                        layer_index, int(table.degenerate.sum()))
            warned = True
        order = np.argsort(table.scores, kind="stable")
        in_batch = 0
        progressed = False
        for q in order:
            if not np.isfinite(table.scores[q]):
                if config.mode == "threshold":
                    done = True
                    break
                raise LayerExhaustedError(
                    f"layer {layer_index}: exhausted after "
                    f"{len(decisions)} prunes, {to_prune - len(decisions)} "
                    f"more requested")
            if config.mode == "threshold" and np.sqrt(table.scores[q]) > config.epsilon:
                done = True
                break
            decision = apply_prune(layer, pinv, q, keep_deltas)
            decisions.append(decision)
            if decision_sink is not None:
                decision_sink(decision)
            progressed = True
            in_batch += 1
            if to_prune is not None and len(decisions) >= to_prune:
                done = True
                break
            if in_batch >= config.batch_size_per_recompute:
                break
        if not progressed and not done:
            done = True
    return decisions, measure_layer_dE(layer, snapshot)


def threshold_sweep(net, layer_index, snapshot, eps_grid, alpha=1e6,
                    batch_size=1000):
    """(epsilon, pruned fraction, layer error) along an ascending grid.

    Works on a copy of the layer; pruning continues incrementally as the
    threshold grows, so the pruned fraction is monotone nondecreasing.
    """
    eps_grid = list(eps_grid)
    if any(b < a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValueError("epsilon grid must be ascending")
    scratch = net.copy()
    layer = scratch.layers[layer_index]
    pinv = recursive_psi_inverse(snapshot, alpha=alpha)
    curve = []
    for eps in eps_grid:
        config = PruneConfig.threshold(eps, batch_size_per_recompute=batch_size)
        prune_layer(scratch, layer_index, snapshot, config, pinv=pinv)
        pruned_fraction = 1.0 - layer.active_count / layer.n_params
        curve.append((float(eps), pruned_fraction,
                      measure_layer_eps(layer, snapshot)))
    return curve


@dataclass
class StageReport:
    stage: int
    cr_overall: float
    error_after_pruning: float
    error_after_retraining: float
    retrain_iterations: int
    layer_dE: dict = field(default_factory=dict)


def iterative_lobs(net, train_data, test_data, stage_plans, retrain_configs,
                   probe_size=1000, probe_seed=0, alpha=1e6,
                   conv_positions_cap=20, keep_deltas=False,
                   decision_sink=None):
    """Alternate pruning stages with masked retraining.

    ``stage_plans`` is a list of ordered (layer_index -> PruneConfig) dicts;
    ``retrain_configs`` pairs each stage with a TrainConfig (or None to skip
    retraining).  Snapshots are re-captured from the current network at the
    start of every stage.
    """
    if len(stage_plans) == 0:
        raise ValueError("need at least one pruning stage")
    if len(retrain_configs) != len(stage_plans):
        raise ValueError("one retrain config (or None) per stage required")
    reports = []
    for s, plan in enumerate(stage_plans):
        probe = train_data.subsample(probe_size, seed=probe_seed)
        snaps = capture_snapshots(net, probe,
                                  conv_positions_cap=conv_positions_cap,
                                  seed=probe_seed)
        layer_dE = {}
        for layer_index, cfg in plan.items():
            sink = None
            if decision_sink is not None:
                sink = lambda d, _s=s: decision_sink(_s, d)
            _, dE = prune_layer(net, layer_index, snaps[layer_index], cfg,
                                alpha=alpha, keep_deltas=keep_deltas,
                                decision_sink=sink)
            layer_dE[layer_index] = dE
        err_pruned = test_error(net, test_data)
        retrain = retrain_configs[s]
        if retrain is not None and retrain.iterations > 0:
            train_sgd(net, train_data, retrain)
            iters = retrain.iterations
        else:
            iters = 0
        err_retrained = test_error(net, test_data)
        reports.append(StageReport(s, net.compression_ratio(), err_pruned,
                                   err_retrained, iters, layer_dE))
    return net, reports
