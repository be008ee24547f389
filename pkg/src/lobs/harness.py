"""Experiment orchestration: train, prune, measure bounds, retrain, report.

Every run is fully determined by its config (all randomness is seeded), so
a decision log plus the config reproduces a pruned model byte for byte.
"""

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import baselines, bounds, data as datamod, model_io, pruner
from .config import build_network
from .decision_log import DecisionLogWriter, read_decision_log
from .errors import PhaseError, ReplayError
from .hessian import accumulate_psi, recursive_psi_inverse
from .network import capture_snapshots, test_error
from .train import TrainConfig, train_sgd


def resolve_dataset(cfg):
    """(train, test) datasets for the config; synthetic data is generated
    on first use."""
    ds = cfg.dataset
    if ds.kind == "blobs":
        train = datamod.gaussian_blobs(n_per_class=200, seed=11, split="train")
        test = datamod.gaussian_blobs(n_per_class=100, seed=12, split="test")
        return train, test
    if ds.kind == "synthetic":
        marker = os.path.join(ds.path, "train-images-idx3-ubyte")
        if not os.path.exists(marker):
            datamod.generate_synthetic_digits(ds.path)
    return datamod.load_mnist(ds.path)


@dataclass
class RunReport:
    original_error: float
    total_params: int
    preserved_params: int
    cr_per_layer: list                  # (layer, preserved, total) triples
    error_after_pruning: float
    error_after_retraining: float
    retrain_iterations_to_recovery: int  # None if never recovered
    recovery_target: float
    bound_report: bounds.BoundReport
    phase_seconds: dict = field(default_factory=dict)
    stage_reports: list = field(default_factory=list)
    criterion: str = "lobs"

    @property
    def cr_overall(self):
        return self.preserved_params / self.total_params

    def text(self):
        lines = [
            f"criterion:                {self.criterion}",
            f"original test error:      {self.original_error:.4%}",
            f"compression ratio:        {self.cr_overall:.4%} "
            f"({self.preserved_params}/{self.total_params})",
        ]
        for layer, preserved, total in self.cr_per_layer:
            lines.append(f"  layer {layer}: {preserved}/{total} "
                         f"= {preserved / total:.4%}")
        recovered = (str(self.retrain_iterations_to_recovery)
                     if self.retrain_iterations_to_recovery is not None
                     else "not reached")
        lines += [
            f"error after pruning:      {self.error_after_pruning:.4%}",
            f"error after retraining:   {self.error_after_retraining:.4%}",
            f"retrain iters to recover: {recovered} "
            f"(target {self.recovery_target:.4%})",
            f"bounds:                   {self.bound_report.summary()}",
        ]
        for phase, seconds in self.phase_seconds.items():
            lines.append(f"  [{phase}] {seconds:.2f}s")
        return "\n".join(lines)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["field", "value"])
            writer.writerow(["criterion", self.criterion])
            writer.writerow(["original_error", repr(self.original_error)])
            writer.writerow(["cr_overall", repr(self.cr_overall)])
            writer.writerow(["preserved_params", self.preserved_params])
            writer.writerow(["total_params", self.total_params])
            for layer, preserved, total in self.cr_per_layer:
                writer.writerow([f"layer{layer}_preserved", preserved])
                writer.writerow([f"layer{layer}_total", total])
            writer.writerow(["error_after_pruning",
                             repr(self.error_after_pruning)])
            writer.writerow(["error_after_retraining",
                             repr(self.error_after_retraining)])
            writer.writerow(["retrain_iterations_to_recovery",
                             self.retrain_iterations_to_recovery])
            writer.writerow(["recovery_target", repr(self.recovery_target)])
            for phase, seconds in self.phase_seconds.items():
                writer.writerow([f"seconds_{phase}", repr(seconds)])


class _Phase:
    """Times a pipeline phase and tags any failure with its name."""

    def __init__(self, name, clock):
        self.name = name
        self.clock = clock

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.clock[self.name] = time.perf_counter() - self.start
        if exc is not None and not isinstance(exc, PhaseError):
            raise PhaseError(f"phase {self.name!r} failed: {exc}",
                             phase=self.name) from exc
        return False


def _stage_plans(cfg, layer_count):
    """Per-stage ordered {layer: PruneConfig} built from the config."""
    plans = []
    pr = cfg.prune
    if pr.mode == "ratio":
        for ratios in pr.stage_ratios:
            plans.append({l: ("cr", ratios[l]) for l in range(layer_count)})
    elif pr.mode == "count":
        plans.append({l: ("count", pr.counts[l]) for l in range(layer_count)})
    else:
        plans.append({l: ("threshold", pr.epsilon) for l in range(layer_count)})
    return plans


def _prune_to_target(net, layer_index, criterion, rule, snapshot, cfg,
                     decision_sink):
    """Apply one layer's pruning rule under any criterion.

    CR and count rules resolve to an exact number of deletions so every
    criterion removes identical counts (fair comparisons); thresholds are
    second-order-only.
    """
    layer = net.layers[layer_index]
    kind, value = rule
    if kind == "cr":
        target_preserved = int(np.floor(value * layer.n_params))
        k = max(layer.active_count - target_preserved, 0)
    elif kind == "count":
        k = value
    else:
        k = None
    if criterion == "lobs":
        if k is None:
            config = pruner.PruneConfig.threshold(
                value, batch_size_per_recompute=cfg.prune.batch_size_per_recompute)
        else:
            if k == 0:
                return
            config = pruner.PruneConfig.by_count(
                k, batch_size_per_recompute=cfg.prune.batch_size_per_recompute)
        pruner.prune_layer(net, layer_index, snapshot, config,
                           alpha=cfg.prune.alpha, decision_sink=decision_sink)
        return
    if k is None:
        raise ValueError("threshold mode is only defined for the lobs criterion")
    if k == 0:
        return
    scores = baselines.criterion_scores(criterion, layer, snapshot=snapshot,
                                        seed=cfg.retrain.seed)
    order = np.argsort(scores, kind="stable")[:k]
    rows = layer.block_size
    for q in order:
        r, c = int(q) % rows, int(q) // rows
        if decision_sink is not None:
            decision_sink(pruner.PruneDecision(
                layer_index, int(q), r, c, float(scores[q]),
                float(layer.weights[r, c])))
        layer.weights[r, c] = 0.0
        layer.mask[r, c] = 0


def _run_pruning_stages(net, cfg, train_data, criterion, log_writer=None):
    """All pruning stages (with deterministic inter-stage retraining)."""
    plans = _stage_plans(cfg, net.n_layers)
    total = net.n_params
    preserved = [net.active_count]  # mutable closure state for the log

    def sink_for(stage):
        if log_writer is None:
            return None

        def sink(decision):
            preserved[0] -= 1
            log_writer.write(stage, decision, preserved[0] / total)
        return sink

    stage_reports = []
    for s, plan in enumerate(plans):
        probe = train_data.subsample(cfg.dataset.probe_size,
                                     seed=cfg.dataset.probe_seed)
        snaps = capture_snapshots(net, probe,
                                  conv_positions_cap=cfg.prune.conv_positions_cap,
                                  seed=cfg.dataset.probe_seed)
        sink = sink_for(s)
        for layer_index, rule in plan.items():
            _prune_to_target(net, layer_index, criterion, rule,
                             snaps[layer_index], cfg, sink)
        stage_reports.append((s, net.compression_ratio()))
        if s < len(plans) - 1:
            retrain = cfg.retrain_train_config(cfg.retrain.max_iterations,
                                               criterion)
            train_sgd(net, train_data, retrain)
    return stage_reports


def retrain_with_recovery(net, train_data, test_data, cfg, criterion,
                          target_error, stop_at_recovery=True,
                          max_iterations=None):
    """Masked retraining, evaluating every ``eval_every`` iterations.

    Returns (iterations_to_recovery or None, final error, trace) where the
    trace lists (iteration, test error) pairs starting at iteration 0.
    """
    eval_every = cfg.retrain.eval_every
    budget = cfg.retrain.max_iterations if max_iterations is None \
        else max_iterations
    err = test_error(net, test_data)
    trace = [(0, err)]
    recovery = 0 if err <= target_error else None
    if recovery is not None and stop_at_recovery:
        return recovery, err, trace
    base = cfg.retrain_train_config(0, criterion)
    rng = np.random.default_rng(base.seed)
    done = 0
    while done < budget:
        step = min(eval_every, budget - done)
        chunk_cfg = TrainConfig(base.learning_rate, base.batch_size, step,
                                base.seed)
        train_sgd(net, train_data, chunk_cfg, rng=rng)
        done += step
        err = test_error(net, test_data)
        trace.append((done, err))
        if recovery is None and err <= target_error:
            recovery = done
            if stop_at_recovery:
                break
    return recovery, err, trace


def run_experiment(cfg, criterion=None, out_dir=None, pretrained=None):
    """Full pipeline: train, prune, bound check, retrain, report."""
    criterion = criterion or cfg.prune.criterion
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    clock = {}

    with _Phase("data", clock):
        train_data, test_data = resolve_dataset(cfg)

    with _Phase("train", clock):
        if pretrained is not None:
            net = pretrained.copy()
        else:
            net = build_network(cfg.model)
            _, trace = train_sgd(net, train_data, cfg.train)
            with open(os.path.join(out_dir, "loss_trace.csv"), "w",
                      newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["iteration", "loss"])
                writer.writerows(enumerate(trace))
        trained_path = os.path.join(out_dir, "model_trained.net")
        model_io.save_network(trained_path, net)
        original_error = test_error(net, test_data)
        original = net.copy()

    with _Phase("prune", clock):
        log_path = os.path.join(out_dir, "decisions.csv")
        meta = {
            "alpha": repr(cfg.prune.alpha),
            "probe_size": cfg.dataset.probe_size,
            "probe_seed": cfg.dataset.probe_seed,
            "conv_positions_cap": cfg.prune.conv_positions_cap,
        }
        with DecisionLogWriter(log_path, model_io.file_sha256(trained_path),
                               criterion, extra=meta) as log_writer:
            stage_reports = _run_pruning_stages(net, cfg, train_data,
                                                criterion, log_writer)
        model_io.save_network(os.path.join(out_dir, "model_pruned.net"), net)
        error_after_pruning = test_error(net, test_data)

    with _Phase("bounds", clock):
        probe = train_data.subsample(cfg.dataset.probe_size,
                                     seed=cfg.dataset.probe_seed)
        report_bounds = bounds.build_bound_report(original, net, probe)
        report_bounds.to_csv(os.path.join(out_dir, "bounds.csv"))

    with _Phase("retrain", clock):
        target = original_error + cfg.retrain.recovery_margin_pp / 100.0
        recovery, err_final, trace = retrain_with_recovery(
            net, train_data, test_data, cfg, criterion, target)
        model_io.save_network(os.path.join(out_dir, "model_retrained.net"),
                              net)

    cr_per_layer = [(l, layer.active_count, layer.n_params)
                    for l, layer in enumerate(net.layers)]
    report = RunReport(
        original_error=original_error,
        total_params=net.n_params,
        preserved_params=net.active_count,
        cr_per_layer=cr_per_layer,
        error_after_pruning=error_after_pruning,
        error_after_retraining=err_final,
        retrain_iterations_to_recovery=recovery,
        recovery_target=target,
        bound_report=report_bounds,
        phase_seconds=clock,
        stage_reports=stage_reports,
        criterion=criterion,
    )
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(report.text() + "\n")
    report.to_csv(os.path.join(out_dir, "report.csv"))
    return report


def run_curve(cfg, criteria=None, ratios=None, out_path=None, pretrained=None,
              test_data=None, train_data=None):
    """Accuracy after pruning one layer to each ratio, per criterion.

    ``ratios`` are pruning ratios (fraction of the layer's parameters
    deleted); no retraining happens.  Returns (criterion, ratio, accuracy)
    rows and optionally writes them as CSV.
    """
    criteria = criteria or cfg.curve.criteria
    ratios = ratios if ratios is not None else cfg.curve.ratios
    if any(not (0.0 < r <= 1.0) for r in ratios):
        raise ValueError("pruning ratios must lie in (0, 1]")
    if train_data is None or test_data is None:
        train_data, test_data = resolve_dataset(cfg)
    if pretrained is None:
        pretrained = build_network(cfg.model)
        train_sgd(pretrained, train_data, cfg.train)
    layer_index = cfg.curve.layer
    probe = train_data.subsample(cfg.dataset.probe_size,
                                 seed=cfg.dataset.probe_seed)
    snaps = capture_snapshots(pretrained, probe,
                              conv_positions_cap=cfg.prune.conv_positions_cap,
                              seed=cfg.dataset.probe_seed)
    rows = []
    for criterion in criteria:
        for ratio in ratios:
            scratch = pretrained.copy()
            baselines.prune_by_criterion(
                scratch, layer_index, criterion, ratio,
                snapshot=snaps[layer_index], seed=cfg.dataset.probe_seed,
                alpha=cfg.prune.alpha,
                batch_size=cfg.prune.batch_size_per_recompute)
            accuracy = 1.0 - test_error(scratch, test_data)
            rows.append((criterion, float(ratio), accuracy))
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["criterion", "ratio", "test_accuracy"])
            writer.writerows(rows)
    return rows


def run_retrain_trace(cfg, out_path=None, pretrained=None):
    """Per-iteration test-error traces for compensated vs magnitude pruning
    at matched compression, starting from the respective post-prune errors."""
    train_data, test_data = resolve_dataset(cfg)
    if pretrained is None:
        pretrained = build_network(cfg.model)
        train_sgd(pretrained, train_data, cfg.train)
    traces = {}
    for criterion in ("lobs", "magnitude"):
        net = pretrained.copy()
        _run_pruning_stages(net, cfg, train_data, criterion)
        _, _, trace = retrain_with_recovery(
            net, train_data, test_data, cfg, criterion, target_error=-1.0,
            stop_at_recovery=False)
        traces[criterion] = trace
    rows = [(it_a, err_a, err_b)
            for (it_a, err_a), (_, err_b)
            in zip(traces["lobs"], traces["magnitude"])]
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "lobs_error", "magnitude_error"])
            writer.writerows(rows)
    return rows


def dump_layer_psi(net, probe, out_path, alpha=1e6, conv_positions_cap=20,
                   seed=0):
    """Persist every layer's Ψ and Ψ⁻¹ for offline inspection."""
    snaps = capture_snapshots(net, probe,
                              conv_positions_cap=conv_positions_cap, seed=seed)
    named = {}
    for snap in snaps:
        psi = accumulate_psi(snap)
        pinv = recursive_psi_inverse(snap, alpha=alpha)
        named[f"layer{snap.layer_index}_psi"] = psi.psi
        named[f"layer{snap.layer_index}_psi_inv"] = pinv.inv
    model_io.save_matrices(out_path, named)
    return out_path


def replay(log_path, model_path, out_path, cfg=None, upto=None):
    """Re-apply a decision log to its base model, byte-identically.

    Compensated (lobs) logs rebuild each stage's block inverses from the
    config's probe settings; uncompensated logs need no config for a single
    stage.  ``upto`` truncates the log to its first N rows.
    """
    meta, rows = read_decision_log(log_path)
    actual = model_io.file_sha256(model_path)
    expected = meta.get("base_model_sha256")
    if expected != actual:
        raise ReplayError(
            f"base model hash {actual} does not match log ({expected})")
    if upto is not None:
        rows = rows[:upto]
    net = model_io.load_network(model_path)
    criterion = meta.get("criterion", "lobs")
    compensated = criterion == "lobs"
    stages = sorted({row.stage for row in rows}) or [0]
    if (compensated or len(stages) > 1) and cfg is None:
        raise ReplayError(
            "replaying this log needs the experiment config (probe and "
            "retrain settings)")

    train_data = resolve_dataset(cfg)[0] if cfg is not None else None
    for s in stages:
        stage_rows = [row for row in rows if row.stage == s]
        pinvs = {}
        if compensated:
            probe = train_data.subsample(cfg.dataset.probe_size,
                                         seed=cfg.dataset.probe_seed)
            snaps = capture_snapshots(
                net, probe, conv_positions_cap=cfg.prune.conv_positions_cap,
                seed=cfg.dataset.probe_seed)
            for layer_index in sorted({row.layer for row in stage_rows}):
                pinvs[layer_index] = recursive_psi_inverse(
                    snaps[layer_index], alpha=cfg.prune.alpha)
        for row in stage_rows:
            layer = net.layers[row.layer]
            if compensated:
                pruner.apply_prune(layer, pinvs[row.layer], row.q,
                                    keep_delta=False)
            else:
                layer.weights[row.row, row.col] = 0.0
                layer.mask[row.row, row.col] = 0
        is_last = s == stages[-1]
        if not is_last:
            retrain = cfg.retrain_train_config(cfg.retrain.max_iterations,
                                               criterion)
            train_sgd(net, train_data, retrain)
    model_io.save_network(out_path, net)
    return out_path
