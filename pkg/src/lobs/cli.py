"""Command-line entry point.

Subcommands: train, prune, curve, retrain-trace, bounds, replay.  Heavy
imports happen after argument parsing so --threads can pin the BLAS pool
before numpy loads.
"""

import argparse
import os
import sys


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lobs",
        description="Layer-wise second-order pruning toolkit")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP threads")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="experiment config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override every seed in the config")
        p.add_argument("--criterion", default=None,
                       help="override the pruning criterion")

    common(sub.add_parser("train", help="train a model and save it"))
    common(sub.add_parser("prune", help="full pipeline: train, prune, "
                                        "bound check, retrain, report"))
    common(sub.add_parser("curve", help="accuracy vs pruning ratio, "
                                        "one layer, several criteria"))
    common(sub.add_parser("retrain-trace",
                          help="retraining error traces, compensated vs "
                               "magnitude"))
    bounds_p = sub.add_parser("bounds", help="bound report for a saved "
                                             "original/pruned model pair")
    common(bounds_p)
    bounds_p.add_argument("--original", default=None,
                          help="original model container (default: "
                               "OUT/model_trained.net)")
    bounds_p.add_argument("--pruned", default=None,
                          help="pruned model container (default: "
                               "OUT/model_pruned.net)")
    bounds_p.add_argument("--dump-psi", action="store_true",
                          help="also dump per-layer Psi and its inverse")
    replay_p = sub.add_parser("replay", help="re-apply a decision log to "
                                             "its base model")
    common(replay_p, config_required=False)
    replay_p.add_argument("--log", required=True, help="decision log CSV")
    replay_p.add_argument("--model", required=True, help="base model file")
    replay_p.add_argument("--output", required=True,
                          help="path for the replayed model")
    replay_p.add_argument("--upto", type=int, default=None,
                          help="apply only the first N decisions")
    return parser


def _pin_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        _pin_threads(args.threads)

    from . import harness, model_io
    from .config import parse_config

    cfg = parse_config(args.config) if args.config else None
    if cfg is not None:
        if args.seed is not None:
            cfg.apply_seed_override(args.seed)
        if args.out is not None:
            cfg.out_dir = args.out
        os.makedirs(cfg.out_dir, exist_ok=True)

    if args.command == "train":
        from .config import build_network
        from .train import train_sgd
        train_data, test_data = harness.resolve_dataset(cfg)
        net = build_network(cfg.model)
        _, trace = train_sgd(net, train_data, cfg.train)
        path = os.path.join(cfg.out_dir, "model_trained.net")
        model_io.save_network(path, net)
        from .network import test_error
        print(f"trained model saved to {path}; "
              f"final loss {trace[-1] if len(trace) else float('nan'):.4f}; "
              f"test error {test_error(net, test_data):.4%}")
        return 0

    if args.command == "prune":
        report = harness.run_experiment(cfg, criterion=args.criterion)
        print(report.text())
        return 0

    if args.command == "curve":
        criteria = [args.criterion] if args.criterion else None
        out_path = os.path.join(cfg.out_dir, "curve.csv")
        rows = harness.run_curve(cfg, criteria=criteria, out_path=out_path)
        for criterion, ratio, acc in rows:
            print(f"{criterion:>10} ratio {ratio:.3f} accuracy {acc:.4%}")
        print(f"curve written to {out_path}")
        return 0

    if args.command == "retrain-trace":
        out_path = os.path.join(cfg.out_dir, "retrain_trace.csv")
        rows = harness.run_retrain_trace(cfg, out_path=out_path)
        print(f"{len(rows)} trace points written to {out_path}")
        return 0

    if args.command == "bounds":
        from . import bounds as boundsmod
        original_path = args.original or os.path.join(cfg.out_dir,
                                                      "model_trained.net")
        pruned_path = args.pruned or os.path.join(cfg.out_dir,
                                                  "model_pruned.net")
        original = model_io.load_network(original_path)
        pruned = model_io.load_network(pruned_path)
        train_data, _ = harness.resolve_dataset(cfg)
        probe = train_data.subsample(cfg.dataset.probe_size,
                                     seed=cfg.dataset.probe_seed)
        report = boundsmod.build_bound_report(original, pruned, probe)
        out_path = os.path.join(cfg.out_dir, "bounds.csv")
        report.to_csv(out_path)
        print(report.summary())
        if args.dump_psi:
            psi_path = os.path.join(cfg.out_dir, "psi_dump.bin")
            harness.dump_layer_psi(
                original, probe, psi_path, alpha=cfg.prune.alpha,
                conv_positions_cap=cfg.prune.conv_positions_cap,
                seed=cfg.dataset.probe_seed)
            print(f"psi matrices dumped to {psi_path}")
        return 0

    if args.command == "replay":
        out = harness.replay(args.log, args.model, args.output, cfg=cfg,
                             upto=args.upto)
        print(f"replayed model written to {out}")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
