"""Experiment configuration: dataclasses and the sectioned config file.

Config files are flat ``key = value`` text with ``[section]`` headers.
Every key is validated against the known set; unknown sections or keys
raise :class:`ConfigError` so typos cannot silently change an experiment.
"""

import configparser
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .layers import ConvLayer, DenseLayer, IDENTITY, RELU
from .network import Network
from .train import TrainConfig

DATASET_KINDS = ("mnist", "synthetic", "blobs")
CRITERIA = ("lobs", "magnitude", "random", "obd", "apozw")
PRUNE_MODES = ("ratio", "threshold", "count")


@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    path: str = "data/synthetic"
    probe_size: int = 1000
    probe_seed: int = 7


@dataclass
class ModelConfig:
    input_dim: int = 784
    input_shape: tuple = None
    layer_specs: list = field(default_factory=lambda: [("dense", 300),
                                                       ("dense", 100),
                                                       ("dense", 10)])
    init_seed: int = 1


@dataclass
class RetrainConfig:
    learning_rate: float = None        # defaults to the training rate
    max_iterations: int = 2000
    seed: int = 3
    eval_every: int = 10
    recovery_margin_pp: float = 0.2


@dataclass
class PrunePlanConfig:
    criterion: str = "lobs"
    mode: str = "ratio"
    stage_ratios: list = field(default_factory=lambda: [[0.07, 0.2, 0.65]])
    epsilon: float = None
    counts: list = None
    batch_size_per_recompute: int = 1000
    alpha: float = 1e6
    conv_positions_cap: int = 20


@dataclass
class CurveConfig:
    layer: int = 0
    ratios: list = field(default_factory=lambda: [0.5, 0.8, 0.9])
    criteria: list = field(default_factory=lambda: ["lobs", "magnitude",
                                                    "random"])


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=0.1, batch_size=64, iterations=20000, seed=2))
    retrain: RetrainConfig = field(default_factory=RetrainConfig)
    prune: PrunePlanConfig = field(default_factory=PrunePlanConfig)
    curve: CurveConfig = field(default_factory=CurveConfig)
    out_dir: str = "out"

    def retrain_train_config(self, iterations, criterion="lobs"):
        """TrainConfig for retraining; baselines get a 10x smaller rate
        because uncompensated pruning does not tolerate the original one."""
        rate = self.retrain.learning_rate
        if rate is None:
            rate = self.train.learning_rate
        if criterion != "lobs":
            rate = rate * 0.1
        return TrainConfig(learning_rate=rate, batch_size=self.train.batch_size,
                           iterations=iterations, seed=self.retrain.seed)

    def apply_seed_override(self, seed):
        self.model.init_seed = seed
        self.train.seed = seed + 1
        self.dataset.probe_seed = seed + 2
        self.retrain.seed = seed + 3


def parse_layer_spec(text):
    """One layer token: ``dense:UNITS`` or ``conv:OUTxKHxKW[:sSH[xSW]][:pPH[xPW]]``."""
    parts = text.strip().split(":")
    if parts[0] == "dense":
        if len(parts) != 2:
            raise ConfigError(f"bad dense layer spec {text!r}")
        return ("dense", _int(parts[1], "dense units"))
    if parts[0] == "conv":
        if len(parts) < 2:
            raise ConfigError(f"bad conv layer spec {text!r}")
        dims = parts[1].split("x")
        if len(dims) != 3:
            raise ConfigError(f"conv spec needs OUTxKHxKW, got {parts[1]!r}")
        out_c, kh, kw = (_int(d, "conv dims") for d in dims)
        stride, padding = (1, 1), (0, 0)
        for extra in parts[2:]:
            if extra.startswith("s"):
                stride = _pair(extra[1:], "stride")
            elif extra.startswith("p"):
                padding = _pair(extra[1:], "padding")
            else:
                raise ConfigError(f"unknown conv option {extra!r} in {text!r}")
        return ("conv", out_c, (kh, kw), stride, padding)
    raise ConfigError(f"unknown layer kind {parts[0]!r}")


def _pair(text, what):
    dims = text.split("x")
    if len(dims) == 1:
        v = _int(dims[0], what)
        return (v, v)
    if len(dims) == 2:
        return (_int(dims[0], what), _int(dims[1], what))
    raise ConfigError(f"bad {what} spec {text!r}")


def _int(text, what):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"bad integer for {what}: {text!r}") from None


def _float(text, what):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"bad number for {what}: {text!r}") from None


def build_network(model_cfg):
    """Instantiate the configured topology with seeded Glorot weights.

    ReLU everywhere except the final layer, which stays linear and feeds
    the softmax loss.
    """
    rng = np.random.default_rng(model_cfg.init_seed)
    layers = []
    spatial = model_cfg.input_shape
    flat = model_cfg.input_dim
    n = len(model_cfg.layer_specs)
    for i, spec in enumerate(model_cfg.layer_specs):
        activation = IDENTITY if i == n - 1 else RELU
        if spec[0] == "conv":
            _, out_c, kernel, stride, padding = spec
            if spatial is None:
                raise ConfigError("conv layer requires input = CxHxW")
            layer = ConvLayer.init(spatial[0], out_c, kernel, stride, padding,
                                   activation, rng)
            spatial = layer.out_shape(spatial)
            flat = int(np.prod(spatial))
        else:
            layer = DenseLayer.init(flat, spec[1], activation, rng)
            flat = spec[1]
            spatial = None
        layers.append(layer)
    return Network(layers, model_cfg.input_dim, model_cfg.input_shape)


_SECTION_KEYS = {
    "dataset": {"kind", "path", "probe_size", "probe_seed"},
    "model": {"input", "layers", "init_seed"},
    "train": {"learning_rate", "batch_size", "iterations", "seed"},
    "retrain": {"learning_rate", "max_iterations", "seed", "eval_every",
                "recovery_margin_pp"},
    "prune": {"criterion", "mode", "epsilon", "counts",
              "batch_size_per_recompute", "alpha", "conv_positions_cap"},
    "curve": {"layer", "ratios", "criteria"},
    "output": {"dir"},
}


def _float_list(text, what):
    return [_float(tok, what) for tok in text.split(",") if tok.strip()]


def parse_config(path):
    """Parse and validate a config file into an ExperimentConfig."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read(path)
    cfg = ExperimentConfig()

    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            known = _SECTION_KEYS[section]
            if key not in known and not (
                    section == "prune" and _is_stage_key(key)):
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    ds = parser["dataset"] if parser.has_section("dataset") else {}
    if "kind" in ds:
        if ds["kind"] not in DATASET_KINDS:
            raise ConfigError(f"dataset kind must be one of {DATASET_KINDS}")
        cfg.dataset.kind = ds["kind"]
    if "path" in ds:
        cfg.dataset.path = ds["path"]
    if "probe_size" in ds:
        cfg.dataset.probe_size = _int(ds["probe_size"], "probe_size")
    if "probe_seed" in ds:
        cfg.dataset.probe_seed = _int(ds["probe_seed"], "probe_seed")

    md = parser["model"] if parser.has_section("model") else {}
    if "input" in md:
        dims = [_int(d, "model input") for d in md["input"].split("x")]
        if len(dims) == 1:
            cfg.model.input_dim, cfg.model.input_shape = dims[0], None
        elif len(dims) == 3:
            cfg.model.input_shape = tuple(dims)
            cfg.model.input_dim = int(np.prod(dims))
        else:
            raise ConfigError("model input must be FLAT or CxHxW")
    if "layers" in md:
        cfg.model.layer_specs = [parse_layer_spec(tok)
                                 for tok in md["layers"].split(",")]
    if "init_seed" in md:
        cfg.model.init_seed = _int(md["init_seed"], "init_seed")

    tr = parser["train"] if parser.has_section("train") else {}
    cfg.train = TrainConfig(
        learning_rate=_float(tr.get("learning_rate", "0.1"), "learning_rate"),
        batch_size=_int(tr.get("batch_size", "64"), "batch_size"),
        iterations=_int(tr.get("iterations", "20000"), "iterations"),
        seed=_int(tr.get("seed", "2"), "seed"))

    rt = parser["retrain"] if parser.has_section("retrain") else {}
    if "learning_rate" in rt:
        cfg.retrain.learning_rate = _float(rt["learning_rate"],
                                           "retrain learning_rate")
    if "max_iterations" in rt:
        cfg.retrain.max_iterations = _int(rt["max_iterations"],
                                          "max_iterations")
    if "seed" in rt:
        cfg.retrain.seed = _int(rt["seed"], "retrain seed")
    if "eval_every" in rt:
        cfg.retrain.eval_every = _int(rt["eval_every"], "eval_every")
    if "recovery_margin_pp" in rt:
        cfg.retrain.recovery_margin_pp = _float(rt["recovery_margin_pp"],
                                                "recovery_margin_pp")

    pr = parser["prune"] if parser.has_section("prune") else {}
    if "criterion" in pr:
        if pr["criterion"] not in CRITERIA:
            raise ConfigError(f"criterion must be one of {CRITERIA}")
        cfg.prune.criterion = pr["criterion"]
    if "mode" in pr:
        if pr["mode"] not in PRUNE_MODES:
            raise ConfigError(f"prune mode must be one of {PRUNE_MODES}")
        cfg.prune.mode = pr["mode"]
    stages = sorted((key for key in pr if _is_stage_key(key)),
                    key=lambda k: int(k[5:-7]))
    if stages:
        cfg.prune.stage_ratios = [_float_list(pr[k], k) for k in stages]
    if "epsilon" in pr:
        cfg.prune.epsilon = _float(pr["epsilon"], "epsilon")
    if "counts" in pr:
        cfg.prune.counts = [int(v) for v in _float_list(pr["counts"], "counts")]
    if "batch_size_per_recompute" in pr:
        cfg.prune.batch_size_per_recompute = _int(
            pr["batch_size_per_recompute"], "batch_size_per_recompute")
    if "alpha" in pr:
        cfg.prune.alpha = _float(pr["alpha"], "alpha")
    if "conv_positions_cap" in pr:
        cfg.prune.conv_positions_cap = _int(pr["conv_positions_cap"],
                                            "conv_positions_cap")

    cv = parser["curve"] if parser.has_section("curve") else {}
    if "layer" in cv:
        cfg.curve.layer = _int(cv["layer"], "curve layer")
    if "ratios" in cv:
        cfg.curve.ratios = _float_list(cv["ratios"], "curve ratios")
    if "criteria" in cv:
        names = [tok.strip() for tok in cv["criteria"].split(",") if tok.strip()]
        for name in names:
            if name not in CRITERIA:
                raise ConfigError(f"unknown curve criterion {name!r}")
        cfg.curve.criteria = names

    if parser.has_section("output") and "dir" in parser["output"]:
        cfg.out_dir = parser["output"]["dir"]

    _validate(cfg)
    return cfg


def _is_stage_key(key):
    return (key.startswith("stage") and key.endswith("_ratios")
            and key[5:-7].isdigit())


def _validate(cfg):
    n_layers = len(cfg.model.layer_specs)
    if cfg.prune.mode == "ratio":
        for s, ratios in enumerate(cfg.prune.stage_ratios):
            if len(ratios) != n_layers:
                raise ConfigError(
                    f"stage {s + 1} lists {len(ratios)} ratios for "
                    f"{n_layers} prunable layers")
            for r in ratios:
                if not (0.0 < r <= 1.0):
                    raise ConfigError(f"compression ratio {r} outside (0, 1]")
    if cfg.prune.mode == "threshold" and cfg.prune.epsilon is None:
        raise ConfigError("threshold mode requires an epsilon")
    if cfg.prune.mode == "count" and cfg.prune.counts is None:
        raise ConfigError("count mode requires counts")
    if cfg.prune.mode == "count" and len(cfg.prune.counts) != n_layers:
        raise ConfigError("counts list must cover every layer")
