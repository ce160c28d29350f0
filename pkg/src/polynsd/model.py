"""End-to-end model: feature lift, stacked sheaf layers, linear readout, training."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .data import Dataset
from .errors import ConfigError, NumericError
from .layers import (
    NSDLayerParams,
    Nonlinearity,
    PolyNSDLayerParams,
    SheafLearnerParams,
    glorot,
    nsd_core,
    polynsd_core,
)
from .sheaf import Graph, MapKind, num_map_params
from .spectral import parse_strategy

__all__ = [
    "ModelConfig",
    "Model",
    "Adam",
    "TrainReport",
    "Dataset",
    "lift_features",
    "model_forward",
    "loss_and_grad",
    "train",
    "accuracy",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
    "count_parameters",
]

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    layer_kind: str = "polynsd"
    num_layers: int = 2
    stalk_dim: int = 2
    hidden_channels: int = 16
    degree: int = 8
    map_kind: str = "diagonal"
    normalize: bool = True
    lambda_max_strategy: str = "analytic"
    input_dropout: float = 0.0
    layer_dropout: float = 0.0
    lr: float = 0.01
    weight_decay: float = 5e-4
    sheaf_decay: float = 5e-4
    max_epochs: int = 500
    patience: int = 200
    seed: int = 43
    sheaf_hidden: int = 16
    stalk_mix: bool = True
    channel_mix: bool = True
    nonlinearity: str = "elu"
    alpha_init: float = 0.0
    eps: float = 1e-8
    cache_lambda_max: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.layer_kind not in ("polynsd", "nsd"):
            raise ConfigError(f"layer_kind must be 'polynsd' or 'nsd', got {self.layer_kind!r}")
        for name in ("stalk_dim", "hidden_channels", "max_epochs", "patience", "sheaf_hidden"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.num_layers < 0:
            raise ConfigError("num_layers must be >= 0")
        if self.degree < 0:
            raise ConfigError("degree must be >= 0")
        if self.patience > self.max_epochs:
            raise ConfigError("patience must not exceed max_epochs")
        for name in ("input_dropout", "layer_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        try:
            MapKind.parse(self.map_kind)
            parse_strategy(self.lambda_max_strategy)
            Nonlinearity(self.nonlinearity)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class Model:
    """Parameters and forward pass for a stack of PolyNSD or NSD layers.

    All trainable arrays are :class:`Var` leaves; :meth:`parameters` lists
    them with their group (``"sheaf"`` for learner weights, ``"model"`` for
    everything else).
    """

    def __init__(self, config: ModelConfig, in_features: int, num_classes: int):
        self.config = config
        self.in_features = in_features
        self.num_classes = num_classes
        rng = np.random.default_rng(config.seed)
        d, C = config.stalk_dim, config.hidden_channels
        self.lift_w = Var(glorot(rng, in_features, d * C), True, "lift_w")
        self.lift_b = Var(np.zeros(d * C), True, "lift_b")
        self.layers: list[PolyNSDLayerParams | NSDLayerParams] = []
        for i in range(config.num_layers):
            learner = SheafLearnerParams.init(config.map_kind, d, config.sheaf_hidden, rng)
            for k, v in learner.arrays().items():
                setattr(learner, k, Var(v, True, f"layer{i}.sheaf.{k}"))
            if config.layer_kind == "polynsd":
                layer = PolyNSDLayerParams(
                    learner,
                    eta=np.zeros(config.degree + 1),
                    alpha_hp=np.array(config.alpha_init),
                    epsilon_gate=np.zeros((d, C)),
                    stalk_mix=np.eye(d) if config.stalk_mix else None,
                    channel_mix=np.eye(C) if config.channel_mix else None,
                    nonlinearity=Nonlinearity(config.nonlinearity),
                    normalize=config.normalize,
                    lambda_max_strategy=parse_strategy(config.lambda_max_strategy),
                    eps=config.eps,
                )
            else:
                layer = NSDLayerParams(
                    learner,
                    a_scale=np.ones(C),
                    b_scale=np.ones(C),
                    stalk_mix=np.eye(d),
                    channel_mix=np.eye(C),
                    nonlinearity=Nonlinearity(config.nonlinearity),
                    normalize=config.normalize,
                    eps=config.eps,
                )
            for k, v in layer.arrays().items():
                setattr(layer, k, Var(v, True, f"layer{i}.{k}"))
            self.layers.append(layer)
        self.readout_w = Var(glorot(rng, d * C, num_classes), True, "readout_w")
        self.readout_b = Var(np.zeros(num_classes), True, "readout_b")
        self.dropout_rng = np.random.default_rng([config.seed, 1])
        self.last_lambdas: list[float | None] = [None] * config.num_layers

    def parameters(self) -> list[tuple[str, Var, str]]:
        out = [("lift_w", self.lift_w, "model"), ("lift_b", self.lift_b, "model")]
        for layer in self.layers:
            for v in layer.sheaf_learner.arrays().values():
                out.append((v.name, v, "sheaf"))
            for v in layer.arrays().values():
                out.append((v.name, v, "model"))
        out += [("readout_w", self.readout_w, "model"), ("readout_b", self.readout_b, "model")]
        return out

    def num_parameters(self) -> int:
        return int(sum(v.value.size for _, v, _ in self.parameters()))

    def state(self) -> dict[str, np.ndarray]:
        return {name: v.value.copy() for name, v, _ in self.parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, v, _ in self.parameters():
            if state[name].shape != v.value.shape:
                raise ConfigError(f"checkpoint tensor {name} has shape {state[name].shape}, "
                                  f"expected {v.value.shape}")
            v.value = np.array(state[name], dtype=np.float64)

    def _dropout(self, x: Var, rate: float, training: bool) -> Var:
        if not training or rate <= 0.0:
            return x
        keep = self.dropout_rng.random(x.shape) >= rate
        return x * (keep / (1.0 - rate))

    def forward(self, graph: Graph, raw, training: bool = False,
                lambdas: list[float | None] | None = None) -> Var:
        cfg = self.config
        x = lift_features(self, raw, training=training)
        used = []
        for i, layer in enumerate(self.layers):
            x = self._dropout(x, cfg.layer_dropout, training)
            if isinstance(layer, PolyNSDLayerParams):
                lam = None if lambdas is None else lambdas[i]
                x, lam = polynsd_core(layer, x, graph, lam=lam)
                used.append(lam)
            else:
                x = nsd_core(layer, x, graph)
                used.append(None)
        self.last_lambdas = used
        n = x.shape[0]
        flat = x.reshape((n, cfg.stalk_dim * cfg.hidden_channels))
        return flat @ self.readout_w + self.readout_b


def lift_features(model: Model, raw, training: bool = False) -> Var:
    """Linear map of raw features to ``(N, d, C)`` stalk features; input dropout when training."""
    cfg = model.config
    raw = ad.const(np.asarray(raw, dtype=np.float64) if not isinstance(raw, Var) else raw)
    if not np.isfinite(raw.value).all():
        raise NumericError("raw features contain non-finite values")
    raw = model._dropout(raw, cfg.input_dropout, training)
    h = raw @ model.lift_w + model.lift_b
    return h.reshape((raw.shape[0], cfg.stalk_dim, cfg.hidden_channels))


def model_forward(model: Model, graph: Graph, raw, training: bool = False) -> np.ndarray:
    return model.forward(graph, raw, training=training).value


def accuracy(logits: np.ndarray, labels: np.ndarray, idx: np.ndarray) -> float:
    if len(idx) == 0:
        return float("nan")
    return float((logits[idx].argmax(axis=1) == labels[idx]).mean())


def _xent(logits: np.ndarray, labels: np.ndarray, idx: np.ndarray) -> float:
    z = logits[idx] - logits[idx].max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(idx)), labels[idx]].mean())


def loss_and_grad(model: Model, graph: Graph, raw, labels, mask, training: bool = False,
                  lambdas: list[float | None] | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Mean masked cross-entropy and its gradient for every named parameter.

    ``mask`` is an index array (repeats allowed) or a boolean mask. lambda_max
    is held constant through the reverse pass; pass ``lambdas`` to pin it.
    """
    mask = np.asarray(mask)
    idx = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if idx.size == 0:
        raise ValueError("mask selects no nodes")
    params = model.parameters()
    for _, v, _ in params:
        v.grad = None
    logits = model.forward(graph, raw, training=training, lambdas=lambdas)
    if not np.isfinite(logits.value).all():
        raise NumericError("non-finite logits")
    loss = ad.cross_entropy(logits, np.asarray(labels), idx)
    if not np.isfinite(loss.value):
        raise NumericError("non-finite loss")
    ad.backward(loss)
    grads = {}
    for name, v, _ in params:
        g = np.zeros_like(v.value) if v.grad is None else v.grad
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in {name}")
        grads[name] = g
    return float(loss.value), grads


class Adam:
    """Adam with L2 weight decay added to the gradient, per parameter group."""

    def __init__(self, params: list[tuple[str, Var, str]], lr: float = 0.01,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: dict[str, float] | None = None):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay or {}
        self.m = {name: np.zeros_like(v.value) for name, v, _ in params}
        self.v = {name: np.zeros_like(v.value) for name, v, _ in params}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, var, group in self.params:
            g = grads[name]
            wd = self.weight_decay.get(group, 0.0)
            if wd:
                g = g + wd * var.value
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            step = self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            var.value = np.asarray(var.value - step, dtype=np.float64)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    test_acc_history: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = float("nan")
    test_acc: float = float("nan")
    test_loss: float = float("nan")
    num_params: int = 0
    epochs_run: int = 0
    status: str = "OK"
    message: str = ""
    wall_seconds: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return asdict(self)


def train(config: ModelConfig, dataset: Dataset, log=None) -> TrainReport:
    """Fit with Adam and early stopping on validation accuracy.

    The reported test accuracy is the one observed at the epoch with the
    highest validation accuracy (first such epoch on ties). A non-finite
    loss aborts with status ``INS``.
    """
    t0 = time.perf_counter()
    model = Model(config, dataset.features.shape[1], dataset.num_classes)
    opt = Adam(model.parameters(), lr=config.lr,
               weight_decay={"model": config.weight_decay, "sheaf": config.sheaf_decay})
    report = TrainReport(num_params=model.num_parameters())
    labels = np.asarray(dataset.labels)
    best_val = -math.inf
    bad = 0
    cached = None
    for epoch in range(1, config.max_epochs + 1):
        try:
            loss, grads = loss_and_grad(model, dataset.graph, dataset.features, labels,
                                        dataset.train_idx, training=True,
                                        lambdas=cached if config.cache_lambda_max else None)
        except NumericError as exc:
            report.status, report.message = "INS", str(exc)
            break
        opt.step(grads)
        logits = model.forward(dataset.graph, dataset.features, training=False).value
        if config.cache_lambda_max:
            cached = list(model.last_lambdas)
        if not np.isfinite(logits).all():
            report.status, report.message = "INS", "non-finite logits after update"
            break
        report.train_loss.append(loss)
        report.train_acc.append(accuracy(logits, labels, dataset.train_idx))
        report.val_loss.append(_xent(logits, labels, dataset.val_idx) if len(dataset.val_idx) else float("nan"))
        val_acc = accuracy(logits, labels, dataset.val_idx)
        test_acc = accuracy(logits, labels, dataset.test_idx)
        report.val_acc.append(val_acc)
        report.test_acc_history.append(test_acc)
        report.epochs_run = epoch
        if val_acc > best_val:
            best_val = val_acc
            bad = 0
            report.best_epoch = epoch
            report.best_val_acc = val_acc
            report.test_acc = test_acc
            report.test_loss = _xent(logits, labels, dataset.test_idx) if len(dataset.test_idx) else float("nan")
        else:
            bad += 1
        if log is not None:
            log(epoch, loss, val_acc, test_acc)
        if bad >= config.patience:
            break
    report.wall_seconds = time.perf_counter() - t0
    return report


def save_checkpoint(model: Model, path: str | Path) -> None:
    header = {"format": "polynsd-checkpoint", "version": CHECKPOINT_VERSION,
              "config": model.config.to_dict(), "seed": model.config.seed,
              "in_features": model.in_features, "num_classes": model.num_classes}
    arrays = {f"param:{k}": v for k, v in model.state().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path: str | Path) -> Model:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        if header.get("format") != "polynsd-checkpoint":
            raise ConfigError(f"{path} is not a polynsd checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {header.get('version')}")
        state = {k[len("param:"):]: data[k] for k in data.files if k.startswith("param:")}
    model = Model(ModelConfig.from_dict(header["config"]), header["in_features"], header["num_classes"])
    model.load_state(state)
    return model


def count_parameters(config: ModelConfig, in_features: int, num_classes: int) -> int:
    """Closed-form parameter count matching :meth:`Model.num_parameters`."""
    d, C, h = config.stalk_dim, config.hidden_channels, config.sheaf_hidden
    out = num_map_params(config.map_kind, d)
    learner = 2 * d * h + h + h * out + out
    if config.layer_kind == "polynsd":
        layer = learner + (config.degree + 1) + 1 + d * C
        layer += d * d * config.stalk_mix + C * C * config.channel_mix
    else:
        layer = learner + 2 * C + d * d + C * C
    return in_features * d * C + d * C + config.num_layers * layer + d * C * num_classes + num_classes

