"""Encoders, the full-batch training loop, and checkpoint IO.

Four encoder families share one training recipe: AdamW with cosine decay,
global-norm gradient clipping, class-weighted masked cross-entropy with a
linear warmup, and early stopping with best-checkpoint restore. Parameter
initialization depends only on the architecture and the seed, so runs that
differ in protocol alone start from bit-identical weights.
"""
from __future__ import annotations

import json
import os
import zipfile
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .engine import (Tensor, ForwardContext, Linear, BatchNorm, BatchNormUpdate,
                     dropout, neighbor_mean, gcn_propagate, attention_coefficients,
                     attention_apply, concat_cols, relu, AdamW, clip_global_norm,
                     cosine_lr, compute_class_weights, weighted_masked_ce,
                     ClassWeights, REFERENCE_CLASS_WEIGHTS, check_finite)
from .errors import ConfigError, NumericError, ParseError, ProtocolError
from .graphs import (Graph, TrainingSetup, AuditReport, AugConfig,
                     augment_fraud_egographs, induce_inductive_subgraph,
                     leakage_audit, empty_edges)
from .ingest import (Dataset, NodeTable, ScalerStats, SplitMasks, ILLICIT,
                     UNKNOWN, TRAIN_MAX_STEP)

__all__ = [
    "ModelSpec", "TrainConfig", "TrainData", "TrainedModel", "build_encoder",
    "count_params", "forward", "prepare_training", "train", "extract_embeddings",
    "fuse_probabilities", "save_checkpoint", "load_checkpoint",
    "GraphEncoderClassifier",
]

_DEFAULTS = {
    "mlp": {"hidden_dim": 128, "n_layers": 3},
    "gcn": {"hidden_dim": 128, "n_layers": 2},
    "sage": {"hidden_dim": 256, "n_layers": 3},
    "gat": {"hidden_dim": 256, "n_layers": 3},
}

GAT_EDGE_DROPOUT = 0.2
GAT_LEAKY_SLOPE = 0.2


@dataclass
class ModelSpec:
    """Architecture hyperparameters; unset dims resolve per encoder kind."""
    kind: str
    input_dim: int = 165
    hidden_dim: Optional[int] = None
    n_layers: Optional[int] = None
    heads: int = 4
    head_classes: int = 3
    dropout: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in _DEFAULTS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.hidden_dim is None:
            self.hidden_dim = _DEFAULTS[self.kind]["hidden_dim"]
        if self.n_layers is None:
            self.n_layers = _DEFAULTS[self.kind]["n_layers"]
        if self.head_classes not in (2, 3):
            raise ConfigError("head_classes must be 2 or 3")
        if self.kind == "gat" and self.hidden_dim % self.heads:
            raise ConfigError("gat hidden_dim must be divisible by heads")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainConfig:
    protocol: str = "strict_inductive"
    loss: str = "weighted_ce"
    epochs: int = 200
    patience: int = 40
    lr: float = 1e-3
    weight_decay: float = 5e-4
    clip_norm: float = 1.0
    warmup_epochs: int = 20
    early_stop_split: str = "test_f1_paper_faithful"
    val_steps: tuple[int, int] = (30, 34)
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.protocol not in ("strict_inductive", "transductive"):
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.loss not in ("weighted_ce", "plain_ce"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.early_stop_split not in ("test_f1_paper_faithful", "train_tail"):
            raise ConfigError(f"unknown early_stop_split {self.early_stop_split!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["val_steps"] = list(self.val_steps)
        return d


class _Encoder:
    """Shared plumbing: parameter registry, init order, BN state."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self._linears: list[Linear] = []
        self._bns: list[BatchNorm] = []
        self._extra: list[tuple[str, Tensor]] = []

    def _add_linear(self, lin: Linear) -> Linear:
        self._linears.append(lin)
        return lin

    def _add_bn(self, bn: BatchNorm) -> BatchNorm:
        self._bns.append(bn)
        return bn

    def params(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for lin in self._linears:
            out.extend(lin.params())
        for bn in self._bns:
            out.extend(bn.params())
        out.extend(self._extra)
        return out

    def param_count(self) -> int:
        return sum(int(np.prod(t.data.shape)) for _, t in self.params())

    def init_params(self, seed: int, dtype=np.float32) -> None:
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
        for lin in self._linears:
            lin.init(rng, dtype)
        for bn in self._bns:
            bn.init(rng, dtype)
        for name, t in self._extra:
            bound = 1.0 / np.sqrt(t.data.shape[-1])
            t.data = rng.uniform(-bound, bound, size=t.data.shape).astype(dtype)

    def export_params(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params()}

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        for name, t in self.params():
            if name not in params:
                raise ConfigError(f"checkpoint missing parameter {name}")
            if params[name].shape != t.data.shape:
                raise ConfigError(f"shape mismatch for {name}")
            t.data = params[name].copy()

    def export_bn_state(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for bn in self._bns:
            out.update({k: v.copy() for k, v in bn.state().items()})
        return out

    def load_bn_state(self, state: dict[str, np.ndarray]) -> None:
        for bn in self._bns:
            bn.load_state(state)

    def set_trainable(self, flag: bool) -> None:
        for _, t in self.params():
            t.requires_grad = flag

    def forward(self, x: Tensor, graph: Graph, ctx: ForwardContext) -> tuple[Tensor, Tensor]:
        raise NotImplementedError


class _MLP(_Encoder):
    """Edge-blind baseline: identical logits no matter the graph."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        dims = [spec.input_dim] + [spec.hidden_dim] * spec.n_layers
        self.blocks = []
        for i in range(spec.n_layers):
            lin = self._add_linear(Linear(dims[i], dims[i + 1], f"block{i}.linear"))
            bn = self._add_bn(BatchNorm(dims[i + 1], f"block{i}.bn"))
            self.blocks.append((lin, bn))
        self.head = self._add_linear(Linear(spec.hidden_dim, spec.head_classes, "head"))

    def forward(self, x, graph, ctx):
        h = x
        for lin, bn in self.blocks:
            h = dropout(relu(bn(lin(h), ctx)), self.spec.dropout, ctx)
        logits = self.head(h)
        check_finite(logits.data, "mlp logits")
        return logits, h


class _GCN(_Encoder):
    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        dims = [spec.input_dim] + [spec.hidden_dim] * (spec.n_layers - 1) + [spec.head_classes]
        self.convs = [self._add_linear(Linear(dims[i], dims[i + 1], f"conv{i}.linear"))
                      for i in range(spec.n_layers)]

    def forward(self, x, graph, ctx):
        h = x
        penult = h
        for i, lin in enumerate(self.convs):
            h = lin(gcn_propagate(h, graph))
            if i < len(self.convs) - 1:
                h = dropout(relu(h), self.spec.dropout, ctx)
                penult = h
        check_finite(h.data, "gcn logits")
        return h, penult


class _SAGE(_Encoder):
    """Mean-aggregator blocks over concatenated self and neighbor features."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        h = spec.hidden_dim
        self.lin_in = self._add_linear(Linear(spec.input_dim, h, "lin_in"))
        self.blocks = []
        for i in range(spec.n_layers):
            lin = self._add_linear(Linear(2 * h, h, f"sage{i}.linear"))
            bn = self._add_bn(BatchNorm(h, f"sage{i}.bn"))
            self.blocks.append((lin, bn))
        self.head = self._add_linear(Linear(h, spec.head_classes, "head"))

    def forward(self, x, graph, ctx):
        h = self.lin_in(x)
        for lin, bn in self.blocks:
            agg = neighbor_mean(h, graph)
            h = dropout(relu(bn(lin(concat_cols(h, agg)), ctx)), self.spec.dropout, ctx)
        logits = self.head(h)
        check_finite(logits.data, "sage logits")
        return logits, h


class _GAT(_Encoder):
    """Multi-head attention blocks; heads concatenate to the hidden width."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        h = spec.hidden_dim
        head_dim = h // spec.heads
        self.lin_in = self._add_linear(Linear(spec.input_dim, h, "lin_in"))
        self.blocks = []
        for i in range(spec.n_layers):
            proj = self._add_linear(Linear(h, h, f"gat{i}.proj"))
            att = Tensor(np.zeros((spec.heads, 2 * head_dim)), requires_grad=True)
            self._extra.append((f"gat{i}.att", att))
            bn = self._add_bn(BatchNorm(h, f"gat{i}.bn"))
            self.blocks.append((proj, att, bn))
        self.head = self._add_linear(Linear(h, spec.head_classes, "head"))

    def forward(self, x, graph, ctx):
        h = self.lin_in(x)
        for proj_lin, att, bn in self.blocks:
            proj = proj_lin(h)
            alpha = attention_coefficients(proj, att, graph, GAT_LEAKY_SLOPE)
            alpha = dropout(alpha, GAT_EDGE_DROPOUT, ctx)
            h = attention_apply(alpha, proj, graph)
            h = dropout(relu(bn(h, ctx)), self.spec.dropout, ctx)
        logits = self.head(h)
        check_finite(logits.data, "gat logits")
        return logits, h


_ENCODERS = {"mlp": _MLP, "gcn": _GCN, "sage": _SAGE, "gat": _GAT}


def build_encoder(spec: ModelSpec) -> _Encoder:
    return _ENCODERS[spec.kind](spec)


def count_params(spec: ModelSpec) -> int:
    return build_encoder(spec).param_count()


def forward(spec: ModelSpec, params: dict[str, np.ndarray], features: np.ndarray,
            graph: Graph, mode: str = "eval", rng: Optional[np.random.Generator] = None,
            bn_state: Optional[dict[str, np.ndarray]] = None) -> tuple[np.ndarray, np.ndarray]:
    """Functional forward pass; returns (logits, penultimate) as arrays."""
    enc = build_encoder(spec)
    enc.load_params(params)
    if bn_state:
        enc.load_bn_state(bn_state)
    enc.set_trainable(False)
    ctx = ForwardContext(mode=mode, rng=rng)
    logits, penult = enc.forward(Tensor(features), graph, ctx)
    return logits.data, penult.data


@dataclass
class TrainData:
    """One training universe plus the evaluation universe and audit setup."""
    train_graph: Graph
    train_nodes: NodeTable
    loss_mask: np.ndarray
    monitor_mask: np.ndarray
    monitor_on_train: bool
    eval_graph: Graph
    eval_features: np.ndarray
    eval_labels: np.ndarray
    setup: TrainingSetup


def prepare_training(dataset: Dataset, masks: SplitMasks, scaler: ScalerStats,
                     protocol: str, graph: Graph, *,
                     eval_graph: Optional[Graph] = None,
                     augmentation: Optional[AugConfig] = None,
                     early_stop_split: str = "test_f1_paper_faithful",
                     declared_fit_scope: Optional[str] = None,
                     val_steps: tuple[int, int] = (30, 34)) -> TrainData:
    """Assemble the training universe for a protocol.

    Under ``strict_inductive`` the training graph is the induced subgraph
    on timesteps <= 34 of ``graph``; under ``transductive`` it is ``graph``
    itself. Evaluation always runs on ``eval_graph`` (default: ``graph``)
    over the full universe.
    """
    eval_graph = eval_graph if eval_graph is not None else graph
    if protocol == "strict_inductive":
        train_graph, _ = induce_inductive_subgraph(graph, dataset)
        train_nodes = dataset.nodes(train_graph.node_ids)
    elif protocol == "transductive":
        train_graph = graph
        train_nodes = dataset.nodes(graph.node_ids)
    else:
        raise ConfigError(f"unknown protocol {protocol!r}")

    if early_stop_split == "test_f1_paper_faithful":
        monitor_mask = masks.test_labeled
        monitor_on_train = False
    elif early_stop_split == "train_tail":
        lo, hi = val_steps
        monitor_mask = ((train_nodes.labels != UNKNOWN)
                        & (train_nodes.timesteps >= lo)
                        & (train_nodes.timesteps <= hi))
        monitor_on_train = True
    else:
        raise ConfigError(f"unknown early_stop_split {early_stop_split!r}")

    if augmentation is not None and augmentation.n_egographs > 0:
        train_graph, train_nodes = augment_fraud_egographs(train_graph, train_nodes,
                                                           augmentation)
        if monitor_on_train:
            pad = train_nodes.n_nodes - monitor_mask.size
            monitor_mask = np.concatenate([monitor_mask, np.zeros(pad, dtype=bool)])

    loss_mask = train_nodes.labels != UNKNOWN
    setup = TrainingSetup(
        graph=train_graph,
        graph_timesteps=train_nodes.timesteps,
        scaler=scaler,
        declared_protocol=protocol,
        declared_fit_scope=declared_fit_scope or scaler.fit_scope,
        bn_updates=[],
    )
    return TrainData(train_graph=train_graph, train_nodes=train_nodes,
                     loss_mask=loss_mask, monitor_mask=monitor_mask,
                     monitor_on_train=monitor_on_train, eval_graph=eval_graph,
                     eval_features=dataset.features, eval_labels=dataset.labels,
                     setup=setup)


@dataclass
class TrainedModel:
    spec: ModelSpec
    config: TrainConfig
    params: dict[str, np.ndarray]
    bn_state: dict[str, np.ndarray]
    history: list[dict]
    best_epoch: int
    seed: int
    bn_updates: list
    audit: Optional[AuditReport]
    param_count: int
    # Weighted-CE cells keep the computed weights next to the reference
    # values they are meant to reproduce; the licit reference is known to
    # disagree with the sqrt formula, so both are recorded, never blended.
    class_weights: Optional[dict] = None


def _illicit_f1(pred: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    p = pred[mask] == ILLICIT
    t = labels[mask] == ILLICIT
    tp = int((p & t).sum())
    fp = int((p & ~t).sum())
    fn = int((~p & t).sum())
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def _eval_forward(enc: _Encoder, features: np.ndarray, graph: Graph,
                  dtype) -> tuple[np.ndarray, np.ndarray]:
    enc.set_trainable(False)
    try:
        ctx = ForwardContext(mode="eval")
        logits, penult = enc.forward(Tensor(features.astype(dtype, copy=False)), graph, ctx)
        return logits.data, penult.data
    finally:
        enc.set_trainable(True)


def train(spec: ModelSpec, config: TrainConfig, data: TrainData) -> TrainedModel:
    """Full-batch training with early stopping and best-epoch restore.

    Refuses to run a ``strict_inductive`` config whose setup fails the
    leakage audit. History rows carry loss, lr, train F1 (training-mode
    logits) and the monitored F1.
    """
    if config.protocol != data.setup.declared_protocol:
        raise ConfigError("config protocol and prepared data disagree")
    if config.protocol == "strict_inductive":
        pre_audit = leakage_audit(data.setup)
        if not pre_audit.passed:
            err = ProtocolError(
                f"strict_inductive training refused: {pre_audit.counts()}")
            err.audit = pre_audit  # callers persist the report with the failure
            raise err

    dtype = np.float32 if config.dtype == "float32" else np.float64
    enc = build_encoder(spec)
    enc.init_params(config.seed, dtype)
    drop_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])

    labels = data.train_nodes.labels
    if config.loss == "weighted_ce":
        weights = compute_class_weights(labels, data.loss_mask, spec.head_classes,
                                        config.warmup_epochs)
    else:
        weights = ClassWeights(weights=np.ones(spec.head_classes),
                               counts=np.bincount(labels[data.loss_mask],
                                                  minlength=spec.head_classes),
                               warmup_epochs=0)

    x_train = data.train_nodes.features.astype(dtype, copy=True)
    x_eval = data.eval_features.astype(dtype, copy=True)
    max_step = int(data.train_nodes.timesteps.max()) if data.train_nodes.n_nodes else -1
    params = enc.params()
    opt = AdamW(params, lr=config.lr, weight_decay=config.weight_decay)

    history: list[dict] = []
    best_monitor = -1.0
    best_epoch = -1
    best_params: dict[str, np.ndarray] = enc.export_params()
    best_bn = enc.export_bn_state()
    stale = 0

    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr)
        ctx = ForwardContext(mode="train", rng=drop_rng, epoch=epoch,
                             max_timestep=max_step, bn_log=data.setup.bn_updates)
        try:
            logits, _ = enc.forward(Tensor(x_train), data.train_graph, ctx)
            loss = weighted_masked_ce(logits, labels, weights.effective(epoch),
                                      data.loss_mask)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch}: {exc}") from exc
        train_pred = logits.data.argmax(axis=1)
        opt.zero_grad()
        loss.backward()
        clip_global_norm(params, config.clip_norm)
        opt.step(lr)

        if data.monitor_on_train:
            mon_logits, _ = _eval_forward(enc, x_train, data.train_graph, dtype)
            mon_labels = labels
        else:
            mon_logits, _ = _eval_forward(enc, x_eval, data.eval_graph, dtype)
            mon_labels = data.eval_labels
        monitor = _illicit_f1(mon_logits.argmax(axis=1), mon_labels, data.monitor_mask)
        history.append({
            "epoch": epoch,
            "loss": float(loss.data),
            "lr": float(lr),
            "train_f1": _illicit_f1(train_pred, labels, data.loss_mask),
            "monitor_f1": float(monitor),
        })
        if monitor > best_monitor:
            best_monitor = monitor
            best_epoch = epoch
            best_params = enc.export_params()
            best_bn = enc.export_bn_state()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    enc.load_params(best_params)
    enc.load_bn_state(best_bn)
    final_audit = leakage_audit(data.setup)
    cw_meta = None
    if config.loss == "weighted_ce":
        cw_meta = {
            "computed": [round(float(w), 6) for w in weights.weights],
            "counts": [int(c) for c in weights.counts],
            "reference": REFERENCE_CLASS_WEIGHTS,
            "note": "training uses the computed values; the licit reference "
                    "does not follow from the sqrt formula",
        }
    return TrainedModel(spec=spec, config=config, params=best_params,
                        bn_state=best_bn, history=history, best_epoch=best_epoch,
                        seed=config.seed, bn_updates=list(data.setup.bn_updates),
                        audit=final_audit, param_count=enc.param_count(),
                        class_weights=cw_meta)


def extract_embeddings(trained: TrainedModel, graph: Graph,
                       features: np.ndarray) -> np.ndarray:
    """Penultimate activations from an eval-mode pass over ``graph``."""
    dtype = np.float32 if trained.config.dtype == "float32" else np.float64
    enc = build_encoder(trained.spec)
    enc.load_params(trained.params)
    enc.load_bn_state(trained.bn_state)
    _, penult = _eval_forward(enc, features.astype(dtype, copy=False), graph, dtype)
    return penult


def predict_proba(trained: TrainedModel, graph: Graph, features: np.ndarray) -> np.ndarray:
    """Class probabilities from an eval-mode pass; softmax over the head."""
    dtype = np.float32 if trained.config.dtype == "float32" else np.float64
    enc = build_encoder(trained.spec)
    enc.load_params(trained.params)
    enc.load_bn_state(trained.bn_state)
    logits, _ = _eval_forward(enc, features.astype(dtype, copy=False), graph, dtype)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fuse_probabilities(p_first: np.ndarray, p_second: np.ndarray,
                       alpha: float = 0.65) -> np.ndarray:
    """Convex combination ``alpha * first + (1 - alpha) * second``."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha {alpha} outside [0, 1]")
    p_first = np.asarray(p_first, dtype=np.float64)
    p_second = np.asarray(p_second, dtype=np.float64)
    if p_first.shape != p_second.shape:
        raise ConfigError("probability arrays must share a shape")
    for name, p in (("first", p_first), ("second", p_second)):
        if p.size and (p.min() < 0.0 or p.max() > 1.0):
            raise ConfigError(f"{name} probabilities outside [0, 1]")
    return alpha * p_first + (1.0 - alpha) * p_second


def save_checkpoint(trained: TrainedModel, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "spec": trained.spec.to_dict(),
        "config": trained.config.to_dict(),
        "history": trained.history,
        "best_epoch": trained.best_epoch,
        "seed": trained.seed,
        "param_count": trained.param_count,
        "bn_updates": [u.to_dict() for u in trained.bn_updates],
        "audit": trained.audit.to_dict() if trained.audit else None,
        "class_weights": trained.class_weights,
    }
    arrays = {f"param/{k}": v for k, v in trained.params.items()}
    arrays.update({f"bn/{k}": v for k, v in trained.bn_state.items()})
    tmp = path.with_name(path.name + ".tmp.npz")
    with open(tmp, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> TrainedModel:
    try:
        with np.load(path, allow_pickle=False) as payload:
            meta = json.loads(str(payload["meta"]))
            params = {k[len("param/"):]: payload[k] for k in payload.files
                      if k.startswith("param/")}
            bn_state = {k[len("bn/"):]: payload[k] for k in payload.files
                        if k.startswith("bn/")}
    except (ValueError, KeyError, TypeError, zipfile.BadZipFile) as exc:
        raise ParseError(f"{path} is not a model checkpoint: {exc}") from exc
    audit = AuditReport.from_dict(meta["audit"]) if meta["audit"] is not None else None
    cfg = meta["config"]
    cfg["val_steps"] = tuple(cfg["val_steps"])
    return TrainedModel(
        spec=ModelSpec(**meta["spec"]),
        config=TrainConfig(**cfg),
        params=params,
        bn_state=bn_state,
        history=meta["history"],
        best_epoch=meta["best_epoch"],
        seed=meta["seed"],
        bn_updates=[BatchNormUpdate(**u) for u in meta["bn_updates"]],
        audit=audit,
        param_count=meta["param_count"],
        class_weights=meta.get("class_weights"),
    )


class GraphEncoderClassifier:
    """Estimator facade over the functional training pipeline.

    Mirrors the fit/predict idiom: hyperparameters in the constructor,
    fitted state on trailing-underscore attributes, ``get_params`` and
    ``set_params`` for composition. ``fit`` takes the standardized dataset,
    a graph over its universe, and the temporal split masks.
    """

    def __init__(self, kind: str = "sage", loss: str = "weighted_ce",
                 protocol: str = "strict_inductive", head_classes: int = 3,
                 hidden_dim: Optional[int] = None, n_layers: Optional[int] = None,
                 heads: int = 4, dropout: float = 0.5, epochs: int = 200,
                 patience: int = 40, lr: float = 1e-3, weight_decay: float = 5e-4,
                 warmup_epochs: int = 20,
                 early_stop_split: str = "test_f1_paper_faithful",
                 augmentation: Optional[dict] = None, edgeless: bool = False,
                 dtype: str = "float32", seed: int = 0):
        self.kind = kind
        self.loss = loss
        self.protocol = protocol
        self.head_classes = head_classes
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.heads = heads
        self.dropout = dropout
        self.epochs = epochs
        self.patience = patience
        self.lr = lr
        self.weight_decay = weight_decay
        self.warmup_epochs = warmup_epochs
        self.early_stop_split = early_stop_split
        self.augmentation = augmentation
        self.edgeless = edgeless
        self.dtype = dtype
        self.seed = seed

    _PARAM_NAMES = ("kind", "loss", "protocol", "head_classes", "hidden_dim",
                    "n_layers", "heads", "dropout", "epochs", "patience", "lr",
                    "weight_decay", "warmup_epochs", "early_stop_split",
                    "augmentation", "edgeless", "dtype", "seed")

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params) -> "GraphEncoderClassifier":
        for key, value in params.items():
            if key not in self._PARAM_NAMES:
                raise ConfigError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def _spec(self, input_dim: int) -> ModelSpec:
        return ModelSpec(kind=self.kind, input_dim=input_dim,
                         hidden_dim=self.hidden_dim, n_layers=self.n_layers,
                         heads=self.heads, head_classes=self.head_classes,
                         dropout=self.dropout)

    def fit(self, dataset: Dataset, graph: Graph, masks: SplitMasks,
            scaler: Optional[ScalerStats] = None) -> "GraphEncoderClassifier":
        scaler = scaler or ScalerStats(mean=np.zeros(dataset.n_features),
                                       std=np.ones(dataset.n_features),
                                       fit_scope="full_population")
        base = empty_edges(graph) if self.edgeless else graph
        aug = AugConfig(**self.augmentation) if self.augmentation else None
        config = TrainConfig(protocol=self.protocol, loss=self.loss,
                             epochs=self.epochs, patience=self.patience,
                             lr=self.lr, weight_decay=self.weight_decay,
                             warmup_epochs=self.warmup_epochs,
                             early_stop_split=self.early_stop_split,
                             dtype=self.dtype, seed=self.seed)
        data = prepare_training(dataset, masks, scaler, self.protocol, base,
                                augmentation=aug,
                                early_stop_split=self.early_stop_split)
        spec = self._spec(dataset.n_features)
        self.model_ = train(spec, config, data)
        self.eval_graph_ = data.eval_graph
        self.history_ = self.model_.history
        self.audit_ = self.model_.audit
        return self

    def _require_fit(self) -> None:
        if not hasattr(self, "model_"):
            raise ConfigError("estimator is not fitted")

    def predict_proba(self, dataset: Dataset, graph: Optional[Graph] = None) -> np.ndarray:
        self._require_fit()
        graph = graph if graph is not None else self.eval_graph_
        graph = empty_edges(graph) if self.edgeless else graph
        return predict_proba(self.model_, graph, dataset.features)

    def predict(self, dataset: Dataset, graph: Optional[Graph] = None) -> np.ndarray:
        return self.predict_proba(dataset, graph).argmax(axis=1)

    def embeddings(self, dataset: Dataset, graph: Optional[Graph] = None) -> np.ndarray:
        self._require_fit()
        graph = graph if graph is not None else self.eval_graph_
        graph = empty_edges(graph) if self.edgeless else graph
        return extract_embeddings(self.model_, graph, dataset.features)
