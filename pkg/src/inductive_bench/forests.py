"""Random-forest and logistic-regression baselines on tabular features.

Both models consume the same row matrix the graph encoders see (raw
transaction features, optionally concatenated with learned embeddings)
but ignore the graph entirely. The forest is grown from scratch so the
split search, class weighting, and tie-breaking are pinned down exactly
rather than inherited from a library default.
"""
from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field, asdict
from typing import NamedTuple

import numpy as np

from .errors import ConfigError
from .engine import Linear, Tensor, scale, tsum, weighted_masked_ce
from .ingest import LOCAL_FEATURE_COUNT

# Splits with weighted-Gini gain at or below this are not worth a node.
MIN_SPLIT_GAIN = 1e-12


def _as_matrix(X: np.ndarray, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ConfigError(f"{name} must be a non-empty 2-d matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ConfigError(f"{name} contains non-finite values")
    return X


def _as_binary_labels(y: np.ndarray, n_rows: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n_rows,):
        raise ConfigError(f"y must have shape ({n_rows},), got {y.shape}")
    y = y.astype(np.int64, copy=False)
    if not np.isin(y, (0, 1)).all():
        raise ConfigError("y must be binary with illicit encoded as 1")
    return y


def balanced_class_weights(y: np.ndarray, n_classes: int = 2) -> np.ndarray:
    """Per-class weight n / (n_classes * n_c), zero for absent classes.

    Computed once on the full training set; bootstrap resampling must not
    recompute these.
    """
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    weights = np.zeros(n_classes, dtype=np.float64)
    present = counts > 0
    weights[present] = y.size / (n_classes * counts[present])
    return weights


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 300
    class_weighting: str | None = "balanced"
    # None resolves to floor(sqrt(d)) once the feature count is known.
    features_per_split: int | None = None
    bootstrap: bool = True
    min_samples_split: int = 2
    min_gain: float = MIN_SPLIT_GAIN
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ConfigError("features_per_split must be >= 1 when given")
        if self.class_weighting not in (None, "balanced"):
            raise ConfigError(f"unknown class_weighting {self.class_weighting!r}")
        if self.min_samples_split < 2:
            raise ConfigError("min_samples_split must be >= 2")

    def resolve_mtry(self, n_features: int) -> int:
        if self.features_per_split is None:
            return max(1, int(np.sqrt(n_features)))
        if self.features_per_split > n_features:
            raise ConfigError(
                f"features_per_split={self.features_per_split} exceeds "
                f"feature count {n_features}")
        return self.features_per_split

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Tree:
    """One grown decision tree as flat arrays.

    ``feature`` is -1 at leaves, ``threshold`` NaN. ``value`` holds the
    class-weighted distribution at every node, normalized to sum 1, so a
    leaf's row is directly the predicted probability vector.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_node_samples: np.ndarray
    importance: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for every row, by iterative level descent."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            at = node[active]
            go_left = X[active, self.feature[at]] <= self.threshold[at]
            node[active] = np.where(go_left, self.left[at], self.right[at])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict_distribution(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def grow_tree(X: np.ndarray, y: np.ndarray, sample_weight: np.ndarray,
              n_classes: int = 2, *, mtry: int | None = None,
              rng: np.random.Generator | None = None,
              min_samples_split: int = 2,
              min_gain: float = MIN_SPLIT_GAIN) -> Tree:
    """Grow one unpruned tree by depth-unbounded weighted-Gini splitting.

    At each node a fresh candidate set of ``mtry`` features is drawn
    without replacement (all features, in column order, when ``mtry`` is
    None or covers d). Thresholds sit at midpoints between adjacent sorted
    distinct values. Ties in gain resolve to the earliest candidate and,
    within a candidate, to the lowest threshold, so the result is a pure
    function of (inputs, rng state).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    n, d = X.shape
    y = y.astype(np.int64, copy=False)
    w = sample_weight.astype(np.float64, copy=False)
    if mtry is None:
        mtry = d
    if mtry < d and rng is None:
        raise ConfigError("feature subsampling needs an rng")

    feat_l: list[int] = []
    thr_l: list[float] = []
    left_l: list[int] = []
    right_l: list[int] = []
    value_l: list[np.ndarray] = []
    nsamp_l: list[int] = []
    importance = np.zeros(d, dtype=np.float64)

    def alloc() -> int:
        feat_l.append(-1)
        thr_l.append(np.nan)
        left_l.append(-1)
        right_l.append(-1)
        value_l.append(np.zeros(n_classes))
        nsamp_l.append(0)
        return len(feat_l) - 1

    stack: list[tuple[int, np.ndarray]] = [(alloc(), np.arange(n))]
    while stack:
        nid, idx = stack.pop()
        yn = y[idx]
        wn = w[idx]
        masses = np.bincount(yn, weights=wn, minlength=n_classes)
        total = masses.sum()
        value_l[nid] = masses / total
        nsamp_l[nid] = idx.size
        if idx.size < min_samples_split or np.count_nonzero(masses) <= 1:
            continue

        if mtry < d:
            feats = rng.choice(d, size=mtry, replace=False)
        else:
            feats = np.arange(d)
        sub = X[np.ix_(idx, feats)]
        order = np.argsort(sub, axis=0, kind="stable")
        xs = np.take_along_axis(sub, order, axis=0)
        splittable = xs[1:] > xs[:-1]
        if not splittable.any():
            continue

        ws = wn[order]
        ys = yn[order]
        cums = np.empty((idx.size, feats.size, n_classes), dtype=np.float64)
        for c in range(n_classes):
            np.cumsum(ws * (ys == c), axis=0, out=cums[:, :, c])
        left_mass = cums[:-1]
        right_mass = masses[None, None, :] - left_mass
        left_tot = left_mass.sum(axis=2)
        right_tot = total - left_tot
        # Gini gain in mass form:
        #   gain = (sum_c L_c^2/L + sum_c R_c^2/R - sum_c M_c^2/M) / M
        score = (np.square(left_mass).sum(axis=2) / left_tot
                 + np.square(right_mass).sum(axis=2) / right_tot)
        gain = (score - np.square(masses).sum() / total) / total
        gain[~splittable] = -np.inf

        # First-max argmax both times: lowest threshold within a feature,
        # earliest candidate across features.
        pos = np.argmax(gain, axis=0)
        per_feat = gain[pos, np.arange(feats.size)]
        best_j = int(np.argmax(per_feat))
        best_gain = per_feat[best_j]
        if not best_gain > min_gain:
            continue

        p = pos[best_j]
        lo = xs[p, best_j]
        hi = xs[p + 1, best_j]
        thr = lo + (hi - lo) / 2.0
        if thr >= hi:  # midpoint rounded onto the upper value
            thr = lo
        f = int(feats[best_j])
        go_left = X[idx, f] <= thr

        importance[f] += total * best_gain
        feat_l[nid] = f
        thr_l[nid] = float(thr)
        lid = alloc()
        rid = alloc()
        left_l[nid] = lid
        right_l[nid] = rid
        stack.append((rid, idx[~go_left]))
        stack.append((lid, idx[go_left]))

    return Tree(
        feature=np.asarray(feat_l, dtype=np.int32),
        threshold=np.asarray(thr_l, dtype=np.float64),
        left=np.asarray(left_l, dtype=np.int32),
        right=np.asarray(right_l, dtype=np.int32),
        value=np.vstack(value_l),
        n_node_samples=np.asarray(nsamp_l, dtype=np.int64),
        importance=importance,
    )


@dataclass
class Forest:
    trees: list[Tree]
    n_features: int
    classes: np.ndarray
    # Mean decrease in weighted Gini impurity, normalized per tree and
    # averaged, so the vector sums to 1 unless the forest is degenerate.
    feature_importances: np.ndarray
    config: ForestConfig
    degenerate_class: int | None = None

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_distribution(self, X: np.ndarray) -> np.ndarray:
        if not self.trees:
            raise ConfigError("forest has no trees")
        X = _as_matrix(X)
        if X.shape[1] != self.n_features:
            raise ConfigError(
                f"forest was trained on {self.n_features} features, got {X.shape[1]}")
        out = np.zeros((X.shape[0], self.classes.size), dtype=np.float64)
        for tree in self.trees:
            out += tree.predict_distribution(X)
        out /= len(self.trees)
        return out


def rf_train(X: np.ndarray, y: np.ndarray, cfg: ForestConfig | None = None,
             rng: int | np.random.SeedSequence | None = None) -> Forest:
    """Fit the bootstrap forest. ``rng`` overrides ``cfg.seed`` when given.

    Balanced class weights n/(2*n_c) come from the full training set and
    enter both the split criterion and the leaf distributions. Each tree
    gets its own SeedSequence child, so serial and parallel builds (and
    re-runs) produce identical forests.
    """
    cfg = cfg or ForestConfig()
    X = _as_matrix(X)
    n, d = X.shape
    y = _as_binary_labels(y, n)
    mtry = cfg.resolve_mtry(d)

    counts = np.bincount(y, minlength=2)
    degenerate: int | None = None
    if np.count_nonzero(counts) == 1:
        degenerate = int(counts.argmax())
        warnings.warn(
            f"training labels contain only class {degenerate}; "
            "the forest will predict it unconditionally", RuntimeWarning)
    if cfg.class_weighting == "balanced":
        class_w = balanced_class_weights(y)
    else:
        class_w = np.ones(2, dtype=np.float64)
    base_w = class_w[y]

    if rng is None:
        seq = np.random.SeedSequence(cfg.seed)
    elif isinstance(rng, np.random.SeedSequence):
        seq = rng
    elif isinstance(rng, (int, np.integer)):
        seq = np.random.SeedSequence(int(rng))
    else:
        raise ConfigError("rng must be None, an int seed, or a SeedSequence")

    trees: list[Tree] = []
    imp_sum = np.zeros(d, dtype=np.float64)
    for child in seq.spawn(cfg.n_trees):
        tree_rng = np.random.default_rng(child)
        if cfg.bootstrap:
            draw = tree_rng.integers(0, n, size=n)
            hits = np.bincount(draw, minlength=n)
            rows = np.flatnonzero(hits)
            Xt = X[rows]
            yt = y[rows]
            wt = base_w[rows] * hits[rows]
        else:
            Xt, yt, wt = X, y, base_w
        tree = grow_tree(Xt, yt, wt, n_classes=2, mtry=mtry, rng=tree_rng,
                         min_samples_split=cfg.min_samples_split,
                         min_gain=cfg.min_gain)
        trees.append(tree)
        tree_total = tree.importance.sum()
        if tree_total > 0:
            imp_sum += tree.importance / tree_total

    importances = imp_sum / cfg.n_trees
    mass = importances.sum()
    if mass > 0:
        importances = importances / mass
    return Forest(trees=trees, n_features=d, classes=np.array([0, 1]),
                  feature_importances=importances, config=cfg,
                  degenerate_class=degenerate)


def rf_predict_proba(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Per-row illicit probability, the mean of per-tree leaf distributions."""
    return forest.predict_distribution(X)[:, 1]


def rf_predict(forest: Forest, X: np.ndarray) -> np.ndarray:
    dist = forest.predict_distribution(X)
    return forest.classes[np.argmax(dist, axis=1)]


class ImportanceSplit(NamedTuple):
    local_share: float
    aggregate_share: float
    # (column, normalized importance, "local" | "aggregate") ranked by mass.
    top_features: list[tuple[int, float, str]]


def rf_importance_split(forest: Forest, local_boundary: int = LOCAL_FEATURE_COUNT,
                        top_k: int = 10) -> ImportanceSplit:
    """Split importance mass into columns [0, boundary) vs [boundary, d)."""
    imp = forest.feature_importances
    d = imp.shape[0]
    if not 0 <= local_boundary <= d:
        raise ConfigError(
            f"local_boundary must lie in [0, {d}], got {local_boundary}")
    local = float(imp[:local_boundary].sum())
    aggregate = float(imp[local_boundary:].sum())
    order = np.argsort(-imp, kind="stable")[:top_k]
    top = [(int(i), float(imp[i]),
            "local" if i < local_boundary else "aggregate") for i in order]
    return ImportanceSplit(local, aggregate, top)


def save_forest(forest: Forest, path: str) -> None:
    """Portable tree-list serialization: flat arrays per tree plus metadata."""
    meta = {
        "n_features": forest.n_features,
        "n_trees": forest.n_trees,
        "classes": forest.classes.tolist(),
        "degenerate_class": forest.degenerate_class,
        "config": forest.config.to_dict(),
    }
    payload: dict[str, np.ndarray] = {
        "meta_json": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
        "feature_importances": forest.feature_importances,
    }
    for i, tree in enumerate(forest.trees):
        payload[f"t{i}.feature"] = tree.feature
        payload[f"t{i}.threshold"] = tree.threshold
        payload[f"t{i}.left"] = tree.left
        payload[f"t{i}.right"] = tree.right
        payload[f"t{i}.value"] = tree.value
        payload[f"t{i}.n_node_samples"] = tree.n_node_samples
        payload[f"t{i}.importance"] = tree.importance
    tmp = path + ".tmp.npz"
    with open(tmp, "wb") as fh:
        np.savez(fh, **payload)
    os.replace(tmp, path)


def load_forest(path: str) -> Forest:
    with np.load(path) as bundle:
        meta = json.loads(bytes(bundle["meta_json"]).decode("utf-8"))
        trees = []
        for i in range(meta["n_trees"]):
            trees.append(Tree(
                feature=bundle[f"t{i}.feature"],
                threshold=bundle[f"t{i}.threshold"],
                left=bundle[f"t{i}.left"],
                right=bundle[f"t{i}.right"],
                value=bundle[f"t{i}.value"],
                n_node_samples=bundle[f"t{i}.n_node_samples"],
                importance=bundle[f"t{i}.importance"],
            ))
        importances = bundle["feature_importances"]
    return Forest(trees=trees, n_features=meta["n_features"],
                  classes=np.asarray(meta["classes"], dtype=np.int64),
                  feature_importances=importances,
                  config=ForestConfig(**meta["config"]),
                  degenerate_class=meta["degenerate_class"])


@dataclass(frozen=True)
class LogRegConfig:
    epochs: int = 300
    lr: float = 0.1
    l2: float = 1e-4
    class_weighting: str | None = "balanced"

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.l2 < 0:
            raise ConfigError("l2 must be nonnegative")
        if self.class_weighting not in (None, "balanced"):
            raise ConfigError(f"unknown class_weighting {self.class_weighting!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LinearModel:
    weight: np.ndarray
    bias: np.ndarray
    config: LogRegConfig
    loss_history: list[float] = field(default_factory=list)


def logreg_train(X: np.ndarray, y: np.ndarray,
                 cfg: LogRegConfig | None = None) -> LinearModel:
    """Class-weighted logistic regression by full-batch gradient descent.

    Two logits with softmax reduce exactly to the logistic function of
    their difference, which keeps the model on the same loss kernel the
    graph encoders use. Weights start at zero (initial probability 0.5
    everywhere) so the fit is deterministic without any rng.
    """
    cfg = cfg or LogRegConfig()
    X = _as_matrix(X)
    n, d = X.shape
    y = _as_binary_labels(y, n)
    if cfg.class_weighting == "balanced":
        class_w = balanced_class_weights(y)
    else:
        class_w = np.ones(2, dtype=np.float64)

    lin = Linear(d, 2, name="logreg")
    lin.weight.data[:] = 0.0
    lin.bias.data[:] = 0.0
    mask = np.ones(n, dtype=bool)
    xt = Tensor(X)
    history: list[float] = []
    for _ in range(cfg.epochs):
        logits = lin(xt)
        loss = weighted_masked_ce(logits, y, class_w, mask)
        if cfg.l2 > 0:
            loss = loss + scale(tsum(lin.weight * lin.weight), cfg.l2)
        loss.backward()
        for _, p in lin.params():
            p.data -= cfg.lr * p.grad
            p.grad = None
        history.append(float(loss.data))
    return LinearModel(weight=lin.weight.data.copy(), bias=lin.bias.data.copy(),
                       config=cfg, loss_history=history)


def logreg_predict_proba(model: LinearModel, X: np.ndarray) -> np.ndarray:
    """Illicit probability: the logistic function of the logit margin."""
    X = _as_matrix(X)
    if X.shape[1] != model.weight.shape[0]:
        raise ConfigError(
            f"model expects {model.weight.shape[0]} features, got {X.shape[1]}")
    z = X @ model.weight + model.bias
    margin = z[:, 1] - z[:, 0]
    return 1.0 / (1.0 + np.exp(-margin))


def logreg_predict(model: LinearModel, X: np.ndarray) -> np.ndarray:
    return (logreg_predict_proba(model, X) >= 0.5).astype(np.int64)


class RandomForestGini:
    """Estimator facade over :func:`rf_train` with sklearn-style accessors."""

    _PARAM_NAMES = ("n_trees", "class_weighting", "features_per_split",
                    "bootstrap", "min_samples_split", "min_gain", "seed")

    def __init__(self, n_trees: int = 300, class_weighting: str | None = "balanced",
                 features_per_split: int | None = None, bootstrap: bool = True,
                 min_samples_split: int = 2, min_gain: float = MIN_SPLIT_GAIN,
                 seed: int = 0):
        self.n_trees = n_trees
        self.class_weighting = class_weighting
        self.features_per_split = features_per_split
        self.bootstrap = bootstrap
        self.min_samples_split = min_samples_split
        self.min_gain = min_gain
        self.seed = seed

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params) -> "RandomForestGini":
        for key, val in params.items():
            if key not in self._PARAM_NAMES:
                raise ConfigError(f"unknown parameter {key!r}")
            setattr(self, key, val)
        return self

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RandomForestGini":
        cfg = ForestConfig(n_trees=self.n_trees, class_weighting=self.class_weighting,
                           features_per_split=self.features_per_split,
                           bootstrap=self.bootstrap,
                           min_samples_split=self.min_samples_split,
                           min_gain=self.min_gain, seed=self.seed)
        self.forest_ = rf_train(X, y, cfg)
        self.classes_ = self.forest_.classes
        self.feature_importances_ = self.forest_.feature_importances
        return self

    def _require_fit(self) -> Forest:
        forest = getattr(self, "forest_", None)
        if forest is None:
            raise ConfigError("estimator is not fitted; call fit first")
        return forest

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self._require_fit().predict_distribution(X)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return rf_predict(self._require_fit(), X)


class LogisticRegressionGD:
    """Estimator facade over :func:`logreg_train`."""

    _PARAM_NAMES = ("epochs", "lr", "l2", "class_weighting")

    def __init__(self, epochs: int = 300, lr: float = 0.1, l2: float = 1e-4,
                 class_weighting: str | None = "balanced"):
        self.epochs = epochs
        self.lr = lr
        self.l2 = l2
        self.class_weighting = class_weighting

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params) -> "LogisticRegressionGD":
        for key, val in params.items():
            if key not in self._PARAM_NAMES:
                raise ConfigError(f"unknown parameter {key!r}")
            setattr(self, key, val)
        return self

    def fit(self, X: np.ndarray, y: np.ndarray) -> "LogisticRegressionGD":
        cfg = LogRegConfig(epochs=self.epochs, lr=self.lr, l2=self.l2,
                           class_weighting=self.class_weighting)
        self.model_ = logreg_train(X, y, cfg)
        self.classes_ = np.array([0, 1])
        return self

    def _require_fit(self) -> LinearModel:
        model = getattr(self, "model_", None)
        if model is None:
            raise ConfigError("estimator is not fitted; call fit first")
        return model

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        p1 = logreg_predict_proba(self._require_fit(), X)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return logreg_predict(self._require_fit(), X)
