"""Loading, standardizing and splitting the transaction dataset.

The three public CSVs are consumed in their published shapes: a headerless
features file (id, timestep, 165 feature columns), a headered classes file
mapping ids to {1, 2, unknown}, and a headered edge list of id pairs.
Nodes keep the features-file row order as their dense index.

The temporal split is fixed: timesteps 1-34 train, 35-49 test.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .errors import ConfigError, IntegrityError, NumericError, ParseError

__all__ = [
    "LICIT", "ILLICIT", "UNKNOWN", "TRAIN_MAX_STEP", "TEST_MIN_STEP", "N_FEATURES",
    "LOCAL_FEATURE_COUNT", "Dataset", "NodeTable", "ScalerStats", "SplitMasks",
    "DatasetSummary", "load_dataset", "standardize", "make_splits", "dataset_summary",
    "resolve_data_paths", "dataset_cache_key", "save_dataset_cache", "load_dataset_cache",
]

# Label encoding: the head reserves logit 0 for licit, 1 for illicit, and
# (for 3-class heads) 2 for the never-supervised unknown class.
LICIT = 0
ILLICIT = 1
UNKNOWN = -1

TRAIN_MAX_STEP = 34
TEST_MIN_STEP = 35
N_FEATURES = 165
LOCAL_FEATURE_COUNT = 94  # columns 0-93 are local; 94-164 are neighborhood aggregates

_CLASS_MAP = {"1": ILLICIT, "2": LICIT, "unknown": UNKNOWN}


@dataclass
class NodeTable:
    """Node-aligned arrays for one training universe (possibly augmented)."""
    features: np.ndarray
    labels: np.ndarray
    timesteps: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]


@dataclass
class Dataset:
    """The full node universe plus the deduplicated undirected edge list."""
    external_ids: np.ndarray
    timesteps: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    edges: np.ndarray  # (E, 2) dense indices, u < v, lexicographically sorted
    _content_hash: Optional[str] = field(default=None, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_undirected_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def n_directed_edges(self) -> int:
        return 2 * self.edges.shape[0]

    def labeled_mask(self) -> np.ndarray:
        return self.labels != UNKNOWN

    def nodes(self, index: Optional[np.ndarray] = None) -> NodeTable:
        if index is None:
            return NodeTable(self.features, self.labels, self.timesteps)
        return NodeTable(self.features[index], self.labels[index], self.timesteps[index])

    def content_hash(self) -> str:
        if self._content_hash is None:
            h = hashlib.sha256()
            for arr in (self.external_ids, self.timesteps, self.features,
                        self.labels, self.edges):
                h.update(np.ascontiguousarray(arr).tobytes())
                h.update(str(arr.shape).encode())
            self._content_hash = h.hexdigest()
        return self._content_hash


@dataclass
class ScalerStats:
    """Per-column z-score parameters and the population they were fit on."""
    mean: np.ndarray
    std: np.ndarray  # zero-variance columns recorded as 1.0
    fit_scope: str

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std

    def inverse(self, features: np.ndarray) -> np.ndarray:
        return features * self.std + self.mean


@dataclass
class SplitMasks:
    """Boolean masks over the node universe plus per-step labeled indices."""
    train_labeled: np.ndarray
    test_labeled: np.ndarray
    per_step: dict[int, np.ndarray]

    @property
    def train_indices(self) -> np.ndarray:
        return np.flatnonzero(self.train_labeled)

    @property
    def test_indices(self) -> np.ndarray:
        return np.flatnonzero(self.test_labeled)


def _read_numeric_table(path: Path, what: str, header: Optional[list[str]]) -> pd.DataFrame:
    try:
        if header is None:
            return pd.read_csv(path, header=None, dtype=np.float64)
        frame = pd.read_csv(path, dtype=str)
    except pd.errors.ParserError as exc:
        raise ParseError(f"{what}: {exc}") from exc
    except ParseError:
        raise
    except ValueError as exc:
        # Re-scan as strings to name the offending line in the message.
        raw = pd.read_csv(path, header=None, dtype=str)
        for col in raw.columns:
            bad = pd.to_numeric(raw[col], errors="coerce").isna() & raw[col].notna()
            if bad.any():
                line = int(bad.idxmax()) + 1
                raise ParseError(
                    f"{what} line {line}: non-numeric value {raw[col][bad.idxmax()]!r}") from exc
        raise ParseError(f"{what}: {exc}") from exc
    got = [c.strip() for c in frame.columns]
    if got != header:
        raise ParseError(f"{what} line 1: expected header {header}, got {got}")
    return frame


def load_dataset(features_path: str | Path, classes_path: str | Path,
                 edges_path: str | Path) -> Dataset:
    """Parse the three CSVs into a validated :class:`Dataset`.

    Raises :class:`ParseError` on malformed rows (with line numbers) and
    :class:`IntegrityError` on duplicate ids, unknown edge endpoints, or
    label rows that do not match the node universe.
    """
    features_path, classes_path, edges_path = map(Path, (features_path, classes_path, edges_path))

    feats = _read_numeric_table(features_path, "features", header=None)
    if feats.shape[1] != N_FEATURES + 2:
        raise ParseError(
            f"features: expected {N_FEATURES + 2} columns, got {feats.shape[1]}")
    raw = feats.to_numpy(dtype=np.float64)
    for col, name in ((0, "id"), (1, "timestep")):
        frac = np.modf(raw[:, col])[0]
        if np.any(frac != 0):
            line = int(np.flatnonzero(frac != 0)[0]) + 1
            raise ParseError(f"features line {line}: non-integer {name}")
    external_ids = raw[:, 0].astype(np.int64)
    timesteps = raw[:, 1].astype(np.int32)
    features = np.ascontiguousarray(raw[:, 2:])

    uniq, first_idx, counts = np.unique(external_ids, return_index=True, return_counts=True)
    if np.any(counts > 1):
        dup = uniq[counts > 1][0]
        raise IntegrityError(f"duplicate external id {dup} in features")
    if timesteps.min() < 1 or timesteps.max() > 49:
        bad = int(np.flatnonzero((timesteps < 1) | (timesteps > 49))[0])
        raise IntegrityError(
            f"features line {bad + 1}: timestep {timesteps[bad]} outside [1, 49]")
    if not np.all(np.isfinite(features)):
        raise NumericError("features contain non-finite values")

    classes = _read_numeric_table(classes_path, "classes", header=["txId", "class"])
    class_ids = pd.to_numeric(classes.iloc[:, 0], errors="coerce")
    if class_ids.isna().any():
        line = int(class_ids.isna().idxmax()) + 2
        raise ParseError(f"classes line {line}: non-numeric txId")
    class_ids = class_ids.to_numpy(dtype=np.int64)
    class_strs = classes.iloc[:, 1].astype(str).str.strip()
    unknown_tokens = ~class_strs.isin(_CLASS_MAP)
    if unknown_tokens.any():
        line = int(unknown_tokens.idxmax()) + 2
        raise ParseError(f"classes line {line}: unrecognized class {class_strs[line - 2]!r}")
    class_vals = class_strs.map(_CLASS_MAP).to_numpy(dtype=np.int8)

    # Dense index by features-file order.
    order = np.argsort(external_ids, kind="stable")
    sorted_ids = external_ids[order]

    def lookup(ids: np.ndarray, what: str) -> np.ndarray:
        pos = np.searchsorted(sorted_ids, ids)
        pos = np.clip(pos, 0, len(sorted_ids) - 1)
        missing = sorted_ids[pos] != ids
        if missing.any():
            raise IntegrityError(f"{what} references unknown id {ids[missing][0]}")
        return order[pos]

    dup_class = np.unique(class_ids, return_counts=True)
    if np.any(dup_class[1] > 1):
        raise IntegrityError(f"duplicate class row for id {dup_class[0][dup_class[1] > 1][0]}")
    labels = np.full(len(external_ids), UNKNOWN, dtype=np.int8)
    labels[lookup(class_ids, "classes")] = class_vals
    if len(class_ids) != len(external_ids):
        covered = np.zeros(len(external_ids), dtype=bool)
        covered[lookup(class_ids, "classes")] = True
        missing_id = external_ids[~covered][0]
        raise IntegrityError(f"id {missing_id} has no class row")

    edge_frame = _read_numeric_table(edges_path, "edges", header=["txId1", "txId2"])
    e1 = pd.to_numeric(edge_frame.iloc[:, 0], errors="coerce")
    e2 = pd.to_numeric(edge_frame.iloc[:, 1], errors="coerce")
    for series in (e1, e2):
        if series.isna().any():
            line = int(series.isna().idxmax()) + 2
            raise ParseError(f"edges line {line}: non-numeric id")
    src = lookup(e1.to_numpy(dtype=np.int64), "edges")
    dst = lookup(e2.to_numpy(dtype=np.int64), "edges")
    keep = src != dst
    lo = np.minimum(src[keep], dst[keep])
    hi = np.maximum(src[keep], dst[keep])
    edges = np.unique(np.stack([lo, hi], axis=1), axis=0).astype(np.int64)

    return Dataset(external_ids=external_ids, timesteps=timesteps,
                   features=features, labels=labels, edges=edges)


def standardize(dataset: Dataset, fit_scope: str = "full_population") -> tuple[Dataset, ScalerStats]:
    """Column z-scores fit on the configured population, applied to all rows.

    ``full_population`` fits on every node; ``train_only`` fits on rows
    with timestep <= 34. Zero-variance columns pass through centered, with
    std recorded as 1.0.
    """
    if fit_scope == "full_population":
        fit_rows = slice(None)
    elif fit_scope == "train_only":
        fit_rows = dataset.timesteps <= TRAIN_MAX_STEP
    else:
        raise ConfigError(f"unknown fit_scope {fit_scope!r}")

    fit = dataset.features[fit_rows]
    if fit.shape[0] == 0:
        raise ConfigError(f"fit_scope {fit_scope!r} selects no rows")
    mean = fit.mean(axis=0)
    std = fit.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    stats = ScalerStats(mean=mean, std=std, fit_scope=fit_scope)
    transformed = stats.transform(dataset.features)
    if not np.all(np.isfinite(transformed)):
        col = int(np.flatnonzero(~np.isfinite(transformed).all(axis=0))[0])
        raise NumericError(f"standardization produced non-finite values in column {col}")
    out = Dataset(external_ids=dataset.external_ids, timesteps=dataset.timesteps,
                  features=transformed, labels=dataset.labels, edges=dataset.edges)
    return out, stats


def make_splits(dataset: Dataset) -> SplitMasks:
    """Temporal split over labeled rows plus per-step labeled index sets."""
    labeled = dataset.labeled_mask()
    train = labeled & (dataset.timesteps <= TRAIN_MAX_STEP)
    test = labeled & (dataset.timesteps >= TEST_MIN_STEP)
    per_step = {int(step): np.flatnonzero(labeled & (dataset.timesteps == step))
                for step in np.unique(dataset.timesteps)}
    return SplitMasks(train_labeled=train, test_labeled=test, per_step=per_step)


@dataclass
class DatasetSummary:
    n_nodes: int
    n_undirected_edges: int
    n_directed_edges: int
    n_features: int
    n_labeled: int
    n_illicit: int
    n_licit: int
    n_unknown: int
    n_timesteps: int
    train_labeled: int
    train_illicit: int
    train_licit: int
    train_illicit_pct: float
    train_imbalance: float  # licit : illicit ratio on the training slice
    test_labeled: int
    per_step: list[dict]

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def dataset_summary(dataset: Dataset, masks: Optional[SplitMasks] = None) -> DatasetSummary:
    masks = masks or make_splits(dataset)
    labels = dataset.labels
    labeled = dataset.labeled_mask()
    train_ill = int(((labels == ILLICIT) & masks.train_labeled).sum())
    train_lic = int(((labels == LICIT) & masks.train_labeled).sum())
    per_step = []
    for step in sorted(masks.per_step):
        idx = masks.per_step[step]
        n_ill = int((labels[idx] == ILLICIT).sum())
        n_lab = len(idx)
        per_step.append({
            "step": step, "n_labeled": n_lab, "n_illicit": n_ill,
            "n_licit": n_lab - n_ill,
            "illicit_pct": 100.0 * n_ill / n_lab if n_lab else 0.0,
        })
    return DatasetSummary(
        n_nodes=dataset.n_nodes,
        n_undirected_edges=dataset.n_undirected_edges,
        n_directed_edges=dataset.n_directed_edges,
        n_features=dataset.n_features,
        n_labeled=int(labeled.sum()),
        n_illicit=int((labels == ILLICIT).sum()),
        n_licit=int((labels == LICIT).sum()),
        n_unknown=int((labels == UNKNOWN).sum()),
        n_timesteps=int(np.unique(dataset.timesteps).size),
        train_labeled=int(masks.train_labeled.sum()),
        train_illicit=train_ill,
        train_licit=train_lic,
        train_illicit_pct=100.0 * train_ill / max(train_ill + train_lic, 1),
        train_imbalance=train_lic / train_ill if train_ill else float("inf"),
        test_labeled=int(masks.test_labeled.sum()),
        per_step=per_step,
    )


_FILE_NAMES = ("elliptic_txs_features.csv", "elliptic_txs_classes.csv",
               "elliptic_txs_edgelist.csv")
DATA_ENV_VAR = "INDUCTIVE_BENCH_DATA"


def resolve_data_paths(root: str | Path | None = None) -> tuple[Path, Path, Path]:
    """Locate the three CSVs under ``root`` or ``$INDUCTIVE_BENCH_DATA``."""
    if root is None:
        root = os.environ.get(DATA_ENV_VAR)
    if root is None:
        raise ConfigError(
            f"no dataset root given and {DATA_ENV_VAR} is unset")
    root = Path(root)
    paths = tuple(root / name for name in _FILE_NAMES)
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise ConfigError(f"dataset files missing: {', '.join(missing)}")
    return paths


def dataset_cache_key(features_path: str | Path, classes_path: str | Path,
                      edges_path: str | Path, fit_scope: str) -> str:
    """Content hash of the three inputs plus the scaler scope."""
    h = hashlib.sha256()
    for path in (features_path, classes_path, edges_path):
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    h.update(fit_scope.encode())
    return h.hexdigest()


def save_dataset_cache(path: str | Path, dataset: Dataset, stats: ScalerStats) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, external_ids=dataset.external_ids, timesteps=dataset.timesteps,
             features=dataset.features, labels=dataset.labels, edges=dataset.edges,
             scaler_mean=stats.mean, scaler_std=stats.std,
             fit_scope=np.array(stats.fit_scope))
    os.replace(tmp, path)


def load_dataset_cache(path: str | Path) -> tuple[Dataset, ScalerStats]:
    with np.load(path, allow_pickle=False) as payload:
        dataset = Dataset(external_ids=payload["external_ids"],
                          timesteps=payload["timesteps"],
                          features=payload["features"],
                          labels=payload["labels"],
                          edges=payload["edges"])
        stats = ScalerStats(mean=payload["scaler_mean"], std=payload["scaler_std"],
                            fit_scope=str(payload["fit_scope"]))
    return dataset, stats
