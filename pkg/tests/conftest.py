"""Shared synthetic fixtures.

Two families: tiny hand-checkable datasets built directly as arrays, and
CSV trees in the on-disk format (167-column headerless features file,
headered classes and edges files) for ingestion tests.
"""
from __future__ import annotations

import numpy as np
import pytest

from inductive_bench.ingest import Dataset, make_splits, standardize
from inductive_bench.graphs import build_original
from inductive_bench.runner import DataBundle

N_FEATURES = 165


def make_dataset(n: int = 160, d: int = 12, seed: int = 7,
                 step_lo: int = 30, step_hi: int = 40,
                 n_edges: int = 300, signal: float = 1.5) -> Dataset:
    """Separable synthetic universe spanning the train/test boundary.

    Every step gets at least one licit and one illicit row so per-step
    metrics are never degenerate by accident.
    """
    rng = np.random.default_rng(seed)
    steps = np.sort(rng.integers(step_lo, step_hi + 1, size=n)).astype(np.int32)
    labels = rng.choice([-1, 0, 1], size=n, p=[0.3, 0.5, 0.2]).astype(np.int8)
    for s in np.unique(steps):
        idx = np.flatnonzero(steps == s)
        labels[idx[0]] = 0
        if len(idx) > 1:
            labels[idx[1]] = 1
    feats = rng.normal(size=(n, d))
    feats[labels == 1] += signal
    pairs = set()
    n_edges = min(n_edges, n * (n - 1) // 2)
    while len(pairs) < n_edges:
        u, v = rng.integers(0, n, 2)
        if u != v:
            pairs.add((min(int(u), int(v)), max(int(u), int(v))))
    edges = np.array(sorted(pairs), dtype=np.int64)
    return Dataset(external_ids=np.arange(n, dtype=np.int64), timesteps=steps,
                   features=feats, labels=labels, edges=edges)


@pytest.fixture(scope="session")
def small_dataset() -> Dataset:
    return make_dataset()


@pytest.fixture(scope="session")
def small_bundle(small_dataset) -> DataBundle:
    masks = make_splits(small_dataset)
    scaled, scaler = standardize(small_dataset, "train_only")
    return DataBundle(raw=small_dataset, masks=masks,
                      scaled={"train_only": scaled}, scalers={"train_only": scaler},
                      graphs={"original": build_original(small_dataset)})


def write_csv_tree(root, *, n: int = 20, seed: int = 3,
                   features: np.ndarray | None = None,
                   timesteps: np.ndarray | None = None,
                   classes: list[str] | None = None,
                   edge_rows: list[tuple[int, int]] | None = None,
                   ids: np.ndarray | None = None) -> dict:
    """Write the three CSVs under ``root``; returns the generating arrays."""
    rng = np.random.default_rng(seed)
    if ids is None:
        # Non-contiguous external ids: dense indexing must not assume 0..n-1.
        ids = np.arange(n, dtype=np.int64) * 7 + 1000
    n = len(ids)
    if timesteps is None:
        timesteps = np.sort(rng.integers(1, 50, size=n))
    if features is None:
        features = rng.normal(size=(n, N_FEATURES)).round(6)
    if classes is None:
        classes = [str(rng.choice(["1", "2", "unknown"])) for _ in range(n)]
    if edge_rows is None:
        edge_rows = []
        for _ in range(n):
            u, v = rng.choice(ids, 2, replace=False)
            edge_rows.append((int(u), int(v)))

    with open(root / "elliptic_txs_features.csv", "w") as fh:
        for i in range(n):
            row = [str(int(ids[i])), str(int(timesteps[i]))]
            row += [repr(float(x)) for x in features[i]]
            fh.write(",".join(row) + "\n")
    with open(root / "elliptic_txs_classes.csv", "w") as fh:
        fh.write("txId,class\n")
        for i in range(n):
            fh.write(f"{int(ids[i])},{classes[i]}\n")
    with open(root / "elliptic_txs_edgelist.csv", "w") as fh:
        fh.write("txId1,txId2\n")
        for u, v in edge_rows:
            fh.write(f"{u},{v}\n")
    return {"ids": ids, "timesteps": np.asarray(timesteps),
            "features": features, "classes": classes, "edge_rows": edge_rows}


@pytest.fixture
def csv_tree(tmp_path):
    meta = write_csv_tree(tmp_path)
    return tmp_path, meta
