"""Graph variants over the transaction universe, plus the leakage audit.

Every graph is stored as a symmetric CSR adjacency with no self-loops.
Column indices are sorted within each row; builders deduplicate parallel
edges except the endpoint resampler, which preserves the edge count and
may therefore produce a multigraph (duplicates then count with their
multiplicity in every aggregation).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import sparse

from .errors import ConfigError, IntegrityError, ParseError
from .ingest import (ILLICIT, TRAIN_MAX_STEP, Dataset, NodeTable, ScalerStats)

__all__ = [
    "Graph", "GraphStats", "AugConfig", "TrainingSetup", "Violation", "AuditReport",
    "build_original", "build_similarity", "build_knn", "build_temporal",
    "build_augmented_union", "shuffle_edges", "empty_edges",
    "induce_inductive_subgraph", "augment_fraud_egographs", "graph_stats",
    "leakage_audit", "export_edgelist", "load_edgelist",
]


class Graph:
    """Symmetric CSR adjacency with provenance metadata.

    ``node_ids`` maps graph rows back to the dense index of the universe a
    subgraph was induced from; it is None when rows already are that index.
    """

    def __init__(self, num_nodes: int, indptr: np.ndarray, indices: np.ndarray,
                 variant: str, parent_hash: str, meta: Optional[dict] = None,
                 node_ids: Optional[np.ndarray] = None):
        self.num_nodes = int(num_nodes)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.variant = variant
        self.parent_hash = parent_hash
        self.meta = dict(meta or {})
        self.node_ids = node_ids
        self._ops: dict = {}
        self._edge_targets: Optional[np.ndarray] = None
        self._hash: Optional[str] = None

    @classmethod
    def from_undirected(cls, num_nodes: int, pairs: np.ndarray, variant: str,
                        parent_hash: str, meta: Optional[dict] = None,
                        node_ids: Optional[np.ndarray] = None) -> "Graph":
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if pairs.size:
            if pairs.min() < 0 or pairs.max() >= num_nodes:
                raise IntegrityError("edge endpoint outside node range")
            if np.any(pairs[:, 0] == pairs[:, 1]):
                raise IntegrityError("self-loop in undirected edge list")
        src = np.concatenate([pairs[:, 0], pairs[:, 1]])
        dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
        order = np.lexsort((dst, src))
        indices = dst[order]
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=num_nodes), out=indptr[1:])
        return cls(num_nodes, indptr, indices, variant, parent_hash, meta, node_ids)

    @property
    def directed_edge_count(self) -> int:
        return int(self.indices.size)

    @property
    def undirected_edge_count(self) -> int:
        return self.directed_edge_count // 2

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edge_targets(self) -> np.ndarray:
        """Row index of each stored (directed) entry, aligned with ``indices``."""
        if self._edge_targets is None:
            self._edge_targets = np.repeat(
                np.arange(self.num_nodes, dtype=np.int64), self.degrees())
        return self._edge_targets

    def undirected_pairs(self) -> np.ndarray:
        """(E, 2) array with u < v, multiplicity preserved."""
        src = self.edge_targets()
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    def to_scipy(self, dtype=np.float64) -> sparse.csr_matrix:
        data = np.ones(self.indices.size, dtype=dtype)
        return sparse.csr_matrix((data, self.indices.copy(), self.indptr.copy()),
                                 shape=(self.num_nodes, self.num_nodes))

    def operator(self, kind: str, dtype=np.float64):
        """Cached sparse operators used by the aggregation kernels."""
        key = (kind, np.dtype(dtype).name)
        if key not in self._ops:
            if kind in ("mean", "mean_t"):
                deg = self.degrees().astype(dtype)
                inv = np.zeros_like(deg)
                nz = deg > 0
                inv[nz] = 1.0 / deg[nz]
                data = np.repeat(inv, self.degrees())
                mean = sparse.csr_matrix((data, self.indices.copy(), self.indptr.copy()),
                                         shape=(self.num_nodes, self.num_nodes))
                self._ops[("mean", key[1])] = mean
                self._ops[("mean_t", key[1])] = mean.T.tocsr()
            elif kind == "gcn":
                a_tilde = self.to_scipy(dtype) + sparse.identity(
                    self.num_nodes, dtype=dtype, format="csr")
                deg = np.asarray(a_tilde.sum(axis=1)).ravel()
                inv_sqrt = 1.0 / np.sqrt(deg)
                d_half = sparse.diags(inv_sqrt.astype(dtype))
                self._ops[key] = (d_half @ a_tilde @ d_half).tocsr()
            else:
                raise ConfigError(f"unknown operator kind {kind!r}")
        return self._ops[key]

    def content_hash(self) -> str:
        if self._hash is None:
            h = hashlib.sha256()
            h.update(str(self.num_nodes).encode())
            h.update(self.indptr.tobytes())
            h.update(self.indices.tobytes())
            self._hash = h.hexdigest()
        return self._hash

    def validate(self) -> None:
        """Assert the CSR invariants; meant for tests and import paths."""
        if self.indptr[0] != 0 or self.indptr[-1] != self.indices.size:
            raise IntegrityError("corrupt CSR offsets")
        if np.any(np.diff(self.indptr) < 0):
            raise IntegrityError("CSR offsets not monotone")
        if self.indices.size:
            if self.indices.min() < 0 or self.indices.max() >= self.num_nodes:
                raise IntegrityError("column index outside node range")
        for v in range(self.num_nodes):
            row = self.indices[self.indptr[v]:self.indptr[v + 1]]
            if np.any(np.diff(row) < 0):
                raise IntegrityError(f"row {v} not sorted")
            if np.any(row == v):
                raise IntegrityError(f"self-loop at node {v}")
        adj = self.to_scipy()
        if (adj != adj.T).nnz:
            raise IntegrityError("adjacency not symmetric")

    def __repr__(self) -> str:
        return (f"Graph(variant={self.variant!r}, nodes={self.num_nodes}, "
                f"directed_edges={self.directed_edge_count})")


def build_original(dataset: Dataset) -> Graph:
    return Graph.from_undirected(dataset.n_nodes, dataset.edges, "original",
                                 dataset.content_hash())


def _steps_of(dataset: Dataset) -> list[tuple[int, np.ndarray]]:
    return [(int(s), np.flatnonzero(dataset.timesteps == s))
            for s in np.unique(dataset.timesteps)]


def build_similarity(dataset: Dataset, threshold: float = 0.92,
                     block: int = 2048) -> Graph:
    """Connect same-timestep pairs whose feature cosine exceeds ``threshold``."""
    if not -1.0 < threshold <= 1.0:
        raise ConfigError(f"cosine threshold {threshold} outside (-1, 1]")
    pair_chunks = []
    for _, rows in _steps_of(dataset):
        x = dataset.features[rows]
        norms = np.linalg.norm(x, axis=1)
        norms[norms == 0.0] = 1.0
        xn = x / norms[:, None]
        m = len(rows)
        cols = np.arange(m)
        for start in range(0, m, block):
            stop = min(start + block, m)
            sims = xn[start:stop] @ xn.T
            upper = cols[None, :] > np.arange(start, stop)[:, None]
            r, c = np.nonzero((sims > threshold) & upper)
            if r.size:
                pair_chunks.append(np.stack([rows[start + r], rows[c]], axis=1))
    pairs = (np.concatenate(pair_chunks) if pair_chunks
             else np.empty((0, 2), dtype=np.int64))
    pairs = np.unique(np.sort(pairs, axis=1), axis=0) if pairs.size else pairs
    return Graph.from_undirected(dataset.n_nodes, pairs, "similarity",
                                 dataset.content_hash(), {"threshold": threshold})


def _block_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    return d


def _nearest(dists: np.ndarray, k: int, exclude_diag_offset: Optional[int] = None) -> np.ndarray:
    """Column indices of the k smallest entries per row, ties to the smaller index."""
    if exclude_diag_offset is not None:
        rows = np.arange(dists.shape[0])
        dists[rows, rows + exclude_diag_offset] = np.inf
    order = np.argsort(dists, axis=1, kind="stable")
    return order[:, :k]


def build_knn(dataset: Dataset, k: int = 5, block: int = 1024) -> Graph:
    """Symmetrized k-nearest-neighbor graph in feature space, per timestep.

    Neighbor lists are directed before symmetrization; distance ties break
    toward the smaller dense index. A timestep with at most k+1 nodes is
    fully connected.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    pair_chunks = []
    for _, rows in _steps_of(dataset):
        m = len(rows)
        if m < 2:
            continue
        x = dataset.features[rows]
        kk = min(k, m - 1)
        for start in range(0, m, block):
            stop = min(start + block, m)
            d = _block_sq_dists(x[start:stop], x)
            nn = _nearest(d, kk, exclude_diag_offset=start)
            src = np.repeat(rows[start:stop], kk)
            pair_chunks.append(np.stack([src, rows[nn.ravel()]], axis=1))
    pairs = (np.concatenate(pair_chunks) if pair_chunks
             else np.empty((0, 2), dtype=np.int64))
    pairs = np.unique(np.sort(pairs, axis=1), axis=0) if pairs.size else pairs
    return Graph.from_undirected(dataset.n_nodes, pairs, "knn",
                                 dataset.content_hash(), {"k": k})


def build_temporal(dataset: Dataset, k: int = 3, block: int = 1024) -> Graph:
    """Link each node to its k nearest feature neighbors in the next timestep."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    steps = dict(_steps_of(dataset))
    pair_chunks = []
    for step in sorted(steps):
        if step + 1 not in steps:
            continue
        rows_a, rows_b = steps[step], steps[step + 1]
        xa, xb = dataset.features[rows_a], dataset.features[rows_b]
        kk = min(k, len(rows_b))
        for start in range(0, len(rows_a), block):
            stop = min(start + block, len(rows_a))
            d = _block_sq_dists(xa[start:stop], xb)
            nn = _nearest(d, kk)
            src = np.repeat(rows_a[start:stop], kk)
            pair_chunks.append(np.stack([src, rows_b[nn.ravel()]], axis=1))
    pairs = (np.concatenate(pair_chunks) if pair_chunks
             else np.empty((0, 2), dtype=np.int64))
    pairs = np.unique(np.sort(pairs, axis=1), axis=0) if pairs.size else pairs
    return Graph.from_undirected(dataset.n_nodes, pairs, "temporal",
                                 dataset.content_hash(), {"k": k})


def build_augmented_union(original: Graph, similarity: Graph) -> Graph:
    """Deduplicated union of two edge sets over the same node universe."""
    if original.num_nodes != similarity.num_nodes:
        raise ConfigError("union requires graphs over the same node universe")
    pairs = np.concatenate([original.undirected_pairs(), similarity.undirected_pairs()])
    pairs = np.unique(pairs, axis=0) if pairs.size else pairs
    return Graph.from_undirected(original.num_nodes, pairs, "augmented",
                                 original.parent_hash,
                                 {"components": [original.variant, similarity.variant]})


def shuffle_edges(graph: Graph, rng: np.random.Generator) -> Graph:
    """Resample both endpoints of every edge uniformly over all nodes.

    The undirected edge count is preserved exactly; self-loops are redrawn
    and colliding duplicates are kept as parallel edges.
    """
    n = graph.num_nodes
    if n < 2 and graph.undirected_edge_count:
        raise ConfigError("cannot shuffle edges on a graph with fewer than 2 nodes")
    e = graph.undirected_edge_count
    u = rng.integers(0, n, size=e)
    v = rng.integers(0, n, size=e)
    bad = u == v
    while bad.any():
        v[bad] = rng.integers(0, n, size=int(bad.sum()))
        bad = u == v
    pairs = np.stack([np.minimum(u, v), np.maximum(u, v)], axis=1)
    return Graph.from_undirected(n, pairs, "shuffled", graph.content_hash(),
                                 {"source_variant": graph.variant})


def empty_edges(graph: Graph) -> Graph:
    return Graph(graph.num_nodes, np.zeros(graph.num_nodes + 1, dtype=np.int64),
                 np.empty(0, dtype=np.int64), "empty", graph.content_hash(),
                 {"source_variant": graph.variant}, node_ids=graph.node_ids)


def induce_inductive_subgraph(graph: Graph, dataset: Dataset,
                              t_max: int = TRAIN_MAX_STEP) -> tuple[Graph, np.ndarray]:
    """Subgraph on nodes with timestep <= ``t_max``; edges need both endpoints.

    Returns the relabeled graph and the old-to-new index map (-1 for
    dropped nodes). The graph's ``node_ids`` carries new-to-old.
    """
    if not 1 <= t_max <= 49:
        raise ConfigError(f"t_max {t_max} outside [1, 49]")
    row_steps = dataset.timesteps if graph.node_ids is None else dataset.timesteps[graph.node_ids]
    if len(row_steps) != graph.num_nodes:
        raise ConfigError("graph and dataset node universes differ")
    keep = row_steps <= t_max
    kept_rows = np.flatnonzero(keep)
    mapping = np.full(graph.num_nodes, -1, dtype=np.int64)
    mapping[kept_rows] = np.arange(kept_rows.size)
    pairs = graph.undirected_pairs()
    survives = keep[pairs[:, 0]] & keep[pairs[:, 1]]
    new_pairs = mapping[pairs[survives]]
    node_ids = kept_rows if graph.node_ids is None else graph.node_ids[kept_rows]
    out = Graph.from_undirected(kept_rows.size, new_pairs, "induced",
                                graph.content_hash(),
                                {"t_max": t_max, "source_variant": graph.variant},
                                node_ids=node_ids)
    return out, mapping


@dataclass
class AugConfig:
    """Fraud ego-graph cloning: K ego-graphs, Gaussian feature noise."""
    n_egographs: int = 30
    noise_sigma: float = 0.02
    seed: int = 0
    target_label: int = ILLICIT

    def to_dict(self) -> dict:
        return {"n_egographs": self.n_egographs, "noise_sigma": self.noise_sigma,
                "seed": self.seed, "target_label": self.target_label}


def augment_fraud_egographs(graph: Graph, nodes: NodeTable,
                            cfg: AugConfig) -> tuple[Graph, NodeTable]:
    """Clone 1-hop fraud neighborhoods as isolated, noisy components.

    Seeds are drawn with replacement from illicit nodes with training-period
    timesteps. Each clone copies the induced 1-hop subgraph, jitters the
    features with N(0, sigma^2), labels every cloned node with the target
    label, and inherits the seed node's timestep.
    """
    if cfg.n_egographs < 0:
        raise ConfigError("n_egographs must be >= 0")
    if cfg.noise_sigma < 0:
        raise ConfigError("noise_sigma must be >= 0")
    if nodes.n_nodes != graph.num_nodes:
        raise ConfigError("node table and graph universes differ")
    pool = np.flatnonzero((nodes.labels == ILLICIT) & (nodes.timesteps <= TRAIN_MAX_STEP))
    if pool.size == 0 and cfg.n_egographs > 0:
        raise ConfigError("no illicit training-period seeds available for augmentation")

    rng = np.random.default_rng(cfg.seed)
    new_pairs = [graph.undirected_pairs()]
    feat_blocks = [nodes.features]
    label_blocks = [nodes.labels]
    step_blocks = [nodes.timesteps]
    next_id = graph.num_nodes
    for _ in range(cfg.n_egographs):
        s = int(pool[rng.integers(pool.size)])
        neigh = graph.indices[graph.indptr[s]:graph.indptr[s + 1]]
        ego = np.unique(np.concatenate([[s], neigh]))
        local = {int(old): next_id + i for i, old in enumerate(ego)}
        ego_set = set(local)
        ego_edges = []
        for a in ego:
            for b in graph.indices[graph.indptr[a]:graph.indptr[a + 1]]:
                if a < b and int(b) in ego_set:
                    ego_edges.append((local[int(a)], local[int(b)]))
        if ego_edges:
            new_pairs.append(np.asarray(ego_edges, dtype=np.int64))
        noise = rng.normal(0.0, cfg.noise_sigma, size=(ego.size, nodes.features.shape[1]))
        feat_blocks.append(nodes.features[ego] + noise)
        label_blocks.append(np.full(ego.size, cfg.target_label, dtype=nodes.labels.dtype))
        step_blocks.append(np.full(ego.size, nodes.timesteps[s], dtype=nodes.timesteps.dtype))
        next_id += ego.size

    pairs = np.concatenate(new_pairs) if new_pairs else np.empty((0, 2), dtype=np.int64)
    out_graph = Graph.from_undirected(next_id, pairs, f"{graph.variant}+aug",
                                      graph.content_hash(), dict(graph.meta, **cfg.to_dict()))
    out_nodes = NodeTable(features=np.concatenate(feat_blocks),
                          labels=np.concatenate(label_blocks),
                          timesteps=np.concatenate(step_blocks))
    return out_graph, out_nodes


@dataclass
class GraphStats:
    variant: str
    num_nodes: int
    directed_edges: int
    undirected_edges: int
    mean_degree: float
    max_degree: int
    isolated_nodes: int
    components: int
    clustering_sample: float
    clustering_sample_size: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _count_components(graph: Graph) -> int:
    parent = np.arange(graph.num_nodes, dtype=np.int64)

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]  # path halving
            a = parent[a]
        return a

    for u, v in graph.undirected_pairs():
        ru, rv = find(int(u)), find(int(v))
        if ru != rv:
            parent[ru] = rv
    roots = {find(int(i)) for i in range(graph.num_nodes)}
    return len(roots)


def graph_stats(graph: Graph, clustering_sample: int = 3000,
                rng: Optional[np.random.Generator] = None) -> GraphStats:
    """Degree, component and sampled-clustering statistics."""
    rng = rng or np.random.default_rng(0)
    deg = graph.degrees()
    n = graph.num_nodes
    sample_n = min(clustering_sample, n)
    sample = rng.choice(n, size=sample_n, replace=False) if n else np.empty(0, dtype=int)
    coeffs = np.zeros(sample_n)
    neighbor_sets = {}
    for i, v in enumerate(sample):
        nb = np.unique(graph.indices[graph.indptr[v]:graph.indptr[v + 1]])
        d = nb.size
        if d < 2:
            continue
        nb_set = set(nb.tolist())
        links = 0
        for u in nb:
            if u not in neighbor_sets:
                neighbor_sets[u] = set(
                    np.unique(graph.indices[graph.indptr[u]:graph.indptr[u + 1]]).tolist())
            links += len(neighbor_sets[u] & nb_set)
        coeffs[i] = links / (d * (d - 1))  # each triangle edge counted twice
    return GraphStats(
        variant=graph.variant,
        num_nodes=n,
        directed_edges=graph.directed_edge_count,
        undirected_edges=graph.undirected_edge_count,
        mean_degree=graph.directed_edge_count / n if n else 0.0,
        max_degree=int(deg.max()) if n else 0,
        isolated_nodes=int((deg == 0).sum()),
        components=_count_components(graph),
        clustering_sample=float(coeffs.mean()) if sample_n else 0.0,
        clustering_sample_size=sample_n,
    )


@dataclass
class Violation:
    kind: str
    subject: str
    detail: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "subject": self.subject, "detail": self.detail}


@dataclass
class AuditReport:
    passed: bool
    violations: list[Violation]
    # Set on reload from a checkpoint, where only a violation sample is kept.
    recorded_counts: Optional[dict] = None
    n_violations: Optional[int] = None

    def counts(self) -> dict[str, int]:
        if self.recorded_counts is not None:
            return dict(self.recorded_counts)
        out: dict[str, int] = {}
        for v in self.violations:
            out[v.kind] = out.get(v.kind, 0) + 1
        return out

    def total(self) -> int:
        return self.n_violations if self.n_violations is not None else len(self.violations)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "counts": self.counts(),
                "violations": [v.to_dict() for v in self.violations[:50]],
                "n_violations": self.total()}

    @classmethod
    def from_dict(cls, payload: dict) -> "AuditReport":
        return cls(passed=payload["passed"],
                   violations=[Violation(**v) for v in payload["violations"]],
                   recorded_counts=payload.get("counts"),
                   n_violations=payload.get("n_violations"))


@dataclass
class TrainingSetup:
    """Everything the leakage audit needs to examine one training run."""
    graph: Graph
    graph_timesteps: np.ndarray
    scaler: ScalerStats
    declared_protocol: str
    declared_fit_scope: str
    bn_updates: list = field(default_factory=list)
    t_max: int = TRAIN_MAX_STEP


def leakage_audit(setup: TrainingSetup) -> AuditReport:
    """Check the three leakage channels of a training setup.

    (a) test-period nodes present in the training graph, (b) a scaler that
    saw test rows when the experiment declared train-only normalization,
    (c) batch-norm running stats updated on node sets touching the test
    period.
    """
    violations: list[Violation] = []
    offending = np.flatnonzero(np.asarray(setup.graph_timesteps) > setup.t_max)
    ids = setup.graph.node_ids
    for row in offending:
        original = int(ids[row]) if ids is not None else int(row)
        violations.append(Violation(
            kind="test_node_in_train_graph",
            subject=f"node {original}",
            detail=f"timestep {int(setup.graph_timesteps[row])} > {setup.t_max}"))
    if (setup.declared_protocol == "strict_inductive"
            and setup.declared_fit_scope == "train_only"
            and setup.scaler.fit_scope == "full_population"):
        violations.append(Violation(
            kind="scaler_saw_test_rows",
            subject="scaler",
            detail="fit on the full population under a train-only declaration"))
    for upd in setup.bn_updates:
        if upd.max_timestep > setup.t_max:
            violations.append(Violation(
                kind="bn_stats_updated_on_test",
                subject=f"{upd.layer}@epoch{upd.epoch}",
                detail=f"running stats saw timestep {upd.max_timestep}"))
    return AuditReport(passed=not violations, violations=violations)


def export_edgelist(graph: Graph, path: str | Path) -> None:
    """Plain ``u v`` text rows plus a JSON sidecar with provenance."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pairs = graph.undirected_pairs()
    with open(path, "w") as fh:
        for u, v in pairs:
            fh.write(f"{u} {v}\n")
    sidecar = {
        "variant": graph.variant,
        "parent_hash": graph.parent_hash,
        "num_nodes": graph.num_nodes,
        "undirected_edges": int(pairs.shape[0]),
        "meta": graph.meta,
    }
    with open(path.with_suffix(path.suffix + ".meta.json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def load_edgelist(path: str | Path) -> Graph:
    path = Path(path)
    with open(path.with_suffix(path.suffix + ".meta.json")) as fh:
        sidecar = json.load(fh)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise ParseError(f"edge list line {lineno}: expected two ids")
            rows.append((int(parts[0]), int(parts[1])))
    pairs = np.asarray(rows, dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0] != sidecar["undirected_edges"]:
        raise IntegrityError(
            f"edge list has {pairs.shape[0]} rows, sidecar says {sidecar['undirected_edges']}")
    return Graph.from_undirected(sidecar["num_nodes"], pairs, sidecar["variant"],
                                 sidecar["parent_hash"], sidecar.get("meta"))
