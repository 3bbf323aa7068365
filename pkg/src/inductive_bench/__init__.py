"""Leakage-controlled benchmark harness for graph and tabular classifiers
on the Elliptic Bitcoin dataset.

The package separates five concerns: dataset ingestion and splits
(:mod:`.ingest`), graph construction and protocol auditing (:mod:`.graphs`),
neural encoders on a from-scratch autodiff engine (:mod:`.models` and
:mod:`.engine`), tree and linear baselines (:mod:`.forests`), evaluation
metrics and statistics (:mod:`.metrics`, :mod:`.stats`), and the experiment
runner that ties a condition grid to write-once result records
(:mod:`.runner`).
"""
from .errors import (ConfigError, IntegrityError, NumericError, ParseError,
                     ProtocolError)
from .ingest import (Dataset, ScalerStats, SplitMasks, LICIT, ILLICIT, UNKNOWN,
                     TRAIN_MAX_STEP, TEST_MIN_STEP, load_dataset, make_splits,
                     standardize, dataset_summary)
from .graphs import (Graph, AugConfig, AuditReport, TrainingSetup, Violation,
                     build_original, build_similarity, build_knn, build_temporal,
                     build_augmented_union, shuffle_edges, empty_edges,
                     induce_inductive_subgraph, leakage_audit, graph_stats)
from .models import (ModelSpec, TrainConfig, TrainedModel, GraphEncoderClassifier,
                     prepare_training, train, predict_proba, extract_embeddings,
                     fuse_probabilities, save_checkpoint, load_checkpoint,
                     count_params)
from .forests import (Forest, ForestConfig, LogRegConfig, RandomForestGini,
                      LogisticRegressionGD, rf_train, rf_predict_proba,
                      rf_importance_split, logreg_train, logreg_predict_proba)
from .metrics import (MetricBundle, PerStepReport, CostParams, classify_metrics,
                      per_timestep_metrics, bootstrap_ci, optimal_f1_threshold,
                      cost_sweep)
from .stats import (StatReport, CalibrationReport, welch_t, paired_t,
                    fit_temperature, expected_calibration_error, brier_score,
                    mmd_rbf, l2_mean_drift)
from .runner import (Condition, Comparison, ExperimentSpec, build_paper_spec,
                     load_spec, save_spec, run, run_comparisons, emit_tables,
                     load_records)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "IntegrityError", "NumericError", "ParseError", "ProtocolError",
    "Dataset", "ScalerStats", "SplitMasks", "LICIT", "ILLICIT", "UNKNOWN",
    "TRAIN_MAX_STEP", "TEST_MIN_STEP", "load_dataset", "make_splits",
    "standardize", "dataset_summary",
    "Graph", "AugConfig", "AuditReport", "TrainingSetup", "Violation",
    "build_original", "build_similarity", "build_knn", "build_temporal",
    "build_augmented_union", "shuffle_edges", "empty_edges",
    "induce_inductive_subgraph", "leakage_audit", "graph_stats",
    "ModelSpec", "TrainConfig", "TrainedModel", "GraphEncoderClassifier",
    "prepare_training", "train", "predict_proba", "extract_embeddings",
    "fuse_probabilities", "save_checkpoint", "load_checkpoint", "count_params",
    "Forest", "ForestConfig", "LogRegConfig", "RandomForestGini",
    "LogisticRegressionGD", "rf_train", "rf_predict_proba",
    "rf_importance_split", "logreg_train", "logreg_predict_proba",
    "MetricBundle", "PerStepReport", "CostParams", "classify_metrics",
    "per_timestep_metrics", "bootstrap_ci", "optimal_f1_threshold", "cost_sweep",
    "StatReport", "CalibrationReport", "welch_t", "paired_t", "fit_temperature",
    "expected_calibration_error", "brier_score", "mmd_rbf", "l2_mean_drift",
    "Condition", "Comparison", "ExperimentSpec", "build_paper_spec",
    "load_spec", "save_spec", "run", "run_comparisons", "emit_tables",
    "load_records",
    "__version__",
]
