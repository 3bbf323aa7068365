"""Classification metrics on the illicit class, per-step breakdowns,
bootstrap confidence intervals, and misclassification-cost curves.

Every function here is pure: same arrays in, same numbers out. Undefined
quantities (recall with no positive rows, precision with no predicted
positives) are recorded as 0.0 together with an explicit flag instead of
being dropped, so period means keep collapsed steps in the denominator.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError

# Test-period split used for the early/late degradation contrast.
EARLY_TEST_STEPS = tuple(range(35, 43))
LATE_TEST_STEPS = tuple(range(43, 50))

_MEAN_FIELDS = ("f1", "precision", "recall", "auc_roc", "average_precision")


def _check_scores_labels(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.size == 0:
        raise ConfigError(f"scores must be a non-empty 1-d array, got shape {scores.shape}")
    if labels.shape != scores.shape:
        raise ConfigError(f"labels shape {labels.shape} != scores shape {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise ConfigError("scores contain non-finite values")
    labels = labels.astype(np.int64, copy=False)
    if not np.isin(labels, (0, 1)).all():
        raise ConfigError("labels must be binary with illicit encoded as 1")
    return scores, labels


@dataclass(frozen=True)
class MetricBundle:
    f1: float
    precision: float
    recall: float
    auc_roc: float
    average_precision: float
    tp: int
    fp: int
    fn: int
    tn: int
    threshold: float | None
    rule: str
    n_rows: int
    no_positive_labels: bool
    no_predicted_positives: bool

    @property
    def confusion(self) -> tuple[int, int, int, int]:
        return (self.tp, self.fp, self.fn, self.tn)

    def to_dict(self) -> dict:
        return asdict(self)


def _rank_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC from tie-averaged ranks; 0.0 when single-class."""
    n_pos = int((labels == 1).sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.0
    ranks = rankdata(scores)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """AP by precision-recall summation over distinct score thresholds."""
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    y = labels[order]
    s = scores[order]
    # last index of each tied-score block, in descending-score order
    block_end = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[block_end].astype(np.float64)
    seen = (block_end + 1).astype(np.float64)
    precision = tp / seen
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def classify_metrics(scores: np.ndarray, labels: np.ndarray,
                     threshold: float | None = 0.5,
                     decisions: np.ndarray | None = None,
                     rule: str | None = None) -> MetricBundle:
    """Confusion-based metrics on the illicit class plus ranking metrics.

    Decisions default to ``scores >= threshold``; callers using argmax over
    a logit head pass their own ``decisions`` (and a ``rule`` label) while
    the scores still drive AUC and AP.
    """
    scores, labels = _check_scores_labels(scores, labels)
    if decisions is None:
        if threshold is None:
            raise ConfigError("either a threshold or explicit decisions are required")
        decisions = scores >= threshold
        rule = rule or "threshold"
    else:
        decisions = np.asarray(decisions)
        if decisions.shape != scores.shape:
            raise ConfigError("decisions must align with scores")
        decisions = decisions.astype(bool)
        rule = rule or "external"
        threshold = None

    pos = labels == 1
    tp = int(np.count_nonzero(pos & decisions))
    fp = int(np.count_nonzero(~pos & decisions))
    fn = int(np.count_nonzero(pos & ~decisions))
    tn = int(np.count_nonzero(~pos & ~decisions))

    no_pos = (tp + fn) == 0
    no_pred = (tp + fp) == 0
    precision = tp / (tp + fp) if not no_pred else 0.0
    recall = tp / (tp + fn) if not no_pos else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0

    return MetricBundle(
        f1=float(f1), precision=float(precision), recall=float(recall),
        auc_roc=_rank_auc(scores, labels),
        average_precision=_average_precision(scores, labels),
        tp=tp, fp=fp, fn=fn, tn=tn,
        threshold=None if threshold is None else float(threshold),
        rule=rule, n_rows=int(scores.size),
        no_positive_labels=bool(no_pos),
        no_predicted_positives=bool(no_pred),
    )


@dataclass(frozen=True)
class PerStepReport:
    per_step: dict[int, MetricBundle]
    # Means over the steps present in each period; flagged zero-positive
    # steps stay in at value 0 rather than being dropped. NaN when the
    # period has no steps at all.
    early_mean: dict[str, float]
    late_mean: dict[str, float]
    flagged_steps: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "per_step": {str(k): v.to_dict() for k, v in self.per_step.items()},
            "early_mean": self.early_mean,
            "late_mean": self.late_mean,
            "flagged_steps": list(self.flagged_steps),
        }


def per_timestep_metrics(scores: np.ndarray, labels: np.ndarray,
                         steps: np.ndarray, threshold: float | None = 0.5,
                         decisions: np.ndarray | None = None,
                         rule: str | None = None) -> PerStepReport:
    """classify_metrics per timestep plus early/late period means."""
    scores, labels = _check_scores_labels(scores, labels)
    steps = np.asarray(steps)
    if steps.shape != scores.shape:
        raise ConfigError("steps must align with scores")
    if decisions is not None:
        decisions = np.asarray(decisions)
        if decisions.shape != scores.shape:
            raise ConfigError("decisions must align with scores")

    per_step: dict[int, MetricBundle] = {}
    flagged: list[int] = []
    for step in np.unique(steps):
        sel = steps == step
        bundle = classify_metrics(
            scores[sel], labels[sel], threshold=threshold,
            decisions=None if decisions is None else decisions[sel], rule=rule)
        per_step[int(step)] = bundle
        if bundle.no_positive_labels:
            flagged.append(int(step))

    def period_mean(period: tuple[int, ...]) -> dict[str, float]:
        bundles = [per_step[s] for s in period if s in per_step]
        if not bundles:
            return {name: float("nan") for name in _MEAN_FIELDS}
        return {name: float(np.mean([getattr(b, name) for b in bundles]))
                for name in _MEAN_FIELDS}

    return PerStepReport(per_step=per_step,
                         early_mean=period_mean(EARLY_TEST_STEPS),
                         late_mean=period_mean(LATE_TEST_STEPS),
                         flagged_steps=tuple(flagged))


def optimal_f1_threshold(scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Threshold (among distinct score values) maximizing illicit F1.

    The decision rule is ``score >= threshold``. Ties in F1 resolve to the
    lowest threshold.
    """
    scores, labels = _check_scores_labels(scores, labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise ConfigError("threshold search needs at least one positive row")
    order = np.argsort(-scores, kind="stable")
    y = labels[order]
    s = scores[order]
    block_end = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[block_end].astype(np.float64)
    seen = (block_end + 1).astype(np.float64)
    fp = seen - tp
    fn = n_pos - tp
    f1 = np.where(2 * tp + fp + fn > 0, 2 * tp / (2 * tp + fp + fn), 0.0)
    # thresholds are descending here; last max = lowest threshold
    best = int(np.flatnonzero(f1 == f1.max())[-1])
    return float(s[block_end[best]]), float(f1[best])


_NAMED_RANK_METRICS: dict[str, Callable[[np.ndarray, np.ndarray], float]] = {
    "auc_roc": _rank_auc,
    "average_precision": _average_precision,
}


def bootstrap_ci(scores: np.ndarray, labels: np.ndarray,
                 metric: str | Callable[[np.ndarray, np.ndarray], float] = "f1",
                 B: int = 10_000, rng: np.random.Generator | int | None = None,
                 threshold: float = 0.5, decisions: np.ndarray | None = None,
                 chunk: int = 256) -> tuple[float, float]:
    """Percentile (2.5/97.5) bootstrap CI over row resamples.

    Named confusion metrics run fully vectorized in replicate chunks;
    ranking metrics and callables fall back to a per-replicate loop.
    """
    scores, labels = _check_scores_labels(scores, labels)
    if B < 1:
        raise ConfigError("B must be >= 1")
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(0 if rng is None else int(rng))
    n = scores.size

    if isinstance(metric, str) and metric in ("f1", "precision", "recall"):
        dec = decisions.astype(bool) if decisions is not None else scores >= threshold
        values = np.empty(B, dtype=np.float64)
        done = 0
        while done < B:
            m = min(chunk, B - done)
            idx = rng.integers(0, n, size=(m, n))
            ys = labels[idx]
            ds = dec[idx]
            tp = np.count_nonzero((ys == 1) & ds, axis=1).astype(np.float64)
            fp = np.count_nonzero((ys == 0) & ds, axis=1).astype(np.float64)
            fn = np.count_nonzero((ys == 1) & ~ds, axis=1).astype(np.float64)
            if metric == "f1":
                denom = 2 * tp + fp + fn
                vals = np.where(denom > 0, 2 * tp / np.maximum(denom, 1.0), 0.0)
            elif metric == "precision":
                denom = tp + fp
                vals = np.where(denom > 0, tp / np.maximum(denom, 1.0), 0.0)
            else:
                denom = tp + fn
                vals = np.where(denom > 0, tp / np.maximum(denom, 1.0), 0.0)
            values[done:done + m] = vals
            done += m
    else:
        if isinstance(metric, str):
            fn_metric = _NAMED_RANK_METRICS.get(metric)
            if fn_metric is None:
                raise ConfigError(f"unknown metric {metric!r}")
        else:
            fn_metric = metric
        values = np.empty(B, dtype=np.float64)
        for b in range(B):
            idx = rng.integers(0, n, size=n)
            values[b] = fn_metric(scores[idx], labels[idx])

    lo, hi = np.percentile(values, [2.5, 97.5])
    return float(lo), float(hi)


@dataclass(frozen=True)
class CostParams:
    ratios: tuple[float, ...] = (1.0, 5.0, 10.0, 100.0)

    def __post_init__(self) -> None:
        if not self.ratios:
            raise ConfigError("at least one cost ratio is required")
        if any(r < 1 for r in self.ratios):
            raise ConfigError("cost ratios must be >= 1")


def cost_sweep(decisions: np.ndarray, labels: np.ndarray,
               params: CostParams | None = None) -> dict[float, float]:
    """Normalized misclassification cost (r*FN + FP) / (r*N_fraud + N_licit).

    At r=1 this is exactly the misclassification rate on the labeled rows.
    """
    params = params or CostParams()
    decisions = np.asarray(decisions)
    labels = np.asarray(labels)
    if decisions.shape != labels.shape or decisions.ndim != 1 or decisions.size == 0:
        raise ConfigError("decisions and labels must be aligned non-empty 1-d arrays")
    labels = labels.astype(np.int64, copy=False)
    if not np.isin(labels, (0, 1)).all():
        raise ConfigError("labels must be binary with illicit encoded as 1")
    dec = decisions.astype(bool)

    pos = labels == 1
    n_fraud = int(pos.sum())
    n_licit = int(labels.size - n_fraud)
    fn = int(np.count_nonzero(pos & ~dec))
    fp = int(np.count_nonzero(~pos & dec))
    out: dict[float, float] = {}
    for r in params.ratios:
        denom = r * n_fraud + n_licit
        if denom <= 0:
            raise ConfigError("cost normalizer is zero; no labeled rows")
        out[float(r)] = float((r * fn + fp) / denom)
    return out
