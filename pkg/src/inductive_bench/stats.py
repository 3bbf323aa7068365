"""Seed-level hypothesis tests, temperature calibration, and drift
statistics for comparing runs and characterizing the test period.

Degenerate inputs (zero variance) are flagged rather than raised: a
comparison of ten identical seeds is a legitimate result, not a bug, and
downstream tables need a row for it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.stats import t as student_t

from .errors import ConfigError

# JSON-safe stand-in for an infinite t statistic (zero variance,
# nonzero difference). p is clamped to the smallest positive normal.
_T_CAP = 1e12


@dataclass(frozen=True)
class StatReport:
    kind: str
    comparison: str
    delta: float
    t: float
    dof: float
    p: float
    cohens_d: float
    n_a: int
    n_b: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _check_sample(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ConfigError(f"{name} needs at least 2 values, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ConfigError(f"{name} contains non-finite values")
    return x


def welch_t(a: np.ndarray, b: np.ndarray, comparison: str = "") -> StatReport:
    """Welch's unequal-variance t test with Satterthwaite dof.

    Cohen's d uses the unpooled convention sqrt((s_a^2 + s_b^2) / 2) and is
    positive when the first sample's mean is larger.
    """
    a = _check_sample(a, "a")
    b = _check_sample(b, "b")
    na, nb = a.size, b.size
    ma, mb = float(a.mean()), float(b.mean())
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    delta = ma - mb

    se_sq = va / na + vb / nb
    d_denom_sq = (va + vb) / 2.0
    if se_sq == 0.0:
        if delta == 0.0:
            return StatReport("welch", comparison, 0.0, 0.0, float(na + nb - 2),
                              1.0, 0.0, na, nb, degenerate=True)
        capped = math.copysign(_T_CAP, delta)
        return StatReport("welch", comparison, delta, capped, float(na + nb - 2),
                          float(np.finfo(np.float64).tiny), capped, na, nb,
                          degenerate=True)

    t_stat = delta / math.sqrt(se_sq)
    dof = se_sq ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = 2.0 * float(student_t.sf(abs(t_stat), dof))
    p = max(p, float(np.finfo(np.float64).tiny))
    d = delta / math.sqrt(d_denom_sq)
    return StatReport("welch", comparison, delta, float(t_stat), float(dof),
                      p, float(d), na, nb)


def paired_t(a: np.ndarray, b: np.ndarray, comparison: str = "") -> StatReport:
    """Paired t test on per-seed differences a_i - b_i.

    Cohen's d here is mean(diff) / std(diff), the within-pair convention.
    All-equal pairs are reported as t=0, p=1, d=0 with the degenerate flag.
    """
    a = _check_sample(a, "a")
    b = _check_sample(b, "b")
    if a.size != b.size:
        raise ConfigError(f"paired samples must match in length, got {a.size} and {b.size}")
    n = a.size
    diff = a - b
    mean_d = float(diff.mean())
    std_d = float(diff.std(ddof=1))

    if std_d == 0.0:
        if mean_d == 0.0:
            return StatReport("paired", comparison, 0.0, 0.0, float(n - 1),
                              1.0, 0.0, n, n, degenerate=True)
        capped = math.copysign(_T_CAP, mean_d)
        return StatReport("paired", comparison, mean_d, capped, float(n - 1),
                          float(np.finfo(np.float64).tiny), capped, n, n,
                          degenerate=True)

    t_stat = mean_d / (std_d / math.sqrt(n))
    p = 2.0 * float(student_t.sf(abs(t_stat), n - 1))
    p = max(p, float(np.finfo(np.float64).tiny))
    return StatReport("paired", comparison, mean_d, float(t_stat), float(n - 1),
                      p, float(mean_d / std_d), n, n)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _golden_section(fn, lo: float, hi: float, tol: float = 1e-4) -> float:
    """Minimize a unimodal scalar function by golden-section search."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return (a + b) / 2.0


def expected_calibration_error(probs: np.ndarray, labels: np.ndarray,
                               n_bins: int = 15) -> float:
    """ECE of the illicit probability over equal-width bins."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape != labels.shape or probs.ndim != 1 or probs.size == 0:
        raise ConfigError("probs and labels must be aligned non-empty 1-d arrays")
    bins = np.clip((probs * n_bins).astype(np.int64), 0, n_bins - 1)
    ece = 0.0
    n = probs.size
    for b in range(n_bins):
        sel = bins == b
        cnt = int(sel.sum())
        if cnt == 0:
            continue
        conf = float(probs[sel].mean())
        acc = float((labels[sel] == 1).mean())
        ece += cnt / n * abs(acc - conf)
    return float(ece)


def brier_score(probs: np.ndarray, labels: np.ndarray) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return float(np.mean((probs - labels) ** 2))


@dataclass(frozen=True)
class CalibrationReport:
    temperature: float
    nll_before: float
    nll_after: float
    ece_before: float
    ece_after: float
    brier_before: float
    brier_after: float
    delta_f1_at_fixed_threshold: float
    n_rows: int
    n_bins: int = 15

    def to_dict(self) -> dict:
        return asdict(self)


def _illicit_f1(decisions: np.ndarray, labels: np.ndarray) -> float:
    tp = int(np.count_nonzero((labels == 1) & decisions))
    fp = int(np.count_nonzero((labels == 0) & decisions))
    fn = int(np.count_nonzero((labels == 1) & ~decisions))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom > 0 else 0.0


def fit_temperature(logits: np.ndarray, labels: np.ndarray,
                    eval_logits: np.ndarray | None = None,
                    eval_labels: np.ndarray | None = None,
                    n_bins: int = 15) -> CalibrationReport:
    """Scalar temperature minimizing calibration-set NLL.

    Search is golden-section over T in [0.05, 10]. The before/after
    diagnostics (ECE, Brier, F1 at argmax) are computed on the evaluation
    rows when given, otherwise on the calibration rows themselves. Argmax
    is invariant under any positive temperature, so the F1 delta is an
    exact zero by construction; it is reported as a checksum.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] == 0 or logits.shape[1] < 2:
        raise ConfigError(f"logits must be (n, C>=2), got shape {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ConfigError("labels must align with logits rows")
    labels = labels.astype(np.int64, copy=False)
    if np.unique(labels).size < 2:
        raise ConfigError("calibration set must contain both classes")
    if (labels < 0).any() or (labels >= logits.shape[1]).any():
        raise ConfigError("labels outside the logit column range")

    rows = np.arange(logits.shape[0])

    def nll(temp: float) -> float:
        return float(-_log_softmax(logits / temp)[rows, labels].mean())

    temperature = _golden_section(nll, 0.05, 10.0)

    if eval_logits is None:
        eval_logits, eval_labels = logits, labels
    else:
        eval_logits = np.asarray(eval_logits, dtype=np.float64)
        eval_labels = np.asarray(eval_labels).astype(np.int64, copy=False)
        if eval_logits.ndim != 2 or eval_labels.shape != (eval_logits.shape[0],):
            raise ConfigError("eval logits and labels must align")

    def diagnostics(z: np.ndarray) -> tuple[float, float, float]:
        p = np.exp(_log_softmax(z))
        p1 = p[:, 1]
        dec = np.argmax(z, axis=1) == 1
        return (expected_calibration_error(p1, eval_labels, n_bins),
                brier_score(p1, (eval_labels == 1).astype(np.float64)),
                _illicit_f1(dec, eval_labels))

    ece_b, brier_b, f1_b = diagnostics(eval_logits)
    ece_a, brier_a, f1_a = diagnostics(eval_logits / temperature)

    return CalibrationReport(
        temperature=float(temperature),
        nll_before=nll(1.0), nll_after=nll(temperature),
        ece_before=ece_b, ece_after=ece_a,
        brier_before=brier_b, brier_after=brier_a,
        delta_f1_at_fixed_threshold=f1_a - f1_b,
        n_rows=int(eval_logits.shape[0]), n_bins=n_bins,
    )


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = np.square(a).sum(axis=1)
    bb = np.square(b).sum(axis=1)
    d = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


def mmd_rbf(x_a: np.ndarray, x_b: np.ndarray, bandwidth: float | None = None,
            max_n: int = 2000, rng: np.random.Generator | int | None = None) -> float:
    """RBF maximum mean discrepancy between two row samples.

    Unbiased MMD^2 estimate, clipped at zero, square-rooted. The kernel is
    exp(-d^2 / (2 sigma^2)) with sigma the median pairwise distance over the
    pooled sample (each unordered pair counted once) unless an explicit
    bandwidth is given. Sides larger than ``max_n`` are subsampled without
    replacement to bound the O(n^2) distance work.
    """
    x_a = np.asarray(x_a, dtype=np.float64)
    x_b = np.asarray(x_b, dtype=np.float64)
    if x_a.ndim != 2 or x_b.ndim != 2 or x_a.shape[1] != x_b.shape[1]:
        raise ConfigError("inputs must be 2-d with matching feature counts")
    if x_a.shape[0] < 2 or x_b.shape[0] < 2:
        raise ConfigError("the unbiased estimator needs at least 2 rows per side")
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(0 if rng is None else int(rng))
    if x_a.shape[0] > max_n:
        x_a = x_a[rng.choice(x_a.shape[0], size=max_n, replace=False)]
    if x_b.shape[0] > max_n:
        x_b = x_b[rng.choice(x_b.shape[0], size=max_n, replace=False)]

    d_aa = _sq_dists(x_a, x_a)
    d_bb = _sq_dists(x_b, x_b)
    d_ab = _sq_dists(x_a, x_b)

    if bandwidth is None:
        na, nb = x_a.shape[0], x_b.shape[0]
        iu_a = np.triu_indices(na, k=1)
        iu_b = np.triu_indices(nb, k=1)
        pooled_sq = np.concatenate([d_aa[iu_a], d_bb[iu_b], d_ab.ravel()])
        sigma_sq = float(np.median(pooled_sq))
        if sigma_sq <= 0.0:  # all points identical
            sigma_sq = 1.0
    else:
        if bandwidth <= 0:
            raise ConfigError("bandwidth must be positive")
        sigma_sq = float(bandwidth) ** 2

    gamma = 1.0 / (2.0 * sigma_sq)
    k_aa = np.exp(-gamma * d_aa)
    k_bb = np.exp(-gamma * d_bb)
    k_ab = np.exp(-gamma * d_ab)

    na, nb = x_a.shape[0], x_b.shape[0]
    term_a = (k_aa.sum() - np.trace(k_aa)) / (na * (na - 1))
    term_b = (k_bb.sum() - np.trace(k_bb)) / (nb * (nb - 1))
    mmd_sq = term_a + term_b - 2.0 * k_ab.mean()
    return float(np.sqrt(max(mmd_sq, 0.0)))


def l2_mean_drift(x_step: np.ndarray, x_train: np.ndarray) -> float:
    """Euclidean distance between the two samples' feature-mean vectors."""
    x_step = np.asarray(x_step, dtype=np.float64)
    x_train = np.asarray(x_train, dtype=np.float64)
    if x_step.ndim != 2 or x_train.ndim != 2 or x_step.shape[1] != x_train.shape[1]:
        raise ConfigError("inputs must be 2-d with matching feature counts")
    if x_step.shape[0] == 0 or x_train.shape[0] == 0:
        raise ConfigError("mean drift needs at least one row per side")
    return float(np.linalg.norm(x_step.mean(axis=0) - x_train.mean(axis=0)))
