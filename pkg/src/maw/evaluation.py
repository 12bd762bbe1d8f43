"""Datasets, contaminated splits, threshold-free metrics, experiment driver.

Synthetic data puts inliers on a low-dimensional linear structure plus noise
and outliers on the isotropic sphere; every ingested feature row is unit-L2
normalized.  AUC uses the rank (Mann-Whitney) form with half credit for ties;
AP is the step-wise precision sum with stable index tie-breaks.  The detector
emits normality scores, so the driver negates them before computing metrics
(outliers count as positives).
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from .errors import DataError, DomainError, MetricError, ShapeError


def normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(norms > 0.0, x / np.where(norms > 0.0, norms, 1.0), 0.0)


@dataclass
class Dataset:
    features: np.ndarray  # (n, D), rows unit-normalized
    labels: np.ndarray  # 0 = inlier, 1 = outlier
    provenance: str = "synthetic"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ShapeError("features and labels are inconsistent")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise DomainError("labels must be 0 (inlier) or 1 (outlier)")

    @property
    def n_outliers(self) -> int:
        return int(self.labels.sum())


class SyntheticFamily:
    """A fixed low-rank inlier structure that can emit train/test splits.

    Inliers are x = Q s + sigma e with a fixed orthonormal frame Q (D x r) and
    s ~ N(0, I_r); outliers are isotropic Gaussians scaled to a comparable
    norm.  All rows are unit-normalized.  The frame is derived from the family
    seed so train and test splits share the same structure.
    """

    def __init__(self, dim: int, rank: int, noise: float = 0.1, seed: int = 0):
        if not 1 <= rank < dim:
            raise DomainError("need 1 <= rank < dim")
        if noise < 0.0:
            raise DomainError("noise level must be nonnegative")
        self.dim = dim
        self.rank = rank
        self.noise = noise
        self.seed = int(seed)
        frame_rng = np.random.default_rng(np.random.SeedSequence((self.seed, 0xF8A)))
        basis = frame_rng.standard_normal((dim, rank))
        q, _ = np.linalg.qr(basis)
        self.frame = q[:, :rank]

    def sample(self, n_inliers: int, n_outliers: int, sample_seed: int) -> Dataset:
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, 0x5A7, int(sample_seed))))
        coords = rng.standard_normal((n_inliers, self.rank))
        inliers = coords @ self.frame.T
        inliers += self.noise * rng.standard_normal((n_inliers, self.dim))
        scale = np.sqrt((self.rank + self.noise**2 * self.dim) / self.dim)
        outliers = scale * rng.standard_normal((n_outliers, self.dim))
        features = normalize_rows(np.vstack([inliers, outliers]))
        labels = np.concatenate([np.zeros(n_inliers, int), np.ones(n_outliers, int)])
        return Dataset(features, labels, provenance="synthetic")


def gen_synthetic(dim: int, rank: int, n_inliers: int, outlier_ratio: float,
                  noise: float, seed: int) -> Dataset:
    """One synthetic dataset with round(n * c) outliers appended."""
    family = SyntheticFamily(dim, rank, noise, seed)
    n_out = int(round(n_inliers * outlier_ratio))
    return family.sample(n_inliers, n_out, sample_seed=0)


class PoolFamily:
    """Contaminated splits drawn without replacement from a labeled pool.

    Mirrors the sampling protocol on a fixed dataset: each split takes a fresh
    uniform subsample of inliers and of outliers.
    """

    def __init__(self, dataset: Dataset, seed: int = 0):
        self.dataset = dataset
        self.seed = int(seed)
        self._inliers = np.flatnonzero(dataset.labels == 0)
        self._outliers = np.flatnonzero(dataset.labels == 1)

    def sample(self, n_inliers: int, n_outliers: int, sample_seed: int) -> Dataset:
        if n_inliers > len(self._inliers) or n_outliers > len(self._outliers):
            raise DataError(
                f"pool has {len(self._inliers)} inliers / {len(self._outliers)} outliers; "
                f"requested {n_inliers} / {n_outliers}"
            )
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, 0x9001, int(sample_seed))))
        pick_in = rng.choice(self._inliers, size=n_inliers, replace=False)
        pick_out = rng.choice(self._outliers, size=n_outliers, replace=False)
        idx = np.concatenate([pick_in, pick_out])
        return Dataset(
            self.dataset.features[idx], self.dataset.labels[idx],
            provenance=self.dataset.provenance,
        )


def load_csv(path) -> Dataset:
    """Read a headed CSV of numeric feature columns plus an optional `label`.

    Rows are unit-normalized; a missing label column means all inliers.
    Comment lines starting with '#' are skipped.  Malformed cells raise
    DataError with their (1-based) row and column.
    """
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        content = [line for line in fh if not line.startswith("#")]
    if not content:
        raise DataError(f"empty file: {path}")
    reader = csv.reader(io.StringIO("".join(content)))
    header = next(reader)
    header = [h.strip() for h in header]
    if len(header) == 0 or any(not h for h in header):
        raise DataError("malformed header row")
    label_col = header.index("label") if "label" in header else None
    feat_cols = [i for i in range(len(header)) if i != label_col]
    if not feat_cols:
        raise DataError("no feature columns")
    rows, labels = [], []
    for r, rec in enumerate(reader, start=1):
        if len(rec) != len(header):
            raise DataError(f"row {r}: expected {len(header)} cells, got {len(rec)}")
        try:
            rows.append([float(rec[i]) for i in feat_cols])
        except ValueError:
            bad = next(i for i in feat_cols if not _is_float(rec[i]))
            raise DataError(f"row {r}, column {header[bad]!r}: non-numeric cell {rec[bad]!r}")
        if label_col is None:
            labels.append(0)
        else:
            cell = rec[label_col].strip()
            if cell not in ("0", "1"):
                raise DataError(f"row {r}, column 'label': expected 0 or 1, got {cell!r}")
            labels.append(int(cell))
    if not rows:
        raise DataError(f"no data rows in {path}")
    features = normalize_rows(np.asarray(rows, dtype=np.float64))
    return Dataset(features, np.asarray(labels), provenance="csv")


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


# --------------------------------------------------------------------- metrics


def auc(scores, labels) -> float:
    """Area under the ROC over all thresholds, outliers (label 1) positive.

    Mann-Whitney form with half credit for ties:
    (#(pos > neg) + #(pos == neg) / 2) / (#pos * #neg).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError("scores and labels must be matching vectors")
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise MetricError("AUC is undefined with a single class")
    greater = np.sum(pos[:, None] > neg[None, :])
    ties = np.sum(pos[:, None] == neg[None, :])
    return float((greater + 0.5 * ties) / (len(pos) * len(neg)))


def ap(scores, labels) -> float:
    """Average precision: mean precision at each positive's rank.

    Scores sort descending with ties broken by the stable original index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError("scores and labels must be matching vectors")
    if not np.any(labels == 1):
        raise MetricError("AP is undefined without positives")
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order]
    cum_tp = np.cumsum(ranked)
    precision = cum_tp / np.arange(1, len(ranked) + 1)
    return float(precision[ranked == 1].mean())


# --------------------------------------------------------------------- protocol


@dataclass(frozen=True)
class SplitSpec:
    """Contaminated train/test split sizes and ratios for one experiment cell."""

    n_train: int
    c: float
    n_test: int
    c_tests: tuple = (0.1, 0.3, 0.5, 0.7, 0.9)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "c_tests", tuple(float(c) for c in self.c_tests))
        if self.n_train < 2 or self.n_test < 1:
            raise DomainError("split sizes too small")
        if not 0.0 <= self.c <= 1.0 or any(not 0.0 <= c <= 1.0 for c in self.c_tests):
            raise DomainError("contamination ratios must lie in [0, 1]")

    @property
    def n_train_outliers(self) -> int:
        return int(round(self.n_train * self.c))

    def n_test_outliers(self, c_test: float) -> int:
        return int(round(self.n_test * c_test))


@dataclass
class MetricReport:
    """Mean +- population std of AUC/AP over seeds for one (variant, c) cell."""

    variant: str
    c: float
    auc_mean: float
    auc_std: float
    ap_mean: float
    ap_std: float
    per_seed: list = field(default_factory=list)

    def to_dict(self):
        return {
            "variant": self.variant,
            "c": self.c,
            "auc_mean": self.auc_mean,
            "auc_std": self.auc_std,
            "ap_mean": self.ap_mean,
            "ap_std": self.ap_std,
            "per_seed": self.per_seed,
        }


def evaluate_split(model, family: SyntheticFamily, split: SplitSpec, seed: int):
    """Score the test splits of one trained model; returns mean AUC/AP over c_test."""
    aucs, aps = [], []
    for j, c_test in enumerate(split.c_tests):
        test = family.sample(
            split.n_test, split.n_test_outliers(c_test),
            sample_seed=_test_seed(split.seed, seed, j),
        )
        normality = model_mod.score_batch(model, test.features, seed=_score_seed(split.seed, seed, j))
        outlierness = -normality
        aucs.append(auc(outlierness, test.labels))
        aps.append(ap(outlierness, test.labels))
    return float(np.mean(aucs)), float(np.mean(aps))


def _train_seed(split_seed: int, seed: int) -> int:
    return int(np.random.SeedSequence((split_seed, seed, 0x7E5)).generate_state(1)[0])


def _test_seed(split_seed: int, seed: int, j: int) -> int:
    return int(np.random.SeedSequence((split_seed, seed, 0x7E57, j)).generate_state(1)[0])


def _score_seed(split_seed: int, seed: int, j: int) -> int:
    return int(np.random.SeedSequence((split_seed, seed, 0x5C0, j)).generate_state(1)[0])


def run_experiment(family: SyntheticFamily, splits, variants, seeds,
                   hp: "model_mod.Hyperparams", progress=None) -> list[MetricReport]:
    """Train and evaluate every (variant, split, seed) cell.

    Per cell: train on the contaminated train split, score every test split,
    average AUC/AP over c_test per seed, and report the across-seed mean and
    population standard deviation.  Fully deterministic given the seeds.
    """
    reports = []
    for variant in variants:
        for split in splits:
            entries = []
            for seed in seeds:
                hp_cell = model_mod.Hyperparams(**{**hp.to_dict(), "variant": variant})
                train_set = family.sample(
                    split.n_train, split.n_train_outliers,
                    sample_seed=_train_seed(split.seed, seed),
                )
                model, _ = model_mod.train(train_set.features, hp_cell, seed=seed)
                auc_val, ap_val = evaluate_split(model, family, split, seed)
                entries.append({"seed": seed, "auc": auc_val, "ap": ap_val})
                if progress is not None:
                    progress(variant, split.c, seed, auc_val, ap_val)
            aucs = np.array([e["auc"] for e in entries])
            aps = np.array([e["ap"] for e in entries])
            reports.append(MetricReport(
                variant=variant, c=split.c,
                auc_mean=float(aucs.mean()), auc_std=float(aucs.std()),
                ap_mean=float(aps.mean()), ap_std=float(aps.std()),
                per_seed=entries,
            ))
    return reports
