"""Evaluation metrics and the restricted-data sweep harness.

Covers ranked top-n accuracy, Spearman's rank correlation with average ranks
for ties, confusion matrices, the accuracy-per-training-sequence data
efficiency ratio, and nested-subsample sweeps over training-set fractions.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    pass


class UndefinedCorrelationError(MetricError):
    """A rank vector has zero variance; the correlation is undefined."""


@dataclass
class EvalReport:
    task: str
    metric_kind: str  # "top1_accuracy" | "top_n_accuracy" | "spearman_rho"
    value: float
    n_test: int
    confusion: list[list[int]] | None = None
    fraction: float | None = None
    train_size: int | None = None
    baselines: dict[str, float] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if "accuracy" in self.metric_kind and not 0.0 <= self.value <= 1.0:
            raise MetricError(f"accuracy {self.value} outside [0, 1]")
        if self.metric_kind == "spearman_rho" and not -1.0 <= self.value <= 1.0:
            raise MetricError(f"spearman rho {self.value} outside [-1, 1]")
        if self.confusion is not None and self.metric_kind == "top1_accuracy":
            m = np.asarray(self.confusion)
            trace_ratio = np.trace(m) / m.sum()
            if not math.isclose(trace_ratio, self.value, rel_tol=0, abs_tol=1e-12):
                raise MetricError(
                    f"top-1 accuracy {self.value} != confusion trace ratio {trace_ratio}"
                )

    def to_json_dict(self) -> dict:
        doc = {
            "task": self.task,
            "metric": self.metric_kind,
            "value": self.value,
            "n_test": self.n_test,
        }
        if self.confusion is not None:
            doc["confusion"] = self.confusion
        if self.fraction is not None:
            doc["fraction"] = self.fraction
        if self.train_size is not None:
            doc["train_size"] = self.train_size
        if self.baselines:
            doc["baselines"] = self.baselines
        doc.update(self.extra)
        return doc


def top_n_accuracy(rankings, labels, n: int = 1) -> float:
    """Fraction of items whose true label appears in the first n ranks.

    Each entry of ``rankings`` must rank every class, best first.
    """
    if len(rankings) == 0:
        raise MetricError("empty test set")
    if len(rankings) != len(labels):
        raise MetricError(f"{len(rankings)} rankings vs {len(labels)} labels")
    n_classes = len(rankings[0])
    if not 1 <= n <= n_classes:
        raise MetricError(f"top-{n} undefined for {n_classes} classes")
    hits = 0
    for ranked, label in zip(rankings, labels):
        if len(ranked) != n_classes:
            raise MetricError("all rankings must rank the same class set")
        if label in list(ranked[:n]):
            hits += 1
    return hits / len(rankings)


def rankings_from_logits(logits: np.ndarray) -> list[tuple[int, ...]]:
    """Classes ordered by descending logit; ties break toward the lower id."""
    order = np.argsort(-np.asarray(logits), axis=1, kind="stable")
    return [tuple(int(c) for c in row) for row in order]


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(x, y) -> float:
    """Pearson correlation of the rank vectors, with average ranks for ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise MetricError(f"need two equal-length vectors of >= 2 values, got {x.shape}/{y.shape}")
    rx = average_ranks(x)
    ry = average_ranks(y)
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        raise UndefinedCorrelationError("constant input has zero rank variance")
    # identical / exactly reversed rank vectors short-circuit to exact +-1
    if np.array_equal(rx, ry):
        return 1.0
    if np.array_equal(rx, len(rx) + 1.0 - ry):
        return -1.0
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    return float((dx @ dy) / math.sqrt((dx @ dx) * (dy @ dy)))


def confusion_matrix(predicted, actual, n_classes: int) -> np.ndarray:
    """counts[i, j] = number of items with true class i predicted as j."""
    predicted = np.asarray(predicted, dtype=np.int64)
    actual = np.asarray(actual, dtype=np.int64)
    if predicted.shape != actual.shape:
        raise MetricError("prediction/label length mismatch")
    for name, arr in (("predicted", predicted), ("actual", actual)):
        if len(arr) and (arr.min() < 0 or arr.max() >= n_classes):
            raise MetricError(f"{name} labels outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (actual, predicted), 1)
    return counts


def data_efficiency(accuracy: float, training_sequences: int) -> float:
    """Accuracy per domain sequence consumed in (pre)training."""
    if training_sequences < 1:
        raise MetricError(f"sequence count must be >= 1, got {training_sequences}")
    return accuracy / training_sequences


def nested_train_subsets(train_indices, fractions, seed: int) -> dict[float, list[int]]:
    """Seeded nested subsets: one master shuffle, fraction f keeps the first
    floor(f*N) indices, so smaller fractions are subsets of larger ones."""
    indices = list(train_indices)
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise MetricError(f"fraction {f} outside (0, 1]")
    rng = np.random.default_rng(seed)
    shuffled = [indices[i] for i in rng.permutation(len(indices))]
    out = {}
    for f in fractions:
        n = math.floor(f * len(indices))
        if n == 0:
            raise MetricError(f"fraction {f} yields an empty training set")
        out[f] = shuffled[:n]
    return out


def restricted_sweep(dataset, fractions, train_fn, seed: int = 0) -> list[EvalReport]:
    """Train at each fraction of the training split and report per fraction.

    ``dataset`` provides ``train_indices``, ``test_indices``, ``label_ids()``
    and ``with_train_indices()`` (see bioseq.TaskDataset). ``train_fn(sub, s)``
    runs one training at derived seed ``s`` and returns an EvalReport. Each
    classification report gains a uniform-guess baseline and a majority-class
    baseline measured on the fixed test split.
    """
    subsets = nested_train_subsets(dataset.train_indices, fractions, seed)
    reports = []
    for i, f in enumerate(fractions):
        sub = dataset.with_train_indices(subsets[f])
        report = train_fn(sub, seed + 1000 * (i + 1))
        report.fraction = f
        report.train_size = len(subsets[f])
        if dataset.task_kind != "regression":
            labels = dataset.label_ids()
            train_labels = [labels[t] for t in subsets[f]]
            test_labels = [labels[t] for t in dataset.test_indices]
            majority = max(set(train_labels), key=lambda c: (train_labels.count(c), -c))
            n_classes = len(set(labels))
            report.baselines["uniform_guess"] = 1.0 / n_classes
            report.baselines["majority_class"] = test_labels.count(majority) / len(test_labels)
        else:
            report.baselines["uniform_guess"] = 0.0
        reports.append(report)
    return reports


def write_report_json(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_sweep_csv(reports: list[EvalReport], path) -> None:
    """One row per (fraction, method), ready for external plotting."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction", "method", "metric", "value", "train_size", "n_test"])
        for r in reports:
            writer.writerow([r.fraction, "trained", r.metric_kind, f"{r.value:.17g}",
                             r.train_size, r.n_test])
            for name, value in sorted(r.baselines.items()):
                writer.writerow([r.fraction, name, r.metric_kind, f"{value:.17g}",
                                 r.train_size, r.n_test])
