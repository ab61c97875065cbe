"""Output label mapping: class bijection for classification, learned
thresholds for regression.

Classification pairs each source-model class id with one target label.
Regression partitions the real target range into as many bins as the source
model has classes; thresholds sit at the training-data quantiles and each bin
carries the mean of the training targets that fall in it. Regression
predictions can then be read out softly as the probability-weighted bin
representative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class LabelMappingError(ValueError):
    pass


class UnknownLabelError(KeyError):
    pass


@dataclass(frozen=True)
class LabelMapping:
    kind: str  # "classification" | "regression"
    class_pairs: tuple[tuple[int, str], ...] = ()
    thresholds: tuple[float, ...] = ()
    representatives: tuple[float, ...] = ()
    _by_source: dict = field(repr=False, compare=False, default_factory=dict)
    _by_target: dict = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        if self.kind == "classification":
            sources = [s for s, _ in self.class_pairs]
            targets = [t for _, t in self.class_pairs]
            if len(set(sources)) != len(sources) or len(set(targets)) != len(targets):
                raise LabelMappingError("class pairs must form a bijection")
            if sorted(sources) != list(range(len(sources))):
                raise LabelMappingError("source class ids must be contiguous from 0")
            object.__setattr__(self, "_by_source", dict(self.class_pairs))
            object.__setattr__(self, "_by_target", {t: s for s, t in self.class_pairs})
        elif self.kind == "regression":
            ts = np.asarray(self.thresholds)
            if len(self.representatives) != len(self.thresholds) + 1:
                raise LabelMappingError("need one representative per bin")
            if len(ts) and not np.all(np.diff(ts) > 0):
                raise LabelMappingError("thresholds must be strictly ascending")
        else:
            raise LabelMappingError(f"unknown mapping kind {self.kind!r}")

    @property
    def n_classes(self) -> int:
        if self.kind == "classification":
            return len(self.class_pairs)
        return len(self.representatives)


def map_label(h: LabelMapping, source_class: int) -> str:
    if source_class not in h._by_source:
        raise UnknownLabelError(f"source class {source_class} not in mapping")
    return h._by_source[source_class]


def invert(h: LabelMapping, target_label: str) -> int:
    if target_label not in h._by_target:
        raise UnknownLabelError(f"target label {target_label!r} not in mapping")
    return h._by_target[target_label]


def fit_thresholds(values, n_bins: int) -> LabelMapping:
    """Regression mapping with thresholds at the (i/n)-quantiles of the
    training targets and per-bin mean representatives.

    Quantile placement balances bin mass, which keeps cross-entropy training
    on the binned labels stable.
    """
    values = np.asarray(values, dtype=np.float64)
    if n_bins < 2:
        raise LabelMappingError(f"need at least 2 bins, got {n_bins}")
    if len(np.unique(values)) < n_bins:
        raise LabelMappingError(
            f"{len(np.unique(values))} distinct values cannot fill {n_bins} bins"
        )
    thresholds = np.quantile(values, [i / n_bins for i in range(1, n_bins)])
    if not np.all(np.diff(thresholds) > 0):
        raise LabelMappingError(
            "degenerate quantile thresholds (repeated values); reduce n_bins"
        )
    # same convention as bin_label: a value equal to a threshold goes up
    bins = np.searchsorted(thresholds, values, side="right")
    reps = []
    for i in range(n_bins):
        members = values[bins == i]
        if len(members) == 0:
            raise LabelMappingError(f"bin {i} is empty on the training data")
        reps.append(float(members.mean()))
    return LabelMapping(
        kind="regression",
        thresholds=tuple(float(t) for t in thresholds),
        representatives=tuple(reps),
    )


def bin_label(h: LabelMapping, y: float) -> int:
    """Bin index of a regression value: the first threshold strictly above y
    ends the bin; a value equal to a threshold belongs to the higher bin."""
    if h.kind != "regression":
        raise LabelMappingError("bin_label requires a regression mapping")
    for i, t in enumerate(h.thresholds):
        if t > y:
            return i
    return len(h.thresholds)


def expected_value(h: LabelMapping, probs) -> float:
    """Probability-weighted bin representative."""
    if h.kind != "regression":
        raise LabelMappingError("expected_value requires a regression mapping")
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (h.n_classes,):
        raise LabelMappingError(f"expected {h.n_classes} probabilities, got shape {p.shape}")
    if abs(p.sum() - 1.0) > 1e-6:
        raise LabelMappingError(f"probabilities sum to {p.sum()}, not 1")
    return float(p @ np.asarray(h.representatives))


def save_mapping(h: LabelMapping, path) -> None:
    if h.kind == "classification":
        doc = {"kind": h.kind, "pairs": [[s, t] for s, t in h.class_pairs]}
    else:
        doc = {
            "kind": h.kind,
            "thresholds": list(h.thresholds),
            "representatives": list(h.representatives),
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_mapping(path) -> LabelMapping:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc["kind"] == "classification":
        return LabelMapping(
            kind="classification",
            class_pairs=tuple((int(s), str(t)) for s, t in doc["pairs"]),
        )
    return LabelMapping(
        kind="regression",
        thresholds=tuple(float(t) for t in doc["thresholds"]),
        representatives=tuple(float(r) for r in doc["representatives"]),
    )
