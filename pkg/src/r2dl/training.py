"""The reprogramming training loop.

Only the coefficient map is trainable. Each outer iteration re-sparsifies the
map (on schedule), embeds a minibatch through it, pushes the batch through the
frozen classifier, and walks the cross-entropy gradient back to the
coefficients: dLoss/dtheta_t is the sum of input-embedding gradients at
positions holding token t, multiplied by the dictionary transpose.

Between reprojections, updates touch only the current support so the sparsity
bound stays meaningful; the full dense gradient is applied exactly on the
step feeding a reprojection, which is where the support may change.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingMatrix
from .frozen_model import EmbeddedBatch, FrozenClassifier, forward, input_gradient
from .labelmap import LabelMapping, bin_label, expected_value, invert, map_label
from .sparse_map import (
    CoefficientMap,
    SparseCodeConfig,
    reconstruction_error,
    reproject,
    sparse_code_all,
)
from .evaluation import UndefinedCorrelationError, spearman_rho


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    outer_iters: int = 100
    inner_iters: int = 1
    learning_rate: float = 0.05
    lr_schedule: str = "constant"  # or "inv_sqrt": lr / sqrt(t)
    batch_size: int = 32
    k: int = 8
    epsilon: float = 0.0
    seed: int = 0
    reproject_every: int = 1
    task_kind: str = "sequence_classification"

    def __post_init__(self):
        if self.outer_iters < 1 or self.inner_iters < 1:
            raise TrainingError("iteration counts must be >= 1")
        if self.learning_rate < 0:
            raise TrainingError("learning rate must be >= 0")
        if self.batch_size < 1:
            raise TrainingError("batch size must be >= 1")
        if self.reproject_every < 1:
            raise TrainingError("reproject_every must be >= 1")
        if self.lr_schedule not in ("constant", "inv_sqrt"):
            raise TrainingError(f"unknown lr schedule {self.lr_schedule!r}")

    def step_size(self, t: int) -> float:
        if self.lr_schedule == "inv_sqrt":
            return self.learning_rate / math.sqrt(t)
        return self.learning_rate

    def sparse_config(self) -> SparseCodeConfig:
        return SparseCodeConfig(k=self.k, epsilon=self.epsilon,
                                max_inner_iters=self.inner_iters)


@dataclass
class HistoryRecord:
    iteration: int
    loss: float
    metric: float
    recon_error: float
    nnz: int
    wall_secs: float


@dataclass
class TrainHistory:
    records: list[HistoryRecord] = field(default_factory=list)

    def to_csv(self, path) -> None:
        """Deterministic per-iteration log. Wall time stays out of the file so
        identical runs produce identical bytes; totals live in the run manifest."""
        lines = ["iter,loss,metric,recon_error,nnz\n"]
        for r in self.records:
            lines.append(
                f"{r.iteration},{r.loss:.17g},{r.metric:.17g},{r.recon_error:.17g},{r.nnz}\n"
            )
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("".join(lines))


def cross_entropy_loss(logits, labels, mask=None):
    """Mean negative log softmax probability of the labels, plus its gradient.

    Sequence-level: logits (N, n), labels (N,). Token-level: logits (B, L, n)
    with a (B, L) mask selecting real positions. The gradient has the shape of
    the logits and equals (softmax - onehot) / count on counted items.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise TrainingError(f"label outside [0, {n_classes})")

    flat_logits = logits.reshape(-1, n_classes)
    flat_labels = labels.reshape(-1)
    if mask is None:
        keep = np.ones(len(flat_labels), dtype=bool)
    else:
        keep = np.asarray(mask, dtype=bool).reshape(-1)
    count = int(keep.sum())
    if count == 0:
        raise TrainingError("no unmasked items to score")

    shifted = flat_logits - flat_logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    loss = -log_probs[keep, flat_labels[keep]].mean()

    grad = np.exp(log_probs)
    grad[np.arange(len(flat_labels)), flat_labels] -= 1.0
    grad[~keep] = 0.0
    grad /= count
    return float(loss), grad.reshape(logits.shape)


def make_batch(sequences, row_embeddings: np.ndarray,
               pad_id: int | None = None) -> EmbeddedBatch:
    """Pad token-id sequences to a common length and embed them via the given
    per-token embedding rows. Length padding and any in-sequence pad tokens
    carry zero vectors and are masked out."""
    if not sequences:
        raise TrainingError("empty batch")
    length = max(len(s) for s in sequences)
    b = len(sequences)
    m = row_embeddings.shape[1]
    batch = np.zeros((b, length, m))
    mask = np.zeros((b, length), dtype=bool)
    token_ids = np.full((b, length), -1, dtype=np.int64)
    for i, seq in enumerate(sequences):
        if len(seq) == 0:
            raise TrainingError("cannot embed an empty sequence")
        ids = np.asarray(seq, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= row_embeddings.shape[0]):
            raise TrainingError(f"token id outside vocabulary in sequence {i}")
        real = ids != pad_id if pad_id is not None else np.ones(len(seq), dtype=bool)
        embedded = row_embeddings[ids]
        embedded[~real] = 0.0
        batch[i, : len(seq)] = embedded
        mask[i, : len(seq)] = real
        token_ids[i, : len(seq)] = ids
    try:
        return EmbeddedBatch(batch=batch, mask=mask, token_ids=token_ids)
    except ValueError as exc:
        raise TrainingError(str(exc)) from None


class TaskContext:
    """Loss-side plumbing for one dataset: per-item source-class labels (or
    regression bins) and metric evaluation."""

    def __init__(self, dataset, h: LabelMapping, model: FrozenClassifier):
        self.dataset = dataset
        self.h = h
        self.kind = dataset.task_kind
        if self.kind == "regression":
            if h.kind != "regression":
                raise TrainingError("regression task needs a regression mapping")
            if h.n_classes != model.n_classes:
                raise TrainingError(
                    f"mapping has {h.n_classes} bins, model has {model.n_classes} classes"
                )
            self.targets = [label for _, label in dataset.items]
            self.source_labels = [bin_label(h, y) for y in self.targets]
        else:
            if h.kind != "classification":
                raise TrainingError("classification task needs a classification mapping")
            if h.n_classes != model.n_classes:
                raise TrainingError(
                    f"mapping has {h.n_classes} classes, model has {model.n_classes}"
                )
            names = set(dataset.label_names)
            mapped = {t for _, t in h.class_pairs}
            if not names <= mapped:
                raise TrainingError(f"target labels {sorted(names - mapped)} missing from mapping")
            to_source = {i: invert(h, n) for i, n in enumerate(dataset.label_names)}
            if self.kind == "sequence_classification":
                self.source_labels = [to_source[label] for _, label in dataset.items]
            else:
                self.source_labels = [tuple(to_source[c] for c in label)
                                      for _, label in dataset.items]

    def batch_labels(self, indices, batch: EmbeddedBatch):
        if self.kind == "token_classification":
            labels = np.zeros(batch.mask.shape, dtype=np.int64)
            for row, idx in enumerate(indices):
                item = self.source_labels[idx]
                labels[row, : len(item)] = item
            return labels
        return np.array([self.source_labels[i] for i in indices], dtype=np.int64)

    def loss_and_grad(self, indices, batch: EmbeddedBatch, out):
        labels = self.batch_labels(indices, batch)
        if self.kind == "token_classification":
            return cross_entropy_loss(out.token_logits, labels, mask=batch.mask)
        return cross_entropy_loss(out.logits, labels)

    def metric(self, indices, outs) -> float:
        if self.kind == "sequence_classification":
            hits = sum(
                int(np.argmax(logits) == self.source_labels[i])
                for i, logits in zip(indices, outs)
            )
            return hits / len(indices)
        if self.kind == "token_classification":
            hits = total = 0
            for i, token_logits in zip(indices, outs):
                pred = np.argmax(token_logits, axis=1)
                truth = np.asarray(self.source_labels[i])
                hits += int((pred[: len(truth)] == truth).sum())
                total += len(truth)
            return hits / total
        preds = [expected_value(self.h, softmax(logits)) for logits in outs]
        truth = [self.targets[i] for i in indices]
        try:
            return spearman_rho(truth, preds)
        except UndefinedCorrelationError:
            return float("nan")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def _length_buckets(indices, sequences, batch_size):
    ordered = sorted(indices, key=lambda i: (len(sequences[i]), i))
    return [ordered[i : i + batch_size] for i in range(0, len(ordered), batch_size)]


def batch_gradient(theta: CoefficientMap, dictionary: EmbeddingMatrix,
                   model: FrozenClassifier, task: TaskContext, indices):
    """Loss over the given items and the dense gradient dLoss/dTheta."""
    rows = theta.to_dense() @ dictionary.data
    batch = make_batch([task.dataset.items[i][0] for i in indices], rows,
                       pad_id=getattr(task.dataset, "pad_id", None))
    out = forward(model, batch)
    loss, grad_logits = task.loss_and_grad(indices, batch, out)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss} (diverged?)")
    d_input = input_gradient(model, batch, grad_logits)
    per_token = np.zeros((theta.target_rows, dictionary.dim))
    keep = batch.mask
    np.add.at(per_token, batch.token_ids[keep], d_input[keep])
    dense_grad = per_token @ dictionary.data.T
    return loss, dense_grad


def evaluate(theta: CoefficientMap, dictionary: EmbeddingMatrix, model: FrozenClassifier,
             task: TaskContext, indices, batch_size: int = 64):
    """Mean loss and task metric over the given item indices."""
    rows = theta.to_dense() @ dictionary.data
    total_loss = 0.0
    outs = []
    flat_indices = []
    pad_id = getattr(task.dataset, "pad_id", None)
    for chunk in _length_buckets(indices, task.dataset.sequences(), batch_size):
        batch = make_batch([task.dataset.items[i][0] for i in chunk], rows, pad_id=pad_id)
        out = forward(model, batch)
        loss, _ = task.loss_and_grad(chunk, batch, out)
        total_loss += loss * len(chunk)
        for row in range(len(chunk)):
            if task.kind == "token_classification":
                outs.append(out.token_logits[row])
            else:
                outs.append(out.logits[row])
        flat_indices.extend(chunk)
    return total_loss / len(flat_indices), task.metric(flat_indices, outs)


def train_r2dl(dataset, dictionary: EmbeddingMatrix, target_init: EmbeddingMatrix,
               model: FrozenClassifier, h: LabelMapping, cfg: TrainConfig):
    """Alternate sparse reprojection with gradient steps on the task loss.

    Returns the trained k-sparse coefficient map and the per-iteration
    history. The frozen model is verified untouched by content hash.
    """
    if model.dim != dictionary.dim:
        raise TrainingError(f"model dim {model.dim} != dictionary dim {dictionary.dim}")
    if dataset.vocab_size != target_init.rows:
        raise TrainingError(
            f"dataset vocabulary {dataset.vocab_size} != target rows {target_init.rows}"
        )
    if dataset.task_kind != cfg.task_kind:
        raise TrainingError(
            f"dataset kind {dataset.task_kind} != configured {cfg.task_kind}"
        )
    if not dataset.train_indices:
        raise TrainingError("dataset has an empty training split")

    task = TaskContext(dataset, h, model)
    hash_before = model.param_hash()
    sparse_cfg = cfg.sparse_config()
    theta = sparse_code_all(target_init, dictionary, sparse_cfg)
    history = TrainHistory()

    rng = np.random.default_rng(cfg.seed)
    sequences = dataset.sequences()
    train = list(dataset.train_indices)
    queue: list[list[int]] = []

    def next_batch():
        nonlocal queue
        if not queue:
            perm = rng.permutation(len(train))
            shuffled = [train[i] for i in perm]
            chunks = _length_buckets(shuffled, sequences, cfg.batch_size)
            # bucketing sorts globally; shuffle which bucket comes next
            order = rng.permutation(len(chunks))
            queue = [chunks[i] for i in order]
        return queue.pop(0)

    for t1 in range(1, cfg.outer_iters + 1):
        started = time.perf_counter()
        indices = next_batch()
        loss, dense_grad = batch_gradient(theta, dictionary, model, task, indices)
        alpha = cfg.step_size(t1)
        # the update feeding a reprojection applies the full dense gradient so
        # the support can move; between reprojections updates stay on-support,
        # keeping the sparsity bound meaningful throughout
        reproject_now = t1 % cfg.reproject_every == 0
        if reproject_now:
            dense = theta.to_dense() - alpha * dense_grad
            theta = CoefficientMap.from_dense(dense, theta.source_cols, theta.dictionary_hash)
            theta = reproject(theta, dictionary, sparse_cfg)
        else:
            new_rows = [
                tuple((j, c - alpha * dense_grad[t, j]) for j, c in row
                      if c - alpha * dense_grad[t, j] != 0.0)
                for t, row in enumerate(theta.rows)
            ]
            theta = CoefficientMap(theta.target_rows, theta.source_cols, new_rows,
                                   theta.k_max, theta.dictionary_hash)
        assert max(theta.row_nnz(), default=0) <= cfg.k
        train_loss, train_metric = evaluate(theta, dictionary, model, task, train)
        history.records.append(HistoryRecord(
            iteration=t1,
            loss=train_loss,
            metric=train_metric,
            recon_error=reconstruction_error(theta, dictionary, target_init),
            nnz=theta.nnz(),
            wall_secs=time.perf_counter() - started,
        ))

    if model.param_hash() != hash_before:
        raise TrainingError("frozen model parameters changed during training")
    return theta, history


def predict_logits(theta: CoefficientMap, dictionary: EmbeddingMatrix,
                   model: FrozenClassifier, dataset, indices, batch_size: int = 64):
    """Pooled logits (and token logits for token tasks) for the given items,
    in index order."""
    rows = theta.to_dense() @ dictionary.data
    pooled = {}
    token = {}
    pad_id = getattr(dataset, "pad_id", None)
    for chunk in _length_buckets(indices, dataset.sequences(), batch_size):
        batch = make_batch([dataset.items[i][0] for i in chunk], rows, pad_id=pad_id)
        out = forward(model, batch)
        for row, idx in enumerate(chunk):
            pooled[idx] = out.logits[row]
            token[idx] = out.token_logits[row][: len(dataset.items[idx][0])]
    return [pooled[i] for i in indices], [token[i] for i in indices]


def predict(theta: CoefficientMap, dictionary: EmbeddingMatrix, model: FrozenClassifier,
            h: LabelMapping, sequence, pad_id: int | None = None):
    """Label (classification), per-position labels (token tasks), or real
    value (regression) for one token-id sequence."""
    rows = theta.to_dense() @ dictionary.data
    batch = make_batch([sequence], rows, pad_id=pad_id)
    out = forward(model, batch)
    if h.kind == "regression":
        return expected_value(h, softmax(out.logits[0]))
    return map_label(h, int(np.argmax(out.logits[0])))


def predict_token_labels(theta, dictionary, model, h: LabelMapping, sequence,
                         pad_id: int | None = None):
    """Per-position target labels for a token-level task."""
    rows = theta.to_dense() @ dictionary.data
    batch = make_batch([sequence], rows, pad_id=pad_id)
    out = forward(model, batch)
    preds = np.argmax(out.token_logits[0][: len(sequence)], axis=1)
    return [map_label(h, int(p)) for p in preds]
