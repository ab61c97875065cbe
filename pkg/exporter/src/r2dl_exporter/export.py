"""Export checkpoint pieces into the portable bundle and frozen-model formats.

Two head modes exist. ``copy`` transplants an affine classifier that already
operates on mean-pooled input embeddings, weight for weight. ``distill`` fits
a small mean-pool MLP to reproduce the checkpoint classifier's logits on a
probe set, reporting the achieved fidelity rather than assuming it.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from r2dl.embeddings import EmbeddingMatrix, Vocabulary, load_bundle, save_bundle
from r2dl.frozen_model import (
    FrozenClassifier,
    MeanPoolMLP,
    forward,
    load_frozen_model,
    save_frozen_model,
)
from r2dl.training import make_batch

from .checkpoint import Checkpoint, CheckpointError


@dataclass
class ExportSpec:
    checkpoint: str
    out: str
    layer: str = "auto"
    head: str = "auto"
    distill: bool = False
    distill_hidden: int = 32
    distill_steps: int = 800
    distill_lr: float = 0.01
    seed: int = 0
    extra_meta: dict = field(default_factory=dict)


def _validated(loader, path):
    """Run a primary-format loader and fail on any warning it emits."""
    with warnings.catch_warnings(record=True) as captured:
        warnings.simplefilter("always")
        result = loader(path)
    if captured:
        raise CheckpointError(
            f"exported artifact at {path} loads with warnings: "
            f"{[str(w.message) for w in captured]}"
        )
    return result


def export_embeddings(spec: ExportSpec) -> Path:
    """Write the checkpoint's token-embedding table as a bundle directory."""
    ckpt = Checkpoint(spec.checkpoint)
    name, table = ckpt.embedding_tensor(spec.layer)
    vocab = Vocabulary(tuple(ckpt.vocab_tokens))
    out = Path(spec.out) / "bundle"
    meta = {
        "checkpoint": str(Path(spec.checkpoint).resolve()),
        "layer": name,
        "source_model": ckpt.config.get("model_type", "unknown"),
        **spec.extra_meta,
    }
    save_bundle(vocab, EmbeddingMatrix(table), out, meta=meta)
    loaded_vocab, loaded = _validated(load_bundle, out)
    assert len(loaded_vocab) == table.shape[0]
    return out


def _fidelity(student_logits: np.ndarray, teacher_logits: np.ndarray, mode: str) -> dict:
    diff = student_logits - teacher_logits
    return {
        "mode": mode,
        "n_probes": int(len(teacher_logits)),
        "agreement": float(
            (np.argmax(student_logits, 1) == np.argmax(teacher_logits, 1)).mean()
        ),
        "max_abs_logit_diff": float(np.abs(diff).max()),
        "mse": float((diff ** 2).mean()),
    }


def _pool_probes(table: np.ndarray, probes) -> np.ndarray:
    pooled = np.zeros((len(probes), table.shape[1]))
    for i, ids in enumerate(probes):
        if len(ids) == 0:
            raise CheckpointError(f"probe {i} is empty")
        pooled[i] = table[np.asarray(ids, dtype=np.int64)].mean(axis=0)
    return pooled


def teacher_logits_from_transformers(checkpoint_path, probes) -> np.ndarray:
    """Run the full checkpoint classifier on probe token ids (requires the
    transformers package; used as the distillation teacher)."""
    import torch
    from transformers import AutoModelForSequenceClassification

    model = AutoModelForSequenceClassification.from_pretrained(checkpoint_path)
    model.eval()
    rows = []
    with torch.no_grad():
        for ids in probes:
            batch = torch.tensor([list(ids)], dtype=torch.long)
            out = model(input_ids=batch, attention_mask=torch.ones_like(batch))
            rows.append(out.logits[0].double().numpy())
    return np.array(rows)


def export_frozen_head(spec: ExportSpec, probes=None,
                       teacher_logits: np.ndarray | None = None) -> tuple[Path, dict]:
    """Write the classification head as a frozen-model directory.

    Copy mode re-emits the affine head over mean-pooled embeddings verbatim
    and verifies it on the probes. Distill mode fits a one-hidden-layer
    mean-pool MLP to the teacher's probe logits (supplied directly or computed
    from the checkpoint via transformers) and reports the fit.
    """
    ckpt = Checkpoint(spec.checkpoint)
    _, table = ckpt.embedding_tensor(spec.layer)
    dim = table.shape[1]
    out = Path(spec.out) / "model"

    if not spec.distill:
        _, weight, bias = ckpt.head_tensors(spec.head)
        if weight.shape[1] != dim:
            raise CheckpointError(
                f"head expects {weight.shape[1]} inputs but embeddings are {dim}-dim; "
                "not a pool+affine head, re-run with distillation"
            )
        model = FrozenClassifier(
            dim, weight.shape[0],
            {"kind": "mean_pool_mlp", "hidden": [], "activation": "tanh"},
            MeanPoolMLP([], [], "tanh"), weight.T.copy(), bias.copy(),
        )
        save_frozen_model(model, out)
        loaded = _validated(load_frozen_model, out)
        report = {"mode": "copy", "n_probes": 0}
        if probes:
            pooled = _pool_probes(table, probes)
            student = pooled @ loaded.head_w + loaded.head_b
            reference = pooled @ weight.T + bias
            report = _fidelity(student, reference, "copy")
        (Path(spec.out) / "fidelity.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return out, report

    if probes is None or len(probes) == 0:
        raise CheckpointError("distillation needs a probe set")
    if teacher_logits is None:
        teacher_logits = teacher_logits_from_transformers(spec.checkpoint, probes)
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    n_classes = teacher_logits.shape[1]

    # flatten probe positions (contiguous per probe) and train the student
    # under its real semantics: per-position tanh features, then mean pooling
    x = table[np.concatenate([list(ids) for ids in probes])]
    counts = np.array([len(ids) for ids in probes], dtype=np.float64)
    starts = np.concatenate([[0], np.cumsum(counts[:-1])]).astype(np.intp)
    seg = np.concatenate([np.full(len(ids), i) for i, ids in enumerate(probes)])
    n = len(probes)

    rng = np.random.default_rng(spec.seed)
    hidden = spec.distill_hidden
    w1 = rng.standard_normal((dim, hidden)) / np.sqrt(dim)
    b1 = np.zeros(hidden)
    w2 = rng.standard_normal((hidden, n_classes)) / np.sqrt(hidden)
    b2 = np.zeros(n_classes)
    params = [w1, b1, w2, b2]
    moments = [np.zeros_like(p) for p in params]
    second = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for step in range(1, spec.distill_steps + 1):
        a = np.tanh(x @ w1 + b1)
        feats = np.add.reduceat(a, starts, axis=0) / counts[:, None]
        logits = feats @ w2 + b2
        d_logits = 2.0 * (logits - teacher_logits) / n
        d_a = (d_logits @ w2.T)[seg] / counts[seg][:, None]
        d_z = d_a * (1.0 - a ** 2)
        grads = [x.T @ d_z, d_z.sum(axis=0), feats.T @ d_logits, d_logits.sum(axis=0)]
        for p, g, m, v in zip(params, grads, moments, second):
            m *= beta1
            m += (1 - beta1) * g
            v *= beta2
            v += (1 - beta2) * g ** 2
            m_hat = m / (1 - beta1 ** step)
            v_hat = v / (1 - beta2 ** step)
            p -= spec.distill_lr * m_hat / (np.sqrt(v_hat) + eps)

    model = FrozenClassifier(
        dim, n_classes,
        {"kind": "mean_pool_mlp", "hidden": [hidden], "activation": "tanh"},
        MeanPoolMLP([w1], [b1], "tanh"), w2, b2,
    )
    save_frozen_model(model, out)
    loaded = _validated(load_frozen_model, out)
    student = np.zeros_like(teacher_logits)
    for i, ids in enumerate(probes):
        batch = make_batch([tuple(ids)], table)
        student[i] = forward(loaded, batch).logits[0]
    report = _fidelity(student, teacher_logits, "distill")
    (Path(spec.out) / "fidelity.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out, report
