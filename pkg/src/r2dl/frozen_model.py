"""Frozen classifier: forward pass over embedded token sequences and exact
gradients with respect to the input embeddings.

Parameters are immutable after load; the content hash over all parameter
tensors is the guarantee that reprogramming never touches the model. Two
encoder kinds are supported:

* ``mean_pool_mlp`` — a positionwise MLP (0-3 hidden layers, tanh or relu).
* ``attention_mlp`` — sinusoidal position encoding, one softmax self-attention
  block with residual connection, then the positionwise MLP.

Sequence-level logits are the affine head applied to the mean over unmasked
positions of the encoder output; token-level logits apply the head per
position. Gradients are hand-written reverse mode (no autodiff), verified by
finite differences in the test suite.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import matrix_from_bytes, EmbeddingMatrix


class ModelFormatError(ValueError):
    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


class ShapeMismatchError(ModelFormatError):
    pass


class UnknownEncoderError(ModelFormatError):
    pass


def _activation(name: str):
    if name == "tanh":
        return np.tanh, lambda z: 1.0 - np.tanh(z) ** 2
    if name == "relu":
        return lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(np.float64)
    raise ModelFormatError(f"unknown activation {name!r}", field="activation")


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Standard sin/cos position encoding, shape (length, dim)."""
    pe = np.zeros((length, dim))
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(0, dim, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, idx / dim)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : dim // 2])
    return pe


@dataclass
class EmbeddedBatch:
    """Embedded sequences, padded to a common length.

    ``batch`` is (B, L, m); ``mask`` is (B, L) with True marking real tokens;
    masked positions must carry zero vectors. ``token_ids`` routes gradients
    back to coefficient rows and is -1 at padding.
    """

    batch: np.ndarray
    mask: np.ndarray
    token_ids: np.ndarray | None = None

    def __post_init__(self):
        self.batch = np.asarray(self.batch, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.batch.ndim != 3 or self.mask.shape != self.batch.shape[:2]:
            raise ValueError(f"batch {self.batch.shape} / mask {self.mask.shape} shape mismatch")
        if not self.mask.any(axis=1).all():
            raise ValueError("every sequence needs at least one unmasked position")
        if np.any(self.batch[~self.mask] != 0.0):
            raise ValueError("masked positions must carry zero vectors")


class MeanPoolMLP:
    """Positionwise MLP encoder. ``weights[i]``: (in, out); encoder output is
    the last hidden activation (the input itself when there are no hidden
    layers)."""

    kind = "mean_pool_mlp"

    def __init__(self, weights, biases, activation: str):
        self.weights = weights
        self.biases = biases
        self.activation = activation
        self.act, self.act_grad = _activation(activation) if weights else (None, None)

    def forward(self, x: np.ndarray):
        """x: (B, L, in) -> encoder output (B, L, out), plus cache for backward."""
        pre_acts = []
        a = x
        for w, b in zip(self.weights, self.biases):
            z = a @ w + b
            pre_acts.append(z)
            a = self.act(z)
        return a, pre_acts

    def backward(self, d_out: np.ndarray, pre_acts) -> np.ndarray:
        d = d_out
        for (w, _), z in zip(reversed(list(zip(self.weights, self.biases))), reversed(pre_acts)):
            d = (d * self.act_grad(z)) @ w.T
        return d

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"mlp.w{i}"] = w
            out[f"mlp.b{i}"] = b
        return out


class AttentionBlock:
    """Single softmax self-attention block with residual connection, applied
    after adding sinusoidal position encodings. Padding positions are masked
    out of the attention keys."""

    kind = "attention_mlp"

    def __init__(self, wq, bq, wk, bk, wv, bv, wo, bo, heads: int, head_dim: int):
        self.wq, self.bq = wq, bq
        self.wk, self.bk = wk, bk
        self.wv, self.bv = wv, bv
        self.wo, self.bo = wo, bo
        self.heads = heads
        self.head_dim = head_dim

    def _split(self, t: np.ndarray) -> np.ndarray:
        b, l, _ = t.shape
        return t.reshape(b, l, self.heads, self.head_dim)

    def forward(self, x: np.ndarray, mask: np.ndarray):
        b, l, m = x.shape
        z = x + sinusoidal_positions(l, m)[None, :, :]
        q = self._split(z @ self.wq + self.bq)
        k = self._split(z @ self.wk + self.bk)
        v = self._split(z @ self.wv + self.bv)
        scale = 1.0 / math.sqrt(self.head_dim)
        scores = np.einsum("bihd,bjhd->bhij", q, k) * scale
        scores = np.where(mask[:, None, None, :], scores, -1e30)
        scores -= scores.max(axis=-1, keepdims=True)
        expd = np.exp(scores)
        attn = expd / expd.sum(axis=-1, keepdims=True)
        ctx = np.einsum("bhij,bjhd->bihd", attn, v)
        out = z + ctx.reshape(b, l, self.heads * self.head_dim) @ self.wo + self.bo
        cache = (z, q, k, v, attn, ctx, scale)
        return out, cache

    def backward(self, d_out: np.ndarray, cache) -> np.ndarray:
        z, q, k, v, attn, ctx, scale = cache
        b, l, m = z.shape
        d_cat = d_out @ self.wo.T
        d_ctx = d_cat.reshape(b, l, self.heads, self.head_dim)
        d_attn = np.einsum("bihd,bjhd->bhij", d_ctx, v)
        d_v = np.einsum("bhij,bihd->bjhd", attn, d_ctx)
        # softmax backward; masked columns have attn == 0, so they stay zero
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
        d_q = np.einsum("bhij,bjhd->bihd", d_scores, k) * scale
        d_k = np.einsum("bhij,bihd->bjhd", d_scores, q) * scale
        flat = lambda t: t.reshape(b, l, self.heads * self.head_dim)
        d_z = d_out + flat(d_q) @ self.wq.T + flat(d_k) @ self.wk.T + flat(d_v) @ self.wv.T
        return d_z  # position encoding is an additive constant

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "attn.wq": self.wq, "attn.bq": self.bq,
            "attn.wk": self.wk, "attn.bk": self.bk,
            "attn.wv": self.wv, "attn.bv": self.bv,
            "attn.wo": self.wo, "attn.bo": self.bo,
        }


class FrozenClassifier:
    """Immutable encoder + affine head mapping embedded sequences to logits."""

    def __init__(self, dim, n_classes, encoder_cfg, mlp: MeanPoolMLP,
                 head_w, head_b, attention: AttentionBlock | None = None):
        self.dim = dim
        self.n_classes = n_classes
        self.encoder_cfg = dict(encoder_cfg)
        self.mlp = mlp
        self.attention = attention
        self.head_w = head_w
        self.head_b = head_b
        for t in self.tensors().values():
            t.flags.writeable = False

    @property
    def encoder_kind(self) -> str:
        return "attention_mlp" if self.attention is not None else "mean_pool_mlp"

    @property
    def hidden_dim(self) -> int:
        return self.head_w.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        if self.attention is not None:
            out.update(self.attention.tensors())
        out.update(self.mlp.tensors())
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def param_hash(self) -> str:
        """Content hash over every parameter tensor, recomputed from live values."""
        digest = hashlib.sha256()
        tensors = self.tensors()
        for name in sorted(tensors):
            t = tensors[name]
            digest.update(name.encode())
            digest.update(str(t.shape).encode())
            digest.update(np.ascontiguousarray(t, dtype=np.float64).tobytes())
        return digest.hexdigest()

    def encode(self, batch: EmbeddedBatch):
        """Encoder output (B, L, h) plus the cache needed for backward."""
        if batch.batch.shape[2] != self.dim:
            raise ShapeMismatchError(
                f"batch dim {batch.batch.shape[2]} != model dim {self.dim}", field="dim"
            )
        attn_cache = None
        x = batch.batch
        if self.attention is not None:
            x, attn_cache = self.attention.forward(x, batch.mask)
        hidden, mlp_cache = self.mlp.forward(x)
        return hidden, (attn_cache, mlp_cache)

    def decode_gradient(self, d_hidden: np.ndarray, cache, mask: np.ndarray) -> np.ndarray:
        attn_cache, mlp_cache = cache
        d = self.mlp.backward(d_hidden, mlp_cache)
        if self.attention is not None:
            d = self.attention.backward(d, attn_cache)
        d = d * mask[:, :, None]
        return d

    @classmethod
    def build(cls, dim, n_classes, hidden, activation="tanh", seed=0,
              attention: tuple[int, int] | None = None, scale=0.5):
        """Randomly initialized model, for fixtures and tests."""
        rng = np.random.default_rng(seed)
        widths = [dim] + list(hidden)
        weights = [rng.standard_normal((widths[i], widths[i + 1])) * scale / math.sqrt(widths[i])
                   for i in range(len(hidden))]
        biases = [rng.standard_normal(widths[i + 1]) * 0.1 for i in range(len(hidden))]
        mlp = MeanPoolMLP(weights, biases, activation)
        enc_out = widths[-1]
        head_w = rng.standard_normal((enc_out, n_classes)) * scale / math.sqrt(enc_out)
        head_b = rng.standard_normal(n_classes) * 0.1
        attn = None
        cfg = {"kind": "mean_pool_mlp", "hidden": list(hidden), "activation": activation}
        if attention is not None:
            heads, head_dim = attention
            hd = heads * head_dim
            mk = lambda a, b: rng.standard_normal((a, b)) * scale / math.sqrt(a)
            attn = AttentionBlock(
                mk(dim, hd), rng.standard_normal(hd) * 0.1,
                mk(dim, hd), rng.standard_normal(hd) * 0.1,
                mk(dim, hd), rng.standard_normal(hd) * 0.1,
                mk(hd, dim), rng.standard_normal(dim) * 0.1,
                heads, head_dim,
            )
            cfg = {"kind": "attention_mlp", "heads": heads, "head_dim": head_dim,
                   "hidden": list(hidden), "activation": activation}
        return cls(dim, n_classes, cfg, mlp, head_w, head_b, attn)


@dataclass
class ForwardResult:
    logits: np.ndarray        # (B, n_classes), pooled over unmasked positions
    token_logits: np.ndarray  # (B, L, n_classes), zero at masked positions


def forward(model: FrozenClassifier, batch: EmbeddedBatch) -> ForwardResult:
    """Sequence-level and per-position logits for an embedded batch."""
    hidden, _ = model.encode(batch)
    mask = batch.mask
    counts = mask.sum(axis=1, keepdims=True).astype(np.float64)
    pooled = (hidden * mask[:, :, None]).sum(axis=1) / counts
    logits = pooled @ model.head_w + model.head_b
    token_logits = (hidden @ model.head_w + model.head_b) * mask[:, :, None]
    return ForwardResult(logits=logits, token_logits=token_logits)


def input_gradient(model: FrozenClassifier, batch: EmbeddedBatch,
                   loss_grad: np.ndarray) -> np.ndarray:
    """Exact gradient of the loss w.r.t. the input embeddings.

    ``loss_grad`` is dLoss/dlogits: shape (B, n) for the pooled sequence path
    or (B, L, n) for the per-position path. Masked positions get zero gradient
    and the model parameters are untouched.
    """
    hidden, cache = model.encode(batch)
    mask = batch.mask
    g = np.asarray(loss_grad, dtype=np.float64)
    if g.ndim == 2:
        if g.shape != (batch.batch.shape[0], model.n_classes):
            raise ShapeMismatchError(f"loss_grad shape {g.shape} unexpected", field="loss_grad")
        counts = mask.sum(axis=1).astype(np.float64)
        d_pooled = g @ model.head_w.T
        d_hidden = (d_pooled[:, None, :] / counts[:, None, None]) * mask[:, :, None]
    elif g.ndim == 3:
        if g.shape != hidden.shape[:2] + (model.n_classes,):
            raise ShapeMismatchError(f"loss_grad shape {g.shape} unexpected", field="loss_grad")
        d_hidden = (g @ model.head_w.T) * mask[:, :, None]
    else:
        raise ShapeMismatchError(f"loss_grad must be 2-D or 3-D, got {g.ndim}-D", field="loss_grad")
    return model.decode_gradient(d_hidden, cache, mask)


# ---------------------------------------------------------------------------
# on-disk format: manifest.json + one matrix.bin-style blob per tensor


def _expected_shapes(manifest: dict) -> dict[str, tuple[int, ...]]:
    dim = manifest["dim"]
    n_classes = manifest["n_classes"]
    enc = manifest["encoder"]
    hidden = list(enc.get("hidden", []))
    shapes: dict[str, tuple[int, ...]] = {}
    if enc["kind"] == "attention_mlp":
        hd = enc["heads"] * enc["head_dim"]
        for n in ("q", "k", "v"):
            shapes[f"attn.w{n}"] = (dim, hd)
            shapes[f"attn.b{n}"] = (hd,)
        shapes["attn.wo"] = (hd, dim)
        shapes["attn.bo"] = (dim,)
    elif enc["kind"] != "mean_pool_mlp":
        raise UnknownEncoderError(f"unknown encoder kind {enc['kind']!r}", field="kind")
    widths = [dim] + hidden
    for i in range(len(hidden)):
        shapes[f"mlp.w{i}"] = (widths[i], widths[i + 1])
        shapes[f"mlp.b{i}"] = (widths[i + 1],)
    shapes["head.w"] = (widths[-1], n_classes)
    shapes["head.b"] = (n_classes,)
    return shapes


def save_frozen_model(model: FrozenClassifier, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = model.tensors()
    entries = []
    for name in sorted(tensors):
        t = tensors[name]
        mat = t if t.ndim == 2 else t.reshape(1, -1)
        blob = EmbeddingMatrix(mat).to_bytes()
        fname = name.replace("/", "_") + ".bin"
        (path / fname).write_bytes(blob)
        entries.append({
            "name": name,
            "shape": list(t.shape),
            "file": fname,
            "sha256": hashlib.sha256(blob).hexdigest(),
        })
    manifest = {
        "format": "r2dl-frozen-model",
        "version": 1,
        "dim": model.dim,
        "n_classes": model.n_classes,
        "encoder": model.encoder_cfg,
        "tensors": entries,
    }
    (path / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_frozen_model(path) -> FrozenClassifier:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise ModelFormatError(f"missing manifest.json under {path}", field="manifest.json")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    enc = manifest["encoder"]
    expected = _expected_shapes(manifest)

    loaded: dict[str, np.ndarray] = {}
    declared = {e["name"]: e for e in manifest["tensors"]}
    if set(declared) != set(expected):
        missing = sorted(set(expected) ^ set(declared))
        raise ShapeMismatchError(f"manifest tensor set mismatch: {missing}", field="tensors")
    for name, entry in declared.items():
        blob_path = path / entry["file"]
        if not blob_path.is_file():
            raise ModelFormatError(f"missing tensor blob {entry['file']}", field=entry["file"])
        blob = blob_path.read_bytes()
        if hashlib.sha256(blob).hexdigest() != entry["sha256"]:
            raise ModelFormatError(f"sha256 mismatch for {entry['file']}", field="sha256")
        mat = matrix_from_bytes(blob, source=entry["file"]).data
        shape = tuple(entry["shape"])
        if shape != expected[name]:
            raise ShapeMismatchError(
                f"tensor {name}: manifest shape {shape}, expected {expected[name]}", field=name
            )
        if mat.size != np.prod(shape, dtype=int):
            raise ShapeMismatchError(
                f"tensor {name}: blob holds {mat.size} values, manifest declares {shape}",
                field=name,
            )
        loaded[name] = mat.reshape(shape)

    hidden = list(enc.get("hidden", []))
    mlp = MeanPoolMLP(
        [loaded[f"mlp.w{i}"] for i in range(len(hidden))],
        [loaded[f"mlp.b{i}"] for i in range(len(hidden))],
        enc.get("activation", "tanh"),
    )
    attn = None
    if enc["kind"] == "attention_mlp":
        attn = AttentionBlock(
            loaded["attn.wq"], loaded["attn.bq"],
            loaded["attn.wk"], loaded["attn.bk"],
            loaded["attn.wv"], loaded["attn.bv"],
            loaded["attn.wo"], loaded["attn.bo"],
            enc["heads"], enc["head_dim"],
        )
    return FrozenClassifier(
        manifest["dim"], manifest["n_classes"], enc, mlp,
        loaded["head.w"], loaded["head.b"], attn,
    )
