"""Vocabularies, embedding matrices, and the on-disk bundle format.

A bundle is a directory holding ``vocab.tsv`` (one ``<id>\\t<token>`` line per
token), ``matrix.bin`` (binary row-major float32 payload with a fixed header),
and ``meta.json`` (free-form provenance plus the sha256 of matrix.bin). The
matrix content hash is the anchor that downstream coefficient files reference,
so a coefficient map can never silently be paired with the wrong dictionary.

All values are float32 on disk and float64 in memory; every type here is
immutable after construction.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"R2DLEMB1"
FORMAT_VERSION = 1

# Canonical one-letter amino acid codes, fixed order.
AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
PAD_TOKEN = "<pad>"


class BundleError(Exception):
    """Base class for bundle load/save failures. ``field`` names the culprit."""

    def __init__(self, message: str, field: str):
        super().__init__(message)
        self.field = field


class MissingFileError(BundleError):
    pass


class MagicMismatchError(BundleError):
    pass


class DimensionMismatchError(BundleError):
    pass


class DuplicateTokenError(BundleError):
    pass


class VocabularyError(KeyError):
    """Raised on lookups of tokens or ids that are not in the vocabulary."""


@dataclass(frozen=True)
class Vocabulary:
    """Ordered set of unique token strings with contiguous integer ids."""

    tokens: tuple[str, ...]
    _index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        index = {}
        for i, tok in enumerate(self.tokens):
            if tok in index:
                raise DuplicateTokenError(f"duplicate token {tok!r}", field="token")
            index[tok] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.tokens)

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise VocabularyError(f"token {token!r} not in vocabulary") from None

    def lookup(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise VocabularyError(f"token id {token_id} out of range")
        return self.tokens[token_id]

    def __contains__(self, token: str) -> bool:
        return token in self._index


class EmbeddingMatrix:
    """Dense row-major matrix of token embeddings, one row per token.

    The backing array is float64 and marked read-only. ``content_hash`` is the
    sha256 of the matrix serialized in the on-disk format (after float32
    rounding), so in-memory and on-disk hashes agree.
    """

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding matrix contains non-finite values")
        arr = arr.copy()
        arr.flags.writeable = False
        self._data = arr

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def rows(self) -> int:
        return self._data.shape[0]

    @property
    def dim(self) -> int:
        return self._data.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self._data[i]

    def to_bytes(self) -> bytes:
        """Serialize in the matrix.bin format (header + float32 payload)."""
        header = MAGIC + struct.pack("<IQQ", FORMAT_VERSION, self.rows, self.dim)
        payload = self._data.astype("<f4").tobytes(order="C")
        return header + payload

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, EmbeddingMatrix) and np.array_equal(self._data, other._data)


def matrix_from_bytes(blob: bytes, source: str = "matrix.bin") -> EmbeddingMatrix:
    """Parse the matrix.bin byte format, validating header against payload."""
    head_len = len(MAGIC) + 4 + 8 + 8
    if len(blob) < head_len:
        raise MagicMismatchError(f"{source}: truncated header", field="magic")
    if blob[: len(MAGIC)] != MAGIC:
        raise MagicMismatchError(f"{source}: bad magic {blob[:8]!r}", field="magic")
    version, rows, dim = struct.unpack("<IQQ", blob[len(MAGIC) : head_len])
    if version != FORMAT_VERSION:
        raise MagicMismatchError(f"{source}: unsupported version {version}", field="version")
    payload = blob[head_len:]
    expected = rows * dim * 4
    if len(payload) != expected:
        raise DimensionMismatchError(
            f"{source}: header declares {rows}x{dim} ({expected} payload bytes) "
            f"but payload has {len(payload)} bytes",
            field="dim",
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(rows, dim)
    return EmbeddingMatrix(values)


def save_bundle(vocab: Vocabulary, emb: EmbeddingMatrix, path, meta: dict | None = None) -> None:
    """Write a bundle directory. Deterministic bytes for identical inputs."""
    if len(vocab) != emb.rows:
        raise DimensionMismatchError(
            f"vocabulary size {len(vocab)} != matrix rows {emb.rows}", field="rows"
        )
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    lines = [f"{i}\t{tok}\n" for i, tok in enumerate(vocab.tokens)]
    (path / "vocab.tsv").write_text("".join(lines), encoding="utf-8")

    blob = emb.to_bytes()
    (path / "matrix.bin").write_bytes(blob)

    meta_out = dict(meta or {})
    meta_out["sha256"] = hashlib.sha256(blob).hexdigest()
    (path / "meta.json").write_text(
        json.dumps(meta_out, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_bundle(path) -> tuple[Vocabulary, EmbeddingMatrix]:
    """Load a bundle directory, validating format and cross-file consistency."""
    path = Path(path)
    for name in ("vocab.tsv", "matrix.bin", "meta.json"):
        if not (path / name).is_file():
            raise MissingFileError(f"bundle missing {name} under {path}", field=name)

    tokens = []
    for lineno, line in enumerate((path / "vocab.tsv").read_text(encoding="utf-8").splitlines()):
        parts = line.split("\t")
        if len(parts) != 2:
            raise BundleError(f"vocab.tsv line {lineno + 1}: expected <id>\\t<token>", field="token")
        tid, tok = parts
        if int(tid) != lineno:
            raise BundleError(
                f"vocab.tsv line {lineno + 1}: id {tid} not contiguous", field="id"
            )
        tokens.append(tok)
    vocab = Vocabulary(tuple(tokens))

    blob = (path / "matrix.bin").read_bytes()
    emb = matrix_from_bytes(blob)

    meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
    recorded = meta.get("sha256")
    if recorded is not None and recorded != hashlib.sha256(blob).hexdigest():
        raise BundleError("meta.json sha256 does not match matrix.bin", field="sha256")

    if emb.rows != len(vocab):
        raise DimensionMismatchError(
            f"matrix rows {emb.rows} != vocabulary size {len(vocab)}", field="rows"
        )
    return vocab, emb


def amino_acid_vocabulary() -> Vocabulary:
    """The 20 canonical amino acids in fixed order plus a padding token (id 20)."""
    return Vocabulary(tuple(AMINO_ACIDS) + (PAD_TOKEN,))


def random_target_embeddings(
    vocab: Vocabulary, dim: int, seed: int, pad_token: str = PAD_TOKEN
) -> EmbeddingMatrix:
    """Random unit-norm embedding rows; the pad row, when present, is all zero.

    This is the random initialization the training loop sparse-codes to get
    its starting coefficient map.
    """
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((len(vocab), dim))
    data /= np.linalg.norm(data, axis=1, keepdims=True)
    if pad_token in vocab:
        data[vocab.index(pad_token)] = 0.0
    return EmbeddingMatrix(data)
