"""Read-only access to transformer checkpoints on disk.

A checkpoint directory holds a ``config.json``, a vocabulary file
(``vocab.txt``, one token per line), and weights as either
``pytorch_model.bin`` (torch state dict) or ``model.safetensors``. Everything
is loaded onto CPU and exposed as float64 numpy arrays.
"""

from __future__ import annotations

import fnmatch
import json
from pathlib import Path

import numpy as np
import torch


class CheckpointError(ValueError):
    pass


# searched in order when the embedding selector is "auto"
EMBEDDING_PATTERNS = (
    "*embeddings.word_embeddings.weight",
    "*embed_tokens.weight",
    "*wte.weight",
    "*tok_embeddings.weight",
    "embedding.weight",
)

HEAD_WEIGHT_PATTERNS = ("classifier.weight", "*classifier.weight", "score.weight")


class Checkpoint:
    def __init__(self, path):
        self.path = Path(path)
        config_path = self.path / "config.json"
        if not config_path.is_file():
            raise CheckpointError(f"no config.json under {self.path}")
        self.config = json.loads(config_path.read_text(encoding="utf-8"))
        self.tensors = self._load_tensors()
        self.vocab_tokens = self._load_vocab()

    def _load_tensors(self) -> dict[str, np.ndarray]:
        bin_path = self.path / "pytorch_model.bin"
        st_path = self.path / "model.safetensors"
        if bin_path.is_file():
            state = torch.load(bin_path, map_location="cpu", weights_only=True)
        elif st_path.is_file():
            from safetensors.torch import load_file
            state = load_file(st_path)
        else:
            raise CheckpointError(
                f"no pytorch_model.bin or model.safetensors under {self.path}"
            )
        return {k: v.detach().to(torch.float64).numpy() for k, v in state.items()}

    def _load_vocab(self) -> list[str]:
        vocab_path = self.path / "vocab.txt"
        if not vocab_path.is_file():
            raise CheckpointError(f"no vocab.txt under {self.path}")
        tokens = vocab_path.read_text(encoding="utf-8").splitlines()
        tokens = [t for t in tokens if t]
        if len(set(tokens)) != len(tokens):
            raise CheckpointError("vocab.txt contains duplicate tokens")
        return tokens

    def _match(self, patterns, what: str) -> str:
        for pattern in patterns:
            hits = sorted(k for k in self.tensors if fnmatch.fnmatch(k, pattern))
            if len(hits) == 1:
                return hits[0]
            if len(hits) > 1:
                raise CheckpointError(f"ambiguous {what} tensors: {hits}")
        raise CheckpointError(
            f"no {what} tensor found; available: {sorted(self.tensors)[:10]}..."
        )

    def embedding_tensor(self, selector: str = "auto") -> tuple[str, np.ndarray]:
        """The token-embedding table, (vocab, hidden). ``selector`` is a tensor
        name, or "auto" to probe the usual input-embedding locations."""
        if selector != "auto":
            if selector not in self.tensors:
                raise CheckpointError(f"tensor {selector!r} not in checkpoint")
            name = selector
        else:
            name = self._match(EMBEDDING_PATTERNS, "embedding")
        tensor = self.tensors[name]
        if tensor.ndim != 2:
            raise CheckpointError(f"{name} is not a 2-D table: shape {tensor.shape}")
        if tensor.shape[0] != len(self.vocab_tokens):
            raise CheckpointError(
                f"{name} has {tensor.shape[0]} rows but vocab.txt lists "
                f"{len(self.vocab_tokens)} tokens"
            )
        return name, tensor

    def head_tensors(self, selector: str = "auto") -> tuple[str, np.ndarray, np.ndarray]:
        """The classification head as (name, weight (n_classes, in), bias)."""
        if selector != "auto":
            name = selector if selector.endswith(".weight") else selector + ".weight"
            if name not in self.tensors:
                raise CheckpointError(f"tensor {name!r} not in checkpoint")
        else:
            name = self._match(HEAD_WEIGHT_PATTERNS, "classification head")
        weight = self.tensors[name]
        bias_name = name[: -len(".weight")] + ".bias"
        bias = self.tensors.get(bias_name)
        if bias is None:
            bias = np.zeros(weight.shape[0])
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise CheckpointError(f"head tensors malformed: {name} {weight.shape}")
        return name, weight, bias

    @property
    def n_labels(self) -> int:
        if "num_labels" in self.config:
            return int(self.config["num_labels"])
        labels = self.config.get("id2label")
        if labels:
            return len(labels)
        raise CheckpointError("config.json declares no label count")


def wordpiece_tokenize(text: str, vocab_index: dict[str, int],
                       unk_token: str = "[UNK]", lowercase: bool = True) -> list[int]:
    """Greedy longest-match subword tokenization with ## continuations.

    Whole-word vocabularies degenerate to plain whitespace lookup; words with
    no matching pieces map to the unknown token.
    """
    unk = vocab_index.get(unk_token)
    ids = []
    for word in (text.lower() if lowercase else text).split():
        start = 0
        pieces = []
        while start < len(word):
            end = len(word)
            piece_id = None
            while end > start:
                piece = word[start:end]
                if start > 0:
                    piece = "##" + piece
                if piece in vocab_index:
                    piece_id = vocab_index[piece]
                    break
                end -= 1
            if piece_id is None:
                pieces = None
                break
            pieces.append(piece_id)
            start = end
        if pieces is None:
            if unk is None:
                raise CheckpointError(
                    f"cannot tokenize {word!r} and vocab has no {unk_token}"
                )
            ids.append(unk)
        else:
            ids.extend(pieces)
    return ids
