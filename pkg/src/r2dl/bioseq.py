"""Protein-domain front end: dataset ingestion, tokenization, and sequence
distance analyses.

Datasets arrive as CSV (``sequence,label``) or FASTA (``>id|label`` headers)
over the 20-letter amino-acid alphabet. Pairwise evolutionary distances come
from global Needleman-Wunsch alignment under BLOSUM62 with a linear gap
penalty; embedding distances are Euclidean distances between mean-pooled
encoder outputs. The correlation between the two is reported as Spearman's
rho over the strict upper triangles.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .embeddings import AMINO_ACIDS, PAD_TOKEN, EmbeddingMatrix, Vocabulary
from .evaluation import spearman_rho
from .frozen_model import FrozenClassifier
from .sparse_map import CoefficientMap, reconstruct

TASK_KINDS = ("sequence_classification", "token_classification", "regression")


class DatasetParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class TaskDataset:
    """Tokenized, labeled sequences with train/test split metadata.

    ``items`` holds (token-id tuple, label) pairs; the label is a class id,
    a per-token id tuple, or a float depending on ``task_kind``.
    """

    items: tuple
    task_kind: str
    label_names: tuple[str, ...]
    vocab_size: int
    train_indices: tuple[int, ...] = ()
    test_indices: tuple[int, ...] = ()
    pad_id: int | None = None

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise DatasetParseError(f"unknown task kind {self.task_kind!r}")
        seen = set(self.train_indices) | set(self.test_indices)
        if len(self.train_indices) + len(self.test_indices) != len(seen):
            raise DatasetParseError("train/test splits overlap")
        if seen and (min(seen) < 0 or max(seen) >= len(self.items)):
            raise DatasetParseError("split index out of range")
        for seq, label in self.items:
            if any(not 0 <= t < self.vocab_size for t in seq):
                raise DatasetParseError("token id out of vocabulary range")
            if self.task_kind == "token_classification" and len(label) != len(seq):
                raise DatasetParseError("per-token labels must match sequence length")

    def __len__(self) -> int:
        return len(self.items)

    def with_train_indices(self, indices) -> "TaskDataset":
        """Same items and test split, restricted training split."""
        return replace(self, train_indices=tuple(indices))

    def label_ids(self) -> list:
        return [label for _, label in self.items]

    def sequences(self) -> list[tuple[int, ...]]:
        return [seq for seq, _ in self.items]


def tokenize(sequence: str, vocab: Vocabulary, line: int | None = None,
             map_x_to_pad: bool = False) -> tuple[int, ...]:
    ids = []
    for ch in sequence:
        if map_x_to_pad and ch == "X":
            ids.append(vocab.index(PAD_TOKEN))
            continue
        if ch not in vocab or ch == PAD_TOKEN:
            raise DatasetParseError(f"invalid residue {ch!r} in sequence", line=line)
        ids.append(vocab.index(ch))
    return tuple(ids)


def detokenize(ids, vocab: Vocabulary) -> str:
    return "".join(vocab.lookup(i) for i in ids)


def _finish_labels(raw_items, kind, label_names):
    """Map raw string labels to ids once the full label set is known."""
    if kind == "regression":
        items = tuple((seq, float(label)) for seq, label in raw_items)
        return items, ()
    if kind == "sequence_classification":
        names = tuple(sorted(set(label for _, label in raw_items))) if label_names is None \
            else tuple(label_names)
        index = {n: i for i, n in enumerate(names)}
        items = tuple((seq, index[label]) for seq, label in raw_items)
        return items, names
    # token_classification: the label is a per-residue character string
    names = tuple(sorted(set(ch for _, label in raw_items for ch in label))) if label_names is None \
        else tuple(label_names)
    index = {n: i for i, n in enumerate(names)}
    items = tuple((seq, tuple(index[ch] for ch in label)) for seq, label in raw_items)
    return items, names


def parse_csv_dataset(path, schema: dict, vocab: Vocabulary,
                      label_names=None, map_x_to_pad: bool = False) -> TaskDataset:
    """Parse a CSV of sequences and labels.

    ``schema`` names the sequence and label columns and the task kind, e.g.
    ``{"sequence_col": "sequence", "label_col": "label", "kind":
    "sequence_classification"}``. Token-level labels are per-residue character
    strings of the same length as the sequence. Rows with invalid residues or
    unparseable labels raise with their line number.
    """
    kind = schema["kind"]
    if kind not in TASK_KINDS:
        raise DatasetParseError(f"unknown task kind {kind!r}")
    raw_items = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or schema["sequence_col"] not in reader.fieldnames \
                or schema["label_col"] not in reader.fieldnames:
            raise DatasetParseError(
                f"CSV header must contain {schema['sequence_col']!r} and {schema['label_col']!r}"
            )
        for row in reader:
            line = reader.line_num
            seq_text = (row[schema["sequence_col"]] or "").strip()
            label_text = (row[schema["label_col"]] or "").strip()
            if not seq_text:
                raise DatasetParseError("empty sequence", line=line)
            if not label_text:
                raise DatasetParseError("missing label", line=line)
            seq = tokenize(seq_text, vocab, line=line, map_x_to_pad=map_x_to_pad)
            if kind == "regression":
                try:
                    float(label_text)
                except ValueError:
                    raise DatasetParseError(
                        f"label {label_text!r} is not a number", line=line
                    ) from None
            if kind == "token_classification" and len(label_text) != len(seq_text):
                raise DatasetParseError(
                    f"label length {len(label_text)} != sequence length {len(seq_text)}",
                    line=line,
                )
            raw_items.append((seq, label_text))
    if not raw_items:
        raise DatasetParseError("dataset is empty")
    items, names = _finish_labels(raw_items, kind, label_names)
    return TaskDataset(
        items=items, task_kind=kind, label_names=names, vocab_size=len(vocab),
        train_indices=tuple(range(len(items))),
        pad_id=vocab.index(PAD_TOKEN) if PAD_TOKEN in vocab else None,
    )


def parse_fasta(path, vocab: Vocabulary, kind: str = "sequence_classification",
                label_rule=None, label_names=None, map_x_to_pad: bool = False) -> TaskDataset:
    """Parse FASTA with labels carried in the header.

    The default rule takes the field after the first ``|``, so ``>s1|AMP``
    labels the record AMP. Wrapped sequence lines are concatenated.
    """
    if label_rule is None:
        def label_rule(header, line):
            if "|" not in header:
                raise DatasetParseError(f"header {header!r} has no |label field", line=line)
            return header.split("|", 1)[1].strip()

    raw_items = []
    header, header_line, chunks = None, 0, []

    def flush(line):
        if header is None:
            return
        seq_text = "".join(chunks)
        if not seq_text:
            raise DatasetParseError(f"record {header!r} has an empty sequence", line=line)
        seq = tokenize(seq_text, vocab, line=header_line, map_x_to_pad=map_x_to_pad)
        raw_items.append((seq, label_rule(header, header_line)))

    lineno = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith(">"):
                flush(lineno)
                header, header_line, chunks = line[1:], lineno, []
            else:
                if header is None:
                    raise DatasetParseError("sequence data before any header", line=lineno)
                chunks.append(line)
        flush(lineno)
    if not raw_items:
        raise DatasetParseError("dataset is empty")
    items, names = _finish_labels(raw_items, kind, label_names)
    return TaskDataset(
        items=items, task_kind=kind, label_names=names, vocab_size=len(vocab),
        train_indices=tuple(range(len(items))),
        pad_id=vocab.index(PAD_TOKEN) if PAD_TOKEN in vocab else None,
    )


def split_dataset(dataset: TaskDataset, train_size: int | None = None,
                  test_size: int | None = None, seed: int = 0) -> TaskDataset:
    """Seeded shuffle split into disjoint, covering train/test index sets."""
    n = len(dataset)
    if train_size is None and test_size is None:
        train_size = round(n * 0.8)
    if train_size is None:
        train_size = n - test_size
    if test_size is None:
        test_size = n - train_size
    if train_size + test_size > n or train_size < 1 or test_size < 0:
        raise DatasetParseError(
            f"cannot split {n} items into train={train_size}, test={test_size}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    return replace(
        dataset,
        train_indices=tuple(int(i) for i in order[:train_size]),
        test_indices=tuple(int(i) for i in order[train_size : train_size + test_size]),
    )


# ---------------------------------------------------------------------------
# alignment scoring


@dataclass(frozen=True)
class SubstitutionMatrix:
    """Symmetric residue-pair scores plus gap penalties (linear: the two gap
    fields must agree)."""

    alphabet: str
    scores: tuple  # row-major ints over alphabet x alphabet
    gap_open: int = -4
    gap_extend: int = -4
    _index: dict = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        n = len(self.alphabet)
        if len(self.scores) != n * n:
            raise AlignmentError(f"expected {n * n} scores, got {len(self.scores)}")
        for i in range(n):
            for j in range(n):
                if self.scores[i * n + j] != self.scores[j * n + i]:
                    raise AlignmentError(
                        f"scores not symmetric at {self.alphabet[i]}/{self.alphabet[j]}"
                    )
        if self.gap_open != self.gap_extend:
            raise AlignmentError("only linear gap penalties are supported")
        object.__setattr__(self, "_index", {ch: i for i, ch in enumerate(self.alphabet)})

    def score(self, a: str, b: str) -> int:
        try:
            i, j = self._index[a], self._index[b]
        except KeyError as exc:
            raise AlignmentError(f"unknown residue {exc.args[0]!r}") from None
        return self.scores[i * len(self.alphabet) + j]

    @property
    def gap(self) -> int:
        return self.gap_extend


def load_blosum62(gap: int = -4) -> SubstitutionMatrix:
    """The shipped BLOSUM62 table with a linear gap penalty."""
    text = resources.files("r2dl.data").joinpath("blosum62.txt").read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    header = lines[0].split()
    n = len(header)
    table = {ch: {} for ch in header}
    for line in lines[1:]:
        parts = line.split()
        row = parts[0]
        for ch, val in zip(header, parts[1:]):
            table[row][ch] = int(val)
    order = "".join(sorted(header))
    assert set(order) == set(AMINO_ACIDS)
    scores = tuple(table[a][b] for a in order for b in order)
    return SubstitutionMatrix(alphabet=order, scores=scores, gap_open=gap, gap_extend=gap)


def needleman_wunsch(a: str, b: str, matrix: SubstitutionMatrix) -> int:
    """Optimal global alignment score under a linear gap penalty."""
    if not a or not b:
        raise AlignmentError("sequences must be non-empty")
    gap = matrix.gap
    prev = [j * gap for j in range(len(b) + 1)]
    for i in range(1, len(a) + 1):
        cur = [i * gap] + [0] * len(b)
        for j in range(1, len(b) + 1):
            cur[j] = max(
                prev[j - 1] + matrix.score(a[i - 1], b[j - 1]),
                prev[j] + gap,
                cur[j - 1] + gap,
            )
        prev = cur
    return prev[len(b)]


def evolutionary_distance_matrix(sequences, matrix: SubstitutionMatrix | None = None) -> np.ndarray:
    """Alignment-score derived distances, normalized to [0, 1].

    The raw distance for a pair is max(self-score of either sequence) minus
    their alignment score, which is zero for identical sequences; the whole
    matrix is then scaled by its maximum. Only ranks matter downstream, so
    the normalization choice does not affect reported correlations.
    """
    if len(sequences) < 2:
        raise AlignmentError("need at least 2 sequences")
    if matrix is None:
        matrix = load_blosum62()
    n = len(sequences)
    self_scores = [needleman_wunsch(s, s, matrix) for s in sequences]
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            raw = max(self_scores[i], self_scores[j]) - needleman_wunsch(
                sequences[i], sequences[j], matrix
            )
            dist[i, j] = dist[j, i] = raw
    top = dist.max()
    if top > 0:
        dist /= top
    assert np.array_equal(dist, dist.T) and not dist.diagonal().any()
    return dist


# ---------------------------------------------------------------------------
# embedding-space distances


def pooled_sequence_embeddings(theta: CoefficientMap, dictionary: EmbeddingMatrix,
                               model: FrozenClassifier, sequences,
                               pad_id: int | None = None) -> np.ndarray:
    """Mean over unmasked positions of the pre-head encoder output, one row
    per sequence."""
    from .training import make_batch

    rows = reconstruct(theta, dictionary).data
    out = np.zeros((len(sequences), model.hidden_dim))
    for i, seq in enumerate(sequences):
        if len(seq) == 0:
            raise DatasetParseError("cannot embed an empty sequence")
        batch = make_batch([seq], rows, pad_id=pad_id)
        hidden, _ = model.encode(batch)
        out[i] = hidden[0][batch.mask[0]].mean(axis=0)
    return out


def embedding_distance_matrix(theta: CoefficientMap, dictionary: EmbeddingMatrix,
                              model: FrozenClassifier, sequences,
                              pad_id: int | None = None) -> np.ndarray:
    """Pairwise Euclidean distances between pooled sequence representations."""
    pooled = pooled_sequence_embeddings(theta, dictionary, model, sequences, pad_id)
    diff = pooled[:, None, :] - pooled[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    np.fill_diagonal(dist, 0.0)
    return dist


def distance_correlation_report(evo: np.ndarray, emb: np.ndarray):
    """Spearman's rho over the vectorized strict upper triangles, plus the
    per-pair rows (i, j, evo, emb) for CSV export."""
    evo = np.asarray(evo, dtype=np.float64)
    emb = np.asarray(emb, dtype=np.float64)
    if evo.shape != emb.shape or evo.ndim != 2 or evo.shape[0] != evo.shape[1]:
        raise AlignmentError(f"matrix shapes differ: {evo.shape} vs {emb.shape}")
    iu = np.triu_indices(evo.shape[0], k=1)
    rho = spearman_rho(evo[iu], emb[iu])
    rows = [(int(i), int(j), float(evo[i, j]), float(emb[i, j]))
            for i, j in zip(*iu)]
    return rho, rows


def write_distance_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "evo", "emb"])
        for i, j, evo, emb in rows:
            writer.writerow([i, j, f"{evo:.17g}", f"{emb:.17g}"])


def write_pooled_embeddings_csv(pooled: np.ndarray, path, ids=None) -> None:
    """Pooled embeddings as ``id,dim0..dimH`` rows, for external projection."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"dim{d}" for d in range(pooled.shape[1])])
        for i, row in enumerate(pooled):
            writer.writerow([ids[i] if ids is not None else i]
                            + [f"{v:.17g}" for v in row])


def residue_embedding_distance_matrix(theta: CoefficientMap,
                                      dictionary: EmbeddingMatrix) -> np.ndarray:
    """Euclidean distances between reconstructed per-residue embeddings."""
    rows = reconstruct(theta, dictionary).data
    diff = rows[:, None, :] - rows[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2))
