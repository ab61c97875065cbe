"""Sparse coding of target embeddings against a fixed source dictionary.

Each target token embedding is approximated as a sparse linear combination of
source dictionary rows via orthogonal matching pursuit: greedily select the
atom most correlated with the residual, refit least squares on the selected
support, repeat until the residual tolerance or the sparsity bound k is hit.
The dictionary itself is never updated.

A :class:`CoefficientMap` records, per target row, the selected source ids and
coefficients, the sparsity bound it was built under, and the content hash of
the dictionary it was coded against. Operations that pair a map with a
dictionary verify that hash first.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingMatrix

logger = logging.getLogger(__name__)

# Correlations below this (relative to the target norm) are numerical noise;
# selecting such an atom would fit nothing.
_CORR_FLOOR = 1e-13


class SparseCodeError(ValueError):
    pass


class ZeroDictionaryError(SparseCodeError):
    """All dictionary rows have zero norm; nothing can be selected."""


class DictionaryHashMismatchError(SparseCodeError):
    """Coefficient map was coded against a different dictionary."""


@dataclass(frozen=True)
class SparseCodeConfig:
    """Settings for the per-row greedy coder.

    ``epsilon`` is a relative residual tolerance by default: stop once
    ``||v - theta V_S||_2 <= epsilon * ||v||_2``. Set ``relative_epsilon``
    False for an absolute threshold. ``max_inner_iters`` is the number of
    full coding passes over all target rows; against a fixed dictionary a
    pass is idempotent, so extra passes are skipped (the value is still
    recorded in run manifests).
    """

    k: int = 8
    epsilon: float = 0.0
    max_inner_iters: int = 1
    norm_order: int = 2
    relative_epsilon: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise SparseCodeError(f"k must be >= 1, got {self.k}")
        if self.epsilon < 0:
            raise SparseCodeError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.max_inner_iters < 1:
            raise SparseCodeError(f"max_inner_iters must be >= 1, got {self.max_inner_iters}")
        if self.norm_order != 2:
            raise SparseCodeError("only the 2-norm residual is supported")


class CoefficientMap:
    """Row-sparse matrix mapping target tokens to source-dictionary coefficients.

    ``rows[t]`` is a tuple of ``(source_id, coefficient)`` pairs sorted by
    source id; every row has at most ``k_max`` entries.
    """

    def __init__(self, target_rows, source_cols, rows, k_max, dictionary_hash):
        if len(rows) != target_rows:
            raise SparseCodeError(f"expected {target_rows} rows, got {len(rows)}")
        canonical = []
        for t, row in enumerate(rows):
            row = tuple(sorted((int(j), float(c)) for j, c in row))
            ids = [j for j, _ in row]
            if len(set(ids)) != len(ids):
                raise SparseCodeError(f"row {t}: duplicate source ids")
            if len(row) > k_max:
                raise SparseCodeError(f"row {t}: {len(row)} nonzeros exceeds k_max={k_max}")
            for j, c in row:
                if not 0 <= j < source_cols:
                    raise SparseCodeError(f"row {t}: source id {j} out of range")
                if not np.isfinite(c):
                    raise SparseCodeError(f"row {t}: non-finite coefficient at {j}")
            canonical.append(row)
        self.target_rows = int(target_rows)
        self.source_cols = int(source_cols)
        self.rows = tuple(canonical)
        self.k_max = int(k_max)
        self.dictionary_hash = dictionary_hash

    def nnz(self) -> int:
        return sum(len(r) for r in self.rows)

    def row_nnz(self) -> list[int]:
        return [len(r) for r in self.rows]

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.target_rows, self.source_cols))
        for t, row in enumerate(self.rows):
            for j, c in row:
                dense[t, j] = c
        return dense

    @classmethod
    def from_dense(cls, dense, k_max, dictionary_hash) -> "CoefficientMap":
        """Build from a dense array, dropping exact zeros."""
        dense = np.asarray(dense, dtype=np.float64)
        rows = [
            tuple((j, dense[t, j]) for j in np.nonzero(dense[t])[0])
            for t in range(dense.shape[0])
        ]
        return cls(dense.shape[0], dense.shape[1], rows, k_max, dictionary_hash)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, CoefficientMap)
            and self.rows == other.rows
            and self.source_cols == other.source_cols
            and self.k_max == other.k_max
            and self.dictionary_hash == other.dictionary_hash
        )


def _check_hash(theta: CoefficientMap, dictionary: EmbeddingMatrix) -> None:
    actual = dictionary.content_hash()
    if theta.dictionary_hash != actual:
        raise DictionaryHashMismatchError(
            f"coefficient map was coded against {theta.dictionary_hash[:12]}..., "
            f"dictionary is {actual[:12]}..."
        )


def omp_sparse_code(
    target: np.ndarray, dictionary: EmbeddingMatrix, cfg: SparseCodeConfig
) -> tuple[tuple[int, float], ...]:
    """Greedy sparse code of one target vector against the dictionary rows.

    Selection criterion is the norm-scaled correlation |<atom, residual>| /
    ||atom||; ties break toward the lowest source id. Coefficients are the
    least-squares fit on the selected support, so the residual 2-norm is
    non-increasing in the number of atoms.
    """
    v = np.asarray(target, dtype=np.float64)
    atoms = dictionary.data
    if v.ndim != 1 or v.shape[0] != dictionary.dim:
        raise SparseCodeError(
            f"target dim {v.shape} does not match dictionary dim {dictionary.dim}"
        )
    if cfg.k > dictionary.rows:
        raise SparseCodeError(f"k={cfg.k} exceeds dictionary size {dictionary.rows}")

    norms = np.linalg.norm(atoms, axis=1)
    usable = norms > 0.0
    if not usable.any():
        raise ZeroDictionaryError("every dictionary row has zero norm")
    if not usable.all():
        warnings.warn(
            f"skipping {int((~usable).sum())} zero-norm dictionary rows during atom selection",
            stacklevel=2,
        )

    target_norm = np.linalg.norm(v)
    if target_norm == 0.0:
        return ()
    threshold = cfg.epsilon * target_norm if cfg.relative_epsilon else cfg.epsilon

    residual = v
    resid_norm = target_norm
    support: list[int] = []
    coeffs = np.zeros(0)
    blocked = ~usable
    safe_norms = np.where(usable, norms, 1.0)

    while resid_norm > threshold and len(support) < min(cfg.k, int(usable.sum())):
        corr = np.abs(atoms @ residual) / safe_norms
        corr[blocked] = -1.0
        j = int(np.argmax(corr))  # argmax returns the first max: lowest id wins ties
        if corr[j] <= _CORR_FLOOR * target_norm:
            break
        support.append(j)
        blocked = blocked.copy()
        blocked[j] = True
        coeffs, *_ = np.linalg.lstsq(atoms[support].T, v, rcond=None)
        residual = v - coeffs @ atoms[support]
        new_norm = np.linalg.norm(residual)
        assert new_norm <= resid_norm * (1 + 1e-9) + 1e-12, (
            f"residual increased after selecting atom {j}: {resid_norm} -> {new_norm}"
        )
        resid_norm = new_norm

    # an exact-zero coefficient carries nothing; dropping it keeps the sparse
    # structure canonical (no explicit zeros anywhere in a CoefficientMap)
    return tuple(sorted((j, float(c)) for j, c in zip(support, coeffs) if c != 0.0))


def sparse_code_all(
    target_matrix: EmbeddingMatrix, dictionary: EmbeddingMatrix, cfg: SparseCodeConfig
) -> CoefficientMap:
    """Code every target row against the dictionary.

    One pass fully determines the result (the dictionary is fixed and coding a
    row is pure), so the configured pass count beyond the first is skipped.
    """
    if target_matrix.dim != dictionary.dim:
        raise SparseCodeError(
            f"target dim {target_matrix.dim} != dictionary dim {dictionary.dim}"
        )
    rows = [omp_sparse_code(target_matrix.row(t), dictionary, cfg) for t in range(target_matrix.rows)]
    theta = CoefficientMap(
        target_matrix.rows, dictionary.rows, rows, cfg.k, dictionary.content_hash()
    )
    logger.info(
        "sparse-coded %d rows: nnz=%d, frobenius residual=%.6g",
        theta.target_rows,
        theta.nnz(),
        reconstruction_error(theta, dictionary, target_matrix),
    )
    return theta


def reproject(
    theta: CoefficientMap, dictionary: EmbeddingMatrix, cfg: SparseCodeConfig
) -> CoefficientMap:
    """Restore per-row sparsity after dense updates.

    Rows already within the bound are returned unchanged (they are an exact
    fixed point: their own reconstruction is exactly representable on their
    support). Denser rows keep their k largest-magnitude coefficients and are
    refit by least squares against the row's current reconstruction.
    """
    _check_hash(theta, dictionary)
    atoms = dictionary.data
    new_rows = []
    for row in theta.rows:
        if len(row) <= cfg.k:
            new_rows.append(row)
            continue
        ids = np.array([j for j, _ in row])
        vals = np.array([c for _, c in row])
        # stable sort on -|c| keeps the lower source id on magnitude ties
        keep = ids[np.argsort(-np.abs(vals), kind="stable")[: cfg.k]]
        keep.sort()
        y = vals @ atoms[ids]
        coeffs, *_ = np.linalg.lstsq(atoms[keep].T, y, rcond=None)
        new_rows.append(tuple((int(j), float(c)) for j, c in zip(keep, coeffs) if c != 0.0))
    return CoefficientMap(
        theta.target_rows, theta.source_cols, new_rows, cfg.k, theta.dictionary_hash
    )


def reconstruct(theta: CoefficientMap, dictionary: EmbeddingMatrix) -> EmbeddingMatrix:
    """Materialize the embeddings the coefficient map encodes: row t = theta_t V_S."""
    _check_hash(theta, dictionary)
    return EmbeddingMatrix(theta.to_dense() @ dictionary.data)


def reconstruction_error(
    theta: CoefficientMap, dictionary: EmbeddingMatrix, target_matrix: EmbeddingMatrix
) -> float:
    """Frobenius norm of the reconstruction gap ||V_T - Theta V_S||_F."""
    if target_matrix.dim != dictionary.dim or target_matrix.rows != theta.target_rows:
        raise SparseCodeError("dimension mismatch between target, dictionary, and map")
    diff = target_matrix.data - theta.to_dense() @ dictionary.data
    return float(np.linalg.norm(diff))


def save_theta(theta: CoefficientMap, path) -> None:
    """Write the map as TSV: header, then (target_id, source_id, coefficient)
    triplets sorted by (target_id, source_id). 17 significant digits round-trip
    float64 losslessly."""
    lines = [f"#dictionary_hash={theta.dictionary_hash} k={theta.k_max}\n"]
    for t, row in enumerate(theta.rows):
        for j, c in row:
            lines.append(f"{t}\t{j}\t{c:.17g}\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(lines))


def load_theta(path, *, target_rows: int, source_cols: int) -> CoefficientMap:
    """Read a TSV coefficient map. Row/column counts come from the caller
    (the paired vocabulary and dictionary), since empty trailing rows leave
    no trace in the file."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("#dictionary_hash="):
            raise SparseCodeError(f"{path}: missing dictionary_hash header")
        hash_part, k_part = header[1:].split(" ")
        dictionary_hash = hash_part.split("=", 1)[1]
        k_max = int(k_part.split("=", 1)[1])
        rows: list[list[tuple[int, float]]] = [[] for _ in range(target_rows)]
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            t, j, c = line.split("\t")
            rows[int(t)].append((int(j), float(c)))
    return CoefficientMap(target_rows, source_cols, rows, k_max, dictionary_hash)
