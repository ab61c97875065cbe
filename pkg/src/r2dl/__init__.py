"""Reprogramming toolkit: learn a sparse map from a target vocabulary onto a
frozen source model's token-embedding dictionary and train it through the
frozen classifier on downstream sequence tasks."""

__version__ = "0.1.0"

from .embeddings import (
    EmbeddingMatrix,
    Vocabulary,
    amino_acid_vocabulary,
    load_bundle,
    random_target_embeddings,
    save_bundle,
)
from .frozen_model import (
    EmbeddedBatch,
    FrozenClassifier,
    forward,
    input_gradient,
    load_frozen_model,
    save_frozen_model,
)
from .labelmap import (
    LabelMapping,
    bin_label,
    expected_value,
    fit_thresholds,
    invert,
    map_label,
)
from .sparse_map import (
    CoefficientMap,
    SparseCodeConfig,
    omp_sparse_code,
    reconstruct,
    reconstruction_error,
    reproject,
    sparse_code_all,
)
from .training import TrainConfig, TrainHistory, cross_entropy_loss, predict, train_r2dl
from .evaluation import (
    EvalReport,
    confusion_matrix,
    data_efficiency,
    restricted_sweep,
    spearman_rho,
    top_n_accuracy,
)
from .bioseq import (
    SubstitutionMatrix,
    TaskDataset,
    distance_correlation_report,
    embedding_distance_matrix,
    evolutionary_distance_matrix,
    load_blosum62,
    needleman_wunsch,
    parse_csv_dataset,
    parse_fasta,
)

__all__ = [name for name in dir() if not name.startswith("_")]
