"""Command-line surface: train, eval, sweep, distances, export-embeddings,
inspect-theta.

Every command writes its artifacts atomically under ``--out`` together with a
``run.json`` manifest recording the resolved configuration, content hashes of
all inputs, the seed, and timestamps, so a run can be reproduced or audited
from the output directory alone.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 input-hash
mismatch.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bioseq import (
    DatasetParseError,
    TaskDataset,
    detokenize,
    distance_correlation_report,
    embedding_distance_matrix,
    evolutionary_distance_matrix,
    parse_csv_dataset,
    parse_fasta,
    pooled_sequence_embeddings,
    residue_embedding_distance_matrix,
    split_dataset,
    write_distance_csv,
    write_pooled_embeddings_csv,
)
from .embeddings import (
    BundleError,
    amino_acid_vocabulary,
    load_bundle,
    random_target_embeddings,
)
from .evaluation import (
    EvalReport,
    confusion_matrix,
    data_efficiency,
    restricted_sweep,
    spearman_rho,
    top_n_accuracy,
    rankings_from_logits,
    write_report_json,
    write_sweep_csv,
    MetricError,
    UndefinedCorrelationError,
)
from .frozen_model import ModelFormatError, load_frozen_model
from .labelmap import (
    LabelMapping,
    LabelMappingError,
    expected_value,
    fit_thresholds,
    load_mapping,
    save_mapping,
)
from .sparse_map import (
    DictionaryHashMismatchError,
    SparseCodeError,
    load_theta,
    save_theta,
)
from .training import (
    TaskContext,
    TrainConfig,
    TrainingError,
    predict_logits,
    softmax,
    train_r2dl,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_HASH = 4

KIND_ALIASES = {
    "seqclass": "sequence_classification",
    "tokclass": "token_classification",
    "regression": "regression",
}

# Per-task defaults. amp and toxicity also carry alternate configurations at
# 100/250 coding passes (alt_inner_iters); both are kept, deliberately not
# reconciled. homology ships in regression-threshold mode; with a 1195-class
# frozen head it can be trained as seqclass instead.
PRESETS = {
    "amp": dict(epsilon=0.045, inner_iters=10000, train_size=6489, test_size=812,
                task_kind="seqclass", alt_inner_iters=(100, 250)),
    "toxicity": dict(epsilon=0.045, inner_iters=10000, train_size=8153, test_size=1020,
                     task_kind="seqclass", alt_inner_iters=(100, 250)),
    "secondary-structure": dict(epsilon=0.38, inner_iters=9000, train_size=7416,
                                test_size=1854, task_kind="tokclass"),
    "stability": dict(epsilon=0.29, inner_iters=6000, train_size=44900, test_size=11226,
                      task_kind="regression"),
    "homology": dict(epsilon=0.73, inner_iters=4000, train_size=10438, test_size=2610,
                     task_kind="regression"),
    "solubility": dict(epsilon=0.42, inner_iters=9000, train_size=35100, test_size=8775,
                       task_kind="seqclass"),
}


class ConfigError(Exception):
    pass


class HashMismatchError(Exception):
    pass


def atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_artifact(path: Path, write_fn) -> None:
    """Run a path-taking writer against a temp file, then rename into place."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def threads_cap() -> int:
    """R2DL_THREADS caps worker parallelism; the compute paths here run
    sequentially, so this is recorded for reproducibility and forward use."""
    raw = os.environ.get("R2DL_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"R2DL_THREADS must be an integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigError(f"R2DL_THREADS must be >= 1, got {cap}")
    return cap


class RunManifest:
    def __init__(self, command: str, config: dict, inputs: dict, seed: int):
        self.doc = {
            "command": command,
            "config": config,
            "inputs": inputs,
            "seed": seed,
            "version": __version__,
            "threads_cap": threads_cap(),
            "started": datetime.now(timezone.utc).isoformat(),
        }
        self._t0 = time.perf_counter()

    def finish(self, out_dir: Path) -> None:
        self.doc["finished"] = datetime.now(timezone.utc).isoformat()
        self.doc["elapsed_secs"] = round(time.perf_counter() - self._t0, 3)
        atomic_write_text(out_dir / "run.json",
                          json.dumps(self.doc, indent=2, sort_keys=True) + "\n")


def _resolve_setting(args, preset, name, default):
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    if preset and name in preset:
        return preset[name]
    return default


def _resolve_split(n_items, train_size, test_size):
    """Honor requested sizes when they fit; otherwise keep their ratio."""
    total = train_size + test_size
    if total <= n_items:
        return train_size, test_size
    train = max(1, int(n_items * train_size / total))
    return train, n_items - train


def load_inputs(args):
    vocab = amino_acid_vocabulary()
    src_vocab, dictionary = load_bundle(args.source_bundle)
    model = load_frozen_model(args.model)
    if model.dim != dictionary.dim:
        raise ConfigError(
            f"--model dim {model.dim} does not match --source-bundle dim {dictionary.dim}"
        )
    return vocab, src_vocab, dictionary, model


def load_dataset(args, vocab, task_kind) -> TaskDataset:
    path = Path(args.dataset)
    if not path.is_file():
        raise DatasetParseError(f"dataset file {path} not found")
    if path.suffix.lower() in (".fa", ".fasta"):
        return parse_fasta(path, vocab, kind=task_kind)
    schema = {"sequence_col": args.sequence_col, "label_col": args.label_col,
              "kind": task_kind}
    return parse_csv_dataset(path, schema, vocab)


CONFIG_FILE_KEYS = ("task", "task_kind", "k", "epsilon", "outer_iters",
                    "inner_iters", "lr", "batch", "seed", "reproject_every",
                    "train_size", "test_size")


def apply_config_file(args) -> None:
    """key=value defaults; explicit CLI flags win over file entries."""
    if not getattr(args, "config", None):
        return
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"--config file {path} not found")
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"--config line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in CONFIG_FILE_KEYS:
            raise ConfigError(f"--config line {lineno}: unknown key {key!r}")
        if getattr(args, key, None) is None:
            if key in ("task", "task_kind"):
                parsed = value.strip()
            elif key in ("epsilon", "lr"):
                parsed = float(value)
            else:
                parsed = int(value)
            setattr(args, key, parsed)


def resolve_task(args):
    apply_config_file(args)
    preset = None
    if args.task:
        if args.task not in PRESETS:
            raise ConfigError(f"--task {args.task!r} unknown; choose from {sorted(PRESETS)}")
        preset = PRESETS[args.task]
    kind_alias = _resolve_setting(args, preset, "task_kind", "seqclass")
    if kind_alias not in KIND_ALIASES:
        raise ConfigError(f"--task-kind must be one of {sorted(KIND_ALIASES)}")
    settings = {
        "task": args.task or "custom",
        "task_kind": kind_alias,
        "epsilon": _resolve_setting(args, preset, "epsilon", 0.0),
        "inner_iters": _resolve_setting(args, preset, "inner_iters", 1),
        "train_size": _resolve_setting(args, preset, "train_size", None),
        "test_size": _resolve_setting(args, preset, "test_size", None),
        "k": args.k if args.k is not None else 8,
        "lr": args.lr if args.lr is not None else 0.05,
        "outer_iters": args.outer_iters if args.outer_iters is not None else 100,
        "batch": args.batch if args.batch is not None else 32,
        "seed": args.seed if args.seed is not None else 0,
        "reproject_every": args.reproject_every if getattr(args, "reproject_every", None) else 1,
    }
    return settings


def prepare_split(dataset, settings):
    n = len(dataset)
    if settings["train_size"] is not None:
        test_size = settings["test_size"] or 0
        train, test = _resolve_split(n, settings["train_size"], test_size)
    else:
        train = round(n * 0.8)
        test = n - train
    return split_dataset(dataset, train_size=train, test_size=test, seed=settings["seed"])


def build_mapping(dataset, model, settings) -> LabelMapping:
    if settings["task_kind"] == "regression":
        train_targets = [dataset.items[i][1] for i in dataset.train_indices]
        return fit_thresholds(train_targets, model.n_classes)
    names = dataset.label_names
    if len(names) != model.n_classes:
        raise DatasetParseError(
            f"dataset has {len(names)} target labels but the model head has "
            f"{model.n_classes} classes"
        )
    return LabelMapping(kind="classification",
                        class_pairs=tuple((i, n) for i, n in enumerate(names)))


def train_config(settings) -> TrainConfig:
    return TrainConfig(
        outer_iters=settings["outer_iters"],
        inner_iters=settings["inner_iters"],
        learning_rate=settings["lr"],
        batch_size=settings["batch"],
        k=settings["k"],
        epsilon=settings["epsilon"],
        seed=settings["seed"],
        reproject_every=settings["reproject_every"],
        task_kind=KIND_ALIASES[settings["task_kind"]],
    )


def input_hashes(args, dictionary, model) -> dict:
    hashes = {
        "source_bundle": dictionary.content_hash(),
        "model": model.param_hash(),
    }
    if getattr(args, "dataset", None):
        hashes["dataset"] = _sha256_file(args.dataset)
    return hashes


def cmd_train(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    settings = resolve_task(args)
    vocab, _, dictionary, model = load_inputs(args)
    dataset = load_dataset(args, vocab, KIND_ALIASES[settings["task_kind"]])
    dataset = prepare_split(dataset, settings)
    mapping = build_mapping(dataset, model, settings)
    cfg = train_config(settings)
    manifest = RunManifest("train", settings, input_hashes(args, dictionary, model),
                           settings["seed"])

    target_init = random_target_embeddings(vocab, dictionary.dim, settings["seed"])
    theta, history = train_r2dl(dataset, dictionary, target_init, model, mapping, cfg)

    atomic_artifact(out_dir / "theta.tsv", lambda p: save_theta(theta, p))
    atomic_artifact(out_dir / "history.csv", lambda p: history.to_csv(p))
    atomic_artifact(out_dir / "mapping.json", lambda p: save_mapping(mapping, p))
    split_doc = {"train": list(dataset.train_indices), "test": list(dataset.test_indices)}
    atomic_write_text(out_dir / "split.json", json.dumps(split_doc) + "\n")
    manifest.finish(out_dir)
    last = history.records[-1]
    print(f"trained {settings['task']}: loss={last.loss:.4f} metric={last.metric:.4f} "
          f"nnz={last.nnz} -> {out_dir}")
    return EXIT_OK


def _load_run(args, dictionary, vocab):
    run_dir = Path(args.run)
    run_doc = json.loads((run_dir / "run.json").read_text(encoding="utf-8"))
    theta = load_theta(run_dir / "theta.tsv", target_rows=len(vocab),
                       source_cols=dictionary.rows)
    if theta.dictionary_hash != dictionary.content_hash():
        raise HashMismatchError(
            "theta.tsv was coded against a different source bundle"
        )
    recorded = run_doc.get("inputs", {}).get("source_bundle")
    if recorded and recorded != dictionary.content_hash():
        raise HashMismatchError("run manifest records a different source bundle")
    mapping = load_mapping(run_dir / "mapping.json")
    split_doc = json.loads((run_dir / "split.json").read_text(encoding="utf-8"))
    return run_doc, theta, mapping, split_doc


def evaluate_split(dataset, theta, dictionary, model, mapping):
    """Test-split metrics for a trained map: accuracy reports for
    classification kinds, rank correlation for regression."""
    test = list(dataset.test_indices)
    if not test:
        raise DatasetParseError("dataset has an empty test split")
    pooled, token = predict_logits(theta, dictionary, model, dataset, test)
    task = TaskContext(dataset, mapping, model)

    if dataset.task_kind == "sequence_classification":
        truth = [task.source_labels[i] for i in test]
        preds = [int(np.argmax(lg)) for lg in pooled]
        confusion = confusion_matrix(preds, truth, model.n_classes)
        value = top_n_accuracy(rankings_from_logits(np.array(pooled)), truth, 1)
        return EvalReport(task="eval", metric_kind="top1_accuracy", value=value,
                          n_test=len(test), confusion=confusion.tolist())
    if dataset.task_kind == "token_classification":
        preds, truth = [], []
        for idx, logits in zip(test, token):
            labels = task.source_labels[idx]
            preds.extend(int(np.argmax(row)) for row in logits[: len(labels)])
            truth.extend(labels)
        confusion = confusion_matrix(preds, truth, model.n_classes)
        value = float(np.mean(np.asarray(preds) == np.asarray(truth)))
        return EvalReport(task="eval", metric_kind="top1_accuracy", value=value,
                          n_test=len(test), confusion=confusion.tolist(),
                          extra={"n_tokens": len(truth)})
    values = [expected_value(mapping, softmax(lg)) for lg in pooled]
    truth = [dataset.items[i][1] for i in test]
    try:
        rho = spearman_rho(truth, values)
    except UndefinedCorrelationError:
        rho = float("nan")
    return EvalReport(task="eval", metric_kind="spearman_rho", value=rho, n_test=len(test))


def cmd_eval(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab, _, dictionary, model = load_inputs(args)
    run_doc, theta, mapping, split_doc = _load_run(args, dictionary, vocab)
    settings = run_doc["config"]
    dataset = load_dataset(args, vocab, KIND_ALIASES[settings["task_kind"]])
    dataset = replace(dataset, train_indices=tuple(split_doc["train"]),
                      test_indices=tuple(split_doc["test"]))

    manifest = RunManifest("eval", settings, input_hashes(args, dictionary, model),
                           settings["seed"])
    report = evaluate_split(dataset, theta, dictionary, model, mapping)
    report.task = settings.get("task", "eval")
    report.train_size = len(split_doc["train"])
    if "accuracy" in report.metric_kind:
        report.extra["data_efficiency"] = data_efficiency(report.value,
                                                          len(split_doc["train"]))
        if args.pretrain_corpus_size:
            report.extra["data_efficiency_with_pretraining"] = data_efficiency(
                report.value, args.pretrain_corpus_size + len(split_doc["train"])
            )
    atomic_artifact(out_dir / "report.json", lambda p: write_report_json(report, p))
    if report.confusion is not None:
        rows = "\n".join(",".join(str(v) for v in row) for row in report.confusion)
        atomic_write_text(out_dir / "confusion.csv", rows + "\n")
    manifest.finish(out_dir)
    print(f"eval {report.task}: {report.metric_kind}={report.value:.4f} "
          f"n_test={report.n_test}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    settings = resolve_task(args)
    vocab, _, dictionary, model = load_inputs(args)
    dataset = load_dataset(args, vocab, KIND_ALIASES[settings["task_kind"]])
    dataset = prepare_split(dataset, settings)
    fractions = [float(f) for f in args.fractions.split(",")]
    manifest = RunManifest("sweep", {**settings, "fractions": fractions},
                           input_hashes(args, dictionary, model), settings["seed"])

    def run_one(sub_dataset, run_seed):
        sub_settings = dict(settings, seed=run_seed)
        cfg = train_config(sub_settings)
        mapping = build_mapping(sub_dataset, model, sub_settings)
        target_init = random_target_embeddings(vocab, dictionary.dim, run_seed)
        theta, _ = train_r2dl(sub_dataset, dictionary, target_init, model, mapping, cfg)
        report = evaluate_split(sub_dataset, theta, dictionary, model, mapping)
        report.task = settings["task"]
        return report

    reports = restricted_sweep(dataset, fractions, run_one, seed=settings["seed"])
    atomic_artifact(out_dir / "sweep.csv", lambda p: write_sweep_csv(reports, p))
    manifest.finish(out_dir)
    for r in reports:
        print(f"fraction {r.fraction}: {r.metric_kind}={r.value:.4f} "
              f"(train {r.train_size})")
    return EXIT_OK


def cmd_distances(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab, _, dictionary, model = load_inputs(args)
    run_doc, theta, mapping, split_doc = _load_run(args, dictionary, vocab)
    settings = run_doc["config"]
    dataset = load_dataset(args, vocab, KIND_ALIASES[settings["task_kind"]])
    manifest = RunManifest("distances", settings, input_hashes(args, dictionary, model),
                           settings["seed"])

    indices = (split_doc["test"] or split_doc["train"])[: args.limit]
    id_seqs = [dataset.items[i][0] for i in indices]
    strings = [detokenize(s, vocab) for s in id_seqs]
    evo = evolutionary_distance_matrix(strings)
    emb = embedding_distance_matrix(theta, dictionary, model, id_seqs)
    rho, rows = distance_correlation_report(evo, emb)
    atomic_artifact(out_dir / "distances.csv", lambda p: write_distance_csv(rows, p))
    atomic_write_text(out_dir / "distance_report.json",
                      json.dumps({"spearman_rho": rho, "n_sequences": len(indices)},
                                 indent=2) + "\n")
    residue = residue_embedding_distance_matrix(theta, dictionary)
    residue_csv = "\n".join(",".join(f"{v:.17g}" for v in row) for row in residue)
    atomic_write_text(out_dir / "residue_distances.csv", residue_csv + "\n")
    manifest.finish(out_dir)
    print(f"distances over {len(indices)} sequences: spearman_rho={rho:.4f}")
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab, _, dictionary, model = load_inputs(args)
    run_doc, theta, mapping, split_doc = _load_run(args, dictionary, vocab)
    settings = run_doc["config"]
    dataset = load_dataset(args, vocab, KIND_ALIASES[settings["task_kind"]])
    manifest = RunManifest("export-embeddings", settings,
                           input_hashes(args, dictionary, model), settings["seed"])
    pooled = pooled_sequence_embeddings(theta, dictionary, model, dataset.sequences())
    atomic_artifact(out_dir / "embeddings.csv",
                    lambda p: write_pooled_embeddings_csv(pooled, p))
    manifest.finish(out_dir)
    print(f"exported {pooled.shape[0]} pooled embeddings ({pooled.shape[1]} dims)")
    return EXIT_OK


def cmd_inspect_theta(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab = amino_acid_vocabulary()
    src_vocab, dictionary = load_bundle(args.source_bundle)
    theta = load_theta(args.theta, target_rows=len(vocab), source_cols=dictionary.rows)
    if theta.dictionary_hash != dictionary.content_hash():
        raise HashMismatchError("theta.tsv was coded against a different source bundle")

    lines = ["target_token\trank\tsource_token\tcoefficient\n"]
    for t, row in enumerate(theta.rows):
        ranked = sorted(row, key=lambda jc: (-abs(jc[1]), jc[0]))[: args.top]
        for rank, (j, c) in enumerate(ranked, start=1):
            lines.append(f"{vocab.lookup(t)}\t{rank}\t{src_vocab.lookup(j)}\t{c:.6g}\n")
    text = "".join(lines)
    atomic_write_text(out_dir / "theta_inspect.tsv", text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="r2dl",
        description="Reprogram a frozen text classifier for protein sequence tasks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, dataset=True):
        p.add_argument("--source-bundle", required=True, help="source dictionary bundle dir")
        p.add_argument("--model", required=True, help="frozen model dir")
        if dataset:
            p.add_argument("--dataset", required=True, help="CSV or FASTA dataset")
            p.add_argument("--sequence-col", default="sequence")
            p.add_argument("--label-col", default="label")
        p.add_argument("--out", required=True, help="output directory")

    def add_train_flags(p):
        p.add_argument("--config", help="flat key=value file with training defaults")
        p.add_argument("--task", help=f"preset name: {', '.join(sorted(PRESETS))}")
        p.add_argument("--task-kind", dest="task_kind", choices=sorted(KIND_ALIASES))
        p.add_argument("--k", type=int)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--outer-iters", type=int)
        p.add_argument("--inner-iters", type=int, dest="inner_iters")
        p.add_argument("--lr", type=float)
        p.add_argument("--batch", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--reproject-every", type=int, dest="reproject_every")
        p.add_argument("--train-size", type=int, dest="train_size")
        p.add_argument("--test-size", type=int, dest="test_size")

    p_train = sub.add_parser("train", help="train a coefficient map")
    add_common(p_train)
    add_train_flags(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a trained run on the test split")
    add_common(p_eval)
    p_eval.add_argument("--run", required=True, help="directory written by train")
    p_eval.add_argument("--pretrain-corpus-size", type=int, dest="pretrain_corpus_size")
    p_eval.set_defaults(fn=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="train at nested training-set fractions")
    add_common(p_sweep)
    add_train_flags(p_sweep)
    p_sweep.add_argument("--fractions", default="1.0,0.8,0.6,0.4")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_dist = sub.add_parser("distances",
                            help="alignment vs embedding distance correlation")
    add_common(p_dist)
    p_dist.add_argument("--run", required=True)
    p_dist.add_argument("--limit", type=int, default=30,
                        help="max sequences to align (quadratic cost)")
    p_dist.set_defaults(fn=cmd_distances)

    p_exp = sub.add_parser("export-embeddings",
                           help="pooled per-sequence embeddings as CSV")
    add_common(p_exp)
    p_exp.add_argument("--run", required=True)
    p_exp.set_defaults(fn=cmd_export_embeddings)

    p_ins = sub.add_parser("inspect-theta",
                           help="top source tokens per target token")
    p_ins.add_argument("--theta", required=True)
    p_ins.add_argument("--source-bundle", required=True)
    p_ins.add_argument("--out", required=True)
    p_ins.add_argument("--top", type=int, default=8)
    p_ins.set_defaults(fn=cmd_inspect_theta)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (HashMismatchError, DictionaryHashMismatchError) as exc:
        print(f"hash mismatch: {exc}", file=sys.stderr)
        return EXIT_HASH
    except (ConfigError, LabelMappingError, TrainingError, SparseCodeError,
            MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetParseError, BundleError, ModelFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
