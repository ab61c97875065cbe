"""Export CLI: pull the embedding table and classification head out of a
transformer checkpoint into the portable bundle and frozen-model formats."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from r2dl.embeddings import BundleError

from .checkpoint import Checkpoint, CheckpointError, wordpiece_tokenize
from .export import ExportSpec, export_embeddings, export_frozen_head


def load_probes(path, ckpt: Checkpoint) -> list[list[int]]:
    """One probe per line, tokenized against the checkpoint vocabulary."""
    vocab_index = {t: i for i, t in enumerate(ckpt.vocab_tokens)}
    probes = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        ids = wordpiece_tokenize(line, vocab_index)
        if ids:
            probes.append(ids)
    if not probes:
        raise CheckpointError(f"no usable probes in {path}")
    return probes


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="r2dl-export",
        description="Export a checkpoint's embeddings and head for reprogramming",
    )
    parser.add_argument("--checkpoint", required=True, help="checkpoint directory")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--layer", default="auto",
                        help="embedding tensor name (default: input embedding table)")
    parser.add_argument("--head", default="auto", help="head tensor name")
    parser.add_argument("--distill", action="store_true",
                        help="fit a mean-pool MLP to the checkpoint logits")
    parser.add_argument("--probes", help="text file, one probe input per line")
    parser.add_argument("--hidden", type=int, default=32)
    parser.add_argument("--steps", type=int, default=800)
    parser.add_argument("--lr", type=float, default=0.01)
    parser.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.distill and not args.probes:
        print("error: --distill requires --probes", file=sys.stderr)
        return 2
    spec = ExportSpec(
        checkpoint=args.checkpoint,
        out=args.out,
        layer=args.layer,
        head=args.head,
        distill=args.distill,
        distill_hidden=args.hidden,
        distill_steps=args.steps,
        distill_lr=args.lr,
        seed=args.seed,
    )
    try:
        bundle = export_embeddings(spec)
        probes = None
        if args.probes:
            probes = load_probes(args.probes, Checkpoint(args.checkpoint))
        model_dir, report = export_frozen_head(spec, probes=probes)
    except (CheckpointError, BundleError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"bundle -> {bundle}")
    print(f"model  -> {model_dir}")
    if report.get("n_probes"):
        print(f"fidelity: agreement={report['agreement']:.3f} "
              f"max|dlogit|={report['max_abs_logit_diff']:.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
