"""Acceptance for the exporter: primary-loader compatibility, tensor
fidelity, and exact head copies, with the primary suite independent of this
package."""

import re
import warnings
from pathlib import Path

import numpy as np
import pytest

from r2dl.embeddings import load_bundle
from r2dl.frozen_model import forward, load_frozen_model
from r2dl.training import make_batch

from r2dl_exporter import ExportSpec, export_embeddings, export_frozen_head

from test_exporter import make_checkpoint


def test_criterion_14_exporter(tmp_path):
    state = make_checkpoint(tmp_path / "ckpt", seed=21)
    spec = ExportSpec(checkpoint=str(tmp_path / "ckpt"), out=str(tmp_path / "out"))

    bundle = export_embeddings(spec)
    rng = np.random.default_rng(14)
    probes = [list(rng.integers(0, 30, rng.integers(3, 9))) for _ in range(16)]
    model_dir, report = export_frozen_head(spec, probes=probes)

    with warnings.catch_warnings(record=True) as captured:
        warnings.simplefilter("always")
        vocab, emb = load_bundle(bundle)
        model = load_frozen_model(model_dir)
    assert not captured, [str(w.message) for w in captured]

    table = state["bert.embeddings.word_embeddings.weight"].double().numpy()
    chosen = vocab.index("dog")
    assert np.abs(emb.row(chosen) - table[chosen]).max() < 1e-6

    weight = state["classifier.weight"].double().numpy()
    bias = state["classifier.bias"].double().numpy()
    table32 = table.astype(np.float32).astype(np.float64)
    weight32 = weight.astype(np.float32).astype(np.float64)
    bias32 = bias.astype(np.float32).astype(np.float64)
    worst = 0.0
    for ids in probes:
        got = forward(model, make_batch([tuple(ids)], table32)).logits[0]
        want = table32[ids].mean(axis=0) @ weight32.T + bias32
        worst = max(worst, float(np.abs(got - want).max()))
    assert worst <= 1e-6
    assert report["n_probes"] == 16

    # the primary test suite never touches this package
    primary_tests = Path(__file__).resolve().parents[2] / "tests"
    for test_file in primary_tests.glob("*.py"):
        assert not re.search(r"r2dl_exporter", test_file.read_text()), test_file

    print(f"\n[PASS] criterion 14: exported artifacts load cleanly, embedding rows "
          f"match within 1e-6, head copy max logit diff {worst:.2e} over 16 probes; "
          f"primary suite has no exporter dependency")
