import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from r2dl.cli import main
from r2dl.bioseq import detokenize
from r2dl.embeddings import Vocabulary, amino_acid_vocabulary, save_bundle
from r2dl.frozen_model import save_frozen_model
from r2dl.sparse_map import CoefficientMap, save_theta


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, source, target_task):
    """Bundle + frozen model + CSV dataset derived from the synthetic task."""
    root = tmp_path_factory.mktemp("cli")
    v_s, model, _ = source
    dataset, _ = target_task
    vocab = amino_acid_vocabulary()

    src_vocab = Vocabulary(tuple(f"w{i}" for i in range(v_s.rows)))
    save_bundle(src_vocab, v_s, root / "bundle", meta={"source_model": "synthetic"})
    save_frozen_model(model, root / "model")

    lines = ["sequence,label"]
    for seq, label in dataset.items:
        lines.append(f"{detokenize(seq, vocab)},{dataset.label_names[label]}")
    (root / "data.csv").write_text("\n".join(lines) + "\n")
    return root


def base_flags(workspace):
    return ["--source-bundle", str(workspace / "bundle"),
            "--model", str(workspace / "model"),
            "--dataset", str(workspace / "data.csv")]


def train_flags(workspace, out, seed=0, extra=()):
    return (["train"] + base_flags(workspace)
            + ["--out", str(out), "--outer-iters", "15", "--k", "8",
               "--lr", "0.05", "--batch", "32", "--seed", str(seed),
               "--train-size", "150", "--test-size", "50"] + list(extra))


@pytest.fixture(scope="module")
def trained_run(workspace, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(train_flags(workspace, out)) == 0
    return out


class TestTrain:
    def test_artifacts_written(self, trained_run):
        for name in ("theta.tsv", "history.csv", "mapping.json", "run.json",
                     "split.json"):
            assert (trained_run / name).is_file()

    def test_manifest_records_hashes_and_seed(self, workspace, trained_run):
        doc = json.loads((trained_run / "run.json").read_text())
        assert doc["seed"] == 0
        assert doc["command"] == "train"
        matrix = (workspace / "bundle" / "matrix.bin").read_bytes()
        assert doc["inputs"]["source_bundle"] == hashlib.sha256(matrix).hexdigest()
        data = (workspace / "data.csv").read_bytes()
        assert doc["inputs"]["dataset"] == hashlib.sha256(data).hexdigest()
        assert "started" in doc and "finished" in doc

    def test_rerun_same_seed_byte_identical(self, workspace, trained_run, tmp_path):
        out = tmp_path / "again"
        assert main(train_flags(workspace, out)) == 0
        assert (out / "theta.tsv").read_bytes() == (trained_run / "theta.tsv").read_bytes()
        assert (out / "history.csv").read_bytes() == (trained_run / "history.csv").read_bytes()

    def test_zero_lr_constant_loss(self, workspace, tmp_path):
        out = tmp_path / "zero"
        assert main(train_flags(workspace, out, extra=["--lr", "0"])) == 0
        rows = (out / "history.csv").read_text().strip().splitlines()[1:]
        losses = {line.split(",")[1] for line in rows}
        assert len(losses) == 1

    def test_unknown_task_is_config_error(self, workspace, tmp_path, capsys):
        code = main(["train"] + base_flags(workspace)
                    + ["--out", str(tmp_path), "--task", "nosuchtask"])
        assert code == 2
        assert "--task" in capsys.readouterr().err

    def test_bad_residue_is_data_error(self, workspace, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("sequence,label\nACDK,pos\nAB1K,neg\n")
        code = main(["train", "--source-bundle", str(workspace / "bundle"),
                     "--model", str(workspace / "model"), "--dataset", str(bad),
                     "--out", str(tmp_path / "out"), "--outer-iters", "2"])
        assert code == 3
        assert "line 3" in capsys.readouterr().err

    def test_inputs_not_mutated(self, workspace, trained_run):
        # hashes recorded at train time still match the files on disk
        doc = json.loads((trained_run / "run.json").read_text())
        matrix = (workspace / "bundle" / "matrix.bin").read_bytes()
        data = (workspace / "data.csv").read_bytes()
        assert hashlib.sha256(matrix).hexdigest() == doc["inputs"]["source_bundle"]
        assert hashlib.sha256(data).hexdigest() == doc["inputs"]["dataset"]


class TestEval:
    def test_report_written(self, workspace, trained_run, tmp_path):
        out = tmp_path / "eval"
        code = main(["eval"] + base_flags(workspace)
                    + ["--run", str(trained_run), "--out", str(out)])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["metric"] == "top1_accuracy"
        assert 0.0 <= report["value"] <= 1.0
        assert report["n_test"] == 50
        confusion = np.array(report["confusion"])
        assert confusion.sum() == 50
        assert (out / "confusion.csv").is_file()
        assert report["data_efficiency"] == pytest.approx(report["value"] / 150)

    def test_eval_deterministic(self, workspace, trained_run, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["eval"] + base_flags(workspace)
                        + ["--run", str(trained_run), "--out", str(out)]) == 0
            outs.append((out / "report.json").read_bytes())
        assert outs[0] == outs[1]

    def test_pretrain_corpus_flag_adds_ratio(self, workspace, trained_run, tmp_path):
        out = tmp_path / "eff"
        assert main(["eval"] + base_flags(workspace)
                    + ["--run", str(trained_run), "--out", str(out),
                       "--pretrain-corpus-size", "1700000"]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["data_efficiency_with_pretraining"] == \
            pytest.approx(report["value"] / 1700150)

    def test_wrong_bundle_exits_4(self, workspace, trained_run, tmp_path, source):
        rng = np.random.default_rng(5)
        other = rng.standard_normal(source[0].data.shape)
        from r2dl.embeddings import EmbeddingMatrix
        save_bundle(Vocabulary(tuple(f"w{i}" for i in range(other.shape[0]))),
                    EmbeddingMatrix(other), tmp_path / "other")
        code = main(["eval", "--source-bundle", str(tmp_path / "other"),
                     "--model", str(workspace / "model"),
                     "--dataset", str(workspace / "data.csv"),
                     "--run", str(trained_run), "--out", str(tmp_path / "out")])
        assert code == 4


class TestSweep:
    def test_rows_per_fraction_and_method(self, workspace, tmp_path):
        out = tmp_path / "sweep"
        code = main(["sweep"] + base_flags(workspace)
                    + ["--out", str(out), "--outer-iters", "8", "--k", "8",
                       "--lr", "0.05", "--batch", "32", "--seed", "0",
                       "--train-size", "150", "--test-size", "50",
                       "--fractions", "1.0,0.8,0.6,0.4"])
        assert code == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        header, rows = lines[0], lines[1:]
        assert header.startswith("fraction,method")
        fractions = {row.split(",")[0] for row in rows}
        assert fractions == {"1.0", "0.8", "0.6", "0.4"}
        trained = [r for r in rows if r.split(",")[1] == "trained"]
        assert len(trained) == 4
        # uniform + majority baselines accompany each fraction
        assert len(rows) == 12


class TestDistances:
    def test_report_and_csv(self, workspace, trained_run, tmp_path):
        out = tmp_path / "dist"
        code = main(["distances"] + base_flags(workspace)
                    + ["--run", str(trained_run), "--out", str(out),
                       "--limit", "10"])
        assert code == 0
        doc = json.loads((out / "distance_report.json").read_text())
        assert -1.0 <= doc["spearman_rho"] <= 1.0
        assert doc["n_sequences"] == 10
        lines = (out / "distances.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 10 * 9 // 2


class TestExportEmbeddings:
    def test_row_count_matches_dataset(self, workspace, trained_run, tmp_path, target_task):
        out = tmp_path / "emb"
        code = main(["export-embeddings"] + base_flags(workspace)
                    + ["--run", str(trained_run), "--out", str(out)])
        assert code == 0
        lines = (out / "embeddings.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + len(target_task[0].items)


class TestInspectTheta:
    def test_one_hot_lists_single_source(self, workspace, tmp_path, source, capsys):
        v_s = source[0]
        rows = [((t % v_s.rows, 1.0),) for t in range(21)]
        theta = CoefficientMap(21, v_s.rows, rows, 8, v_s.content_hash())
        save_theta(theta, tmp_path / "theta.tsv")
        out = tmp_path / "inspect"
        code = main(["inspect-theta", "--theta", str(tmp_path / "theta.tsv"),
                     "--source-bundle", str(workspace / "bundle"),
                     "--out", str(out), "--top", "8"])
        assert code == 0
        lines = (out / "theta_inspect.tsv").read_text().strip().splitlines()
        assert len(lines) == 1 + 21  # one row per target token
        for line in lines[1:]:
            token, rank, src, coeff = line.split("\t")
            assert rank == "1"
            assert float(coeff) == 1.0


class TestPresets:
    def test_amp_preset_values(self):
        from r2dl.cli import PRESETS
        amp = PRESETS["amp"]
        assert amp["epsilon"] == 0.045
        assert amp["inner_iters"] == 10000
        assert amp["train_size"] == 6489 and amp["test_size"] == 812
        assert amp["alt_inner_iters"] == (100, 250)

    def test_all_presets_well_formed(self):
        from r2dl.cli import KIND_ALIASES, PRESETS
        expected = {
            "toxicity": (0.045, 10000, 8153, 1020),
            "secondary-structure": (0.38, 9000, 7416, 1854),
            "stability": (0.29, 6000, 44900, 11226),
            "homology": (0.73, 4000, 10438, 2610),
            "solubility": (0.42, 9000, 35100, 8775),
        }
        for name, (eps, iters, train, test) in expected.items():
            preset = PRESETS[name]
            assert preset["epsilon"] == eps
            assert preset["inner_iters"] == iters
            assert preset["train_size"] == train and preset["test_size"] == test
            assert preset["task_kind"] in KIND_ALIASES

    def test_missing_run_dir_is_data_error(self, workspace, tmp_path):
        code = main(["eval"] + base_flags(workspace)
                    + ["--run", str(tmp_path / "nonexistent"),
                       "--out", str(tmp_path / "out")])
        assert code == 3

    def test_config_file_defaults_with_flag_override(self, workspace, tmp_path):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("# defaults\nouter_iters=4\nlr=0.05\nk=8\nseed=3\n"
                       "train-size=150\ntest_size=50\nbatch=32\n")
        out = tmp_path / "run"
        code = main(["train"] + base_flags(workspace)
                    + ["--out", str(out), "--config", str(cfg),
                       "--outer-iters", "2"])  # flag beats file
        assert code == 0
        rows = (out / "history.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + 2
        doc = json.loads((out / "run.json").read_text())
        assert doc["config"]["seed"] == 3 and doc["config"]["k"] == 8

    def test_config_file_unknown_key(self, workspace, tmp_path, capsys):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("warp_speed=9\n")
        code = main(["train"] + base_flags(workspace)
                    + ["--out", str(tmp_path / "o"), "--config", str(cfg)])
        assert code == 2
        assert "warp_speed" in capsys.readouterr().err


class TestEnvValidation:
    def test_bad_threads_cap_is_config_error(self, workspace, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("R2DL_THREADS", "zero")
        code = main(train_flags(workspace, tmp_path / "out", extra=["--outer-iters", "1"]))
        assert code == 2
        assert "R2DL_THREADS" in capsys.readouterr().err

    def test_threads_cap_recorded(self, workspace, tmp_path, monkeypatch):
        monkeypatch.setenv("R2DL_THREADS", "4")
        out = tmp_path / "out"
        assert main(train_flags(workspace, out, extra=["--outer-iters", "1"])) == 0
        doc = json.loads((out / "run.json").read_text())
        assert doc["threads_cap"] == 4


class TestDistancesResidueMatrix:
    def test_residue_matrix_written(self, workspace, trained_run, tmp_path):
        out = tmp_path / "dist"
        assert main(["distances"] + base_flags(workspace)
                    + ["--run", str(trained_run), "--out", str(out),
                       "--limit", "8"]) == 0
        rows = (out / "residue_distances.csv").read_text().strip().splitlines()
        assert len(rows) == 21  # one row per target token incl. pad
        assert len(rows[0].split(",")) == 21
