import json

import numpy as np
import pytest

from r2dl.frozen_model import (
    EmbeddedBatch,
    FrozenClassifier,
    MeanPoolMLP,
    ModelFormatError,
    ShapeMismatchError,
    UnknownEncoderError,
    forward,
    input_gradient,
    load_frozen_model,
    save_frozen_model,
)

from oracles import central_difference, relative_error, scalar_mlp_logits


def random_batch(rng, model, n_seq=3, length=7, holes=True):
    x = rng.standard_normal((n_seq, length, model.dim))
    mask = np.ones((n_seq, length), dtype=bool)
    if holes:
        for i in range(n_seq):
            cut = int(rng.integers(2, length))
            mask[i, cut:] = False
    x[~mask] = 0.0
    return EmbeddedBatch(batch=x, mask=mask)


def loss_for_fd(model, batch, loss_grad):
    """Scalar probe whose input gradient is exactly input_gradient(...)."""
    out = forward(model, batch)
    if loss_grad.ndim == 2:
        return float((loss_grad * out.logits).sum())
    return float((loss_grad * out.token_logits).sum())


class TestLoadSave:
    def test_parameter_count_example(self, tmp_path):
        model = FrozenClassifier.build(16, 2, [32], "tanh", seed=0)
        save_frozen_model(model, tmp_path)
        loaded = load_frozen_model(tmp_path)
        count = sum(t.size for t in loaded.tensors().values())
        assert count == 16 * 32 + 32 + 32 * 2 + 2  # 610

    def test_manifest_blob_shape_mismatch(self, tmp_path):
        model = FrozenClassifier.build(16, 2, [32], "tanh", seed=0)
        save_frozen_model(model, tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        manifest["encoder"]["hidden"] = [64]
        for entry in manifest["tensors"]:
            if entry["name"] == "mlp.w0":
                entry["shape"] = [16, 64]
            if entry["name"] == "mlp.b0":
                entry["shape"] = [64]
            if entry["name"] == "head.w":
                entry["shape"] = [64, 2]
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(ShapeMismatchError):
            load_frozen_model(tmp_path)

    def test_load_twice_same_hash(self, tmp_path):
        save_frozen_model(FrozenClassifier.build(8, 3, [16, 8], "relu", seed=5), tmp_path)
        assert load_frozen_model(tmp_path).param_hash() == \
            load_frozen_model(tmp_path).param_hash()

    def test_unknown_encoder_kind(self, tmp_path):
        model = FrozenClassifier.build(8, 2, [16], "tanh", seed=1)
        save_frozen_model(model, tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        manifest["encoder"]["kind"] = "recurrent"
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(UnknownEncoderError):
            load_frozen_model(tmp_path)

    def test_blob_corruption_detected(self, tmp_path):
        save_frozen_model(FrozenClassifier.build(8, 2, [16], "tanh", seed=1), tmp_path)
        blob = tmp_path / "head.b.bin"
        raw = bytearray(blob.read_bytes())
        raw[-1] ^= 0x01
        blob.write_bytes(bytes(raw))
        with pytest.raises(ModelFormatError) as exc:
            load_frozen_model(tmp_path)
        assert exc.value.field == "sha256"

    def test_roundtrip_identical_bytes(self, tmp_path):
        for attention in (None, (2, 4)):
            model = FrozenClassifier.build(8, 2, [12], "tanh", seed=2,
                                           attention=attention)
            one = tmp_path / f"one{bool(attention)}"
            two = tmp_path / f"two{bool(attention)}"
            save_frozen_model(model, one)
            save_frozen_model(load_frozen_model(one), two)
            for f in sorted(one.iterdir()):
                assert f.read_bytes() == (two / f.name).read_bytes()


class TestForward:
    def test_zero_batch_zero_bias_gives_zero_logits(self):
        model = FrozenClassifier.build(6, 2, [], "tanh", seed=0)
        model = FrozenClassifier(6, 2, model.encoder_cfg, model.mlp,
                                 np.array(model.head_w), np.zeros(2))
        batch = EmbeddedBatch(batch=np.zeros((2, 4, 6)),
                              mask=np.ones((2, 4), dtype=bool))
        out = forward(model, batch)
        assert np.allclose(out.logits, 0.0)

    def test_duplicated_sequence_same_logits(self, rng):
        model = FrozenClassifier.build(8, 3, [16], "tanh", seed=1)
        x = rng.standard_normal((1, 5, 8))
        batch = EmbeddedBatch(batch=np.repeat(x, 2, axis=0),
                              mask=np.ones((2, 5), dtype=bool))
        out = forward(model, batch)
        assert np.array_equal(out.logits[0], out.logits[1])

    def test_matches_scalar_oracle(self, rng):
        for seed in range(3):
            model = FrozenClassifier.build(6, 2, [10, 7], "tanh", seed=seed)
            batch = random_batch(np.random.default_rng(seed), model, n_seq=4, length=6)
            got = forward(model, batch).logits
            want = scalar_mlp_logits(
                batch.batch, batch.mask, model.mlp.weights, model.mlp.biases,
                "tanh", model.head_w, model.head_b,
            )
            assert np.abs(got - np.array(want)).max() < 1e-10

    def test_token_logits_are_per_position_head(self, rng):
        model = FrozenClassifier.build(6, 3, [9], "relu", seed=4)
        batch = random_batch(rng, model, n_seq=2, length=5)
        out = forward(model, batch)
        hidden, _ = model.encode(batch)
        for s in range(2):
            for pos in range(5):
                if batch.mask[s, pos]:
                    want = hidden[s, pos] @ model.head_w + model.head_b
                    assert np.allclose(out.token_logits[s, pos], want)
                else:
                    assert not out.token_logits[s, pos].any()

    def test_permutation_consistency(self, rng):
        model = FrozenClassifier.build(8, 2, [16], "tanh", seed=3, attention=(2, 4))
        batch = random_batch(rng, model, n_seq=4, length=6)
        out = forward(model, batch).logits
        perm = [2, 0, 3, 1]
        permuted = EmbeddedBatch(batch=batch.batch[perm], mask=batch.mask[perm])
        assert np.array_equal(forward(model, permuted).logits, out[perm])

    def test_dim_mismatch(self, rng):
        model = FrozenClassifier.build(8, 2, [16], "tanh", seed=3)
        batch = EmbeddedBatch(batch=rng.standard_normal((1, 3, 5)),
                              mask=np.ones((1, 3), dtype=bool))
        with pytest.raises(ShapeMismatchError):
            forward(model, batch)


class TestInputGradient:
    def test_zero_loss_grad(self, rng):
        model = FrozenClassifier.build(8, 2, [16], "tanh", seed=3)
        batch = random_batch(rng, model)
        grad = input_gradient(model, batch, np.zeros((3, 2)))
        assert not grad.any()

    def test_linear_relu_case(self, rng):
        # relu kept in its linear region by a large positive bias, identity head:
        # gradient at each unmasked position is W g / L
        dim = 6
        w = rng.standard_normal((dim, dim)) * 0.2
        mlp = MeanPoolMLP([w], [np.full(dim, 3.0)], "relu")
        model = FrozenClassifier(dim, dim, {"kind": "mean_pool_mlp", "hidden": [dim],
                                            "activation": "relu"},
                                 mlp, np.eye(dim), np.zeros(dim))
        length = 4
        x = rng.standard_normal((1, length, dim)) * 0.5
        batch = EmbeddedBatch(batch=x, mask=np.ones((1, length), dtype=bool))
        g = rng.standard_normal((1, dim))
        grad = input_gradient(model, batch, g)
        expected = (w @ g[0]) / length
        for pos in range(length):
            assert np.allclose(grad[0, pos], expected, atol=1e-12)

    @pytest.mark.parametrize("attention", [None, (2, 4)])
    def test_finite_differences(self, attention):
        rng = np.random.default_rng(99 if attention else 98)
        model = FrozenClassifier.build(8, 2, [12], "tanh", seed=11,
                                       attention=attention)
        batch = random_batch(rng, model, n_seq=3, length=6)
        loss_grad = rng.standard_normal((3, 2))
        analytic = input_gradient(model, batch, loss_grad)

        flat = batch.batch.copy()
        coords = [tuple(c) for c in np.argwhere(batch.mask)]
        worst = 0.0
        for _ in range(25):
            s, pos = coords[int(rng.integers(len(coords)))]
            d = int(rng.integers(model.dim))

            def probe(values):
                x = flat.copy()
                x[s, pos, d] = values[0]
                return loss_for_fd(model, EmbeddedBatch(batch=x, mask=batch.mask),
                                   loss_grad)

            fd = central_difference(probe, [flat[s, pos, d]], 0)
            worst = max(worst, relative_error(fd, analytic[s, pos, d]))
        assert worst < 1e-4

    def test_token_level_gradient_fd(self, rng):
        model = FrozenClassifier.build(6, 3, [8], "tanh", seed=13)
        batch = random_batch(rng, model, n_seq=2, length=5)
        loss_grad = rng.standard_normal((2, 5, 3)) * batch.mask[:, :, None]
        analytic = input_gradient(model, batch, loss_grad)
        s, pos, d = 0, 1, 2
        assert batch.mask[s, pos]

        def probe(values):
            x = batch.batch.copy()
            x[s, pos, d] = values[0]
            return loss_for_fd(model, EmbeddedBatch(batch=x, mask=batch.mask),
                               loss_grad)

        fd = central_difference(probe, [batch.batch[s, pos, d]], 0)
        assert relative_error(fd, analytic[s, pos, d]) < 1e-4

    def test_masked_positions_zero_gradient(self, rng):
        model = FrozenClassifier.build(8, 2, [16], "tanh", seed=3, attention=(1, 8))
        batch = random_batch(rng, model)
        grad = input_gradient(model, batch, rng.standard_normal((3, 2)))
        assert not grad[~batch.mask].any()


class TestMaskInvariance:
    @pytest.mark.parametrize("attention", [None, (2, 4)])
    def test_appending_pads_changes_nothing(self, attention, rng):
        model = FrozenClassifier.build(8, 2, [12], "tanh", seed=7,
                                       attention=attention)
        x = rng.standard_normal((2, 5, 8))
        mask = np.ones((2, 5), dtype=bool)
        batch = EmbeddedBatch(batch=x, mask=mask)
        padded = EmbeddedBatch(
            batch=np.concatenate([x, np.zeros((2, 3, 8))], axis=1),
            mask=np.concatenate([mask, np.zeros((2, 3), dtype=bool)], axis=1),
        )
        assert np.allclose(forward(model, batch).logits,
                           forward(model, padded).logits, atol=1e-12)
        g = rng.standard_normal((2, 2))
        grad = input_gradient(model, batch, g)
        grad_padded = input_gradient(model, padded, g)
        assert np.allclose(grad, grad_padded[:, :5, :], atol=1e-12)
        assert not grad_padded[:, 5:, :].any()


class TestFrozenInvariant:
    def test_hash_stable_under_use(self, rng):
        model = FrozenClassifier.build(8, 2, [16], "tanh", seed=3, attention=(2, 4))
        before = model.param_hash()
        for _ in range(5):
            batch = random_batch(rng, model)
            forward(model, batch)
            input_gradient(model, batch, rng.standard_normal((3, 2)))
        assert model.param_hash() == before

    def test_parameters_not_writable(self):
        model = FrozenClassifier.build(8, 2, [16], "tanh", seed=3)
        with pytest.raises(ValueError):
            model.head_w[0, 0] = 1.0

    def test_batch_requires_zeroed_padding(self, rng):
        x = rng.standard_normal((1, 4, 3))
        mask = np.array([[True, True, False, False]])
        with pytest.raises(ValueError):
            EmbeddedBatch(batch=x, mask=mask)
