import numpy as np
import pytest

from hypersep import autodiff as ad
from hypersep.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from hypersep.dsp import ComplexSpectrogram, StftConfig, Waveform, stft
from hypersep.model import (
    DropoutPlan,
    ModelConfig,
    ModelError,
    forward_batch,
    forward_masks,
    init_params,
    leaf_probabilities,
    log_magnitude_features,
)


def tiny_config(mode="hyperbolic"):
    return ModelConfig(mode=mode, curvature=0.1, embed_dim=2, n_layers=2, hidden=8)


def tiny_spec(rng, frames=6):
    cfg = StftConfig()
    bins = rng.standard_normal((frames, cfg.n_freqs)) + 1j * rng.standard_normal((frames, cfg.n_freqs))
    return ComplexSpectrogram(bins, cfg)


def test_forward_shapes_and_mask_normalization():
    rng = np.random.default_rng(0)
    model = init_params(tiny_config(), seed=1)
    X = tiny_spec(rng)
    parent, leaf, field_ = forward_masks(X, model)
    T, F = X.shape
    assert parent.shape == (2, T, F)
    assert leaf.shape == (5, T, F)
    assert field_.values.shape == (T, F, 2)
    np.testing.assert_allclose(parent.sum(axis=0), np.ones((T, F)), rtol=1e-12)
    np.testing.assert_allclose(leaf.sum(axis=0), np.ones((T, F)), rtol=1e-12)


def test_hyperbolic_embeddings_inside_ball():
    rng = np.random.default_rng(1)
    model = init_params(tiny_config(), seed=2)
    _, _, field_ = forward_masks(tiny_spec(rng), model)
    assert np.all(0.1 * np.sum(field_.values**2, axis=-1) < 1.0)
    norms = field_.normalized_norms()
    assert norms.shape == field_.values.shape[:2]
    assert np.all((norms >= 0) & (norms < 1))


def test_euclidean_mode_is_unprojected():
    cfg = tiny_config(mode="euclidean")
    model = init_params(cfg, seed=3)
    # scale the dense layer so embeddings exceed any unit ball: they must pass through untouched
    model.tensors["dense_b"] += 50.0
    rng = np.random.default_rng(2)
    _, _, field_ = forward_masks(tiny_spec(rng), model)
    assert field_.mode == "euclidean"
    assert np.max(np.linalg.norm(field_.values, axis=-1)) > 10.0
    with pytest.raises(ModelError):
        field_.normalized_norms()


def test_determinism_without_dropout():
    rng = np.random.default_rng(3)
    model = init_params(tiny_config(), seed=4)
    X = tiny_spec(rng)
    p1, l1, _ = forward_masks(X, model)
    p2, l2, _ = forward_masks(X, model)
    assert np.array_equal(p1, p2) and np.array_equal(l1, l2)


def test_dropout_seeded_determinism():
    rng = np.random.default_rng(4)
    model = init_params(tiny_config(), seed=5)
    X = tiny_spec(rng)
    a = leaf_probabilities(X, model, DropoutPlan.mc(0.5), np.random.default_rng(99))
    b = leaf_probabilities(X, model, DropoutPlan.mc(0.5), np.random.default_rng(99))
    c = leaf_probabilities(X, model, DropoutPlan.mc(0.5), np.random.default_rng(100))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_dropout_requires_rng():
    model = init_params(tiny_config(), seed=6)
    feats = np.zeros((1, 3, StftConfig().n_freqs))
    with pytest.raises(ModelError):
        from hypersep.model import encode

        encode(feats, model.as_parameters(), model.config, DropoutPlan.training(0.3), None)


def test_features_are_normalized_per_track():
    rng = np.random.default_rng(5)
    bins = rng.standard_normal((2, 7, 129)) + 1j * rng.standard_normal((2, 7, 129))
    feats = log_magnitude_features(bins)
    for b in range(2):
        assert abs(feats[b].mean()) < 1e-9
        assert abs(feats[b].std() - 1.0) < 1e-6


def test_gradients_reach_every_parameter_group():
    rng = np.random.default_rng(6)
    model = init_params(tiny_config(), seed=7)
    params = model.as_parameters()
    feats = log_magnitude_features(tiny_spec(rng, frames=4).bins)[None]
    parent_logits, leaf_logits, _ = forward_batch(feats, params, model.config)
    loss = ad.tensor_mean(ad.mul(parent_logits, parent_logits)) + ad.tensor_mean(
        ad.mul(leaf_logits, leaf_logits)
    )
    loss.backward()
    for name in ("enc0_f_wx", "enc1_b_wh", "dense_w", "parent_p", "parent_a", "leaf_p", "leaf_a"):
        assert params[name].grad is not None, name
        assert np.linalg.norm(params[name].grad) > 0, name


def test_full_model_gradient_matches_fd():
    # end-to-end finite-difference check through encoder, projection and heads
    rng = np.random.default_rng(7)
    config = ModelConfig(mode="hyperbolic", curvature=0.5, embed_dim=2, n_layers=1, hidden=3)
    model = init_params(config, seed=8)
    feats = log_magnitude_features(tiny_spec(rng, frames=2).bins)[None]
    w = rng.standard_normal((1, 2, 129, 5))

    def graph(p):
        _, leaf_logits, _ = forward_batch(feats, p, config)
        return ad.tensor_sum(ad.mul(leaf_logits, ad.Tensor(w)))

    bindings = {k: v for k, v in model.tensors.items() if k in ("leaf_p", "leaf_a", "dense_b")}
    fixed = {k: ad.Tensor(v) for k, v in model.tensors.items()}

    def wrapped(p):
        merged = dict(fixed)
        merged.update(p)
        return graph(merged)

    assert ad.finite_diff_check(wrapped, bindings) < 1e-4


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    model = init_params(tiny_config(), seed=9)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model, extra={"note": "test"})
    loaded, extra = load_checkpoint(path)
    assert extra == {"note": "test"}
    assert loaded.config == model.config
    assert set(loaded.tensors) == set(model.tensors)
    for name, arr in model.tensors.items():
        assert np.array_equal(loaded.tensors[name], arr), name
    # saving the loaded model reproduces the file byte-for-byte
    path2 = tmp_path / "model2.ckpt"
    save_checkpoint(path2, loaded, extra=extra)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
