"""Encoder/decoder wiring, inference path, and checkpoint serialization."""

import numpy as np
import pytest
from gradcheck import check_grads

from attnvae import training
from attnvae.errors import ContractError, DataError, DimensionError
from attnvae.model import (ModelConfig, attention_maps, forward_infer,
                           forward_train, init_model, load_model, save_model)
from attnvae.seeding import substream

RNG = np.random.default_rng(11)

SMALL = ModelConfig(n_features=3, window=4, latent_dim=2, outer_units=3,
                    inner_units=2, n_heads=2, d_head=2)


def small_model(seed=0, **overrides):
    cfg = SMALL if not overrides else ModelConfig(
        **{**SMALL.__dict__, "d_head": 0, **overrides})
    return init_model(cfg, substream(seed, "init"))


def test_config_validation():
    with pytest.raises(ContractError):
        ModelConfig(n_features=0, window=4, n_heads=1).validate()
    with pytest.raises(ContractError):
        ModelConfig(n_features=3, window=1).validate()
    with pytest.raises(ContractError):
        init_model(ModelConfig(n_features=3, window=4, n_heads=-1, d_head=1),
                   substream(0, "init"))


def test_d_head_defaults_to_features_over_heads():
    assert ModelConfig(n_features=13, window=8, n_heads=4).d_head == 3
    assert ModelConfig(n_features=2, window=8, n_heads=8).d_head == 1
    assert ModelConfig(n_features=13, window=8, n_heads=4, d_head=2).d_head == 2


def test_forward_train_shapes():
    model = small_model()
    x = RNG.standard_normal((5, 4, 3))
    eps = RNG.standard_normal((5, 4, 2))
    out = forward_train(model, x, eps)
    assert out["mu_x"].shape == (5, 4, 3)
    assert out["log_var_x"].shape == (5, 4, 3)
    assert out["mu_z"].shape == (5, 4, 2)
    assert out["log_var_z"].shape == (5, 4, 2)
    assert out["z"].shape == (5, 4, 2)


def test_zero_eps_matches_inference_bitwise():
    model = small_model()
    x = RNG.standard_normal((5, 4, 3))
    out = forward_train(model, x, np.zeros((5, 4, 2)))
    mu_x, log_var_x = forward_infer(model, x)
    np.testing.assert_array_equal(out["mu_x"].data, mu_x)
    np.testing.assert_array_equal(out["log_var_x"].data, log_var_x)
    np.testing.assert_array_equal(out["z"].data, out["mu_z"].data)


def test_latent_sample_uses_eps_scale():
    model = small_model()
    x = RNG.standard_normal((2, 4, 3))
    eps = RNG.standard_normal((2, 4, 2))
    out = forward_train(model, x, eps)
    expected = out["mu_z"].data + eps * np.exp(0.5 * out["log_var_z"].data)
    np.testing.assert_allclose(out["z"].data, expected, rtol=1e-14)


def test_batch_rows_independent():
    model = small_model()
    x = RNG.standard_normal((6, 4, 3))
    full_mu, full_lv = forward_infer(model, x)
    for n in range(6):
        one_mu, one_lv = forward_infer(model, x[n:n + 1])
        np.testing.assert_allclose(one_mu[0], full_mu[n], rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(one_lv[0], full_lv[n], rtol=1e-12, atol=1e-14)


def test_ablation_changes_output_and_maps_unavailable():
    with_attn = small_model()
    without = small_model(use_attention=False)
    assert any(k.startswith("attn.") for k in with_attn.params)
    assert not any(k.startswith("attn.") for k in without.params)
    x = RNG.standard_normal((2, 4, 3))
    maps = attention_maps(with_attn, x)
    assert maps.shape == (2, 2, 4, 4)
    np.testing.assert_allclose(maps.sum(axis=-1), np.ones((2, 2, 4)), atol=1e-12)
    with pytest.raises(DataError):
        attention_maps(without, x)


def test_logvar_outputs_respect_clip():
    model = small_model()
    for tensor in model.params.values():
        tensor.data *= 40.0
    x = RNG.standard_normal((3, 4, 3)) * 50.0
    _, log_var_x = forward_infer(model, x)
    assert np.abs(log_var_x).max() <= 10.0 + 1e-12


def test_input_shape_errors():
    model = small_model()
    with pytest.raises(DimensionError):
        forward_infer(model, RNG.standard_normal((4, 3)))
    with pytest.raises(DimensionError):
        forward_infer(model, RNG.standard_normal((2, 5, 3)))
    with pytest.raises(DimensionError):
        forward_infer(model, RNG.standard_normal((2, 4, 2)))
    with pytest.raises(DimensionError):
        forward_train(model, RNG.standard_normal((2, 4, 3)),
                      RNG.standard_normal((2, 4, 3)))


def test_gradients_flow_to_every_parameter():
    model = small_model()
    x = RNG.standard_normal((2, 4, 3))
    eps = RNG.standard_normal((2, 4, 2))

    def loss():
        out = forward_train(model, x, eps)
        terms = training.loss_terms(x, out, beta=0.5)
        return terms["total"]

    worst = check_grads(loss, dict(model.named_parameters()), tol=5e-4)
    assert worst < 5e-4


def test_parameter_count_small_config():
    model = small_model()
    total = sum(t.data.size for _, t in model.named_parameters())
    assert model.n_parameters() == total
    assert total > 0


def test_save_load_round_trip_bitwise(tmp_path):
    model = small_model(seed=3)
    path = tmp_path / "model.bin"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.config == model.config
    assert list(loaded.params) == list(model.params)
    for name, tensor in model.named_parameters():
        np.testing.assert_array_equal(loaded.params[name].data, tensor.data)
    x = RNG.standard_normal((10, 4, 3))
    mu_a, lv_a = forward_infer(model, x)
    mu_b, lv_b = forward_infer(loaded, x)
    np.testing.assert_array_equal(mu_a, mu_b)
    np.testing.assert_array_equal(lv_a, lv_b)


def test_load_rejects_corrupt_files(tmp_path):
    model = small_model()
    path = tmp_path / "model.bin"
    save_model(model, path)
    raw = path.read_bytes()

    bad_magic = tmp_path / "magic.bin"
    bad_magic.write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(DataError):
        load_model(bad_magic)

    truncated = tmp_path / "short.bin"
    truncated.write_bytes(raw[:len(raw) // 2])
    with pytest.raises(DataError):
        load_model(truncated)

    bad_version = tmp_path / "version.bin"
    bad_version.write_bytes(raw[:8] + b"\xff\xff\xff\xff" + raw[12:])
    with pytest.raises(DataError):
        load_model(bad_version)


def test_init_is_reproducible_and_seed_sensitive():
    a = small_model(seed=4)
    b = small_model(seed=4)
    c = small_model(seed=5)
    for name, tensor in a.named_parameters():
        np.testing.assert_array_equal(tensor.data, b.params[name].data)
    assert any(not np.array_equal(t.data, c.params[n].data)
               for n, t in a.named_parameters())
