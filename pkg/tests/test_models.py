import numpy as np
import pytest

from stablesde import autodiff as ad
from stablesde.autodiff import Tensor
from stablesde.errors import NegativeStateGSDE
from stablesde.models import (MODEL_KINDS, ModelConfig, build_model,
                              load_checkpoint, save_checkpoint, time_encoding)


def test_time_encoding_oracle():
    # [TRIVIAL] component 2i = sin(t / 10000^(2i/d)), 2i+1 = cos(...)
    enc = time_encoding(1.3, d_t=8)
    assert enc.shape == (8,)
    assert abs(enc[0] - np.sin(1.3)) < 1e-12
    assert abs(enc[1] - np.cos(1.3)) < 1e-12
    assert abs(enc[6] - np.sin(1.3 / 10000.0 ** (6 / 8))) < 1e-12
    with pytest.raises(ValueError):
        time_encoding(1.0, d_t=7)


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_build_and_fields(kind):
    cfg = ModelConfig(kind=kind, d_x=2, d_z=4, n_layers=1, n_hidden=8, seed=1)
    model = build_model(cfg)
    z = Tensor(np.random.default_rng(0).standard_normal((3, 4)))
    if kind == "gsde":
        z = Tensor(np.abs(z.data))
    x_t = np.zeros((3, 3))
    if kind == "ncde":
        flat = model.cde_matrix(0.3, z)
        assert flat.data.shape == (3, 4 * 3)
    else:
        f = model.drift(0.3, z, x_t)
        assert f.data.shape == (3, 4)
    g = model.diffusion(0.3, z)
    assert g.data.shape in ((3, 4), (1, 4))
    if kind in ("node", "ncde"):
        np.testing.assert_array_equal(np.broadcast_to(g.data, (3, 4)),
                                      np.zeros((3, 4)))


def test_build_rejects_unknown_kind():
    with pytest.raises(ValueError):
        build_model(ModelConfig(kind="resnet"))


def test_gsde_init_state_positive_and_drift_guard():
    cfg = ModelConfig(kind="gsde", d_x=2, d_z=4, seed=3)
    model = build_model(cfg)
    z0 = model.init_state(np.random.default_rng(1).standard_normal((5, 2)) * 10)
    assert np.all(z0.data > 0)
    with pytest.raises(NegativeStateGSDE):
        model.drift(0.0, Tensor(-np.ones((1, 4))), np.zeros((1, 3)))


def test_diffusion_forms():
    rng = np.random.default_rng(2)
    z = Tensor(np.abs(rng.standard_normal((3, 4))))
    lsde = build_model(ModelConfig(kind="lsde", d_x=1, d_z=4, seed=0))
    g = lsde.diffusion(0.5, z)
    assert g.data.shape == (1, 4)          # additive: state-free
    lnsde = build_model(ModelConfig(kind="lnsde", d_x=1, d_z=4, seed=0))
    g2 = lnsde.diffusion(0.5, z)
    np.testing.assert_allclose(g2.data, lnsde.sigma_t(0.5).data * z.data)
    # analytic diagonal derivatives
    np.testing.assert_array_equal(lsde.diffusion_dz_diag(0.5, z),
                                  np.zeros((3, 4)))
    np.testing.assert_allclose(lnsde.diffusion_dz_diag(0.5, z),
                               np.broadcast_to(lnsde.sigma_t(0.5).data, (3, 4)))
    naive = build_model(ModelConfig(kind="naive-sde", d_x=1, d_z=4, seed=0))
    assert naive.diffusion_dz_diag(0.5, z) is None


def test_controlled_state_bounded_and_ablation():
    cfg = ModelConfig(kind="lnsde", d_x=2, d_z=4, seed=4)
    model = build_model(cfg)
    z = Tensor(np.random.default_rng(3).standard_normal((6, 4)) * 5)
    x_t = np.random.default_rng(4).standard_normal((6, 3))
    zbar = model.controlled_state(0.2, z, x_t)
    assert np.all(np.abs(zbar.data) < 1.0)
    # ablation: drift ignores X when use_control=False
    cfg_off = ModelConfig(kind="lnsde", d_x=2, d_z=4, use_control=False, seed=4)
    off = build_model(cfg_off)
    d1 = off.drift(0.2, z, x_t).data
    d2 = off.drift(0.2, z, x_t * 100).data
    np.testing.assert_array_equal(d1, d2)
    d3 = model.drift(0.2, z, x_t).data
    d4 = model.drift(0.2, z, x_t * 100).data
    assert not np.array_equal(d3, d4)


def test_build_deterministic():
    a = build_model(ModelConfig(kind="lnsde", d_x=2, seed=9))
    b = build_model(ModelConfig(kind="lnsde", d_x=2, seed=9))
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p.data, q.data)


def test_checkpoint_roundtrip(tmp_path):
    cfg = ModelConfig(kind="gsde", d_x=3, d_z=5, n_layers=2, seed=11)
    model = build_model(cfg)
    for p in model.parameters():
        p.data = p.data + np.random.default_rng(0).standard_normal(p.data.shape)
    path = tmp_path / "ckpt.json"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.cfg == model.cfg
    for p, q in zip(model.parameters(), loaded.parameters()):
        np.testing.assert_array_equal(p.data, q.data)


def test_checkpoint_version_guard(tmp_path):
    import json
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"version": 99, "config": {}, "params": []}))
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_readout_final_layer_params():
    model = build_model(ModelConfig(kind="lsde", d_x=1, seed=0))
    final = model.readout_final_layer_params()
    assert len(final) == 2
    assert final[0] is model.readout_net.layers[-1].weight
