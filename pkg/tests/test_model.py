import math

import numpy as np
import pytest

from gradcheck import check
from odestream import autodiff as ad
from odestream.autodiff import Tensor
from odestream.errors import CheckpointError, ConfigMismatchError, ContractError
from odestream.model import (LatentDistribution, ModelConfig, OdeStreamModel, OnlineState, checkpoint_load,
                             checkpoint_save, reparameterize)
from odestream.training import composite_loss, mse_loss


def _zero_model(**kw):
    model = OdeStreamModel(ModelConfig(input_dim=2, **kw))
    for p in model.parameters().values():
        p.data = np.zeros_like(p.data)
    return model


def test_default_shapes():
    model = OdeStreamModel(ModelConfig(input_dim=7))
    dist, h = model.encode(np.zeros((24, 7)))
    assert dist.mu.shape == (64,) and dist.logvar.shape == (64,) and h.shape == (64,)
    h_til, _ = model.til_forward(np.zeros((24, 7)), OnlineState.zeros(64))
    assert h_til.shape == (64,)


def test_zero_encoder_returns_projection_bias():
    model = _zero_model(latent_dim=3, hidden_dim=4)
    model.encoder_proj.bias.data = np.arange(6.0)
    dist, _ = model.encode(np.zeros((24, 2)))
    np.testing.assert_array_equal(dist.mu.data, [0, 1, 2])
    np.testing.assert_array_equal(dist.logvar.data, [3, 4, 5])


def test_reparameterize_values():
    dist = LatentDistribution(Tensor([1.0]), Tensor([math.log(4)]))
    assert reparameterize(dist, np.array([1.0])).item() == pytest.approx(3.0)
    assert reparameterize(dist, np.array([0.0])).item() == 1.0
    unit = LatentDistribution(Tensor([0.5, 1.0]), Tensor([0.0, 0.0]))
    np.testing.assert_allclose(reparameterize(unit, np.array([0.2, -1.0])).data, [0.7, 0.0])


def test_decode_window_shapes_and_zero_dynamics():
    model = OdeStreamModel(ModelConfig(input_dim=2, latent_dim=4, hidden_dim=5, seed=1))
    for p in model.dynamics.parameters().values():
        p.data = np.zeros_like(p.data)
    grid = np.linspace(0, 1, 24)
    traj, h_seq, y_seq = model.decode_window(Tensor(np.ones(4)), grid)
    assert len(traj) == len(h_seq) == len(y_seq) == 24
    assert all(np.array_equal(h.data, h_seq[0].data) for h in h_seq)


def test_til_zero_and_state_carry():
    zero = _zero_model(hidden_dim=4)
    h, _ = zero.til_forward(np.zeros((24, 2)), OnlineState.zeros(4))
    assert not h.data.any()
    model = OdeStreamModel(ModelConfig(input_dim=2, hidden_dim=4, seed=2))
    rng = np.random.default_rng(0)
    w1, w2 = rng.normal(size=(24, 2)), rng.normal(size=(24, 2))
    _, s1 = model.til_forward(w1, OnlineState.zeros(4))
    carried, _ = model.til_forward(w2, s1)
    fresh, _ = model.til_forward(w2, OnlineState.zeros(4))
    # the carried state's influence fades over 24 LSTM steps but never vanishes
    assert not np.array_equal(carried.data, fresh.data)
    short_carried, _ = model.til_forward(w2[:3], s1, allow_partial=True)
    short_fresh, _ = model.til_forward(w2[:3], OnlineState.zeros(4), allow_partial=True)
    assert np.abs(short_carried.data - short_fresh.data).max() > 1e-3


def test_fuse_zero_and_horizon_width():
    zero = _zero_model(hidden_dim=4)
    assert not zero.fuse_and_predict(Tensor(np.zeros(4)), Tensor(np.zeros(4))).data.any()
    model = OdeStreamModel(ModelConfig(input_dim=1, horizon=24))
    out = model.forecast(np.zeros((24, 1)), np.linspace(0, 1, 24), OnlineState.zeros(64))
    assert out.y_hat.shape == (24,)
    multi = OdeStreamModel(ModelConfig(input_dim=3, horizon=7, target_dim=3))
    assert multi.forecast(np.zeros((24, 3)), np.linspace(0, 1, 24), OnlineState.zeros(64)).y_hat.shape == (21,)


def test_window_length_contract():
    model = OdeStreamModel(ModelConfig(input_dim=2))
    with pytest.raises(ContractError):
        model.encode(np.zeros((23, 2)))
    dist, _ = model.encode(np.zeros((5, 2)), allow_partial=True)
    assert dist.mu.shape == (64,)


def test_til_disabled_has_no_parameters():
    model = OdeStreamModel(ModelConfig(input_dim=2, til_enabled=False))
    assert not any(k.startswith("til.") for k in model.parameters())
    assert model.concat_head.weight.shape == (64, 64)


def _small(seed=0, **kw):
    return OdeStreamModel(ModelConfig(input_dim=2, hidden_dim=4, latent_dim=3, lag=4, dynamics_width=5,
                                      seed=seed, **kw))


def test_encoder_mu_gradient():
    model = _small(1)
    window = np.random.default_rng(1).normal(size=(4, 2))
    params = [p for k, p in model.parameters().items() if k.startswith("encoder.")]
    assert check(lambda: ad.sum_(model.encode(window)[0].mu), params, rtol=1e-3) <= 1.0


def test_fuse_path_gradient():
    model = _small(2)
    rng = np.random.default_rng(2)
    h_j, h_t = Tensor(rng.normal(size=4)), Tensor(rng.normal(size=4))
    params = [h_j, h_t, *model.concat_head.parameters().values(), *model.output_head.parameters().values()]
    assert check(lambda: ad.sum_(ad.square(model.fuse_and_predict(h_j, h_t))), params, rtol=1e-4) <= 1.0


def test_online_step_gradient_end_to_end():
    model = _small(3)
    rng = np.random.default_rng(3)
    window, eps = rng.normal(size=(4, 2)), rng.normal(size=3)
    state = OnlineState(rng.normal(size=4) * 0.3, rng.normal(size=4) * 0.3)
    grid = np.array([0.0, 0.2, 0.5, 1.0])

    def loss():
        out = model.forecast(window, grid, state, eps)
        return composite_loss(mse_loss(out.y_hat, np.array([0.4])), out.dist, out.z0)[0]

    assert check(loss, list(model.online_parameters().values()), rtol=1e-3, max_entries=8) <= 1.0


def test_every_online_parameter_gets_gradient():
    for til in (True, False):
        model = _small(4, til_enabled=til)
        model.zero_grad()
        rng = np.random.default_rng(4)
        with ad.Tape() as tape:
            out = model.forecast(rng.normal(size=(4, 2)), np.linspace(0, 1, 4), OnlineState.zeros(4),
                                 rng.normal(size=3))
            tape.backward(composite_loss(mse_loss(out.y_hat, np.array([1.0])), out.dist, out.z0)[0])
        missing = [k for k, p in model.online_parameters().items() if p.grad is None]
        assert not missing


def test_inference_determinism():
    model = _small(5)
    window = np.random.default_rng(5).normal(size=(4, 2))
    a = model.forecast(window, np.linspace(0, 1, 4), OnlineState.zeros(4))
    b = model.forecast(window, np.linspace(0, 1, 4), OnlineState.zeros(4), eps=np.zeros(3))
    np.testing.assert_array_equal(a.z0.data, b.z0.data)
    np.testing.assert_array_equal(a.y_hat.data, b.y_hat.data)


def test_checkpoint_round_trip(tmp_path):
    model = _small(6)
    window = np.random.default_rng(6).normal(size=(4, 2))
    sha = checkpoint_save(model, tmp_path / "m.odes", {"note": "x"})
    loaded, meta = checkpoint_load(tmp_path / "m.odes", model.config)
    assert meta == {"note": "x"} and len(sha) == 64
    a = model.forecast(window, np.linspace(0, 1, 4), OnlineState.zeros(4)).y_hat.data
    b = loaded.forecast(window, np.linspace(0, 1, 4), OnlineState.zeros(4)).y_hat.data
    assert np.array_equal(a, b)


def test_checkpoint_mismatch_and_corruption(tmp_path):
    path = tmp_path / "m.odes"
    checkpoint_save(_small(), path)
    with pytest.raises(ConfigMismatchError, match="input_dim"):
        checkpoint_load(path, ModelConfig(input_dim=3, hidden_dim=4, latent_dim=3, lag=4, dynamics_width=5))
    with pytest.raises(ConfigMismatchError):
        checkpoint_load(path, {"til_enabled": False})
    blob = bytearray(path.read_bytes())
    blob[40] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum"):
        checkpoint_load(path)


def test_load_state_dict_rejects_shapes():
    model = _small()
    state = model.state_dict()
    state["output_head.bias"] = np.zeros(5)
    with pytest.raises(ConfigMismatchError):
        model.load_state_dict(state)
