from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airgnn import model as M
from airgnn.dataset import EnvConfig, generate_dataset
from airgnn.diffcore import Tensor
from airgnn.envsim import ChannelModelConfig, TrajectoryConfig


@pytest.fixture(scope="module")
def episodes():
    env = EnvConfig(num_nodes=5, window=3, trajectory=TrajectoryConfig(speed=2.5, steps=12), channel=ChannelModelConfig(num_subcarriers=4))
    return generate_dataset(env, 3, "train", 0)


@pytest.fixture(scope="module")
def cfg(episodes):
    base = M.ModelConfig(K=4, d=3, L=3, hidden=6, lstm_hidden=5, lstm_layers=2)
    return M.calibrate(base, episodes)


def test_config_validation():
    with pytest.raises(ValueError):
        M.ModelConfig(kind="cnn")
    with pytest.raises(ValueError):
        M.ModelConfig(P_tot=0)
    with pytest.raises(ValueError):
        M.ModelConfig(allocation_mode="greedy")
    with pytest.raises(ValueError):
        M.ModelConfig(weight_sharing="per_node")


def test_encoder_rows_unit_norm(cfg, episodes):
    params = M.init_params(cfg, np.random.default_rng(0))
    x = Tensor(M.normalize_features(M.EpisodeBatch.from_episodes(episodes).features, cfg))
    m = M.encode(x, params, cfg).data
    assert m.shape[-2:] == (cfg.K, cfg.d)
    np.testing.assert_allclose(np.linalg.norm(m, axis=-1), 1.0, atol=1e-12)


@pytest.mark.parametrize("mode", M.ALLOCATION_MODES)
def test_allocations_meet_budget(cfg, mode):
    params = M.init_params(cfg, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).normal(size=(7, cfg.L)))
    p = M.allocate_power(x, params, mode, 2.5e-3, np.random.default_rng(2), cfg.K).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 2.5e-3, rtol=1e-12)
    if mode == "uniform":
        np.testing.assert_array_equal(p, 2.5e-3 / cfg.K)


def test_allocation_errors():
    with pytest.raises(ValueError):
        M.allocate_power(np.zeros((2, 3)), None, "uniform", 0.0, K=2)
    with pytest.raises(ValueError):
        M.allocate_power(np.zeros((2, 3)), None, "random", 1.0, K=2)


def test_transmit_power_per_subcarrier():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(4, 3, 5))
    m /= np.linalg.norm(m, axis=-1, keepdims=True)
    p = rng.dirichlet(np.ones(3), size=4) * 1e-3
    xt = M.transmit(Tensor(m), Tensor(p)).data
    np.testing.assert_allclose((xt**2).sum(axis=-1), p, rtol=1e-12)
    with pytest.raises(ValueError):
        M.transmit(Tensor(m), Tensor(-p))


def ota_loop(xt, hmag, mask):
    """Explicit sum over transmitters for every receiver and subcarrier."""
    n, K, d = xt.shape
    y = np.zeros((n, K, d))
    for i in range(n):
        for k in range(K):
            for j in range(n):
                if mask[k, j, i]:
                    y[i, k] += hmag[k, j, i] * xt[j, k]
    return y


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(1, 4), st.integers(1, 3), st.integers(0, 1000))
def test_ota_matches_explicit_sum(n, K, d, seed):
    rng = np.random.default_rng(seed)
    xt = rng.normal(size=(n, K, d))
    hmag = rng.random((K, n, n))
    mask = rng.random((K, n, n)) < 0.5
    mask[:, np.arange(n), np.arange(n)] = False
    y = M.ota_aggregate(Tensor(xt), hmag, mask, 0.0).data
    np.testing.assert_allclose(y, ota_loop(xt, hmag, mask), atol=1e-12)


def test_ota_noise_statistics():
    n, K, d = 3, 2, 4
    y = M.ota_aggregate(Tensor(np.zeros((5000, n, K, d))), np.ones((K, n, n)), np.zeros((K, n, n), bool), 0.25, np.random.default_rng(0)).data
    assert y.mean() == pytest.approx(0.0, abs=0.01)
    assert y.var() == pytest.approx(0.25, rel=0.02)


def test_ota_rejects_masks_from_silent_transmitters():
    p = np.array([[0.0, 1.0], [1.0, 1.0]])  # node 0 silent on k=0
    mask = np.zeros((2, 2, 2), bool)
    mask[0, 0, 1] = True
    with pytest.raises(ValueError):
        M.ota_aggregate(Tensor(np.zeros((2, 2, 1))), np.ones((2, 2, 2)), mask, 0.0, powers=p)


def test_windows_are_chronological():
    s = Tensor(np.arange(5.0).reshape(1, 5, 1, 1))
    w = M._windows(s, 3, 4)
    got = np.stack([x.data[0, :, 0, 0] for x in w], axis=1)
    np.testing.assert_array_equal(got[0], [0, 0, 0])
    np.testing.assert_array_equal(got[1], [0, 0, 1])
    np.testing.assert_array_equal(got[3], [1, 2, 3])


@pytest.mark.parametrize("kind", M.MODEL_KINDS)
def test_forward_shapes(cfg, episodes, kind):
    c = cfg.with_(kind=kind)
    params = M.init_params(c, np.random.default_rng(0))
    batch = M.EpisodeBatch.from_episodes(episodes)
    res = M.forward(batch, params, c, 2, np.random.default_rng(1))
    assert res.pred.shape == (3, 10, 5)
    assert res.targets.shape == (3, 10, 5)
    assert np.all((res.pred.data > 0) & (res.pred.data < 1))
    with pytest.raises(ValueError):
        M.forward(batch, params, c, 12, np.random.default_rng(1))


def test_forward_episode_layout(cfg, episodes):
    params = M.init_params(cfg, np.random.default_rng(0))
    out = M.forward_episode(episodes[0], params, cfg, 1, np.random.default_rng(0))
    assert out.shape == (5, 11)


def test_baseline_wrappers(cfg, episodes):
    for fn, kind in ((M.baseline_local_lstm, "local"), (M.baseline_stgcn, "stgcn"), (M.baseline_stgat, "stgat")):
        params = M.init_params(cfg.with_(kind=kind), np.random.default_rng(0))
        assert fn(episodes[0], params, cfg, 1).shape == (5, 11)


@settings(max_examples=10, deadline=None)
@given(st.permutations(range(5)), st.sampled_from(["airgnn", "stgcn", "stgat", "local"]))
def test_node_permutation_equivariance(episodes, cfg, perm, kind):
    c = cfg.with_(kind=kind, sigma2=0.0)
    params = M.init_params(c, np.random.default_rng(0))
    batch = M.EpisodeBatch.from_episodes(episodes)
    perm = np.array(perm)
    a = M.forward(batch, params, c, 1).pred.data
    b = M.forward(batch.take_nodes(perm), params, c, 1).pred.data
    np.testing.assert_allclose(b, a[..., perm], atol=1e-10)


def test_no_edges_means_no_received_signal(cfg, episodes):
    c = cfg.with_(sigma2=0.0)
    params = M.init_params(c, np.random.default_rng(0))
    batch = M.EpisodeBatch.from_episodes(episodes)
    masks = np.zeros(batch.hmag.shape[:2] + (c.K,) + batch.hmag.shape[-2:], bool)
    res = M.forward(batch, params, c, 1, masks=masks)
    louder = M.EpisodeBatch(batch.features, batch.labels, batch.hmag * 7.0, batch.gexp)
    other = M.forward(louder, params, c, 1, masks=masks)
    # without edges the channel cannot influence any prediction
    np.testing.assert_array_equal(res.pred.data, other.pred.data)


def test_stgcn_isolated_node_gets_zero_aggregate(cfg, episodes):
    batch = M.EpisodeBatch.from_episodes(episodes[:1])
    far = batch.gexp * 0.0  # no digital links at all
    b = M.EpisodeBatch(batch.features, batch.labels, batch.hmag, far)
    c = cfg.with_(kind="stgcn")
    params = M.init_params(c, np.random.default_rng(0))
    s, _ = M._gnn_states(b, params, c, Tensor(M.normalize_features(b.features, c)), attention=False)
    np.testing.assert_array_equal(s.data[..., c.L :], 0.0)


def test_stgat_attention_rows(cfg, episodes):
    c = cfg.with_(kind="stgat")
    params = M.init_params(c, np.random.default_rng(0))
    batch = M.EpisodeBatch.from_episodes(episodes)
    res = M.forward(batch, params, c, 1)
    alpha, adj = res.extras["attention"], res.extras["adjacency"]
    np.testing.assert_allclose(alpha.sum(axis=-1), 1.0, atol=1e-12)
    allowed = np.swapaxes(adj, -1, -2) | np.eye(5, dtype=bool)
    assert np.all(alpha[~allowed] < 1e-12)


def test_digital_graph_uses_uniform_split(cfg, episodes):
    batch = M.EpisodeBatch.from_episodes(episodes).first_subcarriers(cfg.K)
    adj = M.digital_graph(batch.gexp, cfg)
    snr = cfg.P_tot / cfg.K * batch.gexp / cfg.sigma2
    want = (snr >= cfg.gamma_min).any(axis=-3)
    want[..., np.arange(5), np.arange(5)] = False
    np.testing.assert_array_equal(adj, want)


def test_more_subcarriers_than_channels(cfg, episodes):
    params = M.init_params(cfg.with_(K=8), np.random.default_rng(0))
    with pytest.raises(ValueError):
        M.forward(M.EpisodeBatch.from_episodes(episodes), params, cfg.with_(K=8), 1, np.random.default_rng(0))


def test_constraint_monitor(cfg, episodes):
    mon = M.ConstraintMonitor(cfg.P_tot)
    params = M.init_params(cfg, np.random.default_rng(0))
    M.forward(M.EpisodeBatch.from_episodes(episodes), params, cfg, 1, np.random.default_rng(0), monitor=mon)
    assert mon.ok and mon.forward_passes == 3 * 12
    bad = M.ConstraintMonitor(1.0)
    bad(np.array([[0.5, 0.6]]), None, 1)
    bad(np.array([[1.5, -0.5]]), np.ones((1, 2, 2)), 1)
    assert not bad.ok and len(bad.violations) >= 3


def test_per_node_weights_shape(cfg):
    c = cfg.with_(weight_sharing="per_node", num_nodes=5)
    params = M.init_params(c, np.random.default_rng(0))
    assert params["phi.0.W"].shape == (5, c.L, c.hidden)


def test_calibration_is_finite(cfg):
    assert cfg.rx_scale > 0 and np.isfinite(cfg.rx_scale)
    assert cfg.feature_scale_db > 0


def test_window_length_mismatch(cfg, episodes):
    c = cfg.with_(L=5)
    with pytest.raises(ValueError, match="L=5"):
        M.forward(M.EpisodeBatch.from_episodes(episodes), M.init_params(c, np.random.default_rng(0)), c, 1)
