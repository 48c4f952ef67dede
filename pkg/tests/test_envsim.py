from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airgnn.envsim import (
    SPEED_OF_LIGHT,
    ChannelModelConfig,
    ConfigurationError,
    FactoryLayout,
    TrajectoryConfig,
    channel_gain,
    config_hash,
    feature_windows,
    fspl_gain,
    generate_episode,
    generate_trajectory,
    los_blocked,
    random_layout,
)


def sampled_blocked(a, b, center, heading, size, step=1e-3):
    """Independent oracle: walk the segment in 1 mm steps and test each point."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = int(np.ceil(np.linalg.norm(b - a) / step)) + 1
    t = np.linspace(0, 1, n)[:, None]
    pts = a + t * (b - a) - np.asarray(center, float)
    c, s = np.cos(heading), np.sin(heading)
    local = pts @ np.array([[c, -s], [s, c]])
    return bool(np.any((np.abs(local[:, 0]) <= size[0] / 2) & (np.abs(local[:, 1]) <= size[1] / 2)))


def test_segment_through_box_is_blocked():
    assert los_blocked((0, 0), (10, 0), ((5, 0), 0.0), (1, 1))


def test_segment_missing_box_is_clear():
    assert not los_blocked((0, 0), (10, 0), ((5, 2), 0.0), (1, 1))


def test_rotated_box():
    # a 4 x 0.2 bar rotated 90 degrees stands across the x axis
    assert los_blocked((0, 0), (10, 0), ((5, 1.5), np.pi / 2), (4, 0.2))
    assert not los_blocked((0, 0), (10, 0), ((5, 1.5), 0.0), (4, 0.2))


def test_degenerate_segment_raises():
    with pytest.raises(ValueError):
        los_blocked((1, 1), (1, 1), ((0, 0), 0.0), (1, 1))


def test_segment_ending_inside_box():
    assert los_blocked((0, 0), (5, 0), ((5, 0), 0.3), (1, 1))


@settings(max_examples=300, deadline=None)
@given(
    st.tuples(st.floats(0, 10), st.floats(0, 10)),
    st.tuples(st.floats(0, 10), st.floats(0, 10)),
    st.tuples(st.floats(1, 9), st.floats(1, 9)),
    st.floats(-np.pi, np.pi),
    st.tuples(st.floats(0.2, 3), st.floats(0.2, 3)),
)
def test_blockage_matches_point_sampling(a, b, center, heading, size):
    if np.hypot(a[0] - b[0], a[1] - b[1]) < 1e-2:
        return
    exact = los_blocked(a, b, (center, heading), size)
    sampled = sampled_blocked(a, b, center, heading, size)
    if exact != sampled:
        # only grazing contacts thinner than the sampling step may disagree
        grown = sampled_blocked(a, b, center, heading, (size[0] + 4e-3, size[1] + 4e-3))
        shrunk = sampled_blocked(a, b, center, heading, (size[0] - 4e-3, size[1] - 4e-3))
        assert grown and not shrunk


def test_fspl_one_metre_28ghz():
    # 20 log10(4 pi f / c) at 1 m and 28 GHz is 61.391 dB
    assert -10 * np.log10(fspl_gain(1.0, 28e9)) == pytest.approx(61.3909, abs=1e-3)
    assert -10 * np.log10(fspl_gain(10.0, 28e9)) == pytest.approx(81.3909, abs=1e-3)


def test_fspl_inverse_square():
    d = np.array([1.0, 2.0, 4.0])
    g = fspl_gain(d, 28e9)
    assert g[0] / g[1] == pytest.approx(4.0)
    assert g[0] == pytest.approx((SPEED_OF_LIGHT / (4 * np.pi * 28e9)) ** 2)


def test_nlos_penalty_and_bad_distance():
    cfg = ChannelModelConfig()
    _, e_los = channel_gain(5.0, False, 28e9, cfg, fading=False)
    _, e_nlos = channel_gain(5.0, True, 28e9, cfg, fading=False)
    assert 10 * np.log10(e_los / e_nlos) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        channel_gain(0.0, False, 28e9, cfg)


@pytest.mark.parametrize("blocked", [False, True])
def test_fading_mean_power_and_k_factor(blocked):
    cfg = ChannelModelConfig()
    rng = np.random.default_rng(5)
    n = 200_000
    h, e = channel_gain(np.full(n, 3.0), np.full(n, blocked), 28e9, cfg, rng)
    assert np.mean(np.abs(h) ** 2) / e[0] == pytest.approx(1.0, rel=0.01)
    p = np.abs(h) ** 2 / e[0]
    if blocked:
        # Rayleigh: |h|^2 is exponential, var = mean^2
        assert np.var(p) == pytest.approx(1.0, rel=0.03)
    else:
        K = 10.0
        # E|h|^4 / (E|h|^2)^2 = (2 + 4K + K^2) / (1 + K)^2 for unit-power Rician
        assert np.mean(p**2) == pytest.approx((2 + 4 * K + K**2) / (1 + K) ** 2, rel=0.02)


def test_features_newest_first_with_padding():
    ap = np.arange(1, 7, dtype=float)[None, :] * (1 + 0j)
    f = feature_windows(ap, 3)
    assert f.shape == (1, 6, 3)
    np.testing.assert_array_equal(f[0, 0], [1, 1, 1])
    np.testing.assert_array_equal(f[0, 1], [2, 1, 1])
    np.testing.assert_array_equal(f[0, 5], [6, 5, 4])


def test_trajectory_speed_and_region():
    rng = np.random.default_rng(0)
    lay = random_layout(6, rng)
    tr = generate_trajectory(lay, 1.5, 0.3, 200, rng)
    steps = np.hypot(*np.diff(tr.positions, axis=0).T)
    # constant speed except where a waypoint turn cuts the corner
    assert np.all(steps <= 1.5 * 0.3 + 1e-9)
    assert np.median(steps) == pytest.approx(0.45)
    x0, y0, x1, y1 = lay.blocker_region
    assert np.all((tr.positions[:, 0] >= x0) & (tr.positions[:, 0] <= x1))
    assert np.all((tr.positions[:, 1] >= y0) & (tr.positions[:, 1] <= y1))


def test_trajectory_rejects_zero_speed():
    lay = random_layout(4, np.random.default_rng(1))
    with pytest.raises(ConfigurationError):
        generate_trajectory(lay, 0.0, 0.3, 10, np.random.default_rng(1))


def test_layout_validation():
    with pytest.raises(ConfigurationError):
        FactoryLayout(10, 10, (5, 9), np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(ConfigurationError):
        FactoryLayout(10, 10, (5, 9), np.array([[1.0, 1.0], [11.0, 1.0]]))


@pytest.fixture(scope="module")
def episode():
    rng = np.random.default_rng(3)
    lay = random_layout(6, rng)
    return generate_episode(lay, TrajectoryConfig(speed=2.0, steps=30), ChannelModelConfig(), 4, rng)


def test_episode_shapes(episode):
    assert episode.channels.gains.shape == (6, 6, 4, 30)
    assert episode.channels.ap_gains.shape == (6, 30)
    assert episode.features.shape == (6, 30, 4)
    assert episode.labels.shape == (6, 30)


def test_labels_match_geometry(episode):
    lay, tr = episode.layout, episode.trajectory
    for t in range(tr.num_steps):
        for i in range(lay.num_nodes):
            want = los_blocked(lay.node_positions[i], lay.ap_position, (tr.positions[t], tr.headings[t]), lay.blocker_size)
            assert episode.labels[i, t] == int(want)


def test_channels_reciprocal_no_self_links(episode):
    g = episode.channels.gains
    np.testing.assert_array_equal(g, g.transpose(1, 0, 2, 3))
    idx = np.arange(6)
    assert np.all(episode.channels.expected_sq_magnitude[idx, idx] == 0)
    assert np.all(g[idx, idx] == 0)


def test_features_are_ap_magnitudes(episode):
    np.testing.assert_allclose(episode.features[:, :, 0], np.abs(episode.channels.ap_gains))


def test_blocked_ap_link_is_weaker_on_average():
    rng = np.random.default_rng(11)
    lay = random_layout(10, rng)
    ep = generate_episode(lay, TrajectoryConfig(speed=2.5, steps=200), ChannelModelConfig(), 1, rng)
    db = 20 * np.log10(np.abs(ep.channels.ap_gains))
    if ep.labels.any() and (~ep.labels.astype(bool)).any():
        assert db[ep.labels == 1].mean() < db[ep.labels == 0].mean() - 10


def test_episode_is_deterministic():
    def make():
        rng = np.random.default_rng(42)
        return generate_episode(random_layout(5, rng), TrajectoryConfig(steps=10), ChannelModelConfig(), 3, rng)

    a, b = make(), make()
    np.testing.assert_array_equal(a.channels.gains, b.channels.gains)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_config_hash_stable():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
