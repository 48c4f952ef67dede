from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airgnn import expressivity as ex
from airgnn.topology import build_conflict_graph, max_degree
from oracles import chromatic_number, conflict_pairs, random_digraph


def star(leaves: int = 4) -> np.ndarray:
    adj = np.zeros((leaves + 1, leaves + 1), bool)
    adj[1:, 0] = True
    return adj


def test_star_needs_four_subcarriers():
    fa = ex.assign_frequencies(star())
    assert fa.num_subcarriers == 4
    assert fa.is_injective()
    assert sorted(fa.nu.values()) == [0, 1, 2, 3]


def test_edgeless_graph_needs_none():
    fa = ex.assign_frequencies(np.zeros((4, 4), bool))
    assert fa.num_subcarriers == 0 and fa.nu == {}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_assignment_injective_on_random_graphs(seed):
    adj = random_digraph(8, 0.4, np.random.default_rng(seed))
    fa = ex.assign_frequencies(adj)
    # exhaustive: every pair of edges into the same receiver uses different subcarriers
    for (j1, i1), k1 in fa.nu.items():
        for (j2, i2), k2 in fa.nu.items():
            if i1 == i2 and j1 != j2:
                assert k1 != k2
    assert set(fa.nu) == {(int(j), int(i)) for j, i in zip(*np.nonzero(adj))}
    if adj.any():
        assert fa.num_subcarriers >= max_degree(adj[None])
        assert fa.num_subcarriers == chromatic_number(8, conflict_pairs(adj)) or not build_conflict_graph(adj).edges


def test_channel_inversion_examples():
    p, ok = ex.channel_inversion_power(0.5, 1.0)
    assert p == 2.0 and ok and 0.5 * p == 1.0
    _, ok = ex.channel_inversion_power(1e-7, 1.0)
    assert not ok
    _, ok = ex.channel_inversion_power(0.1, 1.0, p_max=5.0)
    assert not ok
    with pytest.raises(ValueError):
        ex.channel_inversion_power(0.5, 0.0)


def test_channel_inversion_received_amplitude():
    h = np.random.default_rng(0).uniform(0.1, 1.0, 1000)
    p, ok = ex.channel_inversion_power(h, 0.7)
    assert ok.all()
    np.testing.assert_allclose(h * p, 0.7, rtol=0, atol=1e-12)


@pytest.mark.parametrize("agg", ex.AGGREGATORS)
def test_noiseless_emulation_is_exact(agg):
    rng = np.random.default_rng(1)
    for _ in range(10):
        n = int(rng.integers(2, 9))
        adj = random_digraph(n, 0.5, rng)
        spec = ex.random_mpnn(3, 2, 5, agg, rng)
        u = rng.normal(size=(n, 3))
        ref = ex.digital_mpnn(adj, spec, u)
        out = ex.analog_mpnn(adj, spec, u, ex.assign_frequencies(adj), rng.uniform(0.05, 1, (n, n)), P_rx=0.3).outputs[0]
        np.testing.assert_allclose(out, ref, rtol=1e-10, atol=1e-12)


def test_digital_reference_by_hand():
    adj = np.zeros((3, 3), bool)
    adj[1, 0] = adj[2, 0] = True
    spec = ex.random_mpnn(2, 2, 4, "mean", np.random.default_rng(0))
    u = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    want0 = spec.update(u[0], (spec.message(u[0], u[1]) + spec.message(u[0], u[2])) / 2)
    got = ex.digital_mpnn(adj, spec, u)
    np.testing.assert_allclose(got[0], want0)
    np.testing.assert_allclose(got[1], spec.update(u[1], np.zeros(2)))


@pytest.mark.parametrize("agg", ["mean", "max"])
def test_too_few_subcarriers_collide(agg):
    rng = np.random.default_rng(2)
    adj = star()
    fa = ex.assign_frequencies(adj)
    spec = ex.random_mpnn(3, 2, 5, agg, rng)
    u = rng.normal(size=(5, 3))
    ref = ex.digital_mpnn(adj, spec, u)
    out = ex.analog_mpnn(adj, spec, u, fa.fold(fa.num_subcarriers - 1)).outputs[0]
    assert not fa.fold(3).is_injective()
    assert np.abs(out[0] - ref[0]).max() > 1e-6


def test_sum_aggregation_survives_collisions():
    # superposition already computes the sum, so folding cannot change it
    rng = np.random.default_rng(3)
    adj = star()
    spec = ex.random_mpnn(3, 2, 5, "sum", rng)
    u = rng.normal(size=(5, 3))
    out = ex.analog_mpnn(adj, spec, u, ex.assign_frequencies(adj).fold(1)).outputs[0]
    np.testing.assert_allclose(out, ex.digital_mpnn(adj, spec, u), atol=1e-12)


def test_missing_assignment_raises():
    adj = star()
    with pytest.raises(ex.AssignmentError):
        ex.analog_mpnn(adj, ex.random_mpnn(2, 2, 3, "sum", np.random.default_rng(0)), np.zeros((5, 2)), ex.FrequencyAssignment({}, 0))


def test_noise_mse_matches_variance_oracle():
    rng = np.random.default_rng(4)
    adj = random_digraph(6, 0.5, rng)
    spec = ex.random_mpnn(3, 2, 5, "sum", rng)
    P_rx = 0.5
    s2 = [1e-1, 1e-2, 1e-3, 1e-4]
    rep = ex.emulate_mpnn(adj, spec, rng.normal(size=(6, 3)), [v * P_rx**2 for v in s2], P_rx=P_rx, rng=rng, trials=4000)
    np.testing.assert_allclose(rep.msg_mse, s2, rtol=0.1)
    assert np.all(np.diff(rep.msg_mse) < 0)
    assert np.all(np.diff(rep.update_mse) < 0)
    assert all(m >= 0 for m in rep.msg_mse + rep.update_mse)


def test_default_target_meets_budget_and_counts_infeasible():
    rng = np.random.default_rng(5)
    adj = star()
    h = rng.uniform(0.2, 1.0, (5, 5))
    rep = ex.emulate_mpnn(adj, ex.random_mpnn(2, 2, 3, "sum", rng), rng.normal(size=(5, 2)), [0.0], hmag=h, P_tot=2.0, trials=1)
    assert rep.P_rx == pytest.approx(2.0 * h[1:, 0].min())
    assert rep.infeasible_count == [0]
    h[1, 0] = 1e-9
    rep = ex.emulate_mpnn(adj, ex.random_mpnn(2, 2, 3, "sum", rng), rng.normal(size=(5, 2)), [0.0], hmag=h, P_rx=0.1, trials=1)
    assert rep.infeasible_count == [1]


def test_report_csv(tmp_path):
    rep = ex.EmulationReport([0.1, 0.01], [0.1, 0.01], [1e-3, 1e-4], [0, 0])
    text = rep.write_csv(tmp_path / "r.csv").read_text().splitlines()
    assert text[0] == "sigma2,msg_mse,update_mse,infeasible_count" and len(text) == 3


def test_spec_validation():
    rng = np.random.default_rng(0)
    spec = ex.random_mpnn(3, 2, 4, "sum", rng)
    with pytest.raises(ValueError):
        ex.MPNNSpec(3, 2, "median", spec.message_layers, spec.update_layers)
    with pytest.raises(ValueError):
        ex.MPNNSpec(4, 2, "sum", spec.message_layers, spec.update_layers)
