import numpy as np
import pytest

from ldlgrid.constants import CoordinationMode
from ldlgrid.coordination import (
    CommGraph,
    ConsensusGains,
    ConsensusMeasurements,
    ConsensusState,
    SafetyLimits,
    SupportSettings,
    SupportState,
    build_comm_graph,
    complete_adjacency,
    consensus_enabled,
    consensus_update,
    coordination_mode,
    electrical_adjacency,
    local_support,
    ring_adjacency,
    safety_enabled,
    safety_filter,
)
from ldlgrid.errors import ConfigurationError
from ldlgrid.grid_model import Branch, Bus, NetworkModel

ONLY_AGREEMENT = ConsensusGains(k_omega=1.0, k_share=0.0, k_track=0.0, k_v=0.0, k_qshare=0.0, k_vtrack=0.0)


def _measurements(n, p_norm=None, speed=None, q_norm=None, voltage=None):
    return ConsensusMeasurements(
        p_norm=np.zeros(n) if p_norm is None else np.asarray(p_norm, dtype=float),
        speed=np.ones(n) if speed is None else np.asarray(speed, dtype=float),
        q_norm=np.zeros(n) if q_norm is None else np.asarray(q_norm, dtype=float),
        voltage=np.ones(n) if voltage is None else np.asarray(voltage, dtype=float),
        voltage_ref=np.ones(n),
    )


def _path_model():
    return NetworkModel(
        buses=(Bus(1), Bus(2), Bus(3)),
        branches=(Branch(1, 1, 2, 0.1j), Branch(2, 2, 3, 0.1j)),
    )


@pytest.mark.parametrize("test_period", [0.1, 0.3, 1.0])
def test_two_node_agreement_closed_form(test_period):
    graph = CommGraph(("a", "b"), [[0, 1], [1, 0]], update_period=test_period)
    state = ConsensusState([0.02, 0.0], [0.0, 0.0], gains=ONLY_AGREEMENT)
    new = consensus_update(graph, state, _measurements(2))
    decay = 0.01 * np.exp(-2.0 * test_period)
    assert np.allclose(new.freq_correction, [0.01 + decay, 0.01 - decay], rtol=0, atol=1e-14)


def test_agreement_preserves_sum_without_tracking():
    rng = np.random.default_rng(1)
    graph = CommGraph(tuple("abcd"), ring_adjacency(4), update_period=0.1)
    gains = ConsensusGains(k_omega=1.0, k_share=0.3, k_track=0.0, k_v=1.0, k_qshare=0.2, k_vtrack=0.0)
    state = ConsensusState(rng.uniform(-0.01, 0.01, 4), rng.uniform(-0.01, 0.01, 4), gains=gains, saturation=1.0)
    total_omega = state.freq_correction.sum()
    total_e = state.volt_correction.sum()
    for _ in range(20):
        state = consensus_update(graph, state, _measurements(4, p_norm=rng.uniform(0, 1, 4), q_norm=rng.uniform(0, 1, 4)))
    assert state.freq_correction.sum() == pytest.approx(total_omega, abs=1e-12)
    assert state.volt_correction.sum() == pytest.approx(total_e, abs=1e-12)


def test_sharing_equalizes_loading():
    graph = CommGraph(tuple("abcd"), ring_adjacency(4), update_period=0.1)
    gains = ConsensusGains(k_omega=0.0, k_share=0.5, k_track=0.0, k_v=0.0, k_qshare=0.0, k_vtrack=0.0)
    state = ConsensusState.zeros(4, gains, saturation=1.0)
    p0 = np.array([0.2, 0.5, 0.8, 0.3])
    # unit droop plant: a correction shifts the unit's loading one for one
    for _ in range(60):
        p = p0 + state.freq_correction
        state = consensus_update(graph, state, _measurements(4, p_norm=p))
    p = p0 + state.freq_correction
    assert np.ptp(p) < 0.01 * np.ptp(p0)
    assert p.mean() == pytest.approx(p0.mean(), abs=1e-12)


def test_tracking_on_isolated_node():
    graph = CommGraph(("a", "b"), np.zeros((2, 2)), update_period=1.0)
    state = ConsensusState.zeros(2)
    new = consensus_update(graph, state, _measurements(2, speed=[0.999, 1.0], p_norm=[0.9, 0.1]))
    assert np.allclose(new.freq_correction, [0.002, 0.0], rtol=0, atol=1e-12)


def test_corrections_saturate():
    graph = CommGraph(("a",), np.zeros((1, 1)), update_period=1.0)
    state = ConsensusState.zeros(1, saturation=0.05)
    new = consensus_update(graph, state, _measurements(1, speed=[0.9], voltage=[0.5]))
    assert new.freq_correction[0] == 0.05
    assert new.volt_correction[0] == 0.05


def test_inactive_node_holds_and_is_cut_out():
    graph = CommGraph(tuple("abc"), complete_adjacency(3), update_period=0.1)
    state = ConsensusState([0.03, -0.02, 0.0], [0.0, 0.0, 0.0], gains=ONLY_AGREEMENT)
    new = consensus_update(graph, state, _measurements(3), active=[True, False, True])
    assert new.freq_correction[1] == -0.02
    # the surviving pair agrees among itself
    assert new.freq_correction[0] + new.freq_correction[2] == pytest.approx(0.03, abs=1e-14)


def test_latency_uses_delayed_neighbor_values():
    adjacency = [[0, 1], [1, 0]]
    fast = CommGraph(("a", "b"), adjacency, update_period=0.1)
    slow = CommGraph(("a", "b"), adjacency, update_period=0.1, latency=0.15)
    assert fast.delay_rounds == 0
    assert slow.delay_rounds == 2
    state = ConsensusState([0.02, 0.0], [0.0, 0.0], gains=ONLY_AGREEMENT)
    delayed = consensus_update(slow, state, _measurements(2))
    # first round: the only neighbor value known is the current one
    decay = np.exp(-0.1)
    assert delayed.freq_correction[0] == pytest.approx(0.02 * decay, abs=1e-14)
    assert delayed.freq_correction[1] == pytest.approx(0.02 * (1 - decay), abs=1e-14)
    assert len(delayed.history) == 1
    for _ in range(4):
        delayed = consensus_update(slow, delayed, _measurements(2))
    assert len(delayed.history) == 3


@pytest.mark.parametrize(
    "test_adjacency",
    [[[0, 1], [0, 0]], [[0, -1], [-1, 0]]],
)
def test_comm_graph_validation(test_adjacency):
    with pytest.raises(ConfigurationError):
        CommGraph(("a", "b"), test_adjacency)


def test_comm_graph_components():
    graph = CommGraph(tuple("abcd"), ring_adjacency(4))
    assert graph.is_connected()
    assert graph.n_components([True, False, True, False]) == 2
    assert graph.n_components([False] * 4) == 0
    assert np.allclose(graph.laplacian().sum(axis=1), 0.0)


def test_electrical_adjacency_stops_at_storage_buses():
    model = _path_model()
    assert electrical_adjacency(model, [1, 2, 3]).tolist() == [[0, 1, 0], [1, 0, 1], [0, 1, 0]]
    # no storage at bus 2, so 1 and 3 see each other through it
    assert electrical_adjacency(model, [1, 3]).tolist() == [[0, 1], [1, 0]]


@pytest.mark.parametrize(
    "test_topology, expected_edges",
    [("ring", 3), ("complete", 3), ("electrical", 2)],
)
def test_build_comm_graph(test_topology, expected_edges):
    graph = build_comm_graph(test_topology, ["S1", "S2", "S3"], [1, 2, 3], model=_path_model())
    assert graph.adjacency.sum() / 2 == expected_edges


def test_build_comm_graph_explicit():
    graph = build_comm_graph("explicit", ["S1", "S3"], [1, 3], edges=[(1, 3)])
    assert graph.adjacency.tolist() == [[0, 1], [1, 0]]
    with pytest.raises(ConfigurationError):
        build_comm_graph("explicit", ["S1", "S3"], [1, 3], edges=[(1, 2)])


def test_safety_filter_raises_p_on_low_frequency():
    p, q = safety_filter([1.0], [58.8], SafetyLimits(), ([0.1], [0.0]))
    assert p[0] == pytest.approx(0.5)
    assert q[0] == 0.0


def test_safety_filter_lowers_q_on_high_voltage():
    p, q = safety_filter([1.15], [60.0], SafetyLimits(), ([0.1], [0.0]))
    assert p[0] == 0.1
    assert q[0] == pytest.approx(-0.25)


@pytest.mark.parametrize(
    "test_v, test_f, test_setpoints, expected",
    [
        (1.0, 60.0, (0.3, 0.1), (0.3, 0.1)),
        (0.89, 59.5, (0.3, 0.1), (0.3, 0.1)),
        (1.0, 58.0, (0.9, 0.0), (1.0, 0.0)),
        (1.0, 62.0, (0.1, 0.0), (-1.0, 0.0)),
        (0.7, 60.0, (0.0, 0.2), (0.0, 1.0)),
    ],
)
def test_safety_filter_bands_and_saturation(test_v, test_f, test_setpoints, expected):
    p, q = safety_filter([test_v], [test_f], SafetyLimits(), ([test_setpoints[0]], [test_setpoints[1]]))
    assert (p[0], q[0]) == pytest.approx(expected)


def test_safety_filter_scales_with_rating():
    p, _ = safety_filter([1.0, 1.0], [59.0 - 0.1, 60.0], SafetyLimits(), ([0.0, 0.0], [0.0, 0.0]), [0.5, 2.0])
    assert p.tolist() == pytest.approx([0.1, 0.0])


@pytest.mark.parametrize(
    "test_kwargs",
    [{"voltage_band": (1.01, 1.1)}, {"frequency_band": (59.0, 59.9)}, {"p_gain": -1.0}],
)
def test_safety_limits_validation(test_kwargs):
    with pytest.raises(ConfigurationError):
        SafetyLimits(**test_kwargs)


def test_support_damping_opposes_frequency_dip_then_washes_out():
    state = SupportState.zeros(1, SupportSettings(damping_gain=100.0, damping_filter=0.0, damping_washout=2.0))
    p = local_support(state, [0.0], [59.94], [0.0], 0.01)
    assert p[0] == pytest.approx(100.0 * 0.001 * np.exp(-0.005), rel=1e-9)
    for _ in range(4000):
        p = local_support(state, [0.0], [59.94], [0.0], 0.01)
    assert p[0] == pytest.approx(0.0, abs=1e-6)


def test_support_buffer_follows_demand_steps():
    state = SupportState.zeros(2, SupportSettings(buffer_gain=1.0, buffer_washout=5.0))
    p = local_support(state, [0.1, 0.0], [60.0, 60.0], [2.0, 0.0], 0.01, rating=[1.0, 1.0])
    # the first call only arms the washout
    assert p == pytest.approx([0.1, 0.0])
    p = local_support(state, [0.1, 0.0], [60.0, 60.0], [2.5, 0.0], 0.01, rating=[1.0, 1.0])
    assert p == pytest.approx([0.1 + 0.5 * np.exp(-0.002), 0.0])


def test_support_saturates_at_rating():
    state = SupportState.zeros(2, SupportSettings(damping_gain=1e4, damping_filter=0.0))
    p = local_support(state, [0.0, 0.0], [59.0, 61.0], [0.0, 0.0], 0.01, rating=[1.0, 3.0])
    assert p == pytest.approx([1.0, -3.0])


def test_support_disabled_passes_through():
    settings = SupportSettings.from_config(None)
    assert not settings.enabled
    state = SupportState.zeros(1, settings)
    assert local_support(state, [0.3], [59.0], [5.0], 0.01) == pytest.approx([0.3])


@pytest.mark.parametrize(
    "test_config",
    [{"damping_gain": -1.0}, {"buffer_washout": 0.0}, {"damping_filter": -0.1}, {"k_damp": 1.0}],
)
def test_support_settings_validation(test_config):
    with pytest.raises(ConfigurationError):
        SupportSettings.from_config(test_config)


def test_consensus_gains_from_config():
    assert ConsensusGains.from_config({"k_share": 0.1}).k_share == 0.1
    with pytest.raises(ConfigurationError):
        ConsensusGains.from_config({"k_bogus": 1.0})


@pytest.mark.parametrize(
    "test_config, expected_mode",
    [
        ({"mode": "layered"}, CoordinationMode.layered),
        ({}, CoordinationMode.none),
        ("local_only", CoordinationMode.local_only),
        (None, CoordinationMode.none),
        (CoordinationMode.layered, CoordinationMode.layered),
    ],
)
def test_coordination_mode(test_config, expected_mode):
    assert coordination_mode(test_config) == expected_mode


def test_coordination_mode_rejects_unknown():
    with pytest.raises(ConfigurationError):
        coordination_mode({"mode": "central"})


def test_layer_switches():
    assert not safety_enabled(CoordinationMode.none)
    assert safety_enabled(CoordinationMode.local_only)
    assert safety_enabled(CoordinationMode.layered)
    assert consensus_enabled(CoordinationMode.layered, 0.1)
    assert not consensus_enabled(CoordinationMode.layered, float("inf"))
    assert not consensus_enabled(CoordinationMode.local_only, 0.1)
