from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import trapezoid

from ldlgrid.constants import EventKind, Integrator
from ldlgrid.engine import (
    SolverSettings,
    Simulation,
    config_hash,
    event_log_digest,
    run_batch,
    run_scenario,
)
from ldlgrid.errors import ConfigurationError, SimulationAbort
from ldlgrid.grid_model import Branch, Bus, LoadSpec, NetworkModel
from ldlgrid.scenario_io import SweepCell, load_scenario
from ldlgrid.test.tool import utils

FAULT_EVENTS = [
    {"time": 0.1, "kind": "apply_fault", "branch": 1},
    {"time": 0.2, "kind": "switch_branch", "branch": 1, "status": "open"},
    {"time": 0.4, "kind": "switch_branch", "branch": 1, "status": "in_service"},
]


def _no_source_scenario():
    model = NetworkModel(
        buses=(Bus(1), Bus(2)),
        branches=(Branch(1, 1, 2, 0.1j),),
        loads=(LoadSpec("L2", 2, 10.0, 0.0),),
    )
    return utils.make_scenario(model, name="no_source")


@pytest.mark.parametrize(
    "test_kwargs",
    [
        {"step": 0.0},
        {"step": 2e-3},
        {"horizon": -1.0},
    ],
)
def test_solver_settings_validation(test_kwargs):
    with pytest.raises(ConfigurationError):
        SolverSettings(**test_kwargs)


def test_solver_settings_rejects_unknown_integrator():
    with pytest.raises(ValueError):
        SolverSettings(integrator="euler")


def test_solver_settings_from_config():
    settings = SolverSettings.from_config(
        {"step": 5e-4, "horizon": 2.0, "integrator": "trapezoidal", "unrelated": 1}
    )
    assert settings.integrator == Integrator.trapezoidal
    assert settings.n_steps == 4000
    assert settings.output_every == 20


@pytest.mark.parametrize("test_integrator", ["rk4", "trapezoidal"])
def test_flat_run_stays_at_equilibrium(test_integrator):
    config = utils.make_scenario(
        utils.machine_load_model(), horizon=1.0, solver={"integrator": test_integrator}
    )
    result = run_scenario(config)
    assert result.completed
    assert result.events == []
    assert result.time[-1] == pytest.approx(1.0)
    assert np.max(np.abs(result.speed - 1.0)) < 1e-5
    assert np.max(np.abs(result.voltage_magnitude - result.voltage_magnitude[0])) < 1e-5
    assert result.metadata["max_power_mismatch"] < 1e-6


def test_fault_sequence_is_logged_and_deterministic():
    config = utils.make_scenario(utils.machine_load_model(), horizon=1.0, events=FAULT_EVENTS)
    first = run_scenario(config)
    second = run_scenario(config)
    assert first.completed
    network = [e for e in first.events if e.kind in (EventKind.apply_fault, EventKind.switch_branch)]
    assert [e.kind for e in network] == [
        EventKind.apply_fault,
        EventKind.switch_branch,
        EventKind.switch_branch,
    ]
    for event, scheduled in zip(network, (0.1, 0.2, 0.4)):
        assert abs(event.time - scheduled) <= 1e-3
        assert event.payload["scheduled_time"] == scheduled
        assert event.device == "1"
    assert event_log_digest(first) == event_log_digest(second)
    assert np.array_equal(first.rotor_angle, second.rotor_angle)
    # the fault moves the machine off its operating point
    assert np.max(np.abs(first.speed - 1.0)) > 1e-4


def _post_fault_state(step):
    config = utils.make_scenario(
        utils.machine_load_model(),
        horizon=1.0,
        events=FAULT_EVENTS,
        solver={
            "step": step,
            "event_tolerance": step,
            "network_tolerance": 1e-12,
            "stage_network_solve": True,
        },
        protection={"enabled": False},
    )
    result = run_scenario(config)
    assert result.completed
    assert result.time[-1] == pytest.approx(1.0)
    return np.concatenate([result.rotor_angle[-1], result.speed[-1]])


def test_rk4_is_fourth_order_after_fault():
    # fault times are whole multiples of every step
    coarse, medium, fine = (_post_fault_state(step) for step in (4e-3, 2e-3, 1e-3))
    ratio = np.max(np.abs(coarse - medium)) / np.max(np.abs(medium - fine))
    assert 12.0 < ratio < 20.0


def test_stage_network_solve_matches_frozen_voltages_closely():
    config = utils.make_scenario(utils.machine_load_model(), horizon=0.5, events=FAULT_EVENTS[:2])
    frozen = run_scenario(config)
    config.solver["stage_network_solve"] = True
    staged = run_scenario(config)
    assert staged.completed
    assert np.max(np.abs(staged.rotor_angle - frozen.rotor_angle)) < 1e-3


def test_identical_parallel_inverters_share_equally():
    config = utils.island_scenario("none", ratings=(2.0, 2.0), load=3.0, horizon=2.0)
    result = run_scenario(config)
    assert result.completed
    assert np.max(np.abs(result.gfm_p[:, 0] - result.gfm_p[:, 1])) < 1e-6
    assert result.gfm_p[-1].sum() == pytest.approx(3.0, rel=0.01)


def test_island_shares_load_by_rating():
    result = run_scenario(utils.island_scenario("none", horizon=3.0))
    assert result.completed
    loading = result.gfm_p[-1] / result.gfm_rating
    assert loading == pytest.approx([0.5, 0.5, 0.5], rel=0.01)
    assert result.gfm_p[-1].sum() == pytest.approx(3.0, rel=0.01)
    # 0.05 pu droop on the unit rating at half load
    assert result.gfm_speed[-1] == pytest.approx([0.975] * 3, abs=1e-3)


def test_coordination_pulls_frequency_back():
    local = run_scenario(utils.island_scenario("none", horizon=3.0))
    layered = run_scenario(utils.island_scenario("layered", horizon=3.0))
    assert layered.completed
    assert abs(layered.gfm_speed[-1].mean() - 1.0) < abs(local.gfm_speed[-1].mean() - 1.0)


def test_local_support_runs_only_with_the_fast_layer():
    support = {"damping_gain": 5.0, "buffer_gain": 1.0}
    layered = utils.island_scenario("layered", horizon=1.0)
    layered.coordination["support"].update(support)
    local = utils.island_scenario("none", horizon=1.0)
    local.coordination["support"].update(support)
    assert Simulation(layered).use_support
    assert not Simulation(local).use_support
    result = run_scenario(layered)
    assert result.completed
    assert np.all(np.abs(result.gfm_p[-1]) <= result.gfm_rating + 1e-9)


def test_energy_drawdown_matches_delivered_power():
    config = utils.island_scenario(
        "none",
        horizon=2.0,
        devices={"gfm": {"capacity_pu_h": 10.0}},
        solver={"output_interval": 1e-3},
    )
    result = run_scenario(config)
    assert result.gfm_energy[0] == pytest.approx([5.0] * 3)
    delivered = trapezoid(result.gfm_p, result.time, axis=0) / 3600.0
    assert 5.0 - result.gfm_energy[-1] == pytest.approx(delivered, rel=1e-3)


def test_scripted_ldl_trip():
    config = utils.island_scenario("none", horizon=1.5)
    config.events = [{"time": 1.0, "kind": "relay_trip", "device": "LDL4"}]
    result = run_scenario(config)
    assert result.completed
    (trip,) = result.events_of(EventKind.relay_trip)
    assert trip.device == "LDL4"
    assert trip.payload["cause"] == "scripted"
    assert trip.payload["device_class"] == "ldl"
    assert trip.payload["scheduled_time"] == 1.0
    assert trip.payload["p_mw"] > 0
    assert result.ldl_p[-1, 0] == pytest.approx(0.0, abs=1e-9)


def test_unknown_device_aborts_run():
    config = utils.make_scenario(utils.machine_load_model(), horizon=0.2)
    config.events = [{"time": 0.05, "kind": "relay_trip", "device": "G9"}]
    result = run_scenario(config)
    assert not result.completed
    assert "G9" in result.metadata["abort_reason"]
    # the series stops at the abort
    assert result.time[-1] < 0.06
    with pytest.raises(SimulationAbort) as e:
        run_scenario(config, raise_on_abort=True)
    assert not e.value.result.completed


def test_metadata_records_run_settings():
    config = utils.island_scenario("local_only", horizon=0.1)
    result = Simulation(config).run()
    metadata = result.metadata
    assert metadata["coordination_mode"] == "local_only"
    assert metadata["deployment"] == [[1, 1.0], [2, 2.0], [3, 3.0]]
    assert metadata["config_hash"] == config_hash(config)
    assert metadata["integrator"] == "rk4"
    assert metadata["step"] == 1e-3


def test_config_hash_tracks_content():
    config = load_scenario("case1_base")
    assert config_hash(config) == config_hash(load_scenario("case1_base"))
    assert config_hash(config) != config_hash(replace(config, seed=config.seed + 1))


def test_batch_matches_single_runs():
    config = utils.make_scenario(utils.machine_load_model(), name="ml", horizon=0.5, events=FAULT_EVENTS[:2])
    cells = [
        SweepCell("row", "a", config),
        SweepCell("row", "b", None),
        SweepCell("row", "c", _no_source_scenario()),
    ]
    batch = run_batch(cells)
    assert len(batch.cells) == 3
    ran, skipped, failed = batch.cells
    assert np.array_equal(ran.result.rotor_angle, run_scenario(config).rotor_angle)
    assert event_log_digest(ran.result) == event_log_digest(run_scenario(config))
    assert skipped.skipped and skipped.result is None
    assert failed.result is None
    assert failed.error.startswith("InitializationError")
    assert "failed" in batch.table


def test_batch_accepts_plain_configs():
    config = utils.make_scenario(utils.machine_load_model(), name="ml", horizon=0.1)
    batch = run_batch([config])
    assert batch.cells[0].row == "ml"
    assert batch.results[0].completed


@pytest.mark.slow
def test_ieee68_flat_start():
    config = load_scenario("flat_68bus")
    config.solver["horizon"] = 1.0
    result = run_scenario(config)
    assert result.completed
    assert result.events_of(EventKind.relay_trip) == []
    assert np.max(np.abs(result.speed - 1.0)) < 1e-4
    assert result.metadata["equilibrium_residual"] < 1e-6
