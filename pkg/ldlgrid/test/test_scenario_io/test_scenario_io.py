import os
import shutil
import tempfile

import pytest

from ldlgrid.constants import DeploymentKind, EventKind, Interpolation
from ldlgrid.errors import ConfigurationError, ScenarioValidationError
from ldlgrid.grid_model import load_network
from ldlgrid.scenario_io import (
    NETWORK_DIR,
    SCENARIO_DIR,
    LdlConfig,
    StorageConfig,
    build_events,
    build_profile,
    dump_scenario,
    fault_from_event,
    find_scenario,
    load_bus_order,
    load_scenario,
    load_sweep,
    parse_scenario,
    protection_curves,
    resolve_branch,
    resolve_deployment,
    serialize_scenario,
)
from ldlgrid.devices import sample_profile
from ldlgrid.test.tool import utils
from ldlgrid.utils import dump_yaml

TMP_DIR_NAME = None
IEEE68_LOAD_ORDER = [
    37, 52, 42, 41, 20, 8, 4, 51, 16, 3, 15, 24, 29, 27, 21, 44, 39, 1,
    23, 48, 7, 25, 45, 28, 47, 49, 18, 46, 26, 33, 9, 36, 50, 40, 12,
]
SHIPPED = sorted(
    os.path.splitext(f)[0]
    for f in os.listdir(SCENARIO_DIR)
    if f.endswith(".yaml") and f != "case1_sweep.yaml"
)


def setup_module(scope="module"):
    """ create a tmp directory for scenario files written by the tests"""
    global TMP_DIR_NAME
    TMP_DIR_NAME = tempfile.mkdtemp(prefix="tmp_test_scenario_io_")


def teardown_module():
    shutil.rmtree(TMP_DIR_NAME, ignore_errors=True)


@pytest.fixture(scope="module")
def ieee68():
    return load_network(os.path.join(NETWORK_DIR, "ieee68.yaml"))


def _raw(**kwargs):
    raw = {"schema_version": "1.0", "name": "t", "network": "ieee68.yaml"}
    raw.update(kwargs)
    return raw


@pytest.mark.parametrize("test_scenario", SHIPPED)
def test_shipped_scenarios_validate(test_scenario):
    config = load_scenario(test_scenario)
    assert config.name == test_scenario
    assert os.path.isfile(config.network)


def test_extends_merges_base(ieee68):
    config = load_scenario("case1_collocated")
    assert config.ldl_buses == [39, 44, 45, 50, 51]
    assert config.storage.deployment == DeploymentKind.collocated
    assert config.coordination["mode"] == "layered"
    assert config.solver["horizon"] == 40.0
    # untouched defaults survive the merge
    assert config.solver["step"] == 1e-3
    assert len(config.events) == 3


@pytest.mark.parametrize(
    "test_scenario, expected_buses, expected_rating",
    [
        ("case1_nostorage", [], None),
        ("case1_collocated", [39, 44, 45, 50, 51], 18.4 / 5),
        ("case1_full_embedded", sorted(IEEE68_LOAD_ORDER), 18.4 / 35),
        (
            "case1_embedded57",
            [1, 3, 4, 8, 15, 16, 20, 24, 27, 29, 33, 36, 37, 39, 41, 42, 44, 48, 50, 52],
            18.4 / 20,
        ),
        ("case2_collocated", [20, 37], 9.2),
    ],
)
def test_resolve_deployment(ieee68, test_scenario, expected_buses, expected_rating):
    plan = resolve_deployment(load_scenario(test_scenario), ieee68)
    assert sorted(plan.buses) == expected_buses
    if expected_rating is None:
        assert len(plan) == 0 and plan.total == 0.0
    else:
        assert plan.ratings.tolist() == pytest.approx([expected_rating] * len(expected_buses))
        assert plan.total == pytest.approx(18.4)


def test_load_bus_order(ieee68):
    assert load_bus_order(ieee68) == IEEE68_LOAD_ORDER


def test_penetration_takes_largest_loads(ieee68):
    config = load_scenario("case1_base")
    config.storage = StorageConfig(deployment=DeploymentKind.embedded, penetration=10.0)
    # 3.5 rounds half up to 4
    assert resolve_deployment(config, ieee68).buses == [37, 52, 42, 41]


def test_penetration_selecting_no_bus(ieee68):
    config = load_scenario("case1_base")
    config.storage = StorageConfig(deployment=DeploymentKind.embedded, penetration=1.0)
    with pytest.raises(ConfigurationError):
        resolve_deployment(config, ieee68)


def test_rating_overrides(ieee68):
    config = load_scenario("case2_collocated")
    config.storage.ratings = {20: 4.0}
    plan = resolve_deployment(config, ieee68)
    assert dict(plan.entries) == pytest.approx({20: 4.0, 37: 14.4})
    config.storage.ratings = {20: 20.0}
    with pytest.raises(ConfigurationError):
        resolve_deployment(config, ieee68)
    config.storage.ratings = {21: 1.0}
    with pytest.raises(ConfigurationError):
        resolve_deployment(config, ieee68)


@pytest.mark.parametrize(
    "test_storage, expected_message",
    [
        ({"deployment": "embedded", "penetration": 0}, "penetration must be in (0, 100]"),
        ({"deployment": "embedded", "penetration": 120}, "penetration must be in (0, 100]"),
        ({"deployment": "embedded", "buses": [3, 3]}, "duplicate storage bus(es) [3]"),
        ({"deployment": "embedded"}, "embedded deployment needs buses or penetration"),
        ({"deployment": "somewhere"}, "unknown deployment somewhere"),
        ({"deployment": "embedded", "buses": [3], "penetration": 50}, "either buses or penetration"),
    ],
)
def test_storage_validation(test_storage, expected_message):
    with pytest.raises(ScenarioValidationError) as e:
        parse_scenario(_raw(storage=test_storage), base_dir=TMP_DIR_NAME)
    assert any(expected_message in message for message in e.value.errors)


def test_validation_collects_every_problem():
    raw = _raw(
        schema_version="2.0",
        bogus=1,
        solver={"step": -1.0},
        coordination={"mode": "central"},
        events=[{"time": 1.0, "kind": "meteor"}, {"time": 1.0, "kind": "apply_fault"}],
    )
    with pytest.raises(ScenarioValidationError) as e:
        parse_scenario(raw)
    assert len(e.value.errors) == 6
    assert "6 problem(s)" in str(e.value)


@pytest.mark.parametrize(
    "test_events",
    [
        [{"time": 50.0, "kind": "clear_fault", "branch": 1}],
        [{"time": 1.0, "kind": "switch_branch", "branch": 1, "status": "closed"}],
        [{"time": 1.0, "kind": "apply_fault", "branch": 1, "location": 2.0}],
        [{"time": 1.0, "kind": "relay_trip"}],
        [{"time": 1.0, "kind": "relay_trip", "device": "G1", "cause": "bored"}],
        [{"time": 1.0, "kind": "clear_fault", "branch": [1, 68]}],
    ],
)
def test_event_validation(test_events):
    with pytest.raises(ScenarioValidationError):
        parse_scenario(_raw(events=test_events, solver={"horizon": 10.0}))


@pytest.mark.parametrize(
    "test_ldl",
    [
        [{"bus": 39}],
        [{"bus": 39, "profile": "ldl_bus39.csv", "synthetic": {"kind": "step", "peak": 1.0}}],
        [{"bus": 39, "profile": "missing.csv"}],
        [{"bus": 39, "synthetic": {"kind": "sawtooth", "peak": 1.0}}],
        [{"bus": 39, "profile": "ldl_bus39.csv", "zip": {"p": [0.5, 0.5, 0.5]}}],
        [{"bus": 39, "profile": "ldl_bus39.csv"}, {"bus": 39, "profile": "ldl_bus39.csv"}],
        [{"bus": 999, "profile": "ldl_bus39.csv"}],
    ],
)
def test_ldl_validation(test_ldl):
    with pytest.raises(ScenarioValidationError):
        parse_scenario(_raw(ldl=test_ldl))


def test_missing_network():
    with pytest.raises(ScenarioValidationError):
        parse_scenario(_raw(network="nowhere.yaml"))


def test_find_scenario():
    assert find_scenario("case1_base") == os.path.join(SCENARIO_DIR, "case1_base.yaml")
    assert find_scenario("case1_base.yaml") == os.path.join(SCENARIO_DIR, "case1_base.yaml")
    with pytest.raises(ConfigurationError):
        find_scenario("case9")


def test_circular_extends():
    a = os.path.join(TMP_DIR_NAME, "a.yaml")
    b = os.path.join(TMP_DIR_NAME, "b.yaml")
    dump_yaml({"extends": "b.yaml", "name": "a"}, a)
    dump_yaml({"extends": "a.yaml", "name": "b"}, b)
    with pytest.raises(ConfigurationError):
        load_scenario(a)


@pytest.mark.parametrize("test_scenario", ["case1_collocated", "case1_embedded57", "case2_nostorage"])
def test_serialize_parse_round_trip(test_scenario):
    config = load_scenario(test_scenario)
    assert parse_scenario(serialize_scenario(config)) == config


def test_dump_load_round_trip():
    config = load_scenario("case1_full_embedded")
    path = os.path.join(TMP_DIR_NAME, "dumped.yaml")
    dump_scenario(config, path)
    assert load_scenario(path) == config


def test_in_memory_network_cannot_be_serialized():
    with pytest.raises(ConfigurationError):
        serialize_scenario(utils.make_scenario(utils.machine_load_model()))


def test_build_events(ieee68):
    config = load_scenario("case1_base")
    events = build_events(config, ieee68)
    assert [e.kind for e in events] == [EventKind.apply_fault, EventKind.switch_branch, EventKind.switch_branch]
    branch_id = resolve_branch(ieee68, [50, 52])
    assert all(e.device == str(branch_id) for e in events)
    assert [e.time for e in events] == [12.25, 12.45, 12.825]
    fault = fault_from_event(events[0])
    assert fault.branch_id == branch_id
    assert fault.location_fraction == 0.5
    assert fault.fault_admittance == 1e4
    assert events[1].payload["status"] == "open"


def test_scripted_trip_defaults_cause(ieee68):
    config = utils.make_scenario(ieee68, events=[])
    config.events = [{"time": 1.0, "kind": "relay_trip", "device": "G3"}]
    (event,) = build_events(config, ieee68)
    assert event.device == "G3"
    assert event.payload == {"cause": "scripted"}


def test_build_profile_from_csv():
    config = load_scenario("case1_base")
    assert config.ldl[0].scale == 0.2
    p, q = build_profile(config.ldl[0], horizon=40.0, seed=config.seed)
    assert q is None
    assert p.name == "ldl_bus39.csv"
    assert p.values[0] == pytest.approx(8.1066 * 0.2)
    assert p.interpolation == Interpolation.linear


def test_build_profile_synthetic_scaled():
    ldl = LdlConfig(
        bus=4,
        synthetic={"kind": "step", "peak": 2.0, "base": 0.0, "step_time": 0.5, "sample_interval": 0.01},
        scale=0.5,
    )
    p, q = build_profile(ldl, horizon=1.0, seed=0)
    assert q is None
    assert p.name == "LDL4"
    assert sample_profile(p, 0.25) == 0.0
    assert sample_profile(p, 0.75) == pytest.approx(1.0)


def test_protection_curves_from_defaults():
    curves = protection_curves(load_scenario("flat_68bus").protection)
    assert sorted(curves) == ["generator_frequency", "generator_voltage", "gfm_frequency", "gfm_voltage", "ldl_voltage"]
    assert curves["ldl_voltage"].thresholds.tolist() == [0.45, 0.65, 0.9, 1.2, 1.1]
    assert curves["gfm_frequency"].quantity == "frequency"


def test_load_sweep():
    cells = load_sweep("case1_sweep")
    assert len(cells) == 12
    skipped = [c for c in cells if c.config is None]
    assert [(c.row, c.column) for c in skipped] == [("No Storage", "Safety-Consensus")]
    uncoordinated = [c for c in cells if c.column == "Without Coordination"]
    assert len(uncoordinated) == 6
    assert all(c.config.coordination["mode"] == "none" for c in uncoordinated)
    assert "case1_nostorage_none" in [c.config.name for c in uncoordinated]
    names = [c.config.name for c in cells if c.config is not None]
    assert "case1_full_embedded_layered" in names
    assert len(set(names)) == len(names)
