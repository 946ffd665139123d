"""
Common functions for the test scripts: array comparison and small networks and scenarios
that can be checked by hand.
"""

import os

import numpy as np

from ldlgrid.constants import DeploymentKind
from ldlgrid.grid_model import Branch, Bus, GeneratorSpec, LoadSpec, NetworkModel
from ldlgrid.results import SimulationResult
from ldlgrid.scenario_io import LdlConfig, ScenarioConfig, StorageConfig
from ldlgrid.utils import dump_yaml, update_params

ERROR_LIMIT = 1e-06


def compare_np_array(array1, array2, error_limit=ERROR_LIMIT):
    """first test if the two numpy arrays are of the same shape
       if pass, then test if the relative error between the two arrays are <= the preset error limit
       if any of the test fails, assertion error will be raised;
       array1: a numpy array from sample output, will be used as the denominator,
       array2: a numpy array from test output, makes part of the numerator.
       error_limit: preset error_limit to be compared with the relative error (array1-array2)/array1
    """

    assert array1.shape == array2.shape
    assert np.all(np.isclose(array1, array2, rtol=error_limit))


def line_model(x=0.1, r=0.0, slack_bus=None):
    """Two buses joined by one line"""
    return NetworkModel(
        buses=(Bus(1), Bus(2)),
        branches=(Branch(1, 1, 2, complex(r, x)),),
        slack_bus=slack_bus,
    )


def triangle_model(x=0.2):
    return NetworkModel(
        buses=(Bus(1), Bus(2), Bus(3)),
        branches=(
            Branch(1, 1, 2, 1j * x),
            Branch(2, 2, 3, 1j * x),
            Branch(3, 1, 3, 1j * x),
        ),
    )


def machine_load_model():
    """One machine at bus 1 feeding an 80 MW load at bus 2 over a double circuit"""
    return NetworkModel(
        buses=(Bus(1), Bus(2)),
        branches=(Branch(1, 1, 2, 0.01 + 0.2j), Branch(2, 1, 2, 0.01 + 0.2j)),
        generators=(GeneratorSpec("G1", 1, 80.0, v_set=1.0, h=5.0, xdp=0.03, rating_mw=150.0),),
        loads=(LoadSpec("L2", 2, 80.0, 20.0),),
        slack_bus=1,
        name="machine_load",
    )


def machine_load_tables():
    """machine_load_model as the content of a network yaml file"""
    return {
        "name": "machine_load",
        "base_mva": 100.0,
        "slack_bus": 1,
        "buses": {"columns": ["id", "area", "base_kv"], "rows": [[1, 1, 345.0], [2, 1, 345.0]]},
        "branches": {
            "columns": ["id", "from_bus", "to_bus", "r", "x", "b"],
            "rows": [[1, 1, 2, 0.01, 0.2, 0.0], [2, 1, 2, 0.01, 0.2, 0.0]],
        },
        "generators": {
            "columns": ["id", "bus", "p_mw", "v_set", "h", "xdp", "rating_mw"],
            "rows": [["G1", 1, 80.0, 1.0, 5.0, 0.03, 150.0]],
        },
        "loads": {"columns": ["id", "bus", "p_mw", "q_mvar"], "rows": [["L2", 2, 80.0, 20.0]]},
    }


def write_machine_load_network(directory):
    path = os.path.join(directory, "machine_load.yaml")
    dump_yaml(machine_load_tables(), path)
    return path


def island_model(n_units=3, x=0.05):
    """Storage buses 1..n each joined to a common load bus n+1; no machines"""
    load_bus = n_units + 1
    return NetworkModel(
        buses=tuple(Bus(i) for i in range(1, load_bus + 1)),
        branches=tuple(Branch(i, i, load_bus, 1j * x) for i in range(1, load_bus)),
        slack_bus=1,
        name="island",
    )


def make_scenario(model, name="test", horizon=1.0, **sections):
    """
    ScenarioConfig around an in-memory network with the default parameter sets.
    :param sections: nested overrides per section, e.g. solver={"step": 5e-4}
    """
    config = ScenarioConfig(name=name, network=model)
    config.solver["horizon"] = horizon
    for key, value in sections.items():
        current = getattr(config, key)
        if isinstance(current, dict):
            update_params(current, value)
        else:
            setattr(config, key, value)
    return config


def island_scenario(mode="none", ratings=(1.0, 2.0, 3.0), load=3.0, step_time=0.5, horizon=3.0, **sections):
    """Storage-only island: the load bus steps from zero to `load` pu at step_time"""
    model = island_model(len(ratings))
    buses = list(range(1, len(ratings) + 1))
    config = make_scenario(
        model,
        name=f"island_{mode}",
        horizon=horizon,
        coordination={"mode": mode},
        protection={"enabled": False},
        **sections,
    )
    config.storage = StorageConfig(
        deployment=DeploymentKind.embedded,
        buses=buses,
        fleet_rating=float(sum(ratings)),
        ratings={b: float(r) for b, r in zip(buses, ratings)},
    )
    config.ldl = [
        LdlConfig(
            bus=len(ratings) + 1,
            synthetic={
                "kind": "step",
                "peak": load,
                "base": 0.0,
                "step_time": step_time,
                "sample_interval": 0.01,
            },
        )
    ]
    return config


def synthetic_result(angles_deg, inertia=None, speed=None, online=None, areas=None, dt=0.01, events=()):
    """
    SimulationResult with one generator per bus and the given rotor angles (degrees),
    flat voltages everywhere else.
    """
    angles = np.atleast_2d(np.asarray(angles_deg, dtype=float))
    n_t, n_g = angles.shape
    bus_ids = np.arange(1, n_g + 1)
    inertia = np.full(n_g, 5.0) if inertia is None else np.asarray(inertia, dtype=float)
    speed = np.ones((n_t, n_g)) if speed is None else np.asarray(speed, dtype=float).reshape(n_t, n_g)
    online = np.ones((n_t, n_g), dtype=bool) if online is None else np.asarray(online, dtype=bool)
    areas = np.ones(n_g, dtype=int) if areas is None else np.asarray(areas, dtype=int)
    return SimulationResult(
        name="synthetic",
        time=np.arange(n_t) * dt,
        bus_ids=bus_ids,
        bus_areas=areas,
        voltage_magnitude=np.ones((n_t, n_g)),
        voltage_angle=np.zeros((n_t, n_g)),
        bus_frequency=np.full((n_t, n_g), 60.0),
        generator_ids=np.array([f"G{i}" for i in bus_ids], dtype=object),
        generator_buses=bus_ids,
        generator_inertia=inertia,
        rotor_angle=np.radians(angles),
        speed=speed,
        generator_pe=np.zeros((n_t, n_g)),
        generator_online=online,
        events=list(events),
        metadata={"status": "completed"},
    )
