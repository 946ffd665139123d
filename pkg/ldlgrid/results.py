"""
SimulationResult and its persisted form.

The series file is wide: one row per recorded instant, one column per signal, named
<signal>_<id> (for example V_50, delta_G14, gfm_p_GFM20). The static tables needed to
interpret the columns (bus areas, generator inertia, ratings) travel in metadata.json.
"""
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from ldlgrid import formats
from ldlgrid import simulation_structure as sim_struct
from ldlgrid.constants import OutputFormat, RunStatus
from ldlgrid.errors import ConfigurationError
from ldlgrid.events import Event

BUS_SIGNALS = {"voltage_magnitude": "V", "voltage_angle": "ang", "bus_frequency": "f"}
GENERATOR_SIGNALS = {
    "rotor_angle": "delta",
    "speed": "w",
    "generator_pe": "pe",
    "generator_online": "on",
}
GFM_SIGNALS = {
    "gfm_p": "gfm_p",
    "gfm_q": "gfm_q",
    "gfm_speed": "gfm_w",
    "gfm_energy": "gfm_energy",
    "freq_correction": "gfm_omega",
    "volt_correction": "gfm_e",
}
LDL_SIGNALS = {"ldl_p": "ldl_p"}


@dataclass
class SimulationResult:
    """
    Recorded trajectories of one run. Arrays are (n_samples, n_items); angles in rad,
    speeds in pu, powers in pu on the system base, bus frequency in Hz.
    Rotor angles are not wrapped.
    """

    name: str
    time: np.ndarray
    bus_ids: np.ndarray
    bus_areas: np.ndarray
    voltage_magnitude: np.ndarray
    voltage_angle: np.ndarray
    bus_frequency: np.ndarray
    generator_ids: np.ndarray
    generator_buses: np.ndarray
    generator_inertia: np.ndarray
    rotor_angle: np.ndarray
    speed: np.ndarray
    generator_pe: np.ndarray
    generator_online: np.ndarray
    gfm_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=object))
    gfm_buses: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    gfm_rating: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gfm_p: np.ndarray = None
    gfm_q: np.ndarray = None
    gfm_speed: np.ndarray = None
    gfm_energy: np.ndarray = None
    freq_correction: np.ndarray = None
    volt_correction: np.ndarray = None
    ldl_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=object))
    ldl_buses: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    ldl_p: np.ndarray = None
    events: List[Event] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        n = np.asarray(self.time).size
        for name, ids in (
            ("gfm", self.gfm_ids),
            ("ldl", self.ldl_ids),
        ):
            signals = GFM_SIGNALS if name == "gfm" else LDL_SIGNALS
            for attribute in signals:
                if getattr(self, attribute) is None:
                    setattr(self, attribute, np.zeros((n, len(ids))))

    @property
    def generator_areas(self):
        lookup = dict(zip(self.bus_ids.tolist(), self.bus_areas.tolist()))
        return np.array([lookup[b] for b in self.generator_buses.tolist()], dtype=int)

    @property
    def status(self):
        return RunStatus.from_value(self.metadata.get("status", RunStatus.completed.value))

    @property
    def completed(self):
        return self.status == RunStatus.completed

    def events_of(self, kind):
        return [e for e in self.events if e.kind == kind]

    def to_frame(self) -> pd.DataFrame:
        columns = {"time": self.time}
        groups = (
            (BUS_SIGNALS, self.bus_ids),
            (GENERATOR_SIGNALS, self.generator_ids),
            (GFM_SIGNALS, self.gfm_ids),
            (LDL_SIGNALS, self.ldl_ids),
        )
        for signals, ids in groups:
            for attribute, prefix in signals.items():
                values = np.asarray(getattr(self, attribute), dtype=float)
                for i, item in enumerate(ids):
                    columns[f"{prefix}_{item}"] = values[:, i]
        return pd.DataFrame(columns)

    def tables(self):
        """Static per-item data stored alongside the series"""
        return {
            "buses": {"id": self.bus_ids, "area": self.bus_areas},
            "generators": {
                "id": self.generator_ids,
                "bus": self.generator_buses,
                "h": self.generator_inertia,
            },
            "gfm": {"id": self.gfm_ids, "bus": self.gfm_buses, "rating": self.gfm_rating},
            "ldl": {"id": self.ldl_ids, "bus": self.ldl_buses},
        }


def _columns(df, prefix, ids):
    return np.column_stack([df[f"{prefix}_{i}"].values for i in ids]) if len(ids) else np.zeros((len(df), 0))


def save_result(result: SimulationResult, result_dir, fmt=OutputFormat.csv):
    """Writes the series, events and metadata files into result_dir (which must exist)"""
    formats.write_series(result.to_frame(), sim_struct.get_series_path(result_dir, fmt), fmt)
    formats.write_json([e.to_dict() for e in result.events], sim_struct.get_events_path(result_dir))
    metadata = dict(result.metadata)
    metadata["name"] = result.name
    metadata["tables"] = result.tables()
    formats.write_json(metadata, sim_struct.get_metadata_path(result_dir))


def load_result(result_dir) -> SimulationResult:
    """Rebuilds a SimulationResult from a result directory written by save_result"""
    series_path = sim_struct.find_series_path(result_dir)
    metadata_path = sim_struct.get_metadata_path(result_dir)
    if series_path is None or not os.path.isfile(metadata_path):
        raise ConfigurationError(f"{result_dir} does not hold a simulation result")
    df = formats.read_series(series_path)
    metadata = formats.read_json(metadata_path)
    tables = metadata.pop("tables")
    events = [Event.from_dict(e) for e in formats.read_json(sim_struct.get_events_path(result_dir))]

    bus_ids = np.asarray(tables["buses"]["id"], dtype=int)
    gen_ids = np.asarray(tables["generators"]["id"], dtype=object)
    gfm_ids = np.asarray(tables["gfm"]["id"], dtype=object)
    ldl_ids = np.asarray(tables["ldl"]["id"], dtype=object)
    arrays = {}
    for signals, ids in (
        (BUS_SIGNALS, bus_ids),
        (GENERATOR_SIGNALS, gen_ids),
        (GFM_SIGNALS, gfm_ids),
        (LDL_SIGNALS, ldl_ids),
    ):
        for attribute, prefix in signals.items():
            arrays[attribute] = _columns(df, prefix, ids)
    arrays["generator_online"] = arrays["generator_online"].astype(bool)
    return SimulationResult(
        name=metadata.get("name", os.path.basename(os.path.normpath(result_dir))),
        time=df["time"].values,
        bus_ids=bus_ids,
        bus_areas=np.asarray(tables["buses"]["area"], dtype=int),
        generator_ids=gen_ids,
        generator_buses=np.asarray(tables["generators"]["bus"], dtype=int),
        generator_inertia=np.asarray(tables["generators"]["h"], dtype=float),
        gfm_ids=gfm_ids,
        gfm_buses=np.asarray(tables["gfm"]["bus"], dtype=int),
        gfm_rating=np.asarray(tables["gfm"]["rating"], dtype=float),
        ldl_ids=ldl_ids,
        ldl_buses=np.asarray(tables["ldl"]["bus"], dtype=int),
        events=events,
        metadata=metadata,
        **arrays,
    )
