"""
Scenario files: schema, validation, storage deployment and serialization.

A scenario yaml names a network, the large digital loads, the storage deployment, the
coordination/protection parameters, an event script and solver settings. Sections that
mirror a defaults json (solver, coordination, protection, devices) are deep-merged over
those defaults. See docs/scenario_schema.md.
"""
import math
import os
from dataclasses import dataclass, field
from os.path import abspath, dirname, isabs, isfile, join
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from ldlgrid import formats
from ldlgrid.config import ConfigKeys, get_defaults
from ldlgrid.constants import (
    DEFAULT_FLEET_RATING,
    SCHEMA_VERSION,
    BranchStatus,
    DeploymentKind,
    EventKind,
    GraphTopology,
    Integrator,
    Interpolation,
    ProfileKind,
    TripCause,
)
from ldlgrid.coordination import SafetyLimits, SupportSettings, coordination_mode
from ldlgrid.devices import LoadProfile, synthesize_profile
from ldlgrid.errors import ConfigurationError, ScenarioError, ScenarioValidationError
from ldlgrid.events import Event
from ldlgrid.grid_model import FaultSpec, NetworkModel, find_branch, load_network
from ldlgrid.protection import RideThroughCurve, UflsScheme
from ldlgrid.utils import compare_versions, dump_yaml, load_yaml, to_builtin, update_params

DATA_DIR = join(dirname(abspath(__file__)), "data")
SCENARIO_DIR = join(DATA_DIR, "scenarios")
NETWORK_DIR = join(DATA_DIR, "networks")
PROFILE_DIR = join(DATA_DIR, "profiles")

TOP_LEVEL_KEYS = {
    "schema_version",
    "name",
    "description",
    "extends",
    "network",
    "seed",
    "devices",
    "ldl",
    "storage",
    "coordination",
    "protection",
    "events",
    "solver",
}
STORAGE_KEYS = {"deployment", "buses", "penetration", "fleet_rating", "ratings"}
LDL_KEYS = {"bus", "profile", "synthetic", "interpolation", "zip", "scale"}


@dataclass
class LdlConfig:
    """A large digital load: a ZIP load at bus whose P follows a csv or synthetic profile"""

    bus: int
    profile: Optional[str] = None
    synthetic: Optional[Dict[str, Any]] = None
    interpolation: Interpolation = Interpolation.linear
    zip: Optional[Dict[str, List[float]]] = None
    scale: float = 1.0

    @property
    def device_id(self):
        return f"LDL{self.bus}"

    def to_dict(self):
        out = {"bus": self.bus, "interpolation": self.interpolation.value, "scale": self.scale}
        if self.profile is not None:
            out["profile"] = self.profile
        if self.synthetic is not None:
            out["synthetic"] = dict(self.synthetic)
        if self.zip is not None:
            out["zip"] = dict(self.zip)
        return out


@dataclass
class StorageConfig:
    deployment: DeploymentKind = DeploymentKind.none
    buses: Optional[List[int]] = None
    penetration: Optional[float] = None
    fleet_rating: float = DEFAULT_FLEET_RATING
    ratings: Dict[int, float] = field(default_factory=dict)

    def to_dict(self):
        out = {"deployment": self.deployment.value, "fleet_rating": self.fleet_rating}
        if self.buses is not None:
            out["buses"] = list(self.buses)
        if self.penetration is not None:
            out["penetration"] = self.penetration
        if self.ratings:
            out["ratings"] = {int(k): float(v) for k, v in self.ratings.items()}
        return out


@dataclass
class ScenarioConfig:
    name: str
    network: Union[str, NetworkModel]
    seed: int = 0
    description: str = ""
    schema_version: str = SCHEMA_VERSION
    devices: Dict[str, Any] = field(default_factory=lambda: get_defaults(ConfigKeys.devices))
    ldl: List[LdlConfig] = field(default_factory=list)
    storage: StorageConfig = field(default_factory=StorageConfig)
    coordination: Dict[str, Any] = field(default_factory=lambda: get_defaults(ConfigKeys.coordination))
    protection: Dict[str, Any] = field(default_factory=lambda: get_defaults(ConfigKeys.protection))
    events: List[Dict[str, Any]] = field(default_factory=list)
    solver: Dict[str, Any] = field(default_factory=lambda: get_defaults(ConfigKeys.solver))
    source: Optional[str] = field(default=None, compare=False)

    def load_model(self) -> NetworkModel:
        if isinstance(self.network, NetworkModel):
            return self.network
        return load_network(self.network)

    @property
    def ldl_buses(self):
        return [ldl.bus for ldl in self.ldl]


@dataclass(frozen=True)
class DeploymentPlan:
    entries: Tuple[Tuple[int, float], ...] = ()

    @property
    def buses(self):
        return [bus for bus, _ in self.entries]

    @property
    def ratings(self):
        return np.array([rating for _, rating in self.entries], dtype=float)

    @property
    def total(self):
        return float(self.ratings.sum()) if self.entries else 0.0

    def __len__(self):
        return len(self.entries)


def resolve_path(path, base_dir=None, fallback_dir=None):
    """Relative paths resolve against the referring file's directory, then the shipped data"""
    if path is None or isabs(str(path)):
        return path
    candidates = [join(base_dir, path)] if base_dir else []
    candidates.append(abspath(path))
    if fallback_dir:
        candidates += [join(fallback_dir, path), join(fallback_dir, os.path.basename(path))]
    for candidate in candidates:
        if isfile(candidate):
            return abspath(candidate)
    return abspath(candidates[0])


def find_scenario(name_or_path):
    """A path to an existing file, or the name of a shipped scenario (with or without .yaml)"""
    if isfile(name_or_path):
        return abspath(name_or_path)
    for candidate in (name_or_path, f"{name_or_path}.yaml"):
        shipped = join(SCENARIO_DIR, candidate)
        if isfile(shipped):
            return shipped
    raise ConfigurationError(f"scenario not found: {name_or_path}")


def _read_with_extends(path, seen=()):
    raw = load_yaml(path)
    if raw is None:
        raise ConfigurationError(f"{path} is empty")
    base_name = raw.pop("extends", None)
    if base_name is None:
        return raw
    base_path = resolve_path(base_name, dirname(path), SCENARIO_DIR)
    if base_path in seen:
        raise ConfigurationError(f"circular extends chain through {base_path}")
    if not isfile(base_path):
        raise ConfigurationError(f"{path}: extended scenario not found: {base_name}")
    base = _read_with_extends(base_path, seen + (path,))
    # lists replace lists, mappings merge
    return update_params(base, raw)


def _as_int_list(value, what, errors):
    try:
        return [int(v) for v in value]
    except (TypeError, ValueError):
        errors.append(f"{what} must be a list of bus numbers, got {value}")
        return []


def _parse_ldl(raw_ldl, base_dir, errors) -> List[LdlConfig]:
    ldls = []
    for i, entry in enumerate(raw_ldl or []):
        where = f"ldl[{i}]"
        if not isinstance(entry, dict) or "bus" not in entry:
            errors.append(f"{where} must be a mapping with a bus")
            continue
        unknown = set(entry) - LDL_KEYS
        if unknown:
            errors.append(f"{where}: unknown keys {sorted(unknown)}")
        if ("profile" in entry) == ("synthetic" in entry):
            errors.append(f"{where}: give exactly one of profile or synthetic")
        profile = resolve_path(entry.get("profile"), base_dir, PROFILE_DIR)
        if profile is not None and not isfile(profile):
            errors.append(f"{where}: profile file not found: {entry.get('profile')}")
        synthetic = entry.get("synthetic")
        if synthetic is not None:
            if not isinstance(synthetic, dict) or not ProfileKind.has_value(synthetic.get("kind")):
                errors.append(f"{where}: synthetic needs a kind in {[k.value for k in ProfileKind]}")
            elif float(synthetic.get("peak", -1)) < 0:
                errors.append(f"{where}: synthetic peak must be >= 0")
        interpolation = entry.get("interpolation", Interpolation.linear.value)
        if not Interpolation.has_value(interpolation):
            errors.append(f"{where}: unknown interpolation {interpolation}")
            interpolation = Interpolation.linear.value
        zip_coeffs = entry.get("zip")
        if zip_coeffs is not None:
            for part in ("p", "q"):
                coeffs = zip_coeffs.get(part)
                if coeffs is not None and (len(coeffs) != 3 or abs(sum(coeffs) - 1.0) > 1e-9):
                    errors.append(f"{where}: zip {part} must be three coefficients summing to 1")
        ldls.append(
            LdlConfig(
                bus=int(entry["bus"]),
                profile=profile,
                synthetic=dict(synthetic) if isinstance(synthetic, dict) else None,
                interpolation=Interpolation.from_value(interpolation),
                zip=dict(zip_coeffs) if zip_coeffs is not None else None,
                scale=float(entry.get("scale", 1.0)),
            )
        )
    buses = [ldl.bus for ldl in ldls]
    duplicates = sorted({b for b in buses if buses.count(b) > 1})
    if duplicates:
        errors.append(f"duplicate ldl bus(es) {duplicates}")
    return ldls


def _parse_storage(raw, errors) -> StorageConfig:
    raw = raw or {}
    unknown = set(raw) - STORAGE_KEYS
    if unknown:
        errors.append(f"storage: unknown keys {sorted(unknown)}")
    deployment = raw.get("deployment", DeploymentKind.none.value)
    if not DeploymentKind.has_value(deployment):
        errors.append(f"storage: unknown deployment {deployment}")
        deployment = DeploymentKind.none.value
    storage = StorageConfig(deployment=DeploymentKind.from_value(deployment))
    if raw.get("buses") is not None:
        storage.buses = _as_int_list(raw["buses"], "storage.buses", errors)
        duplicates = sorted({b for b in storage.buses if storage.buses.count(b) > 1})
        if duplicates:
            errors.append(f"storage: duplicate storage bus(es) {duplicates}")
    if raw.get("penetration") is not None:
        storage.penetration = float(raw["penetration"])
        if not 0.0 < storage.penetration <= 100.0:
            errors.append(f"storage: penetration must be in (0, 100], got {storage.penetration}")
        if storage.buses is not None:
            errors.append("storage: give either buses or penetration, not both")
    storage.fleet_rating = float(raw.get("fleet_rating", DEFAULT_FLEET_RATING))
    if storage.fleet_rating <= 0:
        errors.append("storage: fleet_rating must be positive")
    storage.ratings = {int(k): float(v) for k, v in (raw.get("ratings") or {}).items()}
    if any(v <= 0 for v in storage.ratings.values()):
        errors.append("storage: rating overrides must be positive")
    if storage.deployment == DeploymentKind.embedded and storage.buses is None and storage.penetration is None:
        errors.append("storage: embedded deployment needs buses or penetration")
    return storage


def _check_solver(solver, errors):
    step = float(solver["step"])
    if step <= 0:
        errors.append("solver: step must be positive")
    if float(solver["horizon"]) <= 0:
        errors.append("solver: horizon must be positive")
    if step > float(solver["event_tolerance"]) + 1e-15:
        errors.append("solver: step must not exceed event_tolerance")
    if float(solver["output_interval"]) < step - 1e-15:
        errors.append("solver: output_interval must be >= step")
    if not Integrator.has_value(solver["integrator"]):
        errors.append(f"solver: unknown integrator {solver['integrator']}")


def _check_coordination(coordination, errors):
    try:
        coordination_mode(coordination)
    except ConfigurationError as e:
        errors.append(f"coordination: {e}")
    if not float(coordination["update_period"]) > 0:
        errors.append("coordination: update_period must be positive")
    if float(coordination["latency"]) < 0:
        errors.append("coordination: latency must be >= 0")
    try:
        SafetyLimits.from_config(coordination["safety"])
    except ConfigurationError as e:
        errors.append(f"coordination.safety: {e}")
    try:
        SupportSettings.from_config(coordination.get("support"))
    except (ConfigurationError, TypeError, ValueError) as e:
        errors.append(f"coordination.support: {e}")
    topology = coordination["graph"].get("topology", GraphTopology.electrical.value)
    if not GraphTopology.has_value(topology):
        errors.append(f"coordination.graph: unknown topology {topology}")


def protection_curves(protection) -> Dict[str, RideThroughCurve]:
    """Builds the five ride-through curves of a protection section"""
    h = float(protection["hysteresis"])
    layout = {
        "ldl_voltage": ("ldl", "voltage"),
        "gfm_voltage": ("gfm", "voltage"),
        "gfm_frequency": ("gfm", "frequency"),
        "generator_voltage": ("generator", "voltage"),
        "generator_frequency": ("generator", "frequency"),
    }
    return {
        name: RideThroughCurve.from_config(name, protection[name], applies_to, quantity, h)
        for name, (applies_to, quantity) in layout.items()
    }


def _check_protection(protection, errors):
    try:
        protection_curves(protection)
    except (ConfigurationError, ValueError, TypeError, KeyError) as e:
        errors.append(f"protection: {e}")
    try:
        UflsScheme(stages=tuple(tuple(s) for s in protection["ufls"]["stages"]), bus_ids=[])
    except (ConfigurationError, TypeError) as e:
        errors.append(f"protection.ufls: {e}")
    if float(protection["measurement_window"]) <= 0:
        errors.append("protection: measurement_window must be positive")


def _check_events(raw_events, horizon, errors):
    for i, event in enumerate(raw_events):
        where = f"events[{i}]"
        if not isinstance(event, dict):
            errors.append(f"{where} must be a mapping")
            continue
        kind = event.get("kind")
        if not EventKind.has_str_value(kind):
            errors.append(f"{where}: unknown kind {kind}")
            continue
        time = event.get("time")
        if not isinstance(time, (int, float)) or not 0.0 <= time <= horizon:
            errors.append(f"{where}: time must be within [0, {horizon}], got {time}")
        if kind in ("apply_fault", "clear_fault", "switch_branch") and "branch" not in event:
            errors.append(f"{where}: {kind} needs a branch")
        if kind == "switch_branch" and not BranchStatus.has_value(event.get("status")):
            errors.append(f"{where}: switch_branch needs status in_service or open")
        if kind == "apply_fault" and not 0.0 <= float(event.get("location", 0.5)) <= 1.0:
            errors.append(f"{where}: fault location must be in [0, 1]")
        if kind == "relay_trip":
            if "device" not in event:
                errors.append(f"{where}: relay_trip needs a device")
            if not TripCause.has_value(event.get("cause", TripCause.scripted.value)):
                errors.append(f"{where}: unknown trip cause {event.get('cause')}")


def _check_against_network(config: ScenarioConfig, model: NetworkModel, errors):
    bus_ids = set(model.bus_ids.tolist())
    for ldl in config.ldl:
        if ldl.bus not in bus_ids:
            errors.append(f"ldl at bus {ldl.bus}: bus does not exist")
    for bus in config.storage.buses or []:
        if bus not in bus_ids:
            errors.append(f"storage bus {bus} does not exist")
    for bus in config.storage.ratings:
        if bus not in bus_ids:
            errors.append(f"storage rating override for missing bus {bus}")
    for i, event in enumerate(config.events):
        if "branch" in event:
            try:
                resolve_branch(model, event["branch"])
            except ScenarioError as e:
                errors.append(f"events[{i}]: {e}")
    try:
        resolve_deployment(config, model)
    except ConfigurationError as e:
        errors.append(str(e))


def parse_scenario(raw: Dict, source=None, base_dir=None, check_network=True) -> ScenarioConfig:
    """
    Builds a ScenarioConfig from a raw mapping, collecting every problem before raising.
    :raises ScenarioValidationError: listing all violations
    """
    errors = []
    raw = dict(raw)
    unknown = set(raw) - TOP_LEVEL_KEYS
    if unknown:
        errors.append(f"unknown top level keys {sorted(unknown)}")
    version = str(raw.get("schema_version", ""))
    if not version:
        errors.append("schema_version is required")
    elif compare_versions(version.split(".")[0], SCHEMA_VERSION.split(".")[0]) > 0:
        errors.append(f"schema_version {version} is newer than the supported {SCHEMA_VERSION}")
    network = raw.get("network")
    if isinstance(network, NetworkModel):
        network_path = network
    elif network is None:
        errors.append("network is required")
        network_path = None
    else:
        network_path = resolve_path(network, base_dir, NETWORK_DIR)
        if not isfile(network_path):
            errors.append(f"network file not found: {network}")
    try:
        seed = int(raw.get("seed", 0))
    except (TypeError, ValueError):
        errors.append(f"seed must be an integer, got {raw.get('seed')}")
        seed = 0

    sections = {}
    for key in ConfigKeys:
        value = raw.get(key.name) or {}
        if not isinstance(value, dict):
            errors.append(f"{key.name} must be a mapping")
            value = {}
        sections[key.name] = update_params(get_defaults(key), value)
    _check_solver(sections["solver"], errors)
    _check_coordination(sections["coordination"], errors)
    _check_protection(sections["protection"], errors)

    ldls = _parse_ldl(raw.get("ldl"), base_dir, errors)
    storage = _parse_storage(raw.get("storage"), errors)
    events = list(raw.get("events") or [])
    _check_events(events, float(sections["solver"]["horizon"]), errors)

    config = ScenarioConfig(
        name=str(raw.get("name") or (os.path.splitext(os.path.basename(source))[0] if source else "scenario")),
        network=network_path,
        seed=seed,
        description=str(raw.get("description", "")),
        schema_version=version or SCHEMA_VERSION,
        devices=sections["devices"],
        ldl=ldls,
        storage=storage,
        coordination=sections["coordination"],
        protection=sections["protection"],
        events=events,
        solver=sections["solver"],
        source=source,
    )
    if check_network and not errors:
        try:
            model = config.load_model()
        except ConfigurationError as e:
            errors.append(str(e))
        else:
            _check_against_network(config, model, errors)
    if errors:
        raise ScenarioValidationError(errors, source=source)
    return config


def load_scenario(path, check_network=True) -> ScenarioConfig:
    """
    Reads and validates a scenario file (or the name of a shipped scenario).
    :raises ScenarioValidationError: with every schema violation found
    :raises ConfigurationError: when the file does not exist
    """
    path = find_scenario(path)
    raw = _read_with_extends(path)
    return parse_scenario(raw, source=path, base_dir=dirname(path), check_network=check_network)


def serialize_scenario(config: ScenarioConfig) -> Dict:
    """Plain mapping that parse_scenario turns back into an equal config"""
    if isinstance(config.network, NetworkModel):
        raise ConfigurationError("only scenarios referencing a network file can be serialized")
    return to_builtin(
        {
            "schema_version": config.schema_version,
            "name": config.name,
            "description": config.description,
            "network": config.network,
            "seed": config.seed,
            "devices": config.devices,
            "ldl": [ldl.to_dict() for ldl in config.ldl],
            "storage": config.storage.to_dict(),
            "coordination": config.coordination,
            "protection": config.protection,
            "events": config.events,
            "solver": config.solver,
        }
    )


def dump_scenario(config: ScenarioConfig, path):
    dump_yaml(serialize_scenario(config), path)


def resolve_branch(model: NetworkModel, reference) -> int:
    """Branch id from an id or a [from_bus, to_bus] pair"""
    if isinstance(reference, (list, tuple)):
        if len(reference) != 2:
            raise ScenarioError(f"branch reference {reference} must be an id or a bus pair")
        return find_branch(model, reference[0], reference[1]).id
    return model.branch(int(reference)).id


def build_events(config: ScenarioConfig, model: NetworkModel) -> List[Event]:
    """Scheduled events of the scenario script, with branch references resolved"""
    fault_admittance = float(config.devices["fault_admittance"])
    events = []
    for raw in config.events:
        kind = EventKind.from_str(raw["kind"])
        payload = {k: v for k, v in raw.items() if k not in ("time", "kind", "branch", "device")}
        if "branch" in raw:
            device = resolve_branch(model, raw["branch"])
            payload["branch"] = to_builtin(raw["branch"])
        else:
            device = raw.get("device", "")
        if kind == EventKind.apply_fault:
            payload.setdefault("location", 0.5)
            payload.setdefault("admittance", fault_admittance)
        if kind == EventKind.relay_trip:
            payload.setdefault("cause", TripCause.scripted.value)
        events.append(Event(time=float(raw["time"]), kind=kind, device=device, payload=payload))
    return events


def fault_from_event(event: Event) -> FaultSpec:
    return FaultSpec(
        branch_id=int(event.device),
        location_fraction=float(event.payload.get("location", 0.5)),
        fault_admittance=complex(event.payload.get("admittance")),
    )


def load_bus_order(model: NetworkModel) -> List[int]:
    """Load buses by descending nominal demand, ties by bus id"""
    demand = {}
    for load in model.loads:
        demand[load.bus] = demand.get(load.bus, 0.0) + load.p_mw
    return [bus for bus, p in sorted(demand.items(), key=lambda kv: (-kv[1], kv[0])) if p > 0]


def resolve_deployment(config: ScenarioConfig, network: NetworkModel) -> DeploymentPlan:
    """
    Storage buses and ratings.

    collocated: the listed buses, or every LDL bus
    embedded: the listed buses, or the given percentage of load buses taken in descending
    demand order (count rounded half up)
    The fleet rating is split equally over the buses without an explicit override.
    :raises ConfigurationError: when no bus is selected or overrides cannot keep the fleet total
    """
    storage = config.storage
    if storage.deployment == DeploymentKind.none:
        return DeploymentPlan()
    if storage.buses is not None:
        buses = list(storage.buses)
    elif storage.deployment == DeploymentKind.collocated:
        buses = list(config.ldl_buses)
    else:
        order = load_bus_order(network)
        count = int(math.floor(storage.penetration / 100.0 * len(order) + 0.5))
        if count == 0:
            raise ConfigurationError(
                f"storage penetration {storage.penetration}% selects no bus out of {len(order)}"
            )
        buses = order[:count]
    if not buses:
        raise ConfigurationError(f"{storage.deployment.value} deployment resolves to no storage bus")

    overrides = {b: r for b, r in storage.ratings.items()}
    stray = sorted(set(overrides) - set(buses))
    if stray:
        raise ConfigurationError(f"storage rating overrides for buses outside the deployment {stray}")
    fixed = sum(overrides.values())
    free = [b for b in buses if b not in overrides]
    remaining = storage.fleet_rating - fixed
    if free:
        if remaining <= 0:
            raise ConfigurationError("storage rating overrides exceed the fleet rating")
        share = remaining / len(free)
    elif abs(remaining) > 1e-9:
        raise ConfigurationError(
            f"storage rating overrides sum to {fixed}, not the fleet rating {storage.fleet_rating}"
        )
    else:
        share = 0.0
    return DeploymentPlan(tuple((b, overrides.get(b, share)) for b in buses))


def build_profile(ldl: LdlConfig, horizon, seed, index=0) -> Tuple[LoadProfile, Optional[LoadProfile]]:
    """
    P profile (and Q profile when the csv has a q_pu column) of an LDL.
    Synthetic profiles are seeded with the scenario seed offset by the LDL position.
    """
    if ldl.profile is not None:
        df = formats.load_profile_csv(ldl.profile)
        name = os.path.basename(ldl.profile)
        p = LoadProfile(df["time_s"].values, df["p_pu"].values * ldl.scale, ldl.interpolation, name)
        q = None
        if "q_pu" in df.columns:
            q = LoadProfile(df["time_s"].values, df["q_pu"].values * ldl.scale, ldl.interpolation, name)
        return p, q
    params = dict(ldl.synthetic)
    kind = params.pop("kind")
    params.setdefault("horizon", horizon)
    params.setdefault("seed", seed + index)
    profile = synthesize_profile(kind, name=ldl.device_id, **params)
    profile.interpolation = ldl.interpolation
    return profile.scaled(ldl.scale), None


@dataclass
class SweepCell:
    row: str
    column: str
    config: Optional[ScenarioConfig]


def load_sweep(path) -> List[SweepCell]:
    """
    Reads a batch file: rows name scenario files, columns give overrides merged into each row.
    Cells listed under skip produce a None config and appear as "--" in the table.
    """
    path = find_scenario(path)
    raw = load_yaml(path)
    base_dir = dirname(path)
    errors = []
    rows = raw.get("rows") or []
    columns = raw.get("columns") or [{"label": "", "overrides": {}}]
    skip = {(a, b) for a, b in raw.get("skip") or []}
    cells = []
    for row in rows:
        scenario_path = resolve_path(row.get("scenario"), base_dir, SCENARIO_DIR)
        if not scenario_path or not isfile(scenario_path):
            errors.append(f"row {row.get('label')}: scenario not found: {row.get('scenario')}")
            continue
        for column in columns:
            if (row["label"], column["label"]) in skip:
                cells.append(SweepCell(row["label"], column["label"], None))
                continue
            merged = update_params(_read_with_extends(scenario_path), column.get("overrides") or {})
            merged["name"] = f"{merged.get('name', row['label'])}_{column.get('tag', column['label'])}".replace(" ", "_")
            try:
                config = parse_scenario(merged, source=scenario_path, base_dir=dirname(scenario_path))
            except ScenarioValidationError as e:
                errors += [f"{row['label']}/{column['label']}: {m}" for m in e.errors]
                continue
            cells.append(SweepCell(row["label"], column["label"], config))
    if errors:
        raise ScenarioValidationError(errors, source=path)
    return cells
