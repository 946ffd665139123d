"""
Functions to load and save the files ldlgrid reads and writes:
network tables, load profiles and persisted results.
"""
import json

import numpy as np
import pandas as pd

from ldlgrid.constants import OutputFormat
from ldlgrid.errors import ConfigurationError
from ldlgrid.utils import load_yaml, to_builtin

NETWORK_TABLES = {
    "buses": {
        "required": ["id"],
        "defaults": {"area": 1, "base_kv": 345.0, "g_shunt": 0.0, "b_shunt": 0.0},
    },
    "branches": {
        "required": ["id", "from_bus", "to_bus", "x"],
        "defaults": {"r": 0.0, "b": 0.0, "tap": 1.0, "status": "in_service"},
    },
    "generators": {
        "required": ["id", "bus", "p_mw", "h", "xdp"],
        "defaults": {
            "v_set": 1.0,
            "rating_mw": np.nan,
            "damping": np.nan,
            "droop": np.nan,
            "governor_lag": np.nan,
        },
    },
    "loads": {
        "required": ["id", "bus", "p_mw"],
        "defaults": {"q_mvar": 0.0},
    },
}

PROFILE_COLUMNS = ["time_s", "p_pu"]


def _table(raw, name, spec, source):
    if raw is None:
        return pd.DataFrame(columns=spec["required"] + list(spec["defaults"]))
    columns = raw.get("columns")
    rows = raw.get("rows", [])
    if columns is None:
        raise ConfigurationError(f"{source}: table '{name}' has no columns list")
    bad_rows = [i for i, r in enumerate(rows) if len(r) != len(columns)]
    if bad_rows:
        raise ConfigurationError(
            f"{source}: table '{name}' rows {bad_rows} do not match the {len(columns)} columns"
        )
    df = pd.DataFrame(rows, columns=columns)
    missing = [c for c in spec["required"] if c not in df.columns]
    if missing:
        raise ConfigurationError(f"{source}: table '{name}' is missing columns {missing}")
    for column, default in spec["defaults"].items():
        if column not in df.columns:
            df[column] = default
    return df


def load_network_tables(network_file):
    """
    Reads a network yaml file into one DataFrame per table

    :param network_file: path to the network yaml
    :return: dict with name, base_mva, slack_bus and the buses/branches/generators/loads DataFrames
    """
    try:
        raw = load_yaml(network_file)
    except FileNotFoundError:
        raise ConfigurationError(f"network file not found: {network_file}") from None
    tables = {
        name: _table(raw.get(name), name, spec, network_file)
        for name, spec in NETWORK_TABLES.items()
    }
    tables["name"] = raw.get("name", "")
    tables["base_mva"] = float(raw.get("base_mva", 100.0))
    tables["slack_bus"] = raw.get("slack_bus")
    return tables


def load_profile_csv(profile_file):
    """Reads a load profile csv with columns time_s, p_pu (and optionally q_pu)"""
    try:
        df = pd.read_csv(profile_file, comment="#")
    except FileNotFoundError:
        raise ConfigurationError(f"profile file not found: {profile_file}") from None
    df.columns = [c.strip() for c in df.columns]
    missing = [c for c in PROFILE_COLUMNS if c not in df.columns]
    if missing:
        raise ConfigurationError(f"{profile_file}: missing profile columns {missing}")
    return df


def write_series(df: pd.DataFrame, out_file, fmt=OutputFormat.csv):
    if OutputFormat.from_value(getattr(fmt, "value", fmt)) == OutputFormat.json:
        df.to_json(out_file, orient="split", index=False, double_precision=15)
    else:
        df.to_csv(out_file, index=False, float_format="%.12g")


def read_series(series_file) -> pd.DataFrame:
    if str(series_file).endswith(".json"):
        return pd.read_json(series_file, orient="split")
    return pd.read_csv(series_file)


def write_json(data, out_file):
    with open(out_file, "w") as f:
        json.dump(to_builtin(data), f, indent=2)


def read_json(in_file):
    with open(in_file, "r") as f:
        return json.load(f)
