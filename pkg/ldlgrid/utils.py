"""
Functions used throughout ldlgrid.
Mostly related to file system operations and configuration merging.
"""

import copy
import hashlib
import json
import os
from collections.abc import Mapping
from shutil import rmtree

import numpy as np
import yaml


def load_yaml(yaml_file):
    """Contents of a yaml file; an empty file gives an empty dict"""
    with open(yaml_file, "r") as stream:
        data = yaml.safe_load(stream)
    return {} if data is None else data


def dump_yaml(input_dict, output_name):
    """
    :param input_dict: plain (json compatible) dict to write into a yaml file
    :param output_name: output path (name inclusive) of the yaml file
    """
    with open(output_name, "w") as yaml_file:
        yaml.safe_dump(
            input_dict, yaml_file, default_flow_style=None, sort_keys=False
        )


def update_params(d, *u):
    """
    Nested dict update that keeps keys missing from the update
    eg.a = {solver: {step: 1, horizon: 2}}
       b = {solver: {step: 3}}
    with builtin dict.update, a.update(b) == {solver: {step: 3}}
    with this update, update_params(a, b) == {solver: {step: 3, horizon: 2}}
    :param d: original dict, modified in place
    :param u: dict(s) containing updating items, the last one wins
    :return: updated dict d
    """
    for uu in u:
        if uu:
            for k, v in uu.items():
                if isinstance(v, Mapping):
                    d[k] = update_params(dict(d.get(k, {}) or {}), v)
                else:
                    d[k] = copy.deepcopy(v)
    return d


def setup_dir(directory, empty=False):
    """
    Make sure a directory exists, optionally make sure it is empty.
    :param directory: path to directory
    :param empty: make sure directory is empty
    """
    if os.path.exists(directory) and empty:
        rmtree(directory)
    if not os.path.exists(directory):
        # concurrent batch cells may race here
        try:
            os.makedirs(directory)
        except OSError:
            if not os.path.isdir(directory):
                raise


def compare_versions(version1, version2, split_char="."):
    """
    Compares two version strings segment by segment (numeric characters only).
    Returns 1 if version1 is greater, -1 if version2 is greater, 0 if equal.
    When all shared segments match, the version with more segments is greater.
    """
    parts1 = str(version1).split(split_char)
    parts2 = str(version2).split(split_char)

    for p1, p2 in zip(parts1, parts2):
        num1 = int("".join(c for c in p1 if c.isnumeric()) or 0)
        num2 = int("".join(c for c in p2 if c.isnumeric()) or 0)
        if num1 > num2:
            return 1
        if num2 > num1:
            return -1

    if len(parts1) > len(parts2):
        return 1
    if len(parts2) > len(parts1):
        return -1
    return 0


def to_builtin(value):
    """Recursively converts numpy scalars/arrays and tuples into json friendly types"""
    if isinstance(value, Mapping):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_builtin(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def stable_hash(data) -> str:
    """sha256 of the canonical json form of data"""
    canonical = json.dumps(to_builtin(data), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
