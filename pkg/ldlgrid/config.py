import copy
import os
from enum import Enum
from functools import lru_cache
from json import load
from os.path import join, abspath, dirname

CONFIG_DIR_ENV = "LDLGRID_CONFIG_DIR"


class ConfigKeys(Enum):
    solver = "solver_defaults.json"
    devices = "device_defaults.json"
    protection = "protection_defaults.json"
    coordination = "coordination_defaults.json"


def determine_config_dir():
    """
    Directory holding the default parameter sets.
    The LDLGRID_CONFIG_DIR environment variable takes precedence over the packaged configs.
    """
    return os.environ.get(CONFIG_DIR_ENV, join(dirname(abspath(__file__)), "configs"))


@lru_cache(maxsize=None)
def _load_config_file(config_path):
    with open(config_path, "r") as config_file:
        return load(config_file)


def get_defaults(section: ConfigKeys, config_path=None):
    """
    Loads one default parameter set.
    :param section: Which set to load
    :param config_path: Explicit json file, overrides the config directory lookup
    :return: A fresh dict that the caller may modify
    """
    if config_path is None:
        config_path = join(determine_config_dir(), ConfigKeys(section).value)
    return copy.deepcopy(_load_config_file(config_path))
