from enum import Enum

import numpy as np

SCHEMA_VERSION = "1.0"

BASE_MVA = 100.0
F_NOM = 60.0
OMEGA_S = 2.0 * np.pi * F_NOM

DEFAULT_FAULT_ADMITTANCE = 1.0e4
DEFAULT_ZIP_FLOOR = 0.5
DEFAULT_OVERLOAD_CAP = 1.2
DEFAULT_HYSTERESIS = 0.02
DEFAULT_FLEET_RATING = 18.4

SERIES_FILE_NAME = "series.csv"
SERIES_JSON_FILE_NAME = "series.json"
EVENTS_FILE_NAME = "events.json"
REPORT_FILE_NAME = "report.json"
METADATA_FILE_NAME = "metadata.json"
LOG_FILE_NAME = "simulation_log.txt"
LOCK_FILE_NAME = ".ldlgrid.lock"
TABLE_FILE_NAME = "table.txt"
TABLE_JSON_FILE_NAME = "table.json"


class ExtendedEnum(Enum):
    @classmethod
    def has_value(cls, value):
        return any(value == item.value for item in cls)

    @classmethod
    def get_names(cls):
        return [item.name for item in cls]

    @classmethod
    def from_value(cls, value):
        """Looks up a member by value, raising ValueError with the valid choices"""
        for item in cls:
            if item.value == value:
                return item
        raise ValueError(
            "{} is not a valid {}, expected one of {}".format(
                value, cls.__name__, [item.value for item in cls]
            )
        )

    def __str__(self):
        return self.name


class ExtendedStrEnum(ExtendedEnum):
    def __new__(cls, value, str_value):
        obj = object.__new__(cls)
        obj._value_ = value
        obj.str_value = str_value
        return obj

    @classmethod
    def has_str_value(cls, str_value):
        return any(str_value == item.str_value for item in cls)

    @classmethod
    def from_str(cls, str_value):
        if not cls.has_str_value(str_value):
            raise ValueError("{} is not a valid {}".format(str_value, cls.__name__))
        for item in cls:
            if item.str_value == str_value:
                return item

    @classmethod
    def iterate_str_values(cls):
        for item in cls:
            yield item.str_value


class BranchStatus(ExtendedEnum):
    in_service = "in_service"
    open = "open"


class DeviceClass(ExtendedEnum):
    generator = "generator"
    gfm = "gfm"
    load = "load"
    ldl = "ldl"


class EventKind(ExtendedStrEnum):
    """Event kinds, ordered by execution priority when times tie.

    The int value is the priority, the str value is the serialized name.
    """

    apply_fault = (1, "apply_fault")
    clear_fault = (2, "clear_fault")
    switch_branch = (3, "switch_branch")
    relay_trip = (4, "relay_trip")
    ufls_shed = (5, "ufls_shed")
    profile_milestone = (6, "profile_milestone")

    @property
    def priority(self):
        return self.value


class TripCause(ExtendedEnum):
    lvrt = "lvrt"
    hvrt = "hvrt"
    under_frequency = "under_frequency"
    over_frequency = "over_frequency"
    ufls = "ufls"
    scripted = "scripted"


class Side(ExtendedEnum):
    under = "under"
    over = "over"


class CoordinationMode(ExtendedEnum):
    none = "none"
    local_only = "local_only"
    layered = "layered"


class Interpolation(ExtendedEnum):
    step = "step"
    linear = "linear"


class Integrator(ExtendedEnum):
    rk4 = "rk4"
    trapezoidal = "trapezoidal"


class DeploymentKind(ExtendedEnum):
    none = "none"
    collocated = "collocated"
    embedded = "embedded"


class GraphTopology(ExtendedEnum):
    electrical = "electrical"
    ring = "ring"
    complete = "complete"
    explicit = "explicit"


class ExcursionMode(ExtendedEnum):
    pairwise = "pairwise"
    coi = "coi"
    absolute = "absolute"


class RunStatus(ExtendedEnum):
    completed = "completed"
    aborted = "aborted"


class OutputFormat(ExtendedEnum):
    csv = "csv"
    json = "json"


class ProfileKind(ExtendedEnum):
    training = "training"
    oscillatory = "oscillatory"
    step = "step"
