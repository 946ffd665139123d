"""
Gives access to the layout of result directories
"""
import os

import ldlgrid.constants as const


def get_run_dir(out_root, scenario_name):
    return os.path.join(out_root, scenario_name)


def get_batch_cell_dir(batch_dir, scenario_name):
    return os.path.join(batch_dir, "cells", scenario_name)


def get_series_path(result_dir, fmt=const.OutputFormat.csv):
    if const.OutputFormat.from_value(getattr(fmt, "value", fmt)) == const.OutputFormat.json:
        return os.path.join(result_dir, const.SERIES_JSON_FILE_NAME)
    return os.path.join(result_dir, const.SERIES_FILE_NAME)


def find_series_path(result_dir):
    """The series file present in result_dir, csv preferred"""
    for name in (const.SERIES_FILE_NAME, const.SERIES_JSON_FILE_NAME):
        path = os.path.join(result_dir, name)
        if os.path.isfile(path):
            return path
    return None


def get_events_path(result_dir):
    return os.path.join(result_dir, const.EVENTS_FILE_NAME)


def get_report_path(result_dir):
    return os.path.join(result_dir, const.REPORT_FILE_NAME)


def get_metadata_path(result_dir):
    return os.path.join(result_dir, const.METADATA_FILE_NAME)


def get_log_path(result_dir):
    return os.path.join(result_dir, const.LOG_FILE_NAME)


def get_lock_path(result_dir):
    return os.path.join(result_dir, const.LOCK_FILE_NAME)


def get_table_path(batch_dir, json=False):
    return os.path.join(batch_dir, const.TABLE_JSON_FILE_NAME if json else const.TABLE_FILE_NAME)


def get_figure_dir(result_dir):
    return os.path.join(result_dir, "figures")
