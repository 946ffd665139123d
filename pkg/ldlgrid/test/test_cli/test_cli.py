import os
import shutil
import tempfile

import pytest

from ldlgrid import simulation_structure as sim_struct
from ldlgrid.cli import EXIT_CONFIG, EXIT_OK, cli_main, is_sweep_file, output_lock
from ldlgrid.errors import ConfigurationError
from ldlgrid.formats import read_json
from ldlgrid.scenario_io import find_scenario
from ldlgrid.test.tool import utils
from ldlgrid.utils import dump_yaml

TMP_DIR_NAME = None
SCENARIO = None


def setup_module(scope="module"):
    """ create a tmp directory holding a small network, its scenario and the cli outputs"""
    global TMP_DIR_NAME, SCENARIO
    TMP_DIR_NAME = tempfile.mkdtemp(prefix="tmp_test_cli_")
    utils.write_machine_load_network(TMP_DIR_NAME)
    SCENARIO = os.path.join(TMP_DIR_NAME, "ml.yaml")
    dump_yaml(
        {"schema_version": "1.0", "name": "ml", "network": "machine_load.yaml"},
        SCENARIO,
    )


def teardown_module():
    shutil.rmtree(TMP_DIR_NAME, ignore_errors=True)


def test_validate_shipped_files():
    assert cli_main(["validate", "case1_nostorage", "case2_collocated", "case1_sweep"]) == EXIT_OK


def test_validate_reports_bad_scenario(capsys):
    bad = os.path.join(TMP_DIR_NAME, "bad.yaml")
    dump_yaml(
        {
            "schema_version": "1.0",
            "name": "bad",
            "network": "machine_load.yaml",
            "storage": {"deployment": "embedded", "penetration": 0},
        },
        bad,
    )
    assert cli_main(["validate", SCENARIO, bad]) == EXIT_CONFIG
    assert "penetration must be in (0, 100]" in capsys.readouterr().err


def test_validate_unknown_name():
    assert cli_main(["validate", "case9"]) == EXIT_CONFIG


def test_is_sweep_file():
    assert is_sweep_file(find_scenario("case1_sweep"))
    assert not is_sweep_file(find_scenario("case1_base"))


@pytest.mark.parametrize("test_format, expected_series", [("csv", "series.csv"), ("json", "series.json")])
def test_run_writes_result_directory(test_format, expected_series):
    out_dir = os.path.join(TMP_DIR_NAME, f"run_{test_format}")
    code = cli_main(
        ["run", SCENARIO, "--horizon", "0.05", "--out-dir", out_dir, "--format", test_format]
    )
    assert code == EXIT_OK
    run_dir = sim_struct.get_run_dir(out_dir, "ml")
    for name in (expected_series, "events.json", "report.json", "metadata.json", "simulation_log.txt"):
        assert os.path.isfile(os.path.join(run_dir, name))
    assert not os.path.exists(sim_struct.get_lock_path(run_dir))
    metadata = read_json(sim_struct.get_metadata_path(run_dir))
    assert metadata["status"] == "completed"
    assert metadata["horizon"] == 0.05


def test_report_and_plot_existing_result():
    out_dir = os.path.join(TMP_DIR_NAME, "report")
    assert cli_main(["run", SCENARIO, "--horizon", "0.05", "--out-dir", out_dir]) == EXIT_OK
    run_dir = sim_struct.get_run_dir(out_dir, "ml")
    os.remove(sim_struct.get_report_path(run_dir))
    assert cli_main(["report", run_dir, "--mode", "coi"]) == EXIT_OK
    assert read_json(sim_struct.get_report_path(run_dir))["status"] == "completed"
    assert cli_main(["plot", run_dir]) == EXIT_OK
    assert os.listdir(sim_struct.get_figure_dir(run_dir))


def test_batch_writes_table():
    sweep = os.path.join(TMP_DIR_NAME, "sweep.yaml")
    dump_yaml(
        {
            "rows": [{"label": "ML", "scenario": "ml.yaml"}],
            "columns": [
                {"label": "None", "tag": "none", "overrides": {"coordination": {"mode": "none"}}},
                {"label": "Local", "tag": "local", "overrides": {"coordination": {"mode": "local_only"}}},
            ],
            "skip": [["ML", "Local"]],
        },
        sweep,
    )
    out_dir = os.path.join(TMP_DIR_NAME, "batch")
    assert cli_main(["batch", sweep, "--horizon", "0.05", "--out-dir", out_dir]) == EXIT_OK
    batch_dir = sim_struct.get_run_dir(out_dir, "sweep")
    assert os.path.isfile(os.path.join(sim_struct.get_batch_cell_dir(batch_dir, "ml_none"), "series.csv"))
    assert not os.path.exists(sim_struct.get_batch_cell_dir(batch_dir, "ml_local"))
    with open(sim_struct.get_table_path(batch_dir)) as f:
        table = f.read()
    assert "ML" in table and "--" in table
    assert len(read_json(sim_struct.get_table_path(batch_dir, json=True))) == 2


def test_output_lock():
    directory = os.path.join(TMP_DIR_NAME, "locked")
    with output_lock(directory):
        assert os.path.isfile(sim_struct.get_lock_path(directory))
        with pytest.raises(ConfigurationError):
            with output_lock(directory):
                pass
    assert not os.path.exists(sim_struct.get_lock_path(directory))


def test_locked_output_is_a_configuration_error():
    out_dir = os.path.join(TMP_DIR_NAME, "busy")
    run_dir = sim_struct.get_run_dir(out_dir, "ml")
    with output_lock(run_dir):
        assert cli_main(["run", SCENARIO, "--horizon", "0.05", "--out-dir", out_dir]) == EXIT_CONFIG
