import csv
import json

import pytest

from roundabout_clbf.cli import (EXIT_CONFIG, EXIT_IO, EXIT_OK, main, plot_profiles, summary_from_table,
                                 write_trajectories)
from roundabout_clbf.sim import COLUMNS, ScenarioConfig


def run_cli(tmp_path, *args):
    out = tmp_path / "out"
    return main(["--out-dir", str(out), *args]), out


def test_single_run_writes_files(tmp_path):
    code, out = run_cli(tmp_path, "--duration", "10", "--controller", "mpc-clbf", "--seed", "1", "--emit-plots")
    assert code == EXIT_OK
    doc = json.loads((out / "summary.json").read_text())
    assert doc["summary"]["controller"] == "mpc-clbf"
    assert doc["config"]["duration"] == 10.0
    with open(out / "trajectories.csv") as fh:
        assert tuple(next(csv.reader(fh))) == COLUMNS
    assert (out / "profiles.svg").read_text().lstrip().startswith("<?xml")


def test_summary_round_trips_through_the_table(tmp_path):
    code, out = run_cli(tmp_path, "--duration", "40", "--seed", "3")
    assert code == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())["summary"]
    again = summary_from_table(str(out / "trajectories.csv"), 0.1, summary["beta"])
    for key in ("total_time", "total_energy", "total_objective"):
        assert again[key] == pytest.approx(summary[key], abs=1e-6)


def test_compare_shares_one_trace(tmp_path):
    code, out = run_cli(tmp_path, "--compare", "--duration", "15", "--seed", "2")
    assert code == EXIT_OK
    index = json.loads((out / "comparison.json").read_text())
    assert set(index) == {"mpc-clbf-H20", "ocbf-fifo", "ocbf-sdf", "cf-baseline"}
    assert len({v["trace_digest"] for v in index.values()}) == 1


def test_horizon_sweep(tmp_path):
    code, out = run_cli(tmp_path, "--horizon", "10", "20", "30", "--duration", "10")
    assert code == EXIT_OK
    for h in (10, 20, 30):
        doc = json.loads((out / f"mpc-clbf-H{h}" / "summary.json").read_text())
        assert doc["summary"]["horizon"] == h


def test_same_seed_gives_identical_bytes(tmp_path):
    a = main(["--out-dir", str(tmp_path / "a"), "--duration", "20", "--seed", "4"])
    b = main(["--out-dir", str(tmp_path / "b"), "--duration", "20", "--seed", "4"])
    assert a == b == EXIT_OK
    assert (tmp_path / "a" / "trajectories.csv").read_bytes() == (tmp_path / "b" / "trajectories.csv").read_bytes()


def test_config_file(tmp_path):
    cfg = tmp_path / "scenario.json"
    cfg.write_text(json.dumps({"duration": 5.0, "arrival_rates": [600, 0, 0], "lam": 0.4}))
    code, out = run_cli(tmp_path, "--config", str(cfg))
    assert code == EXIT_OK
    doc = json.loads((out / "summary.json").read_text())
    assert doc["config"]["lam"] == 0.4 and doc["config"]["arrival_rates"] == [600.0, 0.0, 0.0]


@pytest.mark.parametrize("content", ['{"bogus": 1}', "not json", "[1, 2]", '{"H": 0}', '{"lam": {"a": 1}}'])
def test_bad_config_exits_2(tmp_path, content, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(content)
    code, _ = run_cli(tmp_path, "--config", str(cfg))
    assert code == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_missing_config_and_bad_horizon(tmp_path):
    assert run_cli(tmp_path, "--config", str(tmp_path / "none.json"))[0] == EXIT_CONFIG
    assert run_cli(tmp_path, "--horizon", "20", "0")[0] == EXIT_CONFIG


def test_unwritable_output_exits_3(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["--out-dir", str(blocker / "sub"), "--duration", "5"]) == EXIT_IO


def test_trajectory_writer_edge_cases(tmp_path):
    empty = tmp_path / "empty.csv"
    write_trajectories([], str(empty))
    assert empty.read_text() == ",".join(COLUMNS) + "\n"
    rows = [(0.1 * k, 1, 1, 1, 1.0 * k, 10.0, 0.5, 0, 0, 0) for k in range(3)]
    three = tmp_path / "three.csv"
    write_trajectories(rows, str(three))
    assert len(three.read_text().splitlines()) == 4


def test_plot_picks_nearest_available_vehicle(tmp_path):
    rows = [(0.1 * k, cid, 1, 1, 0.0, 10.0, 0.0, 0, 0, 0) for k in range(3) for cid in (3, 7)]
    assert plot_profiles(rows, str(tmp_path / "p.svg"), cav_id=30) == 7
    assert plot_profiles([], str(tmp_path / "q.svg")) is None
