import csv
import io
import json
import shutil
import subprocess
import sys

import pytest
import yaml

from pcrform.cli import main
from pcrform.config import ScenarioConfig
from pcrform.experiments import (
    OFPS_COLUMNS,
    SCALING_COLUMNS,
    bench_ofps,
    bench_scaling,
    rows_to_csv,
    run_scenario,
)

TINY = {
    "version": 1,
    "name": "tiny",
    "seed": 2,
    "swarm": {"shape": "cube_grid", "count": 8, "goal_offset": [3.0, 0.0, 0.0]},
    "sim": {"duration": 1.5, "record_timing": False},
    "outliers": {"ids": [1], "behavior": "random_walk"},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


def test_run_writes_outputs_and_is_byte_identical(tiny_config, tmp_path, capsys):
    assert main(["run", str(tiny_config), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", str(tiny_config), "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "b" / "metrics.csv").read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["status"] == "completed" and summary["outliers"] == [1]
    assert summary["sim_time"] == pytest.approx(1.5)
    line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert line["name"] == "tiny"
    saved = ScenarioConfig.load(tmp_path / "a" / "config.yaml")
    assert saved.to_dict() == ScenarioConfig.load(tiny_config).to_dict()


def test_run_seed_override(tiny_config, tmp_path):
    assert main(["run", str(tiny_config), "--seed", "5", "--out", str(tmp_path / "s")]) == 0
    assert json.loads((tmp_path / "s" / "summary.json").read_text())["seed"] == 5


def test_config_error_exit_code(tmp_path, capsys):
    bad = dict(TINY)
    del bad["seed"]
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(bad))
    assert main(["run", str(path)]) == 1
    assert "seed" in capsys.readouterr().err


def test_unsupported_count_exit_code(capsys):
    assert main(["gen-shape", "cube_grid", "--count", "2"]) == 1


def test_internal_error_exit_code(monkeypatch):
    import pcrform.cli as cli

    def boom(*a, **k):
        raise RuntimeError("unexpected")

    monkeypatch.setattr(cli, "bench_ofps", boom)
    assert main(["bench-ofps", "--counts", "4"]) == 3


def test_divergence_exit_code(monkeypatch, tiny_config):
    import pcrform.cli as cli
    from pcrform.errors import SimulationDiverged

    def diverge(*a, **k):
        raise SimulationDiverged("left the domain")

    monkeypatch.setattr(cli, "run_scenario", diverge)
    assert main(["run", str(tiny_config)]) == 2


def test_gen_shape_csv(tmp_path, capsys):
    assert main(["gen-shape", "cube_grid", "--count", "27", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 27 and list(rows[0]) == ["id", "x", "y", "z"]
    assert (tmp_path / "cube_grid_27.csv").exists()
    assert main(["gen-shape", "slender_rect", "--count", "24", "--param", "length=10"]) == 0
    assert main(["gen-shape", "slender_rect", "--count", "24", "--param", "length=ten"]) == 1


def test_bench_ofps_smallest_instance(capsys):
    rows = bench_ofps([4], trials=2)
    assert len(rows) == 1 and rows[0]["count"] == 4 and rows[0]["t_mean"] > 0
    assert main(["bench-ofps", "--counts", "4,10", "--trials", "1"]) == 0
    out = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["count"] for r in out] == ["4", "10"]
    assert list(out[0]) == list(OFPS_COLUMNS)
    with pytest.raises(ValueError):
        bench_ofps([3])


def test_bench_scaling_schema():
    rows = bench_scaling([8], duration=1.0)
    assert len(rows) == 1
    text = rows_to_csv(rows, SCALING_COLUMNS)
    assert text.splitlines()[0] == ",".join(SCALING_COLUMNS)
    with pytest.raises(ValueError):
        bench_scaling([2])


def test_scenario_determinism_with_obstacles_and_outliers():
    d = dict(TINY, pillars={"count": 2, "x_range": [1.0, 3.0]}, outliers={"fraction": 0.25})
    cfg = ScenarioConfig.from_dict(d)
    a = run_scenario(cfg).world.metrics.to_csv()
    b = run_scenario(cfg).world.metrics.to_csv()
    assert a == b


def test_parser_rejects_unknown_command():
    with pytest.raises(SystemExit):
        main(["fly"])


@pytest.mark.skipif(shutil.which("pcrform") is None, reason="console script not installed")
def test_console_script():
    done = subprocess.run(["pcrform", "gen-shape", "heart_2d", "--count", "10"], capture_output=True, text=True)
    assert done.returncode == 0
    assert len(done.stdout.strip().splitlines()) == 11


def test_module_entry_point():
    done = subprocess.run([sys.executable, "-m", "pcrform.cli", "gen-shape", "cube_grid", "--count", "8"],
                          capture_output=True, text=True)
    assert done.returncode == 0 and done.stdout.startswith("id,x,y,z")
