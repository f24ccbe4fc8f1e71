import csv
import json
from pathlib import Path

import pytest

from instances import route_model
from stopqubo import cli, qubo
from stopqubo.datasets import corridor_paths
from stopqubo.spatial import load_instance, write_instance


@pytest.fixture()
def toy(tmp_path):
    model = route_model(10, 25, 17)
    write_instance(model, tmp_path / "demand.csv", tmp_path / "facilities.csv")
    return tmp_path


def _config(root, **extra):
    cfg = {
        "demand": "demand.csv",
        "facilities": "facilities.csv",
        "p": 6,
        "criteria": {"names": ["demand"], "weights": [1.0]},
        "solver": {"max_iterations": 3},
        "out": str(root / "runs"),
    }
    cfg.update(extra)
    path = root / f"cfg{len(list(root.glob('cfg*.json')))}.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def _run_dir(root, command):
    (out,) = (root / "runs").glob(f"{command}-*")
    return out


def test_ingest_reports_corridor(tmp_path, capsys):
    demand, facilities = corridor_paths()
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"demand": str(demand), "facilities": str(facilities), "out": str(tmp_path / "runs")}))
    assert cli.main(["ingest", "--config", str(cfg)]) == 0
    first = capsys.readouterr().out
    assert "49 facilities" in first
    assert cli.main(["--config", str(cfg), "ingest"]) == 0
    assert capsys.readouterr().out == first


def test_empty_facility_file_is_input_error(toy, capsys):
    (toy / "facilities.csv").write_text("id,lat,lon,route_order\n")
    assert cli.main(["ingest", "--config", _config(toy)]) == cli.EXIT_INPUT
    assert "no facilities" in capsys.readouterr().err


@pytest.mark.parametrize(
    "extra,needle",
    [
        ({"bogus": 1}, "unknown config key"),
        ({"demand": "missing.csv"}, "not found"),
        ({"p": 0}, "p must"),
        ({"r0": -1}, "r0"),
        ({"gamma": "big"}, "gamma"),
        ({"solver": {"backend": "qpu"}}, "backend"),
        ({"solver": {"tenure": 3}}, "unknown solver key"),
        ({"criteria": {"names": ["demand"], "weights": [0.5]}}, "criteria"),
        ({"p": 60}, "exceeds"),
        ({"quota": 4}, "batch_size/quota"),
    ],
)
def test_config_validation(toy, capsys, extra, needle):
    assert cli.main(["solve", "--config", _config(toy, **extra)]) == cli.EXIT_INPUT
    assert needle in capsys.readouterr().err
    assert not (toy / "runs").exists()


def test_invalid_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["solve", "--config", str(bad)]) == cli.EXIT_INPUT


def test_solve_all_active(toy):
    assert cli.main(["solve", "--config", _config(toy, p=10)]) == 0
    out = _run_dir(toy, "solve")
    report = json.loads((out / "report.json").read_text())
    assert report["feasible"] and report["ratio"] <= 1 + 1e-12
    with open(out / "solution.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["active"] for r in rows] == ["1"] * 10
    assert json.loads((out / "config.json").read_text())["p"] == 10
    assert (out / "solution.geojson").exists() and (out / "trace.csv").exists()


def test_solve_outputs_are_byte_identical(toy):
    cfg = _config(toy)
    assert cli.main(["solve", "--config", cfg]) == 0
    out = _run_dir(toy, "solve")
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert cli.main(["solve", "--config", cfg]) == 0
    assert {p.name: p.read_bytes() for p in out.iterdir()} == first


def test_seed_and_out_overrides(toy):
    cfg = _config(toy)
    other = toy / "elsewhere"
    assert cli.main(["solve", "--config", cfg, "--seed", "9", "--out", str(other)]) == 0
    (out,) = other.glob("solve-*")
    assert json.loads((out / "config.json").read_text())["seed"] == 9


def test_infeasible_exit_code(toy):
    assert cli.main(["solve", "--config", _config(toy, p=1, gamma=1e-12)]) == cli.EXIT_INFEASIBLE


def test_numerical_failure_exit_code(toy, monkeypatch):
    def broken(Q):
        raise qubo.NumericalError("eigen-decomposition failed")

    monkeypatch.setattr(qubo, "eigenvalues", broken)
    assert cli.main(["bound", "--config", _config(toy)]) == cli.EXIT_NUMERICAL


def test_weights_and_bound(toy):
    cfg = _config(toy)
    assert cli.main(["weights", "--config", cfg]) == 0
    lines = (_run_dir(toy, "weights") / "weights.csv").read_text().splitlines()
    assert lines[0] == "id,weight" and len(lines) == 11
    assert cli.main(["bound", "--config", cfg]) == 0
    doc = json.loads((_run_dir(toy, "bound") / "bounds.json").read_text())
    assert doc["diag_bound"] <= doc["eigen_bound"] + 1e-9


def test_unit_weights_without_criteria(toy):
    cfg = _config(toy, criteria=None)
    assert cli.main(["solve", "--config", cfg]) == 0


def test_sweep_row_count(toy):
    assert cli.main(["sweep", "--config", _config(toy, p_values=list(range(1, 11)))]) == 0
    with open(_run_dir(toy, "sweep") / "sweep.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["p", "best", "diag_bound", "eigen_bound", "ratio"] and len(rows) == 11


def test_compare_table_shape(toy):
    cfg = _config(toy, p_values=[8, 6], n_instances=3, solver={"max_iterations": 1})
    assert cli.main(["compare", "--config", cfg]) == 0
    with open(_run_dir(toy, "compare") / "comparison.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["p", "avg_d", "W", "p_value", "reject"]
    assert [r[0] for r in rows[1:]] == ["8", "6"]


def test_synth_round_trip(toy, tmp_path):
    assert cli.main(["synth", "--config", _config(toy, n_instances=2, max_offset=150.0)]) == 0
    out = _run_dir(toy, "synth")
    for i in range(2):
        model = load_instance(out / f"instance_{i:03d}_demand.csv", out / f"instance_{i:03d}_facilities.csv")
        assert model.n_facilities == 10
        cfg = tmp_path / f"synth{i}.json"
        cfg.write_text(json.dumps({
            "demand": str(out / f"instance_{i:03d}_demand.csv"),
            "facilities": str(out / f"instance_{i:03d}_facilities.csv"),
            "out": str(tmp_path / "again"),
        }))
        assert cli.main(["ingest", "--config", str(cfg)]) == 0


def test_console_entry_point_parses():
    parser = cli.build_parser()
    args = parser.parse_args(["solve", "--config", "x.json", "--seed", "3"])
    assert args.command == "solve" and args.seed == 3 and Path(args.config).name == "x.json"
