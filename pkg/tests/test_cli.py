import json
import os
from importlib import resources

import jsonschema
import pytest

from iostack_sim.cli import main

SMALL = ["--objects", "40", "--size", "8MiB"]


@pytest.fixture
def schema():
    text = resources.files("iostack_sim").joinpath("schemas/comparison.schema.json").read_text()
    return json.loads(text)


@pytest.fixture(autouse=True)
def _cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("IOSTACK_SIM_CONFIG", raising=False)


def test_generate_deterministic(tmp_path):
    assert main(["generate", "--workload", "w-o", "--objects", "100", "--seed", "7", "--out", "a"]) == 0
    assert main(["generate", "--workload", "w-o", "--objects", "100", "--seed", "7", "--out", "b"]) == 0
    fa = tmp_path / "a" / "ops_w-o_seed7.csv"
    assert fa.read_bytes() == (tmp_path / "b" / "ops_w-o_seed7.csv").read_bytes()
    assert len(fa.read_text().splitlines()) == 102


def test_generate_missing_objects(capsys):
    assert main(["generate", "--workload", "w-o"]) == 1
    assert "--objects" in capsys.readouterr().err


def test_generate_objects_from_config(tmp_path):
    (tmp_path / "c.ini").write_text("[run]\nobject_count = 5\n")
    assert main(["generate", "--workload", "r-o", "--config", "c.ini"]) == 0


def test_usage_errors(capsys):
    assert main(["simulate", "--stack", "zfs", "--device", "ssd", "--workload", "r-o"]) == 1
    assert main(["simulate", "--stack", "raw-block:ag-extent", "--device", "ssd", "--workload", "r-o"]) == 1
    assert main(["simulate", "--stack", "object-drive", "--device", "ssd", "--workload", "x"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    err = capsys.readouterr().err
    assert "unknown stack" in err


def test_runtime_errors(tmp_path, capsys):
    (tmp_path / "bad.ini").write_text("[nope]\n")
    assert main(["config", "--config", "bad.ini"]) == 2
    (tmp_path / "t.csv").write_text("garbage\n")
    assert main(["analyze", "t.csv"]) == 2
    assert "header" in capsys.readouterr().err


def test_simulate_os_and_od(tmp_path):
    args = ["--device", "ssd", "--workload", "r-o", "--seed", "3", *SMALL, "--format", "csv"]
    assert main(["simulate", "--stack", "os-fs:ag-extent", *args]) == 0
    assert main(["simulate", "--stack", "object-drive", *args]) == 0
    out = tmp_path / "out"
    os_json = json.loads((out / "r-o_os-fs-ag-extent_ssd_seed3.json").read_text())
    od_json = json.loads((out / "r-o_object-drive_ssd_seed3.json").read_text())
    assert od_json["fsm_bytes"] == 0 and os_json["fsm_bytes"] > 0
    assert (out / "r-o_object-drive_ssd_seed3.trace.csv").exists()
    assert (out / "r-o_object-drive_ssd_seed3.heatmap.csv").exists()
    # only the output directory is written
    assert sorted(p.name for p in tmp_path.iterdir()) == ["out"]


def test_compare_prior_results(tmp_path, capsys, schema):
    args = ["--device", "hdd", "--workload", "w-o", *SMALL]
    main(["simulate", "--stack", "os-fs:ag-extent", *args])
    main(["simulate", "--stack", "object-drive", *args])
    os_p = "out/w-o_os-fs-ag-extent_hdd_seed42.json"
    od_p = "out/w-o_object-drive_hdd_seed42.json"
    capsys.readouterr()
    assert main(["compare", "--os-result", os_p, "--od-result", od_p, "--out", "cmp"]) == 0
    assert capsys.readouterr().out.startswith("savings ")
    rep = json.loads((tmp_path / "cmp" / "comparison.json").read_text())
    jsonschema.validate(rep, schema)
    assert (tmp_path / "cmp" / "comparison.breakdown.csv").exists()
    assert main(["compare", "--os-result", os_p, "--od-result", os_p, "--out", "self"]) == 0
    assert "savings 0.0%" in capsys.readouterr().out


def test_compare_mismatched_seeds(capsys):
    base = ["--device", "ssd", "--workload", "w-o", *SMALL]
    main(["simulate", "--stack", "os-fs:ag-extent", "--seed", "1", *base])
    main(["simulate", "--stack", "object-drive", "--seed", "2", *base])
    rc = main(["compare", "--os-result", "out/w-o_os-fs-ag-extent_ssd_seed1.json",
               "--od-result", "out/w-o_object-drive_ssd_seed2.json"])
    assert rc == 2 and "seed" in capsys.readouterr().err


def test_compare_inline_and_schema(tmp_path, schema):
    assert main(["compare", "--workload", "r-w", "--device", "ssd", *SMALL]) == 0
    rep = json.loads((tmp_path / "out" / "comparison_r-w_ssd_seed42.json").read_text())
    jsonschema.validate(rep, schema)
    assert rep["breakdown"]["per_stack"]["od"]["FSM"] == 0.0


def test_simulate_byte_identical(tmp_path):
    args = ["simulate", "--stack", "os-fs:simple-extent", "--device", "hdd", "--workload", "r-w", *SMALL]
    main([*args, "--out", "x"])
    main([*args, "--out", "y"])
    for name in os.listdir(tmp_path / "x"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


def test_analyze_native_and_blkparse(tmp_path):
    main(["simulate", "--stack", "object-drive", "--device", "ssd", "--workload", "w-o", *SMALL])
    trace = "out/w-o_object-drive_ssd_seed42.trace.csv"
    assert main(["analyze", trace, "--out", "an", "--format", "csv"]) == 0
    rep = json.loads((tmp_path / "an" / "w-o_object-drive_ssd_seed42.trace.analysis.json").read_text())
    assert rep["tag_bytes"]["FSM"] == 0
    (tmp_path / "b.txt").write_text("8,0 0 1 0.000001000 10 Q W 0 + 8 [x]\n")
    assert main(["analyze", "b.txt", "--blkparse"]) == 1
    assert main(["analyze", "b.txt", "--blkparse", "--capacity", "1GiB"]) == 0


def test_config_dump(capsys):
    assert main(["config", "--dump"]) == 0
    out = capsys.readouterr().out
    assert "[fs.ag-extent]" in out and "metadata_node_bytes = 16KiB" in out
