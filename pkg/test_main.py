"""
Command-line tests
==================

Config layering and validation, suite runs with report files, dumps and
exit codes of the ``verify`` and ``dump`` subcommands.

Usage:
    pytest test_main.py
"""

import json
from pathlib import Path

import numpy as np
import pytest

import bv
from errors import ParseError, SizeCap, UnknownReference, ValidationError
from main import OUT_DIR_ENV, RunConfig, dump, main, parse_config, parse_region, run_suite
from report_manager import ReportManager

CONFIG_DIR = Path(__file__).parent / "configs"
SMALL_TIME1D = {"lattice": "time1d", "n_time": 40, "n_seeds": 2}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"lattice": "time1d", "n_time": 60, "dt": 0.05, "out_dir": "from_file"}))
    return path


def test_defaults():
    cfg = parse_config(environ={})
    assert cfg.lattice["dimension"] == "time1d"
    assert cfg.lattice["n_time"] == 100
    assert cfg.suites == ("all",)
    assert cfg.seeds == list(range(10))
    assert cfg.bv_seeds == list(range(50))
    assert cfg.n_pairs == 100
    assert cfg.truncation.d_max == 4


def test_layering(config_file):
    cfg = parse_config(str(config_file), environ={})
    assert cfg.lattice["n_time"] == 60
    assert cfg.out_dir == "from_file"
    cfg = parse_config(str(config_file), environ={OUT_DIR_ENV: "from_env"})
    assert cfg.out_dir == "from_env"
    cfg = parse_config(str(config_file), {"out_dir": "from_flag", "seed": 5}, environ={OUT_DIR_ENV: "from_env"})
    assert cfg.out_dir == "from_flag"
    assert cfg.seeds[0] == 5


def test_switching_lattice_drops_file_geometry(config_file):
    cfg = parse_config(str(config_file), {"lattice": "mink2d"}, environ={})
    assert cfg.lattice["dimension"] == "mink2d"
    assert cfg.lattice["n_time"] == 48
    assert cfg.lattice["n_space"] == 16


@pytest.mark.parametrize("data, field_path", [
    ({"dt": -0.1}, "lattice.dt"),
    ({"lattice": "mink3d"}, "lattice"),
    ({"n_time": 2.5}, "lattice.n_time"),
    ({"suites": ["bv", "nonsense"]}, "suites[1]"),
    ({"colour": "red"}, "colour"),
    ({"tolerance": 0}, "tolerance"),
    ({"inject_fault": "everything"}, "inject_fault"),
    ({"n_pairs": 0}, "n_pairs"),
    ({"n_bv_seeds": -1}, "n_bv_seeds"),
    ({"lattice": "mink2d", "dt": 0.1, "dx": 0.1, "n_space": 16}, "lattice"),
])
def test_validation_errors(data, field_path):
    with pytest.raises(ValidationError) as info:
        RunConfig.from_dict(data)
    assert info.value.field_path == field_path


def test_malformed_config_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        parse_config(str(path), environ={})
    with pytest.raises(ParseError):
        parse_config(str(tmp_path / "missing.json"), environ={})


def test_config_round_trip():
    cfg = RunConfig.from_dict({"lattice": "mink2d", "n_time": 20, "suites": ["bv"], "inject_fault": "green"})
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_shipped_configs_are_valid():
    for name in ("time1d", "mink2d"):
        cfg = parse_config(str(CONFIG_DIR / f"{name}.json"), environ={})
        assert cfg.lattice["dimension"] == name


def test_parse_region():
    cfg = RunConfig.from_dict(SMALL_TIME1D)
    lat = cfg.build_lattice()
    assert parse_region(lat, "slab:2-5").size == 4
    assert parse_region(lat, "full").size == 40
    for ref in ("slab:5", "slab:30-50", "ring:1", "diamond:a,b,c"):
        with pytest.raises(UnknownReference):
            parse_region(lat, ref)


def test_run_suite_writes_reports(tmp_path):
    cfg = RunConfig.from_dict({**SMALL_TIME1D, "suites": ["propagators"], "out_dir": str(tmp_path)})
    status, reports = run_suite(cfg)
    assert status == 0
    assert [r.suite for r in reports] == ["propagators"]
    data = json.loads((tmp_path / "propagators.json").read_text())
    assert data["schema"] == 1
    assert data["overall_result"] == "pass"
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["overall_result"] == "pass"
    assert summary["config"]["n_time"] == 40
    assert ReportManager(str(tmp_path)).list_reports()[0]["suite"] == "propagators"


def test_injected_green_fault_fails_the_run(tmp_path):
    cfg = RunConfig.from_dict({**SMALL_TIME1D, "suites": ["propagators"], "out_dir": str(tmp_path),
                               "inject_fault": "green"})
    status, reports = run_suite(cfg)
    assert status == 1
    assert reports[0].record("green.retarded.delta").status == "fail"
    data = ReportManager(str(tmp_path)).load_report("propagators")
    assert data["overall_result"] == "fail"


def test_injected_time_slice_fault_fails_the_net_suite(tmp_path):
    cfg = RunConfig.from_dict({**SMALL_TIME1D, "suites": ["net"], "out_dir": str(tmp_path),
                               "inject_fault": "time_slice"})
    status, reports = run_suite(cfg)
    assert status == 1
    assert reports[0].record("halfwidth2.time_slice.roundtrip").status == "fail"


def test_dump_kernel(tmp_path):
    cfg = RunConfig.from_dict({"lattice": "time1d", "n_time": 10, "out_dir": str(tmp_path)})
    path = dump(cfg, "kernel:retarded")
    lines = path.read_text().splitlines()
    assert lines[0] == "row,col,re,im"
    assert len(lines) == 1 + 100
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    # G^R(1, 0) = dt
    assert table[10, 2] == pytest.approx(0.05)


def test_dump_observable_and_cohomology(tmp_path):
    cfg = RunConfig.from_dict({"lattice": "time1d", "n_time": 10, "out_dir": str(tmp_path)})
    data = json.loads(dump(cfg, "observable:phi:3").read_text())
    assert data["terms"][0]["entries"][0][0] == [3]
    data = json.loads(dump(cfg, "observable:random:4@slab:2-6").read_text())
    assert data["region"]["n_sites"] == 5
    data = json.loads(dump(cfg, "cohomology:slab:2-6").read_text())
    assert data["h0_by_sym_degree"] == [1, 2, 3]


@pytest.mark.parametrize("what", ["kernel:imaginary", "observable:phi:99", "observable:ghost:1",
                                  "cohomology:slab:8-3", "plot:everything"])
def test_dump_unknown_reference(tmp_path, what):
    cfg = RunConfig.from_dict({"lattice": "time1d", "n_time": 10, "out_dir": str(tmp_path)})
    with pytest.raises(UnknownReference):
        dump(cfg, what)


def test_exit_codes(tmp_path, config_file, monkeypatch):
    monkeypatch.delenv(OUT_DIR_ENV, raising=False)
    broken = tmp_path / "broken.json"
    broken.write_text("[1, 2]")
    assert main(["verify", "--config", str(broken)]) == 2
    assert main(["dump", "--what", "kernel:imaginary", "--out", str(tmp_path)]) == 2
    assert main(["verify", "--config", str(config_file), "--suite", "propagators",
                 "--out", str(tmp_path / "run")]) == 0
    assert (tmp_path / "run" / "propagators.json").exists()


def test_algebra_suite_draws_a_hundred_linear_pairs(tmp_path):
    cfg = RunConfig.from_dict({**SMALL_TIME1D, "suites": ["algebra"], "out_dir": str(tmp_path)})
    run_suite(cfg)
    data = ReportManager(str(tmp_path)).load_report("algebra")
    assert data["scenario"]["n_pairs"] == 100
    records = {r["name"]: r for r in data["records"]}
    assert records["star.commutator"]["witness_ref"] == "pairs=100"
    assert records["star.commutator"]["status"] == "pass"
    assert records["sigma.peierls"]["witness_ref"] == "pairs=100"


def test_bv_suite_uses_its_own_seed_count(tmp_path):
    cfg = RunConfig.from_dict({**SMALL_TIME1D, "suites": ["bv"], "n_bv_seeds": 3, "seed": 4,
                               "out_dir": str(tmp_path)})
    run_suite(cfg)
    data = ReportManager(str(tmp_path)).load_report("bv")
    assert data["scenario"]["bv_seeds"] == [4, 5, 6]
    assert data["scenario"]["seeds"] == [4, 5]


def test_dump_errors_exit_with_status_two(tmp_path, monkeypatch):
    def too_large(*args, **kwargs):
        raise SizeCap("block of 9000x9000 exceeds the cap")

    monkeypatch.setattr(bv, "cohomology", too_large)
    assert main(["dump", "--what", "cohomology:full", "--out", str(tmp_path)]) == 2
