import copy
import json

import pytest

from bankreg import cli, harness
from bankreg.harness import (
    ConfigError,
    ExperimentResult,
    WorkloadSpec,
    attacker_specs,
    build_config,
    deep_merge,
    emit_results,
    render_csv,
    run_experiment,
    run_solo_then_contended,
)

SMALL_VICTIM = {"workloads": [{"name": "victim", "kind": "sequential", "role": "victim", "quota_lines": 2048, "start_cycle": 0}]}


def test_defaults_reproduce_simulated_soc():
    cfg = build_config("attack")
    assert cfg.bank_map.functions == ((9,), (10,), (11,))
    assert cfg.dram.tRC == 47 and cfg.dram.n_banks == 8
    assert cfg.llc.size == 1 << 20
    assert [w.role for w in cfg.workloads] == ["victim"]


def test_budget_derived_from_mbps():
    cfg = build_config("regulate")
    assert cfg.regulator.budgets == [0, 828]
    assert cfg.regulator.regulated == [False, True]


def test_budget_accesses_override():
    cfg = build_config("regulate", {"domains": [{"name": "rt"}, {"name": "be", "regulated": True, "budget_accesses": 5}]})
    assert cfg.regulator.budgets == [0, 5]


def test_deep_merge_replaces_lists():
    assert deep_merge({"a": {"b": 1, "c": [1, 2]}}, {"a": {"c": [3]}}) == {"a": {"b": 1, "c": [3]}}


@pytest.mark.parametrize(
    "user",
    [
        {"bogus": 1},
        {"dram": {"tRX": 3}},
        {"dram": {"n_banks": 4}},
        {"map": "b0:9 b1:9"},
        {"workloads": [{"name": "a", "core": 0}, {"name": "b", "core": 0}]},
        {"workloads": [{"name": "a", "domain": 7}]},
        {"workloads": [{"name": "a", "kind": "stream"}]},
        {"max_cycles": 5_000_000},
        {"domains": [{"name": "rt"}, {"name": "be", "regulated": True}]},
    ],
)
def test_invalid_configs(user):
    with pytest.raises(ConfigError):
        build_config("regulate", user)


def test_attacker_specs():
    specs = attacker_specs("SBw", {"cores": [1, 2, 3], "domain": 1, "bank": 2})
    assert [s.core for s in specs] == [1, 2, 3]
    assert all(s.banks == [2] and s.rw == "write" for s in specs)
    assert attacker_specs("ABr", {})[0].banks == "all"
    with pytest.raises(ConfigError):
        attacker_specs("XBr", {})


def test_victim_alone_has_unit_slowdown():
    cfg = build_config("attack", SMALL_VICTIM)
    res = run_solo_then_contended(cfg, [])
    assert res.slowdown == 1.0
    assert res.attacker_bw == 0.0


def test_requires_exactly_one_victim():
    cfg = build_config("attack", {"workloads": []})
    with pytest.raises(ConfigError):
        run_solo_then_contended(cfg, [])


def test_small_contended_run():
    cfg = build_config("attack", SMALL_VICTIM)
    att = [WorkloadSpec(name="a1", core=1, domain=1, lists=8, entries=4096, banks=[0], rw="write")]
    res = run_solo_then_contended(cfg, att, scenario="tiny")
    assert res.slowdown > 1.0
    assert res.attacker_bw > 0
    assert res.id == "attack/tiny"


def test_emit_empty_is_header_only(tmp_path):
    p = tmp_path / "r.csv"
    emit_results([], p)
    assert p.read_text() == "experiment,metric,unit,value\n"


def test_emit_one_row_and_precision(tmp_path):
    r = ExperimentResult("x", metrics=[("bw", "MB/s", 1361.7021)])
    text = emit_results([r], tmp_path / "r.csv")
    assert text == "experiment,metric,unit,value\nx,bw,MB/s,1361.7\n"
    r2 = ExperimentResult("x", slowdown=5.7581)
    assert "x,victim_slowdown,ratio,5.76" in render_csv([r2])


def test_emit_json_mirrors_result(tmp_path):
    r = ExperimentResult("x", scenario="s", slowdown=1.234, workload_bw={"v": 10.06})
    data = json.loads(emit_results([r], tmp_path / "r.json"))
    assert data[0]["id"] == "x/s"
    assert data[0]["slowdown"] == 1.23
    assert data[0]["workload_bw"] == {"v": 10.1}


def test_emit_unwritable(tmp_path):
    with pytest.raises(OSError):
        emit_results([], tmp_path / "missing" / "r.csv")


def test_same_results_twice_byte_identical(tmp_path):
    user = {"duration_cycles": 60_000, "warmup_cycles": 5_000, "experiment": {"lists": [2, 4], "configurations": ["1xAB"]}}
    a = emit_results(run_experiment(build_config("mlp-sweep", user)), tmp_path / "a.csv")
    b = emit_results(run_experiment(build_config("mlp-sweep", user)), tmp_path / "b.csv")
    assert a == b
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_cli_csv_output_and_determinism(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"duration_cycles": 100_000, "warmup_cycles": 10_000}))
    outs = []
    for name in ("a.csv", "b.csv"):
        rc = cli.main(["guaranteed-bw", "--config", str(conf), "--seed", "4", "--out", str(tmp_path / name)])
        assert rc == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].startswith(b"experiment,metric,unit,value\n")
    assert b"guaranteed-bw,theory,MB/s,1361.7" in outs[0]


def test_cli_trace(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"duration_cycles": 5_000, "warmup_cycles": 0}))
    rc = cli.main(["guaranteed-bw", "--config", str(conf), "--trace", str(tmp_path / "t.csv"), "--out", str(tmp_path / "o.csv")])
    assert rc == 0
    lines = (tmp_path / "t.0.csv").read_text().splitlines()
    assert lines[0] == "cycle,command,bank,row,request_id,bus_mode"
    assert any(",ACT,0," in ln for ln in lines[1:])


def test_cli_revmap_prints_map(capsys):
    assert cli.main(["revmap", "--map", "pi4", "--samples", "32", "--seed", "2"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "b0:12 b1:13 b2:14"
    assert out[1].startswith("confidence 1.0000")


def test_cli_revmap_hidden(tmp_path, capsys):
    assert cli.main(["revmap", "--map", "hidden", "--seed", "3", "--out", str(tmp_path / "r.csv")]) == 0
    text = (tmp_path / "r.csv").read_text()
    assert "revmap/hidden,equivalent,bool,true" in text


@pytest.mark.parametrize(
    "argv",
    [
        ["attack", "--config", "/nonexistent.json"],
        ["regulate", "--seed", "1", "--out", "/nonexistent/dir/x.csv"],
        ["revmap", "--map", "b0:3"],
    ],
)
def test_cli_errors_exit_nonzero(argv, tmp_path):
    assert cli.main(argv) != 0


def test_cli_bad_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert cli.main(["attack", "--config", str(p)]) == 2


def test_cli_unknown_subcommand():
    with pytest.raises(SystemExit) as e:
        cli.main(["nope"])
    assert e.value.code != 0


def test_configs_do_not_share_default_state(tmp_path):
    before = copy.deepcopy(harness.COMMON_DEFAULTS)
    for i in range(2):
        cfg = harness.build_config("guaranteed-bw", {"duration_cycles": 2_000, "warmup_cycles": 0, "trace": str(tmp_path / f"r{i}.csv")})
        cfg.params["scratch"] = i
        harness.run_experiment(cfg)
        assert (tmp_path / f"r{i}.0.csv").exists()
    assert harness.COMMON_DEFAULTS == before
