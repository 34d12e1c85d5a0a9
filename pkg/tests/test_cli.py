import json

import pytest

from asdkit.cli import EXIT_ASSERT, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from asdkit.csvio import read_rows

from conftest import write_text

ERG_CONFIG = """\
seed: 5
graph:
  generator: regular
  params: {k: 3, n: 60}
dynamics:
  kernel: erg
initial:
  fractions: {R: 0.5, P: 0.3, S: 0.2}
sim:
  horizon: 1.0
  dt: 0.5
  runs: 2
  granularity: global
ode:
  h: 0.05
  horizon: 1.0
  label_independent: true
"""


@pytest.fixture
def erg_config(tmp_path):
    return write_text(tmp_path / "erg.yaml", ERG_CONFIG)


def _manifest(out):
    return json.loads((out / "manifest.json").read_text(encoding="utf-8"))


def test_generate_writes_edge_list(tmp_path, capsys):
    config = write_text(tmp_path / "g.yaml", "graph:\n  generator: regular\n  params: {k: 2, n: 4}\n")
    out = tmp_path / "gen"
    assert main(["generate", "--config", str(config), "--out", str(out)]) == EXIT_OK
    assert len((out / "graph.edges").read_text().splitlines()) == 8
    assert len((out / "labels.txt").read_text().splitlines()) == 4
    assert json.loads((out / "statistics.json").read_text())["labels"] == ["0"]
    manifest = _manifest(out)
    assert manifest["command"] == "generate"
    assert manifest["outputs"]["graph.edges"] == 8
    assert "Successfully wrote 8 edges" in capsys.readouterr().out


def test_malformed_json_reports_position(tmp_path, capsys):
    config = write_text(tmp_path / "bad.json", '{\n  "seed": 1,\n  "graph": \n}\n')
    assert main(["generate", "--config", str(config), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "line 4" in err and "column" in err


def test_unknown_key_is_rejected(tmp_path, capsys):
    config = write_text(tmp_path / "bad.yaml", "sim:\n  horizn: 3\n")
    assert main(["simulate", "--config", str(config), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "sim.horizn" in capsys.readouterr().err


def test_missing_edge_list_is_a_runtime_error(tmp_path):
    config = write_text(tmp_path / "el.yaml",
                        f"graph:\n  generator: edge_list\n  params: {{path: {tmp_path / 'none.txt'}}}\n")
    assert main(["generate", "--config", str(config), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME


def test_missing_generator_parameter_is_a_config_error(tmp_path, capsys):
    config = write_text(tmp_path / "g.yaml", "graph:\n  generator: regular\n  params: {n: 4}\n")
    assert main(["generate", "--config", str(config), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "graph.params.k" in capsys.readouterr().err


def test_missing_table_is_a_config_error(tmp_path, capsys):
    config = write_text(tmp_path / "t.yaml", "graph:\n  params: {k: 2, n: 10}\ndynamics:\n  kernel: table\n")
    assert main(["ode", "--config", str(config), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "dynamics.params.table" in capsys.readouterr().err


def test_bad_payoff_is_a_config_error(tmp_path, erg_config, capsys):
    out = tmp_path / "o"
    args = ["simulate", "--config", str(erg_config), "--out", str(out),
            "--set", "dynamics.params.b=3", "--set", "dynamics.params.c=1"]
    assert main(args) == EXIT_CONFIG
    assert "dynamics" in capsys.readouterr().err


def test_bad_generator_value_is_a_config_error(tmp_path):
    config = write_text(tmp_path / "g.yaml", "graph:\n  generator: regular\n  params: {k: -1, n: 3}\n")
    assert main(["generate", "--config", str(config), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_simulate_is_reproducible(tmp_path, erg_config):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["simulate", "--config", str(erg_config), "--out", str(out)]) == EXIT_OK
    for name in ("trajectory.csv", "summary.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    fields, rows = read_rows(outs[0] / "trajectory.csv")
    assert fields == ["run_id", "t", "class", "state", "fraction", "zeta_fraction"]
    # 2 runs x 3 grid points x 3 states
    assert len(rows) == 18


def test_seed_flag_changes_the_run(tmp_path, erg_config):
    main(["simulate", "--config", str(erg_config), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(erg_config), "--out", str(tmp_path / "b"), "--seed", "6"])
    assert (tmp_path / "a" / "summary.csv").read_bytes() != (tmp_path / "b" / "summary.csv").read_bytes()
    assert _manifest(tmp_path / "b")["seed"] == 6


def test_set_override_reaches_manifest(tmp_path, erg_config):
    out = tmp_path / "o"
    args = ["simulate", "--config", str(erg_config), "--out", str(out), "--set", "sim.runs=3",
            "--set", "output.trajectories=false"]
    assert main(args) == EXIT_OK
    manifest = _manifest(out)
    assert manifest["config"]["sim"]["runs"] == 3
    assert "trajectory.csv" not in manifest["outputs"]
    assert manifest["outputs"]["summary.csv"] == 3 * 3


def test_compare_simulation_with_ode(tmp_path, erg_config):
    main(["simulate", "--config", str(erg_config), "--out", str(tmp_path / "sim")])
    assert main(["ode", "--config", str(erg_config), "--out", str(tmp_path / "ode")]) == EXIT_OK
    _, rows = read_rows(tmp_path / "ode" / "ode.csv")
    assert {row["kind"] for row in rows} == {"zeta_all", "y_all"}
    out = tmp_path / "cmp"
    code = main(["compare", str(tmp_path / "sim" / "summary.csv"), str(tmp_path / "ode" / "ode.csv"),
                 "--out", str(out)])
    assert code == EXIT_OK
    _, summary = read_rows(out / "compare_summary.csv")
    assert {(row["class"], row["state"]) for row in summary} == {("all", "R"), ("all", "P"), ("all", "S")}


def test_compare_file_with_itself(tmp_path, erg_config):
    main(["simulate", "--config", str(erg_config), "--out", str(tmp_path / "sim")])
    path = str(tmp_path / "sim" / "trajectory.csv")
    out = tmp_path / "cmp"
    assert main(["compare", path, path, "--out", str(out), "--assert", "0"]) == EXIT_OK
    _, summary = read_rows(out / "compare_summary.csv")
    assert all(float(row["sup_gap"]) == 0.0 for row in summary)


def _summary_csv(path, value):
    lines = ["t,class,state,mean,min,max"]
    for t in (0, 0.5, 1.0):
        lines.append(f"{t},all,R,{value},{value},{value}")
    return write_text(path, "\n".join(lines) + "\n")


def test_compare_assert_threshold(tmp_path, capsys):
    first = _summary_csv(tmp_path / "first.csv", 0.6)
    second = _summary_csv(tmp_path / "second.csv", 0.5)
    out = str(tmp_path / "cmp")
    assert main(["compare", str(first), str(second), "--out", out, "--assert", "0.05"]) == EXIT_ASSERT
    assert "exceeds" in capsys.readouterr().err
    assert main(["compare", str(first), str(second), "--out", out, "--assert", "0.2"]) == EXIT_OK
    _, rows = read_rows(tmp_path / "cmp" / "compare.csv")
    assert [float(row["gap"]) for row in rows] == pytest.approx([0.1, 0.1, 0.1])


def test_compare_needs_two_files(tmp_path):
    assert main(["compare", "--out", str(tmp_path / "cmp")]) == EXIT_CONFIG


def test_stationary_command(tmp_path):
    config = write_text(tmp_path / "brca.yaml", """\
graph:
  generator: regular
  params: {k: 3, n: 100}
dynamics:
  kernel: brca
stationary:
  resolution: 4
""")
    out = tmp_path / "st"
    assert main(["stationary", "--config", str(config), "--out", str(out)]) == EXIT_OK
    _, rows = read_rows(out / "stationary.csv")
    assert {row["point_id"] for row in rows} == {"0", "1", "2"}
    assert sorted({row["classification"] for row in rows}) == ["stable", "unstable"]


def test_bounds_depth_and_branching(tmp_path):
    config = write_text(tmp_path / "b.yaml", """\
bounds:
  kinds: [depth, gw]
  t: 1.0
  depth: {max_depth: 5}
  gw: {offspring: {2: 1.0}, depth: 3, trials: 10}
""")
    out = tmp_path / "bd"
    assert main(["bounds", "--config", str(config), "--out", str(out)]) == EXIT_OK
    _, depth = read_rows(out / "depth.csv")
    assert len(depth) == 5
    _, gw = read_rows(out / "gw.csv")
    assert [float(row["mean"]) for row in gw] == [1.0, 3.0, 7.0, 15.0]


def test_threads_from_environment(tmp_path, erg_config, monkeypatch):
    monkeypatch.setenv("ASDKIT_THREADS", "1")
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(erg_config), "--out", str(out)]) == EXIT_OK
    assert _manifest(out)["threads"] == 1
    monkeypatch.setenv("ASDKIT_THREADS", "many")
    assert main(["simulate", "--config", str(erg_config), "--out", str(out)]) == EXIT_CONFIG


def test_topological_bound_dumps_trees(tmp_path):
    config = write_text(tmp_path / "b.yaml", """\
graph:
  generator: regular
  params: {k: 3, n: 100}
bounds:
  kinds: [topological]
  t: 0.5
  topological: {trials: 50}
output:
  trees: 2
""")
    out = tmp_path / "tp"
    assert main(["bounds", "--config", str(config), "--out", str(out)]) == EXIT_OK
    for i in range(2):
        lines = (out / f"tree_{i}.txt").read_text().splitlines()
        assert lines[0].startswith("# t: 0.5")
        assert lines[1].split()[:2] == ["0", "-1"]
    assert not (out / "tree_2.txt").exists()
