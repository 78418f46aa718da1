import json

from clo.cli import parse_and_dispatch, parse_seeds


def test_seed_parsing():
    assert parse_seeds("7", 30) == [7]
    assert parse_seeds("0-3", 30) == [0, 1, 2, 3]
    assert parse_seeds("1,4,9", 30) == [1, 4, 9]
    assert parse_seeds(None, 3) == [0, 1, 2]


def short_config(tmp_path, scenario_dir, extra=""):
    text = (scenario_dir / "multi_hop.yaml").read_text().replace("slots: 10000", "slots: 300")
    p = tmp_path / "short.yaml"
    p.write_text(text + extra)
    return p


def test_run_then_certify(tmp_path, scenario_dir, capsys):
    cfg = short_config(tmp_path, scenario_dir)
    out = tmp_path / "out"
    assert parse_and_dispatch(["run", "--config", str(cfg), "--out", str(out), "--seeds", "0-1",
                               "--quiet"]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert "multi_hop_clo_seed1_frames.csv" in names and "summary.json" in names
    assert json.loads((out / "summary.json").read_text())["certificates"]["1"] == "PASS"
    assert parse_and_dispatch(["certify", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "PASS" in text and "FAIL" not in text


def test_output_dir_from_environment(tmp_path, scenario_dir, monkeypatch):
    cfg = short_config(tmp_path, scenario_dir)
    monkeypatch.setenv("CLO_OUTPUT_DIR", str(tmp_path / "env_out"))
    assert parse_and_dispatch(["run", "--config", str(cfg), "--seeds", "0", "--quiet"]) == 0
    assert (tmp_path / "env_out" / "summary.json").exists()


def test_missing_config_names_the_path(tmp_path, capsys):
    missing = tmp_path / "nope.yaml"
    assert parse_and_dispatch(["run", "--config", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_usage_errors_exit_2(tmp_path, scenario_dir, capsys):
    assert parse_and_dispatch(["run", "--bogus"]) == 2
    assert parse_and_dispatch([]) == 2
    cfg = short_config(tmp_path, scenario_dir)
    assert parse_and_dispatch(["run", "--config", str(cfg), "--seeds", "x"]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert parse_and_dispatch(["run", "--config", str(cfg), "--out", str(blocker / "sub")]) == 2


def test_config_errors_exit_2_with_field_paths(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("slots: 10001\nframe: 10\n")
    assert parse_and_dispatch(["run", "--config", str(p)]) == 2
    assert "slots: T=10001 not divisible by S=10" in capsys.readouterr().err


def test_runtime_fault_exits_1(tmp_path, scenario_dir, capsys):
    cfg = short_config(tmp_path, scenario_dir, "exact_var_limit: 2\n")
    assert parse_and_dispatch(["run", "--config", str(cfg), "--out", str(tmp_path / "o"),
                               "--seeds", "0", "--quiet"]) == 1
    assert "exact solver limit" in capsys.readouterr().err


def test_certify_failure_exits_1(tmp_path, scenario_dir):
    cfg = short_config(tmp_path, scenario_dir)
    out = tmp_path / "o"
    parse_and_dispatch(["run", "--config", str(cfg), "--out", str(out), "--seeds", "0", "--quiet"])
    frames = out / "multi_hop_clo_seed0_frames.csv"
    lines = frames.read_text().splitlines()
    head = lines[0].split(",")
    i = head.index("Lbar")
    row = lines[1].split(",")
    row[i] = "1.0"
    lines[1] = ",".join(row)
    frames.write_text("\n".join(lines) + "\n")
    assert parse_and_dispatch(["certify", str(frames), "--quiet"]) == 1


def test_sweep_compare_and_tables(tmp_path, scenario_dir):
    text = (scenario_dir / "single_hop_nonstationary.yaml").read_text()
    p = tmp_path / "ns.yaml"
    p.write_text(text.replace("slots: 10000", "slots: 200"))
    out = tmp_path / "o"
    assert parse_and_dispatch(["sweep", "--config", str(p), "--out", str(out), "--seeds", "0",
                               "--etas", "0.05,0.1", "--quiet"]) == 0
    assert (out / "single_hop_nonstationary_sweep.csv").exists()
    assert parse_and_dispatch(["compare", "--config", str(p), "--out", str(out), "--seeds", "0",
                               "--quiet"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["policies"]) == {"clo", "lo-avg", "lo-outage"}
    assert parse_and_dispatch(["calibrate-table", "--config", str(p), "--out", str(out),
                               "--quiet"]) == 0
    table = json.loads((out / "single_hop_nonstationary_table_seed0.json").read_text())
    assert len(table["reliability"]) == 4 and len(table["grid"]) == 9
