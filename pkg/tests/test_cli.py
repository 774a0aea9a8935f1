import csv
import hashlib
import json
from pathlib import Path

import pytest

from activelo.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, FEATURE_COLUMNS, main, read_features_csv
from activelo.synth import Segment, SynthSpec, benchmark_entries


def _synth_entry(sid, seed, clutter=0.0, weather="general"):
    spec = SynthSpec((Segment(12, 10), Segment(10, 10, 0.8)), clutter_fraction=clutter, point_spacing=1.5,
                     corridor_half_width=4.0)
    return {"id": sid, "seed": seed, "weather": weather, "synth": spec.to_dict()}


def _manifest(path: Path, entries) -> Path:
    path.write_text(json.dumps({"sequences": entries}), encoding="utf-8")
    return path


def _rows(path):
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.reader(f))


def _digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*")) if p.is_file()}


def test_analyze_three_sequences(tmp_path):
    m = _manifest(tmp_path / "m.json", [_synth_entry(f"s{i}", i) for i in range(3)])
    out = tmp_path / "out"
    assert main(["analyze", "--manifest", str(m), "--seed", "0", "--out", str(out)]) == EXIT_OK
    rows = _rows(out / "features.csv")
    assert rows[0] == FEATURE_COLUMNS and len(rows) == 4
    assert [r[0] for r in rows[1:]] == ["s0", "s1", "s2"]
    assert (out / "features.csv").read_bytes().count(b"\r\n") == 4
    assert not (out / "failures.csv").exists()
    feats = read_features_csv(out / "features.csv")
    assert feats[0].m == 2


def test_analyze_missing_pose_file_is_partial(tmp_path):
    entries = [_synth_entry("s0", 0), {"id": "gone", "poses": "nope.txt", "clouds": "nope"}, _synth_entry("s2", 2)]
    m = _manifest(tmp_path / "m.json", entries)
    out = tmp_path / "out"
    assert main(["analyze", "--manifest", str(m), "--seed", "0", "--out", str(out)]) == EXIT_PARTIAL
    assert len(_rows(out / "features.csv")) == 3
    fail = _rows(out / "failures.csv")
    assert fail[0] == ["stage", "id", "error"] and fail[1][:2] == ["load", "gone"]


def test_config_errors_exit_2(tmp_path, capsys):
    m = _manifest(tmp_path / "m.json", [_synth_entry("s0", 0)])
    assert main(["analyze", "--manifest", str(m)]) == EXIT_CONFIG
    assert "seed is mandatory" in capsys.readouterr().err
    assert main(["analyze", "--manifest", str(tmp_path / "absent.json"), "--seed", "1"]) == EXIT_CONFIG
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"manifest": "m.json", "seed": 1, "ais": {"hh": 2}}))
    assert main(["run", "--config", str(cfg)]) == EXIT_CONFIG
    assert "unknown keys ['hh']" in capsys.readouterr().err
    cfg.write_text(json.dumps({"manifest": "m.json", "seed": 1, "ais": {"predictor": "ndt"}}))
    assert main(["ais", "--config", str(cfg), "--initial", "s0"]) == EXIT_CONFIG


def test_toml_config_and_overrides(tmp_path):
    _manifest(tmp_path / "m.json", [_synth_entry(f"s{i}", i) for i in range(4)])
    cfg = tmp_path / "c.toml"
    cfg.write_text('manifest = "m.json"\nseed = 3\noutput = "o"\n[itss]\nu = 2\nbins_outlier = 1\n')
    rc = main(["itss", "--config", str(cfg), "--set", "itss.bins_speed=2", "--analyze-stride", "4"])
    assert rc == EXIT_OK
    doc = json.loads((tmp_path / "o" / "itss.json").read_text())
    assert len(doc["selected"]) == 2
    assert doc["config"]["itss"]["bins_speed"] == 2 and doc["config"]["analyze"]["stride"] == 4
    assert doc["version"]


def test_iter_zero_selection_is_itss(tmp_path):
    m = _manifest(tmp_path / "m.json", [_synth_entry(f"s{i}", i) for i in range(5)])
    out = tmp_path / "out"
    args = ["run", "--manifest", str(m), "--seed", "0", "--out", str(out), "--iter", "0", "--u", "2",
            "--bins-outlier", "1", "--bins-speed", "2", "--analyze-stride", "4", "--predictor", "oracle"]
    assert main(args) == EXIT_OK
    itss = json.loads((out / "itss.json").read_text())["selected"]
    rows = _rows(out / "selection.csv")
    assert rows[0] == ["id", "round"] and [r[0] for r in rows[1:]] == itss
    assert all(r[1] == "0" for r in rows[1:])
    assert not list(out.glob("ais/*.json"))


def test_report_command(capsys, tmp_path):
    assert main(["report", "--json", str(tmp_path / "r.json")]) == EXIT_OK
    text = capsys.readouterr().out
    assert "L_full = 3450, L_train = 1000, L_remain = 336, total = 1336" in text
    assert "52.2%" in text
    assert json.loads((tmp_path / "r.json").read_text())["L_active_total"] == 1336
    assert main(["report", "--total", "10"]) == EXIT_CONFIG


def test_ais_initial_from_itss_file(tmp_path):
    m = _manifest(tmp_path / "m.json", [_synth_entry(f"s{i}", i, 0.1 * i) for i in range(4)])
    out = tmp_path / "out"
    (tmp_path / "i.json").write_text(json.dumps({"selected": ["s1"]}))
    args = ["ais", "--manifest", str(m), "--seed", "2", "--out", str(out), "--initial", str(tmp_path / "i.json"),
            "--h", "1", "--iter", "2", "--stride", "6", "--predictor", "noisy:0.01,0.02", "--c", "3", "--voxel", "0"]
    assert main(args) == EXIT_OK
    rows = _rows(out / "selection.csv")[1:]
    assert rows[0] == ["s1", "0"] and [r[1] for r in rows] == ["0", "1", "2"]
    r1 = json.loads((out / "ais" / "round_01.json").read_text())
    assert r1["round"] == 1 and len(r1["losses"]) == 3 and r1["admitted"] == [rows[1][0]]


@pytest.mark.slow
def test_twelve_sequence_run_targets_clutter_and_is_reproducible(tmp_path):
    m = _manifest(tmp_path / "m.json", benchmark_entries(6, 6, seed=1))
    runs = []
    for k in range(2):
        out = tmp_path / f"out{k}"
        args = ["run", "--manifest", str(m), "--seed", "1", "--out", str(out), "--u", "3", "--h", "2",
                "--iter", "3", "--analyze-stride", "8", "--stride", "8", "--c", "6", "--voxel", "0"]
        assert main(args) == EXIT_OK
        runs.append(out)
    rows = _rows(runs[0] / "selection.csv")[1:]
    assert len(rows) == 9
    chosen = {r[0] for r in rows}
    assert {f"clutter_{i:02d}" for i in range(6)} <= chosen
    assert all(r[0].startswith("clean") for r in rows if r[1] == "0")
    assert _digest(runs[0]) == _digest(runs[1])
    names = set(_digest(runs[0]))
    for f in ("config.json", "VERSION", "features.csv", "itss.json", "selection.csv", "cost_report.json",
              "cost_report.txt", "ais/round_01.json", "ais/round_03.json"):
        assert f in names
    cost = json.loads((runs[0] / "cost_report.json").read_text())
    assert cost["selected"] == 9 and cost["total"] == 12
