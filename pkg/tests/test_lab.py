import json
import math
from pathlib import Path

import pytest

from isolab.errors import ConfigError
from isolab.lab import dumps17, parse_config, run
from isolab.lab import runner
from isolab.lab.cli import main
from isolab.lab.report import report

SIMONS = {"experiment": "simons", "name": "simons", "simons": {"dims": [1, 4], "N": 200}}


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError):
        parse_config({**SIMONS, "bogus": 1})
    bad = tmp_path / "bad.toml"
    bad.write_text('experiment = "simons"\n[simons]\nmystery = 3\n')
    assert main(["run", str(bad), "--out", str(tmp_path / "out")]) == 2
    assert not (tmp_path / "out").exists()


def test_missing_table_rejected():
    with pytest.raises(ConfigError):
        parse_config({"experiment": "isoperimetric", "body": {"kind": "disk"}})


def test_dumps17_round_trips():
    vals = {"a": 0.1, "b": [1 / 3, math.pi], "c": {"d": 2.0e-300}, "e": True}
    back = json.loads(dumps17(vals))
    assert back["a"] == 0.1 and back["b"] == [1 / 3, math.pi] and back["c"]["d"] == 2.0e-300
    assert dumps17({"x": math.inf}) == '{"x": "inf"}'


def test_simons_run_record(tmp_path):
    rec = run(parse_config(SIMONS), tmp_path)
    assert rec.status == "ok" and rec.exit_code == 0
    rows = {(r["n"], r["bc"]): r["stable"] for r in rec.summary["verdicts"]}
    assert rows[(4, "boundary_fixed")] and not rows[(4, "volume_constrained")]
    assert rec.summary["n1_agree"]
    assert (rec.path / "summary.json").exists()
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".") and p.is_dir()]


def test_summary_hash_independent_of_workers(tmp_path):
    cfg = parse_config({**SIMONS, "simons": {"dims": [1, 4, 8], "domains": ["ball", "hull"], "N": 200}})
    a = run(cfg, tmp_path / "one")
    b = run(cfg.model_copy(update={"workers": 8}), tmp_path / "eight")
    assert a.summary_hash == b.summary_hash


def test_solver_failure_goes_to_failures(tmp_path):
    cfg = parse_config({"experiment": "isoperimetric", "body": {"kind": "disk"}, "grid": {"n": 48},
                        "opt": {"max_iters": 2}, "isoperimetric": {"alpha": 0.5, "starts": 1}})
    rec = run(cfg, tmp_path)
    assert rec.exit_code == 3
    assert rec.path.parent.name == "failures"
    assert json.loads((rec.path / "record.json").read_text())["error"]["type"] == "SolverError"


def test_interrupted_run_leaves_no_final_dir(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise KeyboardInterrupt

    monkeypatch.setitem(runner.PIPELINES, "simons", boom)
    cfg = parse_config(SIMONS)
    with pytest.raises(KeyboardInterrupt):
        run(cfg, tmp_path)
    assert not (tmp_path / runner.run_id_for(cfg)).exists()


def test_spectral_run_and_report(tmp_path):
    cfg = parse_config({"experiment": "spectral", "body": {"kind": "box", "lo": [-1, -0.5], "hi": [1, 0.5]},
                        "grid": {"n": 96}})
    rec = run(cfg, tmp_path)
    assert rec.summary["monotone"]
    out = report(rec.path)
    assert (out / "overlay.svg").read_text().lstrip().startswith("<?xml")
    assert "eigenvalues" in (out / "summary.txt").read_text()


def test_report_lists_missing_artifacts(tmp_path):
    cfg = parse_config({"experiment": "spectral", "body": {"kind": "square"}, "grid": {"n": 64}})
    rec = run(cfg, tmp_path)
    (rec.path / "nodal.csv").unlink()
    text = (report(rec.path) / "summary.txt").read_text()
    assert "absent:" in text and "nodal.csv" in text


def test_cli_suite(tmp_path, capsys):
    cfgs = tmp_path / "cfgs"
    cfgs.mkdir()
    (cfgs / "a.toml").write_text('experiment = "simons"\n[simons]\ndims = [4]\nN = 100\nfull_grid_check = false\n')
    assert main(["suite", str(cfgs), "--out", str(tmp_path / "out")]) == 0
    run_dir = Path(capsys.readouterr().out.split()[0])
    assert main(["report", str(run_dir)]) == 0


def test_shipped_configs_parse():
    root = Path(__file__).resolve().parents[1] / "configs"
    from isolab.lab import load_config

    for p in sorted(root.glob("*.toml")):
        load_config(p)
