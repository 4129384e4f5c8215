import csv
import json
import subprocess
import sys

import pytest

from spectral_mim import cli
from spectral_mim.config import parse_config
from spectral_mim.errors import ConfigError


def write_cfg(tmp_path, **kw):
    base = {"schema": 1, "name": "t", "model": {"name": "product"}, "signals": {"p": 2},
            "preprocessings": [{"name": "product_optimal"}], "deltas": [2.0], "d": 60, "trials": 2, "seed": 3}
    base.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(base, indent=2))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_config_error_has_line_number():
    text = '{\n  "schema": 1,\n  "model": {"name": "product"},\n  "preprocessings": ["product_optimal"],\n  "deltas": []\n}'
    with pytest.raises(ConfigError, match="line 5"):
        parse_config(text)


@pytest.mark.parametrize("patch,key", [({"schema": 2}, "schema"), ({"bogus": 1}, "bogus"),
                                       ({"model": {"name": "nope"}}, "model"), ({"d": 1}, "d"),
                                       ({"deltas": [1, -2]}, "deltas"), ({"eigensolver": "qr"}, "eigensolver")])
def test_config_rejections(tmp_path, patch, key):
    assert cli.main(["predict", "--config", write_cfg(tmp_path, **patch), "--out", str(tmp_path)]) == 2


def test_missing_config(tmp_path):
    assert cli.main(["design", "--out", str(tmp_path)]) == 2
    assert cli.main(["design", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2


def test_design_outputs(tmp_path):
    assert cli.main(["design", "--config", write_cfg(tmp_path), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "t_design.json").read_text())
    assert rep["status"] == "ok"
    assert rep["inverse_delta_c"] == pytest.approx(1.68421, abs=1e-4)
    rows = read_csv(tmp_path / "t_design_T.csv")
    assert {r["map"] for r in rows} == {"T_star", "product_optimal"}
    assert (tmp_path / "manifest_design.json").exists()


def test_design_pure_noise_is_degenerate(tmp_path):
    cfg = write_cfg(tmp_path, model={"name": "pure_noise", "p": 2}, preprocessings=["constant"])
    assert cli.main(["design", "--config", cfg, "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "t_design.json").read_text())
    assert rep["status"] == "degenerate"


def test_threshold_output(tmp_path):
    cfg = write_cfg(tmp_path, threshold={"branches": [1], "delta_range": [0.3, 5.0]})
    assert cli.main(["threshold", "--config", cfg, "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "t_threshold.json").read_text())
    assert rep["thresholds"][0]["delta_c"] == pytest.approx(0.59375, rel=1e-4)


def test_threshold_bad_bracket_exits_3(tmp_path):
    cfg = write_cfg(tmp_path, threshold={"branches": [1], "delta_range": [2.0, 5.0]})
    assert cli.main(["threshold", "--config", cfg, "--out", str(tmp_path)]) == 3


def test_predict_outputs(tmp_path):
    cfg = write_cfg(tmp_path, deltas=[1.0, 5.0], preprocessings=["product_optimal", {"name": "constant", "c": 1.0}])
    assert cli.main(["predict", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "t_predict.csv")
    assert list(rows[0]) == cli.CSV_HEADER
    const = [r for r in rows if r["preproc"].startswith("constant") and r["stat_name"] == "overlap_basis_sq"]
    assert const and all(float(r["mean"]) == 0.0 for r in const)
    top = [r for r in rows if r["preproc"] == "product_optimal" and r["stat_name"] == "eigenvalue"
           and r["i"] == "1" and float(r["delta"]) == 5.0]
    assert float(top[0]["mean"]) == pytest.approx(0.2, abs=1e-8)


def test_simulate_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert cli.main(["simulate", "--config", cfg, "--out", str(b), "--threads", "2"]) == 0
    assert (a / "t_simulate.csv").read_bytes() == (b / "t_simulate.csv").read_bytes()
    assert cli.main(["simulate", "--config", cfg, "--out", str(b), "--seed", "4"]) == 0
    assert (a / "t_simulate.csv").read_bytes() != (b / "t_simulate.csv").read_bytes()


def test_simulate_and_predict_share_header(tmp_path):
    cfg = write_cfg(tmp_path)
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path)])
    cli.main(["predict", "--config", cfg, "--out", str(tmp_path)])
    h1 = (tmp_path / "t_simulate.csv").read_text().splitlines()[0]
    h2 = (tmp_path / "t_predict.csv").read_text().splitlines()[0]
    assert h1 == h2


def test_oracle_check(tmp_path, capsys):
    assert cli.main(["oracle-check", "--out", str(tmp_path / "a"), "--seed", "5"]) == 0
    assert "100/100 instances passed" in capsys.readouterr().out
    cli.main(["oracle-check", "--out", str(tmp_path / "b"), "--seed", "5"])
    assert (tmp_path / "a" / "oracle_check.txt").read_text() == (tmp_path / "b" / "oracle_check.txt").read_text()


def test_oracle_check_dimension_limit(tmp_path):
    cfg = write_cfg(tmp_path, oracle={"d_max": 300})
    assert cli.main(["oracle-check", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_seed_range(tmp_path):
    assert cli.main(["predict", "--config", write_cfg(tmp_path), "--seed", "-1", "--out", str(tmp_path)]) == 2


def test_console_help():
    out = subprocess.run([sys.executable, "-m", "spectral_mim.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("simulate", "predict", "design", "threshold", "oracle-check"):
        assert cmd in out.stdout
