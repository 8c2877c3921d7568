import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from condbeta.cli import COMMANDS, main
from condbeta.config import ConfigError, load_config

CONFIG = """\
output_dir: {out}
seed: 7
synth:
  n_assets: 25
  n_months: 134
  idio_vol: [0.01, 0.03]
  dcf_growth: 0.0
betas:
  horizons: [1]
forecast:
  models: [pcr, elastic_net]
  kinds: [Capm, Down, Up, SemiN, SemiP, SemiMNeg, SemiMPos]
  horizons: [1]
  grid:
    enet_lambda: [0.001, 0.01, 0.1]
    enet_alpha: [0.5, 1.0]
    pcr_k: [1, 3]
universe:
  enabled: true
portfolio:
  top_n: 10
  min_obs: 40
valuation:
  growth: [0.0, 0.01]
  premium: [0.1]
"""


def write_config(tmp_path, out="out", extra=""):
    p = tmp_path / "run.yaml"
    p.write_text(CONFIG.format(out=out) + extra)
    return p


def run_all(cfg, capsys=None):
    for cmd in COMMANDS:
        code = main([cmd, "--config", str(cfg)])
        assert code == 0, cmd
        if capsys is not None:
            rec = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
            assert rec["status"] == "ok" and rec["command"] == cmd and rec["outputs"]


def read_rows(path):
    with open(path, newline="") as fh:
        return [r for r in csv.reader(fh) if r and not r[0].startswith("#")]


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_config(tmp)
    run_all(cfg)
    return tmp, cfg


def test_full_run_outputs(finished_run):
    tmp, _ = finished_run
    out = tmp / "out"
    for rel in ("data/returns.csv", "betas/betas.csv", "forecast/forecasts.csv", "evaluation/r2_cw.csv",
                "valuation/valuation.csv", "portfolio/summary.csv", "report/summary.md"):
        assert (out / rel).exists(), rel
    fc = read_rows(out / "forecast/forecasts.csv")
    cells = {(r[2], r[3], r[4]) for r in fc[1:]}
    ev = read_rows(out / "evaluation/r2_cw.csv")
    header, rows = ev[0], ev[1:]
    assert header[:4] == ["model", "kind", "horizon", "weighting"]
    # one row per (model, kind, horizon) and weighting
    assert len(rows) == 3 * len(cells)
    assert {(r[0], r[1], r[2]) for r in rows} == cells
    assert ("elastic_net", "Capm_Semi", "1") in cells


def test_comment_lines_are_plain(finished_run):
    tmp, _ = finished_run
    first = (tmp / "out/evaluation/r2_cw.csv").read_text().splitlines()[0]
    assert first.startswith("# ") and "percent" in first


def test_subcommand_stdout_record(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["synth", "--config", str(cfg)]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec == {"status": "ok", "command": "synth", "outputs": rec["outputs"]}
    assert any(o.endswith("returns.csv") for o in rec["outputs"])


def test_missing_upstream_artifact(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code = main(["evaluate", "--config", str(cfg)])
    assert code == 2
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["status"] == "error" and rec["error"] == "MissingArtifact"
    assert rec["path"].endswith(str(Path("forecast") / "forecasts.csv"))
    assert "forecasts.csv" in rec["message"]


def test_bad_config_is_error_record(tmp_path, capsys):
    cfg = write_config(tmp_path, extra="colour: blue\n")
    assert main(["synth", "--config", str(cfg)]) == 1
    rec = json.loads(capsys.readouterr().err)
    assert rec["error"] == "ConfigError" and "colour" in rec["message"]


def _variant(tmp_path, old, new):
    text = CONFIG.format(out="out")
    assert old in text
    p = tmp_path / "variant.yaml"
    p.write_text(text.replace(old, new))
    return p


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError, match="unknown family"):
        load_config(_variant(tmp_path, "[pcr, elastic_net]", "[pcr, lasso]"))
    with pytest.raises(ConfigError, match="not computed"):
        load_config(_variant(tmp_path, "betas:\n  horizons: [1]", "betas:\n  horizons: [3]"))
    with pytest.raises(ConfigError, match="grid"):
        load_config(_variant(tmp_path, "pcr_k: [1, 3]", "pcr_k: [0, 3]"))
    cfg = load_config(write_config(tmp_path))
    assert cfg.output_dir == tmp_path / "out"
    assert cfg.forecast.grid.pcr_k == (1, 3)


def test_rerun_is_byte_identical(finished_run, tmp_path):
    tmp, _ = finished_run
    cfg = write_config(tmp_path)
    run_all(cfg)
    a, b = tmp / "out", tmp_path / "out"
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) > 20
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path)
    res = subprocess.run([sys.executable, "-m", "condbeta.cli", "betas", "--config", str(cfg)],
                         capture_output=True, text=True)
    assert res.returncode == 2
    assert json.loads(res.stderr.strip().splitlines()[-1])["path"].endswith("returns.csv")
