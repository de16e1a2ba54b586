import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from sisfilter.cli import COMMANDS, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

PRESETS = {
    "generate": "generate_events",
    "simulate": "simulate",
    "meanfield": "meanfield",
    "track": "uniform_sampling",
    "pcrlb": "pcrlb_two_networks",
    "evolve": "evolve_hmm",
    "threshold": "threshold_sweep",
    "ingest": "ingest",
    "fit": "fit",
    "report": "report",
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    shutil.copytree(CONFIGS, root / "configs")
    return root


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_every_command_has_a_preset():
    assert set(PRESETS) == set(COMMANDS)


# ingest, fit and report read upstream artifacts; the chained test dry-runs them
@pytest.mark.parametrize("command", sorted(set(PRESETS) - {"ingest", "fit", "report"}))
def test_dry_run_validates_without_artifacts(command, workspace, capsys, tmp_path):
    out = tmp_path / "out"
    code, stdout, _ = _run(capsys, command, "--config", workspace / "configs" / f"{PRESETS[command]}.toml",
                           "--out", out, "--dry-run")
    assert code == 0
    assert json.loads(stdout) == {"status": "ok", "command": command, "dry_run": True}
    assert not out.exists()


def test_invalid_config_exits_2_without_artifacts(capsys, tmp_path):
    out = tmp_path / "out"
    bad = _write(tmp_path, 'seed = 1\n[kernel]\ntype = "random"\nmax_degree = -3\n[rho]\nlaw = "uniform"\n'
                           'max_degree = 3\n[meanfield]\nhorizon = 5\nx0 = 0.3\n')
    code, stdout, err = _run(capsys, "meanfield", "--config", bad, "--out", out)
    assert code == 2 and stdout == ""
    diag = json.loads(err)
    assert diag["status"] == "error" and diag["kind"] == "config" and diag["field"].startswith("kernel")
    assert not out.exists()


@pytest.mark.parametrize("text,field", [
    ('[rho]\nlaw = "uniform"\nmax_degree = 3\n', "seed"),
    ('seed = 1\nbogus = 3\n[kernel]\ntype = "constant"\nmax_degree = 3\np12 = 0.1\np21 = 0.1\n'
     '[rho]\nlaw = "uniform"\nmax_degree = 3\n[meanfield]\nhorizon = 5\nx0 = 0.3\n', "bogus"),
    ('seed = 1\n[kernel]\ntype = "constant"\nmax_degree = 3\np12 = 0.1\np21 = 0.1\n'
     '[rho]\nlaw = "uniform"\nmax_degree = 3\n[meanfield]\nhorizon = "five"\nx0 = 0.3\n', "meanfield.horizon"),
    ('seed = 1\n[kernel]\ntype = "csv"\npath = "missing.csv"\n', "kernel.path"),
    ("seed = [", "--config"),
])
def test_config_diagnostics(text, field, capsys, tmp_path):
    code, _, err = _run(capsys, "meanfield", "--config", _write(tmp_path, text), "--out", tmp_path / "o")
    assert code == 2
    assert json.loads(err)["field"] == field
    assert not (tmp_path / "o").exists()


def test_out_required(capsys, tmp_path):
    text = (CONFIGS / "meanfield.toml").read_text().replace('out = "../runs/meanfield"\n', "")
    code, _, err = _run(capsys, "meanfield", "--config", _write(tmp_path, text))
    assert code == 2 and json.loads(err)["field"] == "out"


def test_runtime_failure_leaves_no_partial_artifacts(capsys, tmp_path):
    # a valid config whose computation fails: the degree law exceeds the kernel
    text = ('seed = 1\n[kernel]\ntype = "constant"\nmax_degree = 2\np12 = 0.1\np21 = 0.1\n'
            '[rho]\nlaw = "uniform"\nmax_degree = 4\n[meanfield]\nhorizon = 5\nx0 = 0.3\n')
    out = tmp_path / "o"
    code, _, err = _run(capsys, "meanfield", "--config", _write(tmp_path, text), "--out", out)
    assert code in (1, 2)
    assert json.loads(err)["status"] == "error"
    assert not out.exists() or not any(out.iterdir())


def test_meanfield_reruns_byte_identical(capsys, tmp_path):
    cfg = CONFIGS / "meanfield.toml"
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(capsys, "meanfield", "--config", cfg, "--out", a)[0] == 0
    assert _run(capsys, "meanfield", "--config", cfg, "--out", b)[0] == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_simulate_seed_override(capsys, tmp_path):
    cfg = CONFIGS / "simulate.toml"
    outs = []
    for seed, name in ((7, "a"), (7, "b"), (8, "c")):
        assert _run(capsys, "simulate", "--config", cfg, "--out", tmp_path / name, "--seed", seed)[0] == 0
        outs.append((tmp_path / name / "trajectory.csv").read_bytes())
    assert outs[0] == outs[1] and outs[0] != outs[2]
    assert json.loads((tmp_path / "c" / "run.json").read_text())["seed"] == 8


def test_track_emits_filter_log_and_mse(capsys, tmp_path):
    code, stdout, _ = _run(capsys, "track", "--config", CONFIGS / "uniform_sampling.toml", "--out", tmp_path)
    assert code == 0
    assert set(json.loads(stdout)["artifacts"]) == {"filter_log.csv", "mse.csv", "run.json"}
    rows = list(csv.DictReader((tmp_path / "mse.csv").open()))
    assert len(rows) > 0 and {"bayes", "moving_average", "var"} <= set(rows[0])
    summary = json.loads((tmp_path / "run.json").read_text())["summary"]
    assert summary


def test_pcrlb_emits_two_network_bound(capsys, tmp_path):
    code, _, _ = _run(capsys, "pcrlb", "--config", CONFIGS / "pcrlb_two_networks.toml", "--out", tmp_path)
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "bound.csv").open()))
    assert {r["network_label"] for r in rows} == {"scale_free", "erdos_renyi"}
    assert list(rows[0]) == ["n", "trace_bound", "trace_mse", "network_label"]
    assert len(rows) == 2 * 51


@pytest.mark.parametrize("command", ["threshold", "evolve"])
def test_evolution_commands(command, capsys, tmp_path):
    code, stdout, _ = _run(capsys, command, "--config", CONFIGS / f"{PRESETS[command]}.toml", "--out", tmp_path)
    assert code == 0
    for name in json.loads(stdout)["artifacts"]:
        assert (tmp_path / name).stat().st_size > 0


def test_chained_event_pipeline(workspace, capsys):
    cdir = workspace / "configs"
    for command in ("generate", "ingest", "fit", "report"):
        code, stdout, err = _run(capsys, command, "--config", cdir / f"{PRESETS[command]}.toml")
        assert code == 0, err
    runs = workspace / "runs"
    ks = json.loads((runs / "ingest" / "ks.json").read_text())
    assert 0 <= ks["statistic"] <= 1 and 0 <= ks["p_value"] <= 1
    fit = json.loads((runs / "fit" / "fit.json").read_text())
    assert fit["exponent"] > 1
    assert (runs / "report" / "deviation.csv").read_text().startswith("metric,")
    for command in ("ingest", "fit", "report"):
        code, stdout, _ = _run(capsys, command, "--config", cdir / f"{PRESETS[command]}.toml", "--dry-run")
        assert code == 0


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sisfilter.cli", "meanfield", "--config",
                           str(CONFIGS / "meanfield.toml"), "--dry-run"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["dry_run"]
    proc = subprocess.run([sys.executable, "-m", "sisfilter.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "meanfield" in proc.stdout
