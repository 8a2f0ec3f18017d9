import csv
import json
import math
from pathlib import Path

import pytest
import yaml

from linksig import cli
from linksig.config import DEFAULTS, ConfigError, build_config, dump_config, load_config

TINY = {
    "geometry": {"environments": ["outdoor"], "outdoor": {"thetas": [1.0]}, "ratio_stop": 1.0, "ratio_step": 0.5},
    "synthesis": {"nodes": 8, "extent": [6.0, 6.0], "layout_seed": 3, "scatterer_count": 40, "tap_count": 20},
    "attack": {
        "targets": 3,
        "scenarios": ["case1", "case3"],
        "models": ["ridge", "knn"],
        "k_nearest": {"case1": [4], "case3": [None]},
        "key_points": 5,
    },
    "fbch": {"helpers": [0, 1, 2], "sessions": 3, "k_nearest": 4, "models": ["knn"], "agreement_sessions": 2, "max_rounds": 5},
    "poisson": {"densities": [1.0], "radii": [1.0], "node_counts": [1, 2], "mc_trials": 2000},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


def _run(args, capsys=None):
    code = cli.main([str(a) for a in args])
    return code


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_defaults_round_trip():
    cfg = build_config()
    assert cfg == DEFAULTS and cfg is not DEFAULTS
    assert yaml.safe_load(dump_config(cfg)) == cfg


def test_unknown_and_bad_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="synthesis.nodez"):
        build_config({"synthesis": {"nodez": 3}})
    with pytest.raises(ConfigError):
        build_config({"attack": {"models": ["svm"]}})
    with pytest.raises(ConfigError):
        build_config({"fbch": {"helpers": [-1]}})
    with pytest.raises(ConfigError):
        build_config({"geometry": "flat"})
    bad = tmp_path / "bad.yaml"
    bad.write_text("- a list\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_hyperparams_are_open():
    cfg = build_config({"attack": {"hyperparams": {"mlp": {"width": 8, "epochs": 10}}}})
    assert cfg["attack"]["hyperparams"]["mlp"] == {"width": 8, "epochs": 10}


def test_derive_seed_is_stable_and_key_sensitive():
    assert cli.derive_seed(0, "a", 1) == cli.derive_seed(0, "a", 1)
    assert len({cli.derive_seed(0, "a", 1), cli.derive_seed(0, "a", 2), cli.derive_seed(1, "a", 1)}) == 3


@pytest.mark.parametrize("command", cli.COMMANDS)
def test_each_command_writes_manifest_with_hashes(command, tiny_config, tmp_path):
    out = tmp_path / command
    assert _run([command, "--config", tiny_config, "--out", out, "--seed", 5]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == command and manifest["master_seed"] == 5
    assert manifest["config"] == load_config(tiny_config)
    assert manifest["outputs"]
    for name, digest in manifest["outputs"].items():
        assert cli.sha256_of(out / name) == digest


def test_output_is_independent_of_worker_count(tiny_config, tmp_path):
    for command in ("attack", "fbch"):
        a, b = tmp_path / f"{command}1", tmp_path / f"{command}4"
        assert _run([command, "--config", tiny_config, "--out", a, "--workers", 1]) == 0
        assert _run([command, "--config", tiny_config, "--out", b, "--workers", 4]) == 0
        ma = json.loads((a / "manifest.json").read_text())["outputs"]
        mb = json.loads((b / "manifest.json").read_text())["outputs"]
        assert ma == mb


def test_from_manifest_reproduces(tiny_config, tmp_path):
    first, again = tmp_path / "first", tmp_path / "again"
    _run(["attack", "--config", tiny_config, "--out", first, "--seed", 9])
    assert _run(["attack", "--from-manifest", first / "manifest.json", "--out", again]) == 0
    ma = json.loads((first / "manifest.json").read_text())
    mb = json.loads((again / "manifest.json").read_text())
    assert ma["outputs"] == mb["outputs"] and mb["master_seed"] == 9
    assert _run(["fbch", "--from-manifest", first / "manifest.json", "--out", tmp_path / "x"]) == 2


def test_synth_two_nodes_gives_ten_rows(tmp_path):
    cfg = tmp_path / "two.yaml"
    cfg.write_text(yaml.safe_dump({"synthesis": {"nodes": 2, "extent": [2.0, 2.0]}}))
    assert _run(["synth", "--config", cfg, "--out", tmp_path / "s"]) == 0
    rows = _rows(tmp_path / "s" / "traces.csv")
    assert len(rows) == 1 + 2 * 5
    assert rows[0][:7] == ["tx_id", "rx_id", "meas_idx", "tx_x", "tx_y", "rx_x", "rx_y"] and len(rows[0]) == 7 + 50


def test_attack_outputs(tiny_config, tmp_path):
    out = tmp_path / "a"
    _run(["attack", "--config", tiny_config, "--out", out])
    rows = _rows(out / "guesses.csv")
    assert rows[0] == ["scenario", "model", "k", "tx", "rx", "g_0", "g_1", "g_2", "g_3", "g_4"]
    assert len(rows) == 1 + 2 * 2 * 3
    assert {r[2] for r in rows[1:]} == {"4", "all"}
    summary = json.loads((out / "summary.json").read_text())
    brute = [r for r in summary if r["scenario"] == "brute_force"]
    assert brute and brute[0]["mean"] == 16
    assert (out / "cdf_case1_knn_k4.csv").exists() and (out / "cdf_case3_ridge_kall.csv").exists()


def test_attack_on_saved_traces(tiny_config, tmp_path):
    _run(["synth", "--config", tiny_config, "--out", tmp_path / "s"])
    direct, replay = tmp_path / "d", tmp_path / "r"
    _run(["attack", "--config", tiny_config, "--out", direct])
    assert _run(["attack", "--config", tiny_config, "--out", replay, "--traces", tmp_path / "s" / "traces.csv"]) == 0
    assert (direct / "guesses.csv").read_text() == (replay / "guesses.csv").read_text()


def test_fbch_zero_helpers_match_plain_attack(tmp_path):
    cfg = dict(TINY, attack=dict(TINY["attack"], scenarios=["case1"], models=["knn"]))
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg))
    _run(["attack", "--config", path, "--out", tmp_path / "a"])
    _run(["fbch", "--config", path, "--out", tmp_path / "f"])
    plain = {(r[3], r[4]): r[5:] for r in _rows(tmp_path / "a" / "guesses.csv")[1:]}
    fb = {(r[2], r[3]): r[4:] for r in _rows(tmp_path / "f" / "guesses.csv")[1:] if r[0] == "0"}
    assert plain == fb


def test_fbch_outputs(tiny_config, tmp_path):
    out = tmp_path / "f"
    _run(["fbch", "--config", tiny_config, "--out", out])
    agree = _rows(out / "agreement.csv")
    assert agree[0] == ["helpers", "session", "tx", "rx", "noiseless_keys_equal", "noisy_bit_agreement", "reconcile_rounds"]
    assert len(agree) == 1 + 2 * 2 and all(r[4] == "true" for r in agree[1:])
    helpers = _rows(out / "helpers_case1_knn.csv")
    assert helpers[0] == ["helpers", "guesses", "cum_fraction"] and len(helpers) == 1 + 3 * 32
    assert (out / "poisson_table.csv").exists()


def test_poisson_spot_value(tiny_config, tmp_path):
    out = tmp_path / "p"
    _run(["poisson", "--config", tiny_config, "--out", out])
    rows = _rows(out / "poisson_table.csv")
    assert rows[0] == ["lambda_A", "close_radius", "legit_count", "probability", "mc_estimate"]
    one = next(r for r in rows[1:] if r[2] == "1")
    assert float(one[3]) == pytest.approx(1 - math.exp(-math.pi), abs=1e-8)
    assert abs(float(one[4]) - float(one[3])) < 0.05


def test_correlate_columns(tiny_config, tmp_path):
    out = tmp_path / "c"
    _run(["correlate", "--config", tiny_config, "--out", out])
    rows = _rows(out / "correlation_outdoor.csv")
    assert len(rows) == 1 + 3
    assert rows[0][:3] == ["d_over_lambda", "theta_R", "rho_magnitude"]
    assert float(rows[1][2]) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize(
    "args,code",
    [
        (["attack", "--workers", "0"], 2),
        (["bogus"], 2),
        (["attack", "--config", "/nonexistent/x.yaml"], 1),
    ],
)
def test_errors_are_one_json_line(args, code, tmp_path, capsys):
    assert cli.main(args + ["--out", str(tmp_path)] if args[0] != "bogus" else args) == code
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert json.loads(err[0])["error"] in ("config", "runtime")


def test_unknown_config_key_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("attack:\n  targetz: 3\n")
    assert cli.main(["attack", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert "attack.targetz" in json.loads(capsys.readouterr().err.strip())["message"]
