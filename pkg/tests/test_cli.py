import csv
import io
import json
import subprocess
import sys
from types import SimpleNamespace

import pytest

from hipmdp.cli import (EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, cmd_filter_demo,
                        cmd_inspect_model, main)
from hipmdp.harness import load_config

SMALL = """domain = "cartpole"
support_size = 30
data_episodes = 5
data_repetitions = 1

[gibbs]
iterations = 10
chains = 1
"""


def run_cli(*args):
    proc = subprocess.run([sys.executable, "-m", "hipmdp.cli", *map(str, args)],
                          capture_output=True, text=True)
    return proc.returncode, proc.stdout, proc.stderr


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.toml"
    cfg.write_text(SMALL)
    assert main(["gen-data", "--config", str(cfg), "--seed", "2", "--out",
                 str(root / "data")]) == EXIT_OK
    assert main(["fit", "--config", str(cfg), "--seed", "2", "--data", str(root / "data"),
                 "--out", str(root / "m.hipmdp")]) == EXIT_OK
    return root


class TestErrors:
    def test_missing_config_names_path(self, tmp_path):
        path = tmp_path / "absent.toml"
        code, _, err = run_cli("gen-data", "--config", path, "--seed", 1, "--out", tmp_path)
        assert code == EXIT_CONFIG
        assert str(path) in err

    def test_unknown_flag(self):
        code, _, err = run_cli("fit", "--bogus")
        assert code == EXIT_CONFIG
        assert "usage" in err

    def test_unknown_subcommand(self):
        assert main(["train"]) == EXIT_CONFIG

    def test_seed_required(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(SMALL)
        assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_unknown_override_key(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(SMALL)
        code, _, err = run_cli("gen-data", "--config", cfg, "--seed", 0, "--out", tmp_path,
                               "--set", "gibbs.alhpa=2")
        assert code == EXIT_CONFIG and "gibbs.alhpa" in err

    def test_divergence_is_numerical_failure(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(SMALL)
        code, _, err = run_cli("gen-data", "--config", cfg, "--seed", 0, "--out", tmp_path,
                               "--set", "sarsa.alpha=1000")
        assert code == EXIT_NUMERICAL
        assert "diverged" in err

    def test_bad_model_file(self, tmp_path):
        bad = tmp_path / "m.hipmdp"
        bad.write_text("{")
        code, _, err = run_cli("inspect-model", bad)
        assert code == EXIT_CONFIG and "schema violation" in err

    def test_missing_data_dir(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(SMALL)
        assert main(["fit", "--config", str(cfg), "--seed", "0", "--data", str(tmp_path / "x"),
                     "--out", str(tmp_path / "m.hipmdp")]) == EXIT_CONFIG


class TestOutputs:
    def test_fit_writes_tagged_files(self, fitted):
        cfg = load_config(fitted / "small.toml")
        doc = json.loads((fitted / "m.hipmdp").read_text())
        assert doc["meta"]["config_hash"] == cfg.config_hash() and doc["meta"]["seed"] == 2
        for name in ("m_diagnostics.csv", "m_weights.csv", "m_correlations.csv"):
            with open(fitted / name) as fh:
                header = next(csv.reader(fh))
            assert header[-2:] == ["config_hash", "seed"]
        assert (fitted / "m_average.hipmdp").is_file()
        manifest = json.loads((fitted / "data/instances.json").read_text())
        assert manifest["config_hash"] == cfg.config_hash() and manifest["seed"] == 2

    def test_inspect_model_format(self, fitted):
        out = io.StringIO()
        cmd_inspect_model(SimpleNamespace(model=str(fitted / "m.hipmdp")), out)
        text = out.getvalue()
        doc = json.loads((fitted / "m.hipmdp").read_text())
        assert text.startswith(f"K = {doc['header']['K']}\n")
        assert "a=0: [" in text and "a=1: [" in text
        assert "w1: fixed at 1" in text
        assert "config_hash = " in text

    def test_filter_demo(self, fitted):
        out = io.StringIO()
        args = SimpleNamespace(model=str(fitted / "m.hipmdp"), seed=4, setting="0.2,0.5",
                               steps=10, out=None)
        cmd_filter_demo(args, out)
        rows = list(csv.reader(io.StringIO(out.getvalue())))
        assert rows[0][0] == "step" and rows[0][-2:] == ["config_hash", "seed"]
        assert len(rows) == 12
        assert all(r[-1] == "4" for r in rows[1:])

    def test_filter_demo_bad_setting(self, fitted):
        assert main(["filter-demo", "--model", str(fitted / "m.hipmdp"), "--seed", "0",
                     "--setting", "heavy"]) == EXIT_CONFIG

    def test_eval_control_rejects_other_domain(self, fitted, tmp_path):
        cfg = tmp_path / "a.toml"
        cfg.write_text('domain = "acrobot"\n')
        assert main(["eval-control", "--config", str(cfg), "--seed", "0", "--model",
                     str(fitted / "m.hipmdp"), "--out", str(tmp_path / "c.csv")]) == EXIT_CONFIG
