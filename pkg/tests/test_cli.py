import json
from pathlib import Path

import numpy as np
import pytest

from dropbench.cli import main
from dropbench.config import load_config
from dropbench.errors import ArtifactError, ConfigurationError
from dropbench import pipeline

TINY_CONFIG = """
seed = 5

[dataset]
kind = "synthetic"
n_samples = 120
series_length = 48
features = 2
block_length = 12

[model]
epochs = 6
learning_rate = 0.05
conv_units = 8
kernel_size = 5
conv_strides = [2, 2]
dense_units = 8
dropout_rate = 0.1

[corruption]
k_grid = [0.25, 0.55, 0.85]
eval_samples = 16

[evaluation]
repetitions = 2

[[methods]]
name = "oracle"

[[methods]]
name = "random_control"

[[methods]]
name = "grad_x_input"
"""


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text(TINY_CONFIG + f'\n[output]\nroot = "{tmp_path / "out"}"\n')
    return path


def _run(*argv):
    return main(list(argv))


def test_pipeline_smoke_produces_artifacts(tiny_config, capsys):
    assert _run("pipeline", "--config", str(tiny_config)) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    root = Path(out["artifacts"])
    assert (root / "metrics" / "metrics.json").exists()
    assert (root / "metrics" / "metrics.csv").exists()
    assert (root / "drops" / "rep0.csv").exists()
    assert (root / "drops" / "rep1.csv").exists()
    ridgelines = list((root / "figures").glob("ridgeline_*.svg"))
    assert len(ridgelines) == 3
    assert (root / "figures" / "skew_curves.svg").exists()
    doc = json.loads((root / "metrics" / "metrics.json").read_text())
    assert doc["config_hash"] == out["config_hash"]
    assert set(doc["cells"]) == {"auc_s_top", "f1_s", "auc_skew_bar", "auc_kurt"}
    assert sorted(doc["methods"]) == ["grad_x_input", "oracle", "random_control"]


def test_stage_without_prior_artifacts_fails(tiny_config, capsys):
    code = _run("corrupt", "--config", str(tiny_config))
    assert code != 0
    err = json.loads(capsys.readouterr().err.strip())
    assert "artifact" in err["error"] or "missing" in err["error"].lower()
    assert "generate" in err["error"] or "dataset" in err["error"]


def test_pipeline_is_deterministic(tiny_config, tmp_path, capsys):
    assert _run("pipeline", "--config", str(tiny_config), "--out",
                str(tmp_path / "out_a")) == 0
    out_a = Path(json.loads(capsys.readouterr().out.strip().splitlines()[-1])["artifacts"])
    assert _run("pipeline", "--config", str(tiny_config), "--out",
                str(tmp_path / "out_b")) == 0
    out_b = Path(json.loads(capsys.readouterr().out.strip().splitlines()[-1])["artifacts"])

    metrics_a = (out_a / "metrics" / "metrics.json").read_bytes()
    metrics_b = (out_b / "metrics" / "metrics.json").read_bytes()
    assert metrics_a == metrics_b
    for svg_a in sorted((out_a / "figures").glob("*.svg")):
        svg_b = out_b / "figures" / svg_a.name
        assert svg_a.read_bytes() == svg_b.read_bytes(), svg_a.name


def test_seed_override_changes_hash(tiny_config):
    cfg_a = load_config(tiny_config)
    cfg_b = load_config(tiny_config, {"seed": 99})
    assert cfg_a.config_hash != cfg_b.config_hash


def test_k_grid_override(tiny_config):
    cfg = load_config(tiny_config, {"k_grid": [0.1, 0.5], "include_k_1": True})
    assert cfg.k_grid == (0.1, 0.5, 1.0)


def test_mixed_hash_inputs_refused(tiny_config, capsys):
    assert _run("generate", "--config", str(tiny_config)) == 0
    capsys.readouterr()
    cfg_new = load_config(tiny_config, {"seed": 99})
    pipeline.stage_generate(cfg_new)
    # overwrite the new run's dataset with the old seed's artifacts
    cfg_old = load_config(tiny_config)
    old_root = cfg_old.run_dir
    new_root = cfg_new.run_dir
    for name in ("data.npz", "meta.json"):
        (new_root / "dataset" / name).write_bytes((old_root / "dataset" / name).read_bytes())
    with pytest.raises(ArtifactError, match="hash"):
        pipeline.stage_train(cfg_new)
    # --force accepts them
    pipeline.stage_train(cfg_new, force=True)


def test_unknown_method_rejected(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text(TINY_CONFIG.replace('name = "oracle"', 'name = "lime"'))
    with pytest.raises(ConfigurationError, match="lime"):
        load_config(path)


def test_methods_required(tmp_path):
    path = tmp_path / "bad.toml"
    body = TINY_CONFIG.split("[[methods]]")[0]
    path.write_text(body)
    with pytest.raises(ConfigurationError, match="methods"):
        load_config(path)


def test_missing_csv_rejected(tmp_path):
    path = tmp_path / "bad.toml"
    body = TINY_CONFIG.replace('kind = "synthetic"',
                               'kind = "csv"\npath = "does_not_exist.csv"')
    path.write_text(body)
    with pytest.raises(ConfigurationError, match="does_not_exist"):
        load_config(path)


def test_gradient_methods_rejected_for_external_model(tmp_path):
    body = TINY_CONFIG.replace('epochs = 6', 'command = ["python3", "stub.py"]')
    body = body.replace('kind = "synthetic"', 'kind = "synthetic"')
    body = body.replace("[model]\n", '[model]\nkind = "external"\n')
    path = tmp_path / "bad.toml"
    path.write_text(body)
    with pytest.raises(ConfigurationError, match="grad_x_input"):
        load_config(path)


def test_unknown_config_key_rejected(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text(TINY_CONFIG + "\n[dataset]\nwhatever = 3\n")
    with pytest.raises(Exception):
        load_config(path)


def test_env_var_sets_output_root(tiny_config, monkeypatch, tmp_path):
    monkeypatch.setenv("DROPBENCH_OUT", str(tmp_path / "env_out"))
    cfg = load_config(tiny_config)
    assert str(cfg.output_root) == str(tmp_path / "env_out")


def test_config_missing_file_is_error():
    with pytest.raises(ConfigurationError, match="not found"):
        load_config("/nonexistent/config.toml")


def test_jobs_flag_matches_single_process(tiny_config, tmp_path, capsys):
    assert _run("pipeline", "--config", str(tiny_config), "--out",
                str(tmp_path / "out_j1"), "--jobs", "1") == 0
    out_1 = Path(json.loads(capsys.readouterr().out.strip().splitlines()[-1])["artifacts"])
    assert _run("pipeline", "--config", str(tiny_config), "--out",
                str(tmp_path / "out_j2"), "--jobs", "2") == 0
    out_2 = Path(json.loads(capsys.readouterr().out.strip().splitlines()[-1])["artifacts"])
    a = (out_1 / "metrics" / "metrics.json").read_bytes()
    b = (out_2 / "metrics" / "metrics.json").read_bytes()
    assert a == b
