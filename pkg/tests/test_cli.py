import json

import numpy as np
import pytest

from podn.cli import build_parser, main
from utils.data_processing import load_dataset

QUICK = {
    "data": {"n_clusters": 5, "dim": 6, "per_cluster": 40, "separation": 8.0, "known_count": 3,
             "test_fraction": 0.25},
    "model": {"hidden_dims": [16]},
    "train": {"epochs": 15, "batch_size": 16},
    "incremental": {"finetune_epochs": 5},
}


@pytest.fixture
def quick_file(tmp_path):
    path = tmp_path / "quick.json"
    path.write_text(json.dumps(QUICK), encoding="utf-8")
    return path


def test_parser_flags():
    args = build_parser().parse_args(["run", "--method", "podn", "--eps-mu", "0.3", "--memory-k", "4"])
    assert (args.method, args.eps_mu, args.memory_k) == ("podn", 0.3, 4)
    assert args.config == "configuration.ini" and args.w2 is None
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "--method", "svm"])


def test_generate_writes_a_loadable_csv(tmp_path):
    out = tmp_path / "clusters.csv"
    assert main(["generate", str(out), "--clusters", "3", "--dim", "4", "--per-cluster", "20", "--quiet"]) == 0
    data = load_dataset(out)
    assert len(data) == 60 and data.feature_dim == 4
    assert data.label_registry == ["c00", "c01", "c02"]


def test_generate_uses_the_configured_seed(tmp_path):
    settings = tmp_path / "seeded.json"
    settings.write_text(json.dumps({"experiment": {"seed": 7}}), encoding="utf-8")
    flags = ["--config", str(settings), "--clusters", "3", "--dim", "4", "--per-cluster", "20", "--quiet"]
    assert main(["generate", str(tmp_path / "a.csv"), *flags]) == 0
    assert main(["generate", str(tmp_path / "b.csv"), "--seed", "7", *flags]) == 0
    assert main(["generate", str(tmp_path / "c.csv"), "--seed", "0", *flags]) == 0
    configured, explicit, other = (load_dataset(tmp_path / f"{n}.csv") for n in "abc")
    np.testing.assert_array_equal(configured.features, explicit.features)
    assert not np.array_equal(configured.features, other.features)


def test_run_prints_metrics_and_writes_files(quick_file, tmp_path, capsys):
    code = main(["run", "--config", str(quick_file), "--out-dir", str(tmp_path / "runs"), "--seed", "2", "--quiet"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["method"] == "podn_radius" and summary["seed"] == 2
    assert 0.0 <= summary["f1"] <= 1.0
    assert summary["run_dir"].endswith("podn_radius_seed2")
    report = json.loads((tmp_path / "runs" / "podn_radius_seed2" / "report.json").read_text(encoding="utf-8"))
    assert report["config"]["experiment"]["seed"] == 2


def test_suite_prints_summary(quick_file, tmp_path, capsys):
    code = main(["suite", "--config", str(quick_file), "--out-dir", str(tmp_path), "--seeds", "0", "1",
                 "--methods", "podn", "--db", str(tmp_path / "metrics.duckdb"), "--quiet"])
    assert code == 0
    assert "podn" in capsys.readouterr().out
    assert (tmp_path / "summary.csv").exists()
    assert (tmp_path / "metrics.duckdb").exists()


def test_errors_become_a_json_object_on_stderr(tmp_path, capsys):
    code = main(["run", "--config", str(tmp_path / "absent.ini"), "--quiet"])
    assert code == 1
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "ConfigError"
    assert "does not exist" in error["message"]


def test_split_errors_carry_the_run_context(tmp_path, capsys):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({"data": {"n_clusters": 3, "dim": 4, "per_cluster": 8, "known_count": 2}}),
                    encoding="utf-8")
    assert main(["run", "--config", str(path), "--quiet"]) == 1
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "SplitError"
    assert error["message"].startswith("podn_radius seed 0:")
