import json

import pytest

from predetect.cli import main
from predetect.config import ExperimentConfig, save_config
from predetect.scenes import load_dataset


@pytest.fixture
def tiny_config_path(tmp_path):
    config = ExperimentConfig.from_dict(
        {
            "mode": "p2d",
            "scene": {"cells_x": 16, "cells_y": 16, "object_count_range": [1, 2],
                      "noise_sigma": 0.1},
            "model": {"feature_channels": 16, "num_queries": 8, "n_heads": 2,
                      "n_points": 2, "head_hidden": 16},
            "training": {"epochs": 1, "batch_size": 4, "n_train_episodes": 8},
            "eval": {"n_eval_episodes": 4},
        }
    )
    path = tmp_path / "config.json"
    save_config(config, path)
    return path


class TestGenerate:
    def test_generate_writes_dataset(self, tiny_config_path, tmp_path):
        out = tmp_path / "episodes"
        code = main([
            "generate", "--config", str(tiny_config_path), "--episodes", "5",
            "--out", str(out),
        ])
        assert code == 0
        assert len(load_dataset(out)) == 5

    def test_bad_override_fails_nonzero(self, tiny_config_path, tmp_path, capsys):
        code = main([
            "generate", "--config", str(tiny_config_path), "--episodes", "2",
            "--out", str(tmp_path / "x"), "-o", "scene.boost=1",
        ])
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestTrainEvalVisualize:
    def test_full_cli_workflow(self, tiny_config_path, tmp_path):
        data = tmp_path / "episodes"
        assert main([
            "generate", "--config", str(tiny_config_path), "--episodes", "8",
            "--out", str(data),
        ]) == 0

        ckpt = tmp_path / "run" / "model.pt"
        assert main([
            "train", "--config", str(tiny_config_path), "--data", str(data),
            "--out", str(ckpt), "--quiet",
        ]) == 0
        assert ckpt.exists()
        assert ckpt.with_suffix(".log.jsonl").exists()

        metrics = tmp_path / "metrics.json"
        assert main([
            "eval", "--checkpoint", str(ckpt), "--data", str(data),
            "--out", str(metrics),
        ]) == 0
        payload = json.loads(metrics.read_text())
        assert "detection" in payload and "prediction" in payload
        assert 0.0 <= payload["detection"]["mAP"] <= 1.0

        panels = tmp_path / "panels"
        assert main([
            "visualize", "--checkpoint", str(ckpt), "--data", str(data),
            "--episodes", "0", "1", "--out", str(panels),
        ]) == 0
        assert (panels / "episode_0000.png").exists()
        assert (panels / "episode_0001.png").exists()

        curve = tmp_path / "loss.png"
        assert main([
            "plot", "--log", str(ckpt.with_suffix(".log.jsonl")), "--out", str(curve),
        ]) == 0
        assert curve.exists()

    def test_eval_missing_checkpoint_fails(self, tmp_path):
        code = main(["eval", "--checkpoint", str(tmp_path / "none.pt")])
        assert code == 1


class TestAblate:
    def test_module_table_single_seed(self, tiny_config_path, tmp_path):
        out = tmp_path / "ablation"
        code = main([
            "ablate", "--config", str(tiny_config_path), "--tables", "loss_weight",
            "--seeds", "0", "--out", str(out), "--quiet",
        ])
        assert code == 0
        rows = [json.loads(l) for l in (out / "ablation_rows.jsonl").read_text().splitlines()]
        assert len(rows) == 3  # three loss weights x one seed
        summary = json.loads((out / "ablation_summary.json").read_text())
        assert {r["lambda_pred"] for r in summary["loss_weight"]} == {0.1, 0.3, 0.5}
