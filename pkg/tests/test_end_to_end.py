"""
Full synthetic pipeline run with the reference CNN
"""

import json
from pathlib import Path

import pytest

from backend.services.pipeline_engine import PipelineEngine
from backend.services.trainer import load_crossval_report
from config.config import load_run_config

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "synthetic_reference.yaml"


@pytest.mark.slow
class TestSyntheticPipeline:
    """prepare, crossval, train, evaluate and report on 200 synthetic images"""

    def test_pipeline(self, tmp_path):
        """Test the full command sequence reaches high accuracy on synthetic eggs"""
        config = load_run_config(CONFIG, out_dir=str(tmp_path / "out"), offline=True)
        engine = PipelineEngine()
        out = tmp_path / "out"

        prepared = engine.prepare(config)
        assert (prepared["n_train"], prepared["n_test"]) == (160, 40)

        crossval = engine.crossval(config)
        assert crossval["success"], crossval
        assert crossval["mean_accuracy"] >= 0.9
        assert crossval["leaked_ids"] == 0

        report = load_crossval_report(out / "runs" / "reference" / "crossval.json")
        decreasing = sum(run.history[-1].train_loss < run.history[0].train_loss for run in report.runs)
        assert decreasing >= 4

        assert engine.train(config)["success"]
        assert engine.evaluate(config)["success"]
        metrics = json.loads((out / "runs" / "reference" / "metrics.json").read_text())
        assert metrics["accuracy"]["value"] >= 0.9

        assert engine.report(config)["success"]
        assert (out / "reports" / "table1.md").is_file()
        assert (out / "reports" / "crossval_reference.txt").read_text().startswith("ReferenceCNN 5-fold")
