"""
Tests for curves, metric tables and summaries
"""

import json

import numpy as np
import pytest
from pydantic import ValidationError

from backend.services.data_core import load_image
from backend.services.errors import EmptyInput, InputMismatch
from backend.services.metrics import UNDEFINED, MetricValue, evaluate
from backend.services.reporting import (
    CurveSeries,
    TableRow,
    emit_ablation_summary,
    emit_contact_sheet,
    emit_crossval_summary,
    emit_curves,
    emit_table,
    emit_tuning_table,
    parse_table,
    read_curve_sidecar,
    read_metrics,
    rows_from_metrics,
    write_metrics,
)
from backend.services.trainer import CrossValReport, EpochRecord, Hyperparams, TrainingRun

NAN = None

# Published training/testing results for the four backbones
TABLE_ONE = [
    ("VGG16", "training", (1, 1, 1, 1, 1)),
    ("VGG16", "testing", (0.78, 0.98, NAN, 0.98, 0)),
    ("ResNet50", "training", (1, 1, 1, 1, 1)),
    ("ResNet50", "testing", (0.8, 0.98, NAN, NAN, NAN)),
    ("InceptionNet", "training", (1, 1, 1, 1, 1)),
    ("InceptionNet", "testing", (0.98, 0.98, 1, 0.96, 0.96)),
    ("MobileNet", "training", (1, 1, 1, 1, 1)),
    ("MobileNet", "testing", (0.84, 0.98, NAN, 0.98, NAN)),
]

TABLE_ONE_MARKDOWN = (
    "| Model | Phase | AUC | Accuracy | Recall | Specificity | Precision |\n"
    "|---|---|---|---|---|---|---|\n"
    "| VGG16 | training | 1 | 1 | 1 | 1 | 1 |\n"
    "| VGG16 | testing | 0.78 | 0.98 | NaN | 0.98 | 0 |\n"
    "| ResNet50 | training | 1 | 1 | 1 | 1 | 1 |\n"
    "| ResNet50 | testing | 0.8 | 0.98 | NaN | NaN | NaN |\n"
    "| InceptionNet | training | 1 | 1 | 1 | 1 | 1 |\n"
    "| InceptionNet | testing | 0.98 | 0.98 | 1 | 0.96 | 0.96 |\n"
    "| MobileNet | training | 1 | 1 | 1 | 1 | 1 |\n"
    "| MobileNet | testing | 0.84 | 0.98 | NaN | 0.98 | NaN |\n"
)


def _row(model, phase, values):
    fields = ("auc", "accuracy", "recall", "specificity", "precision")
    metrics = {name: MetricValue(value=None if v is None else float(v)) for name, v in zip(fields, values)}
    return TableRow(model_name=model, phase=phase, **metrics)


@pytest.fixture
def table_one():
    return [_row(*entry) for entry in TABLE_ONE]


def _history(values):
    return [
        EpochRecord(epoch=i + 1, train_loss=loss, train_accuracy=acc, val_loss=loss, val_accuracy=acc)
        for i, (loss, acc) in enumerate(values)
    ]


def _run(history, fold_index=0, backbone="vgg16", **kwargs):
    return TrainingRun(
        backbone=backbone,
        architecture=backbone,
        fold_index=fold_index,
        hyperparams=Hyperparams(epochs=len(history) or 1),
        history=history,
        **kwargs,
    )


def _crossval(accuracies, backbone="vgg16"):
    runs = [_run(_history([(0.1, acc)]), fold_index=i, backbone=backbone) for i, acc in enumerate(accuracies)]
    return CrossValReport.from_runs(backbone, runs)


class TestTable:
    """Test metric table rendering"""

    def test_markdown_exact(self, table_one):
        """Test the four-backbone table renders to the exact markdown"""
        assert emit_table(table_one) == TABLE_ONE_MARKDOWN

    def test_csv_round_trip(self, table_one):
        """Test CSV output parses back to the same rows"""
        assert parse_table(emit_table(table_one, "csv")) == table_one

    def test_csv_keeps_full_precision(self):
        """Test CSV cells keep full precision"""
        row = _row("MobileNet", "testing", (0.123456789, 0.9765, None, 1.0, 0.0))
        csv_text = emit_table([row], "csv")

        assert csv_text.splitlines()[1] == "MobileNet,testing,0.123456789,0.9765,NaN,1,0"
        assert parse_table(csv_text) == [row]

    def test_empty(self):
        """Test an empty table is rejected"""
        with pytest.raises(EmptyInput):
            emit_table([])

    def test_unknown_format(self, table_one):
        """Test an unsupported table format is rejected"""
        with pytest.raises(InputMismatch):
            emit_table(table_one, "latex")

    def test_bad_columns(self):
        """Test a CSV with missing columns is rejected"""
        with pytest.raises(InputMismatch):
            parse_table("Model,Phase\nVGG16,testing\n")

    def test_bad_phase(self):
        """Test rows only take the training and testing phases"""
        with pytest.raises(ValidationError):
            _row("VGG16", "validation", (1, 1, 1, 1, 1))

    def test_parse_bad_phase(self, table_one):
        """Test a parsed row with an unknown phase reports the row"""
        csv_text = emit_table(table_one[:1], "csv").replace("training", "validation")
        with pytest.raises(InputMismatch):
            parse_table(csv_text)

    def test_rows_from_metrics(self):
        """Test metric reports become display rows"""
        testing = evaluate([1, 0, 0], [1, 0, 1], [0.9, 0.2, 0.6])
        rows = rows_from_metrics("inceptionnet", None, testing)

        assert len(rows) == 1
        assert rows[0].model_name == "InceptionNet"
        assert rows[0].phase == "testing"
        assert rows[0].precision == MetricValue(value=0.5)


class TestCrossValSummary:
    """Test the k-fold summary text"""

    def test_summary(self):
        """Test per-fold lines, mean and standard deviation"""
        text = emit_crossval_summary(_crossval([0.98, 0.98, 0.98, 0.985, 0.9765]))
        lines = text.splitlines()

        assert lines[0] == "VGG16 5-fold cross-validation"
        assert lines[1:6] == [
            "fold 0: 98.00%", "fold 1: 98.00%", "fold 2: 98.00%", "fold 3: 98.50%", "fold 4: 97.65%",
        ]
        assert lines[6] == "mean 98.03%"
        assert lines[7] == "std 0.27%"
        assert text.endswith("\n")

    def test_constant_folds(self):
        """Test identical folds give a zero deviation"""
        assert emit_crossval_summary(_crossval([0.9] * 3)).splitlines()[-1] == "std 0.00%"

    def test_diverged_fold(self):
        """Test a diverged fold shows NaN and poisons the mean"""
        runs = [
            _run(_history([(0.1, 0.9)]), fold_index=0),
            _run(_history([(0.1, 0.9)]), fold_index=1, diverged=True, stop_reason="loss is nan"),
        ]
        lines = emit_crossval_summary(CrossValReport.from_runs("vgg16", runs)).splitlines()

        assert lines[2] == "fold 1: NaN (diverged)"
        assert lines[3] == "mean NaN"


class TestCurves:
    """Test curve plots and their sidecars"""

    def test_files_and_sidecar(self, tmp_path):
        """Test PNG, SVG and JSONL sidecar are written"""
        run = _run(_history([(0.7, 0.5), (0.5, 0.7), (0.3, 0.9)]), fold_index=2)

        paths = emit_curves(run, tmp_path)

        assert [p.name for p in paths] == ["curves_vgg16_fold2.png", "curves_vgg16_fold2.svg", "curves_vgg16_fold2.jsonl"]
        assert all(p.stat().st_size > 0 for p in paths)
        assert read_curve_sidecar(paths[2]) == run.history

    def test_final_run_stem(self, tmp_path):
        """Test the final run uses the final file stem"""
        run = _run(_history([(0.5, 0.5)]), fold_index=None)
        assert emit_curves(run, tmp_path)[0].name == "curves_vgg16_final.png"

    def test_constant_history(self, tmp_path):
        """Test a flat history still plots"""
        run = _run(_history([(0.4, 0.6)] * 4))
        paths = emit_curves(run, tmp_path)
        assert read_curve_sidecar(paths[2]) == run.history

    def test_reproducible_bytes(self, tmp_path):
        """Test the same history gives byte-identical files"""
        run = _run(_history([(0.6, 0.6), (0.4, 0.8)]))
        first = emit_curves(run, tmp_path / "a")
        second = emit_curves(run, tmp_path / "b")
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()

    def test_empty_history(self, tmp_path):
        """Test a run without epochs cannot be plotted"""
        run = _run([], diverged=True)
        with pytest.raises(EmptyInput):
            emit_curves(run, tmp_path)

    def test_series_validation(self):
        """Test series need increasing epochs and finite values"""
        with pytest.raises(ValidationError):
            CurveSeries(name="val_accuracy", points=((2, 0.5), (1, 0.6)))
        with pytest.raises(ValidationError):
            CurveSeries(name="val_accuracy", points=((1, float("inf")),))
        with pytest.raises(ValidationError):
            CurveSeries(name="auc", points=())


class TestOtherReports:
    """Test tuning, ablation, metrics files and contact sheets"""

    def test_tuning_table(self):
        """Test the tuning table lists every grid point"""
        table = [
            (Hyperparams(learning_rate=0.001, batch_size=16, epochs=20), MetricValue(value=0.95)),
            (Hyperparams(learning_rate=0.0, batch_size=16, epochs=20), UNDEFINED),
        ]
        lines = emit_tuning_table(table).splitlines()

        assert lines[0] == "| learning_rate | batch_size | epochs | optimizer | mean_accuracy |"
        assert lines[2] == "| 0.001 | 16 | 20 | sgd_momentum | 95.00% |"
        assert lines[3] == "| 0.0 | 16 | 20 | sgd_momentum | NaN |"

    def test_ablation_summary(self):
        """Test one line per ablation variant"""
        text = emit_ablation_summary({"none": _crossval([0.8, 0.9]), "rotation": _crossval([0.9, 0.9])})
        assert text.splitlines()[1:] == ["none: mean 85.00% std 5.00%", "rotation: mean 90.00% std 0.00%"]

    def test_metrics_file_round_trip(self, tmp_path):
        """Test a metrics file restores the same report"""
        report = evaluate([1, 1, 0, 0], [1, 0, 0, 0], [0.8, 0.4, 0.3, 0.1])
        path = write_metrics(report, tmp_path / "metrics.json", "mobilenet", "test")

        restored = read_metrics(path)

        assert restored == report.model_copy(update={"backbone": "mobilenet", "split": "test"})
        assert json.loads(path.read_text())["precision"] == {"value": 1.0, "defined": True}

    def test_malformed_metrics_file(self, tmp_path):
        """Test a metrics file with a negative count is rejected"""
        path = tmp_path / "metrics.json"
        path.write_text('{"n": 1, "cm": {"tp": -1, "tn": 0, "fp": 0, "fn": 0}}')
        with pytest.raises(InputMismatch):
            read_metrics(path)

    def test_contact_sheet(self, tmp_path, rng):
        """Test tiles are laid out on a padded grid"""
        tiles = [rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8) for _ in range(9)]
        path = emit_contact_sheet(tiles, tmp_path / "preview.png")

        sheet = load_image(path)
        assert sheet.shape == (3 * 8 + 4, 3 * 8 + 4, 3)
        assert np.array_equal(sheet[:8, :8], tiles[0])
