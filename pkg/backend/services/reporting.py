"""
Reporting - Curves, metric tables and cross-validation summaries
Every plot is written next to a JSON-lines sidecar holding the exact plotted
points; tables and summaries are pure functions of their inputs.
"""

import io
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator  # noqa: E402

from .augmentation import contact_sheet, grid_shape  # noqa: E402
from .data_core import save_image  # noqa: E402
from .errors import EmptyInput, InputMismatch, IoError  # noqa: E402
from .metrics import UNDEFINED, MetricsReport, MetricValue  # noqa: E402
from .trainer import CrossValReport, EpochRecord, Hyperparams, TrainingRun  # noqa: E402

logger = logging.getLogger(__name__)

plt.rcParams["svg.hashsalt"] = "egglab"

SERIES_NAMES = ("train_accuracy", "val_accuracy", "train_loss", "val_loss")
TABLE_COLUMNS = ["Model", "Phase", "AUC", "Accuracy", "Recall", "Specificity", "Precision"]
PHASES = ("training", "testing")

DISPLAY_NAMES = {
    "vgg16": "VGG16",
    "resnet50": "ResNet50",
    "inceptionnet": "InceptionNet",
    "mobilenet": "MobileNet",
    "reference": "ReferenceCNN",
}


class CurveSeries(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    points: Tuple[Tuple[int, float], ...]

    @model_validator(mode="after")
    def _check_points(self) -> "CurveSeries":
        if self.name not in SERIES_NAMES:
            raise ValueError(f"unknown curve series '{self.name}'")
        epochs = [e for e, _ in self.points]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError(f"{self.name}: epochs must increase strictly")
        if not all(math.isfinite(v) for _, v in self.points):
            raise ValueError(f"{self.name}: values must be finite")
        return self


class TableRow(BaseModel):
    """One Model x Phase line of the metrics table"""

    model_config = ConfigDict(frozen=True)

    model_name: str
    phase: Literal["training", "testing"]
    auc: MetricValue
    accuracy: MetricValue
    recall: MetricValue
    specificity: MetricValue
    precision: MetricValue

    @property
    def values(self) -> Tuple[MetricValue, ...]:
        return (self.auc, self.accuracy, self.recall, self.specificity, self.precision)


def display_name(backbone: str) -> str:
    return DISPLAY_NAMES.get(backbone, backbone)


def _write_text(text: str, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}") from e
    return path


# Curves


def curve_series(history: Sequence[EpochRecord]) -> List[CurveSeries]:
    return [
        CurveSeries(name=name, points=tuple((r.epoch, float(getattr(r, name))) for r in history))
        for name in SERIES_NAMES
    ]


def curves_stem(run: TrainingRun) -> str:
    suffix = f"fold{run.fold_index}" if run.fold_index is not None else "final"
    return f"curves_{run.backbone}_{suffix}"


def emit_curves(run: TrainingRun, out_dir: Union[str, Path]) -> List[Path]:
    """
    Plot accuracy and loss curves for one run

    Args:
        run: Training run with a nonempty history
        out_dir: Reports directory

    Returns:
        Paths of the .png, .svg and .jsonl sidecar files

    Raises:
        EmptyInput: Run has no history
        IoError: Output directory not writable
    """
    if not run.history:
        raise EmptyInput(f"{run.backbone} fold {run.fold_index}: no epochs to plot")
    out_dir = Path(out_dir)
    stem = curves_stem(run)
    series = {s.name: s for s in curve_series(run.history)}

    fig, (acc_ax, loss_ax) = plt.subplots(1, 2, figsize=(10, 4))
    for ax, kind in ((acc_ax, "accuracy"), (loss_ax, "loss")):
        for phase in ("train", "val"):
            points = series[f"{phase}_{kind}"].points
            ax.plot([e for e, _ in points], [v for _, v in points], marker="o", markersize=3, label=f"{phase} {kind}")
        ax.set_xlabel("epoch")
        ax.set_ylabel(kind)
        ax.grid(alpha=0.3)
        ax.legend()
    acc_ax.set_ylim(0.0, 1.05)
    title = f"{display_name(run.backbone)}" + (f" fold {run.fold_index}" if run.fold_index is not None else "")
    fig.suptitle(title)
    fig.tight_layout()

    paths = [out_dir / f"{stem}.png", out_dir / f"{stem}.svg"]
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        fig.savefig(paths[0], dpi=100, metadata={"Software": None})
        fig.savefig(paths[1], metadata={"Date": None})
    except OSError as e:
        raise IoError(f"Cannot write curves to {out_dir}: {e}") from e
    finally:
        plt.close(fig)

    sidecar = _write_text("".join(r.model_dump_json() + "\n" for r in run.history), out_dir / f"{stem}.jsonl")
    return paths + [sidecar]


def read_curve_sidecar(path: Union[str, Path]) -> List[EpochRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [EpochRecord.model_validate_json(line) for line in lines if line.strip()]


# Tables


def _csv_cell(value: MetricValue) -> str:
    if not value.defined:
        return "NaN"
    text = repr(float(value.value))
    return text[:-2] if text.endswith(".0") else text


def _parse_cell(text: str) -> MetricValue:
    if text == "NaN":
        return UNDEFINED
    try:
        return MetricValue(value=float(text))
    except ValueError as e:
        raise InputMismatch(f"Not a metric cell: '{text}'") from e


def _markdown(header: Sequence[str], body: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(cells) + " |" for cells in body]
    return "\n".join(lines) + "\n"


def emit_table(rows: Sequence[TableRow], format: str = "markdown") -> str:
    """
    Render metric rows as a markdown or CSV table

    Markdown cells use two decimals with trailing zeros dropped; CSV cells
    carry the shortest exact representation so parse_table inverts them.
    Undefined values render as NaN in both.
    """
    if not rows:
        raise EmptyInput("Metric table needs at least one row")
    if format == "markdown":
        body = [[row.model_name, row.phase] + [v.render() for v in row.values] for row in rows]
        return _markdown(TABLE_COLUMNS, body)
    if format == "csv":
        frame = pd.DataFrame(
            [[row.model_name, row.phase] + [_csv_cell(v) for v in row.values] for row in rows],
            columns=TABLE_COLUMNS,
        )
        return frame.to_csv(index=False, lineterminator="\n")
    raise InputMismatch(f"Unknown table format '{format}'")


def parse_table(csv_text: str) -> List[TableRow]:
    """Inverse of emit_table(rows, 'csv')"""
    frame = pd.read_csv(io.StringIO(csv_text), dtype=str, keep_default_na=False)
    if list(frame.columns) != TABLE_COLUMNS:
        raise InputMismatch(f"Unexpected table columns {list(frame.columns)}")
    rows = []
    for record in frame.to_dict(orient="records"):
        try:
            rows.append(TableRow(
                model_name=record["Model"],
                phase=record["Phase"],
                auc=_parse_cell(record["AUC"]),
                accuracy=_parse_cell(record["Accuracy"]),
                recall=_parse_cell(record["Recall"]),
                specificity=_parse_cell(record["Specificity"]),
                precision=_parse_cell(record["Precision"]),
            ))
        except ValidationError as e:
            raise InputMismatch(f"Bad table row {record}: {e}") from e
    return rows


def table_row(model_name: str, phase: str, report: MetricsReport) -> TableRow:
    return TableRow(
        model_name=model_name,
        phase=phase,
        auc=report.auc,
        accuracy=report.accuracy,
        recall=report.recall,
        specificity=report.specificity,
        precision=report.precision,
    )


def rows_from_metrics(
    backbone: str,
    training: Optional[MetricsReport],
    testing: Optional[MetricsReport]
) -> List[TableRow]:
    """Training and testing rows for one backbone; a missing phase is skipped"""
    rows = []
    for phase, report in zip(PHASES, (training, testing)):
        if report is not None:
            rows.append(table_row(display_name(backbone), phase, report))
    return rows


# Summaries


def _percent(value: Optional[float]) -> str:
    return "NaN" if value is None else f"{value * 100:.2f}%"


def emit_crossval_summary(report: CrossValReport) -> str:
    """Per-fold accuracies then mean and std as percentages"""
    lines = [f"{display_name(report.backbone)} {report.k}-fold cross-validation"]
    for index, value in enumerate(report.fold_val_accuracies):
        flag = " (diverged)" if index in report.diverged_folds else ""
        lines.append(f"fold {index}: {_percent(value)}{flag}")
    lines.append(f"mean {_percent(report.mean_accuracy)}")
    lines.append(f"std {_percent(report.std_accuracy)}")
    return "\n".join(lines) + "\n"


def emit_tuning_table(table: Sequence[Tuple[Hyperparams, MetricValue]], format: str = "markdown") -> str:
    """Grid points with their cross-validation mean accuracy"""
    if not table:
        raise EmptyInput("Tuning table needs at least one grid point")
    header = ["learning_rate", "batch_size", "epochs", "optimizer", "mean_accuracy"]
    body = [
        [repr(hp.learning_rate), str(hp.batch_size), str(hp.epochs), hp.optimizer, _percent(mean.value)]
        for hp, mean in table
    ]
    if format == "markdown":
        return _markdown(header, body)
    if format == "csv":
        return pd.DataFrame(body, columns=header).to_csv(index=False, lineterminator="\n")
    raise InputMismatch(f"Unknown table format '{format}'")


def emit_ablation_summary(results: Dict[str, CrossValReport]) -> str:
    lines = ["augmentation ablation (cross-validation mean accuracy)"]
    for variant, report in results.items():
        lines.append(f"{variant}: mean {_percent(report.mean_accuracy)} std {_percent(report.std_accuracy)}")
    return "\n".join(lines) + "\n"


def emit_contact_sheet(tiles: Sequence[np.ndarray], path: Union[str, Path], cols: Optional[int] = None) -> Path:
    """Write tiles as one grid image (most square layout unless cols is given)"""
    if not tiles:
        raise EmptyInput("Contact sheet needs at least one tile")
    cols = cols or grid_shape(len(tiles))[1]
    path = Path(path)
    save_image(contact_sheet(tiles, cols), path)
    return path


def write_report(text: str, path: Union[str, Path]) -> Path:
    return _write_text(text, Path(path))


def write_metrics(report: MetricsReport, path: Union[str, Path], backbone: str, split: str) -> Path:
    stamped = report.model_copy(update={"backbone": backbone, "split": split})
    return _write_text(json.dumps(stamped.model_dump(mode="json"), indent=2) + "\n", Path(path))


def read_metrics(path: Union[str, Path]) -> MetricsReport:
    try:
        return MetricsReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except ValidationError as e:
        raise InputMismatch(f"Malformed metrics file {path}: {e}") from e
