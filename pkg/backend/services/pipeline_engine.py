"""
Pipeline Engine - Orchestration layer for the fertility pipeline
Runs each stage from a RunConfig and reports the outcome as a result
dictionary carrying the process exit code
"""

import logging
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from pydantic import ValidationError
from torch.utils.data import DataLoader
from tqdm import tqdm

from config.config import RunConfig, get_settings

from .augmentation import AugmentationPolicy, identity_policy, preview_tiles
from .data_core import (
    DatasetManifest,
    ImageSample,
    PreprocessPolicy,
    Split,
    SyntheticSpec,
    assign_folds,
    fold_plan_from_manifest,
    generate_synthetic,
    ingest_directory,
    make_folds,
    preprocess,
    read_manifest,
    save_image,
    split_train_test,
    write_manifest,
)
from .errors import ConfigError, EggLabError, EmptyGrid, TrainingDiverged
from .metrics import MetricsReport, evaluate
from .model_zoo import ClassifierModel, ModelFactory, load_checkpoint, predict
from .reporting import (
    display_name,
    emit_ablation_summary,
    emit_contact_sheet,
    emit_crossval_summary,
    emit_curves,
    emit_table,
    emit_tuning_table,
    read_metrics,
    rows_from_metrics,
    write_metrics,
    write_report,
)
from .run_context import RunContext
from .trainer import (
    CandlingDataset,
    Hyperparams,
    TrainingRun,
    load_crossval_report,
    run_augmentation_ablation,
    run_cross_validation,
    train_final,
    tune_hyperparameters,
    write_run_summary,
)

logger = logging.getLogger(__name__)

BACKBONE_ORDER = ("vgg16", "resnet50", "inceptionnet", "mobilenet", "reference")
RUN_SUMMARY_FILE = "run.json"
_GRID_ALIASES = {"lr": "learning_rate", "batch": "batch_size"}


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat()


def _ok(context: RunContext, **payload) -> Dict[str, Any]:
    context.write_effective_config()
    return {"success": True, **payload, "context": context.to_dict(), "exit_code": 0, "timestamp": _timestamp()}


def _fail(error: Exception, **payload) -> Dict[str, Any]:
    exit_code = getattr(error, "exit_code", 1)
    return {
        "success": False,
        **payload,
        "error": str(error),
        "error_type": type(error).__name__,
        "exit_code": exit_code,
        "timestamp": _timestamp(),
    }


def _log_failure(command: str, error: Exception) -> None:
    if isinstance(error, EggLabError):
        logger.error("%s failed: %s", command, error)
    else:
        logger.exception("%s failed", command)


def augmentation_policy(config: RunConfig) -> AugmentationPolicy:
    augment = config.augment
    return AugmentationPolicy(
        rotation_range_deg=augment.rotation,
        x_reflection=augment.flip_x,
        y_reflection=augment.flip_y,
        shear_range_deg=augment.shear,
        scale_range=augment.scale,
        translation_range_frac=augment.translate,
        fill_value=augment.fill_value,
    )


def preprocess_policy(config: RunConfig) -> PreprocessPolicy:
    return PreprocessPolicy(
        segmentation_threshold_method=config.preprocess.threshold,
        crop_margin_fraction=config.preprocess.margin,
        target_size=config.preprocess.target_size,
    )


def synthetic_spec(config: RunConfig) -> SyntheticSpec:
    return SyntheticSpec(**config.synth.model_dump())


def model_factory(config: RunConfig) -> ModelFactory:
    settings = get_settings()
    models = config.models
    return ModelFactory(
        config.backbone,
        models.fine_tune,
        cache_dir=models.cache_dir or settings.models_cache_dir,
        offline=models.offline or settings.offline,
        fallback_to_reference=models.fallback_to_reference,
        reference_input_size=models.reference_input_size,
    )


def tuning_grid(config: RunConfig) -> List[Hyperparams]:
    """Grid points from tune.grid, each overriding the train section"""
    base = Hyperparams.from_train_config(config.train).model_dump()
    grid = []
    for point in config.tune.grid:
        overrides = {_GRID_ALIASES.get(key, key): value for key, value in point.items()}
        try:
            grid.append(Hyperparams.model_validate({**base, **overrides}))
        except ValidationError as e:
            raise ConfigError(f"Invalid tuning grid point {point}: {e}") from e
    return grid


class PipelineEngine:
    """Runs pipeline stages and converts errors into result dictionaries"""

    def __init__(self):
        """Initialize pipeline engine"""
        self.settings = get_settings()

    def _context(self, config: RunConfig, command: str) -> RunContext:
        return RunContext(config, command)

    def _manifest(self, context: RunContext) -> DatasetManifest:
        return read_manifest(context.require(context.manifest_path))

    def synth(self, config: RunConfig) -> Dict[str, Any]:
        """
        Generate a synthetic candling dataset

        Args:
            config: Run configuration (synth section)

        Returns:
            Result with the dataset manifest path and class counts
        """
        try:
            context = self._context(config, "synth")
            manifest = generate_synthetic(synthetic_spec(config), context.synthetic_dir)
            path = write_manifest(manifest, context.synthetic_dir / "manifest.jsonl")
            return _ok(context, manifest=str(path), class_counts=manifest.class_counts)
        except Exception as e:
            _log_failure("synth", e)
            return _fail(e)

    def prepare(self, config: RunConfig) -> Dict[str, Any]:
        """
        Ingest, preprocess, split and fold the dataset

        Synthetic mode renders the dataset first; directory mode reads
        data.root. Preprocessed images land in preprocessed/ and the manifest
        references them.
        """
        try:
            context = self._context(config, "prepare")
            if config.data.source == "synthetic":
                raw = generate_synthetic(synthetic_spec(config), context.synthetic_dir)
            else:
                if not config.data.root:
                    raise ConfigError("data.root is required when data.source is 'directory'")
                raw = ingest_directory(config.data.root, config.data.labeling)

            policy = preprocess_policy(config)
            samples = []
            for sample in tqdm(raw.samples, desc="preprocess", disable=not logger.isEnabledFor(logging.INFO)):
                target = context.preprocessed_dir / f"{sample.id}.png"
                save_image(preprocess(sample.load_pixels(), policy), target)
                samples.append(ImageSample(id=sample.id, path=str(target), label=sample.label))
            manifest = DatasetManifest(samples=tuple(samples))

            manifest = split_train_test(manifest, config.data.train_fraction, config.data.seed, config.data.stratified)
            plan = make_folds(manifest, config.data.k, config.data.seed, config.data.stratified)
            manifest = assign_folds(manifest, plan)
            path = context.record_artifact("manifest", write_manifest(manifest, context.manifest_path))
            return _ok(
                context,
                manifest=str(path),
                n_samples=len(manifest.samples),
                n_train=len(manifest.ids_in(Split.TRAIN)),
                n_test=len(manifest.ids_in(Split.TEST)),
                class_counts=manifest.class_counts,
            )
        except Exception as e:
            _log_failure("prepare", e)
            return _fail(e)

    def augment_preview(self, config: RunConfig, n: int = 9, identity: bool = False) -> Dict[str, Any]:
        """Render n augmented variants of the first train image as a contact sheet"""
        try:
            if n <= 0:
                raise ConfigError(f"Preview count must be positive, got {n}")
            context = self._context(config, "augment-preview")
            manifest = self._manifest(context)
            train_ids = manifest.ids_in(Split.TRAIN) or manifest.ids
            image = manifest.sample(train_ids[0]).load_pixels()
            policy = identity_policy(config.augment.fill_value) if identity else augmentation_policy(config)
            tiles = preview_tiles(image, policy, n, config.augment.seed)
            path = emit_contact_sheet(tiles, context.reports_dir / "augment_preview.png")
            return _ok(context, preview=str(path), sample_id=train_ids[0], tiles=n)
        except Exception as e:
            _log_failure("augment-preview", e)
            return _fail(e)

    def train(self, config: RunConfig) -> Dict[str, Any]:
        """Train one model on the whole train split, validating on the test split"""
        try:
            context = self._context(config, "train")
            manifest = self._manifest(context)
            run, _ = train_final(
                manifest,
                config.backbone,
                augmentation_policy(config),
                Hyperparams.from_train_config(config.train),
                model_factory(config),
                run_dir=context.final_dir(),
                device=self.settings.device,
                deterministic=self.settings.deterministic,
            )
            summary = write_run_summary(run, context.final_dir() / RUN_SUMMARY_FILE)
            return _ok(
                context,
                checkpoint=run.final_model,
                run=str(summary),
                architecture=run.architecture,
                epochs=len(run.history),
                final_val_accuracy=run.final_val_accuracy,
                leaked_ids=run.leaked_ids,
            )
        except Exception as e:
            _log_failure("train", e)
            return _fail(e)

    def crossval(self, config: RunConfig) -> Dict[str, Any]:
        """k-fold cross-validation over the train split"""
        try:
            context = self._context(config, "crossval")
            manifest = self._manifest(context)
            report = run_cross_validation(
                manifest,
                config.backbone,
                fold_plan_from_manifest(manifest, config.data.stratified),
                augmentation_policy(config),
                Hyperparams.from_train_config(config.train),
                model_factory(config),
                out_dir=context.backbone_dir(),
                workers=config.train.workers,
                skip_undefined=config.train.skip_undefined,
                device=self.settings.device,
                deterministic=self.settings.deterministic,
            )
            payload = dict(
                crossval=str(context.crossval_path()),
                fold_val_accuracies=report.fold_val_accuracies,
                mean_accuracy=report.mean_accuracy,
                std_accuracy=report.std_accuracy,
                leaked_ids=sum(run.leaked_ids for run in report.runs),
            )
            if report.diverged_folds:
                context.write_effective_config()
                return _fail(
                    TrainingDiverged(f"{config.backbone}: folds {report.diverged_folds} diverged"),
                    diverged_folds=report.diverged_folds,
                    **payload,
                )
            return _ok(context, **payload)
        except Exception as e:
            _log_failure("crossval", e)
            return _fail(e)

    def _evaluate_split(self, model: ClassifierModel, manifest: DatasetManifest, ids: List[str]) -> MetricsReport:
        dataset = CandlingDataset(manifest, ids, tuple(model.spec.input_size), model.normalization)
        labels, predicted, scores = [], [], []
        for images, _, positions in DataLoader(dataset, batch_size=32, shuffle=False):
            batch_ids = [dataset.ids[p] for p in positions.tolist()]
            batch = predict(model, images, batch_ids)
            labels.extend(manifest.labels_for(batch.ids))
            predicted.extend(batch.predicted)
            scores.extend(batch.scores)
        return evaluate(labels, predicted, scores)

    def evaluate(self, config: RunConfig, checkpoint: Optional[str] = None) -> Dict[str, Any]:
        """Score a checkpoint on the test and train splits and write metrics files"""
        try:
            context = self._context(config, "evaluate")
            manifest = self._manifest(context)
            model = load_checkpoint(context.require(checkpoint or context.checkpoint_path()))
            model.to(self.settings.device)

            written = {}
            for split, name in ((Split.TEST, "test"), (Split.TRAIN, "train")):
                ids = manifest.ids_in(split)
                if not ids:
                    continue
                report = self._evaluate_split(model, manifest, ids)
                path = write_metrics(report, context.metrics_path(name), config.backbone, name)
                written[name] = {"path": str(path), "accuracy": report.accuracy.value}
            return _ok(context, metrics=written)
        except Exception as e:
            _log_failure("evaluate", e)
            return _fail(e)

    def report(self, config: RunConfig) -> Dict[str, Any]:
        """
        Write curves, the metrics table and cross-validation summaries

        Every backbone with artifacts under runs/ is included; the configured
        backbone must have at least a crossval report or test metrics.
        """
        try:
            context = self._context(config, "report")
            own = [context.crossval_path(), context.metrics_path("test")]
            if not any(path.exists() for path in own):
                context.require(own[1])

            written: List[str] = []
            rows = []
            backbones = [b for b in BACKBONE_ORDER if context.backbone_dir(b).is_dir()]
            for backbone in backbones:
                crossval_path = context.crossval_path(backbone)
                if crossval_path.is_file():
                    crossval = load_crossval_report(crossval_path)
                    written.append(str(write_report(
                        emit_crossval_summary(crossval),
                        context.reports_dir / f"crossval_{backbone}.txt",
                    )))
                    for run in crossval.runs:
                        if run.history:
                            written.extend(str(p) for p in emit_curves(run, context.reports_dir))

                final_summary = context.final_dir(backbone) / RUN_SUMMARY_FILE
                if final_summary.is_file():
                    run = TrainingRun.model_validate_json(final_summary.read_text(encoding="utf-8"))
                    written.extend(str(p) for p in emit_curves(run, context.reports_dir))

                training = context.metrics_path("train", backbone)
                testing = context.metrics_path("test", backbone)
                rows.extend(rows_from_metrics(
                    backbone,
                    read_metrics(training) if training.is_file() else None,
                    read_metrics(testing) if testing.is_file() else None,
                ))

            if rows:
                for suffix, fmt in (("md", "markdown"), ("csv", "csv")):
                    written.append(str(write_report(emit_table(rows, fmt), context.reports_dir / f"table1.{suffix}")))
            return _ok(context, reports=written, backbones=[display_name(b) for b in backbones])
        except Exception as e:
            _log_failure("report", e)
            return _fail(e)

    def tune(self, config: RunConfig) -> Dict[str, Any]:
        """Cross-validate every tune.grid point and pick the best"""
        try:
            context = self._context(config, "tune")
            grid = tuning_grid(config)
            if not grid:
                raise EmptyGrid("tune.grid is empty")
            manifest = self._manifest(context)
            best, table = tune_hyperparameters(
                manifest,
                config.backbone,
                grid,
                fold_plan_from_manifest(manifest, config.data.stratified),
                augmentation_policy(config),
                model_factory(config),
                workers=config.train.workers,
                skip_undefined=config.train.skip_undefined,
                device=self.settings.device,
                deterministic=self.settings.deterministic,
            )
            written = [
                str(write_report(emit_tuning_table(table, fmt), context.reports_dir / f"tuning_{config.backbone}.{suffix}"))
                for suffix, fmt in (("md", "markdown"), ("csv", "csv"))
            ]
            return _ok(context, best=best.model_dump(), reports=written)
        except Exception as e:
            _log_failure("tune", e)
            return _fail(e)

    def ablate(self, config: RunConfig) -> Dict[str, Any]:
        """Cross-validate with no augmentation and with each technique alone"""
        try:
            context = self._context(config, "ablate")
            manifest = self._manifest(context)
            results = run_augmentation_ablation(
                manifest,
                config.backbone,
                fold_plan_from_manifest(manifest, config.data.stratified),
                augmentation_policy(config),
                Hyperparams.from_train_config(config.train),
                model_factory(config),
                out_dir=context.backbone_dir(),
                workers=config.train.workers,
                skip_undefined=config.train.skip_undefined,
                device=self.settings.device,
                deterministic=self.settings.deterministic,
            )
            path = write_report(emit_ablation_summary(results), context.reports_dir / f"ablation_{config.backbone}.txt")
            return _ok(
                context,
                report=str(path),
                mean_accuracy={variant: report.mean_accuracy for variant, report in results.items()},
            )
        except Exception as e:
            _log_failure("ablate", e)
            return _fail(e)


# Singleton instance
_pipeline_engine_instance = None


def get_pipeline_engine() -> PipelineEngine:
    """Get singleton instance of pipeline engine"""
    global _pipeline_engine_instance
    if _pipeline_engine_instance is None:
        _pipeline_engine_instance = PipelineEngine()
    return _pipeline_engine_instance
