"""
Trainer - Fine-tuning loops, k-fold cross-validation and hyperparameter search
"""

import json
import logging
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
from pydantic import BaseModel, Field, model_validator
from torch.utils.data import DataLoader, Dataset
from tqdm import tqdm

from .augmentation import TECHNIQUES, AugmentationPolicy, AugmentationSampler, single_technique_policy
from .data_core import DatasetManifest, FoldPlan, Split, load_image, resize_image
from .errors import DataLeakage, EmptyGrid, InvalidSplit, IoError, TrainingDiverged
from .metrics import MetricValue, aggregate_mean, aggregate_std
from .model_zoo import ClassifierModel, ModelBuilder, ModelFactory, save_checkpoint
from .seeding import derive_seed, seed_everything

logger = logging.getLogger(__name__)

HISTORY_FILE = "history.jsonl"
CHECKPOINT_FILE = "checkpoint.pt"
CROSSVAL_FILE = "crossval.json"


class Hyperparams(BaseModel):
    """Optimization settings for one training run"""

    learning_rate: float = Field(1e-4, ge=0.0)
    batch_size: int = Field(16, gt=0)
    epochs: int = Field(20, gt=0)
    optimizer: Literal["sgd_momentum", "adam"] = "sgd_momentum"
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(0.0, ge=0.0)
    seed: int = 0
    early_stopping_patience: Optional[int] = Field(None, gt=0)

    @classmethod
    def from_train_config(cls, train) -> "Hyperparams":
        """Build from the run config's train section"""
        return cls(
            learning_rate=train.lr,
            batch_size=train.batch,
            epochs=train.epochs,
            optimizer=train.optimizer,
            momentum=train.momentum,
            weight_decay=train.weight_decay,
            seed=train.seed,
            early_stopping_patience=train.early_stopping_patience,
        )


class EpochRecord(BaseModel):
    epoch: int = Field(..., ge=1)
    train_loss: float = Field(..., ge=0.0)
    train_accuracy: float = Field(..., ge=0.0, le=1.0)
    val_loss: float = Field(..., ge=0.0)
    val_accuracy: float = Field(..., ge=0.0, le=1.0)


class TrainingRun(BaseModel):
    """History and artifacts of one fine-tuning run"""

    backbone: str
    architecture: str
    fold_index: Optional[int] = None
    hyperparams: Hyperparams
    history: List[EpochRecord] = Field(default_factory=list)
    final_model: Optional[str] = None
    wall_time_s: float = 0.0
    stop_reason: Optional[str] = None
    diverged: bool = False
    last_good_epoch: Optional[int] = None
    batches_checked: int = 0
    leaked_ids: int = 0

    @model_validator(mode="after")
    def _check_history(self) -> "TrainingRun":
        epochs = [r.epoch for r in self.history]
        if epochs != list(range(1, len(epochs) + 1)):
            raise ValueError("history epochs must run 1..n without gaps")
        if len(epochs) != self.hyperparams.epochs and self.stop_reason is None and not self.diverged:
            raise ValueError("a shortened history needs a stop reason")
        return self

    @property
    def final_val_accuracy(self) -> Optional[float]:
        if self.diverged or not self.history:
            return None
        return self.history[-1].val_accuracy


class CrossValReport(BaseModel):
    """k fold runs with their final validation accuracies and aggregates"""

    backbone: str
    k: int = Field(..., ge=2)
    runs: List[TrainingRun]
    fold_val_accuracies: List[Optional[float]]
    mean_accuracy: Optional[float] = None
    std_accuracy: Optional[float] = Field(None, ge=0.0)
    diverged_folds: List[int] = Field(default_factory=list)
    skip_undefined: bool = False

    @model_validator(mode="after")
    def _check_runs(self) -> "CrossValReport":
        if len(self.runs) != self.k or len(self.fold_val_accuracies) != self.k:
            raise ValueError("a cross-validation report holds exactly k runs")
        return self

    @classmethod
    def from_runs(cls, backbone: str, runs: List[TrainingRun], skip_undefined: bool = False) -> "CrossValReport":
        accuracies = [run.final_val_accuracy for run in runs]
        return cls(
            backbone=backbone,
            k=len(runs),
            runs=runs,
            fold_val_accuracies=accuracies,
            mean_accuracy=aggregate_mean(accuracies, skip_undefined).value,
            std_accuracy=aggregate_std(accuracies, skip_undefined).value,
            diverged_folds=[run.fold_index for run in runs if run.diverged],
            skip_undefined=skip_undefined,
        )

    @property
    def mean(self) -> MetricValue:
        return MetricValue(value=self.mean_accuracy)

    @property
    def std(self) -> MetricValue:
        return MetricValue(value=self.std_accuracy)


# Data pipeline


class CandlingDataset(Dataset):
    """
    Resized, normalized image tensors for a list of manifest ids

    Images are decoded and resized once; augmentation is drawn per access
    when a sampler is given.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        ids: Sequence[str],
        input_size: Tuple[int, int],
        normalization: Tuple[Sequence[float], Sequence[float]],
        sampler: Optional[AugmentationSampler] = None
    ):
        self.ids = list(ids)
        self.labels = [label.index for label in manifest.labels_for(self.ids)]
        self.sampler = sampler
        self._pixels = [resize_image(load_image(manifest.sample(i).path), input_size) for i in self.ids]
        mean, std = normalization
        self._mean = torch.tensor(mean, dtype=torch.float32).view(3, 1, 1)
        self._std = torch.tensor(std, dtype=torch.float32).view(3, 1, 1)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, position: int):
        pixels = self._pixels[position]
        if self.sampler is not None:
            pixels = self.sampler.augment(pixels)
        tensor = torch.from_numpy(np.ascontiguousarray(pixels)).permute(2, 0, 1).float().div_(255.0)
        return (tensor - self._mean) / self._std, self.labels[position], position


class LeakageGuard:
    """Fails a training batch that carries a held-out id"""

    def __init__(self, forbidden_ids: Iterable[str]):
        self.forbidden = set(forbidden_ids)
        self.batches_checked = 0
        self.leaked = 0

    def check(self, batch_ids: Sequence[str]) -> None:
        self.batches_checked += 1
        leaked = self.forbidden.intersection(batch_ids)
        if leaked:
            self.leaked += len(leaked)
            raise DataLeakage(f"Held-out ids in a training batch: {sorted(leaked)[:5]}")


def _make_optimizer(model: nn.Module, hp: Hyperparams) -> torch.optim.Optimizer:
    params = [p for p in model.parameters() if p.requires_grad]
    if hp.optimizer == "adam":
        return torch.optim.Adam(params, lr=hp.learning_rate, weight_decay=hp.weight_decay)
    return torch.optim.SGD(params, lr=hp.learning_rate, momentum=hp.momentum, weight_decay=hp.weight_decay)


def _predicted_fertile(logits: torch.Tensor) -> torch.Tensor:
    # Ties go to fertile, matching the 0.5 score threshold
    return (logits[:, 1] >= logits[:, 0]).long()


def _validate(model: nn.Module, loader: DataLoader, criterion: nn.Module, device: torch.device) -> Tuple[float, float]:
    model.eval()
    total_loss, correct, seen = 0.0, 0, 0
    with torch.no_grad():
        for images, targets, _ in loader:
            images, targets = images.to(device), targets.to(device)
            logits = model(images)
            total_loss += criterion(logits, targets).item() * targets.shape[0]
            correct += int((_predicted_fertile(logits) == targets).sum())
            seen += targets.shape[0]
    return total_loss / seen, correct / seen


def _write_history(history: List[EpochRecord], path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(r.model_dump_json() + "\n" for r in history), encoding="utf-8")
    except OSError as e:
        raise IoError(f"Cannot write history {path}: {e}") from e


def read_history(path: Union[str, Path]) -> List[EpochRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [EpochRecord.model_validate_json(line) for line in lines if line.strip()]


def train_fold(
    model: ClassifierModel,
    train_ids: Sequence[str],
    val_ids: Sequence[str],
    manifest: DatasetManifest,
    policy: Optional[AugmentationPolicy],
    hp: Hyperparams,
    backbone: Optional[str] = None,
    fold_index: Optional[int] = None,
    run_dir: Optional[Union[str, Path]] = None,
    forbidden_ids: Iterable[str] = (),
    device: str = "cpu",
    deterministic: bool = True
) -> TrainingRun:
    """
    Fine-tune model on train_ids and record per-epoch validation on val_ids

    Args:
        model: Freshly built classifier, trained in place
        train_ids: Training sample ids
        val_ids: Validation sample ids, disjoint from train_ids
        manifest: Manifest holding both id sets
        policy: Augmentation for training batches (None disables it)
        hp: Hyperparameters
        backbone: Name recorded on the run (defaults to the model's)
        fold_index: Fold recorded on the run
        run_dir: Where history.jsonl and checkpoint.pt are written
        forbidden_ids: Extra ids that must never be trained on
        device: Torch device
        deterministic: Force deterministic kernels

    Returns:
        TrainingRun

    Raises:
        InvalidSplit: Empty or overlapping id sets
        DataLeakage: A held-out id reached a training batch
        TrainingDiverged: Loss became NaN or infinite
    """
    if not train_ids or not val_ids:
        raise InvalidSplit("train_fold needs nonempty train and validation ids")
    overlap = set(train_ids).intersection(val_ids)
    if overlap:
        raise InvalidSplit(f"{len(overlap)} ids are in both the train and validation sets")

    started = time.perf_counter()
    seed_everything(hp.seed, deterministic)
    torch_device = torch.device(device)
    model.to(torch_device)

    sampler = AugmentationSampler(policy, hp.seed, fold_index or 0) if policy is not None else None
    input_size = tuple(model.spec.input_size)
    train_set = CandlingDataset(manifest, train_ids, input_size, model.normalization, sampler)
    val_set = CandlingDataset(manifest, val_ids, input_size, model.normalization)
    generator = torch.Generator().manual_seed(int(hp.seed) & 0xFFFFFFFF)
    train_loader = DataLoader(train_set, batch_size=hp.batch_size, shuffle=True, generator=generator, num_workers=0)
    val_loader = DataLoader(val_set, batch_size=hp.batch_size, shuffle=False, num_workers=0)

    guard = LeakageGuard(set(val_ids).union(forbidden_ids))
    optimizer = _make_optimizer(model, hp)
    criterion = nn.CrossEntropyLoss()
    history: List[EpochRecord] = []
    stop_reason = None
    best_val_loss, stale_epochs = float("inf"), 0
    label = backbone or model.spec.name
    run_dir = Path(run_dir) if run_dir is not None else None

    def diverged(epoch: int) -> TrainingDiverged:
        if run_dir is not None:
            _write_history(history, run_dir / HISTORY_FILE)
        return TrainingDiverged(
            f"{label} fold {fold_index}: loss is not finite in epoch {epoch}",
            last_good_epoch=epoch - 1,
            history=list(history),
        )

    epochs = tqdm(
        range(1, hp.epochs + 1),
        desc=f"{label} fold {fold_index}" if fold_index is not None else label,
        disable=not logger.isEnabledFor(logging.INFO),
        leave=False,
    )
    for epoch in epochs:
        model.train()
        total_loss, correct, seen = 0.0, 0, 0
        for images, targets, positions in train_loader:
            guard.check([train_set.ids[p] for p in positions.tolist()])
            images, targets = images.to(torch_device), targets.to(torch_device)
            optimizer.zero_grad()
            logits = model(images)
            loss = criterion(logits, targets)
            if not torch.isfinite(loss):
                raise diverged(epoch)
            loss.backward()
            optimizer.step()
            total_loss += loss.item() * targets.shape[0]
            correct += int((_predicted_fertile(logits.detach()) == targets).sum())
            seen += targets.shape[0]

        val_loss, val_accuracy = _validate(model, val_loader, criterion, torch_device)
        if not np.isfinite(val_loss):
            raise diverged(epoch)
        record = EpochRecord(
            epoch=epoch,
            train_loss=total_loss / seen,
            train_accuracy=correct / seen,
            val_loss=val_loss,
            val_accuracy=val_accuracy,
        )
        history.append(record)
        epochs.set_postfix(loss=f"{record.train_loss:.4f}", val_acc=f"{record.val_accuracy:.3f}")
        logger.info(
            "%s fold %s epoch %d/%d: loss %.4f acc %.4f | val_loss %.4f val_acc %.4f",
            label, fold_index, epoch, hp.epochs,
            record.train_loss, record.train_accuracy, record.val_loss, record.val_accuracy,
        )

        if hp.early_stopping_patience is not None:
            if val_loss < best_val_loss:
                best_val_loss, stale_epochs = val_loss, 0
            else:
                stale_epochs += 1
            if stale_epochs >= hp.early_stopping_patience and epoch < hp.epochs:
                stop_reason = f"early stopping: val_loss flat for {stale_epochs} epochs"
                logger.info("%s fold %s: %s", label, fold_index, stop_reason)
                break

    final_model = None
    if run_dir is not None:
        _write_history(history, run_dir / HISTORY_FILE)
        final_model = str(save_checkpoint(model, run_dir / CHECKPOINT_FILE))

    return TrainingRun(
        backbone=label,
        architecture=model.spec.name,
        fold_index=fold_index,
        hyperparams=hp,
        history=history,
        final_model=final_model,
        wall_time_s=time.perf_counter() - started,
        stop_reason=stop_reason,
        last_good_epoch=len(history),
        batches_checked=guard.batches_checked,
        leaked_ids=guard.leaked,
    )


# Cross-validation


def fold_split(manifest: DatasetManifest, fold_plan: FoldPlan, fold_index: int) -> Tuple[List[str], List[str]]:
    """Train ids (other folds) and validation ids (this fold), in manifest order"""
    train_ids = [i for i in manifest.ids if i in fold_plan.assignments and fold_plan.assignments[i] != fold_index]
    val_ids = [i for i in manifest.ids if fold_plan.assignments.get(i) == fold_index]
    return train_ids, val_ids


def _init_fold_worker(num_threads: int) -> None:
    # spawned, not forked: a forked child cannot reuse the parent's OpenMP pool
    # same intra-op thread count as the parent keeps float reductions identical
    torch.set_num_threads(num_threads)


def _run_fold(
    fold_index: int,
    manifest: DatasetManifest,
    backbone_name: str,
    fold_plan: FoldPlan,
    policy: Optional[AugmentationPolicy],
    hp: Hyperparams,
    factory: ModelBuilder,
    out_dir: Optional[Path],
    device: str,
    deterministic: bool
) -> TrainingRun:
    """One cross-validation fold; module level so worker processes can unpickle it"""
    fold_hp = hp.model_copy(update={"seed": derive_seed(hp.seed, fold_index)})
    train_ids, val_ids = fold_split(manifest, fold_plan, fold_index)
    model = factory(fold_hp.seed)
    run_dir = out_dir / f"fold{fold_index}" if out_dir is not None else None
    try:
        return train_fold(
            model, train_ids, val_ids, manifest, policy, fold_hp,
            backbone=backbone_name, fold_index=fold_index, run_dir=run_dir,
            forbidden_ids=manifest.ids_in(Split.TEST), device=device, deterministic=deterministic,
        )
    except TrainingDiverged as e:
        logger.error("%s", e)
        return TrainingRun(
            backbone=backbone_name,
            architecture=model.spec.name,
            fold_index=fold_index,
            hyperparams=fold_hp,
            history=e.history,
            diverged=True,
            stop_reason=str(e),
            last_good_epoch=e.last_good_epoch,
        )


def run_cross_validation(
    manifest: DatasetManifest,
    backbone_name: str,
    fold_plan: FoldPlan,
    policy: Optional[AugmentationPolicy],
    hp: Hyperparams,
    model_factory: Optional[ModelBuilder] = None,
    out_dir: Optional[Union[str, Path]] = None,
    workers: int = 1,
    skip_undefined: bool = False,
    device: str = "cpu",
    deterministic: bool = True
) -> CrossValReport:
    """
    Train one fresh model per fold, validating on that fold

    A diverged fold is recorded with an undefined accuracy and flagged; the
    remaining folds still run. With workers > 1 folds train in separate
    processes, each with its own torch generator, so the runs are identical
    to a serial run with the same seed.

    Args:
        manifest: Manifest with split and folds
        backbone_name: Backbone to build per fold
        fold_plan: k-fold plan over the train split
        policy: Training augmentation
        hp: Hyperparameters; each fold trains with a seed derived from hp.seed
        model_factory: seed -> fresh model (defaults to ModelFactory(backbone_name));
            must be picklable when workers > 1
        out_dir: Backbone run directory (fold<i>/ and crossval.json go here)
        workers: Worker processes training folds concurrently
        skip_undefined: Aggregate over defined fold accuracies only

    Returns:
        CrossValReport with runs in fold order
    """
    run_fold = partial(
        _run_fold,
        manifest=manifest,
        backbone_name=backbone_name,
        fold_plan=fold_plan,
        policy=policy,
        hp=hp,
        factory=model_factory or ModelFactory(backbone_name),
        out_dir=Path(out_dir) if out_dir is not None else None,
        device=device,
        deterministic=deterministic,
    )

    logger.info("Cross-validating %s over %d folds (%d workers)", backbone_name, fold_plan.k, workers)
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=min(workers, fold_plan.k),
            mp_context=multiprocessing.get_context("spawn"),
            initializer=_init_fold_worker,
            initargs=(torch.get_num_threads(),),
        ) as executor:
            runs = list(executor.map(run_fold, range(fold_plan.k)))
    else:
        runs = [run_fold(i) for i in range(fold_plan.k)]

    report = CrossValReport.from_runs(backbone_name, runs, skip_undefined)
    logger.info(
        "%s cross-validation: mean %s std %s",
        backbone_name, report.mean.render(4), report.std.render(4),
    )
    if report.diverged_folds:
        logger.warning("%s: folds %s diverged", backbone_name, report.diverged_folds)
    if out_dir is not None:
        save_crossval_report(report, Path(out_dir) / CROSSVAL_FILE)
    return report


def save_crossval_report(report: CrossValReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}") from e
    return path


def load_crossval_report(path: Union[str, Path]) -> CrossValReport:
    return CrossValReport.model_validate_json(Path(path).read_text(encoding="utf-8"))


# Tuning and ablation


def tune_hyperparameters(
    manifest: DatasetManifest,
    backbone_name: str,
    grid: Sequence[Hyperparams],
    fold_plan: FoldPlan,
    policy: Optional[AugmentationPolicy],
    model_factory: Optional[ModelBuilder] = None,
    **crossval_kwargs
) -> Tuple[Hyperparams, List[Tuple[Hyperparams, MetricValue]]]:
    """
    Pick the grid point with the best cross-validation mean accuracy

    Ties go to the lower learning rate, then the smaller batch, then the
    earlier grid point. An undefined mean ranks below every defined one.

    Returns:
        (best hyperparams, [(hyperparams, mean accuracy)] in grid order)

    Raises:
        EmptyGrid: No grid points
    """
    if not grid:
        raise EmptyGrid("Hyperparameter grid is empty")

    table: List[Tuple[Hyperparams, MetricValue]] = []
    for index, hp in enumerate(grid):
        logger.info("Tuning %s: grid point %d/%d %s", backbone_name, index + 1, len(grid), hp.model_dump())
        report = run_cross_validation(manifest, backbone_name, fold_plan, policy, hp, model_factory, **crossval_kwargs)
        table.append((hp, report.mean))

    def rank(item: Tuple[int, Tuple[Hyperparams, MetricValue]]):
        index, (hp, mean) = item
        score = mean.value if mean.defined else float("-inf")
        return (-score, hp.learning_rate, hp.batch_size, index)

    best = min(enumerate(table), key=rank)[1][0]
    return best, table


def run_augmentation_ablation(
    manifest: DatasetManifest,
    backbone_name: str,
    fold_plan: FoldPlan,
    policy: AugmentationPolicy,
    hp: Hyperparams,
    model_factory: Optional[ModelBuilder] = None,
    out_dir: Optional[Union[str, Path]] = None,
    **crossval_kwargs
) -> Dict[str, CrossValReport]:
    """Cross-validate without augmentation and with each technique alone"""
    results: Dict[str, CrossValReport] = {}
    for technique in (None,) + TECHNIQUES:
        variant = technique or "none"
        variant_dir = Path(out_dir) / f"ablation_{variant}" if out_dir is not None else None
        results[variant] = run_cross_validation(
            manifest, backbone_name, fold_plan,
            single_technique_policy(policy, technique), hp, model_factory,
            out_dir=variant_dir, **crossval_kwargs,
        )
    return results


def train_final(
    manifest: DatasetManifest,
    backbone_name: str,
    policy: Optional[AugmentationPolicy],
    hp: Hyperparams,
    model_factory: Optional[ModelBuilder] = None,
    run_dir: Optional[Union[str, Path]] = None,
    device: str = "cpu",
    deterministic: bool = True
) -> Tuple[TrainingRun, ClassifierModel]:
    """
    Train on the whole train split; the test split is only ever validated on

    Early stopping is switched off here: the curves recorded on the test
    split never decide when training ends.
    """
    if hp.early_stopping_patience is not None:
        logger.info("%s final training: ignoring early_stopping_patience=%d", backbone_name, hp.early_stopping_patience)
        hp = hp.model_copy(update={"early_stopping_patience": None})
    train_ids = manifest.ids_in(Split.TRAIN)
    test_ids = manifest.ids_in(Split.TEST)
    model = (model_factory or ModelFactory(backbone_name))(hp.seed)
    run = train_fold(
        model, train_ids, test_ids, manifest, policy, hp,
        backbone=backbone_name, run_dir=run_dir, device=device, deterministic=deterministic,
    )
    return run, model


def write_run_summary(run: TrainingRun, path: Union[str, Path]) -> Path:
    """TrainingRun as JSON next to its history"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(run.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}") from e
    return path
