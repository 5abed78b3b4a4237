"""
Data Core - Candling image dataset handling
Ingests, preprocesses, splits and folds the labeled egg images, and renders
synthetic candling datasets for desk-scale runs
"""

import json
import logging
import math
import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np
import pandas as pd
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from sklearn.model_selection import KFold, StratifiedKFold, train_test_split

from .errors import (
    DecodeError,
    InputShapeError,
    InvalidFoldCount,
    InvalidSplit,
    IoError,
    LabelError,
    MissingArtifact,
    NoEggFound,
    NoSamples,
)

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
LABELS_FILE = "labels.csv"


class Label(str, Enum):
    """Egg fertility class; fertile is the positive class"""

    FERTILE = "fertile"
    INFERTILE = "infertile"

    @property
    def index(self) -> int:
        return 1 if self is Label.FERTILE else 0

    @classmethod
    def from_index(cls, index: int) -> "Label":
        return cls.FERTILE if index == 1 else cls.INFERTILE


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


class ImageSample(BaseModel):
    """One labeled candling image; pixels are loaded on demand"""

    model_config = ConfigDict(frozen=True)

    id: str
    path: str
    label: Label

    def load_pixels(self) -> np.ndarray:
        return load_image(self.path)


class DatasetManifest(BaseModel):
    """Labeled image collection with split and fold assignments"""

    model_config = ConfigDict(frozen=True)

    samples: Tuple[ImageSample, ...] = ()
    split: Dict[str, Split] = Field(default_factory=dict)
    fold: Dict[str, int] = Field(default_factory=dict)
    seed: Optional[int] = None
    k: Optional[int] = None

    @model_validator(mode="after")
    def _check_assignments(self) -> "DatasetManifest":
        ids = [s.id for s in self.samples]
        id_set = set(ids)
        if len(id_set) != len(ids):
            duplicates = sorted(i for i, c in Counter(ids).items() if c > 1)
            raise ValueError(f"duplicate sample ids: {duplicates[:5]}")
        if self.split:
            if set(self.split) != id_set:
                raise ValueError("every sample needs exactly one split assignment")
        train_ids = {i for i, s in self.split.items() if s == Split.TRAIN}
        if self.fold:
            if set(self.fold) != train_ids:
                raise ValueError("fold must be defined exactly for train-split ids")
            if self.k is not None and any(not 0 <= f < self.k for f in self.fold.values()):
                raise ValueError("fold index outside [0, k)")
        return self

    @property
    def class_counts(self) -> Dict[str, int]:
        counts = Counter(s.label.value for s in self.samples)
        return {label.value: counts.get(label.value, 0) for label in Label}

    @property
    def ids(self) -> List[str]:
        return [s.id for s in self.samples]

    def ids_in(self, split: Split) -> List[str]:
        """Sample ids of one split, in manifest order"""
        return [s.id for s in self.samples if self.split.get(s.id) == split]

    def sample(self, sample_id: str) -> ImageSample:
        return self._index()[sample_id]

    def labels_for(self, ids: Sequence[str]) -> List[Label]:
        index = self._index()
        return [index[i].label for i in ids]

    def _index(self) -> Dict[str, ImageSample]:
        return {s.id: s for s in self.samples}


class PreprocessPolicy(BaseModel):
    """Cropping and segmentation parameters"""

    model_config = ConfigDict(frozen=True)

    segmentation_threshold_method: Union[str, int] = "otsu"
    crop_margin_fraction: float = Field(0.05, ge=0.0, le=0.5)
    target_size: Tuple[int, int] = (256, 256)

    @field_validator("segmentation_threshold_method")
    @classmethod
    def _check_method(cls, value):
        if isinstance(value, str) and value != "otsu":
            raise ValueError("threshold method must be 'otsu' or a fixed integer")
        if isinstance(value, int) and not 0 <= value <= 255:
            raise ValueError("fixed threshold must lie in [0, 255]")
        return value

    @field_validator("target_size")
    @classmethod
    def _check_size(cls, value):
        if value[0] <= 0 or value[1] <= 0:
            raise ValueError("target_size must be positive")
        return value


class FoldPlan(BaseModel):
    """k-fold assignment of the train split"""

    model_config = ConfigDict(frozen=True)

    k: int = Field(..., gt=0)
    assignments: Dict[str, int]
    stratified: bool = True

    def fold_ids(self, fold_index: int) -> List[str]:
        return [i for i, f in self.assignments.items() if f == fold_index]

    def folds(self) -> List[List[str]]:
        return [self.fold_ids(i) for i in range(self.k)]


class SyntheticSpec(BaseModel):
    """Parameters of a synthetic candling dataset"""

    model_config = ConfigDict(frozen=True)

    n_fertile: int = Field(100, ge=0)
    n_infertile: int = Field(100, ge=0)
    image_size: Tuple[int, int] = (256, 256)
    seed: int = 7
    embryo_intensity_drop: float = Field(0.35, ge=0.0, le=1.0)
    vessel_branch_count_range: Tuple[int, int] = (3, 6)

    @model_validator(mode="after")
    def _check(self) -> "SyntheticSpec":
        if self.image_size[0] < 64 or self.image_size[1] < 64:
            raise ValueError("synthetic images must be at least 64x64")
        low, high = self.vessel_branch_count_range
        if low < 0 or low > high:
            raise ValueError("vessel_branch_count_range must satisfy 0 <= min <= max")
        return self


# Image IO


def load_image(path: Union[str, Path]) -> np.ndarray:
    """
    Decode an image file into an H x W x 3 uint8 array

    Raises:
        DecodeError: File missing or not a decodable image
    """
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise DecodeError(str(path), str(e)) from e


def save_image(pixels: np.ndarray, path: Union[str, Path]) -> None:
    """Write an RGB array as lossless PNG"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(path, format="PNG")
    except OSError as e:
        raise IoError(f"Cannot write image {path}: {e}") from e


def resize_image(pixels: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Resize to (height, width); area filter when shrinking, bilinear otherwise"""
    height, width = size
    if pixels.shape[0] == height and pixels.shape[1] == width:
        return pixels.copy()
    shrinking = pixels.shape[0] >= height and pixels.shape[1] >= width
    interpolation = cv2.INTER_AREA if shrinking else cv2.INTER_LINEAR
    return cv2.resize(pixels, (width, height), interpolation=interpolation)


# Ingestion


def _parse_label(name: str) -> Optional[Label]:
    key = name.strip().casefold()
    for label in Label:
        if key == label.value:
            return label
    return None


def _sample_id(relative: Path) -> str:
    return relative.with_suffix("").as_posix()


def _verify_decodable(path: Path) -> None:
    try:
        with Image.open(path) as img:
            img.load()
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise DecodeError(str(path), str(e)) from e


def _candidate_files(root: Path) -> List[Path]:
    files = [
        p for p in root.rglob("*")
        if p.is_file() and not any(part.startswith(".") for part in p.relative_to(root).parts)
    ]
    return sorted(files, key=lambda p: p.relative_to(root).as_posix())


def _labels_by_subdirectory(root: Path) -> List[Tuple[Path, Label]]:
    labeled = []
    for path in _candidate_files(root):
        relative = path.relative_to(root)
        label = _parse_label(relative.parts[0]) if len(relative.parts) > 1 else None
        if label is None:
            raise LabelError(str(path), "not inside a fertile/ or infertile/ directory")
        if path.suffix.lower() not in IMAGE_SUFFIXES:
            raise DecodeError(str(path), "unsupported file type")
        labeled.append((path, label))
    return labeled


def _labels_by_manifest_file(root: Path) -> List[Tuple[Path, Label]]:
    labels_path = root / LABELS_FILE
    if not labels_path.is_file():
        raise LabelError(str(labels_path), "label manifest file missing")
    table = pd.read_csv(labels_path, dtype=str, keep_default_na=False)
    if not {"path", "label"} <= set(table.columns):
        raise LabelError(str(labels_path), "label manifest needs 'path' and 'label' columns")

    listed: Dict[str, Label] = {}
    for row in table.itertuples(index=False):
        label = _parse_label(row.label)
        if label is None:
            raise LabelError(str(root / row.path), f"unknown label '{row.label}'")
        listed[Path(row.path).as_posix()] = label

    labeled = []
    for path in _candidate_files(root):
        if path == labels_path:
            continue
        relative = path.relative_to(root).as_posix()
        if relative not in listed:
            raise LabelError(str(path), f"not listed in {LABELS_FILE}")
        labeled.append((path, listed.pop(relative)))
    if listed:
        missing = sorted(listed)[0]
        raise DecodeError(str(root / missing), "listed in labels file but missing on disk")
    return labeled


def ingest_directory(root: Union[str, Path], labeling: str = "by_subdirectory") -> DatasetManifest:
    """
    Register every image under root with its class label

    Args:
        root: Dataset directory
        labeling: 'by_subdirectory' (fertile/, infertile/) or 'by_manifest_file' (labels.csv)

    Returns:
        Manifest in lexicographic path order, without split or fold assignments

    Raises:
        IoError: Root does not exist
        NoSamples: Root holds no files
        LabelError: A file whose label cannot be derived
        DecodeError: A file that is not a decodable image
    """
    root = Path(root)
    if not root.is_dir():
        raise IoError(f"Data root does not exist: {root}")

    if labeling == "by_subdirectory":
        labeled = _labels_by_subdirectory(root)
    elif labeling == "by_manifest_file":
        labeled = _labels_by_manifest_file(root)
    else:
        raise LabelError(str(root), f"unknown labeling mode '{labeling}'")

    if not labeled:
        raise NoSamples(f"No images found under {root}")

    with ThreadPoolExecutor(max_workers=4) as pool:
        list(pool.map(_verify_decodable, [path for path, _ in labeled]))

    samples = []
    seen = set()
    for path, label in labeled:
        sample_id = _sample_id(path.relative_to(root))
        if sample_id in seen:
            raise LabelError(str(path), f"duplicate sample id '{sample_id}'")
        seen.add(sample_id)
        samples.append(ImageSample(id=sample_id, path=str(path), label=label))

    manifest = DatasetManifest(samples=tuple(samples))
    logger.info("Ingested %d images from %s: %s", len(samples), root, manifest.class_counts)
    return manifest


# Preprocessing


def _foreground_mask(gray: np.ndarray, method: Union[str, int]) -> np.ndarray:
    if method == "otsu":
        if int(gray.max()) == 0:
            raise NoEggFound("Image is completely dark")
        _, mask = cv2.threshold(gray, 0, 255, cv2.THRESH_BINARY + cv2.THRESH_OTSU)
    else:
        mask = np.where(gray > int(method), 255, 0).astype(np.uint8)
    return mask


def _snap(low: int, high: int, extent: int, tolerance: int) -> Tuple[int, int]:
    if low <= tolerance:
        low = 0
    if extent - high <= tolerance:
        high = extent
    return low, high


def preprocess(image: np.ndarray, policy: PreprocessPolicy) -> np.ndarray:
    """
    Crop to the egg, blank the background and resize

    The egg is the largest bright connected component of the luminance
    threshold mask, with interior holes filled. Crop boxes that land within a
    few pixels of the frame are snapped to it, which keeps the operation
    idempotent.

    Args:
        image: H x W x 3 uint8 candling image
        policy: Threshold method, crop margin and output size

    Returns:
        Preprocessed image of policy.target_size

    Raises:
        InputShapeError: Image is empty or not 3-channel
        NoEggFound: No foreground component
    """
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise InputShapeError(f"Expected a non-empty H x W x 3 image, got shape {image.shape}")
    image = np.ascontiguousarray(image, dtype=np.uint8)
    height, width = image.shape[:2]

    gray = cv2.cvtColor(image, cv2.COLOR_RGB2GRAY)
    mask = _foreground_mask(gray, policy.segmentation_threshold_method)
    count, labels, stats, _ = cv2.connectedComponentsWithStats(mask, connectivity=8)
    if count <= 1:
        raise NoEggFound("No foreground component above the segmentation threshold")

    largest = 1 + int(np.argmax(stats[1:, cv2.CC_STAT_AREA]))
    component = (labels == largest).astype(np.uint8)
    contours, _ = cv2.findContours(component, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    filled = np.zeros_like(component)
    cv2.drawContours(filled, contours, -1, 1, thickness=cv2.FILLED)

    # keep the anti-aliased rim that falls under the threshold
    radius = max(1, round(0.02 * max(height, width)))
    kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (2 * radius + 1, 2 * radius + 1))
    keep = cv2.dilate(filled, kernel)
    masked = image * keep[..., None]

    x = int(stats[largest, cv2.CC_STAT_LEFT])
    y = int(stats[largest, cv2.CC_STAT_TOP])
    w = int(stats[largest, cv2.CC_STAT_WIDTH])
    h = int(stats[largest, cv2.CC_STAT_HEIGHT])
    margin_y = round(h * policy.crop_margin_fraction)
    margin_x = round(w * policy.crop_margin_fraction)

    top, bottom = _snap(max(0, y - margin_y), min(height, y + h + margin_y), height, max(2, round(0.01 * height)))
    left, right = _snap(max(0, x - margin_x), min(width, x + w + margin_x), width, max(2, round(0.01 * width)))

    return resize_image(masked[top:bottom, left:right], policy.target_size)


# Splitting and folding


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def _can_stratify(label_indices: Sequence[int], smallest_side: int) -> bool:
    counts = np.bincount(np.asarray(label_indices, dtype=np.int64), minlength=len(Label))
    present = counts[counts > 0]
    return len(present) > 1 and present.min() >= 2 and smallest_side >= len(present)


def split_train_test(
    manifest: DatasetManifest,
    train_fraction: float = 0.8,
    seed: int = 0,
    stratified: bool = True
) -> DatasetManifest:
    """
    Assign every sample to the train or test split

    The train size is round-half-up of n * train_fraction. Stratified splits
    allocate it across classes by largest remainder; a class with a single
    member cannot be stratified and the split falls back to a plain shuffle.

    Args:
        manifest: Ingested manifest
        train_fraction: Share of samples in the train split, 0 < f < 1
        seed: Shuffle seed
        stratified: Preserve class proportions within one sample per class

    Returns:
        New manifest with the split map set and folds cleared

    Raises:
        InvalidSplit: Fraction out of range or one side empty
    """
    if not 0.0 < train_fraction < 1.0:
        raise InvalidSplit(f"train_fraction must lie in (0, 1), got {train_fraction}")
    total = len(manifest.samples)
    n_train = _round_half_up(total * train_fraction)
    if n_train == 0 or n_train == total:
        raise InvalidSplit(f"train_fraction {train_fraction} leaves an empty split for {total} samples")

    ids = manifest.ids
    labels = [label.index for label in manifest.labels_for(ids)]
    stratify = None
    if stratified:
        if _can_stratify(labels, min(n_train, total - n_train)):
            stratify = labels
        else:
            logger.warning("Class counts %s too small to stratify; splitting unstratified", manifest.class_counts)

    train, _ = train_test_split(
        ids, train_size=n_train, test_size=total - n_train, random_state=seed, shuffle=True, stratify=stratify
    )
    train_set = set(train)
    split = {i: (Split.TRAIN if i in train_set else Split.TEST) for i in ids}
    logger.info("Split %d samples: %d train / %d test (seed=%d)", total, n_train, total - n_train, seed)
    return manifest.model_copy(update={"split": split, "fold": {}, "k": None, "seed": seed})


def make_folds(
    manifest: DatasetManifest,
    k: int = 5,
    seed: int = 0,
    stratified: bool = True
) -> FoldPlan:
    """
    Partition the train split into k folds

    Stratified folds deal each class round-robin over the folds, so fold sizes
    and per-class fold counts each differ by at most one. When every class is
    smaller than k the plan falls back to unstratified folds.

    Raises:
        InvalidSplit: Manifest has no train split
        InvalidFoldCount: k < 2 or k > |train|
    """
    train_ids = manifest.ids_in(Split.TRAIN)
    if not train_ids:
        raise InvalidSplit("Manifest has no train split; run split_train_test first")
    if k < 2 or k > len(train_ids):
        raise InvalidFoldCount(f"k must lie in [2, {len(train_ids)}], got {k}")

    labels = np.array([label.index for label in manifest.labels_for(train_ids)])
    placeholder = np.zeros(len(train_ids))
    if stratified and np.bincount(labels, minlength=len(Label)).max() >= k:
        with warnings.catch_warnings():
            # a minority class smaller than k leaves some folds without it
            warnings.simplefilter("ignore", UserWarning)
            splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
            held_out = [test for _, test in splitter.split(placeholder, labels)]
    else:
        if stratified:
            logger.warning("Every class has fewer than %d train samples; folding unstratified", k)
        held_out = [test for _, test in KFold(n_splits=k, shuffle=True, random_state=seed).split(placeholder)]

    fold_of = np.empty(len(train_ids), dtype=np.int64)
    for fold_index, members in enumerate(held_out):
        fold_of[members] = fold_index
    assignments = {sample_id: int(fold_of[j]) for j, sample_id in enumerate(train_ids)}
    return FoldPlan(k=k, assignments=assignments, stratified=stratified)


def assign_folds(manifest: DatasetManifest, plan: FoldPlan) -> DatasetManifest:
    """Copy a fold plan into the manifest's fold map"""
    return manifest.model_copy(update={"fold": dict(plan.assignments), "k": plan.k})


def fold_plan_from_manifest(manifest: DatasetManifest, stratified: bool = True) -> FoldPlan:
    """Rebuild the FoldPlan stored in a manifest"""
    if not manifest.fold or manifest.k is None:
        raise InvalidFoldCount("Manifest carries no fold assignment")
    return FoldPlan(k=manifest.k, assignments=dict(manifest.fold), stratified=stratified)


# Synthetic candling images

_GLOW_TINT = np.array([1.0, 0.72, 0.38])


def _egg_geometry(rng: np.random.Generator, height: int, width: int) -> Dict[str, float]:
    return {
        "cy": height / 2 + rng.uniform(-0.03, 0.03) * height,
        "cx": width / 2 + rng.uniform(-0.03, 0.03) * width,
        "ry": height * rng.uniform(0.36, 0.42),
        "rx": width * rng.uniform(0.27, 0.32),
        "tilt": rng.uniform(-0.2, 0.2),
        "peak": rng.uniform(215.0, 240.0),
    }


def _embryo_darkening(
    spec: SyntheticSpec,
    rng: np.random.Generator,
    geometry: Dict[str, float],
    xx: np.ndarray,
    yy: np.ndarray
) -> np.ndarray:
    height, width = spec.image_size
    rx, ry, tilt = geometry["rx"], geometry["ry"], geometry["tilt"]
    cos_t, sin_t = math.cos(tilt), math.sin(tilt)

    def to_image(u: float, v: float) -> Tuple[float, float]:
        return geometry["cx"] + u * cos_t - v * sin_t, geometry["cy"] + u * sin_t + v * cos_t

    angle = rng.uniform(0.0, 2 * math.pi)
    reach = rng.uniform(0.0, 0.3)
    ex, ey = to_image(reach * rx * math.cos(angle), reach * ry * math.sin(angle))
    sigma = rng.uniform(0.16, 0.22) * min(rx, ry)
    blob = np.exp(-((xx - ex) ** 2 + (yy - ey) ** 2) / (2.0 * sigma ** 2))

    vessels = np.zeros((height, width), dtype=np.uint8)
    thickness = max(1, round(min(height, width) / 128))
    low, high = spec.vessel_branch_count_range
    step = 0.09 * min(rx, ry)
    for _ in range(int(rng.integers(low, high + 1))):
        heading = rng.uniform(0.0, 2 * math.pi)
        points = [(ex, ey)]
        for _ in range(int(rng.integers(4, 9))):
            heading += rng.normal(0.0, 0.35)
            px, py = points[-1][0] + step * math.cos(heading), points[-1][1] + step * math.sin(heading)
            du, dv = px - geometry["cx"], py - geometry["cy"]
            u, v = du * cos_t + dv * sin_t, -du * sin_t + dv * cos_t
            if (u / rx) ** 2 + (v / ry) ** 2 > 0.8:
                break
            points.append((px, py))
        if len(points) > 1:
            polyline = np.round(np.array(points) * 16).astype(np.int32)
            cv2.polylines(vessels, [polyline], False, 255, thickness=thickness, lineType=cv2.LINE_AA, shift=4)
    vessel_shade = cv2.GaussianBlur(vessels.astype(np.float64) / 255.0, (3, 3), 0)

    drop = spec.embryo_intensity_drop
    return np.clip(drop * blob + 0.6 * drop * vessel_shade, 0.0, 0.95)


def render_candling_image(spec: SyntheticSpec, index: int, fertile: bool) -> np.ndarray:
    """
    Render one synthetic candling image

    Fertile and infertile images with the same index share shell geometry,
    glow and texture; fertile ones add an embryo shadow with vessel branches.
    """
    height, width = spec.image_size
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
    geometry = _egg_geometry(rng, height, width)

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    dx, dy = xx - geometry["cx"], yy - geometry["cy"]
    cos_t, sin_t = math.cos(geometry["tilt"]), math.sin(geometry["tilt"])
    u = dx * cos_t + dy * sin_t
    v = -dx * sin_t + dy * cos_t
    radius = np.sqrt((u / geometry["rx"]) ** 2 + (v / geometry["ry"]) ** 2)

    coverage = np.clip((1.0 - radius) * min(geometry["rx"], geometry["ry"]) + 0.5, 0.0, 1.0)
    glow = geometry["peak"] * (1.0 - 0.35 * np.clip(radius, 0.0, 1.0) ** 2)

    coarse = rng.normal(0.0, 1.0, (height // 8 + 1, width // 8 + 1))
    mottling = cv2.resize(coarse, (width, height), interpolation=cv2.INTER_CUBIC)
    intensity = np.clip(glow + 4.0 * mottling, 0.0, 255.0) * coverage

    if fertile:
        embryo_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index, 1]))
        intensity = intensity * (1.0 - _embryo_darkening(spec, embryo_rng, geometry, xx, yy))

    rgb = intensity[..., None] * _GLOW_TINT
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def generate_synthetic(spec: SyntheticSpec, out_dir: Union[str, Path]) -> DatasetManifest:
    """
    Write a synthetic candling dataset as fertile/ and infertile/ PNG files

    Args:
        spec: Dataset parameters; the seed fully determines the output
        out_dir: Destination directory

    Returns:
        Manifest of the written images

    Raises:
        IoError: Destination cannot be written
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"Cannot create output directory {out_dir}: {e}") from e

    samples = []
    for label, count in ((Label.FERTILE, spec.n_fertile), (Label.INFERTILE, spec.n_infertile)):
        for index in range(count):
            name = f"{label.value}_{index:04d}"
            path = out_dir / label.value / f"{name}.png"
            save_image(render_candling_image(spec, index, fertile=label is Label.FERTILE), path)
            samples.append(ImageSample(id=f"{label.value}/{name}", path=str(path), label=label))

    samples.sort(key=lambda s: Path(s.path).relative_to(out_dir).as_posix())
    logger.info("Generated %d synthetic images in %s", len(samples), out_dir)
    return DatasetManifest(samples=tuple(samples), seed=spec.seed)


# Manifest files


def _meta_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def write_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> Path:
    """
    Write the manifest as JSON lines (id, path, label, split, fold)

    Paths are stored relative to the manifest's directory when possible. A
    sibling .meta.json holds seed, k and class counts.
    """
    path = Path(path)
    lines = []
    for sample in manifest.samples:
        sample_path = Path(sample.path)
        try:
            stored = sample_path.resolve().relative_to(path.parent.resolve()).as_posix()
        except ValueError:
            stored = sample_path.as_posix()
        split = manifest.split.get(sample.id)
        record = {
            "id": sample.id,
            "path": stored,
            "label": sample.label.value,
            "split": split.value if split else None,
            "fold": manifest.fold.get(sample.id),
        }
        lines.append(json.dumps(record, ensure_ascii=False))
    meta = {"seed": manifest.seed, "k": manifest.k, "class_counts": manifest.class_counts}

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoError(f"Cannot write manifest {path}: {e}") from e
    return path


def read_manifest(path: Union[str, Path]) -> DatasetManifest:
    """Load a manifest written by write_manifest"""
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(str(path))

    samples, split, fold = [], {}, {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        sample_path = Path(record["path"])
        if not sample_path.is_absolute():
            sample_path = path.parent / sample_path
        samples.append(ImageSample(id=record["id"], path=str(sample_path), label=Label(record["label"])))
        if record.get("split"):
            split[record["id"]] = Split(record["split"])
        if record.get("fold") is not None:
            fold[record["id"]] = int(record["fold"])

    meta_path = _meta_path(path)
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.is_file() else {}
    return DatasetManifest(samples=tuple(samples), split=split, fold=fold, seed=meta.get("seed"), k=meta.get("k"))
