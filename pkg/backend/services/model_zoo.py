"""
Model Zoo - Pretrained backbones adapted to the two-class fertility task
VGG16, ResNet50, InceptionV3 and MobileNetV2 from torchvision, plus a small
reference CNN that needs no downloaded weights
"""

import logging
import re
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .data_core import Label
from .errors import ConfigError, IoError, InputShapeError, MissingArtifact, WeightsUnavailable

logger = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
NUM_CLASSES = 2


class BackboneSpec(BaseModel):
    """Architecture metadata; layer and parameter counts are published reference values"""

    model_config = ConfigDict(frozen=True)

    name: str
    layer_count: int
    trainable_params: float
    input_size: Tuple[int, int]
    pretrained_source: str
    head_hidden: Optional[int] = None
    mean: Tuple[float, float, float] = IMAGENET_MEAN
    std: Tuple[float, float, float] = IMAGENET_STD


_BACKBONES: Dict[str, BackboneSpec] = {
    "vgg16": BackboneSpec(
        name="vgg16",
        layer_count=41,
        trainable_params=134.2e6,
        input_size=(224, 224),
        pretrained_source="VGG16_Weights.IMAGENET1K_V1",
    ),
    "resnet50": BackboneSpec(
        name="resnet50",
        layer_count=177,
        trainable_params=23.8e6,
        input_size=(224, 224),
        pretrained_source="ResNet50_Weights.IMAGENET1K_V1",
        head_hidden=128,
    ),
    "inceptionnet": BackboneSpec(
        name="inceptionnet",
        layer_count=315,
        trainable_params=21.8e6,
        input_size=(299, 299),
        pretrained_source="Inception_V3_Weights.IMAGENET1K_V1",
    ),
    "mobilenet": BackboneSpec(
        name="mobilenet",
        layer_count=154,
        trainable_params=2.2e6,
        input_size=(224, 224),
        pretrained_source="MobileNet_V2_Weights.IMAGENET1K_V1",
    ),
}

REFERENCE_SPEC = BackboneSpec(
    name="reference",
    layer_count=12,
    trainable_params=24.0e3,
    input_size=(64, 64),
    pretrained_source="none",
    mean=(0.5, 0.5, 0.5),
    std=(0.25, 0.25, 0.25),
)

_HEAD_PATHS = {
    "vgg16": "classifier.6",
    "resnet50": "fc",
    "inceptionnet": "fc",
    "mobilenet": "classifier.1",
    "reference": "head",
}


class FineTunePolicy(BaseModel):
    """Which parameters train: everything, the head only, or the head plus the last n blocks"""

    model_config = ConfigDict(frozen=True)

    mode: str = "full"
    n: Optional[int] = Field(None, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "FineTunePolicy":
        if self.mode not in ("full", "head_only", "last_n_blocks"):
            raise ValueError(f"unknown fine-tune mode '{self.mode}'")
        if (self.mode == "last_n_blocks") != (self.n is not None):
            raise ValueError("n is required for last_n_blocks and only for it")
        return self

    def __str__(self) -> str:
        return f"last_n_blocks({self.n})" if self.mode == "last_n_blocks" else self.mode


def parse_fine_tune_policy(value: Union[str, FineTunePolicy]) -> FineTunePolicy:
    """Parse 'full', 'head_only' or 'last_n_blocks(n)'"""
    if isinstance(value, FineTunePolicy):
        return value
    text = value.strip()
    match = re.fullmatch(r"last_n_blocks\((\d+)\)", text)
    try:
        if match:
            return FineTunePolicy(mode="last_n_blocks", n=int(match.group(1)))
        return FineTunePolicy(mode=text)
    except ValueError as e:
        raise ConfigError(f"Invalid fine-tune policy '{value}'") from e


class ReferenceCNN(nn.Module):
    """Three conv blocks, global pooling and a linear two-way head"""

    def __init__(self):
        super().__init__()
        self.features = nn.Sequential(
            _conv_block(3, 16),
            _conv_block(16, 32),
            _conv_block(32, 64),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(64, NUM_CLASSES)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(torch.flatten(self.pool(self.features(x)), 1))


def _conv_block(in_channels: int, out_channels: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1, bias=False),
        nn.BatchNorm2d(out_channels),
        nn.ReLU(inplace=True),
        nn.MaxPool2d(2),
    )


class ClassifierModel(nn.Module):
    """A backbone with its two-class head, fine-tune policy and input normalization"""

    def __init__(
        self,
        spec: BackboneSpec,
        network: nn.Module,
        fine_tune_policy: FineTunePolicy,
        seed: int
    ):
        super().__init__()
        self.spec = spec
        self.network = network
        self.fine_tune_policy = fine_tune_policy
        self.seed = seed

    @property
    def normalization(self) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
        return self.spec.mean, self.spec.std

    @property
    def head(self) -> nn.Module:
        return self.network.get_submodule(_HEAD_PATHS[self.spec.name])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.network(x)


class PredictionBatch(BaseModel):
    """Per-sample fertile probabilities and predicted labels"""

    ids: List[str]
    scores: List[float]
    predicted: List[Label]

    @model_validator(mode="after")
    def _check(self) -> "PredictionBatch":
        if not len(self.ids) == len(self.scores) == len(self.predicted):
            raise ValueError("ids, scores and predicted must have equal length")
        return self


def list_backbones() -> List[BackboneSpec]:
    """The four pretrained backbone families"""
    return list(_BACKBONES.values())


def get_backbone(name: str) -> BackboneSpec:
    if name == REFERENCE_SPEC.name:
        return REFERENCE_SPEC
    try:
        return _BACKBONES[name]
    except KeyError:
        raise ConfigError(f"Unknown backbone '{name}'; choose from {sorted(_BACKBONES)} or 'reference'")


# Construction


def _architecture(name: str) -> nn.Module:
    """Untrained torchvision architecture with its ImageNet head"""
    if name == "vgg16":
        return torchvision.models.vgg16(weights=None)
    if name == "resnet50":
        return torchvision.models.resnet50(weights=None)
    if name == "inceptionnet":
        return torchvision.models.inception_v3(weights=None, aux_logits=True, init_weights=False, transform_input=True)
    if name == "mobilenet":
        return torchvision.models.mobilenet_v2(weights=None)
    raise ConfigError(f"Unknown backbone '{name}'")


def _weights_enum(spec: BackboneSpec):
    enum_name, member = spec.pretrained_source.split(".")
    return getattr(getattr(torchvision.models, enum_name), member)


def _load_pretrained_state(spec: BackboneSpec, cache_dir: Optional[Union[str, Path]], offline: bool) -> dict:
    weights = _weights_enum(spec)
    model_dir = Path(cache_dir).expanduser() if cache_dir else Path(torch.hub.get_dir()) / "checkpoints"
    cached = model_dir / Path(weights.url).name
    if cached.is_file():
        try:
            return torch.load(cached, map_location="cpu", weights_only=True)
        except Exception as e:
            raise WeightsUnavailable(f"Cached weights for {spec.name} unreadable at {cached}: {e}") from e
    if offline:
        raise WeightsUnavailable(f"Weights for {spec.name} not cached in {model_dir} and offline mode is on")
    try:
        model_dir.mkdir(parents=True, exist_ok=True)
        return torch.hub.load_state_dict_from_url(weights.url, model_dir=str(model_dir), map_location="cpu", progress=False)
    except Exception as e:
        raise WeightsUnavailable(f"Cannot download weights for {spec.name}: {e}") from e


def _head_in_features(network: nn.Module, name: str) -> int:
    return network.get_submodule(_HEAD_PATHS[name]).in_features


def _make_head(in_features: int, hidden: Optional[int]) -> nn.Module:
    if hidden is None:
        return nn.Linear(in_features, NUM_CLASSES)
    return nn.Sequential(
        nn.Linear(in_features, hidden),
        nn.ReLU(inplace=True),
        nn.Dropout(0.5),
        nn.Linear(hidden, NUM_CLASSES),
    )


def _set_submodule(root: nn.Module, path: str, module: nn.Module) -> None:
    parent_path, _, child = path.rpartition(".")
    parent = root.get_submodule(parent_path) if parent_path else root
    setattr(parent, child, module)


def _strip_auxiliary(network: nn.Module, name: str) -> None:
    if name == "inceptionnet":
        network.aux_logits = False
        network.AuxLogits = None


def _attach_head(network: nn.Module, spec: BackboneSpec, seed: int) -> None:
    in_features = _head_in_features(network, spec.name)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed) & 0xFFFFFFFF)
        head = _make_head(in_features, spec.head_hidden)
    _set_submodule(network, _HEAD_PATHS[spec.name], head)


def _blocks(network: nn.Module, name: str) -> List[nn.Module]:
    """Trainable stages in forward order, excluding the head"""
    if name == "vgg16":
        convs = [m for m in network.features if isinstance(m, nn.Conv2d)]
        return convs + [network.classifier[0], network.classifier[3]]
    if name == "resnet50":
        stem = nn.ModuleList([network.conv1, network.bn1])
        return [stem] + [block for layer in (network.layer1, network.layer2, network.layer3, network.layer4) for block in layer]
    if name == "inceptionnet":
        return [
            module for child_name, module in network.named_children()
            if child_name not in ("fc", "AuxLogits") and any(True for _ in module.parameters())
        ]
    if name == "mobilenet":
        return list(network.features)
    if name == "reference":
        return list(network.features)
    raise ConfigError(f"Unknown backbone '{name}'")


def apply_fine_tune_policy(model: ClassifierModel, policy: FineTunePolicy) -> None:
    """Mark parameters trainable according to policy"""
    train_all = policy.mode == "full"
    for param in model.network.parameters():
        param.requires_grad = train_all
    if train_all:
        return
    for param in model.head.parameters():
        param.requires_grad = True
    if policy.mode == "last_n_blocks" and policy.n:
        for block in _blocks(model.network, model.spec.name)[-policy.n:]:
            for param in block.parameters():
                param.requires_grad = True


def build_classifier(
    spec: BackboneSpec,
    fine_tune_policy: Union[str, FineTunePolicy] = "full",
    seed: int = 0,
    cache_dir: Optional[Union[str, Path]] = None,
    offline: bool = False
) -> ClassifierModel:
    """
    Load a pretrained backbone and replace its head with a two-class head

    Args:
        spec: One of list_backbones()
        fine_tune_policy: 'full', 'head_only' or 'last_n_blocks(n)'
        seed: Head initialization seed
        cache_dir: Weight cache directory
        offline: Never download

    Returns:
        ClassifierModel on CPU

    Raises:
        WeightsUnavailable: Weights neither cached nor downloadable
    """
    policy = parse_fine_tune_policy(fine_tune_policy)
    network = _architecture(spec.name)
    network.load_state_dict(_load_pretrained_state(spec, cache_dir, offline))
    _strip_auxiliary(network, spec.name)
    _attach_head(network, spec, seed)

    model = ClassifierModel(spec, network, policy, seed)
    apply_fine_tune_policy(model, policy)
    logger.info(
        "Built %s (%s): %d trainable parameters",
        spec.name, policy, count_trainable_parameters(model),
    )
    return model


def build_reference_cnn(input_size: Tuple[int, int] = (64, 64), seed: int = 0) -> ClassifierModel:
    """Small seed-deterministic CNN for offline and desk-scale runs"""
    spec = REFERENCE_SPEC.model_copy(update={"input_size": tuple(input_size)})
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed) & 0xFFFFFFFF)
        network = ReferenceCNN()
    model = ClassifierModel(spec, network, FineTunePolicy(mode="full"), seed)
    apply_fine_tune_policy(model, model.fine_tune_policy)
    return model


class ModelFactory:
    """Builds a fresh model per seed, falling back to the reference CNN when weights are missing"""

    def __init__(
        self,
        backbone_name: str,
        fine_tune_policy: Union[str, FineTunePolicy] = "full",
        cache_dir: Optional[Union[str, Path]] = None,
        offline: bool = False,
        fallback_to_reference: bool = True,
        reference_input_size: Tuple[int, int] = (64, 64)
    ):
        self.backbone_name = backbone_name
        self.fine_tune_policy = parse_fine_tune_policy(fine_tune_policy)
        self.cache_dir = cache_dir
        self.offline = offline
        self.fallback_to_reference = fallback_to_reference
        self.reference_input_size = reference_input_size
        get_backbone(backbone_name)

    def __call__(self, seed: int) -> ClassifierModel:
        if self.backbone_name == REFERENCE_SPEC.name:
            return build_reference_cnn(self.reference_input_size, seed)
        try:
            return build_classifier(
                get_backbone(self.backbone_name),
                self.fine_tune_policy,
                seed,
                cache_dir=self.cache_dir,
                offline=self.offline,
            )
        except WeightsUnavailable as e:
            if not self.fallback_to_reference:
                raise
            logger.warning("%s; falling back to the reference CNN", e)
            return build_reference_cnn(self.reference_input_size, seed)


# Inference


def predict(model: ClassifierModel, images: torch.Tensor, ids: Optional[Sequence[str]] = None) -> PredictionBatch:
    """
    Fertile-class probabilities for a preprocessed, normalized batch

    Args:
        model: Classifier
        images: N x 3 x H x W tensor at model.spec.input_size
        ids: Sample ids (defaults to batch positions)

    Raises:
        InputShapeError: Batch shape does not match the model input
    """
    expected = tuple(model.spec.input_size)
    if images.ndim != 4 or images.shape[1] != 3 or tuple(images.shape[2:]) != expected:
        raise InputShapeError(f"Expected N x 3 x {expected[0]} x {expected[1]}, got {tuple(images.shape)}")
    ids = list(ids) if ids is not None else [str(i) for i in range(images.shape[0])]
    if len(ids) != images.shape[0]:
        raise InputShapeError(f"{len(ids)} ids for a batch of {images.shape[0]}")

    was_training = model.training
    model.eval()
    try:
        device = next(model.parameters()).device
        with torch.no_grad():
            probabilities = F.softmax(model(images.to(device)), dim=1)
    finally:
        model.train(was_training)

    scores = probabilities[:, Label.FERTILE.index].double().cpu().tolist()
    predicted = [Label.FERTILE if s >= 0.5 else Label.INFERTILE for s in scores]
    return PredictionBatch(ids=ids, scores=scores, predicted=predicted)


def count_trainable_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def count_head_parameters(model: ClassifierModel) -> int:
    return sum(p.numel() for p in model.head.parameters())


# Checkpoints


def save_checkpoint(model: ClassifierModel, path: Union[str, Path]) -> Path:
    """Write a self-describing checkpoint (spec, policy, seed, parameters)"""
    path = Path(path)
    payload = {
        "format": 1,
        "spec": model.spec.model_dump(mode="json"),
        "fine_tune_policy": str(model.fine_tune_policy),
        "seed": model.seed,
        "state_dict": {k: v.detach().cpu() for k, v in model.network.state_dict().items()},
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)
    except OSError as e:
        raise IoError(f"Cannot write checkpoint {path}: {e}") from e
    return path


def load_checkpoint(path: Union[str, Path]) -> ClassifierModel:
    """Rebuild a ClassifierModel from save_checkpoint output; needs no pretrained weights"""
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(str(path))
    payload = torch.load(path, map_location="cpu", weights_only=True)
    spec = BackboneSpec.model_validate(payload["spec"])
    policy = parse_fine_tune_policy(payload["fine_tune_policy"])

    if spec.name == REFERENCE_SPEC.name:
        network = ReferenceCNN()
    else:
        network = _architecture(spec.name)
        _strip_auxiliary(network, spec.name)
        _set_submodule(network, _HEAD_PATHS[spec.name], _make_head(_head_in_features(network, spec.name), spec.head_hidden))
    network.load_state_dict(payload["state_dict"])

    model = ClassifierModel(spec, network, policy, int(payload["seed"]))
    apply_fine_tune_policy(model, policy)
    return model


def param_count_matches(count: int, reference: float) -> bool:
    """
    Count within 1% of a published value, or within its 0.05M rounding

    Published counts are quoted to one decimal in millions, so the adapted
    MobileNetV2 (2,226,434) is listed as 2.2M. The 0.05M floor covers that
    rounding for the small backbones, where 1% alone is tighter than it.
    """
    return abs(count - reference) <= max(0.01 * reference, 0.05e6)


ModelBuilder = Callable[[int], ClassifierModel]
