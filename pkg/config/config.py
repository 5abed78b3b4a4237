"""
Configuration Management for Egg Fertility Lab
Process settings come from the environment, run settings from a YAML document
"""

import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings"""

    model_config = SettingsConfigDict(env_file=".env", env_prefix="EGGLAB_", case_sensitive=False, extra="ignore")

    # Logging
    log_level: str = "INFO"
    log_file: str = "logs/egglab.log"

    # Pretrained weights
    models_cache_dir: str = str(Path.home() / ".cache" / "egglab" / "weights")
    offline: bool = False

    # Compute
    device: str = "cpu"
    deterministic: bool = True


# Singleton instance
_settings_instance = None


def get_settings() -> Settings:
    """Get application settings singleton"""
    global _settings_instance
    if _settings_instance is None:
        _settings_instance = Settings()
    return _settings_instance


def configure_logging(settings: Optional[Settings] = None) -> None:
    """
    Configure root logging once from settings

    Args:
        settings: Settings to use (defaults to the singleton)
    """
    settings = settings or get_settings()
    root = logging.getLogger()
    if getattr(root, "_egglab_configured", False):
        root.setLevel(settings.log_level.upper())
        return

    formatter = logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(formatter)
    root.addHandler(console)

    if settings.log_file:
        log_path = Path(settings.log_file)
        try:
            log_path.parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(log_path, encoding="utf-8")
            file_handler.setFormatter(formatter)
            root.addHandler(file_handler)
        except OSError as e:
            root.warning("File logging disabled (%s): %s", log_path, e)

    root.setLevel(settings.log_level.upper())
    root._egglab_configured = True


# Run configuration


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataConfig(_Section):
    source: Literal["directory", "synthetic"] = "directory"
    root: Optional[str] = None
    labeling: Literal["by_subdirectory", "by_manifest_file"] = "by_subdirectory"
    train_fraction: float = Field(0.8, gt=0.0, lt=1.0)
    k: int = Field(5, ge=2)
    seed: int = 0
    stratified: bool = True


class PreprocessConfig(_Section):
    threshold: Union[Literal["otsu"], int] = "otsu"
    margin: float = Field(0.05, ge=0.0, le=0.5)
    target_size: Tuple[int, int] = (256, 256)

    @field_validator("threshold")
    @classmethod
    def _threshold_range(cls, value):
        if isinstance(value, int) and not 0 <= value <= 255:
            raise ValueError("fixed threshold must lie in [0, 255]")
        return value


class AugmentConfig(_Section):
    rotation: Tuple[float, float] = (-5.0, 5.0)
    flip_x: bool = True
    flip_y: bool = True
    shear: Tuple[float, float] = (-5.0, 5.0)
    scale: Tuple[float, float] = (0.9, 1.1)
    translate: Tuple[float, float] = (-0.05, 0.05)
    fill_value: int = Field(0, ge=0, le=255)
    seed: int = 0


class ModelsConfig(_Section):
    cache_dir: Optional[str] = None
    offline: bool = False
    fine_tune: str = "full"
    fallback_to_reference: bool = True
    reference_input_size: Tuple[int, int] = (64, 64)


class TrainConfig(_Section):
    lr: float = Field(1e-4, ge=0.0)
    batch: int = Field(16, gt=0)
    epochs: int = Field(20, gt=0)
    optimizer: Literal["sgd_momentum", "adam"] = "sgd_momentum"
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(0.0, ge=0.0)
    seed: int = 0
    early_stopping_patience: Optional[int] = Field(None, gt=0)
    workers: int = Field(1, gt=0)
    skip_undefined: bool = False


class SynthConfig(_Section):
    n_fertile: int = Field(100, ge=0)
    n_infertile: int = Field(100, ge=0)
    image_size: Tuple[int, int] = (256, 256)
    seed: int = 7
    embryo_intensity_drop: float = Field(0.35, ge=0.0, le=1.0)
    vessel_branch_count_range: Tuple[int, int] = (3, 6)


class TuneConfig(_Section):
    grid: List[Dict[str, Any]] = Field(default_factory=list)


BackboneName = Literal["vgg16", "resnet50", "inceptionnet", "mobilenet", "reference"]


class RunConfig(_Section):
    """Structured configuration document for one pipeline run"""

    backbone: BackboneName = "reference"
    out_dir: str = "output"
    data: DataConfig = Field(default_factory=DataConfig)
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    models: ModelsConfig = Field(default_factory=ModelsConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    tune: TuneConfig = Field(default_factory=TuneConfig)

    @model_validator(mode="after")
    def _check_ranges(self) -> "RunConfig":
        for name in ("rotation", "shear", "scale", "translate"):
            low, high = getattr(self.augment, name)
            if low > high:
                raise ValueError(f"augment.{name}: min {low} exceeds max {high}")
        low, high = self.synth.vessel_branch_count_range
        if low > high:
            raise ValueError("synth.vessel_branch_count_range: min exceeds max")
        return self

    def to_yaml(self) -> str:
        """Serialize the fully resolved config"""
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=True)


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    offline: Optional[bool] = None
) -> RunConfig:
    """
    Load a run configuration and apply command-line overrides

    Args:
        path: YAML config file (defaults only when None)
        seed: Overrides every seed key
        out_dir: Overrides the output directory
        offline: Forces offline model loading

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: Missing file, malformed YAML or invalid keys
    """
    from backend.services.errors import ConfigError

    document: Dict[str, Any] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"Config file not found: {config_path}")
        try:
            document = yaml.safe_load(config_path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Malformed config file {config_path}: {e}") from e
        if not isinstance(document, dict):
            raise ConfigError(f"Config file {config_path} must hold a mapping")

    if seed is not None:
        for section in ("data", "augment", "train", "synth"):
            document.setdefault(section, {})["seed"] = seed
    if out_dir is not None:
        document["out_dir"] = out_dir
    if offline:
        document.setdefault("models", {})["offline"] = True

    try:
        return RunConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
