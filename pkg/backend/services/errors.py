"""
Errors - Exception hierarchy for the fertility pipeline
Every error carries the process exit code the CLI reports for it
"""

from typing import Optional


class EggLabError(Exception):
    """Base class for all pipeline errors"""

    exit_code = 2


class ConfigError(EggLabError):
    """Invalid or unreadable run configuration"""


# Data errors

class NoSamples(EggLabError):
    """Dataset directory holds no images"""


class LabelError(EggLabError):
    """A file whose class label cannot be derived"""

    def __init__(self, path: str, reason: str = "no label derivable"):
        super().__init__(f"{path}: {reason}")
        self.path = path


class DecodeError(EggLabError):
    """An image file that cannot be decoded"""

    def __init__(self, path: str, reason: str = ""):
        super().__init__(f"Cannot decode image {path}" + (f": {reason}" if reason else ""))
        self.path = path


class NoEggFound(EggLabError):
    """Segmentation found no foreground component"""


class InvalidSplit(EggLabError):
    """Train fraction leaves the train or test set empty"""


class InvalidFoldCount(EggLabError):
    """k outside [2, |train|]"""


class IoError(EggLabError):
    """Output location cannot be written"""


class DataLeakage(EggLabError):
    """A held-out id reached a training batch"""


# Augmentation errors

class InvalidTransform(EggLabError):
    """Transform parameters outside their valid domain"""


# Model errors

class WeightsUnavailable(EggLabError):
    """Pretrained weights neither cached nor downloadable"""


class InputShapeError(EggLabError):
    """Batch shape does not match the model input"""


# Training errors

class TrainingDiverged(EggLabError):
    """Loss became NaN or infinite"""

    exit_code = 4

    def __init__(self, message: str, last_good_epoch: int = 0, history: Optional[list] = None):
        super().__init__(message)
        self.last_good_epoch = last_good_epoch
        self.history = history or []


class EmptyGrid(EggLabError):
    """Hyperparameter grid without points"""


# Metrics errors

class InputMismatch(EggLabError):
    """Label, prediction or score inputs are inconsistent"""


class EmptyInput(EggLabError):
    """No samples to evaluate"""


# Pipeline errors

class MissingArtifact(EggLabError):
    """An upstream command's output is missing"""

    exit_code = 3

    def __init__(self, path: str):
        super().__init__(f"Missing upstream artifact: {path}")
        self.path = path
