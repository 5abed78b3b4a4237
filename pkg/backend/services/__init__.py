"""
Backend Services Module
Data handling, augmentation, models, training, metrics and reporting
"""

from .errors import EggLabError, MissingArtifact, TrainingDiverged
from .pipeline_engine import PipelineEngine, get_pipeline_engine
from .run_context import RunContext

__all__ = [
    'EggLabError',
    'MissingArtifact',
    'TrainingDiverged',
    'PipelineEngine',
    'get_pipeline_engine',
    'RunContext'
]
