"""
Run Context - Output-directory layout and artifact bookkeeping for one command
Knows where every pipeline stage reads and writes, and fails with
MissingArtifact when an upstream stage has not run
"""

from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from config.config import RunConfig

from .errors import IoError, MissingArtifact

EFFECTIVE_CONFIG_FILE = "effective_config_{command}.yaml"
MANIFEST_FILE = "manifest.jsonl"

BACKBONE_COMMANDS = ("crossval", "evaluate", "tune", "ablate")
REPORT_COMMANDS = ("augment-preview", "report")


class RunContext:
    """Paths and provenance for one pipeline command"""

    def __init__(self, config: RunConfig, command: str):
        """
        Initialize run context

        Args:
            config: Resolved run configuration
            command: Name of the command being run
        """
        self.config = config
        self.command = command
        self.out_dir = Path(config.out_dir)
        self.artifacts: List[Dict[str, str]] = []
        self.created_at = datetime.now(timezone.utc)

    # Layout

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / MANIFEST_FILE

    @property
    def preprocessed_dir(self) -> Path:
        return self.out_dir / "preprocessed"

    @property
    def synthetic_dir(self) -> Path:
        return self.out_dir / "synthetic"

    @property
    def reports_dir(self) -> Path:
        return self.out_dir / "reports"

    @property
    def runs_dir(self) -> Path:
        return self.out_dir / "runs"

    def backbone_dir(self, backbone: Optional[str] = None) -> Path:
        return self.runs_dir / (backbone or self.config.backbone)

    def fold_dir(self, fold_index: int, backbone: Optional[str] = None) -> Path:
        return self.backbone_dir(backbone) / f"fold{fold_index}"

    def final_dir(self, backbone: Optional[str] = None) -> Path:
        return self.backbone_dir(backbone) / "final"

    def crossval_path(self, backbone: Optional[str] = None) -> Path:
        return self.backbone_dir(backbone) / "crossval.json"

    def metrics_path(self, split: str = "test", backbone: Optional[str] = None) -> Path:
        name = "metrics.json" if split == "test" else f"metrics_{split}.json"
        return self.backbone_dir(backbone) / name

    def checkpoint_path(self, backbone: Optional[str] = None) -> Path:
        return self.final_dir(backbone) / "checkpoint.pt"

    # Bookkeeping

    def require(self, path: Union[str, Path]) -> Path:
        """
        Check that an upstream artifact exists

        Raises:
            MissingArtifact: Path does not exist
        """
        path = Path(path)
        if not path.exists():
            raise MissingArtifact(str(path))
        return path

    def record_artifact(self, kind: str, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.artifacts.append({"kind": kind, "path": str(path)})
        return path

    @property
    def command_dir(self) -> Path:
        """Directory holding this command's own outputs"""
        if self.command == "train":
            return self.final_dir()
        if self.command in BACKBONE_COMMANDS:
            return self.backbone_dir()
        if self.command in REPORT_COMMANDS:
            return self.reports_dir
        return self.out_dir

    @property
    def effective_config_path(self) -> Path:
        return self.command_dir / EFFECTIVE_CONFIG_FILE.format(command=self.command.replace("-", "_"))

    def write_effective_config(self) -> Path:
        """Write the fully resolved config next to this command's outputs"""
        path = self.effective_config_path
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.config.to_yaml(), encoding="utf-8")
        except OSError as e:
            raise IoError(f"Cannot write {path}: {e}") from e
        return self.record_artifact("effective_config", path)

    def to_dict(self) -> Dict[str, Any]:
        """Convert context to dictionary"""
        return {
            "command": self.command,
            "backbone": self.config.backbone,
            "out_dir": str(self.out_dir),
            "artifacts": self.artifacts,
            "created_at": self.created_at.isoformat(),
        }
