"""
Tests for the command-line surface
"""

import json

import pytest

from backend.cli import build_parser, main
from backend.services.errors import ConfigError
from config.config import load_run_config

COMMANDS = ["prepare", "synth", "augment-preview", "train", "crossval", "evaluate", "report", "tune", "ablate"]


@pytest.fixture(autouse=True)
def isolated_cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


class TestParser:
    """Test argument parsing"""

    @pytest.mark.parametrize("command", COMMANDS)
    def test_help(self, command, capsys):
        """Test every command prints help and exits 0"""
        with pytest.raises(SystemExit) as exit_info:
            main([command, "--help"])
        assert exit_info.value.code == 0
        assert "--config" in capsys.readouterr().out

    def test_command_required(self):
        """Test a missing command exits 2"""
        with pytest.raises(SystemExit) as exit_info:
            main([])
        assert exit_info.value.code == 2

    def test_common_flags(self):
        """Test the flags shared by every command"""
        args = build_parser().parse_args(["train", "--config", "a.yaml", "--seed", "4", "--out", "o", "--offline"])
        assert (args.config, args.seed, args.out, args.offline) == ("a.yaml", 4, "o", True)

    def test_preview_flags(self):
        """Test the preview count and identity flags"""
        args = build_parser().parse_args(["augment-preview", "-n", "4", "--identity"])
        assert args.n == 4 and args.identity


class TestConfigOverrides:
    """Test config loading with command-line overrides"""

    def test_seed_override(self, config_file):
        """Test --seed sets every seed and --out the output root"""
        config = load_run_config(config_file(), seed=11, out_dir="elsewhere", offline=True)

        assert {config.data.seed, config.augment.seed, config.train.seed, config.synth.seed} == {11}
        assert config.out_dir == "elsewhere"
        assert config.models.offline

    def test_unknown_key(self, config_file):
        """Test unknown config keys are rejected"""
        with pytest.raises(ConfigError):
            load_run_config(config_file(train={"learning_rate": 0.1}))

    def test_inverted_range(self, config_file):
        """Test an inverted range is a config error"""
        with pytest.raises(ConfigError):
            load_run_config(config_file(augment={"rotation": [5, -5]}))

    def test_missing_file(self, tmp_path):
        """Test a missing config file is a config error"""
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "absent.yaml")


class TestExitCodes:
    """Test command exit codes"""

    def test_missing_config_file(self, tmp_path, capsys):
        """Test a missing config file exits 2 and names the file"""
        assert main(["prepare", "--config", str(tmp_path / "absent.yaml")]) == 2
        assert "absent.yaml" in capsys.readouterr().err

    def test_missing_data_root(self, config_file, tmp_path, capsys):
        """Test a missing data root exits 2"""
        missing = tmp_path / "eggs"
        path = config_file(data={"source": "directory", "root": str(missing)})

        assert main(["prepare", "--config", str(path)]) == 2
        assert str(missing) in capsys.readouterr().err

    def test_missing_manifest(self, config_file):
        """Test training before prepare exits 3"""
        assert main(["train", "--config", str(config_file())]) == 3

    def test_prepare_then_preview(self, config_file, tmp_path, capsys):
        """Test prepare then augment-preview print JSON results"""
        path = str(config_file())

        assert main(["prepare", "--config", path]) == 0
        result = json.loads(capsys.readouterr().out)
        assert (result["n_samples"], result["n_train"], result["n_test"]) == (20, 16, 4)

        assert main(["augment-preview", "--config", path, "-n", "0"]) == 2
        assert main(["augment-preview", "--config", path, "-n", "9"]) == 0
        assert (tmp_path / "out" / "reports" / "augment_preview.png").is_file()

    def test_out_override(self, config_file, tmp_path, capsys):
        """Test --out redirects the synthetic dataset"""
        out = tmp_path / "other"
        assert main(["synth", "--config", str(config_file()), "--out", str(out)]) == 0
        assert json.loads(capsys.readouterr().out)["class_counts"] == {"fertile": 10, "infertile": 10}
        assert (out / "synthetic" / "manifest.jsonl").is_file()

    @pytest.mark.slow
    def test_full_default_dataset_split(self, config_file, capsys):
        """Test the 200-image dataset splits 160/40"""
        path = str(config_file(synth={"n_fertile": 100, "n_infertile": 100, "image_size": [96, 96]}, data={"k": 5}))

        assert main(["prepare", "--config", path]) == 0

        result = json.loads(capsys.readouterr().out)
        assert (result["n_samples"], result["n_train"], result["n_test"]) == (200, 160, 40)
        assert result["class_counts"] == {"fertile": 100, "infertile": 100}
