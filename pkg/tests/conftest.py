"""
Shared fixtures for the test suites
"""

import os
import sys

import numpy as np
import pytest
import yaml

# Add repository root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from backend.services.data_core import (  # noqa: E402
    DatasetManifest,
    ImageSample,
    Label,
    SyntheticSpec,
    generate_synthetic,
)


def make_manifest(n_fertile: int, n_infertile: int) -> DatasetManifest:
    """In-memory manifest whose paths are never read"""
    samples = [
        ImageSample(id=f"fertile/{i:04d}", path=f"/nonexistent/fertile/{i:04d}.png", label=Label.FERTILE)
        for i in range(n_fertile)
    ] + [
        ImageSample(id=f"infertile/{i:04d}", path=f"/nonexistent/infertile/{i:04d}.png", label=Label.INFERTILE)
        for i in range(n_infertile)
    ]
    return DatasetManifest(samples=tuple(samples))


@pytest.fixture
def manifest_factory():
    return make_manifest


@pytest.fixture
def small_spec() -> SyntheticSpec:
    return SyntheticSpec(n_fertile=10, n_infertile=10, image_size=(64, 64), seed=3)


@pytest.fixture
def synthetic_dataset(tmp_path, small_spec):
    """Ten fertile and ten infertile 64x64 images on disk"""
    out_dir = tmp_path / "synthetic"
    manifest = generate_synthetic(small_spec, out_dir)
    return out_dir, manifest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_run_document(out_dir, **sections):
    """Run config for a fast reference-CNN pipeline on synthetic images"""
    document = {
        "backbone": "reference",
        "out_dir": str(out_dir),
        "data": {"source": "synthetic", "train_fraction": 0.8, "k": 2, "seed": 0},
        "preprocess": {"target_size": [64, 64]},
        "models": {"reference_input_size": [32, 32]},
        "train": {"lr": 0.001, "batch": 4, "epochs": 2, "optimizer": "adam", "seed": 0},
        "synth": {"n_fertile": 10, "n_infertile": 10, "image_size": [64, 64], "seed": 3},
    }
    for name, values in sections.items():
        if isinstance(values, dict) and isinstance(document.get(name), dict):
            document[name] = {**document[name], **values}
        else:
            document[name] = values
    return document


@pytest.fixture
def config_file(tmp_path):
    """Writes a small run config and returns its path"""

    def write(**sections):
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(small_run_document(tmp_path / "out", **sections)), encoding="utf-8")
        return path

    return write
