import pytest
import torch

from terradiff.dem import DatasetManifest
from terradiff.pipeline import build_synthetic_dataset

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> DatasetManifest:
    """Four synthetic tiles (3 train / 1 test) shared across test modules."""
    out = tmp_path_factory.mktemp("tinydata")
    manifest_path = build_synthetic_dataset(out, 4, seed=123)
    return DatasetManifest.load(manifest_path)
