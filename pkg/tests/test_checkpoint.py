import pytest
import torch

from terradiff.checkpoint import (
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from terradiff.errors import CheckpointError, CheckpointMismatchError
from terradiff.models.autoencoder import AEConfig, TerrainAutoencoder
from terradiff.models.denoiser import Denoiser, DenoiserConfig
from terradiff.models.features import FeatureConfig, TerrainFeatureNet
from terradiff.models.guidance import GuidanceConfig, SketchGuidanceEncoder


def _models():
    torch.manual_seed(7)
    ae = TerrainAutoencoder(AEConfig(base_width=8))
    yield "ae", ae
    yield "features", TerrainFeatureNet(FeatureConfig(width=4))
    yield "guidance", SketchGuidanceEncoder(GuidanceConfig(encoder_width=4, embed_dim=16))
    yield "guidance_shared", SketchGuidanceEncoder(
        GuidanceConfig(embed_dim=16, share_terrain_encoder=True), terrain_encoder=ae
    )
    yield "denoiser", Denoiser(DenoiserConfig(level="structural", base_width=8, time_dim=16))


@pytest.mark.parametrize("name,model", list(_models()))
def test_round_trip_bit_exact(tmp_path, name, model):
    path = tmp_path / f"{name}.tdnc"
    save_checkpoint(model, path)
    assert path.read_bytes()[:4] == b"TDNC"
    loaded = load_checkpoint(path)
    assert type(loaded) is type(model)
    for key, tensor in model.state_dict().items():
        assert torch.equal(loaded.state_dict()[key], tensor), key
    # save -> load -> save reproduces the container byte for byte
    second = tmp_path / f"{name}2.tdnc"
    save_checkpoint(loaded, second)
    assert second.read_bytes() == path.read_bytes()


def test_loaded_model_behaves_identically(tmp_path):
    torch.manual_seed(3)
    model = Denoiser(DenoiserConfig(level="fine", base_width=8, time_dim=16))
    model.eval()
    path = save_checkpoint(model, tmp_path / "d.tdnc")
    loaded = load_checkpoint(path)
    x = torch.randn(1, 4, 36, 36)
    s = torch.randn(1, 4, 36, 36)
    with torch.no_grad():
        assert torch.equal(model(x, torch.tensor([5]), s), loaded(x, torch.tensor([5]), s))


def test_config_mismatch_reports_both(tmp_path):
    model = TerrainFeatureNet(FeatureConfig(width=4))
    path = save_checkpoint(model, tmp_path / "f.tdnc")
    expected = {"kind": "feature_extractor", "width": 8}
    with pytest.raises(CheckpointMismatchError) as err:
        load_checkpoint(path, expected_config=expected)
    message = str(err.value)
    assert '"width": 4' in message and '"width": 8' in message


def test_matching_expected_config_passes(tmp_path):
    model = TerrainFeatureNet(FeatureConfig(width=4))
    path = save_checkpoint(model, tmp_path / "f.tdnc")
    load_checkpoint(path, expected_config=model.checkpoint_config())


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.tdnc"
    path.write_bytes(b"XXXX" + bytes(32))
    with pytest.raises(CheckpointError, match="bad magic"):
        read_checkpoint(path)


def test_unknown_kind_rejected(tmp_path):
    import json
    import struct

    config = json.dumps({"kind": "mystery"}).encode()
    path = tmp_path / "m.tdnc"
    path.write_bytes(b"TDNC" + struct.pack("<I", 1) + struct.pack("<Q", len(config)) + config)
    with pytest.raises(CheckpointError, match="unknown checkpoint kind"):
        load_checkpoint(path)
