"""Self-describing binary checkpoint container.

Layout: magic "TDNC", u32 version, u64 config-JSON length, the config
JSON, then one record per weight: u32 name length, name, u8 dtype code,
u32 rank, u64 dims, raw little-endian data. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError, CheckpointMismatchError

CHECKPOINT_MAGIC = b"TDNC"
CHECKPOINT_VERSION = 1

_DTYPES: dict[int, str] = {0: "<f4", 1: "<f8", 2: "<i8", 3: "|u1", 4: "<i4"}
_TORCH_CODES = {torch.float32: 0, torch.float64: 1, torch.int64: 2, torch.uint8: 3, torch.int32: 4}
_NUMPY_TO_TORCH = {0: torch.float32, 1: torch.float64, 2: torch.int64, 3: torch.uint8, 4: torch.int32}


def _build_model(config: dict) -> torch.nn.Module:
    from .models.autoencoder import AEConfig, TerrainAutoencoder
    from .models.denoiser import Denoiser, DenoiserConfig
    from .models.features import FeatureConfig, TerrainFeatureNet
    from .models.guidance import GuidanceConfig, SketchGuidanceEncoder

    kind = config.get("kind")
    if kind == "terrain_autoencoder":
        return TerrainAutoencoder(AEConfig.from_dict(config))
    if kind == "feature_extractor":
        return TerrainFeatureNet(FeatureConfig.from_dict(config))
    if kind == "denoiser":
        return Denoiser(DenoiserConfig.from_dict(config))
    if kind == "guidance_encoder":
        gcfg = GuidanceConfig.from_dict(config)
        terrain_encoder = None
        if gcfg.share_terrain_encoder:
            terrain_encoder = TerrainAutoencoder(AEConfig.from_dict(config["terrain_ae_config"]))
        return SketchGuidanceEncoder(gcfg, terrain_encoder=terrain_encoder)
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")


def save_checkpoint(model: torch.nn.Module, path: str | Path) -> Path:
    """Serialize a model and its config into the container format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    config = model.checkpoint_config()
    config_bytes = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()

    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    chunks.append(struct.pack("<Q", len(config_bytes)))
    chunks.append(config_bytes)
    for name, tensor in model.state_dict().items():
        code = _TORCH_CODES.get(tensor.dtype)
        if code is None:
            raise CheckpointError(f"unsupported tensor dtype {tensor.dtype} for {name}")
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy()).astype(_DTYPES[code], copy=False)
        name_bytes = name.encode()
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<BI", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.tobytes())
    path.write_bytes(b"".join(chunks))
    return path


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    """Parse a container into (config, state_dict) without building a model."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    (json_len,) = struct.unpack_from("<Q", raw, 8)
    offset = 16
    config = json.loads(raw[offset : offset + json_len])
    offset += json_len

    state: dict[str, torch.Tensor] = {}
    while offset < len(raw):
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset : offset + name_len].decode()
        offset += name_len
        code, rank = struct.unpack_from("<BI", raw, offset)
        offset += 5
        dims = struct.unpack_from(f"<{rank}Q", raw, offset) if rank else ()
        offset += 8 * rank
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name}")
        count = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(raw, dtype=_DTYPES[code], count=count, offset=offset).reshape(dims)
        offset += arr.nbytes
        state[name] = torch.from_numpy(arr.copy())
    return config, state


def load_checkpoint(path: str | Path, expected_config: dict | None = None) -> torch.nn.Module:
    """Rebuild the model stored at ``path``.

    When ``expected_config`` is given it must equal the stored config;
    mismatches raise with both configs in the message.
    """
    config, state = read_checkpoint(path)
    if expected_config is not None and expected_config != config:
        raise CheckpointMismatchError(
            f"{path}: stored config {json.dumps(config, sort_keys=True)} "
            f"does not match expected {json.dumps(expected_config, sort_keys=True)}"
        )
    model = _build_model(config)
    model.load_state_dict(state)
    model.eval()
    return model
