"""PNG encoding helpers for generated heightmaps and hillshades."""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataValidationError
from .heightmap import NormMeta


def heightmap_png16_bytes(normalized: np.ndarray) -> bytes:
    """Encode a [-1, 1] grid as a 16-bit grayscale PNG spanning 0..65535."""
    if normalized.ndim != 2:
        raise DataValidationError(f"expected a 2-D grid, got shape {normalized.shape}")
    clipped = np.clip(normalized, -1.0, 1.0)
    u16 = np.round((clipped + 1.0) * 0.5 * 65535.0).astype(np.uint16)
    buf = io.BytesIO()
    Image.fromarray(u16).save(buf, format="PNG")
    return buf.getvalue()


def decode_png16(data: bytes) -> np.ndarray:
    """Back to [-1, 1] floats from a 16-bit grayscale PNG."""
    arr = np.asarray(Image.open(io.BytesIO(data)), dtype=np.float64)
    return arr / 65535.0 * 2.0 - 1.0


def gray_png8_bytes(values: np.ndarray) -> bytes:
    """Encode a [0, 1] grid as an 8-bit grayscale PNG."""
    u8 = np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8).save(buf, format="PNG")
    return buf.getvalue()


def norm_sidecar(meta: NormMeta) -> dict:
    return {
        "min_elev": meta.min_elev,
        "range_elev": meta.range_elev,
        "degenerate": meta.degenerate,
    }


def write_heightmap_outputs(
    prefix: str | Path,
    normalized: np.ndarray,
    meta: NormMeta,
    hillshade_values: np.ndarray,
    provenance: dict,
) -> dict[str, Path]:
    """Write the standard generation artifact trio next to ``prefix``."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = {
        "heightmap": prefix.with_name(prefix.name + ".png"),
        "hillshade": prefix.with_name(prefix.name + "_hillshade.png"),
        "provenance": prefix.with_name(prefix.name + ".json"),
    }
    paths["heightmap"].write_bytes(heightmap_png16_bytes(normalized))
    paths["hillshade"].write_bytes(gray_png8_bytes(hillshade_values))
    payload = {"norm": norm_sidecar(meta), **provenance}
    paths["provenance"].write_text(json.dumps(payload, indent=2, sort_keys=True))
    return paths
