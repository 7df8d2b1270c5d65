"""Sketch-guided terrain generation with a three-level latent diffusion cascade."""

from .heightmap import HeightMap, NormMeta, denormalize, normalize, read_tile, write_tile
from .dem import DatasetManifest, TileRecord, load_dem, split_dataset, synth_dem, tile
from .hydrology import fill_pits, flow_accumulation, flow_direction_d8
from .sketches import SketchConfig, SketchSet, build_sketchset
from .diffusion import NoiseSchedule, SamplerPlan, make_cosine_schedule, p_step, q_sample, sample
from .cascade import SynthesizerStack, cascade_generate, level_latent, single_level_generate
from .evaluation import frechet_distance, hillshade, mse, terrain_features

__version__ = "0.1.0"

__all__ = [
    "HeightMap",
    "NormMeta",
    "normalize",
    "denormalize",
    "read_tile",
    "write_tile",
    "DatasetManifest",
    "TileRecord",
    "load_dem",
    "synth_dem",
    "tile",
    "split_dataset",
    "fill_pits",
    "flow_direction_d8",
    "flow_accumulation",
    "SketchConfig",
    "SketchSet",
    "build_sketchset",
    "NoiseSchedule",
    "SamplerPlan",
    "make_cosine_schedule",
    "q_sample",
    "p_step",
    "sample",
    "SynthesizerStack",
    "cascade_generate",
    "single_level_generate",
    "level_latent",
    "mse",
    "frechet_distance",
    "terrain_features",
    "hillshade",
    "__version__",
]
