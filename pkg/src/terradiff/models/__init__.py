from .autoencoder import AEConfig, TerrainAutoencoder, ae_training_loss
from .denoiser import Denoiser, DenoiserConfig
from .features import FeatureConfig, TerrainFeatureNet, perceptual_loss
from .guidance import GuidanceConfig, GuidanceLatents, SketchGuidanceEncoder, SketchSetDecoder

__all__ = [
    "AEConfig",
    "TerrainAutoencoder",
    "ae_training_loss",
    "Denoiser",
    "DenoiserConfig",
    "FeatureConfig",
    "TerrainFeatureNet",
    "perceptual_loss",
    "GuidanceConfig",
    "GuidanceLatents",
    "SketchGuidanceEncoder",
    "SketchSetDecoder",
]
