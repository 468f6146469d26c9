"""U-Net correction of cloud shadow and sun glint in 5-band multispectral imagery."""

from .errors import (
    CapacityError,
    ConfigError,
    CorrectionError,
    DataError,
    DomainError,
    FormatError,
    ShapeError,
    StateError,
    TrainingError,
    TruncatedFileError,
)
from .harness import CvReport, TrainConfig, correct_raster, cross_validate, evaluate, train
from .losses import LossKind, loss_gradient, loss_value
from .metrics import MetricReport, SsimParams, full_report, ms_ssim, ssim
from .raster import MultibandRaster, NormalizationStats, load_raster, save_raster
from .unet import UNetConfig, UNetModel, build_unet, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "CapacityError", "ConfigError", "CorrectionError", "DataError", "DomainError", "FormatError",
    "ShapeError", "StateError", "TrainingError", "TruncatedFileError",
    "CvReport", "TrainConfig", "correct_raster", "cross_validate", "evaluate", "train",
    "LossKind", "loss_gradient", "loss_value",
    "MetricReport", "SsimParams", "full_report", "ms_ssim", "ssim",
    "MultibandRaster", "NormalizationStats", "load_raster", "save_raster",
    "UNetConfig", "UNetModel", "build_unet", "load_weights", "save_weights",
]
