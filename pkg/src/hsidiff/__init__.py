"""Hyperspectral classification with features from a pretrained denoising diffusion model."""

from .diffmath import VarianceSchedule, build_schedule, forward_noise
from .hsio import LabeledCube, SampleSplit, extract_patches, load_cube, normalize, split_samples

__version__ = "0.1.0"

__all__ = [
    "LabeledCube",
    "SampleSplit",
    "VarianceSchedule",
    "build_schedule",
    "extract_patches",
    "forward_noise",
    "load_cube",
    "normalize",
    "split_samples",
]
