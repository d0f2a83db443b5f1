"""Terrain texture segmentation from upright blob features, with two-view tracking."""

from .classify import MlpModel, NearestNeighbor, TrainConfig
from .config import Config, load_config
from .imagecore import GrayImage, load_pgm, write_pgm
from .segment import SegParams, SegmentationMap
from .surf import DetectorParams, Feature, extract
from .texmodel import TrainingSet

__version__ = "0.1.0"

__all__ = [
    "Config",
    "DetectorParams",
    "Feature",
    "GrayImage",
    "MlpModel",
    "NearestNeighbor",
    "SegParams",
    "SegmentationMap",
    "TrainConfig",
    "TrainingSet",
    "extract",
    "load_config",
    "load_pgm",
    "write_pgm",
]
