"""Arbitrary-shape text detection with boundary proposals and iterative transformer refinement."""

from .config import ConfigError, RunConfig, load_config
from .evaluation import Detection, EvalReport, evaluate, polygon_iou
from .fields import PolygonAnnotation, PriorMaps, compute_prior_maps
from .model import TextDetector, load_checkpoint, save_checkpoint
from .proposals import BoundaryProposal, Thresholds, generate_proposals

__version__ = "0.1.0"

__all__ = [
    "BoundaryProposal",
    "ConfigError",
    "Detection",
    "EvalReport",
    "PolygonAnnotation",
    "PriorMaps",
    "RunConfig",
    "TextDetector",
    "Thresholds",
    "compute_prior_maps",
    "evaluate",
    "generate_proposals",
    "load_checkpoint",
    "load_config",
    "polygon_iou",
    "save_checkpoint",
]
