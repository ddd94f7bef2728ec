"""Localised adversarial-patch detection and mitigation for image pre-processing."""

__version__ = "0.1.0"

from .chunking import Chunk, ChunkGrid, chunk_image, neighbors_of, superimpose
from .config import PipelineConfig, load_config
from .iforest import FastIsolationForest, anomaly_score, baseline_random_forest, build_forest, gradient_split
from .image_io import ImageTensor, load_image, save_image
from .mi_features import ChunkFeatures, HistogramConfig, extract_features, localized_mi, mutual_information
from .mitigation import RetentionPolicy, mitigate_chunk, svd_reduce
from .pipeline import DefenseResult, defend, defend_batch

__all__ = [
    "Chunk",
    "ChunkFeatures",
    "ChunkGrid",
    "DefenseResult",
    "FastIsolationForest",
    "HistogramConfig",
    "ImageTensor",
    "PipelineConfig",
    "RetentionPolicy",
    "anomaly_score",
    "baseline_random_forest",
    "build_forest",
    "chunk_image",
    "defend",
    "defend_batch",
    "extract_features",
    "gradient_split",
    "load_config",
    "load_image",
    "localized_mi",
    "mitigate_chunk",
    "mutual_information",
    "neighbors_of",
    "save_image",
    "superimpose",
    "svd_reduce",
]
