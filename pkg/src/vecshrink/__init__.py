"""Compress dense retrieval indexes by dimension reduction and precision
reduction, and measure what retrieval quality survives."""

from .autoencoder import AutoencoderReducer, grad_check
from .exceptions import (
    ConfigError,
    DimensionMismatchError,
    DivergenceError,
    EmptyCollectionError,
    FormatError,
    QuantizationOverflowError,
    VecShrinkError,
    ZeroVarianceError,
)
from .pca import PCAReducer
from .pipeline import CompressionPipeline, EvalReport, QuantizerSpec, ReducerSpec
from .preprocess import Centerer, PreprocessSpec, RowNormalizer, ZScorer
from .projection import (
    GaussianProjection,
    GreedyDimensionDrop,
    RandomDimensionDrop,
    SparseProjection,
)
from .quantize import PrecisionReducer, QuantizedIndex, size_report
from .retrieval import IVFParams, RetrievalConfig, evaluate
from .store import (
    DatasetBundle,
    EmbeddingMatrix,
    RelevanceJudgments,
    SyntheticSpec,
    generate_synthetic,
)

__version__ = "0.1.0"

__all__ = [
    "AutoencoderReducer",
    "Centerer",
    "CompressionPipeline",
    "ConfigError",
    "DatasetBundle",
    "DimensionMismatchError",
    "DivergenceError",
    "EmbeddingMatrix",
    "EmptyCollectionError",
    "EvalReport",
    "FormatError",
    "GaussianProjection",
    "GreedyDimensionDrop",
    "IVFParams",
    "PCAReducer",
    "PrecisionReducer",
    "PreprocessSpec",
    "QuantizationOverflowError",
    "QuantizedIndex",
    "QuantizerSpec",
    "RandomDimensionDrop",
    "ReducerSpec",
    "RelevanceJudgments",
    "RetrievalConfig",
    "RowNormalizer",
    "SparseProjection",
    "SyntheticSpec",
    "VecShrinkError",
    "ZScorer",
    "ZeroVarianceError",
    "evaluate",
    "generate_synthetic",
    "grad_check",
    "size_report",
]
