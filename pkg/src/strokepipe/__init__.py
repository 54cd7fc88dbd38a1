"""Two-tier stroke prediction: Haralick texture + NMF features with SVM fusion, and an LM-trained risk network."""

from .evaluation import ConfusionMatrix, EvalReport, Pipeline, PipelineConfig, loocv, metrics
from .glcm import Direction, EmptyCooccurrenceError, Glcm, compute_glcm
from .haralick import FeatureKind, FeatureVector, compute_stats, feature_vector_28
from .imgio import GrayImage, load_image, normalize_intensity, quantize, resample
from .nmf import NmfConfig, NmfModel, factorize, project
from .svm import KernelSpec, SvmModel, train

__version__ = "0.1.0"

__all__ = [
    "ConfusionMatrix",
    "Direction",
    "EmptyCooccurrenceError",
    "EvalReport",
    "FeatureKind",
    "FeatureVector",
    "Glcm",
    "GrayImage",
    "KernelSpec",
    "NmfConfig",
    "NmfModel",
    "Pipeline",
    "PipelineConfig",
    "SvmModel",
    "compute_glcm",
    "compute_stats",
    "factorize",
    "feature_vector_28",
    "load_image",
    "loocv",
    "metrics",
    "normalize_intensity",
    "project",
    "quantize",
    "resample",
    "train",
]
