"""Bootstrapped deep canonical correlation analysis for sparse sound event detection.

Two synchronized views (microphone and body-mounted accelerometer) are
encoded by paired networks trained to maximize canonical correlation on
batches balanced by event occupancy. The microphone embeddings then feed
a frame-level detector.
"""

from .augment import AugmentConfig, SpecAugment, spec_augment
from .cca import CCA, cca_fit, total_correlation
from .classifier import DetectionConfig, FrameClassifier, binarize
from .config import PipelineConfig, load_config
from .data import ClipSet, DatasetSplit, SynthConfig, ingest, synthesize
from .dcca import DCCA, dcca_loss
from .dsp import PowerSpectrogram, StftConfig, power_spectrogram, rasterize_annotations
from .evaluation import SegmentMetrics, evaluate_clips, segment_scores
from .pipeline import report, run
from .sampler import BalancedBinSampler, assign_bin

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "SpecAugment", "spec_augment",
    "CCA", "cca_fit", "total_correlation",
    "DetectionConfig", "FrameClassifier", "binarize",
    "PipelineConfig", "load_config",
    "ClipSet", "DatasetSplit", "SynthConfig", "ingest", "synthesize",
    "DCCA", "dcca_loss",
    "PowerSpectrogram", "StftConfig", "power_spectrogram", "rasterize_annotations",
    "SegmentMetrics", "evaluate_clips", "segment_scores",
    "report", "run",
    "BalancedBinSampler", "assign_bin",
]
